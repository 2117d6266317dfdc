//! P groups of Z classifiers, each group specialized on one image region.

use crate::drosonet::{BitPlanes, DrosoNet, DrosoNetConfig, ScoreVector, TrainReport};
use crate::error::{Error, Result};
use crate::image::{to_grayscale, GrayImage, InputVector, INPUT_LEN};
use crate::par::{self, Schedule};
use crate::partition::{extract_inputs, PartitionPlan};
use crate::voting::{self, Retrieval};

#[derive(Clone, Debug, PartialEq)]
pub struct EnsembleConfig {
    pub grids: PartitionPlan,
    /// Classifiers per region (Z).
    pub z_per_region: usize,
    /// Scores kept per classifier when voting (K).
    pub k_votes: usize,
    pub d_hidden: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub master_seed: u64,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        EnsembleConfig {
            grids: PartitionPlan::default_grids(),
            z_per_region: 2,
            k_votes: 20,
            d_hidden: 2048,
            epochs: 200,
            learning_rate: 0.001,
            master_seed: 0,
        }
    }
}

impl EnsembleConfig {
    pub fn validate(&self) -> Result<()> {
        if self.z_per_region == 0 {
            return Err(Error::invalid("z_per_region must be at least 1"));
        }
        if self.k_votes == 0 {
            return Err(Error::invalid("k_votes must be at least 1"));
        }
        self.member_config(1, 0, 0).validate()
    }

    pub fn region_count(&self) -> usize {
        self.grids.region_count()
    }

    /// Total classifiers, T = P·Z.
    pub fn total(&self) -> usize {
        self.region_count() * self.z_per_region
    }

    fn member_config(&self, n_places: usize, group: usize, member: usize) -> DrosoNetConfig {
        DrosoNetConfig {
            d_in: INPUT_LEN,
            d_hidden: self.d_hidden,
            n_places,
            epochs: self.epochs,
            learning_rate: self.learning_rate,
            seed: member_seed(self.master_seed, group, member),
        }
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed of member `member` in group `group`. Injective in `(group, member)`
/// for indices below 2^32, since every step is a bijection.
pub fn member_seed(master: u64, group: usize, member: usize) -> u64 {
    let index = (group as u64) << 32 | (member as u64 & 0xffff_ffff);
    splitmix64(master ^ splitmix64(index))
}

#[derive(Clone, Debug, PartialEq)]
pub struct Ensemble {
    config: EnsembleConfig,
    n_places: usize,
    groups: Vec<Vec<DrosoNet>>,
    trained: bool,
}

impl Ensemble {
    /// Freshly initialized, untrained ensemble.
    pub fn build(config: EnsembleConfig, n_places: usize) -> Result<Self> {
        config.validate()?;
        if n_places == 0 {
            return Err(Error::invalid("an ensemble needs at least one place"));
        }
        let groups = (0..config.region_count())
            .map(|p| {
                (0..config.z_per_region)
                    .map(|z| DrosoNet::new(config.member_config(n_places, p, z)))
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Ensemble {
            config,
            n_places,
            groups,
            trained: false,
        })
    }

    pub(crate) fn from_parts(config: EnsembleConfig, n_places: usize, groups: Vec<Vec<DrosoNet>>) -> Self {
        Ensemble {
            config,
            n_places,
            groups,
            trained: true,
        }
    }

    pub fn config(&self) -> &EnsembleConfig {
        &self.config
    }

    pub fn n_places(&self) -> usize {
        self.n_places
    }

    pub fn groups(&self) -> &[Vec<DrosoNet>] {
        &self.groups
    }

    pub fn region_count(&self) -> usize {
        self.groups.len()
    }

    pub fn total(&self) -> usize {
        self.groups.iter().map(Vec::len).sum()
    }

    pub fn is_trained(&self) -> bool {
        self.trained
    }

    /// Changes K. Voting is the only place K is used, so no retraining is
    /// needed.
    pub fn set_k_votes(&mut self, k: usize) -> Result<()> {
        if k == 0 {
            return Err(Error::invalid("k_votes must be at least 1"));
        }
        self.config.k_votes = k;
        Ok(())
    }

    pub fn train_all(&mut self, reference: &[GrayImage]) -> Result<Vec<Vec<TrainReport>>> {
        self.train_all_with(reference, Schedule::default())
    }

    /// Trains group `p` on region `p` of every reference image. Each member
    /// owns its seed, so the result does not depend on the schedule.
    pub fn train_all_with(&mut self, reference: &[GrayImage], schedule: Schedule) -> Result<Vec<Vec<TrainReport>>> {
        if reference.len() != self.n_places {
            return Err(Error::invalid(format!(
                "got {} reference images for an ensemble of {} places",
                reference.len(),
                self.n_places
            )));
        }
        let subsets = make_training_subsets_with(reference, &self.config.grids, schedule)?;
        let subsets = &subsets;

        let n_groups = self.groups.len();
        let mut jobs: Vec<(usize, &mut DrosoNet, Option<Result<TrainReport>>)> = self
            .groups
            .iter_mut()
            .enumerate()
            .flat_map(|(p, g)| g.iter_mut().map(move |net| (p, net, None)))
            .collect();
        par::for_each_mut(schedule, &mut jobs, |_, (p, net, out)| {
            *out = Some(net.train(&subsets[*p]));
        });

        let mut reports: Vec<Vec<TrainReport>> = vec![Vec::new(); n_groups];
        for (p, _, r) in jobs {
            reports[p].push(r.expect("every job ran")?);
        }
        self.trained = true;
        Ok(reports)
    }

    /// Score vectors of all T classifiers for one query, ordered group by
    /// group and member by member.
    pub fn infer(&self, query: &GrayImage) -> Result<Vec<ScoreVector>> {
        self.ensure_trained()?;
        let inputs = extract_inputs(query, &self.config.grids)?;
        Ok(self.scores_for_inputs(&inputs))
    }

    fn scores_for_inputs(&self, inputs: &[InputVector]) -> Vec<ScoreVector> {
        let mut out = Vec::with_capacity(self.total());
        for (group, x) in self.groups.iter().zip(inputs) {
            let planes = BitPlanes::new(x);
            for net in group {
                out.push(net.scores_from_code(&net.hidden_from_planes(&planes)));
            }
        }
        out
    }

    /// Voting over all T score vectors with the configured K.
    pub fn localize(&self, query: &GrayImage) -> Result<Retrieval> {
        let scores = self.infer(query)?;
        Ok(voting::vote(&scores, self.config.k_votes)?.0)
    }

    /// Full query path from a decoded colour frame.
    pub fn localize_rgb(&self, query: &image::RgbImage) -> Result<Retrieval> {
        self.localize(&to_grayscale(query)?)
    }

    /// [`infer`](Self::infer) over many queries.
    pub fn infer_batch(&self, queries: &[GrayImage], schedule: Schedule) -> Result<Vec<Vec<ScoreVector>>> {
        self.ensure_trained()?;
        par::map(schedule, queries, |q| self.infer(q)).into_iter().collect()
    }

    fn ensure_trained(&self) -> Result<()> {
        if self.trained {
            Ok(())
        } else {
            Err(Error::State("the ensemble has not been trained".into()))
        }
    }
}

/// `subsets[p][n]` is region `p` of reference image `n`, flattened.
pub fn make_training_subsets(reference: &[GrayImage], plan: &PartitionPlan) -> Result<Vec<Vec<InputVector>>> {
    make_training_subsets_with(reference, plan, Schedule::default())
}

fn make_training_subsets_with(
    reference: &[GrayImage],
    plan: &PartitionPlan,
    schedule: Schedule,
) -> Result<Vec<Vec<InputVector>>> {
    if reference.is_empty() {
        return Err(Error::invalid("no reference images"));
    }
    let per_image = par::map(schedule, reference, |img| extract_inputs(img, plan))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let mut subsets: Vec<Vec<InputVector>> = (0..plan.region_count())
        .map(|_| Vec::with_capacity(reference.len()))
        .collect();
    for regions in per_image {
        for (subset, x) in subsets.iter_mut().zip(regions) {
            subset.push(x);
        }
    }
    Ok(subsets)
}
