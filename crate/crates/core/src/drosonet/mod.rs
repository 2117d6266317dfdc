//! The compact place classifier: a fixed sparse binary projection, top-half
//! winner-take-all, and a trainable linear layer with softmax scores.

pub mod projection;
pub mod readout;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{InputVector, INPUT_LEN};

pub use projection::{column_weight, winner_take_all, BitPlanes, HiddenCode, SparseProjection};
pub use readout::{Adam, Gradient, Readout};

/// Range of the uniform initialization of weights and bias.
pub const INIT_SCALE: f32 = 0.01;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DrosoNetConfig {
    pub d_in: usize,
    pub d_hidden: usize,
    pub n_places: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl DrosoNetConfig {
    pub fn new(n_places: usize, seed: u64) -> Self {
        DrosoNetConfig {
            d_in: INPUT_LEN,
            d_hidden: 2048,
            n_places,
            epochs: 200,
            learning_rate: 0.001,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_in == 0 {
            return Err(Error::invalid("d_in must be at least 1"));
        }
        if self.d_hidden < 2 || !self.d_hidden.is_multiple_of(2) {
            return Err(Error::invalid(format!(
                "d_hidden must be even and at least 2, got {}",
                self.d_hidden
            )));
        }
        if self.d_hidden > u32::MAX as usize {
            return Err(Error::invalid("d_hidden does not fit in 32 bits"));
        }
        if self.n_places == 0 {
            return Err(Error::invalid("n_places must be at least 1"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        Ok(())
    }
}

/// Softmax distribution over reference places.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreVector(pub Vec<f64>);

impl ScoreVector {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Index of the largest score, lowest index on ties.
    pub fn argmax(&self) -> usize {
        argmax(&self.0)
    }
}

pub(crate) fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Per-epoch training losses. `losses[e]` is the mean cross-entropy before
/// the update of epoch `e`; `final_loss` is measured after the last update.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainReport {
    pub losses: Vec<f32>,
    pub final_loss: f32,
}

impl TrainReport {
    pub fn initial_loss(&self) -> f32 {
        self.losses.first().copied().unwrap_or(self.final_loss)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DrosoNet {
    config: DrosoNetConfig,
    projection: SparseProjection,
    readout: Readout<f32>,
}

impl DrosoNet {
    /// Draws the projection, then weights and bias, from one seeded stream.
    pub fn new(config: DrosoNetConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let projection = SparseProjection::random(config.d_in, config.d_hidden, &mut rng);
        let mut uniform = || rng.random_range(-INIT_SCALE..=INIT_SCALE);
        let weights = (0..config.d_hidden * config.n_places).map(|_| uniform()).collect();
        let bias = (0..config.n_places).map(|_| uniform()).collect();
        let readout = Readout::new(config.d_hidden, config.n_places, weights, bias);
        Ok(DrosoNet {
            config,
            projection,
            readout,
        })
    }

    pub(crate) fn from_parts(config: DrosoNetConfig, projection: SparseProjection, readout: Readout<f32>) -> Result<Self> {
        config.validate()?;
        if projection.d_in() != config.d_in || projection.d_hidden() != config.d_hidden {
            return Err(Error::format("projection shape disagrees with the configuration"));
        }
        if readout.d_hidden != config.d_hidden || readout.n != config.n_places {
            return Err(Error::format("readout shape disagrees with the configuration"));
        }
        Ok(DrosoNet {
            config,
            projection,
            readout,
        })
    }

    pub fn config(&self) -> &DrosoNetConfig {
        &self.config
    }

    pub fn projection(&self) -> &SparseProjection {
        &self.projection
    }

    pub fn readout(&self) -> &Readout<f32> {
        &self.readout
    }

    pub fn n_places(&self) -> usize {
        self.config.n_places
    }

    /// Binary hidden code `O = th(x · H)`.
    pub fn hidden(&self, x: &InputVector) -> Result<HiddenCode> {
        Ok(winner_take_all(&self.projection.project(x)?))
    }

    pub(crate) fn hidden_from_planes(&self, planes: &BitPlanes) -> HiddenCode {
        winner_take_all(&self.projection.project_planes(planes))
    }

    pub fn scores(&self, x: &InputVector) -> Result<ScoreVector> {
        Ok(self.scores_from_code(&self.hidden(x)?))
    }

    pub fn scores_from_code(&self, code: &HiddenCode) -> ScoreVector {
        ScoreVector(readout::softmax(&self.readout.logits(code.active())))
    }

    pub fn predict(&self, x: &InputVector) -> Result<usize> {
        Ok(self.scores(x)?.argmax())
    }

    /// Trains the readout on one input per place; `subset[n]` belongs to
    /// place `n`. The projection stays fixed and the binary code is a
    /// constant input to the linear layer. Full-batch Adam, one step per
    /// epoch.
    pub fn train(&mut self, subset: &[InputVector]) -> Result<TrainReport> {
        if subset.len() != self.config.n_places {
            return Err(Error::invalid(format!(
                "training subset has {} items, expected one per place ({})",
                subset.len(),
                self.config.n_places
            )));
        }
        let codes = subset
            .iter()
            .map(|x| Ok(self.hidden(x)?.active().to_vec()))
            .collect::<Result<Vec<_>>>()?;
        Ok(self.train_codes(&codes))
    }

    pub(crate) fn train_codes(&mut self, codes: &[Vec<u32>]) -> TrainReport {
        let units = readout::transpose_codes(codes, self.config.d_hidden);
        let mut adam = Adam::new(self.config.learning_rate as f32, &self.readout);
        let mut losses = Vec::with_capacity(self.config.epochs);
        for _ in 0..self.config.epochs {
            let (loss, grad) = self.readout.loss_and_gradient(codes, &units);
            losses.push(loss);
            adam.update(&mut self.readout, &grad);
        }
        let final_loss = self.readout.loss(codes);
        TrainReport { losses, final_loss }
    }
}
