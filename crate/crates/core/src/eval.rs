//! Ground-truth checks, precision–recall analysis, inference timing and
//! per-region diagnostics.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use serde::Serialize;

use crate::drosonet::ScoreVector;
use crate::ensemble::Ensemble;
use crate::error::{Error, Result};
use crate::image::GrayImage;
use crate::par::{self, Schedule};
use crate::partition::RegionId;
use crate::voting::{self, Retrieval};

/// Query → reference mapping with a frame tolerance.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GroundTruth {
    pub mapping: Vec<usize>,
    pub tolerance: usize,
}

impl GroundTruth {
    pub fn identity(n: usize, tolerance: usize) -> Self {
        GroundTruth {
            mapping: (0..n).collect(),
            tolerance,
        }
    }

    pub fn len(&self) -> usize {
        self.mapping.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mapping.is_empty()
    }
}

pub fn check_match(retrieved: usize, query: usize, gt: &GroundTruth) -> Result<bool> {
    let truth = *gt
        .mapping
        .get(query)
        .ok_or_else(|| Error::invalid(format!("query {query} has no ground truth")))?;
    Ok(retrieved.abs_diff(truth) <= gt.tolerance)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct MatchRecord {
    pub query: usize,
    pub retrieved: usize,
    pub confidence: f64,
    pub correct: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct PrPoint {
    pub threshold: f64,
    pub recall: f64,
    pub precision: f64,
}

/// One point per distinct confidence, thresholds descending. At threshold
/// `t` a record counts as retrieved when its confidence is at least `t`.
pub fn pr_curve(records: &[MatchRecord]) -> Result<Vec<PrPoint>> {
    if records.is_empty() {
        return Err(Error::invalid("a precision-recall curve needs at least one record"));
    }
    let mut sorted: Vec<&MatchRecord> = records.iter().collect();
    sorted.sort_by(|a, b| b.confidence.total_cmp(&a.confidence));
    let total = records.len() as f64;
    let mut points = Vec::new();
    let (mut retrieved, mut correct) = (0usize, 0usize);
    let mut i = 0;
    while i < sorted.len() {
        let threshold = sorted[i].confidence;
        while i < sorted.len() && sorted[i].confidence == threshold {
            retrieved += 1;
            correct += sorted[i].correct as usize;
            i += 1;
        }
        points.push(PrPoint {
            threshold,
            recall: correct as f64 / total,
            precision: correct as f64 / retrieved as f64,
        });
    }
    Ok(points)
}

/// Area under the precision–recall curve. Points are taken in ascending
/// recall; the first point's precision is held constant down to recall 0,
/// and consecutive points are joined by trapezoids. A lone point therefore
/// contributes `precision × recall`.
pub fn auc(points: &[PrPoint]) -> f64 {
    let mut sorted: Vec<&PrPoint> = points.iter().collect();
    sorted.sort_by(|a, b| a.recall.total_cmp(&b.recall));
    let Some(first) = sorted.first() else {
        return 0.0;
    };
    let mut area = first.recall * first.precision;
    for w in sorted.windows(2) {
        area += (w[1].recall - w[0].recall) * (w[0].precision + w[1].precision) / 2.0;
    }
    area
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ExtendedPrecision {
    pub ep: f64,
    pub p_r0: f64,
    pub r_p100: f64,
}

/// `(P_R0 + R_P100) / 2`. `P_R0` is the precision of the highest-threshold
/// point among those with the smallest recall; `R_P100` is the largest recall
/// reached at precision exactly 1, or 0 if precision 1 is never reached.
pub fn extended_precision(points: &[PrPoint]) -> ExtendedPrecision {
    let min_recall = points.iter().map(|p| p.recall).fold(f64::INFINITY, f64::min);
    let p_r0 = points
        .iter()
        .find(|p| p.recall == min_recall)
        .map_or(0.0, |p| p.precision);
    let r_p100 = points
        .iter()
        .filter(|p| p.precision == 1.0)
        .map(|p| p.recall)
        .fold(0.0, f64::max);
    ExtendedPrecision {
        ep: (p_r0 + r_p100) / 2.0,
        p_r0,
        r_p100,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Metrics {
    #[serde(skip)]
    pub pr_points: Vec<PrPoint>,
    pub auc: f64,
    pub ep: f64,
    pub r_p100: f64,
    pub p_r0: f64,
    /// Fraction of queries whose top retrieval is correct.
    pub accuracy: f64,
    pub queries: usize,
}

impl Metrics {
    pub fn from_records(records: &[MatchRecord]) -> Result<Self> {
        let pr_points = pr_curve(records)?;
        let ExtendedPrecision { ep, p_r0, r_p100 } = extended_precision(&pr_points);
        Ok(Metrics {
            auc: auc(&pr_points),
            ep,
            r_p100,
            p_r0,
            accuracy: records.iter().filter(|r| r.correct).count() as f64 / records.len() as f64,
            queries: records.len(),
            pr_points,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TimingStats {
    pub mean_ms: f64,
    pub median_ms: f64,
    pub p99_ms: f64,
    pub fps: f64,
    pub samples: usize,
}

impl TimingStats {
    pub fn from_samples(mut ms: Vec<f64>) -> Result<Self> {
        if ms.is_empty() {
            return Err(Error::invalid("timing needs at least one query"));
        }
        ms.sort_by(f64::total_cmp);
        let n = ms.len();
        let mean_ms = ms.iter().sum::<f64>() / n as f64;
        let median_ms = if n % 2 == 1 {
            ms[n / 2]
        } else {
            (ms[n / 2 - 1] + ms[n / 2]) / 2.0
        };
        let rank = ((0.99 * n as f64).ceil() as usize).clamp(1, n);
        Ok(TimingStats {
            mean_ms,
            median_ms,
            p99_ms: ms[rank - 1],
            fps: 1000.0 / mean_ms,
            samples: n,
        })
    }
}

/// Wall-clock time of `run` on each query, on the calling thread.
pub fn time_inference<Q, R>(queries: &[Q], mut run: impl FnMut(&Q) -> Result<R>) -> Result<TimingStats> {
    if queries.is_empty() {
        return Err(Error::invalid("timing needs at least one query"));
    }
    let mut samples = Vec::with_capacity(queries.len());
    for q in queries {
        let start = Instant::now();
        std::hint::black_box(run(q)?);
        samples.push(start.elapsed().as_secs_f64() * 1e3);
    }
    TimingStats::from_samples(samples)
}

/// Times the full query path, from a decoded colour frame to a retrieval.
pub fn time_ensemble(ensemble: &Ensemble, queries: &[image::RgbImage]) -> Result<TimingStats> {
    time_inference(queries, |q| ensemble.localize_rgb(q))
}

#[derive(Clone, Debug, PartialEq)]
pub struct RegionMetrics {
    pub region: usize,
    pub id: RegionId,
    pub metrics: Metrics,
}

#[derive(Clone, Debug)]
pub struct Evaluation {
    pub records: Vec<MatchRecord>,
    pub metrics: Metrics,
    pub per_region: Vec<RegionMetrics>,
}

fn record(query: usize, r: Retrieval, gt: &GroundTruth) -> Result<MatchRecord> {
    Ok(MatchRecord {
        query,
        retrieved: r.place,
        confidence: r.confidence,
        correct: check_match(r.place, query, gt)?,
    })
}

/// Query count matches the ground truth and every true place exists in the model.
pub fn check_queries(ensemble: &Ensemble, queries: &[GrayImage], gt: &GroundTruth) -> Result<()> {
    if queries.is_empty() {
        return Err(Error::invalid("no query images"));
    }
    if gt.len() != queries.len() {
        return Err(Error::invalid(format!(
            "ground truth covers {} queries but {} were given",
            gt.len(),
            queries.len()
        )));
    }
    if let Some(&bad) = gt.mapping.iter().find(|&&m| m >= ensemble.n_places()) {
        return Err(Error::invalid(format!(
            "ground truth refers to place {bad}, but the model knows {} places",
            ensemble.n_places()
        )));
    }
    Ok(())
}

/// Runs every query through the ensemble once and derives both the full
/// system metrics and, by restricting the vote to one group's score vectors,
/// the metrics of each region.
pub fn evaluate(ensemble: &Ensemble, queries: &[GrayImage], gt: &GroundTruth, schedule: Schedule) -> Result<Evaluation> {
    check_queries(ensemble, queries, gt)?;
    let scores = ensemble.infer_batch(queries, schedule)?;
    let (records, metrics) = vote_records(&scores, gt, ensemble.config().k_votes)?;
    let per_region = region_metrics_from_scores(ensemble, &scores, gt, schedule)?;
    Ok(Evaluation {
        records,
        metrics,
        per_region,
    })
}

/// Votes over precomputed score vectors, one list per query. Lets a sweep
/// over K reuse a single inference pass.
pub fn vote_records(scores: &[Vec<ScoreVector>], gt: &GroundTruth, k: usize) -> Result<(Vec<MatchRecord>, Metrics)> {
    let records = scores
        .iter()
        .enumerate()
        .map(|(q, s)| record(q, voting::vote(s, k)?.0, gt))
        .collect::<Result<Vec<_>>>()?;
    let metrics = Metrics::from_records(&records)?;
    Ok((records, metrics))
}

pub fn per_region_metrics(
    ensemble: &Ensemble,
    queries: &[GrayImage],
    gt: &GroundTruth,
) -> Result<Vec<RegionMetrics>> {
    check_queries(ensemble, queries, gt)?;
    let scores = ensemble.infer_batch(queries, Schedule::default())?;
    region_metrics_from_scores(ensemble, &scores, gt, Schedule::default())
}

fn region_metrics_from_scores(
    ensemble: &Ensemble,
    scores: &[Vec<ScoreVector>],
    gt: &GroundTruth,
    schedule: Schedule,
) -> Result<Vec<RegionMetrics>> {
    let z = ensemble.config().z_per_region;
    let k = ensemble.config().k_votes;
    let ids: Vec<(usize, RegionId)> = ensemble.config().grids.regions().enumerate().collect();
    par::map(schedule, &ids, |&(p, id)| {
        let records = scores
            .iter()
            .enumerate()
            .map(|(q, s)| record(q, voting::vote(&s[p * z..(p + 1) * z], k)?.0, gt))
            .collect::<Result<Vec<_>>>()?;
        Ok(RegionMetrics {
            region: p,
            id,
            metrics: Metrics::from_records(&records)?,
        })
    })
    .into_iter()
    .collect()
}

fn create(path: &Path) -> Result<std::io::BufWriter<std::fs::File>> {
    std::fs::File::create(path)
        .map(std::io::BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

fn finish(path: &Path, r: std::io::Result<()>) -> Result<()> {
    r.map_err(|e| Error::io(path, e))
}

pub fn write_matches_json(path: &Path, records: &[MatchRecord]) -> Result<()> {
    let mut w = create(path)?;
    finish(
        path,
        serde_json::to_writer_pretty(&mut w, records)
            .map_err(std::io::Error::other)
            .and_then(|_| w.flush()),
    )
}

pub fn write_metrics_json(path: &Path, metrics: &Metrics) -> Result<()> {
    let mut w = create(path)?;
    finish(
        path,
        serde_json::to_writer_pretty(&mut w, metrics)
            .map_err(std::io::Error::other)
            .and_then(|_| w.flush()),
    )
}

/// Columns: threshold, recall, precision.
pub fn write_pr_csv(path: &Path, points: &[PrPoint]) -> Result<()> {
    let mut w = create(path)?;
    let r = (|| {
        writeln!(w, "threshold,recall,precision")?;
        for p in points {
            writeln!(w, "{},{},{}", p.threshold, p.recall, p.precision)?;
        }
        w.flush()
    })();
    finish(path, r)
}

/// Columns: region, grid, auc, ep.
pub fn write_per_region_csv(path: &Path, regions: &[RegionMetrics]) -> Result<()> {
    let mut w = create(path)?;
    let r = (|| {
        writeln!(w, "region,grid,auc,ep")?;
        for r in regions {
            writeln!(w, "{},{},{},{}", r.region, r.id.grid, r.metrics.auc, r.metrics.ep)?;
        }
        w.flush()
    })();
    finish(path, r)
}
