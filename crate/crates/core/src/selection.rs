//! Checkpoint trajectories, best-checkpoint selection and the validation-size
//! study.
//!
//! Trajectories travel as JSON lines, one `{"run", "epoch", "metric", "value"}`
//! object per line. Selection picks the arg-max (or arg-min) epoch with ties
//! going to the earliest epoch; regret is the test-metric gap between the
//! test-optimal checkpoint and the validation-selected one.

use std::io::{BufRead, Write};

use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::{derive_seed, rng};

/// One line of the trajectory wire format.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectoryRecord {
    pub run: u64,
    pub epoch: u64,
    pub metric: String,
    pub value: f64,
}

/// Parses JSON lines; blank lines are skipped.
pub fn read_jsonl(reader: impl BufRead) -> Result<Vec<TrajectoryRecord>> {
    let mut out = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io("<trajectory>", e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: TrajectoryRecord = serde_json::from_str(&line)
            .map_err(|e| Error::InvalidTrajectory(format!("line {}: {e}", n + 1)))?;
        out.push(rec);
    }
    Ok(out)
}

pub fn write_jsonl(records: &[TrajectoryRecord], mut writer: impl Write) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut writer, r)?;
        writer.write_all(b"\n").map_err(|e| Error::io("<trajectory>", e))?;
    }
    Ok(())
}

/// All records of one run.
///
/// For every metric, epochs are strictly increasing and values finite.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricTrajectory {
    run: u64,
    records: Vec<TrajectoryRecord>,
}

impl MetricTrajectory {
    pub fn new(run: u64, records: Vec<TrajectoryRecord>) -> Result<Self> {
        let mut last: Vec<(&str, u64)> = Vec::new();
        for r in &records {
            if r.run != run {
                return Err(Error::InvalidTrajectory(format!("record of run {} in run {run}", r.run)));
            }
            if !r.value.is_finite() {
                return Err(Error::InvalidTrajectory(format!(
                    "non-finite {} at epoch {}",
                    r.metric, r.epoch
                )));
            }
            match last.iter_mut().find(|(m, _)| *m == r.metric) {
                Some((_, e)) if r.epoch <= *e => {
                    return Err(Error::InvalidTrajectory(format!(
                        "run {run}, metric {:?}: epoch {} does not follow {}",
                        r.metric, r.epoch, e
                    )))
                }
                Some((_, e)) => *e = r.epoch,
                None => last.push((&r.metric, r.epoch)),
            }
        }
        Ok(MetricTrajectory { run, records })
    }

    /// Builds a trajectory from `(epoch, value)` pairs of a single metric.
    pub fn from_series(run: u64, metric: &str, series: &[(u64, f64)]) -> Result<Self> {
        Self::new(
            run,
            series
                .iter()
                .map(|&(epoch, value)| TrajectoryRecord {
                    run,
                    epoch,
                    metric: metric.to_string(),
                    value,
                })
                .collect(),
        )
    }

    /// Splits records by run, in order of first appearance.
    pub fn group(records: Vec<TrajectoryRecord>) -> Result<Vec<Self>> {
        let mut runs: Vec<(u64, Vec<TrajectoryRecord>)> = Vec::new();
        for r in records {
            match runs.iter_mut().find(|(id, _)| *id == r.run) {
                Some((_, v)) => v.push(r),
                None => runs.push((r.run, vec![r])),
            }
        }
        runs.into_iter().map(|(id, v)| Self::new(id, v)).collect()
    }

    pub fn run(&self) -> u64 {
        self.run
    }

    pub fn records(&self) -> &[TrajectoryRecord] {
        &self.records
    }

    /// `(epoch, value)` pairs of `metric`; errors when absent.
    pub fn series(&self, metric: &str) -> Result<Vec<(u64, f64)>> {
        let s: Vec<_> = self
            .records
            .iter()
            .filter(|r| r.metric == metric)
            .map(|r| (r.epoch, r.value))
            .collect();
        if s.is_empty() {
            return Err(Error::MissingMetric(metric.to_string()));
        }
        Ok(s)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    #[default]
    Maximize,
    Minimize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectionResult {
    pub run: u64,
    pub metric: String,
    pub direction: Direction,
    pub best_epoch: u64,
    pub best_value: f64,
    pub tie_policy: String,
}

/// Index of the best value; the first one wins ties.
fn best_index(values: impl Iterator<Item = f64>, direction: Direction) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, v) in values.enumerate() {
        let better = match (best, direction) {
            (None, _) => true,
            (Some((_, b)), Direction::Maximize) => v > b,
            (Some((_, b)), Direction::Minimize) => v < b,
        };
        if better {
            best = Some((i, v));
        }
    }
    best.map(|(i, _)| i)
}

pub fn select_best(traj: &MetricTrajectory, metric: &str, direction: Direction) -> Result<SelectionResult> {
    let series = traj.series(metric)?;
    let i = best_index(series.iter().map(|s| s.1), direction).ok_or_else(|| Error::MissingMetric(metric.into()))?;
    Ok(SelectionResult {
        run: traj.run,
        metric: metric.to_string(),
        direction,
        best_epoch: series[i].0,
        best_value: series[i].1,
        tie_policy: "earliest-epoch".into(),
    })
}

/// Regret of validation-based selection on two series sharing an epoch grid,
/// both maximized.
pub fn regret_series(val: &[(u64, f64)], test: &[(u64, f64)]) -> Result<f64> {
    if val.is_empty() {
        return Err(Error::EmptyInput);
    }
    if val.len() != test.len() || val.iter().zip(test).any(|(v, t)| v.0 != t.0) {
        return Err(Error::EpochGridMismatch);
    }
    let chosen = best_index(val.iter().map(|s| s.1), Direction::Maximize).unwrap_or(0);
    let best = test.iter().map(|s| s.1).fold(f64::NEG_INFINITY, f64::max);
    Ok((best - test[chosen].1).max(0.0))
}

/// Test-metric gap between the test-optimal checkpoint and the one chosen on
/// validation, for `metric` in both trajectories.
pub fn regret(val: &MetricTrajectory, test: &MetricTrajectory, metric: &str) -> Result<f64> {
    regret_series(&val.series(metric)?, &test.series(metric)?)
}

/// Ranges for the per-trial latent test curve
/// `f(e) = plateau * (1 - exp(-e / tau)) - decline * max(0, e - onset)`,
/// with `onset = onset_factor * tau`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CurveParams {
    pub plateau: [f64; 2],
    pub tau: [f64; 2],
    pub onset_factor: [f64; 2],
    pub decline: [f64; 2],
}

impl Default for CurveParams {
    fn default() -> Self {
        CurveParams {
            plateau: [0.6, 0.85],
            tau: [4.0, 10.0],
            onset_factor: [1.0, 2.0],
            decline: [0.01, 0.02],
        }
    }
}

/// One drawn latent curve.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HumpCurve {
    pub plateau: f64,
    pub tau: f64,
    pub onset: f64,
    pub decline: f64,
}

impl HumpCurve {
    pub fn value(&self, e: f64) -> f64 {
        self.plateau * (1.0 - (-e / self.tau).exp()) - self.decline * (e - self.onset).max(0.0)
    }
}

fn draw(r: &mut impl Rng, [lo, hi]: [f64; 2]) -> f64 {
    if hi > lo {
        r.random_range(lo..hi)
    } else {
        lo
    }
}

impl CurveParams {
    pub fn sample(&self, r: &mut impl Rng) -> HumpCurve {
        let tau = draw(r, self.tau);
        HumpCurve {
            plateau: draw(r, self.plateau),
            tau,
            onset: draw(r, self.onset_factor) * tau,
            decline: draw(r, self.decline),
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, [lo, hi]) in [
            ("plateau", self.plateau),
            ("tau", self.tau),
            ("onset_factor", self.onset_factor),
            ("decline", self.decline),
        ] {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return Err(Error::InvalidParameter(format!("curve {name} range [{lo}, {hi}] is invalid")));
            }
        }
        if !(self.tau[0] > 0.0) {
            return Err(Error::InvalidParameter("curve tau must be > 0".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StudyConfig {
    pub checkpoints: usize,
    /// Epochs between checkpoints, for reporting.
    pub cadence: u64,
    /// Validation-set sizes compared, one arm each.
    pub n_val: Vec<usize>,
    /// Per-case score noise; a validation mean over `n` cases has std
    /// `noise_sd / sqrt(n)`.
    pub noise_sd: f64,
    pub trials: usize,
    pub seed: u64,
    pub curve: CurveParams,
}

impl Default for StudyConfig {
    fn default() -> Self {
        StudyConfig {
            checkpoints: 60,
            cadence: 100,
            n_val: vec![5, 150],
            noise_sd: 0.02,
            trials: 200,
            seed: 0,
            curve: CurveParams::default(),
        }
    }
}

impl StudyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 || self.checkpoints == 0 || self.n_val.is_empty() || self.n_val.contains(&0) {
            return Err(Error::InvalidParameter(
                "study needs trials >= 1, checkpoints >= 1 and positive validation sizes".into(),
            ));
        }
        if !(self.noise_sd >= 0.0) {
            return Err(Error::InvalidParameter("noise_sd must be >= 0".into()));
        }
        self.curve.validate()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArmResult {
    pub n_val: usize,
    pub regrets: Vec<f64>,
    pub median: f64,
    pub mean: f64,
    pub zero_fraction: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudyResult {
    pub config: StudyConfig,
    pub arms: Vec<ArmResult>,
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

/// The latent test curve and per-arm validation curves of one trial.
#[derive(Clone, Debug, PartialEq)]
pub struct Trial {
    pub test: Vec<(u64, f64)>,
    pub validation: Vec<Vec<(u64, f64)>>,
}

pub fn simulate_trial(config: &StudyConfig, index: usize) -> Trial {
    let seed = derive_seed(config.seed, "trial", index as u64);
    let curve = config.curve.sample(&mut rng(derive_seed(seed, "curve", 0)));
    let epochs: Vec<u64> = (1..=config.checkpoints as u64).map(|e| e * config.cadence).collect();
    let test: Vec<(u64, f64)> = (1..=config.checkpoints)
        .zip(&epochs)
        .map(|(k, &e)| (e, curve.value(k as f64)))
        .collect();
    let validation = config
        .n_val
        .iter()
        .enumerate()
        .map(|(arm, &n)| {
            let mut r = rng(derive_seed(seed, "arm", arm as u64));
            let scale = config.noise_sd / (n as f64).sqrt();
            test.iter()
                .map(|&(e, f)| {
                    let eps = if scale > 0.0 {
                        Normal::new(0.0, scale).expect("finite scale").sample(&mut r)
                    } else {
                        0.0
                    };
                    (e, f + eps)
                })
                .collect()
        })
        .collect();
    Trial { test, validation }
}

/// Runs every trial and reports the regret distribution per validation size.
pub fn simulate_selection_study(config: &StudyConfig) -> Result<StudyResult> {
    config.validate()?;
    let per_trial: Vec<Vec<f64>> = (0..config.trials)
        .into_par_iter()
        .map(|t| {
            let trial = simulate_trial(config, t);
            trial
                .validation
                .iter()
                .map(|v| regret_series(v, &trial.test).expect("shared epoch grid"))
                .collect()
        })
        .collect();
    let arms = config
        .n_val
        .iter()
        .enumerate()
        .map(|(a, &n)| {
            let regrets: Vec<f64> = per_trial.iter().map(|t| t[a]).collect();
            ArmResult {
                n_val: n,
                median: median(&regrets),
                mean: regrets.iter().sum::<f64>() / regrets.len() as f64,
                zero_fraction: regrets.iter().filter(|&&r| r == 0.0).count() as f64 / regrets.len() as f64,
                regrets,
            }
        })
        .collect();
    Ok(StudyResult {
        config: config.clone(),
        arms,
    })
}
