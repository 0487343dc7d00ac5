//! Linear mode connectivity probes and prediction-diversity statistics.

use std::collections::BTreeSet;
use std::path::Path;

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::merge::{interpolate, interpolate3, mean_weights};
use crate::nn::{self, Mode};
use crate::param_store::{validate_compatible, Checkpoint};
use crate::seed;
use crate::trainer::RunResult;

/// Default number of interpolation points.
pub const DEFAULT_GRID: usize = 21;
/// Default slack (2 accuracy points) for the chord test.
pub const DEFAULT_EPSILON: f64 = 0.02;

/// Joint correctness counts of two classifiers: `n10` counts examples the
/// first gets right and the second gets wrong, and so on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContingencyCounts {
    pub n11: u64,
    pub n10: u64,
    pub n01: u64,
    pub n00: u64,
}

impl ContingencyCounts {
    pub fn new(n11: u64, n10: u64, n01: u64, n00: u64) -> Self {
        Self { n11, n10, n01, n00 }
    }

    pub fn total(&self) -> u64 {
        self.n11 + self.n10 + self.n01 + self.n00
    }

    /// Counts with the two classifiers exchanged.
    pub fn swapped(&self) -> Self {
        Self::new(self.n11, self.n01, self.n10, self.n00)
    }
}

pub fn contingency(preds_a: &[usize], preds_b: &[usize], labels: &[usize]) -> Result<ContingencyCounts> {
    if preds_a.len() != labels.len() || preds_b.len() != labels.len() {
        return Err(Error::Dimension {
            expected: labels.len(),
            got: if preds_a.len() != labels.len() {
                preds_a.len()
            } else {
                preds_b.len()
            },
        });
    }
    if labels.is_empty() {
        return Err(Error::Empty("predictions"));
    }
    let mut c = ContingencyCounts::new(0, 0, 0, 0);
    for ((a, b), y) in preds_a.iter().zip(preds_b).zip(labels) {
        match (a == y, b == y) {
            (true, true) => c.n11 += 1,
            (true, false) => c.n10 += 1,
            (false, true) => c.n01 += 1,
            (false, false) => c.n00 += 1,
        }
    }
    Ok(c)
}

/// `1 - Q` where `Q = (n11 n00 - n01 n10) / (n11 n00 + n01 n10)`; lies in
/// `[0, 2]`, higher means more diverse.
pub fn q_diversity(c: &ContingencyCounts) -> Result<f64> {
    let agree = c.n11 as f64 * c.n00 as f64;
    let disagree = c.n01 as f64 * c.n10 as f64;
    let denom = agree + disagree;
    if denom == 0.0 {
        return Err(Error::QUndefined);
    }
    // 1 - (agree - disagree) / denom, with a single rounding
    Ok(2.0 * disagree / denom)
}

/// Ratio of disjoint errors to shared errors, `(n01 + n10) / n00`, in
/// Aksela's ratio-error convention.
pub fn ratio_error_diversity(c: &ContingencyCounts) -> Result<f64> {
    if c.n00 == 0 {
        return Err(Error::RatioUndefined);
    }
    Ok((c.n01 + c.n10) as f64 / c.n00 as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Measure {
    #[default]
    Q,
    Ratio,
}

impl Measure {
    pub fn eval(self, c: &ContingencyCounts) -> Result<f64> {
        match self {
            Measure::Q => q_diversity(c),
            Measure::Ratio => ratio_error_diversity(c),
        }
    }
}

/// Diversity between two prediction lists.
pub fn prediction_diversity(preds_a: &[usize], preds_b: &[usize], labels: &[usize], measure: Measure) -> Result<f64> {
    measure.eval(&contingency(preds_a, preds_b, labels)?)
}

/// Symmetric pairwise diversity matrix; entries where the measure is
/// undefined (and the diagonal) are `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiversityMatrix {
    pub values: Vec<Vec<Option<f64>>>,
    /// Mean over the defined unordered pairs.
    pub mean: Option<f64>,
}

impl DiversityMatrix {
    pub fn from_predictions(preds: &[Vec<usize>], labels: &[usize], measure: Measure) -> Result<Self> {
        if preds.len() < 2 {
            return Err(Error::Config("pairwise diversity needs at least 2 models".into()));
        }
        let n = preds.len();
        let mut values = vec![vec![None; n]; n];
        let mut defined = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                let counts = contingency(&preds[i], &preds[j], labels)?;
                match measure.eval(&counts) {
                    Ok(d) => {
                        values[i][j] = Some(d);
                        values[j][i] = Some(d);
                        defined.push(d);
                    }
                    Err(Error::QUndefined | Error::RatioUndefined) => {}
                    Err(e) => return Err(e),
                }
            }
        }
        let mean = (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64);
        Ok(Self { values, mean })
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_path(path)?;
        w.write_record(["i", "j", "diversity"])?;
        let n = self.values.len();
        for i in 0..n {
            for j in i + 1..n {
                let d = self.values[i][j].map(|d| format!("{d:.6}")).unwrap_or_default();
                w.write_record([i.to_string(), j.to_string(), d])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

pub fn pairwise_diversity(models: &[&Checkpoint], dataset: &Dataset, measure: Measure) -> Result<DiversityMatrix> {
    let preds = models
        .iter()
        .map(|m| nn::predict(m, dataset))
        .collect::<Result<Vec<_>>>()?;
    DiversityMatrix::from_predictions(&preds, &dataset.labels, measure)
}

/// Accuracy along a one-dimensional path in weight space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LmcCurve {
    pub grid: Vec<f64>,
    pub accuracies: Vec<f64>,
    pub endpoint_labels: (String, String),
}

impl LmcCurve {
    pub fn new(grid: Vec<f64>, accuracies: Vec<f64>, endpoint_labels: (String, String)) -> Result<Self> {
        let ok = grid.len() == accuracies.len()
            && grid.len() >= 2
            && grid.first() == Some(&0.0)
            && grid.last() == Some(&1.0)
            && grid.windows(2).all(|w| w[0] < w[1]);
        if !ok {
            return Err(Error::Config(
                "curve grid must increase strictly from 0 to 1 and match the accuracies".into(),
            ));
        }
        Ok(Self {
            grid,
            accuracies,
            endpoint_labels,
        })
    }

    /// Largest drop of the curve below the chord between its endpoints.
    pub fn max_barrier(&self) -> f64 {
        let (a0, a1) = (self.accuracies[0], *self.accuracies.last().unwrap());
        self.grid
            .iter()
            .zip(&self.accuracies)
            .map(|(l, acc)| (1.0 - l) * a0 + l * a1 - acc)
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_path(path)?;
        w.write_record(["lambda", "accuracy"])?;
        for (l, a) in self.grid.iter().zip(&self.accuracies) {
            w.write_record([format!("{l:.6}"), format!("{a:.6}")])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// `grid_size` uniformly spaced points from 0 to 1 inclusive.
pub fn uniform_grid(grid_size: usize) -> Result<Vec<f64>> {
    if grid_size < 3 {
        return Err(Error::Config("grid size must be at least 3".into()));
    }
    let last = (grid_size - 1) as f64;
    Ok((0..grid_size).map(|i| i as f64 / last).collect())
}

/// Accuracy of `(1 - lambda) * a + lambda * b` across a uniform grid.
pub fn lmc_sweep(a: &Checkpoint, b: &Checkpoint, dataset: &Dataset, grid_size: usize) -> Result<LmcCurve> {
    if !validate_compatible(a, b) {
        return Err(Error::Incompatible("sweep endpoints differ in blocks".into()));
    }
    let grid = uniform_grid(grid_size)?;
    let accuracies = grid
        .iter()
        .map(|&l| nn::accuracy(&interpolate(a, b, l)?, dataset))
        .collect::<Result<Vec<_>>>()?;
    LmcCurve::new(grid, accuracies, ("a".into(), "b".into()))
}

/// Sweep of `(1 - lambda)/2 * a + (1 - lambda)/2 * b + lambda * c`.
pub fn lmc_sweep3(
    a: &Checkpoint,
    b: &Checkpoint,
    c: &Checkpoint,
    dataset: &Dataset,
    grid_size: usize,
) -> Result<LmcCurve> {
    if !(validate_compatible(a, b) && validate_compatible(a, c)) {
        return Err(Error::Incompatible("sweep endpoints differ in blocks".into()));
    }
    let grid = uniform_grid(grid_size)?;
    let accuracies = grid
        .iter()
        .map(|&l| nn::accuracy(&interpolate3(a, b, c, l)?, dataset))
        .collect::<Result<Vec<_>>>()?;
    LmcCurve::new(grid, accuracies, ("mean(a,b)".into(), "c".into()))
}

/// True iff the curve never falls more than `epsilon` below the chord
/// between its endpoint accuracies.
pub fn lmc_holds(curve: &LmcCurve, epsilon: f64) -> bool {
    let (a0, a1) = (curve.accuracies[0], *curve.accuracies.last().unwrap());
    curve
        .grid
        .iter()
        .zip(&curve.accuracies)
        .all(|(l, acc)| *acc >= (1.0 - l) * a0 + l * a1 - epsilon)
}

/// Accuracy of the uniform weight average minus the mean individual accuracy.
pub fn accuracy_gain(models: &[&Checkpoint], dataset: &Dataset) -> Result<f64> {
    if models.len() < 2 {
        return Err(Error::Config("accuracy gain needs at least 2 models".into()));
    }
    let avg = mean_weights(models)?;
    let merged = nn::accuracy(&avg, dataset)?;
    let mut individual = 0.0;
    for m in models {
        individual += nn::accuracy(m, dataset)?;
    }
    Ok(merged - individual / models.len() as f64)
}

/// Prediction averaging: argmax of the mean softmax over `models`.
pub fn ensemble_predict(models: &[&Checkpoint], dataset: &Dataset) -> Result<Vec<usize>> {
    let first = models.first().ok_or(Error::Empty("models"))?;
    let mut probs = nn::softmax_rows(&nn::forward(first, dataset, Mode::Eval)?);
    for m in &models[1..] {
        let p = nn::softmax_rows(&nn::forward(m, dataset, Mode::Eval)?);
        if p.cols != probs.cols {
            return Err(Error::Incompatible("ensemble members disagree on class count".into()));
        }
        probs.data.iter_mut().zip(&p.data).for_each(|(a, b)| *a += b);
    }
    Ok((0..probs.rows).map(|r| nn::argmax(probs.row(r))).collect())
}

pub fn ensemble_accuracy(models: &[&Checkpoint], dataset: &Dataset) -> Result<f64> {
    if dataset.is_empty() {
        return Err(Error::Empty("dataset"));
    }
    let preds = ensemble_predict(models, dataset)?;
    let correct = preds.iter().zip(&dataset.labels).filter(|(p, y)| p == y).count();
    Ok(correct as f64 / dataset.len() as f64)
}

/// One point of the mixing-ratio curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixPoint {
    pub mu: f64,
    pub mean_acc: f64,
    /// Sample standard deviation over repeats (0 for a single repeat).
    pub std: f64,
}

/// Number of members drawn from the second pool: `round(mu * m)`, halves away from zero.
pub fn mix_count(mu: f64, m: usize) -> usize {
    (mu * m as f64).round() as usize
}

/// For each `mu`, averages `m - round(mu m)` best checkpoints from `pool_a`
/// with `round(mu m)` from `pool_b` (drawn without replacement), `repeats`
/// times, and reports the accuracy mean and spread.
#[allow(clippy::too_many_arguments)]
pub fn mixing_curve(
    pool_a: &[RunResult],
    pool_b: &[RunResult],
    m: usize,
    mus: &[f64],
    dataset: &Dataset,
    repeats: usize,
    rng_seed: u64,
) -> Result<Vec<MixPoint>> {
    if m == 0 || repeats == 0 {
        return Err(Error::Config("mixing curve needs m >= 1 and repeats >= 1".into()));
    }
    let mut out = Vec::with_capacity(mus.len());
    for (k, &mu) in mus.iter().enumerate() {
        if !(0.0..=1.0).contains(&mu) {
            return Err(Error::Config(format!("mixing ratio {mu} outside [0, 1]")));
        }
        let from_b = mix_count(mu, m);
        let from_a = m - from_b;
        if from_a > pool_a.len() || from_b > pool_b.len() {
            return Err(Error::Config(format!(
                "pools of {} and {} runs cannot supply {from_a} + {from_b}",
                pool_a.len(),
                pool_b.len()
            )));
        }
        let mut accs = Vec::with_capacity(repeats);
        for r in 0..repeats {
            let mut rng = seed::stream(rng_seed, "mixing", (k * repeats + r) as u64);
            let ia = index::sample(&mut rng, pool_a.len(), from_a);
            let ib = index::sample(&mut rng, pool_b.len(), from_b);
            let members: Vec<&Checkpoint> = ia
                .iter()
                .map(|i| pool_a[i].best())
                .chain(ib.iter().map(|i| pool_b[i].best()))
                .collect();
            accs.push(nn::accuracy(&mean_weights(&members)?, dataset)?);
        }
        let n = accs.len() as f64;
        let mean_acc = accs.iter().sum::<f64>() / n;
        let std = if accs.len() > 1 {
            (accs.iter().map(|a| (a - mean_acc).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        out.push(MixPoint { mu, mean_acc, std });
    }
    Ok(out)
}

/// Mean pairwise diversity at every evaluation step shared by all
/// trajectories. Steps where no pair has a defined value report `None`.
pub fn diversity_vs_steps(
    pairs: &[(&RunResult, &RunResult)],
    dataset: &Dataset,
    measure: Measure,
) -> Result<Vec<(usize, Option<f64>)>> {
    let mut common: Option<BTreeSet<usize>> = None;
    for (a, b) in pairs {
        for run in [a, b] {
            let steps: BTreeSet<usize> = run.trajectory.iter().map(|s| s.step).collect();
            common = Some(match common {
                None => steps,
                Some(c) => c.intersection(&steps).copied().collect(),
            });
        }
    }
    let common = common.unwrap_or_default();
    if common.is_empty() {
        return Err(Error::Empty("common evaluation steps"));
    }
    fn at(run: &RunResult, step: usize) -> &Checkpoint {
        &run.trajectory.iter().find(|s| s.step == step).unwrap().checkpoint
    }
    let mut series = Vec::with_capacity(common.len());
    for step in common {
        let mut vals = Vec::new();
        for (a, b) in pairs {
            let pa = nn::predict(at(a, step), dataset)?;
            let pb = nn::predict(at(b, step), dataset)?;
            match prediction_diversity(&pa, &pb, &dataset.labels, measure) {
                Ok(d) => vals.push(d),
                Err(Error::QUndefined | Error::RatioUndefined) => {}
                Err(e) => return Err(e),
            }
        }
        let mean = (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64);
        series.push((step, mean));
    }
    Ok(series)
}
