//! Synthetic multi-domain classification tasks.
//!
//! Classes are Gaussian clusters around anchor points. Every domain applies
//! its own seeded near-identity rotation and translation to the shared
//! anchors (covariate shift). Auxiliary tasks blend the target anchors with
//! fresh ones through a relatedness knob, and the pre-training task is a
//! larger task with more classes.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, TaskData};
use crate::error::{Error, Result};
use crate::seed;

/// Generator parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SuiteSpec {
    pub feature_dim: usize,
    pub num_classes: usize,
    /// Gaussian modes per class; each class anchor is a set of this many points.
    pub clusters_per_class: usize,
    /// Coordinates carrying the target class signal; the rest of the target
    /// anchors are zero. `None` uses every coordinate.
    #[serde(default)]
    pub signal_dim: Option<usize>,
    pub num_domains: usize,
    pub samples_per_domain: usize,
    /// Magnitude of the per-domain rotation and translation.
    pub domain_shift: f64,
    /// Standard deviation of the within-class noise.
    pub noise: f64,
    /// Standard deviation of anchor coordinates.
    pub anchor_scale: f64,
    /// Share of each training domain used for training (rest is ID validation).
    pub split_fraction: f64,
    /// One entry per auxiliary task, each in [0, 1].
    pub aux_relatedness: Vec<f64>,
    pub aux_domains: usize,
    pub aux_samples_per_domain: usize,
    pub pretrain_classes: usize,
    pub pretrain_domains: usize,
    pub pretrain_samples_per_domain: usize,
    /// Blend between the first pre-training anchors and the target anchors.
    pub pretrain_relatedness: f64,
}

impl Default for SuiteSpec {
    fn default() -> Self {
        Self {
            feature_dim: 16,
            num_classes: 5,
            clusters_per_class: 1,
            signal_dim: None,
            num_domains: 4,
            samples_per_domain: 300,
            domain_shift: 0.5,
            noise: 1.0,
            anchor_scale: 1.0,
            split_fraction: 0.8,
            aux_relatedness: vec![0.9, 0.8, 0.7],
            aux_domains: 3,
            aux_samples_per_domain: 300,
            pretrain_classes: 10,
            pretrain_domains: 3,
            pretrain_samples_per_domain: 400,
            pretrain_relatedness: 0.5,
        }
    }
}

impl SuiteSpec {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.to_string()));
        if self.feature_dim < 2 {
            return fail("feature_dim must be at least 2");
        }
        if self.num_classes < 2 || self.pretrain_classes < 2 {
            return fail("tasks need at least 2 classes");
        }
        if self.clusters_per_class == 0 {
            return fail("clusters_per_class must be at least 1");
        }
        if self.signal_dim.is_some_and(|s| s == 0 || s > self.feature_dim) {
            return fail("signal_dim must lie in 1..=feature_dim");
        }
        if self.num_domains < 3 {
            return fail("the target task needs at least 3 domains");
        }
        if self.aux_domains == 0 || self.pretrain_domains == 0 {
            return fail("auxiliary and pre-training tasks need at least 1 domain");
        }
        if self.samples_per_domain < 2 || self.aux_samples_per_domain < 2 || self.pretrain_samples_per_domain < 2 {
            return fail("every domain needs at least 2 samples");
        }
        if !(self.split_fraction > 0.0 && self.split_fraction < 1.0) {
            return fail("split_fraction must lie in (0, 1)");
        }
        let unit = |r: &f64| (0.0..=1.0).contains(r);
        if !self.aux_relatedness.iter().all(unit) || !unit(&self.pretrain_relatedness) {
            return fail("relatedness values must lie in [0, 1]");
        }
        if !(self.domain_shift >= 0.0 && self.noise >= 0.0 && self.anchor_scale > 0.0) {
            return fail("domain_shift and noise must be non-negative, anchor_scale positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Domain {
    pub name: String,
    pub data: Dataset,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Task {
    pub name: String,
    pub num_classes: usize,
    pub split_fraction: f64,
    /// Cluster anchors, `(num_classes * clusters_per_class) x feature_dim` row-major;
    /// class `y` owns rows `y * clusters_per_class ..`.
    pub anchors: Vec<f64>,
    /// Relatedness to the target (auxiliary tasks only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub relatedness: Option<f64>,
    pub domains: Vec<Domain>,
}

impl Task {
    pub fn dim(&self) -> usize {
        self.domains[0].data.dim
    }

    fn domain_split(&self, d: usize, split_seed: u64) -> (Dataset, Dataset) {
        let data = &self.domains[d].data;
        let mut idx: Vec<usize> = (0..data.len()).collect();
        let mut rng = seed::stream(split_seed, &format!("split/{}/{}", self.name, self.domains[d].name), 0);
        idx.shuffle(&mut rng);
        let n_train = ((data.len() as f64 * self.split_fraction).round() as usize).clamp(1, data.len() - 1);
        (data.select(&idx[..n_train]), data.select(&idx[n_train..]))
    }

    /// Per-domain train/validation split over `domains`, concatenated.
    pub fn split(&self, domains: &[usize], split_seed: u64) -> TaskData {
        let dim = self.dim();
        let mut train = Dataset::empty(dim);
        let mut val = Dataset::empty(dim);
        for &d in domains {
            let (t, v) = self.domain_split(d, split_seed);
            train.extend(&t);
            val.extend(&v);
        }
        TaskData {
            name: self.name.clone(),
            num_classes: self.num_classes,
            train,
            val,
        }
    }

    /// Train/val over every domain.
    pub fn all_domains(&self, split_seed: u64) -> TaskData {
        let all: Vec<usize> = (0..self.domains.len()).collect();
        self.split(&all, split_seed)
    }

    /// Train/val over every domain but `test`, plus the held-out domain.
    pub fn leave_one_out(&self, test: usize, split_seed: u64) -> Result<(TaskData, Dataset)> {
        if test >= self.domains.len() {
            return Err(Error::Config(format!(
                "test domain {test} out of range for {} domains",
                self.domains.len()
            )));
        }
        let train: Vec<usize> = (0..self.domains.len()).filter(|&d| d != test).collect();
        Ok((self.split(&train, split_seed), self.domains[test].data.clone()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSuite {
    pub spec: SuiteSpec,
    pub seed: u64,
    pub pretrain: Task,
    pub aux: Vec<Task>,
    pub target: Task,
}

fn gaussian(rng: &mut seed::Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect()
}

/// Orthogonal factor of `I + shift * G / sqrt(d)` with a positive-diagonal
/// triangular factor, so `shift = 0` gives the identity.
fn near_identity_rotation(rng: &mut seed::Rng, d: usize, shift: f64) -> DMatrix<f64> {
    let g = gaussian(rng, d * d, shift / (d as f64).sqrt());
    let m = DMatrix::from_fn(d, d, |i, j| g[i * d + j] + if i == j { 1.0 } else { 0.0 });
    let qr = m.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..d {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

struct IdCounter(u64);

impl IdCounter {
    fn take(&mut self, n: usize) -> Vec<u64> {
        let ids = (self.0..self.0 + n as u64).collect();
        self.0 += n as u64;
        ids
    }
}

#[allow(clippy::too_many_arguments)]
fn make_task(
    name: &str,
    anchors: Vec<f64>,
    classes: usize,
    domains: usize,
    per_domain: usize,
    spec: &SuiteSpec,
    root: u64,
    ids: &mut IdCounter,
) -> Result<Task> {
    let d = spec.feature_dim;
    let k = spec.clusters_per_class;
    let mut out = Vec::with_capacity(domains);
    for j in 0..domains {
        let dname = format!("{name}-d{j}");
        let mut rng = seed::stream(root, &format!("domain/{dname}"), 0);
        let rot = near_identity_rotation(&mut rng, d, spec.domain_shift);
        let shift = gaussian(&mut rng, d, spec.domain_shift * spec.anchor_scale);
        let mut features = Vec::with_capacity(per_domain * d);
        let mut labels = Vec::with_capacity(per_domain);
        for i in 0..per_domain {
            let y = i % classes;
            let a = y * k + (i / classes) % k;
            let point: Vec<f64> = anchors[a * d..(a + 1) * d]
                .iter()
                .map(|a| a + spec.noise * rng.sample::<f64, _>(StandardNormal))
                .collect();
            for r in 0..d {
                let mut v = shift[r];
                for (c, p) in point.iter().enumerate() {
                    v += rot[(r, c)] * p;
                }
                features.push(v);
            }
            labels.push(y);
        }
        let data = Dataset::with_ids(d, features, labels, ids.take(per_domain))?;
        out.push(Domain { name: dname, data });
    }
    Ok(Task {
        name: name.to_string(),
        num_classes: classes,
        split_fraction: spec.split_fraction,
        anchors,
        relatedness: None,
        domains: out,
    })
}

/// `r * base + sqrt(1 - r^2) * fresh`, row by row.
fn blend(base: &[f64], fresh: &[f64], r: f64) -> Vec<f64> {
    let s = (1.0 - r * r).max(0.0).sqrt();
    base.iter().zip(fresh).map(|(b, f)| r * b + s * f).collect()
}

pub fn gen_synthetic_suite(spec: &SuiteSpec, seed_: u64) -> Result<SyntheticSuite> {
    spec.validate()?;
    let d = spec.feature_dim;
    let c = spec.num_classes;
    let k = spec.clusters_per_class;
    let mut ids = IdCounter(0);

    let mut target_anchors = gaussian(
        &mut seed::stream(seed_, "anchors/target", 0),
        c * k * d,
        spec.anchor_scale,
    );
    if let Some(sd) = spec.signal_dim {
        target_anchors.chunks_mut(d).for_each(|a| a[sd..].fill(0.0));
    }
    let target = make_task(
        "target",
        target_anchors.clone(),
        c,
        spec.num_domains,
        spec.samples_per_domain,
        spec,
        seed_,
        &mut ids,
    )?;

    let mut aux = Vec::with_capacity(spec.aux_relatedness.len());
    for (i, &r) in spec.aux_relatedness.iter().enumerate() {
        let fresh = gaussian(
            &mut seed::stream(seed_, "anchors/aux", i as u64),
            c * k * d,
            spec.anchor_scale,
        );
        let mut task = make_task(
            &format!("aux{i}"),
            blend(&target_anchors, &fresh, r),
            c,
            spec.aux_domains,
            spec.aux_samples_per_domain,
            spec,
            seed_,
            &mut ids,
        )?;
        task.relatedness = Some(r);
        aux.push(task);
    }

    let p = spec.pretrain_classes;
    let fresh = gaussian(
        &mut seed::stream(seed_, "anchors/pretrain", 0),
        p * k * d,
        spec.anchor_scale,
    );
    let shared = c.min(p) * k * d;
    let mut pre_anchors = blend(&target_anchors[..shared], &fresh[..shared], spec.pretrain_relatedness);
    pre_anchors.extend_from_slice(&fresh[shared..]);
    let pretrain = make_task(
        "pretrain",
        pre_anchors,
        p,
        spec.pretrain_domains,
        spec.pretrain_samples_per_domain,
        spec,
        seed_,
        &mut ids,
    )?;

    Ok(SyntheticSuite {
        spec: spec.clone(),
        seed: seed_,
        pretrain,
        aux,
        target,
    })
}
