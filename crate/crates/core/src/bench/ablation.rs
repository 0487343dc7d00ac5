//! Ablations over the number of auxiliary tasks, fine-tuning steps and runs.
//!
//! Every point of a curve is computed on the same seeds and folds, and the
//! pre-trained and inter-trained featurizers are shared between points.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::protocol::{for_each_fold, Fold, Outcome, Pool, ProtocolConfig};
use super::suite::SyntheticSuite;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationPoint {
    pub ablation: String,
    pub strategy: String,
    pub x: usize,
    pub mean_ood_acc: f64,
    pub mean_id_val_acc: f64,
    /// Number of (seed, fold) outcomes averaged.
    pub count: usize,
}

const SOUPS: &str = "model-soups-uniform";
const RATATOUILLE: &str = "ratatouille-uniform";

/// `(seed, test domain, [(strategy, x, outcome)])`.
type FoldPoints = (u64, usize, Vec<(&'static str, usize, Outcome)>);

/// Averages per-fold outcomes into points; every fold lists its triples in the same order.
fn aggregate(ablation: &str, folds: Vec<FoldPoints>) -> Vec<AblationPoint> {
    let Some((_, _, first)) = folds.first() else {
        return Vec::new();
    };
    let n = folds.len() as f64;
    first
        .iter()
        .enumerate()
        .map(|(i, (strategy, x, _))| {
            let (ood, id) = folds.iter().fold((0.0, 0.0), |(o, v), (_, _, f)| {
                (o + f[i].2.ood_acc, v + f[i].2.id_val_acc)
            });
            AblationPoint {
                ablation: ablation.to_string(),
                strategy: strategy.to_string(),
                x: *x,
                mean_ood_acc: ood / n,
                mean_id_val_acc: id / n,
                count: folds.len(),
            }
        })
        .collect()
}

/// Ratatouille-uniform restricted to the first k auxiliary tasks, for k = 0..=max_aux.
/// The M runs are spread round-robin over the k + 1 initializations.
pub fn ablate_num_aux(suite: &SyntheticSuite, cfg: &ProtocolConfig, max_aux: usize) -> Result<Vec<AblationPoint>> {
    if max_aux > suite.aux.len() {
        return Err(Error::Config(format!(
            "max_aux {max_aux} exceeds the {} available auxiliary tasks",
            suite.aux.len()
        )));
    }
    let cfg = ProtocolConfig {
        max_aux: Some(max_aux),
        ..cfg.clone()
    };
    let folds = for_each_fold(suite, &cfg, false, |ctx, d| {
        (0..=max_aux)
            .map(|k| {
                let sub = ctx.truncated(k);
                let mut fold = Fold::new(suite, &cfg, &sub, d);
                Ok((RATATOUILLE, k, fold.uniform(Pool::Ratatouille, cfg.runs)?))
            })
            .collect()
    })?;
    Ok(aggregate("num_aux", folds))
}

/// Soups and ratatouille (both uniform) with every target run trained for `steps` steps.
pub fn ablate_steps(suite: &SyntheticSuite, cfg: &ProtocolConfig, step_grid: &[usize]) -> Result<Vec<AblationPoint>> {
    if step_grid.contains(&0) {
        return Err(Error::Config("step grid entries must be positive".into()));
    }
    let folds = for_each_fold(suite, cfg, false, |ctx, d| {
        let mut out = Vec::new();
        for &steps in step_grid {
            let mut sub = ctx.clone();
            for hp in &mut sub.hparams {
                hp.steps = steps;
                hp.eval_every = hp.eval_every.min(steps);
                hp.freeze_featurizer_steps = hp.freeze_featurizer_steps.min(steps - 1);
            }
            let local = ProtocolConfig {
                aux_freeze_steps: cfg.aux_freeze_steps.min(steps - 1),
                ..cfg.clone()
            };
            let mut fold = Fold::new(suite, &local, &sub, d);
            out.push((SOUPS, steps, fold.uniform(Pool::Soups, cfg.runs)?));
            out.push((RATATOUILLE, steps, fold.uniform(Pool::Ratatouille, cfg.runs)?));
        }
        Ok(out)
    })?;
    Ok(aggregate("steps", folds))
}

/// Soups and ratatouille (both uniform) averaging the first m runs of one pool
/// of max(run_grid) runs, so every point nests inside the next.
pub fn ablate_num_runs(suite: &SyntheticSuite, cfg: &ProtocolConfig, run_grid: &[usize]) -> Result<Vec<AblationPoint>> {
    let Some(&max) = run_grid.iter().max() else {
        return Err(Error::Config("run grid is empty".into()));
    };
    if run_grid.contains(&0) {
        return Err(Error::Config("run grid entries must be positive".into()));
    }
    let cfg = ProtocolConfig {
        runs: max,
        ..cfg.clone()
    };
    let folds = for_each_fold(suite, &cfg, false, |ctx, d| {
        let mut fold = Fold::new(suite, &cfg, ctx, d);
        let mut out = Vec::new();
        for &m in run_grid {
            out.push((SOUPS, m, fold.uniform(Pool::Soups, m)?));
            out.push((RATATOUILLE, m, fold.uniform(Pool::Ratatouille, m)?));
        }
        Ok(out)
    })?;
    Ok(aggregate("num_runs", folds))
}

pub const ABLATION_HEADER: [&str; 6] = ["ablation", "strategy", "x", "mean_ood_acc", "mean_id_val_acc", "count"];

pub fn write_ablation_csv(points: &[AblationPoint], path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(path)?;
    w.write_record(ABLATION_HEADER)?;
    for p in points {
        w.write_record([
            p.ablation.clone(),
            p.strategy.clone(),
            p.x.to_string(),
            format!("{:.6}", p.mean_ood_acc),
            format!("{:.6}", p.mean_id_val_acc),
            p.count.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
