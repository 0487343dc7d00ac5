//! Single-seed probes of the weight-space phenomena: mode connectivity along
//! one trajectory and across auxiliary initializations, prediction diversity
//! by initialization, and the soups/auxiliary mixing ratio.
//!
//! Each probe trains what it needs through a [`Fold`], so runs match the
//! ones the protocol would produce for the same seed and test domain.

use crate::analysis::{self, LmcCurve, Measure, MixPoint};
use crate::error::{Error, Result};
use crate::nn;
use crate::trainer::RunResult;

use super::protocol::{Fold, Pool, ProtocolConfig, SeedContext};
use super::suite::SyntheticSuite;

fn context(suite: &SyntheticSuite, cfg: &ProtocolConfig, s: u64, min_aux: usize) -> Result<SeedContext> {
    let ctx = SeedContext::build(suite, cfg, s, false)?;
    if ctx.aux.len() < min_aux {
        return Err(Error::Config(format!("needs at least {min_aux} auxiliary tasks")));
    }
    Ok(ctx)
}

/// Interpolation between the checkpoint halfway through one target run and
/// its final checkpoint, scored on the held-out domain.
pub fn trajectory_lmc(suite: &SyntheticSuite, cfg: &ProtocolConfig, s: u64, test_domain: usize) -> Result<LmcCurve> {
    let ctx = context(suite, cfg, s, 0)?;
    let mut fold = Fold::new(suite, cfg, &ctx, test_domain);
    let run = fold.pool(Pool::Soups, 1, 0)?[0].clone();
    let half = run.hparams.steps / 2;
    let mid = run
        .trajectory
        .iter()
        .find(|snap| snap.step >= half)
        .ok_or(Error::Empty("trajectory"))?;
    let test = fold.test(0)?.clone();
    analysis::lmc_sweep(&mid.checkpoint, run.final_checkpoint(), &test, analysis::DEFAULT_GRID)
}

/// Interpolation between two target runs started from featurizers
/// inter-trained on auxiliary tasks 0 and 1, scored on the held-out domain.
pub fn cross_aux_lmc(suite: &SyntheticSuite, cfg: &ProtocolConfig, s: u64, test_domain: usize) -> Result<LmcCurve> {
    let ctx = context(suite, cfg, s, 2)?.truncated(2);
    let mut fold = Fold::new(suite, cfg, &ctx, test_domain);
    let runs: Vec<RunResult> = fold.pool(Pool::InterTraining, 2, 0)?.into_iter().cloned().collect();
    let test = fold.test(0)?.clone();
    analysis::lmc_sweep(runs[0].best(), runs[1].best(), &test, analysis::DEFAULT_GRID)
}

/// Mean q-diversity on the held-out domain over pairs of runs sharing the
/// pre-trained initialization, and over pairs with one run from the
/// pre-trained and one from the auxiliary-0 initialization. Pairs whose
/// statistic is undefined are skipped.
pub fn diversity_by_initialization(
    suite: &SyntheticSuite,
    cfg: &ProtocolConfig,
    s: u64,
    test_domain: usize,
) -> Result<(f64, f64)> {
    let ctx = context(suite, cfg, s, 1)?.truncated(1);
    let mut fold = Fold::new(suite, cfg, &ctx, test_domain);
    let test = fold.test(0)?.clone();
    let pre: Vec<Vec<usize>> = fold
        .pool(Pool::Soups, cfg.runs, 0)?
        .iter()
        .map(|r| nn::predict(r.best(), &test))
        .collect::<Result<_>>()?;
    let aux: Vec<Vec<usize>> = fold
        .pool(Pool::InterTraining, cfg.runs, 0)?
        .iter()
        .map(|r| nn::predict(r.best(), &test))
        .collect::<Result<_>>()?;
    let mean = |pairs: Vec<(&Vec<usize>, &Vec<usize>)>| -> Result<f64> {
        let mut vals = Vec::new();
        for (a, b) in pairs {
            match analysis::prediction_diversity(a, b, &test.labels, Measure::Q) {
                Ok(v) => vals.push(v),
                Err(Error::QUndefined) => {}
                Err(e) => return Err(e),
            }
        }
        if vals.is_empty() {
            return Err(Error::QUndefined);
        }
        Ok(vals.iter().sum::<f64>() / vals.len() as f64)
    };
    let same = (0..pre.len())
        .flat_map(|i| (i + 1..pre.len()).map(move |j| (i, j)))
        .map(|(i, j)| (&pre[i], &pre[j]))
        .collect();
    let cross = (0..pre.len()).map(|i| (&pre[i], &aux[i])).collect();
    Ok((mean(same)?, mean(cross)?))
}

/// Accuracy of uniform averages of `m` runs, a fraction `mu` of which start
/// from the auxiliary-0 initialization and the rest from the pre-trained one
/// (both pools hold `cfg.runs` runs). One curve per entry of `test_domains`;
/// the featurizers are shared between them.
#[allow(clippy::too_many_arguments)]
pub fn mixing_ratio(
    suite: &SyntheticSuite,
    cfg: &ProtocolConfig,
    s: u64,
    test_domains: &[usize],
    m: usize,
    mus: &[f64],
    repeats: usize,
) -> Result<Vec<Vec<MixPoint>>> {
    let ctx = context(suite, cfg, s, 1)?.truncated(1);
    let mut curves = Vec::with_capacity(test_domains.len());
    for &d in test_domains {
        let mut fold = Fold::new(suite, cfg, &ctx, d);
        let test = fold.test(0)?.clone();
        let pre: Vec<RunResult> = fold.pool(Pool::Soups, cfg.runs, 0)?.into_iter().cloned().collect();
        let aux: Vec<RunResult> = fold
            .pool(Pool::InterTraining, cfg.runs, 0)?
            .into_iter()
            .cloned()
            .collect();
        let rng_seed = crate::seed::derive(s, "mixing", d as u64);
        curves.push(analysis::mixing_curve(&pre, &aux, m, mus, &test, repeats, rng_seed)?);
    }
    Ok(curves)
}

/// Pointwise mean of curves sharing one `mu` grid; `std` is the mean of the
/// per-curve spreads.
pub fn average_curves(curves: &[Vec<MixPoint>]) -> Result<Vec<MixPoint>> {
    let first = curves.first().ok_or(Error::Empty("curves"))?;
    let n = curves.len() as f64;
    first
        .iter()
        .enumerate()
        .map(|(i, p)| {
            if curves.iter().any(|c| c.get(i).map(|q| q.mu) != Some(p.mu)) {
                return Err(Error::Config("curves do not share a mixing grid".into()));
            }
            Ok(MixPoint {
                mu: p.mu,
                mean_acc: curves.iter().map(|c| c[i].mean_acc).sum::<f64>() / n,
                std: curves.iter().map(|c| c[i].std).sum::<f64>() / n,
            })
        })
        .collect()
}
