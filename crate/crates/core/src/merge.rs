//! Weight-space combinations: convex averages, 2- and 3-way interpolation,
//! WiSE, uniform and greedy soups, fusing, classifier swaps, and the
//! ratatouille pipeline that ties them together.
//!
//! Averages accumulate in input order and (for uniform means) divide once at
//! the end, so merged artifacts are bit-reproducible.

use serde::{Deserialize, Serialize};

use crate::data::TaskData;
use crate::error::{Error, Result};
use crate::nn;
use crate::param_store::{align, blocks_compatible, validate_compatible, Checkpoint, Lineage, ParamBlock};
use crate::seed;
use crate::trainer::{self, Carrier, HyperParams, RunResult};

use rand::Rng as _;

const CONVEX_TOL: f64 = 1e-12;

/// Interpolation coefficients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MergeWeights {
    pub lambdas: Vec<f64>,
}

impl MergeWeights {
    /// Convex weights: non-negative, summing to one within 1e-12.
    pub fn convex(lambdas: Vec<f64>) -> Result<Self> {
        if lambdas.is_empty() {
            return Err(Error::Weights("no coefficients".into()));
        }
        if lambdas.iter().any(|l| !l.is_finite() || *l < 0.0) {
            return Err(Error::Weights("coefficients must be finite and non-negative".into()));
        }
        let sum: f64 = lambdas.iter().sum();
        if (sum - 1.0).abs() > CONVEX_TOL {
            return Err(Error::Weights(format!("coefficients sum to {sum}, not 1")));
        }
        Ok(Self { lambdas })
    }

    pub fn uniform(n: usize) -> Result<Self> {
        Self::convex(vec![1.0 / n as f64; n])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GreedyReport {
    /// Run indices by descending ID-val accuracy.
    pub candidate_order: Vec<usize>,
    /// Accepted run indices, in acceptance order.
    pub accepted: Vec<usize>,
    pub final_id_val_acc: f64,
}

fn check_all_compatible(models: &[&Checkpoint]) -> Result<()> {
    let first = models.first().ok_or(Error::Empty("models"))?;
    for (i, m) in models.iter().enumerate().skip(1) {
        if !validate_compatible(first, m) {
            return Err(Error::Incompatible(format!("model {i} does not match model 0")));
        }
    }
    Ok(())
}

fn weighted_blocks(reference: &[ParamBlock], sections: &[&[ParamBlock]], coeffs: &[f64]) -> Vec<ParamBlock> {
    let mut out: Vec<ParamBlock> = reference.to_vec();
    for (k, (section, &c)) in sections.iter().zip(coeffs).enumerate() {
        for (acc, b) in out.iter_mut().zip(align(reference, section)) {
            if k == 0 {
                acc.values.iter_mut().zip(&b.values).for_each(|(a, v)| *a = c * v);
            } else {
                acc.values.iter_mut().zip(&b.values).for_each(|(a, v)| *a += c * v);
            }
        }
    }
    out
}

/// `sum_i coeffs[i] * models[i]`, accumulated in input order.
fn combine(models: &[&Checkpoint], coeffs: &[f64]) -> Result<Checkpoint> {
    check_all_compatible(models)?;
    if models.len() != coeffs.len() {
        return Err(Error::Weights(format!(
            "{} models but {} coefficients",
            models.len(),
            coeffs.len()
        )));
    }
    let feats: Vec<&[ParamBlock]> = models.iter().map(|m| m.featurizer.as_slice()).collect();
    let heads: Vec<&[ParamBlock]> = models.iter().map(|m| m.classifier.as_slice()).collect();
    Ok(Checkpoint {
        featurizer: weighted_blocks(&models[0].featurizer, &feats, coeffs),
        classifier: weighted_blocks(&models[0].classifier, &heads, coeffs),
        lineage: Lineage::merged(models, coeffs),
        step: 0,
    })
}

/// Convex combination `sum_i lambda_i * theta_i`.
pub fn average_weights(models: &[&Checkpoint], weights: &MergeWeights) -> Result<Checkpoint> {
    MergeWeights::convex(weights.lambdas.clone())?;
    combine(models, &weights.lambdas)
}

/// Uniform mean: sum in input order, then divide by the count.
pub fn mean_weights(models: &[&Checkpoint]) -> Result<Checkpoint> {
    check_all_compatible(models)?;
    let n = models.len() as f64;
    let mut out = combine(models, &vec![1.0; models.len()])?;
    out.blocks_mut().for_each(|b| b.values.iter_mut().for_each(|v| *v /= n));
    if let Some(m) = out.lineage.merge.as_mut() {
        m.lambdas = vec![1.0 / n; models.len()];
    }
    Ok(out)
}

fn check_unit(lambda: f64) -> Result<()> {
    if (0.0..=1.0).contains(&lambda) {
        Ok(())
    } else {
        Err(Error::Weights(format!("lambda {lambda} outside [0, 1]")))
    }
}

/// `(1 - lambda) * a + lambda * b`.
pub fn interpolate(a: &Checkpoint, b: &Checkpoint, lambda: f64) -> Result<Checkpoint> {
    check_unit(lambda)?;
    combine(&[a, b], &[1.0 - lambda, lambda])
}

/// `(1 - lambda)/2 * a + (1 - lambda)/2 * b + lambda * c`.
pub fn interpolate3(a: &Checkpoint, b: &Checkpoint, c: &Checkpoint, lambda: f64) -> Result<Checkpoint> {
    check_unit(lambda)?;
    let half = (1.0 - lambda) / 2.0;
    combine(&[a, b, c], &[half, half, lambda])
}

/// WiSE fine-tuning: moves a fine-tuned model back toward its initialization.
pub fn wise(fine_tuned: &Checkpoint, pretrained: &Checkpoint, lambda: f64) -> Result<Checkpoint> {
    interpolate(fine_tuned, pretrained, lambda)
}

/// Uniform average of every run's ID-val-selected checkpoint.
pub fn uniform_soup(runs: &[RunResult]) -> Result<Checkpoint> {
    if runs.is_empty() {
        return Err(Error::Empty("runs"));
    }
    let best: Vec<&Checkpoint> = runs.iter().map(RunResult::best).collect();
    mean_weights(&best)
}

/// Greedy soup: candidates sorted by descending ID-val accuracy; each one is
/// kept iff the uniform average including it scores at least as well as the
/// current average (ties accept).
pub fn greedy_soup<F>(runs: &[RunResult], mut evaluator: F) -> Result<(Checkpoint, GreedyReport)>
where
    F: FnMut(&Checkpoint) -> Result<f64>,
{
    if runs.is_empty() {
        return Err(Error::Empty("runs"));
    }
    let mut order: Vec<usize> = (0..runs.len()).collect();
    // stable sort keeps run order among equal accuracies
    order.sort_by(|&i, &j| runs[j].best_acc().total_cmp(&runs[i].best_acc()));

    let mut accepted = vec![order[0]];
    let mut current = mean_weights(&[runs[order[0]].best()])?;
    let mut score = evaluator(&current)?;
    for &cand in &order[1..] {
        let members: Vec<&Checkpoint> = accepted
            .iter()
            .chain(std::iter::once(&cand))
            .map(|&i| runs[i].best())
            .collect();
        let tentative = mean_weights(&members)?;
        let s = evaluator(&tentative)?;
        if s >= score {
            accepted.push(cand);
            current = tentative;
            score = s;
        }
    }
    Ok((
        current,
        GreedyReport {
            candidate_order: order,
            accepted,
            final_id_val_acc: score,
        },
    ))
}

/// Max-shifted softmax.
pub fn softmax(kappa: &[f64]) -> Vec<f64> {
    let max = kappa.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = kappa.iter().map(|k| (k - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Fusing logits `kappa_i ~ Unif(0, 4)`.
pub fn sample_fusing_kappa(k: usize, rng_seed: u64) -> Vec<f64> {
    let mut rng = seed::stream(rng_seed, "fusing-kappa", 0);
    (0..k).map(|_| rng.random_range(0.0..4.0)).collect()
}

/// Averages auxiliary featurizers with coefficients `softmax(kappa)`.
/// Returns the fused featurizer and the coefficients.
pub fn fusing_init(featurizers: &[&[ParamBlock]], kappa: &[f64]) -> Result<(Vec<ParamBlock>, Vec<f64>)> {
    if featurizers.len() != kappa.len() {
        return Err(Error::Weights(format!(
            "{} featurizers but {} logits",
            featurizers.len(),
            kappa.len()
        )));
    }
    let first = featurizers.first().ok_or(Error::Empty("featurizers"))?;
    if let Some(i) = featurizers.iter().position(|f| !blocks_compatible(first, f)) {
        return Err(Error::Incompatible(format!(
            "featurizer {i} does not match featurizer 0"
        )));
    }
    let lambdas = softmax(kappa);
    Ok((weighted_blocks(first, featurizers, &lambdas), lambdas))
}

/// Replaces the classifier of `model` with `probe`.
pub fn swap_classifier(model: &Checkpoint, probe: &[ParamBlock]) -> Result<Checkpoint> {
    let width = nn::feature_dim(&model.featurizer, nn::input_dim(model)?)?;
    match probe {
        [w, b] if w.shape.len() == 2 && w.shape[0] == width && b.shape == [w.shape[1]] => {}
        _ => {
            return Err(Error::Shape(format!(
                "probe does not fit a featurizer of width {width}"
            )))
        }
    }
    let mut out = Checkpoint {
        featurizer: model.featurizer.clone(),
        classifier: probe.to_vec(),
        lineage: model.lineage.clone(),
        step: model.step,
    };
    if model.classifier != probe {
        out.lineage = out.lineage.tagged("classifier-swap");
    }
    out.validate()?;
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Selection {
    Uniform,
    Greedy,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RatatouilleConfig {
    /// Linear-probe training on the target.
    pub probe: HyperParams,
    /// One configuration per auxiliary task.
    pub aux: Vec<HyperParams>,
    /// One configuration per target run; `runs.len()` is M.
    pub runs: Vec<HyperParams>,
    pub selection: Selection,
    /// Featurizer warmup freeze applied to runs starting from inter-trained featurizers.
    pub aux_freeze_steps: usize,
    pub carrier: Carrier,
}

#[derive(Debug, Clone)]
pub struct RatatouilleOutcome {
    pub model: Checkpoint,
    pub report: Option<GreedyReport>,
    pub runs: Vec<RunResult>,
    /// Initialization index used by each run.
    pub init_of_run: Vec<usize>,
    /// `(w_lp, phi_i)` initializations; auxiliary ones first, the pre-trained one last.
    pub initializations: Vec<Checkpoint>,
}

/// Round-robin run-to-initialization assignment; earlier initializations
/// receive the extra runs when `m` is not a multiple of `n_inits`.
pub fn assign_runs(m: usize, n_inits: usize) -> Vec<usize> {
    (0..m).map(|j| j % n_inits).collect()
}

/// One featurizer carrier per auxiliary task (each fine-tuned from
/// `pretrained`), followed by `pretrained` itself.
pub fn auxiliary_initializations(
    pretrained: &Checkpoint,
    aux_tasks: &[TaskData],
    aux_cfgs: &[HyperParams],
    carrier: Carrier,
) -> Result<Vec<Checkpoint>> {
    if aux_tasks.len() != aux_cfgs.len() {
        return Err(Error::Config(format!(
            "{} auxiliary tasks but {} configurations",
            aux_tasks.len(),
            aux_cfgs.len()
        )));
    }
    let mut inits = aux_tasks
        .iter()
        .zip(aux_cfgs)
        .map(|(t, c)| trainer::inter_train_with(pretrained, std::slice::from_ref(t), std::slice::from_ref(c), carrier))
        .collect::<Result<Vec<_>>>()?;
    inits.push(pretrained.clone());
    Ok(inits)
}

/// Full recycling recipe: inter-train one featurizer per auxiliary task,
/// share the pre-trained linear probe across them, fine-tune M runs on the
/// target round-robin over the initializations, then average.
pub fn ratatouille(
    pretrained: &Checkpoint,
    aux_tasks: &[TaskData],
    target: &TaskData,
    cfg: &RatatouilleConfig,
) -> Result<RatatouilleOutcome> {
    if cfg.runs.is_empty() {
        return Err(Error::Config("ratatouille needs M >= 1 runs".into()));
    }
    let carriers = auxiliary_initializations(pretrained, aux_tasks, &cfg.aux, cfg.carrier)?;
    let probe = trainer::linear_probe(&pretrained.featurizer, target, &cfg.probe)?;
    let initializations = carriers
        .iter()
        .map(|c| swap_classifier(c, &probe))
        .collect::<Result<Vec<_>>>()?;
    let n_aux = aux_tasks.len();
    let init_of_run = assign_runs(cfg.runs.len(), initializations.len());
    let runs = init_of_run
        .iter()
        .zip(&cfg.runs)
        .map(|(&i, hp)| {
            let mut hp = hp.clone();
            if i < n_aux {
                hp.freeze_featurizer_steps = cfg.aux_freeze_steps;
            }
            trainer::fine_tune(&initializations[i], target, &hp)
        })
        .collect::<Result<Vec<_>>>()?;
    let (model, report) = match cfg.selection {
        Selection::Uniform => (uniform_soup(&runs)?, None),
        Selection::Greedy => {
            let (m, r) = greedy_soup(&runs, |c| nn::accuracy(c, &target.val))?;
            (m, Some(r))
        }
    };
    Ok(RatatouilleOutcome {
        model,
        report,
        runs,
        init_of_run,
        initializations,
    })
}
