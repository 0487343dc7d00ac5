//! Leave-one-domain-out evaluation of every fine-tuning strategy.
//!
//! Per seed: pre-train on the pre-training task, inter-train one featurizer
//! per auxiliary task (shared by all folds), sample M hyperparameter
//! configurations. Per fold: split the training domains, linear-probe the
//! pre-trained featurizer, fine-tune run pools lazily and evaluate each
//! strategy on the held-out domain. Runs are cached by (initialization,
//! run index, split), so strategies that share runs see the same weights.

use std::collections::HashMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::ensemble_accuracy;
use crate::data::{Dataset, TaskData};
use crate::error::{Error, Result};
use crate::merge::{self, fusing_init, greedy_soup, mean_weights, sample_fusing_kappa, swap_classifier, wise};
use crate::nn::{self, NetSpec};
use crate::param_store::{Checkpoint, ParamBlock};
use crate::seed;
use crate::trainer::{
    self, collect_moving_average, fine_tune, linear_probe, sample_hparams, select_best_by_id_val, Carrier,
    HyperParamDistribution, HyperParams, RunResult,
};

use super::suite::SyntheticSuite;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    Vanilla,
    MovingAverage,
    Wise,
    SoupsUniform,
    SoupsGreedy,
    SoupsUniformDagger,
    InterTraining,
    RobustInterTraining,
    Fusing,
    RatatouilleUniform,
    RatatouilleGreedy,
    RatatouilleUniformDagger,
    RobustRatatouilleUniform,
    Ensemble,
}

impl Strategy {
    pub const ALL: [Strategy; 14] = [
        Strategy::Vanilla,
        Strategy::MovingAverage,
        Strategy::Wise,
        Strategy::SoupsUniform,
        Strategy::SoupsGreedy,
        Strategy::SoupsUniformDagger,
        Strategy::InterTraining,
        Strategy::RobustInterTraining,
        Strategy::Fusing,
        Strategy::RatatouilleUniform,
        Strategy::RatatouilleGreedy,
        Strategy::RatatouilleUniformDagger,
        Strategy::RobustRatatouilleUniform,
        Strategy::Ensemble,
    ];

    /// `(strategy, selection)` columns of a result row.
    pub fn labels(self) -> (&'static str, &'static str) {
        match self {
            Strategy::Vanilla => ("vanilla", "id-val"),
            Strategy::MovingAverage => ("moving-average", "id-val"),
            Strategy::Wise => ("wise", "id-val"),
            Strategy::SoupsUniform => ("model-soups", "uniform"),
            Strategy::SoupsGreedy => ("model-soups", "greedy"),
            Strategy::SoupsUniformDagger => ("model-soups", "uniform-dagger"),
            Strategy::InterTraining => ("inter-training", "id-val"),
            Strategy::RobustInterTraining => ("robust-inter-training", "id-val"),
            Strategy::Fusing => ("fusing", "id-val"),
            Strategy::RatatouilleUniform => ("ratatouille", "uniform"),
            Strategy::RatatouilleGreedy => ("ratatouille", "greedy"),
            Strategy::RatatouilleUniformDagger => ("ratatouille", "uniform-dagger"),
            Strategy::RobustRatatouilleUniform => ("robust-ratatouille", "uniform"),
            Strategy::Ensemble => ("deep-ensemble", "prediction-average"),
        }
    }

    fn needs_robust(self) -> bool {
        matches!(self, Strategy::RobustInterTraining | Strategy::RobustRatatouilleUniform)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProtocolConfig {
    pub hidden: Vec<usize>,
    pub pretrain: HyperParams,
    pub aux: HyperParams,
    pub probe: HyperParams,
    pub search: HyperParamDistribution,
    /// Number of target fine-tunings M.
    pub runs: usize,
    /// Warmup freeze for runs that start from an inter-trained featurizer.
    pub aux_freeze_steps: usize,
    pub seeds: Vec<u64>,
    pub strategies: Vec<Strategy>,
    pub wise_lambda: f64,
    /// Data splits pooled by the `uniform-dagger` strategies.
    pub dagger_splits: usize,
    /// Only the first `max_aux` auxiliary tasks are used.
    pub max_aux: Option<usize>,
    pub threads: usize,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        Self {
            hidden: vec![32],
            pretrain: HyperParams {
                lr: 3e-3,
                batch_size: 64,
                steps: 800,
                eval_every: 100,
                ..HyperParams::default()
            },
            aux: HyperParams {
                lr: 3e-3,
                batch_size: 32,
                steps: 1000,
                eval_every: 100,
                ..HyperParams::default()
            },
            probe: HyperParams {
                lr: 1e-2,
                batch_size: 64,
                steps: 300,
                eval_every: 50,
                ..HyperParams::default()
            },
            search: HyperParamDistribution::default(),
            runs: 8,
            aux_freeze_steps: 50,
            seeds: vec![0],
            strategies: vec![
                Strategy::Vanilla,
                Strategy::SoupsUniform,
                Strategy::SoupsGreedy,
                Strategy::InterTraining,
                Strategy::Fusing,
                Strategy::RatatouilleUniform,
                Strategy::RatatouilleGreedy,
                Strategy::Ensemble,
            ],
            wise_lambda: 0.5,
            dagger_splits: 3,
            max_aux: None,
            threads: 1,
        }
    }
}

impl ProtocolConfig {
    pub fn validate(&self) -> Result<()> {
        if self.runs == 0 {
            return Err(Error::Config("runs (M) must be at least 1".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        if self.dagger_splits == 0 {
            return Err(Error::Config("dagger_splits must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.wise_lambda) {
            return Err(Error::Config("wise_lambda must lie in [0, 1]".into()));
        }
        for hp in [&self.pretrain, &self.aux, &self.probe] {
            hp.validate()?;
        }
        Ok(())
    }

    pub fn pretrain_hparams(&self, s: u64) -> HyperParams {
        HyperParams {
            seed: seed::derive(s, "pretrain", 0),
            ..self.pretrain.clone()
        }
    }

    pub fn aux_hparams(&self, s: u64, i: usize) -> HyperParams {
        HyperParams {
            seed: seed::derive(s, "aux", i as u64),
            ..self.aux.clone()
        }
    }

    pub fn probe_hparams(&self, s: u64, split: usize) -> HyperParams {
        HyperParams {
            seed: seed::derive(s, "probe", split as u64),
            ..self.probe.clone()
        }
    }

    /// The M sampled target configurations for seed `s`.
    pub fn run_hparams(&self, s: u64) -> Result<Vec<HyperParams>> {
        (0..self.runs)
            .map(|j| sample_hparams(&self.search, seed::derive(s, "search", j as u64)))
            .collect()
    }

    pub fn target_split_seed(&self, s: u64, split: usize) -> u64 {
        seed::derive(s, "target-split", split as u64)
    }

    pub fn aux_split_seed(&self, s: u64, i: usize) -> u64 {
        seed::derive(s, "aux-split", i as u64)
    }

    pub fn num_aux(&self, suite: &SyntheticSuite) -> usize {
        self.max_aux.map_or(suite.aux.len(), |k| k.min(suite.aux.len()))
    }
}

/// Pre-trains a fresh network on the suite's pre-training task; returns the
/// ID-val-selected checkpoint.
pub fn pretrain(suite: &SyntheticSuite, cfg: &ProtocolConfig, s: u64) -> Result<Checkpoint> {
    let spec = NetSpec {
        input_dim: suite.spec.feature_dim,
        hidden: cfg.hidden.clone(),
        num_classes: suite.pretrain.num_classes,
        dropout: 0.0,
    };
    let init = nn::init_params(&spec, seed::derive(s, "pretrain-init", 0))?;
    let data = suite.pretrain.all_domains(seed::derive(s, "pretrain-split", 0));
    let run = fine_tune(&init, &data, &cfg.pretrain_hparams(s))?;
    Ok(run.best().clone())
}

/// Auxiliary task `i` trained on all of its domains.
pub fn aux_task_data(suite: &SyntheticSuite, cfg: &ProtocolConfig, s: u64, i: usize) -> TaskData {
    suite.aux[i].all_domains(cfg.aux_split_seed(s, i))
}

/// Featurizer carriers inter-trained on the first `num_aux` auxiliary tasks.
pub fn aux_carriers(
    suite: &SyntheticSuite,
    cfg: &ProtocolConfig,
    pretrained: &Checkpoint,
    s: u64,
    carrier: Carrier,
) -> Result<Vec<Checkpoint>> {
    (0..cfg.num_aux(suite))
        .map(|i| {
            let data = aux_task_data(suite, cfg, s, i);
            trainer::inter_train_with(pretrained, &[data], &[cfg.aux_hparams(s, i)], carrier)
        })
        .collect()
}

/// Everything a seed shares across folds.
#[derive(Debug, Clone)]
pub struct SeedContext {
    pub seed: u64,
    pub pretrained: Checkpoint,
    pub aux: Vec<Checkpoint>,
    pub robust_aux: Vec<Checkpoint>,
    pub hparams: Vec<HyperParams>,
    pub aux_names: Vec<String>,
}

impl SeedContext {
    pub fn build(suite: &SyntheticSuite, cfg: &ProtocolConfig, s: u64, robust: bool) -> Result<Self> {
        let pretrained = pretrain(suite, cfg, s)?;
        let aux = aux_carriers(suite, cfg, &pretrained, s, Carrier::Best)?;
        let robust_aux = if robust {
            aux_carriers(suite, cfg, &pretrained, s, Carrier::MovingAverage)?
        } else {
            Vec::new()
        };
        Ok(Self {
            seed: s,
            pretrained,
            hparams: cfg.run_hparams(s)?,
            aux_names: suite.aux[..aux.len()].iter().map(|t| t.name.clone()).collect(),
            aux,
            robust_aux,
        })
    }

    /// The same context restricted to the first `k` auxiliary tasks.
    pub fn truncated(&self, k: usize) -> Self {
        let mut c = self.clone();
        c.aux.truncate(k);
        c.robust_aux.truncate(k);
        c.aux_names.truncate(k);
        c
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum InitKey {
    Pretrained,
    Aux(usize),
    RobustAux(usize),
    Fused(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pool {
    /// All runs from the pre-trained featurizer.
    Soups,
    /// Round-robin over auxiliary featurizers, pre-trained last.
    Ratatouille,
    RobustRatatouille,
    /// Round-robin over auxiliary featurizers only.
    InterTraining,
    RobustInterTraining,
    /// One fused featurizer per run.
    Fusing,
}

struct SplitData {
    target: TaskData,
    test: Dataset,
    probe: Vec<ParamBlock>,
}

/// One leave-one-domain-out fold with its lazily trained run cache.
pub struct Fold<'a> {
    suite: &'a SyntheticSuite,
    cfg: &'a ProtocolConfig,
    ctx: &'a SeedContext,
    pub test_domain: usize,
    splits: Vec<SplitData>,
    cache: HashMap<(InitKey, usize, usize), RunResult>,
}

impl<'a> Fold<'a> {
    pub fn new(suite: &'a SyntheticSuite, cfg: &'a ProtocolConfig, ctx: &'a SeedContext, test_domain: usize) -> Self {
        Self {
            suite,
            cfg,
            ctx,
            test_domain,
            splits: Vec::new(),
            cache: HashMap::new(),
        }
    }

    fn ensure_split(&mut self, r: usize) -> Result<()> {
        while self.splits.len() <= r {
            let k = self.splits.len();
            let (target, test) = self
                .suite
                .target
                .leave_one_out(self.test_domain, self.cfg.target_split_seed(self.ctx.seed, k))?;
            let probe = linear_probe(
                &self.ctx.pretrained.featurizer,
                &target,
                &self.cfg.probe_hparams(self.ctx.seed, k),
            )?;
            self.splits.push(SplitData { target, test, probe });
        }
        Ok(())
    }

    pub fn target(&mut self, r: usize) -> Result<&TaskData> {
        self.ensure_split(r)?;
        Ok(&self.splits[r].target)
    }

    pub fn test(&mut self, r: usize) -> Result<&Dataset> {
        self.ensure_split(r)?;
        Ok(&self.splits[r].test)
    }

    /// `(w_lp, phi)` initialization for `key` on split `r`.
    pub fn initialization(&mut self, key: InitKey, r: usize) -> Result<Checkpoint> {
        self.ensure_split(r)?;
        let probe = &self.splits[r].probe;
        let ctx = self.ctx;
        match key {
            InitKey::Pretrained => swap_classifier(&ctx.pretrained, probe),
            InitKey::Aux(i) => swap_classifier(&ctx.aux[i], probe),
            InitKey::RobustAux(i) => swap_classifier(&ctx.robust_aux[i], probe),
            InitKey::Fused(j) => {
                let mut feats: Vec<&[ParamBlock]> = ctx.aux.iter().map(|c| c.featurizer.as_slice()).collect();
                feats.push(&ctx.pretrained.featurizer);
                let kappa = sample_fusing_kappa(feats.len(), seed::derive(ctx.seed, "kappa", j as u64));
                let (fused, _) = fusing_init(&feats, &kappa)?;
                let mut c = swap_classifier(&ctx.pretrained, probe)?;
                c.featurizer = fused;
                c.lineage = c.lineage.tagged("fused");
                Ok(c)
            }
        }
    }

    fn keys(&self, pool: Pool, m: usize) -> Vec<(InitKey, usize)> {
        let k = self.ctx.aux.len();
        (0..m)
            .map(|j| {
                let key = match pool {
                    Pool::Soups => InitKey::Pretrained,
                    Pool::Ratatouille | Pool::RobustRatatouille => {
                        let i = merge::assign_runs(j + 1, k + 1)[j];
                        match (i < k, pool) {
                            (false, _) => InitKey::Pretrained,
                            (true, Pool::Ratatouille) => InitKey::Aux(i),
                            (true, _) => InitKey::RobustAux(i),
                        }
                    }
                    Pool::InterTraining | Pool::RobustInterTraining if k == 0 => InitKey::Pretrained,
                    Pool::InterTraining => InitKey::Aux(j % k),
                    Pool::RobustInterTraining => InitKey::RobustAux(j % k),
                    Pool::Fusing => InitKey::Fused(j),
                };
                (key, j)
            })
            .collect()
    }

    /// The first `m` runs of `pool` on split `r`, training any that are missing.
    pub fn pool(&mut self, pool: Pool, m: usize, r: usize) -> Result<Vec<&RunResult>> {
        let keys = self.keys(pool, m);
        for &(key, j) in &keys {
            if self.cache.contains_key(&(key, j, r)) {
                continue;
            }
            let init = self.initialization(key, r)?;
            let mut hp = self.ctx.hparams[j].clone();
            if key != InitKey::Pretrained {
                hp.freeze_featurizer_steps = self.cfg.aux_freeze_steps;
            }
            let run = fine_tune(&init, &self.splits[r].target, &hp)?;
            self.cache.insert((key, j, r), run);
        }
        Ok(keys.iter().map(|&(key, j)| &self.cache[&(key, j, r)]).collect())
    }

    fn aux_used(&self, pool: Pool, m: usize) -> Vec<String> {
        let mut used: Vec<usize> = self
            .keys(pool, m)
            .into_iter()
            .filter_map(|(k, _)| match k {
                InitKey::Aux(i) | InitKey::RobustAux(i) => Some(i),
                _ => None,
            })
            .collect();
        if pool == Pool::Fusing {
            used = (0..self.ctx.aux.len()).collect();
        }
        used.sort_unstable();
        used.dedup();
        used.into_iter().map(|i| self.ctx.aux_names[i].clone()).collect()
    }

    fn score(&mut self, model: &Checkpoint) -> Result<(f64, f64)> {
        let ood = nn::accuracy(model, self.test(0)?)?;
        let id = nn::accuracy(model, &self.target(0)?.val)?;
        Ok((ood, id))
    }

    fn select(&mut self, pool: Pool) -> Result<Outcome> {
        let m = self.cfg.runs;
        let best = {
            let runs: Vec<RunResult> = self.pool(pool, m, 0)?.into_iter().cloned().collect();
            select_best_by_id_val(&runs)?.1.clone()
        };
        let (ood, id) = self.score(&best)?;
        Ok(Outcome::new(ood, id, m, self.aux_used(pool, m)))
    }

    pub fn uniform(&mut self, pool: Pool, m: usize) -> Result<Outcome> {
        let model = {
            let runs = self.pool(pool, m, 0)?;
            let best: Vec<&Checkpoint> = runs.iter().map(|r| r.best()).collect();
            mean_weights(&best)?
        };
        let (ood, id) = self.score(&model)?;
        Ok(Outcome::new(ood, id, m, self.aux_used(pool, m)))
    }

    fn greedy(&mut self, pool: Pool) -> Result<Outcome> {
        let m = self.cfg.runs;
        let runs: Vec<RunResult> = self.pool(pool, m, 0)?.into_iter().cloned().collect();
        let val = self.target(0)?.val.clone();
        let (model, report) = greedy_soup(&runs, |c| nn::accuracy(c, &val))?;
        let (ood, _) = self.score(&model)?;
        Ok(Outcome::new(
            ood,
            report.final_id_val_acc,
            report.accepted.len(),
            self.aux_used(pool, m),
        ))
    }

    fn dagger(&mut self, pool: Pool) -> Result<Outcome> {
        let m = self.cfg.runs;
        let mut members = Vec::new();
        for r in 0..self.cfg.dagger_splits {
            members.extend(self.pool(pool, m, r)?.into_iter().map(|run| run.best().clone()));
        }
        let refs: Vec<&Checkpoint> = members.iter().collect();
        let model = mean_weights(&refs)?;
        let (ood, id) = self.score(&model)?;
        Ok(Outcome::new(ood, id, members.len(), self.aux_used(pool, m)))
    }

    pub fn evaluate(&mut self, strategy: Strategy) -> Result<Outcome> {
        let m = self.cfg.runs;
        match strategy {
            Strategy::Vanilla => self.select(Pool::Soups),
            Strategy::MovingAverage => {
                let runs: Vec<RunResult> = self.pool(Pool::Soups, m, 0)?.into_iter().cloned().collect();
                let val = self.target(0)?.val.clone();
                let mut best: Option<(f64, Checkpoint)> = None;
                for run in &runs {
                    let ma = collect_moving_average(run)?;
                    let acc = nn::accuracy(&ma, &val)?;
                    if best.as_ref().is_none_or(|(b, _)| acc > *b) {
                        best = Some((acc, ma));
                    }
                }
                let (id, model) = best.expect("at least one run");
                let (ood, _) = self.score(&model)?;
                Ok(Outcome::new(ood, id, m, Vec::new()))
            }
            Strategy::Wise => {
                let selected = {
                    let runs: Vec<RunResult> = self.pool(Pool::Soups, m, 0)?.into_iter().cloned().collect();
                    select_best_by_id_val(&runs)?.1.clone()
                };
                let init = self.initialization(InitKey::Pretrained, 0)?;
                let model = wise(&selected, &init, self.cfg.wise_lambda)?;
                let (ood, id) = self.score(&model)?;
                Ok(Outcome::new(ood, id, m, Vec::new()))
            }
            Strategy::SoupsUniform => self.uniform(Pool::Soups, m),
            Strategy::SoupsGreedy => self.greedy(Pool::Soups),
            Strategy::SoupsUniformDagger => self.dagger(Pool::Soups),
            Strategy::InterTraining => self.select(Pool::InterTraining),
            Strategy::RobustInterTraining => self.select(Pool::RobustInterTraining),
            Strategy::Fusing => self.select(Pool::Fusing),
            Strategy::RatatouilleUniform => self.uniform(Pool::Ratatouille, m),
            Strategy::RatatouilleGreedy => self.greedy(Pool::Ratatouille),
            Strategy::RatatouilleUniformDagger => self.dagger(Pool::Ratatouille),
            Strategy::RobustRatatouilleUniform => self.uniform(Pool::RobustRatatouille, m),
            Strategy::Ensemble => {
                let members: Vec<Checkpoint> = self
                    .pool(Pool::Ratatouille, m, 0)?
                    .into_iter()
                    .map(|r| r.best().clone())
                    .collect();
                let refs: Vec<&Checkpoint> = members.iter().collect();
                let ood = ensemble_accuracy(&refs, self.test(0)?)?;
                let id = ensemble_accuracy(&refs, &self.target(0)?.val)?;
                Ok(Outcome::new(ood, id, m, self.aux_used(Pool::Ratatouille, m)))
            }
        }
    }
}

/// Scores of one strategy on one fold.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub ood_acc: f64,
    pub id_val_acc: f64,
    pub runs_used: usize,
    pub aux_tasks_used: Vec<String>,
}

impl Outcome {
    fn new(ood_acc: f64, id_val_acc: f64, runs_used: usize, aux_tasks_used: Vec<String>) -> Self {
        Self {
            ood_acc,
            id_val_acc,
            runs_used,
            aux_tasks_used,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub strategy: String,
    pub selection: String,
    pub test_domain: String,
    pub ood_acc: f64,
    pub id_val_acc: f64,
    pub seed: u64,
    pub runs_used: usize,
    pub aux_tasks_used: Vec<String>,
}

fn thread_pool(threads: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))
}

/// Runs `f` on every (seed context, test domain) pair; results come back in
/// seed-major, fold-minor order regardless of scheduling.
pub fn for_each_fold<T, F>(
    suite: &SyntheticSuite,
    cfg: &ProtocolConfig,
    robust: bool,
    f: F,
) -> Result<Vec<(u64, usize, T)>>
where
    T: Send,
    F: Fn(&SeedContext, usize) -> Result<T> + Sync,
{
    cfg.validate()?;
    let pool = thread_pool(cfg.threads)?;
    pool.install(|| {
        let contexts = cfg
            .seeds
            .par_iter()
            .map(|&s| SeedContext::build(suite, cfg, s, robust))
            .collect::<Result<Vec<_>>>()?;
        let units: Vec<(usize, usize)> = (0..contexts.len())
            .flat_map(|c| (0..suite.target.domains.len()).map(move |d| (c, d)))
            .collect();
        units
            .par_iter()
            .map(|&(c, d)| Ok((contexts[c].seed, d, f(&contexts[c], d)?)))
            .collect()
    })
}

/// Leave-one-domain-out protocol over every seed and strategy. Rows are
/// ordered by seed, then test domain, then strategy (configuration order).
pub fn run_protocol(suite: &SyntheticSuite, cfg: &ProtocolConfig) -> Result<Vec<ResultRow>> {
    let robust = cfg.strategies.iter().any(|s| s.needs_robust());
    let results = for_each_fold(suite, cfg, robust, |ctx, d| {
        let mut fold = Fold::new(suite, cfg, ctx, d);
        cfg.strategies
            .iter()
            .map(|&s| fold.evaluate(s))
            .collect::<Result<Vec<_>>>()
    })?;
    let mut rows = Vec::new();
    for (s, d, outcomes) in results {
        for (strategy, o) in cfg.strategies.iter().zip(outcomes) {
            let (name, selection) = strategy.labels();
            rows.push(ResultRow {
                strategy: name.to_string(),
                selection: selection.to_string(),
                test_domain: suite.target.domains[d].name.clone(),
                ood_acc: o.ood_acc,
                id_val_acc: o.id_val_acc,
                seed: s,
                runs_used: o.runs_used,
                aux_tasks_used: o.aux_tasks_used,
            });
        }
    }
    Ok(rows)
}

pub const CSV_HEADER: [&str; 8] = [
    "strategy",
    "selection",
    "test_domain",
    "ood_acc",
    "id_val_acc",
    "seed",
    "runs_used",
    "aux_tasks_used",
];

/// Writes rows as CSV: fixed header, 6-decimal floats, `;`-joined task lists, LF endings.
pub fn emit_csv(rows: &[ResultRow], path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(path)?;
    w.write_record(CSV_HEADER)?;
    for r in rows {
        w.write_record([
            r.strategy.clone(),
            r.selection.clone(),
            r.test_domain.clone(),
            format!("{:.6}", r.ood_acc),
            format!("{:.6}", r.id_val_acc),
            r.seed.to_string(),
            r.runs_used.to_string(),
            r.aux_tasks_used.join(";"),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv(path: impl AsRef<Path>) -> Result<Vec<ResultRow>> {
    let mut rd = csv::Reader::from_path(path)?;
    let header: Vec<String> = rd.headers()?.iter().map(str::to_string).collect();
    if header != CSV_HEADER {
        return Err(Error::Header(format!("unexpected CSV header {header:?}")));
    }
    let bad = |field: &str| Error::Header(format!("cannot parse `{field}`"));
    let mut rows = Vec::new();
    for rec in rd.records() {
        let rec = rec?;
        let aux = &rec[7];
        rows.push(ResultRow {
            strategy: rec[0].to_string(),
            selection: rec[1].to_string(),
            test_domain: rec[2].to_string(),
            ood_acc: rec[3].parse().map_err(|_| bad(&rec[3]))?,
            id_val_acc: rec[4].parse().map_err(|_| bad(&rec[4]))?,
            seed: rec[5].parse().map_err(|_| bad(&rec[5]))?,
            runs_used: rec[6].parse().map_err(|_| bad(&rec[6]))?,
            aux_tasks_used: if aux.is_empty() {
                Vec::new()
            } else {
                aux.split(';').map(str::to_string).collect()
            },
        });
    }
    Ok(rows)
}
