//! Fine-tuning procedures: linear probing, vanilla fine-tuning with a
//! frozen-featurizer warmup, inter-training chains, trajectory moving
//! averages, hyperparameter sampling and ID-validation selection.

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, TaskData};
use crate::error::{Error, Result};
use crate::nn::{self, Mode, OptConfig, OptState, OptimizerKind};
use crate::param_store::{digest_of, Checkpoint, Lineage, ParamBlock};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HyperParams {
    pub lr: f64,
    pub batch_size: usize,
    #[serde(default)]
    pub dropout: f64,
    #[serde(default)]
    pub weight_decay: f64,
    pub steps: usize,
    pub eval_every: usize,
    #[serde(default)]
    pub freeze_featurizer_steps: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub optimizer: OptimizerKind,
}

impl Default for HyperParams {
    fn default() -> Self {
        Self {
            lr: 3e-3,
            batch_size: 32,
            dropout: 0.0,
            weight_decay: 0.0,
            steps: 400,
            eval_every: 25,
            freeze_featurizer_steps: 0,
            seed: 0,
            optimizer: OptimizerKind::Adam,
        }
    }
}

impl HyperParams {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.to_string()));
        if self.steps == 0 || self.freeze_featurizer_steps >= self.steps {
            return fail("freeze exceeds steps: need freeze_featurizer_steps < steps and steps > 0");
        }
        if self.eval_every == 0 || self.eval_every > self.steps {
            return fail("eval_every must lie in 1..=steps");
        }
        if self.batch_size == 0 {
            return fail("batch_size must be positive");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail("dropout must lie in [0, 1)");
        }
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return fail("lr must be finite and non-negative");
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return fail("weight_decay must be finite and non-negative");
        }
        Ok(())
    }

    /// Stable digest recorded in lineage entries.
    pub fn digest(&self) -> String {
        digest_of(self)
    }

    fn opt_config(&self) -> OptConfig {
        match self.optimizer {
            OptimizerKind::Sgd => OptConfig::sgd(self.lr),
            OptimizerKind::Adam => OptConfig::adam(self.lr),
        }
    }
}

/// A checkpoint captured during training together with its ID-val accuracy.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub step: usize,
    pub checkpoint: Checkpoint,
    pub id_val_acc: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub trajectory: Vec<Snapshot>,
    /// Index into `trajectory` of the max-accuracy snapshot (earliest on ties).
    pub best_index: usize,
    pub hparams: HyperParams,
}

impl RunResult {
    pub fn from_trajectory(trajectory: Vec<Snapshot>, hparams: HyperParams) -> Result<Self> {
        if trajectory.is_empty() {
            return Err(Error::Empty("trajectory"));
        }
        let mut best_index = 0;
        for (i, s) in trajectory.iter().enumerate() {
            if s.id_val_acc > trajectory[best_index].id_val_acc {
                best_index = i;
            }
        }
        Ok(Self {
            trajectory,
            best_index,
            hparams,
        })
    }

    pub fn best(&self) -> &Checkpoint {
        &self.trajectory[self.best_index].checkpoint
    }

    pub fn best_acc(&self) -> f64 {
        self.trajectory[self.best_index].id_val_acc
    }

    pub fn final_checkpoint(&self) -> &Checkpoint {
        &self.trajectory.last().unwrap().checkpoint
    }

    pub fn summary(&self) -> RunSummary {
        RunSummary {
            steps: self.trajectory.iter().map(|s| s.step).collect(),
            id_val_acc: self.trajectory.iter().map(|s| s.id_val_acc).collect(),
            best_step: self.trajectory[self.best_index].step,
            best_id_val_acc: self.best_acc(),
            hparams: self.hparams.clone(),
        }
    }
}

/// Checkpoint-free description of a run, written next to saved checkpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub steps: Vec<usize>,
    pub id_val_acc: Vec<f64>,
    pub best_step: usize,
    pub best_id_val_acc: f64,
    pub hparams: HyperParams,
}

/// Cycles through shuffled epochs; an epoch's tail shorter than a batch is dropped.
struct BatchStream {
    order: Vec<usize>,
    cursor: usize,
    epoch: u64,
    batch: usize,
    seed: u64,
}

impl BatchStream {
    fn new(n: usize, batch: usize, seed: u64) -> Self {
        let mut s = Self {
            order: (0..n).collect(),
            cursor: 0,
            epoch: 0,
            batch: batch.min(n),
            seed,
        };
        s.shuffle();
        s
    }

    fn shuffle(&mut self) {
        self.order.sort_unstable();
        let mut rng = seed::stream(self.seed, "order", self.epoch);
        self.order.shuffle(&mut rng);
    }

    fn next(&mut self) -> &[usize] {
        if self.cursor + self.batch > self.order.len() {
            self.epoch += 1;
            self.cursor = 0;
            self.shuffle();
        }
        let out = &self.order[self.cursor..self.cursor + self.batch];
        self.cursor += self.batch;
        out
    }
}

fn check_task_dims(init: &Checkpoint, task: &TaskData) -> Result<()> {
    let expected = nn::input_dim(init)?;
    for d in [&task.train, &task.val] {
        if d.dim != expected {
            return Err(Error::Dimension { expected, got: d.dim });
        }
    }
    let classes = nn::num_classes(init)?;
    if classes != task.num_classes {
        return Err(Error::Dimension {
            expected: task.num_classes,
            got: classes,
        });
    }
    Ok(())
}

/// Minibatch ERM from `init` on `task`, recording ID-val accuracy every
/// `eval_every` steps (and at the last step).
pub fn fine_tune(init: &Checkpoint, task: &TaskData, cfg: &HyperParams) -> Result<RunResult> {
    cfg.validate()?;
    check_task_dims(init, task)?;
    if task.train.is_empty() {
        return Err(Error::Empty("training split"));
    }
    if task.val.is_empty() {
        return Err(Error::Empty("validation split"));
    }

    let lineage = init.lineage.extended(&task.name, &cfg.digest());
    let mut params = init.clone();
    params.lineage = lineage;
    params.step = 0;
    let mut opt = OptState::new(cfg.opt_config(), &params);
    let mut batches = BatchStream::new(task.train.len(), cfg.batch_size, cfg.seed);
    let mut trajectory = Vec::with_capacity(cfg.steps / cfg.eval_every + 1);

    for step in 1..=cfg.steps {
        let batch = task.train.select(batches.next());
        let mode = Mode::Train {
            dropout: cfg.dropout,
            seed: seed::derive(cfg.seed, "dropout", step as u64),
        };
        let (_, mut grads) = nn::loss_and_grad(&params, &batch, cfg.weight_decay, mode)?;
        if step <= cfg.freeze_featurizer_steps {
            grads.zero_featurizer();
        }
        opt.apply(&mut params, &grads)?;
        params.step = step as u64;
        if step % cfg.eval_every == 0 || step == cfg.steps {
            let acc = nn::accuracy(&params, &task.val)?;
            trajectory.push(Snapshot {
                step,
                checkpoint: params.clone(),
                id_val_acc: acc,
            });
        }
    }
    RunResult::from_trajectory(trajectory, cfg.clone())
}

/// Trains a fresh linear head on frozen features of `featurizer`; returns
/// the ID-val-selected head blocks.
pub fn linear_probe(featurizer: &[ParamBlock], task: &TaskData, cfg: &HyperParams) -> Result<Vec<ParamBlock>> {
    cfg.validate()?;
    if let Some(first) = featurizer.first() {
        if first.shape.first() != Some(&task.train.dim) {
            return Err(Error::Dimension {
                expected: first.shape[0],
                got: task.train.dim,
            });
        }
    }
    let feats = |d: &Dataset| -> Result<Dataset> {
        let m = nn::features(featurizer, d)?;
        Dataset::with_ids(m.cols, m.data, d.labels.clone(), d.ids.clone())
    };
    let probe_task = TaskData {
        name: task.name.clone(),
        num_classes: task.num_classes,
        train: feats(&task.train)?,
        val: feats(&task.val)?,
    };
    let width = nn::feature_dim(featurizer, task.train.dim)?;
    let head = Checkpoint::new(
        Vec::new(),
        vec![
            ParamBlock::zeros("head.weight", vec![width, task.num_classes]),
            ParamBlock::zeros("head.bias", vec![task.num_classes]),
        ],
        Lineage::new("probe"),
        0,
    )?;
    let mut probe_cfg = cfg.clone();
    probe_cfg.freeze_featurizer_steps = 0;
    let run = fine_tune(&head, &probe_task, &probe_cfg)?;
    Ok(run.best().classifier.clone())
}

/// Which checkpoint of an auxiliary run carries the featurizer forward.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Carrier {
    /// ID-val-selected checkpoint.
    #[default]
    Best,
    Final,
    /// Mean of the trajectory (robust inter-training).
    MovingAverage,
}

/// Sequentially fine-tunes the featurizer on each task of `chain` with a
/// fresh head, discarding the head afterwards. An empty chain returns
/// `pretrained` unchanged.
pub fn inter_train(pretrained: &Checkpoint, chain: &[TaskData], cfgs: &[HyperParams]) -> Result<Checkpoint> {
    inter_train_with(pretrained, chain, cfgs, Carrier::Best)
}

pub fn inter_train_with(
    pretrained: &Checkpoint,
    chain: &[TaskData],
    cfgs: &[HyperParams],
    carrier: Carrier,
) -> Result<Checkpoint> {
    if chain.len() != cfgs.len() {
        return Err(Error::Config(format!(
            "{} auxiliary tasks but {} configurations",
            chain.len(),
            cfgs.len()
        )));
    }
    let in_dim = nn::input_dim(pretrained)?;
    let width = nn::feature_dim(&pretrained.featurizer, in_dim)?;
    let mut current = pretrained.clone();
    for (task, cfg) in chain.iter().zip(cfgs) {
        let start = Checkpoint {
            featurizer: current.featurizer,
            classifier: nn::init_head(width, task.num_classes, seed::derive(cfg.seed, "aux-head", 0)),
            lineage: current.lineage,
            step: 0,
        };
        let run = fine_tune(&start, task, cfg)?;
        let carried = match carrier {
            Carrier::Best => run.best().clone(),
            Carrier::Final => run.final_checkpoint().clone(),
            Carrier::MovingAverage => collect_moving_average(&run)?,
        };
        current = Checkpoint {
            featurizer: carried.featurizer,
            classifier: Vec::new(),
            lineage: carried.lineage,
            step: carried.step,
        };
    }
    if chain.is_empty() {
        return Ok(current);
    }
    current.classifier = pretrained.classifier.clone();
    Ok(current)
}

/// Elementwise mean of every checkpoint along a run's trajectory.
pub fn collect_moving_average(run: &RunResult) -> Result<Checkpoint> {
    let last = run.trajectory.last().ok_or(Error::Empty("trajectory"))?;
    let mut out = last.checkpoint.clone();
    out.blocks_mut().for_each(|b| b.values.fill(0.0));
    for snap in &run.trajectory {
        for (acc, b) in out.blocks_mut().zip(snap.checkpoint.blocks()) {
            for (a, v) in acc.values.iter_mut().zip(&b.values) {
                *a += v;
            }
        }
    }
    let n = run.trajectory.len() as f64;
    out.blocks_mut().for_each(|b| b.values.iter_mut().for_each(|v| *v /= n));
    out.lineage = last.checkpoint.lineage.tagged("moving-average");
    Ok(out)
}

/// Candidate sets for the random hyperparameter search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HyperParamDistribution {
    pub lr: Vec<f64>,
    pub batch_size: Vec<usize>,
    pub dropout: Vec<f64>,
    pub weight_decay: Vec<f64>,
    pub steps: usize,
    pub eval_every: usize,
    #[serde(default)]
    pub freeze_featurizer_steps: usize,
    #[serde(default)]
    pub optimizer: OptimizerKind,
}

impl Default for HyperParamDistribution {
    /// Mild search space: the usual learning rates {1, 3, 5} scaled up for
    /// the toy network, dropout {0, 0.1, 0.5}, weight decay {1e-6, 1e-4}, batch 32.
    fn default() -> Self {
        Self {
            lr: vec![1e-3, 3e-3, 5e-3],
            batch_size: vec![32],
            dropout: vec![0.0, 0.1, 0.5],
            weight_decay: vec![1e-6, 1e-4],
            steps: 400,
            eval_every: 25,
            freeze_featurizer_steps: 0,
            optimizer: OptimizerKind::Adam,
        }
    }
}

fn pick<T: Copy>(rng: &mut seed::Rng, set: &[T], field: &str) -> Result<T> {
    if set.is_empty() {
        return Err(Error::Config(format!("empty candidate set for `{field}`")));
    }
    Ok(set[rng.random_range(0..set.len())])
}

/// Independent uniform draws from each candidate set.
pub fn sample_hparams(dist: &HyperParamDistribution, rng_seed: u64) -> Result<HyperParams> {
    let mut rng = seed::stream(rng_seed, "hparams", 0);
    let hp = HyperParams {
        lr: pick(&mut rng, &dist.lr, "lr")?,
        batch_size: pick(&mut rng, &dist.batch_size, "batch_size")?,
        dropout: pick(&mut rng, &dist.dropout, "dropout")?,
        weight_decay: pick(&mut rng, &dist.weight_decay, "weight_decay")?,
        steps: dist.steps,
        eval_every: dist.eval_every,
        freeze_featurizer_steps: dist.freeze_featurizer_steps,
        seed: seed::derive(rng_seed, "run", 0),
        optimizer: dist.optimizer,
    };
    Ok(hp)
}

/// The `best` checkpoint of the run with the highest best ID-val accuracy
/// (earlier run on ties), with that run's index.
pub fn select_best_by_id_val(runs: &[RunResult]) -> Result<(usize, &Checkpoint)> {
    let first = runs.first().ok_or(Error::Empty("runs"))?;
    let mut best = (0, first);
    for (i, r) in runs.iter().enumerate().skip(1) {
        if r.best_acc() > best.1.best_acc() {
            best = (i, r);
        }
    }
    Ok((best.0, best.1.best()))
}
