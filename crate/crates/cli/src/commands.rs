use std::path::{Path, PathBuf};

use serde::Serialize;

use ratatouille::analysis::{self, DiversityMatrix};
use ratatouille::bench::{self, suite::Task, SyntheticSuite};
use ratatouille::merge::{self, MergeWeights};
use ratatouille::nn::{self, NetSpec};
use ratatouille::seed;
use ratatouille::trainer::{self, Snapshot};
use ratatouille::{load_checkpoint, save_checkpoint, Checkpoint, Dataset, RunResult, TaskData};

use crate::config::{
    ensure_dir, load, protocol_has_seeds, Ablation, AnalyzeConfig, AnalyzeKind, BenchConfig, EvalSplit, Flags,
    GenConfig, MergeConfig, MergeStrategy, TrainConfig, TrainMode,
};
use crate::failure::{CliResult, Failure};

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    config_digest: &'a str,
    files: Vec<String>,
}

/// Collects produced files and writes `manifest.json` beside them.
struct Outputs {
    dir: PathBuf,
    files: Vec<String>,
}

impl Outputs {
    fn new(dir: &Path) -> CliResult<Self> {
        ensure_dir(dir)?;
        Ok(Self {
            dir: dir.to_path_buf(),
            files: Vec::new(),
        })
    }

    fn path(&mut self, name: &str) -> PathBuf {
        self.files.push(name.to_string());
        self.dir.join(name)
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> CliResult<()> {
        let path = self.path(name);
        let mut text = serde_json::to_string_pretty(value).map_err(|e| Failure::Data(e.to_string()))?;
        text.push('\n');
        std::fs::write(&path, text).map_err(|e| Failure::io(&path, e))
    }

    fn checkpoint(&mut self, name: &str, ckpt: &Checkpoint) -> CliResult<()> {
        let path = self.path(name);
        Ok(save_checkpoint(ckpt, path)?)
    }

    fn finish(mut self, command: &str, digest: &str) -> CliResult<()> {
        let files = std::mem::take(&mut self.files);
        for f in &files {
            println!("wrote {}", self.dir.join(f).display());
        }
        self.json(
            "manifest.json",
            &Manifest {
                command,
                config_digest: digest,
                files,
            },
        )?;
        println!("wrote {}", self.dir.join("manifest.json").display());
        Ok(())
    }
}

fn announce(command: &str, digest: &str) {
    println!("{command}: config digest {digest}");
}

fn load_suite(path: &Path) -> CliResult<SyntheticSuite> {
    let bytes = std::fs::read(path).map_err(|e| Failure::io(path, e))?;
    serde_json::from_slice(&bytes).map_err(|e| Failure::Data(format!("{}: {e}", path.display())))
}

fn read_checkpoint(path: &Path) -> CliResult<Checkpoint> {
    load_checkpoint(path).map_err(|e| match e {
        ratatouille::Error::Io(io) => Failure::io(path, io),
        other => Failure::Data(format!("{}: {other}", path.display())),
    })
}

fn find_task<'a>(suite: &'a SyntheticSuite, name: &str) -> CliResult<&'a Task> {
    std::iter::once(&suite.target)
        .chain(&suite.aux)
        .chain(std::iter::once(&suite.pretrain))
        .find(|t| t.name == name)
        .ok_or_else(|| Failure::Config(format!("unknown task `{name}`")))
}

/// Train/val split of `task` (all domains, or all but `test_domain`) and the
/// held-out domain when there is one. Splits derive from the root seed, so
/// every subcommand sees the same ID validation set.
fn task_split(
    suite: &SyntheticSuite,
    name: &str,
    test_domain: Option<usize>,
    root: u64,
) -> CliResult<(TaskData, Option<Dataset>)> {
    let task = find_task(suite, name)?;
    let split_seed = seed::derive(root, "split", 0);
    match test_domain {
        Some(d) => {
            let (data, test) = task.leave_one_out(d, split_seed)?;
            Ok((data, Some(test)))
        }
        None => Ok((task.all_domains(split_seed), None)),
    }
}

pub fn gen(flags: &Flags) -> CliResult<()> {
    let cfg = load::<GenConfig>(flags)?;
    announce("gen", &cfg.digest);
    let suite = bench::gen_synthetic_suite(&cfg.config.suite, cfg.config.seed)?;
    let mut out = Outputs::new(&cfg.config.output_dir)?;
    out.json("suite.json", &suite)?;
    out.finish("gen", &cfg.digest)
}

#[derive(Serialize)]
struct RunReport {
    summary: trainer::RunSummary,
    trajectory: Vec<(usize, f64)>,
}

fn run_report(run: &RunResult) -> RunReport {
    RunReport {
        summary: run.summary(),
        trajectory: run.trajectory.iter().map(|s| (s.step, s.id_val_acc)).collect(),
    }
}

pub fn train(flags: &Flags) -> CliResult<()> {
    let loaded = load::<TrainConfig>(flags)?;
    announce("train", &loaded.digest);
    let cfg = &loaded.config;
    let suite = load_suite(&cfg.suite)?;
    let root = cfg.seed;
    let hp = cfg.hparams.with_seed(seed::derive(root, "train", 0));
    let default_task = if cfg.mode == TrainMode::Pretrain {
        "pretrain"
    } else {
        "target"
    };
    let task_name = cfg.task.as_deref().unwrap_or(default_task);
    let init = match (cfg.mode, &cfg.init) {
        (TrainMode::Pretrain, None) => None,
        (TrainMode::Pretrain, Some(_)) => {
            return Err(Failure::Config("`init` is not used by mode `pretrain`".into()));
        }
        (_, Some(path)) => Some(read_checkpoint(path)?),
        (_, None) => return Err(Failure::Config("missing field `init`".into())),
    };
    let mut out = Outputs::new(&cfg.output_dir)?;
    match cfg.mode {
        TrainMode::Pretrain => {
            let (data, _) = task_split(&suite, task_name, cfg.test_domain, root)?;
            let spec = NetSpec {
                input_dim: suite.spec.feature_dim,
                hidden: cfg.hidden.clone().unwrap_or_else(|| vec![32]),
                num_classes: data.num_classes,
                dropout: 0.0,
            };
            let start = nn::init_params(&spec, seed::derive(root, "init", 0))?;
            let run = trainer::fine_tune(&start, &data, &hp)?;
            out.checkpoint("pretrained.rata", run.best())?;
            out.json("run.json", &run_report(&run))?;
        }
        TrainMode::Probe => {
            let init = init.expect("checked above");
            let (data, _) = task_split(&suite, task_name, cfg.test_domain, root)?;
            let probe = trainer::linear_probe(&init.featurizer, &data, &hp)?;
            out.checkpoint("probed.rata", &merge::swap_classifier(&init, &probe)?)?;
        }
        TrainMode::Finetune => {
            let init = init.expect("checked above");
            let (data, _) = task_split(&suite, task_name, cfg.test_domain, root)?;
            let run = trainer::fine_tune(&init, &data, &hp)?;
            out.checkpoint("best.rata", run.best())?;
            out.checkpoint("final.rata", run.final_checkpoint())?;
            out.json("run.json", &run_report(&run))?;
        }
        TrainMode::Intertrain => {
            let init = init.expect("checked above");
            let mut chain = Vec::with_capacity(cfg.chain.len());
            let mut cfgs = Vec::with_capacity(cfg.chain.len());
            for (i, name) in cfg.chain.iter().enumerate() {
                chain.push(task_split(&suite, name, None, root)?.0);
                cfgs.push(cfg.hparams.with_seed(seed::derive(root, "aux", i as u64)));
            }
            let carried = trainer::inter_train_with(&init, &chain, &cfgs, cfg.carrier)?;
            out.checkpoint("intertrained.rata", &carried)?;
        }
    }
    out.finish("train", &loaded.digest)
}

fn lambda(cfg: &MergeConfig) -> CliResult<f64> {
    cfg.lambda
        .ok_or_else(|| Failure::Config(format!("missing field `lambda` for strategy {:?}", cfg.strategy)))
}

fn expect_inputs(models: &[Checkpoint], n: usize, strategy: MergeStrategy) -> CliResult<()> {
    if models.len() != n {
        return Err(Failure::Config(format!(
            "strategy {strategy:?} takes {n} inputs, got {}",
            models.len()
        )));
    }
    Ok(())
}

pub fn merge_cmd(flags: &Flags) -> CliResult<()> {
    let loaded = load::<MergeConfig>(flags)?;
    announce("merge", &loaded.digest);
    let cfg = &loaded.config;
    if cfg.inputs.is_empty() {
        return Err(Failure::Config("`inputs` is empty".into()));
    }
    let models = cfg
        .inputs
        .iter()
        .map(|p| read_checkpoint(p))
        .collect::<CliResult<Vec<_>>>()?;
    let refs: Vec<&Checkpoint> = models.iter().collect();
    let mut out = Outputs::new(&cfg.output_dir)?;
    let merged = match cfg.strategy {
        MergeStrategy::Uniform => merge::mean_weights(&refs)?,
        MergeStrategy::Weighted => {
            let lambdas = cfg
                .lambdas
                .clone()
                .ok_or_else(|| Failure::Config("missing field `lambdas` for strategy Weighted".into()))?;
            merge::average_weights(&refs, &MergeWeights::convex(lambdas)?)?
        }
        MergeStrategy::Wise => {
            expect_inputs(&models, 2, cfg.strategy)?;
            merge::wise(&models[0], &models[1], lambda(cfg)?)?
        }
        MergeStrategy::Interpolate => {
            expect_inputs(&models, 2, cfg.strategy)?;
            merge::interpolate(&models[0], &models[1], lambda(cfg)?)?
        }
        MergeStrategy::Interpolate3 => {
            expect_inputs(&models, 3, cfg.strategy)?;
            merge::interpolate3(&models[0], &models[1], &models[2], lambda(cfg)?)?
        }
        MergeStrategy::Greedy => {
            let suite_path = cfg
                .suite
                .as_ref()
                .ok_or_else(|| Failure::Config("missing field `suite` for strategy Greedy".into()))?;
            let suite = load_suite(suite_path)?;
            let task = cfg.task.as_deref().unwrap_or("target");
            let (data, _) = task_split(&suite, task, cfg.test_domain, cfg.seed)?;
            let val = &data.val;
            let runs = models
                .iter()
                .map(|m| {
                    let acc = nn::accuracy(m, val)?;
                    let snap = Snapshot {
                        step: m.step as usize,
                        checkpoint: m.clone(),
                        id_val_acc: acc,
                    };
                    RunResult::from_trajectory(vec![snap], ratatouille::HyperParams::default())
                })
                .collect::<ratatouille::Result<Vec<_>>>()?;
            let (soup, report) = merge::greedy_soup(&runs, |c| nn::accuracy(c, val))?;
            out.json("greedy_report.json", &report)?;
            soup
        }
    };
    out.checkpoint("merged.rata", &merged)?;
    out.finish("merge", &loaded.digest)
}

#[derive(Serialize)]
struct LmcSummary {
    holds: bool,
    epsilon: f64,
    max_barrier: f64,
}

#[derive(Serialize)]
struct DiversitySummary {
    measure: analysis::Measure,
    mean: Option<f64>,
}

pub fn analyze(flags: &Flags) -> CliResult<()> {
    let loaded = load::<AnalyzeConfig>(flags)?;
    announce("analyze", &loaded.digest);
    let cfg = &loaded.config;
    let suite = load_suite(&cfg.suite)?;
    let task = cfg.task.as_deref().unwrap_or("target");
    let (data, held_out) = task_split(&suite, task, cfg.test_domain, cfg.seed)?;
    let dataset = match (cfg.split, held_out) {
        (EvalSplit::Id, _) => data.val,
        (EvalSplit::Ood, Some(test)) => test,
        (EvalSplit::Ood, None) => {
            return Err(Failure::Config("split `ood` needs `test_domain`".into()));
        }
    };
    let models = cfg
        .inputs
        .iter()
        .map(|p| read_checkpoint(p))
        .collect::<CliResult<Vec<_>>>()?;
    let mut out = Outputs::new(&cfg.output_dir)?;
    match cfg.kind {
        AnalyzeKind::Lmc | AnalyzeKind::Lmc3 => {
            let curve = if cfg.kind == AnalyzeKind::Lmc {
                expect_inputs(&models, 2, MergeStrategy::Interpolate)?;
                analysis::lmc_sweep(&models[0], &models[1], &dataset, cfg.grid)?
            } else {
                expect_inputs(&models, 3, MergeStrategy::Interpolate3)?;
                analysis::lmc_sweep3(&models[0], &models[1], &models[2], &dataset, cfg.grid)?
            };
            let path = out.path("lmc.csv");
            curve.write_csv(path)?;
            out.json(
                "lmc.json",
                &LmcSummary {
                    holds: analysis::lmc_holds(&curve, cfg.epsilon),
                    epsilon: cfg.epsilon,
                    max_barrier: curve.max_barrier(),
                },
            )?;
        }
        AnalyzeKind::Diversity => {
            if models.len() < 2 {
                return Err(Failure::Config("diversity needs at least 2 inputs".into()));
            }
            let refs: Vec<&Checkpoint> = models.iter().collect();
            let matrix: DiversityMatrix = analysis::pairwise_diversity(&refs, &dataset, cfg.measure)?;
            let path = out.path("diversity.csv");
            matrix.write_csv(path)?;
            out.json(
                "diversity.json",
                &DiversitySummary {
                    measure: cfg.measure,
                    mean: matrix.mean,
                },
            )?;
        }
    }
    out.finish("analyze", &loaded.digest)
}

pub fn bench_cmd(flags: &Flags) -> CliResult<()> {
    let loaded = load::<BenchConfig>(flags)?;
    let mut cfg = loaded.config;
    cfg.protocol.threads = cfg.threads;
    if !protocol_has_seeds(&loaded.raw) {
        cfg.protocol.seeds = vec![cfg.seed];
    }
    announce("bench", &loaded.digest);
    let suite = bench::gen_synthetic_suite(&cfg.suite, cfg.seed)?;
    let mut out = Outputs::new(&cfg.output_dir)?;
    let grid = |g: &Option<Vec<usize>>, field: &str| {
        g.clone()
            .ok_or_else(|| Failure::Config(format!("missing field `{field}` for this ablation")))
    };
    match cfg.ablation {
        Ablation::None => {
            let rows = bench::run_protocol(&suite, &cfg.protocol)?;
            let path = out.path("results.csv");
            bench::emit_csv(&rows, path)?;
        }
        Ablation::NumAux => {
            let max_aux = cfg.max_aux.unwrap_or(suite.aux.len());
            let points = bench::ablate_num_aux(&suite, &cfg.protocol, max_aux)?;
            bench::write_ablation_csv(&points, out.path("ablation_num_aux.csv"))?;
        }
        Ablation::Steps => {
            let points = bench::ablate_steps(&suite, &cfg.protocol, &grid(&cfg.step_grid, "step_grid")?)?;
            bench::write_ablation_csv(&points, out.path("ablation_steps.csv"))?;
        }
        Ablation::NumRuns => {
            let points = bench::ablate_num_runs(&suite, &cfg.protocol, &grid(&cfg.run_grid, "run_grid")?)?;
            bench::write_ablation_csv(&points, out.path("ablation_num_runs.csv"))?;
        }
    }
    out.finish("bench", &loaded.digest)
}
