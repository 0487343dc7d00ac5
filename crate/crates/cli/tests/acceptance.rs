//! Acceptance suite: one line per criterion, non-zero exit if any fails.
//!
//! Runs under `cargo test --workspace`; `cargo test -p ratatouille-cli --test
//! acceptance` runs it alone.

use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use proptest::strategy::Strategy as _;
use proptest::test_runner::{Config as PropConfig, TestRunner};
use proptest::{collection, prop_assert_eq};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ratatouille::analysis::{contingency, lmc_holds, q_diversity, ratio_error_diversity, ContingencyCounts};
use ratatouille::bench::experiments::{
    average_curves, cross_aux_lmc, diversity_by_initialization, mixing_ratio, trajectory_lmc,
};
use ratatouille::bench::protocol::pretrain;
use ratatouille::bench::{gen_synthetic_suite, run_protocol, ProtocolConfig, ResultRow, Strategy, SuiteSpec};
use ratatouille::merge::{self, MergeWeights, RatatouilleConfig, Selection};
use ratatouille::nn::{self, Mode, NetSpec};
use ratatouille::trainer::{self, Carrier, HyperParamDistribution, Snapshot};
use ratatouille::{Checkpoint, Dataset, Error, HyperParams, Lineage, ParamBlock, RunResult};

type Outcome = Result<String, String>;

/// (number, name, check, time budget in seconds)
type Criterion = (u32, &'static str, fn() -> Outcome, u64);

fn check(cond: bool, detail: String) -> Outcome {
    if cond {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn fail<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

// ---------------------------------------------------------------- 1

fn random_family(rng: &mut ChaCha8Rng) -> Vec<Checkpoint> {
    let n = rng.random_range(2..=4);
    let feat_shapes: Vec<Vec<usize>> = (0..rng.random_range(1..=3))
        .map(|_| vec![rng.random_range(1..=4), rng.random_range(1..=4)])
        .collect();
    let head_shapes: Vec<Vec<usize>> = (0..rng.random_range(1..=2))
        .map(|_| vec![rng.random_range(1..=5)])
        .collect();
    let make = |prefix: &str, shapes: &[Vec<usize>], rng: &mut ChaCha8Rng| {
        shapes
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let len = s.iter().product();
                let vals = (0..len).map(|_| rng.random_range(-5.0..5.0)).collect();
                ParamBlock::new(format!("{prefix}{i}"), s.clone(), vals).unwrap()
            })
            .collect::<Vec<_>>()
    };
    (0..n)
        .map(|_| {
            let f = make("f", &feat_shapes, rng);
            let h = make("h", &head_shapes, rng);
            Checkpoint::new(f, h, Lineage::new("acc"), 0).unwrap()
        })
        .collect()
}

/// Elementwise `sum_i c_i * models[i]`, block by block.
fn brute_force(models: &[&Checkpoint], coeffs: &[f64]) -> Vec<Vec<f64>> {
    let n_blocks = models[0].featurizer.len() + models[0].classifier.len();
    let block = |m: &Checkpoint, b: usize| -> Vec<f64> {
        let nf = m.featurizer.len();
        if b < nf {
            m.featurizer[b].values.clone()
        } else {
            m.classifier[b - nf].values.clone()
        }
    };
    (0..n_blocks)
        .map(|b| {
            let len = block(models[0], b).len();
            let mut out = vec![0.0; len];
            for (m, c) in models.iter().zip(coeffs) {
                let v = block(m, b);
                for e in 0..len {
                    out[e] += c * v[e];
                }
            }
            out
        })
        .collect()
}

fn max_dev(got: &Checkpoint, want: &[Vec<f64>]) -> f64 {
    got.featurizer
        .iter()
        .chain(&got.classifier)
        .zip(want)
        .flat_map(|(b, w)| b.values.iter().zip(w).map(|(x, y)| (x - y).abs()))
        .fold(0.0, f64::max)
}

fn c1_merge_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let models = random_family(&mut rng);
        let refs: Vec<&Checkpoint> = models.iter().collect();
        let raw: Vec<f64> = (0..models.len()).map(|_| rng.random_range(0.05..1.0)).collect();
        let total: f64 = raw.iter().sum();
        let lambdas: Vec<f64> = raw.iter().map(|r| r / total).collect();
        let lambda: f64 = rng.random_range(0.0..=1.0);

        let avg = merge::average_weights(
            &refs,
            &MergeWeights {
                lambdas: lambdas.clone(),
            },
        )
        .map_err(fail)?;
        worst = worst.max(max_dev(&avg, &brute_force(&refs, &lambdas)));

        let (a, b) = (&models[0], &models[1]);
        let two = merge::interpolate(a, b, lambda).map_err(fail)?;
        worst = worst.max(max_dev(&two, &brute_force(&[a, b], &[1.0 - lambda, lambda])));
        let w = merge::wise(a, b, lambda).map_err(fail)?;
        worst = worst.max(max_dev(&w, &brute_force(&[a, b], &[1.0 - lambda, lambda])));

        let c = &models[models.len() - 1];
        let h = (1.0 - lambda) / 2.0;
        let three = merge::interpolate3(a, b, c, lambda).map_err(fail)?;
        worst = worst.max(max_dev(&three, &brute_force(&[a, b, c], &[h, h, lambda])));
    }
    check(worst <= 1e-12, format!("100 sets, max deviation {worst:.2e}"))
}

// ---------------------------------------------------------------- 2

fn loss_at(base: &Checkpoint, flat: &[f64], data: &Dataset, wd: f64) -> f64 {
    let mut c = base.clone();
    let mut k = 0;
    for b in c.blocks_mut() {
        for v in &mut b.values {
            *v = flat[k];
            k += 1;
        }
    }
    nn::loss_and_grad(&c, data, wd, Mode::Eval).unwrap().0
}

fn c2_gradients() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst: f64 = 0.0;
    let mut nets = 0;
    while nets < 20 {
        let input_dim = rng.random_range(2..=5);
        let hidden: Vec<usize> = (0..rng.random_range(1..=2)).map(|_| rng.random_range(2..=6)).collect();
        let num_classes = rng.random_range(2..=4);
        let spec = NetSpec {
            input_dim,
            hidden,
            num_classes,
            dropout: 0.0,
        };
        let mut params = nn::init_params(&spec, rng.random()).map_err(fail)?;
        if params.num_params() > 200 {
            continue;
        }
        // move biases off zero so no sample sits on a ReLU kink
        for b in params.blocks_mut() {
            b.values.iter_mut().for_each(|v| *v += rng.random_range(-0.3..0.3));
        }
        let n = rng.random_range(3..=8);
        let features = (0..n * input_dim).map(|_| rng.random_range(-2.0..2.0)).collect();
        let labels = (0..n).map(|_| rng.random_range(0..num_classes)).collect();
        let data = Dataset::new(input_dim, features, labels).map_err(fail)?;
        let wd = rng.random_range(0.0..1e-2);
        let (_, grads) = nn::loss_and_grad(&params, &data, wd, Mode::Eval).map_err(fail)?;
        let analytic: Vec<f64> = grads
            .featurizer
            .iter()
            .chain(&grads.classifier)
            .flatten()
            .copied()
            .collect();
        let flat = params.flat_values();
        let h = 1e-5;
        for k in 0..flat.len() {
            let mut p = flat.clone();
            p[k] += h;
            let up = loss_at(&params, &p, &data, wd);
            p[k] -= 2.0 * h;
            let down = loss_at(&params, &p, &data, wd);
            let numeric = (up - down) / (2.0 * h);
            let denom = numeric.abs().max(analytic[k].abs()).max(1e-8);
            worst = worst.max((numeric - analytic[k]).abs() / denom);
        }
        nets += 1;
    }
    check(worst < 1e-4, format!("20 nets, max relative error {worst:.2e}"))
}

// ---------------------------------------------------------------- 3

/// Runs whose best checkpoints are one-hot vectors, so a uniform average
/// reveals exactly which runs it contains.
fn indicator_runs(accs: &[f64]) -> Vec<RunResult> {
    let n = accs.len();
    accs.iter()
        .enumerate()
        .map(|(i, &a)| {
            let mut v = vec![0.0; n];
            v[i] = 1.0;
            let ckpt = Checkpoint::new(
                vec![ParamBlock::new("f", vec![n], v).unwrap()],
                vec![ParamBlock::new("h", vec![1], vec![0.0]).unwrap()],
                Lineage::new("stub"),
                0,
            )
            .unwrap();
            RunResult::from_trajectory(
                vec![Snapshot {
                    step: 1,
                    checkpoint: ckpt,
                    id_val_acc: a,
                }],
                HyperParams::default(),
            )
            .unwrap()
        })
        .collect()
}

fn members(c: &Checkpoint) -> Vec<usize> {
    c.featurizer[0]
        .values
        .iter()
        .enumerate()
        .filter(|(_, v)| **v > 0.0)
        .map(|(i, _)| i)
        .collect()
}

fn c3_greedy() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for scenario in 0..50 {
        let n = rng.random_range(1..=6);
        let accs: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
        let table: Vec<f64> = (0..1usize << n).map(|_| rng.random_range(0.0..1.0)).collect();
        let score = |c: &Checkpoint| table[members(c).iter().fold(0, |m, i| m | (1 << i))];
        let runs = indicator_runs(&accs);
        let (model, _) = merge::greedy_soup(&runs, |c| Ok(score(c))).map_err(fail)?;
        let top = (0..n)
            .max_by(|&i, &j| accs[i].total_cmp(&accs[j]).then(j.cmp(&i)))
            .unwrap();
        if score(&model) < table[1 << top] {
            return Err(format!("scenario {scenario}: greedy scored below its top candidate"));
        }
    }
    // candidates 1, 2, 3 ranked in that order by ID-val accuracy
    let runs = indicator_runs(&[0.95, 0.94, 0.93]);
    let (model, report) = merge::greedy_soup(&runs, |c| {
        Ok(match members(c).as_slice() {
            [0] => 0.90,
            [0, 1] => 0.92,
            [0, 1, 2] => 0.91,
            other => panic!("unexpected candidate set {other:?}"),
        })
    })
    .map_err(fail)?;
    check(
        report.accepted == [0, 1] && members(&model) == [0, 1] && report.final_id_val_acc == 0.92,
        format!(
            "50 scenarios hold; scripted example accepted {:?}, final {}",
            report.accepted, report.final_id_val_acc
        ),
    )
}

// ---------------------------------------------------------------- 4

fn c4_diversity_formulas() -> Outcome {
    // (n11, n10, n01, n00) and 1 - Q as an exact fraction
    type Counts = (u64, u64, u64, u64);
    let tables: [(Counts, Option<(u64, u64)>); 13] = [
        ((3, 2, 2, 1), Some((8, 7))),
        ((5, 0, 0, 5), Some((0, 1))),
        ((0, 3, 3, 0), Some((2, 1))),
        ((4, 1, 1, 4), Some((2, 17))),
        ((2, 2, 2, 2), Some((1, 1))),
        ((10, 1, 2, 3), Some((1, 8))),
        ((1, 1, 1, 1), Some((1, 1))),
        ((6, 3, 2, 1), Some((1, 1))),
        ((7, 0, 3, 2), Some((0, 1))),
        ((9, 2, 4, 5), Some((16, 53))),
        ((8, 5, 3, 2), Some((30, 31))),
        ((1, 4, 3, 0), Some((2, 1))),
        ((0, 0, 4, 4), None),
    ];
    for ((n11, n10, n01, n00), want) in tables {
        // predictions realizing the table: label 0 throughout, 1 means wrong
        let mut a = Vec::new();
        let mut b = Vec::new();
        for (count, pa, pb) in [(n11, 0, 0), (n10, 0, 1), (n01, 1, 0), (n00, 1, 1)] {
            a.extend(std::iter::repeat_n(pa, count as usize));
            b.extend(std::iter::repeat_n(pb, count as usize));
        }
        let labels = vec![0; a.len()];
        let c = contingency(&a, &b, &labels).map_err(fail)?;
        if c != ContingencyCounts::new(n11, n10, n01, n00) {
            return Err(format!("contingency of {:?} gave {c:?}", (n11, n10, n01, n00)));
        }
        match (q_diversity(&c), want) {
            (Ok(q), Some((num, den))) if q == num as f64 / den as f64 => {}
            (Err(Error::QUndefined), None) => {}
            (got, _) => {
                return Err(format!(
                    "table {:?}: q_diversity {got:?}, want {want:?}",
                    (n11, n10, n01, n00)
                ))
            }
        }
    }
    if ratio_error_diversity(&ContingencyCounts::new(3, 2, 2, 1)).map_err(fail)? != 4.0 {
        return Err("ratio-error of (3,2,2,1) is not 4".into());
    }

    let mut runner = TestRunner::new(PropConfig {
        cases: 256,
        ..PropConfig::default()
    });
    let strategy = (1usize..60).prop_flat_map(|n| {
        (
            collection::vec(0usize..4, n),
            collection::vec(0usize..4, n),
            collection::vec(0usize..4, n),
        )
    });
    runner
        .run(&strategy, |(a, b, y)| {
            let c = contingency(&a, &b, &y).unwrap();
            prop_assert_eq!(c.total() as usize, y.len());
            Ok(())
        })
        .map_err(|e| format!("count property: {e}"))?;
    Ok("13 enumerated tables exact, counts sum to n over 256 cases".into())
}

// ---------------------------------------------------------------- 5-8, 11

fn default_cfg() -> ProtocolConfig {
    ProtocolConfig::default()
}

fn seeded_count<F>(n: u64, spec: &SuiteSpec, mut f: F) -> Result<usize, String>
where
    F: FnMut(&ratatouille::bench::SyntheticSuite, u64, usize) -> Result<bool, String>,
{
    let mut count = 0;
    for s in 0..n {
        let suite = gen_synthetic_suite(spec, s).map_err(fail)?;
        let d = (s % spec.num_domains as u64) as usize;
        count += f(&suite, s, d)? as usize;
    }
    Ok(count)
}

fn c5_trajectory_lmc() -> Outcome {
    let cfg = default_cfg();
    let holds = seeded_count(10, &SuiteSpec::default(), |suite, s, d| {
        Ok(lmc_holds(&trajectory_lmc(suite, &cfg, s, d).map_err(fail)?, 0.02))
    })?;
    check(holds >= 8, format!("LMC holds in {holds}/10 seeds (need >= 8)"))
}

fn c6_cross_aux_lmc() -> Outcome {
    let cfg = default_cfg();
    let related = SuiteSpec::default();
    if related.aux_relatedness[..2].iter().any(|&r| r < 0.7) {
        return Err("default suite's first two auxiliary tasks are not related".into());
    }
    let holds = seeded_count(10, &related, |suite, s, d| {
        Ok(lmc_holds(&cross_aux_lmc(suite, &cfg, s, d).map_err(fail)?, 0.02))
    })?;
    let unrelated = SuiteSpec {
        aux_relatedness: vec![0.0, 0.0],
        domain_shift: 2.0,
        ..SuiteSpec::default()
    };
    let violations = seeded_count(10, &unrelated, |suite, s, d| {
        Ok(!lmc_holds(&cross_aux_lmc(suite, &cfg, s, d).map_err(fail)?, 0.02))
    })?;
    check(
        holds >= 8 && violations >= 2,
        format!("related: holds {holds}/10 (need >= 8); unrelated, shift 2: violated {violations}/10 (need >= 2)"),
    )
}

fn c7_diversity_ordering() -> Outcome {
    let cfg = default_cfg();
    let wins = seeded_count(10, &SuiteSpec::default(), |suite, s, d| {
        let (same, cross) = diversity_by_initialization(suite, &cfg, s, d).map_err(fail)?;
        Ok(cross > same)
    })?;
    check(wins >= 8, format!("cross > same in {wins}/10 seeds (need >= 8)"))
}

fn mean_ood(rows: &[ResultRow], strategy: &str) -> f64 {
    let v: Vec<f64> = rows
        .iter()
        .filter(|r| r.strategy == strategy && r.selection == "uniform")
        .map(|r| r.ood_acc)
        .collect();
    v.iter().sum::<f64>() / v.len() as f64
}

/// Per-repetition (soups, ratatouille) mean OOD accuracy over all held-out domains.
fn table_analog(spec: &SuiteSpec) -> Result<Vec<(f64, f64)>, String> {
    (0..20u64)
        .map(|s| {
            let suite = gen_synthetic_suite(spec, s).map_err(fail)?;
            let cfg = ProtocolConfig {
                runs: 8,
                seeds: vec![s],
                strategies: vec![Strategy::SoupsUniform, Strategy::RatatouilleUniform],
                ..default_cfg()
            };
            let rows = run_protocol(&suite, &cfg).map_err(fail)?;
            Ok((mean_ood(&rows, "model-soups"), mean_ood(&rows, "ratatouille")))
        })
        .collect()
}

fn c8_table_analog() -> Outcome {
    let related = table_analog(&SuiteSpec::default())?;
    let mean = |v: &[(f64, f64)], pick: fn(&(f64, f64)) -> f64| v.iter().map(pick).sum::<f64>() / v.len() as f64;
    let (soups, rat) = (mean(&related, |p| p.0), mean(&related, |p| p.1));
    let strict = related.iter().filter(|(a, b)| b > a).count();

    let unrelated = table_analog(&SuiteSpec {
        aux_relatedness: vec![0.0; 3],
        ..SuiteSpec::default()
    })?;
    let within = unrelated.iter().filter(|(a, b)| (b - a).abs() <= 0.015).count();
    check(
        rat >= soups && strict >= 12 && within >= 16,
        format!(
            "related: ratatouille {rat:.4} vs soups {soups:.4}, better in {strict}/20 (need >= 12); \
             unrelated: within 1.5 points in {within}/20 (need >= 16)"
        ),
    )
}

fn c11_mixing_ratio() -> Outcome {
    let cfg = default_cfg();
    let spec = SuiteSpec::default();
    let domains: Vec<usize> = (0..spec.num_domains).collect();
    let mus = [0.0, 0.25, 0.5, 0.75, 1.0];
    let interior = seeded_count(10, &spec, |suite, s, _| {
        let curve =
            average_curves(&mixing_ratio(suite, &cfg, s, &domains, cfg.runs, &mus, 10).map_err(fail)?).map_err(fail)?;
        let inner = curve[1..4].iter().map(|p| p.mean_acc).fold(f64::NEG_INFINITY, f64::max);
        Ok(inner >= curve[0].mean_acc.max(curve[4].mean_acc))
    })?;
    check(
        interior >= 6,
        format!("interior maximum in {interior}/10 seeds (need >= 6)"),
    )
}

// ---------------------------------------------------------------- 9

fn tiny_spec() -> SuiteSpec {
    SuiteSpec {
        feature_dim: 6,
        num_classes: 3,
        samples_per_domain: 40,
        aux_relatedness: vec![0.9, 0.5],
        aux_domains: 2,
        aux_samples_per_domain: 40,
        pretrain_classes: 4,
        pretrain_domains: 2,
        pretrain_samples_per_domain: 50,
        ..SuiteSpec::default()
    }
}

fn hp(steps: usize, seed: u64) -> HyperParams {
    HyperParams {
        lr: 1e-2,
        batch_size: 16,
        steps,
        eval_every: 10,
        seed,
        ..HyperParams::default()
    }
}

fn tiny_cfg() -> ProtocolConfig {
    ProtocolConfig {
        hidden: vec![8],
        pretrain: hp(60, 0),
        aux: hp(30, 0),
        probe: hp(20, 0),
        search: HyperParamDistribution {
            steps: 30,
            eval_every: 10,
            ..HyperParamDistribution::default()
        },
        runs: 3,
        aux_freeze_steps: 5,
        seeds: vec![11],
        strategies: vec![Strategy::SoupsUniform, Strategy::RatatouilleUniform],
        ..ProtocolConfig::default()
    }
}

fn bits(c: &Checkpoint) -> Vec<u64> {
    c.flat_values().iter().map(|v| v.to_bits()).collect()
}

fn c9_degenerations() -> Outcome {
    let suite = gen_synthetic_suite(&tiny_spec(), 5).map_err(fail)?;
    let cfg = tiny_cfg();
    let pre = pretrain(&suite, &cfg, 11).map_err(fail)?;
    let (target, _) = suite.target.leave_one_out(0, 77).map_err(fail)?;
    let runs: Vec<HyperParams> = (0..3).map(|j| hp(30, 100 + j)).collect();

    let rcfg = RatatouilleConfig {
        probe: hp(20, 9),
        aux: vec![],
        runs: runs.clone(),
        selection: Selection::Uniform,
        aux_freeze_steps: 5,
        carrier: Carrier::Best,
    };
    let outcome = merge::ratatouille(&pre, &[], &target, &rcfg).map_err(fail)?;
    let probe = trainer::linear_probe(&pre.featurizer, &target, &rcfg.probe).map_err(fail)?;
    let init = merge::swap_classifier(&pre, &probe).map_err(fail)?;
    let soup_runs = runs
        .iter()
        .map(|h| trainer::fine_tune(&init, &target, h))
        .collect::<Result<Vec<_>, _>>()
        .map_err(fail)?;
    let soup = merge::uniform_soup(&soup_runs).map_err(fail)?;
    if bits(&outcome.model) != bits(&soup) {
        return Err("standalone ratatouille without auxiliary tasks differs from the soup".into());
    }

    let full = run_protocol(&suite, &cfg).map_err(fail)?;
    let capped = run_protocol(
        &suite,
        &ProtocolConfig {
            max_aux: Some(0),
            ..cfg.clone()
        },
    )
    .map_err(fail)?;
    let pick = |rows: &[ResultRow], s: &str| -> Vec<u64> {
        rows.iter()
            .filter(|r| r.strategy == s)
            .map(|r| r.ood_acc.to_bits())
            .collect()
    };
    if pick(&capped, "ratatouille") != pick(&full, "model-soups") {
        return Err("protocol ratatouille with zero auxiliary tasks differs from soups".into());
    }

    let same = trainer::inter_train(&pre, &[], &[]).map_err(fail)?;
    if bits(&same) != bits(&pre) {
        return Err("inter-training on an empty chain changed the weights".into());
    }
    let ft = &soup_runs[0].best().clone();
    let w0 = merge::wise(ft, &init, 0.0).map_err(fail)?;
    let w1 = merge::wise(ft, &init, 1.0).map_err(fail)?;
    check(
        bits(&w0) == bits(ft) && bits(&w1) == bits(&init),
        "zero-aux ratatouille == soups (standalone and protocol), empty chain and WiSE endpoints exact".into(),
    )
}

// ---------------------------------------------------------------- 10

const BIN: &str = env!("CARGO_BIN_EXE_ratatouille");

fn cli(args: &[&str], config: &Path) -> Result<std::process::Output, String> {
    Command::new(BIN)
        .args(args)
        .arg("--config")
        .arg(config)
        .output()
        .map_err(fail)
}

fn c10_determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(fail)?;
    let d = dir.path();
    let bench = serde_json::json!({
        "seed": 21,
        "suite": serde_json::to_value(tiny_spec()).unwrap(),
        "protocol": {
            "hidden": [8],
            "pretrain": {"lr": 1e-2, "batch_size": 16, "steps": 60, "eval_every": 10},
            "aux": {"lr": 1e-2, "batch_size": 16, "steps": 30, "eval_every": 10},
            "probe": {"lr": 1e-2, "batch_size": 16, "steps": 20, "eval_every": 10},
            "search": {"lr": [1e-2, 3e-3], "batch_size": [16], "dropout": [0.0, 0.1], "weight_decay": [0.0], "steps": 30, "eval_every": 10},
            "runs": 3,
            "aux_freeze_steps": 5
        }
    });
    let cfg_path = d.join("bench.json");
    std::fs::write(&cfg_path, bench.to_string()).map_err(fail)?;
    let mut csvs = Vec::new();
    for (i, threads) in ["1", "2"].iter().enumerate() {
        let out = d.join(format!("run{i}"));
        let res = cli(
            &["bench", "--threads", threads, "--out", out.to_str().unwrap()],
            &cfg_path,
        )?;
        if !res.status.success() {
            return Err(format!("bench failed: {}", String::from_utf8_lossy(&res.stderr)));
        }
        csvs.push(std::fs::read(out.join("results.csv")).map_err(fail)?);
    }
    if csvs[0] != csvs[1] {
        return Err("repeated bench runs wrote different CSV bytes".into());
    }

    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let models = random_family(&mut rng);
    let ckpt_path = d.join("m.rata");
    ratatouille::save_checkpoint(&models[0], &ckpt_path).map_err(fail)?;
    let back = ratatouille::load_checkpoint(&ckpt_path).map_err(fail)?;
    if back != models[0] || bits(&back) != bits(&models[0]) {
        return Err("checkpoint round trip is not bit-exact".into());
    }

    let good = std::fs::read(&ckpt_path).map_err(fail)?;
    let mut corrupt: Vec<(&str, Vec<u8>)> = Vec::new();
    let mut magic = good.clone();
    magic[0] = b'X';
    corrupt.push(("bad magic", magic));
    let mut version = good.clone();
    version[4] = 9;
    corrupt.push(("bad version", version));
    corrupt.push(("truncated", good[..good.len() - 3].to_vec()));
    let mut nan = good.clone();
    let n = nan.len();
    nan[n - 8..].copy_from_slice(&f64::NAN.to_le_bytes());
    corrupt.push(("non-finite value", nan));

    let mut codes = Vec::new();
    for (name, bytes) in &corrupt {
        let path = d.join("corrupt.rata");
        std::fs::write(&path, bytes).map_err(fail)?;
        let merge_cfg = d.join("merge.json");
        let cfg = serde_json::json!({"seed": 1, "output_dir": d.join("m"), "strategy": "uniform", "inputs": [path]});
        std::fs::write(&merge_cfg, cfg.to_string()).map_err(fail)?;
        let code = cli(&["merge"], &merge_cfg)?.status.code();
        if code != Some(3) {
            return Err(format!("{name}: exit {code:?}, want 3"));
        }
        codes.push(3);
    }
    let missing = cli(&["gen"], &d.join("absent.json"))?.status.code();
    check(
        missing == Some(4),
        format!(
            "bench CSV byte-identical, round trip bit-exact, {} corruptions exit 3, missing file exit {}",
            codes.len(),
            missing.map_or("none".into(), |c| c.to_string())
        ),
    )
}

// ----------------------------------------------------------------

fn main() {
    let criteria: [Criterion; 11] = [
        (1, "merge oracle", c1_merge_oracle, 5),
        (2, "gradient check", c2_gradients, 10),
        (3, "greedy soup invariant", c3_greedy, 60),
        (4, "diversity formulas", c4_diversity_formulas, 60),
        (5, "trajectory mode connectivity", c5_trajectory_lmc, 60),
        (6, "cross-auxiliary mode connectivity", c6_cross_aux_lmc, 180),
        (7, "diversity by initialization", c7_diversity_ordering, 120),
        (8, "ratatouille vs soups", c8_table_analog, 900),
        (9, "degeneration identities", c9_degenerations, 120),
        (10, "determinism and serialization", c10_determinism, 300),
        (11, "mixing ratio shape", c11_mixing_ratio, 300),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (id, name, run, budget) in criteria {
        if !filter.is_empty() && !filter.iter().any(|f| f == &id.to_string()) {
            continue;
        }
        let start = Instant::now();
        let result = run();
        let elapsed = start.elapsed();
        let over = elapsed > Duration::from_secs(budget);
        let (status, detail) = match (&result, over) {
            (Ok(d), false) => ("PASS", d.clone()),
            (Ok(d), true) => ("FAIL", format!("{d}; exceeded {budget}s budget")),
            (Err(d), _) => ("FAIL", d.clone()),
        };
        if status == "FAIL" {
            failed += 1;
        }
        println!(
            "criterion {id:>2} {status} [{name}] {detail} ({:.1}s)",
            elapsed.as_secs_f64()
        );
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
