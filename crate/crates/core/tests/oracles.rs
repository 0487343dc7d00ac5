//! Weight-space operations and gradients checked against independent
//! reference computations.

use proptest::prelude::*;

use ratatouille::merge::{self, average_weights, interpolate, interpolate3, uniform_soup, wise, MergeWeights};
use ratatouille::nn::{self, Mode, NetSpec};
use ratatouille::trainer::Snapshot;
use ratatouille::{Checkpoint, Dataset, HyperParams, Lineage, ParamBlock, RunResult};

fn ckpt(feat: &[Vec<f64>], head: &[Vec<f64>]) -> Checkpoint {
    let blocks = |prefix: &str, vals: &[Vec<f64>]| {
        vals.iter()
            .enumerate()
            .map(|(i, v)| ParamBlock::new(format!("{prefix}{i}"), vec![v.len()], v.clone()).unwrap())
            .collect::<Vec<_>>()
    };
    Checkpoint::new(blocks("f", feat), blocks("h", head), Lineage::new("test"), 0).unwrap()
}

fn family(n: usize) -> impl Strategy<Value = Vec<Checkpoint>> {
    (1usize..4, 1usize..5).prop_flat_map(move |(blocks, width)| {
        prop::collection::vec(
            prop::collection::vec(prop::collection::vec(-10.0f64..10.0, width), blocks + 1),
            n,
        )
        .prop_map(move |sets| {
            sets.iter()
                .map(|s| ckpt(&s[..blocks], &s[blocks..]))
                .collect::<Vec<_>>()
        })
    })
}

fn oracle(models: &[&Checkpoint], coeffs: &[f64]) -> Vec<f64> {
    let flat: Vec<Vec<f64>> = models.iter().map(|m| m.flat_values()).collect();
    (0..flat[0].len())
        .map(|k| flat.iter().zip(coeffs).map(|(v, c)| c * v[k]).sum())
        .collect()
}

fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
}

proptest! {
    #[test]
    fn average_matches_oracle(models in family(4), raw in prop::collection::vec(0.01f64..1.0, 4)) {
        let total: f64 = raw.iter().sum();
        let lambdas: Vec<f64> = raw.iter().map(|r| r / total).collect();
        let refs: Vec<&Checkpoint> = models.iter().collect();
        let got = average_weights(&refs, &MergeWeights { lambdas: lambdas.clone() }).unwrap();
        prop_assert!(close(&got.flat_values(), &oracle(&refs, &lambdas), 1e-12));
    }

    #[test]
    fn average_is_permutation_invariant(models in family(3), raw in prop::collection::vec(0.01f64..1.0, 3)) {
        let total: f64 = raw.iter().sum();
        let l: Vec<f64> = raw.iter().map(|r| r / total).collect();
        let a = average_weights(&[&models[0], &models[1], &models[2]], &MergeWeights { lambdas: l.clone() }).unwrap();
        let b = average_weights(&[&models[2], &models[0], &models[1]], &MergeWeights { lambdas: vec![l[2], l[0], l[1]] }).unwrap();
        prop_assert!(close(&a.flat_values(), &b.flat_values(), 1e-12));
    }

    #[test]
    fn interpolations_match_oracle(models in family(3), lambda in 0.0f64..=1.0) {
        let (a, b, c) = (&models[0], &models[1], &models[2]);
        let two = interpolate(a, b, lambda).unwrap();
        prop_assert!(close(&two.flat_values(), &oracle(&[a, b], &[1.0 - lambda, lambda]), 1e-12));
        let linear: Vec<f64> = a.flat_values().iter().zip(b.flat_values()).map(|(x, y)| x + lambda * (y - x)).collect();
        prop_assert!(close(&two.flat_values(), &linear, 1e-12));
        let swapped = interpolate(b, a, 1.0 - lambda).unwrap();
        prop_assert!(close(&two.flat_values(), &swapped.flat_values(), 1e-12));
        let three = interpolate3(a, b, c, lambda).unwrap();
        let h = (1.0 - lambda) / 2.0;
        prop_assert!(close(&three.flat_values(), &oracle(&[a, b, c], &[h, h, lambda]), 1e-12));
        let w = wise(a, b, lambda).unwrap();
        prop_assert_eq!(w.flat_values(), two.flat_values());
    }

    #[test]
    fn soup_of_copies_is_identity(models in family(1), n in 1usize..6) {
        let runs: Vec<RunResult> = (0..n)
            .map(|_| RunResult::from_trajectory(
                vec![Snapshot { step: 1, checkpoint: models[0].clone(), id_val_acc: 0.5 }],
                HyperParams::default(),
            ).unwrap())
            .collect();
        let soup = uniform_soup(&runs).unwrap();
        prop_assert!(close(&soup.flat_values(), &models[0].flat_values(), 1e-15));
    }

    /// Greedy acceptance never lowers the score of the top candidate.
    #[test]
    fn greedy_never_below_best_candidate(
        accs in prop::collection::vec(0.0f64..1.0, 1..7),
        table in prop::collection::vec(0.0f64..1.0, 128),
    ) {
        let n = accs.len();
        let runs: Vec<RunResult> = accs
            .iter()
            .enumerate()
            .map(|(i, &a)| {
                let mut v = vec![0.0; n];
                v[i] = 1.0;
                RunResult::from_trajectory(
                    vec![Snapshot { step: 1, checkpoint: ckpt(&[v], &[vec![0.0]]), id_val_acc: a }],
                    HyperParams::default(),
                ).unwrap()
            })
            .collect();
        // Score depends only on which runs are in the average.
        let score = |c: &Checkpoint| {
            let mask = c.featurizer[0].values.iter().enumerate()
                .filter(|(_, v)| **v > 0.0)
                .fold(0usize, |m, (i, _)| m | (1 << i));
            table[mask]
        };
        let (model, report) = merge::greedy_soup(&runs, |c| Ok(score(c))).unwrap();
        let top = report.candidate_order[0];
        prop_assert_eq!(report.accepted[0], top);
        prop_assert!(score(&model) >= table[1 << top]);
        prop_assert_eq!(score(&model), report.final_id_val_acc);
    }
}

/// Loss as a function of one flat parameter vector.
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

#[test]
fn gradients_match_central_differences() {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
    for trial in 0..5 {
        let spec = NetSpec {
            input_dim: 3,
            hidden: vec![4, 3],
            num_classes: 3,
            dropout: 0.0,
        };
        let mut params = nn::init_params(&spec, trial).unwrap();
        // zero biases put dead-unit samples exactly on a ReLU kink
        for b in params.blocks_mut() {
            b.values.iter_mut().for_each(|v| *v += rng.random_range(-0.3..0.3));
        }
        let n = 6;
        let features: Vec<f64> = (0..n * 3).map(|_| rng.random_range(-2.0..2.0)).collect();
        let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..3)).collect();
        let data = Dataset::new(3, features, labels).unwrap();
        let (_, grads) = nn::loss_and_grad(&params, &data, 1e-3, Mode::Eval).unwrap();
        let analytic: Vec<f64> = grads
            .featurizer
            .iter()
            .chain(&grads.classifier)
            .flatten()
            .copied()
            .collect();
        let flat = params.flat_values();
        for k in 0..flat.len() {
            let h = 1e-5;
            let mut p = flat.clone();
            p[k] += h;
            let up = loss_at(&params, &p, &data, 1e-3);
            p[k] -= 2.0 * h;
            let down = loss_at(&params, &p, &data, 1e-3);
            let numeric = (up - down) / (2.0 * h);
            let err = (numeric - analytic[k]).abs() / numeric.abs().max(analytic[k].abs()).max(1e-8);
            assert!(
                err < 1e-4 || (numeric - analytic[k]).abs() < 1e-9,
                "param {k}: {numeric} vs {}",
                analytic[k]
            );
        }
    }
}
