//! Acceptance suite. Each criterion prints one PASS/FAIL line; the process
//! exits non-zero if any criterion fails or overruns its time budget.

use std::collections::HashMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use fisel::checkpoint::Container;
use fisel::data::{
    generate_synthetic, split_samples, EncodedSample, LogBase, SyntheticConfig, SyntheticData, Vocabulary,
};
use fisel::metrics::{auc, keep_ratio};
use fisel::model::{logloss, FieldTuples, ModelConfig, ModelParams, Operation};
use fisel::ndcore::{
    finite_diff_grad, guard, sigmoid, sigmoid_grad, ste_vjp, step, DenseMatrix, Linear, Mlp,
};
use fisel::selection::{
    dense_reconstruct_oracle, freeze_selection, selection_param_count, FrozenSelection, GateNet, Grain,
    MaskSource, SelectionConfig, SelectionGrads, SelectionParams, DENSE_ORACLE_LIMIT,
};
use fisel::trainer::{run_baseline, run_retrain, run_search, Dataset, Session, TrainConfig};

type Criterion = (&'static str, u64, fn() -> Verdict);

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("ste contract", 1, ste_contract),
        ("decomposition oracle", 5, decomposition_oracle),
        ("general order oracle", 10, general_order_oracle),
        ("gradient fidelity", 30, gradient_fidelity),
        ("grain reductions", 10, grain_reductions),
        ("baseline equivalence", 120, baseline_equivalence),
        ("synthetic recovery", 600, synthetic_recovery),
        ("auc oracle", 10, auc_oracle),
        ("complexity", 60, complexity),
        ("determinism and persistence", 300, determinism_and_persistence),
    ];
    let mut failed = 0;
    for (i, (name, limit, f)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let v = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            verdict(false, format!("panicked: {msg}"))
        });
        let took = start.elapsed();
        let in_time = took <= Duration::from_secs(*limit);
        let ok = v.pass && in_time;
        if !ok {
            failed += 1;
        }
        println!(
            "criterion {:2} {} {}: {} [{:.2}s of {}s]",
            i + 1,
            if ok { "PASS" } else { "FAIL" },
            name,
            v.detail,
            took.as_secs_f64(),
            limit
        );
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}

fn random_selection(sizes: &[usize], d_hat: usize, d_prime: usize, order: usize, seed: u64) -> SelectionParams {
    let cfg = SelectionConfig {
        d_hat,
        d_prime,
        order,
        ..SelectionConfig::default()
    };
    let mut s = SelectionParams::init(cfg, sizes, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    s.value_net.table.value = DenseMatrix::uniform(s.n_values(), d_hat, 2.0, &mut rng);
    s.value_net.sigma.value = DenseMatrix::uniform(1, d_prime, 2.0, &mut rng);
    s.field_net.sigma.value = DenseMatrix::uniform(1, d_prime, 2.0, &mut rng);
    s.alpha.value = DenseMatrix::uniform(1, s.tuples().len(), 2.0, &mut rng);
    s
}

fn random_samples(sizes: &[usize], count: usize, seed: u64) -> Vec<EncodedSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let mut offset = 0;
            let value_ids = sizes
                .iter()
                .map(|&k| {
                    let id = offset + rng.random_range(0..k);
                    offset += k;
                    id
                })
                .collect();
            EncodedSample {
                value_ids,
                label: rng.random_range(0..2),
            }
        })
        .collect()
}

/// Field-level frozen selection that keeps exactly the tuples flagged in
/// `keep`. Field `i` is embedded as its row of the field/pair incidence
/// matrix, so the logit of pair `q` is its own core entry `±1`.
fn fixed_pattern(sizes: &[usize], keep: &[bool]) -> FrozenSelection {
    let n = sizes.len();
    let tuples = FieldTuples::new(n, 2).unwrap();
    let p = tuples.len();
    let mut table = DenseMatrix::zeros(n, p);
    for (q, t) in tuples.iter().enumerate() {
        for &f in t {
            table.set(f, q, 1.0);
        }
    }
    let sigma = DenseMatrix::from_vec(1, p, keep.iter().map(|&k| if k { 1.0 } else { -1.0 }).collect()).unwrap();
    let identity = || Mlp {
        layers: vec![Linear::from_parts(DenseMatrix::identity(p), None).unwrap()],
    };
    let field = GateNet::from_parts(table, identity(), sigma.clone()).unwrap();
    let value = GateNet::from_parts(DenseMatrix::zeros(sizes.iter().sum(), p), identity(), sigma).unwrap();
    let cfg = SelectionConfig {
        d_hat: p,
        d_prime: p,
        hidden: Some(vec![]),
        bias: false,
        order: 2,
        grain: Grain::Field,
        sigma_init: 1.0,
    };
    FrozenSelection::from_parts(cfg, sizes, vec![true; p], value, field).unwrap()
}

fn synthetic(seed: u64, n_samples: usize) -> (SyntheticData, Vocabulary, Dataset) {
    let synth = generate_synthetic(&SyntheticConfig {
        n_fields: 6,
        values_per_field: 10,
        n_samples,
        planted_pairs: vec![(0, 1), (2, 3), (1, 4)],
        noise: 0.5,
        seed,
    })
    .unwrap();
    let (vocab, data) =
        Dataset::from_rows(&synth.schema, synth.rows.clone(), [0.8, 0.1, 0.1], seed, 1, LogBase::default()).unwrap();
    (synth, vocab, data)
}

fn ste_contract() -> Verdict {
    let special = [0.0, -0.0, 1e-300, -1e-300, 5e-324, f64::MIN_POSITIVE, 1.0, -1.0, f64::INFINITY, f64::NEG_INFINITY];
    let forward_ok = step(0.0) == 0.0
        && step(-0.0) == 0.0
        && special.iter().all(|&x| step(x) == if x > 0.0 { 1.0 } else { 0.0 });
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut values: Vec<f64> = (0..10_000).map(|_| rng.random_range(-1e3..1e3)).collect();
    values.extend(special);
    values.push(f64::NAN);
    let n = values.len();
    let upstream = DenseMatrix::from_vec(1, n, values).unwrap();
    let back = ste_vjp(&upstream);
    let bitwise = upstream
        .as_slice()
        .iter()
        .zip(back.as_slice())
        .all(|(a, b)| a.to_bits() == b.to_bits());
    verdict(
        forward_ok && bitwise,
        format!("S(0)=0 and unit step: {forward_ok}; backward bitwise identity on {n} values: {bitwise}"),
    )
}

fn decomposition_oracle() -> Verdict {
    let s = random_selection(&[10, 10], 4, 6, 2, 20);
    let m = s.n_values();
    let dense = dense_reconstruct_oracle(&s.value_net, 2, DENSE_ORACLE_LIMIT).unwrap();
    let (mut err, mut asym) = (0.0f64, 0.0f64);
    for a in 0..m {
        for b in 0..m {
            asym = asym.max((dense[a * m + b] - dense[b * m + a]).abs());
            if s.field_of(a) != s.field_of(b) {
                err = err.max((s.value_gate_logit(a, b).unwrap() - dense[a * m + b]).abs());
            }
        }
    }
    verdict(
        m == 20 && err <= 1e-9 && asym <= 1e-12,
        format!("m={m}: max |lookup - dense| {err:.1e}, max asymmetry {asym:.1e}"),
    )
}

fn general_order_oracle() -> Verdict {
    let s = random_selection(&[3, 3, 2], 3, 4, 3, 30);
    let m = s.n_values();
    let dense = dense_reconstruct_oracle(&s.value_net, 3, DENSE_ORACLE_LIMIT).unwrap();
    let (mut err, mut perm_err, mut triples) = (0.0f64, 0.0f64, 0);
    for a in 0..m {
        for b in 0..m {
            for c in 0..m {
                let direct = s.value_net.logit(&[a, b, c]).unwrap();
                err = err.max((direct - dense[(a * m + b) * m + c]).abs());
                let (fa, fb, fc) = (s.field_of(a), s.field_of(b), s.field_of(c));
                if fa != fb && fb != fc && fa != fc {
                    triples += 1;
                    let base = s.general_order_logit(&[a, b, c]).unwrap();
                    err = err.max((base - dense[(a * m + b) * m + c]).abs());
                    for p in [[a, c, b], [b, a, c], [b, c, a], [c, a, b], [c, b, a]] {
                        perm_err = perm_err.max((s.general_order_logit(&p).unwrap() - base).abs());
                    }
                }
            }
        }
    }
    verdict(
        m == 8 && triples > 0 && err <= 1e-9 && perm_err <= 1e-12,
        format!("m={m}: max |lookup - dense| {err:.1e} over all triples, permutation spread {perm_err:.1e} over {triples} cross-field triples"),
    )
}

fn max_rel(a: &DenseMatrix, b: &DenseMatrix) -> f64 {
    a.as_slice()
        .iter()
        .zip(b.as_slice())
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(1e-7))
        .fold(0.0, f64::max)
}

fn gradient_fidelity() -> Verdict {
    // model parameters with the mask held constant
    let cfg = ModelConfig {
        n_fields: 3,
        n_values: 9,
        d: 4,
        hidden: vec![8],
        operation: Operation::Inner,
        order: 2,
    };
    let mut model = ModelParams::init(cfg, 40).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    model.embedding.value = DenseMatrix::uniform(9, 4, 0.5, &mut rng);
    let samples = random_samples(&[3, 3, 3], 6, 42);
    let refs: Vec<&EncodedSample> = samples.iter().collect();
    let labels: Vec<f64> = samples.iter().map(|s| f64::from(s.label)).collect();
    let mask = DenseMatrix::uniform(6, 3, 1.0, &mut rng).map(f64::abs);
    let trace = model.forward(&refs, &mask).unwrap();
    let (g, _) = model.backward(&trace, &labels, 1.0 / 6.0).unwrap();
    let mut acc = model.clone();
    acc.zero_grad();
    acc.accumulate(&g).unwrap();
    let mut model_err = 0.0f64;
    for (k, slot) in acc.slots().iter().enumerate() {
        let fd = finite_diff_grad(
            |p| {
                let mut m = model.clone();
                m.slots_mut()[k].value = p.clone();
                logloss(&m.predict(&refs, &mask).unwrap(), &labels).unwrap()
            },
            &slot.value,
            1e-5,
        );
        model_err = model_err.max(max_rel(&slot.grad, &fd));
    }

    // closed-form mask derivative with respect to the hybrid weights
    let s = random_selection(&[3, 3, 3], 3, 4, 2, 43);
    let batch = random_samples(&[3, 3, 3], 6, 44);
    let brefs: Vec<&EncodedSample> = batch.iter().collect();
    let (_, cache) = s.search_forward(&brefs).unwrap();
    let mut alpha_exact = true;
    for b in 0..6 {
        for q in 0..3 {
            let mut d_mask = DenseMatrix::zeros(6, 3);
            d_mask.set(b, q, 1.0);
            let g = s.search_backward(&cache, &d_mask).unwrap();
            let a = s.alpha.value.get(0, q);
            let expect = sigmoid_grad(a) * (cache.field_bits[q] - cache.value_bits.get(b, q));
            alpha_exact &= g.alpha[q] == expect;
        }
    }

    // gate logits through the identity surrogate
    let c_value = DenseMatrix::uniform(6, 3, 1.0, &mut rng);
    let c_field = DenseMatrix::uniform(1, 3, 1.0, &mut rng);
    let objective = |s: &SelectionParams| {
        let (_, cache) = s.search_forward(&brefs).unwrap();
        let v: f64 = cache.value_logits.as_slice().iter().zip(c_value.as_slice()).map(|(a, b)| a * b).sum();
        let f: f64 = cache.field_logits.iter().zip(c_field.as_slice()).map(|(a, b)| a * b).sum();
        v + f
    };
    let away_from_zero = cache.value_logits.as_slice().iter().all(|l| l.abs() > 1e-3)
        && cache.field_logits.iter().all(|l| l.abs() > 1e-3);
    let (gv, gf) = s.logits_backward(&cache, c_field.as_slice(), &c_value).unwrap();
    let mut gacc = s.clone();
    gacc.zero_grad();
    gacc.accumulate(&SelectionGrads {
        value: gv,
        field: gf,
        alpha: vec![0.0; 3],
    })
    .unwrap();
    let n_value_slots = s.value_net.slots().len();
    let mut gate_err = 0.0f64;
    for k in 0..n_value_slots {
        let fd = finite_diff_grad(
            |p| {
                let mut m = s.clone();
                m.value_net.slots_mut(true)[k].value = p.clone();
                objective(&m)
            },
            &s.value_net.slots()[k].value,
            1e-5,
        );
        gate_err = gate_err.max(max_rel(&gacc.value_net.slots()[k].grad, &fd));
    }
    verdict(
        model_err < 1e-4 && alpha_exact && away_from_zero && gate_err < 1e-4,
        format!(
            "model max rel err {model_err:.1e}; alpha closed form exact: {alpha_exact}; value gate max rel err {gate_err:.1e}"
        ),
    )
}

fn grain_reductions() -> Verdict {
    let sizes = [4, 3, 5];
    let batch = random_samples(&sizes, 40, 50);
    let refs: Vec<&EncodedSample> = batch.iter().collect();

    let mut hybrid = random_selection(&sizes, 3, 4, 2, 51);
    hybrid.alpha.value = DenseMatrix::filled(1, 3, 40.0);
    let mut field = hybrid.clone();
    field.config.grain = Grain::Field;
    let h = hybrid.search_forward(&refs).unwrap().0;
    let f = field.search_forward(&refs).unwrap().0;
    let gap = h
        .as_slice()
        .iter()
        .zip(f.as_slice())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);

    let mut open = random_selection(&sizes, 3, 4, 2, 52);
    open.alpha.value = DenseMatrix::filled(1, 3, 1.0);
    let frozen = freeze_selection(&open);
    let m = frozen.mask(&refs).unwrap();
    let frozen_exact = frozen.alpha_star.iter().all(|&a| a)
        && (0..refs.len()).all(|b| m.row(b) == frozen.field_bits());

    let (_, _, data) = synthetic(53, 2000);
    let cfg = TrainConfig {
        seed: 53,
        max_epochs: 3,
        ..TrainConfig::default()
    };
    let mut cfg = cfg;
    cfg.selection.grain = Grain::Field;
    let out = run_search(&data, &cfg).unwrap();
    let fz = freeze_selection(&out.selection);
    let report = keep_ratio(&data.train, MaskSource::Frozen(&fz), fz.tuples(), &data.field_names).unwrap();
    let binary = report.ratios.iter().all(|&r| r == 0.0 || r == 1.0);

    verdict(
        gap <= 1e-15 && frozen_exact && binary,
        format!(
            "(a) |hybrid(+40) - field| {gap:.1e}; (b) frozen field mask exact: {frozen_exact}; (c) field-grain keep ratios binary: {binary} {:?}",
            report.ratios
        ),
    )
}

fn baseline_equivalence() -> Verdict {
    let (_, _, data) = synthetic(60, 20_000);
    let cfg = TrainConfig {
        seed: 60,
        ..TrainConfig::default()
    };
    let base = run_baseline(&data, &cfg).unwrap();
    let ones = fixed_pattern(&data.field_sizes, &[true; 15]);
    let re = run_retrain(&data, ones, &cfg, None).unwrap();
    let same = base.test.logloss.to_bits() == re.test.logloss.to_bits();
    verdict(
        same,
        format!(
            "baseline test logloss {:.17} vs all-ones retrain {:.17}",
            base.test.logloss, re.test.logloss
        ),
    )
}

/// Logistic regression on one-hot features, fitted by diagonal Newton steps
/// with a unit Gaussian prior.
fn fit_logistic(rows: &[Vec<usize>], labels: &[f64], n_features: usize) -> Vec<f64> {
    let mut w = vec![0.0; n_features];
    let mut bias = 0.0;
    for _ in 0..300 {
        let mut grad = vec![0.0; n_features];
        let mut curv = vec![0.0; n_features];
        let (mut gb, mut cb) = (0.0, 0.0);
        for (x, &y) in rows.iter().zip(labels) {
            let p = sigmoid(bias + x.iter().map(|&f| w[f]).sum::<f64>());
            for &f in x {
                grad[f] += p - y;
                curv[f] += p * (1.0 - p);
            }
            gb += p - y;
            cb += p * (1.0 - p);
        }
        for f in 0..n_features {
            w[f] -= 0.5 * (grad[f] + w[f]) / (curv[f] + 1.0);
        }
        bias -= 0.5 * gb / cb.max(1e-12);
    }
    w.push(bias);
    w
}

fn logistic_auc(
    train: &[EncodedSample],
    test: &[EncodedSample],
    features: impl Fn(&EncodedSample) -> Vec<String>,
) -> f64 {
    let mut index: HashMap<String, usize> = HashMap::new();
    let encode = |s: &EncodedSample, index: &mut HashMap<String, usize>, grow: bool| -> Vec<usize> {
        features(s)
            .into_iter()
            .filter_map(|k| {
                if grow {
                    let n = index.len();
                    Some(*index.entry(k).or_insert(n))
                } else {
                    index.get(&k).copied()
                }
            })
            .collect()
    };
    let rows: Vec<Vec<usize>> = train.iter().map(|s| encode(s, &mut index, true)).collect();
    let labels: Vec<f64> = train.iter().map(|s| f64::from(s.label)).collect();
    let w = fit_logistic(&rows, &labels, index.len());
    let bias = w[index.len()];
    let scores: Vec<f64> = test
        .iter()
        .map(|s| bias + encode(s, &mut index, false).iter().map(|&f| w[f]).sum::<f64>())
        .collect();
    let y: Vec<f64> = test.iter().map(|s| f64::from(s.label)).collect();
    auc(&scores, &y).unwrap()
}

fn synthetic_recovery() -> Verdict {
    let planted = [(0usize, 1usize), (2, 3), (1, 4)];
    let mut recovered = 0;
    let mut auc_ok = true;
    let mut oracle_ok = true;
    let mut lines = Vec::new();
    for seed in 0..5u64 {
        let (synth, _, data) = synthetic(seed, 20_000);
        let cfg = TrainConfig {
            seed,
            ..TrainConfig::default()
        };
        let search = run_search(&data, &cfg).unwrap();
        let frozen = freeze_selection(&search.selection);
        let report =
            keep_ratio(&data.train, MaskSource::Frozen(&frozen), frozen.tuples(), &data.field_names).unwrap();
        let (mut kp, mut np, mut kn, mut nn) = (0.0, 0.0, 0.0, 0.0);
        for (q, t) in report.tuples.iter().enumerate() {
            if planted.contains(&(t[0], t[1])) {
                kp += report.ratios[q];
                np += 1.0;
            } else {
                kn += report.ratios[q];
                nn += 1.0;
            }
        }
        let (planted_keep, other_keep) = (kp / np, kn / nn);
        if planted_keep >= 0.9 && other_keep <= 0.3 {
            recovered += 1;
        }
        let retrained = run_retrain(&data, frozen, &cfg, None).unwrap();
        let zeros = fixed_pattern(&data.field_sizes, &[false; 15]);
        let no_interaction = run_retrain(&data, zeros, &cfg, None).unwrap();
        auc_ok &= retrained.test.auc - no_interaction.test.auc >= 0.02;

        // independent oracle: logistic regression on the planted crosses
        // versus on single-field indicators only
        let crosses = logistic_auc(&data.train, &data.test, |s| {
            planted
                .iter()
                .map(|&(i, j)| format!("{i}:{j}:{}:{}", s.value_ids[i], s.value_ids[j]))
                .collect()
        });
        let mains = logistic_auc(&data.train, &data.test, |s| {
            s.value_ids.iter().map(|v| format!("{v}")).collect()
        });
        oracle_ok &= crosses - mains >= 0.02;
        let truth_scores: Vec<f64> = synth.values.iter().map(|v| synth.truth.logit(v)).collect();
        let truth_labels: Vec<f64> = synth.rows.iter().map(|r| f64::from(r.label)).collect();
        let bayes = auc(&truth_scores, &truth_labels).unwrap();
        lines.push(format!(
            "seed {seed}: keep planted {planted_keep:.2} other {other_keep:.2}; auc retrained {:.4} mask0 {:.4}; oracle crosses {crosses:.4} mains {mains:.4} true logit {bayes:.4}",
            retrained.test.auc, no_interaction.test.auc
        ));
    }
    for l in &lines {
        println!("    {l}");
    }
    verdict(
        recovered >= 4 && auc_ok && oracle_ok,
        format!(
            "(i) recovered in {recovered}/5 seeds (need 4); (ii) retrained beats mask0 by 0.02 in every seed: {auc_ok}; oracle gap confirms threshold: {oracle_ok}"
        ),
    )
}

fn brute_auc(scores: &[f64], labels: &[f64]) -> f64 {
    let (mut twice, mut p, mut n) = (0u128, 0u128, 0u128);
    for (i, &si) in scores.iter().enumerate() {
        if labels[i] > 0.5 {
            p += 1;
        } else {
            n += 1;
            continue;
        }
        for (j, &sj) in scores.iter().enumerate() {
            if labels[j] <= 0.5 {
                twice += if si > sj {
                    2
                } else if si == sj {
                    1
                } else {
                    0
                };
            }
        }
    }
    twice as f64 / (2 * p * n) as f64
}

fn auc_oracle() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(80);
    let mut checked = 0;
    let mut mismatches = 0;
    while checked < 100 {
        let len = rng.random_range(2..=1000);
        let levels = if checked % 2 == 0 { 5 } else { 1_000_000 };
        let scores: Vec<f64> = (0..len).map(|_| f64::from(rng.random_range(0..levels)) / 7.0).collect();
        let labels: Vec<f64> = (0..len).map(|_| f64::from(rng.random_range(0..2u8))).collect();
        if labels.iter().all(|&y| y == labels[0]) {
            continue;
        }
        checked += 1;
        if auc(&scores, &labels).unwrap().to_bits() != brute_auc(&scores, &labels).to_bits() {
            mismatches += 1;
        }
    }
    verdict(mismatches == 0, format!("{checked} instances, {mismatches} mismatches"))
}

fn complexity() -> Verdict {
    let cfg = SelectionConfig::default();
    let counts: Vec<(usize, usize)> = [1_000usize, 10_000, 100_000]
        .iter()
        .map(|&m| {
            let s = SelectionParams::init(cfg.clone(), &[m / 10; 10], 90).unwrap();
            (s.n_values(), selection_param_count(&s))
        })
        .collect();
    let linear = counts
        .windows(2)
        .all(|w| w[1].1 - w[0].1 == (w[1].0 - w[0].0) * cfg.d_hat);

    let sizes = [10_000usize; 10];
    let m: usize = sizes.iter().sum();
    let vocab = Vocabulary::with_sizes(&sizes);
    let samples = random_samples(&sizes, 3000, 91);
    let splits = split_samples(samples, [0.8, 0.1, 0.1], 91).unwrap();
    let data = Dataset::new(&vocab, splits).unwrap();
    let train = TrainConfig {
        mode: fisel::trainer::Mode::Search,
        seed: 91,
        max_epochs: 1,
        ..TrainConfig::default()
    };
    guard::reset_peak();
    let result = run_search(&data, &train);
    let peak = guard::peak_elements();
    let ok = result.is_ok() && peak < m * m && data.n_values() == m;
    verdict(
        linear && ok,
        format!(
            "counts {counts:?} linear with slope d_hat={}: {linear}; search on m={m} ok: {}, largest matrix {peak} elements",
            cfg.d_hat,
            result.is_ok()
        ),
    )
}

fn determinism_and_persistence() -> Verdict {
    let (synth, vocab, data) = synthetic(100, 5000);
    let cfg = TrainConfig {
        seed: 100,
        max_epochs: 6,
        ..TrainConfig::default()
    };
    let run = || {
        let s = run_search(&data, &cfg).unwrap();
        let frozen = freeze_selection(&s.selection);
        let r = run_retrain(&data, frozen.clone(), &cfg, None).unwrap();
        (frozen.alpha_star, r.test)
    };
    let (a1, t1) = run();
    let (a2, t2) = run();
    let identical = a1 == a2
        && t1.auc.to_bits() == t2.auc.to_bits()
        && t1.logloss.to_bits() == t2.logloss.to_bits();

    let dir = tempfile::tempdir().unwrap();
    let mut session = Session::search(&cfg, &data).unwrap();
    session.run_epoch().unwrap();
    let ckpt = session.checkpoint();
    let path = dir.path().join("run.ckpt");
    ckpt.save(&path).unwrap();
    let loaded = Container::load(&path).unwrap();
    let round_trip = loaded.to_bytes() == ckpt.to_bytes();
    let model = loaded.model("model").unwrap();
    let params_equal = model
        .slots()
        .iter()
        .zip(session.model.slots())
        .all(|(a, b)| a.value.as_slice().iter().zip(b.value.as_slice()).all(|(x, y)| x.to_bits() == y.to_bits()));

    let vpath = dir.path().join("vocab.txt");
    vocab.save(&vpath).unwrap();
    let reloaded = Vocabulary::load(&vpath).unwrap();
    let encodings_equal = reloaded.encode_all(&synth.rows).unwrap() == vocab.encode_all(&synth.rows).unwrap();

    verdict(
        identical && round_trip && params_equal && encodings_equal,
        format!(
            "repeat runs identical: {identical}; checkpoint bytes round-trip: {round_trip}; parameters bitwise: {params_equal}; vocabulary reload encodings identical: {encodings_equal}"
        ),
    )
}
