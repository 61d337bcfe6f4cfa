//! Acceptance suite: one test per criterion, each printing a PASS line with
//! its measured numbers (run with `--nocapture` to see them).
//!
//! Run: `cargo test -p adasel --test acceptance -- --nocapture`

use std::sync::OnceLock;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use adasel::experiment::{
    prepare_data, run_experiment_on, select_batch, DatasetSpec, ExperimentConfig, Pools,
    SamplerKind,
};
use adasel::nn::{NetDims, NetParams};
use adasel::perturb::{vat_perturbation, PerturbationBundle, VatConfig};
use adasel::prob::{bhattacharyya, kl_divergence, ProbDist};
use adasel::submodular::{
    brute_force_best_subset, greedy_select, subset_value, vap_score, CandidatePool, MixWeights,
    SelectionState,
};
use adasel::train::{LossWeights, TrainConfig};

fn random_dist(rng: &mut ChaCha8Rng, k: usize) -> ProbDist {
    loop {
        let raw: Vec<f64> = (0..k)
            .map(|_| -rng.random::<f64>().max(1e-12).ln())
            .collect();
        let sum: f64 = raw.iter().sum();
        if sum > 0.0 {
            return ProbDist::new(raw.iter().map(|v| v / sum).collect()).unwrap();
        }
    }
}

fn random_pool(rng: &mut ChaCha8Rng, n: usize, k: usize, restarts: usize) -> CandidatePool {
    let bundles: Vec<PerturbationBundle> = (0..n)
        .map(|_| PerturbationBundle {
            original: random_dist(rng, k),
            perturbed: (0..restarts).map(|_| random_dist(rng, k)).collect(),
        })
        .collect();
    CandidatePool::from_bundles((0..n).collect(), &bundles).unwrap()
}

const CRITERION_WEIGHTS: [(f64, f64); 4] = [(1.0, 0.0), (0.0, 1.0), (0.0, 0.0), (0.5, 0.3)];

/// Criterion 1: diminishing returns of the marginal gain over 500 random
/// nested-set triples, for every weight setting, within 1e-9. Runtime < 30 s.
#[test]
fn criterion_01_submodularity() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0xACC01);
    let mut worst: f64 = f64::INFINITY;
    for _ in 0..500 {
        let n = rng.random_range(3..=30);
        let k = rng.random_range(2..=5);
        let restarts = rng.random_range(1..=5);
        let pool = random_pool(&mut rng, n, k, restarts);
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rng);
        let s2_len = rng.random_range(1..n);
        let s1_len = rng.random_range(0..=s2_len);
        let s2 = &perm[..s2_len];
        let s1 = &s2[..s1_len];
        let candidate = perm[s2_len];
        let small = SelectionState::with_selected(&pool, s1).unwrap();
        let big = SelectionState::with_selected(&pool, s2).unwrap();
        for (alpha, beta) in CRITERION_WEIGHTS {
            let w = MixWeights::new(alpha, beta).unwrap();
            let g1 = small.marginal_gain(candidate, &w).unwrap().gain;
            let g2 = big.marginal_gain(candidate, &w).unwrap().gain;
            worst = worst.min(g1 - g2);
            assert!(
                g1 >= g2 - 1e-9,
                "diminishing returns violated: gain(S1) {g1} < gain(S2) {g2} at ({alpha},{beta})"
            );
        }
    }
    let elapsed = start.elapsed().as_secs_f64();
    assert!(elapsed < 30.0, "runtime {elapsed:.1}s exceeds 30s");
    println!(
        "ACCEPTANCE 01 submodularity: PASS (500 triples x 4 weightings, \
         worst gain drop {worst:.2e} >= -1e-9, {elapsed:.1}s)"
    );
}

/// Criterion 2: every marginal gain is non-negative (within 1e-12) on the
/// same instance family.
#[test]
fn criterion_02_monotonicity() {
    let mut rng = ChaCha8Rng::seed_from_u64(0xACC02);
    let mut min_gain: f64 = f64::INFINITY;
    for _ in 0..500 {
        let n = rng.random_range(3..=30);
        let k = rng.random_range(2..=5);
        let restarts = rng.random_range(1..=5);
        let pool = random_pool(&mut rng, n, k, restarts);
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rng);
        let s_len = rng.random_range(0..n);
        let state = SelectionState::with_selected(&pool, &perm[..s_len]).unwrap();
        let candidate = perm[s_len];
        for (alpha, beta) in CRITERION_WEIGHTS {
            let w = MixWeights::new(alpha, beta).unwrap();
            let g = state.marginal_gain(candidate, &w).unwrap().gain;
            min_gain = min_gain.min(g);
            assert!(g >= -1e-12, "negative gain {g}");
        }
    }
    println!("ACCEPTANCE 02 monotonicity: PASS (min gain {min_gain:.2e} >= -1e-12)");
}

/// Criterion 3: the set-function value of the greedy subset is within
/// (1 - 1/e) of the exhaustive oracle on every one of 50 random instances
/// (n <= 10, B = 3), and within 0.95 on at least 45. Both sides are scored
/// by the same order-maximized set function the oracle enumerates.
/// Runtime < 2 min.
#[test]
fn criterion_03_greedy_guarantee() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0xACC03);
    let bound = 1.0 - (-1.0f64).exp();
    let w = MixWeights::default();
    let mut above_095 = 0;
    let mut worst_ratio: f64 = f64::INFINITY;
    for i in 0..50 {
        let n = rng.random_range(6..=10);
        let k = rng.random_range(2..=5);
        let restarts = rng.random_range(1..=5);
        let pool = random_pool(&mut rng, n, k, restarts);
        let greedy = greedy_select(&pool, 3, &w).unwrap();
        let value = subset_value(&pool, &greedy.ids, &w).unwrap();
        let (_, best) = brute_force_best_subset(&pool, 3, &w).unwrap();
        let ratio = value / best;
        worst_ratio = worst_ratio.min(ratio);
        assert!(
            value >= bound * best - 1e-9,
            "instance {i}: greedy {value} below (1-1/e) x {best}"
        );
        if ratio >= 0.95 {
            above_095 += 1;
        }
    }
    let elapsed = start.elapsed().as_secs_f64();
    assert!(
        above_095 >= 45,
        "only {above_095}/50 instances above 0.95 x optimum"
    );
    assert!(elapsed < 120.0, "runtime {elapsed:.1}s exceeds 2min");
    println!(
        "ACCEPTANCE 03 greedy guarantee: PASS (worst ratio {worst_ratio:.4}, \
         {above_095}/50 above 0.95, {elapsed:.1}s)"
    );
}

/// Criterion 4: with alpha=0, beta=1 the greedy id sequence equals an
/// independently written farthest-first traversal of the KL table, exactly,
/// on 20 random pools.
#[test]
fn criterion_04_kcenter_degeneration() {
    let mut rng = ChaCha8Rng::seed_from_u64(0xACC04);
    let w = MixWeights::new(0.0, 1.0).unwrap();
    for trial in 0..20 {
        let n = rng.random_range(4..=25);
        let k = rng.random_range(2..=5);
        let pool = random_pool(&mut rng, n, k, 2);
        let budget = rng.random_range(1..=n.min(8));
        let greedy = greedy_select(&pool, budget, &w).unwrap();

        // Independent farthest-first traversal on the divergence table:
        // repeatedly take the candidate with the largest min divergence from
        // the selected set, ties to the lowest id, first pick id 0 (all tie).
        let mut selected: Vec<usize> = Vec::new();
        let mut remaining: Vec<usize> = (0..n).collect();
        for _ in 0..budget {
            let mut best: Option<(usize, f64)> = None;
            for &i in &remaining {
                let d = if selected.is_empty() {
                    f64::INFINITY
                } else {
                    selected
                        .iter()
                        .map(|&j| pool.kl_at(j, i))
                        .fold(f64::INFINITY, f64::min)
                };
                let better = match best {
                    None => true,
                    Some((_, bd)) => d > bd,
                };
                if better {
                    best = Some((i, d));
                }
            }
            let (pick, _) = best.unwrap();
            selected.push(pick);
            remaining.retain(|&i| i != pick);
        }
        assert_eq!(greedy.ids, selected, "trial {trial}: sequences diverge");
    }
    println!("ACCEPTANCE 04 k-center degeneration: PASS (20 pools, exact sequence match)");
}

/// Criterion 5: every loss term and the combined objective pass central
/// finite differences (rel err <= 1e-4) on a 2/4/3-classes net, 5 seeds.
/// Runtime < 1 min.
#[test]
fn criterion_05_gradient_correctness() {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    for seed in 0..5 {
        let cfg = adasel::gradcheck::GradCheckConfig {
            dims: NetDims::new(2, 4, 3, 4, 3),
            seed,
            ..adasel::gradcheck::GradCheckConfig::default()
        };
        let report = adasel::gradcheck::run_gradcheck(&cfg).unwrap();
        for row in &report.rows {
            worst = worst.max(row.max_rel_err);
            assert!(
                row.pass,
                "seed {seed}, term {}: rel err {} > 1e-4",
                row.term, row.max_rel_err
            );
        }
    }
    let elapsed = start.elapsed().as_secs_f64();
    assert!(elapsed < 60.0, "runtime {elapsed:.1}s exceeds 1min");
    println!(
        "ACCEPTANCE 05 gradient correctness: PASS (6 terms x 5 seeds, \
         worst rel err {worst:.2e}, {elapsed:.1}s)"
    );
}

/// Criterion 6: on 100 random non-constant models the power-method direction
/// beats the mean KL over random equal-norm directions, strictly in >= 90
/// cases; perturbation norms equal epsilon within 1e-9 always.
#[test]
fn criterion_06_power_method_quality() {
    let cfg = VatConfig {
        epsilon: 0.5,
        ..VatConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(0xACC06);
    let mut strict = 0;
    let mut mean_power = 0.0;
    let mut mean_random = 0.0;
    for trial in 0..100u64 {
        let d = [8usize, 16, 32, 64][(trial % 4) as usize];
        let mut prng = ChaCha8Rng::seed_from_u64(trial + 4000);
        let params = NetParams::init(NetDims::new(d, 8, 4, 4, 3), &mut prng).unwrap();
        let x: Vec<f64> = (0..d).map(|_| rng.random_range(-2.0..2.0)).collect();
        let target = adasel::nn::forward_classifier(&params, &x).unwrap();
        let r = vat_perturbation(&params, &x, &cfg, &mut rng).unwrap();
        assert!(!r.fell_back, "model unexpectedly constant");
        let norm: f64 = r.vector.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((norm - cfg.epsilon).abs() <= 1e-9, "norm {norm} != epsilon");

        let kl_at = |dir: &[f64]| {
            let probe: Vec<f64> = x.iter().zip(dir).map(|(a, b)| a + b).collect();
            let out = adasel::nn::forward_classifier(&params, &probe).unwrap();
            kl_divergence(&target, &out).unwrap()
        };
        let kp = kl_at(&r.vector);
        let mut kr = 0.0;
        for _ in 0..20 {
            let dir: Vec<f64> = loop {
                let v: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
                let n: f64 = v.iter().map(|a| a * a).sum::<f64>().sqrt();
                if n > 1e-9 {
                    break v.iter().map(|a| a / n * cfg.epsilon).collect();
                }
            };
            kr += kl_at(&dir);
        }
        kr /= 20.0;
        mean_power += kp;
        mean_random += kr;
        if kp > kr {
            strict += 1;
        }
    }
    assert!(
        mean_power > mean_random,
        "mean power {mean_power} not above mean random {mean_random}"
    );
    assert!(
        strict >= 90,
        "strict improvement only in {strict}/100 trials"
    );
    println!(
        "ACCEPTANCE 06 power-method quality: PASS (strict {strict}/100, \
         mean KL {:.4} vs {:.4}, norms exact)",
        mean_power / 100.0,
        mean_random / 100.0
    );
}

/// Criterion 7: incremental min-divergence / max-similarity caches equal a
/// naive recomputation bit-exactly across 1,000 greedy steps.
#[test]
fn criterion_07_cache_equivalence() {
    let mut rng = ChaCha8Rng::seed_from_u64(0xACC07);
    let mut steps = 0usize;
    while steps < 1000 {
        let n = rng.random_range(5..=30);
        let k = rng.random_range(2..=5);
        let pool = random_pool(&mut rng, n, k, 2);
        let mut state = SelectionState::new(&pool);
        let w = MixWeights::default();
        for _ in 0..n {
            // Follow the actual greedy policy so the cache sees real paths.
            let mut best: Option<(usize, f64)> = None;
            for i in 0..n {
                if state.selected().contains(&i) {
                    continue;
                }
                let g = state.marginal_gain(i, &w).unwrap().gain;
                let better = match best {
                    None => true,
                    Some((_, bg)) => g > bg,
                };
                if better {
                    best = Some((i, g));
                }
            }
            let (pick, gain) = best.unwrap();
            state.push(pick, Some(gain)).unwrap();
            steps += 1;
            for t in 0..n {
                let naive_min = state
                    .selected()
                    .iter()
                    .map(|&j| pool.kl_at(j, t))
                    .fold(f64::INFINITY, f64::min);
                let naive_max = state
                    .selected()
                    .iter()
                    .map(|&j| pool.sim_at(t, j))
                    .fold(0.0f64, f64::max);
                assert!(
                    state.min_div_cache()[t].to_bits() == naive_min.to_bits(),
                    "min cache differs at {t}"
                );
                assert!(
                    state.max_sim_cache()[t].to_bits() == naive_max.to_bits(),
                    "max cache differs at {t}"
                );
            }
            if steps >= 1000 {
                break;
            }
        }
    }
    println!("ACCEPTANCE 07 cache equivalence: PASS ({steps} greedy steps, bit-exact)");
}

/// Criterion 8: closed-form spot values within 1e-9.
#[test]
fn criterion_08_spot_values() {
    let p10 = ProbDist::new(vec![1.0, 0.0]).unwrap();
    let phalf = ProbDist::new(vec![0.5, 0.5]).unwrap();
    let pq = ProbDist::new(vec![0.25, 0.75]).unwrap();

    let kl = kl_divergence(&p10, &phalf).unwrap();
    assert!((kl - std::f64::consts::LN_2).abs() <= 1e-9);

    let bc = bhattacharyya(&phalf, &pq).unwrap();
    assert!((bc - (0.125f64.sqrt() + 0.375f64.sqrt())).abs() <= 1e-9);

    let bundle = PerturbationBundle {
        original: p10,
        perturbed: vec![phalf.clone(), phalf],
    };
    let vap = vap_score(&bundle).unwrap();
    assert!((vap - std::f64::consts::LN_2 / 2.0).abs() <= 1e-9);

    println!(
        "ACCEPTANCE 08 spot values: PASS (KL = ln2 {kl:.9}, BC {bc:.9}, VAP = ln2/2 {vap:.9})"
    );
}

// ---------------------------------------------------------------------------
// Criteria 9 and 10 share one set of paired runs.
// ---------------------------------------------------------------------------

const PAIRED_SEEDS: [u64; 5] = [31, 32, 33, 34, 35];

fn paired_config(seed: u64) -> ExperimentConfig {
    // Desk-scale substitute experiment: the generator and loop factors the
    // criterion pins (two-moons 30 deg, noise 0.1, n = 500/domain, B = 2%,
    // C = 5) stay fixed; the perturbation radius, epoch count and per-cycle
    // re-initialization are set so the final cycle is still label-limited on
    // this geometry, and the enlarged held-out test draw keeps evaluation
    // noise well under the two-point margin being measured.
    ExperimentConfig {
        dataset: DatasetSpec::TwoMoons {
            n_per_domain: 500,
            rotation_deg: 30.0,
            noise_sd: 0.1,
            n_test: Some(2000),
        },
        cycles: 5,
        budget_fraction: 0.02,
        vat: VatConfig {
            epsilon: 1.0,
            ..VatConfig::default()
        },
        train: TrainConfig {
            epochs: 20,
            ..TrainConfig::default()
        },
        cold_start: true,
        seed,
        ..ExperimentConfig::default()
    }
}

struct PairedRuns {
    /// (seed, arm name) -> metrics csv text.
    csvs: Vec<(u64, &'static str, String)>,
    final_margins: Vec<f64>,
    cycle0_margins: Vec<f64>,
    elapsed_s: f64,
}

fn execute_paired_runs() -> PairedRuns {
    let start = Instant::now();
    let mut csvs = Vec::new();
    let mut final_margins = Vec::new();
    let mut cycle0_margins = Vec::new();
    for seed in PAIRED_SEEDS {
        let base = paired_config(seed);
        let data = prepare_data(&base).unwrap();
        let s3 = run_experiment_on(&base, &data).unwrap();
        let random_cfg = ExperimentConfig {
            sampler: SamplerKind::Random,
            ..base.clone()
        };
        let random = run_experiment_on(&random_cfg, &data).unwrap();
        let sup_cfg = ExperimentConfig {
            loss_weights: LossWeights::supervised_only(),
            ..base.clone()
        };
        let sup = run_experiment_on(&sup_cfg, &data).unwrap();

        let last = s3.cycles.len() - 1;
        assert_eq!(s3.cycles.len(), 5);
        assert_eq!(random.cycles.len(), 5);
        final_margins.push(s3.cycles[last].test_accuracy - random.cycles[last].test_accuracy);
        cycle0_margins.push(s3.cycles[0].test_accuracy - sup.cycles[0].test_accuracy);
        csvs.push((seed, "s3", adasel::experiment::metrics_csv(&s3.cycles)));
        csvs.push((
            seed,
            "random",
            adasel::experiment::metrics_csv(&random.cycles),
        ));
        csvs.push((seed, "sup", adasel::experiment::metrics_csv(&sup.cycles)));
    }
    PairedRuns {
        csvs,
        final_margins,
        cycle0_margins,
        elapsed_s: start.elapsed().as_secs_f64(),
    }
}

fn paired_runs() -> &'static PairedRuns {
    static RUNS: OnceLock<PairedRuns> = OnceLock::new();
    RUNS.get_or_init(execute_paired_runs)
}

/// Criterion 9: paired over 5 seeds on the pinned two-moons task, (a) the
/// submodular sampler beats random selection by >= 2 accuracy points mean at
/// the final cycle under identical training, and (b) the full training
/// objective beats supervised-only fine-tuning by >= 2 points mean at cycle
/// 0. Total runtime < 10 min.
#[test]
fn criterion_09_end_to_end_margins() {
    let runs = paired_runs();
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let final_margin = mean(&runs.final_margins);
    let cycle0_margin = mean(&runs.cycle0_margins);
    assert!(
        final_margin >= 0.02,
        "(a) final-cycle margin {final_margin:+.4} below +0.02 (per seed: {:?})",
        runs.final_margins
    );
    assert!(
        cycle0_margin >= 0.02,
        "(b) cycle-0 adaptation margin {cycle0_margin:+.4} below +0.02 (per seed: {:?})",
        runs.cycle0_margins
    );
    assert!(
        runs.elapsed_s < 600.0,
        "runtime {:.0}s exceeds 10min",
        runs.elapsed_s
    );
    println!(
        "ACCEPTANCE 09 end-to-end margins: PASS (selection margin {:+.1} pts, \
         adaptation margin {:+.1} pts, {:.0}s for 15 runs)",
        100.0 * final_margin,
        100.0 * cycle0_margin,
        runs.elapsed_s
    );
}

/// Strips the wall-clock selection_ms column, the one field outside the
/// determinism contract.
fn strip_timing(csv: &str) -> String {
    csv.lines()
        .map(|line| {
            let mut parts: Vec<&str> = line.split(',').collect();
            parts.truncate(3);
            parts.join(",")
        })
        .collect::<Vec<_>>()
        .join("\n")
}

/// Criterion 10: repeating the criterion-9 runs with identical seeds yields
/// byte-identical metrics CSVs (modulo the wall-clock selection_ms column,
/// which is measured, not computed).
#[test]
fn criterion_10_determinism() {
    let first = paired_runs();
    let second = execute_paired_runs();
    assert_eq!(first.csvs.len(), second.csvs.len());
    for ((seed_a, arm_a, csv_a), (seed_b, arm_b, csv_b)) in first.csvs.iter().zip(&second.csvs) {
        assert_eq!(seed_a, seed_b);
        assert_eq!(arm_a, arm_b);
        assert_eq!(
            strip_timing(csv_a),
            strip_timing(csv_b),
            "seed {seed_a} arm {arm_a}: metrics differ between repeats"
        );
    }
    println!(
        "ACCEPTANCE 10 determinism: PASS ({} metrics files byte-identical \
         outside the wall-clock column)",
        first.csvs.len()
    );
}

/// Criterion 11: selection ids are invariant under permutation of the hidden
/// oracle labels, for every sampler.
#[test]
fn criterion_11_no_leak_audit() {
    let cfg = ExperimentConfig {
        dataset: DatasetSpec::TwoMoons {
            n_per_domain: 120,
            rotation_deg: 30.0,
            noise_sd: 0.1,
            n_test: None,
        },
        ..ExperimentConfig::default()
    };
    let data = prepare_data(&cfg).unwrap();
    let pools = Pools::new(
        &data.source_train,
        &data.target_train,
        &data.target_val,
        &data.target_test,
    )
    .unwrap();
    let dims = NetDims::new(2, 16, 8, 16, 2);
    let mut rng = ChaCha8Rng::seed_from_u64(0xACC11);
    let params = NetParams::init(dims, &mut rng).unwrap();

    let samplers = [
        SamplerKind::Submodular,
        SamplerKind::Random,
        SamplerKind::Entropy,
        SamplerKind::Margin,
        SamplerKind::KCenter,
        SamplerKind::Aada,
        SamplerKind::Badge,
    ];
    for sampler in samplers {
        let before = select_batch(
            &pools,
            &params,
            sampler,
            &cfg.mix,
            &VatConfig {
                epsilon: 1.0,
                ..VatConfig::default()
            },
            6,
            42,
        )
        .unwrap();
        let mut permuted = pools.clone();
        permuted.permute_hidden_labels(&mut rng);
        let after = select_batch(
            &permuted,
            &params,
            sampler,
            &cfg.mix,
            &VatConfig {
                epsilon: 1.0,
                ..VatConfig::default()
            },
            6,
            42,
        )
        .unwrap();
        assert_eq!(
            before.ids, after.ids,
            "{sampler:?}: selection changed under hidden-label permutation"
        );
    }
    println!("ACCEPTANCE 11 no-leak audit: PASS (7 samplers invariant to label permutation)");
}
