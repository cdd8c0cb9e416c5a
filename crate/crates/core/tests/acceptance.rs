//! Acceptance gate: one test per criterion, each printing a PASS/FAIL line.
//!
//! Criteria 6, 7, and 8 share one experiment fixture (two label-shifted
//! clusters, three seeds per method), computed once behind a OnceLock.

use std::collections::HashMap;
use std::sync::OnceLock;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ppdl_core::bandit::BanditState;
use ppdl_core::config::{parse_config_str, ConfigFormat, Method};
use ppdl_core::data::LabeledPool;
use ppdl_core::field::FieldParams;
use ppdl_core::groups::{count_groups, overlap, overlap_class_count, GroupCatalog};
use ppdl_core::learner::{ModelKind, ModelParams};
use ppdl_core::report::write_outputs;
use ppdl_core::rng::normal;
use ppdl_core::secagg::secure_aggregate;
use ppdl_core::shamir::{reconstruct, share_secret};
use ppdl_core::sim::{run_experiment, run_experiment_ordered, ExperimentResult};

fn verdict(n: u32, name: &str, ok: bool) -> bool {
    println!("criterion {n} ({name}): {}", if ok { "PASS" } else { "FAIL" });
    ok
}

#[test]
fn criterion_01_group_combinatorics_exact() {
    let mut ok = count_groups(99, 2).unwrap() == 4851;
    ok &= count_groups(99, 3).unwrap() == 156849;
    ok &= overlap_class_count(100, 3, 1).unwrap() == 13680;
    ok &= overlap_class_count(100, 3, 2).unwrap() == 288;
    // Over the overlap counts 0..m, the classes partition the other arms.
    for (n, m) in [(100, 3), (10, 2), (7, 3), (12, 4)] {
        let total: u64 = (0..m).map(|u| overlap_class_count(n, m, u).unwrap()).sum();
        ok &= total + 1 == count_groups(n, m).unwrap();
    }
    assert!(verdict(1, "group combinatorics exact", ok));
}

/// Brute-force mirror of the bandit bookkeeping, recomputed from the raw
/// play history with the same arithmetic.
struct Replay {
    members: Vec<Vec<usize>>,
    history: Vec<(usize, f64, f64)>,
}

impl Replay {
    fn new(catalog: &GroupCatalog) -> Self {
        let members = (0..catalog.num_arms()).map(|a| catalog.unrank(a).unwrap()).collect();
        Self { members, history: Vec::new() }
    }

    fn plays(&self) -> Vec<u64> {
        let mut plays = vec![0u64; self.members.len()];
        for &(arm, _, _) in &self.history {
            plays[arm] += 1;
        }
        plays
    }

    fn cum_loss(&self) -> Vec<f64> {
        let mut loss = vec![0.0; self.members.len()];
        for &(arm, reward, _) in &self.history {
            loss[arm] += 1.0 - reward;
        }
        loss
    }

    fn mean(&self, arm: usize) -> Option<f64> {
        let mut sum = 0.0;
        let mut n = 0u64;
        for &(a, reward, _) in &self.history {
            if a == arm {
                sum += reward;
                n += 1;
            }
        }
        (n > 0).then(|| sum / n as f64)
    }

    fn pseudo(&self, target: usize, source: usize) -> Option<f64> {
        if target == source {
            return self.mean(source);
        }
        let u = overlap(&self.members[target], &self.members[source]);
        if u == 0 {
            return self.plays()[source].checked_sub(1).map(|_| 1.0);
        }
        let mut sum = 0.0;
        let mut n = 0u64;
        for &(a, reward, q) in &self.history {
            if a == source {
                sum += (reward + q / u as f64).min(1.0);
                n += 1;
            }
        }
        (n > 0).then(|| sum / n as f64)
    }

    fn significant(&self, divisor: u64) -> Vec<usize> {
        let round = self.history.len() as u128;
        self.plays()
            .iter()
            .enumerate()
            .filter(|&(_, &p)| p as u128 * divisor as u128 > round)
            .map(|(j, _)| j)
            .collect()
    }

    fn competitive(&self, divisor: u64) -> Vec<usize> {
        let significant = self.significant(divisor);
        let n = self.members.len();
        if significant.is_empty() {
            return (0..n).collect();
        }
        let mut best = significant[0];
        for &l in &significant[1..] {
            if self.mean(l).unwrap() > self.mean(best).unwrap() {
                best = l;
            }
        }
        let best_mean = self.mean(best).unwrap();
        let mut kept = Vec::new();
        for j in 0..n {
            if j == best {
                kept.push(j);
                continue;
            }
            let mut floor = f64::INFINITY;
            for &l in &significant {
                if l == j {
                    continue;
                }
                floor = floor.min(self.pseudo(j, l).unwrap());
            }
            if floor >= best_mean {
                kept.push(j);
            }
        }
        kept
    }
}

#[test]
fn criterion_02_bandit_matches_brute_force_replay() {
    let mut ok = true;
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    'traces: for trace in 0..22u64 {
        let m = if trace % 2 == 0 { 2 } else { 3 };
        let n = rng.gen_range(m + 2..=10);
        let divisor = rng.gen_range(2..=12u64);
        let neighborhood: Vec<usize> = (1..=n).collect();
        let catalog = GroupCatalog::new(neighborhood, m).unwrap();
        let mut bandit = BanditState::new(catalog.num_arms(), m, false).unwrap();
        let mut replay = Replay::new(&catalog);
        for t in 0..200u64 {
            bandit.tsallis_update().unwrap();
            let competitive = bandit.competitive_set(&catalog, divisor).unwrap();
            let arm = bandit.select_arm(&competitive, &mut rng).unwrap();
            let reward = (rng.gen::<f64>() * 100.0).round() / 100.0;
            let q = rng.gen_range(0.05..=1.0);
            bandit.record_outcome(arm, reward, q).unwrap();
            replay.history.push((arm, reward, q));

            ok &= bandit.plays() == replay.plays();
            ok &= bandit.cum_loss() == replay.cum_loss().as_slice();
            ok &= bandit.competitive_set(&catalog, divisor).unwrap()
                == replay.competitive(divisor);
            let arms = catalog.num_arms() as usize;
            let sig: Vec<usize> = (0..arms)
                .filter(|&j| bandit.plays()[j] as u128 * divisor as u128 > t as u128 + 1)
                .collect();
            ok &= sig == replay.significant(divisor);
            if t % 50 == 49 || t == 199 {
                for source in 0..arms {
                    if bandit.plays()[source] == 0 {
                        continue;
                    }
                    ok &= bandit.empirical_mean(source).unwrap()
                        == replay.mean(source).unwrap();
                    for target in 0..arms {
                        ok &= bandit.empirical_pseudo_reward(&catalog, target, source).unwrap()
                            == replay.pseudo(target, source).unwrap();
                    }
                }
            }
            if !ok {
                break 'traces;
            }
        }
    }
    assert!(verdict(2, "bandit bookkeeping matches brute-force replay", ok));
}

/// Solves the Tsallis-INF normalizer by bisection on sum(p) - 1.
fn bisect_normalizer(cum_loss: &[f64], t: u64) -> Vec<f64> {
    let eta = 2.0 / (t as f64).sqrt();
    let min_loss = cum_loss.iter().cloned().fold(f64::INFINITY, f64::min);
    let sum_at = |x: f64| -> f64 {
        cum_loss.iter().map(|&l| 4.0 / (eta * (l - x)).powi(2)).sum::<f64>()
    };
    let mut hi = min_loss - 2.0 / eta;
    let mut lo = hi - 1.0;
    while sum_at(lo) > 1.0 {
        lo = hi - 2.0 * (hi - lo);
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if sum_at(mid) > 1.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let x = 0.5 * (lo + hi);
    cum_loss.iter().map(|&l| 4.0 / (eta * (l - x)).powi(2)).collect()
}

#[test]
fn criterion_03_tsallis_inf_correctness() {
    // (a) symmetric losses give the uniform distribution.
    let mut ok = true;
    for arms in [2usize, 5, 17] {
        let mut bandit = BanditState::new(arms as u64, 2, false).unwrap();
        let dist = bandit.tsallis_update().unwrap();
        ok &= dist.iter().all(|&p| (p - 1.0 / arms as f64).abs() <= 1e-9);
    }

    // (b) the Newton fixed point matches a bisection oracle on 2 arms.
    let mut rng = ChaCha8Rng::seed_from_u64(30);
    for _ in 0..50 {
        let mut bandit = BanditState::new(2, 2, false).unwrap();
        let rounds = rng.gen_range(1..=60);
        for _ in 0..rounds {
            let arm = rng.gen_range(0..2);
            let reward = rng.gen::<f64>();
            bandit.record_outcome(arm, reward, 0.2).unwrap();
        }
        let dist = bandit.tsallis_update().unwrap().to_vec();
        let oracle = bisect_normalizer(bandit.cum_loss(), bandit.round() + 1);
        for (p, o) in dist.iter().zip(&oracle) {
            ok &= (p - o).abs() <= 1e-7;
        }
    }

    // (c) a 0.3 reward gap concentrates >= 0.9 mass on the best arm by
    // t = 5000 under importance-weighted losses, on all five seeds.
    for seed in 0..5u64 {
        let mut bandit = BanditState::new(10, 2, true).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(300 + seed);
        let all: Vec<usize> = (0..10).collect();
        for _ in 0..5000 {
            bandit.tsallis_update().unwrap();
            let arm = bandit.select_arm(&all, &mut rng).unwrap();
            let p = if arm == 4 { 0.65 } else { 0.35 };
            let reward = if rng.gen::<f64>() < p { 1.0 } else { 0.0 };
            bandit.record_outcome(arm, reward, 0.2).unwrap();
        }
        bandit.tsallis_update().unwrap();
        let mass = bandit.dist()[4];
        ok &= mass >= 0.9;
        if mass < 0.9 {
            println!("  seed {seed}: best-arm mass {mass:.4}");
        }
    }
    assert!(verdict(3, "Tsallis-INF uniform, oracle, and concentration", ok));
}

const RECOVERY_FIXTURE: &str = r#"
method = "ppdl"
nodes = 8
group_size = 2
rounds = 100
seed = 0
local_epochs = 1
batch_size = 16
lr = 0.05

[layout]
cluster_sizes = [4, 4]
label_subsets = [[0, 1], [2, 3]]

[data]
dim = 8
samples_per_node = 60

[bandit]
q_mode = "constant"
q0 = 1.0
"#;

#[test]
fn criterion_04_saturated_q_recovers_plain_tsallis() {
    // With q >= 1 and M = 2 every pseudo-reward ceiling saturates at 1, so
    // the competitive filter keeps all arms and selection must match a run
    // with the filter disabled outright.
    let (masked, _) = parse_config_str(RECOVERY_FIXTURE, ConfigFormat::Toml).unwrap();
    let mut plain = masked.clone();
    plain.bandit.competitive_masking = false;

    let run_masked = run_experiment(&masked).unwrap();
    let run_plain = run_experiment(&plain).unwrap();
    let mut ok = true;
    for (a, b) in run_masked.records.iter().zip(&run_plain.records) {
        for (ea, eb) in a.entries.iter().zip(&b.entries) {
            ok &= ea.arm == eb.arm && ea.group == eb.group;
        }
    }
    assert!(verdict(4, "saturated pseudo-rewards recover plain Tsallis-INF", ok));
}

#[test]
fn criterion_05_secure_aggregation_end_to_end() {
    let field = FieldParams::new(
        ppdl_core::field::DEFAULT_PRIME,
        ppdl_core::field::DEFAULT_FRAC_BITS,
        ppdl_core::field::DEFAULT_CLIP,
    )
    .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(50);
    let mut ok = true;
    for _ in 0..100 {
        let group = [10usize, 11, 12];
        let models: Vec<Vec<f64>> =
            (0..3).map(|_| (0..50).map(|_| normal(&mut rng) * 3.0).collect()).collect();
        let refs: Vec<&[f64]> = models.iter().map(|m| m.as_slice()).collect();
        let dropped = [false; 3];
        let agg =
            secure_aggregate(10, &group, &refs, &field, 3, &dropped, &mut rng).unwrap();

        // Dequantized mean vs the plaintext mean.
        for d in 0..50 {
            let plain = (models[0][d] + models[1][d] + models[2][d]) / 3.0;
            ok &= (agg.mean[d] - plain).abs() <= 1e-4;
        }

        // Field-domain aggregate is bit-exact against the quantized sum.
        let mut expect = vec![0u64; 50];
        let mut quantized = Vec::new();
        for model in &models {
            let (q, _) = field.quantize(model);
            for (e, &v) in expect.iter_mut().zip(&q) {
                *e = field.add(*e, v);
            }
            quantized.push(q);
        }
        ok &= agg.aggregate_field == expect;

        // No protocol message ever carries a plaintext quantized model.
        ok &= agg.transcript.leaks_none_of(&quantized);
    }

    // Shamir reconstruction, exhaustive over all t-subsets for n <= 6.
    for n in 1..=6usize {
        for t in 1..=n {
            let secret: Vec<u64> = (0..4).map(|_| field.random_element(&mut rng)).collect();
            let shares = share_secret(&field, &secret, n, t, &mut rng).unwrap();
            for mask in 0u32..(1 << n) {
                if mask.count_ones() as usize != t {
                    continue;
                }
                let subset: Vec<_> = (0..n)
                    .filter(|i| mask & (1 << i) != 0)
                    .map(|i| shares[i].clone())
                    .collect();
                ok &= reconstruct(&field, &subset, t).unwrap() == secret;
            }
        }
    }
    assert!(verdict(5, "secure aggregation and Shamir reconstruction", ok));
}

const CLUSTER_FIXTURE: &str = r#"
method = "ppdl"
nodes = 20
group_size = 2
rounds = 150
seed = 0

[layout]
cluster_sizes = [12, 8]
label_subsets = [[0, 1], [2, 3]]
"#;

struct FixtureRuns {
    by_method: HashMap<Method, Vec<ExperimentResult>>,
    rounds: u64,
}

fn cluster_fixture() -> &'static FixtureRuns {
    static RUNS: OnceLock<FixtureRuns> = OnceLock::new();
    RUNS.get_or_init(|| {
        let (base, _) = parse_config_str(CLUSTER_FIXTURE, ConfigFormat::Toml).unwrap();
        let mut by_method = HashMap::new();
        for method in [Method::Ppdl, Method::Random, Method::Oracle, Method::Local] {
            let mut runs = Vec::new();
            for seed in 0..3u64 {
                let mut config = base.clone();
                config.method = method;
                config.seed = seed;
                runs.push(run_experiment(&config).unwrap());
            }
            by_method.insert(method, runs);
        }
        FixtureRuns { by_method, rounds: base.rounds }
    })
}

/// Fraction of selected group members lying in the selector's own cluster,
/// pooled over the given rounds.
fn intra_cluster_fraction(result: &ExperimentResult, from_round: u64) -> f64 {
    let cluster = |node: usize| usize::from(node >= 12);
    let mut intra = 0u64;
    let mut total = 0u64;
    for record in &result.records {
        if record.t < from_round {
            continue;
        }
        for entry in &record.entries {
            for &member in &entry.group {
                total += 1;
                if cluster(member) == cluster(entry.node) {
                    intra += 1;
                }
            }
        }
    }
    intra as f64 / total as f64
}

#[test]
fn criterion_06_cluster_identification_under_label_shift() {
    let fixture = cluster_fixture();
    let from = fixture.rounds - 30 + 1;
    let mut fractions = Vec::new();
    for result in &fixture.by_method[&Method::Ppdl] {
        fractions.push(intra_cluster_fraction(result, from));
    }
    let mean = fractions.iter().sum::<f64>() / fractions.len() as f64;
    let mut ok = mean >= 0.60;
    for result in &fixture.by_method[&Method::Oracle] {
        ok &= intra_cluster_fraction(result, 1) == 1.0;
    }
    println!(
        "  intra-cluster fractions over last 30 rounds: {:?}, mean {mean:.4}",
        fractions.iter().map(|f| (f * 1e4).round() / 1e4).collect::<Vec<_>>()
    );
    assert!(verdict(6, "label-shift cluster identification >= 0.60", ok));
}

fn mean_accuracy(results: &[ExperimentResult]) -> f64 {
    results.iter().map(|r| r.mean_over_clusters).sum::<f64>() / results.len() as f64
}

#[test]
fn criterion_07_method_ordering_on_the_cluster_fixture() {
    let fixture = cluster_fixture();
    let ppdl = mean_accuracy(&fixture.by_method[&Method::Ppdl]);
    let random = mean_accuracy(&fixture.by_method[&Method::Random]);
    let oracle = mean_accuracy(&fixture.by_method[&Method::Oracle]);
    let local = mean_accuracy(&fixture.by_method[&Method::Local]);
    println!(
        "  mean test accuracy over seeds 0..3: ppdl {ppdl:.4}, random {random:.4}, \
         oracle {oracle:.4}, local {local:.4}"
    );
    if random > local + 0.02 {
        println!(
            "  warning: random ({random:.4}) exceeds local ({local:.4}) by more than 2 points"
        );
    }
    let ok = ppdl >= random + 0.03 && oracle >= ppdl;
    assert!(verdict(7, "method ordering ppdl >= random+3pts, oracle >= ppdl", ok));
}

fn variance(values: &[f64]) -> f64 {
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / values.len() as f64
}

#[test]
fn criterion_08_exploration_settles_into_exploitation() {
    let fixture = cluster_fixture();
    let quartile = fixture.rounds / 4;
    let mut settled = 0usize;
    let mut total = 0usize;
    for result in &fixture.by_method[&Method::Ppdl] {
        for node in 0..20usize {
            let rewards: Vec<(u64, f64)> = result
                .records
                .iter()
                .filter_map(|r| r.entries[node].reward.map(|w| (r.t, w)))
                .collect();
            let first: Vec<f64> =
                rewards.iter().filter(|(t, _)| *t <= quartile).map(|&(_, w)| w).collect();
            let last: Vec<f64> = rewards
                .iter()
                .filter(|(t, _)| *t >= fixture.rounds - quartile)
                .map(|&(_, w)| w)
                .collect();
            total += 1;
            if variance(&last) <= variance(&first) {
                settled += 1;
            }
        }
    }
    let fraction = settled as f64 / total as f64;
    println!("  nodes with settled reward variance: {settled}/{total} ({fraction:.3})");
    assert!(verdict(8, "reward variance settles for >= 80% of nodes", fraction >= 0.80));
}

#[test]
fn criterion_09_determinism_and_order_independence() {
    let (config, _) = parse_config_str(RECOVERY_FIXTURE, ConfigFormat::Toml).unwrap();
    let dir = tempfile::tempdir().unwrap();

    let first = run_experiment(&config).unwrap();
    let second = run_experiment(&config).unwrap();
    let mut order: Vec<usize> = (0..config.nodes).rev().collect();
    order.swap(0, 3);
    let shuffled = run_experiment_ordered(&config, &order).unwrap();

    let started = chrono::Utc::now();
    write_outputs(&config, &first, started, &dir.path().join("a")).unwrap();
    write_outputs(&config, &second, started, &dir.path().join("b")).unwrap();
    write_outputs(&config, &shuffled, started, &dir.path().join("c")).unwrap();

    let mut ok = true;
    for name in ["rounds.csv", "comm_matrix.csv", "accuracy.csv"] {
        let a = std::fs::read(dir.path().join("a").join(name)).unwrap();
        let b = std::fs::read(dir.path().join("b").join(name)).unwrap();
        let c = std::fs::read(dir.path().join("c").join(name)).unwrap();
        ok &= a == b && a == c;
    }
    assert!(verdict(9, "byte-identical reruns and order independence", ok));
}

#[test]
fn criterion_10_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(100);
    let mut ok = true;
    for case in 0..20 {
        let kind = if case % 2 == 0 { ModelKind::Logistic } else { ModelKind::Mlp1 };
        let input = rng.gen_range(2..=5);
        let classes = rng.gen_range(2..=4);
        let mut pool = LabeledPool::new(input);
        for _ in 0..12 {
            let x: Vec<f64> = (0..input).map(|_| normal(&mut rng)).collect();
            pool.push(&x, rng.gen_range(0..classes as u32));
        }
        let mut model = ModelParams::init(kind, input, 3, classes, &mut rng).unwrap();
        for w in &mut model.theta {
            *w = normal(&mut rng) * 0.5;
        }
        let batch: Vec<usize> = (0..12).collect();
        let (_, grad) = model.loss_and_grad(&pool, &batch).unwrap();
        let h = 1e-5;
        for d in 0..model.theta.len() {
            let orig = model.theta[d];
            model.theta[d] = orig + h;
            let (up, _) = model.loss_and_grad(&pool, &batch).unwrap();
            model.theta[d] = orig - h;
            let (down, _) = model.loss_and_grad(&pool, &batch).unwrap();
            model.theta[d] = orig;
            let fd = (up - down) / (2.0 * h);
            let rel = (fd - grad[d]).abs() / grad[d].abs().max(1.0);
            ok &= rel <= 1e-4;
        }
    }
    assert!(verdict(10, "analytic gradients match finite differences", ok));
}
