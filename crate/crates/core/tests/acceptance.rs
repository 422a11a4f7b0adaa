//! Acceptance suite: every criterion runs at its stated tolerance and prints
//! one `PASS`/`FAIL` line. The test fails if any criterion fails.
//!
//! Criteria 6 and 7 train the expert and the imitation learner at desk scale
//! and take tens of minutes. Set `IRLREC_ACCEPT_SKIP_HEAVY=1` to report them
//! as `SKIP` during development; the full suite never skips.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::Instant;

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use irlrec::checkpoint::{decode, encode, load_checkpoint, save_checkpoint};
use irlrec::discriminator::Discriminator;
use irlrec::envsim::{EnvConfig, Environment};
use irlrec::expert::{
    collect_expert, critic_loss_and_grads, critic_targets, train_expert_with, DdpgBatch, DdpgConfig, DdpgNets,
    ExpertDataset, OuState,
};
use irlrec::numeric::{finite_diff_check, Mlp};
use irlrec::optim::{
    compute_gae, minibatch_loss_and_grads, ppo_clip_objective, update_beta, Minibatch, PpoConfig, PpoVariant,
};
use irlrec::pipeline::{evaluate, run_grid, train_with_expert, RandomPolicy, RunConfig, CHECKPOINT_FILE, METRICS_FILE};
use irlrec::policy::{Actor, Critic, CriticInput};
use irlrec::seeding::{self, tags};
use irlrec::{ACTION_DIM, OBS_DIM, PAIR_DIM};

const SEED: u64 = 2024;
const EVAL_EPISODES: usize = 200;

enum Verdict {
    Pass(String),
    Fail(String),
    Skip(String),
}

fn verdict(ok: bool, detail: String) -> Verdict {
    if ok {
        Verdict::Pass(detail)
    } else {
        Verdict::Fail(detail)
    }
}

fn heavy_skipped() -> bool {
    std::env::var("IRLREC_ACCEPT_SKIP_HEAVY").is_ok_and(|v| v == "1")
}

fn normal_matrix(rows: usize, cols: usize, scale: f64, rng: &mut seeding::Rng) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || {
        let z: f64 = StandardNormal.sample(rng);
        scale * z
    })
}

// 1. Gradient exactness.

const FD_H: f64 = 1e-6;
const FD_TOL: f64 = 1e-5;

fn fd_discriminator() -> f64 {
    let mut rng = seeding::rng(11);
    let disc = Discriminator::new(16, &mut rng).unwrap();
    let learner = normal_matrix(7, PAIR_DIM, 0.5, &mut rng);
    let expert = normal_matrix(5, PAIR_DIM, 0.5, &mut rng);
    let (_, grads) = disc.loss_and_grads(learner.view(), expert.view()).unwrap();
    finite_diff_check(
        |m: &Mlp| {
            let probe = Discriminator { mlp: m.clone(), clip_eps: disc.clip_eps };
            probe.loss(learner.view(), expert.view()).unwrap()
        },
        &disc.mlp,
        &grads,
        60,
        FD_H,
        FD_TOL,
        1,
    )
    .unwrap()
    .max_rel_error
}

fn fd_ppo(variant: PpoVariant) -> f64 {
    let mut rng = seeding::rng(12);
    let actor = Actor::new(16, &mut rng).unwrap();
    let critic = Critic::new(16, CriticInput::State, &mut rng).unwrap();
    let n = 6;
    let obs = normal_matrix(n, OBS_DIM, 0.5, &mut rng);
    let means = actor.mlp.predict(obs.view()).unwrap();
    let actions = &means + &normal_matrix(n, ACTION_DIM, 0.6, &mut rng);
    let current = actor.log_prob_batch(obs.view(), actions.view()).unwrap();
    // Offsets put ratios inside and outside the clip band, away from its edges.
    let offsets = [0.0, 0.35, -0.4, 0.08, -0.05, 0.6];
    let log_prob_old: Vec<f64> = current.iter().zip(offsets).map(|(l, o)| l + o).collect();
    let old_means = &means + &normal_matrix(n, ACTION_DIM, 0.05, &mut rng);
    let old_log_std: Vec<f64> = actor.log_std.iter().map(|l| l + 0.1).collect();
    let advantages = [0.7, -1.1, 1.4, -0.3, 0.9, -2.0];
    let returns = [0.2, -0.4, 1.0, 0.0, 0.5, 0.3];
    let mb = Minibatch {
        obs: obs.view(),
        actions: actions.view(),
        log_prob_old: &log_prob_old,
        advantages: &advantages,
        returns: &returns,
        old_means: Some(old_means.view()),
        old_log_std: Some(&old_log_std),
    };
    let cfg = PpoConfig { variant, entropy_coef: 0.01, ..PpoConfig::default() };
    let beta = 0.7;
    let (_, actor_grads, critic_grads) = minibatch_loss_and_grads(&actor, &critic, &mb, &cfg, beta).unwrap();
    let a = finite_diff_check(
        |p: &Actor| minibatch_loss_and_grads(p, &critic, &mb, &cfg, beta).unwrap().0.total,
        &actor,
        &actor_grads,
        60,
        FD_H,
        FD_TOL,
        2,
    )
    .unwrap();
    let c = finite_diff_check(
        |m: &Mlp| {
            let probe = Critic { mlp: m.clone(), input_mode: CriticInput::State };
            minibatch_loss_and_grads(&actor, &probe, &mb, &cfg, beta).unwrap().0.total
        },
        &critic.mlp,
        &critic_grads,
        60,
        FD_H,
        FD_TOL,
        3,
    )
    .unwrap();
    a.max_rel_error.max(c.max_rel_error)
}

fn fd_ddpg_critic() -> f64 {
    let mut rng = seeding::rng(13);
    let nets = DdpgNets::new(16, &mut rng).unwrap();
    let n = 8;
    let batch = DdpgBatch {
        obs: normal_matrix(n, OBS_DIM, 1.0, &mut rng),
        actions: normal_matrix(n, ACTION_DIM, 0.5, &mut rng).mapv(f64::tanh),
        rewards: (0..n).map(|i| (i % 11) as f64).collect(),
        next_obs: normal_matrix(n, OBS_DIM, 1.0, &mut rng),
        dones: (0..n).map(|i| i % 3 == 0).collect(),
    };
    let targets = critic_targets(&nets, &batch, 0.95).unwrap();
    let (_, grads) = critic_loss_and_grads(&nets.critic, &batch, &targets).unwrap();
    finite_diff_check(
        |c: &Mlp| critic_loss_and_grads(c, &batch, &targets).unwrap().0,
        &nets.critic,
        &grads,
        60,
        FD_H,
        FD_TOL,
        4,
    )
    .unwrap()
    .max_rel_error
}

fn criterion_1() -> Verdict {
    let start = Instant::now();
    let errors = [
        ("disc", fd_discriminator()),
        ("ppo_clip", fd_ppo(PpoVariant::Clip)),
        ("ppo_kl", fd_ppo(PpoVariant::AdaptiveKl)),
        ("ddpg_critic", fd_ddpg_critic()),
    ];
    let secs = start.elapsed().as_secs_f64();
    let ok = errors.iter().all(|(_, e)| *e < FD_TOL) && secs < 10.0;
    let listed: Vec<String> = errors.iter().map(|(n, e)| format!("{n}={e:.2e}")).collect();
    verdict(ok, format!("max rel error {} (< 1e-5), {secs:.2}s (< 10s)", listed.join(" ")))
}

// 2. GAE against the explicit truncated sum.

fn gae_oracle(rewards: &[f64], values: &[f64], bootstrap: f64, dones: &[bool], gamma: f64, lambda: f64) -> Vec<f64> {
    let n = rewards.len();
    let value_at = |t: usize| if t < n { values[t] } else { bootstrap };
    let delta = |t: usize| rewards[t] + gamma * value_at(t + 1) * if dones[t] { 0.0 } else { 1.0 } - values[t];
    (0..n)
        .map(|t| {
            let mut sum = 0.0;
            for l in 0..n - t {
                // (γλ)^l, zeroed once an episode boundary lies between t and t+l.
                if (t..t + l).any(|k| dones[k]) {
                    break;
                }
                sum += (gamma * lambda).powi(l as i32) * delta(t + l);
            }
            sum
        })
        .collect()
}

fn criterion_2() -> Verdict {
    let start = Instant::now();
    let mut rng = seeding::rng(21);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let n = rng.random_range(1..=64);
        let rewards: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let values: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        let dones: Vec<bool> = (0..n).map(|_| rng.random_bool(0.1)).collect();
        let bootstrap = rng.random_range(-2.0..2.0);
        let gamma = rng.random_range(0.8..1.0);
        let lambda = rng.random_range(0.0..=1.0);
        let (adv, returns) = compute_gae(&rewards, &values, bootstrap, &dones, gamma, lambda).unwrap();
        let oracle = gae_oracle(&rewards, &values, bootstrap, &dones, gamma, lambda);
        for t in 0..n {
            worst = worst.max((adv[t] - oracle[t]).abs());
            worst = worst.max((returns[t] - (oracle[t] + values[t])).abs());
        }
    }
    let secs = start.elapsed().as_secs_f64();
    verdict(worst <= 1e-10 && secs < 5.0, format!("max |diff| {worst:.2e} (<= 1e-10), {secs:.2}s (< 5s)"))
}

// 3. Clip arithmetic.

fn criterion_3() -> Verdict {
    let cases = [(1.5, 1.0, 1.2), (0.5, -1.0, -0.8), (1.0, 0.37, 0.37), (1.0, -2.5, -2.5)];
    let mut ok = true;
    let mut detail = Vec::new();
    for (ratio, adv, expected) in cases {
        let got = ppo_clip_objective(&[ratio], &[adv], 0.2).unwrap();
        ok &= got == expected;
        detail.push(format!("r={ratio},A={adv}->{got}"));
    }
    verdict(ok, detail.join(" "))
}

// 4. Discriminator separability.

fn clusters(n: usize, rng: &mut seeding::Rng) -> (Array2<f64>, Array2<f64>) {
    let mut make = |sign: f64| {
        let mut p = Array2::zeros((n, PAIR_DIM));
        for i in 0..n {
            for j in 0..OBS_DIM {
                p[[i, j]] = if rng.random_bool(0.5) { 1.0 } else { 0.0 };
            }
            for j in 0..ACTION_DIM {
                let z: f64 = StandardNormal.sample(rng);
                p[[i, OBS_DIM + j]] = 0.2 * z;
            }
            p[[i, OBS_DIM]] += sign;
        }
        p
    };
    let learner = make(-1.0);
    let expert = make(1.0);
    (learner, expert)
}

fn criterion_4() -> Verdict {
    let mut rng = seeding::rng(41);
    let mut disc = Discriminator::new(irlrec::discriminator::DEFAULT_HIDDEN, &mut rng).unwrap();
    let mut adam = irlrec::numeric::AdamState::new(&disc.mlp);
    let (train_l, train_e) = clusters(256, &mut rng);
    let (held_l, held_e) = clusters(500, &mut rng);
    let mut steps = 0;
    let mut accuracy = disc.accuracy(held_l.view(), held_e.view()).unwrap();
    while steps < 500 && accuracy < 0.95 {
        disc.update(&mut adam, train_l.view(), train_e.view(), 3e-3).unwrap();
        steps += 1;
        accuracy = disc.accuracy(held_l.view(), held_e.view()).unwrap();
    }

    let mut zero = Discriminator::new(8, &mut rng).unwrap();
    for layer in &mut zero.mlp.layers {
        layer.weights.fill(0.0);
        layer.bias.fill(0.0);
    }
    let any = normal_matrix(9, PAIR_DIM, 1.0, &mut rng);
    let half_loss = zero.loss(any.view(), any.view()).unwrap();
    let gap = (half_loss - 2.0 * std::f64::consts::LN_2).abs();
    verdict(
        accuracy >= 0.95 && gap <= 1e-12,
        format!("held-out accuracy {accuracy:.3} after {steps} steps (>= 0.95 within 500); |L(D=0.5) - 2ln2| = {gap:.1e}"),
    )
}

// 5. OU statistics.

fn criterion_5() -> Verdict {
    let mut ou = OuState::new(ACTION_DIM, 0.15, 0.0, 0.0, 1.0);
    ou.x = vec![1.0; ACTION_DIM];
    let mut rng = seeding::rng(51);
    let mut expected = 1.0;
    let mut decay_ok = true;
    for _ in 0..50 {
        ou.next(&mut rng);
        expected *= 0.85;
        decay_ok &= ou.x.iter().all(|x| (x - expected).abs() <= 1e-14 * expected);
    }

    let (theta, sigma) = (0.15, 0.2);
    let mut ou = OuState::new(1, theta, 0.0, sigma, 1.0);
    for _ in 0..1000 {
        ou.next(&mut rng);
    }
    let n = 100_000;
    let (mut s1, mut s2) = (0.0, 0.0);
    for _ in 0..n {
        let x = ou.next(&mut rng)[0];
        s1 += x;
        s2 += x * x;
    }
    let mean = s1 / n as f64;
    let std = (s2 / n as f64 - mean * mean).sqrt();
    let closed = sigma / (1.0 - (1.0 - theta) * (1.0 - theta)).sqrt();
    let rel = (std - closed).abs() / closed;
    verdict(
        decay_ok && rel < 0.1,
        format!("geometric decay exact: {decay_ok}; stationary std {std:.4} vs {closed:.4} (rel {rel:.3} < 0.1)"),
    )
}

// 6 and 7. Desk-scale expert and imitation.

struct ExpertRun {
    nets: DdpgNets,
    expert_ctr: f64,
    random_ctr: f64,
}

fn env_config() -> EnvConfig {
    EnvConfig::default()
}

fn eval_seed() -> u64 {
    seeding::derive(SEED, tags::EVAL, 99)
}

fn random_ctr() -> f64 {
    let env = Environment::new(env_config()).unwrap();
    evaluate(&RandomPolicy, &env, EVAL_EPISODES, eval_seed(), false).unwrap().mean_ctr
}

fn criterion_6(slot: &mut Option<ExpertRun>) -> Verdict {
    let cfg = DdpgConfig::default();
    let start = Instant::now();
    let (nets, curve) = train_expert_with(&env_config(), &cfg, SEED, |_, _, _| {}).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let env = Environment::new(env_config()).unwrap();
    let expert_ctr = evaluate(&nets.actor, &env, EVAL_EPISODES, eval_seed(), true).unwrap().mean_ctr;
    let random_ctr = random_ctr();
    let ok = curve.episodes_run <= 20_000 && secs < 1800.0 && expert_ctr >= 0.6 && expert_ctr >= 3.0 * random_ctr;
    let detail = format!(
        "expert ctr {expert_ctr:.3} (>= 0.6), random {random_ctr:.3} (ratio {:.2} >= 3), {} episodes (<= 20000), {:.0}s (< 1800s)",
        expert_ctr / random_ctr,
        curve.episodes_run,
        secs
    );
    *slot = Some(ExpertRun { nets, expert_ctr, random_ctr });
    verdict(ok, detail)
}

fn criterion_7(expert: Option<&ExpertRun>) -> Verdict {
    let Some(run) = expert else {
        return Verdict::Fail("no expert available (criterion 6 did not produce one)".into());
    };
    let dir = tempfile::tempdir().unwrap();
    let data = collect_expert(&run.nets.actor, &env_config(), 20_000, seeding::derive(SEED, tags::COLLECT, 0)).unwrap();
    let cfg = RunConfig {
        env: env_config(),
        iterations: 200,
        episodes_per_iteration: 100,
        seed: SEED,
        out_dir: Some(dir.path().to_path_buf()),
        ..RunConfig::default()
    };
    let start = Instant::now();
    let outcome = train_with_expert(&cfg, &data, |_| {}).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let learner_ctr = outcome.final_ctr(20);
    let (js_first, js_last) = (outcome.occupancy_js[0], outcome.occupancy_js[199]);
    let ok = data.len() == 20_000
        && secs < 3600.0
        && learner_ctr >= 0.8 * run.expert_ctr
        && learner_ctr >= 3.0 * run.random_ctr
        && js_last < js_first;
    verdict(
        ok,
        format!(
            "learner ctr {learner_ctr:.3} vs 0.8*expert {:.3} and 3*random {:.3}; js {js_first:.4} -> {js_last:.4}; {secs:.0}s (< 3600s)",
            0.8 * run.expert_ctr,
            3.0 * run.random_ctr
        ),
    )
}

// 8 to 10 use a cheap expert: an untrained actor is enough to exercise the pipeline.

fn cheap_expert() -> ExpertDataset {
    let nets = DdpgNets::new(32, &mut seeding::rng(81)).unwrap();
    collect_expert(&nets.actor, &env_config(), 1000, 82).unwrap()
}

fn small_run(iterations: usize, dir: Option<&Path>) -> RunConfig {
    RunConfig {
        env: env_config(),
        policy_hidden: 32,
        disc_hidden: 32,
        iterations,
        episodes_per_iteration: 4,
        eval_episodes: 5,
        checkpoint_every: 0,
        seed: SEED,
        out_dir: dir.map(Path::to_path_buf),
        ..RunConfig::default()
    }
}

fn criterion_8(expert: &ExpertDataset) -> Verdict {
    let cases = [(0.02, 2.0), (0.005, 0.5)];
    let rule_ok = cases.iter().all(|&(d, factor)| update_beta(1.0, d, 0.01, 1.5, 2.0) == factor);

    let mut cfg = small_run(50, None);
    cfg.ppo.variant = PpoVariant::AdaptiveKl;
    let outcome = train_with_expert(&cfg, expert, |_| {}).unwrap();
    let finite = outcome.stats.len() == 50 && outcome.stats.iter().all(|s| s.is_finite());
    let beta = outcome.learner.beta;
    verdict(
        rule_ok && finite && beta.is_finite() && beta > 0.0,
        format!("beta rule cases ok: {rule_ok}; 50 iterations with finite metrics: {finite}; final beta {beta:.4}"),
    )
}

fn criterion_9(expert: &ExpertDataset) -> Verdict {
    let lambdas = [0.95, 0.97, 0.99];
    let eps = [0.1, 0.2, 0.3];
    let run = |dir: &Path| {
        let cfg = small_run(3, Some(dir));
        let rows = run_grid(&cfg, expert, &lambdas, &eps, |_| {}).unwrap();
        let table = std::fs::read(dir.join("grid.csv")).unwrap();
        (rows, table)
    };
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let (rows_a, table_a) = run(a.path());
    let (rows_b, table_b) = run(b.path());
    let text = String::from_utf8_lossy(&table_a);
    let data_lines = text.lines().filter(|l| !l.starts_with('#')).count() - 1;
    let cells: Vec<(f64, f64)> = rows_a.iter().map(|r| (r.gae_lambda, r.clip_eps)).collect();
    let expected: Vec<(f64, f64)> = lambdas.iter().flat_map(|&l| eps.iter().map(move |&e| (l, e))).collect();
    let ok = rows_a.len() == 9 && data_lines == 9 && cells == expected && rows_a == rows_b && table_a == table_b;
    verdict(
        ok,
        format!("{} rows, {data_lines} table lines, all cells present: {}, repeat identical: {}", rows_a.len(), cells == expected, table_a == table_b),
    )
}

fn criterion_10(expert: &ExpertDataset) -> Verdict {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for dir in [a.path(), b.path()] {
        train_with_expert(&small_run(4, Some(dir)), expert, |_| {}).unwrap();
    }
    let csv_a = std::fs::read(a.path().join(METRICS_FILE)).unwrap();
    let csv_b = std::fs::read(b.path().join(METRICS_FILE)).unwrap();
    let csv_ok = !csv_a.is_empty() && csv_a == csv_b;

    let path = a.path().join(CHECKPOINT_FILE);
    let bytes = std::fs::read(&path).unwrap();
    let arrays = load_checkpoint(&path).unwrap();
    let reencoded = encode(&arrays).unwrap();
    let copy = a.path().join("copy.irlr");
    save_checkpoint(&copy, &arrays).unwrap();
    let bits = |xs: &[irlrec::checkpoint::NamedArray]| -> Vec<(String, Vec<usize>, Vec<u64>)> {
        xs.iter().map(|x| (x.name.clone(), x.dims.clone(), x.data.iter().map(|v| v.to_bits()).collect())).collect()
    };
    let round_trip = reencoded == bytes
        && std::fs::read(&copy).unwrap() == bytes
        && bits(&decode(&bytes).unwrap()) == bits(&arrays);

    let mut guarded = true;
    for pos in [8, bytes.len() / 2, bytes.len() - 6] {
        let mut corrupt = bytes.clone();
        corrupt[pos] ^= 0x10;
        guarded &= decode(&corrupt).is_err();
    }
    verdict(
        csv_ok && round_trip && guarded,
        format!("metrics csv identical: {csv_ok}; checkpoint bit-exact: {round_trip}; corruption rejected: {guarded}"),
    )
}

fn run_criterion(id: usize, f: impl FnOnce() -> Verdict) -> bool {
    let start = Instant::now();
    let outcome = catch_unwind(AssertUnwindSafe(f));
    let secs = start.elapsed().as_secs_f64();
    let (tag, detail, ok) = match outcome {
        Ok(Verdict::Pass(d)) => ("PASS", d, true),
        Ok(Verdict::Fail(d)) => ("FAIL", d, false),
        Ok(Verdict::Skip(d)) => ("SKIP", d, true),
        Err(e) => {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            ("FAIL", format!("panicked: {msg}"), false)
        }
    };
    println!("criterion {id:>2}: {tag} [{secs:.1}s] {detail}");
    ok
}

#[test]
fn acceptance() {
    let mut results = Vec::new();
    results.push(run_criterion(1, criterion_1));
    results.push(run_criterion(2, criterion_2));
    results.push(run_criterion(3, criterion_3));
    results.push(run_criterion(4, criterion_4));
    results.push(run_criterion(5, criterion_5));

    let mut expert_run = None;
    if heavy_skipped() {
        results.push(run_criterion(6, || Verdict::Skip("IRLREC_ACCEPT_SKIP_HEAVY=1".into())));
        results.push(run_criterion(7, || Verdict::Skip("IRLREC_ACCEPT_SKIP_HEAVY=1".into())));
    } else {
        results.push(run_criterion(6, || criterion_6(&mut expert_run)));
        results.push(run_criterion(7, || criterion_7(expert_run.as_ref())));
    }

    let cheap = cheap_expert();
    results.push(run_criterion(8, || criterion_8(&cheap)));
    results.push(run_criterion(9, || criterion_9(&cheap)));
    results.push(run_criterion(10, || criterion_10(&cheap)));

    let failed: Vec<usize> = results.iter().enumerate().filter(|(_, ok)| !**ok).map(|(i, _)| i + 1).collect();
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
