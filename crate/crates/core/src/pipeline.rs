//! Adversarial imitation training loop, evaluation and diagnostics.

use std::path::{Path, PathBuf};

use ndarray::{Array2, ArrayView2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::checkpoint::{save_checkpoint, write_atomic, NamedArray};
use crate::discriminator::{make_pairs, Discriminator};
use crate::envsim::{EnvConfig, Environment, PAGE_SLOTS};
use crate::expert::ExpertDataset;
use crate::metrics::{write_grid_table, write_metrics, GridRow, IterationStats};
use crate::numeric::{AdamState, Mlp};
use crate::optim::{estimate_advantages, ppo_update, PpoConfig, PpoLearner, RolloutBatch};
use crate::policy::{ActMode, Actor, Critic, CriticInput};
use crate::seeding::{self, tags};
use crate::{Error, Result, ACTION_DIM, OBS_DIM, PAIR_DIM};

/// Anything that maps an observation to a page.
pub trait Policy {
    fn action(&self, obs: &[f64], deterministic: bool, rng: &mut seeding::Rng) -> Result<Vec<f64>>;
}

impl Policy for Actor {
    fn action(&self, obs: &[f64], deterministic: bool, rng: &mut seeding::Rng) -> Result<Vec<f64>> {
        let mode = if deterministic { ActMode::Deterministic } else { ActMode::Stochastic };
        Ok(self.act(obs, mode, rng)?.0)
    }
}

/// A deterministic network policy (the DDPG actor). Ignores the flag.
impl Policy for Mlp {
    fn action(&self, obs: &[f64], _deterministic: bool, _rng: &mut seeding::Rng) -> Result<Vec<f64>> {
        self.predict_one(obs)
    }
}

/// Uniform pages in `[-1, 1]^27`.
#[derive(Debug, Clone, Copy, Default)]
pub struct RandomPolicy;

impl Policy for RandomPolicy {
    fn action(&self, _obs: &[f64], _deterministic: bool, rng: &mut seeding::Rng) -> Result<Vec<f64>> {
        Ok((0..ACTION_DIM).map(|_| rng.random_range(-1.0..=1.0)).collect())
    }
}

/// `Σ rewards / (10 · steps)` for one episode.
pub fn ctr(rewards: &[u32]) -> Result<f64> {
    if rewards.is_empty() {
        return Err(Error::invalid("ctr of an episode with no steps"));
    }
    if let Some(r) = rewards.iter().find(|&&r| r > PAGE_SLOTS) {
        return Err(Error::invalid(format!("reward {r} exceeds {PAGE_SLOTS} clicks")));
    }
    let total: u32 = rewards.iter().sum();
    Ok(total as f64 / (PAGE_SLOTS as f64 * rewards.len() as f64))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub mean_ctr: f64,
    /// Normal-approximation 95% half-width, `1.96 · σ / √n`.
    pub half_width: f64,
    pub mean_episode_reward: f64,
    /// Total reward over total steps.
    pub mean_step_reward: f64,
    pub mean_length: f64,
    pub episode_ctr: Vec<f64>,
    pub episode_rewards: Vec<u32>,
}

/// Sample mean and 95% half-width (population std, as a plain descriptive).
pub fn mean_and_half_width(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, 1.96 * var.sqrt() / n.sqrt())
}

/// Seed of the `i`-th evaluation user under `seed`. Policies evaluated with
/// the same seed meet the same users.
pub fn eval_episode_seed(seed: u64, episode: usize) -> u64 {
    seeding::derive(seed, tags::EVAL, episode as u64)
}

/// Rolls `n_episodes` full episodes without learning.
pub fn evaluate(
    policy: &dyn Policy,
    env: &Environment,
    n_episodes: usize,
    seed: u64,
    deterministic: bool,
) -> Result<Evaluation> {
    if n_episodes == 0 {
        return Err(Error::invalid("evaluation needs at least one episode"));
    }
    let mut episode_ctr = Vec::with_capacity(n_episodes);
    let mut episode_rewards = Vec::with_capacity(n_episodes);
    let mut total_steps = 0usize;
    for i in 0..n_episodes {
        let episode_seed = eval_episode_seed(seed, i);
        let (mut state, mut obs) = env.reset(episode_seed);
        let mut rng = seeding::derived_rng(episode_seed, tags::EVAL, 1);
        let mut rewards = Vec::new();
        while !state.done {
            let action = policy.action(&obs, deterministic, &mut rng)?;
            let step = env.step(&mut state, &action)?;
            rewards.push(step.reward);
            obs = step.observation;
        }
        total_steps += rewards.len();
        episode_ctr.push(ctr(&rewards)?);
        episode_rewards.push(rewards.iter().sum());
    }
    let (mean_ctr, half_width) = mean_and_half_width(&episode_ctr);
    let total_reward: u32 = episode_rewards.iter().sum();
    Ok(Evaluation {
        mean_ctr,
        half_width,
        mean_episode_reward: total_reward as f64 / n_episodes as f64,
        mean_step_reward: total_reward as f64 / total_steps as f64,
        mean_length: total_steps as f64 / n_episodes as f64,
        episode_ctr,
        episode_rewards,
    })
}

/// Everything one adversarial imitation run needs.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub env: EnvConfig,
    pub ppo: PpoConfig,
    /// Hidden width of the learner's actor and critic.
    pub policy_hidden: usize,
    pub critic_input: CriticInput,
    pub disc_lr: f64,
    pub disc_hidden: usize,
    pub disc_updates: usize,
    pub iterations: usize,
    pub episodes_per_iteration: usize,
    pub eval_episodes: usize,
    /// Checkpoint period in iterations; 0 writes only the final checkpoint.
    pub checkpoint_every: usize,
    pub expert_path: Option<PathBuf>,
    pub seed: u64,
    pub out_dir: Option<PathBuf>,
    pub js_bins: usize,
    pub projection_seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            env: EnvConfig::default(),
            ppo: PpoConfig::default(),
            policy_hidden: crate::policy::DEFAULT_HIDDEN,
            critic_input: CriticInput::State,
            disc_lr: 0.003,
            disc_hidden: crate::discriminator::DEFAULT_HIDDEN,
            disc_updates: 1,
            iterations: 1000,
            episodes_per_iteration: 100,
            eval_episodes: 20,
            checkpoint_every: 50,
            expert_path: None,
            seed: 0,
            out_dir: None,
            js_bins: 16,
            projection_seed: 0,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.env.validate()?;
        self.ppo.validate()?;
        for (name, v) in [
            ("run.iterations", self.iterations),
            ("run.episodes_per_iteration", self.episodes_per_iteration),
            ("run.eval_episodes", self.eval_episodes),
            ("ppo.hidden", self.policy_hidden),
            ("run.disc_hidden", self.disc_hidden),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be >= 1")));
            }
        }
        if self.js_bins < 2 {
            return Err(Error::Config("run.js_bins must be >= 2".into()));
        }
        if !(self.disc_lr.is_finite() && self.disc_lr >= 0.0) {
            return Err(Error::Config(format!("run.disc_lr must be >= 0, got {}", self.disc_lr)));
        }
        Ok(())
    }
}

/// One iteration's worth of learner experience.
#[derive(Debug, Clone)]
pub struct Rollout {
    pub batch: RolloutBatch,
    /// Discriminator inputs: observation plus the page actually shown
    /// (the sampled action clipped to `[-1, 1]`).
    pub pairs: Array2<f64>,
    pub episode_ctr: Vec<f64>,
    pub episode_rewards: Vec<u32>,
}

/// Seed of episode `episode` in iteration `iteration` of a run.
pub fn rollout_episode_seed(seed: u64, iteration: usize, episode: usize) -> u64 {
    seeding::derive(seeding::derive(seed, tags::ROLLOUT, iteration as u64), tags::ROLLOUT, episode as u64)
}

/// Runs `n_episodes` full episodes with stochastic actions and scores every
/// step with the critic and the discriminator.
pub fn rollout(
    env: &Environment,
    actor: &Actor,
    critic: &Critic,
    disc: &Discriminator,
    n_episodes: usize,
    seed: u64,
    iteration: usize,
) -> Result<Rollout> {
    if n_episodes == 0 {
        return Err(Error::invalid("rollout needs at least one episode"));
    }
    let mut obs_rows: Vec<f64> = Vec::new();
    let mut action_rows: Vec<f64> = Vec::new();
    let mut log_prob_old = Vec::new();
    let mut env_reward = Vec::new();
    let mut dones = Vec::new();
    let mut episodes = Vec::with_capacity(n_episodes);
    let mut episode_ctr = Vec::with_capacity(n_episodes);
    let mut episode_rewards = Vec::with_capacity(n_episodes);
    for ep in 0..n_episodes {
        let episode_seed = rollout_episode_seed(seed, iteration, ep);
        let (mut state, mut obs) = env.reset(episode_seed);
        let mut rng = seeding::derived_rng(episode_seed, tags::ROLLOUT, 0);
        let start = log_prob_old.len();
        let mut rewards = Vec::new();
        while !state.done {
            let (action, lp) = actor.act(&obs, ActMode::Stochastic, &mut rng)?;
            let step = env.step(&mut state, &action)?;
            obs_rows.extend_from_slice(&obs);
            action_rows.extend_from_slice(&action);
            log_prob_old.push(lp);
            env_reward.push(step.reward as f64 / PAGE_SLOTS as f64);
            dones.push(step.done);
            rewards.push(step.reward);
            obs = step.observation;
        }
        episodes.push((start, rewards.len()));
        episode_ctr.push(ctr(&rewards)?);
        episode_rewards.push(rewards.iter().sum());
    }
    let n = log_prob_old.len();
    let obs = Array2::from_shape_vec((n, OBS_DIM), obs_rows).map_err(|e| Error::shape(e.to_string()))?;
    let actions =
        Array2::from_shape_vec((n, ACTION_DIM), action_rows).map_err(|e| Error::shape(e.to_string()))?;
    let pairs = make_pairs(obs.view(), actions.mapv(|a| a.clamp(-1.0, 1.0)).view())?;
    let bonus_reward = disc.bonuses(pairs.view())?.to_vec();
    let critic_actions = (critic.input_mode == CriticInput::StateAction).then(|| actions.view());
    let values = critic.values(obs.view(), critic_actions)?.to_vec();
    Ok(Rollout {
        batch: RolloutBatch {
            obs,
            actions,
            log_prob_old,
            env_reward,
            bonus_reward,
            values,
            dones,
            episodes,
        },
        pairs,
        episode_ctr,
        episode_rewards,
    })
}

/// `KL(P‖M) + KL(Q‖M)` with `M = (P + Q)/2`; zero-probability terms drop out.
pub fn js_from_histograms(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() || p.is_empty() {
        return Err(Error::shape("histograms must be nonempty and equally long"));
    }
    let mut total = 0.0;
    for (&pi, &qi) in p.iter().zip(q) {
        let m = (pi + qi) / 2.0;
        if pi > 0.0 {
            total += pi * (pi / m).ln();
        }
        if qi > 0.0 {
            total += qi * (qi / m).ln();
        }
    }
    Ok(total)
}

/// Fixed `118 × 2` Gaussian projection for the occupancy diagnostic.
pub fn occupancy_projection(projection_seed: u64) -> Array2<f64> {
    let mut rng = seeding::derived_rng(projection_seed, tags::PROJECTION, 0);
    Array2::from_shape_simple_fn((PAIR_DIM, 2), || rng.sample::<f64, _>(StandardNormal))
}

/// Divergence between two sets of `(s, a)` pairs, estimated on a shared
/// `bins × bins` histogram of a seeded 2-D random projection.
pub fn occupancy_js(
    learner_pairs: ArrayView2<f64>,
    expert_pairs: ArrayView2<f64>,
    bins: usize,
    projection_seed: u64,
) -> Result<f64> {
    if learner_pairs.nrows() == 0 || expert_pairs.nrows() == 0 {
        return Err(Error::invalid("occupancy divergence needs two nonempty sets"));
    }
    if learner_pairs.ncols() != PAIR_DIM || expert_pairs.ncols() != PAIR_DIM {
        return Err(Error::shape(format!("pairs must have {PAIR_DIM} columns")));
    }
    if bins < 2 {
        return Err(Error::invalid("bins must be >= 2"));
    }
    let proj = occupancy_projection(projection_seed);
    let a = learner_pairs.dot(&proj);
    let b = expert_pairs.dot(&proj);
    let mut lo = [f64::INFINITY; 2];
    let mut hi = [f64::NEG_INFINITY; 2];
    for row in a.rows().into_iter().chain(b.rows()) {
        for d in 0..2 {
            lo[d] = lo[d].min(row[d]);
            hi[d] = hi[d].max(row[d]);
        }
    }
    if !(lo.iter().chain(&hi).all(|v| v.is_finite())) {
        return Err(Error::NonFinite("non-finite state-action pair".into()));
    }
    let cell = |v: f64, d: usize| -> usize {
        let width = hi[d] - lo[d];
        if width <= 0.0 {
            return 0;
        }
        (((v - lo[d]) / width * bins as f64) as usize).min(bins - 1)
    };
    let histogram = |m: &Array2<f64>| -> Vec<f64> {
        let mut h = vec![0.0; bins * bins];
        for row in m.rows() {
            h[cell(row[0], 0) * bins + cell(row[1], 1)] += 1.0;
        }
        let n = m.nrows() as f64;
        h.iter_mut().for_each(|c| *c /= n);
        h
    };
    js_from_histograms(&histogram(&a), &histogram(&b))
}

/// Artifacts of a finished run.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub stats: Vec<IterationStats>,
    /// Occupancy divergence between each iteration's rollout and the expert data.
    pub occupancy_js: Vec<f64>,
    pub learner: PpoLearner,
    pub disc: Discriminator,
    pub events: Vec<String>,
}

impl RunOutcome {
    /// Mean rollout CTR over the last `k` iterations.
    pub fn final_ctr(&self, k: usize) -> f64 {
        let tail = &self.stats[self.stats.len().saturating_sub(k)..];
        tail.iter().map(|s| s.ctr).sum::<f64>() / tail.len() as f64
    }
}

pub const METRICS_FILE: &str = "metrics.csv";
pub const EVENTS_FILE: &str = "events.log";
pub const CHECKPOINT_FILE: &str = "checkpoint.irlr";
pub const JS_FILE: &str = "occupancy_js.csv";

/// Loads the configured expert dataset and trains.
pub fn train_from_config(config: &RunConfig) -> Result<RunOutcome> {
    let path = config
        .expert_path
        .as_ref()
        .ok_or_else(|| Error::Config("run.expert_path is not set".into()))?;
    if !path.exists() {
        return Err(Error::Config(format!("expert dataset {} does not exist", path.display())));
    }
    let expert = ExpertDataset::from_arrays(&crate::checkpoint::load_checkpoint(path)?)?;
    train_with_expert(config, &expert, |_| {})
}

fn run_arrays(learner: &PpoLearner, disc: &Discriminator, iteration: usize) -> Vec<NamedArray> {
    let mut arrays = learner.actor.to_arrays("actor");
    arrays.extend(learner.critic.to_arrays("critic"));
    arrays.extend(disc.to_arrays("disc"));
    arrays.push(NamedArray::vector("run.state", vec![iteration as f64, learner.beta]));
    arrays
}

fn write_events(dir: Option<&Path>, events: &[String]) -> Result<()> {
    if let Some(dir) = dir {
        let mut text = events.join("\n");
        text.push('\n');
        write_atomic(&dir.join(EVENTS_FILE), text.as_bytes())?;
    }
    Ok(())
}

fn write_js(dir: &Path, js: &[f64]) -> Result<()> {
    let mut text = String::from("iteration,occupancy_js\n");
    for (i, v) in js.iter().enumerate() {
        text.push_str(&format!("{},{}\n", i + 1, crate::metrics::format_g6(*v)));
    }
    write_atomic(&dir.join(JS_FILE), text.as_bytes())
}

/// Training loop: per iteration, roll out the learner, update the
/// discriminator on learner versus expert pairs, re-score the rollout with
/// the updated discriminator, then run the PPO inner loop on GAE advantages.
pub fn train_with_expert<F: FnMut(&IterationStats)>(
    config: &RunConfig,
    expert: &ExpertDataset,
    mut on_iteration: F,
) -> Result<RunOutcome> {
    config.validate()?;
    expert.validate()?;
    let env = Environment::new(config.env.clone())?;
    let out_dir = config.out_dir.as_deref();
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir)?;
    }
    let expert_pairs = make_pairs(expert.states.view(), expert.actions.view())?;

    let mut init_rng = seeding::derived_rng(config.seed, tags::INIT, 0);
    let actor = Actor::new(config.policy_hidden, &mut init_rng)?;
    let critic = Critic::new(config.policy_hidden, config.critic_input, &mut init_rng)?;
    let mut disc = Discriminator::new(config.disc_hidden, &mut init_rng)?;
    let mut disc_adam = AdamState::new(&disc.mlp);
    let mut learner = PpoLearner::new(actor, critic, &config.ppo);

    let mut stats = Vec::with_capacity(config.iterations);
    let mut js = Vec::with_capacity(config.iterations);
    let mut events = vec![format!(
        "run seed={} iterations={} episodes_per_iteration={} disc_updates={} projection_seed={}",
        config.seed, config.iterations, config.episodes_per_iteration, config.disc_updates, config.projection_seed
    )];

    for iteration in 1..=config.iterations {
        let result = (|| -> Result<(IterationStats, f64)> {
            events.push(format!("iteration {iteration} rollout"));
            let mut ro = rollout(
                &env,
                &learner.actor,
                &learner.critic,
                &disc,
                config.episodes_per_iteration,
                config.seed,
                iteration,
            )?;
            let n = ro.batch.len();

            let mut sample_rng = seeding::derived_rng(config.seed, tags::EXPERT_SAMPLE, iteration as u64);
            let mut disc_loss = f64::NAN;
            for u in 1..=config.disc_updates {
                let idx: Vec<usize> = (0..n).map(|_| sample_rng.random_range(0..expert_pairs.nrows())).collect();
                let expert_batch = expert_pairs.select(Axis(0), &idx);
                events.push(format!("iteration {iteration} disc_update {u}"));
                disc_loss = disc.update(&mut disc_adam, ro.pairs.view(), expert_batch.view(), config.disc_lr)?;
            }
            if config.disc_updates > 0 {
                ro.batch.bonus_reward = disc.bonuses(ro.pairs.view())?.to_vec();
            }

            events.push(format!("iteration {iteration} ppo_update"));
            let (adv, ret) = estimate_advantages(&ro.batch, &config.ppo)?;
            let mut shuffle_rng = seeding::derived_rng(config.seed, tags::SHUFFLE, iteration as u64);
            let ppo = ppo_update(&mut learner, &ro.batch, &adv, &ret, &config.ppo, &mut shuffle_rng)?;

            let divergence = occupancy_js(ro.pairs.view(), expert_pairs.view(), config.js_bins, config.projection_seed)?;
            let episodes = ro.episode_ctr.len();
            let row = IterationStats {
                iteration,
                episodes,
                steps: n,
                mean_env_reward: ro.episode_rewards.iter().sum::<u32>() as f64 / episodes as f64,
                mean_bonus: ro.batch.bonus_reward.iter().sum::<f64>() / n as f64,
                ctr: ro.episode_ctr.iter().sum::<f64>() / episodes as f64,
                disc_loss,
                policy_loss: ppo.policy_loss,
                value_loss: ppo.value_loss,
                entropy: ppo.entropy,
                approx_kl: ppo.approx_kl,
            };
            if !row.is_finite() {
                return Err(Error::NonFinite(format!("iteration {iteration} produced non-finite metrics: {row:?}")));
            }
            Ok((row, divergence))
        })();

        let (row, divergence) = match result {
            Ok(v) => v,
            Err(e) => {
                events.push(format!("iteration {iteration} abort: {e}"));
                write_events(out_dir, &events)?;
                return Err(e);
            }
        };
        on_iteration(&row);
        stats.push(row);
        js.push(divergence);

        if let Some(dir) = out_dir {
            write_metrics(&dir.join(METRICS_FILE), &stats)?;
            write_js(dir, &js)?;
            let periodic = config.checkpoint_every > 0 && iteration % config.checkpoint_every == 0;
            if periodic || iteration == config.iterations {
                events.push(format!("iteration {iteration} checkpoint"));
                save_checkpoint(dir.join(CHECKPOINT_FILE), &run_arrays(&learner, &disc, iteration))?;
            }
            write_events(out_dir, &events)?;
        }
    }
    events.push("run complete".into());
    write_events(out_dir, &events)?;
    Ok(RunOutcome {
        stats,
        occupancy_js: js,
        learner,
        disc,
        events,
    })
}

/// Restores the learner's actor from a run checkpoint.
pub fn load_actor(path: impl AsRef<Path>) -> Result<Actor> {
    Actor::from_arrays("actor", &crate::checkpoint::load_checkpoint(path)?)
}

/// One training run per `(λ_g, ε)` cell, each scored by a deterministic
/// evaluation of the final actor on the run's evaluation users.
pub fn run_grid<F: FnMut(&GridRow)>(
    base: &RunConfig,
    expert: &ExpertDataset,
    gae_lambdas: &[f64],
    clip_eps: &[f64],
    mut on_cell: F,
) -> Result<Vec<GridRow>> {
    if gae_lambdas.is_empty() || clip_eps.is_empty() {
        return Err(Error::invalid("grid value lists must be nonempty"));
    }
    let env = Environment::new(base.env.clone())?;
    let mut rows = Vec::with_capacity(gae_lambdas.len() * clip_eps.len());
    for &lambda in gae_lambdas {
        for &eps in clip_eps {
            let mut cfg = base.clone();
            cfg.ppo.gae_lambda = lambda;
            cfg.ppo.clip_eps = eps;
            cfg.out_dir = base
                .out_dir
                .as_ref()
                .map(|d| d.join(format!("lambda{lambda}_eps{eps}")));
            let outcome = train_with_expert(&cfg, expert, |_| {})?;
            let eval = evaluate(&outcome.learner.actor, &env, cfg.eval_episodes, cfg.seed, true)?;
            let row = GridRow {
                gae_lambda: lambda,
                clip_eps: eps,
                ctr: eval.mean_ctr,
                half_width: eval.half_width,
            };
            on_cell(&row);
            rows.push(row);
        }
    }
    if let Some(dir) = &base.out_dir {
        write_grid_table(&dir.join("grid.csv"), &rows)?;
    }
    Ok(rows)
}

/// Learner versus expert divergence for a saved run.
pub fn diag_js(
    actor: &Actor,
    expert: &ExpertDataset,
    env_config: &EnvConfig,
    episodes: usize,
    bins: usize,
    projection_seed: u64,
    seed: u64,
) -> Result<f64> {
    let env = Environment::new(env_config.clone())?;
    let mut rows = Vec::new();
    for ep in 0..episodes {
        let episode_seed = eval_episode_seed(seed, ep);
        let (mut state, mut obs) = env.reset(episode_seed);
        let mut rng = seeding::derived_rng(episode_seed, tags::EVAL, 1);
        while !state.done {
            let action: Vec<f64> = actor.action(&obs, false, &mut rng)?;
            let step = env.step(&mut state, &action)?;
            rows.extend(obs.iter().copied());
            rows.extend(action.iter().map(|a| a.clamp(-1.0, 1.0)));
            obs = step.observation;
        }
    }
    let n = rows.len() / PAIR_DIM;
    let learner = Array2::from_shape_vec((n, PAIR_DIM), rows).map_err(|e| Error::shape(e.to_string()))?;
    let expert_pairs = make_pairs(expert.states.view(), expert.actions.view())?;
    occupancy_js(learner.view(), expert_pairs.view(), bins, projection_seed)
}
