//! DDPG expert: the demonstrator whose state-action pairs the learner imitates.

use std::collections::VecDeque;

use ndarray::{s, Array1, Array2, ArrayView2};
use rand::seq::index;
use rand_distr::{Distribution, StandardNormal};

use crate::checkpoint::{find, mlp_arrays, mlp_from_arrays, NamedArray};
use crate::envsim::{EnvConfig, Environment};
use crate::numeric::{AdamState, Head, Mlp, MlpGrads, Params};
use crate::pipeline::{evaluate, Evaluation};
use crate::seeding::{self, tags};
use crate::{Error, Result, ACTION_DIM, OBS_DIM, PAIR_DIM};

#[derive(Debug, Clone, PartialEq)]
pub struct DdpgConfig {
    pub gamma: f64,
    pub tau: f64,
    pub hidden: usize,
    pub buffer_size: usize,
    /// Episode budget; training may stop earlier on a plateau.
    pub episodes: usize,
    pub lr_actor: f64,
    pub lr_critic: f64,
    pub critic_l2: f64,
    pub batch_size: usize,
    pub ou_theta: f64,
    pub ou_mu: f64,
    pub ou_sigma: f64,
    pub ou_scale: f64,
    pub expert_pairs: usize,
    pub eval_every: usize,
    pub eval_episodes: usize,
    /// Stop once evaluation CTR improved by less than `plateau_tol`
    /// (relative) over this many episodes.
    pub plateau_window: usize,
    pub plateau_tol: f64,
}

impl Default for DdpgConfig {
    fn default() -> Self {
        DdpgConfig {
            gamma: 0.95,
            tau: 0.001,
            hidden: 128,
            buffer_size: 1000,
            episodes: 20_000,
            lr_actor: 1e-4,
            lr_critic: 1e-3,
            critic_l2: 1e-2,
            batch_size: 64,
            ou_theta: 0.15,
            ou_mu: 0.0,
            ou_sigma: 0.2,
            ou_scale: 0.1,
            expert_pairs: 20_000,
            eval_every: 100,
            eval_episodes: 50,
            plateau_window: 500,
            plateau_tol: 0.01,
        }
    }
}

impl DdpgConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(0.0..1.0).contains(&self.gamma) {
            return bad(format!("ddpg.gamma must be in [0, 1), got {}", self.gamma));
        }
        if !(0.0..=1.0).contains(&self.tau) {
            return bad(format!("ddpg.tau must be in [0, 1], got {}", self.tau));
        }
        for (name, v) in [
            ("hidden", self.hidden),
            ("buffer_size", self.buffer_size),
            ("episodes", self.episodes),
            ("batch_size", self.batch_size),
            ("expert_pairs", self.expert_pairs),
            ("eval_every", self.eval_every),
            ("eval_episodes", self.eval_episodes),
        ] {
            if v == 0 {
                return bad(format!("ddpg.{name} must be >= 1"));
            }
        }
        if self.batch_size > self.buffer_size {
            return bad("ddpg.batch_size cannot exceed ddpg.buffer_size".into());
        }
        for (name, v) in [
            ("lr_actor", self.lr_actor),
            ("lr_critic", self.lr_critic),
            ("critic_l2", self.critic_l2),
            ("ou_sigma", self.ou_sigma),
            ("ou_scale", self.ou_scale),
            ("plateau_tol", self.plateau_tol),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return bad(format!("ddpg.{name} must be >= 0, got {v}"));
            }
        }
        if !(0.0..=1.0).contains(&self.ou_theta) {
            return bad(format!("ddpg.ou_theta must be in [0, 1], got {}", self.ou_theta));
        }
        if !self.ou_mu.is_finite() {
            return bad("ddpg.ou_mu must be finite".into());
        }
        Ok(())
    }
}

/// Ornstein-Uhlenbeck exploration process.
#[derive(Debug, Clone, PartialEq)]
pub struct OuState {
    pub x: Vec<f64>,
    pub theta: f64,
    pub mu: f64,
    pub sigma: f64,
    pub scale: f64,
}

impl OuState {
    pub fn new(dim: usize, theta: f64, mu: f64, sigma: f64, scale: f64) -> Self {
        OuState {
            x: vec![mu; dim],
            theta,
            mu,
            sigma,
            scale,
        }
    }

    pub fn from_config(cfg: &DdpgConfig) -> Self {
        OuState::new(ACTION_DIM, cfg.ou_theta, cfg.ou_mu, cfg.ou_sigma, cfg.ou_scale)
    }

    pub fn reset(&mut self) {
        self.x.fill(self.mu);
    }

    /// `x ← x + θ(μ − x) + σz`; returns `scale · x`.
    pub fn next<R: rand::Rng + ?Sized>(&mut self, rng: &mut R) -> Vec<f64> {
        for x in &mut self.x {
            let z: f64 = StandardNormal.sample(rng);
            *x += self.theta * (self.mu - *x) + self.sigma * z;
        }
        self.x.iter().map(|x| self.scale * x).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub obs: Vec<f64>,
    pub action: Vec<f64>,
    /// Raw click count.
    pub reward: f64,
    pub next_obs: Vec<f64>,
    pub done: bool,
}

/// FIFO replay memory.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    items: VecDeque<Transition>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::invalid("replay capacity must be >= 1"));
        }
        Ok(ReplayBuffer {
            capacity,
            items: VecDeque::with_capacity(capacity),
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn get(&self, i: usize) -> Option<&Transition> {
        self.items.get(i)
    }

    pub fn push(&mut self, t: Transition) {
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(t);
    }

    /// Uniform draw of `n` distinct transitions.
    pub fn sample<R: rand::Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Vec<&Transition>> {
        if n > self.items.len() {
            return Err(Error::invalid(format!(
                "cannot sample {n} transitions from a buffer of {}",
                self.items.len()
            )));
        }
        Ok(index::sample(rng, self.items.len(), n)
            .into_iter()
            .map(|i| &self.items[i])
            .collect())
    }
}

/// `target ← (1 − τ)·target + τ·online`, entrywise.
pub fn soft_update(target: &mut Mlp, online: &Mlp, tau: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&tau) {
        return Err(Error::invalid(format!("tau must be in [0, 1], got {tau}")));
    }
    let src = online.tensors();
    let mut dst = target.tensors_mut();
    if src.len() != dst.len() || src.iter().zip(dst.iter()).any(|(a, b)| a.len() != b.len()) {
        return Err(Error::shape("soft update between differently shaped networks"));
    }
    for (t, o) in dst.iter_mut().zip(src) {
        for (t, o) in t.iter_mut().zip(o) {
            *t = (1.0 - tau) * *t + tau * o;
        }
    }
    Ok(())
}

/// Output-layer init range; starts the actor near the zero page so the OU
/// noise decides early page directions.
pub const OUTPUT_INIT: f64 = 3e-3;

fn small_output_layer<R: rand::Rng + ?Sized>(mlp: &mut Mlp, rng: &mut R) {
    let last = mlp.layers.last_mut().expect("at least one layer");
    last.weights.mapv_inplace(|_| rng.random_range(-OUTPUT_INIT..OUTPUT_INIT));
    last.bias.mapv_inplace(|_| rng.random_range(-OUTPUT_INIT..OUTPUT_INIT));
}

/// Online and target actor/critic plus optimizer state.
#[derive(Debug, Clone)]
pub struct DdpgNets {
    pub actor: Mlp,
    pub critic: Mlp,
    pub target_actor: Mlp,
    pub target_critic: Mlp,
    pub actor_adam: AdamState,
    pub critic_adam: AdamState,
}

impl DdpgNets {
    pub fn new<R: rand::Rng + ?Sized>(hidden: usize, rng: &mut R) -> Result<Self> {
        let mut actor = Mlp::new(&[OBS_DIM, hidden, hidden, ACTION_DIM], Head::Tanh, rng)?;
        let mut critic = Mlp::new(&[PAIR_DIM, hidden, hidden, 1], Head::Identity, rng)?;
        small_output_layer(&mut actor, rng);
        small_output_layer(&mut critic, rng);
        Ok(DdpgNets {
            actor_adam: AdamState::new(&actor),
            critic_adam: AdamState::new(&critic),
            target_actor: actor.clone(),
            target_critic: critic.clone(),
            actor,
            critic,
        })
    }

    pub fn to_arrays(&self) -> Vec<NamedArray> {
        let mut out = mlp_arrays("ddpg.actor", &self.actor);
        out.extend(mlp_arrays("ddpg.critic", &self.critic));
        out.extend(mlp_arrays("ddpg.target_actor", &self.target_actor));
        out.extend(mlp_arrays("ddpg.target_critic", &self.target_critic));
        out
    }

    /// Restores networks; optimizer state starts fresh.
    pub fn from_arrays(arrays: &[NamedArray]) -> Result<Self> {
        let actor = mlp_from_arrays("ddpg.actor", arrays, Head::Tanh)?;
        let critic = mlp_from_arrays("ddpg.critic", arrays, Head::Identity)?;
        let target_actor = mlp_from_arrays("ddpg.target_actor", arrays, Head::Tanh)?;
        let target_critic = mlp_from_arrays("ddpg.target_critic", arrays, Head::Identity)?;
        if actor.in_dim() != OBS_DIM || actor.out_dim() != ACTION_DIM || critic.in_dim() != PAIR_DIM {
            return Err(Error::shape("DDPG networks have the wrong input/output widths"));
        }
        Ok(DdpgNets {
            actor_adam: AdamState::new(&actor),
            critic_adam: AdamState::new(&critic),
            actor,
            critic,
            target_actor,
            target_critic,
        })
    }
}

/// A replay minibatch in matrix form.
#[derive(Debug, Clone)]
pub struct DdpgBatch {
    pub obs: Array2<f64>,
    pub actions: Array2<f64>,
    pub rewards: Array1<f64>,
    pub next_obs: Array2<f64>,
    pub dones: Vec<bool>,
}

impl DdpgBatch {
    pub fn from_transitions(ts: &[&Transition]) -> Result<Self> {
        if ts.is_empty() {
            return Err(Error::invalid("empty DDPG batch"));
        }
        let n = ts.len();
        let mut obs = Array2::zeros((n, OBS_DIM));
        let mut actions = Array2::zeros((n, ACTION_DIM));
        let mut next_obs = Array2::zeros((n, OBS_DIM));
        for (i, t) in ts.iter().enumerate() {
            if t.obs.len() != OBS_DIM || t.next_obs.len() != OBS_DIM || t.action.len() != ACTION_DIM {
                return Err(Error::shape("transition has the wrong dimensions"));
            }
            obs.row_mut(i).assign(&ArrayView2::from_shape((1, OBS_DIM), &t.obs).unwrap().row(0));
            actions
                .row_mut(i)
                .assign(&ArrayView2::from_shape((1, ACTION_DIM), &t.action).unwrap().row(0));
            next_obs
                .row_mut(i)
                .assign(&ArrayView2::from_shape((1, OBS_DIM), &t.next_obs).unwrap().row(0));
        }
        Ok(DdpgBatch {
            obs,
            actions,
            rewards: ts.iter().map(|t| t.reward).collect(),
            next_obs,
            dones: ts.iter().map(|t| t.done).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.dones.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dones.is_empty()
    }
}

fn concat(obs: ArrayView2<f64>, actions: ArrayView2<f64>) -> Array2<f64> {
    ndarray::concatenate(ndarray::Axis(1), &[obs, pages(actions).view()]).expect("row counts checked by caller")
}

/// Norm of a page as fed to the critic, so its entries are of unit scale
/// like the observation bits.
pub const PAGE_SCALE: f64 = 5.196152422706632;

/// Rows rescaled to norm [`PAGE_SCALE`]: the page the environment actually scores. The critic sees
/// pages rather than raw actions, so Q carries no spurious dependence on the
/// action's magnitude that would drive the tanh head into saturation.
pub fn pages(actions: ArrayView2<f64>) -> Array2<f64> {
    let mut out = actions.mapv(|a| a.clamp(-1.0, 1.0));
    for mut row in out.rows_mut() {
        let norm = row.dot(&row).sqrt().max(1e-12);
        row *= PAGE_SCALE / norm;
    }
    out
}

/// Pulls a gradient with respect to pages back to the raw actions:
/// `(g − (g·p)p) / ‖a‖` row by row.
fn page_backward(actions: ArrayView2<f64>, grad_pages: ArrayView2<f64>) -> Array2<f64> {
    let mut out = grad_pages.to_owned();
    for ((mut g, a), p) in out.rows_mut().into_iter().zip(actions.rows()).zip(pages(actions).rows()) {
        let norm = a.dot(&a).sqrt().max(1e-12);
        let along = g.dot(&p) / (PAGE_SCALE * PAGE_SCALE);
        g.zip_mut_with(&p, |gi, pi| *gi = PAGE_SCALE * (*gi - along * pi) / norm);
    }
    out
}

/// Bellman targets `r/10 + γ·(1 − done)·Q'(s', μ'(s'))` from the target nets.
pub fn critic_targets(nets: &DdpgNets, batch: &DdpgBatch, gamma: f64) -> Result<Array1<f64>> {
    let next_actions = nets.target_actor.predict(batch.next_obs.view())?;
    let next_q = nets
        .target_critic
        .predict(concat(batch.next_obs.view(), next_actions.view()).view())?;
    Ok(Array1::from_shape_fn(batch.len(), |i| {
        let live = if batch.dones[i] { 0.0 } else { 1.0 };
        batch.rewards[i] / 10.0 + gamma * live * next_q[[i, 0]]
    }))
}

/// Mean squared Bellman error and its gradient, with targets held fixed.
pub fn critic_loss_and_grads(critic: &Mlp, batch: &DdpgBatch, targets: &Array1<f64>) -> Result<(f64, MlpGrads)> {
    let n = batch.len();
    if n == 0 || targets.len() != n {
        return Err(Error::shape("critic targets do not match the batch"));
    }
    let (q, cache) = critic.forward(concat(batch.obs.view(), batch.actions.view()).view())?;
    let mut grad = Array2::zeros((n, 1));
    let mut loss = 0.0;
    for i in 0..n {
        let err = q[[i, 0]] - targets[i];
        loss += err * err;
        grad[[i, 0]] = 2.0 * err / n as f64;
    }
    let (grads, _) = critic.backward(&cache, grad.view())?;
    Ok((loss / n as f64, grads))
}

/// `mean Q(s, μ(s))` and the gradient of its negation with respect to the actor.
pub fn actor_objective_and_grads(actor: &Mlp, critic: &Mlp, obs: ArrayView2<f64>) -> Result<(f64, MlpGrads)> {
    let n = obs.nrows();
    if n == 0 {
        return Err(Error::invalid("empty actor batch"));
    }
    let (actions, actor_cache) = actor.forward(obs)?;
    let (q, critic_cache) = critic.forward(concat(obs, actions.view()).view())?;
    let objective = q.sum() / n as f64;
    let grad_q = Array2::from_elem((n, 1), -1.0 / n as f64);
    let (_, grad_in) = critic.backward(&critic_cache, grad_q.view())?;
    let grad_actions = page_backward(actions.view(), grad_in.slice(s![.., OBS_DIM..]));
    let (grads, _) = actor.backward(&actor_cache, grad_actions.view())?;
    Ok((objective, grads))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DdpgStats {
    pub q_loss: f64,
    pub actor_objective: f64,
}

/// Hyperparameters of one DDPG update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DdpgStep {
    pub gamma: f64,
    pub tau: f64,
    pub lr_actor: f64,
    pub lr_critic: f64,
    /// L2 weight decay on the critic's weight matrices (not biases).
    pub critic_l2: f64,
}

impl DdpgConfig {
    pub fn step(&self) -> DdpgStep {
        DdpgStep {
            gamma: self.gamma,
            tau: self.tau,
            lr_actor: self.lr_actor,
            lr_critic: self.lr_critic,
            critic_l2: self.critic_l2,
        }
    }
}

/// One critic step, one actor step, then soft updates of both targets.
pub fn ddpg_update(nets: &mut DdpgNets, batch: &DdpgBatch, hp: &DdpgStep) -> Result<DdpgStats> {
    if batch.is_empty() {
        return Err(Error::invalid("empty DDPG batch"));
    }
    let targets = critic_targets(nets, batch, hp.gamma)?;
    let (q_loss, mut critic_grads) = critic_loss_and_grads(&nets.critic, batch, &targets)?;
    if !q_loss.is_finite() {
        return Err(Error::NonFinite(format!("DDPG critic loss is {q_loss}")));
    }
    if hp.critic_l2 > 0.0 {
        for (g, w) in critic_grads.layers.iter_mut().zip(&nets.critic.layers) {
            g.weights.scaled_add(hp.critic_l2, &w.weights);
        }
    }
    nets.critic_adam.step(&mut nets.critic, &critic_grads, hp.lr_critic)?;
    let (actor_objective, actor_grads) = actor_objective_and_grads(&nets.actor, &nets.critic, batch.obs.view())?;
    if !actor_objective.is_finite() {
        return Err(Error::NonFinite(format!("DDPG actor objective is {actor_objective}")));
    }
    nets.actor_adam.step(&mut nets.actor, &actor_grads, hp.lr_actor)?;
    soft_update(&mut nets.target_critic, &nets.critic, hp.tau)?;
    soft_update(&mut nets.target_actor, &nets.actor, hp.tau)?;
    Ok(DdpgStats { q_loss, actor_objective })
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainingCurve {
    /// Total clicks per training episode (with exploration noise).
    pub episode_rewards: Vec<f64>,
    pub episode_ctr: Vec<f64>,
    /// Mean critic loss and actor objective over each episode's updates
    /// (NaN before updates start).
    pub episode_q_loss: Vec<f64>,
    pub episode_actor_objective: Vec<f64>,
    /// `(episodes completed, deterministic evaluation CTR)`.
    pub evaluations: Vec<(usize, f64)>,
    pub episodes_run: usize,
    pub stopped_on_plateau: bool,
    /// Episode count at which the returned networks were snapshotted.
    pub best_episode: usize,
    pub best_eval_ctr: f64,
}

/// Seed set for the expert's periodic evaluations.
fn expert_eval_seed(seed: u64) -> u64 {
    seeding::derive(seed, tags::DDPG, u64::MAX)
}

/// Runs DDPG with OU exploration. Every `eval_every` episodes the noise-free
/// actor is evaluated on a fixed user set; training stops early once that
/// CTR improves by less than `plateau_tol` (relative) over `plateau_window`
/// episodes. Returns the networks from the best evaluation.
pub fn train_expert(env_config: &EnvConfig, cfg: &DdpgConfig, seed: u64) -> Result<(DdpgNets, TrainingCurve)> {
    train_expert_with(env_config, cfg, seed, |_, _, _| {})
}

/// [`train_expert`] with a callback after every evaluation.
pub fn train_expert_with<F: FnMut(usize, f64, &DdpgNets)>(
    env_config: &EnvConfig,
    cfg: &DdpgConfig,
    seed: u64,
    mut on_eval: F,
) -> Result<(DdpgNets, TrainingCurve)> {
    cfg.validate()?;
    let env = Environment::new(env_config.clone())?;
    let mut init_rng = seeding::derived_rng(seed, tags::INIT, 1);
    let mut nets = DdpgNets::new(cfg.hidden, &mut init_rng)?;
    let mut buffer = ReplayBuffer::new(cfg.buffer_size)?;
    let mut sample_rng = seeding::derived_rng(seed, tags::DDPG, 0);
    let mut ou = OuState::from_config(cfg);
    let eval_seed = expert_eval_seed(seed);

    let mut curve = TrainingCurve::default();
    let mut best: Option<(f64, usize, DdpgNets)> = None;
    for episode in 0..cfg.episodes {
        let episode_seed = seeding::derive(seed, tags::DDPG, episode as u64 + 1);
        let (mut state, mut obs) = env.reset(episode_seed);
        let mut noise_rng = seeding::derived_rng(episode_seed, tags::DDPG, 0);
        ou.reset();
        let mut rewards = Vec::new();
        let mut update_sums = (0.0, 0.0, 0usize);
        while !state.done {
            let mean = nets.actor.predict_one(&obs)?;
            let noise = ou.next(&mut noise_rng);
            let action: Vec<f64> = mean.iter().zip(&noise).map(|(m, e)| (m + e).clamp(-1.0, 1.0)).collect();
            let step = env.step(&mut state, &action)?;
            rewards.push(step.reward);
            buffer.push(Transition {
                obs,
                action,
                reward: step.reward as f64,
                next_obs: step.observation.clone(),
                done: step.done,
            });
            obs = step.observation;
            if buffer.len() >= cfg.batch_size {
                let picked = buffer.sample(cfg.batch_size, &mut sample_rng)?;
                let batch = DdpgBatch::from_transitions(&picked)?;
                let stats = ddpg_update(&mut nets, &batch, &cfg.step())?;
                update_sums.0 += stats.q_loss;
                update_sums.1 += stats.actor_objective;
                update_sums.2 += 1;
            }
        }
        let updates = update_sums.2 as f64;
        curve.episode_q_loss.push(update_sums.0 / updates);
        curve.episode_actor_objective.push(update_sums.1 / updates);
        curve.episode_rewards.push(rewards.iter().sum::<u32>() as f64);
        curve.episode_ctr.push(crate::pipeline::ctr(&rewards)?);
        curve.episodes_run = episode + 1;

        if (episode + 1) % cfg.eval_every == 0 {
            let eval = evaluate(&nets.actor, &env, cfg.eval_episodes, eval_seed, true)?;
            curve.evaluations.push((episode + 1, eval.mean_ctr));
            on_eval(episode + 1, eval.mean_ctr, &nets);
            if best.as_ref().is_none_or(|(c, _, _)| eval.mean_ctr > *c) {
                best = Some((eval.mean_ctr, episode + 1, nets.clone()));
            }
            if plateaued(&curve.evaluations, cfg.plateau_window, cfg.plateau_tol) {
                curve.stopped_on_plateau = true;
                break;
            }
        }
    }
    match best {
        Some((ctr, episode, snapshot)) => {
            curve.best_eval_ctr = ctr;
            curve.best_episode = episode;
            Ok((snapshot, curve))
        }
        None => {
            let eval = evaluate(&nets.actor, &env, cfg.eval_episodes, eval_seed, true)?;
            curve.evaluations.push((curve.episodes_run, eval.mean_ctr));
            curve.best_eval_ctr = eval.mean_ctr;
            curve.best_episode = curve.episodes_run;
            Ok((nets, curve))
        }
    }
}

/// True when the best evaluation so far beats the best one from at least
/// `window` episodes earlier by less than `tol` relative.
pub fn plateaued(evaluations: &[(usize, f64)], window: usize, tol: f64) -> bool {
    let Some(&(latest, _)) = evaluations.last() else {
        return false;
    };
    if window == 0 || latest < window {
        return false;
    }
    let earlier: Vec<f64> = evaluations
        .iter()
        .filter(|(ep, _)| latest - ep >= window)
        .map(|(_, c)| *c)
        .collect();
    if earlier.is_empty() {
        return false;
    }
    let before = earlier.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let now = evaluations.iter().map(|(_, c)| *c).fold(f64::NEG_INFINITY, f64::max);
    before > 0.0 && (now - before) / before < tol
}

/// Demonstration pairs from the noise-free expert.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpertDataset {
    /// `N × 91`.
    pub states: Array2<f64>,
    /// `N × 27`, each entry in `[-1, 1]`.
    pub actions: Array2<f64>,
    pub seed: u64,
    /// Episodes started while collecting (the last may be cut short).
    pub episodes: usize,
    /// Clicks per step over the collected pairs.
    pub mean_env_reward: f64,
}

impl ExpertDataset {
    pub fn len(&self) -> usize {
        self.states.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.states.nrows() == 0
    }

    pub fn validate(&self) -> Result<()> {
        if self.states.nrows() != self.actions.nrows() {
            return Err(Error::shape("expert states and actions differ in length"));
        }
        if self.states.ncols() != OBS_DIM || self.actions.ncols() != ACTION_DIM {
            return Err(Error::shape("expert dataset has the wrong widths"));
        }
        if self.is_empty() {
            return Err(Error::invalid("expert dataset is empty"));
        }
        if self.actions.iter().any(|a| !(-1.0..=1.0).contains(a)) {
            return Err(Error::invalid("expert action outside [-1, 1]"));
        }
        Ok(())
    }

    pub fn to_arrays(&self) -> Vec<NamedArray> {
        vec![
            NamedArray::matrix("expert.states", &self.states),
            NamedArray::matrix("expert.actions", &self.actions),
            // u64 seeds are stored as two exact 32-bit halves.
            NamedArray::vector(
                "expert.meta",
                vec![
                    (self.seed >> 32) as f64,
                    (self.seed & 0xffff_ffff) as f64,
                    self.episodes as f64,
                    self.mean_env_reward,
                ],
            ),
        ]
    }

    pub fn from_arrays(arrays: &[NamedArray]) -> Result<Self> {
        let states = find(arrays, "expert.states")?.to_matrix()?;
        let actions = find(arrays, "expert.actions")?.to_matrix()?;
        let meta = find(arrays, "expert.meta")?.to_vector()?;
        if meta.len() != 4 {
            return Err(Error::Format("expert.meta must hold 4 values".into()));
        }
        let ds = ExpertDataset {
            states,
            actions,
            seed: ((meta[0] as u64) << 32) | meta[1] as u64,
            episodes: meta[2] as usize,
            mean_env_reward: meta[3],
        };
        ds.validate()?;
        Ok(ds)
    }
}

/// Rolls the deterministic actor until `n_pairs` pairs are recorded.
pub fn collect_expert(actor: &Mlp, env_config: &EnvConfig, n_pairs: usize, seed: u64) -> Result<ExpertDataset> {
    if n_pairs == 0 {
        return Err(Error::invalid("n_pairs must be >= 1"));
    }
    if actor.in_dim() != OBS_DIM || actor.out_dim() != ACTION_DIM {
        return Err(Error::shape("expert actor has the wrong widths"));
    }
    let env = Environment::new(env_config.clone())?;
    let mut states = Array2::zeros((n_pairs, OBS_DIM));
    let mut actions = Array2::zeros((n_pairs, ACTION_DIM));
    let mut total_reward = 0u64;
    let mut row = 0;
    let mut episodes = 0;
    while row < n_pairs {
        let (mut state, mut obs) = env.reset(seeding::derive(seed, tags::COLLECT, episodes as u64));
        episodes += 1;
        while !state.done && row < n_pairs {
            let action: Vec<f64> = actor.predict_one(&obs)?.into_iter().map(|a| a.clamp(-1.0, 1.0)).collect();
            states.row_mut(row).assign(&Array1::from(obs.clone()));
            actions.row_mut(row).assign(&Array1::from(action.clone()));
            let step = env.step(&mut state, &action)?;
            total_reward += step.reward as u64;
            obs = step.observation;
            row += 1;
        }
    }
    Ok(ExpertDataset {
        states,
        actions,
        seed,
        episodes,
        mean_env_reward: total_reward as f64 / n_pairs as f64,
    })
}

/// Deterministic evaluation of a DDPG actor, for callers outside training.
pub fn evaluate_expert(actor: &Mlp, env_config: &EnvConfig, n_episodes: usize, seed: u64) -> Result<Evaluation> {
    let env = Environment::new(env_config.clone())?;
    evaluate(actor, &env, n_episodes, seed, true)
}
