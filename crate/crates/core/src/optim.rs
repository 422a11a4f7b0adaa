//! Advantage estimation and PPO updates.
//!
//! Advantages use the standard GAE recursion over one-step TD residuals
//! `δ_t = r_t + γ·V(s_{t+1})·(1 − done_t) − V(s_t)`, cut at episode ends.
//! The policy update is either the clipped surrogate or the adaptive-KL
//! penalty variant, where `β` is halved or doubled after each update
//! depending on the measured KL.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;

use crate::numeric::{AdamState, MlpGrads};
use crate::policy::{gaussian_log_density, Actor, ActorGrads, Critic, CriticInput};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PpoVariant {
    Clip,
    AdaptiveKl,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PpoConfig {
    pub gamma: f64,
    pub gae_lambda: f64,
    pub clip_eps: f64,
    pub epochs: usize,
    pub minibatch_size: usize,
    pub lr: f64,
    pub entropy_coef: f64,
    pub value_coef: f64,
    pub bonus_weight: f64,
    pub variant: PpoVariant,
    pub kl_beta_init: f64,
    pub kl_a: f64,
    pub kl_b: f64,
    pub kl_target: f64,
}

impl Default for PpoConfig {
    fn default() -> Self {
        PpoConfig {
            gamma: 0.995,
            gae_lambda: 0.97,
            clip_eps: 0.2,
            epochs: 4,
            minibatch_size: 5,
            lr: 0.003,
            entropy_coef: 1e-3,
            value_coef: 0.5,
            bonus_weight: 1.0,
            variant: PpoVariant::Clip,
            kl_beta_init: 1.0,
            kl_a: 1.5,
            kl_b: 2.0,
            kl_target: 0.01,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |name: &str, v: f64| {
            if (0.0..1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::Config(format!("ppo.{name} must be in [0, 1), got {v}")))
            }
        };
        unit("gamma", self.gamma)?;
        unit("gae_lambda", self.gae_lambda)?;
        if !(self.clip_eps > 0.0 && self.clip_eps <= 0.5) {
            return Err(Error::Config(format!(
                "ppo.clip_eps must be in (0, 0.5], got {}",
                self.clip_eps
            )));
        }
        if self.epochs == 0 {
            return Err(Error::Config("ppo.epochs must be >= 1".into()));
        }
        if self.minibatch_size == 0 {
            return Err(Error::Config("ppo.minibatch_size must be >= 1".into()));
        }
        for (name, v) in [
            ("lr", self.lr),
            ("entropy_coef", self.entropy_coef),
            ("value_coef", self.value_coef),
            ("bonus_weight", self.bonus_weight),
            ("kl_beta", self.kl_beta_init),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!("ppo.{name} must be >= 0, got {v}")));
            }
        }
        for (name, v) in [("kl_a", self.kl_a), ("kl_b", self.kl_b), ("kl_target", self.kl_target)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("ppo.{name} must be > 0, got {v}")));
            }
        }
        Ok(())
    }
}

/// Returns `(advantages, returns)`.
///
/// `bootstrap_value` stands in for `V(s_{T})` after the last step and is
/// ignored when that step is terminal.
pub fn compute_gae(
    rewards: &[f64],
    values: &[f64],
    bootstrap_value: f64,
    dones: &[bool],
    gamma: f64,
    gae_lambda: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = rewards.len();
    if values.len() != n || dones.len() != n {
        return Err(Error::shape(format!(
            "gae: {} rewards, {} values, {} done flags",
            n,
            values.len(),
            dones.len()
        )));
    }
    let mut advantages = vec![0.0; n];
    let mut running = 0.0;
    for t in (0..n).rev() {
        let next_value = if t + 1 < n { values[t + 1] } else { bootstrap_value };
        let live = if dones[t] { 0.0 } else { 1.0 };
        let delta = rewards[t] + gamma * next_value * live - values[t];
        running = delta + gamma * gae_lambda * live * running;
        advantages[t] = running;
    }
    let returns = advantages.iter().zip(values).map(|(a, v)| a + v).collect();
    Ok((advantages, returns))
}

/// Shifts to mean 0 and scales to std 1 (population std, floored at 1e-8).
pub fn normalize_advantages(advantages: &mut [f64]) {
    if advantages.is_empty() {
        return;
    }
    let n = advantages.len() as f64;
    let mean = advantages.iter().sum::<f64>() / n;
    let var = advantages.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt().max(1e-8);
    for a in advantages.iter_mut() {
        *a = (*a - mean) / std;
    }
}

fn check_ratios(ratios: &[f64], advantages: &[f64]) -> Result<()> {
    if ratios.len() != advantages.len() {
        return Err(Error::shape("ratios and advantages differ in length"));
    }
    if ratios.is_empty() {
        return Err(Error::invalid("objective over an empty batch"));
    }
    if let Some(r) = ratios.iter().find(|r| !(**r > 0.0)) {
        return Err(Error::invalid(format!("probability ratio must be > 0, got {r}")));
    }
    Ok(())
}

/// `mean(min(r·A, clip(r, 1−ε, 1+ε)·A))`, to be maximized.
pub fn ppo_clip_objective(ratios: &[f64], advantages: &[f64], clip_eps: f64) -> Result<f64> {
    check_ratios(ratios, advantages)?;
    let total: f64 = ratios
        .iter()
        .zip(advantages)
        .map(|(&r, &a)| (r * a).min(r.clamp(1.0 - clip_eps, 1.0 + clip_eps) * a))
        .sum();
    Ok(total / ratios.len() as f64)
}

/// `mean(r·A) − β·kl`, to be maximized.
pub fn adaptive_kl_objective(ratios: &[f64], advantages: &[f64], kl: f64, beta: f64) -> Result<f64> {
    check_ratios(ratios, advantages)?;
    if !(beta >= 0.0) {
        return Err(Error::invalid(format!("beta must be >= 0, got {beta}")));
    }
    let surrogate: f64 = ratios.iter().zip(advantages).map(|(r, a)| r * a).sum();
    Ok(surrogate / ratios.len() as f64 - beta * kl)
}

/// Divides β by `b` when `d < d_target·a`, multiplies it by `b` otherwise.
pub fn update_beta(beta: f64, d: f64, d_target: f64, a: f64, b: f64) -> f64 {
    if d < d_target * a {
        beta / b
    } else {
        beta * b
    }
}

/// `KL(N(μ_old, σ_old²) ‖ N(μ_new, σ_new²))` summed over dimensions.
pub fn diag_gaussian_kl(mean_old: &[f64], log_std_old: &[f64], mean_new: &[f64], log_std_new: &[f64]) -> f64 {
    let mut kl = 0.0;
    for j in 0..mean_old.len() {
        let var_old = (2.0 * log_std_old[j]).exp();
        let var_new = (2.0 * log_std_new[j]).exp();
        let diff = mean_old[j] - mean_new[j];
        kl += log_std_new[j] - log_std_old[j] + (var_old + diff * diff) / (2.0 * var_new) - 0.5;
    }
    kl
}

/// Per-step records of full episodes collected under one policy.
#[derive(Debug, Clone, Default)]
pub struct RolloutBatch {
    /// `n × 91`.
    pub obs: Array2<f64>,
    /// `n × 27`, the raw (unclipped) sampled actions.
    pub actions: Array2<f64>,
    pub log_prob_old: Vec<f64>,
    /// Environment reward divided by 10.
    pub env_reward: Vec<f64>,
    pub bonus_reward: Vec<f64>,
    pub values: Vec<f64>,
    pub dones: Vec<bool>,
    /// Start index and length of each episode.
    pub episodes: Vec<(usize, usize)>,
}

impl RolloutBatch {
    pub fn len(&self) -> usize {
        self.log_prob_old.len()
    }

    pub fn is_empty(&self) -> bool {
        self.log_prob_old.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.len();
        if self.obs.nrows() != n
            || self.actions.nrows() != n
            || self.env_reward.len() != n
            || self.bonus_reward.len() != n
            || self.values.len() != n
            || self.dones.len() != n
        {
            return Err(Error::shape("rollout batch fields differ in length"));
        }
        if self.log_prob_old.iter().chain(&self.values).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("rollout log-probs or values are not finite".into()));
        }
        Ok(())
    }

    /// `env_reward + bonus_weight · bonus` per step.
    pub fn combined_rewards(&self, bonus_weight: f64) -> Vec<f64> {
        self.env_reward
            .iter()
            .zip(&self.bonus_reward)
            .map(|(e, b)| e + bonus_weight * b)
            .collect()
    }
}

/// GAE over the whole batch on the combined reward. Every recorded episode
/// ends with a terminal step, so no bootstrap value is needed.
pub fn estimate_advantages(batch: &RolloutBatch, config: &PpoConfig) -> Result<(Vec<f64>, Vec<f64>)> {
    batch.validate()?;
    let rewards = batch.combined_rewards(config.bonus_weight);
    compute_gae(&rewards, &batch.values, 0.0, &batch.dones, config.gamma, config.gae_lambda)
}

/// Actor, critic and their optimizer state, carried across iterations.
#[derive(Debug, Clone)]
pub struct PpoLearner {
    pub actor: Actor,
    pub critic: Critic,
    pub actor_adam: AdamState,
    pub critic_adam: AdamState,
    /// Current KL penalty coefficient (adaptive-KL variant only).
    pub beta: f64,
}

impl PpoLearner {
    pub fn new(actor: Actor, critic: Critic, config: &PpoConfig) -> Self {
        let actor_adam = AdamState::new(&actor);
        let critic_adam = AdamState::new(&critic.mlp);
        PpoLearner {
            actor,
            critic,
            actor_adam,
            critic_adam,
            beta: config.kl_beta_init,
        }
    }
}

/// One minibatch worth of inputs to the PPO loss.
#[derive(Debug, Clone, Copy)]
pub struct Minibatch<'a> {
    pub obs: ArrayView2<'a, f64>,
    pub actions: ArrayView2<'a, f64>,
    pub log_prob_old: &'a [f64],
    pub advantages: &'a [f64],
    pub returns: &'a [f64],
    /// Snapshot policy means; required by the adaptive-KL variant.
    pub old_means: Option<ArrayView2<'a, f64>>,
    pub old_log_std: Option<&'a [f64]>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossParts {
    pub total: f64,
    /// Surrogate objective (clipped or KL-penalized), maximized.
    pub objective: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub kl: f64,
    pub clip_fraction: f64,
    pub ratios: Vec<f64>,
}

/// Total loss `−objective + c_v·MSE(V, returns) − c_e·H(π)` and its exact
/// gradients with respect to actor and critic parameters.
pub fn minibatch_loss_and_grads(
    actor: &Actor,
    critic: &Critic,
    mb: &Minibatch<'_>,
    config: &PpoConfig,
    beta: f64,
) -> Result<(LossParts, ActorGrads, MlpGrads)> {
    let n = mb.obs.nrows();
    if n == 0 {
        return Err(Error::invalid("empty minibatch"));
    }
    if mb.actions.nrows() != n
        || mb.log_prob_old.len() != n
        || mb.advantages.len() != n
        || mb.returns.len() != n
    {
        return Err(Error::shape("minibatch fields differ in length"));
    }
    let kl_variant = config.variant == PpoVariant::AdaptiveKl;
    let old = match (kl_variant, mb.old_means, mb.old_log_std) {
        (false, _, _) => None,
        (true, Some(m), Some(s)) => Some((m, s)),
        (true, _, _) => return Err(Error::invalid("adaptive-KL update needs the snapshot policy")),
    };

    let inv_n = 1.0 / n as f64;
    let (means, actor_cache) = actor.mean_batch(mb.obs)?;
    let log_std = actor.log_std.as_slice().expect("contiguous");
    let inv_var: Vec<f64> = log_std.iter().map(|ls| (-2.0 * ls).exp()).collect();
    let dim = log_std.len();

    let mut grad_mean = Array2::zeros(means.dim());
    let mut grad_log_std = Array1::<f64>::zeros(dim);
    let mut ratios = Vec::with_capacity(n);
    let mut objective = 0.0;
    let mut kl_total = 0.0;
    let mut clipped = 0usize;

    for i in 0..n {
        let mean = means.row(i);
        let mean = mean.as_slice().expect("row");
        let action = mb.actions.row(i).to_vec();
        let lp = gaussian_log_density(mean, log_std, &action);
        let r = (lp - mb.log_prob_old[i]).exp();
        let adv = mb.advantages[i];
        ratios.push(r);

        // d(objective_i)/d(r)
        let d_obj_dr = if kl_variant {
            objective += r * adv;
            adv
        } else {
            let lo = 1.0 - config.clip_eps;
            let hi = 1.0 + config.clip_eps;
            objective += (r * adv).min(r.clamp(lo, hi) * adv);
            if r < lo || r > hi {
                clipped += 1;
            }
            let unclipped_active = if adv >= 0.0 { r <= hi } else { r >= lo };
            if unclipped_active {
                adv
            } else {
                0.0
            }
        };
        // loss = −objective/n, and dr/dθ = r · d ln π/dθ
        let coeff = -inv_n * d_obj_dr * r;
        for j in 0..dim {
            let diff = action[j] - mean[j];
            grad_mean[[i, j]] += coeff * diff * inv_var[j];
            grad_log_std[j] += coeff * (diff * diff * inv_var[j] - 1.0);
        }

        if let Some((old_means, old_log_std)) = old {
            let old_mean = old_means.row(i).to_vec();
            kl_total += diag_gaussian_kl(&old_mean, old_log_std, mean, log_std);
            for j in 0..dim {
                let diff = mean[j] - old_mean[j];
                let var_old = (2.0 * old_log_std[j]).exp();
                grad_mean[[i, j]] += beta * inv_n * diff * inv_var[j];
                grad_log_std[j] += beta * inv_n * (1.0 - (var_old + diff * diff) * inv_var[j]);
            }
        }
    }
    objective *= inv_n;
    let kl = kl_total * inv_n;
    if kl_variant {
        objective -= beta * kl;
    }

    let entropy = actor.entropy();
    grad_log_std.mapv_inplace(|g| g - config.entropy_coef);

    let critic_actions = (critic.input_mode == CriticInput::StateAction).then_some(mb.actions);
    let critic_in = critic.inputs(mb.obs, critic_actions)?;
    let (values, critic_cache) = critic.mlp.forward(critic_in.view())?;
    let mut grad_value = Array2::zeros(values.dim());
    let mut value_loss = 0.0;
    for i in 0..n {
        let err = values[[i, 0]] - mb.returns[i];
        value_loss += err * err;
        grad_value[[i, 0]] = config.value_coef * 2.0 * err * inv_n;
    }
    value_loss *= inv_n;

    let total = -objective + config.value_coef * value_loss - config.entropy_coef * entropy;
    let (mlp_grads, _) = actor.mlp.backward(&actor_cache, grad_mean.view())?;
    let (critic_grads, _) = critic.mlp.backward(&critic_cache, grad_value.view())?;
    let parts = LossParts {
        total,
        objective,
        value_loss,
        entropy,
        kl,
        clip_fraction: clipped as f64 / n as f64,
        ratios,
    };
    Ok((
        parts,
        ActorGrads {
            mlp: mlp_grads,
            log_std: grad_log_std,
        },
        critic_grads,
    ))
}

#[derive(Debug, Clone, PartialEq)]
pub struct PpoStats {
    /// Mean of `−objective` over all minibatch steps.
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    /// `mean(log_prob_old − log_prob_new)` over the batch after the update.
    pub approx_kl: f64,
    /// Exact mean KL between snapshot and updated policy.
    pub mean_kl: f64,
    pub clip_fraction: f64,
    /// β in effect after the update (adaptive-KL variant).
    pub beta: f64,
    /// Largest `|ratio − 1|` seen in the very first minibatch.
    pub first_minibatch_ratio_deviation: f64,
    pub first_minibatch_clip_fraction: f64,
    pub minibatch_steps: usize,
}

/// K epochs of shuffled minibatch Adam steps on actor and critic.
///
/// `advantages` are normalized here; `batch.log_prob_old` must come from the
/// current actor, which is the snapshot policy for the whole update.
pub fn ppo_update<R: Rng + ?Sized>(
    learner: &mut PpoLearner,
    batch: &RolloutBatch,
    advantages: &[f64],
    returns: &[f64],
    config: &PpoConfig,
    rng: &mut R,
) -> Result<PpoStats> {
    config.validate()?;
    batch.validate()?;
    let n = batch.len();
    if n == 0 {
        return Err(Error::invalid("cannot update on an empty batch"));
    }
    if advantages.len() != n || returns.len() != n {
        return Err(Error::shape("advantages/returns do not match the batch"));
    }
    let mut adv = advantages.to_vec();
    normalize_advantages(&mut adv);

    let old_means = learner.actor.mlp.predict(batch.obs.view())?;
    let old_log_std = learner.actor.log_std.to_vec();
    let kl_variant = config.variant == PpoVariant::AdaptiveKl;

    let mut order: Vec<usize> = (0..n).collect();
    let mut sums = (0.0, 0.0, 0.0); // policy loss, value loss, clip fraction
    let mut steps = 0usize;
    let mut first_dev = 0.0;
    let mut first_clip = 0.0;

    for _epoch in 0..config.epochs {
        order.shuffle(rng);
        for chunk in order.chunks(config.minibatch_size) {
            let obs = batch.obs.select(Axis(0), chunk);
            let actions = batch.actions.select(Axis(0), chunk);
            let mb_old_means = if kl_variant {
                Some(old_means.select(Axis(0), chunk))
            } else {
                None
            };
            let lp_old: Vec<f64> = chunk.iter().map(|&i| batch.log_prob_old[i]).collect();
            let mb_adv: Vec<f64> = chunk.iter().map(|&i| adv[i]).collect();
            let mb_ret: Vec<f64> = chunk.iter().map(|&i| returns[i]).collect();
            let mb = Minibatch {
                obs: obs.view(),
                actions: actions.view(),
                log_prob_old: &lp_old,
                advantages: &mb_adv,
                returns: &mb_ret,
                old_means: mb_old_means.as_ref().map(|m| m.view()),
                old_log_std: kl_variant.then_some(old_log_std.as_slice()),
            };
            let (parts, actor_grads, critic_grads) =
                minibatch_loss_and_grads(&learner.actor, &learner.critic, &mb, config, learner.beta)?;
            if !parts.total.is_finite() {
                return Err(Error::NonFinite(format!(
                    "PPO loss became {} (objective {}, value loss {})",
                    parts.total, parts.objective, parts.value_loss
                )));
            }
            if steps == 0 {
                first_dev = parts.ratios.iter().map(|r| (r - 1.0).abs()).fold(0.0, f64::max);
                first_clip = parts.clip_fraction;
            }
            learner.actor_adam.step(&mut learner.actor, &actor_grads, config.lr)?;
            learner.actor.clamp_log_std();
            learner.critic_adam.step(&mut learner.critic.mlp, &critic_grads, config.lr)?;
            sums.0 += -parts.objective;
            sums.1 += parts.value_loss;
            sums.2 += parts.clip_fraction;
            steps += 1;
        }
    }

    let new_lp = learner.actor.log_prob_batch(batch.obs.view(), batch.actions.view())?;
    let approx_kl = batch
        .log_prob_old
        .iter()
        .zip(new_lp.iter())
        .map(|(o, n)| o - n)
        .sum::<f64>()
        / n as f64;
    let new_means = learner.actor.mlp.predict(batch.obs.view())?;
    let new_log_std = learner.actor.log_std.to_vec();
    let mean_kl = (0..n)
        .map(|i| {
            diag_gaussian_kl(
                old_means.row(i).as_slice().expect("row"),
                &old_log_std,
                new_means.row(i).as_slice().expect("row"),
                &new_log_std,
            )
        })
        .sum::<f64>()
        / n as f64;
    if !(approx_kl.is_finite() && mean_kl.is_finite()) {
        return Err(Error::NonFinite("KL after PPO update is not finite".into()));
    }
    if kl_variant {
        learner.beta = update_beta(learner.beta, mean_kl, config.kl_target, config.kl_a, config.kl_b);
    }

    let steps_f = steps as f64;
    Ok(PpoStats {
        policy_loss: sums.0 / steps_f,
        value_loss: sums.1 / steps_f,
        entropy: learner.actor.entropy(),
        approx_kl,
        mean_kl,
        clip_fraction: sums.2 / steps_f,
        beta: learner.beta,
        first_minibatch_ratio_deviation: first_dev,
        first_minibatch_clip_fraction: first_clip,
        minibatch_steps: steps,
    })
}
