//! Flat `key = value` configuration files.
//!
//! Lines are `namespace.key = value`; `#` starts a comment. Keys not listed
//! in [`KEYS`] are rejected, and every key has a default.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::expert::DdpgConfig;
use crate::optim::PpoVariant;
use crate::pipeline::RunConfig;
use crate::policy::CriticInput;
use crate::{Error, Result};

/// Every accepted key.
pub const KEYS: &[&str] = &[
    "env.seed",
    "env.max_steps",
    "env.kappa",
    "env.click_bias",
    "env.drift",
    "env.leave_prob",
    "env.boredom_threshold",
    "env.pref_rank",
    "ppo.gamma",
    "ppo.gae_lambda",
    "ppo.clip_eps",
    "ppo.epochs",
    "ppo.minibatch_size",
    "ppo.lr",
    "ppo.entropy_coef",
    "ppo.value_coef",
    "ppo.bonus_weight",
    "ppo.variant",
    "ppo.kl_beta",
    "ppo.kl_a",
    "ppo.kl_b",
    "ppo.kl_target",
    "ppo.hidden",
    "ppo.critic_input",
    "ddpg.gamma",
    "ddpg.tau",
    "ddpg.hidden",
    "ddpg.buffer_size",
    "ddpg.episodes",
    "ddpg.lr_actor",
    "ddpg.lr_critic",
    "ddpg.critic_l2",
    "ddpg.batch_size",
    "ddpg.ou_theta",
    "ddpg.ou_mu",
    "ddpg.ou_sigma",
    "ddpg.ou_scale",
    "ddpg.expert_pairs",
    "ddpg.eval_every",
    "ddpg.eval_episodes",
    "ddpg.plateau_window",
    "ddpg.plateau_tol",
    "run.iterations",
    "run.episodes_per_iteration",
    "run.disc_lr",
    "run.disc_hidden",
    "run.disc_updates",
    "run.eval_episodes",
    "run.checkpoint_every",
    "run.expert_path",
    "run.seed",
    "run.js_bins",
    "run.projection_seed",
];

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Config {
    pub run: RunConfig,
    pub ddpg: DdpgConfig,
}

fn parse_value<T: FromStr>(key: &str, value: &str, line: usize) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("line {line}: cannot parse `{value}` for {key}")))
}

impl Config {
    pub fn validate(&self) -> Result<()> {
        self.run.validate()?;
        self.ddpg.validate()
    }

    /// Parses `text` over the defaults and validates the result.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Config::default();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {line}: expected `key = value`")))?;
            cfg.set(key.trim(), value.trim(), line)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Config::parse(&text)
    }

    /// Sets one key; `line` is only used in error messages.
    pub fn set(&mut self, key: &str, value: &str, line: usize) -> Result<()> {
        let run = &mut self.run;
        let (env, ppo, ddpg) = (&mut run.env, &mut run.ppo, &mut self.ddpg);
        macro_rules! put {
            ($field:expr) => {
                $field = parse_value(key, value, line)?
            };
        }
        match key {
            "env.seed" => put!(env.seed),
            "env.max_steps" => put!(env.max_steps),
            "env.kappa" => put!(env.kappa),
            "env.click_bias" => put!(env.click_bias),
            "env.drift" => put!(env.drift),
            "env.leave_prob" => put!(env.leave_prob),
            "env.boredom_threshold" => put!(env.boredom_threshold),
            "env.pref_rank" => put!(env.pref_rank),
            "ppo.gamma" => put!(ppo.gamma),
            "ppo.gae_lambda" => put!(ppo.gae_lambda),
            "ppo.clip_eps" => put!(ppo.clip_eps),
            "ppo.epochs" => put!(ppo.epochs),
            "ppo.minibatch_size" => put!(ppo.minibatch_size),
            "ppo.lr" => put!(ppo.lr),
            "ppo.entropy_coef" => put!(ppo.entropy_coef),
            "ppo.value_coef" => put!(ppo.value_coef),
            "ppo.bonus_weight" => put!(ppo.bonus_weight),
            "ppo.variant" => {
                ppo.variant = match value {
                    "clip" => PpoVariant::Clip,
                    "adaptive_kl" => PpoVariant::AdaptiveKl,
                    _ => {
                        return Err(Error::Config(format!(
                            "line {line}: ppo.variant must be `clip` or `adaptive_kl`, got `{value}`"
                        )))
                    }
                }
            }
            "ppo.kl_beta" => put!(ppo.kl_beta_init),
            "ppo.kl_a" => put!(ppo.kl_a),
            "ppo.kl_b" => put!(ppo.kl_b),
            "ppo.kl_target" => put!(ppo.kl_target),
            "ppo.hidden" => put!(run.policy_hidden),
            "ppo.critic_input" => {
                run.critic_input = match value {
                    "state" => CriticInput::State,
                    "state_action" => CriticInput::StateAction,
                    _ => {
                        return Err(Error::Config(format!(
                            "line {line}: ppo.critic_input must be `state` or `state_action`, got `{value}`"
                        )))
                    }
                }
            }
            "ddpg.gamma" => put!(ddpg.gamma),
            "ddpg.tau" => put!(ddpg.tau),
            "ddpg.hidden" => put!(ddpg.hidden),
            "ddpg.buffer_size" => put!(ddpg.buffer_size),
            "ddpg.episodes" => put!(ddpg.episodes),
            "ddpg.lr_actor" => put!(ddpg.lr_actor),
            "ddpg.lr_critic" => put!(ddpg.lr_critic),
            "ddpg.critic_l2" => put!(ddpg.critic_l2),
            "ddpg.batch_size" => put!(ddpg.batch_size),
            "ddpg.ou_theta" => put!(ddpg.ou_theta),
            "ddpg.ou_mu" => put!(ddpg.ou_mu),
            "ddpg.ou_sigma" => put!(ddpg.ou_sigma),
            "ddpg.ou_scale" => put!(ddpg.ou_scale),
            "ddpg.expert_pairs" => put!(ddpg.expert_pairs),
            "ddpg.eval_every" => put!(ddpg.eval_every),
            "ddpg.eval_episodes" => put!(ddpg.eval_episodes),
            "ddpg.plateau_window" => put!(ddpg.plateau_window),
            "ddpg.plateau_tol" => put!(ddpg.plateau_tol),
            "run.iterations" => put!(run.iterations),
            "run.episodes_per_iteration" => put!(run.episodes_per_iteration),
            "run.disc_lr" => put!(run.disc_lr),
            "run.disc_hidden" => put!(run.disc_hidden),
            "run.disc_updates" => put!(run.disc_updates),
            "run.eval_episodes" => put!(run.eval_episodes),
            "run.checkpoint_every" => put!(run.checkpoint_every),
            "run.expert_path" => run.expert_path = Some(PathBuf::from(value)),
            "run.seed" => put!(run.seed),
            "run.js_bins" => put!(run.js_bins),
            "run.projection_seed" => put!(run.projection_seed),
            _ => return Err(Error::Config(format!("line {line}: unknown key `{key}`"))),
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn golden_defaults() {
        let cfg = Config::parse("").unwrap();
        let (run, ppo, ddpg) = (&cfg.run, &cfg.run.ppo, &cfg.ddpg);
        assert_eq!(ppo.gae_lambda, 0.97);
        assert_eq!(ppo.gamma, 0.995);
        assert_eq!(ppo.clip_eps, 0.2);
        assert_eq!(ppo.lr, 0.003);
        assert_eq!(ppo.epochs, 4);
        assert_eq!(ppo.minibatch_size, 5);
        assert_eq!(ppo.kl_beta_init, 1.0);
        assert_eq!(ppo.kl_a, 1.5);
        assert_eq!(ppo.kl_b, 2.0);
        assert_eq!(ppo.kl_target, 0.01);
        assert_eq!(ppo.variant, PpoVariant::Clip);
        assert_eq!(run.policy_hidden, 256);
        assert_eq!(run.disc_lr, 0.003);
        assert_eq!(run.episodes_per_iteration, 100);
        assert_eq!(run.disc_updates, 1);
        assert_eq!(run.eval_episodes, 20);
        assert_eq!(run.js_bins, 16);
        assert_eq!(ddpg.gamma, 0.95);
        assert_eq!(ddpg.tau, 0.001);
        assert_eq!(ddpg.hidden, 128);
        assert_eq!(ddpg.buffer_size, 1000);
        assert_eq!(ddpg.episodes, 20_000);
        assert_eq!(ddpg.ou_theta, 0.15);
        assert_eq!(ddpg.ou_mu, 0.0);
        assert_eq!(ddpg.ou_sigma, 0.2);
        assert_eq!(ddpg.ou_scale, 0.1);
        assert_eq!(run.env.max_steps, 50);
        assert_eq!(run.env.kappa, 6.0);
        assert_eq!(run.env.click_bias, 0.3);
        assert_eq!(run.env.drift, 0.2);
        assert_eq!(run.env.leave_prob, 0.05);
    }

    #[test]
    fn file_overrides_defaults() {
        let text = "# comment\n\nppo.lr = 0.01   # trailing\nppo.variant = adaptive_kl\nrun.expert_path = /tmp/e.irlr\n";
        let cfg = Config::parse(text).unwrap();
        assert_eq!(cfg.run.ppo.lr, 0.01);
        assert_eq!(cfg.run.ppo.variant, PpoVariant::AdaptiveKl);
        assert_eq!(cfg.run.expert_path, Some(PathBuf::from("/tmp/e.irlr")));
        assert_eq!(cfg.run.ppo.gae_lambda, 0.97);
    }

    #[test]
    fn every_key_is_settable() {
        let mut cfg = Config::default();
        for key in KEYS {
            let value = match *key {
                "ppo.variant" => "clip",
                "ppo.critic_input" => "state",
                "run.expert_path" => "x",
                _ => "1",
            };
            cfg.set(key, value, 1).unwrap_or_else(|e| panic!("{key}: {e}"));
        }
    }

    #[test]
    fn range_error() {
        let err = Config::parse("ppo.clip_eps = 0.9").unwrap_err();
        assert!(matches!(err, Error::Config(_)));
        assert!(err.to_string().contains("clip_eps"));
    }

    #[test]
    fn unknown_key_named() {
        let err = Config::parse("bogus.key = 1").unwrap_err().to_string();
        assert!(err.contains("bogus.key"), "{err}");
    }

    #[test]
    fn bad_value_has_line_number() {
        let err = Config::parse("ppo.lr = 0.1\n\nppo.epochs = four\n").unwrap_err().to_string();
        assert!(err.contains("line 3"), "{err}");
        let err = Config::parse("ppo.lr 0.1").unwrap_err().to_string();
        assert!(err.contains("line 1"), "{err}");
    }
}
