//! Synthetic online-recommendation environment.
//!
//! A user is 11 categorical demographic attributes (one-hot encoded into 88
//! bits) plus a 3-dim dynamic interest. The agent recommends a page as one
//! 27-dim embedding. The user clicks each of the 10 slots independently with
//! probability `σ(κ·(cos(action, pref) − b_c))`, where `pref` is a latent unit
//! vector derived from the user's observation through a fixed random map.
//!
//! After every page the interest drifts toward a projection of the shown page,
//! and the session ends after `max_steps` pages, after `boredom_threshold`
//! consecutive empty pages, or on a random leave event.
//!
//! The latent preference is never part of an observation. The only way to
//! read it is through [`diagnostic`], which exists for calibration baselines.

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_distr::{Binomial, Distribution, StandardNormal};

use crate::numeric::sigmoid;
use crate::seeding::{self, tags};
use crate::{Error, Result, ACTION_DIM, OBS_DIM};

pub const NUM_ATTRIBUTES: usize = 11;
pub const ATTRIBUTE_VALUES: usize = 8;
pub const STATIC_DIM: usize = NUM_ATTRIBUTES * ATTRIBUTE_VALUES;
pub const INTEREST_DIM: usize = 3;
/// Items per recommended page; the reward counts clicked items.
pub const PAGE_SLOTS: u32 = 10;

#[derive(Debug, Clone, PartialEq)]
pub struct EnvConfig {
    /// Seed of the fixed user and interest maps.
    pub seed: u64,
    pub max_steps: usize,
    /// Click-model sharpness κ.
    pub kappa: f64,
    /// Click-model alignment offset b_c.
    pub click_bias: f64,
    /// Interest drift rate α_d.
    pub drift: f64,
    pub leave_prob: f64,
    /// Consecutive zero-reward pages that end a session.
    pub boredom_threshold: usize,
    /// Rank of the observation-to-preference map; 0 means full rank.
    pub pref_rank: usize,
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig {
            seed: 0,
            max_steps: 50,
            kappa: 6.0,
            click_bias: 0.3,
            drift: 0.2,
            leave_prob: 0.05,
            boredom_threshold: 2,
            pref_rank: 0,
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_steps == 0 {
            return Err(Error::Config("env.max_steps must be >= 1".into()));
        }
        if !(self.kappa.is_finite() && self.kappa > 0.0) {
            return Err(Error::Config("env.kappa must be > 0".into()));
        }
        if !self.click_bias.is_finite() {
            return Err(Error::Config("env.click_bias must be finite".into()));
        }
        if !(0.0..=1.0).contains(&self.drift) {
            return Err(Error::Config("env.drift must be in [0, 1]".into()));
        }
        if !(0.0..1.0).contains(&self.leave_prob) {
            return Err(Error::Config("env.leave_prob must be in [0, 1)".into()));
        }
        if self.boredom_threshold == 0 {
            return Err(Error::Config("boredom threshold must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UserProfile {
    pub static_attrs: [u8; NUM_ATTRIBUTES],
    pub static_code: Vec<f64>,
    pub interest: [f64; INTEREST_DIM],
    hidden_pref: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct EnvState {
    pub profile: UserProfile,
    pub step_index: usize,
    pub consecutive_zero_rewards: usize,
    pub done: bool,
    rng: seeding::Rng,
}

impl EnvState {
    pub fn observation(&self) -> Vec<f64> {
        observation(&self.profile)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepInfo {
    pub click_prob: f64,
    /// Number of pages shown so far, including this one.
    pub step_index: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub observation: Vec<f64>,
    pub reward: u32,
    pub done: bool,
    pub info: StepInfo,
}

/// One-hot encodes 11 attributes with 8 categories each.
pub fn encode_user(static_attrs: &[u8]) -> Result<Vec<f64>> {
    if static_attrs.len() != NUM_ATTRIBUTES {
        return Err(Error::shape(format!(
            "expected {NUM_ATTRIBUTES} attributes, got {}",
            static_attrs.len()
        )));
    }
    let mut code = vec![0.0; STATIC_DIM];
    for (i, &a) in static_attrs.iter().enumerate() {
        if a as usize >= ATTRIBUTE_VALUES {
            return Err(Error::invalid(format!("attribute {i} = {a} is not in 0..8")));
        }
        code[i * ATTRIBUTE_VALUES + a as usize] = 1.0;
    }
    Ok(code)
}

/// Click probability for a given cosine alignment between page and preference.
pub fn click_probability(config: &EnvConfig, alignment: f64) -> f64 {
    sigmoid(config.kappa * (alignment - config.click_bias))
}

fn observation(profile: &UserProfile) -> Vec<f64> {
    let mut obs = Vec::with_capacity(OBS_DIM);
    obs.extend_from_slice(&profile.static_code);
    obs.extend_from_slice(&profile.interest);
    obs
}

fn normalized(v: &[f64]) -> Vec<f64> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
    v.iter().map(|x| x / norm).collect()
}

/// Fixed world maps plus the configuration; immutable once built and safe to
/// share between threads.
#[derive(Debug, Clone)]
pub struct Environment {
    config: EnvConfig,
    /// 27 × 91 map from observation to latent preference.
    user_map: Array2<f64>,
    /// 3 × 27 projection of a page onto interest space.
    interest_map: Array2<f64>,
}

impl Environment {
    pub fn new(config: EnvConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = seeding::derived_rng(config.seed, tags::ENV_WORLD, 0);
        let mut normal = || rng.sample::<f64, _>(StandardNormal);
        let user_map = if config.pref_rank == 0 || config.pref_rank >= ACTION_DIM {
            Array2::from_shape_simple_fn((ACTION_DIM, OBS_DIM), &mut normal)
        } else {
            let left = Array2::from_shape_simple_fn((ACTION_DIM, config.pref_rank), &mut normal);
            let right = Array2::from_shape_simple_fn((config.pref_rank, OBS_DIM), &mut normal);
            left.dot(&right)
        };
        let interest_map = Array2::from_shape_simple_fn((INTEREST_DIM, ACTION_DIM), &mut normal);
        Ok(Environment {
            config,
            user_map,
            interest_map,
        })
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    fn preference(&self, static_code: &[f64], interest: &[f64; INTEREST_DIM]) -> Vec<f64> {
        let mut x = Array1::zeros(OBS_DIM);
        for (i, &v) in static_code.iter().chain(interest.iter()).enumerate() {
            x[i] = v;
        }
        normalized(self.user_map.dot(&x).as_slice().expect("contiguous"))
    }

    /// Starts a session for a freshly sampled user.
    pub fn reset(&self, seed: u64) -> (EnvState, Vec<f64>) {
        let mut rng = seeding::rng(seed);
        let mut static_attrs = [0u8; NUM_ATTRIBUTES];
        for a in &mut static_attrs {
            *a = rng.random_range(0..ATTRIBUTE_VALUES as u8);
        }
        let static_code = encode_user(&static_attrs).expect("attributes sampled in range");
        let mut interest = [0.0; INTEREST_DIM];
        for v in &mut interest {
            *v = rng.random_range(-1.0..=1.0);
        }
        let hidden_pref = self.preference(&static_code, &interest);
        let profile = UserProfile {
            static_attrs,
            static_code,
            interest,
            hidden_pref,
        };
        let obs = observation(&profile);
        let state = EnvState {
            profile,
            step_index: 0,
            consecutive_zero_rewards: 0,
            done: false,
            rng,
        };
        (state, obs)
    }

    /// Shows one page. Action entries are clipped to `[-1, 1]` before use.
    pub fn step(&self, state: &mut EnvState, action: &[f64]) -> Result<StepResult> {
        if state.done {
            return Err(Error::State("episode is finished; call reset".into()));
        }
        if action.len() != ACTION_DIM {
            return Err(Error::shape(format!(
                "action has {} entries, expected {ACTION_DIM}",
                action.len()
            )));
        }
        if action.iter().any(|a| !a.is_finite()) {
            return Err(Error::invalid("non-finite action"));
        }
        let cfg = &self.config;
        let clipped: Vec<f64> = action.iter().map(|a| a.clamp(-1.0, 1.0)).collect();
        let page = normalized(&clipped);
        let alignment: f64 = page
            .iter()
            .zip(&state.profile.hidden_pref)
            .map(|(a, b)| a * b)
            .sum();
        let click_prob = click_probability(cfg, alignment);
        let reward = Binomial::new(PAGE_SLOTS as u64, click_prob)
            .map_err(|e| Error::invalid(format!("click model: {e}")))?
            .sample(&mut state.rng) as u32;

        let pulled = self.interest_map.dot(&Array1::from(page));
        for (v, target) in state.profile.interest.iter_mut().zip(pulled.iter()) {
            *v = (*v + cfg.drift * (target - *v)).clamp(-1.0, 1.0);
        }
        state.profile.hidden_pref =
            self.preference(&state.profile.static_code, &state.profile.interest);

        state.step_index += 1;
        if reward == 0 {
            state.consecutive_zero_rewards += 1;
        } else {
            state.consecutive_zero_rewards = 0;
        }
        let leaves = state.rng.random::<f64>() < cfg.leave_prob;
        state.done = state.step_index >= cfg.max_steps
            || state.consecutive_zero_rewards >= cfg.boredom_threshold
            || leaves;

        Ok(StepResult {
            observation: observation(&state.profile),
            reward,
            done: state.done,
            info: StepInfo {
                click_prob,
                step_index: state.step_index,
            },
        })
    }
}

/// Privileged access to the latent preference. Baselines and tests only;
/// learners never see this.
pub mod diagnostic {
    use super::EnvState;
    use crate::{Error, Result};

    /// The best possible page for the current user: the latent preference.
    pub fn oracle_action(state: &EnvState) -> Result<Vec<f64>> {
        if state.done {
            return Err(Error::State("episode is finished".into()));
        }
        Ok(state.profile.hidden_pref.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn env() -> Environment {
        Environment::new(EnvConfig::default()).unwrap()
    }

    #[test]
    fn encode_all_zero_and_all_seven() {
        let code = encode_user(&[0; 11]).unwrap();
        let ones: Vec<usize> = (0..88).filter(|&i| code[i] == 1.0).collect();
        assert_eq!(ones, (0..11).map(|k| 8 * k).collect::<Vec<_>>());
        let code = encode_user(&[7; 11]).unwrap();
        let ones: Vec<usize> = (0..88).filter(|&i| code[i] == 1.0).collect();
        assert_eq!(ones, (0..11).map(|k| 8 * k + 7).collect::<Vec<_>>());
    }

    #[test]
    fn encode_rejects_out_of_range() {
        let mut attrs = [0u8; 11];
        attrs[4] = 8;
        assert!(matches!(encode_user(&attrs), Err(Error::Validation(_))));
        assert!(matches!(encode_user(&[0; 10]), Err(Error::Shape(_))));
    }

    #[test]
    fn reset_is_deterministic_and_shaped() {
        let env = env();
        let (s1, o1) = env.reset(42);
        let (_, o2) = env.reset(42);
        assert_eq!(o1, o2);
        assert_eq!(o1.len(), OBS_DIM);
        assert_eq!(s1.step_index, 0);
        assert!(!s1.done);
        let norm: f64 = diagnostic::oracle_action(&s1)
            .unwrap()
            .iter()
            .map(|x| x * x)
            .sum::<f64>()
            .sqrt();
        assert!((norm - 1.0).abs() < 1e-9);
        assert!(s1.profile.interest.iter().all(|v| (-1.0..=1.0).contains(v)));
    }

    #[test]
    fn closed_form_click_probabilities() {
        let cfg = EnvConfig::default();
        let aligned = click_probability(&cfg, 1.0);
        assert!((aligned - 1.0 / (1.0 + (-4.2f64).exp())).abs() < 1e-15);
        assert!((aligned - 0.9852).abs() < 1e-4);
        let orthogonal = click_probability(&cfg, 0.0);
        assert!((orthogonal - 0.1419).abs() < 1e-4);
    }

    #[test]
    fn oracle_step_reports_closed_form_probability() {
        let env = env();
        let (mut s, _) = env.reset(3);
        let a = diagnostic::oracle_action(&s).unwrap();
        let r = env.step(&mut s, &a).unwrap();
        assert!((r.info.click_prob - click_probability(env.config(), 1.0)).abs() < 1e-9);
    }

    #[test]
    fn stepping_finished_episode_fails() {
        let env = env();
        let (mut s, _) = env.reset(1);
        let zero = vec![0.0; ACTION_DIM];
        while !s.done {
            env.step(&mut s, &zero).unwrap();
        }
        assert!(matches!(env.step(&mut s, &zero), Err(Error::State(_))));
        assert!(matches!(diagnostic::oracle_action(&s), Err(Error::State(_))));
    }

    #[test]
    fn step_validates_action() {
        let env = env();
        let (mut s, _) = env.reset(1);
        assert!(matches!(env.step(&mut s, &[0.0; 5]), Err(Error::Shape(_))));
        let mut a = vec![0.1; ACTION_DIM];
        a[0] = f64::INFINITY;
        assert!(matches!(env.step(&mut s, &a), Err(Error::Validation(_))));
    }

    #[test]
    fn max_steps_bounds_episode() {
        let env = Environment::new(EnvConfig {
            max_steps: 3,
            leave_prob: 0.0,
            ..EnvConfig::default()
        })
        .unwrap();
        let (mut s, _) = env.reset(9);
        let mut n = 0;
        while !s.done {
            let a = diagnostic::oracle_action(&s).unwrap();
            env.step(&mut s, &a).unwrap();
            n += 1;
        }
        assert!((1..=3).contains(&n));
    }

    #[test]
    fn invalid_config_rejected() {
        let bad = EnvConfig {
            max_steps: 0,
            ..EnvConfig::default()
        };
        assert!(Environment::new(bad).is_err());
    }
}
