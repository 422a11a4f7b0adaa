//! Learner actor-critic.
//!
//! The actor is a diagonal Gaussian whose mean is a tanh-headed MLP of the
//! observation and whose log standard deviation is one global learnable
//! vector. The critic is a scalar value network over the observation or over
//! the concatenated observation and action.

use std::f64::consts::PI;

use ndarray::{concatenate, Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::checkpoint::{self, NamedArray};
use crate::numeric::{ForwardCache, Head, Mlp, MlpGrads, Params};
use crate::{Error, Result, ACTION_DIM, OBS_DIM};

pub const LOG_STD_MIN: f64 = -5.0;
pub const LOG_STD_MAX: f64 = 2.0;
pub const LOG_STD_INIT: f64 = -0.5;
pub const DEFAULT_HIDDEN: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActMode {
    Stochastic,
    Deterministic,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Actor {
    pub mlp: Mlp,
    pub log_std: Array1<f64>,
}

/// Gradient container shaped like [`Actor`].
#[derive(Debug, Clone, PartialEq)]
pub struct ActorGrads {
    pub mlp: MlpGrads,
    pub log_std: Array1<f64>,
}

impl Params for Actor {
    fn tensors(&self) -> Vec<&[f64]> {
        let mut t = self.mlp.tensors();
        t.push(self.log_std.as_slice().expect("contiguous"));
        t
    }
    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut t = self.mlp.tensors_mut();
        t.push(self.log_std.as_slice_mut().expect("contiguous"));
        t
    }
}

impl Params for ActorGrads {
    fn tensors(&self) -> Vec<&[f64]> {
        let mut t = self.mlp.tensors();
        t.push(self.log_std.as_slice().expect("contiguous"));
        t
    }
    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut t = self.mlp.tensors_mut();
        t.push(self.log_std.as_slice_mut().expect("contiguous"));
        t
    }
}

impl ActorGrads {
    pub fn zeros_like(actor: &Actor) -> Self {
        ActorGrads {
            mlp: MlpGrads::zeros_like(&actor.mlp),
            log_std: Array1::zeros(actor.log_std.len()),
        }
    }
}

/// `ln N(action; mean, diag(exp(log_std))²)`.
pub fn gaussian_log_density(mean: &[f64], log_std: &[f64], action: &[f64]) -> f64 {
    let mut acc = -0.5 * mean.len() as f64 * (2.0 * PI).ln();
    for ((&m, &ls), &a) in mean.iter().zip(log_std).zip(action) {
        let z = (a - m) * (-ls).exp();
        acc -= 0.5 * z * z + ls;
    }
    acc
}

/// Closed-form entropy of a diagonal Gaussian.
pub fn gaussian_entropy(log_std: &[f64]) -> f64 {
    log_std.iter().sum::<f64>() + 0.5 * log_std.len() as f64 * (1.0 + (2.0 * PI).ln())
}

impl Actor {
    pub fn new<R: Rng + ?Sized>(hidden: usize, rng: &mut R) -> Result<Self> {
        Ok(Actor {
            mlp: Mlp::new(&[OBS_DIM, hidden, hidden, ACTION_DIM], Head::Tanh, rng)?,
            log_std: Array1::from_elem(ACTION_DIM, LOG_STD_INIT),
        })
    }

    pub fn action_dim(&self) -> usize {
        self.log_std.len()
    }

    pub fn clamp_log_std(&mut self) {
        self.log_std.mapv_inplace(|v| v.clamp(LOG_STD_MIN, LOG_STD_MAX));
    }

    fn check_obs(&self, obs: &[f64]) -> Result<()> {
        if obs.len() != self.mlp.in_dim() {
            return Err(Error::shape(format!(
                "observation has {} entries, expected {}",
                obs.len(),
                self.mlp.in_dim()
            )));
        }
        if obs.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite observation"));
        }
        Ok(())
    }

    pub fn mean(&self, obs: &[f64]) -> Result<Vec<f64>> {
        self.check_obs(obs)?;
        self.mlp.predict_one(obs)
    }

    pub fn mean_batch(&self, obs: ArrayView2<f64>) -> Result<(Array2<f64>, ForwardCache)> {
        self.mlp.forward(obs)
    }

    /// Samples (or, deterministically, returns the mean) and reports the
    /// log density of the returned action under the unclipped Gaussian.
    pub fn act<R: Rng + ?Sized>(
        &self,
        obs: &[f64],
        mode: ActMode,
        rng: &mut R,
    ) -> Result<(Vec<f64>, f64)> {
        let mean = self.mean(obs)?;
        let log_std = self.log_std.as_slice().expect("contiguous");
        let action: Vec<f64> = match mode {
            ActMode::Deterministic => mean.clone(),
            ActMode::Stochastic => mean
                .iter()
                .zip(log_std)
                .map(|(&m, &ls)| m + ls.exp() * rng.sample::<f64, _>(StandardNormal))
                .collect(),
        };
        let lp = gaussian_log_density(&mean, log_std, &action);
        Ok((action, lp))
    }

    pub fn log_prob(&self, obs: &[f64], action: &[f64]) -> Result<f64> {
        if action.len() != self.action_dim() {
            return Err(Error::shape(format!(
                "action has {} entries, expected {}",
                action.len(),
                self.action_dim()
            )));
        }
        let mean = self.mean(obs)?;
        Ok(gaussian_log_density(
            &mean,
            self.log_std.as_slice().expect("contiguous"),
            action,
        ))
    }

    /// Row-wise log densities for a batch.
    pub fn log_prob_batch(&self, obs: ArrayView2<f64>, actions: ArrayView2<f64>) -> Result<Array1<f64>> {
        if actions.dim() != (obs.nrows(), self.action_dim()) {
            return Err(Error::shape("actions do not match observations"));
        }
        let means = self.mlp.predict(obs)?;
        let ls = self.log_std.as_slice().expect("contiguous");
        Ok(Array1::from_iter(means.rows().into_iter().zip(actions.rows()).map(
            |(m, a)| gaussian_log_density(m.as_slice().expect("row"), ls, &a.to_vec()),
        )))
    }

    /// Entropy of the action distribution; independent of the observation.
    pub fn entropy(&self) -> f64 {
        gaussian_entropy(self.log_std.as_slice().expect("contiguous"))
    }

    pub fn to_arrays(&self, prefix: &str) -> Vec<NamedArray> {
        let mut out = checkpoint::mlp_arrays(prefix, &self.mlp);
        out.push(NamedArray::vector(format!("{prefix}.log_std"), self.log_std.to_vec()));
        out
    }

    pub fn from_arrays(prefix: &str, arrays: &[NamedArray]) -> Result<Self> {
        let mlp = checkpoint::mlp_from_arrays(prefix, arrays, Head::Tanh)?;
        let log_std = checkpoint::find(arrays, &format!("{prefix}.log_std"))?.to_vector()?;
        if log_std.len() != mlp.out_dim() {
            return Err(Error::shape("log_std length does not match actor output"));
        }
        Ok(Actor { mlp, log_std })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CriticInput {
    State,
    StateAction,
}

impl CriticInput {
    pub fn width(self) -> usize {
        match self {
            CriticInput::State => OBS_DIM,
            CriticInput::StateAction => OBS_DIM + ACTION_DIM,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Critic {
    pub mlp: Mlp,
    pub input_mode: CriticInput,
}

impl Critic {
    pub fn new<R: Rng + ?Sized>(hidden: usize, input_mode: CriticInput, rng: &mut R) -> Result<Self> {
        Ok(Critic {
            mlp: Mlp::new(&[input_mode.width(), hidden, hidden, 1], Head::Identity, rng)?,
            input_mode,
        })
    }

    /// Assembles the network input for a batch; actions must be given iff the
    /// critic is state-action.
    pub fn inputs(&self, obs: ArrayView2<f64>, actions: Option<ArrayView2<f64>>) -> Result<Array2<f64>> {
        match (self.input_mode, actions) {
            (CriticInput::State, None) => Ok(obs.to_owned()),
            (CriticInput::StateAction, Some(a)) => {
                if a.nrows() != obs.nrows() {
                    return Err(Error::shape("actions and observations differ in length"));
                }
                concatenate(Axis(1), &[obs, a]).map_err(|e| Error::shape(e.to_string()))
            }
            (CriticInput::State, Some(_)) => {
                Err(Error::invalid("state critic does not take an action"))
            }
            (CriticInput::StateAction, None) => {
                Err(Error::invalid("state-action critic needs an action"))
            }
        }
    }

    pub fn value(&self, obs: &[f64], action: Option<&[f64]>) -> Result<f64> {
        let obs = ArrayView2::from_shape((1, obs.len()), obs).map_err(|e| Error::shape(e.to_string()))?;
        let action = action
            .map(|a| ArrayView2::from_shape((1, a.len()), a).map_err(|e| Error::shape(e.to_string())))
            .transpose()?;
        Ok(self.values(obs, action)?[0])
    }

    pub fn values(&self, obs: ArrayView2<f64>, actions: Option<ArrayView2<f64>>) -> Result<Array1<f64>> {
        let x = self.inputs(obs, actions)?;
        Ok(self.mlp.predict(x.view())?.column(0).to_owned())
    }

    pub fn to_arrays(&self, prefix: &str) -> Vec<NamedArray> {
        checkpoint::mlp_arrays(prefix, &self.mlp)
    }

    pub fn from_arrays(prefix: &str, arrays: &[NamedArray]) -> Result<Self> {
        let mlp = checkpoint::mlp_from_arrays(prefix, arrays, Head::Identity)?;
        let input_mode = match mlp.in_dim() {
            w if w == OBS_DIM => CriticInput::State,
            w if w == OBS_DIM + ACTION_DIM => CriticInput::StateAction,
            w => return Err(Error::shape(format!("critic input width {w} is neither 91 nor 118"))),
        };
        Ok(Critic { mlp, input_mode })
    }
}
