//! Expert-vs-learner discriminator.
//!
//! `D(s, a)` is the probability that a state-action pair came from the expert.
//! It is trained to minimize
//!
//! ```text
//! L = −( mean_expert ln D + mean_learner ln(1 − D) )
//! ```
//!
//! and pays the learner a bonus `ln D(s, a)`, so learner pairs that look
//! expert-like earn more. Outputs are clipped to `[clip_eps, 1 − clip_eps]`
//! before any logarithm is taken.

use ndarray::{concatenate, s, Array1, Array2, ArrayView2, Axis};
use rand::Rng;

use crate::checkpoint::{self, NamedArray};
use crate::numeric::{AdamState, Head, Mlp, MlpGrads};
use crate::{Error, Result, ACTION_DIM, OBS_DIM, PAIR_DIM};

pub const DEFAULT_HIDDEN: usize = 128;
pub const DEFAULT_CLIP_EPS: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct Discriminator {
    pub mlp: Mlp,
    pub clip_eps: f64,
}

/// Concatenates observations and actions row-wise into `n × 118` pairs.
pub fn make_pairs(obs: ArrayView2<f64>, actions: ArrayView2<f64>) -> Result<Array2<f64>> {
    if obs.ncols() != OBS_DIM || actions.ncols() != ACTION_DIM {
        return Err(Error::shape(format!(
            "pairs need {OBS_DIM}-wide observations and {ACTION_DIM}-wide actions, got {} and {}",
            obs.ncols(),
            actions.ncols()
        )));
    }
    if obs.nrows() != actions.nrows() {
        return Err(Error::shape("observation and action counts differ"));
    }
    concatenate(Axis(1), &[obs, actions]).map_err(|e| Error::shape(e.to_string()))
}

impl Discriminator {
    pub fn new<R: Rng + ?Sized>(hidden: usize, rng: &mut R) -> Result<Self> {
        Ok(Discriminator {
            mlp: Mlp::new(&[PAIR_DIM, hidden, hidden, 1], Head::Sigmoid, rng)?,
            clip_eps: DEFAULT_CLIP_EPS,
        })
    }

    fn clip(&self, d: f64) -> f64 {
        d.clamp(self.clip_eps, 1.0 - self.clip_eps)
    }

    /// Clipped scores for a batch of concatenated pairs.
    pub fn scores(&self, pairs: ArrayView2<f64>) -> Result<Array1<f64>> {
        let out = self.mlp.predict(pairs)?;
        Ok(out.column(0).mapv(|d| self.clip(d)))
    }

    pub fn score(&self, obs: &[f64], action: &[f64]) -> Result<f64> {
        if obs.len() != OBS_DIM || action.len() != ACTION_DIM {
            return Err(Error::shape(format!(
                "expected a {OBS_DIM}-dim observation and {ACTION_DIM}-dim action"
            )));
        }
        let mut pair = Vec::with_capacity(PAIR_DIM);
        pair.extend_from_slice(obs);
        pair.extend_from_slice(action);
        let view = ArrayView2::from_shape((1, PAIR_DIM), &pair).expect("pair width");
        Ok(self.scores(view)?[0])
    }

    /// `ln D(s, a)`; never below `ln(clip_eps)`.
    pub fn bonus(&self, obs: &[f64], action: &[f64]) -> Result<f64> {
        Ok(self.score(obs, action)?.ln())
    }

    pub fn bonuses(&self, pairs: ArrayView2<f64>) -> Result<Array1<f64>> {
        Ok(self.scores(pairs)?.mapv(f64::ln))
    }

    pub fn loss(&self, learner: ArrayView2<f64>, expert: ArrayView2<f64>) -> Result<f64> {
        check_batches(learner, expert)?;
        let d_expert = self.scores(expert)?;
        let d_learner = self.scores(learner)?;
        Ok(-(d_expert.mapv(f64::ln).mean().expect("nonempty")
            + d_learner.mapv(|d| (1.0 - d).ln()).mean().expect("nonempty")))
    }

    /// Loss and its exact gradient. Clipped outputs contribute zero gradient.
    pub fn loss_and_grads(
        &self,
        learner: ArrayView2<f64>,
        expert: ArrayView2<f64>,
    ) -> Result<(f64, MlpGrads)> {
        check_batches(learner, expert)?;
        let (n_e, n_l) = (expert.nrows(), learner.nrows());
        let batch = concatenate(Axis(0), &[expert, learner]).map_err(|e| Error::shape(e.to_string()))?;
        let (raw, cache) = self.mlp.forward(batch.view())?;
        let mut grad_out = Array2::zeros(raw.dim());
        let (mut sum_e, mut sum_l) = (0.0, 0.0);
        for i in 0..n_e + n_l {
            let r = raw[[i, 0]];
            let d = self.clip(r);
            let clipped = d != r;
            if i < n_e {
                sum_e += d.ln();
                if !clipped {
                    grad_out[[i, 0]] = -1.0 / (d * n_e as f64);
                }
            } else {
                sum_l += (1.0 - d).ln();
                if !clipped {
                    grad_out[[i, 0]] = 1.0 / ((1.0 - d) * n_l as f64);
                }
            }
        }
        let loss = -(sum_e / n_e as f64 + sum_l / n_l as f64);
        let (grads, _) = self.mlp.backward(&cache, grad_out.view())?;
        Ok((loss, grads))
    }

    /// One Adam step on the discriminator loss; returns the loss before the step.
    pub fn update(
        &mut self,
        adam: &mut AdamState,
        learner: ArrayView2<f64>,
        expert: ArrayView2<f64>,
        lr: f64,
    ) -> Result<f64> {
        let (loss, grads) = self.loss_and_grads(learner, expert)?;
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!("discriminator loss is {loss}")));
        }
        adam.step(&mut self.mlp, &grads, lr)?;
        Ok(loss)
    }

    /// Fraction of pairs classified correctly at threshold 0.5.
    pub fn accuracy(&self, learner: ArrayView2<f64>, expert: ArrayView2<f64>) -> Result<f64> {
        check_batches(learner, expert)?;
        let hits_e = self.scores(expert)?.iter().filter(|&&d| d > 0.5).count();
        let hits_l = self.scores(learner)?.iter().filter(|&&d| d < 0.5).count();
        Ok((hits_e + hits_l) as f64 / (expert.nrows() + learner.nrows()) as f64)
    }

    pub fn to_arrays(&self, prefix: &str) -> Vec<NamedArray> {
        checkpoint::mlp_arrays(prefix, &self.mlp)
    }

    pub fn from_arrays(prefix: &str, arrays: &[NamedArray]) -> Result<Self> {
        let mlp = checkpoint::mlp_from_arrays(prefix, arrays, Head::Sigmoid)?;
        if mlp.in_dim() != PAIR_DIM || mlp.out_dim() != 1 {
            return Err(Error::shape("discriminator must map 118 inputs to 1 output"));
        }
        Ok(Discriminator {
            mlp,
            clip_eps: DEFAULT_CLIP_EPS,
        })
    }
}

fn check_batches(learner: ArrayView2<f64>, expert: ArrayView2<f64>) -> Result<()> {
    if learner.nrows() == 0 || expert.nrows() == 0 {
        return Err(Error::invalid("discriminator batches must be nonempty"));
    }
    if learner.ncols() != PAIR_DIM || expert.ncols() != PAIR_DIM {
        return Err(Error::shape(format!("pairs must be {PAIR_DIM} wide")));
    }
    Ok(())
}

/// Splits a pair matrix back into its observation and action blocks.
pub fn split_pairs(pairs: ArrayView2<f64>) -> (ArrayView2<f64>, ArrayView2<f64>) {
    (pairs.slice_move(s![.., ..OBS_DIM]), pairs.slice_move(s![.., OBS_DIM..]))
}
