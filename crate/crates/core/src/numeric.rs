//! Dense multilayer perceptrons with exact reverse-mode gradients.
//!
//! Everything is `f64`. Weights are stored `out × in` and applied to row-major
//! batches, so a layer computes `Z = X · Wᵀ + b` for `X` of shape
//! `batch × in`. Hidden layers use ReLU; the output head is configurable.
//!
//! Backprop here is exact for `sum(grad_out ⊙ output)`. Losses that want batch
//! means fold the `1/N` into `grad_out` themselves.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use rand_distr::{Distribution, Uniform};

use crate::{Error, Result};

/// Output nonlinearity of the last layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Head {
    Identity,
    Tanh,
    Sigmoid,
}

impl Head {
    fn apply(self, z: f64) -> f64 {
        match self {
            Head::Identity => z,
            Head::Tanh => z.tanh(),
            Head::Sigmoid => sigmoid(z),
        }
    }

    /// Derivative expressed through the head's output `y`.
    fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Head::Identity => 1.0,
            Head::Tanh => 1.0 - y * y,
            Head::Sigmoid => y * (1.0 - y),
        }
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// One affine layer. `weights` is `out × in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Layer {
    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Layer {
            weights: Array2::zeros((out_dim, in_dim)),
            bias: Array1::zeros(out_dim),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weights.ncols()
    }

    pub fn out_dim(&self) -> usize {
        self.weights.nrows()
    }
}

/// Network parameters: a chain of layers plus the output head.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Layer>,
    pub head: Head,
}

/// Per-layer inputs and the final output of one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// `inputs[k]` is the input fed to layer `k` (post-ReLU for k > 0).
    inputs: Vec<Array2<f64>>,
    /// Pre-activations of every hidden layer.
    hidden_pre: Vec<Array2<f64>>,
    output: Array2<f64>,
}

impl ForwardCache {
    pub fn batch_size(&self) -> usize {
        self.output.nrows()
    }

    pub fn output(&self) -> &Array2<f64> {
        &self.output
    }
}

/// Gradients with the same layout as an [`Mlp`].
#[derive(Debug, Clone, PartialEq)]
pub struct MlpGrads {
    pub layers: Vec<Layer>,
}

impl MlpGrads {
    pub fn zeros_like(mlp: &Mlp) -> Self {
        MlpGrads {
            layers: mlp
                .layers
                .iter()
                .map(|l| Layer::zeros(l.in_dim(), l.out_dim()))
                .collect(),
        }
    }
}

/// Uniform access to the flat parameter tensors of a model.
///
/// Order of the returned slices is stable and identical between a model and
/// its gradients, which is what [`AdamState`] and [`finite_diff_check`] rely on.
pub trait Params {
    fn tensors(&self) -> Vec<&[f64]>;
    fn tensors_mut(&mut self) -> Vec<&mut [f64]>;

    fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }
}

fn layer_slices(layers: &[Layer]) -> Vec<&[f64]> {
    let mut out = Vec::with_capacity(layers.len() * 2);
    for l in layers {
        out.push(l.weights.as_slice().expect("standard layout"));
        out.push(l.bias.as_slice().expect("standard layout"));
    }
    out
}

fn layer_slices_mut(layers: &mut [Layer]) -> Vec<&mut [f64]> {
    let mut out = Vec::with_capacity(layers.len() * 2);
    for l in layers {
        out.push(l.weights.as_slice_mut().expect("standard layout"));
        out.push(l.bias.as_slice_mut().expect("standard layout"));
    }
    out
}

impl Params for Mlp {
    fn tensors(&self) -> Vec<&[f64]> {
        layer_slices(&self.layers)
    }
    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        layer_slices_mut(&mut self.layers)
    }
}

impl Params for MlpGrads {
    fn tensors(&self) -> Vec<&[f64]> {
        layer_slices(&self.layers)
    }
    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        layer_slices_mut(&mut self.layers)
    }
}

impl Mlp {
    /// Builds a network with layer widths `sizes[0] → sizes[1] → … → sizes[n]`.
    ///
    /// Weights are Glorot-uniform in `±√(6/(in+out))`, biases zero.
    pub fn new<R: Rng + ?Sized>(sizes: &[usize], head: Head, rng: &mut R) -> Result<Self> {
        let mut mlp = Mlp::zeros(sizes, head)?;
        for layer in &mut mlp.layers {
            let limit = (6.0 / (layer.in_dim() + layer.out_dim()) as f64).sqrt();
            let dist = Uniform::new_inclusive(-limit, limit)
                .map_err(|e| Error::invalid(format!("init range: {e}")))?;
            layer.weights.mapv_inplace(|_| dist.sample(rng));
        }
        Ok(mlp)
    }

    pub fn zeros(sizes: &[usize], head: Head) -> Result<Self> {
        if sizes.len() < 2 {
            return Err(Error::invalid("an MLP needs at least an input and an output width"));
        }
        if sizes.contains(&0) {
            return Err(Error::invalid("layer widths must be positive"));
        }
        let layers = sizes.windows(2).map(|w| Layer::zeros(w[0], w[1])).collect();
        Ok(Mlp { layers, head })
    }

    /// Assembles a network from explicit layers, checking that widths chain.
    pub fn from_layers(layers: Vec<Layer>, head: Head) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::invalid("an MLP needs at least one layer"));
        }
        for (k, l) in layers.iter().enumerate() {
            if l.bias.len() != l.out_dim() {
                return Err(Error::shape(format!(
                    "layer {k}: bias length {} != out dim {}",
                    l.bias.len(),
                    l.out_dim()
                )));
            }
        }
        for (k, pair) in layers.windows(2).enumerate() {
            if pair[0].out_dim() != pair[1].in_dim() {
                return Err(Error::shape(format!(
                    "layer {k} outputs {} but layer {} expects {}",
                    pair[0].out_dim(),
                    k + 1,
                    pair[1].in_dim()
                )));
            }
        }
        let layers = layers
            .into_iter()
            .map(|l| Layer {
                weights: l.weights.as_standard_layout().into_owned(),
                bias: l.bias,
            })
            .collect();
        Ok(Mlp { layers, head })
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|x| x.is_finite()))
    }

    /// Batched forward pass returning the output and a cache for [`Mlp::backward`].
    pub fn forward(&self, input: ArrayView2<f64>) -> Result<(Array2<f64>, ForwardCache)> {
        self.check_input(input)?;
        let last = self.layers.len() - 1;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut hidden_pre = Vec::with_capacity(last);
        let mut current = input.to_owned();
        for (k, layer) in self.layers.iter().enumerate() {
            let mut z = current.dot(&layer.weights.t());
            z += &layer.bias;
            inputs.push(current);
            if k < last {
                current = z.mapv(|v| v.max(0.0));
                hidden_pre.push(z);
            } else {
                let head = self.head;
                z.mapv_inplace(|v| head.apply(v));
                current = z;
            }
        }
        let cache = ForwardCache {
            inputs,
            hidden_pre,
            output: current.clone(),
        };
        Ok((current, cache))
    }

    /// Forward pass without keeping a cache.
    pub fn predict(&self, input: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_input(input)?;
        let last = self.layers.len() - 1;
        let mut current = input.to_owned();
        for (k, layer) in self.layers.iter().enumerate() {
            let mut z = current.dot(&layer.weights.t());
            z += &layer.bias;
            if k < last {
                z.mapv_inplace(|v| v.max(0.0));
            } else {
                let head = self.head;
                z.mapv_inplace(|v| head.apply(v));
            }
            current = z;
        }
        Ok(current)
    }

    /// Single-row convenience wrapper around [`Mlp::predict`].
    pub fn predict_one(&self, input: &[f64]) -> Result<Vec<f64>> {
        let view = ArrayView2::from_shape((1, input.len()), input)
            .map_err(|e| Error::shape(e.to_string()))?;
        Ok(self.predict(view)?.into_raw_vec_and_offset().0)
    }

    /// Exact gradients of `sum(grad_out ⊙ output)` with respect to every
    /// parameter and to the input.
    pub fn backward(
        &self,
        cache: &ForwardCache,
        grad_out: ArrayView2<f64>,
    ) -> Result<(MlpGrads, Array2<f64>)> {
        if cache.inputs.len() != self.layers.len()
            || cache.hidden_pre.len() + 1 != self.layers.len()
        {
            return Err(Error::shape("forward cache does not match network depth"));
        }
        if grad_out.dim() != cache.output.dim() {
            return Err(Error::shape(format!(
                "grad_out {:?} does not match output {:?}",
                grad_out.dim(),
                cache.output.dim()
            )));
        }
        for (k, (layer, input)) in self.layers.iter().zip(&cache.inputs).enumerate() {
            if input.ncols() != layer.in_dim() {
                return Err(Error::shape(format!("cache input {k} width mismatch")));
            }
        }

        let head = self.head;
        let mut delta = ndarray::Zip::from(&grad_out)
            .and(&cache.output)
            .map_collect(|&g, &y| g * head.derivative_from_output(y));

        let mut grads: Vec<Layer> = Vec::with_capacity(self.layers.len());
        for k in (0..self.layers.len()).rev() {
            let layer = &self.layers[k];
            let weights = standard(delta.t().dot(&cache.inputs[k]));
            let bias = delta.sum_axis(Axis(0));
            grads.push(Layer { weights, bias });
            let mut upstream = delta.dot(&layer.weights);
            if k > 0 {
                ndarray::Zip::from(&mut upstream)
                    .and(&cache.hidden_pre[k - 1])
                    .for_each(|u, &z| {
                        if z <= 0.0 {
                            *u = 0.0;
                        }
                    });
            }
            delta = upstream;
        }
        grads.reverse();
        Ok((MlpGrads { layers: grads }, delta))
    }

    fn check_input(&self, input: ArrayView2<f64>) -> Result<()> {
        if input.ncols() != self.in_dim() {
            return Err(Error::shape(format!(
                "input width {} != network input {}",
                input.ncols(),
                self.in_dim()
            )));
        }
        if input.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite network input"));
        }
        Ok(())
    }
}

/// Adam optimizer state for one parameter set.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(params: &impl Params) -> Self {
        Self::with_constants(params, 0.9, 0.999, 1e-8)
    }

    pub fn with_constants(params: &impl Params, beta1: f64, beta2: f64, eps: f64) -> Self {
        let shapes: Vec<usize> = params.tensors().iter().map(|t| t.len()).collect();
        AdamState {
            m: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            v: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            t: 0,
            beta1,
            beta2,
            eps,
        }
    }

    /// One bias-corrected Adam step.
    pub fn step<P: Params + ?Sized, G: Params + ?Sized>(
        &mut self,
        params: &mut P,
        grads: &G,
        lr: f64,
    ) -> Result<()> {
        if !(lr >= 0.0) {
            return Err(Error::invalid(format!("learning rate must be >= 0, got {lr}")));
        }
        let grads = grads.tensors();
        let mut params = params.tensors_mut();
        if grads.len() != params.len() || params.len() != self.m.len() {
            return Err(Error::shape("adam: parameter/gradient/state tensor counts differ"));
        }
        for ((p, g), m) in params.iter().zip(&grads).zip(&self.m) {
            if p.len() != g.len() || p.len() != m.len() {
                return Err(Error::shape("adam: tensor lengths differ"));
            }
        }

        self.t += 1;
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
        let bc1 = 1.0 - b1.powi(self.t as i32);
        let bc2 = 1.0 - b2.powi(self.t as i32);
        let step = lr / bc1;
        let inv_sqrt_bc2 = 1.0 / bc2.sqrt();
        for (((p, g), m), v) in params
            .iter_mut()
            .zip(&grads)
            .zip(self.m.iter_mut())
            .zip(self.v.iter_mut())
        {
            for i in 0..p.len() {
                let gi = g[i];
                let mi = b1 * m[i] + (1.0 - b1) * gi;
                let vi = b2 * v[i] + (1.0 - b2) * gi * gi;
                m[i] = mi;
                v[i] = vi;
                p[i] -= step * mi / (vi.sqrt() * inv_sqrt_bc2 + eps);
            }
        }
        Ok(())
    }
}

/// Outcome of a finite-difference gradient check.
#[derive(Debug, Clone, PartialEq)]
pub struct FdReport {
    pub max_rel_error: f64,
    pub probes: usize,
    pub passed: bool,
}

/// Gradients smaller than this are compared on an absolute scale; central
/// differences carry roughly `1e-16 · |loss| / h` of rounding noise.
pub const FD_SCALE_FLOOR: f64 = 1e-4;

/// `|a − n| / max(|a|, |n|, FD_SCALE_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FD_SCALE_FLOOR)
}

/// Compares `analytic` against central differences of `loss` on `probes`
/// coordinates drawn uniformly (with the given seed) from all parameters.
pub fn finite_diff_check<P, G, F>(
    mut loss: F,
    params: &P,
    analytic: &G,
    probes: usize,
    h: f64,
    tol: f64,
    seed: u64,
) -> Result<FdReport>
where
    P: Params + Clone,
    G: Params + ?Sized,
    F: FnMut(&P) -> f64,
{
    if probes == 0 {
        return Err(Error::invalid("probes must be >= 1"));
    }
    if !(h > 0.0) {
        return Err(Error::invalid("h must be > 0"));
    }
    let sizes: Vec<usize> = params.tensors().iter().map(|t| t.len()).collect();
    let analytic = analytic.tensors();
    if analytic.len() != sizes.len() || analytic.iter().zip(&sizes).any(|(a, &n)| a.len() != n) {
        return Err(Error::shape("analytic gradient does not match parameters"));
    }
    let total: usize = sizes.iter().sum();
    if total == 0 {
        return Err(Error::invalid("no parameters to probe"));
    }

    let mut rng = crate::seeding::rng(seed);
    let mut probe = params.clone();
    let mut max_rel: f64 = 0.0;
    for _ in 0..probes {
        let mut flat = rng.random_range(0..total);
        let mut tensor = 0;
        while flat >= sizes[tensor] {
            flat -= sizes[tensor];
            tensor += 1;
        }
        let original = probe.tensors()[tensor][flat];

        probe.tensors_mut()[tensor][flat] = original + h;
        let plus = loss(&probe);
        probe.tensors_mut()[tensor][flat] = original - h;
        let minus = loss(&probe);
        probe.tensors_mut()[tensor][flat] = original;

        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::NonFinite("loss is not finite under perturbation".into()));
        }
        let numeric = (plus - minus) / (2.0 * h);
        max_rel = max_rel.max(relative_error(analytic[tensor][flat], numeric));
    }
    Ok(FdReport {
        max_rel_error: max_rel,
        probes,
        passed: max_rel < tol,
    })
}

/// `dot` may hand back column-major results; parameter storage must be row-major.
fn standard(a: Array2<f64>) -> Array2<f64> {
    if a.is_standard_layout() {
        a
    } else {
        a.as_standard_layout().into_owned()
    }
}

/// Builds a `rows × cols` matrix from row slices.
pub fn stack_rows(rows: &[&[f64]], cols: usize) -> Result<Array2<f64>> {
    let mut data = Vec::with_capacity(rows.len() * cols);
    for r in rows {
        if r.len() != cols {
            return Err(Error::shape(format!("row length {} != {cols}", r.len())));
        }
        data.extend_from_slice(r);
    }
    Array2::from_shape_vec((rows.len(), cols), data).map_err(|e| Error::shape(e.to_string()))
}
