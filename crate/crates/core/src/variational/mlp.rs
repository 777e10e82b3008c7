use ndarray::{Array2, ArrayView2, Zip};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::layer::{LinearGrads, LinearTrace, OutputVariance, PosteriorScales, VariationalLinear};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    fn apply<T: Scalar>(self, v: T) -> T {
        match self {
            Activation::Relu => v.max(T::zero()),
            Activation::Identity => v,
        }
    }

    fn derivative<T: Scalar>(self, pre: T) -> T {
        match self {
            Activation::Relu if pre > T::zero() => T::one(),
            Activation::Relu => T::zero(),
            Activation::Identity => T::one(),
        }
    }
}

/// Shape and regularization settings of one Bayesian MLP.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub input_dim: usize,
    /// Output width of each layer, in order.
    pub layer_dims: Vec<usize>,
    /// One activation per layer.
    pub activations: Vec<Activation>,
    pub dropout_rate: f64,
    pub mc_samples: usize,
    pub kl_weight: f64,
}

pub const DEFAULT_DROPOUT: f64 = 0.3;
pub const DEFAULT_MC_SAMPLES: usize = 10;
pub const DEFAULT_KL_WEIGHT: f64 = 1e-6;

impl MlpSpec {
    /// ReLU on hidden layers, identity on the last one.
    pub fn new(input_dim: usize, layer_dims: Vec<usize>) -> Self {
        let n = layer_dims.len();
        let activations = (0..n)
            .map(|i| {
                if i + 1 == n {
                    Activation::Identity
                } else {
                    Activation::Relu
                }
            })
            .collect();
        Self {
            input_dim,
            layer_dims,
            activations,
            dropout_rate: DEFAULT_DROPOUT,
            mc_samples: DEFAULT_MC_SAMPLES,
            kl_weight: DEFAULT_KL_WEIGHT,
        }
    }

    pub fn clinical(input_dim: usize) -> Self {
        Self::new(input_dim, vec![64, 128, 256, 768])
    }

    pub fn radiomic(input_dim: usize) -> Self {
        Self::new(input_dim, vec![256, 768])
    }

    pub fn classifier(input_dim: usize) -> Self {
        Self::new(input_dim, vec![256, 1024, 1])
    }

    pub fn output_dim(&self) -> usize {
        self.layer_dims.last().copied().unwrap_or(self.input_dim)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layer_dims.is_empty() || self.layer_dims.iter().any(|&d| d == 0) {
            return Err(Error::Config(format!(
                "layer widths must be positive and nonempty: {:?}",
                self.layer_dims
            )));
        }
        if self.input_dim == 0 {
            return Err(Error::Config("input width must be positive".into()));
        }
        if self.activations.len() != self.layer_dims.len() {
            return Err(Error::Config(format!(
                "{} activations for {} layers",
                self.activations.len(),
                self.layer_dims.len()
            )));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Config(format!(
                "dropout rate {} outside [0, 1)",
                self.dropout_rate
            )));
        }
        if self.mc_samples == 0 {
            return Err(Error::Config("mc_samples must be at least 1".into()));
        }
        if !(self.kl_weight >= 0.0) {
            return Err(Error::Config(format!("kl weight {} < 0", self.kl_weight)));
        }
        Ok(())
    }
}

/// Stack of variational layers following an [`MlpSpec`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct BayesianMlp<T: Scalar> {
    pub spec: MlpSpec,
    pub layers: Vec<VariationalLinear<T>>,
}

#[derive(Debug, Clone)]
pub struct LayerTrace<T: Scalar> {
    pub linear: LinearTrace<T>,
    pub pre_activation: Array2<T>,
    /// Inverted-dropout multipliers (0 or 1/(1-rate)); `None` when inactive.
    pub mask: Option<Array2<T>>,
}

/// Record of one sampled pass through a whole MLP.
#[derive(Debug, Clone)]
pub struct ForwardTrace<T: Scalar> {
    pub layers: Vec<LayerTrace<T>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpGrads<T: Scalar> {
    pub layers: Vec<LinearGrads<T>>,
}

impl<T: Scalar> BayesianMlp<T> {
    pub fn init<R: Rng + ?Sized>(spec: MlpSpec, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        let mut in_dim = spec.input_dim;
        let mut layers = Vec::with_capacity(spec.layer_dims.len());
        for &out in &spec.layer_dims {
            layers.push(VariationalLinear::init(in_dim, out, rng));
            in_dim = out;
        }
        Ok(Self { spec, layers })
    }

    /// Assembles an MLP from explicit layers, checking that widths chain.
    pub fn from_layers(spec: MlpSpec, layers: Vec<VariationalLinear<T>>) -> Result<Self> {
        spec.validate()?;
        if layers.len() != spec.layer_dims.len() {
            return Err(Error::Shape(format!(
                "{} layers for {} widths",
                layers.len(),
                spec.layer_dims.len()
            )));
        }
        let mut in_dim = spec.input_dim;
        for (i, (layer, &out)) in layers.iter().zip(&spec.layer_dims).enumerate() {
            if layer.in_dim() != in_dim || layer.out_dim() != out {
                return Err(Error::Shape(format!(
                    "layer {i} is {}x{}, expected {}x{}",
                    layer.out_dim(),
                    layer.in_dim(),
                    out,
                    in_dim
                )));
            }
            in_dim = out;
        }
        Ok(Self { spec, layers })
    }

    pub fn input_dim(&self) -> usize {
        self.spec.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.spec.output_dim()
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.num_params()).sum()
    }

    pub fn scales(&self) -> Vec<PosteriorScales<T>> {
        self.layers.iter().map(|l| l.scales()).collect()
    }

    pub fn kl_to_standard_normal(&self) -> T {
        self.layers
            .iter()
            .fold(T::zero(), |acc, l| acc + l.kl_to_standard_normal())
    }

    pub fn max_sigma(&self) -> T {
        self.layers
            .iter()
            .fold(T::zero(), |m, l| m.max(l.max_sigma()))
    }

    /// One sampled pass for a batch `[batch, input_dim]`.
    pub fn forward<R: Rng + ?Sized>(
        &self,
        x: ArrayView2<'_, T>,
        rng: &mut R,
        training: bool,
    ) -> Result<(Array2<T>, ForwardTrace<T>)> {
        let scales = self.scales();
        self.forward_with_scales(&scales, x, rng, training)
    }

    /// As [`forward`](Self::forward) with posterior scales computed by the caller.
    pub fn forward_with_scales<R: Rng + ?Sized>(
        &self,
        scales: &[PosteriorScales<T>],
        x: ArrayView2<'_, T>,
        rng: &mut R,
        training: bool,
    ) -> Result<(Array2<T>, ForwardTrace<T>)> {
        if scales.len() != self.layers.len() {
            return Err(Error::Structural("scales computed for another network".into()));
        }
        if x.ncols() != self.input_dim() {
            return Err(Error::Shape(format!(
                "network expects {} inputs, got {}",
                self.input_dim(),
                x.ncols()
            )));
        }
        let last = self.layers.len() - 1;
        let rate = self.spec.dropout_rate;
        let keep_scale = T::lit(1.0 / (1.0 - rate));
        let mut traces = Vec::with_capacity(self.layers.len());
        let mut h = x.to_owned();
        for (i, (layer, sc)) in self.layers.iter().zip(scales).enumerate() {
            let (pre, linear) = layer.sample_forward_batch(sc, h.view(), rng)?;
            let act = self.spec.activations[i];
            let mut out = pre.mapv(|v| act.apply(v));
            let mask = if training && i != last && rate > 0.0 {
                let m = Array2::from_shape_simple_fn(out.dim(), || {
                    if rng.random::<f64>() < rate {
                        T::zero()
                    } else {
                        keep_scale
                    }
                });
                out *= &m;
                Some(m)
            } else {
                None
            };
            traces.push(LayerTrace {
                linear,
                pre_activation: pre,
                mask,
            });
            h = out;
        }
        Ok((h, ForwardTrace { layers: traces }))
    }

    pub fn output_variances(&self) -> Vec<OutputVariance<T>> {
        self.layers.iter().map(|l| l.output_variance()).collect()
    }

    /// Inference-mode pass that samples pre-activations per row (see
    /// [`VariationalLinear::sample_forward_local`]). No dropout, no trace.
    pub fn sample_local<R: Rng + ?Sized>(
        &self,
        vars: &[OutputVariance<T>],
        x: ArrayView2<'_, T>,
        rng: &mut R,
    ) -> Result<Array2<T>> {
        if vars.len() != self.layers.len() {
            return Err(Error::Structural("variances computed for another network".into()));
        }
        let mut h = x.to_owned();
        for (i, (layer, v)) in self.layers.iter().zip(vars).enumerate() {
            let act = self.spec.activations[i];
            h = layer.sample_forward_local(v, h.view(), rng)?.mapv(|z| act.apply(z));
        }
        Ok(h)
    }

    /// Reproduces the output of a recorded pass from its trace alone.
    pub fn replay(&self, trace: &ForwardTrace<T>) -> Result<Array2<T>> {
        self.check_trace(trace)?;
        let scales = self.scales();
        let mut h: Option<Array2<T>> = None;
        for (i, (layer, lt)) in self.layers.iter().zip(&trace.layers).enumerate() {
            let input = h.as_ref().map(|a| a.view()).unwrap_or(lt.linear.input.view());
            let (pre, _) = layer.forward_with_noise(&scales[i], input, lt.linear.noise.clone())?;
            let act = self.spec.activations[i];
            let mut out = pre.mapv(|v| act.apply(v));
            if let Some(m) = &lt.mask {
                out *= m;
            }
            h = Some(out);
        }
        Ok(h.expect("at least one layer"))
    }

    /// Exact gradients of `sum(upstream ⊙ output)` for the sampled pass in
    /// `trace`. Returns per-layer parameter gradients and the input gradient.
    pub fn backward(
        &self,
        trace: &ForwardTrace<T>,
        upstream: ArrayView2<'_, T>,
    ) -> Result<(MlpGrads<T>, Array2<T>)> {
        let scales = self.scales();
        self.backward_with_scales(&scales, trace, upstream)
    }

    pub fn backward_with_scales(
        &self,
        scales: &[PosteriorScales<T>],
        trace: &ForwardTrace<T>,
        upstream: ArrayView2<'_, T>,
    ) -> Result<(MlpGrads<T>, Array2<T>)> {
        self.check_trace(trace)?;
        let mut grad = upstream.to_owned();
        let mut out = Vec::with_capacity(self.layers.len());
        for i in (0..self.layers.len()).rev() {
            let lt = &trace.layers[i];
            if grad.dim() != lt.pre_activation.dim() {
                return Err(Error::Structural(format!(
                    "gradient {:?} vs layer {i} output {:?}",
                    grad.dim(),
                    lt.pre_activation.dim()
                )));
            }
            if let Some(m) = &lt.mask {
                grad *= m;
            }
            let act = self.spec.activations[i];
            if act != Activation::Identity {
                Zip::from(&mut grad)
                    .and(&lt.pre_activation)
                    .for_each(|g, &p| *g = *g * act.derivative(p));
            }
            let (g, dx) = self.layers[i].backward(&scales[i], &lt.linear, grad.view())?;
            out.push(g);
            grad = dx;
        }
        out.reverse();
        Ok((MlpGrads { layers: out }, grad))
    }

    /// Adds `weight * dKL/dθ` for every layer into `grads`.
    pub fn accumulate_kl_grad(&self, grads: &mut MlpGrads<T>, weight: T) {
        for (layer, g) in self.layers.iter().zip(grads.layers.iter_mut()) {
            layer.accumulate_kl_grad(g, weight);
        }
    }

    fn check_trace(&self, trace: &ForwardTrace<T>) -> Result<()> {
        if trace.layers.len() != self.layers.len() {
            return Err(Error::Structural(format!(
                "trace has {} layers, network has {}",
                trace.layers.len(),
                self.layers.len()
            )));
        }
        for (i, (l, t)) in self.layers.iter().zip(&trace.layers).enumerate() {
            if t.linear.weight.dim() != l.mu_w.dim() {
                return Err(Error::Structural(format!("layer {i} shape differs from trace")));
            }
        }
        Ok(())
    }
}

impl<T: Scalar> MlpGrads<T> {
    pub fn zeros_like(mlp: &BayesianMlp<T>) -> Self {
        Self {
            layers: mlp.layers.iter().map(LinearGrads::zeros_like).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Self) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.add_assign(b);
        }
    }

    pub fn scale(&mut self, factor: T) {
        for g in &mut self.layers {
            g.scale(factor);
        }
    }

    pub fn max_abs(&self) -> T {
        self.layers
            .iter()
            .fold(T::zero(), |m, g| m.max(g.max_abs()))
    }
}
