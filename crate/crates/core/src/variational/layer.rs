use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{sigmoid, softplus, Scalar};

/// Pre-softplus scale every posterior entry starts from (σ ≈ 0.0067).
pub const INITIAL_RHO: f64 = -5.0;

/// Mean-field Gaussian linear layer `y = W x + b` with
/// `W ~ N(mu_w, softplus(rho_w)^2)` and `b ~ N(mu_b, softplus(rho_b)^2)`.
///
/// Weights are stored `[out, in]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct VariationalLinear<T: Scalar> {
    pub mu_w: Array2<T>,
    pub rho_w: Array2<T>,
    pub mu_b: Array1<T>,
    pub rho_b: Array1<T>,
}

/// Standard-normal draws for one sampled forward pass of one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerNoise<T: Scalar> {
    pub eps_w: Array2<T>,
    pub eps_b: Array1<T>,
}

/// Posterior stddevs and their derivative w.r.t. rho, computed once per
/// parameter update and shared by every MC sample drawn against it.
#[derive(Debug, Clone)]
pub struct PosteriorScales<T: Scalar> {
    pub sigma_w: Array2<T>,
    pub sigma_b: Array1<T>,
    pub dsigma_w: Array2<T>,
    pub dsigma_b: Array1<T>,
}

/// Posterior variances, for sampling pre-activations directly.
#[derive(Debug, Clone)]
pub struct OutputVariance<T: Scalar> {
    pub var_w: Array2<T>,
    pub var_b: Array1<T>,
}

/// Everything needed to backpropagate (or replay) one sampled pass.
#[derive(Debug, Clone)]
pub struct LinearTrace<T: Scalar> {
    pub noise: LayerNoise<T>,
    /// Layer input, `[batch, in]`.
    pub input: Array2<T>,
    /// The sampled weight matrix `mu_w + sigma_w * eps_w`.
    pub weight: Array2<T>,
}

/// Gradients w.r.t. every mean and pre-softplus scale of a layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearGrads<T: Scalar> {
    pub mu_w: Array2<T>,
    pub rho_w: Array2<T>,
    pub mu_b: Array1<T>,
    pub rho_b: Array1<T>,
}

impl<T: Scalar> VariationalLinear<T> {
    /// Means uniform in `±1/sqrt(fan_in)`, all rho at [`INITIAL_RHO`].
    pub fn init<R: Rng + ?Sized>(in_dim: usize, out_dim: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (in_dim.max(1) as f64).sqrt();
        let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
        let mu_w = Array2::from_shape_simple_fn((out_dim, in_dim), || T::lit(dist.sample(rng)));
        let mu_b = Array1::from_shape_simple_fn(out_dim, || T::lit(dist.sample(rng)));
        Self {
            mu_w,
            rho_w: Array2::from_elem((out_dim, in_dim), T::lit(INITIAL_RHO)),
            mu_b,
            rho_b: Array1::from_elem(out_dim, T::lit(INITIAL_RHO)),
        }
    }

    pub fn from_parts(
        mu_w: Array2<T>,
        rho_w: Array2<T>,
        mu_b: Array1<T>,
        rho_b: Array1<T>,
    ) -> Result<Self> {
        if mu_w.dim() != rho_w.dim() {
            return Err(Error::Shape(format!(
                "mu_w {:?} vs rho_w {:?}",
                mu_w.dim(),
                rho_w.dim()
            )));
        }
        if mu_b.len() != rho_b.len() || mu_b.len() != mu_w.nrows() {
            return Err(Error::Shape(format!(
                "bias lengths {}/{} for {} outputs",
                mu_b.len(),
                rho_b.len(),
                mu_w.nrows()
            )));
        }
        Ok(Self {
            mu_w: mu_w.as_standard_layout().into_owned(),
            rho_w: rho_w.as_standard_layout().into_owned(),
            mu_b,
            rho_b,
        })
    }

    /// Layer whose posterior stddev is `sigma` everywhere.
    pub fn with_sigma(mu_w: Array2<T>, mu_b: Array1<T>, sigma: T) -> Result<Self> {
        let rho = crate::scalar::inverse_softplus(sigma);
        let rho_w = Array2::from_elem(mu_w.dim(), rho);
        let rho_b = Array1::from_elem(mu_b.len(), rho);
        Self::from_parts(mu_w, rho_w, mu_b, rho_b)
    }

    pub fn in_dim(&self) -> usize {
        self.mu_w.ncols()
    }

    pub fn out_dim(&self) -> usize {
        self.mu_w.nrows()
    }

    pub fn num_params(&self) -> usize {
        2 * (self.mu_w.len() + self.mu_b.len())
    }

    pub fn scales(&self) -> PosteriorScales<T> {
        PosteriorScales {
            sigma_w: self.rho_w.mapv(softplus),
            sigma_b: self.rho_b.mapv(softplus),
            dsigma_w: self.rho_w.mapv(sigmoid),
            dsigma_b: self.rho_b.mapv(sigmoid),
        }
    }

    pub fn output_variance(&self) -> OutputVariance<T> {
        let sq = |r: T| {
            let s = softplus(r);
            s * s
        };
        OutputVariance {
            var_w: self.rho_w.mapv(sq),
            var_b: self.rho_b.mapv(sq),
        }
    }

    pub fn max_sigma(&self) -> T {
        self.rho_w
            .iter()
            .chain(self.rho_b.iter())
            .fold(T::zero(), |m, &r| m.max(softplus(r)))
    }

    pub fn sample_noise<R: Rng + ?Sized>(&self, rng: &mut R) -> LayerNoise<T> {
        let eps_w = Array2::from_shape_simple_fn(self.mu_w.dim(), || normal(rng));
        let eps_b = Array1::from_shape_simple_fn(self.mu_b.len(), || normal(rng));
        LayerNoise { eps_w, eps_b }
    }

    /// Forward pass for a batch `[batch, in]` under explicit noise.
    pub fn forward_with_noise(
        &self,
        scales: &PosteriorScales<T>,
        x: ArrayView2<'_, T>,
        noise: LayerNoise<T>,
    ) -> Result<(Array2<T>, LinearTrace<T>)> {
        if x.ncols() != self.in_dim() {
            return Err(Error::Shape(format!(
                "layer expects {} inputs, got {}",
                self.in_dim(),
                x.ncols()
            )));
        }
        if noise.eps_w.dim() != self.mu_w.dim() || noise.eps_b.len() != self.mu_b.len() {
            return Err(Error::Structural("noise shape differs from layer".into()));
        }
        let mut weight = self.mu_w.clone();
        Zip::from(&mut weight)
            .and(&scales.sigma_w)
            .and(&noise.eps_w)
            .for_each(|w, &s, &e| *w = *w + s * e);
        let mut bias = self.mu_b.clone();
        Zip::from(&mut bias)
            .and(&scales.sigma_b)
            .and(&noise.eps_b)
            .for_each(|b, &s, &e| *b = *b + s * e);
        let mut y = x.dot(&weight.t());
        y += &bias;
        let trace = LinearTrace {
            noise,
            input: x.to_owned(),
            weight,
        };
        Ok((y, trace))
    }

    /// Draws fresh noise from `rng` and runs a batched forward pass.
    pub fn sample_forward_batch<R: Rng + ?Sized>(
        &self,
        scales: &PosteriorScales<T>,
        x: ArrayView2<'_, T>,
        rng: &mut R,
    ) -> Result<(Array2<T>, LinearTrace<T>)> {
        if x.ncols() != self.in_dim() {
            return Err(Error::Shape(format!(
                "layer expects {} inputs, got {}",
                self.in_dim(),
                x.ncols()
            )));
        }
        let noise = self.sample_noise(rng);
        self.forward_with_noise(scales, x, noise)
    }

    /// Samples each output unit from `N(x mu_w^T + mu_b, x^2 var_w^T + var_b)`
    /// with independent noise per row. For a single row this has the same
    /// law as [`sample_forward_batch`](Self::sample_forward_batch) while
    /// drawing `out` normals instead of `out * (in + 1)`.
    pub fn sample_forward_local<R: Rng + ?Sized>(
        &self,
        var: &OutputVariance<T>,
        x: ArrayView2<'_, T>,
        rng: &mut R,
    ) -> Result<Array2<T>> {
        if x.ncols() != self.in_dim() {
            return Err(Error::Shape(format!(
                "layer expects {} inputs, got {}",
                self.in_dim(),
                x.ncols()
            )));
        }
        let mut mean = x.dot(&self.mu_w.t());
        mean += &self.mu_b;
        let mut v = x.mapv(|a| a * a).dot(&var.var_w.t());
        v += &var.var_b;
        Zip::from(&mut mean)
            .and(&v)
            .for_each(|m, &s2| *m = *m + s2.sqrt() * normal::<T, R>(rng));
        Ok(mean)
    }

    /// Single-vector sampled forward pass.
    pub fn sample_forward<R: Rng + ?Sized>(
        &self,
        x: ArrayView1<'_, T>,
        rng: &mut R,
    ) -> Result<(Array1<T>, LinearTrace<T>)> {
        let scales = self.scales();
        let x2 = x.insert_axis(Axis(0));
        let (y, trace) = self.sample_forward_batch(&scales, x2, rng)?;
        Ok((y.index_axis_move(Axis(0), 0), trace))
    }

    /// Recomputes the output of a recorded pass from its stored noise.
    pub fn replay(&self, trace: &LinearTrace<T>) -> Result<Array2<T>> {
        let scales = self.scales();
        let (y, _) = self.forward_with_noise(&scales, trace.input.view(), trace.noise.clone())?;
        Ok(y)
    }

    /// Backpropagates `dy` (`[batch, out]`) through a recorded pass.
    /// Returns parameter gradients and the gradient w.r.t. the input.
    pub fn backward(
        &self,
        scales: &PosteriorScales<T>,
        trace: &LinearTrace<T>,
        dy: ArrayView2<'_, T>,
    ) -> Result<(LinearGrads<T>, Array2<T>)> {
        if dy.ncols() != self.out_dim() || dy.nrows() != trace.input.nrows() {
            return Err(Error::Structural(format!(
                "upstream gradient {:?} does not fit layer output [{}, {}]",
                dy.dim(),
                trace.input.nrows(),
                self.out_dim()
            )));
        }
        if trace.weight.dim() != self.mu_w.dim() {
            return Err(Error::Structural("trace recorded for another layer".into()));
        }
        let g_w = dy.t().dot(&trace.input).as_standard_layout().into_owned();
        let g_b = dy.sum_axis(Axis(0));
        let mut rho_w = g_w.clone();
        Zip::from(&mut rho_w)
            .and(&trace.noise.eps_w)
            .and(&scales.dsigma_w)
            .for_each(|g, &e, &d| *g = *g * e * d);
        let mut rho_b = g_b.clone();
        Zip::from(&mut rho_b)
            .and(&trace.noise.eps_b)
            .and(&scales.dsigma_b)
            .for_each(|g, &e, &d| *g = *g * e * d);
        let dx = dy.dot(&trace.weight);
        Ok((
            LinearGrads {
                mu_w: g_w,
                rho_w,
                mu_b: g_b,
                rho_b,
            },
            dx,
        ))
    }

    /// Closed-form `KL(q || N(0, 1))` summed over all weight and bias entries.
    pub fn kl_to_standard_normal(&self) -> T {
        fn term<T: Scalar>(mu: T, rho: T) -> T {
            let sigma = softplus(rho);
            let half = T::lit(0.5);
            half * (mu * mu + sigma * sigma - T::lit(2.0) * sigma.ln() - T::one())
        }
        let w = self
            .mu_w
            .iter()
            .zip(self.rho_w.iter())
            .fold(T::zero(), |acc, (&m, &r)| acc + term(m, r));
        let b = self
            .mu_b
            .iter()
            .zip(self.rho_b.iter())
            .fold(T::zero(), |acc, (&m, &r)| acc + term(m, r));
        w + b
    }

    /// Adds `weight * dKL/dθ` into `grads`.
    pub fn accumulate_kl_grad(&self, grads: &mut LinearGrads<T>, weight: T) {
        fn d_rho<T: Scalar>(rho: T) -> T {
            let sigma = softplus(rho);
            (sigma - sigma.recip()) * sigmoid(rho)
        }
        Zip::from(&mut grads.mu_w)
            .and(&self.mu_w)
            .for_each(|g, &m| *g = *g + weight * m);
        Zip::from(&mut grads.mu_b)
            .and(&self.mu_b)
            .for_each(|g, &m| *g = *g + weight * m);
        Zip::from(&mut grads.rho_w)
            .and(&self.rho_w)
            .for_each(|g, &r| *g = *g + weight * d_rho(r));
        Zip::from(&mut grads.rho_b)
            .and(&self.rho_b)
            .for_each(|g, &r| *g = *g + weight * d_rho(r));
    }

    /// Mutable views of `[mu_w, rho_w, mu_b, rho_b]` as flat slices.
    pub fn param_slices_mut(&mut self) -> [&mut [T]; 4] {
        [
            self.mu_w.as_slice_mut().expect("standard layout"),
            self.rho_w.as_slice_mut().expect("standard layout"),
            self.mu_b.as_slice_mut().expect("standard layout"),
            self.rho_b.as_slice_mut().expect("standard layout"),
        ]
    }

    pub fn param_slices(&self) -> [&[T]; 4] {
        [
            self.mu_w.as_slice().expect("standard layout"),
            self.rho_w.as_slice().expect("standard layout"),
            self.mu_b.as_slice().expect("standard layout"),
            self.rho_b.as_slice().expect("standard layout"),
        ]
    }
}

impl<T: Scalar> LinearGrads<T> {
    pub fn zeros_like(layer: &VariationalLinear<T>) -> Self {
        Self {
            mu_w: Array2::zeros(layer.mu_w.dim()),
            rho_w: Array2::zeros(layer.rho_w.dim()),
            mu_b: Array1::zeros(layer.mu_b.len()),
            rho_b: Array1::zeros(layer.rho_b.len()),
        }
    }

    pub fn add_assign(&mut self, other: &Self) {
        self.mu_w += &other.mu_w;
        self.rho_w += &other.rho_w;
        self.mu_b += &other.mu_b;
        self.rho_b += &other.rho_b;
    }

    pub fn scale(&mut self, factor: T) {
        self.mu_w.mapv_inplace(|v| v * factor);
        self.rho_w.mapv_inplace(|v| v * factor);
        self.mu_b.mapv_inplace(|v| v * factor);
        self.rho_b.mapv_inplace(|v| v * factor);
    }

    pub fn slices(&self) -> [&[T]; 4] {
        [
            self.mu_w.as_slice().expect("standard layout"),
            self.rho_w.as_slice().expect("standard layout"),
            self.mu_b.as_slice().expect("standard layout"),
            self.rho_b.as_slice().expect("standard layout"),
        ]
    }

    pub fn max_abs(&self) -> T {
        self.slices()
            .iter()
            .flat_map(|s| s.iter())
            .fold(T::zero(), |m, v| m.max(v.abs()))
    }
}

pub(crate) fn normal<T: Scalar, R: Rng + ?Sized>(rng: &mut R) -> T {
    let z: f64 = StandardNormal.sample(rng);
    T::lit(z)
}
