//! Independent reference computations. Shared by the core integration tests
//! and the acceptance runner.

#![allow(dead_code)]

use std::time::{Duration, Instant};

use miracle_core::objectives::{auc, focal_loss_from_logit, focal_loss_grad, roc_curve, tpr_at_fpr, FocalParams};
use miracle_core::variational::{Activation, BayesianMlp, ForwardTrace, MlpSpec, VariationalLinear};
use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Result of one oracle comparison.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub passed: bool,
    pub detail: String,
}

impl Outcome {
    fn new(passed: bool, detail: String) -> Self {
        Self { passed, detail }
    }
}

/// `|a - n| / max(|a|, |n|)` over a whole tensor (L2 norms), zero when both
/// vanish.
pub fn rel_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff = analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).powi(2))
        .sum::<f64>()
        .sqrt();
    let na = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nn = numeric.iter().map(|a| a * a).sum::<f64>().sqrt();
    let scale = na.max(nn);
    if scale < 1e-12 {
        diff
    } else {
        diff / scale
    }
}

const FD_STEP: f64 = 1e-6;

fn central<F: FnMut(f64) -> f64>(x: f64, mut f: F) -> f64 {
    (f(x + FD_STEP) - f(x - FD_STEP)) / (2.0 * FD_STEP)
}

/// Random small variational MLP with a recorded forward pass.
struct GradCase {
    net: BayesianMlp<f64>,
    x: Array2<f64>,
    trace: ForwardTrace<f64>,
    labels: Vec<u8>,
    /// Objective weights for a multi-unit head; `None` means a focal head.
    head: Option<Array2<f64>>,
    focal: FocalParams,
    kl_weight: f64,
}

impl GradCase {
    fn random(rng: &mut ChaCha8Rng) -> Self {
        loop {
            let depth = rng.random_range(1..=3);
            let focal_head = rng.random_bool(0.5);
            let mut dims: Vec<usize> = (0..depth).map(|_| rng.random_range(1..=6)).collect();
            if focal_head {
                *dims.last_mut().unwrap() = 1;
            }
            let input = rng.random_range(1..=5);
            let batch = rng.random_range(1..=4);
            let mut spec = MlpSpec::new(input, dims.clone());
            spec.dropout_rate = if rng.random_bool(0.5) { 0.3 } else { 0.0 };
            let mut fan_in = input;
            let mut layers = Vec::new();
            for &out in &dims {
                let g = |rng: &mut ChaCha8Rng, lo: f64, hi: f64| rng.random_range(lo..hi);
                let mu_w = Array2::from_shape_simple_fn((out, fan_in), || g(rng, -1.0, 1.0));
                let rho_w = Array2::from_shape_simple_fn((out, fan_in), || g(rng, -3.0, 0.5));
                let mu_b = Array1::from_shape_simple_fn(out, || g(rng, -0.5, 0.5));
                let rho_b = Array1::from_shape_simple_fn(out, || g(rng, -3.0, 0.5));
                layers.push(VariationalLinear::from_parts(mu_w, rho_w, mu_b, rho_b).unwrap());
                fan_in = out;
            }
            let net = BayesianMlp::from_layers(spec, layers).unwrap();
            let x = Array2::from_shape_simple_fn((batch, input), || rng.random_range(-2.0..2.0));
            let (_, trace) = net.forward(x.view(), rng, true).unwrap();
            // keep clear of ReLU kinks so central differences stay smooth
            let near_kink = trace.layers.iter().enumerate().any(|(i, l)| {
                net.spec.activations[i] == Activation::Relu
                    && l.pre_activation.iter().any(|z| z.abs() < 1e-3)
            });
            if near_kink {
                continue;
            }
            let labels = (0..batch).map(|_| rng.random_range(0..=1u8)).collect();
            let head = (!focal_head).then(|| {
                Array2::from_shape_simple_fn((batch, *dims.last().unwrap()), || rng.random_range(-1.0..1.0))
            });
            let focal = FocalParams {
                alpha: rng.random_range(0.1..0.9),
                gamma: [0.0, 1.0, 2.0, 4.0][rng.random_range(0..4)],
            };
            let kl_weight = [0.0, 1e-3, 0.1][rng.random_range(0..3)];
            return Self {
                net,
                x,
                trace,
                labels,
                head,
                focal,
                kl_weight,
            };
        }
    }

    fn with_input(&self, x: &Array2<f64>) -> ForwardTrace<f64> {
        let mut t = self.trace.clone();
        t.layers[0].linear.input = x.clone();
        t
    }

    /// Objective under the recorded noise and dropout masks.
    fn objective(&self, net: &BayesianMlp<f64>, trace: &ForwardTrace<f64>) -> f64 {
        let out = net.replay(trace).unwrap();
        let data = match &self.head {
            Some(c) => (&out * c).sum(),
            None => out
                .column(0)
                .iter()
                .zip(&self.labels)
                .map(|(&z, &y)| focal_loss_from_logit(z, y, &self.focal).unwrap())
                .sum(),
        };
        data + self.kl_weight * net.kl_to_standard_normal()
    }

    fn upstream(&self) -> Array2<f64> {
        match &self.head {
            Some(c) => c.clone(),
            None => {
                let out = self.net.replay(&self.trace).unwrap();
                let mut g = Array2::zeros(out.dim());
                for (i, &y) in self.labels.iter().enumerate() {
                    g[[i, 0]] = focal_loss_grad(out[[i, 0]], y, &self.focal).unwrap();
                }
                g
            }
        }
    }

    /// Worst tensor-wise relative error across every parameter and the input.
    fn check(&self) -> f64 {
        let (mut grads, dx) = self.net.backward(&self.trace, self.upstream().view()).unwrap();
        self.net.accumulate_kl_grad(&mut grads, self.kl_weight);
        let mut worst: f64 = 0.0;
        for (li, lg) in grads.layers.iter().enumerate() {
            for (ti, analytic) in lg.slices().iter().enumerate() {
                let mut numeric = Vec::with_capacity(analytic.len());
                for k in 0..analytic.len() {
                    let base = self.net.layers[li].param_slices()[ti][k];
                    numeric.push(central(base, |v| {
                        let mut n = self.net.clone();
                        n.layers[li].param_slices_mut()[ti][k] = v;
                        self.objective(&n, &self.trace)
                    }));
                }
                worst = worst.max(rel_error(analytic, &numeric));
            }
        }
        let mut numeric_dx = Vec::new();
        for k in 0..self.x.len() {
            let base = self.x.as_slice().unwrap()[k];
            numeric_dx.push(central(base, |v| {
                let mut x = self.x.clone();
                x.as_slice_mut().unwrap()[k] = v;
                self.objective(&self.net, &self.with_input(&x))
            }));
        }
        worst.max(rel_error(dx.as_slice().unwrap(), &numeric_dx))
    }
}

/// Focal-loss logit gradient against central differences.
fn focal_gradient_error(rng: &mut ChaCha8Rng) -> f64 {
    let params = FocalParams {
        alpha: rng.random_range(0.05..0.95),
        gamma: rng.random_range(0.0..5.0),
    };
    let y = rng.random_range(0..=1u8);
    let z: f64 = rng.random_range(-6.0..6.0);
    let analytic = focal_loss_grad(z, y, &params).unwrap();
    let numeric = central(z, |v| focal_loss_from_logit(v, y, &params).unwrap());
    rel_error(&[analytic], &[numeric])
}

/// Gradient suite: `configs` random focal cases and `configs` random MLPs.
pub fn gradient_suite(configs: usize, seed: u64, tol: f64) -> (Outcome, Duration) {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst_focal: f64 = 0.0;
    let mut worst_mlp: f64 = 0.0;
    for _ in 0..configs {
        worst_focal = worst_focal.max(focal_gradient_error(&mut rng));
        worst_mlp = worst_mlp.max(GradCase::random(&mut rng).check());
    }
    let elapsed = started.elapsed();
    let passed = worst_focal <= tol && worst_mlp <= tol;
    (
        Outcome::new(
            passed,
            format!(
                "{configs} focal + {configs} MLP configs, worst rel. error focal {worst_focal:.2e}, mlp {worst_mlp:.2e}"
            ),
        ),
        elapsed,
    )
}

/// Closed-form KL against a Monte Carlo estimate of `E_q[log q - log p]`.
pub fn kl_oracle(layers: usize, draws: usize, seed: u64, tol: f64) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..layers {
        let (o, i) = (rng.random_range(1..=4), rng.random_range(1..=4));
        let mu_w = Array2::from_shape_simple_fn((o, i), || rng.random_range(-1.5..1.5));
        let rho_w = Array2::from_shape_simple_fn((o, i), || rng.random_range(-2.0..0.5));
        let mu_b = Array1::from_shape_simple_fn(o, || rng.random_range(-1.5..1.5));
        let rho_b = Array1::from_shape_simple_fn(o, || rng.random_range(-2.0..0.5));
        let layer = VariationalLinear::from_parts(mu_w, rho_w, mu_b, rho_b).unwrap();
        let closed = layer.kl_to_standard_normal();
        let entries: Vec<(f64, f64)> = layer.param_slices()[0]
            .iter()
            .zip(layer.param_slices()[1])
            .chain(layer.param_slices()[2].iter().zip(layer.param_slices()[3]))
            .map(|(&m, &r): (&f64, &f64)| (m, (1.0 + r.exp()).ln()))
            .collect();
        let mut total = 0.0;
        for _ in 0..draws {
            for &(m, s) in &entries {
                let e: f64 = StandardNormal.sample(&mut rng);
                let w = m + s * e;
                // log q(w) - log p(w), constants cancel
                total += -s.ln() - 0.5 * e * e + 0.5 * w * w;
            }
        }
        let mc = total / draws as f64;
        worst = worst.max((mc - closed).abs() / closed);
    }
    Outcome::new(
        worst <= tol,
        format!("{layers} layers x {draws} draws, worst rel. deviation {:.3}%", worst * 100.0),
    )
}

fn random_dataset(rng: &mut ChaCha8Rng, n: usize, levels: u32) -> (Vec<f64>, Vec<u8>) {
    loop {
        let scores: Vec<f64> = (0..n).map(|_| rng.random_range(0..levels) as f64 / levels as f64).collect();
        let labels: Vec<u8> = (0..n).map(|_| rng.random_range(0..=1u8)).collect();
        if labels.contains(&0) && labels.contains(&1) {
            return (scores, labels);
        }
    }
}

/// Pairwise AUC: each positive/negative pair scores 1, 0.5 or 0.
pub fn pairwise_auc(scores: &[f64], labels: &[u8]) -> f64 {
    let (mut sum, mut pairs) = (0.0, 0u64);
    for (i, &si) in scores.iter().enumerate() {
        for (j, &sj) in scores.iter().enumerate() {
            if labels[i] == 1 && labels[j] == 0 {
                pairs += 1;
                sum += if si > sj {
                    1.0
                } else if si == sj {
                    0.5
                } else {
                    0.0
                };
            }
        }
    }
    sum / pairs as f64
}

/// Best TPR over all thresholds `score >= t` (including none) with FPR <= cap.
pub fn enumerated_tpr(scores: &[f64], labels: &[u8], cap: f64) -> f64 {
    let np = labels.iter().filter(|&&y| y == 1).count() as f64;
    let nn = labels.len() as f64 - np;
    let mut best = 0.0f64;
    for &t in scores {
        let tp = scores.iter().zip(labels).filter(|(&s, &y)| s >= t && y == 1).count() as f64;
        let fp = scores.iter().zip(labels).filter(|(&s, &y)| s >= t && y == 0).count() as f64;
        if fp / nn <= cap {
            best = best.max(tp / np);
        }
    }
    best
}

/// AUC and TPR@FPR against enumeration; trapezoid area against pairwise AUC.
pub fn metric_oracles(seed: u64) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut auc_mismatch = 0;
    let mut tpr_mismatch = 0;
    for _ in 0..1000 {
        let n = rng.random_range(2..=12);
        let levels = rng.random_range(2..=8);
        let (s, y) = random_dataset(&mut rng, n, levels);
        if auc(&s, &y).unwrap() != pairwise_auc(&s, &y) {
            auc_mismatch += 1;
        }
        for cap in [0.1, 0.2, 0.3, 0.5, 0.9] {
            if tpr_at_fpr(&s, &y, cap).unwrap() != enumerated_tpr(&s, &y, cap) {
                tpr_mismatch += 1;
            }
        }
    }
    let mut worst_trap: f64 = 0.0;
    for _ in 0..200 {
        let n = rng.random_range(2..=400);
        let levels = rng.random_range(2..=1000);
        let (s, y) = random_dataset(&mut rng, n, levels);
        let area = roc_curve(&s, &y).unwrap().trapezoid_area();
        worst_trap = worst_trap.max((area - pairwise_auc(&s, &y)).abs());
    }
    Outcome::new(
        auc_mismatch == 0 && tpr_mismatch == 0 && worst_trap <= 1e-12,
        format!(
            "1000 small datasets: {auc_mismatch} AUC and {tpr_mismatch} TPR mismatches; 200 datasets: max |trapezoid - pairwise| {worst_trap:.1e}"
        ),
    )
}
