use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{sigmoid, softplus, Scalar};

/// Probabilities are clamped to `[PROB_EPS, 1 - PROB_EPS]` before the log.
pub const PROB_EPS: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FocalParams {
    /// Weight on positive examples; negatives get `1 - alpha`.
    pub alpha: f64,
    /// Focusing exponent on `(1 - p_t)`.
    pub gamma: f64,
}

impl Default for FocalParams {
    fn default() -> Self {
        Self {
            alpha: 0.8,
            gamma: 4.0,
        }
    }
}

impl FocalParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Config(format!("focal alpha {} not in (0,1)", self.alpha)));
        }
        if !(self.gamma >= 0.0) || !self.gamma.is_finite() {
            return Err(Error::Config(format!("focal gamma {} must be >= 0", self.gamma)));
        }
        Ok(())
    }

    fn alpha_for<T: Scalar>(&self, y: u8) -> T {
        if y == 1 {
            T::lit(self.alpha)
        } else {
            T::lit(1.0 - self.alpha)
        }
    }
}

pub(crate) fn check_label(y: u8) -> Result<()> {
    if y > 1 {
        return Err(Error::Input(format!("label {y} is not binary")));
    }
    Ok(())
}

/// `alpha_t * (1 - p_t)^gamma * -ln(p_t)` for a predicted probability.
pub fn focal_loss<T: Scalar>(p_hat: T, y: u8, params: &FocalParams) -> Result<T> {
    check_label(y)?;
    let eps = T::lit(PROB_EPS);
    let p = p_hat.max(eps).min(T::one() - eps);
    let pt = if y == 1 { p } else { T::one() - p };
    let a: T = params.alpha_for(y);
    Ok(a * (T::one() - pt).powf(T::lit(params.gamma)) * -pt.ln())
}

/// Focal loss as a function of the pre-sigmoid logit, computed without the
/// probability clamp (log-sigmoid form).
pub fn focal_loss_from_logit<T: Scalar>(logit: T, y: u8, params: &FocalParams) -> Result<T> {
    check_label(y)?;
    let signed = if y == 1 { logit } else { -logit };
    let pt = sigmoid(signed);
    let neg_log_pt = softplus(-signed);
    let a: T = params.alpha_for(y);
    Ok(a * (T::one() - pt).powf(T::lit(params.gamma)) * neg_log_pt)
}

/// Exact derivative of [`focal_loss_from_logit`] w.r.t. the logit:
/// `s * alpha_t * (gamma * (1-p_t)^gamma * p_t * ln p_t - (1-p_t)^(gamma+1))`
/// with `s = +1` for positives and `-1` for negatives.
pub fn focal_loss_grad<T: Scalar>(logit: T, y: u8, params: &FocalParams) -> Result<T> {
    check_label(y)?;
    let (signed, s) = if y == 1 {
        (logit, T::one())
    } else {
        (-logit, -T::one())
    };
    let pt = sigmoid(signed);
    let q = sigmoid(-signed);
    let ln_pt = -softplus(-signed);
    let g = T::lit(params.gamma);
    let a: T = params.alpha_for(y);
    let focus = if params.gamma == 0.0 { T::one() } else { q.powf(g) };
    Ok(s * a * (g * focus * pt * ln_pt - focus * q))
}

/// Mean focal loss over the batch plus `kl_weight * total_kl`.
pub fn batch_objective<T: Scalar>(
    p_hats: &[T],
    ys: &[u8],
    params: &FocalParams,
    total_kl: T,
    kl_weight: T,
) -> Result<T> {
    if p_hats.is_empty() {
        return Err(Error::Input("empty batch".into()));
    }
    if p_hats.len() != ys.len() {
        return Err(Error::Input(format!(
            "{} predictions for {} labels",
            p_hats.len(),
            ys.len()
        )));
    }
    let mut sum = T::zero();
    for (&p, &y) in p_hats.iter().zip(ys) {
        sum = sum + focal_loss(p, y, params)?;
    }
    Ok(sum / T::lit(p_hats.len() as f64) + kl_weight * total_kl)
}
