use ndarray::{Array2, ArrayView1, ArrayView2, Axis, Zip};

use super::config::FusionWeights;
use crate::error::{Error, Result};
use crate::remarks::EMBEDDING_DIM;
use crate::scalar::Scalar;

/// `w_c * E_c + w_r * E_r + w_m * E_m`, elementwise.
pub fn fuse<T: Scalar>(
    clinical: &[T],
    radiomic: &[T],
    remark: &[T],
    w: &FusionWeights,
) -> Result<Vec<T>> {
    for (name, v) in [("clinical", clinical), ("radiomic", radiomic), ("remark", remark)] {
        if v.len() != EMBEDDING_DIM {
            return Err(Error::Shape(format!(
                "{name} embedding has {} entries, expected {EMBEDDING_DIM}",
                v.len()
            )));
        }
    }
    let (wc, wr, wm) = (T::lit(w.clinical), T::lit(w.radiomic), T::lit(w.remark));
    Ok(clinical
        .iter()
        .zip(radiomic)
        .zip(remark)
        .map(|((&c, &r), &m)| wc * c + wr * r + wm * m)
        .collect())
}

/// Row-wise fusion for a batch. Absent channels contribute nothing.
pub(crate) fn fuse_rows<T: Scalar>(
    clinical: ArrayView2<'_, T>,
    radiomic: Option<ArrayView2<'_, T>>,
    remark: Option<ArrayView2<'_, T>>,
    w: &FusionWeights,
) -> Array2<T> {
    let mut out = clinical.mapv(|v| v * T::lit(w.clinical));
    if let Some(r) = radiomic {
        let wr = T::lit(w.radiomic);
        Zip::from(&mut out).and(&r).for_each(|o, &v| *o = *o + wr * v);
    }
    if let Some(m) = remark {
        let wm = T::lit(w.remark);
        Zip::from(&mut out).and(&m).for_each(|o, &v| *o = *o + wm * v);
    }
    out
}

/// Same as [`fuse_rows`] with a single remark vector broadcast to every row.
pub(crate) fn fuse_rows_broadcast<T: Scalar>(
    clinical: ArrayView2<'_, T>,
    radiomic: Option<ArrayView2<'_, T>>,
    remark: Option<ArrayView1<'_, T>>,
    w: &FusionWeights,
) -> Array2<T> {
    let mut out = fuse_rows(clinical, radiomic, None, w);
    if let Some(m) = remark {
        let wm = T::lit(w.remark);
        for mut row in out.axis_iter_mut(Axis(0)) {
            Zip::from(&mut row).and(&m).for_each(|o, &v| *o = *o + wm * v);
        }
    }
    out
}

/// Scales each row to unit L2 norm; zero rows stay zero. Returns the norms
/// for the backward pass.
pub(crate) fn normalize_rows<T: Scalar>(x: &mut Array2<T>) -> Vec<T> {
    let mut norms = Vec::with_capacity(x.nrows());
    for mut row in x.axis_iter_mut(Axis(0)) {
        let n = row.iter().fold(T::zero(), |a, &v| a + v * v).sqrt();
        if n > T::zero() {
            row.mapv_inplace(|v| v / n);
        }
        norms.push(n);
    }
    norms
}

/// Gradient through [`normalize_rows`]: `(g - u (u . g)) / |v|` per row,
/// where `u` is the normalized output.
pub(crate) fn normalize_rows_backward<T: Scalar>(
    normalized: ArrayView2<'_, T>,
    norms: &[T],
    grad: &mut Array2<T>,
) {
    for ((mut g, u), &n) in grad
        .axis_iter_mut(Axis(0))
        .zip(normalized.axis_iter(Axis(0)))
        .zip(norms)
    {
        if n <= T::zero() {
            g.fill(T::zero());
            continue;
        }
        let dot = g.iter().zip(u.iter()).fold(T::zero(), |a, (&x, &y)| a + x * y);
        Zip::from(&mut g).and(&u).for_each(|gi, &ui| *gi = (*gi - ui * dot) / n);
    }
}
