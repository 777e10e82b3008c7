use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::focal::check_label;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// FPR caps reported by default.
pub const DEFAULT_FPR_CAPS: [f64; 2] = [0.2, 0.3];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub fpr: f64,
    pub tpr: f64,
    /// Scores `>= threshold` are called positive. `+inf` for the origin.
    #[serde(with = "threshold_serde")]
    pub threshold: f64,
}

/// Empirical step ROC, ordered from the strictest threshold to the loosest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    pub points: Vec<RocPoint>,
}

/// Per-threshold confusion counts; the integer form behind every metric here.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Step {
    tp: u64,
    fp: u64,
}

struct Sweep {
    n_pos: u64,
    n_neg: u64,
    steps: Vec<(f64, Step)>,
}

fn sweep<T: Scalar>(scores: &[T], labels: &[u8]) -> Result<Sweep> {
    if scores.len() != labels.len() {
        return Err(Error::Input(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    let mut pairs = Vec::with_capacity(scores.len());
    for (&s, &y) in scores.iter().zip(labels) {
        check_label(y)?;
        let s = s.as_f64();
        if s.is_nan() {
            return Err(Error::Input("NaN score".into()));
        }
        pairs.push((s, y));
    }
    let n_pos = pairs.iter().filter(|p| p.1 == 1).count() as u64;
    let n_neg = pairs.len() as u64 - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::Evaluation(format!(
            "need both classes, got {n_pos} positive and {n_neg} negative"
        )));
    }
    pairs.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap_or(Ordering::Equal));
    let mut steps = Vec::new();
    let (mut tp, mut fp) = (0u64, 0u64);
    let mut i = 0;
    while i < pairs.len() {
        let s = pairs[i].0;
        while i < pairs.len() && pairs[i].0 == s {
            if pairs[i].1 == 1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        steps.push((s, Step { tp, fp }));
    }
    Ok(Sweep {
        n_pos,
        n_neg,
        steps,
    })
}

/// ROC over every distinct score, ties grouped into one step.
pub fn roc_curve<T: Scalar>(scores: &[T], labels: &[u8]) -> Result<RocCurve> {
    let sw = sweep(scores, labels)?;
    Ok(curve_from(&sw))
}

fn curve_from(sw: &Sweep) -> RocCurve {
    let (np, nn) = (sw.n_pos as f64, sw.n_neg as f64);
    let mut points = Vec::with_capacity(sw.steps.len() + 1);
    points.push(RocPoint {
        fpr: 0.0,
        tpr: 0.0,
        threshold: f64::INFINITY,
    });
    points.extend(sw.steps.iter().map(|&(s, st)| RocPoint {
        fpr: st.fp as f64 / nn,
        tpr: st.tp as f64 / np,
        threshold: s,
    }));
    RocCurve { points }
}

/// Mann–Whitney AUC: `(concordant + 0.5 * tied) / (n_pos * n_neg)`.
pub fn auc<T: Scalar>(scores: &[T], labels: &[u8]) -> Result<f64> {
    let sw = sweep(scores, labels)?;
    Ok(auc_from(&sw))
}

fn auc_from(sw: &Sweep) -> f64 {
    // Counted in half-pairs so ties stay integral.
    let mut half_pairs = 0u64;
    let (mut prev_tp, mut prev_fp) = (0u64, 0u64);
    for &(_, st) in &sw.steps {
        let dp = st.tp - prev_tp;
        let dn = st.fp - prev_fp;
        // positives in this group beat every negative scored strictly lower
        half_pairs += 2 * dp * (sw.n_neg - st.fp) + dp * dn;
        prev_tp = st.tp;
        prev_fp = st.fp;
    }
    half_pairs as f64 / (2 * sw.n_pos * sw.n_neg) as f64
}

/// Highest TPR over thresholds whose FPR does not exceed `fpr_cap`.
pub fn tpr_at_fpr<T: Scalar>(scores: &[T], labels: &[u8], fpr_cap: f64) -> Result<f64> {
    check_cap(fpr_cap)?;
    let sw = sweep(scores, labels)?;
    Ok(tpr_at_from(&sw, fpr_cap))
}

fn check_cap(cap: f64) -> Result<()> {
    if !(cap > 0.0 && cap < 1.0) {
        return Err(Error::Input(format!("fpr cap {cap} not in (0,1)")));
    }
    Ok(())
}

fn tpr_at_from(sw: &Sweep, cap: f64) -> f64 {
    let nn = sw.n_neg as f64;
    let np = sw.n_pos as f64;
    sw.steps
        .iter()
        .filter(|(_, st)| st.fp as f64 / nn <= cap)
        .map(|(_, st)| st.tp as f64 / np)
        .fold(0.0, f64::max)
}

impl RocCurve {
    /// Trapezoid area under the points.
    pub fn trapezoid_area(&self) -> f64 {
        self.points
            .windows(2)
            .map(|w| (w[1].fpr - w[0].fpr) * (w[1].tpr + w[0].tpr) * 0.5)
            .sum()
    }

    /// Writes `threshold,fpr,tpr` rows.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "threshold,fpr,tpr")?;
        for p in &self.points {
            writeln!(out, "{},{},{}", fmt_threshold(p.threshold), p.fpr, p.tpr)?;
        }
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(f))
            .map_err(|e| Error::io(path, e))
    }
}

fn fmt_threshold(t: f64) -> String {
    if t == f64::INFINITY {
        "inf".into()
    } else {
        t.to_string()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCounts {
    pub n_pos: u64,
    pub n_neg: u64,
}

/// Threshold-free evaluation summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub auc: f64,
    /// Keyed by the cap rendered as text, e.g. `"0.2"`.
    pub tpr_at_fpr: BTreeMap<String, f64>,
    pub roc: RocCurve,
    pub counts: ClassCounts,
}

impl EvalReport {
    pub fn compute<T: Scalar>(scores: &[T], labels: &[u8], caps: &[f64]) -> Result<Self> {
        for &c in caps {
            check_cap(c)?;
        }
        let sw = sweep(scores, labels)?;
        let tpr_at_fpr = caps
            .iter()
            .map(|&c| (format!("{c}"), tpr_at_from(&sw, c)))
            .collect();
        Ok(Self {
            auc: auc_from(&sw),
            tpr_at_fpr,
            roc: curve_from(&sw),
            counts: ClassCounts {
                n_pos: sw.n_pos,
                n_neg: sw.n_neg,
            },
        })
    }

    pub fn tpr_at(&self, cap: f64) -> Option<f64> {
        self.tpr_at_fpr.get(&format!("{cap}")).copied()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

mod threshold_serde {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_infinite() {
            Repr::Text(if *v > 0.0 { "inf" } else { "-inf" }.into()).serialize(s)
        } else {
            Repr::Num(*v).serialize(s)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Text(t) if t == "inf" => Ok(f64::INFINITY),
            Repr::Text(t) if t == "-inf" => Ok(f64::NEG_INFINITY),
            Repr::Text(t) => Err(serde::de::Error::custom(format!("bad threshold {t}"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn has_point(c: &RocCurve, fpr: f64, tpr: f64) -> bool {
        c.points
            .iter()
            .any(|p| (p.fpr - fpr).abs() < 1e-12 && (p.tpr - tpr).abs() < 1e-12)
    }

    #[test]
    fn small_worked_example() {
        let scores = [0.9, 0.6, 0.7, 0.2];
        let labels = [1, 1, 0, 0];
        let c = roc_curve(&scores, &labels).unwrap();
        assert!(has_point(&c, 0.0, 0.5));
        assert!(has_point(&c, 0.5, 1.0));
        assert_eq!(auc(&scores, &labels).unwrap(), 0.75);
    }

    #[test]
    fn tpr_cap_example() {
        let scores = [0.9, 0.8, 0.3, 0.6, 0.5, 0.4, 0.2, 0.1];
        let labels = [1, 1, 1, 0, 0, 0, 0, 0];
        assert_eq!(tpr_at_fpr(&scores, &labels, 0.2).unwrap(), 2.0 / 3.0);
        assert!(tpr_at_fpr(&scores, &labels, 0.3).unwrap() >= 2.0 / 3.0);
    }

    #[test]
    fn separated_scores() {
        let scores = [0.1, 0.2, 0.8, 0.9];
        let labels = [0, 0, 1, 1];
        let c = roc_curve(&scores, &labels).unwrap();
        assert!(has_point(&c, 0.0, 1.0));
        assert_eq!(auc(&scores, &labels).unwrap(), 1.0);
        for cap in [0.01, 0.2, 0.3, 0.99] {
            assert_eq!(tpr_at_fpr(&scores, &labels, cap).unwrap(), 1.0);
        }
    }

    #[test]
    fn all_tied_is_diagonal() {
        let c = roc_curve(&[0.4; 6], &[0, 1, 0, 1, 1, 0]).unwrap();
        assert_eq!(c.points.len(), 2);
        assert!(has_point(&c, 0.0, 0.0) && has_point(&c, 1.0, 1.0));
        assert_eq!(auc(&[0.4; 6], &[0, 1, 0, 1, 1, 0]).unwrap(), 0.5);
    }

    #[test]
    fn single_class_rejected() {
        assert!(matches!(
            roc_curve(&[0.1, 0.2], &[1, 1]),
            Err(Error::Evaluation(_))
        ));
        assert!(matches!(auc(&[0.1, 0.2], &[0, 0]), Err(Error::Evaluation(_))));
    }

    #[test]
    fn bad_cap_rejected() {
        assert!(tpr_at_fpr(&[0.1, 0.2], &[0, 1], 0.0).is_err());
        assert!(tpr_at_fpr(&[0.1, 0.2], &[0, 1], 1.0).is_err());
    }

    #[test]
    fn report_keys_and_csv() {
        let r = EvalReport::compute(&[0.9, 0.6, 0.7, 0.2], &[1, 1, 0, 0], &DEFAULT_FPR_CAPS)
            .unwrap();
        let v: serde_json::Value = serde_json::from_str(&r.to_json().unwrap()).unwrap();
        for k in ["auc", "tpr_at_fpr", "roc", "counts"] {
            assert!(v.get(k).is_some(), "missing {k}");
        }
        assert!(v["tpr_at_fpr"].get("0.2").is_some());
        assert!(v["tpr_at_fpr"].get("0.3").is_some());
        assert!((r.roc.trapezoid_area() - r.auc).abs() < 1e-12);

        let mut buf = Vec::new();
        r.roc.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines[0], "threshold,fpr,tpr");
        assert_eq!(lines[1], "inf,0,0");
        assert!(lines.last().unwrap().ends_with(",1,1"));

        let back: EvalReport = serde_json::from_str(&r.to_json().unwrap()).unwrap();
        assert_eq!(back, r);
    }
}
