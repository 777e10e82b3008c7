//! Planted-signal checks on the synthetic cohort, using a plain
//! logistic regression fitted by full-batch Newton iterations.

use miracle_core::data::{
    fit_codec, generate_synthetic, positive_rate, ClinicalSchema, DatasetSplit, FeatureCodec,
    PatientRecord, SynthConfig,
};
use miracle_core::objectives::auc;

fn features(codec: &FeatureCodec, r: &PatientRecord, radiomic: bool) -> Vec<f64> {
    let e = codec.encode(r).unwrap();
    let mut x = vec![1.0];
    x.extend(e.clinical);
    if radiomic {
        x.extend(e.radiomic);
    }
    x
}

/// Newton-Raphson with a small ridge term; solves the normal equations by
/// Gaussian elimination.
fn fit_logistic(xs: &[Vec<f64>], ys: &[u8]) -> Vec<f64> {
    let d = xs[0].len();
    let mut w = vec![0.0; d];
    for _ in 0..25 {
        let mut grad = vec![0.0; d];
        let mut hess = vec![vec![0.0; d]; d];
        for (x, &y) in xs.iter().zip(ys) {
            let z: f64 = x.iter().zip(&w).map(|(a, b)| a * b).sum();
            let p = 1.0 / (1.0 + (-z).exp());
            let r = p - y as f64;
            let s = p * (1.0 - p);
            for i in 0..d {
                grad[i] += r * x[i];
                for j in 0..d {
                    hess[i][j] += s * x[i] * x[j];
                }
            }
        }
        for i in 0..d {
            grad[i] += 1e-3 * w[i];
            hess[i][i] += 1e-3;
        }
        let step = solve(hess, grad);
        for i in 0..d {
            w[i] -= step[i];
        }
    }
    w
}

fn solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for c in 0..n {
        let p = (c..n)
            .max_by(|&i, &j| a[i][c].abs().partial_cmp(&a[j][c].abs()).unwrap())
            .unwrap();
        a.swap(c, p);
        b.swap(c, p);
        for r in c + 1..n {
            let f = a[r][c] / a[c][c];
            for k in c..n {
                a[r][k] -= f * a[c][k];
            }
            b[r] -= f * b[c];
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|k| a[r][k] * x[k]).sum();
        x[r] = (b[r] - s) / a[r][r];
    }
    x
}

fn logistic_test_auc(data: &DatasetSplit, radiomic: bool) -> f64 {
    let codec = fit_codec(&ClinicalSchema::stand_in(), &data.train).unwrap();
    let xs: Vec<_> = data.train.iter().map(|r| features(&codec, r, radiomic)).collect();
    let ys: Vec<u8> = data.train.iter().map(|r| r.label).collect();
    let w = fit_logistic(&xs, &ys);
    let scores: Vec<f64> = data
        .test
        .iter()
        .map(|r| {
            features(&codec, r, radiomic)
                .iter()
                .zip(&w)
                .map(|(a, b)| a * b)
                .sum()
        })
        .collect();
    let labels: Vec<u8> = data.test.iter().map(|r| r.label).collect();
    auc(&scores, &labels).unwrap()
}

#[test]
fn default_split_sizes_and_prevalences() {
    let d = generate_synthetic(&SynthConfig::default()).unwrap();
    assert_eq!(d.len(), 3094);
    let targets = [(&d.train, 2694, 0.226), (&d.val, 200, 0.475), (&d.test, 200, 0.535)];
    for (split, n, rate) in targets {
        assert_eq!(split.len(), n);
        let pos = (positive_rate(split) * n as f64).round();
        assert!((pos - n as f64 * rate).abs() <= 1.0, "{pos} vs {}", n as f64 * rate);
    }
    d.check_disjoint().unwrap();
}

#[test]
fn logistic_oracle_finds_planted_signal() {
    let d = generate_synthetic(&SynthConfig::default()).unwrap();
    let full = logistic_test_auc(&d, true);
    let clinical = logistic_test_auc(&d, false);
    println!("logistic test AUC: full {full:.4}, clinical only {clinical:.4}");
    assert!(full >= 0.85, "full {full}");
    assert!(full - clinical >= 0.02, "radiomic gain {}", full - clinical);
}

#[test]
fn codec_ignores_non_training_splits() {
    let mut d = generate_synthetic(&SynthConfig {
        sizes: [200, 50, 50],
        ..SynthConfig::default()
    })
    .unwrap();
    let schema = ClinicalSchema::stand_in();
    let before = fit_codec(&schema, &d.train).unwrap();
    let probe = d.train[0].clone();
    for r in d.val.iter_mut().chain(d.test.iter_mut()) {
        for v in r.radiomic.iter_mut() {
            *v *= 1000.0;
        }
    }
    let after = fit_codec(&schema, &d.train).unwrap();
    assert_eq!(before, after);
    assert_eq!(before.encode(&probe).unwrap(), after.encode(&probe).unwrap());
}
