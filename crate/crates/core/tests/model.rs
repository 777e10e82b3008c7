//! Prediction, intervention, training and checkpoint behaviour on small
//! configurations.

mod support;

use miracle_core::model::{checkpoint, train, Ablation, FusionWeights, MiracleModel};
use miracle_core::{Error, Miracle};
use support::fixtures::{fixture, small_config, Fixture};

fn untrained(f: &Fixture) -> Miracle {
    MiracleModel::init(small_config(), f.codec.clone()).unwrap()
}

#[test]
fn prediction_is_seeded_and_aggregates_samples() {
    let f = fixture([200, 60, 60], 1);
    let m = untrained(&f);
    let r = &f.data.test[0];
    let remark = &f.remarks[&r.patient_id];
    let a = m.predict(r, remark).unwrap();
    let b = m.predict(r, remark).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.seed, m.request_seed(&r.patient_id));
    assert_eq!(a.sample_probabilities.len(), 4);
    let mean = a.sample_probabilities.iter().sum::<f64>() / 4.0;
    assert!((a.probability - mean).abs() <= 1e-12);
    let var = a.sample_probabilities.iter().map(|p| (p - mean).powi(2)).sum::<f64>() / 4.0;
    assert!((a.mc_std - var.sqrt()).abs() <= 1e-12);
    assert_eq!(a.embeddings.clinical.dim(), (4, 768));
    assert_eq!(a.embeddings.radiomic.as_ref().unwrap().dim(), (4, 768));
    assert_eq!(a.embeddings.remark.as_ref().unwrap().len(), 768);
    let other = m.predict_with_seed(r, remark, a.seed ^ 1).unwrap();
    assert_ne!(a.sample_probabilities, other.sample_probabilities);
}

#[test]
fn intervention_contract() {
    let f = fixture([200, 60, 60], 2);
    let m = untrained(&f);
    let r = &f.data.test[3];
    let prior = m.predict(r, &f.remarks[&r.patient_id]).unwrap();

    let same = m.intervene(&prior, &prior.remark.text).unwrap();
    assert_eq!(same.probability, prior.probability);
    assert_eq!(same.sample_probabilities, prior.sample_probabilities);

    let edited = m
        .intervene(&prior, "Severely reduced DLCO and poor functional status; high risk.")
        .unwrap();
    assert_eq!(edited.embeddings.clinical, prior.embeddings.clinical);
    assert_eq!(edited.embeddings.radiomic, prior.embeddings.radiomic);
    assert_ne!(edited.embeddings.remark, prior.embeddings.remark);
    assert_ne!(edited.probability, prior.probability);
    assert_eq!(edited.remark.origin, miracle_core::remarks::RemarkOrigin::ClinicianEdited);

    let mut muted = m.clone();
    muted.set_fusion(FusionWeights::new(0.5, 0.25, 0.0)).unwrap();
    let base = muted.predict(r, &f.remarks[&r.patient_id]).unwrap();
    let edit = muted.intervene(&base, "completely different words").unwrap();
    assert_eq!(edit.probability, base.probability);

    assert!(matches!(m.intervene(&prior, "  "), Err(Error::Input(_))));
    let checksum = m.parameter_checksum();
    for i in 0..20 {
        m.intervene(&prior, &format!("edit number {i}")).unwrap();
    }
    assert_eq!(m.parameter_checksum(), checksum);
}

#[test]
fn ablations_without_remark_reject_intervention() {
    let f = fixture([200, 60, 60], 3);
    for mode in [Ablation::ClinicalOnly, Ablation::ClinicalRadiomic] {
        let cfg = miracle_core::model::MiracleConfig {
            ablation: mode,
            ..small_config()
        };
        let m: Miracle = MiracleModel::init(cfg, f.codec.clone()).unwrap();
        let r = &f.data.test[0];
        let p = m.predict(r, &f.remarks[&r.patient_id]).unwrap();
        assert!(p.embeddings.remark.is_none());
        assert_eq!(p.embeddings.radiomic.is_some(), mode == Ablation::ClinicalRadiomic);
        assert!(matches!(m.intervene(&p, "anything"), Err(Error::Unsupported(_))));
    }
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let f = fixture([200, 60, 60], 4);
    let m = untrained(&f);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    checkpoint::save(&m, None, &path).unwrap();
    let loaded: Miracle = checkpoint::load(&path).unwrap().model;
    assert_eq!(loaded.parameter_checksum(), m.parameter_checksum());
    assert!(checkpoint::to_bytes(&loaded, None).unwrap() == std::fs::read(&path).unwrap());
    for r in f.data.test.iter().take(10) {
        let remark = &f.remarks[&r.patient_id];
        assert_eq!(loaded.predict(r, remark).unwrap(), m.predict(r, remark).unwrap());
    }
}

#[test]
fn checkpoint_rejects_corruption_and_versions() {
    let f = fixture([200, 60, 60], 5);
    let bytes = checkpoint::to_bytes(&untrained(&f), None).unwrap();

    let mut flipped = bytes.clone();
    let last = flipped.len() - 10;
    flipped[last] ^= 0x20;
    assert!(matches!(checkpoint::from_bytes::<f64>(&flipped).map(|_| ()), Err(Error::Integrity(_))));

    let mut versioned = bytes.clone();
    versioned[8..12].copy_from_slice(&99u32.to_le_bytes());
    assert!(matches!(
        checkpoint::from_bytes::<f64>(&versioned).map(|_| ()),
        Err(Error::Version { found: 99, expected: 1 })
    ));

    assert!(matches!(checkpoint::from_bytes::<f64>(b"garbage").map(|_| ()), Err(Error::Integrity(_))));
    assert!(matches!(checkpoint::from_bytes::<f32>(&bytes).map(|_| ()), Err(Error::Config(_))));
}

#[test]
fn zero_learning_rate_leaves_parameters_and_val_auc_fixed() {
    let f = fixture([200, 60, 60], 6);
    let mut cfg = small_config();
    cfg.optimizer.learning_rate = 0.0;
    let before: Miracle = MiracleModel::init(cfg.clone(), f.codec.clone()).unwrap();
    let out = train::<f64>(cfg, f.codec.clone(), &f.data.train, &f.data.val, &f.remarks).unwrap();
    assert_eq!(out.model.parameter_checksum(), before.parameter_checksum());
    let aucs: Vec<f64> = out.history.epochs.iter().map(|e| e.val_auc).collect();
    assert_eq!(aucs.len(), 3);
    assert!(aucs.iter().all(|&a| a == aucs[0]), "{aucs:?}");
}

#[test]
fn divergence_is_reported() {
    let f = fixture([200, 60, 60], 7);
    let mut cfg = small_config();
    cfg.optimizer.learning_rate = 1e300;
    let err = train::<f64>(cfg, f.codec.clone(), &f.data.train, &f.data.val, &f.remarks)
        .err()
        .expect("training should diverge");
    assert!(matches!(err, Error::Training { .. }), "{err}");
}

#[test]
fn returned_parameters_reproduce_best_val_auc() {
    let f = fixture([300, 80, 80], 8);
    let mut cfg = small_config();
    cfg.optimizer.max_epochs = 4;
    let out = train::<f64>(cfg, f.codec.clone(), &f.data.train, &f.data.val, &f.remarks).unwrap();
    let h = &out.history;
    let best = h.epochs.iter().map(|e| e.val_auc).fold(f64::MIN, f64::max);
    assert_eq!(h.best_val_auc, best);
    let (_, report) =
        miracle_core::model::evaluate(&out.model, &f.data.val, &f.remarks, &[0.2, 0.3]).unwrap();
    assert!((report.auc - best).abs() <= 1e-9);
    assert!(h.epochs.first().unwrap().train_loss > h.epochs.last().unwrap().train_loss);
}

#[test]
fn collapsed_posterior_gives_zero_spread() {
    let f = fixture([200, 60, 60], 9);
    let mut m = untrained(&f);
    for net in m.networks_mut().iter_mut() {
        for layer in &mut net.layers {
            layer.rho_w.fill(-60.0);
            layer.rho_b.fill(-60.0);
        }
    }
    let r = &f.data.test[0];
    let p = m.predict(r, &f.remarks[&r.patient_id]).unwrap();
    assert!(p.mc_std < 1e-12, "{}", p.mc_std);

    let last = m.networks_mut().classifier.layers.last_mut().unwrap();
    last.mu_w.fill(0.0);
    last.mu_b.fill(0.0);
    let p = m.predict(r, &f.remarks[&r.patient_id]).unwrap();
    assert!((p.probability - 0.5).abs() < 1e-12);
}

#[test]
fn fusion_is_linear() {
    use miracle_core::model::fuse;
    let v = |k: f64| -> Vec<f64> { (0..768).map(|i| ((i as f64) * k).sin()).collect() };
    let (x, y, z) = (v(0.1), v(0.7), v(1.3));
    let w = FusionWeights::default();
    let a = 2.5;
    let scale = |u: &[f64]| u.iter().map(|e| a * e).collect::<Vec<_>>();
    let lhs = fuse(&scale(&x), &scale(&y), &scale(&z), &w).unwrap();
    let rhs: Vec<f64> = fuse(&x, &y, &z, &w).unwrap().iter().map(|e| a * e).collect();
    for (l, r) in lhs.iter().zip(&rhs) {
        assert!((l - r).abs() <= 1e-12);
    }
}

#[test]
fn train_loss_mostly_decreases_early() {
    let mut mean = vec![0.0; 10];
    for seed in 0..3 {
        let f = fixture([300, 60, 60], 20 + seed);
        let mut cfg = small_config();
        cfg.seed = seed;
        cfg.optimizer.max_epochs = 10;
        cfg.optimizer.patience = 10;
        let out = train::<f64>(cfg, f.codec.clone(), &f.data.train, &f.data.val, &f.remarks).unwrap();
        assert_eq!(out.history.epochs.len(), 10);
        for (m, e) in mean.iter_mut().zip(&out.history.epochs) {
            *m += e.train_loss / 3.0;
        }
    }
    let drops = mean.windows(2).filter(|w| w[1] <= w[0]).count();
    assert!(drops >= 8, "{mean:?}");
}

#[test]
fn grid_search_covers_the_simplex() {
    let f = fixture([200, 40, 40], 10);
    let m = untrained(&f);
    let grid = miracle_core::model::fusion_grid_search(&m, &f.data.val, &f.remarks, 0.5).unwrap();
    assert_eq!(grid.len(), 6);
    assert!(grid.windows(2).all(|w| w[0].1 >= w[1].1));
}
