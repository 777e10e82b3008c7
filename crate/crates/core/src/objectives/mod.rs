//! Training objective and threshold-free evaluation metrics.

mod focal;
mod roc;

pub use focal::{
    batch_objective, focal_loss, focal_loss_from_logit, focal_loss_grad, FocalParams, PROB_EPS,
};
pub use roc::{
    auc, roc_curve, tpr_at_fpr, ClassCounts, EvalReport, RocCurve, RocPoint, DEFAULT_FPR_CAPS,
};
