//! Evaluation metrics: ROC/AUC with bootstrap intervals, confusion
//! statistics, retrieval precision and robustness bins.

pub mod bins;
pub mod bootstrap;
pub mod confusion;
pub mod report;
pub mod retrieval;
pub mod roc;

pub use bins::{new_findings, tpr_by_bins, Bin, BinStat, Binning};
pub use bootstrap::{bootstrap_auc_ci, percentile, ConfidenceInterval};
pub use confusion::{confusion_counts, confusion_metrics, ConfusionCounts, ConfusionMetrics};
pub use report::{verification_report, VerificationReport, SCHEMA_VERSION};
pub use retrieval::{
    average_precision_at_r, leave_one_out, map_at_r, precision_at_1, r_precision, rank_gallery, retrieval_report,
    GalleryEntry, RankedItem, RankedList, RetrievalReport,
};
pub use roc::{auc, roc_and_auc, roc_csv, roc_curve, PairMeta, RocPoint, ScoredPair};
