//! Evaluation protocol: splits, masks, metrics, and multi-seed experiments.

pub mod experiment;
pub mod metrics;
pub mod split;

pub use experiment::*;
pub use metrics::{auc_roc, average_precision, mean_std};
pub use split::{active_nodes, apply_edge_mask, apply_node_mask, chrono_split, parse_mask_fraction, MaskSpec, Split, LEAN, STRICT};
