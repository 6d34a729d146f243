//! Residual quantization of scalar targets.

mod cluster;
mod codebook;

pub use cluster::{cluster_1d, kmeans_1d_exact, kmedians_1d_exact, partition_cost, ClusterMethod, Clustering};
pub use codebook::{
    build_codebook, build_codebook_with_report, decode, reconstruction_report, BuildReport, Code, CodeSequence,
    Codebook, LevelStats, ReconstructionReport,
};
