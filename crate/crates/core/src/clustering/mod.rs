//! Channel clustering: the GRU autoencoder that embeds each channel's
//! window, the graph-convolutional head that turns embeddings into cluster
//! distributions, and the supporting machinery (k-means, DTW baseline,
//! soft/target assignments, attention masks).

mod assign;
mod autoencoder;
mod dtw;
mod graph;
mod kmeans;
mod mask;

pub use assign::{soft_assignment, target_distribution};
pub use autoencoder::RecurrentAutoencoder;
pub use dtw::{
    agglomerative_labels, dtw_cluster, dtw_distance, dtw_distance_matrix, DTW_BAND, DTW_CAP,
};
pub use graph::{build_graph, normalized_adjacency, GraphClusterer};
pub use kmeans::{kmeans, KmeansFit};
pub use mask::{additive_mask, build_mask, is_identity_mask, mask_vector, MASKED_LOGIT};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

/// The discrete clustering decision used by the forecaster: hard labels and
/// the within-cluster attention mask they induce.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterState {
    pub n: usize,
    pub labels: Vec<usize>,
    pub mask: Array2<u8>,
}

impl ClusterState {
    pub fn from_labels(labels: Vec<usize>) -> Self {
        let n = labels.iter().copied().max().map_or(1, |m| m + 1);
        let mask = build_mask(&labels);
        ClusterState { n, labels, mask }
    }

    /// Every channel its own cluster: the channel-independent setting.
    pub fn identity(n_channels: usize) -> Self {
        ClusterState::from_labels((0..n_channels).collect())
    }

    pub fn is_identity(&self) -> bool {
        is_identity_mask(&self.mask.view())
    }

    pub fn export(&self, threshold: f64) -> ClusterExport {
        ClusterExport {
            labels: self.labels.clone(),
            mask: self.mask.rows().into_iter().map(|r| r.to_vec()).collect(),
            n: self.n,
            threshold,
        }
    }
}

/// JSON-facing form of a clustering decision.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClusterExport {
    pub labels: Vec<usize>,
    pub mask: Vec<Vec<u8>>,
    pub n: usize,
    pub threshold: f64,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn state_from_labels_counts_clusters() {
        let state = ClusterState::from_labels(vec![0, 0, 1]);
        assert_eq!(state.n, 2);
        assert_eq!(state.mask[[0, 1]], 1);
        assert_eq!(state.mask[[0, 2]], 0);
        assert!(!state.is_identity());
    }

    #[test]
    fn identity_state_is_identity() {
        let state = ClusterState::identity(4);
        assert_eq!(state.n, 4);
        assert!(state.is_identity());
    }

    #[test]
    fn export_roundtrips_as_json() {
        let state = ClusterState::from_labels(vec![0, 1, 0]);
        let json = serde_json::to_string(&state.export(0.6)).unwrap();
        let back: ClusterExport = serde_json::from_str(&json).unwrap();
        assert_eq!(back.labels, vec![0, 1, 0]);
        assert_eq!(back.n, 2);
        assert_eq!(back.threshold, 0.6);
        assert_eq!(back.mask[0], vec![1, 0, 1]);
    }
}
