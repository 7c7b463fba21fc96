//! Communication graphs and the bi-layer game topology.
//!
//! Three weighted graphs describe who listens to whom: one among pursuers,
//! one among evaders, and a cross graph holding both directions of
//! pursuer/evader interaction (the two directions are stored independently
//! and are not assumed symmetric). On top of the pursuer-to-evader weights
//! sits a binary game-weight layer; the effective pursuit weight is the
//! product of communication weight and game weight. The evader-to-pursuer
//! weights are never masked.

use nalgebra::DMatrix;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TopologyError {
    #[error("node index {index} out of range for graph of {size} nodes")]
    NodeOutOfRange { index: usize, size: usize },
    #[error("pair ({i}, {j}) out of range for {rows}x{cols} cross graph")]
    PairOutOfRange { i: usize, j: usize, rows: usize, cols: usize },
    #[error("weight matrix must be square, got {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },
    #[error("negative weight {value} at ({i}, {j})")]
    NegativeWeight { i: usize, j: usize, value: f64 },
    #[error("nonzero diagonal {value} at node {i}")]
    NonzeroDiagonal { i: usize, value: f64 },
    #[error("game weight must be 0 or 1, got {0}")]
    InvalidGameWeight(f64),
    #[error("cross graph shape mismatch: pe is {pe_rows}x{pe_cols}, ep is {ep_rows}x{ep_cols}")]
    CrossShapeMismatch { pe_rows: usize, pe_cols: usize, ep_rows: usize, ep_cols: usize },
}

/// Weighted digraph on one team; entry (i, k) is the weight with which
/// node i listens to node k.
#[derive(Clone, Debug, PartialEq)]
pub struct CommGraph {
    weights: DMatrix<f64>,
}

impl CommGraph {
    pub fn new(weights: DMatrix<f64>) -> Result<Self, TopologyError> {
        if weights.nrows() != weights.ncols() {
            return Err(TopologyError::NotSquare { rows: weights.nrows(), cols: weights.ncols() });
        }
        for i in 0..weights.nrows() {
            if weights[(i, i)] != 0.0 {
                return Err(TopologyError::NonzeroDiagonal { i, value: weights[(i, i)] });
            }
            for k in 0..weights.ncols() {
                if weights[(i, k)] < 0.0 {
                    return Err(TopologyError::NegativeWeight { i, j: k, value: weights[(i, k)] });
                }
            }
        }
        Ok(CommGraph { weights })
    }

    /// Graph with no edges.
    pub fn empty(n: usize) -> Self {
        CommGraph { weights: DMatrix::zeros(n, n) }
    }

    pub fn n_nodes(&self) -> usize {
        self.weights.nrows()
    }

    pub fn weight(&self, i: usize, k: usize) -> f64 {
        self.weights[(i, k)]
    }

    pub fn weights(&self) -> &DMatrix<f64> {
        &self.weights
    }

    /// Row sum at `node`.
    pub fn in_degree(&self, node: usize) -> Result<f64, TopologyError> {
        if node >= self.n_nodes() {
            return Err(TopologyError::NodeOutOfRange { index: node, size: self.n_nodes() });
        }
        Ok(self.weights.row(node).sum())
    }

    /// L = diag(in-degrees) - weights; rows sum to zero.
    pub fn laplacian(&self) -> DMatrix<f64> {
        let n = self.n_nodes();
        let mut lap = -self.weights.clone();
        for i in 0..n {
            lap[(i, i)] = self.weights.row(i).sum();
        }
        lap
    }

    /// Neighbor indices with nonzero weight from `node`.
    pub fn neighbors(&self, node: usize) -> Vec<usize> {
        (0..self.n_nodes()).filter(|&k| self.weights[(node, k)] > 0.0).collect()
    }
}

/// Both directions of the pursuer/evader interaction graph.
#[derive(Clone, Debug, PartialEq)]
pub struct CrossGraph {
    pe_weights: DMatrix<f64>,
    ep_weights: DMatrix<f64>,
}

impl CrossGraph {
    pub fn new(pe_weights: DMatrix<f64>, ep_weights: DMatrix<f64>) -> Result<Self, TopologyError> {
        if pe_weights.nrows() != ep_weights.ncols() || pe_weights.ncols() != ep_weights.nrows() {
            return Err(TopologyError::CrossShapeMismatch {
                pe_rows: pe_weights.nrows(),
                pe_cols: pe_weights.ncols(),
                ep_rows: ep_weights.nrows(),
                ep_cols: ep_weights.ncols(),
            });
        }
        for (m, name_rows) in [(&pe_weights, true), (&ep_weights, false)] {
            for i in 0..m.nrows() {
                for j in 0..m.ncols() {
                    if m[(i, j)] < 0.0 {
                        let (a, b) = if name_rows { (i, j) } else { (j, i) };
                        return Err(TopologyError::NegativeWeight { i: a, j: b, value: m[(i, j)] });
                    }
                }
            }
        }
        Ok(CrossGraph { pe_weights, ep_weights })
    }

    pub fn n_pursuers(&self) -> usize {
        self.pe_weights.nrows()
    }

    pub fn n_evaders(&self) -> usize {
        self.pe_weights.ncols()
    }

    pub fn pe_weight(&self, i: usize, j: usize) -> f64 {
        self.pe_weights[(i, j)]
    }

    pub fn ep_weight(&self, j: usize, i: usize) -> f64 {
        self.ep_weights[(j, i)]
    }

    pub fn ep_weights(&self) -> &DMatrix<f64> {
        &self.ep_weights
    }
}

/// Communication layer plus the binary game-weight overlay.
#[derive(Clone, Debug, PartialEq)]
pub struct BiLayerTopology {
    pub gp: CommGraph,
    pub ge: CommGraph,
    pub cross: CrossGraph,
    game_weights: DMatrix<f64>,
}

impl BiLayerTopology {
    /// Builds the topology with all game weights at 1.
    pub fn new(gp: CommGraph, ge: CommGraph, cross: CrossGraph) -> Result<Self, TopologyError> {
        if cross.n_pursuers() != gp.n_nodes() || cross.n_evaders() != ge.n_nodes() {
            return Err(TopologyError::CrossShapeMismatch {
                pe_rows: cross.n_pursuers(),
                pe_cols: cross.n_evaders(),
                ep_rows: gp.n_nodes(),
                ep_cols: ge.n_nodes(),
            });
        }
        let game_weights = DMatrix::from_element(gp.n_nodes(), ge.n_nodes(), 1.0);
        Ok(BiLayerTopology { gp, ge, cross, game_weights })
    }

    pub fn n_pursuers(&self) -> usize {
        self.gp.n_nodes()
    }

    pub fn n_evaders(&self) -> usize {
        self.ge.n_nodes()
    }

    pub fn game_weight(&self, i: usize, j: usize) -> f64 {
        self.game_weights[(i, j)]
    }

    /// Effective pursuit weight: communication weight times game weight.
    pub fn effective_pe_weight(&self, i: usize, j: usize) -> f64 {
        self.cross.pe_weight(i, j) * self.game_weights[(i, j)]
    }

    /// Raw or effective pursuit weight, by flag.
    pub fn pe_weight(&self, i: usize, j: usize, effective: bool) -> f64 {
        if effective {
            self.effective_pe_weight(i, j)
        } else {
            self.cross.pe_weight(i, j)
        }
    }

    pub fn set_game_weight(&mut self, i: usize, j: usize, g: f64) -> Result<(), TopologyError> {
        if i >= self.n_pursuers() || j >= self.n_evaders() {
            return Err(TopologyError::PairOutOfRange {
                i,
                j,
                rows: self.n_pursuers(),
                cols: self.n_evaders(),
            });
        }
        if g != 0.0 && g != 1.0 {
            return Err(TopologyError::InvalidGameWeight(g));
        }
        self.game_weights[(i, j)] = g;
        Ok(())
    }

    /// In-degrees in the cross graph: pursuer degrees (optionally through
    /// the game mask) and evader degrees (never masked).
    pub fn cross_in_degrees(&self, effective: bool) -> (Vec<f64>, Vec<f64>) {
        let d_pe = (0..self.n_pursuers())
            .map(|i| (0..self.n_evaders()).map(|j| self.pe_weight(i, j, effective)).sum())
            .collect();
        let d_ep = (0..self.n_evaders())
            .map(|j| (0..self.n_pursuers()).map(|i| self.cross.ep_weight(j, i)).sum())
            .collect();
        (d_pe, d_ep)
    }

    /// Pursuer i's cross in-degree.
    pub fn pursuer_cross_degree(&self, i: usize, effective: bool) -> f64 {
        (0..self.n_evaders()).map(|j| self.pe_weight(i, j, effective)).sum()
    }

    /// Evader j's cross in-degree (unmasked by construction).
    pub fn evader_cross_degree(&self, j: usize) -> f64 {
        (0..self.n_pursuers()).map(|i| self.cross.ep_weight(j, i)).sum()
    }

    /// Evaders pursuer i communicates with (raw weight > 0).
    pub fn pursuer_opponents(&self, i: usize) -> Vec<usize> {
        (0..self.n_evaders()).filter(|&j| self.cross.pe_weight(i, j) > 0.0).collect()
    }

    /// Evaders pursuer i currently targets (effective weight > 0).
    pub fn active_opponents(&self, i: usize) -> Vec<usize> {
        (0..self.n_evaders()).filter(|&j| self.effective_pe_weight(i, j) > 0.0).collect()
    }

    /// Pursuers evader j reacts to (ep weight > 0).
    pub fn evader_opponents(&self, j: usize) -> Vec<usize> {
        (0..self.n_pursuers()).filter(|&i| self.cross.ep_weight(j, i) > 0.0).collect()
    }
}
