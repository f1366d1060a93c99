//! Central-model baseline: a trusted server releases prefix sums of the batch
//! statistics through the binary-tree mechanism.
//!
//! Leaf `t` is the sum of batch `t`. A node at level `ℓ` with index `i` holds
//! the noisy sum of leaves `i·2^ℓ + 1 ..= (i+1)·2^ℓ`; its noise is drawn once,
//! when the first leaf below it arrives. A prefix up to `t` reads one node per
//! set bit of `t`.

use nalgebra::DVector;

use super::{gaussian_vector, symmetric_gaussian};
use crate::engine::{sum_matrices, sum_vectors, BatchStatistics, ShuffleProtocol};
use crate::error::{Error, Result};
use crate::model::GramMatrix;
use crate::rng::StreamRng;

/// `⌈log₂ n⌉ + 1` levels are enough for `n` leaves.
pub fn tree_depth(leaves: usize) -> usize {
    leaves.max(1).next_power_of_two().trailing_zeros() as usize + 1
}

#[derive(Debug, Clone)]
struct Node {
    u: DVector<f64>,
    v: GramMatrix,
}

#[derive(Debug, Clone)]
pub struct TreeAggregator {
    dim: usize,
    depth: usize,
    sigma_node: f64,
    /// `levels[ℓ][i]`: node `i` at level `ℓ`, created on first touch.
    levels: Vec<Vec<Node>>,
    leaf_count: usize,
}

impl TreeAggregator {
    /// Tree for up to `max_leaves` leaves of dimension `dim`.
    pub fn new(dim: usize, max_leaves: usize, sigma_node: f64) -> Result<Self> {
        if dim == 0 || max_leaves == 0 {
            return Err(Error::InvalidParameter("tree needs dim >= 1 and at least one leaf".into()));
        }
        if !(sigma_node >= 0.0) {
            return Err(Error::InvalidParameter(format!("node noise {sigma_node} must be >= 0")));
        }
        let depth = tree_depth(max_leaves);
        Ok(Self {
            dim,
            depth,
            sigma_node,
            levels: vec![Vec::new(); depth],
            leaf_count: 0,
        })
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn capacity(&self) -> usize {
        1 << (self.depth - 1)
    }

    pub fn leaf_count(&self) -> usize {
        self.leaf_count
    }

    pub fn sigma_node(&self) -> f64 {
        self.sigma_node
    }

    /// Adds a leaf and returns how many nodes it touched.
    pub fn insert(&mut self, leaf: &BatchStatistics, rng: &mut StreamRng) -> Result<usize> {
        if leaf.u.len() != self.dim || leaf.v.dim() != self.dim {
            return Err(crate::error::shape_err(self.dim, leaf.u.len()));
        }
        if self.leaf_count == self.capacity() {
            return Err(Error::CapacityExceeded {
                capacity: self.capacity(),
            });
        }
        let pos = self.leaf_count;
        for (level, nodes) in self.levels.iter_mut().enumerate() {
            let index = pos >> level;
            if index == nodes.len() {
                let (u, v) = if self.sigma_node > 0.0 {
                    (
                        gaussian_vector(self.dim, self.sigma_node, rng),
                        symmetric_gaussian(self.dim, self.sigma_node, rng),
                    )
                } else {
                    (DVector::zeros(self.dim), GramMatrix::zeros(self.dim))
                };
                nodes.push(Node { u, v });
            }
            let node = &mut nodes[index];
            node.u += &leaf.u;
            node.v = node.v.add(&leaf.v)?;
        }
        self.leaf_count += 1;
        Ok(self.depth)
    }

    /// Noisy sum of leaves `1..=t` and the number of nodes read.
    pub fn prefix(&self, t: usize) -> Result<(BatchStatistics, usize)> {
        if t == 0 || t > self.leaf_count {
            return Err(Error::IndexOutOfRange {
                index: t,
                len: self.leaf_count,
            });
        }
        let mut u = Vec::new();
        let mut v = Vec::new();
        let mut start = 0usize;
        for level in (0..self.depth).rev() {
            if t & (1 << level) != 0 {
                let node = &self.levels[level][start >> level];
                u.push(node.u.clone());
                v.push(node.v.clone());
                start += 1 << level;
            }
        }
        let read = u.len();
        Ok((
            BatchStatistics {
                u: sum_vectors(&u)?,
                v: sum_matrices(&v)?,
            },
            read,
        ))
    }
}

/// `σ_node = M₀ (4/ε) √(2 m log(2.5/δ))` with `m` the depth of a tree over
/// `leaves` leaves. `M₀ = 1` is event-level privacy.
pub fn calibrate_tree(epsilon: f64, delta: f64, leaves: usize, m0: u32) -> Result<f64> {
    if !(epsilon > 0.0) || !(delta > 0.0 && delta < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "tree budget must satisfy epsilon > 0, delta in (0, 1); got ({epsilon}, {delta})"
        )));
    }
    if m0 == 0 || leaves == 0 {
        return Err(Error::InvalidParameter("M0 and leaf count must be >= 1".into()));
    }
    let m = tree_depth(leaves) as f64;
    Ok(m0 as f64 * 4.0 / epsilon * (2.0 * m * (2.5 / delta).ln()).sqrt())
}

/// Batch sums become tree leaves; each batch the analyzer releases the
/// increment of the noisy prefix so that the engine's running sums equal the
/// tree's prefix.
#[derive(Debug, Clone)]
pub struct CentralProtocol {
    tree: Option<TreeAggregator>,
    max_leaves: usize,
    sigma_node: f64,
    previous: Option<BatchStatistics>,
}

impl CentralProtocol {
    pub fn new(max_leaves: usize, sigma_node: f64) -> Self {
        Self {
            tree: None,
            max_leaves,
            sigma_node,
            previous: None,
        }
    }

    pub fn sigma_node(&self) -> f64 {
        self.sigma_node
    }

    pub fn tree(&self) -> Option<&TreeAggregator> {
        self.tree.as_ref()
    }
}

/// Central protocol for horizon `T` split into batches of `B`; the tree has
/// one leaf per batch.
pub fn make_central_protocol(
    epsilon: f64,
    delta: f64,
    horizon: usize,
    batch_size: usize,
    m0: u32,
) -> Result<CentralProtocol> {
    if batch_size == 0 || batch_size > horizon {
        return Err(Error::InvalidParameter(format!(
            "batch size {batch_size} must lie in 1..={horizon}"
        )));
    }
    let leaves = horizon.div_ceil(batch_size);
    Ok(CentralProtocol::new(leaves, calibrate_tree(epsilon, delta, leaves, m0)?))
}

impl ShuffleProtocol for CentralProtocol {
    type VectorMessage = DVector<f64>;
    type MatrixMessage = GramMatrix;
    type ShuffledVectors = Vec<DVector<f64>>;
    type ShuffledMatrices = Vec<GramMatrix>;

    fn randomize_vector(&self, x: &DVector<f64>, _: &mut StreamRng) -> Result<DVector<f64>> {
        Ok(x.clone())
    }

    fn randomize_matrix(&self, x: &GramMatrix, _: &mut StreamRng) -> Result<GramMatrix> {
        Ok(x.clone())
    }

    fn shuffle_vectors(&self, batch: Vec<DVector<f64>>, _: &mut StreamRng) -> Result<Vec<DVector<f64>>> {
        Ok(batch)
    }

    fn shuffle_matrices(&self, batch: Vec<GramMatrix>, _: &mut StreamRng) -> Result<Vec<GramMatrix>> {
        Ok(batch)
    }

    fn analyze_vectors(&mut self, shuffled: Vec<DVector<f64>>, _: &mut StreamRng) -> Result<DVector<f64>> {
        sum_vectors(&shuffled)
    }

    fn analyze_matrices(&mut self, shuffled: Vec<GramMatrix>, _: &mut StreamRng) -> Result<GramMatrix> {
        sum_matrices(&shuffled)
    }

    fn analyze(
        &mut self,
        vectors: Vec<DVector<f64>>,
        matrices: Vec<GramMatrix>,
        rng: &mut StreamRng,
    ) -> Result<BatchStatistics> {
        let leaf = BatchStatistics {
            u: sum_vectors(&vectors)?,
            v: sum_matrices(&matrices)?,
        };
        let tree = match &mut self.tree {
            Some(t) => t,
            None => self
                .tree
                .insert(TreeAggregator::new(leaf.dim(), self.max_leaves, self.sigma_node)?),
        };
        tree.insert(&leaf, rng)?;
        let (current, _) = tree.prefix(tree.leaf_count())?;
        let increment = match &self.previous {
            None => current.clone(),
            Some(prev) => BatchStatistics {
                u: &current.u - &prev.u,
                v: current.v.add(&prev.v.scale(-1.0))?,
            },
        };
        self.previous = Some(current);
        Ok(increment)
    }

    /// `σ_node √depth`: a prefix reads at most `depth` nodes.
    fn sigma_total(&self, _: usize, _: usize) -> f64 {
        self.sigma_node * (tree_depth(self.max_leaves) as f64).sqrt()
    }
}
