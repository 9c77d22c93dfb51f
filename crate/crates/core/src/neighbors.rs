//! Exact k-nearest-neighbour lookup over the standardized training inputs.
//! Results are ordered by (distance, index), so ties go to the lower index.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};

use crate::error::{DgcnError, Result};
use crate::linalg::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    #[default]
    BruteForce,
    KdTree,
}

const LEAF_SIZE: usize = 16;

#[inline]
fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum()
}

#[derive(Debug, Clone, Copy)]
struct Candidate {
    d2: f64,
    idx: usize,
}

impl PartialEq for Candidate {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Candidate {}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.d2.total_cmp(&other.d2).then(self.idx.cmp(&other.idx))
    }
}

/// Bounded max-heap keeping the k best candidates.
struct Best {
    k: usize,
    heap: BinaryHeap<Candidate>,
}

impl Best {
    fn new(k: usize) -> Self {
        Best {
            k,
            heap: BinaryHeap::with_capacity(k + 1),
        }
    }

    fn offer(&mut self, c: Candidate) {
        if self.heap.len() < self.k {
            self.heap.push(c);
        } else if let Some(top) = self.heap.peek() {
            if c < *top {
                self.heap.pop();
                self.heap.push(c);
            }
        }
    }

    /// Whether a region whose closest possible point is `bound` away can still
    /// contribute (equality kept so lower-index ties are not pruned).
    fn admits(&self, bound: f64) -> bool {
        self.heap.len() < self.k || self.heap.peek().is_some_and(|t| bound <= t.d2)
    }

    fn into_sorted(self) -> Vec<usize> {
        self.heap.into_sorted_vec().into_iter().map(|c| c.idx).collect()
    }
}

#[derive(Debug, Clone)]
enum Node {
    Leaf {
        start: usize,
        end: usize,
    },
    Split {
        dim: usize,
        value: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Debug, Clone)]
struct KdTree {
    nodes: Vec<Node>,
    /// Point indices, permuted so every leaf owns a contiguous range.
    order: Vec<usize>,
}

impl KdTree {
    fn build(points: &Matrix) -> Self {
        let mut tree = KdTree {
            nodes: Vec::new(),
            order: (0..points.rows()).collect(),
        };
        let n = points.rows();
        tree.build_node(points, 0, n);
        tree
    }

    fn build_node(&mut self, points: &Matrix, start: usize, end: usize) -> usize {
        let id = self.nodes.len();
        if end - start <= LEAF_SIZE {
            self.nodes.push(Node::Leaf { start, end });
            return id;
        }
        // split along the widest dimension
        let nv = points.cols();
        let slice = &self.order[start..end];
        let dim = (0..nv)
            .max_by(|&a, &b| {
                let spread = |d: usize| {
                    let (lo, hi) = slice.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &i| {
                        let v = points[(i, d)];
                        (lo.min(v), hi.max(v))
                    });
                    hi - lo
                };
                spread(a).total_cmp(&spread(b)).then(b.cmp(&a))
            })
            .unwrap_or(0);
        self.order[start..end].sort_by(|&a, &b| points[(a, dim)].total_cmp(&points[(b, dim)]).then(a.cmp(&b)));
        let mid = start + (end - start) / 2;
        let value = points[(self.order[mid], dim)];
        self.nodes.push(Node::Leaf { start, end });
        let left = self.build_node(points, start, mid);
        let right = self.build_node(points, mid, end);
        self.nodes[id] = Node::Split {
            dim,
            value,
            left,
            right,
        };
        id
    }

    fn search(&self, points: &Matrix, node: usize, q: &[f64], best: &mut Best) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &idx in &self.order[start..end] {
                    best.offer(Candidate {
                        d2: dist2(points.row(idx), q),
                        idx,
                    });
                }
            }
            Node::Split {
                dim,
                value,
                left,
                right,
            } => {
                // left holds coordinates ≤ value, right ≥ value
                let diff = q[dim] - value;
                let (near, far) = if diff < 0.0 { (left, right) } else { (right, left) };
                self.search(points, near, q, best);
                if best.admits(diff * diff) {
                    self.search(points, far, q, best);
                }
            }
        }
    }
}

/// Immutable index over the standardized training inputs.
#[derive(Debug, Clone)]
pub struct NeighborIndex {
    points: Matrix,
    strategy: Strategy,
    tree: Option<KdTree>,
}

pub fn build_index(x: &Matrix, strategy: Strategy) -> Result<NeighborIndex> {
    NeighborIndex::build(x.clone(), strategy)
}

impl NeighborIndex {
    pub fn build(points: Matrix, strategy: Strategy) -> Result<Self> {
        if points.rows() == 0 {
            return Err(DgcnError::EmptyDataset);
        }
        let tree = (strategy == Strategy::KdTree).then(|| KdTree::build(&points));
        Ok(NeighborIndex {
            points,
            strategy,
            tree,
        })
    }

    pub fn len(&self) -> usize {
        self.points.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.points.rows() == 0
    }

    pub fn points(&self) -> &Matrix {
        &self.points
    }

    pub fn strategy(&self) -> Strategy {
        self.strategy
    }

    /// The `min(k, N)` nearest indices, ascending by distance then index.
    pub fn query(&self, x_star: &[f64], k: usize) -> Vec<usize> {
        debug_assert_eq!(x_star.len(), self.points.cols());
        let k = k.max(1).min(self.len());
        let mut best = Best::new(k);
        match &self.tree {
            Some(tree) => tree.search(&self.points, 0, x_star, &mut best),
            None => {
                for (idx, row) in self.points.row_iter().enumerate() {
                    best.offer(Candidate {
                        d2: dist2(row, x_star),
                        idx,
                    });
                }
            }
        }
        best.into_sorted()
    }
}

pub fn query(index: &NeighborIndex, x_star: &[f64], k: usize) -> Vec<usize> {
    index.query(x_star, k)
}
