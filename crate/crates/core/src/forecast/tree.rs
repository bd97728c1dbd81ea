//! Greedy CART regression tree with mean-squared-error impurity.
//!
//! Each split `(j, t)` sends rows with `x[j] <= t` left. Candidate thresholds
//! are midpoints between consecutive distinct values of a feature. The split
//! minimizing the weighted child impurity wins; ties go to the lower feature
//! index, then the lower threshold. Because the greedy choice at a node does
//! not depend on the depth limit, a tree grown to depth `d` equals the deeper
//! tree truncated at `d`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Split {
    pub feature: usize,
    pub threshold: f64,
    pub left: usize,
    pub right: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeNode {
    pub split: Option<Split>,
    /// Mean outcome of the rows reaching this node.
    pub mean: f64,
    pub n_samples: usize,
    pub depth: usize,
}

impl TreeNode {
    pub fn is_leaf(&self) -> bool {
        self.split.is_none()
    }

    /// The node's prediction; present only on leaves.
    pub fn prediction(&self) -> Option<f64> {
        self.is_leaf().then_some(self.mean)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionTree {
    /// Arena of nodes; index 0 is the root.
    pub nodes: Vec<TreeNode>,
    pub max_depth: usize,
    pub min_samples: usize,
}

struct Candidate {
    feature: usize,
    threshold: f64,
    impurity: f64,
}

fn best_split(x: &Matrix, y: &[f64], idx: &[usize]) -> Option<Candidate> {
    let n = idx.len();
    let total: f64 = idx.iter().map(|&i| y[i]).sum();
    let total_sq: f64 = idx.iter().map(|&i| y[i] * y[i]).sum();
    let mut best: Option<Candidate> = None;
    let mut order = idx.to_vec();
    for j in 0..x.ncols() {
        order.sort_by(|&a, &b| x.get(a, j).total_cmp(&x.get(b, j)).then(a.cmp(&b)));
        let (mut s, mut sq) = (0.0, 0.0);
        for pos in 0..n - 1 {
            let i = order[pos];
            s += y[i];
            sq += y[i] * y[i];
            let (lo, hi) = (x.get(i, j), x.get(order[pos + 1], j));
            if lo >= hi {
                continue;
            }
            let nl = (pos + 1) as f64;
            let nr = (n - pos - 1) as f64;
            let sse_l = sq - s * s / nl;
            let sse_r = (total_sq - sq) - (total - s) * (total - s) / nr;
            let impurity = (sse_l + sse_r) / n as f64;
            if best.as_ref().is_none_or(|b| impurity < b.impurity) {
                let mid = lo + (hi - lo) / 2.0;
                best = Some(Candidate {
                    feature: j,
                    threshold: if mid < hi { mid } else { lo },
                    impurity,
                });
            }
        }
    }
    best
}

impl RegressionTree {
    pub fn fit(x: &Matrix, y: &[f64], max_depth: usize, min_samples: usize) -> Result<Self> {
        if x.nrows() != y.len() {
            return Err(Error::LengthMismatch(x.nrows(), y.len()));
        }
        if y.len() < 2 {
            return Err(Error::TooFewItems {
                needed: 2,
                got: y.len(),
            });
        }
        let mut tree = Self {
            nodes: Vec::new(),
            max_depth,
            min_samples,
        };
        let all: Vec<usize> = (0..y.len()).collect();
        tree.grow(x, y, all, 0);
        Ok(tree)
    }

    /// Grows the subtree for rows `idx`; nodes are stored in preorder.
    fn grow(&mut self, x: &Matrix, y: &[f64], idx: Vec<usize>, depth: usize) -> usize {
        let node = self.push_node(y, &idx, depth);
        let pure = idx.iter().all(|&i| y[i] == y[idx[0]]);
        if depth >= self.max_depth || idx.len() < self.min_samples.max(2) || pure {
            return node;
        }
        let Some(c) = best_split(x, y, &idx) else {
            return node;
        };
        let (li, ri): (Vec<usize>, Vec<usize>) = idx
            .iter()
            .partition(|&&i| x.get(i, c.feature) <= c.threshold);
        let left = self.grow(x, y, li, depth + 1);
        let right = self.grow(x, y, ri, depth + 1);
        self.nodes[node].split = Some(Split {
            feature: c.feature,
            threshold: c.threshold,
            left,
            right,
        });
        node
    }

    fn push_node(&mut self, y: &[f64], idx: &[usize], depth: usize) -> usize {
        let mean = idx.iter().map(|&i| y[i]).sum::<f64>() / idx.len() as f64;
        self.nodes.push(TreeNode {
            split: None,
            mean,
            n_samples: idx.len(),
            depth,
        });
        self.nodes.len() - 1
    }

    /// Index of the node a row lands in when the tree is cut at `depth`.
    pub fn leaf_index(&self, q: &[f64], depth: usize) -> usize {
        let mut at = 0;
        while let Some(s) = self.nodes[at].split {
            if self.nodes[at].depth >= depth {
                break;
            }
            at = if q[s.feature] <= s.threshold {
                s.left
            } else {
                s.right
            };
        }
        at
    }

    pub fn predict_row(&self, q: &[f64]) -> f64 {
        self.nodes[self.leaf_index(q, usize::MAX)].mean
    }

    pub fn predict_at_depth(&self, x: &Matrix, depth: usize) -> Vec<f64> {
        x.rows_iter()
            .map(|q| self.nodes[self.leaf_index(q, depth)].mean)
            .collect()
    }

    pub fn predict(&self, x: &Matrix) -> Vec<f64> {
        self.predict_at_depth(x, usize::MAX)
    }

    /// The subtree above `depth`, with nodes at `depth` turned into leaves.
    pub fn truncate(&self, depth: usize) -> Self {
        let mut out = Self {
            nodes: Vec::new(),
            max_depth: depth.min(self.max_depth),
            min_samples: self.min_samples,
        };
        fn copy(src: &RegressionTree, dst: &mut RegressionTree, at: usize, depth: usize) -> usize {
            let node = &src.nodes[at];
            let id = dst.nodes.len();
            dst.nodes.push(TreeNode {
                split: None,
                ..node.clone()
            });
            if let Some(s) = node.split.filter(|_| node.depth < depth) {
                let left = copy(src, dst, s.left, depth);
                let right = copy(src, dst, s.right, depth);
                dst.nodes[id].split = Some(Split { left, right, ..s });
            }
            id
        }
        copy(self, &mut out, 0, depth);
        out
    }

    pub fn depth(&self) -> usize {
        self.nodes.iter().map(|n| n.depth).max().unwrap_or(0)
    }

    pub fn leaves(&self) -> impl Iterator<Item = &TreeNode> {
        self.nodes.iter().filter(|n| n.is_leaf())
    }
}

/// Validation MSE for each depth, from one tree grown to the deepest.
pub fn cv_scores(
    x_tr: &Matrix,
    y_tr: &[f64],
    x_va: &Matrix,
    y_va: &[f64],
    depths: &[usize],
    min_samples: usize,
) -> Result<Vec<f64>> {
    let deepest = depths.iter().copied().max().unwrap_or(0);
    let tree = RegressionTree::fit(x_tr, y_tr, deepest, min_samples)?;
    Ok(depths
        .iter()
        .map(|&d| super::cv::mse(y_va, &tree.predict_at_depth(x_va, d)))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn column(v: &[f64]) -> Matrix {
        Matrix::from_rows(&v.iter().map(|&a| vec![a]).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn pure_node_is_leaf() {
        let t = RegressionTree::fit(&column(&[1.0, 2.0, 3.0, 4.0, 5.0]), &[7.0; 5], 5, 2).unwrap();
        assert_eq!(t.nodes.len(), 1);
        assert_eq!(t.nodes[0].prediction(), Some(7.0));
    }

    #[test]
    fn step_function_single_split() {
        let x = column(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let y = [0.0, 0.0, 0.0, 1.0, 1.0, 1.0];
        let t = RegressionTree::fit(&x, &y, 1, 2).unwrap();
        let s = t.nodes[0].split.unwrap();
        assert_eq!((s.feature, s.threshold), (0, 3.5));
        assert_eq!(t.predict(&x), y.to_vec());
    }

    #[test]
    fn children_partition_parent() {
        let x = Matrix::from_rows(
            &(0..40)
                .map(|i| vec![(i * 7 % 13) as f64, (i % 5) as f64])
                .collect::<Vec<_>>(),
        )
        .unwrap();
        let y: Vec<f64> = (0..40).map(|i| ((i * 31) % 17) as f64).collect();
        let t = RegressionTree::fit(&x, &y, 6, 3).unwrap();
        for n in &t.nodes {
            if let Some(s) = n.split {
                assert_eq!(
                    n.n_samples,
                    t.nodes[s.left].n_samples + t.nodes[s.right].n_samples
                );
                assert!(t.nodes[s.left].n_samples > 0 && t.nodes[s.right].n_samples > 0);
            } else {
                assert!(n.prediction().is_some());
            }
        }
    }

    #[test]
    fn truncation_equals_shallow_fit() {
        let x = Matrix::from_rows(
            &(0..60)
                .map(|i| vec![(i * 7 % 23) as f64, (i % 9) as f64, (i / 3) as f64])
                .collect::<Vec<_>>(),
        )
        .unwrap();
        let y: Vec<f64> = (0..60).map(|i| ((i * 37) % 19) as f64 * 0.5).collect();
        let deep = RegressionTree::fit(&x, &y, 8, 5).unwrap();
        for d in 0..8 {
            let shallow = RegressionTree::fit(&x, &y, d, 5).unwrap();
            assert_eq!(deep.truncate(d).nodes, shallow.nodes, "depth {d}");
            assert_eq!(deep.predict_at_depth(&x, d), shallow.predict(&x));
        }
    }

    #[test]
    fn ties_prefer_lower_feature() {
        // Both columns separate the outcomes identically.
        let x = Matrix::from_rows(&[
            vec![0.0, 0.0],
            vec![0.0, 0.0],
            vec![1.0, 1.0],
            vec![1.0, 1.0],
        ])
        .unwrap();
        let t = RegressionTree::fit(&x, &[0.0, 0.0, 1.0, 1.0], 1, 2).unwrap();
        assert_eq!(t.nodes[0].split.unwrap().feature, 0);
    }

    #[test]
    fn min_samples_stops_growth() {
        let x = column(&[1.0, 2.0, 3.0, 4.0]);
        let t = RegressionTree::fit(&x, &[0.0, 1.0, 0.0, 1.0], 10, 5).unwrap();
        assert_eq!(t.nodes.len(), 1);
    }
}
