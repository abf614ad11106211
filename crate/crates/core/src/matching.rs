//! Bipartite matching between predictions and ground-truth objects.
//!
//! The matching cost couples class similarity (negative predicted probability
//! of the target's class) with multi-view 2D box distance, averaged over the
//! views where the target is visible. Predictions not visible in such a view
//! pay the maximum attainable box distance so they are never preferred over
//! a visible candidate. The assignment itself is solved exactly and treated
//! as a constant within a training step.

use crate::camera::{box_l1, Box2D};
use crate::error::{Error, Result};

/// Penalty distance for a prediction invisible in a view where the target is
/// visible; equals the maximum possible normalized box distance.
pub const INVISIBLE_BOX_PENALTY: f64 = 2.0;

/// Matching-side description of one prediction.
#[derive(Debug, Clone)]
pub struct MatchCandidate {
    /// Softmax class probabilities, length N_c.
    pub class_probs: Vec<f64>,
    /// Projected 2D box per sampled view; `None` when the prediction has no
    /// valid projection there.
    pub boxes: Vec<Option<Box2D>>,
}

/// Matching-side description of one ground-truth object.
#[derive(Debug, Clone)]
pub struct MatchTarget {
    pub label: usize,
    /// Ground-truth box per sampled view; `None` where unobserved.
    pub boxes: Vec<Option<Box2D>>,
}

/// Bijection from prediction index to ground-truth index over the matched
/// range; predictions beyond it stay unmatched.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchAssignment {
    pub pred_to_gt: Vec<Option<usize>>,
    pub total_cost: f64,
}

impl MatchAssignment {
    pub fn matched(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.pred_to_gt
            .iter()
            .enumerate()
            .filter_map(|(k, g)| g.map(|j| (k, j)))
    }

    pub fn matched_count(&self) -> usize {
        self.pred_to_gt.iter().filter(|g| g.is_some()).count()
    }
}

/// Cost entry (k, j): -prob_k[label_j] + box_weight * mean over the target's
/// visible views of the box distance (penalized when the prediction is
/// invisible there).
pub fn build_cost_matrix(
    candidates: &[MatchCandidate],
    targets: &[MatchTarget],
    box_weight: f64,
) -> Result<Vec<Vec<f64>>> {
    if targets.is_empty() {
        return Err(Error::InvalidArgument(
            "cost matrix needs at least one ground-truth object".into(),
        ));
    }
    let views = targets
        .iter()
        .map(|t| t.boxes.len())
        .chain(candidates.iter().map(|c| c.boxes.len()))
        .max()
        .unwrap_or(0);
    for t in targets {
        if t.boxes.len() != views {
            return Err(Error::ShapeMismatch {
                op: "cost_matrix",
                lhs: vec![views],
                rhs: vec![t.boxes.len()],
            });
        }
    }
    let mut cost = vec![vec![0.0; targets.len()]; candidates.len()];
    for (k, cand) in candidates.iter().enumerate() {
        if cand.boxes.len() != views {
            return Err(Error::ShapeMismatch {
                op: "cost_matrix",
                lhs: vec![views],
                rhs: vec![cand.boxes.len()],
            });
        }
        for (j, target) in targets.iter().enumerate() {
            let class_term = -cand
                .class_probs
                .get(target.label)
                .copied()
                .unwrap_or_default();
            let mut dist = 0.0;
            let mut count = 0usize;
            for (pb, gb) in cand.boxes.iter().zip(&target.boxes) {
                let Some(gt_box) = gb else { continue };
                count += 1;
                dist += match pb {
                    Some(pred_box) => box_l1(pred_box, gt_box),
                    None => INVISIBLE_BOX_PENALTY,
                };
            }
            let box_term = if count > 0 { dist / count as f64 } else { 0.0 };
            cost[k][j] = class_term + box_weight * box_term;
        }
    }
    Ok(cost)
}

/// Exact minimum-cost assignment (Hungarian algorithm with potentials).
///
/// Rectangular inputs are handled by solving the transposed problem;
/// min(rows, cols) pairs are assigned.
pub fn hungarian(cost: &[Vec<f64>]) -> Result<MatchAssignment> {
    let rows = cost.len();
    if rows == 0 {
        return Ok(MatchAssignment {
            pred_to_gt: Vec::new(),
            total_cost: 0.0,
        });
    }
    let cols = cost[0].len();
    for r in cost {
        if r.len() != cols {
            return Err(Error::InvalidArgument("ragged cost matrix".into()));
        }
        if r.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite matching cost".into()));
        }
    }
    if cols == 0 {
        return Ok(MatchAssignment {
            pred_to_gt: vec![None; rows],
            total_cost: 0.0,
        });
    }

    let pred_to_gt = if rows <= cols {
        assign(rows, cols, |i, j| cost[i][j])
    } else {
        // transpose: assign every column, then invert the mapping
        let col_to_row = assign(cols, rows, |j, i| cost[i][j]);
        let mut out = vec![None; rows];
        for (j, r) in col_to_row.iter().enumerate() {
            if let Some(i) = r {
                out[*i] = Some(j);
            }
        }
        out
    };
    let total_cost = pred_to_gt
        .iter()
        .enumerate()
        .filter_map(|(k, j)| j.map(|j| cost[k][j]))
        .sum();
    Ok(MatchAssignment {
        pred_to_gt,
        total_cost,
    })
}

/// Shortest-augmenting-path assignment for n <= m; returns row -> col.
fn assign(n: usize, m: usize, cost: impl Fn(usize, usize) -> f64) -> Vec<Option<usize>> {
    // potentials over rows/cols, 1-indexed with column 0 as the virtual root
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut way = vec![0usize; m + 1];
    let mut col_row = vec![0usize; m + 1]; // 0 = free

    for i in 1..=n {
        col_row[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = col_row[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[col_row[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if col_row[j0] == 0 {
                break;
            }
        }
        // augment along the alternating path
        loop {
            let j1 = way[j0];
            col_row[j0] = col_row[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut row_col = vec![None; n];
    for j in 1..=m {
        if col_row[j] != 0 {
            row_col[col_row[j] - 1] = Some(j - 1);
        }
    }
    row_col
}
