//! View losses over matched predictions.
//!
//! Supervision is entirely 2D: classification against matched labels (void
//! for unmatched predictions), projected-box L1 on views where the predicted
//! center lies in the frustum, completeness targets splitting matched from
//! surplus predictions, a frustum term steering out-of-view centers back
//! toward their target, and (in the joint stage) silhouette cross-entropy
//! gated by mask IoU. Box and frustum terms are mutually exclusive per
//! (object, view).

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, TensorId};
use crate::camera::{frustum_term_on_tape, Box2D, Camera};
use crate::error::{Error, Result};
use crate::matching::MatchAssignment;
use crate::render::{soft_mask_iou, BinaryMask};

/// IoU gate on silhouette supervision; misaligned views contribute nothing.
pub const SILHOUETTE_IOU_GATE: f64 = 0.5;

/// Loss weights; defaults balance the term magnitudes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub class_w: f64,
    pub box_w: f64,
    pub completeness_w: f64,
    pub frustum_w: f64,
    pub silhouette_w: f64,
    /// Box-distance weight inside the matching cost.
    pub matching_box_w: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            class_w: 1.0,
            box_w: 5.0,
            completeness_w: 1.0,
            frustum_w: 1.0,
            silhouette_w: 2.0,
            matching_box_w: 5.0,
        }
    }
}

/// Training stage: layout pretraining, then layout+shape joint learning.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Stage {
    Layout,
    Joint,
}

/// Per-view differentiable geometry of one prediction.
pub struct PredViewGeometry {
    /// Projected 2D box [1, 4] on tape; `None` when nothing projects.
    pub box2d: Option<TensorId>,
    /// Whether the predicted center lies inside this view's frustum.
    pub center_in_frustum: bool,
    /// Soft silhouette [H, W] on tape; `None` during layout pretraining.
    pub silhouette: Option<TensorId>,
}

/// One decoded prediction with its per-view geometry.
pub struct TapedPrediction {
    pub class_logits: TensorId,
    pub center: TensorId,
    pub completeness_logit: TensorId,
    pub views: Vec<PredViewGeometry>,
}

/// Ground-truth object restricted to the sampled views.
pub struct GtObjectData<'a> {
    pub label: usize,
    /// Per sampled view: box and mask where the object is observed.
    pub views: Vec<Option<(Box2D, &'a BinaryMask)>>,
}

/// Scalar values of each term, for logs; the tape id carries the total.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossTerms {
    pub class_term: f64,
    pub box_term: f64,
    pub completeness_term: f64,
    pub frustum_term: f64,
    pub silhouette_term: f64,
    pub gated_views: usize,
    pub total: f64,
}

pub struct LossOutput {
    pub total: TensorId,
    pub terms: LossTerms,
}

fn mean_of(tape: &mut Tape, parts: &[TensorId]) -> Result<TensorId> {
    let stacked = tape.concat_cols(parts)?;
    Ok(tape.mean_all(stacked))
}

/// Classification, box, completeness, and frustum terms (weighted sum).
pub fn layout_loss(
    tape: &mut Tape,
    preds: &[TapedPrediction],
    gts: &[GtObjectData<'_>],
    assignment: &MatchAssignment,
    cameras: &[Camera],
    weights: &LossWeights,
) -> Result<LossOutput> {
    if preds.is_empty() {
        return Err(Error::InvalidArgument("no predictions to supervise".into()));
    }
    for p in preds {
        if p.views.len() != cameras.len() {
            return Err(Error::ShapeMismatch {
                op: "layout_loss",
                lhs: vec![cameras.len()],
                rhs: vec![p.views.len()],
            });
        }
    }

    // classification: matched predictions against their target label,
    // surplus predictions against void
    let logits_rows: Vec<TensorId> = preds.iter().map(|p| p.class_logits).collect();
    let all_logits = tape.concat_rows(&logits_rows)?;
    let targets: Vec<usize> = preds
        .iter()
        .enumerate()
        .map(|(k, _)| {
            assignment
                .pred_to_gt
                .get(k)
                .copied()
                .flatten()
                .map(|j| gts[j].label)
                .unwrap_or(0)
        })
        .collect();
    let class_term = tape.cross_entropy_logits(all_logits, &targets)?;

    // completeness: matched -> 1, surplus -> 0
    let comp_rows: Vec<TensorId> = preds.iter().map(|p| p.completeness_logit).collect();
    let comp_logits = tape.concat_cols(&comp_rows)?;
    let comp_targets: Vec<f64> = preds
        .iter()
        .enumerate()
        .map(|(k, _)| {
            if assignment.pred_to_gt.get(k).copied().flatten().is_some() {
                1.0
            } else {
                0.0
            }
        })
        .collect();
    let completeness_term = tape.bce_with_logits(comp_logits, &comp_targets)?;

    // box and frustum terms, mutually exclusive per (object, view)
    let mut box_objects: Vec<TensorId> = Vec::new();
    let mut frustum_objects: Vec<TensorId> = Vec::new();
    for (k, j) in assignment.matched() {
        let pred = &preds[k];
        let gt = &gts[j];
        let mut box_views: Vec<TensorId> = Vec::new();
        let mut frustum_views: Vec<TensorId> = Vec::new();
        for (p, gt_view) in gt.views.iter().enumerate() {
            let Some((gt_box, _mask)) = gt_view else {
                continue;
            };
            let geom = &pred.views[p];
            if geom.center_in_frustum {
                if let Some(pred_box) = geom.box2d {
                    let gt_id = tape.constant(vec![1, 4], gt_box.coords().to_vec());
                    let l1 = tape.l1_distance(pred_box, gt_id)?;
                    box_views.push(tape.scale(l1, 0.5));
                }
            } else {
                frustum_views.push(frustum_term_on_tape(
                    tape,
                    pred.center,
                    gt_box,
                    &cameras[p],
                )?);
            }
        }
        if !box_views.is_empty() {
            box_objects.push(mean_of(tape, &box_views)?);
        }
        if !frustum_views.is_empty() {
            frustum_objects.push(mean_of(tape, &frustum_views)?);
        }
    }
    let box_term = if box_objects.is_empty() {
        tape.scalar_const(0.0)
    } else {
        mean_of(tape, &box_objects)?
    };
    let frustum_term = if frustum_objects.is_empty() {
        tape.scalar_const(0.0)
    } else {
        mean_of(tape, &frustum_objects)?
    };

    let wc = tape.scale(class_term, weights.class_w);
    let wb = tape.scale(box_term, weights.box_w);
    let wp = tape.scale(completeness_term, weights.completeness_w);
    let wf = tape.scale(frustum_term, weights.frustum_w);
    let cb = tape.add(wc, wb)?;
    let pf = tape.add(wp, wf)?;
    let total = tape.add(cb, pf)?;

    Ok(LossOutput {
        total,
        terms: LossTerms {
            class_term: tape.scalar(class_term),
            box_term: tape.scalar(box_term),
            completeness_term: tape.scalar(completeness_term),
            frustum_term: tape.scalar(frustum_term),
            silhouette_term: 0.0,
            gated_views: 0,
            total: tape.scalar(total),
        },
    })
}

/// Multi-view silhouette cross-entropy, gated by thresholded IoU > 0.5.
///
/// Per matched object the gated views are averaged, then the loss averages
/// over objects that contributed at least one gated view; with the
/// per-pixel mean inside, the term stays comparable to the layout terms at
/// any resolution or view count.
pub fn shape_loss(
    tape: &mut Tape,
    preds: &[TapedPrediction],
    gts: &[GtObjectData<'_>],
    assignment: &MatchAssignment,
) -> Result<(TensorId, usize)> {
    let mut object_terms: Vec<TensorId> = Vec::new();
    let mut gated_views = 0usize;
    for (k, j) in assignment.matched() {
        let pred = &preds[k];
        let gt = &gts[j];
        let mut view_terms: Vec<TensorId> = Vec::new();
        for (p, gt_view) in gt.views.iter().enumerate() {
            let Some((_box, mask)) = gt_view else {
                continue;
            };
            let Some(sil) = pred.views[p].silhouette else {
                continue;
            };
            let iou = soft_mask_iou(tape.values(sil), mask)?;
            if iou <= SILHOUETTE_IOU_GATE {
                continue;
            }
            gated_views += 1;
            let targets: Vec<f64> = mask.data.iter().map(|&b| f64::from(u8::from(b))).collect();
            view_terms.push(tape.bce_probs(sil, &targets)?);
        }
        if view_terms.is_empty() {
            continue;
        }
        let stacked = tape.concat_cols(&view_terms)?;
        object_terms.push(tape.mean_all(stacked));
    }
    let total = if object_terms.is_empty() {
        tape.scalar_const(0.0)
    } else {
        mean_of(tape, &object_terms)?
    };
    Ok((total, gated_views))
}

/// Stage-aware combination: layout alone, or layout plus weighted shape.
pub fn total_loss(
    tape: &mut Tape,
    preds: &[TapedPrediction],
    gts: &[GtObjectData<'_>],
    assignment: &MatchAssignment,
    cameras: &[Camera],
    weights: &LossWeights,
    stage: Stage,
) -> Result<LossOutput> {
    let layout = layout_loss(tape, preds, gts, assignment, cameras, weights)?;
    match stage {
        Stage::Layout => Ok(layout),
        Stage::Joint => {
            let (shape, gated_views) = shape_loss(tape, preds, gts, assignment)?;
            let weighted = tape.scale(shape, weights.silhouette_w);
            let total = tape.add(layout.total, weighted)?;
            Ok(LossOutput {
                total,
                terms: LossTerms {
                    silhouette_term: tape.scalar(shape),
                    gated_views,
                    total: tape.scalar(total),
                    ..layout.terms
                },
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matching::MatchAssignment;
    use crate::render::BinaryMask;

    fn identity_camera() -> Camera {
        Camera::new(
            64.0,
            64.0,
            32.0,
            32.0,
            64,
            64,
            [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            [0.0, 0.0, 0.0],
        )
        .unwrap()
    }

    fn shifted_camera() -> Camera {
        Camera::new(
            64.0,
            64.0,
            32.0,
            32.0,
            64,
            64,
            [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            [-1.5, 0.0, 0.0],
        )
        .unwrap()
    }

    fn nbox(x1: f64, y1: f64, x2: f64, y2: f64) -> Box2D {
        Box2D::new(x1, y1, x2, y2).unwrap()
    }

    fn box_tensor(tape: &mut Tape, b: &Box2D) -> TensorId {
        tape.constant(vec![1, 4], b.coords().to_vec())
    }

    fn empty_mask() -> BinaryMask {
        BinaryMask::empty(4, 4)
    }

    /// Two predictions, two targets, two views; every term hand-computed.
    #[test]
    fn fixture_matches_manual_computation() {
        let mask = empty_mask();
        let mut tape = Tape::new();

        let p0_box_v0 = box_tensor(&mut tape, &nbox(0.2, 0.2, 0.4, 0.4));
        let p0_box_v1 = box_tensor(&mut tape, &nbox(0.3, 0.3, 0.5, 0.5));
        let p1_box_v1 = box_tensor(&mut tape, &nbox(0.6, 0.6, 0.8, 0.8));

        let p0_logits = tape.constant(vec![1, 3], vec![0.0, 2.0, 0.0]);
        let p0_center = tape.constant(vec![1, 3], vec![0.0, 0.0, 2.0]);
        let p0_comp = tape.constant(vec![1, 1], vec![1.2]);
        let p1_logits = tape.constant(vec![1, 3], vec![1.0, 0.0, 1.0]);
        let p1_center = tape.constant(vec![1, 3], vec![2.0, 0.5, 2.0]);
        let p1_comp = tape.constant(vec![1, 1], vec![-0.4]);

        let preds = vec![
            TapedPrediction {
                class_logits: p0_logits,
                center: p0_center,
                completeness_logit: p0_comp,
                views: vec![
                    PredViewGeometry {
                        box2d: Some(p0_box_v0),
                        center_in_frustum: true,
                        silhouette: None,
                    },
                    PredViewGeometry {
                        box2d: Some(p0_box_v1),
                        center_in_frustum: true,
                        silhouette: None,
                    },
                ],
            },
            TapedPrediction {
                class_logits: p1_logits,
                center: p1_center,
                completeness_logit: p1_comp,
                views: vec![
                    PredViewGeometry {
                        box2d: None,
                        center_in_frustum: false, // u = 1.5 under the identity camera
                        silhouette: None,
                    },
                    PredViewGeometry {
                        box2d: Some(p1_box_v1),
                        center_in_frustum: true, // u = 0.75 under the shifted camera
                        silhouette: None,
                    },
                ],
            },
        ];
        let gts = vec![
            GtObjectData {
                label: 1,
                views: vec![
                    Some((nbox(0.25, 0.2, 0.45, 0.4), &mask)),
                    Some((nbox(0.3, 0.3, 0.5, 0.5), &mask)),
                ],
            },
            GtObjectData {
                label: 2,
                views: vec![
                    Some((nbox(0.55, 0.6, 0.75, 0.8), &mask)),
                    Some((nbox(0.1, 0.1, 0.2, 0.2), &mask)),
                ],
            },
        ];
        let assignment = MatchAssignment {
            pred_to_gt: vec![Some(0), Some(1)],
            total_cost: 0.0,
        };
        let cameras = vec![identity_camera(), shifted_camera()];
        let weights = LossWeights::default();

        let out = layout_loss(&mut tape, &preds, &gts, &assignment, &cameras, &weights).unwrap();

        // spreadsheet: classification
        let ce0 = (2.0 + 2.0_f64.exp()).ln() - 2.0;
        let ce1 = (1.0 + 2.0 * 1.0_f64.exp()).ln() - 1.0;
        let expect_class = (ce0 + ce1) / 2.0;
        assert!((out.terms.class_term - expect_class).abs() < 1e-12);

        // completeness: targets [1, 1]
        let bce = |x: f64, t: f64| x.max(0.0) - x * t + (-x.abs()).exp().ln_1p();
        let expect_comp = (bce(1.2, 1.0) + bce(-0.4, 1.0)) / 2.0;
        assert!((out.terms.completeness_term - expect_comp).abs() < 1e-12);

        // box: pred0 views (0.05, 0), pred1 view1 only
        let p0 = ((0.05 + 0.0 + 0.05 + 0.0) / 2.0 + 0.0) / 2.0;
        let p1 = (0.5 + 0.5 + 0.6 + 0.6) / 2.0;
        let expect_box = (p0 + p1) / 2.0;
        assert!((out.terms.box_term - expect_box).abs() < 1e-12);

        // frustum: pred1 misses view0; gt box center (0.65, 0.7)
        let ray_gt: [f64; 3] = [(0.65 * 64.0 - 32.0) / 64.0, (0.7 * 64.0 - 32.0) / 64.0, 1.0];
        let ray_pred: [f64; 3] = [2.0, 0.5, 2.0];
        let dot = ray_gt[0] * ray_pred[0] + ray_gt[1] * ray_pred[1] + ray_gt[2] * ray_pred[2];
        let ng = (ray_gt[0] * ray_gt[0] + ray_gt[1] * ray_gt[1] + 1.0).sqrt();
        let np = (ray_pred[0] * ray_pred[0]
            + ray_pred[1] * ray_pred[1]
            + ray_pred[2] * ray_pred[2])
            .sqrt();
        let expect_frustum = 1.0 - dot / (ng * np);
        assert!((out.terms.frustum_term - expect_frustum).abs() < 1e-12);

        let expect_total = expect_class + 5.0 * expect_box + expect_comp + expect_frustum;
        assert!((out.terms.total - expect_total).abs() < 1e-12);
        assert!((tape.scalar(out.total) - expect_total).abs() < 1e-15);
    }

    /// Perfect predictions drive every term toward its optimum.
    #[test]
    fn perfect_predictions_have_near_zero_loss() {
        let mask = empty_mask();
        let mut tape = Tape::new();
        let b = nbox(0.4, 0.4, 0.6, 0.6);
        let bid = box_tensor(&mut tape, &b);
        let logits = tape.constant(vec![1, 3], vec![-30.0, 30.0, -30.0]);
        let center = tape.constant(vec![1, 3], vec![0.0, 0.0, 2.0]);
        let comp = tape.constant(vec![1, 1], vec![30.0]);
        let preds = vec![TapedPrediction {
            class_logits: logits,
            center,
            completeness_logit: comp,
            views: vec![PredViewGeometry {
                box2d: Some(bid),
                center_in_frustum: true,
                silhouette: None,
            }],
        }];
        let gts = vec![GtObjectData {
            label: 1,
            views: vec![Some((b, &mask))],
        }];
        let assignment = MatchAssignment {
            pred_to_gt: vec![Some(0)],
            total_cost: 0.0,
        };
        let out = layout_loss(
            &mut tape,
            &preds,
            &gts,
            &assignment,
            &[identity_camera()],
            &LossWeights::default(),
        )
        .unwrap();
        assert_eq!(out.terms.box_term, 0.0);
        assert_eq!(out.terms.frustum_term, 0.0);
        assert!(out.terms.class_term < 1e-12);
        assert!(out.terms.completeness_term < 1e-12);
    }

    fn const_silhouette(tape: &mut Tape, values: Vec<f64>) -> TensorId {
        tape.constant(vec![4, 4], values)
    }

    fn pred_with_silhouette(tape: &mut Tape, sil: TensorId) -> TapedPrediction {
        let logits = tape.constant(vec![1, 3], vec![0.0, 1.0, 0.0]);
        let center = tape.constant(vec![1, 3], vec![0.0, 0.0, 2.0]);
        let comp = tape.constant(vec![1, 1], vec![1.0]);
        let b = box_tensor(tape, &nbox(0.25, 0.25, 0.75, 0.75));
        TapedPrediction {
            class_logits: logits,
            center,
            completeness_logit: comp,
            views: vec![PredViewGeometry {
                box2d: Some(b),
                center_in_frustum: true,
                silhouette: Some(sil),
            }],
        }
    }

    #[test]
    fn low_iou_views_are_gated_out() {
        let mut tape = Tape::new();
        // mask occupies the left half, silhouette the right: IoU = 0
        let mask = BinaryMask {
            width: 4,
            height: 4,
            data: (0..16).map(|i| i % 4 < 2).collect(),
        };
        let sil_vals: Vec<f64> = (0..16).map(|i| if i % 4 >= 2 { 0.9 } else { 0.1 }).collect();
        let sil = const_silhouette(&mut tape, sil_vals);
        let preds = vec![pred_with_silhouette(&mut tape, sil)];
        let gts = vec![GtObjectData {
            label: 1,
            views: vec![Some((nbox(0.1, 0.1, 0.5, 0.9), &mask))],
        }];
        let assignment = MatchAssignment {
            pred_to_gt: vec![Some(0)],
            total_cost: 0.0,
        };
        let (total, gated) = shape_loss(&mut tape, &preds, &gts, &assignment).unwrap();
        assert_eq!(gated, 0);
        assert_eq!(tape.scalar(total), 0.0);
    }

    #[test]
    fn four_by_four_fixture_matches_manual_bce() {
        let mut tape = Tape::new();
        let mask = BinaryMask {
            width: 4,
            height: 4,
            data: (0..16).map(|i| i < 8).collect(),
        };
        let sil_vals: Vec<f64> = (0..16).map(|i| if i < 8 { 0.9 } else { 0.2 }).collect();
        let sil = const_silhouette(&mut tape, sil_vals.clone());
        let preds = vec![pred_with_silhouette(&mut tape, sil)];
        let gts = vec![GtObjectData {
            label: 1,
            views: vec![Some((nbox(0.1, 0.1, 0.9, 0.55), &mask))],
        }];
        let assignment = MatchAssignment {
            pred_to_gt: vec![Some(0)],
            total_cost: 0.0,
        };
        let (total, gated) = shape_loss(&mut tape, &preds, &gts, &assignment).unwrap();
        assert_eq!(gated, 1);
        // manual per-pixel cross entropy, averaged over the 16 pixels
        let manual: f64 = sil_vals
            .iter()
            .enumerate()
            .map(|(i, &p)| if i < 8 { -p.ln() } else { -(1.0 - p).ln() })
            .sum::<f64>()
            / 16.0;
        assert!((tape.scalar(total) - manual).abs() < 1e-12);
    }

    #[test]
    fn near_perfect_silhouette_is_near_minimal() {
        let mut tape = Tape::new();
        let mask = BinaryMask {
            width: 4,
            height: 4,
            data: (0..16).map(|i| i % 2 == 0).collect(),
        };
        let sil_vals: Vec<f64> = (0..16)
            .map(|i| if i % 2 == 0 { 0.99 } else { 0.01 })
            .collect();
        let sil = const_silhouette(&mut tape, sil_vals);
        let preds = vec![pred_with_silhouette(&mut tape, sil)];
        let gts = vec![GtObjectData {
            label: 1,
            views: vec![Some((nbox(0.1, 0.1, 0.9, 0.9), &mask))],
        }];
        let assignment = MatchAssignment {
            pred_to_gt: vec![Some(0)],
            total_cost: 0.0,
        };
        let (total, _) = shape_loss(&mut tape, &preds, &gts, &assignment).unwrap();
        // -ln(0.99) ~ 0.01 per pixel
        assert!((tape.scalar(total) - (-(0.99_f64.ln()))).abs() < 1e-12);
    }

    #[test]
    fn stage_one_equals_stage_two_with_zero_weight() {
        let mask = empty_mask();
        let mut tape = Tape::new();
        let b = nbox(0.3, 0.3, 0.5, 0.6);
        let bid = box_tensor(&mut tape, &b);
        let sil = const_silhouette(&mut tape, vec![0.4; 16]);
        let logits = tape.constant(vec![1, 3], vec![0.5, 1.0, -0.5]);
        let center = tape.constant(vec![1, 3], vec![0.1, 0.0, 2.0]);
        let comp = tape.constant(vec![1, 1], vec![0.3]);
        let mk_preds = |sil_opt: Option<TensorId>| {
            vec![TapedPrediction {
                class_logits: logits,
                center,
                completeness_logit: comp,
                views: vec![PredViewGeometry {
                    box2d: Some(bid),
                    center_in_frustum: true,
                    silhouette: sil_opt,
                }],
            }]
        };
        let gts = vec![GtObjectData {
            label: 1,
            views: vec![Some((nbox(0.35, 0.3, 0.55, 0.6), &mask))],
        }];
        let assignment = MatchAssignment {
            pred_to_gt: vec![Some(0)],
            total_cost: 0.0,
        };
        let cameras = vec![identity_camera()];

        let preds = mk_preds(None);
        let stage1 = total_loss(
            &mut tape,
            &preds,
            &gts,
            &assignment,
            &cameras,
            &LossWeights::default(),
            Stage::Layout,
        )
        .unwrap();
        let preds = mk_preds(Some(sil));
        let zero_shape = LossWeights {
            silhouette_w: 0.0,
            ..LossWeights::default()
        };
        let stage2 = total_loss(
            &mut tape,
            &preds,
            &gts,
            &assignment,
            &cameras,
            &zero_shape,
            Stage::Joint,
        )
        .unwrap();
        assert_eq!(stage1.terms.total, stage2.terms.total);
    }

    #[test]
    fn paper_scale_weight_ratio_holds() {
        let w = LossWeights::default();
        assert_eq!(w.box_w / w.class_w, 5.0);
        assert_eq!(w.completeness_w, 1.0);
        assert_eq!(w.frustum_w, 1.0);
        assert_eq!(w.silhouette_w, 2.0);
        assert_eq!(w.matching_box_w, 5.0);
    }
}
