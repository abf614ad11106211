//! Differentiable scene forward pass shared by training, evaluation, and
//! latent-only reconstruction.

use std::rc::Rc;

use crate::autodiff::{ParamStore, Tape, TensorId};
use crate::camera::{box_from_points_on_tape, project_on_tape, Box2D, Camera};
use crate::decoders::{ObjectDecoder, TapedLayout};
use crate::error::Result;
use crate::generator::Generator;
use crate::latent::AnchorSet;
use crate::losses::{GtObjectData, PredViewGeometry, Stage, TapedPrediction};
use crate::matching::{build_cost_matrix, hungarian, MatchAssignment, MatchCandidate, MatchTarget};
use crate::render::{rasterize_silhouette_on_tape, RasterConfig};
use crate::scene::TemplateSphere;

/// One decoded prediction with the tape handles needed to extend it.
pub struct BuiltPrediction {
    pub layout: TapedLayout,
    /// Projected vertices and validity per camera, for silhouettes.
    pub projections: Vec<(TensorId, Vec<bool>)>,
    pub taped: TapedPrediction,
}

/// Roll out `n_preds` objects from latent logits and project them into every
/// camera: boxes, frustum flags, and (optionally, later) silhouettes.
#[allow(clippy::too_many_arguments)]
pub fn build_predictions(
    tape: &mut Tape,
    store: &ParamStore,
    generator: &Generator,
    decoder: &ObjectDecoder,
    anchors: &AnchorSet,
    template: &TemplateSphere,
    latent_logits: TensorId,
    n_preds: usize,
    cameras: &[Camera],
    stage: Stage,
) -> Result<Vec<BuiltPrediction>> {
    let z = crate::latent::compose_on_tape(tape, anchors, latent_logits)?;
    let features = generator.rollout(tape, store, z, n_preds)?;
    let mut built = Vec::with_capacity(n_preds);
    for &feature in features.iter().skip(1) {
        let trunk = decoder.trunk(tape, store, feature)?;
        let layout = decoder.decode_layout_from_trunk(tape, store, trunk)?;
        let offsets = match stage {
            Stage::Layout => None,
            Stage::Joint => {
                Some(decoder.decode_shape_from_trunk(tape, store, trunk, template)?)
            }
        };
        let world = crate::decoders::world_mesh_on_tape(
            tape,
            template,
            offsets,
            layout.size,
            layout.center,
        )?;
        let center_vals = tape.values(layout.center).to_vec();
        let center = [center_vals[0], center_vals[1], center_vals[2]];
        let mut projections = Vec::with_capacity(cameras.len());
        let mut views = Vec::with_capacity(cameras.len());
        for cam in cameras {
            let (uv, _depth, valid) = project_on_tape(tape, world, cam)?;
            let box2d = box_from_points_on_tape(tape, uv, &valid).ok();
            views.push(PredViewGeometry {
                box2d,
                center_in_frustum: cam.in_frustum(center),
                silhouette: None,
            });
            projections.push((uv, valid));
        }
        built.push(BuiltPrediction {
            taped: TapedPrediction {
                class_logits: layout.class_logits,
                center: layout.center,
                completeness_logit: layout.completeness_logit,
                views,
            },
            projections,
            layout,
        });
    }
    Ok(built)
}

/// Match the first `n_targets` predictions against ground truth using the
/// current boxes and class probabilities.
pub fn match_predictions(
    tape: &Tape,
    preds: &[BuiltPrediction],
    gts: &[GtObjectData<'_>],
    matching_box_w: f64,
) -> Result<MatchAssignment> {
    let n = gts.len().min(preds.len());
    let candidates: Vec<MatchCandidate> = preds[..n]
        .iter()
        .map(|p| {
            let logits = tape.values(p.taped.class_logits);
            let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut probs: Vec<f64> = logits.iter().map(|&x| (x - max).exp()).collect();
            let denom: f64 = probs.iter().sum();
            probs.iter_mut().for_each(|v| *v /= denom);
            MatchCandidate {
                class_probs: probs,
                boxes: p
                    .taped
                    .views
                    .iter()
                    .map(|v| {
                        v.box2d.map(|id| {
                            let c = tape.values(id);
                            Box2D::new(c[0], c[1], c[2], c[3]).expect("box op emits valid boxes")
                        })
                    })
                    .collect(),
            }
        })
        .collect();
    let targets: Vec<MatchTarget> = gts
        .iter()
        .map(|g| MatchTarget {
            label: g.label,
            boxes: g.views.iter().map(|v| v.as_ref().map(|(b, _)| *b)).collect(),
        })
        .collect();
    let cost = build_cost_matrix(&candidates, &targets, matching_box_w)?;
    let mut assignment = hungarian(&cost)?;
    assignment.pred_to_gt.resize(preds.len(), None);
    Ok(assignment)
}

/// Rasterize soft silhouettes for matched predictions on the views where
/// their target is observed (the only places the shape loss can look).
pub fn attach_silhouettes(
    tape: &mut Tape,
    preds: &mut [BuiltPrediction],
    gts: &[GtObjectData<'_>],
    assignment: &MatchAssignment,
    template: &TemplateSphere,
    raster: &RasterConfig,
) -> Result<usize> {
    let faces = Rc::new(template.mesh.faces.clone());
    let mut degenerate = 0usize;
    for (k, j) in assignment.matched() {
        for (p, gt_view) in gts[j].views.iter().enumerate() {
            if gt_view.is_none() {
                continue;
            }
            let (uv, valid) = &preds[k].projections[p];
            let out = rasterize_silhouette_on_tape(tape, *uv, valid, &faces, raster)?;
            degenerate += out.degenerate_faces;
            preds[k].taped.views[p].silhouette = Some(out.map);
        }
    }
    Ok(degenerate)
}
