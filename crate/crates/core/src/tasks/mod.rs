//! Downstream tasks over a trained model: scene synthesis, latent
//! interpolation, and single-view reconstruction by latent optimization.

pub mod retrieval;

use std::collections::BTreeMap;

use crate::autodiff::{ParamTensor, RmsProp, Tape};
use crate::dataset::ViewRecord;
use crate::error::{Error, Result};
use crate::latent::{compose_from_simplex, random_latent, slerp, LatentVector, WeightSimplex};
use crate::losses::{total_loss, GtObjectData, LossWeights, Stage};
use crate::scene::Scene;
use crate::train::forward::{attach_silhouettes, build_predictions, match_predictions};
use crate::train::ModelState;

/// Objects with completeness below this stop the rollout.
pub const COMPLETENESS_THRESHOLD: f64 = 0.5;

/// Decode a latent vector into a scene: roll out to the maximum length,
/// truncate at the first incomplete object (exclusive), and drop anything
/// labeled void.
pub fn decode_scene(model: &ModelState, z: &LatentVector, with_shape: bool) -> Result<Scene> {
    let decoded = decode_objects(model, z, with_shape, None)?;
    let mut objects = Vec::new();
    for (layout, offsets) in decoded {
        if layout.completeness < COMPLETENESS_THRESHOLD {
            break;
        }
        if layout.label() == 0 {
            continue; // void
        }
        objects.push(crate::decoders::assemble_object(
            &layout,
            offsets.as_deref(),
            &model.template,
        )?);
    }
    Scene::new(model.categories.clone(), objects)
}

/// Raw rollout decode: layouts plus optional offsets, no truncation.
pub fn decode_objects(
    model: &ModelState,
    z: &LatentVector,
    with_shape: bool,
    count: Option<usize>,
) -> Result<Vec<(crate::decoders::LayoutPrediction, Option<Vec<f64>>)>> {
    let steps = count.unwrap_or(model.config.generator.max_objects);
    let mut tape = Tape::new();
    let z_id = z.constant_on(&mut tape);
    let features = model
        .generator
        .rollout(&mut tape, &model.store, z_id, steps)?;
    let mut out = Vec::with_capacity(steps);
    for &feature in features.iter().skip(1) {
        let trunk = model.decoder.trunk(&mut tape, &model.store, feature)?;
        let layout = model
            .decoder
            .decode_layout_from_trunk(&mut tape, &model.store, trunk)?;
        let offsets = if with_shape {
            let offs =
                model
                    .decoder
                    .decode_shape_from_trunk(&mut tape, &model.store, trunk, &model.template)?;
            Some(tape.values(offs).to_vec())
        } else {
            None
        };
        out.push((model.decoder.layout_values(&tape, &layout), offsets));
    }
    Ok(out)
}

/// Sample a random latent and decode it.
pub fn synthesize(model: &ModelState, seed: u64) -> Result<(Scene, LatentVector)> {
    let z = random_latent(&model.anchors, seed)?;
    let with_shape = model.epoch > model.config.stage1_epochs;
    Ok((decode_scene(model, &z, with_shape)?, z))
}

/// Decode scenes along the geodesic between two latents at
/// t = i / (steps - 1).
pub fn interpolate(
    model: &ModelState,
    z_a: &LatentVector,
    z_b: &LatentVector,
    steps: usize,
) -> Result<Vec<Scene>> {
    if steps < 2 {
        return Err(Error::InvalidArgument("interpolation needs >= 2 steps".into()));
    }
    let with_shape = model.epoch > model.config.stage1_epochs;
    let mut scenes = Vec::with_capacity(steps);
    for i in 0..steps {
        let t = i as f64 / (steps - 1) as f64;
        let z = slerp(z_a, z_b, t)?;
        scenes.push(decode_scene(model, &z, with_shape)?);
    }
    Ok(scenes)
}

#[derive(Debug, Clone)]
pub struct ReconstructOptions {
    pub iterations: usize,
    pub learning_rate: f64,
    /// Iteration after which the rate drops to a tenth (1-based).
    pub decay_iteration: usize,
    /// Initial latent logits; uniform simplex when absent.
    pub init_logits: Option<Vec<f64>>,
}

impl Default for ReconstructOptions {
    fn default() -> Self {
        ReconstructOptions {
            iterations: 1000,
            learning_rate: 0.01,
            decay_iteration: 500,
            init_logits: None,
        }
    }
}

impl ReconstructOptions {
    pub fn learning_rate_at(&self, iteration: usize) -> f64 {
        if iteration + 1 > self.decay_iteration {
            self.learning_rate * 0.1
        } else {
            self.learning_rate
        }
    }
}

/// Fit a fresh latent to one annotated view with the network frozen, then
/// decode the first n objects (n = number of annotated objects). The
/// completeness term is dropped: a single image is a partial observation.
pub fn reconstruct_single_view(
    model: &ModelState,
    view: &ViewRecord,
    labels: &BTreeMap<usize, usize>,
    options: &ReconstructOptions,
) -> Result<(Scene, LatentVector)> {
    let tracks: Vec<usize> = view
        .observations
        .iter()
        .enumerate()
        .filter_map(|(t, o)| o.as_ref().map(|_| t))
        .collect();
    if tracks.is_empty() {
        return Err(Error::InvalidArgument(
            "view has no annotated objects".into(),
        ));
    }
    let n = tracks.len();
    let gts: Vec<GtObjectData<'_>> = tracks
        .iter()
        .map(|&t| {
            let (b, m) = view.observations[t].as_ref().expect("filtered to present");
            Ok(GtObjectData {
                label: *labels.get(&t).ok_or_else(|| {
                    Error::InvalidArgument(format!("missing label for track {t}"))
                })?,
                views: vec![Some((*b, m))],
            })
        })
        .collect::<Result<_>>()?;
    let cameras = vec![view.camera.clone()];
    let weights = LossWeights {
        completeness_w: 0.0,
        ..model.config.loss_weights
    };
    let stage = if model.epoch > model.config.stage1_epochs {
        Stage::Joint
    } else {
        Stage::Layout
    };

    // network frozen; only the fresh logits move
    let mut store = model.store.clone();
    let logits_init = options
        .init_logits
        .clone()
        .unwrap_or_else(|| vec![0.0; model.anchors.count()]);
    if logits_init.len() != model.anchors.count() {
        return Err(Error::ShapeMismatch {
            op: "reconstruct_init",
            lhs: vec![model.anchors.count()],
            rhs: vec![logits_init.len()],
        });
    }
    let latent_pid = store.add(ParamTensor::new(
        "reconstruction/latent_logits",
        vec![1, model.anchors.count()],
        logits_init,
        true,
    )?)?;
    let mut optimizer = RmsProp::new(&store, vec![latent_pid]);

    for iteration in 0..options.iterations {
        store.zero_grad();
        let mut tape = Tape::new();
        let logits = tape.param(&store, latent_pid);
        let mut preds = build_predictions(
            &mut tape,
            &store,
            &model.generator,
            &model.decoder,
            &model.anchors,
            &model.template,
            logits,
            model.config.generator.max_objects,
            &cameras,
            stage,
        )?;
        let assignment =
            match_predictions(&tape, &preds, &gts, weights.matching_box_w)?;
        if stage == Stage::Joint {
            attach_silhouettes(
                &mut tape,
                &mut preds,
                &gts,
                &assignment,
                &model.template,
                &model.raster,
            )?;
        }
        let taped: Vec<_> = preds.into_iter().map(|p| p.taped).collect();
        let out = total_loss(&mut tape, &taped, &gts, &assignment, &cameras, &weights, stage)?;
        tape.backward(out.total, &mut store)?;
        // grads flow into the frozen network too; only the latent steps
        optimizer.step(&mut store, options.learning_rate_at(iteration));
    }

    let simplex = WeightSimplex::from_logits(store.get(latent_pid).values.clone());
    let z = compose_from_simplex(&model.anchors, &simplex)?;
    let with_shape = stage == Stage::Joint;
    let decoded = decode_objects(model, &z, with_shape, None)?;
    let mut objects = Vec::with_capacity(n);
    for (layout, offsets) in decoded.into_iter().take(n) {
        objects.push(crate::decoders::assemble_object(
            &layout,
            offsets.as_deref(),
            &model.template,
        )?);
    }
    Ok((Scene::new(model.categories.clone(), objects)?, z))
}

/// Latent JSON array I/O for the interpolation and synthesis surfaces.
pub fn write_latent(path: &std::path::Path, z: &LatentVector) -> Result<()> {
    let text = serde_json::to_string(&z.components().to_vec())
        .map_err(|e| Error::json(path.display().to_string(), e))?;
    std::fs::write(path, text).map_err(|e| Error::io(path.display().to_string(), e))
}

pub fn read_latent(path: &std::path::Path) -> Result<LatentVector> {
    let text =
        std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let values: Vec<f64> =
        serde_json::from_str(&text).map_err(|e| Error::json(path.display().to_string(), e))?;
    LatentVector::from_components(values)
}
