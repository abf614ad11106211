//! Gradient-check suite over every differentiable subsystem.
//!
//! Each entry compares tape gradients against central finite differences at
//! randomly drawn points, steering clear of the genuine kinks (relu at zero,
//! L1 ties). Primitive tolerance is 1e-6; composite losses get 1e-4; the
//! soft rasterizer gets 1e-3 because near-boundary pixels switch their
//! closest-edge region.

use rand::Rng;
use rand_chacha::ChaCha12Rng;

use crate::autodiff::{gradient_check, ParamStore, Tape, TensorId};
use crate::error::Result;
use crate::rng::derive;

pub const PRIMITIVE_TOL: f64 = 1e-6;
pub const COMPOSITE_TOL: f64 = 1e-4;
pub const RENDERER_TOL: f64 = 1e-3;

const FD_EPS: f64 = 1e-5;

#[derive(Debug, Clone)]
pub struct GradCheckEntry {
    pub name: String,
    pub max_rel_err: f64,
    pub tolerance: f64,
}

impl GradCheckEntry {
    pub fn passed(&self) -> bool {
        self.max_rel_err < self.tolerance
    }
}

fn draw(rng: &mut ChaCha12Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

/// Draw values keeping |x| >= margin, for kinked ops.
fn draw_away_from_zero(rng: &mut ChaCha12Rng, n: usize, margin: f64) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let mag = rng.random_range(margin..2.0);
            if rng.random_bool(0.5) {
                mag
            } else {
                -mag
            }
        })
        .collect()
}

/// Weighted sum with fixed weights, to scalarize a non-scalar op output.
fn weighted_sum(tape: &mut Tape, out: TensorId, weights: &[f64]) -> Result<TensorId> {
    let shape = tape.shape(out).to_vec();
    let w = tape.constant(shape, weights.to_vec());
    let prod = tape.mul(out, w)?;
    Ok(tape.sum_all(prod))
}

struct Check<'a> {
    rng: &'a mut ChaCha12Rng,
    points: usize,
    entries: Vec<GradCheckEntry>,
}

impl<'a> Check<'a> {
    fn run(
        &mut self,
        name: &str,
        tolerance: f64,
        mut case: impl FnMut(&mut ChaCha12Rng) -> Result<f64>,
    ) -> Result<()> {
        let mut worst: f64 = 0.0;
        for _ in 0..self.points {
            worst = worst.max(case(self.rng)?);
        }
        self.entries.push(GradCheckEntry {
            name: name.to_string(),
            max_rel_err: worst,
            tolerance,
        });
        Ok(())
    }
}

/// Gradient checks for every tape primitive, `points` random points each.
pub fn primitive_gradient_suite(points: usize, seed: u64) -> Result<Vec<GradCheckEntry>> {
    let mut rng = derive(seed, "gradsuite/primitives", &[]);
    let mut chk = Check {
        rng: &mut rng,
        points,
        entries: Vec::new(),
    };

    chk.run("add", PRIMITIVE_TOL, |rng| {
        let b = draw(rng, 6, -2.0, 2.0);
        let w = draw(rng, 6, -1.0, 1.0);
        let x = draw(rng, 6, -2.0, 2.0);
        gradient_check(
            move |t, xid| {
                let bid = t.constant(vec![2, 3], b.clone());
                let y = t.add(xid, bid)?;
                weighted_sum(t, y, &w)
            },
            &[2, 3],
            &x,
            FD_EPS,
        )
    })?;

    chk.run("sub", PRIMITIVE_TOL, |rng| {
        let b = draw(rng, 6, -2.0, 2.0);
        let w = draw(rng, 6, -1.0, 1.0);
        let x = draw(rng, 6, -2.0, 2.0);
        gradient_check(
            move |t, xid| {
                let bid = t.constant(vec![2, 3], b.clone());
                let y = t.sub(bid, xid)?;
                weighted_sum(t, y, &w)
            },
            &[2, 3],
            &x,
            FD_EPS,
        )
    })?;

    chk.run("mul", PRIMITIVE_TOL, |rng| {
        let b = draw(rng, 6, -2.0, 2.0);
        let w = draw(rng, 6, -1.0, 1.0);
        let x = draw(rng, 6, -2.0, 2.0);
        gradient_check(
            move |t, xid| {
                let bid = t.constant(vec![2, 3], b.clone());
                let y = t.mul(xid, bid)?;
                weighted_sum(t, y, &w)
            },
            &[2, 3],
            &x,
            FD_EPS,
        )
    })?;

    chk.run("div", PRIMITIVE_TOL, |rng| {
        let b = draw_away_from_zero(rng, 6, 0.4);
        let w = draw(rng, 6, -1.0, 1.0);
        let num = draw(rng, 6, -2.0, 2.0);
        // denominator side is the harder gradient; check x in both roles
        let both = gradient_check(
            {
                let b = b.clone();
                let w = w.clone();
                move |t, xid| {
                    let bid = t.constant(vec![2, 3], b.clone());
                    let y = t.div(bid, xid)?;
                    weighted_sum(t, y, &w)
                }
            },
            &[2, 3],
            &draw_away_from_zero(rng, 6, 0.4),
            FD_EPS,
        )?;
        let num_side = gradient_check(
            move |t, xid| {
                let bid = t.constant(vec![2, 3], b.clone());
                let y = t.div(xid, bid)?;
                weighted_sum(t, y, &w)
            },
            &[2, 3],
            &num,
            FD_EPS,
        )?;
        Ok(both.max(num_side))
    })?;

    chk.run("neg", PRIMITIVE_TOL, |rng| {
        let w = draw(rng, 4, -1.0, 1.0);
        let x = draw(rng, 4, -2.0, 2.0);
        gradient_check(
            move |t, xid| {
                let y = t.neg(xid);
                weighted_sum(t, y, &w)
            },
            &[4],
            &x,
            FD_EPS,
        )
    })?;

    chk.run("scale_add_const", PRIMITIVE_TOL, |rng| {
        let w = draw(rng, 4, -1.0, 1.0);
        let k = rng.random_range(-3.0..3.0);
        let x = draw(rng, 4, -2.0, 2.0);
        gradient_check(
            move |t, xid| {
                let y = t.scale(xid, k);
                let z = t.add_const(y, 0.7);
                weighted_sum(t, z, &w)
            },
            &[4],
            &x,
            FD_EPS,
        )
    })?;

    chk.run("matmul", PRIMITIVE_TOL, |rng| {
        let b = draw(rng, 12, -1.5, 1.5);
        let w = draw(rng, 6, -1.0, 1.0);
        let a = draw(rng, 8, -1.5, 1.5);
        let lhs = gradient_check(
            {
                let b = b.clone();
                let w = w.clone();
                move |t, xid| {
                    let bid = t.constant(vec![4, 3], b.clone());
                    let y = t.matmul(xid, bid)?;
                    weighted_sum(t, y, &w)
                }
            },
            &[2, 4],
            &a,
            FD_EPS,
        )?;
        let a2 = draw(rng, 8, -1.5, 1.5);
        let b2 = draw(rng, 12, -1.5, 1.5);
        let w2 = draw(rng, 6, -1.0, 1.0);
        let rhs = gradient_check(
            move |t, xid| {
                let aid = t.constant(vec![2, 4], a2.clone());
                let y = t.matmul(aid, xid)?;
                weighted_sum(t, y, &w2)
            },
            &[4, 3],
            &b2,
            FD_EPS,
        )?;
        Ok(lhs.max(rhs))
    })?;

    chk.run("transpose", PRIMITIVE_TOL, |rng| {
        let w = draw(rng, 6, -1.0, 1.0);
        let x = draw(rng, 6, -2.0, 2.0);
        gradient_check(
            move |t, xid| {
                let y = t.transpose(xid);
                weighted_sum(t, y, &w)
            },
            &[2, 3],
            &x,
            FD_EPS,
        )
    })?;

    chk.run("row_add", PRIMITIVE_TOL, |rng| {
        let m = draw(rng, 6, -2.0, 2.0);
        let w = draw(rng, 6, -1.0, 1.0);
        let row = draw(rng, 3, -2.0, 2.0);
        gradient_check(
            move |t, xid| {
                let mid = t.constant(vec![2, 3], m.clone());
                let y = t.row_add(mid, xid)?;
                weighted_sum(t, y, &w)
            },
            &[1, 3],
            &row,
            FD_EPS,
        )
    })?;

    chk.run("row_mul", PRIMITIVE_TOL, |rng| {
        let m = draw(rng, 6, -2.0, 2.0);
        let w = draw(rng, 6, -1.0, 1.0);
        let row = draw(rng, 3, -2.0, 2.0);
        gradient_check(
            move |t, xid| {
                let mid = t.constant(vec![2, 3], m.clone());
                let y = t.row_mul(mid, xid)?;
                weighted_sum(t, y, &w)
            },
            &[1, 3],
            &row,
            FD_EPS,
        )
    })?;

    chk.run("div_by_scalar", PRIMITIVE_TOL, |rng| {
        let w = draw(rng, 4, -1.0, 1.0);
        // pack [a..., s] into one leaf so both routes are checked at once
        let mut x = draw(rng, 4, -2.0, 2.0);
        x.push(if rng.random_bool(0.5) { 1.3 } else { -0.9 });
        gradient_check(
            move |t, xid| {
                let a = t.slice_cols(xid, 0, 4)?;
                let s = t.slice_cols(xid, 4, 1)?;
                let y = t.div_by_scalar(a, s)?;
                weighted_sum(t, y, &w)
            },
            &[1, 5],
            &x,
            FD_EPS,
        )
    })?;

    chk.run("relu", PRIMITIVE_TOL, |rng| {
        let w = draw(rng, 6, -1.0, 1.0);
        let x = draw_away_from_zero(rng, 6, 1e-3);
        gradient_check(
            move |t, xid| {
                let y = t.relu(xid);
                weighted_sum(t, y, &w)
            },
            &[6],
            &x,
            FD_EPS,
        )
    })?;

    chk.run("gelu", PRIMITIVE_TOL, |rng| {
        let w = draw(rng, 6, -1.0, 1.0);
        let x = draw(rng, 6, -4.0, 4.0);
        gradient_check(
            move |t, xid| {
                let y = t.gelu(xid);
                weighted_sum(t, y, &w)
            },
            &[6],
            &x,
            FD_EPS,
        )
    })?;

    chk.run("softplus", PRIMITIVE_TOL, |rng| {
        let w = draw(rng, 6, -1.0, 1.0);
        let x = draw(rng, 6, -6.0, 6.0);
        gradient_check(
            move |t, xid| {
                let y = t.softplus(xid);
                weighted_sum(t, y, &w)
            },
            &[6],
            &x,
            FD_EPS,
        )
    })?;

    chk.run("sigmoid", PRIMITIVE_TOL, |rng| {
        let w = draw(rng, 6, -1.0, 1.0);
        let x = draw(rng, 6, -6.0, 6.0);
        gradient_check(
            move |t, xid| {
                let y = t.sigmoid(xid);
                weighted_sum(t, y, &w)
            },
            &[6],
            &x,
            FD_EPS,
        )
    })?;

    chk.run("sqrt", PRIMITIVE_TOL, |rng| {
        let w = draw(rng, 6, -1.0, 1.0);
        let x = draw(rng, 6, 0.5, 4.0);
        gradient_check(
            move |t, xid| {
                let y = t.sqrt(xid);
                weighted_sum(t, y, &w)
            },
            &[6],
            &x,
            FD_EPS,
        )
    })?;

    chk.run("softmax_rows", PRIMITIVE_TOL, |rng| {
        let w = draw(rng, 8, -1.0, 1.0);
        let x = draw(rng, 8, -3.0, 3.0);
        gradient_check(
            move |t, xid| {
                let y = t.softmax_rows(xid);
                weighted_sum(t, y, &w)
            },
            &[2, 4],
            &x,
            FD_EPS,
        )
    })?;

    chk.run("concat_slice", PRIMITIVE_TOL, |rng| {
        let w = draw(rng, 12, -1.0, 1.0);
        let x = draw(rng, 8, -2.0, 2.0);
        gradient_check(
            move |t, xid| {
                let left = t.slice_cols(xid, 0, 3)?;
                let right = t.slice_cols(xid, 3, 1)?;
                let top = t.slice_rows(xid, 0, 1)?;
                let cols = t.concat_cols(&[right, left])?;
                let rows = t.concat_rows(&[cols, top])?;
                weighted_sum(t, rows, &w)
            },
            &[2, 4],
            &x,
            FD_EPS,
        )
    })?;

    chk.run("sum_mean", PRIMITIVE_TOL, |rng| {
        let x = draw(rng, 6, -2.0, 2.0);
        gradient_check(
            move |t, xid| {
                let s = t.sum_all(xid);
                let m = t.mean_all(xid);
                let both = t.concat_cols(&[s, m])?;
                let far = t.constant(vec![1, 2], vec![100.0, 100.0]);
                t.l1_distance(both, far)
            },
            &[2, 3],
            &x,
            FD_EPS,
        )
    })?;

    chk.run("l1_distance", PRIMITIVE_TOL, |rng| {
        let b = draw(rng, 6, 5.0, 9.0);
        let x = draw(rng, 6, -2.0, 2.0);
        gradient_check(
            move |t, xid| {
                let bid = t.constant(vec![2, 3], b.clone());
                t.l1_distance(xid, bid)
            },
            &[2, 3],
            &x,
            FD_EPS,
        )
    })?;

    chk.run("cross_entropy_logits", PRIMITIVE_TOL, |rng| {
        let targets = vec![rng.random_range(0..5), rng.random_range(0..5)];
        let x = draw(rng, 10, -3.0, 3.0);
        gradient_check(
            move |t, xid| t.cross_entropy_logits(xid, &targets),
            &[2, 5],
            &x,
            FD_EPS,
        )
    })?;

    chk.run("bce_with_logits", PRIMITIVE_TOL, |rng| {
        let targets: Vec<f64> = (0..6).map(|_| if rng.random_bool(0.5) { 1.0 } else { 0.0 }).collect();
        let x = draw(rng, 6, -4.0, 4.0);
        gradient_check(
            move |t, xid| t.bce_with_logits(xid, &targets),
            &[6],
            &x,
            FD_EPS,
        )
    })?;

    chk.run("bce_probs", PRIMITIVE_TOL, |rng| {
        let targets: Vec<f64> = (0..6).map(|_| if rng.random_bool(0.5) { 1.0 } else { 0.0 }).collect();
        let x = draw(rng, 6, 0.05, 0.95);
        gradient_check(
            move |t, xid| t.bce_probs(xid, &targets),
            &[6],
            &x,
            FD_EPS,
        )
    })?;

    chk.run("layer_norm_rows", PRIMITIVE_TOL, |rng| {
        let w = draw(rng, 8, -1.0, 1.0);
        // pack x (2x4), gamma (4), beta (4) into one leaf
        let mut x = draw(rng, 8, -2.0, 2.0);
        x.extend(draw(rng, 4, 0.5, 1.5));
        x.extend(draw(rng, 4, -0.5, 0.5));
        gradient_check(
            move |t, xid| {
                let xm = t.slice_cols(xid, 0, 8)?;
                let flat_x = t.transpose(xm); // keep 2x4 layout via reshape below
                let x0 = t.transpose(flat_x);
                let gamma = t.slice_cols(xid, 8, 4)?;
                let beta = t.slice_cols(xid, 12, 4)?;
                // rebuild the 2x4 matrix from the flat row
                let r0 = t.slice_cols(x0, 0, 4)?;
                let r1 = t.slice_cols(x0, 4, 4)?;
                let mat = t.concat_rows(&[r0, r1])?;
                let y = t.layer_norm_rows(mat, gamma, beta, 1e-5)?;
                weighted_sum(t, y, &w)
            },
            &[1, 16],
            &x,
            FD_EPS,
        )
    })?;

    Ok(chk.entries)
}

/// Finite-difference check of store-parameter gradients for an arbitrary
/// scalar loss built on a tape.
///
/// Backpropagates once, then central-differences a random sample of up to
/// `max_coords` coordinates across all trainable parameters (exhaustive
/// differencing of full networks is too slow). Returns the worst relative
/// error over the sampled coordinates.
pub fn param_gradient_check(
    store: &mut ParamStore,
    build: impl Fn(&mut Tape, &ParamStore) -> Result<TensorId>,
    eps: f64,
    max_coords: usize,
    seed: u64,
) -> Result<f64> {
    store.zero_grad();
    let mut tape = Tape::new();
    let loss = build(&mut tape, store)?;
    tape.backward(loss, store)?;

    let mut coords: Vec<(crate::autodiff::ParamId, usize)> = Vec::new();
    for (pid, tensor) in store.iter() {
        if tensor.requires_grad {
            coords.extend((0..tensor.numel()).map(|i| (pid, i)));
        }
    }
    let mut rng = derive(seed, "gradsuite/param-coords", &[]);
    if coords.len() > max_coords {
        // Fisher-Yates prefix
        for i in 0..max_coords {
            let j = rng.random_range(i..coords.len());
            coords.swap(i, j);
        }
        coords.truncate(max_coords);
    }

    let mut worst: f64 = 0.0;
    for (pid, idx) in coords {
        let analytic = store.get(pid).grad[idx];
        let original = store.get(pid).values[idx];
        store.get_mut(pid).values[idx] = original + eps;
        let mut t_hi = Tape::new();
        let hi_id = build(&mut t_hi, store)?;
        let hi = t_hi.scalar(hi_id);
        store.get_mut(pid).values[idx] = original - eps;
        let mut t_lo = Tape::new();
        let lo_id = build(&mut t_lo, store)?;
        let lo = t_lo.scalar(lo_id);
        store.get_mut(pid).values[idx] = original;
        let fd = (hi - lo) / (2.0 * eps);
        let err = (analytic - fd).abs() / analytic.abs().max(fd.abs()).max(1e-8);
        worst = worst.max(err);
    }
    Ok(worst)
}

/// Composite-loss and renderer gradient checks on a small end-to-end
/// fixture: a fresh model over a two-scene dataset, differentiated through
/// rollout, decoding, projection, matching, and the view losses.
pub fn composite_gradient_suite(seed: u64) -> Result<Vec<GradCheckEntry>> {
    use crate::dataset::{generate_scenes, DatasetSpec};
    use crate::losses::{total_loss, GtObjectData, Stage};
    use crate::train::forward::{attach_silhouettes, build_predictions, match_predictions};
    use crate::train::{TrainConfig, Trainer};

    let spec = DatasetSpec {
        scene_count: 1,
        objects_min: 1,
        objects_max: 2,
        views_per_scene: 4,
        image_width: 32,
        image_height: 32,
        ..DatasetSpec::desk(seed)
    };
    let records = generate_scenes(&spec)?;
    let config = TrainConfig {
        generator: crate::generator::GeneratorConfig {
            d_model: 32,
            heads: 4,
            ff_hidden: 48,
            max_objects: 3,
            layer_norm: true,
        },
        decoder_trunk_hidden: 48,
        decoder_trunk_out: 32,
        shape_hidden1: 40,
        shape_hidden2: 24,
        latent_anchors: 24,
        template_subdivisions: 1,
        views_per_step: 4,
        ..TrainConfig::desk(seed)
    };
    let trainer = Trainer::new(&records, spec.category_table()?, config)?;
    let model = &trainer.model;
    let record = &trainer.records[0];
    let cameras: Vec<_> = record.views.iter().map(|v| v.camera.clone()).collect();
    let embedding = model.embeddings[0];

    let cameras_ref: &[crate::camera::Camera] = &cameras;
    let loss_for_stage = move |stage: Stage| {
        move |tape: &mut Tape, store: &ParamStore| -> Result<TensorId> {
            let cameras = cameras_ref;
            let gts: Vec<GtObjectData<'_>> = (0..record.scene.len())
                .map(|track| GtObjectData {
                    label: record.scene.objects[track].label,
                    views: record
                        .views
                        .iter()
                        .map(|v| v.observations[track].as_ref().map(|(b, m)| (*b, m)))
                        .collect(),
                })
                .collect();
            let logits = tape.param(store, embedding);
            let mut preds = build_predictions(
                tape,
                store,
                &model.generator,
                &model.decoder,
                &model.anchors,
                &model.template,
                logits,
                model.config.generator.max_objects,
                cameras,
                stage,
            )?;
            let assignment = match_predictions(
                tape,
                &preds,
                &gts,
                model.config.loss_weights.matching_box_w,
            )?;
            if stage == Stage::Joint {
                attach_silhouettes(
                    tape,
                    &mut preds,
                    &gts,
                    &assignment,
                    &model.template,
                    &model.raster,
                )?;
            }
            let taped: Vec<_> = preds.into_iter().map(|p| p.taped).collect();
            let out = total_loss(
                tape,
                &taped,
                &gts,
                &assignment,
                cameras,
                &model.config.loss_weights,
                stage,
            )?;
            Ok(out.total)
        }
    };

    let mut entries = Vec::new();

    // layout losses through decoder, generator, projection and matching
    let mut store = model.store.clone();
    let err = param_gradient_check(&mut store, loss_for_stage(Stage::Layout), 1e-5, 120, seed)?;
    entries.push(GradCheckEntry {
        name: "layout_loss_all_params".into(),
        max_rel_err: err,
        tolerance: COMPOSITE_TOL,
    });

    // the same loss, restricted to the scene's latent logits
    let mut store = model.store.clone();
    for (pid, _) in model.store.iter() {
        if pid != embedding {
            store.get_mut(pid).requires_grad = false;
        }
    }
    let err = param_gradient_check(&mut store, loss_for_stage(Stage::Layout), 1e-5, 64, seed)?;
    entries.push(GradCheckEntry {
        name: "total_loss_latent_logits".into(),
        max_rel_err: err,
        tolerance: COMPOSITE_TOL,
    });

    // silhouette pixel sum with respect to world vertex coordinates,
    // straight through projection and rasterization
    let cam = cameras[0].clone();
    let template = crate::scene::make_icosphere(0)?;
    let faces = std::rc::Rc::new(template.mesh.faces.clone());
    let raster = model.raster;
    let mut world = Vec::new();
    for v in &template.mesh.vertices {
        world.push(v[0] * 0.4);
        world.push(v[1] * 0.4 + 0.6);
        world.push(v[2] * 0.4);
    }
    let vcount = template.vertex_count();
    let err = gradient_check(
        |t, wid| {
            let (uv, _z, valid) = crate::camera::project_on_tape(t, wid, &cam)?;
            let out =
                crate::render::rasterize_silhouette_on_tape(t, uv, &valid, &faces, &raster)?;
            Ok(t.sum_all(out.map))
        },
        &[vcount, 3],
        &world,
        1e-5,
    )?;
    entries.push(GradCheckEntry {
        name: "silhouette_pixel_sum_world_vertices".into(),
        max_rel_err: err,
        tolerance: RENDERER_TOL,
    });

    // silhouette cross-entropy against a fixed mask
    let mask_target: Vec<f64> = {
        let mut tape = Tape::new();
        let wid = tape.constant(vec![vcount, 3], world.clone());
        let (uv, _z, valid) = crate::camera::project_on_tape(&mut tape, wid, &cam)?;
        let out = crate::render::rasterize_silhouette_on_tape(&mut tape, uv, &valid, &faces, &raster)?;
        tape.values(out.map).iter().map(|&v| f64::from(u8::from(v > 0.5))).collect()
    };
    let err = gradient_check(
        |t, wid| {
            let (uv, _z, valid) = crate::camera::project_on_tape(t, wid, &cam)?;
            let out =
                crate::render::rasterize_silhouette_on_tape(t, uv, &valid, &faces, &raster)?;
            t.bce_probs(out.map, &mask_target)
        },
        &[vcount, 3],
        &world,
        1e-5,
    )?;
    entries.push(GradCheckEntry {
        name: "silhouette_bce_world_vertices".into(),
        max_rel_err: err,
        tolerance: RENDERER_TOL,
    });

    Ok(entries)
}

/// The whole gradient-check battery: primitives plus composites.
pub fn full_gradient_suite(points: usize, seed: u64) -> Result<Vec<GradCheckEntry>> {
    let mut entries = primitive_gradient_suite(points, seed)?;
    entries.extend(composite_gradient_suite(seed)?);
    Ok(entries)
}

/// Quadratic sanity case: tape gradient of a sum of squares is exact.
pub fn sum_of_squares_check(seed: u64) -> Result<f64> {
    let mut rng = derive(seed, "gradsuite/quadratic", &[]);
    let x: Vec<f64> = (0..8).map(|_| rng.random_range(-3.0..3.0)).collect();
    gradient_check(
        |t, xid| {
            let sq = t.mul(xid, xid)?;
            Ok(t.sum_all(sq))
        },
        &[8],
        &x,
        FD_EPS,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_of_squares_is_essentially_exact() {
        assert!(sum_of_squares_check(3).unwrap() < 1e-9);
    }

    #[test]
    fn primitives_pass_at_a_few_points() {
        // the full 100-point sweep runs in the acceptance suite
        for e in primitive_gradient_suite(5, 17).unwrap() {
            assert!(e.passed(), "{} failed: {:.3e}", e.name, e.max_rel_err);
        }
    }

    #[test]
    fn composites_pass() {
        for e in composite_gradient_suite(23).unwrap() {
            assert!(e.passed(), "{} failed: {:.3e}", e.name, e.max_rel_err);
        }
    }
}
