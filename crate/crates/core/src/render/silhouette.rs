//! Soft silhouette rasterization with analytic vertex gradients.
//!
//! Per pixel q, occupancy is
//!     1 - prod_k (1 - w(delta_k(q)))
//! over the K nearest covering or near faces, where delta is the signed
//! squared distance between q and face k's screen triangle (positive
//! inside) and w is a windowed sigmoid: sigmoid(delta / blend_sigma)
//! shifted and rescaled so it reaches exactly zero at the blur-radius
//! cutoff. Faces whose outside distance exceeds the blur radius are
//! excluded; the window makes that exclusion continuous, which is what
//! keeps finite-difference checks of the vertex gradients meaningful.
//! The gradient routes through the closest edge of each contributing face.

use std::rc::Rc;

use super::RasterConfig;
use crate::autodiff::{CustomVjp, Tape, TapeView, TensorId};
use crate::error::{Error, Result};

const DEGENERATE_AREA: f64 = 1e-16;

/// One face contributing to one pixel, cached for the backward pass.
#[derive(Debug, Clone, Copy)]
struct Contribution {
    pixel: u32,
    face: u32,
    /// Windowed sigmoid of delta / sigma.
    sig: f64,
    /// d sig / d delta at the forward point.
    dsig: f64,
    /// Closest edge of the triangle (0: ab, 1: bc, 2: ca).
    edge: u8,
    /// Clamped segment parameter of the closest point on that edge.
    t: f64,
    inside: bool,
}

#[derive(Debug)]
struct SoftSilhouetteVjp {
    faces: Rc<Vec<[usize; 3]>>,
    config: RasterConfig,
    contributions: Vec<Contribution>,
    /// Offsets into `contributions` per pixel group (sorted by pixel).
    groups: Vec<(u32, u32)>, // (start, len) indexed implicitly by order
}

pub struct SilhouetteOutput {
    pub map: TensorId,
    pub degenerate_faces: usize,
}

/// Squared distance from q to segment [p1, p2] and the clamped parameter.
fn segment_distance_sq(q: [f64; 2], p1: [f64; 2], p2: [f64; 2]) -> (f64, f64) {
    let e = [p2[0] - p1[0], p2[1] - p1[1]];
    let w = [q[0] - p1[0], q[1] - p1[1]];
    let ee = e[0] * e[0] + e[1] * e[1];
    let t = if ee > 0.0 {
        ((w[0] * e[0] + w[1] * e[1]) / ee).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let h = [p1[0] + t * e[0], p1[1] + t * e[1]];
    let d = [q[0] - h[0], q[1] - h[1]];
    (d[0] * d[0] + d[1] * d[1], t)
}

fn cross2(a: [f64; 2], b: [f64; 2]) -> f64 {
    a[0] * b[1] - a[1] * b[0]
}

/// Signed squared distance to the triangle (positive inside) plus the
/// closest-edge bookkeeping needed for gradients.
fn signed_sq_distance(q: [f64; 2], tri: [[f64; 2]; 3]) -> (f64, u8, f64, bool) {
    let [a, b, c] = tri;
    let e0 = cross2([b[0] - a[0], b[1] - a[1]], [q[0] - a[0], q[1] - a[1]]);
    let e1 = cross2([c[0] - b[0], c[1] - b[1]], [q[0] - b[0], q[1] - b[1]]);
    let e2 = cross2([a[0] - c[0], a[1] - c[1]], [q[0] - c[0], q[1] - c[1]]);
    let inside = (e0 >= 0.0 && e1 >= 0.0 && e2 >= 0.0) || (e0 <= 0.0 && e1 <= 0.0 && e2 <= 0.0);

    let mut best = f64::INFINITY;
    let mut best_edge = 0u8;
    let mut best_t = 0.0;
    for (edge, (p1, p2)) in [(a, b), (b, c), (c, a)].into_iter().enumerate() {
        let (d2, t) = segment_distance_sq(q, p1, p2);
        if d2 < best {
            best = d2;
            best_edge = edge as u8;
            best_t = t;
        }
    }
    let delta = if inside { best } else { -best };
    (delta, best_edge, best_t, inside)
}

/// Windowed sigmoid and its derivative in delta.
///
/// Equal to sigmoid(delta / sigma) except in the outer half of the blur
/// band, where a smoothstep ramp takes both the value and the derivative to
/// exactly zero at the exclusion cutoff. The C1 rolloff is what keeps the
/// hard blur-radius exclusion from poisoning finite-difference checks.
fn windowed_sigmoid(delta: f64, sigma: f64, blur_radius: f64) -> (f64, f64) {
    if delta <= -blur_radius {
        return (0.0, 0.0);
    }
    let s = crate::autodiff::special::sigmoid(delta / sigma);
    let ds = s * (1.0 - s) / sigma;
    let ramp_hi = -blur_radius / 2.0;
    if delta >= ramp_hi {
        return (s, ds);
    }
    let span = blur_radius / 2.0;
    let u = (delta + blur_radius) / span;
    let h = u * u * (3.0 - 2.0 * u);
    let dh = 6.0 * u * (1.0 - u) / span;
    (s * h, ds * h + s * dh)
}

/// Occupancy from the cached sigmoids: 1 - prod(1 - s).
fn blend(sigs: &[f64]) -> f64 {
    let mut prod = 1.0;
    for &s in sigs {
        prod *= 1.0 - s;
    }
    1.0 - prod
}

/// Rasterize one mesh's screen triangles into a soft occupancy map on tape.
///
/// `points2d` is a [V, 2] tensor of normalized screen coordinates (as from
/// projection); `valid` marks vertices in front of the near plane. Faces
/// touching invalid vertices are skipped, zero-area screen triangles are
/// skipped and counted.
pub fn rasterize_silhouette_on_tape(
    tape: &mut Tape,
    points2d: TensorId,
    valid: &[bool],
    faces: &Rc<Vec<[usize; 3]>>,
    config: &RasterConfig,
) -> Result<SilhouetteOutput> {
    config.validate()?;
    let pts = tape.values(points2d);
    let vcount = valid.len();
    if pts.len() != vcount * 2 {
        return Err(Error::ShapeMismatch {
            op: "rasterize_silhouette",
            lhs: tape.shape(points2d).to_vec(),
            rhs: vec![vcount, 2],
        });
    }
    let (w, h) = (config.width, config.height);
    let reach = config.blur_radius.sqrt();
    let mut degenerate = 0usize;

    // candidate (pixel, face) pairs with their blend data
    let mut raw: Vec<(u32, f64, Contribution)> = Vec::new();
    for (fidx, face) in faces.iter().enumerate() {
        if face.iter().any(|&v| !valid[v]) {
            continue;
        }
        let tri = [
            [pts[face[0] * 2], pts[face[0] * 2 + 1]],
            [pts[face[1] * 2], pts[face[1] * 2 + 1]],
            [pts[face[2] * 2], pts[face[2] * 2 + 1]],
        ];
        let area = cross2(
            [tri[1][0] - tri[0][0], tri[1][1] - tri[0][1]],
            [tri[2][0] - tri[0][0], tri[2][1] - tri[0][1]],
        );
        if area.abs() < DEGENERATE_AREA {
            degenerate += 1;
            continue;
        }
        // pixel rectangle covered by the blurred triangle
        let min_u = tri.iter().map(|p| p[0]).fold(f64::INFINITY, f64::min) - reach;
        let max_u = tri.iter().map(|p| p[0]).fold(f64::NEG_INFINITY, f64::max) + reach;
        let min_v = tri.iter().map(|p| p[1]).fold(f64::INFINITY, f64::min) - reach;
        let max_v = tri.iter().map(|p| p[1]).fold(f64::NEG_INFINITY, f64::max) + reach;
        let col_lo = ((min_u * w as f64 - 0.5).floor().max(0.0)) as usize;
        let col_hi = ((max_u * w as f64 + 0.5).ceil().min(w as f64 - 1.0)) as isize;
        let row_lo = ((min_v * h as f64 - 0.5).floor().max(0.0)) as usize;
        let row_hi = ((max_v * h as f64 + 0.5).ceil().min(h as f64 - 1.0)) as isize;
        if col_hi < col_lo as isize || row_hi < row_lo as isize {
            continue;
        }
        for row in row_lo..=(row_hi as usize) {
            for col in col_lo..=(col_hi as usize) {
                let q = config.pixel_center(row, col);
                let (delta, edge, t, inside) = signed_sq_distance(q, tri);
                if !inside && -delta > config.blur_radius {
                    continue;
                }
                let rank = if inside { 0.0 } else { -delta };
                let (sig, dsig) =
                    windowed_sigmoid(delta, config.blend_sigma, config.blur_radius);
                raw.push((
                    (row * w + col) as u32,
                    rank,
                    Contribution {
                        pixel: (row * w + col) as u32,
                        face: fidx as u32,
                        sig,
                        dsig,
                        edge,
                        t,
                        inside,
                    },
                ));
            }
        }
    }

    // nearest-K truncation per pixel, deterministic tie-break on face index
    raw.sort_unstable_by(|a, b| {
        (a.0, a.1, a.2.face)
            .partial_cmp(&(b.0, b.1, b.2.face))
            .expect("finite ranks")
    });
    let mut contributions: Vec<Contribution> = Vec::with_capacity(raw.len());
    let mut groups: Vec<(u32, u32)> = Vec::new();
    let mut values = vec![0.0; w * h];
    let mut i = 0;
    while i < raw.len() {
        let pixel = raw[i].0;
        let mut j = i;
        while j < raw.len() && raw[j].0 == pixel {
            j += 1;
        }
        let kept = (j - i).min(config.faces_per_pixel);
        let start = contributions.len() as u32;
        let sigs: Vec<f64> = raw[i..i + kept].iter().map(|r| r.2.sig).collect();
        values[pixel as usize] = blend(&sigs);
        contributions.extend(raw[i..i + kept].iter().map(|r| r.2));
        groups.push((start, kept as u32));
        i = j;
    }

    let vjp = SoftSilhouetteVjp {
        faces: Rc::clone(faces),
        config: *config,
        contributions,
        groups,
    };
    let map = tape.custom(&[points2d], vec![h, w], values, Rc::new(vjp));
    Ok(SilhouetteOutput {
        map,
        degenerate_faces: degenerate,
    })
}

impl CustomVjp for SoftSilhouetteVjp {
    fn backward(
        &self,
        inputs: &[TapeView<'_>],
        _output: &[f64],
        out_grad: &[f64],
    ) -> Vec<Vec<f64>> {
        let pts = inputs[0].values;
        let mut grad = vec![0.0; pts.len()];
        let w = self.config.width;

        for &(start, len) in &self.groups {
            let group = &self.contributions[start as usize..(start + len) as usize];
            if group.is_empty() {
                continue;
            }
            let pixel = group[0].pixel as usize;
            let g_out = out_grad[pixel];
            if g_out == 0.0 {
                continue;
            }
            // prefix/suffix products of (1 - s) to get exclusion products
            let n = group.len();
            let mut prefix = vec![1.0; n + 1];
            for (k, c) in group.iter().enumerate() {
                prefix[k + 1] = prefix[k] * (1.0 - c.sig);
            }
            let mut suffix = vec![1.0; n + 1];
            for k in (0..n).rev() {
                suffix[k] = suffix[k + 1] * (1.0 - group[k].sig);
            }
            let row = pixel / w;
            let col = pixel % w;
            let q = self.config.pixel_center(row, col);

            for (k, c) in group.iter().enumerate() {
                // dO/ds_k = prod_{j != k} (1 - s_j)
                let excl = prefix[k] * suffix[k + 1];
                let d_delta = g_out * excl * c.dsig;
                if d_delta == 0.0 {
                    continue;
                }
                let face = self.faces[c.face as usize];
                let (i1, i2) = match c.edge {
                    0 => (face[0], face[1]),
                    1 => (face[1], face[2]),
                    _ => (face[2], face[0]),
                };
                let p1 = [pts[i1 * 2], pts[i1 * 2 + 1]];
                let p2 = [pts[i2 * 2], pts[i2 * 2 + 1]];
                let t = c.t;
                let h = [p1[0] + t * (p2[0] - p1[0]), p1[1] + t * (p2[1] - p1[1])];
                let diff = [q[0] - h[0], q[1] - h[1]];
                let sign = if c.inside { 1.0 } else { -1.0 };
                // d(dist^2)/dp1 = -2 (q - h)(1 - t), d/dp2 = -2 (q - h) t
                // (envelope: t is optimal or clamped, so treated as constant)
                let scale = sign * d_delta * -2.0;
                grad[i1 * 2] += scale * diff[0] * (1.0 - t);
                grad[i1 * 2 + 1] += scale * diff[1] * (1.0 - t);
                grad[i2 * 2] += scale * diff[0] * t;
                grad[i2 * 2 + 1] += scale * diff[1] * t;
            }
        }
        vec![grad]
    }
}

/// Non-tape convenience: silhouette values for fixed screen points.
pub fn rasterize_silhouette_values(
    points2d: &[[f64; 2]],
    valid: &[bool],
    faces: &Rc<Vec<[usize; 3]>>,
    config: &RasterConfig,
) -> Result<Vec<f64>> {
    let mut tape = Tape::new();
    let flat: Vec<f64> = points2d.iter().flatten().copied().collect();
    let id = tape.constant(vec![points2d.len(), 2], flat);
    let out = rasterize_silhouette_on_tape(&mut tape, id, valid, faces, config)?;
    Ok(tape.values(out.map).to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::gradient_check;
    use rand::Rng;

    fn big_triangle() -> (Vec<[f64; 2]>, Rc<Vec<[usize; 3]>>) {
        (
            vec![[0.1, 0.1], [0.9, 0.15], [0.5, 0.9]],
            Rc::new(vec![[0, 1, 2]]),
        )
    }

    fn cfg() -> RasterConfig {
        RasterConfig::desk(64, 64)
    }

    #[test]
    fn deep_inside_pixel_saturates() {
        let (pts, faces) = big_triangle();
        let map = rasterize_silhouette_values(&pts, &[true; 3], &faces, &cfg()).unwrap();
        // centroid pixel
        let cx = ((0.1 + 0.9 + 0.5) / 3.0 * 64.0) as usize;
        let cy = ((0.1 + 0.15 + 0.9) / 3.0 * 64.0) as usize;
        assert!(map[cy * 64 + cx] > 0.99, "occ {}", map[cy * 64 + cx]);
    }

    #[test]
    fn far_outside_pixel_is_empty() {
        let (pts, faces) = big_triangle();
        let map = rasterize_silhouette_values(&pts, &[true; 3], &faces, &cfg()).unwrap();
        assert!(map[0] < 0.01, "corner occ {}", map[0]);
        assert_eq!(map[0], 0.0); // outside the blur radius entirely
    }

    #[test]
    fn occupancy_stays_in_unit_interval() {
        let mut rng = crate::rng::derive(31, "test/sil-bounds", &[]);
        for _ in 0..20 {
            let pts: Vec<[f64; 2]> = (0..6)
                .map(|_| [rng.random_range(-0.2..1.2), rng.random_range(-0.2..1.2)])
                .collect();
            let faces = Rc::new(vec![[0, 1, 2], [3, 4, 5], [0, 2, 4]]);
            let map =
                rasterize_silhouette_values(&pts, &[true; 6], &faces, &cfg()).unwrap();
            for &v in &map {
                assert!((0.0..=1.0).contains(&v));
            }
        }
    }

    #[test]
    fn degenerate_faces_are_counted_and_skipped() {
        let pts = vec![[0.2, 0.2], [0.8, 0.2], [0.5, 0.8], [0.5, 0.5]];
        let faces = Rc::new(vec![[0, 1, 2], [3, 3, 3]]);
        let mut tape = Tape::new();
        let flat: Vec<f64> = pts.iter().flatten().copied().collect();
        let id = tape.constant(vec![4, 2], flat);
        let out = rasterize_silhouette_on_tape(&mut tape, id, &[true; 4], &faces, &cfg()).unwrap();
        assert_eq!(out.degenerate_faces, 1);
    }

    #[test]
    fn faces_with_invalid_vertices_skipped() {
        let (pts, faces) = big_triangle();
        let map = rasterize_silhouette_values(&pts, &[true, true, false], &faces, &cfg()).unwrap();
        assert!(map.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn enlarging_a_frontal_triangle_never_decreases_occupancy() {
        let mut rng = crate::rng::derive(32, "test/sil-monotone", &[]);
        for case in 0..100 {
            let cx = rng.random_range(0.3..0.7);
            let cy = rng.random_range(0.3..0.7);
            let pts: Vec<[f64; 2]> = (0..3)
                .map(|_| {
                    [
                        cx + rng.random_range(-0.25..0.25),
                        cy + rng.random_range(-0.25..0.25),
                    ]
                })
                .collect();
            let centroid = [
                (pts[0][0] + pts[1][0] + pts[2][0]) / 3.0,
                (pts[0][1] + pts[1][1] + pts[2][1]) / 3.0,
            ];
            let grown: Vec<[f64; 2]> = pts
                .iter()
                .map(|p| {
                    [
                        centroid[0] + (p[0] - centroid[0]) * 1.1,
                        centroid[1] + (p[1] - centroid[1]) * 1.1,
                    ]
                })
                .collect();
            let faces = Rc::new(vec![[0, 1, 2]]);
            let before = rasterize_silhouette_values(&pts, &[true; 3], &faces, &cfg()).unwrap();
            let after = rasterize_silhouette_values(&grown, &[true; 3], &faces, &cfg()).unwrap();
            for (i, (b, a)) in before.iter().zip(&after).enumerate() {
                assert!(
                    a >= b || (b - a) < 1e-12,
                    "case {case} pixel {i}: {b} -> {a}"
                );
            }
        }
    }

    #[test]
    fn one_pixel_shift_translates_the_map() {
        let (pts, faces) = big_triangle();
        let base = rasterize_silhouette_values(&pts, &[true; 3], &faces, &cfg()).unwrap();
        let shifted_pts: Vec<[f64; 2]> = pts.iter().map(|p| [p[0] + 1.0 / 64.0, p[1]]).collect();
        let shifted = rasterize_silhouette_values(&shifted_pts, &[true; 3], &faces, &cfg()).unwrap();
        for row in 0..64 {
            for col in 0..63 {
                let a = base[row * 64 + col];
                let b = shifted[row * 64 + col + 1];
                assert!(
                    (a - b).abs() < 1e-6,
                    "row {row} col {col}: {a} vs {b}"
                );
            }
        }
    }

    #[test]
    fn vertex_gradient_matches_fd() {
        // summed occupancy wrt screen vertex coordinates, central differences
        let mut rng = crate::rng::derive(33, "test/sil-grad", &[]);
        let faces = Rc::new(vec![[0, 1, 2]]);
        let mut worst: f64 = 0.0;
        for _ in 0..10 {
            let pts = vec![
                rng.random_range(0.15..0.35),
                rng.random_range(0.15..0.35),
                rng.random_range(0.6..0.85),
                rng.random_range(0.15..0.4),
                rng.random_range(0.35..0.65),
                rng.random_range(0.6..0.85),
            ];
            let faces = Rc::clone(&faces);
            let err = gradient_check(
                move |t, pid| {
                    let out =
                        rasterize_silhouette_on_tape(t, pid, &[true; 3], &faces, &cfg())?;
                    Ok(t.sum_all(out.map))
                },
                &[3, 2],
                &pts,
                1e-5,
            )
            .unwrap();
            worst = worst.max(err);
        }
        assert!(worst < 1e-3, "rel err {worst}");
    }

    #[test]
    fn multi_face_mesh_gradient_matches_fd() {
        // small fan of faces sharing vertices exercises gradient accumulation
        let pts = vec![
            0.5, 0.5, // hub
            0.7, 0.45, 0.65, 0.7, 0.4, 0.72, 0.3, 0.5,
        ];
        let faces = Rc::new(vec![[0, 1, 2], [0, 2, 3], [0, 3, 4]]);
        let err = gradient_check(
            move |t, pid| {
                let out = rasterize_silhouette_on_tape(t, pid, &[true; 5], &faces, &cfg())?;
                Ok(t.sum_all(out.map))
            },
            &[5, 2],
            &pts,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-3, "rel err {err}");
    }
}
