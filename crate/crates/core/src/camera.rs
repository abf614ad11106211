//! Pinhole cameras, projection, normalized 2D boxes, and frustum geometry.
//!
//! Camera frame: x right, y down, z forward; points in front have z > 0.
//! Projected coordinates are normalized by image size, so every box lives in
//! [0,1]^2 regardless of resolution.

use std::path::Path;
use std::rc::Rc;

use serde::{Deserialize, Serialize};

use crate::autodiff::{CustomVjp, Tape, TensorId};
use crate::error::{Error, Result};

/// Near plane; vertices at or behind it are excluded from projection.
pub const Z_NEAR: f64 = 0.01;

/// Degenerate projected boxes are widened to this edge length.
pub const BOX_WIDEN_EPS: f64 = 1e-4;

/// Pinhole camera: intrinsics in pixels, world-to-camera extrinsics.
#[derive(Debug, Clone, PartialEq)]
pub struct Camera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    /// Row-major world-to-camera rotation.
    pub rotation: [[f64; 3]; 3],
    pub translation: [f64; 3],
}

impl Camera {
    pub fn new(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: usize,
        height: usize,
        rotation: [[f64; 3]; 3],
        translation: [f64; 3],
    ) -> Result<Self> {
        if fx <= 0.0 || fy <= 0.0 {
            return Err(Error::InvalidCamera(format!(
                "focal lengths must be positive, got fx={fx}, fy={fy}"
            )));
        }
        if width == 0 || height == 0 {
            return Err(Error::InvalidCamera("zero image size".into()));
        }
        // orthonormality within 1e-9, determinant +1
        for i in 0..3 {
            for j in 0..3 {
                let dot: f64 = (0..3).map(|k| rotation[i][k] * rotation[j][k]).sum();
                let expect = if i == j { 1.0 } else { 0.0 };
                if (dot - expect).abs() > 1e-9 {
                    return Err(Error::InvalidCamera(format!(
                        "rotation rows {i},{j} not orthonormal (dot {dot})"
                    )));
                }
            }
        }
        let det = det3(&rotation);
        if (det - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidCamera(format!("rotation determinant {det}")));
        }
        Ok(Camera {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
            rotation,
            translation,
        })
    }

    /// Camera placed at `eye` looking at `target`, world up `up`.
    pub fn look_at(
        fx: f64,
        fy: f64,
        width: usize,
        height: usize,
        eye: [f64; 3],
        target: [f64; 3],
        up: [f64; 3],
    ) -> Result<Self> {
        let forward = normalize(sub3(target, eye))
            .ok_or_else(|| Error::InvalidCamera("eye equals target".into()))?;
        let right = normalize(cross(forward, up))
            .ok_or_else(|| Error::InvalidCamera("up parallel to view direction".into()))?;
        let down = cross(forward, right);
        let rotation = [right, down, forward];
        let translation = [
            -dot3(right, eye),
            -dot3(down, eye),
            -dot3(forward, eye),
        ];
        Camera::new(
            fx,
            fy,
            width as f64 / 2.0,
            height as f64 / 2.0,
            width,
            height,
            rotation,
            translation,
        )
    }

    /// Camera center in world coordinates: -R^T t.
    pub fn center(&self) -> [f64; 3] {
        let r = &self.rotation;
        let t = self.translation;
        [
            -(r[0][0] * t[0] + r[1][0] * t[1] + r[2][0] * t[2]),
            -(r[0][1] * t[0] + r[1][1] * t[1] + r[2][1] * t[2]),
            -(r[0][2] * t[0] + r[1][2] * t[1] + r[2][2] * t[2]),
        ]
    }

    pub fn world_to_camera(&self, p: [f64; 3]) -> [f64; 3] {
        let r = &self.rotation;
        [
            r[0][0] * p[0] + r[0][1] * p[1] + r[0][2] * p[2] + self.translation[0],
            r[1][0] * p[0] + r[1][1] * p[1] + r[1][2] * p[2] + self.translation[1],
            r[2][0] * p[0] + r[2][1] * p[1] + r[2][2] * p[2] + self.translation[2],
        ]
    }

    /// Normalized image coordinates and camera depth; `None` behind the near
    /// plane.
    pub fn project_point(&self, p: [f64; 3]) -> Option<([f64; 2], f64)> {
        let cam = self.world_to_camera(p);
        if cam[2] <= Z_NEAR {
            return None;
        }
        Some((self.camera_to_image(cam), cam[2]))
    }

    /// Normalized image coordinates for a camera-frame point (z > 0).
    pub fn camera_to_image(&self, cam: [f64; 3]) -> [f64; 2] {
        [
            (self.fx * cam[0] / cam[2] + self.cx) / self.width as f64,
            (self.fy * cam[1] / cam[2] + self.cy) / self.height as f64,
        ]
    }

    /// World point for normalized image coordinates at camera depth z:
    /// world = R^T (cam - t).
    pub fn unproject(&self, uv: [f64; 2], z: f64) -> [f64; 3] {
        let cam = [
            (uv[0] * self.width as f64 - self.cx) * z / self.fx,
            (uv[1] * self.height as f64 - self.cy) * z / self.fy,
            z,
        ];
        let r = &self.rotation;
        let shifted = [
            cam[0] - self.translation[0],
            cam[1] - self.translation[1],
            cam[2] - self.translation[2],
        ];
        [
            r[0][0] * shifted[0] + r[1][0] * shifted[1] + r[2][0] * shifted[2],
            r[0][1] * shifted[0] + r[1][1] * shifted[1] + r[2][1] * shifted[2],
            r[0][2] * shifted[0] + r[1][2] * shifted[1] + r[2][2] * shifted[2],
        ]
    }

    /// True iff the point is in front of the near plane and projects inside
    /// the image.
    pub fn in_frustum(&self, p: [f64; 3]) -> bool {
        match self.project_point(p) {
            None => false,
            Some((uv, _)) => (0.0..=1.0).contains(&uv[0]) && (0.0..=1.0).contains(&uv[1]),
        }
    }
}

/// Axis-aligned box in normalized image coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Box2D {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl Box2D {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self> {
        let b = Box2D { x1, y1, x2, y2 };
        if !(0.0 <= x1 && x1 < x2 && x2 <= 1.0 && 0.0 <= y1 && y1 < y2 && y2 <= 1.0) {
            return Err(Error::InvalidArgument(format!("invalid 2D box {b:?}")));
        }
        Ok(b)
    }

    pub fn coords(&self) -> [f64; 4] {
        [self.x1, self.y1, self.x2, self.y2]
    }

    pub fn center(&self) -> [f64; 2] {
        [(self.x1 + self.x2) / 2.0, (self.y1 + self.y2) / 2.0]
    }

    pub fn area(&self) -> f64 {
        (self.x2 - self.x1) * (self.y2 - self.y1)
    }
}

/// Normalized box distance: half the summed coordinate differences, in
/// [0, 2]; 2 is the greatest distance two valid boxes can attain.
pub fn box_l1(a: &Box2D, b: &Box2D) -> f64 {
    let pa = a.coords();
    let pb = b.coords();
    pa.iter().zip(&pb).map(|(x, y)| (x - y).abs()).sum::<f64>() / 2.0
}

/// Axis-aligned bounds of the valid projections, clamped to the image and
/// widened when degenerate.
pub fn box_from_projection(points: &[Option<[f64; 2]>]) -> Result<Box2D> {
    let valid: Vec<[f64; 2]> = points.iter().flatten().copied().collect();
    if valid.is_empty() {
        return Err(Error::EmptyProjection);
    }
    let mut x1 = f64::INFINITY;
    let mut y1 = f64::INFINITY;
    let mut x2 = f64::NEG_INFINITY;
    let mut y2 = f64::NEG_INFINITY;
    for p in &valid {
        x1 = x1.min(p[0]);
        y1 = y1.min(p[1]);
        x2 = x2.max(p[0]);
        y2 = y2.max(p[1]);
    }
    let [x1, y1, x2, y2] = widen_and_clamp([x1, y1, x2, y2]).0;
    Box2D::new(x1, y1, x2, y2)
}

/// Clamp to [0,1] then widen degenerate edges; returns the adjusted
/// coordinates and which of them were clamped (dead for gradients).
fn widen_and_clamp(raw: [f64; 4]) -> ([f64; 4], [bool; 4]) {
    let mut c = raw;
    let mut clamped = [false; 4];
    for (i, v) in c.iter_mut().enumerate() {
        let cl = v.clamp(0.0, 1.0);
        if cl != *v {
            clamped[i] = true;
        }
        *v = cl;
    }
    // widen both axes that collapsed, shifting back inside the image
    for (lo, hi) in [(0usize, 2usize), (1usize, 3usize)] {
        if c[hi] - c[lo] < BOX_WIDEN_EPS {
            let mid = (c[hi] + c[lo]) / 2.0;
            let half = BOX_WIDEN_EPS / 2.0;
            let center = mid.clamp(half, 1.0 - half);
            c[lo] = center - half;
            c[hi] = center + half;
        }
    }
    (c, clamped)
}

// ---- differentiable paths ----------------------------------------------------

/// Projection of a vertex matrix [V, 3] through a fixed camera, on tape.
///
/// Returns normalized coordinates [V, 2], camera depths [V, 1], and the
/// validity mask (depth beyond the near plane). Invalid rows hold finite
/// garbage and must be masked by the consumer; they receive no gradient.
pub fn project_on_tape(
    tape: &mut Tape,
    world: TensorId,
    cam: &Camera,
) -> Result<(TensorId, TensorId, Vec<bool>)> {
    let r = &cam.rotation;
    // world [V,3] x R^T [3,3] laid out so columns are camera axes
    let rt = tape.constant(
        vec![3, 3],
        vec![
            r[0][0], r[1][0], r[2][0],
            r[0][1], r[1][1], r[2][1],
            r[0][2], r[1][2], r[2][2],
        ],
    );
    let t_row = tape.constant(vec![1, 3], cam.translation.to_vec());
    let rotated = tape.matmul(world, rt)?;
    let camera_pts = tape.row_add(rotated, t_row)?;
    let x = tape.slice_cols(camera_pts, 0, 1)?;
    let y = tape.slice_cols(camera_pts, 1, 1)?;
    let z = tape.slice_cols(camera_pts, 2, 1)?;
    let valid: Vec<bool> = tape.values(z).iter().map(|&d| d > Z_NEAR).collect();
    // z clamped at the near plane so invalid rows stay finite (zero gradient)
    let z_shift = tape.add_const(z, -Z_NEAR);
    let z_pos = tape.relu(z_shift);
    let z_safe = tape.add_const(z_pos, Z_NEAR);
    let xz = tape.div(x, z_safe)?;
    let yz = tape.div(y, z_safe)?;
    let u_scaled = tape.scale(xz, cam.fx / cam.width as f64);
    let u = tape.add_const(u_scaled, cam.cx / cam.width as f64);
    let v_scaled = tape.scale(yz, cam.fy / cam.height as f64);
    let v = tape.add_const(v_scaled, cam.cy / cam.height as f64);
    let uv = tape.concat_cols(&[u, v])?;
    Ok((uv, z, valid))
}

/// Min/max box over valid projected points with clamping and widening;
/// subgradient routes to the extremal coordinates, zero where clamped.
#[derive(Debug)]
struct BoxFromPoints {
    sources: [usize; 4], // rows supplying x1, y1, x2, y2
    clamped: [bool; 4],
}

impl CustomVjp for BoxFromPoints {
    fn backward(
        &self,
        inputs: &[crate::autodiff::TapeView<'_>],
        _output: &[f64],
        out_grad: &[f64],
    ) -> Vec<Vec<f64>> {
        let n = inputs[0].values.len();
        let mut grad = vec![0.0; n];
        for (slot, (&row, &clamped)) in self.sources.iter().zip(&self.clamped).enumerate() {
            if clamped {
                continue;
            }
            let coord = slot % 2; // x coords feed u, y coords feed v
            grad[row * 2 + coord] += out_grad[slot];
        }
        vec![grad]
    }
}

/// Differentiable box from projected points [V, 2]; errors when no point is
/// valid (the frustum-loss path applies instead).
pub fn box_from_points_on_tape(
    tape: &mut Tape,
    uv: TensorId,
    valid: &[bool],
) -> Result<TensorId> {
    let values = tape.values(uv);
    let rows = valid.len();
    debug_assert_eq!(values.len(), rows * 2);
    let mut best: Option<([f64; 4], [usize; 4])> = None;
    for i in 0..rows {
        if !valid[i] {
            continue;
        }
        let u = values[i * 2];
        let v = values[i * 2 + 1];
        match &mut best {
            None => best = Some(([u, v, u, v], [i, i, i, i])),
            Some((coords, src)) => {
                if u < coords[0] {
                    coords[0] = u;
                    src[0] = i;
                }
                if v < coords[1] {
                    coords[1] = v;
                    src[1] = i;
                }
                if u > coords[2] {
                    coords[2] = u;
                    src[2] = i;
                }
                if v > coords[3] {
                    coords[3] = v;
                    src[3] = i;
                }
            }
        }
    }
    let (raw, sources) = best.ok_or(Error::EmptyProjection)?;
    let (coords, clamped) = widen_and_clamp(raw);
    Ok(tape.custom(
        &[uv],
        vec![1, 4],
        coords.to_vec(),
        Rc::new(BoxFromPoints { sources, clamped }),
    ))
}

/// Rays for the frustum loss: camera center to predicted center, and camera
/// center to the ground-truth box center unprojected at depth 1.
pub fn frustum_ray_pair(
    c_pred: [f64; 3],
    gt_box: &Box2D,
    cam: &Camera,
) -> ([f64; 3], [f64; 3]) {
    let center = cam.center();
    let target = cam.unproject(gt_box.center(), 1.0);
    (sub3(c_pred, center), sub3(target, center))
}

/// 1 - cosine between the predicted-center ray and the ground-truth ray,
/// differentiable in the predicted center [1, 3].
pub fn frustum_term_on_tape(
    tape: &mut Tape,
    c_pred: TensorId,
    gt_box: &Box2D,
    cam: &Camera,
) -> Result<TensorId> {
    let center = cam.center();
    let target = cam.unproject(gt_box.center(), 1.0);
    let cam_center = tape.constant(vec![1, 3], center.to_vec());
    let ray_gt = tape.constant(vec![1, 3], sub3(target, center).to_vec());
    let ray_pred = tape.sub(c_pred, cam_center)?;
    let cos = cosine_on_tape(tape, ray_pred, ray_gt)?;
    let neg = tape.neg(cos);
    Ok(tape.add_const(neg, 1.0))
}

/// cos(a, b) = <a, b> / (|a| |b|) for row vectors.
pub fn cosine_on_tape(tape: &mut Tape, a: TensorId, b: TensorId) -> Result<TensorId> {
    let prod = tape.mul(a, b)?;
    let dot = tape.sum_all(prod);
    let aa = tape.mul(a, a)?;
    let na2 = tape.sum_all(aa);
    let na = tape.sqrt(na2);
    let bb = tape.mul(b, b)?;
    let nb2 = tape.sum_all(bb);
    let nb = tape.sqrt(nb2);
    let denom = tape.mul(na, nb)?;
    tape.div(dot, denom)
}

// ---- camera file format -------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct CameraDoc {
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
    width: usize,
    height: usize,
    /// Row-major 3x3.
    #[serde(rename = "R")]
    r: [f64; 9],
    t: [f64; 3],
}

pub fn write_camera(path: &Path, cam: &Camera) -> Result<()> {
    let r = &cam.rotation;
    let doc = CameraDoc {
        fx: cam.fx,
        fy: cam.fy,
        cx: cam.cx,
        cy: cam.cy,
        width: cam.width,
        height: cam.height,
        r: [
            r[0][0], r[0][1], r[0][2], r[1][0], r[1][1], r[1][2], r[2][0], r[2][1], r[2][2],
        ],
        t: cam.translation,
    };
    let text = serde_json::to_string_pretty(&doc)
        .map_err(|e| Error::json(path.display().to_string(), e))?;
    std::fs::write(path, text).map_err(|e| Error::io(path.display().to_string(), e))
}

pub fn read_camera(path: &Path) -> Result<Camera> {
    let text =
        std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let doc: CameraDoc =
        serde_json::from_str(&text).map_err(|e| Error::json(path.display().to_string(), e))?;
    let r = doc.r;
    Camera::new(
        doc.fx,
        doc.fy,
        doc.cx,
        doc.cy,
        doc.width,
        doc.height,
        [[r[0], r[1], r[2]], [r[3], r[4], r[5]], [r[6], r[7], r[8]]],
        doc.t,
    )
}

// ---- small vector helpers -------------------------------------------------------

fn sub3(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn dot3(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn normalize(v: [f64; 3]) -> Option<[f64; 3]> {
    let n = dot3(v, v).sqrt();
    if n < 1e-12 {
        return None;
    }
    Some([v[0] / n, v[1] / n, v[2] / n])
}

fn det3(r: &[[f64; 3]; 3]) -> f64 {
    r[0][0] * (r[1][1] * r[2][2] - r[1][2] * r[2][1])
        - r[0][1] * (r[1][0] * r[2][2] - r[1][2] * r[2][0])
        + r[0][2] * (r[1][0] * r[2][1] - r[1][1] * r[2][0])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::gradient_check;
    use rand::Rng;

    fn example_camera() -> Camera {
        Camera::new(
            100.0,
            100.0,
            32.0,
            32.0,
            64,
            64,
            [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            [0.0, 0.0, 0.0],
        )
        .unwrap()
    }

    #[test]
    fn principal_point_projects_to_image_center() {
        let cam = example_camera();
        let (uv, z) = cam.project_point([0.0, 0.0, 2.0]).unwrap();
        assert_eq!(uv, [0.5, 0.5]);
        assert_eq!(z, 2.0);
    }

    #[test]
    fn doubling_depth_halves_the_offset() {
        let cam = example_camera();
        let (near, _) = cam.project_point([0.4, 0.2, 2.0]).unwrap();
        let (far, _) = cam.project_point([0.4, 0.2, 4.0]).unwrap();
        assert!(((near[0] - 0.5) - 2.0 * (far[0] - 0.5)).abs() < 1e-12);
        assert!(((near[1] - 0.5) - 2.0 * (far[1] - 0.5)).abs() < 1e-12);
    }

    #[test]
    fn behind_camera_excluded() {
        let cam = example_camera();
        assert!(cam.project_point([0.0, 0.0, -1.0]).is_none());
        assert!(cam.project_point([0.0, 0.0, Z_NEAR]).is_none());
    }

    #[test]
    fn project_unproject_round_trip() {
        let cam = Camera::look_at(
            90.0,
            90.0,
            64,
            64,
            [3.0, 2.0, 4.0],
            [0.0, 0.5, 0.0],
            [0.0, 1.0, 0.0],
        )
        .unwrap();
        let mut rng = crate::rng::derive(3, "test/unproject", &[]);
        for _ in 0..50 {
            let p = [
                rng.random_range(-1.5..1.5),
                rng.random_range(0.0..2.0),
                rng.random_range(-1.5..1.5),
            ];
            let (uv, z) = cam.project_point(p).unwrap();
            let back = cam.unproject(uv, z);
            for (a, b) in p.iter().zip(&back) {
                assert!((a - b).abs() < 1e-9, "{p:?} vs {back:?}");
            }
        }
    }

    #[test]
    fn frustum_membership() {
        let cam = example_camera();
        assert!(cam.in_frustum([0.0, 0.0, 1.0]));
        assert!(!cam.in_frustum([0.0, 0.0, -1.0]));
        // ahead but projecting outside the image: u > 1
        assert!(!cam.in_frustum([1.0, 0.0, 1.0]));
    }

    #[test]
    fn in_frustum_agrees_with_single_point_box() {
        let cam = example_camera();
        let mut rng = crate::rng::derive(5, "test/frustum-box", &[]);
        for _ in 0..200 {
            let p = [
                rng.random_range(-2.0..2.0),
                rng.random_range(-2.0..2.0),
                rng.random_range(-0.5..3.0),
            ];
            let projected = cam.project_point(p).map(|(uv, _)| uv);
            let inside_box = projected
                .map(|uv| (0.0..=1.0).contains(&uv[0]) && (0.0..=1.0).contains(&uv[1]))
                .unwrap_or(false);
            assert_eq!(cam.in_frustum(p), inside_box);
        }
    }

    #[test]
    fn unit_cube_box_matches_hand_projection() {
        // cube of edge 1 centered on the optical axis at depth 4
        let cam = example_camera();
        let mut corners = Vec::new();
        for dx in [-0.5, 0.5] {
            for dy in [-0.5, 0.5] {
                for dz in [-0.5, 0.5] {
                    corners.push([dx, dy, 4.0 + dz]);
                }
            }
        }
        // hand projection: nearest face (z = 3.5) bounds the box
        let expect_lo = (100.0 * -0.5 / 3.5 + 32.0) / 64.0;
        let expect_hi = (100.0 * 0.5 / 3.5 + 32.0) / 64.0;
        let projected: Vec<Option<[f64; 2]>> = corners
            .iter()
            .map(|&p| cam.project_point(p).map(|(uv, _)| uv))
            .collect();
        let b = box_from_projection(&projected).unwrap();
        assert!((b.x1 - expect_lo).abs() < 1e-12);
        assert!((b.x2 - expect_hi).abs() < 1e-12);
        assert!((b.y1 - expect_lo).abs() < 1e-12);
        assert!((b.y2 - expect_hi).abs() < 1e-12);
    }

    #[test]
    fn single_point_box_widened() {
        let b = box_from_projection(&[Some([0.3, 0.7])]).unwrap();
        assert!((b.x2 - b.x1 - BOX_WIDEN_EPS).abs() < 1e-15);
        assert!((b.y2 - b.y1 - BOX_WIDEN_EPS).abs() < 1e-15);
        assert!(((b.x1 + b.x2) / 2.0 - 0.3).abs() < 1e-12);
        assert!(((b.y1 + b.y2) / 2.0 - 0.7).abs() < 1e-12);
    }

    #[test]
    fn out_of_image_points_clamped() {
        let b = box_from_projection(&[Some([-0.5, 0.2]), Some([1.4, 0.9])]).unwrap();
        assert_eq!(b.x1, 0.0);
        assert_eq!(b.x2, 1.0);
        assert!((b.y1 - 0.2).abs() < 1e-15);
        assert!((b.y2 - 0.9).abs() < 1e-15);
    }

    #[test]
    fn empty_projection_is_an_error() {
        assert!(matches!(
            box_from_projection(&[None, None]),
            Err(Error::EmptyProjection)
        ));
    }

    #[test]
    fn projection_gradient_matches_fd() {
        let cam = Camera::look_at(
            80.0,
            80.0,
            64,
            64,
            [2.5, 1.5, 2.5],
            [0.0, 0.4, 0.0],
            [0.0, 1.0, 0.0],
        )
        .unwrap();
        let mut rng = crate::rng::derive(9, "test/proj-grad", &[]);
        let world: Vec<f64> = (0..9).map(|_| rng.random_range(-0.8..0.8)).collect();
        let weights: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
        let err = gradient_check(
            |t, w| {
                let (uv, _z, _valid) = project_on_tape(t, w, &cam)?;
                let wid = t.constant(vec![3, 2], weights.clone());
                let prod = t.mul(uv, wid)?;
                Ok(t.sum_all(prod))
            },
            &[3, 3],
            &world,
            1e-6,
        )
        .unwrap();
        assert!(err < 1e-7, "rel err {err}");
    }

    #[test]
    fn box_gradient_routes_to_extremes() {
        let cam = example_camera();
        let mut rng = crate::rng::derive(10, "test/box-grad", &[]);
        let world: Vec<f64> = (0..12)
            .map(|i| match i % 3 {
                0 => rng.random_range(-0.5..0.5),
                1 => rng.random_range(-0.5..0.5),
                _ => rng.random_range(2.0..4.0),
            })
            .collect();
        let err = gradient_check(
            |t, w| {
                let (uv, _z, valid) = project_on_tape(t, w, &cam)?;
                let b = box_from_points_on_tape(t, uv, &valid)?;
                let wid = t.constant(vec![1, 4], vec![0.3, -0.7, 1.1, 0.9]);
                let prod = t.mul(b, wid)?;
                Ok(t.sum_all(prod))
            },
            &[4, 3],
            &world,
            1e-6,
        )
        .unwrap();
        assert!(err < 1e-6, "rel err {err}");
    }

    #[test]
    fn frustum_rays_aligned_and_antipodal() {
        let cam = example_camera();
        let gt = Box2D::new(0.4, 0.4, 0.6, 0.6).unwrap();
        // point along the ground-truth ray: cosine 1, term 0
        let target = cam.unproject(gt.center(), 3.0);
        let mut tape = Tape::new();
        let pred = tape.constant(vec![1, 3], target.to_vec());
        let term = frustum_term_on_tape(&mut tape, pred, &gt, &cam).unwrap();
        assert!(tape.scalar(term).abs() < 1e-9);
        // antipodal point: cosine -1, term 2
        let center = cam.center();
        let anti = [
            2.0 * center[0] - target[0],
            2.0 * center[1] - target[1],
            2.0 * center[2] - target[2],
        ];
        let mut tape = Tape::new();
        let pred = tape.constant(vec![1, 3], anti.to_vec());
        let term = frustum_term_on_tape(&mut tape, pred, &gt, &cam).unwrap();
        assert!((tape.scalar(term) - 2.0).abs() < 1e-9);
    }

    #[test]
    fn frustum_cosine_matches_independent_construction() {
        // second implementation of the two-ray construction, written directly
        let cam = Camera::look_at(
            70.0,
            70.0,
            64,
            64,
            [1.0, 2.0, 3.0],
            [0.2, 0.3, 0.1],
            [0.0, 1.0, 0.0],
        )
        .unwrap();
        let gt = Box2D::new(0.2, 0.3, 0.7, 0.8).unwrap();
        let mut rng = crate::rng::derive(17, "test/frustum-oracle", &[]);
        for _ in 0..50 {
            let pred = [
                rng.random_range(-3.0..3.0),
                rng.random_range(0.0..3.0),
                rng.random_range(-3.0..3.0),
            ];
            let mut tape = Tape::new();
            let pid = tape.constant(vec![1, 3], pred.to_vec());
            let term = frustum_term_on_tape(&mut tape, pid, &gt, &cam).unwrap();

            // oracle: unproject the pixel center by intrinsics alone, rotate
            // the camera-frame ray to world, compare with pred - center
            let ucenter = (gt.x1 + gt.x2) / 2.0 * 64.0;
            let vcenter = (gt.y1 + gt.y2) / 2.0 * 64.0;
            let ray_cam = [
                (ucenter - cam.cx) / cam.fx,
                (vcenter - cam.cy) / cam.fy,
                1.0,
            ];
            let r = &cam.rotation;
            let ray_gt_world = [
                r[0][0] * ray_cam[0] + r[1][0] * ray_cam[1] + r[2][0] * ray_cam[2],
                r[0][1] * ray_cam[0] + r[1][1] * ray_cam[1] + r[2][1] * ray_cam[2],
                r[0][2] * ray_cam[0] + r[1][2] * ray_cam[1] + r[2][2] * ray_cam[2],
            ];
            let c = cam.center();
            let ray_pred = [pred[0] - c[0], pred[1] - c[1], pred[2] - c[2]];
            let dot = dot3(ray_pred, ray_gt_world);
            let cos = dot / (dot3(ray_pred, ray_pred).sqrt() * dot3(ray_gt_world, ray_gt_world).sqrt());
            assert!(
                (tape.scalar(term) - (1.0 - cos)).abs() < 1e-9,
                "term {} vs oracle {}",
                tape.scalar(term),
                1.0 - cos
            );
        }
    }

    #[test]
    fn camera_file_round_trip() {
        let cam = Camera::look_at(
            55.4,
            55.4,
            64,
            64,
            [4.0, 2.2, 0.0],
            [0.0, 0.5, 0.0],
            [0.0, 1.0, 0.0],
        )
        .unwrap();
        let dir = std::env::temp_dir().join("scenegen-camera-io");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("cam.json");
        write_camera(&path, &cam).unwrap();
        let back = read_camera(&path).unwrap();
        assert_eq!(cam, back);
    }

    #[test]
    fn box_l1_range() {
        let a = Box2D::new(0.0, 0.0, 1e-4, 1e-4).unwrap();
        let b = Box2D::new(1.0 - 1e-4, 1.0 - 1e-4, 1.0, 1.0).unwrap();
        let d = box_l1(&a, &b);
        assert!(d <= 2.0 && d > 2.0 - 1e-3, "distance {d}");
        assert_eq!(box_l1(&a, &a), 0.0);
    }
}
