//! Hard z-buffer instance-ID rendering.
//!
//! Used to produce ground-truth masks for synthetic data and to separate
//! per-object silhouettes. Depth is perspective-correct: 1/z is interpolated
//! linearly in screen space.

use super::{BinaryMask, RasterConfig};
use crate::camera::{Camera, Z_NEAR};
use crate::error::Result;
use crate::scene::Mesh;

/// Per-pixel object index, `None` for background.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InstanceIdMap {
    pub width: usize,
    pub height: usize,
    pub ids: Vec<Option<u32>>,
}

impl InstanceIdMap {
    pub fn background(width: usize, height: usize) -> Self {
        InstanceIdMap {
            width,
            height,
            ids: vec![None; width * height],
        }
    }

    /// Binary mask of the pixels owned by one object.
    pub fn mask_of(&self, id: u32) -> BinaryMask {
        BinaryMask {
            width: self.width,
            height: self.height,
            data: self.ids.iter().map(|&v| v == Some(id)).collect(),
        }
    }

    pub fn pixel_count(&self, id: u32) -> usize {
        self.ids.iter().filter(|&&v| v == Some(id)).count()
    }
}

fn cross2(a: [f64; 2], b: [f64; 2]) -> f64 {
    a[0] * b[1] - a[1] * b[0]
}

/// Z-buffer pass over world meshes; each pixel is labeled with the object
/// owning the nearest covering face.
pub fn rasterize_instance_ids(
    meshes: &[Mesh],
    camera: &Camera,
    config: &RasterConfig,
) -> Result<InstanceIdMap> {
    config.validate()?;
    let (w, h) = (config.width, config.height);
    let mut ids = vec![None; w * h];
    let mut depth = vec![f64::INFINITY; w * h];

    for (obj_idx, mesh) in meshes.iter().enumerate() {
        // project all vertices once
        let projected: Vec<Option<([f64; 2], f64)>> = mesh
            .vertices
            .iter()
            .map(|&v| camera.project_point(v))
            .collect();
        for face in &mesh.faces {
            let (Some((pa, za)), Some((pb, zb)), Some((pc, zc))) = (
                projected[face[0]],
                projected[face[1]],
                projected[face[2]],
            ) else {
                continue; // face crosses the near plane; skipped at desk scale
            };
            let area = cross2([pb[0] - pa[0], pb[1] - pa[1]], [pc[0] - pa[0], pc[1] - pa[1]]);
            if area.abs() < 1e-16 {
                continue;
            }
            let min_u = pa[0].min(pb[0]).min(pc[0]);
            let max_u = pa[0].max(pb[0]).max(pc[0]);
            let min_v = pa[1].min(pb[1]).min(pc[1]);
            let max_v = pa[1].max(pb[1]).max(pc[1]);
            let col_lo = ((min_u * w as f64 - 0.5).floor().max(0.0)) as usize;
            let col_hi = ((max_u * w as f64 - 0.5).ceil().min(w as f64 - 1.0)) as isize;
            let row_lo = ((min_v * h as f64 - 0.5).floor().max(0.0)) as usize;
            let row_hi = ((max_v * h as f64 - 0.5).ceil().min(h as f64 - 1.0)) as isize;
            if col_hi < col_lo as isize || row_hi < row_lo as isize {
                continue;
            }
            let inv = [1.0 / za, 1.0 / zb, 1.0 / zc];
            for row in row_lo..=(row_hi as usize) {
                for col in col_lo..=(col_hi as usize) {
                    let q = config.pixel_center(row, col);
                    // screen barycentrics
                    let w0 = cross2([pc[0] - pb[0], pc[1] - pb[1]], [q[0] - pb[0], q[1] - pb[1]]);
                    let w1 = cross2([pa[0] - pc[0], pa[1] - pc[1]], [q[0] - pc[0], q[1] - pc[1]]);
                    let w2 = cross2([pb[0] - pa[0], pb[1] - pa[1]], [q[0] - pa[0], q[1] - pa[1]]);
                    let covered = if area > 0.0 {
                        w0 >= 0.0 && w1 >= 0.0 && w2 >= 0.0
                    } else {
                        w0 <= 0.0 && w1 <= 0.0 && w2 <= 0.0
                    };
                    if !covered {
                        continue;
                    }
                    let (l0, l1, l2) = (w0 / area, w1 / area, w2 / area);
                    let z_inv = l0 * inv[0] + l1 * inv[1] + l2 * inv[2];
                    if z_inv <= 0.0 {
                        continue;
                    }
                    let z = 1.0 / z_inv;
                    if z <= Z_NEAR {
                        continue;
                    }
                    let px = row * w + col;
                    if z < depth[px] {
                        depth[px] = z;
                        ids[px] = Some(obj_idx as u32);
                    }
                }
            }
        }
    }
    Ok(InstanceIdMap {
        width: w,
        height: h,
        ids,
    })
}
