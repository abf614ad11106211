//! Evaluation metrics: category KL divergence, axis-aligned 3D box IoU, and
//! symmetric chamfer distance, with Hungarian pairing of predicted and
//! ground-truth objects.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::matching::hungarian;
use crate::rng::derive;
use crate::scene::{Mesh, ObjectInstance, Scene};

const KL_EPS: f64 = 1e-8;
/// Added to the pairing cost when labels disagree; dominates center offsets
/// at room scale.
const CLASS_MISMATCH_COST: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub category_kl: f64,
    pub mean_box3d_iou: f64,
    pub mean_chamfer: f64,
}

/// KL(p || q) between two category histograms (counts), smoothed by 1e-8.
pub fn category_kl(pred_counts: &[f64], gt_counts: &[f64]) -> f64 {
    debug_assert_eq!(pred_counts.len(), gt_counts.len());
    let k = pred_counts.len() as f64;
    let psum: f64 = pred_counts.iter().sum::<f64>() + k * KL_EPS;
    let qsum: f64 = gt_counts.iter().sum::<f64>() + k * KL_EPS;
    pred_counts
        .iter()
        .zip(gt_counts)
        .map(|(&pc, &qc)| {
            let p = (pc + KL_EPS) / psum;
            let q = (qc + KL_EPS) / qsum;
            p * (p / q).ln()
        })
        .sum()
}

/// Histogram of object labels over non-void categories (index 1..N_c).
pub fn label_histogram(scenes: &[Scene], num_classes: usize) -> Vec<f64> {
    let mut counts = vec![0.0; num_classes.saturating_sub(1)];
    for scene in scenes {
        for obj in &scene.objects {
            if obj.label >= 1 && obj.label < num_classes {
                counts[obj.label - 1] += 1.0;
            }
        }
    }
    counts
}

/// Axis-aligned 3D box IoU from (center, size) pairs.
pub fn box3d_iou(center_a: [f64; 3], size_a: [f64; 3], center_b: [f64; 3], size_b: [f64; 3]) -> f64 {
    let mut inter = 1.0;
    let mut vol_a = 1.0;
    let mut vol_b = 1.0;
    for axis in 0..3 {
        let a_lo = center_a[axis] - size_a[axis] / 2.0;
        let a_hi = center_a[axis] + size_a[axis] / 2.0;
        let b_lo = center_b[axis] - size_b[axis] / 2.0;
        let b_hi = center_b[axis] + size_b[axis] / 2.0;
        inter *= (a_hi.min(b_hi) - a_lo.max(b_lo)).max(0.0);
        vol_a *= a_hi - a_lo;
        vol_b *= b_hi - b_lo;
    }
    let union = vol_a + vol_b - inter;
    if union <= 0.0 {
        return 0.0;
    }
    inter / union
}

/// Symmetric chamfer: mean of the two directional mean nearest-neighbor L2
/// distances.
pub fn chamfer_distance(a: &[[f64; 3]], b: &[[f64; 3]]) -> f64 {
    if a.is_empty() || b.is_empty() {
        return f64::INFINITY;
    }
    let directional = |from: &[[f64; 3]], to: &[[f64; 3]]| {
        let mut total = 0.0;
        for p in from {
            let mut best = f64::INFINITY;
            for q in to {
                let d2 = (p[0] - q[0]) * (p[0] - q[0])
                    + (p[1] - q[1]) * (p[1] - q[1])
                    + (p[2] - q[2]) * (p[2] - q[2]);
                if d2 < best {
                    best = d2;
                }
            }
            total += best.sqrt();
        }
        total / from.len() as f64
    };
    (directional(a, b) + directional(b, a)) / 2.0
}

/// Area-weighted uniform surface samples, deterministic in the seed.
pub fn sample_surface(mesh: &Mesh, count: usize, seed: u64) -> Vec<[f64; 3]> {
    let mut areas = Vec::with_capacity(mesh.faces.len());
    let mut total = 0.0;
    for &[a, b, c] in &mesh.faces {
        let pa = mesh.vertices[a];
        let pb = mesh.vertices[b];
        let pc = mesh.vertices[c];
        let u = [pb[0] - pa[0], pb[1] - pa[1], pb[2] - pa[2]];
        let v = [pc[0] - pa[0], pc[1] - pa[1], pc[2] - pa[2]];
        let n = [
            u[1] * v[2] - u[2] * v[1],
            u[2] * v[0] - u[0] * v[2],
            u[0] * v[1] - u[1] * v[0],
        ];
        let area = 0.5 * (n[0] * n[0] + n[1] * n[1] + n[2] * n[2]).sqrt();
        total += area;
        areas.push(total);
    }
    let mut rng = derive(seed, "metrics/surface-samples", &[]);
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let target: f64 = rand::Rng::random_range(&mut rng, 0.0..total);
        let face_idx = areas.partition_point(|&cum| cum < target).min(mesh.faces.len() - 1);
        let [a, b, c] = mesh.faces[face_idx];
        let (r1, r2): (f64, f64) = (
            rand::Rng::random_range(&mut rng, 0.0..1.0),
            rand::Rng::random_range(&mut rng, 0.0..1.0),
        );
        let sq = r1.sqrt();
        let (wa, wb, wc) = (1.0 - sq, sq * (1.0 - r2), sq * r2);
        let pa = mesh.vertices[a];
        let pb = mesh.vertices[b];
        let pc = mesh.vertices[c];
        out.push([
            wa * pa[0] + wb * pb[0] + wc * pc[0],
            wa * pa[1] + wb * pb[1] + wc * pc[1],
            wa * pa[2] + wb * pb[2] + wc * pc[2],
        ]);
    }
    out
}

/// Pair objects of one predicted scene to ground truth by center L1 plus a
/// class-mismatch penalty, then report mean box IoU and chamfer over pairs.
pub fn paired_scene_metrics(
    pred: &Scene,
    gt: &Scene,
    samples: usize,
    seed: u64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if pred.is_empty() || gt.is_empty() {
        return Ok((Vec::new(), Vec::new()));
    }
    let cost: Vec<Vec<f64>> = pred
        .objects
        .iter()
        .map(|p| {
            gt.objects
                .iter()
                .map(|g| {
                    let center_l1: f64 = p
                        .center
                        .iter()
                        .zip(&g.center)
                        .map(|(a, b)| (a - b).abs())
                        .sum();
                    let class_cost = if p.label == g.label {
                        0.0
                    } else {
                        CLASS_MISMATCH_COST
                    };
                    center_l1 + class_cost
                })
                .collect()
        })
        .collect();
    let assignment = hungarian(&cost)?;
    let mut ious = Vec::new();
    let mut chamfers = Vec::new();
    for (k, j) in assignment.matched() {
        let p: &ObjectInstance = &pred.objects[k];
        let g: &ObjectInstance = &gt.objects[j];
        ious.push(box3d_iou(p.center, p.size, g.center, g.size));
        let ps = sample_surface(&p.world_mesh(), samples, seed ^ (k as u64));
        let gs = sample_surface(&g.world_mesh(), samples, seed ^ 0x9e37 ^ (j as u64));
        chamfers.push(chamfer_distance(&ps, &gs));
    }
    Ok((ious, chamfers))
}
