//! Hypersphere latent space: fixed anchors, learnable weight simplices,
//! and geodesic interpolation.
//!
//! A latent vector is the normalized convex combination of M fixed unit
//! anchors. Weights are parameterized as the softmax of free logits, so the
//! simplex constraints hold by construction and optimization over logits is
//! unconstrained. Anchors are frozen after initialization.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::autodiff::{Tape, TensorId};
use crate::error::{Error, Result};
use crate::rng::derive;

const DEGENERATE_NORM: f64 = 1e-10;

/// M fixed unit vectors in R^D, uniform on the sphere.
#[derive(Debug, Clone)]
pub struct AnchorSet {
    anchors: Vec<f64>, // row-major M x D
    m: usize,
    d: usize,
}

/// Learnable simplex logits; weights are their softmax.
#[derive(Debug, Clone)]
pub struct WeightSimplex {
    pub logits: Vec<f64>,
}

/// Unit-norm point on the latent sphere.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentVector {
    z: Vec<f64>,
}

impl AnchorSet {
    /// Sample anchors by normalizing standard Gaussian draws; rotation
    /// invariance of the Gaussian makes them uniform on the sphere.
    pub fn init(m: usize, d: usize, seed: u64) -> Result<Self> {
        if m < 2 || d < 2 {
            return Err(Error::InvalidArgument(format!(
                "anchor set needs M >= 2 and D >= 2, got M={m}, D={d}"
            )));
        }
        let mut rng = derive(seed, "latent/anchors", &[]);
        let mut anchors = Vec::with_capacity(m * d);
        for _ in 0..m {
            let mut v: Vec<f64>;
            loop {
                v = (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
                let norm = l2(&v);
                if norm > 1e-6 {
                    break;
                }
            }
            normalize_to_exact_unit(&mut v);
            anchors.extend_from_slice(&v);
        }
        Ok(AnchorSet { anchors, m, d })
    }

    pub fn from_raw(anchors: Vec<f64>, m: usize, d: usize) -> Result<Self> {
        if anchors.len() != m * d {
            return Err(Error::ShapeMismatch {
                op: "anchor_set",
                lhs: vec![m, d],
                rhs: vec![anchors.len()],
            });
        }
        Ok(AnchorSet { anchors, m, d })
    }

    pub fn count(&self) -> usize {
        self.m
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn anchor(&self, i: usize) -> &[f64] {
        &self.anchors[i * self.d..(i + 1) * self.d]
    }

    pub fn raw(&self) -> &[f64] {
        &self.anchors
    }

    /// Anchors as a constant on a tape.
    pub fn constant_on(&self, tape: &mut Tape) -> TensorId {
        tape.constant(vec![self.m, self.d], self.anchors.clone())
    }
}

impl WeightSimplex {
    /// Zero logits: the uniform simplex.
    pub fn uniform(m: usize) -> Self {
        WeightSimplex { logits: vec![0.0; m] }
    }

    pub fn from_logits(logits: Vec<f64>) -> Self {
        WeightSimplex { logits }
    }

    /// Softmax of the logits: strictly positive, sums to one.
    pub fn weights(&self) -> Vec<f64> {
        softmax(&self.logits)
    }
}

impl LatentVector {
    /// Validates the unit-norm invariant at 1e-6 (inputs from files etc.).
    pub fn from_components(z: Vec<f64>) -> Result<Self> {
        let norm = l2(&z);
        if (norm - 1.0).abs() > 1e-6 {
            return Err(Error::InvalidArgument(format!(
                "latent vector norm {norm} is not 1"
            )));
        }
        Ok(LatentVector { z })
    }

    pub(crate) fn new_unchecked(z: Vec<f64>) -> Self {
        LatentVector { z }
    }

    pub fn components(&self) -> &[f64] {
        &self.z
    }

    pub fn dim(&self) -> usize {
        self.z.len()
    }

    pub fn dot(&self, other: &LatentVector) -> f64 {
        self.z.iter().zip(&other.z).map(|(a, b)| a * b).sum()
    }

    pub fn constant_on(&self, tape: &mut Tape) -> TensorId {
        tape.constant(vec![1, self.z.len()], self.z.clone())
    }
}

/// Normalized convex combination of anchors under explicit weights.
///
/// Weights must be a (closed) simplex point: nonnegative, summing to one.
/// One-hot weights reproduce the corresponding anchor exactly.
pub fn compose_latent(anchors: &AnchorSet, weights: &[f64]) -> Result<LatentVector> {
    if weights.len() != anchors.count() {
        return Err(Error::ShapeMismatch {
            op: "compose_latent",
            lhs: vec![anchors.count()],
            rhs: vec![weights.len()],
        });
    }
    let sum: f64 = weights.iter().sum();
    if weights.iter().any(|&w| w < 0.0) || (sum - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!(
            "weights are not a simplex point (sum {sum})"
        )));
    }
    let d = anchors.dim();
    let mut z = vec![0.0; d];
    for (i, &w) in weights.iter().enumerate() {
        let a = anchors.anchor(i);
        for j in 0..d {
            z[j] += w * a[j];
        }
    }
    let norm = l2(&z);
    if norm < DEGENERATE_NORM {
        return Err(Error::DegenerateLatent { norm });
    }
    for v in &mut z {
        *v /= norm;
    }
    Ok(LatentVector::new_unchecked(z))
}

/// Same composition from a simplex of logits.
pub fn compose_from_simplex(anchors: &AnchorSet, simplex: &WeightSimplex) -> Result<LatentVector> {
    compose_latent(anchors, &simplex.weights())
}

/// Differentiable composition: logits [1, M] -> unit latent [1, D].
pub fn compose_on_tape(
    tape: &mut Tape,
    anchors: &AnchorSet,
    logits: TensorId,
) -> Result<TensorId> {
    let a = anchors.constant_on(tape);
    let w = tape.softmax_rows(logits);
    let raw = tape.matmul(w, a)?;
    let sq = tape.mul(raw, raw)?;
    let sumsq = tape.sum_all(sq);
    let norm = tape.sqrt(sumsq);
    if tape.scalar(norm) < DEGENERATE_NORM {
        return Err(Error::DegenerateLatent {
            norm: tape.scalar(norm),
        });
    }
    tape.div_by_scalar(raw, norm)
}

/// Random latent: softmax of standard Gaussian logits, then composition.
pub fn random_latent(anchors: &AnchorSet, seed: u64) -> Result<LatentVector> {
    let mut rng = derive(seed, "latent/random", &[]);
    let logits: Vec<f64> = (0..anchors.count())
        .map(|_| rng.sample::<f64, _>(StandardNormal))
        .collect();
    compose_latent(anchors, &softmax(&logits))
}

/// Spherical linear interpolation along the geodesic between two unit vectors.
pub fn slerp(a: &LatentVector, b: &LatentVector, t: f64) -> Result<LatentVector> {
    if a.dim() != b.dim() {
        return Err(Error::ShapeMismatch {
            op: "slerp",
            lhs: vec![a.dim()],
            rhs: vec![b.dim()],
        });
    }
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::InvalidArgument(format!("slerp t={t} outside [0, 1]")));
    }
    let dot = a.dot(b).clamp(-1.0, 1.0);
    let omega = dot.acos();
    if omega > std::f64::consts::PI - 1e-6 {
        return Err(Error::AntipodalLatents);
    }
    let z = if omega < 1e-6 {
        // nearly parallel: normalized linear blend
        let mut z: Vec<f64> = a
            .components()
            .iter()
            .zip(b.components())
            .map(|(x, y)| (1.0 - t) * x + t * y)
            .collect();
        let norm = l2(&z);
        for v in &mut z {
            *v /= norm;
        }
        z
    } else {
        let sin_omega = omega.sin();
        let ca = ((1.0 - t) * omega).sin() / sin_omega;
        let cb = (t * omega).sin() / sin_omega;
        a.components()
            .iter()
            .zip(b.components())
            .map(|(x, y)| ca * x + cb * y)
            .collect()
    };
    Ok(LatentVector::new_unchecked(z))
}

fn l2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn softmax(v: &[f64]) -> Vec<f64> {
    let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = v.iter().map(|x| (x - max).exp()).collect();
    let denom: f64 = out.iter().sum();
    for o in &mut out {
        *o /= denom;
    }
    out
}

/// Renormalize until dividing by the computed norm is a bitwise no-op, so
/// one-hot compositions return the stored anchor without perturbation.
fn normalize_to_exact_unit(v: &mut [f64]) {
    for _ in 0..32 {
        let norm = l2(v);
        if norm == 1.0 {
            return;
        }
        for x in v.iter_mut() {
            *x /= norm;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::gradient_check;

    #[test]
    fn anchors_have_exact_unit_norm() {
        let set = AnchorSet::init(4, 8, 7).unwrap();
        for i in 0..4 {
            let norm = l2(set.anchor(i));
            assert_eq!(norm, 1.0, "anchor {i} norm {norm}");
        }
    }

    #[test]
    fn anchors_deterministic_in_seed() {
        let a = AnchorSet::init(16, 8, 3).unwrap();
        let b = AnchorSet::init(16, 8, 3).unwrap();
        assert_eq!(a.raw(), b.raw());
        let c = AnchorSet::init(16, 8, 4).unwrap();
        assert_ne!(a.raw(), c.raw());
    }

    #[test]
    fn anchor_mean_pairwise_dot_is_small() {
        // Monte-Carlo oracle: E[<u,v>] = 0 for independent uniform sphere draws.
        let set = AnchorSet::init(1000, 64, 11).unwrap();
        let mut total = 0.0;
        let mut count = 0u64;
        for i in 0..1000 {
            for j in (i + 1)..1000 {
                let d: f64 = set
                    .anchor(i)
                    .iter()
                    .zip(set.anchor(j))
                    .map(|(a, b)| a * b)
                    .sum();
                total += d;
                count += 1;
            }
        }
        let mean = total / count as f64;
        assert!(mean.abs() < 0.05, "mean pairwise dot {mean}");
    }

    #[test]
    fn too_small_dimensions_rejected() {
        assert!(AnchorSet::init(1, 8, 0).is_err());
        assert!(AnchorSet::init(4, 1, 0).is_err());
    }

    #[test]
    fn one_hot_reproduces_anchor_exactly() {
        let set = AnchorSet::init(6, 16, 21).unwrap();
        for i in 0..6 {
            let mut w = vec![0.0; 6];
            w[i] = 1.0;
            let z = compose_latent(&set, &w).unwrap();
            for (a, b) in z.components().iter().zip(set.anchor(i)) {
                assert_eq!(a, b);
            }
        }
    }

    #[test]
    fn composed_latents_are_unit() {
        let set = AnchorSet::init(32, 16, 2).unwrap();
        for seed in 0..50 {
            let z = random_latent(&set, seed).unwrap();
            assert!((l2(z.components()) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn random_latents_differ_across_seeds() {
        let set = AnchorSet::init(64, 32, 2).unwrap();
        for seed in 0..100 {
            let a = random_latent(&set, 2 * seed).unwrap();
            let b = random_latent(&set, 2 * seed + 1).unwrap();
            assert!(a.dot(&b) < 1.0 - 1e-6, "seeds {seed} produced equal latents");
        }
        let a = random_latent(&set, 77).unwrap();
        let b = random_latent(&set, 77).unwrap();
        assert_eq!(a.components(), b.components());
    }

    #[test]
    fn degenerate_combination_rejected() {
        // two antipodal anchors with equal weight sum to ~zero
        let set = AnchorSet::from_raw(vec![1.0, 0.0, -1.0, 0.0], 2, 2).unwrap();
        let err = compose_latent(&set, &[0.5, 0.5]).unwrap_err();
        assert!(matches!(err, Error::DegenerateLatent { .. }));
    }

    #[test]
    fn compose_gradient_matches_finite_differences() {
        let set = AnchorSet::init(8, 6, 13).unwrap();
        let mut rng = derive(5, "test/compose-grad", &[]);
        let target = random_latent(&set, 40).unwrap();
        let logits: Vec<f64> = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();
        let err = gradient_check(
            |t, logits_id| {
                let z = compose_on_tape(t, &set, logits_id)?;
                let tgt = target.constant_on(t);
                let diff = t.sub(z, tgt)?;
                let sq = t.mul(diff, diff)?;
                Ok(t.sum_all(sq))
            },
            &[1, 8],
            &logits,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-6, "rel err {err}");
    }

    #[test]
    fn compose_permutation_equivariant() {
        let set = AnchorSet::init(5, 7, 3).unwrap();
        let w = softmax(&[0.3, -1.0, 0.9, 0.0, 2.0]);
        let z = compose_latent(&set, &w).unwrap();
        // permute anchors and weights identically
        let perm = [3usize, 0, 4, 1, 2];
        let mut anchors_p = Vec::new();
        let mut w_p = vec![0.0; 5];
        for (new_i, &old_i) in perm.iter().enumerate() {
            anchors_p.extend_from_slice(set.anchor(old_i));
            w_p[new_i] = w[old_i];
        }
        let set_p = AnchorSet::from_raw(anchors_p, 5, 7).unwrap();
        let z_p = compose_latent(&set_p, &w_p).unwrap();
        for (a, b) in z.components().iter().zip(z_p.components()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn slerp_endpoints_identity() {
        let set = AnchorSet::init(16, 12, 9).unwrap();
        let a = random_latent(&set, 1).unwrap();
        let b = random_latent(&set, 2).unwrap();
        let z0 = slerp(&a, &b, 0.0).unwrap();
        let z1 = slerp(&a, &b, 1.0).unwrap();
        for (x, y) in z0.components().iter().zip(a.components()) {
            assert!((x - y).abs() <= 1e-12);
        }
        for (x, y) in z1.components().iter().zip(b.components()) {
            assert!((x - y).abs() <= 1e-12);
        }
    }

    #[test]
    fn slerp_midpoint_bisects_the_angle() {
        let set = AnchorSet::init(16, 12, 10).unwrap();
        let a = random_latent(&set, 5).unwrap();
        let b = random_latent(&set, 6).unwrap();
        let mid = slerp(&a, &b, 0.5).unwrap();
        let ang = |u: &LatentVector, v: &LatentVector| u.dot(v).clamp(-1.0, 1.0).acos();
        assert!((ang(&a, &mid) - ang(&mid, &b)).abs() < 1e-10);
    }

    #[test]
    fn slerp_path_stays_on_sphere() {
        let set = AnchorSet::init(16, 12, 11).unwrap();
        let a = random_latent(&set, 7).unwrap();
        let b = random_latent(&set, 8).unwrap();
        for i in 0..=100 {
            let t = i as f64 / 100.0;
            let z = slerp(&a, &b, t).unwrap();
            assert!((l2(z.components()) - 1.0).abs() < 1e-12, "t={t}");
        }
    }

    #[test]
    fn slerp_antipodal_rejected() {
        let a = LatentVector::from_components(vec![1.0, 0.0]).unwrap();
        let b = LatentVector::from_components(vec![-1.0, 0.0]).unwrap();
        let err = slerp(&a, &b, 0.5).unwrap_err();
        assert!(matches!(err, Error::AntipodalLatents));
    }

    #[test]
    fn slerp_nearly_parallel_falls_back() {
        let a = LatentVector::from_components(vec![1.0, 0.0]).unwrap();
        let z = slerp(&a, &a.clone(), 0.3).unwrap();
        assert!((l2(z.components()) - 1.0).abs() < 1e-12);
        assert!((z.components()[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn uniform_simplex_from_zero_logits() {
        let s = WeightSimplex::uniform(4);
        let w = s.weights();
        for x in &w {
            assert!((x - 0.25).abs() < 1e-15);
        }
        let sum: f64 = w.iter().sum();
        assert!((sum - 1.0).abs() < 1e-12);
    }
}
