//! Distortion metrics and the rate-distortion objective.
//!
//! Chamfer distance is the symmetric mean of squared nearest-neighbor
//! distances; point-to-plane PSNR projects errors onto least-squares surface
//! normals of the reference cloud. Both use the exact kd-tree index.

use thiserror::Error;

use crate::autodiff::{Tape, Var};
use crate::kdtree::KdTree;
use crate::rangegrid::Point;

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("metric requires a nonempty cloud")]
    EmptyCloud,
    #[error("point-to-plane PSNR needs at least {needed} reference points, got {got}")]
    InsufficientPoints { needed: usize, got: usize },
    #[error("bits-per-point requires a nonzero point count")]
    ZeroPoints,
}

/// Rate-distortion decomposition of one objective evaluation:
/// total = distortion + lambda * rate.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossTerms {
    pub distortion: f64,
    pub rate_bits: f64,
    pub lambda: f64,
    pub total: f64,
}

impl LossTerms {
    pub fn new(distortion: f64, rate_bits: f64, lambda: f64) -> Self {
        LossTerms {
            distortion,
            rate_bits,
            lambda,
            total: distortion + lambda * rate_bits,
        }
    }
}

/// Evaluation summary for one compressed scan.
#[derive(Clone, Copy, Debug)]
pub struct MetricReport {
    pub bpp: f64,
    pub chamfer: f64,
    pub p2plane_psnr_db: f64,
    pub original_points: usize,
    pub reconstructed_points: usize,
}

impl MetricReport {
    pub fn csv_header() -> &'static str {
        "bpp,chamfer_m2,p2plane_psnr_db,original_points,reconstructed_points"
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{}",
            self.bpp, self.chamfer, self.p2plane_psnr_db, self.original_points, self.reconstructed_points
        )
    }
}

/// Symmetric point-to-point Chamfer distance in squared meters:
/// mean_a min_b ||a-b||^2 + mean_b min_a ||a-b||^2.
pub fn chamfer(a: &[Point], b: &[Point]) -> Result<f64, MetricError> {
    if a.is_empty() || b.is_empty() {
        return Err(MetricError::EmptyCloud);
    }
    let tree_b = KdTree::new(b);
    let tree_a = KdTree::new(a);
    let forward: f64 = a.iter().map(|p| tree_b.nearest(p).1).sum::<f64>() / a.len() as f64;
    let backward: f64 = b.iter().map(|p| tree_a.nearest(p).1).sum::<f64>() / b.len() as f64;
    Ok(forward + backward)
}

/// Index of the nearest `target` point for each query point.
pub fn nearest_each(queries: &[Point], targets: &[Point]) -> Vec<usize> {
    let tree = KdTree::new(targets);
    queries.iter().map(|q| tree.nearest(q).0).collect()
}

/// Differentiable Chamfer loss between a tape-resident reconstruction
/// (shape [K, 3]) and a fixed target cloud. Nearest-neighbor matches are
/// computed once from current values and held fixed, so the gradient is the
/// standard subgradient through the argmin.
pub fn chamfer_loss(tape: &Tape, recon: Var, target: &[Point]) -> Var {
    assert!(!target.is_empty(), "chamfer_loss: empty target");
    let recon_points: Vec<Point> = tape.peek(recon, |v| {
        assert_eq!(v.rank(), 2, "chamfer_loss: reconstruction must be [K,3]");
        assert_eq!(v.shape()[1], 3);
        v.data().chunks(3).map(|c| [c[0], c[1], c[2]]).collect()
    });
    assert!(!recon_points.is_empty(), "chamfer_loss: empty reconstruction");
    let k = recon_points.len();
    let m = target.len();

    let fwd_match = nearest_each(&recon_points, target);
    let bwd_match = nearest_each(target, &recon_points);

    let fwd_targets: Vec<f64> = fwd_match
        .iter()
        .flat_map(|&j| target[j].iter().copied())
        .collect();
    let fwd_const = tape.constant(crate::array::Array::from_vec(&[k, 3], fwd_targets));
    let fwd_diff = tape.sub(recon, fwd_const);
    let fwd = tape.scale(tape.reduce_sum_all(tape.square(fwd_diff)), 1.0 / k as f64);

    let gathered = tape.gather0(recon, &bwd_match);
    let bwd_targets: Vec<f64> = target.iter().flat_map(|p| p.iter().copied()).collect();
    let bwd_const = tape.constant(crate::array::Array::from_vec(&[m, 3], bwd_targets));
    let bwd_diff = tape.sub(gathered, bwd_const);
    let bwd = tape.scale(tape.reduce_sum_all(tape.square(bwd_diff)), 1.0 / m as f64);

    tape.add(fwd, bwd)
}

/// Per-point unit normals of `cloud` from a least-squares plane fit over the
/// k nearest neighbors. `None` marks a degenerate (collinear or coincident)
/// neighborhood.
pub fn estimate_normals(cloud: &[Point], k: usize) -> Vec<Option<Point>> {
    let tree = KdTree::new(cloud);
    cloud
        .iter()
        .map(|p| {
            let neighbors = tree.k_nearest(p, k);
            plane_normal(cloud, &neighbors)
        })
        .collect()
}

fn plane_normal(cloud: &[Point], neighbors: &[(usize, f64)]) -> Option<Point> {
    if neighbors.len() < 3 {
        return None;
    }
    let n = neighbors.len() as f64;
    let mut mean = [0.0; 3];
    for &(i, _) in neighbors {
        for d in 0..3 {
            mean[d] += cloud[i][d];
        }
    }
    for m in mean.iter_mut() {
        *m /= n;
    }
    let mut cov = nalgebra::Matrix3::<f64>::zeros();
    for &(i, _) in neighbors {
        let d = [
            cloud[i][0] - mean[0],
            cloud[i][1] - mean[1],
            cloud[i][2] - mean[2],
        ];
        for r in 0..3 {
            for c in 0..3 {
                cov[(r, c)] += d[r] * d[c];
            }
        }
    }
    cov /= n;
    let eig = nalgebra::SymmetricEigen::new(cov);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let (smallest, mid, largest) = (order[0], order[1], order[2]);
    // Collinear or coincident neighborhoods leave the normal direction
    // underdetermined: two vanishing eigenvalues.
    if eig.eigenvalues[largest] <= 0.0
        || eig.eigenvalues[mid] < 1e-9 * eig.eigenvalues[largest]
    {
        return None;
    }
    let v = eig.eigenvectors.column(smallest);
    let norm = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    Some([v[0] / norm, v[1] / norm, v[2] / norm])
}

/// Point-to-plane PSNR in dB against `peak`, capped at 100 dB. Test-point
/// errors are projected on the nearest reference normal; degenerate
/// neighborhoods fall back to the point-to-point distance.
pub fn p2plane_psnr(
    reference: &[Point],
    test: &[Point],
    peak: f64,
    k: usize,
) -> Result<f64, MetricError> {
    if reference.is_empty() || test.is_empty() {
        return Err(MetricError::EmptyCloud);
    }
    if reference.len() < k + 1 {
        return Err(MetricError::InsufficientPoints {
            needed: k + 1,
            got: reference.len(),
        });
    }
    let normals = estimate_normals(reference, k);
    let tree = KdTree::new(reference);
    let mut mse = 0.0;
    for t in test {
        let (nearest, d2) = tree.nearest(t);
        let err2 = match normals[nearest] {
            Some(n) => {
                let r = reference[nearest];
                let proj = n[0] * (t[0] - r[0]) + n[1] * (t[1] - r[1]) + n[2] * (t[2] - r[2]);
                proj * proj
            }
            None => d2,
        };
        mse += err2;
    }
    mse /= test.len() as f64;
    if mse < peak * peak * 1e-10 {
        return Ok(100.0);
    }
    Ok(10.0 * (peak * peak / mse).log10())
}

/// Default PSNR peak: the reference cloud's maximum axis-aligned extent.
pub fn default_peak(reference: &[Point]) -> f64 {
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for p in reference {
        for d in 0..3 {
            lo[d] = lo[d].min(p[d]);
            hi[d] = hi[d].max(p[d]);
        }
    }
    (0..3).map(|d| hi[d] - lo[d]).fold(0.0, f64::max)
}

/// Total rate-distortion objective L = D + lambda * R.
pub fn total_loss(distortion: f64, rate_bits: f64, lambda: f64) -> LossTerms {
    assert!(lambda >= 0.0, "lambda must be nonnegative");
    LossTerms::new(distortion, rate_bits, lambda)
}

/// Bits per point of a coded payload against the original point count.
pub fn bpp(total_bits: usize, original_points: usize) -> Result<f64, MetricError> {
    if original_points == 0 {
        return Err(MetricError::ZeroPoints);
    }
    Ok(total_bits as f64 / original_points as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::array::Array;

    #[test]
    fn chamfer_of_identical_clouds_is_zero() {
        let a = vec![[1.0, 2.0, 3.0], [0.0, -1.0, 0.5]];
        assert_eq!(chamfer(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn chamfer_single_pair_hand_value() {
        // Both directions contribute 1, so the total is 2.
        let a = vec![[0.0, 0.0, 0.0]];
        let b = vec![[1.0, 0.0, 0.0]];
        assert_eq!(chamfer(&a, &b).unwrap(), 2.0);
    }

    #[test]
    fn chamfer_two_to_one_hand_value() {
        // Forward: (1 + 1)/2 = 1; backward: 1. Total 2.
        let a = vec![[0.0, 0.0, 0.0], [2.0, 0.0, 0.0]];
        let b = vec![[1.0, 0.0, 0.0]];
        assert_eq!(chamfer(&a, &b).unwrap(), 2.0);
    }

    #[test]
    fn chamfer_is_symmetric_and_shift_invariant() {
        let a = vec![[0.1, 0.4, -0.3], [2.0, 1.0, 0.0], [5.0, -2.0, 1.0]];
        let b = vec![[0.0, 0.0, 0.0], [2.5, 1.5, 0.5]];
        assert_eq!(chamfer(&a, &b).unwrap(), chamfer(&b, &a).unwrap());
        let shift = [10.0, -3.0, 7.0];
        let sa: Vec<Point> = a.iter().map(|p| [p[0] + shift[0], p[1] + shift[1], p[2] + shift[2]]).collect();
        let sb: Vec<Point> = b.iter().map(|p| [p[0] + shift[0], p[1] + shift[1], p[2] + shift[2]]).collect();
        assert!((chamfer(&a, &b).unwrap() - chamfer(&sa, &sb).unwrap()).abs() < 1e-9);
    }

    #[test]
    fn chamfer_rejects_empty() {
        assert_eq!(chamfer(&[], &[[0.0; 3]]), Err(MetricError::EmptyCloud));
    }

    fn plane_grid(n: usize, spacing: f64) -> Vec<Point> {
        let mut pts = Vec::new();
        for i in 0..n {
            for j in 0..n {
                pts.push([i as f64 * spacing, j as f64 * spacing, 0.0]);
            }
        }
        pts
    }

    #[test]
    fn identical_clouds_hit_psnr_cap() {
        let reference = plane_grid(8, 0.5);
        let psnr = p2plane_psnr(&reference, &reference, 10.0, 12).unwrap();
        assert_eq!(psnr, 100.0);
    }

    #[test]
    fn in_plane_shift_stays_at_cap() {
        let reference = plane_grid(12, 0.5);
        let test: Vec<Point> = reference.iter().map(|p| [p[0] + 0.1, p[1], p[2]]).collect();
        let psnr = p2plane_psnr(&reference, &test, 10.0, 12).unwrap();
        assert_eq!(psnr, 100.0);
    }

    #[test]
    fn normal_shift_gives_exact_psnr() {
        // MSE = h^2 for an out-of-plane shift h; PSNR = 20 log10(peak / h).
        let reference = plane_grid(12, 0.5);
        let h = 0.05;
        let test: Vec<Point> = reference.iter().map(|p| [p[0], p[1], p[2] + h]).collect();
        let peak = 10.0;
        let psnr = p2plane_psnr(&reference, &test, peak, 12).unwrap();
        let expected = 20.0 * (peak / h).log10();
        assert!(
            (psnr - expected).abs() < 1e-6,
            "psnr {} expected {}",
            psnr,
            expected
        );
    }

    #[test]
    fn psnr_decreases_with_displacement() {
        let reference = plane_grid(12, 0.5);
        let mut prev = f64::INFINITY;
        for &h in &[0.01, 0.02, 0.05, 0.1] {
            let test: Vec<Point> = reference.iter().map(|p| [p[0], p[1], p[2] + h]).collect();
            let psnr = p2plane_psnr(&reference, &test, 10.0, 12).unwrap();
            assert!(psnr < prev, "psnr must strictly decrease");
            prev = psnr;
        }
    }

    #[test]
    fn collinear_reference_falls_back_to_point_distance() {
        let reference: Vec<Point> = (0..20).map(|i| [i as f64, 0.0, 0.0]).collect();
        let test = vec![[5.0, 0.3, 0.0]];
        // Fallback is the point-to-point distance: MSE = 0.09.
        let psnr = p2plane_psnr(&reference, &test, 10.0, 12).unwrap();
        let expected = 10.0 * (100.0f64 / 0.09).log10();
        assert!((psnr - expected).abs() < 1e-6);
    }

    #[test]
    fn loss_terms_compose_exactly() {
        let l = total_loss(2.0, 3.0, 0.5);
        assert_eq!(l.total, 3.5);
        let l0 = total_loss(2.0, 3.0, 0.0);
        assert_eq!(l0.total, 2.0);
    }

    #[test]
    fn bpp_is_bits_over_points() {
        assert_eq!(bpp(2000, 1000).unwrap(), 2.0);
        assert_eq!(bpp(100, 0), Err(MetricError::ZeroPoints));
    }

    #[test]
    fn chamfer_loss_matches_metric_at_fixed_matches() {
        let target = vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]];
        let tape = Tape::new();
        let recon = tape.leaf(Array::from_vec(&[2, 3], vec![0.1, 0.0, 0.0, 0.9, 0.0, 0.0]));
        let loss = tape.item(chamfer_loss(&tape, recon, &target));
        let recon_pts = vec![[0.1, 0.0, 0.0], [0.9, 0.0, 0.0]];
        assert!((loss - chamfer(&recon_pts, &target).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn chamfer_loss_gradient_checks_at_tie_free_points() {
        let target = vec![[0.0, 0.0, 0.0], [2.0, 0.3, -0.1]];
        let err = crate::autodiff::gradcheck(
            |t, xs| chamfer_loss(t, xs[0], &target),
            &[Array::from_vec(&[2, 3], vec![0.3, 0.1, 0.0, 1.8, 0.2, 0.1])],
            1e-5,
        );
        assert!(err < 1e-6, "chamfer gradcheck error {}", err);
    }
}
