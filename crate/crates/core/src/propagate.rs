//! Delta-method propagation of the diagonal Laplace covariance into pixel
//! space, object masking and per-object score reduction.

use nalgebra::Matrix3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::camera::CameraPose;
use crate::error::{Error, Result};
use crate::fisher::CovDiag;
use crate::render::{PixelJacobian, Prepared, SplatBlock};
use crate::scene::{SceneParams, PARAMS_PER_SPLAT};

/// Pixels with M_k(u) at or below this are not attributed to object k.
pub const MASK_FLOOR: f64 = 1e-6;

/// 3×3 channel covariance at one pixel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PixelCov(pub Matrix3<f64>);

impl PixelCov {
    pub fn trace(&self) -> f64 {
        self.0.trace()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectScore {
    pub view_id: usize,
    pub object_id: u32,
    pub score: f64,
    pub pixel_count: usize,
}

/// J_u diag(cov) J_uᵀ.
pub fn pixel_variance(jacobian: &PixelJacobian, cov: &CovDiag) -> Result<PixelCov> {
    if jacobian.dim() != cov.dim() {
        return Err(Error::DimensionMismatch { expected: cov.dim(), actual: jacobian.dim() });
    }
    let mut m = Matrix3::zeros();
    for (col, &s) in jacobian.matrix.column_iter().zip(&cov.values) {
        if s == 0.0 || (col[0] == 0.0 && col[1] == 0.0 && col[2] == 0.0) {
            continue;
        }
        for k in 0..3 {
            let sk = s * col[k];
            for l in k..3 {
                m[(k, l)] += sk * col[l];
            }
        }
    }
    for k in 0..3 {
        for l in 0..k {
            m[(k, l)] = m[(l, k)];
        }
    }
    Ok(PixelCov(m))
}

fn check_mask(mask_value: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&mask_value) {
        return Err(Error::InvalidArgument(format!("mask value {mask_value} outside [0,1]")));
    }
    Ok(())
}

/// M_k(u)² · J_u diag(cov) J_uᵀ.
pub fn object_pixel_cov(jacobian: &PixelJacobian, cov: &CovDiag, mask_value: f64) -> Result<PixelCov> {
    check_mask(mask_value)?;
    let v = pixel_variance(jacobian, cov)?;
    Ok(PixelCov(v.0 * (mask_value * mask_value)))
}

/// trace(J diag(cov) Jᵀ) from sparse blocks.
fn blocks_trace(blocks: &[SplatBlock], cov: &[f64]) -> f64 {
    let mut t = 0.0;
    for b in blocks {
        let base = b.slot * PARAMS_PER_SPLAT;
        for (p, col) in b.d.iter().enumerate() {
            t += cov[base + p] * (col[0] * col[0] + col[1] * col[1] + col[2] * col[2]);
        }
    }
    t
}

/// Per-pixel trace and object weights for the requested pixels, in order.
fn pixel_terms(
    scene: &SceneParams,
    camera: &CameraPose,
    cov: &CovDiag,
    pixels: &[(usize, usize)],
) -> Result<(Vec<u32>, Vec<(f64, Vec<f64>)>)> {
    camera.validate()?;
    let prepared = Prepared::new(scene)?;
    if prepared.dim() != cov.dim() {
        return Err(Error::DimensionMismatch { expected: prepared.dim(), actual: cov.dim() });
    }
    for &(x, y) in pixels {
        camera.check_pixel(x, y)?;
    }
    let n_obj = prepared.object_ids().len();
    let terms = pixels
        .par_iter()
        .map(|&(x, y)| {
            let xw = camera.pixel_to_world(CameraPose::pixel_center(x, y));
            let (_, blocks) = prepared.shade_with_jacobian(xw);
            let mut weights = vec![0.0; n_obj];
            prepared.shade(xw, Some(&mut weights));
            (blocks_trace(&blocks, &cov.values), weights)
        })
        .collect();
    Ok((prepared.object_ids().to_vec(), terms))
}

/// Scores of every object in the scene over the given pixels. Sums run in
/// pixel order, so results are reproducible across thread counts.
pub fn object_scores_over(
    scene: &SceneParams,
    camera: &CameraPose,
    cov: &CovDiag,
    pixels: &[(usize, usize)],
    view_id: usize,
) -> Result<Vec<ObjectScore>> {
    let (ids, terms) = pixel_terms(scene, camera, cov, pixels)?;
    let mut scores: Vec<ObjectScore> = ids
        .iter()
        .map(|&object_id| ObjectScore { view_id, object_id, score: 0.0, pixel_count: 0 })
        .collect();
    for (trace, weights) in &terms {
        for (s, &m) in scores.iter_mut().zip(weights) {
            if m > MASK_FLOOR {
                s.score += m * m * trace;
                s.pixel_count += 1;
            }
        }
    }
    Ok(scores)
}

/// Scores of every object over the full view.
pub fn object_scores(
    scene: &SceneParams,
    camera: &CameraPose,
    cov: &CovDiag,
    view_id: usize,
) -> Result<Vec<ObjectScore>> {
    object_scores_over(scene, camera, cov, &camera.pixels(), view_id)
}

/// Σ_{u: M_k(u) > floor} trace(M_k(u)² J_u diag(cov) J_uᵀ).
pub fn object_score(scene: &SceneParams, camera: &CameraPose, cov: &CovDiag, object_id: u32) -> Result<ObjectScore> {
    if !scene.splats.iter().any(|s| s.object_id == object_id) {
        return Err(Error::UnknownObject(object_id));
    }
    let scores = object_scores(scene, camera, cov, 0)?;
    Ok(scores.into_iter().find(|s| s.object_id == object_id).expect("object present"))
}

/// Per-pixel trace of the propagated covariance, row-major.
pub fn variance_heatmap(scene: &SceneParams, camera: &CameraPose, cov: &CovDiag) -> Result<Vec<f64>> {
    let (_, terms) = pixel_terms(scene, camera, cov, &camera.pixels())?;
    Ok(terms.into_iter().map(|(t, _)| t).collect())
}

/// Leading term ¼‖H‖_F‖Σ‖_F² of the error bound on first-order propagation.
pub fn truncation_bound(hessian_frobenius: f64, cov_frobenius: f64) -> Result<f64> {
    if !(hessian_frobenius >= 0.0 && cov_frobenius >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "norms must be nonnegative, got {hessian_frobenius} and {cov_frobenius}"
        )));
    }
    Ok(0.25 * hessian_frobenius * cov_frobenius * cov_frobenius)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::render::{render, render_jacobian, render_with_jacobians};
    use crate::scene::tests::splat;
    use nalgebra::Matrix3xX;
    use proptest::prelude::*;

    fn cov(values: Vec<f64>) -> CovDiag {
        CovDiag { values, lambda: 1e-4 }
    }

    fn random_jacobian(seed: u64, d: usize) -> PixelJacobian {
        // small LCG; the values only need to be irregular
        let mut s = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        let m = Matrix3xX::from_fn(d, |_, _| {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((s >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
        });
        PixelJacobian::new((0, 0), m)
    }

    #[test]
    fn zero_jacobian_gives_zero() {
        let v = pixel_variance(&PixelJacobian::zeros((0, 0), 9), &cov(vec![3.0; 9])).unwrap();
        assert_eq!(v.0, Matrix3::zeros());
    }

    #[test]
    fn rank_one_entry() {
        let mut j = PixelJacobian::zeros((0, 0), 9);
        j.matrix[(0, 4)] = 3.0;
        let mut c = vec![1.0; 9];
        c[4] = 0.5;
        let v = pixel_variance(&j, &cov(c)).unwrap();
        let mut want = Matrix3::zeros();
        want[(0, 0)] = 4.5;
        assert_eq!(v.0, want);
    }

    #[test]
    fn dimension_mismatch() {
        assert!(pixel_variance(&PixelJacobian::zeros((0, 0), 9), &cov(vec![1.0; 8])).is_err());
    }

    #[test]
    fn mask_factors() {
        let j = random_jacobian(3, 18);
        let c = cov((0..18).map(|i| 0.1 + i as f64).collect());
        let full = pixel_variance(&j, &c).unwrap().0;
        assert_eq!(object_pixel_cov(&j, &c, 0.0).unwrap().0, Matrix3::zeros());
        assert_eq!(object_pixel_cov(&j, &c, 1.0).unwrap().0, full);
        assert_eq!(object_pixel_cov(&j, &c, 0.5).unwrap().0, full * 0.25);
        assert!(object_pixel_cov(&j, &c, 1.5).is_err());
        assert!(object_pixel_cov(&j, &c, -0.1).is_err());
    }

    #[test]
    fn truncation_bound_examples() {
        assert_eq!(truncation_bound(7.0, 0.0).unwrap(), 0.0);
        assert!((truncation_bound(4.0, 0.1).unwrap() - 0.01).abs() < 1e-15);
        let full = truncation_bound(3.0, 0.8).unwrap();
        let half = truncation_bound(3.0, 0.4).unwrap();
        assert!((half - full / 4.0).abs() < 1e-15);
        assert!(truncation_bound(-1.0, 0.1).is_err());
        assert!(truncation_bound(1.0, -0.1).is_err());
    }

    fn two_object_scene() -> SceneParams {
        let mut a = splat([-1.0, 0.0], 0, 0);
        a.log_scale = [-1.2, -1.2];
        let mut b = splat([1.0, 0.0], 1, 1);
        b.log_scale = [-1.2, -1.2];
        SceneParams::new(vec![a, b], [0.2, 0.2, 0.2]).unwrap()
    }

    #[test]
    fn object_outside_view_scores_zero() {
        let scene = two_object_scene();
        let cam = CameraPose::new([-3.0, 0.0], 0.0, 16.0, 16, 16).unwrap();
        let s = object_score(&scene, &cam, &cov(vec![1.0; 18]), 1).unwrap();
        assert_eq!((s.score, s.pixel_count), (0.0, 0));
        assert!(object_score(&scene, &cam, &cov(vec![1.0; 18]), 0).unwrap().score > 0.0);
        assert!(matches!(
            object_score(&scene, &cam, &cov(vec![1.0; 18]), 9),
            Err(Error::UnknownObject(9))
        ));
    }

    #[test]
    fn larger_covariance_object_scores_higher() {
        let scene = two_object_scene();
        let cam = CameraPose::new([0.0, 0.0], 0.0, 10.0, 32, 24).unwrap();
        let mut c = vec![1.0; 18];
        c[..9].iter_mut().for_each(|v| *v = 10.0);
        let c = cov(c);
        let a = object_score(&scene, &cam, &c, 0).unwrap();
        let b = object_score(&scene, &cam, &c, 1).unwrap();
        assert!(a.score > b.score);
        assert_eq!(a.pixel_count, b.pixel_count);

        // brute force: dense J_u and mask per pixel
        let r = render(&scene, &cam).unwrap();
        let (_, jac) = render_with_jacobians(&scene, &cam).unwrap();
        for (k, got) in [(0u32, &a), (1, &b)] {
            let mask = r.mask(k).unwrap();
            let mut total = 0.0;
            for j in &jac {
                let m = mask.get(j.pixel.0, j.pixel.1);
                if m > MASK_FLOOR {
                    let mut t = 0.0;
                    for l in 0..18 {
                        for ch in 0..3 {
                            t += m * m * c.values[l] * j.matrix[(ch, l)].powi(2);
                        }
                    }
                    total += t;
                }
            }
            assert!((got.score - total).abs() <= 1e-12 * total);
        }
    }

    #[test]
    fn heatmap_zero_off_footprint() {
        let scene = two_object_scene();
        let cam = CameraPose::new([0.0, 0.0], 0.0, 6.0, 40, 20).unwrap();
        let c = cov(vec![2.0; 18]);
        let heat = variance_heatmap(&scene, &cam, &c).unwrap();
        let r = render(&scene, &cam).unwrap();
        let (mut best, mut best_i) = (f64::MIN, 0);
        for (i, &h) in heat.iter().enumerate() {
            assert!(h >= 0.0);
            if r.background_weight[i] == 1.0 {
                assert_eq!(h, 0.0);
            }
            if h > best {
                best = h;
                best_i = i;
            }
        }
        assert!(r.background_weight[best_i] < 1.0);
        let zero = variance_heatmap(&scene, &cam, &cov(vec![0.0; 18])).unwrap();
        assert!(zero.iter().all(|&h| h == 0.0));
    }

    #[test]
    fn score_is_linear_in_cov() {
        let scene = two_object_scene();
        let cam = CameraPose::new([0.0, 0.0], 0.4, 8.0, 24, 24).unwrap();
        let c = cov((0..18).map(|i| 1.0 + i as f64 * 0.1).collect());
        let base = object_scores(&scene, &cam, &c, 0).unwrap();
        let scaled = object_scores(&scene, &cam, &c.scaled(3.5), 0).unwrap();
        for (a, b) in base.iter().zip(&scaled) {
            assert!((b.score - 3.5 * a.score).abs() <= 1e-12 * b.score);
        }
    }

    #[test]
    fn scores_additive_over_disjoint_pixels() {
        let scene = two_object_scene();
        let cam = CameraPose::new([0.0, 0.0], 0.0, 8.0, 24, 16).unwrap();
        let c = cov(vec![1.5; 18]);
        let all = cam.pixels();
        let (left, right): (Vec<_>, Vec<_>) = all.iter().partition(|p| p.0 < 11);
        let whole = object_scores_over(&scene, &cam, &c, &all, 0).unwrap();
        let l = object_scores_over(&scene, &cam, &c, &left, 0).unwrap();
        let r = object_scores_over(&scene, &cam, &c, &right, 0).unwrap();
        for i in 0..2 {
            assert!((whole[i].score - l[i].score - r[i].score).abs() <= 1e-12 * whole[i].score);
            assert_eq!(whole[i].pixel_count, l[i].pixel_count + r[i].pixel_count);
        }
    }

    #[test]
    fn masked_score_dominated_by_unmasked() {
        let scene = two_object_scene();
        let cam = CameraPose::new([0.0, 0.0], 0.0, 8.0, 24, 16).unwrap();
        let c = cov(vec![1.0; 18]);
        let unmasked: f64 = variance_heatmap(&scene, &cam, &c).unwrap().iter().sum();
        for s in object_scores(&scene, &cam, &c, 0).unwrap() {
            assert!(s.score <= unmasked);
        }
    }

    proptest! {
        #[test]
        fn variance_symmetric_psd_and_monotone(
            seed in any::<u64>(),
            c in prop::collection::vec(0.0f64..10.0, 9),
            j in 0usize..9,
            bump in 0.0f64..5.0,
        ) {
            let jac = random_jacobian(seed, 9);
            let base = pixel_variance(&jac, &cov(c.clone())).unwrap();
            prop_assert!(base.trace() >= 0.0);
            prop_assert!((base.0 - base.0.transpose()).abs().max() <= 1e-12);
            let eig = base.0.symmetric_eigenvalues();
            prop_assert!(eig.iter().all(|&e| e >= -1e-10));
            let mut c2 = c;
            c2[j] += bump;
            let more = pixel_variance(&jac, &cov(c2)).unwrap();
            for k in 0..3 {
                prop_assert!(more.0[(k, k)] >= base.0[(k, k)]);
            }
        }
    }

    #[test]
    fn dense_and_sparse_paths_agree() {
        let scene = two_object_scene();
        let cam = CameraPose::new([0.0, 0.0], 0.0, 8.0, 16, 16).unwrap();
        let c = cov((0..18).map(|i| 0.5 + i as f64).collect());
        let heat = variance_heatmap(&scene, &cam, &c).unwrap();
        let jac = render_jacobian(&scene, &cam, &cam.pixels()).unwrap();
        for (h, j) in heat.iter().zip(&jac) {
            let t = pixel_variance(j, &c).unwrap().trace();
            assert!((h - t).abs() <= 1e-12 * (1.0 + t));
        }
    }
}
