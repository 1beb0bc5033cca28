//! Front-to-back alpha compositing of 2D Gaussian splats and its exact
//! per-pixel Jacobian.
//!
//! For pixel u and splats sorted by depth rank,
//!
//! ```text
//! w_i(u) = α_i(u) · Π_{j<i} (1 − α_j(u))
//! C(u)   = Σ_i w_i(u) c_i + (1 − Σ_i w_i(u)) · background
//! ```
//!
//! The Jacobian is the hand-derived chain rule of that formula. With T_i the
//! transmittance in front of splat i and R_i the color composited from
//! everything behind it, ∂C/∂α_i = T_i (c_i − R_i), which needs no division
//! by (1 − α_i). R_i comes from one back-to-front sweep.

use nalgebra::Matrix3xX;
use rayon::prelude::*;

use crate::camera::CameraPose;
use crate::error::{Error, Result};
use crate::scene::{GaussianSplat, SceneParams, PARAMS_PER_SPLAT};

/// Upper clamp on per-splat alpha.
pub const ALPHA_CAP: f64 = 0.999;

/// Squared Mahalanobis distance beyond which a splat contributes exactly
/// nothing to a pixel.
pub const FOOTPRINT_CUTOFF: f64 = 50.0;

#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    /// Row-major RGB.
    pub pixels: Vec<[f64; 3]>,
}

impl Image {
    pub fn filled(width: usize, height: usize, color: [f64; 3]) -> Self {
        Image { width, height, pixels: vec![color; width * height] }
    }

    pub fn get(&self, x: usize, y: usize) -> [f64; 3] {
        self.pixels[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, c: [f64; 3]) {
        self.pixels[y * self.width + x] = c;
    }

    pub fn same_size(&self, other: &Image) -> bool {
        self.width == other.width && self.height == other.height
    }

    /// Mean squared error over pixels and channels.
    pub fn mse(&self, other: &Image) -> Result<f64> {
        if !self.same_size(other) {
            return Err(Error::DimensionMismatch {
                expected: self.pixels.len(),
                actual: other.pixels.len(),
            });
        }
        let sum: f64 = self
            .pixels
            .iter()
            .zip(&other.pixels)
            .flat_map(|(a, b)| (0..3).map(move |k| (a[k] - b[k]).powi(2)))
            .sum();
        Ok(sum / (3 * self.pixels.len()) as f64)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectMask {
    pub object_id: u32,
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
}

impl ObjectMask {
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.values[y * self.width + x]
    }

    /// Σ_u M_k(u).
    pub fn mass(&self) -> f64 {
        self.values.iter().sum()
    }
}

/// Output of [`render`]: the image, one soft mask per object (ascending id)
/// and the per-pixel background weight.
#[derive(Debug, Clone, PartialEq)]
pub struct Rendering {
    pub image: Image,
    pub masks: Vec<ObjectMask>,
    pub background_weight: Vec<f64>,
}

impl Rendering {
    pub fn mask(&self, object_id: u32) -> Option<&ObjectMask> {
        self.masks.iter().find(|m| m.object_id == object_id)
    }
}

/// 3×d matrix of ∂C_k(u)/∂θ_l at one pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct PixelJacobian {
    pub pixel: (usize, usize),
    pub matrix: Matrix3xX<f64>,
}

impl PixelJacobian {
    pub fn new(pixel: (usize, usize), matrix: Matrix3xX<f64>) -> Self {
        PixelJacobian { pixel, matrix }
    }

    pub fn zeros(pixel: (usize, usize), dim: usize) -> Self {
        PixelJacobian { pixel, matrix: Matrix3xX::zeros(dim) }
    }

    pub fn dim(&self) -> usize {
        self.matrix.ncols()
    }
}

/// Per-splat derivative block: `d[p][k] = ∂C_k/∂θ_{slot·9 + p}`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct SplatBlock {
    pub slot: usize,
    pub d: [[f64; 3]; PARAMS_PER_SPLAT],
}

#[derive(Debug, Clone, Copy)]
struct Projected {
    mu: [f64; 2],
    cos: f64,
    sin: f64,
    /// exp(−2·log_scale) per axis.
    inv_var: [f64; 2],
    opacity: f64,
    color: [f64; 3],
    object_slot: usize,
}

impl Projected {
    fn new(s: &GaussianSplat, object_slot: usize) -> Self {
        let (sin, cos) = s.phi.sin_cos();
        Projected {
            mu: s.mu,
            cos,
            sin,
            inv_var: [(-2.0 * s.log_scale[0]).exp(), (-2.0 * s.log_scale[1]).exp()],
            opacity: s.opacity(),
            color: s.color(),
            object_slot,
        }
    }

    /// Splat-frame offset (q0, q1) and squared Mahalanobis distance.
    #[inline]
    fn local(&self, xw: [f64; 2]) -> (f64, f64, f64) {
        let dx = xw[0] - self.mu[0];
        let dy = xw[1] - self.mu[1];
        let q0 = self.cos * dx + self.sin * dy;
        let q1 = -self.sin * dx + self.cos * dy;
        (q0, q1, self.inv_var[0] * q0 * q0 + self.inv_var[1] * q1 * q1)
    }

    #[inline]
    fn alpha(&self, xw: [f64; 2]) -> f64 {
        let (_, _, m2) = self.local(xw);
        if m2 > FOOTPRINT_CUTOFF {
            return 0.0;
        }
        (self.opacity * (-0.5 * m2).exp()).min(ALPHA_CAP)
    }

    /// α and its derivatives w.r.t. [mu_x, mu_y, log_sx, log_sy, phi, opacity_logit].
    #[inline]
    fn alpha_grad(&self, xw: [f64; 2]) -> (f64, [f64; 6]) {
        let (q0, q1, m2) = self.local(xw);
        if m2 > FOOTPRINT_CUTOFF {
            return (0.0, [0.0; 6]);
        }
        let a = self.opacity * (-0.5 * m2).exp();
        if a > ALPHA_CAP {
            return (ALPHA_CAP, [0.0; 6]);
        }
        let [ia, ib] = self.inv_var;
        let (c, s) = (self.cos, self.sin);
        // dα/dp = −½ α ∂m²/∂p
        (
            a,
            [
                a * (ia * q0 * c - ib * q1 * s),
                a * (ia * q0 * s + ib * q1 * c),
                a * ia * q0 * q0,
                a * ib * q1 * q1,
                -a * q0 * q1 * (ia - ib),
                a * (1.0 - self.opacity),
            ],
        )
    }
}

/// Scene lowered for per-pixel evaluation, splats in compositing order.
#[derive(Debug, Clone)]
pub(crate) struct Prepared {
    splats: Vec<Projected>,
    background: [f64; 3],
    object_ids: Vec<u32>,
}

impl Prepared {
    pub fn new(scene: &SceneParams) -> Result<Self> {
        scene.validate()?;
        let object_ids = scene.object_ids();
        let splats = scene
            .ordered_splats()
            .into_iter()
            .map(|s| {
                let slot = object_ids.binary_search(&s.object_id).expect("id listed");
                Projected::new(s, slot)
            })
            .collect();
        Ok(Prepared { splats, background: scene.background, object_ids })
    }

    pub fn dim(&self) -> usize {
        self.splats.len() * PARAMS_PER_SPLAT
    }

    pub fn object_ids(&self) -> &[u32] {
        &self.object_ids
    }

    /// Composited color and background weight; per-object weights are
    /// accumulated into `object_weights` when given.
    pub fn shade(&self, xw: [f64; 2], mut object_weights: Option<&mut [f64]>) -> ([f64; 3], f64) {
        let mut color = [0.0; 3];
        let mut trans = 1.0;
        for s in &self.splats {
            let a = s.alpha(xw);
            if a == 0.0 {
                continue;
            }
            let w = trans * a;
            for k in 0..3 {
                color[k] += w * s.color[k];
            }
            if let Some(ow) = object_weights.as_deref_mut() {
                ow[s.object_slot] += w;
            }
            trans *= 1.0 - a;
        }
        for k in 0..3 {
            color[k] += trans * self.background[k];
        }
        (color, trans)
    }

    /// Color plus one derivative block per splat whose footprint covers `xw`.
    pub fn shade_with_jacobian(&self, xw: [f64; 2]) -> ([f64; 3], Vec<SplatBlock>) {
        let n = self.splats.len();
        let mut alpha = Vec::with_capacity(n);
        let mut dalpha = Vec::with_capacity(n);
        let mut front = Vec::with_capacity(n);
        let mut color = [0.0; 3];
        let mut trans = 1.0;
        for s in &self.splats {
            let (a, da) = s.alpha_grad(xw);
            alpha.push(a);
            dalpha.push(da);
            front.push(trans);
            if a == 0.0 {
                continue;
            }
            let w = trans * a;
            for k in 0..3 {
                color[k] += w * s.color[k];
            }
            trans *= 1.0 - a;
        }
        for k in 0..3 {
            color[k] += trans * self.background[k];
        }

        let mut blocks = Vec::new();
        let mut behind = self.background;
        for i in (0..n).rev() {
            let a = alpha[i];
            if a == 0.0 {
                continue;
            }
            let s = &self.splats[i];
            let t = front[i];
            let mut d = [[0.0; 3]; PARAMS_PER_SPLAT];
            for (p, da) in dalpha[i].iter().enumerate() {
                for k in 0..3 {
                    d[p][k] = t * (s.color[k] - behind[k]) * da;
                }
            }
            for k in 0..3 {
                d[6 + k][k] = t * a * s.color[k] * (1.0 - s.color[k]);
            }
            blocks.push(SplatBlock { slot: i, d });
            for k in 0..3 {
                behind[k] = a * s.color[k] + (1.0 - a) * behind[k];
            }
        }
        blocks.reverse();
        (color, blocks)
    }
}

pub(crate) fn blocks_to_matrix(dim: usize, blocks: &[SplatBlock]) -> Matrix3xX<f64> {
    let mut m = Matrix3xX::zeros(dim);
    for b in blocks {
        let base = b.slot * PARAMS_PER_SPLAT;
        for (p, col) in b.d.iter().enumerate() {
            for k in 0..3 {
                m[(k, base + p)] = col[k];
            }
        }
    }
    m
}

/// Squared Mahalanobis distance of pixel position `u` from the splat's
/// projected mean under its projected pixel-space covariance.
pub fn mahalanobis_sq(splat: &GaussianSplat, camera: &CameraPose, u: [f64; 2]) -> f64 {
    Projected::new(splat, 0).local(camera.pixel_to_world(u)).2
}

/// α_i(u) = min(cap, o_i · exp(−½ m²)), zero beyond the footprint cutoff.
pub fn splat_alpha(splat: &GaussianSplat, camera: &CameraPose, u: [f64; 2]) -> f64 {
    Projected::new(splat, 0).alpha(camera.pixel_to_world(u))
}

pub fn render(scene: &SceneParams, camera: &CameraPose) -> Result<Rendering> {
    camera.validate()?;
    let prepared = Prepared::new(scene)?;
    let (w, h) = (camera.width, camera.height);
    let n_obj = prepared.object_ids().len();

    let rows: Vec<Vec<([f64; 3], f64, Vec<f64>)>> = (0..h)
        .into_par_iter()
        .map(|y| {
            (0..w)
                .map(|x| {
                    let xw = camera.pixel_to_world(CameraPose::pixel_center(x, y));
                    let mut ow = vec![0.0; n_obj];
                    let (c, t) = prepared.shade(xw, Some(&mut ow));
                    (c, t, ow)
                })
                .collect()
        })
        .collect();

    let mut image = Image::filled(w, h, [0.0; 3]);
    let mut background_weight = vec![0.0; w * h];
    let mut masks: Vec<ObjectMask> = prepared
        .object_ids()
        .iter()
        .map(|&object_id| ObjectMask { object_id, width: w, height: h, values: vec![0.0; w * h] })
        .collect();
    for (y, row) in rows.into_iter().enumerate() {
        for (x, (c, t, ow)) in row.into_iter().enumerate() {
            let i = y * w + x;
            image.pixels[i] = c;
            background_weight[i] = t;
            for (m, v) in masks.iter_mut().zip(ow) {
                m.values[i] = v;
            }
        }
    }
    Ok(Rendering { image, masks, background_weight })
}

/// Color of a single pixel, identical to the corresponding pixel of [`render`].
pub fn render_pixel(scene: &SceneParams, camera: &CameraPose, x: usize, y: usize) -> Result<[f64; 3]> {
    camera.check_pixel(x, y)?;
    let prepared = Prepared::new(scene)?;
    Ok(prepared.shade(camera.pixel_to_world(CameraPose::pixel_center(x, y)), None).0)
}

/// Exact J_u at each requested pixel, in request order.
pub fn render_jacobian(
    scene: &SceneParams,
    camera: &CameraPose,
    pixels: &[(usize, usize)],
) -> Result<Vec<PixelJacobian>> {
    camera.validate()?;
    for &(x, y) in pixels {
        camera.check_pixel(x, y)?;
    }
    let prepared = Prepared::new(scene)?;
    let dim = prepared.dim();
    Ok(pixels
        .par_iter()
        .map(|&(x, y)| {
            let xw = camera.pixel_to_world(CameraPose::pixel_center(x, y));
            let (_, blocks) = prepared.shade_with_jacobian(xw);
            PixelJacobian::new((x, y), blocks_to_matrix(dim, &blocks))
        })
        .collect())
}

/// Image and Jacobians of every pixel, row-major.
pub fn render_with_jacobians(scene: &SceneParams, camera: &CameraPose) -> Result<(Image, Vec<PixelJacobian>)> {
    camera.validate()?;
    let prepared = Prepared::new(scene)?;
    let dim = prepared.dim();
    let per_pixel: Vec<([f64; 3], PixelJacobian)> = camera
        .pixels()
        .par_iter()
        .map(|&(x, y)| {
            let xw = camera.pixel_to_world(CameraPose::pixel_center(x, y));
            let (c, blocks) = prepared.shade_with_jacobian(xw);
            (c, PixelJacobian::new((x, y), blocks_to_matrix(dim, &blocks)))
        })
        .collect();
    let mut image = Image::filled(camera.width, camera.height, [0.0; 3]);
    let mut jacobians = Vec::with_capacity(per_pixel.len());
    for (i, (c, j)) in per_pixel.into_iter().enumerate() {
        image.pixels[i] = c;
        jacobians.push(j);
    }
    Ok((image, jacobians))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::tests::{arb_scene, splat};
    use crate::scene::{logistic, ParamVector};
    use proptest::prelude::*;

    fn cam(w: usize, h: usize) -> CameraPose {
        CameraPose::new([0.0, 0.0], 0.0, 8.0, w, h).unwrap()
    }

    #[test]
    fn alpha_at_mean_is_opacity() {
        let c = cam(16, 16);
        let s = splat([0.3, -0.2], 0, 0);
        let u = c.world_to_pixel(s.mu);
        assert!((splat_alpha(&s, &c, u) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn alpha_at_mahalanobis_two() {
        let c = cam(16, 16);
        let mut s = splat([0.0, 0.0], 0, 0);
        s.log_scale = [0.5f64.ln(), 2.0f64.ln()];
        s.phi = 0.4;
        // m² = 2 along the splat's first axis: q0 = √2·sx
        let q0 = 2.0f64.sqrt() * 0.5;
        let x = [q0 * 0.4f64.cos(), q0 * 0.4f64.sin()];
        let u = c.world_to_pixel(x);
        assert!((mahalanobis_sq(&s, &c, u) - 2.0).abs() < 1e-12);
        let a = splat_alpha(&s, &c, u);
        assert!((a - 0.5 * (-1.0f64).exp()).abs() < 1e-12);
        assert!((a - 0.18394).abs() < 1e-5);
    }

    #[test]
    fn alpha_far_away_is_zero() {
        let c = cam(16, 16);
        let s = splat([0.0, 0.0], 0, 0);
        let u = c.world_to_pixel([7.2, 0.0]);
        assert!(mahalanobis_sq(&s, &c, u) > 50.0);
        assert_eq!(splat_alpha(&s, &c, u), 0.0);
        // just inside the cutoff the Gaussian is still evaluated
        let u = c.world_to_pixel([7.0, 0.0]);
        assert!(splat_alpha(&s, &c, u) > 0.0);
    }

    #[test]
    fn alpha_is_capped() {
        let c = cam(16, 16);
        let mut s = splat([0.0, 0.0], 0, 0);
        s.opacity_logit = 12.0;
        assert_eq!(splat_alpha(&s, &c, c.world_to_pixel([0.0, 0.0])), ALPHA_CAP);
    }

    #[test]
    fn empty_region_shows_background() {
        let scene = SceneParams::new(vec![splat([100.0, 100.0], 0, 3)], [0.2, 0.4, 0.6]).unwrap();
        let r = render(&scene, &cam(8, 8)).unwrap();
        assert!(r.image.pixels.iter().all(|p| *p == [0.2, 0.4, 0.6]));
        assert!(r.masks[0].values.iter().all(|&m| m == 0.0));
        assert_eq!(r.masks[0].object_id, 3);
    }

    #[test]
    fn single_splat_compositing() {
        let mut s = splat([0.1, 0.05], 0, 0);
        s.color_logit = [1.0, -0.5, 0.2];
        s.opacity_logit = 0.7;
        let bg = [0.9, 0.1, 0.3];
        let scene = SceneParams::new(vec![s.clone()], bg).unwrap();
        let c = cam(12, 10);
        let r = render(&scene, &c).unwrap();
        for (x, y) in [(0, 0), (6, 5), (3, 8)] {
            let a = splat_alpha(&s, &c, CameraPose::pixel_center(x, y));
            let col = s.color();
            let got = r.image.get(x, y);
            for k in 0..3 {
                assert!((got[k] - (a * col[k] + (1.0 - a) * bg[k])).abs() < 1e-15);
            }
            assert!((r.masks[0].get(x, y) - a).abs() < 1e-15);
        }
    }

    #[test]
    fn two_splats_match_direct_formula() {
        let mut a = splat([0.2, 0.1], 1, 0);
        a.color_logit = [2.0, -1.0, 0.0];
        a.log_scale = [-0.3, 0.2];
        a.phi = 0.6;
        let mut b = splat([-0.1, 0.0], 0, 1);
        b.color_logit = [-1.5, 1.0, 0.5];
        b.opacity_logit = 1.2;
        let bg = [0.05, 0.5, 0.95];
        let scene = SceneParams::new(vec![a.clone(), b.clone()], bg).unwrap();
        let c = CameraPose::new([0.05, 0.0], 0.3, 10.0, 20, 20).unwrap();
        let (x, y) = (11, 9);
        let u = CameraPose::pixel_center(x, y);
        // b has the lower depth rank, so it sits in front
        let (ab, aa) = (splat_alpha(&b, &c, u), splat_alpha(&a, &c, u));
        assert!(ab > 0.1 && aa > 0.1);
        let (cb, ca) = (b.color(), a.color());
        let r = render(&scene, &c).unwrap();
        let got = r.image.get(x, y);
        for k in 0..3 {
            let want = ab * cb[k] + (1.0 - ab) * aa * ca[k] + (1.0 - ab) * (1.0 - aa) * bg[k];
            assert!((got[k] - want).abs() < 1e-12);
        }
        assert!((r.mask(1).unwrap().get(x, y) - ab).abs() < 1e-12);
        assert!((r.mask(0).unwrap().get(x, y) - (1.0 - ab) * aa).abs() < 1e-12);
        assert_eq!(render_pixel(&scene, &c, x, y).unwrap(), got);
    }

    #[test]
    fn uncovered_pixel_has_zero_jacobian() {
        let scene = SceneParams::new(vec![splat([50.0, 0.0], 0, 0)], [0.5; 3]).unwrap();
        let j = render_jacobian(&scene, &cam(8, 8), &[(3, 3)]).unwrap();
        assert_eq!(j[0].matrix, Matrix3xX::zeros(9));
    }

    #[test]
    fn color_column_closed_form() {
        let mut s = splat([0.0, 0.0], 0, 0);
        s.color_logit = [0.8, -0.3, 1.1];
        let scene = SceneParams::new(vec![s.clone()], [0.3; 3]).unwrap();
        let c = cam(8, 8);
        let j = &render_jacobian(&scene, &c, &[(5, 2)]).unwrap()[0];
        let w = splat_alpha(&s, &c, CameraPose::pixel_center(5, 2));
        let cr = logistic(0.8);
        assert!((j.matrix[(0, 6)] - w * cr * (1.0 - cr)).abs() < 1e-15);
        assert_eq!(j.matrix[(1, 6)], 0.0);
        assert_eq!(j.matrix[(2, 6)], 0.0);
    }

    #[test]
    fn out_of_bounds_pixel_rejected() {
        let scene = SceneParams::new(vec![splat([0.0, 0.0], 0, 0)], [0.5; 3]).unwrap();
        assert!(matches!(
            render_jacobian(&scene, &cam(8, 8), &[(8, 0)]),
            Err(Error::PixelOutOfBounds { .. })
        ));
    }

    #[test]
    fn render_is_deterministic() {
        let mut s = splat([0.1, 0.2], 0, 0);
        s.phi = 0.3;
        let scene = SceneParams::new(vec![s, splat([-0.2, 0.0], 1, 1)], [0.1, 0.2, 0.3]).unwrap();
        let c = cam(24, 24);
        assert_eq!(render(&scene, &c).unwrap(), render(&scene, &c).unwrap());
    }

    #[test]
    fn jacobian_color_matches_render() {
        let scene = SceneParams::new(
            vec![splat([0.1, 0.2], 0, 0), splat([-0.2, 0.0], 1, 1)],
            [0.1, 0.2, 0.3],
        )
        .unwrap();
        let c = cam(10, 10);
        let (img, jac) = render_with_jacobians(&scene, &c).unwrap();
        assert_eq!(img, render(&scene, &c).unwrap().image);
        assert_eq!(jac.len(), 100);
        assert_eq!(jac[13].pixel, (3, 1));
    }

    fn central_difference(scene: &SceneParams, c: &CameraPose, x: usize, y: usize, j: usize, h: f64) -> [f64; 3] {
        let theta = scene.flatten().unwrap();
        let mut e = vec![0.0; theta.len()];
        e[j] = h;
        let plus = SceneParams::unflatten(&theta.perturb(&ParamVector(e.clone())).unwrap(), scene).unwrap();
        e[j] = -h;
        let minus = SceneParams::unflatten(&theta.perturb(&ParamVector(e)).unwrap(), scene).unwrap();
        let (p, m) = (render_pixel(&plus, c, x, y).unwrap(), render_pixel(&minus, c, x, y).unwrap());
        [0, 1, 2].map(|k| (p[k] - m[k]) / (2.0 * h))
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn convex_and_partitioned(scene in arb_scene(), psi in -3.0f64..3.0) {
            let c = CameraPose::new([0.0, 0.0], psi, 3.0, 12, 12).unwrap();
            let r = render(&scene, &c).unwrap();
            let colors: Vec<[f64; 3]> = scene.splats.iter().map(|s| s.color()).collect();
            for (i, px) in r.image.pixels.iter().enumerate() {
                for k in 0..3 {
                    let lo = colors.iter().map(|c| c[k]).fold(scene.background[k], f64::min);
                    let hi = colors.iter().map(|c| c[k]).fold(scene.background[k], f64::max);
                    prop_assert!(px[k] >= lo - 1e-12 && px[k] <= hi + 1e-12);
                    prop_assert!((0.0..=1.0 + 1e-15).contains(&px[k]));
                }
                let total: f64 = r.masks.iter().map(|m| m.values[i]).sum::<f64>() + r.background_weight[i];
                prop_assert!((total - 1.0).abs() < 1e-12);
                for m in &r.masks {
                    prop_assert!((0.0..=1.0).contains(&m.values[i]));
                }
            }
        }

        // Column j of J_u must describe entry j of flatten(scene): perturbing
        // entry j moves the pixel as column j predicts. The 1e-10 absolute
        // floor is the round-off of a 64-bit central difference at h = 1e-5.
        #[test]
        fn jacobian_matches_central_differences(scene in arb_scene(), px in 0usize..12, py in 0usize..12) {
            let c = CameraPose::new([0.1, -0.1], 0.2, 3.0, 12, 12).unwrap();
            let j = &render_jacobian(&scene, &c, &[(px, py)]).unwrap()[0];
            for col in 0..scene.dim() {
                let fd = central_difference(&scene, &c, px, py, col, 1e-5);
                for k in 0..3 {
                    let a = j.matrix[(k, col)];
                    prop_assert!(
                        (a - fd[k]).abs() <= 1e-5 * fd[k].abs() + 1e-10,
                        "col {} ch {}: analytic {} fd {}", col, k, a, fd[k]
                    );
                }
            }
        }
    }
}
