//! Brute-force reference computations: finite-difference derivatives,
//! dense Laplace covariance and Monte-Carlo propagation.

use nalgebra::{DMatrix, Matrix3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::camera::CameraPose;
use crate::error::{Error, Result};
use crate::fisher::{fisher_full, CovDiag, FisherDiag, NoiseModel, FULL_FISHER_MAX_DIM};
use crate::render::{PixelJacobian, Prepared};
use crate::scene::{param_name, ParamVector, SceneParams};

pub const DEFAULT_FD_STEP: f64 = 1e-5;
pub const DEFAULT_HESSIAN_STEP: f64 = 1e-4;

fn check_step(h: f64) -> Result<()> {
    if h.is_finite() && h > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("step must be > 0, got {h}")))
    }
}

/// Evaluates pixel colors of the scene obtained by replacing θ.
struct PixelProbe<'a> {
    template: &'a SceneParams,
    points: Vec<[f64; 2]>,
}

impl<'a> PixelProbe<'a> {
    fn new(template: &'a SceneParams, camera: &CameraPose, pixels: &[(usize, usize)]) -> Result<Self> {
        camera.validate()?;
        for &(x, y) in pixels {
            camera.check_pixel(x, y)?;
        }
        let points = pixels
            .iter()
            .map(|&(x, y)| camera.pixel_to_world(CameraPose::pixel_center(x, y)))
            .collect();
        Ok(PixelProbe { template, points })
    }

    fn eval_into(&self, theta: &[f64], out: &mut [[f64; 3]]) -> Result<()> {
        let scene = SceneParams::unflatten(&ParamVector(theta.to_vec()), self.template)?;
        let prepared = Prepared::new(&scene)?;
        for (o, &p) in out.iter_mut().zip(&self.points) {
            *o = prepared.shade(p, None).0;
        }
        Ok(())
    }

    fn eval(&self, theta: &[f64]) -> Result<[f64; 3]> {
        let mut out = [[0.0; 3]];
        self.eval_into(theta, &mut out)?;
        Ok(out[0])
    }
}

/// Central differences (C(θ + h e_j) − C(θ − h e_j)) / 2h, one column per
/// parameter.
pub fn fd_jacobian(scene: &SceneParams, camera: &CameraPose, pixel: (usize, usize), h: f64) -> Result<PixelJacobian> {
    check_step(h)?;
    let probe = PixelProbe::new(scene, camera, &[pixel])?;
    let theta = scene.flatten()?.into_inner();
    let d = theta.len();
    let cols = (0..d)
        .into_par_iter()
        .map(|j| {
            let mut t = theta.clone();
            t[j] = theta[j] + h;
            let plus = probe.eval(&t)?;
            t[j] = theta[j] - h;
            let minus = probe.eval(&t)?;
            Ok([0, 1, 2].map(|c| (plus[c] - minus[c]) / (2.0 * h)))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut m = nalgebra::Matrix3xX::zeros(d);
    for (j, col) in cols.iter().enumerate() {
        for c in 0..3 {
            m[(c, j)] = col[c];
        }
    }
    Ok(PixelJacobian::new(pixel, m))
}

/// Per-channel d×d Hessians by second-order central differences. Every
/// entry is evaluated independently, so the result is not symmetrized.
pub fn fd_hessian(scene: &SceneParams, camera: &CameraPose, pixel: (usize, usize), h: f64) -> Result<[DMatrix<f64>; 3]> {
    check_step(h)?;
    let d = scene.dim();
    if d > FULL_FISHER_MAX_DIM {
        return Err(Error::DeskScaleExceeded { dim: d, limit: FULL_FISHER_MAX_DIM });
    }
    let probe = PixelProbe::new(scene, camera, &[pixel])?;
    let theta = scene.flatten()?.into_inner();
    let center = probe.eval(&theta)?;
    let pairs: Vec<(usize, usize)> = (0..d).flat_map(|j| (0..d).map(move |l| (j, l))).collect();
    let entries = pairs
        .par_iter()
        .map(|&(j, l)| {
            let mut t = theta.clone();
            let at = |t: &mut Vec<f64>, dj: f64, dl: f64| -> Result<[f64; 3]> {
                t.copy_from_slice(&theta);
                t[j] += dj;
                t[l] += dl;
                probe.eval(t)
            };
            if j == l {
                let p = at(&mut t, h, 0.0)?;
                let m = at(&mut t, -h, 0.0)?;
                Ok([0, 1, 2].map(|c| (p[c] - 2.0 * center[c] + m[c]) / (h * h)))
            } else {
                let pp = at(&mut t, h, h)?;
                let pm = at(&mut t, h, -h)?;
                let mp = at(&mut t, -h, h)?;
                let mm = at(&mut t, -h, -h)?;
                Ok([0, 1, 2].map(|c| (pp[c] - pm[c] - mp[c] + mm[c]) / (4.0 * h * h)))
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let mut out = [DMatrix::zeros(d, d), DMatrix::zeros(d, d), DMatrix::zeros(d, d)];
    for (&(j, l), e) in pairs.iter().zip(&entries) {
        for c in 0..3 {
            out[c][(j, l)] = e[c];
        }
    }
    Ok(out)
}

/// Root-sum-square of the Frobenius norms of the symmetrized channel
/// Hessians.
pub fn fd_hessian_frobenius(scene: &SceneParams, camera: &CameraPose, pixel: (usize, usize), h: f64) -> Result<f64> {
    let hs = fd_hessian(scene, camera, pixel, h)?;
    let mut sq = 0.0;
    for m in &hs {
        let sym = (m + m.transpose()) * 0.5;
        sq += sym.norm_squared();
    }
    Ok(sq.sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McConfig {
    pub n_samples: usize,
    pub rng_seed: u64,
    /// Multiplier s applied to the covariance before sampling.
    pub scale: f64,
}

impl Default for McConfig {
    fn default() -> Self {
        McConfig { n_samples: 100_000, rng_seed: 0, scale: 1e-2 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct McEstimate {
    pub covariance: Matrix3<f64>,
    pub mean: [f64; 3],
    /// Standard error of the covariance trace.
    pub trace_se: f64,
}

impl McEstimate {
    pub fn trace(&self) -> f64 {
        self.covariance.trace()
    }
}

/// Sample covariance of C(u; θ* + √(s·cov) ⊙ z) at one pixel.
pub fn mc_pixel_variance(
    scene: &SceneParams,
    camera: &CameraPose,
    pixel: (usize, usize),
    cov: &CovDiag,
    mc: &McConfig,
) -> Result<McEstimate> {
    Ok(mc_pixel_variances(scene, camera, &[pixel], cov, mc)?.remove(0))
}

/// Like [`mc_pixel_variance`] at several pixels of one view, sharing the
/// parameter draws. Sample i uses ChaCha8 stream i of `rng_seed`, so the
/// estimate is independent of the worker count.
pub fn mc_pixel_variances(
    scene: &SceneParams,
    camera: &CameraPose,
    pixels: &[(usize, usize)],
    cov: &CovDiag,
    mc: &McConfig,
) -> Result<Vec<McEstimate>> {
    if mc.n_samples < 2 {
        return Err(Error::InvalidArgument("need at least 2 samples".into()));
    }
    if !(mc.scale.is_finite() && mc.scale > 0.0) {
        return Err(Error::InvalidArgument(format!("scale must be > 0, got {}", mc.scale)));
    }
    let theta = scene.flatten()?.into_inner();
    if cov.dim() != theta.len() {
        return Err(Error::DimensionMismatch { expected: theta.len(), actual: cov.dim() });
    }
    let sd: Vec<f64> = cov.values.iter().map(|v| (mc.scale * v).sqrt()).collect();
    let probe = PixelProbe::new(scene, camera, pixels)?;
    let n = mc.n_samples;
    let samples = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(mc.rng_seed);
            rng.set_stream(i as u64);
            let t: Vec<f64> = theta
                .iter()
                .zip(&sd)
                .map(|(&m, &s)| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    m + s * z
                })
                .collect();
            let mut out = vec![[0.0; 3]; pixels.len()];
            probe.eval_into(&t, &mut out)?;
            Ok(out)
        })
        .collect::<Result<Vec<_>>>()?;

    let nf = n as f64;
    Ok((0..pixels.len())
        .map(|p| {
            // shifted by the first sample, so identical draws give exactly zero
            let origin = samples[0][p];
            let mut shift = [0.0; 3];
            for s in &samples {
                for c in 0..3 {
                    shift[c] += s[p][c] - origin[c];
                }
            }
            shift = shift.map(|m| m / nf);
            let mean = [0, 1, 2].map(|c| origin[c] + shift[c]);
            let mut covariance = Matrix3::zeros();
            let mut contrib = Vec::with_capacity(n);
            for s in &samples {
                let r = [0, 1, 2].map(|c| (s[p][c] - origin[c]) - shift[c]);
                for k in 0..3 {
                    for l in 0..3 {
                        covariance[(k, l)] += r[k] * r[l];
                    }
                }
                contrib.push(r[0] * r[0] + r[1] * r[1] + r[2] * r[2]);
            }
            covariance /= nf - 1.0;
            let cm = contrib.iter().sum::<f64>() / nf;
            let cv = contrib.iter().map(|t| (t - cm) * (t - cm)).sum::<f64>() / (nf - 1.0);
            McEstimate { covariance, mean, trace_se: (cv / nf).sqrt() }
        })
        .collect())
}

/// σ²(JᵀJ + λI)⁻¹ over all pixel Jacobians, through a Cholesky factor.
pub fn full_laplace_cov(jacobians: &[PixelJacobian], noise: NoiseModel, lambda: f64) -> Result<DMatrix<f64>> {
    if !(lambda.is_finite() && lambda > 0.0) {
        return Err(Error::InvalidArgument(format!("lambda must be > 0, got {lambda}")));
    }
    let info = fisher_full(jacobians, noise)?;
    let var = noise.sigma * noise.sigma;
    let d = info.nrows();
    // σ²(JᵀJ + λI)⁻¹ = (I + (λ/σ²) I)⁻¹ with I = JᵀJ/σ²
    let a = info + DMatrix::identity(d, d) * (lambda / var);
    let chol = a.cholesky().ok_or(Error::NotPositiveDefinite)?;
    Ok(chol.inverse())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LaplaceRatio {
    pub index: usize,
    pub name: String,
    pub full: f64,
    pub diagonal: f64,
    pub ratio: f64,
}

/// Diagonal of the dense Laplace covariance against the diagonal
/// approximation, entry by entry.
pub fn laplace_ratio_table(full: &DMatrix<f64>, diag: &CovDiag) -> Result<Vec<LaplaceRatio>> {
    if full.nrows() != diag.dim() || full.ncols() != diag.dim() {
        return Err(Error::DimensionMismatch { expected: diag.dim(), actual: full.nrows() });
    }
    Ok(diag
        .values
        .iter()
        .enumerate()
        .map(|(j, &dv)| LaplaceRatio {
            index: j,
            name: param_name(j),
            full: full[(j, j)],
            diagonal: dv,
            ratio: full[(j, j)] / dv,
        })
        .collect())
}

/// Size of the first- and second-order terms of the loss expansion around
/// θ* for δ ~ N(0, diag cov): linear = sqrt(Σ g_j² cov_j) is the std of gᵀδ,
/// quadratic = ½ Σ F_j cov_j is the mean of ½ δᵀ diag(F) δ.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TaylorTerms {
    pub linear: f64,
    pub quadratic: f64,
    pub ratio: f64,
}

pub fn taylor_terms(gradient: &ParamVector, fisher: &FisherDiag, cov: &CovDiag) -> Result<TaylorTerms> {
    let d = cov.dim();
    if gradient.len() != d || fisher.dim() != d {
        return Err(Error::DimensionMismatch { expected: d, actual: gradient.len().max(fisher.dim()) });
    }
    let linear = gradient
        .as_slice()
        .iter()
        .zip(&cov.values)
        .map(|(g, c)| g * g * c)
        .sum::<f64>()
        .sqrt();
    let quadratic = 0.5 * fisher.values.iter().zip(&cov.values).map(|(f, c)| f * c).sum::<f64>();
    Ok(TaylorTerms { linear, quadratic, ratio: linear / quadratic })
}
