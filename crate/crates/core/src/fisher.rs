//! Gaussian-noise likelihood, Fisher information and the Laplace covariance.
//!
//! Under i.i.d. pixel noise N(0, σ²) the negative log-likelihood of a view is
//! ℓ = (1/2σ²) Σ_u ‖C(u) − C_gt(u)‖², its gradient is σ⁻² Σ_u J_uᵀ r(u), and
//! the Fisher information is σ⁻² Σ_u J_uᵀ J_u. Only the diagonal is kept
//! outside desk-scale checks; it is either summed over a batch of pixels or
//! accumulated online as an exponential moving average of squared gradients
//! with mixing factor α_t = 0.95 (1 − t/T).

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::camera::CameraPose;
use crate::error::{Error, Result};
use crate::render::{Image, PixelJacobian, Prepared};
use crate::scene::{ParamVector, SceneParams, PARAMS_PER_SPLAT};

/// Tikhonov regularizer added to the Fisher diagonal before inversion.
pub const DEFAULT_LAMBDA: f64 = 1e-4;

/// Largest parameter dimension for which a dense d×d Fisher is formed.
pub const FULL_FISHER_MAX_DIM: usize = 200;

/// Initial EMA mixing factor, decayed linearly to zero at t = T.
pub const EMA_ALPHA_START: f64 = 0.95;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    pub sigma: f64,
}

impl NoiseModel {
    pub fn new(sigma: f64) -> Result<Self> {
        if !(sigma.is_finite() && sigma > 0.0) {
            return Err(Error::InvalidArgument(format!("sigma must be > 0, got {sigma}")));
        }
        Ok(NoiseModel { sigma })
    }

    pub fn inv_var(&self) -> f64 {
        1.0 / (self.sigma * self.sigma)
    }
}

impl Default for NoiseModel {
    fn default() -> Self {
        NoiseModel { sigma: 1.0 }
    }
}

/// Diagonal Fisher approximation, possibly mid-way through online accumulation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FisherDiag {
    pub values: Vec<f64>,
    pub step_count: usize,
    pub total_steps: usize,
}

impl FisherDiag {
    pub fn zeros(dim: usize, total_steps: usize) -> Self {
        FisherDiag { values: vec![0.0; dim], step_count: 0, total_steps }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

/// Diagonal of the Laplace posterior covariance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CovDiag {
    pub values: Vec<f64>,
    pub lambda: f64,
}

impl CovDiag {
    pub fn dim(&self) -> usize {
        self.values.len()
    }

    /// Every entry multiplied by `s`.
    pub fn scaled(&self, s: f64) -> CovDiag {
        CovDiag { values: self.values.iter().map(|v| v * s).collect(), lambda: self.lambda }
    }

    pub fn frobenius(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

fn check_same_size(pred: &Image, gt: &Image) -> Result<()> {
    if !pred.same_size(gt) {
        return Err(Error::DimensionMismatch {
            expected: pred.pixels.len(),
            actual: gt.pixels.len(),
        });
    }
    Ok(())
}

fn check_dims(jacobians: &[PixelJacobian]) -> Result<usize> {
    let d = jacobians.first().map_or(0, PixelJacobian::dim);
    if let Some(j) = jacobians.iter().find(|j| j.dim() != d) {
        return Err(Error::DimensionMismatch { expected: d, actual: j.dim() });
    }
    Ok(d)
}

/// ℓ = (1/2σ²) Σ_{u,channels} (pred − gt)².
pub fn nll(pred: &Image, gt: &Image, noise: NoiseModel) -> Result<f64> {
    check_same_size(pred, gt)?;
    let sq: f64 = pred
        .pixels
        .iter()
        .zip(&gt.pixels)
        .map(|(p, g)| (0..3).map(|k| (p[k] - g[k]).powi(2)).sum::<f64>())
        .sum();
    Ok(0.5 * noise.inv_var() * sq)
}

/// σ⁻² Σ_u J_uᵀ (pred(u) − gt(u)) over the pixels the Jacobians cover.
pub fn nll_gradient(
    jacobians: &[PixelJacobian],
    pred: &Image,
    gt: &Image,
    noise: NoiseModel,
) -> Result<ParamVector> {
    check_same_size(pred, gt)?;
    let d = check_dims(jacobians)?;
    let mut grad = vec![0.0; d];
    for j in jacobians {
        let (x, y) = j.pixel;
        if x >= pred.width || y >= pred.height {
            return Err(Error::PixelOutOfBounds { x, y, width: pred.width, height: pred.height });
        }
        let (p, g) = (pred.get(x, y), gt.get(x, y));
        let r = [p[0] - g[0], p[1] - g[1], p[2] - g[2]];
        for (col, out) in j.matrix.column_iter().zip(grad.iter_mut()) {
            *out += col[0] * r[0] + col[1] * r[1] + col[2] * r[2];
        }
    }
    let s = noise.inv_var();
    Ok(ParamVector(grad.into_iter().map(|v| v * s).collect()))
}

/// I = σ⁻² Σ_u J_uᵀ J_u, dense. Desk scale only.
pub fn fisher_full(jacobians: &[PixelJacobian], noise: NoiseModel) -> Result<DMatrix<f64>> {
    let d = check_dims(jacobians)?;
    if d > FULL_FISHER_MAX_DIM {
        return Err(Error::DeskScaleExceeded { dim: d, limit: FULL_FISHER_MAX_DIM });
    }
    let mut info = DMatrix::zeros(d, d);
    for j in jacobians {
        info.gemm_tr(1.0, &j.matrix, &j.matrix, 1.0);
    }
    info *= noise.inv_var();
    Ok(info)
}

/// Entry j = σ⁻² Σ_u Σ_k [J_u]_{kj}², the diagonal of [`fisher_full`]
/// without forming it.
pub fn fisher_diag_batch(jacobians: &[PixelJacobian], noise: NoiseModel) -> Result<FisherDiag> {
    let d = check_dims(jacobians)?;
    let mut values = vec![0.0; d];
    for j in jacobians {
        for (col, out) in j.matrix.column_iter().zip(values.iter_mut()) {
            *out += col[0] * col[0] + col[1] * col[1] + col[2] * col[2];
        }
    }
    let s = noise.inv_var();
    values.iter_mut().for_each(|v| *v *= s);
    Ok(FisherDiag { values, step_count: 0, total_steps: 0 })
}

/// α_t = 0.95 (1 − t/T).
pub fn ema_alpha(t: usize, total_steps: usize) -> f64 {
    EMA_ALPHA_START * (1.0 - t as f64 / total_steps as f64)
}

/// One online step: out_j = α_t·state_j + (1 − α_t)·grad_j².
pub fn ema_update(state: &FisherDiag, grad: &ParamVector, t: usize) -> Result<FisherDiag> {
    if t > state.total_steps {
        return Err(Error::StepOutOfRange { step: t, total: state.total_steps });
    }
    if grad.len() != state.dim() {
        return Err(Error::DimensionMismatch { expected: state.dim(), actual: grad.len() });
    }
    let alpha = ema_alpha(t, state.total_steps);
    let keep = 1.0 - alpha;
    let values = state
        .values
        .iter()
        .zip(grad.as_slice())
        .map(|(&s, &g)| alpha.mul_add(s, keep * g * g))
        .collect();
    Ok(FisherDiag { values, step_count: t, total_steps: state.total_steps })
}

/// Σ_j = 1 / (I_j + λ).
pub fn laplace_cov(fisher: &FisherDiag, lambda: f64) -> Result<CovDiag> {
    if !(lambda.is_finite() && lambda > 0.0) {
        return Err(Error::InvalidArgument(format!("lambda must be > 0, got {lambda}")));
    }
    Ok(CovDiag {
        values: fisher.values.iter().map(|f| 1.0 / (f + lambda)).collect(),
        lambda,
    })
}

/// Loss and gradient of one view.
#[derive(Debug, Clone)]
pub struct ViewGradient {
    pub image: Image,
    pub loss: f64,
    pub gradient: ParamVector,
}

/// Renders `camera` and returns ℓ and ∇ℓ against `gt` in one pass, without
/// materializing per-pixel Jacobians. Rows are reduced in a fixed order, so
/// the result does not depend on the thread count.
pub fn view_nll_gradient(
    scene: &SceneParams,
    camera: &CameraPose,
    gt: &Image,
    noise: NoiseModel,
) -> Result<ViewGradient> {
    camera.validate()?;
    if gt.width != camera.width || gt.height != camera.height {
        return Err(Error::DimensionMismatch {
            expected: camera.pixel_count(),
            actual: gt.pixels.len(),
        });
    }
    let prepared = Prepared::new(scene)?;
    let d = prepared.dim();
    let w = camera.width;

    let rows: Vec<(Vec<[f64; 3]>, f64, Vec<f64>)> = (0..camera.height)
        .into_par_iter()
        .map(|y| {
            let mut colors = Vec::with_capacity(w);
            let mut sq = 0.0;
            let mut grad = vec![0.0; d];
            for x in 0..w {
                let xw = camera.pixel_to_world(CameraPose::pixel_center(x, y));
                let (c, blocks) = prepared.shade_with_jacobian(xw);
                let g = gt.get(x, y);
                let r = [c[0] - g[0], c[1] - g[1], c[2] - g[2]];
                sq += r[0] * r[0] + r[1] * r[1] + r[2] * r[2];
                for b in &blocks {
                    let base = b.slot * PARAMS_PER_SPLAT;
                    for (p, col) in b.d.iter().enumerate() {
                        grad[base + p] += col[0] * r[0] + col[1] * r[1] + col[2] * r[2];
                    }
                }
                colors.push(c);
            }
            (colors, sq, grad)
        })
        .collect();

    let mut pixels = Vec::with_capacity(camera.pixel_count());
    let mut sq = 0.0;
    let mut grad = vec![0.0; d];
    for (colors, row_sq, row_grad) in rows {
        pixels.extend(colors);
        sq += row_sq;
        for (g, v) in grad.iter_mut().zip(row_grad) {
            *g += v;
        }
    }
    let s = noise.inv_var();
    Ok(ViewGradient {
        image: Image { width: camera.width, height: camera.height, pixels },
        loss: 0.5 * s * sq,
        gradient: ParamVector(grad.into_iter().map(|v| v * s).collect()),
    })
}
