//! The oracle suite behind the `verify` subcommand: every analytic quantity
//! is measured against its brute-force counterpart on a preset.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::camera::CameraPose;
use crate::error::Result;
use crate::fisher::{
    ema_alpha, ema_update, fisher_diag_batch, fisher_full, laplace_cov, view_nll_gradient, CovDiag, FisherDiag,
    NoiseModel,
    DEFAULT_LAMBDA,
};
use crate::oracle::{
    fd_hessian_frobenius, fd_jacobian, full_laplace_cov, laplace_ratio_table, mc_pixel_variances, taylor_terms,
    LaplaceRatio, McConfig, TaylorTerms, DEFAULT_FD_STEP, DEFAULT_HESSIAN_STEP,
};
use crate::presets::Preset;
use crate::propagate::{pixel_variance, truncation_bound};
use crate::render::{render, render_jacobian, render_with_jacobians, PixelJacobian};
use crate::scene::{ParamVector, SceneParams};
use crate::train::{train, View};

/// |a − b| / (1e-8 + |b|), the worst entry over the matrix.
pub fn jacobian_rel_error(analytic: &PixelJacobian, reference: &PixelJacobian) -> f64 {
    analytic
        .matrix
        .iter()
        .zip(reference.matrix.iter())
        .map(|(a, b)| (a - b).abs() / (1e-8 + b.abs()))
        .fold(0.0, f64::max)
}

/// Laplace covariance from the batch diagonal Fisher over all pixels of
/// the given views.
pub fn batch_cov(scene: &SceneParams, cameras: &[CameraPose], noise: NoiseModel, lambda: f64) -> Result<CovDiag> {
    let mut fisher = FisherDiag::zeros(scene.dim(), 0);
    for cam in cameras {
        let (_, js) = render_with_jacobians(scene, cam)?;
        let f = fisher_diag_batch(&js, noise)?;
        fisher.values.iter_mut().zip(&f.values).for_each(|(a, b)| *a += b);
    }
    laplace_cov(&fisher, lambda)
}

/// Replays per-step gradients through the EMA from a zero state.
pub fn replay_ema(gradients: &[ParamVector], dim: usize, total_steps: usize) -> Result<FisherDiag> {
    let mut state = FisherDiag::zeros(dim, total_steps);
    for (i, g) in gradients.iter().enumerate() {
        state = ema_update(&state, g, i + 1)?;
    }
    Ok(state)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub measured: f64,
    pub limit: f64,
    pub passed: bool,
}

impl Check {
    fn below(name: &str, measured: f64, limit: f64) -> Check {
        Check { name: name.into(), measured, limit, passed: measured < limit }
    }
}

/// One measured error, for the CSV.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Measurement {
    pub check: String,
    pub item: String,
    pub value: f64,
}

#[derive(Debug, Clone)]
pub struct VerifyConfig {
    pub preset: Preset,
    pub seed: u64,
    pub jacobian_pixels: usize,
    pub mc_samples: usize,
    pub train_steps: usize,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        VerifyConfig { preset: Preset::ThreeSplat, seed: 0, jacobian_pixels: 20, mc_samples: 100_000, train_steps: 300 }
    }
}

#[derive(Debug, Clone)]
pub struct VerifyReport {
    pub checks: Vec<Check>,
    pub measurements: Vec<Measurement>,
    pub laplace_ratios: Vec<LaplaceRatio>,
    pub taylor: TaylorTerms,
}

impl VerifyReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn table(&self) -> String {
        let mut out = format!("{:<18} {:>14} {:>12}  result\n", "check", "measured", "limit");
        for c in &self.checks {
            out += &format!(
                "{:<18} {:>14.6e} {:>12.3e}  {}\n",
                c.name,
                c.measured,
                c.limit,
                if c.passed { "PASS" } else { "FAIL" }
            );
        }
        out += &format!(
            "taylor terms: linear {:.6e}, quadratic {:.6e}, ratio {:.3e}\n",
            self.taylor.linear, self.taylor.quadratic, self.taylor.ratio
        );
        out
    }
}

pub fn run_verify(cfg: &VerifyConfig) -> Result<VerifyReport> {
    let preset = cfg.preset;
    let gt = preset.gt_scene();
    let cams = preset.training_views();
    let noise = NoiseModel::default();
    let mut checks = Vec::new();
    let mut measurements = Vec::new();
    let mut record = |check: &str, item: String, value: f64| {
        measurements.push(Measurement { check: check.into(), item, value })
    };

    // analytic vs finite-difference Jacobians at random pixels
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut worst: f64 = 0.0;
    for _ in 0..cfg.jacobian_pixels {
        let v = rng.random_range(0..cams.len());
        let px = (rng.random_range(0..cams[v].width), rng.random_range(0..cams[v].height));
        let an = &render_jacobian(&gt, &cams[v], &[px])?[0];
        let fd = fd_jacobian(&gt, &cams[v], px, DEFAULT_FD_STEP)?;
        let e = jacobian_rel_error(an, &fd);
        record("jacobian", format!("view{v}:{}:{}", px.0, px.1), e);
        worst = worst.max(e);
    }
    checks.push(Check::below("jacobian", worst, 1e-5));

    // batch diagonal vs diagonal of the dense Fisher
    let (_, js) = render_with_jacobians(&gt, &cams[0])?;
    let full = fisher_full(&js, noise)?;
    let diag = fisher_diag_batch(&js, noise)?;
    let gap = diag.values.iter().enumerate().map(|(j, v)| (v - full[(j, j)]).abs()).fold(0.0, f64::max);
    record("fisher_diag", "max_abs".into(), gap);
    checks.push(Check::below("fisher_diag", gap, 1e-12));

    // online EMA against a replay of the recorded gradients
    let views: Vec<View> = cams
        .iter()
        .map(|c| Ok(View { camera: c.clone(), image: render(&gt, c)?.image }))
        .collect::<Result<_>>()?;
    let mut tc = preset.train_config(cfg.seed);
    tc.total_steps = cfg.train_steps;
    let fit = train(&preset.init_scene(cfg.seed), &views, &tc)?;
    let replay = replay_ema(&fit.trace.gradients, gt.dim(), tc.total_steps)?;
    let mut gap = replay.values.iter().zip(&fit.fisher.values).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    if ema_alpha(0, tc.total_steps) != 0.95 || ema_alpha(tc.total_steps, tc.total_steps) != 0.0 {
        gap = f64::INFINITY;
    }
    record("ema_replay", "max_abs".into(), gap);
    checks.push(Check::below("ema_replay", gap, 1e-12));

    // parameters no training pixel depends on keep the prior variance
    let fit_cov = laplace_cov(&fit.fisher, tc.lambda)?;
    let observed = batch_cov(&fit.scene, &cams, noise, tc.lambda)?;
    let unobserved: Vec<usize> =
        (0..gt.dim()).filter(|&j| observed.values[j] == 1.0 / tc.lambda).collect();
    if !unobserved.is_empty() {
        let worst = unobserved
            .iter()
            .map(|&j| (fit_cov.values[j] * tc.lambda - 1.0).abs())
            .fold(0.0, f64::max);
        record("prior_variance", format!("{} params", unobserved.len()), worst);
        checks.push(Check::below("prior_variance", worst, 1e-9));
    }

    // delta method vs Monte Carlo at the benchmark pixels
    let cov = batch_cov(&gt, &cams, noise, DEFAULT_LAMBDA)?;
    let pixels = preset.benchmark_pixels();
    let jac = render_jacobian(&gt, &cams[0], &pixels)?;
    let analytic: Vec<f64> = jac.iter().map(|j| Ok(pixel_variance(j, &cov)?.trace())).collect::<Result<_>>()?;
    let hess: Vec<f64> = pixels
        .iter()
        .map(|&p| fd_hessian_frobenius(&gt, &cams[0], p, DEFAULT_HESSIAN_STEP))
        .collect::<Result<_>>()?;
    let rel_gap = |s: f64| -> Result<Vec<(f64, f64, f64)>> {
        let mc = McConfig { n_samples: cfg.mc_samples, rng_seed: cfg.seed, scale: s };
        let est = mc_pixel_variances(&gt, &cams[0], &pixels, &cov, &mc)?;
        Ok(est
            .iter()
            .zip(&analytic)
            .map(|(e, a)| ((e.trace() - s * a).abs(), s * a, e.trace_se))
            .collect())
    };
    let small = rel_gap(1e-2)?;
    let large = rel_gap(1.0)?;
    let tiny = rel_gap(1e-3)?;
    let worst = small.iter().map(|(g, a, _)| g / a).fold(0.0, f64::max);
    for (p, (g, a, _)) in pixels.iter().zip(&small) {
        record("mc_delta", format!("{}:{}", p.0, p.1), g / a);
    }
    checks.push(Check::below("mc_delta", worst, 0.05));
    let mean = |v: &[(f64, f64, f64)]| v.iter().map(|(g, a, _)| g / a).sum::<f64>() / v.len() as f64;
    let trend = mean(&small) / mean(&large);
    record("mc_trend", "gap_ratio".into(), trend);
    checks.push(Check::below("mc_trend", trend, 1.0));

    let mut excess = f64::NEG_INFINITY;
    for (s, rows) in [(1e-2f64, &small), (1e-3, &tiny)] {
        for ((p, (g, _, se)), h) in pixels.iter().zip(rows.iter()).zip(&hess) {
            let bound = truncation_bound(*h, s.sqrt() * cov.frobenius())? + 3.0 * se;
            record("truncation", format!("s={s:e}:{}:{}", p.0, p.1), g - bound);
            excess = excess.max(g - bound);
        }
    }
    checks.push(Check { name: "truncation".into(), measured: excess, limit: 0.0, passed: excess <= 0.0 });

    // masks plus background partition unity everywhere
    let mut worst: f64 = 0.0;
    for cam in &cams {
        let r = render(&gt, cam)?;
        for i in 0..r.image.pixels.len() {
            let total: f64 = r.masks.iter().map(|m| m.values[i]).sum::<f64>() + r.background_weight[i];
            worst = worst.max((total - 1.0).abs());
        }
    }
    record("mask_partition", "max_abs".into(), worst);
    checks.push(Check::below("mask_partition", worst, 1e-12));

    let dense = full_laplace_cov(&js, noise, DEFAULT_LAMBDA)?;
    let laplace_ratios = laplace_ratio_table(&dense, &laplace_cov(&diag, DEFAULT_LAMBDA)?)?;
    // first- vs second-order loss terms at the fitted scene
    let mut grad = ParamVector::zeros(gt.dim());
    let mut fitted_fisher = FisherDiag::zeros(gt.dim(), 0);
    for v in &views {
        let g = view_nll_gradient(&fit.scene, &v.camera, &v.image, noise)?;
        grad.0.iter_mut().zip(g.gradient.as_slice()).for_each(|(a, b)| *a += b);
        let (_, js) = render_with_jacobians(&fit.scene, &v.camera)?;
        let f = fisher_diag_batch(&js, noise)?;
        fitted_fisher.values.iter_mut().zip(&f.values).for_each(|(a, b)| *a += b);
    }
    let taylor = taylor_terms(&grad, &fitted_fisher, &laplace_cov(&fitted_fisher, DEFAULT_LAMBDA)?)?;

    Ok(VerifyReport { checks, measurements, laplace_ratios, taylor })
}
