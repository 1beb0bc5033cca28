//! MAP fitting by per-group gradient descent with the diagonal Fisher
//! accumulated online from the same per-step gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::camera::CameraPose;
use crate::error::{Error, Result};
use crate::fisher::{ema_alpha, ema_update, view_nll_gradient, FisherDiag, NoiseModel, DEFAULT_LAMBDA};
use crate::render::Image;
use crate::scene::{ParamGroup, ParamVector, SceneParams};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LearningRates {
    pub position: f64,
    pub log_scale: f64,
    pub rotation: f64,
    pub opacity: f64,
    pub color: f64,
}

impl Default for LearningRates {
    fn default() -> Self {
        LearningRates { position: 1e-3, log_scale: 1e-3, rotation: 1e-3, opacity: 5e-2, color: 5e-2 }
    }
}

impl LearningRates {
    pub fn for_group(&self, g: ParamGroup) -> f64 {
        match g {
            ParamGroup::Position => self.position,
            ParamGroup::LogScale => self.log_scale,
            ParamGroup::Rotation => self.rotation,
            ParamGroup::Opacity => self.opacity,
            ParamGroup::Color => self.color,
        }
    }

    fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("position", self.position),
            ("log_scale", self.log_scale),
            ("rotation", self.rotation),
            ("opacity", self.opacity),
            ("color", self.color),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::InvalidArgument(format!("learning rate {name} = {v}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ViewSchedule {
    RoundRobin,
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub total_steps: usize,
    pub learning_rates: LearningRates,
    pub sigma: f64,
    pub lambda: f64,
    pub rng_seed: u64,
    pub view_schedule: ViewSchedule,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            total_steps: 300,
            learning_rates: LearningRates::default(),
            sigma: 1.0,
            lambda: DEFAULT_LAMBDA,
            rng_seed: 0,
            view_schedule: ViewSchedule::RoundRobin,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.total_steps == 0 {
            return Err(Error::InvalidArgument("total_steps must be >= 1".into()));
        }
        NoiseModel::new(self.sigma)?;
        if !(self.lambda.is_finite() && self.lambda > 0.0) {
            return Err(Error::InvalidArgument(format!("lambda must be > 0, got {}", self.lambda)));
        }
        self.learning_rates.validate()
    }
}

/// A posed ground-truth image.
#[derive(Debug, Clone, PartialEq)]
pub struct View {
    pub camera: CameraPose,
    pub image: Image,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub view_id: usize,
    pub loss: f64,
    pub grad_norm: f64,
    pub alpha: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainTrace {
    pub records: Vec<StepRecord>,
    /// ∇θ ℓ_t of every step, in step order.
    pub gradients: Vec<ParamVector>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub scene: SceneParams,
    pub fisher: FisherDiag,
    pub trace: TrainTrace,
}

/// θ − lr(group(j)) · grad_j.
pub fn sgd_step(theta: &ParamVector, grad: &ParamVector, rates: &LearningRates) -> Result<ParamVector> {
    if theta.len() != grad.len() {
        return Err(Error::DimensionMismatch { expected: theta.len(), actual: grad.len() });
    }
    Ok(ParamVector(
        theta
            .as_slice()
            .iter()
            .zip(grad.as_slice())
            .enumerate()
            .map(|(j, (t, g))| t - rates.for_group(ParamGroup::of_index(j)) * g)
            .collect(),
    ))
}

pub fn train(init: &SceneParams, views: &[View], config: &TrainConfig) -> Result<TrainOutcome> {
    train_with(init, views, config, |_, _, _| Ok(()))
}

/// Runs steps t = 1..=T. `on_step` sees each record together with the
/// updated scene and Fisher state, e.g. for checkpointing.
pub fn train_with<F>(init: &SceneParams, views: &[View], config: &TrainConfig, mut on_step: F) -> Result<TrainOutcome>
where
    F: FnMut(&StepRecord, &SceneParams, &FisherDiag) -> Result<()>,
{
    config.validate()?;
    init.validate()?;
    if views.is_empty() {
        return Err(Error::InvalidArgument("training needs at least one view".into()));
    }
    for (i, v) in views.iter().enumerate() {
        v.camera.validate()?;
        if v.image.width != v.camera.width || v.image.height != v.camera.height {
            return Err(Error::InvalidArgument(format!(
                "view {i}: image is {}x{}, camera expects {}x{}",
                v.image.width, v.image.height, v.camera.width, v.camera.height
            )));
        }
    }
    let noise = NoiseModel::new(config.sigma)?;
    let total = config.total_steps;
    let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
    let mut scene = init.clone();
    let mut theta = scene.flatten()?;
    let mut fisher = FisherDiag::zeros(theta.len(), total);
    let mut trace = TrainTrace::default();

    for t in 1..=total {
        let view_id = match config.view_schedule {
            ViewSchedule::RoundRobin => (t - 1) % views.len(),
            ViewSchedule::Random => rng.random_range(0..views.len()),
        };
        let view = &views[view_id];
        let vg = view_nll_gradient(&scene, &view.camera, &view.image, noise)?;
        if !vg.loss.is_finite() || vg.gradient.as_slice().iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFiniteLoss { step: t });
        }
        theta = sgd_step(&theta, &vg.gradient, &config.learning_rates)?;
        if theta.as_slice().iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteLoss { step: t });
        }
        fisher = ema_update(&fisher, &vg.gradient, t)?;
        scene = SceneParams::unflatten(&theta, &scene)?;
        if scene.validate().is_err() {
            return Err(Error::NonFiniteLoss { step: t });
        }
        let record = StepRecord {
            step: t,
            view_id,
            loss: vg.loss,
            grad_norm: vg.gradient.norm(),
            alpha: ema_alpha(t, total),
        };
        on_step(&record, &scene, &fisher)?;
        trace.records.push(record);
        trace.gradients.push(vg.gradient);
    }
    Ok(TrainOutcome { scene, fisher, trace })
}
