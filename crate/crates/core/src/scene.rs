//! Scene parameterization.
//!
//! A scene is an ordered set of anisotropic 2D Gaussian splats composited in
//! a fixed `depth_rank` order over a constant background. Every optimized
//! quantity is an unconstrained real: opacity and color go through the
//! logistic function and the axis scales through `exp`, so any parameter
//! vector describes a valid scene.
//!
//! The flattened parameter vector uses one canonical layout that the
//! renderer, the Fisher accumulator and the covariance code all share: per
//! splat, in ascending `depth_rank` order,
//!
//! ```text
//! [mu_x, mu_y, log_sx, log_sy, phi, opacity_logit, r_logit, g_logit, b_logit]
//! ```

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of optimized reals per splat.
pub const PARAMS_PER_SPLAT: usize = 9;

pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaussianSplat {
    /// World-space mean.
    pub mu: [f64; 2],
    /// Per-axis log standard deviations, in log world units.
    pub log_scale: [f64; 2],
    /// Rotation of the first axis, radians.
    pub phi: f64,
    pub opacity_logit: f64,
    pub color_logit: [f64; 3],
    /// Compositing order, front to back. Not optimized.
    pub depth_rank: i64,
    /// Object label. Not optimized.
    pub object_id: u32,
}

impl GaussianSplat {
    pub fn opacity(&self) -> f64 {
        logistic(self.opacity_logit)
    }

    pub fn color(&self) -> [f64; 3] {
        self.color_logit.map(logistic)
    }

    pub fn scale(&self) -> [f64; 2] {
        self.log_scale.map(f64::exp)
    }

    fn optimized(&self) -> [f64; PARAMS_PER_SPLAT] {
        [
            self.mu[0],
            self.mu[1],
            self.log_scale[0],
            self.log_scale[1],
            self.phi,
            self.opacity_logit,
            self.color_logit[0],
            self.color_logit[1],
            self.color_logit[2],
        ]
    }

    fn set_optimized(&mut self, p: &[f64]) {
        self.mu = [p[0], p[1]];
        self.log_scale = [p[2], p[3]];
        self.phi = p[4];
        self.opacity_logit = p[5];
        self.color_logit = [p[6], p[7], p[8]];
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneParams {
    pub splats: Vec<GaussianSplat>,
    /// Constant RGB behind every splat, in [0,1]. Not optimized.
    pub background: [f64; 3],
}

impl SceneParams {
    pub fn new(splats: Vec<GaussianSplat>, background: [f64; 3]) -> Result<Self> {
        let scene = SceneParams { splats, background };
        scene.validate()?;
        Ok(scene)
    }

    /// Checks the invariants every downstream module relies on.
    pub fn validate(&self) -> Result<()> {
        if self.splats.is_empty() {
            return Err(Error::EmptyScene);
        }
        if self.background.iter().any(|c| !(0.0..=1.0).contains(c)) {
            return Err(Error::InvalidScene(format!(
                "background {:?} outside [0,1]",
                self.background
            )));
        }
        for (i, s) in self.splats.iter().enumerate() {
            if s.optimized().iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidScene(format!("splat {i} has a non-finite parameter")));
            }
            if s.scale().iter().any(|v| !(v.is_finite() && *v > 0.0)) {
                return Err(Error::InvalidScene(format!("splat {i} scale overflows")));
            }
        }
        let mut ranks: Vec<i64> = self.splats.iter().map(|s| s.depth_rank).collect();
        ranks.sort_unstable();
        if let Some(w) = ranks.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::InvalidScene(format!("duplicate depth_rank {}", w[0])));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.splats.len()
    }

    pub fn is_empty(&self) -> bool {
        self.splats.is_empty()
    }

    /// Parameter dimension d.
    pub fn dim(&self) -> usize {
        PARAMS_PER_SPLAT * self.splats.len()
    }

    /// Indices into `splats`, sorted by ascending depth rank. Position `n` in
    /// this list owns parameter block `n` of the flattened vector.
    pub fn depth_order(&self) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.splats.len()).collect();
        order.sort_by_key(|&i| self.splats[i].depth_rank);
        order
    }

    /// Splats in compositing order.
    pub fn ordered_splats(&self) -> Vec<&GaussianSplat> {
        self.depth_order().into_iter().map(|i| &self.splats[i]).collect()
    }

    /// Distinct object ids, ascending.
    pub fn object_ids(&self) -> Vec<u32> {
        let mut ids: Vec<u32> = self.splats.iter().map(|s| s.object_id).collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    }

    pub fn flatten(&self) -> Result<ParamVector> {
        if self.splats.is_empty() {
            return Err(Error::EmptyScene);
        }
        let mut values = Vec::with_capacity(self.dim());
        for i in self.depth_order() {
            values.extend_from_slice(&self.splats[i].optimized());
        }
        Ok(ParamVector(values))
    }

    /// Replaces the optimized fields of `template` with `theta`, keeping the
    /// fixed fields (depth rank, object id, background) and the list order.
    pub fn unflatten(theta: &ParamVector, template: &SceneParams) -> Result<SceneParams> {
        if theta.len() != template.dim() {
            return Err(Error::DimensionMismatch {
                expected: template.dim(),
                actual: theta.len(),
            });
        }
        let mut scene = template.clone();
        for (block, i) in template.depth_order().into_iter().enumerate() {
            scene.splats[i].set_optimized(theta.block(block));
        }
        Ok(scene)
    }
}

/// Parameter groups sharing a learning rate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ParamGroup {
    Position,
    LogScale,
    Rotation,
    Opacity,
    Color,
}

impl ParamGroup {
    pub fn of_index(j: usize) -> ParamGroup {
        match j % PARAMS_PER_SPLAT {
            0 | 1 => ParamGroup::Position,
            2 | 3 => ParamGroup::LogScale,
            4 => ParamGroup::Rotation,
            5 => ParamGroup::Opacity,
            _ => ParamGroup::Color,
        }
    }
}

const PARAM_NAMES: [&str; PARAMS_PER_SPLAT] = [
    "mu_x",
    "mu_y",
    "log_sx",
    "log_sy",
    "phi",
    "opacity_logit",
    "r_logit",
    "g_logit",
    "b_logit",
];

/// Human-readable label of entry `j`, e.g. `splat2.phi`.
pub fn param_name(j: usize) -> String {
    format!("splat{}.{}", j / PARAMS_PER_SPLAT, PARAM_NAMES[j % PARAMS_PER_SPLAT])
}

/// Flattened parameter vector θ in the canonical layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParamVector(pub Vec<f64>);

impl ParamVector {
    pub fn zeros(d: usize) -> Self {
        ParamVector(vec![0.0; d])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    /// The 9 entries belonging to the `n`-th splat in depth order.
    pub fn block(&self, n: usize) -> &[f64] {
        &self.0[n * PARAMS_PER_SPLAT..(n + 1) * PARAMS_PER_SPLAT]
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// θ + δθ.
    pub fn perturb(&self, delta: &ParamVector) -> Result<ParamVector> {
        if self.len() != delta.len() {
            return Err(Error::DimensionMismatch {
                expected: self.len(),
                actual: delta.len(),
            });
        }
        Ok(ParamVector(
            self.0.iter().zip(&delta.0).map(|(a, b)| a + b).collect(),
        ))
    }
}

impl From<Vec<f64>> for ParamVector {
    fn from(v: Vec<f64>) -> Self {
        ParamVector(v)
    }
}

impl std::ops::Index<usize> for ParamVector {
    type Output = f64;
    fn index(&self, j: usize) -> &f64 {
        &self.0[j]
    }
}
