//! Named benchmark scenes with their training views, candidate rings and
//! held-out views.
//!
//! * `one-splat`: a single anisotropic splat.
//! * `three-splat`: three large overlapping splats that cover the whole
//!   32×32 training views, used for Jacobian and Monte-Carlo checks.
//! * `two-object`: object 0 (A) at the origin, seen by the training views;
//!   object 1 (B) far enough out that no training view touches its
//!   footprint. The candidate ring is centered on A.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::camera::CameraPose;
use crate::error::{Error, Result};
use crate::nbv::{ring_poses, CandidateSpec};
use crate::scene::{GaussianSplat, SceneParams};
use crate::train::{LearningRates, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Preset {
    OneSplat,
    ThreeSplat,
    TwoObject,
}

impl Preset {
    pub const ALL: [Preset; 3] = [Preset::OneSplat, Preset::ThreeSplat, Preset::TwoObject];

    pub fn name(&self) -> &'static str {
        match self {
            Preset::OneSplat => "one-splat",
            Preset::ThreeSplat => "three-splat",
            Preset::TwoObject => "two-object",
        }
    }

    pub fn gt_scene(&self) -> SceneParams {
        let splats = match self {
            Preset::OneSplat => vec![splat([0.1, -0.05], [0.5, 0.3], 0.4, 1.0, [1.2, -0.4, -1.0], 0, 0)],
            Preset::ThreeSplat => vec![
                splat([0.125, -0.125], [1.3, 0.8], 0.0, 0.3, [1.5, -1.0, 0.2], 0, 0),
                splat([-0.375, 0.25], [0.9, 1.4], PI / 2.0, 0.6, [-1.2, 0.9, -0.4], 1, 1),
                splat([0.375, 0.5], [1.6, 1.1], 0.0, 0.1, [0.3, 0.4, 1.6], 2, 1),
            ],
            Preset::TwoObject => vec![
                splat([0.0, 0.0], [0.18, 0.18], 0.0, 1.0, [-1.5, 2.0, -1.0], 0, 0),
                splat([0.0, 0.0], [0.3, 0.3], 0.0, 1.5, [2.0, -1.5, -1.0], 1, 0),
                splat([4.1, 0.0], [0.35, 0.22], 0.4, 1.5, [-2.5, -1.5, 2.5], 2, 1),
                splat([4.25, 0.12], [0.18, 0.18], 0.0, 1.0, [2.5, 2.5, -2.0], 3, 1),
            ],
        };
        let background = match self {
            Preset::ThreeSplat => [0.15, 0.2, 0.25],
            _ => [0.1, 0.1, 0.1],
        };
        SceneParams::new(splats, background).expect("preset scene is valid")
    }

    /// Ring of four posed training views.
    pub fn training_views(&self) -> Vec<CameraPose> {
        match self {
            Preset::OneSplat => ring_poses([0.0, 0.0], 0.2, 4, 0.0, 12.0, 32, 32),
            Preset::ThreeSplat => ring_poses([0.0, 0.0], 0.25, 4, 0.0, 8.0, 32, 32),
            Preset::TwoObject => ring_poses([0.0, 0.0], 0.15, 4, 0.0, 20.0, 32, 32),
        }
    }

    pub fn candidate_spec(&self) -> CandidateSpec {
        match self {
            Preset::TwoObject => CandidateSpec::Ring {
                center: [0.0, 0.0],
                radius: 2.0,
                count: 8,
                phase: 0.0,
                zoom: 10.0,
                width: 32,
                height: 72,
            },
            _ => CandidateSpec::Ring {
                center: [0.0, 0.0],
                radius: 0.5,
                count: 8,
                phase: 0.0,
                zoom: 8.0,
                width: 32,
                height: 32,
            },
        }
    }

    /// Views used only to measure reconstruction quality.
    pub fn held_out_views(&self) -> Vec<CameraPose> {
        match self {
            Preset::TwoObject => {
                let mut views = ring_poses([0.0, 0.0], 0.15, 2, PI / 4.0, 20.0, 32, 32);
                views.extend(ring_poses([4.15, 0.05], 0.1, 4, PI / 4.0, 24.0, 32, 32));
                views
            }
            _ => self
                .training_views()
                .into_iter()
                .map(|mut c| {
                    c.psi += PI / 4.0;
                    c
                })
                .collect(),
        }
    }

    /// Fixed pixels of the first training view used by the propagation
    /// checks.
    pub fn benchmark_pixels(&self) -> [(usize, usize); 5] {
        [(16, 16), (5, 7), (26, 9), (9, 25), (22, 22)]
    }

    /// Training defaults that are stable on this preset.
    pub fn train_config(&self, seed: u64) -> TrainConfig {
        let learning_rates = match self {
            Preset::TwoObject => LearningRates {
                position: 2e-4,
                log_scale: 2e-4,
                rotation: 2e-4,
                opacity: 2e-2,
                color: 2e-2,
            },
            _ => LearningRates::default(),
        };
        TrainConfig { total_steps: 300, learning_rates, rng_seed: seed, ..TrainConfig::default() }
    }

    /// Ground truth with seeded jitter on the geometry, opacity reset to
    /// 0.5 and colors drawn near gray: the usual starting point of a fit.
    pub fn init_scene(&self, seed: u64) -> SceneParams {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = |sd: f64| Normal::new(0.0, sd).expect("finite sd").sample(&mut rng);
        let mut scene = self.gt_scene();
        for s in &mut scene.splats {
            s.mu = s.mu.map(|m| m + draw(0.03));
            s.log_scale = s.log_scale.map(|l| l + draw(0.05));
            s.phi += draw(0.05);
            s.opacity_logit = draw(0.2);
            s.color_logit = [draw(0.3), draw(0.3), draw(0.3)];
        }
        scene
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Preset {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Preset::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown preset `{s}`")))
    }
}

fn splat(
    mu: [f64; 2],
    scale: [f64; 2],
    phi: f64,
    opacity_logit: f64,
    color_logit: [f64; 3],
    depth_rank: i64,
    object_id: u32,
) -> GaussianSplat {
    GaussianSplat {
        mu,
        log_scale: scale.map(f64::ln),
        phi,
        opacity_logit,
        color_logit,
        depth_rank,
        object_id,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::render::{mahalanobis_sq, render};

    #[test]
    fn names_round_trip() {
        for p in Preset::ALL {
            assert_eq!(p.name().parse::<Preset>().unwrap(), p);
        }
        assert!("four-splat".parse::<Preset>().is_err());
    }

    #[test]
    fn three_splat_covers_training_views() {
        let p = Preset::ThreeSplat;
        let scene = p.gt_scene();
        for cam in p.training_views() {
            for (x, y) in cam.pixels() {
                let u = CameraPose::pixel_center(x, y);
                for s in &scene.splats {
                    assert!(mahalanobis_sq(s, &cam, u) < 25.0);
                }
            }
        }
    }

    #[test]
    fn two_object_b_outside_training_views() {
        let p = Preset::TwoObject;
        let scene = p.gt_scene();
        for cam in p.training_views() {
            let r = render(&scene, &cam).unwrap();
            assert!(r.mask(1).unwrap().values.iter().all(|&m| m == 0.0));
            assert!(r.mask(0).unwrap().mass() > 10.0);
        }
    }

    #[test]
    fn init_is_seeded() {
        let p = Preset::TwoObject;
        assert_eq!(p.init_scene(4), p.init_scene(4));
        assert_ne!(p.init_scene(4), p.init_scene(5));
        assert_eq!(p.init_scene(4).splats.len(), p.gt_scene().splats.len());
    }
}
