//! Next-best-view selection from object-masked propagated uncertainty, and a
//! simulated capture loop around it.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::camera::CameraPose;
use crate::error::{Error, Result};
use crate::fisher::{laplace_cov, CovDiag};
use crate::propagate::{object_scores, ObjectScore};
use crate::render::{render, Image};
use crate::scene::SceneParams;
use crate::train::{train, TrainConfig, View};

/// Relative band within which aggregate scores count as tied.
pub const TIE_RTOL: f64 = 1e-9;

/// `count` poses on a circle, pose i at angle `phase + 2πi/count`, each
/// rotated so the ring center appears straight up in the image.
pub fn ring_poses(
    center: [f64; 2],
    radius: f64,
    count: usize,
    phase: f64,
    zoom: f64,
    width: usize,
    height: usize,
) -> Vec<CameraPose> {
    (0..count)
        .map(|i| {
            let angle = phase + 2.0 * PI * i as f64 / count as f64;
            let (s, c) = angle.sin_cos();
            CameraPose {
                center: [center[0] + radius * c, center[1] + radius * s],
                psi: angle - PI / 2.0,
                zoom,
                width,
                height,
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub enum CandidateSpec {
    Ring {
        center: [f64; 2],
        radius: f64,
        count: usize,
        phase: f64,
        zoom: f64,
        width: usize,
        height: usize,
    },
    Explicit(Vec<CameraPose>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub id: usize,
    pub camera: CameraPose,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CandidateSet {
    pub candidates: Vec<Candidate>,
}

impl CandidateSet {
    pub fn get(&self, id: usize) -> Option<&Candidate> {
        self.candidates.iter().find(|c| c.id == id)
    }

    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }
}

pub fn generate_candidates(spec: &CandidateSpec) -> Result<CandidateSet> {
    let cameras = match spec {
        CandidateSpec::Ring { center, radius, count, phase, zoom, width, height } => {
            if *count == 0 {
                return Err(Error::InvalidArgument("candidate ring needs n >= 1".into()));
            }
            ring_poses(*center, *radius, *count, *phase, *zoom, *width, *height)
        }
        CandidateSpec::Explicit(list) => {
            if list.is_empty() {
                return Err(Error::InvalidArgument("candidate list is empty".into()));
            }
            list.clone()
        }
    };
    for c in &cameras {
        c.validate()?;
    }
    Ok(CandidateSet {
        candidates: cameras.into_iter().enumerate().map(|(id, camera)| Candidate { id, camera }).collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub enum ObjectSelection {
    #[default]
    All,
    Only(Vec<u32>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct CandidateScore {
    pub candidate_id: usize,
    pub objects: Vec<ObjectScore>,
    pub aggregate: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NbvDecision {
    pub chosen_id: usize,
    pub table: Vec<CandidateScore>,
}

impl NbvDecision {
    pub fn aggregate(&self, candidate_id: usize) -> Option<f64> {
        self.table.iter().find(|c| c.candidate_id == candidate_id).map(|c| c.aggregate)
    }
}

/// Lowest id among the entries within [`TIE_RTOL`] of the maximum.
pub fn argmax_lowest_id(scores: &[(usize, f64)]) -> Option<usize> {
    let max = scores.iter().map(|s| s.1).fold(f64::NEG_INFINITY, f64::max);
    scores
        .iter()
        .filter(|s| s.1 >= max - TIE_RTOL * max.abs())
        .map(|s| s.0)
        .min()
}

/// Scores every candidate by Σ_k object_score over the selected objects and
/// picks the maximum.
pub fn select_next_view(
    scene: &SceneParams,
    cov: &CovDiag,
    candidates: &CandidateSet,
    objects: &ObjectSelection,
) -> Result<NbvDecision> {
    if candidates.is_empty() {
        return Err(Error::InvalidArgument("no candidates".into()));
    }
    let present = scene.object_ids();
    if let ObjectSelection::Only(ids) = objects {
        if let Some(&k) = ids.iter().find(|k| !present.contains(k)) {
            return Err(Error::UnknownObject(k));
        }
    }
    let table = candidates
        .candidates
        .par_iter()
        .map(|c| {
            let scores: Vec<ObjectScore> = object_scores(scene, &c.camera, cov, c.id)?
                .into_iter()
                .filter(|s| match objects {
                    ObjectSelection::All => true,
                    ObjectSelection::Only(ids) => ids.contains(&s.object_id),
                })
                .collect();
            let aggregate = scores.iter().map(|s| s.score).sum();
            Ok(CandidateScore { candidate_id: c.id, objects: scores, aggregate })
        })
        .collect::<Result<Vec<_>>>()?;
    let pairs: Vec<(usize, f64)> = table.iter().map(|c| (c.candidate_id, c.aggregate)).collect();
    let chosen_id = argmax_lowest_id(&pairs).expect("nonempty");
    Ok(NbvDecision { chosen_id, table })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SelectionPolicy {
    Uncertainty,
    Random,
}

impl SelectionPolicy {
    pub fn name(&self) -> &'static str {
        match self {
            SelectionPolicy::Uncertainty => "uncertainty",
            SelectionPolicy::Random => "random",
        }
    }
}

/// Everything the simulated capture loop needs to know about the world.
#[derive(Debug, Clone)]
pub struct ActiveScenario {
    pub gt_scene: SceneParams,
    pub init_scene: SceneParams,
    pub initial_views: Vec<CameraPose>,
    pub candidates: CandidateSpec,
    pub held_out: Vec<CameraPose>,
}

#[derive(Debug, Clone)]
pub struct ActiveConfig {
    pub rounds: usize,
    pub train: TrainConfig,
    pub policy: SelectionPolicy,
    pub objects: ObjectSelection,
    /// Std of Gaussian noise added to synthesized captures; none when `None`.
    pub capture_noise: Option<f64>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundReport {
    pub round: usize,
    /// Held-out PSNR of the scene fitted in this round.
    pub psnr: f64,
    pub final_loss: f64,
    pub chosen_id: usize,
    pub chosen_camera: CameraPose,
    pub aggregate_scores: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActiveReport {
    pub policy: SelectionPolicy,
    pub rounds: Vec<RoundReport>,
}

impl ActiveReport {
    /// First round (1-based) whose fit reaches `threshold` dB.
    pub fn rounds_to_psnr(&self, threshold: f64) -> Option<usize> {
        self.rounds.iter().find(|r| r.psnr >= threshold).map(|r| r.round)
    }
}

/// PSNR over the pooled pixels of all held-out views, peak 1.
pub fn held_out_psnr(scene: &SceneParams, gt: &SceneParams, cameras: &[CameraPose]) -> Result<f64> {
    let mut sq = 0.0;
    let mut count = 0usize;
    for cam in cameras {
        let a = render(scene, cam)?.image;
        let b = render(gt, cam)?.image;
        sq += a.mse(&b)? * (3 * a.pixels.len()) as f64;
        count += 3 * a.pixels.len();
    }
    Ok(10.0 * (count as f64 / sq).log10())
}

fn capture(gt: &SceneParams, camera: &CameraPose, noise: Option<(f64, &mut ChaCha8Rng)>) -> Result<Image> {
    let mut image = render(gt, camera)?.image;
    if let Some((sd, rng)) = noise {
        let dist = Normal::new(0.0, sd).map_err(|e| Error::InvalidArgument(e.to_string()))?;
        for p in &mut image.pixels {
            for c in p.iter_mut() {
                *c += dist.sample(rng);
            }
        }
    }
    Ok(image)
}

/// Per round: fit the current views, propagate the Laplace covariance,
/// choose a candidate, capture it from the ground truth and add it. Each fit
/// starts from the previous round's estimate.
pub fn active_capture_loop(scenario: &ActiveScenario, config: &ActiveConfig) -> Result<ActiveReport> {
    if config.rounds == 0 {
        return Err(Error::InvalidArgument("rounds must be >= 1".into()));
    }
    let candidates = generate_candidates(&scenario.candidates)?;
    let mut policy_rng = ChaCha8Rng::seed_from_u64(config.seed);
    policy_rng.set_stream(1);
    let mut noise_rng = ChaCha8Rng::seed_from_u64(config.seed);
    noise_rng.set_stream(2);

    let mut views = Vec::with_capacity(scenario.initial_views.len() + config.rounds);
    for cam in &scenario.initial_views {
        let image = capture(&scenario.gt_scene, cam, config.capture_noise.map(|s| (s, &mut noise_rng)))?;
        views.push(View { camera: cam.clone(), image });
    }

    let mut scene = scenario.init_scene.clone();
    let mut rounds = Vec::with_capacity(config.rounds);
    for round in 1..=config.rounds {
        let fit = train(&scene, &views, &config.train)?;
        scene = fit.scene;
        let psnr = held_out_psnr(&scene, &scenario.gt_scene, &scenario.held_out)?;
        let cov = laplace_cov(&fit.fisher, config.train.lambda)?;
        let decision = select_next_view(&scene, &cov, &candidates, &config.objects)?;
        let chosen_id = match config.policy {
            SelectionPolicy::Uncertainty => decision.chosen_id,
            SelectionPolicy::Random => {
                candidates.candidates[policy_rng.random_range(0..candidates.len())].id
            }
        };
        let chosen_camera = candidates.get(chosen_id).expect("chosen from set").camera.clone();
        let image = capture(
            &scenario.gt_scene,
            &chosen_camera,
            config.capture_noise.map(|s| (s, &mut noise_rng)),
        )?;
        views.push(View { camera: chosen_camera.clone(), image });
        rounds.push(RoundReport {
            round,
            psnr,
            final_loss: fit.trace.records.last().map_or(0.0, |r| r.loss),
            chosen_id,
            chosen_camera,
            aggregate_scores: decision.table.iter().map(|c| c.aggregate).collect(),
        });
    }
    Ok(ActiveReport { policy: config.policy, rounds })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::tests::splat;
    use proptest::prelude::*;

    fn ring(n: usize) -> CandidateSpec {
        CandidateSpec::Ring { center: [0.0, 0.0], radius: 1.0, count: n, phase: 0.0, zoom: 8.0, width: 16, height: 16 }
    }

    #[test]
    fn ring_of_four() {
        let set = generate_candidates(&CandidateSpec::Ring {
            center: [1.0, -1.0],
            radius: 2.0,
            count: 4,
            phase: 0.0,
            zoom: 4.0,
            width: 8,
            height: 8,
        })
        .unwrap();
        let want = [[3.0, -1.0], [1.0, 1.0], [-1.0, -1.0], [1.0, -3.0]];
        for (c, w) in set.candidates.iter().zip(want) {
            assert!((c.camera.center[0] - w[0]).abs() < 1e-12 && (c.camera.center[1] - w[1]).abs() < 1e-12);
            // ring center straight above the image center
            let u = c.camera.world_to_pixel([1.0, -1.0]);
            assert!((u[0] - 4.0).abs() < 1e-12 && u[1] < 4.0);
        }
        assert_eq!(set.candidates.iter().map(|c| c.id).collect::<Vec<_>>(), vec![0, 1, 2, 3]);
    }

    #[test]
    fn ring_of_one_and_zero() {
        let one = generate_candidates(&ring(1)).unwrap();
        assert_eq!(one.len(), 1);
        assert!((one.candidates[0].camera.center[0] - 1.0).abs() < 1e-15);
        assert!(generate_candidates(&ring(0)).is_err());
        assert!(generate_candidates(&CandidateSpec::Explicit(vec![])).is_err());
    }

    #[test]
    fn explicit_list_passes_through() {
        let cams = vec![
            CameraPose::new([0.5, 0.0], 0.3, 2.0, 10, 12).unwrap(),
            CameraPose::new([-1.0, 2.0], 1.0, 5.0, 7, 7).unwrap(),
        ];
        let set = generate_candidates(&CandidateSpec::Explicit(cams.clone())).unwrap();
        assert_eq!(set.candidates.iter().map(|c| c.camera.clone()).collect::<Vec<_>>(), cams);
    }

    #[test]
    fn ties_break_to_lowest_id() {
        assert_eq!(argmax_lowest_id(&[(3, 1.0), (1, 1.0), (2, 0.5)]), Some(1));
        assert_eq!(argmax_lowest_id(&[(0, 1.0), (1, 1.0 + 1e-12)]), Some(0));
        assert_eq!(argmax_lowest_id(&[(0, 1.0), (1, 1.1)]), Some(1));
        assert_eq!(argmax_lowest_id(&[(4, 0.0), (2, 0.0)]), Some(2));
    }

    fn symmetric_scene() -> SceneParams {
        let mut a = splat([0.0, 0.0], 0, 0);
        a.log_scale = [-1.0, -1.0];
        a.color_logit = [1.0, -1.0, 0.5];
        SceneParams::new(vec![a], [0.2; 3]).unwrap()
    }

    #[test]
    fn symmetric_ring_ties() {
        let scene = symmetric_scene();
        let cov = CovDiag { values: vec![2.0; 9], lambda: 1e-4 };
        let set = generate_candidates(&CandidateSpec::Ring {
            center: [0.0, 0.0],
            radius: 0.5,
            count: 4,
            phase: 0.0,
            zoom: 8.0,
            width: 16,
            height: 16,
        })
        .unwrap();
        let d = select_next_view(&scene, &cov, &set, &ObjectSelection::All).unwrap();
        let first = d.table[0].aggregate;
        assert!(first > 0.0);
        for c in &d.table {
            assert!((c.aggregate - first).abs() <= 1e-9 * first);
        }
        assert_eq!(d.chosen_id, 0);
    }

    #[test]
    fn unknown_object_rejected() {
        let scene = symmetric_scene();
        let cov = CovDiag { values: vec![1.0; 9], lambda: 1e-4 };
        let set = generate_candidates(&ring(2)).unwrap();
        assert!(matches!(
            select_next_view(&scene, &cov, &set, &ObjectSelection::Only(vec![7])),
            Err(Error::UnknownObject(7))
        ));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn decision_invariances(
            cov_values in prop::collection::vec(0.01f64..10.0, 18),
            scale in 0.001f64..1000.0,
            extra_angle in 0.0f64..6.28,
        ) {
            let mut a = splat([0.6, 0.1], 0, 0);
            a.log_scale = [-1.2, -0.8];
            let mut b = splat([-0.4, -0.5], 1, 1);
            b.log_scale = [-0.9, -1.4];
            b.phi = 0.7;
            let scene = SceneParams::new(vec![a, b], [0.3; 3]).unwrap();
            let cov = CovDiag { values: cov_values, lambda: 1e-4 };
            let spec = CandidateSpec::Ring {
                center: [0.0, 0.0], radius: 0.8, count: 5, phase: 0.3, zoom: 10.0, width: 16, height: 16,
            };
            let set = generate_candidates(&spec).unwrap();
            let base = select_next_view(&scene, &cov, &set, &ObjectSelection::All).unwrap();
            let scaled = select_next_view(&scene, &cov.scaled(scale), &set, &ObjectSelection::All).unwrap();
            prop_assert_eq!(base.chosen_id, scaled.chosen_id);

            let mut grown = set.clone();
            let (s, c) = extra_angle.sin_cos();
            grown.candidates.push(Candidate {
                id: 5,
                camera: CameraPose::new([0.8 * c, 0.8 * s], extra_angle, 10.0, 16, 16).unwrap(),
            });
            let after = select_next_view(&scene, &cov, &grown, &ObjectSelection::All).unwrap();
            prop_assert!(after.chosen_id == base.chosen_id || after.chosen_id == 5);
        }
    }
}
