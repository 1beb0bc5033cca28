//! Command-line front end. Every subcommand reads and writes the formats in
//! [`crate::io`]; all randomness comes from `--seed`.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::camera::CameraPose;
use crate::error::{Error, Result};
use crate::fisher::{laplace_cov, CovDiag, FisherDiag};
use crate::io::{self, UncertaintySidecar};
use crate::nbv::{
    active_capture_loop, generate_candidates, select_next_view, ActiveConfig, ActiveScenario, CandidateSpec,
    ObjectSelection, SelectionPolicy,
};
use crate::oracle::McConfig;
use crate::presets::Preset;
use crate::propagate::{object_scores, variance_heatmap};
use crate::render::render;
use crate::train::{train_with, LearningRates, TrainConfig, View, ViewSchedule};
use crate::verify::{run_verify, VerifyConfig};

#[derive(Debug, Parser)]
#[command(name = "splatuq", version, about = "Posterior uncertainty for 2D Gaussian splat scenes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a preset scene, a seeded initial guess and its posed views.
    Synth(SynthArgs),
    /// Render a scene from a camera, optionally with object masks.
    Render(RenderArgs),
    /// Fit a scene to posed views and save the Fisher sidecar.
    Fit(FitArgs),
    /// Per-view variance heatmaps and object scores.
    Uncertainty(UncertaintyArgs),
    /// Choose the next view among candidates.
    Nbv(NbvArgs),
    /// Simulated capture loop on a preset.
    Active(ActiveArgs),
    /// Run the oracle suite.
    Verify(VerifyArgs),
}

#[derive(Debug, Args)]
struct Common {
    /// JSON run configuration; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long, default_value = "two-object")]
    preset: Preset,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct RenderArgs {
    #[arg(long)]
    scene: PathBuf,
    /// JSON camera pose.
    #[arg(long)]
    camera: PathBuf,
    /// Output PPM.
    #[arg(long)]
    out: PathBuf,
    /// Directory for one 16-bit PGM mask per object.
    #[arg(long)]
    masks: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct FitArgs {
    #[arg(long)]
    init: PathBuf,
    #[arg(long)]
    views: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    lambda: Option<f64>,
    /// Save scene and sidecar every N steps.
    #[arg(long)]
    checkpoint_every: Option<usize>,
    #[command(flatten)]
    common: Common,
}

#[derive(Debug, Args)]
struct UncertaintyArgs {
    #[arg(long)]
    scene: PathBuf,
    #[arg(long)]
    sidecar: PathBuf,
    #[arg(long)]
    views: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Multiplier on the covariance.
    #[arg(long, default_value_t = 1.0)]
    scale: f64,
}

#[derive(Debug, Args)]
struct NbvArgs {
    #[arg(long)]
    scene: PathBuf,
    #[arg(long)]
    sidecar: PathBuf,
    /// Candidate ring of this preset, unless the config gives candidates.
    #[arg(long, default_value = "two-object")]
    preset: Preset,
    /// `all` or a comma-separated list of object ids.
    #[arg(long, default_value = "all")]
    objects: String,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    common: Common,
}

#[derive(Debug, Args)]
struct ActiveArgs {
    #[arg(long, default_value = "two-object")]
    preset: Preset,
    #[arg(long)]
    rounds: Option<usize>,
    #[arg(long, value_parser = parse_policy)]
    policy: Option<SelectionPolicy>,
    /// Std of Gaussian noise added to each synthesized capture.
    #[arg(long)]
    noise: Option<f64>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    threshold: Option<f64>,
    #[arg(long, default_value = "all")]
    objects: String,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    common: Common,
}

#[derive(Debug, Args)]
struct VerifyArgs {
    #[arg(long, default_value = "three-splat")]
    preset: Preset,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 100_000)]
    mc_samples: usize,
    #[arg(long)]
    out: PathBuf,
}

fn parse_policy(s: &str) -> std::result::Result<SelectionPolicy, String> {
    match s {
        "uncertainty" => Ok(SelectionPolicy::Uncertainty),
        "random" => Ok(SelectionPolicy::Random),
        _ => Err(format!("expected `uncertainty` or `random`, got `{s}`")),
    }
}

fn parse_objects(s: &str) -> Result<ObjectSelection> {
    if s == "all" {
        return Ok(ObjectSelection::All);
    }
    s.split(',')
        .map(|t| t.trim().parse::<u32>().map_err(|_| Error::InvalidArgument(format!("bad object id `{t}`"))))
        .collect::<Result<Vec<_>>>()
        .map(ObjectSelection::Only)
}

/// Numeric knobs read from `--config`. Every field is optional.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub sigma: Option<f64>,
    pub lambda: Option<f64>,
    pub total_steps: Option<usize>,
    pub learning_rates: Option<LearningRates>,
    pub view_schedule: Option<ViewSchedule>,
    pub seed: Option<u64>,
    pub candidates: Option<CandidateSpec>,
    pub mc: Option<McConfig>,
    pub rounds: Option<usize>,
    pub policy: Option<SelectionPolicy>,
    pub objects: Option<Vec<u32>>,
    pub capture_noise: Option<f64>,
    pub psnr_threshold: Option<f64>,
}

impl RunConfig {
    fn load(path: Option<&Path>) -> Result<RunConfig> {
        match path {
            Some(p) => {
                require_file(p)?;
                io::read_json(p)
            }
            None => Ok(RunConfig::default()),
        }
    }

    fn train_config(&self, base: TrainConfig) -> TrainConfig {
        TrainConfig {
            total_steps: self.total_steps.unwrap_or(base.total_steps),
            learning_rates: self.learning_rates.unwrap_or(base.learning_rates),
            sigma: self.sigma.unwrap_or(base.sigma),
            lambda: self.lambda.unwrap_or(base.lambda),
            rng_seed: self.seed.unwrap_or(base.rng_seed),
            view_schedule: self.view_schedule.unwrap_or(base.view_schedule),
        }
    }
}

/// `views.json`: posed images stored next to it as PPM.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ViewsFile {
    pub views: Vec<ViewEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ViewEntry {
    pub id: usize,
    pub camera: CameraPose,
    /// Path relative to the views file.
    pub image: String,
}

fn load_views(path: &Path) -> Result<Vec<(usize, View)>> {
    let file: ViewsFile = io::read_json(path)?;
    let dir = path.parent().unwrap_or(Path::new("."));
    file.views
        .into_iter()
        .map(|v| {
            let image = io::read_ppm(&dir.join(&v.image))?;
            if image.width != v.camera.width || image.height != v.camera.height {
                return Err(Error::Format {
                    path: v.image.clone(),
                    message: format!("image is {}x{}, camera expects {}x{}", image.width, image.height, v.camera.width, v.camera.height),
                });
            }
            Ok((v.id, View { camera: v.camera, image }))
        })
        .collect()
}

fn require_file(path: &Path) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("no such file: {}", path.display())))
    }
}

fn prepare_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path)?;
    Ok(())
}

fn prepare_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => prepare_dir(p),
        _ => Ok(()),
    }
}

fn synth(a: &SynthArgs) -> Result<()> {
    prepare_dir(&a.out)?;
    let gt = a.preset.gt_scene();
    io::save_scene(&gt, &a.out.join("scene.json"))?;
    io::save_scene(&a.preset.init_scene(a.seed), &a.out.join("init.json"))?;
    let mut entries = Vec::new();
    for (id, camera) in a.preset.training_views().into_iter().enumerate() {
        let name = format!("view_{id}.ppm");
        io::write_ppm(&render(&gt, &camera)?.image, &a.out.join(&name))?;
        entries.push(ViewEntry { id, camera, image: name });
    }
    io::write_json(&ViewsFile { views: entries }, &a.out.join("views.json"))
}

fn render_cmd(a: &RenderArgs) -> Result<()> {
    require_file(&a.scene)?;
    require_file(&a.camera)?;
    prepare_parent(&a.out)?;
    if let Some(m) = &a.masks {
        prepare_dir(m)?;
    }
    let scene = io::load_scene(&a.scene)?;
    let camera: CameraPose = io::read_json(&a.camera)?;
    let r = render(&scene, &camera)?;
    io::write_ppm(&r.image, &a.out)?;
    if let Some(dir) = &a.masks {
        for m in &r.masks {
            io::write_pgm16(&m.values, m.width, m.height, &dir.join(format!("mask_{}.pgm", m.object_id)))?;
        }
    }
    Ok(())
}

fn save_state(scene: &crate::scene::SceneParams, fisher: &FisherDiag, lambda: f64, scene_path: &Path, sidecar_path: &Path) -> Result<()> {
    io::save_scene(scene, scene_path)?;
    let cov = laplace_cov(fisher, lambda)?;
    io::save_sidecar(&UncertaintySidecar { fisher: fisher.clone(), cov }, sidecar_path)
}

fn fit(a: &FitArgs) -> Result<()> {
    require_file(&a.init)?;
    require_file(&a.views)?;
    let rc = RunConfig::load(a.common.config.as_deref())?;
    prepare_dir(&a.out)?;
    let mut cfg = rc.train_config(TrainConfig::default());
    if let Some(t) = a.steps {
        cfg.total_steps = t;
    }
    if let Some(s) = a.sigma {
        cfg.sigma = s;
    }
    if let Some(l) = a.lambda {
        cfg.lambda = l;
    }
    if let Some(s) = a.common.seed {
        cfg.rng_seed = s;
    }
    cfg.validate()?;
    if a.checkpoint_every == Some(0) {
        return Err(Error::InvalidArgument("--checkpoint-every must be >= 1".into()));
    }
    let init = io::load_scene(&a.init)?;
    let views: Vec<View> = load_views(&a.views)?.into_iter().map(|(_, v)| v).collect();
    let ckpt_dir = a.out.join("checkpoints");
    if a.checkpoint_every.is_some() {
        prepare_dir(&ckpt_dir)?;
    }
    let lambda = cfg.lambda;
    let outcome = train_with(&init, &views, &cfg, |rec, scene, fisher| match a.checkpoint_every {
        Some(n) if rec.step % n == 0 => save_state(
            scene,
            fisher,
            lambda,
            &ckpt_dir.join(format!("step_{}.json", rec.step)),
            &ckpt_dir.join(format!("step_{}.uncertainty.json", rec.step)),
        ),
        _ => Ok(()),
    })?;
    save_state(&outcome.scene, &outcome.fisher, lambda, &a.out.join("scene.json"), &a.out.join("uncertainty.json"))?;
    io::write_trace(&outcome.trace.records, &a.out.join("trace.csv"))
}

fn uncertainty(a: &UncertaintyArgs) -> Result<()> {
    require_file(&a.scene)?;
    require_file(&a.sidecar)?;
    require_file(&a.views)?;
    if !(a.scale.is_finite() && a.scale > 0.0) {
        return Err(Error::InvalidArgument(format!("--scale must be > 0, got {}", a.scale)));
    }
    prepare_dir(&a.out)?;
    let scene = io::load_scene(&a.scene)?;
    let cov = io::load_sidecar(&a.sidecar)?.cov.scaled(a.scale);
    let file: ViewsFile = io::read_json(&a.views)?;
    let mut scores = Vec::new();
    for v in &file.views {
        let heat = variance_heatmap(&scene, &v.camera, &cov)?;
        io::write_pgm16(&heat, v.camera.width, v.camera.height, &a.out.join(format!("heatmap_{}.pgm", v.id)))?;
        scores.extend(object_scores(&scene, &v.camera, &cov, v.id)?);
    }
    io::write_scores(&scores, &a.out.join("scores.csv"))
}

fn candidate_spec(rc: &RunConfig, preset: Preset) -> CandidateSpec {
    rc.candidates.clone().unwrap_or_else(|| preset.candidate_spec())
}

fn objects(rc: &RunConfig, flag: &str) -> Result<ObjectSelection> {
    match (&rc.objects, flag) {
        (Some(ids), "all") => Ok(ObjectSelection::Only(ids.clone())),
        _ => parse_objects(flag),
    }
}

fn nbv(a: &NbvArgs) -> Result<()> {
    require_file(&a.scene)?;
    require_file(&a.sidecar)?;
    let rc = RunConfig::load(a.common.config.as_deref())?;
    let selection = objects(&rc, &a.objects)?;
    prepare_dir(&a.out)?;
    let scene = io::load_scene(&a.scene)?;
    let cov: CovDiag = io::load_sidecar(&a.sidecar)?.cov;
    let candidates = generate_candidates(&candidate_spec(&rc, a.preset))?;
    let decision = select_next_view(&scene, &cov, &candidates, &selection)?;
    let table: Vec<_> = decision.table.iter().flat_map(|c| c.objects.iter().cloned()).collect();
    io::write_scores(&table, &a.out.join("candidates.csv"))?;
    let chosen = &candidates.get(decision.chosen_id).expect("chosen from set").camera;
    let mut text = format!("chosen {}\n", decision.chosen_id);
    for c in &decision.table {
        text += &format!("aggregate {} {}\n", c.candidate_id, c.aggregate);
    }
    fs::write(a.out.join("decision.txt"), text)?;
    io::write_json(chosen, &a.out.join("chosen_camera.json"))
}

fn active(a: &ActiveArgs) -> Result<()> {
    let rc = RunConfig::load(a.common.config.as_deref())?;
    let selection = objects(&rc, &a.objects)?;
    prepare_dir(&a.out)?;
    let seed = a.common.seed.or(rc.seed).unwrap_or(0);
    let mut train = rc.train_config(a.preset.train_config(seed));
    train.rng_seed = seed;
    if let Some(t) = a.steps {
        train.total_steps = t;
    }
    let scenario = ActiveScenario {
        gt_scene: a.preset.gt_scene(),
        init_scene: a.preset.init_scene(seed),
        initial_views: a.preset.training_views(),
        candidates: candidate_spec(&rc, a.preset),
        held_out: a.preset.held_out_views(),
    };
    let config = ActiveConfig {
        rounds: a.rounds.or(rc.rounds).unwrap_or(DEFAULT_ROUNDS),
        train,
        policy: a.policy.or(rc.policy).unwrap_or(SelectionPolicy::Uncertainty),
        objects: selection,
        capture_noise: a.noise.or(rc.capture_noise),
        seed,
    };
    let report = active_capture_loop(&scenario, &config)?;
    io::write_active_report(&report, &a.out.join("report.csv"))?;
    let threshold = a.threshold.or(rc.psnr_threshold).unwrap_or(DEFAULT_PSNR_THRESHOLD);
    io::write_active_summary(&report, threshold, &a.out.join("summary.txt"))
}

pub const DEFAULT_ROUNDS: usize = 6;
pub const DEFAULT_PSNR_THRESHOLD: f64 = 30.0;

fn verify(a: &VerifyArgs) -> Result<bool> {
    prepare_dir(&a.out)?;
    let report = run_verify(&VerifyConfig {
        preset: a.preset,
        seed: a.seed,
        mc_samples: a.mc_samples,
        ..VerifyConfig::default()
    })?;
    let table = report.table();
    print!("{table}");
    fs::write(a.out.join("verify.txt"), table)?;
    let mut w = csv::Writer::from_path(a.out.join("errors.csv")).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    for m in &report.measurements {
        w.serialize(m).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    }
    w.flush()?;
    let mut w = csv::Writer::from_path(a.out.join("laplace_ratios.csv")).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    for r in &report.laplace_ratios {
        w.serialize(r).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    }
    w.flush()?;
    Ok(report.all_passed())
}

/// Parses `args` (including the program name) and runs the subcommand.
/// Returns 0 on success, 1 on usage or input errors, 2 on numerical
/// failure.
pub fn cli_main<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let result = match &cli.command {
        Command::Synth(a) => synth(a),
        Command::Render(a) => render_cmd(a),
        Command::Fit(a) => fit(a),
        Command::Uncertainty(a) => uncertainty(a),
        Command::Nbv(a) => nbv(a),
        Command::Active(a) => active(a),
        Command::Verify(a) => match verify(a) {
            Ok(true) => Ok(()),
            Ok(false) => return 2,
            Err(e) => Err(e),
        },
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_numerical() {
                2
            } else {
                1
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn usage_errors_exit_1() {
        assert_eq!(cli_main(["splatuq", "synth", "--bogus"]), 1);
        assert_eq!(cli_main(["splatuq"]), 1);
        assert_eq!(cli_main(["splatuq", "synth", "--preset", "nope", "--out", "x"]), 1);
    }

    #[test]
    fn help_exits_0() {
        assert_eq!(cli_main(["splatuq", "--help"]), 0);
    }

    #[test]
    fn missing_input_exits_1() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("o");
        let code = cli_main([
            "splatuq".into(),
            "fit".into(),
            "--init".into(),
            dir.path().join("none.json").into_os_string(),
            "--views".into(),
            dir.path().join("none2.json").into_os_string(),
            "--out".into(),
            out.clone().into_os_string(),
        ]);
        assert_eq!(code, 1);
        assert!(!out.exists());
    }

    #[test]
    fn objects_flag() {
        assert_eq!(parse_objects("all").unwrap(), ObjectSelection::All);
        assert_eq!(parse_objects("0, 3").unwrap(), ObjectSelection::Only(vec![0, 3]));
        assert!(parse_objects("a").is_err());
    }

    #[test]
    fn run_config_rejects_unknown_keys() {
        assert!(serde_json::from_str::<RunConfig>(r#"{"sigma": 1.0, "sgima": 2.0}"#).is_err());
        let rc: RunConfig = serde_json::from_str(
            r#"{"lambda": 0.001, "candidates": {"ring": {"center": [0, 0], "radius": 1, "count": 3,
                "phase": 0, "zoom": 4, "width": 8, "height": 8}}}"#,
        )
        .unwrap();
        assert_eq!(rc.lambda, Some(1e-3));
        assert!(matches!(rc.candidates, Some(CandidateSpec::Ring { count: 3, .. })));
    }
}
