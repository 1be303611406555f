//! Flat `key = value` experiment configuration with dotted section prefixes.
//!
//! ```text
//! # comment
//! scene.num_agents = 20
//! fit.optimizer = adam
//! fps_strides = 1, 2, 5
//! ```

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::detect::NmsConfig;
use crate::domain::GroundGrid;
use crate::fit::{FitConfig, Optimizer};
use crate::loss::LambdaSchedule;
use crate::sim::SceneConfig;
use crate::track::{EdgeCostParams, TwoStageParams};
use crate::warp::ReconstructionConfig;
use crate::{Error, Result};

/// Which variants `ablate` runs in addition to the full model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AblationFlags {
    pub no_mot: bool,
    pub no_se: bool,
    pub no_fb: bool,
    pub no_motion_term: bool,
}

impl Default for AblationFlags {
    fn default() -> Self {
        Self {
            no_mot: true,
            no_se: true,
            no_fb: true,
            no_motion_term: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub scene: SceneConfig,
    pub fit: FitConfig,
    pub recon: ReconstructionConfig,
    pub edges: EdgeCostParams,
    pub two_stage: TwoStageParams,
    pub nms: NmsConfig,
    /// Minimum centroid gap for the 2-means confidence split.
    pub min_separation: f64,
    pub dist_threshold: f64,
    pub fps_strides: Vec<usize>,
    /// Number of consecutive scene seeds averaged by `sweep-fps` and `ablate`.
    pub seeds: usize,
    pub ablations: AblationFlags,
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            scene: SceneConfig {
                grid: GroundGrid::new(64, 64).expect("valid grid"),
                num_agents: 16,
                num_frames: 40,
                speed_cells: (0.5, 1.0),
                ..SceneConfig::default()
            },
            fit: FitConfig {
                epochs: 100,
                steps_per_epoch: 2,
                learning_rate: 0.1,
                ..FitConfig::default()
            },
            recon: ReconstructionConfig::default(),
            edges: EdgeCostParams {
                max_speed_cells: 6.0,
                ..EdgeCostParams::default()
            },
            two_stage: TwoStageParams::default(),
            nms: NmsConfig::default(),
            min_separation: 0.2,
            dist_threshold: crate::eval::DEFAULT_DIST_THRESHOLD,
            fps_strides: vec![1, 2, 5],
            seeds: 1,
            ablations: AblationFlags::default(),
            output_dir: PathBuf::from("out"),
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {value:?}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::Config(format!(
            "{key}: expected true or false, got {value:?}"
        ))),
    }
}

fn parse_optimizer(value: &str) -> Result<Optimizer> {
    match value {
        "adam" => Ok(Optimizer::adam()),
        "momentum" => Ok(Optimizer::momentum()),
        "gradient" => Ok(Optimizer::Gradient),
        _ => Err(Error::Config(format!(
            "fit.optimizer: expected adam, momentum or gradient, got {value:?}"
        ))),
    }
}

fn optimizer_name(o: Optimizer) -> &'static str {
    match o {
        Optimizer::Gradient => "gradient",
        Optimizer::Momentum { .. } => "momentum",
        Optimizer::Adam { .. } => "adam",
    }
}

/// Splits the text into `key -> value`, rejecting malformed and repeated keys.
fn entries(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected key = value", n + 1)))?;
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() {
            return Err(Error::Config(format!("line {}: empty key", n + 1)));
        }
        if out.insert(k.to_string(), v.to_string()).is_some() {
            return Err(Error::Config(format!("line {}: duplicate key {k}", n + 1)));
        }
    }
    Ok(out)
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut c = Self::default();
        let (mut width, mut height) = c.scene.grid.dims();
        let mut cell_size = c.scene.grid.cell_size_m();
        let mut schedule = c.fit.schedule;
        let mut schedule_init: Option<f64> = None;
        for (k, v) in entries(text)? {
            let (k, v) = (k.as_str(), v.as_str());
            match k {
                "scene.width" => width = parse(k, v)?,
                "scene.height" => height = parse(k, v)?,
                "scene.cell_size_m" => cell_size = parse(k, v)?,
                "scene.num_agents" => c.scene.num_agents = parse(k, v)?,
                "scene.num_frames" => c.scene.num_frames = parse(k, v)?,
                "scene.speed_min" => c.scene.speed_cells.0 = parse(k, v)?,
                "scene.speed_max" => c.scene.speed_cells.1 = parse(k, v)?,
                "scene.turn_sigma_rad" => c.scene.turn_sigma_rad = parse(k, v)?,
                "scene.heading_rad" => {
                    c.scene.heading_rad = match v {
                        "random" => None,
                        _ => Some(parse(k, v)?),
                    }
                }
                "scene.miss_rate" => c.scene.miss_rate = parse(k, v)?,
                "scene.fp_rate_per_frame" => c.scene.fp_rate_per_frame = parse(k, v)?,
                "scene.jitter_sigma_cells" => c.scene.jitter_sigma_cells = parse(k, v)?,
                "scene.gaussian_sigma_cells" => c.scene.gaussian_sigma_cells = parse(k, v)?,
                "scene.gaussian_radius_cells" => c.scene.gaussian_radius_cells = parse(k, v)?,
                "scene.seed" => c.scene.seed = parse(k, v)?,

                "fit.epochs" => c.fit.epochs = parse(k, v)?,
                "fit.steps_per_epoch" => c.fit.steps_per_epoch = parse(k, v)?,
                "fit.learning_rate" => c.fit.learning_rate = parse(k, v)?,
                "fit.optimizer" => c.fit.optimizer = parse_optimizer(v)?,
                "fit.lambda_increment" => schedule.increment = parse(k, v)?,
                "fit.lambda_cap" => schedule.cap = parse(k, v)?,
                "fit.lambda_mot" => c.fit.weights.lambda_mot = parse(k, v)?,
                "fit.lambda_fb" => c.fit.weights.lambda_fb = parse(k, v)?,
                "fit.lambda_se" => c.fit.weights.lambda_se = parse(k, v)?,
                "fit.se_radius_cells" => c.fit.se_radius_cells = parse(k, v)?,

                "recon.lambda_r" => schedule_init = Some(parse(k, v)?),
                "recon.window_cells" => c.recon.window_cells = parse(k, v)?,

                "edges.sigma_t" => c.edges.sigma_t = parse(k, v)?,
                "edges.sigma_d" => c.edges.sigma_d = parse(k, v)?,
                "edges.sigma_m" => c.edges.sigma_m = parse(k, v)?,
                "edges.max_gap" => c.edges.max_gap = parse(k, v)?,
                "edges.entry_cost" => c.edges.entry_cost = parse(k, v)?,
                "edges.exit_cost" => c.edges.exit_cost = parse(k, v)?,
                "edges.obs_cost_scale" => c.edges.obs_cost_scale = parse(k, v)?,
                "edges.max_speed_cells" => c.edges.max_speed_cells = parse(k, v)?,

                "track.box_side" => c.two_stage.box_side = parse(k, v)?,
                "track.iou_threshold" => c.two_stage.iou_threshold = parse(k, v)?,
                "track.conf_split" => c.two_stage.conf_split = parse(k, v)?,
                "track.max_age" => c.two_stage.max_age = parse(k, v)?,
                "track.motion_max_dist" => c.two_stage.motion_max_dist = parse(k, v)?,
                "track.kalman_q" => c.two_stage.kalman_q = parse(k, v)?,
                "track.kalman_r" => c.two_stage.kalman_r = parse(k, v)?,
                "track.kalman_vel_var" => c.two_stage.kalman_vel_var = parse(k, v)?,

                "detect.nms_radius" => c.nms.radius_cells = parse(k, v)?,
                "detect.max_candidates" => c.nms.max_candidates = parse(k, v)?,
                "detect.min_separation" => c.min_separation = parse(k, v)?,
                "eval.dist_threshold" => c.dist_threshold = parse(k, v)?,

                "fps_strides" => {
                    c.fps_strides = v
                        .split(',')
                        .map(|s| parse(k, s.trim()))
                        .collect::<Result<Vec<usize>>>()?;
                }
                "seeds" => c.seeds = parse(k, v)?,
                "ablations.no_mot" => c.ablations.no_mot = parse_bool(k, v)?,
                "ablations.no_se" => c.ablations.no_se = parse_bool(k, v)?,
                "ablations.no_fb" => c.ablations.no_fb = parse_bool(k, v)?,
                "ablations.no_motion_term" => c.ablations.no_motion_term = parse_bool(k, v)?,
                "output_dir" => c.output_dir = PathBuf::from(v),
                _ => return Err(Error::Config(format!("unknown key {k}"))),
            }
        }
        c.scene.grid = GroundGrid::with_cell_size(width, height, cell_size)
            .map_err(|e| Error::Config(e.to_string()))?;
        if let Some(init) = schedule_init {
            schedule = LambdaSchedule::new(init, schedule.increment, schedule.cap);
            c.recon.lambda_r = init;
        } else {
            schedule = LambdaSchedule::new(schedule.init, schedule.increment, schedule.cap);
        }
        c.fit.schedule = schedule;
        c.fit.window_cells = c.recon.window_cells;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.scene.validate()?;
        self.fit.validate()?;
        self.recon.validate()?;
        self.edges.validate()?;
        self.two_stage.validate()?;
        if self.fps_strides.is_empty() || self.fps_strides.contains(&0) {
            return Err(Error::Config(
                "fps_strides must be non-empty positive integers".into(),
            ));
        }
        if self.fps_strides.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config(
                "fps_strides must be strictly ascending".into(),
            ));
        }
        if self.seeds == 0 {
            return Err(Error::Config("seeds must be >= 1".into()));
        }
        if !(self.nms.radius_cells > 0.0) || self.nms.max_candidates == 0 {
            return Err(Error::Config(
                "detect.nms_radius and max_candidates must be positive".into(),
            ));
        }
        if !(self.min_separation >= 0.0) || !(self.dist_threshold > 0.0) {
            return Err(Error::Config(
                "min_separation >= 0 and dist_threshold > 0 required".into(),
            ));
        }
        Ok(())
    }

    /// Canonical text form; `parse(to_text())` reproduces the config.
    pub fn to_text(&self) -> String {
        let s = &self.scene;
        let f = &self.fit;
        let e = &self.edges;
        let t = &self.two_stage;
        let mut out = String::new();
        let mut put = |k: &str, v: String| {
            let _ = writeln!(out, "{k} = {v}");
        };
        put("scene.width", s.grid.width().to_string());
        put("scene.height", s.grid.height().to_string());
        put("scene.cell_size_m", s.grid.cell_size_m().to_string());
        put("scene.num_agents", s.num_agents.to_string());
        put("scene.num_frames", s.num_frames.to_string());
        put("scene.speed_min", s.speed_cells.0.to_string());
        put("scene.speed_max", s.speed_cells.1.to_string());
        put("scene.turn_sigma_rad", s.turn_sigma_rad.to_string());
        put(
            "scene.heading_rad",
            s.heading_rad.map_or("random".into(), |h| h.to_string()),
        );
        put("scene.miss_rate", s.miss_rate.to_string());
        put("scene.fp_rate_per_frame", s.fp_rate_per_frame.to_string());
        put("scene.jitter_sigma_cells", s.jitter_sigma_cells.to_string());
        put(
            "scene.gaussian_sigma_cells",
            s.gaussian_sigma_cells.to_string(),
        );
        put(
            "scene.gaussian_radius_cells",
            s.gaussian_radius_cells.to_string(),
        );
        put("scene.seed", s.seed.to_string());
        put("fit.epochs", f.epochs.to_string());
        put("fit.steps_per_epoch", f.steps_per_epoch.to_string());
        put("fit.learning_rate", f.learning_rate.to_string());
        put("fit.optimizer", optimizer_name(f.optimizer).into());
        put("fit.lambda_increment", f.schedule.increment.to_string());
        put("fit.lambda_cap", f.schedule.cap.to_string());
        put("fit.lambda_mot", f.weights.lambda_mot.to_string());
        put("fit.lambda_fb", f.weights.lambda_fb.to_string());
        put("fit.lambda_se", f.weights.lambda_se.to_string());
        put("fit.se_radius_cells", f.se_radius_cells.to_string());
        put("recon.lambda_r", f.schedule.init.to_string());
        put("recon.window_cells", self.recon.window_cells.to_string());
        put("edges.sigma_t", e.sigma_t.to_string());
        put("edges.sigma_d", e.sigma_d.to_string());
        put("edges.sigma_m", e.sigma_m.to_string());
        put("edges.max_gap", e.max_gap.to_string());
        put("edges.entry_cost", e.entry_cost.to_string());
        put("edges.exit_cost", e.exit_cost.to_string());
        put("edges.obs_cost_scale", e.obs_cost_scale.to_string());
        put("edges.max_speed_cells", e.max_speed_cells.to_string());
        put("track.box_side", t.box_side.to_string());
        put("track.iou_threshold", t.iou_threshold.to_string());
        put("track.conf_split", t.conf_split.to_string());
        put("track.max_age", t.max_age.to_string());
        put("track.motion_max_dist", t.motion_max_dist.to_string());
        put("track.kalman_q", t.kalman_q.to_string());
        put("track.kalman_r", t.kalman_r.to_string());
        put("track.kalman_vel_var", t.kalman_vel_var.to_string());
        put("detect.nms_radius", self.nms.radius_cells.to_string());
        put("detect.max_candidates", self.nms.max_candidates.to_string());
        put("detect.min_separation", self.min_separation.to_string());
        put("eval.dist_threshold", self.dist_threshold.to_string());
        let strides: Vec<String> = self.fps_strides.iter().map(|s| s.to_string()).collect();
        put("fps_strides", strides.join(", "));
        put("seeds", self.seeds.to_string());
        let a = &self.ablations;
        put("ablations.no_mot", a.no_mot.to_string());
        put("ablations.no_se", a.no_se.to_string());
        put("ablations.no_fb", a.no_fb.to_string());
        put("ablations.no_motion_term", a.no_motion_term.to_string());
        put("output_dir", self.output_dir.display().to_string());
        out
    }
}
