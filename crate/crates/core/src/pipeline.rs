//! End-to-end experiments: phantom, degradation, filter learning, restoration,
//! edge map and metrics, with every artifact written to one directory.
//!
//! Configuration is a flat `key = value` text file; `#` starts a comment.
//! See [`ExperimentConfig`] for the keys and their defaults.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use sha2::{Digest, Sha256};

use crate::edges::pseudospectrum;
use crate::error::{Error, Result};
use crate::forward::{lowpass_op, random_mask, ForwardOp};
use crate::framebank::FilterBank;
use crate::grid::{make_grid, IndexGrid, SpectralImage};
use crate::hankel::{necessary_condition, rank_upper_bound};
use crate::image::Image;
use crate::learn::{learn, LearnConfig, RankChoice};
use crate::metrics::{evaluate, metrics_csv, MetricsRow};
use crate::phantom::{add_noise, scene_fourier, Scene};
use crate::restore::{
    ifft_baseline, lslp, split_bregman, to_function_image, LslpConfig, PenaltyRegion, RestoreConfig, Thresholding,
};

#[derive(Clone, Debug, PartialEq)]
pub enum SceneSource {
    Builtin(String),
    File(PathBuf),
}

impl SceneSource {
    pub fn load(&self) -> Result<Scene> {
        match self {
            SceneSource::Builtin(name) => {
                Scene::builtin(name).ok_or_else(|| Error::Config(format!("unknown built-in scene {name:?}")))
            }
            SceneSource::File(path) => fs::read_to_string(path)?.parse(),
        }
    }

    pub fn label(&self) -> String {
        match self {
            SceneSource::Builtin(name) => name.clone(),
            SceneSource::File(path) => path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "scene".into()),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Task {
    RandomSampling {
        fraction: f64,
        density_power: f64,
        calib: usize,
    },
    Lowpass {
        inner: (usize, usize),
    },
}

impl Task {
    pub fn label(&self) -> &'static str {
        match self {
            Task::RandomSampling { .. } => "random_sampling",
            Task::Lowpass { .. } => "lowpass",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Method {
    Proposed,
    Lslp,
    Ifft,
}

impl Method {
    pub fn label(self) -> &'static str {
        match self {
            Method::Proposed => "proposed",
            Method::Lslp => "lslp",
            Method::Ifft => "ifft",
        }
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "proposed" => Ok(Method::Proposed),
            "lslp" => Ok(Method::Lslp),
            "ifft" => Ok(Method::Ifft),
            _ => Err(Error::Config(format!("unknown method {s:?}"))),
        }
    }
}

/// Every knob of one experiment.
///
/// | key | default | meaning |
/// |---|---|---|
/// | `scene` | `square_disk` | built-in name or path to a scene file |
/// | `grid` | `64x64` | sample grid |
/// | `task` | `random_sampling` | or `lowpass` |
/// | `fraction`, `density_power`, `calib` | `0.3`, `2`, `8` | random mask |
/// | `lowpass` | `33x33` | measured block for `lowpass` |
/// | `noise` | `1e-3` | noise std relative to the largest measured magnitude |
/// | `seed` | `1` | mask uses `seed`, noise uses `seed + 1` |
/// | `learn_grid` | `33x33` | low-frequency block used for learning |
/// | `filter` | `9x9` | filter support |
/// | `rank` | `auto` | or a positive integer |
/// | `learn_beta`, `learn_beta1..3`, `learn_max_iters`, `learn_rel_tol` | `1`, `1e-2`, `200`, `5e-4` | learning |
/// | `nu`, `eps` | `1e-8`, `1e-3` | weight parameters relative to the largest singular value |
/// | `beta`, `max_iters`, `rel_tol`, `constraint_tol` | `5e-4`, `1500`, `1e-5`, `1e-4` | split Bregman |
/// | `thresholding` | `soft` | or `hard` |
/// | `penalty_region` | `valid` | or `full`, for both the proposed model and LSLP |
/// | `lslp_gamma`, `lslp_cg_tol`, `lslp_cg_max` | `2e-2`, `1e-8`, `5000` | LSLP baseline |
/// | `methods` | `proposed, lslp, ifft` | comma separated |
/// | `edge_resolution` | grid dims | edge map lattice |
/// | `minimal_filter` | `3x3` | assumed minimal support for the rank bound report |
/// | `output` | `out` | artifact directory |
/// | `timing` | `false` | record wall-clock times (breaks byte-identical reruns) |
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub scene: SceneSource,
    pub grid: (usize, usize),
    pub task: Task,
    pub noise: f64,
    pub seed: u64,
    pub learn_grid: (usize, usize),
    pub learn: LearnConfig,
    pub nu: f64,
    pub eps: f64,
    pub restore: RestoreConfig,
    pub lslp_gamma: f64,
    pub lslp_cg_tol: f64,
    pub lslp_cg_max: usize,
    pub methods: Vec<Method>,
    pub edge_resolution: Option<(usize, usize)>,
    pub minimal_filter: (usize, usize),
    pub output: PathBuf,
    pub timing: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            scene: SceneSource::Builtin("square_disk".into()),
            grid: (64, 64),
            task: Task::RandomSampling {
                fraction: 0.3,
                density_power: 2.0,
                calib: 8,
            },
            noise: 1e-3,
            seed: 1,
            learn_grid: (33, 33),
            learn: LearnConfig::default(),
            nu: 1e-8,
            eps: 1e-3,
            restore: RestoreConfig {
                beta: 5e-4,
                max_iters: 1500,
                ..RestoreConfig::default()
            },
            lslp_gamma: 2e-2,
            lslp_cg_tol: 1e-8,
            lslp_cg_max: 5000,
            methods: vec![Method::Proposed, Method::Lslp, Method::Ifft],
            edge_resolution: None,
            minimal_filter: (3, 3),
            output: PathBuf::from("out"),
            timing: false,
        }
    }
}

fn parse_dims(key: &str, v: &str) -> Result<(usize, usize)> {
    let bad = || Error::Config(format!("{key}: expected N or N1xN2, got {v:?}"));
    let mut parts = v.split('x').map(|p| p.trim().parse::<usize>().map_err(|_| bad()));
    let a = parts.next().ok_or_else(bad)??;
    let b = match parts.next() {
        Some(b) => b?,
        None => a,
    };
    if parts.next().is_some() {
        return Err(bad());
    }
    Ok((a, b))
}

fn parse_num<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {v:?}")))
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        _ => Err(Error::Config(format!("{key}: expected true or false, got {v:?}"))),
    }
}

impl ExperimentConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?
            .parse()
    }

    /// Applies one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        let (mut fraction, mut density_power, mut calib) = (0.3, 2.0, 8);
        let mut inner = (33, 33);
        match &self.task {
            Task::RandomSampling {
                fraction: f,
                density_power: d,
                calib: c,
            } => (fraction, density_power, calib) = (*f, *d, *c),
            Task::Lowpass { inner: i } => inner = *i,
        }
        match key {
            "scene" => {
                self.scene = if Scene::builtin(v).is_some() {
                    SceneSource::Builtin(v.into())
                } else {
                    SceneSource::File(PathBuf::from(v))
                }
            }
            "grid" => self.grid = parse_dims(key, v)?,
            "task" => {
                self.task = match v {
                    "random_sampling" | "random" => Task::RandomSampling {
                        fraction,
                        density_power,
                        calib,
                    },
                    "lowpass" => Task::Lowpass { inner },
                    _ => return Err(Error::Config(format!("task: unknown {v:?}"))),
                }
            }
            "fraction" | "density_power" | "calib" => {
                match key {
                    "fraction" => fraction = parse_num(key, v)?,
                    "density_power" => density_power = parse_num(key, v)?,
                    _ => calib = parse_num(key, v)?,
                }
                if let Task::RandomSampling { .. } = self.task {
                    self.task = Task::RandomSampling {
                        fraction,
                        density_power,
                        calib,
                    };
                } else {
                    return Err(Error::Config(format!("{key} only applies to task = random_sampling")));
                }
            }
            "lowpass" => match self.task {
                Task::Lowpass { .. } => {
                    self.task = Task::Lowpass {
                        inner: parse_dims(key, v)?,
                    }
                }
                _ => return Err(Error::Config("lowpass only applies to task = lowpass".into())),
            },
            "noise" => self.noise = parse_num(key, v)?,
            "seed" => self.seed = parse_num(key, v)?,
            "learn_grid" => self.learn_grid = parse_dims(key, v)?,
            "filter" => self.learn.filter_dims = parse_dims(key, v)?,
            "rank" => {
                self.learn.rank = if v == "auto" {
                    RankChoice::Auto
                } else {
                    RankChoice::Fixed(parse_num(key, v)?)
                }
            }
            "learn_beta" => self.learn.beta = parse_num(key, v)?,
            "learn_beta1" => self.learn.beta1 = parse_num(key, v)?,
            "learn_beta2" => self.learn.beta2 = parse_num(key, v)?,
            "learn_beta3" => self.learn.beta3 = parse_num(key, v)?,
            "learn_max_iters" => self.learn.max_iters = parse_num(key, v)?,
            "learn_rel_tol" => self.learn.rel_tol = parse_num(key, v)?,
            "nu" => self.nu = parse_num(key, v)?,
            "eps" => self.eps = parse_num(key, v)?,
            "beta" => self.restore.beta = parse_num(key, v)?,
            "max_iters" => self.restore.max_iters = parse_num(key, v)?,
            "rel_tol" => self.restore.rel_tol = parse_num(key, v)?,
            "constraint_tol" => self.restore.constraint_tol = parse_num(key, v)?,
            "thresholding" => {
                self.restore.thresholding = match v {
                    "soft" => Thresholding::Soft,
                    "hard" => Thresholding::Hard,
                    _ => return Err(Error::Config(format!("thresholding: unknown {v:?}"))),
                }
            }
            "penalty_region" => {
                self.restore.region = match v {
                    "valid" => PenaltyRegion::Valid,
                    "full" => PenaltyRegion::Full,
                    _ => return Err(Error::Config(format!("penalty_region: unknown {v:?}"))),
                }
            }
            "lslp_gamma" => self.lslp_gamma = parse_num(key, v)?,
            "lslp_cg_tol" => self.lslp_cg_tol = parse_num(key, v)?,
            "lslp_cg_max" => self.lslp_cg_max = parse_num(key, v)?,
            "methods" => {
                self.methods = v
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(str::parse)
                    .collect::<Result<_>>()?
            }
            "edge_resolution" => self.edge_resolution = Some(parse_dims(key, v)?),
            "minimal_filter" => self.minimal_filter = parse_dims(key, v)?,
            "output" => self.output = PathBuf::from(v),
            "timing" => self.timing = parse_bool(key, v)?,
            _ => return Err(Error::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let cfg = |m: String| Err(Error::Config(m));
        let (n1, n2) = self.grid;
        let (l1, l2) = self.learn_grid;
        if n1 == 0 || n2 == 0 {
            return cfg("grid must be positive".into());
        }
        if l1 == 0 || l2 == 0 || l1 > n1 || l2 > n2 {
            return cfg(format!("learn_grid {l1}x{l2} must fit inside grid {n1}x{n2}"));
        }
        if self.methods.is_empty() {
            return cfg("methods must not be empty".into());
        }
        if !(self.noise >= 0.0) || !self.noise.is_finite() {
            return cfg(format!("noise must be finite and >= 0, got {}", self.noise));
        }
        if !(self.nu >= 0.0) || !(self.eps > 0.0) {
            return cfg("need nu >= 0 and eps > 0".into());
        }
        if !(self.lslp_gamma >= 0.0) || !(self.lslp_cg_tol > 0.0) {
            return cfg("need lslp_gamma >= 0 and lslp_cg_tol > 0".into());
        }
        if let Task::Lowpass { inner } = self.task {
            if inner.0 > n1 || inner.1 > n2 {
                return cfg(format!("lowpass block {}x{} exceeds the grid", inner.0, inner.1));
            }
        }
        let (k1, k2) = self.learn.filter_dims;
        if k1 > l1 || k2 > l2 {
            return cfg(format!("filter {k1}x{k2} does not fit the learning grid {l1}x{l2}"));
        }
        Ok(())
    }

    /// Restore settings with `nu` and `eps` scaled by the bank's largest
    /// singular value.
    pub fn restore_config(&self, bank: &FilterBank) -> Result<RestoreConfig> {
        let s1 = bank.singular_values().first().copied().unwrap_or(0.0);
        if !(s1 > 0.0) {
            return Err(Error::Numerical("filter bank has no nonzero singular value".into()));
        }
        Ok(RestoreConfig {
            nu: self.nu * s1,
            eps: self.eps * s1,
            ..self.restore.clone()
        })
    }

    pub fn lslp_config(&self, rank: usize) -> LslpConfig {
        LslpConfig {
            rank,
            gamma: self.lslp_gamma,
            cg_tol: self.lslp_cg_tol,
            cg_max: self.lslp_cg_max,
            region: self.restore.region,
        }
    }

    pub fn build_operator(&self, grid: &IndexGrid) -> Result<ForwardOp> {
        match self.task {
            Task::RandomSampling {
                fraction,
                density_power,
                calib,
            } => random_mask(grid, fraction, density_power, calib, self.seed),
            Task::Lowpass { inner } => lowpass_op(grid, inner),
        }
    }
}

impl FromStr for ExperimentConfig {
    type Err = Error;

    fn from_str(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut seen = std::collections::HashSet::new();
        // Task first so that task parameters apply to the right variant.
        let mut entries = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", lineno + 1)))?;
            let k = k.trim().to_string();
            if !seen.insert(k.clone()) {
                return Err(Error::Config(format!("line {}: duplicate key {k:?}", lineno + 1)));
            }
            entries.push((lineno, k, v.trim().to_string()));
        }
        entries.sort_by_key(|(_, k, _)| k != "task");
        for (lineno, k, v) in entries {
            cfg.set(&k, &v).map_err(|e| match e {
                Error::Config(m) => Error::Config(format!("line {}: {m}", lineno + 1)),
                e => e,
            })?;
        }
        Ok(cfg)
    }
}

/// Identifiability checks for the learning grid and filter support.
#[derive(Clone, Debug, PartialEq)]
pub struct ConditionReport {
    pub learn_grid: (usize, usize),
    pub filter: (usize, usize),
    pub minimal_filter: (usize, usize),
    pub necessary_holds: bool,
    /// `|K'| - |K':K|` for the configured filter `K'` and minimal support `K`.
    pub rank_bound: Option<usize>,
    pub warnings: Vec<String>,
}

impl fmt::Display for ConditionReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let (l1, l2) = self.learn_grid;
        let (k1, k2) = self.filter;
        writeln!(f, "learning grid {l1}x{l2}, filter {k1}x{k2}")?;
        writeln!(
            f,
            "necessary condition: {}",
            if self.necessary_holds { "satisfied" } else { "violated" }
        )?;
        match self.rank_bound {
            Some(b) => writeln!(
                f,
                "rank upper bound for minimal support {}x{}: {b}",
                self.minimal_filter.0, self.minimal_filter.1
            )?,
            None => writeln!(f, "rank upper bound: minimal support does not fit the filter")?,
        }
        for w in &self.warnings {
            writeln!(f, "warning: {w}")?;
        }
        Ok(())
    }
}

pub fn check_conditions(cfg: &ExperimentConfig) -> ConditionReport {
    let (l1, l2) = cfg.learn_grid;
    let (k1, k2) = cfg.learn.filter_dims;
    let n = l1.min(l2);
    let necessary_holds = necessary_condition(n, k1, k2);
    let mut warnings = Vec::new();
    if !necessary_holds {
        warnings.push(format!(
            "a {n}x{n} learning grid has too few patches for a {k1}x{k2} filter; the annihilating subspace is not identifiable"
        ));
    }
    let rank_bound = match (
        IndexGrid::centered(k1, k2),
        IndexGrid::centered(cfg.minimal_filter.0, cfg.minimal_filter.1),
    ) {
        (Ok(ext), Ok(min)) => rank_upper_bound(&ext, &min).ok(),
        _ => None,
    };
    if let (Some(b), RankChoice::Fixed(r)) = (rank_bound, cfg.learn.rank) {
        if r < b {
            warnings.push(format!(
                "rank {r} is below the bound {b} for the assumed minimal support"
            ));
        }
    }
    ConditionReport {
        learn_grid: cfg.learn_grid,
        filter: cfg.learn.filter_dims,
        minimal_filter: cfg.minimal_filter,
        necessary_holds,
        rank_bound,
        warnings,
    }
}

/// Pipeline stages in execution order. Each stage reads what earlier stages
/// wrote to the output directory, so stages can also be run one at a time.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    Phantom,
    Measure,
    Learn,
    Edges,
    Restore,
    Metrics,
}

impl Stage {
    pub const ALL: [Stage; 6] = [
        Stage::Phantom,
        Stage::Measure,
        Stage::Learn,
        Stage::Edges,
        Stage::Restore,
        Stage::Metrics,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Stage::Phantom => "phantom",
            Stage::Measure => "measure",
            Stage::Learn => "learn",
            Stage::Edges => "edges",
            Stage::Restore => "restore",
            Stage::Metrics => "metrics",
        }
    }
}

/// Summary of the stages that ran.
#[derive(Clone, Debug, Default)]
pub struct PipelineReport {
    pub rows: Vec<MetricsRow>,
    pub rank: Option<usize>,
    pub learn_iters: Option<usize>,
    pub learn_converged: Option<bool>,
    /// `(file name, sha256 hex)` of every artifact written, in order.
    pub files: Vec<(String, String)>,
}

pub const MANIFEST: &str = "manifest.txt";

struct Workspace<'a> {
    cfg: &'a ExperimentConfig,
    report: PipelineReport,
    wall_ms: Vec<(Method, f64)>,
}

impl Workspace<'_> {
    fn path(&self, name: &str) -> PathBuf {
        self.cfg.output.join(name)
    }

    fn write(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        fs::write(self.path(name), bytes)?;
        self.report
            .files
            .push((name.to_string(), hex::encode(Sha256::digest(bytes))));
        Ok(())
    }

    fn write_with(&mut self, name: &str, f: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<()> {
        let mut buf = Vec::new();
        f(&mut buf)?;
        self.write(name, &buf)
    }

    fn image(&mut self, stem: &str, img: &Image) -> Result<()> {
        self.write_with(&format!("{stem}.png"), |b| img.write_png(b))?;
        self.write_with(&format!("{stem}.spc1"), |b| img.write_spc1(b))
    }

    fn read(&self, name: &str) -> Result<Vec<u8>> {
        fs::read(self.path(name)).map_err(|e| {
            Error::Io(std::io::Error::new(
                e.kind(),
                format!("{}: {e}", self.path(name).display()),
            ))
        })
    }

    fn samples(&self) -> Result<(SpectralImage, ForwardOp)> {
        let f = SpectralImage::read_spc1(&mut self.read(SAMPLES)?.as_slice())?;
        let op = ForwardOp::read_msk1(&mut self.read(MASK)?.as_slice())?;
        Ok((f, op))
    }

    fn bank(&self, sample_grid: IndexGrid) -> Result<FilterBank> {
        FilterBank::read_fbk1(&mut self.read(BANK)?.as_slice(), sample_grid)
    }

    fn run(&mut self, stage: Stage) -> Result<()> {
        match stage {
            Stage::Phantom => self.phantom(),
            Stage::Measure => self.measure(),
            Stage::Learn => self.learn(),
            Stage::Edges => self.edges(),
            Stage::Restore => self.restore(),
            Stage::Metrics => self.metrics(),
        }
        .map_err(|e| e.in_stage(stage.label()))
    }

    fn phantom(&mut self) -> Result<()> {
        let scene = self.cfg.scene.load()?;
        let grid = make_grid(self.cfg.grid.0, self.cfg.grid.1)?;
        let truth = scene_fourier(&scene, &grid)?;
        self.write_with(SPECTRUM, |b| truth.write_spc1(b))?;
        self.image("truth", &to_function_image(&truth)?)
    }

    fn measure(&mut self) -> Result<()> {
        let truth = SpectralImage::read_spc1(&mut self.read(SPECTRUM)?.as_slice())?;
        if truth.grid().dims() != self.cfg.grid {
            return Err(Error::Config(format!(
                "{SPECTRUM} is {:?}, configured grid is {:?}",
                truth.grid().dims(),
                self.cfg.grid
            )));
        }
        let op = self.cfg.build_operator(truth.grid())?;
        let clean = op.apply(&truth)?;
        let sigma = self.cfg.noise * clean.max_abs();
        let f = op.apply(&add_noise(&clean, sigma, self.cfg.seed.wrapping_add(1))?)?;
        self.write_with(MASK, |b| op.write_msk1(b))?;
        self.write_with(SAMPLES, |b| f.write_spc1(b))
    }

    fn learn(&mut self) -> Result<()> {
        let (f, op) = self.samples()?;
        let lg = make_grid(self.cfg.learn_grid.0, self.cfg.learn_grid.1)?;
        let out = learn(&f.restrict(&lg)?, &op.restrict(&lg)?, &self.cfg.learn)?;
        self.write_with(BANK, |b| out.bank.write_fbk1(b))?;
        self.write("learn_trace.csv", out.trace.to_csv(self.cfg.timing).as_bytes())?;
        self.report.rank = Some(out.rank);
        self.report.learn_iters = Some(out.iters);
        self.report.learn_converged = Some(out.converged);
        Ok(())
    }

    fn edges(&mut self) -> Result<()> {
        let lg = make_grid(self.cfg.learn_grid.0, self.cfg.learn_grid.1)?;
        let bank = self.bank(lg)?;
        let map = pseudospectrum(&bank, bank.rank(), self.cfg.edge_resolution.unwrap_or(self.cfg.grid))?;
        self.write_with("edges.png", |b| map.write_png(b))?;
        self.write_with("edges.spc1", |b| map.write_spc1(b))
    }

    fn restore(&mut self) -> Result<()> {
        let (f, op) = self.samples()?;
        let bank = self.bank(*f.grid())?;
        for &method in &self.cfg.methods.clone() {
            let t0 = Instant::now();
            let img = self
                .restore_one(method, &f, &op, &bank)
                .map_err(|e| e.in_stage(method.label()))?;
            let ms = if self.cfg.timing {
                t0.elapsed().as_secs_f64() * 1e3
            } else {
                0.0
            };
            self.wall_ms.push((method, ms));
            self.image(&format!("restored_{}", method.label()), &img)?;
        }
        Ok(())
    }

    fn restore_one(&mut self, method: Method, f: &SpectralImage, op: &ForwardOp, bank: &FilterBank) -> Result<Image> {
        let cfg = self.cfg;
        match method {
            Method::Ifft => ifft_baseline(f, op),
            Method::Proposed => {
                let rc = cfg.restore_config(bank)?;
                let out = split_bregman(f, op, bank, &rc)?;
                self.write("restore_trace.csv", out.trace.to_csv(cfg.timing).as_bytes())?;
                to_function_image(&out.v)
            }
            Method::Lslp => {
                let lc = cfg.lslp_config(bank.rank());
                to_function_image(&lslp(f, op, bank, &lc)?.v)
            }
        }
    }

    fn metrics(&mut self) -> Result<()> {
        let truth = Image::read_spc1(&mut self.read("truth.spc1")?.as_slice())?;
        let mut rows = Vec::new();
        for &method in &self.cfg.methods {
            let name = format!("restored_{}.spc1", method.label());
            let img = Image::read_spc1(&mut self.read(&name)?.as_slice())?;
            let wall_ms = self
                .wall_ms
                .iter()
                .find(|(m, _)| *m == method)
                .map_or(0.0, |(_, ms)| *ms);
            rows.push(MetricsRow {
                scene: self.cfg.scene.label(),
                task: self.cfg.task.label().to_string(),
                method: method.label().to_string(),
                report: evaluate(&truth, &img)?,
                wall_ms,
                seed: self.cfg.seed,
            });
        }
        self.write("metrics.csv", metrics_csv(&rows).as_bytes())?;
        self.report.rows = rows;
        Ok(())
    }
}

const SPECTRUM: &str = "spectrum.spc1";
const MASK: &str = "mask.msk1";
const SAMPLES: &str = "samples.spc1";
const BANK: &str = "bank.fbk1";

/// Runs the given stages in order, stopping at the first failure.
pub fn run_stages(cfg: &ExperimentConfig, stages: &[Stage]) -> Result<PipelineReport> {
    cfg.validate()?;
    fs::create_dir_all(&cfg.output)?;
    let mut ws = Workspace {
        cfg,
        report: PipelineReport::default(),
        wall_ms: Vec::new(),
    };
    for &s in stages {
        ws.run(s)?;
    }
    Ok(ws.report)
}

/// Runs every stage and writes `manifest.txt`: a status line, then the
/// SHA-256 of each artifact. On failure the status names the failing stage
/// and the list stops at the last file written.
pub fn run_pipeline(cfg: &ExperimentConfig) -> Result<PipelineReport> {
    cfg.validate()?;
    fs::create_dir_all(&cfg.output)?;
    let mut ws = Workspace {
        cfg,
        report: PipelineReport::default(),
        wall_ms: Vec::new(),
    };
    let result = Stage::ALL.iter().try_for_each(|&s| ws.run(s));
    let mut text = match &result {
        Ok(()) => "status: ok\n".to_string(),
        Err(e) => format!("status: failed: {e}\n"),
    };
    for (name, digest) in &ws.report.files {
        text.push_str(&format!("{digest}  {name}\n"));
    }
    fs::write(cfg.output.join(MANIFEST), text)?;
    result.map(|()| ws.report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_keys_comments_and_task_order() {
        let cfg: ExperimentConfig = "# desk run\nlowpass = 17x17  # block\ntask = lowpass\ngrid = 32\nrank = 12\nmethods = ifft, lslp\ntiming = true\n"
            .parse()
            .unwrap();
        assert_eq!(cfg.task, Task::Lowpass { inner: (17, 17) });
        assert_eq!(cfg.grid, (32, 32));
        assert_eq!(cfg.learn.rank, RankChoice::Fixed(12));
        assert_eq!(cfg.methods, vec![Method::Ifft, Method::Lslp]);
        assert!(cfg.timing);
    }

    #[test]
    fn rejects_bad_config() {
        for text in [
            "bogus = 1",
            "grid = 64\ngrid = 32",
            "grid 64",
            "grid = 6y4",
            "task = lowpass\nfraction = 0.2",
            "methods = fft",
            "timing = maybe",
        ] {
            let e = text.parse::<ExperimentConfig>().unwrap_err();
            assert!(matches!(e, Error::Config(_)), "{text}: {e}");
        }
        let mut cfg = ExperimentConfig::default();
        cfg.methods.clear();
        assert!(cfg.validate().is_err());
        cfg = ExperimentConfig {
            learn_grid: (65, 65),
            ..ExperimentConfig::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn condition_examples() {
        let mut cfg = ExperimentConfig::default();
        let r = check_conditions(&cfg);
        assert!(r.necessary_holds);
        assert_eq!(r.rank_bound, Some(81 - 49));
        cfg.learn_grid = (9, 9);
        assert!(!check_conditions(&cfg).necessary_holds);
        assert!(!check_conditions(&cfg).warnings.is_empty());
        cfg.learn_grid = (65, 65);
        cfg.learn.filter_dims = (25, 25);
        assert_eq!(check_conditions(&cfg).rank_bound, Some(625 - 529));
    }

    #[test]
    fn identity_task_reproduces_truth() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = ExperimentConfig {
            scene: SceneSource::Builtin("square".into()),
            grid: (16, 16),
            task: Task::Lowpass { inner: (16, 16) },
            noise: 0.0,
            learn_grid: (9, 9),
            learn: LearnConfig {
                filter_dims: (3, 3),
                rank: RankChoice::Fixed(4),
                ..LearnConfig::default()
            },
            methods: vec![Method::Ifft],
            output: dir.path().to_path_buf(),
            ..ExperimentConfig::default()
        };
        let report = run_pipeline(&cfg).unwrap();
        assert_eq!(report.rows.len(), 1);
        assert_eq!(report.rows[0].report.snr_db, f64::INFINITY);
        let manifest = fs::read_to_string(dir.path().join(MANIFEST)).unwrap();
        assert!(manifest.starts_with("status: ok\n"));
        assert!(manifest.contains("  metrics.csv\n"));
    }

    #[test]
    fn stages_one_at_a_time_match_the_pipeline() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let mut cfg = small_config(a.path());
        cfg.methods = vec![Method::Ifft, Method::Lslp];
        run_pipeline(&cfg).unwrap();
        cfg.output = b.path().to_path_buf();
        for s in Stage::ALL {
            run_stages(&cfg, &[s]).unwrap();
        }
        for name in ["bank.fbk1", "edges.spc1", "restored_lslp.spc1", "metrics.csv"] {
            assert_eq!(
                fs::read(a.path().join(name)).unwrap(),
                fs::read(b.path().join(name)).unwrap(),
                "{name}"
            );
        }
        let e = run_stages(
            &ExperimentConfig {
                output: tempfile::tempdir().unwrap().path().into(),
                ..cfg
            },
            &[Stage::Learn],
        )
        .unwrap_err();
        assert!(matches!(e.root(), Error::Io(_)), "{e}");
    }

    fn small_config(dir: &Path) -> ExperimentConfig {
        ExperimentConfig {
            scene: SceneSource::Builtin("square".into()),
            grid: (16, 16),
            task: Task::Lowpass { inner: (9, 9) },
            learn_grid: (9, 9),
            learn: LearnConfig {
                filter_dims: (3, 3),
                rank: RankChoice::Fixed(4),
                max_iters: 20,
                ..LearnConfig::default()
            },
            lslp_cg_max: 200,
            output: dir.to_path_buf(),
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn failure_is_recorded_in_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = ExperimentConfig {
            scene: SceneSource::Builtin("square".into()),
            grid: (16, 16),
            task: Task::Lowpass { inner: (9, 9) },
            learn_grid: (9, 9),
            learn: LearnConfig {
                filter_dims: (3, 3),
                rank: RankChoice::Fixed(9),
                ..LearnConfig::default()
            },
            methods: vec![Method::Ifft],
            output: dir.path().to_path_buf(),
            ..ExperimentConfig::default()
        };
        // rank 9 of 9 filters leaves no annihilating subspace for the edge map
        let e = run_pipeline(&cfg).unwrap_err();
        assert!(matches!(&e, Error::Stage { stage, .. } if stage == "edges"), "{e}");
        let manifest = fs::read_to_string(dir.path().join(MANIFEST)).unwrap();
        assert!(manifest.starts_with("status: failed: stage edges"));
        assert!(manifest.contains("  bank.fbk1\n"));
        assert!(!manifest.contains("metrics.csv"));
    }
}
