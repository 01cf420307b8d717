//! The `cosmovae` batch command. Every subcommand reads one TOML run
//! configuration, applies flag overrides, writes the resolved configuration
//! next to its outputs and runs one pipeline stage.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::engine::{compute_metrics, ImageMetrics, TrainConfig, Trainer, FINAL_CHECKPOINT, METRICS_FILE};
use crate::error::Error;
use crate::grf::{analyze, estimate_spectrum, sample_alm, synthesize, FieldConstants, PowerSpectrum};
use crate::inpaint::{inpaint_patch, inpaint_sky, mean_fill, quantify_uncertainty, save_uq, SkyOptions, DEFAULT_UQ_SAMPLES};
use crate::losses::{FeatureExtractor, FeatureExtractorSpec};
use crate::seeding::{self, derive_seed};
use crate::sphere_data::{
    load_bundle, make_grid, read_mask_map, read_sphere_map, save_bundle, save_map, save_mask, segment,
    synthetic::{galactic_mask, random_patch_mask},
    MapFormat, Patch, PatchGrid, PatchSpec, SegmentOptions,
};
use crate::vae::{ModelConfig, VaeModel};

#[derive(Debug, Parser)]
#[command(name = "cosmovae", version, about = "Sky-map inpainting with a variational autoencoder")]
pub struct Cli {
    /// Run configuration (TOML). Missing keys take their defaults.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Global seed; every module seed is derived from it.
    #[arg(long, global = true, value_name = "N")]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Validate the configuration and inputs, print the resolved
    /// configuration and exit without running.
    #[arg(long, global = true)]
    pub dry_run: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Draw a Gaussian random field map (and optionally a mask) from a power spectrum.
    Synth(SynthArgs),
    /// Cut a map and mask into train/test patch bundles.
    Segment(SegmentArgs),
    /// Train a model on the clean patches of a bundle.
    Train(TrainArgs),
    /// Inpaint the masked regions of a map and write the full-sky result.
    Inpaint(InpaintArgs),
    /// Per-pixel mean and standard deviation over latent draws for every test patch.
    Uq(UqArgs),
    /// Estimate the angular power spectrum of a map.
    Spectrum(SpectrumArgs),
    /// Score a checkpoint against mean fill on clean patches with pool masks.
    Eval(EvalArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Power spectrum text file (`l C_l` per line).
    #[arg(long)]
    pub spectrum: Option<PathBuf>,
    #[arg(long)]
    pub n_side: Option<u32>,
    /// Also write a synthetic mask.
    #[arg(long)]
    pub with_mask: bool,
}

#[derive(Debug, Args)]
pub struct SegmentArgs {
    #[arg(long)]
    pub map: Option<PathBuf>,
    #[arg(long)]
    pub mask: Option<PathBuf>,
    #[arg(long)]
    pub lat_step: Option<f64>,
    #[arg(long)]
    pub lon_step: Option<f64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub bundle: Option<PathBuf>,
    /// Stop after this many optimizer steps.
    #[arg(long)]
    pub steps: Option<u64>,
    #[arg(long)]
    pub epochs: Option<u64>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Spectrum file for the latent prior.
    #[arg(long)]
    pub prior_spectrum: Option<PathBuf>,
    /// Continue from a checkpoint written by an earlier run.
    #[arg(long)]
    pub resume: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct InpaintArgs {
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub map: Option<PathBuf>,
    #[arg(long)]
    pub mask: Option<PathBuf>,
    /// Also write uncertainty maps with this many latent draws per patch.
    #[arg(long)]
    pub uq_samples: Option<usize>,
}

#[derive(Debug, Args)]
pub struct UqArgs {
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub bundle: Option<PathBuf>,
    /// Latent draws per patch (at least 2).
    #[arg(long, short = 'n')]
    pub samples: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SpectrumArgs {
    #[arg(long)]
    pub map: Option<PathBuf>,
    #[arg(long)]
    pub ell_max: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub bundle: Option<PathBuf>,
}

/// Input and output locations. Unset entries default to files inside the
/// output directory, so a sequence of commands sharing `--out` chains
/// together.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    pub spectrum: Option<PathBuf>,
    /// Spectrum for the latent prior; falls back to `spectrum`.
    pub prior_spectrum: Option<PathBuf>,
    pub map: Option<PathBuf>,
    pub mask: Option<PathBuf>,
    pub bundle: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthMaskConfig {
    /// Half-width of the equatorial band, degrees (0 for none).
    pub band_deg: f64,
    pub n_holes: usize,
    pub hole_radius_deg: f64,
}

impl Default for SynthMaskConfig {
    fn default() -> Self {
        Self {
            band_deg: 0.0,
            n_holes: 8,
            hole_radius_deg: 3.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub n_side: u32,
    /// Truncate the spectrum at this multipole.
    pub ell_max: Option<usize>,
    /// Emit `t_cmb (1 + field)` instead of the dimensionless field.
    pub t_cmb: Option<f64>,
    pub format: MapFormat,
    pub mask: Option<SynthMaskConfig>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_side: 64,
            ell_max: None,
            t_cmb: None,
            format: MapFormat::Raw,
            mask: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridConfig {
    pub lat_step_deg: f64,
    pub lon_step_deg: f64,
    pub lat_half_extent_deg: f64,
    pub lon_half_extent_deg: f64,
    pub height_px: usize,
    pub width_px: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        let t = PatchSpec::default();
        Self {
            lat_step_deg: 10.0,
            lon_step_deg: 20.0,
            lat_half_extent_deg: t.lat_half_extent_deg,
            lon_half_extent_deg: t.lon_half_extent_deg,
            height_px: t.height_px,
            width_px: t.width_px,
        }
    }
}

impl GridConfig {
    pub fn build(&self) -> crate::error::Result<PatchGrid> {
        let t = PatchSpec {
            lat_half_extent_deg: self.lat_half_extent_deg,
            lon_half_extent_deg: self.lon_half_extent_deg,
            height_px: self.height_px,
            width_px: self.width_px,
            ..PatchSpec::default()
        };
        make_grid(self.lat_step_deg, self.lon_step_deg, &t)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum MaskSource {
    /// Random ellipse masks.
    #[default]
    Synthetic,
    /// The masks of the bundle's test patches.
    Bundle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MaskPoolConfig {
    pub source: MaskSource,
    /// Pool size for synthetic masks.
    pub count: usize,
}

impl Default for MaskPoolConfig {
    fn default() -> Self {
        Self {
            source: MaskSource::Synthetic,
            count: 64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InpaintConfig {
    pub noise_seed: u64,
    pub uq_samples: usize,
    /// Latent draws per patch written by `inpaint` alongside the map.
    pub sky_uq_samples: Option<usize>,
}

impl Default for InpaintConfig {
    fn default() -> Self {
        Self {
            noise_seed: 0,
            uq_samples: DEFAULT_UQ_SAMPLES,
            sky_uq_samples: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpectrumConfig {
    pub ell_max: usize,
}

impl Default for SpectrumConfig {
    fn default() -> Self {
        Self { ell_max: 32 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub max_patches: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { max_patches: 64 }
    }
}

/// One document holding every setting of a run.
///
/// Module seeds (`model.seed`, `train.seed`, `extractor.seed`,
/// `inpaint.noise_seed`) are derived from `seed` during resolution and
/// overwrite whatever the file says. `model.input_hw` is taken from the
/// grid's patch size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub out: PathBuf,
    pub paths: Paths,
    pub synth: SynthConfig,
    pub grid: GridConfig,
    pub segment: SegmentOptions,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub masks: MaskPoolConfig,
    pub extractor: FeatureExtractorSpec,
    pub inpaint: InpaintConfig,
    pub spectrum: SpectrumConfig,
    pub eval: EvalConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        let grid = GridConfig::default();
        Self {
            seed: 0,
            out: PathBuf::from("run"),
            paths: Paths::default(),
            synth: SynthConfig::default(),
            model: ModelConfig {
                input_hw: (grid.height_px, grid.width_px),
                ..ModelConfig::default()
            },
            grid,
            segment: SegmentOptions::default(),
            train: TrainConfig::default(),
            masks: MaskPoolConfig::default(),
            extractor: FeatureExtractorSpec::default(),
            inpaint: InpaintConfig::default(),
            spectrum: SpectrumConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Usage(format!("invalid config: {e}")))
    }

    /// Read a config file. Relative entries under `[paths]` are taken
    /// relative to the file's directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg = Self::parse(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        let p = &mut cfg.paths;
        for entry in [
            &mut p.spectrum,
            &mut p.prior_spectrum,
            &mut p.map,
            &mut p.mask,
            &mut p.bundle,
            &mut p.checkpoint,
        ] {
            if let Some(v) = entry.as_mut().filter(|v| v.is_relative()) {
                *v = base.join(&*v);
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("run config is serializable")
    }

    /// Derive module seeds from the global seed and tie the model input
    /// size to the grid.
    pub fn resolve(&mut self) {
        let s = self.seed;
        self.model.seed = derive_seed(s, "model", 0);
        self.train.seed = derive_seed(s, "train", 0);
        self.extractor.seed = derive_seed(s, "extractor", 0);
        self.inpaint.noise_seed = derive_seed(s, "inpaint", 0);
        self.model.input_hw = (self.grid.height_px, self.grid.width_px);
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.model.validate()?;
        self.train.validate()?;
        self.train.weights.validate()?;
        self.grid.build()?;
        if self.masks.source == MaskSource::Synthetic && self.masks.count == 0 {
            return Err(CliError::Usage("masks.count must be at least 1".into()));
        }
        Ok(())
    }

    fn or_out(&self, p: &Option<PathBuf>, default: &str) -> PathBuf {
        p.clone().unwrap_or_else(|| self.out.join(default))
    }

    pub fn map_path(&self) -> PathBuf {
        self.or_out(&self.paths.map, "map.smap")
    }

    pub fn mask_path(&self) -> PathBuf {
        self.or_out(&self.paths.mask, "mask.smap")
    }

    pub fn bundle_path(&self) -> PathBuf {
        self.or_out(&self.paths.bundle, "bundle")
    }

    pub fn checkpoint_path(&self) -> PathBuf {
        self.or_out(&self.paths.checkpoint, FINAL_CHECKPOINT)
    }
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Run(Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Run(Error::Config(_)) => 2,
            CliError::Run(_) => 1,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Run(e) => write!(f, "error [{}]: {e}", e.code()),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Run(e)
    }
}

fn require(path: &Path, what: &str) -> Result<(), CliError> {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::Usage(format!("{what} not found: {}", path.display())))
    }
}

fn create_out(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e).into())
}

fn map_file(cfg: &RunConfig, stem: &str) -> PathBuf {
    let ext = match cfg.synth.format {
        MapFormat::Raw => "smap",
        MapFormat::Fits => "fits",
    };
    cfg.out.join(format!("{stem}.{ext}"))
}

/// Build the resolved configuration for `cli`: file, then flags.
pub fn resolve_config(cli: &Cli) -> Result<RunConfig, CliError> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = &cli.out {
        cfg.out = o.clone();
    }
    match &cli.command {
        Command::Synth(a) => {
            set(&mut cfg.paths.spectrum, &a.spectrum);
            if let Some(n) = a.n_side {
                cfg.synth.n_side = n;
            }
            if a.with_mask && cfg.synth.mask.is_none() {
                cfg.synth.mask = Some(SynthMaskConfig::default());
            }
        }
        Command::Segment(a) => {
            set(&mut cfg.paths.map, &a.map);
            set(&mut cfg.paths.mask, &a.mask);
            if let Some(v) = a.lat_step {
                cfg.grid.lat_step_deg = v;
            }
            if let Some(v) = a.lon_step {
                cfg.grid.lon_step_deg = v;
            }
        }
        Command::Train(a) => {
            set(&mut cfg.paths.bundle, &a.bundle);
            set(&mut cfg.paths.prior_spectrum, &a.prior_spectrum);
            if a.steps.is_some() {
                cfg.train.max_steps = a.steps;
            }
            if let Some(v) = a.epochs {
                cfg.train.max_epochs = v;
            }
            if let Some(v) = a.lr {
                cfg.train.learning_rate = v;
            }
            if let Some(v) = a.batch_size {
                cfg.train.batch_size = v;
            }
        }
        Command::Inpaint(a) => {
            set(&mut cfg.paths.checkpoint, &a.checkpoint);
            set(&mut cfg.paths.map, &a.map);
            set(&mut cfg.paths.mask, &a.mask);
            if a.uq_samples.is_some() {
                cfg.inpaint.sky_uq_samples = a.uq_samples;
            }
        }
        Command::Uq(a) => {
            set(&mut cfg.paths.checkpoint, &a.checkpoint);
            set(&mut cfg.paths.bundle, &a.bundle);
            if let Some(n) = a.samples {
                cfg.inpaint.uq_samples = n;
            }
        }
        Command::Spectrum(a) => {
            set(&mut cfg.paths.map, &a.map);
            if let Some(l) = a.ell_max {
                cfg.spectrum.ell_max = l;
            }
        }
        Command::Eval(a) => {
            set(&mut cfg.paths.checkpoint, &a.checkpoint);
            set(&mut cfg.paths.bundle, &a.bundle);
        }
    }
    cfg.resolve();
    cfg.validate()?;
    Ok(cfg)
}

fn set(dst: &mut Option<PathBuf>, src: &Option<PathBuf>) {
    if src.is_some() {
        dst.clone_from(src);
    }
}

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::Synth(_) => "synth",
        Command::Segment(_) => "segment",
        Command::Train(_) => "train",
        Command::Inpaint(_) => "inpaint",
        Command::Uq(_) => "uq",
        Command::Spectrum(_) => "spectrum",
        Command::Eval(_) => "eval",
    }
}

/// Inputs each command reads; checked before anything runs.
fn check_inputs(cli: &Cli, cfg: &RunConfig) -> Result<(), CliError> {
    match &cli.command {
        Command::Synth(_) => {
            let p = cfg
                .paths
                .spectrum
                .as_ref()
                .ok_or_else(|| CliError::Usage("synth needs a spectrum (--spectrum or paths.spectrum)".into()))?;
            require(p, "spectrum file")
        }
        Command::Segment(_) => {
            require(&cfg.map_path(), "map")?;
            require(&cfg.mask_path(), "mask")
        }
        Command::Train(_) => {
            require(&cfg.bundle_path(), "patch bundle")?;
            if let Command::Train(TrainArgs { resume: Some(r), .. }) = &cli.command {
                require(r, "resume checkpoint")?;
            }
            require(&prior_path(cfg)?, "prior spectrum")
        }
        Command::Inpaint(_) => {
            require(&cfg.checkpoint_path(), "checkpoint")?;
            require(&cfg.map_path(), "map")?;
            require(&cfg.mask_path(), "mask")
        }
        Command::Uq(_) => {
            if cfg.inpaint.uq_samples < 2 {
                return Err(CliError::Usage(format!(
                    "uq needs at least 2 samples, got {}",
                    cfg.inpaint.uq_samples
                )));
            }
            require(&cfg.checkpoint_path(), "checkpoint")?;
            require(&cfg.bundle_path(), "patch bundle")
        }
        Command::Spectrum(_) => require(&cfg.map_path(), "map"),
        Command::Eval(_) => {
            require(&cfg.checkpoint_path(), "checkpoint")?;
            require(&cfg.bundle_path(), "patch bundle")
        }
    }
}

fn prior_path(cfg: &RunConfig) -> Result<PathBuf, CliError> {
    cfg.paths
        .prior_spectrum
        .clone()
        .or_else(|| cfg.paths.spectrum.clone())
        .ok_or_else(|| CliError::Usage("train needs paths.prior_spectrum or paths.spectrum".into()))
}

/// Parse arguments, run, and return the process exit code.
pub fn main() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{e}");
            e.exit_code()
        }
    }
}

pub fn run(cli: &Cli) -> Result<(), CliError> {
    let cfg = resolve_config(cli)?;
    check_inputs(cli, &cfg)?;
    if cli.dry_run {
        print!("{}", cfg.to_toml());
        return Ok(());
    }
    create_out(&cfg.out)?;
    let name = command_name(&cli.command);
    let resolved = cfg.out.join(format!("{name}.resolved.toml"));
    fs::write(&resolved, cfg.to_toml()).map_err(|e| Error::io(&resolved, e))?;
    match &cli.command {
        Command::Synth(_) => cmd_synth(&cfg),
        Command::Segment(_) => cmd_segment(&cfg),
        Command::Train(a) => cmd_train(&cfg, a.resume.as_deref()),
        Command::Inpaint(_) => cmd_inpaint(&cfg),
        Command::Uq(_) => cmd_uq(&cfg),
        Command::Spectrum(_) => cmd_spectrum(&cfg),
        Command::Eval(_) => cmd_eval(&cfg),
    }
}

fn cmd_synth(cfg: &RunConfig) -> Result<(), CliError> {
    let path = cfg.paths.spectrum.as_ref().expect("checked");
    let mut cl = PowerSpectrum::read(path)?;
    if let Some(l) = cfg.synth.ell_max {
        let v = cl.values()[..=l.min(cl.ell_max())].to_vec();
        cl = PowerSpectrum::new(v)?;
    }
    let constants = cfg.synth.t_cmb.map(FieldConstants::new).transpose()?;
    let alm = sample_alm(&cl, derive_seed(cfg.seed, "synth-map", 0));
    let map = synthesize(&alm, cfg.synth.n_side, constants)?;
    let out = map_file(cfg, "map");
    save_map(&out, &map, cfg.synth.format)?;
    println!("map: {} (nside {}, l_max {})", out.display(), cfg.synth.n_side, cl.ell_max());
    if let Some(m) = &cfg.synth.mask {
        let mask = galactic_mask(
            cfg.synth.n_side,
            m.band_deg,
            m.n_holes,
            m.hole_radius_deg,
            derive_seed(cfg.seed, "synth-mask", 0),
        )?;
        let out = map_file(cfg, "mask");
        save_mask(&out, &mask, cfg.synth.format)?;
        println!("mask: {} ({} holes)", out.display(), mask.n_holes());
    }
    Ok(())
}

fn cmd_segment(cfg: &RunConfig) -> Result<(), CliError> {
    let map = read_sphere_map(cfg.map_path())?;
    let mask = read_mask_map(cfg.mask_path())?;
    let grid = cfg.grid.build()?.with_nside(map.n_side());
    let (train, test) = segment(&map, &mask, &grid, cfg.segment)?;
    let out = cfg.out.join("bundle");
    save_bundle(&out, &grid, &train, &test)?;
    println!("patches: {} train, {} test -> {}", train.len(), test.len(), out.display());
    Ok(())
}

fn mask_pool(cfg: &RunConfig, test: &[Patch]) -> Result<Vec<Array2<f64>>, CliError> {
    let (h, w) = cfg.model.input_hw;
    Ok(match cfg.masks.source {
        MaskSource::Synthetic => {
            let mut rng = seeding::stream(cfg.seed, "mask-pool", 0);
            (0..cfg.masks.count).map(|_| random_patch_mask(h, w, &mut rng)).collect()
        }
        MaskSource::Bundle => {
            if test.is_empty() {
                return Err(Error::EmptyMaskPool.into());
            }
            test.iter().map(|p| p.mask.clone()).collect()
        }
    })
}

fn load_model(cfg: &RunConfig) -> Result<VaeModel, CliError> {
    let model = VaeModel::load(cfg.checkpoint_path())?;
    if model.config().input_hw != cfg.model.input_hw {
        return Err(CliError::Usage(format!(
            "checkpoint expects {:?} patches, the grid makes {:?}",
            model.config().input_hw,
            cfg.model.input_hw
        )));
    }
    Ok(model)
}

fn cmd_train(cfg: &RunConfig, resume: Option<&Path>) -> Result<(), CliError> {
    let bundle = load_bundle(cfg.bundle_path())?;
    let pool = mask_pool(cfg, &bundle.test)?;
    let extractor = FeatureExtractor::build(&cfg.extractor)?;
    let prior = PowerSpectrum::read(prior_path(cfg)?)?;
    let mut trainer = match resume {
        Some(p) => Trainer::resume(p, &bundle.train, &pool, &extractor, &prior)?,
        None => {
            let model = VaeModel::init(cfg.model.clone())?;
            Trainer::new(model, &bundle.train, &pool, &extractor, &prior, cfg.train.clone())?
        }
    }
    .with_output(&cfg.out)?;
    trainer.run()?;
    for r in trainer.rows() {
        println!(
            "epoch {} step {}: loss {:.6} mse {:.6} mae {:.6} psnr {:.3}",
            r.epoch, r.step, r.total, r.mse, r.mae, r.psnr
        );
    }
    println!(
        "trained {} steps; metrics {}, model {}",
        trainer.step,
        cfg.out.join(METRICS_FILE).display(),
        cfg.out.join(FINAL_CHECKPOINT).display()
    );
    Ok(())
}

fn cmd_inpaint(cfg: &RunConfig) -> Result<(), CliError> {
    let model = load_model(cfg)?;
    let map = read_sphere_map(cfg.map_path())?;
    let mask = read_mask_map(cfg.mask_path())?;
    let grid = cfg.grid.build()?.with_nside(map.n_side());
    let opts = SkyOptions {
        segment: cfg.segment,
        noise_seed: cfg.inpaint.noise_seed,
        uq_samples: cfg.inpaint.sky_uq_samples,
    };
    let r = inpaint_sky(&model, &map, &mask, &grid, &opts)?;
    let out = map_file(cfg, "inpainted");
    save_map(&out, &r.map, cfg.synth.format)?;
    if !r.uq.is_empty() {
        save_uq(cfg.out.join("uq"), &r.uq)?;
    }
    println!("inpainted {} patches -> {}", r.patches.len(), out.display());
    Ok(())
}

fn cmd_uq(cfg: &RunConfig) -> Result<(), CliError> {
    let model = load_model(cfg)?;
    let bundle = load_bundle(cfg.bundle_path())?;
    let n = cfg.inpaint.uq_samples;
    let results = bundle
        .test
        .iter()
        .map(|p| quantify_uncertainty(&model, p, n, cfg.inpaint.noise_seed))
        .collect::<crate::error::Result<Vec<_>>>()?;
    let out = cfg.out.join("uq");
    save_uq(&out, &results)?;
    println!("uncertainty for {} patches ({n} draws) -> {}", results.len(), out.display());
    Ok(())
}

fn cmd_spectrum(cfg: &RunConfig) -> Result<(), CliError> {
    let map = read_sphere_map(cfg.map_path())?;
    let cl = estimate_spectrum(&analyze(&map, cfg.spectrum.ell_max)?);
    let out = cfg.out.join("spectrum.txt");
    cl.write(&out)?;
    println!("spectrum up to l = {} -> {}", cl.ell_max(), out.display());
    Ok(())
}

#[derive(Debug, Serialize)]
struct EvalReport {
    n_patches: usize,
    model: ImageMetrics,
    mean_fill: ImageMetrics,
}

/// Hole-region metrics of `filled` against `truth`.
fn hole_metrics(pairs: &[(Array2<f64>, Array2<f64>, Array2<f64>)], peak: f64) -> crate::error::Result<ImageMetrics> {
    let n: usize = pairs.iter().map(|(_, _, m)| m.iter().filter(|&&v| v == 1.0).count()).sum();
    let mut a = Array2::zeros((1, n));
    let mut b = Array2::zeros((1, n));
    let mut k = 0;
    for (y_hat, y, m) in pairs {
        for ((&p, &t), &h) in y_hat.iter().zip(y).zip(m) {
            if h == 1.0 {
                a[(0, k)] = p;
                b[(0, k)] = t;
                k += 1;
            }
        }
    }
    compute_metrics(&a, &b, peak)
}

fn cmd_eval(cfg: &RunConfig) -> Result<(), CliError> {
    let model = load_model(cfg)?;
    let bundle = load_bundle(cfg.bundle_path())?;
    let pool = mask_pool(cfg, &bundle.test)?;
    let mut rng = seeding::stream(cfg.seed, "eval-masks", 0);
    let mut ours = Vec::new();
    let mut base = Vec::new();
    for p in bundle.train.iter().take(cfg.eval.max_patches) {
        use rand::Rng;
        let mask = pool[rng.random_range(0..pool.len())].clone();
        let masked = p.with_mask(mask.clone())?;
        ours.push((inpaint_patch(&model, &masked, cfg.inpaint.noise_seed)?.image, p.image.clone(), mask.clone()));
        base.push((mean_fill(&masked)?.image, p.image.clone(), mask));
    }
    if ours.is_empty() {
        return Err(CliError::Usage("eval needs clean patches in the bundle".into()));
    }
    let report = EvalReport {
        n_patches: ours.len(),
        model: hole_metrics(&ours, cfg.train.peak)?,
        mean_fill: hole_metrics(&base, cfg.train.peak)?,
    };
    let out = cfg.out.join("eval.json");
    fs::write(&out, serde_json::to_string_pretty(&report).map_err(Error::from)?).map_err(|e| Error::io(&out, e))?;
    println!(
        "hole mse: model {:.6}, mean fill {:.6} over {} patches -> {}",
        report.model.mse,
        report.mean_fill.mse,
        report.n_patches,
        out.display()
    );
    Ok(())
}
