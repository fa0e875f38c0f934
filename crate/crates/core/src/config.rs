//! Run configuration and global seed plumbing.
//!
//! Configuration is a flat `key=value` text format with precedence
//! defaults < config file < (env var for the survey URL) < command-line
//! flags. The fully resolved config is serialized verbatim into each run's
//! output directory so any artifact can be reproduced from its snapshot.
//!
//! All randomness flows from `seed` expanded through [`derive_seed`] with a
//! subsystem label, so adding a consumer never perturbs another's stream.

use crate::model::FusionMode;
use sha2::{Digest, Sha256};
use std::fmt;
use std::path::{Path, PathBuf};

/// Environment variable overriding `survey_base_url`.
pub const SURVEY_URL_ENV: &str = "STARCYCLE_SURVEY_URL";

/// Stable sub-seed for a named subsystem.
pub fn derive_seed(seed: u64, label: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(label.as_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest >= 8 bytes"))
}

/// Sub-seed for a named subsystem at an index (per-variant, per-step, ...).
pub fn derive_seed_indexed(seed: u64, label: &str, index: u64) -> u64 {
    derive_seed(seed, &format!("{label}#{index}"))
}

#[derive(Debug, Clone, PartialEq)]
pub enum ConfigError {
    UnknownKey(String),
    BadValue { key: String, value: String },
    Io(String),
    Invalid(String),
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ConfigError::UnknownKey(k) => write!(f, "unknown config key: {k}"),
            ConfigError::BadValue { key, value } => {
                write!(f, "bad value for config key {key}: {value:?}")
            }
            ConfigError::Io(e) => write!(f, "config io error: {e}"),
            ConfigError::Invalid(e) => write!(f, "invalid configuration: {e}"),
        }
    }
}

impl std::error::Error for ConfigError {}

/// Every knob of the pipeline, fully resolved before any module runs.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub out: PathBuf,
    pub offline: bool,

    // model / training
    pub side: usize,
    pub fusion: FusionMode,
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub lambda_adv: f64,
    pub lambda_cyc: f64,
    pub lambda_astro: f64,
    pub lambda_idt: f64,
    pub lambda_paired: f64,
    pub checkpoint_cadence: usize,
    pub log_cadence: usize,

    // augmentation
    pub blur_sigma: f64,
    pub glow_sigma: f64,
    pub brightness_mean: f64,
    pub brightness_jitter: f64,

    // synthetic star fields
    pub synth_count: usize,
    pub synth_stars: usize,
    pub synth_background: f64,
    pub synth_psf_min: f64,
    pub synth_psf_max: f64,
    pub synth_mag_min: f64,
    pub synth_mag_max: f64,
    pub degrade_blur: f64,
    pub degrade_noise: f64,
    pub degrade_downscale: usize,

    // dataset
    pub split_train: f64,
    pub split_val: f64,
    pub preprocess_target: usize,

    // survey client
    pub survey_base_url: String,
    pub surveys: Vec<String>,
    pub catalog: PathBuf,
    pub fov_deg: f64,
    pub cutout_px: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 7,
            out: PathBuf::from("runs"),
            offline: false,
            side: 32,
            fusion: FusionMode::OpticalOnly,
            epochs: 1,
            batch: 1,
            lr: 2e-4,
            beta1: 0.5,
            beta2: 0.999,
            adam_eps: 1e-8,
            lambda_adv: 1.0,
            lambda_cyc: 10.0,
            lambda_astro: 1.0,
            lambda_idt: 0.0,
            lambda_paired: 0.0,
            checkpoint_cadence: 50,
            log_cadence: 1,
            blur_sigma: 1.0,
            glow_sigma: 0.05,
            brightness_mean: 0.9,
            brightness_jitter: 0.05,
            synth_count: 8,
            synth_stars: 6,
            synth_background: 0.05,
            synth_psf_min: 1.0,
            synth_psf_max: 1.8,
            synth_mag_min: 0.0,
            synth_mag_max: 2.5,
            degrade_blur: 1.2,
            degrade_noise: 0.05,
            degrade_downscale: 2,
            split_train: 0.8,
            split_val: 0.1,
            preprocess_target: 64,
            survey_base_url: "https://alasky.cds.unistra.fr/hips-image-services/hips2fits".into(),
            surveys: vec![
                "CDS/P/DSS2/blue".into(),
                "CDS/P/DSS2/red".into(),
                "CDS/P/DSS2/NIR".into(),
                "CDS/P/PanSTARRS/DR1/g".into(),
                "CDS/P/PanSTARRS/DR1/r".into(),
                "CDS/P/PanSTARRS/DR1/z".into(),
                "CDS/P/PanSTARRS/DR1/y".into(),
                "CDS/P/PanSTARRS/DR1/color-z-zg-g".into(),
                "CDS/P/Mellinger/color".into(),
                "CDS/P/DSS2/color".into(),
            ],
            catalog: PathBuf::from("catalog.txt"),
            fov_deg: 0.5,
            cutout_px: 64,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, ConfigError> {
    value.parse().map_err(|_| ConfigError::BadValue {
        key: key.into(),
        value: value.into(),
    })
}

impl RunConfig {
    /// Apply one `key=value` assignment (used by both file and flag layers).
    pub fn apply_kv(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        match key {
            "seed" => self.seed = parse(key, value)?,
            "out" => self.out = PathBuf::from(value),
            "offline" => self.offline = parse(key, value)?,
            "side" => self.side = parse(key, value)?,
            "fusion" => {
                self.fusion = FusionMode::parse(value).ok_or(ConfigError::BadValue {
                    key: key.into(),
                    value: value.into(),
                })?
            }
            "epochs" => self.epochs = parse(key, value)?,
            "batch" => self.batch = parse(key, value)?,
            "lr" => self.lr = parse(key, value)?,
            "beta1" => self.beta1 = parse(key, value)?,
            "beta2" => self.beta2 = parse(key, value)?,
            "adam_eps" => self.adam_eps = parse(key, value)?,
            "lambda_adv" => self.lambda_adv = parse(key, value)?,
            "lambda_cyc" => self.lambda_cyc = parse(key, value)?,
            "lambda_astro" => self.lambda_astro = parse(key, value)?,
            "lambda_idt" => self.lambda_idt = parse(key, value)?,
            "lambda_paired" => self.lambda_paired = parse(key, value)?,
            "checkpoint_cadence" => self.checkpoint_cadence = parse(key, value)?,
            "log_cadence" => self.log_cadence = parse(key, value)?,
            "blur_sigma" => self.blur_sigma = parse(key, value)?,
            "glow_sigma" => self.glow_sigma = parse(key, value)?,
            "brightness_mean" => self.brightness_mean = parse(key, value)?,
            "brightness_jitter" => self.brightness_jitter = parse(key, value)?,
            "synth_count" => self.synth_count = parse(key, value)?,
            "synth_stars" => self.synth_stars = parse(key, value)?,
            "synth_background" => self.synth_background = parse(key, value)?,
            "synth_psf_min" => self.synth_psf_min = parse(key, value)?,
            "synth_psf_max" => self.synth_psf_max = parse(key, value)?,
            "synth_mag_min" => self.synth_mag_min = parse(key, value)?,
            "synth_mag_max" => self.synth_mag_max = parse(key, value)?,
            "degrade_blur" => self.degrade_blur = parse(key, value)?,
            "degrade_noise" => self.degrade_noise = parse(key, value)?,
            "degrade_downscale" => self.degrade_downscale = parse(key, value)?,
            "split_train" => self.split_train = parse(key, value)?,
            "split_val" => self.split_val = parse(key, value)?,
            "preprocess_target" => self.preprocess_target = parse(key, value)?,
            "survey_base_url" => self.survey_base_url = value.to_string(),
            "surveys" => {
                self.surveys = value
                    .split(',')
                    .map(|s| s.trim().to_string())
                    .filter(|s| !s.is_empty())
                    .collect()
            }
            "catalog" => self.catalog = PathBuf::from(value),
            "fov_deg" => self.fov_deg = parse(key, value)?,
            "cutout_px" => self.cutout_px = parse(key, value)?,
            other => return Err(ConfigError::UnknownKey(other.into())),
        }
        Ok(())
    }

    /// Layer a `key=value` config file over the current values. Blank lines
    /// and `#` comments are ignored.
    pub fn apply_file(&mut self, path: &Path) -> Result<(), ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::Io(format!("{}: {e}", path.display())))?;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                ConfigError::Invalid(format!(
                    "{}:{}: expected key=value, got {line:?}",
                    path.display(),
                    lineno + 1
                ))
            })?;
            self.apply_kv(key.trim(), value.trim())?;
        }
        Ok(())
    }

    /// Layer the survey-URL environment override, if set.
    pub fn apply_env(&mut self) {
        if let Ok(url) = std::env::var(SURVEY_URL_ENV) {
            if !url.is_empty() {
                self.survey_base_url = url;
            }
        }
    }

    /// Validate cross-field invariants before a run starts.
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.side == 0 || self.side % 8 != 0 {
            return Err(ConfigError::Invalid(format!(
                "side must be a positive multiple of 8, got {}",
                self.side
            )));
        }
        if self.epochs == 0 || self.batch == 0 {
            return Err(ConfigError::Invalid("epochs and batch must be >= 1".into()));
        }
        if self.split_train <= 0.0
            || self.split_val < 0.0
            || self.split_train + self.split_val >= 1.0
        {
            return Err(ConfigError::Invalid(
                "split ratios must satisfy 0 < train, 0 <= val, train + val < 1".into(),
            ));
        }
        if self.degrade_downscale == 0 || self.side % self.degrade_downscale != 0 {
            return Err(ConfigError::Invalid(format!(
                "degrade_downscale must divide side, got {} / {}",
                self.side, self.degrade_downscale
            )));
        }
        for (name, v) in [
            ("lambda_adv", self.lambda_adv),
            ("lambda_cyc", self.lambda_cyc),
            ("lambda_astro", self.lambda_astro),
            ("lambda_idt", self.lambda_idt),
            ("lambda_paired", self.lambda_paired),
        ] {
            if v < 0.0 {
                return Err(ConfigError::Invalid(format!("{name} must be >= 0, got {v}")));
            }
        }
        Ok(())
    }

    /// The resolved config as sorted `key=value` lines, including the tool
    /// version. This exact text is written into every run directory.
    pub fn snapshot(&self) -> String {
        let mut lines = vec![
            format!("adam_eps={}", self.adam_eps),
            format!("batch={}", self.batch),
            format!("beta1={}", self.beta1),
            format!("beta2={}", self.beta2),
            format!("blur_sigma={}", self.blur_sigma),
            format!("brightness_jitter={}", self.brightness_jitter),
            format!("brightness_mean={}", self.brightness_mean),
            format!("catalog={}", self.catalog.display()),
            format!("checkpoint_cadence={}", self.checkpoint_cadence),
            format!("cutout_px={}", self.cutout_px),
            format!("degrade_blur={}", self.degrade_blur),
            format!("degrade_downscale={}", self.degrade_downscale),
            format!("degrade_noise={}", self.degrade_noise),
            format!("epochs={}", self.epochs),
            format!("fov_deg={}", self.fov_deg),
            format!("fusion={}", self.fusion.name()),
            format!("glow_sigma={}", self.glow_sigma),
            format!("lambda_adv={}", self.lambda_adv),
            format!("lambda_astro={}", self.lambda_astro),
            format!("lambda_cyc={}", self.lambda_cyc),
            format!("lambda_idt={}", self.lambda_idt),
            format!("lambda_paired={}", self.lambda_paired),
            format!("log_cadence={}", self.log_cadence),
            format!("lr={}", self.lr),
            format!("offline={}", self.offline),
            format!("out={}", self.out.display()),
            format!("preprocess_target={}", self.preprocess_target),
            format!("seed={}", self.seed),
            format!("side={}", self.side),
            format!("split_train={}", self.split_train),
            format!("split_val={}", self.split_val),
            format!("surveys={}", self.surveys.join(",")),
            format!("survey_base_url={}", self.survey_base_url),
            format!("synth_background={}", self.synth_background),
            format!("synth_count={}", self.synth_count),
            format!("synth_mag_max={}", self.synth_mag_max),
            format!("synth_mag_min={}", self.synth_mag_min),
            format!("synth_psf_max={}", self.synth_psf_max),
            format!("synth_psf_min={}", self.synth_psf_min),
            format!("synth_stars={}", self.synth_stars),
            format!("tool_version={}", env!("CARGO_PKG_VERSION")),
        ];
        lines.sort();
        lines.join("\n") + "\n"
    }
}
