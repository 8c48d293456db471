//! End-to-end runs: prior, training, detection and evaluation, driven by a
//! flat `key = value` configuration.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::affinity::{compute_prior, compute_prior_multiscale, AffinityConfig, PriorMap};
use crate::change::{confusion_map, spatial_filter, ChangeMap, DifferenceImage, FilterConfig};
use crate::error::{Error, Result};
use crate::losses::LossWeights;
use crate::metrics::{evaluate, MetricsReport};
use crate::raster::{self, log_transform, normalize, NormalizedRaster, PngChannels, Raster};
use crate::synthetic::make_toy;
use crate::translators::{
    history_csv, save_model, train, Arch, Model, TrainConfig, TrainOutcome, Variant,
};

/// Environment variable that, when set, overrides the configured seed.
pub const SEED_ENV: &str = "HETCD_SEED";
/// Values at or below this are clamped before a log transform.
pub const LOG_FLOOR: f32 = 1e-6;

pub const CONFIG_FILE: &str = "config.txt";
pub const ALPHA_FILE: &str = "alpha.hcdr";
pub const ALPHA_PNG: &str = "alpha.png";
pub const MODEL_FILE: &str = "model.hcdm";
pub const HISTORY_FILE: &str = "history.csv";
pub const DIFFERENCE_FILE: &str = "d.hcdr";
pub const FILTERED_FILE: &str = "d_filtered.hcdr";
pub const DIFFERENCE_PNG: &str = "d.png";
pub const CHANGE_MAP_PNG: &str = "change_map.png";
pub const CONFUSION_PNG: &str = "confusion_map.png";
pub const METRICS_FILE: &str = "metrics.csv";

#[derive(Clone, Debug, PartialEq)]
pub struct PipelineConfig {
    pub arch: Arch,
    pub variant: Variant,
    pub affinity: AffinityConfig,
    pub train: TrainConfig,
    pub weights: LossWeights,
    /// Smooth the difference image before thresholding.
    pub filter: bool,
    pub filter_config: FilterConfig,
    /// Log-transform the first image (SAR intensities) before normalizing.
    pub log_x: bool,
    pub log_y: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            arch: Arch::XNet,
            variant: Variant::Proposed,
            affinity: AffinityConfig::default(),
            train: TrainConfig::default(),
            weights: LossWeights::default(),
            filter: true,
            filter_config: FilterConfig::default(),
            log_x: false,
            log_y: false,
        }
    }
}

/// Every accepted key, in snapshot order.
pub const CONFIG_KEYS: [&str; 27] = [
    "arch",
    "variant",
    "seed",
    "log_x",
    "log_y",
    "patch_size",
    "stride",
    "knn_fraction",
    "multiscale",
    "epochs",
    "batches_per_epoch",
    "batch_size",
    "patch_hw",
    "lr",
    "milestones",
    "augmentation",
    "dropout",
    "w_adv",
    "w_ae",
    "w_cyc",
    "w_alpha",
    "w_theta",
    "filter",
    "filter_radius",
    "filter_spatial_sigma",
    "filter_range_width",
    "filter_iterations",
];

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::config(format!("invalid value `{value}` for `{key}`")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "yes" | "1" | "on" => Ok(true),
        "false" | "no" | "0" | "off" => Ok(false),
        _ => Err(Error::config(format!("`{key}` expects true or false, got `{value}`"))),
    }
}

fn parse_list(key: &str, value: &str) -> Result<Vec<usize>> {
    if value.is_empty() || value == "none" {
        return Ok(Vec::new());
    }
    value.split(',').map(|v| parse(key, v.trim())).collect()
}

impl PipelineConfig {
    pub fn seed(&self) -> u64 {
        self.train.seed
    }

    /// Sets one key. Unknown keys are an error.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key {
            "arch" => self.arch = v.parse()?,
            "variant" => self.variant = v.parse()?,
            "seed" => self.train.seed = parse(key, v)?,
            "log_x" => self.log_x = parse_bool(key, v)?,
            "log_y" => self.log_y = parse_bool(key, v)?,
            "patch_size" => self.affinity.patch_size = parse(key, v)?,
            "stride" => self.affinity.stride = parse(key, v)?,
            "knn_fraction" => self.affinity.knn_fraction = parse(key, v)?,
            "multiscale" => self.affinity.multiscale = parse_bool(key, v)?,
            "epochs" => self.train.epochs = parse(key, v)?,
            "batches_per_epoch" => self.train.batches_per_epoch = parse(key, v)?,
            "batch_size" => self.train.batch_size = parse(key, v)?,
            "patch_hw" => self.train.patch_hw = parse(key, v)?,
            "lr" => self.train.lr = parse(key, v)?,
            "milestones" => self.train.milestones = parse_list(key, v)?,
            "augmentation" => self.train.augmentation = parse_bool(key, v)?,
            "dropout" => self.train.dropout = parse(key, v)?,
            "w_adv" => self.weights.adv = parse(key, v)?,
            "w_ae" => self.weights.ae = parse(key, v)?,
            "w_cyc" => self.weights.cyc = parse(key, v)?,
            "w_alpha" => self.weights.alpha = parse(key, v)?,
            "w_theta" => self.weights.theta = parse(key, v)?,
            "filter" => self.filter = parse_bool(key, v)?,
            "filter_radius" => self.filter_config.radius = parse(key, v)?,
            "filter_spatial_sigma" => self.filter_config.spatial_sigma = parse(key, v)?,
            "filter_range_width" => self.filter_config.range_width = parse(key, v)?,
            "filter_iterations" => self.filter_config.iterations = parse(key, v)?,
            _ => return Err(Error::config(format!("unknown configuration key `{key}`"))),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        let list = |v: &[usize]| {
            if v.is_empty() {
                "none".to_string()
            } else {
                v.iter().map(|m| m.to_string()).collect::<Vec<_>>().join(",")
            }
        };
        Some(match key {
            "arch" => self.arch.to_string(),
            "variant" => self.variant.to_string(),
            "seed" => self.train.seed.to_string(),
            "log_x" => self.log_x.to_string(),
            "log_y" => self.log_y.to_string(),
            "patch_size" => self.affinity.patch_size.to_string(),
            "stride" => self.affinity.stride.to_string(),
            "knn_fraction" => self.affinity.knn_fraction.to_string(),
            "multiscale" => self.affinity.multiscale.to_string(),
            "epochs" => self.train.epochs.to_string(),
            "batches_per_epoch" => self.train.batches_per_epoch.to_string(),
            "batch_size" => self.train.batch_size.to_string(),
            "patch_hw" => self.train.patch_hw.to_string(),
            "lr" => self.train.lr.to_string(),
            "milestones" => list(&self.train.milestones),
            "augmentation" => self.train.augmentation.to_string(),
            "dropout" => self.train.dropout.to_string(),
            "w_adv" => self.weights.adv.to_string(),
            "w_ae" => self.weights.ae.to_string(),
            "w_cyc" => self.weights.cyc.to_string(),
            "w_alpha" => self.weights.alpha.to_string(),
            "w_theta" => self.weights.theta.to_string(),
            "filter" => self.filter.to_string(),
            "filter_radius" => self.filter_config.radius.to_string(),
            "filter_spatial_sigma" => self.filter_config.spatial_sigma.to_string(),
            "filter_range_width" => self.filter_config.range_width.to_string(),
            "filter_iterations" => self.filter_config.iterations.to_string(),
            _ => return None,
        })
    }

    /// Applies `key = value` lines. Blank lines and `#` comments are skipped.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::config(format!("line {}: expected `key = value`", i + 1))
            })?;
            self.set(key.trim(), value)
                .map_err(|e| Error::config(format!("line {}: {e}", i + 1)))?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        self.apply_text(&text)
    }

    /// Replaces the seed with the value of [`SEED_ENV`] when it is set.
    pub fn apply_env_seed(&mut self) -> Result<()> {
        match std::env::var(SEED_ENV) {
            Ok(v) => self.set("seed", &v),
            Err(std::env::VarError::NotPresent) => Ok(()),
            Err(e) => Err(Error::config(format!("{SEED_ENV}: {e}"))),
        }
    }

    /// Resolved configuration, one `key = value` per line, re-readable by
    /// [`PipelineConfig::apply_text`].
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for key in CONFIG_KEYS {
            writeln!(s, "{key} = {}", self.get(key).unwrap()).unwrap();
        }
        s
    }

    pub fn validate(&self) -> Result<()> {
        self.variant.check(self.arch)?;
        self.affinity.validate()?;
        self.train.validate()?;
        self.weights.validate()?;
        self.filter_config.validate()
    }
}

fn stage<T>(name: &'static str, r: Result<T>) -> Result<T> {
    r.map_err(|e| Error::Stage {
        stage: name,
        source: Box::new(e),
    })
}

/// Optional log transform followed by per-channel min-max normalization.
pub fn prepare(x: &Raster, y: &Raster, cfg: &PipelineConfig) -> Result<(NormalizedRaster, NormalizedRaster)> {
    if !x.same_grid(y) {
        return Err(Error::shape(format!(
            "images differ in size: {}x{} vs {}x{}",
            x.height(),
            x.width(),
            y.height(),
            y.width()
        )));
    }
    let prep = |r: &Raster, log: bool| {
        if log {
            normalize(&log_transform(r, LOG_FLOOR))
        } else {
            normalize(r)
        }
    };
    Ok((prep(x, cfg.log_x), prep(y, cfg.log_y)))
}

pub fn prior(x: &NormalizedRaster, y: &NormalizedRaster, cfg: &AffinityConfig) -> Result<PriorMap> {
    if cfg.multiscale {
        compute_prior_multiscale(x, y, cfg)
    } else {
        compute_prior(x, y, cfg)
    }
}

/// Difference image, its filtered version and the thresholded map.
#[derive(Clone, Debug)]
pub struct Detection {
    pub difference: DifferenceImage,
    pub filtered: Vec<f64>,
    pub map: ChangeMap,
}

pub fn detect(
    model: &Model,
    x: &NormalizedRaster,
    y: &NormalizedRaster,
    filter: Option<&FilterConfig>,
) -> Result<Detection> {
    let difference = model.difference(x.raster(), y.raster())?;
    let (h, w) = (difference.height, difference.width);
    let filtered = match filter {
        Some(f) => spatial_filter(&difference.combined, h, w, f)?,
        None => difference.combined.clone(),
    };
    let map = ChangeMap::from_threshold(&filtered, h, w)?;
    Ok(Detection {
        difference,
        filtered,
        map,
    })
}

/// Files written by one run. A run that fails renames whatever it wrote to
/// `<name>.partial`.
#[derive(Debug, Default)]
struct Outputs {
    dir: PathBuf,
    written: Vec<PathBuf>,
}

impl Outputs {
    fn path(&mut self, name: &str) -> PathBuf {
        let p = self.dir.join(name);
        self.written.push(p.clone());
        p
    }

    fn write(&mut self, name: &str, contents: &[u8]) -> Result<PathBuf> {
        let p = self.path(name);
        std::fs::write(&p, contents).map_err(|e| Error::io(&p, e))?;
        Ok(p)
    }

    fn mark_partial(&self) {
        for p in &self.written {
            if p.exists() {
                let mut name = p.clone().into_os_string();
                name.push(".partial");
                // Best effort: the original error is what gets reported.
                let _ = std::fs::rename(p, name);
            }
        }
    }
}

/// What a completed run produced.
#[derive(Debug)]
pub struct RunReport {
    pub files: Vec<PathBuf>,
    pub metrics: Option<MetricsReport>,
    pub prior_auc: Option<f64>,
    pub threshold: f64,
    pub changed_pixels: usize,
}

/// Runs prior, training, detection and (with `truth`) evaluation, writing
/// every artifact plus the resolved configuration into `out_dir`.
pub fn run_pipeline(
    x: &Raster,
    y: &Raster,
    truth: Option<&[bool]>,
    cfg: &PipelineConfig,
    out_dir: impl AsRef<Path>,
) -> Result<RunReport> {
    let dir = out_dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut out = Outputs {
        dir: dir.to_path_buf(),
        written: Vec::new(),
    };
    let result = run_stages(x, y, truth, cfg, &mut out);
    if result.is_err() {
        out.mark_partial();
    }
    result
}

fn run_stages(
    x: &Raster,
    y: &Raster,
    truth: Option<&[bool]>,
    cfg: &PipelineConfig,
    out: &mut Outputs,
) -> Result<RunReport> {
    stage("config", cfg.validate())?;
    out.write(CONFIG_FILE, cfg.to_text().as_bytes())?;
    if let Some(t) = truth {
        if t.len() != x.pixel_count() {
            return stage(
                "evaluate",
                Err(Error::shape("ground truth does not match the images")),
            );
        }
    }
    let (xn, yn) = stage("prepare", prepare(x, y, cfg))?;

    let alpha = stage("prior", prior(&xn, &yn, &cfg.affinity))?;
    let alpha_raster = alpha.to_raster();
    stage("prior", raster::save(&alpha_raster, out.path(ALPHA_FILE)))?;
    stage(
        "prior",
        raster::export_png(&alpha_raster, out.path(ALPHA_PNG), PngChannels::Single(0), Some((0.0, 1.0))),
    )?;

    let TrainOutcome { model, history, .. } = stage(
        "train",
        train(cfg.arch, cfg.variant, &xn, &yn, &alpha, &cfg.train, &cfg.weights),
    )?;
    stage("train", save_model(&model, out.path(MODEL_FILE)))?;
    out.write(HISTORY_FILE, history_csv(&history).as_bytes())?;

    let filter = cfg.filter.then_some(&cfg.filter_config);
    let det = stage("detect", detect(&model, &xn, &yn, filter))?;
    let d = det.difference.combined_raster();
    stage("detect", raster::save(&d, out.path(DIFFERENCE_FILE)))?;
    let filtered = Raster::from_band(d.height(), d.width(), det.filtered.iter().map(|&v| v as f32).collect())?;
    stage("detect", raster::save(&filtered, out.path(FILTERED_FILE)))?;
    stage(
        "detect",
        raster::export_png(&d, out.path(DIFFERENCE_PNG), PngChannels::Single(0), Some((0.0, 1.0))),
    )?;
    stage(
        "detect",
        raster::save_mask_png(out.path(CHANGE_MAP_PNG), det.map.width, &det.map.mask),
    )?;

    let mut metrics = None;
    let mut prior_auc = None;
    if let Some(t) = truth {
        let report = stage(
            "evaluate",
            evaluate(Some(&det.difference.combined), &det.map.mask, t),
        )?;
        let colors = stage("evaluate", confusion_map(&det.map.mask, t))?;
        stage("evaluate", raster::save_rgb_png(out.path(CONFUSION_PNG), det.map.width, &colors))?;
        out.write(METRICS_FILE, report.to_csv().as_bytes())?;
        prior_auc = crate::metrics::roc_auc(alpha.alpha(), t).ok();
        metrics = Some(report);
    }
    Ok(RunReport {
        files: out.written.clone(),
        metrics,
        prior_auc,
        threshold: det.map.threshold.value,
        changed_pixels: det.map.mask.iter().filter(|&&m| m).count(),
    })
}

/// Result of the toy walkthrough.
#[derive(Debug)]
pub struct ToyReport {
    pub seed: u64,
    pub alpha: PriorMap,
    pub map: ChangeMap,
    pub truth: Vec<bool>,
    pub metrics: MetricsReport,
}

impl ToyReport {
    pub fn exact(&self) -> bool {
        self.map.mask == self.truth
    }
}

/// Window and stride of the toy walkthrough: one window spans the image.
pub const TOY_WINDOW: usize = 8;

/// Generates the toy pair, computes the prior with one window covering the
/// whole image, and thresholds it with Otsu's method.
pub fn toy_walkthrough(seed: u64) -> Result<ToyReport> {
    let pair = make_toy(seed)?;
    let cfg = PipelineConfig {
        log_x: true,
        ..PipelineConfig::default()
    };
    let (x, y) = prepare(&pair.x, &pair.y, &cfg)?;
    let alpha = compute_prior(&x, &y, &AffinityConfig::single_scale(TOY_WINDOW, TOY_WINDOW))?;
    let map = ChangeMap::from_threshold(alpha.alpha(), alpha.height(), alpha.width())?;
    let metrics = evaluate(Some(alpha.alpha()), &map.mask, &pair.truth)?;
    Ok(ToyReport {
        seed,
        alpha,
        map,
        truth: pair.truth,
        metrics,
    })
}
