use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use hetcd::affinity::AffinityConfig;
use hetcd::change::{ChangeMap, FilterConfig};
use hetcd::metrics::{evaluate, MetricsReport};
use hetcd::pipeline::{self, PipelineConfig};
use hetcd::raster::{self, PngChannels, Raster};
use hetcd::synthetic::{make_scene, make_toy, SceneSpec, SyntheticPair};
use hetcd::theory::{verify_equivalence, EquivalenceReport, GaussianModel};
use hetcd::translators::{history_csv, load_model, save_model, train, Arch, Variant};

#[derive(Parser)]
#[command(name = "hetcd", version, about = "Unsupervised change detection across sensors")]
struct Cli {
    /// Worker threads; 0 picks one per core.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic image pair with ground truth.
    Synth(SynthArgs),
    /// Compute the affinity change prior.
    Prior(PriorArgs),
    /// Train a translation network.
    Train(TrainArgs),
    /// Produce the difference image and change map from a trained model.
    Detect(DetectArgs),
    /// Score a difference image and change map against ground truth.
    Evaluate(EvaluateArgs),
    /// Monte Carlo check of the weighted-loss equivalence.
    TheoryCheck(TheoryArgs),
    /// Prior, training, detection and evaluation in one go.
    Run(RunArgs),
    /// Toy example: prior of an 8x8 pair thresholded against its truth.
    Toy(ToyArgs),
}

/// Configuration shared by the stage commands.
#[derive(Args, Default)]
struct ConfigArgs {
    /// File of `key = value` lines.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Extra `key=value` overrides, applied after the file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Log-transform X (SAR intensities) before normalizing.
    #[arg(long)]
    log_x: bool,
}

impl ConfigArgs {
    /// Defaults, then the config file, then flags, then `HETCD_SEED`.
    fn resolve(&self, flags: &[(&str, String)]) -> Result<PipelineConfig> {
        let mut cfg = PipelineConfig::default();
        if let Some(path) = &self.config {
            cfg.apply_file(path)
                .with_context(|| format!("reading {}", path.display()))?;
        }
        for s in &self.sets {
            let (k, v) = s
                .split_once('=')
                .with_context(|| format!("`--set {s}` is not KEY=VALUE"))?;
            cfg.set(k.trim(), v)?;
        }
        for (k, v) in flags {
            cfg.set(k, v)?;
        }
        if let Some(seed) = self.seed {
            cfg.set("seed", &seed.to_string())?;
        }
        if self.log_x {
            cfg.log_x = true;
        }
        cfg.apply_env_seed()?;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    Toy,
    Scene,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, value_enum)]
    preset: Preset,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out_x: PathBuf,
    #[arg(long)]
    out_y: PathBuf,
    #[arg(long)]
    out_truth: PathBuf,
    /// Scene size (scene preset only).
    #[arg(long, default_value_t = 128)]
    height: usize,
    #[arg(long, default_value_t = 128)]
    width: usize,
    #[arg(long, default_value_t = 4)]
    classes: usize,
    #[arg(long, default_value_t = 0.1)]
    change_fraction: f64,
    /// Turn every change region into this class.
    #[arg(long)]
    change_target: Option<usize>,
}

#[derive(Args)]
struct PriorArgs {
    #[arg(long)]
    x: PathBuf,
    #[arg(long)]
    y: PathBuf,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    stride: Option<usize>,
    /// Average windows of k/2 and k with k on half-resolution images.
    #[arg(long, conflicts_with = "single_scale")]
    multiscale: bool,
    #[arg(long)]
    single_scale: bool,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    png: Option<PathBuf>,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    arch: Option<Arch>,
    #[arg(long)]
    variant: Option<Variant>,
    #[arg(long)]
    x: PathBuf,
    #[arg(long)]
    y: PathBuf,
    #[arg(long)]
    alpha: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    history: Option<PathBuf>,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args)]
struct DetectArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    x: PathBuf,
    #[arg(long)]
    y: PathBuf,
    #[arg(long)]
    out_d: PathBuf,
    #[arg(long)]
    out_map: PathBuf,
    /// Threshold the unfiltered difference image.
    #[arg(long)]
    no_filter: bool,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Continuous difference image; without it AUC is reported as NA.
    #[arg(long)]
    d: Option<PathBuf>,
    #[arg(long)]
    map: PathBuf,
    #[arg(long)]
    truth: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TheoryArgs {
    #[arg(long, default_value_t = 0.8)]
    p_h0: f64,
    #[arg(long, default_value_t = 100_000)]
    n: usize,
    #[arg(long, default_value_t = 10)]
    seeds: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    x: PathBuf,
    #[arg(long)]
    y: PathBuf,
    #[arg(long)]
    truth: Option<PathBuf>,
    #[arg(long)]
    out_dir: PathBuf,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args)]
struct ToyArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads)
        .build_global()
        .context("configuring the thread pool")?;
    match cli.command {
        Command::Synth(a) => synth(a),
        Command::Prior(a) => prior(a),
        Command::Train(a) => train_cmd(a),
        Command::Detect(a) => detect(a),
        Command::Evaluate(a) => evaluate_cmd(a),
        Command::TheoryCheck(a) => theory(a),
        Command::Run(a) => run(a),
        Command::Toy(a) => toy(a),
    }
}

fn load(path: &Path) -> Result<Raster> {
    raster::load(path).with_context(|| format!("loading {}", path.display()))
}

fn load_mask(path: &Path) -> Result<Vec<bool>> {
    let (_, _, mask) =
        raster::load_mask_png(path).with_context(|| format!("loading {}", path.display()))?;
    Ok(mask)
}

/// Writes the resolved configuration next to `output`.
fn write_snapshot(output: &Path, cfg: &PipelineConfig) -> Result<()> {
    let mut name = output.as_os_str().to_owned();
    name.push(".config.txt");
    fs::write(&name, cfg.to_text()).with_context(|| format!("writing {}", Path::new(&name).display()))
}

fn save_pair(pair: &SyntheticPair, a: &SynthArgs) -> Result<()> {
    raster::save(&pair.x, &a.out_x)?;
    raster::save(&pair.y, &a.out_y)?;
    raster::save_mask_png(&a.out_truth, pair.x.width(), &pair.truth)?;
    Ok(())
}

fn synth(a: SynthArgs) -> Result<()> {
    let pair = match a.preset {
        Preset::Toy => make_toy(a.seed)?,
        Preset::Scene => make_scene(&SceneSpec {
            height: a.height,
            width: a.width,
            n_classes: a.classes,
            change_fraction: a.change_fraction,
            change_target: a.change_target,
            seed: a.seed,
            ..SceneSpec::default()
        })?,
    };
    save_pair(&pair, &a)?;
    let changed = pair.truth.iter().filter(|&&t| t).count();
    println!(
        "{}x{} pair, {changed} changed pixels",
        pair.x.height(),
        pair.x.width()
    );
    Ok(())
}

fn prior(a: PriorArgs) -> Result<()> {
    let mut flags = Vec::new();
    if let Some(k) = a.k {
        flags.push(("patch_size", k.to_string()));
    }
    if let Some(s) = a.stride {
        flags.push(("stride", s.to_string()));
    }
    if a.multiscale {
        flags.push(("multiscale", "true".into()));
    }
    if a.single_scale {
        flags.push(("multiscale", "false".into()));
    }
    let cfg = a.config.resolve(&flags)?;
    let (x, y) = pipeline::prepare(&load(&a.x)?, &load(&a.y)?, &cfg)?;
    let map = pipeline::prior(&x, &y, &cfg.affinity)?;
    let r = map.to_raster();
    raster::save(&r, &a.out)?;
    if let Some(png) = &a.png {
        raster::export_png(&r, png, PngChannels::Single(0), Some((0.0, 1.0)))?;
    }
    write_snapshot(&a.out, &cfg)?;
    println!("{} windows", map.patches());
    Ok(())
}

fn train_cmd(a: TrainArgs) -> Result<()> {
    let mut flags = Vec::new();
    if let Some(arch) = a.arch {
        flags.push(("arch", arch.to_string()));
    }
    if let Some(v) = a.variant {
        flags.push(("variant", v.to_string()));
    }
    let cfg = a.config.resolve(&flags)?;
    let (x, y) = pipeline::prepare(&load(&a.x)?, &load(&a.y)?, &cfg)?;
    let alpha = hetcd::affinity::PriorMap::from_raster(&load(&a.alpha)?)?;
    let outcome = train(cfg.arch, cfg.variant, &x, &y, &alpha, &cfg.train, &cfg.weights)?;
    save_model(&outcome.model, &a.out)?;
    write_snapshot(&a.out, &cfg)?;
    if let Some(h) = &a.history {
        fs::write(h, history_csv(&outcome.history))?;
    }
    if let Some(last) = outcome.history.last() {
        println!("epoch {}: total loss {:.6}", last.epoch, last.total);
    }
    Ok(())
}

fn detect(a: DetectArgs) -> Result<()> {
    let flags = if a.no_filter {
        vec![("filter", "false".to_string())]
    } else {
        Vec::new()
    };
    let cfg = a.config.resolve(&flags)?;
    let model = load_model(&a.model)?;
    let (x, y) = pipeline::prepare(&load(&a.x)?, &load(&a.y)?, &cfg)?;
    let filter: Option<&FilterConfig> = cfg.filter.then_some(&cfg.filter_config);
    let det = pipeline::detect(&model, &x, &y, filter)?;
    raster::save(&det.difference.combined_raster(), &a.out_d)?;
    raster::save_mask_png(&a.out_map, det.map.width, &det.map.mask)?;
    write_snapshot(&a.out_d, &cfg)?;
    print_map(&det.map);
    Ok(())
}

fn print_map(map: &ChangeMap) {
    let changed = map.mask.iter().filter(|&&m| m).count();
    println!(
        "threshold {:.6}{}, {changed} of {} pixels changed",
        map.threshold.value,
        if map.threshold.degenerate { " (constant input)" } else { "" },
        map.mask.len()
    );
}

fn evaluate_cmd(a: EvaluateArgs) -> Result<()> {
    let truth = load_mask(&a.truth)?;
    let mask = load_mask(&a.map)?;
    let scores: Option<Vec<f64>> = match &a.d {
        Some(p) => Some(load(p)?.band(0).iter().map(|&v| v as f64).collect()),
        None => None,
    };
    let report = evaluate(scores.as_deref(), &mask, &truth)?;
    fs::write(&a.out, report.to_csv())?;
    print_metrics(&report);
    Ok(())
}

fn print_metrics(r: &MetricsReport) {
    let auc = r.auc.map_or("NA".to_string(), |a| format!("{a:.4}"));
    println!(
        "AUC {auc}  OA {:.4}  F1 {:.4}  kappa {:.4}",
        r.oa, r.f1, r.kappa
    );
}

fn theory(a: TheoryArgs) -> Result<()> {
    if a.seeds == 0 {
        bail!("at least one seed is required");
    }
    let model = GaussianModel::new(a.p_h0);
    let mut csv = String::from(EquivalenceReport::CSV_HEADER);
    csv.push('\n');
    let mut total = 0.0;
    for seed in 0..a.seeds {
        let r = verify_equivalence(&model, a.n, seed)?;
        total += r.relative_difference;
        csv.push_str(&r.csv_row());
        csv.push('\n');
    }
    fs::write(&a.out, csv)?;
    println!(
        "mean relative difference {:.4}% over {} seeds",
        100.0 * total / a.seeds as f64,
        a.seeds
    );
    Ok(())
}

fn run(a: RunArgs) -> Result<()> {
    let cfg = a.config.resolve(&[])?;
    let x = load(&a.x)?;
    let y = load(&a.y)?;
    let truth = a.truth.as_deref().map(load_mask).transpose()?;
    let report = pipeline::run_pipeline(&x, &y, truth.as_deref(), &cfg, &a.out_dir)?;
    println!(
        "threshold {:.6}, {} pixels changed",
        report.threshold, report.changed_pixels
    );
    if let Some(m) = &report.metrics {
        print_metrics(m);
    }
    Ok(())
}

fn toy(a: ToyArgs) -> Result<()> {
    let seed = match std::env::var(pipeline::SEED_ENV) {
        Ok(v) => v
            .parse()
            .with_context(|| format!("{} is not an integer", pipeline::SEED_ENV))?,
        Err(_) => a.seed,
    };
    let report = pipeline::toy_walkthrough(seed)?;
    if let Some(dir) = &a.out_dir {
        fs::create_dir_all(dir)?;
        let pair = make_toy(seed)?;
        raster::save(&pair.x, dir.join("x.hcdr"))?;
        raster::save(&pair.y, dir.join("y.hcdr"))?;
        raster::save_mask_png(dir.join("truth.png"), pair.x.width(), &pair.truth)?;
        let alpha = report.alpha.to_raster();
        raster::save(&alpha, dir.join("alpha.hcdr"))?;
        raster::export_png(&alpha, dir.join("alpha.png"), PngChannels::Single(0), None)?;
        raster::save_mask_png(dir.join("change_map.png"), report.map.width, &report.map.mask)?;
        fs::write(dir.join("metrics.csv"), report.metrics.to_csv())?;
        let cfg = AffinityConfig::single_scale(pipeline::TOY_WINDOW, pipeline::TOY_WINDOW);
        fs::write(
            dir.join("config.txt"),
            format!(
                "seed = {seed}\nlog_x = true\npatch_size = {}\nstride = {}\nknn_fraction = {}\nmultiscale = false\n",
                cfg.patch_size, cfg.stride, cfg.knn_fraction
            ),
        )?;
    }
    let w = report.alpha.width();
    for r in 0..report.alpha.height() {
        let row: Vec<String> = (0..w)
            .map(|c| {
                let i = r * w + c;
                let mark = match (report.map.mask[i], report.truth[i]) {
                    (true, true) => '#',
                    (false, false) => '.',
                    (true, false) => '+',
                    (false, true) => '-',
                };
                format!("{:.3}{mark}", report.alpha.alpha()[i])
            })
            .collect();
        println!("{}", row.join(" "));
    }
    print_map(&report.map);
    println!(
        "{} of {} pixels match the ground truth",
        report.metrics.confusion.tp + report.metrics.confusion.tn,
        report.truth.len()
    );
    Ok(())
}
