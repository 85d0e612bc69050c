//! Command-line entry points. Exit codes: 0 success, 1 runtime failure,
//! 2 usage error.

use std::ffi::OsString;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::config::{Config, ConfigError, CONFIG_ENV};
use crate::filter::FilterKind;
use crate::mlp::{self, gradient_check, MlpError, Network, Sample};
use crate::pipeline::{
    annotate, classify_scene, detection_report, parse_classes, render_classes, ClassSpec, Manifest, PipelineError,
    SegmentedScene,
};
use crate::raster::{load_ppm, save_ppm, RasterError};
use crate::roi::{crop, scale_to_64};
use crate::segment::{extract_cluster, label_map};
use crate::synth::{
    evaluation_scenes, gen_synthetic_scene, training_scenes, truth_report, SceneSpec, SynthError, SUITE_SLOPE,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Raster(#[from] RasterError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Mlp(#[from] MlpError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Failed(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Config(_) => EXIT_USAGE,
            _ => EXIT_FAILURE,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "minescan", version, about = "Landmine recognition from color images")]
pub struct Cli {
    /// Configuration file; defaults to the file named by MINESCAN_CONFIG.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Override a configuration key; repeatable, e.g. `--set slope=2`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub overrides: Vec<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Denoise a PPM image.
    Filter(FilterArgs),
    /// Split a scene into per-cluster PPMs plus a label map.
    Segment(SegmentArgs),
    /// Train a classifier from a manifest of labeled images.
    Train(TrainArgs),
    /// Detect and classify objects in a scene.
    Classify(ClassifyArgs),
    /// Render synthetic scenes with ground truth.
    Synth(SynthArgs),
    /// Compare backpropagation against finite differences.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args)]
pub struct FilterArgs {
    #[arg(long)]
    pub kind: FilterKind,
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long = "out")]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct SegmentArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long)]
    pub threshold: Option<f64>,
    #[arg(long)]
    pub spatial_weight: Option<f64>,
    #[arg(long)]
    pub filter: Option<FilterKind>,
    /// Also write each object's bounding-box crop rescaled to 64x64.
    #[arg(long)]
    pub crop: bool,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Lines of `<path>\t<class_name>`; relative paths resolve against the
    /// manifest's directory.
    #[arg(long)]
    pub manifest: PathBuf,
    /// Checkpoint to write; defaults to `model` from the configuration.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Training curve CSV; defaults to the checkpoint path with `.mse.csv`.
    #[arg(long)]
    pub curve: Option<PathBuf>,
    #[arg(long)]
    pub max_epochs: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ClassifyArgs {
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Annotated image; defaults to `<input>.annotated.ppm`.
    #[arg(long = "out")]
    pub output: Option<PathBuf>,
    /// Detection report; defaults to the annotated image path with `.tsv`.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Bundled scene set; `paper` writes training images, a manifest and
    /// four evaluation scenes.
    #[arg(long, conflicts_with = "spec")]
    pub suite: Option<String>,
    /// Scene description file.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Output image for `--spec`; ground truth goes next to it.
    #[arg(long = "out")]
    pub output: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 1e-5)]
    pub eps: f64,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, default_value_t = 5)]
    pub nets: usize,
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn run(args: impl IntoIterator<Item = impl Into<OsString> + Clone>) -> i32 {
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match execute(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn resolve_config(cli: &Cli) -> Result<Config, CliError> {
    let path = cli
        .config
        .clone()
        .or_else(|| std::env::var_os(CONFIG_ENV).filter(|v| !v.is_empty()).map(PathBuf::from));
    let mut config = match path {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    for item in &cli.overrides {
        let (key, value) = item
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("--set expects KEY=VALUE, got {item:?}")))?;
        config.set(key.trim(), value)?;
    }
    Ok(config)
}

pub fn execute(cli: Cli) -> Result<(), CliError> {
    let config = resolve_config(&cli)?;
    match cli.command {
        Command::Filter(a) => cmd_filter(&a),
        Command::Segment(a) => cmd_segment(&a, config),
        Command::Train(a) => cmd_train(&a, config),
        Command::Classify(a) => cmd_classify(&a, &config),
        Command::Synth(a) => cmd_synth(&a, &config),
        Command::Gradcheck(a) => cmd_gradcheck(&a),
    }
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn read_file(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn create_dir(path: &Path) -> Result<(), CliError> {
    fs::create_dir_all(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// `path` with `suffix` appended to its file name.
fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut name = path.file_name().map(OsString::from).unwrap_or_default();
    name.push(suffix);
    path.with_file_name(name)
}

/// Class names stored next to a checkpoint.
pub fn classes_path(model: &Path) -> PathBuf {
    with_suffix(model, ".classes")
}

fn cmd_filter(a: &FilterArgs) -> Result<(), CliError> {
    let image = load_ppm(&a.input)?;
    save_ppm(&a.kind.apply(&image), &a.output)?;
    Ok(())
}

fn cmd_segment(a: &SegmentArgs, mut config: Config) -> Result<(), CliError> {
    if let Some(t) = a.threshold {
        config.set("seg_threshold", &t.to_string())?;
    }
    if let Some(w) = a.spatial_weight {
        config.set("seg_spatial_weight", &w.to_string())?;
    }
    if let Some(f) = a.filter {
        config.pipeline.filter = f;
    }
    let params = &config.pipeline;
    let image = load_ppm(&a.input)?;
    let scene = SegmentedScene::new(&image, params);
    create_dir(&a.out_dir)?;
    let result = &scene.segmentation;
    for cluster in 0..result.k() {
        let extracted = extract_cluster(&scene.filtered, result, cluster);
        save_ppm(&extracted, a.out_dir.join(format!("object_{cluster:02}.ppm")))?;
    }
    save_ppm(&label_map(result), a.out_dir.join("labels.ppm"))?;
    if a.crop {
        for object in scene.objects(params)? {
            let extracted = extract_cluster(&scene.filtered, result, object.cluster);
            let scaled = scale_to_64(&crop(&extracted, object.rect).map_err(PipelineError::from)?);
            save_ppm(&scaled, a.out_dir.join(format!("crop_{:02}.ppm", object.cluster)))?;
        }
    }
    println!(
        "{} clusters after {} iterations (converged: {}), background cluster: {}",
        result.k(),
        result.iterations,
        result.converged,
        scene.background.map_or("none".to_string(), |b| b.to_string())
    );
    Ok(())
}

fn cmd_train(a: &TrainArgs, mut config: Config) -> Result<(), CliError> {
    if let Some(n) = a.max_epochs {
        config.set("max_epochs", &n.to_string())?;
    }
    let model_path = a
        .model
        .clone()
        .or_else(|| config.model.clone())
        .ok_or_else(|| CliError::Usage("no model path: pass --model or set `model`".into()))?;
    let curve_path = a.curve.clone().unwrap_or_else(|| with_suffix(&model_path, ".mse.csv"));

    let text = read_file(&a.manifest)?;
    let base = a.manifest.parent().unwrap_or(Path::new("."));
    let manifest = Manifest::parse(&text, base)?;
    let mut images = Vec::with_capacity(manifest.entries.len());
    for (path, class_index) in &manifest.entries {
        images.push((load_ppm(path)?, *class_index));
    }
    let samples = crate::pipeline::build_training_set(&images, manifest.classes.len(), &config.pipeline)?;

    let mut net = Network::init(&config.layer_sizes(manifest.classes.len()), config.slope, config.init_seed)?;
    let report = mlp::train(&mut net, &samples, &config.train)?;

    mlp::save_model(&net, &model_path)?;
    write_file(&classes_path(&model_path), render_classes(&manifest.classes))?;
    write_file(&curve_path, report.to_csv())?;
    println!(
        "{} after {} epochs, final mse {:e}",
        report.outcome,
        report.epochs_run,
        report.mse_history.last().copied().unwrap_or(f64::NAN)
    );
    Ok(())
}

fn load_classes(model: &Path, net: &Network) -> Result<Vec<ClassSpec>, CliError> {
    let path = classes_path(model);
    if path.exists() {
        let classes = parse_classes(&read_file(&path)?)?;
        if classes.len() != net.output_len() {
            return Err(CliError::Failed(format!(
                "{}: {} class names for {} network outputs",
                path.display(),
                classes.len(),
                net.output_len()
            )));
        }
        Ok(classes)
    } else {
        Ok((0..net.output_len())
            .map(|i| ClassSpec {
                class_index: i,
                name: format!("class{i}"),
            })
            .collect())
    }
}

fn cmd_classify(a: &ClassifyArgs, config: &Config) -> Result<(), CliError> {
    let model_path = a
        .model
        .clone()
        .or_else(|| config.model.clone())
        .ok_or_else(|| CliError::Usage("no model path: pass --model or set `model`".into()))?;
    let net = mlp::load_model(&model_path)?;
    let classes = load_classes(&model_path, &net)?;
    let image = load_ppm(&a.input)?;
    let detections = classify_scene(&net, &image, &config.pipeline)?;

    let out = a
        .output
        .clone()
        .unwrap_or_else(|| a.input.with_extension("annotated.ppm"));
    let report_path = a.report.clone().unwrap_or_else(|| out.with_extension("tsv"));
    let report = detection_report(&detections, &classes);
    save_ppm(&annotate(&image, &detections), &out)?;
    write_file(&report_path, &report)?;
    let mut stdout = std::io::stdout().lock();
    let _ = stdout.write_all(report.as_bytes());
    Ok(())
}

fn write_scene(spec: &SceneSpec, seed: u64, image_path: &Path) -> Result<(), CliError> {
    let scene = gen_synthetic_scene(spec, seed)?;
    save_ppm(&scene.image, image_path)?;
    write_file(&image_path.with_extension("truth.tsv"), truth_report(&scene))?;
    Ok(())
}

fn cmd_synth(a: &SynthArgs, config: &Config) -> Result<(), CliError> {
    let out_dir = a.out_dir.as_ref().or(config.out_dir.as_ref());
    match (&a.suite, &a.spec) {
        (Some(suite), None) => {
            if suite != "paper" {
                return Err(CliError::Usage(format!("unknown suite {suite:?} (expected paper)")));
            }
            let dir = out_dir.ok_or_else(|| CliError::Usage("--suite needs --out-dir or `out_dir`".into()))?;
            create_dir(dir)?;
            let mut manifest = String::new();
            for (name, spec, seed) in training_scenes() {
                let file = format!("{name}.ppm");
                write_scene(&spec, seed, &dir.join(&file))?;
                write_file(&dir.join(format!("{name}.scene")), spec.render())?;
                manifest.push_str(&format!("{file}\t{}\n", spec.objects[0].archetype.name));
            }
            write_file(&dir.join("manifest.tsv"), manifest)?;
            write_file(
                &dir.join("suite.conf"),
                format!("# Training settings for this suite; unlisted keys keep their defaults.\nslope = {SUITE_SLOPE}\n"),
            )?;
            for (name, spec, seed) in evaluation_scenes() {
                write_scene(&spec, seed, &dir.join(format!("{name}.ppm")))?;
                write_file(&dir.join(format!("{name}.scene")), spec.render())?;
            }
            Ok(())
        }
        (None, Some(spec_path)) => {
            let spec = SceneSpec::parse(&read_file(spec_path)?, &crate::synth::mine_archetypes())?;
            let out = match (&a.output, out_dir) {
                (Some(o), _) => o.clone(),
                (None, Some(d)) => {
                    create_dir(d)?;
                    d.join(spec_path.with_extension("ppm").file_name().unwrap_or_default())
                }
                (None, None) => return Err(CliError::Usage("--spec needs --out, --out-dir or `out_dir`".into())),
            };
            write_scene(&spec, a.seed, &out)
        }
        _ => Err(CliError::Usage("pass exactly one of --suite or --spec".into())),
    }
}

/// Largest relative gradient error over `nets` randomly shaped small
/// networks with random inputs and targets.
pub fn gradcheck_random(eps: f64, seed: u64, nets: usize) -> Result<f64, MlpError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..nets {
        let depth = rng.gen_range(2..=4);
        let sizes: Vec<usize> = (0..depth).map(|_| rng.gen_range(1..=8)).collect();
        let mut net = Network::init(&sizes, rng.gen_range(0.5..2.0), rng.gen())?;
        for w in net.weights_mut() {
            for v in w.as_mut_slice() {
                *v = rng.gen_range(-1.0..1.0);
            }
        }
        let input: Vec<f64> = (0..sizes[0]).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let class = rng.gen_range(0..sizes[depth - 1]);
        let sample = Sample::one_hot(input, class, sizes[depth - 1]);
        worst = worst.max(gradient_check(&net, &sample, eps)?);
    }
    Ok(worst)
}

fn cmd_gradcheck(a: &GradcheckArgs) -> Result<(), CliError> {
    if !(a.eps > 0.0 && a.eps.is_finite()) || a.nets == 0 {
        return Err(CliError::Usage("--eps must be positive and --nets at least 1".into()));
    }
    let worst = gradcheck_random(a.eps, a.seed, a.nets)?;
    println!("max relative error {worst:e}");
    if worst < 1e-4 {
        Ok(())
    } else {
        Err(CliError::Failed(format!("gradient check failed: {worst:e} >= 1e-4")))
    }
}
