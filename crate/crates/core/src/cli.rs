//! Command-line front end.
//!
//! Every config key is exposed as a global long flag (see [`KEYS`]).
//! Exit codes: 0 success, 1 other errors, 2 backend failure,
//! 3 empty dataset, 4 too many failed samples, 64 usage error.

use std::ffi::OsString;
use std::fs::{self, OpenOptions};
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Arg, ArgMatches, Command};

use crate::config::{is_boolean_key, RunConfig, KEYS};
use crate::datasets::{
    discover_mvtec, discover_synthetic, discover_visa, load_image, load_synthetic_truth, DatasetKind,
    DatasetManifest, GROUND_TRUTH_FILE,
};
use crate::encoder::{EmbedderBackend, EmbeddingCache};
use crate::error::{Error, Result};
use crate::grounding::DetectorBackend;
use crate::http::{HttpDetector, HttpEmbedder, HttpGenerator};
use crate::mock::{parse_mock_seed, CaptionGenerator, DetectorRule, MockDetector, MockEmbedder};
use crate::pipeline::{run_eval, score_image, Backends, PipelineConfig, RunResult, Variant};
use crate::plot::{group_result, write_plots};
use crate::prompt_bank::{generate_prompts, load_bank, save_bank, PromptBank, PromptGeneratorBackend};
use crate::types::{CategoryId, Label};

pub const EXIT_BACKEND: i32 = 2;
pub const EXIT_EMPTY_DATASET: i32 = 3;
pub const EXIT_TOO_MANY_FAILURES: i32 = 4;
pub const EXIT_USAGE: i32 = 64;

pub const ABLATION_CSV: &str = "ablation.csv";

pub fn exit_code(error: &Error) -> i32 {
    match error {
        Error::BackendUnavailable(_) | Error::MalformedCompletion { .. } => EXIT_BACKEND,
        Error::EmptyDataset(_) => EXIT_EMPTY_DATASET,
        Error::TooManyFailures { .. } => EXIT_TOO_MANY_FAILURES,
        _ => 1,
    }
}

pub fn command() -> Command {
    let mut cmd = Command::new("zsad")
        .version(env!("CARGO_PKG_VERSION"))
        .about("Zero-shot industrial image anomaly detection")
        .subcommand_required(true)
        .arg_required_else_help(true)
        .arg(
            Arg::new("config")
                .long("config")
                .value_name("PATH")
                .global(true)
                .help("TOML run configuration; flags override its values"),
        );
    for k in KEYS {
        let mut arg = Arg::new(k.flag)
            .long(k.flag)
            .global(true)
            .help_heading("Configuration")
            .help(format!("{} [{}]", k.help, k.key));
        if is_boolean_key(k.key) {
            arg = arg.value_name("BOOL").num_args(0..=1).default_missing_value("true");
        } else {
            arg = arg.value_name("VALUE");
        }
        cmd = cmd.arg(arg);
    }
    cmd.subcommand(Command::new("gen-prompts").about("Generate the prompt bank for the dataset's categories"))
        .subcommand(
            Command::new("score")
                .about("Score one image; the category comes from --categories")
                .arg(Arg::new("image").value_name("IMAGE").required(true)),
        )
        .subcommand(Command::new("eval").about("Score a dataset and write records, report and plots"))
        .subcommand(Command::new("ablate").about("Run all three variants and write a comparison table"))
        .subcommand(
            Command::new("cache")
                .about("Inspect or clear the embedding cache")
                .subcommand_required(true)
                .subcommand(Command::new("inspect").about("Print cache entries per backend identity"))
                .subcommand(Command::new("clear").about("Delete the cache file")),
        )
}

/// Runs the CLI and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let matches = match command().try_get_matches_from(args) {
        Ok(m) => m,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { 0 };
        }
    };
    match dispatch(&matches) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn load_config(m: &ArgMatches) -> Result<RunConfig> {
    let overrides: Vec<(String, String)> = KEYS
        .iter()
        .filter_map(|k| m.get_one::<String>(k.flag).map(|v| (k.key.to_owned(), v.clone())))
        .collect();
    RunConfig::load(m.get_one::<String>("config").map(Path::new), &overrides)
}

fn dispatch(root: &ArgMatches) -> Result<()> {
    let (name, m) = root.subcommand().expect("subcommand required");
    let config = load_config(m)?;
    match name {
        "gen-prompts" => cmd_gen_prompts(&config),
        "score" => cmd_score(&config, Path::new(m.get_one::<String>("image").expect("required"))),
        "eval" => cmd_eval(&config),
        "ablate" => cmd_ablate(&config),
        "cache" => match m.subcommand() {
            Some(("inspect", _)) => cmd_cache_inspect(&config),
            Some(("clear", _)) => cmd_cache_clear(&config),
            _ => unreachable!("cache subcommand required"),
        },
        _ => unreachable!("unknown subcommand {name}"),
    }
}

pub fn discover(config: &RunConfig) -> Result<DatasetManifest> {
    let root = Path::new(&config.dataset.root);
    let filter = config.dataset.category_filter();
    match config.dataset.kind()? {
        DatasetKind::MvtecAd => discover_mvtec(root, filter),
        DatasetKind::Visa => discover_visa(root, &config.dataset.split_path(), filter),
        DatasetKind::Synthetic => discover_synthetic(root, filter),
    }
}

/// The three model handles selected by `backends.kind`.
pub struct Models {
    pub generator: Box<dyn PromptGeneratorBackend>,
    pub detector: Box<dyn DetectorBackend>,
    pub embedder: Box<dyn EmbedderBackend>,
    pub generator_identity: String,
    pub detector_identity: String,
}

impl Models {
    pub fn from_config(config: &RunConfig) -> Result<Self> {
        let b = &config.backends;
        if let Some(seed) = parse_mock_seed(&b.kind) {
            let truth_path = Path::new(&config.dataset.root).join(GROUND_TRUTH_FILE);
            let detector = if truth_path.is_file() {
                MockDetector::from_truth(&load_synthetic_truth(&truth_path)?, DetectorRule::FullImage)?
            } else {
                MockDetector::full_image()
            };
            return Ok(Self {
                generator: Box::new(CaptionGenerator::new(seed)),
                detector: Box::new(detector),
                embedder: Box::new(MockEmbedder::new(seed)),
                generator_identity: format!("mock-captions seed={seed}"),
                detector_identity: "mock-detector".into(),
            });
        }
        Ok(Self {
            generator: Box::new(HttpGenerator::from_env(b.generator.clone())),
            detector: Box::new(HttpDetector::new(b.detector.clone())),
            embedder: Box::new(HttpEmbedder::new(b.embedder.clone())),
            generator_identity: format!("{} @ {}", b.generator.model, b.generator.endpoint),
            detector_identity: b.detector.endpoint.clone(),
        })
    }

    pub fn backends(&self) -> Backends<'_> {
        Backends::new(self.embedder.as_ref(), self.detector.as_ref())
    }

    pub fn pipeline(&self, config: &RunConfig) -> PipelineConfig {
        PipelineConfig {
            generator_identity: self.generator_identity.clone(),
            detector_identity: self.detector_identity.clone(),
            embedder_identity: self.embedder.identity(),
            ..config.pipeline()
        }
    }
}

/// Exclusive hold on the cache file, released on drop.
pub struct CacheLock {
    path: PathBuf,
}

impl CacheLock {
    pub fn acquire(cache_path: &Path) -> Result<Self> {
        let mut name = cache_path.as_os_str().to_owned();
        name.push(".lock");
        let path = PathBuf::from(name);
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let mut file = OpenOptions::new().write(true).create_new(true).open(&path).map_err(|e| {
            if e.kind() == std::io::ErrorKind::AlreadyExists {
                Error::Config(format!("cache is in use (remove {} if no other run is active)", path.display()))
            } else {
                Error::io(&path, e)
            }
        })?;
        let _ = writeln!(file, "{}", std::process::id());
        Ok(Self { path })
    }
}

impl Drop for CacheLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

/// The run's cache: on disk (locked) when enabled, else in memory only.
fn open_cache(config: &RunConfig) -> Result<(EmbeddingCache, Option<CacheLock>)> {
    let e = &config.backends.embedder;
    if !e.cache_enabled {
        return Ok((EmbeddingCache::in_memory(), None));
    }
    let path = Path::new(&e.cache_path);
    let lock = CacheLock::acquire(path)?;
    Ok((EmbeddingCache::open(path)?, Some(lock)))
}

fn bank_for(config: &RunConfig, variant: Variant) -> Result<PromptBank> {
    if !variant.uses_generated_prompts() {
        return Ok(PromptBank::new());
    }
    load_bank(Path::new(&config.prompts.bank_path))
}

fn categories_for_prompts(config: &RunConfig) -> Result<Vec<CategoryId>> {
    match discover(config) {
        Ok(m) => Ok(m.categories),
        Err(e) if !config.dataset.categories.is_empty() => {
            log::info!("dataset not readable ({e}); using --categories as given");
            config.dataset.categories.iter().map(CategoryId::new).collect()
        }
        Err(e) => Err(e),
    }
}

pub fn cmd_gen_prompts(config: &RunConfig) -> Result<()> {
    let categories = categories_for_prompts(config)?;
    let models = Models::from_config(config)?;
    let path = Path::new(&config.prompts.bank_path);
    let mut bank = if path.is_file() { load_bank(path)? } else { PromptBank::new() };
    let templates = config.prompts.templates();
    let mut changed = false;
    for category in &categories {
        if bank.contains(category.name()) && !config.prompts.overwrite {
            println!("{category}: already in bank, skipped (use --overwrite to regenerate)");
            continue;
        }
        let pair = generate_prompts(models.generator.as_ref(), category, config.prompts.n_prompts, &templates)?;
        println!(
            "{category}: {} normal, {} anomaly prompts",
            pair.get(Label::Normal).len(),
            pair.get(Label::Anomaly).len()
        );
        bank.insert(pair);
        changed = true;
    }
    if changed {
        save_bank(&bank, path)?;
        println!("wrote {} ({} categories)", path.display(), bank.len());
    }
    Ok(())
}

pub fn cmd_score(config: &RunConfig, image_path: &Path) -> Result<()> {
    let [name] = config.dataset.categories.as_slice() else {
        return Err(Error::Config("score needs exactly one category (--categories NAME)".into()));
    };
    let category = CategoryId::new(name)?;
    let models = Models::from_config(config)?;
    let pipeline = models.pipeline(config);
    let bank = bank_for(config, pipeline.variant)?;
    let (cache, _lock) = open_cache(config)?;
    let image = load_image(image_path)?;
    let sample_id = image_path.display().to_string();
    let record = score_image(&sample_id, &image, &category, &bank, models.backends(), &pipeline, &cache)?;
    let line = serde_json::json!({
        "sample_id": record.sample_id,
        "category": record.category.name(),
        "score": record.score,
        "sim_normal": record.sim_normal,
        "sim_anomaly": record.sim_anomaly,
        "n_patches": record.n_patches,
        "mode": record.mode,
        "variant": pipeline.variant,
    });
    println!("{line}");
    Ok(())
}

fn write_run(config: &RunConfig, result: &RunResult, dir: &Path) -> Result<()> {
    result.write_to(dir)?;
    if config.output.plots {
        write_plots(dir, &group_result(result))?;
    }
    if !result.failures.is_empty() {
        eprintln!("{} samples failed; see {}", result.failures.len(), dir.display());
    }
    log::info!("timings: {:?}", result.timings);
    Ok(())
}

pub fn cmd_eval(config: &RunConfig) -> Result<()> {
    let manifest = discover(config)?;
    let models = Models::from_config(config)?;
    let pipeline = models.pipeline(config);
    let bank = bank_for(config, pipeline.variant)?;
    let (cache, _lock) = open_cache(config)?;
    let result = run_eval(&manifest, &bank, models.backends(), &pipeline, &cache)?;
    let out = Path::new(&config.output.dir);
    write_run(config, &result, out)?;
    let m = result.report.macro_avg;
    println!("macro AUROC {:.6} AUPR {:.6} ({} samples, {} categories)", m.auroc, m.aupr, result.records.len(), result.report.per_category.len());
    println!("wrote {}", out.display());
    Ok(())
}

/// One row of the ablation table.
#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub variant: Variant,
    pub auroc: f64,
    pub aupr: f64,
    /// Whole-image and crop embeddings computed (cache misses) by this variant.
    pub image_embeddings: u64,
}

pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut out = String::from("variant,auroc,aupr,image_embeddings\n");
    for r in rows {
        out.push_str(&format!("{},{:.6},{:.6},{}\n", r.variant, r.auroc, r.aupr, r.image_embeddings));
    }
    out
}

pub fn cmd_ablate(config: &RunConfig) -> Result<()> {
    let manifest = discover(config)?;
    let models = Models::from_config(config)?;
    let base = models.pipeline(config);
    let bank = bank_for(config, Variant::Full)?;
    let (cache, _lock) = open_cache(config)?;
    let out = Path::new(&config.output.dir);
    let mut rows = Vec::new();
    for variant in Variant::ALL {
        let before = cache.stats().image_misses;
        let result = run_eval(&manifest, &bank, models.backends(), &base.with_variant(variant), &cache)?;
        write_run(config, &result, &out.join(variant.as_str()))?;
        let m = result.report.macro_avg;
        rows.push(AblationRow {
            variant,
            auroc: m.auroc,
            aupr: m.aupr,
            image_embeddings: cache.stats().image_misses - before,
        });
    }
    let path = out.join(ABLATION_CSV);
    fs::write(&path, ablation_csv(&rows)).map_err(|e| Error::io(&path, e))?;
    println!("{:<14} {:>8} {:>8} {:>12}", "variant", "AUROC", "AUPR", "new images");
    for r in &rows {
        println!("{:<14} {:>8.4} {:>8.4} {:>12}", r.variant.as_str(), r.auroc, r.aupr, r.image_embeddings);
    }
    println!("wrote {}", path.display());
    Ok(())
}

pub fn cmd_cache_inspect(config: &RunConfig) -> Result<()> {
    let path = Path::new(&config.backends.embedder.cache_path);
    if !path.is_file() {
        println!("{}: no cache file", path.display());
        return Ok(());
    }
    let _lock = CacheLock::acquire(path)?;
    let cache = EmbeddingCache::open(path)?;
    let bytes = fs::metadata(path).map_err(|e| Error::io(path, e))?.len();
    println!("{}: {} entries, {bytes} bytes", path.display(), cache.len());
    for (identity, n) in cache.identities() {
        println!("  {n:>8}  {identity}");
    }
    Ok(())
}

pub fn cmd_cache_clear(config: &RunConfig) -> Result<()> {
    let path = Path::new(&config.backends.embedder.cache_path);
    let _lock = CacheLock::acquire(path)?;
    match fs::remove_file(path) {
        Ok(()) => println!("removed {}", path.display()),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => println!("{}: no cache file", path.display()),
        Err(e) => return Err(Error::io(path, e)),
    }
    Ok(())
}
