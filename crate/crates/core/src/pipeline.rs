//! End-to-end scoring: prompts, detection, crops, embeddings, fusion, score.

use std::borrow::Cow;
use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datasets::{load_image, DatasetManifest, SampleRecord};
use crate::encoder::{embed_prompt_set, EmbedderBackend, EmbeddingCache, FusedFeature};
use crate::error::{Error, Result};
use crate::grounding::{crop, detect_objects_clipped, postprocess, Detection, DetectionConfig, DetectorBackend};
use crate::metrics::{build_report, MetricReport};
use crate::prompt_bank::{render_template_prompts, PromptBank, PromptPair, DEFAULT_N_PROMPTS};
use crate::scorer::{anomaly_score, ScoreConfig, ScoreRecord};
use crate::types::{CategoryId, EmbeddingVector, ImageBuffer, Label};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    #[default]
    Full,
    /// Template prompts instead of generated ones.
    NoPromptGen,
    /// Whole image only; no detector call.
    NoDetection,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Full, Variant::NoPromptGen, Variant::NoDetection];

    pub fn as_str(&self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoPromptGen => "no-prompt-gen",
            Variant::NoDetection => "no-detection",
        }
    }

    pub fn uses_detection(&self) -> bool {
        !matches!(self, Variant::NoDetection)
    }

    pub fn uses_generated_prompts(&self) -> bool {
        !matches!(self, Variant::NoPromptGen)
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown variant {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub variant: Variant,
    pub detection: DetectionConfig,
    pub score: ScoreConfig,
    pub n_prompts: usize,
    pub workers: usize,
    /// Run fails when more than this fraction of samples fail.
    pub max_failure_fraction: f64,
    pub generator_identity: String,
    pub detector_identity: String,
    pub embedder_identity: String,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            variant: Variant::Full,
            detection: DetectionConfig::default(),
            score: ScoreConfig::default(),
            n_prompts: DEFAULT_N_PROMPTS,
            workers: 1,
            max_failure_fraction: 0.01,
            generator_identity: String::new(),
            detector_identity: String::new(),
            embedder_identity: String::new(),
        }
    }
}

impl PipelineConfig {
    pub fn with_variant(&self, variant: Variant) -> Self {
        Self {
            variant,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.detection.validate()?;
        self.score.validate()?;
        if self.workers == 0 {
            return Err(Error::Config("workers must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.max_failure_fraction) {
            return Err(Error::Config("max_failure_fraction outside [0, 1]".into()));
        }
        Ok(())
    }

    /// Canonical JSON of this config.
    pub fn snapshot(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes") + "\n"
    }
}

/// Wraps a backend so calls are serialized unless it declares itself safe.
struct Guarded<'a, B: ?Sized> {
    inner: &'a B,
    lock: Option<Mutex<()>>,
}

impl<'a, B: ?Sized> Guarded<'a, B> {
    fn new(inner: &'a B, concurrency_safe: bool) -> Self {
        Self {
            inner,
            lock: (!concurrency_safe).then(|| Mutex::new(())),
        }
    }

    fn with<T>(&self, f: impl FnOnce(&B) -> T) -> T {
        let _guard = self.lock.as_ref().map(|m| m.lock().unwrap_or_else(|p| p.into_inner()));
        f(self.inner)
    }
}

impl EmbedderBackend for Guarded<'_, dyn EmbedderBackend + '_> {
    fn embed_text(&self, prompt: &str) -> Result<Vec<f64>> {
        self.with(|b| b.embed_text(prompt))
    }
    fn embed_image(&self, image: &ImageBuffer) -> Result<Vec<f64>> {
        self.with(|b| b.embed_image(image))
    }
    fn dim(&self) -> usize {
        self.inner.dim()
    }
    fn identity(&self) -> String {
        self.inner.identity()
    }
    fn concurrency_safe(&self) -> bool {
        true
    }
}

impl DetectorBackend for Guarded<'_, dyn DetectorBackend + '_> {
    fn detect(&self, image: &ImageBuffer, query: &str) -> Result<Vec<Detection>> {
        self.with(|b| b.detect(image, query))
    }
    fn concurrency_safe(&self) -> bool {
        true
    }
}

/// Model handles used while scoring.
#[derive(Clone, Copy)]
pub struct Backends<'a> {
    pub embedder: &'a dyn EmbedderBackend,
    pub detector: &'a dyn DetectorBackend,
}

impl<'a> Backends<'a> {
    pub fn new(embedder: &'a dyn EmbedderBackend, detector: &'a dyn DetectorBackend) -> Self {
        Self { embedder, detector }
    }
}

/// Pooled text directions of one category.
#[derive(Clone, Debug, PartialEq)]
pub struct TextDirections {
    pub t_normal: EmbeddingVector,
    pub t_anomaly: EmbeddingVector,
}

/// Prompt pair the variant calls for.
pub fn select_prompts<'b>(category: &CategoryId, bank: &'b PromptBank, variant: Variant) -> Result<Cow<'b, PromptPair>> {
    if !variant.uses_generated_prompts() {
        return Ok(Cow::Owned(render_template_prompts(category)));
    }
    bank.get(category.name())
        .map(Cow::Borrowed)
        .ok_or_else(|| Error::Config(format!("prompt bank has no entry for category {category}")))
}

pub fn text_directions(
    embedder: &dyn EmbedderBackend,
    pair: &PromptPair,
    cache: &EmbeddingCache,
) -> Result<TextDirections> {
    Ok(TextDirections {
        t_normal: embed_prompt_set(embedder, &pair.normal, cache)?,
        t_anomaly: embed_prompt_set(embedder, &pair.anomaly, cache)?,
    })
}

#[derive(Default)]
struct StageClock {
    detect: AtomicU64,
    embed: AtomicU64,
    load: AtomicU64,
}

impl StageClock {
    fn time<T>(slot: &AtomicU64, f: impl FnOnce() -> T) -> T {
        let start = Instant::now();
        let out = f();
        slot.fetch_add(start.elapsed().as_nanos() as u64, Ordering::Relaxed);
        out
    }
}

/// Wall time spent per stage, summed over workers.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct StageTimings {
    pub text_embedding: Duration,
    pub image_loading: Duration,
    pub detection: Duration,
    pub image_embedding: Duration,
    pub total: Duration,
}

/// Image-side feature of one sample under `config.variant`.
fn image_feature(
    image: &ImageBuffer,
    category: &CategoryId,
    backends: Backends<'_>,
    config: &PipelineConfig,
    cache: &EmbeddingCache,
    clock: &StageClock,
) -> Result<FusedFeature> {
    let patches = if config.variant.uses_detection() {
        let detections = StageClock::time(&clock.detect, || detect_objects_clipped(backends.detector, image, category))?;
        let boxes = postprocess(&detections, &config.detection, image.width(), image.height());
        boxes.iter().map(|b| crop(image, b)).collect::<Result<Vec<_>>>()?
    } else {
        Vec::new()
    };
    StageClock::time(&clock.embed, || FusedFeature::compute(backends.embedder, image, &patches, cache))
}

#[allow(clippy::too_many_arguments)]
fn score_with_directions(
    sample_id: &str,
    image: &ImageBuffer,
    category: &CategoryId,
    directions: &TextDirections,
    backends: Backends<'_>,
    config: &PipelineConfig,
    cache: &EmbeddingCache,
    clock: &StageClock,
) -> Result<ScoreRecord> {
    let feature = image_feature(image, category, backends, config, cache, clock)?;
    let (score, sim_anomaly, sim_normal) =
        anomaly_score(&feature.e_fused, &directions.t_normal, &directions.t_anomaly, &config.score)?;
    Ok(ScoreRecord {
        sample_id: sample_id.to_owned(),
        category: category.clone(),
        score,
        n_patches: feature.n_patches,
        mode: config.score.mode,
        sim_normal,
        sim_anomaly,
    })
}

/// Scores one image.
pub fn score_image(
    sample_id: &str,
    image: &ImageBuffer,
    category: &CategoryId,
    bank: &PromptBank,
    backends: Backends<'_>,
    config: &PipelineConfig,
    cache: &EmbeddingCache,
) -> Result<ScoreRecord> {
    config.validate()?;
    let pair = select_prompts(category, bank, config.variant)?;
    let directions = text_directions(backends.embedder, &pair, cache)?;
    score_with_directions(sample_id, image, category, &directions, backends, config, cache, &StageClock::default())
}

/// Fused image feature for one image, exposed for inspection and tests.
pub fn fused_feature(
    image: &ImageBuffer,
    category: &CategoryId,
    backends: Backends<'_>,
    config: &PipelineConfig,
    cache: &EmbeddingCache,
) -> Result<FusedFeature> {
    image_feature(image, category, backends, config, cache, &StageClock::default())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SampleFailure {
    pub sample_id: String,
    pub error: String,
}

/// One row of the records file, in the documented field order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecordRow {
    pub sample_id: String,
    pub category: String,
    pub label: Label,
    pub score: f64,
    pub sim_normal: f64,
    pub sim_anomaly: f64,
    pub n_patches: usize,
    pub variant: Variant,
}

#[derive(Clone, Debug)]
pub struct RunResult {
    pub variant: Variant,
    pub records: Vec<ScoreRecord>,
    /// Manifest labels, parallel to `records`.
    pub labels: Vec<Label>,
    pub failures: Vec<SampleFailure>,
    pub report: MetricReport,
    pub config_snapshot: String,
    pub timings: StageTimings,
}

pub const RECORDS_FILE: &str = "records.jsonl";
pub const REPORT_CSV: &str = "report.csv";
pub const REPORT_JSON: &str = "report.json";
pub const CONFIG_SNAPSHOT: &str = "config.json";
pub const FAILURES_FILE: &str = "failures.jsonl";

impl RunResult {
    pub fn rows(&self) -> impl Iterator<Item = RecordRow> + '_ {
        self.records.iter().zip(&self.labels).map(|(r, label)| RecordRow {
            sample_id: r.sample_id.clone(),
            category: r.category.name().to_owned(),
            label: *label,
            score: r.score,
            sim_normal: r.sim_normal,
            sim_anomaly: r.sim_anomaly,
            n_patches: r.n_patches,
            variant: self.variant,
        })
    }

    /// Records file contents: one JSON object per line.
    pub fn records_jsonl(&self) -> String {
        let mut out = String::new();
        for row in self.rows() {
            out.push_str(&serde_json::to_string(&row).expect("row serializes"));
            out.push('\n');
        }
        out
    }

    /// Writes records, report (CSV and JSON), config snapshot and failures.
    pub fn write_to(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let write = |name: &str, contents: &str| {
            let path = dir.join(name);
            fs::write(&path, contents).map_err(|e| Error::io(&path, e))
        };
        write(RECORDS_FILE, &self.records_jsonl())?;
        write(REPORT_CSV, &self.report.to_csv())?;
        write(REPORT_JSON, &self.report.to_json())?;
        write(CONFIG_SNAPSHOT, &self.config_snapshot)?;
        if !self.failures.is_empty() {
            let lines: String = self
                .failures
                .iter()
                .map(|f| serde_json::to_string(f).expect("failure serializes") + "\n")
                .collect();
            write(FAILURES_FILE, &lines)?;
        }
        Ok(())
    }
}

/// Scores every manifest sample and aggregates the report.
///
/// Text directions are computed once per category before the parallel
/// section. Records come back in manifest order regardless of worker count.
pub fn run_eval(
    manifest: &DatasetManifest,
    bank: &PromptBank,
    backends: Backends<'_>,
    config: &PipelineConfig,
    cache: &EmbeddingCache,
) -> Result<RunResult> {
    config.validate()?;
    if manifest.is_empty() {
        return Err(Error::EmptyDataset(manifest.root.clone()));
    }
    let started = Instant::now();
    let embedder = Guarded::new(backends.embedder, backends.embedder.concurrency_safe());
    let detector = Guarded::new(backends.detector, backends.detector.concurrency_safe());
    let guarded = Backends::new(&embedder, &detector);

    let text_started = Instant::now();
    let mut directions: BTreeMap<&str, TextDirections> = BTreeMap::new();
    for category in &manifest.categories {
        let pair = select_prompts(category, bank, config.variant)?;
        directions.insert(category.name(), text_directions(&embedder, &pair, cache)?);
    }
    let text_embedding = text_started.elapsed();

    let clock = StageClock::default();
    let score_one = |sample: &SampleRecord| -> Result<ScoreRecord> {
        let image = StageClock::time(&clock.load, || load_image(&sample.image_path))?;
        let dirs = &directions[sample.category.name()];
        score_with_directions(&sample.sample_id, &image, &sample.category, dirs, guarded, config, cache, &clock)
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.workers)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let outcomes: Vec<Result<ScoreRecord>> = pool.install(|| manifest.samples.par_iter().map(score_one).collect());

    let mut records = Vec::with_capacity(outcomes.len());
    let mut labels = Vec::with_capacity(outcomes.len());
    let mut failures = Vec::new();
    for (sample, outcome) in manifest.samples.iter().zip(outcomes) {
        match outcome {
            Ok(r) => {
                records.push(r);
                labels.push(sample.label);
            }
            Err(e) => {
                log::warn!("{}: {e}", sample.sample_id);
                failures.push(SampleFailure {
                    sample_id: sample.sample_id.clone(),
                    error: e.to_string(),
                });
            }
        }
    }
    let total = manifest.len();
    if failures.len() as f64 > config.max_failure_fraction * total as f64 {
        return Err(Error::TooManyFailures {
            failed: failures.len(),
            total,
            allowed: config.max_failure_fraction,
        });
    }
    let report = build_report(&records, manifest)?;
    let nanos = |a: &AtomicU64| Duration::from_nanos(a.load(Ordering::Relaxed));
    Ok(RunResult {
        variant: config.variant,
        records,
        labels,
        failures,
        report,
        config_snapshot: config.snapshot(),
        timings: StageTimings {
            text_embedding,
            image_loading: nanos(&clock.load),
            detection: nanos(&clock.detect),
            image_embedding: nanos(&clock.embed),
            total: started.elapsed(),
        },
    })
}
