//! Deterministic stand-ins for the three models, needing no network or weights.
//!
//! * [`MockEmbedder`] projects input bytes onto a seeded pseudo-random
//!   direction and adds two interpretable axes: an "object" axis every
//!   input carries and a "defect" axis driven by saturated pixels in images
//!   and by defect vocabulary in text.
//! * [`MockDetector`] answers from a table keyed by image content hash, or
//!   from a fixed rule.
//! * [`CaptionGenerator`] and [`ScriptedGenerator`] produce completions.

use std::collections::{HashMap, VecDeque};
use std::sync::Mutex;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use sha2::{Digest, Sha256};

use crate::datasets::SyntheticTruth;
use crate::encoder::EmbedderBackend;
use crate::error::{Error, Result};
use crate::grounding::{clip_box, Detection, DetectorBackend};
use crate::prompt_bank::PromptGeneratorBackend;
use crate::types::{BoundingBox, ImageBuffer};

/// Coordinate shared by every embedding ("this is a product").
pub const OBJECT_AXIS: usize = 0;
/// Coordinate that carries defect evidence.
pub const DEFECT_AXIS: usize = 1;

/// Parses `mock:SEED`.
pub fn parse_mock_seed(spec: &str) -> Option<u64> {
    spec.strip_prefix("mock:").and_then(|s| s.parse().ok())
}

#[derive(Clone, Debug, PartialEq)]
pub struct MockEmbedder {
    pub seed: u64,
    pub dim: usize,
    /// Scale of the hash-projection component of image embeddings.
    pub image_noise: f64,
    /// Scale of the hash-projection component of text embeddings.
    pub text_noise: f64,
    /// Defect-axis weight per unit fraction of saturated pixels.
    pub marker_gain: f64,
}

impl MockEmbedder {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            dim: 64,
            image_noise: 0.8,
            text_noise: 1.0,
            marker_gain: 12.0,
        }
    }

    /// Seeded Gaussian vector in the non-semantic coordinates.
    fn projection(&self, domain: &[u8], bytes: &[u8], scale: f64) -> Vec<f64> {
        let mut hasher = Sha256::new();
        hasher.update(self.seed.to_le_bytes());
        hasher.update(domain);
        hasher.update(bytes);
        let digest: [u8; 32] = hasher.finalize().into();
        let mut rng = ChaCha8Rng::from_seed(digest);
        let mut v = vec![0.0; self.dim];
        for x in v.iter_mut().skip(2) {
            let g: f64 = StandardNormal.sample(&mut rng);
            *x = scale * g / ((self.dim - 2) as f64).sqrt();
        }
        v
    }
}

/// Fraction of pixels whose channels are all 0 or 255 and not all equal.
pub fn saturated_fraction(image: &ImageBuffer) -> f64 {
    if image.channels() != 3 {
        return 0.0;
    }
    let saturated = image
        .pixels()
        .filter(|p| p.iter().all(|&c| c == 0 || c == 255) && p.iter().any(|&c| c != p[0]))
        .count();
    saturated as f64 / image.pixel_count() as f64
}

const STRONG_DEFECT_WORDS: [&str; 13] = [
    "stain", "spot", "speck", "contamination", "contaminated", "blotch", "discolored", "discoloration",
    "smudge", "mark", "marked", "marker", "patch",
];
const WEAK_DEFECT_WORDS: [&str; 12] = [
    "damaged", "defect", "defective", "broken", "flawed", "faulty", "anomaly", "anomalous", "crack",
    "cracked", "scratch", "scratched",
];
const NORMAL_WORDS: [&str; 9] = [
    "flawless", "intact", "clean", "pristine", "normal", "defect-free", "perfect", "spotless", "undamaged",
];

fn tokens(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !(c.is_alphanumeric() || c == '-'))
        .filter(|t| !t.is_empty())
        .map(|t| t.trim_matches('-').to_lowercase())
}

/// `(defect weight, normal weight)` of a caption.
pub fn text_weights(text: &str) -> (f64, f64) {
    let mut defect: f64 = 0.0;
    let mut normal: f64 = 0.0;
    for t in tokens(text) {
        if STRONG_DEFECT_WORDS.contains(&t.as_str()) {
            defect = defect.max(1.0);
        } else if WEAK_DEFECT_WORDS.contains(&t.as_str()) {
            defect = defect.max(0.5);
        } else if NORMAL_WORDS.contains(&t.as_str()) {
            normal = normal.max(0.5);
        }
    }
    (defect, normal)
}

impl EmbedderBackend for MockEmbedder {
    fn embed_text(&self, prompt: &str) -> Result<Vec<f64>> {
        let mut v = self.projection(b"text", prompt.as_bytes(), self.text_noise);
        let (defect, normal) = text_weights(prompt);
        v[OBJECT_AXIS] = 1.0 + normal;
        v[DEFECT_AXIS] = defect;
        Ok(v)
    }

    fn embed_image(&self, image: &ImageBuffer) -> Result<Vec<f64>> {
        let mut v = self.projection(b"image", &image.content_hash(), self.image_noise);
        v[OBJECT_AXIS] = 1.0;
        v[DEFECT_AXIS] = self.marker_gain * saturated_fraction(image);
        Ok(v)
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn identity(&self) -> String {
        format!(
            "mock-embedder/v1 seed={} dim={} noise={}/{} gain={}",
            self.seed, self.dim, self.image_noise, self.text_noise, self.marker_gain
        )
    }

    fn concurrency_safe(&self) -> bool {
        true
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum DetectorRule {
    /// Never finds anything.
    Nothing,
    /// One box covering the whole image.
    FullImage,
    /// The same box for every image, clipped to it.
    Fixed(BoundingBox),
}

/// Scripted detector: table lookup by image content hash, else a rule.
#[derive(Clone, Debug)]
pub struct MockDetector {
    table: HashMap<[u8; 32], Vec<Detection>>,
    fallback: DetectorRule,
    confidence: f64,
    decoy: bool,
}

impl MockDetector {
    pub fn with_rule(rule: DetectorRule) -> Self {
        Self {
            table: HashMap::new(),
            fallback: rule,
            confidence: 0.9,
            decoy: false,
        }
    }

    pub fn full_image() -> Self {
        Self::with_rule(DetectorRule::FullImage)
    }

    pub fn nothing() -> Self {
        Self::with_rule(DetectorRule::Nothing)
    }

    pub fn script(&mut self, image: &ImageBuffer, detections: Vec<Detection>) {
        self.table.insert(image.content_hash(), detections);
    }

    /// Object boxes from a synthetic fixture, plus a low-confidence decoy
    /// over the whole frame that the default threshold discards.
    pub fn from_truth(truth: &[SyntheticTruth], fallback: DetectorRule) -> Result<Self> {
        let mut d = Self::with_rule(fallback);
        d.decoy = true;
        for t in truth {
            let mut key = [0u8; 32];
            hex::decode_to_slice(&t.image_sha256, &mut key)
                .map_err(|e| Error::Schema(format!("{}: bad hash: {e}", t.sample_id)))?;
            d.table.insert(
                key,
                vec![Detection::new(t.object_box, 0.9, "object")],
            );
        }
        Ok(d)
    }
}

impl DetectorBackend for MockDetector {
    fn detect(&self, image: &ImageBuffer, query: &str) -> Result<Vec<Detection>> {
        let (w, h) = (image.width(), image.height());
        if let Some(hit) = self.table.get(&image.content_hash()) {
            let mut out = hit.clone();
            if self.decoy {
                out.push(Detection::new(BoundingBox::full(w, h), 0.1, "object"));
            }
            return Ok(out);
        }
        Ok(match &self.fallback {
            DetectorRule::Nothing => vec![],
            DetectorRule::FullImage => vec![Detection::new(BoundingBox::full(w, h), self.confidence, query)],
            DetectorRule::Fixed(b) => clip_box(b, w, h)
                .map(|b| Detection::new(b, self.confidence, query))
                .into_iter()
                .collect(),
        })
    }

    fn concurrency_safe(&self) -> bool {
        true
    }
}

const NORMAL_CAPTIONS: [&str; 12] = [
    "a clean product with a uniform surface",
    "an intact product centered on a plain background",
    "a flawless product under even lighting",
    "a pristine product with smooth edges",
    "a spotless product photographed from above",
    "a normal product with consistent color",
    "an undamaged product on the inspection table",
    "a clean, defect-free product in studio light",
    "an intact product with a regular outline",
    "a flawless product with an even finish",
    "a pristine product ready for shipping",
    "a normal product seen at close range",
];

const ANOMALY_CAPTIONS: [&str; 12] = [
    "a product with a bright stain on its surface",
    "a product with a vivid spot of contamination",
    "a product marked by a saturated blotch",
    "a product with a discolored patch",
    "a product with a small smudge of foreign color",
    "a product with a speck of contamination",
    "a damaged product with a colored stain",
    "a defective product showing a bright spot",
    "a product with an unexpected colored mark",
    "a contaminated product with a vivid blotch",
    "a product with a stain near its center",
    "a faulty product with a discolored spot",
];

/// Seeded caption lists.
///
/// The instruction is treated as an anomaly request when it mentions
/// damage, defects or anomalies (but not "defect-free"); the first integer
/// in it is the number of captions returned.
#[derive(Clone, Debug)]
pub struct CaptionGenerator {
    pub seed: u64,
}

impl CaptionGenerator {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }
}

fn wants_anomaly(instruction: &str) -> bool {
    tokens(instruction).any(|t| {
        matches!(t.as_str(), "damaged" | "defective" | "defect" | "broken" | "anomaly" | "anomalous" | "anomalies")
    })
}

fn first_integer(text: &str) -> Option<usize> {
    text.split(|c: char| !c.is_ascii_digit()).find(|s| !s.is_empty()).and_then(|s| s.parse().ok())
}

impl PromptGeneratorBackend for CaptionGenerator {
    fn complete(&self, instruction: &str) -> Result<String> {
        let pool: &[&str] = if wants_anomaly(instruction) { &ANOMALY_CAPTIONS } else { &NORMAL_CAPTIONS };
        let n = first_integer(instruction).unwrap_or(crate::prompt_bank::DEFAULT_N_PROMPTS);
        let mut order: Vec<usize> = (0..pool.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        order.shuffle(&mut rng);
        let mut out = String::new();
        for i in 0..n {
            let caption = pool[order[i % pool.len()]];
            let round = i / pool.len();
            if round == 0 {
                out.push_str(&format!("{}. {caption}\n", i + 1));
            } else {
                out.push_str(&format!("{}. {caption}, view {}\n", i + 1, round + 1));
            }
        }
        Ok(out)
    }

    fn is_deterministic(&self) -> bool {
        true
    }

    fn concurrency_safe(&self) -> bool {
        true
    }
}

/// Replays queued completions, then fails with `BackendUnavailable`.
#[derive(Debug, Default)]
pub struct ScriptedGenerator {
    queue: Mutex<VecDeque<Result<String, String>>>,
    seen: Mutex<Vec<String>>,
}

impl ScriptedGenerator {
    pub fn new<I, S>(completions: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self {
            queue: Mutex::new(completions.into_iter().map(|s| Ok(s.into())).collect()),
            seen: Mutex::new(Vec::new()),
        }
    }

    pub fn push_failure(&self, message: impl Into<String>) {
        self.queue.lock().expect("queue").push_back(Err(message.into()));
    }

    /// Instructions received so far.
    pub fn instructions(&self) -> Vec<String> {
        self.seen.lock().expect("seen").clone()
    }
}

impl PromptGeneratorBackend for ScriptedGenerator {
    fn complete(&self, instruction: &str) -> Result<String> {
        self.seen.lock().expect("seen").push(instruction.to_owned());
        match self.queue.lock().expect("queue").pop_front() {
            Some(Ok(text)) => Ok(text),
            Some(Err(msg)) => Err(Error::BackendUnavailable(msg)),
            None => Err(Error::BackendUnavailable("script exhausted".into())),
        }
    }

    fn is_deterministic(&self) -> bool {
        true
    }
}
