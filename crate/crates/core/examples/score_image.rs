//! Scores single images with the full pipeline and mock backends.
//!
//! ```bash
//! cargo run -p zsad --example score_image
//! ```

use zsad::datasets::{generate_synthetic, load_image, SyntheticSpec};
use zsad::encoder::EmbeddingCache;
use zsad::mock::{CaptionGenerator, DetectorRule, MockDetector, MockEmbedder};
use zsad::pipeline::{score_image, Backends, PipelineConfig};
use zsad::prompt_bank::{generate_prompts, InstructionTemplates, PromptBank};

fn main() -> zsad::Result<()> {
    let dir = tempfile::tempdir().expect("tempdir");
    let spec = SyntheticSpec { categories: 2, normals_per_category: 2, anomalies_per_category: 2, ..SyntheticSpec::default() };
    let fixture = generate_synthetic(&spec, dir.path())?;

    let generator = CaptionGenerator::new(1);
    let mut bank = PromptBank::new();
    for c in &fixture.manifest.categories {
        bank.insert(generate_prompts(&generator, c, 10, &InstructionTemplates::default())?);
    }
    let embedder = MockEmbedder::new(1);
    let detector = MockDetector::from_truth(&fixture.truth, DetectorRule::Nothing)?;
    let backends = Backends::new(&embedder, &detector);
    let cache = EmbeddingCache::in_memory();
    let config = PipelineConfig::default();

    for sample in &fixture.manifest.samples {
        let image = load_image(&sample.image_path)?;
        let r = score_image(&sample.sample_id, &image, &sample.category, &bank, backends, &config, &cache)?;
        println!("{:<28} {:<7} score {:.4} patches {}", r.sample_id, sample.label.as_str(), r.score, r.n_patches);
    }
    Ok(())
}
