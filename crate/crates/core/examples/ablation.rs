//! Runs the three pipeline variants on a cluttered synthetic fixture.
//!
//! ```bash
//! cargo run -p zsad --example ablation
//! ```

use zsad::datasets::{generate_synthetic, SyntheticSpec};
use zsad::encoder::EmbeddingCache;
use zsad::mock::{CaptionGenerator, DetectorRule, MockDetector, MockEmbedder};
use zsad::pipeline::{run_eval, Backends, PipelineConfig, Variant};
use zsad::prompt_bank::{generate_prompts, InstructionTemplates, PromptBank};

fn main() -> zsad::Result<()> {
    let seed: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(7);
    let clutter = std::env::args().nth(2).map(|s| s == "clutter").unwrap_or(true);
    let dir = tempfile::tempdir().expect("tempdir");
    let spec = SyntheticSpec { seed, clutter, ..SyntheticSpec::default() };
    let fixture = generate_synthetic(&spec, dir.path())?;

    let generator = CaptionGenerator::new(seed);
    let mut bank = PromptBank::new();
    for category in &fixture.manifest.categories {
        bank.insert(generate_prompts(&generator, category, 10, &InstructionTemplates::default())?);
    }

    let embedder = MockEmbedder::new(seed);
    let detector = MockDetector::from_truth(&fixture.truth, DetectorRule::Nothing)?;
    let cache = EmbeddingCache::in_memory();
    let config = PipelineConfig::default();

    println!("{:<14} {:>8} {:>8}", "variant", "AUROC", "AUPR");
    for variant in Variant::ALL {
        let result = run_eval(&fixture.manifest, &bank, Backends::new(&embedder, &detector), &config.with_variant(variant), &cache)?;
        let m = result.report.macro_avg;
        println!("{:<14} {:>8.4} {:>8.4}", variant.as_str(), m.auroc, m.aupr);
    }
    Ok(())
}
