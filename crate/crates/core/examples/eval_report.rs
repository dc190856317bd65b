//! Evaluates a synthetic dataset and writes the report files.
//!
//! ```bash
//! cargo run -p zsad --example eval_report -- runs/example
//! ```

use std::path::PathBuf;

use zsad::datasets::{generate_synthetic, SyntheticSpec};
use zsad::encoder::EmbeddingCache;
use zsad::mock::{CaptionGenerator, DetectorRule, MockDetector, MockEmbedder};
use zsad::pipeline::{run_eval, Backends, PipelineConfig};
use zsad::plot::{group_result, write_plots};
use zsad::prompt_bank::{generate_prompts, InstructionTemplates, PromptBank};

fn main() -> zsad::Result<()> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "runs/example".into()));
    let data = tempfile::tempdir().expect("tempdir");
    let spec = SyntheticSpec::default();
    let fixture = generate_synthetic(&spec, data.path())?;

    let generator = CaptionGenerator::new(spec.seed);
    let mut bank = PromptBank::new();
    for c in &fixture.manifest.categories {
        bank.insert(generate_prompts(&generator, c, 10, &InstructionTemplates::default())?);
    }
    let embedder = MockEmbedder::new(spec.seed);
    let detector = MockDetector::from_truth(&fixture.truth, DetectorRule::Nothing)?;
    let config = PipelineConfig { workers: 4, ..PipelineConfig::default() };
    let result = run_eval(&fixture.manifest, &bank, Backends::new(&embedder, &detector), &config, &EmbeddingCache::in_memory())?;

    result.write_to(&out)?;
    write_plots(&out, &group_result(&result))?;
    print!("{}", result.report.to_csv());
    println!("wrote {}", out.display());
    Ok(())
}
