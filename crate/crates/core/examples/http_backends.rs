//! Wiring the hosted-model clients from a config file.
//!
//! Point the endpoints at running services and pass a category:
//!
//! ```bash
//! ZSAD_API_KEY=... cargo run -p zsad --example http_backends -- run.toml image.png bottle
//! ```

use std::path::Path;

use zsad::config::RunConfig;
use zsad::datasets::load_image;
use zsad::encoder::EmbeddingCache;
use zsad::http::{HttpDetector, HttpEmbedder, HttpGenerator};
use zsad::pipeline::{score_image, Backends};
use zsad::prompt_bank::{generate_prompts, PromptBank};
use zsad::CategoryId;

fn main() -> zsad::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let [config_path, image_path, category] = args.as_slice() else {
        eprintln!("usage: http_backends CONFIG IMAGE CATEGORY");
        std::process::exit(64);
    };
    let config = RunConfig::load(Some(Path::new(config_path)), &[])?;
    let b = &config.backends;
    let generator = HttpGenerator::from_env(b.generator.clone());
    let detector = HttpDetector::new(b.detector.clone());
    let embedder = HttpEmbedder::new(b.embedder.clone());

    let category = CategoryId::new(category)?;
    let mut bank = PromptBank::new();
    bank.insert(generate_prompts(&generator, &category, config.prompts.n_prompts, &config.prompts.templates())?);
    let image = load_image(Path::new(image_path))?;
    let record = score_image(
        image_path,
        &image,
        &category,
        &bank,
        Backends::new(&embedder, &detector),
        &config.pipeline(),
        &EmbeddingCache::in_memory(),
    )?;
    println!("{}", serde_json::to_string_pretty(&record).expect("record serializes"));
    Ok(())
}
