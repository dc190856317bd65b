//! Template prompts, generated prompts, and a saved prompt bank.
//!
//! ```bash
//! cargo run -p zsad --example prompts -- bottle
//! ```

use zsad::mock::CaptionGenerator;
use zsad::prompt_bank::{bank_to_string, generate_prompts, render_template_prompts, InstructionTemplates, PromptBank};
use zsad::{CategoryId, Label};

fn main() -> zsad::Result<()> {
    let name = std::env::args().nth(1).unwrap_or_else(|| "metal_nut".into());
    let category = CategoryId::new(&name)?;

    let templates = render_template_prompts(&category);
    println!("template prompts for {category}:");
    for label in [Label::Normal, Label::Anomaly] {
        for p in templates.get(label).prompts() {
            println!("  [{}] {p}", label.as_str());
        }
    }

    let instructions = InstructionTemplates::default();
    println!("\ninstruction: {}", instructions.render(Label::Anomaly, &category, 5));
    let generator = CaptionGenerator::new(7);
    let pair = generate_prompts(&generator, &category, 5, &instructions)?;
    for p in pair.get(Label::Anomaly).prompts() {
        println!("  {p}");
    }

    let mut bank = PromptBank::new();
    bank.insert(pair);
    print!("\nbank file:\n{}", bank_to_string(&bank));
    Ok(())
}
