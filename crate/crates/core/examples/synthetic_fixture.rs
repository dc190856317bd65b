//! Writes the synthetic fixture to a directory for use with the CLI.
//!
//! ```bash
//! cargo run -p zsad --example synthetic_fixture -- data/synthetic 7 clutter
//! zsad gen-prompts --root data/synthetic
//! zsad eval --root data/synthetic --out runs/synthetic
//! ```

use std::path::PathBuf;

use zsad::datasets::{generate_synthetic, SyntheticSpec};

fn main() -> zsad::Result<()> {
    let mut args = std::env::args().skip(1);
    let root = PathBuf::from(args.next().unwrap_or_else(|| "data/synthetic".into()));
    let seed = args.next().and_then(|s| s.parse().ok()).unwrap_or(7);
    let clutter = args.next().is_some_and(|s| s == "clutter");
    let spec = SyntheticSpec { seed, clutter, ..SyntheticSpec::default() };
    let fixture = generate_synthetic(&spec, &root)?;
    println!(
        "wrote {} samples in {} categories to {}",
        fixture.manifest.len(),
        fixture.manifest.categories.len(),
        root.display()
    );
    Ok(())
}
