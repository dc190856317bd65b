//! The two score forms on a few similarity pairs.
//!
//! ```bash
//! cargo run -p zsad --example scoring
//! ```

use zsad::scorer::{score_from_similarities, ScoreConfig};

fn main() -> zsad::Result<()> {
    let literal = ScoreConfig::paper_literal();
    let stabilized = ScoreConfig::default();
    println!("{:>8} {:>8} {:>10} {:>10}", "sim_a", "sim_n", "literal", "softmax");
    for (a, n) in [(0.30, 0.25), (0.25, 0.30), (0.28, 0.28), (0.31, 0.29), (0.9, -0.2)] {
        let l = score_from_similarities(a, n, &literal)?;
        let s = score_from_similarities(a, n, &stabilized)?;
        println!("{a:>8.3} {n:>8.3} {l:>10.6} {s:>10.6}");
    }
    match score_from_similarities(0.2, -0.2, &literal) {
        Err(e) => println!("literal form on (0.2, -0.2): {e}"),
        Ok(s) => println!("literal form on (0.2, -0.2): {s}"),
    }
    Ok(())
}
