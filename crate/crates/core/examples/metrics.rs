//! AUROC, AUPR and the ROC curve for a small labelled score list.
//!
//! ```bash
//! cargo run -p zsad --example metrics
//! ```

use zsad::metrics::{aupr, auroc, roc_curve, LabeledScore};

fn main() -> zsad::Result<()> {
    let items = [
        LabeledScore::normal(0.2),
        LabeledScore::normal(0.4),
        LabeledScore::normal(0.6),
        LabeledScore::anomaly(0.5),
        LabeledScore::anomaly(0.7),
        LabeledScore::anomaly(0.9),
    ];
    println!("AUROC {:.6} (8/9)", auroc(&items)?);
    println!("AUPR  {:.6} (11/12)", aupr(&items)?);
    for (fpr, tpr) in roc_curve(&items)? {
        println!("  fpr {fpr:.3} tpr {tpr:.3}");
    }
    Ok(())
}
