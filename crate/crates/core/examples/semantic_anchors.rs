//! Building a multi-granularity anchor set from raw text embeddings.

use ndarray::Array3;
use zeroshot_tta::anchors::{build_prompt, SemanticAnchorSet};
use zeroshot_tta::tensor_io::granularity_labels;

pub fn run() -> Result<(), Box<dyn std::error::Error>> {
    // Two body parts and two temporal segments give five granularities.
    let labels = granularity_labels(2, 2);
    println!("granularities: {labels:?}");
    println!("prompt: {:?}", build_prompt("  raising both arms above the head ")?);

    let raw = Array3::from_shape_fn((3, labels.len(), 4), |(c, g, k)| 1.0 + (c * 7 + g * 3 + k) as f64 % 5.0);
    let anchors = SemanticAnchorSet::new(raw, vec![10, 11, 12], labels)?;
    for ci in 0..anchors.num_classes() {
        let row = anchors.row(ci, 0);
        println!("class {} global anchor {:.3} (norm {:.6})", anchors.class_ids()[ci], row, row.dot(&row).sqrt());
    }
    println!("bp_2 block:\n{:.3}", anchors.granularity_view("bp_2")?);

    // Only the global row, as used by the single-granularity model.
    let global = anchors.global_only();
    println!("global-only shape {:?}", global.values().shape());
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn std::error::Error>> {
    run()
}
