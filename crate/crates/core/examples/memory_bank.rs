//! The class-balanced memory bank: confidence-ranked eviction and
//! round-robin sampling.

use std::sync::Arc;

use ndarray::Array2;
use zeroshot_tta::alignment::VisualFeatureMap;
use zeroshot_tta::refinement::MemoryBank;
use zeroshot_tta::rng::substream;

pub fn run() -> Result<(), Box<dyn std::error::Error>> {
    let features = Arc::new(VisualFeatureMap::new(Array2::zeros((2, 3)), "dummy", 0)?);
    // Three entries per class, threshold 0.1, adapt once four are stored.
    let mut bank = MemoryBank::new(3, 0.1, 4);

    let arrivals = [(0, 0.5), (0, 0.9), (0, 0.7), (1, 0.3), (0, 0.6), (0, 0.8), (1, 0.05), (2, 0.95)];
    for (label, conf) in arrivals {
        if !bank.admits(conf) {
            println!("conf {conf:.2} for class {label}: below threshold, skipped");
            continue;
        }
        match bank.insert(features.clone(), label, conf, 0) {
            Some(evicted) => println!("conf {conf:.2} for class {label}: evicted {:.2}", evicted.confidence),
            None => println!("conf {conf:.2} for class {label}: stored"),
        }
    }
    for class in bank.class_sizes().into_keys() {
        let confs: Vec<f64> = bank.class_entries(class).iter().map(|e| e.confidence).collect();
        println!("class {class}: {confs:?}");
    }
    println!("ready to adapt: {} ({} entries)", bank.is_ready(), bank.len());

    let mut rng = substream(0, "example");
    let batch = bank.sample_balanced(4, &mut rng)?;
    let labels: Vec<i64> = batch.iter().map(|e| e.pseudo_label).collect();
    println!("balanced batch of 4: {labels:?}");
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn std::error::Error>> {
    run()
}
