//! Training the alignment model on the seen classes of the easy preset and
//! measuring zero-shot accuracy on the unseen ones.

use zeroshot_tta::alignment::{train, PartitionMode, TrainConfig};
use zeroshot_tta::eval::{top1_accuracy, Protocol};
use zeroshot_tta::refinement::predict;
use zeroshot_tta::synth::{benchmark_train_config, preset, synth_dataset};

pub fn run() -> Result<(), Box<dyn std::error::Error>> {
    let dataset = synth_dataset(&preset("easy").unwrap())?;
    let split = dataset.manifest().split.clone();
    let anchors = dataset.anchor_set()?;
    let unseen: Vec<i64> = split.unseen.iter().copied().collect();
    let test = dataset.feature_maps(&Protocol::Zsl.test_indices(&dataset))?;

    for partition in PartitionMode::ALL {
        let cfg = TrainConfig { partition, ..benchmark_train_config() };
        let report = train(&dataset, &cfg)?;
        let last = report.history.last().unwrap();
        let selected = report.params.select_anchors(&anchors)?;
        let mut preds = Vec::with_capacity(test.len());
        for g in &test {
            preds.push(predict(g, &selected, &report.params, &unseen)?.label);
        }
        let labels: Vec<i64> = test.iter().map(|g| g.class_id).collect();
        println!(
            "{:>8}: {} epochs, final train loss {:.4}, val top-1 {:.4}, unseen top-1 {:.4}, alpha {:.3}",
            partition.as_str(),
            report.epochs_run,
            last.train_loss,
            report.best_val_accuracy,
            top1_accuracy(&preds, &labels)?,
            report.params.alpha()
        );
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn std::error::Error>> {
    run()
}
