//! The ablation grid: partition mode x adaptation mode x protocol, written as
//! CSV.

use zeroshot_tta::alignment::PartitionMode;
use zeroshot_tta::eval::{ablation_csv, run_ablation_suite, AblationConfig};
use zeroshot_tta::synth::{benchmark_stream_config, benchmark_train_config, preset, synth_dataset};

pub fn run() -> Result<(), Box<dyn std::error::Error>> {
    let dataset = synth_dataset(&preset("shifted").unwrap())?;
    let cfg = AblationConfig {
        train: benchmark_train_config(),
        stream: benchmark_stream_config(),
        // Two partition modes keep the example quick; the default sweeps all three.
        partitions: vec![PartitionMode::Global, PartitionMode::Adaptive],
        ..AblationConfig::default()
    };
    let rows = run_ablation_suite(&dataset, &cfg)?;
    print!("{}", ablation_csv(&rows));
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn std::error::Error>> {
    run()
}
