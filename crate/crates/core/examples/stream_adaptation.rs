//! Streaming zero-shot inference on the shifted preset with frozen anchors,
//! per-sample adaptation and bank-driven adaptation.

use zeroshot_tta::alignment::train;
use zeroshot_tta::eval::{MetricsReport, Protocol};
use zeroshot_tta::refinement::{refine_anchors, run_stream, StreamConfig, StreamProtocol, TtaMode};
use zeroshot_tta::synth::{benchmark_stream_config, benchmark_train_config, preset, synth_dataset, SynthConfig};

pub fn run() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = SynthConfig { seed: 1, ..preset("shifted").unwrap() };
    let dataset = synth_dataset(&cfg)?;
    let split = &dataset.manifest().split;
    let trained = train(&dataset, &benchmark_train_config())?;
    let anchors = dataset.anchor_set()?;
    let stream = dataset.feature_maps(&Protocol::Zsl.test_indices(&dataset))?;

    for tta in TtaMode::ALL {
        let stream_cfg = StreamConfig { tta, ..benchmark_stream_config() };
        let result = run_stream(&stream, &anchors, &trained.params, split, StreamProtocol::Zsl, &stream_cfg)?;
        let report = MetricsReport::from_records(&result.records, split)?;
        let worst = report.min_class_accuracy(&split.unseen).unwrap_or(0.0);
        println!(
            "{:>6}: unseen top-1 {:.4}, worst class {:.4}, {} adaptation steps, bank {:?}",
            tta.as_str(),
            report.top1,
            worst,
            result.adapt_steps,
            result.bank_sizes()
        );
        if tta == TtaMode::Full {
            // How far the refined global anchors moved from the published ones.
            let selected = trained.params.select_anchors(&anchors)?;
            let refined = refine_anchors(&selected, &result.state)?;
            for &c in &split.unseen {
                let i = selected.class_index(c)?;
                let cos = selected.row(i, 0).dot(&refined.row(i, 0));
                println!("  class {c}: cosine(original, refined) = {cos:.4}");
            }
        }
    }

    // A closed confidence gate never adapts, so it reproduces the frozen run.
    let closed = StreamConfig { conf_threshold: 1.0, ..benchmark_stream_config() };
    let frozen = StreamConfig { tta: TtaMode::Off, ..benchmark_stream_config() };
    let a = run_stream(&stream, &anchors, &trained.params, split, StreamProtocol::Zsl, &closed)?;
    let b = run_stream(&stream, &anchors, &trained.params, split, StreamProtocol::Zsl, &frozen)?;
    assert_eq!(a.records, b.records);
    println!("closed gate matches the frozen stream on all {} samples", a.records.len());
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn std::error::Error>> {
    run()
}
