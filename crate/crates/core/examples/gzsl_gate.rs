//! Generalized zero-shot classification: calibrating the entropy threshold
//! on validation data, then routing each test sample to the seen or unseen
//! label set. The gate assumes unseen samples produce flatter predictions
//! over the full label set; the shifted preset, whose unseen classes sit
//! away from their published anchors, shows that effect.

use zeroshot_tta::alignment::train;
use zeroshot_tta::eval::{gzsl_metrics, Protocol};
use zeroshot_tta::gate::{calibrate_delta, triage_and_classify, GateConfig, Route};
use zeroshot_tta::synth::{benchmark_train_config, preset, synth_dataset};
use zeroshot_tta::tensor_io::SampleRole;

pub fn run() -> Result<(), Box<dyn std::error::Error>> {
    let dataset = synth_dataset(&preset("shifted").unwrap())?;
    let split = &dataset.manifest().split;
    let trained = train(&dataset, &benchmark_train_config())?;
    let anchors = dataset.anchor_set()?;
    let selected = trained.params.select_anchors(&anchors)?;

    let val = dataset.feature_maps(&dataset.indices_with_role(SampleRole::Val))?;
    let calibration = calibrate_delta(&val, &anchors, &trained.params, split, &GateConfig::default())?;
    let best = calibration.table.iter().find(|r| r.delta == calibration.delta).unwrap();
    println!(
        "calibrated delta {:.4} over {} candidates (validation S {:.3}, U {:.3}, H {:.3})",
        calibration.delta,
        calibration.table.len(),
        best.seen,
        best.unseen,
        best.harmonic
    );

    let test = dataset.feature_maps(&Protocol::Gzsl.test_indices(&dataset))?;
    let (mut preds, mut labels, mut routed_right) = (Vec::new(), Vec::new(), 0);
    let mut entropy_sums = [(0.0, 0usize); 2];
    for g in &test {
        let gated = triage_and_classify(g, &selected, &trained.params, split, calibration.delta)?;
        let truth = if split.is_seen(g.class_id) { Route::Seen } else { Route::Unseen };
        routed_right += usize::from(gated.route == truth);
        entropy_sums[truth as usize].0 += gated.full_entropy;
        entropy_sums[truth as usize].1 += 1;
        preds.push(gated.prediction.label);
        labels.push(g.class_id);
    }
    println!(
        "mean full-set entropy: seen {:.4}, unseen {:.4}",
        entropy_sums[0].0 / entropy_sums[0].1 as f64,
        entropy_sums[1].0 / entropy_sums[1].1 as f64
    );
    let m = gzsl_metrics(&preds, &labels, split)?;
    println!(
        "test: triage accuracy {:.4}, S {:.4}, U {:.4}, H {:.4}",
        routed_right as f64 / test.len() as f64,
        m.seen.unwrap(),
        m.unseen.unwrap(),
        m.harmonic()?
    );
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn std::error::Error>> {
    run()
}
