//! Generating the synthetic benchmark and loading it back from disk.

use zeroshot_tta::synth::{synth_generate, synth_presets};
use zeroshot_tta::tensor_io::{load_manifest, validate_dataset, SampleRole};

pub fn run() -> Result<(), Box<dyn std::error::Error>> {
    for (name, cfg) in synth_presets() {
        let counts = cfg.unseen_test_counts();
        println!(
            "{name:>10}: {} classes ({} unseen), drift {}, rotation {}, unseen test counts {counts:?}",
            cfg.classes, cfg.unseen, cfg.anchor_drift, cfg.shift_angle
        );
    }

    let (_, cfg) = synth_presets().into_iter().find(|(n, _)| *n == "shifted").unwrap();
    let dir = tempfile::tempdir()?;
    let manifest_path = synth_generate(&cfg)?.write(dir.path())?;

    let dataset = validate_dataset(load_manifest(&manifest_path)?)?;
    let split = &dataset.manifest().split;
    println!("seen {:?}", split.seen);
    println!("unseen {:?}", split.unseen);
    for role in [SampleRole::Train, SampleRole::Val, SampleRole::Test] {
        println!("{role:?}: {} samples", dataset.indices_with_role(role).len());
    }
    let anchors = dataset.anchor_set()?;
    println!(
        "anchors: {} classes x {} granularities x {} dims {:?}",
        anchors.num_classes(),
        anchors.num_granularities(),
        anchors.dim(),
        anchors.granularity_labels()
    );
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn std::error::Error>> {
    run()
}
