//! Behaviour of the synthetic generator that the benchmark relies on.

use std::collections::BTreeMap;

use zeroshot_tta::alignment::{train, AlignmentParams, TrainConfig};
use zeroshot_tta::eval::{MetricsReport, Protocol};
use zeroshot_tta::refinement::{run_stream, StreamProtocol, TtaMode};
use zeroshot_tta::synth::{
    benchmark_stream_config, benchmark_train_config, preset, synth_generate, SynthConfig, PRESET_NAMES,
};
use zeroshot_tta::tensor_io::{SampleRole, ValidatedDataset};

fn quick_train() -> TrainConfig {
    TrainConfig { max_epochs: 15, ..benchmark_train_config() }
}

/// Frozen zero-shot accuracy after a short training run.
fn frozen_zsl(cfg: &SynthConfig) -> f64 {
    let ds = synth_generate(cfg).unwrap().into_dataset().unwrap();
    let params = train(&ds, &quick_train()).unwrap().params;
    frozen_accuracy(&ds, &params)
}

fn frozen_accuracy(ds: &ValidatedDataset, params: &AlignmentParams) -> f64 {
    let stream = ds.feature_maps(&Protocol::Zsl.test_indices(ds)).unwrap();
    let sc = zeroshot_tta::refinement::StreamConfig { tta: TtaMode::Off, ..benchmark_stream_config() };
    let split = &ds.manifest().split;
    let r = run_stream(&stream, &ds.anchor_set().unwrap(), params, split, StreamProtocol::Zsl, &sc).unwrap();
    MetricsReport::from_records(&r.records, split).unwrap().top1
}

#[test]
fn generation_is_deterministic_and_seed_sensitive() {
    for name in PRESET_NAMES {
        let cfg = preset(name).unwrap();
        let (a, b) = (synth_generate(&cfg).unwrap(), synth_generate(&cfg).unwrap());
        assert_eq!(a.anchors, b.anchors);
        assert_eq!(a.features, b.features);
        assert_eq!(a.manifest.to_json_string(), b.manifest.to_json_string());
        let other = synth_generate(&SynthConfig { seed: 1, ..cfg }).unwrap();
        assert_ne!(a.anchors, other.anchors);
    }
}

#[test]
fn written_tree_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let out = synth_generate(&preset("easy").unwrap()).unwrap();
    let manifest = out.write(dir.path()).unwrap();
    let loaded =
        zeroshot_tta::tensor_io::validate_dataset(zeroshot_tta::tensor_io::load_manifest(&manifest).unwrap()).unwrap();
    let direct = out.into_dataset().unwrap();
    assert_eq!(loaded.raw_anchors(), direct.raw_anchors());
    assert_eq!(loaded.samples().len(), direct.samples().len());
    for i in [0, loaded.samples().len() - 1] {
        assert_eq!(loaded.feature_tensor(i).unwrap(), direct.feature_tensor(i).unwrap());
    }
}

#[test]
fn imbalanced_preset_counts_follow_the_ratio() {
    let cfg = preset("imbalanced").unwrap();
    let counts = cfg.unseen_test_counts();
    assert_eq!(counts, vec![200, 112, 63, 36, 20]);
    let ds = synth_generate(&cfg).unwrap().into_dataset().unwrap();
    let m = ds.manifest();
    let mut per_class: BTreeMap<i64, usize> = BTreeMap::new();
    for s in ds.samples() {
        if m.role_of(s) == SampleRole::Test && m.split.is_unseen(s.class_id) {
            *per_class.entry(s.class_id).or_default() += 1;
        }
    }
    let mut got: Vec<usize> = per_class.into_values().collect();
    got.sort_unstable_by(|a, b| b.cmp(a));
    assert_eq!(got, counts);
}

#[test]
fn identical_anchors_give_chance_accuracy() {
    let cfg = SynthConfig { anchor_separation: 0.0, test_per_class: 20, ..preset("easy").unwrap() };
    let acc = frozen_zsl(&cfg);
    // five unseen classes
    assert!(acc <= 0.3, "accuracy {acc} with indistinguishable anchors");
}

#[test]
fn drift_lowers_frozen_accuracy() {
    let drifts = [0.0, 0.5, 1.0];
    let mut mean = [0.0; 3];
    for seed in 0..3 {
        for (i, &drift) in drifts.iter().enumerate() {
            let cfg = SynthConfig { anchor_drift: drift, sample_noise: 0.1, seed, ..preset("easy").unwrap() };
            mean[i] += frozen_zsl(&cfg) / 3.0;
        }
    }
    assert!(mean[0] > mean[1] && mean[1] > mean[2], "frozen accuracy by drift: {mean:?}");
}

#[test]
fn infeasible_geometry_is_rejected() {
    let too_wide = SynthConfig { anchor_separation: 2.0, ..SynthConfig::default() };
    assert!(matches!(synth_generate(&too_wide), Err(zeroshot_tta::Error::Infeasible(_))));
    let crowded = SynthConfig { latent_dim: 1, min_latent_angle: 1.5, ..SynthConfig::default() };
    assert!(synth_generate(&crowded).is_err());
}

/// Well separated class directions and little noise transfer to unseen
/// classes without adaptation.
#[test]
fn separated_low_noise_classes_transfer() {
    let mut accs = Vec::new();
    for seed in 0..10 {
        let cfg = SynthConfig {
            feature_noise: 0.1,
            sample_noise: 0.0,
            min_latent_angle: 0.9,
            seed,
            ..preset("easy").unwrap()
        };
        let ds = synth_generate(&cfg).unwrap().into_dataset().unwrap();
        let report = train(&ds, &TrainConfig { seed, ..benchmark_train_config() }).unwrap();
        assert!(report.best_val_accuracy >= 0.95, "seed {seed}: validation {}", report.best_val_accuracy);
        accs.push(frozen_accuracy(&ds, &report.params));
    }
    assert!(accs.iter().all(|&a| a >= 0.95), "frozen unseen accuracy by seed: {accs:?}");
}

/// Rotating unseen test features away from their anchors costs frozen
/// accuracy, on average over seeds.
#[test]
fn rotation_weakly_lowers_frozen_accuracy() {
    use std::f64::consts::PI;
    let angles = [0.0, PI / 16.0, PI / 8.0, PI / 4.0];
    let mut mean = [0.0; 4];
    for seed in 0..10 {
        let base = SynthConfig { seed, ..preset("easy").unwrap() };
        let datasets: Vec<_> =
            angles.iter().map(|&a| synth_generate(&SynthConfig { shift_angle: a, ..base.clone() }).unwrap()).collect();
        // the rotation leaves everything used for training untouched
        let m = &datasets[0].manifest;
        for (i, rec) in m.sample_records.iter().enumerate() {
            if m.split.is_seen(rec.class_id) {
                assert!(datasets.iter().all(|d| d.features[i] == datasets[0].features[i]));
            }
        }
        let datasets: Vec<ValidatedDataset> = datasets.into_iter().map(|d| d.into_dataset().unwrap()).collect();
        let params = train(&datasets[0], &TrainConfig { seed, ..benchmark_train_config() }).unwrap().params;
        for (i, ds) in datasets.iter().enumerate() {
            mean[i] += frozen_accuracy(ds, &params) / 10.0;
        }
    }
    assert!(mean.windows(2).all(|w| w[1] <= w[0]), "mean frozen accuracy by angle: {mean:?}");
    assert!(mean[3] < mean[0]);
}
