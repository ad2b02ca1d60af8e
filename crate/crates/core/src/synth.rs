//! Seeded synthetic benchmark with controllable anchor geometry and
//! test-time shift of the unseen classes.
//!
//! Class anchors are `cos(sep) b + sin(sep) z_k` for a shared unit vector `b`
//! and unit `z_k` drawn in a low-dimensional subspace orthogonal to it, with
//! pairwise angles of at least `min_latent_angle`. Sharing the subspace lets
//! a map learned on seen classes transfer to unseen ones. Part and phase
//! anchors perturb the class anchor with granularity-specific linear maps.
//! Node features are a shared linear map of the anchors of the node's body
//! part and phase, plus per-node and per-sample noise.
//!
//! Two shifts are available. `anchor_drift` generates each unseen class's
//! features from a direction tilted away from its published anchor, so the
//! published text is a biased description of the class. `shift_angle`
//! rotates unseen validation and test features inside the signal subspace.

use std::f64::consts::FRAC_PI_2;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{s, Array1, Array2, Array3};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::alignment::{StaticPartition, TrainConfig};
use crate::error::{Error, Result};
use crate::refinement::StreamConfig;
use crate::rng::{substream, StreamRng};
use crate::tensor_io::{
    granularity_labels, save_tensor, ClassRecord, ClassSplit, DatasetManifest, Dims, SampleRecord, SampleRole, Tensor,
    ValidatedDataset,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub classes: usize,
    pub unseen: usize,
    pub text_dim: usize,
    pub visual_dim: usize,
    /// Joint grouping; also fixes the part and phase counts.
    pub partition: StaticPartition,
    pub frames: usize,
    pub train_per_class: usize,
    pub val_per_class: usize,
    pub test_per_class: usize,
    /// Ratio between the largest and smallest unseen test class.
    pub imbalance: f64,
    /// Angle between each class anchor and the shared direction, in
    /// `[0, pi/2]`. Zero makes all classes identical.
    pub anchor_separation: f64,
    /// Dimension of the subspace holding the class directions `z_k`.
    pub latent_dim: usize,
    /// Minimum pairwise angle between class directions.
    pub min_latent_angle: f64,
    /// Strength of the part and phase perturbations.
    pub granularity_spread: f64,
    /// Per-node noise standard deviation.
    pub feature_noise: f64,
    /// Standard deviation of a per-sample offset shared by all its nodes.
    pub sample_noise: f64,
    /// Rotation (radians) applied to unseen-class validation and test
    /// features.
    pub shift_angle: f64,
    /// Angle (radians) by which the direction generating an unseen class's
    /// features departs from its published anchor, inside the latent
    /// subspace.
    pub anchor_drift: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            classes: 20,
            unseen: 5,
            text_dim: 16,
            visual_dim: 16,
            partition: StaticPartition::skeleton25(),
            frames: 3,
            train_per_class: 30,
            val_per_class: 6,
            test_per_class: 40,
            imbalance: 1.0,
            anchor_separation: 1.2,
            latent_dim: 4,
            min_latent_angle: 0.7,
            granularity_spread: 0.5,
            feature_noise: 0.3,
            sample_noise: 0.05,
            shift_angle: 0.0,
            anchor_drift: 0.0,
            seed: 0,
        }
    }
}

pub const PRESET_NAMES: [&str; 3] = ["easy", "shifted", "imbalanced"];

/// Named configurations, seeded with 0.
pub fn synth_presets() -> Vec<(&'static str, SynthConfig)> {
    PRESET_NAMES.iter().map(|&n| (n, preset(n).unwrap())).collect()
}

pub fn preset(name: &str) -> Option<SynthConfig> {
    let base = SynthConfig::default();
    Some(match name {
        "easy" => base,
        "shifted" => SynthConfig { sample_noise: 0.1, anchor_drift: 0.7, test_per_class: 80, ..base },
        "imbalanced" => {
            SynthConfig { sample_noise: 0.1, anchor_drift: 0.7, test_per_class: 200, imbalance: 10.0, ..base }
        }
        _ => return None,
    })
}

/// Training settings sized for the synthetic benchmark: a small model and a
/// faster rate than the full-scale defaults.
pub fn benchmark_train_config() -> TrainConfig {
    TrainConfig {
        learning_rate: 1e-3,
        batch_size: 64,
        max_epochs: 50,
        patience: 10,
        attn_dim: 32,
        mlp_hidden: 64,
        ..TrainConfig::default()
    }
}

/// Stream settings for the synthetic benchmark. The adaptation rate is a
/// tenth of the default: with 16-dimensional anchors the default rate lets
/// Adam move the refined anchors far enough to swap neighbouring classes.
pub fn benchmark_stream_config() -> StreamConfig {
    StreamConfig { base_rate: 1e-3, ..StreamConfig::default() }
}

impl SynthConfig {
    pub fn nodes(&self) -> usize {
        self.partition.joints * self.frames
    }

    pub fn granularities(&self) -> usize {
        self.partition.num_granularities()
    }

    pub fn check(&self) -> Result<()> {
        let counts =
            [self.classes, self.text_dim, self.visual_dim, self.frames, self.train_per_class, self.test_per_class];
        if counts.contains(&0) || self.unseen == 0 {
            return Err(Error::Config("synthetic counts must be at least 1".into()));
        }
        if self.unseen >= self.classes {
            return Err(Error::Config(format!(
                "{} unseen classes leave no seen class out of {}",
                self.unseen, self.classes
            )));
        }
        let reals = [self.feature_noise, self.sample_noise, self.granularity_spread, self.anchor_separation];
        let angles_finite = self.shift_angle.is_finite() && self.anchor_drift.is_finite();
        if reals.iter().any(|x| !(*x >= 0.0 && x.is_finite())) || !angles_finite {
            return Err(Error::Config("noise, spread and separation must be finite and non-negative".into()));
        }
        if !(self.imbalance >= 1.0) {
            return Err(Error::Config("imbalance ratio must be at least 1".into()));
        }
        if self.anchor_separation > FRAC_PI_2 {
            return Err(Error::Infeasible(format!("anchor separation {} exceeds pi/2", self.anchor_separation)));
        }
        if self.latent_dim == 0 || self.latent_dim + 1 > self.text_dim {
            return Err(Error::Infeasible(format!(
                "latent dimension {} must lie in [1, text_dim - 1 = {}]",
                self.latent_dim,
                self.text_dim - 1
            )));
        }
        if self.anchor_drift != 0.0 && self.latent_dim < 2 {
            return Err(Error::Infeasible("anchor drift needs a latent dimension of at least 2".into()));
        }
        self.partition.weights(self.nodes())?;
        Ok(())
    }

    /// Test samples of each unseen class, largest first, geometrically
    /// spaced down to `1 / imbalance` of the largest.
    pub fn unseen_test_counts(&self) -> Vec<usize> {
        (0..self.unseen)
            .map(|i| {
                let frac = if self.unseen == 1 { 0.0 } else { i as f64 / (self.unseen - 1) as f64 };
                ((self.test_per_class as f64 * self.imbalance.powf(-frac)).round() as usize).max(1)
            })
            .collect()
    }
}

/// A generated dataset held in memory.
#[derive(Debug, Clone)]
pub struct SynthOutput {
    pub manifest: DatasetManifest,
    pub anchors: Tensor,
    pub features: Vec<Tensor>,
}

impl SynthOutput {
    pub fn into_dataset(self) -> Result<ValidatedDataset> {
        ValidatedDataset::from_parts(self.manifest, self.anchors, self.features)
    }

    /// Writes `manifest.json`, the anchor tensor and one tensor per sample
    /// under `dir`, returning the manifest path.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<PathBuf> {
        let dir = dir.as_ref();
        let features_dir = dir.join("features");
        fs::create_dir_all(&features_dir).map_err(|e| Error::io(&features_dir, e))?;
        save_tensor(&self.anchors, dir.join(&self.manifest.anchor_file))?;
        for (record, tensor) in self.manifest.sample_records.iter().zip(&self.features) {
            save_tensor(tensor, dir.join(&record.feature_file))?;
        }
        let path = dir.join("manifest.json");
        self.manifest.save(&path)?;
        Ok(path)
    }
}

const DRIFT_CANDIDATES: usize = 64;

fn gaussian_vec(d: usize, rng: &mut StreamRng) -> Array1<f64> {
    Array1::from_shape_simple_fn(d, || rng.sample(StandardNormal))
}

fn gaussian_mat(rows: usize, cols: usize, rng: &mut StreamRng) -> Array2<f64> {
    let scale = (cols as f64).sqrt().recip();
    Array2::from_shape_simple_fn((rows, cols), || scale * rng.sample::<f64, _>(StandardNormal))
}

fn unit(v: Array1<f64>) -> Array1<f64> {
    let norm = v.dot(&v).sqrt();
    v / norm
}

/// Orthonormalizes `count` random vectors against `basis` and each other.
fn orthonormal(count: usize, d: usize, mut basis: Vec<Array1<f64>>, rng: &mut StreamRng) -> Vec<Array1<f64>> {
    let start = basis.len();
    while basis.len() < start + count {
        let mut v = gaussian_vec(d, rng);
        for b in &basis {
            let proj = v.dot(b);
            v.scaled_add(-proj, b);
        }
        let norm = v.dot(&v).sqrt();
        if norm > 1e-6 {
            basis.push(v / norm);
        }
    }
    basis.split_off(start)
}

/// Coefficients of `v` in the orthonormal `basis`.
fn coords(v: &Array1<f64>, basis: &[Array1<f64>]) -> Array1<f64> {
    basis.iter().map(|u| u.dot(v)).collect()
}

/// Orthonormal basis of the span of `vectors`, dropping dependent ones.
fn gram_schmidt(vectors: impl Iterator<Item = Array1<f64>>) -> Vec<Array1<f64>> {
    let mut out: Vec<Array1<f64>> = Vec::new();
    for mut v in vectors {
        for u in &out {
            let proj = v.dot(u);
            v.scaled_add(-proj, u);
        }
        let norm = v.dot(&v).sqrt();
        if norm > 1e-9 {
            out.push(v / norm);
        }
    }
    out
}

/// `count` unit vectors in the span of `basis` whose pairwise angles are all
/// at least `min_angle`, by rejection sampling.
fn spread_directions(
    count: usize,
    basis: &[Array1<f64>],
    min_angle: f64,
    rng: &mut StreamRng,
) -> Result<Vec<Array1<f64>>> {
    const RESTARTS: usize = 50;
    const TRIES: usize = 2000;
    let max_cos = min_angle.cos();
    let d = basis[0].len();
    let draw = |rng: &mut StreamRng| {
        let coef = gaussian_vec(basis.len(), rng);
        let v = basis.iter().zip(&coef).fold(Array1::zeros(d), |acc, (b, &c)| acc + b * c);
        unit(v)
    };
    'restart: for _ in 0..RESTARTS {
        let mut out: Vec<Array1<f64>> = Vec::with_capacity(count);
        while out.len() < count {
            let found = (0..TRIES).map(|_| draw(rng)).find(|v| out.iter().all(|u| u.dot(v) <= max_cos));
            match found {
                Some(v) => out.push(v),
                None => continue 'restart,
            }
        }
        return Ok(out);
    }
    Err(Error::Infeasible(format!(
        "could not place {count} class directions {min_angle} rad apart in {} dimensions",
        basis.len()
    )))
}

/// Draws the dataset for `cfg`. Identical configs give identical output.
pub fn synth_generate(cfg: &SynthConfig) -> Result<SynthOutput> {
    cfg.check()?;
    let mut rng = substream(cfg.seed, "synth");
    let (c_n, d, n) = (cfg.classes, cfg.text_dim, cfg.visual_dim);
    let parts = cfg.partition.parts.len();
    let segments = cfg.partition.segments;
    let gr = cfg.granularities();

    let basis = orthonormal(cfg.latent_dim + 1, d, Vec::new(), &mut rng);
    let b = basis[0].clone();
    let z = spread_directions(c_n, &basis[1..], cfg.min_latent_angle, &mut rng)?;
    let (cos_s, sin_s) = (cfg.anchor_separation.cos(), cfg.anchor_separation.sin());
    let perturb: Vec<Array2<f64>> = (1..gr).map(|_| gaussian_mat(d, d, &mut rng)).collect();
    let mut anchors = Array3::<f64>::zeros((c_n, gr, d));
    for k in 0..c_n {
        let class_dir = &b * cos_s + &z[k] * sin_s;
        anchors.slice_mut(s![k, 0, ..]).assign(&class_dir);
        for (i, p) in perturb.iter().enumerate() {
            let v = &class_dir + &(p.dot(&class_dir) * cfg.granularity_spread);
            anchors.slice_mut(s![k, i + 1, ..]).assign(&unit(v));
        }
    }

    let generator = gaussian_mat(n, d, &mut rng);
    // The rotation plane lies in the image of the class subspace, so the
    // shift moves class signals rather than noise-only directions.
    let image = gram_schmidt(basis.iter().map(|v| generator.dot(v)));
    let plane: Vec<Array1<f64>> = orthonormal(2, image.len(), Vec::new(), &mut rng)
        .iter()
        .map(|coef| image.iter().zip(coef).fold(Array1::zeros(n), |acc, (u, &c)| acc + u * c))
        .collect();
    let rotation = plane_rotation(&plane[0], &plane[1], cfg.shift_angle);

    let mut ids: Vec<i64> = (0..c_n as i64).collect();
    ids.shuffle(&mut rng);
    let mut unseen: Vec<i64> = ids[..cfg.unseen].to_vec();
    unseen.sort_unstable();
    let split = ClassSplit::new(ids[cfg.unseen..].iter().copied(), unseen.iter().copied())?;

    // Per-node mixing of the class's global, part and phase anchors.
    let weights = cfg.partition.weights(cfg.nodes())?;
    let node_groups: Vec<(usize, usize)> = (0..cfg.nodes())
        .map(|s| {
            let col = weights.column(s);
            let part = (1..=parts).find(|&i| col[i] > 0.0).unwrap();
            let phase = (1 + parts..gr).find(|&i| col[i] > 0.0).unwrap();
            (part, phase)
        })
        .collect();
    // Unseen features are generated from drifted anchors, so the published
    // ones are slightly off for exactly the classes never trained on.
    let mut sources = anchors.clone();
    let (cos_a, sin_a) = (cfg.anchor_drift.cos(), cfg.anchor_drift.sin());
    for &k in split.unseen.iter().filter(|_| cfg.anchor_drift != 0.0) {
        let k = k as usize;
        // Of a few random tangent directions, keep the one whose drifted
        // direction stays farthest from every other class.
        let own = coords(&z[k], &basis[1..]);
        let drifted = (0..DRIFT_CANDIDATES)
            .map(|_| {
                let w = orthonormal(1, cfg.latent_dim, vec![own.clone()], &mut rng).remove(0);
                let w = basis[1..].iter().zip(&w).fold(Array1::<f64>::zeros(d), |acc, (u, &c)| acc + u * c);
                let v = &z[k] * cos_a + &w * sin_a;
                let nearest = (0..c_n).filter(|&j| j != k).map(|j| z[j].dot(&v)).fold(f64::MIN, f64::max);
                (nearest, v)
            })
            .min_by(|a, b| a.0.total_cmp(&b.0))
            .unwrap()
            .1;
        let class_dir = &b * cos_s + &drifted * sin_s;
        sources.slice_mut(s![k, 0, ..]).assign(&class_dir);
        for (i, p) in perturb.iter().enumerate() {
            let v = &class_dir + &(p.dot(&class_dir) * cfg.granularity_spread);
            sources.slice_mut(s![k, i + 1, ..]).assign(&unit(v));
        }
    }
    let signals: Vec<Array2<f64>> = (0..c_n)
        .map(|k| {
            let mut sig = Array2::zeros((cfg.nodes(), n));
            for (s, &(part, phase)) in node_groups.iter().enumerate() {
                let mix =
                    (&sources.slice(s![k, 0, ..]) + &sources.slice(s![k, part, ..]) + &sources.slice(s![k, phase, ..]))
                        / 3.0;
                let y: Array1<f64> = generator.dot(&mix);
                sig.row_mut(s).assign(&y);
            }
            sig
        })
        .collect();

    let mut plan: Vec<(i64, SampleRole)> = Vec::new();
    for &c in &split.seen {
        plan.extend(std::iter::repeat_n((c, SampleRole::Train), cfg.train_per_class));
    }
    for c in split.all() {
        plan.extend(std::iter::repeat_n((c, SampleRole::Val), cfg.val_per_class));
    }
    let mut test: Vec<(i64, SampleRole)> = Vec::new();
    for &c in &split.seen {
        test.extend(std::iter::repeat_n((c, SampleRole::Test), cfg.test_per_class));
    }
    for (&c, count) in unseen.iter().zip(cfg.unseen_test_counts()) {
        test.extend(std::iter::repeat_n((c, SampleRole::Test), count));
    }
    test.shuffle(&mut rng);
    plan.extend(test);

    let mut records = Vec::with_capacity(plan.len());
    let mut features = Vec::with_capacity(plan.len());
    for (i, &(class_id, role)) in plan.iter().enumerate() {
        let noise = Array2::from_shape_simple_fn((cfg.nodes(), n), || rng.sample::<f64, _>(StandardNormal));
        let offset = gaussian_vec(n, &mut rng) * cfg.sample_noise;
        let mut x = &signals[class_id as usize] + &(noise * cfg.feature_noise) + &offset;
        if role != SampleRole::Train && split.is_unseen(class_id) {
            x = x.dot(&rotation.t());
        }
        let id = format!("s{i:05}");
        features.push(Tensor::from_array_f32(&x)?);
        records.push(SampleRecord {
            feature_file: PathBuf::from(format!("features/{id}.dpt")),
            id,
            class_id,
            role: Some(role),
        });
    }

    let labels = granularity_labels(parts, segments);
    let class_records = (0..c_n as i64)
        .map(|k| ClassRecord {
            id: k,
            name: format!("class_{k}"),
            descriptions: labels.iter().map(|l| format!("synthetic class {k}, {l}")).collect(),
        })
        .collect();
    let manifest = DatasetManifest {
        class_records,
        split,
        granularity_labels: labels,
        anchor_file: PathBuf::from("anchors.dpt"),
        sample_records: records,
        dims: Dims { classes: c_n, granularities: gr, text_dim: d, nodes: cfg.nodes(), visual_dim: n },
        base_dir: PathBuf::new(),
    };
    Ok(SynthOutput { manifest, anchors: Tensor::from_array_f32(&anchors)?, features })
}

/// In-memory dataset for `cfg`.
pub fn synth_dataset(cfg: &SynthConfig) -> Result<ValidatedDataset> {
    synth_generate(cfg)?.into_dataset()
}

/// Rotation by `angle` in the plane spanned by orthonormal `u` and `v`.
fn plane_rotation(u: &Array1<f64>, v: &Array1<f64>, angle: f64) -> Array2<f64> {
    let n = u.len();
    let outer = |a: &Array1<f64>, b: &Array1<f64>| {
        a.view().insert_axis(ndarray::Axis(1)).dot(&b.view().insert_axis(ndarray::Axis(0)))
    };
    let proj = outer(u, u) + outer(v, v);
    let skew = outer(v, u) - outer(u, v);
    Array2::eye(n) + proj * (angle.cos() - 1.0) + skew * angle.sin()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor_io::SampleRole;

    fn small() -> SynthConfig {
        SynthConfig {
            classes: 5,
            unseen: 2,
            text_dim: 8,
            visual_dim: 6,
            train_per_class: 3,
            val_per_class: 1,
            test_per_class: 4,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn deterministic() {
        let a = synth_generate(&small()).unwrap();
        let b = synth_generate(&small()).unwrap();
        assert_eq!(a.anchors, b.anchors);
        assert_eq!(a.features, b.features);
        assert_eq!(a.manifest, b.manifest);
        let c = synth_generate(&SynthConfig { seed: 1, ..small() }).unwrap();
        assert_ne!(a.anchors, c.anchors);
    }

    #[test]
    fn separated_anchors() {
        let cfg = SynthConfig { anchor_separation: 0.7, latent_dim: 4, min_latent_angle: 1.0, ..small() };
        let set = synth_dataset(&cfg).unwrap().anchor_set().unwrap();
        // cos = cos^2(sep) + sin^2(sep) cos(latent angle)
        let bound = 0.7f64.cos().powi(2) + 0.7f64.sin().powi(2) * 1.0f64.cos();
        for i in 0..5 {
            for j in 0..i {
                let cos = set.row(i, 0).dot(&set.row(j, 0));
                assert!(cos <= bound + 1e-6, "{cos} > {bound}");
            }
        }
    }

    #[test]
    fn zero_separation_collapses_classes() {
        let cfg = SynthConfig { anchor_separation: 0.0, ..small() };
        let set = synth_dataset(&cfg).unwrap().anchor_set().unwrap();
        for k in 1..5 {
            assert_eq!(set.class_view(k), set.class_view(0));
        }
    }

    #[test]
    fn infeasible_configs() {
        let too_many = SynthConfig { classes: 8, latent_dim: 2, min_latent_angle: 1.2, ..small() };
        assert!(matches!(synth_generate(&too_many), Err(Error::Infeasible(_))));
        let too_wide = SynthConfig { anchor_separation: 2.0, ..small() };
        assert!(matches!(synth_generate(&too_wide), Err(Error::Infeasible(_))));
        let no_seen = SynthConfig { unseen: 5, ..small() };
        assert!(matches!(synth_generate(&no_seen), Err(Error::Config(_))));
    }

    #[test]
    fn roles_and_counts() {
        let out = synth_generate(&SynthConfig { imbalance: 4.0, ..small() }).unwrap();
        let m = &out.manifest;
        let count = |role| m.sample_records.iter().filter(|s| s.role == Some(role)).count();
        assert_eq!(count(SampleRole::Train), 3 * 3);
        assert_eq!(count(SampleRole::Val), 5);
        assert_eq!(count(SampleRole::Test), 3 * 4 + 4 + 1);
        assert!(m
            .sample_records
            .iter()
            .filter(|s| s.role == Some(SampleRole::Train))
            .all(|s| m.split.is_seen(s.class_id)));
    }

    #[test]
    fn rotation_is_orthogonal() {
        let mut rng = substream(3, "t");
        let p = orthonormal(2, 5, Vec::new(), &mut rng);
        let r = plane_rotation(&p[0], &p[1], 0.4);
        let id = r.dot(&r.t());
        for ((i, j), x) in id.indexed_iter() {
            assert!((x - if i == j { 1.0 } else { 0.0 }).abs() < 1e-12);
        }
        assert_eq!(plane_rotation(&p[0], &p[1], 0.0), Array2::<f64>::eye(5));
    }

    #[test]
    fn presets_exist() {
        let names: Vec<_> = synth_presets().into_iter().map(|(n, _)| n).collect();
        assert_eq!(names, vec!["easy", "shifted", "imbalanced"]);
        for (_, cfg) in synth_presets() {
            cfg.check().unwrap();
        }
        assert!(preset("nope").is_none());
    }
}
