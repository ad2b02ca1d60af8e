//! Brute-force reference implementations on nested `Vec`s, written from the
//! model's definition without sharing code with the library, plus a random
//! small-instance generator.

#![allow(dead_code)]

use std::sync::Arc;

use ndarray::{Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use zeroshot_tta::alignment::{AlignmentParams, Fusion, Mlp, QueryMode, StaticPartition, VisualFeatureMap};
use zeroshot_tta::anchors::SemanticAnchorSet;
use zeroshot_tta::refinement::BankEntry;
use zeroshot_tta::tensor_io::{granularity_labels, ClassSplit};

pub type Mat = Vec<Vec<f64>>;

pub fn to_mat(a: &Array2<f64>) -> Mat {
    a.rows().into_iter().map(|r| r.to_vec()).collect()
}

pub fn matmul(a: &Mat, b: &Mat) -> Mat {
    let (n, k, m) = (a.len(), b.len(), b[0].len());
    let mut out = vec![vec![0.0; m]; n];
    for i in 0..n {
        for j in 0..m {
            let mut acc = 0.0;
            for t in 0..k {
                acc += a[i][t] * b[t][j];
            }
            out[i][j] = acc;
        }
    }
    out
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn normalize(v: &[f64]) -> Vec<f64> {
    let n = dot(v, v).sqrt();
    v.iter().map(|x| x / n).collect()
}

pub fn softmax(xs: &[f64]) -> Vec<f64> {
    let e: Vec<f64> = xs.iter().map(|x| x.exp()).collect();
    let total: f64 = e.iter().sum();
    e.iter().map(|x| x / total).collect()
}

pub fn cos(a: &[f64], b: &[f64]) -> f64 {
    dot(a, b) / (dot(a, a) * dot(b, b)).sqrt()
}

/// Anchor rows as `[class][granularity][k]`.
pub fn anchor_vecs(a: &SemanticAnchorSet) -> Vec<Mat> {
    (0..a.num_classes()).map(|c| (0..a.num_granularities()).map(|g| a.row(c, g).to_vec()).collect()).collect()
}

/// Per granularity, the normalized sum over classes.
pub fn shared_query(anchors: &[Mat]) -> Mat {
    let (gr, d) = (anchors[0].len(), anchors[0][0].len());
    (0..gr)
        .map(|g| {
            let sum: Vec<f64> = (0..d).map(|k| anchors.iter().map(|c| c[g][k]).sum()).collect();
            normalize(&sum)
        })
        .collect()
}

/// Node-to-group membership weights of a static partition, built by
/// counting.
pub fn static_pool(partition: &StaticPartition, nodes: usize) -> Mat {
    let j = partition.joints;
    let frames = nodes / j;
    let seg_len = frames / partition.segments;
    let mut groups: Vec<Vec<usize>> = vec![(0..nodes).collect()];
    for part in &partition.parts {
        groups.push((0..nodes).filter(|s| part.contains(&(s % j))).collect());
    }
    for z in 0..partition.segments {
        let last = z + 1 == partition.segments;
        groups.push(
            (0..nodes)
                .filter(|s| {
                    let t = s / j;
                    t >= z * seg_len && (last || t < (z + 1) * seg_len)
                })
                .collect(),
        );
    }
    groups
        .iter()
        .map(|members| {
            (0..nodes).map(|s| if members.contains(&s) { 1.0 / members.len() as f64 } else { 0.0 }).collect()
        })
        .collect()
}

pub struct OracleFusion {
    pub attention: Mat,
    pub fused: Mat,
    pub projected: Mat,
}

/// Pooling, two-layer ReLU head and row normalization.
pub fn fuse(queries: &Mat, g: &Mat, p: &AlignmentParams) -> OracleFusion {
    let attention = match &p.fusion {
        Fusion::Attention => {
            let q = matmul(queries, &to_mat(&p.w_q));
            let k = matmul(g, &to_mat(&p.w_k));
            let h = p.w_q.ncols() as f64;
            q.iter().map(|qi| softmax(&k.iter().map(|kj| dot(qi, kj) / h.sqrt()).collect::<Vec<_>>())).collect()
        }
        Fusion::Static(partition) => static_pool(partition, g.len())[..queries.len()].to_vec(),
    };
    let fused = matmul(&attention, g);
    let w1 = to_mat(&p.mlp.w1);
    let w2 = to_mat(&p.mlp.w2);
    let projected = fused
        .iter()
        .map(|row| {
            let hidden: Vec<f64> = (0..w1[0].len())
                .map(|j| (row.iter().enumerate().map(|(i, x)| x * w1[i][j]).sum::<f64>() + p.mlp.b1[j]).max(0.0))
                .collect();
            let out: Vec<f64> = (0..w2[0].len())
                .map(|k| hidden.iter().enumerate().map(|(j, h)| h * w2[j][k]).sum::<f64>() + p.mlp.b2[k])
                .collect();
            normalize(&out)
        })
        .collect();
    OracleFusion { attention, fused, projected }
}

/// `0.5 * (-log softmax over seen anchors - log softmax over batch rows)`.
pub fn contrastive(v: &[f64], own: &[f64], seen_rows: &[Vec<f64>], batch_rows: &[Vec<f64>], tau: f64) -> f64 {
    let pos = (cos(v, own) / tau).exp();
    let text: f64 = seen_rows.iter().map(|f| (cos(v, f) / tau).exp()).sum();
    let visual: f64 = batch_rows.iter().map(|u| (cos(u, own) / tau).exp()).sum();
    0.5 * (-(pos / text).ln() - (pos / visual).ln())
}

pub fn alpha(p: &AlignmentParams) -> Vec<f64> {
    let sp: Vec<f64> = p.alpha_raw.iter().map(|&a| (1.0 + a.exp()).ln()).collect();
    let total: f64 = sp.iter().sum();
    sp.iter().map(|x| x / total).collect()
}

/// Granularity-weighted loss of every batch sample.
pub fn total_losses(
    batch: &[&VisualFeatureMap],
    anchors: &SemanticAnchorSet,
    p: &AlignmentParams,
    split: &ClassSplit,
) -> Vec<f64> {
    let a = anchor_vecs(anchors);
    let ci = |c: i64| anchors.class_ids().iter().position(|&x| x == c).unwrap();
    let projected: Vec<Mat> = batch
        .iter()
        .map(|g| {
            let queries = match p.query_mode {
                QueryMode::Shared => shared_query(&a),
                QueryMode::ClassAnchors => a[ci(g.class_id)].clone(),
            };
            fuse(&queries, &to_mat(&g.values), p).projected
        })
        .collect();
    let w = alpha(p);
    batch
        .iter()
        .enumerate()
        .map(|(x, g)| {
            (0..w.len())
                .map(|gi| {
                    let own = &a[ci(g.class_id)][gi];
                    let seen_rows: Vec<Vec<f64>> = split.seen.iter().map(|&c| a[ci(c)][gi].clone()).collect();
                    let batch_rows: Vec<Vec<f64>> = projected.iter().map(|m| m[gi].clone()).collect();
                    w[gi] * contrastive(&projected[x][gi], own, &seen_rows, &batch_rows, p.temperature)
                })
                .sum()
        })
        .collect()
}

pub fn refine(anchors: &SemanticAnchorSet, scale: &Array3<f64>, bias: &Array3<f64>) -> Vec<Mat> {
    anchor_vecs(anchors)
        .iter()
        .enumerate()
        .map(|(c, rows)| {
            rows.iter()
                .enumerate()
                .map(|(g, f)| {
                    normalize(
                        &f.iter().enumerate().map(|(k, x)| scale[[c, g, k]] * x + bias[[c, g, k]]).collect::<Vec<_>>(),
                    )
                })
                .collect()
        })
        .collect()
}

/// Candidate ids (ascending) and their probabilities.
pub fn predict(
    g: &VisualFeatureMap,
    refined: &[Mat],
    class_ids: &[i64],
    p: &AlignmentParams,
    candidates: &[i64],
) -> (Vec<i64>, Vec<f64>) {
    let query = vec![shared_query(refined)[0].clone()];
    let v = fuse(&query, &to_mat(&g.values), p).projected[0].clone();
    let mut ids = candidates.to_vec();
    ids.sort_unstable();
    ids.dedup();
    let logits: Vec<f64> = ids
        .iter()
        .map(|c| {
            let i = class_ids.iter().position(|x| x == c).unwrap();
            dot(&v, &refined[i][0]) / p.temperature
        })
        .collect();
    let probs = softmax(&logits);
    (ids, probs)
}

pub fn adaptation_loss(
    batch: &[&BankEntry],
    anchors: &SemanticAnchorSet,
    scale: &Array3<f64>,
    bias: &Array3<f64>,
    p: &AlignmentParams,
    sets: &[Vec<i64>],
) -> f64 {
    let refined = refine(anchors, scale, bias);
    let total: f64 = batch
        .iter()
        .map(|e| {
            let (ids, probs) = predict(&e.features, &refined, anchors.class_ids(), p, &sets[e.domain]);
            -probs[ids.iter().position(|&c| c == e.pseudo_label).unwrap()].ln()
        })
        .sum();
    total / batch.len() as f64
}

/// A random small problem: `d, n <= 8`, `S <= 10`, `C <= 5`.
pub struct Instance {
    pub anchors: SemanticAnchorSet,
    pub split: ClassSplit,
    pub params: AlignmentParams,
    pub batch: Vec<VisualFeatureMap>,
    pub rng: ChaCha8Rng,
}

impl Instance {
    pub fn batch_refs(&self) -> Vec<&VisualFeatureMap> {
        self.batch.iter().collect()
    }
}

fn uniform(shape: (usize, usize), lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Array2<f64> {
    Array2::from_shape_simple_fn(shape, || rng.random_range(lo..hi))
}

pub fn instance(seed: u64, static_fusion: bool) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = rng.random_range(2..=8);
    let n = rng.random_range(2..=8);
    let c = rng.random_range(2..=5usize);
    let unseen = rng.random_range(0..c.min(2));
    let joints = rng.random_range(2..=5usize);
    let frames = rng.random_range(1..=10 / joints);
    let nodes = joints * frames;
    let parts_count = rng.random_range(1..=joints.min(3));
    let mut parts = vec![Vec::new(); parts_count];
    for j in 0..joints {
        // every part gets at least one joint
        let p = if j < parts_count { j } else { rng.random_range(0..parts_count) };
        parts[p].push(j);
    }
    let segments = rng.random_range(1..=frames.min(3));
    let partition = StaticPartition { joints, parts, segments };
    let labels = granularity_labels(partition.parts.len(), partition.segments);
    let gr = labels.len();

    let raw = Array3::from_shape_simple_fn((c, gr, d), || rng.random_range(-1.0..1.0));
    let ids: Vec<i64> = (0..c as i64).map(|i| 3 * i + 1).collect();
    let anchors = SemanticAnchorSet::new(raw, ids.clone(), labels).unwrap();
    let split = ClassSplit::new(ids[unseen..].iter().copied(), ids[..unseen].iter().copied()).unwrap();

    let h = rng.random_range(1..=6);
    let hidden = rng.random_range(2..=8);
    let fusion = if static_fusion { Fusion::Static(partition) } else { Fusion::Attention };
    let params = AlignmentParams {
        w_q: uniform((d, h), -1.5, 1.5, &mut rng),
        w_k: uniform((n, h), -1.5, 1.5, &mut rng),
        mlp: Mlp {
            w1: uniform((n, hidden), -1.0, 1.0, &mut rng),
            b1: uniform((1, hidden), 0.2, 0.8, &mut rng).row(0).to_owned(),
            w2: uniform((hidden, d), -1.0, 1.0, &mut rng),
            b2: uniform((1, d), -0.5, 0.5, &mut rng).row(0).to_owned(),
        },
        alpha_raw: uniform((1, gr), -1.0, 1.0, &mut rng).row(0).to_owned(),
        temperature: rng.random_range(0.3..1.0),
        fusion,
        query_mode: if rng.random_bool(0.5) { QueryMode::Shared } else { QueryMode::ClassAnchors },
    };

    let seen: Vec<i64> = split.seen.iter().copied().collect();
    let b = rng.random_range(1..=4);
    let batch = (0..b)
        .map(|i| {
            let class = seen[rng.random_range(0..seen.len())];
            VisualFeatureMap::new(uniform((nodes, n), -1.0, 1.0, &mut rng), format!("s{i}"), class).unwrap()
        })
        .collect();
    Instance { anchors, split, params, batch, rng }
}

/// Bank entries with pseudo-labels drawn from `sets`.
pub fn bank_entries(inst: &mut Instance, sets: &[Vec<i64>], count: usize) -> Vec<BankEntry> {
    (0..count)
        .map(|i| {
            let domain = inst.rng.random_range(0..sets.len());
            let set = &sets[domain];
            let label = set[inst.rng.random_range(0..set.len())];
            let g = inst.batch[i % inst.batch.len()].clone();
            BankEntry { features: Arc::new(g), pseudo_label: label, confidence: 0.5, insertion_index: i as u64, domain }
        })
        .collect()
}

/// Candidate sets over the instance's classes: everything, or a seen/unseen
/// pair when both are non-empty.
pub fn candidate_sets(inst: &Instance) -> Vec<Vec<i64>> {
    if inst.split.unseen.is_empty() {
        vec![inst.anchors.class_ids().to_vec()]
    } else {
        vec![inst.split.seen.iter().copied().collect(), inst.split.unseen.iter().copied().collect()]
    }
}

/// Worst relative deviation, `|a - b| / max(|a|, |b|, floor)`.
pub fn max_rel_err(a: &[f64], b: &[f64], floor: f64) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(floor)).fold(0.0, f64::max)
}
