//! Independent reference implementations shared by the integration tests and
//! the acceptance suite. They favour obviousness over speed.

#![allow(dead_code)]

use std::collections::BTreeSet;

use fedcc::clustering::{ClusterAssignment, DistanceMatrix};
use fedcc::data::ImageMeta;
use fedcc::federation::{StageId, TrainingObserver};
use fedcc::memory::{contrastive_batch_loss, CentroidMemory, MemoryParams};
use fedcc::model::{backward, forward, Architecture, EncoderParams, Mode};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian_matrix(rng: &mut impl Rng, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| {
        // Box-Muller keeps the oracle free of the crate's sampling code.
        let u1: f64 = rng.random_range(1e-12..1.0);
        let u2: f64 = rng.random_range(0.0..1.0);
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    })
}

pub fn unit_rows(mut m: Array2<f64>) -> Array2<f64> {
    for mut row in m.rows_mut() {
        let n = row.dot(&row).sqrt();
        row /= n;
    }
    m
}

// ---------------------------------------------------------------------------
// Gradients
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Objective {
    /// Holistic InfoNCE only.
    Holistic,
    /// Patch InfoNCE only.
    Patch,
    /// Sum of both.
    Joint,
}

pub struct GradCase {
    pub params: EncoderParams,
    pub batch: Array2<f64>,
    pub labels: Vec<usize>,
    pub memory: CentroidMemory,
    pub objective: Objective,
    pub mode: Mode,
}

/// Random encoder, batch, memory and objective with every dimension ≤ 8 and batch ≤ 6.
pub fn random_grad_case(seed: u64) -> GradCase {
    let mut r = rng(seed);
    let arch = Architecture {
        input_dim: r.random_range(1..=8),
        hidden_dim: r.random_range(1..=8),
        embed_dim: r.random_range(2..=8),
        parts: r.random_range(1..=3),
        ..Architecture::default()
    };
    let mut params = EncoderParams::init(arch, &mut r).unwrap();
    // Move BN and head parameters away from their initial values so every
    // term of the gradient is exercised.
    let mut values = params.as_flat().to_vec();
    let layout = params.layout();
    for range in layout.specialized_ranges() {
        for v in &mut values[range] {
            *v += r.random_range(-0.3..0.3);
        }
    }
    for range in layout.running_stat_ranges() {
        for v in &mut values[range] {
            *v = v.abs() + 0.5;
        }
    }
    for v in &mut values[layout.heads[0].weight.start..] {
        *v += r.random_range(-0.2..0.2);
    }
    params = EncoderParams::from_flat(arch, values).unwrap();

    let b = r.random_range(2..=6);
    let batch = gaussian_matrix(&mut r, b, arch.record_dim());
    let m = r.random_range(1..=4);
    let labels: Vec<usize> = (0..b).map(|_| r.random_range(0..m)).collect();
    let holistic = unit_rows(gaussian_matrix(&mut r, m, arch.embed_dim));
    let patches: Vec<Array2<f64>> = (0..arch.parts)
        .map(|_| unit_rows(gaussian_matrix(&mut r, m, arch.embed_dim)))
        .collect();
    let identity = ClusterAssignment::new((0..m).map(Some).collect(), m).unwrap();
    let views: Vec<_> = patches.iter().map(|p| p.view()).collect();
    let tau = [0.05, 0.1, 0.5, 1.0][r.random_range(0..4)];
    let memory = CentroidMemory::init(holistic.view(), &views, &identity, MemoryParams { tau, lambda: 0.2 }).unwrap();
    let objective = [Objective::Holistic, Objective::Patch, Objective::Joint][r.random_range(0..3)];
    let mode = if r.random_bool(0.8) { Mode::Train } else { Mode::Eval };
    GradCase {
        params,
        batch,
        labels,
        memory,
        objective,
        mode,
    }
}

fn objective_value(case: &GradCase, params: &EncoderParams) -> f64 {
    let out = forward(params, case.batch.view(), case.mode).unwrap();
    let with_patch = case.objective != Objective::Holistic;
    let bl = contrastive_batch_loss(&out, &case.labels, &case.memory, with_patch).unwrap();
    match case.objective {
        Objective::Holistic => bl.holistic_loss,
        Objective::Patch => bl.patch_loss.unwrap(),
        Objective::Joint => bl.loss,
    }
}

pub fn analytic_gradient(case: &GradCase) -> Vec<f64> {
    let out = forward(&case.params, case.batch.view(), case.mode).unwrap();
    let with_patch = case.objective != Objective::Holistic;
    let bl = contrastive_batch_loss(&out, &case.labels, &case.memory, with_patch).unwrap();
    let zero = Array2::zeros(bl.grad_holistic.dim());
    let gh = if case.objective == Objective::Patch {
        &zero
    } else {
        &bl.grad_holistic
    };
    let gp: Vec<_> = bl.grad_patches.iter().map(|g| g.view()).collect();
    backward(&case.params, &out.cache, gh.view(), &gp).unwrap()
}

pub const FD_STEP: f64 = 1e-5;
/// Denominator floor, relative to the largest gradient entry.
pub const REL_FLOOR: f64 = 1e-6;

/// Largest entry-wise relative error
/// `|a − n| / max(|a|, |n|, REL_FLOOR · (1 + ‖a‖∞))` between analytic and
/// central-difference gradients over trainable entries. The scaled floor keeps
/// structurally zero entries (a bias feeding train-mode batch norm) from
/// dividing pure rounding noise by a tiny number. Running statistics are
/// buffers, not parameters, and are skipped.
pub fn max_relative_error(case: &GradCase) -> f64 {
    let analytic = analytic_gradient(case);
    let mask = case.params.layout().trainable_mask();
    let arch = *case.params.arch();
    let base = case.params.as_flat().to_vec();
    let scale = analytic.iter().fold(0.0f64, |m, g| m.max(g.abs()));
    let floor = REL_FLOOR * (1.0 + scale);
    let mut worst = 0.0f64;
    for (k, &trainable) in mask.iter().enumerate() {
        if !trainable {
            continue;
        }
        let eval_at = |delta: f64| {
            let mut v = base.clone();
            v[k] += delta;
            objective_value(case, &EncoderParams::from_flat(arch, v).unwrap())
        };
        let numeric = (eval_at(FD_STEP) - eval_at(-FD_STEP)) / (2.0 * FD_STEP);
        let a = analytic[k];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(floor);
        worst = worst.max(rel);
    }
    worst
}

// ---------------------------------------------------------------------------
// Clustering
// ---------------------------------------------------------------------------

/// Points on a coarse grid so that distance ties occur.
pub fn random_distance_matrix(rng: &mut impl Rng, n: usize) -> DistanceMatrix {
    let dim = rng.random_range(1..=3);
    let grid = rng.random_range(3..=12) as f64;
    let pts: Vec<Vec<f64>> = (0..n)
        .map(|_| {
            (0..dim)
                .map(|_| rng.random_range(0..=grid as u32) as f64 / grid)
                .collect()
        })
        .collect();
    let mut data = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            data[i * n + j] = pts[i]
                .iter()
                .zip(&pts[j])
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
        }
    }
    DistanceMatrix::new(n, data).unwrap()
}

fn knn_set(d: &DistanceMatrix, i: usize, k: usize) -> BTreeSet<usize> {
    let mut others: Vec<(f64, usize)> = (0..d.len()).filter(|&j| j != i).map(|j| (d.get(i, j), j)).collect();
    others.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
    let mut s: BTreeSet<usize> = others.into_iter().take(k).map(|(_, j)| j).collect();
    s.insert(i);
    s
}

fn reciprocal_set(d: &DistanceMatrix, i: usize, k: usize) -> BTreeSet<usize> {
    knn_set(d, i, k)
        .into_iter()
        .filter(|&j| knn_set(d, j, k).contains(&i))
        .collect()
}

/// Jaccard distance over explicitly materialised expanded reciprocal sets.
pub fn jaccard_oracle(d: &DistanceMatrix, k1: usize) -> Vec<f64> {
    let n = d.len();
    let half = k1.div_ceil(2);
    let expanded: Vec<BTreeSet<usize>> = (0..n)
        .map(|i| {
            let base = reciprocal_set(d, i, k1);
            let mut out = base.clone();
            for &j in &base {
                let cand = reciprocal_set(d, j, half);
                // |R ∩ R_half| ≥ (2/3)|R_half|, in integers.
                if 3 * base.intersection(&cand).count() >= 2 * cand.len() {
                    out.extend(cand);
                }
            }
            out
        })
        .collect();
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            if i != j {
                let inter = expanded[i].intersection(&expanded[j]).count();
                let union = expanded[i].union(&expanded[j]).count();
                out[i * n + j] = 1.0 - inter as f64 / union as f64;
            }
        }
    }
    out
}

fn find(parent: &mut [usize], x: usize) -> usize {
    let mut r = x;
    while parent[r] != r {
        r = parent[r];
    }
    parent[x] = r;
    r
}

/// DBSCAN via union-find over core points, then border assignment to the
/// lowest-index core neighbour and removal of undersized clusters.
pub fn dbscan_oracle(d: &DistanceMatrix, eps: f64, min_samples: usize) -> Vec<Option<usize>> {
    let n = d.len();
    let close = |i: usize, j: usize| d.get(i, j) <= eps;
    let core: Vec<bool> = (0..n)
        .map(|i| (0..n).filter(|&j| close(i, j)).count() >= min_samples)
        .collect();
    let mut parent: Vec<usize> = (0..n).collect();
    for i in 0..n {
        for j in 0..n {
            if core[i] && core[j] && close(i, j) {
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                parent[a.max(b)] = a.min(b);
            }
        }
    }
    // Component of each core point, keyed by its smallest member.
    let roots: Vec<usize> = (0..n).map(|i| find(&mut parent, i)).collect();
    let root: Vec<Option<usize>> = (0..n)
        .map(|i| core[i].then(|| (0..n).find(|&j| core[j] && roots[j] == roots[i]).unwrap()))
        .collect();
    let raw: Vec<Option<usize>> = (0..n)
        .map(|i| {
            if core[i] {
                root[i]
            } else {
                (0..n).find(|&j| core[j] && close(i, j)).and_then(|j| root[j])
            }
        })
        .collect();
    let size = |r: usize| raw.iter().filter(|&&x| x == Some(r)).count();
    let mut kept_roots: Vec<usize> = raw
        .iter()
        .flatten()
        .copied()
        .filter(|&r| size(r) >= min_samples)
        .collect();
    kept_roots.sort_unstable();
    kept_roots.dedup();
    raw.iter()
        .map(|x| x.and_then(|r| kept_roots.iter().position(|&k| k == r)))
        .collect()
}

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

/// Average precision from the definition: for every true match at rank r,
/// precision@r, averaged over matches.
pub fn ap_oracle(matches: &[bool]) -> Option<f64> {
    let positions: Vec<usize> = matches
        .iter()
        .enumerate()
        .filter(|(_, &m)| m)
        .map(|(r, _)| r + 1)
        .collect();
    if positions.is_empty() {
        return None;
    }
    let sum: f64 = positions
        .iter()
        .map(|&r| matches[..r].iter().filter(|&&m| m).count() as f64 / r as f64)
        .sum();
    Some(sum / positions.len() as f64)
}

pub struct RetrievalCase {
    pub query: Array2<f64>,
    pub gallery: Array2<f64>,
    pub query_meta: Vec<ImageMeta>,
    pub gallery_meta: Vec<ImageMeta>,
}

pub fn random_retrieval_case(seed: u64) -> RetrievalCase {
    let mut r = rng(seed);
    let dim = r.random_range(2..=6);
    let ids = r.random_range(2..=6);
    let nq = r.random_range(1..=8);
    let ng = r.random_range(1..=20);
    let meta = |r: &mut ChaCha8Rng| ImageMeta {
        identity_id: r.random_range(0..ids),
        camera_id: r.random_range(0..2),
    };
    let query_meta: Vec<ImageMeta> = (0..nq).map(|_| meta(&mut r)).collect();
    let gallery_meta: Vec<ImageMeta> = (0..ng).map(|_| meta(&mut r)).collect();
    let query = unit_rows(gaussian_matrix(&mut r, nq, dim));
    let mut gallery = unit_rows(gaussian_matrix(&mut r, ng, dim));
    // Exact duplicates produce similarity ties.
    for g in 1..ng {
        if r.random_bool(0.3) {
            let src = r.random_range(0..g);
            let row = gallery.row(src).to_owned();
            gallery.row_mut(g).assign(&row);
        }
    }
    RetrievalCase {
        query,
        gallery,
        query_meta,
        gallery_meta,
    }
}

/// Reference ranking for one query: filter, then stable sort by descending similarity.
pub fn naive_ranking(case: &RetrievalCase, q: usize) -> Vec<usize> {
    let qm = case.query_meta[q];
    let sims: Vec<f64> = case
        .gallery
        .rows()
        .into_iter()
        .map(|g| g.dot(&case.query.row(q)))
        .collect();
    let mut order: Vec<usize> = (0..case.gallery_meta.len())
        .filter(|&g| {
            !(case.gallery_meta[g].identity_id == qm.identity_id && case.gallery_meta[g].camera_id == qm.camera_id)
        })
        .collect();
    // Insertion sort: obviously stable, so ties keep index order.
    for i in 1..order.len() {
        let mut j = i;
        while j > 0 && sims[order[j - 1]] < sims[order[j]] {
            order.swap(j - 1, j);
            j -= 1;
        }
    }
    order
}

/// Pairwise precision/recall/F1 by enumerating every unordered pair.
pub fn cluster_quality_oracle(labels: &[Option<usize>], ids: &[usize]) -> (f64, f64, f64) {
    let (mut tp, mut pred, mut actual) = (0u64, 0u64, 0u64);
    for i in 0..labels.len() {
        for j in (i + 1)..labels.len() {
            let same_cluster = matches!((labels[i], labels[j]), (Some(a), Some(b)) if a == b);
            let same_id = ids[i] == ids[j];
            pred += u64::from(same_cluster);
            actual += u64::from(same_id);
            tp += u64::from(same_cluster && same_id);
        }
    }
    let p = if pred == 0 { 1.0 } else { tp as f64 / pred as f64 };
    let r = if actual == 0 { 1.0 } else { tp as f64 / actual as f64 };
    let f = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
    (p, r, f)
}

// ---------------------------------------------------------------------------
// Runs
// ---------------------------------------------------------------------------

/// A run small enough for debug-speed integration tests.
pub fn tiny_config(seed: u64) -> fedcc::config::RunConfig {
    let mut cfg = fedcc::config::RunConfig::default().with_seed(seed);
    cfg.data.clients = 3;
    cfg.data.identities_per_client = 6;
    cfg.data.eval_identities_per_client = 4;
    cfg.data.images_per_identity = 8;
    cfg.data.input_dim = 6;
    cfg.model.hidden_dim = 8;
    cfg.model.embed_dim = 6;
    cfg.clustering.k1 = 6;
    cfg.optimizer.batch_size = 16;
    cfg.rounds_override = Some(2);
    cfg
}

pub fn bits(v: &[f64]) -> Vec<u64> {
    v.iter().map(|x| x.to_bits()).collect()
}

/// Checks the redistribution invariants at every round boundary.
#[derive(Default)]
pub struct BoundaryChecker {
    pub boundaries: usize,
    pub violations: Vec<String>,
}

impl TrainingObserver for BoundaryChecker {
    fn on_redistribute(&mut self, stage: StageId, round: usize, before: &[EncoderParams], after: &[EncoderParams]) {
        self.boundaries += 1;
        match stage {
            StageId::I | StageId::Backbone => {
                if after.iter().any(|p| bits(p.as_flat()) != bits(after[0].as_flat())) {
                    self.violations.push(format!(
                        "{stage} round {round}: clients differ after full redistribution"
                    ));
                }
            }
            StageId::II | StageId::III => {
                for (k, (b, a)) in before.iter().zip(after).enumerate() {
                    if bits(&b.partition().specialized) != bits(&a.partition().specialized) {
                        self.violations
                            .push(format!("{stage} round {round}: client {k} batch-norm state changed"));
                    }
                    if bits(&a.partition().generic) != bits(&after[0].partition().generic) {
                        self.violations
                            .push(format!("{stage} round {round}: client {k} generic differs"));
                    }
                }
            }
        }
    }
}
