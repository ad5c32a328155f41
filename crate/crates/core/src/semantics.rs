//! Unsupervised semantic label inference.
//!
//! Fuzzy c-means on the magnitude image produces an initial clustering;
//! clusters are mapped to semantic labels by their mean magnitudes; ICM
//! then minimizes the pairwise-MRF energy in a seeded random site order.
//! Axis convention: row index increases down-range, so a shadow sits at
//! smaller row indices than its target.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{CoreError, Result};
use crate::features::SemanticFeatures;
use crate::math::{ln_gamma, sorted_quantile};
use crate::model::ComplexImage;
use crate::scalar::Scalar;

/// Per-pixel semantic label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[repr(u8)]
pub enum Label {
    Shadow = 0,
    Background = 1,
    Target = 2,
}

impl Label {
    pub const ALL: [Label; 3] = [Label::Shadow, Label::Background, Label::Target];

    pub fn from_u8(v: u8) -> Result<Label> {
        match v {
            0 => Ok(Label::Shadow),
            1 => Ok(Label::Background),
            2 => Ok(Label::Target),
            _ => Err(CoreError::Format(format!("bad label byte {v}"))),
        }
    }
}

/// Dense per-pixel label grid.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    rows: usize,
    cols: usize,
    labels: Vec<Label>,
}

impl LabelMap {
    pub fn new(rows: usize, cols: usize, labels: Vec<Label>) -> Result<Self> {
        if rows == 0 || cols == 0 || labels.len() != rows * cols {
            return Err(CoreError::InvalidInput("bad label map shape".into()));
        }
        Ok(Self { rows, cols, labels })
    }

    pub fn filled(rows: usize, cols: usize, label: Label) -> Self {
        Self {
            rows,
            cols,
            labels: vec![label; rows * cols],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[Label] {
        &self.labels
    }

    pub fn get(&self, r: usize, c: usize) -> Label {
        self.labels[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, l: Label) {
        self.labels[r * self.cols + c] = l;
    }

    pub fn count(&self, label: Label) -> usize {
        self.labels.iter().filter(|&&l| l == label).count()
    }
}

/// ICM / MRF parameters.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct MrfConfig {
    /// Smoothness weight of the pairwise term.
    pub beta: f64,
    pub max_sweeps: usize,
    /// Stop when fewer than this fraction of sites changed in a sweep.
    pub stop_changed_fraction: f64,
    pub seed: u64,
}

impl Default for MrfConfig {
    fn default() -> Self {
        Self {
            beta: 1.0,
            max_sweeps: 20,
            stop_changed_fraction: 1e-3,
            seed: 0,
        }
    }
}

/// Target-size bounds in pixels, derived from physical size and resolution.
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct SizePrior {
    pub min_area: usize,
    pub max_area: usize,
}

impl SizePrior {
    pub fn new(min_area: usize, max_area: usize) -> Result<Self> {
        if min_area == 0 || min_area > max_area {
            return Err(CoreError::InvalidInput(
                "need 0 < min_area <= max_area".into(),
            ));
        }
        Ok(Self { min_area, max_area })
    }
}

/// Relative placement of the pair (s, t) for the directional potential.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Orientation {
    /// Same row.
    Horizontal,
    /// Site s has the smaller row index (s sits up-range of t).
    SAboveT,
    /// Site s has the larger row index.
    SBelowT,
}

// rows index y_s, columns index y_t, class order (shadow, background, target)
const POT_HORIZONTAL: [[u8; 3]; 3] = [[0, 1, 1], [1, 0, 1], [1, 1, 0]];
const POT_S_ABOVE_T: [[u8; 3]; 3] = [[0, 2, 1], [1, 0, 2], [2, 1, 0]];
const POT_S_BELOW_T: [[u8; 3]; 3] = [[0, 1, 2], [2, 0, 1], [1, 2, 0]];

/// Directional pairwise potential; zero iff the labels agree, larger for
/// pairs violating the target-beneath-shadow co-occurrence rule.
pub fn pairwise_potential(y_s: Label, y_t: Label, orientation: Orientation) -> u8 {
    let table = match orientation {
        Orientation::Horizontal => &POT_HORIZONTAL,
        Orientation::SAboveT => &POT_S_ABOVE_T,
        Orientation::SBelowT => &POT_S_BELOW_T,
    };
    table[y_s as usize][y_t as usize]
}

/// Table structure sanity: horizontal symmetry and the two vertical tables
/// being transposes of each other. Cheap, run once by callers that care.
pub fn validate_potential_tables() {
    for a in Label::ALL {
        for b in Label::ALL {
            assert_eq!(
                pairwise_potential(a, b, Orientation::Horizontal),
                pairwise_potential(b, a, Orientation::Horizontal)
            );
            assert_eq!(
                pairwise_potential(a, b, Orientation::SAboveT),
                pairwise_potential(b, a, Orientation::SBelowT)
            );
            assert_eq!(pairwise_potential(a, a, Orientation::Horizontal), 0);
            assert_eq!(pairwise_potential(a, a, Orientation::SAboveT), 0);
        }
    }
}

/// Fuzzy c-means result on the scalar magnitude image.
#[derive(Debug, Clone)]
pub struct FcmResult<T: Scalar> {
    /// Row-major memberships, `n_pixels x n_clusters`.
    pub memberships: Vec<T>,
    /// Crisp argmax cluster index per pixel.
    pub crisp: Vec<usize>,
    pub centroids: Vec<T>,
    pub n_clusters: usize,
}

/// Standard FCM on scalar magnitudes with quantile-seeded centroids
/// ({10, 50, 90}% for three clusters, {10, 90}% for two).
pub fn fcm_cluster<T: Scalar>(
    magnitudes: &[T],
    n_clusters: usize,
    fuzzifier: f64,
    tol: f64,
    max_iter: usize,
    _seed: u64,
) -> Result<FcmResult<T>> {
    if !(2..=3).contains(&n_clusters) {
        return Err(CoreError::InvalidInput("need 2 or 3 clusters".into()));
    }
    if magnitudes.is_empty() || !magnitudes.iter().all(|v| v.is_finite() && *v >= T::zero()) {
        return Err(CoreError::InvalidInput(
            "magnitudes must be finite and nonnegative".into(),
        ));
    }
    let mut sorted = magnitudes.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let spread = *sorted.last().unwrap() - sorted[0];
    if spread <= T::zero() {
        return Err(CoreError::DegenerateInput(
            "all magnitudes equal; clustering undefined".into(),
        ));
    }

    let quantiles: &[f64] = if n_clusters == 2 {
        &[0.1, 0.9]
    } else {
        &[0.1, 0.5, 0.9]
    };
    let mut centroids: Vec<T> = quantiles
        .iter()
        .map(|&q| sorted_quantile(&sorted, q))
        .collect();
    // keep seeds distinct on skewed data
    for i in 1..centroids.len() {
        let floor = centroids[i - 1] + spread * T::of_f64(1e-9);
        if centroids[i] <= floor {
            centroids[i] = floor;
        }
    }

    let n = magnitudes.len();
    let c = n_clusters;
    let expo = 2.0 / (fuzzifier - 1.0);
    let mut memberships = vec![T::zero(); n * c];
    let mut prev_obj = f64::INFINITY;

    for _ in 0..max_iter {
        // membership update
        for (p, &x) in magnitudes.iter().enumerate() {
            let dists: Vec<T> = centroids.iter().map(|&v| (x - v).abs()).collect();
            if let Some(zero_at) = dists.iter().position(|d| *d == T::zero()) {
                for j in 0..c {
                    memberships[p * c + j] = if j == zero_at { T::one() } else { T::zero() };
                }
                continue;
            }
            for j in 0..c {
                let mut denom = T::zero();
                for k in 0..c {
                    denom += T::of_f64((dists[j] / dists[k]).as_f64().powf(expo));
                }
                memberships[p * c + j] = T::one() / denom;
            }
        }
        // centroid update
        for j in 0..c {
            let mut num = T::zero();
            let mut den = T::zero();
            for (p, &x) in magnitudes.iter().enumerate() {
                let um = T::of_f64(memberships[p * c + j].as_f64().powf(fuzzifier));
                num += um * x;
                den += um;
            }
            if den > T::zero() {
                centroids[j] = num / den;
            }
        }
        // objective
        let mut obj = 0.0f64;
        for (p, &x) in magnitudes.iter().enumerate() {
            for j in 0..c {
                let d = (x - centroids[j]).as_f64();
                obj += memberships[p * c + j].as_f64().powf(fuzzifier) * d * d;
            }
        }
        if (prev_obj - obj).abs() <= tol * prev_obj.abs().max(1e-300) {
            prev_obj = obj;
            break;
        }
        prev_obj = obj;
    }
    let _ = prev_obj;

    let crisp = (0..n)
        .map(|p| {
            (0..c)
                .max_by(|&a, &b| {
                    memberships[p * c + a]
                        .partial_cmp(&memberships[p * c + b])
                        .unwrap()
                })
                .unwrap()
        })
        .collect();
    Ok(FcmResult {
        memberships,
        crisp,
        centroids,
        n_clusters: c,
    })
}

/// Map cluster indices to semantic labels: largest mean magnitude becomes
/// Target, smallest Shadow, the remainder Background. Ties break by
/// variance, then by lower cluster index. With two clusters the larger
/// mean is Target and the other Background.
pub fn assign_semantic_labels<T: Scalar>(
    crisp: &[usize],
    n_clusters: usize,
    magnitudes: &[T],
    rows: usize,
    cols: usize,
) -> Result<LabelMap> {
    if crisp.len() != magnitudes.len() || crisp.len() != rows * cols {
        return Err(CoreError::InvalidInput("cluster/shape mismatch".into()));
    }
    let mut count = vec![0usize; n_clusters];
    let mut sum = vec![0.0f64; n_clusters];
    let mut sum2 = vec![0.0f64; n_clusters];
    for (&j, &x) in crisp.iter().zip(magnitudes) {
        let xf = x.as_f64();
        count[j] += 1;
        sum[j] += xf;
        sum2[j] += xf * xf;
    }
    let stats: Vec<(f64, f64)> = (0..n_clusters)
        .map(|j| {
            if count[j] == 0 {
                (f64::NEG_INFINITY, 0.0)
            } else {
                let mean = sum[j] / count[j] as f64;
                (mean, sum2[j] / count[j] as f64 - mean * mean)
            }
        })
        .collect();
    // ascending by (mean, variance, index)
    let mut order: Vec<usize> = (0..n_clusters).collect();
    order.sort_by(|&a, &b| {
        stats[a]
            .0
            .partial_cmp(&stats[b].0)
            .unwrap()
            .then(stats[a].1.partial_cmp(&stats[b].1).unwrap())
            .then(a.cmp(&b))
    });
    let mut mapping = vec![Label::Background; n_clusters];
    if n_clusters == 2 {
        mapping[order[0]] = Label::Background;
        mapping[order[1]] = Label::Target;
    } else {
        mapping[order[0]] = Label::Shadow;
        mapping[order[1]] = Label::Background;
        mapping[order[2]] = Label::Target;
    }
    let labels = crisp.iter().map(|&j| mapping[j]).collect();
    LabelMap::new(rows, cols, labels)
}

fn unary_energy<T: Scalar>(
    features: &SemanticFeatures<T>,
    label: Label,
    mag_eps: T,
) -> Result<f64> {
    let f = features.get(label)?;
    let a = f.shape.as_f64();
    let b = f.scale.as_f64();
    let g = mag_eps.as_f64();
    Ok(ln_gamma(a) + a * b.ln() - a * g.ln() + g / b)
}

/// Total MRF energy of a labeling (unary + beta * pairwise over the
/// 4-neighborhood, each undirected edge counted once).
pub fn total_energy<T: Scalar>(
    g: &ComplexImage<T>,
    features: &SemanticFeatures<T>,
    labels: &LabelMap,
    beta: f64,
    eps: T,
) -> Result<f64> {
    let mut e = 0.0;
    for r in 0..labels.rows() {
        for c in 0..labels.cols() {
            let y = labels.get(r, c);
            let mag = g.get(r, c).norm() + eps;
            e += unary_energy(features, y, mag)?;
            if c + 1 < labels.cols() {
                e += beta
                    * pairwise_potential(y, labels.get(r, c + 1), Orientation::Horizontal) as f64;
            }
            if r + 1 < labels.rows() {
                // this site is above its down-range neighbor
                e +=
                    beta * pairwise_potential(y, labels.get(r + 1, c), Orientation::SAboveT) as f64;
            }
        }
    }
    Ok(e)
}

/// ICM: greedy per-site minimization of the label posterior energy over
/// the 4-neighborhood, sweeping sites in a fresh seeded random order until
/// fewer than `stop_changed_fraction` of sites change or `max_sweeps`.
///
/// Candidate labels are those carried by `features` (two or three classes).
pub fn icm_infer<T: Scalar>(
    g: &ComplexImage<T>,
    features: &SemanticFeatures<T>,
    init: &LabelMap,
    cfg: &MrfConfig,
    eps: T,
) -> Result<LabelMap> {
    if init.rows() != g.rows() || init.cols() != g.cols() {
        return Err(CoreError::ShapeMismatch {
            expected_rows: g.rows(),
            expected_cols: g.cols(),
            rows: init.rows(),
            cols: init.cols(),
        });
    }
    if !(cfg.beta >= 0.0) {
        return Err(CoreError::InvalidInput("beta must be >= 0".into()));
    }
    let candidates = features.classes();
    // precompute unary energies per class
    let mut unary = vec![0.0f64; g.len() * 3];
    for (i, z) in g.as_slice().iter().enumerate() {
        for &label in &candidates {
            unary[i * 3 + label as usize] = unary_energy(features, label, z.norm() + eps)?;
        }
    }

    let (rows, cols) = (g.rows(), g.cols());
    let n = rows * cols;
    let mut labels = init.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..n).collect();
    let threshold = (cfg.stop_changed_fraction * n as f64).max(0.0);

    for _ in 0..cfg.max_sweeps {
        order.shuffle(&mut rng);
        let mut changed = 0usize;
        for &site in &order {
            let (r, c) = (site / cols, site % cols);
            let current = labels.get(r, c);
            let mut best = current;
            // local energy including all incident edges, this site as y_s
            let mut best_e = site_energy(&labels, &unary, cfg.beta, r, c, current, cols, rows);
            for &cand in &candidates {
                if cand == current {
                    continue;
                }
                let e = site_energy(&labels, &unary, cfg.beta, r, c, cand, cols, rows);
                if e < best_e {
                    best_e = e;
                    best = cand;
                }
            }
            if best != current {
                labels.set(r, c, best);
                changed += 1;
            }
        }
        if (changed as f64) < threshold || changed == 0 {
            break;
        }
    }
    Ok(labels)
}

#[allow(clippy::too_many_arguments)]
fn site_energy(
    labels: &LabelMap,
    unary: &[f64],
    beta: f64,
    r: usize,
    c: usize,
    y: Label,
    cols: usize,
    rows: usize,
) -> f64 {
    let mut e = unary[(r * cols + c) * 3 + y as usize];
    if c > 0 {
        e += beta * pairwise_potential(y, labels.get(r, c - 1), Orientation::Horizontal) as f64;
    }
    if c + 1 < cols {
        e += beta * pairwise_potential(y, labels.get(r, c + 1), Orientation::Horizontal) as f64;
    }
    if r > 0 {
        // neighbor above: this site is below it
        e += beta * pairwise_potential(y, labels.get(r - 1, c), Orientation::SBelowT) as f64;
    }
    if r + 1 < rows {
        e += beta * pairwise_potential(y, labels.get(r + 1, c), Orientation::SAboveT) as f64;
    }
    e
}

/// Relabel 4-connected Target components whose area falls outside the size
/// prior as Background; Shadow is untouched. Idempotent.
pub fn refine_by_size(labels: &LabelMap, prior: &SizePrior) -> LabelMap {
    let (rows, cols) = (labels.rows(), labels.cols());
    let mut out = labels.clone();
    let mut seen = vec![false; rows * cols];
    let mut stack = Vec::new();
    let mut component = Vec::new();
    for start in 0..rows * cols {
        if seen[start] || labels.as_slice()[start] != Label::Target {
            continue;
        }
        component.clear();
        stack.push(start);
        seen[start] = true;
        while let Some(site) = stack.pop() {
            component.push(site);
            let (r, c) = (site / cols, site % cols);
            let mut push = |nr: usize, nc: usize| {
                let ns = nr * cols + nc;
                if !seen[ns] && labels.as_slice()[ns] == Label::Target {
                    seen[ns] = true;
                    stack.push(ns);
                }
            };
            if r > 0 {
                push(r - 1, c);
            }
            if r + 1 < rows {
                push(r + 1, c);
            }
            if c > 0 {
                push(r, c - 1);
            }
            if c + 1 < cols {
                push(r, c + 1);
            }
        }
        if component.len() < prior.min_area || component.len() > prior.max_area {
            for &site in &component {
                out.labels[site] = Label::Background;
            }
        }
    }
    out
}

/// Shadow occupancy below this fraction collapses clustering to two classes.
pub const SHADOW_OCCUPANCY_FLOOR: f64 = 0.005;

/// Decide the cluster count for the next labeling round: two classes once
/// the iteration threshold is reached or the shadow class has emptied out.
pub fn collapse_check(labels: &LabelMap, k: usize, k_switch: usize) -> usize {
    if k >= k_switch {
        return 2;
    }
    let shadow = labels.count(Label::Shadow) as f64;
    if (shadow / (labels.rows() * labels.cols()) as f64) < SHADOW_OCCUPANCY_FLOOR {
        2
    } else {
        3
    }
}
