//! Reconstruction quality metrics and the baseline imaging algorithms
//! used for comparison.

use num_complex::Complex;

use crate::error::{CoreError, Result};
use crate::math::stage_seed;
use crate::model::{
    make_mask, measurement_adjoint, measurement_forward, ComplexImage, MaskKind, MeasurementVector,
    NoiseSpec, SamplingMask,
};
use crate::pipeline::{tar_imaging, PipelineConfig};
use crate::scalar::Scalar;
use crate::semantics::{Label, LabelMap};
use crate::solver::{
    adjoint_init, fista_weighted_l1, irw_l1, magnitude_weights, SolverConfig, WeightMatrix,
};

/// Metrics of one reconstruction against truth labels.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct MetricReport {
    pub ptcr_db: f64,
    pub avg_target_intensity: f64,
    /// Target-pixel recall of a predicted label map; absent for
    /// algorithms that produce no labels.
    pub recall: Option<f64>,
    pub precision: Option<f64>,
}

/// Peak target-to-clutter ratio in dB: the peak target magnitude over the
/// mean non-target magnitude. Infinite when the clutter sum is zero.
pub fn ptcr<T: Scalar>(g: &ComplexImage<T>, truth: &LabelMap) -> Result<f64> {
    if truth.rows() != g.rows() || truth.cols() != g.cols() {
        return Err(CoreError::ShapeMismatch {
            expected_rows: g.rows(),
            expected_cols: g.cols(),
            rows: truth.rows(),
            cols: truth.cols(),
        });
    }
    let mut peak = f64::NEG_INFINITY;
    let mut clutter = 0.0;
    let mut n_nt = 0usize;
    let mut n_t = 0usize;
    for (z, &label) in g.as_slice().iter().zip(truth.as_slice()) {
        let mag = z.norm().as_f64();
        if label == Label::Target {
            peak = peak.max(mag);
            n_t += 1;
        } else {
            clutter += mag;
            n_nt += 1;
        }
    }
    if n_t == 0 || n_nt == 0 {
        return Err(CoreError::InvalidInput(
            "need at least one target and one non-target pixel".into(),
        ));
    }
    if clutter == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(20.0 * (n_nt as f64 * peak / clutter).log10())
}

/// Average target intensity chi_t = ||g_t||^2 / N_t.
pub fn avg_target_intensity<T: Scalar>(g: &ComplexImage<T>, truth: &LabelMap) -> Result<f64> {
    if truth.rows() != g.rows() || truth.cols() != g.cols() {
        return Err(CoreError::ShapeMismatch {
            expected_rows: g.rows(),
            expected_cols: g.cols(),
            rows: truth.rows(),
            cols: truth.cols(),
        });
    }
    let mut sum = 0.0;
    let mut n = 0usize;
    for (z, &label) in g.as_slice().iter().zip(truth.as_slice()) {
        if label == Label::Target {
            sum += z.norm_sqr().as_f64();
            n += 1;
        }
    }
    if n == 0 {
        return Err(CoreError::InvalidInput("no target pixels in truth".into()));
    }
    Ok(sum / n as f64)
}

/// Target-pixel recall and precision of a predicted label map.
pub fn target_recall_precision(pred: &LabelMap, truth: &LabelMap) -> Result<(f64, f64)> {
    if pred.rows() != truth.rows() || pred.cols() != truth.cols() {
        return Err(CoreError::ShapeMismatch {
            expected_rows: truth.rows(),
            expected_cols: truth.cols(),
            rows: pred.rows(),
            cols: pred.cols(),
        });
    }
    let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
    for (&p, &t) in pred.as_slice().iter().zip(truth.as_slice()) {
        match (p == Label::Target, t == Label::Target) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            _ => {}
        }
    }
    let recall = if tp + fn_ == 0 {
        0.0
    } else {
        tp as f64 / (tp + fn_) as f64
    };
    let precision = if tp + fp == 0 {
        0.0
    } else {
        tp as f64 / (tp + fp) as f64
    };
    Ok((recall, precision))
}

/// Polar-format baseline: the zero-filled adjoint image.
pub fn pf_imaging<T: Scalar>(m: &MeasurementVector<T>) -> Result<ComplexImage<T>> {
    measurement_adjoint(m)
}

/// Point-enhancement baseline: plain l1 (all-ones weights) via FISTA.
pub fn poi_imaging<T: Scalar>(
    m: &MeasurementVector<T>,
    mask: &SamplingMask,
    cfg: &SolverConfig,
) -> Result<ComplexImage<T>> {
    let init = adjoint_init(m)?;
    let w = WeightMatrix::ones(init.rows(), init.cols());
    let (g, _) = fista_weighted_l1(m, mask, &w, cfg, &init)?;
    Ok(g)
}

/// Smoothed isotropic TV applied to the complex field.
fn tv_value<T: Scalar>(g: &ComplexImage<T>, eps_tv: f64) -> f64 {
    let (rows, cols) = (g.rows(), g.cols());
    let e2 = eps_tv * eps_tv;
    let mut total = 0.0;
    for r in 0..rows {
        for c in 0..cols {
            let v = g.get(r, c);
            let dh = if c + 1 < cols {
                g.get(r, c + 1) - v
            } else {
                Complex::new(T::zero(), T::zero())
            };
            let dv = if r + 1 < rows {
                g.get(r + 1, c) - v
            } else {
                Complex::new(T::zero(), T::zero())
            };
            total += (dh.norm_sqr().as_f64() + dv.norm_sqr().as_f64() + e2).sqrt();
        }
    }
    total
}

fn tv_gradient<T: Scalar>(g: &ComplexImage<T>, eps_tv: f64) -> ComplexImage<T> {
    let (rows, cols) = (g.rows(), g.cols());
    let e2 = eps_tv * eps_tv;
    let zero = Complex::new(T::zero(), T::zero());
    // per-site forward differences and the smoothed gradient norm
    let mut dh = vec![zero; rows * cols];
    let mut dv = vec![zero; rows * cols];
    let mut den = vec![T::one(); rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            let i = r * cols + c;
            let v = g.get(r, c);
            if c + 1 < cols {
                dh[i] = g.get(r, c + 1) - v;
            }
            if r + 1 < rows {
                dv[i] = g.get(r + 1, c) - v;
            }
            den[i] = (dh[i].norm_sqr() + dv[i].norm_sqr() + T::of_f64(e2)).sqrt();
        }
    }
    let mut grad = ComplexImage::zeros(rows, cols);
    for r in 0..rows {
        for c in 0..cols {
            let i = r * cols + c;
            let mut acc = -(dh[i] + dv[i]) / den[i];
            if c > 0 {
                acc += dh[i - 1] / den[i - 1];
            }
            if r > 0 {
                acc += dv[i - cols] / den[i - cols];
            }
            grad.set(r, c, acc);
        }
    }
    grad
}

/// Region-smoothness baseline: gradient descent on
/// 1/(2 lambda) ||r - Phi A G||^2 + TV_eps(G), backtracking on the step
/// so the objective trace is non-increasing.
pub fn reg_imaging<T: Scalar>(
    m: &MeasurementVector<T>,
    mask: &SamplingMask,
    lambda: f64,
    eps_tv_rel: f64,
    iters: usize,
) -> Result<ComplexImage<T>> {
    if !(lambda > 0.0) || !(eps_tv_rel > 0.0) || iters == 0 {
        return Err(CoreError::InvalidInput(
            "lambda, eps_tv and iters must be positive".into(),
        ));
    }
    let mut g = adjoint_init(m)?;
    let eps_tv = eps_tv_rel * g.max_magnitude().as_f64().max(1e-300);

    let objective = |x: &ComplexImage<T>| -> Result<f64> {
        let meas = measurement_forward(x, mask)?;
        let res: f64 = meas
            .values()
            .iter()
            .zip(m.values())
            .map(|(a, b)| (a - b).norm_sqr().as_f64())
            .sum();
        Ok(res / (2.0 * lambda) + tv_value(x, eps_tv))
    };

    // fidelity gradient is 1/lambda-Lipschitz (unit operator norm);
    // the smoothed TV gradient is ~8/eps_tv-Lipschitz
    let mut step = 1.0 / (1.0 / lambda + 8.0 / eps_tv);
    let mut obj = objective(&g)?;
    for _ in 0..iters {
        let meas = measurement_forward(&g, mask)?;
        let mut resid = meas;
        for (v, b) in resid.values_mut().iter_mut().zip(m.values()) {
            *v -= *b;
        }
        let fid_grad = measurement_adjoint(&MeasurementVector::new(
            resid.values().to_vec(),
            mask.clone(),
        )?)?;
        let tv_grad = tv_gradient(&g, eps_tv);
        let inv_lambda = T::of_f64(1.0 / lambda);

        let mut accepted = false;
        for _ in 0..30 {
            let s = T::of_f64(step);
            let mut cand = g.clone();
            for ((x, fg), tg) in cand
                .as_mut_slice()
                .iter_mut()
                .zip(fid_grad.as_slice())
                .zip(tv_grad.as_slice())
            {
                *x -= (fg * inv_lambda + *tg) * s;
            }
            let cand_obj = objective(&cand)?;
            if cand_obj <= obj {
                if (obj - cand_obj).abs() <= 1e-10 * obj.abs().max(1.0) {
                    return Ok(cand);
                }
                g = cand;
                obj = cand_obj;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            // no descent direction at machine precision: stationary
            break;
        }
    }
    if !g.is_finite() {
        return Err(CoreError::SolverFailure {
            reason: "TV gradient descent diverged".into(),
            trace: vec![obj],
        });
    }
    Ok(g)
}

/// Standard magnitude-reweighted IRW-l1 baseline.
pub fn std_irw_l1<T: Scalar>(
    m: &MeasurementVector<T>,
    mask: &SamplingMask,
    cfg: &SolverConfig,
) -> Result<ComplexImage<T>> {
    let init = adjoint_init(m)?;
    let weight_fn = |g: &ComplexImage<T>, eps: T| magnitude_weights(g, eps);
    let (g, _) = irw_l1(m, mask, &weight_fn, cfg, &init)?;
    Ok(g)
}

/// Algorithms available to the comparison sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Pf,
    Poi,
    Reg,
    IrwL1,
    Tar,
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Pf => "pf",
            Algorithm::Poi => "poi",
            Algorithm::Reg => "reg",
            Algorithm::IrwL1 => "irwl1",
            Algorithm::Tar => "tar",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "pf" => Ok(Algorithm::Pf),
            "poi" => Ok(Algorithm::Poi),
            "reg" => Ok(Algorithm::Reg),
            "irwl1" => Ok(Algorithm::IrwL1),
            "tar" => Ok(Algorithm::Tar),
            other => Err(CoreError::InvalidInput(format!(
                "unknown algorithm {other}"
            ))),
        }
    }
}

/// One sampling configuration of the sweep grid.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct MaskSpec {
    pub kind: MaskKind,
    pub eta: f64,
    pub eta_c: f64,
    pub eta_r: f64,
}

impl MaskSpec {
    pub fn build(&self, rows: usize, cols: usize, seed: u64) -> Result<SamplingMask> {
        let first = match self.kind {
            MaskKind::Mask1 => self.eta,
            MaskKind::Mask2 | MaskKind::Mask3 => self.eta_c,
        };
        make_mask(self.kind, rows, cols, first, self.eta_r, seed)
    }
}

pub const CSV_HEADER: &str =
    "scene,algorithm,mask_kind,eta,eta_c,eta_r,ptcr_db,chi_t,recall,precision";

/// One CSV data row of the comparison table.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct CompareRow {
    pub scene: String,
    pub algorithm: &'static str,
    pub mask_kind: MaskKind,
    pub eta: f64,
    pub eta_c: f64,
    pub eta_r: f64,
    pub ptcr_db: f64,
    pub chi_t: f64,
    pub recall: Option<f64>,
    pub precision: Option<f64>,
}

impl CompareRow {
    pub fn to_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| format!("{x}")).unwrap_or_default();
        format!(
            "{},{},{},{},{},{},{},{},{},{}",
            self.scene,
            self.algorithm,
            self.mask_kind.name(),
            self.eta,
            self.eta_c,
            self.eta_r,
            self.ptcr_db,
            self.chi_t,
            opt(self.recall),
            opt(self.precision),
        )
    }
}

/// Run one algorithm on one measurement; labels only come from Tar.
pub fn run_algorithm<T: Scalar>(
    algo: Algorithm,
    m: &MeasurementVector<T>,
    mask: &SamplingMask,
    solver: &SolverConfig,
    pipeline: &PipelineConfig,
) -> Result<(ComplexImage<T>, Option<LabelMap>)> {
    match algo {
        Algorithm::Pf => Ok((pf_imaging(m)?, None)),
        Algorithm::Poi => Ok((poi_imaging(m, mask, solver)?, None)),
        Algorithm::Reg => Ok((reg_imaging(m, mask, solver.lambda, 1e-3, 500)?, None)),
        Algorithm::IrwL1 => Ok((std_irw_l1(m, mask, solver)?, None)),
        Algorithm::Tar => {
            let run = tar_imaging(m, mask, pipeline, None)?;
            Ok((run.image, Some(run.labels)))
        }
    }
}

/// Grid comparison across scenes, masks and algorithms; one row per cell.
pub fn compare_table<T: Scalar>(
    scenes: &[(String, ComplexImage<T>, LabelMap)],
    masks: &[MaskSpec],
    algorithms: &[Algorithm],
    noise: NoiseSpec,
    solver: &SolverConfig,
    pipeline: &PipelineConfig,
    seed: u64,
) -> Result<Vec<CompareRow>> {
    let mut rows = Vec::new();
    for (si, (name, scene, truth)) in scenes.iter().enumerate() {
        for (mi, spec) in masks.iter().enumerate() {
            let cell = (si * masks.len() + mi) as u32;
            let mask = spec.build(scene.rows(), scene.cols(), stage_seed(seed, cell, "mask"))?;
            let m = crate::datagen::simulate_acquisition(
                scene,
                &mask,
                noise,
                stage_seed(seed, cell, "noise"),
            )?;
            let mut cell_pipeline = pipeline.clone();
            cell_pipeline.seed = stage_seed(seed, cell, "pipeline");
            for &algo in algorithms {
                let (g, labels) = run_algorithm(algo, &m, &mask, solver, &cell_pipeline)?;
                let (recall, precision) = match &labels {
                    Some(l) => {
                        let (r, p) = target_recall_precision(l, truth)?;
                        (Some(r), Some(p))
                    }
                    None => (None, None),
                };
                rows.push(CompareRow {
                    scene: name.clone(),
                    algorithm: algo.name(),
                    mask_kind: spec.kind,
                    eta: spec.eta,
                    eta_c: spec.eta_c,
                    eta_r: spec.eta_r,
                    ptcr_db: ptcr(&g, truth)?,
                    chi_t: avg_target_intensity(&g, truth)?,
                    recall,
                    precision,
                });
            }
        }
    }
    Ok(rows)
}

/// Render rows as a full CSV document (header + LF line endings).
pub fn rows_to_csv(rows: &[CompareRow]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for row in rows {
        out.push_str(&row.to_csv());
        out.push('\n');
    }
    out
}
