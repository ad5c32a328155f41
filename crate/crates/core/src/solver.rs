//! Weighted-l1 proximal solver (FISTA) and the majorize-minimize
//! iteratively reweighted l1 outer loop.
//!
//! The inner problem is min_G 1/(2*lambda) ||r - Phi A G||^2 + sum_i w_i |g_i|.
//! Because the DFT is orthonormal and the mask is a selection, the
//! composed operator has Lipschitz constant exactly 1; a debug assertion
//! validates this via a short power iteration.

use num_complex::Complex;

use crate::error::{CoreError, Result};
use crate::features::SemanticFeatures;
use crate::model::{measurement_adjoint, ComplexImage, Fft2, MeasurementVector, SamplingMask};
use crate::scalar::Scalar;
use crate::semantics::LabelMap;

/// Nonnegative per-pixel penalty weights.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMatrix<T: Scalar> {
    rows: usize,
    cols: usize,
    w: Vec<T>,
}

impl<T: Scalar> WeightMatrix<T> {
    pub fn new(rows: usize, cols: usize, w: Vec<T>) -> Result<Self> {
        if w.len() != rows * cols {
            return Err(CoreError::InvalidInput("weight length mismatch".into()));
        }
        if !w.iter().all(|v| v.is_finite() && *v >= T::zero()) {
            return Err(CoreError::InvalidInput(
                "weights must be finite and nonnegative".into(),
            ));
        }
        Ok(Self { rows, cols, w })
    }

    pub fn ones(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            w: vec![T::one(); rows * cols],
        }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            w: vec![T::zero(); rows * cols],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[T] {
        &self.w
    }
}

/// Inner/outer solver parameters.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct SolverConfig {
    /// Regularization weight multiplying the l1 penalty.
    pub lambda: f64,
    /// Smoothing constant for reweighting, relative to the max magnitude of
    /// the current iterate (recomputed per outer iteration).
    pub eps_rel: f64,
    pub fista_tol: f64,
    pub fista_max_iter: usize,
    pub mm_tol: f64,
    pub mm_max_iter: usize,
    /// Lipschitz constant of the composed operator; 1 for the unitary DFT
    /// with selection.
    pub lipschitz: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            eps_rel: 1e-3,
            fista_tol: 1e-6,
            fista_max_iter: 200,
            mm_tol: 3e-3,
            mm_max_iter: 10,
            lipschitz: 1.0,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0) || !(self.eps_rel > 0.0) || !(self.lipschitz > 0.0) {
            return Err(CoreError::InvalidInput(
                "lambda, eps and L must be positive".into(),
            ));
        }
        if self.fista_max_iter == 0 || self.mm_max_iter == 0 {
            return Err(CoreError::InvalidInput("iterations must be >= 1".into()));
        }
        Ok(())
    }

    /// Absolute smoothing constant for a given iterate.
    pub fn eps_for<T: Scalar>(&self, g: &ComplexImage<T>) -> T {
        let m = g.max_magnitude().as_f64();
        T::of_f64(self.eps_rel * if m > 0.0 { m } else { 1.0 })
    }
}

/// Per-solve diagnostics.
#[derive(Debug, Clone, Default, serde::Serialize, serde::Deserialize)]
pub struct SolveReport {
    /// Objective value per inner iteration (spec form, 1/(2*lambda) fidelity).
    pub objective_trace: Vec<f64>,
    /// FISTA iteration counts, one entry per outer (MM) iteration.
    pub inner_iterations: Vec<usize>,
    pub final_residual: f64,
    pub wall_time_s: f64,
}

/// Element-wise complex shrinkage: output magnitude max(|x| - lambda*w, 0),
/// phase preserved.
pub fn complex_soft_threshold<T: Scalar>(
    x: &ComplexImage<T>,
    lambda: T,
    w: &WeightMatrix<T>,
) -> Result<ComplexImage<T>> {
    if lambda < T::zero() {
        return Err(CoreError::InvalidInput("negative threshold".into()));
    }
    if w.rows != x.rows() || w.cols != x.cols() {
        return Err(CoreError::ShapeMismatch {
            expected_rows: x.rows(),
            expected_cols: x.cols(),
            rows: w.rows,
            cols: w.cols,
        });
    }
    let mut out = x.clone();
    for (z, &wi) in out.as_mut_slice().iter_mut().zip(w.w.iter()) {
        let t = lambda * wi;
        if t > T::zero() {
            let mag = z.norm();
            let kept = (mag - t).max(T::zero());
            // max{|x|-t,0} / (max{|x|-t,0} + t) * x
            let scale = kept / (kept + t);
            *z = *z * scale;
        }
    }
    Ok(out)
}

/// The measurement operator bundled with its planned FFT.
pub(crate) struct MeasurementOp<'a, T: Scalar> {
    fft: Fft2<T>,
    mask: &'a SamplingMask,
    /// zero-filled measured spectrum
    data_spectrum: Vec<Complex<T>>,
    lambda: T,
}

impl<'a, T: Scalar> MeasurementOp<'a, T> {
    pub(crate) fn new(m: &MeasurementVector<T>, mask: &'a SamplingMask, lambda: T) -> Self {
        let fft = Fft2::new(mask.rows(), mask.cols());
        let data_spectrum = m.to_spectrum().as_slice().to_vec();
        Self {
            fft,
            mask,
            data_spectrum,
            lambda,
        }
    }

    /// Gradient of (1/2)||r - Phi A G||^2, i.e. Phi* (Phi A G - r) pulled
    /// back through A*; also returns the fidelity residual norm squared.
    fn gradient(&self, g: &ComplexImage<T>) -> Result<(ComplexImage<T>, T)> {
        let mut spec = self.fft.forward(g)?;
        let mut res2 = T::zero();
        for ((z, &keep), &d) in spec
            .as_mut_slice()
            .iter_mut()
            .zip(self.mask.kept())
            .zip(self.data_spectrum.iter())
        {
            if keep {
                *z = *z - d;
                res2 += z.norm_sqr();
            } else {
                *z = Complex::new(T::zero(), T::zero());
            }
        }
        Ok((self.fft.adjoint(&spec)?, res2))
    }

    /// Objective in the bookkeeping form 1/(2*lambda)||res||^2 + sum w|g|.
    fn objective(&self, g: &ComplexImage<T>, w: &WeightMatrix<T>) -> Result<f64> {
        let (_, res2) = self.gradient(g)?;
        let penalty = g
            .as_slice()
            .iter()
            .zip(w.as_slice())
            .fold(T::zero(), |acc, (z, &wi)| acc + z.norm() * wi);
        Ok((res2 / (T::of_f64(2.0) * self.lambda) + penalty).as_f64())
    }

    #[cfg(debug_assertions)]
    fn assert_unit_lipschitz(&self) {
        // power iteration on Phi~* Phi~ from a deterministic start
        let mut v = ComplexImage::<T>::zeros(self.mask.rows(), self.mask.cols());
        for (i, z) in v.as_mut_slice().iter_mut().enumerate() {
            let x = ((i * 2654435761) % 1000) as f64 / 1000.0 - 0.5;
            *z = Complex::new(T::of_f64(x + 0.01), T::of_f64(0.3 - x * x));
        }
        let mut norm = T::one();
        for _ in 0..30 {
            let mut spec = self.fft.forward(&v).expect("finite");
            for (z, &keep) in spec.as_mut_slice().iter_mut().zip(self.mask.kept()) {
                if !keep {
                    *z = Complex::new(T::zero(), T::zero());
                }
            }
            v = self.fft.adjoint(&spec).expect("finite");
            norm = v.norm();
            if norm == T::zero() {
                return;
            }
            let inv = T::one() / norm;
            for z in v.as_mut_slice() {
                *z = *z * inv;
            }
        }
        debug_assert!(
            (norm.as_f64() - 1.0).abs() < 1e-6,
            "operator norm {} != 1",
            norm.as_f64()
        );
    }
}

/// FISTA for the weighted l1 problem. Gradient step of size 1/L on the
/// fidelity, shrinkage with threshold lambda*W/L, Nesterov momentum with
/// alpha(1) = 1 and no restarts. Stops on relative objective change below
/// `fista_tol` or `fista_max_iter`.
pub fn fista_weighted_l1<T: Scalar>(
    m: &MeasurementVector<T>,
    mask: &SamplingMask,
    w: &WeightMatrix<T>,
    cfg: &SolverConfig,
    init: &ComplexImage<T>,
) -> Result<(ComplexImage<T>, SolveReport)> {
    cfg.validate()?;
    if !init.is_finite() {
        return Err(CoreError::InvalidInput("non-finite init".into()));
    }
    let start = std::time::Instant::now();
    let lambda = T::of_f64(cfg.lambda);
    let op = MeasurementOp::new(m, mask, lambda);
    #[cfg(debug_assertions)]
    op.assert_unit_lipschitz();

    let inv_l = T::of_f64(1.0 / cfg.lipschitz);
    let shrink_lambda = lambda * inv_l;

    let mut g = init.clone(); // momentum point
    let mut x_prev = init.clone(); // previous prox point
    let mut alpha = 1.0f64;
    let mut trace: Vec<f64> = Vec::new();
    let mut best = init.clone();
    let mut best_obj = op.objective(init, w)?;
    let mut iters = 0usize;

    for _ in 0..cfg.fista_max_iter {
        iters += 1;
        let (grad, _) = op.gradient(&g)?;
        let mut step = g.clone();
        for (z, d) in step.as_mut_slice().iter_mut().zip(grad.as_slice()) {
            *z = *z - *d * inv_l;
        }
        let x = complex_soft_threshold(&step, shrink_lambda, w)?;
        let obj = op.objective(&x, w)?;
        if !obj.is_finite() {
            return Err(CoreError::SolverFailure {
                reason: "objective diverged".into(),
                trace,
            });
        }
        trace.push(obj);
        if obj <= best_obj {
            best_obj = obj;
            best = x.clone();
        }

        let alpha_next = (1.0 + (1.0 + 4.0 * alpha * alpha).sqrt()) / 2.0;
        let beta = T::of_f64((alpha - 1.0) / alpha_next);
        let mut g_next = x.clone();
        for (z, p) in g_next.as_mut_slice().iter_mut().zip(x_prev.as_slice()) {
            let xi = *z;
            *z = xi + (xi - *p) * beta;
        }
        alpha = alpha_next;
        g = g_next;
        x_prev = x;

        if trace.len() >= 2 {
            let prev = trace[trace.len() - 2];
            let denom = prev.abs().max(1e-300);
            if (prev - obj).abs() / denom < cfg.fista_tol {
                break;
            }
        }
    }

    let (_, res2) = op.gradient(&best)?;
    let report = SolveReport {
        objective_trace: trace,
        inner_iterations: vec![iters],
        final_residual: res2.as_f64().sqrt(),
        wall_time_s: start.elapsed().as_secs_f64(),
    };
    Ok((best, report))
}

/// Semantics-driven weights: w_i = 1/b_c + (1 - a_c) / (|g_i| + eps) with
/// c the pixel's class.
pub fn semantic_weights<T: Scalar>(
    g: &ComplexImage<T>,
    labels: &LabelMap,
    features: &SemanticFeatures<T>,
    eps: T,
) -> Result<WeightMatrix<T>> {
    if labels.rows() != g.rows() || labels.cols() != g.cols() {
        return Err(CoreError::ShapeMismatch {
            expected_rows: g.rows(),
            expected_cols: g.cols(),
            rows: labels.rows(),
            cols: labels.cols(),
        });
    }
    let mut w = Vec::with_capacity(g.len());
    for (z, &label) in g.as_slice().iter().zip(labels.as_slice()) {
        let f = features.get(label)?;
        w.push(T::one() / f.scale + (T::one() - f.shape) / (z.norm() + eps));
    }
    WeightMatrix::new(g.rows(), g.cols(), w)
}

/// Magnitude-only reweighting of the standard IRW-l1 baseline:
/// w_i = 1 / (|g_i| + eps).
pub fn magnitude_weights<T: Scalar>(g: &ComplexImage<T>, eps: T) -> Result<WeightMatrix<T>> {
    let w = g
        .as_slice()
        .iter()
        .map(|z| T::one() / (z.norm() + eps))
        .collect();
    WeightMatrix::new(g.rows(), g.cols(), w)
}

/// MM outer loop: solve the weighted l1 problem with FISTA, recompute the
/// weights at the new point, repeat until the iterate stalls.
///
/// `weight_fn` maps (current iterate, eps) to the next weight matrix; eps
/// is recomputed per outer iteration from `cfg.eps_rel`.
pub fn irw_l1<T: Scalar>(
    m: &MeasurementVector<T>,
    mask: &SamplingMask,
    weight_fn: &dyn Fn(&ComplexImage<T>, T) -> Result<WeightMatrix<T>>,
    cfg: &SolverConfig,
    init: &ComplexImage<T>,
) -> Result<(ComplexImage<T>, SolveReport)> {
    cfg.validate()?;
    let start = std::time::Instant::now();
    let mut g = init.clone();
    let mut report = SolveReport::default();
    report.inner_iterations.clear();

    for _ in 0..cfg.mm_max_iter {
        let eps = cfg.eps_for(&g);
        let w = weight_fn(&g, eps)?;
        let (next, inner) = fista_weighted_l1(m, mask, &w, cfg, &g)?;
        report.objective_trace.extend(inner.objective_trace);
        report.inner_iterations.extend(inner.inner_iterations);
        report.final_residual = inner.final_residual;

        let mut diff2 = T::zero();
        for (a, b) in next.as_slice().iter().zip(g.as_slice()) {
            diff2 += (a - b).norm_sqr();
        }
        let denom = next.norm().max(T::of_f64(1e-300));
        let rel = (diff2.sqrt() / denom).as_f64();
        g = next;
        if rel < cfg.mm_tol {
            break;
        }
    }
    report.wall_time_s = start.elapsed().as_secs_f64();
    Ok((g, report))
}

/// Initial point shared by every solver: the zero-filled adjoint image.
pub fn adjoint_init<T: Scalar>(m: &MeasurementVector<T>) -> Result<ComplexImage<T>> {
    measurement_adjoint(m)
}
