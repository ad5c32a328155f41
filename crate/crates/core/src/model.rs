//! Domain types and the discrete measurement model: complex image grids,
//! unitary 2D DFT pair, undersampling masks, Taylor windowing and
//! MSTAR-shaped preprocessing.
//!
//! Conventions fixed here and relied on everywhere else:
//! - the DFT pair is orthonormal (1/sqrt(rows*cols) both ways), so the
//!   composed measurement operator has unit Lipschitz constant;
//! - measurements enumerate kept spectrum cells in row-major order.

use num_complex::Complex;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rustfft::FftPlanner;
use std::sync::Arc;

use crate::error::{CoreError, Result};
use crate::scalar::Scalar;

/// N x K grid of complex reflectivity values; the unknown image G.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexImage<T: Scalar> {
    rows: usize,
    cols: usize,
    data: Vec<Complex<T>>,
}

/// Fully sampled 2D spectrum of an image; same grid shape.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseHistory<T: Scalar> {
    rows: usize,
    cols: usize,
    data: Vec<Complex<T>>,
}

macro_rules! grid_impl {
    ($name:ident) => {
        impl<T: Scalar> $name<T> {
            pub fn new(rows: usize, cols: usize, data: Vec<Complex<T>>) -> Result<Self> {
                if rows == 0 || cols == 0 {
                    return Err(CoreError::InvalidInput("empty grid".into()));
                }
                if data.len() != rows * cols {
                    return Err(CoreError::InvalidInput(format!(
                        "data length {} != {}x{}",
                        data.len(),
                        rows,
                        cols
                    )));
                }
                if !data.iter().all(|z| z.re.is_finite() && z.im.is_finite()) {
                    return Err(CoreError::InvalidInput("non-finite values".into()));
                }
                Ok(Self { rows, cols, data })
            }

            pub fn zeros(rows: usize, cols: usize) -> Self {
                Self {
                    rows,
                    cols,
                    data: vec![Complex::new(T::zero(), T::zero()); rows * cols],
                }
            }

            pub fn rows(&self) -> usize {
                self.rows
            }

            pub fn cols(&self) -> usize {
                self.cols
            }

            pub fn len(&self) -> usize {
                self.data.len()
            }

            pub fn is_empty(&self) -> bool {
                self.data.is_empty()
            }

            pub fn as_slice(&self) -> &[Complex<T>] {
                &self.data
            }

            pub fn as_mut_slice(&mut self) -> &mut [Complex<T>] {
                &mut self.data
            }

            pub fn get(&self, r: usize, c: usize) -> Complex<T> {
                self.data[r * self.cols + c]
            }

            pub fn set(&mut self, r: usize, c: usize, v: Complex<T>) {
                self.data[r * self.cols + c] = v;
            }

            pub fn is_finite(&self) -> bool {
                self.data
                    .iter()
                    .all(|z| z.re.is_finite() && z.im.is_finite())
            }

            /// Frobenius / l2 norm.
            pub fn norm(&self) -> T {
                self.data
                    .iter()
                    .fold(T::zero(), |acc, z| acc + z.norm_sqr())
                    .sqrt()
            }

            pub fn max_magnitude(&self) -> T {
                self.data.iter().fold(T::zero(), |m, z| m.max(z.norm()))
            }
        }
    };
}

grid_impl!(ComplexImage);
grid_impl!(PhaseHistory);

impl<T: Scalar> ComplexImage<T> {
    /// Per-pixel magnitudes, row-major.
    pub fn magnitudes(&self) -> Vec<T> {
        self.data.iter().map(|z| z.norm()).collect()
    }
}

/// Undersampling scheme realized by a mask.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaskKind {
    /// Uniform random cells at rate eta.
    Mask1,
    /// Random full columns (viewing angles) at rate eta_c.
    Mask2,
    /// Random columns at eta_c, random rows within each kept column at eta_r.
    Mask3,
}

impl MaskKind {
    pub fn name(self) -> &'static str {
        match self {
            MaskKind::Mask1 => "mask1",
            MaskKind::Mask2 => "mask2",
            MaskKind::Mask3 => "mask3",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "mask1" => Ok(MaskKind::Mask1),
            "mask2" => Ok(MaskKind::Mask2),
            "mask3" => Ok(MaskKind::Mask3),
            other => Err(CoreError::InvalidInput(format!(
                "unknown mask kind {other}"
            ))),
        }
    }
}

/// Binary keep/drop grid over the spectrum.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplingMask {
    rows: usize,
    cols: usize,
    kept: Vec<bool>,
    kind: MaskKind,
    /// (eta, eta_c, eta_r); unused factors are 1.
    rates: (f64, f64, f64),
}

impl SamplingMask {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn kind(&self) -> MaskKind {
        self.kind
    }

    pub fn rates(&self) -> (f64, f64, f64) {
        self.rates
    }

    pub fn kept(&self) -> &[bool] {
        &self.kept
    }

    pub fn is_kept(&self, r: usize, c: usize) -> bool {
        self.kept[r * self.cols + c]
    }

    /// Number of kept cells, i.e. the measurement length M.
    pub fn popcount(&self) -> usize {
        self.kept.iter().filter(|&&k| k).count()
    }

    /// Reassemble a mask from raw parts (e.g. a deserialized file).
    pub fn from_parts(
        rows: usize,
        cols: usize,
        kept: Vec<bool>,
        kind: MaskKind,
        rates: (f64, f64, f64),
    ) -> Result<Self> {
        if rows == 0 || cols == 0 || kept.len() != rows * cols {
            return Err(CoreError::InvalidInput("bad mask shape".into()));
        }
        Ok(Self {
            rows,
            cols,
            kept,
            kind,
            rates,
        })
    }
}

/// Masked subset of a spectrum; kept cells in row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementVector<T: Scalar> {
    values: Vec<Complex<T>>,
    mask: SamplingMask,
}

impl<T: Scalar> MeasurementVector<T> {
    pub fn new(values: Vec<Complex<T>>, mask: SamplingMask) -> Result<Self> {
        let expected = mask.popcount();
        if values.len() != expected {
            return Err(CoreError::MeasurementLength {
                expected,
                got: values.len(),
            });
        }
        Ok(Self { values, mask })
    }

    pub fn values(&self) -> &[Complex<T>] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Complex<T>] {
        &mut self.values
    }

    pub fn mask(&self) -> &SamplingMask {
        &self.mask
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Scatter values back onto the spectrum grid, zeros elsewhere.
    pub fn to_spectrum(&self) -> PhaseHistory<T> {
        let mut ph = PhaseHistory::zeros(self.mask.rows, self.mask.cols);
        let mut it = self.values.iter();
        for (i, &keep) in self.mask.kept.iter().enumerate() {
            if keep {
                ph.as_mut_slice()[i] = *it.next().expect("length checked");
            }
        }
        ph
    }
}

/// Complex circular Gaussian measurement noise level.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct NoiseSpec {
    /// Standard deviation per complex measurement (same units as spectrum).
    pub sigma: f64,
}

impl NoiseSpec {
    pub fn new(sigma: f64) -> Result<Self> {
        if !(sigma >= 0.0) {
            return Err(CoreError::InvalidInput("sigma must be >= 0".into()));
        }
        Ok(Self { sigma })
    }
}

/// Planned orthonormal 2D DFT pair for one grid shape.
pub struct Fft2<T: Scalar> {
    rows: usize,
    cols: usize,
    fwd_row: Arc<dyn rustfft::Fft<T>>,
    inv_row: Arc<dyn rustfft::Fft<T>>,
    fwd_col: Arc<dyn rustfft::Fft<T>>,
    inv_col: Arc<dyn rustfft::Fft<T>>,
}

impl<T: Scalar> Fft2<T> {
    pub fn new(rows: usize, cols: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            rows,
            cols,
            fwd_row: planner.plan_fft_forward(cols),
            inv_row: planner.plan_fft_inverse(cols),
            fwd_col: planner.plan_fft_forward(rows),
            inv_col: planner.plan_fft_inverse(rows),
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    fn transform(&self, data: &mut [Complex<T>], inverse: bool) {
        let (row_plan, col_plan) = if inverse {
            (&self.inv_row, &self.inv_col)
        } else {
            (&self.fwd_row, &self.fwd_col)
        };
        for r in 0..self.rows {
            row_plan.process(&mut data[r * self.cols..(r + 1) * self.cols]);
        }
        let mut col = vec![Complex::new(T::zero(), T::zero()); self.rows];
        for c in 0..self.cols {
            for r in 0..self.rows {
                col[r] = data[r * self.cols + c];
            }
            col_plan.process(&mut col);
            for r in 0..self.rows {
                data[r * self.cols + c] = col[r];
            }
        }
        let scale = T::one() / T::of_f64((self.rows * self.cols) as f64).sqrt();
        for z in data.iter_mut() {
            *z = *z * scale;
        }
    }

    /// Orthonormal 2D DFT (operator A).
    pub fn forward(&self, img: &ComplexImage<T>) -> Result<PhaseHistory<T>> {
        self.check_shape(img.rows, img.cols)?;
        if !img.is_finite() {
            return Err(CoreError::InvalidInput("non-finite image".into()));
        }
        let mut data = img.data.clone();
        self.transform(&mut data, false);
        Ok(PhaseHistory {
            rows: self.rows,
            cols: self.cols,
            data,
        })
    }

    /// Orthonormal inverse 2D DFT (operator A*), exact inverse of `forward`.
    pub fn adjoint(&self, ph: &PhaseHistory<T>) -> Result<ComplexImage<T>> {
        self.check_shape(ph.rows, ph.cols)?;
        if !ph.is_finite() {
            return Err(CoreError::InvalidInput("non-finite spectrum".into()));
        }
        let mut data = ph.data.clone();
        self.transform(&mut data, true);
        Ok(ComplexImage {
            rows: self.rows,
            cols: self.cols,
            data,
        })
    }

    fn check_shape(&self, rows: usize, cols: usize) -> Result<()> {
        if rows != self.rows || cols != self.cols {
            return Err(CoreError::ShapeMismatch {
                expected_rows: self.rows,
                expected_cols: self.cols,
                rows,
                cols,
            });
        }
        Ok(())
    }
}

/// One-shot orthonormal 2D DFT.
pub fn dft2_forward<T: Scalar>(img: &ComplexImage<T>) -> Result<PhaseHistory<T>> {
    Fft2::new(img.rows, img.cols).forward(img)
}

/// One-shot orthonormal inverse 2D DFT.
pub fn dft2_adjoint<T: Scalar>(ph: &PhaseHistory<T>) -> Result<ComplexImage<T>> {
    Fft2::new(ph.rows, ph.cols).adjoint(ph)
}

/// Forward measurement: 2D DFT then keep masked cells in row-major order
/// (the composed operator Phi A).
pub fn measurement_forward<T: Scalar>(
    img: &ComplexImage<T>,
    mask: &SamplingMask,
) -> Result<MeasurementVector<T>> {
    if img.rows != mask.rows || img.cols != mask.cols {
        return Err(CoreError::ShapeMismatch {
            expected_rows: mask.rows,
            expected_cols: mask.cols,
            rows: img.rows,
            cols: img.cols,
        });
    }
    let ph = dft2_forward(img)?;
    let values = ph
        .data
        .iter()
        .zip(mask.kept.iter())
        .filter_map(|(&z, &k)| k.then_some(z))
        .collect();
    MeasurementVector::new(values, mask.clone())
}

/// Adjoint measurement: zero-fill onto the spectrum grid, then inverse DFT.
pub fn measurement_adjoint<T: Scalar>(m: &MeasurementVector<T>) -> Result<ComplexImage<T>> {
    dft2_adjoint(&m.to_spectrum())
}

fn check_rate(rate: f64) -> Result<()> {
    if !(rate > 0.0 && rate <= 1.0) {
        return Err(CoreError::RateOutOfRange(rate));
    }
    Ok(())
}

fn pick(rng: &mut ChaCha8Rng, n: usize, count: usize) -> Vec<usize> {
    rand::seq::index::sample(rng, n, count.min(n)).into_vec()
}

/// Mask-1: uniform random cells at rate eta.
pub fn make_mask1(rows: usize, cols: usize, eta: f64, seed: u64) -> Result<SamplingMask> {
    check_rate(eta)?;
    let n = rows * cols;
    let count = ((eta * n as f64).round() as usize).clamp(1, n);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut kept = vec![false; n];
    for i in pick(&mut rng, n, count) {
        kept[i] = true;
    }
    Ok(SamplingMask {
        rows,
        cols,
        kept,
        kind: MaskKind::Mask1,
        rates: (eta, 1.0, 1.0),
    })
}

/// Mask-2: random full columns at rate eta_c (eta = eta_c).
pub fn make_mask2(rows: usize, cols: usize, eta_c: f64, seed: u64) -> Result<SamplingMask> {
    check_rate(eta_c)?;
    let count = ((eta_c * cols as f64).round() as usize).clamp(1, cols);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut kept = vec![false; rows * cols];
    for c in pick(&mut rng, cols, count) {
        for r in 0..rows {
            kept[r * cols + c] = true;
        }
    }
    Ok(SamplingMask {
        rows,
        cols,
        kept,
        kind: MaskKind::Mask2,
        rates: (eta_c, eta_c, 1.0),
    })
}

/// Mask-3: random columns at eta_c, random rows within each kept column at
/// eta_r (eta = eta_c * eta_r).
pub fn make_mask3(
    rows: usize,
    cols: usize,
    eta_c: f64,
    eta_r: f64,
    seed: u64,
) -> Result<SamplingMask> {
    check_rate(eta_c)?;
    check_rate(eta_r)?;
    let col_count = ((eta_c * cols as f64).round() as usize).clamp(1, cols);
    let row_count = ((eta_r * rows as f64).round() as usize).clamp(1, rows);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut kept = vec![false; rows * cols];
    let mut picked_cols = pick(&mut rng, cols, col_count);
    picked_cols.sort_unstable();
    for c in picked_cols {
        for r in pick(&mut rng, rows, row_count) {
            kept[r * cols + c] = true;
        }
    }
    Ok(SamplingMask {
        rows,
        cols,
        kept,
        kind: MaskKind::Mask3,
        rates: (eta_c * eta_r, eta_c, eta_r),
    })
}

/// Dispatching constructor over the three schemes. For `Mask1` and `Mask2`
/// the second rate is ignored.
pub fn make_mask(
    kind: MaskKind,
    rows: usize,
    cols: usize,
    eta_or_eta_c: f64,
    eta_r: f64,
    seed: u64,
) -> Result<SamplingMask> {
    match kind {
        MaskKind::Mask1 => make_mask1(rows, cols, eta_or_eta_c, seed),
        MaskKind::Mask2 => make_mask2(rows, cols, eta_or_eta_c, seed),
        MaskKind::Mask3 => make_mask3(rows, cols, eta_or_eta_c, eta_r, seed),
    }
}

/// Classical Taylor window coefficients (peak sidelobe level in dB, nbar
/// near-in sidelobes), unnormalized: w(k) = 1 + 2 sum_m F_m cos(2 pi m (k - (n-1)/2) / n).
pub fn taylor_window<T: Scalar>(n: usize, sidelobe_db: f64, nbar: usize) -> Result<Vec<T>> {
    if n < 8 {
        return Err(CoreError::InvalidInput("taylor window needs n >= 8".into()));
    }
    let b = 10f64.powf(sidelobe_db / 20.0);
    let a = b.acosh() / std::f64::consts::PI;
    let sigma2 = (nbar as f64).powi(2) / (a * a + (nbar as f64 - 0.5).powi(2));
    let mut coeffs = Vec::with_capacity(nbar.saturating_sub(1));
    for m in 1..nbar {
        let mf = m as f64;
        let mut num = 1.0;
        for i in 1..nbar {
            let denom = a * a + (i as f64 - 0.5).powi(2);
            num *= 1.0 - mf * mf / (sigma2 * denom);
        }
        let mut den = 1.0;
        for i in 1..nbar {
            if i != m {
                den *= 1.0 - mf * mf / (i as f64 * i as f64);
            }
        }
        let sign = if m % 2 == 0 { -1.0 } else { 1.0 };
        coeffs.push(sign * num / (2.0 * den));
    }
    let center = (n as f64 - 1.0) / 2.0;
    let mut w = Vec::with_capacity(n);
    for k in 0..n {
        let mut v = 1.0;
        for (m, &f) in coeffs.iter().enumerate() {
            let mf = (m + 1) as f64;
            v += 2.0 * f * (2.0 * std::f64::consts::PI * mf * (k as f64 - center) / n as f64).cos();
        }
        w.push(T::of_f64(v));
    }
    Ok(w)
}

/// Multiply a spectrum by the outer product of two 1-D Taylor windows.
pub fn apply_taylor<T: Scalar>(
    ph: &PhaseHistory<T>,
    sidelobe_db: f64,
    nbar: usize,
) -> Result<PhaseHistory<T>> {
    let wr = taylor_window::<T>(ph.rows, sidelobe_db, nbar)?;
    let wc = taylor_window::<T>(ph.cols, sidelobe_db, nbar)?;
    let mut out = ph.clone();
    for r in 0..ph.rows {
        for c in 0..ph.cols {
            let v = out.get(r, c) * (wr[r] * wc[c]);
            out.set(r, c, v);
        }
    }
    Ok(out)
}

/// Divide a spectrum by the outer product of two 1-D Taylor windows;
/// exact inverse of `apply_taylor`.
pub fn remove_taylor<T: Scalar>(
    ph: &PhaseHistory<T>,
    sidelobe_db: f64,
    nbar: usize,
) -> Result<PhaseHistory<T>> {
    let wr = taylor_window::<T>(ph.rows, sidelobe_db, nbar)?;
    let wc = taylor_window::<T>(ph.cols, sidelobe_db, nbar)?;
    let mut out = ph.clone();
    for r in 0..ph.rows {
        for c in 0..ph.cols {
            let v = out.get(r, c) / (wr[r] * wc[c]);
            out.set(r, c, v);
        }
    }
    Ok(out)
}

/// Circularly shift a spectrum so DC moves to the grid center.
pub fn fftshift<T: Scalar>(ph: &PhaseHistory<T>) -> PhaseHistory<T> {
    shift(ph, ph.rows / 2, ph.cols / 2)
}

/// Inverse of `fftshift`.
pub fn ifftshift<T: Scalar>(ph: &PhaseHistory<T>) -> PhaseHistory<T> {
    shift(ph, ph.rows - ph.rows / 2, ph.cols - ph.cols / 2)
}

fn shift<T: Scalar>(ph: &PhaseHistory<T>, dr: usize, dc: usize) -> PhaseHistory<T> {
    let mut out = PhaseHistory::zeros(ph.rows, ph.cols);
    for r in 0..ph.rows {
        for c in 0..ph.cols {
            out.set((r + dr) % ph.rows, (c + dc) % ph.cols, ph.get(r, c));
        }
    }
    out
}

pub const MSTAR_INPUT: usize = 128;
pub const MSTAR_OUTPUT: usize = 100;
const MSTAR_MARGIN: usize = (MSTAR_INPUT - MSTAR_OUTPUT) / 2;
const MSTAR_SLL_DB: f64 = 35.0;
const MSTAR_NBAR: usize = 4;

/// MSTAR-shaped preprocessing: 2D DFT, centered crop of the 128x128
/// spectrum to 100x100 (14 cells per side), then removal of the 35 dB /
/// nbar = 4 Taylor weighting.
pub fn mstar_preprocess<T: Scalar>(img128: &ComplexImage<T>) -> Result<PhaseHistory<T>> {
    if img128.rows != MSTAR_INPUT || img128.cols != MSTAR_INPUT {
        return Err(CoreError::ShapeMismatch {
            expected_rows: MSTAR_INPUT,
            expected_cols: MSTAR_INPUT,
            rows: img128.rows,
            cols: img128.cols,
        });
    }
    let centered = fftshift(&dft2_forward(img128)?);
    let mut cropped = PhaseHistory::zeros(MSTAR_OUTPUT, MSTAR_OUTPUT);
    for r in 0..MSTAR_OUTPUT {
        for c in 0..MSTAR_OUTPUT {
            cropped.set(r, c, centered.get(r + MSTAR_MARGIN, c + MSTAR_MARGIN));
        }
    }
    remove_taylor(&cropped, MSTAR_SLL_DB, MSTAR_NBAR)
}

/// Embed a windowed 100x100 phase history into a centered 128x128 spectrum
/// and invert back to the image domain; the synthesis counterpart of
/// `mstar_preprocess`, used to fabricate MSTAR-shaped inputs.
pub fn mstar_synthesize<T: Scalar>(ph100: &PhaseHistory<T>) -> Result<ComplexImage<T>> {
    if ph100.rows != MSTAR_OUTPUT || ph100.cols != MSTAR_OUTPUT {
        return Err(CoreError::ShapeMismatch {
            expected_rows: MSTAR_OUTPUT,
            expected_cols: MSTAR_OUTPUT,
            rows: ph100.rows,
            cols: ph100.cols,
        });
    }
    let windowed = apply_taylor(ph100, MSTAR_SLL_DB, MSTAR_NBAR)?;
    let mut padded = PhaseHistory::zeros(MSTAR_INPUT, MSTAR_INPUT);
    for r in 0..MSTAR_OUTPUT {
        for c in 0..MSTAR_OUTPUT {
            padded.set(r + MSTAR_MARGIN, c + MSTAR_MARGIN, windowed.get(r, c));
        }
    }
    dft2_adjoint(&ifftshift(&padded))
}
