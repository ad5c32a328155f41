//! Synthetic scene generation with ground-truth labels, plus simulated
//! undersampled noisy acquisition. Stands in for measured data during
//! desk-scale verification.

use num_complex::Complex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma as GammaDist, StandardNormal};

use crate::error::{CoreError, Result};
use crate::model::{measurement_forward, ComplexImage, MeasurementVector, NoiseSpec, SamplingMask};
use crate::scalar::Scalar;
use crate::semantics::{Label, LabelMap};

/// Half-open rectangle in (row, col) grid coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct Rect {
    pub row_start: usize,
    pub row_end: usize,
    pub col_start: usize,
    pub col_end: usize,
}

impl Rect {
    pub fn new(row_start: usize, row_end: usize, col_start: usize, col_end: usize) -> Self {
        Self {
            row_start,
            row_end,
            col_start,
            col_end,
        }
    }

    pub fn area(&self) -> usize {
        (self.row_end - self.row_start) * (self.col_end - self.col_start)
    }

    pub fn contains(&self, r: usize, c: usize) -> bool {
        r >= self.row_start && r < self.row_end && c >= self.col_start && c < self.col_end
    }

    fn inside(&self, rows: usize, cols: usize) -> bool {
        self.row_start < self.row_end
            && self.col_start < self.col_end
            && self.row_end <= rows
            && self.col_end <= cols
    }

    fn overlaps(&self, other: &Rect) -> bool {
        self.row_start < other.row_end
            && other.row_start < self.row_end
            && self.col_start < other.col_end
            && other.col_start < self.col_end
    }
}

/// Per-class Gamma magnitude parameters.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ClassGamma {
    pub shape: f64,
    pub scale: f64,
}

impl ClassGamma {
    pub fn mean(&self) -> f64 {
        self.shape * self.scale
    }
}

/// Full description of a synthetic scene. Row index increases down-range,
/// so the shadow rectangle sits at smaller row indices than the target.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SceneSpec {
    pub rows: usize,
    pub cols: usize,
    pub target: Rect,
    pub shadow: Rect,
    pub gamma_shadow: ClassGamma,
    pub gamma_background: ClassGamma,
    pub gamma_target: ClassGamma,
    pub seed: u64,
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        if self.rows == 0 || self.cols == 0 {
            return Err(CoreError::InvalidInput("empty grid".into()));
        }
        if !self.target.inside(self.rows, self.cols) || !self.shadow.inside(self.rows, self.cols) {
            return Err(CoreError::InvalidInput(
                "rectangle outside grid or degenerate".into(),
            ));
        }
        if self.target.overlaps(&self.shadow) {
            return Err(CoreError::InvalidInput(
                "target and shadow rectangles overlap".into(),
            ));
        }
        if self.shadow.row_end > self.target.row_start {
            return Err(CoreError::InvalidInput(
                "shadow must lie up-range (smaller rows) of the target".into(),
            ));
        }
        for g in [self.gamma_shadow, self.gamma_background, self.gamma_target] {
            if !(g.shape > 0.0) || !(g.scale > 0.0) {
                return Err(CoreError::InvalidInput("gamma params must be > 0".into()));
            }
        }
        let (ms, mb, mt) = (
            self.gamma_shadow.mean(),
            self.gamma_background.mean(),
            self.gamma_target.mean(),
        );
        if !(ms < mb && mb < mt) {
            return Err(CoreError::InvalidInput(format!(
                "class means must order shadow < background < target, got {ms} {mb} {mt}"
            )));
        }
        Ok(())
    }

    pub fn label_at(&self, r: usize, c: usize) -> Label {
        if self.target.contains(r, c) {
            Label::Target
        } else if self.shadow.contains(r, c) {
            Label::Shadow
        } else {
            Label::Background
        }
    }

    pub fn truth_labels(&self) -> LabelMap {
        let mut labels = Vec::with_capacity(self.rows * self.cols);
        for r in 0..self.rows {
            for c in 0..self.cols {
                labels.push(self.label_at(r, c));
            }
        }
        LabelMap::new(self.rows, self.cols, labels).expect("constructed consistently")
    }
}

/// Default scene: target rectangle centered with its shadow immediately
/// up-range. Class parameters give the strong-scatterer contrast typical of
/// vehicle targets: the clutter populations overlap while target magnitudes
/// sit well above them.
pub fn default_scene_spec(rows: usize, cols: usize, seed: u64) -> SceneSpec {
    let t_rows = (rows / 5).clamp(2, 12);
    let t_cols = (cols / 8).clamp(2, 8);
    let target_top = rows / 2;
    let target = Rect::new(
        target_top,
        target_top + t_rows,
        (cols - t_cols) / 2,
        (cols - t_cols) / 2 + t_cols,
    );
    let shadow = Rect::new(
        target_top - t_rows,
        target_top,
        target.col_start,
        target.col_end,
    );
    SceneSpec {
        rows,
        cols,
        target,
        shadow,
        gamma_shadow: ClassGamma {
            shape: 0.9,
            scale: 0.02,
        },
        gamma_background: ClassGamma {
            shape: 0.8,
            scale: 0.4,
        },
        gamma_target: ClassGamma {
            shape: 2.0,
            scale: 1.5,
        },
        seed,
    }
}

/// Draw the scene: per-pixel Gamma magnitude for the pixel's class and
/// independent uniform phase.
pub fn synth_scene<T: Scalar>(spec: &SceneSpec) -> Result<(ComplexImage<T>, LabelMap)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let dists = [
        GammaDist::new(spec.gamma_shadow.shape, spec.gamma_shadow.scale),
        GammaDist::new(spec.gamma_background.shape, spec.gamma_background.scale),
        GammaDist::new(spec.gamma_target.shape, spec.gamma_target.scale),
    ];
    let dists: Vec<GammaDist<f64>> = dists
        .into_iter()
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| CoreError::InvalidInput(format!("gamma params: {e}")))?;
    let labels = spec.truth_labels();
    let mut data = Vec::with_capacity(spec.rows * spec.cols);
    for &label in labels.as_slice() {
        let mag: f64 = dists[label as usize].sample(&mut rng);
        let phase: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
        data.push(Complex::new(
            T::of_f64(mag * phase.cos()),
            T::of_f64(mag * phase.sin()),
        ));
    }
    Ok((ComplexImage::new(spec.rows, spec.cols, data)?, labels))
}

/// Undersampled measurement of a scene with additive circular complex
/// Gaussian noise of standard deviation sigma per kept cell.
pub fn simulate_acquisition<T: Scalar>(
    scene: &ComplexImage<T>,
    mask: &SamplingMask,
    noise: NoiseSpec,
    seed: u64,
) -> Result<MeasurementVector<T>> {
    let mut m = measurement_forward(scene, mask)?;
    if noise.sigma > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // total variance sigma^2 split across real and imaginary parts
        let part = noise.sigma / std::f64::consts::SQRT_2;
        for v in m.values_mut() {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            *v += Complex::new(T::of_f64(re * part), T::of_f64(im * part));
        }
    }
    Ok(m)
}
