//! Per-class Gamma shape/scale estimation under the target-enhancement
//! weight-ordering constraints.
//!
//! Scale has the closed form b = mu / a. Shape uses the standard
//! closed-form approximation a = (3 - s + sqrt((3-s)^2 + 24 s)) / (12 s)
//! with s = log(mu) - mean(log(|g| + eps)), clipped into the feasible
//! interval implied by max-target-weight <= min-background-weight <=
//! min-shadow-weight. The coupled weight extremes of the bounds are
//! evaluated at the previous iteration's features.

use crate::error::{CoreError, Result};
use crate::math::ln_gamma;
use crate::model::ComplexImage;
use crate::scalar::Scalar;
use crate::semantics::{Label, LabelMap};

/// Gamma shape/scale pair of one semantic class.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ClassFeature<T: Scalar> {
    /// Shape a, constrained to (0, 1].
    pub shape: T,
    /// Scale b > 0, in magnitude units.
    pub scale: T,
}

impl<T: Scalar> ClassFeature<T> {
    /// Mean magnitude implied by the Gamma parameters.
    pub fn mean(&self) -> T {
        self.shape * self.scale
    }
}

/// The feature set Theta; shadow is absent in two-class mode.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SemanticFeatures<T: Scalar> {
    pub target: ClassFeature<T>,
    pub background: ClassFeature<T>,
    pub shadow: Option<ClassFeature<T>>,
}

impl<T: Scalar> SemanticFeatures<T> {
    pub fn get(&self, label: Label) -> Result<&ClassFeature<T>> {
        match label {
            Label::Target => Ok(&self.target),
            Label::Background => Ok(&self.background),
            Label::Shadow => self
                .shadow
                .as_ref()
                .ok_or(CoreError::MissingClassFeatures("shadow")),
        }
    }

    /// Classes carried by this feature set, brightest last.
    pub fn classes(&self) -> Vec<Label> {
        if self.shadow.is_some() {
            vec![Label::Shadow, Label::Background, Label::Target]
        } else {
            vec![Label::Background, Label::Target]
        }
    }

    /// Uniform features a = 1, b = 1 for every class; the corresponding
    /// semantic weights are all ones.
    pub fn uniform(three_class: bool) -> Self {
        let f = ClassFeature {
            shape: T::one(),
            scale: T::one(),
        };
        Self {
            target: f,
            background: f,
            shadow: three_class.then_some(f),
        }
    }
}

/// Magnitude aggregates of one class.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ClassStat<T: Scalar> {
    pub count: usize,
    /// Mean magnitude mu_c.
    pub mean: T,
    /// Min magnitude.
    pub min: T,
    /// Max magnitude.
    pub max: T,
    /// Mean of log(|g| + eps).
    pub mean_log: T,
}

impl<T: Scalar> Default for ClassStat<T> {
    fn default() -> Self {
        Self {
            count: 0,
            mean: T::zero(),
            min: T::zero(),
            max: T::zero(),
            mean_log: T::zero(),
        }
    }
}

/// Per-class aggregates over |g_s|.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassStats<T: Scalar> {
    pub shadow: ClassStat<T>,
    pub background: ClassStat<T>,
    pub target: ClassStat<T>,
}

impl<T: Scalar> ClassStats<T> {
    pub fn get(&self, label: Label) -> &ClassStat<T> {
        match label {
            Label::Shadow => &self.shadow,
            Label::Background => &self.background,
            Label::Target => &self.target,
        }
    }
}

/// Aggregate magnitudes per class; empty classes keep count = 0.
pub fn class_stats<T: Scalar>(
    g: &ComplexImage<T>,
    labels: &LabelMap,
    eps: T,
) -> Result<ClassStats<T>> {
    if labels.rows() != g.rows() || labels.cols() != g.cols() {
        return Err(CoreError::ShapeMismatch {
            expected_rows: g.rows(),
            expected_cols: g.cols(),
            rows: labels.rows(),
            cols: labels.cols(),
        });
    }
    let mut acc: [(usize, T, T, T, T); 3] =
        [(0, T::zero(), T::infinity(), T::neg_infinity(), T::zero()); 3];
    for (z, &label) in g.as_slice().iter().zip(labels.as_slice()) {
        let mag = z.norm();
        let slot = &mut acc[label as usize];
        slot.0 += 1;
        slot.1 += mag;
        slot.2 = slot.2.min(mag);
        slot.3 = slot.3.max(mag);
        slot.4 += (mag + eps).ln();
    }
    let finish = |slot: (usize, T, T, T, T)| {
        if slot.0 == 0 {
            ClassStat::default()
        } else {
            let n = T::of_f64(slot.0 as f64);
            ClassStat {
                count: slot.0,
                mean: slot.1 / n,
                min: slot.2,
                max: slot.3,
                mean_log: slot.4 / n,
            }
        }
    };
    Ok(ClassStats {
        shadow: finish(acc[0]),
        background: finish(acc[1]),
        target: finish(acc[2]),
    })
}

/// Closed-form scale update b = mu / a.
pub fn scale_update<T: Scalar>(mean: T, shape: T) -> Result<T> {
    if !(mean > T::zero()) {
        return Err(CoreError::DegenerateClass(
            "zero mean magnitude; two-class fallback required".into(),
        ));
    }
    if !(shape > T::zero() && shape <= T::one()) {
        return Err(CoreError::InvalidInput("shape outside (0,1]".into()));
    }
    Ok(mean / shape)
}

/// Unconstrained Gamma shape approximation from the log-moment gap
/// s = log(mu) - mean_log.
pub fn shape_mle_approx<T: Scalar>(mean: T, mean_log: T) -> Result<T> {
    let s = (mean.ln() - mean_log).as_f64();
    if !(s > 0.0) || !s.is_finite() {
        return Err(CoreError::DegenerateClass(format!(
            "log-moment gap s = {s} not positive; samples are constant"
        )));
    }
    let a = (3.0 - s + ((3.0 - s).powi(2) + 24.0 * s).sqrt()) / (12.0 * s);
    Ok(T::of_f64(a))
}

/// Max weight over a class: attained at the minimum magnitude.
fn w_hat<T: Scalar>(f: &ClassFeature<T>, stat: &ClassStat<T>, eps: T) -> T {
    T::one() / f.scale + (T::one() - f.shape) / (stat.min + eps)
}

/// Min weight over a class: attained at the maximum magnitude.
fn w_tilde<T: Scalar>(f: &ClassFeature<T>, stat: &ClassStat<T>, eps: T) -> T {
    T::one() / f.scale + (T::one() - f.shape) / (stat.max + eps)
}

/// Closed interval of admissible shapes; `None` when empty.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShapeInterval<T: Scalar> {
    pub lo: T,
    pub hi: T,
}

impl<T: Scalar> ShapeInterval<T> {
    pub fn clip(&self, a: T) -> T {
        a.max(self.lo).min(self.hi)
    }
}

/// Solve w(a; mu, g) <= bound (when `upper_on_w`) or w(a; mu, g) >= bound
/// for a, given that w is affine in a with slope (g - mu) / (mu (g + eps))
/// ... returns the implied lower bound on a, or None when the constraint
/// cannot be met by any a in (0, 1].
fn shape_lower_bound<T: Scalar>(
    mean: T,
    g: T,
    eps: T,
    bound: T,
    weight_must_not_exceed: bool,
) -> Option<T> {
    let ge = g + eps;
    let intercept = T::one() / ge; // w(0)
    let slope = (ge - mean) / (mean * ge); // w(a) = intercept + slope * a
    let tiny = T::of_f64(1e-12) * (T::one() / mean).max(intercept);
    if slope.abs() <= tiny {
        // constant weight in a: either always satisfied or never
        let ok = if weight_must_not_exceed {
            intercept <= bound + tiny
        } else {
            intercept >= bound - tiny
        };
        return ok.then_some(T::zero());
    }
    let crossing = (bound - intercept) / slope;
    match (weight_must_not_exceed, slope > T::zero()) {
        // w <= bound with w decreasing in a -> a >= crossing
        (true, false) => Some(crossing),
        // w >= bound with w increasing in a -> a >= crossing
        (false, true) => Some(crossing),
        // w <= bound with w increasing in a -> a <= crossing: satisfiable on
        // (0, min(1, crossing)], expressed as lower bound 0 when feasible
        (true, true) => (crossing > T::zero()).then_some(T::zero()),
        (false, false) => (crossing > T::zero()).then_some(T::zero()),
    }
}

/// Feasible shape interval for one class under the ordering constraints,
/// with the other classes' weight extremes held at `prev` features.
///
/// Target: max target weight <= min background weight.
/// Background: max target weight <= min background weight (lower bound via
/// the background max magnitude) and max background weight <= min shadow
/// weight. Shadow: max background weight <= min shadow weight.
pub fn shape_feasible_set<T: Scalar>(
    class: Label,
    stats: &ClassStats<T>,
    prev: &SemanticFeatures<T>,
    eps: T,
) -> Result<Option<ShapeInterval<T>>> {
    let three_class = prev.shadow.is_some();
    let stat = stats.get(class);
    if stat.count == 0 || !(stat.mean > T::zero()) {
        return Err(CoreError::DegenerateClass(format!("{class:?} empty")));
    }
    let mut lo = T::zero();
    let push = |b: Option<T>, lo: &mut T, feasible: &mut bool| match b {
        Some(v) => *lo = lo.max(v),
        None => *feasible = false,
    };
    let mut feasible = true;
    match class {
        Label::Target => {
            // max target weight (at min magnitude) <= min background weight
            let wb_min = w_tilde(&prev.background, &stats.background, eps);
            push(
                shape_lower_bound(stat.mean, stat.min, eps, wb_min, true),
                &mut lo,
                &mut feasible,
            );
        }
        Label::Background => {
            let wt_max = w_hat(&prev.target, &stats.target, eps);
            // min background weight (at max magnitude) >= max target weight
            push(
                shape_lower_bound(stat.mean, stat.max, eps, wt_max, false),
                &mut lo,
                &mut feasible,
            );
            if three_class {
                let ws_min = w_tilde(prev.shadow.as_ref().unwrap(), &stats.shadow, eps);
                // max background weight (at min magnitude) <= min shadow weight
                push(
                    shape_lower_bound(stat.mean, stat.min, eps, ws_min, true),
                    &mut lo,
                    &mut feasible,
                );
            }
        }
        Label::Shadow => {
            if !three_class {
                return Err(CoreError::MissingClassFeatures("shadow"));
            }
            let wb_max = w_hat(&prev.background, &stats.background, eps);
            // min shadow weight (at max magnitude) >= max background weight
            push(
                shape_lower_bound(stat.mean, stat.max, eps, wb_max, false),
                &mut lo,
                &mut feasible,
            );
        }
    }
    // eps perturbs the bounds by O(eps); a marginal overshoot of 1 is
    // numerical, not a genuinely empty set
    if !feasible || lo > T::one() + eps {
        return Ok(None);
    }
    Ok(Some(ShapeInterval {
        lo: lo.min(T::one()).max(T::of_f64(1e-6)),
        hi: T::one(),
    }))
}

/// Restricted objective of the shape subproblem, summed over the classes
/// present: h(a) = N log Gamma(a) + N a log(mu/a) + a N - a sum log(|g|+eps).
pub fn shape_objective<T: Scalar>(features: &SemanticFeatures<T>, stats: &ClassStats<T>) -> f64 {
    let mut total = 0.0;
    for label in features.classes() {
        let stat = stats.get(label);
        if stat.count == 0 {
            continue;
        }
        let f = features.get(label).expect("class checked present");
        let n = stat.count as f64;
        let a = f.shape.as_f64();
        let mu = stat.mean.as_f64();
        total += n * ln_gamma(a) + n * a * (mu / a).ln() + a * n - a * n * stat.mean_log.as_f64();
    }
    total
}

const FEATURE_PASSES: usize = 20;
const FEATURE_TOL: f64 = 1e-6;

/// Max-target-weight <= min-background-weight (and, with three classes,
/// max-background <= min-shadow), evaluated at the class magnitude
/// extremes.
fn ordering_holds<T: Scalar>(theta: &SemanticFeatures<T>, stats: &ClassStats<T>, eps: T) -> bool {
    let tol = T::of_f64(1e-12);
    let wt = w_hat(&theta.target, &stats.target, eps);
    let wb = w_tilde(&theta.background, &stats.background, eps);
    if wt > wb + tol * wb.abs().max(T::one()) {
        return false;
    }
    if let Some(sh) = &theta.shadow {
        if stats.shadow.count > 0 {
            let wbh = w_hat(&theta.background, &stats.background, eps);
            let ws = w_tilde(sh, &stats.shadow, eps);
            if wbh > ws + tol * ws.abs().max(T::one()) {
                return false;
            }
        }
    }
    true
}

/// Coordinate-descent update of all class features: shape via the
/// closed-form approximation clipped into its feasible interval (order
/// target, background, shadow), then scale b = mu / a. Falls back to
/// a = 1 with ordering enforced through the scales when some feasible set
/// is empty.
pub fn feature_update<T: Scalar>(
    g: &ComplexImage<T>,
    labels: &LabelMap,
    eps: T,
    prev: &SemanticFeatures<T>,
) -> Result<SemanticFeatures<T>> {
    let stats = class_stats(g, labels, eps)?;
    if stats.target.count == 0 || !(stats.target.mean > T::zero()) {
        return Err(CoreError::DegenerateClass("target class empty".into()));
    }
    let three_class = prev.shadow.is_some() && stats.shadow.count > 0;
    if stats.background.count == 0 || !(stats.background.mean > T::zero()) {
        return Err(CoreError::DegenerateClass("background class empty".into()));
    }

    let order: &[Label] = if three_class {
        &[Label::Target, Label::Background, Label::Shadow]
    } else {
        &[Label::Target, Label::Background]
    };

    let mut theta = SemanticFeatures {
        target: prev.target,
        background: prev.background,
        shadow: three_class.then(|| {
            prev.shadow.unwrap_or(ClassFeature {
                shape: T::one(),
                scale: stats.shadow.mean.max(T::of_f64(1e-12)),
            })
        }),
    };
    let mut obj = shape_objective(&theta, &stats);
    let mut any_empty = false;

    for _ in 0..FEATURE_PASSES {
        // empty sets from a previous pass may reopen once the coupled
        // extremes move, so the flag is per pass
        any_empty = false;
        for &label in order {
            let stat = *stats.get(label);
            let interval = shape_feasible_set(label, &stats, &theta, eps)?;
            let shape = match interval {
                Some(q) => {
                    let raw =
                        shape_mle_approx(stat.mean, stat.mean_log).unwrap_or_else(|_| T::one());
                    q.clip(raw.min(T::one()))
                }
                None => {
                    any_empty = true;
                    T::one()
                }
            };
            let scale = scale_update(stat.mean, shape)?;
            let f = ClassFeature { shape, scale };
            match label {
                Label::Target => theta.target = f,
                Label::Background => theta.background = f,
                Label::Shadow => theta.shadow = Some(f),
            }
        }
        let next = shape_objective(&theta, &stats);
        if (obj - next).abs() <= FEATURE_TOL * obj.abs().max(1e-300) {
            obj = next;
            break;
        }
        obj = next;
    }
    let _ = obj;

    // coordinate descent fixes each class against the others' previous
    // values, so verify the coupled ordering on the final point and fall
    // back when it drifted
    if !any_empty && !ordering_holds(&theta, &stats, eps) {
        any_empty = true;
    }

    if any_empty {
        // ordering through the scales alone: w = 1/b, so b_t >= b_b >= b_s
        theta.target.shape = T::one();
        theta.background.shape = T::one();
        theta.target.scale = stats.target.mean;
        theta.background.scale = stats.background.mean.min(theta.target.scale);
        if let Some(sh) = theta.shadow.as_mut() {
            sh.shape = T::one();
            sh.scale = stats
                .shadow
                .mean
                .max(T::of_f64(1e-12))
                .min(theta.background.scale);
        }
    }
    Ok(theta)
}
