//! Global alternation: image recovery, semantic label inference, size
//! refinement, feature update, weight update, under a progressive
//! regularization schedule.

use crate::error::{CoreError, Result};
use crate::features::{class_stats, feature_update, ClassFeature, SemanticFeatures};
use crate::math::stage_seed;
use crate::model::{ComplexImage, MeasurementVector, SamplingMask};
use crate::scalar::Scalar;
use crate::semantics::{
    assign_semantic_labels, collapse_check, fcm_cluster, icm_infer, refine_by_size, LabelMap,
    MrfConfig, SizePrior,
};
use crate::solver::{
    adjoint_init, fista_weighted_l1, irw_l1, semantic_weights, SolverConfig, WeightMatrix,
};

/// Parameters of the full reconstruction loop.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct PipelineConfig {
    /// Final regularization weight lambda.
    pub lambda: f64,
    /// Schedule rate constant lambda_0 in lambda^(k) = min(e^k / lambda_0, lambda).
    pub lambda0: f64,
    /// MRF smoothness weight.
    pub beta: f64,
    /// Maximum global iterations T.
    pub max_iter: usize,
    /// Iteration at which label inference drops the shadow class.
    pub k_switch: usize,
    /// Relative image-change stop for the global loop.
    pub tol: f64,
    pub size_prior: SizePrior,
    pub solver: SolverConfig,
    pub mrf: MrfConfig,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            lambda: 0.25,
            lambda0: 50.0,
            beta: 1.0,
            max_iter: 10,
            k_switch: 6,
            tol: 1e-3,
            size_prior: SizePrior::new(8, 4096).expect("static bounds"),
            solver: SolverConfig::default(),
            mrf: MrfConfig::default(),
            seed: 0,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0) || !(self.lambda0 > 0.0) {
            return Err(CoreError::InvalidInput(
                "lambda and lambda0 must be positive".into(),
            ));
        }
        if self.max_iter == 0 {
            return Err(CoreError::InvalidInput("max_iter must be >= 1".into()));
        }
        self.solver.validate()
    }
}

/// Progressive regularization weight lambda^(k) = min(e^k / lambda_0, lambda).
pub fn lambda_schedule(k: usize, lambda0: f64, lambda: f64) -> f64 {
    ((k as f64).exp() / lambda0).min(lambda)
}

/// Per-iteration diagnostics of one run.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct IterationDiag {
    pub k: usize,
    pub lambda: f64,
    /// Fraction of labels that changed versus the previous iteration.
    pub changed_labels: f64,
    /// Relative image change versus the previous iteration.
    pub image_change: f64,
    /// Number of semantic classes in play (2 or 3).
    pub n_classes: usize,
    /// PTCR against truth labels when provided.
    pub ptcr_db: Option<f64>,
}

/// Output of a full reconstruction run.
#[derive(Debug, Clone)]
pub struct RunResult<T: Scalar> {
    pub image: ComplexImage<T>,
    pub labels: LabelMap,
    pub features: SemanticFeatures<T>,
    pub diagnostics: Vec<IterationDiag>,
    /// Per-iteration image snapshots, recorded when requested.
    pub snapshots: Vec<ComplexImage<T>>,
    /// Per-iteration refined label maps, recorded when requested.
    pub label_trace: Vec<LabelMap>,
    /// Per-iteration post-update features, recorded when requested.
    pub feature_trace: Vec<SemanticFeatures<T>>,
}

/// Initial features for a fresh label map: a_c = 1, b_c = mu_c.
fn init_features<T: Scalar>(
    g: &ComplexImage<T>,
    labels: &LabelMap,
    eps: T,
    three_class: bool,
) -> Result<SemanticFeatures<T>> {
    let stats = class_stats(g, labels, eps)?;
    // classes shrunk to exactly zero keep a floor scale so their weights
    // stay finite; scales are clamped into the mu_s <= mu_b <= mu_t order
    // so the implied weights 1/b never invert the class ordering
    let floor = eps.max(T::of_f64(1e-12));
    let b_t = stats.target.mean.max(floor);
    let b_b = stats.background.mean.max(floor).min(b_t);
    let feature = |scale: T| ClassFeature {
        shape: T::one(),
        scale,
    };
    Ok(SemanticFeatures {
        target: feature(b_t),
        background: feature(b_b),
        shadow: three_class.then(|| feature(stats.shadow.mean.max(floor).min(b_b))),
    })
}

/// Label inference for one iteration: FCM init, semantic assignment, ICM,
/// size refinement. Returns the refined labels and the features used.
fn infer_labels<T: Scalar>(
    g: &ComplexImage<T>,
    cfg: &PipelineConfig,
    k: usize,
    n_classes: usize,
    prev_features: Option<&SemanticFeatures<T>>,
    eps: T,
) -> Result<(LabelMap, SemanticFeatures<T>)> {
    let mags = g.magnitudes();
    let fcm = fcm_cluster(
        &mags,
        n_classes,
        2.0,
        1e-6,
        100,
        stage_seed(cfg.seed, k as u32, "fcm"),
    )?;
    let init = assign_semantic_labels(&fcm.crisp, fcm.n_clusters, &mags, g.rows(), g.cols())?;

    let three_class = n_classes == 3;
    let theta = match prev_features {
        // keep previous features only when the class sets agree
        Some(prev) if prev.shadow.is_some() == three_class => prev.clone(),
        _ => init_features(g, &init, eps, three_class)?,
    };

    let mut mrf = cfg.mrf.clone();
    mrf.beta = cfg.beta;
    mrf.seed = stage_seed(cfg.seed, k as u32, "icm");
    let inferred = icm_infer(g, &theta, &init, &mrf, eps)?;
    let refined = refine_by_size(&inferred, &cfg.size_prior);
    if refined.count(crate::semantics::Label::Target) == 0 {
        return Err(CoreError::DegenerateClass(
            "no target pixels survived refinement".into(),
        ));
    }
    Ok((refined, theta))
}

/// Full target-enhanced reconstruction (Algorithm 1 of the alternation).
///
/// `truth` only feeds the per-iteration PTCR diagnostic.
pub fn tar_imaging<T: Scalar>(
    m: &MeasurementVector<T>,
    mask: &SamplingMask,
    cfg: &PipelineConfig,
    truth: Option<&LabelMap>,
) -> Result<RunResult<T>> {
    tar_imaging_traced(m, mask, cfg, truth, false)
}

/// Like [`tar_imaging`] but optionally records an image snapshot per
/// iteration for diagnostics.
pub fn tar_imaging_traced<T: Scalar>(
    m: &MeasurementVector<T>,
    mask: &SamplingMask,
    cfg: &PipelineConfig,
    truth: Option<&LabelMap>,
    keep_snapshots: bool,
) -> Result<RunResult<T>> {
    cfg.validate()?;
    let mut g = adjoint_init(m)?;
    let mut weights: Option<WeightMatrix<T>> = None;
    let mut features: Option<SemanticFeatures<T>> = None;
    let mut labels: Option<LabelMap> = None;
    let mut two_class_mode = false;
    let mut diagnostics = Vec::new();
    let mut snapshots = Vec::new();
    let mut label_trace = Vec::new();
    let mut feature_trace = Vec::new();

    for k in 1..=cfg.max_iter {
        let lambda_k = lambda_schedule(k, cfg.lambda0, cfg.lambda);
        let mut solver = cfg.solver.clone();
        solver.lambda = lambda_k;

        let next = match &weights {
            // first pass: identity weights, plain weighted-l1 solve
            None => {
                let w = WeightMatrix::ones(g.rows(), g.cols());
                fista_weighted_l1(m, mask, &w, &solver, &g)?.0
            }
            Some(w) => {
                // IRW-l1 from the current point; reweighting refreshes the
                // semantic weights as the magnitudes move
                let base = w.clone();
                let feats = features.clone();
                let labs = labels.clone();
                let weight_fn = move |img: &ComplexImage<T>, eps: T| match (&feats, &labs) {
                    (Some(f), Some(l)) => semantic_weights(img, l, f, eps),
                    _ => Ok(base.clone()),
                };
                irw_l1(m, mask, &weight_fn, &solver, &g)?.0
            }
        };

        let mut diff2 = T::zero();
        for (a, b) in next.as_slice().iter().zip(g.as_slice()) {
            diff2 += (a - b).norm_sqr();
        }
        let image_change = (diff2.sqrt() / next.norm().max(T::of_f64(1e-300))).as_f64();
        let prev_g = std::mem::replace(&mut g, next);
        if keep_snapshots {
            snapshots.push(g.clone());
        }
        let eps = solver.eps_for(&g);

        // semantic stage; degenerate classes force two-class mode
        let n_classes = if two_class_mode {
            2
        } else {
            match &labels {
                Some(l) => collapse_check(l, k, cfg.k_switch),
                None => {
                    if k >= cfg.k_switch {
                        2
                    } else {
                        3
                    }
                }
            }
        };
        if n_classes == 2 {
            two_class_mode = true;
        }

        let (new_labels, theta0) = match infer_labels(&g, cfg, k, n_classes, features.as_ref(), eps)
        {
            Ok(v) => v,
            Err(CoreError::DegenerateClass(_) | CoreError::DegenerateInput(_))
                if !two_class_mode =>
            {
                two_class_mode = true;
                match infer_labels(&g, cfg, k, 2, None, eps) {
                    Ok(v) => v,
                    // collapsed image after the first iteration: keep
                    // the previous state and stop
                    Err(CoreError::DegenerateClass(_) | CoreError::DegenerateInput(_)) if k > 1 => {
                        g = prev_g;
                        if keep_snapshots {
                            snapshots.pop();
                        }
                        break;
                    }
                    Err(e) => return Err(e),
                }
            }
            Err(CoreError::DegenerateClass(_) | CoreError::DegenerateInput(_)) if k > 1 => {
                g = prev_g;
                if keep_snapshots {
                    snapshots.pop();
                }
                break;
            }
            Err(e) => return Err(e),
        };

        let new_features = match feature_update(&g, &new_labels, eps, &theta0) {
            Ok(f) => f,
            Err(CoreError::DegenerateClass(_)) => {
                // a class emptied or shrank to zero: rebuild consistent
                // unit-shape features from the current stats rather than
                // abort or keep features fit to the previous iterate
                init_features(&g, &new_labels, eps, theta0.shadow.is_some())?
            }
            Err(e) => return Err(e),
        };

        let changed = match &labels {
            Some(prev) => {
                let n = prev
                    .as_slice()
                    .iter()
                    .zip(new_labels.as_slice())
                    .filter(|(a, b)| a != b)
                    .count();
                n as f64 / prev.as_slice().len() as f64
            }
            None => 1.0,
        };

        diagnostics.push(IterationDiag {
            k,
            lambda: lambda_k,
            changed_labels: changed,
            image_change,
            n_classes: if two_class_mode { 2 } else { 3 },
            ptcr_db: truth.map(|t| crate::eval::ptcr(&g, t)).transpose()?,
        });

        weights = Some(semantic_weights(&g, &new_labels, &new_features, eps)?);
        if keep_snapshots {
            label_trace.push(new_labels.clone());
            feature_trace.push(new_features.clone());
        }
        labels = Some(new_labels);
        features = Some(new_features);

        if k > 1 && image_change < cfg.tol {
            break;
        }
    }

    Ok(RunResult {
        image: g,
        labels: labels.expect("at least one iteration"),
        features: features.expect("at least one iteration"),
        diagnostics,
        snapshots,
        label_trace,
        feature_trace,
    })
}
