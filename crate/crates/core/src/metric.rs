//! Weighted log-logistic metric learning over the PSD cone.
//!
//! Each training pair contributes `w * log(1 + exp(l * (D_M(diff) - c0)))`.
//! Positive soft labels pull `D_M` below the bias `c0`, hard negatives push it
//! above. The loss is minimised by accelerated proximal gradient where the
//! proximal step is the Frobenius projection onto the PSD cone.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::cost::{mahalanobis, softplus};
use crate::error::{DgmError, Result};
use crate::model::{validate_bundle, CameraGraph, Metric, SoftLabelMatrix};

/// Lower clamp for the camera bias.
pub const MIN_BIAS: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingPair {
    /// `x_bar_a^i - x_bar_b^j`
    pub diff: DVector<f64>,
    /// `-1` or a soft positive in `(0, 1]`.
    pub label: f64,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingPairs {
    pairs: Vec<TrainingPair>,
    c0: f64,
}

impl TrainingPairs {
    pub fn new(pairs: Vec<TrainingPair>, c0: f64) -> Result<Self> {
        if !(c0 > 0.0 && c0.is_finite()) {
            return Err(DgmError::ConfigInvalid(format!("bias c0 must be positive, got {c0}")));
        }
        if let Some(p) = pairs.iter().find(|p| p.label == 0.0) {
            return Err(DgmError::ConfigInvalid(format!(
                "zero-labelled pair with weight {} cannot be trained on",
                p.weight
            )));
        }
        let dim = pairs.first().map_or(0, |p| p.diff.len());
        if let Some(p) = pairs.iter().find(|p| p.diff.len() != dim) {
            return Err(DgmError::DimensionMismatch {
                expected: dim,
                found: p.diff.len(),
            });
        }
        Ok(Self { pairs, c0 })
    }

    /// Every nonzero cell of `labels`, as representative differences.
    pub fn from_labels(
        a: &CameraGraph,
        b: &CameraGraph,
        labels: &SoftLabelMatrix,
        c0: f64,
    ) -> Result<Self> {
        validate_bundle(a, b)?;
        let mut pairs = Vec::new();
        for (i, ra) in a.representatives().iter().enumerate() {
            for (j, rb) in b.representatives().iter().enumerate() {
                let label = labels.get(i, j);
                if label != 0.0 {
                    pairs.push(TrainingPair {
                        diff: ra - rb,
                        label,
                        weight: labels.weight(i, j),
                    });
                }
            }
        }
        Self::new(pairs, c0)
    }

    pub fn pairs(&self) -> &[TrainingPair] {
        &self.pairs
    }

    pub fn c0(&self) -> f64 {
        self.c0
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn with_scaled_weights(&self, factor: f64) -> Self {
        Self {
            pairs: self
                .pairs
                .iter()
                .map(|p| TrainingPair {
                    weight: p.weight * factor,
                    ..p.clone()
                })
                .collect(),
            c0: self.c0,
        }
    }
}

/// Mean representative distance between the two cameras, at least [`MIN_BIAS`].
pub fn camera_bias_c0(a: &CameraGraph, b: &CameraGraph, metric: &Metric) -> Result<f64> {
    validate_bundle(a, b)?;
    let mut total = 0.0;
    for ra in a.representatives() {
        for rb in b.representatives() {
            total += mahalanobis(metric, ra, rb)?;
        }
    }
    let mean = total / (a.len() * b.len()) as f64;
    Ok(mean.max(MIN_BIAS))
}

pub fn pair_loss(metric: &Metric, diff: &DVector<f64>, label: f64, c0: f64) -> f64 {
    softplus(label * (metric.quadratic_form(diff) - c0))
}

/// Weighted sum of pair losses.
pub fn total_loss(metric: &Metric, pairs: &TrainingPairs) -> f64 {
    loss_of(metric.matrix(), pairs)
}

fn loss_of(m: &DMatrix<f64>, pairs: &TrainingPairs) -> f64 {
    pairs
        .pairs
        .iter()
        .map(|p| p.weight * softplus(p.label * (p.diff.dot(&(m * &p.diff)) - pairs.c0)))
        .sum()
}

fn logistic(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `sum w * l * sigmoid(l * (D_M - c0)) * diff diff^T`
pub fn loss_gradient(metric: &Metric, pairs: &TrainingPairs) -> DMatrix<f64> {
    gradient_of(metric.matrix(), pairs)
}

fn gradient_of(m: &DMatrix<f64>, pairs: &TrainingPairs) -> DMatrix<f64> {
    let d = m.nrows();
    let mut grad = DMatrix::zeros(d, d);
    for p in &pairs.pairs {
        let dist = p.diff.dot(&(m * &p.diff));
        let coef = p.weight * p.label * logistic(p.label * (dist - pairs.c0));
        grad.ger(coef, &p.diff, &p.diff, 1.0);
    }
    symmetrize(grad)
}

fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    (&m + m.transpose()) * 0.5
}

/// Frobenius-nearest PSD matrix: symmetrise, then clamp negative eigenvalues to zero.
pub fn psd_project(m: &DMatrix<f64>) -> Result<Metric> {
    if !m.is_square() {
        return Err(DgmError::InvalidMetric("projection of a non-square matrix".into()));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(DgmError::EigenFailure);
    }
    let eig = SymmetricEigen::new(symmetrize(m.clone()));
    let clamped = eig.eigenvalues.map(|v| v.max(0.0));
    let vecs = &eig.eigenvectors;
    let mut scaled = vecs.clone();
    for (mut col, &lambda) in scaled.column_iter_mut().zip(clamped.iter()) {
        col *= lambda;
    }
    let out = symmetrize(&scaled * vecs.transpose());
    if out.iter().any(|v| !v.is_finite()) {
        return Err(DgmError::EigenFailure);
    }
    Ok(Metric::from_psd_unchecked(out))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ApgOptions {
    pub max_steps: usize,
    /// Stop once the relative loss decrease of an accepted step drops below this.
    pub tol: f64,
}

impl Default for ApgOptions {
    fn default() -> Self {
        Self {
            max_steps: 100,
            tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ApgOutcome {
    pub metric: Metric,
    /// Loss at the start followed by the loss after each accepted step.
    pub loss_history: Vec<f64>,
    pub steps: usize,
}

impl ApgOutcome {
    pub fn final_loss(&self) -> f64 {
        *self.loss_history.last().expect("history starts with the initial loss")
    }
}

const STEP_GROWTH: f64 = 1.5;
const MIN_STEP: f64 = 1e-30;

/// Accelerated proximal gradient with backtracking, PSD projection after
/// every step, and momentum restart whenever the loss would go up. The loss
/// history is non-increasing; in the worst case `m0` comes back unchanged.
pub fn apg_optimize(pairs: &TrainingPairs, m0: &Metric, options: ApgOptions) -> Result<ApgOutcome> {
    let mut x = m0.matrix().clone();
    let mut fx = loss_of(&x, pairs);
    let mut history = vec![fx];
    if pairs.is_empty() {
        return Ok(ApgOutcome {
            metric: m0.clone(),
            loss_history: history,
            steps: 0,
        });
    }
    if pairs.pairs[0].diff.len() != x.nrows() {
        return Err(DgmError::DimensionMismatch {
            expected: x.nrows(),
            found: pairs.pairs[0].diff.len(),
        });
    }

    // Curvature bound of the smooth loss: the logistic slope is at most 1/4.
    let lipschitz: f64 = pairs
        .pairs
        .iter()
        .map(|p| p.weight * p.label * p.label * p.diff.norm_squared().powi(2) / 4.0)
        .sum();
    let mut step = if lipschitz > 0.0 { 1.0 / lipschitz } else { 1.0 };

    let mut y = x.clone();
    let mut y_is_x = true;
    let mut theta = 1.0f64;
    let mut steps = 0;

    while steps < options.max_steps {
        steps += 1;
        let fy = if y_is_x { fx } else { loss_of(&y, pairs) };
        let grad = gradient_of(&y, pairs);

        let (z, fz) = loop {
            let candidate = psd_project(&(&y - &grad * step))?.into_matrix();
            let delta = &candidate - &y;
            let f_candidate = loss_of(&candidate, pairs);
            let model = fy + grad.dot(&delta) + delta.norm_squared() / (2.0 * step);
            if f_candidate <= model || step < MIN_STEP {
                break (candidate, f_candidate);
            }
            step *= 0.5;
        };

        if !(fz <= fx) {
            if y_is_x {
                // Even a plain projected step from the last iterate fails to descend.
                break;
            }
            y = x.clone();
            y_is_x = true;
            theta = 1.0;
            continue;
        }

        let theta_next = (1.0 + (1.0 + 4.0 * theta * theta).sqrt()) / 2.0;
        let momentum = (theta - 1.0) / theta_next;
        let rel = (fx - fz) / fx.abs().max(f64::MIN_POSITIVE);
        y = &z + (&z - &x) * momentum;
        y_is_x = momentum == 0.0;
        x = z;
        fx = fz;
        theta = theta_next;
        history.push(fx);
        step *= STEP_GROWTH;

        if rel < options.tol {
            break;
        }
    }

    Ok(ApgOutcome {
        metric: Metric::from_psd_unchecked(x),
        loss_history: history,
        steps,
    })
}
