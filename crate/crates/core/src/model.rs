//! Shared domain types for two-camera label estimation.
//!
//! Everything here is immutable once built. Constructors check the invariants
//! and the rest of the crate relies on them.

use std::fmt;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{DgmError, Result};

/// A single per-frame descriptor.
pub type FrameFeature = DVector<f64>;

const SYMMETRY_TOL: f64 = 1e-10;
const PSD_TOL: f64 = 1e-10;

/// One person's frame sequence as seen by one camera.
#[derive(Debug, Clone, PartialEq)]
pub struct Tracklet {
    person_id: Option<u32>,
    frames: Vec<FrameFeature>,
}

impl Tracklet {
    pub fn new(person_id: Option<u32>, frames: Vec<FrameFeature>) -> Result<Self> {
        let Some(first) = frames.first() else {
            return Err(DgmError::EmptyTracklet(0));
        };
        let dim = first.len();
        for f in &frames {
            if f.len() != dim {
                return Err(DgmError::DimensionMismatch {
                    expected: dim,
                    found: f.len(),
                });
            }
            if f.iter().any(|v| !v.is_finite()) {
                return Err(DgmError::NonFinite("frame feature"));
            }
        }
        Ok(Self { person_id, frames })
    }

    /// Ground-truth tag. Only evaluation code should look at this.
    pub fn person_id(&self) -> Option<u32> {
        self.person_id
    }

    pub fn frames(&self) -> &[FrameFeature] {
        &self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.frames[0].len()
    }

    /// Arithmetic mean of the frames.
    pub fn mean(&self) -> DVector<f64> {
        let mut acc = DVector::zeros(self.dim());
        for f in &self.frames {
            acc += f;
        }
        acc / self.frames.len() as f64
    }
}

/// The tracklets of one camera with their cached mean representatives.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraGraph {
    tracklets: Vec<Tracklet>,
    representatives: Vec<DVector<f64>>,
}

impl CameraGraph {
    /// Builds a graph, checking that every tracklet shares one dimension.
    /// An empty graph is representable; [`validate_bundle`] rejects it.
    pub fn new(tracklets: Vec<Tracklet>) -> Result<Self> {
        if let Some(first) = tracklets.first() {
            let dim = first.dim();
            for t in &tracklets {
                if t.dim() != dim {
                    return Err(DgmError::DimensionMismatch {
                        expected: dim,
                        found: t.dim(),
                    });
                }
            }
        }
        let representatives = tracklets.iter().map(Tracklet::mean).collect();
        Ok(Self {
            tracklets,
            representatives,
        })
    }

    pub fn tracklets(&self) -> &[Tracklet] {
        &self.tracklets
    }

    pub fn representatives(&self) -> &[DVector<f64>] {
        &self.representatives
    }

    pub fn len(&self) -> usize {
        self.tracklets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tracklets.is_empty()
    }

    /// Feature dimension, or `None` for an empty graph.
    pub fn dim(&self) -> Option<usize> {
        self.tracklets.first().map(Tracklet::dim)
    }

    pub fn into_tracklets(self) -> Vec<Tracklet> {
        self.tracklets
    }
}

/// Checks that both cameras are non-empty and share a feature dimension.
pub fn validate_bundle(a: &CameraGraph, b: &CameraGraph) -> Result<usize> {
    let da = a.dim().ok_or(DgmError::EmptyGraph)?;
    let db = b.dim().ok_or(DgmError::EmptyGraph)?;
    if da != db {
        return Err(DgmError::DimensionMismatch {
            expected: da,
            found: db,
        });
    }
    Ok(da)
}

/// A symmetric positive semidefinite matrix defining `D_M(u, v) = (u-v)^T M (u-v)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Metric {
    m: DMatrix<f64>,
}

impl Metric {
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if !m.is_square() {
            return Err(DgmError::InvalidMetric(format!(
                "{}x{} is not square",
                m.nrows(),
                m.ncols()
            )));
        }
        if m.iter().any(|v| !v.is_finite()) {
            return Err(DgmError::NonFinite("metric"));
        }
        let asym = max_asymmetry(&m);
        if asym > SYMMETRY_TOL {
            return Err(DgmError::InvalidMetric(format!("asymmetry {asym:e}")));
        }
        let min_eig = min_eigenvalue(&m);
        if min_eig < -PSD_TOL {
            return Err(DgmError::InvalidMetric(format!(
                "smallest eigenvalue {min_eig:e}"
            )));
        }
        Ok(Self { m })
    }

    /// Caller guarantees the matrix is symmetric PSD (e.g. output of a PSD projection).
    pub(crate) fn from_psd_unchecked(m: DMatrix<f64>) -> Self {
        Self { m }
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            m: DMatrix::identity(dim, dim),
        }
    }

    pub fn dim(&self) -> usize {
        self.m.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.m
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.m
    }

    /// `v^T M v`
    pub fn quadratic_form(&self, v: &DVector<f64>) -> f64 {
        v.dot(&(&self.m * v))
    }

    pub fn scaled(&self, factor: f64) -> Self {
        assert!(factor >= 0.0, "a metric can only be scaled by a nonnegative factor");
        Self {
            m: &self.m * factor,
        }
    }
}

pub(crate) fn max_asymmetry(m: &DMatrix<f64>) -> f64 {
    let n = m.nrows();
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in (i + 1)..n {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

pub(crate) fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    let sym = (m + m.transpose()) * 0.5;
    SymmetricEigen::new(sym).eigenvalues.min()
}

/// The combined assignment cost between every camera-A and camera-B tracklet.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix {
    c: DMatrix<f64>,
    mean_cost: f64,
}

impl CostMatrix {
    pub fn new(c: DMatrix<f64>) -> Result<Self> {
        if c.is_empty() {
            return Err(DgmError::EmptyGraph);
        }
        if c.iter().any(|v| !v.is_finite()) {
            return Err(DgmError::NonFinite("cost matrix"));
        }
        if c.iter().any(|&v| v < 0.0) {
            return Err(DgmError::Parse("cost entries must be nonnegative".into()));
        }
        let mean_cost = c.mean();
        Ok(Self { c, mean_cost })
    }

    pub fn from_rows(rows: &[&[f64]]) -> Result<Self> {
        let m = rows.len();
        let n = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != n) {
            return Err(DgmError::Parse("ragged cost rows".into()));
        }
        Self::new(DMatrix::from_fn(m, n, |i, j| rows[i][j]))
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.c
    }

    pub fn rows(&self) -> usize {
        self.c.nrows()
    }

    pub fn cols(&self) -> usize {
        self.c.ncols()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.c[(i, j)]
    }

    /// `c_m`, the arithmetic mean of all entries.
    pub fn mean_cost(&self) -> f64 {
        self.mean_cost
    }
}

/// Where one camera-A tracklet is sent: a real camera-B column or the dummy node.
///
/// Real columns order before `Dummy`, which is what lexicographic tie-breaking uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Target {
    Column(usize),
    Dummy,
}

impl Target {
    pub fn column(self) -> Option<usize> {
        match self {
            Target::Column(j) => Some(j),
            Target::Dummy => None,
        }
    }

    pub fn is_dummy(self) -> bool {
        matches!(self, Target::Dummy)
    }
}

impl fmt::Display for Target {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Target::Column(j) => write!(f, "{j}"),
            Target::Dummy => f.write_str("dummy"),
        }
    }
}

/// A matching of camera-A rows to camera-B columns, injective on real columns.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Assignment {
    targets: Vec<Target>,
}

impl Assignment {
    pub fn new(targets: Vec<Target>, num_cols: usize) -> Result<Self> {
        let mut used = vec![false; num_cols];
        for (i, t) in targets.iter().enumerate() {
            if let Target::Column(j) = *t {
                if j >= num_cols {
                    return Err(DgmError::InvalidAssignment(format!(
                        "row {i} targets column {j} of {num_cols}"
                    )));
                }
                if used[j] {
                    return Err(DgmError::InvalidAssignment(format!(
                        "column {j} used more than once"
                    )));
                }
                used[j] = true;
            }
        }
        Ok(Self { targets })
    }

    pub fn all_dummy(rows: usize) -> Self {
        Self {
            targets: vec![Target::Dummy; rows],
        }
    }

    pub fn targets(&self) -> &[Target] {
        &self.targets
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn num_dummy(&self) -> usize {
        self.targets.iter().filter(|t| t.is_dummy()).count()
    }

    /// Whether row `i` is matched to column `j`.
    pub fn is_matched(&self, i: usize, j: usize) -> bool {
        self.targets[i] == Target::Column(j)
    }
}

/// Re-weighted labels: `e^{-C}` on confident matches, `-1` on hard negatives, `0` elsewhere.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftLabelMatrix {
    pub(crate) labels: DMatrix<f64>,
    pub(crate) pos_weight: Option<f64>,
    pub(crate) neg_weight: Option<f64>,
}

impl SoftLabelMatrix {
    pub fn labels(&self) -> &DMatrix<f64> {
        &self.labels
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.labels[(i, j)]
    }

    /// `1 / #positives`, absent when there are no positives.
    pub fn pos_weight(&self) -> Option<f64> {
        self.pos_weight
    }

    /// `1 / #hard negatives`, absent when there are none.
    pub fn neg_weight(&self) -> Option<f64> {
        self.neg_weight
    }

    pub fn num_positive(&self) -> usize {
        self.labels.iter().filter(|&&l| l > 0.0).count()
    }

    pub fn num_negative(&self) -> usize {
        self.labels.iter().filter(|&&l| l == -1.0).count()
    }

    /// Class-balancing weight for a cell, zero for ignored cells.
    pub fn weight(&self, i: usize, j: usize) -> f64 {
        let l = self.labels[(i, j)];
        if l > 0.0 {
            self.pos_weight.unwrap_or(0.0)
        } else if l == -1.0 {
            self.neg_weight.unwrap_or(0.0)
        } else {
            0.0
        }
    }
}

/// How the cost of sending a row to the dummy node is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode", content = "value")]
pub enum DummyCostMode {
    /// Mean of the cost matrix.
    Mean,
    Fixed(f64),
    /// Percentile in `[0, 100]` of the cost entries.
    Percentile(f64),
}

impl DummyCostMode {
    pub fn resolve(&self, costs: &CostMatrix) -> f64 {
        match *self {
            DummyCostMode::Mean => costs.mean_cost(),
            DummyCostMode::Fixed(v) => v,
            DummyCostMode::Percentile(p) => {
                let mut values: Vec<f64> = costs.matrix().iter().copied().collect();
                values.sort_by(f64::total_cmp);
                let rank = (p / 100.0) * (values.len() - 1) as f64;
                let lo = rank.floor() as usize;
                let hi = rank.ceil() as usize;
                let frac = rank - lo as f64;
                values[lo] + (values[hi] - values[lo]) * frac
            }
        }
    }
}

impl std::str::FromStr for DummyCostMode {
    type Err = DgmError;

    /// Accepts `mean`, `fixed:<value>`, `percentile:<p>` or a bare number.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || DgmError::ConfigInvalid(format!("unrecognised dummy cost {s:?}"));
        match s.split_once(':') {
            None if s == "mean" => Ok(DummyCostMode::Mean),
            None => s.parse().map(DummyCostMode::Fixed).map_err(|_| bad()),
            Some(("fixed", v)) => v.parse().map(DummyCostMode::Fixed).map_err(|_| bad()),
            Some(("percentile", v)) => v
                .parse()
                .map(DummyCostMode::Percentile)
                .map_err(|_| bad()),
            Some(_) => Err(bad()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DgmConfig {
    /// Weight of the neighborhood cost.
    pub lambda: f64,
    /// Neighborhood size.
    pub k: usize,
    pub max_iter: usize,
    /// Target dimension for PCA; inputs at or below it are left alone.
    pub pca_dim: usize,
    /// Frames per max-pooling window.
    pub pool_window: usize,
    pub dummy_cost_mode: DummyCostMode,
    /// Inner optimizer step budget per outer iteration.
    pub apg_max_steps: usize,
    pub apg_tol: f64,
    pub rng_seed: u64,
}

impl Default for DgmConfig {
    fn default() -> Self {
        Self {
            lambda: 0.5,
            k: 5,
            max_iter: 10,
            pca_dim: 600,
            pool_window: 10,
            dummy_cost_mode: DummyCostMode::Mean,
            apg_max_steps: 100,
            apg_tol: 1e-6,
            rng_seed: 0,
        }
    }
}

impl DgmConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: &str| Err(DgmError::ConfigInvalid(msg.to_string()));
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return fail("lambda must be finite and nonnegative");
        }
        if self.k < 1 {
            return fail("k must be at least 1");
        }
        if self.max_iter < 1 {
            return fail("max_iter must be at least 1");
        }
        if self.pool_window < 1 {
            return fail("pool_window must be at least 1");
        }
        if self.pca_dim < 1 {
            return fail("pca_dim must be at least 1");
        }
        match self.dummy_cost_mode {
            DummyCostMode::Fixed(v) if !v.is_finite() => return fail("dummy cost must be finite"),
            DummyCostMode::Percentile(p) if !(0.0..=100.0).contains(&p) => {
                return fail("dummy percentile must lie in [0, 100]")
            }
            _ => {}
        }
        if !(self.apg_tol >= 0.0) {
            return fail("apg_tol must be nonnegative");
        }
        Ok(())
    }
}
