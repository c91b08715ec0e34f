//! Assignment costs between camera-A and camera-B tracklets under a metric.
//!
//! The combined cost is `softplus(C_S + lambda * C_N)` where `C_S` is the mean
//! frame-to-frame distance of two tracklets and `C_N` the mean distance
//! between their same-camera kNN representatives.

use nalgebra::{DMatrix, DVector};

use crate::error::{DgmError, Result};
use crate::model::{validate_bundle, CameraGraph, CostMatrix, Metric, Tracklet};

/// Squared Mahalanobis distance `(u-v)^T M (u-v)`, clamped at zero.
pub fn mahalanobis(metric: &Metric, u: &DVector<f64>, v: &DVector<f64>) -> Result<f64> {
    check_dim(metric.dim(), u.len())?;
    check_dim(metric.dim(), v.len())?;
    Ok(metric.quadratic_form(&(u - v)).max(0.0))
}

fn check_dim(expected: usize, found: usize) -> Result<()> {
    if expected != found {
        return Err(DgmError::DimensionMismatch { expected, found });
    }
    Ok(())
}

/// `log(1 + e^z)` without overflow.
pub fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

/// Mean distance over all frame pairs of two tracklets.
pub fn sequence_cost(metric: &Metric, t_i: &Tracklet, t_j: &Tracklet) -> Result<f64> {
    let mut total = 0.0;
    for u in t_i.frames() {
        for v in t_j.frames() {
            total += mahalanobis(metric, u, v)?;
        }
    }
    Ok(total / (t_i.len() * t_j.len()) as f64)
}

/// The kNN neighborhood of one tracklet within its own camera.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NeighborSet {
    pub owner: usize,
    /// Sorted by ascending distance, ties by index.
    pub members: Vec<usize>,
}

impl NeighborSet {
    pub fn contains(&self, idx: usize) -> bool {
        self.members.contains(&idx)
    }
}

/// kNN neighborhoods over the graph's representatives; the owner is excluded
/// and ties go to the lower index.
pub fn knn_neighborhoods(graph: &CameraGraph, metric: &Metric, k: usize) -> Result<Vec<NeighborSet>> {
    knn_of_points(graph.representatives(), metric, k)
}

pub(crate) fn knn_of_points(
    points: &[DVector<f64>],
    metric: &Metric,
    k: usize,
) -> Result<Vec<NeighborSet>> {
    let m = points.len();
    let mut dist = DMatrix::zeros(m, m);
    for i in 0..m {
        for j in (i + 1)..m {
            let d = mahalanobis(metric, &points[i], &points[j])?;
            dist[(i, j)] = d;
            dist[(j, i)] = d;
        }
    }
    Ok((0..m)
        .map(|owner| {
            let mut others: Vec<usize> = (0..m).filter(|&o| o != owner).collect();
            others.sort_by(|&x, &y| {
                dist[(owner, x)]
                    .total_cmp(&dist[(owner, y)])
                    .then(x.cmp(&y))
            });
            others.truncate(k);
            NeighborSet {
                owner,
                members: others,
            }
        })
        .collect())
}

/// Mean distance over the cross pairs of two neighborhoods' representatives.
pub fn neighborhood_cost(
    metric: &Metric,
    nbr_i: &NeighborSet,
    nbr_j: &NeighborSet,
    reps_a: &[DVector<f64>],
    reps_b: &[DVector<f64>],
) -> Result<f64> {
    if nbr_i.members.is_empty() || nbr_j.members.is_empty() {
        return Err(DgmError::EmptyNeighborhood);
    }
    let mut total = 0.0;
    for &p in &nbr_i.members {
        for &q in &nbr_j.members {
            total += mahalanobis(metric, &reps_a[p], &reps_b[q])?;
        }
    }
    Ok(total / (nbr_i.members.len() * nbr_j.members.len()) as f64)
}

/// `C(i,j) = softplus(C_S(i,j) + lambda * C_N(i,j))`.
pub fn combine_costs(
    sequence: &DMatrix<f64>,
    neighborhood: &DMatrix<f64>,
    lambda: f64,
) -> Result<CostMatrix> {
    if sequence.shape() != neighborhood.shape() {
        return Err(DgmError::DimensionMismatch {
            expected: sequence.len(),
            found: neighborhood.len(),
        });
    }
    CostMatrix::new(sequence.zip_map(neighborhood, |s, n| softplus(s + lambda * n)))
}

/// The two cost components before they are combined.
#[derive(Debug, Clone)]
pub struct CostParts {
    pub sequence: DMatrix<f64>,
    pub neighborhood: DMatrix<f64>,
}

/// Computes `C_S` and `C_N` for every pair.
///
/// Both are means of quadratic forms, so each expands into per-tracklet terms
/// plus one cross term: `mean (u-v)^T M (u-v) = mean u^T M u + mean v^T M v - 2 u_bar^T M v_bar`.
/// Inputs are shifted by a common offset first to limit cancellation.
pub fn cost_parts(a: &CameraGraph, b: &CameraGraph, metric: &Metric, k: usize) -> Result<CostParts> {
    let dim = validate_bundle(a, b)?;
    check_dim(metric.dim(), dim)?;
    let mat = metric.matrix();

    let mut offset = DVector::zeros(dim);
    for r in a.representatives().iter().chain(b.representatives()) {
        offset += r;
    }
    offset /= (a.len() + b.len()) as f64;

    let centered = |g: &CameraGraph| -> Vec<DVector<f64>> {
        g.representatives().iter().map(|r| r - &offset).collect()
    };
    let reps_a = centered(a);
    let reps_b = centered(b);

    // mean_f f^T M f over each tracklet's (shifted) frames
    let frame_energy = |g: &CameraGraph| -> Vec<f64> {
        g.tracklets()
            .iter()
            .map(|t| {
                t.frames()
                    .iter()
                    .map(|f| metric.quadratic_form(&(f - &offset)))
                    .sum::<f64>()
                    / t.len() as f64
            })
            .collect()
    };
    let energy_a = frame_energy(a);
    let energy_b = frame_energy(b);

    let ra = stack(&reps_a);
    let rb = stack(&reps_b);
    let cross = &ra * mat * rb.transpose();
    let sequence = DMatrix::from_fn(a.len(), b.len(), |i, j| {
        (energy_a[i] + energy_b[j] - 2.0 * cross[(i, j)]).max(0.0)
    });

    let nbr_a = knn_neighborhoods(a, metric, k)?;
    let nbr_b = knn_neighborhoods(b, metric, k)?;
    let degenerate = nbr_a.iter().chain(&nbr_b).any(|s| s.members.is_empty());
    let neighborhood = if degenerate {
        DMatrix::zeros(a.len(), b.len())
    } else {
        let summarize = |sets: &[NeighborSet], reps: &[DVector<f64>]| {
            let mut energies = Vec::with_capacity(sets.len());
            let mut centroids = Vec::with_capacity(sets.len());
            for s in sets {
                let count = s.members.len() as f64;
                let mut c = DVector::zeros(dim);
                let mut e = 0.0;
                for &p in &s.members {
                    c += &reps[p];
                    e += metric.quadratic_form(&reps[p]);
                }
                energies.push(e / count);
                centroids.push(c / count);
            }
            (energies, stack(&centroids))
        };
        let (ea, ca) = summarize(&nbr_a, &reps_a);
        let (eb, cb) = summarize(&nbr_b, &reps_b);
        let cross = &ca * mat * cb.transpose();
        DMatrix::from_fn(a.len(), b.len(), |i, j| {
            (ea[i] + eb[j] - 2.0 * cross[(i, j)]).max(0.0)
        })
    };

    Ok(CostParts {
        sequence,
        neighborhood,
    })
}

/// The full `m x n` combined cost matrix.
pub fn assignment_costs(
    a: &CameraGraph,
    b: &CameraGraph,
    metric: &Metric,
    lambda: f64,
    k: usize,
) -> Result<CostMatrix> {
    let parts = cost_parts(a, b, metric, k)?;
    combine_costs(&parts.sequence, &parts.neighborhood, lambda)
}

/// Rows of the returned matrix are the given vectors.
pub(crate) fn stack(rows: &[DVector<f64>]) -> DMatrix<f64> {
    let dim = rows.first().map_or(0, |r| r.len());
    DMatrix::from_fn(rows.len(), dim, |i, j| rows[i][j])
}
