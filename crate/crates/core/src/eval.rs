//! Scoring of estimated labels and of the learned metric.

use std::collections::HashSet;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::cost::{knn_neighborhoods, mahalanobis, sequence_cost};
use crate::error::{DgmError, Result};
use crate::model::{validate_bundle, Assignment, CameraGraph, Metric, Tracklet};

/// Ground truth for camera A: the matching camera-B index of each row, if any.
pub type TruthPairing = Vec<Option<usize>>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f_score: f64,
}

/// Precision over predicted non-dummy matches, recall over truth pairs.
/// Degenerate ratios are reported as zero.
pub fn label_prf(assignment: &Assignment, truth: &[Option<usize>]) -> Result<Prf> {
    if assignment.len() != truth.len() {
        return Err(DgmError::DimensionMismatch {
            expected: truth.len(),
            found: assignment.len(),
        });
    }
    let mut predicted = 0usize;
    let mut correct = 0usize;
    for (t, want) in assignment.targets().iter().zip(truth) {
        if let Some(j) = t.column() {
            predicted += 1;
            if *want == Some(j) {
                correct += 1;
            }
        }
    }
    let truth_pairs = truth.iter().filter(|t| t.is_some()).count();
    let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
    let precision = ratio(correct, predicted);
    let recall = ratio(correct, truth_pairs);
    let f_score = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    Ok(Prf {
        precision,
        recall,
        f_score,
    })
}

/// Gallery indices sorted by ascending distance, ties by index.
fn ranking(row: impl Iterator<Item = f64>) -> Vec<usize> {
    let values: Vec<f64> = row.collect();
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
    order
}

/// Cumulative matching characteristic: entry `k` is the fraction of queries
/// whose correct gallery item ranks within the top `k + 1`.
pub fn cmc(dist: &DMatrix<f64>, truth_col: &[usize]) -> Result<Vec<f64>> {
    let (q, g) = dist.shape();
    if truth_col.len() != q {
        return Err(DgmError::DimensionMismatch {
            expected: q,
            found: truth_col.len(),
        });
    }
    let mut hits = vec![0usize; g];
    for (qi, &want) in truth_col.iter().enumerate() {
        if want >= g {
            return Err(DgmError::Parse(format!("query {qi} targets gallery item {want} of {g}")));
        }
        let rank = ranking(dist.row(qi).iter().copied())
            .iter()
            .position(|&gi| gi == want)
            .expect("every gallery index is ranked");
        hits[rank] += 1;
    }
    let mut acc = 0usize;
    Ok(hits
        .into_iter()
        .map(|h| {
            acc += h;
            acc as f64 / q as f64
        })
        .collect())
}

/// Mean over queries of average precision.
pub fn mean_ap(dist: &DMatrix<f64>, relevant: &[Vec<usize>]) -> Result<f64> {
    let q = dist.nrows();
    if relevant.len() != q {
        return Err(DgmError::DimensionMismatch {
            expected: q,
            found: relevant.len(),
        });
    }
    if q == 0 {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for (qi, rel) in relevant.iter().enumerate() {
        let rel: HashSet<usize> = rel.iter().copied().collect();
        if rel.is_empty() {
            return Err(DgmError::Parse(format!("query {qi} has no relevant gallery items")));
        }
        let mut found = 0usize;
        let mut ap = 0.0;
        for (pos, gi) in ranking(dist.row(qi).iter().copied()).into_iter().enumerate() {
            if rel.contains(&gi) {
                found += 1;
                ap += found as f64 / (pos + 1) as f64;
            }
        }
        total += ap / rel.len() as f64;
    }
    Ok(total / q as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SetDistanceMode {
    /// Mean over all frame pairs.
    Mean,
    /// Minimum over frame pairs plus `alpha` times the mean.
    MinRegularized { alpha: f64 },
}

impl SetDistanceMode {
    pub const DEFAULT_ALPHA: f64 = 0.5;
}

impl std::str::FromStr for SetDistanceMode {
    type Err = DgmError;

    fn from_str(s: &str) -> Result<Self> {
        match s.split_once(':') {
            None if s == "mean" => Ok(SetDistanceMode::Mean),
            None if s == "min" || s == "min_regularized" => Ok(SetDistanceMode::MinRegularized {
                alpha: Self::DEFAULT_ALPHA,
            }),
            Some(("min", a) | ("min_regularized", a)) => a
                .parse()
                .map(|alpha| SetDistanceMode::MinRegularized { alpha })
                .map_err(|_| DgmError::ConfigInvalid(format!("bad alpha in {s:?}"))),
            _ => Err(DgmError::ConfigInvalid(format!("unknown set distance {s:?}"))),
        }
    }
}

pub fn test_set_distance(metric: &Metric, set_a: &Tracklet, set_b: &Tracklet, mode: SetDistanceMode) -> Result<f64> {
    match mode {
        SetDistanceMode::Mean => sequence_cost(metric, set_a, set_b),
        SetDistanceMode::MinRegularized { alpha } => {
            let mut min = f64::INFINITY;
            let mut sum = 0.0;
            for u in set_a.frames() {
                for v in set_b.frames() {
                    let d = mahalanobis(metric, u, v)?;
                    min = min.min(d);
                    sum += d;
                }
            }
            Ok(min + alpha * sum / (set_a.len() * set_b.len()) as f64)
        }
    }
}

/// Query-by-gallery matrix of set distances.
pub fn set_distance_matrix(
    metric: &Metric,
    queries: &CameraGraph,
    gallery: &CameraGraph,
    mode: SetDistanceMode,
) -> Result<DMatrix<f64>> {
    validate_bundle(queries, gallery)?;
    let mut out = DMatrix::zeros(queries.len(), gallery.len());
    for (i, q) in queries.tracklets().iter().enumerate() {
        for (j, g) in gallery.tracklets().iter().enumerate() {
            out[(i, j)] = test_set_distance(metric, q, g, mode)?;
        }
    }
    Ok(out)
}

/// Result of a retrieval evaluation keyed on person ids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReidScores {
    pub cmc: Vec<f64>,
    pub map: f64,
    /// Queries that had at least one gallery item of the same person.
    pub num_queries: usize,
}

/// Ranks the gallery for every query whose person id appears in the gallery.
/// CMC counts the best-ranked correct item per query.
pub fn reid_scores(
    metric: &Metric,
    queries: &CameraGraph,
    gallery: &CameraGraph,
    mode: SetDistanceMode,
) -> Result<ReidScores> {
    let full = set_distance_matrix(metric, queries, gallery, mode)?;
    let gallery_ids: Vec<Option<u32>> = gallery.tracklets().iter().map(Tracklet::person_id).collect();
    let mut rows = Vec::new();
    let mut relevant = Vec::new();
    for (qi, q) in queries.tracklets().iter().enumerate() {
        let Some(pid) = q.person_id() else { continue };
        let rel: Vec<usize> = (0..gallery.len()).filter(|&g| gallery_ids[g] == Some(pid)).collect();
        if !rel.is_empty() {
            rows.push(qi);
            relevant.push(rel);
        }
    }
    if rows.is_empty() {
        return Err(DgmError::Parse("no query shares a person id with the gallery".into()));
    }
    let dist = DMatrix::from_fn(rows.len(), gallery.len(), |r, g| full[(rows[r], g)]);

    // Single-target CMC on the closest relevant item of each query.
    let best: Vec<usize> = relevant
        .iter()
        .enumerate()
        .map(|(r, rel)| {
            let order = ranking(dist.row(r).iter().copied());
            *order.iter().find(|g| rel.contains(g)).expect("relevant set is non-empty")
        })
        .collect();
    let curve = cmc(&dist, &best)?;
    let map = mean_ap(&dist, &relevant)?;
    Ok(ReidScores {
        cmc: curve,
        map,
        num_queries: rows.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OverlapStats {
    pub same_id_overlap_rate: f64,
    pub diff_id_overlap_rate: f64,
}

/// How often two tracklets' same-camera kNN sets share a person, for
/// truly matching pairs versus non-matching pairs.
///
/// Camera-A neighbors are carried into camera B through `truth`; a pair
/// overlaps when the carried set meets the camera-B neighborhood. Every
/// non-matching pair among rows with a correspondence is counted.
pub fn knn_overlap_stats(
    a: &CameraGraph,
    b: &CameraGraph,
    metric: &Metric,
    k: usize,
    truth: &[Option<usize>],
) -> Result<OverlapStats> {
    validate_bundle(a, b)?;
    if truth.len() != a.len() {
        return Err(DgmError::DimensionMismatch {
            expected: a.len(),
            found: truth.len(),
        });
    }
    let nbr_a = knn_neighborhoods(a, metric, k)?;
    let nbr_b = knn_neighborhoods(b, metric, k)?;
    let carried: Vec<HashSet<usize>> = nbr_a
        .iter()
        .map(|s| s.members.iter().filter_map(|&p| truth[p]).collect())
        .collect();
    let overlaps = |i: usize, j: usize| nbr_b[j].members.iter().any(|q| carried[i].contains(q));

    let (mut same, mut same_total, mut diff, mut diff_total) = (0usize, 0usize, 0usize, 0usize);
    for (i, t) in truth.iter().enumerate() {
        let Some(ti) = *t else { continue };
        if ti >= b.len() {
            return Err(DgmError::Parse(format!("truth maps row {i} to column {ti} of {}", b.len())));
        }
        for j in 0..b.len() {
            let hit = overlaps(i, j) as usize;
            if j == ti {
                same += hit;
                same_total += 1;
            } else {
                diff += hit;
                diff_total += 1;
            }
        }
    }
    let rate = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
    Ok(OverlapStats {
        same_id_overlap_rate: rate(same, same_total),
        diff_id_overlap_rate: rate(diff, diff_total),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Target;
    use nalgebra::DVector;
    use rand::seq::{IndexedRandom, SliceRandom};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn t(frames: &[&[f64]]) -> Tracklet {
        Tracklet::new(None, frames.iter().map(|f| DVector::from_column_slice(f)).collect()).unwrap()
    }

    fn cols(targets: &[Option<usize>], n: usize) -> Assignment {
        Assignment::new(
            targets
                .iter()
                .map(|t| t.map_or(Target::Dummy, Target::Column))
                .collect(),
            n,
        )
        .unwrap()
    }

    #[test]
    fn prf_examples() {
        let truth = vec![Some(0), Some(1), Some(2), Some(3)];
        let perfect = cols(&truth, 4);
        let p = label_prf(&perfect, &truth).unwrap();
        assert_eq!((p.precision, p.recall, p.f_score), (1.0, 1.0, 1.0));

        let p = label_prf(&Assignment::all_dummy(4), &truth).unwrap();
        assert_eq!((p.precision, p.recall, p.f_score), (0.0, 0.0, 0.0));

        let one_wrong = cols(&[Some(0), Some(1), Some(2), Some(4)], 5);
        let p = label_prf(&one_wrong, &truth).unwrap();
        assert_eq!((p.precision, p.recall, p.f_score), (0.75, 0.75, 0.75));
    }

    #[test]
    fn prf_with_dummies_and_partial_truth() {
        // Two predicted, one correct; truth has three pairs.
        let truth = vec![Some(0), Some(1), None, Some(2)];
        let a = cols(&[Some(0), Some(2), None, None], 3);
        let p = label_prf(&a, &truth).unwrap();
        assert_eq!(p.precision, 0.5);
        assert!((p.recall - 1.0 / 3.0).abs() < 1e-15);
        assert!((p.f_score - 0.4).abs() < 1e-15);
    }

    #[test]
    fn cmc_examples() {
        let d = DMatrix::from_row_slice(2, 3, &[0.1, 0.5, 0.9, 0.7, 0.2, 0.3]);
        assert_eq!(cmc(&d, &[0, 1]).unwrap(), vec![1.0, 1.0, 1.0]);
        let single = DMatrix::from_row_slice(1, 5, &[0.2, 0.1, 0.3, 0.9, 0.8]);
        assert_eq!(cmc(&single, &[2]).unwrap(), vec![0.0, 0.0, 1.0, 1.0, 1.0]);
        // Ties go to the lower gallery index.
        let tie = DMatrix::from_row_slice(1, 3, &[0.5, 0.5, 0.5]);
        assert_eq!(cmc(&tie, &[1]).unwrap(), vec![0.0, 1.0, 1.0]);
    }

    fn brute_rank(row: &[f64], want: usize) -> usize {
        // Count items strictly closer, or equally close with a lower index.
        row.iter()
            .enumerate()
            .filter(|&(g, &d)| d < row[want] || (d == row[want] && g < want))
            .count()
    }

    #[test]
    fn cmc_matches_recount() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for _ in 0..20 {
            let d = DMatrix::from_fn(10, 20, |_, _| (rng.random_range(0..40) as f64) / 4.0);
            let truth: Vec<usize> = (0..10).map(|_| rng.random_range(0..20)).collect();
            let curve = cmc(&d, &truth).unwrap();
            for (k, &v) in curve.iter().enumerate() {
                let count = (0..10)
                    .filter(|&q| {
                        let row: Vec<f64> = d.row(q).iter().copied().collect();
                        brute_rank(&row, truth[q]) <= k
                    })
                    .count();
                assert_eq!(v, count as f64 / 10.0);
            }
            assert!(curve.windows(2).all(|w| w[0] <= w[1]));
            assert_eq!(*curve.last().unwrap(), 1.0);
        }
    }

    #[test]
    fn map_examples() {
        let d = DMatrix::from_row_slice(1, 4, &[0.1, 0.2, 0.3, 0.4]);
        assert_eq!(mean_ap(&d, &[vec![0, 1]]).unwrap(), 1.0);
        assert_eq!(mean_ap(&d, &[vec![0, 3]]).unwrap(), 0.75);
        let dup = DMatrix::from_row_slice(2, 4, &[0.1, 0.2, 0.3, 0.4, 0.1, 0.2, 0.3, 0.4]);
        assert_eq!(mean_ap(&dup, &[vec![0, 3], vec![0, 3]]).unwrap(), 0.75);
        assert!(mean_ap(&d, &[vec![]]).is_err());
    }

    #[test]
    fn map_matches_recount() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..20 {
            let d = DMatrix::from_fn(10, 20, |_, _| rng.random::<f64>());
            let relevant: Vec<Vec<usize>> = (0..10)
                .map(|_| {
                    let mut all: Vec<usize> = (0..20).collect();
                    all.shuffle(&mut rng);
                    all.truncate(rng.random_range(1..5));
                    all
                })
                .collect();
            let mut expected = 0.0;
            for q in 0..10 {
                let row: Vec<f64> = d.row(q).iter().copied().collect();
                let mut ranks: Vec<usize> = relevant[q].iter().map(|&g| brute_rank(&row, g)).collect();
                ranks.sort();
                let ap: f64 = ranks
                    .iter()
                    .enumerate()
                    .map(|(hit, &r)| (hit + 1) as f64 / (r + 1) as f64)
                    .sum();
                expected += ap / ranks.len() as f64;
            }
            let got = mean_ap(&d, &relevant).unwrap();
            assert!((got - expected / 10.0).abs() < 1e-15);
            assert!((0.0..=1.0).contains(&got));
        }
    }

    #[test]
    fn set_distance_examples() {
        let one = Metric::identity(1);
        let same = t(&[&[2.0]]);
        for mode in [SetDistanceMode::Mean, SetDistanceMode::MinRegularized { alpha: 0.5 }] {
            assert_eq!(test_set_distance(&one, &same, &same, mode).unwrap(), 0.0);
        }
        let a = t(&[&[0.0]]);
        let b = t(&[&[1.0], &[3.0]]);
        assert_eq!(test_set_distance(&one, &a, &b, SetDistanceMode::Mean).unwrap(), 5.0);
        assert_eq!(
            test_set_distance(&one, &a, &b, SetDistanceMode::MinRegularized { alpha: 0.0 }).unwrap(),
            1.0
        );
        assert_eq!(
            test_set_distance(&one, &a, &b, SetDistanceMode::MinRegularized { alpha: 0.5 }).unwrap(),
            3.5
        );
        assert_eq!("mean".parse::<SetDistanceMode>().unwrap(), SetDistanceMode::Mean);
        assert_eq!(
            "min:0.25".parse::<SetDistanceMode>().unwrap(),
            SetDistanceMode::MinRegularized { alpha: 0.25 }
        );
    }

    fn point_graph(points: &[DVector<f64>]) -> CameraGraph {
        CameraGraph::new(
            points
                .iter()
                .map(|p| Tracklet::new(None, vec![p.clone()]).unwrap())
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn identical_geometry_overlaps_fully() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pts: Vec<DVector<f64>> = (0..30).map(|_| DVector::from_fn(3, |_, _| rng.random::<f64>())).collect();
        let g = point_graph(&pts);
        let truth: Vec<Option<usize>> = (0..30).map(Some).collect();
        let s = knn_overlap_stats(&g, &g, &Metric::identity(3), 3, &truth).unwrap();
        assert_eq!(s.same_id_overlap_rate, 1.0);
        assert!(s.diff_id_overlap_rate < 1.0);
    }

    #[test]
    fn unrelated_geometry_overlaps_at_chance() {
        let (m, k) = (200usize, 2usize);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut pts = || -> Vec<DVector<f64>> {
            (0..m).map(|_| DVector::from_fn(2, |_, _| rng.random::<f64>())).collect()
        };
        let a = point_graph(&pts());
        let b = point_graph(&pts());
        let truth: Vec<Option<usize>> = (0..m).map(Some).collect();
        let s = knn_overlap_stats(&a, &b, &Metric::identity(2), k, &truth).unwrap();

        // Monte Carlo oracle: two random k-subsets of the other m-1 indices.
        let mut oracle_rng = ChaCha8Rng::seed_from_u64(99);
        let trials = 200_000;
        let mut hits = 0usize;
        let pool: Vec<usize> = (0..m - 1).collect();
        for _ in 0..trials {
            let x: Vec<usize> = pool.choose_multiple(&mut oracle_rng, k).copied().collect();
            let y: Vec<usize> = pool.choose_multiple(&mut oracle_rng, k).copied().collect();
            hits += x.iter().any(|v| y.contains(v)) as usize;
        }
        let p = hits as f64 / trials as f64;
        assert!((p - (k * k) as f64 / m as f64).abs() < 0.005);
        // Independent rows give the sampling scale of the observed rate.
        let sigma = (p * (1.0 - p) / m as f64).sqrt();
        assert!(
            (s.diff_id_overlap_rate - p).abs() <= 3.0 * sigma,
            "rate {} vs chance {p}",
            s.diff_id_overlap_rate
        );
    }
}
