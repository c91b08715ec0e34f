//! Soft labels from a hard assignment.
//!
//! With `c_m` the mean cost, a cell `(i, j)` becomes
//!
//! * `e^{-C(i,j)}` when `i` is matched to `j` and `C(i,j) < c_m`,
//! * `-1` (hard negative) when unmatched and `C(i,j) < c_m`,
//! * `0` otherwise, which drops it from training.
//!
//! Positives and hard negatives are each weighted by the inverse of their
//! class size so the two classes contribute equally.

use nalgebra::DMatrix;

use crate::error::{DgmError, Result};
use crate::model::{Assignment, CostMatrix, SoftLabelMatrix};

pub fn mean_cost(costs: &CostMatrix) -> f64 {
    costs.matrix().mean()
}

/// Builds the label matrix without insisting that both classes are populated.
/// Weights of an empty class are `None`.
pub fn soft_labels(costs: &CostMatrix, assignment: &Assignment) -> Result<SoftLabelMatrix> {
    if assignment.len() != costs.rows() {
        return Err(DgmError::InvalidAssignment(format!(
            "{} rows for a {}-row cost matrix",
            assignment.len(),
            costs.rows()
        )));
    }
    let threshold = costs.mean_cost();
    let labels = DMatrix::from_fn(costs.rows(), costs.cols(), |i, j| {
        let c = costs.get(i, j);
        if c >= threshold {
            0.0
        } else if assignment.is_matched(i, j) {
            (-c).exp().max(f64::MIN_POSITIVE)
        } else {
            -1.0
        }
    });
    let positives = labels.iter().filter(|&&l| l > 0.0).count();
    let negatives = labels.iter().filter(|&&l| l == -1.0).count();
    let inverse = |count: usize| (count > 0).then(|| 1.0 / count as f64);
    Ok(SoftLabelMatrix {
        labels,
        pos_weight: inverse(positives),
        neg_weight: inverse(negatives),
    })
}

/// Soft labels with both class weights defined; fails when either class is empty.
pub fn reweight_labels(costs: &CostMatrix, assignment: &Assignment) -> Result<SoftLabelMatrix> {
    let labels = soft_labels(costs, assignment)?;
    if labels.pos_weight.is_none() {
        return Err(DgmError::NoPositives);
    }
    if labels.neg_weight.is_none() {
        return Err(DgmError::NoNegatives);
    }
    Ok(labels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Target;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn costs(rows: &[&[f64]]) -> CostMatrix {
        CostMatrix::from_rows(rows).unwrap()
    }

    #[test]
    fn mean_cost_examples() {
        assert_eq!(mean_cost(&costs(&[&[1.0, 3.0]])), 2.0);
        assert_eq!(mean_cost(&costs(&[&[0.7, 0.7], &[0.7, 0.7]])), 0.7);
        assert!((mean_cost(&costs(&[&[0.1, 5.0], &[0.3, 6.0]])) - 2.85).abs() < 1e-15);
    }

    #[test]
    fn single_branches() {
        // c_m = 1.0 in each of these: entries average to one.
        let c = costs(&[&[0.2, 1.8]]);
        let a = Assignment::new(vec![Target::Column(0)], 2).unwrap();
        let l = soft_labels(&c, &a).unwrap();
        assert!((l.get(0, 0) - 0.818_730_753_077_981_9).abs() < 1e-15);
        assert_eq!(l.get(0, 1), 0.0);

        let c = costs(&[&[2.0, 0.0]]);
        let a = Assignment::all_dummy(1);
        assert_eq!(soft_labels(&c, &a).unwrap().get(0, 0), 0.0);

        let c = costs(&[&[0.5, 1.5]]);
        assert_eq!(soft_labels(&c, &a).unwrap().get(0, 0), -1.0);
    }

    #[test]
    fn two_by_two_fixture() {
        let c = costs(&[&[0.1, 0.3], &[6.0, 5.0]]);
        assert!((c.mean_cost() - 2.85).abs() < 1e-15);
        let a = Assignment::new(vec![Target::Column(0), Target::Column(1)], 2).unwrap();
        let l = reweight_labels(&c, &a).unwrap();
        assert_eq!(l.get(0, 0), (-0.1f64).exp());
        assert_eq!(l.get(0, 1), -1.0);
        assert_eq!(l.get(1, 0), 0.0);
        assert_eq!(l.get(1, 1), 0.0);
        assert_eq!(l.pos_weight(), Some(1.0));
        assert_eq!(l.neg_weight(), Some(1.0));
    }

    #[test]
    fn boundary_cost_is_filtered() {
        let c = costs(&[&[1.0, 1.0]]);
        let a = Assignment::new(vec![Target::Column(0)], 2).unwrap();
        let l = soft_labels(&c, &a).unwrap();
        assert_eq!(l.get(0, 0), 0.0);
        assert_eq!(l.get(0, 1), 0.0);
    }

    #[test]
    fn empty_classes_are_reported() {
        let c = costs(&[&[0.1, 0.3], &[6.0, 5.0]]);
        assert!(matches!(
            reweight_labels(&c, &Assignment::all_dummy(2)),
            Err(DgmError::NoPositives)
        ));
        // One matched cheap cell and nothing else below the mean.
        let c = costs(&[&[0.1, 5.0], &[5.0, 5.0]]);
        let a = Assignment::new(vec![Target::Column(0), Target::Dummy], 2).unwrap();
        assert!(matches!(reweight_labels(&c, &a), Err(DgmError::NoNegatives)));
    }

    fn random_case(seed: u64) -> (CostMatrix, Assignment) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = rng.random_range(1..8);
        let n = rng.random_range(1..8);
        let c = CostMatrix::new(DMatrix::from_fn(m, n, |_, _| rng.random_range(0.01..6.0))).unwrap();
        let mut cols: Vec<usize> = (0..n).collect();
        for i in (1..cols.len()).rev() {
            cols.swap(i, rng.random_range(0..=i));
        }
        let targets = (0..m)
            .map(|i| match cols.get(i) {
                Some(&j) if rng.random_bool(0.8) => Target::Column(j),
                _ => Target::Dummy,
            })
            .collect();
        (c.clone(), Assignment::new(targets, n).unwrap())
    }

    proptest! {
        #[test]
        fn partition_range_and_weights(seed in any::<u64>()) {
            let (c, a) = random_case(seed);
            let l = soft_labels(&c, &a).unwrap();
            let cm = c.mean_cost();
            let mut pos_mass = 0.0;
            let mut neg_mass = 0.0;
            for i in 0..c.rows() {
                for j in 0..c.cols() {
                    let v = l.get(i, j);
                    let matched = a.is_matched(i, j);
                    let class_count = [v > 0.0, v == 0.0, v == -1.0].iter().filter(|&&b| b).count();
                    prop_assert_eq!(class_count, 1);
                    if v > 0.0 {
                        prop_assert!(matched);
                        prop_assert!(v <= 1.0 && v > (-cm).exp());
                        prop_assert_eq!(v, (-c.get(i, j)).exp());
                        pos_mass += l.weight(i, j);
                    }
                    if matched {
                        prop_assert!(v != -1.0);
                    }
                    if v == -1.0 {
                        neg_mass += l.weight(i, j);
                    }
                    if c.get(i, j) >= cm {
                        prop_assert_eq!(v, 0.0);
                    }
                }
            }
            if l.num_positive() > 0 {
                prop_assert!((pos_mass - 1.0).abs() < 1e-12);
            }
            if l.num_negative() > 0 {
                prop_assert!((neg_mass - 1.0).abs() < 1e-12);
            }
        }
    }
}
