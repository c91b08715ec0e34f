//! Bipartite assignment with an unlimited-capacity dummy node.
//!
//! Every camera-A row is sent either to a distinct camera-B column or to the
//! dummy. The solver pads the cost matrix with one private dummy column per
//! row, which makes the problem a rectangular linear assignment that the
//! Hungarian method solves exactly.

use crate::error::{DgmError, Result};
use crate::model::{Assignment, CostMatrix, Target};

/// Largest side accepted by [`brute_force_assignment`].
pub const BRUTE_FORCE_LIMIT: usize = 8;

/// Minimum-cost assignment where `cost(i, Dummy) = dummy_cost` and the dummy
/// may absorb any number of rows. Returns the assignment and its objective.
pub fn solve_assignment(costs: &CostMatrix, dummy_cost: f64) -> Result<(Assignment, f64)> {
    if !dummy_cost.is_finite() {
        return Err(DgmError::NonFinite("dummy cost"));
    }
    let m = costs.rows();
    let n = costs.cols();
    let width = n + m;
    let cell = |i: usize, j: usize| if j < n { costs.get(i, j) } else { dummy_cost };

    let cols_of_rows = hungarian(m, width, cell);
    let targets = cols_of_rows
        .into_iter()
        .map(|j| if j < n { Target::Column(j) } else { Target::Dummy })
        .collect();
    let assignment = Assignment::new(targets, n)?;
    let objective = matching_objective(costs, &assignment, dummy_cost)?;
    Ok((assignment, objective))
}

/// Shortest augmenting path Hungarian method with row/column potentials.
/// Requires `rows <= cols`; returns the column chosen for each row.
fn hungarian(rows: usize, cols: usize, cost: impl Fn(usize, usize) -> f64) -> Vec<usize> {
    debug_assert!(rows <= cols);
    // 1-based internally; column 0 and row 0 are sentinels.
    let mut u = vec![0.0f64; rows + 1];
    let mut v = vec![0.0f64; cols + 1];
    let mut owner = vec![0usize; cols + 1];
    let mut way = vec![0usize; cols + 1];

    for i in 1..=rows {
        owner[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; cols + 1];
        let mut used = vec![false; cols + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=cols {
                if used[j] {
                    continue;
                }
                let reduced = cost(i0 - 1, j - 1) - u[i0] - v[j];
                if reduced < minv[j] {
                    minv[j] = reduced;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=cols {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut result = vec![0usize; rows];
    for j in 1..=cols {
        if owner[j] != 0 {
            result[owner[j] - 1] = j - 1;
        }
    }
    result
}

/// Exhaustive search over every feasible assignment. Ties go to the
/// lexicographically smallest target sequence (real columns before dummy).
pub fn brute_force_assignment(costs: &CostMatrix, dummy_cost: f64) -> Result<(Assignment, f64)> {
    let m = costs.rows();
    let n = costs.cols();
    if m > BRUTE_FORCE_LIMIT || n > BRUTE_FORCE_LIMIT {
        return Err(DgmError::InstanceTooLarge { rows: m, cols: n });
    }

    struct Search<'a> {
        costs: &'a CostMatrix,
        dummy_cost: f64,
        used: Vec<bool>,
        current: Vec<Target>,
        best: Option<(Vec<Target>, f64)>,
    }

    impl Search<'_> {
        fn visit(&mut self, row: usize, partial: f64) {
            if row == self.costs.rows() {
                if self.best.as_ref().map_or(true, |(_, b)| partial < *b) {
                    self.best = Some((self.current.clone(), partial));
                }
                return;
            }
            for j in 0..self.costs.cols() {
                if self.used[j] {
                    continue;
                }
                self.used[j] = true;
                self.current.push(Target::Column(j));
                self.visit(row + 1, partial + self.costs.get(row, j));
                self.current.pop();
                self.used[j] = false;
            }
            self.current.push(Target::Dummy);
            self.visit(row + 1, partial + self.dummy_cost);
            self.current.pop();
        }
    }

    let mut search = Search {
        costs,
        dummy_cost,
        used: vec![false; n],
        current: Vec::with_capacity(m),
        best: None,
    };
    search.visit(0, 0.0);
    let (targets, objective) = search.best.expect("the all-dummy assignment is always feasible");
    Ok((Assignment::new(targets, n)?, objective))
}

/// Total cost `sum_i cost(i, target[i])`, summed in row order.
pub fn matching_objective(costs: &CostMatrix, assignment: &Assignment, dummy_cost: f64) -> Result<f64> {
    if assignment.len() != costs.rows() {
        return Err(DgmError::InvalidAssignment(format!(
            "{} rows for a {}-row cost matrix",
            assignment.len(),
            costs.rows()
        )));
    }
    let mut seen = vec![false; costs.cols()];
    let mut total = 0.0;
    for (i, t) in assignment.targets().iter().enumerate() {
        total += match *t {
            Target::Column(j) => {
                if j >= costs.cols() || std::mem::replace(&mut seen[j], true) {
                    return Err(DgmError::InvalidAssignment(format!(
                        "column {j} out of range or reused"
                    )));
                }
                costs.get(i, j)
            }
            Target::Dummy => dummy_cost,
        };
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn costs(rows: &[&[f64]]) -> CostMatrix {
        CostMatrix::from_rows(rows).unwrap()
    }

    fn random_costs(rng: &mut ChaCha8Rng, m: usize, n: usize) -> CostMatrix {
        CostMatrix::new(DMatrix::from_fn(m, n, |_, _| rng.random_range(0.0..10.0))).unwrap()
    }

    #[test]
    fn diagonal_two_by_two() {
        let c = costs(&[&[1.0, 9.0], &[9.0, 1.0]]);
        let (a, obj) = solve_assignment(&c, 100.0).unwrap();
        assert_eq!(a.targets(), &[Target::Column(0), Target::Column(1)]);
        assert_eq!(obj, 2.0);
        let (b, bobj) = brute_force_assignment(&c, 100.0).unwrap();
        assert_eq!(b, a);
        assert_eq!(bobj, 2.0);
    }

    #[test]
    fn dummy_cheaper_than_any_match() {
        let c = costs(&[&[5.0]]);
        let (a, obj) = solve_assignment(&c, 1.0).unwrap();
        assert_eq!(a.targets(), &[Target::Dummy]);
        assert_eq!(obj, 1.0);
    }

    #[test]
    fn column_scarcity_forces_one_dummy() {
        let c = costs(&[&[1.0, 2.0], &[3.0, 1.0], &[2.0, 2.0]]);
        let (a, _) = solve_assignment(&c, 1e6).unwrap();
        assert_eq!(a.num_dummy(), 1);
    }

    #[test]
    fn brute_force_tie_rule() {
        let c = costs(&[&[0.0, 0.0]]);
        for dummy in [0.0, 0.5, 3.0] {
            let (a, obj) = brute_force_assignment(&c, dummy).unwrap();
            assert_eq!(obj, 0.0);
            assert_eq!(a.targets(), &[Target::Column(0)]);
        }
    }

    #[test]
    fn brute_force_rejects_large_instances() {
        let c = CostMatrix::new(DMatrix::zeros(9, 2)).unwrap();
        assert!(matches!(
            brute_force_assignment(&c, 1.0),
            Err(DgmError::InstanceTooLarge { .. })
        ));
    }

    #[test]
    fn objective_examples() {
        let c = costs(&[&[1.0, 9.0], &[9.0, 1.0]]);
        let all_dummy = Assignment::all_dummy(2);
        assert_eq!(matching_objective(&c, &all_dummy, 4.0).unwrap(), 8.0);
        let swapped = Assignment::new(vec![Target::Column(1), Target::Column(0)], 2).unwrap();
        assert_eq!(matching_objective(&c, &swapped, 100.0).unwrap(), 18.0);
        let (best, obj) = solve_assignment(&c, 100.0).unwrap();
        assert_eq!(matching_objective(&c, &best, 100.0).unwrap(), obj);
        let short = Assignment::all_dummy(1);
        assert!(matching_objective(&c, &short, 1.0).is_err());
    }

    #[test]
    fn matches_brute_force_on_random_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        for _ in 0..300 {
            let m = rng.random_range(1..=4);
            let n = rng.random_range(1..=4);
            let c = random_costs(&mut rng, m, n);
            let dummy = c.mean_cost();
            let (_, fast) = solve_assignment(&c, dummy).unwrap();
            let (_, slow) = brute_force_assignment(&c, dummy).unwrap();
            assert!((fast - slow).abs() <= 1e-12, "{fast} vs {slow}");
        }
    }

    #[test]
    fn hungarian_handles_integer_ties() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..200 {
            let m = rng.random_range(1..=5);
            let n = rng.random_range(1..=5);
            let c = CostMatrix::new(DMatrix::from_fn(m, n, |_, _| rng.random_range(0..3) as f64)).unwrap();
            let dummy = rng.random_range(0..4) as f64;
            let (_, fast) = solve_assignment(&c, dummy).unwrap();
            let (_, slow) = brute_force_assignment(&c, dummy).unwrap();
            assert_eq!(fast, slow);
        }
    }

    proptest! {
        #[test]
        fn raising_dummy_cost_never_adds_dummies(seed in any::<u64>(), m in 1usize..7, n in 1usize..7) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let c = random_costs(&mut rng, m, n);
            let lo = rng.random_range(0.0..10.0);
            let hi = lo + rng.random_range(0.0..10.0);
            let (a_lo, _) = brute_force_assignment(&c, lo).unwrap();
            let (a_hi, _) = brute_force_assignment(&c, hi).unwrap();
            prop_assert!(a_hi.num_dummy() <= a_lo.num_dummy());
            let (s_lo, _) = solve_assignment(&c, lo).unwrap();
            let (s_hi, _) = solve_assignment(&c, hi).unwrap();
            prop_assert!(s_hi.num_dummy() <= s_lo.num_dummy());
        }

        #[test]
        fn shifting_all_costs_keeps_the_optimum(seed in any::<u64>(), m in 1usize..6, n in 1usize..6, shift in 0.0f64..20.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let c = random_costs(&mut rng, m, n);
            let dummy = rng.random_range(0.0..10.0);
            let shifted = CostMatrix::new(c.matrix().add_scalar(shift)).unwrap();
            let (a, _) = brute_force_assignment(&c, dummy).unwrap();
            let (_, obj_b) = solve_assignment(&shifted, dummy + shift).unwrap();
            // Every feasible assignment pays `m * shift` extra, so `a` stays optimal.
            let obj_a = matching_objective(&shifted, &a, dummy + shift).unwrap();
            prop_assert!((obj_a - obj_b).abs() <= 1e-9);
        }

        #[test]
        fn outputs_are_feasible(seed in any::<u64>(), m in 1usize..12, n in 1usize..12) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let c = random_costs(&mut rng, m, n);
            let (a, obj) = solve_assignment(&c, c.mean_cost()).unwrap();
            prop_assert_eq!(a.len(), m);
            let mut cols: Vec<usize> = a.targets().iter().filter_map(|t| t.column()).collect();
            let before = cols.len();
            cols.dedup();
            cols.sort();
            cols.dedup();
            prop_assert_eq!(before, cols.len());
            prop_assert!(obj.is_finite());
        }
    }
}
