//! Brute-force reference solver for small bounded programs.
//!
//! Every vertex of a bounded polyhedron is the intersection of `n` active
//! hyperplanes, so enumerating all `n`-subsets of constraint and bound
//! hyperplanes, solving each square system and keeping the best feasible
//! point gives the exact optimum. Exponential, and shares no code with the
//! simplex path.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{lp_solve, Constraint, LinearProgram, LpStatus, Relation, Sense};

const VERTEX_TOL: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq)]
pub enum OracleResult {
    Optimal { objective: f64, point: Vec<f64> },
    Infeasible,
}

/// Exact optimum by vertex enumeration. All variable bounds must be finite.
pub fn enumerate_vertices(lp: &LinearProgram) -> OracleResult {
    let n = lp.num_vars();
    assert!(
        lp.bounds.iter().all(|(l, u)| l.is_finite() && u.is_finite()),
        "vertex enumeration needs a bounded box"
    );
    let mut planes: Vec<(Vec<f64>, f64)> = lp
        .constraints
        .iter()
        .map(|c| (c.coeffs.clone(), c.rhs))
        .collect();
    for (j, &(lo, hi)) in lp.bounds.iter().enumerate() {
        let mut e = vec![0.0; n];
        e[j] = 1.0;
        planes.push((e.clone(), lo));
        planes.push((e, hi));
    }

    let mut best: Option<(f64, Vec<f64>)> = None;
    let better = |a: f64, b: f64| match lp.sense {
        Sense::Minimize => a < b,
        Sense::Maximize => a > b,
    };
    for subset in combinations(planes.len(), n) {
        let a: Vec<Vec<f64>> = subset.iter().map(|&i| planes[i].0.clone()).collect();
        let b: Vec<f64> = subset.iter().map(|&i| planes[i].1).collect();
        let Some(x) = solve_square(a, b) else { continue };
        if !feasible(lp, &x) {
            continue;
        }
        let obj = lp.objective_value(&x);
        if best.as_ref().map_or(true, |(o, _)| better(obj, *o)) {
            best = Some((obj, x));
        }
    }
    match best {
        Some((objective, point)) => OracleResult::Optimal { objective, point },
        None => OracleResult::Infeasible,
    }
}

fn feasible(lp: &LinearProgram, x: &[f64]) -> bool {
    let rows_ok = lp.constraints.iter().all(|c| {
        let lhs: f64 = c.coeffs.iter().zip(x).map(|(a, v)| a * v).sum();
        let tol = VERTEX_TOL * (1.0 + c.rhs.abs());
        match c.relation {
            Relation::Le => lhs <= c.rhs + tol,
            Relation::Ge => lhs >= c.rhs - tol,
            Relation::Eq => (lhs - c.rhs).abs() <= tol,
        }
    });
    rows_ok
        && lp
            .bounds
            .iter()
            .zip(x)
            .all(|(&(lo, hi), &v)| v >= lo - VERTEX_TOL * (1.0 + lo.abs()) && v <= hi + VERTEX_TOL * (1.0 + hi.abs()))
}

/// Gaussian elimination with partial pivoting; `None` when singular.
fn solve_square(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col].abs() < 1e-12 {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            if f != 0.0 {
                for k in col..n {
                    a[row][k] -= f * a[col][k];
                }
                b[row] -= f * b[col];
            }
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let s: f64 = (row + 1..n).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    Some(x)
}

fn combinations(n: usize, k: usize) -> impl Iterator<Item = Vec<usize>> {
    let mut idx: Vec<usize> = (0..k).collect();
    let mut done = k > n;
    std::iter::from_fn(move || {
        if done {
            return None;
        }
        let out = idx.clone();
        // advance to the next lexicographic subset
        let mut i = k;
        loop {
            if i == 0 {
                done = true;
                break;
            }
            i -= 1;
            if idx[i] < n - k + i {
                idx[i] += 1;
                for j in i + 1..k {
                    idx[j] = idx[j - 1] + 1;
                }
                break;
            }
        }
        Some(out)
    })
}

fn coef(rng: &mut impl Rng) -> f64 {
    f64::from(rng.random_range(-50..=50)) / 10.0
}

/// Random bounded program with up to 4 variables and 6 constraints.
pub fn random_lp(rng: &mut impl Rng) -> LinearProgram {
    let n = rng.random_range(1..=4);
    let m = rng.random_range(1..=6);
    let objective = (0..n).map(|_| coef(rng)).collect();
    let constraints = (0..m)
        .map(|_| {
            let coeffs = (0..n).map(|_| coef(rng)).collect();
            let relation = match rng.random_range(0..10) {
                0 => Relation::Eq,
                1..=5 => Relation::Le,
                _ => Relation::Ge,
            };
            Constraint::new(coeffs, relation, coef(rng) * 2.0)
        })
        .collect();
    let bounds = (0..n)
        .map(|_| {
            let lo = -f64::from(rng.random_range(0..=30)) / 10.0;
            let width = f64::from(rng.random_range(10..=60)) / 10.0;
            (lo, lo + width)
        })
        .collect();
    let sense = if rng.random_bool(0.5) {
        Sense::Minimize
    } else {
        Sense::Maximize
    };
    LinearProgram {
        objective,
        sense,
        constraints,
        bounds,
    }
}

/// Outcome of comparing the simplex against vertex enumeration.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleSuite {
    pub cases: usize,
    pub matches: usize,
    pub failures: Vec<String>,
}

impl OracleSuite {
    pub fn passed(&self) -> bool {
        self.matches == self.cases
    }
}

/// Runs `cases` random programs through both solvers. Objectives must agree
/// within `1e-6`, and infeasibility must be detected by both.
pub fn run_oracle_suite(cases: usize, seed: u64) -> OracleSuite {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut failures = Vec::new();
    for case in 0..cases {
        let lp = random_lp(&mut rng);
        let reference = enumerate_vertices(&lp);
        let verdict = match (lp_solve(&lp), &reference) {
            (Err(e), _) => Err(format!("solver error {e}")),
            (Ok(s), OracleResult::Infeasible) if s.status == LpStatus::Infeasible => Ok(()),
            (Ok(s), OracleResult::Optimal { objective, .. }) if s.status == LpStatus::Optimal => {
                if (s.objective - objective).abs() <= 1e-6 && lp.max_violation(&s.point) <= 1e-6 {
                    Ok(())
                } else {
                    Err(format!("objective {} vs oracle {objective}", s.objective))
                }
            }
            (Ok(s), r) => Err(format!("status {:?} vs oracle {r:?}", s.status)),
        };
        if let Err(msg) = verdict {
            failures.push(format!("case {case}: {msg}"));
        }
    }
    OracleSuite {
        cases,
        matches: cases - failures.len(),
        failures,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn combinations_count() {
        assert_eq!(combinations(5, 2).count(), 10);
        assert_eq!(combinations(3, 3).count(), 1);
        assert_eq!(combinations(2, 3).count(), 0);
        assert_eq!(combinations(14, 4).count(), 1001);
    }

    #[test]
    fn oracle_on_known_box() {
        let mut lp = LinearProgram::new(vec![1.0, 1.0], Sense::Maximize);
        lp.bounds = vec![(0.0, 5.0), (0.0, 5.0)];
        lp.constrain(vec![1.0, 0.0], Relation::Le, 1.0)
            .constrain(vec![0.0, 1.0], Relation::Le, 1.0);
        match enumerate_vertices(&lp) {
            OracleResult::Optimal { objective, .. } => assert!((objective - 2.0).abs() < 1e-12),
            r => panic!("{r:?}"),
        }
        lp.constrain(vec![1.0, 0.0], Relation::Ge, 2.0);
        assert_eq!(enumerate_vertices(&lp), OracleResult::Infeasible);
    }

    #[test]
    fn simplex_matches_oracle() {
        let suite = run_oracle_suite(200, 0);
        assert!(suite.passed(), "{:?}", suite.failures);
        // the generator must exercise both outcomes
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let infeasible = (0..200)
            .filter(|_| enumerate_vertices(&random_lp(&mut rng)) == OracleResult::Infeasible)
            .count();
        assert!(infeasible > 5 && infeasible < 195, "{infeasible}");
    }
}
