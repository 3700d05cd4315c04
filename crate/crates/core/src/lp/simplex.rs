use super::{LinearProgram, LpError, LpSolution, LpStatus, Relation, Sense, FEASIBILITY_TOL, OPTIMALITY_TOL};

/// Smallest magnitude accepted as a pivot element.
const PIVOT_TOL: f64 = 1e-9;

/// Original variable expressed over non-negative tableau columns:
/// `x = offset + Σ coef · x'_col`.
struct VarMap {
    offset: f64,
    cols: Vec<(usize, f64)>,
}

enum Stop {
    Unbounded,
    IterationLimit,
}

struct Tableau {
    rows: Vec<Vec<f64>>,
    obj: Vec<f64>,
    basis: Vec<usize>,
    /// Number of columns before the right-hand side.
    width: usize,
}

impl Tableau {
    fn rhs(&self, i: usize) -> f64 {
        self.rows[i][self.width]
    }

    fn pivot(&mut self, r: usize, c: usize) {
        let p = self.rows[r][c];
        for v in self.rows[r].iter_mut() {
            *v /= p;
        }
        self.rows[r][c] = 1.0;
        let pivot_row = self.rows[r].clone();
        for (i, row) in self.rows.iter_mut().enumerate() {
            if i == r {
                continue;
            }
            let f = row[c];
            if f != 0.0 {
                for (v, pv) in row.iter_mut().zip(&pivot_row) {
                    *v -= f * pv;
                }
                row[c] = 0.0;
            }
        }
        let f = self.obj[c];
        if f != 0.0 {
            for (v, pv) in self.obj.iter_mut().zip(&pivot_row) {
                *v -= f * pv;
            }
            self.obj[c] = 0.0;
        }
        self.basis[r] = c;
    }

    /// Bland's rule: lowest-index improving column enters; among rows tied
    /// on the ratio test, the one whose basic variable has the lowest index
    /// leaves.
    fn run(&mut self, allowed: impl Fn(usize) -> bool, budget: &mut usize) -> Result<(), Stop> {
        loop {
            let Some(enter) = (0..self.width).find(|&j| allowed(j) && self.obj[j] < -OPTIMALITY_TOL) else {
                return Ok(());
            };
            let mut leave: Option<(usize, f64)> = None;
            for i in 0..self.rows.len() {
                let a = self.rows[i][enter];
                if a <= PIVOT_TOL {
                    continue;
                }
                let ratio = self.rhs(i).max(0.0) / a;
                leave = match leave {
                    None => Some((i, ratio)),
                    Some((bi, br)) => {
                        let tie = 1e-12 * (1.0 + br.abs());
                        if ratio < br - tie || ((ratio - br).abs() <= tie && self.basis[i] < self.basis[bi]) {
                            Some((i, ratio))
                        } else {
                            Some((bi, br))
                        }
                    }
                };
            }
            let Some((r, _)) = leave else {
                return Err(Stop::Unbounded);
            };
            if *budget == 0 {
                return Err(Stop::IterationLimit);
            }
            *budget -= 1;
            self.pivot(r, enter);
        }
    }
}

fn failed(status: LpStatus) -> LpSolution {
    LpSolution {
        status,
        point: Vec::new(),
        objective: f64::NAN,
    }
}

/// Solves `lp` with a two-phase primal simplex.
///
/// Malformed programs (arity mismatch, crossed or NaN bounds) are errors;
/// infeasible, unbounded and non-terminating programs are reported through
/// [`LpStatus`].
pub fn lp_solve(lp: &LinearProgram) -> Result<LpSolution, LpError> {
    lp.check()?;
    let n = lp.num_vars();

    let mut maps = Vec::with_capacity(n);
    let mut ncols = 0;
    let mut bound_rows: Vec<(usize, f64)> = Vec::new();
    for &(lo, hi) in &lp.bounds {
        if lo.is_finite() {
            maps.push(VarMap {
                offset: lo,
                cols: vec![(ncols, 1.0)],
            });
            if hi.is_finite() {
                bound_rows.push((ncols, hi - lo));
            }
            ncols += 1;
        } else if hi.is_finite() {
            maps.push(VarMap {
                offset: hi,
                cols: vec![(ncols, -1.0)],
            });
            ncols += 1;
        } else {
            maps.push(VarMap {
                offset: 0.0,
                cols: vec![(ncols, 1.0), (ncols + 1, -1.0)],
            });
            ncols += 2;
        }
    }

    // Rows over tableau columns, normalised to a non-negative right-hand side.
    let mut rows: Vec<(Vec<f64>, Relation, f64)> = Vec::new();
    for c in &lp.constraints {
        let mut dense = vec![0.0; ncols];
        let mut rhs = c.rhs;
        for (a, m) in c.coeffs.iter().zip(&maps) {
            rhs -= a * m.offset;
            for &(col, coef) in &m.cols {
                dense[col] += a * coef;
            }
        }
        rows.push((dense, c.relation, rhs));
    }
    for &(col, cap) in &bound_rows {
        let mut dense = vec![0.0; ncols];
        dense[col] = 1.0;
        rows.push((dense, Relation::Le, cap));
    }
    for (dense, rel, rhs) in rows.iter_mut() {
        if *rhs < 0.0 {
            dense.iter_mut().for_each(|v| *v = -*v);
            *rhs = -*rhs;
            *rel = match rel {
                Relation::Le => Relation::Ge,
                Relation::Ge => Relation::Le,
                Relation::Eq => Relation::Eq,
            };
        }
    }

    let m = rows.len();
    let n_slack = rows.iter().filter(|r| r.1 != Relation::Eq).count();
    let n_art = rows.iter().filter(|r| r.1 != Relation::Le).count();
    let art_start = ncols + n_slack;
    let width = art_start + n_art;

    let mut tab = Tableau {
        rows: Vec::with_capacity(m),
        obj: vec![0.0; width + 1],
        basis: Vec::with_capacity(m),
        width,
    };
    let (mut next_slack, mut next_art) = (ncols, art_start);
    let mut rhs_scale: f64 = 1.0;
    for (dense, rel, rhs) in &rows {
        let mut row = vec![0.0; width + 1];
        row[..ncols].copy_from_slice(dense);
        row[width] = *rhs;
        rhs_scale = rhs_scale.max(rhs.abs());
        match rel {
            Relation::Le => {
                row[next_slack] = 1.0;
                tab.basis.push(next_slack);
                next_slack += 1;
            }
            Relation::Ge => {
                row[next_slack] = -1.0;
                next_slack += 1;
                row[next_art] = 1.0;
                tab.basis.push(next_art);
                next_art += 1;
            }
            Relation::Eq => {
                row[next_art] = 1.0;
                tab.basis.push(next_art);
                next_art += 1;
            }
        }
        tab.rows.push(row);
    }

    let mut budget = 10_000 * (n + lp.constraints.len()).max(1);
    let is_art = |j: usize| j >= art_start && j < width;

    // Phase 1: minimise the sum of artificials.
    if n_art > 0 {
        for i in 0..m {
            if is_art(tab.basis[i]) {
                for j in 0..=width {
                    if !is_art(j) {
                        tab.obj[j] -= tab.rows[i][j];
                    }
                }
            }
        }
        match tab.run(|_| true, &mut budget) {
            Ok(()) => {}
            Err(Stop::IterationLimit) => return Ok(failed(LpStatus::IterationLimit)),
            // the phase-1 objective is bounded below by zero
            Err(Stop::Unbounded) => return Ok(failed(LpStatus::Infeasible)),
        }
        let infeasibility = -tab.obj[width];
        if infeasibility > FEASIBILITY_TOL * rhs_scale {
            return Ok(failed(LpStatus::Infeasible));
        }
        // Drive zero-level artificials out of the basis; drop redundant rows.
        let mut i = 0;
        while i < tab.rows.len() {
            if is_art(tab.basis[i]) {
                let col = (0..art_start).find(|&j| tab.rows[i][j].abs() > PIVOT_TOL);
                match col {
                    Some(j) => tab.pivot(i, j),
                    None => {
                        tab.rows.remove(i);
                        tab.basis.remove(i);
                        continue;
                    }
                }
            }
            i += 1;
        }
    }

    // Phase 2 on the original objective, as a minimisation.
    let sign = match lp.sense {
        Sense::Minimize => 1.0,
        Sense::Maximize => -1.0,
    };
    let mut cost = vec![0.0; width];
    for (c, map) in lp.objective.iter().zip(&maps) {
        for &(col, coef) in &map.cols {
            cost[col] += sign * c * coef;
        }
    }
    tab.obj = vec![0.0; width + 1];
    tab.obj[..width].copy_from_slice(&cost);
    for i in 0..tab.rows.len() {
        let cb = cost[tab.basis[i]];
        if cb != 0.0 {
            for j in 0..=width {
                tab.obj[j] -= cb * tab.rows[i][j];
            }
        }
    }
    match tab.run(|j| !is_art(j), &mut budget) {
        Ok(()) => {}
        Err(Stop::IterationLimit) => return Ok(failed(LpStatus::IterationLimit)),
        Err(Stop::Unbounded) => return Ok(failed(LpStatus::Unbounded)),
    }

    let mut xs = vec![0.0; ncols];
    for (i, &b) in tab.basis.iter().enumerate() {
        if b < ncols {
            xs[b] = tab.rhs(i).max(0.0);
        }
    }
    let point: Vec<f64> = maps
        .iter()
        .map(|m| m.offset + m.cols.iter().map(|&(c, coef)| coef * xs[c]).sum::<f64>())
        .collect();
    let objective = lp.objective_value(&point);
    Ok(LpSolution {
        status: LpStatus::Optimal,
        point,
        objective,
    })
}
