//! Decoy-state yield estimation as linear programs.
//!
//! Unknowns are the photon-number yields `Y_0..Y_ncut` (or the error yields
//! for the phase-error program) plus one slack per intensity that absorbs
//! the contribution of photon numbers above the cut, bounded by the exact
//! Poisson tail mass. Each intensity's observed gain, widened by the
//! Hoeffding deviation, brackets `Σ_n P(n|k) Y_n + t_k`.
//!
//! Internally every yield column is scaled by `max_k P(n|k) / Q_ref` so all
//! coefficients lie in [0, 1] and the solution is of order one.

use serde::{Deserialize, Serialize};

use super::{lp_solve, Constraint, LinearProgram, LpSolution, LpStatus, Relation, Sense};
use crate::channel::SessionCounts;
use crate::finitekey::{hoeffding_delta, phase_error_bound, BoundMethod, DecoyBounds, Deviation, FiniteKeyError, EPS_SPLIT};
use crate::params::{poisson_pn, Basis, Intensity, ProtocolParams};

pub const DEFAULT_PHOTON_CUTOFF: u32 = 9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecoyTarget {
    MinY0,
    MinY1,
    MaxY1,
    /// Largest single-photon error yield.
    MaxE1Y1,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecoyLpOptions {
    pub n_cut: u32,
    pub deviation: Deviation,
}

impl Default for DecoyLpOptions {
    fn default() -> Self {
        Self {
            n_cut: DEFAULT_PHOTON_CUTOFF,
            deviation: Deviation::Hoeffding,
        }
    }
}

/// Tallies of one intensity in one basis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecoyObservation {
    pub mean: f64,
    pub sent: u64,
    pub detected: u64,
    pub errors: u64,
}

impl DecoyObservation {
    pub fn from_counts(counts: &SessionCounts, params: &ProtocolParams, b: Basis) -> Vec<Self> {
        Intensity::ALL
            .iter()
            .map(|&k| {
                let c = counts.get(b, k);
                Self {
                    mean: params.intensities.mean(k),
                    sent: c.sent,
                    detected: c.detected,
                    errors: c.errors,
                }
            })
            .collect()
    }
}

/// A decoy program together with what is needed to read yields back out.
#[derive(Debug, Clone, PartialEq)]
pub struct DecoyLp {
    pub program: LinearProgram,
    pub target: DecoyTarget,
    pub n_cut: u32,
    /// Gain normalisation shared by every row.
    pub q_ref: f64,
    /// Multiply variable `n` by this to get the yield `Y_n`.
    yield_scale: Vec<f64>,
}

impl DecoyLp {
    pub fn target_photon_number(&self) -> u32 {
        match self.target {
            DecoyTarget::MinY0 => 0,
            _ => 1,
        }
    }

    /// Yield (or error yield) of photon number `n` at a solution point.
    pub fn yield_at(&self, point: &[f64], n: u32) -> f64 {
        point[n as usize] * self.yield_scale[n as usize]
    }

    /// Converts yields and per-intensity tail contributions into program
    /// variables.
    pub fn to_variables(&self, yields: &[f64], tails: &[f64]) -> Vec<f64> {
        let head = self.n_cut as usize + 1;
        let mut x = vec![0.0; self.program.num_vars()];
        for (n, y) in yields.iter().enumerate().take(head) {
            x[n] = y / self.yield_scale[n];
        }
        for (k, t) in tails.iter().enumerate() {
            x[head + k] = t / self.q_ref;
        }
        x
    }

    /// Solves and returns the extremal yield of the target photon number.
    pub fn solve(&self) -> Result<(f64, LpSolution), FiniteKeyError> {
        let sol = lp_solve(&self.program).map_err(|e| FiniteKeyError::EstimationFailed(e.to_string()))?;
        if sol.status != LpStatus::Optimal {
            return Err(FiniteKeyError::EstimationFailed(format!(
                "{:?} program ended {:?}",
                self.target, sol.status
            )));
        }
        let y = self.yield_at(&sol.point, self.target_photon_number()).max(0.0);
        Ok((y, sol))
    }
}

/// Builds the program for `target` from the tallies of `basis`.
pub fn build_decoy_lp(
    counts: &SessionCounts,
    params: &ProtocolParams,
    target: DecoyTarget,
    basis: Basis,
    opts: &DecoyLpOptions,
) -> Result<DecoyLp, FiniteKeyError> {
    let obs = DecoyObservation::from_counts(counts, params, basis);
    build_decoy_lp_from_observations(&obs, target, params.security.eps_sec, opts)
}

/// Same as [`build_decoy_lp`] over an arbitrary set of intensities.
pub fn build_decoy_lp_from_observations(
    obs: &[DecoyObservation],
    target: DecoyTarget,
    eps_sec: f64,
    opts: &DecoyLpOptions,
) -> Result<DecoyLp, FiniteKeyError> {
    if obs.is_empty() || obs.iter().any(|o| o.sent == 0) {
        return Err(FiniteKeyError::InsufficientStatistics("no pulses sent for an intensity"));
    }
    let eps1 = eps_sec / EPS_SPLIT;
    let n_yields = opts.n_cut as usize + 1;
    let n_vars = n_yields + obs.len();

    let brackets: Vec<(f64, f64)> = obs
        .iter()
        .map(|o| {
            let events = match target {
                DecoyTarget::MaxE1Y1 => o.errors,
                _ => o.detected,
            } as f64;
            let d = match opts.deviation {
                Deviation::Hoeffding => hoeffding_delta(events, eps1),
                Deviation::Zero => 0.0,
            };
            let sent = o.sent as f64;
            (((events - d) / sent).clamp(0.0, 1.0), ((events + d) / sent).clamp(0.0, 1.0))
        })
        .collect();
    let q_ref = brackets.iter().map(|b| b.1).fold(0.0, f64::max);
    let q_ref = if q_ref > 0.0 { q_ref } else { 1.0 };

    let weight: Vec<Vec<f64>> = obs
        .iter()
        .map(|o| (0..=opts.n_cut).map(|n| poisson_pn(n, o.mean)).collect())
        .collect();
    let col_norm: Vec<f64> = (0..n_yields)
        .map(|n| weight.iter().map(|w| w[n]).fold(0.0, f64::max))
        .map(|c| if c > 0.0 { c } else { 1.0 })
        .collect();

    let mut objective = vec![0.0; n_vars];
    let photon = match target {
        DecoyTarget::MinY0 => 0,
        _ => 1,
    };
    objective[photon] = 1.0;
    let sense = match target {
        DecoyTarget::MinY0 | DecoyTarget::MinY1 => Sense::Minimize,
        DecoyTarget::MaxY1 | DecoyTarget::MaxE1Y1 => Sense::Maximize,
    };

    let mut bounds = Vec::with_capacity(n_vars);
    for c in &col_norm {
        bounds.push((0.0, c / q_ref));
    }
    for w in &weight {
        let tail = (1.0 - w.iter().sum::<f64>()).max(0.0);
        bounds.push((0.0, tail / q_ref));
    }

    let mut constraints = Vec::with_capacity(2 * obs.len());
    for (k, (w, &(lo, hi))) in weight.iter().zip(&brackets).enumerate() {
        let mut row = vec![0.0; n_vars];
        for n in 0..n_yields {
            row[n] = w[n] / col_norm[n];
        }
        row[n_yields + k] = 1.0;
        constraints.push(Constraint::new(row.clone(), Relation::Ge, lo / q_ref));
        constraints.push(Constraint::new(row, Relation::Le, hi / q_ref));
    }

    Ok(DecoyLp {
        program: LinearProgram {
            objective,
            sense,
            constraints,
            bounds,
        },
        target,
        n_cut: opts.n_cut,
        q_ref,
        yield_scale: col_norm.iter().map(|c| q_ref / c).collect(),
    })
}

/// Decoy bounds for signal-only distillation from the LP estimates.
///
/// Key-basis yields are bounded from all three intensities, then converted
/// to signal-intensity event counts. The phase error uses the test-basis
/// single-photon error yield over the test-basis single-photon yield.
pub fn decoy_bounds_lp(
    counts: &SessionCounts,
    params: &ProtocolParams,
    opts: &DecoyLpOptions,
) -> Result<DecoyBounds, FiniteKeyError> {
    let solve = |target, basis| build_decoy_lp(counts, params, target, basis, opts)?.solve().map(|r| r.0);
    let y0_min = solve(DecoyTarget::MinY0, Basis::Z)?;
    let y1_min = solve(DecoyTarget::MinY1, Basis::Z)?;
    let y1_max = solve(DecoyTarget::MaxY1, Basis::Z)?.max(y1_min);
    let y1x_min = solve(DecoyTarget::MinY1, Basis::X)?;
    let e1x_max = solve(DecoyTarget::MaxE1Y1, Basis::X)?;

    let u = params.intensities.u;
    let signal = counts.get(Basis::Z, Intensity::Signal);
    let sent_u = signal.sent as f64;
    let n_u = signal.detected as f64;
    let n0_low = (y0_min * sent_u * poisson_pn(0, u)).min(n_u);
    let n1_low = (y1_min * sent_u * poisson_pn(1, u)).min(n_u - n0_low);
    let n1_up = (y1_max * sent_u * poisson_pn(1, u)).min(n_u).max(n1_low);

    let x_single: f64 = Intensity::ALL
        .iter()
        .map(|&k| counts.get(Basis::X, k).sent as f64 * poisson_pn(1, params.intensities.mean(k)))
        .sum();
    let s_x1_low = y1x_min * x_single;
    let v_x1_up = e1x_max * x_single;
    let eph_up = phase_error_bound(v_x1_up, s_x1_low, n1_low, params.security.eps_sec, opts.deviation);

    Ok(DecoyBounds {
        n0_low,
        n1_low,
        n1_up,
        eph_up,
        y1_low: y1_min,
        s_x1_low,
        v_x1_up,
        method: BoundMethod::Lp,
    })
}
