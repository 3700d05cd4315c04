//! Coverage check of the decoy estimators against the hidden photon-number
//! ground truth of simulated sessions.

use rayon::prelude::*;
use serde::Serialize;

use crate::channel::sample_session_counts;
use crate::finitekey::{decoy_bounds_analytic, Deviation};
use crate::lp::{decoy_bounds_lp, DecoyLpOptions};
use crate::params::{Basis, Intensity, ProtocolParams};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SandwichCase {
    pub seed: u64,
    /// Single-photon key-basis events over all intensities.
    pub truth_all: u64,
    pub analytic: (f64, f64),
    /// Single-photon key-basis events of the signal intensity.
    pub truth_signal: u64,
    pub lp: (f64, f64),
}

impl SandwichCase {
    pub fn analytic_holds(&self) -> bool {
        let t = self.truth_all as f64;
        self.analytic.0 <= t && t <= self.analytic.1
    }

    pub fn lp_holds(&self) -> bool {
        let t = self.truth_signal as f64;
        self.lp.0 <= t && t <= self.lp.1
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SandwichSuite {
    pub cases: Vec<SandwichCase>,
    pub analytic_inclusions: usize,
    pub lp_inclusions: usize,
    pub failures: Vec<String>,
}

impl SandwichSuite {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Samples `sessions` stochastic sessions with seeds `seed..seed+sessions`
/// and checks that both estimators bracket the true single-photon events.
pub fn run_sandwich_suite(params: &ProtocolParams, sessions: usize, seed: u64) -> SandwichSuite {
    let results: Vec<Result<SandwichCase, String>> = (0..sessions as u64)
        .into_par_iter()
        .map(|i| {
            let s = seed.wrapping_add(i);
            let counts = sample_session_counts(params, s);
            let truth = counts.truth.as_ref().ok_or(format!("seed {s}: no ground truth"))?;
            let a = decoy_bounds_analytic(&counts, params, Deviation::Hoeffding).map_err(|e| format!("seed {s}: {e}"))?;
            let l = decoy_bounds_lp(&counts, params, &DecoyLpOptions::default()).map_err(|e| format!("seed {s}: {e}"))?;
            Ok(SandwichCase {
                seed: s,
                truth_all: truth.events(Basis::Z, 1, None),
                analytic: (a.n1_low, a.n1_up),
                truth_signal: truth.events(Basis::Z, 1, Some(Intensity::Signal)),
                lp: (l.n1_low, l.n1_up),
            })
        })
        .collect();

    let mut cases = Vec::new();
    let mut failures = Vec::new();
    for r in results {
        match r {
            Ok(c) => {
                if !c.analytic_holds() {
                    failures.push(format!(
                        "seed {}: analytic [{:.1}, {:.1}] misses {}",
                        c.seed, c.analytic.0, c.analytic.1, c.truth_all
                    ));
                }
                if !c.lp_holds() {
                    failures.push(format!(
                        "seed {}: lp [{:.1}, {:.1}] misses {}",
                        c.seed, c.lp.0, c.lp.1, c.truth_signal
                    ));
                }
                cases.push(c);
            }
            Err(e) => failures.push(e),
        }
    }
    SandwichSuite {
        analytic_inclusions: cases.iter().filter(|c| c.analytic_holds()).count(),
        lp_inclusions: cases.iter().filter(|c| c.lp_holds()).count(),
        cases,
        failures,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn few_sessions_at_short_range() {
        let mut p = ProtocolParams::default();
        p.link.length_km = 60.0;
        let suite = run_sandwich_suite(&p, 4, 11);
        assert!(suite.passed(), "{:?}", suite.failures);
        assert_eq!(suite.cases.len(), 4);
        assert_eq!(suite.cases[2].seed, 13);
    }
}
