//! Finite-size security arithmetic.
//!
//! Binary entropy, the Hoeffding deviation used for every count bracket,
//! the three-intensity analytic decoy estimates and the two secure key
//! length formulas (all-intensity distillation with single-photon lower
//! bound, and signal-only distillation that also needs an upper bound on
//! the single-photon events).

use serde::{Deserialize, Serialize};

use crate::channel::SessionCounts;
use crate::params::{tau_n, Basis, Intensity, LinkModel, ProtocolParams, SecurityParams};

/// Number of failure-probability terms the secrecy parameter is split into.
pub const EPS_SPLIT: f64 = 21.0;
/// Same split for the signal-only variant.
pub const EPS_SPLIT_V2: f64 = 46.0;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum FiniteKeyError {
    #[error("binary entropy argument {0} outside [0, 1]")]
    EntropyDomain(f64),
    #[error("insufficient statistics: {0}")]
    InsufficientStatistics(&'static str),
    #[error("estimation failed: {0}")]
    EstimationFailed(String),
}

/// Whether statistical fluctuations are accounted for. `Zero` turns every
/// Hoeffding bracket and the phase-error sampling correction off, leaving
/// the asymptotic decoy estimate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Deviation {
    Hoeffding,
    Zero,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BoundMethod {
    Analytic,
    Lp,
}

/// Decoy-state estimates feeding the key length formulas.
///
/// Event counts are over all intensities for the analytic method and over
/// signal-intensity pulses only for the LP method, matching the set each
/// protocol variant distils its key from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecoyBounds {
    pub n0_low: f64,
    pub n1_low: f64,
    pub n1_up: f64,
    pub eph_up: f64,
    /// Lower bound on single-photon yield in the key basis.
    pub y1_low: f64,
    pub s_x1_low: f64,
    pub v_x1_up: f64,
    pub method: BoundMethod,
}

impl DecoyBounds {
    pub fn zero(method: BoundMethod) -> Self {
        Self {
            n0_low: 0.0,
            n1_low: 0.0,
            n1_up: 0.0,
            eph_up: 0.5,
            y1_low: 0.0,
            s_x1_low: 0.0,
            v_x1_up: 0.0,
            method,
        }
    }
}

pub fn binary_entropy(x: f64) -> Result<f64, FiniteKeyError> {
    if !(0.0..=1.0).contains(&x) {
        return Err(FiniteKeyError::EntropyDomain(x));
    }
    Ok(entropy(x))
}

fn entropy(x: f64) -> f64 {
    if x <= 0.0 || x >= 1.0 {
        return 0.0;
    }
    -x * x.log2() - (1.0 - x) * (1.0 - x).log2()
}

/// `sqrt(n/2 · ln(1/eps))`.
pub fn hoeffding_delta(n: f64, eps: f64) -> f64 {
    if n <= 0.0 || eps >= 1.0 {
        return 0.0;
    }
    (n / 2.0 * (1.0 / eps).ln()).sqrt()
}

/// Random-sampling correction to the phase error rate. Symmetric in the two
/// sample sizes; saturates at 0.5 when the inputs carry no information.
pub fn gamma_correction(eps: f64, e: f64, c: f64, d: f64) -> f64 {
    if e <= 0.0 || e >= 1.0 {
        return 0.0;
    }
    if !(c > 0.0 && d > 0.0 && eps > 0.0) || !(c.is_finite() && d.is_finite()) {
        return 0.5;
    }
    let var = (1.0 - e) * e;
    let log_arg = (c + d) / (c * d * var) * (EPS_SPLIT / eps).powi(2);
    if !(log_arg > 1.0) {
        return 0.5;
    }
    let g = ((c + d) * var / (c * d * std::f64::consts::LN_2) * log_arg.log2()).sqrt();
    if g.is_finite() {
        g
    } else {
        0.5
    }
}

/// Modelled error-correction leakage, `f_ec · n · h(qber)`.
pub fn lambda_ec(n_z: f64, qber_z: f64, f_ec: f64) -> f64 {
    f_ec * n_z * entropy(qber_z.clamp(0.0, 0.5))
}

pub fn delta_v1(sec: &SecurityParams) -> f64 {
    6.0 * (EPS_SPLIT / sec.eps_sec).log2() + (2.0 / sec.eps_cor).log2()
}

pub fn delta_v2(sec: &SecurityParams) -> f64 {
    6.0 * (EPS_SPLIT_V2 / sec.eps_sec).log2() + (2.0 / sec.eps_cor).log2()
}

/// `n0 + n1 (1 - h(eph)) - λ - Δ`, floored.
pub fn secure_key_length_v1(b: &DecoyBounds, lambda: f64, sec: &SecurityParams) -> i64 {
    let bits = b.n0_low + b.n1_low * (1.0 - entropy(b.eph_up)) - lambda - delta_v1(sec);
    bits.floor() as i64
}

/// `n0 + n1_low - n1_up h(eph) - λ - Δ'`, floored.
pub fn secure_key_length_v2(b: &DecoyBounds, lambda: f64, sec: &SecurityParams) -> i64 {
    let bits = b.n0_low + b.n1_low - b.n1_up * entropy(b.eph_up) - lambda - delta_v2(sec);
    bits.floor() as i64
}

pub fn key_rate_bps(length: i64, link: &LinkModel) -> f64 {
    length.max(0) as f64 / link.session_duration_s()
}

/// Three-intensity analytic bounds over one basis.
struct BasisEstimate {
    s0_low: f64,
    s1_low: f64,
    s1_up: f64,
}

/// Analytic decoy estimation over all three intensities.
///
/// Counts are rescaled as `e^k / p_k · (n_k ± δ)` with `δ` the Hoeffding
/// deviation of the basis total at `eps_sec / 21`. Negative intermediate
/// bounds are clamped to zero. When the test basis has no usable
/// single-photon events the phase error saturates at 0.5.
pub fn decoy_bounds_analytic(
    counts: &SessionCounts,
    params: &ProtocolParams,
    deviation: Deviation,
) -> Result<DecoyBounds, FiniteKeyError> {
    let i = &params.intensities;
    let pr = &params.probabilities;
    let (u, v, w) = (i.u, i.v, i.w);
    let denom = u * (v - w) - v * v + w * w;
    if !(v - w > 0.0) || !(denom > 0.0) {
        return Err(FiniteKeyError::EstimationFailed(format!(
            "intensities u={u}, v={v}, w={w} leave the decoy bounds undefined"
        )));
    }
    let eps1 = params.security.eps_sec / EPS_SPLIT;
    let tau0 = tau_n(0, i, pr);
    let tau1 = tau_n(1, i, pr);
    let spread = |total: u64| match deviation {
        Deviation::Hoeffding => hoeffding_delta(total as f64, eps1),
        Deviation::Zero => 0.0,
    };
    let rescale = |k: Intensity, x: f64| i.mean(k).exp() / pr.prob(k) * x;

    let estimate = |b: Basis| -> BasisEstimate {
        let d = spread(counts.total_detected(b));
        let n = |k: Intensity| counts.get(b, k).detected as f64;
        let lo = |k: Intensity| rescale(k, n(k) - d);
        let hi = |k: Intensity| rescale(k, n(k) + d);
        use Intensity::*;
        let s0_low = (tau0 * (v * lo(Vacuum) - w * hi(Decoy)) / (v - w)).max(0.0);
        let s1_low = (tau1 * u
            * (lo(Decoy) - hi(Vacuum) - (v * v - w * w) / (u * u) * (hi(Signal) - s0_low / tau0))
            / denom)
            .max(0.0);
        let s1_up = (tau1 * (hi(Decoy) - lo(Vacuum)) / (v - w)).max(0.0);
        BasisEstimate {
            s0_low,
            s1_low,
            s1_up,
        }
    };

    let z = estimate(Basis::Z);
    let x = estimate(Basis::X);
    let n_z = counts.total_detected(Basis::Z) as f64;

    let n0_low = z.s0_low.min(n_z);
    let n1_low = z.s1_low.min(n_z - n0_low);
    let n1_up = z.s1_up.min(n_z).max(n1_low);

    let dm = spread(counts.total_errors(Basis::X));
    let m = |k: Intensity| counts.get(Basis::X, k).errors as f64;
    let v_x1_up = (tau1
        * (rescale(Intensity::Decoy, m(Intensity::Decoy) + dm)
            - rescale(Intensity::Vacuum, m(Intensity::Vacuum) - dm))
        / (v - w))
        .max(0.0);
    let s_x1_low = x.s1_low;

    let eph_up = phase_error_bound(v_x1_up, s_x1_low, n1_low, params.security.eps_sec, deviation);

    let n_sent_z = counts.total_sent(Basis::Z) as f64;
    let y1_low = if n_sent_z > 0.0 {
        n1_low / (tau1 * n_sent_z)
    } else {
        0.0
    };

    Ok(DecoyBounds {
        n0_low,
        n1_low,
        n1_up,
        eph_up,
        y1_low,
        s_x1_low,
        v_x1_up,
        method: BoundMethod::Analytic,
    })
}

/// Upper bound on the single-photon phase error rate from single-photon
/// test-basis errors and events, clamped to [0, 0.5].
pub(crate) fn phase_error_bound(
    errors_up: f64,
    events_low: f64,
    key_events_low: f64,
    eps_sec: f64,
    deviation: Deviation,
) -> f64 {
    if !(events_low > 0.0) {
        return 0.5;
    }
    let e = errors_up / events_low;
    if e >= 0.5 {
        return 0.5;
    }
    let correction = match deviation {
        Deviation::Hoeffding => gamma_correction(eps_sec, e, key_events_low, events_low),
        Deviation::Zero => 0.0,
    };
    (e + correction).clamp(0.0, 0.5)
}

/// Result for one protocol variant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantReport {
    pub secure_length: i64,
    pub rate_bps: f64,
    pub lambda_ec: f64,
    pub delta: f64,
    /// Key-basis detections the variant distils from.
    pub key_detections: u64,
    pub key_qber: f64,
    pub bounds: DecoyBounds,
    /// Set when the decoy estimation failed and the key was zeroed.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub failure: Option<String>,
}

/// Everything computed for one session, for audit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeyReport {
    pub secure_length_v1: i64,
    pub secure_length_v2: i64,
    pub rate_v1_bps: f64,
    pub rate_v2_bps: f64,
    pub v1: VariantReport,
    pub v2: VariantReport,
    pub attenuation_db: f64,
    pub session_duration_s: f64,
    pub deviation: Deviation,
    pub channel: crate::channel::ChannelState,
    pub counts: SessionCounts,
    pub params: ProtocolParams,
}

impl KeyReport {
    pub fn estimation_failed(&self) -> bool {
        self.v1.failure.is_some() || self.v2.failure.is_some()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn sec() -> SecurityParams {
        SecurityParams {
            eps_sec: 1e-10,
            eps_cor: 1e-15,
            f_ec: 1.16,
        }
    }

    fn fixture() -> DecoyBounds {
        DecoyBounds {
            n0_low: 1000.0,
            n1_low: 50000.0,
            n1_up: 52000.0,
            eph_up: 0.05,
            ..DecoyBounds::zero(BoundMethod::Analytic)
        }
    }

    #[test]
    fn entropy_values() {
        assert_eq!(binary_entropy(0.0).unwrap(), 0.0);
        assert_eq!(binary_entropy(1.0).unwrap(), 0.0);
        assert_eq!(binary_entropy(0.5).unwrap(), 1.0);
        assert_relative_eq!(binary_entropy(0.05).unwrap(), 0.286_397, max_relative = 1e-6);
        assert!(matches!(binary_entropy(1.1), Err(FiniteKeyError::EntropyDomain(_))));
        assert!(binary_entropy(-0.1).is_err());
    }

    #[test]
    fn hoeffding_values() {
        assert_eq!(hoeffding_delta(1e6, 1.0), 0.0);
        assert_eq!(hoeffding_delta(0.0, 1e-3), 0.0);
        assert_relative_eq!(hoeffding_delta(1e6, 1e-10 / 21.0), 3610.4, epsilon = 0.05);
    }

    #[test]
    fn gamma_values() {
        assert_eq!(gamma_correction(1e-10, 0.0, 1e4, 1e4), 0.0);
        let g = gamma_correction(1e-10, 0.05, 1e4, 1e4);
        assert!(g > 0.0 && g < 0.5);
        assert_relative_eq!(g, 0.030_377_913_177_920_94, max_relative = 1e-12);
        assert_eq!(gamma_correction(1e-10, 0.05, 0.0, 1e4), 0.5);
        assert_eq!(gamma_correction(1e-10, 0.05, 1e4, f64::NAN), 0.5);
    }

    #[test]
    fn lambda_values() {
        assert_eq!(lambda_ec(1e4, 0.0, 1.16), 0.0);
        assert_relative_eq!(lambda_ec(1e4, 0.05, 1.0), 2863.97, epsilon = 0.01);
        assert_relative_eq!(lambda_ec(1e4, 0.05, 1.16), 3322.2, epsilon = 0.01);
    }

    #[test]
    fn delta_values() {
        assert_relative_eq!(delta_v1(&sec()), 276.5, epsilon = 0.1);
        assert_relative_eq!(delta_v2(&sec()), 283.3, epsilon = 0.1);
    }

    #[test]
    fn key_length_fixtures() {
        assert_eq!(secure_key_length_v1(&fixture(), 30000.0, &sec()), 6403);
        assert_eq!(secure_key_length_v2(&fixture(), 30000.0, &sec()), 5824);
    }

    #[test]
    fn key_length_edge_cases() {
        let zero = DecoyBounds::zero(BoundMethod::Analytic);
        assert_eq!(secure_key_length_v1(&zero, 0.0, &sec()), (-delta_v1(&sec())).floor() as i64);
        assert!(secure_key_length_v1(&zero, 0.0, &sec()) < 0);

        let saturated = DecoyBounds {
            eph_up: 0.5,
            ..fixture()
        };
        let no_single = DecoyBounds {
            n1_low: 0.0,
            ..saturated
        };
        assert_eq!(
            secure_key_length_v1(&saturated, 0.0, &sec()),
            secure_key_length_v1(&no_single, 0.0, &sec())
        );

        let clean = DecoyBounds {
            eph_up: 0.0,
            ..fixture()
        };
        assert_eq!(
            secure_key_length_v2(&clean, 30000.0, &sec()),
            (1000.0 + 50000.0 - 30000.0 - delta_v2(&sec())).floor() as i64
        );
    }

    #[test]
    fn v2_reduces_to_v1_shape_when_bounds_coincide() {
        let b = DecoyBounds {
            n1_up: 50000.0,
            ..fixture()
        };
        let raw_v1 = secure_key_length_v1(&b, 30000.0, &sec()) as f64 + delta_v1(&sec());
        let raw_v2 = secure_key_length_v2(&b, 30000.0, &sec()) as f64 + delta_v2(&sec());
        assert!((raw_v1 - raw_v2).abs() <= 1.0);
    }

    #[test]
    fn rates() {
        let link = LinkModel {
            clock_hz: 1e9,
            session_pulses: 1e12,
            ..Default::default()
        };
        assert_eq!(key_rate_bps(-5, &link), 0.0);
        assert_relative_eq!(key_rate_bps(8400, &link), 8.4);
        assert_relative_eq!(key_rate_bps(16800, &link), 2.0 * key_rate_bps(8400, &link));
    }

    #[test]
    fn analytic_all_zero_counts() {
        let b = decoy_bounds_analytic(&SessionCounts::zero(), &ProtocolParams::default(), Deviation::Hoeffding)
            .unwrap();
        assert_eq!((b.n0_low, b.n1_low, b.n1_up, b.s_x1_low, b.v_x1_up), (0.0, 0.0, 0.0, 0.0, 0.0));
        assert_eq!(b.eph_up, 0.5);
    }

    #[test]
    fn analytic_rejects_bad_intensities() {
        let mut p = ProtocolParams::default();
        p.intensities.v = 0.3;
        p.intensities.u = 0.2;
        assert!(decoy_bounds_analytic(&SessionCounts::zero(), &p, Deviation::Zero).is_err());
    }

    proptest! {
        #[test]
        fn key_length_monotone(
            n0 in 0.0f64..1e5, n1 in 0.0f64..1e6, extra in 0.0f64..1e5,
            eph in 0.0f64..0.5, lam in 0.0f64..1e5, bump in 1.0f64..1e4,
        ) {
            let s = sec();
            let b = DecoyBounds { n0_low: n0, n1_low: n1, n1_up: n1 + extra, eph_up: eph, ..DecoyBounds::zero(BoundMethod::Lp) };
            let l1 = secure_key_length_v1(&b, lam, &s);
            let l2 = secure_key_length_v2(&b, lam, &s);
            let more_n0 = DecoyBounds { n0_low: n0 + bump, ..b };
            let more_n1 = DecoyBounds { n1_low: n1 + bump, n1_up: n1 + extra + bump, ..b };
            let more_n1_low_only = DecoyBounds { n1_low: (n1 + bump).min(n1 + extra), ..b };
            let worse_eph = DecoyBounds { eph_up: (eph + 0.01).min(0.5), ..b };
            let more_up = DecoyBounds { n1_up: n1 + extra + bump, ..b };
            prop_assert!(secure_key_length_v1(&more_n0, lam, &s) >= l1);
            prop_assert!(secure_key_length_v1(&more_n1, lam, &s) >= l1);
            prop_assert!(secure_key_length_v1(&worse_eph, lam, &s) <= l1);
            prop_assert!(secure_key_length_v1(&b, lam + bump, &s) <= l1);
            prop_assert!(secure_key_length_v2(&more_n0, lam, &s) >= l2);
            prop_assert!(secure_key_length_v2(&more_n1_low_only, lam, &s) >= l2);
            prop_assert!(secure_key_length_v2(&worse_eph, lam, &s) <= l2);
            prop_assert!(secure_key_length_v2(&b, lam + bump, &s) <= l2);
            prop_assert!(secure_key_length_v2(&more_up, lam, &s) <= l2);
        }

        #[test]
        fn key_length_monotone_in_epsilons(e1 in 1e-14f64..1e-2, e2 in 1e-16f64..1e-2, f in 1.0f64..100.0) {
            let b = fixture();
            let lo = SecurityParams { eps_sec: e1, eps_cor: e2, f_ec: 1.0 };
            let hi = SecurityParams { eps_sec: (e1 * f).min(0.5), eps_cor: (e2 * f).min(0.5), f_ec: 1.0 };
            prop_assert!(secure_key_length_v1(&b, 0.0, &hi) >= secure_key_length_v1(&b, 0.0, &lo));
            prop_assert!(secure_key_length_v2(&b, 0.0, &hi) >= secure_key_length_v2(&b, 0.0, &lo));
            prop_assert!(delta_v2(&lo) > delta_v1(&lo));
        }

        #[test]
        fn gamma_symmetric(e in 0.001f64..0.4, c in 1.0f64..1e8, d in 1.0f64..1e8) {
            prop_assert_eq!(gamma_correction(1e-10, e, c, d), gamma_correction(1e-10, e, d, c));
        }
    }
}
