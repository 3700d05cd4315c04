//! One session from parameters to secure key lengths.

use serde::{Deserialize, Serialize};

use crate::channel::{expected_session_counts, sample_session_counts, ChannelState, SessionCounts};
use crate::finitekey::{
    decoy_bounds_analytic, delta_v1, delta_v2, key_rate_bps, lambda_ec, secure_key_length_v1, secure_key_length_v2,
    BoundMethod, DecoyBounds, Deviation, FiniteKeyError, KeyReport, VariantReport,
};
use crate::lp::{decoy_bounds_lp, DecoyLpOptions};
use crate::params::{Basis, Intensity, ProtocolParams};

/// How session tallies are produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Tallies are the rounded model expectations.
    #[default]
    Expectation,
    /// Tallies are drawn pulse by pulse from a seeded generator.
    Stochastic,
}

pub fn session_counts(params: &ProtocolParams, mode: Mode, seed: u64) -> SessionCounts {
    match mode {
        Mode::Expectation => expected_session_counts(params),
        Mode::Stochastic => sample_session_counts(params, seed),
    }
}

/// Simulates a session and evaluates both key length formulas.
pub fn evaluate_params(params: &ProtocolParams, mode: Mode, seed: u64) -> KeyReport {
    evaluate(params, session_counts(params, mode, seed), Deviation::Hoeffding)
}

/// Evaluates both protocol variants on given tallies.
///
/// The all-intensity variant uses analytic bounds and leaks over every
/// key-basis detection; the signal-only variant uses LP bounds and leaks
/// over signal detections only. An estimation failure zeroes that variant's
/// key and records the reason instead of aborting.
pub fn evaluate(params: &ProtocolParams, counts: SessionCounts, deviation: Deviation) -> KeyReport {
    let sec = &params.security;

    let n_all = counts.total_detected_z();
    let v1 = variant(
        decoy_bounds_analytic(&counts, params, deviation),
        BoundMethod::Analytic,
        n_all,
        counts.observed_qber_z(),
        params,
        delta_v1(sec),
        secure_key_length_v1,
    );

    let signal = counts.get(Basis::Z, Intensity::Signal);
    let opts = DecoyLpOptions {
        deviation,
        ..Default::default()
    };
    let v2 = variant(
        decoy_bounds_lp(&counts, params, &opts),
        BoundMethod::Lp,
        signal.detected,
        signal.error_rate(),
        params,
        delta_v2(sec),
        secure_key_length_v2,
    );

    KeyReport {
        secure_length_v1: v1.secure_length,
        secure_length_v2: v2.secure_length,
        rate_v1_bps: v1.rate_bps,
        rate_v2_bps: v2.rate_bps,
        v1,
        v2,
        attenuation_db: params.link.attenuation_db(),
        session_duration_s: params.link.session_duration_s(),
        deviation,
        channel: ChannelState::from_params(params),
        counts,
        params: params.clone(),
    }
}

fn variant(
    bounds: Result<DecoyBounds, FiniteKeyError>,
    method: BoundMethod,
    key_detections: u64,
    key_qber: f64,
    params: &ProtocolParams,
    delta: f64,
    length: fn(&DecoyBounds, f64, &crate::params::SecurityParams) -> i64,
) -> VariantReport {
    let lambda = lambda_ec(key_detections as f64, key_qber, params.security.f_ec);
    match bounds {
        Ok(b) => {
            let secure_length = length(&b, lambda, &params.security);
            VariantReport {
                secure_length,
                rate_bps: key_rate_bps(secure_length, &params.link),
                lambda_ec: lambda,
                delta,
                key_detections,
                key_qber,
                bounds: b,
                failure: None,
            }
        }
        Err(e) => VariantReport {
            secure_length: 0,
            rate_bps: 0.0,
            lambda_ec: lambda,
            delta,
            key_detections,
            key_qber,
            bounds: DecoyBounds::zero(method),
            failure: Some(e.to_string()),
        },
    }
}
