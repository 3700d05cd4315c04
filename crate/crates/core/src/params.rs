//! Protocol and physics configuration.
//!
//! Everything the rest of the crate consumes lives here: decoy intensities,
//! selection and basis probabilities, security parameters, the fiber link,
//! the receiver's detectors and the optional classical multiplexing setup.
//! Values are plain data; [`validate`] checks every invariant at once and
//! reports all violations rather than stopping at the first.

use std::fmt;

use serde::{Deserialize, Serialize};

/// One of the three pulse intensity settings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Intensity {
    /// Signal, `u`.
    Signal,
    /// Decoy, `v`.
    Decoy,
    /// Near-vacuum, `w`.
    Vacuum,
}

impl Intensity {
    pub const ALL: [Intensity; 3] = [Intensity::Signal, Intensity::Decoy, Intensity::Vacuum];

    pub fn index(self) -> usize {
        match self {
            Intensity::Signal => 0,
            Intensity::Decoy => 1,
            Intensity::Vacuum => 2,
        }
    }

    pub fn symbol(self) -> &'static str {
        match self {
            Intensity::Signal => "u",
            Intensity::Decoy => "v",
            Intensity::Vacuum => "w",
        }
    }
}

/// Preparation/measurement basis. `Z` carries key bits, `X` is the test basis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Basis {
    Z,
    X,
}

impl Basis {
    pub const ALL: [Basis; 2] = [Basis::Z, Basis::X];

    pub fn index(self) -> usize {
        match self {
            Basis::Z => 0,
            Basis::X => 1,
        }
    }
}

/// Mean photon numbers per pulse for the three intensity settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IntensitySet {
    pub u: f64,
    pub v: f64,
    pub w: f64,
}

impl Default for IntensitySet {
    fn default() -> Self {
        Self {
            u: 0.5,
            v: 0.11,
            w: 0.0007,
        }
    }
}

impl IntensitySet {
    pub fn mean(&self, k: Intensity) -> f64 {
        match k {
            Intensity::Signal => self.u,
            Intensity::Decoy => self.v,
            Intensity::Vacuum => self.w,
        }
    }
}

/// Intensity selection probabilities and per-endpoint Z-basis probabilities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelectionProbs {
    pub p_u: f64,
    pub p_v: f64,
    pub p_w: f64,
    pub qz_alice: f64,
    pub qz_bob: f64,
}

impl Default for SelectionProbs {
    fn default() -> Self {
        Self {
            p_u: 0.5,
            p_v: 0.25,
            p_w: 0.25,
            qz_alice: 0.5,
            qz_bob: 0.5,
        }
    }
}

impl SelectionProbs {
    pub fn prob(&self, k: Intensity) -> f64 {
        match k {
            Intensity::Signal => self.p_u,
            Intensity::Decoy => self.p_v,
            Intensity::Vacuum => self.p_w,
        }
    }

    /// Probability that both endpoints pick basis `b` for a pulse.
    pub fn sifting_factor(&self, b: Basis) -> f64 {
        match b {
            Basis::Z => self.qz_alice * self.qz_bob,
            Basis::X => (1.0 - self.qz_alice) * (1.0 - self.qz_bob),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SecurityParams {
    pub eps_sec: f64,
    pub eps_cor: f64,
    /// Error-correction inefficiency relative to the Shannon limit.
    pub f_ec: f64,
}

impl Default for SecurityParams {
    fn default() -> Self {
        Self {
            eps_sec: 1e-10,
            eps_cor: 1e-15,
            f_ec: 1.16,
        }
    }
}

/// Fiber link between Alice and Bob plus the session timing.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LinkModel {
    pub length_km: f64,
    pub loss_coeff_db_per_km: f64,
    /// Connector, splice and receiver-internal loss on top of the fiber.
    pub extra_loss_db: f64,
    pub clock_hz: f64,
    /// Total pulses sent in one key session.
    pub session_pulses: f64,
}

impl Default for LinkModel {
    fn default() -> Self {
        Self {
            length_km: 240.0,
            loss_coeff_db_per_km: 0.18,
            extra_loss_db: 1.2,
            clock_hz: 1e9,
            session_pulses: 5.5e12,
        }
    }
}

impl LinkModel {
    /// Fiber plus extra loss, in dB.
    pub fn attenuation_db(&self) -> f64 {
        self.loss_coeff_db_per_km * self.length_km + self.extra_loss_db
    }

    /// Session length in seconds.
    pub fn session_duration_s(&self) -> f64 {
        self.session_pulses / self.clock_hz
    }

    /// Fiber length that gives `attenuation_db` in total with the current
    /// coefficient and extra loss.
    pub fn length_for_attenuation(&self, attenuation_db: f64) -> f64 {
        (attenuation_db - self.extra_loss_db) / self.loss_coeff_db_per_km
    }
}

/// Gated single-photon detector pair at Bob.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorModel {
    pub efficiency: f64,
    /// Dark counts per second, per detector.
    pub dark_cps: f64,
    /// Intrinsic optical error probability.
    pub e_misalign: f64,
    pub gate_width_s: f64,
    pub temperature_c: f64,
    pub ref_dark_cps: f64,
    pub ref_temperature_c: f64,
}

impl Default for DetectorModel {
    fn default() -> Self {
        Self {
            efficiency: 0.1,
            dark_cps: 10.0,
            e_misalign: 0.031,
            gate_width_s: 100e-12,
            temperature_c: -60.0,
            ref_dark_cps: 10.0,
            ref_temperature_c: -60.0,
        }
    }
}

impl DetectorModel {
    /// Dark count rate at `t_c`, halving for every 10 °C of cooling relative
    /// to the calibration anchor.
    pub fn dark_rate_at_temperature(&self, t_c: f64) -> f64 {
        dark_rate_at_temperature(self, t_c)
    }

    /// Copy of this detector operated at `t_c`, with `dark_cps` following the
    /// temperature law.
    pub fn at_temperature(&self, t_c: f64) -> Self {
        Self {
            dark_cps: self.dark_rate_at_temperature(t_c),
            temperature_c: t_c,
            ..*self
        }
    }
}

pub fn dark_rate_at_temperature(det: &DetectorModel, t_c: f64) -> f64 {
    if t_c == det.ref_temperature_c {
        return det.ref_dark_cps;
    }
    det.ref_dark_cps * ((t_c - det.ref_temperature_c) / 10.0).exp2()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChannelRole {
    Clock,
    Data,
}

/// A classical channel sharing the fiber with the quantum signal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MuxChannel {
    pub launch_power_dbm: f64,
    pub role: ChannelRole,
    /// Raman scattering coefficient into the quantum band, 1/(km·nm).
    #[serde(default = "default_raman_coeff")]
    pub raman_coeff_per_km_nm: f64,
    #[serde(default = "default_true")]
    pub copropagating: bool,
}

/// Raman coefficient fitted so that a single data channel at 100 km stops
/// the key at about -23 dBm receive power (see `optimize::calibrate_raman_coefficient`).
pub const DEFAULT_RAMAN_COEFF: f64 = 2.021e-9;

fn default_raman_coeff() -> f64 {
    DEFAULT_RAMAN_COEFF
}

fn default_true() -> bool {
    true
}

impl MuxChannel {
    pub fn new(role: ChannelRole, launch_power_dbm: f64) -> Self {
        Self {
            launch_power_dbm,
            role,
            raman_coeff_per_km_nm: DEFAULT_RAMAN_COEFF,
            copropagating: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MuxConfig {
    pub channels: Vec<MuxChannel>,
    pub filter_bandwidth_ghz: f64,
    /// Insertion loss of the extra narrow filter in front of Bob's detectors.
    pub drop_filter_loss_db: f64,
    /// Receiver amplifier noise figure. Recorded only.
    pub amp_noise_figure_db: f64,
}

/// Minimum clock launch power that still keeps the receiver locked.
pub const CLOCK_LAUNCH_DBM: f64 = -8.7;

impl Default for MuxConfig {
    fn default() -> Self {
        Self {
            channels: vec![MuxChannel::new(ChannelRole::Clock, CLOCK_LAUNCH_DBM)],
            filter_bandwidth_ghz: 25.0,
            drop_filter_loss_db: 3.0,
            amp_noise_figure_db: 3.3,
        }
    }
}

/// The full configuration aggregate.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProtocolParams {
    pub intensities: IntensitySet,
    pub probabilities: SelectionProbs,
    #[serde(alias = "epsilons")]
    pub security: SecurityParams,
    pub link: LinkModel,
    pub detector: DetectorModel,
    /// Classical channels on the same fiber. `None` means dark fiber.
    pub mux: Option<MuxConfig>,
}

impl ProtocolParams {
    /// Loss seen by the quantum signal, including the multiplexing filter
    /// when classical channels share the fiber.
    pub fn quantum_path_extra_loss_db(&self) -> f64 {
        self.link.extra_loss_db + self.mux.as_ref().map_or(0.0, |m| m.drop_filter_loss_db)
    }
}

/// One violated invariant.
#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub path: String,
    pub value: String,
    pub message: &'static str,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} = {}: {}", self.path, self.value, self.message)
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub struct ValidationErrors(pub Vec<Violation>);

impl fmt::Display for ValidationErrors {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} invalid parameter(s)", self.0.len())?;
        for v in &self.0 {
            write!(f, "\n  {v}")?;
        }
        Ok(())
    }
}

impl ValidationErrors {
    pub fn violations(&self) -> &[Violation] {
        &self.0
    }

    pub fn mentions(&self, needle: &str) -> bool {
        self.0
            .iter()
            .any(|v| v.message.contains(needle) || v.path.contains(needle))
    }
}

struct Checker(Vec<Violation>);

impl Checker {
    fn check(&mut self, ok: bool, path: &str, value: impl fmt::Display, message: &'static str) {
        // NaN fails every comparison, so `ok` is false for it as well.
        if !ok {
            self.0.push(Violation {
                path: path.to_string(),
                value: value.to_string(),
                message,
            });
        }
    }
}

/// Checks every invariant of the aggregate and returns all violations.
pub fn validate(p: &ProtocolParams) -> Result<(), ValidationErrors> {
    let mut c = Checker(Vec::new());

    let i = &p.intensities;
    c.check(i.w >= 0.0, "intensities.w", i.w, "must be non-negative");
    c.check(i.v > i.w, "intensities.v", i.v, "decoy must exceed vacuum intensity");
    c.check(i.u > i.v, "intensities.u", i.u, "signal must exceed decoy intensity");
    c.check(
        i.v + i.w < i.u,
        "intensities",
        format!("v + w = {}, u = {}", i.v + i.w, i.u),
        "decoy denominator constraint: v + w must be below u",
    );

    let s = &p.probabilities;
    for (path, val) in [
        ("probabilities.p_u", s.p_u),
        ("probabilities.p_v", s.p_v),
        ("probabilities.p_w", s.p_w),
    ] {
        c.check(val > 0.0 && val <= 1.0, path, val, "must be in (0, 1]");
    }
    let total = s.p_u + s.p_v + s.p_w;
    c.check(
        (total - 1.0).abs() <= 1e-9,
        "probabilities",
        total,
        "probabilities must sum to 1",
    );
    for (path, val) in [
        ("probabilities.qz_alice", s.qz_alice),
        ("probabilities.qz_bob", s.qz_bob),
    ] {
        c.check(val > 0.0 && val < 1.0, path, val, "must be in (0, 1)");
    }

    let sec = &p.security;
    c.check(
        sec.eps_sec > 0.0 && sec.eps_sec < 1.0,
        "security.eps_sec",
        sec.eps_sec,
        "must be in (0, 1)",
    );
    c.check(
        sec.eps_cor > 0.0 && sec.eps_cor < 1.0,
        "security.eps_cor",
        sec.eps_cor,
        "must be in (0, 1)",
    );
    c.check(sec.f_ec >= 1.0, "security.f_ec", sec.f_ec, "must be at least 1");

    let l = &p.link;
    c.check(l.length_km >= 0.0, "link.length_km", l.length_km, "must be non-negative");
    c.check(
        l.loss_coeff_db_per_km >= 0.0,
        "link.loss_coeff_db_per_km",
        l.loss_coeff_db_per_km,
        "must be non-negative",
    );
    c.check(
        l.extra_loss_db >= 0.0,
        "link.extra_loss_db",
        l.extra_loss_db,
        "must be non-negative",
    );
    c.check(
        l.clock_hz > 0.0 && l.clock_hz.is_finite(),
        "link.clock_hz",
        l.clock_hz,
        "must be positive",
    );
    c.check(
        l.session_pulses >= 1.0 && l.session_pulses.is_finite(),
        "link.session_pulses",
        l.session_pulses,
        "must be at least 1",
    );

    let d = &p.detector;
    c.check(
        (0.0..=1.0).contains(&d.efficiency),
        "detector.efficiency",
        d.efficiency,
        "must be in [0, 1]",
    );
    c.check(d.dark_cps >= 0.0, "detector.dark_cps", d.dark_cps, "must be non-negative");
    c.check(
        (0.0..=0.5).contains(&d.e_misalign),
        "detector.e_misalign",
        d.e_misalign,
        "must be in [0, 0.5]",
    );
    c.check(
        d.gate_width_s >= 0.0,
        "detector.gate_width_s",
        d.gate_width_s,
        "must be non-negative",
    );
    c.check(
        d.ref_dark_cps >= 0.0,
        "detector.ref_dark_cps",
        d.ref_dark_cps,
        "must be non-negative",
    );
    c.check(
        d.temperature_c.is_finite(),
        "detector.temperature_c",
        d.temperature_c,
        "must be finite",
    );
    c.check(
        d.ref_temperature_c.is_finite(),
        "detector.ref_temperature_c",
        d.ref_temperature_c,
        "must be finite",
    );

    if let Some(m) = &p.mux {
        c.check(
            m.filter_bandwidth_ghz > 0.0,
            "mux.filter_bandwidth_ghz",
            m.filter_bandwidth_ghz,
            "must be positive",
        );
        c.check(
            m.drop_filter_loss_db >= 0.0,
            "mux.drop_filter_loss_db",
            m.drop_filter_loss_db,
            "must be non-negative",
        );
        for (idx, ch) in m.channels.iter().enumerate() {
            c.check(
                ch.raman_coeff_per_km_nm >= 0.0,
                &format!("mux.channels[{idx}].raman_coeff_per_km_nm"),
                ch.raman_coeff_per_km_nm,
                "must be non-negative",
            );
            c.check(
                !ch.launch_power_dbm.is_nan() && ch.launch_power_dbm != f64::INFINITY,
                &format!("mux.channels[{idx}].launch_power_dbm"),
                ch.launch_power_dbm,
                "must be a finite power or -inf",
            );
            c.check(
                ch.copropagating,
                &format!("mux.channels[{idx}].copropagating"),
                ch.copropagating,
                "only co-propagating channels are modelled",
            );
        }
    }

    if c.0.is_empty() {
        Ok(())
    } else {
        Err(ValidationErrors(c.0))
    }
}

/// `e^{-mu} mu^n / n!`.
pub fn poisson_pn(n: u32, mu: f64) -> f64 {
    if mu == 0.0 {
        return if n == 0 { 1.0 } else { 0.0 };
    }
    if n <= 30 {
        let mut p = (-mu).exp();
        for i in 1..=n {
            p *= mu / f64::from(i);
        }
        p
    } else {
        (-mu + f64::from(n) * mu.ln() - ln_factorial(n)).exp()
    }
}

fn ln_factorial(n: u32) -> f64 {
    (2..=n).map(|i| f64::from(i).ln()).sum()
}

/// Probability that Alice emits an `n`-photon pulse, averaged over the
/// intensity settings.
pub fn tau_n(n: u32, intensities: &IntensitySet, probs: &SelectionProbs) -> f64 {
    Intensity::ALL
        .iter()
        .map(|&k| probs.prob(k) * poisson_pn(n, intensities.mean(k)))
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn defaults_validate() {
        validate(&ProtocolParams::default()).unwrap();
        let mut p = ProtocolParams::default();
        p.mux = Some(MuxConfig::default());
        validate(&p).unwrap();
    }

    #[test]
    fn decoy_denominator_violation() {
        let mut p = ProtocolParams::default();
        p.intensities = IntensitySet {
            u: 0.1,
            v: 0.09,
            w: 0.02,
        };
        let err = validate(&p).unwrap_err();
        assert!(err.mentions("decoy denominator constraint"));
    }

    #[test]
    fn probabilities_must_sum_to_one() {
        let mut p = ProtocolParams::default();
        p.probabilities.p_w = 0.15;
        let err = validate(&p).unwrap_err();
        assert!(err.mentions("probabilities must sum to 1"));
    }

    #[test]
    fn all_violations_reported() {
        let mut p = ProtocolParams::default();
        p.security.f_ec = 0.9;
        p.detector.efficiency = 1.5;
        p.link.clock_hz = 0.0;
        p.probabilities.qz_bob = 1.0;
        let err = validate(&p).unwrap_err();
        let paths: Vec<_> = err.violations().iter().map(|v| v.path.as_str()).collect();
        assert_eq!(
            paths,
            [
                "probabilities.qz_bob",
                "security.f_ec",
                "link.clock_hz",
                "detector.efficiency"
            ]
        );
        assert_eq!(err.violations()[1].value, "0.9");
    }

    #[test]
    fn nan_is_rejected() {
        let mut p = ProtocolParams::default();
        p.detector.dark_cps = f64::NAN;
        assert!(validate(&p).unwrap_err().mentions("detector.dark_cps"));
    }

    #[test]
    fn counter_propagating_channel_rejected() {
        let mut p = ProtocolParams::default();
        let mut mux = MuxConfig::default();
        mux.channels[0].copropagating = false;
        p.mux = Some(mux);
        assert!(validate(&p).unwrap_err().mentions("co-propagating"));
    }

    #[test]
    fn poisson_values() {
        assert_eq!(poisson_pn(0, 0.0), 1.0);
        assert_eq!(poisson_pn(3, 0.0), 0.0);
        assert_relative_eq!(poisson_pn(0, 0.5), 0.606_531, max_relative = 1e-6);
        assert_relative_eq!(poisson_pn(2, 0.11), 0.005_420, max_relative = 1e-4);
        // log-space branch agrees with the product branch around the switch
        let direct: f64 = (-7.0f64).exp() * 7.0f64.powi(31) / (1..=31).map(f64::from).product::<f64>();
        assert_relative_eq!(poisson_pn(31, 7.0), direct, max_relative = 1e-12);
        assert!(poisson_pn(500, 2.0) >= 0.0);
    }

    #[test]
    fn tau_values() {
        let i = IntensitySet::default();
        let s = SelectionProbs::default();
        assert_relative_eq!(tau_n(0, &i, &s), 0.777_049, max_relative = 1e-6);
        assert_relative_eq!(tau_n(1, &i, &s), 0.176_442_981, max_relative = 1e-8);
    }

    #[test]
    fn tau_degenerate_mixture() {
        let i = IntensitySet::default();
        let s = SelectionProbs {
            p_u: 1.0,
            p_v: 0.0,
            p_w: 0.0,
            ..Default::default()
        };
        for n in 0..6 {
            assert_eq!(tau_n(n, &i, &s), poisson_pn(n, i.u));
        }
    }

    #[test]
    fn dark_rate_law() {
        let d = DetectorModel::default();
        assert_eq!(d.dark_rate_at_temperature(-60.0), 10.0);
        assert_relative_eq!(d.dark_rate_at_temperature(-50.0), 20.0, max_relative = 1e-15);
        let hot = d.at_temperature(-40.0);
        assert_relative_eq!(hot.dark_cps, 40.0, max_relative = 1e-15);
        assert_eq!(hot.temperature_c, -40.0);
    }

    #[test]
    fn unknown_config_keys_fail() {
        let bad = r#"{"link": {"length_km": 10, "bogus": 1}}"#;
        assert!(serde_json::from_str::<ProtocolParams>(bad).is_err());
        let bad_section = r#"{"links": {}}"#;
        assert!(serde_json::from_str::<ProtocolParams>(bad_section).is_err());
        let ok = r#"{"epsilons": {"eps_sec": 1e-9}}"#;
        let p: ProtocolParams = serde_json::from_str(ok).unwrap();
        assert_eq!(p.security.eps_sec, 1e-9);
        assert_eq!(p.security.f_ec, 1.16);
    }

    fn truncated_sum(f: impl Fn(u32) -> f64) -> f64 {
        // terms decay super-exponentially once n exceeds the mean; stop when
        // the remaining tail is bounded by the last term times a geometric factor
        let mut sum = 0.0;
        let mut n = 0;
        loop {
            let t = f(n);
            sum += t;
            if n > 5 && t < 1e-14 {
                break;
            }
            n += 1;
        }
        sum
    }

    proptest! {
        #[test]
        fn poisson_normalised(mu in 0.0f64..20.0) {
            let s = truncated_sum(|n| poisson_pn(n, mu));
            prop_assert!((s - 1.0).abs() < 1e-9);
        }

        #[test]
        fn tau_normalised(u in 0.2f64..1.0, v_frac in 0.05f64..0.5, w_frac in 0.0f64..0.4, pu in 0.1f64..0.8) {
            let v = u * v_frac;
            let w = v * w_frac;
            let i = IntensitySet { u, v, w };
            let rest = 1.0 - pu;
            let s = SelectionProbs { p_u: pu, p_v: rest / 2.0, p_w: rest / 2.0, ..Default::default() };
            let total = truncated_sum(|n| tau_n(n, &i, &s));
            prop_assert!((total - 1.0).abs() < 1e-9);
        }

        #[test]
        fn dark_rate_doubles_every_ten_degrees(t in -100.0f64..40.0) {
            let d = DetectorModel::default();
            let a = d.dark_rate_at_temperature(t);
            let b = d.dark_rate_at_temperature(t + 10.0);
            prop_assert!(((b / a) - 2.0).abs() <= 2.0 * 1e-12);
            prop_assert!(d.dark_rate_at_temperature(t + 0.5) > a);
        }

        #[test]
        fn validate_is_idempotent(u in -1.0f64..1.0, pu in -0.5f64..1.5, f_ec in 0.5f64..2.0) {
            let mut p = ProtocolParams::default();
            p.intensities.u = u;
            p.probabilities.p_u = pu;
            p.security.f_ec = f_ec;
            prop_assert_eq!(validate(&p), validate(&p.clone()));
        }
    }
}
