//! Link physics: transmittance, noise floor, Raman scattering from classical
//! channels, and the detection statistics of a key session.
//!
//! Sessions come in two flavours. [`expected_session_counts`] rounds the
//! expected tallies and is fully deterministic; [`sample_session_counts`]
//! draws them from the photon-number-resolved model with a seeded RNG. Both
//! record the per-photon-number ground truth in [`PhotonTruth`], which only
//! tests and self-checks look at.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};

use crate::params::{
    poisson_pn, Basis, DetectorModel, Intensity, LinkModel, MuxChannel, MuxConfig, ProtocolParams,
};

/// Photon number up to which the ground truth is resolved; larger photon
/// numbers are lumped into a tail bucket.
pub const TRUTH_PHOTON_CUTOFF: u32 = 9;

const WAVELENGTH_M: f64 = 1550e-9;
const SPEED_OF_LIGHT: f64 = 299_792_458.0;
const PLANCK: f64 = 6.626_070_15e-34;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ChannelError {
    #[error("no detections: error rate undefined")]
    NoDetections,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IntensityCounts {
    pub sent: u64,
    pub detected: u64,
    pub errors: u64,
}

impl IntensityCounts {
    pub fn gain(&self) -> f64 {
        if self.sent == 0 {
            0.0
        } else {
            self.detected as f64 / self.sent as f64
        }
    }

    pub fn error_rate(&self) -> f64 {
        if self.detected == 0 {
            0.0
        } else {
            self.errors as f64 / self.detected as f64
        }
    }
}

/// Per-photon-number ground truth of a session. Never used by the
/// estimators; indexed `[basis][intensity][photon number]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhotonTruth {
    pub n_cut: u32,
    pub detected: [[Vec<u64>; 3]; 2],
    pub errors: [[Vec<u64>; 3]; 2],
    /// Detections from pulses with more than `n_cut` photons.
    pub detected_tail: [[u64; 3]; 2],
    pub errors_tail: [[u64; 3]; 2],
    /// Model yields `Y_n` for `n = 0..=n_cut`.
    pub yields: Vec<f64>,
    /// Model probabilities of an erroneous click given `n` photons.
    pub error_yields: Vec<f64>,
}

impl PhotonTruth {
    /// Detected `n`-photon events in basis `b`, from one intensity or all.
    pub fn events(&self, b: Basis, n: u32, k: Option<Intensity>) -> u64 {
        let per_k = &self.detected[b.index()];
        match k {
            Some(k) => per_k[k.index()][n as usize],
            None => per_k.iter().map(|v| v[n as usize]).sum(),
        }
    }

    pub fn error_events(&self, b: Basis, n: u32, k: Option<Intensity>) -> u64 {
        let per_k = &self.errors[b.index()];
        match k {
            Some(k) => per_k[k.index()][n as usize],
            None => per_k.iter().map(|v| v[n as usize]).sum(),
        }
    }
}

/// Sifted tallies of one session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionCounts {
    /// Indexed by [`Intensity::index`].
    pub z: [IntensityCounts; 3],
    pub x: [IntensityCounts; 3],
    /// Pulses whose preparation and measurement bases differed.
    pub discarded: u64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub truth: Option<PhotonTruth>,
}

impl SessionCounts {
    pub fn zero() -> Self {
        Self {
            z: [IntensityCounts::default(); 3],
            x: [IntensityCounts::default(); 3],
            discarded: 0,
            truth: None,
        }
    }

    pub fn basis(&self, b: Basis) -> &[IntensityCounts; 3] {
        match b {
            Basis::Z => &self.z,
            Basis::X => &self.x,
        }
    }

    pub fn basis_mut(&mut self, b: Basis) -> &mut [IntensityCounts; 3] {
        match b {
            Basis::Z => &mut self.z,
            Basis::X => &mut self.x,
        }
    }

    pub fn get(&self, b: Basis, k: Intensity) -> &IntensityCounts {
        &self.basis(b)[k.index()]
    }

    pub fn total_sent(&self, b: Basis) -> u64 {
        self.basis(b).iter().map(|c| c.sent).sum()
    }

    pub fn total_detected(&self, b: Basis) -> u64 {
        self.basis(b).iter().map(|c| c.detected).sum()
    }

    pub fn total_errors(&self, b: Basis) -> u64 {
        self.basis(b).iter().map(|c| c.errors).sum()
    }

    pub fn total_detected_z(&self) -> u64 {
        self.total_detected(Basis::Z)
    }

    /// Error rate over all key-basis detections.
    pub fn observed_qber_z(&self) -> f64 {
        let n = self.total_detected(Basis::Z);
        if n == 0 {
            0.0
        } else {
            self.total_errors(Basis::Z) as f64 / n as f64
        }
    }
}

/// Expectation-mode gain and error rate per intensity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct YieldCurve {
    pub gain: [f64; 3],
    pub error_rate: [f64; 3],
}

/// Transmittance and noise floor seen by the quantum signal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelState {
    /// Overall probability that a photon sent by Alice clicks a detector.
    pub eta: f64,
    /// Probability of a noise click per gate (both detectors).
    pub y0: f64,
    pub p_raman: f64,
    pub e_misalign: f64,
}

impl ChannelState {
    pub fn from_params(p: &ProtocolParams) -> Self {
        let quantum_link = LinkModel {
            extra_loss_db: p.quantum_path_extra_loss_db(),
            ..p.link
        };
        let eta = system_transmittance(&quantum_link, &p.detector);
        let p_raman = p
            .mux
            .as_ref()
            .map_or(0.0, |m| raman_click_prob(m, &p.link, &p.detector));
        let y0 = background_click_prob(&p.detector, &p.link, p_raman);
        Self {
            eta,
            y0,
            p_raman,
            e_misalign: p.detector.e_misalign,
        }
    }

    /// Click probability for an `n`-photon pulse.
    pub fn yield_n(&self, n: u32) -> f64 {
        // 1 - (1 - y0)(1 - eta)^n
        -((-self.y0).ln_1p() + f64::from(n) * (-self.eta).ln_1p()).exp_m1()
    }

    /// Probability of an erroneous click for an `n`-photon pulse.
    pub fn error_yield_n(&self, n: u32) -> f64 {
        let signal = -(f64::from(n) * (-self.eta).ln_1p()).exp_m1();
        0.5 * self.y0 + self.e_misalign * signal * (1.0 - self.y0)
    }

    pub fn gain(&self, mu: f64) -> f64 {
        expected_gain(mu, self.eta, self.y0)
    }

    pub fn error_rate(&self, mu: f64) -> Result<f64, ChannelError> {
        expected_error_rate(mu, self.eta, self.y0, self.e_misalign)
    }
}

pub fn yield_curve(p: &ProtocolParams) -> YieldCurve {
    let st = ChannelState::from_params(p);
    let mut curve = YieldCurve {
        gain: [0.0; 3],
        error_rate: [0.0; 3],
    };
    for k in Intensity::ALL {
        let mu = p.intensities.mean(k);
        curve.gain[k.index()] = st.gain(mu);
        curve.error_rate[k.index()] = st.error_rate(mu).unwrap_or(0.0);
    }
    curve
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

pub fn dbm_to_watts(dbm: f64) -> f64 {
    1e-3 * db_to_linear(dbm)
}

/// Detector efficiency times the fiber and extra loss.
pub fn system_transmittance(link: &LinkModel, det: &DetectorModel) -> f64 {
    det.efficiency * db_to_linear(-link.attenuation_db())
}

/// Filter passband converted to a wavelength width around 1550 nm, in nm.
pub fn filter_bandwidth_nm(bandwidth_ghz: f64) -> f64 {
    WAVELENGTH_M * WAVELENGTH_M * bandwidth_ghz * 1e9 / SPEED_OF_LIGHT * 1e9
}

pub fn photon_energy_j() -> f64 {
    PLANCK * SPEED_OF_LIGHT / WAVELENGTH_M
}

/// Forward Raman noise power from one channel reaching Bob's detectors, in W.
pub fn raman_power_at_detector_w(ch: &MuxChannel, mux: &MuxConfig, link: &LinkModel) -> f64 {
    let launch_w = dbm_to_watts(ch.launch_power_dbm);
    if launch_w == 0.0 || link.length_km == 0.0 {
        return 0.0;
    }
    let alpha = link.loss_coeff_db_per_km * std::f64::consts::LN_10 / 10.0;
    let len = link.length_km;
    let scattered = launch_w
        * ch.raman_coeff_per_km_nm
        * filter_bandwidth_nm(mux.filter_bandwidth_ghz)
        * len
        * (-alpha * len).exp();
    scattered * db_to_linear(-(mux.drop_filter_loss_db + link.extra_loss_db))
}

/// Per-gate, per-detector click probability caused by Raman scattering of
/// all co-propagating classical channels.
pub fn raman_click_prob(mux: &MuxConfig, link: &LinkModel, det: &DetectorModel) -> f64 {
    let per_photon = det.efficiency * det.gate_width_s / photon_energy_j();
    let p: f64 = mux
        .channels
        .iter()
        .map(|ch| raman_power_at_detector_w(ch, mux, link) * per_photon)
        .sum();
    p.min(1.0)
}

/// Noise click probability per gate across Bob's two detectors.
pub fn background_click_prob(det: &DetectorModel, link: &LinkModel, p_raman: f64) -> f64 {
    let p_dark = (det.dark_cps / link.clock_hz).clamp(0.0, 1.0);
    let p_raman = p_raman.clamp(0.0, 1.0);
    let log_quiet = 2.0 * (-p_dark).ln_1p() + 2.0 * (-p_raman).ln_1p();
    (-log_quiet.exp_m1()).min(1.0)
}

/// Detection probability of a pulse with mean photon number `mu`.
pub fn expected_gain(mu: f64, eta: f64, y0: f64) -> f64 {
    -((-y0).ln_1p() - eta * mu).exp_m1()
}

/// Fraction of detections that are errors.
pub fn expected_error_rate(mu: f64, eta: f64, y0: f64, e_misalign: f64) -> Result<f64, ChannelError> {
    let q = expected_gain(mu, eta, y0);
    if q <= 0.0 {
        return Err(ChannelError::NoDetections);
    }
    let signal = -(-eta * mu).exp_m1();
    let e = (0.5 * y0 + e_misalign * signal * (1.0 - y0)) / q;
    Ok(e.clamp(0.0, 0.5))
}

/// Receive power of a classical channel ahead of the receiver's amplifier.
pub fn receive_power_dbm(ch: &MuxChannel, link: &LinkModel) -> f64 {
    ch.launch_power_dbm - link.loss_coeff_db_per_km * link.length_km - link.extra_loss_db
}

/// Launch power needed to reach `receive_dbm` at the end of `link`.
pub fn launch_for_receive_dbm(receive_dbm: f64, link: &LinkModel) -> f64 {
    receive_dbm + link.loss_coeff_db_per_km * link.length_km + link.extra_loss_db
}

fn session_pulses(p: &ProtocolParams) -> u64 {
    p.link.session_pulses.round().max(0.0) as u64
}

fn empty_truth(n_cut: u32, st: &ChannelState) -> PhotonTruth {
    let len = n_cut as usize + 1;
    let row = || [vec![0u64; len], vec![0u64; len], vec![0u64; len]];
    PhotonTruth {
        n_cut,
        detected: [row(), row()],
        errors: [row(), row()],
        detected_tail: [[0; 3]; 2],
        errors_tail: [[0; 3]; 2],
        yields: (0..=n_cut).map(|n| st.yield_n(n)).collect(),
        error_yields: (0..=n_cut).map(|n| st.error_yield_n(n)).collect(),
    }
}

/// Deterministic session tallies: every count is its expectation, rounded.
pub fn expected_session_counts(p: &ProtocolParams) -> SessionCounts {
    let st = ChannelState::from_params(p);
    let n_total = p.link.session_pulses.max(0.0);
    let n_cut = TRUTH_PHOTON_CUTOFF;
    let mut truth = empty_truth(n_cut, &st);
    let mut counts = SessionCounts::zero();
    let mut matched = 0u64;

    for b in Basis::ALL {
        let f = p.probabilities.sifting_factor(b);
        for k in Intensity::ALL {
            let mu = p.intensities.mean(k);
            let sent = (n_total * p.probabilities.prob(k) * f).round();
            let q = st.gain(mu);
            let n_exact = sent * q;
            let e = st.error_rate(mu).unwrap_or(0.0);
            let c = &mut counts.basis_mut(b)[k.index()];
            c.sent = sent as u64;
            c.detected = n_exact.round() as u64;
            c.errors = ((n_exact * e).round() as u64).min(c.detected);
            matched += c.sent;

            let (bi, ki) = (b.index(), k.index());
            let mut det_head = 0.0;
            let mut err_head = 0.0;
            for n in 0..=n_cut {
                let pulses = sent * poisson_pn(n, mu);
                let d = pulses * truth.yields[n as usize];
                let m = pulses * truth.error_yields[n as usize];
                truth.detected[bi][ki][n as usize] = d.round() as u64;
                truth.errors[bi][ki][n as usize] = m.round() as u64;
                det_head += d;
                err_head += m;
            }
            truth.detected_tail[bi][ki] = (n_exact - det_head).max(0.0).round() as u64;
            truth.errors_tail[bi][ki] = (n_exact * e - err_head).max(0.0).round() as u64;
        }
    }
    counts.discarded = session_pulses(p).saturating_sub(matched);
    counts.truth = Some(truth);
    counts
}

fn binomial(rng: &mut ChaCha8Rng, n: u64, p: f64) -> u64 {
    if n == 0 || p <= 0.0 {
        return 0;
    }
    if p >= 1.0 {
        return n;
    }
    Binomial::new(n, p).expect("valid binomial").sample(rng)
}

/// Splits `n` draws over categories with probabilities `probs` (summing to 1).
fn multinomial(rng: &mut ChaCha8Rng, n: u64, probs: &[f64]) -> Vec<u64> {
    let mut out = vec![0u64; probs.len()];
    let mut remaining = n;
    let mut mass_left: f64 = probs.iter().sum();
    for (i, &p) in probs.iter().enumerate() {
        if remaining == 0 {
            break;
        }
        if i + 1 == probs.len() || mass_left <= 0.0 {
            out[i] = remaining;
            break;
        }
        let c = binomial(rng, remaining, (p / mass_left).min(1.0));
        out[i] = c;
        remaining -= c;
        mass_left -= p;
    }
    out
}

/// Photon numbers beyond which the Poisson mass is treated as empty.
const MAX_SAMPLED_PHOTONS: u32 = 64;

/// Stochastic session: per-pulse photon numbers, detections and errors drawn
/// from the model. Deterministic for a given seed.
pub fn sample_session_counts(p: &ProtocolParams, seed: u64) -> SessionCounts {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let st = ChannelState::from_params(p);
    let n_cut = TRUTH_PHOTON_CUTOFF;
    let mut truth = empty_truth(n_cut, &st);
    let mut counts = SessionCounts::zero();

    // 3 intensities x {Z matched, X matched, mismatched}
    let fz = p.probabilities.sifting_factor(Basis::Z);
    let fx = p.probabilities.sifting_factor(Basis::X);
    let mut cells = Vec::with_capacity(9);
    for k in Intensity::ALL {
        let pk = p.probabilities.prob(k);
        cells.extend([pk * fz, pk * fx, pk * (1.0 - fz - fx).max(0.0)]);
    }
    let sent = multinomial(&mut rng, session_pulses(p), &cells);

    for k in Intensity::ALL {
        let mu = p.intensities.mean(k);
        let pn: Vec<f64> = (0..=MAX_SAMPLED_PHOTONS).map(|n| poisson_pn(n, mu)).collect();
        counts.discarded += sent[3 * k.index() + 2];
        for b in Basis::ALL {
            let n_sent = sent[3 * k.index() + b.index()];
            let by_photons = multinomial(&mut rng, n_sent, &pn);
            let (bi, ki) = (b.index(), k.index());
            let mut detected = 0;
            let mut errors = 0;
            for (n, &pulses) in by_photons.iter().enumerate() {
                let y = st.yield_n(n as u32);
                let d = binomial(&mut rng, pulses, y);
                let m = if d > 0 {
                    binomial(&mut rng, d, (st.error_yield_n(n as u32) / y).min(1.0))
                } else {
                    0
                };
                if n as u32 <= n_cut {
                    truth.detected[bi][ki][n] = d;
                    truth.errors[bi][ki][n] = m;
                } else {
                    truth.detected_tail[bi][ki] += d;
                    truth.errors_tail[bi][ki] += m;
                }
                detected += d;
                errors += m;
            }
            counts.basis_mut(b)[ki] = IntensityCounts {
                sent: n_sent,
                detected,
                errors,
            };
        }
    }
    counts.truth = Some(truth);
    counts
}
