//! Sweeps over distance and classical receive power, the attenuation-only
//! reference curve, and a local search over the protocol's free settings.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::launch_for_receive_dbm;
use crate::evaluate::{evaluate_params, Mode};
use crate::finitekey::KeyReport;
use crate::params::{validate, ChannelRole, ProtocolParams, ValidationErrors};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum OptimizeError {
    #[error("invalid range: {0}")]
    InvalidRange(String),
    #[error("invalid search box: {0}")]
    InvalidBox(String),
    #[error("empty feasible box: {0}")]
    EmptyBox(String),
    #[error("power sweep needs a mux config with exactly one data channel, found {0}")]
    DataChannel(usize),
    #[error("anchor rate must be positive")]
    AnchorNotPositive,
    #[error("calibration failed: {0}")]
    Calibration(String),
    #[error(transparent)]
    Invalid(#[from] ValidationErrors),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    DistanceKm,
    ReceivePowerDbm,
    AttenuationDb,
}

impl Axis {
    pub fn unit(self) -> &'static str {
        match self {
            Axis::DistanceKm => "km",
            Axis::ReceivePowerDbm => "dBm",
            Axis::AttenuationDb => "dB",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub x: f64,
    pub axis: Axis,
    /// Key-basis error rate of the signal intensity.
    pub qber: f64,
    pub report: KeyReport,
}

impl SweepPoint {
    fn new(x: f64, axis: Axis, report: KeyReport) -> Self {
        Self {
            x,
            axis,
            qber: report.v2.key_qber,
            report,
        }
    }
}

/// Inclusive grid `from, from + step, ..., <= to`. Empty when `from > to`.
pub fn grid(from: f64, to: f64, step: f64) -> Result<Vec<f64>, OptimizeError> {
    if !(from.is_finite() && to.is_finite()) {
        return Err(OptimizeError::InvalidRange(format!("bounds {from}..{to}")));
    }
    if !(step > 0.0 && step.is_finite()) {
        return Err(OptimizeError::InvalidRange(format!("step {step}")));
    }
    if from > to {
        return Ok(Vec::new());
    }
    let n = ((to - from) / step + 1e-9).floor() as usize + 1;
    Ok((0..n).map(|i| from + i as f64 * step).collect())
}

/// Distinct per-point seed so stochastic sweeps do not share draws.
fn point_seed(seed: u64, i: usize) -> u64 {
    seed.wrapping_add(i as u64)
}

/// Key rates over fiber length. Points are evaluated in parallel and
/// returned in grid order.
pub fn sweep_distance(
    params: &ProtocolParams,
    from_km: f64,
    to_km: f64,
    step_km: f64,
    mode: Mode,
    seed: u64,
) -> Result<Vec<SweepPoint>, OptimizeError> {
    let xs = grid(from_km, to_km, step_km)?;
    if from_km < 0.0 && !xs.is_empty() {
        return Err(OptimizeError::InvalidRange(format!("negative distance {from_km}")));
    }
    Ok(xs
        .par_iter()
        .enumerate()
        .map(|(i, &km)| {
            let mut p = params.clone();
            p.link.length_km = km;
            SweepPoint::new(km, Axis::DistanceKm, evaluate_params(&p, mode, point_seed(seed, i)))
        })
        .collect())
}

/// Same as [`sweep_distance`] but indexed by total link attenuation.
pub fn sweep_attenuation(
    params: &ProtocolParams,
    from_db: f64,
    to_db: f64,
    step_db: f64,
    mode: Mode,
    seed: u64,
) -> Result<Vec<SweepPoint>, OptimizeError> {
    let xs = grid(from_db, to_db, step_db)?;
    Ok(xs
        .par_iter()
        .enumerate()
        .map(|(i, &db)| {
            let mut p = params.clone();
            p.link.length_km = p.link.length_for_attenuation(db);
            SweepPoint::new(db, Axis::AttenuationDb, evaluate_params(&p, mode, point_seed(seed, i)))
        })
        .collect())
}

fn data_channel_index(params: &ProtocolParams) -> Result<usize, OptimizeError> {
    let mux = params.mux.as_ref().ok_or(OptimizeError::DataChannel(0))?;
    let data: Vec<usize> = mux
        .channels
        .iter()
        .enumerate()
        .filter(|(_, c)| c.role == ChannelRole::Data)
        .map(|(i, _)| i)
        .collect();
    match data.as_slice() {
        [i] => Ok(*i),
        _ => Err(OptimizeError::DataChannel(data.len())),
    }
}

/// Copy of `params` at `link_km` with the data channel launched so that it
/// arrives with `receive_dbm`.
pub fn with_receive_power(params: &ProtocolParams, link_km: f64, receive_dbm: f64) -> Result<ProtocolParams, OptimizeError> {
    let idx = data_channel_index(params)?;
    let mut p = params.clone();
    p.link.length_km = link_km;
    let launch = launch_for_receive_dbm(receive_dbm, &p.link);
    if let Some(m) = p.mux.as_mut() {
        m.channels[idx].launch_power_dbm = launch;
    }
    Ok(p)
}

/// Key rate and QBER against the data channel's receive power.
pub fn sweep_receive_power(
    params: &ProtocolParams,
    link_km: f64,
    from_dbm: f64,
    to_dbm: f64,
    step_db: f64,
    mode: Mode,
    seed: u64,
) -> Result<Vec<SweepPoint>, OptimizeError> {
    data_channel_index(params)?;
    let xs = grid(from_dbm, to_dbm, step_db)?;
    xs.par_iter()
        .enumerate()
        .map(|(i, &dbm)| {
            let p = with_receive_power(params, link_km, dbm)?;
            Ok(SweepPoint::new(
                dbm,
                Axis::ReceivePowerDbm,
                evaluate_params(&p, mode, point_seed(seed, i)),
            ))
        })
        .collect()
}

/// Rate expected if only fiber attenuation changed relative to an anchor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExtrapolatedRate {
    pub attenuation_db: f64,
    pub rate_v1_bps: f64,
    pub rate_v2_bps: f64,
}

pub fn attenuation_extrapolation(anchor: &SweepPoint, attenuation_db: &[f64]) -> Result<Vec<ExtrapolatedRate>, OptimizeError> {
    let r = &anchor.report;
    if !(r.rate_v1_bps > 0.0 || r.rate_v2_bps > 0.0) {
        return Err(OptimizeError::AnchorNotPositive);
    }
    Ok(attenuation_db
        .iter()
        .map(|&a| {
            let f = 10f64.powf(-(a - r.attenuation_db) / 10.0);
            ExtrapolatedRate {
                attenuation_db: a,
                rate_v1_bps: r.rate_v1_bps * f,
                rate_v2_bps: r.rate_v2_bps * f,
            }
        })
        .collect())
}

/// Where the signal-only key rate stops being positive as the data
/// channel's receive power grows.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Threshold {
    /// Positive below this receive power (dBm), zero above.
    At(f64),
    /// Positive over the whole search window.
    AlwaysPositive,
    /// Zero over the whole search window.
    NeverPositive,
}

/// Bisects the receive power at which the expected v2 rate drops to zero.
pub fn rate_threshold_dbm(
    params: &ProtocolParams,
    link_km: f64,
    lo_dbm: f64,
    hi_dbm: f64,
    tol_db: f64,
) -> Result<Threshold, OptimizeError> {
    if !(lo_dbm < hi_dbm) || !(tol_db > 0.0) {
        return Err(OptimizeError::InvalidRange(format!("{lo_dbm}..{hi_dbm} tol {tol_db}")));
    }
    let positive = |dbm: f64| -> Result<bool, OptimizeError> {
        let p = with_receive_power(params, link_km, dbm)?;
        Ok(evaluate_params(&p, Mode::Expectation, 0).rate_v2_bps > 0.0)
    };
    if positive(hi_dbm)? {
        return Ok(Threshold::AlwaysPositive);
    }
    if !positive(lo_dbm)? {
        return Ok(Threshold::NeverPositive);
    }
    let (mut lo, mut hi) = (lo_dbm, hi_dbm);
    while hi - lo > tol_db {
        let mid = 0.5 * (lo + hi);
        if positive(mid)? {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(Threshold::At(0.5 * (lo + hi)))
}

/// Raman coefficient (applied to every channel) that puts the rate
/// threshold at `target_dbm` for a link of `link_km`.
pub fn calibrate_raman_coefficient(params: &ProtocolParams, link_km: f64, target_dbm: f64) -> Result<f64, OptimizeError> {
    let with_rho = |rho: f64| {
        let mut p = params.clone();
        if let Some(m) = p.mux.as_mut() {
            for c in &mut m.channels {
                c.raman_coeff_per_km_nm = rho;
            }
        }
        p
    };
    // more scattering lowers the threshold
    let above_target = |log_rho: f64| -> Result<bool, OptimizeError> {
        let p = with_rho(10f64.powf(log_rho));
        Ok(match rate_threshold_dbm(&p, link_km, target_dbm - 40.0, target_dbm + 40.0, 1e-3)? {
            Threshold::At(t) => t > target_dbm,
            Threshold::AlwaysPositive => true,
            Threshold::NeverPositive => false,
        })
    };
    let (mut lo, mut hi) = (-14.0, -4.0);
    if !above_target(lo)? || above_target(hi)? {
        return Err(OptimizeError::Calibration(format!(
            "no coefficient in 1e{lo}..1e{hi} places the threshold at {target_dbm} dBm"
        )));
    }
    while hi - lo > 1e-6 {
        let mid = 0.5 * (lo + hi);
        if above_target(mid)? {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(10f64.powf(0.5 * (lo + hi)))
}

/// Which key length formula the search maximises.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Objective {
    V1,
    #[default]
    V2,
}

/// Closed intervals for the searched settings. `qz` is applied to both
/// ends. The vacuum intensity stays at its configured value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchBox {
    pub u: (f64, f64),
    pub v: (f64, f64),
    pub p_u: (f64, f64),
    pub p_v: (f64, f64),
    pub qz: (f64, f64),
}

impl Default for SearchBox {
    fn default() -> Self {
        Self {
            u: (0.1, 0.9),
            v: (0.01, 0.4),
            p_u: (0.1, 0.9),
            p_v: (0.05, 0.6),
            qz: (0.1, 0.95),
        }
    }
}

impl SearchBox {
    /// The box holding only the settings of `p`.
    pub fn singleton(p: &ProtocolParams) -> Self {
        let pt = |x| (x, x);
        Self {
            u: pt(p.intensities.u),
            v: pt(p.intensities.v),
            p_u: pt(p.probabilities.p_u),
            p_v: pt(p.probabilities.p_v),
            qz: pt(p.probabilities.qz_alice),
        }
    }

    fn interval(&self, c: Coord) -> (f64, f64) {
        match c {
            Coord::U => self.u,
            Coord::V => self.v,
            Coord::Pu => self.p_u,
            Coord::Pv => self.p_v,
            Coord::Qz => self.qz,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Coord {
    U,
    V,
    Pu,
    Pv,
    Qz,
}

const COORDS: [Coord; 5] = [Coord::U, Coord::V, Coord::Pu, Coord::Pv, Coord::Qz];

/// Keeps strict inequalities strict.
const MARGIN: f64 = 1e-6;

fn get(p: &ProtocolParams, c: Coord) -> f64 {
    match c {
        Coord::U => p.intensities.u,
        Coord::V => p.intensities.v,
        Coord::Pu => p.probabilities.p_u,
        Coord::Pv => p.probabilities.p_v,
        Coord::Qz => p.probabilities.qz_alice,
    }
}

fn set(p: &mut ProtocolParams, c: Coord, x: f64) {
    let pr = &mut p.probabilities;
    match c {
        Coord::U => p.intensities.u = x,
        Coord::V => p.intensities.v = x,
        Coord::Pu => pr.p_u = x,
        Coord::Pv => pr.p_v = x,
        Coord::Qz => {
            pr.qz_alice = x;
            pr.qz_bob = x;
        }
    }
    pr.p_w = 1.0 - pr.p_u - pr.p_v;
}

/// Range of coordinate `c` that keeps `p` valid with the others fixed.
fn feasible_interval(p: &ProtocolParams, bx: &SearchBox, c: Coord) -> (f64, f64) {
    let (lo, hi) = bx.interval(c);
    let (u, v, w) = (p.intensities.u, p.intensities.v, p.intensities.w);
    let (pu, pv) = (p.probabilities.p_u, p.probabilities.p_v);
    match c {
        Coord::U => (lo.max(v + w + MARGIN), hi),
        Coord::V => (lo.max(w + MARGIN), hi.min(u - w - MARGIN)),
        Coord::Pu => (lo.max(MARGIN), hi.min(1.0 - pv - MARGIN)),
        Coord::Pv => (lo.max(MARGIN), hi.min(1.0 - pu - MARGIN)),
        Coord::Qz => (lo.max(MARGIN), hi.min(1.0 - MARGIN)),
    }
}

fn check_box(bx: &SearchBox, w: f64) -> Result<(), OptimizeError> {
    for c in COORDS {
        let (lo, hi) = bx.interval(c);
        if !(lo.is_finite() && hi.is_finite()) || lo > hi {
            return Err(OptimizeError::InvalidBox(format!("{c:?} interval [{lo}, {hi}]")));
        }
    }
    // every constraint is monotone in each coordinate, so testing the most
    // permissive combination decides emptiness
    let v_lo = bx.v.0.max(w + MARGIN);
    let v_hi = bx.v.1.min(bx.u.1 - w - MARGIN);
    if v_lo > v_hi {
        return Err(OptimizeError::EmptyBox("no decoy intensity fits between vacuum and signal".into()));
    }
    if bx.p_u.0.max(MARGIN) + bx.p_v.0.max(MARGIN) > 1.0 - MARGIN {
        return Err(OptimizeError::EmptyBox("selection probabilities leave nothing for vacuum".into()));
    }
    if bx.qz.0.max(MARGIN) > bx.qz.1.min(1.0 - MARGIN) {
        return Err(OptimizeError::EmptyBox("basis probability outside (0, 1)".into()));
    }
    Ok(())
}

/// Moves `p` into the feasible part of the box, one coordinate at a time.
fn project(p: &mut ProtocolParams, bx: &SearchBox) {
    let w = p.intensities.w;
    let v = p.intensities.v.clamp(bx.v.0.max(w + MARGIN), bx.v.1.min(bx.u.1 - w - MARGIN));
    set(p, Coord::V, v);
    for c in [Coord::U, Coord::Pu, Coord::Pv, Coord::Qz] {
        let (a, b) = match c {
            Coord::Pu => (bx.p_u.0.max(MARGIN), bx.p_u.1.min(1.0 - bx.p_v.0.max(MARGIN) - MARGIN)),
            _ => feasible_interval(p, bx, c),
        };
        let x = get(p, c).clamp(a, b.max(a));
        set(p, c, x);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizeOptions {
    pub objective: Objective,
    pub mode: Mode,
    pub seed: u64,
    /// Random starting points in addition to the configured one.
    pub restarts: usize,
    pub max_passes: usize,
    /// A full pass gaining less than this fraction ends the descent.
    pub rel_tol: f64,
}

impl Default for OptimizeOptions {
    fn default() -> Self {
        Self {
            objective: Objective::V2,
            mode: Mode::Expectation,
            seed: 0,
            restarts: 3,
            max_passes: 50,
            rel_tol: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Optimum {
    pub params: ProtocolParams,
    pub report: KeyReport,
    /// Signed secure length of the chosen variant, bits.
    pub objective_bits: f64,
    pub evaluations: usize,
}

struct Search<'a> {
    bx: &'a SearchBox,
    opts: &'a OptimizeOptions,
    evaluations: usize,
}

impl Search<'_> {
    fn score(&mut self, p: &ProtocolParams) -> f64 {
        self.evaluations += 1;
        let r = evaluate_params(p, self.opts.mode, self.opts.seed);
        match self.opts.objective {
            Objective::V1 => r.secure_length_v1 as f64,
            Objective::V2 => r.secure_length_v2 as f64,
        }
    }

    /// Golden-section maximisation of coordinate `c` over `[a, b]`.
    fn line_search(&mut self, p: &ProtocolParams, c: Coord, a: f64, b: f64) -> (f64, f64) {
        let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
        let tol = 1e-3 * (self.bx.interval(c).1 - self.bx.interval(c).0);
        let mut at = |x: f64| {
            let mut q = p.clone();
            set(&mut q, c, x);
            self.score(&q)
        };
        let (mut a, mut b) = (a, b);
        let mut x1 = b - inv_phi * (b - a);
        let mut x2 = a + inv_phi * (b - a);
        let (mut f1, mut f2) = (at(x1), at(x2));
        while b - a > tol {
            if f1 >= f2 {
                b = x2;
                x2 = x1;
                f2 = f1;
                x1 = b - inv_phi * (b - a);
                f1 = at(x1);
            } else {
                a = x1;
                x1 = x2;
                f1 = f2;
                x2 = a + inv_phi * (b - a);
                f2 = at(x2);
            }
        }
        if f1 >= f2 {
            (x1, f1)
        } else {
            (x2, f2)
        }
    }

    fn descend(&mut self, mut p: ProtocolParams) -> (ProtocolParams, f64) {
        let mut best = self.score(&p);
        for _ in 0..self.opts.max_passes {
            let start = best;
            for c in COORDS {
                let (a, b) = feasible_interval(&p, self.bx, c);
                if b - a <= 0.0 {
                    continue;
                }
                let (x, f) = self.line_search(&p, c, a, b);
                if f > best {
                    set(&mut p, c, x);
                    best = f;
                }
            }
            if best - start <= self.opts.rel_tol * start.abs().max(1.0) {
                break;
            }
        }
        (p, best)
    }
}

/// Coordinate descent with golden-section line searches over `bx`,
/// starting from the configured settings and from `restarts` seeded
/// random points. Deterministic for fixed options.
pub fn optimize_params(params: &ProtocolParams, bx: &SearchBox, opts: &OptimizeOptions) -> Result<Optimum, OptimizeError> {
    check_box(bx, params.intensities.w)?;
    let mut first = params.clone();
    project(&mut first, bx);
    validate(&first)?;

    let mut starts = vec![first];
    for r in 0..opts.restarts {
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed.wrapping_add(r as u64));
        let mut p = params.clone();
        for c in COORDS {
            let (lo, hi) = bx.interval(c);
            set(&mut p, c, if hi > lo { rng.random_range(lo..=hi) } else { lo });
        }
        project(&mut p, bx);
        if validate(&p).is_ok() {
            starts.push(p);
        }
    }

    let mut search = Search {
        bx,
        opts,
        evaluations: 0,
    };
    let mut best: Option<(ProtocolParams, f64)> = None;
    for s in starts {
        let (p, f) = search.descend(s);
        if best.as_ref().is_none_or(|(_, g)| f > *g) {
            best = Some((p, f));
        }
    }
    let (params, objective_bits) = best.expect("at least the configured start");
    validate(&params)?;
    let report = evaluate_params(&params, opts.mode, opts.seed);
    Ok(Optimum {
        params,
        report,
        objective_bits,
        evaluations: search.evaluations,
    })
}
