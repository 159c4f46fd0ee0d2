//! Noise model: measured coherence figures as model parameters, the
//! per-shot quasi-static draw machinery, and the dephasing-rate
//! calibration that ties Lindblad channels to observed Rabi envelopes.
//!
//! Conventions: T2* enters as a per-shot frozen Gaussian detuning
//! (ensemble dephasing exp(-(t/T2*)^2)); driven-Rabi damping enters either
//! as a calibrated |r>-dephasing Lindblad channel (envelope studies) or,
//! in the Monte Carlo path, as a classical per-gate leakage coin — the two
//! are alternative accountings of the same measured envelope and are never
//! applied together.

use alloc::{vec, vec::Vec};
use core::fmt;

use num_complex::Complex64 as C64;
#[allow(unused_imports)]
use num_traits::Float;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_core::RngCore;

use crate::dynamics::{
    evolve_lindblad, CollapseChannel, DynamicsError, LossProbabilities,
};
use crate::linalg::CMatrix;
use crate::pulse::{PulseSegment, PulseSequence};
use crate::quantum::QuantumState;
use crate::rand_util::{gaussian_f64, uniform_f64};
use crate::system::{AtomSite, AtomSystem, Role, SpeciesTable, ANCILLA_G};

/// Default ancilla-species inhomogeneous dephasing time, us.
pub const DEFAULT_T2_STAR_ANCILLA: f64 = 3.4;
/// Default ancilla driven-Rabi damping time, us.
pub const DEFAULT_RABI_TAU_ANCILLA: f64 = 12.0;
/// Default data driven-Rabi damping time, us.
pub const DEFAULT_RABI_TAU_DATA: f64 = 22.0;
/// Default ancilla per-sequence scattering loss probability.
pub const DEFAULT_SCATTERING_ANCILLA: f64 = 0.025;
/// Default data imaging loss probability.
pub const DEFAULT_IMAGING_DATA: f64 = 0.026;
/// Default ancilla imaging loss probability.
pub const DEFAULT_IMAGING_ANCILLA: f64 = 0.109;
/// Default data 2*pi gate infidelity.
pub const DEFAULT_GATE_INFIDELITY_DATA: f64 = 0.049;
/// Default relative half-width (uniform) of the interaction fluctuation.
pub const DEFAULT_V_FLUCTUATION_FRACTION: f64 = 0.20;
/// Default state-preparation error probability.
pub const DEFAULT_SPAM: f64 = 0.05;
/// Dephasing-rate calibration search interval, 1/us.
pub const RATE_BRACKET_LO: f64 = 1e-3;
pub const RATE_BRACKET_HI: f64 = 1e2;

/// Errors from noise-model validation and calibration.
#[derive(Debug, Clone, PartialEq)]
pub enum NoiseError {
    BadProbability { name: &'static str, value: f64 },
    BadTime { name: &'static str, value: f64 },
    BadParameter { name: &'static str, value: f64 },
    /// The calibration search interval does not bracket the target.
    NonBracketing {
        rate_lo: f64,
        rate_hi: f64,
        tau_lo: f64,
        tau_hi: f64,
    },
    /// Bisection exhausted its iteration budget without meeting the
    /// 1% tolerance.
    NoConvergence { rate: f64, tau: f64, target: f64 },
    Dynamics(DynamicsError),
}

impl fmt::Display for NoiseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NoiseError::BadProbability { name, value } => {
                write!(f, "{name} = {value} is not a probability in [0, 1]")
            }
            NoiseError::BadTime { name, value } => {
                write!(f, "{name} = {value} must be a positive time in us")
            }
            NoiseError::BadParameter { name, value } => {
                write!(f, "{name} = {value} is out of range")
            }
            NoiseError::NonBracketing {
                rate_lo,
                rate_hi,
                tau_lo,
                tau_hi,
            } => write!(
                f,
                "dephasing calibration: rates [{rate_lo}, {rate_hi}] 1/us give envelope times [{tau_hi}, {tau_lo}] us which do not bracket the target"
            ),
            NoiseError::NoConvergence { rate, tau, target } => write!(
                f,
                "dephasing calibration did not converge: best rate {rate} 1/us gives tau {tau} us for target {target} us"
            ),
            NoiseError::Dynamics(e) => write!(f, "evolution failed during calibration: {e}"),
        }
    }
}

impl core::error::Error for NoiseError {}

impl From<DynamicsError> for NoiseError {
    fn from(e: DynamicsError) -> Self {
        NoiseError::Dynamics(e)
    }
}

/// All noise knobs. Times are us (`f64::INFINITY` disables a channel);
/// losses and infidelities are probabilities per sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseModel {
    /// Inhomogeneous ground-Rydberg dephasing time per species; realized
    /// as a per-shot frozen Gaussian detuning of the |r> level.
    pub t2_star_ancilla: f64,
    pub t2_star_data: f64,
    /// Driven-Rabi exponential damping time per species; consumed by the
    /// Lindblad path via [`calibrate_dephasing_rate`], not by Monte Carlo.
    pub rabi_tau_ancilla: f64,
    pub rabi_tau_data: f64,
    /// Per-sequence background loss before imaging.
    pub scattering_loss_ancilla: f64,
    pub scattering_loss_data: f64,
    /// Imaging survival losses.
    pub imaging_loss_ancilla: f64,
    pub imaging_loss_data: f64,
    /// Classical per-2*pi-pulse leakage coin for driven data atoms: the
    /// Monte Carlo accounting of the measured data-gate infidelity.
    pub gate_infidelity_data_2pi: f64,
    /// Relative interaction fluctuation: uniform half-width by default,
    /// Gaussian sigma when `v_fluctuation_gaussian` is set.
    pub v_fluctuation_fraction: f64,
    pub v_fluctuation_gaussian: bool,
    /// Probability that a data atom intended for |1> is pumped to |0>
    /// (for superposition prep: prepared with a flipped relative sign).
    pub spam: f64,
    /// Probability that the blast fails to remove a |1> data atom.
    pub blast_infidelity: f64,
    /// Optional drive-inhomogeneity knob: fractional spread of the data
    /// drive detuning across the array (linear gradient over data slots,
    /// zero-mean); inert at 0 and for resonant (delta = 0) gates.
    pub beam_gradient_fraction: f64,
}

impl Default for NoiseModel {
    fn default() -> Self {
        NoiseModel::realistic()
    }
}

impl NoiseModel {
    /// The measured-figure defaults.
    pub fn realistic() -> Self {
        NoiseModel {
            t2_star_ancilla: DEFAULT_T2_STAR_ANCILLA,
            t2_star_data: f64::INFINITY,
            rabi_tau_ancilla: DEFAULT_RABI_TAU_ANCILLA,
            rabi_tau_data: DEFAULT_RABI_TAU_DATA,
            scattering_loss_ancilla: DEFAULT_SCATTERING_ANCILLA,
            scattering_loss_data: 0.0,
            imaging_loss_ancilla: DEFAULT_IMAGING_ANCILLA,
            imaging_loss_data: DEFAULT_IMAGING_DATA,
            gate_infidelity_data_2pi: DEFAULT_GATE_INFIDELITY_DATA,
            v_fluctuation_fraction: DEFAULT_V_FLUCTUATION_FRACTION,
            v_fluctuation_gaussian: false,
            spam: DEFAULT_SPAM,
            blast_infidelity: 0.0,
            beam_gradient_fraction: 0.0,
        }
    }

    /// Every channel disabled: infinite coherence times, zero losses.
    pub fn noiseless() -> Self {
        NoiseModel {
            t2_star_ancilla: f64::INFINITY,
            t2_star_data: f64::INFINITY,
            rabi_tau_ancilla: f64::INFINITY,
            rabi_tau_data: f64::INFINITY,
            scattering_loss_ancilla: 0.0,
            scattering_loss_data: 0.0,
            imaging_loss_ancilla: 0.0,
            imaging_loss_data: 0.0,
            gate_infidelity_data_2pi: 0.0,
            v_fluctuation_fraction: 0.0,
            v_fluctuation_gaussian: false,
            spam: 0.0,
            blast_infidelity: 0.0,
            beam_gradient_fraction: 0.0,
        }
    }

    pub fn validate(&self) -> Result<(), NoiseError> {
        let times = [
            ("t2_star_ancilla", self.t2_star_ancilla),
            ("t2_star_data", self.t2_star_data),
            ("rabi_tau_ancilla", self.rabi_tau_ancilla),
            ("rabi_tau_data", self.rabi_tau_data),
        ];
        for (name, value) in times {
            if !(value > 0.0) {
                return Err(NoiseError::BadTime { name, value });
            }
        }
        let probs = [
            ("scattering_loss_ancilla", self.scattering_loss_ancilla),
            ("scattering_loss_data", self.scattering_loss_data),
            ("imaging_loss_ancilla", self.imaging_loss_ancilla),
            ("imaging_loss_data", self.imaging_loss_data),
            ("gate_infidelity_data_2pi", self.gate_infidelity_data_2pi),
            ("spam", self.spam),
            ("blast_infidelity", self.blast_infidelity),
        ];
        for (name, value) in probs {
            if !(0.0..=1.0).contains(&value) || !value.is_finite() {
                return Err(NoiseError::BadProbability { name, value });
            }
        }
        for (name, value) in [
            ("v_fluctuation_fraction", self.v_fluctuation_fraction),
            ("beam_gradient_fraction", self.beam_gradient_fraction),
        ] {
            if !value.is_finite() || !(0.0..=1.0).contains(&value) {
                return Err(NoiseError::BadParameter { name, value });
            }
        }
        Ok(())
    }

    /// True when every stochastic channel is disabled, enabling the
    /// evolve-once Monte Carlo fast path.
    pub fn is_noiseless(&self) -> bool {
        self.t2_star_ancilla.is_infinite()
            && self.t2_star_data.is_infinite()
            && self.scattering_loss_ancilla == 0.0
            && self.scattering_loss_data == 0.0
            && self.imaging_loss_ancilla == 0.0
            && self.imaging_loss_data == 0.0
            && self.gate_infidelity_data_2pi == 0.0
            && self.v_fluctuation_fraction == 0.0
            && self.spam == 0.0
            && self.blast_infidelity == 0.0
            && self.beam_gradient_fraction == 0.0
    }

    /// The background-loss coins handed to the measurement map.
    pub fn loss_probabilities(&self) -> LossProbabilities {
        LossProbabilities {
            scattering_ancilla: self.scattering_loss_ancilla,
            scattering_data: self.scattering_loss_data,
            imaging_ancilla: self.imaging_loss_ancilla,
            imaging_data: self.imaging_loss_data,
            blast_infidelity: self.blast_infidelity,
        }
    }

    /// Quasi-static detuning sigma (MHz) for one species.
    pub fn detuning_sigma(&self, role: Role) -> f64 {
        let t2 = match role {
            Role::Ancilla => self.t2_star_ancilla,
            Role::Data => self.t2_star_data,
        };
        if t2.is_infinite() {
            0.0
        } else {
            t2star_to_sigma(t2).unwrap_or(0.0)
        }
    }

    pub fn scattering_loss(&self, role: Role) -> f64 {
        match role {
            Role::Ancilla => self.scattering_loss_ancilla,
            Role::Data => self.scattering_loss_data,
        }
    }

    pub fn imaging_loss(&self, role: Role) -> f64 {
        match role {
            Role::Ancilla => self.imaging_loss_ancilla,
            Role::Data => self.imaging_loss_data,
        }
    }
}

/// Convert an inhomogeneous dephasing time to the sigma (MHz) of a
/// Gaussian ordinary-frequency detuning: the ensemble average of
/// cos(2 pi delta t) over delta ~ N(0, sigma^2) equals exp(-(t/T2*)^2)
/// exactly when sigma = 1/(sqrt(2) pi T2*).
pub fn t2star_to_sigma(t2_star: f64) -> Result<f64, NoiseError> {
    if !(t2_star > 0.0) {
        return Err(NoiseError::BadTime {
            name: "t2_star",
            value: t2_star,
        });
    }
    if t2_star.is_infinite() {
        return Ok(0.0);
    }
    Ok(1.0 / (core::f64::consts::SQRT_2 * core::f64::consts::PI * t2_star))
}

/// One |r>-dephasing collapse channel per loaded slot, with the rate
/// selected by species.
pub fn dephasing_channels(
    system: &AtomSystem,
    rate_ancilla: f64,
    rate_data: f64,
) -> Vec<CollapseChannel> {
    let space = system.space();
    (0..system.register().len())
        .filter_map(|slot| {
            let role = system.slot_role(slot);
            let rate = match role {
                Role::Ancilla => rate_ancilla,
                Role::Data => rate_data,
            };
            if rate == 0.0 {
                return None;
            }
            let d = space.site_levels(slot);
            let r = system.species().params(role).rydberg_level_index;
            let mut op = CMatrix::zeros(d, d);
            op[(r, r)] = C64::new(1.0, 0.0);
            Some(CollapseChannel {
                operator: op,
                rate,
                slot,
            })
        })
        .collect()
}

/// Simulate a resonant Rabi drive on a single two-level atom with an
/// |r>-dephasing channel at `rate`, read the envelope 2 P_g - 1 at the
/// first few full-revolution times m/omega, and fit exp(-t/tau).
fn simulated_envelope_tau(rate: f64, omega: f64) -> Result<f64, NoiseError> {
    let sites = vec![AtomSite::ancilla(0.0, 0.0)];
    let system = AtomSystem::new(sites, SpeciesTable::default_nacs(), false)
        .expect("single-atom system");
    let initial = QuantumState::pure_basis(system.space().clone(), &[ANCILLA_G])
        .expect("ground state");
    let channels = dephasing_channels(&system, rate, 0.0);
    // least squares of ln(envelope) = -t/tau through the origin
    let (mut stt, mut sty) = (0.0, 0.0);
    for m in 1..=3u32 {
        let t = m as f64 / omega;
        let seq = PulseSequence::new(
            vec![PulseSegment::drive(Role::Ancilla, omega, 0.0, 0.0, t)
                .expect("valid drive")],
            "rabi-envelope",
        )
        .expect("non-empty");
        let state = evolve_lindblad(&initial, &seq, &system, &channels)?.final_state;
        let p_g = state.population(0, ANCILLA_G).expect("ancilla level");
        let envelope = 2.0 * p_g - 1.0;
        if envelope <= 0.0 {
            // over-damped beyond the sampled revivals: effectively tau ~ 0
            return Ok(0.0);
        }
        stt += t * t;
        sty += t * envelope.ln();
    }
    let slope = sty / stt;
    if slope >= 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(-1.0 / slope)
}

/// Solve (bisection, 1% tolerance on the recovered time) for the
/// |r>-dephasing rate whose simulated resonant Rabi envelope, fit as
/// exp(-t/tau), returns `target_tau`. Deterministic.
pub fn calibrate_dephasing_rate(target_tau: f64, omega: f64) -> Result<f64, NoiseError> {
    if !(target_tau > 0.0) {
        return Err(NoiseError::BadTime {
            name: "target_tau",
            value: target_tau,
        });
    }
    if !(omega > 0.0) || !omega.is_finite() {
        return Err(NoiseError::BadParameter {
            name: "omega",
            value: omega,
        });
    }
    if target_tau.is_infinite() {
        return Ok(0.0);
    }
    // envelope time is monotone decreasing in the rate; this fixed
    // interval covers envelope times from ~0.04 us to ~4e3 us
    let (mut lo, mut hi) = (RATE_BRACKET_LO, RATE_BRACKET_HI);
    let tau_lo = simulated_envelope_tau(lo, omega)?;
    let tau_hi = simulated_envelope_tau(hi, omega)?;
    if !(tau_lo > target_tau && tau_hi < target_tau) {
        return Err(NoiseError::NonBracketing {
            rate_lo: lo,
            rate_hi: hi,
            tau_lo,
            tau_hi,
        });
    }
    let mut last = (0.5 * (lo + hi), f64::NAN);
    for _ in 0..64 {
        let mid = 0.5 * (lo + hi);
        let tau = simulated_envelope_tau(mid, omega)?;
        last = (mid, tau);
        if (tau - target_tau).abs() <= 0.01 * target_tau {
            return Ok(mid);
        }
        if tau > target_tau {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Err(NoiseError::NoConvergence {
        rate: last.0,
        tau: last.1,
        target: target_tau,
    })
}

/// All quasi-static randomness of one shot, a pure function of
/// (seed, shot index, atom/pair index). Indices follow the register
/// (slots) and the system's interaction list (lexicographic pairs).
#[derive(Debug, Clone, PartialEq)]
pub struct ShotDraw {
    /// Frozen |r>-level detuning offset per slot, MHz.
    pub detuning_offsets: Vec<f64>,
    /// Multiplier on each interaction entry.
    pub v_scales: Vec<f64>,
    /// State-prep error flag per slot (meaningful for data slots).
    pub spam_flip: Vec<bool>,
    /// Raw uniform per slot for the gate-leakage coin; compare against
    /// gate_infidelity x (|1> participation weight) at apply time.
    pub gate_coins: Vec<f64>,
    /// Background scattering loss coin per slot.
    pub scattering_lost: Vec<bool>,
    /// Imaging loss coin per slot.
    pub imaging_lost: Vec<bool>,
}

/// The per-shot random stream: one independent ChaCha12 stream per shot
/// index under a fixed seed.
pub fn shot_rng(seed: u64, shot_index: u64) -> ChaCha12Rng {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    rng.set_stream(shot_index);
    rng
}

/// Draw one shot's quasi-static noise realization. Every field consumes a
/// fixed number of draws regardless of parameter values, so changing one
/// knob never reshuffles the others.
pub fn draw_shot(
    noise: &NoiseModel,
    system: &AtomSystem,
    seed: u64,
    shot_index: u64,
) -> ShotDraw {
    let mut rng = shot_rng(seed, shot_index);
    draw_shot_with(noise, system, &mut rng)
}

pub(crate) fn draw_shot_with<R: RngCore + ?Sized>(
    noise: &NoiseModel,
    system: &AtomSystem,
    rng: &mut R,
) -> ShotDraw {
    let n_slots = system.register().len();
    let mut detuning_offsets = Vec::with_capacity(n_slots);
    for slot in 0..n_slots {
        let sigma = noise.detuning_sigma(system.slot_role(slot));
        let g = gaussian_f64(rng);
        detuning_offsets.push(sigma * g);
    }
    let mut v_scales = Vec::with_capacity(system.interactions().len());
    for _ in system.interactions() {
        let u = uniform_f64(rng);
        let g = gaussian_f64(rng);
        let f = noise.v_fluctuation_fraction;
        let scale = if noise.v_fluctuation_gaussian {
            1.0 + f * g
        } else {
            1.0 + f * (2.0 * u - 1.0)
        };
        v_scales.push(scale);
    }
    let mut spam_flip = Vec::with_capacity(n_slots);
    for slot in 0..n_slots {
        let u = uniform_f64(rng);
        spam_flip.push(system.slot_role(slot) == Role::Data && u < noise.spam);
    }
    let mut gate_coins = Vec::with_capacity(n_slots);
    for _ in 0..n_slots {
        gate_coins.push(uniform_f64(rng));
    }
    let (mut scattering_lost, mut imaging_lost) =
        (Vec::with_capacity(n_slots), Vec::with_capacity(n_slots));
    for slot in 0..n_slots {
        let role = system.slot_role(slot);
        let u_s = uniform_f64(rng);
        let u_i = uniform_f64(rng);
        scattering_lost.push(u_s < noise.scattering_loss(role));
        imaging_lost.push(u_i < noise.imaging_loss(role));
    }
    ShotDraw {
        detuning_offsets,
        v_scales,
        spam_flip,
        gate_coins,
        scattering_lost,
        imaging_lost,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::system::{separation_for_strength, two_atom_sites};

    fn two_atom_system() -> AtomSystem {
        let r = separation_for_strength(65.7, 1.1).unwrap();
        AtomSystem::new(two_atom_sites(r), SpeciesTable::default_nacs(), true).unwrap()
    }

    #[test]
    fn sigma_reference_value() {
        let sigma = t2star_to_sigma(3.4).unwrap();
        assert!((sigma - 0.06619972912919898).abs() < 1e-15);
        assert_eq!(t2star_to_sigma(f64::INFINITY).unwrap(), 0.0);
        // inverse proportionality
        let double = t2star_to_sigma(6.8).unwrap();
        assert!((double - sigma / 2.0).abs() < 1e-15);
        assert!(t2star_to_sigma(0.0).is_err());
        assert!(t2star_to_sigma(-1.0).is_err());
    }

    #[test]
    fn sigma_reproduces_gaussian_ensemble_decay() {
        // Monte Carlo oracle: average cos(2 pi delta t) over 1e5 Gaussian
        // detunings and recover T2* within 2%
        let t2 = 3.4;
        let sigma = t2star_to_sigma(t2).unwrap();
        let mut rng = shot_rng(77, 0);
        let samples: Vec<f64> = (0..100_000).map(|_| sigma * gaussian_f64(&mut rng)).collect();
        for t in [1.0, 2.0, 3.0] {
            let avg: f64 = samples
                .iter()
                .map(|d| (crate::system::TWO_PI * d * t).cos())
                .sum::<f64>()
                / samples.len() as f64;
            let recovered = t / (-avg.ln()).sqrt();
            assert!(
                (recovered - t2).abs() < 0.02 * t2,
                "t = {t}: recovered T2* = {recovered}"
            );
        }
    }

    #[test]
    fn calibration_recovers_target_tau() {
        // the calibration loop is its own oracle: re-simulating at the
        // returned rate lands within 1% of the target
        for (tau, omega) in [(12.0, 1.3), (22.0, 0.918)] {
            let rate = calibrate_dephasing_rate(tau, omega).unwrap();
            let refit = simulated_envelope_tau(rate, omega).unwrap();
            assert!(
                (refit - tau).abs() <= 0.01 * tau,
                "tau {tau}: rate {rate} refits to {refit}"
            );
            // dephasing-damped Rabi decays the envelope at rate/4
            assert!((rate - 4.0 / tau).abs() < 0.05 * (4.0 / tau));
        }
        assert_eq!(calibrate_dephasing_rate(f64::INFINITY, 1.3).unwrap(), 0.0);
        assert!(calibrate_dephasing_rate(0.0, 1.3).is_err());
        assert!(calibrate_dephasing_rate(12.0, 0.0).is_err());
    }

    #[test]
    fn calibration_rejects_non_bracketing_interval() {
        // a target far outside the envelope times the bracket can reach
        // is rejected with the interval diagnostic
        let err = calibrate_dephasing_rate(1e-5, 1.3).unwrap_err();
        assert!(matches!(err, NoiseError::NonBracketing { .. }), "{err}");
        let err = calibrate_dephasing_rate(1e6, 1.3).unwrap_err();
        assert!(matches!(err, NoiseError::NonBracketing { .. }), "{err}");
    }

    #[test]
    fn zero_fraction_scales_are_exactly_one() {
        let sys = two_atom_system();
        let mut noise = NoiseModel::noiseless();
        let draw = draw_shot(&noise, &sys, 5, 9);
        assert!(draw.v_scales.iter().all(|&s| s == 1.0));
        assert!(draw.detuning_offsets.iter().all(|&d| d == 0.0));
        noise.v_fluctuation_gaussian = true;
        let draw2 = draw_shot(&noise, &sys, 5, 9);
        assert!(draw2.v_scales.iter().all(|&s| s == 1.0));
    }

    #[test]
    fn draws_are_pure_functions_of_seed_and_shot() {
        let sys = two_atom_system();
        let noise = NoiseModel::realistic();
        let a = draw_shot(&noise, &sys, 11, 3);
        let b = draw_shot(&noise, &sys, 11, 3);
        assert_eq!(a, b);
        let c = draw_shot(&noise, &sys, 11, 4);
        assert_ne!(a, c);
        let d = draw_shot(&noise, &sys, 12, 3);
        assert_ne!(a, d);
    }

    #[test]
    fn changing_one_knob_leaves_other_draws_fixed() {
        // total draw layout: the v-fluctuation setting must not reshuffle
        // loss coins or detuning offsets
        let sys = two_atom_system();
        let mut noise = NoiseModel::realistic();
        let a = draw_shot(&noise, &sys, 21, 0);
        noise.v_fluctuation_fraction = 0.0;
        let b = draw_shot(&noise, &sys, 21, 0);
        assert_eq!(a.detuning_offsets, b.detuning_offsets);
        assert_eq!(a.spam_flip, b.spam_flip);
        assert_eq!(a.gate_coins, b.gate_coins);
        assert_eq!(a.scattering_lost, b.scattering_lost);
        assert_eq!(a.imaging_lost, b.imaging_lost);
        assert!(b.v_scales.iter().all(|&s| s == 1.0));
    }

    #[test]
    fn uniform_v_scale_statistics() {
        let sys = two_atom_system();
        let mut noise = NoiseModel::noiseless();
        noise.v_fluctuation_fraction = 0.2;
        let mut sum = 0.0;
        let mut count = 0usize;
        for shot in 0..10_000u64 {
            let draw = draw_shot(&noise, &sys, 31, shot);
            for &s in &draw.v_scales {
                assert!((0.8..=1.2).contains(&s), "scale {s} outside band");
                sum += s;
                count += 1;
            }
        }
        let mean = sum / count as f64;
        assert!((mean - 1.0).abs() < 0.005, "mean scale {mean}");
    }

    #[test]
    fn gaussian_v_scale_statistics() {
        let sys = two_atom_system();
        let mut noise = NoiseModel::noiseless();
        noise.v_fluctuation_fraction = 0.2;
        noise.v_fluctuation_gaussian = true;
        let (mut sum, mut sum_sq, mut count) = (0.0, 0.0, 0usize);
        for shot in 0..10_000u64 {
            let draw = draw_shot(&noise, &sys, 31, shot);
            for &s in &draw.v_scales {
                sum += s;
                sum_sq += s * s;
                count += 1;
            }
        }
        let mean = sum / count as f64;
        let var = sum_sq / count as f64 - mean * mean;
        assert!((mean - 1.0).abs() < 0.01, "mean scale {mean}");
        assert!((var.sqrt() - 0.2).abs() < 0.01, "sigma {}", var.sqrt());
    }

    #[test]
    fn spam_flags_only_data_slots() {
        let sys = two_atom_system();
        let mut noise = NoiseModel::noiseless();
        noise.spam = 1.0;
        let draw = draw_shot(&noise, &sys, 2, 0);
        assert!(!draw.spam_flip[0], "ancilla slot must never flip");
        assert!(draw.spam_flip[1], "data slot flips at probability 1");
    }

    #[test]
    fn loss_composition_is_order_free() {
        // scattering p then imaging q survives with (1-p)(1-q); swapping
        // the probabilities gives the same survival statistics
        let sys = two_atom_system();
        let survival = |p: f64, q: f64, seed: u64| {
            let mut noise = NoiseModel::noiseless();
            noise.scattering_loss_data = p;
            noise.imaging_loss_data = q;
            let mut survived = 0u32;
            let shots = 20_000u64;
            for shot in 0..shots {
                let draw = draw_shot(&noise, &sys, seed, shot);
                if !draw.scattering_lost[1] && !draw.imaging_lost[1] {
                    survived += 1;
                }
            }
            survived as f64 / shots as f64
        };
        let expect = (1.0 - 0.1) * (1.0 - 0.2);
        let a = survival(0.1, 0.2, 7);
        let b = survival(0.2, 0.1, 8);
        let sigma = (expect * (1.0 - expect) / 20_000.0).sqrt();
        assert!((a - expect).abs() < 4.0 * sigma, "composition a = {a}");
        assert!((b - expect).abs() < 4.0 * sigma, "composition b = {b}");
    }

    #[test]
    fn validation_rejects_out_of_range() {
        let mut noise = NoiseModel::realistic();
        assert!(noise.validate().is_ok());
        noise.spam = 1.5;
        assert!(matches!(
            noise.validate(),
            Err(NoiseError::BadProbability { name: "spam", .. })
        ));
        let mut noise = NoiseModel::realistic();
        noise.t2_star_ancilla = 0.0;
        assert!(matches!(noise.validate(), Err(NoiseError::BadTime { .. })));
        let mut noise = NoiseModel::realistic();
        noise.v_fluctuation_fraction = -0.1;
        assert!(matches!(
            noise.validate(),
            Err(NoiseError::BadParameter { .. })
        ));
    }

    #[test]
    fn dephasing_channels_target_rydberg_levels() {
        let sys = two_atom_system();
        let channels = dephasing_channels(&sys, 0.5, 0.25);
        assert_eq!(channels.len(), 2);
        assert_eq!(channels[0].slot, 0);
        assert_eq!(channels[0].rate, 0.5);
        assert_eq!(channels[0].operator.rows(), 2);
        assert_eq!(channels[1].slot, 1);
        assert_eq!(channels[1].rate, 0.25);
        assert_eq!(channels[1].operator.rows(), 3);
        // data channel projects onto level 2
        assert_eq!(channels[1].operator[(2, 2)], C64::new(1.0, 0.0));
        assert_eq!(channels[1].operator[(1, 1)], C64::new(0.0, 0.0));
        // zero rates drop out
        assert_eq!(dephasing_channels(&sys, 0.0, 0.0).len(), 0);
    }
}
