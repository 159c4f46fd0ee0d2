//! Pulse-sequence execution: exact unitary evolution (a block-decomposed
//! fast path checked against the dense reference path), fixed-step Lindblad
//! master-equation evolution, projective measurement with loss maps, and
//! exact Ramsey fringe scans.
//!
//! The unitary fast path exploits two structural facts: each segment drives
//! at most one species (global beams), so every undriven atom's level is
//! conserved; and data |0> couples to nothing, so driven data atoms split
//! into a frozen-|0> part and a live {|1>, |r>} two-level part. Evolution
//! therefore factorises into blocks of dimension at most 2^(live atoms),
//! each exponentiated exactly.

use alloc::{vec, vec::Vec};
use core::fmt;

use num_complex::Complex64 as C64;
#[allow(unused_imports)]
use num_traits::Float;
use rand_core::RngCore;

use crate::linalg::CMatrix;
use crate::pulse::{PulseError, PulseSegment, PulseSequence, SegmentKind};
use crate::quantum::{
    propagator, unitarity_deviation, LevelSpace, QuantumError, QuantumState, StateRepr,
};
use crate::rand_util::uniform_f64;
use crate::system::{
    AtomSystem, DriveSettings, Role, SystemError, ANCILLA_G, DATA_0, DATA_1, TWO_PI,
};

/// Norm drift allowed across a full unitary sequence.
pub const UNITARY_NORM_TOL: f64 = 1e-9;
/// Trace drift that fails a Lindblad segment outright.
pub const LINDBLAD_TRACE_LIMIT: f64 = 1e-6;
/// Trace drift allowed in a finished Lindblad evolution.
pub const LINDBLAD_TRACE_TOL: f64 = 1e-7;
/// Eigenvalue floor for density matrices produced by the integrator.
pub const LINDBLAD_POSITIVITY_FLOOR: f64 = -1e-7;

/// Errors from evolution and measurement.
#[derive(Debug, Clone, PartialEq)]
pub enum DynamicsError {
    /// Unitary evolution needs a pure input state.
    NotPure,
    /// State dimension does not match the system register.
    SpaceMismatch { expected: usize, got: usize },
    /// Norm left the unit sphere beyond tolerance.
    NormDrift { norm: f64 },
    /// Trace drifted beyond the hard limit; retry with the suggested step.
    TraceDrift { drift: f64, suggested_step: f64 },
    /// Collapse-channel operator shape does not match its slot.
    ChannelShape {
        slot: usize,
        expected: usize,
        got: usize,
    },
    /// Collapse rates must be finite and non-negative.
    BadRate { rate: f64 },
    /// Register slot out of range.
    UnknownSlot { slot: usize },
    /// Fringe scans need at least one phase.
    EmptyPhases,
    /// Fringe scans need a loaded ancilla.
    NoAncilla,
    System(SystemError),
    Quantum(QuantumError),
    Pulse(PulseError),
}

impl fmt::Display for DynamicsError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DynamicsError::NotPure => write!(f, "unitary evolution requires a pure state"),
            DynamicsError::SpaceMismatch { expected, got } => {
                write!(f, "state dimension {got} does not match register dimension {expected}")
            }
            DynamicsError::NormDrift { norm } => {
                write!(f, "state norm drifted to {norm} (tolerance {UNITARY_NORM_TOL})")
            }
            DynamicsError::TraceDrift {
                drift,
                suggested_step,
            } => write!(
                f,
                "density trace drifted by {drift} (> {LINDBLAD_TRACE_LIMIT}); retry with step <= {suggested_step} us"
            ),
            DynamicsError::ChannelShape {
                slot,
                expected,
                got,
            } => write!(
                f,
                "collapse operator for slot {slot} is {got}x{got}, expected {expected}x{expected}"
            ),
            DynamicsError::BadRate { rate } => {
                write!(f, "collapse rate {rate} must be finite and >= 0")
            }
            DynamicsError::UnknownSlot { slot } => write!(f, "register has no slot {slot}"),
            DynamicsError::EmptyPhases => write!(f, "phase grid must be non-empty"),
            DynamicsError::NoAncilla => {
                write!(f, "fringe scan requires a loaded ancilla in the register")
            }
            DynamicsError::System(e) => write!(f, "system error: {e}"),
            DynamicsError::Quantum(e) => write!(f, "state error: {e}"),
            DynamicsError::Pulse(e) => write!(f, "sequence error: {e}"),
        }
    }
}

impl core::error::Error for DynamicsError {}

impl From<SystemError> for DynamicsError {
    fn from(e: SystemError) -> Self {
        DynamicsError::System(e)
    }
}

impl From<QuantumError> for DynamicsError {
    fn from(e: QuantumError) -> Self {
        DynamicsError::Quantum(e)
    }
}

impl From<PulseError> for DynamicsError {
    fn from(e: PulseError) -> Self {
        DynamicsError::Pulse(e)
    }
}

/// Final state of an executed sequence, optional per-segment snapshots,
/// and the total wall-clock duration in us.
#[derive(Debug, Clone)]
pub struct EvolutionResult {
    pub final_state: QuantumState,
    /// One snapshot after each segment when tracing was requested,
    /// otherwise empty.
    pub segment_states: Vec<QuantumState>,
    pub total_duration: f64,
}

/// A site-local collapse operator attached to one register slot, with its
/// rate in 1/us. The Lindblad jump operator is `sqrt(rate) * op` embedded
/// at that slot.
#[derive(Debug, Clone)]
pub struct CollapseChannel {
    pub operator: CMatrix,
    pub rate: f64,
    /// Register slot (index into `system.register()`).
    pub slot: usize,
}

// ---------------------------------------------------------------------------
// unitary fast path
// ---------------------------------------------------------------------------

struct RegisterView {
    dim: usize,
    /// Per slot: (stride, levels, r_level, lower_level, role).
    slots: Vec<(usize, usize, usize, usize, Role)>,
    /// Per loaded pair: (slot_a, slot_b, v_mhz).
    pairs: Vec<(usize, usize, f64)>,
}

impl RegisterView {
    fn new(system: &AtomSystem) -> Self {
        let space = system.space();
        let slots = (0..system.register().len())
            .map(|slot| {
                let role = system.slot_role(slot);
                let params = system.species().params(role);
                let lower = match role {
                    Role::Ancilla => ANCILLA_G,
                    Role::Data => DATA_1,
                };
                (
                    space.stride(slot),
                    space.site_levels(slot),
                    params.rydberg_level_index,
                    lower,
                    role,
                )
            })
            .collect();
        let pairs = system
            .interactions()
            .iter()
            .filter(|e| e.v != 0.0)
            .map(|e| {
                (
                    system.slot_of_site(e.a).expect("loaded"),
                    system.slot_of_site(e.b).expect("loaded"),
                    e.v,
                )
            })
            .collect();
        RegisterView {
            dim: space.dim(),
            slots,
            pairs,
        }
    }

    /// Diagonal energy (MHz) of a basis index: static |r> offsets, the
    /// active drive's -delta on its own species, and pair interactions.
    fn diag_energy(
        &self,
        idx: usize,
        offsets: &[f64],
        driven: Option<(Role, f64)>,
    ) -> f64 {
        let mut e = 0.0;
        for (slot, &(stride, levels, r_level, _, role)) in self.slots.iter().enumerate() {
            if (idx / stride) % levels == r_level {
                e += offsets[slot];
                if let Some((drole, delta)) = driven {
                    if drole == role {
                        e -= delta;
                    }
                }
            }
        }
        for &(sa, sb, v) in &self.pairs {
            let (stra, la, ra, ..) = self.slots[sa];
            let (strb, lb, rb, ..) = self.slots[sb];
            if (idx / stra) % la == ra && (idx / strb) % lb == rb {
                e += v;
            }
        }
        e
    }

    fn in_r(&self, idx: usize, slot: usize) -> bool {
        let (stride, levels, r_level, ..) = self.slots[slot];
        (idx / stride) % levels == r_level
    }
}

fn apply_diagonal(
    view: &RegisterView,
    offsets: &[f64],
    driven: Option<(Role, f64)>,
    t: f64,
    amps: &mut [C64],
) {
    for (idx, a) in amps.iter_mut().enumerate() {
        let e = view.diag_energy(idx, offsets, driven);
        if e != 0.0 {
            *a *= C64::from_polar(1.0, -TWO_PI * e * t);
        }
    }
}

/// In-place instantaneous quarter turn on every loaded atom of `target`:
/// on (lower, r), the 2x2 unitary [[c, -i s e^{i phase}], [-i s e^{-i
/// phase}, c]] with c = s = 1/sqrt(2) — the zero-duration limit of the
/// resonant finite pulse.
fn apply_instant_half_pi(view: &RegisterView, target: Role, phase: f64, amps: &mut [C64]) {
    let c = core::f64::consts::FRAC_1_SQRT_2;
    let e_up = C64::from_polar(c, phase) * C64::new(0.0, -1.0);
    let e_dn = C64::from_polar(c, -phase) * C64::new(0.0, -1.0);
    for (slot, &(stride, levels, r_level, lower, role)) in view.slots.iter().enumerate() {
        if role != target {
            continue;
        }
        let _ = slot;
        for idx in 0..view.dim {
            if (idx / stride) % levels != lower {
                continue;
            }
            let jdx = idx + (r_level - lower) * stride;
            let (al, ar) = (amps[idx], amps[jdx]);
            amps[idx] = al * c + ar * e_up;
            amps[jdx] = al * e_dn + ar * c;
        }
    }
}

fn apply_driven(
    view: &RegisterView,
    target: Role,
    omega: f64,
    delta: f64,
    phase: f64,
    t: f64,
    offsets: &[f64],
    amps: &mut [C64],
) -> Result<(), DynamicsError> {
    let driven_slots: Vec<usize> = view
        .slots
        .iter()
        .enumerate()
        .filter(|(_, s)| s.4 == target)
        .map(|(i, _)| i)
        .collect();
    if driven_slots.is_empty() {
        // drive on an absent species: only static diagonal terms act
        apply_diagonal(view, offsets, None, t, amps);
        return Ok(());
    }
    let driven = Some((target, delta));
    let spectators: Vec<usize> = (0..view.slots.len())
        .filter(|s| !driven_slots.contains(s))
        .collect();
    // data atoms can freeze in |0>; the ancilla has no frozen level
    let frozen_level = match target {
        Role::Data => Some(DATA_0),
        Role::Ancilla => None,
    };
    let half_omega = C64::from_polar(omega / 2.0, phase);

    let n_driven = driven_slots.len();
    let masks: Vec<usize> = match frozen_level {
        Some(_) => (0..(1usize << n_driven)).collect(),
        None => vec![(1usize << n_driven) - 1],
    };

    // enumerate spectator configurations by mixed-radix counting
    let n_spec = spectators.len();
    let mut spec_levels = vec![0usize; n_spec];
    loop {
        let base_spec: usize = spectators
            .iter()
            .zip(&spec_levels)
            .map(|(&s, &l)| l * view.slots[s].0)
            .sum();
        for &mask in &masks {
            let live: Vec<usize> = (0..n_driven)
                .filter(|j| mask & (1 << j) != 0)
                .map(|j| driven_slots[j])
                .collect();
            let mut base = base_spec;
            if let Some(frozen) = frozen_level {
                for (j, &slot) in driven_slots.iter().enumerate() {
                    if mask & (1 << j) == 0 {
                        base += frozen * view.slots[slot].0;
                    }
                }
            }
            let m = live.len();
            let bdim = 1usize << m;
            // index of block vertex b: live atom j at lower (bit 0) or r (bit 1)
            let index_of = |b: usize| -> usize {
                let mut idx = base;
                for (j, &slot) in live.iter().enumerate() {
                    let (stride, _, r_level, lower, _) = view.slots[slot];
                    let level = if b & (1 << j) != 0 { r_level } else { lower };
                    idx += level * stride;
                }
                idx
            };
            if bdim == 1 {
                let idx = index_of(0);
                let e = view.diag_energy(idx, offsets, driven);
                if e != 0.0 {
                    amps[idx] *= C64::from_polar(1.0, -TWO_PI * e * t);
                }
                continue;
            }
            let mut h = CMatrix::zeros(bdim, bdim);
            let mut indices = Vec::with_capacity(bdim);
            for b in 0..bdim {
                let idx = index_of(b);
                indices.push(idx);
                h[(b, b)] = C64::new(view.diag_energy(idx, offsets, driven), 0.0);
                for j in 0..m {
                    if b & (1 << j) == 0 {
                        let b2 = b | (1 << j);
                        // <lower| H |r> = omega/2 e^{i phase}, as in the
                        // dense Hamiltonian assembly
                        h[(b, b2)] += half_omega;
                        h[(b2, b)] += half_omega.conj();
                    }
                }
            }
            let eig = h.eigh().map_err(QuantumError::from)?;
            let gathered: Vec<C64> = indices.iter().map(|&i| amps[i]).collect();
            let evolved = eig.apply_map(|w| C64::from_polar(1.0, -TWO_PI * w * t), &gathered);
            for (b, &i) in indices.iter().enumerate() {
                amps[i] = evolved[b];
            }
        }
        // advance mixed-radix counter
        let mut carry = true;
        for (pos, &slot) in spectators.iter().enumerate() {
            if !carry {
                break;
            }
            spec_levels[pos] += 1;
            if spec_levels[pos] < view.slots[slot].1 {
                carry = false;
            } else {
                spec_levels[pos] = 0;
            }
        }
        if carry {
            break;
        }
    }
    Ok(())
}

fn apply_segment(
    view: &RegisterView,
    seg: &PulseSegment,
    offsets: &[f64],
    amps: &mut [C64],
) -> Result<(), DynamicsError> {
    match seg.kind {
        SegmentKind::Idle => {
            apply_diagonal(view, offsets, None, seg.duration, amps);
            Ok(())
        }
        SegmentKind::Drive if seg.is_instant() => {
            apply_instant_half_pi(view, seg.target, seg.phase, amps);
            Ok(())
        }
        SegmentKind::Drive => apply_driven(
            view,
            seg.target,
            seg.omega,
            seg.delta,
            seg.phase,
            seg.duration,
            offsets,
            amps,
        ),
    }
}

fn check_initial<'a>(
    initial: &'a QuantumState,
    system: &AtomSystem,
) -> Result<&'a [C64], DynamicsError> {
    if initial.space() != system.space() {
        return Err(DynamicsError::SpaceMismatch {
            expected: system.space().dim(),
            got: initial.space().dim(),
        });
    }
    initial.amplitudes().map_err(|_| DynamicsError::NotPure)
}

fn evolve_unitary_inner(
    initial: &QuantumState,
    sequence: &PulseSequence,
    system: &AtomSystem,
    r_offsets_mhz: &[f64],
    trace: bool,
) -> Result<EvolutionResult, DynamicsError> {
    let start = check_initial(initial, system)?;
    if r_offsets_mhz.len() != system.register().len() {
        return Err(DynamicsError::System(SystemError::ShiftLength {
            expected: system.register().len(),
            got: r_offsets_mhz.len(),
        }));
    }
    let view = RegisterView::new(system);
    let mut amps = start.to_vec();
    let mut snapshots = Vec::new();
    for seg in sequence.segments() {
        apply_segment(&view, seg, r_offsets_mhz, &mut amps)?;
        if trace {
            snapshots.push(QuantumState::from_amplitudes_with_tol(
                system.space().clone(),
                amps.clone(),
                UNITARY_NORM_TOL,
            )?);
        }
    }
    let norm: f64 = amps.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    if (norm - 1.0).abs() > UNITARY_NORM_TOL {
        return Err(DynamicsError::NormDrift { norm });
    }
    let final_state =
        QuantumState::from_amplitudes_with_tol(system.space().clone(), amps, UNITARY_NORM_TOL)?;
    Ok(EvolutionResult {
        final_state,
        segment_states: snapshots,
        total_duration: sequence.total_duration(),
    })
}

/// Execute a sequence on a pure state (block fast path; equal to
/// [`evolve_unitary_dense`] within rounding, which tests enforce).
pub fn evolve_unitary(
    initial: &QuantumState,
    sequence: &PulseSequence,
    system: &AtomSystem,
) -> Result<EvolutionResult, DynamicsError> {
    let zeros = vec![0.0; system.register().len()];
    evolve_unitary_inner(initial, sequence, system, &zeros, false)
}

/// As [`evolve_unitary`], recording a snapshot after every segment.
pub fn evolve_unitary_traced(
    initial: &QuantumState,
    sequence: &PulseSequence,
    system: &AtomSystem,
) -> Result<EvolutionResult, DynamicsError> {
    let zeros = vec![0.0; system.register().len()];
    evolve_unitary_inner(initial, sequence, system, &zeros, true)
}

/// As [`evolve_unitary`], with per-slot quasi-static |r> energy offsets in
/// MHz applied through every segment (the shot-noise hook).
pub fn evolve_unitary_shifted(
    initial: &QuantumState,
    sequence: &PulseSequence,
    system: &AtomSystem,
    r_offsets_mhz: &[f64],
) -> Result<EvolutionResult, DynamicsError> {
    evolve_unitary_inner(initial, sequence, system, r_offsets_mhz, false)
}

/// Reference engine: per segment, assemble the full Hamiltonian and apply
/// the eigendecomposition propagator (instantaneous segments apply the
/// embedded local rotation). Slower but structurally independent of the
/// fast path; tests pin the two together.
pub fn evolve_unitary_dense(
    initial: &QuantumState,
    sequence: &PulseSequence,
    system: &AtomSystem,
    r_offsets_mhz: &[f64],
) -> Result<EvolutionResult, DynamicsError> {
    let start = check_initial(initial, system)?;
    let mut amps = start.to_vec();
    let space = system.space();
    for seg in sequence.segments() {
        if seg.is_instant() {
            let c = core::f64::consts::FRAC_1_SQRT_2;
            let local = CMatrix::from_rows(
                2,
                &[
                    C64::new(c, 0.0),
                    C64::from_polar(c, seg.phase) * C64::new(0.0, -1.0),
                    C64::from_polar(c, -seg.phase) * C64::new(0.0, -1.0),
                    C64::new(c, 0.0),
                ],
            );
            for slot in 0..system.register().len() {
                if system.slot_role(slot) != seg.target {
                    continue;
                }
                let params = system.species().params(seg.target);
                let d = space.site_levels(slot);
                let mut op = CMatrix::identity(d);
                let lower = match seg.target {
                    Role::Ancilla => ANCILLA_G,
                    Role::Data => DATA_1,
                };
                let r = params.rydberg_level_index;
                op[(lower, lower)] = local[(0, 0)];
                op[(lower, r)] = local[(0, 1)];
                op[(r, lower)] = local[(1, 0)];
                op[(r, r)] = local[(1, 1)];
                let embedded = crate::quantum::embed_single_site(space, slot, &op)?;
                debug_assert!(unitarity_deviation(&embedded) < 1e-12);
                amps = embedded.mul_vec(&amps).map_err(QuantumError::from)?;
            }
        } else {
            let drive = match seg.kind {
                SegmentKind::Idle => DriveSettings::IDLE,
                SegmentKind::Drive => match seg.target {
                    Role::Ancilla => {
                        DriveSettings::ancilla_only(seg.omega, seg.delta, seg.phase)
                    }
                    Role::Data => DriveSettings::data_only(seg.omega, seg.delta, seg.phase),
                },
            };
            let h = system.build_hamiltonian_shifted(&drive, r_offsets_mhz)?;
            let u = propagator(&h, seg.duration)?;
            amps = u.mul_vec(&amps).map_err(QuantumError::from)?;
        }
    }
    let final_state =
        QuantumState::from_amplitudes_with_tol(space.clone(), amps, UNITARY_NORM_TOL)?;
    Ok(EvolutionResult {
        final_state,
        segment_states: Vec::new(),
        total_duration: sequence.total_duration(),
    })
}

// ---------------------------------------------------------------------------
// Lindblad evolution
// ---------------------------------------------------------------------------

struct LindbladOps {
    h: CMatrix,
    /// (L, L^dagger L) pairs, already embedded and rate-scaled.
    jumps: Vec<(CMatrix, CMatrix)>,
}

fn lindblad_rhs(ops: &LindbladOps, rho: &CMatrix) -> CMatrix {
    // -i [H, rho] + sum_k L rho L^dag - 1/2 {L^dag L, rho}
    let hr = ops.h.mul(rho).expect("shape");
    let rh = rho.mul(&ops.h).expect("shape");
    let mut out = CMatrix::zeros(rho.rows(), rho.cols());
    out.add_scaled(&hr, C64::new(0.0, -1.0)).expect("shape");
    out.add_scaled(&rh, C64::new(0.0, 1.0)).expect("shape");
    for (l, m) in &ops.jumps {
        let lrl = l.mul(rho).expect("shape").mul(&l.adjoint()).expect("shape");
        let mr = m.mul(rho).expect("shape");
        let rm = rho.mul(m).expect("shape");
        out.add_scaled(&lrl, C64::new(1.0, 0.0)).expect("shape");
        out.add_scaled(&mr, C64::new(-0.5, 0.0)).expect("shape");
        out.add_scaled(&rm, C64::new(-0.5, 0.0)).expect("shape");
    }
    out
}

/// Integrate the Lindblad master equation over a sequence with fixed-step
/// RK4 (step <= min(1/(50 f_max), duration/100), f_max in MHz). Channels
/// are site-local collapse operators; trace drift beyond
/// [`LINDBLAD_TRACE_LIMIT`] aborts with a suggested smaller step.
pub fn evolve_lindblad(
    initial: &QuantumState,
    sequence: &PulseSequence,
    system: &AtomSystem,
    channels: &[CollapseChannel],
) -> Result<EvolutionResult, DynamicsError> {
    let space = system.space();
    if initial.space() != space {
        return Err(DynamicsError::SpaceMismatch {
            expected: space.dim(),
            got: initial.space().dim(),
        });
    }
    // embed channels once
    let mut jumps = Vec::with_capacity(channels.len());
    let mut rate_max = 0.0f64;
    for ch in channels {
        if ch.slot >= system.register().len() {
            return Err(DynamicsError::UnknownSlot { slot: ch.slot });
        }
        if !(ch.rate.is_finite() && ch.rate >= 0.0) {
            return Err(DynamicsError::BadRate { rate: ch.rate });
        }
        let d = space.site_levels(ch.slot);
        if ch.operator.rows() != d || ch.operator.cols() != d {
            return Err(DynamicsError::ChannelShape {
                slot: ch.slot,
                expected: d,
                got: ch.operator.rows(),
            });
        }
        if ch.rate == 0.0 {
            continue;
        }
        rate_max = rate_max.max(ch.rate);
        let mut scaled = ch.operator.clone();
        scaled.scale(C64::new(ch.rate.sqrt(), 0.0));
        let l = crate::quantum::embed_single_site(space, ch.slot, &scaled)?;
        let m = l.adjoint().mul(&l).map_err(QuantumError::from)?;
        jumps.push((l, m));
    }

    let zeros = vec![0.0; system.register().len()];
    let mut rho = initial.to_density();
    let max_v = system
        .interactions()
        .iter()
        .map(|e| e.v)
        .fold(0.0f64, f64::max);

    for seg in sequence.segments() {
        if seg.is_instant() {
            // zero-duration: exact local rotation, no dissipation
            let pure_like = apply_instant_density(system, seg, &rho)?;
            rho = pure_like;
            continue;
        }
        if seg.duration == 0.0 {
            continue;
        }
        let drive = match seg.kind {
            SegmentKind::Idle => DriveSettings::IDLE,
            SegmentKind::Drive => match seg.target {
                Role::Ancilla => DriveSettings::ancilla_only(seg.omega, seg.delta, seg.phase),
                Role::Data => DriveSettings::data_only(seg.omega, seg.delta, seg.phase),
            },
        };
        let h = system.build_hamiltonian_shifted(&drive, &zeros)?;
        let ops = LindbladOps {
            h: h.matrix().clone(),
            jumps: jumps.clone(),
        };
        let f_max = match seg.kind {
            SegmentKind::Drive => seg.omega.max(seg.delta.abs()).max(max_v),
            SegmentKind::Idle => max_v,
        }
        // collapse rates are 1/us (not cycles), so they join the step
        // budget divided by 2 pi
        .max(rate_max / TWO_PI);
        // 1/(300 f) ~ 21 mrad of the fastest phase per step: keeps RK4
        // truncation-induced eigenvalue error well inside the positivity
        // floor even across multi-cycle segments, and keeps strong
        // dissipators inside the RK4 stability region
        let step_cap = if f_max > 0.0 {
            (1.0 / (300.0 * f_max)).min(seg.duration / 100.0)
        } else {
            seg.duration / 100.0
        };
        let n_steps = (seg.duration / step_cap).ceil().max(1.0) as usize;
        let h_step = seg.duration / n_steps as f64;
        for _ in 0..n_steps {
            let k1 = lindblad_rhs(&ops, &rho);
            let mut r2 = rho.clone();
            r2.add_scaled(&k1, C64::new(h_step / 2.0, 0.0)).expect("shape");
            let k2 = lindblad_rhs(&ops, &r2);
            let mut r3 = rho.clone();
            r3.add_scaled(&k2, C64::new(h_step / 2.0, 0.0)).expect("shape");
            let k3 = lindblad_rhs(&ops, &r3);
            let mut r4 = rho.clone();
            r4.add_scaled(&k3, C64::new(h_step, 0.0)).expect("shape");
            let k4 = lindblad_rhs(&ops, &r4);
            rho.add_scaled(&k1, C64::new(h_step / 6.0, 0.0)).expect("shape");
            rho.add_scaled(&k2, C64::new(h_step / 3.0, 0.0)).expect("shape");
            rho.add_scaled(&k3, C64::new(h_step / 3.0, 0.0)).expect("shape");
            rho.add_scaled(&k4, C64::new(h_step / 6.0, 0.0)).expect("shape");
        }
        let drift = (rho.trace().re - 1.0).abs();
        if drift > LINDBLAD_TRACE_LIMIT {
            return Err(DynamicsError::TraceDrift {
                drift,
                suggested_step: h_step / 2.0,
            });
        }
    }

    let drift = (rho.trace().re - 1.0).abs();
    if drift > LINDBLAD_TRACE_TOL {
        return Err(DynamicsError::TraceDrift {
            drift,
            suggested_step: 0.0,
        });
    }
    // clean integrator rounding: symmetrise and rescale the <=1e-7 drift
    let adj = rho.adjoint();
    rho.add_scaled(&adj, C64::new(1.0, 0.0)).expect("shape");
    rho.scale(C64::new(0.5, 0.0));
    let tr = rho.trace().re;
    rho.scale(C64::new(1.0 / tr, 0.0));
    let final_state = QuantumState::from_density_with_floor(
        space.clone(),
        rho,
        LINDBLAD_POSITIVITY_FLOOR,
    )?;
    Ok(EvolutionResult {
        final_state,
        segment_states: Vec::new(),
        total_duration: sequence.total_duration(),
    })
}

fn apply_instant_density(
    system: &AtomSystem,
    seg: &PulseSegment,
    rho: &CMatrix,
) -> Result<CMatrix, DynamicsError> {
    let space = system.space();
    let c = core::f64::consts::FRAC_1_SQRT_2;
    let mut out = rho.clone();
    for slot in 0..system.register().len() {
        if system.slot_role(slot) != seg.target {
            continue;
        }
        let params = system.species().params(seg.target);
        let d = space.site_levels(slot);
        let mut op = CMatrix::identity(d);
        let lower = match seg.target {
            Role::Ancilla => ANCILLA_G,
            Role::Data => DATA_1,
        };
        let r = params.rydberg_level_index;
        op[(lower, lower)] = C64::new(c, 0.0);
        op[(lower, r)] = C64::from_polar(c, seg.phase) * C64::new(0.0, -1.0);
        op[(r, lower)] = C64::from_polar(c, -seg.phase) * C64::new(0.0, -1.0);
        op[(r, r)] = C64::new(c, 0.0);
        let u = crate::quantum::embed_single_site(space, slot, &op)?;
        out = u
            .mul(&out)
            .map_err(QuantumError::from)?
            .mul(&u.adjoint())
            .map_err(QuantumError::from)?;
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// measurement
// ---------------------------------------------------------------------------

/// Which classical loss maps apply at detection.
///
/// `RydbergLoss` removes atoms projected into |r> (anti-trapping).
/// `Blast1` removes data atoms projected into |1> and nothing else — an
/// isolated knob for testing the pushout map. Real detection always
/// anti-traps, so experiments with a blast use `Both` (the union).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MeasureScheme {
    RydbergLoss,
    Blast1,
    Both,
}

/// Flat per-sequence background loss probabilities, applied as classical
/// coins after the projective outcome, plus the blast imperfection knob.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossProbabilities {
    pub scattering_ancilla: f64,
    pub scattering_data: f64,
    pub imaging_ancilla: f64,
    pub imaging_data: f64,
    /// Probability that a data atom in |1> survives the blast (0 = the
    /// default perfect remover).
    pub blast_infidelity: f64,
}

impl LossProbabilities {
    pub const NONE: LossProbabilities = LossProbabilities {
        scattering_ancilla: 0.0,
        scattering_data: 0.0,
        imaging_ancilla: 0.0,
        imaging_data: 0.0,
        blast_infidelity: 0.0,
    };
}

/// One detected shot: projected levels, survival after loss maps, and the
/// derived data-atom counts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MeasurementRecord {
    /// Projected level per register slot.
    pub levels: Vec<usize>,
    /// Post-loss survival per register slot.
    pub survivals: Vec<bool>,
    /// Survival of the loaded ancilla (false when none is loaded).
    pub ancilla_survived: bool,
    /// Number of loaded data atoms.
    pub n_loaded: usize,
    /// Loaded data atoms projected into |0>.
    pub n0: usize,
    /// n_loaded - n0 (atoms in |1> or |r> at projection).
    pub n1: usize,
    /// Whether the shot passes the configured postselection.
    pub kept: bool,
}

/// Sample one projective outcome in the site-local level basis and apply
/// the loss maps. Draw order is fixed (projection, then scattering and
/// imaging coins per register slot in order) so records are a pure
/// function of the rng stream.
pub fn measure<R: RngCore + ?Sized>(
    system: &AtomSystem,
    state: &QuantumState,
    scheme: MeasureScheme,
    postselect_data_survival: bool,
    loss: Option<&LossProbabilities>,
    rng: &mut R,
) -> Result<MeasurementRecord, DynamicsError> {
    let space = system.space();
    if state.space() != space {
        return Err(DynamicsError::SpaceMismatch {
            expected: space.dim(),
            got: state.space().dim(),
        });
    }
    let dim = space.dim();
    let u = uniform_f64(rng);
    let mut cum = 0.0;
    let mut outcome = dim - 1;
    for i in 0..dim {
        let p = match state.repr() {
            StateRepr::Pure(a) => a[i].norm_sqr(),
            StateRepr::Density(r) => r[(i, i)].re.max(0.0),
        };
        cum += p;
        if u < cum {
            outcome = i;
            break;
        }
    }
    let levels = space.config_of(outcome);

    let blast = matches!(scheme, MeasureScheme::Blast1 | MeasureScheme::Both);
    let anti_trap = matches!(scheme, MeasureScheme::RydbergLoss | MeasureScheme::Both);
    let loss = loss.copied().unwrap_or(LossProbabilities::NONE);

    let mut survivals = Vec::with_capacity(levels.len());
    let (mut n_loaded, mut n0) = (0usize, 0usize);
    let mut ancilla_survived = false;
    let mut any_data_lost = false;
    for (slot, &level) in levels.iter().enumerate() {
        let role = system.slot_role(slot);
        let params = system.species().params(role);
        let r_level = params.rydberg_level_index;
        let mut lost = false;
        if anti_trap && level == r_level {
            lost = true;
        }
        if blast && role == Role::Data {
            // the coin is drawn for every data slot (level-independent
            // stream layout) and only consulted for |1>
            let u_blast = uniform_f64(rng);
            if level == DATA_1 && u_blast >= loss.blast_infidelity {
                lost = true;
            }
        }
        // background coins (always drawn, in fixed order)
        let (p_scatter, p_image) = match role {
            Role::Ancilla => (loss.scattering_ancilla, loss.imaging_ancilla),
            Role::Data => (loss.scattering_data, loss.imaging_data),
        };
        if uniform_f64(rng) < p_scatter {
            lost = true;
        }
        if uniform_f64(rng) < p_image {
            lost = true;
        }
        let survived = !lost;
        survivals.push(survived);
        match role {
            Role::Ancilla => ancilla_survived = survived,
            Role::Data => {
                n_loaded += 1;
                if level == DATA_0 {
                    n0 += 1;
                }
                if !survived {
                    any_data_lost = true;
                }
            }
        }
    }
    let mut kept = system.ancilla_slot().is_some();
    if postselect_data_survival && any_data_lost {
        kept = false;
    }
    Ok(MeasurementRecord {
        levels,
        survivals,
        ancilla_survived,
        n_loaded,
        n0,
        n1: n_loaded - n0,
        kept,
    })
}

// ---------------------------------------------------------------------------
// exact fringe scans
// ---------------------------------------------------------------------------

/// One fringe sample: a phase and the ancilla |g>-return probability.
/// Monte Carlo points carry (shots, successes); exact points have
/// `shots = 0` and an analytically exact `probability`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FringePoint {
    pub phase: f64,
    pub probability: f64,
    pub shots: u64,
    pub successes: u64,
}

impl FringePoint {
    pub fn exact(phase: f64, probability: f64) -> Self {
        FringePoint {
            phase,
            probability,
            shots: 0,
            successes: 0,
        }
    }

    pub fn counted(phase: f64, successes: u64, shots: u64) -> Self {
        FringePoint {
            phase,
            probability: if shots > 0 {
                successes as f64 / shots as f64
            } else {
                f64::NAN
            },
            shots,
            successes,
        }
    }
}

/// Exact noiseless fringe: evolve the sequence prefix once, then apply the
/// final segment at each requested phase and report the ancilla's marginal
/// |g> population (no postselection).
pub fn ramsey_scan_exact(
    system: &AtomSystem,
    sequence: &PulseSequence,
    phases: &[f64],
) -> Result<Vec<FringePoint>, DynamicsError> {
    ramsey_scan_exact_shifted(system, sequence, phases, None)
}

/// As [`ramsey_scan_exact`], with optional per-slot |r> offsets (MHz).
pub fn ramsey_scan_exact_shifted(
    system: &AtomSystem,
    sequence: &PulseSequence,
    phases: &[f64],
    r_offsets_mhz: Option<&[f64]>,
) -> Result<Vec<FringePoint>, DynamicsError> {
    let initial = QuantumState::pure_basis(system.space().clone(), &system.initial_levels())?;
    ramsey_scan_exact_from(system, sequence, &initial, phases, r_offsets_mhz)
}

/// Evolve the sequence prefix once from `initial`, then apply the final
/// segment once per phase; returns the final pure state at each phase.
pub fn evolve_phase_family(
    system: &AtomSystem,
    sequence: &PulseSequence,
    initial: &QuantumState,
    phases: &[f64],
    r_offsets_mhz: Option<&[f64]>,
) -> Result<Vec<QuantumState>, DynamicsError> {
    if phases.is_empty() {
        return Err(DynamicsError::EmptyPhases);
    }
    let start = check_initial(initial, system)?;
    let zeros = vec![0.0; system.register().len()];
    let offsets = r_offsets_mhz.unwrap_or(&zeros);
    if offsets.len() != system.register().len() {
        return Err(DynamicsError::System(SystemError::ShiftLength {
            expected: system.register().len(),
            got: offsets.len(),
        }));
    }
    let view = RegisterView::new(system);
    let mut amps = start.to_vec();
    let segs = sequence.segments();
    let (prefix, last) = segs.split_at(segs.len() - 1);
    for seg in prefix {
        apply_segment(&view, seg, offsets, &mut amps)?;
    }
    let template = last[0];
    let mut out = Vec::with_capacity(phases.len());
    for &phi in phases {
        let mut final_amps = amps.clone();
        let mut seg = template;
        seg.phase = phi;
        apply_segment(&view, &seg, offsets, &mut final_amps)?;
        out.push(QuantumState::from_amplitudes_with_tol(
            system.space().clone(),
            final_amps,
            UNITARY_NORM_TOL,
        )?);
    }
    Ok(out)
}

/// As [`ramsey_scan_exact`] but from an arbitrary pure initial state.
pub fn ramsey_scan_exact_from(
    system: &AtomSystem,
    sequence: &PulseSequence,
    initial: &QuantumState,
    phases: &[f64],
    r_offsets_mhz: Option<&[f64]>,
) -> Result<Vec<FringePoint>, DynamicsError> {
    let ancilla_slot = system.ancilla_slot().ok_or(DynamicsError::NoAncilla)?;
    let states = evolve_phase_family(system, sequence, initial, phases, r_offsets_mhz)?;
    let out = phases
        .iter()
        .zip(&states)
        .map(|(&phi, state)| {
            let p_g = state
                .population(ancilla_slot, ANCILLA_G)
                .expect("valid slot/level");
            FringePoint::exact(phi, p_g)
        })
        .collect();
    Ok(out)
}

/// Evenly spaced phase grid over [0, 2*pi), the default fringe abscissa.
pub fn phase_grid(points: usize) -> Vec<f64> {
    (0..points)
        .map(|i| TWO_PI * i as f64 / points.max(1) as f64)
        .collect()
}
