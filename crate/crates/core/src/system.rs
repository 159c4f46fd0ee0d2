//! Physical model of the dual-species array: species constants, geometry,
//! pairwise van der Waals interactions, and rotating-frame Hamiltonians.
//!
//! Frequencies are ordinary frequencies in MHz at this interface; the 2*pi
//! conversion to angular units (rad/us) happens exactly once, inside
//! [`AtomSystem::build_hamiltonian`]. The detuning enters as `-delta |r><r|`
//! on each driven atom, so an atom next to a Rydberg-excited neighbour at
//! interaction strength V sees an effective detuning `delta - V`.

use alloc::string::String;
use alloc::{vec, vec::Vec};
use core::fmt;

use num_complex::Complex64 as C64;
#[allow(unused_imports)]
use num_traits::Float;

use crate::linalg::CMatrix;
use crate::quantum::{HermitianOperator, LevelSpace, QuantumError};

pub const TWO_PI: f64 = 2.0 * core::f64::consts::PI;

/// Ancilla level indices: |g> = 0, |r> = 1.
pub const ANCILLA_G: usize = 0;
pub const ANCILLA_R: usize = 1;
/// Data level indices: |0> = 0, |1> = 1, |r> = 2.
pub const DATA_0: usize = 0;
pub const DATA_1: usize = 1;
pub const DATA_R: usize = 2;

/// Errors from system construction and Hamiltonian assembly.
#[derive(Debug, Clone, PartialEq)]
pub enum SystemError {
    /// A system must contain exactly one ancilla site.
    AncillaCount { got: usize },
    /// Two sites share a position.
    CoincidentSites { a: usize, b: usize },
    /// Pair separation must be positive.
    BadSeparation { r: f64 },
    /// Van der Waals coefficient must be positive.
    BadC6 { value: f64 },
    /// No intra-species coefficient configured for ancilla pairs.
    MissingAncillaC6,
    /// Interaction strength must be finite and non-negative.
    BadInteraction { value: f64 },
    /// Requested pair is not in the interaction table (not both loaded).
    NoSuchPair { a: usize, b: usize },
    /// Site index outside the layout.
    UnknownSite { site: usize },
    /// Initial level outside the site's level space.
    BadInitialLevel { site: usize, level: usize },
    /// Neighbour counts outside the plaquette geometry.
    BadNeighbourCount { nearest: usize, next_nearest: usize },
    /// Shift vector length does not match the register.
    ShiftLength { expected: usize, got: usize },
    /// Underlying state-space failure.
    Quantum(QuantumError),
}

impl fmt::Display for SystemError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SystemError::AncillaCount { got } => {
                write!(f, "need exactly one ancilla site, got {got}")
            }
            SystemError::CoincidentSites { a, b } => {
                write!(f, "sites {a} and {b} share a position")
            }
            SystemError::BadSeparation { r } => write!(f, "separation {r} um must be > 0"),
            SystemError::BadC6 { value } => write!(f, "C6 coefficient {value} must be > 0"),
            SystemError::MissingAncillaC6 => {
                write!(f, "no intra-species C6 configured for ancilla-ancilla pairs")
            }
            SystemError::BadInteraction { value } => {
                write!(f, "interaction {value} MHz must be finite and >= 0")
            }
            SystemError::NoSuchPair { a, b } => {
                write!(f, "sites ({a}, {b}) are not a loaded interacting pair")
            }
            SystemError::UnknownSite { site } => write!(f, "no site with index {site}"),
            SystemError::BadInitialLevel { site, level } => {
                write!(f, "initial level {level} invalid for site {site}")
            }
            SystemError::BadNeighbourCount {
                nearest,
                next_nearest,
            } => write!(
                f,
                "neighbour counts ({nearest} nearest, {next_nearest} next-nearest) outside 0-2/0-1"
            ),
            SystemError::ShiftLength { expected, got } => {
                write!(f, "expected {expected} per-atom shifts, got {got}")
            }
            SystemError::Quantum(e) => write!(f, "state-space error: {e}"),
        }
    }
}

impl core::error::Error for SystemError {}

impl From<QuantumError> for SystemError {
    fn from(e: QuantumError) -> Self {
        SystemError::Quantum(e)
    }
}

/// Which species an atom belongs to (ancilla = two-level, data = three-level).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Role {
    Ancilla,
    Data,
}

impl Role {
    pub fn label(self) -> &'static str {
        match self {
            Role::Ancilla => "ancilla",
            Role::Data => "data",
        }
    }
}

/// Per-species constants.
#[derive(Debug, Clone, PartialEq)]
pub struct SpeciesParams {
    /// Human-readable label (e.g. "Cs data").
    pub name: String,
    /// Number of modelled levels (2 for ancilla, 3 for data).
    pub levels: usize,
    /// Index of |r> in this species' level space.
    pub rydberg_level_index: usize,
    /// Intra-species van der Waals coefficient in GHz*um^6, when known.
    pub c6_intra: Option<f64>,
}

/// Inter-species constants.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InterSpeciesParams {
    /// Inter-species van der Waals coefficient in GHz*um^6.
    pub c6_inter: f64,
}

/// Species constants for both array species plus the cross coupling.
#[derive(Debug, Clone, PartialEq)]
pub struct SpeciesTable {
    pub data: SpeciesParams,
    pub ancilla: SpeciesParams,
    pub inter: InterSpeciesParams,
}

impl SpeciesTable {
    /// The Na-ancilla / Cs-data working point: Cs-Cs C6 = 27.96 GHz*um^6,
    /// Na-Cs C6 = 65.7 GHz*um^6. No Na-Na coefficient is configured (a
    /// system holds a single ancilla, so none is ever needed).
    pub fn default_nacs() -> Self {
        SpeciesTable {
            data: SpeciesParams {
                name: String::from("Cs data"),
                levels: 3,
                rydberg_level_index: DATA_R,
                c6_intra: Some(27.96),
            },
            ancilla: SpeciesParams {
                name: String::from("Na ancilla"),
                levels: 2,
                rydberg_level_index: ANCILLA_R,
                c6_intra: None,
            },
            inter: InterSpeciesParams { c6_inter: 65.7 },
        }
    }

    pub fn params(&self, role: Role) -> &SpeciesParams {
        match role {
            Role::Ancilla => &self.ancilla,
            Role::Data => &self.data,
        }
    }

    /// C6 coefficient (GHz*um^6) for a pair of roles.
    pub fn c6_for_pair(&self, a: Role, b: Role) -> Result<f64, SystemError> {
        let c6 = match (a, b) {
            (Role::Data, Role::Data) => self.data.c6_intra,
            (Role::Ancilla, Role::Ancilla) => self.ancilla.c6_intra,
            _ => Some(self.inter.c6_inter),
        };
        match c6 {
            Some(v) if v > 0.0 => Ok(v),
            Some(v) => Err(SystemError::BadC6 { value: v }),
            None => Err(SystemError::MissingAncillaC6),
        }
    }
}

/// One optical-tweezer site.
#[derive(Debug, Clone, PartialEq)]
pub struct AtomSite {
    pub role: Role,
    /// Position (x, y) in um.
    pub position: (f64, f64),
    /// Whether an atom was loaded into this site.
    pub loaded: bool,
    /// Initial basis level for state preparation.
    pub initial_level: usize,
}

impl AtomSite {
    pub fn ancilla(x: f64, y: f64) -> Self {
        AtomSite {
            role: Role::Ancilla,
            position: (x, y),
            loaded: true,
            initial_level: ANCILLA_G,
        }
    }

    pub fn data(x: f64, y: f64) -> Self {
        AtomSite {
            role: Role::Data,
            position: (x, y),
            loaded: true,
            initial_level: DATA_1,
        }
    }

    pub fn with_loaded(mut self, loaded: bool) -> Self {
        self.loaded = loaded;
        self
    }

    pub fn with_initial_level(mut self, level: usize) -> Self {
        self.initial_level = level;
        self
    }
}

/// Drive parameters for one species' global beam.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DriveTerm {
    /// Rabi frequency in MHz (>= 0).
    pub omega: f64,
    /// Detuning in MHz; enters as `-delta |r><r|`.
    pub delta: f64,
    /// Drive phase in radians.
    pub phase: f64,
    pub active: bool,
}

impl DriveTerm {
    pub const OFF: DriveTerm = DriveTerm {
        omega: 0.0,
        delta: 0.0,
        phase: 0.0,
        active: false,
    };

    pub fn on(omega: f64, delta: f64, phase: f64) -> Self {
        DriveTerm {
            omega,
            delta,
            phase,
            active: true,
        }
    }
}

/// Global-beam settings for both species.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DriveSettings {
    pub ancilla: DriveTerm,
    pub data: DriveTerm,
}

impl DriveSettings {
    pub const IDLE: DriveSettings = DriveSettings {
        ancilla: DriveTerm::OFF,
        data: DriveTerm::OFF,
    };

    pub fn ancilla_only(omega: f64, delta: f64, phase: f64) -> Self {
        DriveSettings {
            ancilla: DriveTerm::on(omega, delta, phase),
            data: DriveTerm::OFF,
        }
    }

    pub fn data_only(omega: f64, delta: f64, phase: f64) -> Self {
        DriveSettings {
            ancilla: DriveTerm::OFF,
            data: DriveTerm::on(omega, delta, phase),
        }
    }

    pub fn term(&self, role: Role) -> &DriveTerm {
        match role {
            Role::Ancilla => &self.ancilla,
            Role::Data => &self.data,
        }
    }
}

/// Van der Waals interaction strength in MHz for a C6 in GHz*um^6 at
/// separation r in um: `1000 * c6 / r^6`.
pub fn vdw_strength(c6: f64, r: f64) -> Result<f64, SystemError> {
    if !(c6 > 0.0) {
        return Err(SystemError::BadC6 { value: c6 });
    }
    if !(r > 0.0) {
        return Err(SystemError::BadSeparation { r });
    }
    Ok(1000.0 * c6 / r.powi(6))
}

/// Separation (um) at which a pair with coefficient `c6` interacts at `v` MHz.
pub fn separation_for_strength(c6: f64, v: f64) -> Result<f64, SystemError> {
    if !(c6 > 0.0) {
        return Err(SystemError::BadC6 { value: c6 });
    }
    if !(v > 0.0) {
        return Err(SystemError::BadInteraction { value: v });
    }
    Ok((1000.0 * c6 / v).powf(1.0 / 6.0))
}

/// Resonance shift (MHz) of one data atom from its excited data neighbours
/// on a square plaquette of side `side` um: `n_nearest` at distance `side`,
/// `n_next_nearest` across the diagonal at `sqrt(2)*side`.
pub fn data_shift(
    n_nearest: usize,
    n_next_nearest: usize,
    c6: f64,
    side: f64,
) -> Result<f64, SystemError> {
    if n_nearest > 2 || n_next_nearest > 1 {
        return Err(SystemError::BadNeighbourCount {
            nearest: n_nearest,
            next_nearest: n_next_nearest,
        });
    }
    let v_near = vdw_strength(c6, side)?;
    let v_diag = vdw_strength(c6, core::f64::consts::SQRT_2 * side)?;
    Ok(n_nearest as f64 * v_near + n_next_nearest as f64 * v_diag)
}

/// One entry of the pairwise interaction table (site indices, a < b).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InteractionEntry {
    pub a: usize,
    pub b: usize,
    /// Interaction strength in MHz (>= 0).
    pub v: f64,
}

/// The atom register: canonical-ordered sites, loaded-pair interactions,
/// and the Hilbert space over loaded atoms only.
///
/// Canonical order: the ancilla site first, then data sites sorted by
/// (y, x) ascending. Unloaded sites stay in the layout (for bookkeeping)
/// but contribute no Hilbert-space factor.
#[derive(Debug, Clone, PartialEq)]
pub struct AtomSystem {
    sites: Vec<AtomSite>,
    species: SpeciesTable,
    /// Loaded pairs in lexicographic (a, b) order, a < b.
    interactions: Vec<InteractionEntry>,
    /// Site indices of loaded atoms, in register-slot order.
    register: Vec<usize>,
    /// Register slot of each site (usize::MAX when unloaded).
    slots: Vec<usize>,
    space: LevelSpace,
    include_data_data: bool,
}

impl AtomSystem {
    /// Build a system from sites. Sites are re-sorted into canonical order;
    /// interactions are computed from geometry for every loaded pair.
    /// `include_data_data = false` zeroes data-data entries (the table still
    /// lists them, at 0 MHz).
    pub fn new(
        sites: Vec<AtomSite>,
        species: SpeciesTable,
        include_data_data: bool,
    ) -> Result<Self, SystemError> {
        let n_ancilla = sites.iter().filter(|s| s.role == Role::Ancilla).count();
        if n_ancilla != 1 {
            return Err(SystemError::AncillaCount { got: n_ancilla });
        }
        let mut sites = sites;
        sites.sort_by(|a, b| {
            let ra = (a.role != Role::Ancilla) as u8;
            let rb = (b.role != Role::Ancilla) as u8;
            ra.cmp(&rb)
                .then(a.position.1.total_cmp(&b.position.1))
                .then(a.position.0.total_cmp(&b.position.0))
        });
        for i in 0..sites.len() {
            for j in (i + 1)..sites.len() {
                if sites[i].position == sites[j].position {
                    return Err(SystemError::CoincidentSites { a: i, b: j });
                }
            }
        }
        for (i, s) in sites.iter().enumerate() {
            let p = species.params(s.role);
            if s.initial_level >= p.levels {
                return Err(SystemError::BadInitialLevel {
                    site: i,
                    level: s.initial_level,
                });
            }
        }
        let register: Vec<usize> = sites
            .iter()
            .enumerate()
            .filter(|(_, s)| s.loaded)
            .map(|(i, _)| i)
            .collect();
        let mut slots = vec![usize::MAX; sites.len()];
        for (slot, &site) in register.iter().enumerate() {
            slots[site] = slot;
        }
        let dims: Vec<usize> = register
            .iter()
            .map(|&i| species.params(sites[i].role).levels)
            .collect();
        let space = LevelSpace::new(&dims)?;
        let mut interactions = Vec::new();
        for (ka, &a) in register.iter().enumerate() {
            for &b in &register[ka + 1..] {
                let (sa, sb) = (&sites[a], &sites[b]);
                let zero_pair =
                    !include_data_data && sa.role == Role::Data && sb.role == Role::Data;
                let v = if zero_pair {
                    0.0
                } else {
                    let c6 = species.c6_for_pair(sa.role, sb.role)?;
                    let dx = sa.position.0 - sb.position.0;
                    let dy = sa.position.1 - sb.position.1;
                    let r = (dx * dx + dy * dy).sqrt();
                    vdw_strength(c6, r)?
                };
                interactions.push(InteractionEntry { a, b, v });
            }
        }
        Ok(AtomSystem {
            sites,
            species,
            interactions,
            register,
            slots,
            space,
            include_data_data,
        })
    }

    pub fn sites(&self) -> &[AtomSite] {
        &self.sites
    }

    pub fn species(&self) -> &SpeciesTable {
        &self.species
    }

    pub fn space(&self) -> &LevelSpace {
        &self.space
    }

    pub fn include_data_data(&self) -> bool {
        self.include_data_data
    }

    /// Site indices of loaded atoms in register order.
    pub fn register(&self) -> &[usize] {
        &self.register
    }

    /// Register slot of a site, if loaded.
    pub fn slot_of_site(&self, site: usize) -> Option<usize> {
        self.slots
            .get(site)
            .copied()
            .filter(|&s| s != usize::MAX)
    }

    /// Role of a register slot.
    pub fn slot_role(&self, slot: usize) -> Role {
        self.sites[self.register[slot]].role
    }

    /// Register slot of the loaded ancilla, if present.
    pub fn ancilla_slot(&self) -> Option<usize> {
        self.register
            .iter()
            .position(|&i| self.sites[i].role == Role::Ancilla)
    }

    /// Register slots of loaded data atoms.
    pub fn data_slots(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.register.len()).filter(move |&s| self.slot_role(s) == Role::Data)
    }

    pub fn n_loaded_data(&self) -> usize {
        self.data_slots().count()
    }

    /// Loaded-pair interactions in lexicographic site order.
    pub fn interactions(&self) -> &[InteractionEntry] {
        &self.interactions
    }

    /// Interaction strength between two loaded sites, if tabulated.
    pub fn interaction(&self, a: usize, b: usize) -> Option<f64> {
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        self.interactions
            .iter()
            .find(|e| e.a == lo && e.b == hi)
            .map(|e| e.v)
    }

    /// Override one tabulated interaction with a measured value (MHz).
    pub fn set_interaction(&mut self, a: usize, b: usize, v: f64) -> Result<(), SystemError> {
        if !(v.is_finite() && v >= 0.0) {
            return Err(SystemError::BadInteraction { value: v });
        }
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        match self
            .interactions
            .iter_mut()
            .find(|e| e.a == lo && e.b == hi)
        {
            Some(e) => {
                e.v = v;
                Ok(())
            }
            None => Err(SystemError::NoSuchPair { a: lo, b: hi }),
        }
    }

    /// Rescale every tabulated interaction through `f(a, b, v)` (used for
    /// shot-to-shot interaction fluctuations).
    pub fn map_interactions(&mut self, mut f: impl FnMut(usize, usize, f64) -> f64) {
        for e in self.interactions.iter_mut() {
            e.v = f(e.a, e.b, e.v);
        }
    }

    /// Initial product state from each loaded site's `initial_level`.
    pub fn initial_levels(&self) -> Vec<usize> {
        self.register
            .iter()
            .map(|&i| self.sites[i].initial_level)
            .collect()
    }

    /// Rotating-frame Hamiltonian for the given drives, in rad/us.
    ///
    /// In MHz before the single 2*pi scaling:
    /// each active species contributes `(omega/2)(e^{i phase}|lower><r| + h.c.)
    /// - delta |r><r|` on each of its loaded atoms (data `lower` = |1>,
    /// ancilla `lower` = |g>; data |0> is never coupled), plus
    /// `+ v_ab |r_a r_b><r_a r_b|` for every loaded pair.
    pub fn build_hamiltonian(&self, drive: &DriveSettings) -> Result<HermitianOperator, SystemError> {
        self.build_hamiltonian_shifted(drive, &vec![0.0; self.register.len()])
    }

    /// As [`build_hamiltonian`], with a per-register-slot energy offset
    /// (MHz) added on each atom's |r> level in every segment — the hook for
    /// quasi-static detuning noise.
    ///
    /// [`build_hamiltonian`]: AtomSystem::build_hamiltonian
    pub fn build_hamiltonian_shifted(
        &self,
        drive: &DriveSettings,
        r_offsets_mhz: &[f64],
    ) -> Result<HermitianOperator, SystemError> {
        if r_offsets_mhz.len() != self.register.len() {
            return Err(SystemError::ShiftLength {
                expected: self.register.len(),
                got: r_offsets_mhz.len(),
            });
        }
        let dim = self.space.dim();
        let mut h = CMatrix::zeros(dim, dim);

        for (slot, &site) in self.register.iter().enumerate() {
            let role = self.sites[site].role;
            let params = self.species.params(role);
            let term = drive.term(role);
            let r_level = params.rydberg_level_index;
            let stride = self.space.stride(slot);
            let levels = self.space.site_levels(slot);

            // diagonal: -delta while driven, plus the static offset
            let mut diag = r_offsets_mhz[slot];
            if term.active {
                diag -= term.delta;
            }
            if diag != 0.0 {
                for idx in 0..dim {
                    if self.space.level_of(idx, slot, stride) == r_level {
                        h[(idx, idx)] += C64::new(diag, 0.0);
                    }
                }
            }

            // off-diagonal drive |lower><r| e^{i phase} * omega/2 + h.c.
            if term.active && term.omega > 0.0 {
                let lower = match role {
                    Role::Ancilla => ANCILLA_G,
                    Role::Data => DATA_1,
                };
                let amp = C64::from_polar(term.omega / 2.0, term.phase);
                for idx in 0..dim {
                    // enumerate states with this atom in `lower`
                    if self.space.level_of(idx, slot, stride) != lower {
                        continue;
                    }
                    let jdx = idx + (r_level - lower) * stride;
                    h[(idx, jdx)] += amp;
                    h[(jdx, idx)] += amp.conj();
                }
                let _ = levels;
            }
        }

        // pairwise |r r> diagonal shifts
        for e in &self.interactions {
            if e.v == 0.0 {
                continue;
            }
            let sa = self.slots[e.a];
            let sb = self.slots[e.b];
            let ra = self
                .species
                .params(self.sites[e.a].role)
                .rydberg_level_index;
            let rb = self
                .species
                .params(self.sites[e.b].role)
                .rydberg_level_index;
            let (stra, strb) = (self.space.stride(sa), self.space.stride(sb));
            for idx in 0..dim {
                if self.space.level_of(idx, sa, stra) == ra
                    && self.space.level_of(idx, sb, strb) == rb
                {
                    h[(idx, idx)] += C64::new(e.v, 0.0);
                }
            }
        }

        h.scale(C64::new(TWO_PI, 0.0));
        Ok(HermitianOperator::new(self.space.clone(), h)?)
    }
}

/// A two-site system: ancilla at the origin, one data atom at distance
/// `r` um along x. The workhorse geometry for pair experiments.
pub fn two_atom_sites(r: f64) -> Vec<AtomSite> {
    vec![AtomSite::ancilla(0.0, 0.0), AtomSite::data(r, 0.0)]
}

/// Square-plaquette layout: ancilla at the centre, four data atoms on the
/// corners of a square of side `side` um. Data-ancilla distance is
/// `side/sqrt(2)`; nearest data-data distance is `side`.
pub fn square_plaquette_sites(side: f64) -> Vec<AtomSite> {
    let h = side / 2.0;
    vec![
        AtomSite::ancilla(0.0, 0.0),
        AtomSite::data(-h, -h),
        AtomSite::data(h, -h),
        AtomSite::data(-h, h),
        AtomSite::data(h, h),
    ]
}

/// Plaquette side length (um) that realises a target data-ancilla
/// interaction `v_da` MHz with the given inter-species C6.
pub fn plaquette_side_for_vda(c6_inter: f64, v_da: f64) -> Result<f64, SystemError> {
    let r_da = separation_for_strength(c6_inter, v_da)?;
    Ok(r_da * core::f64::consts::SQRT_2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quantum::{propagator, QuantumState};
    use proptest::prelude::*;

    const C6_DATA: f64 = 27.96;
    const C6_INTER: f64 = 65.7;

    #[test]
    fn vdw_strength_values() {
        // unit conversion: GHz um^6 at 1 um -> MHz
        assert_eq!(vdw_strength(C6_DATA, 1.0).unwrap(), 27960.0);
        // sixth-power law
        let v1 = vdw_strength(C6_INTER, 3.7).unwrap();
        let v2 = vdw_strength(C6_INTER, 7.4).unwrap();
        assert!((v1 / v2 - 64.0).abs() < 1e-9);
        // rejects bad inputs
        assert!(vdw_strength(C6_INTER, 0.0).is_err());
        assert!(vdw_strength(-1.0, 1.0).is_err());
    }

    #[test]
    fn separation_inverts_strength() {
        let r = separation_for_strength(C6_INTER, 1.1).unwrap();
        assert!((r - 6.25).abs() < 0.01);
        let v_back = vdw_strength(C6_INTER, r).unwrap();
        assert!((v_back - 1.1).abs() < 1e-9);
    }

    #[test]
    fn plaquette_geometry_ratios() {
        let side = 8.0;
        let sys = AtomSystem::new(
            square_plaquette_sites(side),
            SpeciesTable::default_nacs(),
            true,
        )
        .unwrap();
        // 1 ancilla + 4 data = 10 pairs
        assert_eq!(sys.interactions().len(), 10);
        let v_da = sys.interaction(0, 1).unwrap();
        let v_dd_near = sys.interaction(1, 2).unwrap();
        let v_dd_diag = sys.interaction(1, 4).unwrap();
        // r_da = side/sqrt(2); with equal C6 the geometric factor would be 8
        let expect_da = vdw_strength(C6_INTER, side / core::f64::consts::SQRT_2).unwrap();
        assert!((v_da - expect_da).abs() < 1e-12);
        let expect_near = vdw_strength(C6_DATA, side).unwrap();
        assert!((v_dd_near - expect_near).abs() < 1e-12);
        // diagonal pair separated by sqrt(2)*side -> 8x weaker than nearest
        assert!((v_dd_near / v_dd_diag - 8.0).abs() < 1e-9);
        // combined C6 + geometry enhancement of data-ancilla over data-data
        let ratio = v_da / v_dd_near;
        assert!((ratio - 8.0 * C6_INTER / C6_DATA).abs() < 1e-9);
        assert!((ratio - 18.8).abs() < 0.05);
    }

    #[test]
    fn data_data_switch_zeroes_pairs() {
        let sys = AtomSystem::new(
            square_plaquette_sites(8.0),
            SpeciesTable::default_nacs(),
            false,
        )
        .unwrap();
        assert_eq!(sys.interactions().len(), 10);
        for e in sys.interactions() {
            let roles = (sys.sites()[e.a].role, sys.sites()[e.b].role);
            if roles == (Role::Data, Role::Data) {
                assert_eq!(e.v, 0.0);
            } else {
                assert!(e.v > 0.0);
            }
        }
    }

    #[test]
    fn data_shift_examples() {
        assert_eq!(data_shift(0, 0, C6_DATA, 8.84).unwrap(), 0.0);
        let v_near = vdw_strength(C6_DATA, 8.84).unwrap();
        // one nearest neighbour: exactly the pair strength, ~0.0585 MHz
        let one = data_shift(1, 0, C6_DATA, 8.84).unwrap();
        assert_eq!(one, v_near);
        assert!((one - 0.0585).abs() < 5e-4);
        // (2,1): two nearest plus one diagonal at (sqrt2)^6 = 8x weaker
        let full = data_shift(2, 1, C6_DATA, 8.84).unwrap();
        assert!((full - (2.0 * v_near + v_near / 8.0)).abs() < 1e-12);
        assert!(data_shift(3, 0, C6_DATA, 8.84).is_err());
        assert!(data_shift(0, 2, C6_DATA, 8.84).is_err());
    }

    #[test]
    fn canonical_ordering() {
        // scrambled input: data sites before ancilla, unsorted positions
        let sites = vec![
            AtomSite::data(4.0, 4.0),
            AtomSite::data(-4.0, -4.0),
            AtomSite::data(4.0, -4.0),
            AtomSite::ancilla(0.0, 0.0),
            AtomSite::data(-4.0, 4.0),
        ];
        let sys = AtomSystem::new(sites, SpeciesTable::default_nacs(), true).unwrap();
        assert_eq!(sys.sites()[0].role, Role::Ancilla);
        let pos: Vec<(f64, f64)> = sys.sites()[1..].iter().map(|s| s.position).collect();
        assert_eq!(
            pos,
            vec![(-4.0, -4.0), (4.0, -4.0), (-4.0, 4.0), (4.0, 4.0)]
        );
    }

    #[test]
    fn register_skips_unloaded() {
        let mut sites = square_plaquette_sites(8.0);
        sites[2].loaded = false; // one data corner empty
        let sys = AtomSystem::new(sites, SpeciesTable::default_nacs(), true).unwrap();
        assert_eq!(sys.register().len(), 4);
        assert_eq!(sys.space().dims(), &[2, 3, 3, 3]);
        assert_eq!(sys.n_loaded_data(), 3);
        // interactions cover exactly all loaded pairs: C(4,2) = 6
        assert_eq!(sys.interactions().len(), 6);
        // the unloaded site is in no pair
        let unloaded_site = sys
            .sites()
            .iter()
            .position(|s| !s.loaded)
            .unwrap();
        assert!(sys
            .interactions()
            .iter()
            .all(|e| e.a != unloaded_site && e.b != unloaded_site));
        assert_eq!(sys.slot_of_site(unloaded_site), None);
    }

    #[test]
    fn exactly_one_ancilla_enforced() {
        let no_ancilla = vec![AtomSite::data(0.0, 0.0), AtomSite::data(5.0, 0.0)];
        assert!(matches!(
            AtomSystem::new(no_ancilla, SpeciesTable::default_nacs(), true),
            Err(SystemError::AncillaCount { got: 0 })
        ));
        let two = vec![AtomSite::ancilla(0.0, 0.0), AtomSite::ancilla(5.0, 0.0)];
        assert!(matches!(
            AtomSystem::new(two, SpeciesTable::default_nacs(), true),
            Err(SystemError::AncillaCount { got: 2 })
        ));
    }

    #[test]
    fn coincident_sites_rejected() {
        let sites = vec![AtomSite::ancilla(0.0, 0.0), AtomSite::data(0.0, 0.0)];
        assert!(matches!(
            AtomSystem::new(sites, SpeciesTable::default_nacs(), true),
            Err(SystemError::CoincidentSites { .. })
        ));
    }

    #[test]
    fn hamiltonian_single_atom_resonant() {
        // ancilla alone, resonant drive: H/2pi = [[0, O/2], [O/2, 0]]
        let sites = vec![AtomSite::ancilla(0.0, 0.0)];
        let sys = AtomSystem::new(sites, SpeciesTable::default_nacs(), true).unwrap();
        let h = sys
            .build_hamiltonian(&DriveSettings::ancilla_only(1.0, 0.0, 0.0))
            .unwrap();
        let m = h.matrix();
        assert!((m[(0, 1)].re - TWO_PI * 0.5).abs() < 1e-12);
        assert!(m[(0, 0)].norm() < 1e-12 && m[(1, 1)].norm() < 1e-12);
    }

    #[test]
    fn hamiltonian_blockaded_block_convention() {
        // data atom beside a Rydberg ancilla: restricted 2x2 block
        // [[0, O/2], [O/2, V - delta]] * 2pi on {|r,1>, |r,r>}
        let (omega, v) = (0.918, 1.1);
        let r = separation_for_strength(C6_INTER, v).unwrap();
        let sys = AtomSystem::new(two_atom_sites(r), SpeciesTable::default_nacs(), true).unwrap();
        let h = sys
            .build_hamiltonian(&DriveSettings::data_only(omega, 0.0, 0.0))
            .unwrap();
        let m = h.matrix();
        // basis: ancilla slot 0 (2 levels) x data slot 1 (3 levels)
        let i_r1 = 1 * 3 + DATA_1;
        let i_rr = 1 * 3 + DATA_R;
        assert!((m[(i_r1, i_rr)].re - TWO_PI * omega / 2.0).abs() < 1e-9);
        assert!(m[(i_r1, i_r1)].norm() < 1e-12);
        assert!((m[(i_rr, i_rr)].re - TWO_PI * v).abs() < 1e-9);
        // delta = V makes the blockaded block resonant
        let h2 = sys
            .build_hamiltonian(&DriveSettings::data_only(omega, v, 0.0))
            .unwrap();
        assert!(h2.matrix()[(i_rr, i_rr)].norm() < 1e-9);
    }

    #[test]
    fn interaction_override_bit_for_bit() {
        let r = separation_for_strength(C6_INTER, 1.1).unwrap();
        let sys = AtomSystem::new(two_atom_sites(r), SpeciesTable::default_nacs(), true).unwrap();
        let drive = DriveSettings::data_only(0.918, 0.3, 0.7);
        let h_before = sys.build_hamiltonian(&drive).unwrap();
        let mut sys2 = sys.clone();
        let v = sys2.interaction(0, 1).unwrap();
        sys2.set_interaction(0, 1, v).unwrap();
        let h_after = sys2.build_hamiltonian(&drive).unwrap();
        assert_eq!(h_before.matrix().max_abs_diff(h_after.matrix()), 0.0);
        // overriding a non-pair errors
        assert!(matches!(
            sys2.set_interaction(0, 2, 1.0),
            Err(SystemError::NoSuchPair { .. })
        ));
    }

    #[test]
    fn shifted_hamiltonian_adds_r_offsets() {
        let r = separation_for_strength(C6_INTER, 1.1).unwrap();
        let sys = AtomSystem::new(two_atom_sites(r), SpeciesTable::default_nacs(), true).unwrap();
        let h0 = sys.build_hamiltonian(&DriveSettings::IDLE).unwrap();
        let h1 = sys
            .build_hamiltonian_shifted(&DriveSettings::IDLE, &[0.25, -0.5])
            .unwrap();
        // idle base has only the interaction diagonal
        let i_rr = 1 * 3 + DATA_R;
        let i_r0 = 1 * 3 + DATA_0;
        let diff_rr = h1.matrix()[(i_rr, i_rr)] - h0.matrix()[(i_rr, i_rr)];
        assert!((diff_rr.re - TWO_PI * (0.25 - 0.5)).abs() < 1e-12);
        let diff_r0 = h1.matrix()[(i_r0, i_r0)] - h0.matrix()[(i_r0, i_r0)];
        assert!((diff_r0.re - TWO_PI * 0.25).abs() < 1e-12);
        // wrong length rejected
        assert!(sys
            .build_hamiltonian_shifted(&DriveSettings::IDLE, &[0.0])
            .is_err());
    }

    #[test]
    fn blockade_limit_suppresses_data_transfer() {
        // with V = 1e4 * omega the data atom beside a Rydberg ancilla keeps
        // |r> population below 1e-6 through a full 2pi pulse
        let omega = 0.918;
        let r = separation_for_strength(C6_INTER, 1.1).unwrap();
        let mut sys =
            AtomSystem::new(two_atom_sites(r), SpeciesTable::default_nacs(), true).unwrap();
        sys.set_interaction(0, 1, 1.0e4 * omega).unwrap();
        let h = sys
            .build_hamiltonian(&DriveSettings::data_only(omega, 0.0, 0.0))
            .unwrap();
        let u = propagator(&h, 1.0 / omega).unwrap();
        let mut psi =
            QuantumState::pure_basis(sys.space().clone(), &[ANCILLA_R, DATA_1]).unwrap();
        psi.apply_unitary(&u).unwrap();
        // ancilla undriven: stays in |r>; condition and read data |r> weight
        let branch = psi.branch_amplitude(&[(0, ANCILLA_R)]).unwrap();
        let p_r = branch[DATA_R].norm_sqr();
        let norm: f64 = branch.iter().map(|z| z.norm_sqr()).sum();
        assert!((norm - 1.0).abs() < 1e-9);
        assert!(p_r < 1e-6, "blockaded transfer {p_r} not suppressed");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        /// Assembled Hamiltonians are Hermitian and never couple data |0>.
        #[test]
        fn hamiltonian_structure(
            omega_a in 0.0f64..8.0,
            omega_d in 0.0f64..8.0,
            delta_a in -4.0f64..4.0,
            delta_d in -4.0f64..4.0,
            phase_a in -3.2f64..3.2,
            phase_d in -3.2f64..3.2,
            side in 5.0f64..12.0,
        ) {
            let sys = AtomSystem::new(
                square_plaquette_sites(side),
                SpeciesTable::default_nacs(),
                true,
            ).unwrap();
            let drive = DriveSettings {
                ancilla: DriveTerm::on(omega_a, delta_a, phase_a),
                data: DriveTerm::on(omega_d, delta_d, phase_d),
            };
            let h = sys.build_hamiltonian(&drive).unwrap();
            let m = h.matrix();
            prop_assert!(m.hermitian_deviation() <= 1e-10 * m.max_abs().max(1.0));
            // |0> of any data atom couples to nothing: rows/cols where a
            // data site changes away from level 0 must vanish.
            let space = sys.space();
            let dim = space.dim();
            for i in 0..dim {
                let ci = space.config_of(i);
                for j in (i+1)..dim {
                    let cj = space.config_of(j);
                    let zero_involved = (1..space.n_sites()).any(|s| {
                        ci[s] != cj[s] && (ci[s] == DATA_0 || cj[s] == DATA_0)
                    });
                    if zero_involved {
                        prop_assert!(m[(i, j)].norm() == 0.0);
                    }
                }
            }
        }
    }
}
