//! Level spaces, quantum states and operators for small atom registers.
//!
//! A register is a tensor product of per-site level spaces (two levels for
//! the ancilla species, three for data atoms). Site 0 is the slowest-varying
//! index. States are either pure amplitude vectors or density matrices;
//! operators are dense Hermitian matrices in angular units (rad/us).

use alloc::{vec, vec::Vec};
use core::fmt;

use num_complex::Complex64 as C64;
#[allow(unused_imports)]
use num_traits::Float;

use crate::linalg::{CMatrix, Eigh, LinalgError};

/// Largest total Hilbert-space dimension accepted by [`LevelSpace::new`].
pub const MAX_TOTAL_DIM: usize = 1024;

/// Tolerance for state-vector norm and density-matrix trace deviations.
pub const STATE_NORM_TOL: f64 = 1e-10;
/// Tolerance for Hermiticity checks, relative to the largest entry.
pub const HERMITICITY_TOL: f64 = 1e-10;
/// Eigenvalue floor below which a density matrix is rejected as non-positive.
pub const POSITIVITY_FLOOR: f64 = -1e-9;
/// Maximum allowed `||U^dagger U - I||_max` for a freshly built propagator.
pub const UNITARITY_TOL: f64 = 1e-9;

/// Errors from state and operator construction.
#[derive(Debug, Clone, PartialEq)]
pub enum QuantumError {
    /// Product of level counts exceeds [`MAX_TOTAL_DIM`].
    SpaceTooLarge { dim: usize },
    /// A site has fewer than two levels.
    BadLevelCount { site: usize, levels: usize },
    /// Site index beyond the register.
    SiteOutOfRange { site: usize, n_sites: usize },
    /// Level index beyond a site's level count.
    LevelOutOfRange {
        site: usize,
        level: usize,
        levels: usize,
    },
    /// Pure-state norm (or density trace) off by more than the tolerance.
    NotNormalized { value: f64 },
    /// Matrix violates Hermiticity beyond tolerance.
    NotHermitian { deviation: f64 },
    /// Density matrix has an eigenvalue below the positivity floor.
    NotPositive { min_eigenvalue: f64 },
    /// Operation defined only for pure states.
    NotPure,
    /// Evolution time must be finite and non-negative.
    BadDuration { t: f64 },
    /// Vector/matrix dimension does not match the space.
    DimensionMismatch { expected: usize, got: usize },
    /// Propagator failed its unitarity check.
    NotUnitary { deviation: f64 },
    /// Underlying linear-algebra failure.
    Linalg(LinalgError),
}

impl fmt::Display for QuantumError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            QuantumError::SpaceTooLarge { dim } => {
                write!(f, "total dimension {dim} exceeds limit {MAX_TOTAL_DIM}")
            }
            QuantumError::BadLevelCount { site, levels } => {
                write!(f, "site {site} has {levels} levels, need at least 2")
            }
            QuantumError::SiteOutOfRange { site, n_sites } => {
                write!(f, "site {site} out of range for {n_sites} sites")
            }
            QuantumError::LevelOutOfRange {
                site,
                level,
                levels,
            } => write!(f, "level {level} out of range for site {site} ({levels} levels)"),
            QuantumError::NotNormalized { value } => {
                write!(f, "state norm/trace {value} deviates beyond {STATE_NORM_TOL}")
            }
            QuantumError::NotHermitian { deviation } => {
                write!(f, "matrix deviates from Hermitian by {deviation}")
            }
            QuantumError::NotPositive { min_eigenvalue } => {
                write!(f, "density matrix eigenvalue {min_eigenvalue} below floor")
            }
            QuantumError::NotPure => write!(f, "operation requires a pure state"),
            QuantumError::BadDuration { t } => {
                write!(f, "evolution time {t} must be finite and non-negative")
            }
            QuantumError::DimensionMismatch { expected, got } => {
                write!(f, "dimension mismatch: expected {expected}, got {got}")
            }
            QuantumError::NotUnitary { deviation } => {
                write!(f, "propagator unitarity deviation {deviation} exceeds {UNITARITY_TOL}")
            }
            QuantumError::Linalg(e) => write!(f, "linear algebra error: {e}"),
        }
    }
}

impl core::error::Error for QuantumError {}

impl From<LinalgError> for QuantumError {
    fn from(e: LinalgError) -> Self {
        QuantumError::Linalg(e)
    }
}

/// Tensor-product structure of the register: per-site level counts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LevelSpace {
    dims: Vec<usize>,
    total: usize,
}

impl LevelSpace {
    /// Build a space from per-site level counts (each >= 2, product <= 1024).
    pub fn new(dims: &[usize]) -> Result<Self, QuantumError> {
        let mut total = 1usize;
        for (site, &d) in dims.iter().enumerate() {
            if d < 2 {
                return Err(QuantumError::BadLevelCount { site, levels: d });
            }
            total = total.saturating_mul(d);
            if total > MAX_TOTAL_DIM {
                return Err(QuantumError::SpaceTooLarge { dim: total });
            }
        }
        Ok(LevelSpace {
            dims: dims.to_vec(),
            total,
        })
    }

    pub fn n_sites(&self) -> usize {
        self.dims.len()
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    /// Total Hilbert-space dimension.
    pub fn dim(&self) -> usize {
        self.total
    }

    /// Levels at one site.
    pub fn site_levels(&self, site: usize) -> usize {
        self.dims[site]
    }

    /// Stride of a site in the flattened index (site 0 is slowest).
    pub fn stride(&self, site: usize) -> usize {
        self.dims[site + 1..].iter().product()
    }

    /// Level of `site` within the flattened basis index.
    #[inline]
    pub fn level_of(&self, index: usize, site: usize, stride: usize) -> usize {
        (index / stride) % self.dims[site]
    }

    /// Flattened index of a full configuration.
    pub fn index_of(&self, levels: &[usize]) -> usize {
        debug_assert_eq!(levels.len(), self.dims.len());
        let mut idx = 0;
        for (site, &l) in levels.iter().enumerate() {
            idx = idx * self.dims[site] + l;
        }
        idx
    }

    /// Configuration (per-site levels) of a flattened index.
    pub fn config_of(&self, mut index: usize) -> Vec<usize> {
        let mut cfg = vec![0usize; self.dims.len()];
        for site in (0..self.dims.len()).rev() {
            cfg[site] = index % self.dims[site];
            index /= self.dims[site];
        }
        cfg
    }

    fn check_site_level(&self, site: usize, level: usize) -> Result<(), QuantumError> {
        if site >= self.dims.len() {
            return Err(QuantumError::SiteOutOfRange {
                site,
                n_sites: self.dims.len(),
            });
        }
        if level >= self.dims[site] {
            return Err(QuantumError::LevelOutOfRange {
                site,
                level,
                levels: self.dims[site],
            });
        }
        Ok(())
    }
}

/// Pure or mixed register state.
#[derive(Debug, Clone, PartialEq)]
pub enum StateRepr {
    Pure(Vec<C64>),
    Density(CMatrix),
}

/// A normalized quantum state over a [`LevelSpace`].
#[derive(Debug, Clone, PartialEq)]
pub struct QuantumState {
    space: LevelSpace,
    repr: StateRepr,
}

impl QuantumState {
    /// Basis product state |l_0 l_1 ...>.
    pub fn pure_basis(space: LevelSpace, levels: &[usize]) -> Result<Self, QuantumError> {
        if levels.len() != space.n_sites() {
            return Err(QuantumError::DimensionMismatch {
                expected: space.n_sites(),
                got: levels.len(),
            });
        }
        for (site, &l) in levels.iter().enumerate() {
            space.check_site_level(site, l)?;
        }
        let mut amps = vec![C64::new(0.0, 0.0); space.dim()];
        let idx = space.index_of(levels);
        amps[idx] = C64::new(1.0, 0.0);
        Ok(QuantumState {
            space,
            repr: StateRepr::Pure(amps),
        })
    }

    /// Product of per-site amplitude vectors (each normalised internally).
    pub fn pure_product(space: LevelSpace, site_amps: &[Vec<C64>]) -> Result<Self, QuantumError> {
        if site_amps.len() != space.n_sites() {
            return Err(QuantumError::DimensionMismatch {
                expected: space.n_sites(),
                got: site_amps.len(),
            });
        }
        for (site, a) in site_amps.iter().enumerate() {
            if a.len() != space.site_levels(site) {
                return Err(QuantumError::DimensionMismatch {
                    expected: space.site_levels(site),
                    got: a.len(),
                });
            }
        }
        let mut amps = vec![C64::new(1.0, 0.0)];
        for a in site_amps {
            let norm: f64 = a.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
            if norm == 0.0 {
                return Err(QuantumError::NotNormalized { value: 0.0 });
            }
            let mut next = Vec::with_capacity(amps.len() * a.len());
            for z in &amps {
                for w in a {
                    next.push(z * (w / norm));
                }
            }
            amps = next;
        }
        Ok(QuantumState {
            space,
            repr: StateRepr::Pure(amps),
        })
    }

    /// Wrap an amplitude vector, enforcing normalisation within tolerance.
    pub fn from_amplitudes(space: LevelSpace, amps: Vec<C64>) -> Result<Self, QuantumError> {
        if amps.len() != space.dim() {
            return Err(QuantumError::DimensionMismatch {
                expected: space.dim(),
                got: amps.len(),
            });
        }
        let norm: f64 = amps.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > STATE_NORM_TOL {
            return Err(QuantumError::NotNormalized { value: norm });
        }
        Ok(QuantumState {
            space,
            repr: StateRepr::Pure(amps),
        })
    }

    /// As [`from_amplitudes`], with an explicit norm tolerance — for
    /// wrapping the output of long evolutions whose contract allows a
    /// slightly larger rounding drift than fresh construction does.
    ///
    /// [`from_amplitudes`]: QuantumState::from_amplitudes
    pub fn from_amplitudes_with_tol(
        space: LevelSpace,
        amps: Vec<C64>,
        tol: f64,
    ) -> Result<Self, QuantumError> {
        if amps.len() != space.dim() {
            return Err(QuantumError::DimensionMismatch {
                expected: space.dim(),
                got: amps.len(),
            });
        }
        let norm: f64 = amps.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > tol {
            return Err(QuantumError::NotNormalized { value: norm });
        }
        Ok(QuantumState {
            space,
            repr: StateRepr::Pure(amps),
        })
    }

    /// Wrap a density matrix, enforcing Hermiticity, unit trace and
    /// positivity (eigenvalues above [`POSITIVITY_FLOOR`]).
    pub fn from_density(space: LevelSpace, rho: CMatrix) -> Result<Self, QuantumError> {
        Self::from_density_with_floor(space, rho, POSITIVITY_FLOOR)
    }

    /// As [`from_density`], with an explicit eigenvalue floor — open-system
    /// integrators are allowed a (documented) larger negative excursion.
    ///
    /// [`from_density`]: QuantumState::from_density
    pub fn from_density_with_floor(
        space: LevelSpace,
        rho: CMatrix,
        floor: f64,
    ) -> Result<Self, QuantumError> {
        if rho.rows() != space.dim() || rho.cols() != space.dim() {
            return Err(QuantumError::DimensionMismatch {
                expected: space.dim(),
                got: rho.rows(),
            });
        }
        let scale = rho.max_abs().max(1.0);
        let dev = rho.hermitian_deviation();
        if dev > HERMITICITY_TOL * scale {
            return Err(QuantumError::NotHermitian { deviation: dev });
        }
        let tr = rho.trace();
        if (tr.re - 1.0).abs() > STATE_NORM_TOL || tr.im.abs() > STATE_NORM_TOL {
            return Err(QuantumError::NotNormalized { value: tr.re });
        }
        let eig = rho.eigh()?;
        let min = eig.values.first().copied().unwrap_or(0.0);
        if min < floor {
            return Err(QuantumError::NotPositive {
                min_eigenvalue: min,
            });
        }
        Ok(QuantumState {
            space,
            repr: StateRepr::Density(rho),
        })
    }

    pub fn space(&self) -> &LevelSpace {
        &self.space
    }

    pub fn repr(&self) -> &StateRepr {
        &self.repr
    }

    pub fn is_pure(&self) -> bool {
        matches!(self.repr, StateRepr::Pure(_))
    }

    /// Amplitudes of a pure state.
    pub fn amplitudes(&self) -> Result<&[C64], QuantumError> {
        match &self.repr {
            StateRepr::Pure(a) => Ok(a),
            StateRepr::Density(_) => Err(QuantumError::NotPure),
        }
    }

    /// Density-matrix form (outer product for pure states).
    pub fn to_density(&self) -> CMatrix {
        match &self.repr {
            StateRepr::Pure(a) => {
                let n = a.len();
                CMatrix::from_fn(n, n, |i, j| a[i] * a[j].conj())
            }
            StateRepr::Density(r) => r.clone(),
        }
    }

    /// Norm (pure) or trace real part (density).
    pub fn norm(&self) -> f64 {
        match &self.repr {
            StateRepr::Pure(a) => a.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt(),
            StateRepr::Density(r) => r.trace().re,
        }
    }

    /// Marginal probability of finding `site` in `level`.
    pub fn population(&self, site: usize, level: usize) -> Result<f64, QuantumError> {
        self.space.check_site_level(site, level)?;
        let stride = self.space.stride(site);
        let p = match &self.repr {
            StateRepr::Pure(a) => a
                .iter()
                .enumerate()
                .filter(|(i, _)| self.space.level_of(*i, site, stride) == level)
                .map(|(_, z)| z.norm_sqr())
                .sum(),
            StateRepr::Density(r) => (0..self.space.dim())
                .filter(|&i| self.space.level_of(i, site, stride) == level)
                .map(|i| r[(i, i)].re)
                .sum(),
        };
        Ok(p)
    }

    /// Unnormalised conditional amplitudes on the remaining sites after
    /// fixing `(site, level)` pairs. Pure states only. The squared norm of
    /// the result is the branch probability.
    pub fn branch_amplitude(&self, fixed: &[(usize, usize)]) -> Result<Vec<C64>, QuantumError> {
        let amps = self.amplitudes()?;
        for &(site, level) in fixed {
            self.space.check_site_level(site, level)?;
        }
        let strides: Vec<(usize, usize, usize)> = fixed
            .iter()
            .map(|&(site, level)| (site, level, self.space.stride(site)))
            .collect();
        let mut out = Vec::new();
        'outer: for (i, z) in amps.iter().enumerate() {
            for &(site, level, stride) in &strides {
                if self.space.level_of(i, site, stride) != level {
                    continue 'outer;
                }
            }
            out.push(*z);
        }
        Ok(out)
    }

    /// Apply a unitary in place (U psi, or U rho U^dagger).
    pub fn apply_unitary(&mut self, u: &CMatrix) -> Result<(), QuantumError> {
        match &mut self.repr {
            StateRepr::Pure(a) => {
                let next = u.mul_vec(a)?;
                *a = next;
            }
            StateRepr::Density(r) => {
                let next = u.mul(r)?.mul(&u.adjoint())?;
                *r = next;
            }
        }
        Ok(())
    }
}

/// A Hermitian operator over a register, in angular units (rad/us).
#[derive(Debug, Clone)]
pub struct HermitianOperator {
    space: LevelSpace,
    matrix: CMatrix,
}

impl HermitianOperator {
    /// Wrap a matrix, enforcing shape and Hermiticity (relative tolerance).
    pub fn new(space: LevelSpace, matrix: CMatrix) -> Result<Self, QuantumError> {
        if matrix.rows() != space.dim() || matrix.cols() != space.dim() {
            return Err(QuantumError::DimensionMismatch {
                expected: space.dim(),
                got: matrix.rows(),
            });
        }
        let scale = matrix.max_abs().max(1.0);
        let dev = matrix.hermitian_deviation();
        if dev > HERMITICITY_TOL * scale {
            return Err(QuantumError::NotHermitian { deviation: dev });
        }
        Ok(HermitianOperator { space, matrix })
    }

    pub fn space(&self) -> &LevelSpace {
        &self.space
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.matrix
    }

    /// Eigendecomposition (cached nowhere; callers reuse the result).
    pub fn eigh(&self) -> Result<Eigh, QuantumError> {
        Ok(self.matrix.eigh()?)
    }

    /// Expectation value on a state.
    pub fn expectation(&self, state: &QuantumState) -> Result<f64, QuantumError> {
        match state.repr() {
            StateRepr::Pure(a) => {
                let ha = self.matrix.mul_vec(a)?;
                let v: C64 = a.iter().zip(ha.iter()).map(|(x, y)| x.conj() * y).sum();
                Ok(v.re)
            }
            StateRepr::Density(r) => Ok(self.matrix.mul(r)?.trace().re),
        }
    }
}

/// Embed a single-site operator into the full register space.
pub fn embed_single_site(
    space: &LevelSpace,
    site: usize,
    op: &CMatrix,
) -> Result<CMatrix, QuantumError> {
    if site >= space.n_sites() {
        return Err(QuantumError::SiteOutOfRange {
            site,
            n_sites: space.n_sites(),
        });
    }
    let d = space.site_levels(site);
    if op.rows() != d || op.cols() != d {
        return Err(QuantumError::DimensionMismatch {
            expected: d,
            got: op.rows(),
        });
    }
    let dim = space.dim();
    let stride = space.stride(site);
    let mut out = CMatrix::zeros(dim, dim);
    for i in 0..dim {
        let li = space.level_of(i, site, stride);
        let base = i - li * stride;
        for lj in 0..d {
            let v = op[(li, lj)];
            if v == C64::new(0.0, 0.0) {
                continue;
            }
            let j = base + lj * stride;
            out[(i, j)] = v;
        }
    }
    Ok(out)
}

/// Projector |l_a l_b><l_a l_b| on a pair of sites, embedded in the register.
pub fn embed_pair_projector(
    space: &LevelSpace,
    site_a: usize,
    level_a: usize,
    site_b: usize,
    level_b: usize,
) -> Result<CMatrix, QuantumError> {
    space.check_site_level(site_a, level_a)?;
    space.check_site_level(site_b, level_b)?;
    if site_a == site_b {
        return Err(QuantumError::SiteOutOfRange {
            site: site_b,
            n_sites: space.n_sites(),
        });
    }
    let dim = space.dim();
    let sa = space.stride(site_a);
    let sb = space.stride(site_b);
    let mut out = CMatrix::zeros(dim, dim);
    for i in 0..dim {
        if space.level_of(i, site_a, sa) == level_a && space.level_of(i, site_b, sb) == level_b {
            out[(i, i)] = C64::new(1.0, 0.0);
        }
    }
    Ok(out)
}

/// Time-evolution operator `exp(-i H t)` by Hermitian eigendecomposition.
/// `t` is in microseconds, `H` in rad/us. The result is checked against
/// `||U^dagger U - I||_max < 1e-9`.
pub fn propagator(h: &HermitianOperator, t: f64) -> Result<CMatrix, QuantumError> {
    if !t.is_finite() || t < 0.0 {
        return Err(QuantumError::BadDuration { t });
    }
    let eig = h.eigh()?;
    let u = propagator_from_eigh(&eig, t);
    let dev = unitarity_deviation(&u);
    if dev > UNITARITY_TOL {
        return Err(QuantumError::NotUnitary { deviation: dev });
    }
    Ok(u)
}

/// Rebuild `exp(-i H t)` from a precomputed eigendecomposition of H.
pub fn propagator_from_eigh(eig: &Eigh, t: f64) -> CMatrix {
    eig.map_eigenvalues(|w| C64::from_polar(1.0, -w * t))
}

/// `||U^dagger U - I||_max`.
pub fn unitarity_deviation(u: &CMatrix) -> f64 {
    let uu = u.adjoint().mul(u).expect("square");
    let n = u.rows();
    let mut dev: f64 = 0.0;
    for i in 0..n {
        for j in 0..n {
            let target = if i == j {
                C64::new(1.0, 0.0)
            } else {
                C64::new(0.0, 0.0)
            };
            dev = dev.max((uu[(i, j)] - target).norm());
        }
    }
    dev
}
