//! Sector-restricted free evolution `U_n(τ)` and the projected contraction
//! `T_n = Π_{B=0} U_n Π_{B=0}`.

use crate::error::{domain, Error, Result};
use crate::hamiltonian::{build_chain, diagonalize, ChainSpec, SectorHamiltonian, Spectrum};
use crate::linalg::{op_norm, submatrix, CMatrix, CVector, C64};
use crate::sector_basis::{split_by_region, SectorBasis, SiteLayout};

/// Unitarity tolerance for propagators.
pub const UNITARY_TOL: f64 = 1e-10;
/// Largest matrix power the contraction helpers will form.
pub const MAX_POWER: usize = 10_000;
/// Largest sector handed to the dense eigensolver.
pub const MAX_DENSE_DIM: usize = 4_096;

/// Operators acting on vectors over a sector basis.
pub trait SectorOperator {
    fn matrix(&self) -> &CMatrix;

    fn apply(&self, v: &CVector) -> Result<CVector> {
        let m = self.matrix();
        if m.ncols() != v.len() {
            return domain(format!(
                "vector of length {} does not match operator of dimension {}",
                v.len(),
                m.ncols()
            ));
        }
        Ok(m * v)
    }
}

/// A diagonalized sector Hamiltonian, the starting point for every propagator.
#[derive(Clone, Debug)]
pub struct SectorDynamics {
    pub hamiltonian: SectorHamiltonian,
    pub spectrum: Spectrum,
}

impl SectorDynamics {
    pub fn new(spec: &ChainSpec, n: usize) -> Result<Self> {
        let dim = crate::sector_basis::binomial(spec.sites(), n);
        if dim > MAX_DENSE_DIM as u64 {
            return Err(Error::Resource(format!(
                "sector n={n} has dimension {dim}, above the dense cap of {MAX_DENSE_DIM}"
            )));
        }
        let hamiltonian = build_chain(spec, n)?;
        let spectrum = diagonalize(&hamiltonian.matrix)?;
        Ok(Self {
            hamiltonian,
            spectrum,
        })
    }

    pub fn basis(&self) -> &SectorBasis {
        &self.hamiltonian.basis
    }

    pub fn evolve(&self, tau: f64) -> Result<SectorUnitary> {
        evolve(self.basis(), &self.spectrum, tau)
    }
}

#[derive(Clone, Debug)]
pub struct SectorUnitary {
    pub basis: SectorBasis,
    pub matrix: CMatrix,
    pub tau: f64,
}

impl SectorOperator for SectorUnitary {
    fn matrix(&self) -> &CMatrix {
        &self.matrix
    }
}

/// `U_n(τ) = V diag(exp(−i E τ)) V†`.
pub fn evolve(basis: &SectorBasis, spectrum: &Spectrum, tau: f64) -> Result<SectorUnitary> {
    if !tau.is_finite() {
        return domain(format!("evolution time {tau} is not finite"));
    }
    if spectrum.dim() != basis.dim() {
        return domain(format!(
            "spectrum of dimension {} does not match basis of dimension {}",
            spectrum.dim(),
            basis.dim()
        ));
    }
    let matrix = spectrum.apply_function(|e| C64::from_polar(1.0, -e * tau));
    Ok(SectorUnitary {
        basis: basis.clone(),
        matrix,
        tau,
    })
}

/// The B-empty block of `Π_{B=0} U_n Π_{B=0}`.
///
/// `b_empty[k]` is the full-sector index of row/column `k` of `matrix`.
#[derive(Clone, Debug)]
pub struct SectorContraction {
    pub basis: SectorBasis,
    pub b_empty: Vec<usize>,
    pub matrix: CMatrix,
}

impl SectorOperator for SectorContraction {
    fn matrix(&self) -> &CMatrix {
        &self.matrix
    }
}

impl SectorContraction {
    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    /// `Π_{B=0} U` on the whole sector: the rectangle form with B-occupied rows zeroed.
    pub fn full_rectangle(&self, u: &SectorUnitary) -> CMatrix {
        let mut out = CMatrix::zeros(u.matrix.nrows(), u.matrix.ncols());
        for &r in &self.b_empty {
            out.set_row(r, &u.matrix.row(r));
        }
        out
    }

    /// `T^j` by repeated multiplication.
    pub fn power(&self, j: usize) -> Result<CMatrix> {
        if j > MAX_POWER {
            return domain(format!("power {j} exceeds the cap of {MAX_POWER}"));
        }
        let d = self.dim();
        let mut acc = CMatrix::identity(d, d);
        for _ in 0..j {
            acc = &self.matrix * acc;
        }
        Ok(acc)
    }

    /// `‖T^j‖²` for `j = 0 … max_j`, computed incrementally.
    pub fn power_norms_sqr(&self, max_j: usize) -> Result<Vec<f64>> {
        if max_j > MAX_POWER {
            return domain(format!("power {max_j} exceeds the cap of {MAX_POWER}"));
        }
        let d = self.dim();
        if d == 0 {
            return Ok(vec![0.0; max_j + 1]);
        }
        let mut acc = CMatrix::identity(d, d);
        let mut out = Vec::with_capacity(max_j + 1);
        out.push(1.0);
        for _ in 0..max_j {
            acc = &self.matrix * acc;
            out.push(op_norm(&acc).powi(2));
        }
        Ok(out)
    }
}

pub fn build_t(u: &SectorUnitary, layout: &SiteLayout) -> Result<SectorContraction> {
    if u.basis.site_count() != layout.total() {
        return domain(format!(
            "layout of {} sites does not match a basis on {} sites",
            layout.total(),
            u.basis.site_count()
        ));
    }
    let bob: Vec<usize> = layout.bob().collect();
    let split = split_by_region(&u.basis, &bob)?;
    let b_empty = split.empty_group().to_vec();
    let matrix = submatrix(&u.matrix, &b_empty);
    Ok(SectorContraction {
        basis: u.basis.clone(),
        b_empty,
        matrix,
    })
}
