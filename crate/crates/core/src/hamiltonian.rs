//! Excitation-conserving nearest-neighbour chain Hamiltonians and their
//! restriction to fixed-excitation sectors.
//!
//! Conventions (ħ = 1):
//!
//! ```text
//! H_XY   = Σ_i J_i (σx_i σx_{i+1} + σy_i σy_{i+1}) / 2 + Σ_i B_i σz_i / 2
//! H_Heis = Σ_i J_i (σ_i · σ_{i+1}) / 2             + Σ_i B_i σz_i / 2
//! ```
//!
//! In both models a single excitation hops across bond `i` with amplitude
//! exactly `J_i`. The Heisenberg model adds the isotropic `2 J_i z_i z_{i+1}`
//! diagonal term (with `z = ±1/2`).

use log::warn;
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::linalg::{max_abs, CMatrix, C64};
use crate::sector_basis::{enumerate_sector, SectorBasis, SiteLayout};

/// Symmetry tolerance on Hamiltonian input.
pub const HERMITIAN_TOL: f64 = 1e-12;
/// Max-norm tolerance on `V diag(E) V†` reconstruction.
pub const RECONSTRUCTION_TOL: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Model {
    Heisenberg,
    Xy,
}

/// Geometry and parameters of a chain.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainSpec {
    pub layout: SiteLayout,
    pub model: Model,
    /// Exchange strength of bond `i` between sites `i` and `i + 1`.
    pub couplings: Vec<f64>,
    /// Local z-field on each site.
    pub fields: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rng_seed: Option<u64>,
}

impl ChainSpec {
    /// Chain with zero local fields.
    pub fn new(layout: SiteLayout, model: Model, couplings: Vec<f64>) -> Result<Self> {
        let fields = vec![0.0; layout.total()];
        let spec = Self {
            layout,
            model,
            couplings,
            fields,
            rng_seed: None,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn with_fields(mut self, fields: Vec<f64>) -> Result<Self> {
        self.fields = fields;
        self.validate()?;
        Ok(self)
    }

    pub fn sites(&self) -> usize {
        self.layout.total()
    }

    pub fn validate(&self) -> Result<()> {
        self.layout.validate()?;
        let n = self.sites();
        if self.couplings.len() != n - 1 {
            return domain(format!(
                "expected {} couplings for {n} sites, got {}",
                n - 1,
                self.couplings.len()
            ));
        }
        if self.fields.len() != n {
            return domain(format!("expected {n} fields, got {}", self.fields.len()));
        }
        if self
            .couplings
            .iter()
            .chain(&self.fields)
            .any(|x| !x.is_finite())
        {
            return domain("couplings and fields must be finite");
        }
        Ok(())
    }

    /// True when every bond carries a nonzero exchange term.
    pub fn is_connected(&self) -> bool {
        self.couplings.iter().all(|&j| j != 0.0)
    }
}

/// Chain with couplings drawn i.i.d. uniformly from `[lo, hi]` and zero fields.
pub fn random_chain(
    layout: SiteLayout,
    model: Model,
    coupling_range: (f64, f64),
    seed: u64,
) -> Result<ChainSpec> {
    let (lo, hi) = coupling_range;
    if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
        return domain(format!(
            "coupling range must satisfy 0 < lo <= hi (got [{lo}, {hi}])"
        ));
    }
    layout.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dist = Uniform::new_inclusive(lo, hi);
    let couplings = (0..layout.total() - 1)
        .map(|_| dist.sample(&mut rng))
        .collect();
    let mut spec = ChainSpec::new(layout, model, couplings)?;
    spec.rng_seed = Some(seed);
    Ok(spec)
}

/// Mirror-symmetric couplings `scale·√(i(N−i))`, `i = 1 … N−1`, which
/// transfer a single excitation end to end perfectly at `t = π / (2·scale)`
/// under the XY model.
pub fn mirror_chain(layout: SiteLayout, scale: f64) -> Result<ChainSpec> {
    let n = layout.total();
    let couplings = (1..n)
        .map(|i| scale * ((i * (n - i)) as f64).sqrt())
        .collect();
    ChainSpec::new(layout, Model::Xy, couplings)
}

/// `H_n = Π(n) H Π(n)` on the canonical `n`-excitation basis of the whole chain.
#[derive(Clone, Debug)]
pub struct SectorHamiltonian {
    pub basis: SectorBasis,
    pub matrix: CMatrix,
}

fn spin_z(pattern: u64, site: usize) -> f64 {
    if pattern >> site & 1 == 1 {
        0.5
    } else {
        -0.5
    }
}

pub fn build_chain(spec: &ChainSpec, n: usize) -> Result<SectorHamiltonian> {
    spec.validate()?;
    if !spec.is_connected() {
        warn!("chain has a zero coupling; it is disconnected");
    }
    let sites = spec.sites();
    let basis = enumerate_sector(sites, n)?;
    let dim = basis.dim();
    let mut matrix = CMatrix::zeros(dim, dim);
    for (k, &s) in basis.states().iter().enumerate() {
        let mut diag = 0.0;
        for (i, &b) in spec.fields.iter().enumerate() {
            diag += b * spin_z(s, i);
        }
        for (i, &j) in spec.couplings.iter().enumerate() {
            if spec.model == Model::Heisenberg {
                diag += 2.0 * j * spin_z(s, i) * spin_z(s, i + 1);
            }
            let pair = 0b11u64 << i;
            let bits = s & pair;
            if bits != 0 && bits != pair && j != 0.0 {
                let target = s ^ pair;
                let t = basis
                    .index_of(target)
                    .expect("hopping preserves the excitation number");
                matrix[(t, k)] += C64::new(j, 0.0);
            }
        }
        matrix[(k, k)] += C64::new(diag, 0.0);
    }
    Ok(SectorHamiltonian { basis, matrix })
}

/// Eigendecomposition of a Hermitian sector matrix.
#[derive(Clone, Debug)]
pub struct Spectrum {
    /// Ascending eigenvalues.
    pub eigenvalues: DVector<f64>,
    /// Orthonormal eigenvectors as columns, in eigenvalue order.
    pub eigenvectors: CMatrix,
}

impl Spectrum {
    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    /// `V diag(f(E)) V†`.
    pub fn apply_function(&self, f: impl Fn(f64) -> C64) -> CMatrix {
        let v = &self.eigenvectors;
        let mut scaled = v.clone();
        for (mut col, &e) in scaled.column_iter_mut().zip(self.eigenvalues.iter()) {
            col *= f(e);
        }
        scaled * v.adjoint()
    }
}

pub fn diagonalize(h: &CMatrix) -> Result<Spectrum> {
    if !h.is_square() {
        return Err(Error::Contract(format!(
            "matrix is {}x{}, not square",
            h.nrows(),
            h.ncols()
        )));
    }
    let asym = max_abs(&(h - h.adjoint()));
    if asym > HERMITIAN_TOL {
        return Err(Error::Contract(format!(
            "matrix is not Hermitian (max |H - H†| = {asym:e})"
        )));
    }
    let dim = h.nrows();
    if dim == 0 {
        return Ok(Spectrum {
            eigenvalues: DVector::zeros(0),
            eigenvectors: CMatrix::zeros(0, 0),
        });
    }
    let sym = (h + h.adjoint()) * C64::new(0.5, 0.0);
    let eig = SymmetricEigen::new(sym);
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let eigenvalues = DVector::from_iterator(dim, order.iter().map(|&i| eig.eigenvalues[i]));
    let eigenvectors = DMatrix::from_fn(dim, dim, |r, c| eig.eigenvectors[(r, order[c])]);
    let spectrum = Spectrum {
        eigenvalues,
        eigenvectors,
    };
    let residual = max_abs(&(spectrum.apply_function(|e| C64::new(e, 0.0)) - h));
    if residual > RECONSTRUCTION_TOL {
        return Err(Error::Numerical {
            message: format!("eigendecomposition residual {residual:e} above tolerance"),
            fallback: None,
        });
    }
    Ok(spectrum)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn xy2() -> ChainSpec {
        ChainSpec::new(SiteLayout::new(1, 0, 1).unwrap(), Model::Xy, vec![1.0]).unwrap()
    }

    #[test]
    fn single_bond_exchange() {
        let h = build_chain(&xy2(), 1).unwrap();
        assert_eq!(h.matrix.nrows(), 2);
        assert_eq!(h.matrix[(0, 1)], C64::new(1.0, 0.0));
        assert_eq!(h.matrix[(1, 0)], C64::new(1.0, 0.0));
        assert_eq!(h.matrix[(0, 0)], C64::new(0.0, 0.0));
        assert_eq!(h.matrix[(1, 1)], C64::new(0.0, 0.0));
    }

    #[test]
    fn vacuum_sector_is_diagonal_energy() {
        let spec = ChainSpec::new(
            SiteLayout::new(1, 1, 1).unwrap(),
            Model::Heisenberg,
            vec![1.0, 2.0],
        )
        .unwrap()
        .with_fields(vec![0.2, 0.4, 0.6])
        .unwrap();
        let h = build_chain(&spec, 0).unwrap();
        assert_eq!(h.matrix.nrows(), 1);
        // fields: -(0.2+0.4+0.6)/2; zz: 2*(1+2)/4
        assert_abs_diff_eq!(h.matrix[(0, 0)].re, -0.6 + 1.5, epsilon = 1e-15);
    }

    #[test]
    fn layout_mismatch_rejected() {
        let l = SiteLayout::new(1, 1, 1).unwrap();
        assert!(ChainSpec::new(l, Model::Xy, vec![1.0]).is_err());
        assert!(ChainSpec::new(l, Model::Xy, vec![1.0, f64::NAN]).is_err());
    }

    #[test]
    fn disconnected_chain_builds() {
        let spec =
            ChainSpec::new(SiteLayout::new(1, 1, 1).unwrap(), Model::Xy, vec![1.0, 0.0]).unwrap();
        assert!(!spec.is_connected());
        assert!(build_chain(&spec, 1).is_ok());
    }

    #[test]
    fn random_chain_determinism() {
        let l = SiteLayout::new(1, 4, 1).unwrap();
        let a = random_chain(l, Model::Heisenberg, (0.5, 1.5), 1).unwrap();
        let b = random_chain(l, Model::Heisenberg, (0.5, 1.5), 1).unwrap();
        let c = random_chain(l, Model::Heisenberg, (0.5, 1.5), 2).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.couplings, c.couplings);
        assert!(a.couplings.iter().all(|&j| (0.5..=1.5).contains(&j)));
        let flat =
            random_chain(SiteLayout::new(1, 2, 1).unwrap(), Model::Xy, (1.0, 1.0), 7).unwrap();
        assert_eq!(flat.couplings, vec![1.0; 3]);
        assert!(random_chain(l, Model::Xy, (0.0, 1.0), 1).is_err());
        assert!(random_chain(l, Model::Xy, (-1.0, 1.0), 1).is_err());
    }

    #[test]
    fn pauli_x_spectrum() {
        let h = build_chain(&xy2(), 1).unwrap();
        let s = diagonalize(&h.matrix).unwrap();
        assert_abs_diff_eq!(s.eigenvalues[0], -1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(s.eigenvalues[1], 1.0, epsilon = 1e-14);
    }

    #[test]
    fn one_by_one() {
        let m = CMatrix::from_element(1, 1, C64::new(3.5, 0.0));
        let s = diagonalize(&m).unwrap();
        assert_eq!(s.eigenvalues[0], 3.5);
        assert_abs_diff_eq!(s.eigenvectors[(0, 0)].norm(), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn random_hermitian_reconstructs() {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let a = CMatrix::from_fn(6, 6, |_, _| {
            C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
        });
        let h = &a + a.adjoint();
        let s = diagonalize(&h).unwrap();
        assert!(s.eigenvalues.as_slice().windows(2).all(|w| w[0] <= w[1]));
        let back = s.apply_function(|e| C64::new(e, 0.0));
        assert!(max_abs(&(back - &h)) <= RECONSTRUCTION_TOL);
        let gram = s.eigenvectors.adjoint() * &s.eigenvectors;
        assert!(max_abs(&(gram - CMatrix::identity(6, 6))) < 1e-12);
    }

    #[test]
    fn non_hermitian_rejected() {
        let mut m = CMatrix::zeros(2, 2);
        m[(0, 1)] = C64::new(1.0, 0.0);
        assert!(matches!(diagonalize(&m), Err(Error::Contract(_))));
    }

    #[test]
    fn mirror_chain_couplings() {
        let spec = mirror_chain(SiteLayout::new(1, 4, 1).unwrap(), 1.0).unwrap();
        assert_abs_diff_eq!(spec.couplings[0], 5f64.sqrt());
        assert_abs_diff_eq!(spec.couplings[2], 3.0);
        assert_eq!(spec.couplings[0], spec.couplings[4]);
    }
}
