//! Convergence certificates and time-scale analysis.
//!
//! The protocol drains every excitation from A+C exactly when each projected
//! evolution `T_n` has spectral radius below one. That fails precisely when
//! some eigenstate of the sector Hamiltonian has no weight on Bob's block.

use log::warn;
use nalgebra::{Schur, SymmetricEigen};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{domain, Error, Result};
use crate::hamiltonian::ChainSpec;
use crate::linalg::{op_norm, CMatrix, C64};
use crate::propagator::{build_t, SectorDynamics};
use crate::protocol::{AliceState, ChainEngine, ProtocolSchedule, TrajectoryRecord};
use crate::sector_basis::{split_by_region, SiteLayout};

/// Default threshold on the B-weight of an eigenstate.
pub const CONDITION_TOL: f64 = 1e-10;
/// Spectral radii at or above `1 − DEGENERATE_TAU_GAP` mark a degenerate τ.
pub const DEGENERATE_TAU_GAP: f64 = 1e-8;
/// Squarings used by the Gelfand estimate `‖T^{2^k}‖^{1/2^k}`.
pub const GELFAND_LEVELS: u32 = 10;
/// Required agreement between the eigenvalue and Gelfand estimates.
pub const GELFAND_AGREEMENT: f64 = 1e-6;
/// Relative gap below which Hamiltonian eigenvalues are treated as degenerate.
const DEGENERACY_REL_TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SpectralRadius {
    /// Largest eigenvalue modulus from a complex Schur decomposition.
    pub value: f64,
    /// `‖T^{2^k}‖^{1/2^k}` at `k = GELFAND_LEVELS`; always an upper estimate.
    pub gelfand: f64,
    /// Whether the two estimates agree within [`GELFAND_AGREEMENT`].
    /// Slowly converging Gelfand sequences of non-normal matrices clear this flag.
    pub agrees: bool,
}

/// Gelfand estimate of the spectral radius with per-squaring renormalization,
/// so that tiny radii do not underflow.
pub fn gelfand_estimate(m: &CMatrix, levels: u32) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    let mut log_scale = 0.0;
    let mut p = m.clone();
    let n0 = op_norm(&p);
    if n0 == 0.0 {
        return 0.0;
    }
    p /= C64::new(n0, 0.0);
    log_scale += n0.ln();
    for _ in 0..levels {
        // p = T^{2^k} / exp(log_scale), ‖p‖ = 1
        let sq = &p * &p;
        let s = op_norm(&sq);
        if s == 0.0 {
            return 0.0;
        }
        log_scale = 2.0 * log_scale + s.ln();
        p = sq / C64::new(s, 0.0);
    }
    (log_scale / 2f64.powi(levels as i32)).exp()
}

pub fn spectral_radius(m: &CMatrix) -> Result<SpectralRadius> {
    if !m.is_square() {
        return domain(format!("{}x{} matrix is not square", m.nrows(), m.ncols()));
    }
    if m.is_empty() {
        return Ok(SpectralRadius {
            value: 0.0,
            gelfand: 0.0,
            agrees: true,
        });
    }
    let gelfand = gelfand_estimate(m, GELFAND_LEVELS);
    let dim = m.nrows();
    let schur = Schur::try_new(m.clone(), f64::EPSILON, 1000 * dim.max(10)).ok_or_else(|| {
        Error::Numerical {
            message: "Schur iteration did not converge".into(),
            fallback: Some(gelfand),
        }
    })?;
    let (_, t) = schur.unpack();
    // The complex Schur form is upper triangular; its diagonal holds the eigenvalues.
    let value = (0..dim).map(|i| t[(i, i)].norm()).fold(0.0, f64::max);
    Ok(SpectralRadius {
        value,
        gelfand,
        agrees: (value - gelfand).abs() <= GELFAND_AGREEMENT,
    })
}

/// Eigenvalues of a general complex matrix (diagonal of its Schur form).
pub fn eigenvalues(m: &CMatrix) -> Result<Vec<C64>> {
    let dim = m.nrows();
    let schur =
        Schur::try_new(m.clone(), f64::EPSILON, 1000 * dim.max(10)).ok_or(Error::Numerical {
            message: "Schur iteration did not converge".into(),
            fallback: None,
        })?;
    let (_, t) = schur.unpack();
    Ok((0..dim).map(|i| t[(i, i)]).collect())
}

/// Factorization check for one excitation sector.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConditionReport {
    pub n: usize,
    pub tol: f64,
    pub violated: bool,
    /// Smallest B-weight over all eigenstates (minimized within each
    /// degenerate eigenspace).
    pub worst_b_weight: f64,
    /// Energy of the eigenspace attaining `worst_b_weight`.
    pub worst_energy: f64,
    /// Energy of a factorizing eigenstate, when one exists.
    pub offending_energy: Option<f64>,
}

/// Looks for eigenstates of `H_n` of the form `|λ⟩_{AC} ⊗ |0⟩_B`.
pub fn check_condition(spec: &ChainSpec, n: usize, tol: f64) -> Result<ConditionReport> {
    if n == 0 || n > spec.sites() {
        return domain(format!(
            "sector {n} outside 1..={} for the condition check",
            spec.sites()
        ));
    }
    let sector = SectorDynamics::new(spec, n)?;
    let basis = sector.basis();
    let bob: Vec<usize> = spec.layout.bob().collect();
    let split = split_by_region(basis, &bob)?;
    let occupied: Vec<usize> = split
        .groups()
        .iter()
        .filter(|(k, _)| **k != 0)
        .flat_map(|(_, idx)| idx.iter().copied())
        .collect();

    let e = &sector.spectrum.eigenvalues;
    let v = &sector.spectrum.eigenvectors;
    let scale = e.iter().fold(1.0f64, |a, x| a.max(x.abs()));
    let mut worst = (f64::INFINITY, 0.0);
    let mut start = 0;
    while start < e.len() {
        let mut end = start + 1;
        while end < e.len() && e[end] - e[end - 1] <= DEGENERACY_REL_TOL * scale {
            end += 1;
        }
        // Smallest B-weight over the eigenspace: min eigenvalue of V† P_B V.
        let k = end - start;
        let mut gram = CMatrix::zeros(k, k);
        for &r in &occupied {
            for a in 0..k {
                for b in 0..k {
                    gram[(a, b)] += v[(r, start + a)].conj() * v[(r, start + b)];
                }
            }
        }
        let w = SymmetricEigen::new(gram)
            .eigenvalues
            .iter()
            .fold(f64::INFINITY, |a, &x| a.min(x))
            .clamp(0.0, 1.0);
        if w < worst.0 {
            worst = (w, e[start]);
        }
        start = end;
    }
    let violated = worst.0 < tol;
    Ok(ConditionReport {
        n,
        tol,
        violated,
        worst_b_weight: worst.0,
        worst_energy: worst.1,
        offending_energy: violated.then_some(worst.1),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TauPoint {
    pub tau: f64,
    pub rho: f64,
    /// `ρ ≥ 1 − DEGENERATE_TAU_GAP`: this τ does not certify convergence.
    pub flagged: bool,
}

/// `ρ(T_n)` over a grid of swap intervals.
pub fn scan_tau(spec: &ChainSpec, n: usize, grid: &[f64]) -> Result<Vec<TauPoint>> {
    if grid.is_empty() {
        return domain("tau grid is empty");
    }
    if let Some(t) = grid.iter().find(|t| !(t.is_finite() && **t > 0.0)) {
        return domain(format!("tau grid value {t} is not positive"));
    }
    let sector = SectorDynamics::new(spec, n)?;
    grid.par_iter()
        .map(|&tau| {
            let t = build_t(&sector.evolve(tau)?, &spec.layout)?;
            let rho = match spectral_radius(&t.matrix) {
                Ok(r) => r.value,
                Err(Error::Numerical {
                    fallback: Some(g), ..
                }) => {
                    warn!("eigenvalue iteration failed at tau={tau}; using Gelfand estimate");
                    g
                }
                Err(e) => return Err(e),
            };
            Ok(TauPoint {
                tau,
                rho,
                flagged: rho >= 1.0 - DEGENERATE_TAU_GAP,
            })
        })
        .collect()
}

/// Grid values left unflagged by every scan (all scans on the same grid).
pub fn common_unflagged(scans: &[Vec<TauPoint>]) -> Vec<f64> {
    let Some(first) = scans.first() else {
        return Vec::new();
    };
    (0..first.len())
        .filter(|&i| scans.iter().all(|s| !s[i].flagged))
        .map(|i| first[i].tau)
        .collect()
}

/// `n` evenly spaced points on `[lo, hi]`.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..n)
            .map(|k| lo + (hi - lo) * k as f64 / (n - 1) as f64)
            .collect(),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TransitTime {
    /// Time of maximal B occupancy on the sampled grid.
    pub t_e: f64,
    pub peak_occupancy: f64,
    /// The maximum sits on the last grid point, so `t_max` may be too short.
    pub at_boundary: bool,
}

/// Arrival time at Bob's block of a single excitation injected at site 0.
pub fn estimate_te(spec: &ChainSpec, t_max: f64, dt: f64) -> Result<TransitTime> {
    if !(t_max > 0.0 && t_max.is_finite()) || !(dt > 0.0 && dt.is_finite()) {
        return domain(format!("need t_max > 0 and dt > 0 (got {t_max}, {dt})"));
    }
    let sector = SectorDynamics::new(spec, 1)?;
    let v = &sector.spectrum.eigenvectors;
    let e = &sector.spectrum.eigenvalues;
    let bob: Vec<usize> = spec.layout.bob().collect();
    // Site l carries index l in the one-excitation basis.
    let overlap: Vec<C64> = (0..e.len()).map(|c| v[(0, c)].conj()).collect();
    let samples = (t_max / dt + 1e-9).floor() as usize;
    if samples == 0 {
        return domain("t_max is shorter than one time step");
    }
    let mut best = (0usize, -1.0);
    for k in 1..=samples {
        let t = k as f64 * dt;
        let occ: f64 = bob
            .iter()
            .map(|&b| {
                (0..e.len())
                    .map(|c| v[(b, c)] * C64::from_polar(1.0, -e[c] * t) * overlap[c])
                    .sum::<C64>()
                    .norm_sqr()
            })
            .sum();
        if occ > best.1 {
            best = (k, occ);
        }
    }
    if best.1 < 1e-12 {
        return Err(Error::Analysis(
            "no excitation reaches Bob's block; the chain looks disconnected".into(),
        ));
    }
    let at_boundary = best.0 == samples;
    if at_boundary {
        warn!("B occupancy still rising at t_max={t_max}; transit time is a lower estimate");
    }
    Ok(TransitTime {
        t_e: best.0 as f64 * dt,
        peak_occupancy: best.1,
        at_boundary,
    })
}

/// Geometric decay model of the excitations left in A+C.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TimescaleModel {
    pub transit_time: f64,
    /// Per-step ratio fitted to the expected A+C excitations.
    pub fitted_rate: f64,
    /// Fitted excitations at step 0.
    pub fitted_initial: f64,
    /// `1 − N_B / N`.
    pub model_rate: f64,
    pub points_used: usize,
    pub n: usize,
    pub n_a: usize,
    pub n_b: usize,
}

impl TimescaleModel {
    /// `(1 − N_B/N)^j N_A`.
    pub fn predicted_excitations(&self, j: usize) -> f64 {
        self.model_rate.powi(j as i32) * self.n_a as f64
    }

    /// `1 − (1 − N_B/N)^j N_A`.
    pub fn fidelity_lower_bound(&self, j: usize) -> f64 {
        1.0 - self.predicted_excitations(j)
    }

    /// `N T_e (ln N_A + |ln(1 − F)|) / N_B`.
    pub fn time_to_fidelity(&self, fidelity: f64) -> f64 {
        self.n as f64 * self.transit_time * ((self.n_a as f64).ln() + (1.0 - fidelity).ln().abs())
            / self.n_b as f64
    }
}

/// Least-squares fit of `ln ⟨n_{AC}⟩` against the step index.
pub fn fit_decay(
    record: &TrajectoryRecord,
    layout: &SiteLayout,
    transit_time: f64,
) -> Result<TimescaleModel> {
    let points: Vec<(f64, f64)> = record
        .steps
        .iter()
        .map(|s| (s.step as f64, s.chain_excitations))
        .take_while(|(_, y)| *y > 0.0 && y.is_finite())
        .map(|(x, y)| (x, y.ln()))
        .collect();
    if points.len() < 2 {
        return Err(Error::Analysis(format!(
            "decay fit needs two positive points, got {}",
            points.len()
        )));
    }
    let m = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / m;
    let my = points.iter().map(|p| p.1).sum::<f64>() / m;
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let slope = sxy / sxx;
    let fitted_rate = slope.exp();
    if !(fitted_rate > 0.0 && fitted_rate < 1.0) {
        return Err(Error::Analysis(format!(
            "fitted decay rate {fitted_rate} is not in (0, 1)"
        )));
    }
    Ok(TimescaleModel {
        transit_time,
        fitted_rate,
        fitted_initial: (my - slope * mx).exp(),
        model_rate: 1.0 - layout.n_b as f64 / layout.total() as f64,
        points_used: points.len(),
        n: layout.total(),
        n_a: layout.n_a,
        n_b: layout.n_b,
    })
}

/// Greedy swap times: each step picks the grid τ in `window` that maximizes
/// the expected B occupancy just before the swap, ties going to the smaller τ.
pub fn optimize_schedule(
    engine: &ChainEngine,
    input: &AliceState,
    steps: usize,
    window: (f64, f64),
    grid_points: usize,
) -> Result<ProtocolSchedule> {
    let (lo, hi) = window;
    if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
        return domain(format!("tau window [{lo}, {hi}] needs 0 < lo <= hi"));
    }
    if steps == 0 {
        return domain("schedule needs at least one step");
    }
    if lo == hi {
        return ProtocolSchedule::uniform(lo, steps);
    }
    if grid_points < 2 {
        return domain("optimizer needs at least two grid points");
    }
    let grid = linspace(lo, hi, grid_points);
    let unitaries = grid
        .par_iter()
        .map(|&t| engine.unitaries(t))
        .collect::<Result<Vec<_>>>()?;
    let mut state = engine.initial_state(input)?;
    let mut taus = Vec::with_capacity(steps);
    for _ in 0..steps {
        let occupancy: Vec<f64> = unitaries
            .par_iter()
            .map(|u| engine.b_occupancy_after(&state, u))
            .collect();
        let mut best = 0;
        for (k, &occ) in occupancy.iter().enumerate() {
            if occ > occupancy[best] {
                best = k;
            }
        }
        taus.push(grid[best]);
        engine.step(&mut state, &unitaries[best])?;
    }
    ProtocolSchedule::new(taus)
}
