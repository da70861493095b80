//! The swap-and-evolve protocol.
//!
//! Between swaps the chain evolves freely under `U(τ_i)`. At the `i`-th swap
//! Bob's block is exchanged with a fresh, all-down memory register `M_i`.
//! Memories never evolve, so a swap is a relabelling of basis patterns: the
//! B bits of each chain pattern move into register `i` and B is reset.
//!
//! The joint chain+memory state is stored as blocks keyed by the memory
//! occupation pattern. Each block holds the amplitudes of the chain part on
//! the sector basis with the remaining excitations.

use std::collections::hash_map::Entry;
use std::collections::{BTreeMap, HashMap};
use std::io::Write;

use nalgebra::SymmetricEigen;
use serde::Serialize;

use crate::error::{domain, Error, Result};
use crate::hamiltonian::ChainSpec;
use crate::linalg::{norm_sqr, op_norm, CMatrix, CVector, C64};
use crate::propagator::{build_t, SectorDynamics, MAX_DENSE_DIM, MAX_POWER};
use crate::sector_basis::{binomial, SectorBasis, SiteLayout};

/// Refuse exact simulation beyond this many stored amplitudes.
pub const MAX_AMPLITUDES: usize = 10_000_000;
/// Largest contraction block `survival_bound` will power.
pub const MAX_CONTRACTION_DIM: usize = 5_000;
/// Tolerance on the normalization of Alice's input.
pub const NORM_TOL: f64 = 1e-10;

/// Swap times `τ_1 … τ_j`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ProtocolSchedule {
    taus: Vec<f64>,
}

impl ProtocolSchedule {
    pub fn new(taus: Vec<f64>) -> Result<Self> {
        if taus.is_empty() {
            return domain("schedule needs at least one step");
        }
        if let Some(t) = taus.iter().find(|t| !(t.is_finite() && **t > 0.0)) {
            return domain(format!("swap interval {t} is not a positive finite number"));
        }
        Ok(Self { taus })
    }

    pub fn uniform(tau: f64, steps: usize) -> Result<Self> {
        Self::new(vec![tau; steps])
    }

    pub fn taus(&self) -> &[f64] {
        &self.taus
    }

    pub fn steps(&self) -> usize {
        self.taus.len()
    }

    pub fn total_time(&self) -> f64 {
        self.taus.iter().sum()
    }

    /// The first `steps` intervals.
    pub fn truncated(&self, steps: usize) -> Result<Self> {
        Self::new(self.taus[..steps.min(self.taus.len())].to_vec())
    }
}

/// Alice's input as amplitudes over her `2^{N_A}` basis patterns.
#[derive(Clone, Debug, PartialEq)]
pub struct AliceState {
    n_a: usize,
    amplitudes: CVector,
}

impl AliceState {
    /// Normalized state from amplitudes; the norm must already be 1 within [`NORM_TOL`].
    pub fn new(n_a: usize, amplitudes: CVector) -> Result<Self> {
        if n_a == 0 || n_a > 16 {
            return domain(format!("unsupported Alice block size {n_a}"));
        }
        if amplitudes.len() != 1 << n_a {
            return domain(format!(
                "Alice state needs {} amplitudes, got {}",
                1usize << n_a,
                amplitudes.len()
            ));
        }
        let norm = norm_sqr(&amplitudes);
        if (norm - 1.0).abs() > NORM_TOL {
            return domain(format!("Alice state has squared norm {norm}, expected 1"));
        }
        Ok(Self { n_a, amplitudes })
    }

    pub fn basis(n_a: usize, pattern: u64) -> Result<Self> {
        if n_a >= 64 || pattern >> n_a != 0 {
            return domain(format!(
                "pattern {pattern:b} does not fit {n_a} Alice sites"
            ));
        }
        let mut v = CVector::zeros(1 << n_a);
        v[pattern as usize] = C64::new(1.0, 0.0);
        Self::new(n_a, v)
    }

    /// `|1 1 … 1⟩_A`.
    pub fn all_up(n_a: usize) -> Result<Self> {
        Self::basis(n_a, (1u64 << n_a) - 1)
    }

    /// `|+⟩^{⊗ N_A}`.
    pub fn plus_state(n_a: usize) -> Result<Self> {
        let d = 1usize << n_a;
        let a = C64::new(1.0 / (d as f64).sqrt(), 0.0);
        Self::new(n_a, CVector::from_element(d, a))
    }

    pub fn n_a(&self) -> usize {
        self.n_a
    }

    pub fn amplitudes(&self) -> &CVector {
        &self.amplitudes
    }

    pub fn max_excitations(&self) -> usize {
        self.amplitudes
            .iter()
            .enumerate()
            .filter(|(_, a)| a.norm_sqr() > 0.0)
            .map(|(x, _)| x.count_ones() as usize)
            .max()
            .unwrap_or(0)
    }
}

/// Occupied memory sites, ascending. Site `p` belongs to register `p / N_B`
/// (registers counted from zero, so `M_i` is register `i − 1`).
#[derive(Clone, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(transparent)]
pub struct MemoryPattern(Vec<u32>);

impl MemoryPattern {
    pub fn empty() -> Self {
        Self(Vec::new())
    }

    pub fn from_sites(mut sites: Vec<u32>) -> Self {
        sites.sort_unstable();
        sites.dedup();
        Self(sites)
    }

    pub fn sites(&self) -> &[u32] {
        &self.0
    }

    pub fn weight(&self) -> usize {
        self.0.len()
    }

    fn with_register(&self, register: usize, n_b: usize, b_bits: u64) -> Self {
        let mut sites = self.0.clone();
        for k in 0..n_b {
            if b_bits >> k & 1 == 1 {
                sites.push((register * n_b + k) as u32);
            }
        }
        // New registers always sit above every earlier one.
        debug_assert!(sites.windows(2).all(|w| w[0] < w[1]));
        Self(sites)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct BlockKey {
    /// Total excitations in chain plus memory.
    pub excitations: usize,
    pub memory: MemoryPattern,
}

impl BlockKey {
    pub fn chain_excitations(&self) -> usize {
        self.excitations - self.memory.weight()
    }
}

/// The chain+memory state `W_j |ψ 0 0 0⟩`.
///
/// Amplitudes whose chain part is all-down only pick up the vacuum phase
/// from then on, so they are stored once, in a frame rotating with it.
#[derive(Clone, Debug)]
pub struct JointState {
    step: usize,
    /// Blocks with at least one excitation left in the chain.
    blocks: BTreeMap<BlockKey, CVector>,
    /// Memory amplitudes with an all-down chain, divided by `phase`.
    settled: BTreeMap<MemoryPattern, C64>,
    settled_norm_sqr: f64,
    /// Accumulated phase of the all-down chain state.
    phase: C64,
}

impl JointState {
    pub fn step(&self) -> usize {
        self.step
    }

    /// Blocks that still hold excitations in the chain.
    pub fn blocks(&self) -> &BTreeMap<BlockKey, CVector> {
        &self.blocks
    }

    pub fn amplitude_count(&self) -> usize {
        self.blocks.values().map(|v| v.len()).sum::<usize>() + self.settled.len()
    }

    pub fn norm_sqr(&self) -> f64 {
        self.blocks.values().map(norm_sqr).sum::<f64>()
            + self.settled.values().map(|a| a.norm_sqr()).sum::<f64>()
    }

    /// Probability that the chain holds exactly `m` excitations.
    pub fn chain_weight_probability(&self, m: usize) -> f64 {
        if m == 0 {
            return self.settled_norm_sqr;
        }
        self.blocks
            .iter()
            .filter(|(k, _)| k.chain_excitations() == m)
            .map(|(_, v)| norm_sqr(v))
            .sum()
    }

    /// Probability that the chain is in the all-down state.
    pub fn chain_vacuum_probability(&self) -> f64 {
        self.settled_norm_sqr
    }

    /// Probability of at least `n` excitations left in the chain.
    pub fn at_least(&self, n: usize) -> f64 {
        let active: f64 = self
            .blocks
            .iter()
            .filter(|(k, _)| k.chain_excitations() >= n)
            .map(|(_, v)| norm_sqr(v))
            .sum();
        if n == 0 {
            active + self.settled_norm_sqr
        } else {
            active
        }
    }

    pub fn expected_chain_excitations(&self) -> f64 {
        self.blocks
            .iter()
            .map(|(k, v)| k.chain_excitations() as f64 * norm_sqr(v))
            .sum()
    }

    /// Memory amplitudes with the chain projected onto the all-down state,
    /// i.e. the finite-step truncation of the transferred memory state.
    pub fn memory_state(&self) -> BTreeMap<MemoryPattern, C64> {
        self.settled
            .iter()
            .map(|(p, &a)| (p.clone(), a * self.phase))
            .collect()
    }

    /// Every amplitude as `(chain pattern, memory pattern, amplitude)`.
    pub fn components<'a>(
        &'a self,
        engine: &'a ChainEngine,
    ) -> impl Iterator<Item = (u64, &'a MemoryPattern, C64)> + 'a {
        let active = self.blocks.iter().flat_map(move |(k, v)| {
            let basis = engine.basis(k.chain_excitations());
            v.iter()
                .enumerate()
                .map(move |(i, &a)| (basis.state(i), &k.memory, a))
        });
        let settled = self
            .settled
            .iter()
            .map(move |(p, &a)| (0, p, a * self.phase));
        active.chain(settled)
    }
}

/// Per-step observables, sampled just after the swap.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StepRecord {
    pub step: usize,
    pub tau: f64,
    /// Probability that the chain is fully de-excited.
    pub success_prob: f64,
    /// Worst-case recovery fidelity over all inputs with the polar decoder.
    pub fidelity_bound: f64,
    /// `P_n` for `n = 1 … N_A`: at least `n` excitations left in A+C.
    pub occupation: Vec<f64>,
    /// Expected excitations left in A+C.
    pub chain_excitations: f64,
    /// Expected excitations in B just before the swap.
    pub b_occupancy_before_swap: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrajectoryRecord {
    pub n_a: usize,
    pub steps: Vec<StepRecord>,
}

/// 17 significant digits, no locale.
pub fn format_float(x: f64) -> String {
    format!("{x:.16e}")
}

impl TrajectoryRecord {
    pub fn header(&self) -> Vec<String> {
        let mut h: Vec<String> = ["step", "tau_i", "success_prob", "fidelity_bound"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        h.extend((1..=self.n_a).map(|n| format!("P_{n}")));
        h.push("chain_excitation_expectation".into());
        h.push("B_occupancy_before_swap".into());
        h
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let csv_err = |e: csv::Error| Error::Io(std::io::Error::other(e));
        out.write_record(self.header()).map_err(csv_err)?;
        for s in &self.steps {
            let mut row = vec![
                s.step.to_string(),
                format_float(s.tau),
                format_float(s.success_prob),
                format_float(s.fidelity_bound),
            ];
            row.extend(s.occupation.iter().map(|&p| format_float(p)));
            row.push(format_float(s.chain_excitations));
            row.push(format_float(s.b_occupancy_before_swap));
            out.write_record(&row).map_err(csv_err)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn final_step(&self) -> Option<&StepRecord> {
        self.steps.last()
    }
}

/// Diagonalized sectors `0 … n_max` of one chain, shared read-only by every
/// run on that chain.
#[derive(Clone, Debug)]
pub struct ChainEngine {
    spec: ChainSpec,
    sectors: Vec<SectorDynamics>,
}

/// `U_m(τ)` for each sector held by an engine.
pub type SectorUnitaries = Vec<CMatrix>;

impl ChainEngine {
    /// Engine able to evolve up to `n_max` excitations.
    pub fn new(spec: &ChainSpec, n_max: usize) -> Result<Self> {
        spec.validate()?;
        if n_max > spec.sites() {
            return domain(format!(
                "{n_max} excitations do not fit on {} sites",
                spec.sites()
            ));
        }
        if let Some(n) = (0..=n_max).find(|&n| binomial(spec.sites(), n) > MAX_DENSE_DIM as u64) {
            return Err(Error::Resource(format!(
                "exact simulation needs the dense sector n={n} of dimension {} (cap {MAX_DENSE_DIM}); \
                 use survival-bound mode instead",
                binomial(spec.sites(), n)
            )));
        }
        let sectors = (0..=n_max)
            .map(|n| SectorDynamics::new(spec, n))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            spec: spec.clone(),
            sectors,
        })
    }

    /// Engine for every input Alice can prepare.
    pub fn for_alice(spec: &ChainSpec) -> Result<Self> {
        Self::new(spec, spec.layout.n_a)
    }

    pub fn spec(&self) -> &ChainSpec {
        &self.spec
    }

    pub fn layout(&self) -> &SiteLayout {
        &self.spec.layout
    }

    pub fn max_excitations(&self) -> usize {
        self.sectors.len() - 1
    }

    pub fn basis(&self, m: usize) -> &SectorBasis {
        self.sectors[m].basis()
    }

    pub fn sector(&self, m: usize) -> &SectorDynamics {
        &self.sectors[m]
    }

    pub fn unitaries(&self, tau: f64) -> Result<SectorUnitaries> {
        self.sectors
            .iter()
            .map(|s| s.evolve(tau).map(|u| u.matrix))
            .collect()
    }

    pub fn initial_state(&self, input: &AliceState) -> Result<JointState> {
        if input.n_a() != self.layout().n_a {
            return domain(format!(
                "input is for {} Alice sites, chain has {}",
                input.n_a(),
                self.layout().n_a
            ));
        }
        if input.max_excitations() > self.max_excitations() {
            return domain("input carries more excitations than the engine holds");
        }
        let mut state = JointState {
            step: 0,
            blocks: BTreeMap::new(),
            settled: BTreeMap::new(),
            settled_norm_sqr: 0.0,
            phase: C64::new(1.0, 0.0),
        };
        for (x, &a) in input.amplitudes().iter().enumerate() {
            if a.norm_sqr() == 0.0 {
                continue;
            }
            if x == 0 {
                state.settled.insert(MemoryPattern::empty(), a);
                state.settled_norm_sqr = a.norm_sqr();
                continue;
            }
            let n = (x as u64).count_ones() as usize;
            let basis = self.basis(n);
            let key = BlockKey {
                excitations: n,
                memory: MemoryPattern::empty(),
            };
            let v = state
                .blocks
                .entry(key)
                .or_insert_with(|| CVector::zeros(basis.dim()));
            // Alice occupies the low bits, so her pattern is the chain pattern.
            v[basis.index_of(x as u64).expect("weight matches sector")] += a;
        }
        Ok(state)
    }

    /// Free evolution of every block; the result may have B occupied.
    pub fn evolve_state(&self, state: &JointState, u: &SectorUnitaries) -> JointState {
        let mut next = state.clone();
        self.evolve_in_place(&mut next, u);
        next
    }

    fn evolve_in_place(&self, state: &mut JointState, u: &SectorUnitaries) {
        for (k, v) in state.blocks.iter_mut() {
            *v = &u[k.chain_excitations()] * &*v;
        }
        state.phase *= u[0][(0, 0)];
    }

    /// Expected number of excitations in B.
    pub fn b_occupancy(&self, state: &JointState) -> f64 {
        let mask = self.layout().bob_mask();
        state
            .blocks
            .iter()
            .map(|(k, v)| {
                let basis = self.basis(k.chain_excitations());
                v.iter()
                    .enumerate()
                    .map(|(i, a)| a.norm_sqr() * (basis.state(i) & mask).count_ones() as f64)
                    .sum::<f64>()
            })
            .sum()
    }

    /// Expected B occupancy after evolving `state` by `u`, without building the result.
    pub fn b_occupancy_after(&self, state: &JointState, u: &SectorUnitaries) -> f64 {
        let mask = self.layout().bob_mask();
        state
            .blocks
            .iter()
            .map(|(k, v)| {
                let m = k.chain_excitations();
                let basis = self.basis(m);
                let w = &u[m] * v;
                w.iter()
                    .enumerate()
                    .map(|(i, a)| a.norm_sqr() * (basis.state(i) & mask).count_ones() as f64)
                    .sum::<f64>()
            })
            .sum()
    }

    /// Swap B into the next fresh register and reset B to all-down.
    pub fn swap(&self, state: &JointState) -> Result<JointState> {
        let mut next = state.clone();
        self.swap_in_place(&mut next)?;
        Ok(next)
    }

    /// Returns the memory patterns that settled in this swap.
    fn swap_in_place(&self, state: &mut JointState) -> Result<Vec<MemoryPattern>> {
        let layout = self.layout();
        let mask = layout.bob_mask();
        let b_shift = layout.n_a + layout.n_c;
        let register = state.step;
        let rotate = state.phase.conj();
        let mut blocks: BTreeMap<BlockKey, CVector> = BTreeMap::new();
        let mut fresh = Vec::new();
        for (k, v) in std::mem::take(&mut state.blocks) {
            let basis = self.basis(k.chain_excitations());
            for (i, &a) in v.iter().enumerate() {
                if a == C64::new(0.0, 0.0) {
                    continue;
                }
                let s = basis.state(i);
                let b_bits = (s & mask) >> b_shift;
                let rest = s & !mask;
                let memory = k.memory.with_register(register, layout.n_b, b_bits);
                if rest == 0 {
                    // Only one chain pattern empties into each new memory pattern.
                    let prev = state.settled.insert(memory.clone(), a * rotate);
                    debug_assert!(prev.is_none());
                    state.settled_norm_sqr += a.norm_sqr();
                    fresh.push(memory);
                    continue;
                }
                let key = BlockKey {
                    excitations: k.excitations,
                    memory,
                };
                let target = self.basis(key.chain_excitations());
                let v_new = blocks
                    .entry(key)
                    .or_insert_with(|| CVector::zeros(target.dim()));
                v_new[target.index_of(rest).expect("weight matches sector")] += a;
            }
        }
        state.blocks = blocks;
        state.step += 1;
        let amps = state.amplitude_count();
        if amps > MAX_AMPLITUDES {
            return Err(Error::Resource(format!(
                "exact simulation needs {amps} amplitudes (cap {MAX_AMPLITUDES}); \
                 use survival-bound mode instead"
            )));
        }
        Ok(fresh)
    }

    /// One protocol step in place; returns the pre-swap B occupancy.
    pub fn step(&self, state: &mut JointState, u: &SectorUnitaries) -> Result<f64> {
        Ok(self.advance(state, u)?.0)
    }

    fn advance(
        &self,
        state: &mut JointState,
        u: &SectorUnitaries,
    ) -> Result<(f64, Vec<MemoryPattern>)> {
        self.evolve_in_place(state, u);
        let occ = self.b_occupancy(state);
        let fresh = self.swap_in_place(state)?;
        Ok((occ, fresh))
    }
}

/// Caches `U_m(τ)` by the bit pattern of `τ`.
#[derive(Default)]
struct UnitaryCache(HashMap<u64, SectorUnitaries>);

impl UnitaryCache {
    fn get<'a>(&'a mut self, engine: &ChainEngine, tau: f64) -> Result<&'a SectorUnitaries> {
        match self.0.entry(tau.to_bits()) {
            Entry::Occupied(e) => Ok(e.into_mut()),
            Entry::Vacant(e) => Ok(e.insert(engine.unitaries(tau)?)),
        }
    }
}

/// Result of an exact run.
#[derive(Clone, Debug)]
pub struct Simulation {
    pub state: JointState,
    pub record: TrajectoryRecord,
    pub transfer_map: TransferMap,
}

/// Runs the protocol on `input`, together with the `2^{N_A}` basis inputs
/// that define the transfer map and the per-step worst-case bound.
pub fn simulate_with_engine(
    engine: &ChainEngine,
    schedule: &ProtocolSchedule,
    input: &AliceState,
) -> Result<Simulation> {
    let n_a = engine.layout().n_a;
    let mut cache = UnitaryCache::default();
    let mut state = engine.initial_state(input)?;
    let mut columns = basis_states(engine)?;
    let mut steps = Vec::with_capacity(schedule.steps());
    let mut gram = transfer_gram(&columns, None);
    for &tau in schedule.taus() {
        let u = cache.get(engine, tau)?;
        let occ = engine.step(&mut state, u)?;
        let mut fresh = Vec::new();
        for c in columns.iter_mut() {
            fresh.extend(engine.advance(c, u)?.1);
        }
        fresh.sort_unstable();
        fresh.dedup();
        gram += transfer_gram(&columns, Some(&fresh));
        steps.push(StepRecord {
            step: state.step,
            tau,
            success_prob: state.chain_vacuum_probability(),
            fidelity_bound: smallest_eigenvalue(&gram).clamp(0.0, 1.0),
            occupation: (1..=n_a).map(|n| state.at_least(n)).collect(),
            chain_excitations: state.expected_chain_excitations(),
            b_occupancy_before_swap: occ,
        });
    }
    let transfer_map = TransferMap::from_columns(&columns, schedule.steps(), engine.layout().n_b);
    Ok(Simulation {
        state,
        record: TrajectoryRecord { n_a, steps },
        transfer_map,
    })
}

pub fn simulate(
    spec: &ChainSpec,
    schedule: &ProtocolSchedule,
    input: &AliceState,
) -> Result<Simulation> {
    simulate_with_engine(&ChainEngine::for_alice(spec)?, schedule, input)
}

fn basis_states(engine: &ChainEngine) -> Result<Vec<JointState>> {
    let n_a = engine.layout().n_a;
    (0..1u64 << n_a)
        .map(|x| engine.initial_state(&AliceState::basis(n_a, x)?))
        .collect()
}

/// `K† K` summed over `patterns`, or over every settled pattern.
///
/// All basis runs share the vacuum phase, so the rotating frame cancels.
fn transfer_gram(columns: &[JointState], patterns: Option<&[MemoryPattern]>) -> CMatrix {
    let d = columns.len();
    let mut g = CMatrix::zeros(d, d);
    let mut add = |p: &MemoryPattern| {
        let amps: Vec<C64> = columns
            .iter()
            .map(|c| c.settled.get(p).copied().unwrap_or_default())
            .collect();
        for x in 0..d {
            for y in 0..d {
                g[(x, y)] += amps[x].conj() * amps[y];
            }
        }
    };
    match patterns {
        Some(ps) => ps.iter().for_each(&mut add),
        None => {
            let all: std::collections::BTreeSet<&MemoryPattern> =
                columns.iter().flat_map(|c| c.settled.keys()).collect();
            all.into_iter().for_each(add);
        }
    }
    g
}

fn smallest_eigenvalue(h: &CMatrix) -> f64 {
    SymmetricEigen::new(h.clone())
        .eigenvalues
        .iter()
        .fold(f64::INFINITY, |a, &b| a.min(b))
}

/// Finite-step transfer map `K_j` from Alice's basis to memory configurations.
#[derive(Clone, Debug)]
pub struct TransferMap {
    pub step: usize,
    pub n_b: usize,
    /// Memory patterns labelling the rows, sorted by weight then sites.
    pub rows: Vec<MemoryPattern>,
    /// `rows × 2^{N_A}`; column `x` is the memory state of `W_j |x 0 0 0⟩`
    /// with the chain projected onto all-down.
    pub matrix: CMatrix,
}

impl TransferMap {
    fn from_columns(columns: &[JointState], step: usize, n_b: usize) -> Self {
        let mem: Vec<BTreeMap<MemoryPattern, C64>> =
            columns.iter().map(JointState::memory_state).collect();
        let mut rows: Vec<MemoryPattern> = mem
            .iter()
            .flat_map(|m| m.keys().cloned())
            .collect::<std::collections::BTreeSet<_>>()
            .into_iter()
            .collect();
        rows.sort_by(|a, b| (a.weight(), a).cmp(&(b.weight(), b)));
        let index: HashMap<&MemoryPattern, usize> =
            rows.iter().enumerate().map(|(i, p)| (p, i)).collect();
        let mut matrix = CMatrix::zeros(rows.len(), columns.len());
        for (x, m) in mem.iter().enumerate() {
            for (p, &a) in m {
                matrix[(index[p], x)] = a;
            }
        }
        Self {
            step,
            n_b,
            rows,
            matrix,
        }
    }

    pub fn column_norms_sqr(&self) -> Vec<f64> {
        self.matrix
            .column_iter()
            .map(|c| c.iter().map(|z| z.norm_sqr()).sum())
            .collect()
    }

    /// `‖K† K − I‖` in operator norm.
    pub fn isometry_defect(&self) -> f64 {
        let d = self.matrix.ncols();
        op_norm(&(self.matrix.adjoint() * &self.matrix - CMatrix::identity(d, d)))
    }
}

pub fn transfer_map(spec: &ChainSpec, schedule: &ProtocolSchedule) -> Result<TransferMap> {
    let engine = ChainEngine::for_alice(spec)?;
    transfer_map_with_engine(&engine, schedule)
}

pub fn transfer_map_with_engine(
    engine: &ChainEngine,
    schedule: &ProtocolSchedule,
) -> Result<TransferMap> {
    let mut cache = UnitaryCache::default();
    let mut columns = basis_states(engine)?;
    for &tau in schedule.taus() {
        let u = cache.get(engine, tau)?;
        for c in columns.iter_mut() {
            engine.step(c, u)?;
        }
    }
    Ok(TransferMap::from_columns(
        &columns,
        schedule.steps(),
        engine.layout().n_b,
    ))
}

#[derive(Clone, Debug)]
pub struct RecoveryMetrics {
    /// Descending, padded with zeros up to the number of inputs.
    pub singular_values: Vec<f64>,
    /// `σ_min²`: lower bound on `|⟨ψ| R K |ψ⟩|²` over normalized inputs.
    pub worst_case_fidelity_bound: f64,
    /// Polar isometry factor `U V†` of `K = U Σ V†`.
    pub decoder: CMatrix,
}

pub fn recovery_metrics(k: &TransferMap) -> RecoveryMetrics {
    let m = &k.matrix;
    let cols = m.ncols();
    if m.nrows() == 0 {
        return RecoveryMetrics {
            singular_values: vec![0.0; cols],
            worst_case_fidelity_bound: 0.0,
            decoder: m.clone(),
        };
    }
    let svd = m.clone().svd(true, true);
    let u = svd.u.expect("requested U");
    let v_t = svd.v_t.expect("requested V†");
    let decoder = u * v_t;
    let mut singular_values: Vec<f64> = svd.singular_values.iter().copied().collect();
    singular_values.resize(cols, 0.0);
    let s_min = singular_values.last().copied().unwrap_or(0.0);
    RecoveryMetrics {
        singular_values,
        worst_case_fidelity_bound: s_min * s_min,
        decoder,
    }
}

/// Closed-form recovery fidelity `η_j` for one qubit (`N_A = N_B = 1`), `j ∈ {1, 2}`.
pub fn eta_direct(spec: &ChainSpec, tau: f64, j: usize) -> Result<f64> {
    let layout = spec.layout;
    if layout.n_a != 1 || layout.n_b != 1 {
        return domain("closed-form fidelities need N_A = N_B = 1");
    }
    if !(1..=2).contains(&j) {
        return domain(format!("closed forms exist only for j = 1, 2 (got {j})"));
    }
    let u = SectorDynamics::new(spec, 1)?.evolve(tau)?.matrix;
    // In the one-excitation sector, the state with site `l` up has index `l`.
    let bob = layout.total() - 1;
    let eta1 = u[(bob, 0)].norm_sqr();
    if j == 1 {
        return Ok(eta1);
    }
    let path: C64 = (0..bob).map(|l| u[(bob, l)] * u[(l, 0)]).sum();
    Ok(eta1 + path.norm_sqr())
}

/// `Q_n(j) = ‖T_n^j‖²`: the largest probability that a state with `n`
/// excitations in A+C keeps all of them for `j` uniform steps.
///
/// Returns exactly 1 for `n = 0` and 0 when A+C cannot hold `n` excitations.
pub fn survival_bound(spec: &ChainSpec, tau: f64, n: usize, j: usize) -> Result<f64> {
    Ok(survival_curve(spec, tau, n, j)?[j])
}

/// `Q_n(0) … Q_n(j)`.
pub fn survival_curve(spec: &ChainSpec, tau: f64, n: usize, j: usize) -> Result<Vec<f64>> {
    if n > spec.sites() {
        return domain(format!(
            "{n} excitations do not fit on {} sites",
            spec.sites()
        ));
    }
    if j > MAX_POWER {
        return domain(format!("step count {j} exceeds the cap of {MAX_POWER}"));
    }
    if n == 0 {
        return Ok(vec![1.0; j + 1]);
    }
    let free = spec.layout.n_a + spec.layout.n_c;
    if n > free {
        return Ok(vec![0.0; j + 1]);
    }
    let dim = binomial(free, n) as usize;
    if dim > MAX_CONTRACTION_DIM {
        return Err(Error::Resource(format!(
            "contraction of dimension {dim} exceeds the cap of {MAX_CONTRACTION_DIM}"
        )));
    }
    let t = build_t(&SectorDynamics::new(spec, n)?.evolve(tau)?, &spec.layout)?;
    t.power_norms_sqr(j)
}
