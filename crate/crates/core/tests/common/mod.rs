//! Independent reference implementations on the full tensor-product space.
//!
//! Nothing here uses the sector machinery of the library: Hamiltonians come
//! from Kronecker products of Pauli matrices, exponentials from a Taylor
//! series with scaling and squaring, and the protocol from explicit bit swaps
//! on a state vector that holds the chain and every memory register.

#![allow(dead_code)]

use memxfer::hamiltonian::{ChainSpec, Model};
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64 as C64;

pub type M = DMatrix<C64>;
pub type V = DVector<C64>;

pub fn c(re: f64) -> C64 {
    C64::new(re, 0.0)
}

fn pauli(which: char) -> M {
    let z = c(0.0);
    let i = C64::new(0.0, 1.0);
    // Basis order: |0⟩ = down, |1⟩ = up.
    match which {
        'x' => M::from_row_slice(2, 2, &[z, c(1.0), c(1.0), z]),
        'y' => M::from_row_slice(2, 2, &[z, -i, i, z]),
        'z' => M::from_row_slice(2, 2, &[c(-1.0), z, z, c(1.0)]),
        _ => M::identity(2, 2),
    }
}

/// `σ^a` on `site` of `n`; site 0 is the least significant bit.
pub fn site_op(which: char, site: usize, n: usize) -> M {
    let mut out = M::identity(1, 1);
    for s in (0..n).rev() {
        let f = if s == site { pauli(which) } else { pauli('1') };
        out = out.kronecker(&f);
    }
    out
}

/// Full `2^N × 2^N` chain Hamiltonian.
pub fn full_hamiltonian(spec: &ChainSpec) -> M {
    let n = spec.sites();
    let dim = 1 << n;
    let mut h = M::zeros(dim, dim);
    for (i, &j) in spec.couplings.iter().enumerate() {
        let mut bond = site_op('x', i, n) * site_op('x', i + 1, n)
            + site_op('y', i, n) * site_op('y', i + 1, n);
        if spec.model == Model::Heisenberg {
            bond += site_op('z', i, n) * site_op('z', i + 1, n);
        }
        h += bond * c(j / 2.0);
    }
    for (i, &b) in spec.fields.iter().enumerate() {
        h += site_op('z', i, n) * c(b / 2.0);
    }
    h
}

/// Induced 1-norm (largest column sum).
fn norm_1(a: &M) -> f64 {
    a.column_iter()
        .map(|c| c.iter().map(|z| z.norm()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// `exp(a)` by Taylor series with scaling and squaring.
pub fn expm(a: &M) -> M {
    let mut squarings = 0;
    while norm_1(a) / 2f64.powi(squarings) > 0.5 {
        squarings += 1;
    }
    let scaled = a / c(2f64.powi(squarings));
    let dim = a.nrows();
    let mut term = M::identity(dim, dim);
    let mut sum = term.clone();
    for k in 1..60 {
        term = &term * &scaled / c(k as f64);
        sum += &term;
        if norm_1(&term) < 1e-18 {
            break;
        }
    }
    for _ in 0..squarings {
        sum = &sum * &sum;
    }
    sum
}

/// `exp(-i H τ)` on the full space.
///
/// The chain Hamiltonians are real, so `cos(Hτ)` and `sin(Hτ)` are summed
/// and squared in real arithmetic; complex `H` falls back to [`expm`].
pub fn full_unitary(spec: &ChainSpec, tau: f64) -> M {
    let h = full_hamiltonian(spec);
    if h.iter().any(|z| z.im != 0.0) {
        return expm(&(h * C64::new(0.0, -tau)));
    }
    let a = h.map(|z| z.re * tau);
    let norm = a
        .column_iter()
        .map(|col| col.iter().map(|x| x.abs()).sum::<f64>())
        .fold(0.0, f64::max);
    let mut squarings = 0;
    while norm / 2f64.powi(squarings) > 0.5 {
        squarings += 1;
    }
    let a = a / 2f64.powi(squarings);
    let dim = a.nrows();
    // exp(-i a) = Σ (-i)^k a^k / k!: even k feed cos, odd k feed -sin.
    let mut cos = DMatrix::<f64>::identity(dim, dim);
    let mut sin = DMatrix::<f64>::zeros(dim, dim);
    let mut term = DMatrix::<f64>::identity(dim, dim);
    for k in 1..60 {
        term = &term * &a / k as f64;
        let sign = if (k / 2) % 2 == 0 { 1.0 } else { -1.0 };
        if k % 2 == 0 {
            cos += &term * sign;
        } else {
            sin += &term * sign;
        }
        if term.amax() < 1e-18 {
            break;
        }
    }
    // (C - iS)² = C² - S² - i (CS + SC).
    for _ in 0..squarings {
        let cc = &cos * &cos - &sin * &sin;
        let ss = &cos * &sin + &sin * &cos;
        cos = cc;
        sin = ss;
    }
    M::from_fn(dim, dim, |i, j| C64::new(cos[(i, j)], -sin[(i, j)]))
}

/// Rows and columns of `m` selected by `keep`, in increasing index order.
pub fn restrict(m: &M, keep: impl Fn(usize) -> bool) -> M {
    let idx: Vec<usize> = (0..m.nrows()).filter(|&i| keep(i)).collect();
    M::from_fn(idx.len(), idx.len(), |r, s| m[(idx[r], idx[s])])
}

/// Joint chain-plus-memory state after each step of a brute-force run.
pub struct BruteStep {
    pub success_prob: f64,
    /// `P_n`, `n = 1 … N_A`: at least `n` excitations left in A+C.
    pub occupation: Vec<f64>,
    pub chain_excitations: f64,
    pub b_occupancy_before_swap: f64,
    /// Amplitudes over `2^{N + N_B j}`; the chain holds the low `N` bits and
    /// register `i` (from 1) holds bits `N + (i - 1) N_B … N + i N_B - 1`.
    pub state: V,
}

fn swap_bits(x: usize, a: usize, b: usize) -> usize {
    if (x >> a & 1) != (x >> b & 1) {
        x ^ (1 << a) ^ (1 << b)
    } else {
        x
    }
}

/// Runs the protocol with every memory register allocated up front.
pub fn brute_protocol(spec: &ChainSpec, taus: &[f64], input: &[C64]) -> Vec<BruteStep> {
    let l = spec.layout;
    let n = l.total();
    let mem = l.n_b * taus.len();
    let dim = 1usize << (n + mem);
    let chain_dim = 1usize << n;
    assert_eq!(input.len(), 1 << l.n_a);
    let mut psi = V::zeros(dim);
    for (x, &a) in input.iter().enumerate() {
        psi[x] = a;
    }
    let free_mask = (1usize << (l.n_a + l.n_c)) - 1;
    let bob_mask = (chain_dim - 1) & !free_mask;
    let mut out = Vec::new();
    for (step, &tau) in taus.iter().enumerate() {
        let u = full_unitary(spec, tau);
        let blocks = M::from_column_slice(chain_dim, dim / chain_dim, psi.as_slice());
        let evolved = &u * blocks;
        psi = V::from_column_slice(evolved.as_slice());
        let b_occ: f64 = (0..dim)
            .map(|x| ((x & bob_mask).count_ones() as f64) * psi[x].norm_sqr())
            .sum();
        let mut next = V::zeros(dim);
        for x in 0..dim {
            let mut y = x;
            for k in 0..l.n_b {
                y = swap_bits(y, l.n_a + l.n_c + k, n + step * l.n_b + k);
            }
            next[y] = psi[x];
        }
        psi = next;
        let weight = |x: usize| (x & (chain_dim - 1)).count_ones() as usize;
        let mut occupation = vec![0.0; l.n_a];
        let mut success = 0.0;
        let mut excitations = 0.0;
        for x in 0..dim {
            let p = psi[x].norm_sqr();
            let w = weight(x);
            if w == 0 {
                success += p;
            }
            excitations += w as f64 * p;
            for (k, o) in occupation.iter_mut().enumerate() {
                if w > k {
                    *o += p;
                }
            }
        }
        out.push(BruteStep {
            success_prob: success,
            occupation,
            chain_excitations: excitations,
            b_occupancy_before_swap: b_occ,
            state: psi.clone(),
        });
    }
    out
}

/// `K[mem, x]`: memory amplitudes with the chain projected onto all-down,
/// for each of Alice's basis inputs `x`. Rows are indexed by the memory bits.
pub fn brute_transfer_map(spec: &ChainSpec, taus: &[f64]) -> M {
    let l = spec.layout;
    let n = l.total();
    let mem_dim = 1usize << (l.n_b * taus.len());
    let inputs = 1usize << l.n_a;
    let mut k = M::zeros(mem_dim, inputs);
    for x in 0..inputs {
        let mut e = vec![c(0.0); inputs];
        e[x] = c(1.0);
        let last = brute_protocol(spec, taus, &e).pop().unwrap();
        for m in 0..mem_dim {
            k[(m, x)] = last.state[m << n];
        }
    }
    k
}

/// Smallest singular value squared of `k`, zero when it has fewer rows than columns.
pub fn sigma_min_sqr(k: &M) -> f64 {
    let e = nalgebra::SymmetricEigen::new(k.adjoint() * k);
    e.eigenvalues
        .iter()
        .map(|z| z.max(0.0))
        .fold(f64::INFINITY, f64::min)
}
