//! Fixed-excitation-number bases of spin-1/2 sites.
//!
//! A basis state is a bit pattern: bit `i` set means site `i` is spin up
//! (carries an excitation). Site 0 is Alice's first spin and is the least
//! significant bit, so the chain reads A, then C, then B from the low bits up.
//! Within a sector the states are kept in increasing integer order.

use std::collections::BTreeMap;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};

/// Largest number of sites a [`SectorBasis`] may span.
pub const MAX_SITES: usize = 24;

/// Partition of a chain into Alice's block A, the connecting block C and Bob's block B.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SiteLayout {
    pub n_a: usize,
    pub n_c: usize,
    pub n_b: usize,
}

impl SiteLayout {
    pub fn new(n_a: usize, n_c: usize, n_b: usize) -> Result<Self> {
        let layout = Self { n_a, n_c, n_b };
        layout.validate()?;
        Ok(layout)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_a == 0 || self.n_b == 0 {
            return domain(format!(
                "layout needs n_a >= 1 and n_b >= 1 (got n_a={}, n_b={})",
                self.n_a, self.n_b
            ));
        }
        if self.total() > MAX_SITES {
            return domain(format!(
                "chain of {} sites exceeds the cap of {MAX_SITES}",
                self.total()
            ));
        }
        Ok(())
    }

    /// Total chain length N.
    pub fn total(&self) -> usize {
        self.n_a + self.n_c + self.n_b
    }

    pub fn alice(&self) -> Range<usize> {
        0..self.n_a
    }

    pub fn connector(&self) -> Range<usize> {
        self.n_a..self.n_a + self.n_c
    }

    pub fn bob(&self) -> Range<usize> {
        self.n_a + self.n_c..self.total()
    }

    pub fn bob_mask(&self) -> u64 {
        range_mask(self.bob())
    }

    pub fn alice_mask(&self) -> u64 {
        range_mask(self.alice())
    }
}

fn range_mask(r: Range<usize>) -> u64 {
    r.fold(0, |m, i| m | (1u64 << i))
}

/// Canonically ordered basis of all weight-`n` patterns on `site_count` sites.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SectorBasis {
    site_count: usize,
    excitations: usize,
    states: Vec<u64>,
}

impl SectorBasis {
    pub fn site_count(&self) -> usize {
        self.site_count
    }

    pub fn excitations(&self) -> usize {
        self.excitations
    }

    pub fn dim(&self) -> usize {
        self.states.len()
    }

    pub fn states(&self) -> &[u64] {
        &self.states
    }

    pub fn state(&self, k: usize) -> u64 {
        self.states[k]
    }

    /// Ordinal of `pattern` in this basis, the inverse of [`SectorBasis::state`].
    pub fn index_of(&self, pattern: u64) -> Option<usize> {
        self.states.binary_search(&pattern).ok()
    }
}

/// Enumerates the `n`-excitation sector of `site_count` sites in increasing order.
pub fn enumerate_sector(site_count: usize, n: usize) -> Result<SectorBasis> {
    if site_count > MAX_SITES {
        return domain(format!("{site_count} sites exceeds the cap of {MAX_SITES}"));
    }
    if n > site_count {
        return domain(format!("{n} excitations do not fit on {site_count} sites"));
    }
    let mut states = Vec::with_capacity(binomial(site_count, n) as usize);
    if n == 0 {
        states.push(0);
    } else {
        let limit = 1u64 << site_count;
        let mut v: u64 = (1u64 << n) - 1;
        // Gosper's hack: next larger integer with the same popcount.
        while v < limit {
            states.push(v);
            let c = v & v.wrapping_neg();
            let r = v + c;
            v = (((r ^ v) >> 2) / c) | r;
        }
    }
    Ok(SectorBasis {
        site_count,
        excitations: n,
        states,
    })
}

/// Exact binomial coefficient for the small arguments used here.
pub fn binomial(n: usize, k: usize) -> u64 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u64 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u64 / (i + 1) as u64;
    }
    acc
}

/// The states of a [`SectorBasis`] grouped by their occupation of a region.
///
/// Keys are the pattern masked to the region sites. Each group lists parent
/// indices in increasing order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RegionSplit {
    region_mask: u64,
    groups: BTreeMap<u64, Vec<usize>>,
}

impl RegionSplit {
    pub fn region_mask(&self) -> u64 {
        self.region_mask
    }

    pub fn groups(&self) -> &BTreeMap<u64, Vec<usize>> {
        &self.groups
    }

    /// Parent indices of states with the region completely empty.
    pub fn empty_group(&self) -> &[usize] {
        self.groups.get(&0).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn group_sizes(&self) -> Vec<usize> {
        self.groups.values().map(Vec::len).collect()
    }
}

pub fn split_by_region(basis: &SectorBasis, region: &[usize]) -> Result<RegionSplit> {
    let mut mask = 0u64;
    for &site in region {
        if site >= basis.site_count {
            return domain(format!(
                "region site {site} out of bounds for {} sites",
                basis.site_count
            ));
        }
        mask |= 1 << site;
    }
    let mut groups: BTreeMap<u64, Vec<usize>> = BTreeMap::new();
    for (k, &s) in basis.states.iter().enumerate() {
        groups.entry(s & mask).or_default().push(k);
    }
    Ok(RegionSplit {
        region_mask: mask,
        groups,
    })
}
