//! Multi-index combinatorics, Hermite/Wick polynomial evaluation, Gaussian
//! scenario panels, and truncated Brownian path reconstruction.

use crate::basis::TimeBasis;
use crate::error::{Error, Result};
use crate::rng::{self, stream};
use alloc::collections::BTreeMap;
use alloc::vec::Vec;

/// Largest index-set cardinality `enumerate_indices` accepts.
pub const MAX_INDEX_SET: u128 = 10_000_000;

/// Probabilists' Hermite polynomial `h_n(s)` by the three-term recurrence
/// `h_{n+1}(s) = s h_n(s) - n h_{n-1}(s)` with `h_0 = 1`, `h_1(s) = s`.
pub fn hermite(n: u32, s: f64) -> f64 {
    match n {
        0 => 1.0,
        1 => s,
        _ => {
            let mut prev = 1.0;
            let mut cur = s;
            for k in 1..n {
                let next = s * cur - k as f64 * prev;
                prev = cur;
                cur = next;
            }
            cur
        }
    }
}

/// Sparse chaos-expansion label `alpha = (alpha_{i,j})` with finite total degree.
///
/// Keys are 1-based `(i, j)` positions; only strictly positive degrees are stored.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MultiIndex {
    entries: BTreeMap<(usize, usize), u32>,
    degree: u32,
}

impl MultiIndex {
    /// The zero index (constant chaos mode).
    pub fn zero() -> Self {
        MultiIndex { entries: BTreeMap::new(), degree: 0 }
    }

    /// The unit index `epsilon(i, j)` with a single degree-one entry.
    pub fn unit(i: usize, j: usize) -> Result<Self> {
        Self::from_entries([((i, j), 1)])
    }

    pub fn from_entries<E>(entries: E) -> Result<Self>
    where
        E: IntoIterator<Item = ((usize, usize), u32)>,
    {
        let mut map = BTreeMap::new();
        let mut degree: u32 = 0;
        for ((i, j), deg) in entries {
            if i == 0 || j == 0 {
                return Err(Error::InvalidParameter { what: "multi-index positions are 1-based" });
            }
            if deg == 0 {
                continue;
            }
            if map.insert((i, j), deg).is_some() {
                return Err(Error::InvalidParameter { what: "duplicate multi-index position" });
            }
            degree += deg;
        }
        Ok(MultiIndex { entries: map, degree })
    }

    /// Total degree `|alpha|`.
    pub fn degree(&self) -> u32 {
        self.degree
    }

    pub fn is_zero(&self) -> bool {
        self.degree == 0
    }

    /// Stored `(i, j) -> degree` entries in ascending position order.
    pub fn entries(&self) -> impl Iterator<Item = (usize, usize, u32)> + '_ {
        self.entries.iter().map(|(&(i, j), &d)| (i, j, d))
    }

    /// `alpha! = prod alpha_{i,j}!` with a 64-bit overflow guard.
    pub fn factorial(&self) -> Result<u64> {
        let mut acc: u64 = 1;
        for (_, _, d) in self.entries() {
            for k in 2..=d as u64 {
                acc = acc.checked_mul(k).ok_or(Error::Overflow { what: "multi-index factorial" })?;
            }
        }
        Ok(acc)
    }

    /// Largest Brownian coordinate `i` with a nonzero entry (0 for the zero index).
    pub fn max_i(&self) -> usize {
        self.entries.keys().map(|&(i, _)| i).max().unwrap_or(0)
    }

    /// Largest basis position `j` with a nonzero entry (0 for the zero index).
    pub fn max_j(&self) -> usize {
        self.entries.keys().map(|&(_, j)| j).max().unwrap_or(0)
    }

    fn flat_degrees(&self, i_count: usize, j_count: usize) -> Vec<u32> {
        let mut v = alloc::vec![0u32; i_count * j_count];
        for (i, j, d) in self.entries() {
            v[(i - 1) * j_count + (j - 1)] = d;
        }
        v
    }
}

fn binomial(n: u64, k: u64) -> Option<u128> {
    let k = k.min(n - k.min(n));
    let mut acc: u128 = 1;
    for s in 0..k {
        acc = acc.checked_mul((n - s) as u128)?;
        acc /= (s + 1) as u128;
    }
    Some(acc)
}

/// Cardinality `(IJ+K)! / ((IJ)! K!)` of the truncated index set.
pub fn index_set_cardinality(i_count: usize, j_count: usize, order: u32) -> Result<u128> {
    let slots = (i_count as u64) * (j_count as u64);
    binomial(slots + order as u64, order as u64).ok_or(Error::Overflow { what: "index-set cardinality" })
}

/// All multi-indices supported on `{1..I} x {1..J}` with total degree `<= K`,
/// in graded lexicographic order (by `|alpha|`, then lexicographic on the
/// row-major flattened degree vector).
pub fn enumerate_indices(i_count: usize, j_count: usize, order: u32) -> Result<Vec<MultiIndex>> {
    if i_count == 0 || j_count == 0 {
        return Err(Error::InvalidParameter { what: "truncation I and J must be positive" });
    }
    let card = index_set_cardinality(i_count, j_count, order)?;
    if card > MAX_INDEX_SET {
        return Err(Error::Overflow { what: "index-set cardinality exceeds limit" });
    }
    let slots = i_count * j_count;
    let mut out = Vec::with_capacity(card as usize);
    let mut degrees = alloc::vec![0u32; slots];
    for k in 0..=order {
        emit_compositions(&mut degrees, 0, k, i_count, j_count, &mut out);
    }
    debug_assert_eq!(out.len() as u128, card);
    Ok(out)
}

fn emit_compositions(
    degrees: &mut [u32],
    slot: usize,
    remaining: u32,
    i_count: usize,
    j_count: usize,
    out: &mut Vec<MultiIndex>,
) {
    if slot == degrees.len() - 1 {
        degrees[slot] = remaining;
        let entries = degrees.iter().enumerate().filter(|(_, &d)| d > 0).map(|(flat, &d)| {
            let i = flat / j_count + 1;
            let j = flat % j_count + 1;
            ((i, j), d)
        });
        out.push(MultiIndex::from_entries(entries).expect("valid enumeration entries"));
        degrees[slot] = 0;
        let _ = i_count;
        return;
    }
    for d in 0..=remaining {
        degrees[slot] = d;
        emit_compositions(degrees, slot + 1, remaining - d, i_count, j_count, out);
    }
    degrees[slot] = 0;
}

/// Matrix of i.i.d. standard-normal draws `xi_{i,j}(omega_m)`, the sole source
/// of randomness for one experiment. Draws are a pure function of
/// `(seed, m, i, j)` and are regenerated rather than persisted.
#[derive(Debug, Clone)]
pub struct GaussianPanel {
    i_count: usize,
    j_count: usize,
    scenarios: usize,
    seed: u64,
    draws: Vec<f64>,
}

impl GaussianPanel {
    pub fn generate(seed: u64, i_count: usize, j_count: usize, scenarios: usize) -> Result<Self> {
        if i_count == 0 || j_count == 0 || scenarios == 0 {
            return Err(Error::InvalidParameter { what: "panel dimensions must be positive" });
        }
        let mut draws = Vec::with_capacity(scenarios * i_count * j_count);
        for m in 0..scenarios {
            for i in 1..=i_count {
                for j in 1..=j_count {
                    draws.push(rng::normal(seed, stream::PANEL, rng::pack4(m, i, j, 0)));
                }
            }
        }
        Ok(GaussianPanel { i_count, j_count, scenarios, seed, draws })
    }

    pub fn i_count(&self) -> usize {
        self.i_count
    }

    pub fn j_count(&self) -> usize {
        self.j_count
    }

    pub fn scenarios(&self) -> usize {
        self.scenarios
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// `xi_{i,j}(omega_m)` with 1-based `(i, j)`.
    pub fn xi(&self, m: usize, i: usize, j: usize) -> Result<f64> {
        if m >= self.scenarios {
            return Err(Error::IndexOutOfRange { what: "scenario", index: m, limit: self.scenarios });
        }
        if i == 0 || i > self.i_count {
            return Err(Error::IndexOutOfRange { what: "panel row", index: i, limit: self.i_count });
        }
        if j == 0 || j > self.j_count {
            return Err(Error::IndexOutOfRange { what: "panel column", index: j, limit: self.j_count });
        }
        Ok(self.draws[(m * self.i_count + (i - 1)) * self.j_count + (j - 1)])
    }
}

/// Wick polynomial `xi_alpha(omega_m) = (1/sqrt(alpha!)) prod h_{alpha_{i,j}}(xi_{i,j})`.
///
/// Absent entries contribute a factor of one, so only stored degrees are touched.
pub fn wick_eval(alpha: &MultiIndex, panel: &GaussianPanel, m: usize) -> Result<f64> {
    if alpha.max_i() > panel.i_count() || alpha.max_j() > panel.j_count() {
        return Err(Error::DimensionMismatch {
            what: "multi-index support exceeds panel",
            expected: panel.i_count() * panel.j_count(),
            got: alpha.max_i() * alpha.max_j().max(1),
        });
    }
    let mut prod = 1.0;
    for (i, j, d) in alpha.entries() {
        prod *= hermite(d, panel.xi(m, i, j)?);
    }
    Ok(prod / libm::sqrt(alpha.factorial()? as f64))
}

/// Evaluates every Wick polynomial of `indices` for scenario `m`.
pub fn wick_values(indices: &[MultiIndex], panel: &GaussianPanel, m: usize) -> Result<Vec<f64>> {
    indices.iter().map(|alpha| wick_eval(alpha, panel, m)).collect()
}

/// Coordinates of the truncated Brownian reconstruction at time `t`:
/// `W^{(i)}_t approx sqrt(lambda_i) sum_j xi_{i,j} int_0^t g_j(s) ds` for `i <= I`.
pub fn brownian_path(
    panel: &GaussianPanel,
    basis: &TimeBasis,
    eigenvalues: &[f64],
    m: usize,
    t: f64,
) -> Result<Vec<f64>> {
    if eigenvalues.len() < panel.i_count() {
        return Err(Error::DimensionMismatch {
            what: "eigenvalue list shorter than panel rows",
            expected: panel.i_count(),
            got: eigenvalues.len(),
        });
    }
    if basis.count() < panel.j_count() {
        return Err(Error::DimensionMismatch {
            what: "basis count shorter than panel columns",
            expected: panel.j_count(),
            got: basis.count(),
        });
    }
    let mut integrals = Vec::with_capacity(panel.j_count());
    for j in 1..=panel.j_count() {
        integrals.push(basis.integral(j, t)?);
    }
    let mut coords = Vec::with_capacity(panel.i_count());
    for i in 1..=panel.i_count() {
        let mut acc = 0.0;
        for (j, int_j) in integrals.iter().enumerate() {
            acc += panel.xi(m, i, j + 1)? * int_j;
        }
        coords.push(libm::sqrt(eigenvalues[i - 1]) * acc);
    }
    Ok(coords)
}

impl PartialOrd for MultiIndex {
    fn partial_cmp(&self, other: &Self) -> Option<core::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for MultiIndex {
    /// Graded lexicographic: total degree first, then the flattened degree
    /// vector over the joint support bounding box.
    fn cmp(&self, other: &Self) -> core::cmp::Ordering {
        self.degree.cmp(&other.degree).then_with(|| {
            let i_count = self.max_i().max(other.max_i()).max(1);
            let j_count = self.max_j().max(other.max_j()).max(1);
            self.flat_degrees(i_count, j_count).cmp(&other.flat_degrees(i_count, j_count))
        })
    }
}
