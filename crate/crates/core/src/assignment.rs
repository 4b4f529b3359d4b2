//! Rectangular linear assignment (Hungarian / shortest augmenting path).
//!
//! Among all optimal assignments the solver returns the lexicographically
//! smallest list of `(row, col)` pairs. This is done by running the
//! algorithm over ordered pairs `(cost, tie)` where `tie` encodes the row by
//! row column choice as the digits of a base-`(n+1)` integer, so exact float
//! ties are resolved by the integer part and nothing else changes.

use alloc::vec::Vec;
use core::cmp::Ordering;
use core::ops::{Add, Sub};

use nalgebra::DMatrix;

#[derive(Debug, Clone, Copy, PartialEq)]
struct Key {
    cost: f64,
    tie: i128,
}

impl Key {
    const INF: Key = Key { cost: f64::INFINITY, tie: 0 };
    const ZERO: Key = Key { cost: 0.0, tie: 0 };

    fn lt(&self, other: &Key) -> bool {
        match self.cost.partial_cmp(&other.cost) {
            Some(Ordering::Less) => true,
            Some(Ordering::Equal) => self.cost.is_finite() && self.tie < other.tie,
            _ => false,
        }
    }
}

impl Add for Key {
    type Output = Key;
    fn add(self, o: Key) -> Key {
        Key { cost: self.cost + o.cost, tie: self.tie.wrapping_add(o.tie) }
    }
}

impl Sub for Key {
    type Output = Key;
    fn sub(self, o: Key) -> Key {
        Key { cost: self.cost - o.cost, tie: self.tie.wrapping_sub(o.tie) }
    }
}

/// Per-row weights `(n+1)^(m−1−i)` of the tie-break encoding, or `None` when
/// the encoding would not fit in an `i128` (more than ~25 rows).
fn tie_weights(rows: usize, cols: usize) -> Option<Vec<i128>> {
    let base = cols as i128 + 1;
    let mut weights = alloc::vec![0i128; rows];
    let mut w: i128 = 1;
    for i in (0..rows).rev() {
        weights[i] = w;
        w = w.checked_mul(base)?;
    }
    // headroom for the intermediate potentials
    w.checked_mul(4 * (rows + cols + 1) as i128)?;
    Some(weights)
}

/// Minimum-cost one-to-one assignment of size `min(m, n)`.
///
/// Entries must be non-negative; `+∞` entries are treated as forbidden edges
/// and replaced by a cost larger than any feasible assignment. The result is
/// sorted by row.
pub fn hungarian(cost: &DMatrix<f64>) -> Vec<(usize, usize)> {
    let (m, n) = cost.shape();
    if m == 0 || n == 0 {
        return Vec::new();
    }
    debug_assert!(cost.iter().all(|c| !c.is_nan()), "NaN in cost matrix");

    let finite_max = cost.iter().filter(|c| c.is_finite()).fold(0.0f64, |a, b| a.max(*b));
    let forbidden = (finite_max + 1.0) * (m.min(n) as f64 + 1.0);
    let weights = tie_weights(m, n);
    let key = |i: usize, j: usize| {
        let c = cost[(i, j)];
        let tie = weights.as_ref().map_or(0, |w| (j as i128 - n as i128) * w[i]);
        Key { cost: if c.is_finite() { c } else { forbidden }, tie }
    };

    if m <= n {
        solve(m, n, key)
    } else {
        let mut pairs: Vec<(usize, usize)> = solve(n, m, |i, j| key(j, i)).into_iter().map(|(c, r)| (r, c)).collect();
        pairs.sort_unstable();
        pairs
    }
}

/// Shortest augmenting path with potentials; requires `rows <= cols`.
fn solve(rows: usize, cols: usize, a: impl Fn(usize, usize) -> Key) -> Vec<(usize, usize)> {
    // 1-based, index 0 is the virtual source column
    let mut u = alloc::vec![Key::ZERO; rows + 1];
    let mut v = alloc::vec![Key::ZERO; cols + 1];
    let mut p = alloc::vec![0usize; cols + 1];
    let mut way = alloc::vec![0usize; cols + 1];

    for i in 1..=rows {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = alloc::vec![Key::INF; cols + 1];
        let mut used = alloc::vec![false; cols + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = Key::INF;
            let mut j1 = 0;
            for j in 1..=cols {
                if used[j] {
                    continue;
                }
                let cur = a(i0 - 1, j - 1) - u[i0] - v[j];
                if cur.lt(&minv[j]) {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j].lt(&delta) {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=cols {
                if used[j] {
                    u[p[j]] = u[p[j]] + delta;
                    v[j] = v[j] - delta;
                } else {
                    minv[j] = minv[j] - delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut pairs: Vec<(usize, usize)> = (1..=cols).filter(|j| p[*j] != 0).map(|j| (p[j] - 1, j - 1)).collect();
    pairs.sort_unstable();
    pairs
}

/// Sum of the assigned entries, accumulated in row order.
pub fn assignment_cost(cost: &DMatrix<f64>, pairs: &[(usize, usize)]) -> f64 {
    pairs.iter().map(|(i, j)| cost[(*i, *j)]).sum()
}
