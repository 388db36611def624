//! Partitioning around medoids and the exclusion radius derived from it.
//!
//! [`KMedoids`] runs a greedy BUILD initialization followed by the classic
//! best-improvement swap loop: while some (medoid, non-medoid) exchange
//! strictly lowers the total distance to the nearest medoid, perform the
//! exchange that lowers it most. Swap gains are accumulated for all medoids
//! of a candidate in one pass over the units, so an iteration costs
//! O(n (n - k)) distance evaluations instead of O(k n (n - k)).

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::PointSet;
use crate::rng::{self, tag};
use crate::scalar::Real;

/// Output of k-medoids: a partition of the units into `k` nonempty clusters,
/// each unit attached to (the lowest-indexed of) its nearest medoid(s).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Clustering<F = f64> {
    medoids: Vec<usize>,
    assignment: Vec<usize>,
    radii: Vec<F>,
    cost: F,
    swaps: usize,
}

impl<F: Real> Clustering<F> {
    /// Attach every unit to its nearest medoid. Cluster `j` is the cluster of
    /// `medoids[j]`.
    pub fn from_medoids(ps: &PointSet<F>, medoids: &[usize]) -> Result<Self> {
        if medoids.is_empty() {
            return Err(Error::EmptyMedoids);
        }
        for &m in medoids {
            ps.check_id(m)?;
        }
        let mut sorted = medoids.to_vec();
        sorted.sort_unstable();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::param("medoids", "duplicate medoid id"));
        }

        let k = medoids.len();
        let mut assignment = Vec::with_capacity(ps.len());
        let mut radii = vec![F::zero(); k];
        let mut cost = F::zero();
        for i in 0..ps.len() {
            let (j, d) = nearest(ps, i, medoids);
            // a medoid coincident with another medoid still owns itself
            let j = medoids.iter().position(|&m| m == i).unwrap_or(j);
            let d = if medoids[j] == i { F::zero() } else { d };
            assignment.push(j);
            radii[j] = radii[j].max(d);
            cost += d;
        }
        Ok(Clustering {
            medoids: medoids.to_vec(),
            assignment,
            radii,
            cost,
            swaps: 0,
        })
    }

    pub fn k(&self) -> usize {
        self.medoids.len()
    }

    pub fn n(&self) -> usize {
        self.assignment.len()
    }

    pub fn medoids(&self) -> &[usize] {
        &self.medoids
    }

    pub fn assignment(&self) -> &[usize] {
        &self.assignment
    }

    #[inline]
    pub fn cluster_of(&self, i: usize) -> usize {
        self.assignment[i]
    }

    /// `R_j`: the largest distance from a member of cluster `j` to its medoid.
    pub fn radii(&self) -> &[F] {
        &self.radii
    }

    pub fn cost(&self) -> F {
        self.cost
    }

    /// Number of swaps performed by the optimizer (0 for hand-built clusterings).
    pub fn swaps(&self) -> usize {
        self.swaps
    }

    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.k()];
        for (i, &j) in self.assignment.iter().enumerate() {
            out[j].push(i);
        }
        out
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut out = vec![0; self.k()];
        for &j in &self.assignment {
            out[j] += 1;
        }
        out
    }

    /// True when no single (medoid, non-medoid) exchange lowers the cost by
    /// more than `rel_tol * cost`. Exhaustive; intended for verification.
    pub fn is_swap_stable(&self, ps: &PointSet<F>, rel_tol: F) -> bool {
        let tol = rel_tol * self.cost.max(F::min_positive_value());
        let mut trial = self.medoids.clone();
        for l in 0..self.k() {
            for o in 0..ps.len() {
                if self.medoids.contains(&o) {
                    continue;
                }
                trial[l] = o;
                let c = medoid_cost_unchecked(ps, &trial);
                if c < self.cost - tol {
                    return false;
                }
            }
            trial[l] = self.medoids[l];
        }
        true
    }
}

#[inline]
fn nearest<F: Real>(ps: &PointSet<F>, i: usize, medoids: &[usize]) -> (usize, F) {
    let mut best = (0, ps.dist(i, medoids[0]));
    for (j, &m) in medoids.iter().enumerate().skip(1) {
        let d = ps.dist(i, m);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

fn medoid_cost_unchecked<F: Real>(ps: &PointSet<F>, medoids: &[usize]) -> F {
    (0..ps.len()).map(|i| nearest(ps, i, medoids).1).sum()
}

/// Total distance from every unit to its nearest medoid.
pub fn medoid_cost<F: Real>(ps: &PointSet<F>, medoids: &[usize]) -> Result<F> {
    if medoids.is_empty() {
        return Err(Error::EmptyMedoids);
    }
    for &m in medoids {
        ps.check_id(m)?;
    }
    Ok(medoid_cost_unchecked(ps, medoids))
}

/// Configuration for partitioning around medoids.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KMedoids {
    pub k: usize,
    /// Breaks ties between equally good BUILD candidates.
    pub seed: u64,
    /// Swap cap; defaults to `10 * k * n`.
    pub max_swaps: Option<usize>,
}

impl KMedoids {
    pub fn new(k: usize, seed: u64) -> Self {
        KMedoids {
            k,
            seed,
            max_swaps: None,
        }
    }

    fn validate<F: Real>(&self, ps: &PointSet<F>) -> Result<()> {
        if self.k < 1 || self.k > ps.len() {
            return Err(Error::InvalidK { k: self.k, n: ps.len() });
        }
        Ok(())
    }

    /// Greedy BUILD: repeatedly add the unit whose addition lowers the cost
    /// most. Equal candidates are ranked by a seeded permutation.
    pub fn build<F: Real>(&self, ps: &PointSet<F>) -> Result<Vec<usize>> {
        self.validate(ps)?;
        let n = ps.len();
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng::stream(self.seed, tag::BUILD, &[n as u64, self.k as u64]));

        let mut medoids = Vec::with_capacity(self.k);
        let mut is_medoid = vec![false; n];
        let mut near = vec![F::infinity(); n];
        for _ in 0..self.k {
            let gains: Vec<F> = (0..n)
                .into_par_iter()
                .map(|c| {
                    if is_medoid[c] {
                        return F::infinity();
                    }
                    (0..n).map(|i| near[i].min(ps.dist(i, c))).sum()
                })
                .collect();
            let mut best: Option<(usize, F)> = None;
            for &c in &order {
                if is_medoid[c] {
                    continue;
                }
                if best.is_none_or(|(_, b)| gains[c] < b) {
                    best = Some((c, gains[c]));
                }
            }
            let (c, _) = best.expect("k <= n leaves a candidate");
            is_medoid[c] = true;
            medoids.push(c);
            for (i, d) in near.iter_mut().enumerate() {
                *d = d.min(ps.dist(i, c));
            }
        }
        Ok(medoids)
    }

    pub fn fit<F: Real>(&self, ps: &PointSet<F>) -> Result<Clustering<F>> {
        self.fit_traced(ps).map(|(c, _)| c)
    }

    /// Like [`fit`](Self::fit), also returning the cost after BUILD and after
    /// every swap.
    pub fn fit_traced<F: Real>(&self, ps: &PointSet<F>) -> Result<(Clustering<F>, Vec<F>)> {
        let medoids = self.build(ps)?;
        self.swap_phase(ps, medoids)
    }

    /// Run the swap loop from a given initial medoid set.
    pub fn fit_from<F: Real>(&self, ps: &PointSet<F>, initial: &[usize]) -> Result<(Clustering<F>, Vec<F>)> {
        self.validate(ps)?;
        if initial.len() != self.k {
            return Err(Error::KMismatch {
                expected: self.k,
                found: initial.len(),
            });
        }
        // validates ids and duplicates
        Clustering::from_medoids(ps, initial)?;
        self.swap_phase(ps, initial.to_vec())
    }

    fn swap_phase<F: Real>(&self, ps: &PointSet<F>, mut medoids: Vec<usize>) -> Result<(Clustering<F>, Vec<F>)> {
        let n = ps.len();
        let k = self.k;
        let cap = self.max_swaps.unwrap_or(10 * k * n);
        let mut state = SwapState::new(ps, &medoids);
        let mut trace = vec![state.cost];
        let mut swaps = 0;

        loop {
            let mut is_medoid = vec![false; n];
            for &m in &medoids {
                is_medoid[m] = true;
            }
            let best = (0..n)
                .into_par_iter()
                .filter(|&o| !is_medoid[o])
                .map(|o| state.best_removal_for(ps, &medoids, o))
                .reduce_with(|a, b| if b.better_than(&a) { b } else { a });
            let Some(best) = best else { break };
            if !(best.delta < F::zero()) {
                break;
            }
            let mut trial = medoids.clone();
            trial[best.slot] = best.candidate;
            let next = SwapState::new(ps, &trial);
            // the accumulated gain can disagree with the exact sum in the last ulp
            if !(next.cost < state.cost) {
                break;
            }
            if swaps == cap {
                return Err(Error::IterationCap { cap });
            }
            medoids = trial;
            state = next;
            trace.push(state.cost);
            swaps += 1;
        }

        medoids.sort_unstable();
        let mut clustering = Clustering::from_medoids(ps, &medoids)?;
        clustering.swaps = swaps;
        Ok((clustering, trace))
    }
}

/// Partition `ps` into `k` clusters with BUILD + best-improvement swaps.
pub fn k_medoids<F: Real>(ps: &PointSet<F>, k: usize, seed: u64) -> Result<Clustering<F>> {
    KMedoids::new(k, seed).fit(ps)
}

struct SwapState<F> {
    near_slot: Vec<usize>,
    near: Vec<F>,
    second: Vec<F>,
    cost: F,
}

struct SwapCandidate<F> {
    delta: F,
    medoid: usize,
    candidate: usize,
    slot: usize,
}

impl<F: Real> SwapCandidate<F> {
    /// Larger gain wins; ties go to the lowest (medoid id, candidate id).
    fn better_than(&self, other: &Self) -> bool {
        if self.delta != other.delta {
            return self.delta < other.delta;
        }
        (self.medoid, self.candidate) < (other.medoid, other.candidate)
    }
}

impl<F: Real> SwapState<F> {
    fn new(ps: &PointSet<F>, medoids: &[usize]) -> Self {
        let n = ps.len();
        let mut near_slot = vec![0; n];
        let mut near = vec![F::infinity(); n];
        let mut second = vec![F::infinity(); n];
        for i in 0..n {
            for (slot, &m) in medoids.iter().enumerate() {
                let d = ps.dist(i, m);
                if d < near[i] {
                    second[i] = near[i];
                    near[i] = d;
                    near_slot[i] = slot;
                } else if d < second[i] {
                    second[i] = d;
                }
            }
        }
        let cost = near.iter().copied().sum();
        SwapState {
            near_slot,
            near,
            second,
            cost,
        }
    }

    /// Cost change of swapping each medoid out for `o`; returns the best.
    fn best_removal_for(&self, ps: &PointSet<F>, medoids: &[usize], o: usize) -> SwapCandidate<F> {
        let mut shared = F::zero();
        let mut own = vec![F::zero(); medoids.len()];
        for i in 0..ps.len() {
            let d = ps.dist(i, o);
            let keep = (d - self.near[i]).min(F::zero());
            shared += keep;
            own[self.near_slot[i]] += d.min(self.second[i]) - self.near[i] - keep;
        }
        let mut best: Option<SwapCandidate<F>> = None;
        for (slot, &m) in medoids.iter().enumerate() {
            let cand = SwapCandidate {
                delta: shared + own[slot],
                medoid: m,
                candidate: o,
                slot,
            };
            if best.as_ref().is_none_or(|b| cand.better_than(b)) {
                best = Some(cand);
            }
        }
        best.expect("at least one medoid")
    }
}

/// Sample median; the mean of the two middle order statistics for even length.
pub fn median<F: Real>(values: &[F]) -> Option<F> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).expect("median of NaN"));
    let mid = v.len() / 2;
    Some(if v.len() % 2 == 1 {
        v[mid]
    } else {
        (v[mid - 1] + v[mid]) / F::of(2.0)
    })
}

/// Default multiplier applied to the median cluster radius.
pub const DEFAULT_RADIUS_MULTIPLIER: f64 = 0.5;

/// `r_n = multiplier * median(R_j)`.
pub fn exclusion_radius<F: Real>(c: &Clustering<F>, multiplier: F) -> F {
    multiplier * median(c.radii()).expect("clustering has k >= 1")
}
