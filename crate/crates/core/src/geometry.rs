//! Unit locations, metrics and r-neighborhoods.

use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    #[default]
    Euclidean,
    /// Sup norm.
    Chebyshev,
}

impl Metric {
    pub fn eval<F: Real>(self, a: &[F], b: &[F]) -> F {
        match self {
            Metric::Euclidean => a
                .iter()
                .zip(b)
                .map(|(&x, &y)| (x - y) * (x - y))
                .sum::<F>()
                .sqrt(),
            Metric::Chebyshev => a
                .iter()
                .zip(b)
                .map(|(&x, &y)| (x - y).abs())
                .fold(F::zero(), F::max),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VolumeMethod {
    #[default]
    BoundingBox,
}

/// An immutable set of `n >= 1` unit locations in `d` dimensions. Unit ids
/// are the dense indices `0..n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointSet<F = f64> {
    coords: Vec<F>,
    dim: usize,
    metric: Metric,
}

impl<F: Real> PointSet<F> {
    pub fn new<P: AsRef<[F]>>(points: &[P], metric: Metric) -> Result<Self> {
        let first = points.first().ok_or(Error::EmptyPointSet)?;
        let dim = first.as_ref().len();
        if dim == 0 {
            return Err(Error::param("dimension", "points need at least one coordinate"));
        }
        let mut coords = Vec::with_capacity(points.len() * dim);
        for (id, p) in points.iter().enumerate() {
            let p = p.as_ref();
            if p.len() != dim {
                return Err(Error::DimensionMismatch {
                    id,
                    expected: dim,
                    found: p.len(),
                });
            }
            if p.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFiniteCoordinate { id });
            }
            coords.extend_from_slice(p);
        }
        Ok(PointSet { coords, dim, metric })
    }

    /// Build from row-major coordinates.
    pub fn from_flat(coords: Vec<F>, dim: usize, metric: Metric) -> Result<Self> {
        if dim == 0 {
            return Err(Error::param("dimension", "points need at least one coordinate"));
        }
        if coords.is_empty() {
            return Err(Error::EmptyPointSet);
        }
        if coords.len() % dim != 0 {
            return Err(Error::DimensionMismatch {
                id: coords.len() / dim,
                expected: dim,
                found: coords.len() % dim,
            });
        }
        if let Some(pos) = coords.iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFiniteCoordinate { id: pos / dim });
        }
        Ok(PointSet { coords, dim, metric })
    }

    /// Points on a line, handy for fixtures.
    pub fn line(xs: &[F]) -> Result<Self> {
        Self::from_flat(xs.to_vec(), 1, Metric::Euclidean)
    }

    pub fn len(&self) -> usize {
        self.coords.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn metric(&self) -> Metric {
        self.metric
    }

    pub fn with_metric(mut self, metric: Metric) -> Self {
        self.metric = metric;
        self
    }

    pub fn coords(&self) -> &[F] {
        &self.coords
    }

    /// Coordinates of unit `i`. Panics if `i` is out of range.
    #[inline]
    pub fn point(&self, i: usize) -> &[F] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    pub fn check_id(&self, i: usize) -> Result<()> {
        if i < self.len() {
            Ok(())
        } else {
            Err(Error::InvalidUnit { id: i, n: self.len() })
        }
    }

    pub fn distance(&self, i: usize, j: usize) -> Result<F> {
        self.check_id(i)?;
        self.check_id(j)?;
        Ok(self.dist(i, j))
    }

    /// Unchecked distance for hot loops.
    #[inline]
    pub fn dist(&self, i: usize, j: usize) -> F {
        self.metric.eval(self.point(i), self.point(j))
    }

    /// `{j : rho(i, j) <= r}` in ascending id order, by exhaustive scan.
    pub fn neighborhood(&self, i: usize, r: F) -> Result<Vec<usize>> {
        self.check_id(i)?;
        check_radius(r)?;
        Ok((0..self.len()).filter(|&j| self.dist(i, j) <= r).collect())
    }

    /// All r-neighborhoods at once, using a uniform grid index.
    pub fn neighborhoods(&self, r: F) -> Result<Neighborhoods> {
        check_radius(r)?;
        let index = GridIndex::new(self, r);
        let lists: Vec<Vec<usize>> = (0..self.len())
            .into_par_iter()
            .map(|i| index.within(self, i, r))
            .collect();
        Ok(Neighborhoods::from_lists(lists))
    }

    /// Per-axis `(min, max)`.
    pub fn bounding_box(&self) -> Vec<(F, F)> {
        let mut bounds = vec![(F::infinity(), F::neg_infinity()); self.dim];
        for i in 0..self.len() {
            for (b, &x) in bounds.iter_mut().zip(self.point(i)) {
                b.0 = b.0.min(x);
                b.1 = b.1.max(x);
            }
        }
        bounds
    }

    /// Volume of the study region in the caller's unit of length to the
    /// power `d`. Zero-extent axes count as one unit.
    pub fn region_volume(&self, method: VolumeMethod) -> F {
        match method {
            VolumeMethod::BoundingBox => self
                .bounding_box()
                .into_iter()
                .map(|(lo, hi)| {
                    let extent = hi - lo;
                    if extent > F::zero() {
                        extent
                    } else {
                        F::one()
                    }
                })
                .fold(F::one(), |acc, e| acc * e),
        }
    }

    /// Express coordinates in a new unit of length: every coordinate is
    /// divided by `unit_length`.
    pub fn rescaled(&self, unit_length: F) -> Result<Self> {
        if !(unit_length > F::zero()) || !unit_length.is_finite() {
            return Err(Error::param("unit_length", "must be positive and finite"));
        }
        Ok(PointSet {
            coords: self.coords.iter().map(|&x| x / unit_length).collect(),
            dim: self.dim,
            metric: self.metric,
        })
    }

    /// Largest pairwise distance, O(n^2).
    pub fn diameter(&self) -> F {
        let n = self.len();
        let mut best = F::zero();
        for i in 0..n {
            for j in i + 1..n {
                best = best.max(self.dist(i, j));
            }
        }
        best
    }

    /// Convert to another scalar type.
    pub fn cast<G: Real>(&self) -> PointSet<G> {
        PointSet {
            coords: self.coords.iter().map(|x| G::of(x.to_f64_lossy())).collect(),
            dim: self.dim,
            metric: self.metric,
        }
    }
}

fn check_radius<F: Real>(r: F) -> Result<()> {
    if r >= F::zero() && !r.is_nan() {
        Ok(())
    } else {
        Err(Error::param("radius", "must be nonnegative"))
    }
}

/// Neighbor lists for every unit in compressed row form. Each list is sorted
/// and contains the unit itself.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Neighborhoods {
    offsets: Vec<usize>,
    members: Vec<usize>,
}

impl Neighborhoods {
    pub fn from_lists(lists: Vec<Vec<usize>>) -> Self {
        let mut offsets = Vec::with_capacity(lists.len() + 1);
        offsets.push(0);
        let mut members = Vec::with_capacity(lists.iter().map(Vec::len).sum());
        for list in lists {
            members.extend(list);
            offsets.push(members.len());
        }
        Neighborhoods { offsets, members }
    }

    pub fn len(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn of(&self, i: usize) -> &[usize] {
        &self.members[self.offsets[i]..self.offsets[i + 1]]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[usize]> + '_ {
        (0..self.len()).map(move |i| self.of(i))
    }

    pub fn total_pairs(&self) -> usize {
        self.members.len()
    }
}

/// Uniform grid over the points with cells slightly wider than the query
/// radius, so every neighbor lies in an adjacent cell.
struct GridIndex {
    cell: f64,
    cells: HashMap<Vec<i64>, Vec<usize>>,
}

impl GridIndex {
    fn new<F: Real>(ps: &PointSet<F>, r: F) -> Self {
        let r = r.to_f64_lossy();
        let cell = if r > 0.0 { r * (1.0 + 1e-6) } else { 1.0 };
        let mut cells: HashMap<Vec<i64>, Vec<usize>> = HashMap::new();
        for i in 0..ps.len() {
            cells.entry(Self::key(ps.point(i), cell)).or_default().push(i);
        }
        GridIndex { cell, cells }
    }

    fn key<F: Real>(p: &[F], cell: f64) -> Vec<i64> {
        p.iter()
            .map(|x| (x.to_f64_lossy() / cell).floor() as i64)
            .collect()
    }

    fn within<F: Real>(&self, ps: &PointSet<F>, i: usize, r: F) -> Vec<usize> {
        let base = Self::key(ps.point(i), self.cell);
        let d = base.len();
        let mut out = Vec::new();
        let mut offset = vec![-1i64; d];
        loop {
            let key: Vec<i64> = base.iter().zip(&offset).map(|(b, o)| b + o).collect();
            if let Some(bucket) = self.cells.get(&key) {
                out.extend(bucket.iter().copied().filter(|&j| ps.dist(i, j) <= r));
            }
            // odometer over {-1, 0, 1}^d
            let mut axis = 0;
            loop {
                if axis == d {
                    out.sort_unstable();
                    return out;
                }
                if offset[axis] < 1 {
                    offset[axis] += 1;
                    break;
                }
                offset[axis] = -1;
                axis += 1;
            }
        }
    }
}
