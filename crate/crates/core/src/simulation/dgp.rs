//! Unit locations and the two spatial outcome models.

use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Metric, PointSet};

/// Autoregressive coefficient of the Cliff-Ord model.
pub const CLIFF_ORD_RHO: f64 = 0.8;
/// Decay exponent of the moving-average kernel.
pub const MA_ETA: f64 = 5.0;
pub const INTERCEPT: f64 = -1.0;

const SOLVE_TOL: f64 = 1e-10;
const RESIDUAL_TOL: f64 = 1e-8;
const MAX_SWEEPS: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Model {
    CliffOrd,
    MovingAverage,
}

impl Model {
    pub fn id(self) -> u64 {
        match self {
            Model::CliffOrd => 0,
            Model::MovingAverage => 1,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Model::CliffOrd => "cliff_ord",
            Model::MovingAverage => "moving_average",
        }
    }
}

impl fmt::Display for Model {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Model {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "cliff_ord" | "co" | "sar" => Ok(Model::CliffOrd),
            "moving_average" | "ma" => Ok(Model::MovingAverage),
            _ => Err(Error::param("model", format!("unknown model {s:?}; use cliff_ord or ma"))),
        }
    }
}

/// Draw `n` points uniformly on `[-sqrt(n a), sqrt(n a)]^2`.
pub fn gen_locations<R: Rng + ?Sized>(n: usize, alpha: f64, rng: &mut R) -> Result<PointSet<f64>> {
    if n == 0 {
        return Err(Error::EmptyPointSet);
    }
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::param("alpha", format!("must lie in (0, 1], got {alpha}")));
    }
    let half = (n as f64 * alpha).sqrt();
    let coords: Vec<f64> = (0..2 * n).map(|_| rng.random_range(-half..=half)).collect();
    PointSet::from_flat(coords, 2, Metric::Euclidean)
}

/// Row-normalized contiguity weights `G_ij = 1{rho(i,j) <= 1} / sum_k 1{rho(i,k) <= 1}`.
#[derive(Debug, Clone)]
pub struct SpatialWeights {
    offsets: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl SpatialWeights {
    /// With `self_loop` the unit itself counts among its neighbors. Without
    /// it, a unit with no neighbor within distance 1 gets an all-zero row.
    pub fn contiguity(ps: &PointSet<f64>, self_loop: bool) -> Result<Self> {
        let nb = ps.neighborhoods(1.0)?;
        let mut offsets = Vec::with_capacity(ps.len() + 1);
        let mut cols = Vec::with_capacity(nb.total_pairs());
        let mut vals = Vec::with_capacity(nb.total_pairs());
        offsets.push(0);
        for (i, row) in nb.iter().enumerate() {
            let start = cols.len();
            cols.extend(row.iter().copied().filter(|&j| self_loop || j != i));
            let m = cols.len() - start;
            vals.extend(std::iter::repeat_n(1.0 / m.max(1) as f64, m));
            offsets.push(cols.len());
        }
        Ok(SpatialWeights { offsets, cols, vals })
    }

    pub fn len(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.offsets[i]..self.offsets[i + 1];
        self.cols[r.clone()].iter().copied().zip(self.vals[r].iter().copied())
    }

    pub fn row_sum(&self, i: usize) -> f64 {
        self.row(i).map(|(_, w)| w).sum()
    }

    pub fn mul(&self, x: &[f64]) -> Vec<f64> {
        (0..self.len()).map(|i| self.row(i).map(|(j, w)| w * x[j]).sum()).collect()
    }
}

/// Independent unit-level draws: `beta ~ N(1, 1)`, `eps ~ N(0, 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Noise {
    pub beta: Vec<f64>,
    pub eps: Vec<f64>,
}

impl Noise {
    pub fn draw<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Self {
        let mut beta = Vec::with_capacity(n);
        let mut eps = Vec::with_capacity(n);
        for _ in 0..n {
            let b: f64 = StandardNormal.sample(rng);
            let e: f64 = StandardNormal.sample(rng);
            beta.push(1.0 + b);
            eps.push(e);
        }
        Noise { beta, eps }
    }

    /// `(x + G x)` applied to both components.
    pub fn convolved(&self, g: &SpatialWeights) -> Noise {
        let add = |x: &[f64]| -> Vec<f64> { g.mul(x).into_iter().zip(x).map(|(gx, &x)| x + gx).collect() };
        Noise {
            beta: add(&self.beta),
            eps: add(&self.eps),
        }
    }
}

/// Draws raw noise and returns the spatially convolved `(beta, eps)`.
pub fn shared_noise<R: Rng + ?Sized>(g: &SpatialWeights, rng: &mut R) -> (Vec<f64>, Vec<f64>) {
    let c = Noise::draw(g.len(), rng).convolved(g);
    (c.beta, c.eps)
}

/// `Y = -1 + rho G Y + D beta + eps`.
#[derive(Debug, Clone)]
pub struct CliffOrd {
    pub g: SpatialWeights,
    pub rho: f64,
}

impl CliffOrd {
    pub fn new(ps: &PointSet<f64>, self_loop: bool) -> Result<Self> {
        Ok(CliffOrd {
            g: SpatialWeights::contiguity(ps, self_loop)?,
            rho: CLIFF_ORD_RHO,
        })
    }

    /// Solve `(I - rho G) y = v` by fixed-point iteration, to a max-norm
    /// error of `1e-10` relative to `max(1, |y|)`.
    pub fn solve(&self, v: &[f64]) -> Result<Vec<f64>> {
        let n = v.len();
        let mut y = v.to_vec();
        let mut next = vec![0.0; n];
        let mut delta = f64::INFINITY;
        for _ in 0..MAX_SWEEPS {
            delta = 0.0;
            let mut size = 1.0f64;
            for i in 0..n {
                let gy: f64 = self.g.row(i).map(|(j, w)| w * y[j]).sum();
                next[i] = v[i] + self.rho * gy;
                delta = delta.max((next[i] - y[i]).abs());
                size = size.max(next[i].abs());
            }
            std::mem::swap(&mut y, &mut next);
            if delta * self.rho / (1.0 - self.rho) <= SOLVE_TOL * size {
                let residual = self.residual(&y, v);
                if residual < RESIDUAL_TOL {
                    return Ok(y);
                }
                return Err(Error::SolverDiverged {
                    iterations: MAX_SWEEPS,
                    residual,
                });
            }
        }
        Err(Error::SolverDiverged {
            iterations: MAX_SWEEPS,
            residual: delta,
        })
    }

    /// `max_i |((I - rho G) y - v)_i|`.
    pub fn residual(&self, y: &[f64], v: &[f64]) -> f64 {
        (0..y.len())
            .map(|i| {
                let gy: f64 = self.g.row(i).map(|(j, w)| w * y[j]).sum();
                (y[i] - self.rho * gy - v[i]).abs()
            })
            .fold(0.0, f64::max)
    }
}

pub fn cliff_ord_outcomes(model: &CliffOrd, d: &[bool], beta: &[f64], eps: &[f64]) -> Result<Vec<f64>> {
    let v: Vec<f64> = (0..d.len())
        .map(|i| INTERCEPT + if d[i] { beta[i] } else { 0.0 } + eps[i])
        .collect();
    model.solve(&v)
}

/// Dense kernel `W_ij = max(rho(i,j), 1)^-eta`, optionally cut to zero
/// beyond `cutoff`.
#[derive(Debug, Clone)]
pub struct MovingAverage {
    n: usize,
    w: Vec<f64>,
}

impl MovingAverage {
    pub fn new(ps: &PointSet<f64>) -> Self {
        Self::with_kernel(ps, MA_ETA, None)
    }

    pub fn with_kernel(ps: &PointSet<f64>, eta: f64, cutoff: Option<f64>) -> Self {
        let n = ps.len();
        let mut w = vec![0.0; n * n];
        w.par_chunks_mut(n.max(1)).enumerate().for_each(|(i, row)| {
            for (j, x) in row.iter_mut().enumerate() {
                let r = ps.dist(i, j);
                if cutoff.is_none_or(|c| r <= c) {
                    *x = r.max(1.0).powf(-eta);
                }
            }
        });
        MovingAverage { n, w }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn weight(&self, i: usize, j: usize) -> f64 {
        self.w[i * self.n + j]
    }

    pub fn mul(&self, x: &[f64]) -> Vec<f64> {
        self.w
            .par_chunks(self.n.max(1))
            .map(|row| row.iter().zip(x).map(|(w, x)| w * x).sum())
            .collect()
    }
}

pub fn moving_average_outcomes(model: &MovingAverage, d: &[bool], beta: &[f64], eps: &[f64]) -> Vec<f64> {
    let v: Vec<f64> = (0..d.len())
        .map(|i| INTERCEPT + if d[i] { beta[i] } else { 0.0 } + eps[i])
        .collect();
    model.mul(&v)
}

/// Either outcome model in its linear form `Y(d) = M (a + d * b)`.
#[derive(Debug)]
pub struct OutcomeModel {
    kind: ModelKind,
    diag: OnceLock<Vec<f64>>,
}

#[derive(Debug)]
enum ModelKind {
    CliffOrd(CliffOrd),
    MovingAverage(MovingAverage),
}

impl OutcomeModel {
    pub fn cliff_ord(m: CliffOrd) -> Self {
        OutcomeModel {
            kind: ModelKind::CliffOrd(m),
            diag: OnceLock::new(),
        }
    }

    pub fn moving_average(m: MovingAverage) -> Self {
        OutcomeModel {
            kind: ModelKind::MovingAverage(m),
            diag: OnceLock::new(),
        }
    }

    pub fn build(model: Model, ps: &PointSet<f64>, cliff_ord_self_loop: bool) -> Result<Self> {
        Ok(match model {
            Model::CliffOrd => Self::cliff_ord(CliffOrd::new(ps, cliff_ord_self_loop)?),
            Model::MovingAverage => Self::moving_average(MovingAverage::new(ps)),
        })
    }

    pub fn model(&self) -> Model {
        match self.kind {
            ModelKind::CliffOrd(_) => Model::CliffOrd,
            ModelKind::MovingAverage(_) => Model::MovingAverage,
        }
    }

    pub fn len(&self) -> usize {
        match &self.kind {
            ModelKind::CliffOrd(m) => m.g.len(),
            ModelKind::MovingAverage(m) => m.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `M v`.
    pub fn apply(&self, v: &[f64]) -> Result<Vec<f64>> {
        match &self.kind {
            ModelKind::CliffOrd(m) => m.solve(v),
            ModelKind::MovingAverage(m) => Ok(m.mul(v)),
        }
    }

    /// `M_ii` for every unit, computed once.
    pub fn diagonal(&self) -> Result<&[f64]> {
        if let Some(d) = self.diag.get() {
            return Ok(d);
        }
        let d = match &self.kind {
            ModelKind::MovingAverage(m) => (0..m.len()).map(|i| m.weight(i, i)).collect(),
            ModelKind::CliffOrd(m) => {
                let n = m.g.len();
                (0..n)
                    .into_par_iter()
                    .map(|i| {
                        let mut e = vec![0.0; n];
                        e[i] = 1.0;
                        m.solve(&e).map(|col| col[i])
                    })
                    .collect::<Result<Vec<f64>>>()?
            }
        };
        Ok(self.diag.get_or_init(|| d))
    }

    /// Intercept and slope vectors `(a, b)` for one noise draw: the
    /// Cliff-Ord model uses the convolved pair, the moving average the raw.
    pub fn coefficients(&self, noise: &Noise) -> (Vec<f64>, Vec<f64>) {
        let (beta, eps) = match &self.kind {
            ModelKind::CliffOrd(m) => {
                let c = noise.convolved(&m.g);
                (c.beta, c.eps)
            }
            ModelKind::MovingAverage(_) => (noise.beta.clone(), noise.eps.clone()),
        };
        (eps.into_iter().map(|e| INTERCEPT + e).collect(), beta)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn locations_within_square() {
        let ps = gen_locations(1000, 0.7, &mut rng(1)).unwrap();
        let half = 700f64.sqrt();
        assert!((2.0 * half - 52.915).abs() < 1e-3);
        assert_eq!(ps.dim(), 2);
        assert!(ps.coords().iter().all(|&x| x.abs() <= half));
        assert!(gen_locations(10, 0.0, &mut rng(1)).is_err());
        assert!(gen_locations(10, 1.5, &mut rng(1)).is_err());
        assert!(gen_locations(0, 0.5, &mut rng(1)).is_err());
    }

    #[test]
    fn location_mean_is_centered() {
        let ps = gen_locations(10_000, 1.0, &mut rng(2)).unwrap();
        let half = 100.0;
        // sd of a uniform on [-h, h] is h / sqrt(3)
        let se = half / 3f64.sqrt() / (10_000f64).sqrt();
        for axis in 0..2 {
            let m: f64 = (0..10_000).map(|i| ps.point(i)[axis]).sum::<f64>() / 10_000.0;
            assert!(m.abs() < 3.0 * se, "axis {axis} mean {m}");
        }
    }

    #[test]
    fn contiguity_rows_are_stochastic() {
        let ps = gen_locations(300, 1.0, &mut rng(3)).unwrap();
        let g = SpatialWeights::contiguity(&ps, true).unwrap();
        for i in 0..300 {
            assert!((g.row_sum(i) - 1.0).abs() < 1e-12);
        }
        let h = SpatialWeights::contiguity(&ps, false).unwrap();
        for i in 0..300 {
            let s = h.row_sum(i);
            assert!(s == 0.0 || (s - 1.0).abs() < 1e-12);
            assert!(h.row(i).all(|(j, _)| j != i));
        }
    }

    #[test]
    fn isolated_unit_doubles_its_draw() {
        let ps = PointSet::new(&[[0.0, 0.0], [5.0, 0.0]], Metric::Euclidean).unwrap();
        let g = SpatialWeights::contiguity(&ps, true).unwrap();
        let raw = Noise::draw(2, &mut rng(4));
        let c = raw.convolved(&g);
        for i in 0..2 {
            assert!((c.beta[i] - 2.0 * raw.beta[i]).abs() < 1e-15);
            assert!((c.eps[i] - 2.0 * raw.eps[i]).abs() < 1e-15);
        }
        // E[beta_i] = 2 for isolated units
        let ps = PointSet::line(&[0.0]).unwrap();
        let g = SpatialWeights::contiguity(&ps, true).unwrap();
        let mean: f64 = (0..20_000).map(|s| shared_noise(&g, &mut rng(s)).0[0]).sum::<f64>() / 20_000.0;
        // sd of 2 beta is 2
        assert!((mean - 2.0).abs() < 3.0 * 2.0 / (20_000f64).sqrt());
    }

    #[test]
    fn cliff_ord_single_unit() {
        let ps = PointSet::line(&[0.0]).unwrap();
        let m = CliffOrd::new(&ps, true).unwrap();
        let y = cliff_ord_outcomes(&m, &[true], &[1.5], &[0.3]).unwrap();
        assert!((y[0] - (-1.0 + 1.5 + 0.3) / 0.2).abs() < 1e-9);
    }

    #[test]
    fn cliff_ord_constant_solution() {
        let ps = gen_locations(200, 1.0, &mut rng(5)).unwrap();
        let m = CliffOrd::new(&ps, true).unwrap();
        let y = cliff_ord_outcomes(&m, &[false; 200], &[0.0; 200], &[0.0; 200]).unwrap();
        assert!(y.iter().all(|&v| (v + 5.0).abs() < 1e-8));
    }

    #[test]
    fn cliff_ord_residual() {
        let ps = gen_locations(200, 0.3, &mut rng(6)).unwrap();
        let m = CliffOrd::new(&ps, true).unwrap();
        let mut r = rng(7);
        let (beta, eps) = shared_noise(&m.g, &mut r);
        let d: Vec<bool> = (0..200).map(|_| r.random_bool(0.5)).collect();
        let y = cliff_ord_outcomes(&m, &d, &beta, &eps).unwrap();
        let v: Vec<f64> = (0..200).map(|i| -1.0 + if d[i] { beta[i] } else { 0.0 } + eps[i]).collect();
        assert!(m.residual(&y, &v) < 1e-8);
    }

    #[test]
    fn cliff_ord_diagonal_matches_dense_inverse() {
        let ps = gen_locations(40, 0.2, &mut rng(8)).unwrap();
        let co = CliffOrd::new(&ps, false).unwrap();
        // dense Gauss-Jordan on I - rho G
        let n = 40;
        let mut a = vec![vec![0.0; 2 * n]; n];
        for i in 0..n {
            a[i][i] = 1.0;
            a[i][n + i] = 1.0;
            for (j, w) in co.g.row(i) {
                a[i][j] -= co.rho * w;
            }
        }
        for c in 0..n {
            let piv = (c..n).max_by(|&x, &y| a[x][c].abs().total_cmp(&a[y][c].abs())).unwrap();
            a.swap(c, piv);
            let d = a[c][c];
            for x in a[c].iter_mut() {
                *x /= d;
            }
            for r in 0..n {
                if r != c {
                    let f = a[r][c];
                    if f != 0.0 {
                        let pivot_row = a[c].clone();
                        for (x, p) in a[r].iter_mut().zip(pivot_row) {
                            *x -= f * p;
                        }
                    }
                }
            }
        }
        let model = OutcomeModel::cliff_ord(co);
        let diag = model.diagonal().unwrap();
        for i in 0..n {
            assert!((diag[i] - a[i][n + i]).abs() < 1e-8);
        }
    }

    #[test]
    fn moving_average_examples() {
        let ps = PointSet::line(&[0.0]).unwrap();
        let m = MovingAverage::new(&ps);
        let y = moving_average_outcomes(&m, &[true], &[0.7], &[0.2]);
        assert!((y[0] - (-1.0 + 0.7 + 0.2)).abs() < 1e-15);

        let ps = PointSet::line(&[0.0, 2.0]).unwrap();
        let m = MovingAverage::new(&ps);
        assert_eq!(m.weight(0, 1), 1.0 / 32.0);
        assert_eq!(m.weight(1, 1), 1.0);
    }

    #[test]
    fn moving_average_matches_double_loop() {
        let ps = PointSet::new(&[[0.0, 0.0], [0.5, 0.0], [2.0, 1.0], [3.0, 3.0], [-1.5, 0.5]], Metric::Euclidean).unwrap();
        let m = MovingAverage::new(&ps);
        let d = [true, false, true, false, true];
        let beta = [1.2, 0.4, -0.3, 2.0, 0.9];
        let eps = [0.1, -0.5, 0.3, 0.0, -1.1];
        let y = moving_average_outcomes(&m, &d, &beta, &eps);
        for i in 0..5 {
            let mut want = 0.0;
            for j in 0..5 {
                let r = ps.dist(i, j);
                let w = if r < 1.0 { 1.0 } else { r.powi(-5) };
                want += w * (-1.0 + if d[j] { beta[j] } else { 0.0 } + eps[j]);
            }
            assert!((y[i] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn model_names_parse() {
        assert_eq!("ma".parse::<Model>().unwrap(), Model::MovingAverage);
        assert_eq!("cliff-ord".parse::<Model>().unwrap(), Model::CliffOrd);
        assert!("probit".parse::<Model>().is_err());
    }
}
