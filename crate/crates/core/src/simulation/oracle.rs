//! Potential outcomes and the true estimands.
//!
//! Every estimand compares a counterfactual in which each unit is treated
//! independently with probability `p` against pure control:
//!
//! * direct: `mean_i E[Y_i(1, D_-i) - Y_i(0, D_-i)]`
//! * indirect: `mean_i E[Y_i(0, D_-i)] - Y_i(0)`
//! * total: `mean_i E[Y_i(1, D_-i)] - Y_i(0)`
//! * overall: `mean_i E[Y_i(D)] - Y_i(0)`

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::Estimand;
use crate::simulation::dgp::OutcomeModel;

/// Anything that maps a full treatment vector to outcomes.
pub trait PotentialOutcomes {
    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn outcomes(&self, d: &[bool]) -> Result<Vec<f64>>;
}

impl<F> PotentialOutcomes for (usize, F)
where
    F: Fn(&[bool]) -> Result<Vec<f64>>,
{
    fn len(&self) -> usize {
        self.0
    }

    fn outcomes(&self, d: &[bool]) -> Result<Vec<f64>> {
        (self.1)(d)
    }
}

/// True estimand values with Monte Carlo standard errors (zero when exact).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct TrueEstimands {
    pub values: [f64; 4],
    pub se: [f64; 4],
}

impl TrueEstimands {
    pub fn get(&self, q: Estimand) -> f64 {
        self.values[slot(q)]
    }

    pub fn se(&self, q: Estimand) -> f64 {
        self.se[slot(q)]
    }
}

fn slot(q: Estimand) -> usize {
    match q {
        Estimand::Direct => 0,
        Estimand::Indirect => 1,
        Estimand::Total => 2,
        Estimand::Overall => 3,
    }
}

fn check_p(p: f64) -> Result<()> {
    if p > 0.0 && p < 1.0 {
        Ok(())
    } else {
        Err(Error::param("p", format!("must lie in (0, 1), got {p}")))
    }
}

/// Per-draw contributions whose expectation under iid Bernoulli(p) is each
/// estimand. The overall term equals `p * total + (1 - p) * indirect`.
fn draw_terms(y: &[f64], y0: &[f64], d: &[bool], p: f64) -> [f64; 4] {
    let n = y.len() as f64;
    let mut s = [0.0; 4];
    for i in 0..y.len() {
        let (treat, ctrl) = if d[i] { (y[i] / p, 0.0) } else { (0.0, y[i] / (1.0 - p)) };
        s[0] += treat - ctrl;
        s[1] += ctrl - y0[i];
        s[2] += treat - y0[i];
        s[3] += y[i] - y0[i];
    }
    s.map(|x| x / n)
}

/// Approximate the counterfactual expectations with `draws` iid
/// Bernoulli(p) treatment vectors.
pub fn true_estimands_mc<O: PotentialOutcomes + ?Sized, R: Rng + ?Sized>(
    oracle: &O,
    p: f64,
    draws: usize,
    rng: &mut R,
) -> Result<TrueEstimands> {
    check_p(p)?;
    if draws < 2 {
        return Err(Error::param("draws", "need at least 2 inner draws"));
    }
    let n = oracle.len();
    let y0 = oracle.outcomes(&vec![false; n])?;
    let mut sum = [0.0; 4];
    let mut sq = [0.0; 4];
    for _ in 0..draws {
        let d: Vec<bool> = (0..n).map(|_| rng.random_bool(p)).collect();
        let y = oracle.outcomes(&d)?;
        let t = draw_terms(&y, &y0, &d, p);
        for q in 0..4 {
            sum[q] += t[q];
            sq[q] += t[q] * t[q];
        }
    }
    let m = draws as f64;
    let values = sum.map(|s| s / m);
    let mut se = [0.0; 4];
    for q in 0..4 {
        let var = ((sq[q] - m * values[q] * values[q]) / (m - 1.0)).max(0.0);
        se[q] = (var / m).sqrt();
    }
    Ok(TrueEstimands { values, se })
}

/// Exact expectations by enumerating all `2^n` treatment vectors.
pub fn true_estimands_exhaustive<O: PotentialOutcomes + ?Sized>(oracle: &O, p: f64) -> Result<TrueEstimands> {
    check_p(p)?;
    let n = oracle.len();
    if n > 20 {
        return Err(Error::param("n", format!("exhaustive enumeration is limited to 20 units, got {n}")));
    }
    let y0 = oracle.outcomes(&vec![false; n])?;
    let mut values = [0.0; 4];
    for mask in 0u64..(1 << n) {
        let d: Vec<bool> = (0..n).map(|i| mask >> i & 1 == 1).collect();
        let treated = d.iter().filter(|&&x| x).count() as i32;
        let prob = p.powi(treated) * (1.0 - p).powi(n as i32 - treated);
        let y = oracle.outcomes(&d)?;
        let t = draw_terms(&y, &y0, &d, p);
        for q in 0..4 {
            values[q] += prob * t[q];
        }
    }
    Ok(TrueEstimands { values, se: [0.0; 4] })
}

/// Potential outcomes of a linear model for one noise draw:
/// `Y(d) = M (a + d * b)`.
pub struct LinearOracle<'a> {
    pub model: &'a OutcomeModel,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
}

impl<'a> LinearOracle<'a> {
    pub fn new(model: &'a OutcomeModel, noise: &crate::simulation::dgp::Noise) -> Self {
        let (a, b) = model.coefficients(noise);
        LinearOracle { model, a, b }
    }

    /// Closed form of the true estimands. With `u = M b` and `m = diag(M)`:
    /// direct `m b`, indirect `p (u - m b)`, total `p u + (1 - p) m b`,
    /// overall `p u`, each averaged over units.
    pub fn true_estimands(&self, p: f64) -> Result<TrueEstimands> {
        check_p(p)?;
        let u = self.model.apply(&self.b)?;
        let m = self.model.diagonal()?;
        let n = u.len() as f64;
        let mut v = [0.0; 4];
        for i in 0..u.len() {
            let own = m[i] * self.b[i];
            v[0] += own;
            v[1] += p * (u[i] - own);
            v[2] += p * u[i] + (1.0 - p) * own;
            v[3] += p * u[i];
        }
        Ok(TrueEstimands {
            values: v.map(|x| x / n),
            se: [0.0; 4],
        })
    }
}

impl PotentialOutcomes for LinearOracle<'_> {
    fn len(&self) -> usize {
        self.a.len()
    }

    fn outcomes(&self, d: &[bool]) -> Result<Vec<f64>> {
        if d.len() != self.a.len() {
            return Err(Error::param("treatment", format!("{} entries for {} units", d.len(), self.a.len())));
        }
        let v: Vec<f64> = (0..d.len()).map(|i| self.a[i] + if d[i] { self.b[i] } else { 0.0 }).collect();
        self.model.apply(&v)
    }
}
