//! Variance estimation and confidence intervals.
//!
//! Two dependency graphs enter the variance estimator: `A1` links units
//! whose neighborhoods reach a common cluster (through `Lambda_i`), `A2`
//! links units in the same cluster. Both quadratic forms are accumulated
//! over their sparse blocks only.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::clustering::Clustering;
use crate::error::{Arm, Error, Result};
use crate::estimators::{arm_mean, Footprint, UnitPanel};
use crate::geometry::{Neighborhoods, PointSet};
use crate::scalar::Real;

pub const Z_95: f64 = 1.96;

/// `Lambda_i` for every unit plus cluster membership.
#[derive(Debug, Clone)]
pub struct DependencyStructure {
    k: usize,
    cluster: Vec<usize>,
    lambda: Neighborhoods,
}

impl DependencyStructure {
    pub fn from_footprint(fp: &Footprint) -> Self {
        let n = fp.n();
        let mut reach: Vec<Vec<usize>> = vec![Vec::new(); fp.k()];
        for i in 0..n {
            for &j in fp.touched(i) {
                reach[j].push(i);
            }
        }
        let lambda = (0..n)
            .into_par_iter()
            .map_init(
                || vec![false; n],
                |mark, i| {
                    let mut out = Vec::new();
                    for &j in fp.touched(i) {
                        for &l in &reach[j] {
                            if !mark[l] {
                                mark[l] = true;
                                out.push(l);
                            }
                        }
                    }
                    for &l in &out {
                        mark[l] = false;
                    }
                    out.sort_unstable();
                    out
                },
            )
            .collect();
        DependencyStructure {
            k: fp.k(),
            cluster: (0..n).map(|i| fp.cluster_of(i)).collect(),
            lambda: Neighborhoods::from_lists(lambda),
        }
    }

    pub fn n(&self) -> usize {
        self.cluster.len()
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn lambda(&self, i: usize) -> &[usize] {
        self.lambda.of(i)
    }

    pub fn a1(&self, i: usize, j: usize) -> bool {
        self.lambda.of(i).binary_search(&j).is_ok()
    }

    pub fn a2(&self, i: usize, j: usize) -> bool {
        self.cluster[i] == self.cluster[j]
    }

    /// Number of nonzero entries of `A1`.
    pub fn a1_nonzeros(&self) -> usize {
        self.lambda.total_pairs()
    }
}

pub fn lambda_sets<F: Real>(ps: &PointSet<F>, c: &Clustering<F>, r_n: F) -> Result<DependencyStructure> {
    Ok(DependencyStructure::from_footprint(&Footprint::new(ps, c, r_n)?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceReport<F = f64> {
    pub sigma2_1: F,
    pub sigma2_2: F,
    pub sigma2: F,
    pub mu_hat_1: F,
    pub mu_hat_0: F,
    pub k: usize,
}

impl<F: Real> VarianceReport<F> {
    /// Standard error on the estimate's own scale, `sigma / sqrt(k)`.
    pub fn se(&self) -> F {
        (self.sigma2 / F::of_usize(self.k)).sqrt()
    }
}

/// Residual scores `Z_i`.
pub fn z_scores<F: Real>(panel: &UnitPanel<F>) -> Result<(Vec<F>, F, F)> {
    let mu1 = arm_mean(panel, Arm::Treated)?;
    let mu0 = arm_mean(panel, Arm::Control)?;
    let z = (0..panel.n())
        .map(|i| {
            let mut z = F::zero();
            if panel.t1[i] {
                z += (panel.y[i] - mu1) / panel.p1[i];
            }
            if panel.t0[i] {
                z -= (panel.y[i] - mu0) / panel.p0[i];
            }
            z
        })
        .collect();
    Ok((z, mu1, mu0))
}

pub fn variance<F: Real>(panel: &UnitPanel<F>, dep: &DependencyStructure) -> Result<VarianceReport<F>> {
    if panel.n() != dep.n() {
        return Err(Error::param(
            "dependency structure",
            format!("built for {} units, panel has {}", dep.n(), panel.n()),
        ));
    }
    let (z, mu_hat_1, mu_hat_0) = z_scores(panel)?;
    let n = F::of_usize(panel.n());
    let scale = F::of_usize(dep.k) / (n * n);

    let terms: Vec<F> = (0..panel.n())
        .into_par_iter()
        .map(|i| {
            if z[i] == F::zero() {
                return F::zero();
            }
            let s: F = dep.lambda(i).iter().map(|&l| z[l]).sum();
            z[i] * s
        })
        .collect();
    let sigma2_1 = scale * terms.into_iter().sum::<F>();

    let mut totals = vec![F::zero(); dep.k];
    for (i, &zi) in z.iter().enumerate() {
        totals[dep.cluster[i]] += zi;
    }
    let sigma2_2 = scale * totals.iter().map(|&t| t * t).sum::<F>();

    Ok(VarianceReport {
        sigma2_1,
        sigma2_2,
        sigma2: sigma2_1.max(sigma2_2),
        mu_hat_1,
        mu_hat_0,
        k: dep.k,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IntervalKind {
    Undersmoothed,
    BiasAware,
    /// Bias term kept on the `sqrt(k)`-scaled form.
    BiasAwareScaled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceInterval<F = f64> {
    pub center: F,
    pub halfwidth: F,
    pub lower: F,
    pub upper: F,
    pub kind: IntervalKind,
    pub level: f64,
}

impl<F: Real> ConfidenceInterval<F> {
    fn around(center: F, halfwidth: F, kind: IntervalKind) -> Self {
        ConfidenceInterval {
            center,
            halfwidth,
            lower: center - halfwidth,
            upper: center + halfwidth,
            kind,
            level: 0.95,
        }
    }

    pub fn contains(&self, x: F) -> bool {
        self.lower <= x && x <= self.upper
    }
}

fn check_sigma2<F: Real>(sigma2: F, k: usize) -> Result<()> {
    if !(sigma2 >= F::zero()) || !sigma2.is_finite() {
        return Err(Error::param("sigma2", format!("must be finite and nonnegative, got {sigma2}")));
    }
    if k == 0 {
        return Err(Error::param("k", "must be at least 1"));
    }
    Ok(())
}

pub fn ci_undersmoothed<F: Real>(theta_hat: F, sigma2: F, k: usize) -> Result<ConfidenceInterval<F>> {
    check_sigma2(sigma2, k)?;
    let hw = F::of(Z_95) * (sigma2 / F::of_usize(k)).sqrt();
    Ok(ConfidenceInterval::around(theta_hat, hw, IntervalKind::Undersmoothed))
}

/// Smoothness constants of the bias bound `c * r^-gamma`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BiasBound<F = f64> {
    pub c: F,
    pub gamma: F,
    pub dim: usize,
}

/// Interval widened by the worst-case bias `3 c r_n^-gamma`.
///
/// With `scaled` the bias term is multiplied by `sqrt(k)`.
pub fn ci_bias_aware<F: Real>(
    theta_hat: F,
    sigma2: F,
    k: usize,
    bound: BiasBound<F>,
    r_n: F,
    scaled: bool,
) -> Result<ConfidenceInterval<F>> {
    check_sigma2(sigma2, k)?;
    if !(bound.c > F::zero()) || !bound.c.is_finite() {
        return Err(Error::param("c", format!("must be positive, got {}", bound.c)));
    }
    if !(bound.gamma > F::of_usize(bound.dim)) {
        return Err(Error::GammaBelowDimension {
            gamma: bound.gamma.to_f64_lossy(),
            dim: bound.dim,
        });
    }
    if !(r_n > F::zero()) || !r_n.is_finite() {
        return Err(Error::param("r_n", format!("bias bound needs a positive radius, got {r_n}")));
    }
    let kf = F::of_usize(k);
    let mut bias = F::of(3.0) * bound.c * r_n.powf(-bound.gamma);
    let kind = if scaled {
        bias *= kf.sqrt();
        IntervalKind::BiasAwareScaled
    } else {
        IntervalKind::BiasAware
    };
    let hw = bias + F::of(Z_95) * (sigma2 / kf).sqrt();
    Ok(ConfidenceInterval::around(theta_hat, hw, kind))
}
