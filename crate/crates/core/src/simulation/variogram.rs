//! Causal variogram: ring-treatment effects at increasing distance from the
//! medoid, and the log-log slope that estimates the decay exponent.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::clustering::{exclusion_radius, KMedoids, DEFAULT_RADIUS_MULTIPLIER};
use crate::design::{variogram_design, ArmRule, GammaDesign};
use crate::error::{Error, Result};
use crate::geometry::PointSet;
use crate::rng::{self, tag};
use crate::simulation::dgp::{gen_locations, Model, Noise, OutcomeModel};
use crate::Clustering;

/// Outcomes observed under one ring design.
pub trait RingResponse: Sync {
    fn outcomes(&self, design: &GammaDesign, rep: u64) -> Result<Vec<f64>>;
}

impl<F> RingResponse for F
where
    F: Fn(&GammaDesign, u64) -> Result<Vec<f64>> + Sync,
{
    fn outcomes(&self, design: &GammaDesign, rep: u64) -> Result<Vec<f64>> {
        self(design, rep)
    }
}

/// A linear outcome model with fresh noise in every replication.
pub struct ModelResponse<'a> {
    pub model: &'a OutcomeModel,
    pub seed: u64,
}

impl RingResponse for ModelResponse<'_> {
    fn outcomes(&self, design: &GammaDesign, rep: u64) -> Result<Vec<f64>> {
        let n = self.model.len();
        let noise = Noise::draw(n, &mut rng::stream(self.seed, tag::NOISE, &[u64::MAX, rep]));
        let (a, b) = self.model.coefficients(&noise);
        let v: Vec<f64> = (0..n).map(|i| a[i] + if design.treated[i] { b[i] } else { 0.0 }).collect();
        self.model.apply(&v)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariogramOptions {
    pub ring_width: f64,
    /// Units within this distance of their medoid are compared. Defaults to
    /// the exclusion radius, capped at the ring width so the compared units
    /// are never themselves treated.
    pub near_radius: Option<f64>,
    pub arm_rule: ArmRule,
    pub seed: u64,
}

impl Default for VariogramOptions {
    fn default() -> Self {
        VariogramOptions {
            ring_width: 1.0,
            near_radius: None,
            arm_rule: ArmRule::Balanced,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlopeFit {
    /// `-slope`.
    pub gamma: f64,
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    /// Rings `t` whose estimate was positive and entered the fit.
    pub used: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariogramFit {
    pub fit: SlopeFit,
    /// `theta[t - 1]` is the mean ring-`t` effect over replications.
    pub theta: Vec<f64>,
    /// Replications contributing to each ring.
    pub reps_used: Vec<usize>,
    pub near_radius: f64,
    pub near_units: usize,
    pub k: usize,
}

/// OLS of `log theta_t` on `log t` over the positive entries
/// (`theta[0]` is ring 1).
pub fn fit_log_slope(theta: &[f64]) -> Result<SlopeFit> {
    let used: Vec<usize> = (1..=theta.len()).filter(|&t| theta[t - 1] > 0.0).collect();
    if used.len() < 3 {
        return Err(Error::TooFewPositive {
            positive: used.len(),
            estimates: theta.to_vec(),
        });
    }
    let xs: Vec<f64> = used.iter().map(|&t| (t as f64).ln()).collect();
    let ys: Vec<f64> = used.iter().map(|&t| theta[t - 1].ln()).collect();
    let m = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / m;
    let my = ys.iter().sum::<f64>() / m;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my) * (y - my)).sum();
    let slope = sxy / sxx;
    let r_squared = if syy > 0.0 { sxy * sxy / (sxx * syy) } else { 1.0 };
    Ok(SlopeFit {
        gamma: -slope,
        slope,
        intercept: my - slope * mx,
        r_squared,
        used,
    })
}

/// Run `reps` ring designs with `T = arms` and regress the averaged ring
/// effects on ring index.
pub fn variogram_gamma<R: RingResponse + ?Sized>(
    ps: &PointSet<f64>,
    c: &Clustering,
    arms: usize,
    reps: usize,
    response: &R,
    opts: &VariogramOptions,
) -> Result<VariogramFit> {
    if arms < 3 {
        return Err(Error::param("T", format!("need at least 3 rings for a slope, got {arms}")));
    }
    if reps == 0 {
        return Err(Error::param("reps", "must be at least 1"));
    }
    let near_radius = opts
        .near_radius
        .unwrap_or_else(|| exclusion_radius(c, DEFAULT_RADIUS_MULTIPLIER).min(opts.ring_width));
    if !(near_radius >= 0.0) {
        return Err(Error::param("near_radius", "must be nonnegative"));
    }
    let near: Vec<bool> = (0..ps.len())
        .map(|i| ps.dist(i, c.medoids()[c.cluster_of(i)]) <= near_radius)
        .collect();

    let per_rep: Vec<Vec<Option<f64>>> = (0..reps as u64)
        .into_par_iter()
        .map(|rep| -> Result<Vec<Option<f64>>> {
            let design = variogram_design(ps, c, arms, opts.ring_width, &opts.arm_rule, opts.seed, rep)?;
            let y = response.outcomes(&design, rep)?;
            let mut sum = vec![0.0; arms + 1];
            let mut count = vec![0usize; arms + 1];
            for i in 0..ps.len() {
                if near[i] && !design.treated[i] {
                    let t = design.arms[c.cluster_of(i)];
                    sum[t] += y[i];
                    count[t] += 1;
                }
            }
            if count[0] == 0 {
                return Ok(vec![None; arms]);
            }
            let base = sum[0] / count[0] as f64;
            Ok((1..=arms)
                .map(|t| (count[t] > 0).then(|| sum[t] / count[t] as f64 - base))
                .collect())
        })
        .collect::<Result<_>>()?;

    let mut theta = vec![0.0; arms];
    let mut reps_used = vec![0usize; arms];
    for row in &per_rep {
        for (t, v) in row.iter().enumerate() {
            if let Some(v) = v {
                theta[t] += v;
                reps_used[t] += 1;
            }
        }
    }
    for t in 0..arms {
        theta[t] = if reps_used[t] > 0 {
            theta[t] / reps_used[t] as f64
        } else {
            f64::NAN
        };
    }
    let fit = fit_log_slope(&theta)?;
    Ok(VariogramFit {
        fit,
        theta,
        reps_used,
        near_radius,
        near_units: near.iter().filter(|&&x| x).count(),
        k: c.k(),
    })
}

/// End-to-end variogram experiment on simulated locations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VariogramConfig {
    pub model: Model,
    pub n: usize,
    pub alpha: f64,
    pub k: usize,
    pub arms: usize,
    pub reps: usize,
    pub ring_width: f64,
    pub near_radius: Option<f64>,
    pub arm_rule: ArmRule,
    pub cliff_ord_self_loop: bool,
}

impl Default for VariogramConfig {
    fn default() -> Self {
        VariogramConfig {
            model: Model::MovingAverage,
            n: 1000,
            alpha: 0.1,
            k: 12,
            arms: 4,
            reps: 500,
            ring_width: 1.0,
            near_radius: None,
            arm_rule: ArmRule::Balanced,
            cliff_ord_self_loop: true,
        }
    }
}

pub fn run_variogram(cfg: &VariogramConfig, seed: u64) -> Result<VariogramFit> {
    let key = [u64::MAX, cfg.n as u64];
    let ps = gen_locations(cfg.n, cfg.alpha, &mut rng::stream(seed, tag::LOCATIONS, &key))?;
    let c = KMedoids::new(cfg.k, rng::derive(seed, tag::BUILD, &key)).fit(&ps)?;
    let model = OutcomeModel::build(cfg.model, &ps, cfg.cliff_ord_self_loop)?;
    let response = ModelResponse { model: &model, seed };
    let opts = VariogramOptions {
        ring_width: cfg.ring_width,
        near_radius: cfg.near_radius,
        arm_rule: cfg.arm_rule.clone(),
        seed: rng::derive(seed, tag::RING_ARM, &key),
    };
    variogram_gamma(&ps, &c, cfg.arms, cfg.reps, &response, &opts)
}
