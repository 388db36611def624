//! Monte Carlo harness: bias, coverage and standard errors over a grid of
//! models, density regimes and population sizes.
//!
//! Locations and the clustering are drawn once per `(regime, n)` cell and
//! shared by both models; noise and assignments are redrawn for every
//! replication. Replication `r` of a cell always uses the same streams, so
//! the report does not depend on the number of worker threads.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::clustering::{exclusion_radius, KMedoids};
use crate::design::{draw_assignment, plan_k, DesignParams};
use crate::error::{Arm, Error, Result};
use crate::estimators::{build_panel, diff_in_means, hajek, Estimand, Footprint};
use crate::geometry::{PointSet, VolumeMethod};
use crate::inference::{ci_undersmoothed, variance, DependencyStructure};
use crate::rng::{self, tag};
use crate::simulation::dgp::{gen_locations, Model, Noise, OutcomeModel};
use crate::simulation::oracle::{true_estimands_mc, LinearOracle, TrueEstimands};
use crate::Clustering;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    /// Region volume proportional to `n` (`alpha = 1`).
    Increasing,
    /// Region shrinks relative to `n`.
    Infill,
}

impl Regime {
    pub fn id(self) -> u64 {
        match self {
            Regime::Increasing => 0,
            Regime::Infill => 1,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Regime::Increasing => "increasing",
            Regime::Infill => "infill",
        }
    }
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Regime {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "increasing" => Ok(Regime::Increasing),
            "infill" => Ok(Regime::Infill),
            _ => Err(Error::param("regime", format!("unknown regime {s:?}; use increasing or infill"))),
        }
    }
}

/// How the true estimands are computed in each replication.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TruthMethod {
    /// Closed form from the model's linearity.
    Exact,
    /// Inner Monte Carlo over iid Bernoulli(p) treatment vectors.
    InnerMc { draws: usize },
}

fn default_models() -> Vec<Model> {
    vec![Model::CliffOrd, Model::MovingAverage]
}
fn default_regimes() -> Vec<Regime> {
    vec![Regime::Increasing, Regime::Infill]
}
fn default_n() -> Vec<usize> {
    vec![250, 500, 1000]
}
fn default_infill_alpha() -> Vec<f64> {
    vec![0.9, 0.8, 0.7]
}
fn default_p() -> f64 {
    0.7
}
fn default_q() -> f64 {
    0.6
}
fn default_gamma_tilde() -> f64 {
    2.0
}
fn default_reps() -> usize {
    1000
}
fn default_estimands() -> Vec<Estimand> {
    Estimand::ALL.to_vec()
}
fn default_rn_multiplier() -> f64 {
    0.5
}
fn default_true() -> bool {
    true
}
fn default_truth() -> TruthMethod {
    TruthMethod::Exact
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationConfig {
    #[serde(default = "default_models")]
    pub models: Vec<Model>,
    #[serde(default = "default_regimes")]
    pub regimes: Vec<Regime>,
    #[serde(default = "default_n")]
    pub n: Vec<usize>,
    /// Infill `alpha` for each entry of `n`.
    #[serde(default = "default_infill_alpha")]
    pub infill_alpha: Vec<f64>,
    #[serde(default = "default_p")]
    pub p: f64,
    #[serde(default = "default_q")]
    pub q: f64,
    #[serde(default = "default_gamma_tilde")]
    pub gamma_tilde: f64,
    #[serde(default = "default_reps")]
    pub reps: usize,
    #[serde(default = "default_estimands")]
    pub estimands: Vec<Estimand>,
    #[serde(default = "default_rn_multiplier")]
    pub rn_multiplier: f64,
    /// Count the unit itself among its Cliff-Ord neighbors.
    #[serde(default = "default_true")]
    pub cliff_ord_self_loop: bool,
    #[serde(default = "default_truth")]
    pub truth: TruthMethod,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        SimulationConfig {
            models: default_models(),
            regimes: default_regimes(),
            n: default_n(),
            infill_alpha: default_infill_alpha(),
            p: default_p(),
            q: default_q(),
            gamma_tilde: default_gamma_tilde(),
            reps: default_reps(),
            estimands: default_estimands(),
            rn_multiplier: default_rn_multiplier(),
            cliff_ord_self_loop: true,
            truth: TruthMethod::Exact,
        }
    }
}

impl SimulationConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: SimulationConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.reps == 0 {
            return bad("reps must be at least 1".into());
        }
        if self.models.is_empty() || self.regimes.is_empty() || self.n.is_empty() || self.estimands.is_empty() {
            return bad("models, regimes, n and estimands must be nonempty".into());
        }
        if self.n.contains(&0) {
            return bad("every n must be positive".into());
        }
        if self.regimes.contains(&Regime::Infill) && self.infill_alpha.len() != self.n.len() {
            return bad(format!(
                "infill_alpha has {} entries but n has {}",
                self.infill_alpha.len(),
                self.n.len()
            ));
        }
        if self.infill_alpha.iter().any(|&a| !(a > 0.0 && a <= 1.0)) {
            return bad("infill_alpha entries must lie in (0, 1]".into());
        }
        if !(self.p > 0.0 && self.p < 1.0 && self.q > 0.0 && self.q < 1.0) {
            return bad(format!("p and q must lie in (0, 1), got p = {}, q = {}", self.p, self.q));
        }
        if !(self.rn_multiplier > 0.0) {
            return bad("rn_multiplier must be positive".into());
        }
        if let TruthMethod::InnerMc { draws } = self.truth {
            if draws < 2 {
                return bad("inner_mc needs at least 2 draws".into());
            }
        }
        if self.gamma_tilde < 2.0 {
            return Err(Error::GammaBelowDimension {
                gamma: self.gamma_tilde,
                dim: 2,
            });
        }
        Ok(())
    }

    pub fn alpha(&self, regime: Regime, n_index: usize) -> f64 {
        match regime {
            Regime::Increasing => 1.0,
            Regime::Infill => self.infill_alpha[n_index],
        }
    }
}

/// Geometry shared by every model in one `(regime, n)` cell.
pub struct Cell {
    pub regime: Regime,
    pub n: usize,
    pub alpha: f64,
    pub points: PointSet<f64>,
    pub clustering: Clustering,
    pub volume: f64,
    pub r_n: f64,
    pub footprint: Footprint,
    pub footprint_zero: Footprint,
    pub dependency: DependencyStructure,
    seed: u64,
}

impl Cell {
    pub fn build(cfg: &SimulationConfig, regime: Regime, n_index: usize, seed: u64) -> Result<Cell> {
        let n = cfg.n[n_index];
        let alpha = cfg.alpha(regime, n_index);
        let key = [regime.id(), n as u64];
        let points = gen_locations(n, alpha, &mut rng::stream(seed, tag::LOCATIONS, &key))?;
        let volume = points.region_volume(VolumeMethod::BoundingBox);
        let k = plan_k(volume, n, cfg.gamma_tilde, 2)?;
        let clustering = KMedoids::new(k, rng::derive(seed, tag::BUILD, &key)).fit(&points)?;
        let r_n = exclusion_radius(&clustering, cfg.rn_multiplier);
        let footprint = Footprint::new(&points, &clustering, r_n)?;
        let footprint_zero = Footprint::new(&points, &clustering, 0.0)?;
        let dependency = DependencyStructure::from_footprint(&footprint);
        Ok(Cell {
            regime,
            n,
            alpha,
            points,
            clustering,
            volume,
            r_n,
            footprint,
            footprint_zero,
            dependency,
            seed,
        })
    }

    pub fn k(&self) -> usize {
        self.clustering.k()
    }

    fn design(&self, cfg: &SimulationConfig) -> Result<DesignParams<f64>> {
        let s = rng::derive(self.seed, tag::CELL, &[self.regime.id(), self.n as u64]);
        DesignParams::new(cfg.p, cfg.q, self.k(), s)
    }
}

/// One replication's result for one estimand.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RepEstimate {
    pub theta_star: f64,
    pub theta_star_se: f64,
    /// `None` when an arm of the well-surrounded estimator is empty.
    pub hat: Option<HatDraw>,
    /// `None` when an arm of the comparator is empty.
    pub plus: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HatDraw {
    pub theta: f64,
    pub sigma2_1: f64,
    pub sigma2_2: f64,
    pub sigma2: f64,
    pub se: f64,
    pub covered: bool,
    pub included: usize,
}

/// Replication `rep` of `model` in `cell`: one estimate per configured
/// estimand, in configuration order.
pub fn run_replication(
    cfg: &SimulationConfig,
    cell: &Cell,
    model: &OutcomeModel,
    rep: u64,
) -> Result<Vec<RepEstimate>> {
    let key = [cell.regime.id(), cell.n as u64, rep];
    let noise = Noise::draw(cell.n, &mut rng::stream(cell.seed, tag::NOISE, &key));
    let oracle = LinearOracle::new(model, &noise);
    let draw = draw_assignment(&cell.clustering, &cell.design(cfg)?, rep)?;
    let y = crate::simulation::oracle::PotentialOutcomes::outcomes(&oracle, &draw.units)?;
    let truth: TrueEstimands = match cfg.truth {
        TruthMethod::Exact => oracle.true_estimands(cfg.p)?,
        TruthMethod::InnerMc { draws } => {
            let ikey = [model.model().id(), cell.regime.id(), cell.n as u64, rep];
            true_estimands_mc(&oracle, cfg.p, draws, &mut rng::stream(cell.seed, tag::INNER, &ikey))?
        }
    };
    let k = cell.k();
    cfg.estimands
        .iter()
        .map(|&q| {
            let panel = build_panel(q, &cell.footprint, &draw, &y, cfg.p, cfg.q)?;
            let hat = match hajek(&panel) {
                Ok(theta) => {
                    let v = variance(&panel, &cell.dependency)?;
                    let ci = ci_undersmoothed(theta, v.sigma2, k)?;
                    Some(HatDraw {
                        theta,
                        sigma2_1: v.sigma2_1,
                        sigma2_2: v.sigma2_2,
                        sigma2: v.sigma2,
                        se: v.se(),
                        covered: ci.contains(truth.get(q)),
                        included: panel.included(Arm::Treated) + panel.included(Arm::Control),
                    })
                }
                Err(Error::DegenerateDraw { .. }) => None,
                Err(e) => return Err(e),
            };
            let plus_panel = build_panel(q, &cell.footprint_zero, &draw, &y, cfg.p, cfg.q)?;
            let plus = match diff_in_means(&plus_panel) {
                Ok(x) => Some(x),
                Err(Error::DegenerateDraw { .. }) => None,
                Err(e) => return Err(e),
            };
            Ok(RepEstimate {
                theta_star: truth.get(q),
                theta_star_se: truth.se(q),
                hat,
                plus,
            })
        })
        .collect()
}

/// One line of the report: a `(model, regime, n, estimand)` cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub model: Model,
    pub regime: Regime,
    pub n: usize,
    pub alpha: f64,
    pub estimand: Estimand,
    pub k: usize,
    pub r_n: f64,
    pub reps: usize,
    pub dropped: usize,
    pub valid: bool,
    /// Mean of `theta_hat - theta_star` over kept draws.
    pub bias_hat: f64,
    pub bias_hat_mc_se: f64,
    pub bias_plus: f64,
    pub bias_plus_mc_se: f64,
    pub coverage: f64,
    /// Mean of `sigma_hat / sqrt(k)`.
    pub mean_se: f64,
    /// Standard deviation of `theta_hat` across draws.
    pub true_se_hat: f64,
    pub true_se_plus: f64,
    pub mean_theta_hat: f64,
    pub mean_theta_plus: f64,
    pub mean_theta_star: f64,
    /// Mean inner Monte Carlo error of `theta_star` (zero when exact).
    pub theta_star_mc_se: f64,
    pub min_sigma2: f64,
    pub negative_sigma2_1: usize,
    pub mean_included: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub regime: Regime,
    pub n: usize,
    pub alpha: f64,
    pub volume: f64,
    pub k: usize,
    pub r_n: f64,
    pub kmedoids_cost: f64,
    pub kmedoids_swaps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationReport {
    pub seed: u64,
    pub config: SimulationConfig,
    pub cells: Vec<CellSummary>,
    pub rows: Vec<ReportRow>,
}

impl SimulationReport {
    pub fn row(&self, model: Model, regime: Regime, n: usize, q: Estimand) -> Option<&ReportRow> {
        self.rows
            .iter()
            .find(|r| r.model == model && r.regime == regime && r.n == n && r.estimand == q)
    }
}

fn mean_sd(xs: &[f64]) -> (f64, f64) {
    let m = xs.len() as f64;
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / m;
    if xs.len() < 2 {
        return (mean, f64::NAN);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (m - 1.0);
    (mean, var.sqrt())
}

/// Fold per-replication estimates into a report row. A replication is
/// dropped when either estimator is undefined; the row is invalid when
/// more than half are dropped.
pub fn aggregate(
    model: Model,
    cell: &Cell,
    q: Estimand,
    draws: &[RepEstimate],
) -> ReportRow {
    let kept: Vec<(&HatDraw, f64, &RepEstimate)> = draws
        .iter()
        .filter_map(|d| match (&d.hat, d.plus) {
            (Some(h), Some(p)) => Some((h, p, d)),
            _ => None,
        })
        .collect();
    let m = kept.len();
    let err_hat: Vec<f64> = kept.iter().map(|(h, _, d)| h.theta - d.theta_star).collect();
    let err_plus: Vec<f64> = kept.iter().map(|(_, p, d)| p - d.theta_star).collect();
    let hats: Vec<f64> = kept.iter().map(|(h, _, _)| h.theta).collect();
    let pluses: Vec<f64> = kept.iter().map(|(_, p, _)| *p).collect();
    let (bias_hat, sd_hat_err) = mean_sd(&err_hat);
    let (bias_plus, sd_plus_err) = mean_sd(&err_plus);
    let (mean_theta_hat, true_se_hat) = mean_sd(&hats);
    let (mean_theta_plus, true_se_plus) = mean_sd(&pluses);
    let mf = m as f64;
    ReportRow {
        model,
        regime: cell.regime,
        n: cell.n,
        alpha: cell.alpha,
        estimand: q,
        k: cell.k(),
        r_n: cell.r_n,
        reps: draws.len(),
        dropped: draws.len() - m,
        valid: 2 * (draws.len() - m) <= draws.len() && m > 0,
        bias_hat,
        bias_hat_mc_se: sd_hat_err / mf.sqrt(),
        bias_plus,
        bias_plus_mc_se: sd_plus_err / mf.sqrt(),
        coverage: kept.iter().filter(|(h, _, _)| h.covered).count() as f64 / mf,
        mean_se: kept.iter().map(|(h, _, _)| h.se).sum::<f64>() / mf,
        true_se_hat,
        true_se_plus,
        mean_theta_hat,
        mean_theta_plus,
        mean_theta_star: kept.iter().map(|(_, _, d)| d.theta_star).sum::<f64>() / mf,
        theta_star_mc_se: kept.iter().map(|(_, _, d)| d.theta_star_se).sum::<f64>() / mf,
        min_sigma2: draws
            .iter()
            .filter_map(|d| d.hat.map(|h| h.sigma2))
            .fold(f64::INFINITY, f64::min),
        negative_sigma2_1: draws.iter().filter(|d| d.hat.is_some_and(|h| h.sigma2_1 < 0.0)).count(),
        mean_included: kept.iter().map(|(h, _, _)| h.included as f64).sum::<f64>() / mf,
    }
}

/// All replications of one model in one cell, in replication order.
pub fn run_cell(cfg: &SimulationConfig, cell: &Cell, model: &OutcomeModel) -> Result<Vec<Vec<RepEstimate>>> {
    (0..cfg.reps as u64)
        .into_par_iter()
        .map(|rep| run_replication(cfg, cell, model, rep))
        .collect()
}

pub fn run_monte_carlo(cfg: &SimulationConfig, seed: u64) -> Result<SimulationReport> {
    cfg.validate()?;
    let mut cells = Vec::new();
    let mut rows = Vec::new();
    for &regime in &cfg.regimes {
        for n_index in 0..cfg.n.len() {
            let cell = Cell::build(cfg, regime, n_index, seed)?;
            cells.push(CellSummary {
                regime,
                n: cell.n,
                alpha: cell.alpha,
                volume: cell.volume,
                k: cell.k(),
                r_n: cell.r_n,
                kmedoids_cost: cell.clustering.cost(),
                kmedoids_swaps: cell.clustering.swaps(),
            });
            for &model in &cfg.models {
                let om = OutcomeModel::build(model, &cell.points, cfg.cliff_ord_self_loop)?;
                if cfg.truth == TruthMethod::Exact {
                    om.diagonal()?;
                }
                let reps = run_cell(cfg, &cell, &om)?;
                for (slot, &q) in cfg.estimands.iter().enumerate() {
                    let draws: Vec<RepEstimate> = reps.iter().map(|r| r[slot]).collect();
                    rows.push(aggregate(model, &cell, q, &draws));
                }
            }
        }
    }
    rows.sort_by(|a, b| (a.model, a.regime, a.n, a.estimand).cmp(&(b.model, b.regime, b.n, b.estimand)));
    Ok(SimulationReport {
        seed,
        config: cfg.clone(),
        cells,
        rows,
    })
}
