//! Number of clusters, two-stage randomization, and the ring design for
//! probing the interference decay exponent.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::clustering::Clustering;
use crate::error::{Error, Result};
use crate::geometry::PointSet;
use crate::rng::{self, tag};
use crate::scalar::Real;

/// Number of clusters balancing interference bias against variance:
/// `round(min(V, n)^(2g / (2g + d)))`, clamped to `1..=n`.
///
/// `gamma_tilde` is a lower bound on the decay exponent in the chosen unit
/// of length; `gamma_tilde = d` is the most conservative admissible value.
pub fn plan_k<F: Real>(volume: F, n: usize, gamma_tilde: F, dim: usize) -> Result<usize> {
    if n == 0 {
        return Err(Error::param("n", "must be positive"));
    }
    if dim == 0 {
        return Err(Error::param("dim", "must be positive"));
    }
    if !(volume > F::zero()) || !volume.is_finite() {
        return Err(Error::param("volume", "must be positive and finite"));
    }
    let d = F::of_usize(dim);
    if !(gamma_tilde >= d) || !gamma_tilde.is_finite() {
        return Err(Error::GammaBelowDimension {
            gamma: gamma_tilde.to_f64_lossy(),
            dim,
        });
    }
    let two = F::of(2.0);
    let base = volume.min(F::of_usize(n));
    let k = base.powf(two * gamma_tilde / (two * gamma_tilde + d)).round();
    let k = k.to_usize().unwrap_or(n);
    Ok(k.clamp(1, n))
}

/// How much interference shrinks when distance doubles, `2^-gamma`; echoed in
/// reports so a chosen unit of length can be sanity-checked.
pub fn doubling_decay<F: Real>(gamma_tilde: F) -> F {
    F::of(2.0).powf(-gamma_tilde)
}

/// Parameters of the two-stage design: clusters are treated with
/// probability `q`, then units of treated clusters with probability `p`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DesignParams<F = f64> {
    pub p: F,
    pub q: F,
    pub k: usize,
    pub seed: u64,
}

impl<F: Real> DesignParams<F> {
    pub fn new(p: F, q: F, k: usize, seed: u64) -> Result<Self> {
        let params = DesignParams { p, q, k, seed };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        check_probability("p", self.p)?;
        check_probability("q", self.q)?;
        if self.k == 0 {
            return Err(Error::param("k", "must be at least 1"));
        }
        Ok(())
    }
}

pub(crate) fn check_probability<F: Real>(name: &'static str, x: F) -> Result<()> {
    if x > F::zero() && x < F::one() {
        Ok(())
    } else {
        Err(Error::param(name, format!("must lie in (0, 1), got {x}")))
    }
}

/// One realization of the two-stage design.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AssignmentDraw {
    /// `W_j` per cluster.
    pub clusters: Vec<bool>,
    /// `D_i` per unit.
    pub units: Vec<bool>,
}

impl AssignmentDraw {
    /// Check lengths and that control clusters hold only control units.
    pub fn validate<F: Real>(&self, c: &Clustering<F>) -> Result<()> {
        if self.clusters.len() != c.k() {
            return Err(Error::KMismatch {
                expected: c.k(),
                found: self.clusters.len(),
            });
        }
        if self.units.len() != c.n() {
            return Err(Error::param(
                "draw",
                format!("{} unit assignments for {} units", self.units.len(), c.n()),
            ));
        }
        if let Some(i) = (0..c.n()).find(|&i| self.units[i] && !self.clusters[c.cluster_of(i)]) {
            return Err(Error::param("draw", format!("unit {i} is treated inside a control cluster")));
        }
        Ok(())
    }

    pub fn treated_clusters(&self) -> usize {
        self.clusters.iter().filter(|&&w| w).count()
    }

    pub fn treated_units(&self) -> usize {
        self.units.iter().filter(|&&d| d).count()
    }
}

/// Draw `(W, D)` for replication `replication`. Each cluster uses its own
/// stream keyed by `(seed, replication, cluster)`.
pub fn draw_assignment<F: Real>(c: &Clustering<F>, params: &DesignParams<F>, replication: u64) -> Result<AssignmentDraw> {
    params.validate()?;
    if params.k != c.k() {
        return Err(Error::KMismatch {
            expected: params.k,
            found: c.k(),
        });
    }
    let p = params.p.to_f64_lossy();
    let q = params.q.to_f64_lossy();
    let mut clusters = vec![false; c.k()];
    let mut units = vec![false; c.n()];
    for (j, members) in c.members().into_iter().enumerate() {
        let mut rng = rng::stream(params.seed, tag::CLUSTER_ARM, &[replication, j as u64]);
        let w = rng.random::<f64>() < q;
        clusters[j] = w;
        if w {
            for i in members {
                units[i] = rng.random::<f64>() < p;
            }
        }
    }
    Ok(AssignmentDraw { clusters, units })
}

/// How clusters are allotted to ring arms.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArmRule {
    /// Each cluster independently uniform over `0..=T`.
    Uniform,
    /// Arms dealt round-robin from a random starting arm, then shuffled
    /// over clusters: every arm gets `floor(k / (T + 1))` or one more
    /// cluster, and each cluster is still uniform over `0..=T`.
    Balanced,
    /// Fixed arm per cluster.
    Fixed(Vec<usize>),
}

/// Ring design: in arm `t >= 1` a cluster treats exactly the units whose
/// distance to its medoid lies in `(t w, (t + 1) w]`; arm 0 is pure control.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GammaDesign {
    pub arms: Vec<usize>,
    pub treated: Vec<bool>,
    /// Clusters in an arm `t >= 1` whose ring holds no units.
    pub empty_rings: Vec<usize>,
}

impl GammaDesign {
    pub fn arm_count(&self, t: usize) -> usize {
        self.arms.iter().filter(|&&a| a == t).count()
    }
}

/// Randomize clusters over `T + 1` ring arms. `ring_width` is the ring
/// thickness in the caller's unit of length.
pub fn variogram_design<F: Real>(
    ps: &PointSet<F>,
    c: &Clustering<F>,
    arms_t: usize,
    ring_width: F,
    rule: &ArmRule,
    seed: u64,
    replication: u64,
) -> Result<GammaDesign> {
    if arms_t < 1 {
        return Err(Error::param("T", "need at least one ring arm"));
    }
    if !(ring_width > F::zero()) {
        return Err(Error::param("ring_width", "must be positive"));
    }
    let arms: Vec<usize> = match rule {
        ArmRule::Uniform => (0..c.k())
            .map(|j| {
                rng::stream(seed, tag::RING_ARM, &[replication, j as u64]).random_range(0..=arms_t)
            })
            .collect(),
        ArmRule::Balanced => {
            let mut r = rng::stream(seed, tag::RING_ARM, &[replication, u64::MAX]);
            let offset = r.random_range(0..=arms_t);
            let mut arms: Vec<usize> = (0..c.k()).map(|j| (j + offset) % (arms_t + 1)).collect();
            arms.shuffle(&mut r);
            arms
        }
        ArmRule::Fixed(a) => {
            if a.len() != c.k() {
                return Err(Error::KMismatch {
                    expected: c.k(),
                    found: a.len(),
                });
            }
            if a.iter().any(|&t| t > arms_t) {
                return Err(Error::param("arms", format!("arm index exceeds T = {arms_t}")));
            }
            a.clone()
        }
    };
    let mut treated = vec![false; c.n()];
    let mut filled = vec![false; c.k()];
    for i in 0..c.n() {
        let j = c.cluster_of(i);
        let t = arms[j];
        if t == 0 {
            continue;
        }
        let d = ps.dist(i, c.medoids()[j]);
        let lo = F::of_usize(t) * ring_width;
        if d > lo && d <= lo + ring_width {
            treated[i] = true;
            filled[j] = true;
        }
    }
    let empty_rings = (0..c.k()).filter(|&j| arms[j] > 0 && !filled[j]).collect();
    Ok(GammaDesign {
        arms,
        treated,
        empty_rings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clustering::k_medoids;
    use crate::geometry::Metric;
    use rand::SeedableRng;

    #[test]
    fn plan_k_reproduces_empirical_calibrations() {
        let v = (1200.0 / 35.0) * (700.0 / 35.0);
        assert_eq!(plan_k(v, 38_000, 2.0, 2).unwrap(), 78);
        assert_eq!(plan_k(685.7, 38_000, 2.0, 2).unwrap(), 78);
        assert_eq!(plan_k(84.0, 38_000, 2.0, 2).unwrap(), 19);
        assert_eq!(plan_k(768.0, 34_000, 2.0, 2).unwrap(), 84);
        assert_eq!(plan_k(768.0f32, 34_000, 2.0, 2).unwrap(), 84);
    }

    #[test]
    fn plan_k_validation_and_clamps() {
        assert_eq!(
            plan_k(100.0, 50, 1.5, 2),
            Err(Error::GammaBelowDimension { gamma: 1.5, dim: 2 })
        );
        assert!(plan_k(0.0, 50, 2.0, 2).is_err());
        assert_eq!(plan_k(0.2, 50, 2.0, 2).unwrap(), 1);
        // min(V, n) caps the base, so k <= n
        assert!(plan_k(1e12, 10, 50.0, 1).unwrap() <= 10);
        assert!((doubling_decay(2.0f64) - 0.25).abs() < 1e-15);
    }

    #[test]
    fn plan_k_is_monotone() {
        let mut last = 0;
        for g in [2.0, 2.5, 3.0, 4.0, 8.0] {
            let k = plan_k(500.0, 1000, g, 2).unwrap();
            assert!(k >= last);
            last = k;
        }
        let mut last = 0;
        for v in [10.0, 50.0, 200.0, 999.0] {
            let k = plan_k(v, 1000, 2.0, 2).unwrap();
            assert!(k >= last);
            last = k;
        }
    }

    fn grid_clustering(k: usize, per: usize) -> (PointSet<f64>, Clustering<f64>) {
        let mut pts = Vec::new();
        for j in 0..k {
            for u in 0..per {
                pts.push([100.0 * j as f64 + u as f64 * 0.01, 0.0]);
            }
        }
        let ps = PointSet::new(&pts, Metric::Euclidean).unwrap();
        let medoids: Vec<usize> = (0..k).map(|j| j * per).collect();
        let c = Clustering::from_medoids(&ps, &medoids).unwrap();
        (ps, c)
    }

    #[test]
    fn draws_respect_the_design_constraint() {
        let (_, c) = grid_clustering(12, 9);
        let params = DesignParams::new(0.7, 0.6, 12, 99).unwrap();
        for rep in 0..200 {
            let draw = draw_assignment(&c, &params, rep).unwrap();
            draw.validate(&c).unwrap();
            for i in 0..c.n() {
                assert!(!draw.units[i] || draw.clusters[c.cluster_of(i)]);
            }
        }
        let bad = DesignParams::new(0.7, 0.6, 3, 99).unwrap();
        assert_eq!(
            draw_assignment(&c, &bad, 0),
            Err(Error::KMismatch { expected: 3, found: 12 })
        );
        assert!(DesignParams::new(1.0, 0.5, 3, 0).is_err());
        assert!(DesignParams::new(0.5, 0.0, 3, 0).is_err());
    }

    #[test]
    fn draws_are_reproducible() {
        let (_, c) = grid_clustering(5, 4);
        let params = DesignParams::new(0.5, 0.5, 5, 3).unwrap();
        assert_eq!(draw_assignment(&c, &params, 8).unwrap(), draw_assignment(&c, &params, 8).unwrap());
        let differs = (0..20).any(|r| draw_assignment(&c, &params, r).unwrap() != draw_assignment(&c, &params, 0).unwrap());
        assert!(differs);
    }

    #[test]
    fn control_clusters_force_control() {
        let (_, c) = grid_clustering(4, 5);
        // q just above zero: every cluster lands in control
        let params = DesignParams::new(0.7, 1e-300, 4, 1).unwrap();
        let draw = draw_assignment(&c, &params, 0).unwrap();
        assert!(draw.clusters.iter().all(|w| !w));
        assert!(draw.units.iter().all(|d| !d));
    }

    #[test]
    fn treated_share_when_all_clusters_treated() {
        let (_, c) = grid_clustering(100, 100);
        let params = DesignParams::new(0.7, 1.0 - 1e-16, 100, 5).unwrap();
        let draw = draw_assignment(&c, &params, 0).unwrap();
        assert!(draw.clusters.iter().all(|&w| w));
        let share = draw.treated_units() as f64 / 10_000.0;
        assert!((0.66..=0.74).contains(&share), "share {share}");
    }

    #[test]
    fn cluster_treatment_rate_and_marginals() {
        let (_, c) = grid_clustering(3, 2);
        let (p, q) = (0.7, 0.6);
        let params = DesignParams::new(p, q, 3, 17).unwrap();
        let reps = 10_000;
        let mut w_hits = 0usize;
        let mut d_hits = vec![0usize; c.n()];
        let mut ctrl_in_treated = vec![0usize; c.n()];
        let mut w01 = 0usize;
        let mut w0 = 0usize;
        let mut w1 = 0usize;
        for r in 0..reps {
            let draw = draw_assignment(&c, &params, r).unwrap();
            w_hits += draw.clusters[0] as usize;
            w0 += draw.clusters[0] as usize;
            w1 += draw.clusters[1] as usize;
            w01 += (draw.clusters[0] && draw.clusters[1]) as usize;
            for i in 0..c.n() {
                d_hits[i] += draw.units[i] as usize;
                ctrl_in_treated[i] += (!draw.units[i] && draw.clusters[c.cluster_of(i)]) as usize;
            }
        }
        let n = reps as f64;
        assert!((w_hits as f64 / n - q).abs() < 0.02);
        let se = |x: f64| (x * (1.0 - x) / n).sqrt();
        for i in 0..c.n() {
            assert!((d_hits[i] as f64 / n - p * q).abs() < 3.0 * se(p * q));
            let target = (1.0 - p) * q;
            assert!((ctrl_in_treated[i] as f64 / n - target).abs() < 3.0 * se(target));
        }
        let cov = w01 as f64 / n - (w0 as f64 / n) * (w1 as f64 / n);
        assert!(cov.abs() < 3.0 * q * (1.0 - q) / n.sqrt());
    }

    #[test]
    fn ring_design_examples() {
        // medoid at the origin with units at radii 0.5, 1.5, 2.5
        let ps = PointSet::new(&[[0.0, 0.0], [0.5, 0.0], [0.0, 1.5], [-2.5, 0.0]], Metric::Euclidean).unwrap();
        let c = Clustering::from_medoids(&ps, &[0]).unwrap();
        let g = variogram_design(&ps, &c, 3, 1.0, &ArmRule::Fixed(vec![1]), 0, 0).unwrap();
        assert_eq!(g.treated, vec![false, false, true, false]);
        assert!(g.empty_rings.is_empty());

        let g = variogram_design(&ps, &c, 1, 1.0, &ArmRule::Fixed(vec![0]), 0, 0).unwrap();
        assert!(g.treated.iter().all(|t| !t));

        let g = variogram_design(&ps, &c, 5, 1.0, &ArmRule::Fixed(vec![4]), 0, 0).unwrap();
        assert_eq!(g.empty_rings, vec![0]);
        assert!(variogram_design(&ps, &c, 0, 1.0, &ArmRule::Uniform, 0, 0).is_err());
    }

    #[test]
    fn ring_units_lie_outside_interiors() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let pts: Vec<[f64; 2]> = (0..400).map(|_| [rng.random_range(0.0..40.0), rng.random_range(0.0..40.0)]).collect();
        let ps = PointSet::new(&pts, Metric::Euclidean).unwrap();
        let c = k_medoids(&ps, 8, 0).unwrap();
        for rep in 0..20 {
            let g = variogram_design(&ps, &c, 4, 1.0, &ArmRule::Uniform, 3, rep).unwrap();
            for i in 0..ps.len() {
                let j = c.cluster_of(i);
                let t = g.arms[j];
                let d = ps.dist(i, c.medoids()[j]);
                if g.treated[i] {
                    assert!(t >= 1 && d > t as f64 && d <= t as f64 + 1.0);
                }
                if t == 0 {
                    assert!(!g.treated[i]);
                }
            }
        }
    }

    #[test]
    fn uniform_arm_frequencies() {
        let ps = PointSet::line(&[0.0]).unwrap();
        let c = Clustering::from_medoids(&ps, &[0]).unwrap();
        let mut counts = [0usize; 5];
        for rep in 0..10_000 {
            let g = variogram_design(&ps, &c, 4, 1.0, &ArmRule::Uniform, 12, rep).unwrap();
            counts[g.arms[0]] += 1;
        }
        for count in counts {
            assert!((count as f64 / 10_000.0 - 0.2).abs() < 0.02);
        }
    }

    #[test]
    fn balanced_arms_fill_evenly() {
        let xs: Vec<f64> = (0..12).map(|i| i as f64 * 10.0).collect();
        let ps = PointSet::line(&xs).unwrap();
        let ids: Vec<usize> = (0..12).collect();
        let c = Clustering::from_medoids(&ps, &ids).unwrap();
        let mut first = [0usize; 5];
        for rep in 0..10_000 {
            let g = variogram_design(&ps, &c, 4, 1.0, &ArmRule::Balanced, 3, rep).unwrap();
            let mut sizes: Vec<usize> = (0..5).map(|t| g.arm_count(t)).collect();
            sizes.sort_unstable();
            assert_eq!(sizes, vec![2, 2, 2, 3, 3]);
            first[g.arms[0]] += 1;
        }
        for count in first {
            assert!((count as f64 / 10_000.0 - 0.2).abs() < 0.02);
        }
    }
}
