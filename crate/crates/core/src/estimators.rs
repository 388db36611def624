//! Well-surrounded indicators, exact propensity scores, and Hájek
//! estimators for the direct, indirect, total and overall effects.
//!
//! A unit is well surrounded by arm `t` when every cluster meeting its
//! `r_n`-neighborhood was assigned `W = t`. Only well-surrounded units
//! enter the comparison, weighted by the inverse of the exact probability
//! of being included.

use std::fmt;
use std::str::FromStr;

use num_traits::Num;
use serde::{Deserialize, Serialize};

use crate::clustering::Clustering;
use crate::design::{check_probability, AssignmentDraw};
use crate::error::{Arm, Error, Result};
use crate::geometry::{Neighborhoods, PointSet};
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Estimand {
    #[serde(rename = "D")]
    Direct,
    #[serde(rename = "I")]
    Indirect,
    #[serde(rename = "T")]
    Total,
    #[serde(rename = "O")]
    Overall,
}

impl Estimand {
    pub const ALL: [Estimand; 4] = [Estimand::Direct, Estimand::Indirect, Estimand::Total, Estimand::Overall];

    pub fn code(self) -> &'static str {
        match self {
            Estimand::Direct => "D",
            Estimand::Indirect => "I",
            Estimand::Total => "T",
            Estimand::Overall => "O",
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Estimand::Direct => "direct",
            Estimand::Indirect => "indirect",
            Estimand::Total => "total",
            Estimand::Overall => "overall",
        }
    }
}

impl fmt::Display for Estimand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for Estimand {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "d" | "direct" => Ok(Estimand::Direct),
            "i" | "indirect" => Ok(Estimand::Indirect),
            "t" | "total" => Ok(Estimand::Total),
            "o" | "overall" => Ok(Estimand::Overall),
            _ => Err(Error::param("estimand", format!("unknown estimand {s:?}; use D, I, T or O"))),
        }
    }
}

/// Which clusters each unit's `r`-neighborhood touches, for a fixed
/// clustering and radius.
#[derive(Debug, Clone)]
pub struct Footprint {
    radius: f64,
    k: usize,
    cluster: Vec<usize>,
    neighborhoods: Neighborhoods,
    touched: Neighborhoods,
}

impl Footprint {
    pub fn new<F: Real>(ps: &PointSet<F>, c: &Clustering<F>, radius: F) -> Result<Self> {
        if ps.len() != c.n() {
            return Err(Error::param(
                "clustering",
                format!("clustering covers {} units, point set has {}", c.n(), ps.len()),
            ));
        }
        let neighborhoods = ps.neighborhoods(radius)?;
        let touched = neighborhoods
            .iter()
            .map(|nb| {
                let mut cl: Vec<usize> = nb.iter().map(|&j| c.cluster_of(j)).collect();
                cl.sort_unstable();
                cl.dedup();
                cl
            })
            .collect();
        Ok(Footprint {
            radius: radius.to_f64_lossy(),
            k: c.k(),
            cluster: c.assignment().to_vec(),
            neighborhoods,
            touched: Neighborhoods::from_lists(touched),
        })
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn n(&self) -> usize {
        self.cluster.len()
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn cluster_of(&self, i: usize) -> usize {
        self.cluster[i]
    }

    pub fn neighborhood(&self, i: usize) -> &[usize] {
        self.neighborhoods.of(i)
    }

    /// Distinct clusters meeting unit `i`'s neighborhood, ascending.
    pub fn touched(&self, i: usize) -> &[usize] {
        self.touched.of(i)
    }

    /// `phi_i`: number of clusters meeting unit `i`'s neighborhood.
    pub fn phi(&self, i: usize) -> usize {
        self.touched.of(i).len()
    }

    pub fn max_phi(&self) -> usize {
        (0..self.n()).map(|i| self.phi(i)).max().unwrap_or(0)
    }
}

/// `phi_i` for a single unit.
pub fn phi<F: Real>(ps: &PointSet<F>, c: &Clustering<F>, i: usize, radius: F) -> Result<usize> {
    let mut cl: Vec<usize> = ps.neighborhood(i, radius)?.into_iter().map(|j| c.cluster_of(j)).collect();
    cl.sort_unstable();
    cl.dedup();
    Ok(cl.len())
}

/// Every cluster meeting `i`'s neighborhood was assigned arm `t`.
pub fn well_surrounded(fp: &Footprint, i: usize, arm: Arm, draw: &AssignmentDraw) -> bool {
    let want = arm == Arm::Treated;
    fp.touched(i).iter().all(|&j| draw.clusters[j] == want)
}

/// Inclusion indicator `T^Q_{ti}`.
pub fn indicator(q: Estimand, arm: Arm, i: usize, fp: &Footprint, draw: &AssignmentDraw) -> bool {
    let d = draw.units[i];
    match (q, arm) {
        (Estimand::Direct, Arm::Treated) => d && well_surrounded(fp, i, Arm::Treated, draw),
        (Estimand::Direct, Arm::Control) => !d && well_surrounded(fp, i, Arm::Treated, draw),
        (Estimand::Indirect, _) => !d && well_surrounded(fp, i, arm, draw),
        (Estimand::Total, Arm::Treated) => d && well_surrounded(fp, i, Arm::Treated, draw),
        (Estimand::Total, Arm::Control) => well_surrounded(fp, i, Arm::Control, draw),
        (Estimand::Overall, _) => well_surrounded(fp, i, arm, draw),
    }
}

/// Exact propensity `p^Q_{ti} = E[T^Q_{ti}]` under the two-stage design.
///
/// Generic over any numeric type so it can be checked in exact rational
/// arithmetic.
pub fn propensity<F: Num + Copy>(q_kind: Estimand, arm: Arm, p: F, q: F, phi: usize) -> F {
    let one = F::one();
    let q_phi = num_traits::pow(q, phi);
    let ctrl_phi = num_traits::pow(one - q, phi);
    match (q_kind, arm) {
        (Estimand::Direct, Arm::Treated) => p * q_phi,
        (Estimand::Direct, Arm::Control) => (one - p) * q_phi,
        (Estimand::Indirect, Arm::Treated) => (one - p) * q_phi,
        (Estimand::Indirect, Arm::Control) => ctrl_phi,
        (Estimand::Total, Arm::Treated) => p * q_phi,
        (Estimand::Total, Arm::Control) => ctrl_phi,
        (Estimand::Overall, Arm::Treated) => q_phi,
        (Estimand::Overall, Arm::Control) => ctrl_phi,
    }
}

/// Positive lower bound on every propensity given the largest `phi`.
pub fn overlap_bound<F: Real>(p: F, q: F, max_phi: usize) -> F {
    p.min(F::one() - p) * num_traits::pow(q.min(F::one() - q), max_phi)
}

/// Per-unit inputs of one estimand's Hájek estimator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitPanel<F = f64> {
    pub estimand: Estimand,
    pub y: Vec<F>,
    pub t1: Vec<bool>,
    pub t0: Vec<bool>,
    pub p1: Vec<F>,
    pub p0: Vec<F>,
    pub cluster: Vec<usize>,
    pub phi: Vec<usize>,
}

impl<F: Real> UnitPanel<F> {
    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn included(&self, arm: Arm) -> usize {
        self.indicators(arm).iter().filter(|&&x| x).count()
    }

    pub fn indicators(&self, arm: Arm) -> &[bool] {
        match arm {
            Arm::Treated => &self.t1,
            Arm::Control => &self.t0,
        }
    }

    pub fn propensities(&self, arm: Arm) -> &[F] {
        match arm {
            Arm::Treated => &self.p1,
            Arm::Control => &self.p0,
        }
    }
}

/// Assemble indicators and propensities for estimand `q_kind`.
pub fn build_panel<F: Real>(
    q_kind: Estimand,
    fp: &Footprint,
    draw: &AssignmentDraw,
    y: &[F],
    p: F,
    q: F,
) -> Result<UnitPanel<F>> {
    check_probability("p", p)?;
    check_probability("q", q)?;
    let n = fp.n();
    if y.len() != n || draw.units.len() != n {
        return Err(Error::param(
            "outcomes",
            format!("{} outcomes and {} assignments for {} units", y.len(), draw.units.len(), n),
        ));
    }
    if draw.clusters.len() != fp.k() {
        return Err(Error::KMismatch {
            expected: fp.k(),
            found: draw.clusters.len(),
        });
    }
    let mut panel = UnitPanel {
        estimand: q_kind,
        y: y.to_vec(),
        t1: Vec::with_capacity(n),
        t0: Vec::with_capacity(n),
        p1: Vec::with_capacity(n),
        p0: Vec::with_capacity(n),
        cluster: (0..n).map(|i| fp.cluster_of(i)).collect(),
        phi: (0..n).map(|i| fp.phi(i)).collect(),
    };
    for i in 0..n {
        let phi = fp.phi(i);
        panel.t1.push(indicator(q_kind, Arm::Treated, i, fp, draw));
        panel.t0.push(indicator(q_kind, Arm::Control, i, fp, draw));
        panel.p1.push(propensity(q_kind, Arm::Treated, p, q, phi));
        panel.p0.push(propensity(q_kind, Arm::Control, p, q, phi));
    }
    Ok(panel)
}

/// Inverse-propensity weighted mean outcome of one arm, `mu_t`.
pub fn arm_mean<F: Real>(panel: &UnitPanel<F>, arm: Arm) -> Result<F> {
    let ts = panel.indicators(arm);
    let ps = panel.propensities(arm);
    let mut num = F::zero();
    let mut den = F::zero();
    for i in 0..panel.n() {
        if ts[i] {
            num += panel.y[i] / ps[i];
            den += F::one() / ps[i];
        }
    }
    if den > F::zero() {
        Ok(num / den)
    } else {
        Err(Error::DegenerateDraw { arm })
    }
}

/// Hájek contrast of the treated and control arm means.
pub fn hajek<F: Real>(panel: &UnitPanel<F>) -> Result<F> {
    Ok(arm_mean(panel, Arm::Treated)? - arm_mean(panel, Arm::Control)?)
}

/// Unweighted difference of the two groups' mean outcomes.
pub fn diff_in_means<F: Real>(panel: &UnitPanel<F>) -> Result<F> {
    let mean = |arm: Arm| -> Result<F> {
        let (sum, count) = panel
            .indicators(arm)
            .iter()
            .zip(&panel.y)
            .filter(|(&t, _)| t)
            .fold((F::zero(), 0usize), |(s, c), (_, &y)| (s + y, c + 1));
        if count == 0 {
            Err(Error::DegenerateDraw { arm })
        } else {
            Ok(sum / F::of_usize(count))
        }
    };
    Ok(mean(Arm::Treated)? - mean(Arm::Control)?)
}

/// Point estimates for one estimand.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateReport<F = f64> {
    pub estimand: Estimand,
    pub theta_hat: F,
    pub n_included_1: usize,
    pub n_included_0: usize,
    pub r_n: F,
    /// Difference in means with `r_n = 0`.
    pub theta_hat_plus: F,
    pub n_plus_1: usize,
    pub n_plus_0: usize,
}

/// Well-surrounded estimate with radius `fp.radius()` alongside the plain
/// difference in means computed from `fp_zero` (the radius-0 footprint).
pub fn estimate<F: Real>(
    q_kind: Estimand,
    fp: &Footprint,
    fp_zero: &Footprint,
    draw: &AssignmentDraw,
    y: &[F],
    p: F,
    q: F,
) -> Result<(EstimateReport<F>, UnitPanel<F>)> {
    let panel = build_panel(q_kind, fp, draw, y, p, q)?;
    let theta_hat = hajek(&panel)?;
    let plus = build_panel(q_kind, fp_zero, draw, y, p, q)?;
    let theta_hat_plus = diff_in_means(&plus)?;
    let report = EstimateReport {
        estimand: q_kind,
        theta_hat,
        n_included_1: panel.included(Arm::Treated),
        n_included_0: panel.included(Arm::Control),
        r_n: F::of(fp.radius()),
        theta_hat_plus,
        n_plus_1: plus.included(Arm::Treated),
        n_plus_0: plus.included(Arm::Control),
    };
    Ok((report, panel))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn two_cluster_line() -> (PointSet<f64>, Clustering<f64>) {
        let ps = PointSet::line(&[0.0, 1.0, 10.0, 11.0]).unwrap();
        let c = Clustering::from_medoids(&ps, &[0, 2]).unwrap();
        (ps, c)
    }

    fn draw(w: &[bool], d: &[bool]) -> AssignmentDraw {
        AssignmentDraw {
            clusters: w.to_vec(),
            units: d.to_vec(),
        }
    }

    #[test]
    fn phi_examples() {
        let (ps, c) = two_cluster_line();
        assert_eq!(phi(&ps, &c, 1, 0.0).unwrap(), 1);
        assert_eq!(phi(&ps, &c, 1, 9.0).unwrap(), 2);
        assert_eq!(phi(&ps, &c, 0, 9.0).unwrap(), 1);
        assert_eq!(phi(&ps, &c, 1, ps.diameter()).unwrap(), 2);
        let fp = Footprint::new(&ps, &c, 9.0).unwrap();
        assert_eq!(fp.neighborhood(1), &[0, 1, 2]);
        assert_eq!(fp.phi(1), 2);
        assert_eq!(fp.max_phi(), 2);
    }

    #[test]
    fn well_surrounded_examples() {
        let (ps, c) = two_cluster_line();
        let dr = draw(&[true, false], &[true, false, false, false]);
        let fp0 = Footprint::new(&ps, &c, 0.0).unwrap();
        for i in 0..4 {
            let own = dr.clusters[c.cluster_of(i)];
            assert_eq!(well_surrounded(&fp0, i, Arm::Treated, &dr), own);
            assert_eq!(well_surrounded(&fp0, i, Arm::Control, &dr), !own);
        }
        let fp9 = Footprint::new(&ps, &c, 9.0).unwrap();
        assert!(!well_surrounded(&fp9, 1, Arm::Treated, &dr));
        assert!(well_surrounded(&fp9, 0, Arm::Treated, &dr));
        let all = draw(&[true, true], &[false; 4]);
        assert!((0..4).all(|i| well_surrounded(&fp9, i, Arm::Treated, &all)));
    }

    #[test]
    fn indicator_examples() {
        let (ps, c) = two_cluster_line();
        let fp = Footprint::new(&ps, &c, 9.0).unwrap();
        let dr = draw(&[true, false], &[true, false, false, false]);
        for i in 0..4 {
            for arm in [Arm::Treated, Arm::Control] {
                assert_eq!(indicator(Estimand::Overall, arm, i, &fp, &dr), well_surrounded(&fp, i, arm, &dr));
                assert_eq!(indicator(Estimand::Total, Arm::Control, i, &fp, &dr), well_surrounded(&fp, i, Arm::Control, &dr));
            }
        }
        assert!(!indicator(Estimand::Direct, Arm::Control, 0, &fp, &dr));
        assert!(indicator(Estimand::Direct, Arm::Treated, 0, &fp, &dr));
    }

    #[test]
    fn propensity_examples() {
        assert_eq!(propensity(Estimand::Overall, Arm::Treated, 0.7, 0.6, 1), 0.6);
        assert!((propensity(Estimand::Direct, Arm::Treated, 0.7f64, 0.6, 2) - 0.252).abs() < 1e-15);
        assert!((propensity(Estimand::Indirect, Arm::Control, 0.7f64, 0.6, 3) - 0.064).abs() < 1e-15);
        assert!((propensity(Estimand::Total, Arm::Treated, 0.7f64, 0.6, 1) - 0.42).abs() < 1e-15);
        assert!((propensity(Estimand::Indirect, Arm::Treated, 0.7f32, 0.6, 1) - 0.18).abs() < 1e-6);
    }

    /// Six units, hand-set indicators and propensities.
    fn six_unit_panel() -> UnitPanel<f64> {
        UnitPanel {
            estimand: Estimand::Overall,
            y: vec![2.0, 4.0, 7.0, 1.0, 3.0, 5.0],
            t1: vec![true, true, false, false, false, true],
            t0: vec![false, false, true, true, true, false],
            p1: vec![0.5, 0.25, 0.5, 0.5, 0.5, 0.5],
            p0: vec![0.5, 0.5, 0.2, 0.4, 0.4, 0.5],
            cluster: vec![0, 0, 1, 1, 2, 2],
            phi: vec![1; 6],
        }
    }

    #[test]
    fn hajek_hand_fixture() {
        // treated: weights 2, 4, 2 on y 2, 4, 5 -> (4 + 16 + 10) / 8 = 3.75
        // control: weights 5, 2.5, 2.5 on y 7, 1, 3 -> (35 + 2.5 + 7.5) / 10 = 4.5
        let panel = six_unit_panel();
        assert!((arm_mean(&panel, Arm::Treated).unwrap() - 3.75).abs() < 1e-15);
        assert!((arm_mean(&panel, Arm::Control).unwrap() - 4.5).abs() < 1e-15);
        assert!((hajek(&panel).unwrap() - (-0.75)).abs() < 1e-15);
        // unweighted: 11/3 - 11/3
        assert!(diff_in_means(&panel).unwrap().abs() < 1e-15);
    }

    #[test]
    fn empty_arm_is_degenerate() {
        let mut panel = six_unit_panel();
        panel.t0 = vec![false; 6];
        assert_eq!(hajek(&panel), Err(Error::DegenerateDraw { arm: Arm::Control }));
        assert_eq!(diff_in_means(&panel), Err(Error::DegenerateDraw { arm: Arm::Control }));
        panel.t1 = vec![false; 6];
        assert_eq!(hajek(&panel), Err(Error::DegenerateDraw { arm: Arm::Treated }));
    }

    #[test]
    fn constant_outcomes_give_zero() {
        let mut panel = six_unit_panel();
        panel.y = vec![3.5; 6];
        assert!(hajek(&panel).unwrap().abs() < 1e-14);
        assert!(diff_in_means(&panel).unwrap().abs() < 1e-14);
    }

    #[test]
    fn indirect_comparator_on_line_fixture() {
        // D=0 in treated cluster vs all of control cluster
        let (ps, c) = two_cluster_line();
        let fp0 = Footprint::new(&ps, &c, 0.0).unwrap();
        let dr = draw(&[true, false], &[true, false, false, false]);
        let y = [3.0f64, 5.0, 1.0, 2.0];
        let panel = build_panel(Estimand::Indirect, &fp0, &dr, &y, 0.7, 0.6).unwrap();
        assert_eq!(diff_in_means(&panel).unwrap(), 5.0 - 1.5);
        for q_kind in Estimand::ALL {
            let panel = build_panel(q_kind, &fp0, &dr, &y, 0.7, 0.6).unwrap();
            assert!((hajek(&panel).unwrap() - diff_in_means(&panel).unwrap()).abs() < 1e-12);
        }
        let (report, _) = estimate(Estimand::Overall, &fp0, &fp0, &dr, &y, 0.7, 0.6).unwrap();
        assert_eq!(report.theta_hat, 4.0 - 1.5);
        assert_eq!((report.n_included_1, report.n_included_0), (2, 2));
    }

    #[test]
    fn overlap_bound_holds() {
        let (ps, c) = two_cluster_line();
        let fp = Footprint::new(&ps, &c, 9.0).unwrap();
        let bound = overlap_bound(0.7, 0.6, fp.max_phi());
        for q_kind in Estimand::ALL {
            for arm in [Arm::Treated, Arm::Control] {
                for i in 0..4 {
                    assert!(propensity(q_kind, arm, 0.7, 0.6, fp.phi(i)) >= bound);
                }
            }
        }
    }

    #[test]
    fn estimand_parsing() {
        assert_eq!("O".parse::<Estimand>().unwrap(), Estimand::Overall);
        assert_eq!("indirect".parse::<Estimand>().unwrap(), Estimand::Indirect);
        assert!("x".parse::<Estimand>().is_err());
    }

    proptest! {
        #[test]
        fn location_shift_leaves_estimate_unchanged(shift in -100.0f64..100.0, seed in 0u64..50) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let mut panel = six_unit_panel();
            panel.y = (0..6).map(|_| rng.random_range(-5.0..5.0)).collect();
            let base = hajek(&panel).unwrap();
            let m1 = arm_mean(&panel, Arm::Treated).unwrap();
            panel.y.iter_mut().for_each(|y| *y += shift);
            prop_assert!((hajek(&panel).unwrap() - base).abs() < 1e-9);
            prop_assert!((arm_mean(&panel, Arm::Treated).unwrap() - m1 - shift).abs() < 1e-9);
        }

        #[test]
        fn inclusion_shrinks_with_radius(seed in 0u64..200, r1 in 0.0f64..6.0, dr in 0.0f64..6.0) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let xs: Vec<f64> = (0..12).map(|_| rng.random_range(0.0..30.0)).collect();
            let ps = PointSet::line(&xs).unwrap();
            let c = crate::clustering::k_medoids(&ps, 4, 0).unwrap();
            let clusters: Vec<bool> = (0..4).map(|_| rng.random()).collect();
            let units: Vec<bool> = (0..12).map(|i| clusters[c.cluster_of(i)] && rng.random()).collect();
            let dr_ = AssignmentDraw { clusters, units };
            let small = Footprint::new(&ps, &c, r1).unwrap();
            let large = Footprint::new(&ps, &c, r1 + dr).unwrap();
            for q_kind in Estimand::ALL {
                for arm in [Arm::Treated, Arm::Control] {
                    for i in 0..12 {
                        if indicator(q_kind, arm, i, &large, &dr_) {
                            prop_assert!(indicator(q_kind, arm, i, &small, &dr_));
                        }
                    }
                }
            }
        }
    }
}
