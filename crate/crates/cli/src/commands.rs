use std::fs;
use std::path::{Path, PathBuf};

use geocrt::clustering::{exclusion_radius, k_medoids};
use geocrt::design::{doubling_decay, draw_assignment, plan_k, ArmRule, AssignmentDraw, DesignParams};
use geocrt::estimators::{build_panel, diff_in_means, hajek, Footprint};
use geocrt::geometry::{PointSet, VolumeMethod};
use geocrt::inference::{ci_bias_aware, ci_undersmoothed, variance, BiasBound, ConfidenceInterval, DependencyStructure, IntervalKind};
use geocrt::simulation::{run_monte_carlo, run_variogram, Model, SimulationConfig, VariogramConfig};
use geocrt::{Arm, Clustering, Estimand, Metric};
use serde::Serialize;

use crate::io::*;

pub struct ClusterArgs {
    pub k: usize,
    pub seed: u64,
    pub input: PathBuf,
    pub out: PathBuf,
    pub unit_length: f64,
    pub metric: Metric,
    pub rn_multiplier: f64,
}

#[derive(Serialize)]
struct ClusterConfig {
    k: usize,
    metric: Metric,
    unit_length: f64,
    rn_multiplier: f64,
}

pub fn cluster(a: &ClusterArgs, stamp: bool) -> CliResult<String> {
    let file = InputFile::read("points", &a.input)?;
    let pts = parse_points(&file, &a.input)?;
    if pts.ids.is_empty() {
        return Err(input("points file lists no units"));
    }
    let ps = PointSet::new(&pts.coords, a.metric)?.rescaled(a.unit_length)?;
    if !(a.rn_multiplier > 0.0) {
        return Err(input("--rn-multiplier must be positive"));
    }
    let c = k_medoids(&ps, a.k, a.seed)?;
    let r_n = exclusion_radius(&c, a.rn_multiplier);
    let manifest = Manifest::new(
        "cluster",
        ClusterConfig {
            k: a.k,
            metric: a.metric,
            unit_length: a.unit_length,
            rn_multiplier: a.rn_multiplier,
        },
        Some(a.seed),
        &[&file],
        stamp,
    );
    let out = ClustersFile {
        schema_version: SCHEMA_VERSION,
        metric: a.metric,
        dim: ps.dim(),
        unit_length: a.unit_length,
        unit_ids: pts.ids,
        points: (0..ps.len()).map(|i| ps.point(i).to_vec()).collect(),
        k: c.k(),
        medoids: c.medoids().to_vec(),
        assignment: c.assignment().to_vec(),
        radii: c.radii().to_vec(),
        cost: c.cost(),
        r_n,
        rn_multiplier: a.rn_multiplier,
        volume: ps.region_volume(VolumeMethod::BoundingBox),
        manifest: Some(manifest),
    };
    write_json(&a.out, &out)?;
    Ok(format!("k = {}, cost = {}, r_n = {}", c.k(), c.cost(), r_n))
}

pub fn plan(volume: f64, n: usize, gamma: f64, dim: usize) -> CliResult<(usize, String)> {
    let k = plan_k(volume, n, gamma, dim)?;
    let note = format!(
        "gamma_tilde = {gamma}: interference shrinks by a factor of {} when distance doubles",
        doubling_decay(gamma)
    );
    Ok((k, note))
}

fn load_clusters(path: &Path) -> CliResult<(InputFile, ClustersFile, PointSet, Clustering)> {
    let file = InputFile::read("clusters", path)?;
    let cf: ClustersFile = parse_json(&file)?;
    check_schema(cf.schema_version, "clusters file")?;
    let n = cf.unit_ids.len();
    if cf.points.len() != n || cf.assignment.len() != n {
        return Err(input(format!(
            "clusters file lists {n} unit ids, {} points and {} assignments",
            cf.points.len(),
            cf.assignment.len()
        )));
    }
    if cf.points.iter().any(|p| p.len() != cf.dim) {
        return Err(input(format!("clusters file points must all have {} coordinates", cf.dim)));
    }
    let ps = PointSet::new(&cf.points, cf.metric)?;
    let c = Clustering::from_medoids(&ps, &cf.medoids)?;
    if c.assignment() != cf.assignment.as_slice() {
        return Err(input("clusters file assignment does not match nearest-medoid assignment of its medoids"));
    }
    Ok((file, cf, ps, c))
}

pub struct AssignArgs {
    pub clusters: PathBuf,
    pub p: f64,
    pub q: f64,
    pub seed: u64,
    pub replication: u64,
    pub out: PathBuf,
}

#[derive(Serialize)]
struct AssignConfig {
    p: f64,
    q: f64,
    replication: u64,
}

pub fn assign(a: &AssignArgs, stamp: bool) -> CliResult<String> {
    let (file, _, _, c) = load_clusters(&a.clusters)?;
    let params = DesignParams::new(a.p, a.q, c.k(), a.seed)?;
    let draw = draw_assignment(&c, &params, a.replication)?;
    let manifest = Manifest::new(
        "assign",
        AssignConfig {
            p: a.p,
            q: a.q,
            replication: a.replication,
        },
        Some(a.seed),
        &[&file],
        stamp,
    );
    let summary = format!(
        "{} of {} clusters treated, {} of {} units treated",
        draw.treated_clusters(),
        c.k(),
        draw.treated_units(),
        c.n()
    );
    write_json(
        &a.out,
        &DrawFile {
            schema_version: SCHEMA_VERSION,
            p: a.p,
            q: a.q,
            replication: a.replication,
            clusters: draw.clusters,
            units: draw.units,
            manifest: Some(manifest),
        },
    )?;
    Ok(summary)
}

pub struct EstimateArgs {
    pub clusters: PathBuf,
    pub draw: PathBuf,
    pub outcomes: PathBuf,
    pub estimands: Vec<Estimand>,
    pub rn_multiplier: f64,
    pub bias: Option<(f64, f64)>,
    pub strict_paper: bool,
    pub out: PathBuf,
}

#[derive(Serialize)]
struct EstimateConfig {
    estimands: Vec<Estimand>,
    rn_multiplier: f64,
    bias_c: Option<f64>,
    bias_gamma: Option<f64>,
    strict_paper: bool,
}

#[derive(Debug, Serialize)]
struct EstimateEntry {
    estimand: Estimand,
    theta_hat: Option<f64>,
    n_included_1: usize,
    n_included_0: usize,
    theta_hat_plus: Option<f64>,
    n_plus_1: usize,
    n_plus_0: usize,
    sigma2_1: Option<f64>,
    sigma2_2: Option<f64>,
    sigma2: Option<f64>,
    se: Option<f64>,
    ci_low: Option<f64>,
    ci_high: Option<f64>,
    ci_kind: Option<IntervalKind>,
    intervals: Vec<ConfidenceInterval>,
    dropped_reason: Option<String>,
    plus_dropped_reason: Option<String>,
}

#[derive(Serialize)]
struct EstimateReportFile {
    schema_version: u32,
    n: usize,
    k: usize,
    p: f64,
    q: f64,
    r_n: f64,
    rn_multiplier: f64,
    estimates: Vec<EstimateEntry>,
    manifest: Manifest,
}

pub fn estimate(a: &EstimateArgs, stamp: bool) -> CliResult<(String, bool)> {
    let (cfile, cf, ps, c) = load_clusters(&a.clusters)?;
    let dfile = InputFile::read("draw", &a.draw)?;
    let df: DrawFile = parse_json(&dfile)?;
    check_schema(df.schema_version, "draw file")?;
    let draw = AssignmentDraw {
        clusters: df.clusters,
        units: df.units,
    };
    draw.validate(&c)?;
    let ofile = InputFile::read("outcomes", &a.outcomes)?;
    let y = parse_outcomes_csv(ofile.text()?, &cf.unit_ids)?;
    if !(a.rn_multiplier >= 0.0) || !a.rn_multiplier.is_finite() {
        return Err(input("--rn-multiplier must be nonnegative"));
    }
    let bound = match a.bias {
        Some((c_, gamma)) => Some(BiasBound {
            c: c_,
            gamma,
            dim: cf.dim,
        }),
        None if a.strict_paper => return Err(input("--strict-paper needs --bias-c and --bias-gamma")),
        None => None,
    };
    let r_n = exclusion_radius(&c, a.rn_multiplier);
    let fp = Footprint::new(&ps, &c, r_n)?;
    let fp_zero = Footprint::new(&ps, &c, 0.0)?;
    let dep = DependencyStructure::from_footprint(&fp);
    let k = c.k();

    let mut entries = Vec::new();
    for &q_kind in &a.estimands {
        let panel = build_panel(q_kind, &fp, &draw, &y, df.p, df.q)?;
        let plus = build_panel(q_kind, &fp_zero, &draw, &y, df.p, df.q)?;
        let mut e = EstimateEntry {
            estimand: q_kind,
            theta_hat: None,
            n_included_1: panel.included(Arm::Treated),
            n_included_0: panel.included(Arm::Control),
            theta_hat_plus: None,
            n_plus_1: plus.included(Arm::Treated),
            n_plus_0: plus.included(Arm::Control),
            sigma2_1: None,
            sigma2_2: None,
            sigma2: None,
            se: None,
            ci_low: None,
            ci_high: None,
            ci_kind: None,
            intervals: Vec::new(),
            dropped_reason: None,
            plus_dropped_reason: None,
        };
        match diff_in_means(&plus) {
            Ok(v) => e.theta_hat_plus = Some(v),
            Err(err) => e.plus_dropped_reason = Some(err.to_string()),
        }
        match hajek(&panel).and_then(|theta| Ok((theta, variance(&panel, &dep)?))) {
            Ok((theta, var)) => {
                e.theta_hat = Some(theta);
                e.sigma2_1 = Some(var.sigma2_1);
                e.sigma2_2 = Some(var.sigma2_2);
                e.sigma2 = Some(var.sigma2);
                e.se = Some(var.se());
                e.intervals.push(ci_undersmoothed(theta, var.sigma2, k)?);
                if let Some(b) = bound {
                    e.intervals.push(ci_bias_aware(theta, var.sigma2, k, b, r_n, false)?);
                    if a.strict_paper {
                        e.intervals.push(ci_bias_aware(theta, var.sigma2, k, b, r_n, true)?);
                    }
                }
                let primary = if bound.is_some() { &e.intervals[1] } else { &e.intervals[0] };
                e.ci_low = Some(primary.lower);
                e.ci_high = Some(primary.upper);
                e.ci_kind = Some(primary.kind);
            }
            Err(err) if err.is_statistical() => e.dropped_reason = Some(err.to_string()),
            Err(err) => return Err(err.into()),
        }
        entries.push(e);
    }

    let dropped = entries.iter().any(|e| e.dropped_reason.is_some());
    let summary = entries
        .iter()
        .map(|e| match (e.theta_hat, e.ci_low, e.ci_high) {
            (Some(t), Some(lo), Some(hi)) => format!("{}: {t} [{lo}, {hi}]", e.estimand.code()),
            _ => format!("{}: dropped ({})", e.estimand.code(), e.dropped_reason.as_deref().unwrap_or("")),
        })
        .collect::<Vec<_>>()
        .join("\n");
    let manifest = Manifest::new(
        "estimate",
        EstimateConfig {
            estimands: a.estimands.clone(),
            rn_multiplier: a.rn_multiplier,
            bias_c: a.bias.map(|b| b.0),
            bias_gamma: a.bias.map(|b| b.1),
            strict_paper: a.strict_paper,
        },
        None,
        &[&cfile, &dfile, &ofile],
        stamp,
    );
    write_json(
        &a.out,
        &EstimateReportFile {
            schema_version: SCHEMA_VERSION,
            n: c.n(),
            k,
            p: df.p,
            q: df.q,
            r_n,
            rn_multiplier: a.rn_multiplier,
            estimates: entries,
            manifest,
        },
    )?;
    Ok((summary, dropped))
}

pub struct SimulateArgs {
    pub config: Option<PathBuf>,
    pub reps: Option<usize>,
    pub seed: u64,
    pub out: PathBuf,
    pub json: Option<PathBuf>,
}

pub fn simulate(a: &SimulateArgs, stamp: bool) -> CliResult<String> {
    let (mut cfg, inputs) = match &a.config {
        Some(path) => {
            let file = InputFile::read("config", path)?;
            (SimulationConfig::from_toml(file.text()?)?, vec![file])
        }
        None => (SimulationConfig::default(), Vec::new()),
    };
    if let Some(reps) = a.reps {
        cfg.reps = reps;
        cfg.validate()?;
    }
    let report = run_monte_carlo(&cfg, a.seed)?;
    let manifest = Manifest::new("simulate", &cfg, Some(a.seed), &inputs.iter().collect::<Vec<_>>(), stamp);

    let mut w = csv::Writer::from_writer(Vec::new());
    for row in &report.rows {
        w.serialize(row).map_err(|e| CliError::Output(format!("cannot format report row: {e}")))?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::Output(e.to_string()))?;
    fs::write(&a.out, bytes).map_err(|e| CliError::Output(format!("cannot write {}: {e}", a.out.display())))?;
    let mut sidecar = a.out.clone().into_os_string();
    sidecar.push(".manifest.json");
    write_json(Path::new(&sidecar), &manifest)?;
    if let Some(path) = &a.json {
        #[derive(Serialize)]
        struct Full<'a> {
            schema_version: u32,
            report: &'a geocrt::simulation::SimulationReport,
            manifest: &'a Manifest,
        }
        write_json(
            path,
            &Full {
                schema_version: SCHEMA_VERSION,
                report: &report,
                manifest: &manifest,
            },
        )?;
    }
    let invalid = report.rows.iter().filter(|r| !r.valid).count();
    Ok(format!(
        "{} rows over {} cells, {} reps each; {invalid} invalid rows",
        report.rows.len(),
        report.cells.len(),
        cfg.reps
    ))
}

pub struct VariogramArgs {
    pub model: Model,
    pub arms: usize,
    pub reps: usize,
    pub seed: u64,
    pub n: usize,
    pub alpha: f64,
    pub k: usize,
    pub ring_width: f64,
    pub near_radius: Option<f64>,
    pub arm_rule: ArmRule,
    pub cliff_ord_self_loop: bool,
    pub out: Option<PathBuf>,
}

pub fn variogram(a: &VariogramArgs, stamp: bool) -> CliResult<String> {
    if !(a.alpha > 0.0 && a.alpha <= 1.0) {
        return Err(input(format!("--alpha must lie in (0, 1], got {}", a.alpha)));
    }
    let cfg = VariogramConfig {
        model: a.model,
        n: a.n,
        alpha: a.alpha,
        k: a.k,
        arms: a.arms,
        reps: a.reps,
        ring_width: a.ring_width,
        near_radius: a.near_radius,
        arm_rule: a.arm_rule.clone(),
        cliff_ord_self_loop: a.cliff_ord_self_loop,
    };
    let fit = run_variogram(&cfg, a.seed)?;
    if let Some(path) = &a.out {
        #[derive(Serialize)]
        struct Out<'a> {
            schema_version: u32,
            fit: &'a geocrt::simulation::VariogramFit,
            manifest: Manifest,
        }
        write_json(
            path,
            &Out {
                schema_version: SCHEMA_VERSION,
                fit: &fit,
                manifest: Manifest::new("variogram", &cfg, Some(a.seed), &[], stamp),
            },
        )?;
    }
    Ok(format!(
        "gamma_hat = {}\nslope = {}, r_squared = {}, rings used {:?}\ntheta = {:?}",
        fit.fit.gamma, fit.fit.slope, fit.fit.r_squared, fit.fit.used, fit.theta
    ))
}
