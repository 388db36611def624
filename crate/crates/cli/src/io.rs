//! File formats: point and outcome tables, JSON artifacts, run manifests.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs;
use std::path::Path;

use geocrt::Metric;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug)]
pub enum CliError {
    /// Bad flags, malformed files, invalid parameters.
    Input(String),
    /// Degenerate draws and other failures of the realized data.
    Statistical(String),
    /// Failure writing outputs.
    Output(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Input(_) => 2,
            CliError::Statistical(_) => 3,
            CliError::Output(_) => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Input(m) | CliError::Statistical(m) | CliError::Output(m) => f.write_str(m),
        }
    }
}

impl From<geocrt::Error> for CliError {
    fn from(e: geocrt::Error) -> Self {
        if e.is_statistical() {
            CliError::Statistical(e.to_string())
        } else {
            CliError::Input(e.to_string())
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

pub fn input(msg: impl Into<String>) -> CliError {
    CliError::Input(msg.into())
}

/// An input file read once, so its digest matches the bytes parsed.
pub struct InputFile {
    pub role: &'static str,
    pub bytes: Vec<u8>,
}

impl InputFile {
    pub fn read(role: &'static str, path: &Path) -> CliResult<Self> {
        let bytes = fs::read(path).map_err(|e| input(format!("cannot read {role} file {}: {e}", path.display())))?;
        Ok(InputFile { role, bytes })
    }

    pub fn text(&self) -> CliResult<&str> {
        std::str::from_utf8(&self.bytes).map_err(|_| input(format!("{} file is not valid UTF-8", self.role)))
    }

    pub fn sha256(&self) -> String {
        Sha256::digest(&self.bytes).iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Provenance embedded in every output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub subcommand: String,
    pub config: serde_json::Value,
    pub seed: Option<u64>,
    pub version: String,
    /// sha256 of each input, keyed by role.
    pub inputs: BTreeMap<String, String>,
    pub timestamp: Option<u64>,
}

impl Manifest {
    pub fn new(subcommand: &str, config: impl Serialize, seed: Option<u64>, inputs: &[&InputFile], stamp: bool) -> Self {
        let timestamp = stamp.then(|| {
            std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map_or(0, |d| d.as_secs())
        });
        Manifest {
            subcommand: subcommand.to_string(),
            config: serde_json::to_value(config).expect("config serializes"),
            seed,
            version: env!("CARGO_PKG_VERSION").to_string(),
            inputs: inputs.iter().map(|f| (f.role.to_string(), f.sha256())).collect(),
            timestamp,
        }
    }
}

pub fn write_json(path: &Path, value: &impl Serialize) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value).expect("output serializes");
    text.push('\n');
    fs::write(path, text).map_err(|e| CliError::Output(format!("cannot write {}: {e}", path.display())))
}

pub fn parse_json<T: for<'de> Deserialize<'de>>(file: &InputFile) -> CliResult<T> {
    serde_json::from_slice(&file.bytes).map_err(|e| input(format!("malformed {} file: {e}", file.role)))
}

/// Units with their original ids, re-indexed `0..n` in file order.
#[derive(Debug, Clone, PartialEq)]
pub struct Points {
    pub ids: Vec<i64>,
    pub coords: Vec<Vec<f64>>,
}

fn check_ids(ids: &[i64]) -> CliResult<()> {
    let mut seen = HashMap::new();
    for (row, &id) in ids.iter().enumerate() {
        if let Some(prev) = seen.insert(id, row) {
            return Err(input(format!("duplicate unit id {id} in rows {} and {}", prev + 1, row + 1)));
        }
    }
    Ok(())
}

/// Header `id,x[,y...]`, one unit per row.
pub fn parse_points_csv(text: &str) -> CliResult<Points> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let header = rdr.headers().map_err(|e| input(format!("malformed points CSV header: {e}")))?.clone();
    if header.len() < 2 || !header[0].eq_ignore_ascii_case("id") {
        return Err(input("points CSV header must be `id,x[,y...]`"));
    }
    let dim = header.len() - 1;
    let mut ids = Vec::new();
    let mut coords = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let line = row + 2;
        let rec = rec.map_err(|e| input(format!("points CSV line {line}: {e}")))?;
        if rec.len() != dim + 1 {
            return Err(input(format!("points CSV line {line}: expected {} fields, found {}", dim + 1, rec.len())));
        }
        ids.push(
            rec[0]
                .parse::<i64>()
                .map_err(|_| input(format!("points CSV line {line}: id `{}` is not an integer", &rec[0])))?,
        );
        let mut p = Vec::with_capacity(dim);
        for (c, field) in rec.iter().enumerate().skip(1) {
            let v: f64 = field
                .parse()
                .map_err(|_| input(format!("points CSV line {line}: `{field}` in column {} is not a number", &header[c])))?;
            p.push(v);
        }
        coords.push(p);
    }
    check_ids(&ids)?;
    Ok(Points { ids, coords })
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct JsonPoint {
    id: i64,
    coords: Option<Vec<f64>>,
    x: Option<f64>,
    y: Option<f64>,
    z: Option<f64>,
}

/// Array of `{"id": .., "x": .., "y": ..}` objects, or `{"id": .., "coords": [..]}`.
pub fn parse_points_json(bytes: &[u8]) -> CliResult<Points> {
    let raw: Vec<JsonPoint> = serde_json::from_slice(bytes).map_err(|e| input(format!("malformed points JSON: {e}")))?;
    let mut ids = Vec::with_capacity(raw.len());
    let mut coords = Vec::with_capacity(raw.len());
    for (row, p) in raw.into_iter().enumerate() {
        let c = match (p.coords, p.x) {
            (Some(c), None) if p.y.is_none() && p.z.is_none() => c,
            (None, Some(x)) => {
                let mut c = vec![x];
                match (p.y, p.z) {
                    (Some(y), z) => {
                        c.push(y);
                        c.extend(z);
                    }
                    (None, None) => {}
                    (None, Some(_)) => return Err(input(format!("points JSON entry {row}: z given without y"))),
                }
                c
            }
            _ => return Err(input(format!("points JSON entry {row}: give either `coords` or `x[, y[, z]]`"))),
        };
        ids.push(p.id);
        coords.push(c);
    }
    check_ids(&ids)?;
    Ok(Points { ids, coords })
}

pub fn parse_points(file: &InputFile, path: &Path) -> CliResult<Points> {
    let is_json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
    if is_json {
        parse_points_json(&file.bytes)
    } else {
        parse_points_csv(file.text()?)
    }
}

/// Outcomes keyed by unit id, header `id,y`, reordered to match `ids`.
pub fn parse_outcomes_csv(text: &str, ids: &[i64]) -> CliResult<Vec<f64>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let header = rdr.headers().map_err(|e| input(format!("malformed outcomes CSV header: {e}")))?.clone();
    if header.len() != 2 || !header[0].eq_ignore_ascii_case("id") {
        return Err(input("outcomes CSV header must be `id,y`"));
    }
    let index: HashMap<i64, usize> = ids.iter().enumerate().map(|(i, &id)| (id, i)).collect();
    let mut y = vec![None; ids.len()];
    for (row, rec) in rdr.records().enumerate() {
        let line = row + 2;
        let rec = rec.map_err(|e| input(format!("outcomes CSV line {line}: {e}")))?;
        let id: i64 = rec[0]
            .parse()
            .map_err(|_| input(format!("outcomes CSV line {line}: id `{}` is not an integer", &rec[0])))?;
        let v: f64 = rec[1]
            .parse()
            .map_err(|_| input(format!("outcomes CSV line {line}: `{}` is not a number", &rec[1])))?;
        if !v.is_finite() {
            return Err(input(format!("outcomes CSV line {line}: outcome must be finite")));
        }
        let &i = index
            .get(&id)
            .ok_or_else(|| input(format!("outcomes CSV line {line}: unknown unit id {id}")))?;
        if y[i].replace(v).is_some() {
            return Err(input(format!("outcomes CSV line {line}: duplicate unit id {id}")));
        }
    }
    y.into_iter()
        .enumerate()
        .map(|(i, v)| v.ok_or_else(|| input(format!("outcomes CSV has no row for unit id {}", ids[i]))))
        .collect()
}

/// `clusters.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClustersFile {
    pub schema_version: u32,
    pub metric: Metric,
    pub dim: usize,
    /// Input coordinates were divided by this before clustering.
    pub unit_length: f64,
    pub unit_ids: Vec<i64>,
    /// Coordinates in the chosen unit of length.
    pub points: Vec<Vec<f64>>,
    pub k: usize,
    pub medoids: Vec<usize>,
    pub assignment: Vec<usize>,
    pub radii: Vec<f64>,
    pub cost: f64,
    pub r_n: f64,
    pub rn_multiplier: f64,
    /// Bounding-box volume of the region, in the chosen unit of length.
    pub volume: f64,
    #[serde(default)]
    pub manifest: Option<Manifest>,
}

/// `draw.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DrawFile {
    pub schema_version: u32,
    pub p: f64,
    pub q: f64,
    #[serde(default)]
    pub replication: u64,
    pub clusters: Vec<bool>,
    pub units: Vec<bool>,
    #[serde(default)]
    pub manifest: Option<Manifest>,
}

pub fn check_schema(found: u32, what: &str) -> CliResult<()> {
    if found == SCHEMA_VERSION {
        Ok(())
    } else {
        Err(input(format!("{what} has schema_version {found}, this tool reads {SCHEMA_VERSION}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_points_and_errors() {
        let p = parse_points_csv("id,x,y\n7,0,1\n3, 2.5 ,-1\n").unwrap();
        assert_eq!(p.ids, vec![7, 3]);
        assert_eq!(p.coords, vec![vec![0.0, 1.0], vec![2.5, -1.0]]);
        assert!(parse_points_csv("x,y\n0,1\n").is_err());
        assert!(parse_points_csv("id,x\n1,a\n").is_err());
        assert!(parse_points_csv("id,x\n1,0\n1,2\n").is_err());
        assert!(parse_points_csv("id,x,y\n1,0\n").is_err());
    }

    #[test]
    fn json_points_both_forms() {
        let a = parse_points_json(br#"[{"id":1,"x":0,"y":1},{"id":2,"x":3,"y":4}]"#).unwrap();
        let b = parse_points_json(br#"[{"id":1,"coords":[0,1]},{"id":2,"coords":[3,4]}]"#).unwrap();
        assert_eq!(a, b);
        assert!(parse_points_json(br#"[{"id":1,"coords":[0],"x":1}]"#).is_err());
        assert!(parse_points_json(br#"[{"id":1}]"#).is_err());
        assert!(parse_points_json(b"{").is_err());
    }

    #[test]
    fn outcomes_follow_unit_order() {
        let y = parse_outcomes_csv("id,y\n2,5\n1,3\n", &[1, 2]).unwrap();
        assert_eq!(y, vec![3.0, 5.0]);
        assert!(parse_outcomes_csv("id,y\n1,3\n", &[1, 2]).is_err());
        assert!(parse_outcomes_csv("id,y\n1,3\n9,1\n", &[1]).is_err());
        assert!(parse_outcomes_csv("id,y\n1,3\n1,4\n", &[1]).is_err());
    }
}
