//! JSON inputs, CSV outputs and machine-readable diagnostics.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;

use crate::engine::{SimError, SimulationResult};
use crate::network::Network;
use crate::scenario::Scenario;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{file}: {path}: {message}")]
    Schema { file: String, path: String, message: String },
    #[error("{file}: {source}")]
    Read { file: String, source: std::io::Error },
    #[error("line {line}: {message}")]
    Csv { line: usize, message: String },
}

fn parse<T: DeserializeOwned>(text: &str, file: &str) -> Result<T, IoError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let value = serde_path_to_error::deserialize(de).map_err(|e| IoError::Schema {
        file: file.into(),
        path: e.path().to_string(),
        message: e.inner().to_string(),
    })?;
    Ok(value)
}

pub fn parse_network(text: &str) -> Result<Network, IoError> {
    parse(text, "network")
}

pub fn parse_scenario(text: &str) -> Result<Scenario, IoError> {
    parse(text, "scenario")
}

fn read(path: &Path) -> Result<String, IoError> {
    fs::read_to_string(path).map_err(|source| IoError::Read { file: path.display().to_string(), source })
}

fn relabel(e: IoError, path: &Path) -> IoError {
    match e {
        IoError::Schema { path: p, message, .. } => IoError::Schema { file: path.display().to_string(), path: p, message },
        other => other,
    }
}

pub fn load_network(path: &Path) -> Result<Network, IoError> {
    parse_network(&read(path)?).map_err(|e| relabel(e, path))
}

pub fn load_scenario(path: &Path) -> Result<Scenario, IoError> {
    parse_scenario(&read(path)?).map_err(|e| relabel(e, path))
}

pub fn to_json<T: Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("plain data serialises")
}

/// Fixed-point with nine decimals; negative zero prints as zero.
pub fn fixed(x: f64) -> String {
    let s = format!("{x:.9}");
    if s.starts_with('-') && s[1..].bytes().all(|b| b == b'0' || b == b'.') {
        s[1..].to_string()
    } else {
        s
    }
}

/// One row per link per step boundary, ordered by time then link id. The
/// flows on a row are those of the step ending at `time_s` (zero on the
/// first row).
pub fn boundary_flows_csv(r: &SimulationResult) -> String {
    let mut out = String::from("step,time_s,link_id,inflow_veh_s,outflow_veh_s,N_up_veh,N_down_veh\n");
    for step in 0..=r.steps {
        let t = fixed(step as f64 * r.dt);
        for l in &r.links {
            let (q_in, q_out) = if step == 0 { (0.0, 0.0) } else { (l.inflow[step - 1], l.outflow[step - 1]) };
            let _ = writeln!(
                out,
                "{step},{t},{},{},{},{},{}",
                l.id,
                fixed(q_in),
                fixed(q_out),
                fixed(l.n_up[step]),
                fixed(l.n_down[step])
            );
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeRow {
    pub link: String,
    pub x: f64,
    pub t: f64,
    pub count: f64,
    pub density: f64,
}

pub fn probes_csv(rows: &[ProbeRow]) -> String {
    let mut out = String::from("link_id,x_m,t_s,N_veh,density_veh_m\n");
    for p in rows {
        let _ = writeln!(out, "{},{},{},{},{}", p.link, fixed(p.x), fixed(p.t), fixed(p.count), fixed(p.density));
    }
    out
}

/// Evaluations per step; steps are numbered from 1 like the rows of
/// `boundary_flows.csv` they lead to.
pub fn ops_csv(r: &SimulationResult) -> String {
    let mut out = String::from("step,link_id,eval_count\n");
    for step in 0..r.steps {
        for l in &r.links {
            let _ = writeln!(out, "{},{},{}", step + 1, l.id, l.ops[step]);
        }
    }
    out
}

pub fn timing_csv(r: &SimulationResult) -> String {
    format!("phase,seconds\nlink_model,{}\nnode_model,{}\n", fixed(r.timing.link), fixed(r.timing.node))
}

/// Writes `boundary_flows.csv`, `probes.csv`, `timing.csv` and, when asked,
/// `ops.csv` into `dir`.
pub fn write_bundle(dir: &Path, r: &SimulationResult, probes: &[ProbeRow], count_ops: bool) -> std::io::Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("boundary_flows.csv"), boundary_flows_csv(r))?;
    fs::write(dir.join("probes.csv"), probes_csv(probes))?;
    fs::write(dir.join("timing.csv"), timing_csv(r))?;
    if count_ops {
        fs::write(dir.join("ops.csv"), ops_csv(r))?;
    }
    Ok(())
}

/// Boundary series of one link as read back from `boundary_flows.csv`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParsedSeries {
    pub id: String,
    pub times: Vec<f64>,
    pub inflow: Vec<f64>,
    pub outflow: Vec<f64>,
    pub n_up: Vec<f64>,
    pub n_down: Vec<f64>,
}

/// Inverse of [`boundary_flows_csv`], one entry per link in file order.
pub fn read_boundary_flows(text: &str) -> Result<Vec<ParsedSeries>, IoError> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.starts_with("step,time_s,link_id") => {}
        _ => return Err(IoError::Csv { line: 1, message: "missing header".into() }),
    }
    let mut series: Vec<ParsedSeries> = Vec::new();
    for (n, line) in lines {
        let line_no = n + 1;
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 7 {
            return Err(IoError::Csv { line: line_no, message: format!("expected 7 columns, got {}", cols.len()) });
        }
        let num = |i: usize| {
            cols[i].parse::<f64>().map_err(|e| IoError::Csv { line: line_no, message: format!("column {}: {e}", i + 1) })
        };
        let step: usize = cols[0].parse().map_err(|e| IoError::Csv { line: line_no, message: format!("step: {e}") })?;
        let pos = match series.iter().position(|s| s.id == cols[2]) {
            Some(p) => p,
            None => {
                series.push(ParsedSeries { id: cols[2].into(), ..Default::default() });
                series.len() - 1
            }
        };
        let s = &mut series[pos];
        s.times.push(num(1)?);
        if step > 0 {
            s.inflow.push(num(3)?);
            s.outflow.push(num(4)?);
        }
        s.n_up.push(num(5)?);
        s.n_down.push(num(6)?);
    }
    Ok(series)
}

/// Diagnostic entry printed on validation failure.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Diagnostic {
    pub kind: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub location: Option<String>,
    pub message: String,
}

impl Diagnostic {
    pub fn new(kind: &'static str, message: impl Into<String>) -> Self {
        Self { kind, location: None, message: message.into() }
    }
}

pub fn diagnostics_of_io(e: &IoError) -> Vec<Diagnostic> {
    match e {
        IoError::Schema { file, path, message } => {
            vec![Diagnostic { kind: "schema", location: Some(format!("{file}:{path}")), message: message.clone() }]
        }
        IoError::Read { file, source } => vec![Diagnostic { kind: "io", location: Some(file.clone()), message: source.to_string() }],
        IoError::Csv { .. } => vec![Diagnostic::new("csv", e.to_string())],
    }
}

pub fn diagnostics_of_sim(e: &SimError) -> Vec<Diagnostic> {
    match e {
        SimError::Network(list) => list.iter().map(|n| Diagnostic::new("network", n.to_string())).collect(),
        SimError::Scenario(list) => list.iter().map(|n| Diagnostic::new("scenario", n.to_string())).collect(),
        SimError::Cfl { link, message } => vec![Diagnostic { kind: "cfl", location: Some(link.clone()), message: message.clone() }],
        SimError::ProbeRefused(_) => vec![Diagnostic::new("probe_refused", e.to_string())],
        SimError::OutOfDomain { link, .. } => vec![Diagnostic { kind: "probe_domain", location: Some(link.clone()), message: e.to_string() }],
        other => vec![Diagnostic::new("simulation", other.to_string())],
    }
}

pub fn diagnostics_json(list: &[Diagnostic]) -> String {
    serde_json::to_string(&serde_json::json!({ "errors": list })).expect("plain data serialises")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::five_link_network;

    #[test]
    fn fixed_point_normalises_negative_zero() {
        assert_eq!(fixed(-0.0), "0.000000000");
        assert_eq!(fixed(-1e-12), "0.000000000");
        assert_eq!(fixed(-0.5), "-0.500000000");
        assert_eq!(fixed(1.0 / 3.0), "0.333333333");
    }

    #[test]
    fn unknown_keys_are_rejected_with_a_path() {
        let mut v = serde_json::to_value(five_link_network()).unwrap();
        v["links"][2]["colour"] = serde_json::json!("red");
        let err = parse_network(&v.to_string()).unwrap_err();
        match err {
            IoError::Schema { path, message, .. } => {
                assert_eq!(path, "links[2].colour");
                assert!(message.contains("colour"), "{message}");
            }
            other => panic!("{other}"),
        }
    }

    #[test]
    fn nested_diagram_errors_are_located() {
        let mut v = serde_json::to_value(five_link_network()).unwrap();
        v["links"][0]["diagram"]["type"] = serde_json::json!("parabolic");
        let IoError::Schema { path, .. } = parse_network(&v.to_string()).unwrap_err() else { panic!() };
        assert!(path.starts_with("links[0].diagram"), "{path}");
    }

    #[test]
    fn network_round_trip() {
        let net = five_link_network();
        let again = parse_network(&to_json(&net)).unwrap();
        assert_eq!(net, again);
    }
}
