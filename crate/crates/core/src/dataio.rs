//! TNTP network and flow files, and experiment result files.
//!
//! Network files carry `<KEY> value` metadata up to `<END OF METADATA>`, then one link per line:
//! `init term capacity length free_flow_time b power speed toll type ;`. Node ids are 1-based
//! in files and 0-based here. `~` starts a comment anywhere.

use std::collections::{HashMap, VecDeque};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, ParseError, Result};
use crate::graph::{EdgeFlow, FlowNetwork};
use crate::metrics::MetricReport;
use crate::placement::SensorPlan;
use crate::prediction::OpCounts;

fn line_err(line: usize, message: impl Into<String>) -> Error {
    ParseError::Line {
        line,
        message: message.into(),
    }
    .into()
}

/// Drops a `~` comment and a trailing `;`.
fn strip(line: &str) -> &str {
    let line = line.split('~').next().unwrap_or("");
    line.trim().trim_end_matches(';').trim()
}

/// Lines the parser ignored, for diagnostics.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ParseDiagnostics {
    /// 1-based line numbers of blank, comment-only or header lines.
    pub skipped_lines: Vec<usize>,
    /// Added to file node ids to get internal ids.
    pub node_id_offset: i64,
}

pub fn parse_network(name: &str, text: &str) -> Result<FlowNetwork> {
    parse_network_with_diagnostics(name, text).map(|(net, _)| net)
}

pub fn parse_network_with_diagnostics(name: &str, text: &str) -> Result<(FlowNetwork, ParseDiagnostics)> {
    let mut nodes: Option<usize> = None;
    let mut links: Option<usize> = None;
    let mut in_metadata = true;
    let mut edges = Vec::new();
    let mut diagnostics = ParseDiagnostics {
        node_id_offset: -1,
        ..Default::default()
    };

    for (i, raw) in text.lines().enumerate() {
        let lineno = i + 1;
        if in_metadata {
            let trimmed = raw.trim();
            if trimmed.starts_with("<END OF METADATA>") {
                in_metadata = false;
                diagnostics.skipped_lines.push(lineno);
                continue;
            }
            if let Some(rest) = trimmed.strip_prefix('<') {
                let Some((key, value)) = rest.split_once('>') else {
                    return Err(line_err(lineno, "unterminated metadata key"));
                };
                let value = strip(value);
                let parse = || {
                    value
                        .parse::<usize>()
                        .map_err(|_| line_err(lineno, format!("bad value {value:?} for <{key}>")))
                };
                match key.trim() {
                    "NUMBER OF NODES" => nodes = Some(parse()?),
                    "NUMBER OF LINKS" => links = Some(parse()?),
                    _ => {}
                }
                diagnostics.skipped_lines.push(lineno);
                continue;
            }
            if strip(raw).is_empty() {
                diagnostics.skipped_lines.push(lineno);
                continue;
            }
            return Err(line_err(lineno, "data before <END OF METADATA>"));
        }

        let body = strip(raw);
        if body.is_empty() {
            diagnostics.skipped_lines.push(lineno);
            continue;
        }
        let node_count = nodes.ok_or(ParseError::MissingMetadata("NUMBER OF NODES"))?;
        let mut fields = body.split_whitespace();
        let mut node = |what: &str| -> Result<usize> {
            let tok = fields
                .next()
                .ok_or_else(|| line_err(lineno, format!("missing {what} node")))?;
            let id: usize = tok
                .parse()
                .map_err(|_| line_err(lineno, format!("bad {what} node {tok:?}")))?;
            if id == 0 || id > node_count {
                return Err(line_err(lineno, format!("{what} node {id} outside 1..={node_count}")));
            }
            Ok(id - 1)
        };
        let tail = node("init")?;
        let head = node("term")?;
        if tail == head {
            return Err(line_err(lineno, format!("self-loop at node {}", tail + 1)));
        }
        for tok in fields {
            if tok.parse::<f64>().is_err() {
                return Err(line_err(lineno, format!("bad numeric field {tok:?}")));
            }
        }
        edges.push((tail, head));
    }

    if in_metadata {
        return Err(ParseError::MissingMetadata("END OF METADATA").into());
    }
    let node_count = nodes.ok_or(ParseError::MissingMetadata("NUMBER OF NODES"))?;
    let declared = links.ok_or(ParseError::MissingMetadata("NUMBER OF LINKS"))?;
    if declared != edges.len() {
        return Err(ParseError::LinkCountMismatch {
            declared,
            found: edges.len(),
        }
        .into());
    }
    Ok((FlowNetwork::new(name, node_count, edges)?, diagnostics))
}

/// Flow rows `from to volume [cost]`, matched to edges by endpoint pair; parallel edges take
/// rows in file order. Leading non-numeric lines (column headers) are skipped.
pub fn parse_flow(text: &str, net: &FlowNetwork) -> Result<EdgeFlow> {
    parse_flow_with_diagnostics(text, net).map(|(f, _)| f)
}

pub fn parse_flow_with_diagnostics(text: &str, net: &FlowNetwork) -> Result<(EdgeFlow, ParseDiagnostics)> {
    let mut slots: HashMap<(usize, usize), VecDeque<usize>> = HashMap::new();
    for (e, pair) in net.edges().enumerate() {
        slots.entry(pair).or_default().push_back(e);
    }
    let mut flow = vec![f64::NAN; net.edge_count()];
    let mut filled = vec![false; net.edge_count()];
    let mut unmatched = Vec::new();
    let mut seen_data = false;
    let mut diagnostics = ParseDiagnostics {
        node_id_offset: -1,
        ..Default::default()
    };

    for (i, raw) in text.lines().enumerate() {
        let lineno = i + 1;
        let body = strip(raw);
        if body.is_empty() {
            diagnostics.skipped_lines.push(lineno);
            continue;
        }
        let fields: Vec<&str> = body.split_whitespace().collect();
        let ids = (
            fields.first().map(|t| t.parse::<usize>()),
            fields.get(1).map(|t| t.parse::<usize>()),
        );
        let (from, to) = match ids {
            (Some(Ok(a)), Some(Ok(b))) => (a, b),
            _ if !seen_data => {
                diagnostics.skipped_lines.push(lineno);
                continue;
            }
            _ => return Err(line_err(lineno, format!("bad flow row {body:?}"))),
        };
        seen_data = true;
        let volume: f64 = fields
            .get(2)
            .ok_or_else(|| line_err(lineno, "missing volume"))?
            .parse()
            .map_err(|_| line_err(lineno, format!("bad volume {:?}", fields[2])))?;
        if !volume.is_finite() {
            return Err(line_err(lineno, "non-finite volume"));
        }
        if from == 0 || to == 0 {
            return Err(line_err(lineno, "node ids are 1-based"));
        }
        match slots.get_mut(&(from - 1, to - 1)).and_then(|q| q.pop_front()) {
            Some(e) => {
                flow[e] = volume;
                filled[e] = true;
            }
            None => unmatched.push((from, to)),
        }
    }
    if !unmatched.is_empty() {
        return Err(ParseError::UnmatchedFlowRows(unmatched).into());
    }
    let missing: Vec<usize> = (0..net.edge_count()).filter(|&e| !filled[e]).collect();
    if !missing.is_empty() {
        return Err(ParseError::MissingFlows(missing).into());
    }
    Ok((EdgeFlow::new(flow), diagnostics))
}

/// Canonical network file that [`parse_network`] reads back to the same network.
pub fn write_network(net: &FlowNetwork) -> String {
    let mut out = String::new();
    out.push_str(&format!("<NUMBER OF NODES> {}\n", net.node_count()));
    out.push_str(&format!("<NUMBER OF LINKS> {}\n", net.edge_count()));
    out.push_str("<END OF METADATA>\n\n");
    out.push_str("~\tinit_node\tterm_node\tcapacity\tlength\tfree_flow_time\tb\tpower\tspeed\ttoll\tlink_type\t;\n");
    for (t, h) in net.edges() {
        out.push_str(&format!("\t{}\t{}\t0\t0\t0\t0\t0\t0\t0\t0\t;\n", t + 1, h + 1));
    }
    out
}

/// Canonical flow file in edge order.
pub fn write_flow(net: &FlowNetwork, flow: &EdgeFlow) -> String {
    let mut out = String::from("From\tTo\tVolume\tCost\n");
    for ((t, h), v) in net.edges().zip(flow.as_slice()) {
        out.push_str(&format!("{}\t{}\t{}\t0\n", t + 1, h + 1, v));
    }
    out
}

/// A network with its ground-truth flows.
#[derive(Clone, Debug)]
pub struct NetworkBundle {
    pub net: FlowNetwork,
    pub flows: EdgeFlow,
    pub network_path: PathBuf,
    pub flow_path: PathBuf,
    pub network_diagnostics: ParseDiagnostics,
    pub flow_diagnostics: ParseDiagnostics,
}

impl NetworkBundle {
    pub fn load(name: &str, network_path: &Path, flow_path: &Path) -> Result<Self> {
        let (net, network_diagnostics) = parse_network_with_diagnostics(name, &fs::read_to_string(network_path)?)?;
        let (flows, flow_diagnostics) = parse_flow_with_diagnostics(&fs::read_to_string(flow_path)?, &net)?;
        Ok(Self {
            net,
            flows,
            network_path: network_path.to_path_buf(),
            flow_path: flow_path.to_path_buf(),
            network_diagnostics,
            flow_diagnostics,
        })
    }

    /// Loads a registered dataset from `root/<dir>/`.
    pub fn load_dataset(info: &DatasetInfo, root: &Path) -> Result<Self> {
        let dir = root.join(info.dir);
        Self::load(info.key, &dir.join(info.network_file), &dir.join(info.flow_file))
    }
}

/// A public road network with known size.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DatasetInfo {
    pub key: &'static str,
    pub dir: &'static str,
    pub network_file: &'static str,
    pub flow_file: &'static str,
    pub nodes: usize,
    pub links: usize,
}

impl DatasetInfo {
    pub fn network_url(&self) -> String {
        format!("{DATA_BASE_URL}/{}/{}", self.dir, self.network_file)
    }

    pub fn flow_url(&self) -> String {
        format!("{DATA_BASE_URL}/{}/{}", self.dir, self.flow_file)
    }
}

pub const DATA_BASE_URL: &str = "https://raw.githubusercontent.com/bstabler/TransportationNetworks/master";

pub const DATASETS: [DatasetInfo; 4] = [
    DatasetInfo {
        key: "anaheim",
        dir: "Anaheim",
        network_file: "Anaheim_net.tntp",
        flow_file: "Anaheim_flow.tntp",
        nodes: 416,
        links: 914,
    },
    DatasetInfo {
        key: "barcelona",
        dir: "Barcelona",
        network_file: "Barcelona_net.tntp",
        flow_file: "Barcelona_flow.tntp",
        nodes: 1020,
        links: 2522,
    },
    DatasetInfo {
        key: "chicago",
        dir: "Chicago-Sketch",
        network_file: "ChicagoSketch_net.tntp",
        flow_file: "ChicagoSketch_flow.tntp",
        nodes: 933,
        links: 2950,
    },
    DatasetInfo {
        key: "winnipeg",
        dir: "Winnipeg",
        network_file: "Winnipeg_net.tntp",
        flow_file: "Winnipeg_flow.tntp",
        nodes: 1052,
        links: 2836,
    },
];

pub fn dataset(key: &str) -> Option<&'static DatasetInfo> {
    let key = key.to_ascii_lowercase();
    DATASETS
        .iter()
        .find(|d| d.key == key || d.dir.eq_ignore_ascii_case(&key))
}

/// `$FLOWSENSE_DATA` if set, else `./data`.
pub fn default_data_root() -> PathBuf {
    std::env::var_os("FLOWSENSE_DATA")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("data"))
}

/// One line of `results.csv`. Field order is the file's column order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub network: String,
    pub algorithm: String,
    pub seed: u64,
    pub k: usize,
    pub budget_frac: f64,
    pub corr: Option<f64>,
    pub mse: f64,
    pub mae: f64,
    pub mape: Option<f64>,
    pub mape_support: usize,
    pub max_err: f64,
    pub elapsed_ms: f64,
    pub evaluations: usize,
    pub scope: String,
}

pub const RESULTS_HEADER: &str =
    "network,algorithm,seed,k,budget_frac,corr,mse,mae,mape,mape_support,max_err,elapsed_ms,evaluations,scope";

/// Everything about one placement run; `results.json` holds a list of these.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub network: String,
    pub seed: u64,
    pub candidates: usize,
    /// Which flow drove selection: `truth`, `synthetic` or `noisy`.
    pub select_on: String,
    pub noise_r: Option<f64>,
    pub plan: SensorPlan,
    pub reports: Vec<MetricReport>,
}

impl RunRecord {
    pub fn rows(&self) -> Vec<ResultRow> {
        let k = self.plan.sensors.len();
        self.reports
            .iter()
            .map(|r| ResultRow {
                network: self.network.clone(),
                algorithm: self.plan.algorithm.name().to_string(),
                seed: self.seed,
                k,
                budget_frac: if self.candidates == 0 {
                    0.0
                } else {
                    k as f64 / self.candidates as f64
                },
                corr: r.corr,
                mse: r.mse,
                mae: r.mae,
                mape: r.mape,
                mape_support: r.mape_support,
                max_err: r.max_err,
                elapsed_ms: self.plan.elapsed_ms,
                evaluations: self.plan.evaluations,
                scope: r.scope.name().to_string(),
            })
            .collect()
    }
}

fn ser_err(e: impl std::fmt::Display) -> Error {
    Error::Serialize(e.to_string())
}

pub fn write_csv_rows<T: Serialize>(path: &Path, rows: &[T], header: &str) -> Result<()> {
    let mut writer = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(path)
        .map_err(ser_err)?;
    writer.write_record(header.split(',')).map_err(ser_err)?;
    for row in rows {
        writer.serialize(row).map_err(ser_err)?;
    }
    writer.flush()?;
    Ok(())
}

/// Writes `results.csv`, `results.json` and `config.json` into `dir`.
pub fn write_results<C: Serialize>(dir: &Path, records: &[RunRecord], config: &C) -> Result<()> {
    fs::create_dir_all(dir)?;
    let rows: Vec<ResultRow> = records.iter().flat_map(RunRecord::rows).collect();
    write_csv_rows(&dir.join("results.csv"), &rows, RESULTS_HEADER)?;
    write_json(&dir.join("results.json"), records)?;
    write_json(&dir.join("config.json"), config)
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut file = fs::File::create(path)?;
    serde_json::to_writer_pretty(&mut file, value).map_err(ser_err)?;
    file.write_all(b"\n")?;
    Ok(())
}

pub fn read_records(path: &Path) -> Result<Vec<RunRecord>> {
    serde_json::from_str(&fs::read_to_string(path)?).map_err(ser_err)
}

pub fn read_rows(path: &Path) -> Result<Vec<ResultRow>> {
    let mut reader = csv::Reader::from_path(path).map_err(ser_err)?;
    reader
        .deserialize()
        .collect::<std::result::Result<Vec<ResultRow>, _>>()
        .map_err(ser_err)
}

/// Timing of one greedy mode in `bench.csv`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub network: String,
    pub mode: String,
    pub k: usize,
    pub picked: usize,
    pub elapsed_ms: f64,
    pub evaluations: usize,
    pub factorizations: usize,
    pub solves: usize,
    pub truncated: bool,
}

pub const BENCH_HEADER: &str = "network,mode,k,picked,elapsed_ms,evaluations,factorizations,solves,truncated";

impl BenchRow {
    pub fn from_plan(network: &str, k: usize, plan: &SensorPlan) -> Self {
        let OpCounts {
            factorizations, solves, ..
        } = plan.ops;
        Self {
            network: network.to_string(),
            mode: plan.algorithm.name().to_string(),
            k,
            picked: plan.sensors.len(),
            elapsed_ms: plan.elapsed_ms,
            evaluations: plan.evaluations,
            factorizations,
            solves,
            truncated: plan.truncated,
        }
    }
}
