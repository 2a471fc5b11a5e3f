//! File formats: typed CSV datasets, JSON parameter files, network exports and heatmap matrices.
//!
//! Dataset header cells have the form `name:family`, e.g. `x:bernoulli,y:poisson`.

use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::experiments::{top_k_edges, EdgeSet};
use crate::model::{MixedDataset, ParamMatrix, VariateFamily};

#[derive(Debug, Clone, PartialEq)]
pub struct TypedColumn {
    pub name: String,
    pub family: VariateFamily,
}

pub fn parse_header(cells: &[&str]) -> Result<Vec<TypedColumn>> {
    let mut cols = Vec::with_capacity(cells.len());
    for (k, cell) in cells.iter().enumerate() {
        let loc = || format!("header column {}", k + 1);
        let (name, tag) = cell.rsplit_once(':').ok_or_else(|| Error::Parse {
            location: loc(),
            reason: format!("expected `name:family`, got `{cell}`"),
        })?;
        let name = name.trim();
        if name.is_empty() {
            return Err(Error::Parse {
                location: loc(),
                reason: "empty column name".into(),
            });
        }
        let family = VariateFamily::from_str(tag).map_err(|e| Error::Parse {
            location: loc(),
            reason: e.to_string(),
        })?;
        if cols.iter().any(|c: &TypedColumn| c.name == name) {
            return Err(Error::Parse {
                location: loc(),
                reason: format!("duplicate column name `{name}`"),
            });
        }
        cols.push(TypedColumn {
            name: name.to_string(),
            family,
        });
    }
    Ok(cols)
}

pub fn read_dataset<R: Read>(input: R) -> Result<MixedDataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(input);
    let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
    let cols = parse_header(&header_refs)?;
    let p = cols.len();

    let mut flat = Vec::new();
    let mut n = 0;
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        let row = i + 1;
        if record.len() != p {
            return Err(Error::Parse {
                location: format!("row {row}"),
                reason: format!("expected {p} values, found {}", record.len()),
            });
        }
        for (j, cell) in record.iter().enumerate() {
            let y: f64 = cell.parse().map_err(|_| Error::Parse {
                location: format!("row {row}, column `{}`", cols[j].name),
                reason: format!("`{cell}` is not a number"),
            })?;
            if !cols[j].family.value_in_domain(y) {
                return Err(Error::Parse {
                    location: format!("row {row}, column `{}`", cols[j].name),
                    reason: format!("value {y} is outside the {} domain", cols[j].family),
                });
            }
            flat.push(y);
        }
        n += 1;
    }
    if n == 0 {
        return Err(Error::Parse {
            location: "body".into(),
            reason: "dataset has no rows".into(),
        });
    }
    let values = DMatrix::from_row_slice(n, p, &flat);
    MixedDataset::new(cols.iter().map(|c| c.family).collect(), values)?
        .with_names(cols.into_iter().map(|c| c.name).collect())
}

pub fn load_dataset<P: AsRef<Path>>(path: P) -> Result<MixedDataset> {
    read_dataset(File::open(path)?)
}

pub fn write_dataset<W: Write>(data: &MixedDataset, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let header: Vec<String> = data
        .names()
        .iter()
        .zip(data.families())
        .map(|(n, f)| format!("{n}:{f}"))
        .collect();
    w.write_record(&header)?;
    for i in 0..data.n() {
        w.write_record(data.row(i).iter().map(|v| v.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_dataset<P: AsRef<Path>>(data: &MixedDataset, path: P) -> Result<()> {
    write_dataset(data, BufWriter::new(File::create(path)?))
}

#[derive(Debug, Serialize, Deserialize)]
struct ThetaEntry {
    row: usize,
    col: usize,
    value: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct ThetaFile {
    p: usize,
    #[serde(default)]
    names: Option<Vec<String>>,
    families: Vec<VariateFamily>,
    entries: Vec<ThetaEntry>,
}

pub fn theta_to_json(theta: &ParamMatrix) -> Result<String> {
    let p = theta.p();
    let mut entries = Vec::with_capacity(theta.unique_count());
    for row in 0..p {
        for col in row..p {
            entries.push(ThetaEntry {
                row,
                col,
                value: theta.get(row, col),
            });
        }
    }
    let file = ThetaFile {
        p,
        names: Some(theta.names().to_vec()),
        families: theta.families().to_vec(),
        entries,
    };
    Ok(serde_json::to_string_pretty(&file)?)
}

/// Missing entries are zero; an entry given at both `(a, b)` and `(b, a)` must agree.
pub fn theta_from_json(text: &str) -> Result<ParamMatrix> {
    let file: ThetaFile = serde_json::from_str(text)?;
    let p = file.p;
    if file.families.len() != p {
        return Err(Error::Validation(format!(
            "p = {p} but {} families listed",
            file.families.len()
        )));
    }
    let mut dense = DMatrix::zeros(p, p);
    let mut set = vec![false; p * p];
    for e in &file.entries {
        if e.row >= p || e.col >= p {
            return Err(Error::Validation(format!(
                "entry ({}, {}) out of range for p = {p}",
                e.row, e.col
            )));
        }
        if !e.value.is_finite() {
            return Err(Error::Validation(format!(
                "entry ({}, {}) is not finite",
                e.row, e.col
            )));
        }
        for (a, b) in [(e.row, e.col), (e.col, e.row)] {
            if set[a * p + b] && dense[(a, b)] != e.value {
                return Err(Error::Validation(format!(
                    "entry ({a}, {b}) given as both {} and {}",
                    dense[(a, b)],
                    e.value
                )));
            }
            dense[(a, b)] = e.value;
            set[a * p + b] = true;
        }
    }
    let theta = ParamMatrix::from_dense(file.families, dense)?;
    match file.names {
        Some(names) => theta.with_names(names),
        None => Ok(theta),
    }
}

pub fn save_theta<P: AsRef<Path>>(theta: &ParamMatrix, path: P) -> Result<()> {
    std::fs::write(path, theta_to_json(theta)? + "\n")?;
    Ok(())
}

pub fn load_theta<P: AsRef<Path>>(path: P) -> Result<ParamMatrix> {
    theta_from_json(&std::fs::read_to_string(path)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NetworkFormat {
    Dot,
    GraphMl,
    Json,
}

impl FromStr for NetworkFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "dot" => Ok(NetworkFormat::Dot),
            "graphml" => Ok(NetworkFormat::GraphMl),
            "json" => Ok(NetworkFormat::Json),
            other => Err(Error::Parameter(format!("unknown network format `{other}`"))),
        }
    }
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

fn dot_escape(s: &str) -> String {
    s.replace('\\', "\\\\").replace('"', "\\\"")
}

pub fn render_network(theta: &ParamMatrix, edges: &EdgeSet, format: NetworkFormat) -> Result<String> {
    let names = theta.names();
    let fams = theta.families();
    let mut s = String::new();
    match format {
        NetworkFormat::Dot => {
            s.push_str("graph mrf {\n");
            for j in 0..theta.p() {
                let _ = writeln!(
                    s,
                    "  n{j} [label=\"{} ({})\", family=\"{}\"];",
                    dot_escape(&names[j]),
                    fams[j],
                    fams[j]
                );
            }
            for e in &edges.edges {
                let (sign, style) = if e.weight < 0.0 {
                    ("negative", "dashed")
                } else {
                    ("positive", "solid")
                };
                let _ = writeln!(
                    s,
                    "  n{} -- n{} [weight={}, sign={sign}, style={style}];",
                    e.a, e.b, e.weight
                );
            }
            s.push_str("}\n");
        }
        NetworkFormat::GraphMl => {
            s.push_str("<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n");
            s.push_str("<graphml xmlns=\"http://graphml.graphdrawing.org/xmlns\">\n");
            s.push_str("  <key id=\"name\" for=\"node\" attr.name=\"name\" attr.type=\"string\"/>\n");
            s.push_str("  <key id=\"family\" for=\"node\" attr.name=\"family\" attr.type=\"string\"/>\n");
            s.push_str("  <key id=\"weight\" for=\"edge\" attr.name=\"weight\" attr.type=\"double\"/>\n");
            s.push_str("  <graph id=\"mrf\" edgedefault=\"undirected\">\n");
            for j in 0..theta.p() {
                let _ = writeln!(
                    s,
                    "    <node id=\"n{j}\"><data key=\"name\">{}</data><data key=\"family\">{}</data></node>",
                    xml_escape(&names[j]),
                    fams[j]
                );
            }
            for (k, e) in edges.edges.iter().enumerate() {
                let _ = writeln!(
                    s,
                    "    <edge id=\"e{k}\" source=\"n{}\" target=\"n{}\"><data key=\"weight\">{}</data></edge>",
                    e.a, e.b, e.weight
                );
            }
            s.push_str("  </graph>\n</graphml>\n");
        }
        NetworkFormat::Json => {
            #[derive(Serialize)]
            struct Node<'a> {
                id: usize,
                name: &'a str,
                family: VariateFamily,
            }
            #[derive(Serialize)]
            struct Doc<'a> {
                nodes: Vec<Node<'a>>,
                edges: &'a EdgeSet,
            }
            let doc = Doc {
                nodes: (0..theta.p())
                    .map(|j| Node {
                        id: j,
                        name: &names[j],
                        family: fams[j],
                    })
                    .collect(),
                edges,
            };
            s = serde_json::to_string_pretty(&doc)? + "\n";
        }
    }
    Ok(s)
}

/// Writes the nodes and the `k` strongest edges of `theta`.
pub fn export_network<P: AsRef<Path>>(
    theta: &ParamMatrix,
    k: usize,
    format: NetworkFormat,
    path: P,
) -> Result<EdgeSet> {
    let edges = top_k_edges(theta, k)?;
    std::fs::write(path, render_network(theta, &edges, format)?)?;
    Ok(edges)
}

/// Number of edges corresponding to a fraction of all off-diagonal pairs, rounded to nearest.
pub fn edges_for_fraction(p: usize, fraction: f64) -> Result<usize> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::Parameter(format!(
            "edge fraction must lie in [0, 1], got {fraction}"
        )));
    }
    Ok((fraction * (p * p.saturating_sub(1) / 2) as f64).round() as usize)
}

/// Plain `p x p` numeric matrix with a header row of variate names.
pub fn write_heatmap<W: Write>(theta: &ParamMatrix, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(theta.names())?;
    for a in 0..theta.p() {
        w.write_record((0..theta.p()).map(|b| theta.get(a, b).to_string()))?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_heatmap<P: AsRef<Path>>(theta: &ParamMatrix, path: P) -> Result<()> {
    write_heatmap(theta, BufWriter::new(File::create(path)?))
}
