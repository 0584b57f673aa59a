//! Versioned line-oriented dataset file.
//!
//! ```text
//! c3g-dataset 1
//! classes <K> features <d> graphs <N>
//! graph <label> <nodes> <edges>
//! <d feature values>        (one line per node)
//! <u> <v>                   (one line per edge, 0-based)
//! ...
//! ```
//!
//! Floats are written in Rust's shortest round-trip form, so a
//! write/read cycle reproduces the dataset bit for bit.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{Dataset, Graph, LabeledGraph};
use crate::autodiff::Matrix;
use crate::error::{Error, Result};

pub const FORMAT_HEADER: &str = "c3g-dataset 1";

pub fn write_dataset_string(dataset: &Dataset) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{FORMAT_HEADER}");
    let _ = writeln!(
        out,
        "classes {} features {} graphs {}",
        dataset.num_classes(),
        dataset.feature_dim(),
        dataset.len()
    );
    for lg in dataset.graphs() {
        let g = &lg.graph;
        let _ = writeln!(out, "graph {} {} {}", lg.label, g.num_nodes(), g.num_edges());
        for r in 0..g.num_nodes() {
            let mut first = true;
            for x in g.features().row(r) {
                if !first {
                    out.push(' ');
                }
                let _ = write!(out, "{x}");
                first = false;
            }
            out.push('\n');
        }
        for &(u, v) in g.edges() {
            let _ = writeln!(out, "{u} {v}");
        }
    }
    out
}

pub fn write_dataset(dataset: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, write_dataset_string(dataset)).map_err(|e| Error::io(path, e))
}

pub fn read_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    read_dataset_str(&text)
}

struct Lines<'a> {
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
    last: usize,
}

impl<'a> Lines<'a> {
    fn next_line(&mut self) -> Result<&'a str> {
        match self.inner.next() {
            Some((i, l)) => {
                self.last = i + 1;
                Ok(l)
            }
            None => Err(Error::parse("dataset", self.last + 1, "unexpected end of file")),
        }
    }

    fn err(&self, msg: impl Into<String>) -> Error {
        Error::parse("dataset", self.last, msg)
    }
}

fn keyed<'a>(lines: &Lines<'a>, tokens: &[&'a str], keys: &[&str]) -> Result<Vec<usize>> {
    if tokens.len() != keys.len() * 2 {
        return Err(lines.err(format!("expected fields {keys:?}")));
    }
    keys.iter()
        .enumerate()
        .map(|(i, k)| {
            if tokens[2 * i] != *k {
                return Err(lines.err(format!("expected `{k}`, found `{}`", tokens[2 * i])));
            }
            tokens[2 * i + 1]
                .parse::<usize>()
                .map_err(|_| lines.err(format!("bad count for `{k}`")))
        })
        .collect()
}

fn parse_count(lines: &Lines<'_>, tok: &str) -> Result<usize> {
    tok.parse::<usize>()
        .map_err(|_| lines.err(format!("bad integer {tok:?}")))
}

pub fn read_dataset_str(text: &str) -> Result<Dataset> {
    let mut lines = Lines {
        inner: text.lines().enumerate(),
        last: 0,
    };
    let header = lines.next_line()?;
    if header.trim() != FORMAT_HEADER {
        return Err(lines.err(format!("expected header `{FORMAT_HEADER}`")));
    }
    let meta: Vec<&str> = lines.next_line()?.split_whitespace().collect();
    let counts = keyed(&lines, &meta, &["classes", "features", "graphs"])?;
    let (k, d, n) = (counts[0], counts[1], counts[2]);

    let mut graphs = Vec::new();
    for _ in 0..n {
        let toks: Vec<&str> = lines.next_line()?.split_whitespace().collect();
        if toks.len() != 4 || toks[0] != "graph" {
            return Err(lines.err("expected `graph <label> <nodes> <edges>`"));
        }
        let (label, nodes, edges) = (
            parse_count(&lines, toks[1])?,
            parse_count(&lines, toks[2])?,
            parse_count(&lines, toks[3])?,
        );

        let mut feats = Vec::new();
        for _ in 0..nodes {
            let row = lines.next_line()?;
            let before = feats.len();
            for tok in row.split_whitespace() {
                let v: f64 = tok.parse().map_err(|_| lines.err(format!("bad number {tok:?}")))?;
                if !v.is_finite() {
                    return Err(lines.err("non-finite feature"));
                }
                feats.push(v);
            }
            if feats.len() - before != d {
                return Err(lines.err(format!("expected {d} features")));
            }
        }
        let mut edge_list = Vec::new();
        for _ in 0..edges {
            let toks: Vec<&str> = lines.next_line()?.split_whitespace().collect();
            if toks.len() != 2 {
                return Err(lines.err("expected `<u> <v>`"));
            }
            edge_list.push((parse_count(&lines, toks[0])?, parse_count(&lines, toks[1])?));
        }
        let features = Matrix::from_vec(nodes, d, feats)?;
        graphs.push(LabeledGraph {
            graph: Graph::new(nodes, edge_list, features)?,
            label,
        });
    }
    while let Ok(extra) = lines.next_line() {
        if !extra.trim().is_empty() {
            return Err(lines.err("trailing content"));
        }
    }
    Dataset::new(graphs, k, d)
}
