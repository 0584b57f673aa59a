//! TU benchmark text format: `<name>_A.txt` (1-based comma-separated edge
//! list over global node ids), `<name>_graph_indicator.txt` (graph id per
//! node), `<name>_graph_labels.txt` (one label per graph) and node labels or
//! node attributes.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use super::{Dataset, Graph, LabeledGraph};
use crate::autodiff::Matrix;
use crate::error::{Error, Result};

/// Contents of the TU files for one dataset.
#[derive(Clone, Copy, Debug)]
pub struct TuSources<'a> {
    pub adjacency: &'a str,
    pub graph_indicator: &'a str,
    pub graph_labels: &'a str,
    pub node_labels: Option<&'a str>,
    pub node_attributes: Option<&'a str>,
}

fn read_required(dir: &Path, file: &str) -> Result<String> {
    let path = dir.join(file);
    if !path.is_file() {
        return Err(Error::MissingFile(path));
    }
    fs::read_to_string(&path).map_err(|e| Error::io(path, e))
}

fn read_optional(dir: &Path, file: &str) -> Result<Option<String>> {
    let path = dir.join(file);
    if !path.is_file() {
        return Ok(None);
    }
    fs::read_to_string(&path).map(Some).map_err(|e| Error::io(path, e))
}

/// Load `<dir>/<name>_*.txt`.
pub fn parse_tu_dataset(dir: impl AsRef<Path>, name: &str) -> Result<Dataset> {
    let dir = dir.as_ref();
    let adjacency = read_required(dir, &format!("{name}_A.txt"))?;
    let indicator = read_required(dir, &format!("{name}_graph_indicator.txt"))?;
    let labels = read_required(dir, &format!("{name}_graph_labels.txt"))?;
    let node_labels = read_optional(dir, &format!("{name}_node_labels.txt"))?;
    let node_attributes = read_optional(dir, &format!("{name}_node_attributes.txt"))?;
    if node_labels.is_none() && node_attributes.is_none() {
        return Err(Error::MissingFile(dir.join(format!(
            "{name}_node_attributes.txt or {name}_node_labels.txt"
        ))));
    }
    parse_tu_sources(&TuSources {
        adjacency: &adjacency,
        graph_indicator: &indicator,
        graph_labels: &labels,
        node_labels: node_labels.as_deref(),
        node_attributes: node_attributes.as_deref(),
    })
}

fn data_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty())
}

fn parse_int(context: &str, line: usize, tok: &str) -> Result<i64> {
    tok.trim()
        .parse::<i64>()
        .map_err(|_| Error::parse(context, line, format!("expected integer, got {tok:?}")))
}

fn parse_float(context: &str, line: usize, tok: &str) -> Result<f64> {
    let v = tok
        .trim()
        .parse::<f64>()
        .map_err(|_| Error::parse(context, line, format!("expected number, got {tok:?}")))?;
    if !v.is_finite() {
        return Err(Error::parse(context, line, "non-finite attribute"));
    }
    Ok(v)
}

/// Parse in-memory TU sources. Class labels are remapped to `0..K` in
/// ascending order of their raw values; node labels become one-hot features
/// unless attributes are present. Self-loops are dropped and reciprocal
/// edge pairs merged.
pub fn parse_tu_sources(src: &TuSources<'_>) -> Result<Dataset> {
    let raw_labels: Vec<i64> = data_lines(src.graph_labels)
        .map(|(ln, l)| parse_int("graph_labels", ln, l))
        .collect::<Result<_>>()?;
    let num_graphs = raw_labels.len();
    if num_graphs == 0 {
        return Err(Error::InvalidDataset("no graphs".into()));
    }

    // node -> (graph, local index)
    let mut node_graph = Vec::new();
    let mut node_local = Vec::new();
    let mut graph_sizes = vec![0usize; num_graphs];
    for (ln, l) in data_lines(src.graph_indicator) {
        let g = parse_int("graph_indicator", ln, l)?;
        if g < 1 || g as u64 > num_graphs as u64 {
            return Err(Error::parse(
                "graph_indicator",
                ln,
                format!("graph id {g} outside 1..={num_graphs}"),
            ));
        }
        let g = (g - 1) as usize;
        node_graph.push(g);
        node_local.push(graph_sizes[g]);
        graph_sizes[g] += 1;
    }
    let num_nodes = node_graph.len();
    if let Some(g) = graph_sizes.iter().position(|&n| n == 0) {
        return Err(Error::InvalidDataset(format!("graph {} has zero nodes", g + 1)));
    }

    let mut edges: Vec<Vec<(usize, usize)>> = vec![Vec::new(); num_graphs];
    for (ln, l) in data_lines(src.adjacency) {
        let mut parts = l.split(',');
        let (a, b) = match (parts.next(), parts.next(), parts.next()) {
            (Some(a), Some(b), None) => (a, b),
            _ => return Err(Error::parse("A", ln, "expected `u, v`")),
        };
        let (u, v) = (parse_int("A", ln, a)?, parse_int("A", ln, b)?);
        for x in [u, v] {
            if x < 1 || x as u64 > num_nodes as u64 {
                return Err(Error::parse("A", ln, format!("node {x} outside 1..={num_nodes}")));
            }
        }
        let (u, v) = ((u - 1) as usize, (v - 1) as usize);
        if node_graph[u] != node_graph[v] {
            return Err(Error::parse(
                "A",
                ln,
                format!(
                    "edge ({}, {}) crosses graphs {} and {}",
                    u + 1,
                    v + 1,
                    node_graph[u] + 1,
                    node_graph[v] + 1
                ),
            ));
        }
        edges[node_graph[u]].push((node_local[u], node_local[v]));
    }

    let (feature_dim, node_features) = match (src.node_attributes, src.node_labels) {
        (Some(attrs), _) => {
            let mut dim = None;
            let mut rows = Vec::new();
            for (ln, l) in data_lines(attrs) {
                let row: Vec<f64> = l
                    .split(',')
                    .map(|t| parse_float("node_attributes", ln, t))
                    .collect::<Result<_>>()?;
                match dim {
                    None => dim = Some(row.len()),
                    Some(d) if d != row.len() => {
                        return Err(Error::parse(
                            "node_attributes",
                            ln,
                            format!("attribute dimension {} differs from {d}", row.len()),
                        ))
                    }
                    _ => {}
                }
                rows.push(row);
            }
            if rows.len() != num_nodes {
                return Err(Error::InvalidDataset(format!(
                    "{} attribute rows for {num_nodes} nodes",
                    rows.len()
                )));
            }
            (dim.unwrap_or(0), rows)
        }
        (None, Some(labels)) => {
            let raw: Vec<i64> = data_lines(labels)
                .map(|(ln, l)| {
                    // Multi-column node labels: the first column is the label.
                    let first = l.split(',').next().unwrap_or(l);
                    parse_int("node_labels", ln, first)
                })
                .collect::<Result<_>>()?;
            if raw.len() != num_nodes {
                return Err(Error::InvalidDataset(format!(
                    "{} node labels for {num_nodes} nodes",
                    raw.len()
                )));
            }
            let index: BTreeMap<i64, usize> = raw
                .iter()
                .copied()
                .collect::<BTreeSet<_>>()
                .into_iter()
                .enumerate()
                .map(|(i, v)| (v, i))
                .collect();
            let dim = index.len();
            let rows = raw
                .iter()
                .map(|v| {
                    let mut row = vec![0.0; dim];
                    row[index[v]] = 1.0;
                    row
                })
                .collect();
            (dim, rows)
        }
        (None, None) => {
            return Err(Error::InvalidDataset(
                "neither node attributes nor node labels given".into(),
            ))
        }
    };
    if feature_dim == 0 {
        return Err(Error::InvalidDataset("zero-dimensional node features".into()));
    }

    let class_index: BTreeMap<i64, usize> = raw_labels
        .iter()
        .copied()
        .collect::<BTreeSet<_>>()
        .into_iter()
        .enumerate()
        .map(|(i, v)| (v, i))
        .collect();

    let mut per_graph_feats: Vec<Vec<f64>> = graph_sizes
        .iter()
        .map(|&n| Vec::with_capacity(n * feature_dim))
        .collect();
    for (node, row) in node_features.into_iter().enumerate() {
        per_graph_feats[node_graph[node]].extend_from_slice(&row);
    }

    let graphs = edges
        .into_iter()
        .zip(per_graph_feats)
        .zip(&graph_sizes)
        .zip(&raw_labels)
        .map(|(((e, f), &n), raw)| {
            let features = Matrix::from_vec(n, feature_dim, f)?;
            Ok(LabeledGraph {
                graph: Graph::from_edges_lossy(n, e, features)?,
                label: class_index[raw],
            })
        })
        .collect::<Result<Vec<_>>>()?;

    Dataset::new(graphs, class_index.len(), feature_dim)
}

/// Write a dataset as TU files (`_A`, `_graph_indicator`, `_graph_labels`,
/// `_node_attributes`), both edge directions listed. Labels are written as
/// their `0..K` indices.
pub fn write_tu_dataset(dataset: &Dataset, dir: impl AsRef<Path>, name: &str) -> Result<()> {
    use std::fmt::Write as _;

    let dir = dir.as_ref();
    let (mut a, mut ind, mut lab, mut attr) = (String::new(), String::new(), String::new(), String::new());
    let mut offset = 1;
    for (gi, lg) in dataset.graphs().iter().enumerate() {
        let g = &lg.graph;
        for &(u, v) in g.edges() {
            let _ = writeln!(a, "{}, {}", u + offset, v + offset);
            let _ = writeln!(a, "{}, {}", v + offset, u + offset);
        }
        for r in 0..g.num_nodes() {
            let _ = writeln!(ind, "{}", gi + 1);
            let row: Vec<String> = g.features().row(r).iter().map(|x| x.to_string()).collect();
            let _ = writeln!(attr, "{}", row.join(", "));
        }
        let _ = writeln!(lab, "{}", lg.label);
        offset += g.num_nodes();
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (suffix, body) in [
        ("A", a),
        ("graph_indicator", ind),
        ("graph_labels", lab),
        ("node_attributes", attr),
    ] {
        let path = dir.join(format!("{name}_{suffix}.txt"));
        fs::write(&path, body).map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    // Triangle (class 1) and a 3-node path (class 2), node labels {0, 1}.
    const A: &str = "1, 2\n2, 1\n2, 3\n3, 2\n1, 3\n3, 1\n4, 5\n5, 4\n5, 6\n6, 5\n";
    const IND: &str = "1\n1\n1\n2\n2\n2\n";
    const LAB: &str = "1\n2\n";
    const NODE_LAB: &str = "0\n1\n0\n1\n1\n0\n";

    fn fixture() -> TuSources<'static> {
        TuSources {
            adjacency: A,
            graph_indicator: IND,
            graph_labels: LAB,
            node_labels: Some(NODE_LAB),
            node_attributes: None,
        }
    }

    #[test]
    fn parses_two_graph_fixture() {
        let d = parse_tu_sources(&fixture()).unwrap();
        assert_eq!(d.num_classes(), 2);
        assert_eq!(d.feature_dim(), 2);
        assert_eq!(d.len(), 2);
        assert_eq!(d.graphs()[0].graph.num_nodes(), 3);
        assert_eq!(d.graphs()[1].graph.num_nodes(), 3);
        assert_eq!(d.graphs()[0].graph.num_edges(), 3);
        assert_eq!(d.graphs()[1].graph.edges(), &[(0, 1), (1, 2)]);
        assert_eq!(d.labels(), vec![0, 1]);
        assert_eq!(d.graphs()[0].graph.features().row(1), &[0.0, 1.0]);
    }

    #[test]
    fn rejects_cross_graph_edge() {
        let src = TuSources {
            adjacency: "1, 4\n",
            graph_indicator: "1\n1\n1\n2\n2\n",
            graph_labels: "1\n2\n",
            node_labels: Some("0\n0\n0\n0\n0\n"),
            node_attributes: None,
        };
        let err = parse_tu_sources(&src).unwrap_err();
        assert!(err.to_string().contains("crosses graphs"), "{err}");
    }

    #[test]
    fn error_paths() {
        let mut src = fixture();
        src.adjacency = "1, 9\n";
        assert!(parse_tu_sources(&src).is_err());

        let mut src = fixture();
        src.graph_labels = "1\n2\n3\n";
        assert!(parse_tu_sources(&src).unwrap_err().to_string().contains("zero nodes"));

        let mut src = fixture();
        src.node_labels = None;
        src.node_attributes = Some("1.0, 2.0\n1.0\n1\n1\n1\n1\n");
        assert!(parse_tu_sources(&src).unwrap_err().to_string().contains("dimension"));

        let mut src = fixture();
        src.node_labels = None;
        assert!(parse_tu_sources(&src).is_err());
    }

    #[test]
    fn attributes_take_precedence() {
        let mut src = fixture();
        src.node_attributes = Some("0.5\n1\n2\n3\n4\n5\n");
        let d = parse_tu_sources(&src).unwrap();
        assert_eq!(d.feature_dim(), 1);
        assert_eq!(d.graphs()[1].graph.features().as_slice(), &[3.0, 4.0, 5.0]);
    }

    #[test]
    fn negative_class_labels_are_remapped() {
        let mut src = fixture();
        src.graph_labels = "1\n-1\n";
        let d = parse_tu_sources(&src).unwrap();
        assert_eq!(d.labels(), vec![1, 0]);
    }

    #[test]
    fn missing_files_are_reported() {
        let dir = tempfile::tempdir().unwrap();
        let err = parse_tu_dataset(dir.path(), "X").unwrap_err();
        assert!(matches!(err, Error::MissingFile(_)));
    }

    #[test]
    fn write_then_parse_round_trips() {
        let d = parse_tu_sources(&fixture()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_tu_dataset(&d, dir.path(), "RT").unwrap();
        let back = parse_tu_dataset(dir.path(), "RT").unwrap();
        assert_eq!(back, d);
    }
}
