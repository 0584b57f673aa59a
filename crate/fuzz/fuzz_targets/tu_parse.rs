#![no_main]
use c3gnn::graphdata::{parse_tu_sources, TuSources};
use libfuzzer_sys::fuzz_target;

// Sections separated by NUL: adjacency, graph indicator, graph labels and
// optionally node labels and node attributes.
fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    let parts: Vec<&str> = text.split('\0').collect();
    if parts.len() < 3 {
        return;
    }
    let src = TuSources {
        adjacency: parts[0],
        graph_indicator: parts[1],
        graph_labels: parts[2],
        node_labels: parts.get(3).copied(),
        node_attributes: parts.get(4).copied(),
    };
    if let Ok(ds) = parse_tu_sources(&src) {
        assert!(ds.graphs().iter().all(|g| g.label < ds.num_classes()));
    }
});
