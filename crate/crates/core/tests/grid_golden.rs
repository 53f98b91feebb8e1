//! The 6×6 similarity heatmap against stored CSV and SVG renderings.
//! `UPDATE_GOLDEN=1` rewrites them.

use std::fs;
use std::path::PathBuf;

use fairssl::cka::{similarity_grid, LayerActivations};
use fairssl::ActivationDump;

const LAYERS: [&str; 6] = ["conv1", "conv2", "conv3", "pool", "cls1", "cls2"];

/// Deterministic activations: layer `l` mixes a shared signal with a
/// layer-specific one, so neighbouring layers are more similar.
fn dump(model: &str, phase: f64) -> ActivationDump {
    let n = 24;
    let layers = LAYERS
        .iter()
        .enumerate()
        .map(|(l, name)| {
            let dim = 2 + l;
            let data = (0..n * dim)
                .map(|idx| {
                    let (i, j) = ((idx / dim) as f64, (idx % dim) as f64);
                    let shared = (0.37 * i + 0.11 * j).sin();
                    let own = (1.3 * i * (l as f64 + 1.0) + j + phase).cos();
                    (shared + 0.4 * l as f64 * own) as f32
                })
                .collect();
            LayerActivations { name: name.to_string(), dim, data }
        })
        .collect();
    let ids = (0..n as u64).collect();
    ActivationDump::new(model, ids, vec![], vec![], layers).unwrap()
}

fn golden(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name)
}

fn check(name: &str, got: &str) {
    let path = golden(name);
    if std::env::var_os("UPDATE_GOLDEN").is_some() {
        fs::create_dir_all(path.parent().unwrap()).unwrap();
        fs::write(&path, got).unwrap();
        return;
    }
    let want = fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    assert_eq!(got, want, "{name} differs from its golden file");
}

#[test]
fn heatmap_matches_golden() {
    let grid = similarity_grid(&dump("a", 0.0), &dump("b", 0.7)).unwrap();
    assert_eq!((grid.rows.len(), grid.cols.len()), (6, 6));
    // printed values only carry a few digits, so cross-CPU rounding in the
    // GEMM stays below what the files record
    let csv = grid.to_csv();
    let (_, _, values) = fairssl::SimilarityGrid::parse_csv(csv.as_bytes()).unwrap();
    let rounded: Vec<String> = values.iter().map(|v| format!("{v:.6}")).collect();
    check("grid_6x6_values.txt", &(rounded.join("\n") + "\n"));
    check("grid_6x6.svg", &grid.to_svg());
}
