//! Config file to coverage table, end to end.

use std::path::Path;

use spel_core::methods::MethodRegistry;
use spel_core::montecarlo::{emit_table, run_coverage, ExperimentConfig, TableFormat};

#[test]
fn config_to_table() {
    let dir = tempfile::tempdir().unwrap();
    let w = spel_core::weights::build_grid_queen(4, 4).unwrap();
    spel_core::weights::save_weights(
        &w,
        &dir.path().join("w16.csv"),
        spel_core::weights::WeightFormat::DenseCsv,
    )
    .unwrap();
    let text = r#"
dist = "normal"
reps = 40
seed = 5
methods = ["lr", "el"]
[theta0]
beta = [3.5]
rho = 0.3
[[weights]]
file = "w16.csv"
pool = 2
[[weights]]
grid = [4, 4]
label = "queen16"
"#;
    std::fs::write(dir.path().join("exp.toml"), text).unwrap();
    let config = ExperimentConfig::load(&dir.path().join("exp.toml")).unwrap();
    let registry = MethodRegistry::builtin();
    let results: Vec<_> = config
        .cells
        .iter()
        .map(|c| run_coverage(c, &registry).unwrap())
        .collect();

    // the file holds the same grid, so the unpooled cell matches a direct grid run
    assert_eq!(results[0].weights_label, "I2xw16");
    assert_eq!(results[1].weights_label, "queen16");
    assert_eq!(results[0].n, 32);
    for r in &results {
        assert_eq!(r.reps, 40);
        assert!((r.threshold - 7.814727903251174).abs() < 1e-9);
        for m in &r.methods {
            assert!(m.covered <= 40);
        }
    }

    let csv = emit_table(&results, TableFormat::Csv, &["test".into()]);
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 4);
    assert!(lines[2].starts_with("0.3,I2xw16,"));
    assert!(lines[3].starts_with("0.3,queen16,"));
    assert!(Path::new(&dir.path().join("w16.csv")).exists());
}
