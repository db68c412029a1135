use std::path::{Path, PathBuf};

use fbmtrend_core::pipeline::InputConfig;
use fbmtrend_core::{interpolate_daily, load_csv, synth_generate, PipelineConfig, SynthSpec};

fn data(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data").join(name)
}

#[test]
fn bundled_configs_validate() {
    for name in ["example.toml", "quick.toml"] {
        let cfg = PipelineConfig::load(data(name)).unwrap();
        cfg.validate().unwrap();
        let input = cfg.input.path.as_ref().unwrap();
        assert!(input.is_absolute() || input.starts_with(data("")));
        assert!(input.exists(), "{name}: {}", input.display());
    }
}

#[test]
fn example_config_lists_the_defaults() {
    let mut cfg = PipelineConfig::load(data("example.toml")).unwrap();
    cfg.input = InputConfig::default();
    assert_eq!(cfg, PipelineConfig::default());
}

#[test]
fn bundled_series_regenerates_from_its_spec() {
    let truth: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(data("reference_truth.json")).unwrap()).unwrap();
    let spec: SynthSpec = serde_json::from_value(truth["spec"].clone()).unwrap();
    let (expected, _) = synth_generate(&spec).unwrap();
    let loaded = load_csv(data("reference.csv")).unwrap();
    assert_eq!(loaded.len(), expected.len());
    assert_eq!(loaded.times(), expected.times());
    for (a, b) in loaded.values().iter().zip(expected.values()) {
        assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
    }
    let (x, gaps) = interpolate_daily(&loaded);
    assert_eq!(x.len(), 2348);
    assert_eq!(gaps.total_inserted, 2348 - loaded.len());
}
