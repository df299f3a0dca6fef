use std::fs;
use std::path::Path;

use multiport_battery::scenario::{cmd_simulate, run_scenario, ScenarioConfig};
use multiport_battery::sim::metrics;
use multiport_battery::Error;

const SCENARIO1: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/scenarios/scenario1.toml");
const SCENARIO2: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/scenarios/scenario2.toml");

/// A bundled scenario cut down to `duration` with a single window at its end.
fn shortened(path: &str, duration: f64) -> ScenarioConfig {
    let mut cfg = ScenarioConfig::load(Path::new(path)).unwrap();
    cfg.sim.duration = duration;
    cfg.sim.balance_window = Some(0.01);
    cfg.metrics.windows_s = vec![[duration - 0.05, duration]];
    cfg.metrics.transients.clear();
    cfg
}

#[test]
fn manifest_reruns_bit_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("short.toml");
    fs::write(&cfg_path, shortened(SCENARIO2, 0.1).to_toml().unwrap()).unwrap();

    let first = cmd_simulate(&cfg_path, Some(&dir.path().join("a")), None).unwrap();
    let second = cmd_simulate(&first.manifest, Some(&dir.path().join("b")), None).unwrap();
    assert_eq!(
        fs::read(&first.time_series).unwrap(),
        fs::read(&second.time_series).unwrap()
    );
    assert_eq!(fs::read(&first.manifest).unwrap(), fs::read(&second.manifest).unwrap());
    assert_eq!(fs::read(&first.metrics).unwrap(), fs::read(&second.metrics).unwrap());
}

#[test]
fn outputs_carry_schema_tags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("short.toml");
    fs::write(&cfg_path, shortened(SCENARIO1, 0.06).to_toml().unwrap()).unwrap();
    let a = cmd_simulate(&cfg_path, Some(dir.path()), None).unwrap();

    let csv = fs::read_to_string(&a.time_series).unwrap();
    assert!(csv.starts_with("# schema=multiport-battery/time-series/1\n"));
    let manifest = fs::read_to_string(&a.manifest).unwrap();
    assert!(manifest.starts_with("# schema=multiport-battery/manifest/1\n"));
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(&a.metrics).unwrap()).unwrap();
    assert_eq!(json["schema_version"], "multiport-battery/metrics/1");
}

#[test]
fn identical_configs_give_identical_series() {
    let cfg = shortened(SCENARIO1, 0.06);
    let a = run_scenario(&cfg).unwrap().output.series;
    let b = run_scenario(&cfg).unwrap().output.series;
    assert_eq!(a, b);
}

#[test]
fn bridge_current_never_negative() {
    for path in [SCENARIO1, SCENARIO2] {
        let run = run_scenario(&shortened(path, 0.08)).unwrap();
        assert!(run.output.series.i_d.iter().all(|&i| i >= 0.0));
    }
}

#[test]
fn halving_dt_moves_isolated_output_little() {
    let coarse = shortened(SCENARIO1, 0.3);
    let mut fine = coarse.clone();
    fine.sim.dt /= 2.0;
    let window = 0.25..0.3;
    let a = metrics(&run_scenario(&coarse).unwrap().output.series, window.clone()).unwrap();
    let b = metrics(&run_scenario(&fine).unwrap().output.series, window).unwrap();
    let rel = (a.v_dc2.mean - b.v_dc2.mean).abs() / b.v_dc2.mean;
    assert!(rel < 1e-3, "v_cdc3 mean {} vs {} ({:.4}%)", a.v_dc2.mean, b.v_dc2.mean, rel * 100.0);
}

#[test]
fn coarse_step_is_rejected_with_field_name() {
    let mut cfg = shortened(SCENARIO1, 0.06);
    cfg.sim.dt = 1e-5;
    let err = run_scenario(&cfg).unwrap_err();
    assert!(matches!(err, Error::Config(_)));
    assert!(err.to_string().contains("dt_s"), "{err}");
}

#[test]
fn unknown_field_is_rejected() {
    let text = fs::read_to_string(SCENARIO1).unwrap().replace("dt_s", "dt_seconds");
    let err = ScenarioConfig::from_toml_str(&text).unwrap_err();
    assert!(err.to_string().contains("dt_seconds"), "{err}");
}
