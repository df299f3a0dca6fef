//! Runs the bundled asymmetric scenario with both coupling modes and
//! compares the tracking errors.

use anyhow::Result;
use multiport_battery::scenario::{run_scenario, RunMode, ScenarioConfig};

fn main() -> Result<()> {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/scenarios/scenario2.toml");
    for mode in [RunMode::DcConsistent, RunMode::Literal] {
        let cfg = ScenarioConfig::load(path.as_ref())?.with_mode(Some(mode));
        let run = run_scenario(&cfg)?;
        println!("{mode:?}");
        for w in &run.report.windows {
            println!(
                "  {:.2}-{:.2} s: v_dc1 {:.1} V error {:.3}%, v_dc2 {:.1} V error {:.3}%",
                w.window_start_s,
                w.window_end_s,
                w.v_dc1.mean,
                w.v_dc1.steady_state_error_pct,
                w.v_dc2.mean,
                w.v_dc2.steady_state_error_pct
            );
        }
        for t in &run.report.transients {
            println!("  overshoot of {:?} after {:.2} s: {:.2}%", t.channel, t.start_s, t.overshoot_pct);
        }
    }
    Ok(())
}
