//! Runs the bundled symmetric scenario and prints its steady-window metrics.

use anyhow::Result;
use multiport_battery::scenario::{run_scenario, ScenarioConfig};

fn main() -> Result<()> {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/scenarios/scenario1.toml");
    let cfg = ScenarioConfig::load(path.as_ref())?;
    let start = std::time::Instant::now();
    let run = run_scenario(&cfg)?;
    println!("{} simulated in {:.1} s", cfg.name, start.elapsed().as_secs_f64());
    for w in &run.report.windows {
        println!(
            "{:.2}-{:.2} s: v_dc1 {:.1} V ripple {:.3}%, v_dc2 {:.2} V ripple {:.3}% error {:.3}%",
            w.window_start_s,
            w.window_end_s,
            w.v_dc1.mean,
            w.v_dc1.ripple_pct,
            w.v_dc2.mean,
            w.v_dc2.ripple_pct,
            w.v_dc2.steady_state_error_pct
        );
    }
    let b = &run.report.balance;
    println!(
        "charge balance {:.2e}% / {:.2e}% / {:.2e}%, power balance {:.3}%",
        b.c_dc1_charge_pct, b.c_dc2_charge_pct, b.c_dc3_charge_pct, b.power_balance_pct
    );
    Ok(())
}
