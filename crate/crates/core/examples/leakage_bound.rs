//! Open-loop sweep of the transformer leakage inductance on the symmetric
//! scenario, next to the closed-form bound.

use anyhow::Result;
use multiport_battery::analytics::{characterize_symmetric, symmetric_ratings};
use multiport_battery::control::DualPortController;
use multiport_battery::scenario::ScenarioConfig;
use multiport_battery::sim::{leakage_bound, leakage_sweep};

fn main() -> Result<()> {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/scenarios/scenario1.toml");
    let mut cfg = ScenarioConfig::load(path.as_ref())?;
    cfg.sim.duration = 0.15;
    let iso = cfg.isolated_port.clone().expect("scenario1 has an isolated port");

    let m = 4.3 / 9.0;
    let c = characterize_symmetric(m, 9, cfg.string.module_voltage, iso.turns_ratio)?;
    let r_load = match iso.load {
        multiport_battery::model::Load::Resistive { resistance_ohm } => resistance_ohm,
        _ => anyhow::bail!("expected a resistive isolated load"),
    };
    let p_load = c.v_dc2 * c.v_dc2 / r_load;
    let rating = symmetric_ratings(&c, p_load, cfg.sim.f_sw_eff)?;
    println!(
        "m = {m:.4}: D = {:.3}, ideal v_dc2 = {:.1} V, closed-form leakage bound {:.2} uH",
        c.duty,
        c.v_dc2,
        rating.l_es_bound * 1e6
    );

    let mut sim = cfg.simulation(&DualPortController::OpenLoop {
        m_main: m,
        m_shared: None,
    })?;
    sim.precharge(m, None, c.v_dc2);
    let values: Vec<f64> = [0.1, 0.2, 0.5, 1.0, 2.0, 5.0, 10.0].iter().map(|u| u * 1e-6).collect();
    let sweep = leakage_sweep(&sim, m, &values, 0.1)?;
    for (l, v) in &sweep {
        println!("  L_es {:5.1} uH -> v_dc2 {:7.2} V ({:.1}% of ideal)", l * 1e6, v, 100.0 * v / c.v_dc2);
    }
    match leakage_bound(&sweep, c.v_dc2, 0.95) {
        Some(l) => println!("largest swept L_es keeping 95% of ideal: {:.1} uH", l * 1e6),
        None => println!("no swept L_es keeps 95% of ideal"),
    }
    Ok(())
}
