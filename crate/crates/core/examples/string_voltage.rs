//! Output voltage of a nine-module string for a few connection patterns.

use anyhow::Result;
use multiport_battery::model::{string_voltage, terminal_voltage_under_load, BatteryModule, ConnectionVector};

fn main() -> Result<()> {
    let modules = vec![BatteryModule::new(96.0, 1e-3); 9];
    let v: Vec<f64> = modules.iter().map(|m| m.v_nom).collect();

    for pattern in [
        vec![1, 1, 1, 1, 1, 1, 1, 1, 1],
        vec![1, 0, 1, 0, 1, 0, 1, 0, 1],
        vec![0, 0, 1, 1, 1, 1, 1, 0, 0],
        vec![0; 9],
    ] {
        let s = ConnectionVector::new(pattern.clone())?;
        let open = string_voltage(&s, &v)?;
        let loaded = terminal_voltage_under_load(&modules, &s, 50.0);
        println!("{pattern:?}: {open:7.2} V open circuit, {loaded:7.2} V at 50 A");
    }
    Ok(())
}
