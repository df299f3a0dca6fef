//! Phase-shifted carriers for a nine-module string with a two-module
//! isolated port, and the exact port waveform they produce.

use anyhow::Result;
use multiport_battery::modulation::{build_carriers, sample_port_voltage};
use multiport_battery::oracle::exact_waveform;

fn main() -> Result<()> {
    let carriers = build_carriers(9, &[0..9, 0..2], 2000.0)?;
    println!("slots {:?}, layout of 0..2: {:?}", carriers.slots(), carriers.layout_of(0..2));

    let m = vec![0.42; 9];
    for (name, span) in [("full string", 0..9), ("isolated port", 0..2)] {
        let w = exact_waveform(&m, &carriers, span.clone())?;
        println!("{name}: mean level {:.4}", w.mean_level());
        for s in &w.segments {
            println!("  [{:.5}, {:.5}) level {}", s.start, s.start + s.len, s.level);
        }
        let dt = carriers.t_sw_eff() / 100.0;
        let sampled = sample_port_voltage(&m, &carriers, span, 96.0, carriers.t_sw(), dt)?;
        let mean = sampled.iter().sum::<f64>() / sampled.len() as f64;
        println!("  sampled mean {mean:.3} V over {} points", sampled.len());
    }
    Ok(())
}
