//! Gain profiles of every port length of a nine-module string, written as
//! CSV, and the open-loop indices that reach a chosen output.
//!
//! Usage: `cargo run --example gain_profiles [out_dir]`

use std::path::PathBuf;

use anyhow::Result;
use multiport_battery::verify::{cmd_gain_profile, ProfileSource};

fn main() -> Result<()> {
    let dir = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("gain_profiles"));
    for l in [9, 2, 4, 5, 7, 8] {
        let path = dir.join(format!("n9_l{l}.csv"));
        let p = cmd_gain_profile(9, l, 96.0, 2.5, 0.001, ProfileSource::Oracle, &path)?;
        let (lo, hi) = p.v_dc2_range();
        let roots: Vec<String> = p.invert(300.0).iter().map(|m| format!("{m:.4}")).collect();
        println!(
            "L={l} {:?}: v_dc2 in [{lo:.1}, {hi:.1}] V, 300 V at m = [{}] -> {}",
            p.meta.layout,
            roots.join(", "),
            path.display()
        );
    }
    Ok(())
}
