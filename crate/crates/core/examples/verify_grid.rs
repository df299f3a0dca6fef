//! Oracle verification on a small grid, with and without boundary exclusion.

use anyhow::Result;
use multiport_battery::verify::{verify, GridSpec};

fn main() -> Result<()> {
    let grid = GridSpec {
        n_c_max: 9,
        step: 0.01,
        ..GridSpec::default()
    };
    print!("{}", verify(&grid)?.render());

    let raw = verify(&GridSpec {
        boundary_exclusion: 0.0,
        ..grid
    })?;
    for c in &raw.checks {
        println!("without exclusion: {} has {} failures", c.name, c.failures);
    }
    Ok(())
}
