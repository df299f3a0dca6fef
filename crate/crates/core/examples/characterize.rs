//! Closed-form port quantities next to the exact-waveform measurement, and
//! the ratings derived from them.

use anyhow::Result;
use multiport_battery::analytics::{
    asymmetric_conduction, asymmetric_ratings, characterize_asymmetric, characterize_symmetric, symmetric_ratings,
    ConductionMode,
};
use multiport_battery::verify::characterize;

fn main() -> Result<()> {
    for (m, n_c, l) in [(0.35, 9, 9), (0.5, 9, 2), (0.62, 9, 4)] {
        print!("{}", characterize(m, n_c, l, 96.0, 1.0, 2000.0)?.render());
        println!();
    }

    let sym = characterize_symmetric(0.35, 9, 96.0, 1.2)?;
    let r = symmetric_ratings(&sym, 1000.0, 18_000.0)?;
    println!(
        "symmetric m=0.35: v_dc2 {:.2} V, diode current {:.2} A, leakage bound {:.3} uH ({:?})",
        sym.v_dc2,
        r.i_d,
        r.l_es_bound * 1e6,
        r.rule
    );

    let t_sw = 1.0 / 2000.0;
    let asym = characterize_asymmetric(0.62, 4, 9, 96.0, 1.0)?;
    for mode in [ConductionMode::Literal, ConductionMode::Oracle] {
        let c = asymmetric_conduction(0.62, 4, 9, t_sw, mode)?;
        let r = asymmetric_ratings(&asym, &c, 1000.0, 18_000.0)?;
        println!(
            "asymmetric m=0.62 L=4 {mode:?}: d_eff {:.4}, i_d,min {:.2} A, printed leakage bound {:.3e} H",
            c.d_eff, r.i_d_min, r.l_es_bound_literal
        );
    }
    Ok(())
}
