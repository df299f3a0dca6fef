//! Candidate modulation indices for a requested pulse duty, and one step of
//! each dual-port controller.

use anyhow::Result;
use multiport_battery::analytics::{gain_profile, unit_grid};
use multiport_battery::control::{
    asymmetric_controller_step, duty_candidates, open_loop_pair, select_symmetric, AsymmetricControlConfig,
    CandidateRule, PiState, Refs,
};

fn main() -> Result<()> {
    let (n_c, v_m) = (9, 96.0);
    for rule in [CandidateRule::AsPrinted, CandidateRule::DutyPreserving] {
        let c = duty_candidates(0.3, n_c, rule);
        let shown: Vec<String> = c.iter().take(6).map(|m| format!("{m:.4}")).collect();
        println!("{rule:?}: {} candidates, first {}", c.len(), shown.join(" "));
    }

    let d = select_symmetric(0.3, 500.0, n_c, v_m, CandidateRule::DutyPreserving);
    println!(
        "D=0.3, v_dc1 ref 500 V -> m = {:.5}, v_dc1 = {:.2} V",
        d.m_main,
        d.m_main * n_c as f64 * v_m
    );

    let profile = gain_profile(2, n_c, v_m, 2.5, &unit_grid(0.001)?)?;
    let (below, above) = open_loop_pair(&profile, 330.0)?;
    println!("open-loop indices for 330 V: {below:?} and {above:?}");

    let mut pi1 = PiState::new(0.0, 0.02, -0.05, 0.05);
    let mut pi2 = PiState::new(0.0, 0.01, -0.1, 0.1);
    let refs = Refs {
        v_dc1: 500.0,
        v_dc2: 330.0,
    };
    let step = asymmetric_controller_step(
        495.0,
        328.0,
        refs,
        &profile,
        n_c,
        2,
        v_m,
        &mut pi1,
        &mut pi2,
        5e-4,
        &AsymmetricControlConfig::default(),
    )?;
    println!(
        "asymmetric step: m_main {:.5}, m_shared {:.5}",
        step.m_main,
        step.m_shared.unwrap_or(f64::NAN)
    );
    Ok(())
}
