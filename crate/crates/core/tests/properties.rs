#![allow(clippy::single_range_in_vec_init)]

use approx::assert_relative_eq;
use proptest::prelude::*;

use multiport_battery::analytics::{
    characterize_asymmetric, characterize_port, characterize_symmetric, gain_profile, port_layout,
    symmetric_isolated_gain, unit_grid,
};
use multiport_battery::control::{
    duty_candidates, main_index, select_symmetric, CandidateRule, Coupling, PiState,
};
use multiport_battery::model::{string_voltage, BatteryModule, ConnectionVector, ModuleMode};
use multiport_battery::modulation::{
    build_carriers, build_carriers_with, sample_port_voltage, CarrierSet, Layout, SlotOrder,
};
use multiport_battery::oracle::{exact_waveform, waveform_oracle};

fn port() -> impl Strategy<Value = (usize, usize)> {
    (2usize..=12).prop_flat_map(|n| (Just(n), 1..=n))
}

/// `m` at least `gap` away from every `k/n_c` and `k/L`.
fn off_boundary(m: f64, n_c: usize, l: usize, gap: f64) -> bool {
    [n_c, l].iter().all(|&k| {
        let x = m * k as f64;
        (x - x.round()).abs() >= gap * k as f64
    })
}

fn string_carriers(n_c: usize, l: usize) -> CarrierSet {
    match port_layout(l, n_c) {
        Layout::Symmetric => build_carriers(n_c, &[0..n_c, 0..l], 1000.0).unwrap(),
        Layout::Asymmetric => build_carriers_with(n_c, &[0..n_c, 0..l], 1000.0, SlotOrder::StringOrder).unwrap(),
    }
}

proptest! {
    #[test]
    fn string_voltage_is_linear_in_v(
        bits in prop::collection::vec(0u8..=1, 1..12),
        scale in 0.1f64..10.0,
    ) {
        let n = bits.len();
        let v: Vec<f64> = (0..n).map(|i| 90.0 + i as f64).collect();
        let w: Vec<f64> = (0..n).map(|i| 3.0 * i as f64).collect();
        let s = ConnectionVector::new(bits).unwrap();
        let combined: Vec<f64> = v.iter().zip(&w).map(|(a, b)| scale * a + b).collect();
        let lhs = string_voltage(&s, &combined).unwrap();
        let rhs = scale * string_voltage(&s, &v).unwrap() + string_voltage(&s, &w).unwrap();
        prop_assert!((lhs - rhs).abs() <= 1e-9 * lhs.abs().max(1.0));
    }

    #[test]
    fn string_voltage_monotone_and_bounded(bits in prop::collection::vec(0u8..=1, 1..12), flip in 0usize..12) {
        let n = bits.len();
        let v: Vec<f64> = (0..n).map(|i| 80.0 + 2.0 * i as f64).collect();
        let total: f64 = v.iter().sum();
        let s = ConnectionVector::new(bits.clone()).unwrap();
        let base = string_voltage(&s, &v).unwrap();
        prop_assert!(base <= total);
        prop_assert_eq!(base == total, bits.iter().all(|&b| b == 1));

        let mut raised = bits;
        raised[flip % n] = 1;
        let up = string_voltage(&ConnectionVector::new(raised).unwrap(), &v).unwrap();
        prop_assert!(up >= base);
    }

    #[test]
    fn parallel_and_bypass_give_equal_voltage(modes in prop::collection::vec(0u8..3, 1..12)) {
        let modules: Vec<BatteryModule> = modes
            .iter()
            .map(|&k| BatteryModule {
                mode: [ModuleMode::Series, ModuleMode::Bypass, ModuleMode::Parallel][k as usize],
                ..BatteryModule::new(96.0, 1e-3)
            })
            .collect();
        let swapped: Vec<BatteryModule> = modules
            .iter()
            .map(|m| BatteryModule {
                mode: if m.mode == ModuleMode::Parallel { ModuleMode::Bypass } else { m.mode },
                ..*m
            })
            .collect();
        let v = vec![96.0; modules.len()];
        prop_assert_eq!(
            string_voltage(&ConnectionVector::from_modes(&modules), &v).unwrap(),
            string_voltage(&ConnectionVector::from_modes(&swapped), &v).unwrap()
        );
    }

    #[test]
    fn symmetric_port_has_two_adjacent_levels_and_short_period(n_c in 2usize..=12, m in 0.001f64..0.999) {
        prop_assume!(off_boundary(m, n_c, n_c, 1e-6));
        let c = build_carriers(n_c, &[0..n_c], 1000.0).unwrap();
        let w = exact_waveform(&vec![m; n_c], &c, 0..n_c).unwrap();
        let levels: std::collections::BTreeSet<usize> = w.segments.iter().map(|s| s.level).collect();
        prop_assert_eq!(levels.len(), 2);
        let lv: Vec<usize> = levels.into_iter().collect();
        prop_assert_eq!(lv[1], lv[0] + 1);
        // one pulse per effective period
        prop_assert_eq!(w.runs_at(lv[1]), n_c);
        let mut lens: Vec<f64> = w.segments.iter().filter(|s| s.level == lv[1]).map(|s| s.len).collect();
        // a pulse straddling the period boundary shows up as two pieces
        let (first, last) = (w.segments[0], w.segments[w.segments.len() - 1]);
        if first.level == lv[1] && last.level == lv[1] && w.segments.len() > 1 {
            let tail = lens.pop().unwrap();
            lens[0] += tail;
        }
        for len in &lens {
            prop_assert!((len - lens[0]).abs() < 1e-9);
        }
    }

    #[test]
    fn sampled_mean_matches_dc((n_c, l) in port(), m in 0.0f64..=1.0) {
        let c = string_carriers(n_c, l);
        let dt = c.t_sw_eff() / 50.0;
        let periods = 2.0;
        let v = sample_port_voltage(&vec![m; n_c], &c, 0..l, 96.0, periods * c.t_sw(), dt).unwrap();
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        let quantization = 2.0 * l as f64 * 96.0 * dt / c.t_sw();
        prop_assert!((mean - m * l as f64 * 96.0).abs() <= quantization + 1e-9,
            "mean {} vs {}", mean, m * l as f64 * 96.0);
    }

    #[test]
    fn symmetric_carrier_order_is_inconsequential(
        n_c in 2usize..=12,
        m in 0.0f64..=1.0,
        seed in any::<u64>(),
    ) {
        let mut slots: Vec<usize> = (0..n_c).collect();
        let mut state = seed;
        for i in (1..n_c).rev() {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            slots.swap(i, (state >> 33) as usize % (i + 1));
        }
        let a = CarrierSet::from_slots((0..n_c).collect(), n_c, 1000.0).unwrap();
        let b = CarrierSet::from_slots(slots, n_c, 1000.0).unwrap();
        let wa = exact_waveform(&vec![m; n_c], &a, 0..n_c).unwrap();
        let wb = exact_waveform(&vec![m; n_c], &b, 0..n_c).unwrap();
        for level in 0..=n_c {
            prop_assert!((wa.time_at(level) - wb.time_at(level)).abs() < 1e-12);
            prop_assert_eq!(wa.runs_at(level), wb.runs_at(level));
        }
    }

    #[test]
    fn closed_forms_match_oracle((n_c, l) in port(), m in 0.0f64..=1.0) {
        prop_assume!(off_boundary(m, n_c, l, 1e-9));
        let a = characterize_port(m, l, n_c, 1.0, 1.0).unwrap();
        let o = waveform_oracle(m, &string_carriers(n_c, l), 0..l, 1.0, 1.0).unwrap().pulse;
        for (x, y) in [
            (a.v_dc, o.v_dc),
            (a.v_base, o.v_base),
            (a.duty, o.duty),
            (a.v_max, o.v_max),
            (a.v_min, o.v_min),
            (a.v_p_plus, o.v_p_plus),
            (a.v_p_minus, o.v_p_minus),
        ] {
            prop_assert!((x - y).abs() <= 1e-9 * x.abs().max(y.abs()).max(1.0), "{} vs {}", x, y);
        }
    }

    #[test]
    fn dc_output_is_linear_in_m((n_c, l) in port(), m in 0.0f64..=1.0, v_m in 10.0f64..200.0) {
        let a = characterize_port(m, l, n_c, v_m, 1.0).unwrap();
        prop_assert!((a.v_dc - m * l as f64 * v_m).abs() <= 1e-9 * v_m * l as f64);
    }

    #[test]
    fn symmetric_gain_is_mirror_symmetric(d in 1e-9f64..(1.0 - 1e-9)) {
        let g = symmetric_isolated_gain(d).unwrap();
        prop_assert!((0.5..=1.0).contains(&g));
        prop_assert_eq!(g, symmetric_isolated_gain(1.0 - d).unwrap());
    }

    #[test]
    fn asymmetric_rectified_amplitude_symmetric_about_half((n_c, l) in port(), m in 0.0f64..=1.0) {
        prop_assume!(l < n_c && n_c % l != 0);
        prop_assume!(off_boundary(m, n_c, l, 1e-9));
        let a = characterize_asymmetric(m, l, n_c, 1.0, 1.0).unwrap();
        let b = characterize_asymmetric(1.0 - m, l, n_c, 1.0, 1.0).unwrap();
        prop_assert!((a.rectified_amplitude() - b.rectified_amplitude()).abs() < 1e-9);
        prop_assert!((a.v_p_plus + b.v_p_minus).abs() < 1e-9);
    }

    #[test]
    fn oracle_conduction_identity((n_c, l) in port(), m in 0.0f64..=1.0) {
        prop_assume!(off_boundary(m, n_c, l, 1e-9));
        let o = waveform_oracle(m, &string_carriers(n_c, l), 0..l, 1.0, 1.0).unwrap();
        prop_assert!((o.conduction.delta_t - o.conduction_identity()).abs() < 1e-9);
    }

    #[test]
    fn duty_candidates_reproduce_duty(n_c in 2usize..=12, d in 0.01f64..0.5) {
        let c = build_carriers(n_c, &[0..n_c], 1000.0).unwrap();
        let cands = duty_candidates(d, n_c, CandidateRule::DutyPreserving);
        prop_assert_eq!(cands.len(), 2 * n_c);
        for m in cands {
            let duty = waveform_oracle(m, &c, 0..n_c, 1.0, 1.0).unwrap().pulse.duty;
            prop_assert!((duty - d).abs() < 1e-9 || (duty - (1.0 - d)).abs() < 1e-9, "m {} duty {}", m, duty);
        }
    }

    #[test]
    fn nearest_candidate_bounds_dc_deviation(n_c in 2usize..=12, d in 0.0f64..=0.5, r in 0.0f64..=1.0) {
        let v_m = 96.0;
        let v_ref = r * n_c as f64 * v_m;
        let sel = select_symmetric(d, v_ref, n_c, v_m, CandidateRule::DutyPreserving);
        let m_opt = v_ref / (n_c as f64 * v_m);
        prop_assert!((sel.m_main - m_opt).abs() <= 0.5 / n_c as f64 + 1e-12);
    }

    #[test]
    fn dc_consistent_coupling_preserves_string_dc(
        (n_c, l) in port(),
        m_opt in 0.0f64..=1.0,
        m2 in 0.0f64..=1.0,
    ) {
        prop_assume!(l < n_c);
        let m1 = main_index(m_opt, m2, n_c, l, Coupling::DcConsistent);
        prop_assume!((0.0..=1.0).contains(&m1));
        let c = string_carriers(n_c, l);
        let m: Vec<f64> = (0..n_c).map(|i| if i < l { m2 } else { m1 }).collect();
        let dc = exact_waveform(&m, &c, 0..n_c).unwrap().mean_level();
        let want = n_c as f64 * m_opt;
        prop_assert!((dc - want).abs() <= 1e-6 * want.max(1e-3));
    }

    #[test]
    fn pi_output_stays_within_limits(
        kp in 0.0f64..5.0,
        ki in 0.0f64..50.0,
        lo in -1.0f64..0.0,
        width in 0.01f64..2.0,
        errs in prop::collection::vec(-100.0f64..100.0, 1..200),
    ) {
        let mut pi = PiState::new(kp, ki, lo, lo + width);
        for e in errs {
            let u = pi.step(e, 1e-3);
            prop_assert!(u >= lo && u <= lo + width);
        }
    }

    #[test]
    fn profile_inversion_hits_target(l in 1usize..=9, target in 5.0f64..400.0) {
        let p = gain_profile(l, 9, 96.0, 1.0, &unit_grid(0.001).unwrap()).unwrap();
        for m in p.invert(target) {
            // cells straddling a jump of the profile have no meaningful root
            let k = ((m * 1000.0).floor() as usize).min(999);
            let (a, b) = (p.entries[k].v_dc2, p.entries[k + 1].v_dc2);
            if (a - b).abs() > 2.0 {
                continue;
            }
            let c = characterize_port(m, l, 9, 96.0, 1.0).unwrap();
            prop_assert!((c.v_dc2 - target).abs() < 0.2, "m {} gives {}", m, c.v_dc2);
        }
    }
}

#[test]
fn full_string_profile_is_periodic_in_m() {
    let grid = unit_grid(1.0 / 900.0).unwrap();
    let p = gain_profile(9, 9, 96.0, 1.0, &grid).unwrap();
    for k in 1..(grid.len() - 100) {
        // skip points where D = 0, which have no pulse
        if k % 100 == 0 {
            continue;
        }
        assert_relative_eq!(p.entries[k].v_dc2, p.entries[k + 100].v_dc2, max_relative = 1e-9);
    }
}

#[test]
fn symmetric_reference_values() {
    let c = characterize_symmetric(0.35, 9, 96.0, 1.0).unwrap();
    assert_relative_eq!(c.duty, 0.15, epsilon = 1e-12);
    assert_relative_eq!(c.v_dc2, 0.85 * 96.0, epsilon = 1e-9);
}
