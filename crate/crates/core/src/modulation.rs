//! Phase-shifted triangular carriers and carrier comparison.
//!
//! Every module owns one carrier slot out of `n_slots` evenly spaced phase
//! positions (slot `j` sits at phase `2π·j/n_slots`). A port that sees evenly
//! spaced slots is modulated symmetrically; a port whose slots leave a gap is
//! modulated asymmetrically.
//!
//! Carrier convention: with `x = frac(t·f_sw + slot/n_slots)` the carrier is
//! `2x` on the rising half and `2(1 − x)` on the falling half, so phase 0
//! starts in the trough at t = 0 and peaks at T_sw/2. A module is in series
//! while its index is strictly above the carrier, i.e. during the window of
//! width `m·T_sw` centred on each trough.

use std::f64::consts::TAU;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ConnectionVector;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Layout {
    Symmetric,
    Asymmetric,
}

/// How carrier slots are handed out to modules.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SlotOrder {
    /// Slot `i` to module `i`.
    StringOrder,
    /// String order, except that a sub-port whose length divides the module
    /// count receives every `N/L`-th slot so that it stays symmetric.
    #[default]
    Auto,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CarrierSet {
    slots: Vec<usize>,
    n_slots: usize,
    f_sw: f64,
}

impl CarrierSet {
    /// Carrier set from an explicit slot per module. Slots must be distinct
    /// and below `n_slots`.
    pub fn from_slots(slots: Vec<usize>, n_slots: usize, f_sw: f64) -> Result<Self> {
        if n_slots == 0 || slots.len() > n_slots {
            return Err(Error::Config(format!(
                "{} carriers do not fit in {n_slots} slots",
                slots.len()
            )));
        }
        let mut seen = vec![false; n_slots];
        for &s in &slots {
            if s >= n_slots || seen[s] {
                return Err(Error::Config(format!("carrier slot {s} is invalid or reused")));
            }
            seen[s] = true;
        }
        if !(f_sw > 0.0) {
            return Err(Error::Domain {
                name: "f_sw",
                value: f_sw,
                domain: "(0, ∞)",
            });
        }
        Ok(Self {
            slots,
            n_slots,
            f_sw,
        })
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn n_slots(&self) -> usize {
        self.n_slots
    }

    pub fn slots(&self) -> &[usize] {
        &self.slots
    }

    /// Per-module switching frequency (Hz).
    pub fn f_sw(&self) -> f64 {
        self.f_sw
    }

    pub fn t_sw(&self) -> f64 {
        1.0 / self.f_sw
    }

    /// Ripple frequency seen at the full string, N·f_sw.
    pub fn f_sw_eff(&self) -> f64 {
        self.n_slots as f64 * self.f_sw
    }

    pub fn t_sw_eff(&self) -> f64 {
        self.t_sw() / self.n_slots as f64
    }

    pub fn phase(&self, module: usize) -> f64 {
        TAU * self.slots[module] as f64 / self.n_slots as f64
    }

    pub fn phases(&self) -> Vec<f64> {
        (0..self.slots.len()).map(|i| self.phase(i)).collect()
    }

    /// Carrier phase of `module` as a fraction of one period.
    pub(crate) fn offset(&self, module: usize) -> f64 {
        self.slots[module] as f64 / self.n_slots as f64
    }

    /// Symmetric when the span's slots are evenly spaced around the circle.
    pub fn layout_of(&self, span: Range<usize>) -> Layout {
        let mut s: Vec<usize> = self.slots[span].to_vec();
        let l = s.len();
        if l == 0 || !self.n_slots.is_multiple_of(l) {
            return Layout::Asymmetric;
        }
        s.sort_unstable();
        let step = self.n_slots / l;
        let even = s.windows(2).all(|w| w[1] - w[0] == step)
            && (s[0] + self.n_slots - s[l - 1]) == step;
        if even {
            Layout::Symmetric
        } else {
            Layout::Asymmetric
        }
    }

    /// Symmetric only if every given span is.
    pub fn layout(&self, spans: &[Range<usize>]) -> Layout {
        if spans.iter().all(|s| self.layout_of(s.clone()) == Layout::Symmetric) {
            Layout::Symmetric
        } else {
            Layout::Asymmetric
        }
    }

    /// Carrier value in [0, 1] of `module` at time `t`.
    pub fn value(&self, module: usize, t: f64) -> f64 {
        triangle((t * self.f_sw + self.offset(module)).rem_euclid(1.0))
    }
}

fn triangle(x: f64) -> f64 {
    if x < 0.5 {
        2.0 * x
    } else {
        2.0 * (1.0 - x)
    }
}

/// Symmetric triangle carrier with the given phase (radians).
pub fn carrier_value(phase: f64, f_sw: f64, t: f64) -> f64 {
    triangle((t * f_sw + phase / TAU).rem_euclid(1.0))
}

pub fn build_carriers(n_modules: usize, port_spans: &[Range<usize>], f_sw: f64) -> Result<CarrierSet> {
    build_carriers_with(n_modules, port_spans, f_sw, SlotOrder::Auto)
}

pub fn build_carriers_with(
    n_modules: usize,
    port_spans: &[Range<usize>],
    f_sw: f64,
    order: SlotOrder,
) -> Result<CarrierSet> {
    if n_modules == 0 {
        return Err(Error::Config("a string needs at least one module".into()));
    }
    let mut slot_of: Vec<Option<usize>> = vec![None; n_modules];
    let mut used = vec![false; n_modules];

    if order == SlotOrder::Auto {
        for span in port_spans {
            let l = span.len();
            if l == 0 || l == n_modules || span.end > n_modules || !n_modules.is_multiple_of(l) {
                continue;
            }
            if span.clone().any(|i| slot_of[i].is_some()) {
                continue;
            }
            let stride = n_modules / l;
            let offset = (0..stride).find(|&o| (0..l).all(|j| !used[o + j * stride]));
            if let Some(o) = offset {
                for (j, module) in span.clone().enumerate() {
                    let slot = o + j * stride;
                    slot_of[module] = Some(slot);
                    used[slot] = true;
                }
            }
        }
    }

    let mut free = (0..n_modules).filter(|&s| !used[s]);
    let slots = slot_of
        .into_iter()
        .map(|s| s.unwrap_or_else(|| free.next().expect("one slot per module")))
        .collect();
    CarrierSet::from_slots(slots, n_modules, f_sw)
}

/// Connection vector at time `t`: module `i` is in series iff `m[i]` exceeds
/// its carrier. Ties bypass.
pub fn modulate(m: &[f64], carriers: &CarrierSet, t: f64) -> Result<ConnectionVector> {
    if m.len() != carriers.len() {
        return Err(Error::Dimension {
            expected: carriers.len(),
            got: m.len(),
        });
    }
    Ok(ConnectionVector::from_bools(
        m.iter()
            .enumerate()
            .map(|(i, &mi)| mi > carriers.value(i, t)),
    ))
}

/// Port voltage sampled every `dt` for `duration`, with all modules at `v_m`.
pub fn sample_port_voltage(
    m: &[f64],
    carriers: &CarrierSet,
    span: Range<usize>,
    v_m: f64,
    duration: f64,
    dt: f64,
) -> Result<Vec<f64>> {
    let max_dt = carriers.t_sw_eff() / 50.0;
    if !(dt > 0.0) || dt > max_dt {
        return Err(Error::Config(format!(
            "sample step {dt:e} s must be in (0, {max_dt:e}] s"
        )));
    }
    if span.end > carriers.len() {
        return Err(Error::Dimension {
            expected: carriers.len(),
            got: span.end,
        });
    }
    let n = (duration / dt).floor() as usize;
    (0..n)
        .map(|k| {
            let s = modulate(m, carriers, k as f64 * dt)?;
            Ok(s.series_count(span.clone()) as f64 * v_m)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    #[test]
    fn carrier_trough_and_peak() {
        let f = 2000.0;
        assert_eq!(carrier_value(0.0, f, 0.0), 0.0);
        assert_relative_eq!(carrier_value(0.0, f, 0.5 / f), 1.0, epsilon = 1e-12);
        assert_relative_eq!(carrier_value(PI, f, 0.0), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn full_string_is_symmetric() {
        let c = build_carriers(9, &[0..9], 2000.0).unwrap();
        assert_eq!(c.layout_of(0..9), Layout::Symmetric);
        assert_relative_eq!(c.phase(1) - c.phase(0), TAU / 9.0, epsilon = 1e-12);
    }

    #[test]
    fn divisor_sub_port_is_interleaved() {
        let c = build_carriers(9, &[0..9, 0..3], 2000.0).unwrap();
        assert_eq!(&c.slots()[..3], &[0, 3, 6]);
        assert_eq!(c.layout_of(0..3), Layout::Symmetric);
        assert_eq!(c.layout(&[0..9, 0..3]), Layout::Symmetric);

        let strict = build_carriers_with(9, &[0..9, 0..3], 2000.0, SlotOrder::StringOrder).unwrap();
        assert_eq!(strict.layout_of(0..3), Layout::Asymmetric);
    }

    #[test]
    fn two_module_port_leaves_seven_slot_gap() {
        let c = build_carriers(9, &[0..9, 0..2], 2000.0).unwrap();
        assert_eq!(c.slots(), &[0, 1, 2, 3, 4, 5, 6, 7, 8]);
        assert_eq!(c.layout_of(0..2), Layout::Asymmetric);
        let gap = c.n_slots() - c.slots()[1] + c.slots()[0] - 1;
        assert_eq!(gap, 7);
    }

    #[test]
    fn modulate_extremes() {
        let c = build_carriers(9, &[0..9], 2000.0).unwrap();
        // slightly off the trough of carrier 0 so every carrier is below 1
        let t = 1e-6;
        let s = modulate(&[1.0; 9], &c, t).unwrap();
        assert_eq!(s.series_count(0..9), 9);
        for k in 0..50 {
            let s = modulate(&[0.0; 9], &c, k as f64 * 1e-5).unwrap();
            assert_eq!(s.series_count(0..9), 0);
        }
        assert!(modulate(&[0.5; 8], &c, 0.0).is_err());
    }

    #[test]
    fn uniform_half_index_toggles_between_four_and_five_modules() {
        let c = build_carriers(9, &[0..9], 2000.0).unwrap();
        let dt = c.t_sw_eff() / 400.0;
        let w = sample_port_voltage(&[0.5; 9], &c, 0..9, 96.0, c.t_sw(), dt).unwrap();
        let mut levels: Vec<i64> = w.iter().map(|v| (v / 96.0).round() as i64).collect();
        levels.sort_unstable();
        levels.dedup();
        assert_eq!(levels, vec![4, 5]);
    }

    #[test]
    fn asymmetric_waveform_spans_zero_to_two_modules() {
        let c = build_carriers(9, &[0..9, 0..2], 2000.0).unwrap();
        let dt = c.t_sw_eff() / 400.0;
        let w = sample_port_voltage(&[0.5; 9], &c, 0..2, 96.0, c.t_sw(), dt).unwrap();
        let max = w.iter().cloned().fold(f64::MIN, f64::max);
        let min = w.iter().cloned().fold(f64::MAX, f64::min);
        assert_eq!((min, max), (0.0, 192.0));
    }

    #[test]
    fn zero_index_gives_zero_waveform() {
        let c = build_carriers(9, &[0..9], 2000.0).unwrap();
        let w = sample_port_voltage(&[0.0; 9], &c, 0..9, 96.0, c.t_sw(), c.t_sw_eff() / 60.0).unwrap();
        assert!(w.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn coarse_sampling_is_rejected() {
        let c = build_carriers(9, &[0..9], 2000.0).unwrap();
        let err = sample_port_voltage(&[0.5; 9], &c, 0..9, 96.0, c.t_sw(), c.t_sw_eff() / 10.0);
        assert!(matches!(err, Err(Error::Config(_))));
    }

    #[test]
    fn slot_validation() {
        assert!(CarrierSet::from_slots(vec![0, 0], 2, 1.0).is_err());
        assert!(CarrierSet::from_slots(vec![0, 3], 3, 1.0).is_err());
        assert!(CarrierSet::from_slots(vec![0, 1], 2, 0.0).is_err());
    }
}
