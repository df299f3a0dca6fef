//! Exact-event reference for every closed-form port quantity.
//!
//! Each carrier crosses a constant modulation index exactly twice per
//! switching period, at times known in closed form. Collecting all crossing
//! times of a port's carriers splits one period into segments on which the
//! number of series modules is constant; the level of each segment is read by
//! evaluating the carrier comparison at its midpoint. Every quantity below is
//! then a finite sum over segments: no sampling and no numeric integration.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::analytics::{
    amplitude_order, ConductionProfile, GainPoint, GainProfile, ProfileMeta, PulseCharacterization,
};
use crate::error::{Error, Result};
use crate::modulation::{CarrierSet, Layout};

/// Segments shorter than this fraction of a period are crossing-time noise.
const MIN_SEGMENT: f64 = 1e-13;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    /// Start as a fraction of the switching period.
    pub start: f64,
    pub len: f64,
    /// Number of series modules.
    pub level: usize,
}

/// One switching period of a port voltage, in units of module voltages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PiecewiseWaveform {
    pub segments: Vec<Segment>,
}

impl PiecewiseWaveform {
    pub fn mean_level(&self) -> f64 {
        self.segments.iter().map(|s| s.level as f64 * s.len).sum()
    }

    pub fn max_level(&self) -> usize {
        self.segments.iter().map(|s| s.level).max().unwrap_or(0)
    }

    pub fn min_level(&self) -> usize {
        self.segments.iter().map(|s| s.level).min().unwrap_or(0)
    }

    /// Fraction of the period spent at `level`.
    pub fn time_at(&self, level: usize) -> f64 {
        self.segments
            .iter()
            .filter(|s| s.level == level)
            .map(|s| s.len)
            .sum()
    }

    /// Maximal runs at `level`, treating the period as a circle.
    pub fn runs_at(&self, level: usize) -> usize {
        let n = self.segments.len();
        if n == 0 {
            return 0;
        }
        let at = |i: usize| self.segments[i % n].level == level;
        if (0..n).all(at) {
            return 1;
        }
        (0..n).filter(|&i| at(i) && !at(i + n - 1)).count()
    }
}

/// Exact piecewise-constant count of series modules in `span` over one
/// period, for per-module indices `m`.
pub fn exact_waveform(m: &[f64], carriers: &CarrierSet, span: Range<usize>) -> Result<PiecewiseWaveform> {
    if m.len() != carriers.len() {
        return Err(Error::Dimension {
            expected: carriers.len(),
            got: m.len(),
        });
    }
    if span.end > carriers.len() || span.is_empty() {
        return Err(Error::Config(format!(
            "span {}..{} is not inside the {}-carrier set",
            span.start,
            span.end,
            carriers.len()
        )));
    }
    // Module i is in series while frac(τ + offset_i) lies within m_i/2 of 0.
    let mut events = vec![0.0, 1.0];
    for i in span.clone() {
        let half = m[i] / 2.0;
        if half > 0.0 && half < 0.5 {
            let p = carriers.offset(i);
            events.push((half - p).rem_euclid(1.0));
            events.push((-half - p).rem_euclid(1.0));
        }
    }
    events.sort_by(f64::total_cmp);
    events.dedup();

    let t_sw = carriers.t_sw();
    let mut segments: Vec<Segment> = Vec::with_capacity(events.len());
    for w in events.windows(2) {
        let len = w[1] - w[0];
        if len < MIN_SEGMENT {
            continue;
        }
        let mid = 0.5 * (w[0] + w[1]) * t_sw;
        let level = span
            .clone()
            // m = 1 only touches the carrier peak, a set of zero length
            .filter(|&i| m[i] >= 1.0 || m[i] > carriers.value(i, mid))
            .count();
        match segments.last_mut() {
            Some(last) if last.level == level => last.len += len,
            _ => segments.push(Segment {
                start: w[0],
                len,
                level,
            }),
        }
    }
    Ok(PiecewiseWaveform { segments })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleMeasurement {
    pub pulse: PulseCharacterization,
    pub conduction: ConductionProfile,
    pub layout: Layout,
    pub waveform: PiecewiseWaveform,
    /// Time per period at the top level (s).
    pub time_at_max: f64,
    /// Time per period at the bottom level (s).
    pub time_at_min: f64,
}

/// Measures a port driven by a uniform index `m` on its span.
pub fn waveform_oracle(
    m: f64,
    carriers: &CarrierSet,
    span: Range<usize>,
    v_m: f64,
    ratio: f64,
) -> Result<OracleMeasurement> {
    crate::error::check_unit_interval("m", m)?;
    let uniform = vec![m; carriers.len()];
    let wave = exact_waveform(&uniform, carriers, span.clone())?;
    let layout = carriers.layout_of(span.clone());
    let l = span.len();
    let t_sw = carriers.t_sw();

    // Pulse duty is read off a symmetric reference: the port itself when it
    // is symmetric, otherwise the full carrier set.
    let (reference, n_eff) = match layout {
        Layout::Symmetric => (wave.clone(), l),
        Layout::Asymmetric => (
            exact_waveform(&uniform, carriers, 0..carriers.len())?,
            carriers.n_slots(),
        ),
    };
    let duty = if reference.max_level() > reference.min_level() {
        reference.time_at(reference.max_level())
    } else {
        0.0
    };
    let t_eff = t_sw / n_eff as f64;

    let mean = wave.mean_level();
    let (top, bottom) = (wave.max_level(), wave.min_level());
    let v_dc = mean * v_m;
    let v_max = top as f64 * v_m;
    let v_min = bottom as f64 * v_m;
    let v_p_plus = v_max - v_dc;
    let v_p_minus = v_min - v_dc;

    let pulse = PulseCharacterization {
        v_dc,
        v_base: v_min,
        duty,
        v_p_plus,
        v_p_minus,
        v_max,
        v_min,
        v_dc2: v_p_plus.max(-v_p_minus) * ratio + 0.0,
    };

    let time_at_max = wave.time_at(top) * t_sw;
    let time_at_min = wave.time_at(bottom) * t_sw;
    let delta_p = wave.time_at(l) * t_sw;
    let delta_n = wave.time_at(0) * t_sw;
    let n_p = if top < l && top > bottom { wave.runs_at(top) } else { 0 };
    let n_n = if bottom > 0 && top > bottom { wave.runs_at(bottom) } else { 0 };

    let delta_t = if top == bottom {
        0.0
    } else {
        match amplitude_order(v_p_plus, -v_p_minus, v_m) {
            std::cmp::Ordering::Greater => time_at_max,
            std::cmp::Ordering::Equal => time_at_max + time_at_min,
            std::cmp::Ordering::Less => time_at_min,
        }
    };

    Ok(OracleMeasurement {
        pulse,
        conduction: ConductionProfile {
            n_p: n_p as i64,
            n_n: n_n as i64,
            delta_p,
            delta_n,
            delta_t,
            d_eff: delta_t / t_sw,
            duty,
            t_sw_eff: t_eff,
        },
        layout,
        waveform: wave,
        time_at_max,
        time_at_min,
    })
}

impl OracleMeasurement {
    /// Conduction time rebuilt from the measured pulse counts and intervals,
    /// `n_p·D·T_eff + Δ_p` for the top level and `n_n·(1−D)·T_eff + Δ_n` for
    /// the bottom level, selected the same way the bridge selects.
    pub fn conduction_identity(&self) -> f64 {
        let c = &self.conduction;
        let pos = c.n_p as f64 * c.duty * c.t_sw_eff + c.delta_p;
        let neg = c.n_n as f64 * (1.0 - c.duty) * c.t_sw_eff + c.delta_n;
        if self.pulse.v_max == self.pulse.v_min {
            return 0.0;
        }
        match amplitude_order(self.pulse.v_p_plus, -self.pulse.v_p_minus, self.pulse.v_max.max(1.0)) {
            std::cmp::Ordering::Greater => pos,
            std::cmp::Ordering::Equal => pos + neg,
            std::cmp::Ordering::Less => neg,
        }
    }
}

/// Gain profile measured on exact waveforms with automatic slot order.
pub fn oracle_gain_profile(l: usize, n_c: usize, v_m: f64, ratio: f64, m_grid: &[f64]) -> Result<GainProfile> {
    let carriers = crate::modulation::build_carriers(n_c, &[0..n_c, 0..l], 1.0)?;
    let layout = carriers.layout_of(0..l);
    let entries = m_grid
        .iter()
        .map(|&m| {
            let o = waveform_oracle(m, &carriers, 0..l, v_m, ratio)?;
            Ok(GainPoint {
                m,
                v_dc1: o.pulse.v_dc,
                v_dc2: o.pulse.v_dc2,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(GainProfile {
        entries,
        meta: ProfileMeta {
            l,
            n_c,
            v_m,
            ratio,
            layout,
        },
    })
}
