//! Closed-form port characterization under symmetric and asymmetric
//! phase-shifted-carrier modulation.
//!
//! Sign convention: `v_p_plus` is the height of the top level above the dc
//! component and is non-negative; `v_p_minus` is the bottom level minus the
//! dc component and is non-positive. The isolated port rectifies whichever
//! has the larger magnitude.
//!
//! Conduction times in [`ConductionProfile`] are totals over one per-module
//! switching period `T_sw`; `d_eff` is the conducting fraction of that period.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{check_unit_interval, Error, Result};
use crate::modulation::Layout;

/// Schema tag written at the top of every gain-profile CSV.
pub const GAIN_PROFILE_SCHEMA: &str = "multiport-battery/gain-profile/1";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PulseCharacterization {
    pub v_dc: f64,
    pub v_base: f64,
    pub duty: f64,
    pub v_p_plus: f64,
    pub v_p_minus: f64,
    pub v_max: f64,
    pub v_min: f64,
    /// Isolated-port output voltage, neglecting parasitics.
    pub v_dc2: f64,
}

impl PulseCharacterization {
    pub fn v_p_minus_magnitude(&self) -> f64 {
        -self.v_p_minus
    }

    /// Amplitude of the pulse the diode bridge rectifies.
    pub fn rectified_amplitude(&self) -> f64 {
        self.v_p_plus.max(-self.v_p_minus)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConductionProfile {
    /// Positive pulses per switching period.
    pub n_p: i64,
    /// Negative pulses per switching period.
    pub n_n: i64,
    /// Time with every port module in series.
    pub delta_p: f64,
    /// Time with every port module bypassed.
    pub delta_n: f64,
    /// Total diode-bridge conduction time.
    pub delta_t: f64,
    /// `delta_t / T_sw`.
    pub d_eff: f64,
    /// Pulse duty the counts refer to.
    pub duty: f64,
    pub t_sw_eff: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConductionMode {
    /// Pulse-count and interval formulas applied verbatim.
    Literal,
    /// Counts and intervals measured on the exact carrier-crossing waveform.
    Oracle,
}

/// Normalized isolated-port gain `v_dc2 / (v_M · N2/N1)` for pulse duty `duty`.
///
/// The bridge picks the larger of the two pulse levels, so the gain is
/// `1 − D` up to `D = 0.5` and `D` above. With no pulse (`D = 0`) nothing
/// crosses the dc-block capacitor and the gain is zero.
pub fn symmetric_isolated_gain(duty: f64) -> Result<f64> {
    check_unit_interval("duty", duty)?;
    if duty == 0.0 || duty == 1.0 {
        return Ok(0.0);
    }
    // via the shorter interval so that D and 1 − D give bit-identical gains
    Ok(1.0 - duty.min(1.0 - duty))
}

pub fn characterize_symmetric(m: f64, l: usize, v_m: f64, ratio: f64) -> Result<PulseCharacterization> {
    check_unit_interval("m", m)?;
    if l == 0 {
        return Err(Error::Domain {
            name: "L",
            value: 0.0,
            domain: "L ≥ 1",
        });
    }
    let ml = m * l as f64;
    let base_level = ml.floor();
    let duty = ml - base_level;
    let v_base = base_level * v_m;
    let v_max = if duty > 0.0 { v_base + v_m } else { v_base };
    Ok(PulseCharacterization {
        v_dc: ml * v_m,
        v_base,
        duty,
        v_p_plus: if duty > 0.0 { (1.0 - duty) * v_m } else { 0.0 },
        v_p_minus: -duty * v_m,
        v_max,
        v_min: v_base,
        v_dc2: symmetric_isolated_gain(duty)? * v_m * ratio,
    })
}

/// Conduction of a symmetric port: `L` pulses of `D·T_sw/L` at the top
/// level and `L` of `(1−D)·T_sw/L` at the bottom level per period. A level
/// equal to `L` (all in series) or `0` (all bypassed) is reported as an
/// interval rather than as pulses, matching [`crate::oracle`].
pub fn symmetric_conduction(m: f64, l: usize, t_sw: f64) -> Result<ConductionProfile> {
    let c = characterize_symmetric(m, l, 1.0, 1.0)?;
    let d = c.duty;
    let t_eff = t_sw / l as f64;
    if d == 0.0 {
        return Ok(ConductionProfile {
            n_p: 0,
            n_n: 0,
            delta_p: if c.v_max == l as f64 { t_sw } else { 0.0 },
            delta_n: if c.v_min == 0.0 { t_sw } else { 0.0 },
            delta_t: 0.0,
            d_eff: 0.0,
            duty: 0.0,
            t_sw_eff: t_eff,
        });
    }
    let top_is_full = c.v_max == l as f64;
    let bottom_is_empty = c.v_min == 0.0;
    let li = l as i64;
    let (n_p, delta_p) = if top_is_full { (0, d * t_sw) } else { (li, 0.0) };
    let (n_n, delta_n) = if bottom_is_empty { (0, (1.0 - d) * t_sw) } else { (li, 0.0) };
    let delta_t = match amplitude_order(c.v_p_plus, -c.v_p_minus, 1.0) {
        std::cmp::Ordering::Greater => d * t_sw,
        std::cmp::Ordering::Equal => t_sw,
        std::cmp::Ordering::Less => (1.0 - d) * t_sw,
    };
    Ok(ConductionProfile {
        n_p,
        n_n,
        delta_p,
        delta_n,
        delta_t,
        d_eff: delta_t / t_sw,
        duty: d,
        t_sw_eff: t_eff,
    })
}

/// Which leakage-inductance inequality produced a bound.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LeakageRule {
    /// `D(1−D)·V²/(4·f·P)`, used for `D ≤ 0.5`.
    DutyAtMostHalf,
    /// `(1−D)(2D−1)·V²/(4·f·P)`, used for `D > 0.5`.
    DutyAboveHalf,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SymmetricRatings {
    /// Average diode-bridge current with the isolated output voltage in the
    /// denominator.
    pub i_d: f64,
    /// Same expression with the port dc voltage `v_dc` in the denominator, as
    /// the formula is commonly printed.
    pub i_d_port_dc: f64,
    pub l_es_bound: f64,
    pub rule: LeakageRule,
}

pub fn symmetric_ratings(c: &PulseCharacterization, p_load2: f64, f_sw_eff: f64) -> Result<SymmetricRatings> {
    let d = c.duty;
    if !(d > 0.0 && d < 1.0) {
        return Err(Error::UnboundedCurrent { duty: d });
    }
    if !(p_load2 > 0.0) {
        return Err(Error::Domain {
            name: "p_load2",
            value: p_load2,
            domain: "(0, ∞)",
        });
    }
    if !(f_sw_eff > 0.0) {
        return Err(Error::Domain {
            name: "f_sw_eff",
            value: f_sw_eff,
            domain: "(0, ∞)",
        });
    }
    let window = d.min(1.0 - d);
    let scale = c.v_dc2 * c.v_dc2 / (4.0 * f_sw_eff * p_load2);
    let (l_es_bound, rule) = if d <= 0.5 {
        (d * (1.0 - d) * scale, LeakageRule::DutyAtMostHalf)
    } else {
        ((1.0 - d) * (2.0 * d - 1.0) * scale, LeakageRule::DutyAboveHalf)
    };
    Ok(SymmetricRatings {
        i_d: p_load2 / (c.v_dc2 * window),
        i_d_port_dc: p_load2 / (c.v_dc * window),
        l_es_bound,
        rule,
    })
}

fn check_asymmetric_domain(m: f64, l: usize, n_c: usize) -> Result<()> {
    check_unit_interval("m", m)?;
    if l == 0 || l > n_c {
        return Err(Error::Domain {
            name: "L",
            value: l as f64,
            domain: "1 ≤ L ≤ N_C",
        });
    }
    Ok(())
}

/// Port of `l` consecutive carrier slots out of `n_c`.
pub fn characterize_asymmetric(
    m: f64,
    l: usize,
    n_c: usize,
    v_m: f64,
    ratio: f64,
) -> Result<PulseCharacterization> {
    check_asymmetric_domain(m, l, n_c)?;
    let (lf, nf) = (l as f64, n_c as f64);
    let floor_m = (m * nf).floor();
    let floor_1m = ((1.0 - m) * nf).floor();

    let v_max = lf.min(nf - floor_1m) * v_m;
    let v_min = (lf - nf + floor_m).max(0.0) * v_m;

    let v_p_plus = if m < lf / nf {
        (nf - floor_1m - m * lf) * v_m
    } else {
        (1.0 - m) * lf * v_m
    };
    let v_p_minus_mag = if m <= (nf - lf) / nf {
        m * lf * v_m
    } else {
        (nf - floor_m - (1.0 - m) * lf) * v_m
    };

    Ok(PulseCharacterization {
        v_dc: m * lf * v_m,
        v_base: v_min,
        duty: m * nf - floor_m,
        v_p_plus,
        v_p_minus: -v_p_minus_mag,
        v_max,
        v_min,
        v_dc2: v_p_plus.max(v_p_minus_mag) * ratio,
    })
}

/// Relative tolerance deciding that both pulse amplitudes are equal.
const AMPLITUDE_TIE: f64 = 1e-9;

pub(crate) fn amplitude_order(v_p_plus: f64, v_p_minus_mag: f64, scale: f64) -> std::cmp::Ordering {
    if (v_p_plus - v_p_minus_mag).abs() <= AMPLITUDE_TIE * scale.abs().max(f64::MIN_POSITIVE) {
        std::cmp::Ordering::Equal
    } else {
        v_p_plus.total_cmp(&v_p_minus_mag)
    }
}

/// Pulse-count and interval formulas for an asymmetric port, verbatim.
///
/// Several of these branches disagree with the measured waveform (see
/// [`crate::oracle`]); they are kept as printed so the disagreement can be
/// reported rather than hidden.
pub fn asymmetric_conduction_literal(m: f64, l: usize, n_c: usize, t_sw: f64) -> Result<ConductionProfile> {
    let c = characterize_asymmetric(m, l, n_c, 1.0, 1.0)?;
    let (lf, nf) = (l as f64, n_c as f64);
    let li = l as i64;
    let t_eff = t_sw / nf;
    let duty = c.duty;
    let floor_m = (m * nf).floor() as i64;
    let floor_1m = ((1.0 - m) * nf).floor() as i64;

    let n_p = if m < lf / nf {
        li - floor_m
    } else {
        (m + 1.0 / nf).floor() as i64 * (li - 1)
    };
    let n_n = if m <= (nf - lf) / nf {
        -((m - 1.0 / nf).floor() as i64) * (li - 1)
    } else {
        li - floor_1m
    };
    let delta_p = if m < lf / nf {
        0.0
    } else {
        (m * nf - lf + 1.0) * t_eff
    };
    let delta_n = if m < (nf - lf) / nf {
        (m * nf - lf + 1.0) * t_eff
    } else {
        0.0
    };

    let pos = n_p as f64 * duty * t_eff + delta_p;
    let neg = n_n as f64 * (1.0 - duty) * t_eff + delta_n;
    let delta_t = match amplitude_order(c.v_p_plus, -c.v_p_minus, 1.0) {
        std::cmp::Ordering::Greater => pos,
        std::cmp::Ordering::Equal => pos + neg,
        std::cmp::Ordering::Less => neg,
    };
    Ok(ConductionProfile {
        n_p,
        n_n,
        delta_p,
        delta_n,
        delta_t,
        d_eff: delta_t / t_sw,
        duty,
        t_sw_eff: t_eff,
    })
}

pub fn asymmetric_conduction(
    m: f64,
    l: usize,
    n_c: usize,
    t_sw: f64,
    mode: ConductionMode,
) -> Result<ConductionProfile> {
    match mode {
        ConductionMode::Literal => asymmetric_conduction_literal(m, l, n_c, t_sw),
        ConductionMode::Oracle => {
            check_asymmetric_domain(m, l, n_c)?;
            let carriers = crate::modulation::build_carriers_with(
                n_c,
                &[0..n_c, 0..l],
                1.0 / t_sw,
                crate::modulation::SlotOrder::StringOrder,
            )?;
            Ok(crate::oracle::waveform_oracle(m, &carriers, 0..l, 1.0, 1.0)?.conduction)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AsymmetricRatings {
    /// Lower bound on the average diode-bridge current while conducting.
    pub i_d_min: f64,
    /// Leakage bound from the printed sufficient condition. Its last factor is
    /// the selected amplitude minus the larger amplitude, which is never
    /// positive, so this is zero (or negative) by construction.
    pub l_es_bound_literal: f64,
}

pub fn asymmetric_ratings(
    c: &PulseCharacterization,
    cond: &ConductionProfile,
    p_load2: f64,
    f_sw_eff: f64,
) -> Result<AsymmetricRatings> {
    if !(cond.d_eff > 0.0) {
        return Err(Error::UnboundedCurrent { duty: cond.d_eff });
    }
    if !(p_load2 > 0.0) {
        return Err(Error::Domain {
            name: "p_load2",
            value: p_load2,
            domain: "(0, ∞)",
        });
    }
    let v_pp = c.v_p_plus;
    let v_pn = -c.v_p_minus;
    let front = cond.d_eff * cond.d_eff * c.v_dc2 * c.v_dc2 / (4.0 * f_sw_eff * p_load2);
    let factor = if v_pp >= v_pn {
        v_pp - v_pp.max(v_pn)
    } else {
        v_pn - v_pn.max(v_pp)
    };
    Ok(AsymmetricRatings {
        i_d_min: p_load2 / (c.v_dc2 * cond.d_eff),
        l_es_bound_literal: front * factor,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GainPoint {
    pub m: f64,
    pub v_dc1: f64,
    pub v_dc2: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProfileMeta {
    pub l: usize,
    pub n_c: usize,
    pub v_m: f64,
    pub ratio: f64,
    pub layout: Layout,
}

/// Port output voltages tabulated over a modulation-index grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GainProfile {
    pub entries: Vec<GainPoint>,
    pub meta: ProfileMeta,
}

/// `0, step, 2·step, …, 1` with the last point exactly 1.
pub fn unit_grid(step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0 && step <= 1.0) {
        return Err(Error::Domain {
            name: "grid step",
            value: step,
            domain: "(0, 1]",
        });
    }
    let n = (1.0 / step).round() as usize;
    Ok((0..=n).map(|k| k as f64 / n as f64).collect())
}

/// Layout a port of `l` out of `n_c` modules gets under automatic slot order.
pub fn port_layout(l: usize, n_c: usize) -> Layout {
    if l > 0 && n_c.is_multiple_of(l) {
        Layout::Symmetric
    } else {
        Layout::Asymmetric
    }
}

/// Analytic port characterization for the layout the port would get.
pub fn characterize_port(m: f64, l: usize, n_c: usize, v_m: f64, ratio: f64) -> Result<PulseCharacterization> {
    match port_layout(l, n_c) {
        Layout::Symmetric => characterize_symmetric(m, l, v_m, ratio),
        Layout::Asymmetric => characterize_asymmetric(m, l, n_c, v_m, ratio),
    }
}

pub fn gain_profile(l: usize, n_c: usize, v_m: f64, ratio: f64, m_grid: &[f64]) -> Result<GainProfile> {
    let entries = m_grid
        .iter()
        .map(|&m| {
            let c = characterize_port(m, l, n_c, v_m, ratio)?;
            Ok(GainPoint {
                m,
                v_dc1: c.v_dc,
                v_dc2: c.v_dc2,
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
            layout: port_layout(l, n_c),
        },
    })
}

impl GainProfile {
    pub fn v_dc2_range(&self) -> (f64, f64) {
        self.entries
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
                (lo.min(p.v_dc2), hi.max(p.v_dc2))
            })
    }

    /// Every `m` where the piecewise-linear `v_dc2(m)` equals `target`.
    pub fn invert(&self, target: f64) -> Vec<f64> {
        let mut out: Vec<f64> = Vec::new();
        for w in self.entries.windows(2) {
            let (a, b) = (w[0], w[1]);
            let (da, db) = (a.v_dc2 - target, b.v_dc2 - target);
            let m = if da == 0.0 {
                Some(a.m)
            } else if da * db < 0.0 {
                Some(a.m + (b.m - a.m) * da / (da - db))
            } else {
                None
            };
            if let Some(m) = m {
                if out.last().is_none_or(|&prev| (m - prev).abs() > 1e-12) {
                    out.push(m);
                }
            }
        }
        if let Some(last) = self.entries.last() {
            if last.v_dc2 == target && out.last().is_none_or(|&p| p != last.m) {
                out.push(last.m);
            }
        }
        out
    }

    /// Writes `m, v_dc1_norm, v_dc2_norm`; `v_dc1` is normalized by `L·v_M`
    /// and `v_dc2` by `v_M·N2/N1`. The first line is a `#` schema comment.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let meta = &self.meta;
        writeln!(
            out,
            "# schema={GAIN_PROFILE_SCHEMA} n_c={} l={} v_m_V={} ratio={} layout={:?}",
            meta.n_c, meta.l, meta.v_m, meta.ratio, meta.layout
        )?;
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["m", "v_dc1_norm", "v_dc2_norm"])?;
        let n1 = meta.l as f64 * meta.v_m;
        let n2 = meta.v_m * meta.ratio;
        for p in &self.entries {
            w.write_record([
                format!("{:.6}", p.m),
                // `+ 0.0` folds -0.0 into 0.0
                format!("{:.12}", p.v_dc1 / n1 + 0.0),
                format!("{:.12}", p.v_dc2 / n2 + 0.0),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Interval of admissible N2/N1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RatioInterval {
    pub min: f64,
    pub max: f64,
}

/// Turns ratio keeping the required output between 0.5 and 0.75 of a module
/// voltage, i.e. pulse duty between 0.25 and 0.5.
pub fn transformer_ratio_bounds(v_dc2_ref: f64, v_m: f64) -> Result<RatioInterval> {
    if !(v_m > 0.0) || !(v_dc2_ref >= 0.0) {
        return Err(Error::Domain {
            name: "voltage",
            value: if v_m > 0.0 { v_dc2_ref } else { v_m },
            domain: "v_dc2_ref ≥ 0, v_M > 0",
        });
    }
    Ok(RatioInterval {
        min: v_dc2_ref / (0.75 * v_m),
        max: v_dc2_ref / (0.5 * v_m),
    })
}

/// Envelope of [`transformer_ratio_bounds`] over a module-voltage spread.
pub fn transformer_ratio_envelope(v_dc2_ref: f64, v_m_min: f64, v_m_max: f64) -> Result<RatioInterval> {
    let lo = transformer_ratio_bounds(v_dc2_ref, v_m_max)?;
    let hi = transformer_ratio_bounds(v_dc2_ref, v_m_min)?;
    Ok(RatioInterval {
        min: lo.min,
        max: hi.max,
    })
}
