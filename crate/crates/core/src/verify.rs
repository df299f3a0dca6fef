//! Grid verification of the closed-form port analytics against the exact
//! waveform oracle, a report of where the printed conduction formulas
//! disagree with measured waveforms, and the analysis commands of the CLI.

use std::fmt::Write as _;
use std::fs;
use std::ops::Range;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analytics::{
    asymmetric_conduction_literal, asymmetric_ratings, characterize_asymmetric, characterize_symmetric,
    gain_profile, port_layout, symmetric_conduction, symmetric_isolated_gain, unit_grid, ConductionProfile,
    GainProfile, PulseCharacterization,
};
use crate::control::{duty_candidates, main_index, select_symmetric, CandidateRule, Coupling};
use crate::error::{Error, Result};
use crate::modulation::{build_carriers, build_carriers_with, CarrierSet, Layout, SlotOrder};
use crate::oracle::{exact_waveform, oracle_gain_profile, waveform_oracle, OracleMeasurement};

pub const VERIFY_SCHEMA: &str = "multiport-battery/verify/1";
pub const CHARACTERIZE_SCHEMA: &str = "multiport-battery/characterize/1";

/// Relative tolerance of every analytic-vs-oracle comparison.
pub const TOLERANCE: f64 = 1e-9;

/// Witnesses kept per check; the counts are always complete.
const MAX_WITNESSES: usize = 25;

/// Grid the verification suite runs on.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub n_c_min: usize,
    pub n_c_max: usize,
    pub step: f64,
    /// Points closer than this to a branch boundary `k/N_C` or `k/L` are
    /// skipped. Zero keeps every grid point.
    pub boundary_exclusion: f64,
    /// Only ports whose length divides the module count.
    pub symmetric_only: bool,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            n_c_min: 2,
            n_c_max: 12,
            step: 0.001,
            boundary_exclusion: 1e-9,
            symmetric_only: false,
        }
    }
}

impl GridSpec {
    fn validate(&self) -> Result<()> {
        if self.n_c_min == 0 || self.n_c_min > self.n_c_max {
            return Err(Error::Config(format!(
                "module-count range {}..={} is empty",
                self.n_c_min, self.n_c_max
            )));
        }
        if !(self.boundary_exclusion >= 0.0) {
            return Err(Error::Domain {
                name: "boundary_exclusion",
                value: self.boundary_exclusion,
                domain: "[0, ∞)",
            });
        }
        unit_grid(self.step).map(|_| ())
    }

    /// `(n_c, L)` pairs covered by the grid.
    pub fn ports(&self) -> Vec<(usize, usize)> {
        (self.n_c_min..=self.n_c_max)
            .flat_map(|n_c| (1..=n_c).map(move |l| (n_c, l)))
            .filter(|&(n_c, l)| !self.symmetric_only || n_c % l == 0)
            .collect()
    }

    fn keeps(&self, m: f64, n_c: usize, l: usize) -> bool {
        let eps = self.boundary_exclusion;
        if eps == 0.0 {
            return true;
        }
        let near = |k: usize| {
            let x = m * k as f64;
            (x - x.round()).abs() < eps * k as f64
        };
        !(near(n_c) || near(l))
    }
}

/// One failing grid point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Witness {
    pub check: String,
    pub m: f64,
    pub l: usize,
    pub n_c: usize,
    pub quantity: String,
    pub expected: f64,
    pub measured: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub points: usize,
    pub failures: usize,
    pub witnesses: Vec<Witness>,
}

impl CheckResult {
    fn new(name: &str) -> Self {
        Self {
            name: name.to_string(),
            ..Self::default()
        }
    }

    fn merge(mut self, other: CheckResult) -> Self {
        self.points += other.points;
        self.failures += other.failures;
        self.witnesses.extend(other.witnesses);
        self.witnesses.truncate(MAX_WITNESSES);
        self
    }

    fn record(&mut self, ok: bool, w: impl FnOnce() -> Witness) {
        self.points += 1;
        if !ok {
            self.failures += 1;
            if self.witnesses.len() < MAX_WITNESSES {
                let mut w = w();
                w.check = self.name.clone();
                self.witnesses.push(w);
            }
        }
    }

    pub fn passed(&self) -> bool {
        self.failures == 0
    }
}

/// Literal-vs-oracle disagreement of the asymmetric conduction formulas for
/// one `(n_c, L)` pair. Counts are grid points where the quantity differs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DivergenceRow {
    pub n_c: usize,
    pub l: usize,
    pub points: usize,
    pub n_p: usize,
    pub n_n: usize,
    pub delta_p: usize,
    pub delta_t: usize,
    pub delta_n: usize,
    /// Largest `|d_eff,literal − d_eff,oracle|`.
    pub max_d_eff_gap: f64,
    /// Points where the printed leakage bound is not positive.
    pub l_es_bound_nonpositive: usize,
    /// Largest `|Δt − (n_p·D·T_eff + Δ_p or n_n·(1−D)·T_eff + Δ_n)|` of the
    /// oracle column, in units of `T_sw`.
    pub oracle_identity_residual: f64,
}

impl DivergenceRow {
    pub fn diverges(&self) -> bool {
        self.n_p + self.n_n + self.delta_p + self.delta_n + self.delta_t > 0 || self.l_es_bound_nonpositive > 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub schema_version: String,
    pub grid: GridSpec,
    pub checks: Vec<CheckResult>,
    /// Informational; never fails the run.
    pub divergences: Vec<DivergenceRow>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(CheckResult::passed)
    }

    pub fn check(&self, name: &str) -> Option<&CheckResult> {
        self.checks.iter().find(|c| c.name == name)
    }

    /// Divergence rows with at least one disagreement.
    pub fn divergent_rows(&self) -> impl Iterator<Item = &DivergenceRow> {
        self.divergences.iter().filter(|r| r.diverges())
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        let g = &self.grid;
        let _ = writeln!(
            s,
            "grid: n_c {}..={}, step {}, boundary exclusion {:e}{}",
            g.n_c_min,
            g.n_c_max,
            g.step,
            g.boundary_exclusion,
            if g.symmetric_only { ", symmetric ports only" } else { "" }
        );
        for c in &self.checks {
            let verdict = if c.passed() { "PASS" } else { "FAIL" };
            let _ = writeln!(s, "{verdict} {:<28} {:>8} points {:>6} failures", c.name, c.points, c.failures);
            for w in &c.witnesses {
                let _ = writeln!(
                    s,
                    "    m={:.9} L={} n_c={} {}: expected {:.12e}, measured {:.12e}",
                    w.m, w.l, w.n_c, w.quantity, w.expected, w.measured
                );
            }
        }
        let rows: Vec<_> = self.divergent_rows().collect();
        let _ = writeln!(s, "\nliteral conduction formulas vs oracle ({} divergent ports)", rows.len());
        if !rows.is_empty() {
            let _ = writeln!(
                s,
                "{:>4} {:>3} {:>6} {:>6} {:>6} {:>6} {:>6} {:>6} {:>10} {:>8} {:>10}",
                "n_c", "L", "points", "n_p", "n_n", "Δ_p", "Δ_n", "Δt", "max Δd_eff", "L_es≤0", "identity"
            );
            for r in rows {
                let _ = writeln!(
                    s,
                    "{:>4} {:>3} {:>6} {:>6} {:>6} {:>6} {:>6} {:>6} {:>10.4} {:>8} {:>10.1e}",
                    r.n_c,
                    r.l,
                    r.points,
                    r.n_p,
                    r.n_n,
                    r.delta_p,
                    r.delta_n,
                    r.delta_t,
                    r.max_d_eff_gap,
                    r.l_es_bound_nonpositive,
                    r.oracle_identity_residual
                );
            }
        }
        let _ = writeln!(s, "\n{}", if self.passed() { "verify: PASS" } else { "verify: FAIL" });
        s
    }
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= TOLERANCE * a.abs().max(b.abs()).max(1.0)
}

type FieldGetter = fn(&PulseCharacterization) -> f64;

const PULSE_FIELDS: [(&str, FieldGetter); 7] = [
    ("v_dc", |c| c.v_dc),
    ("v_base", |c| c.v_base),
    ("duty", |c| c.duty),
    ("v_max", |c| c.v_max),
    ("v_min", |c| c.v_min),
    ("v_p_plus", |c| c.v_p_plus),
    ("v_p_minus", |c| c.v_p_minus),
];

fn compare_pulse(check: &mut CheckResult, m: f64, l: usize, n_c: usize, a: &PulseCharacterization, o: &PulseCharacterization) {
    let mut first: Option<(&str, f64, f64)> = None;
    for (name, get) in PULSE_FIELDS {
        let (x, y) = (get(a), get(o));
        if !close(x, y) && first.is_none() {
            first = Some((name, x, y));
        }
    }
    check.record(first.is_none(), || {
        let (q, x, y) = first.expect("mismatch");
        Witness {
            check: String::new(),
            m,
            l,
            n_c,
            quantity: q.to_string(),
            expected: x,
            measured: y,
        }
    });
}

fn compare_conduction(
    check: &mut CheckResult,
    m: f64,
    l: usize,
    n_c: usize,
    a: &ConductionProfile,
    o: &ConductionProfile,
) {
    let fields = [
        ("n_p", a.n_p as f64, o.n_p as f64),
        ("n_n", a.n_n as f64, o.n_n as f64),
        ("delta_p", a.delta_p, o.delta_p),
        ("delta_n", a.delta_n, o.delta_n),
        ("delta_t", a.delta_t, o.delta_t),
    ];
    let bad = fields.iter().find(|(_, x, y)| !close(*x, *y));
    check.record(bad.is_none(), || {
        let (q, x, y) = bad.expect("mismatch");
        Witness {
            check: String::new(),
            m,
            l,
            n_c,
            quantity: q.to_string(),
            expected: *x,
            measured: *y,
        }
    });
}

/// Carriers a port of `l` out of `n_c` is measured on: the automatic order
/// keeps divisor ports symmetric; every other port gets consecutive slots.
fn port_carriers(n_c: usize, l: usize) -> Result<CarrierSet> {
    match port_layout(l, n_c) {
        Layout::Symmetric => build_carriers(n_c, &[0..n_c, 0..l], 1.0),
        Layout::Asymmetric => build_carriers_with(n_c, &[0..n_c, 0..l], 1.0, SlotOrder::StringOrder),
    }
}

struct PortOutcome {
    equivalence: CheckResult,
    symmetric_conduction: CheckResult,
    identity: CheckResult,
    divergence: Option<DivergenceRow>,
}

fn verify_port(grid: &GridSpec, m_grid: &[f64], n_c: usize, l: usize) -> Result<PortOutcome> {
    let carriers = port_carriers(n_c, l)?;
    let layout = port_layout(l, n_c);
    let mut equivalence = CheckResult::new("oracle_equivalence");
    let mut sym_cond = CheckResult::new("symmetric_conduction");
    let mut identity = CheckResult::new("oracle_identity");
    let mut div = DivergenceRow {
        n_c,
        l,
        points: 0,
        n_p: 0,
        n_n: 0,
        delta_p: 0,
        delta_t: 0,
        delta_n: 0,
        max_d_eff_gap: 0.0,
        l_es_bound_nonpositive: 0,
        oracle_identity_residual: 0.0,
    };

    for &m in m_grid.iter().filter(|&&m| grid.keeps(m, n_c, l)) {
        let o: OracleMeasurement = waveform_oracle(m, &carriers, 0..l, 1.0, 1.0)?;
        let residual = (o.conduction.delta_t - o.conduction_identity()).abs();
        identity.record(residual <= TOLERANCE, || Witness {
            check: String::new(),
            m,
            l,
            n_c,
            quantity: "delta_t".into(),
            expected: o.conduction_identity(),
            measured: o.conduction.delta_t,
        });

        match layout {
            Layout::Symmetric => {
                let a = characterize_symmetric(m, l, 1.0, 1.0)?;
                compare_pulse(&mut equivalence, m, l, n_c, &a, &o.pulse);
                let c = symmetric_conduction(m, l, 1.0)?;
                compare_conduction(&mut sym_cond, m, l, n_c, &c, &o.conduction);
            }
            Layout::Asymmetric => {
                let a = characterize_asymmetric(m, l, n_c, 1.0, 1.0)?;
                compare_pulse(&mut equivalence, m, l, n_c, &a, &o.pulse);

                let lit = asymmetric_conduction_literal(m, l, n_c, 1.0)?;
                let oc = &o.conduction;
                div.points += 1;
                div.n_p += usize::from(lit.n_p != oc.n_p);
                div.n_n += usize::from(lit.n_n != oc.n_n);
                div.delta_p += usize::from(!close(lit.delta_p, oc.delta_p));
                div.delta_n += usize::from(!close(lit.delta_n, oc.delta_n));
                div.delta_t += usize::from(!close(lit.delta_t, oc.delta_t));
                div.max_d_eff_gap = div.max_d_eff_gap.max((lit.d_eff - oc.d_eff).abs());
                div.oracle_identity_residual = div.oracle_identity_residual.max(residual);
                if oc.d_eff > 0.0 && a.v_dc2 > 0.0 {
                    let r = asymmetric_ratings(&a, oc, 1.0, n_c as f64)?;
                    div.l_es_bound_nonpositive += usize::from(r.l_es_bound_literal <= 0.0);
                }
            }
        }
    }
    Ok(PortOutcome {
        equivalence,
        symmetric_conduction: sym_cond,
        identity,
        divergence: (layout == Layout::Asymmetric).then_some(div),
    })
}

/// `v_dc2(D) ∈ [0.5, 1]·v_M·ratio` and `v_dc2(D) = v_dc2(1 − D)` bit for bit.
pub fn check_gain_law(m_grid: &[f64]) -> Result<CheckResult> {
    let mut check = CheckResult::new("symmetric_gain_law");
    for &d in m_grid.iter().filter(|&&d| d > 0.0 && d < 1.0) {
        let g = symmetric_isolated_gain(d)?;
        let g_mirror = symmetric_isolated_gain(1.0 - d)?;
        check.record((0.5..=1.0).contains(&g), || Witness {
            check: String::new(),
            m: d,
            l: 0,
            n_c: 0,
            quantity: "gain".into(),
            expected: 0.75,
            measured: g,
        });
        check.record(g == g_mirror, || Witness {
            check: String::new(),
            m: d,
            l: 0,
            n_c: 0,
            quantity: "gain(1-D)".into(),
            expected: g,
            measured: g_mirror,
        });
    }
    Ok(check)
}

/// Duties of the candidate suite: 0.2, 0.25, …, 0.5.
pub fn candidate_duties() -> Vec<f64> {
    (0..=6).map(|k| 0.2 + 0.05 * k as f64).collect()
}

/// Every duty-preserving candidate, applied to a symmetric string, produces a
/// measured pulse duty of `D` or `1 − D`; the selected candidate keeps the dc
/// output within half a module voltage of any reference in range.
pub fn check_candidates(n_c: usize) -> Result<CheckResult> {
    let mut check = CheckResult::new("duty_candidates");
    let carriers = build_carriers(n_c, &[0..n_c], 1.0)?;
    let v_m = 1.0;
    for d in candidate_duties() {
        let cands = duty_candidates(d, n_c, CandidateRule::DutyPreserving);
        check.record(cands.len() == 2 * n_c, || Witness {
            check: String::new(),
            m: d,
            l: n_c,
            n_c,
            quantity: "candidate count".into(),
            expected: (2 * n_c) as f64,
            measured: cands.len() as f64,
        });
        for &m in &cands {
            let o = waveform_oracle(m, &carriers, 0..n_c, v_m, 1.0)?;
            let measured = o.pulse.duty;
            let ok = (measured - d).abs() <= TOLERANCE || (measured - (1.0 - d)).abs() <= TOLERANCE;
            check.record(ok, || Witness {
                check: String::new(),
                m,
                l: n_c,
                n_c,
                quantity: "measured duty".into(),
                expected: d,
                measured,
            });
        }
        for k in 0..=200 {
            let v_ref = n_c as f64 * v_m * k as f64 / 200.0;
            let sel = select_symmetric(d, v_ref, n_c, v_m, CandidateRule::DutyPreserving);
            let dev = (sel.m_main * n_c as f64 * v_m - v_ref).abs();
            check.record(dev <= 0.5 * v_m + TOLERANCE, || Witness {
                check: String::new(),
                m: sel.m_main,
                l: n_c,
                n_c,
                quantity: "|v_dc1 - ref| / v_M".into(),
                expected: 0.5,
                measured: dev / v_m,
            });
        }
    }
    Ok(check)
}

/// With dc-consistent coupling, the exact full-string dc equals
/// `N_C·m_opt·v_M` whenever the main index is feasible.
pub fn check_coupling(grid: &GridSpec) -> Result<CheckResult> {
    let ports: Vec<(usize, usize)> = grid.ports().into_iter().filter(|&(n_c, l)| l < n_c).collect();
    let coarse = unit_grid(0.05)?;
    let results = ports
        .par_iter()
        .map(|&(n_c, l)| -> Result<CheckResult> {
            let mut check = CheckResult::new("dc_consistent_coupling");
            let carriers = port_carriers(n_c, l)?;
            for &m_opt in &coarse {
                for &m2 in &coarse {
                    let m1 = main_index(m_opt, m2, n_c, l, Coupling::DcConsistent);
                    if !(0.0..=1.0).contains(&m1) {
                        continue;
                    }
                    let m: Vec<f64> = (0..n_c).map(|i| if i < l { m2 } else { m1 }).collect();
                    let level = exact_waveform(&m, &carriers, 0..n_c)?.mean_level();
                    let expected = n_c as f64 * m_opt;
                    check.record(close(level, expected), || Witness {
                        check: String::new(),
                        m: m2,
                        l,
                        n_c,
                        quantity: "full-string dc / v_M".into(),
                        expected,
                        measured: level,
                    });
                }
            }
            Ok(check)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(results
        .into_iter()
        .fold(CheckResult::new("dc_consistent_coupling"), CheckResult::merge))
}

/// Runs every check on `grid`. Grid points are processed in parallel.
pub fn verify(grid: &GridSpec) -> Result<VerifyReport> {
    grid.validate()?;
    let m_grid = unit_grid(grid.step)?;
    let outcomes = grid
        .ports()
        .par_iter()
        .map(|&(n_c, l)| verify_port(grid, &m_grid, n_c, l))
        .collect::<Result<Vec<_>>>()?;

    let mut equivalence = CheckResult::new("oracle_equivalence");
    let mut sym_cond = CheckResult::new("symmetric_conduction");
    let mut identity = CheckResult::new("oracle_identity");
    let mut divergences = Vec::new();
    for o in outcomes {
        equivalence = equivalence.merge(o.equivalence);
        sym_cond = sym_cond.merge(o.symmetric_conduction);
        identity = identity.merge(o.identity);
        divergences.extend(o.divergence);
    }

    let mut checks = vec![equivalence, sym_cond, identity, check_gain_law(&m_grid)?];
    if (grid.n_c_min..=grid.n_c_max).contains(&9) {
        checks.push(check_candidates(9)?);
    }
    if !grid.symmetric_only {
        checks.push(check_coupling(grid)?);
    }
    Ok(VerifyReport {
        schema_version: VERIFY_SCHEMA.to_string(),
        grid: *grid,
        checks,
        divergences,
    })
}

/// One quantity in both modes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CharacterizeRow {
    pub quantity: String,
    pub literal: f64,
    pub oracle: f64,
    pub diff: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CharacterizeReport {
    pub schema_version: String,
    pub m: f64,
    pub n_c: usize,
    pub l: usize,
    pub v_m: f64,
    pub ratio: f64,
    pub layout: Layout,
    /// Per-module switching frequency the times refer to.
    pub f_sw_hz: f64,
    pub rows: Vec<CharacterizeRow>,
}

impl CharacterizeReport {
    pub fn row(&self, quantity: &str) -> Option<&CharacterizeRow> {
        self.rows.iter().find(|r| r.quantity == quantity)
    }

    pub fn render(&self) -> String {
        let mut s = format!(
            "m={} n_c={} L={} v_M={} V ratio={} layout={:?} f_sw={} Hz\n{:<12} {:>16} {:>16} {:>12}\n",
            self.m, self.n_c, self.l, self.v_m, self.ratio, self.layout, self.f_sw_hz, "quantity", "literal", "oracle", "diff"
        );
        for r in &self.rows {
            let _ = writeln!(s, "{:<12} {:>16.9} {:>16.9} {:>12.3e}", r.quantity, r.literal, r.oracle, r.diff);
        }
        s
    }
}

/// Closed-form and oracle characterization of one port side by side.
pub fn characterize(m: f64, n_c: usize, l: usize, v_m: f64, ratio: f64, f_sw: f64) -> Result<CharacterizeReport> {
    if l == 0 || l > n_c {
        return Err(Error::Domain {
            name: "L",
            value: l as f64,
            domain: "1 ≤ L ≤ N_C",
        });
    }
    if !(f_sw > 0.0) {
        return Err(Error::Domain {
            name: "f_sw",
            value: f_sw,
            domain: "(0, ∞)",
        });
    }
    let layout = port_layout(l, n_c);
    let carriers = match layout {
        Layout::Symmetric => build_carriers(n_c, &[0..n_c, 0..l], f_sw)?,
        Layout::Asymmetric => build_carriers_with(n_c, &[0..n_c, 0..l], f_sw, SlotOrder::StringOrder)?,
    };
    let t_sw = 1.0 / f_sw;
    let (pulse, cond) = match layout {
        Layout::Symmetric => (
            characterize_symmetric(m, l, v_m, ratio)?,
            symmetric_conduction(m, l, t_sw)?,
        ),
        Layout::Asymmetric => (
            characterize_asymmetric(m, l, n_c, v_m, ratio)?,
            asymmetric_conduction_literal(m, l, n_c, t_sw)?,
        ),
    };
    let o = waveform_oracle(m, &carriers, span(l), v_m, ratio)?;
    let pairs = [
        ("v_dc", pulse.v_dc, o.pulse.v_dc),
        ("v_base", pulse.v_base, o.pulse.v_base),
        ("duty", pulse.duty, o.pulse.duty),
        ("v_max", pulse.v_max, o.pulse.v_max),
        ("v_min", pulse.v_min, o.pulse.v_min),
        ("v_p_plus", pulse.v_p_plus, o.pulse.v_p_plus),
        ("v_p_minus", pulse.v_p_minus, o.pulse.v_p_minus),
        ("v_dc2", pulse.v_dc2, o.pulse.v_dc2),
        ("n_p", cond.n_p as f64, o.conduction.n_p as f64),
        ("n_n", cond.n_n as f64, o.conduction.n_n as f64),
        ("delta_p", cond.delta_p, o.conduction.delta_p),
        ("delta_n", cond.delta_n, o.conduction.delta_n),
        ("delta_t", cond.delta_t, o.conduction.delta_t),
        ("d_eff", cond.d_eff, o.conduction.d_eff),
    ];
    Ok(CharacterizeReport {
        schema_version: CHARACTERIZE_SCHEMA.to_string(),
        m,
        n_c,
        l,
        v_m,
        ratio,
        layout,
        f_sw_hz: f_sw,
        rows: pairs
            .into_iter()
            .map(|(q, a, b)| CharacterizeRow {
                quantity: q.to_string(),
                literal: a + 0.0,
                oracle: b + 0.0,
                diff: a - b,
            })
            .collect(),
    })
}

fn span(l: usize) -> Range<usize> {
    0..l
}

/// Where a gain profile comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProfileSource {
    #[default]
    Analytic,
    Oracle,
}

/// Tabulates the gain profile of an `l`-module port of an `n_c`-module
/// string and writes it as CSV to `out` (`-` for stdout).
pub fn cmd_gain_profile(
    n_c: usize,
    l: usize,
    v_m: f64,
    ratio: f64,
    step: f64,
    source: ProfileSource,
    out: &Path,
) -> Result<GainProfile> {
    if l == 0 || l > n_c {
        return Err(Error::Domain {
            name: "L",
            value: l as f64,
            domain: "1 ≤ L ≤ N_C",
        });
    }
    let grid = unit_grid(step)?;
    let profile = match source {
        ProfileSource::Analytic => gain_profile(l, n_c, v_m, ratio, &grid)?,
        ProfileSource::Oracle => oracle_gain_profile(l, n_c, v_m, ratio, &grid)?,
    };
    if out == Path::new("-") {
        profile.write_csv(std::io::stdout().lock())?;
    } else {
        if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir)?;
        }
        profile.write_csv(std::io::BufWriter::new(fs::File::create(out)?))?;
    }
    Ok(profile)
}

pub fn cmd_characterize(m: f64, n_c: usize, l: usize, v_m: f64, ratio: f64, f_sw: f64) -> Result<CharacterizeReport> {
    characterize(m, n_c, l, v_m, ratio, f_sw)
}

/// Runs [`verify`] and, with `out_dir`, writes `verify.json` there.
pub fn cmd_verify(grid: &GridSpec, out_dir: Option<&Path>) -> Result<VerifyReport> {
    let report = verify(grid)?;
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir)?;
        let json = serde_json::to_string_pretty(&report).map_err(|e| Error::Config(e.to_string()))?;
        fs::write(dir.join("verify.json"), json + "\n")?;
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(symmetric_only: bool) -> GridSpec {
        GridSpec {
            n_c_min: 2,
            n_c_max: 9,
            step: 0.01,
            boundary_exclusion: 1e-9,
            symmetric_only,
        }
    }

    #[test]
    fn coarse_grid_passes() {
        let r = verify(&small(false)).unwrap();
        assert!(r.passed(), "{}", r.render());
        assert!(r.divergent_rows().count() > 0);
    }

    #[test]
    fn symmetric_only_grid_has_no_divergences() {
        let r = verify(&small(true)).unwrap();
        assert!(r.passed(), "{}", r.render());
        assert!(r.divergences.is_empty());
        assert!(r.ports_are_symmetric());
    }

    #[test]
    fn boundary_exclusion_skips_breakpoints() {
        let g = GridSpec::default();
        assert!(!g.keeps(0.5, 9, 2));
        assert!(!g.keeps(2.0 / 9.0 + 1e-12, 9, 2));
        assert!(g.keeps(0.123, 9, 2));
        let none = GridSpec {
            boundary_exclusion: 0.0,
            ..g
        };
        assert!(none.keeps(0.5, 9, 2));
    }

    #[test]
    fn characterize_reference_points() {
        let r = characterize(0.35, 9, 9, 96.0, 1.0, 2000.0).unwrap();
        assert!((r.row("duty").unwrap().literal - 0.15).abs() < 1e-12);
        assert!(r.rows.iter().all(|x| x.diff.abs() < 1e-9), "{}", r.render());

        let r = characterize(0.5, 9, 2, 96.0, 1.0, 2000.0).unwrap();
        let p = r.row("v_p_plus").unwrap().oracle;
        let n = r.row("v_p_minus").unwrap().oracle;
        assert!((p + n).abs() < 1e-9);

        let r = characterize(0.0, 9, 4, 96.0, 1.0, 2000.0).unwrap();
        assert!(r.rows.iter().filter(|x| x.quantity.starts_with('v')).all(|x| x.oracle == 0.0));
    }

    #[test]
    fn characterize_rejects_bad_port() {
        assert!(characterize(0.3, 4, 5, 96.0, 1.0, 2000.0).is_err());
        assert!(characterize(1.3, 9, 2, 96.0, 1.0, 2000.0).is_err());
    }

    impl VerifyReport {
        fn ports_are_symmetric(&self) -> bool {
            self.grid.ports().iter().all(|&(n, l)| n % l == 0)
        }
    }
}
