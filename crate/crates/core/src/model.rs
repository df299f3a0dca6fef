//! Battery string, module connection states and port bindings.
//!
//! A string is an ordered chain of battery modules, each behind a half-bridge
//! that either inserts the battery into the chain (series) or shorts past it
//! (bypass). Parallel mode is carried as a tag only: for every voltage and
//! current computed here it behaves exactly like bypass.
//!
//! Ports attach to a contiguous run of modules. The main port spans the whole
//! string; auxiliary ports may span any non-empty sub-range starting anywhere.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ModuleMode {
    Series,
    #[default]
    Bypass,
    Parallel,
}

impl ModuleMode {
    /// Entry of the connection vector for this mode.
    pub fn connection(self) -> u8 {
        match self {
            ModuleMode::Series => 1,
            ModuleMode::Bypass | ModuleMode::Parallel => 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BatteryModule {
    /// Open-circuit battery voltage (V).
    pub v_nom: f64,
    /// Internal resistance (Ω).
    pub r_int: f64,
    #[serde(default)]
    pub mode: ModuleMode,
}

impl BatteryModule {
    pub fn new(v_nom: f64, r_int: f64) -> Self {
        Self {
            v_nom,
            r_int,
            mode: ModuleMode::Bypass,
        }
    }
}

/// Per-instant switch state of every module: 1 = series, 0 = bypass/parallel.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ConnectionVector(Vec<u8>);

impl ConnectionVector {
    pub fn new(entries: Vec<u8>) -> Result<Self> {
        if let Some(&bad) = entries.iter().find(|&&s| s > 1) {
            return Err(Error::Domain {
                name: "connection entry",
                value: f64::from(bad),
                domain: "{0, 1}",
            });
        }
        Ok(Self(entries))
    }

    pub fn all(n: usize, series: bool) -> Self {
        Self(vec![u8::from(series); n])
    }

    pub fn from_modes(modules: &[BatteryModule]) -> Self {
        Self(modules.iter().map(|m| m.mode.connection()).collect())
    }

    pub(crate) fn from_bools(bits: impl IntoIterator<Item = bool>) -> Self {
        Self(bits.into_iter().map(u8::from).collect())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[u8] {
        &self.0
    }

    pub fn is_series(&self, i: usize) -> bool {
        self.0[i] == 1
    }

    /// Number of series-connected modules inside `span`.
    pub fn series_count(&self, span: Range<usize>) -> usize {
        self.0[span].iter().filter(|&&s| s == 1).count()
    }
}

/// Sum of the series-connected battery voltages.
pub fn string_voltage(s: &ConnectionVector, v: &[f64]) -> Result<f64> {
    if s.len() != v.len() {
        return Err(Error::Dimension {
            expected: s.len(),
            got: v.len(),
        });
    }
    Ok(s.0.iter().zip(v).map(|(&si, &vi)| f64::from(si) * vi).sum())
}

/// String voltage with each series module's internal-resistance drop at `i_load`.
///
/// Bypassed modules are out of the current path and contribute nothing.
pub fn terminal_voltage_under_load(
    modules: &[BatteryModule],
    s: &ConnectionVector,
    i_load: f64,
) -> f64 {
    modules
        .iter()
        .zip(s.as_slice())
        .filter(|(_, &si)| si == 1)
        .map(|(m, _)| m.v_nom - i_load * m.r_int)
        .sum::<f64>()
        + 0.0
}

/// Electrical loads supported at the port outputs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Load {
    Open,
    Resistive {
        resistance_ohm: f64,
    },
    /// Series R-L, the usual equivalent of an inverter/motor dc link.
    ResistiveInductive {
        resistance_ohm: f64,
        inductance_h: f64,
    },
    ConstantPower {
        power_w: f64,
    },
}

impl Load {
    fn check(&self, port: usize, out: &mut Vec<Violation>) {
        let bad = |name: &'static str, value: f64| Violation::InvalidParameter { port, name, value };
        match *self {
            Load::Open => {}
            Load::Resistive { resistance_ohm } => {
                if !(resistance_ohm > 0.0) {
                    out.push(bad("load resistance", resistance_ohm));
                }
            }
            Load::ResistiveInductive {
                resistance_ohm,
                inductance_h,
            } => {
                if !(resistance_ohm > 0.0) {
                    out.push(bad("load resistance", resistance_ohm));
                }
                if !(inductance_h >= 0.0) {
                    out.push(bad("load inductance", inductance_h));
                }
            }
            Load::ConstantPower { power_w } => {
                if !(power_w >= 0.0) {
                    out.push(bad("load power", power_w));
                }
            }
        }
    }
}

/// LC-filtered port: string → R_ldc → L_1 → C_dc1 ∥ load.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NonIsolatedParams {
    pub filter_inductance_h: f64,
    pub filter_resistance_ohm: f64,
    pub output_capacitance_f: f64,
    pub load: Load,
}

/// Dc-block capacitor, transformer, full diode bridge and output capacitor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IsolatedParams {
    /// C_dc2, in series with the primary winding.
    pub dc_block_capacitance_f: f64,
    /// N2/N1.
    pub turns_ratio: f64,
    /// C_dc3, across the bridge output.
    pub output_capacitance_f: f64,
    #[serde(default)]
    pub diode_drop_v: f64,
    pub diode_resistance_ohm: f64,
    /// Lumped series leakage referred to the secondary (L_es).
    #[serde(default)]
    pub leakage_inductance_h: f64,
    /// Magnetizing inductance referred to the primary; `None` is an ideal core.
    #[serde(default)]
    pub magnetizing_inductance_h: Option<f64>,
    pub load: Load,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PortParams {
    NonIsolated(NonIsolatedParams),
    Isolated(IsolatedParams),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PortKind {
    NonIsolated,
    Isolated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PortBinding {
    pub span: Range<usize>,
    pub params: PortParams,
}

impl PortBinding {
    pub fn kind(&self) -> PortKind {
        match self.params {
            PortParams::NonIsolated(_) => PortKind::NonIsolated,
            PortParams::Isolated(_) => PortKind::Isolated,
        }
    }

    /// Number of modules between the port terminals (L).
    pub fn len(&self) -> usize {
        self.span.len()
    }

    pub fn is_empty(&self) -> bool {
        self.span.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StringTopology {
    pub modules: Vec<BatteryModule>,
    pub ports: Vec<PortBinding>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    NoModules,
    InvalidModule {
        index: usize,
        reason: &'static str,
    },
    EmptySpan {
        port: usize,
    },
    SpanOutOfBounds {
        port: usize,
        span: Range<usize>,
        modules: usize,
    },
    NoMainPort,
    DuplicateSpan {
        first: usize,
        second: usize,
    },
    InvalidParameter {
        port: usize,
        name: &'static str,
        value: f64,
    },
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Violation::NoModules => write!(f, "string has no modules"),
            Violation::InvalidModule { index, reason } => write!(f, "module {index}: {reason}"),
            Violation::EmptySpan { port } => write!(f, "port {port}: empty span"),
            Violation::SpanOutOfBounds {
                port,
                span,
                modules,
            } => write!(
                f,
                "port {port}: span {}..{} exceeds the {modules}-module string",
                span.start, span.end
            ),
            Violation::NoMainPort => write!(f, "no port spans the whole string"),
            Violation::DuplicateSpan { first, second } => {
                write!(f, "ports {first} and {second} are the same kind on the same terminals")
            }
            Violation::InvalidParameter { port, name, value } => {
                write!(f, "port {port}: {name} = {value} is not allowed")
            }
        }
    }
}

impl StringTopology {
    pub fn n_modules(&self) -> usize {
        self.modules.len()
    }

    /// Mean module voltage, the value the closed-form analytics work with.
    pub fn mean_module_voltage(&self) -> f64 {
        if self.modules.is_empty() {
            return 0.0;
        }
        self.modules.iter().map(|m| m.v_nom).sum::<f64>() / self.modules.len() as f64
    }

    /// Index of the first port spanning every module.
    pub fn main_port(&self) -> Option<usize> {
        let n = self.modules.len();
        self.ports
            .iter()
            .position(|p| p.span.start == 0 && p.span.end == n)
    }

    /// Index of the first isolated port.
    pub fn isolated_port(&self) -> Option<usize> {
        self.ports
            .iter()
            .position(|p| p.kind() == PortKind::Isolated)
    }
}

pub fn validate_topology(t: &StringTopology) -> Vec<Violation> {
    let mut out = Vec::new();
    let n = t.modules.len();
    if n == 0 {
        out.push(Violation::NoModules);
    }
    for (index, m) in t.modules.iter().enumerate() {
        if !(m.v_nom > 0.0) {
            out.push(Violation::InvalidModule {
                index,
                reason: "nominal voltage must be positive",
            });
        }
        if !(m.r_int >= 0.0) {
            out.push(Violation::InvalidModule {
                index,
                reason: "internal resistance must be non-negative",
            });
        }
    }
    for (port, p) in t.ports.iter().enumerate() {
        if p.span.is_empty() {
            out.push(Violation::EmptySpan { port });
        } else if p.span.end > n {
            out.push(Violation::SpanOutOfBounds {
                port,
                span: p.span.clone(),
                modules: n,
            });
        }
        let bad = |name: &'static str, value: f64| Violation::InvalidParameter { port, name, value };
        match &p.params {
            PortParams::NonIsolated(np) => {
                for (name, value) in [
                    ("filter inductance", np.filter_inductance_h),
                    ("filter resistance", np.filter_resistance_ohm),
                    ("output capacitance", np.output_capacitance_f),
                ] {
                    if !(value >= 0.0) {
                        out.push(bad(name, value));
                    }
                }
                np.load.check(port, &mut out);
            }
            PortParams::Isolated(ip) => {
                for (name, value) in [
                    ("dc-block capacitance", ip.dc_block_capacitance_f),
                    ("output capacitance", ip.output_capacitance_f),
                    ("diode drop", ip.diode_drop_v),
                    ("diode resistance", ip.diode_resistance_ohm),
                    ("leakage inductance", ip.leakage_inductance_h),
                ] {
                    if !(value >= 0.0) {
                        out.push(bad(name, value));
                    }
                }
                if !(ip.turns_ratio > 0.0) {
                    out.push(bad("turns ratio", ip.turns_ratio));
                }
                if let Some(lm) = ip.magnetizing_inductance_h {
                    if !(lm > 0.0) {
                        out.push(bad("magnetizing inductance", lm));
                    }
                }
                ip.load.check(port, &mut out);
            }
        }
    }
    for a in 0..t.ports.len() {
        for b in a + 1..t.ports.len() {
            if t.ports[a].span == t.ports[b].span
                && t.ports[a].kind() == t.ports[b].kind()
                && !t.ports[a].span.is_empty()
            {
                out.push(Violation::DuplicateSpan {
                    first: a,
                    second: b,
                });
            }
        }
    }
    if n > 0 && t.main_port().is_none() {
        out.push(Violation::NoMainPort);
    }
    out
}
