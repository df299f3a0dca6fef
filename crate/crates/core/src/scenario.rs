//! TOML scenario files and the `simulate` command.
//!
//! Keys carry their units (`_V`, `_uF`, `_mohm`, ...). Parsing rejects
//! unknown keys, so a misspelt unit is an error rather than a silent default.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::analytics::{characterize_port, gain_profile, unit_grid};
use crate::control::{
    AsymmetricControlConfig, CandidateRule, Coupling, DualPortController, PiState, SymmetricControlConfig,
};
use crate::error::{Error, Result};
use crate::model::{
    BatteryModule, IsolatedParams, Load, NonIsolatedParams, PortBinding, PortParams, StringTopology,
};
use crate::sim::{
    metrics, overshoot_pct, BalanceReport, Metrics, RunOutput, Schedule, SimConfig, Simulation, METRICS_SCHEMA,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StringConfig {
    pub n_modules: usize,
    #[serde(rename = "module_voltage_V")]
    pub module_voltage: f64,
    /// Per-module voltages; overrides `module_voltage_V` when present.
    #[serde(rename = "module_voltages_V", default, skip_serializing_if = "Option::is_none")]
    pub module_voltages: Option<Vec<f64>>,
    #[serde(rename = "r_int_mohm")]
    pub r_int_mohm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MainPortConfig {
    #[serde(rename = "filter_inductance_uH")]
    pub filter_inductance_uh: f64,
    pub filter_resistance_mohm: f64,
    #[serde(rename = "capacitance_uF")]
    pub capacitance_uf: f64,
    pub load: Load,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IsolatedPortConfig {
    pub first_module: usize,
    /// Number of modules the port spans (L).
    pub modules: usize,
    #[serde(rename = "dc_block_capacitance_uF")]
    pub dc_block_capacitance_uf: f64,
    /// N2/N1.
    pub turns_ratio: f64,
    #[serde(rename = "output_capacitance_mF")]
    pub output_capacitance_mf: f64,
    pub diode_resistance_mohm: f64,
    #[serde(rename = "diode_drop_V", default)]
    pub diode_drop_v: f64,
    #[serde(rename = "leakage_inductance_uH", default)]
    pub leakage_inductance_uh: f64,
    #[serde(rename = "magnetizing_inductance_mH", default, skip_serializing_if = "Option::is_none")]
    pub magnetizing_inductance_mh: Option<f64>,
    pub load: Load,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PiConfig {
    pub kp: f64,
    pub ki: f64,
    /// Symmetric output limit.
    pub limit: f64,
}

impl PiConfig {
    fn state(&self) -> PiState {
        PiState::new(self.kp, self.ki, -self.limit, self.limit)
    }
}

fn default_profile_step() -> f64 {
    0.001
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum ControlConfig {
    OpenLoop {
        m_main: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        m_shared: Option<f64>,
    },
    Symmetric {
        /// Duty per volt of isolated-output error.
        #[serde(rename = "kp_per_V")]
        kp: f64,
        #[serde(rename = "ki_per_Vs")]
        ki: f64,
        d_min: f64,
        d_max: f64,
        #[serde(default)]
        candidate_rule: CandidateRule,
    },
    Asymmetric {
        #[serde(default)]
        coupling: Coupling,
        #[serde(default = "default_profile_step")]
        profile_step: f64,
        /// Trim of the dc-link index (per volt).
        pi1: PiConfig,
        /// Trim of the shared-module index (per volt).
        pi2: PiConfig,
    },
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialConfig {
    /// Start capacitors and the magnetizing current at their expected
    /// operating point instead of zero.
    #[serde(default = "default_true")]
    pub precharge: bool,
}

impl Default for InitialConfig {
    fn default() -> Self {
        Self { precharge: true }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Channel {
    VDc1,
    VDc2,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransientConfig {
    pub channel: Channel,
    pub start_s: f64,
    pub end_s: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsConfig {
    /// Steady windows `[start, end]` in seconds.
    #[serde(default)]
    pub windows_s: Vec<[f64; 2]>,
    #[serde(default)]
    pub transients: Vec<TransientConfig>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    pub string: StringConfig,
    pub main_port: MainPortConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub isolated_port: Option<IsolatedPortConfig>,
    pub sim: SimConfig,
    pub control: ControlConfig,
    pub schedule: Schedule,
    #[serde(default)]
    pub initial: InitialConfig,
    #[serde(default)]
    pub metrics: MetricsConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

/// Overrides applied on the command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RunMode {
    Literal,
    Oracle,
    DcConsistent,
}

impl ScenarioConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Applies a command-line mode: `literal` and `dc-consistent` select the
    /// coupling of an asymmetric controller; `oracle` leaves the file as is.
    pub fn with_mode(mut self, mode: Option<RunMode>) -> Self {
        if let ControlConfig::Asymmetric { coupling, .. } = &mut self.control {
            match mode {
                Some(RunMode::Literal) => *coupling = Coupling::Literal,
                Some(RunMode::DcConsistent) => *coupling = Coupling::DcConsistent,
                Some(RunMode::Oracle) | None => {}
            }
        }
        self
    }

    pub fn module_voltages(&self) -> Vec<f64> {
        self.string
            .module_voltages
            .clone()
            .unwrap_or_else(|| vec![self.string.module_voltage; self.string.n_modules])
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.string.n_modules;
        if n == 0 {
            return Err(Error::Config("string.n_modules must be at least 1".into()));
        }
        if let Some(v) = &self.string.module_voltages {
            if v.len() != n {
                return Err(Error::Config(format!(
                    "string.module_voltages_V has {} entries but n_modules = {n}",
                    v.len()
                )));
            }
        }
        self.sim.validate(n).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("sim: {msg}")),
            other => other,
        })?;
        self.schedule
            .validate(self.isolated_port.is_some())
            .map_err(|e| match e {
                Error::Config(msg) => Error::Config(format!("schedule: {msg}")),
                other => other,
            })?;
        if let Some(p) = &self.isolated_port {
            if p.modules == 0 || p.first_module + p.modules > n {
                return Err(Error::Config(format!(
                    "isolated_port: span {}..{} does not fit a {n}-module string",
                    p.first_module,
                    p.first_module + p.modules
                )));
            }
        }
        let needs_isolated = !matches!(self.control, ControlConfig::OpenLoop { m_shared: None, .. });
        if needs_isolated && self.isolated_port.is_none() {
            return Err(Error::Config("control: this mode needs an [isolated_port]".into()));
        }
        for w in &self.metrics.windows_s {
            if !(w[0] < w[1]) || w[1] > self.sim.duration + 1e-12 {
                return Err(Error::Config(format!(
                    "metrics.windows_s: [{}, {}] must be increasing and end inside the run",
                    w[0], w[1]
                )));
            }
        }
        Ok(())
    }

    pub fn topology(&self) -> StringTopology {
        let r_int = self.string.r_int_mohm * 1e-3;
        let modules = self
            .module_voltages()
            .into_iter()
            .map(|v| BatteryModule::new(v, r_int))
            .collect();
        let n = self.string.n_modules;
        let mut ports = vec![PortBinding {
            span: 0..n,
            params: PortParams::NonIsolated(NonIsolatedParams {
                filter_inductance_h: self.main_port.filter_inductance_uh * 1e-6,
                filter_resistance_ohm: self.main_port.filter_resistance_mohm * 1e-3,
                output_capacitance_f: self.main_port.capacitance_uf * 1e-6,
                load: self.main_port.load,
            }),
        }];
        if let Some(p) = &self.isolated_port {
            ports.push(PortBinding {
                span: p.first_module..p.first_module + p.modules,
                params: PortParams::Isolated(IsolatedParams {
                    dc_block_capacitance_f: p.dc_block_capacitance_uf * 1e-6,
                    turns_ratio: p.turns_ratio,
                    output_capacitance_f: p.output_capacitance_mf * 1e-3,
                    diode_drop_v: p.diode_drop_v,
                    diode_resistance_ohm: p.diode_resistance_mohm * 1e-3,
                    leakage_inductance_h: p.leakage_inductance_uh * 1e-6,
                    magnetizing_inductance_h: p.magnetizing_inductance_mh.map(|l| l * 1e-3),
                    load: p.load,
                }),
            });
        }
        StringTopology { modules, ports }
    }

    pub fn controller(&self, topology: &StringTopology) -> Result<DualPortController> {
        let n_c = topology.n_modules();
        let v_m = topology.mean_module_voltage();
        Ok(match &self.control {
            ControlConfig::OpenLoop { m_main, m_shared } => DualPortController::OpenLoop {
                m_main: *m_main,
                m_shared: *m_shared,
            },
            ControlConfig::Symmetric {
                kp,
                ki,
                d_min,
                d_max,
                candidate_rule,
            } => {
                let iso = self.isolated_port.as_ref().expect("validated");
                let mut pi = PiState::new(*kp, *ki, *d_min, *d_max);
                let v2 = self.schedule.refs_at(0.0).v_dc2;
                pi.preset(1.0 - v2 / (iso.turns_ratio * v_m));
                DualPortController::Symmetric {
                    pi,
                    cfg: SymmetricControlConfig {
                        d_min: *d_min,
                        d_max: *d_max,
                        candidate_rule: *candidate_rule,
                    },
                    n_c,
                    v_m,
                }
            }
            ControlConfig::Asymmetric {
                coupling,
                profile_step,
                pi1,
                pi2,
            } => {
                let iso = self.isolated_port.as_ref().expect("validated");
                let profile = gain_profile(iso.modules, n_c, v_m, iso.turns_ratio, &unit_grid(*profile_step)?)?;
                DualPortController::Asymmetric {
                    pi1: pi1.state(),
                    pi2: pi2.state(),
                    cfg: AsymmetricControlConfig { coupling: *coupling },
                    profile,
                    n_c,
                    l: iso.modules,
                    v_m,
                }
            }
        })
    }

    pub fn simulation(&self, controller: &DualPortController) -> Result<Simulation> {
        let topology = self.topology();
        let mut sim = Simulation::new(topology, self.sim)?;
        if self.initial.precharge {
            self.precharge(&mut sim, controller)?;
        }
        Ok(sim)
    }

    /// Places the state at the operating point of the first control decision.
    fn precharge(&self, sim: &mut Simulation, controller: &DualPortController) -> Result<()> {
        let refs = self.schedule.refs_at(0.0);
        let d = controller.clone().update(refs.v_dc1, refs.v_dc2, refs, sim.cfg.control_period(sim.topology.n_modules()))?;
        sim.precharge(d.m_main, d.m_shared, refs.v_dc2);
        if let Some(iso) = &self.isolated_port {
            if iso.magnetizing_inductance_mh.is_some() {
                // the dc-block capacitor carries no dc, so the magnetizing
                // branch returns the rectified load current
                let i3 = match iso.load {
                    Load::Open => 0.0,
                    Load::Resistive { resistance_ohm } | Load::ResistiveInductive { resistance_ohm, .. } => {
                        refs.v_dc2 / resistance_ohm
                    }
                    Load::ConstantPower { power_w } => power_w / refs.v_dc2.max(1.0),
                };
                let m2 = d.m_shared.unwrap_or(d.m_main);
                let v_m = sim.topology.mean_module_voltage();
                let c = characterize_port(m2, iso.modules, sim.topology.n_modules(), v_m, iso.turns_ratio)?;
                let sign = if c.v_p_plus >= -c.v_p_minus { 1.0 } else { -1.0 };
                sim.initial.i_mag = -sign * iso.turns_ratio * i3;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BalanceSummary {
    pub c_dc1_charge_pct: f64,
    pub c_dc2_charge_pct: f64,
    pub c_dc3_charge_pct: f64,
    pub power_balance_pct: f64,
    pub detail: BalanceReport,
}

impl From<BalanceReport> for BalanceSummary {
    fn from(b: BalanceReport) -> Self {
        Self {
            c_dc1_charge_pct: b.c_dc1.ratio_pct(),
            c_dc2_charge_pct: b.c_dc2.ratio_pct(),
            c_dc3_charge_pct: b.c_dc3.ratio_pct(),
            power_balance_pct: b.power_balance_pct(),
            detail: b,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransientReport {
    pub channel: Channel,
    pub start_s: f64,
    pub end_s: f64,
    #[serde(rename = "reference_V")]
    pub reference: f64,
    pub overshoot_pct: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub schema_version: String,
    pub scenario: String,
    pub windows: Vec<Metrics>,
    pub balance: BalanceSummary,
    pub transients: Vec<TransientReport>,
}

#[derive(Debug, Clone)]
pub struct ScenarioRun {
    pub config: ScenarioConfig,
    pub output: RunOutput,
    pub report: MetricsReport,
}

pub fn run_scenario(config: &ScenarioConfig) -> Result<ScenarioRun> {
    let topology = config.topology();
    let mut controller = config.controller(&topology)?;
    let sim = config.simulation(&controller)?;
    let output = sim.run(&mut controller, &config.schedule)?;
    let s = &output.series;
    let windows = config
        .metrics
        .windows_s
        .iter()
        .map(|w| metrics(s, w[0]..w[1]))
        .collect::<Result<Vec<_>>>()?;
    let transients = config
        .metrics
        .transients
        .iter()
        .map(|tr| {
            let (v, r) = match tr.channel {
                Channel::VDc1 => (&s.v_dc1, config.schedule.refs_at(tr.start_s).v_dc1),
                Channel::VDc2 => (&s.v_dc2, config.schedule.refs_at(tr.start_s).v_dc2),
            };
            TransientReport {
                channel: tr.channel,
                start_s: tr.start_s,
                end_s: tr.end_s,
                reference: r,
                overshoot_pct: overshoot_pct(&s.t, v, r, tr.start_s..tr.end_s),
            }
        })
        .collect();
    let report = MetricsReport {
        schema_version: METRICS_SCHEMA.to_string(),
        scenario: config.name.clone(),
        windows,
        balance: output.balance.into(),
        transients,
    };
    Ok(ScenarioRun {
        config: config.clone(),
        output,
        report,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulateArtifacts {
    pub time_series: PathBuf,
    pub metrics: PathBuf,
    pub manifest: PathBuf,
    pub report: MetricsReport,
}

pub const MANIFEST_SCHEMA: &str = "multiport-battery/manifest/1";

/// Runs a scenario file and writes `time_series.csv`, `metrics.json` and
/// `manifest.toml` (the resolved configuration, runnable as is).
pub fn cmd_simulate(config_path: &Path, out_dir: Option<&Path>, mode: Option<RunMode>) -> Result<SimulateArtifacts> {
    let config = ScenarioConfig::load(config_path)?.with_mode(mode);
    let dir = out_dir
        .map(Path::to_path_buf)
        .or_else(|| config.output.dir.clone())
        .unwrap_or_else(|| PathBuf::from("out").join(&config.name));
    let run = run_scenario(&config)?;
    fs::create_dir_all(&dir)?;

    let time_series = dir.join("time_series.csv");
    run.output
        .series
        .write_csv(std::io::BufWriter::new(fs::File::create(&time_series)?))?;

    let metrics_path = dir.join("metrics.json");
    let json = serde_json::to_string_pretty(&run.report).map_err(|e| Error::Config(e.to_string()))?;
    fs::write(&metrics_path, json + "\n")?;

    let manifest = dir.join("manifest.toml");
    let mut resolved = config.clone();
    resolved.output.dir = None;
    fs::write(
        &manifest,
        format!("# schema={MANIFEST_SCHEMA}\n{}", resolved.to_toml()?),
    )?;

    Ok(SimulateArtifacts {
        time_series,
        metrics: metrics_path,
        manifest,
        report: run.report,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
name = "tiny"
[string]
n_modules = 3
module_voltage_V = 96.0
r_int_mohm = 1.0
[main_port]
filter_inductance_uH = 220.0
filter_resistance_mohm = 10.0
capacitance_uF = 50.0
load = { kind = "resistive", resistance_ohm = 50.0 }
[sim]
dt_s = 2.5e-7
duration_s = 0.002
f_sw_eff_hz = 6000.0
sample_interval_s = 1e-5
[control]
mode = "open_loop"
m_main = 0.5
[schedule]
v_dc1_ref_V = [[0.0, 144.0]]
"#;

    #[test]
    fn parses_and_round_trips() {
        let cfg = ScenarioConfig::from_toml_str(MINIMAL).unwrap();
        assert_eq!(cfg.string.n_modules, 3);
        let again = ScenarioConfig::from_toml_str(&cfg.to_toml().unwrap()).unwrap();
        assert_eq!(cfg, again);
    }

    #[test]
    fn unknown_key_is_a_field_error() {
        let text = MINIMAL.replace("capacitance_uF", "capacitance_F");
        let err = ScenarioConfig::from_toml_str(&text).unwrap_err();
        assert!(err.to_string().contains("capacitance"), "{err}");
    }

    #[test]
    fn coarse_step_is_rejected() {
        let text = MINIMAL.replace("dt_s = 2.5e-7", "dt_s = 1e-5");
        let err = ScenarioConfig::from_toml_str(&text).unwrap_err();
        assert!(err.to_string().contains("T_sw,eff/200"), "{err}");
    }

    #[test]
    fn isolated_mode_needs_isolated_port() {
        let text = MINIMAL.replace("m_main = 0.5", "m_main = 0.5\nm_shared = 0.5");
        assert!(ScenarioConfig::from_toml_str(&text).is_err());
    }

    #[test]
    fn runs_are_deterministic() {
        let cfg = ScenarioConfig::from_toml_str(MINIMAL).unwrap();
        let a = run_scenario(&cfg).unwrap().output.series;
        let b = run_scenario(&cfg).unwrap().output.series;
        assert_eq!(a, b);
        assert_eq!(a.len(), 200);
    }
}
