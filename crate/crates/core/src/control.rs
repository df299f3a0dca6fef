//! Dual-port controllers.
//!
//! Symmetric strings: a PI loop on the isolated output sets the pulse duty
//! `D`; every modulation index producing that duty is enumerated and the one
//! whose dc output lands closest to the dc-link reference wins.
//!
//! Asymmetric strings: the shared modules follow the inverted gain profile of
//! the isolated port, trimmed by a PI loop; the remaining modules take
//! whatever index keeps the dc-link output on its reference.

use serde::{Deserialize, Serialize};

use crate::analytics::GainProfile;
use crate::error::{check_unit_interval, Error, Result};

/// PI controller with clamping anti-windup.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PiState {
    pub kp: f64,
    pub ki: f64,
    pub integ: f64,
    pub out_min: f64,
    pub out_max: f64,
}

impl PiState {
    pub fn new(kp: f64, ki: f64, out_min: f64, out_max: f64) -> Self {
        Self {
            kp,
            ki,
            integ: 0.0,
            out_min,
            out_max,
        }
    }

    /// Presets the integrator so that a zero error yields `u`.
    pub fn preset(&mut self, u: f64) {
        let u = u.clamp(self.out_min, self.out_max);
        if self.ki != 0.0 {
            self.integ = u / self.ki;
        }
    }

    pub fn step(&mut self, err: f64, dt: f64) -> f64 {
        let p = self.kp * err;
        let mut integ = self.integ + err * dt;
        let mut u = p + self.ki * integ;
        if u > self.out_max || u < self.out_min {
            u = u.clamp(self.out_min, self.out_max);
            if self.ki != 0.0 {
                // hold the integral where it exactly saturates the output
                let limit = (u - p) / self.ki;
                integ = if err * self.ki > 0.0 {
                    integ.min(limit.max(self.integ))
                } else {
                    integ.max(limit.min(self.integ))
                };
            }
        }
        self.integ = integ;
        u
    }
}

pub fn pi_step(err: f64, st: PiState, dt: f64) -> (f64, PiState) {
    let mut next = st;
    let u = next.step(err, dt);
    (u, next)
}

/// Which duty-to-index enumeration the symmetric controller uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CandidateRule {
    /// `m = (i + 0.5 ± D)/N`. Produces pulse duty `0.5 ∓ D`.
    AsPrinted,
    /// `m = (i + D)/N` and `m = (i + 1 − D)/N`. Produces pulse duty `D` and
    /// `1 − D`, which give the same isolated-port gain.
    #[default]
    DutyPreserving,
}

/// The `2·n_c` modulation indices for a requested duty.
pub fn duty_candidates(duty: f64, n_c: usize, rule: CandidateRule) -> Vec<f64> {
    let n = n_c as f64;
    (0..n_c)
        .flat_map(|i| {
            let i = i as f64;
            match rule {
                CandidateRule::AsPrinted => [(i + 0.5 - duty) / n, (i + 0.5 + duty) / n],
                CandidateRule::DutyPreserving => [(i + duty) / n, (i + 1.0 - duty) / n],
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub m_main: f64,
    pub m_shared: Option<f64>,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlDecision {
    /// Index of the modules feeding only the main port (all modules when
    /// the string is symmetric).
    pub m_main: f64,
    /// Index of the modules shared with the isolated port.
    pub m_shared: Option<f64>,
    /// Duty requested by the isolated-port loop (symmetric control only).
    pub d_requested: Option<f64>,
    pub candidates: Vec<Candidate>,
}

const TIE: f64 = 1e-12;

fn pick_best(candidates: &[Candidate], key: impl Fn(&Candidate) -> f64) -> Option<Candidate> {
    candidates.iter().copied().reduce(|best, c| {
        if c.score < best.score - TIE || (c.score <= best.score + TIE && key(&c) < key(&best)) {
            c
        } else {
            best
        }
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SymmetricControlConfig {
    pub d_min: f64,
    pub d_max: f64,
    #[serde(default)]
    pub candidate_rule: CandidateRule,
}

impl Default for SymmetricControlConfig {
    fn default() -> Self {
        Self {
            d_min: 0.2,
            d_max: 0.5,
            candidate_rule: CandidateRule::DutyPreserving,
        }
    }
}

/// Chooses the candidate index closest to the dc-link optimum for `duty`.
pub fn select_symmetric(duty: f64, v_dc1_ref: f64, n_c: usize, v_m: f64, rule: CandidateRule) -> ControlDecision {
    let m_opt = v_dc1_ref / (n_c as f64 * v_m);
    let candidates: Vec<Candidate> = duty_candidates(duty, n_c, rule)
        .into_iter()
        .map(|m| Candidate {
            m_main: m,
            m_shared: None,
            score: (m - m_opt).abs(),
        })
        .collect();
    let best = pick_best(&candidates, |c| c.m_main).expect("2·n_c candidates");
    ControlDecision {
        m_main: best.m_main,
        m_shared: None,
        d_requested: Some(duty),
        candidates,
    }
}

/// One update of the symmetric dual-port controller.
///
/// The PI acts on `v_dc2_meas − v_dc2_ref`: a high isolated output raises
/// the duty, which lowers the gain over the practical range `D ≤ 0.5`. The
/// PI limits must lie inside `[cfg.d_min, cfg.d_max]`.
#[allow(clippy::too_many_arguments)]
pub fn symmetric_controller_step(
    v_dc2_meas: f64,
    v_dc2_ref: f64,
    v_dc1_ref: f64,
    n_c: usize,
    v_m: f64,
    pi: &mut PiState,
    dt: f64,
    cfg: &SymmetricControlConfig,
) -> Result<ControlDecision> {
    let v_full = n_c as f64 * v_m;
    if !(0.0..=v_full).contains(&v_dc1_ref) {
        return Err(Error::Domain {
            name: "v_dc1_ref",
            value: v_dc1_ref,
            domain: "[0, N_C·v_M]",
        });
    }
    let duty = pi.step(v_dc2_meas - v_dc2_ref, dt).clamp(cfg.d_min, cfg.d_max);
    Ok(select_symmetric(duty, v_dc1_ref, n_c, v_m, cfg.candidate_rule))
}

/// How the main-only index is derived from a shared-module index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Coupling {
    /// `m_1 = m_opt·(N + L)/N − m_2·L/N`.
    Literal,
    /// `m_1 = (m_opt·N − m_2·L)/(N − L)`: the dc output of all modules
    /// equals the dc output at a uniform `m_opt`.
    #[default]
    DcConsistent,
}

pub fn main_index(m_opt: f64, m_shared: f64, n_c: usize, l: usize, coupling: Coupling) -> f64 {
    let (n, lf) = (n_c as f64, l as f64);
    match coupling {
        Coupling::Literal => m_opt * (n + lf) / n - m_shared * lf / n,
        Coupling::DcConsistent => {
            if l >= n_c {
                m_shared
            } else {
                (m_opt * n - m_shared * lf) / (n - lf)
            }
        }
    }
}

/// The two open-loop shared-module indices producing `v_dc2_ref`: the
/// solutions of the profile closest to `m = 0.5` from below and above.
pub fn open_loop_pair(profile: &GainProfile, v_dc2_ref: f64) -> Result<(Option<f64>, Option<f64>)> {
    let (min, max) = profile.v_dc2_range();
    if !(v_dc2_ref >= min && v_dc2_ref <= max) {
        return Err(Error::UnreachableSetpoint {
            value: v_dc2_ref,
            min,
            max,
        });
    }
    let roots = profile.invert(v_dc2_ref);
    let below = roots.iter().copied().filter(|&m| m <= 0.5).reduce(f64::max);
    let above = roots.iter().copied().filter(|&m| m >= 0.5).reduce(f64::min);
    if below.is_none() && above.is_none() {
        return Err(Error::UnreachableSetpoint {
            value: v_dc2_ref,
            min,
            max,
        });
    }
    Ok((below, above))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Refs {
    pub v_dc1: f64,
    pub v_dc2: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct AsymmetricControlConfig {
    #[serde(default)]
    pub coupling: Coupling,
}

/// One update of the asymmetric dual-port controller.
///
/// `pi1` trims the dc-link index around its feed-forward `v_dc1_ref/(N·v_M)`;
/// `pi2` shifts both open-loop shared indices, away from 0.5 on the falling
/// branch and towards 1 on the rising one, when the isolated output is low.
#[allow(clippy::too_many_arguments)]
pub fn asymmetric_controller_step(
    v_dc1_meas: f64,
    v_dc2_meas: f64,
    refs: Refs,
    profile: &GainProfile,
    n_c: usize,
    l: usize,
    v_m: f64,
    pi1: &mut PiState,
    pi2: &mut PiState,
    dt: f64,
    cfg: &AsymmetricControlConfig,
) -> Result<ControlDecision> {
    let (open1, open2) = open_loop_pair(profile, refs.v_dc2)?;
    let trim2 = pi2.step(refs.v_dc2 - v_dc2_meas, dt);
    let m_opt = (refs.v_dc1 / (n_c as f64 * v_m) + pi1.step(refs.v_dc1 - v_dc1_meas, dt)).clamp(0.0, 1.0);

    let shared: Vec<f64> = [open1.map(|m| m - trim2), open2.map(|m| m + trim2)]
        .into_iter()
        .flatten()
        .map(|m| m.clamp(0.0, 1.0))
        .collect();

    let candidates: Vec<Candidate> = shared
        .iter()
        .map(|&m2| {
            let m1 = main_index(m_opt, m2, n_c, l, cfg.coupling);
            Candidate {
                m_main: m1,
                m_shared: Some(m2),
                score: (m1 - m2).abs(),
            }
        })
        .collect();
    let feasible: Vec<Candidate> = candidates
        .iter()
        .copied()
        .filter(|c| c.m_main >= -TIE && c.m_main <= 1.0 + TIE)
        .collect();
    let best = pick_best(&feasible, |c| c.m_shared.unwrap_or(0.0)).ok_or(Error::NoFeasibleCandidate)?;
    Ok(ControlDecision {
        m_main: best.m_main.clamp(0.0, 1.0),
        m_shared: best.m_shared,
        d_requested: None,
        candidates,
    })
}

/// Validates that an index vector is a usable modulation command.
pub fn check_indices(m: &[f64]) -> Result<()> {
    m.iter().try_for_each(|&x| check_unit_interval("m", x))
}

/// Controller state owned by one simulation run.
#[derive(Debug, Clone, PartialEq)]
pub enum DualPortController {
    /// Fixed indices; `m_shared` applies to the isolated-port span.
    OpenLoop { m_main: f64, m_shared: Option<f64> },
    Symmetric {
        pi: PiState,
        cfg: SymmetricControlConfig,
        n_c: usize,
        v_m: f64,
    },
    Asymmetric {
        pi1: PiState,
        pi2: PiState,
        cfg: AsymmetricControlConfig,
        profile: GainProfile,
        n_c: usize,
        l: usize,
        v_m: f64,
    },
}

impl DualPortController {
    pub fn update(&mut self, v_dc1_meas: f64, v_dc2_meas: f64, refs: Refs, dt: f64) -> Result<ControlDecision> {
        match self {
            DualPortController::OpenLoop { m_main, m_shared } => {
                check_unit_interval("m_main", *m_main)?;
                if let Some(m) = m_shared {
                    check_unit_interval("m_shared", *m)?;
                }
                Ok(ControlDecision {
                    m_main: *m_main,
                    m_shared: *m_shared,
                    d_requested: None,
                    candidates: Vec::new(),
                })
            }
            DualPortController::Symmetric { pi, cfg, n_c, v_m } => {
                symmetric_controller_step(v_dc2_meas, refs.v_dc2, refs.v_dc1, *n_c, *v_m, pi, dt, cfg)
            }
            DualPortController::Asymmetric {
                pi1,
                pi2,
                cfg,
                profile,
                n_c,
                l,
                v_m,
            } => asymmetric_controller_step(
                v_dc1_meas, v_dc2_meas, refs, profile, *n_c, *l, *v_m, pi1, pi2, dt, cfg,
            ),
        }
    }
}
