//! Run configuration: a versioned TOML document with one table per concern.
//! Every key has a default; unknown keys are rejected.

use std::path::{Path, PathBuf};

use gpmpc_core::chance::DistancePolicy;
use gpmpc_core::data::{DataSpec, TrainSpec};
use gpmpc_core::hv::{ArxCoefficients, AvTraceSpec, DiscrepancyMode, TruthHvSpec};
use gpmpc_core::mpc::{MpcConfig, Variant};
use gpmpc_core::qp::QpSettings;
use gpmpc_core::sim::Scenario;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

pub const CONFIG_VERSION: u32 = 1;
pub const OUTPUT_ROOT_ENV: &str = "GPMPC_OUTPUT_ROOT";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub version: u32,
    pub output: OutputConfig,
    pub scenario: ScenarioConfig,
    pub mpc: MpcSection,
    pub arx: ArxSection,
    pub gp: GpSection,
    pub data: DataSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            version: CONFIG_VERSION,
            output: OutputConfig::default(),
            scenario: ScenarioConfig::default(),
            mpc: MpcSection::default(),
            arx: ArxSection::default(),
            gp: GpSection::default(),
            data: DataSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub dir: PathBuf,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { dir: PathBuf::from("gpmpc-out") }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PlantModel {
    /// ARX plus the trained GP mean.
    Gp,
    /// ARX recursion only.
    Arx,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    /// `constant` or `braking`; used by `simulate`.
    pub name: String,
    pub duration_s: f64,
    pub cruise_mps: f64,
    pub braking_mps: f64,
    pub braking_time_s: f64,
    pub initial_gap_m: f64,
    pub n_av: usize,
    pub seed: u64,
    pub plant: PlantModel,
    pub sample_truth: bool,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            name: "constant".into(),
            duration_s: 30.0,
            cruise_mps: 20.0,
            braking_mps: 10.0,
            braking_time_s: 15.0,
            initial_gap_m: 20.0,
            n_av: 2,
            seed: 0,
            plant: PlantModel::Gp,
            sample_truth: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MpcSection {
    pub horizon: usize,
    pub q1: f64,
    pub q2: f64,
    pub r: f64,
    pub v_min: f64,
    pub v_max: f64,
    pub a_min: f64,
    pub a_max: f64,
    pub delta_m: f64,
    pub p_def: f64,
    pub max_outer_iterations: usize,
    pub outer_tolerance: f64,
    pub slack_penalty: f64,
    pub qp_eps: f64,
    pub qp_max_iter: usize,
}

impl Default for MpcSection {
    fn default() -> Self {
        let m = MpcConfig::default();
        Self {
            horizon: m.horizon,
            q1: m.q1,
            q2: m.q2,
            r: m.r,
            v_min: m.v_min,
            v_max: m.v_max,
            a_min: m.a_min,
            a_max: m.a_max,
            delta_m: m.policy.delta(),
            p_def: m.policy.p_def(),
            max_outer_iterations: m.max_outer_iterations,
            outer_tolerance: m.outer_tolerance,
            slack_penalty: m.slack_penalty,
            qp_eps: m.qp.eps_abs,
            qp_max_iter: m.qp.max_iter,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ArxSection {
    pub c: [f64; 4],
    pub b: [f64; 4],
    pub dt: f64,
}

impl Default for ArxSection {
    fn default() -> Self {
        let a = ArxCoefficients::identified();
        Self { c: a.c, b: a.b, dt: a.sample_time }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GpSection {
    pub mode: DiscrepancyMode,
    pub subsample: usize,
    pub max_points: usize,
    pub restarts: usize,
    pub seed: u64,
}

impl Default for GpSection {
    fn default() -> Self {
        let t = TrainSpec::default();
        Self {
            mode: t.mode,
            subsample: t.subsample,
            max_points: t.max_points,
            restarts: t.restarts,
            seed: t.seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    pub n_train: usize,
    pub n_test: usize,
    pub seed: u64,
    pub steps: usize,
    pub levels_mps: Vec<f64>,
    pub hold_min_s: f64,
    pub hold_max_s: f64,
    pub standstill_min_s: f64,
    pub standstill_max_s: f64,
    pub ramp_mps2: f64,
    pub max_increment_mps: f64,
    pub lag_gain: f64,
    pub lag_limit_mps: f64,
    pub noise_std_mps: f64,
}

impl Default for DataSection {
    fn default() -> Self {
        let d = DataSpec::default();
        Self {
            n_train: d.n_train,
            n_test: d.n_test,
            seed: d.seed,
            steps: d.av.steps,
            levels_mps: d.av.levels.clone(),
            hold_min_s: d.av.hold_s.0,
            hold_max_s: d.av.hold_s.1,
            standstill_min_s: d.av.standstill_s.0,
            standstill_max_s: d.av.standstill_s.1,
            ramp_mps2: d.av.accel,
            max_increment_mps: d.truth.max_increment,
            lag_gain: d.truth.lag_gain,
            lag_limit_mps: d.truth.lag_limit,
            noise_std_mps: d.truth.noise_std,
        }
    }
}

impl RunConfig {
    /// Reads `path` (defaults when absent), applies `section.key=value`
    /// overrides and the output-root environment variable, then validates.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self, CliError> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p)
                .map_err(|e| CliError::Config(format!("cannot read {}: {e}", p.display())))?,
            None => String::new(),
        };
        let mut table: toml::Table = toml::from_str(&text).map_err(|e| CliError::Config(e.to_string()))?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let mut cfg: RunConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| CliError::Config(e.to_string()))?;
        if let Ok(root) = std::env::var(OUTPUT_ROOT_ENV) {
            if !root.is_empty() {
                cfg.output.dir = PathBuf::from(root);
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.version != CONFIG_VERSION {
            return Err(CliError::Config(format!(
                "unsupported config version {} (expected {CONFIG_VERSION})",
                self.version
            )));
        }
        let bad = |e: gpmpc_core::Error| CliError::Config(e.to_string());
        self.mpc_config(Variant::Gp).map_err(bad)?.validate().map_err(bad)?;
        self.arx().map_err(bad)?;
        self.scenario(&self.scenario.name)?.validate().map_err(bad)?;
        self.truth_spec().validate().map_err(bad)?;
        if self.data.n_train == 0 || self.data.n_test == 0 {
            return Err(CliError::Config("data.n_train and data.n_test must be ≥ 1".into()));
        }
        if self.gp.subsample == 0 || self.gp.max_points < 2 || self.gp.restarts == 0 {
            return Err(CliError::Config("gp.subsample, gp.restarts ≥ 1 and gp.max_points ≥ 2 required".into()));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn arx(&self) -> gpmpc_core::Result<ArxCoefficients> {
        ArxCoefficients::new(self.arx.c, self.arx.b, self.arx.dt)
    }

    pub fn mpc_config(&self, variant: Variant) -> gpmpc_core::Result<MpcConfig> {
        let m = &self.mpc;
        Ok(MpcConfig {
            horizon: m.horizon,
            dt: self.arx.dt,
            q1: m.q1,
            q2: m.q2,
            r: m.r,
            v_min: m.v_min,
            v_max: m.v_max,
            a_min: m.a_min,
            a_max: m.a_max,
            policy: DistancePolicy::new(m.delta_m, m.p_def)?,
            variant,
            max_outer_iterations: m.max_outer_iterations,
            outer_tolerance: m.outer_tolerance,
            slack_penalty: m.slack_penalty,
            qp: QpSettings {
                eps_abs: m.qp_eps,
                max_iter: m.qp_max_iter,
                ..QpSettings::default()
            },
        })
    }

    pub fn scenario(&self, name: &str) -> Result<Scenario, CliError> {
        let s = &self.scenario;
        let reference = match name {
            "constant" => vec![(0.0, s.cruise_mps)],
            "braking" => vec![(0.0, s.cruise_mps), (s.braking_time_s, s.braking_mps)],
            other => {
                return Err(CliError::Config(format!(
                    "unknown scenario `{other}` (expected constant or braking)"
                )))
            }
        };
        Ok(Scenario {
            name: name.into(),
            duration: s.duration_s,
            dt: self.arx.dt,
            reference,
            initial_gap: s.initial_gap_m,
            n_av: s.n_av,
            seed: s.seed,
            sample_truth: s.sample_truth,
        })
    }

    pub fn truth_spec(&self) -> TruthHvSpec {
        TruthHvSpec {
            base: ArxCoefficients { c: self.arx.c, b: self.arx.b, sample_time: self.arx.dt },
            max_increment: self.data.max_increment_mps,
            lag_gain: self.data.lag_gain,
            lag_limit: self.data.lag_limit_mps,
            noise_std: self.data.noise_std_mps,
            seed: 0,
        }
    }

    pub fn data_spec(&self) -> DataSpec {
        let d = &self.data;
        DataSpec {
            n_train: d.n_train,
            n_test: d.n_test,
            seed: d.seed,
            av: AvTraceSpec {
                steps: d.steps,
                dt: self.arx.dt,
                levels: d.levels_mps.clone(),
                hold_s: (d.hold_min_s, d.hold_max_s),
                standstill_s: (d.standstill_min_s, d.standstill_max_s),
                accel: d.ramp_mps2,
            },
            truth: self.truth_spec(),
        }
    }

    pub fn train_spec(&self) -> TrainSpec {
        let g = &self.gp;
        TrainSpec {
            mode: g.mode,
            subsample: g.subsample,
            max_points: g.max_points,
            restarts: g.restarts,
            seed: g.seed,
        }
    }
}

/// `section.key=value`; the value is read as a TOML value, falling back to
/// a plain string.
fn apply_override(table: &mut toml::Table, spec: &str) -> Result<(), CliError> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("override `{spec}` is not key=value")))?;
    let path: Vec<&str> = key.trim().split('.').collect();
    if path.iter().any(|p| p.is_empty()) {
        return Err(CliError::Config(format!("bad override key `{key}`")));
    }
    let value = match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => toml::Value::String(raw.trim().to_string()),
    };
    let mut cur = table;
    for p in &path[..path.len() - 1] {
        let entry = cur
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| CliError::Config(format!("`{p}` in `{key}` is not a section")))?;
    }
    cur.insert(path[path.len() - 1].to_string(), value);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let cfg = RunConfig::default();
        let back: RunConfig = toml::from_str(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
        cfg.validate().unwrap();
    }

    #[test]
    fn controller_defaults() {
        let m = RunConfig::default().mpc_config(Variant::Gp).unwrap();
        assert_eq!((m.horizon, m.dt, m.q1, m.q2, m.r), (10, 0.1, 5.0, 5.0, 10.0));
        assert_eq!((m.a_min, m.a_max, m.v_min, m.v_max), (-5.0, 5.0, -35.0, 35.0));
        assert_eq!((m.policy.delta(), m.policy.p_def()), (20.0, 0.95));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<RunConfig>("[mpc]\nhorizn = 3\n").is_err());
        assert!(toml::from_str::<RunConfig>("colour = 1\n").is_err());
    }

    #[test]
    fn overrides() {
        let mut t = toml::Table::new();
        apply_override(&mut t, "mpc.horizon=12").unwrap();
        apply_override(&mut t, "scenario.name=braking").unwrap();
        apply_override(&mut t, "data.levels_mps=[5.0, 7.5]").unwrap();
        let cfg: RunConfig = toml::Value::Table(t).try_into().unwrap();
        assert_eq!(cfg.mpc.horizon, 12);
        assert_eq!(cfg.scenario.name, "braking");
        assert_eq!(cfg.data.levels_mps, vec![5.0, 7.5]);
        assert!(apply_override(&mut toml::Table::new(), "novalue").is_err());
    }

    #[test]
    fn invalid_values_fail_validation() {
        let mut cfg = RunConfig::default();
        cfg.mpc.p_def = 1.5;
        assert!(cfg.validate().is_err());
        let mut cfg = RunConfig::default();
        cfg.version = 2;
        assert!(cfg.validate().is_err());
        let mut cfg = RunConfig::default();
        cfg.scenario.name = "cruise".into();
        assert!(cfg.validate().is_err());
    }
}
