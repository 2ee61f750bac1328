//! Synthetic driving logs, the GP training set built from them, and the
//! held-out RMSE report.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gp::{fit, Dataset, FitOptions, GpModel};
use crate::hv::{
    build_discrepancy_dataset, generate_av_trace, model_predictions, rmse, simulate_truth_hv,
    ArxCoefficients, AvTraceSpec, DiscrepancyMode, TruthHvSpec, FIRST_TARGET,
};

/// Velocities of the HV and the AV ahead of it, sampled every `dt`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthLog {
    pub dt: f64,
    pub hv: Vec<f64>,
    pub av: Vec<f64>,
}

impl TruthLog {
    pub fn len(&self) -> usize {
        self.hv.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hv.is_empty()
    }

    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.len()).map(move |k| k as f64 * self.dt)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataSpec {
    pub n_train: usize,
    pub n_test: usize,
    pub seed: u64,
    pub av: AvTraceSpec,
    pub truth: TruthHvSpec,
}

impl Default for DataSpec {
    fn default() -> Self {
        Self {
            n_train: 6,
            n_test: 3,
            seed: 0,
            av: AvTraceSpec::default(),
            truth: TruthHvSpec::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogSet {
    pub train: Vec<TruthLog>,
    pub test: Vec<TruthLog>,
}

/// Log `i` (training logs first) uses AV profile seed `seed·1000 + i` and
/// measurement noise seed `seed·1000 + 500 + i`.
pub fn generate_logs(spec: &DataSpec) -> Result<LogSet> {
    if spec.n_train == 0 || spec.n_test == 0 {
        return Err(Error::Input("need at least one training and one test log".into()));
    }
    spec.truth.validate()?;
    let one = |i: usize| -> Result<TruthLog> {
        let base = spec.seed.wrapping_mul(1000);
        let av = generate_av_trace(&spec.av, base.wrapping_add(i as u64))?;
        let truth = TruthHvSpec {
            seed: base.wrapping_add(500 + i as u64),
            ..spec.truth
        };
        let hv = simulate_truth_hv(&truth, &av)?;
        Ok(TruthLog { dt: spec.av.dt, hv, av })
    };
    let train = (0..spec.n_train).map(one).collect::<Result<_>>()?;
    let test = (spec.n_train..spec.n_train + spec.n_test).map(one).collect::<Result<_>>()?;
    Ok(LogSet { train, test })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSpec {
    pub mode: DiscrepancyMode,
    /// Keep every `subsample`-th discrepancy sample of each log.
    pub subsample: usize,
    /// Cap on the pooled training set, thinned evenly.
    pub max_points: usize,
    pub restarts: usize,
    pub seed: u64,
}

impl Default for TrainSpec {
    fn default() -> Self {
        Self {
            mode: DiscrepancyMode::Rollout,
            subsample: 5,
            max_points: 100,
            restarts: 5,
            seed: 0,
        }
    }
}

pub fn training_dataset(logs: &[TruthLog], coeffs: &ArxCoefficients, spec: &TrainSpec) -> Result<Dataset> {
    if spec.subsample == 0 || spec.max_points < 2 {
        return Err(Error::Input("subsample must be ≥ 1 and max_points ≥ 2".into()));
    }
    let parts = logs
        .iter()
        .map(|l| Ok(build_discrepancy_dataset(&l.hv, &l.av, coeffs, spec.mode)?.subsample(spec.subsample)))
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset::concat(&parts)?.thin_evenly(spec.max_points))
}

pub fn train(logs: &[TruthLog], coeffs: &ArxCoefficients, spec: &TrainSpec) -> Result<GpModel> {
    let ds = training_dataset(logs, coeffs, spec)?;
    fit(
        &ds,
        &FitOptions {
            restarts: spec.restarts,
            seed: spec.seed,
            ..FitOptions::default()
        },
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RmseReport {
    pub arx: f64,
    pub arx_gp: f64,
    pub samples: usize,
}

/// Pooled velocity RMSE over samples `5..n` of every log.
pub fn evaluate(logs: &[TruthLog], coeffs: &ArxCoefficients, gp: &GpModel, mode: DiscrepancyMode) -> Result<RmseReport> {
    let mut actual = Vec::new();
    let mut arx = Vec::new();
    let mut arx_gp = Vec::new();
    for l in logs {
        actual.extend_from_slice(&l.hv[FIRST_TARGET.min(l.len())..]);
        arx.extend(model_predictions(&l.hv, &l.av, coeffs, None, mode)?);
        arx_gp.extend(model_predictions(&l.hv, &l.av, coeffs, Some(gp), mode)?);
    }
    Ok(RmseReport {
        arx: rmse(&arx, &actual)?,
        arx_gp: rmse(&arx_gp, &actual)?,
        samples: actual.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> DataSpec {
        DataSpec {
            av: AvTraceSpec { steps: 200, ..AvTraceSpec::default() },
            ..DataSpec::default()
        }
    }

    #[test]
    fn default_split_sizes() {
        let logs = generate_logs(&small()).unwrap();
        assert_eq!(logs.train.len(), 6);
        assert_eq!(logs.test.len(), 3);
        assert!(logs.train.iter().chain(&logs.test).all(|l| l.len() == 200 && l.av.len() == 200));
    }

    #[test]
    fn seed_changes_contents_not_shapes() {
        let a = generate_logs(&small()).unwrap();
        let b = generate_logs(&DataSpec { seed: 1, ..small() }).unwrap();
        assert_ne!(a.train[0].hv, b.train[0].hv);
        assert_eq!(a.train[0].len(), b.train[0].len());
        assert_eq!(a, generate_logs(&small()).unwrap());
    }

    #[test]
    fn corrected_model_covers_training_points() {
        let logs = generate_logs(&DataSpec::default()).unwrap();
        let coeffs = ArxCoefficients::identified();
        let spec = TrainSpec::default();
        let ds = training_dataset(&logs.train, &coeffs, &spec).unwrap();
        let gp = train(&logs.train, &coeffs, &spec).unwrap();
        // Measured minus corrected velocity equals target minus GP mean.
        let inside = ds
            .iter()
            .filter(|(x, t)| {
                let (mean, var) = gp.predict(x).unwrap();
                (t - mean).abs() <= 2.0 * (var + gp.noise_variance()).sqrt()
            })
            .count();
        assert!(inside as f64 >= 0.95 * ds.len() as f64, "{inside} of {}", ds.len());
    }

    #[test]
    fn training_set_is_capped() {
        let logs = generate_logs(&small()).unwrap();
        let ds = training_dataset(&logs.train, &ArxCoefficients::identified(), &TrainSpec::default()).unwrap();
        assert_eq!(ds.len(), 100);
    }
}
