//! Subcommand implementations. Each writes its outputs under the configured
//! output directory together with a manifest: the resolved configuration
//! plus the command line and output list as comments, so that
//! `gpmpc --config <manifest> <command>` redoes the run.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use gpmpc_core::data::{evaluate, generate_logs, train, training_dataset, RmseReport, TruthLog};
use gpmpc_core::gp::GpModel;
use gpmpc_core::io::{
    dataset_to_csv, sim_log_to_csv, sim_rows_from_csv, truth_log_from_csv, truth_log_to_csv, write_file,
};
use gpmpc_core::mpc::Variant;
use gpmpc_core::plot::render_svg;
use gpmpc_core::sim::{compare, compute_metrics, run, Comparison, Metrics, SimLog};
use serde::Serialize;

use crate::config::{PlantModel, RunConfig};
use crate::error::CliError;

pub const MODEL_FILE: &str = "model/gp_model.txt";

pub fn train_log_path(root: &Path, i: usize) -> PathBuf {
    root.join(format!("data/train_{i:02}.csv"))
}

pub fn test_log_path(root: &Path, i: usize) -> PathBuf {
    root.join(format!("data/test_{i:02}.csv"))
}

fn write_manifest(cfg: &RunConfig, path: &Path, command: &str, outputs: &[PathBuf]) -> Result<(), CliError> {
    let mut s = String::new();
    let _ = writeln!(s, "# gpmpc manifest");
    let _ = writeln!(s, "# command: {command}");
    let _ = writeln!(s, "# outputs:");
    for o in outputs {
        let rel = o.strip_prefix(&cfg.output.dir).unwrap_or(o);
        let _ = writeln!(s, "#   {}", rel.display());
    }
    s.push('\n');
    s.push_str(&cfg.to_toml());
    write_file(path, &s)?;
    Ok(())
}

fn write(path: &Path, contents: &str, outputs: &mut Vec<PathBuf>) -> Result<(), CliError> {
    write_file(path, contents)?;
    outputs.push(path.to_path_buf());
    Ok(())
}

fn json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serializable");
    s.push('\n');
    s
}

pub fn generate_data(cfg: &RunConfig) -> Result<Vec<PathBuf>, CliError> {
    let root = &cfg.output.dir;
    let logs = generate_logs(&cfg.data_spec())?;
    let mut outputs = Vec::new();
    for (i, l) in logs.train.iter().enumerate() {
        write(&train_log_path(root, i), &truth_log_to_csv(l)?, &mut outputs)?;
    }
    for (i, l) in logs.test.iter().enumerate() {
        write(&test_log_path(root, i), &truth_log_to_csv(l)?, &mut outputs)?;
    }
    write_manifest(cfg, &root.join("data/manifest.toml"), "generate-data", &outputs)?;
    println!(
        "wrote {} training and {} test logs to {}",
        logs.train.len(),
        logs.test.len(),
        root.join("data").display()
    );
    Ok(outputs)
}

fn read_logs(paths: impl Iterator<Item = PathBuf>) -> Result<Vec<TruthLog>, CliError> {
    paths
        .map(|p| {
            let text = std::fs::read_to_string(&p).map_err(|_| {
                CliError::MissingArtifact(format!("{} (run generate-data first)", p.display()))
            })?;
            Ok(truth_log_from_csv(&text)?)
        })
        .collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct TrainReport {
    pub training_points: usize,
    pub signal_variance: f64,
    pub length_scales: Vec<f64>,
    pub noise_variance: f64,
    pub log_marginal_likelihood: f64,
    pub test: RmseReport,
}

impl TrainReport {
    pub fn to_text(&self) -> String {
        let improvement = 100.0 * (self.test.arx - self.test.arx_gp) / self.test.arx;
        format!(
            "training_points = {}\nsignal_variance = {}\nlength_scales = {:?}\nnoise_variance = {}\n\
             log_marginal_likelihood = {}\ntest_samples = {}\nrmse_arx = {}\nrmse_arx_gp = {}\n\
             rmse_reduction_percent = {:.2}\n",
            self.training_points,
            self.signal_variance,
            self.length_scales,
            self.noise_variance,
            self.log_marginal_likelihood,
            self.test.samples,
            self.test.arx,
            self.test.arx_gp,
            improvement
        )
    }
}

pub fn train_model(cfg: &RunConfig) -> Result<TrainReport, CliError> {
    let root = &cfg.output.dir;
    let train_logs = read_logs((0..cfg.data.n_train).map(|i| train_log_path(root, i)))?;
    let test_logs = read_logs((0..cfg.data.n_test).map(|i| test_log_path(root, i)))?;
    let coeffs = cfg.arx()?;
    let spec = cfg.train_spec();
    let ds = training_dataset(&train_logs, &coeffs, &spec)?;
    let model = train(&train_logs, &coeffs, &spec)?;
    let report = TrainReport {
        training_points: ds.len(),
        signal_variance: model.kernel().signal_variance(),
        length_scales: model.kernel().length_scales().to_vec(),
        noise_variance: model.noise_variance(),
        log_marginal_likelihood: model.log_marginal_likelihood(),
        test: evaluate(&test_logs, &coeffs, &model, spec.mode)?,
    };
    let mut outputs = Vec::new();
    write(&root.join(MODEL_FILE), &model.to_text(), &mut outputs)?;
    write(&root.join("model/training_set.csv"), &dataset_to_csv(&ds)?, &mut outputs)?;
    write(&root.join("model/train_report.txt"), &report.to_text(), &mut outputs)?;
    write(&root.join("model/train_report.json"), &json(&report), &mut outputs)?;
    write_manifest(cfg, &root.join("model/manifest.toml"), "train", &outputs)?;
    print!("{}", report.to_text());
    Ok(report)
}

pub fn load_model(cfg: &RunConfig) -> Result<GpModel, CliError> {
    let path = cfg.output.dir.join(MODEL_FILE);
    if !path.exists() {
        return Err(CliError::MissingArtifact(format!("{} (run train first)", path.display())));
    }
    Ok(GpModel::load(&path)?)
}

fn write_run(cfg: &RunConfig, dir: &Path, log: &SimLog, metrics: &Metrics, outputs: &mut Vec<PathBuf>) -> Result<(), CliError> {
    let stem = format!("{}_{}", log.scenario, log.variant.name());
    write(&dir.join(format!("{stem}.csv")), &sim_log_to_csv(log)?, outputs)?;
    write(&dir.join(format!("{stem}.svg")), &render_svg(log, cfg.mpc.delta_m), outputs)?;
    let mut text = metrics.to_text();
    if let Some(f) = &log.failure {
        let _ = writeln!(text, "failure = {f}");
    }
    write(&dir.join(format!("{stem}_metrics.txt")), &text, outputs)?;
    write(&dir.join(format!("{stem}_metrics.json")), &json(metrics), outputs)?;
    Ok(())
}

pub fn simulate(cfg: &RunConfig, variant: Variant) -> Result<Metrics, CliError> {
    let scenario = cfg.scenario(&cfg.scenario.name)?;
    let mpc = cfg.mpc_config(variant)?;
    let coeffs = cfg.arx()?;
    let model = match (variant, cfg.scenario.plant) {
        (Variant::Nominal, PlantModel::Arx) => None,
        _ => Some(load_model(cfg)?),
    };
    let gp_controller = if variant == Variant::Gp { model.as_ref() } else { None };
    let gp_truth = if cfg.scenario.plant == PlantModel::Gp { model.as_ref() } else { None };
    let log = run(&scenario, &mpc, &coeffs, gp_controller, gp_truth)?;
    let metrics = compute_metrics(&log, &mpc);
    let dir = cfg.output.dir.join("sim");
    let mut outputs = Vec::new();
    write_run(cfg, &dir, &log, &metrics, &mut outputs)?;
    let stem = format!("{}_{}", log.scenario, variant.name());
    write_manifest(
        cfg,
        &dir.join(format!("{stem}_manifest.toml")),
        &format!("simulate --variant {}", variant.name()),
        &outputs,
    )?;
    print!("{}", metrics.to_text());
    match log.failure {
        Some(f) => Err(CliError::Controller(f)),
        None => Ok(metrics),
    }
}

/// Cost and minimum AV-HV distance per controller and scenario.
pub fn comparison_table(results: &[(String, Comparison)]) -> String {
    let mut s = String::new();
    let _ = write!(s, "{:<14}", "");
    for (name, _) in results {
        let _ = write!(s, "| {:^31} ", scenario_title(name));
    }
    s.push('\n');
    let _ = write!(s, "{:<14}", "Controller");
    for _ in results {
        let _ = write!(s, "| {:>14} {:>16} ", "Cost", "Min distance");
    }
    s.push('\n');
    for (label, pick) in [("Nominal MPC", false), ("GP-MPC", true)] {
        let _ = write!(s, "{label:<14}");
        for (_, c) in results {
            let m = if pick { &c.gp_metrics } else { &c.nominal_metrics };
            let _ = write!(s, "| {:>14.0} {:>14.2} m ", m.total_cost, m.min_av_hv_gap);
        }
        s.push('\n');
    }
    s
}

fn scenario_title(name: &str) -> &str {
    match name {
        "constant" => "Constant velocity",
        "braking" => "Emergency braking",
        other => other,
    }
}

#[derive(Debug, Serialize)]
struct ComparisonJson<'a> {
    scenario: &'a str,
    nominal: Metrics,
    gp: Metrics,
    delta_gp_minus_nominal: Metrics,
}

pub fn compare_scenarios(cfg: &RunConfig, names: &[&str]) -> Result<Vec<(String, Comparison)>, CliError> {
    let coeffs = cfg.arx()?;
    let mpc = cfg.mpc_config(Variant::Gp)?;
    let model = load_model(cfg)?;
    let truth = (cfg.scenario.plant == PlantModel::Gp).then_some(&model);
    let dir = cfg.output.dir.join("compare");
    let mut outputs = Vec::new();
    let mut results = Vec::new();
    for name in names {
        let scenario = cfg.scenario(name)?;
        let c = compare(&scenario, &mpc, &coeffs, &model, truth)?;
        write_run(cfg, &dir, &c.nominal, &c.nominal_metrics, &mut outputs)?;
        write_run(cfg, &dir, &c.gp, &c.gp_metrics, &mut outputs)?;
        results.push((name.to_string(), c));
    }

    let mut report = comparison_table(&results);
    for (name, c) in &results {
        let _ = write!(report, "\n[{name}.nominal]\n{}", c.nominal_metrics.to_text());
        let _ = write!(report, "\n[{name}.gp]\n{}", c.gp_metrics.to_text());
        let _ = write!(report, "\n[{name}.delta]\n{}", c.deltas().to_text());
    }
    let blocks: Vec<ComparisonJson> = results
        .iter()
        .map(|(name, c)| ComparisonJson {
            scenario: name,
            nominal: c.nominal_metrics,
            gp: c.gp_metrics,
            delta_gp_minus_nominal: c.deltas(),
        })
        .collect();
    write(&dir.join("report.txt"), &report, &mut outputs)?;
    write(&dir.join("report.json"), &json(&blocks), &mut outputs)?;
    write_manifest(
        cfg,
        &dir.join("manifest.toml"),
        &format!("compare --scenario {}", if names.len() > 1 { "both".to_string() } else { names[0].to_string() }),
        &outputs,
    )?;
    print!("{}", comparison_table(&results));

    let failures: Vec<String> = results
        .iter()
        .flat_map(|(_, c)| [&c.nominal, &c.gp])
        .filter_map(|l| l.failure.as_ref().map(|f| format!("{} {}: {f}", l.scenario, l.variant.name())))
        .collect();
    if failures.is_empty() {
        Ok(results)
    } else {
        Err(CliError::Controller(failures.join("; ")))
    }
}

/// Renders an existing simulation CSV. Scenario and variant come from the
/// `<scenario>_<variant>` file stem unless `variant` is given.
pub fn plot(cfg: &RunConfig, log_path: &Path, out: Option<&Path>, variant: Option<Variant>) -> Result<PathBuf, CliError> {
    let text = std::fs::read_to_string(log_path)
        .map_err(|_| CliError::MissingArtifact(log_path.display().to_string()))?;
    let (n_av, rows) = sim_rows_from_csv(&text)?;
    let stem = log_path.file_stem().and_then(|s| s.to_str()).unwrap_or("log");
    let (scenario, inferred) = match stem.rsplit_once('_') {
        Some((s, v)) => match v.parse::<Variant>() {
            Ok(v) => (s, Some(v)),
            Err(_) => (stem, None),
        },
        None => (stem, None),
    };
    let variant = variant.or(inferred).ok_or_else(|| {
        CliError::Config(format!("cannot tell the variant from `{stem}`; pass --variant"))
    })?;
    let log = SimLog {
        scenario: scenario.into(),
        variant,
        n_av,
        dt: cfg.arx.dt,
        rows,
        failure: None,
    };
    let out = out.map(Path::to_path_buf).unwrap_or_else(|| log_path.with_extension("svg"));
    write_file(&out, &render_svg(&log, cfg.mpc.delta_m))?;
    let command = format!("plot {} --out {} --variant {}", log_path.display(), out.display(), variant.name());
    write_manifest(cfg, &out.with_extension("manifest.toml"), &command, std::slice::from_ref(&out))?;
    println!("wrote {}", out.display());
    Ok(out)
}
