//! CSV forms of truth logs, discrepancy datasets and simulation logs.
//!
//! Every number is written with 17 significant digits so that reading a file
//! back gives the same `f64` values.

use std::path::Path;

use crate::data::TruthLog;
use crate::error::{Error, Result};
use crate::gp::{fmt17, Dataset};
use crate::mpc::SolveStatus;
use crate::sim::{LogRow, SimLog};

pub const TRUTH_HEADER: [&str; 3] = ["time_s", "v_hv_mps", "v_av_mps"];
pub const DATASET_HEADER: [&str; 3] = ["v_hv_prev_mps", "v_av_prev_mps", "target_mps"];

fn csv_err(e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line() as usize);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        kind => Error::Parse { line, message: format!("{kind:?}") },
    }
}

fn writer() -> csv::Writer<Vec<u8>> {
    csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new())
}

fn finish(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is ASCII"))
}

fn read_records(text: &str, expected: &[&str]) -> Result<Vec<(usize, Vec<f64>)>> {
    let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
    let header = r.headers().map_err(csv_err)?.clone();
    if header.iter().ne(expected.iter().copied()) {
        return Err(Error::Parse {
            line: 1,
            message: format!("expected header `{}`, found `{}`", expected.join(","), header.iter().collect::<Vec<_>>().join(",")),
        });
    }
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(csv_err)?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let vals = rec
            .iter()
            .map(|f| f.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::Parse { line, message: e.to_string() })?;
        out.push((line, vals));
    }
    Ok(out)
}

pub fn truth_log_to_csv(log: &TruthLog) -> Result<String> {
    let mut w = writer();
    w.write_record(TRUTH_HEADER).map_err(csv_err)?;
    for (k, t) in log.times().enumerate() {
        w.write_record([fmt17(t), fmt17(log.hv[k]), fmt17(log.av[k])]).map_err(csv_err)?;
    }
    finish(w)
}

/// The sample time is taken from the first two rows (0.1 s for a single
/// row).
pub fn truth_log_from_csv(text: &str) -> Result<TruthLog> {
    let rows = read_records(text, &TRUTH_HEADER)?;
    if rows.is_empty() {
        return Err(Error::Parse { line: 1, message: "truth log has no rows".into() });
    }
    let dt = if rows.len() > 1 { rows[1].1[0] - rows[0].1[0] } else { 0.1 };
    if !(dt > 0.0) {
        return Err(Error::Parse { line: 3, message: format!("time must increase, step is {dt}") });
    }
    Ok(TruthLog {
        dt,
        hv: rows.iter().map(|r| r.1[1]).collect(),
        av: rows.iter().map(|r| r.1[2]).collect(),
    })
}

pub fn dataset_to_csv(ds: &Dataset) -> Result<String> {
    if ds.dim() != 2 {
        return Err(Error::Input(format!("discrepancy dataset must be 2-D, is {}-D", ds.dim())));
    }
    let mut w = writer();
    w.write_record(DATASET_HEADER).map_err(csv_err)?;
    for (x, t) in ds.iter() {
        w.write_record([fmt17(x[0]), fmt17(x[1]), fmt17(t)]).map_err(csv_err)?;
    }
    finish(w)
}

pub fn dataset_from_csv(text: &str) -> Result<Dataset> {
    let rows = read_records(text, &DATASET_HEADER)?;
    let inputs = rows.iter().map(|r| r.1[..2].to_vec()).collect();
    let targets = rows.iter().map(|r| r.1[2]).collect();
    Dataset::new(inputs, targets)
}

/// Column names of a simulation log with `n_av` AVs.
pub fn sim_log_header(n_av: usize) -> Vec<String> {
    let mut h = vec!["time_s".to_string(), "v_ref_mps".into()];
    for n in 1..=n_av {
        h.push(format!("av{n}_p_m"));
        h.push(format!("av{n}_v_mps"));
        h.push(format!("av{n}_a_mps2"));
    }
    h.extend(
        ["hv_p_m", "hv_v_mps", "hv_mean_m", "hv_var_m2", "hv_bound_m"].map(String::from),
    );
    for n in 1..n_av {
        h.push(format!("gap_av{n}_av{}_m", n + 1));
    }
    h.push(format!("gap_av{n_av}_hv_m"));
    h.extend(["status", "qp_iterations", "slack_m"].map(String::from));
    h
}

pub fn sim_log_to_csv(log: &SimLog) -> Result<String> {
    let mut w = writer();
    w.write_record(sim_log_header(log.n_av)).map_err(csv_err)?;
    for r in &log.rows {
        let mut rec = vec![fmt17(r.time), fmt17(r.v_ref)];
        for n in 0..log.n_av {
            rec.push(fmt17(r.av_position[n]));
            rec.push(fmt17(r.av_velocity[n]));
            rec.push(fmt17(r.av_accel[n]));
        }
        for v in [r.hv_position, r.hv_velocity, r.hv_mean, r.hv_variance, r.hv_bound] {
            rec.push(fmt17(v));
        }
        rec.extend(r.gaps.iter().map(|g| fmt17(*g)));
        rec.push(r.status.name().into());
        rec.push(r.qp_iterations.to_string());
        rec.push(fmt17(r.slack));
        w.write_record(&rec).map_err(csv_err)?;
    }
    finish(w)
}

/// Reads the rows of a simulation log. Scenario name, variant and failure
/// are not part of the CSV and must be supplied.
pub fn sim_rows_from_csv(text: &str) -> Result<(usize, Vec<LogRow>)> {
    let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
    let header = r.headers().map_err(csv_err)?.clone();
    // 2 + 3n + 5 + n + 3 columns.
    let cols = header.len();
    if cols < 14 || (cols - 10) % 4 != 0 {
        return Err(Error::Parse { line: 1, message: format!("unexpected column count {cols}") });
    }
    let n_av = (cols - 10) / 4;
    let expected = sim_log_header(n_av);
    if header.iter().ne(expected.iter().map(String::as_str)) {
        return Err(Error::Parse { line: 1, message: "header does not match the simulation log schema".into() });
    }
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(csv_err)?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let num = |i: usize| -> Result<f64> {
            rec[i].trim().parse::<f64>().map_err(|e| Error::Parse {
                line,
                message: format!("column {}: {e}", expected[i]),
            })
        };
        let mut av_position = Vec::with_capacity(n_av);
        let mut av_velocity = Vec::with_capacity(n_av);
        let mut av_accel = Vec::with_capacity(n_av);
        for n in 0..n_av {
            av_position.push(num(2 + 3 * n)?);
            av_velocity.push(num(3 + 3 * n)?);
            av_accel.push(num(4 + 3 * n)?);
        }
        let b = 2 + 3 * n_av;
        let gaps = (0..n_av).map(|i| num(b + 5 + i)).collect::<Result<_>>()?;
        let s = b + 5 + n_av;
        let status = match &rec[s] {
            "optimal" => SolveStatus::Optimal,
            "max-iter" => SolveStatus::MaxIter,
            "infeasible-relaxed" => SolveStatus::InfeasibleRelaxed,
            other => return Err(Error::Parse { line, message: format!("unknown status `{other}`") }),
        };
        rows.push(LogRow {
            time: num(0)?,
            v_ref: num(1)?,
            av_position,
            av_velocity,
            av_accel,
            hv_position: num(b)?,
            hv_velocity: num(b + 1)?,
            hv_mean: num(b + 2)?,
            hv_variance: num(b + 3)?,
            hv_bound: num(b + 4)?,
            gaps,
            status,
            qp_iterations: rec[s + 1]
                .parse()
                .map_err(|e| Error::Parse { line, message: format!("qp_iterations: {e}") })?,
            slack: num(s + 2)?,
        });
    }
    Ok((n_av, rows))
}

/// Writes `contents` to `path`, creating parent directories.
pub fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, contents)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mpc::Variant;

    #[test]
    fn truth_log_round_trip() {
        let log = TruthLog { dt: 0.1, hv: vec![0.0, 0.1 + 0.2, -1e-300], av: vec![1.0 / 3.0, 2.0, 3.5] };
        let text = truth_log_to_csv(&log).unwrap();
        assert!(text.starts_with("time_s,v_hv_mps,v_av_mps\n"));
        let back = truth_log_from_csv(&text).unwrap();
        assert_eq!(back.hv, log.hv);
        assert_eq!(back.av, log.av);
        assert!((back.dt - 0.1).abs() < 1e-15);
    }

    #[test]
    fn dataset_round_trip() {
        let ds = Dataset::new(vec![vec![1.0, 2.0], vec![std::f64::consts::PI, -0.5]], vec![0.25, 1e-17]).unwrap();
        let back = dataset_from_csv(&dataset_to_csv(&ds).unwrap()).unwrap();
        assert_eq!(back, ds);
    }

    #[test]
    fn bad_header_is_rejected() {
        let err = truth_log_from_csv("t,a,b\n0,1,2\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }));
        assert!(truth_log_from_csv("time_s,v_hv_mps,v_av_mps\n0,x,2\n").is_err());
    }

    #[test]
    fn sim_log_round_trip() {
        let row = LogRow {
            time: 0.1,
            v_ref: 20.0,
            av_position: vec![1.0, -19.0, -40.5],
            av_velocity: vec![0.5, 0.25, 1.0 / 3.0],
            av_accel: vec![5.0, -5.0, 0.1],
            hv_position: -60.0,
            hv_velocity: 0.125,
            hv_mean: -59.9,
            hv_variance: 1e-5,
            hv_bound: 20.01,
            gaps: vec![20.0, 21.5, 19.5],
            status: SolveStatus::InfeasibleRelaxed,
            qp_iterations: 125,
            slack: 0.5,
        };
        let log = SimLog {
            scenario: "x".into(),
            variant: Variant::Gp,
            n_av: 3,
            dt: 0.1,
            rows: vec![row.clone(), LogRow { status: SolveStatus::Optimal, ..row }],
            failure: None,
        };
        let text = sim_log_to_csv(&log).unwrap();
        assert_eq!(text.lines().count(), 3);
        assert!(text.lines().next().unwrap().ends_with("gap_av2_av3_m,gap_av3_hv_m,status,qp_iterations,slack_m"));
        let (n, rows) = sim_rows_from_csv(&text).unwrap();
        assert_eq!(n, 3);
        assert_eq!(rows, log.rows);
    }
}
