//! File formats: dataset and trajectory CSV, experiment outputs, TOML configs.
//!
//! Every float is written as `{:.16e}` (17 significant digits), so a value
//! read back parses to the identical bit pattern and write → read → write
//! reproduces the bytes.
//!
//! Dataset CSV layout:
//!
//! ```text
//! kind,p,sigma,eps_miss,seed,n,theta_star
//! GMM,2,1.0000000000000000e0,0.0000000000000000e0,7,3,1.0000000000000000e0;-1.0000000000000000e0
//! y1,y2
//! ...one row per sample...
//! ```
//!
//! Sample columns are `y1..yp` for GMM, `y,x1..xp` for MLR and
//! `y,x1..xp,mask` for RMC, where `mask` is a 0/1 string with 1 = observed
//! and missing coordinates are written as 0.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use nalgebra::DVector;
use serde::Serialize;

use crate::em::EmTrajectory;
use crate::error::{Error, Result};
use crate::experiments::{Aggregate, ExperimentConfig, ExperimentResult, ReplicateRecord};
use crate::model::{Dataset, ModelKind, ModelSpec, Sample, SampleRef};

pub const DATASET_HEADER: [&str; 7] = ["kind", "p", "sigma", "eps_miss", "seed", "n", "theta_star"];

/// 17 significant digits.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt_f64).unwrap_or_default()
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(e.to_string())
}

fn parse_f64(field: &str, what: &str) -> Result<f64> {
    field
        .trim()
        .parse()
        .map_err(|_| Error::Parse(format!("{what}: `{field}` is not a number")))
}

fn parse_usize(field: &str, what: &str) -> Result<usize> {
    field
        .trim()
        .parse()
        .map_err(|_| Error::Parse(format!("{what}: `{field}` is not a nonnegative integer")))
}

fn sample_columns(kind: ModelKind, p: usize) -> Vec<String> {
    let xs = (1..=p).map(|j| format!("x{j}"));
    match kind {
        ModelKind::Gmm => (1..=p).map(|j| format!("y{j}")).collect(),
        ModelKind::Mlr => std::iter::once("y".to_string()).chain(xs).collect(),
        ModelKind::Rmc => std::iter::once("y".to_string())
            .chain(xs)
            .chain(std::iter::once("mask".to_string()))
            .collect(),
    }
}

pub fn write_dataset_csv<W: Write>(data: &Dataset, out: W) -> Result<()> {
    let model = data.model();
    let p = model.dim();
    let mut w = csv::WriterBuilder::new().flexible(true).from_writer(out);
    w.write_record(DATASET_HEADER).map_err(csv_err)?;
    let theta: Vec<String> = model.theta_star().iter().map(|&v| fmt_f64(v)).collect();
    w.write_record([
        model.kind().to_string(),
        p.to_string(),
        fmt_f64(model.sigma()),
        fmt_f64(model.epsilon_miss()),
        data.seed().to_string(),
        data.n().to_string(),
        theta.join(";"),
    ])
    .map_err(csv_err)?;
    w.write_record(sample_columns(model.kind(), p)).map_err(csv_err)?;
    let mut row = Vec::with_capacity(p + 2);
    for s in data.samples() {
        row.clear();
        match s {
            SampleRef::Gmm { y } => row.extend(y.iter().map(|&v| fmt_f64(v))),
            SampleRef::Mlr { y, x } => {
                row.push(fmt_f64(y));
                row.extend(x.iter().map(|&v| fmt_f64(v)));
            }
            SampleRef::Rmc { y, x_obs, mask } => {
                row.push(fmt_f64(y));
                row.extend(x_obs.iter().map(|&v| fmt_f64(v)));
                row.push(mask.iter().map(|&m| if m { '1' } else { '0' }).collect());
            }
        }
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_dataset_csv<R: Read>(input: R) -> Result<Dataset> {
    let mut rd = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(input);
    let mut rows = rd.records();
    let mut next = |what: &str| -> Result<csv::StringRecord> {
        rows.next()
            .ok_or_else(|| Error::Parse(format!("dataset file ends before the {what}")))?
            .map_err(csv_err)
    };
    let header = next("metadata header")?;
    if header.iter().collect::<Vec<_>>() != DATASET_HEADER {
        return Err(Error::Parse(format!(
            "dataset metadata header must be `{}`",
            DATASET_HEADER.join(",")
        )));
    }
    let meta = next("metadata row")?;
    if meta.len() != DATASET_HEADER.len() {
        return Err(Error::Parse("dataset metadata row has the wrong number of fields".into()));
    }
    let kind: ModelKind = meta[0].parse()?;
    let p = parse_usize(&meta[1], "p")?;
    let sigma = parse_f64(&meta[2], "sigma")?;
    let eps = parse_f64(&meta[3], "eps_miss")?;
    let seed: u64 = meta[4]
        .trim()
        .parse()
        .map_err(|_| Error::Parse(format!("seed: `{}` is not a u64", &meta[4])))?;
    let n = parse_usize(&meta[5], "n")?;
    let theta: Vec<f64> = meta[6]
        .split(';')
        .map(|v| parse_f64(v, "theta_star"))
        .collect::<Result<_>>()?;
    if theta.len() != p {
        return Err(Error::DimensionMismatch {
            expected: p,
            got: theta.len(),
        });
    }
    let model = ModelSpec::new(kind, DVector::from_vec(theta), sigma, eps)?;
    let columns = next("column header")?;
    let expected = sample_columns(kind, p);
    if columns.iter().ne(expected.iter().map(String::as_str)) {
        return Err(Error::Parse(format!("dataset column header must be `{}`", expected.join(","))));
    }
    let width = expected.len();
    let mut samples = Vec::with_capacity(n);
    for (i, rec) in rows.enumerate() {
        let rec = rec.map_err(csv_err)?;
        if rec.len() != width {
            return Err(Error::Parse(format!(
                "sample row {}: expected {width} fields, got {}",
                i + 1,
                rec.len()
            )));
        }
        let nums = |range: std::ops::Range<usize>| -> Result<Vec<f64>> {
            range.map(|j| parse_f64(&rec[j], "sample value")).collect()
        };
        samples.push(match kind {
            ModelKind::Gmm => Sample::Gmm {
                y: DVector::from_vec(nums(0..p)?),
            },
            ModelKind::Mlr => Sample::Mlr {
                y: parse_f64(&rec[0], "y")?,
                x: DVector::from_vec(nums(1..p + 1)?),
            },
            ModelKind::Rmc => {
                let mask: Vec<bool> = rec[p + 1]
                    .chars()
                    .map(|c| match c {
                        '1' => Ok(true),
                        '0' => Ok(false),
                        _ => Err(Error::Parse(format!("sample row {}: mask must be a 0/1 string", i + 1))),
                    })
                    .collect::<Result<_>>()?;
                Sample::Rmc {
                    y: parse_f64(&rec[0], "y")?,
                    x_obs: DVector::from_vec(nums(1..p + 1)?),
                    mask,
                }
            }
        });
    }
    if samples.len() != n {
        return Err(Error::Parse(format!(
            "metadata says n = {n} but the file holds {} samples",
            samples.len()
        )));
    }
    Dataset::from_samples(&model, &samples, seed)
}

pub fn save_dataset(data: &Dataset, path: &Path) -> Result<()> {
    write_dataset_csv(data, fs::File::create(path)?)
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let f = fs::File::open(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    read_dataset_csv(std::io::BufReader::new(f))
}

/// Columns `t,error,loglik,q_gain` plus `theta_1..theta_p` when requested.
/// `q_gain` on row `t` is the gain of the step that produced `θᵗ`; row 0 leaves it empty.
pub fn write_trajectory_csv<W: Write>(traj: &EmTrajectory, include_theta: bool, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let p = traj.iterates.first().map_or(0, |t| t.len());
    let mut header: Vec<String> = ["t", "error", "loglik", "q_gain"].map(String::from).to_vec();
    if include_theta {
        header.extend((1..=p).map(|j| format!("theta_{j}")));
    }
    w.write_record(&header).map_err(csv_err)?;
    for t in 0..traj.len() {
        let mut row = vec![
            t.to_string(),
            fmt_f64(traj.errors[t]),
            fmt_f64(traj.loglik[t]),
            fmt_opt(t.checked_sub(1).map(|s| traj.q_gains[s])),
        ];
        if include_theta {
            row.extend(traj.iterates[t].iter().map(|&v| fmt_f64(v)));
        }
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub const RECORD_COLUMNS: [&str; 23] = [
    "n",
    "replicate",
    "seed",
    "iterations",
    "stopped_at_tol",
    "final_error",
    "rate",
    "rate_r_squared",
    "fit_last",
    "rate_floor",
    "skipped",
    "gamma_bar_n",
    "v_bar_n",
    "e_bar_n",
    "k_bar_n",
    "kappa_n_ceiling",
    "floor_bound",
    "gamma_search_warning",
    "step_violations",
    "cumulative_violations",
    "exited_outer_ball",
    "min_loglik_increment",
    "min_q_gain",
];

fn opt_display<T: ToString>(x: Option<T>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

pub fn write_records_csv<W: Write>(records: &[ReplicateRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(RECORD_COLUMNS).map_err(csv_err)?;
    for r in records {
        w.write_record([
            r.n.to_string(),
            r.replicate.to_string(),
            r.seed.to_string(),
            r.iterations.to_string(),
            r.stopped_at_tol.to_string(),
            fmt_f64(r.final_error),
            fmt_opt(r.rate),
            fmt_opt(r.rate_r_squared),
            opt_display(r.fit_last),
            fmt_opt(r.rate_floor),
            r.skipped.clone().unwrap_or_default(),
            fmt_opt(r.gamma_bar_n),
            fmt_opt(r.v_bar_n),
            fmt_opt(r.e_bar_n),
            fmt_opt(r.k_bar_n),
            fmt_opt(r.kappa_n_ceiling),
            fmt_opt(r.floor_bound),
            opt_display(r.gamma_search_warning),
            opt_display(r.step_violations),
            opt_display(r.cumulative_violations),
            r.exited_outer_ball.to_string(),
            fmt_f64(r.min_loglik_increment),
            fmt_f64(r.min_q_gain),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_aggregates_csv<W: Write>(aggs: &[Aggregate], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "n",
        "records",
        "skipped",
        "rate_mean",
        "rate_std",
        "rate_iqr",
        "k_bar_mean",
        "k_bar_std",
        "k_bar_iqr",
        "final_error_mean",
        "final_error_std",
        "frac_k_bar_below_proxy",
        "frac_rate_below_proxy",
    ])
    .map_err(csv_err)?;
    for a in aggs {
        w.write_record([
            a.n.to_string(),
            a.records.to_string(),
            a.skipped.to_string(),
            fmt_opt(a.rate_mean),
            fmt_opt(a.rate_std),
            fmt_opt(a.rate_iqr),
            fmt_opt(a.k_bar_mean),
            fmt_opt(a.k_bar_std),
            fmt_opt(a.k_bar_iqr),
            fmt_f64(a.final_error_mean),
            fmt_f64(a.final_error_std),
            fmt_opt(a.frac_k_bar_below_proxy),
            fmt_opt(a.frac_rate_below_proxy),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

fn log_or_empty(x: Option<&f64>) -> String {
    match x {
        Some(&v) if v > 0.0 => fmt_f64(v.ln()),
        _ => String::new(),
    }
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Parse(e.to_string()))?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

#[derive(Serialize)]
struct ExperimentMeta<'a> {
    theta0: &'a [f64],
    regime: &'a crate::experiments::RegimeStatus,
    population: &'a Option<crate::experiments::PopulationSummary>,
    summary: &'a crate::experiments::StudySummary,
}

/// Writes `records.csv`, `aggregates.csv`, `summary.json` and one
/// `plotdata/n{n}_r{replicate}.csv` per trajectory. Returns the created
/// paths relative to `dir`.
pub fn write_experiment_outputs(result: &ExperimentResult, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir.join("plotdata"))?;
    let mut created = Vec::new();
    let emit = |created: &mut Vec<PathBuf>, rel: PathBuf, f: &dyn Fn(fs::File) -> Result<()>| -> Result<()> {
        f(fs::File::create(dir.join(&rel))?)?;
        created.push(rel);
        Ok(())
    };
    emit(&mut created, "records.csv".into(), &|f| write_records_csv(&result.records, f))?;
    emit(&mut created, "aggregates.csv".into(), &|f| write_aggregates_csv(&result.aggregates, f))?;
    let meta = ExperimentMeta {
        theta0: &result.theta0,
        regime: &result.regime,
        population: &result.population,
        summary: &result.summary,
    };
    let rel = PathBuf::from("summary.json");
    write_json(&meta, &dir.join(&rel))?;
    created.push(rel);
    for s in &result.trajectories {
        let rel = PathBuf::from("plotdata").join(format!("n{}_r{:03}.csv", s.n, s.replicate));
        emit(&mut created, rel, &|f| {
            let mut w = csv::Writer::from_writer(f);
            w.write_record(["t", "log_error", "log_error_limit"]).map_err(csv_err)?;
            for (t, e) in s.errors.iter().enumerate() {
                w.write_record([t.to_string(), log_or_empty(Some(e)), log_or_empty(s.errors_to_limit.get(t))])
                    .map_err(csv_err)?;
            }
            w.flush()?;
            Ok(())
        })?;
    }
    Ok(created)
}

pub fn load_experiment_config(path: &Path) -> Result<ExperimentConfig> {
    let text = fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    ExperimentConfig::from_toml(&text)
}
