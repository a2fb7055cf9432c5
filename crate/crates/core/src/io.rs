//! File formats: delimited-text datasets (header row naming columns),
//! chain archives with JSON sidecar metadata, summary reports, and
//! plot-data exports (density grids and CDF tables).

use std::collections::BTreeMap;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::calibration::{CalibrationDataset, CalibrationState};
use crate::classifier::{ClassifierState, FailureDataset};
use crate::design::Design;
use crate::error::{Error, Result};
use crate::mcmc::{quantile, summarize_series, Chain, Summary};
use crate::priors::PriorSpec;
use crate::toy::ToyData;

fn ingestion(path: &Path, reason: impl Into<String>) -> Error {
    Error::Ingestion { path: path.display().to_string(), reason: reason.into() }
}

/// Reads a delimited table with a header row; every body cell must parse
/// as f64. Row numbers in errors are 1-based data rows.
fn read_table(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| ingestion(path, e.to_string()))?;
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| ingestion(path, e.to_string()))?
        .iter()
        .map(|s| s.to_string())
        .collect();
    let mut rows = Vec::new();
    for (idx, record) in reader.records().enumerate() {
        let record = record.map_err(|e| ingestion(path, e.to_string()))?;
        if record.len() != header.len() {
            return Err(ingestion(
                path,
                format!("row {}: expected {} columns, found {}", idx + 1, header.len(), record.len()),
            ));
        }
        let row = record
            .iter()
            .enumerate()
            .map(|(k, cell)| {
                cell.parse::<f64>().map_err(|_| {
                    ingestion(path, format!("row {}: column {} is not numeric: {cell:?}", idx + 1, header[k]))
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    Ok((header, rows))
}

fn expect_header(path: &Path, got: &[String], want: &[String]) -> Result<()> {
    if got != want {
        return Err(ingestion(
            path,
            format!("header mismatch: expected {want:?}, found {got:?}"),
        ));
    }
    Ok(())
}

fn x_column_names(d_x: usize) -> Vec<String> {
    (1..=d_x).map(|k| format!("x{k}")).collect()
}

fn t_column_names(d_t: usize) -> Vec<String> {
    (1..=d_t).map(|k| format!("t{k}")).collect()
}

fn scale_unit(path: &Path, what: &str, row: usize, v: f64, lo: f64, hi: f64) -> Result<f64> {
    let u = (v - lo) / (hi - lo);
    if !(0.0..=1.0).contains(&u) || !u.is_finite() {
        return Err(ingestion(
            path,
            format!("row {row}: {what} value {v} outside declared range [{lo}, {hi}]"),
        ));
    }
    Ok(u)
}

fn scale_design(
    path: &Path,
    rows: &[Vec<f64>],
    col_offset: usize,
    x_ranges: &[[f64; 2]],
    t_priors: &[PriorSpec],
) -> Result<Design> {
    let d_x = x_ranges.len();
    let d_t = t_priors.len();
    let mut out = Vec::with_capacity(rows.len());
    for (i, row) in rows.iter().enumerate() {
        let mut point = Vec::with_capacity(d_x + d_t);
        for (k, r) in x_ranges.iter().enumerate() {
            point.push(scale_unit(path, &format!("x{}", k + 1), i + 1, row[col_offset + k], r[0], r[1])?);
        }
        for (k, p) in t_priors.iter().enumerate() {
            let (a, b) = p.bounds();
            point.push(scale_unit(path, &format!("t{}", k + 1), i + 1, row[col_offset + d_x + k], a, b)?);
        }
        out.push(point);
    }
    Design::from_rows(&out)
}

/// Loads field and simulator files into a standardized calibration dataset.
/// x-columns are scaled by the configured ranges, t-columns by the prior
/// bounds of the calibration parameters.
pub fn load_calibration_data(
    field_path: &Path,
    sim_path: &Path,
    x_ranges: &[[f64; 2]],
    t_priors: &[PriorSpec],
) -> Result<CalibrationDataset> {
    let d_x = x_ranges.len();
    let (fh, frows) = read_table(field_path)?;
    let mut want = vec!["y".to_string()];
    want.extend(x_column_names(d_x));
    expect_header(field_path, &fh, &want)?;
    if frows.is_empty() {
        return Err(ingestion(field_path, "no field observations"));
    }
    let y: Vec<f64> = frows.iter().map(|r| r[0]).collect();
    let x = scale_design(field_path, &frows, 1, x_ranges, &[])?;

    let (sh, srows) = read_table(sim_path)?;
    let mut want = vec!["y".to_string()];
    want.extend(x_column_names(d_x));
    want.extend(t_column_names(t_priors.len()));
    expect_header(sim_path, &sh, &want)?;
    if srows.is_empty() {
        return Err(ingestion(sim_path, "no simulator runs"));
    }
    let eta: Vec<f64> = srows.iter().map(|r| r[0]).collect();
    let xs_ts = scale_design(sim_path, &srows, 1, x_ranges, t_priors)?;
    let xstar = xs_ts.select_cols(&(0..d_x).collect::<Vec<_>>());
    let tstar = xs_ts.select_cols(&(d_x..d_x + t_priors.len()).collect::<Vec<_>>());

    CalibrationDataset::from_natural(y, x, eta, xstar, tstar)
}

/// Loads the success/failure table over the augmented design. Ordering is
/// canonicalized successes-first by the dataset constructor.
pub fn load_failure_data(
    path: &Path,
    x_ranges: &[[f64; 2]],
    t_priors: &[PriorSpec],
) -> Result<FailureDataset> {
    let (h, rows) = read_table(path)?;
    let mut want = vec!["z".to_string()];
    want.extend(x_column_names(x_ranges.len()));
    want.extend(t_column_names(t_priors.len()));
    expect_header(path, &h, &want)?;
    let mut z = Vec::with_capacity(rows.len());
    for (i, row) in rows.iter().enumerate() {
        z.push(match row[0] {
            v if v == 0.0 => false,
            v if v == 1.0 => true,
            v => return Err(ingestion(path, format!("row {}: z must be 0 or 1, got {v}", i + 1))),
        });
    }
    let design0 = scale_design(path, &rows, 1, x_ranges, t_priors)?;
    FailureDataset::new(z, design0, x_ranges.len(), t_priors.len()).map_err(|e| match e {
        Error::InvalidArgument { value, reason, .. } => {
            ingestion(path, format!("{reason} ({value})"))
        }
        other => other,
    })
}

fn write_table(path: &Path, header: &[String], rows: impl Iterator<Item = Vec<f64>>) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .from_path(path)
        .map_err(|e| ingestion(path, e.to_string()))?;
    w.write_record(header).map_err(|e| ingestion(path, e.to_string()))?;
    for row in rows {
        let cells: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
        w.write_record(&cells).map_err(|e| ingestion(path, e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

/// Writes the three toy data files plus a ground-truth sidecar; returns
/// (field, simulator, failures) paths.
pub fn write_toy_files(toy: &ToyData, dir: &Path) -> Result<(PathBuf, PathBuf, PathBuf)> {
    fs::create_dir_all(dir)?;
    let field = dir.join("field.csv");
    let sim = dir.join("simulator.csv");
    let fails = dir.join("failures.csv");

    write_table(
        &field,
        &["y".into(), "x1".into()],
        toy.field_y.iter().zip(toy.field_x.iter()).map(|(&y, &x)| vec![y, x]),
    )?;
    write_table(
        &sim,
        &["y".into(), "x1".into(), "t1".into()],
        toy.sim_eta
            .iter()
            .zip(toy.sim_x.iter())
            .zip(toy.sim_t.iter())
            .map(|((&e, &x), &t)| vec![e, x, t]),
    )?;
    write_table(
        &fails,
        &["z".into(), "x1".into(), "t1".into()],
        toy.fail_z
            .iter()
            .zip(toy.fail_x.iter())
            .zip(toy.fail_t.iter())
            .map(|((&z, &x), &t)| vec![z as u8 as f64, x, t]),
    )?;

    let truth_path = dir.join("groundtruth.json");
    fs::write(&truth_path, serde_json::to_string_pretty(&toy.truth)?)?;
    Ok((field, sim, fails))
}

/// Sidecar metadata of a chain archive. Doubles as the warm-start payload:
/// final sampler states and tuned proposals ride along with the summaries.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChainMeta {
    pub seed: u64,
    pub chain_index: u64,
    pub config_hash: String,
    pub iterations: u64,
    pub burnin: u64,
    pub thin: u64,
    pub acceptance: BTreeMap<String, (u64, u64)>,
    pub jitter_events: u64,
    pub loocv: Vec<(u64, f64)>,
    #[serde(default)]
    pub calibration_state: Option<CalibrationState>,
    #[serde(default)]
    pub classifier_state: Option<ClassifierState>,
    #[serde(default)]
    pub aborted: Option<String>,
}

/// SHA-256 of the configuration text, recorded in every archive sidecar.
pub fn config_hash(config_text: &str) -> String {
    let mut hasher = Sha256::new();
    hasher.update(config_text.as_bytes());
    format!("{:x}", hasher.finalize())
}

pub fn meta_path_for(csv_path: &Path) -> PathBuf {
    csv_path.with_extension("meta.json")
}

/// Writes `<name>.csv` (one row per recorded draw) and `<name>.meta.json`.
pub fn write_chain_archive(chain: &Chain, meta: &ChainMeta, csv_path: &Path) -> Result<()> {
    if let Some(dir) = csv_path.parent() {
        fs::create_dir_all(dir)?;
    }
    let mut file = fs::File::create(csv_path)?;
    let mut header = vec!["iter".to_string()];
    header.extend(chain.names.iter().cloned());
    writeln!(file, "{}", header.join(","))?;
    for (it, row) in chain.iters.iter().zip(chain.rows.iter()) {
        let mut cells = Vec::with_capacity(row.len() + 1);
        cells.push(format!("{it}"));
        cells.extend(row.iter().map(|v| format!("{v}")));
        writeln!(file, "{}", cells.join(","))?;
    }
    file.flush()?;
    fs::write(meta_path_for(csv_path), serde_json::to_string_pretty(meta)?)?;
    Ok(())
}

/// Reads a chain archive back; the sidecar must sit next to the CSV.
pub fn read_chain_archive(csv_path: &Path) -> Result<(Chain, ChainMeta)> {
    let meta: ChainMeta = serde_json::from_str(
        &fs::read_to_string(meta_path_for(csv_path))
            .map_err(|e| ingestion(csv_path, format!("missing sidecar: {e}")))?,
    )?;
    let (header, rows) = read_table(csv_path)?;
    if header.first().map(String::as_str) != Some("iter") {
        return Err(ingestion(csv_path, "first column must be iter"));
    }
    let names: Vec<String> = header[1..].to_vec();
    let mut chain = Chain::new(names, meta.iterations, meta.burnin, meta.thin)?;
    for row in rows {
        chain.record(row[0] as u64, row[1..].to_vec());
    }
    chain.accept = meta.acceptance.clone();
    chain.loocv = meta.loocv.clone();
    chain.jitter_events = meta.jitter_events;
    Ok((chain, meta))
}

/// Per-column summaries plus run-level diagnostics, serialized as the
/// summary report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunSummary {
    pub recorded_draws: usize,
    pub columns: BTreeMap<String, Summary>,
    pub acceptance_rates: BTreeMap<String, f64>,
    #[serde(default)]
    pub loocv: Option<Summary>,
    pub jitter_events: u64,
}

pub fn summarize_run(chain: &Chain) -> Result<RunSummary> {
    let mut columns = BTreeMap::new();
    for (k, name) in chain.names.iter().enumerate() {
        let col: Vec<f64> = chain.rows.iter().map(|r| r[k]).collect();
        columns.insert(name.clone(), summarize_series(&col)?);
    }
    let acceptance_rates = chain
        .accept
        .iter()
        .map(|(k, &(acc, att))| (k.clone(), if att == 0 { 0.0 } else { acc as f64 / att as f64 }))
        .collect();
    let loocv = if chain.loocv.is_empty() {
        None
    } else {
        let rates: Vec<f64> = chain.loocv.iter().map(|&(_, r)| r).collect();
        Some(summarize_series(&rates)?)
    };
    Ok(RunSummary {
        recorded_draws: chain.len(),
        columns,
        acceptance_rates,
        loocv,
        jitter_events: chain.jitter_events,
    })
}

/// Gaussian kernel density on a regular grid, Silverman bandwidth.
pub fn kde_density(values: &[f64], grid_size: usize) -> Vec<(f64, f64)> {
    if values.is_empty() || grid_size == 0 {
        return Vec::new();
    }
    let n = values.len() as f64;
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mean = values.iter().sum::<f64>() / n;
    let sd = (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0).max(1.0)).sqrt();
    let iqr = quantile(&sorted, 0.75) - quantile(&sorted, 0.25);
    let spread = if iqr > 0.0 { sd.min(iqr / 1.34) } else { sd };
    let h = (0.9 * spread * n.powf(-0.2)).max(1e-9);
    let lo = sorted[0] - 3.0 * h;
    let hi = sorted[sorted.len() - 1] + 3.0 * h;
    let norm = 1.0 / (n * h * (2.0 * std::f64::consts::PI).sqrt());
    (0..grid_size)
        .map(|g| {
            let x = lo + (hi - lo) * g as f64 / (grid_size - 1).max(1) as f64;
            let f: f64 = values
                .iter()
                .map(|&v| {
                    let z = (x - v) / h;
                    (-0.5 * z * z).exp()
                })
                .sum::<f64>()
                * norm;
            (x, f)
        })
        .collect()
}

/// Empirical CDF table: (value, fraction at or below).
pub fn cdf_table(values: &[f64]) -> Vec<(f64, f64)> {
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = sorted.len() as f64;
    sorted
        .iter()
        .enumerate()
        .map(|(i, &v)| (v, (i + 1) as f64 / n))
        .collect()
}

/// Two-column CSV export for plot data.
pub fn write_xy_csv(path: &Path, names: (&str, &str), rows: &[(f64, f64)]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let mut file = fs::File::create(path)?;
    writeln!(file, "{},{}", names.0, names.1)?;
    for (a, b) in rows {
        writeln!(file, "{a},{b}")?;
    }
    Ok(())
}
