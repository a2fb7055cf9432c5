//! Command-line driver: toy-data generation, classifier / calibration /
//! coupled fits, B-matrix diagnostics, and chain summarization.
//!
//! Exit codes: 0 success, 2 validation error, 3 numerical failure.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use gpcal::calibration::{
    run_calibration_mcmc, CalKernels, CalibrationRunConfig, Theta,
};
use gpcal::classifier::{
    run_classifier_mcmc, ClassifierModel, ClassifierRunConfig, ClassifierState, LatentState,
    SliceMode,
};
use gpcal::config::AnalysisConfig;
use gpcal::coupled::{
    admissibility_summary, build_b_matrix, run_coupled_mcmc, AdmissibilityConfig, CoupledRunConfig,
    CoupledState, LatentDraw,
};
use gpcal::error::Error;
use gpcal::io::{
    cdf_table, config_hash, kde_density, load_calibration_data, load_failure_data,
    read_chain_archive, summarize_run, write_chain_archive, write_toy_files, write_xy_csv,
    ChainMeta,
};
use gpcal::mcmc::Chain;
use gpcal::priors::PriorSpec;
use gpcal::toy::{generate_toy, ToySpec};
use gpcal::Result;

#[derive(Parser)]
#[command(name = "gpcal", version, about = "GP calibration of computer models with failure-aware selection priors")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate the synthetic test problem (field, simulator, failures).
    GenerateToy {
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Optional config whose `toy` section overrides generator settings.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Fit the success/failure classifier.
    FitClassifier(FitArgs),
    /// Fit the calibration model, ignoring failures.
    FitCalibration(FitArgs),
    /// Fit the coupled model: calibration with the admissibility gate.
    FitCoupled(FitArgs),
    /// Build the admissibility prediction matrix from two fits.
    BMatrix {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Summaries and plot data for a chain archive.
    Summarize {
        #[arg(long)]
        chain: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Report the fraction of draws inside an interval "a,b" for
        /// theta columns.
        #[arg(long)]
        interval: Option<String>,
    },
}

#[derive(Args)]
struct FitArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    chains: Option<u64>,
    #[arg(long)]
    iterations: Option<u64>,
    #[arg(long)]
    burnin: Option<u64>,
    #[arg(long)]
    thin: Option<u64>,
    /// Slice mode: c1 or c2.
    #[arg(long)]
    mode: Option<String>,
    #[arg(long)]
    ptol: Option<f64>,
    #[arg(long = "xtilde-size")]
    xtilde_size: Option<usize>,
    #[arg(long = "warm-start")]
    warm_start: Vec<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::GenerateToy { seed, out, config } => generate_toy_cmd(seed, &out, config.as_deref()),
        Cmd::FitClassifier(args) => fit_classifier(&args),
        Cmd::FitCalibration(args) => fit_calibration(&args),
        Cmd::FitCoupled(args) => fit_coupled(&args),
        Cmd::BMatrix { config, out, seed } => b_matrix(&config, &out, seed),
        Cmd::Summarize { chain, out, interval } => summarize(&chain, &out, interval),
    }
}

fn load_config(args: &FitArgs) -> Result<AnalysisConfig> {
    let text = std::fs::read_to_string(&args.config)?;
    let mut cfg = AnalysisConfig::from_json(&text)?;
    if let Some(v) = args.seed {
        cfg.seed = v;
    }
    if let Some(v) = args.chains {
        cfg.chains = v;
    }
    if let Some(v) = args.iterations {
        cfg.iterations = v;
    }
    if let Some(v) = args.burnin {
        cfg.burnin = v;
    }
    if let Some(v) = args.thin {
        cfg.thin = v;
    }
    if let Some(m) = &args.mode {
        cfg.slice_mode = match m.as_str() {
            "c1" => SliceMode::C1,
            "c2" => SliceMode::C2,
            other => return Err(Error::Config(format!("unknown mode {other:?}; use c1 or c2"))),
        };
    }
    if let Some(v) = args.ptol {
        cfg.ptol = v;
    }
    if let Some(v) = args.xtilde_size {
        cfg.xtilde.size = v;
    }
    if !args.warm_start.is_empty() {
        cfg.warm_start = args.warm_start.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Hash of the effective configuration (after flag overrides), so equal
/// inputs yield byte-identical archives.
fn effective_hash(cfg: &AnalysisConfig) -> Result<String> {
    Ok(config_hash(&serde_json::to_string(cfg)?))
}

fn generate_toy_cmd(seed: u64, out: &Path, config: Option<&Path>) -> Result<()> {
    let spec = match config {
        Some(path) => {
            let text = std::fs::read_to_string(path)?;
            let cfg = AnalysisConfig::from_json(&text)?;
            cfg.toy.unwrap_or_default()
        }
        None => ToySpec::default(),
    };
    let toy = generate_toy(&spec, seed)?;
    let (field, sim, fails) = write_toy_files(&toy, out)?;
    println!("wrote {}", field.display());
    println!("wrote {}", sim.display());
    println!("wrote {}", fails.display());
    println!(
        "ground truth: theta = {}, all-success band = ({:.6}, {:.6})",
        toy.truth.theta_true, toy.truth.band.0, toy.truth.band.1
    );
    Ok(())
}

struct WarmStates {
    calibration: Option<gpcal::calibration::CalibrationState>,
    classifier: Option<ClassifierState>,
}

fn load_warm_states(paths: &[PathBuf]) -> Result<WarmStates> {
    let mut out = WarmStates { calibration: None, classifier: None };
    for p in paths {
        let meta: ChainMeta = serde_json::from_str(&std::fs::read_to_string(p)?)?;
        if let Some(c) = meta.calibration_state {
            out.calibration = Some(c);
        }
        if let Some(c) = meta.classifier_state {
            out.classifier = Some(c);
        }
    }
    Ok(out)
}

fn data_cfg<'c>(cfg: &'c AnalysisConfig, what: &str) -> Result<&'c gpcal::config::DataConfig> {
    cfg.data
        .as_ref()
        .ok_or_else(|| Error::Config(format!("{what} requires a data section in the config")))
}

fn require<'c>(p: &'c Option<PathBuf>, what: &str) -> Result<&'c Path> {
    p.as_deref()
        .ok_or_else(|| Error::Config(format!("data.{what} path missing from config")))
}

fn pooled_chain(chains: &[Chain]) -> Chain {
    let mut pooled = chains[0].clone();
    for c in &chains[1..] {
        pooled.rows.extend(c.rows.iter().cloned());
        pooled.iters.extend(c.iters.iter().cloned());
        pooled.loocv.extend(c.loocv.iter().cloned());
        pooled.jitter_events += c.jitter_events;
        for (k, &(acc, att)) in &c.accept {
            let e = pooled.accept.entry(k.clone()).or_insert((0, 0));
            e.0 += acc;
            e.1 += att;
        }
    }
    pooled
}

fn write_outputs(
    out: &Path,
    cfg: &AnalysisConfig,
    hash: &str,
    runs: Vec<(Chain, Option<gpcal::calibration::CalibrationState>, Option<ClassifierState>, Option<String>)>,
) -> Result<Option<String>> {
    std::fs::create_dir_all(out)?;
    let mut aborted_any = None;
    let mut chains = Vec::new();
    for (idx, (chain, cal_state, cls_state, aborted)) in runs.into_iter().enumerate() {
        let meta = ChainMeta {
            seed: cfg.seed,
            chain_index: idx as u64,
            config_hash: hash.to_string(),
            iterations: cfg.iterations,
            burnin: cfg.burnin,
            thin: cfg.thin,
            acceptance: chain.accept.clone(),
            jitter_events: chain.jitter_events,
            loocv: chain.loocv.clone(),
            calibration_state: cal_state,
            classifier_state: cls_state,
            aborted: aborted.clone(),
        };
        write_chain_archive(&chain, &meta, &out.join(format!("chain_{idx}.csv")))?;
        if aborted.is_some() {
            aborted_any = aborted;
        }
        chains.push(chain);
    }
    let pooled = pooled_chain(&chains);
    let summary = summarize_run(&pooled)?;
    std::fs::write(out.join("summary.json"), serde_json::to_string_pretty(&summary)?)?;
    Ok(aborted_any)
}

fn fit_classifier(args: &FitArgs) -> Result<()> {
    let cfg = load_config(args)?;
    let hash = effective_hash(&cfg)?;
    let data = data_cfg(&cfg, "fit-classifier")?;
    let t_priors = cfg.theta_priors_or_unit(cfg.d_t());
    let failures = load_failure_data(require(&data.failures, "failures")?, &data.x_ranges, &t_priors)?;
    let model = ClassifierModel::new(failures, cfg.slice_mode, cfg.kernels.zeta);
    let warm = load_warm_states(&cfg.warm_start)?;

    let run_cfg = ClassifierRunConfig {
        iterations: cfg.iterations,
        burnin: cfg.burnin,
        thin: cfg.thin,
        loocv_stride: Some(cfg.loocv_stride),
        record_zeta: true,
        freeze_after_burnin: cfg.freeze_after_burnin,
        init_proposal_sd: cfg.init_proposal_sd,
    };
    let runs = run_chains(cfg.chains, |idx| {
        let r = run_classifier_mcmc(&model, &run_cfg, warm.classifier.as_ref(), cfg.seed, idx)?;
        Ok((r.chain, None, Some(r.state), None))
    })?;
    let aborted = write_outputs(&args.out, &cfg, &hash, runs)?;
    finish(&args.out, aborted)
}

fn fit_calibration(args: &FitArgs) -> Result<()> {
    let cfg = load_config(args)?;
    let hash = effective_hash(&cfg)?;
    let data = data_cfg(&cfg, "fit-calibration")?;
    let t_priors = cfg.theta_priors_or_unit(cfg.d_t());
    let cal = load_calibration_data(
        require(&data.field, "field")?,
        require(&data.simulator, "simulator")?,
        &data.x_ranges,
        &t_priors,
    )?;
    let kernels = CalKernels { eta: cfg.kernels.eta, delta: cfg.kernels.delta };
    let warm = load_warm_states(&cfg.warm_start)?;
    let run_cfg = CalibrationRunConfig {
        iterations: cfg.iterations,
        burnin: cfg.burnin,
        thin: cfg.thin,
        freeze_after_burnin: cfg.freeze_after_burnin,
        init_proposal_sd: cfg.init_proposal_sd,
    };
    let runs = run_chains(cfg.chains, |idx| {
        let r = run_calibration_mcmc(&cal, kernels, &t_priors, &run_cfg, warm.calibration.as_ref(), cfg.seed, idx)?;
        Ok((r.chain, Some(r.state), None, None))
    })?;
    let aborted = write_outputs(&args.out, &cfg, &hash, runs)?;
    finish(&args.out, aborted)
}

fn fit_coupled(args: &FitArgs) -> Result<()> {
    let cfg = load_config(args)?;
    let hash = effective_hash(&cfg)?;
    let data = data_cfg(&cfg, "fit-coupled")?;
    let t_priors = cfg.theta_priors_or_unit(cfg.d_t());
    let cal = load_calibration_data(
        require(&data.field, "field")?,
        require(&data.simulator, "simulator")?,
        &data.x_ranges,
        &t_priors,
    )?;
    let failures = load_failure_data(require(&data.failures, "failures")?, &data.x_ranges, &t_priors)?;
    let model = ClassifierModel::new(failures, cfg.slice_mode, cfg.kernels.zeta);
    let kernels = CalKernels { eta: cfg.kernels.eta, delta: cfg.kernels.delta };
    let adm = match cfg.slice_mode {
        SliceMode::C1 => AdmissibilityConfig::c1(cfg.ptol)?,
        SliceMode::C2 => AdmissibilityConfig::c2(cfg.build_xtilde(cfg.d_x())?, None, cfg.ptol)?,
    };
    let warm = load_warm_states(&cfg.warm_start)?;
    let warm_state = match (&warm.calibration, &warm.classifier) {
        (None, None) => None,
        (c, k) => Some(CoupledState {
            calibration: c.clone().unwrap_or_else(|| gpcal::calibration::CalibrationState {
                theta_natural: Theta::from_unit(&t_priors, vec![0.5; t_priors.len()])
                    .map(|t| t.natural().to_vec())
                    .unwrap_or_default(),
                params: gpcal::calibration::EtaDeltaParams::init(cal.d_x(), cal.d_t()),
                etadelta_proposal: gpcal::mcmc::AdaptiveProposal::new(
                    3 + 2 * cal.d_x() + cal.d_t(),
                    cfg.init_proposal_sd,
                ),
                theta_proposal: gpcal::mcmc::AdaptiveProposal::new(cal.d_t(), cfg.init_proposal_sd),
            }),
            classifier: k.clone().unwrap_or_else(|| ClassifierState {
                latent: LatentState::init(model.data(), model.mode()),
                lambda_proposal: gpcal::mcmc::AdaptiveProposal::new(
                    model.active_dim(),
                    cfg.init_proposal_sd,
                ),
            }),
            completed_iterations: 0,
        }),
    };
    let run_cfg = CoupledRunConfig {
        iterations: cfg.iterations,
        burnin: cfg.burnin,
        thin: cfg.thin,
        loocv_stride: Some(cfg.loocv_stride),
        admissibility: Some(adm),
        freeze_after_burnin: cfg.freeze_after_burnin,
        init_proposal_sd: cfg.init_proposal_sd,
    };
    let runs = run_chains(cfg.chains, |idx| {
        let r = run_coupled_mcmc(&cal, &model, kernels, &t_priors, &run_cfg, warm_state.as_ref(), cfg.seed, idx)?;
        Ok((
            r.chain,
            Some(r.state.calibration.clone()),
            Some(r.state.classifier.clone()),
            r.aborted,
        ))
    })?;
    let aborted = write_outputs(&args.out, &cfg, &hash, runs)?;
    finish(&args.out, aborted)
}

type ChainOutput = (Chain, Option<gpcal::calibration::CalibrationState>, Option<ClassifierState>, Option<String>);

/// Runs the per-chain closure, concurrently when more than one chain is
/// requested. Chain substreams make the outputs independent of scheduling.
fn run_chains(
    n: u64,
    job: impl Fn(u64) -> Result<ChainOutput> + Sync,
) -> Result<Vec<ChainOutput>> {
    if n <= 1 {
        return Ok(vec![job(0)?]);
    }
    let job = &job;
    let results: Vec<Result<ChainOutput>> = std::thread::scope(|scope| {
        let handles: Vec<_> = (0..n).map(|idx| scope.spawn(move || job(idx))).collect();
        handles.into_iter().map(|h| h.join().expect("chain thread panicked")).collect()
    });
    results.into_iter().collect()
}

fn finish(out: &Path, aborted: Option<String>) -> Result<()> {
    match aborted {
        Some(msg) => {
            eprintln!("chain aborted: {msg}");
            eprintln!("partial output and resumable checkpoint written to {}", out.display());
            Err(Error::Factorization { attempted: vec![], context: msg })
        }
        None => {
            println!("wrote {}", out.join("summary.json").display());
            Ok(())
        }
    }
}

fn b_matrix(config: &Path, out: &Path, seed_override: Option<u64>) -> Result<()> {
    let text = std::fs::read_to_string(config)?;
    let mut cfg = AnalysisConfig::from_json(&text)?;
    if let Some(s) = seed_override {
        cfg.seed = s;
    }
    let bm = cfg
        .bmatrix
        .clone()
        .ok_or_else(|| Error::Config("b-matrix requires a bmatrix section".into()))?;
    let data = data_cfg(&cfg, "b-matrix")?;
    let t_priors = cfg.theta_priors_or_unit(cfg.d_t());
    let failures = load_failure_data(require(&data.failures, "failures")?, &data.x_ranges, &t_priors)?;
    let m_tot = failures.total();
    let model = ClassifierModel::new(failures, cfg.slice_mode, cfg.kernels.zeta);

    let (cchain, _) = read_chain_archive(&bm.classifier_chain)?;
    let latent_draws = extract_latent_draws(&cchain, model.active_dim(), m_tot, bm.latent_draws)?;
    let (tchain, _) = read_chain_archive(&bm.calibration_chain)?;
    let theta_draws = extract_theta_draws(&tchain, &t_priors, bm.theta_draws)?;

    let adm = match cfg.slice_mode {
        SliceMode::C1 => AdmissibilityConfig::c1(cfg.ptol)?,
        SliceMode::C2 => AdmissibilityConfig::c2(cfg.build_xtilde(cfg.d_x())?, None, cfg.ptol)?,
    };
    let b = build_b_matrix(&model, &latent_draws, &theta_draws, &adm, cfg.seed)?;
    let summary = admissibility_summary(&b, bm.low_cut, bm.high_cut);

    std::fs::create_dir_all(out)?;
    // The binary matrix itself, row per latent draw.
    let mut text = String::new();
    for i in 0..b.n_rows() {
        let row: Vec<String> = (0..b.n_cols()).map(|j| b.entry(i, j).to_string()).collect();
        text.push_str(&row.join(","));
        text.push('\n');
    }
    std::fs::write(out.join("bmatrix.csv"), text)?;
    write_xy_csv(
        out.join("row_means.csv").as_path(),
        ("row", "pi_estimate"),
        &summary.row_means.iter().enumerate().map(|(i, &v)| (i as f64, v)).collect::<Vec<_>>(),
    )?;
    write_xy_csv(
        out.join("col_means.csv").as_path(),
        ("draw", "admissibility_weight"),
        &summary.col_means.iter().enumerate().map(|(j, &v)| (j as f64, v)).collect::<Vec<_>>(),
    )?;
    std::fs::write(out.join("bmatrix_summary.json"), serde_json::to_string_pretty(&summary)?)?;
    println!("wrote {}", out.join("bmatrix_summary.json").display());
    Ok(())
}

fn evenly_spaced(total: usize, want: usize) -> Vec<usize> {
    if total <= want {
        return (0..total).collect();
    }
    (0..want).map(|k| k * total / want).collect()
}

fn extract_latent_draws(chain: &Chain, active_dim: usize, m_tot: usize, want: usize) -> Result<Vec<LatentDraw>> {
    let mu_idx = chain
        .column_index("mu_zeta")
        .ok_or_else(|| Error::Config("classifier chain lacks mu_zeta".into()))?;
    let lambda_idx: Vec<usize> = (1..=active_dim)
        .map(|k| {
            chain
                .column_index(&format!("lambda_zeta_{k}"))
                .ok_or_else(|| Error::Config(format!("classifier chain lacks lambda_zeta_{k}")))
        })
        .collect::<Result<Vec<_>>>()?;
    let zeta_idx: Vec<usize> = (1..=m_tot)
        .map(|k| {
            chain
                .column_index(&format!("zeta_{k}"))
                .ok_or_else(|| Error::Config(format!("classifier chain lacks zeta_{k}; rerun fit-classifier")))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(evenly_spaced(chain.len(), want)
        .into_iter()
        .map(|r| {
            let row = &chain.rows[r];
            LatentDraw {
                state: LatentState {
                    zeta: zeta_idx.iter().map(|&c| row[c]).collect(),
                    mu_zeta: row[mu_idx],
                    lambda_zeta: lambda_idx.iter().map(|&c| row[c]).collect(),
                },
            }
        })
        .collect())
}

fn extract_theta_draws(chain: &Chain, priors: &[PriorSpec], want: usize) -> Result<Vec<Theta>> {
    let idx: Vec<usize> = (1..=priors.len())
        .map(|k| {
            chain
                .column_index(&format!("theta_{k}"))
                .ok_or_else(|| Error::Config(format!("calibration chain lacks theta_{k}")))
        })
        .collect::<Result<Vec<_>>>()?;
    evenly_spaced(chain.len(), want)
        .into_iter()
        .map(|r| {
            let nat: Vec<f64> = idx.iter().map(|&c| chain.rows[r][c]).collect();
            Theta::from_natural(priors, nat)
        })
        .collect()
}

fn summarize(chain_path: &Path, out: &Path, interval: Option<String>) -> Result<()> {
    let interval = interval
        .map(|text| -> Result<(f64, f64)> {
            let parts: Vec<&str> = text.split(',').collect();
            let bad = || Error::Config(format!("interval must be \"a,b\", got {text:?}"));
            if parts.len() != 2 {
                return Err(bad());
            }
            let a: f64 = parts[0].trim().parse().map_err(|_| bad())?;
            let b: f64 = parts[1].trim().parse().map_err(|_| bad())?;
            Ok((a, b))
        })
        .transpose()?;
    let (chain, _meta) = read_chain_archive(chain_path)?;
    std::fs::create_dir_all(out)?;
    let summary = summarize_run(&chain)?;

    let theta_cols: Vec<String> = chain
        .names
        .iter()
        .filter(|n| n.starts_with("theta_"))
        .cloned()
        .collect();
    let mut interval_mass: BTreeMap<String, f64> = BTreeMap::new();
    for name in &theta_cols {
        let values = chain.column(name).expect("known column");
        write_xy_csv(
            out.join(format!("density_{name}.csv")).as_path(),
            (name, "density"),
            &kde_density(&values, 256),
        )?;
        write_xy_csv(
            out.join(format!("cdf_{name}.csv")).as_path(),
            (name, "cdf"),
            &cdf_table(&values),
        )?;
        if let Some((a, b)) = interval {
            let inside = values.iter().filter(|&&v| v > a && v < b).count() as f64
                / values.len().max(1) as f64;
            interval_mass.insert(name.clone(), inside);
        }
    }

    let mut doc = serde_json::to_value(&summary)?;
    if !interval_mass.is_empty() {
        doc["interval_mass"] = serde_json::to_value(&interval_mass)?;
    }
    std::fs::write(out.join("summary.json"), serde_json::to_string_pretty(&doc)?)?;
    println!("wrote {}", out.join("summary.json").display());
    Ok(())
}
