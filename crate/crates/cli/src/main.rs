//! Command-line front end: validate model files, identify interventional
//! queries, simulate trajectories, and estimate parameters from data.
//!
//! Exit codes: 0 success, 1 validation failure, 2 query not identifiable,
//! 3 runtime error.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use pdsem_core::estimate::{
    collect_stats, fit_mle, loglik_report, write_fit_report_csv, SmoothingConfig,
};
use pdsem_core::identify::IdentifyResult;
use pdsem_core::model_file::{load_spec, parse_trajectories_csv, save_spec, ModelFileError};
use pdsem_core::pdsem::{
    pdsem_identify, validate_spec, GraphKey, Intervention, ParamSet, PdsemSpec, StateId,
};
use pdsem_core::simulate::{
    sample_batch, sample_lg_batch, summarize, text_histogram, write_histogram_csv,
    write_lg_trajectories_csv, write_summary_csv, write_trajectories_csv, LgIntervention,
    SimConfig, TrajectorySummary,
};
use pdsem_core::{CausalQuery, VertexId};

const EXIT_INVALID: u8 = 1;
const EXIT_NOT_IDENTIFIED: u8 = 2;
const EXIT_RUNTIME: u8 = 3;

#[derive(Parser)]
#[command(
    name = "pdsem",
    version,
    about = "Causal inference for path-dependent structural equation models"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check a model file against the schema and all structural rules.
    Validate { path: PathBuf },
    /// Print per-graph identifying functionals for an intervention.
    Identify(IdentifyArgs),
    /// Sample trajectories and write CSV reports.
    Simulate(SimulateArgs),
    /// Fit CPT parameters from trajectory data by smoothed maximum likelihood.
    Estimate(EstimateArgs),
}

#[derive(Args)]
struct IdentifyArgs {
    path: PathBuf,
    /// Treatment assignment, `state.var=value`; value may be a label.
    /// Repeats; propagates to every graph entering the state.
    #[arg(long = "treat")]
    treat: Vec<String>,
    /// Restrict the printed functionals to these outcomes, `state.var`.
    #[arg(long = "outcome")]
    outcome: Vec<String>,
}

#[derive(Args)]
struct SimulateArgs {
    path: PathBuf,
    /// Intervention, `state.var=value`. For linear-Gaussian models the value
    /// is a real number.
    #[arg(long = "intervene")]
    intervene: Vec<String>,
    #[arg(long, default_value_t = 1000)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long = "max-steps", default_value_t = 200)]
    max_steps: usize,
    /// Output directory for trajectories.csv, summary.csv, histogram.csv.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EstimateArgs {
    /// Model structure (parameters, if present, are ignored).
    structure: PathBuf,
    /// Trajectory data in the simulator's CSV layout.
    data: PathBuf,
    /// Additive-smoothing pseudo-count.
    #[arg(long, default_value_t = 1.0)]
    alpha: f64,
    /// Output directory for fitted.json and report.csv.
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Validate { path } => cmd_validate(&path),
        Command::Identify(args) => cmd_identify(&args),
        Command::Simulate(args) => cmd_simulate(&args),
        Command::Estimate(args) => cmd_estimate(&args),
    };
    match outcome {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_RUNTIME)
        }
    }
}

/// Load a spec, mapping schema problems to diagnostics on stderr.
fn load_checked(path: &PathBuf) -> Result<Result<PdsemSpec, u8>> {
    match load_spec(path) {
        Ok(spec) => {
            let diags = validate_spec(&spec);
            if diags.is_empty() {
                Ok(Ok(spec))
            } else {
                for d in diags {
                    eprintln!("{d}");
                }
                Ok(Err(EXIT_INVALID))
            }
        }
        Err(ModelFileError::Parse(e)) => {
            eprintln!("SCHEMA parse error: {e}");
            Ok(Err(EXIT_INVALID))
        }
        Err(ModelFileError::Schema(diags)) => {
            for d in diags {
                eprintln!("{d}");
            }
            Ok(Err(EXIT_INVALID))
        }
        Err(e) => Err(e.into()),
    }
}

fn cmd_validate(path: &PathBuf) -> Result<u8> {
    match load_checked(path)? {
        Ok(_) => {
            println!("valid");
            Ok(0)
        }
        Err(code) => Ok(code),
    }
}

/// `state.var=value` -> (state, var, value)
fn parse_assignment(raw: &str) -> Result<(StateId, VertexId, String)> {
    let (target, value) = raw
        .split_once('=')
        .ok_or_else(|| anyhow!("`{raw}`: expected state.var=value"))?;
    let (state, var) = target
        .split_once('.')
        .ok_or_else(|| anyhow!("`{raw}`: expected state.var=value"))?;
    Ok((StateId::new(state), VertexId::from(var), value.to_string()))
}

fn parse_intervention(spec: &PdsemSpec, raw: &[String]) -> Result<Intervention> {
    let mut iv = Intervention::empty();
    for item in raw {
        let (state, var, value) = parse_assignment(item)?;
        let value = spec
            .resolve_value(&state, &var, &value)
            .with_context(|| format!("in `{item}`"))?;
        iv.by_state.entry(state).or_default().insert(var, value);
    }
    Ok(iv)
}

fn parse_lg_intervention(raw: &[String]) -> Result<LgIntervention> {
    let mut iv = LgIntervention::default();
    for item in raw {
        let (state, var, value) = parse_assignment(item)?;
        let value: f64 = value
            .parse()
            .map_err(|_| anyhow!("`{item}`: linear-Gaussian value must be numeric"))?;
        iv.by_state.entry(state).or_default().insert(var, value);
    }
    Ok(iv)
}

fn cmd_identify(args: &IdentifyArgs) -> Result<u8> {
    let spec = match load_checked(&args.path)? {
        Ok(spec) => spec,
        Err(code) => return Ok(code),
    };
    let iv = parse_intervention(&spec, &args.treat)?;
    // optional restriction of the reported outcomes, per state
    let mut outcomes: BTreeMap<StateId, Vec<VertexId>> = BTreeMap::new();
    for item in &args.outcome {
        let (state, var) = item
            .split_once('.')
            .ok_or_else(|| anyhow!("`{item}`: expected state.var"))?;
        let state = StateId::new(state);
        let var = VertexId::from(var);
        spec.var_decl(&state, &var)
            .map_err(|e| anyhow!("unknown outcome `{item}`: {e}"))?;
        outcomes.entry(state).or_default().push(var);
    }

    let identification = pdsem_identify(&spec, &iv)?;
    let mut keys = vec![GraphKey::Initial];
    keys.extend(spec.transition_graphs.keys().cloned().map(GraphKey::Transition));
    let mut all_identified = true;
    for key in keys {
        let target = spec.target_state(&key);
        let result = if let Some(named) = outcomes.get(&target) {
            // marginal query onto the named outcomes of this graph
            let g = spec.graph(&key).latent_project();
            let treated = iv.by_state.get(&target).cloned().unwrap_or_default();
            let query = CausalQuery::new(treated, named.iter().cloned());
            pdsem_core::identify::id_admg(&g, &query)?
        } else if outcomes.is_empty() {
            identification.result_for(&key).clone()
        } else {
            continue;
        };
        match &result {
            IdentifyResult::Identified(expr) => println!("{key}: {expr}"),
            IdentifyResult::NotIdentified { witness } => {
                let w: Vec<String> = witness.iter().map(|v| v.to_string()).collect();
                println!("{key}: not identifiable; witness district {{{}}}", w.join(","));
                all_identified = false;
            }
        }
    }
    Ok(if all_identified { 0 } else { EXIT_NOT_IDENTIFIED })
}

fn print_summary(summary: &TrajectorySummary) {
    println!(
        "n={} mean={:.4} std={:.4} q05={} q50={} q95={} censored={}",
        summary.count, summary.mean, summary.std, summary.q05, summary.q50, summary.q95,
        summary.censored
    );
}

fn cmd_simulate(args: &SimulateArgs) -> Result<u8> {
    let spec = match load_checked(&args.path)? {
        Ok(spec) => spec,
        Err(code) => return Ok(code),
    };
    std::fs::create_dir_all(&args.out)
        .with_context(|| format!("creating {}", args.out.display()))?;
    let cfg = SimConfig::new(args.seed, args.n, args.max_steps);
    let out_file = |name: &str| -> Result<BufWriter<File>> {
        let path = args.out.join(name);
        Ok(BufWriter::new(
            File::create(&path).with_context(|| format!("creating {}", path.display()))?,
        ))
    };
    let summary = match &spec.params {
        ParamSet::LinearGaussian { .. } => {
            let iv = parse_lg_intervention(&args.intervene)?;
            let batch = sample_lg_batch(&spec, &iv, &cfg)?;
            let mut w = out_file("trajectories.csv")?;
            write_lg_trajectories_csv(&mut w, &batch, cfg.seed)?;
            w.flush()?;
            summarize(&batch, 1)?
        }
        ParamSet::Cpt { .. } => {
            let iv = parse_intervention(&spec, &args.intervene)?;
            let batch = sample_batch(&spec, &iv, &cfg)?;
            let mut w = out_file("trajectories.csv")?;
            write_trajectories_csv(&mut w, &batch, cfg.seed)?;
            w.flush()?;
            summarize(&batch, 1)?
        }
        ParamSet::None => bail!("model file declares no parameters; nothing to simulate"),
    };
    let mut w = out_file("summary.csv")?;
    write_summary_csv(&mut w, &summary, cfg.seed)?;
    w.flush()?;
    let mut w = out_file("histogram.csv")?;
    write_histogram_csv(&mut w, &summary, cfg.seed)?;
    w.flush()?;
    print_summary(&summary);
    print!("{}", text_histogram(&summary));
    Ok(0)
}

fn cmd_estimate(args: &EstimateArgs) -> Result<u8> {
    let structure = match load_checked(&args.structure)? {
        Ok(spec) => spec,
        Err(code) => return Ok(code),
    };
    let data = {
        let file =
            File::open(&args.data).with_context(|| format!("opening {}", args.data.display()))?;
        parse_trajectories_csv(BufReader::new(file), &structure)?
    };
    std::fs::create_dir_all(&args.out)
        .with_context(|| format!("creating {}", args.out.display()))?;
    let stats = collect_stats(&structure, &data)?;
    let (fitted, report) = fit_mle(&structure, &stats, &SmoothingConfig::new(args.alpha))?;
    save_spec(args.out.join("fitted.json"), "fitted", &fitted)?;
    let mut w = BufWriter::new(File::create(args.out.join("report.csv"))?);
    write_fit_report_csv(&mut w, &report, args.alpha)?;
    w.flush()?;
    let loglik = loglik_report(&fitted, &data)?;
    println!("loglik={loglik:.6}");
    Ok(0)
}
