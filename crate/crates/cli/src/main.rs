use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use retest_core::bayes::{fit_mcmc, posterior_summary, McmcConfig, ModelId, ModelSpec, QuadratureMode, StratumData};
use retest_core::decision::{decide, misclassification_table, DecisionConfig, DecisionRequest, FittedModel, Strategy};
use retest_core::freq::{bootstrap, estimate, naive_bias_curve, recheck_study, Method, StudyDesign};
use retest_core::io::{ingest, load_params, write_csv, IngestOptions, RunArtifact};
use retest_core::select::{compare_models, run_cv, ClppdConfig, CvConfig, InnerIntegral};
use retest_core::simulate::{reference_dgp, simulate_dgp, simulate_pairs, GeneratorSpec};
use retest_core::{MeasurementDensity, Result, RetestPolicy};
use serde::Serialize;

#[derive(Parser)]
#[command(name = "retest", version, about = "Measurement-error analysis for conditionally repeated measurements")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a dataset and write it as CSV.
    Simulate(SimulateArgs),
    /// Frequentist variance decomposition, optionally with a bootstrap.
    FitFreq(FitFreqArgs),
    /// Bayesian fit of one of models a–d.
    FitBayes(FitBayesArgs),
    /// K-fold cross-validated cLPPD across models.
    Cv(CvArgs),
    /// Eligibility probability for one person.
    Decide(DecideArgs),
    /// Naive-estimator bias against its closed form across cutoffs.
    BiasCurve(BiasCurveArgs),
    /// Estimator bias under probabilistic retesting.
    RecheckStudy(RecheckArgs),
    /// Misclassification rates of a screening strategy.
    Misclass(MisclassArgs),
    /// Serve POST /decide and GET /model.
    Serve(ServeArgs),
}

#[derive(Args)]
struct Output {
    /// Write the JSON artifact here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct DataArgs {
    /// CSV with header id,stratum,x1,x2,cutoff.
    #[arg(long)]
    data: PathBuf,
    /// Keep rows retested although x1 >= cutoff.
    #[arg(long)]
    retain_above_cutoff: bool,
}

impl DataArgs {
    fn load(&self) -> Result<Vec<retest_core::MeasurementPair>> {
        let d = ingest(
            &self.data,
            &IngestOptions {
                retain_retests_above_cutoff: self.retain_above_cutoff,
                strata: None,
            },
        )?;
        if d.excluded_retests_above_cutoff > 0 {
            eprintln!(
                "excluded {} rows retested with x1 >= cutoff",
                d.excluded_retests_above_cutoff
            );
        }
        Ok(d.records)
    }
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum ErrorFamily {
    Normal,
    T,
}

#[derive(Args, Serialize)]
struct SimulateArgs {
    #[arg(long, default_value_t = 10_000)]
    n: usize,
    #[arg(long, default_value_t = 15.0)]
    mu: f64,
    #[arg(long, default_value_t = 1.0)]
    sigma_pop: f64,
    #[arg(long, default_value_t = 0.8)]
    sigma_meas: f64,
    #[arg(long, value_enum, default_value_t = ErrorFamily::Normal)]
    error: ErrorFamily,
    /// Degrees of freedom for t errors; sigma-meas is then the scale.
    #[arg(long, default_value_t = 5.0)]
    df: f64,
    #[arg(long, default_value_t = 13.0)]
    cutoff: f64,
    /// Recheck rate r; 0 retests every x1 below the cutoff.
    #[arg(long, default_value_t = 0.0)]
    rate: f64,
    #[arg(long, default_value = "all")]
    stratum: String,
    /// Use the two-stratum reference process of model a–d instead; n is then per stratum.
    #[arg(long, value_parser = parse_model)]
    dgp: Option<ModelId>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Write the CSV here instead of stdout.
    #[arg(long)]
    #[serde(skip)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct FitFreqArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, default_value = "mle")]
    method: Method,
    /// Bootstrap replicates; 0 skips the bootstrap.
    #[arg(long, default_value_t = 0)]
    bootstrap: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[command(flatten)]
    output: Output,
}

#[derive(Args, Serialize)]
struct McmcArgs {
    #[arg(long, default_value_t = 4)]
    chains: usize,
    #[arg(long, default_value_t = 1000)]
    warmup: usize,
    #[arg(long, default_value_t = 1000)]
    iters: usize,
    #[arg(long, default_value_t = 1)]
    thin: usize,
    /// Gauss–Hermite nodes for non-closed-form marginals.
    #[arg(long, default_value_t = 32)]
    quad_nodes: usize,
    /// Force adaptive Gauss–Hermite for every marginal.
    #[arg(long)]
    quadrature_only: bool,
}

impl McmcArgs {
    fn config(&self, seed: u64) -> McmcConfig {
        McmcConfig {
            chains: self.chains,
            warmup: self.warmup,
            iters: self.iters,
            thin: self.thin,
            seed,
            quad_nodes: self.quad_nodes,
            quad_mode: if self.quadrature_only {
                QuadratureMode::Quadrature
            } else {
                QuadratureMode::Auto
            },
        }
    }
}

#[derive(Args)]
struct FitBayesArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, value_parser = parse_model)]
    model: ModelId,
    #[command(flatten)]
    mcmc: McmcArgs,
    /// Posterior draws kept in the parameter block.
    #[arg(long, default_value_t = 500)]
    max_draws: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[command(flatten)]
    output: Output,
}

#[derive(Args)]
struct CvArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, default_value_t = 5)]
    k: usize,
    #[arg(long, value_delimiter = ',', value_parser = parse_model, default_value = "a,b,c,d")]
    models: Vec<ModelId>,
    /// Model the paired differences are taken against.
    #[arg(long, value_parser = parse_model, default_value = "d")]
    reference: ModelId,
    #[arg(long, default_value_t = 2)]
    chains: usize,
    #[arg(long, default_value_t = 500)]
    warmup: usize,
    #[arg(long, default_value_t = 500)]
    iters: usize,
    #[arg(long, default_value_t = 1)]
    thin: usize,
    /// Posterior draws S per fold.
    #[arg(long, default_value_t = 500)]
    draws: usize,
    /// Latent Monte Carlo draws R per record; quadrature when absent.
    #[arg(long)]
    mc: Option<usize>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[command(flatten)]
    output: Output,
}

#[derive(Args)]
struct DecideArgs {
    #[arg(long)]
    x1: f64,
    #[arg(long)]
    x2: Option<f64>,
    /// Defaults to the stratum's fitted cutoff.
    #[arg(long)]
    cutoff: Option<f64>,
    #[arg(long, default_value = "M")]
    stratum: String,
    /// Parameter file or fit-bayes artifact; built-in reference values when absent.
    #[arg(long)]
    params: Option<PathBuf>,
    /// Average over posterior draws in the parameter file.
    #[arg(long)]
    use_draws: bool,
    #[arg(long, default_value_t = 2048)]
    grid_points: usize,
    #[arg(long, default_value_t = 0.2)]
    band_low: f64,
    #[arg(long, default_value_t = 0.8)]
    band_high: f64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[command(flatten)]
    output: Output,
}

#[derive(Args, Serialize)]
struct DesignArgs {
    #[arg(long, default_value_t = 15.0)]
    mu: f64,
    #[arg(long, default_value_t = 1.0)]
    sigma_pop: f64,
    #[arg(long, default_value_t = 0.8)]
    sigma_meas: f64,
    #[arg(long, default_value_t = 10_000)]
    n: usize,
    #[arg(long, default_value_t = 100)]
    replicates: usize,
}

impl DesignArgs {
    fn design(&self, seed: u64) -> StudyDesign {
        StudyDesign {
            mu: self.mu,
            sigma_pop: self.sigma_pop,
            sigma_meas: self.sigma_meas,
            n: self.n,
            replicates: self.replicates,
            seed,
        }
    }
}

#[derive(Args)]
struct BiasCurveArgs {
    #[command(flatten)]
    design: DesignArgs,
    #[arg(long, value_delimiter = ',', default_value = "12,12.5,13,13.5,14,14.5,15,15.5,16")]
    cutoffs: Vec<f64>,
    #[arg(long, default_value_t = 0.95)]
    level: f64,
    #[arg(long, default_value_t = 1000)]
    boot: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[command(flatten)]
    output: Output,
}

#[derive(Args)]
struct RecheckArgs {
    #[command(flatten)]
    design: DesignArgs,
    #[arg(long, default_value_t = 13.0)]
    cutoff: f64,
    #[arg(long, value_delimiter = ',', default_value = "0,1,2,4")]
    rates: Vec<f64>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[command(flatten)]
    output: Output,
}

#[derive(Args)]
struct MisclassArgs {
    #[arg(long, default_value = "single")]
    strategy: Strategy,
    #[arg(long)]
    params: Option<PathBuf>,
    /// Recheck rate below the cutoff for the repeat strategy; 0 always retests.
    #[arg(long, default_value_t = 0.0)]
    rate: f64,
    #[arg(long, default_value_t = 1_000_000)]
    n_sim: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[command(flatten)]
    output: Output,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long)]
    params: Option<PathBuf>,
    #[arg(long, default_value_t = 8080)]
    port: u16,
    #[arg(long)]
    use_draws: bool,
}

fn parse_model(s: &str) -> std::result::Result<ModelId, String> {
    s.parse::<ModelId>().map_err(|e| e.to_string())
}

fn params(path: &Option<PathBuf>) -> Result<FittedModel> {
    match path {
        Some(p) => load_params(p),
        None => Ok(FittedModel::reference()),
    }
}

fn emit<S: Serialize, R: Serialize>(command: &str, spec: &S, seed: u64, results: &R, start: Instant, out: &Output) -> Result<()> {
    let artifact = RunArtifact::new(command, spec, seed, results, start.elapsed().as_secs_f64())?;
    match &out.out {
        Some(p) => artifact.write(BufWriter::new(File::create(p)?)),
        None => artifact.write(io::stdout().lock()),
    }
}

fn by_stratum(records: &[retest_core::MeasurementPair]) -> Result<Vec<StratumData>> {
    StratumData::group(records)
}

fn simulate(a: &SimulateArgs) -> Result<()> {
    let records = match a.dgp {
        Some(model) => simulate_dgp(model, &reference_dgp(model), a.n, a.seed)?,
        None => {
            let measurement = match a.error {
                ErrorFamily::Normal => MeasurementDensity::normal(0.0, a.sigma_meas)?,
                ErrorFamily::T => MeasurementDensity::student_t(0.0, a.sigma_meas, a.df)?,
            };
            simulate_pairs(&GeneratorSpec {
                stratum: a.stratum.clone(),
                population: MeasurementDensity::normal(a.mu, a.sigma_pop)?,
                measurement: Some(measurement),
                policy: RetestPolicy::new(a.cutoff, a.rate)?,
                n: a.n,
                seed: a.seed,
                first_id: 0,
            })?
        }
    };
    match &a.out {
        Some(p) => write_csv(BufWriter::new(File::create(p)?), &records),
        None => write_csv(io::stdout().lock(), &records),
    }
}

#[derive(Serialize)]
struct FreqSpec<'a> {
    data: &'a Path,
    method: Method,
    bootstrap: usize,
}

fn fit_freq(a: &FitFreqArgs) -> Result<()> {
    let start = Instant::now();
    let records = a.data.load()?;
    let results = by_stratum(&records)?
        .iter()
        .map(|s| {
            let est = estimate(&s.records, a.method, Some(s.cutoff))?;
            let boot = (a.bootstrap > 0)
                .then(|| bootstrap(&s.records, a.method, Some(s.cutoff), a.bootstrap, a.seed))
                .transpose()?;
            Ok(serde_json::json!({
                "stratum": s.stratum,
                "cutoff": s.cutoff,
                "estimate": est,
                "bootstrap": boot,
            }))
        })
        .collect::<Result<Vec<_>>>()?;
    let spec = FreqSpec {
        data: &a.data.data,
        method: a.method,
        bootstrap: a.bootstrap,
    };
    emit("fit-freq", &spec, a.seed, &results, start, &a.output)
}

fn fit_bayes(a: &FitBayesArgs) -> Result<()> {
    let start = Instant::now();
    let records = a.data.load()?;
    let config = a.mcmc.config(a.seed);
    let draws = fit_mcmc(&ModelSpec::new(a.model), &by_stratum(&records)?, &config)?;
    if !draws.converged {
        eprintln!("warning: max rhat {:.3} exceeds threshold", draws.max_rhat());
    }
    let results = serde_json::json!({
        "summary": posterior_summary(&draws),
        "fitted": FittedModel::from_posterior(&draws, a.max_draws),
    });
    let spec = serde_json::json!({
        "data": a.data.data,
        "model": a.model,
        "mcmc": config,
        "max_draws": a.max_draws,
    });
    emit("fit-bayes", &spec, a.seed, &results, start, &a.output)
}

fn cv(a: &CvArgs) -> Result<()> {
    let start = Instant::now();
    let records = a.data.load()?;
    let config = CvConfig {
        k: a.k,
        fold_seed: a.seed,
        models: a.models.clone(),
        mcmc: McmcConfig {
            chains: a.chains,
            warmup: a.warmup,
            iters: a.iters,
            thin: a.thin,
            seed: a.seed,
            ..McmcConfig::default()
        },
        clppd: ClppdConfig {
            draws: a.draws,
            inner: a.mc.map_or(InnerIntegral::Quadrature, |r| InnerIntegral::MonteCarlo { r }),
            seed: a.seed,
            ..ClppdConfig::default()
        },
    };
    let report = run_cv(&records, &config)?;
    let differences = if a.models.contains(&a.reference) {
        compare_models(&report, a.reference)?
    } else {
        Vec::new()
    };
    let results = serde_json::json!({ "report": report, "differences": differences });
    let spec = serde_json::json!({ "data": a.data.data, "cv": config, "reference": a.reference });
    emit("cv", &spec, a.seed, &results, start, &a.output)
}

fn run_decide(a: &DecideArgs) -> Result<()> {
    let start = Instant::now();
    let fitted = params(&a.params)?;
    let request = DecisionRequest {
        stratum: a.stratum.clone(),
        x1: a.x1,
        x2: a.x2,
        cutoff: a.cutoff,
    };
    let config = DecisionConfig {
        grid_points: a.grid_points,
        band_low: a.band_low,
        band_high: a.band_high,
    };
    let report = decide(&fitted, &request, a.use_draws, &config)?;
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    let spec = serde_json::json!({ "request": request, "params": a.params, "use_draws": a.use_draws, "config": config });
    emit("decide", &spec, a.seed, &report, start, &a.output)
}

fn bias_curve(a: &BiasCurveArgs) -> Result<()> {
    let start = Instant::now();
    let points = naive_bias_curve(&a.design.design(a.seed), &a.cutoffs, a.level, a.boot)?;
    let spec = serde_json::json!({ "design": a.design, "cutoffs": a.cutoffs, "level": a.level, "boot": a.boot });
    emit("bias-curve", &spec, a.seed, &points, start, &a.output)
}

fn recheck(a: &RecheckArgs) -> Result<()> {
    let start = Instant::now();
    let rows = recheck_study(&a.design.design(a.seed), a.cutoff, &a.rates)?;
    let spec = serde_json::json!({ "design": a.design, "cutoff": a.cutoff, "rates": a.rates });
    emit("recheck-study", &spec, a.seed, &rows, start, &a.output)
}

fn misclass(a: &MisclassArgs) -> Result<()> {
    let start = Instant::now();
    let fitted = params(&a.params)?;
    let rows = misclassification_table(&fitted, a.strategy, a.rate, a.n_sim, a.seed)?;
    let spec = serde_json::json!({ "strategy": a.strategy, "params": a.params, "rate": a.rate, "n_sim": a.n_sim });
    emit("misclass", &spec, a.seed, &rows, start, &a.output)
}

fn serve(a: &ServeArgs) -> Result<()> {
    let state = retest_cli::AppState::new(params(&a.params)?, a.use_draws, DecisionConfig::default())?;
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(retest_cli::serve(state, a.port))?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Simulate(a) => simulate(a),
        Command::FitFreq(a) => fit_freq(a),
        Command::FitBayes(a) => fit_bayes(a),
        Command::Cv(a) => cv(a),
        Command::Decide(a) => run_decide(a),
        Command::BiasCurve(a) => bias_curve(a),
        Command::RecheckStudy(a) => recheck(a),
        Command::Misclass(a) => misclass(a),
        Command::Serve(a) => serve(a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let _ = writeln!(io::stderr(), "error: {e}");
            ExitCode::FAILURE
        }
    }
}
