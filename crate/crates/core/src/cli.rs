//! Command-line front end.
//!
//! Exit codes: 0 on success, 2 for usage and validation errors, 1 for I/O
//! and other internal failures. Reports go to standard output.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::baseline::{self, DEFAULT_BINS, DEFAULT_TAU};
use crate::decomposition::{decompose_batch_with, ApproxForm, EpsilonPolicy};
use crate::error::{CovarError, Result};
use crate::io::{self, MatrixFormat};
use crate::pcos::{self, EmbeddingKind, GaussianExponent, PcosConfig, DEFAULT_LAMBDA};
use crate::report::{self, PcosSummary, RunReport, SampleRecord};
use crate::simulator::{
    self, ErrorProfile, ResidualMode, SelectionPolicy, SyntheticBatch, SyntheticConfig,
};
use crate::stats::{compute_stats, ProbabilityBatch};

#[derive(Debug, Parser)]
#[command(name = "covar", version, about = "Confidence-variance analysis of classifier outputs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Per-sample and batch cross-entropy decomposition.
    Decompose(DecomposeArgs),
    /// Spectral reliability weights for each sample.
    Select(SelectArgs),
    /// Generate a synthetic batch and describe it.
    Simulate(SimulateArgs),
    /// Fixed-threshold versus spectral selection on labelled data.
    Compare(CompareArgs),
    /// Expected calibration error of a labelled batch.
    Ece(EceArgs),
    /// CSV samples of -log p + (K-1)^2 / (2(1-p)) v over a (p, v) grid.
    Grid(GridArgs),
}

#[derive(Debug, Args)]
struct InputArgs {
    #[arg(long)]
    input: PathBuf,
    /// Defaults to binary for `.bin`/`.covr` files and CSV otherwise.
    #[arg(long, value_enum)]
    format: Option<MatrixFormat>,
}

#[derive(Debug, Args)]
struct DecomposeArgs {
    #[command(flatten)]
    input: InputArgs,
    /// `adaptive` or a fixed value in (0, 1/(K-1)).
    #[arg(long, default_value = "adaptive", value_parser = parse_epsilon)]
    epsilon: EpsilonPolicy,
    /// Use `-(K-1) eps log(p/(1-p))` for the middle term.
    #[arg(long)]
    log_odds_middle: bool,
}

#[derive(Debug, Args)]
struct PcosArgs {
    #[arg(long, value_enum, default_value_t = EmbeddingKind::Theory)]
    embedding: EmbeddingKind,
    #[arg(long, default_value_t = DEFAULT_LAMBDA)]
    lambda: f64,
    /// Use `exp(-((h - mu) / (2 sigma))^2)` for the Gaussian factor.
    #[arg(long)]
    quarter_exponent: bool,
}

impl PcosArgs {
    fn config(&self) -> PcosConfig {
        PcosConfig {
            embedding: self.embedding,
            lambda: self.lambda,
            exponent: if self.quarter_exponent {
                GaussianExponent::Quarter
            } else {
                GaussianExponent::Standard
            },
        }
    }

    fn echo(&self, config: &mut BTreeMap<String, String>) {
        config.insert("embedding".into(), format!("{:?}", self.embedding).to_lowercase());
        config.insert("lambda".into(), format!("{:?}", self.lambda));
        config.insert("quarter_exponent".into(), self.quarter_exponent.to_string());
    }
}

#[derive(Debug, Args)]
struct SelectArgs {
    #[command(flatten)]
    input: InputArgs,
    #[command(flatten)]
    pcos: PcosArgs,
}

#[derive(Debug, Args)]
struct SimArgs {
    #[arg(long, default_value_t = 1000)]
    n: usize,
    #[arg(long, default_value_t = 10)]
    k: usize,
    /// Comma-separated class priors; uniform if omitted.
    #[arg(long, value_delimiter = ',')]
    priors: Option<Vec<f64>>,
    #[arg(long, default_value_t = 0.8)]
    accuracy: f64,
    #[arg(long, default_value_t = 1.0)]
    temp: f64,
    #[arg(long, value_enum, default_value_t = ResidualMode::Uniform)]
    residual: ResidualMode,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// How strongly rare classes lose confidence (0 disables).
    #[arg(long, default_value_t = 0.0)]
    coupling: f64,
    /// Rewrite every error as overconfident with high residual variance.
    #[arg(long)]
    inject_errors: bool,
}

impl SimArgs {
    fn config(&self) -> SyntheticConfig {
        SyntheticConfig {
            n_samples: self.n,
            n_classes: self.k,
            class_priors: self
                .priors
                .clone()
                .unwrap_or_else(|| vec![1.0 / self.k.max(1) as f64; self.k]),
            base_accuracy: self.accuracy,
            overconfidence_temp: self.temp,
            residual_mode: self.residual,
            seed: self.seed,
            prior_coupling: self.coupling,
            error_profile: if self.inject_errors {
                ErrorProfile::OverconfidentHighRcv
            } else {
                ErrorProfile::Natural
            },
        }
    }

    fn echo(&self, config: &mut BTreeMap<String, String>) {
        let c = self.config();
        config.insert("n".into(), c.n_samples.to_string());
        config.insert("k".into(), c.n_classes.to_string());
        config.insert(
            "priors".into(),
            c.class_priors.iter().map(|p| format!("{p:?}")).collect::<Vec<_>>().join(","),
        );
        config.insert("accuracy".into(), format!("{:?}", c.base_accuracy));
        config.insert("temp".into(), format!("{:?}", c.overconfidence_temp));
        config.insert("residual".into(), format!("{:?}", c.residual_mode).to_lowercase());
        config.insert("seed".into(), c.seed.to_string());
        config.insert("coupling".into(), format!("{:?}", c.prior_coupling));
        config.insert("inject_errors".into(), self.inject_errors.to_string());
    }
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[command(flatten)]
    sim: SimArgs,
    /// Also write the generated matrix here.
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long, value_enum)]
    output_format: Option<MatrixFormat>,
    /// Also write the true labels here, one per line.
    #[arg(long)]
    labels_output: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct CompareArgs {
    /// Labelled input; without it a batch is simulated from the flags below.
    #[arg(long, requires = "labels")]
    input: Option<PathBuf>,
    #[arg(long, value_enum)]
    format: Option<MatrixFormat>,
    #[arg(long)]
    labels: Option<PathBuf>,
    #[command(flatten)]
    sim: SimArgs,
    #[arg(long, default_value_t = DEFAULT_TAU)]
    tau: f64,
    #[command(flatten)]
    pcos: PcosArgs,
}

#[derive(Debug, Args)]
struct EceArgs {
    #[command(flatten)]
    input: InputArgs,
    #[arg(long)]
    labels: PathBuf,
    #[arg(long, default_value_t = DEFAULT_BINS)]
    bins: usize,
}

#[derive(Debug, Args)]
struct GridArgs {
    #[arg(long, default_value_t = 21)]
    k: usize,
    #[arg(long, default_value_t = 0.5)]
    p_min: f64,
    #[arg(long, default_value_t = 0.999)]
    p_max: f64,
    #[arg(long, default_value_t = 50)]
    p_steps: usize,
    #[arg(long, default_value_t = 0.0)]
    v_min: f64,
    #[arg(long, default_value_t = 0.01)]
    v_max: f64,
    #[arg(long, default_value_t = 50)]
    v_steps: usize,
}

fn parse_epsilon(s: &str) -> std::result::Result<EpsilonPolicy, String> {
    if s.eq_ignore_ascii_case("adaptive") {
        return Ok(EpsilonPolicy::Adaptive);
    }
    match s.parse::<f64>() {
        Ok(v) if v > 0.0 && v.is_finite() => Ok(EpsilonPolicy::Fixed(v)),
        _ => Err(format!("expected `adaptive` or a positive number, got {s:?}")),
    }
}

/// Parses `args` (including the program name), runs the command and returns the exit code.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let text = e.render().to_string();
            let _ = if code == 0 {
                stdout.write_all(text.as_bytes())
            } else {
                stderr.write_all(text.as_bytes())
            };
            return code;
        }
    };
    let output = match execute(cli.command) {
        Ok(text) => text,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            return exit_code(&e);
        }
    };
    match stdout.write_all(output.as_bytes()).and_then(|_| stdout.flush()) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(stderr, "error: writing output: {e}");
            1
        }
    }
}

pub fn exit_code(err: &CovarError) -> i32 {
    match err {
        CovarError::Io(_) => 1,
        _ => 2,
    }
}

fn execute(command: Command) -> Result<String> {
    match command {
        Command::Decompose(a) => decompose(&a),
        Command::Select(a) => select(&a),
        Command::Simulate(a) => simulate(&a),
        Command::Compare(a) => compare(&a),
        Command::Ece(a) => ece(&a),
        Command::Grid(a) => grid(&a),
    }
}

struct LoadedInput {
    batch: ProbabilityBatch,
    digest: String,
    format: MatrixFormat,
}

fn load(path: &Path, format: Option<MatrixFormat>) -> Result<LoadedInput> {
    let format = format.unwrap_or_else(|| MatrixFormat::from_path(path));
    let bytes = fs::read(path)?;
    Ok(LoadedInput {
        batch: io::decode_matrix(&bytes, format)?,
        digest: report::sha256_hex(&bytes),
        format,
    })
}

fn start_report(command: &str, batch: &ProbabilityBatch, digest: String) -> RunReport {
    let mut r = RunReport::new(command, batch.n_samples(), batch.n_classes());
    r.input_digest = Some(digest);
    r
}

fn echo_input(config: &mut BTreeMap<String, String>, path: &Path, format: MatrixFormat) {
    config.insert("input".into(), path.display().to_string());
    config.insert("format".into(), format!("{format:?}").to_lowercase());
}

fn base_records(batch: &ProbabilityBatch) -> Vec<SampleRecord> {
    compute_stats(batch)
        .iter()
        .enumerate()
        .map(|(index, s)| SampleRecord {
            index,
            max_class: s.max_class,
            max_conf: s.max_conf,
            rcv: s.rcv,
            ..Default::default()
        })
        .collect()
}

fn decompose(a: &DecomposeArgs) -> Result<String> {
    let input = load(&a.input.input, a.input.format)?;
    let form = if a.log_odds_middle {
        ApproxForm::LogOdds
    } else {
        ApproxForm::Derived
    };
    let stats = compute_stats(&input.batch);
    let (batch, samples) = decompose_batch_with(&stats, a.epsilon, form)?;

    let mut r = start_report("decompose", &input.batch, input.digest);
    echo_input(&mut r.config, &a.input.input, input.format);
    r.config.insert(
        "epsilon".into(),
        match a.epsilon {
            EpsilonPolicy::Adaptive => "adaptive".into(),
            EpsilonPolicy::Fixed(e) => format!("{e:?}"),
        },
    );
    r.config.insert("log_odds_middle".into(), a.log_odds_middle.to_string());
    r.samples = base_records(&input.batch);
    for (rec, d) in r.samples.iter_mut().zip(&samples) {
        rec.g = Some(d.g_coeff);
        rec.exact_ce = Some(d.exact_ce);
        rec.approx_ce = Some(d.approx_ce);
        rec.middle_term = Some(d.middle_term);
        rec.remainder_bound = d.remainder_bound;
    }
    r.batch = Some(batch);
    report::to_json(&r)
}

fn attach_pcos(r: &mut RunReport, outcome: &pcos::PcosOutcome) {
    let assignment = outcome.spectral.selection.assignment();
    for (i, rec) in r.samples.iter_mut().enumerate() {
        rec.weight = Some(outcome.weights.weights[i]);
        rec.assignment = Some(assignment[i]);
        rec.preserved = Some(outcome.weights.preserved_mask[i]);
    }
    r.pcos = Some(PcosSummary::from(outcome));
}

fn select(a: &SelectArgs) -> Result<String> {
    let input = load(&a.input.input, a.input.format)?;
    let outcome = pcos::pcos(&input.batch, &a.pcos.config())?;
    let mut r = start_report("select", &input.batch, input.digest);
    echo_input(&mut r.config, &a.input.input, input.format);
    a.pcos.echo(&mut r.config);
    r.samples = base_records(&input.batch);
    attach_pcos(&mut r, &outcome);
    report::to_json(&r)
}

fn generate(sim: &SimArgs) -> Result<(SyntheticBatch, String)> {
    let out = simulator::generate(&sim.config())?;
    let digest = report::sha256_hex(&io::encode_binary(&out.batch)?);
    Ok((out, digest))
}

fn simulate(a: &SimulateArgs) -> Result<String> {
    let (out, digest) = generate(&a.sim)?;
    if let Some(path) = &a.output {
        let format = a.output_format.unwrap_or_else(|| MatrixFormat::from_path(path));
        io::save_matrix(path, &out.batch, format)?;
    }
    if let Some(path) = &a.labels_output {
        fs::write(path, io::format_labels(&out.labels))?;
    }
    let mut r = start_report("simulate", &out.batch, digest);
    a.sim.echo(&mut r.config);
    r.samples = base_records(&out.batch);
    for (rec, &y) in r.samples.iter_mut().zip(&out.labels) {
        rec.label = Some(y);
    }
    let (conf, correct) = baseline::confidence_and_correctness(&out.batch, &out.labels)?;
    r.calibration = Some(baseline::ece(&conf, &correct, DEFAULT_BINS)?);
    report::to_json(&r)
}

fn compare(a: &CompareArgs) -> Result<String> {
    let mut config = BTreeMap::new();
    let (batch, labels, digest) = match (&a.input, &a.labels) {
        (Some(path), Some(labels)) => {
            let input = load(path, a.format)?;
            echo_input(&mut config, path, input.format);
            config.insert("labels".into(), labels.display().to_string());
            (input.batch, io::load_labels(labels)?, input.digest)
        }
        _ => {
            a.sim.echo(&mut config);
            let (out, digest) = generate(&a.sim)?;
            (out.batch, out.labels, digest)
        }
    };
    config.insert("tau".into(), format!("{:?}", a.tau));
    a.pcos.echo(&mut config);

    let pcos_config = a.pcos.config();
    let policies = [
        SelectionPolicy::FixedThreshold { tau: a.tau },
        SelectionPolicy::CovarPcos { config: pcos_config },
    ];
    let evaluations = simulator::evaluate_policies(&batch, &labels, &policies)?;
    let outcome = pcos::pcos(&batch, &pcos_config)?;
    let (conf, correct) = baseline::confidence_and_correctness(&batch, &labels)?;

    let mut r = start_report("compare", &batch, digest);
    r.config = config;
    r.samples = base_records(&batch);
    for (rec, &y) in r.samples.iter_mut().zip(&labels) {
        rec.label = Some(y);
    }
    attach_pcos(&mut r, &outcome);
    r.policies = evaluations;
    r.calibration = Some(baseline::ece(&conf, &correct, DEFAULT_BINS)?);
    report::to_json(&r)
}

fn ece(a: &EceArgs) -> Result<String> {
    let input = load(&a.input.input, a.input.format)?;
    let labels = io::load_labels(&a.labels)?;
    let (conf, correct) = baseline::confidence_and_correctness(&input.batch, &labels)?;
    let mut r = start_report("ece", &input.batch, input.digest);
    echo_input(&mut r.config, &a.input.input, input.format);
    r.config.insert("labels".into(), a.labels.display().to_string());
    r.config.insert("bins".into(), a.bins.to_string());
    r.calibration = Some(baseline::ece(&conf, &correct, a.bins)?);
    report::to_json(&r)
}

/// The second-order CE surface with adaptive `eps`.
pub fn grid_value(p: f64, v: f64, n_classes: usize) -> f64 {
    let km1 = (n_classes - 1) as f64;
    -p.ln() + km1 * km1 / (2.0 * (1.0 - p)) * v
}

fn axis(lo: f64, hi: f64, steps: usize) -> Vec<f64> {
    (0..steps)
        .map(|i| lo + (hi - lo) * i as f64 / (steps - 1) as f64)
        .collect()
}

fn grid(a: &GridArgs) -> Result<String> {
    if a.k < 2 {
        return Err(CovarError::domain("k must be at least 2"));
    }
    if !(a.p_min > 0.0 && a.p_min <= a.p_max && a.p_max < 1.0) {
        return Err(CovarError::domain("need 0 < p-min <= p-max < 1"));
    }
    if !(a.v_min >= 0.0 && a.v_min <= a.v_max && a.v_max.is_finite()) {
        return Err(CovarError::domain("need 0 <= v-min <= v-max"));
    }
    if a.p_steps < 2 || a.v_steps < 2 {
        return Err(CovarError::domain("grid axes need at least 2 steps"));
    }
    let mut out = String::from("p,v,ce\n");
    for p in axis(a.p_min, a.p_max, a.p_steps) {
        for v in axis(a.v_min, a.v_max, a.v_steps) {
            out.push_str(&format!("{p:?},{v:?},{:?}\n", grid_value(p, v, a.k)));
        }
    }
    Ok(out)
}
