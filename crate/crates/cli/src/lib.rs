//! `mire` command line: `estimate`, `reduce` and `bench`.
//!
//! Every flag can also be set through an environment variable named
//! `MIRE_<FLAG>` (for example `MIRE_DATA`, `MIRE_K`, `MIRE_THREADS`).
//! Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical
//! failure.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use mire::bench::{run_bench, BenchConfig, BenchOutcome};
use mire::data::{load_csv, standardize, CsvSchema};
use mire::effects::{ite, pehe, EffectEstimate};
use mire::estimator::{run_method, EstimatorConfig, Method};
use mire::matching::{reduce, MatchDirection, MatchOptions};
use mire::sdr_ire::{estimate_basis, FitOptions, SdrBasis, SdrOptions, WeightingKind};
use mire::{Error, ErrorClass};
use nalgebra::DMatrix;
use serde::Serialize;

/// Seed used when `--seed` is absent.
pub const DEFAULT_SEED: u64 = 0;

#[derive(Debug, Parser)]
#[command(name = "mire", version, about = "Treatment effect estimation by matching on IRE-reduced covariates")]
pub struct Cli {
    /// Worker threads for parallel sections (default: all cores).
    #[arg(long, global = true, env = "MIRE_THREADS")]
    pub threads: Option<usize>,

    /// Print progress and summaries to stderr.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Estimate ATE/ATT with one method and write effects, balance and matches.
    Estimate(EstimateArgs),
    /// Write the reduced covariates next to the outcome for plotting.
    Reduce(ReduceArgs),
    /// Run a benchmark described by a JSON config.
    Bench(BenchArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    Mire,
    Nnm,
    Psm,
    PsmLogit,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Mire => Method::Mire,
            MethodArg::Nnm => Method::Nnm,
            MethodArg::Psm => Method::Psm,
            MethodArg::PsmLogit => Method::PsmLogit,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum WeightingArg {
    Identity,
    Ire,
}

impl From<WeightingArg> for WeightingKind {
    fn from(w: WeightingArg) -> Self {
        match w {
            WeightingArg::Identity => WeightingKind::Identity,
            WeightingArg::Ire => WeightingKind::IreFull,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Estimand {
    /// Match both groups; reports ATE and ATT.
    Ate,
    /// Match treated units only.
    Att,
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// Input CSV with a header row.
    #[arg(long, env = "MIRE_DATA")]
    pub data: PathBuf,

    /// Column roles, e.g. `t=treat,y=re78[,y1=..,y0=..][,x=a;b;c]`.
    #[arg(long, env = "MIRE_SCHEMA")]
    pub schema: String,
}

#[derive(Debug, Args)]
pub struct SdrArgs {
    /// Target dimension of the reduction.
    #[arg(long, env = "MIRE_K", default_value_t = mire::sdr_ire::DEFAULT_DIMENSION)]
    pub k: usize,

    /// Number of slices of the outcome.
    #[arg(long, env = "MIRE_H", default_value_t = mire::sdr_ire::DEFAULT_SLICES)]
    pub h: usize,

    #[arg(long, env = "MIRE_WEIGHTING", value_enum, default_value_t = WeightingArg::Identity)]
    pub weighting: WeightingArg,

    /// Covariance ridge (default: 1e-8 * trace / p).
    #[arg(long, env = "MIRE_RIDGE")]
    pub ridge: Option<f64>,

    /// Random restarts of the fit in addition to the SVD start.
    #[arg(long, env = "MIRE_RESTARTS", default_value_t = 0)]
    pub restarts: usize,

    #[arg(long, env = "MIRE_SEED", default_value_t = DEFAULT_SEED)]
    pub seed: u64,

    /// Use covariates as given instead of standardizing continuous columns.
    #[arg(long, env = "MIRE_NO_STANDARDIZE")]
    pub no_standardize: bool,
}

impl SdrArgs {
    fn options(&self) -> SdrOptions {
        SdrOptions {
            h: self.h,
            k: self.k,
            weighting: self.weighting.into(),
            ridge: self.ridge,
            fit: FitOptions {
                restarts: self.restarts,
                seed: self.seed,
                ..FitOptions::default()
            },
        }
    }
}

#[derive(Debug, Args)]
pub struct EstimateArgs {
    #[command(flatten)]
    pub data: DataArgs,

    #[arg(long, env = "MIRE_METHOD", value_enum, default_value_t = MethodArg::Mire)]
    pub method: MethodArg,

    #[command(flatten)]
    pub sdr: SdrArgs,

    /// Matched neighbours per unit.
    #[arg(long, env = "MIRE_M", default_value_t = 1)]
    pub m: usize,

    /// Greedy matching without replacement.
    #[arg(long, env = "MIRE_WITHOUT_REPLACEMENT")]
    pub without_replacement: bool,

    #[arg(long, env = "MIRE_ESTIMAND", value_enum, default_value_t = Estimand::Ate)]
    pub estimand: Estimand,

    /// Output directory.
    #[arg(long, env = "MIRE_OUT")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReduceArgs {
    #[command(flatten)]
    pub data: DataArgs,

    #[command(flatten)]
    pub sdr: SdrArgs,

    /// Use this `p x k` basis (CSV with a header row) instead of fitting one.
    #[arg(long, env = "MIRE_BASIS")]
    pub basis: Option<PathBuf>,

    /// Output CSV with columns `z1..zk, y, t`.
    #[arg(long, env = "MIRE_OUT")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Benchmark config (JSON).
    #[arg(long, env = "MIRE_CONFIG")]
    pub config: PathBuf,

    /// Output directory; overrides the config's `output`.
    #[arg(long, env = "MIRE_OUT")]
    pub out: Option<PathBuf>,
}

/// Exit code for a failure class.
pub fn exit_code(class: ErrorClass) -> i32 {
    match class {
        ErrorClass::Config => 2,
        ErrorClass::Data => 3,
        ErrorClass::Numerical => 4,
    }
}

/// Parses `args`, runs the command and returns the process exit code.
/// Diagnostics go to stderr as a single line.
pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return code;
        }
    };
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}", single_line(&e.to_string()));
            exit_code(e.class())
        }
    }
}

fn single_line(msg: &str) -> String {
    msg.split_whitespace().collect::<Vec<_>>().join(" ")
}

pub fn run(cli: &Cli) -> mire::Result<()> {
    if let Some(threads) = cli.threads {
        if threads == 0 {
            return Err(Error::InvalidArgument("--threads must be at least 1".into()));
        }
        // A global pool can only be installed once per process; later calls keep the first.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
    }
    match &cli.command {
        Command::Estimate(args) => cmd_estimate(args, cli.verbose),
        Command::Reduce(args) => cmd_reduce(args, cli.verbose),
        Command::Bench(args) => cmd_bench(args, cli.verbose),
    }
}

fn load(data: &DataArgs) -> mire::Result<mire::ObservationalDataset> {
    let schema: CsvSchema = data.schema.parse()?;
    load_csv(&data.data, &schema)
}

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Serialize)]
struct EffectOut {
    value: f64,
    sd: f64,
    n_used: usize,
}

impl From<&EffectEstimate> for EffectOut {
    fn from(e: &EffectEstimate) -> Self {
        Self {
            value: e.value,
            sd: e.sd,
            n_used: e.n_used,
        }
    }
}

#[derive(Serialize)]
struct EffectsReport {
    method: Method,
    estimand: &'static str,
    n: usize,
    p: usize,
    seed: u64,
    ate: Option<EffectOut>,
    att: Option<EffectOut>,
    /// Mean squared unit-effect error, present when true potential outcomes are known.
    pehe: Option<f64>,
    sqrt_pehe: Option<f64>,
    k: Option<usize>,
    converged: Option<bool>,
    /// Basis in the coordinates the method worked in (standardized unless disabled).
    basis: Option<Vec<Vec<f64>>>,
}

fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().cloned().collect()).collect()
}

pub fn cmd_estimate(args: &EstimateArgs, verbose: u8) -> mire::Result<()> {
    if args.m == 0 {
        return Err(Error::InvalidArgument("--m must be at least 1".into()));
    }
    let ds = load(&args.data)?;
    let method: Method = args.method.into();
    let cfg = EstimatorConfig {
        sdr: args.sdr.options(),
        matching: MatchOptions {
            num_neighbors: args.m,
            with_replacement: !args.without_replacement,
            direction: match args.estimand {
                Estimand::Ate => MatchDirection::Both,
                Estimand::Att => MatchDirection::Att,
            },
        },
        standardize: !args.sdr.no_standardize,
    };
    let out = run_method(&ds, method, &cfg)?;
    let ate = match args.estimand {
        Estimand::Ate => Some(out.ate()?),
        Estimand::Att => None,
    };
    let att = out.att()?;
    let (pehe_value, sqrt_pehe) = match (ds.potential_outcomes(), args.estimand) {
        (Some((y1, y0)), Estimand::Ate) => {
            let p = pehe(&ite(&out.result)?, y1.as_slice(), y0.as_slice())?;
            (Some(p), Some(p.sqrt()))
        }
        _ => (None, None),
    };
    let report = EffectsReport {
        method,
        estimand: match args.estimand {
            Estimand::Ate => "ate",
            Estimand::Att => "att",
        },
        n: ds.n(),
        p: ds.p(),
        seed: args.sdr.seed,
        ate: ate.as_ref().map(EffectOut::from),
        att: Some(EffectOut::from(&att)),
        pehe: pehe_value,
        sqrt_pehe,
        k: out.fit.as_ref().map(|f| f.basis.k),
        converged: out.fit.as_ref().map(|f| f.converged),
        basis: out.fit.as_ref().map(|f| matrix_rows(&f.basis.beta)),
    };
    fs::create_dir_all(&args.out).map_err(|e| io_err(&args.out, e))?;
    let effects_path = args.out.join("effects.json");
    let mut text = serde_json::to_string_pretty(&report).map_err(|e| Error::InvalidData(e.to_string()))?;
    text.push('\n');
    fs::write(&effects_path, text).map_err(|e| io_err(&effects_path, e))?;
    out.balance()?.write_csv(args.out.join("balance.csv"))?;
    out.result.write_csv(args.out.join("matches.csv"))?;
    if verbose > 0 {
        if let Some(a) = &ate {
            eprintln!("{method}: ATE {:.6} (unit-effect sd {:.6}, n {})", a.value, a.sd, a.n_used);
        }
        eprintln!("{method}: ATT {:.6} (unit-effect sd {:.6}, n {})", att.value, att.sd, att.n_used);
        if let Some(p) = pehe_value {
            eprintln!("{method}: PEHE {p:.6} (sqrt {:.6})", p.sqrt());
        }
        eprintln!("wrote {}", args.out.display());
    }
    Ok(())
}

fn read_basis(path: &Path, p: usize) -> mire::Result<SdrBasis> {
    let csv_err = |message: String| Error::Csv {
        path: path.to_path_buf(),
        message,
    };
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_err(e.to_string()))?;
    let k = rdr.headers().map_err(|e| csv_err(e.to_string()))?.len();
    let mut values = Vec::new();
    let mut rows = 0;
    for (r, record) in rdr.records().enumerate() {
        let record = record.map_err(|e| csv_err(e.to_string()))?;
        for (c, cell) in record.iter().enumerate() {
            let v: f64 = cell
                .parse()
                .map_err(|_| csv_err(format!("row {}, column {}: `{cell}` is not a number", r + 2, c + 1)))?;
            values.push(v);
        }
        rows += 1;
    }
    if rows != p || values.len() != p * k {
        return Err(Error::Shape(format!(
            "basis must be {p} rows by {k} columns, found {rows} rows and {} values",
            values.len()
        )));
    }
    SdrBasis::from_matrix(DMatrix::from_row_slice(p, k, &values))
}

pub fn cmd_reduce(args: &ReduceArgs, verbose: u8) -> mire::Result<()> {
    let ds = load(&args.data)?;
    let working = if args.sdr.no_standardize { ds } else { standardize(&ds)?.0 };
    let basis = match &args.basis {
        Some(path) => read_basis(path, working.p())?,
        None => estimate_basis(&working, &args.sdr.options())?.basis,
    };
    let red = reduce(&working, &basis, args.sdr.ridge)?;
    let mut wtr = csv::Writer::from_path(&args.out).map_err(|e| Error::Csv {
        path: args.out.clone(),
        message: e.to_string(),
    })?;
    let csv_err = |e: csv::Error| Error::Csv {
        path: args.out.clone(),
        message: e.to_string(),
    };
    let mut header: Vec<String> = (1..=red.k()).map(|j| format!("z{j}")).collect();
    header.push("y".into());
    header.push("t".into());
    wtr.write_record(&header).map_err(csv_err)?;
    for i in 0..working.n() {
        let mut record: Vec<String> = red.z.row(i).iter().map(|v| v.to_string()).collect();
        record.push(working.y()[i].to_string());
        record.push(u8::from(working.treatment()[i]).to_string());
        wtr.write_record(&record).map_err(csv_err)?;
    }
    wtr.flush().map_err(|e| io_err(&args.out, e))?;
    if verbose > 0 {
        eprintln!("wrote {} reduced columns to {}", red.k(), args.out.display());
    }
    Ok(())
}

pub fn cmd_bench(args: &BenchArgs, verbose: u8) -> mire::Result<()> {
    let cfg = BenchConfig::from_file(&args.config)?;
    let dir = args
        .out
        .clone()
        .or_else(|| cfg.output.clone())
        .unwrap_or_else(|| PathBuf::from("bench-out"));
    let outcome = run_bench(&cfg)?;
    let written = outcome.write_files(&dir)?;
    if verbose > 0 {
        match &outcome {
            BenchOutcome::Replications(report) => {
                for s in &report.summaries {
                    eprintln!(
                        "{}: ok {} failed {} mean PEHE {} mean ATE {}",
                        s.method,
                        s.n_ok,
                        s.n_failed,
                        s.mean.pehe.map_or("-".into(), |v| format!("{v:.6}")),
                        s.mean.ate.map_or("-".into(), |v| format!("{v:.6}")),
                    );
                }
            }
            BenchOutcome::Jobs(table) => {
                for r in &table.rows {
                    eprintln!("{}: ATT {:?} deviation {:?}", r.method, r.att, r.deviation);
                }
            }
        }
        for path in written {
            eprintln!("wrote {}", path.display());
        }
    }
    Ok(())
}
