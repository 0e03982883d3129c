use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use paircorr::correlation::{curve, intensity_cor, intensity_uncor};
use paircorr::exec::{init_threads, Execution};
use paircorr::fitting::{fit, synthesize, FitConfig, Param, PTilde};
use paircorr::io::{self, ReportRow};
use paircorr::oracle::{best_estimate, intensity_cor_oracle, intensity_uncor_oracle, OracleResult, QuadratureSpec};
use paircorr::{Error, ModelParams};

/// Two-electron momentum correlations after double ionization.
/// All momenta are in atomic units (a.u.).
#[derive(Debug, Parser)]
#[command(name = "paircorr", version)]
struct Cli {
    /// Worker threads for parallel loops.
    #[arg(long, global = true, env = "PAIRCORR_THREADS")]
    threads: Option<usize>,

    /// Run every loop on the calling thread.
    #[arg(long, global = true)]
    sequential: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Evaluate R(Δp) on a grid.
    Curve {
        #[command(flatten)]
        model: ModelArgs,
        /// Δp grid `min:max:count`, a.u.
        #[arg(long, default_value = "0.05:10:200", value_parser = parse_grid)]
        grid: Grid,
        #[arg(long, value_enum, default_value_t = Format::Csv)]
        format: Format,
        /// Output file (stdout if omitted).
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Fit (σ, f, p̃) to a measured R(Δp) dataset.
    Fit(FitArgs),
    /// Compare closed-form intensities with the integration oracle.
    OracleCheck {
        #[command(flatten)]
        model: ModelArgs,
        /// Δp grid `min:max:count`, a.u.
        #[arg(long, value_parser = parse_grid)]
        grid: Grid,
        /// Monte-Carlo samples per integral.
        #[arg(long, default_value_t = 2_000_000)]
        samples: usize,
        #[arg(long, default_value_t = 0x5eed_2026)]
        seed: u64,
        /// Relative tolerance.
        #[arg(long, default_value_t = 1e-3, value_parser = positive)]
        tol: f64,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Generate a synthetic dataset from the model.
    Synth {
        #[command(flatten)]
        model: ModelArgs,
        /// Δp grid `min:max:count`, a.u.
        #[arg(long, default_value = "0.2:6:30", value_parser = parse_grid)]
        grid: Grid,
        /// Relative Gaussian noise on R.
        #[arg(long, default_value_t = 0.0, value_parser = non_negative, allow_negative_numbers = true)]
        noise: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
struct ModelArgs {
    /// Momentum uncertainty σ, a.u.
    #[arg(long, value_parser = positive, allow_negative_numbers = true)]
    sigma: f64,
    /// Singlet-to-triplet transition probability.
    #[arg(long, value_parser = unit_interval, allow_negative_numbers = true)]
    f: f64,
    /// Relative average momentum p̃, a.u.
    #[arg(long = "p-tilde", value_parser = non_negative, allow_negative_numbers = true)]
    p_tilde: f64,
}

impl ModelArgs {
    fn params(&self) -> ModelParams {
        ModelParams::new(self.sigma, self.f, self.p_tilde)
    }
}

#[derive(Debug, Args)]
struct FitArgs {
    /// Dataset CSV with header `delta_p,R[,sigma_R]`.
    #[arg(long)]
    data: PathBuf,
    /// σ search bounds `lo:hi`, a.u.
    #[arg(long, default_value = "0.001:10", value_parser = parse_bounds)]
    sigma_bounds: (f64, f64),
    /// Hold σ fixed, a.u.
    #[arg(long, value_parser = positive)]
    fix_sigma: Option<f64>,
    /// Hold f fixed.
    #[arg(long, value_parser = unit_interval)]
    fix_f: Option<f64>,
    /// Hold p̃ at this multiple of σ.
    #[arg(long, default_value_t = 0.1, value_parser = non_negative, conflicts_with_all = ["fix_p_tilde", "free_p_tilde"])]
    p_tilde_ratio: f64,
    /// Hold p̃ fixed, a.u.
    #[arg(long, value_parser = non_negative, conflicts_with = "free_p_tilde")]
    fix_p_tilde: Option<f64>,
    /// Fit p̃ within bounds `lo:hi`, a.u.
    #[arg(long, value_parser = parse_bounds)]
    free_p_tilde: Option<(f64, f64)>,
    #[arg(long, default_value_t = 16)]
    starts: usize,
    #[arg(long, default_value_t = 200)]
    max_iter: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output JSON file (stdout if omitted).
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone)]
struct Grid {
    min: f64,
    max: f64,
    count: usize,
}

impl Grid {
    fn points(&self) -> Vec<f64> {
        paircorr::correlation::linear_grid(self.min, self.max, self.count)
    }
}

fn number(s: &str) -> Result<f64, String> {
    let v: f64 = s.trim().parse().map_err(|_| format!("`{s}` is not a number"))?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(format!("`{s}` is not finite"))
    }
}

fn positive(s: &str) -> Result<f64, String> {
    number(s).and_then(|v| if v > 0.0 { Ok(v) } else { Err(format!("must be > 0, got {v}")) })
}

fn non_negative(s: &str) -> Result<f64, String> {
    number(s).and_then(|v| if v >= 0.0 { Ok(v) } else { Err(format!("must be >= 0, got {v}")) })
}

fn unit_interval(s: &str) -> Result<f64, String> {
    number(s).and_then(|v| {
        if (0.0..=1.0).contains(&v) {
            Ok(v)
        } else {
            Err(format!("must lie in [0, 1], got {v}"))
        }
    })
}

fn parse_grid(s: &str) -> Result<Grid, String> {
    let parts: Vec<&str> = s.split(':').collect();
    let [min, max, count] = parts[..] else {
        return Err("expected `min:max:count`".into());
    };
    let (min, max) = (positive(min)?, positive(max)?);
    let count: usize = count.trim().parse().map_err(|_| format!("`{count}` is not a count"))?;
    if count == 0 || (count > 1 && max <= min) || (count == 1 && max != min) {
        return Err("need max > min and count >= 2, or min = max with count = 1".into());
    }
    Ok(Grid { min, max, count })
}

fn parse_bounds(s: &str) -> Result<(f64, f64), String> {
    let Some((lo, hi)) = s.split_once(':') else {
        return Err("expected `lo:hi`".into());
    };
    let (lo, hi) = (non_negative(lo)?, positive(hi)?);
    if hi > lo {
        Ok((lo, hi))
    } else {
        Err("need hi > lo".into())
    }
}

/// Exit codes: 0 success, 1 numeric, 2 usage/parse, 3 non-convergence,
/// 4 verification failure.
fn exit_code(e: &Error) -> u8 {
    match e {
        Error::InvalidSpec(_) | Error::InsufficientData(_) | Error::Parse { .. } => 2,
        Error::NonConvergence(_) => 3,
        Error::ToleranceNotMet(_) => 4,
        _ => 1,
    }
}

fn emit<F>(output: Option<&Path>, body: F) -> paircorr::Result<()>
where
    F: FnOnce(&mut dyn Write) -> paircorr::Result<()>,
{
    match output {
        Some(path) => io::write_atomic(path, |w| body(w)),
        None => {
            let stdout = std::io::stdout();
            let mut lock = stdout.lock();
            body(&mut lock)?;
            lock.flush()?;
            Ok(())
        }
    }
}

fn run(cli: Cli) -> Result<u8, (u8, String)> {
    let exec = if cli.sequential { Execution::Sequential } else { Execution::Parallel };
    if let Some(n) = cli.threads {
        init_threads(n);
    }
    let fail = |e: Error| (exit_code(&e), e.to_string());
    match cli.command {
        Command::Curve {
            model,
            grid,
            format,
            output,
        } => {
            let c = curve(&model.params(), &grid.points(), exec).map_err(fail)?;
            emit(output.as_deref(), |w| match format {
                Format::Csv => io::write_curve_csv(w, &c),
                Format::Json => io::write_json(w, &c),
            })
            .map_err(fail)?;
            Ok(0)
        }
        Command::Fit(args) => cmd_fit(args, exec),
        Command::OracleCheck {
            model,
            grid,
            samples,
            seed,
            tol,
            output,
        } => {
            let params = model.params();
            params.validate().map_err(fail)?;
            let spec = QuadratureSpec {
                sample_count: samples,
                rng_seed: seed,
                target_rel_tol: tol,
                exec,
                ..QuadratureSpec::default()
            };
            let row = |dp: f64, closed: f64, oracle: paircorr::Result<OracleResult>| -> Result<ReportRow, (u8, String)> {
                let o = best_estimate(oracle).map_err(fail)?;
                Ok(ReportRow {
                    delta_p: dp,
                    closed,
                    oracle: o.value,
                    err: o.est_error,
                    pass: o.agrees_with(closed, tol),
                })
            };
            let mut cor = Vec::new();
            let mut uncor = Vec::new();
            for dp in grid.points() {
                let c = intensity_cor(dp, &params).map_err(fail)?;
                cor.push(row(dp, c, intensity_cor_oracle(dp, &params, &spec))?);
                let u = intensity_uncor(dp, &params).map_err(fail)?;
                uncor.push(row(dp, u, intensity_uncor_oracle(dp, &params, &spec))?);
            }
            let all_pass = cor.iter().chain(&uncor).all(|r| r.pass);
            emit(output.as_deref(), |w| io::write_oracle_report(w, &[("I_cor", cor), ("I_uncor", uncor)]))
                .map_err(fail)?;
            if all_pass {
                Ok(0)
            } else {
                Err((4, "oracle check failed at one or more grid points".into()))
            }
        }
        Command::Synth {
            model,
            grid,
            noise,
            seed,
            output,
        } => {
            let d = synthesize(&model.params(), &grid.points(), noise, seed).map_err(fail)?;
            emit(output.as_deref(), |w| io::write_dataset_to(w, &d)).map_err(fail)?;
            Ok(0)
        }
    }
}

fn cmd_fit(args: FitArgs, exec: Execution) -> Result<u8, (u8, String)> {
    let fail = |e: Error| (exit_code(&e), e.to_string());
    let data = io::read_dataset(&args.data).map_err(|e| match e {
        Error::Io(io) => (2, format!("{}: {io}", args.data.display())),
        other => fail(other),
    })?;
    let config = FitConfig {
        sigma: match args.fix_sigma {
            Some(v) => Param::Fixed(v),
            None => Param::Free {
                lo: args.sigma_bounds.0,
                hi: args.sigma_bounds.1,
            },
        },
        f: args.fix_f.map_or(Param::Free { lo: 0.0, hi: 1.0 }, Param::Fixed),
        p_tilde: match (args.fix_p_tilde, args.free_p_tilde) {
            (Some(v), _) => PTilde::Fixed(v),
            (None, Some((lo, hi))) => PTilde::Free { lo, hi },
            (None, None) => PTilde::RelativeToSigma(args.p_tilde_ratio),
        },
        multistart_count: args.starts,
        max_iterations: args.max_iter,
        rng_seed: args.seed,
        exec,
        ..FitConfig::default()
    };
    let (result, code) = match fit(&data, &config) {
        Ok(r) => (r, 0),
        Err(Error::NonConvergence(r)) => (*r, 3),
        Err(Error::Domain(m)) => return Err((2, format!("invalid fit configuration: {m}"))),
        Err(e) => return Err(fail(e)),
    };
    emit(args.output.as_deref(), |w| io::write_fit_json(w, &result)).map_err(fail)?;
    if code == 3 {
        eprintln!("warning: no multistart converged; best-effort result written");
    }
    Ok(code)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err((code, msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(code)
        }
    }
}
