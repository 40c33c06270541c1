use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use tnshield::commands::{self, BatchOptions, PerturbRequest};
use tnshield::report::emit;
use tnshield::{CliError, Overrides, RunConfig};
use tnshield_core::formats::{PerturbMode, SubtensorSelector};
use tnshield_core::quantize::QuantizerKind;
use tnshield_core::NetworkFormat;

/// Tensor-network image compression, TT-SVD slope analysis and perturbation
/// detection.
#[derive(Parser, Debug)]
#[command(name = "tnshield", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    #[command(flatten)]
    global: GlobalArgs,
}

#[derive(Args, Debug)]
struct GlobalArgs {
    /// Decomposition format
    #[arg(long, global = true, value_parser = parse_format)]
    format: Option<NetworkFormat>,
    /// Relative error target
    #[arg(long = "tol", global = true)]
    tol: Option<f64>,
    /// Rank caps, comma separated (a single value applies everywhere)
    #[arg(long, global = true, value_delimiter = ',')]
    ranks: Option<Vec<usize>>,
    /// Use the robust (binned) TT-SVD for compression
    #[arg(long, global = true)]
    robust: bool,
    /// First bin edge of the robust SVD
    #[arg(long, global = true)]
    alpha: Option<f64>,
    /// Bin growth rate of the robust SVD
    #[arg(long, global = true)]
    beta: Option<f64>,
    /// Target spectrum slope for detection (sets the bin growth rate)
    #[arg(long, global = true, allow_hyphen_values = true)]
    slope: Option<f64>,
    /// Truncation error of the detection decomposition
    #[arg(long, global = true)]
    trunc: Option<f64>,
    /// Residual threshold for detection (at 299×299×3)
    #[arg(long, global = true)]
    threshold: Option<f64>,
    /// Force a quantizer for every subtensor
    #[arg(long, global = true, value_enum)]
    quantizer: Option<QuantizerArg>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (falls back to TNSHIELD_JOBS, then all cores)
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// TOML run configuration
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Write the JSON report here instead of stdout
    #[arg(long, global = true)]
    report: Option<PathBuf>,
    /// Leave wall-clock timings out of the report
    #[arg(long, global = true)]
    no_timings: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Compress images into .tnz files
    Compress {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        /// Output directory (default: next to each input)
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Decode .tnz files back to images
    Decompress {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        #[arg(short, long)]
        output: Option<PathBuf>,
        /// Original images, paired with the inputs in order, for error stats
        #[arg(long, num_args = 1.., value_delimiter = ',')]
        reference: Option<Vec<PathBuf>>,
    },
    /// TT-SVD slopes, spectra and subtensor NMI
    Analyze {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        /// Pairwise NMI between the subtensors of each network
        #[arg(long)]
        nmi: bool,
        /// Include every step's singular values
        #[arg(long)]
        spectra: bool,
    },
    /// Flag strong additive perturbations
    Detect {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        /// Clean images, paired with the inputs in order
        #[arg(long, num_args = 1.., value_delimiter = ',')]
        baseline: Option<Vec<PathBuf>>,
    },
    /// Perturb one subtensor of a .tnz file
    Perturb {
        input: PathBuf,
        /// Subtensor index in canonical order, or "random"
        #[arg(long, default_value = "random", value_parser = parse_selector)]
        subtensor: SubtensorSelector,
        /// Noise level(s), relative to the subtensor's largest magnitude
        #[arg(long, value_delimiter = ',', required = true)]
        level: Vec<f64>,
        #[arg(long, value_enum, default_value_t = ModeArg::Additive)]
        mode: ModeArg,
        /// Write the perturbed file (single level only)
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum QuantizerArg {
    Uniform,
    Lloyd,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum ModeArg {
    Additive,
    Randomize,
}

fn parse_format(s: &str) -> Result<NetworkFormat, String> {
    s.parse()
}

fn parse_selector(s: &str) -> Result<SubtensorSelector, String> {
    if s.eq_ignore_ascii_case("random") {
        return Ok(SubtensorSelector::Random);
    }
    s.parse()
        .map(SubtensorSelector::Index)
        .map_err(|_| format!("expected an index or \"random\", got {s:?}"))
}

fn build_config(g: &GlobalArgs) -> Result<RunConfig, CliError> {
    let mut cfg = match &g.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    cfg.apply(&Overrides {
        format: g.format,
        tolerance: g.tol,
        ranks: g.ranks.clone(),
        robust: g.robust,
        alpha: g.alpha,
        beta: g.beta,
        slope: g.slope,
        trunc: g.trunc,
        threshold: g.threshold,
        quantizer: g.quantizer.map(|q| match q {
            QuantizerArg::Uniform => QuantizerKind::Uniform,
            QuantizerArg::Lloyd => QuantizerKind::Lloyd,
        }),
        seed: g.seed,
        jobs: g.jobs,
    });
    Ok(cfg)
}

fn warn_failures<'a>(errors: impl Iterator<Item = (&'a str, &'a str)>) {
    for (input, e) in errors {
        eprintln!("warning: {input}: {e}");
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut cfg = build_config(&cli.global)?;
    if let Command::Analyze { spectra: true, .. } = cli.command {
        cfg.analysis.spectra = true;
    }
    cfg.validate()?;
    let opts = BatchOptions {
        jobs: cfg.resolve_jobs()?,
        timings: !cli.global.no_timings,
    };
    let report_path = cli.global.report.as_deref();
    let json = match &cli.command {
        Command::Compress { inputs, output } => {
            let r = commands::compress(inputs, output.as_deref(), &cfg, opts)?;
            warn_failures(
                r.items
                    .iter()
                    .filter_map(|i| Some((i.input.as_str(), i.error.as_deref()?))),
            );
            for i in &r.items {
                i.warnings
                    .iter()
                    .for_each(|w| eprintln!("warning: {}: {w}", i.input));
            }
            r.to_json()?
        }
        Command::Decompress {
            inputs,
            output,
            reference,
        } => {
            let r =
                commands::decompress(inputs, output.as_deref(), reference.as_deref(), &cfg, opts)?;
            warn_failures(
                r.items
                    .iter()
                    .filter_map(|i| Some((i.input.as_str(), i.error.as_deref()?))),
            );
            r.to_json()?
        }
        Command::Analyze { inputs, nmi, .. } => {
            let r = commands::analyze(inputs, *nmi, &cfg, opts)?;
            warn_failures(
                r.items
                    .iter()
                    .filter_map(|i| Some((i.input.as_str(), i.error.as_deref()?))),
            );
            r.to_json()?
        }
        Command::Detect { inputs, baseline } => {
            let r = commands::detect(inputs, baseline.as_deref(), &cfg, opts)?;
            warn_failures(
                r.items
                    .iter()
                    .filter_map(|i| Some((i.input.as_str(), i.error.as_deref()?))),
            );
            eprintln!("{}", r.summary.human());
            r.to_json()?
        }
        Command::Perturb {
            input,
            subtensor,
            level,
            mode,
            output,
        } => {
            let req = PerturbRequest {
                input,
                output: output.as_deref(),
                selector: *subtensor,
                levels: level,
                mode: match mode {
                    ModeArg::Additive => PerturbMode::AdditiveUniform,
                    ModeArg::Randomize => PerturbMode::RandomizeSequence,
                },
            };
            commands::perturb(&req, &cfg, opts)?.to_json()?
        }
    };
    emit(&json, report_path.map(Path::new))
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_usage() {
                ExitCode::from(2)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}
