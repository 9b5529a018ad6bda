//! `crowdcount` command-line front end.
//!
//! Exit status: 0 on success, 2 for invalid flags or input data, 1 for
//! run-time failures (I/O, non-finite loss).

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use crowdcount::annotations::load_annotations;
use crowdcount::bayes_loss::LossEvaluator;
use crowdcount::cdm::{read_raster, write_raster};
use crowdcount::density::{generate_gt_density, render_overlay, KernelParams};
use crowdcount::detect_count::{count_persons, load_detections, DEFAULT_SCORE_THRESHOLD};
use crowdcount::evalreport::{build_report, load_counts};
use crowdcount::fit::{fit_density, FitConfig, FitInit, StepRule};
use crowdcount::{BayesConfig, DistanceMode, FrameAnnotation, GridSpec};

#[derive(Parser)]
#[command(name = "crowdcount", version, about = "Crowd density maps, Bayesian counting loss and count reports")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the ground-truth density raster (CDM1) of an annotated frame
    GenDensity(GenDensityArgs),
    /// Print the Bayesian loss of an estimated raster as JSON
    Loss(LossArgs),
    /// Fit a density field to the annotations by projected subgradient descent
    Fit(FitArgs),
    /// Print per-frame person counts of detector output as CSV
    CountDetections(CountArgs),
    /// Replace the red channel of an image with a density raster (PNG)
    Render(RenderArgs),
    /// Build the count-comparison report from a counts CSV
    Report(ReportArgs),
}

#[derive(Args)]
struct FrameArgs {
    /// Annotation JSON file
    #[arg(long)]
    annotations: PathBuf,
    /// Frame id to use; optional when the file holds a single frame
    #[arg(long)]
    frame: Option<String>,
}

#[derive(Args)]
struct GenDensityArgs {
    #[command(flatten)]
    frame: FrameArgs,
    /// Gaussian kernel sigma in pixels
    #[arg(long, default_value_t = 8.0)]
    sigma: f64,
    /// Pixels per density cell
    #[arg(long, default_value_t = 1.0)]
    stride: f64,
    /// Cut the kernel off at this many sigmas (approximate; default: no cut-off)
    #[arg(long)]
    truncation: Option<f64>,
    /// Output CDM1 raster
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum DMode {
    FractionOfMinSide,
    AbsolutePixels,
}

#[derive(Args)]
struct BayesArgs {
    /// Likelihood kernel sigma in pixels
    #[arg(long, default_value_t = 8.0)]
    sigma: f64,
    /// Background distance (see --d-mode)
    #[arg(long, default_value_t = 0.15)]
    d: f64,
    /// How --d converts to pixels
    #[arg(long, value_enum, default_value_t = DMode::FractionOfMinSide)]
    d_mode: DMode,
    /// Disable the background label
    #[arg(long)]
    no_background: bool,
    /// Use the nearest head's likelihood as background-posterior numerator
    #[arg(long)]
    literal_background_numerator: bool,
}

impl BayesArgs {
    fn config(&self) -> Result<BayesConfig> {
        let cfg = BayesConfig {
            sigma: self.sigma,
            background_enabled: !self.no_background,
            d: self.d,
            d_mode: match self.d_mode {
                DMode::FractionOfMinSide => DistanceMode::FractionOfMinSide,
                DMode::AbsolutePixels => DistanceMode::AbsolutePixels,
            },
            literal_background_numerator: self.literal_background_numerator,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct LossArgs {
    #[command(flatten)]
    frame: FrameArgs,
    /// Estimated density raster (CDM1); its stride sets the grid
    #[arg(long)]
    est: PathBuf,
    #[command(flatten)]
    bayes: BayesArgs,
}

#[derive(Clone, Copy, ValueEnum)]
enum Rule {
    Polyak,
    Constant,
}

#[derive(Args)]
struct FitArgs {
    #[command(flatten)]
    frame: FrameArgs,
    #[command(flatten)]
    bayes: BayesArgs,
    /// Pixels per density cell
    #[arg(long, default_value_t = 1.0)]
    stride: f64,
    /// Number of descent steps
    #[arg(long, default_value_t = 500)]
    steps: usize,
    /// Step size (relaxation factor for the polyak rule)
    #[arg(long, default_value_t = 0.5)]
    step_size: f64,
    /// Step rule
    #[arg(long, value_enum, default_value_t = Rule::Polyak)]
    step_rule: Rule,
    /// Initial field: zeros, uniform:<value> or gt
    #[arg(long, default_value = "zeros", value_parser = parse_init)]
    init: FitInit,
    /// Record the trace every N steps
    #[arg(long, default_value_t = 10)]
    trace_every: usize,
    /// Trace CSV output (step,loss,total_count)
    #[arg(long)]
    trace_out: PathBuf,
    /// Final field output (CDM1)
    #[arg(long)]
    out: PathBuf,
}

fn parse_init(s: &str) -> std::result::Result<FitInit, String> {
    match s {
        "zeros" => Ok(FitInit::Zeros),
        "gt" => Ok(FitInit::GtDensity),
        _ => s
            .strip_prefix("uniform:")
            .and_then(|v| v.parse::<f64>().ok())
            .filter(|v| v.is_finite() && *v >= 0.0)
            .map(FitInit::Uniform)
            .ok_or_else(|| format!("expected zeros, gt or uniform:<non-negative value>, got '{s}'")),
    }
}

#[derive(Args)]
struct CountArgs {
    /// Detections JSON file
    #[arg(long)]
    detections: PathBuf,
    /// Minimum score for a person detection to count
    #[arg(long, default_value_t = DEFAULT_SCORE_THRESHOLD)]
    threshold: f64,
}

#[derive(Args)]
struct RenderArgs {
    /// Input RGB image
    #[arg(long)]
    image: PathBuf,
    /// Density raster (CDM1) matching the image
    #[arg(long)]
    density: PathBuf,
    /// Output PNG
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ReportArgs {
    /// Counts CSV (scenario,method,estimated,ground_truth)
    #[arg(long)]
    counts: PathBuf,
    /// Write the Markdown table here instead of stdout
    #[arg(long)]
    out_md: Option<PathBuf>,
    /// Also write the JSON report
    #[arg(long)]
    out_json: Option<PathBuf>,
}

/// Bad flags or arguments detected by the CLI itself.
#[derive(Debug)]
struct UsageError(String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn select_frame(args: &FrameArgs) -> Result<FrameAnnotation> {
    let frames = load_annotations(&args.annotations)?;
    match &args.frame {
        Some(id) => frames
            .into_iter()
            .find(|f| &f.frame_id == id)
            .ok_or_else(|| usage(format!("frame '{id}' not found in {}", args.annotations.display()))),
        None if frames.len() == 1 => Ok(frames.into_iter().next().unwrap()),
        None => Err(usage(format!(
            "{} holds {} frames; pick one with --frame",
            args.annotations.display(),
            frames.len()
        ))),
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).with_context(|| format!("cannot write {}", path.display()))
}

fn run(cli: Cli) -> Result<()> {
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    match cli.command {
        Command::GenDensity(a) => {
            let mut params = KernelParams::new(a.sigma)?;
            if let Some(r) = a.truncation {
                params = params.truncated(r)?;
            }
            let frame = select_frame(&a.frame)?;
            let spec = GridSpec::for_frame(&frame, a.stride)?;
            let grid = generate_gt_density(&frame, &spec, &params)?;
            write_raster(&a.out, &grid)?;
        }
        Command::Loss(a) => {
            let cfg = a.bayes.config()?;
            let frame = select_frame(&a.frame)?;
            let est = read_raster(&a.est)?;
            let result = LossEvaluator::new(&frame, est.spec(), &cfg)?.evaluate(&est)?;
            writeln!(out, "{}", result.to_json())?;
        }
        Command::Fit(a) => {
            let cfg = a.bayes.config()?;
            let fitcfg = FitConfig {
                steps: a.steps,
                step_size: a.step_size,
                init: a.init,
                record_trace_every: a.trace_every,
                step_rule: match a.step_rule {
                    Rule::Polyak => StepRule::Polyak,
                    Rule::Constant => StepRule::Constant,
                },
            };
            fitcfg.validate()?;
            let frame = select_frame(&a.frame)?;
            let spec = GridSpec::for_frame(&frame, a.stride)?;
            let trace = fit_density(&frame, &spec, &cfg, &fitcfg)?;
            write_file(&a.trace_out, trace.to_csv().as_bytes())?;
            write_raster(&a.out, &trace.final_grid)?;
        }
        Command::CountDetections(a) => {
            if !(0.0..=1.0).contains(&a.threshold) {
                return Err(usage(format!("--threshold must lie in [0, 1], got {}", a.threshold)));
            }
            let sets = load_detections(&a.detections)?;
            writeln!(out, "frame_id,count")?;
            for set in &sets {
                writeln!(out, "{},{}", set.frame_id, count_persons(set, a.threshold))?;
            }
        }
        Command::Render(a) => {
            let grid = read_raster(&a.density)?;
            let image = image::open(&a.image)
                .with_context(|| format!("cannot read image {}", a.image.display()))?
                .to_rgb8();
            let overlay = render_overlay(&image, &grid)?;
            overlay
                .save_with_format(&a.out, image::ImageFormat::Png)
                .with_context(|| format!("cannot write {}", a.out.display()))?;
        }
        Command::Report(a) => {
            let records = load_counts(&a.counts)?;
            let report = build_report(&records)?;
            let md = report.to_markdown();
            match &a.out_md {
                Some(path) => write_file(path, md.as_bytes())?,
                None => out.write_all(md.as_bytes())?,
            }
            if let Some(path) = &a.out_json {
                write_file(path, report.to_json().as_bytes())?;
            }
        }
    }
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<UsageError>().is_some() {
        return 2;
    }
    match err.downcast_ref::<crowdcount::Error>() {
        Some(e) if e.is_validation() => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
