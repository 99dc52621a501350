//! `fadm anonymize` and `fadm evaluate`.
//!
//! Exit codes: 0 success, 1 configuration error (nothing processed),
//! 2 runtime or partial failure. Every error is printed as a single line
//! starting with `fadm: error:`.

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::bridge::{BridgeClient, ClientConfig, RemoteDetector, RemoteExtractor, RemoteInpainter, ENDPOINT_ENV};
use crate::config::{CliConfigFile, DetectorKind, ExtractorKind, InpainterKind};
use crate::dataset::{
    emit_report, list_images, load_annotations, read_image, DatasetSource, DatasetSink, MetricRow,
};
use crate::detection::{DetectorBackend, OracleDetector};
use crate::error::Error;
use crate::generative::{InpaintBackend, MockInpainter};
use crate::metrics::{
    extract_all, fid, inception_score, moments_from_features, FeatureExtractor, ToyExtractor,
};
use crate::pipeline::{anonymize_dataset, Backends, Method};

pub const DIAGNOSTIC_PREFIX: &str = "fadm: error:";

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "fadm", version, about = "Full-body person anonymization")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Anonymize every person in a directory (or single file) of images.
    Anonymize(AnonymizeArgs),
    /// Compute IS and/or FID between image directories.
    Evaluate(EvaluateArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    Fadm,
    Blur,
    /// Constant fill.
    Mask,
    Pixelize,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Fadm => Method::Fadm,
            MethodArg::Blur => Method::Blur,
            MethodArg::Mask => Method::MaskFill,
            MethodArg::Pixelize => Method::Pixelize,
        }
    }
}

#[derive(Debug, Args)]
pub struct AnonymizeArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long, value_enum)]
    pub method: Option<MethodArg>,
    /// Denoising strength in [0, 1].
    #[arg(long)]
    pub denoise: Option<f64>,
    /// Global seed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum)]
    pub backend: Option<InpainterKind>,
    /// Bridge address (host:port); falls back to $FADM_BRIDGE_ENDPOINT.
    #[arg(long)]
    pub endpoint: Option<String>,
    #[arg(long)]
    pub annotations: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub detector: Option<DetectorKind>,
    #[arg(long)]
    pub workers: Option<usize>,
    /// Skip images already completed under the same configuration.
    #[arg(long)]
    pub resume: bool,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Where summary.json and report.md go. Defaults to `<output>.report`.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum MetricArg {
    Is,
    Fid,
    Both,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long, value_enum, default_value = "both")]
    pub metric: MetricArg,
    /// Reference images (needed for FID).
    #[arg(long)]
    pub real: Option<PathBuf>,
    #[arg(long)]
    pub generated: PathBuf,
    #[arg(long, value_enum)]
    pub extractor: Option<ExtractorKind>,
    #[arg(long)]
    pub splits: Option<usize>,
    #[arg(long)]
    pub endpoint: Option<String>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub report: Option<PathBuf>,
}

/// A failure together with its exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl Failure {
    fn config(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_CONFIG,
            message: message.into(),
        }
    }

    fn runtime(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_RUNTIME,
            message: message.into(),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Transport { .. }
            | Error::Protocol(_)
            | Error::Backend { .. }
            | Error::CorruptFile { .. }
            | Error::Io { .. }
            | Error::Batch { .. } => EXIT_RUNTIME,
            _ => EXIT_CONFIG,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Parse `args` (including the program name) and run. Returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            print!("{e}");
            return EXIT_OK;
        }
        Err(e) => {
            let text = e.to_string();
            let first = text.lines().next().unwrap_or("invalid arguments");
            eprintln!("{DIAGNOSTIC_PREFIX} {}", one_line(first.trim_start_matches("error: ")));
            return EXIT_CONFIG;
        }
    };
    let outcome = match cli.command {
        Command::Anonymize(a) => cmd_anonymize(&a),
        Command::Evaluate(a) => cmd_evaluate(&a),
    };
    match outcome {
        Ok(code) => code,
        Err(f) => {
            eprintln!("{DIAGNOSTIC_PREFIX} {}", one_line(&f.message));
            f.code
        }
    }
}

fn load_config(path: Option<&Path>) -> Result<CliConfigFile, Failure> {
    match path {
        Some(p) => CliConfigFile::load(p).map_err(|e| Failure::config(e.to_string())),
        None => Ok(CliConfigFile::default()),
    }
}

/// Endpoint by precedence: flag, environment, config file.
fn resolve_endpoint(flag: Option<&str>, file: Option<&str>) -> Option<String> {
    flag.map(str::to_string)
        .or_else(|| std::env::var(ENDPOINT_ENV).ok().filter(|s| !s.trim().is_empty()))
        .or_else(|| file.map(str::to_string))
}

fn connect(endpoint: &str, file: &CliConfigFile) -> Result<BridgeClient, Failure> {
    let config = ClientConfig {
        connect_timeout: Duration::from_millis(file.backend.connect_timeout_ms),
        retries: file.backend.retries,
        ..ClientConfig::default()
    };
    BridgeClient::connect(endpoint, config).map_err(|e| Failure::runtime(e.to_string()))
}

/// Merge file and flags into the effective configuration. Exposed so the
/// precedence can be inspected without running anything.
pub fn effective_config(args: &AnonymizeArgs) -> Result<CliConfigFile, Failure> {
    let mut file = load_config(args.config.as_deref())?;
    let a = &mut file.anonymization;
    if let Some(m) = args.method {
        a.method = m.into();
    }
    if let Some(d) = args.denoise {
        if !(0.0..=1.0).contains(&d) {
            return Err(Failure::config(format!("--denoise {d} outside [0, 1]")));
        }
        a.diffusion.denoise_strength = d;
    }
    if let Some(s) = args.seed {
        a.global_seed = s;
    }
    if let Some(w) = args.workers {
        a.workers = w;
    }
    let b = &mut file.backend;
    if let Some(k) = args.backend {
        b.inpainter = k;
    }
    if let Some(k) = args.detector {
        b.detector = k;
    }
    if let Some(p) = &args.annotations {
        b.annotations = Some(p.clone());
    }
    b.endpoint = resolve_endpoint(args.endpoint.as_deref(), b.endpoint.as_deref());
    Ok(file)
}

fn cmd_anonymize(args: &AnonymizeArgs) -> Result<i32, Failure> {
    let file = effective_config(args)?;
    let config = &file.anonymization;
    config.validate().map_err(|e| Failure::config(e.to_string()))?;
    if !args.input.exists() {
        return Err(Failure::config(format!("--input {} does not exist", args.input.display())));
    }
    let needs_inpainter = config.method.classical().is_none();
    let needs_endpoint =
        file.backend.detector == DetectorKind::Remote || (needs_inpainter && file.backend.inpainter == InpainterKind::Remote);
    if file.backend.detector == DetectorKind::Oracle && file.backend.annotations.is_none() {
        return Err(Failure::config("--detector oracle requires --annotations"));
    }
    if needs_endpoint && file.backend.endpoint.is_none() {
        return Err(Failure::config(format!("remote backend requires --endpoint or ${ENDPOINT_ENV}")));
    }

    let mut source = DatasetSource::new(&args.input);
    if let Some(ann) = &file.backend.annotations {
        source = source.with_annotations(ann);
    }
    let detector: Box<dyn DetectorBackend> = match file.backend.detector {
        DetectorKind::Oracle => {
            let path = file.backend.annotations.as_ref().expect("checked above");
            Box::new(OracleDetector::new(load_annotations(path).map_err(|e| Failure::config(e.to_string()))?))
        }
        DetectorKind::Remote => Box::new(RemoteDetector::new(connect(
            file.backend.endpoint.as_deref().expect("checked above"),
            &file,
        )?)),
    };
    let inpainter: Box<dyn InpaintBackend> = match file.backend.inpainter {
        InpainterKind::Remote if needs_inpainter => Box::new(RemoteInpainter::new(connect(
            file.backend.endpoint.as_deref().expect("checked above"),
            &file,
        )?)),
        _ => Box::new(MockInpainter),
    };
    let sink = DatasetSink::new(&args.output).resume(args.resume);
    let backends = Backends {
        detector: detector.as_ref(),
        inpainter: inpainter.as_ref(),
    };
    let summary = anonymize_dataset(&source, &sink, config, backends)?;

    let report_dir = args.report.clone().unwrap_or_else(|| {
        let mut name = args.output.file_name().map(OsString::from).unwrap_or_else(|| "output".into());
        name.push(".report");
        args.output.with_file_name(name)
    });
    emit_report(Some(&summary), &[], &report_dir).map_err(|e| Failure::runtime(e.to_string()))?;

    let c = &summary.counts;
    println!(
        "{}: {} processed, {} skipped, {} failed, {} instances ({} fallback); report in {}",
        config.method.label(),
        c.processed,
        c.skipped,
        c.failed,
        c.instances_anonymized,
        c.instances_fallback,
        report_dir.display()
    );
    if summary.has_failures() {
        let ids: Vec<&str> = summary.failures.iter().map(|(id, _)| id.as_str()).collect();
        return Err(Failure::runtime(format!("{} image(s) failed: {}", ids.len(), ids.join(", "))));
    }
    Ok(EXIT_OK)
}

fn load_dir(flag: &str, dir: &Path) -> Result<Vec<crate::image::RasterImage>, Failure> {
    let entries = list_images(dir).map_err(|e| Failure::config(format!("{flag}: {e}")))?;
    if entries.is_empty() {
        return Err(Failure::config(format!("{flag} {} contains no images", dir.display())));
    }
    entries
        .iter()
        .map(|e| read_image(&e.path).map_err(|err| Failure::runtime(err.to_string())))
        .collect()
}

fn cmd_evaluate(args: &EvaluateArgs) -> Result<i32, Failure> {
    let file = load_config(args.config.as_deref())?;
    let splits = args.splits.unwrap_or(file.evaluate.splits);
    if splits == 0 {
        return Err(Failure::config("--splits must be at least 1"));
    }
    let want_is = args.metric != MetricArg::Fid;
    let want_fid = args.metric != MetricArg::Is;
    if want_fid && args.real.is_none() {
        return Err(Failure::config("--metric fid requires --real"));
    }
    let kind = args.extractor.unwrap_or(file.backend.extractor);
    let endpoint = resolve_endpoint(args.endpoint.as_deref(), file.backend.endpoint.as_deref());
    if kind == ExtractorKind::Remote && endpoint.is_none() {
        return Err(Failure::config(format!("--extractor remote requires --endpoint or ${ENDPOINT_ENV}")));
    }
    let generated = load_dir("--generated", &args.generated)?;
    let real = match (&args.real, want_fid) {
        (Some(dir), true) => Some(load_dir("--real", dir)?),
        _ => None,
    };

    let (classes, dims) = (file.evaluate.classes, file.evaluate.dims);
    let extractor: Box<dyn FeatureExtractor> = match kind {
        ExtractorKind::Toy => Box::new(ToyExtractor::new(classes, dims)),
        ExtractorKind::Remote => Box::new(RemoteExtractor::new(
            connect(endpoint.as_deref().expect("checked above"), &file)?,
            classes,
            dims,
        )),
    };

    let (gen_probs, gen_feats) = extract_all(&generated, extractor.as_ref())?;
    let mut row = MetricRow {
        method: args
            .generated
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "generated".into()),
        is_mean: None,
        is_std: None,
        fid: None,
    };
    if want_is {
        let (mean, std) = inception_score(&gen_probs, splits)?;
        println!("IS {mean:.6} ± {std:.6} ({} images, {splits} splits)", gen_probs.len());
        row.is_mean = Some(mean);
        row.is_std = Some(std);
    }
    if let Some(real) = real {
        let (_, real_feats) = extract_all(&real, extractor.as_ref())?;
        let score = fid(&moments_from_features(&real_feats)?, &moments_from_features(&gen_feats)?)?;
        if score.numerically_suspect() {
            log::warn!("FID raw value {} clamped; min eigenvalue {}", score.raw, score.min_eigenvalue);
        }
        println!("FID {:.6}", score.value);
        row.fid = Some(score.value);
    }
    if let Some(dir) = &args.report {
        emit_report(None, std::slice::from_ref(&row), dir).map_err(|e| Failure::runtime(e.to_string()))?;
    }
    Ok(EXIT_OK)
}
