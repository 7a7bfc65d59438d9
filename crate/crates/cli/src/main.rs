//! `branchtrack` command-line front end.
//!
//! Exit codes: 0 on success, 1 when tracking or evaluation fails, 2 for
//! usage, configuration and input errors.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use branchtrack::bench::{default_bench_sequence, run_bench, BenchReport};
use branchtrack::branches::{read_embedding_store, BranchConfig, BranchKind, EmbeddingStore};
use branchtrack::evaluation::{
    csv_summary, load_dataset, load_otb_sequence, run_ablation, run_interval_sweep, run_ope, svg_plots, to_json,
    AblationRow, EvalReport, OpeOptions, ReportFormat, Sequence, SweepRow, DEFAULT_SWEEP_INTERVALS,
};
use branchtrack::synth::{alternating_specs, certify, generate, write_otb, SynthSpec};
use branchtrack::tracker::TrackerConfig;
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "branchtrack", version, about = "Multi-branch template tracker with online branch selection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Track one OTB-layout sequence and write per-frame boxes as CSV.
    Track(TrackArgs),
    /// One-pass evaluation over a dataset directory or a synthetic preset.
    Eval(EvalArgs),
    /// Generate synthetic sequences in OTB layout.
    SynthGen(SynthArgs),
    /// Measure throughput per branch subset.
    Bench(BenchArgs),
}

/// Tracker overrides shared by every subcommand. Flags win over the file.
#[derive(Args, Clone, Default)]
struct TrackerArgs {
    /// JSON file with `TrackerConfig` fields; missing fields take defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Comma-separated branch kinds, e.g. `intensity,gradient_hist,color_hist`.
    #[arg(long, value_delimiter = ',')]
    branches: Option<Vec<String>>,
    /// Comma-separated selection weights, one per branch.
    #[arg(long, value_delimiter = ',')]
    weights: Option<Vec<f64>>,
    /// Frames between branch selections.
    #[arg(long)]
    interval: Option<usize>,
    /// Comma-separated search pyramid scale factors.
    #[arg(long, value_delimiter = ',')]
    scales: Option<Vec<f64>>,
    /// Precomputed embeddings for an external branch.
    #[arg(long)]
    embeddings: Option<PathBuf>,
}

#[derive(Args)]
struct TrackArgs {
    /// Sequence directory holding `img/` and `groundtruth_rect.txt`.
    sequence: PathBuf,
    #[command(flatten)]
    tracker: TrackerArgs,
    /// Trajectory CSV; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also score the run against ground truth and write the report here.
    #[arg(long)]
    report: Option<PathBuf>,
    #[arg(long, default_value = "json")]
    format: String,
    /// Include branch scores of every selection frame in the report.
    #[arg(long)]
    trace_selection: bool,
}

#[derive(Args)]
struct EvalArgs {
    /// Dataset root with one OTB-layout directory per sequence.
    #[arg(required_unless_present = "preset", conflicts_with = "preset")]
    dataset: Option<PathBuf>,
    /// Evaluate a generated suite instead of a dataset directory.
    #[arg(long, value_parser = ["alternating"])]
    preset: Option<String>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[command(flatten)]
    tracker: TrackerArgs,
    /// Report path; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value = "json")]
    format: String,
    /// Worker threads; 0 uses every available core.
    #[arg(long, default_value_t = 0)]
    jobs: usize,
    #[arg(long)]
    trace_selection: bool,
    /// One report per non-empty subset of the configured branches.
    #[arg(long, conflicts_with = "sweep_interval")]
    ablation: bool,
    /// One report per selection interval, e.g. `1,3,5,7,10,13`.
    #[arg(long, value_delimiter = ',', num_args = 0..)]
    sweep_interval: Option<Vec<usize>>,
}

#[derive(Args)]
struct SynthArgs {
    /// Output root; each sequence gets its own directory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_parser = ["alternating"], required_unless_present = "spec", conflicts_with = "spec")]
    preset: Option<String>,
    /// JSON file with one `SynthSpec` or a list of them.
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Overrides the seed of every generated sequence.
    #[arg(long)]
    seed: Option<u64>,
    /// Score every built-in branch per phase and write `certification.json`.
    #[arg(long)]
    certify: bool,
}

#[derive(Args)]
struct BenchArgs {
    /// Sequence to track; a generated moving target when omitted.
    #[arg(long)]
    sequence: Option<PathBuf>,
    #[arg(long, default_value_t = 100)]
    frames: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    tracker: TrackerArgs,
    #[arg(long)]
    out: Option<PathBuf>,
    /// `json` or `csv`.
    #[arg(long, default_value = "json")]
    format: String,
}

#[derive(Debug)]
enum CliError {
    /// Bad flags, config or inputs.
    Usage(String),
    /// The run itself failed.
    Failed(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Failed(_) => 1,
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn usage<T, E: std::fmt::Display>(r: std::result::Result<T, E>) -> CliResult<T> {
    r.map_err(|e| CliError::Usage(e.to_string()))
}

fn failed<T, E: std::fmt::Display>(r: std::result::Result<T, E>) -> CliResult<T> {
    r.map_err(|e| CliError::Failed(e.to_string()))
}

impl TrackerArgs {
    fn resolve(&self) -> CliResult<TrackerConfig> {
        let mut cfg = match &self.config {
            Some(path) => {
                let text = usage(fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display())))?;
                usage(serde_json::from_str::<TrackerConfig>(&text).map_err(|e| format!("{}: {e}", path.display())))?
            }
            None => TrackerConfig::default(),
        };
        if let Some(names) = &self.branches {
            cfg.branches = names
                .iter()
                .map(|n| usage(n.parse::<BranchKind>()).map(BranchConfig::new))
                .collect::<CliResult<_>>()?;
        }
        if let Some(weights) = &self.weights {
            if weights.len() != cfg.branches.len() {
                return Err(CliError::Usage(format!(
                    "{} weights given for {} branches",
                    weights.len(),
                    cfg.branches.len()
                )));
            }
            for (b, &w) in cfg.branches.iter_mut().zip(weights) {
                b.weight = Some(w);
            }
        }
        if let Some(t) = self.interval {
            cfg.selection_interval = t;
        }
        if let Some(scales) = &self.scales {
            cfg.scale_factors = scales.clone();
        }
        usage(cfg.validate())?;
        Ok(cfg)
    }

    fn embeddings(&self) -> CliResult<Option<Arc<EmbeddingStore>>> {
        self.embeddings
            .as_ref()
            .map(|p| usage(read_embedding_store(p)).map(Arc::new))
            .transpose()
    }
}

fn parse_format(s: &str) -> CliResult<ReportFormat> {
    usage(s.parse::<ReportFormat>())
}

fn emit(out: Option<&Path>, body: &str) -> CliResult<()> {
    match out {
        Some(p) => usage(fs::write(p, body).map_err(|e| format!("{}: {e}", p.display()))),
        None => {
            print!("{body}");
            Ok(())
        }
    }
}

fn cmd_track(args: &TrackArgs) -> CliResult<()> {
    let cfg = args.tracker.resolve()?;
    let format = parse_format(&args.format)?;
    let embeddings = args.tracker.embeddings()?;
    let seq = usage(load_otb_sequence(&args.sequence))?;
    let opts = OpeOptions {
        jobs: 1,
        trace_selection: args.trace_selection,
        embeddings,
    };
    let report = failed(run_ope(std::slice::from_ref(&seq), &cfg, &opts))?;
    let Some(rep) = report.sequences.first() else {
        let why = report.skipped.first().map_or("no output".to_string(), |s| s.error.clone());
        return Err(CliError::Failed(why));
    };
    let names: Vec<&str> = cfg.branches.iter().map(|b| b.kind.name()).collect();
    let mut csv = String::from("frame,x,y,w,h,active_branch\n");
    for (k, b) in rep.boxes.iter().enumerate() {
        let branch = rep.active_branches.get(k).and_then(|&i| names.get(i)).unwrap_or(&"");
        let _ = writeln!(csv, "{},{:.3},{:.3},{:.3},{:.3},{branch}", k + 1, b.x, b.y, b.w, b.h);
    }
    emit(args.out.as_deref(), &csv)?;
    if let Some(path) = &args.report {
        emit(Some(path), &render_report(&report, format)?)?;
    }
    Ok(())
}

fn render_report(report: &EvalReport, format: ReportFormat) -> CliResult<String> {
    Ok(match format {
        ReportFormat::Json => failed(to_json(report))?,
        ReportFormat::Csv => csv_summary(report),
        ReportFormat::Svg => svg_plots(&[("tracker", report)]),
    })
}

fn subset_label(kinds: &[BranchKind]) -> String {
    kinds.iter().map(|k| k.name()).collect::<Vec<_>>().join("+")
}

fn render_ablation(rows: &[AblationRow], format: ReportFormat) -> CliResult<String> {
    Ok(match format {
        ReportFormat::Json => failed(to_json(rows))?,
        ReportFormat::Csv => {
            let mut s = String::from("branches,precision_at_20,auc,mean_iou\n");
            for r in rows {
                let _ = writeln!(
                    s,
                    "{},{:.6},{:.6},{:.6}",
                    subset_label(&r.branches),
                    r.report.mean_precision_at_20(),
                    r.report.mean_auc(),
                    r.report.mean_iou()
                );
            }
            s
        }
        ReportFormat::Svg => {
            let labels: Vec<String> = rows.iter().map(|r| subset_label(&r.branches)).collect();
            let series: Vec<(&str, &EvalReport)> = labels.iter().map(String::as_str).zip(rows.iter().map(|r| &r.report)).collect();
            svg_plots(&series)
        }
    })
}

fn render_sweep(rows: &[SweepRow], format: ReportFormat) -> CliResult<String> {
    Ok(match format {
        ReportFormat::Json => failed(to_json(rows))?,
        ReportFormat::Csv => {
            let mut s = String::from("interval,precision_at_20,auc,mean_iou\n");
            for r in rows {
                let _ = writeln!(
                    s,
                    "{},{:.6},{:.6},{:.6}",
                    r.interval,
                    r.report.mean_precision_at_20(),
                    r.report.mean_auc(),
                    r.report.mean_iou()
                );
            }
            s
        }
        ReportFormat::Svg => {
            let labels: Vec<String> = rows.iter().map(|r| format!("T={}", r.interval)).collect();
            let series: Vec<(&str, &EvalReport)> = labels.iter().map(String::as_str).zip(rows.iter().map(|r| &r.report)).collect();
            svg_plots(&series)
        }
    })
}

fn cmd_eval(args: &EvalArgs) -> CliResult<()> {
    let cfg = args.tracker.resolve()?;
    let format = parse_format(&args.format)?;
    let opts = OpeOptions {
        jobs: args.jobs,
        trace_selection: args.trace_selection,
        embeddings: args.tracker.embeddings()?,
    };
    let dataset: Vec<Sequence> = match (&args.dataset, &args.preset) {
        (Some(dir), _) => usage(load_dataset(dir))?,
        (None, _) => failed(
            alternating_specs(args.seed)
                .iter()
                .map(generate)
                .collect::<branchtrack::Result<Vec<_>>>(),
        )?,
    };
    let body = if args.ablation {
        render_ablation(&failed(run_ablation(&dataset, &cfg, &opts))?, format)?
    } else if let Some(intervals) = &args.sweep_interval {
        let intervals = if intervals.is_empty() { DEFAULT_SWEEP_INTERVALS.to_vec() } else { intervals.clone() };
        if intervals.contains(&0) {
            return Err(CliError::Usage("sweep intervals must be >= 1".into()));
        }
        render_sweep(&failed(run_interval_sweep(&dataset, &cfg, &intervals, &opts))?, format)?
    } else {
        let report = failed(run_ope(&dataset, &cfg, &opts))?;
        if report.sequences.is_empty() {
            return Err(CliError::Failed("every sequence failed".into()));
        }
        render_report(&report, format)?
    };
    emit(args.out.as_deref(), &body)
}

fn cmd_synth(args: &SynthArgs) -> CliResult<()> {
    let mut specs: Vec<SynthSpec> = match &args.spec {
        Some(path) => {
            let text = usage(fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display())))?;
            let value: serde_json::Value = usage(serde_json::from_str(&text))?;
            if value.is_array() {
                usage(serde_json::from_value(value))?
            } else {
                vec![usage(serde_json::from_value(value))?]
            }
        }
        None => alternating_specs(args.seed.unwrap_or(1)),
    };
    if let (Some(seed), Some(_)) = (args.seed, &args.spec) {
        specs.iter_mut().for_each(|s| s.seed = seed);
    }
    for spec in &specs {
        usage(spec.validate())?;
    }
    let mut entries = Vec::with_capacity(specs.len());
    for spec in specs {
        let seq = failed(generate(&spec))?;
        failed(write_otb(&spec, &seq, args.out.join(&spec.name)))?;
        eprintln!("wrote {} ({} frames)", args.out.join(&spec.name).display(), seq.len());
        entries.push((spec, seq));
    }
    if args.certify {
        let cert = failed(certify(&entries, &TrackerConfig::default()))?;
        emit(Some(&args.out.join("certification.json")), &failed(to_json(&cert))?)?;
        if !cert.passed() {
            return Err(CliError::Failed(format!(
                "regime asymmetry not certified: only {:?} win a phase",
                cert.winners
            )));
        }
    }
    Ok(())
}

fn bench_csv(report: &BenchReport) -> String {
    let mut s = String::from(
        "branches,frames,selection_frames,embeddings,fps,crop_ms,embed_ms,correlate_ms,localize_ms,selection_frame_ms,tracking_frame_ms\n",
    );
    let opt = |v: Option<f64>| v.map_or(String::new(), |v| format!("{v:.3}"));
    for r in &report.rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{:.2},{:.3},{:.3},{:.3},{:.3},{},{}",
            subset_label(&r.branches),
            r.frames,
            r.selection_frames,
            r.embeddings,
            r.fps,
            r.stage_ms.crop,
            r.stage_ms.embed,
            r.stage_ms.correlate,
            r.stage_ms.localize,
            opt(r.selection_frame_ms),
            opt(r.tracking_frame_ms)
        );
    }
    s
}

fn cmd_bench(args: &BenchArgs) -> CliResult<()> {
    let cfg = args.tracker.resolve()?;
    let format = parse_format(&args.format)?;
    if cfg.branches.iter().any(|b| b.kind == BranchKind::External) {
        return Err(CliError::Usage("bench runs built-in branches only".into()));
    }
    let seq = match &args.sequence {
        Some(dir) => usage(load_otb_sequence(dir))?,
        None => usage(default_bench_sequence(args.frames.max(2), args.seed))?,
    };
    let report = failed(run_bench(&seq, &cfg))?;
    let body = match format {
        ReportFormat::Json => failed(to_json(&report))?,
        ReportFormat::Csv => bench_csv(&report),
        ReportFormat::Svg => return Err(CliError::Usage("bench supports json and csv".into())),
    };
    emit(args.out.as_deref(), &body)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match &cli.command {
        Command::Track(a) => cmd_track(a),
        Command::Eval(a) => cmd_eval(a),
        Command::SynthGen(a) => cmd_synth(a),
        Command::Bench(a) => cmd_bench(a),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            match &e {
                CliError::Usage(m) | CliError::Failed(m) => eprintln!("error: {m}"),
            }
            ExitCode::from(e.code())
        }
    }
}
