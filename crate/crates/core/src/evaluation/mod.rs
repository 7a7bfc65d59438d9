//! One-pass evaluation on OTB-layout datasets: sequence loading, center
//! error and overlap metrics, precision and success curves, and
//! sequence-parallel benchmark runs.

mod report;

use std::borrow::Cow;
use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;

use crate::branches::{BranchConfig, BranchId, BranchKind, EmbeddingStore};
use crate::error::{Error, Result};
use crate::imaging::{load_image, BoundingBox, ImageBuffer};
use crate::tracker::{track_sequence, ExternalEmbeddings, SelectionRecord, StageTimings, TrackerConfig};

pub use report::{csv_summary, svg_plots, to_json, write_report, ReportFormat};

/// Largest center-error threshold of the precision curve, in pixels.
pub const PRECISION_MAX_THRESHOLD: usize = 50;
/// Threshold at which precision is reported.
pub const PRECISION_REPORT_THRESHOLD: usize = 20;
/// Number of overlap thresholds of the success curve (0, 0.05, ..., 1).
pub const SUCCESS_POINTS: usize = 21;
/// Selection intervals of the default interval sweep.
pub const DEFAULT_SWEEP_INTERVALS: [usize; 6] = [1, 3, 5, 7, 10, 13];

const GROUND_TRUTH_FILE: &str = "groundtruth_rect.txt";
const ATTRIBUTES_FILE: &str = "attributes.txt";
const IMAGE_DIR: &str = "img";

#[derive(Debug, Clone)]
pub enum Frames {
    Files(Vec<PathBuf>),
    Memory(Arc<Vec<ImageBuffer>>),
}

#[derive(Debug, Clone)]
pub struct Sequence {
    pub name: String,
    pub frames: Frames,
    pub ground_truth: Vec<BoundingBox>,
    pub attributes: Vec<String>,
}

impl Sequence {
    pub fn in_memory(name: impl Into<String>, frames: Vec<ImageBuffer>, ground_truth: Vec<BoundingBox>) -> Result<Self> {
        let seq = Self {
            name: name.into(),
            frames: Frames::Memory(Arc::new(frames)),
            ground_truth,
            attributes: Vec::new(),
        };
        seq.validate()?;
        Ok(seq)
    }

    pub fn len(&self) -> usize {
        match &self.frames {
            Frames::Files(p) => p.len(),
            Frames::Memory(f) => f.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn frame(&self, index: usize) -> Result<Cow<'_, ImageBuffer>> {
        let missing = || self.error(format!("no frame {index}"));
        match &self.frames {
            Frames::Files(p) => load_image(p.get(index).ok_or_else(missing)?).map(Cow::Owned),
            Frames::Memory(f) => f.get(index).map(Cow::Borrowed).ok_or_else(missing),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.is_empty() {
            return Err(self.error("no frames".into()));
        }
        if self.ground_truth.len() != self.len() {
            return Err(self.error(format!(
                "{} frames but {} ground-truth boxes",
                self.len(),
                self.ground_truth.len()
            )));
        }
        self.ground_truth[0].validate()
    }

    fn error(&self, detail: String) -> Error {
        Error::Sequence {
            name: self.name.clone(),
            detail,
        }
    }
}

/// Parses ground-truth lines `x,y,w,h` (comma, tab or space separated) with
/// 1-based pixel coordinates into 0-based boxes. Blank lines are skipped.
pub fn parse_ground_truth(text: &str) -> Result<Vec<BoundingBox>> {
    let mut boxes = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let vals: Vec<f64> = line
            .split([',', '\t', ' '])
            .filter(|t| !t.is_empty())
            .map(|t| t.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::InvalidArgument(format!("ground truth line {}: {e}", n + 1)))?;
        if vals.len() != 4 {
            return Err(Error::InvalidArgument(format!(
                "ground truth line {}: expected 4 values, found {}",
                n + 1,
                vals.len()
            )));
        }
        boxes.push(BoundingBox::new(vals[0] - 1.0, vals[1] - 1.0, vals[2], vals[3]));
    }
    Ok(boxes)
}

/// Formats boxes as 1-based `x,y,w,h` lines.
pub fn format_ground_truth(boxes: &[BoundingBox]) -> String {
    boxes
        .iter()
        .map(|b| format!("{},{},{},{}\n", b.x + 1.0, b.y + 1.0, b.w, b.h))
        .collect()
}

fn is_image(path: &Path) -> bool {
    matches!(
        path.extension().and_then(|e| e.to_str()).map(|e| e.to_ascii_lowercase()).as_deref(),
        Some("jpg" | "jpeg" | "png")
    )
}

/// Reads `dir/img/*` (sorted by file name) and `dir/groundtruth_rect.txt`.
/// An optional `attributes.txt` lists comma- or whitespace-separated tags.
pub fn load_otb_sequence(dir: impl AsRef<Path>) -> Result<Sequence> {
    let dir = dir.as_ref();
    let name = dir
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| dir.display().to_string());
    let img_dir = dir.join(IMAGE_DIR);
    let mut frames: Vec<PathBuf> = fs::read_dir(&img_dir)
        .map_err(|e| Error::io(&img_dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| is_image(p))
        .collect();
    frames.sort();
    let gt_path = dir.join(GROUND_TRUTH_FILE);
    let text = fs::read_to_string(&gt_path).map_err(|e| Error::io(&gt_path, e))?;
    let ground_truth = parse_ground_truth(&text).map_err(|e| Error::Sequence {
        name: name.clone(),
        detail: e.to_string(),
    })?;
    let attr_path = dir.join(ATTRIBUTES_FILE);
    let attributes = match fs::read_to_string(&attr_path) {
        Ok(s) => s
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|t| !t.is_empty())
            .map(str::to_owned)
            .collect(),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Vec::new(),
        Err(e) => return Err(Error::io(attr_path, e)),
    };
    let seq = Sequence {
        name,
        frames: Frames::Files(frames),
        ground_truth,
        attributes,
    };
    seq.validate()?;
    Ok(seq)
}

/// Loads every subdirectory of `root` that holds a ground-truth file,
/// sorted by name.
pub fn load_dataset(root: impl AsRef<Path>) -> Result<Vec<Sequence>> {
    let root = root.as_ref();
    let mut dirs: Vec<PathBuf> = fs::read_dir(root)
        .map_err(|e| Error::io(root, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join(GROUND_TRUTH_FILE).is_file())
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        return Err(Error::Sequence {
            name: root.display().to_string(),
            detail: "no sequences found".into(),
        });
    }
    dirs.iter().map(load_otb_sequence).collect()
}

/// Euclidean distance between box centers.
pub fn center_error(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let (ca, cb) = (a.center(), b.center());
    (ca.x - cb.x).hypot(ca.y - cb.y)
}

/// Intersection over union.
pub fn iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let iw = ((a.x + a.w).min(b.x + b.w) - a.x.max(b.x)).max(0.0);
    let ih = ((a.y + a.h).min(b.y + b.h) - a.y.max(b.y)).max(0.0);
    let inter = iw * ih;
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        (inter / union).clamp(0.0, 1.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PrecisionCurve {
    /// Fraction of frames with center error `<= t`, for `t = 0..=50` pixels.
    pub values: Vec<f64>,
    pub at_20: f64,
}

pub fn precision_curve(errors: &[f64]) -> Result<PrecisionCurve> {
    if errors.is_empty() {
        return Err(Error::Empty("center errors"));
    }
    let n = errors.len() as f64;
    let values: Vec<f64> = (0..=PRECISION_MAX_THRESHOLD)
        .map(|t| errors.iter().filter(|&&e| e <= t as f64).count() as f64 / n)
        .collect();
    Ok(PrecisionCurve {
        at_20: values[PRECISION_REPORT_THRESHOLD],
        values,
    })
}

/// Overlap threshold `k` of the success curve.
pub fn success_threshold(k: usize) -> f64 {
    k as f64 / (SUCCESS_POINTS - 1) as f64
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuccessCurve {
    /// Fraction of frames with IoU strictly above each threshold.
    pub values: Vec<f64>,
    /// Mean of `values`.
    pub auc: f64,
}

pub fn success_curve(ious: &[f64]) -> Result<SuccessCurve> {
    if ious.is_empty() {
        return Err(Error::Empty("overlaps"));
    }
    let n = ious.len() as f64;
    let values: Vec<f64> = (0..SUCCESS_POINTS)
        .map(|k| ious.iter().filter(|&&v| v > success_threshold(k)).count() as f64 / n)
        .collect();
    Ok(SuccessCurve {
        auc: values.iter().sum::<f64>() / SUCCESS_POINTS as f64,
        values,
    })
}

/// Predicted trajectory of one sequence.
#[derive(Debug, Clone, Default)]
pub struct RunOutput {
    pub boxes: Vec<BoundingBox>,
    /// Active branch per frame, when the predictor has branches.
    pub active: Vec<BranchId>,
    pub selections: Vec<SelectionRecord>,
    pub embeddings: Vec<usize>,
    pub timings: Vec<StageTimings>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SequenceReport {
    pub name: String,
    pub attributes: Vec<String>,
    pub frames: usize,
    pub boxes: Vec<BoundingBox>,
    pub center_errors: Vec<f64>,
    pub ious: Vec<f64>,
    pub precision: PrecisionCurve,
    pub success: SuccessCurve,
    pub precision_at_20: f64,
    pub auc: f64,
    pub mean_iou: f64,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub active_branches: Vec<BranchId>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub selection_trace: Option<Vec<SelectionRecord>>,
}

impl SequenceReport {
    /// Scores a predicted trajectory against ground truth.
    pub fn score(seq: &Sequence, output: &RunOutput, trace: bool) -> Result<Self> {
        if output.boxes.len() != seq.ground_truth.len() {
            return Err(seq.error(format!(
                "{} predicted boxes for {} frames",
                output.boxes.len(),
                seq.ground_truth.len()
            )));
        }
        let center_errors: Vec<f64> = output
            .boxes
            .iter()
            .zip(&seq.ground_truth)
            .map(|(p, g)| center_error(p, g))
            .collect();
        let ious: Vec<f64> = output.boxes.iter().zip(&seq.ground_truth).map(|(p, g)| iou(p, g)).collect();
        let precision = precision_curve(&center_errors)?;
        let success = success_curve(&ious)?;
        Ok(Self {
            name: seq.name.clone(),
            attributes: seq.attributes.clone(),
            frames: seq.len(),
            boxes: output.boxes.clone(),
            mean_iou: ious.iter().sum::<f64>() / ious.len() as f64,
            precision_at_20: precision.at_20,
            auc: success.auc,
            center_errors,
            ious,
            precision,
            success,
            active_branches: output.active.clone(),
            selection_trace: trace.then(|| output.selections.clone()),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SkippedSequence {
    pub name: String,
    pub error: String,
}

/// Mean metrics over a group of sequences.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Aggregate {
    pub sequences: usize,
    pub precision_at_20: f64,
    pub auc: f64,
    pub mean_iou: f64,
    pub precision: Vec<f64>,
    pub success: Vec<f64>,
}

impl Aggregate {
    fn of<'a>(reports: impl IntoIterator<Item = &'a SequenceReport>) -> Option<Self> {
        let reports: Vec<&SequenceReport> = reports.into_iter().collect();
        if reports.is_empty() {
            return None;
        }
        let n = reports.len() as f64;
        let mean = |f: &dyn Fn(&SequenceReport) -> f64| reports.iter().map(|r| f(r)).sum::<f64>() / n;
        let mean_curve = |f: &dyn Fn(&SequenceReport) -> &[f64]| {
            let len = f(reports[0]).len();
            (0..len).map(|i| reports.iter().map(|r| f(r)[i]).sum::<f64>() / n).collect()
        };
        Some(Self {
            sequences: reports.len(),
            precision_at_20: mean(&|r| r.precision_at_20),
            auc: mean(&|r| r.auc),
            mean_iou: mean(&|r| r.mean_iou),
            precision: mean_curve(&|r| &r.precision.values),
            success: mean_curve(&|r| &r.success.values),
        })
    }
}

/// Timing and work counts of a run; kept out of serialized reports.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunStats {
    pub frames: usize,
    pub embeddings: usize,
    pub timings: StageTimings,
}

impl RunStats {
    pub fn fps(&self) -> f64 {
        let secs = self.timings.total().as_secs_f64();
        if secs > 0.0 {
            self.frames as f64 / secs
        } else {
            f64::INFINITY
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub config: Option<TrackerConfig>,
    pub sequences: Vec<SequenceReport>,
    pub skipped: Vec<SkippedSequence>,
    /// `None` when every sequence was skipped.
    pub overall: Option<Aggregate>,
    /// Aggregates per attribute tag, keyed by tag.
    pub attributes: BTreeMap<String, Aggregate>,
    #[serde(skip)]
    pub stats: RunStats,
}

impl EvalReport {
    fn assemble(config: Option<TrackerConfig>, results: Vec<(String, Result<(SequenceReport, RunStats)>)>) -> Self {
        let mut sequences = Vec::new();
        let mut skipped = Vec::new();
        let mut stats = RunStats::default();
        for (name, res) in results {
            match res {
                Ok((rep, st)) => {
                    stats.frames += st.frames;
                    stats.embeddings += st.embeddings;
                    stats.timings.add(&st.timings);
                    sequences.push(rep);
                }
                Err(e) => skipped.push(SkippedSequence {
                    name,
                    error: e.to_string(),
                }),
            }
        }
        let overall = Aggregate::of(&sequences);
        let tags: std::collections::BTreeSet<&String> = sequences.iter().flat_map(|s| &s.attributes).collect();
        let attributes = tags
            .into_iter()
            .filter_map(|tag| {
                Aggregate::of(sequences.iter().filter(|s| s.attributes.contains(tag))).map(|a| (tag.clone(), a))
            })
            .collect();
        Self {
            config,
            sequences,
            skipped,
            overall,
            attributes,
            stats,
        }
    }

    pub fn mean_auc(&self) -> f64 {
        self.overall.as_ref().map_or(0.0, |a| a.auc)
    }

    pub fn mean_iou(&self) -> f64 {
        self.overall.as_ref().map_or(0.0, |a| a.mean_iou)
    }

    pub fn mean_precision_at_20(&self) -> f64 {
        self.overall.as_ref().map_or(0.0, |a| a.precision_at_20)
    }
}

#[derive(Debug, Clone, Default)]
pub struct OpeOptions {
    /// Worker threads; 0 uses all available cores.
    pub jobs: usize,
    /// Keep per-sequence selection traces in the report.
    pub trace_selection: bool,
    /// Embeddings for an external branch. Sequence ids in the store are
    /// positions in the name-sorted dataset.
    pub embeddings: Option<Arc<EmbeddingStore>>,
}

fn pool(jobs: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))
}

fn sorted(dataset: &[Sequence]) -> Vec<&Sequence> {
    let mut seqs: Vec<&Sequence> = dataset.iter().collect();
    seqs.sort_by(|a, b| a.name.cmp(&b.name));
    seqs
}

/// Runs `predict` on every sequence (in parallel, ordered by name) and
/// scores the outputs. The predictor receives the sequence's position in the
/// name-sorted dataset. Failing sequences are reported as skipped.
pub fn run_ope_with<F>(dataset: &[Sequence], opts: &OpeOptions, predict: F) -> Result<EvalReport>
where
    F: Fn(usize, &Sequence) -> Result<RunOutput> + Sync,
{
    if dataset.is_empty() {
        return Err(Error::Empty("dataset"));
    }
    let seqs = sorted(dataset);
    let results = pool(opts.jobs)?.install(|| {
        seqs.par_iter()
            .enumerate()
            .map(|(i, seq)| {
                let res = seq.validate().and_then(|_| predict(i, seq)).and_then(|out| {
                    let report = SequenceReport::score(seq, &out, opts.trace_selection)?;
                    let mut timings = StageTimings::default();
                    out.timings.iter().for_each(|t| timings.add(t));
                    let stats = RunStats {
                        frames: out.boxes.len(),
                        embeddings: out.embeddings.iter().sum(),
                        timings,
                    };
                    Ok((report, stats))
                });
                (seq.name.clone(), res)
            })
            .collect::<Vec<_>>()
    });
    Ok(EvalReport::assemble(None, results))
}

/// Tracks one sequence with the configured tracker, initialized from the
/// first ground-truth box.
pub fn track(seq: &Sequence, seq_index: usize, cfg: &TrackerConfig, embeddings: Option<&Arc<EmbeddingStore>>) -> Result<RunOutput> {
    let external = embeddings.map(|store| ExternalEmbeddings {
        store: store.clone(),
        sequence: seq_index as u32,
    });
    let run = track_sequence((0..seq.len()).map(|i| seq.frame(i)), &seq.ground_truth[0], cfg, external)?;
    Ok(RunOutput {
        boxes: run.boxes,
        active: run.active,
        selections: run.selections,
        embeddings: run.embeddings,
        timings: run.timings,
    })
}

/// One-pass evaluation of the tracker: initialized once per sequence from
/// the first ground-truth box and never reset.
pub fn run_ope(dataset: &[Sequence], cfg: &TrackerConfig, opts: &OpeOptions) -> Result<EvalReport> {
    cfg.validate()?;
    let mut report = run_ope_with(dataset, opts, |i, seq| track(seq, i, cfg, opts.embeddings.as_ref()))?;
    report.config = Some(cfg.clone());
    Ok(report)
}

/// All non-empty subsets of `branches`, smallest first, each keeping the
/// relative order of the input. Explicit ids are dropped so every subset is
/// renumbered from 0.
pub fn branch_subsets(branches: &[BranchConfig]) -> Vec<Vec<BranchConfig>> {
    let n = branches.len();
    let mut subsets: Vec<Vec<usize>> = (1..(1u32 << n))
        .map(|m| (0..n).filter(|i| m & (1 << i) != 0).collect())
        .collect();
    subsets.sort_by(|a, b| a.len().cmp(&b.len()).then_with(|| a.cmp(b)));
    subsets
        .into_iter()
        .map(|idx| {
            idx.into_iter()
                .map(|i| BranchConfig {
                    id: None,
                    ..branches[i].clone()
                })
                .collect()
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationRow {
    pub branches: Vec<BranchKind>,
    pub report: EvalReport,
}

/// Runs the benchmark once per non-empty subset of the configured branches.
pub fn run_ablation(dataset: &[Sequence], cfg: &TrackerConfig, opts: &OpeOptions) -> Result<Vec<AblationRow>> {
    if cfg.branches.len() > 8 {
        return Err(Error::Config("ablation supports at most 8 branches".into()));
    }
    branch_subsets(&cfg.branches)
        .into_iter()
        .map(|subset| {
            let kinds = subset.iter().map(|b| b.kind).collect();
            let sub_cfg = TrackerConfig {
                branches: subset,
                ..cfg.clone()
            };
            Ok(AblationRow {
                branches: kinds,
                report: run_ope(dataset, &sub_cfg, opts)?,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub interval: usize,
    pub report: EvalReport,
}

/// Runs the benchmark once per selection interval.
pub fn run_interval_sweep(
    dataset: &[Sequence],
    cfg: &TrackerConfig,
    intervals: &[usize],
    opts: &OpeOptions,
) -> Result<Vec<SweepRow>> {
    if intervals.is_empty() {
        return Err(Error::Empty("sweep intervals"));
    }
    intervals
        .iter()
        .map(|&interval| {
            let c = TrackerConfig {
                selection_interval: interval,
                ..cfg.clone()
            };
            Ok(SweepRow {
                interval,
                report: run_ope(dataset, &c, opts)?,
            })
        })
        .collect()
}
