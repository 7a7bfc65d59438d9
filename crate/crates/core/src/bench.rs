//! Throughput measurement per branch subset, with per-stage timings and
//! deterministic work counts.

use std::time::Duration;

use serde::Serialize;

use crate::branches::BranchKind;
use crate::error::Result;
use crate::evaluation::{branch_subsets, track, Sequence};
use crate::imaging::BoundingBox;
use crate::synth::{generate, Motion, Phase, Regime, SynthSpec};
use crate::tracker::{StageTimings, TrackerConfig};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StageMillis {
    pub crop: f64,
    pub embed: f64,
    pub correlate: f64,
    pub localize: f64,
}

impl StageMillis {
    fn per_frame(t: &StageTimings, frames: usize) -> Self {
        let ms = |d: Duration| d.as_secs_f64() * 1e3 / frames.max(1) as f64;
        Self {
            crop: ms(t.crop),
            embed: ms(t.embed),
            correlate: ms(t.correlate),
            localize: ms(t.localize),
        }
    }

    pub fn total(&self) -> f64 {
        self.crop + self.embed + self.correlate + self.localize
    }
}

/// Measurements of one branch subset. `frames`, `selection_frames` and
/// `embeddings` are deterministic; the rest is wall-clock.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchRow {
    pub branches: Vec<BranchKind>,
    pub frames: usize,
    pub selection_frames: usize,
    pub embeddings: usize,
    pub fps: f64,
    /// Mean per-frame stage cost over tracked frames (initialization excluded).
    pub stage_ms: StageMillis,
    /// Mean cost of frames that ran a selection, if any did.
    pub selection_frame_ms: Option<f64>,
    /// Mean cost of frames that only tracked.
    pub tracking_frame_ms: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchReport {
    pub sequence: String,
    pub search_side: usize,
    pub selection_interval: usize,
    pub rows: Vec<BenchRow>,
}

impl BenchReport {
    pub fn row(&self, kinds: &[BranchKind]) -> Option<&BenchRow> {
        self.rows.iter().find(|r| r.branches == kinds)
    }
}

/// Moving textured target on a clear background, used when no sequence is
/// given.
pub fn default_bench_sequence(frames: usize, seed: u64) -> Result<Sequence> {
    generate(&SynthSpec {
        name: "bench".into(),
        frames,
        initial_box: BoundingBox::new(100.0, 80.0, 40.0, 40.0),
        motion: Motion {
            velocity: [1.5, 1.0],
            ..Motion::default()
        },
        phases: vec![Phase {
            start: 0,
            regime: Regime::Clear,
        }],
        seed,
        ..SynthSpec::default()
    })
}

fn mean(xs: &[f64]) -> Option<f64> {
    (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
}

/// Tracks `seq` once with `cfg` and measures it.
pub fn bench_config(seq: &Sequence, cfg: &TrackerConfig) -> Result<BenchRow> {
    cfg.validate()?;
    let out = track(seq, 0, cfg, None)?;
    let tracked = &out.timings[1..];
    let mut total = StageTimings::default();
    tracked.iter().for_each(|t| total.add(t));
    let frames = tracked.len();
    let selected: Vec<usize> = out.selections.iter().skip(1).map(|r| r.frame).collect();
    let mut sel = Vec::new();
    let mut plain = Vec::new();
    for (k, t) in tracked.iter().enumerate() {
        let ms = t.total().as_secs_f64() * 1e3;
        if selected.contains(&(k + 1)) {
            sel.push(ms);
        } else {
            plain.push(ms);
        }
    }
    let secs = total.total().as_secs_f64();
    Ok(BenchRow {
        branches: cfg.branches.iter().map(|b| b.kind).collect(),
        frames,
        selection_frames: selected.len(),
        embeddings: out.embeddings.iter().sum(),
        fps: if secs > 0.0 { frames as f64 / secs } else { f64::INFINITY },
        stage_ms: StageMillis::per_frame(&total, frames),
        selection_frame_ms: mean(&sel),
        tracking_frame_ms: mean(&plain),
    })
}

/// Benchmarks every non-empty subset of the configured branches.
pub fn run_bench(seq: &Sequence, cfg: &TrackerConfig) -> Result<BenchReport> {
    let rows = branch_subsets(&cfg.branches)
        .into_iter()
        .map(|branches| {
            bench_config(
                seq,
                &TrackerConfig {
                    branches,
                    ..cfg.clone()
                },
            )
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(BenchReport {
        sequence: seq.name.clone(),
        search_side: cfg.search_side,
        selection_interval: cfg.selection_interval,
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn work_counts_follow_schedule() {
        let seq = default_bench_sequence(15, 3).unwrap();
        let cfg = TrackerConfig {
            selection_interval: 7,
            ..TrackerConfig::default()
        };
        let row = bench_config(&seq, &cfg).unwrap();
        assert_eq!(row.frames, 14);
        // Frames 7 and 14 select: 3 branch embeddings + 2 other scales.
        assert_eq!(row.selection_frames, 2);
        assert_eq!(row.embeddings, 3 + 12 * 3 + 2 * 5);
        assert!(row.selection_frame_ms.is_some() && row.tracking_frame_ms.is_some());
        let again = bench_config(&seq, &cfg).unwrap();
        assert_eq!((again.embeddings, again.selection_frames), (row.embeddings, row.selection_frames));
    }

    #[test]
    fn one_row_per_subset() {
        let seq = default_bench_sequence(3, 1).unwrap();
        let cfg = TrackerConfig::with_branches(&[BranchKind::Intensity, BranchKind::ColorHist]);
        let rep = run_bench(&seq, &cfg).unwrap();
        assert_eq!(rep.rows.len(), 3);
        assert!(rep.row(&[BranchKind::Intensity]).is_some());
        assert!(rep.row(&[BranchKind::Intensity, BranchKind::ColorHist]).is_some());
        assert!(rep.rows.iter().all(|r| r.stage_ms.total() > 0.0));
    }
}
