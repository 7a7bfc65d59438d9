//! Deterministic synthetic sequences with exact ground truth.
//!
//! A checkered target moves over a background whose appearance changes in
//! phases. Each regime is built so that a single cue separates target from
//! background: hue, texture, or brightness. The target itself never changes,
//! so a template taken on the first frame stays valid and what varies is
//! which embedding can still tell the target apart.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::branches::BranchKind;
use crate::error::{Error, Result};
use crate::evaluation::{format_ground_truth, iou, Sequence};
use crate::imaging::{save_image, BoundingBox, ImageBuffer};
use crate::tracker::{TrackerConfig, TrackerState};

pub const DEFAULT_WIDTH: usize = 320;
pub const DEFAULT_HEIGHT: usize = 240;
pub const DEFAULT_NOISE_STD: f64 = 0.02;
/// Frames per phase of the alternating suite.
pub const PHASE_LENGTH: usize = 30;

/// Side of one checker square, in pixels at the initial target scale.
const CHECKER: f64 = 4.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    /// Darker blue background: every cue separates the target.
    Clear,
    /// Same texture and brightness as the target, different hue.
    ColorDistinct,
    /// Flat background at the target's mean brightness and hue.
    GradientDistinct,
    /// Same texture and color bins as the target, darker.
    LuminanceDistinct,
    /// Background close to the target on every cue.
    LowContrast,
    /// Clear background with an opaque bar sweeping across the target.
    OccludedBand,
    /// Brightness regime whose background turns brighter than the target
    /// halfway through the phase.
    ContrastInvert,
}

impl Regime {
    pub fn name(&self) -> &'static str {
        match self {
            Regime::Clear => "clear",
            Regime::ColorDistinct => "color_distinct",
            Regime::GradientDistinct => "gradient_distinct",
            Regime::LuminanceDistinct => "luminance_distinct",
            Regime::LowContrast => "low_contrast",
            Regime::OccludedBand => "occluded_band",
            Regime::ContrastInvert => "contrast_invert",
        }
    }

    /// Built-in branch the regime is designed to favor.
    pub fn favored_branch(&self) -> Option<BranchKind> {
        match self {
            Regime::ColorDistinct => Some(BranchKind::ColorHist),
            Regime::GradientDistinct => Some(BranchKind::GradientHist),
            Regime::LuminanceDistinct => Some(BranchKind::Intensity),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Phase {
    /// First frame of the phase; the phase lasts until the next one starts.
    pub start: usize,
    pub regime: Regime,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Motion {
    /// Pixels per frame.
    pub velocity: [f64; 2],
    /// Reflect the velocity when the target would leave the frame.
    pub bounce: bool,
    /// Target size on the last frame relative to the first, reached linearly.
    pub scale_end: f64,
}

impl Default for Motion {
    fn default() -> Self {
        Self {
            velocity: [0.0, 0.0],
            bounce: true,
            scale_end: 1.0,
        }
    }
}

/// A short-lived flat square drawn behind the target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Distractor {
    pub start: usize,
    pub frames: usize,
    /// Center offset from the target center on the first frame.
    pub offset: [f64; 2],
    /// Pixels per frame, relative to the frame.
    pub velocity: [f64; 2],
    pub side: f64,
    pub rgb: [f32; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub name: String,
    pub width: usize,
    pub height: usize,
    pub frames: usize,
    pub initial_box: BoundingBox,
    pub motion: Motion,
    pub phases: Vec<Phase>,
    pub distractors: Vec<Distractor>,
    pub noise_std: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            name: "synthetic".into(),
            width: DEFAULT_WIDTH,
            height: DEFAULT_HEIGHT,
            frames: 60,
            initial_box: BoundingBox::new(140.0, 100.0, 40.0, 40.0),
            motion: Motion::default(),
            phases: vec![Phase {
                start: 0,
                regime: Regime::Clear,
            }],
            distractors: Vec::new(),
            noise_std: DEFAULT_NOISE_STD,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Synth(m));
        if self.width < 16 || self.height < 16 {
            return bad(format!("frame size {}x{} too small", self.width, self.height));
        }
        if self.frames == 0 {
            return bad("frames must be >= 1".into());
        }
        self.initial_box.validate()?;
        if self.phases.first().map(|p| p.start) != Some(0) {
            return bad("phases must start at frame 0".into());
        }
        if self.phases.windows(2).any(|w| w[1].start <= w[0].start) {
            return bad("phase starts must be strictly increasing".into());
        }
        if self.phases.last().is_some_and(|p| p.start >= self.frames) {
            return bad("last phase starts after the final frame".into());
        }
        if !(self.noise_std.is_finite() && self.noise_std >= 0.0) {
            return bad(format!("noise_std {} must be >= 0", self.noise_std));
        }
        if !(self.motion.scale_end.is_finite() && self.motion.scale_end > 0.0) {
            return bad(format!("scale_end {} must be > 0", self.motion.scale_end));
        }
        if self.motion.velocity.iter().any(|v| !v.is_finite()) {
            return bad("velocity must be finite".into());
        }
        Ok(())
    }

    /// Regime of frame `k`.
    pub fn regime_at(&self, k: usize) -> Regime {
        self.phases
            .iter()
            .rev()
            .find(|p| p.start <= k)
            .map_or(Regime::Clear, |p| p.regime)
    }

    /// Frame range of every phase.
    pub fn phase_ranges(&self) -> Vec<(std::ops::Range<usize>, Regime)> {
        self.phases
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let end = self.phases.get(i + 1).map_or(self.frames, |n| n.start);
                (p.start..end, p.regime)
            })
            .collect()
    }

    /// Ground-truth boxes of every frame.
    pub fn trajectory(&self) -> Vec<BoundingBox> {
        let b0 = self.initial_box;
        let (w, h) = (self.width as f64, self.height as f64);
        let mut c = b0.center();
        let mut v = self.motion.velocity;
        let denom = (self.frames.max(2) - 1) as f64;
        (0..self.frames)
            .map(|k| {
                let s = 1.0 + (self.motion.scale_end - 1.0) * k as f64 / denom;
                let (bw, bh) = (b0.w * s, b0.h * s);
                if k > 0 {
                    c.x += v[0];
                    c.y += v[1];
                    if self.motion.bounce {
                        bounce(&mut c.x, &mut v[0], bw / 2.0, w - bw / 2.0);
                        bounce(&mut c.y, &mut v[1], bh / 2.0, h - bh / 2.0);
                    }
                }
                BoundingBox::from_center(c, bw, bh)
            })
            .collect()
    }

    /// Attribute tags: the distinct regimes of this `SynthSpec`, in first-use order.
    pub fn attributes(&self) -> Vec<String> {
        let mut tags: Vec<String> = Vec::new();
        for p in &self.phases {
            let name = p.regime.name().to_string();
            if !tags.contains(&name) {
                tags.push(name);
            }
        }
        if !self.distractors.is_empty() {
            tags.push("distractor".into());
        }
        tags
    }
}

fn bounce(pos: &mut f64, vel: &mut f64, lo: f64, hi: f64) {
    if hi <= lo {
        *pos = (lo + hi) / 2.0;
        return;
    }
    if *pos < lo {
        *pos = 2.0 * lo - *pos;
        *vel = vel.abs();
    } else if *pos > hi {
        *pos = 2.0 * hi - *pos;
        *vel = -vel.abs();
    }
    *pos = pos.clamp(lo, hi);
}

/// RGB of a hue (0 = red, 1/3 = green, 2/3 = blue) at value `v` and
/// saturation `s`.
fn hsv(hue: f32, s: f32, v: f32) -> [f32; 3] {
    let lo = v * (1.0 - s);
    match (hue * 3.0).round() as i32 % 3 {
        0 => [v, lo, lo],
        1 => [lo, v, lo],
        _ => [lo, lo, v],
    }
}

// Every textured surface uses two checker levels. Target and all "same
// bin" backgrounds keep saturation at or below 1/4 and value at or above 3/4,
// where the color histogram's saturation and value bins saturate, so only
// hue and brightness patterns differ between them.
const SAT: f32 = 0.2;
const TARGET_V: [f32; 2] = [0.85, 1.0];
const DARK_V: [f32; 2] = [0.76, 0.91];
const RED: f32 = 0.0;
const GREEN: f32 = 1.0 / 3.0;
const BLUE: f32 = 2.0 / 3.0;

fn checker(u: f64, v: f64, side: f64) -> usize {
    (((u / side).floor() + (v / side).floor()).rem_euclid(2.0)) as usize
}

struct Scene<'a> {
    spec: &'a SynthSpec,
    frame: usize,
    regime: Regime,
    bbox: BoundingBox,
    distractors: Vec<(BoundingBox, [f32; 3])>,
    phase_progress: f64,
}

impl Scene<'_> {
    fn background(&self, x: f64, y: f64) -> [f32; 3] {
        let c = checker(x, y, CHECKER);
        match self.regime {
            Regime::Clear | Regime::OccludedBand => hsv(BLUE, 0.5, 0.7),
            Regime::ColorDistinct => hsv(GREEN, SAT, TARGET_V[c]),
            Regime::GradientDistinct => hsv(RED, SAT, (TARGET_V[0] + TARGET_V[1]) / 2.0),
            Regime::LuminanceDistinct => hsv(RED, SAT, DARK_V[c]),
            Regime::LowContrast => hsv(RED, SAT, TARGET_V[c] - 0.03),
            Regime::ContrastInvert => {
                if self.phase_progress < 0.5 {
                    hsv(RED, SAT, DARK_V[c])
                } else {
                    // Brighter than the target, in the same hue and value bins.
                    hsv(RED, [0.08, 0.02][c], 1.0)
                }
            }
        }
    }

    fn target(&self, x: f64, y: f64) -> [f32; 3] {
        let scale = self.bbox.w / self.spec.initial_box.w;
        let c = checker(x - self.bbox.x, y - self.bbox.y, CHECKER * scale);
        hsv(RED, SAT, TARGET_V[c])
    }

    fn pixel(&self, px: usize, py: usize) -> [f32; 3] {
        let (x, y) = (px as f64 + 0.5, py as f64 + 0.5);
        let inside = |b: &BoundingBox| x >= b.x && x < b.x + b.w && y >= b.y && y < b.y + b.h;
        if self.regime == Regime::OccludedBand {
            let b = &self.bbox;
            let bar_w = 0.6 * b.w;
            let bar_x = b.x - bar_w + self.phase_progress * (b.w + bar_w);
            if x >= bar_x && x < bar_x + bar_w {
                return [0.5, 0.5, 0.5];
            }
        }
        if inside(&self.bbox) {
            return self.target(x, y);
        }
        for (d, rgb) in self.distractors.iter().rev() {
            if inside(d) {
                return *rgb;
            }
        }
        self.background(x, y)
    }
}

fn render(spec: &SynthSpec, boxes: &[BoundingBox], k: usize) -> Result<ImageBuffer> {
    let regime = spec.regime_at(k);
    let (range, _) = spec
        .phase_ranges()
        .into_iter()
        .find(|(r, _)| r.contains(&k))
        .ok_or_else(|| Error::Synth(format!("frame {k} outside every phase")))?;
    let phase_progress = (k - range.start) as f64 / range.len().max(1) as f64;
    let distractors = spec
        .distractors
        .iter()
        .filter(|d| (d.start..d.start + d.frames).contains(&k))
        .map(|d| {
            let anchor = boxes[d.start].center();
            let t = (k - d.start) as f64;
            let cx = anchor.x + d.offset[0] + d.velocity[0] * t;
            let cy = anchor.y + d.offset[1] + d.velocity[1] * t;
            (
                BoundingBox::from_center(crate::imaging::Point::new(cx, cy), d.side, d.side),
                d.rgb,
            )
        })
        .collect();
    let scene = Scene {
        spec,
        frame: k,
        regime,
        bbox: boxes[k],
        distractors,
        phase_progress,
    };
    let (w, h) = (spec.width, spec.height);
    let mut data = Vec::with_capacity(w * h * 3);
    for y in 0..h {
        for x in 0..w {
            data.extend_from_slice(&scene.pixel(x, y));
        }
    }
    if spec.noise_std > 0.0 {
        let normal = Normal::new(0.0f32, spec.noise_std as f32).map_err(|e| Error::Synth(e.to_string()))?;
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        rng.set_stream(scene.frame as u64);
        for v in data.iter_mut() {
            *v = (*v + normal.sample(&mut rng)).clamp(0.0, 1.0);
        }
    }
    ImageBuffer::new(w, h, 3, data)
}

/// Renders every frame of `spec` with its exact ground truth.
pub fn generate(spec: &SynthSpec) -> Result<Sequence> {
    spec.validate()?;
    let boxes = spec.trajectory();
    let frames = (0..spec.frames)
        .into_par_iter()
        .map(|k| render(spec, &boxes, k))
        .collect::<Result<Vec<_>>>()?;
    let mut seq = Sequence::in_memory(spec.name.clone(), frames, boxes)?;
    seq.attributes = spec.attributes();
    Ok(seq)
}

/// Writes `seq` in OTB layout under `dir`: `img/0001.png...`,
/// `groundtruth_rect.txt`, `attributes.txt`, and the `SynthSpec` as `spec.json`.
pub fn write_otb(spec: &SynthSpec, seq: &Sequence, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    let img = dir.join("img");
    fs::create_dir_all(&img).map_err(|e| Error::io(&img, e))?;
    (0..seq.len()).into_par_iter().try_for_each(|k| {
        let frame = seq.frame(k)?;
        save_image(&frame, img.join(format!("{:04}.png", k + 1)))
    })?;
    let write = |name: &str, body: String| {
        let p = dir.join(name);
        fs::write(&p, body).map_err(|e| Error::io(&p, e))
    };
    write("groundtruth_rect.txt", format_ground_truth(&seq.ground_truth))?;
    write("attributes.txt", seq.attributes.join(",") + "\n")?;
    write("spec.json", serde_json::to_string_pretty(spec)? + "\n")
}

/// Mean IoU of a single-branch tracker on one phase, restarted from the
/// ground truth at the phase start but keeping the first-frame exemplar.
pub fn phase_score(seq: &Sequence, frames: std::ops::Range<usize>, kind: BranchKind, cfg: &TrackerConfig) -> Result<f64> {
    let cfg = TrackerConfig {
        branches: vec![crate::branches::BranchConfig::new(kind)],
        ..cfg.clone()
    };
    let mut state = TrackerState::init(&*seq.frame(0)?, &seq.ground_truth[0], &cfg)?;
    let start = frames.start.max(1);
    state.reset_to(&seq.ground_truth[start - 1]);
    let mut total = 0.0;
    let mut n = 0usize;
    for k in start..frames.end {
        let r = state.track_frame(&*seq.frame(k)?)?;
        total += iou(&r.bbox, &seq.ground_truth[k]);
        n += 1;
    }
    Ok(if n == 0 { 0.0 } else { total / n as f64 })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PhaseCheck {
    pub sequence: String,
    pub start: usize,
    pub regime: Regime,
    /// Mean IoU per built-in branch, in [`BranchKind::BUILTIN`] order.
    pub mean_iou: [f64; 3],
    pub best: BranchKind,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Certification {
    pub phases: Vec<PhaseCheck>,
    /// Built-in branches that are best on at least one phase.
    pub winners: Vec<BranchKind>,
    /// Fraction of regime-tagged phases won by the favored branch.
    pub favored_rate: f64,
}

impl Certification {
    pub fn passed(&self) -> bool {
        BranchKind::BUILTIN.iter().all(|k| self.winners.contains(k))
    }
}

/// Scores every built-in branch on every non-clear phase of every sequence.
pub fn certify(suite: &[(SynthSpec, Sequence)], cfg: &TrackerConfig) -> Result<Certification> {
    let jobs: Vec<(usize, std::ops::Range<usize>, Regime)> = suite
        .iter()
        .enumerate()
        .flat_map(|(i, (spec, _))| {
            spec.phase_ranges()
                .into_iter()
                .filter(|(_, r)| *r != Regime::Clear)
                .map(move |(range, r)| (i, range, r))
        })
        .collect();
    let phases = jobs
        .par_iter()
        .map(|(i, range, regime)| {
            let seq = &suite[*i].1;
            let mut scores = [0.0; 3];
            for (s, kind) in scores.iter_mut().zip(BranchKind::BUILTIN) {
                *s = phase_score(seq, range.clone(), kind, cfg)?;
            }
            let best = (0..3).fold(0, |b, j| if scores[j] > scores[b] { j } else { b });
            Ok(PhaseCheck {
                sequence: seq.name.clone(),
                start: range.start,
                regime: *regime,
                mean_iou: scores,
                best: BranchKind::BUILTIN[best],
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut winners: Vec<BranchKind> = BranchKind::BUILTIN
        .into_iter()
        .filter(|k| phases.iter().any(|p| p.best == *k))
        .collect();
    winners.sort();
    let tagged: Vec<&PhaseCheck> = phases.iter().filter(|p| p.regime.favored_branch().is_some()).collect();
    let favored = tagged.iter().filter(|p| p.regime.favored_branch() == Some(p.best)).count();
    Ok(Certification {
        favored_rate: if tagged.is_empty() { 0.0 } else { favored as f64 / tagged.len() as f64 },
        phases,
        winners,
    })
}

/// Lengths of the opening clear phase of each suite sequence. They differ so
/// that regime switches do not line up with any fixed selection schedule.
const LEAD_IN: [usize; 6] = [30, 26, 33, 28, 35, 24];
/// Decoys per suite sequence.
const DECOYS: usize = 8;
const DECOY_FRAMES: usize = 2;
const DECOY_DISTANCE: f64 = 45.0;
const DECOY_SPEED: f64 = 25.0;
const DECOY_RGB: [f32; 3] = [0.95, 0.95, 1.0];

/// Specs of the alternating suite: six sequences that open with a clear
/// phase and then cycle through the color, gradient and brightness regimes
/// in different orders, switching every [`PHASE_LENGTH`] frames.
///
/// During color and gradient phases, bright target-sized decoys flash for
/// two frames next to the target and race away from it. They inflate the
/// response range of the intensity branch, which is blind in those phases,
/// so a selection made on a decoy frame picks a branch that follows the
/// decoy out of the search region.
pub fn alternating_specs(seed: u64) -> Vec<SynthSpec> {
    use Regime::{ColorDistinct as C, GradientDistinct as G, LuminanceDistinct as L};
    let orders: [[Regime; 6]; 6] = [
        [C, G, L, C, G, L],
        [G, L, C, G, L, C],
        [L, C, G, L, C, G],
        [C, L, G, C, L, G],
        [G, C, L, G, C, L],
        [L, G, C, L, G, C],
    ];
    let starts = [(60.0, 50.0), (200.0, 60.0), (120.0, 150.0), (220.0, 160.0), (80.0, 170.0), (150.0, 40.0)];
    let velocities = [[2.5, 1.5], [-2.0, 2.0], [2.0, -2.5], [-2.5, -1.5], [3.0, -1.0], [-1.5, 2.5]];
    orders
        .iter()
        .enumerate()
        .map(|(i, order)| {
            let lead = LEAD_IN[i];
            let mut phases = vec![Phase {
                start: 0,
                regime: Regime::Clear,
            }];
            phases.extend(order.iter().enumerate().map(|(j, &regime)| Phase {
                start: lead + j * PHASE_LENGTH,
                regime,
            }));
            let seq_seed = seed.wrapping_mul(1_000_003).wrapping_add(i as u64);
            let mut spec = SynthSpec {
                name: format!("alternating_{:02}", i + 1),
                frames: lead + order.len() * PHASE_LENGTH,
                initial_box: BoundingBox::new(starts[i].0, starts[i].1, 40.0, 40.0),
                motion: Motion {
                    velocity: velocities[i],
                    ..Motion::default()
                },
                phases,
                seed: seq_seed,
                ..SynthSpec::default()
            };
            spec.distractors = decoys(&spec, seq_seed);
            spec
        })
        .collect()
}

fn decoys(spec: &SynthSpec, seed: u64) -> Vec<Distractor> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xdec0_7);
    // Start frames whose decoy stays inside one color or gradient phase.
    let slots: Vec<usize> = spec
        .phase_ranges()
        .into_iter()
        .filter(|(_, regime)| matches!(regime, Regime::ColorDistinct | Regime::GradientDistinct))
        .flat_map(|(range, _)| range.start..range.end + 1 - DECOY_FRAMES)
        .collect();
    (0..DECOYS)
        .map(|_| {
            let start = slots[rng.random_range(0..slots.len())];
            let angle: f64 = rng.random_range(0.0..std::f64::consts::TAU);
            let (dx, dy) = (angle.cos(), angle.sin());
            Distractor {
                start,
                frames: DECOY_FRAMES,
                offset: [DECOY_DISTANCE * dx, DECOY_DISTANCE * dy],
                velocity: [DECOY_SPEED * dx, DECOY_SPEED * dy],
                side: spec.initial_box.w,
                rgb: DECOY_RGB,
            }
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct AlternatingSuite {
    pub entries: Vec<(SynthSpec, Sequence)>,
    pub certification: Certification,
}

impl AlternatingSuite {
    pub fn sequences(&self) -> Vec<Sequence> {
        self.entries.iter().map(|(_, s)| s.clone()).collect()
    }
}

/// Generates and certifies the alternating suite. Fails unless every
/// built-in branch is the best single branch on at least one phase.
pub fn alternating_suite(seed: u64) -> Result<AlternatingSuite> {
    let entries = alternating_specs(seed)
        .into_iter()
        .map(|spec| generate(&spec).map(|seq| (spec, seq)))
        .collect::<Result<Vec<_>>>()?;
    let certification = certify(&entries, &TrackerConfig::default())?;
    if !certification.passed() {
        return Err(Error::Synth(format!(
            "regime asymmetry not certified: only {:?} win a phase",
            certification.winners
        )));
    }
    Ok(AlternatingSuite { entries, certification })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::branches::color_hist_votes;

    #[test]
    fn static_noiseless_single_phase_is_constant() {
        let spec = SynthSpec {
            frames: 4,
            noise_std: 0.0,
            ..SynthSpec::default()
        };
        let seq = generate(&spec).unwrap();
        let f0 = seq.frame(0).unwrap().into_owned();
        for k in 1..4 {
            assert_eq!(*seq.frame(k).unwrap(), f0);
            assert_eq!(seq.ground_truth[k], seq.ground_truth[0]);
        }
    }

    #[test]
    fn same_seed_same_frames() {
        let spec = SynthSpec {
            frames: 3,
            motion: Motion {
                velocity: [1.5, -0.5],
                ..Motion::default()
            },
            seed: 42,
            ..SynthSpec::default()
        };
        let a = generate(&spec).unwrap();
        let b = generate(&spec).unwrap();
        for k in 0..3 {
            assert_eq!(*a.frame(k).unwrap(), *b.frame(k).unwrap());
        }
        let c = generate(&SynthSpec { seed: 43, ..spec }).unwrap();
        assert_ne!(*a.frame(1).unwrap(), *c.frame(1).unwrap());
    }

    #[test]
    fn spec_validation() {
        let no_zero = SynthSpec {
            phases: vec![Phase {
                start: 3,
                regime: Regime::Clear,
            }],
            ..SynthSpec::default()
        };
        assert!(matches!(generate(&no_zero), Err(Error::Synth(_))));
        let unordered = SynthSpec {
            phases: vec![
                Phase { start: 0, regime: Regime::Clear },
                Phase { start: 10, regime: Regime::ColorDistinct },
                Phase { start: 10, regime: Regime::GradientDistinct },
            ],
            ..SynthSpec::default()
        };
        assert!(unordered.validate().is_err());
        let late = SynthSpec {
            frames: 5,
            phases: vec![
                Phase { start: 0, regime: Regime::Clear },
                Phase { start: 5, regime: Regime::ColorDistinct },
            ],
            ..SynthSpec::default()
        };
        assert!(late.validate().is_err());
        assert!(serde_json::from_str::<SynthSpec>(r#"{"phases":[{"start":0,"regime":"sunny"}]}"#).is_err());
    }

    #[test]
    fn trajectory_moves_bounces_and_scales() {
        let spec = SynthSpec {
            frames: 101,
            initial_box: BoundingBox::new(10.0, 100.0, 40.0, 40.0),
            motion: Motion {
                velocity: [-2.0, 0.0],
                bounce: true,
                scale_end: 1.5,
            },
            ..SynthSpec::default()
        };
        let t = spec.trajectory();
        assert_eq!(t[0], spec.initial_box);
        assert!(t.iter().all(|b| b.x >= -1e-9));
        assert!((t[100].w - 60.0).abs() < 1e-9);
        assert!(t[100].center().x > t[0].center().x);
    }

    #[test]
    fn same_bin_regimes_share_color_votes() {
        // Target and the gradient- and brightness-regime backgrounds fall in
        // the same saturated color bins.
        let px = |rgb: [f32; 3]| ImageBuffer::new(1, 1, 3, rgb.to_vec()).unwrap();
        let reference = color_hist_votes(&px(hsv(RED, SAT, TARGET_V[0])));
        for v in [TARGET_V[1], DARK_V[0], DARK_V[1], (TARGET_V[0] + TARGET_V[1]) / 2.0] {
            assert_eq!(color_hist_votes(&px(hsv(RED, SAT, v))), reference);
        }

        assert_ne!(color_hist_votes(&px(hsv(GREEN, SAT, TARGET_V[0]))), reference);
    }

    #[test]
    fn ground_truth_matches_rendered_target() {
        let spec = SynthSpec {
            frames: 2,
            noise_std: 0.0,
            initial_box: BoundingBox::new(100.0, 80.0, 40.0, 40.0),
            ..SynthSpec::default()
        };
        let seq = generate(&spec).unwrap();
        let f = seq.frame(0).unwrap();
        let bg = f.get(0, 0, 2);
        // Target pixels are red; the clear background is blue.
        assert!(f.get(100, 80, 0) > f.get(100, 80, 2));
        assert!(f.get(139, 119, 0) > f.get(139, 119, 2));
        assert_eq!(f.get(99, 80, 2), bg);
        assert_eq!(f.get(140, 119, 2), bg);
    }

    #[test]
    fn suite_specs_are_valid() {
        let specs = alternating_specs(7);
        assert!(specs.len() >= 6);
        for s in &specs {
            s.validate().unwrap();
            let ranges = s.phase_ranges();
            assert!(ranges.iter().skip(1).all(|(r, _)| r.len() == PHASE_LENGTH));
            for kind in BranchKind::BUILTIN {
                assert!(ranges.iter().any(|(_, r)| r.favored_branch() == Some(kind)));
            }
        }
        assert_eq!(alternating_specs(7), specs);
    }
}
