//! The tracking loop: exemplar from the first frame, then per frame a scale
//! pyramid around the previous position, scheduled branch selection,
//! correlation with the active branch, and peak localization.

use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::branches::{
    embed, prepare_exemplar, prepare_search_with, register_builtin_branches, BranchConfig, BranchId, BranchKind,
    BranchSpec, EmbedContext, EmbeddingStore, FeatureMap, PatchKey, PatchRole,
};
use crate::correlation::{
    apply_cosine_window, upsample_response, xcorr_fft, ResponseMap, DEFAULT_UPSAMPLE_FACTOR, DEFAULT_WINDOW_INFLUENCE,
};
use crate::error::{Error, Result};
use crate::imaging::{
    build_search_pyramid, context_crop_side, crop_context, default_scale_factors, BoundingBox, ImageBuffer, Patch,
    Point,
};
use crate::selection::{
    advance, discriminative_power, select_branch, selection_due, SelectionScore, SelectionState,
    DEFAULT_SELECTION_INTERVAL,
};

pub const DEFAULT_EXEMPLAR_SIDE: usize = 127;
pub const DEFAULT_SEARCH_SIDE: usize = 255;
pub const DEFAULT_SCALE_PENALTY: f64 = 0.9745;
pub const DEFAULT_SCALE_DAMPING: f64 = 0.59;

/// Smallest target side the tracker will shrink to, in pixels.
const MIN_TARGET_SIDE: f64 = 4.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrackerConfig {
    pub exemplar_side: usize,
    pub search_side: usize,
    /// Search pyramid; the entry at index `len / 2` is the reference scale.
    pub scale_factors: Vec<f64>,
    /// Multiplier applied to the peaks of non-reference scales.
    pub scale_penalty: f64,
    /// Fraction of the chosen scale change applied to the target size.
    pub scale_damping: f64,
    pub window_influence: f64,
    pub upsample_factor: usize,
    pub selection_interval: usize,
    pub branches: Vec<BranchConfig>,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self {
            exemplar_side: DEFAULT_EXEMPLAR_SIDE,
            search_side: DEFAULT_SEARCH_SIDE,
            scale_factors: default_scale_factors(),
            scale_penalty: DEFAULT_SCALE_PENALTY,
            scale_damping: DEFAULT_SCALE_DAMPING,
            window_influence: DEFAULT_WINDOW_INFLUENCE,
            upsample_factor: DEFAULT_UPSAMPLE_FACTOR,
            selection_interval: DEFAULT_SELECTION_INTERVAL,
            branches: BranchKind::BUILTIN.iter().map(|&k| BranchConfig::new(k)).collect(),
        }
    }
}

impl TrackerConfig {
    /// Default configuration restricted to the given branch kinds, in order.
    pub fn with_branches(kinds: &[BranchKind]) -> Self {
        Self {
            branches: kinds.iter().map(|&k| BranchConfig::new(k)).collect(),
            ..Self::default()
        }
    }

    pub fn middle_scale(&self) -> usize {
        self.scale_factors.len() / 2
    }

    /// Checks ranges and returns the branch registry.
    pub fn validate(&self) -> Result<Vec<BranchSpec>> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.exemplar_side >= self.search_side {
            return bad(format!(
                "exemplar_side {} must be smaller than search_side {}",
                self.exemplar_side, self.search_side
            ));
        }
        if self.exemplar_side < 8 {
            return bad(format!("exemplar_side {} must be >= 8", self.exemplar_side));
        }
        if self.selection_interval == 0 {
            return bad("selection_interval must be >= 1".into());
        }
        if self.scale_factors.is_empty() || self.scale_factors.iter().any(|f| !(f.is_finite() && *f > 0.0)) {
            return bad(format!("scale_factors {:?} must be non-empty and positive", self.scale_factors));
        }
        if !(self.scale_penalty > 0.0 && self.scale_penalty <= 1.0) {
            return bad(format!("scale_penalty {} outside (0, 1]", self.scale_penalty));
        }
        if !(0.0..=1.0).contains(&self.scale_damping) {
            return bad(format!("scale_damping {} outside [0, 1]", self.scale_damping));
        }
        if !(0.0..=1.0).contains(&self.window_influence) {
            return bad(format!("window_influence {} outside [0, 1]", self.window_influence));
        }
        if self.upsample_factor == 0 {
            return bad("upsample_factor must be >= 1".into());
        }
        let specs = register_builtin_branches(&self.branches)?;
        for spec in specs.iter().filter(|s| s.kind != BranchKind::External) {
            let z = spec.layout.cells(self.exemplar_side)?;
            let x = spec.layout.cells(self.search_side)?;
            if z > x {
                return bad(format!("branch {}: exemplar grid larger than search grid", spec.id));
            }
        }
        Ok(specs)
    }
}

/// Precomputed embeddings for the external branch of one sequence.
#[derive(Debug, Clone)]
pub struct ExternalEmbeddings {
    pub store: Arc<EmbeddingStore>,
    pub sequence: u32,
}

/// Branch scores of one selection frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionRecord {
    pub frame: usize,
    pub chosen: BranchId,
    pub scores: Vec<SelectionScore>,
}

/// Wall-clock time spent in each stage of a frame.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StageTimings {
    pub crop: Duration,
    pub embed: Duration,
    pub correlate: Duration,
    pub localize: Duration,
}

impl StageTimings {
    pub fn total(&self) -> Duration {
        self.crop + self.embed + self.correlate + self.localize
    }

    pub fn add(&mut self, other: &StageTimings) {
        self.crop += other.crop;
        self.embed += other.embed;
        self.correlate += other.correlate;
        self.localize += other.localize;
    }
}

/// Result of one tracked frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameResult {
    pub frame: usize,
    pub bbox: BoundingBox,
    pub active_branch: BranchId,
    pub scale_index: usize,
    pub selection: Option<SelectionRecord>,
    /// Search-region embeddings computed for this frame.
    pub embeddings: usize,
    pub timings: StageTimings,
}

#[derive(Debug, Clone)]
pub struct TrackerState {
    cfg: TrackerConfig,
    specs: Vec<BranchSpec>,
    external: Option<ExternalEmbeddings>,
    pub center: Point,
    /// Target `(w, h)`.
    pub size: (f64, f64),
    /// One prepared exemplar map per branch, indexed by branch id.
    exemplar_maps: Vec<FeatureMap>,
    pub selection: SelectionState,
    /// Index of the last processed frame; 0 is the initialization frame.
    pub frame_index: usize,
    init_selection: SelectionRecord,
}

impl TrackerState {
    /// Tracker without an external branch.
    pub fn init(frame: &ImageBuffer, bbox: &BoundingBox, cfg: &TrackerConfig) -> Result<Self> {
        Self::init_with(frame, bbox, cfg, None)
    }

    /// Crops the exemplar, freezes one exemplar map per branch, and runs the
    /// first selection on this frame's own search region.
    pub fn init_with(
        frame: &ImageBuffer,
        bbox: &BoundingBox,
        cfg: &TrackerConfig,
        external: Option<ExternalEmbeddings>,
    ) -> Result<Self> {
        bbox.validate()?;
        let specs = cfg.validate()?;
        if specs.iter().any(|s| s.kind == BranchKind::External) && external.is_none() {
            return Err(Error::Config("external branch registered but no embeddings given".into()));
        }
        let patch = crop_context(frame, bbox, cfg.exemplar_side)?;
        let mut state = Self {
            cfg: cfg.clone(),
            specs,
            external,
            center: bbox.center(),
            size: (bbox.w, bbox.h),
            exemplar_maps: Vec::new(),
            selection: SelectionState::new(cfg.selection_interval)?,
            frame_index: 0,
            init_selection: SelectionRecord {
                frame: 0,
                chosen: 0,
                scores: Vec::new(),
            },
        };
        let ctx = state.context(0, PatchRole::Exemplar);
        state.exemplar_maps = state
            .specs
            .iter()
            .map(|spec| embed(spec, &patch, &ctx).map(|m| prepare_exemplar(&m)))
            .collect::<Result<_>>()?;

        let pyramid = state.search_pyramid(frame)?;
        let mid = cfg.middle_scale();
        let (record, _, _) = state.select(&pyramid[mid], mid)?;
        state.selection = advance(&state.selection, Some(record.chosen))?;
        state.selection.last_scores = record.scores.clone();
        state.init_selection = record;
        Ok(state)
    }

    pub fn config(&self) -> &TrackerConfig {
        &self.cfg
    }

    pub fn branches(&self) -> &[BranchSpec] {
        &self.specs
    }

    pub fn exemplar_maps(&self) -> &[FeatureMap] {
        &self.exemplar_maps
    }

    /// Scores of the selection made on the initialization frame.
    pub fn initial_selection(&self) -> &SelectionRecord {
        &self.init_selection
    }

    /// Moves the tracker onto `bbox` without touching exemplars or the
    /// selection schedule.
    pub fn reset_to(&mut self, bbox: &BoundingBox) {
        self.center = bbox.center();
        self.size = (bbox.w, bbox.h);
    }

    pub fn bbox(&self) -> BoundingBox {
        BoundingBox::from_center(self.center, self.size.0, self.size.1)
    }

    fn context(&self, frame: usize, role: PatchRole) -> EmbedContext {
        match &self.external {
            Some(ext) => EmbedContext::keyed(Some(ext.store.clone()), PatchKey::new(ext.sequence, frame as u32, role)),
            None => EmbedContext::none(),
        }
    }

    fn search_pyramid(&self, frame: &ImageBuffer) -> Result<Vec<Patch>> {
        let base = context_crop_side(self.size.0, self.size.1) * self.cfg.search_side as f64
            / self.cfg.exemplar_side as f64;
        build_search_pyramid(frame, self.center, base, &self.cfg.scale_factors, self.cfg.search_side)
    }

    /// Prepared search map of one pyramid scale and the norm it was divided
    /// by. `norm` defaults to the map's own.
    fn search_map(&self, spec: &BranchSpec, patch: &Patch, scale: usize, norm: Option<f64>) -> Result<(FeatureMap, f64)> {
        let role = PatchRole::Search(u8::try_from(scale).map_err(|_| Error::Config("too many scales".into()))?);
        let x = embed(spec, patch, &self.context(self.frame_index, role))?;
        let z = &self.exemplar_maps[spec.id];
        if x.channels() != z.channels() {
            return Err(Error::ChannelMismatch {
                exemplar: z.channels(),
                search: x.channels(),
            });
        }
        let norm = norm.unwrap_or_else(|| x.l2_norm());
        Ok((prepare_search_with(&x, norm), norm))
    }

    /// Scores every branch on `patch` and picks the most discriminative one.
    /// Also returns the chosen branch's raw response, its search norm, and
    /// the time spent.
    fn select(&self, patch: &Patch, scale: usize) -> Result<(SelectionRecord, (ResponseMap, f64), StageTimings)> {
        let mut t = StageTimings::default();
        let mut scores = Vec::with_capacity(self.specs.len());
        let mut responses = Vec::with_capacity(self.specs.len());
        for spec in &self.specs {
            let t0 = Instant::now();
            let (x, norm) = self.search_map(spec, patch, scale, None)?;
            let t1 = Instant::now();
            let r = xcorr_fft(&self.exemplar_maps[spec.id], &x)?.tagged(spec.id, scale);
            scores.push(discriminative_power(&r, spec.weight)?);
            responses.push((r, norm));
            t.embed += t1 - t0;
            t.correlate += t1.elapsed();
        }
        let chosen = select_branch(&scores)?;
        let record = SelectionRecord {
            frame: self.frame_index,
            chosen,
            scores,
        };
        Ok((record, responses.swap_remove(chosen), t))
    }

    /// Locates the target in `frame` and updates position, size and the
    /// selection schedule.
    pub fn track_frame(&mut self, frame: &ImageBuffer) -> Result<FrameResult> {
        self.frame_index += 1;
        let mut timings = StageTimings::default();
        let t0 = Instant::now();
        let pyramid = self.search_pyramid(frame)?;
        timings.crop = t0.elapsed();

        let mid = self.cfg.middle_scale();
        let mut embeddings = 0;
        let mut selection = None;
        let mut reused: Option<(ResponseMap, f64)> = None;
        if selection_due(&self.selection) {
            let (record, response, t) = self.select(&pyramid[mid], mid)?;
            timings.add(&t);
            embeddings += self.specs.len();
            reused = Some(response);
            selection = Some(record);
        }
        let chosen = selection.as_ref().map(|r| r.chosen);
        let active = chosen.unwrap_or(self.selection.active_branch);
        let spec = &self.specs[active];

        // The middle scale goes first: its norm is shared by the other scales.
        let mut responses: Vec<Option<ResponseMap>> = vec![None; pyramid.len()];
        let mut norm = None;
        if let Some((r, n)) = reused.take() {
            responses[mid] = Some(r);
            norm = Some(n);
        }
        for s in std::iter::once(mid).chain((0..pyramid.len()).filter(|&s| s != mid)) {
            if responses[s].is_some() {
                continue;
            }
            let t0 = Instant::now();
            let (x, n) = self.search_map(spec, &pyramid[s], s, norm)?;
            norm = Some(n);
            let t1 = Instant::now();
            responses[s] = Some(xcorr_fft(&self.exemplar_maps[active], &x)?.tagged(active, s));
            embeddings += 1;
            timings.embed += t1 - t0;
            timings.correlate += t1.elapsed();
        }
        let responses: Vec<ResponseMap> = responses.into_iter().flatten().collect();

        let t0 = Instant::now();
        let mut best = mid;
        let mut best_peak = f64::NEG_INFINITY;
        for s in std::iter::once(mid).chain((0..responses.len()).filter(|&s| s != mid)) {
            let peak = responses[s].max().ok_or(Error::Empty("response map"))?;
            let peak = if s == mid {
                peak
            } else {
                // Penalize by a fraction of the magnitude so negative peaks
                // are also pushed down.
                peak - (1.0 - self.cfg.scale_penalty) * peak.abs()
            };
            if peak > best_peak {
                best_peak = peak;
                best = s;
            }
        }
        let raw = &responses[best];
        let windowed = apply_cosine_window(raw, self.cfg.window_influence)?;
        let up = upsample_response(&windowed, self.cfg.upsample_factor)?;
        let (row, col, _) = up.argmax().ok_or(Error::Empty("response map"))?;
        let (dx, dy) = displacement_to_image(
            (row, col),
            raw.height(),
            self.cfg.upsample_factor,
            spec.stride(),
            pyramid[best].source_scale,
        );
        self.center = Point::new(
            (self.center.x + dx).clamp(0.0, frame.width() as f64),
            (self.center.y + dy).clamp(0.0, frame.height() as f64),
        );
        let factor = self.cfg.scale_factors[best];
        let step = (1.0 - self.cfg.scale_damping) + self.cfg.scale_damping * factor;
        let max_w = 4.0 * frame.width() as f64;
        let max_h = 4.0 * frame.height() as f64;
        self.size = (
            (self.size.0 * step).clamp(MIN_TARGET_SIDE, max_w),
            (self.size.1 * step).clamp(MIN_TARGET_SIDE, max_h),
        );
        timings.localize = t0.elapsed();

        self.selection = advance(&self.selection, chosen)?;
        if let Some(rec) = &selection {
            self.selection.last_scores = rec.scores.clone();
        }
        Ok(FrameResult {
            frame: self.frame_index,
            bbox: self.bbox(),
            active_branch: active,
            scale_index: best,
            selection,
            embeddings,
            timings,
        })
    }
}

/// Image-plane offset of a response peak from the search center:
/// `(peak - center) * stride / upsample * source_scale`, where the center of
/// the upsampled map is `(map_side - 1) * upsample / 2`. Returns `(dx, dy)`.
pub fn displacement_to_image(
    peak: (usize, usize),
    map_side: usize,
    upsample_factor: usize,
    stride: usize,
    source_scale: f64,
) -> (f64, f64) {
    let f = upsample_factor as f64;
    let center = (map_side.saturating_sub(1)) as f64 * f / 2.0;
    let k = stride as f64 / f * source_scale;
    ((peak.1 as f64 - center) * k, (peak.0 as f64 - center) * k)
}

/// Runs the tracker over `frames` from `init_box`. The first output box is
/// `init_box` itself.
pub fn track_sequence<'a>(
    frames: impl IntoIterator<Item = Result<std::borrow::Cow<'a, ImageBuffer>>>,
    init_box: &BoundingBox,
    cfg: &TrackerConfig,
    external: Option<ExternalEmbeddings>,
) -> Result<TrackRun> {
    let mut frames = frames.into_iter();
    let first = frames.next().ok_or(Error::Empty("sequence frames"))??;
    let t0 = Instant::now();
    let mut state = TrackerState::init_with(&first, init_box, cfg, external)?;
    let init_time = t0.elapsed();
    let mut run = TrackRun {
        boxes: vec![*init_box],
        active: vec![state.selection.active_branch],
        selections: vec![state.initial_selection().clone()],
        embeddings: vec![state.branches().len()],
        timings: vec![StageTimings {
            embed: init_time,
            ..Default::default()
        }],
    };
    for frame in frames {
        let frame = frame?;
        let r = state.track_frame(&frame)?;
        run.boxes.push(r.bbox);
        run.active.push(r.active_branch);
        run.embeddings.push(r.embeddings);
        run.timings.push(r.timings);
        if let Some(sel) = r.selection {
            run.selections.push(sel);
        }
    }
    Ok(run)
}

/// Per-frame outputs of a tracked sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackRun {
    pub boxes: Vec<BoundingBox>,
    pub active: Vec<BranchId>,
    pub selections: Vec<SelectionRecord>,
    pub embeddings: Vec<usize>,
    pub timings: Vec<StageTimings>,
}
