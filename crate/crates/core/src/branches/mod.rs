//! Embedding branches.
//!
//! A branch maps a square [`Patch`] onto a [`FeatureMap`] laid out on a
//! regular cell grid. The same function is applied to the exemplar and to
//! every search patch, so that cross-correlating the two maps scores each
//! candidate offset. Built-in branches are classical features (cell
//! intensity, orientation histograms, color histograms); the `external`
//! branch replays precomputed embeddings from an [`EmbeddingStore`].

mod features;
mod store;

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::{ImageBuffer, Patch};

pub use features::{color_hist_votes, gradient_votes, GRADIENT_BINS, COLOR_BINS};
pub use store::{read_embedding_store, write_embedding_store, EmbeddingStore, PatchKey, PatchRole};

/// Registry index of a branch. Id 0 is the general branch.
pub type BranchId = usize;

/// Weight applied to the response of the external (deep) branch.
pub const DEFAULT_EXTERNAL_WEIGHT: f64 = 10.5;

/// Weight of the intensity branch. Intensity maps carry a large constant
/// level, so after normalization their response range is about ten times
/// narrower than that of the histogram branches.
pub const DEFAULT_INTENSITY_WEIGHT: f64 = 20.0;

/// Placement of feature cells on a square patch.
///
/// A patch of side `s` holds `cells = (s - 2*margin - window) / stride + 1`
/// cells; cell `k` aggregates the `window`-pixel span starting at
/// `margin + k*stride`. With the defaults (stride 8, window 47, margin 20)
/// a 127-pixel exemplar yields 6x6 cells and a 255-pixel search patch 22x22,
/// so a response map is 17x17. Any layout with `2*margin + window = 87`
/// keeps those sizes; wider windows trade resolution for context. Exemplar and search grids start at the same
/// offset, which keeps the central exemplar-sized window of a search map
/// aligned with an exemplar map of the central sub-patch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridLayout {
    pub stride: usize,
    pub window: usize,
    pub margin: usize,
}

impl Default for GridLayout {
    fn default() -> Self {
        Self {
            stride: 8,
            window: 47,
            margin: 20,
        }
    }
}

impl GridLayout {
    /// Number of cells along one side of a patch, if the side fits exactly.
    pub fn cells(&self, side: usize) -> Result<usize> {
        let used = 2 * self.margin + self.window;
        let mismatch = || Error::LayoutMismatch {
            side,
            cells: side.saturating_sub(used) / self.stride.max(1) + 1,
            stride: self.stride,
            window: self.window,
            margin: self.margin,
        };
        if self.stride == 0 || self.window == 0 || side < used {
            return Err(mismatch());
        }
        if (side - used) % self.stride != 0 {
            return Err(mismatch());
        }
        Ok((side - used) / self.stride + 1)
    }

    /// Pixel offset of the first sample of cell `k`.
    pub fn cell_origin(&self, k: usize) -> usize {
        self.margin + k * self.stride
    }
}

/// Row-major `height x width x channels` embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    height: usize,
    width: usize,
    channels: usize,
    stride: usize,
    data: Vec<f32>,
}

impl FeatureMap {
    pub fn new(height: usize, width: usize, channels: usize, stride: usize, data: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 || channels == 0 {
            return Err(Error::InvalidArgument(format!(
                "empty feature map {height}x{width}x{channels}"
            )));
        }
        if stride == 0 {
            return Err(Error::InvalidArgument("feature stride must be >= 1".into()));
        }
        if data.len() != height * width * channels {
            return Err(Error::InvalidArgument(format!(
                "feature data length {} does not match {height}x{width}x{channels}",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite feature value".into()));
        }
        Ok(Self {
            height,
            width,
            channels,
            stride,
            data,
        })
    }

    pub fn zeros(height: usize, width: usize, channels: usize, stride: usize) -> Result<Self> {
        Self::new(height, width, channels, stride, vec![0.0; height * width * channels])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn stride(&self) -> usize {
        self.stride
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize, c: usize) -> f32 {
        self.data[(row * self.width + col) * self.channels + c]
    }

    /// Copy of the `h x w` window starting at `(row, col)`.
    pub fn window(&self, row: usize, col: usize, h: usize, w: usize) -> Result<FeatureMap> {
        if row + h > self.height || col + w > self.width {
            return Err(Error::InvalidArgument(format!(
                "window {h}x{w} at ({row},{col}) exceeds {}x{}",
                self.height, self.width
            )));
        }
        let mut data = Vec::with_capacity(h * w * self.channels);
        for r in row..row + h {
            let start = (r * self.width + col) * self.channels;
            data.extend_from_slice(&self.data[start..start + w * self.channels]);
        }
        FeatureMap::new(h, w, self.channels, self.stride, data)
    }

    pub fn scaled(&self, factor: f32) -> FeatureMap {
        FeatureMap {
            data: self.data.iter().map(|v| v * factor).collect(),
            ..self.clone()
        }
    }

    pub fn l2_norm(&self) -> f64 {
        self.data.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>().sqrt()
    }

    /// Divides by the L2 norm over all elements. All-zero maps are returned
    /// unchanged.
    pub fn l2_normalized(&self) -> FeatureMap {
        let norm = self.l2_norm();
        if norm == 0.0 {
            return self.clone();
        }
        self.scaled((1.0 / norm) as f32)
    }

    /// Subtracts each channel's mean over the grid.
    pub fn channel_centered(&self) -> FeatureMap {
        let n = (self.height * self.width) as f64;
        let mut means = vec![0.0f64; self.channels];
        for cell in self.data.chunks_exact(self.channels) {
            for (m, &v) in means.iter_mut().zip(cell) {
                *m += v as f64;
            }
        }
        let means: Vec<f32> = means.into_iter().map(|m| (m / n) as f32).collect();
        let data = self
            .data
            .chunks_exact(self.channels)
            .flat_map(|cell| cell.iter().zip(&means).map(|(v, m)| v - m))
            .collect();
        FeatureMap {
            data,
            ..self.clone()
        }
    }
}

/// Template preparation applied to every exemplar map before correlation:
/// L2 normalization over all elements, then removal of each channel's mean
/// so that constant feature offsets carry no response.
pub fn prepare_exemplar(map: &FeatureMap) -> FeatureMap {
    map.l2_normalized().channel_centered()
}

/// Search maps are L2-normalized over all elements. A map without structure
/// is dominated by its constant level, which prepared exemplars (zero mean
/// per channel) do not respond to, so its response range stays small.
pub fn prepare_search(map: &FeatureMap) -> FeatureMap {
    prepare_search_with(map, map.l2_norm())
}

/// Divides `map` by `norm` (unchanged when `norm` is 0). Scales of one
/// search pyramid share the middle scale's norm so their peaks compare
/// content rather than per-map normalization.
pub fn prepare_search_with(map: &FeatureMap, norm: f64) -> FeatureMap {
    if norm == 0.0 {
        return map.clone();
    }
    map.scaled((1.0 / norm) as f32)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BranchKind {
    Intensity,
    GradientHist,
    ColorHist,
    External,
}

impl BranchKind {
    pub const BUILTIN: [BranchKind; 3] = [BranchKind::Intensity, BranchKind::GradientHist, BranchKind::ColorHist];

    pub fn name(&self) -> &'static str {
        match self {
            BranchKind::Intensity => "intensity",
            BranchKind::GradientHist => "gradient_hist",
            BranchKind::ColorHist => "color_hist",
            BranchKind::External => "external",
        }
    }

    /// Channel count of built-in kinds; external maps take theirs from the store.
    pub fn channels(&self) -> Option<usize> {
        match self {
            BranchKind::Intensity => Some(1),
            BranchKind::GradientHist => Some(GRADIENT_BINS),
            BranchKind::ColorHist => Some(COLOR_BINS),
            BranchKind::External => None,
        }
    }

    pub fn default_weight(&self) -> f64 {
        match self {
            BranchKind::External => DEFAULT_EXTERNAL_WEIGHT,
            BranchKind::Intensity => DEFAULT_INTENSITY_WEIGHT,
            _ => 1.0,
        }
    }
}

impl fmt::Display for BranchKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BranchKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "intensity" | "general" => Ok(BranchKind::Intensity),
            "gradient_hist" | "gradient" => Ok(BranchKind::GradientHist),
            "color_hist" | "color" => Ok(BranchKind::ColorHist),
            "external" | "deep" => Ok(BranchKind::External),
            other => Err(Error::Registry(format!("unknown branch kind {other:?}"))),
        }
    }
}

/// One entry of the branch registry configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BranchConfig {
    pub kind: BranchKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<BranchId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weight: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub layout: Option<GridLayout>,
}

impl BranchConfig {
    pub fn new(kind: BranchKind) -> Self {
        Self {
            kind,
            id: None,
            weight: None,
            layout: None,
        }
    }

    pub fn with_weight(mut self, weight: f64) -> Self {
        self.weight = Some(weight);
        self
    }

    pub fn with_id(mut self, id: BranchId) -> Self {
        self.id = Some(id);
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BranchSpec {
    pub id: BranchId,
    pub kind: BranchKind,
    /// Response weight used when ranking branches.
    pub weight: f64,
    pub layout: GridLayout,
    /// Output channels; 0 for external branches, whose channel count comes
    /// from the embedding store.
    pub channels: usize,
}

impl BranchSpec {
    pub fn stride(&self) -> usize {
        self.layout.stride
    }

    pub fn name(&self) -> String {
        format!("{}#{}", self.kind, self.id)
    }
}

/// Validates a registry configuration and assigns ids.
///
/// Entries without an explicit id take their position in the list. Ids must
/// end up unique and contiguous from 0; entry 0 is the general branch.
pub fn register_builtin_branches(config: &[BranchConfig]) -> Result<Vec<BranchSpec>> {
    if config.is_empty() {
        return Err(Error::Registry("at least one branch is required".into()));
    }
    let mut specs: Vec<BranchSpec> = Vec::with_capacity(config.len());
    for (pos, entry) in config.iter().enumerate() {
        let id = entry.id.unwrap_or(pos);
        if specs.iter().any(|s| s.id == id) {
            return Err(Error::Registry(format!("duplicate branch id {id}")));
        }
        let weight = entry.weight.unwrap_or_else(|| entry.kind.default_weight());
        if !(weight.is_finite() && weight >= 0.0) {
            return Err(Error::Registry(format!("branch {id}: weight {weight} must be >= 0")));
        }
        let layout = entry.layout.unwrap_or_default();
        if layout.stride == 0 || layout.window == 0 {
            return Err(Error::Registry(format!("branch {id}: degenerate grid layout")));
        }
        specs.push(BranchSpec {
            id,
            kind: entry.kind,
            weight,
            layout,
            channels: entry.kind.channels().unwrap_or(0),
        });
    }
    specs.sort_by_key(|s| s.id);
    if let Some((pos, s)) = specs.iter().enumerate().find(|(pos, s)| s.id != *pos) {
        return Err(Error::Registry(format!(
            "branch ids must be contiguous from 0; found id {} at position {pos}",
            s.id
        )));
    }
    Ok(specs)
}

/// Where an external branch finds its embeddings.
#[derive(Debug, Clone, Default)]
pub struct EmbedContext {
    pub store: Option<Arc<EmbeddingStore>>,
    pub key: Option<PatchKey>,
}

impl EmbedContext {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn keyed(store: Option<Arc<EmbeddingStore>>, key: PatchKey) -> Self {
        Self { store, key: Some(key) }
    }
}

/// Grayscale values of the square window `span x span`.
fn grayscale_in(img: &ImageBuffer, span: std::ops::Range<usize>) -> Vec<f32> {
    let ch = img.channels();
    let inv = 1.0 / ch as f32;
    let mut out = Vec::with_capacity(span.len() * span.len());
    for y in span.clone() {
        let start = (y * img.width() + span.start) * ch;
        let row = &img.data()[start..start + span.len() * ch];
        out.extend(row.chunks_exact(ch).map(|px| px.iter().sum::<f32>() * inv));
    }
    out
}

/// Applies branch `spec` to `patch`.
pub fn embed(spec: &BranchSpec, patch: &Patch, ctx: &EmbedContext) -> Result<FeatureMap> {
    match spec.kind {
        BranchKind::External => {
            let key = ctx
                .key
                .ok_or_else(|| Error::InvalidArgument("external branch needs a patch key".into()))?;
            let missing = || Error::MissingEmbedding {
                sequence: key.sequence,
                frame: key.frame,
                role: key.role.to_string(),
            };
            let store = ctx.store.as_ref().ok_or_else(missing)?;
            store.get(&key).cloned().ok_or_else(missing)
        }
        kind => {
            let cells = spec.layout.cells(patch.side())?;
            let span = features::grid_span(&spec.layout, cells);
            let img = &patch.image;
            let (votes, channels) = match kind {
                BranchKind::Intensity => (grayscale_in(img, span.clone()), 1),
                BranchKind::GradientHist => (features::gradient_votes_in(img, span.clone(), span), GRADIENT_BINS),
                BranchKind::ColorHist => (features::color_hist_votes_in(img, span.clone(), span), COLOR_BINS),
                BranchKind::External => unreachable!(),
            };
            let data = features::cell_means(&votes, channels, &spec.layout, cells);
            FeatureMap::new(cells, cells, channels, spec.layout.stride, data)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::{ImageBuffer, Point};

    fn patch_of(img: ImageBuffer) -> Patch {
        Patch {
            image: img,
            source_scale: 1.0,
            center: Point::default(),
            padded: false,
        }
    }

    fn noise_image(side: usize, seed: u64) -> ImageBuffer {
        let mut state = seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) | 1;
        ImageBuffer::from_fn(side, side, 3, |_, _, _| {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state % 1000) as f32 / 999.0
        })
        .unwrap()
    }

    fn builtin(kind: BranchKind) -> BranchSpec {
        register_builtin_branches(&[BranchConfig::new(kind)]).unwrap().remove(0)
    }

    #[test]
    fn default_layout_geometry() {
        let l = GridLayout::default();
        assert_eq!(l.cells(127).unwrap(), 6);
        assert_eq!(l.cells(255).unwrap(), 22);
        assert!(matches!(l.cells(128), Err(Error::LayoutMismatch { .. })));
        assert!(l.cells(40).is_err());
    }

    #[test]
    fn intensity_cells_are_window_means() {
        let img = noise_image(127, 3);
        let spec = builtin(BranchKind::Intensity);
        let map = embed(&spec, &patch_of(img.clone()), &EmbedContext::none()).unwrap();
        assert_eq!((map.height(), map.width(), map.channels(), map.stride()), (6, 6, 1, 8));
        let gray = img.grayscale();
        let l = spec.layout;
        for r in 0..6 {
            for c in 0..6 {
                let (y0, x0) = (l.cell_origin(r), l.cell_origin(c));
                let mut sum = 0.0f64;
                for y in y0..y0 + l.window {
                    for x in x0..x0 + l.window {
                        sum += gray[y * 127 + x] as f64;
                    }
                }
                let expected = sum / (l.window * l.window) as f64;
                assert!((map.get(r, c, 0) as f64 - expected).abs() < 1e-6, "cell ({r},{c})");
            }
        }
    }

    #[test]
    fn constant_patch_gives_constant_map() {
        let img = ImageBuffer::filled(127, 127, 3, 0.4).unwrap();
        for kind in BranchKind::BUILTIN {
            let map = embed(&builtin(kind), &patch_of(img.clone()), &EmbedContext::none()).unwrap();
            for c in 0..map.channels() {
                let first = map.get(0, 0, c);
                for r in 0..6 {
                    for col in 0..6 {
                        assert!((map.get(r, col, c) - first).abs() < 1e-6);
                    }
                }
            }
        }
    }

    #[test]
    fn gradient_mass_lands_in_horizontal_gradient_bin_on_vertical_edge() {
        let img = ImageBuffer::from_fn(127, 127, 1, |x, _, _| if x < 63 { 0.2 } else { 0.8 }).unwrap();
        let spec = builtin(BranchKind::GradientHist);
        let map = embed(&spec, &patch_of(img.clone()), &EmbedContext::none()).unwrap();
        // Finite-difference oracle: the only nonzero gradients are horizontal
        // (gy = 0, gx > 0) in columns 62 and 63.
        let gray = img.grayscale();
        let gx = |x: usize, y: usize| {
            let l = gray[y * 127 + x.saturating_sub(1)];
            let r = gray[y * 127 + (x + 1).min(126)];
            (r - l) / 2.0
        };
        assert!(gx(62, 10) > 0.0 && gx(61, 10) == 0.0 && gx(64, 10) == 0.0);
        let l = spec.layout;
        for c in 0..6 {
            let x0 = l.cell_origin(c);
            let on_edge = (x0..x0 + l.window).contains(&62);
            let total: f32 = (0..GRADIENT_BINS).map(|b| map.get(2, c, b)).sum();
            if on_edge {
                assert!(total > 0.0);
                assert!(map.get(2, c, 0) / total > 0.99, "bin 0 share for column {c}");
            } else {
                assert!(total.abs() < 1e-6);
            }
        }
    }

    #[test]
    fn siamese_center_window_matches_exemplar_of_center_subpatch() {
        let img = noise_image(255, 11);
        let sub = ImageBuffer::from_fn(127, 127, 3, |x, y, c| img.get(x + 64, y + 64, c)).unwrap();
        for kind in BranchKind::BUILTIN {
            let spec = builtin(kind);
            let search = embed(&spec, &patch_of(img.clone()), &EmbedContext::none()).unwrap();
            let exemplar = embed(&spec, &patch_of(sub.clone()), &EmbedContext::none()).unwrap();
            assert_eq!(search.height(), 22);
            let center = search.window(8, 8, 6, 6).unwrap();
            // Gradients at the sub-patch border use clamped neighbours, so
            // only the intensity branch is exact everywhere; the others are
            // exact on cells whose windows stay off the border.
            if kind == BranchKind::Intensity {
                assert_eq!(center, exemplar);
            } else {
                for r in 0..6 {
                    for c in 0..6 {
                        for ch in 0..center.channels() {
                            assert!((center.get(r, c, ch) - exemplar.get(r, c, ch)).abs() < 1e-5);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn translation_by_one_stride_shifts_interior_by_one_cell() {
        let big = noise_image(263, 5);
        let a = ImageBuffer::from_fn(255, 255, 3, |x, y, c| big.get(x, y, c)).unwrap();
        let b = ImageBuffer::from_fn(255, 255, 3, |x, y, c| big.get(x + 8, y, c)).unwrap();
        let spec = builtin(BranchKind::Intensity);
        let fa = embed(&spec, &patch_of(a), &EmbedContext::none()).unwrap();
        let fb = embed(&spec, &patch_of(b), &EmbedContext::none()).unwrap();
        for r in 0..22 {
            for c in 0..21 {
                assert_eq!(fb.get(r, c, 0), fa.get(r, c + 1, 0));
            }
        }
    }

    #[test]
    fn embed_is_deterministic() {
        let p = patch_of(noise_image(255, 9));
        for kind in BranchKind::BUILTIN {
            let spec = builtin(kind);
            assert_eq!(
                embed(&spec, &p, &EmbedContext::none()).unwrap(),
                embed(&spec, &p, &EmbedContext::none()).unwrap()
            );
        }
    }

    #[test]
    fn registry_single_intensity() {
        let specs = register_builtin_branches(&[BranchConfig::new(BranchKind::Intensity)]).unwrap();
        assert_eq!(specs.len(), 1);
        assert_eq!(specs[0].id, 0);
        assert_eq!(specs[0].weight, DEFAULT_INTENSITY_WEIGHT);
        assert_eq!(specs[0].channels, 1);
    }

    #[test]
    fn registry_full_with_deep_weight() {
        let cfg: Vec<BranchConfig> = ["intensity", "gradient_hist", "color_hist", "external"]
            .iter()
            .map(|k| BranchConfig::new(k.parse().unwrap()))
            .collect();
        let specs = register_builtin_branches(&cfg).unwrap();
        assert_eq!(specs.len(), 4);
        assert_eq!(specs.iter().map(|s| s.id).collect::<Vec<_>>(), vec![0, 1, 2, 3]);
        assert_eq!(specs[3].kind, BranchKind::External);
        assert_eq!(specs[3].weight, 10.5);
        assert_eq!(specs[0].weight, DEFAULT_INTENSITY_WEIGHT);
        assert!(specs[1..3].iter().all(|s| s.weight == 1.0));
        assert_eq!(specs[1].channels, 8);
        assert_eq!(specs[2].channels, 16);
    }

    #[test]
    fn registry_errors() {
        let dup = [
            BranchConfig::new(BranchKind::Intensity).with_id(0),
            BranchConfig::new(BranchKind::ColorHist).with_id(0),
        ];
        assert!(matches!(register_builtin_branches(&dup), Err(Error::Registry(_))));
        let gap = [
            BranchConfig::new(BranchKind::Intensity).with_id(0),
            BranchConfig::new(BranchKind::ColorHist).with_id(2),
        ];
        assert!(register_builtin_branches(&gap).is_err());
        assert!(register_builtin_branches(&[]).is_err());
        assert!(register_builtin_branches(&[BranchConfig::new(BranchKind::Intensity).with_weight(-1.0)]).is_err());
        assert!("sift".parse::<BranchKind>().is_err());
        let unknown: std::result::Result<BranchConfig, _> = serde_json::from_str(r#"{"kind":"sift"}"#);
        assert!(unknown.is_err());
    }

    #[test]
    fn explicit_ids_reorder_registry() {
        let cfg = [
            BranchConfig::new(BranchKind::ColorHist).with_id(1),
            BranchConfig::new(BranchKind::Intensity).with_id(0),
        ];
        let specs = register_builtin_branches(&cfg).unwrap();
        assert_eq!(specs[0].kind, BranchKind::Intensity);
        assert_eq!(specs[1].kind, BranchKind::ColorHist);
    }

    #[test]
    fn external_branch_reads_store() {
        let spec = register_builtin_branches(&[BranchConfig::new(BranchKind::External)]).unwrap().remove(0);
        let p = patch_of(ImageBuffer::filled(127, 127, 3, 0.0).unwrap());
        let key = PatchKey::new(3, 7, PatchRole::Exemplar);
        let err = embed(&spec, &p, &EmbedContext::keyed(None, key)).unwrap_err();
        assert!(matches!(err, Error::MissingEmbedding { sequence: 3, frame: 7, .. }));

        let map = FeatureMap::new(6, 6, 2, 8, (0..72).map(|v| v as f32).collect()).unwrap();
        let mut store = EmbeddingStore::default();
        store.insert(key, map.clone()).unwrap();
        let store = Arc::new(store);
        assert_eq!(embed(&spec, &p, &EmbedContext::keyed(Some(store.clone()), key)).unwrap(), map);
        let other = PatchKey::new(3, 8, PatchRole::Exemplar);
        assert!(matches!(
            embed(&spec, &p, &EmbedContext::keyed(Some(store), other)),
            Err(Error::MissingEmbedding { .. })
        ));
    }

    #[test]
    fn exemplar_preparation_removes_channel_means() {
        let map = FeatureMap::new(2, 2, 2, 8, vec![1.0, 5.0, 2.0, 5.0, 3.0, 5.0, 4.0, 5.0]).unwrap();
        let z = prepare_exemplar(&map);
        for c in 0..2 {
            let s: f32 = (0..2).flat_map(|r| (0..2).map(move |k| (r, k))).map(|(r, k)| z.get(r, k, c)).sum();
            assert!(s.abs() < 1e-6);
        }
        assert!(z.data().iter().skip(1).step_by(2).all(|v| v.abs() < 1e-6));
        assert!((prepare_search(&map).l2_norm() - 1.0).abs() < 1e-6);
        let zero = FeatureMap::zeros(2, 2, 1, 8).unwrap();
        assert_eq!(prepare_exemplar(&zero), zero);
    }
}
