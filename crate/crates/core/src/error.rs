use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid bounding box ({x}, {y}, {w}, {h}): width and height must be positive and finite")]
    InvalidBox { x: f64, y: f64, w: f64, h: f64 },

    #[error("invalid image: {0}")]
    InvalidImage(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("patch side {side} does not fit the {cells}-cell grid layout (stride {stride}, window {window}, margin {margin})")]
    LayoutMismatch {
        side: usize,
        cells: usize,
        stride: usize,
        window: usize,
        margin: usize,
    },

    #[error("channel mismatch: exemplar has {exemplar} channels, search has {search}")]
    ChannelMismatch { exemplar: usize, search: usize },

    #[error("exemplar {exemplar_h}x{exemplar_w} is larger than search {search_h}x{search_w}")]
    ExemplarTooLarge {
        exemplar_h: usize,
        exemplar_w: usize,
        search_h: usize,
        search_w: usize,
    },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("branch registry: {0}")]
    Registry(String),

    #[error("no embedding for sequence {sequence}, frame {frame}, role {role}")]
    MissingEmbedding {
        sequence: u32,
        frame: u32,
        role: String,
    },

    #[error("corrupt embedding file: {0}")]
    CorruptEmbeddings(String),

    #[error("embedding dimension mismatch for role {role}: {detail}")]
    DimensionMismatch { role: String, detail: String },

    #[error("selection: {0}")]
    Selection(String),

    #[error("tracker: {0}")]
    Tracker(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("sequence {name}: {detail}")]
    Sequence { name: String, detail: String },

    #[error("synthetic spec: {0}")]
    Synth(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Decode {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
