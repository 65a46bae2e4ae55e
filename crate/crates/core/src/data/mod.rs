//! Ingestion, resampling, splitting, windowing, normalization, context
//! features and scene graphs.

pub mod context;
pub mod graph;
pub mod normalize;
pub mod raw;
pub mod series;
pub mod split;
pub mod synthetic;
pub mod window;

pub use context::{context_features, distance_transform, frame_context, ContextFeatures, Landmarks};
pub use graph::{build_graph, EdgeRule, SceneGraph};
pub use normalize::NormStats;
pub use raw::{ingest_game, write_neutral_csv, RawGame, SourceFormat};
pub use series::{derive_velocities, resample_uniform, FrameSeries, ResampleReport};
pub use split::{split_dataset, Split, SplitPolicy, SplitRatios, Splittable};
pub use synthetic::{generate, SyntheticConfig};
pub use window::{make_windows, window_count, Window, WindowSet};
