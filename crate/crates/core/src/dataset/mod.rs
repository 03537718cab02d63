//! From detector records to normalized, windowed and rebalanced samples.

mod io;
mod layered;
mod normalize;
mod smote;
mod split;
mod window;

pub use io::{ClassCounts, DatasetManifest, WindowMeta, WindowSet};
pub use layered::{layered_tensor, ControlProfile, LayeredTensor};
pub use normalize::{apply_minmax, fit_minmax, NormalizationStats};
pub use smote::{smote, smote_indexed};
pub use split::{split, split_indices, SplitDataset, DEFAULT_SPLIT_RATIO};
pub use window::{check_window_rows, window_from_span, window_spans, window_stream, WindowMatrix, WindowSpan, WINDOW_ROWS};

/// Default neighbour count for [`smote`].
pub const SMOTE_K: usize = 5;
