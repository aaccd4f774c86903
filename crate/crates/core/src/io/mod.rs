//! File formats, splits and cloud statistics.
//!
//! All binary formats are little-endian with a four-byte magic. Readers
//! reject short, long or malformed input with the offending byte offset or
//! line number.

mod bytes;
pub mod cloud;
pub mod predictions;
pub mod split;
pub mod stats;

pub use cloud::{
    decode_cloud, encode_cloud, read_cloud, read_cloud_auto, read_csv, stream_cloud_stats, write_cloud,
    write_cloud_auto, write_csv, CloudFormat,
};
pub use predictions::{
    decode_labels, encode_labels, read_labels, read_predictions, write_labels, write_predictions, PredictionFile,
};
pub use split::{apply_split, SplitGroups, SplitRole, SplitTable};
pub use stats::{cloud_stats, CloudStats, StatsAccumulator};
