//! Dataset ingestion and emission, synthetic benchmark generation, and
//! training-sample construction.

mod dataset;
pub mod mot;
mod samples;
pub mod synthetic;

pub use dataset::{GtTrack, Sequence, SequenceDataset};
pub use mot::{parse_mot_file, parse_mot_str, write_mot_file, MotRecord};
pub use samples::{
    build_training_set, dp_predictions, extract_tracklets, SampleConfig, TrackletSample,
};
pub use synthetic::{
    generate_synthetic, sinusoid, MotionKind, MotionMix, OcclusionConfig, SyntheticConfig,
};
