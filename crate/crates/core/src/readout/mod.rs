pub mod features;
pub mod metrics;
pub mod propagation;
pub mod segment;
pub mod track;

pub use features::{EncoderFeatures, FeatureExtractor, FeatureMap, LabelMap, PixelFeatures};
pub use metrics::{boundary_f, center_error, iou, precision_at, success_auc};
pub use propagation::{local_affinity, propagate_step, recurrent_inference, AffinityBlock, PropagationConfig, TopkScope};
pub use segment::{score_segmentation, segment_clip, segment_from_maps, SegmentationScore};
pub use track::{init_track, track, track_step, xcorr, Response, TrackState, TrackerConfig};
