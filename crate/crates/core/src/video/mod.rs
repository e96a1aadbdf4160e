pub mod augment;
pub mod clip_io;
pub mod raster;
pub mod sampling;
pub mod synthetic;

pub use augment::{augment, AugmentSpec, ColorAugment, SpatialAugment};
pub use clip_io::{load_clip, save_clip};
pub use raster::{Frame, Region};
pub use sampling::{sample, sample_continuous, sample_distant, SampleMode, SamplerSpec};
pub use synthetic::{gen_synthetic_clip, BoxXywh, GenSpec, MotionSpec, PhotometricSpec, ShapeKind, VideoClip};
