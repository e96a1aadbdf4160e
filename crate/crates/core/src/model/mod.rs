pub mod checkpoint;
pub mod encoder;
pub mod optim;
pub mod params;
pub mod state;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use encoder::{encode, Encoder, HeadSpec, ModelConfig, Side};
pub use optim::{lr_schedule, SgdConfig};
pub use params::{Bound, NamedTensors};
pub use state::{embedding_std, train_step, SamplingConfig, SiameseState, SplitOrder, StepOutput, TrainConfig};
