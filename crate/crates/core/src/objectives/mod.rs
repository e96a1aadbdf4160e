pub mod affinity;
pub mod bank;
pub mod losses;
pub mod momentum;

pub use affinity::{build_affinity, multi_pair_loss, multi_pair_loss_graph, AffinityMatrix, Regime};
pub use bank::NegativeBank;
pub use losses::{cosine_loss, cosine_loss_graph, infonce_graph, infonce_loss};
pub use momentum::{momentum_update, momentum_update_in_place};
