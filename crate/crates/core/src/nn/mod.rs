//! Minimal CPU neural-network layers with hand-written backward passes.
//!
//! Spatial activations use `(C, N, H, W)` layout. Everything runs in `f64`
//! so that finite-difference gradient checks are meaningful.

mod block;
mod conv;
mod linear;
pub mod loss;
mod norm;
mod optim;
mod param;
mod pool;

pub use block::BasicBlock;
pub use conv::Conv2d;
pub use linear::Linear;
pub use norm::BatchNorm2d;
pub use optim::{LrSchedule, Optimizer, OptimizerConfig};
pub use param::{Param, Visit};
pub use pool::{global_avg_pool, global_avg_pool_backward, relu, relu_backward, MaxPool2d};

pub(crate) use param::join;
