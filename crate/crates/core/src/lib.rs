//! Selective sub-net optimization with dropout-perturbed gradient scoring.
//!
//! Each training step runs `k` forward/backward passes with independent
//! dropout masks, scores every parameter from the spread and magnitude of
//! those gradients, and updates only the top-scoring fraction with a masked
//! Adam step. Fisher-information and random baselines share the same
//! selector interface.
//!
//! ```
//! use bidrop::{select_subnet, ParamSet};
//!
//! let scores = ParamSet::single(vec![0.1, 0.9, 0.5, 0.7]).unwrap();
//! let mask = select_subnet(&scores, 0.5).unwrap();
//! assert_eq!(mask.bits(), vec![false, true, false, true]);
//! ```

pub mod checkpoint;
pub mod config;
pub mod data;
pub mod dropout;
pub mod error;
pub mod loss;
pub mod maskdump;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod params;
pub mod protocol;
pub mod report;
pub mod rng;
pub mod select;
pub mod tensor;
pub mod train;
pub mod verify;

pub use config::TrainConfig;
pub use data::Dataset;
pub use error::{Error, Result};
pub use loss::{LossFn, Targets};
pub use model::{Activation, MlpModel, MlpSpec};
pub use optim::{masked_adam_step, AdamConfig, AdamState};
pub use params::ParamSet;
pub use protocol::{run_protocol, ProtocolName};
pub use report::{emit_report, ExperimentReport};
pub use rng::RngStream;
pub use select::{select_subnet, StrategyConfig, StrategyKind, SubnetMask, SubnetSelector};
pub use tensor::Tensor;
pub use train::{run_experiment, RunOptions, Trainer};
