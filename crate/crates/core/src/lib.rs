//! Push-into-box laboratory.
//!
//! A planar pushing simulator with orthographic depth sensing, the two
//! hourglass networks that score every discrete push (a validity mask and a
//! state-action value map), the reward functions that supervise them, staged
//! offline/online DQN training, and the evaluation harness.
//!
//! Module map:
//!
//! - [`world`]: workspace geometry, object bodies, random scenarios.
//! - [`pushsim`]: quasi-static execution of one discrete push.
//! - [`percept`]: heightmap rendering and pixel statistics.
//! - [`reward`]: change reward and push-into-box reward.
//! - [`maskheur`]: Canny-based heuristic validity masks and dataset builders.
//! - [`net`]: tensors, layers with reverse-mode gradients, hourglass network, Adam.
//! - [`dqn`]: replay, TD targets, masked action selection, training loops.
//! - [`harness`]: precision/recall sweep, policy evaluation, baselines.
//! - [`dataset`] and [`config`]: persistent formats and run configuration.
//! - [`pipeline`]: the command implementations behind the `pushlab` binary.

pub mod actionmap;
pub mod config;
pub mod dataset;
pub mod dqn;
pub mod error;
pub mod geometry;
pub mod harness;
pub mod maskheur;
pub mod net;
pub mod percept;
pub mod pipeline;
pub mod pushsim;
pub mod reward;
pub mod rng;
pub mod world;

pub use actionmap::{ActionMap, MaskTensor, QMaps};
pub use error::{Error, Result};
pub use percept::DepthImage;
pub use pushsim::{PushAction, PushOutcome};
pub use world::{BoxTarget, ObjectBody, Scene, WorkspaceConfig};
