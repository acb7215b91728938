//! Cold-start streaming learning engine.
//!
//! A single-pass streaming learner built around three pieces:
//!
//! - a from-scratch fully-connected ReLU network ([`net`]),
//! - a capacity-bounded replay buffer with compression codecs ([`replay`])
//!   and a sequential augmentation pipeline ([`augment`]),
//! - the streaming orchestrator ([`stream`]) that ties them together, plus
//!   evaluation metrics ([`metrics`]) and empirical probes for the
//!   wide-network linearization analysis ([`ntrf`]).

pub mod augment;
pub mod error;
pub mod linalg;
pub mod metrics;
pub mod net;
pub mod ntrf;
pub mod replay;
pub mod stream;

pub use error::{Error, Result};
pub use linalg::Matrix;
pub use net::{Mode, NetworkParams};
pub use replay::{Codec, Example, Features, ReplayBuffer};
pub use stream::{MetricsRecord, StreamConfig};
