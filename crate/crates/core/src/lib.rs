//! Streaming speech-encoder engine built around right-context chunked
//! attention masks.
//!
//! * [`mask`]: chunked masks with left context and beyond-chunk right context.
//! * [`encoder`]: toy multi-rate encoder, masked attention and its backward pass.
//! * [`stream`]: incremental chunked inference equal to offline masked inference.
//! * [`sched`]: splitmix64 and per-batch dynamic right-context schedules.
//! * [`serve`]: websocket streaming server and client with a stub decoder.
//! * [`bench`]: final-chunk latency, RTFX and concurrency sweeps.
//!
//! Runnable walkthroughs live in the crate's `examples/` directory.

pub mod bench;
pub mod encoder;
pub mod error;
pub mod mask;
pub mod matrix;
pub mod sched;
pub mod serve;
pub mod stream;

pub use encoder::{Encoder, EncoderConfig, FeatureSequence, HiddenSequence};
pub use error::{Error, Result};
pub use mask::{build_mask, downsample_mask, visible, AttentionMask, LeftContext, MaskSpec};
pub use matrix::Matrix;
pub use stream::{emission_deadline, StreamState};
