//! Random stream assignment. Every consumer of randomness draws from its own
//! ChaCha stream of the run seed, so training paths, evaluation paths,
//! exploration noise and minibatch shuffles never overlap.

/// Training scenarios use streams `0..pool_size`.
pub const TRAIN_PATHS: u64 = 0;
/// Evaluation scenario `i` uses stream `EVAL_PATHS + i`.
pub const EVAL_PATHS: u64 = 1 << 60;
/// Exploration noise of global episode `g` uses stream `NOISE + g`.
pub const NOISE: u64 = 1 << 61;
/// Value-fit minibatch order of iteration `k` uses stream `SHUFFLE + k`.
pub const SHUFFLE: u64 = 3 << 60;
/// Network initialization.
pub const INIT: u64 = 1 << 62;
