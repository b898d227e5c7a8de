//! Network roles: feature generators, the predictor head and the per-appliance
//! discriminators.

mod generator;
mod mlp;
mod params;

use rand_chacha::ChaCha8Rng;

pub use generator::{
    feature_len, Generator, GeneratorConfig, GeneratorForward, CONV_CHANNELS, CONV_KERNELS, DEFAULT_WINDOW, FIRST_POOL,
    LAST_POOL, MIN_WINDOW,
};
pub use mlp::{Discriminator, MlpConfig, Predictor, DISCRIMINATOR_HIDDEN, DROPOUT_P, PREDICTOR_HIDDEN};
pub use params::{is_buffer, Bound, NetworkParams};

/// Evaluation is pure; training mode enables dropout and batch statistics.
pub enum ForwardMode<'a> {
    Eval,
    Train { rng: &'a mut ChaCha8Rng },
}
