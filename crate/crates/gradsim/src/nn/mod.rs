//! Small fully-connected network engine: seeded initialization, forward
//! evaluation with exposable intermediate activations, exact per-sample
//! gradients, Hessian-vector products, Adam training, and a versioned
//! parameter container.
//!
//! Everything is `f64` end to end, and every random draw is tied to an
//! explicit seed, so any result in the crate can be reproduced bit for bit.

mod engine;
mod hvp;
mod io;
mod params;
pub(crate) mod rng;
pub(crate) mod scalar;
mod spec;
mod train;

pub use engine::{
    forward, forward_with_trace, per_sample_gradient, ForwardTrace, GradientMatrix,
};
pub use hvp::{
    grad_of_inner_product, grad_of_inner_product_for_coord, hvp_finite_difference,
    hvp_finite_difference_for_coord,
};
pub use io::{load_params, load_params_with_spec, save_params};
pub use params::ParamVector;
pub use spec::{Activation, Layout, LayoutEntry, NetworkSpec, ParamKind};
pub use train::{
    train, train_with_callback, AdamConfig, AuxContext, AuxTerm, Loss, TrainConfig, TrainRun,
};


/// Deterministic stream for test instance generation.
#[doc(hidden)]
pub fn stream_for_tests(seed: u64) -> rand_chacha::ChaCha8Rng {
    rng::stream(seed, &[0xC0FFEE])
}
