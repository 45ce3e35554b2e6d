//! Low-rank adapters whose update passes through an elementwise map, plus the
//! numerical tooling to study them at desk scale: a reverse-mode tape, the
//! activation family, synthetic tasks, AdamW training, spectral analysis and
//! the experiment drivers behind the `loran` command line.

pub mod activation;
pub mod adapter;
pub mod config;
pub mod error;
pub mod experiment;
pub mod gradcheck;
pub mod grid;
pub mod harness;
pub mod optim;
pub mod rng;
pub mod spectrum;
pub mod stats;
pub mod svd;
pub mod tape;
pub mod task;
pub mod tensor;
pub mod train;

pub use activation::Activation;
pub use adapter::{
    adapter_forward, adapted_output, Adapter, AdapterKind, DenseUpdate, FrozenLinear,
    LoraAdapter, LoranAdapter, WeightUpdate,
};
pub use error::{Error, Result};
pub use rng::SeededRng;
pub use tape::{Tape, Var};
pub use tensor::Tensor;
