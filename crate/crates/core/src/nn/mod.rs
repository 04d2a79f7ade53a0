//! Minimal neural-network core: MLPs, a reverse-mode tape and Adam.

mod adam;
mod mlp;
mod tape;

pub use adam::{adam_step, AdamState};
pub use mlp::{stack_rows, BoundMlp, MlpNet};
pub use tape::{Gradients, Tape, Var};

pub(crate) use mlp::{read_f64, read_u32};
