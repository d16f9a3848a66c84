//! Small dense networks with hand-written backpropagation and Adam.

mod mlp;
mod optim;

pub use mlp::{rows_to_array, soft_update, Activation, ForwardCache, Mlp};
pub use optim::{clip_grad_norm, global_norm, Adam, AdamConfig};
