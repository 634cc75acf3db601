//! Regressor, reverse-mode gradients, the finite-difference oracle and the
//! optimizer step.

pub mod checkpoint;
pub mod gradcheck;
pub mod mlp;
pub mod optim;
pub mod tape;

pub use checkpoint::ModelCheckpoint;
pub use gradcheck::{finite_diff_grad, max_rel_err};
pub use mlp::{embed_input, grad_loss, input_dim, mlp_init, Activation, MlpModel, TapedMlp};
pub use optim::{optimizer_step, OptimHyper, OptimizerState};
pub use tape::{Tape, Var};
