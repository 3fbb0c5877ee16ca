//! Small MLP toolkit: flat parameters, explicit backprop, initializers and optimizers.

mod batch;
mod init;
mod layout;
mod mlp;
mod optim;

pub use batch::{Batch, Matrix, Targets};
pub use init::{init_mask_values, init_params, InitScheme};
pub use layout::{GradVector, GroupKind, LayerLayout, ParamGroup, ParamVector};
pub use mlp::{accuracy_from_logits, Activation, ForwardCache, LossKind, Mlp};
pub use optim::{OptimizerKind, OptimizerState};

pub(crate) use layout::check_aligned as check_len;
