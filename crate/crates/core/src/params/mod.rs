//! Named parameters, trainability selectors, counting and checkpoints.

pub mod checkpoint;
pub mod names;
mod selector;
mod store;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use names::BiasKind;
pub use selector::{
    bitfit_count, count_params, is_encoder, sample_rand_rowcol, sample_rand_uniform, Budget,
    CoordMask, Coverage, Glob, ParamCount, Regime, Selector, SelectorKind, TrainableSet,
};
pub use store::{Bindings, Gradients, Layout, ParamSnapshot, ParamSpec, ParameterStore};
