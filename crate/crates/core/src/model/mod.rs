//! The BERT-style encoder, its heads, and parameter initialization.

mod config;
mod encoder;

pub use config::{HeadKind, ModelConfig};
pub use encoder::{
    classify_cls, encode, forward, head_logits, mlm_loss, mlm_objective, tag_tokens, task_loss,
    ActivationTrace, Batch, LayerTrace, IGNORE_LABEL,
};

use crate::error::Result;
use crate::params::names::{self, MLM_PREFIX};
use crate::params::{Layout, ParameterStore};
use crate::rng::RngStream;
use crate::tensor::Tensor;

pub const PAD_ID: usize = 0;
pub const CLS_ID: usize = 1;
pub const SEP_ID: usize = 2;
pub const MASK_ID: usize = 3;
/// Ids below this are reserved special tokens.
pub const NUM_SPECIAL: usize = 4;

/// Standard deviation of the normal weight initializer.
pub const INIT_STD: f64 = 0.02;

fn init_tensor(name: &str, shape: &[usize], rng: &mut RngStream) -> Tensor {
    if names::is_bias(name) {
        Tensor::zeros(shape)
    } else if name.contains("LayerNorm") {
        Tensor::full(shape, 1.0)
    } else {
        let n = shape.iter().product();
        let data = (0..n).map(|_| rng.normal(0.0, INIT_STD)).collect();
        Tensor::new(shape.to_vec(), data).expect("shape matches")
    }
}

fn init_layout(store: &mut ParameterStore, layout: &Layout, rng: &mut RngStream) -> Result<()> {
    for spec in &layout.specs {
        let t = init_tensor(&spec.name, &spec.shape, rng);
        store.insert(spec.name.clone(), t)?;
    }
    Ok(())
}

/// Fresh encoder plus MLM head: weights `N(0, 0.02)`, biases zero, LN gains one.
pub fn init_pretraining_store(cfg: &ModelConfig, seed: u64) -> Result<ParameterStore> {
    cfg.validate()?;
    let mut rng = RngStream::new(seed, "init");
    let mut store = ParameterStore::new();
    init_layout(&mut store, &cfg.encoder_layout(), &mut rng)?;
    let mlm = Layout {
        specs: cfg.mlm_specs().to_vec(),
    };
    init_layout(&mut store, &mlm, &mut rng)?;
    Ok(store)
}

/// Drops the MLM projection and attaches a freshly initialized task head.
pub fn attach_task_head(
    encoder: &ParameterStore,
    cfg: &ModelConfig,
    head: HeadKind,
    num_labels: usize,
    seed: u64,
) -> Result<ParameterStore> {
    let mut store = encoder.clone();
    store.retain(|n| !n.starts_with(MLM_PREFIX) && !names::is_head(n));
    let mut rng = RngStream::new(seed, "head-init");
    let head_layout = Layout {
        specs: cfg.head_specs(head, num_labels).to_vec(),
    };
    init_layout(&mut store, &head_layout, &mut rng)?;
    Ok(store)
}
