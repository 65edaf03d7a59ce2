//! ganseg-core: train ensembles of multi-channel GANs that jointly synthesize
//! MR-like images and segmentation annotations, train U-Net segmenters on
//! real/synthetic/mixed data, and evaluate with per-subject Dice plus
//! sign-flipping permutation statistics.
//!
//! The crate is CPU-only and fully deterministic: every training run,
//! dataset and report is a pure function of its config and seed.

pub mod augment;
pub mod dataio;
pub mod eval;
pub mod gan;
pub mod seed;
pub mod segmenter;
pub mod tensor;

pub use tensor::Tensor;
