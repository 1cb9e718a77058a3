//! Context-aware next point-of-interest forecasting.
//!
//! The crate is organized as a pipeline:
//!
//! 1. [`tensor`] / [`graph`] / [`autodiff`] / [`optim`] / [`checkpoint`] —
//!    a self-contained differentiable-computation substrate over `f64`
//!    tensors with numeric gradient checking.
//! 2. [`data`] — location-based check-in ingestion: file formats, dense id
//!    assignment, category mapping, local time slots, coordinate
//!    normalization, sliding windows, and chronological splits.
//! 3. [`social`] — neighbor discovery from check-in co-visitation and
//!    future-masked neighbor trajectory windows.
//! 4. [`model`] — the forecasting network: semantic/temporal embeddings,
//!    Transformer sequence encoders, neighbor attention, an auxiliary
//!    coordinate-forecasting branch, and fused prediction heads.
//! 5. [`train`] / [`metrics`] / [`ablation`] — losses, the training loop,
//!    ranking metrics, and the variant-comparison harness.
//! 6. [`synth`] / [`analysis`] — a synthetic check-in generator with
//!    plantable signals, plus trajectory analyses (hourly category
//!    histograms, dynamic time warping, gap-based clip statistics).
//!
//! # Example
//!
//! Differentiate a tiny expression and verify the gradient numerically:
//!
//! ```
//! use poicast::{Graph, Tensor, TensorMap, EvalContext};
//! use poicast::autodiff::{forward, backward, finite_diff_check, FD_STEP};
//!
//! let mut g = Graph::new();
//! let w = g.param("w", &[2, 2])?;
//! let x = g.input("x", &[1, 2])?;
//! let y = g.matmul(x, w)?;
//! let s = g.softmax(y)?;
//! let picked = g.slice_last(s, 0, 1)?;
//! let loss = g.sum_all(picked)?;
//! g.mark_output("loss", loss)?;
//!
//! let mut params = TensorMap::new();
//! params.insert("w".into(), Tensor::matrix(&[vec![0.5, -0.2], vec![0.1, 0.8]])?);
//! let mut bindings = TensorMap::new();
//! bindings.insert("x".into(), Tensor::new(vec![1, 2], vec![1.0, -1.0])?);
//!
//! let ctx = EvalContext::default();
//! let eval = forward(&g, &params, &bindings, &ctx)?;
//! let grads = backward(&g, &eval, "loss", None)?;
//! assert_eq!(grads["w"].shape(), &[2, 2]);
//!
//! let report = finite_diff_check(&g, &params, &bindings, "loss", FD_STEP, &ctx)?;
//! assert!(report.max_rel_err < 1e-4);
//! # Ok::<(), poicast::Error>(())
//! ```

pub mod autodiff;
pub mod checkpoint;
pub mod data;
pub mod error;
pub mod graph;
pub mod optim;
pub mod model;
pub mod rng;
pub mod analysis;
pub mod social;
pub mod synth;
pub mod tensor;
pub mod train;

pub use autodiff::{backward, finite_diff_check, forward, EvalContext, Evaluation, TensorMap};
pub use error::{Error, Result};
pub use graph::{Graph, NodeId, Op};
pub use optim::{AdamConfig, AdamState};
pub use tensor::Tensor;
