//! Channel-specific convolutional sparse coding for underwater image
//! enhancement.
//!
//! An RGB image is split into its three channels. Each channel passes
//! through its own unrolled sparse-coding block ([`SfebParams`]): a few
//! iterations of learned shrinkage-thresholding with a decreasing,
//! softplus-parameterized threshold. A per-channel convolution maps each
//! sparse code back to one output channel.
//!
//! Everything is implemented from scratch on [`Tensor3`] (height × width ×
//! channels) with hand-written backward passes. The numeric routines are
//! generic over [`Real`] (`f32` or `f64`); the aliases below fix the
//! precision.
//!
//! ```
//! use sinet::{ModelConfig, SinetParams, Tensor3, Variant};
//!
//! let cfg = ModelConfig::new(4, 3, 2, Variant::Full);
//! let model = SinetParams::<f64>::init(cfg, 7).unwrap();
//! let image = Tensor3::filled(8, 8, 3, 0.5);
//! let out = model.infer(&image).unwrap();
//! assert_eq!(out.shape(), (8, 8, 3));
//! ```

pub mod augment;
pub mod checkpoint;
pub mod config;
pub mod conv;
pub mod csc;
pub mod dataset;
pub mod error;
pub mod gradcheck;
pub mod imageio;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod scalar;
pub mod sfeb;
pub mod tensor;
pub mod train;
pub mod verify;

pub use checkpoint::{load_checkpoint, save_checkpoint, Precision};
pub use config::{parse_config, RunConfig};
pub use conv::{conv2d_adjoint, conv2d_same, conv2d_weight_grad, sobel_gradients, KernelBank};
pub use csc::{csc_objective, estimate_lipschitz, ista_solve, soft_threshold, CscProblem};
pub use dataset::DatasetIndex;
pub use error::{Error, Result};
pub use gradcheck::{grad_check, GradCheckReport};
pub use imageio::{load_image, save_image};
pub use loss::{loss_intensity, loss_ssim, loss_texture, ssim, total_loss, LossConfig};
pub use metrics::{evaluate_dir, flops_estimate, psnr, FlopsEstimate, MetricReport};
pub use model::{init_params, ModelConfig, SinetParams, Variant};
pub use optim::{adam_step, AdamConfig, AdamState};
pub use scalar::Real;
pub use sfeb::{theta_at, SfebParams, SfebTrace, ThresholdSchedule};
pub use tensor::Tensor3;
pub use train::{train, LogEntry, TrainConfig, TrainingLog};

pub type Tensor3f = Tensor3<f32>;
pub type Tensor3d = Tensor3<f64>;
pub type KernelBankF32 = KernelBank<f32>;
pub type KernelBankF64 = KernelBank<f64>;
pub type SfebParamsF32 = SfebParams<f32>;
pub type SfebParamsF64 = SfebParams<f64>;
pub type SinetParamsF32 = SinetParams<f32>;
pub type SinetParamsF64 = SinetParams<f64>;
pub type CscProblemF64 = CscProblem<f64>;
