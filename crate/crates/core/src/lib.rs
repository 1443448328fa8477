//! Score-based reconstruction of undersampled MRI.
//!
//! A noise-conditional score model is trained by denoising score matching on
//! multi-channel embeddings of complex images, then used as the prior inside
//! an annealed Langevin loop that alternates with a closed-form k-space
//! data-consistency update.
//!
//! Module map:
//! - [`kspace`]: unitary 2-D DFT, sampling masks, undersampling, data consistency
//! - [`density`]: Gaussian-mixture oracles, noise schedules, DSM/DAE losses
//! - [`scorenet`]: multi-channel tensors and a small trainable score network
//! - [`sampler`]: annealed Langevin dynamics
//! - [`recon`]: the homotopic reconstruction driver
//! - [`metrics`]: PSNR, SSIM and HFEN on magnitude images
//! - [`phantom`]: synthetic ellipse phantoms and patch extraction
//! - [`io`]: raw complex/mask file formats and PNG export

pub mod density;
pub mod error;
pub mod io;
pub mod kspace;
pub mod metrics;
pub mod phantom;
pub mod recon;
pub mod rng;
pub mod sampler;
pub mod scorenet;
pub mod tensor;

pub use density::{GaussianMixture, NoiseSchedule};
pub use error::{Error, Result};
pub use kspace::{ComplexImage, KSpaceData, MaskKind, SamplingMask};
pub use metrics::MetricResult;
pub use recon::{ReconConfig, ReconReport};
pub use sampler::LangevinConfig;
pub use scorenet::{ScoreNetwork, TrainConfig};
pub use tensor::{MultiChannelTensor, ScoreModel, TensorBatch, TensorShape};

pub use num_complex::Complex64;
