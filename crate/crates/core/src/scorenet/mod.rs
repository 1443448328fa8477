//! Multi-channel embeddings, a trainable noise-conditional score network and
//! its denoising score-matching trainer.

mod checkpoint;
pub mod layers;
mod net;
mod train;

pub use checkpoint::{CheckpointExpectation, CheckpointHeader};
pub use layers::{Grid, Real};
pub use net::{architecture_hash, from_channel_major, to_channel_major, Cache, Network, NetworkConfig};
pub use train::{
    dsm_objective, train, LossTrace, MixtureSource, PatchSet, PatchSource, RandomCrops, TrainConfig,
    PATCH_SIZES,
};

pub use crate::tensor::{stack, MultiChannelTensor};

use crate::error::Result;
use crate::kspace::ComplexImage;
use crate::tensor::{ScoreModel, TensorBatch};

/// `N` identical `(Re x, Im x)` channel pairs.
pub fn embed(x: &ComplexImage, replicas: usize) -> Result<MultiChannelTensor> {
    MultiChannelTensor::embed(x, replicas)
}

/// Replica mean of the real and imaginary planes.
pub fn mean_aggregate(x: &MultiChannelTensor) -> ComplexImage {
    x.mean_aggregate()
}

/// Adds independent `N(0, sigma^2)` noise to every plane entry.
pub fn inject_noise(x: &MultiChannelTensor, sigma: f64, seed: u64) -> Result<MultiChannelTensor> {
    x.inject_noise(sigma, seed)
}

/// A trained single-precision score network with its training provenance.
#[derive(Clone, Debug)]
pub struct ScoreNetwork {
    net: Network<f32>,
    patch_size: Option<usize>,
    seed: u64,
}

impl ScoreNetwork {
    pub fn from_parts(net: Network<f32>, patch_size: Option<usize>, seed: u64) -> Self {
        Self { net, patch_size, seed }
    }

    pub fn network(&self) -> &Network<f32> {
        &self.net
    }

    pub fn into_network(self) -> Network<f32> {
        self.net
    }

    pub fn patch_size(&self) -> Option<usize> {
        self.patch_size
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }
}

impl ScoreModel for ScoreNetwork {
    fn score(&self, x: &TensorBatch, sigma: f64) -> Result<TensorBatch> {
        self.net.score_batch(x, sigma)
    }

    fn replicas(&self) -> Option<usize> {
        Some(self.net.replicas())
    }
}
