//! Layer primitives and the generator/discriminator pair.
//!
//! The discriminator emits two real-class logits `(l0, l1)`; the logit of the
//! "generated" class is pinned at zero and never materialized. Its last hidden
//! activation doubles as the feature map `f(x)` used by the generator losses.

mod checkpoint;
mod layers;
mod models;

use serde::{Deserialize, Serialize};

pub use checkpoint::Checkpoint;
pub use layers::{BoundDense, FeatureDropout, GaussianNoise, WeightNormDense};
pub use models::{
    predict_proba, sample_latent, BoundNetwork, Discriminator, DiscriminatorOutput, DiscriminatorVars,
    Generator,
};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Architecture hyperparameters shared by both networks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkConfig {
    pub feature_dim: usize,
    pub latent_dim: usize,
    pub d_hidden: Vec<usize>,
    pub g_hidden: Vec<usize>,
    pub leaky_slope: f64,
    /// Noise added to every hidden output of the discriminator.
    pub noise_sigma: f64,
    pub dropout_rate: f64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            feature_dim: 797,
            latent_dim: 100,
            d_hidden: vec![512, 384, 256, 128, 64],
            g_hidden: vec![64, 128, 256, 384, 512],
            leaky_slope: 0.2,
            noise_sigma: 0.1,
            dropout_rate: 0.2,
        }
    }
}

impl NetworkConfig {
    pub fn validate(&self) -> Result<()> {
        if self.feature_dim == 0 || self.latent_dim == 0 {
            return Err(Error::Config("feature and latent dimensions must be positive".into()));
        }
        if self.d_hidden.is_empty() || self.g_hidden.is_empty() {
            return Err(Error::Config("both networks need at least one hidden layer".into()));
        }
        if self.d_hidden.contains(&0) || self.g_hidden.contains(&0) {
            return Err(Error::Config("hidden widths must be positive".into()));
        }
        FeatureDropout::new(self.dropout_rate)?;
        GaussianNoise::new(self.noise_sigma)?;
        Ok(())
    }
}
