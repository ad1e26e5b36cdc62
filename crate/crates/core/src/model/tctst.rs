use gaitlab_numerics::{Module, Parameter, RngStream, Scalar, Tensor};

use super::backbone::{mean_tokens, mean_tokens_backward, Backbone, BackboneCache, Head, HeadCache};
use super::config::TctstConfig;
use super::PhaseModel;
use crate::{Error, Result};

/// Channel-token Transformer: embed each channel, encode across channels,
/// average the channel tokens and regress the polar phase vector.
#[derive(Clone, Debug)]
pub struct TctstModel<F> {
    pub config: TctstConfig,
    pub backbone: Backbone<F>,
    pub head: Head<F>,
}

pub struct TctstCache<F> {
    backbone: BackboneCache<F>,
    head: HeadCache<F>,
    channels: usize,
}

impl<F: Scalar> TctstModel<F> {
    /// Backbone and head draw from independent forks of `seed`, so a fresh
    /// head does not depend on the backbone's initialisation.
    pub fn new(config: TctstConfig, seed: u64) -> Result<Self> {
        let root = RngStream::new(seed, 0);
        let backbone = Backbone::new(&config, &mut root.fork(10))?;
        let head = Head::new(config.emb_dim, config.latent_dim, config.dropout, &mut root.fork(20));
        Ok(Self { config, backbone, head })
    }
}

impl<F: Scalar> PhaseModel<F> for TctstModel<F> {
    type Cache = TctstCache<F>;

    fn config(&self) -> &TctstConfig {
        &self.config
    }

    fn forward(&self, x: &Tensor<F>, rng: Option<&mut RngStream>) -> Result<(Tensor<F>, TctstCache<F>)> {
        let shape = x.shape();
        if shape.len() != 3 || shape[1] != self.config.channels || shape[2] != self.config.lookback {
            return Err(Error::invalid(format!(
                "model expects [B, {}, {}], got {shape:?}",
                self.config.channels, self.config.lookback
            )));
        }
        let (z, backbone) = self.backbone.forward(x)?;
        let pooled = mean_tokens(&z)?;
        let (y, head) = self.head.forward(pooled, rng)?;
        Ok((
            y,
            TctstCache {
                backbone,
                head,
                channels: self.config.channels,
            },
        ))
    }

    fn backward(&mut self, cache: &TctstCache<F>, dy: &Tensor<F>) -> Result<()> {
        let dpooled = self.head.backward(&cache.head, dy);
        let dz = mean_tokens_backward(&dpooled, cache.channels);
        self.backbone.backward(&cache.backbone, &dz)
    }
}

impl<F: Scalar> Module<F> for TctstModel<F> {
    fn params(&self) -> Vec<&Parameter<F>> {
        let mut v = self.backbone.params();
        v.extend(self.head.params());
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Parameter<F>> {
        let mut v = self.backbone.params_mut();
        v.extend(self.head.params_mut());
        v
    }
}
