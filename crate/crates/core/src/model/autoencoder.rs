//! Convolutional autoencoder over RGB images.
//!
//! The encoder condenses the input to a `b x b x c` bottleneck, flattens it,
//! and projects to a dense latent vector; the decoder mirrors the encoder
//! and ends in a sigmoid so reconstructions stay in [0, 1].

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{pool, ConvBlock, Conv2dLayer, DenseLayer, Network};
use crate::error::{Error, Result};
use crate::tensor::{relu, reshape, sigmoid, upsample2_nearest, Mode, Tensor};

#[derive(Debug, Clone)]
pub struct AutoencoderConfig {
    pub input_size: usize,
    /// Spatial side of the bottleneck feature map.
    pub bottleneck_size: usize,
    /// Channels of the bottleneck feature map.
    pub bottleneck_channels: usize,
    /// Length of the latent vector.
    pub latent_dim: usize,
    pub kernel: usize,
}

impl Default for AutoencoderConfig {
    /// Desk-scale configuration: 64-px inputs, 8x8x16 bottleneck, latent 32.
    fn default() -> Self {
        AutoencoderConfig {
            input_size: 64,
            bottleneck_size: 8,
            bottleneck_channels: 16,
            latent_dim: 32,
            kernel: 3,
        }
    }
}

impl AutoencoderConfig {
    /// Full-scale configuration: 256-px inputs condensed to 32x32x16
    /// (16384 flattened) and a latent vector of length 512.
    pub fn full_scale() -> Self {
        AutoencoderConfig {
            input_size: 256,
            bottleneck_size: 32,
            bottleneck_channels: 16,
            latent_dim: 512,
            kernel: 3,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.kernel % 2 == 0 {
            return Err(Error::Config(format!("autoencoder kernel {} must be odd", self.kernel)));
        }
        if self.bottleneck_size == 0
            || self.input_size % self.bottleneck_size != 0
            || !(self.input_size / self.bottleneck_size).is_power_of_two()
            || self.input_size == self.bottleneck_size
        {
            return Err(Error::Config(format!(
                "autoencoder input {} must be bottleneck {} times a power of two",
                self.input_size, self.bottleneck_size
            )));
        }
        if self.latent_dim == 0 || self.bottleneck_channels == 0 {
            return Err(Error::Config("autoencoder latent and channels must be positive".to_string()));
        }
        Ok(())
    }

    fn levels(&self) -> usize {
        (self.input_size / self.bottleneck_size).trailing_zeros() as usize
    }

    /// Channel widths per encoder level, halving backwards from the
    /// bottleneck and never below 4.
    fn channel_ramp(&self) -> Vec<usize> {
        let l = self.levels();
        (0..l)
            .map(|i| (self.bottleneck_channels >> (l - 1 - i)).max(4))
            .collect()
    }

    /// Flattened bottleneck length feeding the latent projection.
    pub fn flat_features(&self) -> usize {
        self.bottleneck_size * self.bottleneck_size * self.bottleneck_channels
    }
}

pub struct Autoencoder {
    pub cfg: AutoencoderConfig,
    enc_blocks: Vec<ConvBlock>,
    to_latent: DenseLayer,
    from_latent: DenseLayer,
    dec_blocks: Vec<ConvBlock>,
    head: Conv2dLayer,
}

impl Autoencoder {
    pub fn build(cfg: &AutoencoderConfig, seed: u64) -> Result<Autoencoder> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ramp = cfg.channel_ramp();

        let mut enc_blocks = Vec::with_capacity(ramp.len());
        let mut cin = 3;
        for &cout in &ramp {
            enc_blocks.push(ConvBlock::new(cfg.kernel, cin, cout, &mut rng));
            cin = cout;
        }
        let to_latent = DenseLayer::new(cfg.flat_features(), cfg.latent_dim, &mut rng);
        let from_latent = DenseLayer::new(cfg.latent_dim, cfg.flat_features(), &mut rng);
        let mut dec_blocks = Vec::with_capacity(ramp.len());
        let mut cin = cfg.bottleneck_channels;
        for &cout in ramp.iter().rev() {
            dec_blocks.push(ConvBlock::new(cfg.kernel, cin, cout, &mut rng));
            cin = cout;
        }
        let head = Conv2dLayer::new(1, cin, 3, &mut rng);
        Ok(Autoencoder {
            cfg: cfg.clone(),
            enc_blocks,
            to_latent,
            from_latent,
            dec_blocks,
            head,
        })
    }

    /// `[N,S,S,3]` RGB in, `[N,latent]` out.
    pub fn encode(&self, rgb: &Tensor, mode: Mode) -> Result<Tensor> {
        let s = self.cfg.input_size;
        if rgb.shape().len() != 4 || rgb.shape()[1] != s || rgb.shape()[2] != s || rgb.shape()[3] != 3
        {
            return Err(Error::shape(
                "autoencoder.encode",
                format!("expected [N,{s},{s},3], got {:?}", rgb.shape()),
            ));
        }
        let mut h = rgb.clone();
        for block in &self.enc_blocks {
            h = pool(&block.forward(&h, mode)?)?;
        }
        let n = h.shape()[0];
        let flat = reshape(&h, &[n, self.cfg.flat_features()])?;
        self.to_latent.forward(&flat)
    }

    /// `[N,latent]` in, `[N,S,S,3]` reconstruction in [0,1] out.
    pub fn decode(&self, z: &Tensor, mode: Mode) -> Result<Tensor> {
        if z.shape().len() != 2 || z.shape()[1] != self.cfg.latent_dim {
            return Err(Error::shape(
                "autoencoder.decode",
                format!("expected [N,{}], got {:?}", self.cfg.latent_dim, z.shape()),
            ));
        }
        let n = z.shape()[0];
        let b = self.cfg.bottleneck_size;
        let mut h = relu(&self.from_latent.forward(z)?);
        h = reshape(&h, &[n, b, b, self.cfg.bottleneck_channels])?;
        for block in &self.dec_blocks {
            h = block.forward(&upsample2_nearest(&h)?, mode)?;
        }
        Ok(sigmoid(&self.head.forward(&h)?))
    }

    pub fn forward(&self, rgb: &Tensor, mode: Mode) -> Result<Tensor> {
        self.decode(&self.encode(rgb, mode)?, mode)
    }
}

impl Network for Autoencoder {
    fn params(&self) -> Vec<(String, Tensor)> {
        let mut out = Vec::new();
        for (i, b) in self.enc_blocks.iter().enumerate() {
            b.collect(&format!("enc{i}"), &mut out);
        }
        self.to_latent.collect("to_latent", &mut out);
        self.from_latent.collect("from_latent", &mut out);
        for (i, b) in self.dec_blocks.iter().enumerate() {
            b.collect(&format!("dec{i}"), &mut out);
        }
        self.head.collect("head", &mut out);
        out
    }

    fn buffers(&self) -> Vec<(String, Tensor)> {
        let mut out = Vec::new();
        for (i, b) in self.enc_blocks.iter().enumerate() {
            b.collect_buffers(&format!("enc{i}"), &mut out);
        }
        for (i, b) in self.dec_blocks.iter().enumerate() {
            b.collect_buffers(&format!("dec{i}"), &mut out);
        }
        out
    }
}
