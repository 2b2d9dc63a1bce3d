//! The trainable core: a shape-preserving latent mapper over the image
//! latent, a transformer-style residual encoder lifting the high-pass
//! residual stack onto the latent grid, and the fusion head that
//! concatenates both and projects back to decoder channels.

use serde::{Deserialize, Serialize};

use crate::codec::LatentTensor;
use crate::error::{Error, Result};
use crate::nn::{
    silu_backward, silu_forward, Conv2d, Conv2dCache, Linear, LinearCache, Param, Params,
    PatchEmbed, PatchEmbedCache, TransformerBlock, TransformerBlockCache,
};
use crate::rng::Pcg32;
use crate::scalar::Scalar;
use crate::srm::ResidualTensor;

// ---------------------------------------------------------------------------
// Latent mapper: residual convolution stack, identity at init
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LatentMapperConfig {
    pub blocks: usize,
    pub width: usize,
}

impl Default for LatentMapperConfig {
    fn default() -> Self {
        Self {
            blocks: 4,
            width: 64,
        }
    }
}

struct ResBlock<T> {
    conv1: Conv2d<T>,
    conv2: Conv2d<T>,
}

pub struct LatentMapper<T> {
    blocks: Vec<ResBlock<T>>,
    pub config: LatentMapperConfig,
    pub channels: usize,
}

pub struct LatentMapperCache<T> {
    blocks: Vec<(Conv2dCache<T>, Vec<T>, Conv2dCache<T>)>,
    h: usize,
    w: usize,
}

impl<T: Scalar> LatentMapper<T> {
    pub fn new(config: LatentMapperConfig, channels: usize, rng: &mut Pcg32) -> Self {
        let blocks = (0..config.blocks)
            .map(|i| ResBlock {
                conv1: Conv2d::new(&format!("lmm.b{i}.conv1"), channels, config.width, 3, rng),
                // zero-init second conv: each block starts as the identity
                conv2: Conv2d::new_zeroed(&format!("lmm.b{i}.conv2"), config.width, channels, 3),
            })
            .collect();
        Self {
            blocks,
            config,
            channels,
        }
    }

    pub fn forward(&self, z: &LatentTensor<T>) -> Result<(LatentTensor<T>, LatentMapperCache<T>)> {
        if z.channels != self.channels {
            return Err(Error::ShapeError(format!(
                "latent mapper expects {} channels, got {}",
                self.channels, z.channels
            )));
        }
        let (h, w) = (z.height, z.width);
        let mut cur = z.data.clone();
        let mut caches = Vec::with_capacity(self.blocks.len());
        for block in &self.blocks {
            let (mut a, c1) = block.conv1.forward(&cur, h, w);
            let pre = silu_forward(&mut a);
            let (b, c2) = block.conv2.forward(&a, h, w);
            for (x, add) in cur.iter_mut().zip(&b) {
                *x += *add;
            }
            caches.push((c1, pre, c2));
        }
        Ok((
            LatentTensor {
                height: h,
                width: w,
                channels: z.channels,
                data: cur,
            },
            LatentMapperCache {
                blocks: caches,
                h,
                w,
            },
        ))
    }

    pub fn backward(&mut self, cache: &LatentMapperCache<T>, dz_out: &[T]) -> Vec<T> {
        let _ = (cache.h, cache.w);
        let mut d = dz_out.to_vec();
        for (block, (c1, pre, c2)) in self.blocks.iter_mut().zip(cache.blocks.iter()).rev() {
            let mut db = block.conv2.backward(c2, &d);
            silu_backward(pre, &mut db);
            let dskip = block.conv1.backward(c1, &db);
            for (x, add) in d.iter_mut().zip(&dskip) {
                *x += *add;
            }
        }
        d
    }
}

impl<T: Scalar> Params<T> for LatentMapper<T> {
    fn visit(&self, f: &mut dyn FnMut(&Param<T>)) {
        for b in &self.blocks {
            b.conv1.visit(f);
            b.conv2.visit(f);
        }
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        for b in &mut self.blocks {
            b.conv1.visit_mut(f);
            b.conv2.visit_mut(f);
        }
    }
}

// ---------------------------------------------------------------------------
// Residual encoder: patch embedding + transformer blocks over residual stack
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResidualEncoderConfig {
    /// Patch size; equal to the codec downsample factor so tokens align 1:1
    /// with latent cells.
    pub patch: usize,
    pub dim: usize,
    pub blocks: usize,
    pub heads: usize,
    pub mlp_hidden: usize,
    /// Output channels c_f of the lifted latent grid.
    pub out_channels: usize,
}

impl Default for ResidualEncoderConfig {
    fn default() -> Self {
        Self {
            patch: 4,
            dim: 128,
            blocks: 4,
            heads: 4,
            mlp_hidden: 256,
            out_channels: 16,
        }
    }
}

pub struct ResidualEncoder<T> {
    pub config: ResidualEncoderConfig,
    embed: PatchEmbed<T>,
    /// Learned positional table for the nominal token count; grids of other
    /// sizes reuse rows cyclically.
    pos: Param<T>,
    blocks: Vec<TransformerBlock<T>>,
    norm: crate::nn::LayerNorm<T>,
    out: Linear<T>,
    nominal_tokens: usize,
}

pub struct ResidualEncoderCache<T> {
    embed: PatchEmbedCache<T>,
    blocks: Vec<TransformerBlockCache<T>>,
    norm: crate::nn::LayerNormCache<T>,
    out: LinearCache<T>,
    n_tokens: usize,
    th: usize,
    tw: usize,
}

impl<T: Scalar> ResidualEncoder<T> {
    pub fn new(config: ResidualEncoderConfig, nominal_hw: (usize, usize), rng: &mut Pcg32) -> Self {
        let embed = PatchEmbed::new("flmm.embed", config.patch, 3, config.dim, rng);
        let nominal_tokens = (nominal_hw.0 / config.patch) * (nominal_hw.1 / config.patch);
        let pos = Param::normal(
            "flmm.pos",
            vec![nominal_tokens, config.dim],
            0.02,
            rng,
            false,
        );
        let blocks = (0..config.blocks)
            .map(|i| {
                TransformerBlock::new(
                    &format!("flmm.b{i}"),
                    config.dim,
                    config.heads,
                    config.mlp_hidden,
                    rng,
                )
            })
            .collect();
        let norm = crate::nn::LayerNorm::new("flmm.norm", config.dim);
        let out = Linear::new(
            "flmm.out",
            config.dim,
            config.out_channels,
            (1.0 / config.dim as f64).sqrt(),
            rng,
        );
        Self {
            config,
            embed,
            pos,
            blocks,
            norm,
            out,
            nominal_tokens,
        }
    }

    pub fn forward(
        &self,
        residual: &ResidualTensor<T>,
    ) -> Result<(LatentTensor<T>, ResidualEncoderCache<T>)> {
        let p = self.config.patch;
        if residual.height % p != 0 || residual.width % p != 0 {
            return Err(Error::ShapeError(format!(
                "residual {}x{} not divisible by patch {p}",
                residual.height, residual.width
            )));
        }
        let (th, tw) = (residual.height / p, residual.width / p);
        let n_tokens = th * tw;
        let (mut tokens, embed_cache) = self.embed.forward(&residual.data, residual.height, residual.width);
        let d = self.config.dim;
        for t in 0..n_tokens {
            let row = (t % self.nominal_tokens) * d;
            for i in 0..d {
                tokens[t * d + i] += self.pos.w[row + i];
            }
        }
        let mut block_caches = Vec::with_capacity(self.blocks.len());
        for block in &self.blocks {
            let (next, cache) = block.forward(&tokens);
            tokens = next;
            block_caches.push(cache);
        }
        let (normed, norm_cache) = self.norm.forward(&tokens);
        let (grid, out_cache) = self.out.forward(&normed);
        Ok((
            LatentTensor {
                height: th,
                width: tw,
                channels: self.config.out_channels,
                data: grid,
            },
            ResidualEncoderCache {
                embed: embed_cache,
                blocks: block_caches,
                norm: norm_cache,
                out: out_cache,
                n_tokens,
                th,
                tw,
            },
        ))
    }

    pub fn backward(&mut self, cache: &ResidualEncoderCache<T>, dz_f: &[T]) -> Vec<T> {
        let _ = (cache.th, cache.tw);
        let dnormed = self.out.backward(&cache.out, dz_f);
        let mut d = self.norm.backward(&cache.norm, &dnormed);
        for (block, bc) in self.blocks.iter_mut().zip(cache.blocks.iter()).rev() {
            d = block.backward(bc, &d);
        }
        let dim = self.config.dim;
        for t in 0..cache.n_tokens {
            let row = (t % self.nominal_tokens) * dim;
            for i in 0..dim {
                self.pos.g[row + i] += d[t * dim + i];
            }
        }
        self.embed.backward(&cache.embed, &d)
    }
}

impl<T: Scalar> Params<T> for ResidualEncoder<T> {
    fn visit(&self, f: &mut dyn FnMut(&Param<T>)) {
        self.embed.visit(f);
        f(&self.pos);
        for b in &self.blocks {
            b.visit(f);
        }
        self.norm.visit(f);
        self.out.visit(f);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        self.embed.visit_mut(f);
        f(&mut self.pos);
        for b in &mut self.blocks {
            b.visit_mut(f);
        }
        self.norm.visit_mut(f);
        self.out.visit_mut(f);
    }
}

// ---------------------------------------------------------------------------
// Fusion: channel concat + 1x1 projection back to decoder channels
// ---------------------------------------------------------------------------

pub struct FusionHead<T> {
    pub proj: Linear<T>,
    pub c_latent: usize,
    pub c_residual: usize,
}

pub struct FusionCache<T> {
    proj: LinearCache<T>,
    h: usize,
    w: usize,
}

impl<T: Scalar> FusionHead<T> {
    pub fn new(c_latent: usize, c_residual: usize, rng: &mut Pcg32) -> Self {
        let d_in = c_latent + c_residual;
        Self {
            proj: Linear::new("fusion.proj", d_in, c_latent, (1.0 / d_in as f64).sqrt(), rng),
            c_latent,
            c_residual,
        }
    }

    /// Concatenate channels of the mapped image latent and the lifted
    /// residual latent, then project to decoder channel count.
    pub fn forward(
        &self,
        z_mapped: &LatentTensor<T>,
        z_residual: &LatentTensor<T>,
    ) -> Result<(LatentTensor<T>, FusionCache<T>)> {
        if z_mapped.height != z_residual.height || z_mapped.width != z_residual.width {
            return Err(Error::ShapeError(format!(
                "fusion spatial mismatch {}x{} vs {}x{}",
                z_mapped.height, z_mapped.width, z_residual.height, z_residual.width
            )));
        }
        if z_mapped.channels != self.c_latent || z_residual.channels != self.c_residual {
            return Err(Error::ShapeError(format!(
                "fusion channels {}+{} do not match configured {}+{}",
                z_mapped.channels, z_residual.channels, self.c_latent, self.c_residual
            )));
        }
        let (h, w) = (z_mapped.height, z_mapped.width);
        let n = h * w;
        let d_in = self.c_latent + self.c_residual;
        let mut cat = vec![T::zero(); n * d_in];
        for pos in 0..n {
            cat[pos * d_in..pos * d_in + self.c_latent]
                .copy_from_slice(&z_mapped.data[pos * self.c_latent..(pos + 1) * self.c_latent]);
            cat[pos * d_in + self.c_latent..(pos + 1) * d_in].copy_from_slice(
                &z_residual.data[pos * self.c_residual..(pos + 1) * self.c_residual],
            );
        }
        let (y, proj) = self.proj.forward(&cat);
        Ok((
            LatentTensor {
                height: h,
                width: w,
                channels: self.c_latent,
                data: y,
            },
            FusionCache { proj, h, w },
        ))
    }

    /// Returns (d z_mapped, d z_residual).
    pub fn backward(&mut self, cache: &FusionCache<T>, dy: &[T]) -> (Vec<T>, Vec<T>) {
        let dcat = self.proj.backward(&cache.proj, dy);
        let n = cache.h * cache.w;
        let d_in = self.c_latent + self.c_residual;
        let mut da = vec![T::zero(); n * self.c_latent];
        let mut db = vec![T::zero(); n * self.c_residual];
        for pos in 0..n {
            da[pos * self.c_latent..(pos + 1) * self.c_latent]
                .copy_from_slice(&dcat[pos * d_in..pos * d_in + self.c_latent]);
            db[pos * self.c_residual..(pos + 1) * self.c_residual]
                .copy_from_slice(&dcat[pos * d_in + self.c_latent..(pos + 1) * d_in]);
        }
        (da, db)
    }
}

impl<T: Scalar> Params<T> for FusionHead<T> {
    fn visit(&self, f: &mut dyn FnMut(&Param<T>)) {
        self.proj.visit(f);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        self.proj.visit_mut(f);
    }
}
