//! Transformer encoder over feature windows, with an explicit backward pass.
//!
//! Layout: a width-`conv_kernel` convolution projects the input features to
//! the embedding, a fixed sinusoidal positional encoding is added, then
//! `layers` post-norm encoder blocks (multi-head self-attention and a ReLU
//! feed-forward of width `4 * embed_dim`) run, and the sequence is mean
//! pooled.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::tensor::{
    add_assign, gemm, layer_norm, layer_norm_backward, linear, linear_backward, softmax_in_place, View,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub input_dim: usize,
    pub embed_dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub conv_kernel: usize,
    /// Window length used for training and ensemble members.
    pub window: usize,
    pub ensemble: usize,
    pub positional_encoding: bool,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            input_dim: crate::features::FEATURE_DIM,
            embed_dim: 64,
            layers: 3,
            heads: 4,
            conv_kernel: 2,
            window: 60,
            ensemble: 8,
            positional_encoding: true,
        }
    }
}

impl EncoderConfig {
    pub fn ff_dim(&self) -> usize {
        4 * self.embed_dim
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.input_dim == 0 || self.embed_dim == 0 || self.heads == 0 || self.conv_kernel == 0 {
            return Err("encoder dimensions must be positive".into());
        }
        if !self.embed_dim.is_multiple_of(self.heads) {
            return Err(format!(
                "embed_dim {} is not divisible by {} heads",
                self.embed_dim, self.heads
            ));
        }
        if self.window < 2 || self.window < self.conv_kernel || self.ensemble == 0 {
            return Err("window must be at least 2 and cover the convolution; ensemble at least 1".into());
        }
        Ok(())
    }

    /// Shortest input the encoder accepts.
    pub fn min_len(&self) -> usize {
        self.conv_kernel.max(2)
    }
}

/// Offsets of one encoder block's parameters in the flat vector.
#[derive(Debug, Clone)]
struct BlockLayout {
    wqkv: Range<usize>,
    bqkv: Range<usize>,
    wo: Range<usize>,
    bo: Range<usize>,
    ln1_g: Range<usize>,
    ln1_b: Range<usize>,
    w1: Range<usize>,
    b1: Range<usize>,
    w2: Range<usize>,
    b2: Range<usize>,
    ln2_g: Range<usize>,
    ln2_b: Range<usize>,
}

/// Offsets of every encoder and head parameter in the flat vector.
#[derive(Debug, Clone)]
pub(crate) struct EncoderLayout {
    pub cfg: EncoderConfig,
    pub out_dim: usize,
    conv_w: Range<usize>,
    conv_b: Range<usize>,
    blocks: Vec<BlockLayout>,
    head_w: Range<usize>,
    head_b: Range<usize>,
    pub extra: Range<usize>,
    pub total: usize,
}

pub(crate) struct Allocator {
    next: usize,
}

impl Allocator {
    pub fn new() -> Self {
        Self { next: 0 }
    }

    pub fn take(&mut self, len: usize) -> Range<usize> {
        let r = self.next..self.next + len;
        self.next += len;
        r
    }

    pub fn total(&self) -> usize {
        self.next
    }
}

/// What to initialize a parameter block with.
pub(crate) enum Init {
    Xavier { fan_in: usize, fan_out: usize },
    Zeros,
    Ones,
}

impl EncoderLayout {
    /// `extra` reserves trailing parameters owned by the head (RED-SVM
    /// thresholds).
    pub fn new(cfg: &EncoderConfig, out_dim: usize, extra: usize) -> Self {
        let d = cfg.embed_dim;
        let ff = cfg.ff_dim();
        let mut a = Allocator::new();
        let conv_w = a.take(cfg.conv_kernel * cfg.input_dim * d);
        let conv_b = a.take(d);
        let blocks = (0..cfg.layers)
            .map(|_| BlockLayout {
                wqkv: a.take(d * 3 * d),
                bqkv: a.take(3 * d),
                wo: a.take(d * d),
                bo: a.take(d),
                ln1_g: a.take(d),
                ln1_b: a.take(d),
                w1: a.take(d * ff),
                b1: a.take(ff),
                w2: a.take(ff * d),
                b2: a.take(d),
                ln2_g: a.take(d),
                ln2_b: a.take(d),
            })
            .collect();
        let head_w = a.take(d * out_dim);
        let head_b = a.take(out_dim);
        let extra = a.take(extra);
        Self {
            cfg: cfg.clone(),
            out_dim,
            conv_w,
            conv_b,
            blocks,
            head_w,
            head_b,
            extra,
            total: a.total(),
        }
    }

    pub fn init_plan(&self) -> Vec<(Range<usize>, Init)> {
        let d = self.cfg.embed_dim;
        let ff = self.cfg.ff_dim();
        let fan_conv = self.cfg.conv_kernel * self.cfg.input_dim;
        let mut plan = vec![
            (self.conv_w.clone(), Init::Xavier { fan_in: fan_conv, fan_out: d }),
            (self.conv_b.clone(), Init::Zeros),
        ];
        for b in &self.blocks {
            plan.extend([
                (b.wqkv.clone(), Init::Xavier { fan_in: d, fan_out: d }),
                (b.bqkv.clone(), Init::Zeros),
                (b.wo.clone(), Init::Xavier { fan_in: d, fan_out: d }),
                (b.bo.clone(), Init::Zeros),
                (b.ln1_g.clone(), Init::Ones),
                (b.ln1_b.clone(), Init::Zeros),
                (b.w1.clone(), Init::Xavier { fan_in: d, fan_out: ff }),
                (b.b1.clone(), Init::Zeros),
                (b.w2.clone(), Init::Xavier { fan_in: ff, fan_out: d }),
                (b.b2.clone(), Init::Zeros),
                (b.ln2_g.clone(), Init::Ones),
                (b.ln2_b.clone(), Init::Zeros),
            ]);
        }
        // A zero head starts every method at its uninformed prediction.
        plan.push((self.head_w.clone(), Init::Zeros));
        plan.push((self.head_b.clone(), Init::Zeros));
        plan
    }
}

pub(crate) fn positional_encoding(len: usize, dim: usize) -> Vec<f64> {
    let mut pe = vec![0.0; len * dim];
    for t in 0..len {
        for i in (0..dim).step_by(2) {
            let freq = (10000f64).powf(-(i as f64) / dim as f64);
            let angle = t as f64 * freq;
            pe[t * dim + i] = angle.sin();
            if i + 1 < dim {
                pe[t * dim + i + 1] = angle.cos();
            }
        }
    }
    pe
}

struct BlockCache {
    input: Vec<f64>,
    qkv: Vec<f64>,
    /// One `len x len` attention matrix per head.
    attn: Vec<Vec<f64>>,
    mixed: Vec<f64>,
    norm1: Vec<f64>,
    xhat1: Vec<f64>,
    rstd1: Vec<f64>,
    ff_pre: Vec<f64>,
    ff_act: Vec<f64>,
    xhat2: Vec<f64>,
    rstd2: Vec<f64>,
}

pub(crate) struct ForwardCache {
    len: usize,
    stacked: Vec<f64>,
    blocks: Vec<BlockCache>,
    pub pooled: Vec<f64>,
    pub output: Vec<f64>,
}

impl EncoderLayout {
    /// Runs the encoder and head on `window` (`rows x input_dim`, row-major).
    pub fn forward(&self, params: &[f64], window: &[f64], rows: usize) -> ForwardCache {
        let cfg = &self.cfg;
        let (f, d, k) = (cfg.input_dim, cfg.embed_dim, cfg.conv_kernel);
        let len = rows + 1 - k;
        let wide = k * f;

        // Each convolution output sees `k` consecutive input rows.
        let mut stacked = Vec::with_capacity(len * wide);
        for t in 0..len {
            stacked.extend_from_slice(&window[t * f..(t + k) * f]);
        }
        let mut h = linear(&stacked, len, wide, &params[self.conv_w.clone()], &params[self.conv_b.clone()], d);
        if cfg.positional_encoding {
            add_assign(&mut h, &positional_encoding(len, d));
        }

        let mut blocks = Vec::with_capacity(self.blocks.len());
        for b in &self.blocks {
            let (next, cache) = self.block_forward(b, params, h, len);
            blocks.push(cache);
            h = next;
        }

        let mut pooled = vec![0.0; d];
        for row in h.chunks_exact(d) {
            add_assign(&mut pooled, row);
        }
        for v in &mut pooled {
            *v /= len as f64;
        }
        let output = linear(&pooled, 1, d, &params[self.head_w.clone()], &params[self.head_b.clone()], self.out_dim);
        ForwardCache {
            len,
            stacked,
            blocks,
            pooled,
            output,
        }
    }

    fn block_forward(&self, b: &BlockLayout, params: &[f64], input: Vec<f64>, len: usize) -> (Vec<f64>, BlockCache) {
        let d = self.cfg.embed_dim;
        let heads = self.cfg.heads;
        let dh = d / heads;
        let ff = self.cfg.ff_dim();
        let scale = 1.0 / (dh as f64).sqrt();

        let qkv = linear(&input, len, d, &params[b.wqkv.clone()], &params[b.bqkv.clone()], 3 * d);
        let mut mixed = vec![0.0; len * d];
        let mut attn = Vec::with_capacity(heads);
        for hd in 0..heads {
            let mut scores = vec![0.0; len * len];
            gemm(
                len,
                dh,
                len,
                scale,
                View::block(&qkv, 3 * d, hd * dh),
                View::block_t(&qkv, 3 * d, d + hd * dh),
                0.0,
                &mut scores,
                len,
            );
            for row in scores.chunks_exact_mut(len) {
                softmax_in_place(row);
            }
            gemm(
                len,
                len,
                dh,
                1.0,
                View::new(&scores, len),
                View::block(&qkv, 3 * d, 2 * d + hd * dh),
                0.0,
                &mut mixed[hd * dh..],
                d,
            );
            attn.push(scores);
        }
        let projected = linear(&mixed, len, d, &params[b.wo.clone()], &params[b.bo.clone()], d);
        let mut resid1 = input.clone();
        add_assign(&mut resid1, &projected);
        let (norm1, xhat1, rstd1) = layer_norm(&resid1, d, &params[b.ln1_g.clone()], &params[b.ln1_b.clone()]);

        let ff_pre = linear(&norm1, len, d, &params[b.w1.clone()], &params[b.b1.clone()], ff);
        let ff_act: Vec<f64> = ff_pre.iter().map(|&v| v.max(0.0)).collect();
        let ff_out = linear(&ff_act, len, ff, &params[b.w2.clone()], &params[b.b2.clone()], d);
        let mut resid2 = norm1.clone();
        add_assign(&mut resid2, &ff_out);
        let (out, xhat2, rstd2) = layer_norm(&resid2, d, &params[b.ln2_g.clone()], &params[b.ln2_b.clone()]);

        (
            out,
            BlockCache {
                input,
                qkv,
                attn,
                mixed,
                norm1,
                xhat1,
                rstd1,
                ff_pre,
                ff_act,
                xhat2,
                rstd2,
            },
        )
    }

    /// Accumulates parameter gradients into `grads` given the gradient of
    /// the loss with respect to the head output.
    pub fn backward(&self, params: &[f64], cache: &ForwardCache, d_output: &[f64], grads: &mut [f64]) {
        let cfg = &self.cfg;
        let d = cfg.embed_dim;
        let len = cache.len;

        // Head.
        let dpooled = {
            let (dw, rest) = split_two(grads, self.head_w.clone(), self.head_b.clone());
            linear_backward(&cache.pooled, d_output, 1, d, self.out_dim, &params[self.head_w.clone()], dw, rest, true)
                .expect("dx requested")
        };
        let mut dh = Vec::with_capacity(len * d);
        for _ in 0..len {
            dh.extend(dpooled.iter().map(|v| v / len as f64));
        }

        for (b, bc) in self.blocks.iter().zip(&cache.blocks).rev() {
            dh = self.block_backward(b, bc, params, dh, len, grads);
        }

        let wide = cfg.conv_kernel * cfg.input_dim;
        let (dw, db) = split_two(grads, self.conv_w.clone(), self.conv_b.clone());
        linear_backward(&cache.stacked, &dh, len, wide, d, &params[self.conv_w.clone()], dw, db, false);
    }

    fn block_backward(
        &self,
        b: &BlockLayout,
        c: &BlockCache,
        params: &[f64],
        dout: Vec<f64>,
        len: usize,
        grads: &mut [f64],
    ) -> Vec<f64> {
        let d = self.cfg.embed_dim;
        let heads = self.cfg.heads;
        let dh = d / heads;
        let ff = self.cfg.ff_dim();
        let scale = 1.0 / (dh as f64).sqrt();

        let dresid2 = {
            let (dg, db) = split_two(grads, b.ln2_g.clone(), b.ln2_b.clone());
            layer_norm_backward(&dout, &c.xhat2, &c.rstd2, d, &params[b.ln2_g.clone()], dg, db)
        };
        let mut dnorm1 = dresid2.clone();
        let mut dff_act = {
            let (dw, db) = split_two(grads, b.w2.clone(), b.b2.clone());
            linear_backward(&c.ff_act, &dresid2, len, ff, d, &params[b.w2.clone()], dw, db, true).expect("dx requested")
        };
        for (g, &pre) in dff_act.iter_mut().zip(&c.ff_pre) {
            if pre <= 0.0 {
                *g = 0.0;
            }
        }
        {
            let (dw, db) = split_two(grads, b.w1.clone(), b.b1.clone());
            let dx = linear_backward(&c.norm1, &dff_act, len, d, ff, &params[b.w1.clone()], dw, db, true)
                .expect("dx requested");
            add_assign(&mut dnorm1, &dx);
        }
        let dresid1 = {
            let (dg, db) = split_two(grads, b.ln1_g.clone(), b.ln1_b.clone());
            layer_norm_backward(&dnorm1, &c.xhat1, &c.rstd1, d, &params[b.ln1_g.clone()], dg, db)
        };
        let mut dinput = dresid1.clone();
        let dmixed = {
            let (dw, db) = split_two(grads, b.wo.clone(), b.bo.clone());
            linear_backward(&c.mixed, &dresid1, len, d, d, &params[b.wo.clone()], dw, db, true).expect("dx requested")
        };

        let mut dqkv = vec![0.0; len * 3 * d];
        let mut dscores = vec![0.0; len * len];
        for (hd, a) in c.attn.iter().enumerate() {
            // dA = dO_h V_h^T
            gemm(
                len,
                dh,
                len,
                1.0,
                View::block(&dmixed, d, hd * dh),
                View::block_t(&c.qkv, 3 * d, 2 * d + hd * dh),
                0.0,
                &mut dscores,
                len,
            );
            // dV_h = A^T dO_h
            gemm(
                len,
                len,
                dh,
                1.0,
                View::t(a, len),
                View::block(&dmixed, d, hd * dh),
                0.0,
                &mut dqkv[2 * d + hd * dh..],
                3 * d,
            );
            // Softmax backward, folding in the score scale.
            for (drow, arow) in dscores.chunks_exact_mut(len).zip(a.chunks_exact(len)) {
                let dot: f64 = drow.iter().zip(arow).map(|(g, p)| g * p).sum();
                for (g, p) in drow.iter_mut().zip(arow) {
                    *g = p * (*g - dot) * scale;
                }
            }
            // dQ_h = dS K_h, dK_h = dS^T Q_h
            gemm(
                len,
                len,
                dh,
                1.0,
                View::new(&dscores, len),
                View::block(&c.qkv, 3 * d, d + hd * dh),
                0.0,
                &mut dqkv[hd * dh..],
                3 * d,
            );
            gemm(
                len,
                len,
                dh,
                1.0,
                View::t(&dscores, len),
                View::block(&c.qkv, 3 * d, hd * dh),
                0.0,
                &mut dqkv[d + hd * dh..],
                3 * d,
            );
        }
        let (dw, db) = split_two(grads, b.wqkv.clone(), b.bqkv.clone());
        let dx = linear_backward(&c.input, &dqkv, len, d, 3 * d, &params[b.wqkv.clone()], dw, db, true)
            .expect("dx requested");
        add_assign(&mut dinput, &dx);
        dinput
    }
}

/// Two disjoint mutable sub-slices; `first` must precede `second`.
pub(crate) fn split_two(buf: &mut [f64], first: Range<usize>, second: Range<usize>) -> (&mut [f64], &mut [f64]) {
    assert!(first.end <= second.start);
    let (head, tail) = buf.split_at_mut(second.start);
    (&mut head[first], &mut tail[..second.len()])
}
