//! The carrier vision transformer: patch embedding, pre-norm blocks with
//! multi-head self-attention and a 4x GELU MLP, class-token readout.
//!
//! Attention accepts an optional per-token retention weight vector. With
//! weights attached, each key/value column j is scaled by `beta[j]` and
//! the attention rows renormalized, so a zero weight behaves exactly like
//! removing the token while keeping tensor shapes fixed.

use crate::config::ViTConfig;
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{gelu, layer_norm, matmul, softmax_slice, Scalar, Tensor};

/// Floor for the weighted-attention denominator; unreachable while the
/// class token keeps weight one, covers fuzzed all-zero rows.
pub const ATTENTION_DENOM_FLOOR: f64 = 1e-12;

const INIT_STD: f64 = 0.02;

#[derive(Clone, Debug, PartialEq)]
pub struct LayerWeights<S: Scalar = f64> {
    pub wq: Tensor<S>,
    pub wk: Tensor<S>,
    pub wv: Tensor<S>,
    pub wo: Tensor<S>,
    pub mlp1: Tensor<S>,
    pub mlp2: Tensor<S>,
    pub ln1_gamma: Tensor<S>,
    pub ln1_beta: Tensor<S>,
    pub ln2_gamma: Tensor<S>,
    pub ln2_beta: Tensor<S>,
}

/// All trainable parameters, including the life predictor's bilinear
/// matrix and its layer norm.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelWeights<S: Scalar = f64> {
    pub patch_embed: Tensor<S>,
    pub pos_embed: Tensor<S>,
    pub cls_token: Tensor<S>,
    pub blocks: Vec<LayerWeights<S>>,
    pub final_ln_gamma: Tensor<S>,
    pub final_ln_beta: Tensor<S>,
    pub head: Tensor<S>,
    pub life_w: Tensor<S>,
    pub life_ln_gamma: Tensor<S>,
    pub life_ln_beta: Tensor<S>,
}

pub const LAYER_NORM_EPS: f64 = 1e-5;

impl ModelWeights<f64> {
    /// Random initialization: normal(0, 0.02) matrices, identity layer
    /// norms, and the bilinear life matrix starting as identity plus
    /// small noise so life scores begin as cls-patch similarity.
    pub fn init(cfg: &ViTConfig, seed: u64) -> Self {
        let d = cfg.embed_dim;
        let mut rng = Rng::seeded(seed);
        let mut mat = |r: usize, c: usize, rng: &mut Rng| {
            Tensor::from_vec(
                &[r, c],
                (0..r * c).map(|_| rng.normal(0.0, INIT_STD)).collect(),
            )
        };
        let blocks = (0..cfg.layers)
            .map(|_| LayerWeights {
                wq: mat(d, d, &mut rng),
                wk: mat(d, d, &mut rng),
                wv: mat(d, d, &mut rng),
                wo: mat(d, d, &mut rng),
                mlp1: mat(d, cfg.mlp_dim(), &mut rng),
                mlp2: mat(cfg.mlp_dim(), d, &mut rng),
                ln1_gamma: Tensor::from_vec(&[d], vec![1.0; d]),
                ln1_beta: Tensor::zeros(&[d]),
                ln2_gamma: Tensor::from_vec(&[d], vec![1.0; d]),
                ln2_beta: Tensor::zeros(&[d]),
            })
            .collect();
        let mut life_w = mat(d, d, &mut rng);
        for i in 0..d {
            life_w.data_mut()[i * d + i] += 1.0;
        }
        ModelWeights {
            patch_embed: mat(cfg.patch_dim(), d, &mut rng),
            pos_embed: mat(cfg.tokens(), d, &mut rng),
            cls_token: Tensor::from_vec(&[d], (0..d).map(|_| rng.normal(0.0, INIT_STD)).collect()),
            blocks,
            final_ln_gamma: Tensor::from_vec(&[d], vec![1.0; d]),
            final_ln_beta: Tensor::zeros(&[d]),
            head: mat(d, cfg.num_classes, &mut rng),
            life_w,
            life_ln_gamma: Tensor::from_vec(&[d], vec![1.0; d]),
            life_ln_beta: Tensor::zeros(&[d]),
        }
    }
}

impl<S: Scalar> ModelWeights<S> {
    pub fn cast<T: Scalar>(&self) -> ModelWeights<T> {
        ModelWeights {
            patch_embed: self.patch_embed.cast(),
            pos_embed: self.pos_embed.cast(),
            cls_token: self.cls_token.cast(),
            blocks: self
                .blocks
                .iter()
                .map(|b| LayerWeights {
                    wq: b.wq.cast(),
                    wk: b.wk.cast(),
                    wv: b.wv.cast(),
                    wo: b.wo.cast(),
                    mlp1: b.mlp1.cast(),
                    mlp2: b.mlp2.cast(),
                    ln1_gamma: b.ln1_gamma.cast(),
                    ln1_beta: b.ln1_beta.cast(),
                    ln2_gamma: b.ln2_gamma.cast(),
                    ln2_beta: b.ln2_beta.cast(),
                })
                .collect(),
            final_ln_gamma: self.final_ln_gamma.cast(),
            final_ln_beta: self.final_ln_beta.cast(),
            head: self.head.cast(),
            life_w: self.life_w.cast(),
            life_ln_gamma: self.life_ln_gamma.cast(),
            life_ln_beta: self.life_ln_beta.cast(),
        }
    }

    /// Visit every parameter tensor with a stable name, in a fixed order.
    pub fn visit_params(&self, f: &mut dyn FnMut(&str, &Tensor<S>)) {
        f("patch_embed", &self.patch_embed);
        f("pos_embed", &self.pos_embed);
        f("cls_token", &self.cls_token);
        for (i, b) in self.blocks.iter().enumerate() {
            f(&format!("block{i}.wq"), &b.wq);
            f(&format!("block{i}.wk"), &b.wk);
            f(&format!("block{i}.wv"), &b.wv);
            f(&format!("block{i}.wo"), &b.wo);
            f(&format!("block{i}.mlp1"), &b.mlp1);
            f(&format!("block{i}.mlp2"), &b.mlp2);
            f(&format!("block{i}.ln1_gamma"), &b.ln1_gamma);
            f(&format!("block{i}.ln1_beta"), &b.ln1_beta);
            f(&format!("block{i}.ln2_gamma"), &b.ln2_gamma);
            f(&format!("block{i}.ln2_beta"), &b.ln2_beta);
        }
        f("final_ln_gamma", &self.final_ln_gamma);
        f("final_ln_beta", &self.final_ln_beta);
        f("head", &self.head);
        f("life_w", &self.life_w);
        f("life_ln_gamma", &self.life_ln_gamma);
        f("life_ln_beta", &self.life_ln_beta);
    }

    pub fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor<S>)) {
        f("patch_embed", &mut self.patch_embed);
        f("pos_embed", &mut self.pos_embed);
        f("cls_token", &mut self.cls_token);
        for (i, b) in self.blocks.iter_mut().enumerate() {
            f(&format!("block{i}.wq"), &mut b.wq);
            f(&format!("block{i}.wk"), &mut b.wk);
            f(&format!("block{i}.wv"), &mut b.wv);
            f(&format!("block{i}.wo"), &mut b.wo);
            f(&format!("block{i}.mlp1"), &mut b.mlp1);
            f(&format!("block{i}.mlp2"), &mut b.mlp2);
            f(&format!("block{i}.ln1_gamma"), &mut b.ln1_gamma);
            f(&format!("block{i}.ln1_beta"), &mut b.ln1_beta);
            f(&format!("block{i}.ln2_gamma"), &mut b.ln2_gamma);
            f(&format!("block{i}.ln2_beta"), &mut b.ln2_beta);
        }
        f("final_ln_gamma", &mut self.final_ln_gamma);
        f("final_ln_beta", &mut self.final_ln_beta);
        f("head", &mut self.head);
        f("life_w", &mut self.life_w);
        f("life_ln_gamma", &mut self.life_ln_gamma);
        f("life_ln_beta", &mut self.life_ln_beta);
    }
}

/// Parameters owned by the life predictor (trained in stage one, frozen
/// in stage two).
pub fn is_predictor_param(name: &str) -> bool {
    matches!(name, "life_w" | "life_ln_gamma" | "life_ln_beta")
}

/// Rearrange a square channel-last image into flattened patches in
/// row-major patch order (top-left to bottom-right).
pub fn patchify<S: Scalar>(image: &Tensor<S>, patch_size: usize) -> Result<Tensor<S>> {
    let shape = image.shape();
    if shape.len() != 3 || shape[0] != shape[1] {
        return Err(Error::Dimension(format!(
            "patchify expects a square [side, side, channels] image, got {shape:?}"
        )));
    }
    let (side, channels) = (shape[0], shape[2]);
    if patch_size == 0 || side % patch_size != 0 {
        return Err(Error::Dimension(format!(
            "image side {side} is not divisible by patch size {patch_size}"
        )));
    }
    let grid = side / patch_size;
    let patch_dim = patch_size * patch_size * channels;
    let mut out = Tensor::zeros(&[grid * grid, patch_dim]);
    let src = image.data();
    for gy in 0..grid {
        for gx in 0..grid {
            let row = out.row_mut(gy * grid + gx);
            let mut w = 0;
            for py in 0..patch_size {
                let y = gy * patch_size + py;
                let x0 = gx * patch_size;
                let start = (y * side + x0) * channels;
                let len = patch_size * channels;
                row[w..w + len].copy_from_slice(&src[start..start + len]);
                w += len;
            }
        }
    }
    Ok(out)
}

/// Inverse of [`patchify`]; used by round-trip tests.
pub fn unpatchify<S: Scalar>(
    patches: &Tensor<S>,
    side: usize,
    patch_size: usize,
    channels: usize,
) -> Tensor<S> {
    let grid = side / patch_size;
    let mut out = Tensor::zeros(&[side, side, channels]);
    for gy in 0..grid {
        for gx in 0..grid {
            let row = patches.row(gy * grid + gx);
            let mut r = 0;
            for py in 0..patch_size {
                let y = gy * patch_size + py;
                let start = (y * side + gx * patch_size) * channels;
                let len = patch_size * channels;
                out.data_mut()[start..start + len].copy_from_slice(&row[r..r + len]);
                r += len;
            }
        }
    }
    out
}

/// Embed an image into the (N+1) x d token matrix: class token first,
/// then projected patches, plus the positional embedding.
pub fn embed_tokens<S: Scalar>(
    image: &Tensor<S>,
    weights: &ModelWeights<S>,
    cfg: &ViTConfig,
) -> Result<Tensor<S>> {
    let patches = patchify(image, cfg.patch_size)?;
    if patches.cols() != cfg.patch_dim() {
        return Err(Error::Dimension(format!(
            "patch dim {} does not match config {}",
            patches.cols(),
            cfg.patch_dim()
        )));
    }
    let projected = matmul(&patches, &weights.patch_embed)?;
    let d = cfg.embed_dim;
    let mut tokens = Tensor::zeros(&[cfg.tokens(), d]);
    tokens.row_mut(0).copy_from_slice(weights.cls_token.data());
    for i in 0..cfg.num_patches() {
        tokens.row_mut(i + 1).copy_from_slice(projected.row(i));
    }
    for (t, p) in tokens.data_mut().iter_mut().zip(weights.pos_embed.data()) {
        *t = *t + *p;
    }
    Ok(tokens)
}

/// Stable softmax of one attention row with per-key retention weights.
pub fn weighted_softmax_slice<S: Scalar>(row: &mut [S], beta: &[S]) {
    let mut max = row[0];
    for &v in row.iter() {
        max = max.maximum(v);
    }
    let floor = S::from_f64(ATTENTION_DENOM_FLOOR);
    let mut sum = S::ZERO;
    for (v, &b) in row.iter_mut().zip(beta) {
        *v = b * (*v - max).exp();
        sum = sum + *v;
    }
    sum = sum.maximum(floor);
    for v in row.iter_mut() {
        *v = *v / sum;
    }
}

fn copy_cols<S: Scalar>(x: &Tensor<S>, start: usize, width: usize) -> Tensor<S> {
    let (m, d) = (x.rows(), x.cols());
    let mut out = Tensor::zeros(&[m, width]);
    for i in 0..m {
        out.row_mut(i)
            .copy_from_slice(&x.data()[i * d + start..i * d + start + width]);
    }
    out
}

/// Multi-head self-attention over an m x d token matrix with 1/sqrt(d/H)
/// scaled scores. With `beta` supplied, attention columns are weighted
/// and renormalized; `beta[0]` is the class token and must be one.
pub fn mhsa_forward<S: Scalar>(
    x: &Tensor<S>,
    lw: &LayerWeights<S>,
    heads: usize,
    beta: Option<&[S]>,
) -> Result<Tensor<S>> {
    let m = x.rows();
    let d = x.cols();
    if d % heads != 0 {
        return Err(Error::Dimension(format!("width {d} not divisible by {heads} heads")));
    }
    if let Some(b) = beta {
        if b.len() != m {
            return Err(Error::Dimension(format!(
                "retention weights length {} does not match {} tokens",
                b.len(),
                m
            )));
        }
    }
    let dh = d / heads;
    let scale = S::from_f64(1.0 / (dh as f64).sqrt());
    let q = matmul(x, &lw.wq)?;
    let k = matmul(x, &lw.wk)?;
    let v = matmul(x, &lw.wv)?;
    let mut ctx = Tensor::zeros(&[m, d]);
    let mut scores = vec![S::ZERO; m * m];
    let mut head_out = vec![S::ZERO; m * dh];
    for h in 0..heads {
        let qh = copy_cols(&q, h * dh, dh);
        let kh = copy_cols(&k, h * dh, dh);
        let vh = copy_cols(&v, h * dh, dh);
        S::gemm(
            false,
            true,
            m,
            dh,
            m,
            scale,
            qh.data(),
            kh.data(),
            S::ZERO,
            &mut scores,
        );
        for row in scores.chunks_mut(m) {
            match beta {
                Some(b) => weighted_softmax_slice(row, b),
                None => softmax_slice(row),
            }
        }
        S::gemm(
            false,
            false,
            m,
            m,
            dh,
            S::ONE,
            &scores,
            vh.data(),
            S::ZERO,
            &mut head_out,
        );
        for i in 0..m {
            ctx.data_mut()[i * d + h * dh..i * d + (h + 1) * dh]
                .copy_from_slice(&head_out[i * dh..(i + 1) * dh]);
        }
    }
    matmul(&ctx, &lw.wo)
}

/// One pre-norm transformer block: x + MHSA(LN(x)), then + MLP(LN(.)).
pub fn block_forward<S: Scalar>(
    x: &Tensor<S>,
    lw: &LayerWeights<S>,
    heads: usize,
    beta: Option<&[S]>,
) -> Result<Tensor<S>> {
    let normed = layer_norm(x, &lw.ln1_gamma, &lw.ln1_beta, LAYER_NORM_EPS);
    let attn = mhsa_forward(&normed, lw, heads, beta)?;
    let mut h = x.clone();
    for (o, a) in h.data_mut().iter_mut().zip(attn.data()) {
        *o = *o + *a;
    }
    let normed2 = layer_norm(&h, &lw.ln2_gamma, &lw.ln2_beta, LAYER_NORM_EPS);
    let hidden = gelu(&matmul(&normed2, &lw.mlp1)?);
    let mlp = matmul(&hidden, &lw.mlp2)?;
    let mut out = h;
    for (o, v) in out.data_mut().iter_mut().zip(mlp.data()) {
        *o = *o + *v;
    }
    Ok(out)
}

/// Class logits from the final token matrix: layer norm, class row, head.
pub fn classify<S: Scalar>(x_final: &Tensor<S>, weights: &ModelWeights<S>) -> Result<Vec<S>> {
    let normed = layer_norm(
        x_final,
        &weights.final_ln_gamma,
        &weights.final_ln_beta,
        LAYER_NORM_EPS,
    );
    let cls = Tensor::from_vec(&[1, normed.cols()], normed.row(0).to_vec());
    Ok(matmul(&cls, &weights.head)?.into_data())
}

/// Dense forward pass over all layers with an optional per-layer
/// retention weight vector (`beta_for(t)` for 1-based t). Returns the
/// final token matrix.
pub fn forward_tokens<S: Scalar>(
    tokens: Tensor<S>,
    weights: &ModelWeights<S>,
    cfg: &ViTConfig,
    mut beta_for: impl FnMut(usize) -> Option<Vec<S>>,
) -> Result<Tensor<S>> {
    let mut x = tokens;
    for t in 1..=cfg.layers {
        let beta = beta_for(t);
        x = block_forward(&x, &weights.blocks[t - 1], cfg.heads, beta.as_deref())?;
    }
    Ok(x)
}

/// Dense image-to-logits forward without any slimming.
pub fn forward_dense<S: Scalar>(
    image: &Tensor<S>,
    weights: &ModelWeights<S>,
    cfg: &ViTConfig,
) -> Result<Vec<S>> {
    let tokens = embed_tokens(image, weights, cfg)?;
    let x = forward_tokens(tokens, weights, cfg, |_| None)?;
    classify(&x, weights)
}
