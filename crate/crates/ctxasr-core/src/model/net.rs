//! Transformer forward, backward, and incremental decoding.
//!
//! The forward passes record the activations the hand-written backward
//! walk needs; greedy decoding uses a per-layer key/value cache so each new
//! token costs one position, not a full re-run.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::math::{self, LnCache, Mat};
use super::{FeatureSequence, Gradients, ModelError, Parameters};
use crate::tokenizer::DecoderSequence;

pub(crate) fn check_inputs(
    params: &Parameters,
    features: &FeatureSequence,
    input_ids: &[usize],
) -> Result<(), ModelError> {
    let c = &params.config;
    if features.n_mels != c.n_mels {
        return Err(ModelError::InvalidConfig(format!(
            "feature dim {} does not match model n_mels {}",
            features.n_mels, c.n_mels
        )));
    }
    if features.n_frames > c.max_frames {
        return Err(ModelError::TooManyFrames {
            got: features.n_frames,
            max: c.max_frames,
        });
    }
    check_token_ids(params, input_ids)
}

pub(crate) fn check_token_ids(params: &Parameters, input_ids: &[usize]) -> Result<(), ModelError> {
    let c = &params.config;
    if input_ids.len() > c.max_text {
        return Err(ModelError::SequenceTooLong {
            got: input_ids.len(),
            max: c.max_text,
        });
    }
    if let Some(&bad) = input_ids.iter().find(|&&id| id >= c.vocab_size) {
        return Err(ModelError::InvalidToken(bad));
    }
    Ok(())
}

fn add_positions(x: &mut Mat) {
    let d = x.cols;
    let mut pe = vec![0.0; d];
    for i in 0..x.rows {
        math::position_row(i, d, &mut pe);
        for (v, p) in x.row_mut(i).iter_mut().zip(&pe) {
            *v += p;
        }
    }
}

fn extract_head(m: &Mat, head: usize, dh: usize) -> Mat {
    let mut out = Mat::zeros(m.rows, dh);
    for i in 0..m.rows {
        out.row_mut(i)
            .copy_from_slice(&m.row(i)[head * dh..(head + 1) * dh]);
    }
    out
}

fn write_head(dst: &mut Mat, src: &Mat, head: usize, dh: usize) {
    for i in 0..src.rows {
        dst.row_mut(i)[head * dh..(head + 1) * dh].copy_from_slice(src.row(i));
    }
}

fn add_head(dst: &mut Mat, src: &Mat, head: usize, dh: usize) {
    for i in 0..src.rows {
        for (d, s) in dst.row_mut(i)[head * dh..(head + 1) * dh].iter_mut().zip(src.row(i)) {
            *d += s;
        }
    }
}

struct AttnCache {
    q_heads: Vec<Mat>,
    k_heads: Vec<Mat>,
    v_heads: Vec<Mat>,
    attn: Vec<Mat>,
    concat: Mat,
}

/// Multi-head attention. `x_q` and `x_kv` are already layer-normed (or are
/// encoder output for cross-attention). `prefix` names the four
/// projections `{prefix}.wq` .. `{prefix}.bo`.
fn attention(
    params: &Parameters,
    prefix: &str,
    x_q: &Mat,
    x_kv: &Mat,
    causal: bool,
) -> (Mat, AttnCache) {
    let c = &params.config;
    let d = c.d_model;
    let dh = d / c.n_heads;
    let scale = 1.0 / libm::sqrt(dh as f64);
    let p = |suffix: &str| &params.set.get(&format!("{prefix}.{suffix}")).data;

    let q = math::linear(x_q, p("wq"), p("bq"), d);
    let k = math::linear(x_kv, p("wk"), p("bk"), d);
    let v = math::linear(x_kv, p("wv"), p("bv"), d);

    let mut concat = Mat::zeros(x_q.rows, d);
    let mut q_heads = Vec::with_capacity(c.n_heads);
    let mut k_heads = Vec::with_capacity(c.n_heads);
    let mut v_heads = Vec::with_capacity(c.n_heads);
    let mut attn = Vec::with_capacity(c.n_heads);
    for h in 0..c.n_heads {
        let qh = extract_head(&q, h, dh);
        let kh = extract_head(&k, h, dh);
        let vh = extract_head(&v, h, dh);
        let mut scores = math::matmul_nt(&qh, &kh);
        for val in scores.data.iter_mut() {
            *val *= scale;
        }
        if causal {
            for i in 0..scores.rows {
                for j in (i + 1)..scores.cols {
                    scores.row_mut(i)[j] = f64::NEG_INFINITY;
                }
            }
        }
        math::softmax_rows(&mut scores);
        let ctx = math::matmul(&scores, &vh);
        write_head(&mut concat, &ctx, h, dh);
        q_heads.push(qh);
        k_heads.push(kh);
        v_heads.push(vh);
        attn.push(scores);
    }
    let out = math::linear(&concat, p("wo"), p("bo"), d);
    (
        out,
        AttnCache {
            q_heads,
            k_heads,
            v_heads,
            attn,
            concat,
        },
    )
}

fn acc_tensor(grads: &mut Gradients, name: &str, delta: &[f64]) {
    let g = grads.get_mut(name);
    debug_assert_eq!(g.data.len(), delta.len(), "{name}");
    for (a, b) in g.data.iter_mut().zip(delta) {
        *a += b;
    }
}

fn linear_bwd(
    params: &Parameters,
    grads: &mut Gradients,
    wname: &str,
    bname: &str,
    dy: &Mat,
    x: &Mat,
) -> Mat {
    let w = &params.set.get(wname).data;
    let mut dw = vec![0.0; w.len()];
    let mut db = vec![0.0; dy.cols];
    let dx = math::linear_backward(dy, x, w, &mut dw, &mut db);
    acc_tensor(grads, wname, &dw);
    acc_tensor(grads, bname, &db);
    dx
}

fn ln_bwd(
    params: &Parameters,
    grads: &mut Gradients,
    gname: &str,
    bname: &str,
    dy: &Mat,
    cache: &LnCache,
) -> Mat {
    let g = &params.set.get(gname).data;
    let mut dg = vec![0.0; g.len()];
    let mut db = vec![0.0; g.len()];
    let dx = math::layernorm_backward(dy, cache, g, &mut dg, &mut db);
    acc_tensor(grads, gname, &dg);
    acc_tensor(grads, bname, &db);
    dx
}

/// Returns `(d_xq, d_xkv)`.
fn attention_backward(
    params: &Parameters,
    grads: &mut Gradients,
    prefix: &str,
    cache: &AttnCache,
    x_q: &Mat,
    x_kv: &Mat,
    dout: &Mat,
) -> (Mat, Mat) {
    let c = &params.config;
    let d = c.d_model;
    let dh = d / c.n_heads;
    let scale = 1.0 / libm::sqrt(dh as f64);

    let d_concat = linear_bwd(
        params,
        grads,
        &format!("{prefix}.wo"),
        &format!("{prefix}.bo"),
        dout,
        &cache.concat,
    );

    let mut dq = Mat::zeros(x_q.rows, d);
    let mut dk = Mat::zeros(x_kv.rows, d);
    let mut dv = Mat::zeros(x_kv.rows, d);
    for h in 0..c.n_heads {
        let dctx = extract_head(&d_concat, h, dh);
        let a = &cache.attn[h];
        let da = math::matmul_nt(&dctx, &cache.v_heads[h]);
        let dvh = math::matmul_tn(a, &dctx);
        let mut ds = math::softmax_backward(&da, a);
        for v in ds.data.iter_mut() {
            *v *= scale;
        }
        let dqh = math::matmul(&ds, &cache.k_heads[h]);
        let dkh = math::matmul_tn(&ds, &cache.q_heads[h]);
        add_head(&mut dq, &dqh, h, dh);
        add_head(&mut dk, &dkh, h, dh);
        add_head(&mut dv, &dvh, h, dh);
    }

    let d_xq = linear_bwd(
        params,
        grads,
        &format!("{prefix}.wq"),
        &format!("{prefix}.bq"),
        &dq,
        x_q,
    );
    let mut d_xkv = linear_bwd(
        params,
        grads,
        &format!("{prefix}.wk"),
        &format!("{prefix}.bk"),
        &dk,
        x_kv,
    );
    let dv_x = linear_bwd(
        params,
        grads,
        &format!("{prefix}.wv"),
        &format!("{prefix}.bv"),
        &dv,
        x_kv,
    );
    d_xkv.add_assign(&dv_x);
    (d_xq, d_xkv)
}

struct AttnBlockCache {
    ln: LnCache,
    ln_out: Mat,
    attn: AttnCache,
}

struct FfnBlockCache {
    ln: LnCache,
    ln_out: Mat,
    pre: Mat,
    act: Mat,
}

fn attn_block(
    params: &Parameters,
    prefix: &str,
    h: &mut Mat,
    x_kv: Option<&Mat>,
    causal: bool,
) -> AttnBlockCache {
    let g = &params.set.get(&format!("{prefix}.ln.g")).data;
    let b = &params.set.get(&format!("{prefix}.ln.b")).data;
    let (ln_out, ln) = math::layernorm(h, g, b);
    let kv = x_kv.unwrap_or(&ln_out);
    let (out, attn) = attention(params, prefix, &ln_out, kv, causal);
    h.add_assign(&out);
    AttnBlockCache { ln, ln_out, attn }
}

fn ffn_block(params: &Parameters, prefix: &str, h: &mut Mat) -> FfnBlockCache {
    let g = &params.set.get(&format!("{prefix}.ln.g")).data;
    let b = &params.set.get(&format!("{prefix}.ln.b")).data;
    let (ln_out, ln) = math::layernorm(h, g, b);
    let pre = math::linear(
        &ln_out,
        &params.set.get(&format!("{prefix}.w1")).data,
        &params.set.get(&format!("{prefix}.b1")).data,
        params.config.ffn_dim,
    );
    let mut act = pre.clone();
    for v in act.data.iter_mut() {
        *v = math::gelu(*v);
    }
    let out = math::linear(
        &act,
        &params.set.get(&format!("{prefix}.w2")).data,
        &params.set.get(&format!("{prefix}.b2")).data,
        params.config.d_model,
    );
    h.add_assign(&out);
    FfnBlockCache { ln, ln_out, pre, act }
}

/// Backward through one ffn block; `dh` is the gradient at the block's
/// output and is updated in place to the gradient at its input.
fn ffn_block_backward(
    params: &Parameters,
    grads: &mut Gradients,
    prefix: &str,
    cache: &FfnBlockCache,
    dh: &mut Mat,
) {
    let dact = linear_bwd(
        params,
        grads,
        &format!("{prefix}.w2"),
        &format!("{prefix}.b2"),
        dh,
        &cache.act,
    );
    let mut dpre = dact;
    for (dv, pre) in dpre.data.iter_mut().zip(&cache.pre.data) {
        *dv *= math::gelu_grad(*pre);
    }
    let dln_out = linear_bwd(
        params,
        grads,
        &format!("{prefix}.w1"),
        &format!("{prefix}.b1"),
        &dpre,
        &cache.ln_out,
    );
    let dx = ln_bwd(
        params,
        grads,
        &format!("{prefix}.ln.g"),
        &format!("{prefix}.ln.b"),
        &dln_out,
        &cache.ln,
    );
    dh.add_assign(&dx);
}

/// Backward through an attention block. Returns the gradient flowing into
/// the external key/value source (encoder output) for cross-attention.
fn attn_block_backward(
    params: &Parameters,
    grads: &mut Gradients,
    prefix: &str,
    cache: &AttnBlockCache,
    x_kv: Option<&Mat>,
    dh: &mut Mat,
) -> Option<Mat> {
    let kv = x_kv.unwrap_or(&cache.ln_out);
    let (d_xq, d_xkv) = attention_backward(params, grads, prefix, &cache.attn, &cache.ln_out, kv, dh);
    let mut d_ln_out = d_xq;
    let external = if x_kv.is_some() {
        Some(d_xkv)
    } else {
        d_ln_out.add_assign(&d_xkv);
        None
    };
    let dx = ln_bwd(
        params,
        grads,
        &format!("{prefix}.ln.g"),
        &format!("{prefix}.ln.b"),
        &d_ln_out,
        &cache.ln,
    );
    dh.add_assign(&dx);
    external
}

pub(crate) struct Encoded {
    pub output: Mat,
    cache: EncCache,
}

struct EncCache {
    frames: Mat,
    layers: Vec<(AttnBlockCache, FfnBlockCache)>,
    ln_f: LnCache,
}

pub(crate) fn encode(params: &Parameters, features: &FeatureSequence) -> Encoded {
    let frames = features.as_mat();
    let mut h = math::linear(
        &frames,
        &params.set.get("enc.in_proj.w").data,
        &params.set.get("enc.in_proj.b").data,
        params.config.d_model,
    );
    let scale = embed_scale(params.config.d_model);
    for v in h.data.iter_mut() {
        *v *= scale;
    }
    add_positions(&mut h);
    let mut layers = Vec::with_capacity(params.config.enc_layers);
    for l in 0..params.config.enc_layers {
        let a = attn_block(params, &format!("enc.l{l}.attn"), &mut h, None, false);
        let f = ffn_block(params, &format!("enc.l{l}.ffn"), &mut h);
        layers.push((a, f));
    }
    let (output, ln_f) = math::layernorm(
        &h,
        &params.set.get("enc.ln_f.g").data,
        &params.set.get("enc.ln_f.b").data,
    );
    Encoded {
        output,
        cache: EncCache { frames, layers, ln_f },
    }
}

fn encode_backward(params: &Parameters, grads: &mut Gradients, enc: &Encoded, d_out: &Mat) {
    let mut dh = ln_bwd(params, grads, "enc.ln_f.g", "enc.ln_f.b", d_out, &enc.cache.ln_f);
    for l in (0..params.config.enc_layers).rev() {
        let (a, f) = &enc.cache.layers[l];
        ffn_block_backward(params, grads, &format!("enc.l{l}.ffn"), f, &mut dh);
        attn_block_backward(params, grads, &format!("enc.l{l}.attn"), a, None, &mut dh);
    }
    // positions are additive constants; the frontend sees dh scaled only
    let scale = embed_scale(params.config.d_model);
    for v in dh.data.iter_mut() {
        *v *= scale;
    }
    linear_bwd(params, grads, "enc.in_proj.w", "enc.in_proj.b", &dh, &enc.cache.frames);
}

pub(crate) struct Decoded {
    pub logits: Mat,
    cache: DecCache,
}

struct DecCache {
    input_ids: Vec<usize>,
    layers: Vec<(AttnBlockCache, AttnBlockCache, FfnBlockCache)>,
    ln_f: LnCache,
    ln_f_out: Mat,
}

fn embed(params: &Parameters, input_ids: &[usize]) -> Mat {
    let d = params.config.d_model;
    let emb = &params.set.get("dec.embed").data;
    let scale = embed_scale(d);
    let mut x = Mat::zeros(input_ids.len(), d);
    for (i, &id) in input_ids.iter().enumerate() {
        for (dst, &src) in x.row_mut(i).iter_mut().zip(&emb[id * d..(id + 1) * d]) {
            *dst = src * scale;
        }
    }
    add_positions(&mut x);
    x
}

/// sqrt(d_model): keeps the learned signal comparable to the unit-amplitude
/// sinusoidal positions added on top of it.
fn embed_scale(d: usize) -> f64 {
    libm::sqrt(d as f64)
}

pub(crate) fn decode_full(params: &Parameters, enc_out: &Mat, input_ids: &[usize]) -> Decoded {
    let mut h = embed(params, input_ids);
    let mut layers = Vec::with_capacity(params.config.dec_layers);
    for l in 0..params.config.dec_layers {
        let s = attn_block(params, &format!("dec.l{l}.self"), &mut h, None, true);
        let c = attn_block(params, &format!("dec.l{l}.cross"), &mut h, Some(enc_out), false);
        let f = ffn_block(params, &format!("dec.l{l}.ffn"), &mut h);
        layers.push((s, c, f));
    }
    let (ln_f_out, ln_f) = math::layernorm(
        &h,
        &params.set.get("dec.ln_f.g").data,
        &params.set.get("dec.ln_f.b").data,
    );
    let logits = math::linear(
        &ln_f_out,
        &params.set.get("dec.out_proj.w").data,
        &params.set.get("dec.out_proj.b").data,
        params.config.vocab_size,
    );
    Decoded {
        logits,
        cache: DecCache {
            input_ids: input_ids.to_vec(),
            layers,
            ln_f,
            ln_f_out,
        },
    }
}

/// Backward through the decoder stack; returns the gradient at the encoder
/// output (summed over every cross-attention layer).
fn decode_backward(
    params: &Parameters,
    grads: &mut Gradients,
    enc_out: &Mat,
    dec: &Decoded,
    dlogits: &Mat,
) -> Mat {
    let d_ln_f_out = linear_bwd(
        params,
        grads,
        "dec.out_proj.w",
        "dec.out_proj.b",
        dlogits,
        &dec.cache.ln_f_out,
    );
    let mut dh = ln_bwd(params, grads, "dec.ln_f.g", "dec.ln_f.b", &d_ln_f_out, &dec.cache.ln_f);
    let mut d_enc = Mat::zeros(enc_out.rows, enc_out.cols);
    for l in (0..params.config.dec_layers).rev() {
        let (s, c, f) = &dec.cache.layers[l];
        ffn_block_backward(params, grads, &format!("dec.l{l}.ffn"), f, &mut dh);
        if let Some(de) = attn_block_backward(
            params,
            grads,
            &format!("dec.l{l}.cross"),
            c,
            Some(enc_out),
            &mut dh,
        ) {
            d_enc.add_assign(&de);
        }
        attn_block_backward(params, grads, &format!("dec.l{l}.self"), s, None, &mut dh);
    }
    // scatter into the embedding rows
    let d = params.config.d_model;
    let scale = embed_scale(d);
    let demb = &mut grads.get_mut("dec.embed").data;
    for (i, &id) in dec.cache.input_ids.iter().enumerate() {
        for (slot, g) in demb[id * d..(id + 1) * d].iter_mut().zip(dh.row(i)) {
            *slot += g * scale;
        }
    }
    d_enc
}

pub(crate) fn drop_last_row(m: Mat) -> Mat {
    let rows = m.rows - 1;
    let cols = m.cols;
    let mut data = m.data;
    data.truncate(rows * cols);
    Mat::from_vec(rows, cols, data)
}

/// Mean masked cross-entropy plus its gradient with respect to the logits.
pub(crate) fn masked_cross_entropy(
    logits: &Mat,
    seq: &DecoderSequence,
) -> Result<(f64, Mat), ModelError> {
    if logits.rows != seq.target_ids.len() {
        return Err(ModelError::InvalidConfig(format!(
            "logit rows {} do not match {} targets",
            logits.rows,
            seq.target_ids.len()
        )));
    }
    let m: usize = seq.loss_mask.iter().map(|&v| v as usize).sum();
    if m == 0 {
        return Err(ModelError::EmptyLossMask);
    }
    let mut total = 0.0;
    let mut dlogits = Mat::zeros(logits.rows, logits.cols);
    for j in 0..logits.rows {
        if seq.loss_mask[j] == 0 {
            continue;
        }
        let target = seq.target_ids[j];
        if target >= logits.cols {
            return Err(ModelError::InvalidToken(target));
        }
        let row = logits.row(j);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for &v in row {
            sum += libm::exp(v - max);
        }
        let lse = max + libm::log(sum);
        total += lse - row[target];
        let drow = dlogits.row_mut(j);
        for (k, &v) in row.iter().enumerate() {
            drow[k] = libm::exp(v - lse) / m as f64;
        }
        drow[target] -= 1.0 / m as f64;
    }
    Ok((total / m as f64, dlogits))
}

pub(crate) fn backward(
    params: &Parameters,
    features: &FeatureSequence,
    seq: &DecoderSequence,
) -> Result<(f64, Gradients), ModelError> {
    check_inputs(params, features, &seq.input_ids)?;
    let enc = encode(params, features);
    let (loss, mut grads, d_enc) = decoder_backward_pass(params, &enc.output, seq)?;
    encode_backward(params, &mut grads, &enc, &d_enc);
    Ok((loss, grads))
}

/// Backward with a frozen encoder: the caller supplies the (reusable)
/// encoder output and no encoder gradients are computed — they stay zero,
/// which is exactly what the freeze contract requires.
pub(crate) fn backward_decoder_only(
    params: &Parameters,
    enc_out: &Mat,
    seq: &DecoderSequence,
) -> Result<(f64, Gradients), ModelError> {
    check_token_ids(params, &seq.input_ids)?;
    let (loss, grads, _) = decoder_backward_pass(params, enc_out, seq)?;
    Ok((loss, grads))
}

fn decoder_backward_pass(
    params: &Parameters,
    enc_out: &Mat,
    seq: &DecoderSequence,
) -> Result<(f64, Gradients, Mat), ModelError> {
    let dec = decode_full(params, enc_out, &seq.input_ids);
    let logits = drop_last_row(dec.logits.clone());
    let (loss, dlogits) = masked_cross_entropy(&logits, seq)?;
    // pad the gradient back to the full row count; the final row is unused
    let mut dfull = Mat::zeros(dec.logits.rows, dec.logits.cols);
    dfull.data[..dlogits.data.len()].copy_from_slice(&dlogits.data);
    let mut grads = params.zeros_like();
    let d_enc = decode_backward(params, &mut grads, enc_out, &dec, &dfull);
    Ok((loss, grads, d_enc))
}

// ---------------------------------------------------------------------------
// incremental decoding

struct LayerKv {
    self_k: Mat,
    self_v: Mat,
    cross_k: Mat,
    cross_v: Mat,
}

struct DecState<'a> {
    params: &'a Parameters,
    layers: Vec<LayerKv>,
    pos: usize,
}

impl<'a> DecState<'a> {
    fn new(params: &'a Parameters, enc_out: &Mat) -> Self {
        let d = params.config.d_model;
        let mut layers = Vec::with_capacity(params.config.dec_layers);
        for l in 0..params.config.dec_layers {
            let p = |s: &str| &params.set.get(&format!("dec.l{l}.cross.{s}")).data;
            layers.push(LayerKv {
                self_k: Mat::zeros(0, d),
                self_v: Mat::zeros(0, d),
                cross_k: math::linear(enc_out, p("wk"), p("bk"), d),
                cross_v: math::linear(enc_out, p("wv"), p("bv"), d),
            });
        }
        DecState {
            params,
            layers,
            pos: 0,
        }
    }

    /// Feed one token; returns the next-token logits.
    fn step(&mut self, token: usize) -> Vec<f64> {
        let c = &self.params.config;
        let d = c.d_model;
        let dh = d / c.n_heads;
        let scale = 1.0 / libm::sqrt(dh as f64);
        let emb = &self.params.set.get("dec.embed").data;
        let emb_scale = embed_scale(d);
        let mut x = Mat::zeros(1, d);
        for (dst, &src) in x.row_mut(0).iter_mut().zip(&emb[token * d..(token + 1) * d]) {
            *dst = src * emb_scale;
        }
        let mut pe = vec![0.0; d];
        math::position_row(self.pos, d, &mut pe);
        for (v, p) in x.row_mut(0).iter_mut().zip(&pe) {
            *v += p;
        }
        self.pos += 1;

        for l in 0..c.dec_layers {
            // causal self-attention over the cached prefix plus this token
            {
                let prefix = format!("dec.l{l}.self");
                let p = |s: &str| &self.params.set.get(&format!("{prefix}.{s}")).data;
                let g = p("ln.g");
                let b = p("ln.b");
                let (ln_out, _) = math::layernorm(&x, g, b);
                let q = math::linear(&ln_out, p("wq"), p("bq"), d);
                let k_new = math::linear(&ln_out, p("wk"), p("bk"), d);
                let v_new = math::linear(&ln_out, p("wv"), p("bv"), d);
                let kv = &mut self.layers[l];
                kv.self_k.rows += 1;
                kv.self_k.data.extend_from_slice(k_new.row(0));
                kv.self_v.rows += 1;
                kv.self_v.data.extend_from_slice(v_new.row(0));
                let ctx = attend_single(&q, &kv.self_k, &kv.self_v, c.n_heads, scale);
                let out = math::linear(&ctx, p("wo"), p("bo"), d);
                x.add_assign(&out);
            }
            // cross-attention against the fixed encoder keys/values
            {
                let prefix = format!("dec.l{l}.cross");
                let p = |s: &str| &self.params.set.get(&format!("{prefix}.{s}")).data;
                let (ln_out, _) = math::layernorm(&x, p("ln.g"), p("ln.b"));
                let q = math::linear(&ln_out, p("wq"), p("bq"), d);
                let kv = &self.layers[l];
                let ctx = attend_single(&q, &kv.cross_k, &kv.cross_v, c.n_heads, scale);
                let out = math::linear(&ctx, p("wo"), p("bo"), d);
                x.add_assign(&out);
            }
            {
                let prefix = format!("dec.l{l}.ffn");
                let p = |s: &str| &self.params.set.get(&format!("{prefix}.{s}")).data;
                let (ln_out, _) = math::layernorm(&x, p("ln.g"), p("ln.b"));
                let mut pre = math::linear(&ln_out, p("w1"), p("b1"), c.ffn_dim);
                for v in pre.data.iter_mut() {
                    *v = math::gelu(*v);
                }
                let out = math::linear(&pre, p("w2"), p("b2"), d);
                x.add_assign(&out);
            }
        }
        let (ln_out, _) = math::layernorm(
            &x,
            &self.params.set.get("dec.ln_f.g").data,
            &self.params.set.get("dec.ln_f.b").data,
        );
        let logits = math::linear(
            &ln_out,
            &self.params.set.get("dec.out_proj.w").data,
            &self.params.set.get("dec.out_proj.b").data,
            c.vocab_size,
        );
        logits.data
    }
}

/// Attention for a single query row against cached keys/values.
fn attend_single(q: &Mat, k: &Mat, v: &Mat, n_heads: usize, scale: f64) -> Mat {
    let d = q.cols;
    let dh = d / n_heads;
    let mut out = Mat::zeros(1, d);
    for h in 0..n_heads {
        let qh = &q.row(0)[h * dh..(h + 1) * dh];
        let mut weights = Vec::with_capacity(k.rows);
        let mut max = f64::NEG_INFINITY;
        for t in 0..k.rows {
            let kh = &k.row(t)[h * dh..(h + 1) * dh];
            let s: f64 = qh.iter().zip(kh).map(|(a, b)| a * b).sum::<f64>() * scale;
            max = max.max(s);
            weights.push(s);
        }
        let mut sum = 0.0;
        for w in weights.iter_mut() {
            *w = libm::exp(*w - max);
            sum += *w;
        }
        let orow = &mut out.row_mut(0)[h * dh..(h + 1) * dh];
        for (t, w) in weights.iter().enumerate() {
            let a = w / sum;
            let vh = &v.row(t)[h * dh..(h + 1) * dh];
            for (o, vv) in orow.iter_mut().zip(vh) {
                *o += a * vv;
            }
        }
    }
    out
}

/// Deterministic argmax; ties resolve to the lowest id.
fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    let mut best_v = f64::NEG_INFINITY;
    for (i, &v) in row.iter().enumerate() {
        if v > best_v {
            best_v = v;
            best = i;
        }
    }
    best
}

pub(crate) fn greedy_decode(
    params: &Parameters,
    features: &FeatureSequence,
    description_ids: &[usize],
    max_len: usize,
) -> Result<Vec<usize>, ModelError> {
    if max_len == 0 {
        return Ok(Vec::new());
    }
    let c = &params.config;
    let mut prompt = Vec::with_capacity(description_ids.len() + 2);
    if !description_ids.is_empty() {
        prompt.push(c.sop_id());
        prompt.extend_from_slice(description_ids);
    }
    prompt.push(c.sot_id());
    check_inputs(params, features, &prompt)?;
    if prompt.len() >= c.max_text {
        return Err(ModelError::SequenceTooLong {
            got: prompt.len(),
            max: c.max_text,
        });
    }

    let enc = encode(params, features);
    let mut state = DecState::new(params, &enc.output);
    let mut logits = Vec::new();
    for &tok in &prompt {
        logits = state.step(tok);
    }
    let mut emitted = Vec::new();
    let mut total_len = prompt.len();
    while emitted.len() < max_len && total_len < c.max_text {
        let next = argmax(&logits);
        if next == c.eot_id() {
            break;
        }
        emitted.push(next);
        total_len += 1;
        if emitted.len() == max_len || total_len == c.max_text {
            break;
        }
        logits = state.step(next);
    }
    Ok(emitted
        .into_iter()
        .filter(|&id| !c.is_special(id))
        .collect())
}
