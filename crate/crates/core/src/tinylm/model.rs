//! Forward pass, analytic backward pass, sequence log-probabilities and
//! decoding for the toy transformer.
//!
//! The block layout is pre-norm: `x + attn(ln1(x))` then `x + mlp(ln2(x))`,
//! a final norm, and an untied unembedding. All math is f64 and
//! single-threaded, so identical inputs give bit-identical outputs.

use super::params::{GradientSet, ModelParams, Tensor};
use super::vocab::{Role, TokenSequence, Vocab};
use super::ModelError;
use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

const LN_EPS: f64 = 1e-5;

/// How [`decode`] picks the next token.
#[derive(Debug, Clone, Copy)]
pub enum DecodeStrategy {
    /// Argmax, ties broken by lowest token id.
    Greedy,
    /// Softmax sampling at the given temperature with a seeded generator.
    Temperature { temperature: f64, seed: u64 },
}

struct NormCache {
    xhat: Array2<f64>,
    inv_std: Vec<f64>,
}

struct LayerCache {
    ln1: NormCache,
    n1: Array2<f64>,
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    attn: Vec<Array2<f64>>,
    ctx: Array2<f64>,
    ln2: NormCache,
    n2: Array2<f64>,
    u: Array2<f64>,
    h: Array2<f64>,
}

/// Recorded activations from one forward pass, consumed by the backward
/// pass to produce exact gradients.
pub struct ForwardTrace {
    ids: Vec<usize>,
    layers: Vec<LayerCache>,
    lnf: NormCache,
    xf: Array2<f64>,
    logits: Array2<f64>,
}

impl ForwardTrace {
    pub fn logits(&self) -> &Array2<f64> {
        &self.logits
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

fn validate_input(params: &ModelParams, ids: &[usize]) -> Result<(), ModelError> {
    if ids.len() > params.cfg.context_len {
        return Err(ModelError::SequenceTooLong { len: ids.len(), context: params.cfg.context_len });
    }
    let vocab = params.vocab_size();
    for &id in ids {
        if id >= vocab {
            return Err(ModelError::InvalidTokenId { id, vocab });
        }
    }
    Ok(())
}

fn layer_norm(x: &Array2<f64>, gain: &Array1<f64>, bias: &Array1<f64>) -> (Array2<f64>, NormCache) {
    let (t, d) = x.dim();
    let mut xhat = Array2::zeros((t, d));
    let mut out = Array2::zeros((t, d));
    let mut inv_std = Vec::with_capacity(t);
    for r in 0..t {
        let row = x.row(r);
        let mean = row.sum() / d as f64;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let is = 1.0 / (var + LN_EPS).sqrt();
        inv_std.push(is);
        for c in 0..d {
            let h = (x[[r, c]] - mean) * is;
            xhat[[r, c]] = h;
            out[[r, c]] = gain[c] * h + bias[c];
        }
    }
    (out, NormCache { xhat, inv_std })
}

/// Backward through layer norm; returns dx and accumulates dgain/dbias.
fn layer_norm_backward(
    dy: &Array2<f64>,
    cache: &NormCache,
    gain: &Array1<f64>,
    dgain: &mut [f64],
    dbias: &mut [f64],
) -> Array2<f64> {
    let (t, d) = dy.dim();
    let mut dx = Array2::zeros((t, d));
    for r in 0..t {
        let mut mean_dxhat = 0.0;
        let mut mean_dxhat_xhat = 0.0;
        for c in 0..d {
            let g = dy[[r, c]];
            let xh = cache.xhat[[r, c]];
            dgain[c] += g * xh;
            dbias[c] += g;
            let dxhat = g * gain[c];
            mean_dxhat += dxhat;
            mean_dxhat_xhat += dxhat * xh;
        }
        mean_dxhat /= d as f64;
        mean_dxhat_xhat /= d as f64;
        let is = cache.inv_std[r];
        for c in 0..d {
            let dxhat = dy[[r, c]] * gain[c];
            dx[[r, c]] = is * (dxhat - mean_dxhat - cache.xhat[[r, c]] * mean_dxhat_xhat);
        }
    }
    dx
}

const GELU_C: f64 = 0.7978845608028654; // sqrt(2/pi)
const GELU_A: f64 = 0.044715;

fn gelu(u: f64) -> f64 {
    0.5 * u * (1.0 + (GELU_C * (u + GELU_A * u * u * u)).tanh())
}

fn gelu_grad(u: f64) -> f64 {
    let inner = GELU_C * (u + GELU_A * u * u * u);
    let t = inner.tanh();
    0.5 * (1.0 + t) + 0.5 * u * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * u * u)
}

fn linear(x: &Array2<f64>, w: &Array2<f64>, b: &Array1<f64>) -> Array2<f64> {
    let mut y = x.dot(w);
    y += b;
    y
}

struct LayerView<'a> {
    ln1_g: &'a Array1<f64>,
    ln1_b: &'a Array1<f64>,
    wq: &'a Array2<f64>,
    bq: &'a Array1<f64>,
    wk: &'a Array2<f64>,
    bk: &'a Array1<f64>,
    wv: &'a Array2<f64>,
    bv: &'a Array1<f64>,
    wo: &'a Array2<f64>,
    bo: &'a Array1<f64>,
    ln2_g: &'a Array1<f64>,
    ln2_b: &'a Array1<f64>,
    w_in: &'a Array2<f64>,
    b_in: &'a Array1<f64>,
    w_out: &'a Array2<f64>,
    b_out: &'a Array1<f64>,
}

fn layer_view(params: &ModelParams, l: i32) -> LayerView<'_> {
    let v = |name: &str| params.tensor(l, name).expect("layer tensor").as_vector();
    let m = |name: &str| params.tensor(l, name).expect("layer tensor").as_matrix();
    LayerView {
        ln1_g: v("ln1.gain"),
        ln1_b: v("ln1.bias"),
        wq: m("attn.query.weight"),
        bq: v("attn.query.bias"),
        wk: m("attn.key.weight"),
        bk: v("attn.key.bias"),
        wv: m("attn.value.weight"),
        bv: v("attn.value.bias"),
        wo: m("attn.output.weight"),
        bo: v("attn.output.bias"),
        ln2_g: v("ln2.gain"),
        ln2_b: v("ln2.bias"),
        w_in: m("mlp.in.weight"),
        b_in: v("mlp.in.bias"),
        w_out: m("mlp.out.weight"),
        b_out: v("mlp.out.bias"),
    }
}

/// Runs the model and records every activation needed for gradients.
pub fn forward_trace(params: &ModelParams, ids: &[usize]) -> Result<ForwardTrace, ModelError> {
    validate_input(params, ids)?;
    let cfg = &params.cfg;
    let (t, d) = (ids.len(), cfg.d_model);
    let n_heads = cfg.n_heads;
    let dh = cfg.head_dim();
    let scale = 1.0 / (dh as f64).sqrt();

    let tok = params.tensor(-1, "tok_embedding").expect("tok").as_matrix();
    let pos = params.tensor(-1, "pos_embedding").expect("pos").as_matrix();
    let mut x = Array2::zeros((t, d));
    for (r, &id) in ids.iter().enumerate() {
        for c in 0..d {
            x[[r, c]] = tok[[id, c]] + pos[[r, c]];
        }
    }

    let mut layers = Vec::with_capacity(cfg.n_layers);
    for l in 0..cfg.n_layers as i32 {
        let lv = layer_view(params, l);
        let (n1, ln1) = layer_norm(&x, lv.ln1_g, lv.ln1_b);
        let q = linear(&n1, lv.wq, lv.bq);
        let k = linear(&n1, lv.wk, lv.bk);
        let v = linear(&n1, lv.wv, lv.bv);

        let mut attn = Vec::with_capacity(n_heads);
        let mut ctx = Array2::zeros((t, d));
        for h in 0..n_heads {
            let off = h * dh;
            let mut a = Array2::zeros((t, t));
            for i in 0..t {
                // Causal scores over positions j <= i, softmaxed in place.
                let mut max = f64::NEG_INFINITY;
                let mut scores = Vec::with_capacity(i + 1);
                for j in 0..=i {
                    let mut s = 0.0;
                    for c in 0..dh {
                        s += q[[i, off + c]] * k[[j, off + c]];
                    }
                    s *= scale;
                    max = max.max(s);
                    scores.push(s);
                }
                let mut z = 0.0;
                for s in &mut scores {
                    *s = (*s - max).exp();
                    z += *s;
                }
                for (j, s) in scores.iter().enumerate() {
                    a[[i, j]] = s / z;
                }
                for c in 0..dh {
                    let mut acc = 0.0;
                    for j in 0..=i {
                        acc += a[[i, j]] * v[[j, off + c]];
                    }
                    ctx[[i, off + c]] = acc;
                }
            }
            attn.push(a);
        }

        let attn_out = linear(&ctx, lv.wo, lv.bo);
        let x_mid = &x + &attn_out;
        let (n2, ln2) = layer_norm(&x_mid, lv.ln2_g, lv.ln2_b);
        let u = linear(&n2, lv.w_in, lv.b_in);
        let h_act = u.mapv(gelu);
        let m_out = linear(&h_act, lv.w_out, lv.b_out);
        let x_out = &x_mid + &m_out;

        layers.push(LayerCache {
            ln1,
            n1,
            q,
            k,
            v,
            attn,
            ctx,
            ln2,
            n2,
            u,
            h: h_act,
        });
        x = x_out;
    }

    let lnf_g = params.tensor(-1, "final_norm.gain").expect("lnf").as_vector();
    let lnf_b = params.tensor(-1, "final_norm.bias").expect("lnf").as_vector();
    let (xf, lnf) = layer_norm(&x, lnf_g, lnf_b);
    let head = params.tensor(-1, "lm_head").expect("head").as_matrix();
    let logits = xf.dot(head);

    Ok(ForwardTrace { ids: ids.to_vec(), layers, lnf, xf, logits })
}

/// One next-token logit row per input position.
pub fn forward_logits(params: &ModelParams, ids: &[usize]) -> Result<Array2<f64>, ModelError> {
    Ok(forward_trace(params, ids)?.logits)
}

/// Exact gradients of a scalar loss given its adjoint on the logits.
pub fn logits_backward(
    params: &ModelParams,
    trace: &ForwardTrace,
    dlogits: &Array2<f64>,
) -> GradientSet {
    let cfg = &params.cfg;
    let t = trace.ids.len();
    let d = cfg.d_model;
    let n_heads = cfg.n_heads;
    let dh = cfg.head_dim();
    let scale = 1.0 / (dh as f64).sqrt();
    let mut grads = GradientSet::zeros_like(params);

    // Unembedding.
    {
        let dw = trace.xf.t().dot(dlogits);
        let g = grads.tensor_mut(-1, "lm_head").expect("head");
        add_matrix(g, &dw);
    }
    let head = params.tensor(-1, "lm_head").expect("head").as_matrix();
    let dxf = dlogits.dot(&head.t());

    // Final norm.
    let lnf_g = params.tensor(-1, "final_norm.gain").expect("lnf").as_vector().clone();
    let mut dgain_f = vec![0.0; d];
    let mut dbias_f = vec![0.0; d];
    let mut dx = layer_norm_backward(&dxf, &trace.lnf, &lnf_g, &mut dgain_f, &mut dbias_f);
    copy_into_vector(grads.tensor_mut(-1, "final_norm.gain").unwrap(), &dgain_f);
    copy_into_vector(grads.tensor_mut(-1, "final_norm.bias").unwrap(), &dbias_f);

    for l in (0..cfg.n_layers as i32).rev() {
        let lc = &trace.layers[l as usize];
        let lv = layer_view(params, l);

        // MLP branch: x_out = x_mid + W_out(gelu(W_in ln2(x_mid))).
        let dm = &dx;
        let dw_out = lc.h.t().dot(dm);
        let db_out = dm.sum_axis(Axis(0));
        let dh_act = dm.dot(&lv.w_out.t());
        let mut du = dh_act;
        for (duv, &uv) in du.iter_mut().zip(lc.u.iter()) {
            *duv *= gelu_grad(uv);
        }
        let dw_in = lc.n2.t().dot(&du);
        let db_in = du.sum_axis(Axis(0));
        let dn2 = du.dot(&lv.w_in.t());
        let mut dgain2 = vec![0.0; d];
        let mut dbias2 = vec![0.0; d];
        let dx_mid_ln = layer_norm_backward(&dn2, &lc.ln2, lv.ln2_g, &mut dgain2, &mut dbias2);
        let dx_mid = &dx + &dx_mid_ln;

        // Attention branch: x_mid = x_in + W_o · concat_heads(A · V).
        let dattn_out = &dx_mid;
        let dw_o = lc.ctx.t().dot(dattn_out);
        let db_o = dattn_out.sum_axis(Axis(0));
        let dctx = dattn_out.dot(&lv.wo.t());

        let mut dq = Array2::zeros((t, d));
        let mut dk = Array2::zeros((t, d));
        let mut dv = Array2::zeros((t, d));
        for h in 0..n_heads {
            let off = h * dh;
            let a = &lc.attn[h];
            for i in 0..t {
                // dA over the causal prefix, then softmax backward.
                let mut da = vec![0.0; i + 1];
                for j in 0..=i {
                    let mut acc = 0.0;
                    for c in 0..dh {
                        acc += dctx[[i, off + c]] * lc.v[[j, off + c]];
                    }
                    da[j] = acc;
                }
                let mut dot = 0.0;
                for j in 0..=i {
                    dot += da[j] * a[[i, j]];
                }
                for j in 0..=i {
                    let ds = a[[i, j]] * (da[j] - dot);
                    for c in 0..dh {
                        dq[[i, off + c]] += ds * lc.k[[j, off + c]] * scale;
                        dk[[j, off + c]] += ds * lc.q[[i, off + c]] * scale;
                    }
                }
                for j in 0..=i {
                    let aij = a[[i, j]];
                    for c in 0..dh {
                        dv[[j, off + c]] += aij * dctx[[i, off + c]];
                    }
                }
            }
        }

        let dw_q = lc.n1.t().dot(&dq);
        let db_q = dq.sum_axis(Axis(0));
        let dw_k = lc.n1.t().dot(&dk);
        let db_k = dk.sum_axis(Axis(0));
        let dw_v = lc.n1.t().dot(&dv);
        let db_v = dv.sum_axis(Axis(0));
        let dn1 = dq.dot(&lv.wq.t()) + dk.dot(&lv.wk.t()) + dv.dot(&lv.wv.t());
        let mut dgain1 = vec![0.0; d];
        let mut dbias1 = vec![0.0; d];
        let dx_in_ln = layer_norm_backward(&dn1, &lc.ln1, lv.ln1_g, &mut dgain1, &mut dbias1);
        dx = &dx_mid + &dx_in_ln;

        add_matrix(grads.tensor_mut(l, "mlp.out.weight").unwrap(), &dw_out);
        add_vector(grads.tensor_mut(l, "mlp.out.bias").unwrap(), &db_out);
        add_matrix(grads.tensor_mut(l, "mlp.in.weight").unwrap(), &dw_in);
        add_vector(grads.tensor_mut(l, "mlp.in.bias").unwrap(), &db_in);
        copy_into_vector(grads.tensor_mut(l, "ln2.gain").unwrap(), &dgain2);
        copy_into_vector(grads.tensor_mut(l, "ln2.bias").unwrap(), &dbias2);
        add_matrix(grads.tensor_mut(l, "attn.output.weight").unwrap(), &dw_o);
        add_vector(grads.tensor_mut(l, "attn.output.bias").unwrap(), &db_o);
        add_matrix(grads.tensor_mut(l, "attn.query.weight").unwrap(), &dw_q);
        add_vector(grads.tensor_mut(l, "attn.query.bias").unwrap(), &db_q);
        add_matrix(grads.tensor_mut(l, "attn.key.weight").unwrap(), &dw_k);
        add_vector(grads.tensor_mut(l, "attn.key.bias").unwrap(), &db_k);
        add_matrix(grads.tensor_mut(l, "attn.value.weight").unwrap(), &dw_v);
        add_vector(grads.tensor_mut(l, "attn.value.bias").unwrap(), &db_v);
        copy_into_vector(grads.tensor_mut(l, "ln1.gain").unwrap(), &dgain1);
        copy_into_vector(grads.tensor_mut(l, "ln1.bias").unwrap(), &dbias1);
    }

    // Embeddings.
    {
        let dtok = grads.tensor_mut(-1, "tok_embedding").unwrap();
        if let Tensor::Matrix(m) = dtok {
            for (r, &id) in trace.ids.iter().enumerate() {
                for c in 0..d {
                    m[[id, c]] += dx[[r, c]];
                }
            }
        }
    }
    {
        let dpos = grads.tensor_mut(-1, "pos_embedding").unwrap();
        if let Tensor::Matrix(m) = dpos {
            for r in 0..t {
                for c in 0..d {
                    m[[r, c]] += dx[[r, c]];
                }
            }
        }
    }

    grads
}

fn add_matrix(tensor: &mut Tensor, m: &Array2<f64>) {
    match tensor {
        Tensor::Matrix(g) => *g += m,
        Tensor::Vector(_) => panic!("expected matrix slot"),
    }
}

fn add_vector(tensor: &mut Tensor, v: &Array1<f64>) {
    match tensor {
        Tensor::Vector(g) => *g += v,
        Tensor::Matrix(_) => panic!("expected vector slot"),
    }
}

fn copy_into_vector(tensor: &mut Tensor, v: &[f64]) {
    match tensor {
        Tensor::Vector(g) => {
            for (gv, &x) in g.iter_mut().zip(v) {
                *gv += x;
            }
        }
        Tensor::Matrix(_) => panic!("expected vector slot"),
    }
}

fn log_softmax_at(row: &[f64], target: usize) -> f64 {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + row.iter().map(|&x| (x - max).exp()).sum::<f64>().ln();
    row[target] - lse
}

/// A forward trace plus the bookkeeping to differentiate one sequence
/// log-probability.
pub struct SequenceTrace {
    trace: ForwardTrace,
    prompt_len: usize,
    response: Vec<usize>,
}

impl SequenceTrace {
    pub fn response_len(&self) -> usize {
        self.response.len()
    }
}

/// Strips everything after the first end-of-sequence token, making the
/// log-probability invariant to trailing padding.
fn effective_response(response: &TokenSequence, vocab: &Vocab) -> Vec<usize> {
    match response.ids.iter().position(|&id| id == vocab.eos()) {
        Some(p) => response.ids[..=p].to_vec(),
        None => response.ids.clone(),
    }
}

fn check_roles(prompt: &TokenSequence, response: &TokenSequence) -> Result<(), ModelError> {
    if prompt.role != Role::Prompt {
        return Err(ModelError::RoleMismatch { expected: Role::Prompt, got: prompt.role });
    }
    if response.role != Role::Response {
        return Err(ModelError::RoleMismatch { expected: Role::Response, got: response.role });
    }
    Ok(())
}

/// Sum of response-token conditional log-probabilities given the prompt.
///
/// Prompt tokens contribute no terms and there is no length normalization.
pub fn sequence_logprob(
    params: &ModelParams,
    vocab: &Vocab,
    prompt: &TokenSequence,
    response: &TokenSequence,
) -> Result<f64, ModelError> {
    let (lp, _) = sequence_logprob_with_trace(params, vocab, prompt, response)?;
    Ok(lp)
}

/// As [`sequence_logprob`], also returning the recorded forward pass.
pub fn sequence_logprob_with_trace(
    params: &ModelParams,
    vocab: &Vocab,
    prompt: &TokenSequence,
    response: &TokenSequence,
) -> Result<(f64, SequenceTrace), ModelError> {
    check_roles(prompt, response)?;
    if prompt.is_empty() {
        return Err(ModelError::EmptyPrompt);
    }
    if response.is_empty() {
        return Err(ModelError::EmptyResponse);
    }
    let resp = effective_response(response, vocab);
    let mut ids = prompt.ids.clone();
    ids.extend_from_slice(&resp);
    let trace = forward_trace(params, &ids)?;
    let p = prompt.len();
    let mut logp = 0.0;
    for (t, &y) in resp.iter().enumerate() {
        let row = trace.logits.row(p - 1 + t);
        logp += log_softmax_at(row.as_slice().expect("standard layout"), y);
    }
    Ok((logp, SequenceTrace { trace, prompt_len: p, response: resp }))
}

/// Gradient of `upstream × sequence_logprob` w.r.t. every parameter.
pub fn sequence_logprob_backward(
    params: &ModelParams,
    seq: &SequenceTrace,
    upstream: f64,
) -> GradientSet {
    let logits = &seq.trace.logits;
    let (t_total, vocab) = logits.dim();
    let mut dlogits = Array2::zeros((t_total, vocab));
    for (t, &y) in seq.response.iter().enumerate() {
        let r = seq.prompt_len - 1 + t;
        let row = logits.row(r);
        let slice = row.as_slice().expect("standard layout");
        let max = slice.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = slice.iter().map(|&x| (x - max).exp()).sum();
        for c in 0..vocab {
            let sm = (slice[c] - max).exp() / z;
            let indicator = if c == y { 1.0 } else { 0.0 };
            dlogits[[r, c]] = upstream * (indicator - sm);
        }
    }
    logits_backward(params, &seq.trace, &dlogits)
}

/// Decodes a response from the prompt with the given strategy, stopping at
/// end-of-sequence, `max_len` tokens, or a full context window.
pub fn decode(
    params: &ModelParams,
    vocab: &Vocab,
    prompt: &TokenSequence,
    max_len: usize,
    strategy: DecodeStrategy,
) -> Result<TokenSequence, ModelError> {
    if prompt.role != Role::Prompt {
        return Err(ModelError::RoleMismatch { expected: Role::Prompt, got: prompt.role });
    }
    if prompt.is_empty() {
        return Err(ModelError::EmptyPrompt);
    }
    validate_input(params, &prompt.ids)?;
    let mut rng = match strategy {
        DecodeStrategy::Temperature { seed, .. } => Some(ChaCha12Rng::seed_from_u64(seed)),
        DecodeStrategy::Greedy => None,
    };
    let mut ids = prompt.ids.clone();
    let mut out = Vec::new();
    let budget = max_len.min(params.cfg.context_len.saturating_sub(prompt.len()));
    for _ in 0..budget {
        let logits = forward_logits(params, &ids)?;
        let row = logits.row(logits.nrows() - 1);
        let slice = row.as_slice().expect("standard layout");
        let next = match strategy {
            DecodeStrategy::Greedy => argmax_lowest(slice),
            DecodeStrategy::Temperature { temperature, .. } => {
                sample_softmax(slice, temperature, rng.as_mut().expect("seeded rng"))
            }
        };
        ids.push(next);
        out.push(next);
        if next == vocab.eos() {
            break;
        }
    }
    Ok(TokenSequence::response_unchecked(out))
}

/// Argmax decoding; deterministic, ties broken by lowest token id.
pub fn greedy_decode(
    params: &ModelParams,
    vocab: &Vocab,
    prompt: &TokenSequence,
    max_len: usize,
) -> Result<TokenSequence, ModelError> {
    decode(params, vocab, prompt, max_len, DecodeStrategy::Greedy)
}

fn argmax_lowest(row: &[f64]) -> usize {
    let mut best = 0;
    let mut best_val = row[0];
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > best_val {
            best = i;
            best_val = v;
        }
    }
    best
}

fn sample_softmax(row: &[f64], temperature: f64, rng: &mut ChaCha12Rng) -> usize {
    let temp = temperature.max(1e-6);
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = row.iter().map(|&x| ((x - max) / temp).exp()).collect();
    let total: f64 = weights.iter().sum();
    let mut draw = rng.gen_range(0.0..1.0) * total;
    for (i, w) in weights.iter().enumerate() {
        draw -= w;
        if draw <= 0.0 {
            return i;
        }
    }
    weights.len() - 1
}
