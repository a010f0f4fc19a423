//! Shared test oracles, kept independent of the implementation paths they
//! check: a central finite-difference gradient checker and a naive
//! straight-line forward pass written with plain nested loops.

use speechworthy::tinylm::{GradientSet, ModelParams, ParamKey};

/// Central finite differences over every parameter admitted by `include`.
/// Returns the number of scalars checked and a list of failures.
pub fn finite_difference_check(
    base: &ModelParams,
    loss_fn: &dyn Fn(&ModelParams) -> f64,
    analytic: &GradientSet,
    include: &dyn Fn(&ParamKey) -> bool,
    step: f64,
    rel_tol: f64,
    abs_floor: f64,
) -> (usize, Vec<String>) {
    let mut work = base.clone();
    let mut checked = 0usize;
    let mut failures = Vec::new();
    for slot in 0..base.num_slots() {
        let key = base.slot(slot).0.clone();
        if !include(&key) {
            continue;
        }
        let n_vals = base.slot(slot).1.len();
        for idx in 0..n_vals {
            let original = base.slot(slot).1.data()[idx];
            work.slot_mut(slot).1.data_mut()[idx] = original + step;
            let f_plus = loss_fn(&work);
            work.slot_mut(slot).1.data_mut()[idx] = original - step;
            let f_minus = loss_fn(&work);
            work.slot_mut(slot).1.data_mut()[idx] = original;
            let numeric = (f_plus - f_minus) / (2.0 * step);
            let exact = analytic.slot(slot).1.data()[idx];
            let err = (exact - numeric).abs();
            let tol = abs_floor.max(rel_tol * exact.abs().max(numeric.abs()));
            checked += 1;
            if err > tol {
                failures.push(format!(
                    "{key}[{idx}]: analytic {exact:.12e} vs numeric {numeric:.12e} (err {err:.3e}, tol {tol:.3e})"
                ));
            }
        }
    }
    (checked, failures)
}

/// Naive forward pass: same architecture, written independently with
/// `Vec<Vec<f64>>` arithmetic and no shared helper code.
pub fn naive_forward_logits(params: &ModelParams, ids: &[usize]) -> Vec<Vec<f64>> {
    let cfg = params.cfg;
    let d = cfg.d_model;
    let t = ids.len();
    let heads = cfg.n_heads;
    let dh = d / heads;
    let vocab = params.vocab_size();
    let mat = |layer: i32, name: &str| params.tensor(layer, name).unwrap().as_matrix().clone();
    let vec1 = |layer: i32, name: &str| params.tensor(layer, name).unwrap().as_vector().clone();

    let layer_norm = |x: &Vec<Vec<f64>>, gain: &[f64], bias: &[f64]| -> Vec<Vec<f64>> {
        let mut out = vec![vec![0.0; d]; x.len()];
        for (r, row) in x.iter().enumerate() {
            let mean: f64 = row.iter().sum::<f64>() / d as f64;
            let var: f64 = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let inv = 1.0 / (var + 1e-5).sqrt();
            for c in 0..d {
                out[r][c] = gain[c] * ((row[c] - mean) * inv) + bias[c];
            }
        }
        out
    };

    let tok = mat(-1, "tok_embedding");
    let pos = mat(-1, "pos_embedding");
    let mut x = vec![vec![0.0; d]; t];
    for r in 0..t {
        for c in 0..d {
            x[r][c] = tok[[ids[r], c]] + pos[[r, c]];
        }
    }

    for l in 0..cfg.n_layers as i32 {
        let ln1_g = vec1(l, "ln1.gain");
        let ln1_b = vec1(l, "ln1.bias");
        let n1 = layer_norm(&x, ln1_g.as_slice().unwrap(), ln1_b.as_slice().unwrap());

        let project = |w_name: &str, b_name: &str, input: &Vec<Vec<f64>>| -> Vec<Vec<f64>> {
            let w = mat(l, w_name);
            let b = vec1(l, b_name);
            let mut out = vec![vec![0.0; w.ncols()]; input.len()];
            for (r, row) in input.iter().enumerate() {
                for c in 0..w.ncols() {
                    let mut acc = b[c];
                    for (k, &v) in row.iter().enumerate() {
                        acc += v * w[[k, c]];
                    }
                    out[r][c] = acc;
                }
            }
            out
        };

        let q = project("attn.query.weight", "attn.query.bias", &n1);
        let k = project("attn.key.weight", "attn.key.bias", &n1);
        let v = project("attn.value.weight", "attn.value.bias", &n1);

        let mut ctx = vec![vec![0.0; d]; t];
        for h in 0..heads {
            let off = h * dh;
            for i in 0..t {
                let mut weights = Vec::with_capacity(i + 1);
                for j in 0..=i {
                    let mut s = 0.0;
                    for c in 0..dh {
                        s += q[i][off + c] * k[j][off + c];
                    }
                    weights.push(s / (dh as f64).sqrt());
                }
                let max = weights.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let z: f64 = weights.iter().map(|&s| (s - max).exp()).sum();
                for c in 0..dh {
                    let mut acc = 0.0;
                    for j in 0..=i {
                        acc += ((weights[j] - max).exp() / z) * v[j][off + c];
                    }
                    ctx[i][off + c] = acc;
                }
            }
        }

        let attn_out = project("attn.output.weight", "attn.output.bias", &ctx);
        let mut x_mid = vec![vec![0.0; d]; t];
        for r in 0..t {
            for c in 0..d {
                x_mid[r][c] = x[r][c] + attn_out[r][c];
            }
        }

        let ln2_g = vec1(l, "ln2.gain");
        let ln2_b = vec1(l, "ln2.bias");
        let n2 = layer_norm(&x_mid, ln2_g.as_slice().unwrap(), ln2_b.as_slice().unwrap());
        let mut hidden = project("mlp.in.weight", "mlp.in.bias", &n2);
        for row in hidden.iter_mut() {
            for u in row.iter_mut() {
                let t_inner = (0.7978845608028654 * (*u + 0.044715 * *u * *u * *u)).tanh();
                *u = 0.5 * *u * (1.0 + t_inner);
            }
        }
        let m_out = project("mlp.out.weight", "mlp.out.bias", &hidden);
        for r in 0..t {
            for c in 0..d {
                x[r][c] = x_mid[r][c] + m_out[r][c];
            }
        }
    }

    let lnf_g = vec1(-1, "final_norm.gain");
    let lnf_b = vec1(-1, "final_norm.bias");
    let xf = layer_norm(&x, lnf_g.as_slice().unwrap(), lnf_b.as_slice().unwrap());
    let head = mat(-1, "lm_head");
    let mut logits = vec![vec![0.0; vocab]; t];
    for r in 0..t {
        for c in 0..vocab {
            let mut acc = 0.0;
            for k in 0..d {
                acc += xf[r][k] * head[[k, c]];
            }
            logits[r][c] = acc;
        }
    }
    logits
}

/// Log-probability of `response` given `prompt` by explicit per-position
/// softmax over the naive logits.
pub fn naive_sequence_logprob(params: &ModelParams, prompt: &[usize], response: &[usize]) -> f64 {
    let mut ids = prompt.to_vec();
    ids.extend_from_slice(response);
    let logits = naive_forward_logits(params, &ids);
    let mut logp = 0.0;
    for (t, &y) in response.iter().enumerate() {
        let row = &logits[prompt.len() - 1 + t];
        let z: f64 = row.iter().map(|&x| x.exp()).sum();
        logp += (row[y].exp() / z).ln();
    }
    logp
}
