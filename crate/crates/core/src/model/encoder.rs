//! Post-norm transformer encoder with hand-written backward pass.
//!
//! ```text
//! x0 = tok_emb[id] + pos_emb[t]
//! per layer:  h1 = LN1(x + Attn(x));  x' = LN2(h1 + W2·gelu(W1·h1))
//! mlm logits = H·W_mlm + b          (W_mlm = tok_embᵀ when tied)
//! cls logits = H[0]·W_cls + b
//! ```
//!
//! Attention never looks at padded keys: their weights are exactly zero and the
//! remaining weights of each row sum to one.

use rand::Rng;

use super::scalar::{gemm, Scalar, Tr};
use super::{ModelError, ModelParams};
use crate::masking::IGNORE_INDEX;
use crate::rng::RngKey;
use crate::tokenizer::TokenId;

pub const LN_EPS: f64 = 1e-12;

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

#[inline]
fn gelu<T: Scalar>(x: T) -> T {
    let c = T::from_f64_lossy(GELU_C);
    let a = T::from_f64_lossy(GELU_A);
    let half = T::from_f64_lossy(0.5);
    half * x * (T::one() + (c * (x + a * x * x * x)).tanh())
}

#[inline]
fn gelu_grad<T: Scalar>(x: T) -> T {
    let c = T::from_f64_lossy(GELU_C);
    let a = T::from_f64_lossy(GELU_A);
    let half = T::from_f64_lossy(0.5);
    let three = T::from_f64_lossy(3.0);
    let t = (c * (x + a * x * x * x)).tanh();
    half * (T::one() + t) + half * x * (T::one() - t * t) * c * (T::one() + three * a * x * x)
}

struct NormCache<T> {
    xhat: Vec<T>,
    rstd: Vec<T>,
}

fn layer_norm<T: Scalar>(x: &[T], d: usize, g: &[T], b: &[T]) -> (Vec<T>, NormCache<T>) {
    let n = x.len() / d;
    let eps = T::from_f64_lossy(LN_EPS);
    let dn = T::from_usize(d).unwrap();
    let mut y = vec![T::zero(); x.len()];
    let mut xhat = vec![T::zero(); x.len()];
    let mut rstd = vec![T::zero(); n];
    for i in 0..n {
        let row = &x[i * d..(i + 1) * d];
        let mean = row.iter().copied().sum::<T>() / dn;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / dn;
        let r = T::one() / (var + eps).sqrt();
        rstd[i] = r;
        for j in 0..d {
            let xh = (row[j] - mean) * r;
            xhat[i * d + j] = xh;
            y[i * d + j] = g[j] * xh + b[j];
        }
    }
    (y, NormCache { xhat, rstd })
}

/// Returns dx; accumulates dg, db.
fn layer_norm_backward<T: Scalar>(
    dy: &[T],
    cache: &NormCache<T>,
    g: &[T],
    dg: &mut [T],
    db: &mut [T],
    d: usize,
) -> Vec<T> {
    let n = dy.len() / d;
    let dn = T::from_usize(d).unwrap();
    let mut dx = vec![T::zero(); dy.len()];
    let mut dxhat = vec![T::zero(); d];
    for i in 0..n {
        let dyr = &dy[i * d..(i + 1) * d];
        let xh = &cache.xhat[i * d..(i + 1) * d];
        let mut mean_dxhat = T::zero();
        let mut mean_dxhat_xhat = T::zero();
        for j in 0..d {
            dg[j] = dg[j] + dyr[j] * xh[j];
            db[j] = db[j] + dyr[j];
            dxhat[j] = dyr[j] * g[j];
            mean_dxhat = mean_dxhat + dxhat[j];
            mean_dxhat_xhat = mean_dxhat_xhat + dxhat[j] * xh[j];
        }
        mean_dxhat = mean_dxhat / dn;
        mean_dxhat_xhat = mean_dxhat_xhat / dn;
        let r = cache.rstd[i];
        for j in 0..d {
            dx[i * d + j] = r * (dxhat[j] - mean_dxhat - xh[j] * mean_dxhat_xhat);
        }
    }
    dx
}

fn add_bias<T: Scalar>(x: &mut [T], bias: &[T]) {
    for row in x.chunks_exact_mut(bias.len()) {
        for (v, b) in row.iter_mut().zip(bias) {
            *v = *v + *b;
        }
    }
}

fn accumulate_colsum<T: Scalar>(x: &[T], out: &mut [T]) {
    for row in x.chunks_exact(out.len()) {
        for (o, v) in out.iter_mut().zip(row) {
            *o = *o + *v;
        }
    }
}

/// `x·w + b` with `x` n×rows(w).
fn dense<T: Scalar>(x: &[T], w: &[T], b: &[T], n: usize, din: usize, dout: usize) -> Vec<T> {
    let mut y = vec![T::zero(); n * dout];
    gemm(n, din, dout, x, Tr::N, w, Tr::N, &mut y, false);
    add_bias(&mut y, b);
    y
}

#[inline]
fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (x, y)| acc + *x * *y)
}

struct LayerCache<T> {
    x_in: Vec<T>,
    q: Vec<T>,
    k: Vec<T>,
    v: Vec<T>,
    /// heads × n × n
    attn: Vec<T>,
    ctx: Vec<T>,
    ln1: NormCache<T>,
    h1: Vec<T>,
    pre_act: Vec<T>,
    act: Vec<T>,
    ln2: NormCache<T>,
    drop_attn: Option<Vec<T>>,
    drop_ffn: Option<Vec<T>>,
}

/// Activations of one forward pass kept for the backward pass.
pub(crate) struct EncoderCache<T> {
    n: usize,
    ids: Vec<TokenId>,
    key_mask: Vec<bool>,
    layers: Vec<LayerCache<T>>,
    hidden: Vec<T>,
}

fn dropout_mask<T: Scalar>(len: usize, rate: f64, key: RngKey) -> Vec<T> {
    let mut rng = key.rng();
    let scale = T::from_f64_lossy(1.0 / (1.0 - rate));
    (0..len)
        .map(|_| if rng.random::<f64>() < rate { T::zero() } else { scale })
        .collect()
}

fn validate_inputs<T: Scalar>(
    params: &ModelParams<T>,
    ids: &[TokenId],
    key_mask: &[bool],
) -> Result<(), ModelError> {
    let cfg = &params.config;
    if ids.len() > cfg.max_len {
        return Err(ModelError::LengthExceeded { len: ids.len(), max_len: cfg.max_len });
    }
    if ids.len() != key_mask.len() {
        return Err(ModelError::ShapeMismatch(format!(
            "{} ids but {} padding-mask entries",
            ids.len(),
            key_mask.len()
        )));
    }
    if let Some(&bad) = ids.iter().find(|&&id| id as usize >= cfg.vocab_size) {
        return Err(ModelError::InvalidToken { id: bad, vocab_size: cfg.vocab_size });
    }
    Ok(())
}

pub(crate) fn encode<T: Scalar>(
    params: &ModelParams<T>,
    ids: &[TokenId],
    key_mask: &[bool],
    dropout: Option<RngKey>,
) -> Result<EncoderCache<T>, ModelError> {
    validate_inputs(params, ids, key_mask)?;
    let cfg = &params.config;
    let lay = &params.layout;
    let p = &params.data;
    let (n, d, f, heads) = (ids.len(), cfg.hidden_dim, cfg.ff_dim, cfg.num_heads);
    let dh = cfg.head_dim();
    let scale = T::one() / T::from_usize(dh).unwrap().sqrt();
    let dropout = dropout.filter(|_| cfg.dropout_rate > 0.0);

    let mut x = vec![T::zero(); n * d];
    for (t, &id) in ids.iter().enumerate() {
        let tok = &p[lay.tok_emb.start + id as usize * d..][..d];
        let pos = &p[lay.pos_emb.start + t * d..][..d];
        for j in 0..d {
            x[t * d + j] = tok[j] + pos[j];
        }
    }

    let mut layers = Vec::with_capacity(cfg.num_layers);
    for (l, s) in lay.layers.iter().enumerate() {
        let q = dense(&x, &p[s.wq.clone()], &p[s.bq.clone()], n, d, d);
        let k = dense(&x, &p[s.wk.clone()], &p[s.bk.clone()], n, d, d);
        let v = dense(&x, &p[s.wv.clone()], &p[s.bv.clone()], n, d, d);

        let mut attn = vec![T::zero(); heads * n * n];
        let mut ctx = vec![T::zero(); n * d];
        for h in 0..heads {
            let hc = h * dh..(h + 1) * dh;
            for i in 0..n {
                let row = &mut attn[(h * n + i) * n..(h * n + i + 1) * n];
                let qi = &q[i * d..][hc.clone()];
                let mut max = T::neg_infinity();
                for j in (0..n).filter(|&j| key_mask[j]) {
                    let s = dot(qi, &k[j * d..][hc.clone()]) * scale;
                    row[j] = s;
                    if s > max {
                        max = s;
                    }
                }
                let mut sum = T::zero();
                for j in (0..n).filter(|&j| key_mask[j]) {
                    let e = (row[j] - max).exp();
                    row[j] = e;
                    sum = sum + e;
                }
                if sum > T::zero() {
                    for j in (0..n).filter(|&j| key_mask[j]) {
                        row[j] = row[j] / sum;
                    }
                }
                let ci = &mut ctx[i * d..][hc.clone()];
                for j in (0..n).filter(|&j| key_mask[j]) {
                    let a = row[j];
                    for (c, vv) in ci.iter_mut().zip(&v[j * d..][hc.clone()]) {
                        *c = *c + a * *vv;
                    }
                }
            }
        }

        let mut attn_out = dense(&ctx, &p[s.wo.clone()], &p[s.bo.clone()], n, d, d);
        let drop_attn = dropout.map(|key| dropout_mask::<T>(n * d, cfg.dropout_rate, key.fork2(l as u64, 0)));
        if let Some(m) = &drop_attn {
            attn_out.iter_mut().zip(m).for_each(|(a, m)| *a = *a * *m);
        }
        let r1: Vec<T> = x.iter().zip(&attn_out).map(|(a, b)| *a + *b).collect();
        let (h1, ln1) = layer_norm(&r1, d, &p[s.ln1_g.clone()], &p[s.ln1_b.clone()]);

        let pre_act = dense(&h1, &p[s.w1.clone()], &p[s.b1.clone()], n, d, f);
        let act: Vec<T> = pre_act.iter().map(|&u| gelu(u)).collect();
        let mut ffn_out = dense(&act, &p[s.w2.clone()], &p[s.b2.clone()], n, f, d);
        let drop_ffn = dropout.map(|key| dropout_mask::<T>(n * d, cfg.dropout_rate, key.fork2(l as u64, 1)));
        if let Some(m) = &drop_ffn {
            ffn_out.iter_mut().zip(m).for_each(|(a, m)| *a = *a * *m);
        }
        let r2: Vec<T> = h1.iter().zip(&ffn_out).map(|(a, b)| *a + *b).collect();
        let (x_next, ln2) = layer_norm(&r2, d, &p[s.ln2_g.clone()], &p[s.ln2_b.clone()]);

        layers.push(LayerCache {
            x_in: std::mem::replace(&mut x, x_next),
            q,
            k,
            v,
            attn,
            ctx,
            ln1,
            h1,
            pre_act,
            act,
            ln2,
            drop_attn,
            drop_ffn,
        });
    }

    Ok(EncoderCache { n, ids: ids.to_vec(), key_mask: key_mask.to_vec(), layers, hidden: x })
}

/// Accumulates parameter gradients given dL/d(hidden).
pub(crate) fn encode_backward<T: Scalar>(
    params: &ModelParams<T>,
    cache: &EncoderCache<T>,
    d_hidden: Vec<T>,
    grads: &mut [T],
) {
    let cfg = &params.config;
    let lay = &params.layout;
    let p = &params.data;
    let (n, d, f, heads) = (cache.n, cfg.hidden_dim, cfg.ff_dim, cfg.num_heads);
    let dh = cfg.head_dim();
    let scale = T::one() / T::from_usize(dh).unwrap().sqrt();

    let mut dx = d_hidden;
    for (s, c) in lay.layers.iter().zip(&cache.layers).rev() {
        // x' = LN2(h1 + ffn)
        let dr2 = {
            let (dg, db) = split_two(grads, &s.ln2_g, &s.ln2_b);
            layer_norm_backward(&dx, &c.ln2, &p[s.ln2_g.clone()], dg, db, d)
        };
        let mut dh1 = dr2.clone();
        let mut dffn = dr2;
        if let Some(m) = &c.drop_ffn {
            dffn.iter_mut().zip(m).for_each(|(a, m)| *a = *a * *m);
        }
        gemm(f, n, d, &c.act, Tr::T, &dffn, Tr::N, &mut grads[s.w2.clone()], true);
        accumulate_colsum(&dffn, &mut grads[s.b2.clone()]);
        let mut dact = vec![T::zero(); n * f];
        gemm(n, d, f, &dffn, Tr::N, &p[s.w2.clone()], Tr::T, &mut dact, false);
        for (g, &u) in dact.iter_mut().zip(&c.pre_act) {
            *g = *g * gelu_grad(u);
        }
        gemm(d, n, f, &c.h1, Tr::T, &dact, Tr::N, &mut grads[s.w1.clone()], true);
        accumulate_colsum(&dact, &mut grads[s.b1.clone()]);
        gemm(n, f, d, &dact, Tr::N, &p[s.w1.clone()], Tr::T, &mut dh1, true);

        // h1 = LN1(x + attn)
        let dr1 = {
            let (dg, db) = split_two(grads, &s.ln1_g, &s.ln1_b);
            layer_norm_backward(&dh1, &c.ln1, &p[s.ln1_g.clone()], dg, db, d)
        };
        let mut dx_in = dr1.clone();
        let mut dao = dr1;
        if let Some(m) = &c.drop_attn {
            dao.iter_mut().zip(m).for_each(|(a, m)| *a = *a * *m);
        }
        gemm(d, n, d, &c.ctx, Tr::T, &dao, Tr::N, &mut grads[s.wo.clone()], true);
        accumulate_colsum(&dao, &mut grads[s.bo.clone()]);
        let mut dctx = vec![T::zero(); n * d];
        gemm(n, d, d, &dao, Tr::N, &p[s.wo.clone()], Tr::T, &mut dctx, false);

        let mut dq = vec![T::zero(); n * d];
        let mut dk = vec![T::zero(); n * d];
        let mut dv = vec![T::zero(); n * d];
        let mut ds = vec![T::zero(); n];
        for h in 0..heads {
            let hc = h * dh..(h + 1) * dh;
            for i in 0..n {
                let row = &c.attn[(h * n + i) * n..(h * n + i + 1) * n];
                let dci = &dctx[i * d..][hc.clone()];
                let mut weighted = T::zero();
                for j in (0..n).filter(|&j| cache.key_mask[j]) {
                    let da = dot(dci, &c.v[j * d..][hc.clone()]);
                    ds[j] = da;
                    weighted = weighted + row[j] * da;
                    let a = row[j];
                    for (g, &dc) in dv[j * d..][hc.clone()].iter_mut().zip(dci) {
                        *g = *g + a * dc;
                    }
                }
                for j in (0..n).filter(|&j| cache.key_mask[j]) {
                    let dscore = row[j] * (ds[j] - weighted) * scale;
                    if dscore == T::zero() {
                        continue;
                    }
                    let (qi, kj) = (&c.q[i * d..][hc.clone()], &c.k[j * d..][hc.clone()]);
                    for (g, &kv) in dq[i * d..][hc.clone()].iter_mut().zip(kj) {
                        *g = *g + dscore * kv;
                    }
                    for (g, &qv) in dk[j * d..][hc.clone()].iter_mut().zip(qi) {
                        *g = *g + dscore * qv;
                    }
                }
            }
        }
        for (dproj, w, b) in [(&dq, &s.wq, &s.bq), (&dk, &s.wk, &s.bk), (&dv, &s.wv, &s.bv)] {
            gemm(d, n, d, &c.x_in, Tr::T, dproj, Tr::N, &mut grads[w.clone()], true);
            accumulate_colsum(dproj, &mut grads[b.clone()]);
            gemm(n, d, d, dproj, Tr::N, &p[w.clone()], Tr::T, &mut dx_in, true);
        }
        dx = dx_in;
    }

    for (t, &id) in cache.ids.iter().enumerate() {
        let row = &dx[t * d..(t + 1) * d];
        let tok = &mut grads[lay.tok_emb.start + id as usize * d..][..d];
        tok.iter_mut().zip(row).for_each(|(g, v)| *g = *g + *v);
        let pos = &mut grads[lay.pos_emb.start + t * d..][..d];
        pos.iter_mut().zip(row).for_each(|(g, v)| *g = *g + *v);
    }
}

/// Two disjoint mutable sub-slices; `a` must precede `b`.
fn split_two<'a, T>(
    buf: &'a mut [T],
    a: &std::ops::Range<usize>,
    b: &std::ops::Range<usize>,
) -> (&'a mut [T], &'a mut [T]) {
    assert!(a.end <= b.start);
    let (lo, hi) = buf.split_at_mut(b.start);
    (&mut lo[a.clone()], &mut hi[..b.len()])
}

/// Logits for the hidden rows at `positions` (|positions| × vocab).
fn mlm_logits<T: Scalar>(params: &ModelParams<T>, hidden: &[T], positions: &[usize]) -> Vec<T> {
    let (d, v) = (params.config.hidden_dim, params.config.vocab_size);
    let lay = &params.layout;
    let p = &params.data;
    let sel: Vec<T> = positions.iter().flat_map(|&t| hidden[t * d..(t + 1) * d].iter().copied()).collect();
    let m = positions.len();
    let mut logits = vec![T::zero(); m * v];
    match &lay.mlm_w {
        Some(w) => gemm(m, d, v, &sel, Tr::N, &p[w.clone()], Tr::N, &mut logits, false),
        None => gemm(m, d, v, &sel, Tr::N, &p[lay.tok_emb.clone()], Tr::T, &mut logits, false),
    }
    add_bias(&mut logits, &p[lay.mlm_b.clone()]);
    logits
}

/// Returns dL/d(hidden) contributions and accumulates head gradients.
fn mlm_logits_backward<T: Scalar>(
    params: &ModelParams<T>,
    hidden: &[T],
    positions: &[usize],
    dlogits: &[T],
    grads: &mut [T],
) -> Vec<T> {
    let (d, v) = (params.config.hidden_dim, params.config.vocab_size);
    let lay = &params.layout;
    let p = &params.data;
    let m = positions.len();
    let sel: Vec<T> = positions.iter().flat_map(|&t| hidden[t * d..(t + 1) * d].iter().copied()).collect();
    accumulate_colsum(dlogits, &mut grads[lay.mlm_b.clone()]);
    let mut dsel = vec![T::zero(); m * d];
    match &lay.mlm_w {
        Some(w) => {
            gemm(d, m, v, &sel, Tr::T, dlogits, Tr::N, &mut grads[w.clone()], true);
            gemm(m, v, d, dlogits, Tr::N, &p[w.clone()], Tr::T, &mut dsel, false);
        }
        None => {
            gemm(v, m, d, dlogits, Tr::T, &sel, Tr::N, &mut grads[lay.tok_emb.clone()], true);
            gemm(m, v, d, dlogits, Tr::N, &p[lay.tok_emb.clone()], Tr::N, &mut dsel, false);
        }
    }
    let mut dh = vec![T::zero(); hidden.len()];
    for (r, &t) in positions.iter().enumerate() {
        for j in 0..d {
            dh[t * d + j] = dh[t * d + j] + dsel[r * d + j];
        }
    }
    dh
}

/// Cross-entropy of each row against `targets`; replaces `logits` with
/// `scale · (softmax - onehot)`. Returns the summed loss.
fn softmax_xent<T: Scalar>(logits: &mut [T], width: usize, targets: &[usize], scale: T) -> T {
    let mut total = T::zero();
    for (row, &target) in logits.chunks_exact_mut(width).zip(targets) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let sum: T = row.iter().map(|&z| (z - max).exp()).sum();
        let lse = max + sum.ln();
        total = total + (lse - row[target]);
        for z in row.iter_mut() {
            *z = (*z - lse).exp() * scale;
        }
        row[target] = row[target] - scale;
    }
    total
}

fn cls_logits<T: Scalar>(params: &ModelParams<T>, hidden: &[T]) -> Vec<T> {
    let (d, c) = (params.config.hidden_dim, params.config.num_classes);
    let p = &params.data;
    dense(&hidden[..d], &p[params.layout.cls_w.clone()], &p[params.layout.cls_b.clone()], 1, d, c)
}

/// Everything observable from one forward pass.
#[derive(Clone, Debug)]
pub struct ForwardTrace<T> {
    pub seq_len: usize,
    pub vocab_size: usize,
    pub num_layers: usize,
    pub num_heads: usize,
    pub hidden_dim: usize,
    /// `true` at unpadded positions.
    pub padding_mask: Vec<bool>,
    /// seq_len × vocab_size
    pub logits: Vec<T>,
    /// Per layer: heads × seq_len × seq_len, row = query, column = key.
    pub attention: Vec<Vec<T>>,
    /// seq_len × hidden_dim
    pub hidden: Vec<T>,
    /// Final hidden state at position 0 (`[CLS]`).
    pub pooled: Vec<T>,
    pub class_logits: Vec<T>,
}

impl<T: Scalar> ForwardTrace<T> {
    pub fn attention_row(&self, layer: usize, head: usize, query: usize) -> &[T] {
        let n = self.seq_len;
        &self.attention[layer][(head * n + query) * n..(head * n + query + 1) * n]
    }

    pub fn logits_row(&self, pos: usize) -> &[T] {
        &self.logits[pos * self.vocab_size..(pos + 1) * self.vocab_size]
    }
}

/// Full forward pass (no dropout) with logits at every position.
pub fn forward<T: Scalar>(
    params: &ModelParams<T>,
    ids: &[TokenId],
    padding_mask: &[bool],
) -> Result<ForwardTrace<T>, ModelError> {
    let cache = encode(params, ids, padding_mask, None)?;
    let positions: Vec<usize> = (0..cache.n).collect();
    let logits = mlm_logits(params, &cache.hidden, &positions);
    let d = params.config.hidden_dim;
    let class_logits = if cache.n > 0 { cls_logits(params, &cache.hidden) } else { Vec::new() };
    Ok(ForwardTrace {
        seq_len: cache.n,
        vocab_size: params.config.vocab_size,
        num_layers: params.config.num_layers,
        num_heads: params.config.num_heads,
        hidden_dim: d,
        padding_mask: cache.key_mask,
        logits,
        pooled: cache.hidden.get(..d).map(<[T]>::to_vec).unwrap_or_default(),
        attention: cache.layers.into_iter().map(|l| l.attn).collect(),
        hidden: cache.hidden,
        class_logits,
    })
}

/// Summed cross-entropy and number of scored positions.
pub fn mlm_loss_sum<T: Scalar>(trace: &ForwardTrace<T>, labels: &[i32]) -> (f64, usize) {
    let mut total = 0.0;
    let mut count = 0;
    for (pos, &label) in labels.iter().enumerate().take(trace.seq_len) {
        if label == IGNORE_INDEX {
            continue;
        }
        let row = trace.logits_row(pos);
        let max = row.iter().map(|z| z.as_f64()).fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|z| (z.as_f64() - max).exp()).sum::<f64>().ln();
        total += lse - row[label as usize].as_f64();
        count += 1;
    }
    (total, count)
}

/// Mean cross-entropy over labeled positions; 0 when nothing is labeled.
pub fn mlm_loss<T: Scalar>(trace: &ForwardTrace<T>, labels: &[i32]) -> f64 {
    let (total, count) = mlm_loss_sum(trace, labels);
    if count == 0 {
        0.0
    } else {
        total / count as f64
    }
}

/// One masked-language-model training example in frame coordinates.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MlmExample {
    pub ids: Vec<TokenId>,
    pub padding_mask: Vec<bool>,
    pub labels: Vec<i32>,
}

/// One sequence-classification example.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ClsExample {
    pub ids: Vec<TokenId>,
    pub padding_mask: Vec<bool>,
    pub label: usize,
}

#[derive(Clone, Copy, Debug)]
pub enum Batch<'a> {
    Mlm(&'a [MlmExample]),
    Classify(&'a [ClsExample]),
}

/// Gradients in the parameter layout.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients<T> {
    pub data: Vec<T>,
}

#[derive(Clone, Copy, Debug, Default)]
pub struct BackwardOptions {
    /// Enables dropout (when the config rate is non-zero), keyed per example.
    pub dropout: Option<RngKey>,
    /// Only the classification head receives gradients.
    pub head_only: bool,
}

/// Trailing padding never influences real positions, so it can be dropped.
fn trimmed_len(mask: &[bool]) -> usize {
    mask.iter().rposition(|&m| m).map_or(0, |i| i + 1)
}

/// Mean loss over the batch and its exact gradient.
pub fn backward<T: Scalar>(
    params: &ModelParams<T>,
    batch: Batch<'_>,
    opts: BackwardOptions,
) -> Result<(T, Gradients<T>), ModelError> {
    let mut grads = vec![T::zero(); params.layout.total];
    let loss = match batch {
        Batch::Mlm(examples) => mlm_backward(params, examples, opts, &mut grads)?,
        Batch::Classify(examples) => cls_backward(params, examples, opts, &mut grads)?,
    };
    Ok((loss, Gradients { data: grads }))
}

fn mlm_backward<T: Scalar>(
    params: &ModelParams<T>,
    examples: &[MlmExample],
    opts: BackwardOptions,
    grads: &mut [T],
) -> Result<T, ModelError> {
    let vocab = params.config.vocab_size;
    let mut targets_per_example = Vec::with_capacity(examples.len());
    let mut total_targets = 0usize;
    for (e, ex) in examples.iter().enumerate() {
        if ex.labels.len() != ex.ids.len() {
            return Err(ModelError::ShapeMismatch(format!(
                "example {e}: {} labels for {} ids",
                ex.labels.len(),
                ex.ids.len()
            )));
        }
        let mut targets = Vec::new();
        for (pos, &label) in ex.labels.iter().enumerate() {
            if label == IGNORE_INDEX {
                continue;
            }
            if label < 0 || label as usize >= vocab {
                return Err(ModelError::InvalidLabel { position: pos, label: label as i64 });
            }
            if !ex.padding_mask.get(pos).copied().unwrap_or(false) {
                return Err(ModelError::InvalidLabel { position: pos, label: label as i64 });
            }
            targets.push((pos, label as usize));
        }
        total_targets += targets.len();
        targets_per_example.push(targets);
    }
    if total_targets == 0 {
        return Ok(T::zero());
    }
    let scale = T::one() / T::from_usize(total_targets).unwrap();
    let mut loss = T::zero();
    for (e, (ex, targets)) in examples.iter().zip(&targets_per_example).enumerate() {
        if targets.is_empty() {
            continue;
        }
        let n = trimmed_len(&ex.padding_mask);
        let cache = encode(params, &ex.ids[..n], &ex.padding_mask[..n], opts.dropout.map(|k| k.fork(e as u64)))?;
        let positions: Vec<usize> = targets.iter().map(|t| t.0).collect();
        let labels: Vec<usize> = targets.iter().map(|t| t.1).collect();
        let mut logits = mlm_logits(params, &cache.hidden, &positions);
        loss = loss + softmax_xent(&mut logits, vocab, &labels, scale);
        let dh = mlm_logits_backward(params, &cache.hidden, &positions, &logits, grads);
        encode_backward(params, &cache, dh, grads);
    }
    Ok(loss * scale)
}

fn cls_backward<T: Scalar>(
    params: &ModelParams<T>,
    examples: &[ClsExample],
    opts: BackwardOptions,
    grads: &mut [T],
) -> Result<T, ModelError> {
    let (d, c) = (params.config.hidden_dim, params.config.num_classes);
    if examples.is_empty() {
        return Ok(T::zero());
    }
    let scale = T::one() / T::from_usize(examples.len()).unwrap();
    let mut loss = T::zero();
    for (e, ex) in examples.iter().enumerate() {
        if ex.label >= c {
            return Err(ModelError::InvalidLabel { position: 0, label: ex.label as i64 });
        }
        let n = trimmed_len(&ex.padding_mask).max(1);
        let dropout = if opts.head_only { None } else { opts.dropout.map(|k| k.fork(e as u64)) };
        let cache = encode(params, &ex.ids[..n], &ex.padding_mask[..n], dropout)?;
        let mut logits = cls_logits(params, &cache.hidden);
        loss = loss + softmax_xent(&mut logits, c, &[ex.label], scale);
        let pooled = &cache.hidden[..d];
        gemm(d, 1, c, pooled, Tr::T, &logits, Tr::N, &mut grads[params.layout.cls_w.clone()], true);
        accumulate_colsum(&logits, &mut grads[params.layout.cls_b.clone()]);
        if !opts.head_only {
            let mut dh = vec![T::zero(); cache.hidden.len()];
            gemm(1, c, d, &logits, Tr::N, &params.data[params.layout.cls_w.clone()], Tr::T, &mut dh[..d], false);
            encode_backward(params, &cache, dh, grads);
        }
    }
    Ok(loss * scale)
}

/// Mean MLM loss over a batch computed from full forward passes.
pub fn batch_mlm_loss<T: Scalar>(params: &ModelParams<T>, examples: &[MlmExample]) -> Result<f64, ModelError> {
    let mut total = 0.0;
    let mut count = 0;
    for ex in examples {
        let trace = forward(params, &ex.ids, &ex.padding_mask)?;
        let (t, c) = mlm_loss_sum(&trace, &ex.labels);
        total += t;
        count += c;
    }
    Ok(if count == 0 { 0.0 } else { total / count as f64 })
}

/// Mean classification loss computed from full forward passes.
pub fn batch_cls_loss<T: Scalar>(params: &ModelParams<T>, examples: &[ClsExample]) -> Result<f64, ModelError> {
    if examples.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for ex in examples {
        let trace = forward(params, &ex.ids, &ex.padding_mask)?;
        let z: Vec<f64> = trace.class_logits.iter().map(|v| v.as_f64()).collect();
        let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        total += lse - z[ex.label];
    }
    Ok(total / examples.len() as f64)
}

/// Arg-max class of each example.
pub fn predict_classes<T: Scalar>(params: &ModelParams<T>, examples: &[ClsExample]) -> Result<Vec<usize>, ModelError> {
    examples
        .iter()
        .map(|ex| {
            let n = trimmed_len(&ex.padding_mask).max(1);
            let cache = encode(params, &ex.ids[..n], &ex.padding_mask[..n], None)?;
            let logits = cls_logits(params, &cache.hidden);
            let best = logits
                .iter()
                .enumerate()
                .fold((0, T::neg_infinity()), |acc, (i, &z)| if z > acc.1 { (i, z) } else { acc });
            Ok(best.0)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;
    use crate::tokenizer::{CLS_ID, MASK_ID, PAD_ID, SEP_ID};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn tiny(vocab: usize, seed: u64) -> ModelConfig {
        ModelConfig {
            num_layers: 1,
            num_heads: 2,
            hidden_dim: 8,
            ff_dim: 16,
            max_len: 10,
            vocab_size: vocab,
            num_classes: 3,
            dropout_rate: 0.0,
            tie_embeddings: false,
            seed,
        }
    }

    /// Parameters with O(1) magnitudes so every gradient is well above
    /// finite-difference noise.
    fn scrambled(cfg: &ModelConfig) -> ModelParams<f64> {
        let mut p = ModelParams::<f64>::init(cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xabc);
        let normal = Normal::new(0.0, 0.4).unwrap();
        for e in p.layout.entries.clone() {
            for x in &mut p.data[e.range.clone()] {
                let z = normal.sample(&mut rng);
                *x = match e.kind {
                    crate::model::ParamKind::NormScale => 1.0 + z * 0.5,
                    _ => z,
                };
            }
        }
        p
    }

    fn mlm_batch(vocab: u32, seed: u64) -> Vec<MlmExample> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = Vec::new();
        for real in [10usize, 7] {
            let mut ids = vec![PAD_ID; 10];
            let mut labels = vec![IGNORE_INDEX; 10];
            ids[0] = CLS_ID;
            for t in 1..real - 1 {
                ids[t] = rng.random_range(5..vocab);
            }
            ids[real - 1] = SEP_ID;
            for t in [2usize, 4, 5] {
                labels[t] = ids[t] as i32;
                ids[t] = MASK_ID;
            }
            out.push(MlmExample { ids, padding_mask: (0..10).map(|i| i < real).collect(), labels });
        }
        out
    }

    fn check_gradients(params: &ModelParams<f64>, batch: Batch<'_>, opts: BackwardOptions) -> f64 {
        let (_, g) = backward(params, batch, opts).unwrap();
        let h = 1e-5;
        let mut worst: f64 = 0.0;
        let mut p = params.clone();
        for i in 0..p.data.len() {
            let orig = p.data[i];
            p.data[i] = orig + h;
            let up = backward(&p, batch, opts).unwrap().0;
            p.data[i] = orig - h;
            let down = backward(&p, batch, opts).unwrap().0;
            p.data[i] = orig;
            let numeric = (up - down) / (2.0 * h);
            let analytic = g.data[i];
            let rel = (numeric - analytic).abs() / numeric.abs().max(analytic.abs()).max(1e-6);
            worst = worst.max(rel);
        }
        worst
    }

    #[test]
    fn mlm_gradients_match_finite_differences() {
        for seed in 0..10 {
            let cfg = tiny(21, seed);
            let params = scrambled(&cfg);
            let batch = mlm_batch(21, seed);
            let err = check_gradients(&params, Batch::Mlm(&batch), BackwardOptions::default());
            assert!(err < 1e-4, "seed {seed}: max relative error {err}");
        }
    }

    #[test]
    fn tied_and_dropout_gradients_match_finite_differences() {
        let mut cfg = tiny(21, 3);
        cfg.tie_embeddings = true;
        cfg.dropout_rate = 0.2;
        let params = scrambled(&cfg);
        let batch = mlm_batch(21, 3);
        let opts = BackwardOptions { dropout: Some(RngKey::new(9)), head_only: false };
        assert!(check_gradients(&params, Batch::Mlm(&batch), opts) < 1e-4);
    }

    #[test]
    fn classifier_gradients_match_finite_differences() {
        let params = scrambled(&tiny(21, 4));
        let batch: Vec<ClsExample> = mlm_batch(21, 4)
            .into_iter()
            .enumerate()
            .map(|(i, e)| ClsExample { ids: e.ids, padding_mask: e.padding_mask, label: i + 1 })
            .collect();
        assert!(check_gradients(&params, Batch::Classify(&batch), BackwardOptions::default()) < 1e-4);
        let (_, g) =
            backward(&params, Batch::Classify(&batch), BackwardOptions { dropout: None, head_only: true }).unwrap();
        let head = params.layout.cls_w.start;
        assert!(g.data[..head].iter().all(|&x| x == 0.0));
        assert!(g.data[head..].iter().any(|&x| x != 0.0));
    }

    #[test]
    fn attention_rows_are_distributions_and_ignore_padding() {
        let params = scrambled(&tiny(21, 5));
        for ex in mlm_batch(21, 5) {
            let t = forward(&params, &ex.ids, &ex.padding_mask).unwrap();
            for h in 0..2 {
                for q in 0..10 {
                    let row = t.attention_row(0, h, q);
                    let sum: f64 = row.iter().sum();
                    assert!((sum - 1.0).abs() < 1e-6);
                    for (j, &a) in row.iter().enumerate() {
                        if !ex.padding_mask[j] {
                            assert_eq!(a, 0.0);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn padding_content_is_invisible() {
        let params = ModelParams::<f32>::init(&ModelConfig::desk(4101)).unwrap();
        let mut ids = vec![PAD_ID; 12];
        ids[..6].copy_from_slice(&[CLS_ID, 100, 200, MASK_ID, 300, SEP_ID]);
        let mask: Vec<bool> = (0..12).map(|i| i < 6).collect();
        let a = forward(&params, &ids, &mask).unwrap();
        for (t, id) in ids.iter_mut().enumerate().skip(6) {
            *id = 7 + t as u32 * 31;
        }
        let b = forward(&params, &ids, &mask).unwrap();
        let d = 64;
        assert_eq!(a.hidden[..6 * d], b.hidden[..6 * d]);
        assert_eq!(a.logits[..6 * 4101], b.logits[..6 * 4101]);
    }

    #[test]
    fn parameters_feeding_only_padding_get_zero_gradient() {
        let params = scrambled(&tiny(21, 6));
        let batch = vec![mlm_batch(21, 6).pop().unwrap()]; // 7 real positions
        let (_, g) = backward(&params, Batch::Mlm(&batch), BackwardOptions::default()).unwrap();
        let d = 8;
        let pos = &g.data[params.layout.pos_emb.clone()];
        assert!(pos[7 * d..].iter().all(|&x| x == 0.0));
        assert!(pos[..7 * d].iter().any(|&x| x != 0.0));
    }

    #[test]
    fn permutation_equivariance_without_positions() {
        let mut params = scrambled(&tiny(21, 7));
        let r = params.layout.pos_emb.clone();
        params.data[r].fill(0.0);
        let ids = vec![CLS_ID, 9, 10, 11, 12, SEP_ID, PAD_ID];
        let mask = vec![true, true, true, true, true, true, false];
        let a = forward(&params, &ids, &mask).unwrap();
        let mut swapped = ids.clone();
        swapped.swap(1, 3);
        let b = forward(&params, &swapped, &mask).unwrap();
        for (x, y) in [(1usize, 3usize), (3, 1), (2, 2), (0, 0)] {
            for (u, v) in a.logits_row(x).iter().zip(b.logits_row(y)) {
                assert!((u - v).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn uniform_logits_give_log_vocab() {
        let mut params = ModelParams::<f64>::init(&ModelConfig::desk(4101)).unwrap();
        let w = params.layout.mlm_w.clone().unwrap();
        params.data[w].fill(0.0);
        let ids = vec![CLS_ID, MASK_ID, 50, SEP_ID];
        let trace = forward(&params, &ids, &[true; 4]).unwrap();
        let loss = mlm_loss(&trace, &[IGNORE_INDEX, 77, 1000, IGNORE_INDEX]);
        assert!((loss - 4101f64.ln()).abs() < 1e-12);
        assert!((loss - 8.318_985_6).abs() < 1e-6);
        assert_eq!(mlm_loss(&trace, &[IGNORE_INDEX; 4]), 0.0);
    }

    #[test]
    fn confident_correct_logits_give_near_zero_loss() {
        let cfg = tiny(9, 0);
        let mut params = ModelParams::<f64>::init(&cfg).unwrap();
        let b = params.layout.mlm_b.clone();
        params.data[b.start + 6] = 60.0;
        let trace = forward(&params, &[CLS_ID, MASK_ID, SEP_ID], &[true; 3]).unwrap();
        assert!(mlm_loss(&trace, &[IGNORE_INDEX, 6, IGNORE_INDEX]) < 1e-20);
    }

    #[test]
    fn loss_at_init_is_near_log_vocab() {
        let params = ModelParams::<f32>::init(&ModelConfig::desk(4101)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let batch: Vec<MlmExample> = (0..4)
            .map(|_| {
                let mut ids: Vec<u32> = (0..40).map(|_| rng.random_range(5..4101)).collect();
                ids[0] = CLS_ID;
                ids[39] = SEP_ID;
                let labels = (0..40).map(|t| if t % 5 == 2 { rng.random_range(5..4101) } else { IGNORE_INDEX }).collect();
                MlmExample { ids, padding_mask: vec![true; 40], labels }
            })
            .collect();
        let loss = batch_mlm_loss(&params, &batch).unwrap();
        let ln_v = 4101f64.ln();
        assert!((loss - ln_v).abs() / ln_v < 0.01, "{loss}");
        let (l2, _) = backward(&params, Batch::Mlm(&batch), BackwardOptions::default()).unwrap();
        assert!((l2 as f64 - loss).abs() < 1e-4);
    }

    #[test]
    fn input_validation() {
        let params = ModelParams::<f32>::init(&tiny(9, 0)).unwrap();
        let long = vec![5u32; 11];
        assert!(matches!(
            forward(&params, &long, &[true; 11]),
            Err(ModelError::LengthExceeded { len: 11, max_len: 10 })
        ));
        assert!(matches!(forward(&params, &[9], &[true]), Err(ModelError::InvalidToken { .. })));
        assert!(matches!(forward(&params, &[5, 5], &[true]), Err(ModelError::ShapeMismatch(_))));
        let bad = MlmExample { ids: vec![2, 5, 0], padding_mask: vec![true, true, false], labels: vec![-100, -100, 5] };
        assert!(backward(&params, Batch::Mlm(&[bad]), BackwardOptions::default()).is_err());
    }
}
