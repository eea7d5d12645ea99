//! Post-norm BERT-style encoder: embeddings → LayerNorm → N × (self
//! attention, add & norm, GELU feed-forward, add & norm), with a tied MLM
//! projection and a sentence-pair classifier on the first position.
//!
//! Sequences of a batch are packed row-wise into one `[tokens × hidden]`
//! matrix so the dense layers run as single matrix products; attention is
//! evaluated per sequence and head on slices of that matrix.

use ndarray::{s, Array1, Array2, Array3, Axis, Zip};
use rand::{Rng, RngCore};

use super::{MaskedBatch, ModelConfig, ModelParams, Objective, Scalar};
use crate::error::{Error, Result};

const NORM_EPS: f64 = 1e-12;

struct Layout {
    /// `(first packed row, length)` per sequence.
    spans: Vec<(usize, usize)>,
    total: usize,
}

impl Layout {
    /// With `trim`, trailing padding that carries no label is dropped; it
    /// cannot influence any other position because padded keys are masked.
    fn new(batch: &MaskedBatch, trim: bool) -> Self {
        let (b, s) = batch.input_ids.dim();
        let mut spans = Vec::with_capacity(b);
        let mut total = 0;
        for row in 0..b {
            let len = if trim {
                (0..s)
                    .rev()
                    .find(|&p| batch.attention_mask[[row, p]] || batch.mlm_labels[[row, p]] >= 0)
                    .map_or(1, |p| p + 1)
                    .min(s)
            } else {
                s
            };
            spans.push((total, len));
            total += len;
        }
        Self { spans, total }
    }
}

struct Dropout<'a> {
    rng: &'a mut dyn RngCore,
    rate: f64,
}

impl Dropout<'_> {
    fn mask<T: Scalar>(&mut self, dim: (usize, usize)) -> Array2<T> {
        let scale = T::of(1.0 / (1.0 - self.rate));
        Array2::from_shape_simple_fn(dim, || {
            if self.rng.random::<f64>() < self.rate {
                T::zero()
            } else {
                scale
            }
        })
    }
}

struct NormCache<T> {
    xhat: Array2<T>,
    inv_std: Array1<T>,
}

fn layer_norm<T: Scalar>(
    x: &Array2<T>,
    gain: &Array1<T>,
    bias: &Array1<T>,
) -> (Array2<T>, NormCache<T>) {
    let width = T::of(x.ncols() as f64);
    let eps = T::of(NORM_EPS);
    let mut xhat = x.clone();
    let mut inv_std = Array1::zeros(x.nrows());
    for (mut row, is) in xhat.rows_mut().into_iter().zip(inv_std.iter_mut()) {
        let mean = row.sum() / width;
        row.mapv_inplace(|v| v - mean);
        let var = row.iter().map(|&v| v * v).sum::<T>() / width;
        let scale = T::one() / (var + eps).sqrt();
        row.mapv_inplace(|v| v * scale);
        *is = scale;
    }
    let y = &xhat * gain + bias;
    (y, NormCache { xhat, inv_std })
}

fn layer_norm_backward<T: Scalar>(
    dy: &Array2<T>,
    cache: &NormCache<T>,
    gain: &Array1<T>,
    dgain: &mut Array1<T>,
    dbias: &mut Array1<T>,
) -> Array2<T> {
    *dgain += &(dy * &cache.xhat).sum_axis(Axis(0));
    *dbias += &dy.sum_axis(Axis(0));
    let dxhat = dy * gain;
    let width = T::of(dy.ncols() as f64);
    let mut dx = Array2::zeros(dy.dim());
    for (i, mut out) in dx.rows_mut().into_iter().enumerate() {
        let g = dxhat.row(i);
        let xh = cache.xhat.row(i);
        let mean_g = g.sum() / width;
        let mean_gx = g.iter().zip(xh.iter()).map(|(&a, &b)| a * b).sum::<T>() / width;
        let is = cache.inv_std[i];
        Zip::from(&mut out)
            .and(&g)
            .and(&xh)
            .for_each(|o, &gv, &xv| *o = (gv - mean_g - xv * mean_gx) * is);
    }
    dx
}

fn gelu<T: Scalar>(u: T) -> T {
    let c = T::of((2.0 / std::f64::consts::PI).sqrt());
    let k = T::of(0.044715);
    let half = T::of(0.5);
    half * u * (T::one() + (c * (u + k * u * u * u)).tanh())
}

fn gelu_grad<T: Scalar>(u: T) -> T {
    let c = T::of((2.0 / std::f64::consts::PI).sqrt());
    let k = T::of(0.044715);
    let half = T::of(0.5);
    let t = (c * (u + k * u * u * u)).tanh();
    half * (T::one() + t) + half * u * (T::one() - t * t) * c * (T::one() + T::of(3.0) * k * u * u)
}

fn linear<T: Scalar>(x: &Array2<T>, w: &Array2<T>, b: &Array1<T>) -> Array2<T> {
    x.dot(w) + b
}

struct LayerCache<T> {
    input: Array2<T>,
    q: Array2<T>,
    k: Array2<T>,
    v: Array2<T>,
    probs: Vec<Array2<T>>,
    ctx: Array2<T>,
    attn_drop: Option<Array2<T>>,
    norm1: NormCache<T>,
    x1: Array2<T>,
    pre_act: Array2<T>,
    act: Array2<T>,
    ffn_drop: Option<Array2<T>>,
    norm2: NormCache<T>,
}

struct Encoded<T> {
    layout: Layout,
    ids: Vec<u32>,
    positions: Vec<usize>,
    segments: Vec<u8>,
    emb_norm: NormCache<T>,
    emb_drop: Option<Array2<T>>,
    layers: Vec<LayerCache<T>>,
    output: Array2<T>,
}

/// Row-wise softmax over unmasked keys; masked keys get exactly zero.
fn masked_softmax<T: Scalar>(scores: &mut Array2<T>, key_mask: &[bool]) {
    for mut row in scores.rows_mut() {
        let max = row
            .iter()
            .zip(key_mask)
            .filter(|(_, &m)| m)
            .map(|(&v, _)| v)
            .fold(T::neg_infinity(), T::max);
        if max == T::neg_infinity() {
            row.fill(T::zero());
            continue;
        }
        let mut sum = T::zero();
        for (v, &m) in row.iter_mut().zip(key_mask) {
            *v = if m { (*v - max).exp() } else { T::zero() };
            sum += *v;
        }
        row.mapv_inplace(|v| v / sum);
    }
}

fn encode<T: Scalar>(
    params: &ModelParams<T>,
    config: &ModelConfig,
    batch: &MaskedBatch,
    trim: bool,
    mut dropout: Option<Dropout<'_>>,
) -> Encoded<T> {
    let layout = Layout::new(batch, trim);
    let n = layout.total;
    let h = config.hidden;
    let mut ids = Vec::with_capacity(n);
    let mut positions = Vec::with_capacity(n);
    let mut segments = Vec::with_capacity(n);
    let mut key_mask = Vec::with_capacity(n);
    for (row, &(_, len)) in layout.spans.iter().enumerate() {
        for p in 0..len {
            ids.push(batch.input_ids[[row, p]]);
            positions.push(p);
            segments.push(batch.segment_ids[[row, p]]);
            key_mask.push(batch.attention_mask[[row, p]]);
        }
    }

    let mut summed = Array2::<T>::zeros((n, h));
    for (r, mut out) in summed.rows_mut().into_iter().enumerate() {
        out.assign(&params.token_embeddings.row(ids[r] as usize));
        out += &params.position_embeddings.row(positions[r]);
        out += &params.segment_embeddings.row(segments[r] as usize);
    }
    let (mut x, emb_norm) = layer_norm(&summed, &params.embed_norm_gain, &params.embed_norm_bias);
    let emb_drop = dropout.as_mut().map(|d| d.mask::<T>((n, h)));
    if let Some(m) = &emb_drop {
        x *= m;
    }

    let heads = config.heads;
    let dh = config.head_dim();
    let scale = T::of(1.0 / (dh as f64).sqrt());
    let mut layers = Vec::with_capacity(params.layers.len());
    for lp in &params.layers {
        let q = linear(&x, &lp.query, &lp.query_bias);
        let k = linear(&x, &lp.key, &lp.key_bias);
        let v = linear(&x, &lp.value, &lp.value_bias);
        let mut ctx = Array2::<T>::zeros((n, h));
        let mut probs = Vec::with_capacity(layout.spans.len() * heads);
        for &(start, len) in &layout.spans {
            let mask = &key_mask[start..start + len];
            for head in 0..heads {
                let cols = head * dh..(head + 1) * dh;
                let qs = q.slice(s![start..start + len, cols.clone()]);
                let ks = k.slice(s![start..start + len, cols.clone()]);
                let vs = v.slice(s![start..start + len, cols.clone()]);
                let mut a = qs.dot(&ks.t()) * scale;
                masked_softmax(&mut a, mask);
                ctx.slice_mut(s![start..start + len, cols]).assign(&a.dot(&vs));
                probs.push(a);
            }
        }
        let mut attn = linear(&ctx, &lp.attn_out, &lp.attn_out_bias);
        let attn_drop = dropout.as_mut().map(|d| d.mask::<T>((n, h)));
        if let Some(m) = &attn_drop {
            attn *= m;
        }
        let (x1, norm1) = layer_norm(&(&x + &attn), &lp.attn_norm_gain, &lp.attn_norm_bias);

        let pre_act = linear(&x1, &lp.ffn_in, &lp.ffn_in_bias);
        let act = pre_act.mapv(gelu);
        let mut ffn = linear(&act, &lp.ffn_out, &lp.ffn_out_bias);
        let ffn_drop = dropout.as_mut().map(|d| d.mask::<T>((n, h)));
        if let Some(m) = &ffn_drop {
            ffn *= m;
        }
        let (x2, norm2) = layer_norm(&(&x1 + &ffn), &lp.ffn_norm_gain, &lp.ffn_norm_bias);

        layers.push(LayerCache {
            input: std::mem::replace(&mut x, x2),
            q,
            k,
            v,
            probs,
            ctx,
            attn_drop,
            norm1,
            x1,
            pre_act,
            act,
            ffn_drop,
            norm2,
        });
    }

    Encoded {
        layout,
        ids,
        positions,
        segments,
        emb_norm,
        emb_drop,
        layers,
        output: x,
    }
}

fn backward<T: Scalar>(
    params: &ModelParams<T>,
    config: &ModelConfig,
    enc: &Encoded<T>,
    mut dx: Array2<T>,
    grads: &mut ModelParams<T>,
) {
    let heads = config.heads;
    let dh = config.head_dim();
    let scale = T::of(1.0 / (dh as f64).sqrt());

    for (li, cache) in enc.layers.iter().enumerate().rev() {
        let lp = &params.layers[li];
        let g = &mut grads.layers[li];

        let dr2 = layer_norm_backward(
            &dx,
            &cache.norm2,
            &lp.ffn_norm_gain,
            &mut g.ffn_norm_gain,
            &mut g.ffn_norm_bias,
        );
        let mut dx1 = dr2.clone();
        let dffn = match &cache.ffn_drop {
            Some(m) => &dr2 * m,
            None => dr2,
        };
        g.ffn_out += &cache.act.t().dot(&dffn);
        g.ffn_out_bias += &dffn.sum_axis(Axis(0));
        let mut dpre = dffn.dot(&lp.ffn_out.t());
        Zip::from(&mut dpre)
            .and(&cache.pre_act)
            .for_each(|d, &u| *d *= gelu_grad(u));
        g.ffn_in += &cache.x1.t().dot(&dpre);
        g.ffn_in_bias += &dpre.sum_axis(Axis(0));
        dx1 += &dpre.dot(&lp.ffn_in.t());

        let dr1 = layer_norm_backward(
            &dx1,
            &cache.norm1,
            &lp.attn_norm_gain,
            &mut g.attn_norm_gain,
            &mut g.attn_norm_bias,
        );
        let mut dinput = dr1.clone();
        let dattn = match &cache.attn_drop {
            Some(m) => &dr1 * m,
            None => dr1,
        };
        g.attn_out += &cache.ctx.t().dot(&dattn);
        g.attn_out_bias += &dattn.sum_axis(Axis(0));
        let dctx = dattn.dot(&lp.attn_out.t());

        let mut dq = Array2::<T>::zeros(dctx.dim());
        let mut dk = Array2::<T>::zeros(dctx.dim());
        let mut dv = Array2::<T>::zeros(dctx.dim());
        let mut probs = cache.probs.iter();
        for &(start, len) in &enc.layout.spans {
            for head in 0..heads {
                let a = probs.next().expect("one probability matrix per head");
                let rows = start..start + len;
                let cols = head * dh..(head + 1) * dh;
                let qs = cache.q.slice(s![rows.clone(), cols.clone()]);
                let ks = cache.k.slice(s![rows.clone(), cols.clone()]);
                let vs = cache.v.slice(s![rows.clone(), cols.clone()]);
                let dc = dctx.slice(s![rows.clone(), cols.clone()]);
                let da = dc.dot(&vs.t());
                dv.slice_mut(s![rows.clone(), cols.clone()]).assign(&a.t().dot(&dc));
                let mut ds = &da * a;
                for (mut row, arow) in ds.rows_mut().into_iter().zip(a.rows()) {
                    let dot: T = row.sum();
                    Zip::from(&mut row).and(&arow).for_each(|d, &p| *d -= p * dot);
                }
                ds *= scale;
                dq.slice_mut(s![rows.clone(), cols.clone()]).assign(&ds.dot(&ks));
                dk.slice_mut(s![rows, cols]).assign(&ds.t().dot(&qs));
            }
        }
        for (d, w, gw, gb) in [
            (&dq, &lp.query, &mut g.query, &mut g.query_bias),
            (&dk, &lp.key, &mut g.key, &mut g.key_bias),
            (&dv, &lp.value, &mut g.value, &mut g.value_bias),
        ] {
            *gw += &cache.input.t().dot(d);
            *gb += &d.sum_axis(Axis(0));
            dinput += &d.dot(&w.t());
        }
        dx = dinput;
    }

    if let Some(m) = &enc.emb_drop {
        dx *= m;
    }
    let de = layer_norm_backward(
        &dx,
        &enc.emb_norm,
        &params.embed_norm_gain,
        &mut grads.embed_norm_gain,
        &mut grads.embed_norm_bias,
    );
    for (r, row) in de.rows().into_iter().enumerate() {
        let mut t = grads.token_embeddings.row_mut(enc.ids[r] as usize);
        t += &row;
        let mut p = grads.position_embeddings.row_mut(enc.positions[r]);
        p += &row;
        let mut sg = grads.segment_embeddings.row_mut(enc.segments[r] as usize);
        sg += &row;
    }
}

fn masked_rows(enc_layout: &Layout, batch: &MaskedBatch) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for (row, &(start, len)) in enc_layout.spans.iter().enumerate() {
        for p in 0..len {
            let label = batch.mlm_labels[[row, p]];
            if label >= 0 {
                out.push((start + p, label as usize));
            }
        }
    }
    out
}

fn gather_rows<T: Scalar>(x: &Array2<T>, rows: impl Iterator<Item = usize>) -> Array2<T> {
    let rows: Vec<usize> = rows.collect();
    x.select(Axis(0), &rows)
}

/// Numerically stable log-softmax of each row.
fn log_softmax_rows<T: Scalar>(logits: &Array2<T>) -> Array2<T> {
    let mut out = logits.clone();
    for mut row in out.rows_mut() {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let lse = row.iter().map(|&v| (v - max).exp()).sum::<T>().ln() + max;
        row.mapv_inplace(|v| v - lse);
    }
    out
}

fn check_objective(batch: &MaskedBatch, objective: Objective) -> Result<()> {
    if objective.has_pair_task() && batch.pair_labels.is_none() {
        return Err(Error::MissingPairLabels(objective.name()));
    }
    Ok(())
}

fn loss_impl<T: Scalar>(
    params: &ModelParams<T>,
    config: &ModelConfig,
    batch: &MaskedBatch,
    objective: Objective,
    dropout: Option<Dropout<'_>>,
) -> Result<(T, ModelParams<T>)> {
    batch.validate(config)?;
    check_objective(batch, objective)?;
    let enc = encode(params, config, batch, true, dropout);
    let mut grads = ModelParams::<T>::zeros(config);
    let mut dx = Array2::<T>::zeros(enc.output.dim());
    let mut loss = T::zero();

    let masked = masked_rows(&enc.layout, batch);
    if !masked.is_empty() {
        let m = T::of(masked.len() as f64);
        let hm = gather_rows(&enc.output, masked.iter().map(|&(r, _)| r));
        let logits = hm.dot(&params.token_embeddings.t()) + &params.mlm_bias;
        let logp = log_softmax_rows(&logits);
        let mut dlogits = logp.mapv(|v| v.exp());
        for (i, &(_, gold)) in masked.iter().enumerate() {
            loss -= logp[[i, gold]] / m;
            dlogits[[i, gold]] -= T::one();
        }
        dlogits /= m;
        grads.token_embeddings += &dlogits.t().dot(&hm);
        grads.mlm_bias += &dlogits.sum_axis(Axis(0));
        let dhm = dlogits.dot(&params.token_embeddings);
        for (i, &(r, _)) in masked.iter().enumerate() {
            let mut row = dx.row_mut(r);
            row += &dhm.row(i);
        }
    }

    if objective.has_pair_task() {
        let labels = batch.pair_labels.as_ref().expect("checked above");
        let b = T::of(labels.len() as f64);
        let hc = gather_rows(&enc.output, enc.layout.spans.iter().map(|&(s, _)| s));
        let logits = hc.dot(&params.nsp_weight) + &params.nsp_bias;
        let logp = log_softmax_rows(&logits);
        let mut dlogits = logp.mapv(|v| v.exp());
        for (i, &label) in labels.iter().enumerate() {
            loss -= logp[[i, label as usize]] / b;
            dlogits[[i, label as usize]] -= T::one();
        }
        dlogits /= b;
        grads.nsp_weight += &hc.t().dot(&dlogits);
        grads.nsp_bias += &dlogits.sum_axis(Axis(0));
        let dhc = dlogits.dot(&params.nsp_weight.t());
        for (i, &(start, _)) in enc.layout.spans.iter().enumerate() {
            let mut row = dx.row_mut(start);
            row += &dhc.row(i);
        }
    }

    backward(params, config, &enc, dx, &mut grads);
    Ok((loss, grads))
}

/// Mean masked-token cross-entropy (nats), plus the mean pair
/// cross-entropy when the objective has a pair task, and exact gradients.
/// Runs in evaluation mode (no dropout), so it is a pure function.
pub fn loss_and_grads<T: Scalar>(
    params: &ModelParams<T>,
    config: &ModelConfig,
    batch: &MaskedBatch,
    objective: Objective,
) -> Result<(T, ModelParams<T>)> {
    loss_impl(params, config, batch, objective, None)
}

/// Training-mode variant of [`loss_and_grads`] with dropout drawn from `rng`.
pub fn loss_and_grads_with_dropout<T: Scalar, R: RngCore>(
    params: &ModelParams<T>,
    config: &ModelConfig,
    batch: &MaskedBatch,
    objective: Objective,
    rng: &mut R,
) -> Result<(T, ModelParams<T>)> {
    let dropout = (config.dropout_rate > 0.0).then_some(Dropout {
        rng: rng as &mut dyn RngCore,
        rate: config.dropout_rate,
    });
    loss_impl(params, config, batch, objective, dropout)
}

#[derive(Debug, Clone)]
pub struct ForwardOutput<T> {
    /// `[batch × seq × vocab]`
    pub mlm_logits: Array3<T>,
    /// `[batch × 2]`, from the first (class-marker) position.
    pub pair_logits: Array2<T>,
}

/// Evaluation-mode forward pass over every position of the batch.
pub fn forward<T: Scalar>(
    params: &ModelParams<T>,
    config: &ModelConfig,
    batch: &MaskedBatch,
) -> Result<ForwardOutput<T>> {
    batch.validate(config)?;
    let (b, s) = batch.input_ids.dim();
    let enc = encode(params, config, batch, false, None);
    let logits = enc.output.dot(&params.token_embeddings.t()) + &params.mlm_bias;
    let mlm_logits = logits
        .into_shape_with_order((b, s, config.vocab_size))
        .expect("packed rows are batch-major");
    let hc = gather_rows(&enc.output, enc.layout.spans.iter().map(|&(st, _)| st));
    let pair_logits = hc.dot(&params.nsp_weight) + &params.nsp_bias;
    Ok(ForwardOutput {
        mlm_logits,
        pair_logits,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaskedPrediction {
    pub gold: u32,
    pub predicted: u32,
    /// Natural-log probability assigned to the gold token.
    pub gold_log_prob: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairPrediction {
    pub gold: u8,
    pub predicted: u8,
    pub gold_log_prob: f64,
}

#[derive(Debug, Clone, Default)]
pub struct BatchScores {
    pub masked: Vec<MaskedPrediction>,
    pub pairs: Vec<PairPrediction>,
}

/// Evaluation-mode predictions at the labeled positions (and for the pair
/// task when the batch carries pair labels). Ties in the argmax resolve to
/// the lowest id.
pub fn score_batch<T: Scalar>(
    params: &ModelParams<T>,
    config: &ModelConfig,
    batch: &MaskedBatch,
) -> Result<BatchScores> {
    batch.validate(config)?;
    let enc = encode(params, config, batch, true, None);
    let argmax = |row: ndarray::ArrayView1<T>| {
        let mut best = 0;
        for (i, &v) in row.iter().enumerate() {
            if v > row[best] {
                best = i;
            }
        }
        best
    };
    let mut scores = BatchScores::default();
    let masked = masked_rows(&enc.layout, batch);
    if !masked.is_empty() {
        let hm = gather_rows(&enc.output, masked.iter().map(|&(r, _)| r));
        let logits = hm.dot(&params.token_embeddings.t()) + &params.mlm_bias;
        let logp = log_softmax_rows(&logits);
        for (i, &(_, gold)) in masked.iter().enumerate() {
            scores.masked.push(MaskedPrediction {
                gold: gold as u32,
                predicted: argmax(logits.row(i)) as u32,
                gold_log_prob: logp[[i, gold]].as_f64(),
            });
        }
    }
    if let Some(labels) = &batch.pair_labels {
        let hc = gather_rows(&enc.output, enc.layout.spans.iter().map(|&(s, _)| s));
        let logits = hc.dot(&params.nsp_weight) + &params.nsp_bias;
        let logp = log_softmax_rows(&logits);
        for (i, &gold) in labels.iter().enumerate() {
            scores.pairs.push(PairPrediction {
                gold,
                predicted: argmax(logits.row(i)) as u8,
                gold_log_prob: logp[[i, gold as usize]].as_f64(),
            });
        }
    }
    Ok(scores)
}
