//! The two attention blocks and their backward passes.
//!
//! Spatial block (one per layer):
//!
//! ```text
//! ẑ = W-MSA(LN(z)) + z
//! z' = MLP(LN(ẑ)) + ẑ
//! ```
//!
//! Cross-frame block: split `z` into three channel groups (short, reference,
//! long), add the matching shallow features, let the reference group query
//! the other two over the channel axis, concatenate
//! `(ref←short, reference group, ref←long)` and run a fused FFN.

use super::tokens::{add_cols, concat_cols, gather, scatter_add, take_cols, WindowLayout};
use super::{Gradients, ModelConfig, ModelWeights};
use crate::error::Result;
use crate::tensor::{
    layernorm, layernorm_backward, linear, linear_backward, matmul, matmul_nt, matmul_tn, mlp,
    mlp_backward, softmax, softmax_backward, LayerNormCache, MlpCache, Scalar, Tensor,
    LAYERNORM_EPS,
};

fn ln_eps<T: Scalar>() -> T {
    T::of(LAYERNORM_EPS)
}

/// Multi-head self-attention restricted to windows. `qkv` is `[Np, 3C]`
/// laid out as `[q | k | v]`; returns `[Np, C]` and the attention maps,
/// one per (window, head).
pub fn window_attention<T: Scalar>(
    qkv: &Tensor<T>,
    layout: &WindowLayout,
    heads: usize,
) -> Result<(Tensor<T>, Vec<Tensor<T>>)> {
    let c = qkv.dim(1) / 3;
    let d = c / heads;
    let scale = T::one() / T::of(d as f64).sqrt();
    let mut out = Tensor::zeros([qkv.dim(0), c]);
    let mut probs = Vec::with_capacity(layout.windows.len() * heads);
    for idx in &layout.windows {
        for h in 0..heads {
            let q = gather(qkv, idx, h * d, d);
            let k = gather(qkv, idx, c + h * d, d);
            let v = gather(qkv, idx, 2 * c + h * d, d);
            let a = softmax(&matmul_nt(&q, &k)?.scale(scale), 1)?;
            let o = matmul(&a, &v)?;
            scatter_add(&mut out, idx, h * d, &o);
            probs.push(a);
        }
    }
    Ok((out, probs))
}

fn window_attention_backward<T: Scalar>(
    qkv: &Tensor<T>,
    probs: &[Tensor<T>],
    layout: &WindowLayout,
    heads: usize,
    d_out: &Tensor<T>,
) -> Result<Tensor<T>> {
    let c = qkv.dim(1) / 3;
    let d = c / heads;
    let scale = T::one() / T::of(d as f64).sqrt();
    let mut dqkv = Tensor::zeros(qkv.shape());
    let mut probs = probs.iter();
    for idx in &layout.windows {
        for h in 0..heads {
            let a = probs.next().expect("one map per window and head");
            let q = gather(qkv, idx, h * d, d);
            let k = gather(qkv, idx, c + h * d, d);
            let v = gather(qkv, idx, 2 * c + h * d, d);
            let d_o = gather(d_out, idx, h * d, d);
            let da = matmul_nt(&d_o, &v)?;
            let dv = matmul_tn(a, &d_o)?;
            let ds = softmax_backward(a, &da, 1)?.scale(scale);
            let dq = matmul(&ds, &k)?;
            let dk = matmul_tn(&ds, &q)?;
            scatter_add(&mut dqkv, idx, h * d, &dq);
            scatter_add(&mut dqkv, idx, c + h * d, &dk);
            scatter_add(&mut dqkv, idx, 2 * c + h * d, &dv);
        }
    }
    Ok(dqkv)
}

/// Channel-axis attention: per head, scores are `qᵀk` over the `N` tokens
/// (a `d×d` matrix), scaled by `1/√d`, softmaxed over keys, and applied to
/// `v`. All inputs `[N, G]`.
pub fn channel_attention<T: Scalar>(
    q: &Tensor<T>,
    k: &Tensor<T>,
    v: &Tensor<T>,
    heads: usize,
) -> Result<(Tensor<T>, Vec<Tensor<T>>)> {
    let g = q.dim(1);
    let d = g / heads;
    let scale = T::one() / T::of(d as f64).sqrt();
    let mut out = Tensor::zeros(q.shape());
    let mut probs = Vec::with_capacity(heads);
    for h in 0..heads {
        let (qh, kh, vh) = (take_cols(q, h * d, d), take_cols(k, h * d, d), take_cols(v, h * d, d));
        let a = softmax(&matmul_tn(&qh, &kh)?.scale(scale), 1)?;
        add_cols(&mut out, h * d, &matmul_nt(&vh, &a)?);
        probs.push(a);
    }
    Ok((out, probs))
}

/// Returns `(dq, dk, dv)`.
fn channel_attention_backward<T: Scalar>(
    q: &Tensor<T>,
    k: &Tensor<T>,
    v: &Tensor<T>,
    probs: &[Tensor<T>],
    d_out: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let heads = probs.len();
    let g = q.dim(1);
    let d = g / heads;
    let scale = T::one() / T::of(d as f64).sqrt();
    let (mut dq, mut dk, mut dv) = (
        Tensor::zeros(q.shape()),
        Tensor::zeros(q.shape()),
        Tensor::zeros(q.shape()),
    );
    for (h, a) in probs.iter().enumerate() {
        let (qh, kh, vh) = (take_cols(q, h * d, d), take_cols(k, h * d, d), take_cols(v, h * d, d));
        let doh = take_cols(d_out, h * d, d);
        let da = matmul_tn(&doh, &vh)?;
        add_cols(&mut dv, h * d, &matmul(&doh, a)?);
        let ds = softmax_backward(a, &da, 1)?.scale(scale);
        add_cols(&mut dq, h * d, &matmul_nt(&kh, &ds)?);
        add_cols(&mut dk, h * d, &matmul(&qh, &ds)?);
    }
    Ok((dq, dk, dv))
}

/// Parameter lookup under a common prefix.
struct Scope<'a, T: Scalar> {
    w: &'a ModelWeights<T>,
    prefix: String,
}

impl<'a, T: Scalar> Scope<'a, T> {
    fn new(w: &'a ModelWeights<T>, prefix: String) -> Self {
        Self { w, prefix }
    }
    fn p(&self, name: &str) -> Result<&'a Tensor<T>> {
        self.w.get(&format!("{}.{name}", self.prefix))
    }
    fn name(&self, name: &str) -> String {
        format!("{}.{name}", self.prefix)
    }
}

/// Saved activations of one spatial block.
pub struct SpatialCache<T: Scalar> {
    layout: WindowLayout,
    ln1: LayerNormCache<T>,
    padded: Tensor<T>,
    qkv: Tensor<T>,
    probs: Vec<Tensor<T>>,
    attn: Tensor<T>,
    ln2: LayerNormCache<T>,
    mlp: MlpCache<T>,
}

/// Spatial attention block of layer `layer` over `[H·W, C]` tokens.
pub fn spatial_forward<T: Scalar>(
    cfg: &ModelConfig,
    w: &ModelWeights<T>,
    layer: usize,
    z: &Tensor<T>,
    height: usize,
    width: usize,
) -> Result<(Tensor<T>, SpatialCache<T>)> {
    let s = Scope::new(w, format!("layers.{layer}.gsab"));
    let layout = WindowLayout::new(height, width, cfg.window_size)?;
    let (x1, ln1) = layernorm(z, s.p("norm1.gamma")?, s.p("norm1.beta")?, ln_eps())?;
    let padded = layout.pad(&x1);
    let qkv = linear(&padded, s.p("qkv.weight")?, s.p("qkv.bias")?)?;
    let (attn_padded, probs) = window_attention(&qkv, &layout, cfg.num_heads)?;
    let attn = layout.crop(&attn_padded);
    let zhat = linear(&attn, s.p("proj.weight")?, s.p("proj.bias")?)?.add(z)?;
    let (x2, ln2) = layernorm(&zhat, s.p("norm2.gamma")?, s.p("norm2.beta")?, ln_eps())?;
    let (m, mlp_cache) = mlp(&x2, s.p("fc1.weight")?, s.p("fc1.bias")?, s.p("fc2.weight")?, s.p("fc2.bias")?)?;
    let out = m.add(&zhat)?;
    Ok((
        out,
        SpatialCache {
            layout,
            ln1,
            padded,
            qkv,
            probs,
            attn,
            ln2,
            mlp: mlp_cache,
        },
    ))
}

/// Accumulates parameter gradients into `grads`, returns the input gradient.
pub fn spatial_backward<T: Scalar>(
    cfg: &ModelConfig,
    w: &ModelWeights<T>,
    layer: usize,
    cache: &SpatialCache<T>,
    d_out: &Tensor<T>,
    grads: &mut Gradients<T>,
) -> Result<Tensor<T>> {
    let s = Scope::new(w, format!("layers.{layer}.gsab"));
    let g = mlp_backward(&cache.mlp, s.p("fc1.weight")?, s.p("fc2.weight")?, d_out)?;
    grads.accumulate(&s.name("fc1.weight"), &g.dw1)?;
    grads.accumulate(&s.name("fc1.bias"), &g.db1)?;
    grads.accumulate(&s.name("fc2.weight"), &g.dw2)?;
    grads.accumulate(&s.name("fc2.bias"), &g.db2)?;
    let (dx2, dg2, db2) = layernorm_backward(&cache.ln2, s.p("norm2.gamma")?, &g.dx)?;
    grads.accumulate(&s.name("norm2.gamma"), &dg2)?;
    grads.accumulate(&s.name("norm2.beta"), &db2)?;
    let dzhat = d_out.add(&dx2)?;

    let (dattn, dwp, dbp) = linear_backward(&cache.attn, s.p("proj.weight")?, &dzhat)?;
    grads.accumulate(&s.name("proj.weight"), &dwp)?;
    grads.accumulate(&s.name("proj.bias"), &dbp)?;
    let dattn_padded = cache.layout.crop_backward(&dattn);
    let dqkv = window_attention_backward(
        &cache.qkv,
        &cache.probs,
        &cache.layout,
        cfg.num_heads,
        &dattn_padded,
    )?;
    let (dpadded, dwq, dbq) = linear_backward(&cache.padded, s.p("qkv.weight")?, &dqkv)?;
    grads.accumulate(&s.name("qkv.weight"), &dwq)?;
    grads.accumulate(&s.name("qkv.bias"), &dbq)?;
    let dx1 = cache.layout.pad_backward(&dpadded);
    let (dz, dg1, db1) = layernorm_backward(&cache.ln1, s.p("norm1.gamma")?, &dx1)?;
    grads.accumulate(&s.name("norm1.gamma"), &dg1)?;
    grads.accumulate(&s.name("norm1.beta"), &db1)?;
    dzhat.add(&dz)
}

struct CrossCache<T: Scalar> {
    q: Tensor<T>,
    k: Tensor<T>,
    v: Tensor<T>,
    probs: Vec<Tensor<T>>,
    attn: Tensor<T>,
}

/// Saved activations of one cross-frame block.
pub struct CrossFrameCache<T: Scalar> {
    linked: [Tensor<T>; 3],
    pairs: [CrossCache<T>; 2],
    merged: Tensor<T>,
    ln: LayerNormCache<T>,
    mlp: MlpCache<T>,
}

impl<T: Scalar> CrossFrameCache<T> {
    /// `(z'12, z'22, z'32)` before the fuse projection.
    pub fn merged(&self) -> &Tensor<T> {
        &self.merged
    }
}

/// Reference-queries-other attention for one pair (`cross1` or `cross3`).
fn cross_pair<T: Scalar>(
    s: &Scope<'_, T>,
    pair: &str,
    reference: &Tensor<T>,
    other: &Tensor<T>,
    heads: usize,
) -> Result<(Tensor<T>, CrossCache<T>)> {
    let q = linear(reference, s.p(&format!("{pair}.q.weight"))?, s.p(&format!("{pair}.q.bias"))?)?;
    let k = linear(other, s.p(&format!("{pair}.k.weight"))?, s.p(&format!("{pair}.k.bias"))?)?;
    let v = linear(other, s.p(&format!("{pair}.v.weight"))?, s.p(&format!("{pair}.v.bias"))?)?;
    let (attn, probs) = channel_attention(&q, &k, &v, heads)?;
    let out = linear(
        &attn,
        s.p(&format!("{pair}.proj.weight"))?,
        s.p(&format!("{pair}.proj.bias"))?,
    )?;
    Ok((out, CrossCache { q, k, v, probs, attn }))
}

/// Returns `(d_reference, d_other)`.
fn cross_pair_backward<T: Scalar>(
    s: &Scope<'_, T>,
    pair: &str,
    reference: &Tensor<T>,
    other: &Tensor<T>,
    cache: &CrossCache<T>,
    d_out: &Tensor<T>,
    grads: &mut Gradients<T>,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let name = |part: &str, kind: &str| s.name(&format!("{pair}.{part}.{kind}"));
    let (dattn, dw, db) = linear_backward(&cache.attn, s.p(&format!("{pair}.proj.weight"))?, d_out)?;
    grads.accumulate(&name("proj", "weight"), &dw)?;
    grads.accumulate(&name("proj", "bias"), &db)?;
    let (dq, dk, dv) = channel_attention_backward(&cache.q, &cache.k, &cache.v, &cache.probs, &dattn)?;
    let (dref, dw, db) = linear_backward(reference, s.p(&format!("{pair}.q.weight"))?, &dq)?;
    grads.accumulate(&name("q", "weight"), &dw)?;
    grads.accumulate(&name("q", "bias"), &db)?;
    let (mut dother, dw, db) = linear_backward(other, s.p(&format!("{pair}.k.weight"))?, &dk)?;
    grads.accumulate(&name("k", "weight"), &dw)?;
    grads.accumulate(&name("k", "bias"), &db)?;
    let (dv_in, dw, db) = linear_backward(other, s.p(&format!("{pair}.v.weight"))?, &dv)?;
    grads.accumulate(&name("v", "weight"), &dw)?;
    grads.accumulate(&name("v", "bias"), &db)?;
    dother.accumulate(&dv_in)?;
    Ok((dref, dother))
}

/// Cross-frame block of layer `layer`. `z` is `[N, C]`, `shallow` holds the
/// three `[N, C/3]` shallow features in exposure order.
pub fn cross_frame_forward<T: Scalar>(
    cfg: &ModelConfig,
    w: &ModelWeights<T>,
    layer: usize,
    z: &Tensor<T>,
    shallow: [&Tensor<T>; 3],
) -> Result<(Tensor<T>, CrossFrameCache<T>)> {
    let s = Scope::new(w, format!("layers.{layer}.scab"));
    let g = cfg.group_dim();
    let groups: [Tensor<T>; 3] = std::array::from_fn(|i| take_cols(z, i * g, g));
    let linked: [Tensor<T>; 3] = [
        groups[0].add(shallow[0])?,
        groups[1].add(shallow[1])?,
        groups[2].add(shallow[2])?,
    ];
    let (from_short, c1) = cross_pair(&s, "cross1", &linked[1], &linked[0], cfg.cross_heads)?;
    let (from_long, c3) = cross_pair(&s, "cross3", &linked[1], &linked[2], cfg.cross_heads)?;
    let merged = concat_cols(&[&from_short, &groups[1], &from_long])?;
    let fused = linear(&merged, s.p("fuse.weight")?, s.p("fuse.bias")?)?;
    let (x, ln) = layernorm(&fused, s.p("norm.gamma")?, s.p("norm.beta")?, ln_eps())?;
    let (m, mlp_cache) = mlp(&x, s.p("fc1.weight")?, s.p("fc1.bias")?, s.p("fc2.weight")?, s.p("fc2.bias")?)?;
    let out = m.add(&fused)?;
    Ok((
        out,
        CrossFrameCache {
            linked,
            pairs: [c1, c3],
            merged,
            ln,
            mlp: mlp_cache,
        },
    ))
}

/// Returns `(dz, [d_shallow; 3])`.
pub fn cross_frame_backward<T: Scalar>(
    cfg: &ModelConfig,
    w: &ModelWeights<T>,
    layer: usize,
    cache: &CrossFrameCache<T>,
    d_out: &Tensor<T>,
    grads: &mut Gradients<T>,
) -> Result<(Tensor<T>, [Tensor<T>; 3])> {
    let s = Scope::new(w, format!("layers.{layer}.scab"));
    let gd = cfg.group_dim();
    let m = mlp_backward(&cache.mlp, s.p("fc1.weight")?, s.p("fc2.weight")?, d_out)?;
    grads.accumulate(&s.name("fc1.weight"), &m.dw1)?;
    grads.accumulate(&s.name("fc1.bias"), &m.db1)?;
    grads.accumulate(&s.name("fc2.weight"), &m.dw2)?;
    grads.accumulate(&s.name("fc2.bias"), &m.db2)?;
    let (dx, dgam, dbet) = layernorm_backward(&cache.ln, s.p("norm.gamma")?, &m.dx)?;
    grads.accumulate(&s.name("norm.gamma"), &dgam)?;
    grads.accumulate(&s.name("norm.beta"), &dbet)?;
    let dfused = d_out.add(&dx)?;
    let (dmerged, dw, db) = linear_backward(&cache.merged, s.p("fuse.weight")?, &dfused)?;
    grads.accumulate(&s.name("fuse.weight"), &dw)?;
    grads.accumulate(&s.name("fuse.bias"), &db)?;

    let d_from_short = take_cols(&dmerged, 0, gd);
    let d_ref_group = take_cols(&dmerged, gd, gd);
    let d_from_long = take_cols(&dmerged, 2 * gd, gd);

    let (dref1, dshort) = cross_pair_backward(
        &s,
        "cross1",
        &cache.linked[1],
        &cache.linked[0],
        &cache.pairs[0],
        &d_from_short,
        grads,
    )?;
    let (dref3, dlong) = cross_pair_backward(
        &s,
        "cross3",
        &cache.linked[1],
        &cache.linked[2],
        &cache.pairs[1],
        &d_from_long,
        grads,
    )?;
    let dlinked_ref = dref1.add(&dref3)?;

    // linked_i = group_i + shallow_i, so both receive d_linked_i; the
    // reference group additionally feeds the merge directly.
    let mut dz = Tensor::zeros([d_out.dim(0), cfg.embed_dim]);
    add_cols(&mut dz, 0, &dshort);
    add_cols(&mut dz, gd, &dlinked_ref);
    add_cols(&mut dz, gd, &d_ref_group);
    add_cols(&mut dz, 2 * gd, &dlong);
    Ok((dz, [dshort, dlinked_ref, dlong]))
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Dense softmax attention written out with explicit loops.
    fn dense_attention(q: &[Vec<f64>], k: &[Vec<f64>], v: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let d = q[0].len() as f64;
        q.iter()
            .map(|qi| {
                let s: Vec<f64> = k
                    .iter()
                    .map(|kj| qi.iter().zip(kj).map(|(a, b)| a * b).sum::<f64>() / d.sqrt())
                    .collect();
                let m = s.iter().cloned().fold(f64::MIN, f64::max);
                let e: Vec<f64> = s.iter().map(|x| (x - m).exp()).collect();
                let z: f64 = e.iter().sum();
                (0..v[0].len())
                    .map(|c| e.iter().zip(v).map(|(w, vj)| w / z * vj[c]).sum())
                    .collect()
            })
            .collect()
    }

    #[test]
    fn single_window_single_head_matches_dense_attention() {
        // 2×2 map, window 2 ⇒ one window of 4 tokens, C = 3
        let layout = WindowLayout::new(2, 2, 2).unwrap();
        let qkv = Tensor::<f64>::from_fn([4, 9], |i| ((i * 37 % 11) as f64 - 5.0) * 0.3);
        let (out, _) = window_attention(&qkv, &layout, 1).unwrap();
        let rows: Vec<Vec<f64>> = qkv.data().chunks(9).map(|r| r.to_vec()).collect();
        let part = |o: usize| rows.iter().map(|r| r[o..o + 3].to_vec()).collect::<Vec<_>>();
        let expect = dense_attention(&part(0), &part(3), &part(6));
        for (t, row) in expect.iter().enumerate() {
            for (c, e) in row.iter().enumerate() {
                assert!((out.data()[t * 3 + c] - e).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn channel_attention_matches_hand_oracle() {
        // G = 2 channels, N = 4 tokens
        let q = Tensor::<f64>::from_f64([4, 2], &[0.1, 0.7, -0.3, 0.2, 0.5, -0.4, 0.9, 0.0]).unwrap();
        let k = Tensor::<f64>::from_f64([4, 2], &[0.3, -0.2, 0.8, 0.1, -0.5, 0.6, 0.2, 0.4]).unwrap();
        let v = Tensor::<f64>::from_f64([4, 2], &[1.0, 2.0, -1.0, 0.5, 0.25, -0.75, 3.0, 1.5]).unwrap();
        let (out, probs) = channel_attention(&q, &k, &v, 1).unwrap();
        let col = |t: &Tensor<f64>, c: usize| (0..4).map(|n| t.data()[n * 2 + c]).collect::<Vec<_>>();
        let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
        for i in 0..2 {
            let s: Vec<f64> = (0..2)
                .map(|j| dot(&col(&q, i), &col(&k, j)) / 2f64.sqrt())
                .collect();
            let e: Vec<f64> = s.iter().map(|x| x.exp()).collect();
            let a: Vec<f64> = e.iter().map(|x| x / (e[0] + e[1])).collect();
            for j in 0..2 {
                assert!((probs[0].data()[i * 2 + j] - a[j]).abs() < 1e-12);
            }
            for n in 0..4 {
                let expect = a[0] * v.data()[n * 2] + a[1] * v.data()[n * 2 + 1];
                assert!((out.data()[n * 2 + i] - expect).abs() < 1e-12);
            }
        }
    }
}
