use super::{counter, Scalar, Tensor};
use crate::error::{Error, Result};

fn dims2<T: Scalar>(t: &Tensor<T>, what: &str) -> Result<(usize, usize)> {
    t.expect_rank(2, what)?;
    Ok((t.dim(0), t.dim(1)))
}

/// `c[m×n] = a[m×k] · b[k×n]`.
pub fn matmul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (m, k) = dims2(a, "matmul lhs")?;
    let (k2, n) = dims2(b, "matmul rhs")?;
    if k != k2 {
        return Err(Error::Dimension(format!(
            "matmul inner dimensions differ: {:?} × {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let mut c = vec![T::zero(); m * n];
    gemm_nn(a.data(), b.data(), &mut c, m, k, n);
    counter::add((m * k * n) as u64);
    Tensor::new([m, n], c)
}

/// `c[m×n] = a[m×k] · b[n×k]ᵀ`.
pub fn matmul_nt<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (m, k) = dims2(a, "matmul lhs")?;
    let (n, k2) = dims2(b, "matmul rhs")?;
    if k != k2 {
        return Err(Error::Dimension(format!(
            "matmul (a·bᵀ) inner dimensions differ: {:?} × {:?}ᵀ",
            a.shape(),
            b.shape()
        )));
    }
    let (ad, bd) = (a.data(), b.data());
    let mut c = vec![T::zero(); m * n];
    for i in 0..m {
        let ar = &ad[i * k..(i + 1) * k];
        for j in 0..n {
            let br = &bd[j * k..(j + 1) * k];
            let mut acc = T::zero();
            for t in 0..k {
                acc += ar[t] * br[t];
            }
            c[i * n + j] = acc;
        }
    }
    counter::add((m * k * n) as u64);
    Tensor::new([m, n], c)
}

/// `c[m×n] = a[k×m]ᵀ · b[k×n]`.
pub fn matmul_tn<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (k, m) = dims2(a, "matmul lhs")?;
    let (k2, n) = dims2(b, "matmul rhs")?;
    if k != k2 {
        return Err(Error::Dimension(format!(
            "matmul (aᵀ·b) inner dimensions differ: {:?}ᵀ × {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let (ad, bd) = (a.data(), b.data());
    let mut c = vec![T::zero(); m * n];
    for t in 0..k {
        let br = &bd[t * n..(t + 1) * n];
        for i in 0..m {
            let av = ad[t * m + i];
            let cr = &mut c[i * n..(i + 1) * n];
            for j in 0..n {
                cr[j] += av * br[j];
            }
        }
    }
    counter::add((m * k * n) as u64);
    Tensor::new([m, n], c)
}

fn gemm_nn<T: Scalar>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let cr = &mut c[i * n..(i + 1) * n];
        for t in 0..k {
            let av = a[i * k + t];
            let br = &b[t * n..(t + 1) * n];
            for j in 0..n {
                cr[j] += av * br[j];
            }
        }
    }
}

/// Gradients of [`matmul`] with respect to both operands.
pub fn matmul_backward<T: Scalar>(
    a: &Tensor<T>,
    b: &Tensor<T>,
    upstream: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let da = matmul_nt(upstream, b)?;
    let db = matmul_tn(a, upstream)?;
    da.expect_same_shape(a)?;
    Ok((da, db))
}

pub fn transpose<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let (m, n) = dims2(x, "transpose input")?;
    let d = x.data();
    let mut out = vec![T::zero(); m * n];
    for i in 0..m {
        for j in 0..n {
            out[j * m + i] = d[i * n + j];
        }
    }
    Tensor::new([n, m], out)
}

/// (outer, axis length, inner) strides for reducing over `axis`.
fn axis_split(shape: &[usize], axis: usize) -> Result<(usize, usize, usize)> {
    if axis >= shape.len() {
        return Err(Error::Dimension(format!(
            "axis {axis} out of range for shape {shape:?}"
        )));
    }
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    Ok((outer, shape[axis], inner))
}

/// Numerically stable softmax along `axis` (max-subtracted).
pub fn softmax<T: Scalar>(x: &Tensor<T>, axis: usize) -> Result<Tensor<T>> {
    let (outer, len, inner) = axis_split(x.shape(), axis)?;
    let src = x.data();
    let mut out = vec![T::zero(); src.len()];
    for o in 0..outer {
        for i in 0..inner {
            let at = |t: usize| o * len * inner + t * inner + i;
            let mut max = T::neg_infinity();
            for t in 0..len {
                max = max.max(src[at(t)]);
            }
            let mut total = T::zero();
            for t in 0..len {
                let e = (src[at(t)] - max).exp();
                out[at(t)] = e;
                total += e;
            }
            for t in 0..len {
                out[at(t)] /= total;
            }
        }
    }
    Tensor::new(x.shape(), out)
}

/// Gradient of softmax given its output `y`: `dx = y ⊙ (g − Σ g⊙y)`.
pub fn softmax_backward<T: Scalar>(
    y: &Tensor<T>,
    upstream: &Tensor<T>,
    axis: usize,
) -> Result<Tensor<T>> {
    y.expect_same_shape(upstream)?;
    let (outer, len, inner) = axis_split(y.shape(), axis)?;
    let (yd, gd) = (y.data(), upstream.data());
    let mut dx = vec![T::zero(); yd.len()];
    for o in 0..outer {
        for i in 0..inner {
            let at = |t: usize| o * len * inner + t * inner + i;
            let dot: T = (0..len).map(|t| yd[at(t)] * gd[at(t)]).sum();
            for t in 0..len {
                dx[at(t)] = yd[at(t)] * (gd[at(t)] - dot);
            }
        }
    }
    Tensor::new(y.shape(), dx)
}

pub const LAYERNORM_EPS: f64 = 1e-5;

/// Saved statistics of a [`layernorm`] call.
#[derive(Clone, Debug)]
pub struct LayerNormCache<T: Scalar> {
    pub xhat: Tensor<T>,
    pub rstd: Vec<T>,
}

/// Normalizes every row of the last axis to zero mean / unit variance, then
/// applies `gamma`, `beta`.
pub fn layernorm<T: Scalar>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    eps: T,
) -> Result<(Tensor<T>, LayerNormCache<T>)> {
    let d = *x.shape().last().expect("rank >= 1");
    if gamma.len() != d || beta.len() != d {
        return Err(Error::Dimension(format!(
            "layernorm affine params {:?}/{:?} do not match embedding dim {d}",
            gamma.shape(),
            beta.shape()
        )));
    }
    let rows = x.len() / d;
    let inv_d = T::one() / T::of(d as f64);
    let (g, b) = (gamma.data(), beta.data());
    let mut y = vec![T::zero(); x.len()];
    let mut xhat = vec![T::zero(); x.len()];
    let mut rstd = Vec::with_capacity(rows);
    for (r, row) in x.data().chunks_exact(d).enumerate() {
        let mean = row.iter().copied().sum::<T>() * inv_d;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv_d;
        let rs = T::one() / (var + eps).sqrt();
        rstd.push(rs);
        for c in 0..d {
            let h = (row[c] - mean) * rs;
            xhat[r * d + c] = h;
            y[r * d + c] = h * g[c] + b[c];
        }
    }
    Ok((
        Tensor::new(x.shape(), y)?,
        LayerNormCache {
            xhat: Tensor::new(x.shape(), xhat)?,
            rstd,
        },
    ))
}

/// Returns `(dx, dgamma, dbeta)`.
pub fn layernorm_backward<T: Scalar>(
    cache: &LayerNormCache<T>,
    gamma: &Tensor<T>,
    upstream: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    cache.xhat.expect_same_shape(upstream)?;
    let d = gamma.len();
    let inv_d = T::one() / T::of(d as f64);
    let g = gamma.data();
    let mut dx = vec![T::zero(); upstream.len()];
    let mut dgamma = vec![T::zero(); d];
    let mut dbeta = vec![T::zero(); d];
    let xh = cache.xhat.data();
    for (r, up) in upstream.data().chunks_exact(d).enumerate() {
        let xr = &xh[r * d..(r + 1) * d];
        let mut mean_dxh = T::zero();
        let mut mean_dxh_xh = T::zero();
        for c in 0..d {
            let dxh = up[c] * g[c];
            mean_dxh += dxh;
            mean_dxh_xh += dxh * xr[c];
            dgamma[c] += up[c] * xr[c];
            dbeta[c] += up[c];
        }
        mean_dxh *= inv_d;
        mean_dxh_xh *= inv_d;
        let rs = cache.rstd[r];
        for c in 0..d {
            dx[r * d + c] = rs * (up[c] * g[c] - mean_dxh - xr[c] * mean_dxh_xh);
        }
    }
    Ok((
        Tensor::new(upstream.shape(), dx)?,
        Tensor::new(gamma.shape(), dgamma)?,
        Tensor::new(gamma.shape(), dbeta)?,
    ))
}

const GELU_K: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

/// GELU, tanh approximation.
pub fn gelu<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let (k, a, half) = (T::of(GELU_K), T::of(GELU_A), T::of(0.5));
    x.map(|v| half * v * (T::one() + (k * (v + a * v * v * v)).tanh()))
}

pub fn gelu_backward<T: Scalar>(x: &Tensor<T>, upstream: &Tensor<T>) -> Result<Tensor<T>> {
    let (k, a, half) = (T::of(GELU_K), T::of(GELU_A), T::of(0.5));
    let three = T::of(3.0);
    x.zip_map(upstream, |v, g| {
        let t = (k * (v + a * v * v * v)).tanh();
        let dt = (T::one() - t * t) * k * (T::one() + three * a * v * v);
        g * (half * (T::one() + t) + half * v * dt)
    })
}

pub fn sigmoid<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| T::one() / (T::one() + (-v).exp()))
}

/// Gradient of sigmoid given its output `y`.
pub fn sigmoid_backward<T: Scalar>(y: &Tensor<T>, upstream: &Tensor<T>) -> Result<Tensor<T>> {
    y.zip_map(upstream, |s, g| g * s * (T::one() - s))
}

/// Token-wise affine map: `x[N×in] · w[in×out] + b`.
pub fn linear<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let mut y = matmul(x, w)?;
    let out = w.dim(1);
    if b.len() != out {
        return Err(Error::Dimension(format!(
            "bias {:?} does not match output width {out}",
            b.shape()
        )));
    }
    for row in y.data_mut().chunks_exact_mut(out) {
        for (v, &bv) in row.iter_mut().zip(b.data()) {
            *v += bv;
        }
    }
    Ok(y)
}

/// Returns `(dx, dw, db)`.
pub fn linear_backward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    upstream: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let (dx, dw) = matmul_backward(x, w, upstream)?;
    let out = w.dim(1);
    let mut db = vec![T::zero(); out];
    for row in upstream.data().chunks_exact(out) {
        for (d, &g) in db.iter_mut().zip(row) {
            *d += g;
        }
    }
    Ok((dx, dw, Tensor::new([out], db)?))
}

/// Intermediate activations of [`mlp`].
#[derive(Clone, Debug)]
pub struct MlpCache<T: Scalar> {
    pub input: Tensor<T>,
    pub hidden_pre: Tensor<T>,
    pub hidden: Tensor<T>,
}

/// `w2 · gelu(w1 · x + b1) + b2`, per token.
pub fn mlp<T: Scalar>(
    x: &Tensor<T>,
    w1: &Tensor<T>,
    b1: &Tensor<T>,
    w2: &Tensor<T>,
    b2: &Tensor<T>,
) -> Result<(Tensor<T>, MlpCache<T>)> {
    let hidden_pre = linear(x, w1, b1)?;
    let hidden = gelu(&hidden_pre);
    let y = linear(&hidden, w2, b2)?;
    Ok((
        y,
        MlpCache {
            input: x.clone(),
            hidden_pre,
            hidden,
        },
    ))
}

/// Gradients of [`mlp`] in the order `(dx, dw1, db1, dw2, db2)`.
pub struct MlpGrads<T: Scalar> {
    pub dx: Tensor<T>,
    pub dw1: Tensor<T>,
    pub db1: Tensor<T>,
    pub dw2: Tensor<T>,
    pub db2: Tensor<T>,
}

pub fn mlp_backward<T: Scalar>(
    cache: &MlpCache<T>,
    w1: &Tensor<T>,
    w2: &Tensor<T>,
    upstream: &Tensor<T>,
) -> Result<MlpGrads<T>> {
    let (dh, dw2, db2) = linear_backward(&cache.hidden, w2, upstream)?;
    let dpre = gelu_backward(&cache.hidden_pre, &dh)?;
    let (dx, dw1, db1) = linear_backward(&cache.input, w1, &dpre)?;
    Ok(MlpGrads {
        dx,
        dw1,
        db1,
        dw2,
        db2,
    })
}

/// Zero-padded, strided 2-D cross-correlation geometry.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub c_out: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub h_out: usize,
    pub w_out: usize,
}

impl ConvGeom {
    pub fn new<T: Scalar>(
        x: &Tensor<T>,
        w: &Tensor<T>,
        stride: usize,
        pad: usize,
    ) -> Result<Self> {
        x.expect_rank(3, "conv2d input")?;
        w.expect_rank(4, "conv2d weight")?;
        let (c_in, h, wd) = (x.dim(0), x.dim(1), x.dim(2));
        let (c_out, wc_in, kh, kw) = (w.dim(0), w.dim(1), w.dim(2), w.dim(3));
        if wc_in != c_in {
            return Err(Error::Dimension(format!(
                "conv2d weight {:?} expects {wc_in} input channels, input is {:?}",
                w.shape(),
                x.shape()
            )));
        }
        if stride == 0 {
            return Err(Error::Dimension("conv2d stride must be ≥ 1".into()));
        }
        let (ph, pw) = (h + 2 * pad, wd + 2 * pad);
        if kh > ph || kw > pw {
            return Err(Error::Dimension(format!(
                "conv2d kernel {kh}×{kw} larger than padded input {ph}×{pw}"
            )));
        }
        Ok(Self {
            c_in,
            h,
            w: wd,
            c_out,
            kh,
            kw,
            stride,
            pad,
            h_out: (ph - kh) / stride + 1,
            w_out: (pw - kw) / stride + 1,
        })
    }

    fn patch_len(&self) -> usize {
        self.c_in * self.kh * self.kw
    }

    fn pixels_out(&self) -> usize {
        self.h_out * self.w_out
    }

    /// Source index of column entry (row `r` of the patch, output pixel `p`),
    /// or `None` when it falls in the zero padding.
    #[inline]
    fn source(&self, r: usize, p: usize) -> Option<usize> {
        let c = r / (self.kh * self.kw);
        let ky = (r / self.kw) % self.kh;
        let kx = r % self.kw;
        let oy = p / self.w_out;
        let ox = p % self.w_out;
        let y = (oy * self.stride + ky) as isize - self.pad as isize;
        let x = (ox * self.stride + kx) as isize - self.pad as isize;
        if y < 0 || x < 0 || y >= self.h as isize || x >= self.w as isize {
            None
        } else {
            Some((c * self.h + y as usize) * self.w + x as usize)
        }
    }
}

fn im2col<T: Scalar>(x: &[T], g: &ConvGeom) -> Vec<T> {
    let (rows, cols) = (g.patch_len(), g.pixels_out());
    let mut out = vec![T::zero(); rows * cols];
    for r in 0..rows {
        let dst = &mut out[r * cols..(r + 1) * cols];
        for (p, d) in dst.iter_mut().enumerate() {
            if let Some(s) = g.source(r, p) {
                *d = x[s];
            }
        }
    }
    out
}

fn col2im<T: Scalar>(cols_data: &[T], g: &ConvGeom) -> Vec<T> {
    let (rows, cols) = (g.patch_len(), g.pixels_out());
    let mut out = vec![T::zero(); g.c_in * g.h * g.w];
    for r in 0..rows {
        let src = &cols_data[r * cols..(r + 1) * cols];
        for (p, &v) in src.iter().enumerate() {
            if let Some(s) = g.source(r, p) {
                out[s] += v;
            }
        }
    }
    out
}

/// `x[C_in×H×W]`, `w[C_out×C_in×kh×kw]`, `b[C_out]` → `[C_out×H'×W']`.
pub fn conv2d<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: &Tensor<T>,
    stride: usize,
    pad: usize,
) -> Result<Tensor<T>> {
    let g = ConvGeom::new(x, w, stride, pad)?;
    if b.len() != g.c_out {
        return Err(Error::Dimension(format!(
            "conv2d bias {:?} does not match {} output channels",
            b.shape(),
            g.c_out
        )));
    }
    let cols = im2col(x.data(), &g);
    let (k, n) = (g.patch_len(), g.pixels_out());
    let mut out = vec![T::zero(); g.c_out * n];
    gemm_nn(w.data(), &cols, &mut out, g.c_out, k, n);
    counter::add((g.c_out * k * n) as u64);
    for (o, row) in out.chunks_exact_mut(n).enumerate() {
        let bv = b.data()[o];
        row.iter_mut().for_each(|v| *v += bv);
    }
    Tensor::new([g.c_out, g.h_out, g.w_out], out)
}

/// Gradients of [`conv2d`]: `(dx, Some((dw, db)))`, weight gradients only when
/// `weight_grads` is set.
#[allow(clippy::type_complexity)]
pub fn conv2d_backward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    upstream: &Tensor<T>,
    stride: usize,
    pad: usize,
    weight_grads: bool,
) -> Result<(Tensor<T>, Option<(Tensor<T>, Tensor<T>)>)> {
    let g = ConvGeom::new(x, w, stride, pad)?;
    if upstream.shape() != [g.c_out, g.h_out, g.w_out] {
        return Err(Error::Dimension(format!(
            "conv2d upstream {:?} does not match output [{}, {}, {}]",
            upstream.shape(),
            g.c_out,
            g.h_out,
            g.w_out
        )));
    }
    let (k, n) = (g.patch_len(), g.pixels_out());
    let up = Tensor::new([g.c_out, n], upstream.data().to_vec())?;
    let w2 = Tensor::new([g.c_out, k], w.data().to_vec())?;
    let dcols = matmul_tn(&w2, &up)?;
    let dx = Tensor::new(x.shape(), col2im(dcols.data(), &g))?;
    let params = if weight_grads {
        let cols = Tensor::new([k, n], im2col(x.data(), &g))?;
        let dw = matmul_nt(&up, &cols)?.reshape(w.shape())?;
        let db: Vec<T> = up
            .data()
            .chunks_exact(n)
            .map(|r| r.iter().copied().sum())
            .collect();
        Some((dw, Tensor::new([g.c_out], db)?))
    } else {
        None
    };
    Ok((dx, params))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], v: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(shape, v).unwrap()
    }

    #[test]
    fn matmul_identity_and_hand_cases() {
        let m = t(&[3, 2], &[1.0, -2.0, 0.5, 4.0, 7.0, 3.0]);
        assert_eq!(matmul(&Tensor::eye(3), &m).unwrap(), m);
        let a = t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(matmul(&a, &Tensor::eye(2)).unwrap(), a);
        let c = matmul(&a, &t(&[2, 1], &[5.0, 6.0])).unwrap();
        assert_eq!(c.shape(), &[2, 1]);
        assert_eq!(c.data(), &[17.0, 39.0]);
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let err = matmul(&Tensor::<f64>::zeros([2, 3]), &Tensor::zeros([2, 3]))
            .unwrap_err()
            .to_string();
        assert!(err.contains("[2, 3] × [2, 3]"), "{err}");
    }

    #[test]
    fn transposed_variants_agree_with_plain_matmul() {
        let a = Tensor::<f64>::from_fn([3, 4], |i| (i as f64 * 0.7).sin());
        let b = Tensor::<f64>::from_fn([4, 5], |i| (i as f64 * 1.3).cos());
        let ab = matmul(&a, &b).unwrap();
        let nt = matmul_nt(&a, &transpose(&b).unwrap()).unwrap();
        let tn = matmul_tn(&transpose(&a).unwrap(), &b).unwrap();
        for ((x, y), z) in ab.data().iter().zip(nt.data()).zip(tn.data()) {
            assert!((x - y).abs() < 1e-12 && (x - z).abs() < 1e-12);
        }
    }

    #[test]
    fn matmul_backward_with_identity_passes_upstream() {
        let a = Tensor::<f64>::from_fn([3, 3], |i| i as f64);
        let up = Tensor::<f64>::from_fn([3, 3], |i| (i as f64).sqrt());
        let (da, _) = matmul_backward(&a, &Tensor::eye(3), &up).unwrap();
        assert_eq!(da, up);
    }

    #[test]
    fn softmax_examples() {
        let y = softmax(&t(&[3], &[0.0, 0.0, 0.0]), 0).unwrap();
        for v in y.data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        let y = softmax(&t(&[2], &[1000.0, 1000.0]), 0).unwrap();
        assert_eq!(y.data(), &[0.5, 0.5]);
        let y = softmax(&t(&[2], &[0.0, 3f64.ln()]), 0).unwrap();
        assert!((y.data()[0] - 0.25).abs() < 1e-15);
        assert!((y.data()[1] - 0.75).abs() < 1e-15);
    }

    #[test]
    fn softmax_respects_axis() {
        let x = t(&[2, 3], &[0.0, 1.0, 2.0, 3.0, 4.0, 5.0]);
        let y = softmax(&x, 0).unwrap();
        for j in 0..3 {
            let s = y.data()[j] + y.data()[3 + j];
            assert!((s - 1.0).abs() < 1e-12);
        }
        assert!(softmax(&x, 2).is_err());
    }

    #[test]
    fn softmax_backward_uniform_is_zero() {
        let y = softmax(&Tensor::<f64>::zeros([4]), 0).unwrap();
        let dx = softmax_backward(&y, &Tensor::full([4], 0.3), 0).unwrap();
        assert!(dx.max_abs() < 1e-15);
    }

    #[test]
    fn layernorm_examples() {
        let ones = Tensor::<f64>::full([4], 1.0);
        let zeros = Tensor::<f64>::zeros([4]);
        let (y, _) = layernorm(&Tensor::full([4], 3.5), &ones, &zeros, LAYERNORM_EPS).unwrap();
        assert!(y.max_abs() == 0.0);

        let (y, _) = layernorm(
            &t(&[2], &[1.0, 3.0]),
            &Tensor::full([2], 1.0),
            &Tensor::zeros([2]),
            LAYERNORM_EPS,
        )
        .unwrap();
        // mean 2, variance 1: (±1)/sqrt(1 + eps)
        let expect = 1.0 / (1.0 + LAYERNORM_EPS).sqrt();
        assert!((y.data()[0] + expect).abs() < 1e-15);
        assert!((y.data()[1] - expect).abs() < 1e-15);

        let x = t(&[4], &[0.3, -2.0, 9.0, 1.0]);
        let (y, _) = layernorm(&x, &zeros, &Tensor::full([4], 0.7), LAYERNORM_EPS).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.7));
    }

    #[test]
    fn layernorm_rows_are_standardized() {
        let x = Tensor::<f64>::from_fn([5, 6], |i| ((i * 7919) % 13) as f64 - 4.0);
        let (_, cache) = layernorm(
            &x,
            &Tensor::full([6], 1.0),
            &Tensor::zeros([6]),
            LAYERNORM_EPS,
        )
        .unwrap();
        for row in cache.xhat.data().chunks(6) {
            let mean: f64 = row.iter().sum::<f64>() / 6.0;
            let var: f64 = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 6.0;
            assert!(mean.abs() < 1e-5 && (var - 1.0).abs() < 1e-5);
        }
    }

    #[test]
    fn gelu_examples() {
        let y = gelu(&t(&[3], &[0.0, 20.0, -20.0]));
        assert_eq!(y.data()[0], 0.0);
        assert!((y.data()[1] - 20.0).abs() < 1e-9);
        assert!(y.data()[2].abs() < 1e-9);
    }

    #[test]
    fn mlp_with_zero_weights_returns_output_bias() {
        let x = Tensor::<f64>::from_fn([3, 2], |i| i as f64);
        let b2 = t(&[2], &[0.25, -1.5]);
        let (y, _) = mlp(
            &x,
            &Tensor::zeros([2, 8]),
            &Tensor::zeros([8]),
            &Tensor::zeros([8, 2]),
            &b2,
        )
        .unwrap();
        for row in y.data().chunks(2) {
            assert_eq!(row, b2.data());
        }
    }

    #[test]
    fn conv2d_examples() {
        let x = Tensor::<f64>::from_fn([2, 3, 3], |i| i as f64 * 0.5);
        let w = Tensor::<f64>::from_fn([2, 2, 1, 1], |i| if i == 0 || i == 3 { 1.0 } else { 0.0 });
        assert_eq!(conv2d(&x, &w, &Tensor::zeros([2]), 1, 0).unwrap(), x);

        let ones = Tensor::<f64>::full([1, 5, 5], 1.0);
        let y = conv2d(&ones, &Tensor::full([1, 1, 3, 3], 1.0), &Tensor::zeros([1]), 1, 1).unwrap();
        assert_eq!(y.shape(), &[1, 5, 5]);
        assert_eq!(y.data()[2 * 5 + 2], 9.0);
        assert_eq!(y.data()[0], 4.0);

        let x = t(&[1, 2, 2], &[1.0, 2.0, 3.0, 4.0]);
        let w = t(&[1, 1, 2, 2], &[1.0, 0.0, 0.0, 1.0]);
        let y = conv2d(&x, &w, &Tensor::zeros([1]), 1, 0).unwrap();
        assert_eq!(y.shape(), &[1, 1, 1]);
        assert_eq!(y.data(), &[5.0]);
    }

    #[test]
    fn conv2d_rejects_oversized_kernel() {
        let x = Tensor::<f64>::zeros([1, 2, 2]);
        let w = Tensor::<f64>::zeros([1, 1, 5, 5]);
        assert!(matches!(
            conv2d(&x, &w, &Tensor::zeros([1]), 1, 1),
            Err(Error::Dimension(_))
        ));
        assert!(conv2d(&x, &w, &Tensor::zeros([1]), 1, 2).is_ok());
    }

    #[test]
    fn conv2d_stride_shape() {
        let x = Tensor::<f64>::zeros([3, 16, 16]);
        let w = Tensor::<f64>::zeros([4, 3, 3, 3]);
        let y = conv2d(&x, &w, &Tensor::zeros([4]), 2, 1).unwrap();
        assert_eq!(y.shape(), &[4, 8, 8]);
    }
}
