//! Layout helpers: feature maps ↔ token matrices, column slicing and the
//! window partition used by the spatial attention block.

use crate::error::{Error, Result};
use crate::tensor::{transpose, Scalar, Tensor};

/// `[C, H, W]` feature map → `[H·W, C]` tokens.
pub fn map_to_tokens<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    x.expect_rank(3, "feature map")?;
    let (c, n) = (x.dim(0), x.dim(1) * x.dim(2));
    transpose(&x.clone().reshape([c, n])?)
}

/// `[H·W, C]` tokens → `[C, H, W]` feature map.
pub fn tokens_to_map<T: Scalar>(z: &Tensor<T>, h: usize, w: usize) -> Result<Tensor<T>> {
    z.expect_rank(2, "token matrix")?;
    if z.dim(0) != h * w {
        return Err(Error::Dimension(format!(
            "{} tokens cannot form a {h}×{w} map",
            z.dim(0)
        )));
    }
    let c = z.dim(1);
    transpose(z)?.reshape([c, h, w])
}

/// Columns `start..start+len` of a `[N, D]` matrix.
pub fn take_cols<T: Scalar>(x: &Tensor<T>, start: usize, len: usize) -> Tensor<T> {
    let (n, d) = (x.dim(0), x.dim(1));
    assert!(start + len <= d, "column range out of bounds");
    let src = x.data();
    let mut out = Vec::with_capacity(n * len);
    for r in 0..n {
        out.extend_from_slice(&src[r * d + start..r * d + start + len]);
    }
    Tensor::new([n, len], out).expect("consistent shape")
}

/// `dst[:, start..] += src`.
pub fn add_cols<T: Scalar>(dst: &mut Tensor<T>, start: usize, src: &Tensor<T>) {
    let (n, d) = (dst.dim(0), dst.dim(1));
    let len = src.dim(1);
    assert!(src.dim(0) == n && start + len <= d, "column range out of bounds");
    let s = src.data();
    let dd = dst.data_mut();
    for r in 0..n {
        for c in 0..len {
            dd[r * d + start + c] += s[r * len + c];
        }
    }
}

/// Horizontal concatenation of `[N, Dᵢ]` matrices.
pub fn concat_cols<T: Scalar>(parts: &[&Tensor<T>]) -> Result<Tensor<T>> {
    let n = parts[0].dim(0);
    if parts.iter().any(|p| p.rank() != 2 || p.dim(0) != n) {
        return Err(Error::Dimension("concat parts must share their row count".into()));
    }
    let total: usize = parts.iter().map(|p| p.dim(1)).sum();
    let mut out = Tensor::zeros([n, total]);
    let mut at = 0;
    for p in parts {
        add_cols(&mut out, at, p);
        at += p.dim(1);
    }
    Ok(out)
}

/// Rows `rows`, columns `col..col+len` of `src`.
pub fn gather<T: Scalar>(src: &Tensor<T>, rows: &[usize], col: usize, len: usize) -> Tensor<T> {
    let d = src.dim(1);
    let s = src.data();
    let mut out = Vec::with_capacity(rows.len() * len);
    for &r in rows {
        out.extend_from_slice(&s[r * d + col..r * d + col + len]);
    }
    Tensor::new([rows.len(), len], out).expect("consistent shape")
}

/// Inverse of [`gather`], accumulating.
pub fn scatter_add<T: Scalar>(dst: &mut Tensor<T>, rows: &[usize], col: usize, src: &Tensor<T>) {
    let d = dst.dim(1);
    let len = src.dim(1);
    let s = src.data();
    let dd = dst.data_mut();
    for (i, &r) in rows.iter().enumerate() {
        for c in 0..len {
            dd[r * d + col + c] += s[i * len + c];
        }
    }
}

fn reflect(i: usize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let m = i % period;
    if m < n {
        m
    } else {
        period - m
    }
}

/// Reflect-padded, non-overlapping window partition of an `H×W` token grid.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct WindowLayout {
    pub height: usize,
    pub width: usize,
    pub padded_height: usize,
    pub padded_width: usize,
    pub window: usize,
    /// Padded position → source token.
    pub source: Vec<usize>,
    /// Source token → its own position in the padded grid.
    pub own: Vec<usize>,
    /// Padded positions of each window, row-major inside the window.
    pub windows: Vec<Vec<usize>>,
}

impl WindowLayout {
    pub fn new(height: usize, width: usize, window: usize) -> Result<Self> {
        let up = |n: usize| n.div_ceil(window) * window;
        let (hp, wp) = (up(height), up(width));
        if hp - height >= height.max(2) || wp - width >= width.max(2) {
            return Err(Error::Config(format!(
                "window {window} is larger than a {height}×{width} feature map can be reflect-padded to"
            )));
        }
        let source = (0..hp * wp)
            .map(|p| reflect(p / wp, height) * width + reflect(p % wp, width))
            .collect();
        let own = (0..height * width)
            .map(|t| (t / width) * wp + t % width)
            .collect();
        let mut windows = Vec::with_capacity((hp / window) * (wp / window));
        for wy in 0..hp / window {
            for wx in 0..wp / window {
                let mut idx = Vec::with_capacity(window * window);
                for dy in 0..window {
                    for dx in 0..window {
                        idx.push((wy * window + dy) * wp + wx * window + dx);
                    }
                }
                windows.push(idx);
            }
        }
        Ok(Self {
            height,
            width,
            padded_height: hp,
            padded_width: wp,
            window,
            source,
            own,
            windows,
        })
    }

    pub fn padded_len(&self) -> usize {
        self.padded_height * self.padded_width
    }

    /// `[N, C]` → `[Np, C]` by reflection.
    pub fn pad<T: Scalar>(&self, x: &Tensor<T>) -> Tensor<T> {
        gather(x, &self.source, 0, x.dim(1))
    }

    /// Adjoint of [`Self::pad`]: folds padded gradients onto their sources.
    pub fn pad_backward<T: Scalar>(&self, dx: &Tensor<T>) -> Tensor<T> {
        let mut out = Tensor::zeros([self.height * self.width, dx.dim(1)]);
        scatter_add(&mut out, &self.source, 0, dx);
        out
    }

    /// `[Np, C]` → `[N, C]`, keeping each token's own position.
    pub fn crop<T: Scalar>(&self, x: &Tensor<T>) -> Tensor<T> {
        gather(x, &self.own, 0, x.dim(1))
    }

    pub fn crop_backward<T: Scalar>(&self, dy: &Tensor<T>) -> Tensor<T> {
        let mut out = Tensor::zeros([self.padded_len(), dy.dim(1)]);
        scatter_add(&mut out, &self.own, 0, dy);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokens_round_trip() {
        let x = Tensor::<f64>::from_fn([3, 2, 4], |i| i as f64);
        let z = map_to_tokens(&x).unwrap();
        assert_eq!(z.shape(), &[8, 3]);
        assert_eq!(z.data()[0..3], [0.0, 8.0, 16.0]);
        assert_eq!(tokens_to_map(&z, 2, 4).unwrap(), x);
    }

    #[test]
    fn exact_fit_needs_no_padding() {
        let l = WindowLayout::new(8, 8, 4).unwrap();
        assert_eq!(l.padded_len(), 64);
        assert_eq!(l.windows.len(), 4);
        assert!(l.source.iter().enumerate().all(|(p, &s)| p == s));
    }

    #[test]
    fn reflect_padding_mirrors_edges() {
        let l = WindowLayout::new(3, 5, 4).unwrap();
        assert_eq!((l.padded_height, l.padded_width), (4, 8));
        // padded row 3 reflects row 1; padded col 5 reflects col 3
        assert_eq!(l.source[3 * 8], 5);
        assert_eq!(l.source[5], 3);
        assert_eq!(l.source[7], 1);
        let x = Tensor::<f64>::from_fn([15, 2], |i| i as f64);
        assert_eq!(l.crop(&l.pad(&x)), x);
    }

    #[test]
    fn window_too_large_is_config_error() {
        assert!(matches!(WindowLayout::new(2, 2, 8), Err(Error::Config(_))));
    }

    #[test]
    fn pad_backward_is_adjoint() {
        let l = WindowLayout::new(5, 3, 4).unwrap();
        let x = Tensor::<f64>::from_fn([15, 2], |i| (i as f64 * 0.37).sin());
        let y = Tensor::<f64>::from_fn([l.padded_len(), 2], |i| (i as f64 * 0.11).cos());
        let lhs: f64 = l.pad(&x).data().iter().zip(y.data()).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.data().iter().zip(l.pad_backward(&y).data()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }
}
