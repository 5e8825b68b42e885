//! The eight rotations and reflections of the pixel grid.

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// An element of the dihedral group of the square, stored as the signed
/// permutation matrix acting on centred `(y, x)` coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Dihedral {
    m: [[i8; 2]; 2],
}

const ROT90: [[i8; 2]; 2] = [[0, -1], [1, 0]];
const FLIP_X: [[i8; 2]; 2] = [[1, 0], [0, -1]];

fn mul(a: [[i8; 2]; 2], b: [[i8; 2]; 2]) -> [[i8; 2]; 2] {
    let mut out = [[0; 2]; 2];
    for (r, row) in out.iter_mut().enumerate() {
        for (c, v) in row.iter_mut().enumerate() {
            *v = a[r][0] * b[0][c] + a[r][1] * b[1][c];
        }
    }
    out
}

impl Dihedral {
    pub const IDENTITY: Dihedral = Dihedral { m: [[1, 0], [0, 1]] };

    /// `index` in `0..8`: `rotations = index % 4` quarter turns after an
    /// optional horizontal flip (`index ≥ 4`).
    pub fn from_index(index: usize) -> Self {
        let mut m = if index >= 4 { FLIP_X } else { Self::IDENTITY.m };
        for _ in 0..index % 4 {
            m = mul(ROT90, m);
        }
        Dihedral { m }
    }

    pub fn index(self) -> usize {
        (0..8)
            .find(|&i| Self::from_index(i) == self)
            .expect("closed group")
    }

    pub fn all() -> [Dihedral; 8] {
        std::array::from_fn(Self::from_index)
    }

    pub fn rotation() -> Self {
        Self::from_index(1)
    }

    pub fn flip_horizontal() -> Self {
        Self::from_index(4)
    }

    /// `self ∘ other`: apply `other` first.
    pub fn compose(self, other: Dihedral) -> Dihedral {
        Dihedral { m: mul(self.m, other.m) }
    }

    pub fn inverse(self) -> Dihedral {
        let m = self.m;
        Dihedral { m: [[m[0][0], m[1][0]], [m[0][1], m[1][1]]] }
    }

    fn swaps_axes(self) -> bool {
        self.m[0][0] == 0
    }

    pub fn sample<R: Rng>(rng: &mut R) -> Self {
        Self::from_index(rng.gen_range(0..8))
    }

    /// Transforms a `[C, H, W]` tensor; axis-swapping elements return
    /// `[C, W, H]`.
    pub fn apply<T: Scalar>(self, x: &Tensor<T>) -> Result<Tensor<T>> {
        if x.rank() != 3 {
            return Err(Error::Dimension(format!("expected C×H×W, got {:?}", x.shape())));
        }
        let (c, h, w) = (x.dim(0), x.dim(1), x.dim(2));
        let (oh, ow) = if self.swaps_axes() { (w, h) } else { (h, w) };
        let inv = self.inverse().m;
        let src = x.data();
        let mut out = Vec::with_capacity(x.len());
        for ch in 0..c {
            for oy in 0..oh {
                for ox in 0..ow {
                    // Doubled centred coordinates keep everything integral.
                    let u = 2 * oy as i64 - (oh as i64 - 1);
                    let v = 2 * ox as i64 - (ow as i64 - 1);
                    let su = inv[0][0] as i64 * u + inv[0][1] as i64 * v;
                    let sv = inv[1][0] as i64 * u + inv[1][1] as i64 * v;
                    let sy = ((su + h as i64 - 1) / 2) as usize;
                    let sx = ((sv + w as i64 - 1) / 2) as usize;
                    out.push(src[(ch * h + sy) * w + sx]);
                }
            }
        }
        Tensor::new([c, oh, ow], out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid() -> Tensor<f32> {
        Tensor::from_fn([2, 3, 3], |i| i as f32)
    }

    #[test]
    fn identity_is_a_no_op() {
        assert_eq!(Dihedral::IDENTITY.apply(&grid()).unwrap(), grid());
    }

    #[test]
    fn quarter_turn_moves_corners() {
        let x = Tensor::from_fn([1, 2, 3], |i| i as f32);
        let r = Dihedral::rotation().apply(&x).unwrap();
        assert_eq!(r.shape(), &[1, 3, 2]);
        // 0 1 2        2 5
        // 3 4 5   →    1 4
        //              0 3
        assert_eq!(r.data(), &[2., 5., 1., 4., 0., 3.]);
    }

    #[test]
    fn flip_mirrors_columns() {
        let x = Tensor::from_fn([1, 2, 3], |i| i as f32);
        let f = Dihedral::flip_horizontal().apply(&x).unwrap();
        assert_eq!(f.data(), &[2., 1., 0., 5., 4., 3.]);
    }

    #[test]
    fn orders() {
        let g = grid();
        let f = Dihedral::flip_horizontal();
        assert_eq!(f.apply(&f.apply(&g).unwrap()).unwrap(), g);
        let r = Dihedral::rotation();
        let mut x = g.clone();
        for _ in 0..4 {
            x = r.apply(&x).unwrap();
        }
        assert_eq!(x, g);
    }

    #[test]
    fn eight_distinct_images() {
        let g = grid();
        let imgs: Vec<_> = Dihedral::all().iter().map(|d| d.apply(&g).unwrap()).collect();
        for i in 0..8 {
            for j in i + 1..8 {
                assert_ne!(imgs[i], imgs[j]);
            }
        }
    }
}
