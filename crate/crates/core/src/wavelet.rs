//! Single-level 2×2 Haar analysis/synthesis.
//!
//! Each band is a per-channel stride-2 correlation with one of four
//! ½-scaled kernels:
//!
//! ```text
//! g  = ½ [ 1  1 ]   d1 = ½ [ 1 -1 ]   d2 = ½ [ 1  1 ]   d3 = ½ [ 1 -1 ]
//!        [ 1  1 ]          [ 1 -1 ]          [-1 -1 ]          [-1  1 ]
//! ```
//!
//! The four kernels are orthonormal, so the synthesis is the adjoint of the
//! analysis and reconstruction is exact up to rounding.

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// The four analysis kernels in band order (g, d1, d2, d3), row-major 2×2.
pub const HAAR_KERNELS: [[f64; 4]; 4] = [
    [0.5, 0.5, 0.5, 0.5],
    [0.5, -0.5, 0.5, -0.5],
    [0.5, 0.5, -0.5, -0.5],
    [0.5, -0.5, -0.5, 0.5],
];

/// Half-resolution sub-bands of one decomposition level.
#[derive(Clone, Debug, PartialEq)]
pub struct SubBands<T: Scalar = f32> {
    /// Global / low-frequency.
    pub g: Tensor<T>,
    /// Vertical detail.
    pub d1: Tensor<T>,
    /// Horizontal detail.
    pub d2: Tensor<T>,
    /// Diagonal detail.
    pub d3: Tensor<T>,
}

impl<T: Scalar> SubBands<T> {
    fn check(&self) -> Result<()> {
        let d = self.g.dims();
        for (name, b) in [("d1", &self.d1), ("d2", &self.d2), ("d3", &self.d3)] {
            if b.dims() != d {
                return Err(Error::Shape(format!(
                    "sub-band {name} has dims {:?}, global band has {:?}",
                    b.dims(),
                    d
                )));
            }
        }
        Ok(())
    }

    /// Channel-concatenated layout `[g | d1 | d2 | d3]`, 4C channels.
    pub fn pack(&self) -> Result<Tensor<T>> {
        self.check()?;
        Tensor::concat_channels(&[&self.g, &self.d1, &self.d2, &self.d3])
    }

    /// Inverse of [`SubBands::pack`]; the channel count must be a multiple of 4.
    pub fn unpack(packed: &Tensor<T>) -> Result<Self> {
        if !packed.c().is_multiple_of(4) {
            return Err(Error::Shape(format!(
                "packed sub-bands need 4k channels, got {:?}",
                packed.dims()
            )));
        }
        let c = packed.c() / 4;
        Ok(Self {
            g: packed.slice_channels(0, c)?,
            d1: packed.slice_channels(c, c)?,
            d2: packed.slice_channels(2 * c, c)?,
            d3: packed.slice_channels(3 * c, c)?,
        })
    }

    pub fn energy(&self) -> f64 {
        self.g.sq_norm_f64() + self.d1.sq_norm_f64() + self.d2.sq_norm_f64() + self.d3.sq_norm_f64()
    }
}

pub fn wt_forward<T: Scalar>(x: &Tensor<T>) -> Result<SubBands<T>> {
    SubBands::unpack(&wt_forward_packed(x)?)
}

pub fn wt_inverse<T: Scalar>(s: &SubBands<T>) -> Result<Tensor<T>> {
    wt_inverse_packed(&s.pack()?)
}

/// Analysis into the packed `[g | d1 | d2 | d3]` layout.
pub fn wt_forward_packed<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let [n, c, h, w] = x.dims();
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::Shape(format!(
            "wavelet analysis needs even height and width, got {:?}; pad the input first",
            x.dims()
        )));
    }
    let (ho, wo) = (h / 2, w / 2);
    let half = T::of(0.5);
    let mut out = Tensor::zeros([n, 4 * c, ho, wo]);
    for ni in 0..n {
        for ci in 0..c {
            let src = x.plane(ni, ci).to_vec();
            let mut bands: [Vec<T>; 4] = std::array::from_fn(|_| vec![T::zero(); ho * wo]);
            for y in 0..ho {
                let r0 = &src[2 * y * w..2 * y * w + w];
                let r1 = &src[(2 * y + 1) * w..(2 * y + 1) * w + w];
                for xo in 0..wo {
                    let (a, b) = (r0[2 * xo], r0[2 * xo + 1]);
                    let (cc, d) = (r1[2 * xo], r1[2 * xo + 1]);
                    let o = y * wo + xo;
                    bands[0][o] = half * (a + b + cc + d);
                    bands[1][o] = half * (a - b + cc - d);
                    bands[2][o] = half * (a + b - cc - d);
                    bands[3][o] = half * (a - b - cc + d);
                }
            }
            for (k, band) in bands.iter().enumerate() {
                out.plane_mut(ni, k * c + ci).copy_from_slice(band);
            }
        }
    }
    Ok(out)
}

/// Synthesis from the packed layout; output has C = channels/4 and doubled
/// spatial extent.
pub fn wt_inverse_packed<T: Scalar>(packed: &Tensor<T>) -> Result<Tensor<T>> {
    let [n, c4, ho, wo] = packed.dims();
    if c4 % 4 != 0 {
        return Err(Error::Shape(format!(
            "wavelet synthesis needs 4k channels, got {:?}",
            packed.dims()
        )));
    }
    let c = c4 / 4;
    let (h, w) = (2 * ho, 2 * wo);
    let half = T::of(0.5);
    let mut out = Tensor::zeros([n, c, h, w]);
    for ni in 0..n {
        for ci in 0..c {
            let g = packed.plane(ni, ci);
            let d1 = packed.plane(ni, c + ci);
            let d2 = packed.plane(ni, 2 * c + ci);
            let d3 = packed.plane(ni, 3 * c + ci);
            let mut dst = vec![T::zero(); h * w];
            for y in 0..ho {
                for xo in 0..wo {
                    let o = y * wo + xo;
                    let (gv, v1, v2, v3) = (g[o], d1[o], d2[o], d3[o]);
                    dst[2 * y * w + 2 * xo] = half * (gv + v1 + v2 + v3);
                    dst[2 * y * w + 2 * xo + 1] = half * (gv - v1 + v2 - v3);
                    dst[(2 * y + 1) * w + 2 * xo] = half * (gv + v1 - v2 - v3);
                    dst[(2 * y + 1) * w + 2 * xo + 1] = half * (gv - v1 - v2 + v3);
                }
            }
            out.plane_mut(ni, ci).copy_from_slice(&dst);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{conv2d, PadMode};

    fn block() -> Tensor {
        Tensor::new([1, 1, 2, 2], vec![1., 2., 3., 4.]).unwrap()
    }

    #[test]
    fn hand_example() {
        let s = wt_forward(&block()).unwrap();
        assert_eq!(s.g.data(), &[5.0]);
        assert_eq!(s.d1.data(), &[-1.0]);
        assert_eq!(s.d2.data(), &[-2.0]);
        assert_eq!(s.d3.data(), &[0.0]);
        assert_eq!(block().sq_norm_f64(), 30.0);
        assert_eq!(s.energy(), 25.0 + 1.0 + 4.0 + 0.0);
    }

    #[test]
    fn inverse_hand_example() {
        let s = SubBands {
            g: Tensor::full([1, 1, 1, 1], 5.0f32),
            d1: Tensor::full([1, 1, 1, 1], -1.0),
            d2: Tensor::full([1, 1, 1, 1], -2.0),
            d3: Tensor::full([1, 1, 1, 1], 0.0),
        };
        assert_eq!(wt_inverse(&s).unwrap(), block());
    }

    #[test]
    fn constant_image() {
        let x = Tensor::full([1, 2, 4, 6], 0.3f32);
        let s = wt_forward(&x).unwrap();
        assert!(s.g.data().iter().all(|&v| v == 0.6f32));
        for d in [&s.d1, &s.d2, &s.d3] {
            assert!(d.data().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn inverse_constant_and_zero() {
        let z = Tensor::<f32>::zeros([1, 1, 3, 3]);
        let s = SubBands {
            g: z.clone(),
            d1: z.clone(),
            d2: z.clone(),
            d3: z.clone(),
        };
        assert!(wt_inverse(&s).unwrap().data().iter().all(|&v| v == 0.0));
        let s = SubBands {
            g: Tensor::full([1, 1, 3, 3], 2.0),
            ..s
        };
        let x = wt_inverse(&s).unwrap();
        assert_eq!(x.dims(), [1, 1, 6, 6]);
        assert!(x.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn odd_size_rejected() {
        let err = wt_forward(&Tensor::<f32>::zeros([1, 1, 3, 4])).unwrap_err();
        assert!(err.to_string().contains("pad"));
    }

    #[test]
    fn band_mismatch_rejected() {
        let s = SubBands {
            g: Tensor::<f32>::zeros([1, 1, 2, 2]),
            d1: Tensor::zeros([1, 1, 2, 2]),
            d2: Tensor::zeros([1, 1, 2, 3]),
            d3: Tensor::zeros([1, 1, 2, 2]),
        };
        assert!(wt_inverse(&s).is_err());
    }

    #[test]
    fn matches_strided_depthwise_correlation() {
        let x = Tensor::from_fn([2, 3, 6, 8], |n, c, h, w| {
            ((n * 97 + c * 31 + h * 8 + w) as f32 * 0.731).sin()
        });
        let packed = wt_forward_packed(&x).unwrap();
        for (b, k) in HAAR_KERNELS.iter().enumerate() {
            let kern = Tensor::from_fn([3, 1, 2, 2], |_, _, i, j| k[i * 2 + j] as f32);
            let y = conv2d(&x, &kern, 2, 0, PadMode::Zero, 3).unwrap();
            let band = packed.slice_channels(b * 3, 3).unwrap();
            assert!(band.max_abs_diff(&y).unwrap() < 1e-6);
        }
    }
}
