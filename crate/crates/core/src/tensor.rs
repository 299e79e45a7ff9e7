//! Dense rank-4 tensors (batch, channels, height, width) and the convolution
//! kernels everything else is built on.

use std::collections::BTreeMap;
use std::fmt::{Debug, Display};
use std::iter::Sum;

use crate::error::{Error, Result};

/// Floating point element type. `f32` is the working precision; `f64` is
/// available for tighter gradient checks.
pub trait Scalar: num_traits::Float + Default + Debug + Display + Sum + Send + Sync + 'static {
    fn of(v: f64) -> Self;
    fn f64(self) -> f64;
}

impl Scalar for f32 {
    #[inline]
    fn of(v: f64) -> Self {
        v as f32
    }
    #[inline]
    fn f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    #[inline]
    fn of(v: f64) -> Self {
        v
    }
    #[inline]
    fn f64(self) -> f64 {
        self
    }
}

pub type Dims = [usize; 4];

#[derive(Clone, PartialEq)]
pub struct Tensor<T = f32> {
    dims: Dims,
    data: Vec<T>,
}

impl<T: Scalar> Debug for Tensor<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Tensor{:?}", self.dims)?;
        if self.data.len() <= 16 {
            write!(f, " {:?}", self.data)?;
        }
        Ok(())
    }
}

impl<T: Scalar> Tensor<T> {
    pub fn new(dims: Dims, data: Vec<T>) -> Result<Self> {
        let n: usize = dims.iter().product();
        if n != data.len() {
            return Err(Error::Shape(format!("dims {:?} need {} values, got {}", dims, n, data.len())));
        }
        Ok(Self { dims, data })
    }

    pub fn zeros(dims: Dims) -> Self {
        Self::full(dims, T::zero())
    }

    pub fn full(dims: Dims, v: T) -> Self {
        Self {
            dims,
            data: vec![v; dims.iter().product()],
        }
    }

    pub fn from_fn(dims: Dims, mut f: impl FnMut(usize, usize, usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(dims.iter().product());
        for n in 0..dims[0] {
            for c in 0..dims[1] {
                for h in 0..dims[2] {
                    for w in 0..dims[3] {
                        data.push(f(n, c, h, w));
                    }
                }
            }
        }
        Self { dims, data }
    }

    pub fn scalar(v: T) -> Self {
        Self {
            dims: [1, 1, 1, 1],
            data: vec![v],
        }
    }

    #[inline]
    pub fn dims(&self) -> Dims {
        self.dims
    }
    #[inline]
    pub fn n(&self) -> usize {
        self.dims[0]
    }
    #[inline]
    pub fn c(&self) -> usize {
        self.dims[1]
    }
    #[inline]
    pub fn h(&self) -> usize {
        self.dims[2]
    }
    #[inline]
    pub fn w(&self) -> usize {
        self.dims[3]
    }
    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }
    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
    #[inline]
    pub fn data(&self) -> &[T] {
        &self.data
    }
    #[inline]
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }
    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn offset(&self, n: usize, c: usize, h: usize, w: usize) -> usize {
        ((n * self.dims[1] + c) * self.dims[2] + h) * self.dims[3] + w
    }

    #[inline]
    pub fn at(&self, n: usize, c: usize, h: usize, w: usize) -> T {
        self.data[self.offset(n, c, h, w)]
    }

    #[inline]
    pub fn set(&mut self, n: usize, c: usize, h: usize, w: usize, v: T) {
        let o = self.offset(n, c, h, w);
        self.data[o] = v;
    }

    /// Contiguous H×W plane of one (sample, channel).
    pub fn plane(&self, n: usize, c: usize) -> &[T] {
        let hw = self.dims[2] * self.dims[3];
        let o = (n * self.dims[1] + c) * hw;
        &self.data[o..o + hw]
    }

    pub fn plane_mut(&mut self, n: usize, c: usize) -> &mut [T] {
        let hw = self.dims[2] * self.dims[3];
        let o = (n * self.dims[1] + c) * hw;
        &mut self.data[o..o + hw]
    }

    pub fn reshape(self, dims: Dims) -> Result<Self> {
        Self::new(dims, self.data)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            dims: self.dims,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(T, T) -> T) -> Result<Self> {
        ensure_same_dims("zip_map", self.dims, other.dims)?;
        Ok(Self {
            dims: self.dims,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        ensure_same_dims("add_assign", self.dims, other.dims)?;
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a = *a + b;
        }
        Ok(())
    }

    pub fn scale(&self, s: T) -> Self {
        self.map(|v| v * s)
    }

    /// Sequential row-major sum in f64.
    pub fn sum_f64(&self) -> f64 {
        self.data.iter().fold(0.0, |acc, &v| acc + v.f64())
    }

    pub fn mean_f64(&self) -> f64 {
        if self.data.is_empty() {
            0.0
        } else {
            self.sum_f64() / self.data.len() as f64
        }
    }

    pub fn sq_norm_f64(&self) -> f64 {
        self.data.iter().fold(0.0, |acc, &v| acc + v.f64() * v.f64())
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs_diff(&self, other: &Self) -> Result<f64> {
        ensure_same_dims("max_abs_diff", self.dims, other.dims)?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .fold(0.0f64, |m, (&a, &b)| m.max((a.f64() - b.f64()).abs())))
    }

    pub fn min_max(&self) -> (T, T) {
        self.data
            .iter()
            .fold((T::infinity(), T::neg_infinity()), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            dims: self.dims,
            data: self.data.iter().map(|&v| U::of(v.f64())).collect(),
        }
    }

    pub fn clamp01(&self) -> Self {
        self.map(|v| v.max(T::zero()).min(T::one()))
    }

    /// Concatenate along the channel axis.
    pub fn concat_channels(parts: &[&Self]) -> Result<Self> {
        let first = parts.first().ok_or_else(|| Error::Shape("concat of zero tensors".into()))?;
        let [n, _, h, w] = first.dims;
        let mut c_total = 0;
        for p in parts {
            if p.n() != n || p.h() != h || p.w() != w {
                return Err(Error::Shape(format!(
                    "concat: {:?} incompatible with {:?}",
                    p.dims, first.dims
                )));
            }
            c_total += p.c();
        }
        let hw = h * w;
        let mut data = Vec::with_capacity(n * c_total * hw);
        for ni in 0..n {
            for p in parts {
                let chunk = p.c() * hw;
                data.extend_from_slice(&p.data[ni * chunk..(ni + 1) * chunk]);
            }
        }
        Ok(Self {
            dims: [n, c_total, h, w],
            data,
        })
    }

    pub fn slice_channels(&self, start: usize, len: usize) -> Result<Self> {
        let [n, c, h, w] = self.dims;
        if start + len > c {
            return Err(Error::Shape(format!(
                "channel slice {}..{} out of range for {:?}",
                start,
                start + len,
                self.dims
            )));
        }
        let hw = h * w;
        let mut data = Vec::with_capacity(n * len * hw);
        for ni in 0..n {
            let o = (ni * c + start) * hw;
            data.extend_from_slice(&self.data[o..o + len * hw]);
        }
        Ok(Self {
            dims: [n, len, h, w],
            data,
        })
    }

    /// Concatenate along the batch axis.
    pub fn concat_batch(parts: &[&Self]) -> Result<Self> {
        let first = parts.first().ok_or_else(|| Error::Shape("concat of zero tensors".into()))?;
        let mut data = Vec::new();
        let mut n = 0;
        for p in parts {
            if p.dims[1..] != first.dims[1..] {
                return Err(Error::Shape(format!(
                    "batch concat: {:?} incompatible with {:?}",
                    p.dims, first.dims
                )));
            }
            n += p.n();
            data.extend_from_slice(&p.data);
        }
        Ok(Self {
            dims: [n, first.c(), first.h(), first.w()],
            data,
        })
    }

    pub fn sample(&self, n: usize) -> Result<Self> {
        if n >= self.n() {
            return Err(Error::Shape(format!("sample {} of {:?}", n, self.dims)));
        }
        let chunk = self.c() * self.h() * self.w();
        Ok(Self {
            dims: [1, self.c(), self.h(), self.w()],
            data: self.data[n * chunk..(n + 1) * chunk].to_vec(),
        })
    }
}

pub(crate) fn ensure_same_dims(what: &str, a: Dims, b: Dims) -> Result<()> {
    if a != b {
        return Err(Error::Shape(format!("{what}: {a:?} vs {b:?}")));
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PadMode {
    Zero,
    Reflect,
}

/// Mirror an index into `0..n` without repeating the edge sample
/// (`... 2 1 | 0 1 2 ... n-1 | n-2 ...`), for any offset.
#[inline]
pub fn reflect_index(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    if m < n as isize {
        m as usize
    } else {
        (period - m) as usize
    }
}

/// Spatial padding amounts: top, bottom, left, right.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Pad2d {
    pub top: usize,
    pub bottom: usize,
    pub left: usize,
    pub right: usize,
}

impl Pad2d {
    pub fn uniform(p: usize) -> Self {
        Self {
            top: p,
            bottom: p,
            left: p,
            right: p,
        }
    }

    pub fn is_zero(&self) -> bool {
        self.top == 0 && self.bottom == 0 && self.left == 0 && self.right == 0
    }
}

pub fn pad2d<T: Scalar>(x: &Tensor<T>, pad: Pad2d, mode: PadMode) -> Tensor<T> {
    let [n, c, h, w] = x.dims();
    let (ho, wo) = (h + pad.top + pad.bottom, w + pad.left + pad.right);
    let mut out = Tensor::zeros([n, c, ho, wo]);
    // Row/column source maps; None means zero fill.
    let rows: Vec<Option<usize>> = (0..ho).map(|y| src_index(y as isize - pad.top as isize, h, mode)).collect();
    let cols: Vec<Option<usize>> = (0..wo).map(|x| src_index(x as isize - pad.left as isize, w, mode)).collect();
    for ni in 0..n {
        for ci in 0..c {
            let src = x.plane(ni, ci);
            let dst = out.plane_mut(ni, ci);
            for (y, ry) in rows.iter().enumerate() {
                let Some(sy) = ry else { continue };
                let srow = &src[sy * w..(sy + 1) * w];
                let drow = &mut dst[y * wo..(y + 1) * wo];
                for (d, cx) in drow.iter_mut().zip(&cols) {
                    if let Some(sx) = cx {
                        *d = srow[*sx];
                    }
                }
            }
        }
    }
    out
}

/// Adjoint of [`pad2d`]: folds the gradient of the padded tensor back onto
/// the source grid.
pub fn pad2d_adjoint<T: Scalar>(g: &Tensor<T>, src_h: usize, src_w: usize, pad: Pad2d, mode: PadMode) -> Tensor<T> {
    let [n, c, ho, wo] = g.dims();
    let mut out = Tensor::zeros([n, c, src_h, src_w]);
    let rows: Vec<Option<usize>> = (0..ho)
        .map(|y| src_index(y as isize - pad.top as isize, src_h, mode))
        .collect();
    let cols: Vec<Option<usize>> = (0..wo)
        .map(|x| src_index(x as isize - pad.left as isize, src_w, mode))
        .collect();
    for ni in 0..n {
        for ci in 0..c {
            let src = g.plane(ni, ci);
            let dst = out.plane_mut(ni, ci);
            for (y, ry) in rows.iter().enumerate() {
                let Some(sy) = ry else { continue };
                for (x, cx) in cols.iter().enumerate() {
                    if let Some(sx) = cx {
                        let d = &mut dst[sy * src_w + sx];
                        *d = *d + src[y * wo + x];
                    }
                }
            }
        }
    }
    out
}

#[inline]
fn src_index(i: isize, n: usize, mode: PadMode) -> Option<usize> {
    if (0..n as isize).contains(&i) {
        return Some(i as usize);
    }
    match mode {
        PadMode::Zero => None,
        PadMode::Reflect => Some(reflect_index(i, n)),
    }
}

/// Output spatial extent of a valid correlation.
#[inline]
pub fn conv_out_len(len: usize, k: usize, stride: usize) -> usize {
    (len - k) / stride + 1
}

fn check_conv(x: Dims, w: Dims, stride: usize, groups: usize) -> Result<()> {
    let bad = |why: &str| {
        Err(Error::Shape(format!(
            "conv2d: input {x:?} with kernel {w:?} (stride {stride}, groups {groups}): {why}"
        )))
    };
    if stride == 0 {
        return bad("stride must be >= 1");
    }
    if groups == 0 || !x[1].is_multiple_of(groups) || !w[0].is_multiple_of(groups) {
        return bad("channels not divisible by groups");
    }
    if w[1] != x[1] / groups {
        return bad("kernel input channels must equal Cin/groups");
    }
    if w[2] > x[2] || w[3] > x[3] {
        return bad("kernel larger than (padded) input");
    }
    Ok(())
}

/// Valid (unpadded) strided grouped cross-correlation.
pub fn conv2d_valid<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, stride: usize, groups: usize) -> Result<Tensor<T>> {
    check_conv(x.dims(), w.dims(), stride, groups)?;
    let [n, _, h, wd] = x.dims();
    let [cout, cin_g, kh, kw] = w.dims();
    let (ho, wo) = (conv_out_len(h, kh, stride), conv_out_len(wd, kw, stride));
    let cout_g = cout / groups;
    let mut out = Tensor::zeros([n, cout, ho, wo]);
    for ni in 0..n {
        for co in 0..cout {
            let g = co / cout_g;
            let dst = out.plane_mut(ni, co);
            for cig in 0..cin_g {
                let src = x.plane(ni, g * cin_g + cig);
                for ky in 0..kh {
                    for kx in 0..kw {
                        let wv = w.data[((co * cin_g + cig) * kh + ky) * kw + kx];
                        if wv == T::zero() {
                            continue;
                        }
                        for oy in 0..ho {
                            let srow = &src[(oy * stride + ky) * wd + kx..];
                            let drow = &mut dst[oy * wo..(oy + 1) * wo];
                            if stride == 1 {
                                for (d, &s) in drow.iter_mut().zip(&srow[..wo]) {
                                    *d = *d + wv * s;
                                }
                            } else {
                                for (ox, d) in drow.iter_mut().enumerate() {
                                    *d = *d + wv * srow[ox * stride];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Gradient of [`conv2d_valid`] with respect to its input.
pub fn conv2d_valid_grad_input<T: Scalar>(
    gy: &Tensor<T>,
    w: &Tensor<T>,
    in_dims: Dims,
    stride: usize,
    groups: usize,
) -> Tensor<T> {
    let [n, _, _, wd] = in_dims;
    let [cout, cin_g, kh, kw] = w.dims();
    let [_, _, ho, wo] = gy.dims();
    let cout_g = cout / groups;
    let mut gx = Tensor::zeros(in_dims);
    for ni in 0..n {
        for co in 0..cout {
            let g = co / cout_g;
            let src = gy.plane(ni, co).to_vec();
            for cig in 0..cin_g {
                let dst = gx.plane_mut(ni, g * cin_g + cig);
                for ky in 0..kh {
                    for kx in 0..kw {
                        let wv = w.data[((co * cin_g + cig) * kh + ky) * kw + kx];
                        if wv == T::zero() {
                            continue;
                        }
                        for oy in 0..ho {
                            let base = (oy * stride + ky) * wd + kx;
                            let grow = &src[oy * wo..(oy + 1) * wo];
                            if stride == 1 {
                                for (d, &s) in dst[base..base + wo].iter_mut().zip(grow) {
                                    *d = *d + wv * s;
                                }
                            } else {
                                for (ox, &s) in grow.iter().enumerate() {
                                    let d = &mut dst[base + ox * stride];
                                    *d = *d + wv * s;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    gx
}

/// Gradient of [`conv2d_valid`] with respect to its kernel.
pub fn conv2d_valid_grad_kernel<T: Scalar>(
    gy: &Tensor<T>,
    x: &Tensor<T>,
    w_dims: Dims,
    stride: usize,
    groups: usize,
) -> Tensor<T> {
    let [n, _, _, wd] = x.dims();
    let [cout, cin_g, kh, kw] = w_dims;
    let [_, _, ho, wo] = gy.dims();
    let cout_g = cout / groups;
    let mut gw = Tensor::zeros(w_dims);
    for ni in 0..n {
        for co in 0..cout {
            let g = co / cout_g;
            let grad = gy.plane(ni, co);
            for cig in 0..cin_g {
                let src = x.plane(ni, g * cin_g + cig);
                for ky in 0..kh {
                    for kx in 0..kw {
                        let mut acc = T::zero();
                        for oy in 0..ho {
                            let base = (oy * stride + ky) * wd + kx;
                            let grow = &grad[oy * wo..(oy + 1) * wo];
                            if stride == 1 {
                                for (&gv, &s) in grow.iter().zip(&src[base..base + wo]) {
                                    acc = acc + gv * s;
                                }
                            } else {
                                for (ox, &gv) in grow.iter().enumerate() {
                                    acc = acc + gv * src[base + ox * stride];
                                }
                            }
                        }
                        let o = ((co * cin_g + cig) * kh + ky) * kw + kx;
                        gw.data[o] = gw.data[o] + acc;
                    }
                }
            }
        }
    }
    gw
}

/// Padded strided grouped 2-D cross-correlation (no kernel flip).
///
/// `kernel` has dims `(Cout, Cin/groups, kH, kW)`; the output spatial size is
/// `floor((H + 2p - kH) / stride) + 1`.
pub fn conv2d<T: Scalar>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    stride: usize,
    padding: usize,
    mode: PadMode,
    groups: usize,
) -> Result<Tensor<T>> {
    let padded = if padding == 0 {
        input.clone()
    } else {
        pad2d(input, Pad2d::uniform(padding), mode)
    };
    check_conv(padded.dims(), kernel.dims(), stride, groups).map_err(|_| {
        Error::Shape(format!(
            "conv2d: input {:?} incompatible with kernel {:?} (stride {stride}, padding {padding}, groups {groups})",
            input.dims(),
            kernel.dims()
        ))
    })?;
    conv2d_valid(&padded, kernel, stride, groups)
}

/// Named parameters with a gradient buffer of identical shape per entry.
/// Iteration is lexicographic by name.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore<T: Scalar = f32> {
    entries: BTreeMap<String, Param<T>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Param<T: Scalar = f32> {
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            entries: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor<T>) {
        let grad = Tensor::zeros(value.dims());
        self.entries.insert(name.into(), Param { value, grad });
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<T>> {
        self.entries
            .get(name)
            .map(|p| &p.value)
            .ok_or_else(|| Error::MissingParam(name.to_string()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor<T>> {
        self.entries
            .get_mut(name)
            .map(|p| &mut p.value)
            .ok_or_else(|| Error::MissingParam(name.to_string()))
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut Param<T>> {
        self.entries.get_mut(name)
    }

    pub fn grad(&self, name: &str) -> Result<&Tensor<T>> {
        self.entries
            .get(name)
            .map(|p| &p.grad)
            .ok_or_else(|| Error::MissingParam(name.to_string()))
    }

    /// Adds `g` into the stored gradient of `name`.
    pub fn accumulate_grad(&mut self, name: &str, g: &Tensor<T>) -> Result<()> {
        let p = self
            .entries
            .get_mut(name)
            .ok_or_else(|| Error::MissingParam(name.to_string()))?;
        p.grad.add_assign(g)
    }

    pub fn zero_grads(&mut self) {
        for p in self.entries.values_mut() {
            p.grad.data_mut().iter_mut().for_each(|v| *v = T::zero());
        }
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Param<T>)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Param<T>)> {
        self.entries.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    /// Total number of scalar parameters.
    pub fn numel(&self) -> usize {
        self.entries.values().map(|p| p.value.len()).sum()
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        let mut out = ParamStore::new();
        for (k, p) in &self.entries {
            out.insert(k.clone(), p.value.cast());
        }
        out
    }
}
