//! Learnable building blocks: depthwise separable convolution, group
//! attention, spatial/channel attention, selective channel fusion and
//! upsampling, plus the Gaussian high-pass operator used for supervision.
//!
//! Every block owns a name prefix and its channel geometry. Parameter shapes
//! follow from the geometry alone ([`Block::specs`]); the tensors themselves
//! live in a [`ParamStore`] and are bound into a [`Graph`] on each forward.

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::rng::Stream;
use crate::tensor::{reflect_index, Dims, PadMode, ParamStore, Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    /// Uniform in ±sqrt(1/fan_in).
    Uniform {
        fan_in: usize,
    },
    Zeros,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub dims: Dims,
    pub init: Init,
}

impl ParamSpec {
    pub fn numel(&self) -> usize {
        self.dims.iter().product()
    }
}

/// Builds every tensor in `specs`; each draws from its own stream named
/// after the parameter, so adding a parameter never changes the others.
pub fn init_params<T: Scalar>(specs: &[ParamSpec], seed: u64) -> ParamStore<T> {
    let root = Stream::new(seed);
    let mut store = ParamStore::new();
    for spec in specs {
        let t = match spec.init {
            Init::Zeros => Tensor::zeros(spec.dims),
            Init::Uniform { fan_in } => {
                let bound = (1.0 / fan_in.max(1) as f64).sqrt();
                let mut s = root.named(&spec.name);
                Tensor::from_fn(spec.dims, |_, _, _, _| T::of(s.uniform(-bound, bound)))
            }
        };
        store.insert(spec.name.clone(), t);
    }
    store
}

pub trait Block {
    fn specs(&self) -> Vec<ParamSpec>;

    fn param_count(&self) -> usize {
        self.specs().iter().map(ParamSpec::numel).sum()
    }
}

fn join(prefix: &str, leaf: &str) -> String {
    if prefix.is_empty() {
        leaf.to_string()
    } else {
        format!("{prefix}.{leaf}")
    }
}

fn check_channels(what: &str, expected: usize, x: Dims) -> Result<()> {
    if x[1] != expected {
        return Err(Error::Shape(format!(
            "{what}: expected {expected} input channels, got {:?}",
            x
        )));
    }
    Ok(())
}

/// Plain convolution with optional bias.
#[derive(Clone, Debug)]
pub struct Conv {
    pub prefix: String,
    pub cin: usize,
    pub cout: usize,
    pub k: usize,
    pub stride: usize,
    pub groups: usize,
    pub bias: bool,
}

impl Conv {
    pub fn new(prefix: impl Into<String>, cin: usize, cout: usize, k: usize) -> Self {
        Self {
            prefix: prefix.into(),
            cin,
            cout,
            k,
            stride: 1,
            groups: 1,
            bias: true,
        }
    }

    pub fn grouped(mut self, groups: usize) -> Self {
        self.groups = groups;
        self
    }

    pub fn weight_name(&self) -> String {
        join(&self.prefix, "weight")
    }

    pub fn bias_name(&self) -> String {
        join(&self.prefix, "bias")
    }

    /// Reflect-padded ("same" for stride 1) correlation plus bias.
    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, ps: &ParamStore<T>, x: Var) -> Result<Var> {
        check_channels(&self.prefix, self.cin, g.dims(x))?;
        let w = g.param(ps, &self.weight_name())?;
        let y = g.conv2d(x, w, self.stride, (self.k - 1) / 2, PadMode::Reflect, self.groups)?;
        if self.bias {
            let b = g.param(ps, &self.bias_name())?;
            g.add(y, b)
        } else {
            Ok(y)
        }
    }
}

impl Block for Conv {
    fn specs(&self) -> Vec<ParamSpec> {
        let cin_g = self.cin / self.groups;
        let mut v = vec![ParamSpec {
            name: self.weight_name(),
            dims: [self.cout, cin_g, self.k, self.k],
            init: Init::Uniform {
                fan_in: cin_g * self.k * self.k,
            },
        }];
        if self.bias {
            v.push(ParamSpec {
                name: self.bias_name(),
                dims: [1, self.cout, 1, 1],
                init: Init::Zeros,
            });
        }
        v
    }
}

/// Depthwise k×k correlation (reflect padded) followed by a biased 1×1
/// pointwise mix.
#[derive(Clone, Debug)]
pub struct Dwc {
    pub prefix: String,
    pub cin: usize,
    pub cout: usize,
    pub k: usize,
    pub stride: usize,
}

impl Dwc {
    pub fn new(prefix: impl Into<String>, cin: usize, cout: usize, k: usize) -> Self {
        Self {
            prefix: prefix.into(),
            cin,
            cout,
            k,
            stride: 1,
        }
    }

    pub fn strided(mut self, stride: usize) -> Self {
        self.stride = stride;
        self
    }

    pub fn depthwise_name(&self) -> String {
        join(&self.prefix, "depthwise")
    }
    pub fn pointwise_name(&self) -> String {
        join(&self.prefix, "pointwise")
    }
    pub fn bias_name(&self) -> String {
        join(&self.prefix, "bias")
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, ps: &ParamStore<T>, x: Var) -> Result<Var> {
        if self.k.is_multiple_of(2) {
            return Err(Error::InvalidArgument(format!(
                "{}: kernel size {} must be odd",
                self.prefix, self.k
            )));
        }
        check_channels(&self.prefix, self.cin, g.dims(x))?;
        let dw = g.param(ps, &self.depthwise_name())?;
        let pw = g.param(ps, &self.pointwise_name())?;
        let b = g.param(ps, &self.bias_name())?;
        let y = g.conv2d(x, dw, self.stride, (self.k - 1) / 2, PadMode::Reflect, self.cin)?;
        let y = g.conv_valid(y, pw, 1, 1)?;
        g.add(y, b)
    }
}

impl Block for Dwc {
    fn specs(&self) -> Vec<ParamSpec> {
        vec![
            ParamSpec {
                name: self.depthwise_name(),
                dims: [self.cin, 1, self.k, self.k],
                init: Init::Uniform { fan_in: self.k * self.k },
            },
            ParamSpec {
                name: self.pointwise_name(),
                dims: [self.cout, self.cin, 1, 1],
                init: Init::Uniform { fan_in: self.cin },
            },
            ParamSpec {
                name: self.bias_name(),
                dims: [1, self.cout, 1, 1],
                init: Init::Zeros,
            },
        ]
    }
}

/// Hidden width of each group's gate bottleneck. Narrow layers would give
/// `C/(G·r) = 0`; the bottleneck keeps at least one unit.
pub fn group_hidden(channels: usize, groups: usize, reduction: usize) -> usize {
    (channels / (groups * reduction)).max(1)
}

/// Per-group channel gating, channel shuffle, then a pointwise mix.
#[derive(Clone, Debug)]
pub struct GroupAttention {
    pub prefix: String,
    pub channels: usize,
    pub groups: usize,
    pub reduction: usize,
}

impl GroupAttention {
    pub fn new(prefix: impl Into<String>, channels: usize, groups: usize, reduction: usize) -> Result<Self> {
        if groups == 0 || !channels.is_multiple_of(groups) {
            return Err(Error::InvalidArgument(format!(
                "group attention: {channels} channels not divisible into {groups} groups"
            )));
        }
        if reduction == 0 {
            return Err(Error::InvalidArgument("group attention: reduction must be >= 1".into()));
        }
        Ok(Self {
            prefix: prefix.into(),
            channels,
            groups,
            reduction,
        })
    }

    fn gate1(&self) -> Conv {
        let h = group_hidden(self.channels, self.groups, self.reduction);
        Conv::new(join(&self.prefix, "gate1"), self.channels, self.groups * h, 1).grouped(self.groups)
    }

    fn gate2(&self) -> Conv {
        let h = group_hidden(self.channels, self.groups, self.reduction);
        Conv::new(join(&self.prefix, "gate2"), self.groups * h, self.channels, 1).grouped(self.groups)
    }

    pub fn mix(&self) -> Conv {
        Conv::new(join(&self.prefix, "mix"), self.channels, self.channels, 1)
    }

    pub fn gate_convs(&self) -> [Conv; 2] {
        [self.gate1(), self.gate2()]
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, ps: &ParamStore<T>, x: Var) -> Result<Var> {
        check_channels(&self.prefix, self.channels, g.dims(x))?;
        let pooled = g.gap(x);
        let h = self.gate1().forward(g, ps, pooled)?;
        let h = g.relu(h);
        let h = self.gate2().forward(g, ps, h)?;
        let gate = g.sigmoid(h);
        let y = g.mul(x, gate)?;
        let y = g.channel_shuffle(y, self.groups)?;
        self.mix().forward(g, ps, y)
    }
}

impl Block for GroupAttention {
    fn specs(&self) -> Vec<ParamSpec> {
        let mut v = self.gate1().specs();
        v.extend(self.gate2().specs());
        v.extend(self.mix().specs());
        v
    }
}

/// Sigmoid of a 7×7 correlation over the channel-mean and channel-max maps.
#[derive(Clone, Debug)]
pub struct SpatialAttention {
    pub prefix: String,
}

impl SpatialAttention {
    pub fn new(prefix: impl Into<String>) -> Self {
        Self { prefix: prefix.into() }
    }

    pub fn conv(&self) -> Conv {
        Conv::new(self.prefix.clone(), 2, 1, 7)
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, ps: &ParamStore<T>, x: Var) -> Result<Var> {
        let mean = g.channel_mean(x);
        let max = g.channel_max(x);
        let stacked = g.concat(&[mean, max])?;
        let y = self.conv().forward(g, ps, stacked)?;
        Ok(g.sigmoid(y))
    }
}

impl Block for SpatialAttention {
    fn specs(&self) -> Vec<ParamSpec> {
        self.conv().specs()
    }
}

/// Squeeze-excitation style channel attention: C → C/r → C on the global
/// average.
#[derive(Clone, Debug)]
pub struct ChannelAttention {
    pub prefix: String,
    pub channels: usize,
    pub reduction: usize,
}

impl ChannelAttention {
    pub fn new(prefix: impl Into<String>, channels: usize, reduction: usize) -> Result<Self> {
        if reduction == 0 || channels / reduction < 1 {
            return Err(Error::InvalidArgument(format!(
                "channel attention: {channels} channels with reduction {reduction} leaves no hidden units"
            )));
        }
        Ok(Self {
            prefix: prefix.into(),
            channels,
            reduction,
        })
    }

    pub fn fc1(&self) -> Conv {
        Conv::new(join(&self.prefix, "fc1"), self.channels, self.channels / self.reduction, 1)
    }

    pub fn fc2(&self) -> Conv {
        Conv::new(join(&self.prefix, "fc2"), self.channels / self.reduction, self.channels, 1)
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, ps: &ParamStore<T>, x: Var) -> Result<Var> {
        check_channels(&self.prefix, self.channels, g.dims(x))?;
        let pooled = g.gap(x);
        let h = self.fc1().forward(g, ps, pooled)?;
        let h = g.relu(h);
        let h = self.fc2().forward(g, ps, h)?;
        Ok(g.sigmoid(h))
    }
}

impl Block for ChannelAttention {
    fn specs(&self) -> Vec<ParamSpec> {
        let mut v = self.fc1().specs();
        v.extend(self.fc2().specs());
        v
    }
}

/// Selective channel fusion of a high-frequency stream `I_h` with a
/// structural stream `X_ga`:
///
/// ```text
/// I_in = I_h + X_ga
/// I_pa = sigmoid(Conv_re([SA(I_in), CA(I_in)]))          per pixel, per channel
/// out  = Conv_1x1(I_pa ⊙ I_h) + (1 - I_pa) ⊙ X_ga
/// ```
#[derive(Clone, Debug)]
pub struct SelectiveFusion {
    pub prefix: String,
    pub channels: usize,
    pub spatial: SpatialAttention,
    pub channel: ChannelAttention,
}

impl SelectiveFusion {
    pub fn new(prefix: impl Into<String>, channels: usize, reduction: usize) -> Result<Self> {
        let prefix = prefix.into();
        Ok(Self {
            spatial: SpatialAttention::new(join(&prefix, "spatial")),
            channel: ChannelAttention::new(join(&prefix, "channel"), channels, reduction)?,
            channels,
            prefix,
        })
    }

    /// Conv_re: 3×3 reflect-padded, C+1 → C.
    pub fn gate(&self) -> Conv {
        Conv::new(join(&self.prefix, "gate"), self.channels + 1, self.channels, 3)
    }

    pub fn proj(&self) -> Conv {
        Conv::new(join(&self.prefix, "proj"), self.channels, self.channels, 1)
    }

    /// Returns the fused tensor and the gate `I_pa`.
    pub fn forward_with_gate<T: Scalar>(&self, g: &mut Graph<T>, ps: &ParamStore<T>, i_h: Var, x_ga: Var) -> Result<(Var, Var)> {
        let (dh, dg) = (g.dims(i_h), g.dims(x_ga));
        if dh != dg {
            return Err(Error::Shape(format!("selective fusion: I_h {dh:?} vs X_ga {dg:?}")));
        }
        check_channels(&self.prefix, self.channels, dh)?;
        let i_in = g.add(i_h, x_ga)?;
        let sa = self.spatial.forward(g, ps, i_in)?;
        let ca = self.channel.forward(g, ps, i_in)?;
        let ca = g.expand(ca, dh)?;
        let stacked = g.concat(&[sa, ca])?;
        let pre = self.gate().forward(g, ps, stacked)?;
        let pa = g.sigmoid(pre);
        let gated = g.mul(pa, i_h)?;
        let left = self.proj().forward(g, ps, gated)?;
        let inv = g.one_minus(pa);
        let right = g.mul(inv, x_ga)?;
        Ok((g.add(left, right)?, pa))
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, ps: &ParamStore<T>, i_h: Var, x_ga: Var) -> Result<Var> {
        Ok(self.forward_with_gate(g, ps, i_h, x_ga)?.0)
    }
}

impl Block for SelectiveFusion {
    fn specs(&self) -> Vec<ParamSpec> {
        let mut v = self.spatial.specs();
        v.extend(self.channel.specs());
        v.extend(self.gate().specs());
        v.extend(self.proj().specs());
        v
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UpsampleMode {
    #[default]
    Nearest,
    Bilinear,
}

/// ×2 upsampling followed by a depthwise separable convolution.
#[derive(Clone, Debug)]
pub struct Upsample {
    pub mode: UpsampleMode,
    pub dwc: Dwc,
}

impl Upsample {
    pub fn new(prefix: impl Into<String>, cin: usize, cout: usize, k: usize, mode: UpsampleMode) -> Self {
        Self {
            mode,
            dwc: Dwc::new(prefix, cin, cout, k),
        }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, ps: &ParamStore<T>, x: Var) -> Result<Var> {
        let up = match self.mode {
            UpsampleMode::Nearest => g.upsample_nearest(x),
            UpsampleMode::Bilinear => g.upsample_bilinear(x),
        };
        self.dwc.forward(g, ps, up)
    }
}

impl Block for Upsample {
    fn specs(&self) -> Vec<ParamSpec> {
        self.dwc.specs()
    }
}

// ---- tensor-level entry points ---------------------------------------------

fn eval1<T: Scalar>(x: &Tensor<T>, f: impl FnOnce(&mut Graph<T>, Var) -> Result<Var>) -> Result<Tensor<T>> {
    let mut g = Graph::new();
    let xv = g.constant(x.clone());
    let y = f(&mut g, xv)?;
    Ok(g.take_value(y))
}

pub fn dwc<T: Scalar>(x: &Tensor<T>, block: &Dwc, ps: &ParamStore<T>) -> Result<Tensor<T>> {
    eval1(x, |g, v| block.forward(g, ps, v))
}

pub fn channel_shuffle<T: Scalar>(x: &Tensor<T>, groups: usize) -> Result<Tensor<T>> {
    eval1(x, |g, v| g.channel_shuffle(v, groups))
}

pub fn group_attention<T: Scalar>(x: &Tensor<T>, block: &GroupAttention, ps: &ParamStore<T>) -> Result<Tensor<T>> {
    eval1(x, |g, v| block.forward(g, ps, v))
}

pub fn spatial_attention<T: Scalar>(x: &Tensor<T>, block: &SpatialAttention, ps: &ParamStore<T>) -> Result<Tensor<T>> {
    eval1(x, |g, v| block.forward(g, ps, v))
}

pub fn channel_attention<T: Scalar>(x: &Tensor<T>, block: &ChannelAttention, ps: &ParamStore<T>) -> Result<Tensor<T>> {
    eval1(x, |g, v| block.forward(g, ps, v))
}

pub fn scf_fuse<T: Scalar>(i_h: &Tensor<T>, x_ga: &Tensor<T>, block: &SelectiveFusion, ps: &ParamStore<T>) -> Result<Tensor<T>> {
    let mut g = Graph::new();
    let a = g.constant(i_h.clone());
    let b = g.constant(x_ga.clone());
    let y = block.forward(&mut g, ps, a, b)?;
    Ok(g.take_value(y))
}

pub fn upsample_block<T: Scalar>(x: &Tensor<T>, block: &Upsample, ps: &ParamStore<T>) -> Result<Tensor<T>> {
    eval1(x, |g, v| block.forward(g, ps, v))
}

/// Normalized 1-D Gaussian taps of radius `ceil(3σ)` (size `2·ceil(3σ)+1`).
pub fn gaussian_taps(sigma: f64) -> Vec<f64> {
    let r = (3.0 * sigma).ceil() as isize;
    let raw: Vec<f64> = (-r..=r).map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let s: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / s).collect()
}

/// Separable isotropic Gaussian blur with reflect padding, per channel.
pub fn gaussian_blur<T: Scalar>(img: &Tensor<T>, sigma: f64) -> Result<Tensor<T>> {
    if !(sigma > 0.0) {
        return Err(Error::InvalidArgument(format!("blur sigma must be positive, got {sigma}")));
    }
    let taps = gaussian_taps(sigma);
    let r = (taps.len() / 2) as isize;
    let [n, c, h, w] = img.dims();
    let mut out = Tensor::zeros(img.dims());
    let mut tmp = vec![0.0f64; h * w];
    for ni in 0..n {
        for ci in 0..c {
            let src = img.plane(ni, ci);
            for y in 0..h {
                for x in 0..w {
                    let mut acc = 0.0;
                    for (k, &t) in taps.iter().enumerate() {
                        let sx = reflect_index(x as isize + k as isize - r, w);
                        acc += t * src[y * w + sx].f64();
                    }
                    tmp[y * w + x] = acc;
                }
            }
            let dst = out.plane_mut(ni, ci);
            for y in 0..h {
                for x in 0..w {
                    let mut acc = 0.0;
                    for (k, &t) in taps.iter().enumerate() {
                        let sy = reflect_index(y as isize + k as isize - r, h);
                        acc += t * tmp[sy * w + x];
                    }
                    dst[y * w + x] = T::of(acc);
                }
            }
        }
    }
    Ok(out)
}

/// `I - gaussian_blur(I, σ)`.
pub fn gaussian_highpass<T: Scalar>(img: &Tensor<T>, sigma: f64) -> Result<Tensor<T>> {
    let blurred = gaussian_blur(img, sigma)?;
    img.zip_map(&blurred, |a, b| a - b)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rand_t(dims: Dims, seed: u64) -> Tensor<f32> {
        let mut s = Stream::new(seed);
        Tensor::from_fn(dims, |_, _, _, _| s.uniform(-1.0, 1.0) as f32)
    }

    fn impulse_depthwise(c: usize, k: usize) -> Tensor<f32> {
        Tensor::from_fn([c, 1, k, k], |_, _, y, x| if y == k / 2 && x == k / 2 { 1.0 } else { 0.0 })
    }

    fn eye(c: usize) -> Tensor<f32> {
        Tensor::from_fn([c, c, 1, 1], |o, i, _, _| if o == i { 1.0 } else { 0.0 })
    }

    #[test]
    fn dwc_identity_factorization() {
        let b = Dwc::new("d", 3, 3, 3);
        let mut ps = init_params::<f32>(&b.specs(), 0);
        *ps.get_mut("d.depthwise").unwrap() = impulse_depthwise(3, 3);
        *ps.get_mut("d.pointwise").unwrap() = eye(3);
        let x = rand_t([2, 3, 5, 6], 1);
        assert_eq!(dwc(&x, &b, &ps).unwrap(), x);
    }

    #[test]
    fn dwc_channel_sum() {
        let b = Dwc::new("d", 2, 1, 5);
        let mut ps = init_params::<f32>(&b.specs(), 0);
        *ps.get_mut("d.depthwise").unwrap() = impulse_depthwise(2, 5);
        *ps.get_mut("d.pointwise").unwrap() = Tensor::full([1, 2, 1, 1], 1.0);
        let x = rand_t([1, 2, 6, 6], 2);
        let y = dwc(&x, &b, &ps).unwrap();
        let want = x
            .slice_channels(0, 1)
            .unwrap()
            .zip_map(&x.slice_channels(1, 1).unwrap(), |a, b| a + b)
            .unwrap();
        assert_eq!(y, want);
    }

    #[test]
    fn dwc_rejects_wrong_channels() {
        let b = Dwc::new("d", 3, 3, 3);
        let ps = init_params::<f32>(&b.specs(), 0);
        assert!(matches!(dwc(&rand_t([1, 4, 4, 4], 0), &b, &ps), Err(Error::Shape(_))));
    }

    #[test]
    fn shuffle_examples() {
        let x = Tensor::from_fn([1, 4, 1, 1], |_, c, _, _| c as f32);
        assert_eq!(channel_shuffle(&x, 1).unwrap(), x);
        assert_eq!(channel_shuffle(&x, 2).unwrap().data(), &[0.0, 2.0, 1.0, 3.0]);
        assert!(channel_shuffle(&x, 3).is_err());
    }

    #[test]
    fn shuffle_inverse_by_enumeration() {
        for c in 1..=12 {
            for g in (1..=c).filter(|g| c % g == 0) {
                let x = Tensor::from_fn([1, c, 1, 2], |_, ci, _, w| (ci * 2 + w) as f32);
                let y = channel_shuffle(&channel_shuffle(&x, g).unwrap(), c / g).unwrap();
                assert_eq!(y, x, "C={c} G={g}");
            }
        }
    }

    #[test]
    fn group_attention_half_gate() {
        let b = GroupAttention::new("ga", 8, 2, 2).unwrap();
        let mut ps = init_params::<f32>(&b.specs(), 3);
        for conv in b.gate_convs() {
            *ps.get_mut(&conv.weight_name()).unwrap() = Tensor::zeros(ps.get(&conv.weight_name()).unwrap().dims());
        }
        *ps.get_mut("ga.mix.weight").unwrap() = eye(8);
        let x = rand_t([2, 8, 3, 3], 4);
        let y = group_attention(&x, &b, &ps).unwrap();
        assert_eq!(y, channel_shuffle(&x.scale(0.5), 2).unwrap());
    }

    #[test]
    fn group_attention_saturated_gate() {
        let b = GroupAttention::new("ga", 4, 2, 1).unwrap();
        let mut ps = init_params::<f32>(&b.specs(), 3);
        *ps.get_mut("ga.gate2.bias").unwrap() = Tensor::full([1, 4, 1, 1], 60.0);
        let d = ps.get("ga.gate2.weight").unwrap().dims();
        *ps.get_mut("ga.gate2.weight").unwrap() = Tensor::zeros(d);
        let x = rand_t([1, 4, 3, 3], 5);
        let y = group_attention(&x, &b, &ps).unwrap();
        // gate == 1: shuffle then mix of x itself
        let mut g = Graph::new();
        let xv = g.constant(x.clone());
        let s = g.channel_shuffle(xv, 2).unwrap();
        let m = b.mix().forward(&mut g, &ps, s).unwrap();
        assert!(y.max_abs_diff(g.value(m)).unwrap() < 1e-6);
    }

    #[test]
    fn group_attention_errors() {
        assert!(GroupAttention::new("ga", 6, 4, 4).is_err());
        assert!(ChannelAttention::new("ca", 3, 4).is_err());
    }

    #[test]
    fn attention_zero_weights_give_half() {
        let sa = SpatialAttention::new("sa");
        let mut ps = init_params::<f32>(&sa.specs(), 0);
        *ps.get_mut("sa.weight").unwrap() = Tensor::zeros([1, 2, 7, 7]);
        let m = spatial_attention(&rand_t([1, 3, 5, 5], 1), &sa, &ps).unwrap();
        assert_eq!(m.dims(), [1, 1, 5, 5]);
        assert!(m.data().iter().all(|&v| v == 0.5));

        let ca = ChannelAttention::new("ca", 8, 4).unwrap();
        let mut ps = init_params::<f32>(&ca.specs(), 0);
        for n in ["ca.fc1.weight", "ca.fc2.weight"] {
            let d = ps.get(n).unwrap().dims();
            *ps.get_mut(n).unwrap() = Tensor::zeros(d);
        }
        let v = channel_attention(&rand_t([2, 8, 4, 4], 1), &ca, &ps).unwrap();
        assert_eq!(v.dims(), [2, 8, 1, 1]);
        assert!(v.data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn spatial_attention_constant_input_is_uniform() {
        let sa = SpatialAttention::new("sa");
        let ps = init_params::<f32>(&sa.specs(), 9);
        let m = spatial_attention(&Tensor::full([1, 4, 9, 9], 0.3), &sa, &ps).unwrap();
        let (lo, hi) = m.min_max();
        assert!(hi - lo < 1e-6);
        assert!(lo > 0.0 && hi < 1.0);
    }

    #[test]
    fn channel_attention_gap_scales_with_input() {
        let ca = ChannelAttention::new("ca", 4, 2).unwrap();
        let ps = init_params::<f32>(&ca.specs(), 2);
        let x = rand_t([1, 4, 4, 4], 3);
        let pre = |x: &Tensor<f32>| {
            let mut g = Graph::new();
            let xv = g.constant(x.clone());
            let p = g.gap(xv);
            let h = ca.fc1().forward(&mut g, &ps, p).unwrap();
            g.take_value(h)
        };
        let a = pre(&x);
        let b = pre(&x.scale(2.5));
        assert!(a.scale(2.5).max_abs_diff(&b).unwrap() < 1e-6);
    }

    fn scf_with_gate_bias(bias: f32, identity_proj: bool) -> (SelectiveFusion, ParamStore<f32>) {
        let b = SelectiveFusion::new("scf", 4, 2).unwrap();
        let mut ps = init_params::<f32>(&b.specs(), 11);
        *ps.get_mut("scf.gate.weight").unwrap() = Tensor::zeros([4, 5, 3, 3]);
        *ps.get_mut("scf.gate.bias").unwrap() = Tensor::full([1, 4, 1, 1], bias);
        if identity_proj {
            *ps.get_mut("scf.proj.weight").unwrap() = eye(4);
        }
        (b, ps)
    }

    #[test]
    fn scf_gate_closed_gives_structural_stream() {
        let (b, ps) = scf_with_gate_bias(-1000.0, false);
        let (ih, xg) = (rand_t([1, 4, 6, 6], 1), rand_t([1, 4, 6, 6], 2));
        assert!(scf_fuse(&ih, &xg, &b, &ps).unwrap().max_abs_diff(&xg).unwrap() <= 1e-6);
    }

    #[test]
    fn scf_gate_open_gives_hf_stream() {
        let (b, ps) = scf_with_gate_bias(1000.0, true);
        let (ih, xg) = (rand_t([1, 4, 6, 6], 1), rand_t([1, 4, 6, 6], 2));
        assert!(scf_fuse(&ih, &xg, &b, &ps).unwrap().max_abs_diff(&ih).unwrap() <= 1e-6);
    }

    #[test]
    fn scf_is_convex_with_identity_projection() {
        let b = SelectiveFusion::new("scf", 4, 2).unwrap();
        let mut ps = init_params::<f32>(&b.specs(), 12);
        *ps.get_mut("scf.proj.weight").unwrap() = eye(4);
        let (ih, xg) = (rand_t([2, 4, 7, 7], 3), rand_t([2, 4, 7, 7], 4));
        let y = scf_fuse(&ih, &xg, &b, &ps).unwrap();
        for ((&o, &a), &c) in y.data().iter().zip(ih.data()).zip(xg.data()) {
            assert!(o >= a.min(c) - 1e-6 && o <= a.max(c) + 1e-6);
        }
    }

    #[test]
    fn scf_dim_mismatch() {
        let b = SelectiveFusion::new("scf", 4, 2).unwrap();
        let ps = init_params::<f32>(&b.specs(), 1);
        assert!(scf_fuse(&rand_t([1, 4, 4, 4], 1), &rand_t([1, 4, 4, 6], 1), &b, &ps).is_err());
    }

    #[test]
    fn upsample_nearest_identity_dwc() {
        let b = Upsample::new("up", 1, 1, 3, UpsampleMode::Nearest);
        let mut ps = init_params::<f32>(&b.specs(), 0);
        *ps.get_mut("up.depthwise").unwrap() = impulse_depthwise(1, 3);
        *ps.get_mut("up.pointwise").unwrap() = eye(1);
        let y = upsample_block(&Tensor::full([1, 1, 1, 1], 0.7), &b, &ps).unwrap();
        assert_eq!(y.dims(), [1, 1, 2, 2]);
        assert!(y.data().iter().all(|&v| v == 0.7));
        let half = Upsample::new("up", 8, 4, 3, UpsampleMode::Bilinear);
        let ps = init_params::<f32>(&half.specs(), 0);
        assert_eq!(
            upsample_block(&rand_t([1, 8, 3, 5], 1), &half, &ps).unwrap().dims(),
            [1, 4, 6, 10]
        );
    }

    #[test]
    fn highpass_of_constant_is_zero() {
        let y = gaussian_highpass(&Tensor::full([1, 3, 10, 12], 0.4f32), 2.0).unwrap();
        assert!(y.data().iter().all(|v| v.abs() < 1e-6));
    }

    #[test]
    fn highpass_impulse_center() {
        let mut img = Tensor::<f64>::zeros([1, 1, 31, 31]);
        img.set(0, 0, 15, 15, 1.0);
        let y = gaussian_highpass(&img, 2.0).unwrap();
        let taps = gaussian_taps(2.0);
        assert_eq!(taps.len(), 13);
        let center = taps[6] * taps[6];
        assert!((y.at(0, 0, 15, 15) - (1.0 - center)).abs() < 1e-12);
    }

    #[test]
    fn highpass_plus_blur_is_identity() {
        let x = rand_t([1, 3, 16, 16], 8);
        let hp = gaussian_highpass(&x, 1.5).unwrap();
        let bl = gaussian_blur(&x, 1.5).unwrap();
        assert_eq!(hp, x.zip_map(&bl, |a, b| a - b).unwrap());
        let back = hp.zip_map(&bl, |a, b| a + b).unwrap();
        assert!(back.max_abs_diff(&x).unwrap() < 1e-6);
    }

    #[test]
    fn init_is_deterministic_and_bounded() {
        let b = Dwc::new("enc.0.dwc", 4, 8, 3);
        let a = init_params::<f32>(&b.specs(), 42);
        assert_eq!(a, init_params::<f32>(&b.specs(), 42));
        assert_ne!(a, init_params::<f32>(&b.specs(), 43));
        let bound = (1.0f32 / 4.0).sqrt();
        assert!(a.get("enc.0.dwc.pointwise").unwrap().data().iter().all(|v| v.abs() <= bound));
        assert!(a.get("enc.0.dwc.bias").unwrap().data().iter().all(|&v| v == 0.0));
    }
}
