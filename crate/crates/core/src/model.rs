//! The two-branch restoration network.
//!
//! Encoder: a 3×3 stem followed by `L` wavelet levels. Level `l` (input
//! width `C = base·2^l`) refines the three detail bands with a depthwise
//! separable conv, reconstructs, adds a residual branch and downsamples
//! with a stride-2 separable conv that doubles the width.
//!
//! Decoder: a high-frequency path and a structural path both start from the
//! deepest feature. At every level (deep to shallow) each path upsamples,
//! the structural path goes through group attention, the level's skip
//! embedding joins the high-frequency path, and the two are fused. Two
//! sigmoid heads produce `P_h` (high-frequency) and `P_r` (reconstruction).

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::blocks::{
    group_hidden, init_params, Block, Conv, Dwc, GroupAttention, ParamSpec, SelectiveFusion, Upsample, UpsampleMode,
};
use crate::error::{Error, Result};
use crate::tensor::{Pad2d, PadMode, ParamStore, Scalar, Tensor};

fn default_true() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub levels: usize,
    pub base_channels: usize,
    pub groups: usize,
    pub reduction: usize,
    pub lambda: f64,
    pub highpass_sigma: f64,
    #[serde(default)]
    pub upsample_mode: UpsampleMode,
    pub seed: u64,
    /// `false` replaces every wavelet level by a plain stride-2 conv.
    #[serde(default = "default_true")]
    pub use_mfe: bool,
    /// `false` replaces group attention by the identity.
    #[serde(default = "default_true")]
    pub use_shd: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::toy()
    }
}

pub const DEFAULT_LAMBDA: f64 = 0.67;

impl ModelConfig {
    /// L=3, base 8: trains on a CPU in minutes.
    pub fn toy() -> Self {
        Self {
            levels: 3,
            base_channels: 8,
            groups: 4,
            reduction: 4,
            lambda: DEFAULT_LAMBDA,
            highpass_sigma: 2.0,
            upsample_mode: UpsampleMode::Nearest,
            seed: 0,
            use_mfe: true,
            use_shd: true,
        }
    }

    /// Four levels at a width chosen to land near a 7M parameter budget.
    pub fn full_scale() -> Self {
        Self {
            levels: 4,
            base_channels: FULL_SCALE_BASE,
            ..Self::toy()
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(format!("model config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.levels < 1 {
            return bad("levels must be >= 1".into());
        }
        if self.base_channels == 0 || self.groups == 0 || !self.base_channels.is_multiple_of(self.groups) {
            return bad(format!(
                "base_channels {} must be a positive multiple of groups {}",
                self.base_channels, self.groups
            ));
        }
        if self.reduction == 0 || self.base_channels / self.reduction < 1 {
            return bad(format!(
                "reduction {} leaves no hidden units at width {}",
                self.reduction, self.base_channels
            ));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return bad(format!("lambda {} outside [0, 1]", self.lambda));
        }
        if !(self.highpass_sigma > 0.0) {
            return bad(format!("highpass_sigma must be positive, got {}", self.highpass_sigma));
        }
        Ok(())
    }

    /// Input width of encoder level `l` (0-based), also the output width of
    /// decoder level `l`.
    pub fn width(&self, l: usize) -> usize {
        self.base_channels << l
    }

    /// Spatial multiple the encoder pads to.
    pub fn pad_multiple(&self) -> usize {
        1 << (self.levels + 1)
    }
}

/// Base width of [`ModelConfig::full_scale`].
pub const FULL_SCALE_BASE: usize = 52;

// ---- per-level blocks ------------------------------------------------------

#[derive(Clone, Debug)]
struct EncLevel {
    channels: usize,
    detail: Dwc,
    residual: Dwc,
    down: Dwc,
}

#[derive(Clone, Debug)]
struct PlainLevel {
    down: Conv,
}

#[derive(Clone, Debug)]
enum Encoder {
    Wavelet(EncLevel),
    Plain(PlainLevel),
}

#[derive(Clone, Debug)]
struct DecLevel {
    hf_up: Upsample,
    st_up: Upsample,
    attention: Option<GroupAttention>,
    skip: Conv,
    fusion: SelectiveFusion,
}

/// Per-level encoder outputs.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderFeatures<T: Scalar = f32> {
    /// `X_enc^l`, the downsampled level output.
    pub enc: Vec<Tensor<T>>,
    /// `skip^l`, the refined sub-band embedding (4C channels, half the
    /// level-input resolution).
    pub skip: Vec<Tensor<T>>,
    /// Original (height, width) before padding.
    pub crop: (usize, usize),
}

/// Graph-side counterpart of [`EncoderFeatures`].
#[derive(Clone, Debug)]
pub struct FeatureVars {
    pub enc: Vec<Var>,
    pub skip: Vec<Var>,
    pub crop: (usize, usize),
}

#[derive(Clone, Debug)]
pub struct Model {
    cfg: ModelConfig,
    stem: Conv,
    encoder: Vec<Encoder>,
    decoder: Vec<DecLevel>,
    head_h: Conv,
    head_r: Conv,
}

impl Model {
    pub fn new(cfg: ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let base = cfg.base_channels;
        let mut encoder = Vec::with_capacity(cfg.levels);
        let mut decoder = Vec::with_capacity(cfg.levels);
        for l in 0..cfg.levels {
            let c = cfg.width(l);
            let p = format!("enc.{l}");
            encoder.push(if cfg.use_mfe {
                Encoder::Wavelet(EncLevel {
                    channels: c,
                    detail: Dwc::new(format!("{p}.detail"), 3 * c, 3 * c, 3),
                    residual: Dwc::new(format!("{p}.residual"), c, c, 3),
                    down: Dwc::new(format!("{p}.down"), c, 2 * c, 3).strided(2),
                })
            } else {
                let mut down = Conv::new(format!("{p}.down"), c, 2 * c, 3);
                down.stride = 2;
                Encoder::Plain(PlainLevel { down })
            });
            let p = format!("dec.{l}");
            decoder.push(DecLevel {
                hf_up: Upsample::new(format!("{p}.hf_up"), 2 * c, c, 3, cfg.upsample_mode),
                st_up: Upsample::new(format!("{p}.st_up"), 2 * c, c, 3, cfg.upsample_mode),
                attention: if cfg.use_shd {
                    Some(GroupAttention::new(format!("{p}.attn"), c, cfg.groups, cfg.reduction)?)
                } else {
                    None
                },
                skip: Conv::new(format!("{p}.skip"), c, c, 1),
                fusion: SelectiveFusion::new(format!("{p}.fuse"), c, cfg.reduction)?,
            });
        }
        Ok(Self {
            stem: Conv::new("stem", 3, base, 3),
            head_h: Conv::new("head.hf", base, 3, 3),
            head_r: Conv::new("head.rec", base, 3, 3),
            encoder,
            decoder,
            cfg,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn specs(&self) -> Vec<ParamSpec> {
        let mut v = self.stem.specs();
        for e in &self.encoder {
            match e {
                Encoder::Wavelet(e) => {
                    v.extend(e.detail.specs());
                    v.extend(e.residual.specs());
                    v.extend(e.down.specs());
                }
                Encoder::Plain(e) => v.extend(e.down.specs()),
            }
        }
        for d in &self.decoder {
            v.extend(d.hf_up.specs());
            v.extend(d.st_up.specs());
            if let Some(a) = &d.attention {
                v.extend(a.specs());
            }
            v.extend(d.skip.specs());
            v.extend(d.fusion.specs());
        }
        v.extend(self.head_h.specs());
        v.extend(self.head_r.specs());
        v
    }

    pub fn init_params<T: Scalar>(&self) -> ParamStore<T> {
        init_params(&self.specs(), self.cfg.seed)
    }

    /// One encoder level; returns `(X_out, skip)`.
    pub fn mfe_level<T: Scalar>(&self, g: &mut Graph<T>, ps: &ParamStore<T>, l: usize, x: Var) -> Result<(Var, Var)> {
        let level = self
            .encoder
            .get(l)
            .ok_or_else(|| Error::InvalidArgument(format!("encoder level {l} out of range")))?;
        let [_, _, h, w] = g.dims(x);
        if h % 2 != 0 || w % 2 != 0 {
            return Err(Error::Shape(format!(
                "encoder level {l} needs even spatial dims, got {h}x{w}"
            )));
        }
        match level {
            Encoder::Wavelet(e) => {
                let c = e.channels;
                let bands = g.wt_forward(x)?;
                let global = g.slice_channels(bands, 0, c)?;
                let details = g.slice_channels(bands, c, 3 * c)?;
                let refined = e.detail.forward(g, ps, details)?;
                let embed = g.concat(&[global, refined])?;
                let recon = g.wt_inverse(embed)?;
                let res = e.residual.forward(g, ps, x)?;
                let xo = g.add(recon, res)?;
                let out = e.down.forward(g, ps, xo)?;
                Ok((out, embed))
            }
            Encoder::Plain(e) => {
                let bands = g.wt_forward(x)?;
                let out = e.down.forward(g, ps, x)?;
                Ok((out, bands))
            }
        }
    }

    pub fn encode_graph<T: Scalar>(&self, g: &mut Graph<T>, ps: &ParamStore<T>, img: Var) -> Result<FeatureVars> {
        let [_, c, h, w] = g.dims(img);
        if c != 3 {
            return Err(Error::Shape(format!("model expects 3-channel images, got {:?}", g.dims(img))));
        }
        let m = self.cfg.pad_multiple();
        let (ph, pw) = (h.div_ceil(m) * m, w.div_ceil(m) * m);
        let x = if (ph, pw) == (h, w) {
            img
        } else {
            let pad = Pad2d {
                top: 0,
                bottom: ph - h,
                left: 0,
                right: pw - w,
            };
            g.pad(img, pad, PadMode::Reflect)
        };
        let mut x = self.stem.forward(g, ps, x)?;
        let mut f = FeatureVars {
            enc: Vec::with_capacity(self.cfg.levels),
            skip: Vec::with_capacity(self.cfg.levels),
            crop: (h, w),
        };
        for l in 0..self.cfg.levels {
            let (out, skip) = self.mfe_level(g, ps, l, x)?;
            f.enc.push(out);
            f.skip.push(skip);
            x = out;
        }
        Ok(f)
    }

    /// Returns the full-resolution (padded, pre-head) high-frequency and
    /// structural states.
    pub fn decode_states<T: Scalar>(&self, g: &mut Graph<T>, ps: &ParamStore<T>, f: &FeatureVars) -> Result<(Var, Var)> {
        let levels = self.cfg.levels;
        if f.enc.len() != levels || f.skip.len() != levels {
            return Err(Error::InvalidArgument(format!(
                "decoder has {levels} levels, features have {} / {}",
                f.enc.len(),
                f.skip.len()
            )));
        }
        let deepest = f.enc[levels - 1];
        let (mut hf, mut st) = (deepest, deepest);
        for l in (0..levels).rev() {
            let d = &self.decoder[l];
            let up_h = d.hf_up.forward(g, ps, hf)?;
            let skip = g.wt_inverse(f.skip[l])?;
            let skip = d.skip.forward(g, ps, skip)?;
            let i_h = g.add(up_h, skip)?;
            let x_up = d.st_up.forward(g, ps, st)?;
            let x_ga = match &d.attention {
                Some(a) => a.forward(g, ps, x_up)?,
                None => x_up,
            };
            st = d.fusion.forward(g, ps, i_h, x_ga)?;
            hf = i_h;
        }
        Ok((hf, st))
    }

    /// Sigmoid head plus crop back to the original size.
    pub fn head<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        ps: &ParamStore<T>,
        which: Head,
        state: Var,
        crop: (usize, usize),
    ) -> Result<Var> {
        let conv = match which {
            Head::HighFrequency => &self.head_h,
            Head::Reconstruction => &self.head_r,
        };
        let y = conv.forward(g, ps, state)?;
        let y = g.sigmoid(y);
        let [_, _, h, w] = g.dims(y);
        if (h, w) == crop {
            Ok(y)
        } else {
            g.crop(y, 0, 0, crop.0, crop.1)
        }
    }

    pub fn decode_graph<T: Scalar>(&self, g: &mut Graph<T>, ps: &ParamStore<T>, f: &FeatureVars) -> Result<(Var, Var)> {
        let (hf, st) = self.decode_states(g, ps, f)?;
        let p_h = self.head(g, ps, Head::HighFrequency, hf, f.crop)?;
        let p_r = self.head(g, ps, Head::Reconstruction, st, f.crop)?;
        Ok((p_h, p_r))
    }

    pub fn forward_graph<T: Scalar>(&self, g: &mut Graph<T>, ps: &ParamStore<T>, img: Var) -> Result<(Var, Var)> {
        let f = self.encode_graph(g, ps, img)?;
        self.decode_graph(g, ps, &f)
    }

    pub fn encode<T: Scalar>(&self, img: &Tensor<T>, ps: &ParamStore<T>) -> Result<EncoderFeatures<T>> {
        let mut g = Graph::new();
        let x = g.constant(img.clone());
        let f = self.encode_graph(&mut g, ps, x)?;
        Ok(EncoderFeatures {
            enc: f.enc.iter().map(|&v| g.take_value(v)).collect(),
            skip: f.skip.iter().map(|&v| g.take_value(v)).collect(),
            crop: f.crop,
        })
    }

    pub fn decode<T: Scalar>(&self, f: &EncoderFeatures<T>, ps: &ParamStore<T>) -> Result<(Tensor<T>, Tensor<T>)> {
        let mut g = Graph::new();
        let vars = FeatureVars {
            enc: f.enc.iter().map(|t| g.constant(t.clone())).collect(),
            skip: f.skip.iter().map(|t| g.constant(t.clone())).collect(),
            crop: f.crop,
        };
        let (p_h, p_r) = self.decode_graph(&mut g, ps, &vars)?;
        Ok((g.take_value(p_h), g.take_value(p_r)))
    }

    /// `(P_h, P_r)`; `P_r` is the enhanced image.
    pub fn forward<T: Scalar>(&self, img: &Tensor<T>, ps: &ParamStore<T>) -> Result<(Tensor<T>, Tensor<T>)> {
        let mut g = Graph::new();
        let x = g.constant(img.clone());
        let (p_h, p_r) = self.forward_graph(&mut g, ps, x)?;
        Ok((g.take_value(p_h), g.take_value(p_r)))
    }

    /// Enhances each image of a batch independently.
    pub fn enhance(&self, img: &Tensor, ps: &ParamStore) -> Result<Tensor> {
        Ok(self.forward(img, ps)?.1)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Head {
    HighFrequency,
    Reconstruction,
}

fn dwc_count(cin: usize, cout: usize, k: usize) -> usize {
    cin * k * k + cout * cin + cout
}

fn conv_count(cin: usize, cout: usize, k: usize, groups: usize) -> usize {
    cout * (cin / groups) * k * k + cout
}

/// Closed-form parameter count of the network described by `cfg`.
pub fn param_count(cfg: &ModelConfig) -> usize {
    let base = cfg.base_channels;
    let r = cfg.reduction;
    let mut total = conv_count(3, base, 3, 1) + 2 * conv_count(base, 3, 3, 1);
    for l in 0..cfg.levels {
        let c = cfg.width(l);
        total += if cfg.use_mfe {
            dwc_count(3 * c, 3 * c, 3) + dwc_count(c, c, 3) + dwc_count(c, 2 * c, 3)
        } else {
            conv_count(c, 2 * c, 3, 1)
        };
        total += 2 * dwc_count(2 * c, c, 3);
        total += conv_count(c, c, 1, 1);
        if cfg.use_shd {
            let gh = cfg.groups * group_hidden(c, cfg.groups, r);
            total += conv_count(c, gh, 1, cfg.groups) + conv_count(gh, c, 1, cfg.groups) + conv_count(c, c, 1, 1);
        }
        total += conv_count(2, 1, 7, 1);
        total += conv_count(c, c / r, 1, 1) + conv_count(c / r, c, 1, 1);
        total += conv_count(c + 1, c, 3, 1);
        total += conv_count(c, c, 1, 1);
    }
    total
}
