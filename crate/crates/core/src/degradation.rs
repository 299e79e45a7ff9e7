//! Seeded synthesis of low-quality fundus images.
//!
//! A [`DegradationSpec`] is an ordered list of ops plus a master seed. Op `k`
//! of image `n` draws from the stream `Stream::new(seed).split(k).split(n)`,
//! so changing one op never perturbs the draws of another. All pixel math is
//! done in f64 and rounded once, which keeps the identity limits exact.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::blocks::gaussian_blur;
use crate::error::{Error, Result};
use crate::rng::Stream;
use crate::tensor::{reflect_index, Tensor};

/// Closed interval `[lo, hi]`, serialized as a two-element array.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Range(pub f64, pub f64);

impl Range {
    pub fn fixed(v: f64) -> Self {
        Range(v, v)
    }

    fn check(&self, what: &str) -> Result<()> {
        if !self.0.is_finite() || !self.1.is_finite() || self.0 > self.1 {
            return Err(Error::Config(format!("{what}: invalid range [{}, {}]", self.0, self.1)));
        }
        Ok(())
    }

    fn draw(&self, s: &mut Stream) -> f64 {
        s.uniform(self.0, self.1)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LightParams {
    pub brightness: Range,
    pub contrast: Range,
    pub saturation: Range,
}

impl Default for LightParams {
    fn default() -> Self {
        Self {
            brightness: Range(0.5, 1.4),
            contrast: Range(0.5, 1.2),
            saturation: Range(0.3, 1.2),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpotParams {
    pub count: (u32, u32),
    /// Radius as a fraction of `min(H, W)`.
    pub radius: Range,
    pub opacity: Range,
}

impl Default for SpotParams {
    fn default() -> Self {
        Self {
            count: (5, 20),
            radius: Range(0.01, 0.05),
            opacity: Range(0.3, 0.8),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BlurParams {
    pub sigma_major: Range,
    /// Lower end of the minor-axis sigma; the upper end is the drawn major.
    pub sigma_minor_min: f64,
    pub orientation: Range,
}

impl Default for BlurParams {
    fn default() -> Self {
        Self {
            sigma_major: Range(0.5, 3.0),
            sigma_minor_min: 0.5,
            orientation: Range(0.0, std::f64::consts::PI),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CataractParams {
    /// Global blur sigma; a draw of 0 skips the blur.
    pub blur_sigma: Range,
    pub gamma: Range,
    pub tint: Range,
    pub strength: Range,
    pub contrast: Range,
    pub brightness: Range,
}

impl Default for CataractParams {
    fn default() -> Self {
        Self {
            blur_sigma: Range(1.0, 3.0),
            gamma: Range(1.0, 3.0),
            tint: Range(0.7, 0.9),
            strength: Range(0.2, 0.5),
            contrast: Range(0.9, 1.1),
            brightness: Range(0.9, 1.1),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "lowercase")]
pub enum DegradationOp {
    Light(LightParams),
    Spots(SpotParams),
    Blur(BlurParams),
    Cataract(CataractParams),
}

impl DegradationOp {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Light(_) => "light",
            Self::Spots(_) => "spots",
            Self::Blur(_) => "blur",
            Self::Cataract(_) => "cataract",
        }
    }

    /// The op with default parameter ranges.
    pub fn by_name(name: &str) -> Result<Self> {
        Ok(match name {
            "light" => Self::Light(Default::default()),
            "spots" => Self::Spots(Default::default()),
            "blur" => Self::Blur(Default::default()),
            "cataract" => Self::Cataract(Default::default()),
            other => {
                return Err(Error::Config(format!(
                    "unknown degradation op '{other}' (expected light, spots, blur or cataract)"
                )))
            }
        })
    }

    fn validate(&self) -> Result<()> {
        match self {
            Self::Light(p) => {
                p.brightness.check("light.brightness")?;
                p.contrast.check("light.contrast")?;
                p.saturation.check("light.saturation")
            }
            Self::Spots(p) => {
                if p.count.0 > p.count.1 {
                    return Err(Error::Config(format!("spots.count: invalid range {:?}", p.count)));
                }
                p.radius.check("spots.radius")?;
                p.opacity.check("spots.opacity")
            }
            Self::Blur(p) => {
                p.sigma_major.check("blur.sigma_major")?;
                p.orientation.check("blur.orientation")?;
                if !(p.sigma_major.0 > 0.0 && p.sigma_minor_min > 0.0) {
                    return Err(Error::Config("blur sigmas must be positive".into()));
                }
                Ok(())
            }
            Self::Cataract(p) => {
                for (n, r) in [
                    ("cataract.blur_sigma", p.blur_sigma),
                    ("cataract.gamma", p.gamma),
                    ("cataract.tint", p.tint),
                    ("cataract.strength", p.strength),
                    ("cataract.contrast", p.contrast),
                    ("cataract.brightness", p.brightness),
                ] {
                    r.check(n)?;
                }
                Ok(())
            }
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DegradationSpec {
    pub ops: Vec<DegradationOp>,
    #[serde(default)]
    pub seed: u64,
}

impl DegradationSpec {
    pub fn new(ops: Vec<DegradationOp>, seed: u64) -> Self {
        Self { ops, seed }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let spec: Self = serde_json::from_str(text).map_err(|e| Error::Config(format!("degradation spec: {e}")))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("spec serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.ops.iter().try_for_each(DegradationOp::validate)
    }

    /// Short label such as `light+blur`.
    pub fn label(&self) -> String {
        if self.ops.is_empty() {
            return "identity".into();
        }
        self.ops.iter().map(DegradationOp::name).collect::<Vec<_>>().join("+")
    }
}

/// The eight evaluation variants: the four single ops, then light+blur,
/// light+spots, blur+cataract and spots+cataract.
pub fn eval_preset(seed: u64) -> Vec<DegradationSpec> {
    let op = |n: &str| DegradationOp::by_name(n).expect("known op");
    [
        vec!["light"],
        vec!["spots"],
        vec!["blur"],
        vec!["cataract"],
        vec!["light", "blur"],
        vec!["light", "spots"],
        vec!["blur", "cataract"],
        vec!["spots", "cataract"],
    ]
    .into_iter()
    .map(|names| DegradationSpec::new(names.into_iter().map(op).collect(), seed))
    .collect()
}

// ---- per-image working buffer -----------------------------------------------

/// One image as three f64 planes.
struct Planes {
    h: usize,
    w: usize,
    c: Vec<Vec<f64>>,
}

impl Planes {
    fn from_tensor(t: &Tensor, n: usize) -> Self {
        Self {
            h: t.h(),
            w: t.w(),
            c: (0..t.c())
                .map(|ci| t.plane(n, ci).iter().map(|&v| v as f64).collect())
                .collect(),
        }
    }

    fn write(&self, t: &mut Tensor, n: usize) {
        for (ci, p) in self.c.iter().enumerate() {
            for (d, &v) in t.plane_mut(n, ci).iter_mut().zip(p) {
                *d = v.clamp(0.0, 1.0) as f32;
            }
        }
    }

    fn mean(&self) -> f64 {
        let total: f64 = self.c.iter().flat_map(|p| p.iter()).sum();
        total / (self.c.len() * self.h * self.w) as f64
    }

    fn contrast(&mut self, c: f64) {
        let m = self.mean();
        for v in self.c.iter_mut().flat_map(|p| p.iter_mut()) {
            *v = (*v - m) * c + m;
        }
    }

    fn scale(&mut self, b: f64) {
        for v in self.c.iter_mut().flat_map(|p| p.iter_mut()) {
            *v *= b;
        }
    }
}

fn check_image(img: &Tensor) -> Result<()> {
    if img.c() != 3 {
        return Err(Error::Shape(format!("degradation expects RGB images, got {:?}", img.dims())));
    }
    Ok(())
}

fn per_image(img: &Tensor, seed: u64, op_index: u64, f: impl Fn(&mut Planes, &mut Stream)) -> Result<Tensor> {
    check_image(img)?;
    let root = Stream::new(seed).split(op_index);
    let mut out = img.clone();
    for n in 0..img.n() {
        let mut p = Planes::from_tensor(img, n);
        f(&mut p, &mut root.split(n as u64));
        p.write(&mut out, n);
    }
    Ok(out)
}

fn light(p: &mut Planes, b: f64, c: f64, s: f64) {
    p.scale(b);
    p.contrast(c);
    if p.c.len() == 3 {
        for i in 0..p.h * p.w {
            let gray = 0.299 * p.c[0][i] + 0.587 * p.c[1][i] + 0.114 * p.c[2][i];
            for ch in p.c.iter_mut() {
                ch[i] = gray + s * (ch[i] - gray);
            }
        }
    }
}

/// Brightness, contrast (around the global mean) and saturation (towards
/// luma gray), in that order, then clamped.
pub fn adjust_light(img: &Tensor, b: f64, c: f64, s: f64) -> Result<Tensor> {
    per_image(img, 0, 0, |p, _| light(p, b, c, s))
}

/// One drawn spot.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Spot {
    pub cx: usize,
    pub cy: usize,
    pub radius: f64,
    /// +1 bright, -1 dark.
    pub polarity: f64,
    pub opacity: f64,
}

/// Replays the spot draws for an image of size `h×w`.
pub fn draw_spots(p: &SpotParams, h: usize, w: usize, s: &mut Stream) -> Vec<Spot> {
    let count = s.int_in(p.count.0 as u64, p.count.1 as u64) as usize;
    let side = h.min(w) as f64;
    (0..count)
        .map(|_| {
            let cx = s.int_in(0, w.saturating_sub(1) as u64) as usize;
            let cy = s.int_in(0, h.saturating_sub(1) as u64) as usize;
            let radius = (p.radius.draw(s) * side).max(0.5);
            let polarity = if s.next_f64() < 0.5 { -1.0 } else { 1.0 };
            let opacity = p.opacity.draw(s);
            Spot {
                cx,
                cy,
                radius,
                polarity,
                opacity,
            }
        })
        .collect()
}

fn spots(pl: &mut Planes, params: &SpotParams, s: &mut Stream) {
    for spot in draw_spots(params, pl.h, pl.w, s) {
        if spot.opacity == 0.0 {
            continue;
        }
        let reach = (2.0 * spot.radius).ceil() as isize;
        let (cx, cy) = (spot.cx as isize, spot.cy as isize);
        for y in (cy - reach).max(0)..=(cy + reach).min(pl.h as isize - 1) {
            for x in (cx - reach).max(0)..=(cx + reach).min(pl.w as isize - 1) {
                let d2 = ((x - cx) * (x - cx) + (y - cy) * (y - cy)) as f64;
                if d2 > 4.0 * spot.radius * spot.radius {
                    continue;
                }
                let a = spot.polarity * spot.opacity * (-2.0 * d2 / (spot.radius * spot.radius)).exp();
                let i = y as usize * pl.w + x as usize;
                for ch in pl.c.iter_mut() {
                    ch[i] += a;
                }
            }
        }
    }
}

/// Adds Gaussian-falloff discs (`±opacity·exp(−2d²/r²)`, cut at `2r`).
pub fn add_spots(img: &Tensor, params: &SpotParams, seed: u64) -> Result<Tensor> {
    per_image(img, seed, 0, |p, s| spots(p, params, s))
}

/// Normalized anisotropic Gaussian kernel (row-major, odd side
/// `2·ceil(3σ_major)+1`).
pub fn anisotropic_kernel(sigma_major: f64, sigma_minor: f64, theta: f64) -> (usize, Vec<f64>) {
    let r = (3.0 * sigma_major).ceil() as isize;
    let side = (2 * r + 1) as usize;
    let (sn, cs) = theta.sin_cos();
    let mut k = Vec::with_capacity(side * side);
    for v in -r..=r {
        for u in -r..=r {
            let (u, v) = (u as f64, v as f64);
            let a = u * cs + v * sn;
            let b = -u * sn + v * cs;
            k.push((-0.5 * (a * a / (sigma_major * sigma_major) + b * b / (sigma_minor * sigma_minor))).exp());
        }
    }
    let total: f64 = k.iter().sum();
    k.iter_mut().for_each(|x| *x /= total);
    (side, k)
}

fn convolve(pl: &mut Planes, side: usize, k: &[f64]) {
    let r = (side / 2) as isize;
    let (h, w) = (pl.h, pl.w);
    for ch in pl.c.iter_mut() {
        let src = ch.clone();
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for ky in 0..side {
                    let sy = reflect_index(y as isize + ky as isize - r, h);
                    let row = &src[sy * w..(sy + 1) * w];
                    let krow = &k[ky * side..(ky + 1) * side];
                    for (kx, &kv) in krow.iter().enumerate() {
                        acc += kv * row[reflect_index(x as isize + kx as isize - r, w)];
                    }
                }
                ch[y * w + x] = acc;
            }
        }
    }
}

fn blur(pl: &mut Planes, p: &BlurParams, s: &mut Stream) {
    let major = p.sigma_major.draw(s);
    let minor = s.uniform(p.sigma_minor_min.min(major), major);
    let theta = p.orientation.draw(s);
    let (side, k) = anisotropic_kernel(major, minor, theta);
    convolve(pl, side, &k);
}

/// Anisotropic Gaussian blur with random sigmas and orientation.
pub fn gaussian_blur_deg(img: &Tensor, params: &BlurParams, seed: u64) -> Result<Tensor> {
    per_image(img, seed, 0, |p, s| blur(p, params, s))
}

fn cataract_op(pl: &mut Planes, p: &CataractParams, s: &mut Stream) {
    let sigma = p.blur_sigma.draw(s);
    let gamma = p.gamma.draw(s);
    let mut tint = [p.tint.draw(s), p.tint.draw(s), p.tint.draw(s)];
    tint.sort_by(|a, b| b.total_cmp(a));
    let beta = p.strength.draw(s);
    let contrast = p.contrast.draw(s);
    let brightness = p.brightness.draw(s);

    if sigma > 0.0 {
        let t = Tensor::<f64>::from_fn([1, pl.c.len(), pl.h, pl.w], |_, c, y, x| pl.c[c][y * pl.w + x]);
        let b = gaussian_blur(&t, sigma).expect("positive sigma");
        for (c, ch) in pl.c.iter_mut().enumerate() {
            ch.copy_from_slice(b.plane(0, c));
        }
    }
    if beta != 0.0 {
        let m = radial_map(pl.h, pl.w, gamma);
        for (c, ch) in pl.c.iter_mut().enumerate() {
            let h = tint[c.min(2)];
            for (v, &mi) in ch.iter_mut().zip(&m) {
                *v = *v * (1.0 - beta * mi) + h * beta * mi;
            }
        }
    }
    pl.contrast(contrast);
    pl.scale(brightness);
}

/// `clamp(1 − r/r_max, 0, 1)^γ` around the image center, where `r_max` is
/// the center-to-corner distance.
pub fn radial_map(h: usize, w: usize, gamma: f64) -> Vec<f64> {
    let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    let r_max = (cx * cx + cy * cy).sqrt().max(f64::MIN_POSITIVE);
    let mut m = Vec::with_capacity(h * w);
    for y in 0..h {
        for x in 0..w {
            let r = ((x as f64 - cx).powi(2) + (y as f64 - cy).powi(2)).sqrt();
            m.push((1.0 - r / r_max).clamp(0.0, 1.0).powf(gamma));
        }
    }
    m
}

/// Blur, center-weighted warm halo, then a mild contrast/brightness retouch.
pub fn cataract(img: &Tensor, params: &CataractParams, seed: u64) -> Result<Tensor> {
    per_image(img, seed, 0, |p, s| cataract_op(p, params, s))
}

fn apply_op(pl: &mut Planes, op: &DegradationOp, s: &mut Stream) {
    match op {
        DegradationOp::Light(p) => {
            let b = p.brightness.draw(s);
            let c = p.contrast.draw(s);
            let sat = p.saturation.draw(s);
            light(pl, b, c, sat);
        }
        DegradationOp::Spots(p) => spots(pl, p, s),
        DegradationOp::Blur(p) => blur(pl, p, s),
        DegradationOp::Cataract(p) => cataract_op(pl, p, s),
    }
    for v in pl.c.iter_mut().flat_map(|c| c.iter_mut()) {
        *v = v.clamp(0.0, 1.0);
    }
}

/// Applies the spec's ops in order; each image of the batch gets its own
/// streams.
pub fn degrade(img: &Tensor, spec: &DegradationSpec) -> Result<Tensor> {
    check_image(img)?;
    spec.validate()?;
    let root = Stream::new(spec.seed);
    let mut out = img.clone();
    for n in 0..img.n() {
        let mut pl = Planes::from_tensor(img, n);
        for (k, op) in spec.ops.iter().enumerate() {
            apply_op(&mut pl, op, &mut root.split(k as u64).split(n as u64));
        }
        pl.write(&mut out, n);
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SplitManifest {
    pub entries: Vec<(PathBuf, Split)>,
    pub train_ratio: f64,
    pub seed: u64,
}

impl SplitManifest {
    /// Seeded shuffle of the sorted paths; the first `round(ratio·n)` go to
    /// training. Entries keep sorted path order.
    pub fn new(mut paths: Vec<PathBuf>, train_ratio: f64, seed: u64) -> Result<Self> {
        if !(0.0..=1.0).contains(&train_ratio) {
            return Err(Error::InvalidArgument(format!("train ratio {train_ratio} outside [0, 1]")));
        }
        paths.sort();
        paths.dedup();
        let mut order: Vec<usize> = (0..paths.len()).collect();
        Stream::new(seed).named("split").shuffle(&mut order);
        let n_train = (train_ratio * paths.len() as f64).round() as usize;
        let mut split = vec![Split::Test; paths.len()];
        for &i in &order[..n_train] {
            split[i] = Split::Train;
        }
        Ok(Self {
            entries: paths.into_iter().zip(split).collect(),
            train_ratio,
            seed,
        })
    }

    pub fn paths(&self, which: Split) -> impl Iterator<Item = &PathBuf> {
        self.entries.iter().filter(move |(_, s)| *s == which).map(|(p, _)| p)
    }

    pub fn count(&self, which: Split) -> usize {
        self.paths(which).count()
    }

    /// CSV with header `path,split,seed`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("path,split,seed\n");
        for (p, sp) in &self.entries {
            s.push_str(&format!("{},{},{}\n", p.display(), sp.as_str(), self.seed));
        }
        s
    }
}
