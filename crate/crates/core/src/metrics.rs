//! Image quality metrics and per-image score tables.
//!
//! Both metrics assume images in [0, 1] (peak 1.0).

use crate::error::{Error, Result};
use crate::tensor::{reflect_index, Scalar, Tensor};

pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;

/// Normalized 1-D taps of the 11-point, σ = 1.5 SSIM window.
pub fn ssim_taps() -> [f64; SSIM_WINDOW] {
    let r = (SSIM_WINDOW / 2) as f64;
    let mut t = [0.0; SSIM_WINDOW];
    for (i, v) in t.iter_mut().enumerate() {
        let d = i as f64 - r;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = t.iter().sum();
    t.iter_mut().for_each(|v| *v /= s);
    t
}

fn check_pair<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, what: &str) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::Shape(format!("{what}: {:?} vs {:?}", a.dims(), b.dims())));
    }
    if a.is_empty() {
        return Err(Error::Shape(format!("{what}: empty images")));
    }
    Ok(())
}

/// Separable Gaussian filter of one plane, reflect padded.
fn filter(src: &[f64], h: usize, w: usize, taps: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let r = (SSIM_WINDOW / 2) as isize;
    let mut tmp = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (k, &t) in taps.iter().enumerate() {
                acc += t * src[y * w + reflect_index(x as isize + k as isize - r, w)];
            }
            tmp[y * w + x] = acc;
        }
    }
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (k, &t) in taps.iter().enumerate() {
                acc += t * tmp[reflect_index(y as isize + k as isize - r, h) * w + x];
            }
            out[y * w + x] = acc;
        }
    }
    out
}

/// Per-pixel SSIM map of one plane pair.
pub fn ssim_map(a: &[f64], b: &[f64], h: usize, w: usize) -> Vec<f64> {
    let taps = ssim_taps();
    let c1 = (SSIM_K1 * 1.0).powi(2);
    let c2 = (SSIM_K2 * 1.0).powi(2);
    let prod = |f: &dyn Fn(usize) -> f64| (0..h * w).map(f).collect::<Vec<f64>>();
    let mu_a = filter(a, h, w, &taps);
    let mu_b = filter(b, h, w, &taps);
    let aa = filter(&prod(&|i| a[i] * a[i]), h, w, &taps);
    let bb = filter(&prod(&|i| b[i] * b[i]), h, w, &taps);
    let ab = filter(&prod(&|i| a[i] * b[i]), h, w, &taps);
    (0..h * w)
        .map(|i| {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let va = aa[i] - ma * ma;
            let vb = bb[i] - mb * mb;
            let cov = ab[i] - ma * mb;
            ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2))
        })
        .collect()
}

/// Gaussian-windowed SSIM (11×11, σ = 1.5, K1 = 0.01, K2 = 0.03, range 1),
/// averaged over pixels, channels and batch. Windows near the border are
/// reflect padded so every pixel contributes.
pub fn ssim<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<f64> {
    check_pair(a, b, "ssim")?;
    let [n, c, h, w] = a.dims();
    let mut total = 0.0;
    for ni in 0..n {
        for ci in 0..c {
            let pa: Vec<f64> = a.plane(ni, ci).iter().map(|v| v.f64()).collect();
            let pb: Vec<f64> = b.plane(ni, ci).iter().map(|v| v.f64()).collect();
            total += ssim_map(&pa, &pb, h, w).iter().sum::<f64>();
        }
    }
    Ok(total / a.len() as f64)
}

pub fn mse<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<f64> {
    check_pair(a, b, "mse")?;
    let s: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| {
            let d = x.f64() - y.f64();
            d * d
        })
        .sum();
    Ok(s / a.len() as f64)
}

/// `10·log10(1/MSE)`; `+∞` for identical images.
pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse <= 0.0 {
        f64::INFINITY
    } else {
        10.0 * (1.0 / mse).log10()
    }
}

pub fn psnr<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<f64> {
    Ok(psnr_from_mse(mse(a, b)?))
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScoreRow {
    pub image: String,
    pub method: String,
    pub ssim: f64,
    pub psnr: f64,
}

/// Mean and sample standard deviation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
    /// Values excluded from the summary because they were infinite.
    pub infinite: usize,
}

impl Summary {
    pub fn of(values: impl IntoIterator<Item = f64>) -> Self {
        let mut infinite = 0;
        let finite: Vec<f64> = values
            .into_iter()
            .filter(|v| {
                let keep = v.is_finite();
                infinite += usize::from(!keep);
                keep
            })
            .collect();
        let n = finite.len();
        let mean = if n == 0 {
            f64::NAN
        } else {
            finite.iter().sum::<f64>() / n as f64
        };
        let std = if n < 2 {
            0.0
        } else {
            (finite.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        };
        Self { mean, std, n, infinite }
    }
}

impl std::fmt::Display for Summary {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:.4} ± {:.4}", self.mean, self.std)?;
        if self.infinite > 0 {
            write!(f, " ({} infinite)", self.infinite)?;
        }
        Ok(())
    }
}

fn fmt_value(v: f64) -> String {
    if v.is_infinite() {
        if v > 0.0 {
            "inf".into()
        } else {
            "-inf".into()
        }
    } else {
        format!("{v:.6}")
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ScoreTable {
    pub rows: Vec<ScoreRow>,
}

impl ScoreTable {
    pub fn push(&mut self, image: impl Into<String>, method: impl Into<String>, ssim: f64, psnr: f64) {
        self.rows.push(ScoreRow {
            image: image.into(),
            method: method.into(),
            ssim,
            psnr,
        });
    }

    /// Methods in first-seen order.
    pub fn methods(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for r in &self.rows {
            if !out.contains(&r.method) {
                out.push(r.method.clone());
            }
        }
        out
    }

    pub fn column(&self, method: &str, f: impl Fn(&ScoreRow) -> f64) -> Vec<f64> {
        self.rows.iter().filter(|r| r.method == method).map(f).collect()
    }

    pub fn ssim_summary(&self, method: &str) -> Summary {
        Summary::of(self.column(method, |r| r.ssim))
    }

    pub fn psnr_summary(&self, method: &str) -> Summary {
        Summary::of(self.column(method, |r| r.psnr))
    }

    /// CSV with header `image,method,ssim,psnr`, rows in insertion order.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("image,method,ssim,psnr\n");
        for r in &self.rows {
            s.push_str(&format!(
                "{},{},{},{}\n",
                r.image,
                r.method,
                fmt_value(r.ssim),
                fmt_value(r.psnr)
            ));
        }
        s
    }

    /// Parses the format written by [`ScoreTable::to_csv`].
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next().map(str::trim) != Some("image,method,ssim,psnr") {
            return Err(Error::InvalidArgument(
                "score table: expected header `image,method,ssim,psnr`".into(),
            ));
        }
        let mut t = Self::default();
        for (i, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let f: Vec<&str> = line.split(',').collect();
            let num = |s: &str| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::InvalidArgument(format!("score table line {}: bad number `{s}`", i + 2)))
            };
            if f.len() != 4 {
                return Err(Error::InvalidArgument(format!(
                    "score table line {}: expected 4 fields",
                    i + 2
                )));
            }
            t.push(f[0], f[1], num(f[2])?, num(f[3])?);
        }
        Ok(t)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Stream;

    fn rand_t(dims: [usize; 4], seed: u64) -> Tensor<f64> {
        let mut s = Stream::new(seed);
        Tensor::from_fn(dims, |_, _, _, _| s.next_f64())
    }

    /// Direct 2-D window sums, no separability.
    fn brute_ssim(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
        let [n, c, h, w] = a.dims();
        let t = ssim_taps();
        let r = 5isize;
        let (c1, c2) = (1e-4, 9e-4);
        let mut total = 0.0;
        for ni in 0..n {
            for ci in 0..c {
                for y in 0..h {
                    for x in 0..w {
                        let (mut ma, mut mb, mut aa, mut bb, mut ab) = (0.0, 0.0, 0.0, 0.0, 0.0);
                        for dy in -r..=r {
                            for dx in -r..=r {
                                let wt = t[(dy + r) as usize] * t[(dx + r) as usize];
                                let yy = reflect_index(y as isize + dy, h);
                                let xx = reflect_index(x as isize + dx, w);
                                let (va, vb) = (a.at(ni, ci, yy, xx), b.at(ni, ci, yy, xx));
                                ma += wt * va;
                                mb += wt * vb;
                                aa += wt * va * va;
                                bb += wt * vb * vb;
                                ab += wt * va * vb;
                            }
                        }
                        let (sa, sb, sab) = (aa - ma * ma, bb - mb * mb, ab - ma * mb);
                        total += ((2.0 * ma * mb + c1) * (2.0 * sab + c2)) / ((ma * ma + mb * mb + c1) * (sa + sb + c2));
                    }
                }
            }
        }
        total / a.len() as f64
    }

    #[test]
    fn ssim_matches_brute_force() {
        for seed in 0..5 {
            let a = rand_t([1, 3, 8, 8], seed);
            let b = rand_t([1, 3, 8, 8], seed + 100);
            assert!((ssim(&a, &b).unwrap() - brute_ssim(&a, &b)).abs() < 1e-6);
        }
        let a = rand_t([2, 1, 13, 17], 9);
        let b = a.map(|v| (v * 0.8 + 0.1).min(1.0));
        assert!((ssim(&a, &b).unwrap() - brute_ssim(&a, &b)).abs() < 1e-6);
    }

    #[test]
    fn ssim_identity_and_constants() {
        let a = rand_t([1, 3, 16, 16], 1);
        assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        let z = Tensor::<f64>::zeros([1, 1, 8, 8]);
        let o = Tensor::<f64>::full([1, 1, 8, 8], 1.0);
        let want = 1e-4 / (1.0 + 1e-4);
        assert!((ssim(&z, &o).unwrap() - want).abs() < 1e-12);
        assert!((want - 9.999e-5).abs() < 1e-8);
    }

    #[test]
    fn ssim_symmetric_and_bounded() {
        for seed in 0..5 {
            let a = rand_t([1, 3, 12, 12], seed);
            let b = rand_t([1, 3, 12, 12], seed + 7);
            let (x, y) = (ssim(&a, &b).unwrap(), ssim(&b, &a).unwrap());
            assert!((x - y).abs() < 1e-7);
            assert!(x <= 1.0);
        }
        assert!(ssim(&rand_t([1, 1, 4, 4], 0), &rand_t([1, 1, 4, 5], 0)).is_err());
    }

    #[test]
    fn psnr_values() {
        assert_eq!(psnr_from_mse(0.01), 20.0);
        assert!((psnr_from_mse(0.0025) - 26.0206).abs() < 1e-4);
        let a = rand_t([1, 3, 4, 4], 3);
        assert_eq!(psnr(&a, &a).unwrap(), f64::INFINITY);
        let b = a.map(|v| v + 0.1);
        assert!((psnr(&a, &b).unwrap() - 20.0).abs() < 1e-9);
        let mut last = f64::INFINITY;
        for i in 1..50 {
            let p = psnr_from_mse(i as f64 * 1e-3);
            assert!(p < last);
            last = p;
        }
    }

    #[test]
    fn score_table_csv_and_summary() {
        let mut t = ScoreTable::default();
        t.push("a", "degraded", 0.5, 20.0);
        t.push("a", "enhanced", 0.7, f64::INFINITY);
        t.push("b", "degraded", 0.7, 22.0);
        assert_eq!(t.methods(), ["degraded", "enhanced"]);
        let s = t.psnr_summary("degraded");
        assert_eq!((s.mean, s.n), (21.0, 2));
        assert!((s.std - 2f64.sqrt()).abs() < 1e-12);
        assert_eq!(t.psnr_summary("enhanced").infinite, 1);
        assert_eq!(
            t.to_csv(),
            "image,method,ssim,psnr\na,degraded,0.500000,20.000000\na,enhanced,0.700000,inf\nb,degraded,0.700000,22.000000\n"
        );
    }

    #[test]
    fn score_table_parse() {
        let mut t = ScoreTable::default();
        t.push("a", "m", 0.25, f64::INFINITY);
        t.push("b", "m", -0.5, 12.5);
        assert_eq!(ScoreTable::from_csv(&t.to_csv()).unwrap(), t);
        assert!(ScoreTable::from_csv("x,y\n").is_err());
        assert!(ScoreTable::from_csv("image,method,ssim,psnr\na,m,zz,1\n").is_err());
    }
}
