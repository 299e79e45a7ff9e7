//! Image files and directory listing.

use std::fs;
use std::path::{Path, PathBuf};

use image::{DynamicImage, ImageReader, RgbImage};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

const EXTENSIONS: [&str; 3] = ["png", "jpg", "jpeg"];

fn image_err(path: &Path, msg: impl Into<String>) -> Error {
    Error::Image {
        path: path.to_path_buf(),
        msg: msg.into(),
    }
}

/// Loads an 8- or 16-bit PNG or an 8-bit JPEG with 1 or 3 channels as a
/// `[1, 3, H, W]` tensor in [0, 1]. Grayscale is replicated.
pub fn load_image(path: &Path) -> Result<Tensor> {
    let reader = ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?;
    let img = reader.decode().map_err(|e| image_err(path, e.to_string()))?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let (data, channels, scale): (Vec<f32>, usize, f32) = match img {
        DynamicImage::ImageLuma8(b) => (b.into_raw().into_iter().map(f32::from).collect(), 1, 255.0),
        DynamicImage::ImageRgb8(b) => (b.into_raw().into_iter().map(f32::from).collect(), 3, 255.0),
        DynamicImage::ImageLuma16(b) => (b.into_raw().into_iter().map(f32::from).collect(), 1, 65535.0),
        DynamicImage::ImageRgb16(b) => (b.into_raw().into_iter().map(f32::from).collect(), 3, 65535.0),
        other => {
            return Err(image_err(
                path,
                format!(
                    "unsupported pixel format {:?} (need 1 or 3 channels, 8 or 16 bits)",
                    other.color()
                ),
            ))
        }
    };
    Ok(Tensor::from_fn([1, 3, h, w], |_, c, y, x| {
        let ch = if channels == 1 { 0 } else { c };
        data[(y * w + x) * channels + ch] / scale
    }))
}

/// Quantizes `round(v·255)` (clamped) and writes an 8-bit RGB PNG.
pub fn save_image(img: &Tensor, path: &Path) -> Result<()> {
    let [n, c, h, w] = img.dims();
    if n != 1 || c != 3 {
        return Err(Error::Shape(format!("save_image expects [1, 3, H, W], got {:?}", img.dims())));
    }
    let ext = path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase);
    if ext.as_deref() != Some("png") {
        return Err(image_err(path, "only PNG output is supported"));
    }
    let mut buf = RgbImage::new(w as u32, h as u32);
    for (x, y, px) in buf.enumerate_pixels_mut() {
        for ch in 0..3 {
            px.0[ch] = quantize(img.at(0, ch, y as usize, x as usize));
        }
    }
    buf.save(path).map_err(|e| image_err(path, e.to_string()))
}

pub fn quantize(v: f32) -> u8 {
    let q = (v as f64 * 255.0).round();
    if q.is_nan() {
        0
    } else {
        q.clamp(0.0, 255.0) as u8
    }
}

/// Bilinear resampling with half-pixel centres and edge clamping.
pub fn resize_bilinear(img: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    let [_, _, h, w] = img.dims();
    if out_h == 0 || out_w == 0 || h == 0 || w == 0 {
        return Err(Error::InvalidArgument(format!("cannot resize {h}x{w} to {out_h}x{out_w}")));
    }
    if (h, w) == (out_h, out_w) {
        return Ok(img.clone());
    }
    let src = |i: usize, out: usize, inp: usize| {
        let s = ((i as f64 + 0.5) * inp as f64 / out as f64 - 0.5).clamp(0.0, (inp - 1) as f64);
        let i0 = s.floor() as usize;
        (i0, (i0 + 1).min(inp - 1), s - i0 as f64)
    };
    let ys: Vec<_> = (0..out_h).map(|i| src(i, out_h, h)).collect();
    let xs: Vec<_> = (0..out_w).map(|i| src(i, out_w, w)).collect();
    Ok(Tensor::from_fn([img.n(), img.c(), out_h, out_w], |n, c, y, x| {
        let (y0, y1, fy) = ys[y];
        let (x0, x1, fx) = xs[x];
        let p = |yy, xx| img.at(n, c, yy, xx) as f64;
        let top = p(y0, x0) * (1.0 - fx) + p(y0, x1) * fx;
        let bot = p(y1, x0) * (1.0 - fx) + p(y1, x1) * fx;
        (top * (1.0 - fy) + bot * fy) as f32
    }))
}

pub fn is_image_path(p: &Path) -> bool {
    p.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
}

/// Image files directly inside `dir`, sorted by path.
pub fn list_images(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let p = entry.map_err(|e| Error::io(dir, e))?.path();
        if p.is_file() && is_image_path(&p) {
            out.push(p);
        }
    }
    out.sort();
    Ok(out)
}

/// File stem as UTF-8, used to name outputs.
pub fn stem(p: &Path) -> Result<String> {
    p.file_stem()
        .and_then(|s| s.to_str())
        .map(str::to_string)
        .ok_or_else(|| image_err(p, "file name is not valid UTF-8"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::{ImageBuffer, Luma, Rgb};

    #[test]
    fn lattice_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.png");
        let t = Tensor::from_fn([1, 3, 5, 7], |_, c, y, x| ((c * 35 + y * 7 + x) % 256) as f32 / 255.0);
        save_image(&t, &p).unwrap();
        assert_eq!(load_image(&p).unwrap(), t);
    }

    #[test]
    fn black_png_is_zero() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("black.png");
        save_image(&Tensor::zeros([1, 3, 4, 4]), &p).unwrap();
        assert!(load_image(&p).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn sixteen_bit_gradient() {
        let dir = tempfile::tempdir().unwrap();
        let p16 = dir.path().join("g16.png");
        let buf: ImageBuffer<Rgb<u16>, Vec<u16>> = ImageBuffer::from_fn(40, 3, |x, y| {
            Rgb([(x * 1601) as u16, (y * 20000) as u16, 65535 - (x * 1601) as u16])
        });
        buf.save(&p16).unwrap();
        let t = load_image(&p16).unwrap();
        assert_eq!(t.at(0, 0, 0, 1), 1601.0 / 65535.0);
        let p8 = dir.path().join("g8.png");
        save_image(&t, &p8).unwrap();
        let back = load_image(&p8).unwrap();
        assert!(back.max_abs_diff(&t).unwrap() <= 1.0 / 255.0);
    }

    #[test]
    fn grayscale_replicated() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("g.png");
        let buf: ImageBuffer<Luma<u8>, Vec<u8>> = ImageBuffer::from_fn(3, 2, |x, y| Luma([(x * 50 + y) as u8]));
        buf.save(&p).unwrap();
        let t = load_image(&p).unwrap();
        assert_eq!(t.dims(), [1, 3, 2, 3]);
        assert_eq!(t.at(0, 0, 1, 2), t.at(0, 2, 1, 2));
        assert_eq!(t.at(0, 1, 1, 2), 101.0 / 255.0);
    }

    #[test]
    fn unsupported_and_corrupt() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("rgba.png");
        let buf: ImageBuffer<image::Rgba<u8>, Vec<u8>> = ImageBuffer::new(2, 2);
        buf.save(&p).unwrap();
        let e = load_image(&p).unwrap_err().to_string();
        assert!(e.contains("rgba.png") && e.contains("unsupported"), "{e}");

        let bad = dir.path().join("bad.png");
        fs::write(&bad, b"not an image").unwrap();
        assert!(load_image(&bad).unwrap_err().to_string().contains("bad.png"));
        assert!(load_image(&dir.path().join("missing.png")).is_err());
        assert!(save_image(&Tensor::zeros([1, 3, 2, 2]), &dir.path().join("x.jpg")).is_err());
    }

    #[test]
    fn jpeg_readable() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.jpg");
        let buf: RgbImage = ImageBuffer::from_fn(8, 8, |_, _| Rgb([200, 100, 50]));
        buf.save(&p).unwrap();
        let t = load_image(&p).unwrap();
        assert!((t.at(0, 0, 4, 4) - 200.0 / 255.0).abs() < 0.02);
    }

    #[test]
    fn resize() {
        let t = Tensor::from_fn([1, 3, 4, 4], |_, c, y, x| (c + y * 4 + x) as f32);
        assert_eq!(resize_bilinear(&t, 4, 4).unwrap(), t);
        let half = resize_bilinear(&t, 2, 2).unwrap();
        // half-pixel centres land between source pixels
        assert_eq!(half.at(0, 0, 0, 0), (0.0 + 1.0 + 4.0 + 5.0) / 4.0);
        let c = Tensor::full([1, 3, 5, 3], 0.25f32);
        assert!(resize_bilinear(&c, 11, 7).unwrap().data().iter().all(|&v| v == 0.25));
    }

    #[test]
    fn listing() {
        let dir = tempfile::tempdir().unwrap();
        for n in ["b.png", "a.JPG", "c.txt"] {
            fs::write(dir.path().join(n), b"").unwrap();
        }
        let names: Vec<_> = list_images(dir.path())
            .unwrap()
            .iter()
            .map(|p| p.file_name().unwrap().to_str().unwrap().to_string())
            .collect();
        assert_eq!(names, ["a.JPG", "b.png"]);
    }
}
