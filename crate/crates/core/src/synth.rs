//! Procedural fundus-like images for tests and demos: a circular field of
//! view with a reddish radial gradient, an optic disc, a darker macula and
//! branching vessels.

use crate::rng::Stream;
use crate::tensor::Tensor;

struct Vessel {
    pts: Vec<(f64, f64)>,
    width: f64,
}

fn grow(s: &mut Stream, start: (f64, f64), angle: f64, width: f64, len: usize, out: &mut Vec<Vessel>, depth: usize) {
    let mut pts = vec![start];
    let (mut x, mut y, mut a) = (start.0, start.1, angle);
    let step = 0.02;
    for i in 0..len {
        a += 0.25 * (s.next_f64() - 0.5);
        x += step * a.cos();
        y += step * a.sin();
        pts.push((x, y));
        if depth < 2 && i > 4 && s.next_f64() < 0.06 {
            let side = if s.next_f64() < 0.5 { -1.0 } else { 1.0 };
            let branch = a + side * s.uniform(0.4, 0.9);
            grow(s, (x, y), branch, width * 0.7, len / 2, out, depth + 1);
        }
    }
    out.push(Vessel { pts, width });
}

fn segment_dist(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let t = (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / (dx * dx + dy * dy).max(1e-12)).clamp(0.0, 1.0);
    ((p.0 - a.0 - t * dx).powi(2) + (p.1 - a.1 - t * dy).powi(2)).sqrt()
}

/// A `[1, 3, size, size]` image in [0, 1], a pure function of `seed`.
pub fn fundus(size: usize, seed: u64) -> Tensor {
    let mut s = Stream::new(seed).named("fundus");
    // coordinates in [-1, 1]
    let disc = (
        s.uniform(0.3, 0.5) * if s.next_f64() < 0.5 { -1.0 } else { 1.0 },
        s.uniform(-0.15, 0.15),
    );
    let disc_r = s.uniform(0.12, 0.18);
    let macula = (-disc.0 * 0.9, disc.1 + s.uniform(-0.05, 0.05));
    let base = [s.uniform(0.7, 0.85), s.uniform(0.3, 0.42), s.uniform(0.12, 0.2)];
    let mut vessels = Vec::new();
    for k in 0..4 {
        let a = k as f64 * std::f64::consts::FRAC_PI_2 + s.uniform(-0.4, 0.4) + 0.7;
        let width = s.uniform(0.018, 0.03);
        grow(&mut s, disc, a, width, 40, &mut vessels, 0);
    }
    let texture = s.split(1);

    let mut img = Tensor::zeros([1, 3, size, size]);
    let h = 2.0 / size as f64;
    for yi in 0..size {
        for xi in 0..size {
            let p = (-1.0 + (xi as f64 + 0.5) * h, -1.0 + (yi as f64 + 0.5) * h);
            let r = (p.0 * p.0 + p.1 * p.1).sqrt();
            let fov = ((0.95 - r) / 0.04).clamp(0.0, 1.0);
            if fov <= 0.0 {
                continue;
            }
            let shade = 1.0 - 0.35 * r * r;
            let dd = ((p.0 - disc.0).powi(2) + (p.1 - disc.1).powi(2)).sqrt();
            let disc_w = (-(dd / disc_r).powi(4)).exp();
            let dm = ((p.0 - macula.0).powi(2) + (p.1 - macula.1).powi(2)).sqrt();
            let mac_w = 0.35 * (-(dm / 0.18).powi(2)).exp();
            let mut vessel = 0.0f64;
            for v in &vessels {
                for w in v.pts.windows(2) {
                    let d = segment_dist(p, w[0], w[1]);
                    if d < 2.0 * v.width {
                        vessel = vessel.max((-(d / v.width).powi(2)).exp());
                    }
                }
            }
            let noise = 0.02 * (texture.at((yi * size + xi) as u64) as f64 / u64::MAX as f64 - 0.5);
            let disc_col = [0.98, 0.85, 0.6];
            let vessel_col = [0.45, 0.08, 0.05];
            for c in 0..3 {
                let mut v = base[c] * shade * (1.0 - mac_w);
                v = v * (1.0 - disc_w) + disc_col[c] * disc_w;
                v = v * (1.0 - 0.8 * vessel) + vessel_col[c] * 0.8 * vessel;
                v = (v + noise) * fov;
                img.set(0, c, yi, xi, v.clamp(0.0, 1.0) as f32);
            }
        }
    }
    img
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_bounded() {
        let a = fundus(48, 3);
        assert_eq!(a, fundus(48, 3));
        assert_ne!(a, fundus(48, 4));
        let (lo, hi) = a.min_max();
        assert!(lo >= 0.0 && hi <= 1.0);
        // corners lie outside the field of view
        assert_eq!(a.at(0, 0, 0, 0), 0.0);
        // red dominates inside
        let (r, b) = (a.plane(0, 0).iter().sum::<f32>(), a.plane(0, 2).iter().sum::<f32>());
        assert!(r > 2.0 * b);
    }
}
