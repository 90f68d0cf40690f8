use super::{ImageBuffer, CHANNELS};
use crate::rng::SeededRng;

#[inline]
fn to_u8(v: f64) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

pub(super) fn invert(img: &ImageBuffer) -> ImageBuffer {
    let data = img.data().iter().map(|v| 255 - v).collect();
    ImageBuffer::new(img.width(), img.height(), data).expect("same shape")
}

/// Horizontal then vertical flip: `(x, y) -> (W-1-x, H-1-y)`.
pub(super) fn rotate_half_turn(img: &ImageBuffer) -> ImageBuffer {
    let mut data = Vec::with_capacity(img.data().len());
    for px in img.data().chunks_exact(CHANNELS).rev() {
        data.extend_from_slice(px);
    }
    ImageBuffer::new(img.width(), img.height(), data).expect("same shape")
}

fn side_from_fraction(frac: f64, full: usize) -> usize {
    ((frac * full as f64).round() as usize).clamp(1, full)
}

pub(super) fn random_crop(
    img: &ImageBuffer,
    min_frac: f64,
    max_frac: f64,
    seed: u64,
) -> ImageBuffer {
    let (w, h) = (img.width(), img.height());
    let mut rng = SeededRng::new(seed);
    let cw = side_from_fraction(rng.uniform_range(min_frac, max_frac), w);
    let ch = side_from_fraction(rng.uniform_range(min_frac, max_frac), h);
    let x0 = rng.int_inclusive(0, w - cw);
    let y0 = rng.int_inclusive(0, h - ch);
    resample_bilinear(img, x0, y0, cw, ch)
}

/// Resample the window `[x0, x0+cw) x [y0, y0+ch)` to the full image size
/// using pixel-center alignment.
fn resample_bilinear(img: &ImageBuffer, x0: usize, y0: usize, cw: usize, ch: usize) -> ImageBuffer {
    let (w, h) = (img.width(), img.height());
    let sx = cw as f64 / w as f64;
    let sy = ch as f64 / h as f64;
    let src = |x: usize, y: usize, c: usize| f64::from(img.data()[(y * w + x) * CHANNELS + c]);
    let mut data = Vec::with_capacity(w * h * CHANNELS);
    for y in 0..h {
        let fy = ((y as f64 + 0.5) * sy - 0.5).clamp(0.0, (ch - 1) as f64);
        let ya = fy.floor() as usize;
        let yb = (ya + 1).min(ch - 1);
        let ty = fy - ya as f64;
        for x in 0..w {
            let fx = ((x as f64 + 0.5) * sx - 0.5).clamp(0.0, (cw - 1) as f64);
            let xa = fx.floor() as usize;
            let xb = (xa + 1).min(cw - 1);
            let tx = fx - xa as f64;
            for c in 0..CHANNELS {
                let top = src(x0 + xa, y0 + ya, c) * (1.0 - tx) + src(x0 + xb, y0 + ya, c) * tx;
                let bot = src(x0 + xa, y0 + yb, c) * (1.0 - tx) + src(x0 + xb, y0 + yb, c) * tx;
                data.push(to_u8(top * (1.0 - ty) + bot * ty));
            }
        }
    }
    ImageBuffer::new(w, h, data).expect("same shape")
}

pub(super) fn random_erase(
    img: &ImageBuffer,
    area: (f64, f64),
    aspect: (f64, f64),
    fill: [u8; 3],
    seed: u64,
) -> ImageBuffer {
    let (w, h) = (img.width(), img.height());
    let mut rng = SeededRng::new(seed);
    let target = rng.uniform_range(area.0, area.1) * (w * h) as f64;
    let ratio = rng.uniform_range(aspect.0, aspect.1);
    let eh = ((target * ratio).sqrt().round() as usize).clamp(1, h);
    let ew = ((target / ratio).sqrt().round() as usize).clamp(1, w);
    let x0 = rng.int_inclusive(0, w - ew);
    let y0 = rng.int_inclusive(0, h - eh);
    let mut out = img.clone();
    for y in y0..y0 + eh {
        for x in x0..x0 + ew {
            out.set_pixel(x, y, fill);
        }
    }
    out
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as i64;
    let mut k: Vec<f64> = (-radius..=radius)
        .map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= sum);
    k
}

/// Separable Gaussian blur over one f64 plane with clamp-to-edge borders.
fn blur_plane(plane: &[f64], w: usize, h: usize, kernel: &[f64]) -> Vec<f64> {
    let r = (kernel.len() / 2) as i64;
    let clamp = |v: i64, n: usize| v.clamp(0, n as i64 - 1) as usize;
    let mut tmp = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            tmp[y * w + x] = kernel
                .iter()
                .enumerate()
                .map(|(i, kv)| kv * plane[y * w + clamp(x as i64 + i as i64 - r, w)])
                .sum();
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            out[y * w + x] = kernel
                .iter()
                .enumerate()
                .map(|(i, kv)| kv * tmp[clamp(y as i64 + i as i64 - r, h) * w + x])
                .sum();
        }
    }
    out
}

pub(super) fn unsharp_mask(img: &ImageBuffer, sigma: f64, strength: f64) -> ImageBuffer {
    let (w, h) = (img.width(), img.height());
    let kernel = gaussian_kernel(sigma);
    let mut data = img.data().to_vec();
    for c in 0..CHANNELS {
        let plane: Vec<f64> = img.data()[c..]
            .iter()
            .step_by(CHANNELS)
            .map(|&v| f64::from(v))
            .collect();
        let blurred = blur_plane(&plane, w, h, &kernel);
        for (i, (orig, blur)) in plane.iter().zip(&blurred).enumerate() {
            data[i * CHANNELS + c] = to_u8(orig + strength * (orig - blur));
        }
    }
    ImageBuffer::new(w, h, data).expect("same shape")
}

pub(crate) fn luma(rgb: [u8; 3]) -> f64 {
    0.299 * f64::from(rgb[0]) + 0.587 * f64::from(rgb[1]) + 0.114 * f64::from(rgb[2])
}

pub(super) fn sobel_edges(img: &ImageBuffer) -> ImageBuffer {
    let (w, h) = (img.width(), img.height());
    let lum: Vec<f64> = img.pixels().map(luma).collect();
    let at = |x: i64, y: i64| {
        let xc = x.clamp(0, w as i64 - 1) as usize;
        let yc = y.clamp(0, h as i64 - 1) as usize;
        lum[yc * w + xc]
    };
    let mut mag = vec![0.0f64; w * h];
    for y in 0..h as i64 {
        for x in 0..w as i64 {
            let gx = (at(x + 1, y - 1) + 2.0 * at(x + 1, y) + at(x + 1, y + 1))
                - (at(x - 1, y - 1) + 2.0 * at(x - 1, y) + at(x - 1, y + 1));
            let gy = (at(x - 1, y + 1) + 2.0 * at(x, y + 1) + at(x + 1, y + 1))
                - (at(x - 1, y - 1) + 2.0 * at(x, y - 1) + at(x + 1, y - 1));
            mag[y as usize * w + x as usize] = (gx * gx + gy * gy).sqrt();
        }
    }
    let max = mag.iter().copied().fold(0.0, f64::max);
    let mut data = Vec::with_capacity(w * h * CHANNELS);
    for m in mag {
        let v = if max > 0.0 { to_u8(255.0 * m / max) } else { 0 };
        data.extend_from_slice(&[v, v, v]);
    }
    ImageBuffer::new(w, h, data).expect("same shape")
}

/// Cumulative product `prod_{i=1..=step} (1 - beta_i)` with `beta_i` spaced
/// linearly from `beta_start` (i = 1) to `beta_end` (i = num_steps).
pub(crate) fn linear_alpha_bar(
    beta_start: f64,
    beta_end: f64,
    num_steps: usize,
    step: usize,
) -> f64 {
    let delta = if num_steps > 1 {
        (beta_end - beta_start) / (num_steps - 1) as f64
    } else {
        0.0
    };
    (0..step)
        .map(|i| 1.0 - (beta_start + delta * i as f64))
        .product()
}

/// `x_t = sqrt(alpha_bar) x0 + sqrt(1 - alpha_bar) eps` in `[-1, 1]` pixel space.
/// One normal draw per sample, in buffer order.
pub(super) fn diffusion_noise(img: &ImageBuffer, alpha_bar: f64, seed: u64) -> ImageBuffer {
    let mut rng = SeededRng::new(seed);
    let signal = alpha_bar.sqrt();
    let noise = (1.0 - alpha_bar).sqrt();
    let data = img
        .data()
        .iter()
        .map(|&v| {
            let x0 = f64::from(v) / 127.5 - 1.0;
            let xt = (signal * x0 + noise * rng.normal()).clamp(-1.0, 1.0);
            to_u8((xt + 1.0) * 127.5)
        })
        .collect();
    ImageBuffer::new(img.width(), img.height(), data).expect("same shape")
}
