//! The five distortion operators. `severity == Undistorted` is a bit-exact
//! identity; every output pixel stays in [0,1].

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::image::ImagePlane;
use crate::rng;

use super::{Aspect, DistortionSpec, Severity};

/// Applies one distortion. `seed` drives the stochastic operators (noise);
/// deterministic operators ignore it.
pub fn apply_distortion(img: &ImagePlane, spec: &DistortionSpec, seed: u64) -> ImagePlane {
    if spec.severity == Severity::Undistorted {
        return img.clone();
    }
    match spec.aspect {
        Aspect::Brightness => brightness(img, spec.gain.unwrap_or(1.0)),
        Aspect::Color => color(img, spec.blend.unwrap_or(0.0), spec.cast.unwrap_or(0.0)),
        Aspect::Noise => noise(img, spec.sigma.unwrap_or(0.0), seed),
        Aspect::Artifacts => artifacts(img, spec.blend.unwrap_or(0.0)),
        Aspect::Blurriness => blur(img, spec.sigma.unwrap_or(0.0)),
    }
}

fn map_pixels(img: &ImagePlane, f: impl Fn(f64) -> f64) -> ImagePlane {
    let mut out = img.clone();
    for v in out.pixels_mut() {
        *v = f(*v).clamp(0.0, 1.0);
    }
    out
}

fn brightness(img: &ImagePlane, gain: f64) -> ImagePlane {
    map_pixels(img, |v| gain * v)
}

/// Blend toward per-pixel gray by `blend`, then shift channels by the
/// signed cast: (1+cast, 1, 1-cast).
fn color(img: &ImagePlane, blend: f64, cast: f64) -> ImagePlane {
    let mut out = img.clone();
    let (h, w) = (out.height(), out.width());
    for y in 0..h {
        for x in 0..w {
            let gray = (img.at(y, x, 0) + img.at(y, x, 1) + img.at(y, x, 2)) / 3.0;
            let gains = [1.0 + cast, 1.0, 1.0 - cast];
            for c in 0..3 {
                let desat = img.at(y, x, c) * (1.0 - blend) + gray * blend;
                out.set(y, x, c, desat * gains[c]);
            }
        }
    }
    out
}

fn noise(img: &ImagePlane, sigma: f64, seed: u64) -> ImagePlane {
    let mut r = rng::stream(seed, "distort-noise");
    let dist = Normal::new(0.0, sigma).expect("sigma is finite");
    let mut out = img.clone();
    for v in out.pixels_mut() {
        *v = (*v + dist.sample(&mut r)).clamp(0.0, 1.0);
    }
    let _: u64 = r.gen(); // keep the stream length independent of image size changes
    out
}

/// Blockiness: blend each 8×8 block toward its own mean.
fn artifacts(img: &ImagePlane, blend: f64) -> ImagePlane {
    const BLOCK: usize = 8;
    let (h, w) = (img.height(), img.width());
    let mut out = img.clone();
    for by in (0..h).step_by(BLOCK) {
        for bx in (0..w).step_by(BLOCK) {
            let bh = BLOCK.min(h - by);
            let bw = BLOCK.min(w - bx);
            let mut mean = [0.0; 3];
            for y in by..by + bh {
                for x in bx..bx + bw {
                    for (c, m) in mean.iter_mut().enumerate() {
                        *m += img.at(y, x, c);
                    }
                }
            }
            let count = (bh * bw) as f64;
            for m in &mut mean {
                *m /= count;
            }
            for y in by..by + bh {
                for x in bx..bx + bw {
                    for c in 0..3 {
                        out.set(y, x, c, img.at(y, x, c) * (1.0 - blend) + mean[c] * blend);
                    }
                }
            }
        }
    }
    out
}

/// Separable Gaussian blur with kernel radius ceil(3*sigma) and replicated
/// edges; the kernel is normalized so constant regions keep their value.
fn blur(img: &ImagePlane, sigma: f64) -> ImagePlane {
    let radius = (3.0 * sigma).ceil() as i64;
    let mut kernel = Vec::with_capacity((2 * radius + 1) as usize);
    for i in -radius..=radius {
        kernel.push((-(i as f64) * (i as f64) / (2.0 * sigma * sigma)).exp());
    }
    let total: f64 = kernel.iter().sum();
    for k in &mut kernel {
        *k /= total;
    }
    let (h, w) = (img.height(), img.width());
    let pass = |src: &ImagePlane, horizontal: bool| {
        let mut dst = src.clone();
        for y in 0..h {
            for x in 0..w {
                for c in 0..3 {
                    let mut acc = 0.0;
                    for (ki, kv) in kernel.iter().enumerate() {
                        let off = ki as i64 - radius;
                        let (sy, sx) = if horizontal {
                            (y as i64, (x as i64 + off).clamp(0, w as i64 - 1))
                        } else {
                            ((y as i64 + off).clamp(0, h as i64 - 1), x as i64)
                        };
                        acc += kv * src.at(sy as usize, sx as usize, c);
                    }
                    dst.set(y, x, c, acc);
                }
            }
        }
        dst
    };
    pass(&pass(img, true), false)
}
