//! Procedural 64×64 reference textures, one generator per texture kind.
//! Everything is a pure function of (spec, seed).

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::image::ImagePlane;
use crate::rng;
use crate::vision::INPUT_SIZE;

use super::{TextureKind, TextureSpec};

const N: usize = INPUT_SIZE;

type Rgb = [f64; 3];

pub fn synth_reference(spec: &TextureSpec, seed: u64) -> ImagePlane {
    let mut r = rng::indexed_stream(seed, "texture", spec.palette_seed ^ spec.kind as u64);
    match spec.kind {
        TextureKind::ObjectEdges => object_edges(spec, &mut r),
        TextureKind::Bricks => bricks(spec, &mut r),
        TextureKind::Fabrics => fabrics(spec, &mut r),
        TextureKind::PlantsOrFoliage => plants(spec, &mut r),
        TextureKind::Architectures => architectures(spec, &mut r),
        TextureKind::ArtificialStrips => strips(spec, &mut r),
        TextureKind::HairsOrFurs => hairs(spec, &mut r),
        TextureKind::Faces => face(spec, &mut r),
        TextureKind::SkyOrClouds => sky(spec, &mut r),
        TextureKind::StonesOrGround => stones(spec, &mut r),
        TextureKind::WaterSurface => water(spec, &mut r),
    }
}

fn mix(a: Rgb, b: Rgb, t: f64) -> Rgb {
    let t = t.clamp(0.0, 1.0);
    [
        a[0] + (b[0] - a[0]) * t,
        a[1] + (b[1] - a[1]) * t,
        a[2] + (b[2] - a[2]) * t,
    ]
}

fn jitter(base: Rgb, amount: f64, r: &mut ChaCha8Rng) -> Rgb {
    [
        (base[0] + r.gen_range(-amount..amount)).clamp(0.0, 1.0),
        (base[1] + r.gen_range(-amount..amount)).clamp(0.0, 1.0),
        (base[2] + r.gen_range(-amount..amount)).clamp(0.0, 1.0),
    ]
}

fn paint(f: impl Fn(usize, usize) -> Rgb) -> ImagePlane {
    let mut img = ImagePlane::filled(N, N, 0.0);
    for y in 0..N {
        for x in 0..N {
            let c = f(x, y);
            for (ch, v) in c.iter().enumerate() {
                img.set(y, x, ch, *v);
            }
        }
    }
    img
}

/// Deterministic per-cell hash in [0,1).
fn cell_hash(x: i64, y: i64, salt: u64) -> f64 {
    let mut z = (x as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15)
        ^ (y as u64).wrapping_mul(0xc2b2_ae3d_27d4_eb4f)
        ^ salt;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^= z >> 31;
    (z >> 11) as f64 / (1u64 << 53) as f64
}

fn smoothstep(t: f64) -> f64 {
    t * t * (3.0 - 2.0 * t)
}

/// Bilinear value noise over a `cells_x` × `cells_y` lattice.
fn value_noise(x: f64, y: f64, cells_x: f64, cells_y: f64, salt: u64) -> f64 {
    let fx = x / N as f64 * cells_x;
    let fy = y / N as f64 * cells_y;
    let x0 = fx.floor();
    let y0 = fy.floor();
    let tx = smoothstep(fx - x0);
    let ty = smoothstep(fy - y0);
    let v00 = cell_hash(x0 as i64, y0 as i64, salt);
    let v10 = cell_hash(x0 as i64 + 1, y0 as i64, salt);
    let v01 = cell_hash(x0 as i64, y0 as i64 + 1, salt);
    let v11 = cell_hash(x0 as i64 + 1, y0 as i64 + 1, salt);
    let a = v00 + (v10 - v00) * tx;
    let b = v01 + (v11 - v01) * tx;
    a + (b - a) * ty
}

fn object_edges(_spec: &TextureSpec, r: &mut ChaCha8Rng) -> ImagePlane {
    let colors: Vec<Rgb> = (0..4)
        .map(|_| jitter([r.gen_range(0.1..0.9), r.gen_range(0.1..0.9), r.gen_range(0.1..0.9)], 0.05, r))
        .collect();
    let edges: Vec<(f64, f64, f64)> = (0..3)
        .map(|_| {
            let px = r.gen_range(16.0..48.0);
            let py = r.gen_range(16.0..48.0);
            let theta = r.gen_range(0.0..std::f64::consts::PI);
            (px, py, theta)
        })
        .collect();
    paint(move |x, y| {
        let mut region = 0usize;
        for (k, (px, py, theta)) in edges.iter().enumerate() {
            let s = (x as f64 - px) * -theta.sin() + (y as f64 - py) * theta.cos();
            if s > 0.0 {
                region |= 1 << k;
            }
        }
        colors[region % colors.len()]
    })
}

fn bricks(spec: &TextureSpec, r: &mut ChaCha8Rng) -> ImagePlane {
    let bw = (N as f64 / spec.frequency).clamp(6.0, 24.0) as usize;
    let bh = (bw / 2).max(3);
    let brick = jitter([0.55, 0.25, 0.18], 0.1, r);
    let mortar = jitter([0.75, 0.72, 0.68], 0.05, r);
    let salt: u64 = r.gen();
    paint(move |x, y| {
        let row = y / bh;
        let offset = if row % 2 == 0 { 0 } else { bw / 2 };
        let col = (x + offset) / bw;
        let in_mortar = y % bh == 0 || (x + offset) % bw == 0;
        if in_mortar {
            mortar
        } else {
            let shade = 0.7 + 0.3 * cell_hash(col as i64, row as i64, salt);
            [brick[0] * shade, brick[1] * shade, brick[2] * shade]
        }
    })
}

fn fabrics(spec: &TextureSpec, r: &mut ChaCha8Rng) -> ImagePlane {
    let c0 = jitter([0.25, 0.2, 0.45], 0.1, r);
    let c1 = jitter([0.8, 0.75, 0.6], 0.1, r);
    let f = spec.frequency.max(3.0);
    let p1 = r.gen_range(0.0..std::f64::consts::TAU);
    let p2 = r.gen_range(0.0..std::f64::consts::TAU);
    let salt: u64 = r.gen();
    paint(move |x, y| {
        let wx = (std::f64::consts::TAU * f * x as f64 / N as f64 + p1).sin();
        let wy = (std::f64::consts::TAU * f * y as f64 / N as f64 + p2).sin();
        let weave = 0.5 + 0.5 * wx * wy;
        let fine = 0.06 * (value_noise(x as f64, y as f64, 32.0, 32.0, salt) - 0.5);
        mix(c0, c1, weave + fine)
    })
}

fn plants(spec: &TextureSpec, r: &mut ChaCha8Rng) -> ImagePlane {
    let dark = jitter([0.05, 0.25, 0.06], 0.04, r);
    let light = jitter([0.35, 0.65, 0.2], 0.08, r);
    let cells = spec.frequency.clamp(4.0, 10.0);
    let salt: u64 = r.gen();
    let salt2: u64 = r.gen();
    paint(move |x, y| {
        let coarse = value_noise(x as f64, y as f64, cells, cells, salt);
        let fine = value_noise(x as f64, y as f64, 20.0, 20.0, salt2);
        mix(dark, light, coarse * 0.75 + fine * 0.35)
    })
}

fn architectures(spec: &TextureSpec, r: &mut ChaCha8Rng) -> ImagePlane {
    let wall = jitter([0.62, 0.6, 0.55], 0.08, r);
    let window = jitter([0.12, 0.16, 0.25], 0.05, r);
    let cell = (N as f64 / spec.frequency.clamp(3.0, 8.0)) as usize;
    let salt: u64 = r.gen();
    paint(move |x, y| {
        let cx = x / cell;
        let cy = y / cell;
        let ix = x % cell;
        let iy = y % cell;
        let margin = cell / 4;
        let inside = ix >= margin && ix < cell - margin && iy >= margin && iy < cell - margin;
        if inside && cell_hash(cx as i64, cy as i64, salt) > 0.25 {
            let shade = 0.8 + 0.4 * cell_hash(cx as i64, cy as i64, salt ^ 1);
            [
                (window[0] * shade).min(1.0),
                (window[1] * shade).min(1.0),
                (window[2] * shade).min(1.0),
            ]
        } else {
            wall
        }
    })
}

/// Axis-aligned square-wave stripes; constant along the other axis so the
/// directional variance concentrates on one axis.
fn strips(spec: &TextureSpec, r: &mut ChaCha8Rng) -> ImagePlane {
    let c0 = jitter([0.85, 0.2, 0.2], 0.1, r);
    let c1 = jitter([0.95, 0.9, 0.85], 0.05, r);
    let c2 = jitter([0.2, 0.3, 0.7], 0.1, r);
    let width = (N as f64 / (2.0 * spec.frequency)).clamp(2.0, 12.0) as usize;
    let vertical = spec.orientation >= 0.5;
    let colors = [c0, c1, c2];
    paint(move |x, y| {
        let coord = if vertical { x } else { y };
        colors[(coord / width) % 3]
    })
}

fn hairs(spec: &TextureSpec, r: &mut ChaCha8Rng) -> ImagePlane {
    let dark = jitter([0.2, 0.12, 0.06], 0.05, r);
    let light = jitter([0.65, 0.45, 0.25], 0.08, r);
    let horizontal = spec.orientation < 0.5;
    let salt: u64 = r.gen();
    paint(move |x, y| {
        let (along, across) = if horizontal { (x, y) } else { (y, x) };
        let t = value_noise(along as f64, across as f64, 3.0, 28.0, salt);
        mix(dark, light, t)
    })
}

fn face(_spec: &TextureSpec, r: &mut ChaCha8Rng) -> ImagePlane {
    let bg = jitter([0.4, 0.45, 0.55], 0.1, r);
    let skin = jitter([0.85, 0.68, 0.55], 0.05, r);
    let dark = [0.1, 0.08, 0.08];
    let (cx, cy) = (32.0, 32.0);
    let (rx, ry) = (14.0 + r.gen_range(-2.0..2.0), 19.0 + r.gen_range(-2.0..2.0));
    paint(move |x, y| {
        let dx = (x as f64 - cx) / rx;
        let dy = (y as f64 - cy) / ry;
        let d = dx * dx + dy * dy;
        if d <= 1.0 {
            // eyes
            for ex in [-0.45, 0.45] {
                let ddx = dx - ex;
                let ddy = dy + 0.25;
                if ddx * ddx + ddy * ddy < 0.02 {
                    return dark;
                }
            }
            // mouth
            if dy > 0.35 && dy < 0.5 && dx.abs() < 0.35 {
                return dark;
            }
            let shade = 1.0 - 0.25 * d;
            [skin[0] * shade, skin[1] * shade, skin[2] * shade]
        } else {
            bg
        }
    })
}

fn sky(_spec: &TextureSpec, r: &mut ChaCha8Rng) -> ImagePlane {
    let top = jitter([0.35, 0.55, 0.88], 0.05, r);
    let bottom = jitter([0.6, 0.75, 0.95], 0.05, r);
    let cloud = [0.97, 0.97, 0.99];
    let salt: u64 = r.gen();
    paint(move |x, y| {
        let grad = mix(top, bottom, y as f64 / (N - 1) as f64 * 0.5);
        let n = value_noise(x as f64, y as f64, 4.0, 4.0, salt);
        let cover = smoothstep(((n - 0.5) / 0.3).clamp(0.0, 1.0));
        mix(grad, cloud, cover)
    })
}

fn stones(spec: &TextureSpec, r: &mut ChaCha8Rng) -> ImagePlane {
    let dark = jitter([0.3, 0.26, 0.22], 0.05, r);
    let light = jitter([0.7, 0.66, 0.6], 0.05, r);
    let cells = spec.frequency.clamp(4.0, 9.0);
    let salt: u64 = r.gen();
    let salt2: u64 = r.gen();
    paint(move |x, y| {
        let n = value_noise(x as f64, y as f64, cells, cells, salt);
        let posterized = (n * 4.0).floor() / 4.0;
        let fine = 0.1 * (value_noise(x as f64, y as f64, 24.0, 24.0, salt2) - 0.5);
        mix(dark, light, posterized + fine)
    })
}

fn water(spec: &TextureSpec, r: &mut ChaCha8Rng) -> ImagePlane {
    let deep = jitter([0.05, 0.2, 0.45], 0.05, r);
    let lit = jitter([0.5, 0.75, 0.9], 0.05, r);
    let f = spec.frequency.clamp(3.0, 8.0);
    let phase = r.gen_range(0.0..std::f64::consts::TAU);
    let salt: u64 = r.gen();
    paint(move |x, y| {
        let wobble = 4.0 * (value_noise(x as f64, y as f64, 3.0, 3.0, salt) - 0.5);
        let t = (std::f64::consts::TAU * f * (y as f64 + wobble) / N as f64 + phase).sin();
        mix(deep, lit, 0.5 + 0.45 * t)
    })
}
