//! Patch-based image encoder: one global token plus 25 local tokens from a
//! 64×64 image, zero-padded to 70×70 and cut into 14×14 patches. Position
//! embeddings are stored as a table of `max_positions` rows of which exactly
//! 26 (class + 25 patches) are consumed, so larger tables truncate cleanly.
//!
//! The encoder is randomly initialized and frozen by default; its outputs
//! feed the language model through a trainable projector.

use thiserror::Error;

use crate::image::ImagePlane;
use crate::nn::{multi_head_attention, Proj};
use crate::numerics::{Graph, NumericsError, ParamSet, Tensor};
use crate::rng;

pub const INPUT_SIZE: usize = 64;
pub const PADDED_SIZE: usize = 70;
pub const PATCH_SIZE: usize = 14;
pub const GRID: usize = 5;
pub const N_PATCHES: usize = GRID * GRID;
pub const PATCH_DIM: usize = PATCH_SIZE * PATCH_SIZE * 3;
/// class token + 25 patch tokens
pub const N_TOKENS: usize = N_PATCHES + 1;

const LN_EPS: f64 = 1e-5;
const INIT_STD: f64 = 0.02;

#[derive(Debug, Error)]
pub enum VisionError {
    #[error("expected a {INPUT_SIZE}x{INPUT_SIZE}x3 image, got {0}x{1}x3")]
    BadInputSize(usize, usize),
    #[error("expected a {PADDED_SIZE}x{PADDED_SIZE}x3 padded image, got {0}x{1}x3")]
    BadPaddedSize(usize, usize),
    #[error("vision config: {0}")]
    BadConfig(String),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VisionConfig {
    pub d_vision: usize,
    pub layers: usize,
    pub heads: usize,
    pub max_positions: usize,
    pub frozen: bool,
}

impl Default for VisionConfig {
    fn default() -> Self {
        Self {
            d_vision: 64,
            layers: 2,
            heads: 4,
            max_positions: N_TOKENS,
            frozen: true,
        }
    }
}

impl VisionConfig {
    pub fn validate(&self) -> Result<(), VisionError> {
        if self.d_vision == 0 || self.layers == 0 || self.heads == 0 {
            return Err(VisionError::BadConfig("zero-sized dimension".into()));
        }
        if self.d_vision % self.heads != 0 {
            return Err(VisionError::BadConfig(format!(
                "d_vision {} not divisible by heads {}",
                self.d_vision, self.heads
            )));
        }
        if self.max_positions < N_TOKENS {
            return Err(VisionError::BadConfig(format!(
                "max_positions {} below the {N_TOKENS} consumed rows",
                self.max_positions
            )));
        }
        debug_assert_eq!(PADDED_SIZE % PATCH_SIZE, 0);
        debug_assert_eq!(GRID * GRID, N_PATCHES);
        Ok(())
    }
}

/// Encoder output: one global token and 25 local tokens.
#[derive(Debug, Clone)]
pub struct VisualTokens {
    /// [1, d_vision]
    pub global: Tensor,
    /// [25, d_vision]
    pub local: Tensor,
}

/// Centers the 64×64 input in a 70×70 zero border (3 pixels on every side).
pub fn zero_pad(img: &ImagePlane) -> Result<ImagePlane, VisionError> {
    if img.height() != INPUT_SIZE || img.width() != INPUT_SIZE {
        return Err(VisionError::BadInputSize(img.height(), img.width()));
    }
    let margin = (PADDED_SIZE - INPUT_SIZE) / 2;
    let mut out = ImagePlane::filled(PADDED_SIZE, PADDED_SIZE, 0.0);
    for y in 0..INPUT_SIZE {
        for x in 0..INPUT_SIZE {
            for c in 0..3 {
                out.set(y + margin, x + margin, c, img.at(y, x, c));
            }
        }
    }
    Ok(out)
}

/// Crops the central 64×64 region back out of a padded image.
pub fn crop_center(padded: &ImagePlane) -> Result<ImagePlane, VisionError> {
    if padded.height() != PADDED_SIZE || padded.width() != PADDED_SIZE {
        return Err(VisionError::BadPaddedSize(padded.height(), padded.width()));
    }
    let margin = (PADDED_SIZE - INPUT_SIZE) / 2;
    let mut pixels = Vec::with_capacity(INPUT_SIZE * INPUT_SIZE * 3);
    for y in 0..INPUT_SIZE {
        for x in 0..INPUT_SIZE {
            for c in 0..3 {
                pixels.push(padded.at(y + margin, x + margin, c));
            }
        }
    }
    Ok(ImagePlane::new(INPUT_SIZE, INPUT_SIZE, pixels).expect("values already in range"))
}

/// Cuts the padded image into 25 non-overlapping raster-order patches, each
/// flattened row-major (y, x, channel). Output shape [25, 588].
pub fn patchify(padded: &ImagePlane) -> Result<Tensor, VisionError> {
    if padded.height() != PADDED_SIZE || padded.width() != PADDED_SIZE {
        return Err(VisionError::BadPaddedSize(padded.height(), padded.width()));
    }
    let mut data = Vec::with_capacity(N_PATCHES * PATCH_DIM);
    for py in 0..GRID {
        for px in 0..GRID {
            for y in 0..PATCH_SIZE {
                for x in 0..PATCH_SIZE {
                    for c in 0..3 {
                        data.push(padded.at(py * PATCH_SIZE + y, px * PATCH_SIZE + x, c));
                    }
                }
            }
        }
    }
    Ok(Tensor::matrix(N_PATCHES, PATCH_DIM, data).expect("sized by construction"))
}

/// Registers all encoder weights under the `vision.` prefix. Linear weights
/// are stored `[d_in, d_out]` and applied as `y = x W`. When `frozen` is
/// false the weights join the trainable set.
pub fn register_params(cfg: &VisionConfig, seed: u64, params: &mut ParamSet) {
    let dv = cfg.d_vision;
    let trainable = !cfg.frozen;
    let randn = |name: &str, shape: Vec<usize>| {
        let mut r = rng::stream(seed, name);
        let mut t = Tensor::randn(shape, INIT_STD, &mut r);
        t.requires_grad = trainable;
        t
    };
    let plain = |data: Tensor| {
        let mut t = data;
        t.requires_grad = trainable;
        t
    };
    let ones = |n: usize| Tensor::new(vec![n], vec![1.0; n]).expect("sized");

    params.insert(
        "vision.patch_embed.w",
        randn("vision.patch_embed.w", vec![PATCH_DIM, dv]),
    );
    params.insert("vision.patch_embed.b", plain(Tensor::zeros(vec![dv])));
    params.insert(
        "vision.class_token",
        randn("vision.class_token", vec![1, dv]),
    );
    params.insert("vision.pos", randn("vision.pos", vec![cfg.max_positions, dv]));
    for l in 0..cfg.layers {
        let p = format!("vision.layer{l}");
        params.insert(&format!("{p}.ln1.g"), plain(ones(dv)));
        params.insert(&format!("{p}.ln1.b"), plain(Tensor::zeros(vec![dv])));
        for w in ["q", "k", "v", "o"] {
            let name = format!("{p}.attn.w{w}");
            params.insert(&name, randn(&name, vec![dv, dv]));
            params.insert(&format!("{p}.attn.b{w}"), plain(Tensor::zeros(vec![dv])));
        }
        params.insert(&format!("{p}.ln2.g"), plain(ones(dv)));
        params.insert(&format!("{p}.ln2.b"), plain(Tensor::zeros(vec![dv])));
        let fc1 = format!("{p}.mlp.fc1.w");
        params.insert(&fc1, randn(&fc1, vec![dv, 4 * dv]));
        params.insert(&format!("{p}.mlp.fc1.b"), plain(Tensor::zeros(vec![4 * dv])));
        let fc2 = format!("{p}.mlp.fc2.w");
        params.insert(&fc2, randn(&fc2, vec![4 * dv, dv]));
        params.insert(&format!("{p}.mlp.fc2.b"), plain(Tensor::zeros(vec![dv])));
    }
    params.insert("vision.ln_f.g", plain(ones(dv)));
    params.insert("vision.ln_f.b", plain(Tensor::zeros(vec![dv])));
}

/// Runs the encoder: patch embedding, class token, position rows 0..26,
/// bidirectional pre-norm transformer layers, final layer norm. The
/// class-token output is the global feature; the 25 patch outputs are the
/// local feature map.
pub fn encode_image(
    img: &ImagePlane,
    cfg: &VisionConfig,
    params: &ParamSet,
) -> Result<VisualTokens, VisionError> {
    cfg.validate()?;
    let padded = zero_pad(img)?;
    let patches = patchify(&padded)?;
    let dv = cfg.d_vision;

    let mut g = Graph::new();
    let get = |name: &str| {
        params
            .get(name)
            .ok_or_else(|| VisionError::BadConfig(format!("missing weight {name:?}")))
    };

    let x0 = g.constant(patches);
    let pw = g.leaf(get("vision.patch_embed.w")?);
    let pb = g.leaf(get("vision.patch_embed.b")?);
    let embedded = g.matmul(x0, pw)?;
    let embedded = g.add_row(embedded, pb)?;
    let cls = g.leaf(get("vision.class_token")?);
    let mut x = g.concat_rows(&[cls, embedded])?;
    let pos_table = g.leaf(get("vision.pos")?);
    let pos_rows = g.gather_rows(pos_table, (0..N_TOKENS).collect())?;
    x = g.add(x, pos_rows)?;

    for l in 0..cfg.layers {
        let p = format!("vision.layer{l}");
        let ln1g = g.leaf(get(&format!("{p}.ln1.g"))?);
        let ln1b = g.leaf(get(&format!("{p}.ln1.b"))?);
        let h = g.layer_norm(x, ln1g, ln1b, LN_EPS)?;
        let mut weights = Vec::with_capacity(4);
        for w in ["q", "k", "v", "o"] {
            weights.push((
                g.leaf(get(&format!("{p}.attn.w{w}"))?),
                g.leaf(get(&format!("{p}.attn.b{w}"))?),
            ));
        }
        let attn = multi_head_attention(&mut g, h, cfg.heads, false, false, |g, inp, which| {
            let (w, b) = weights[match which {
                Proj::Q => 0,
                Proj::K => 1,
                Proj::V => 2,
                Proj::O => 3,
            }];
            let y = g.matmul(inp, w)?;
            g.add_row(y, b)
        })?;
        x = g.add(x, attn.out)?;
        let ln2g = g.leaf(get(&format!("{p}.ln2.g"))?);
        let ln2b = g.leaf(get(&format!("{p}.ln2.b"))?);
        let h2 = g.layer_norm(x, ln2g, ln2b, LN_EPS)?;
        let fc1w = g.leaf(get(&format!("{p}.mlp.fc1.w"))?);
        let fc1b = g.leaf(get(&format!("{p}.mlp.fc1.b"))?);
        let fc2w = g.leaf(get(&format!("{p}.mlp.fc2.w"))?);
        let fc2b = g.leaf(get(&format!("{p}.mlp.fc2.b"))?);
        let m = g.matmul(h2, fc1w)?;
        let m = g.add_row(m, fc1b)?;
        let m = g.gelu(m);
        let m = g.matmul(m, fc2w)?;
        let m = g.add_row(m, fc2b)?;
        x = g.add(x, m)?;
    }

    let lfg = g.leaf(get("vision.ln_f.g")?);
    let lfb = g.leaf(get("vision.ln_f.b")?);
    let x = g.layer_norm(x, lfg, lfb, LN_EPS)?;

    let out = g.data(x);
    let global = Tensor::matrix(1, dv, out[0..dv].to_vec()).expect("sized");
    let local = Tensor::matrix(N_PATCHES, dv, out[dv..].to_vec()).expect("sized");
    Ok(VisualTokens { global, local })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp_image() -> ImagePlane {
        let mut img = ImagePlane::filled(INPUT_SIZE, INPUT_SIZE, 0.0);
        for y in 0..INPUT_SIZE {
            for x in 0..INPUT_SIZE {
                for c in 0..3 {
                    let v = ((y * INPUT_SIZE + x) * 3 + c) % 256;
                    img.set(y, x, c, v as f64 / 255.0);
                }
            }
        }
        img
    }

    #[test]
    fn pad_border_is_zero_interior_preserved() {
        let img = ImagePlane::filled(64, 64, 1.0);
        let padded = zero_pad(&img).unwrap();
        let mut border_sum = 0.0;
        let mut interior_sum = 0.0;
        for y in 0..70 {
            for x in 0..70 {
                for c in 0..3 {
                    let v = padded.at(y, x, c);
                    if (3..67).contains(&y) && (3..67).contains(&x) {
                        interior_sum += v;
                    } else {
                        border_sum += v;
                    }
                }
            }
        }
        assert_eq!(border_sum, 0.0);
        assert_eq!(interior_sum, (64 * 64 * 3) as f64);
        assert_eq!(padded.at(0, 0, 0), 0.0);
    }

    #[test]
    fn pad_then_crop_is_identity() {
        let img = ramp_image();
        let back = crop_center(&zero_pad(&img).unwrap()).unwrap();
        assert_eq!(img, back);
    }

    #[test]
    fn wrong_size_rejected() {
        let img = ImagePlane::filled(32, 64, 0.5);
        assert!(zero_pad(&img).is_err());
    }

    #[test]
    fn patchify_constant_image() {
        let padded = ImagePlane::filled(70, 70, 0.25);
        let patches = patchify(&padded).unwrap();
        assert_eq!(patches.shape(), &[N_PATCHES, PATCH_DIM]);
        assert!(patches.data().iter().all(|&v| v == 0.25));
    }

    #[test]
    fn patchify_is_a_partition() {
        let padded = zero_pad(&ramp_image()).unwrap();
        let patches = patchify(&padded).unwrap();
        let patch_sum: f64 = patches.data().iter().sum();
        let img_sum: f64 = padded.pixels().iter().sum();
        assert!((patch_sum - img_sum).abs() < 1e-9);
    }

    #[test]
    fn first_patch_matches_index_arithmetic() {
        let padded = zero_pad(&ramp_image()).unwrap();
        let patches = patchify(&padded).unwrap();
        // independent index-arithmetic oracle for patch (0,0)
        for y in 0..PATCH_SIZE {
            for x in 0..PATCH_SIZE {
                for c in 0..3 {
                    let flat = (y * PATCH_SIZE + x) * 3 + c;
                    assert_eq!(patches.at(0, flat), padded.at(y, x, c));
                }
            }
        }
    }

    #[test]
    fn encode_shapes_and_determinism() {
        let cfg = VisionConfig::default();
        let mut params = ParamSet::new();
        register_params(&cfg, 5, &mut params);
        let img = ramp_image();
        let a = encode_image(&img, &cfg, &params).unwrap();
        assert_eq!(a.global.shape(), &[1, cfg.d_vision]);
        assert_eq!(a.local.shape(), &[N_PATCHES, cfg.d_vision]);
        assert!(a.global.data().iter().all(|v| v.is_finite()));
        let b = encode_image(&img, &cfg, &params).unwrap();
        for (x, y) in a.local.data().iter().zip(b.local.data()) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }

    #[test]
    fn position_truncation_is_prefix_consistent() {
        // identical prefixes of the position table give bit-identical
        // encodings regardless of max_positions
        let small = VisionConfig {
            max_positions: 26,
            ..VisionConfig::default()
        };
        let big = VisionConfig {
            max_positions: 100,
            ..VisionConfig::default()
        };
        let mut params_big = ParamSet::new();
        register_params(&big, 7, &mut params_big);
        let mut params_small = ParamSet::new();
        register_params(&small, 7, &mut params_small);
        // share the first 26 rows of the position table and every other
        // tensor verbatim
        {
            let big_pos = params_big.get("vision.pos").unwrap();
            let small_pos = params_small.get("vision.pos").unwrap();
            let rows = 26 * small.d_vision;
            small_pos
                .borrow_mut()
                .data_mut()
                .copy_from_slice(&big_pos.borrow().data()[..rows]);
            for p in params_big.iter() {
                if p.name == "vision.pos" {
                    continue;
                }
                let dst = params_small.get(&p.name).unwrap();
                dst.borrow_mut()
                    .data_mut()
                    .copy_from_slice(p.tensor.borrow().data());
            }
        }
        let img = ramp_image();
        let a = encode_image(&img, &small, &params_small).unwrap();
        let b = encode_image(&img, &big, &params_big).unwrap();
        for (x, y) in a.local.data().iter().zip(b.local.data()) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
        for (x, y) in a.global.data().iter().zip(b.global.data()) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }

    #[test]
    fn frozen_flag_controls_requires_grad() {
        let cfg = VisionConfig::default();
        let mut params = ParamSet::new();
        register_params(&cfg, 1, &mut params);
        assert!(params.trainable_names().is_empty());

        let unfrozen = VisionConfig {
            frozen: false,
            ..cfg
        };
        let mut params2 = ParamSet::new();
        register_params(&unfrozen, 1, &mut params2);
        assert!(!params2.trainable_names().is_empty());
    }
}
