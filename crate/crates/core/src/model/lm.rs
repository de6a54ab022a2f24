//! The causal LM with LoRA adapters on the q/k/v/o attention projections,
//! trainable image projector(s) and token fusion.
//!
//! Base dense weights are frozen; only projectors, LoRA A/B, the eight
//! image-tag embedding rows and (under the image-embedding scheme) the three
//! role embeddings train.

use std::ops::Range;
use std::path::Path;

use crate::image::ImagePlane;
use crate::nn::{multi_head_attention, Proj};
use crate::numerics::{
    load_into, read_checkpoint, write_checkpoint, Graph, ParamSet, Tensor, Var,
};
use crate::rng;
use crate::tokenizer::{self, EOS};
use crate::vision::{self, VisualTokens};

use super::prompt::{FusedPos, FusedSequence, Granularity, ImageRole, PosTag, PromptKind, TagScheme};
use super::{ModelConfig, ModelError};

const LN_EPS: f64 = 1e-5;
const INIT_STD: f64 = 0.02;
/// Token ids below this embed from the frozen base table; the 8 image-tag
/// ids (260..=267) embed from the separately stored tag table.
const BASE_ROWS: usize = 260;
const TAG_ROWS: usize = 8;

/// Per-layer attention probabilities: one row-major [T×T] buffer per head.
pub type LayerAttention = Vec<Vec<f64>>;

#[derive(Debug, Clone, Copy)]
pub struct ForwardOptions {
    pub adapters: bool,
    pub record_attention: bool,
}

impl Default for ForwardOptions {
    fn default() -> Self {
        Self {
            adapters: true,
            record_attention: false,
        }
    }
}

pub struct Model {
    pub cfg: ModelConfig,
    pub params: ParamSet,
}

impl Model {
    /// Fresh model with seeded initialization. Base weights and LoRA A draw
    /// from N(0, 0.02); LoRA B starts at zero so adapters are exact no-ops
    /// until trained.
    pub fn new(cfg: ModelConfig, seed: u64) -> Result<Self, ModelError> {
        cfg.validate()?;
        let mut params = ParamSet::new();
        vision::register_params(&cfg.vision, seed, &mut params);

        let d = cfg.lm.d_model;
        let randn = |name: &str, shape: Vec<usize>, trainable: bool| {
            let mut r = rng::stream(seed, name);
            let mut t = Tensor::randn(shape, INIT_STD, &mut r);
            t.requires_grad = trainable;
            t
        };
        let zeros = |shape: Vec<usize>, trainable: bool| {
            let mut t = Tensor::zeros(shape);
            t.requires_grad = trainable;
            t
        };
        let ones = |n: usize| Tensor::new(vec![n], vec![1.0; n]).expect("sized");

        params.insert("lm.tok_embed", randn("lm.tok_embed", vec![BASE_ROWS, d], false));
        params.insert(
            "lm.tag_embed",
            randn("lm.tag_embed", vec![TAG_ROWS, d], cfg.train_tag_embeddings),
        );
        params.insert("lm.pos", randn("lm.pos", vec![cfg.lm.max_seq, d], false));
        for l in 0..cfg.lm.layers {
            let p = format!("lm.layer{l}");
            params.insert(&format!("{p}.ln1.g"), ones(d));
            params.insert(&format!("{p}.ln1.b"), Tensor::zeros(vec![d]));
            for w in ["q", "k", "v", "o"] {
                let name = format!("{p}.attn.w{w}");
                params.insert(&name, randn(&name, vec![d, d], false));
            }
            params.insert(&format!("{p}.ln2.g"), ones(d));
            params.insert(&format!("{p}.ln2.b"), Tensor::zeros(vec![d]));
            let fc1 = format!("{p}.mlp.fc1.w");
            params.insert(&fc1, randn(&fc1, vec![d, cfg.lm.d_ff], false));
            let fc2 = format!("{p}.mlp.fc2.w");
            params.insert(&fc2, randn(&fc2, vec![cfg.lm.d_ff, d], false));
        }
        params.insert("lm.ln_f.g", ones(d));
        params.insert("lm.ln_f.b", Tensor::zeros(vec![d]));
        params.insert("lm.out.w", randn("lm.out.w", vec![d, cfg.lm.vocab], false));

        for l in 0..cfg.lm.layers {
            for w in ["q", "k", "v", "o"] {
                let a = format!("lora.layer{l}.{w}.a");
                params.insert(&a, randn(&a, vec![cfg.lm.lora_rank, d], true));
                params.insert(
                    &format!("lora.layer{l}.{w}.b"),
                    zeros(vec![d, cfg.lm.lora_rank], true),
                );
            }
        }

        let dv = cfg.vision.d_vision;
        let projector_names: &[&str] = match cfg.scheme {
            TagScheme::UniqueProjector => &["proj.reference", "proj.img_a", "proj.img_b"],
            _ => &["proj.main"],
        };
        for p in projector_names {
            let wn = format!("{p}.w");
            params.insert(&wn, randn(&wn, vec![d, dv], true));
            params.insert(&format!("{p}.b"), zeros(vec![d], true));
        }
        if cfg.scheme == TagScheme::ImageEmbedding {
            for r in ["role_embed.reference", "role_embed.img_a", "role_embed.img_b"] {
                params.insert(r, randn(r, vec![d], true));
            }
        }

        Ok(Self { cfg, params })
    }

    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        write_checkpoint(path, &self.params)?;
        Ok(())
    }

    pub fn load(cfg: ModelConfig, path: &Path) -> Result<Self, ModelError> {
        let model = Self::new(cfg, 0)?;
        load_into(&model.params, read_checkpoint(path)?)?;
        Ok(model)
    }

    /// Independent copy with identical weights.
    pub fn deep_clone(&self) -> Self {
        let mut params = ParamSet::new();
        for p in self.params.iter() {
            let mut t = p.tensor.borrow().clone();
            t.clear_grad();
            params.insert(&p.name, t);
        }
        Self {
            cfg: self.cfg,
            params,
        }
    }

    fn get(&self, name: &str) -> Result<crate::numerics::TensorRef, ModelError> {
        self.params
            .get(name)
            .ok_or_else(|| ModelError::MissingParam(name.to_string()))
    }

    pub fn encode_image(&self, img: &ImagePlane) -> Result<VisualTokens, ModelError> {
        Ok(vision::encode_image(img, &self.cfg.vision, &self.params)?)
    }

    pub fn prompt(&self, kind: PromptKind, question: &str) -> Result<FusedSequence, ModelError> {
        super::prompt::build_prompt(
            kind,
            question,
            self.cfg.scheme,
            self.cfg.granularity,
            self.cfg.lm.max_seq,
        )
    }

    fn projector_prefix(&self, role: ImageRole) -> &'static str {
        match self.cfg.scheme {
            TagScheme::UniqueProjector => match role {
                ImageRole::Reference => "proj.reference",
                // the lone distorted image reuses the Image-A projector
                ImageRole::A | ImageRole::Distorted => "proj.img_a",
                ImageRole::B => "proj.img_b",
            },
            _ => "proj.main",
        }
    }

    fn role_embed_name(role: ImageRole) -> &'static str {
        match role {
            ImageRole::Reference => "role_embed.reference",
            ImageRole::A | ImageRole::Distorted => "role_embed.img_a",
            ImageRole::B => "role_embed.img_b",
        }
    }

    /// Fuses text-token embeddings and projected visual tokens into a
    /// [T, d_model] matrix, in sequence order. Position embeddings are not
    /// added here; the forward pass owns them.
    pub fn embed_fused(
        &self,
        g: &mut Graph,
        seq: &FusedSequence,
        visuals: &[VisualTokens],
    ) -> Result<Var, ModelError> {
        if visuals.len() != seq.image_roles.len() {
            return Err(ModelError::VisualCountMismatch {
                expected: seq.image_roles.len(),
                got: visuals.len(),
            });
        }
        let per_image = self.cfg.granularity.tokens_per_image();
        if seq.tokens_per_image != per_image {
            return Err(ModelError::BadConfig(format!(
                "sequence built for {} visual tokens per image, model expects {per_image}",
                seq.tokens_per_image
            )));
        }

        let tok = g.leaf(self.get("lm.tok_embed")?);
        let tag = g.leaf(self.get("lm.tag_embed")?);
        let table = g.concat_rows(&[tok, tag])?;

        let mut parts = vec![table];
        for (i, vt) in visuals.iter().enumerate() {
            let role = seq.image_roles[i];
            let feat = match self.cfg.granularity {
                Granularity::Local => vt.local.clone(),
                Granularity::Global => vt.global.clone(),
            };
            let feat = g.constant(feat);
            let prefix = self.projector_prefix(role);
            let w = g.leaf(self.get(&format!("{prefix}.w"))?);
            let b = g.leaf(self.get(&format!("{prefix}.b"))?);
            let wt = g.transpose(w)?;
            let projected = g.matmul(feat, wt)?;
            let mut projected = g.add_row(projected, b)?;
            if self.cfg.scheme == TagScheme::ImageEmbedding {
                let re = g.leaf(self.get(Self::role_embed_name(role))?);
                projected = g.add_row(projected, re)?;
            }
            parts.push(projected);
        }
        let big = g.concat_rows(&parts)?;

        let indices: Vec<usize> = seq
            .positions
            .iter()
            .map(|p| match p {
                FusedPos::Text(id) => *id as usize,
                FusedPos::Visual { image, token } => {
                    self.cfg.lm.vocab + image * per_image + token
                }
            })
            .collect();
        Ok(g.gather_rows(big, indices)?)
    }

    /// Pre-norm causal transformer over fused embeddings: adds position
    /// rows, then per layer x += Attn(LN(x)) and x += MLP(LN(x)), final
    /// layer norm, projection to vocab logits.
    pub fn forward_from_embedded(
        &self,
        g: &mut Graph,
        embedded: Var,
        opts: ForwardOptions,
    ) -> Result<(Var, Vec<LayerAttention>), ModelError> {
        let t_len = g.shape_of(embedded)[0];
        if t_len > self.cfg.lm.max_seq {
            return Err(ModelError::PromptTooLong {
                len: t_len,
                max: self.cfg.lm.max_seq,
            });
        }
        let scale = self.cfg.lm.lora_scale();
        let pos_table = g.leaf(self.get("lm.pos")?);
        let pos_rows = g.gather_rows(pos_table, (0..t_len).collect())?;
        let mut x = g.add(embedded, pos_rows)?;
        let mut attention = Vec::new();

        for l in 0..self.cfg.lm.layers {
            let p = format!("lm.layer{l}");
            let ln1g = g.leaf(self.get(&format!("{p}.ln1.g"))?);
            let ln1b = g.leaf(self.get(&format!("{p}.ln1.b"))?);
            let h = g.layer_norm(x, ln1g, ln1b, LN_EPS)?;

            let mut proj_weights = Vec::with_capacity(4);
            for w in ["q", "k", "v", "o"] {
                let base = g.leaf(self.get(&format!("{p}.attn.w{w}"))?);
                let a = g.leaf(self.get(&format!("lora.layer{l}.{w}.a"))?);
                let b = g.leaf(self.get(&format!("lora.layer{l}.{w}.b"))?);
                proj_weights.push((base, a, b));
            }
            let adapters = opts.adapters;
            let attn = multi_head_attention(
                g,
                h,
                self.cfg.lm.heads,
                true,
                opts.record_attention,
                |g, inp, which| {
                    let (base, a, b) = proj_weights[match which {
                        Proj::Q => 0,
                        Proj::K => 1,
                        Proj::V => 2,
                        Proj::O => 3,
                    }];
                    let y = g.matmul(inp, base)?;
                    if !adapters {
                        return Ok(y);
                    }
                    let at = g.transpose(a)?;
                    let xa = g.matmul(inp, at)?;
                    let bt = g.transpose(b)?;
                    let xab = g.matmul(xa, bt)?;
                    let delta = g.scale(xab, scale);
                    g.add(y, delta)
                },
            )?;
            if opts.record_attention {
                attention.push(attn.probs);
            }
            x = g.add(x, attn.out)?;

            let ln2g = g.leaf(self.get(&format!("{p}.ln2.g"))?);
            let ln2b = g.leaf(self.get(&format!("{p}.ln2.b"))?);
            let h2 = g.layer_norm(x, ln2g, ln2b, LN_EPS)?;
            let fc1 = g.leaf(self.get(&format!("{p}.mlp.fc1.w"))?);
            let fc2 = g.leaf(self.get(&format!("{p}.mlp.fc2.w"))?);
            let m = g.matmul(h2, fc1)?;
            let m = g.gelu(m);
            let m = g.matmul(m, fc2)?;
            x = g.add(x, m)?;
        }

        let lfg = g.leaf(self.get("lm.ln_f.g")?);
        let lfb = g.leaf(self.get("lm.ln_f.b")?);
        let x = g.layer_norm(x, lfg, lfb, LN_EPS)?;
        let out_w = g.leaf(self.get("lm.out.w")?);
        let logits = g.matmul(x, out_w)?;
        Ok((logits, attention))
    }

    pub fn logits(
        &self,
        g: &mut Graph,
        seq: &FusedSequence,
        visuals: &[VisualTokens],
        opts: ForwardOptions,
    ) -> Result<(Var, Vec<LayerAttention>), ModelError> {
        let embedded = self.embed_fused(g, seq, visuals)?;
        self.forward_from_embedded(g, embedded, opts)
    }

    /// Response-masked next-token loss: logits at position t are scored
    /// against the token at t+1 wherever the mask marks t+1 as response.
    pub fn loss(
        &self,
        g: &mut Graph,
        seq: &FusedSequence,
        visuals: &[VisualTokens],
    ) -> Result<Var, ModelError> {
        let (logits, _) = self.logits(g, seq, visuals, ForwardOptions::default())?;
        let (targets, mask) = seq.next_token_targets();
        Ok(g.cross_entropy_masked(logits, &targets, &mask)?)
    }

    /// Greedy argmax continuation until EOS or `max_new` tokens; ties take
    /// the lowest id, so decoding is deterministic.
    pub fn generate(
        &self,
        prompt: &FusedSequence,
        visuals: &[VisualTokens],
        max_new: usize,
    ) -> Result<String, ModelError> {
        let vocab = self.cfg.lm.vocab;
        let mut seq = prompt.clone();
        let mut out_ids = Vec::new();
        for _ in 0..max_new {
            if seq.len() >= self.cfg.lm.max_seq {
                break;
            }
            let mut g = Graph::new();
            let (logits, _) = self.logits(&mut g, &seq, visuals, ForwardOptions::default())?;
            let data = g.data(logits);
            let last = &data[(seq.len() - 1) * vocab..seq.len() * vocab];
            let mut best = 0usize;
            for (i, &v) in last.iter().enumerate() {
                if v > last[best] {
                    best = i;
                }
            }
            let id = best as u32;
            if id == EOS {
                break;
            }
            out_ids.push(id);
            seq.positions.push(FusedPos::Text(id));
            seq.loss_mask.push(false);
            seq.pos_tags.push(PosTag::Response);
        }
        Ok(tokenizer::decode(&out_ids).expect("generated ids are in range"))
    }

    /// Head- and span-averaged attention from `span` query positions to the
    /// 25 visual positions of image `image` at layer `layer`, renormalized
    /// to sum 1 and laid out as the 5×5 patch grid (row-major).
    pub fn attention_map(
        &self,
        seq: &FusedSequence,
        visuals: &[VisualTokens],
        span: Range<usize>,
        layer: usize,
        image: usize,
    ) -> Result<Vec<f64>, ModelError> {
        if self.cfg.granularity != Granularity::Local {
            return Err(ModelError::GlobalFeatureNoGrid);
        }
        if layer >= self.cfg.lm.layers {
            return Err(ModelError::BadConfig(format!(
                "layer {layer} out of range for {} layers",
                self.cfg.lm.layers
            )));
        }
        if span.start >= span.end || span.end > seq.len() {
            return Err(ModelError::BadSpan {
                start: span.start,
                end: span.end,
                len: seq.len(),
            });
        }
        let vis_pos = seq.visual_positions(image);
        if vis_pos.len() != vision::N_PATCHES {
            return Err(ModelError::BadConfig(format!(
                "image {image} has {} visual positions, expected {}",
                vis_pos.len(),
                vision::N_PATCHES
            )));
        }
        let mut g = Graph::new();
        let opts = ForwardOptions {
            adapters: true,
            record_attention: true,
        };
        let (_, attention) = self.logits(&mut g, seq, visuals, opts)?;
        let heads = &attention[layer];
        let t_len = seq.len();
        let mut grid = vec![0.0; vision::N_PATCHES];
        for probs in heads {
            for q in span.clone() {
                for (k, &vp) in vis_pos.iter().enumerate() {
                    grid[k] += probs[q * t_len + vp];
                }
            }
        }
        let total: f64 = grid.iter().sum();
        if total <= 0.0 {
            return Err(ModelError::SpanBeforeImage);
        }
        for v in &mut grid {
            *v /= total;
        }
        Ok(grid)
    }

    /// Copy of this model with every LoRA delta folded into its base weight
    /// (W + scale * (B A)^T in stored layout). Run the result with adapters
    /// disabled; its B tensors are left untouched.
    pub fn fold_adapters(&self) -> Result<Self, ModelError> {
        let folded = self.deep_clone();
        let d = self.cfg.lm.d_model;
        let r = self.cfg.lm.lora_rank;
        let scale = self.cfg.lm.lora_scale();
        for l in 0..self.cfg.lm.layers {
            for w in ["q", "k", "v", "o"] {
                let a = self.get(&format!("lora.layer{l}.{w}.a"))?;
                let b = self.get(&format!("lora.layer{l}.{w}.b"))?;
                let base = folded.get(&format!("lm.layer{l}.attn.w{w}"))?;
                let a = a.borrow();
                let b = b.borrow();
                let mut base = base.borrow_mut();
                let wdata = base.data_mut();
                // stored layout is [d_in, d_out]; delta[out][in] = sum_k B[out][k] A[k][in]
                for o in 0..d {
                    for k in 0..r {
                        let bok = b.data()[o * r + k];
                        if bok == 0.0 {
                            continue;
                        }
                        for i in 0..d {
                            wdata[i * d + o] += scale * bok * a.data()[k * d + i];
                        }
                    }
                }
            }
        }
        Ok(folded)
    }

    /// Names of the adapter tensors, 4 per layer (each with an A and B half).
    pub fn adapter_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        for l in 0..self.cfg.lm.layers {
            for w in ["q", "k", "v", "o"] {
                names.push(format!("lora.layer{l}.{w}"));
            }
        }
        names
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::build_prompt;
    use rand::Rng;

    fn test_cfg() -> ModelConfig {
        ModelConfig {
            lm: crate::model::LmConfig {
                d_model: 32,
                layers: 2,
                heads: 2,
                d_ff: 64,
                max_seq: 256,
                lora_rank: 4,
                lora_alpha: 4.0,
                ..Default::default()
            },
            vision: crate::vision::VisionConfig {
                d_vision: 16,
                layers: 1,
                heads: 2,
                ..Default::default()
            },
            ..Default::default()
        }
    }

    fn fake_visual(cfg: &ModelConfig, seed: u64) -> VisualTokens {
        let mut r = rng::stream(seed, "fake-visual");
        VisualTokens {
            global: Tensor::randn(vec![1, cfg.vision.d_vision], 1.0, &mut r),
            local: Tensor::randn(vec![vision::N_PATCHES, cfg.vision.d_vision], 1.0, &mut r),
        }
    }

    fn comparison_seq(model: &Model) -> FusedSequence {
        model
            .prompt(PromptKind::Comparison, "Which image is better?")
            .unwrap()
    }

    fn logits_of(model: &Model, seq: &FusedSequence, visuals: &[VisualTokens], adapters: bool) -> Vec<f64> {
        let mut g = Graph::new();
        let (v, _) = model
            .logits(
                &mut g,
                seq,
                visuals,
                ForwardOptions {
                    adapters,
                    record_attention: false,
                },
            )
            .unwrap();
        g.data(v)
    }

    #[test]
    fn zero_init_adapters_are_bit_exact_identity() {
        let model = Model::new(test_cfg(), 3).unwrap();
        let seq = comparison_seq(&model);
        let visuals = vec![
            fake_visual(&model.cfg, 1),
            fake_visual(&model.cfg, 2),
            fake_visual(&model.cfg, 3),
        ];
        let with = logits_of(&model, &seq, &visuals, true);
        let without = logits_of(&model, &seq, &visuals, false);
        assert_eq!(with.len(), without.len());
        for (a, b) in with.iter().zip(&without) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn merged_weights_match_adapter_forward() {
        let mut model = Model::new(test_cfg(), 4).unwrap();
        // give B nonzero values so the delta is real
        let mut r = rng::stream(9, "b-fill");
        for l in 0..model.cfg.lm.layers {
            for w in ["q", "k", "v", "o"] {
                let b = model.get(&format!("lora.layer{l}.{w}.b")).unwrap();
                let mut b = b.borrow_mut();
                for v in b.data_mut() {
                    *v = r.gen_range(-0.05..0.05);
                }
            }
        }
        let _ = &mut model;
        let seq = comparison_seq(&model);
        let visuals = vec![
            fake_visual(&model.cfg, 4),
            fake_visual(&model.cfg, 5),
            fake_visual(&model.cfg, 6),
        ];
        let adapter = logits_of(&model, &seq, &visuals, true);
        let folded = model.fold_adapters().unwrap();
        let merged = logits_of(&folded, &seq, &visuals, false);
        let max_diff = adapter
            .iter()
            .zip(&merged)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        assert!(max_diff < 1e-9, "max logit diff {max_diff}");
    }

    #[test]
    fn causality_perturbation_does_not_leak_backward() {
        let model = Model::new(test_cfg(), 5).unwrap();
        let seq = comparison_seq(&model);
        let with_resp = seq.with_response("Image A is better.", 256).unwrap();
        let visuals = vec![
            fake_visual(&model.cfg, 7),
            fake_visual(&model.cfg, 8),
            fake_visual(&model.cfg, 9),
        ];
        let base = logits_of(&model, &with_resp, &visuals, true);
        // perturb one response token near the end
        let t = with_resp.len() - 3;
        let mut perturbed = with_resp.clone();
        perturbed.positions[t] = FusedPos::Text(u32::from(b'z'));
        let changed = logits_of(&model, &perturbed, &visuals, true);
        let vocab = model.cfg.lm.vocab;
        let mut max_before = 0.0f64;
        for row in 0..t {
            for c in 0..vocab {
                max_before = max_before.max((base[row * vocab + c] - changed[row * vocab + c]).abs());
            }
        }
        assert!(max_before < 1e-12, "leak before t: {max_before}");
        // sanity: logits at t and later do change
        let after: f64 = (t..with_resp.len())
            .map(|row| {
                (0..vocab)
                    .map(|c| (base[row * vocab + c] - changed[row * vocab + c]).abs())
                    .fold(0.0f64, f64::max)
            })
            .fold(0.0f64, f64::max);
        assert!(after > 0.0);
    }

    #[test]
    fn zero_projector_embeds_visuals_to_zero() {
        let model = Model::new(test_cfg(), 6).unwrap();
        let w = model.get("proj.main.w").unwrap();
        w.borrow_mut().data_mut().fill(0.0);
        let seq = comparison_seq(&model);
        let visuals = vec![
            fake_visual(&model.cfg, 1),
            fake_visual(&model.cfg, 2),
            fake_visual(&model.cfg, 3),
        ];
        let mut g = Graph::new();
        let emb = model.embed_fused(&mut g, &seq, &visuals).unwrap();
        let data = g.data(emb);
        let d = model.cfg.lm.d_model;
        for image in 0..3 {
            for p in seq.visual_positions(image) {
                for c in 0..d {
                    assert_eq!(data[p * d + c], 0.0);
                }
            }
        }
    }

    #[test]
    fn swapping_a_and_b_permutes_only_their_runs() {
        let model = Model::new(test_cfg(), 7).unwrap();
        let seq = comparison_seq(&model);
        let va = fake_visual(&model.cfg, 21);
        let vb = fake_visual(&model.cfg, 22);
        let vr = fake_visual(&model.cfg, 20);
        let emb = |vis: &[VisualTokens]| {
            let mut g = Graph::new();
            let e = model.embed_fused(&mut g, &seq, vis).unwrap();
            g.data(e)
        };
        let orig = emb(&[vr.clone(), va.clone(), vb.clone()]);
        let swap = emb(&[vr, vb.clone(), va.clone()]);
        let d = model.cfg.lm.d_model;
        let pos_a = seq.visual_positions(1);
        let pos_b = seq.visual_positions(2);
        for (i, v) in orig.iter().enumerate() {
            let p = i / d;
            if pos_a.contains(&p) {
                // A run now holds B's embedding
                let k = pos_a.iter().position(|x| *x == p).unwrap();
                let q = pos_b[k];
                assert_eq!(v.to_bits(), swap[q * d + i % d].to_bits());
            } else if !pos_b.contains(&p) {
                assert_eq!(v.to_bits(), swap[i].to_bits(), "non-run position changed");
            }
        }
    }

    #[test]
    fn unified_and_unique_share_visual_run_embeddings() {
        let mut cfg_u = test_cfg();
        cfg_u.scheme = TagScheme::UniqueTag;
        let mut cfg_n = test_cfg();
        cfg_n.scheme = TagScheme::UnifiedTag;
        let mu = Model::new(cfg_u, 11).unwrap();
        let mn = Model::new(cfg_n, 11).unwrap();
        // same seed: projector weights identical by construction
        let visuals = vec![
            fake_visual(&mu.cfg, 31),
            fake_visual(&mu.cfg, 32),
            fake_visual(&mu.cfg, 33),
        ];
        let question = "Compare the quality of Image A and Image B.";
        let su = mu.prompt(PromptKind::Comparison, question).unwrap();
        let sn = mn.prompt(PromptKind::Comparison, question).unwrap();
        let eu = {
            let mut g = Graph::new();
            let e = mu.embed_fused(&mut g, &su, &visuals).unwrap();
            g.data(e)
        };
        let en = {
            let mut g = Graph::new();
            let e = mn.embed_fused(&mut g, &sn, &visuals).unwrap();
            g.data(e)
        };
        let d = mu.cfg.lm.d_model;
        for image in 0..3 {
            let pu = su.visual_positions(image);
            let pn = sn.visual_positions(image);
            for (a, b) in pu.iter().zip(&pn) {
                for c in 0..d {
                    assert_eq!(
                        eu[a * d + c].to_bits(),
                        en[b * d + c].to_bits(),
                        "visual embedding differs at image {image}"
                    );
                }
            }
        }
    }

    #[test]
    fn adapter_set_is_exactly_qkvo_per_layer() {
        let model = Model::new(test_cfg(), 8).unwrap();
        assert_eq!(model.adapter_names().len(), 4 * model.cfg.lm.layers);
        let lora_tensors: Vec<String> = model
            .params
            .iter()
            .map(|p| p.name.clone())
            .filter(|n| n.starts_with("lora."))
            .collect();
        assert_eq!(lora_tensors.len(), 8 * model.cfg.lm.layers);
        for n in &lora_tensors {
            assert!(
                n.contains(".q.") || n.contains(".k.") || n.contains(".v.") || n.contains(".o."),
                "unexpected adapter {n}"
            );
        }
        // no adapters on MLP or embeddings
        assert!(model.params.get("lora.mlp").is_none());
    }

    #[test]
    fn alpha_equal_rank_keeps_scale_one() {
        for rank in [8, 12, 16, 24, 32] {
            let cfg = crate::model::LmConfig {
                lora_rank: rank,
                lora_alpha: rank as f64,
                ..Default::default()
            };
            assert_eq!(cfg.lora_scale(), 1.0);
        }
    }

    #[test]
    fn generate_zero_tokens_is_empty_and_deterministic() {
        let model = Model::new(test_cfg(), 12).unwrap();
        let seq = comparison_seq(&model);
        let visuals = vec![
            fake_visual(&model.cfg, 41),
            fake_visual(&model.cfg, 42),
            fake_visual(&model.cfg, 43),
        ];
        assert_eq!(model.generate(&seq, &visuals, 0).unwrap(), "");
        let a = model.generate(&seq, &visuals, 8).unwrap();
        let b = model.generate(&seq, &visuals, 8).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn attention_map_normalized_and_matches_manual_extraction() {
        let mut cfg = test_cfg();
        cfg.lm.heads = 1;
        cfg.lm.d_model = 32;
        let model = Model::new(cfg, 13).unwrap();
        let seq = comparison_seq(&model);
        let visuals = vec![
            fake_visual(&model.cfg, 51),
            fake_visual(&model.cfg, 52),
            fake_visual(&model.cfg, 53),
        ];
        let q = seq.len() - 1;
        let grid = model
            .attention_map(&seq, &visuals, q..q + 1, 0, 1)
            .unwrap();
        assert_eq!(grid.len(), 25);
        assert!(grid.iter().all(|v| *v >= 0.0));
        let total: f64 = grid.iter().sum();
        assert!((total - 1.0).abs() < 1e-9);

        // manual extraction: raw attention row restricted to the visual
        // positions, renormalized
        let mut g = Graph::new();
        let (_, att) = model
            .logits(
                &mut g,
                &seq,
                &visuals,
                ForwardOptions {
                    adapters: true,
                    record_attention: true,
                },
            )
            .unwrap();
        let probs = &att[0][0];
        let t_len = seq.len();
        let vis = seq.visual_positions(1);
        let raw: Vec<f64> = vis.iter().map(|&p| probs[q * t_len + p]).collect();
        let raw_sum: f64 = raw.iter().sum();
        for (a, b) in grid.iter().zip(&raw) {
            assert!((a - b / raw_sum).abs() < 1e-12);
        }
    }

    #[test]
    fn attention_map_rejected_in_global_mode() {
        let mut cfg = test_cfg();
        cfg.granularity = Granularity::Global;
        let model = Model::new(cfg, 14).unwrap();
        let seq = comparison_seq(&model);
        let visuals = vec![
            fake_visual(&model.cfg, 61),
            fake_visual(&model.cfg, 62),
            fake_visual(&model.cfg, 63),
        ];
        let err = model
            .attention_map(&seq, &visuals, 10..11, 0, 1)
            .unwrap_err();
        assert!(matches!(err, ModelError::GlobalFeatureNoGrid));
    }

    #[test]
    fn checkpoint_roundtrip_restores_model() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let model = Model::new(test_cfg(), 15).unwrap();
        model.save(&path).unwrap();
        let restored = Model::load(model.cfg, &path).unwrap();
        let seq = comparison_seq(&model);
        let visuals = vec![
            fake_visual(&model.cfg, 71),
            fake_visual(&model.cfg, 72),
            fake_visual(&model.cfg, 73),
        ];
        let a = logits_of(&model, &seq, &visuals, true);
        let b = logits_of(&restored, &seq, &visuals, true);
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }

    #[test]
    fn build_prompt_free_function_matches_model_prompt() {
        let model = Model::new(test_cfg(), 16).unwrap();
        let s1 = model.prompt(PromptKind::Description, "Describe the image.").unwrap();
        let s2 = build_prompt(
            PromptKind::Description,
            "Describe the image.",
            model.cfg.scheme,
            model.cfg.granularity,
            model.cfg.lm.max_seq,
        )
        .unwrap();
        assert_eq!(s1.positions, s2.positions);
    }
}
