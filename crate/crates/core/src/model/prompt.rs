//! Prompt templates and the fused text/visual sequence.
//!
//! A prompt is BOS, one bracketed visual run per image, a newline, the
//! question, and a trailing newline after which the response region starts.
//! How runs are bracketed depends on the tag scheme:
//!
//! - `unique_tag`: role-specific tags (`<Img-Reference>`, `<Img-A>`,
//!   `<Img-B>`); the lone distorted image of the description task keeps the
//!   plain `<Img></Img>` pair.
//! - `unified_tag`: plain `<Img></Img>` for every image, preceded by the
//!   textual cues "Reference Image:", "Image A:", "Image B:".
//! - `image_embedding` / `unique_projector`: plain `<Img></Img>` without
//!   cues; images are distinguished inside the embedding step instead.

use crate::tokenizer::{self, BOS, EOS, IMG_PATCH};

use super::ModelError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TagScheme {
    UniqueTag,
    UnifiedTag,
    ImageEmbedding,
    UniqueProjector,
}

impl TagScheme {
    pub const ALL: [TagScheme; 4] = [
        TagScheme::UniqueTag,
        TagScheme::UnifiedTag,
        TagScheme::ImageEmbedding,
        TagScheme::UniqueProjector,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TagScheme::UniqueTag => "unique_tag",
            TagScheme::UnifiedTag => "unified_tag",
            TagScheme::ImageEmbedding => "image_embedding",
            TagScheme::UniqueProjector => "unique_projector",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.iter().copied().find(|t| t.as_str() == s)
    }
}

/// Whether fusion hands the LM the 25-token local feature map or the single
/// global token per image.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Granularity {
    Local,
    Global,
}

impl Granularity {
    pub fn tokens_per_image(self) -> usize {
        match self {
            Granularity::Local => crate::vision::N_PATCHES,
            Granularity::Global => 1,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Granularity::Local => "local",
            Granularity::Global => "global",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "local" => Some(Granularity::Local),
            "global" => Some(Granularity::Global),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ImageRole {
    Reference,
    A,
    B,
    /// The single distorted image of a description or caption prompt.
    Distorted,
}

impl ImageRole {
    /// Start/end tag ids under the unique-tag scheme.
    pub fn unique_tags(self) -> (u32, u32) {
        match self {
            ImageRole::Reference => (tokenizer::IMG_REF_START, tokenizer::IMG_REF_END),
            ImageRole::A => (tokenizer::IMG_A_START, tokenizer::IMG_A_END),
            ImageRole::B => (tokenizer::IMG_B_START, tokenizer::IMG_B_END),
            ImageRole::Distorted => (tokenizer::IMG_START, tokenizer::IMG_END),
        }
    }

    /// Textual cue under the unified-tag scheme.
    pub fn cue(self) -> &'static str {
        match self {
            ImageRole::Reference => "Reference Image:",
            ImageRole::A | ImageRole::Distorted => "Image A:",
            ImageRole::B => "Image B:",
        }
    }
}

/// Which prompt template to build. `Content` is the single-image caption
/// prompt used by the content-description filler data.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PromptKind {
    Description,
    Comparison,
    Reasoning,
    Content,
}

impl PromptKind {
    pub fn image_roles(self) -> &'static [ImageRole] {
        match self {
            PromptKind::Description => &[ImageRole::Reference, ImageRole::Distorted],
            PromptKind::Comparison | PromptKind::Reasoning => {
                &[ImageRole::Reference, ImageRole::A, ImageRole::B]
            }
            PromptKind::Content => &[ImageRole::Distorted],
        }
    }
}

/// Diagnostic label for each sequence position.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PosTag {
    Bos,
    Tag,
    Cue,
    Visual,
    Question,
    Response,
    Eos,
}

/// One entry of the fused sequence: either a text token or a placeholder for
/// one projected visual token of image `image`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FusedPos {
    Text(u32),
    Visual { image: usize, token: usize },
}

#[derive(Debug, Clone)]
pub struct FusedSequence {
    pub positions: Vec<FusedPos>,
    pub loss_mask: Vec<bool>,
    pub pos_tags: Vec<PosTag>,
    /// Roles of the images, indexed by `FusedPos::Visual::image`.
    pub image_roles: Vec<ImageRole>,
    pub tokens_per_image: usize,
    /// Length of the prompt part (response tokens start here).
    pub prompt_len: usize,
}

impl FusedSequence {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// Token ids with IMG_PATCH standing in for visual positions.
    pub fn token_ids(&self) -> Vec<u32> {
        self.positions
            .iter()
            .map(|p| match p {
                FusedPos::Text(id) => *id,
                FusedPos::Visual { .. } => IMG_PATCH,
            })
            .collect()
    }

    pub fn count_token(&self, id: u32) -> usize {
        self.positions
            .iter()
            .filter(|p| matches!(p, FusedPos::Text(t) if *t == id))
            .count()
    }

    /// Next-token training pairs: `targets[t]` is the token at `t+1` and
    /// the mask marks positions whose successor lies in the response
    /// region. The final position has no successor and stays unmasked.
    pub fn next_token_targets(&self) -> (Vec<u32>, Vec<bool>) {
        let ids = self.token_ids();
        let t_len = ids.len();
        let mut targets = vec![0u32; t_len];
        let mut mask = vec![false; t_len];
        for t in 0..t_len.saturating_sub(1) {
            targets[t] = ids[t + 1];
            mask[t] = self.loss_mask[t + 1];
        }
        (targets, mask)
    }

    /// Sequence positions holding visual tokens of image `image`, in order.
    pub fn visual_positions(&self, image: usize) -> Vec<usize> {
        self.positions
            .iter()
            .enumerate()
            .filter_map(|(i, p)| match p {
                FusedPos::Visual { image: im, .. } if *im == image => Some(i),
                _ => None,
            })
            .collect()
    }

    fn push_text(&mut self, id: u32, tag: PosTag, mask: bool) {
        self.positions.push(FusedPos::Text(id));
        self.loss_mask.push(mask);
        self.pos_tags.push(tag);
    }

    fn push_str(&mut self, s: &str, tag: PosTag, mask: bool) {
        for id in tokenizer::encode(s) {
            self.push_text(id, tag, mask);
        }
    }

    /// Appends a response plus EOS, all loss-masked. The result is a
    /// training item; generation uses the bare prompt instead.
    pub fn with_response(&self, response: &str, max_seq: usize) -> Result<Self, ModelError> {
        let mut out = self.clone();
        out.push_str(response, PosTag::Response, true);
        out.push_text(EOS, PosTag::Eos, true);
        if out.len() > max_seq {
            return Err(ModelError::PromptTooLong {
                len: out.len(),
                max: max_seq,
            });
        }
        Ok(out)
    }
}

/// Builds the prompt template for one task instance. The returned sequence
/// has no response region yet; every `loss_mask` entry is false.
pub fn build_prompt(
    kind: PromptKind,
    question: &str,
    scheme: TagScheme,
    granularity: Granularity,
    max_seq: usize,
) -> Result<FusedSequence, ModelError> {
    let roles = kind.image_roles();
    let tokens_per_image = granularity.tokens_per_image();
    let mut seq = FusedSequence {
        positions: Vec::new(),
        loss_mask: Vec::new(),
        pos_tags: Vec::new(),
        image_roles: roles.to_vec(),
        tokens_per_image,
        prompt_len: 0,
    };
    seq.push_text(BOS, PosTag::Bos, false);
    for (image, role) in roles.iter().enumerate() {
        let (start, end) = match scheme {
            TagScheme::UniqueTag => role.unique_tags(),
            _ => (tokenizer::IMG_START, tokenizer::IMG_END),
        };
        if scheme == TagScheme::UnifiedTag {
            seq.push_str(role.cue(), PosTag::Cue, false);
        }
        seq.push_text(start, PosTag::Tag, false);
        for token in 0..tokens_per_image {
            seq.positions.push(FusedPos::Visual { image, token });
            seq.loss_mask.push(false);
            seq.pos_tags.push(PosTag::Visual);
        }
        seq.push_text(end, PosTag::Tag, false);
    }
    seq.push_str("\n", PosTag::Question, false);
    seq.push_str(question, PosTag::Question, false);
    seq.push_str("\n", PosTag::Question, false);
    seq.prompt_len = seq.len();
    if seq.len() > max_seq {
        return Err(ModelError::PromptTooLong {
            len: seq.len(),
            max: max_seq,
        });
    }
    Ok(seq)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tokenizer::{IMG_A_START, IMG_B_START, IMG_END, IMG_REF_START, IMG_START};

    #[test]
    fn reasoning_unique_tag_has_each_role_tag_once() {
        let seq = build_prompt(
            PromptKind::Reasoning,
            "Which image is better and why?",
            TagScheme::UniqueTag,
            Granularity::Local,
            512,
        )
        .unwrap();
        assert_eq!(seq.count_token(IMG_REF_START), 1);
        assert_eq!(seq.count_token(IMG_A_START), 1);
        assert_eq!(seq.count_token(IMG_B_START), 1);
        assert_eq!(seq.count_token(IMG_START), 0);
    }

    #[test]
    fn description_unique_tag_uses_plain_tags_for_distorted() {
        let seq = build_prompt(
            PromptKind::Description,
            "Describe the quality of the distorted image.",
            TagScheme::UniqueTag,
            Granularity::Local,
            512,
        )
        .unwrap();
        assert_eq!(seq.count_token(IMG_REF_START), 1);
        assert_eq!(seq.count_token(IMG_START), 1);
        assert_eq!(seq.count_token(IMG_END), 1);
        assert_eq!(seq.count_token(IMG_A_START), 0);
    }

    #[test]
    fn unified_tag_uses_img_for_all_images_with_cues() {
        let seq = build_prompt(
            PromptKind::Comparison,
            "Which image has better quality, Image A or Image B?",
            TagScheme::UnifiedTag,
            Granularity::Local,
            512,
        )
        .unwrap();
        assert_eq!(seq.count_token(IMG_START), 3);
        assert_eq!(seq.count_token(IMG_A_START), 0);
        assert!(seq.pos_tags.contains(&PosTag::Cue));
    }

    #[test]
    fn placeholder_counts_follow_granularity() {
        for (gran, expect) in [(Granularity::Local, 25), (Granularity::Global, 1)] {
            let seq = build_prompt(
                PromptKind::Comparison,
                "Compare the quality of Image A and Image B.",
                TagScheme::UniqueTag,
                gran,
                512,
            )
            .unwrap();
            assert_eq!(seq.visual_positions(0).len(), expect);
            assert_eq!(seq.visual_positions(1).len(), expect);
            assert_eq!(seq.visual_positions(2).len(), expect);
        }
    }

    #[test]
    fn visual_runs_are_contiguous_and_bracketed() {
        for scheme in TagScheme::ALL {
            let seq = build_prompt(
                PromptKind::Reasoning,
                "Which image wins the comparison, and on what grounds?",
                scheme,
                Granularity::Local,
                512,
            )
            .unwrap();
            for image in 0..3 {
                let pos = seq.visual_positions(image);
                for w in pos.windows(2) {
                    assert_eq!(w[1], w[0] + 1, "run of image {image} not contiguous");
                }
                let start = pos[0] - 1;
                let end = pos[pos.len() - 1] + 1;
                assert_eq!(seq.pos_tags[start], PosTag::Tag);
                assert_eq!(seq.pos_tags[end], PosTag::Tag);
                let expected = match scheme {
                    TagScheme::UniqueTag => seq.image_roles[image].unique_tags(),
                    _ => (IMG_START, IMG_END),
                };
                assert_eq!(seq.positions[start], FusedPos::Text(expected.0));
                assert_eq!(seq.positions[end], FusedPos::Text(expected.1));
            }
        }
    }

    #[test]
    fn response_masking_covers_response_and_eos_only() {
        let seq = build_prompt(
            PromptKind::Comparison,
            "Which of the two distorted images looks better?",
            TagScheme::UniqueTag,
            Granularity::Local,
            512,
        )
        .unwrap();
        assert!(seq.loss_mask.iter().all(|m| !m));
        let with = seq.with_response("Image A is better.", 512).unwrap();
        let masked = with.loss_mask.iter().filter(|m| **m).count();
        assert_eq!(masked, "Image A is better.".len() + 1);
        assert!(with.loss_mask[seq.len()..].iter().all(|m| *m));
        assert_eq!(*with.pos_tags.last().unwrap(), PosTag::Eos);
    }

    #[test]
    fn oversize_prompt_rejected_with_lengths() {
        let err = build_prompt(
            PromptKind::Comparison,
            "Which image has better quality?",
            TagScheme::UniqueTag,
            Granularity::Local,
            64,
        )
        .unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("64"), "{msg}");
    }
}
