//! Synthetic dataset forge: procedural textures, parameterized distortions,
//! exact questionnaire derivation, templated responses, simulated annotator
//! fractions, multi-source mixing and dataset statistics.

mod dataset;
mod distort;
mod judge;
mod text;
mod texture;

pub use dataset::{
    forge_dataset, gen_comparison_case, gen_content_case, gen_description_case, read_manifest,
    dataset_stats, ComparisonCase, ContentCase, DescriptionCase, ForgeConfig, ForgeSummary,
    GroundTruth, SampleRecord, StatsReport,
};
pub use distort::apply_distortion;
pub use judge::{
    apply_preference, derive_questionnaire, distortion_ordering, majority_prefers_b,
    penalty, simulate_fraction, Preference,
};
pub use text::{
    aspect_noun, augment_question, dominant_issue, question_for, question_pool,
    render_comparison_response, render_content_caption, render_description_response,
    render_reasoning_response, COMPARISON_PATTERNS,
};
pub use texture::synth_reference;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ForgeError {
    #[error("duplicate distortion aspect {0:?}")]
    DuplicateAspect(Aspect),
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("manifest line {line}: {message}")]
    BadRecord { line: usize, message: String },
    #[error(transparent)]
    Image(#[from] crate::image::ImageError),
}

/// The 11 texture types a reference image can depict.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TextureKind {
    ObjectEdges,
    Bricks,
    Fabrics,
    PlantsOrFoliage,
    Architectures,
    ArtificialStrips,
    HairsOrFurs,
    Faces,
    SkyOrClouds,
    StonesOrGround,
    WaterSurface,
}

impl TextureKind {
    pub const ALL: [TextureKind; 11] = [
        TextureKind::ObjectEdges,
        TextureKind::Bricks,
        TextureKind::Fabrics,
        TextureKind::PlantsOrFoliage,
        TextureKind::Architectures,
        TextureKind::ArtificialStrips,
        TextureKind::HairsOrFurs,
        TextureKind::Faces,
        TextureKind::SkyOrClouds,
        TextureKind::StonesOrGround,
        TextureKind::WaterSurface,
    ];

    /// Natural-language phrase used in rendered responses.
    pub fn phrase(self) -> &'static str {
        match self {
            TextureKind::ObjectEdges => "object edges",
            TextureKind::Bricks => "bricks",
            TextureKind::Fabrics => "fabrics",
            TextureKind::PlantsOrFoliage => "plants or foliage",
            TextureKind::Architectures => "architectures",
            TextureKind::ArtificialStrips => "artificial strips",
            TextureKind::HairsOrFurs => "hairs or furs",
            TextureKind::Faces => "faces",
            TextureKind::SkyOrClouds => "sky or clouds",
            TextureKind::StonesOrGround => "stones or ground",
            TextureKind::WaterSurface => "water surface",
        }
    }
}

/// Parameters of one reference-image generator run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TextureSpec {
    pub kind: TextureKind,
    /// Dominant pattern frequency, in cycles across the image (roughly 2-10).
    pub frequency: f64,
    /// Orientation knob in [0,1); axis-aligned generators read it as a
    /// horizontal/vertical switch.
    pub orientation: f64,
    pub palette_seed: u64,
}

impl TextureSpec {
    pub fn sample(rng: &mut impl rand::Rng) -> Self {
        Self {
            kind: TextureKind::ALL[rng.gen_range(0..TextureKind::ALL.len())],
            frequency: rng.gen_range(2.0..10.0),
            orientation: rng.gen_range(0.0..1.0),
            palette_seed: rng.gen(),
        }
    }
}

/// The five distortion aspects, in canonical order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aspect {
    Brightness,
    Color,
    Noise,
    Artifacts,
    Blurriness,
}

impl Aspect {
    pub const ALL: [Aspect; 5] = [
        Aspect::Brightness,
        Aspect::Color,
        Aspect::Noise,
        Aspect::Artifacts,
        Aspect::Blurriness,
    ];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Severity {
    Undistorted,
    Mild,
    Severe,
}

impl Severity {
    /// Penalty score: one severe outweighs two milds.
    pub fn score(self) -> u32 {
        match self {
            Severity::Undistorted => 0,
            Severity::Mild => 1,
            Severity::Severe => 3,
        }
    }
}

/// Machine-readable ground truth of what was done to an image. Parameters
/// are drawn once at forge time from fixed per-severity bands, so applying
/// the spec is fully reproducible.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistortionSpec {
    pub aspect: Aspect,
    pub severity: Severity,
    /// Brightness gain.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub gain: Option<f64>,
    /// Gray-blend (color) or block-blend (artifacts) strength.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub blend: Option<f64>,
    /// Noise or blur standard deviation.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub sigma: Option<f64>,
    /// Signed channel cast accompanying color distortion.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub cast: Option<f64>,
}

impl DistortionSpec {
    pub fn identity(aspect: Aspect) -> Self {
        Self {
            aspect,
            severity: Severity::Undistorted,
            gain: None,
            blend: None,
            sigma: None,
            cast: None,
        }
    }

    /// Draws concrete parameters from the fixed severity bands:
    /// brightness gain mild {0.7, 1.3} severe {0.4, 1.8}; color blend
    /// mild 0.5 severe 0.9; noise sigma mild 0.05 severe 0.15; artifacts
    /// blend mild 0.4 severe 0.8; blur sigma mild 1.0 severe 2.5.
    pub fn sample(aspect: Aspect, severity: Severity, rng: &mut impl rand::Rng) -> Self {
        let mut spec = Self::identity(aspect);
        spec.severity = severity;
        if severity == Severity::Undistorted {
            return spec;
        }
        let severe = severity == Severity::Severe;
        match aspect {
            Aspect::Brightness => {
                let (lo, hi) = if severe { (0.4, 1.8) } else { (0.7, 1.3) };
                spec.gain = Some(if rng.gen_bool(0.5) { lo } else { hi });
            }
            Aspect::Color => {
                spec.blend = Some(if severe { 0.9 } else { 0.5 });
                let mag = if severe { 0.15 } else { 0.05 };
                spec.cast = Some(if rng.gen_bool(0.5) { mag } else { -mag });
            }
            Aspect::Noise => {
                spec.sigma = Some(if severe { 0.15 } else { 0.05 });
            }
            Aspect::Artifacts => {
                spec.blend = Some(if severe { 0.8 } else { 0.4 });
            }
            Aspect::Blurriness => {
                spec.sigma = Some(if severe { 2.5 } else { 1.0 });
            }
        }
        spec
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TextureState {
    ClearlyIdentifiable,
    BarelyIdentifiable,
    CompletelyDamaged,
}

impl TextureState {
    pub fn phrase(self) -> &'static str {
        match self {
            TextureState::ClearlyIdentifiable => "clearly identifiable",
            TextureState::BarelyIdentifiable => "barely identifiable",
            TextureState::CompletelyDamaged => "completely damaged",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OverallLevel {
    NearlyUndistorted,
    MildDistortion,
    SevereDistortion,
}

impl OverallLevel {
    pub fn phrase(self) -> &'static str {
        match self {
            OverallLevel::NearlyUndistorted => "nearly undistorted",
            OverallLevel::MildDistortion => "mild distortion",
            OverallLevel::SevereDistortion => "severe distortion",
        }
    }
}

/// Structured description of one distorted image: texture kind and state,
/// per-aspect severities, overall quality level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuestionnaireRecord {
    pub texture_kind: TextureKind,
    pub texture_state: TextureState,
    pub brightness: Severity,
    pub color: Severity,
    pub noise: Severity,
    pub artifacts: Severity,
    pub blurriness: Severity,
    pub overall: OverallLevel,
}

impl QuestionnaireRecord {
    pub fn severity(&self, aspect: Aspect) -> Severity {
        match aspect {
            Aspect::Brightness => self.brightness,
            Aspect::Color => self.color,
            Aspect::Noise => self.noise,
            Aspect::Artifacts => self.artifacts,
            Aspect::Blurriness => self.blurriness,
        }
    }

    pub fn penalty(&self) -> u32 {
        Aspect::ALL.iter().map(|a| self.severity(*a).score()).sum()
    }

    /// Aspects with a non-undistorted severity, in canonical order.
    pub fn active_aspects(&self) -> Vec<(Aspect, Severity)> {
        Aspect::ALL
            .iter()
            .filter_map(|a| {
                let s = self.severity(*a);
                (s != Severity::Undistorted).then_some((*a, s))
            })
            .collect()
    }
}

/// Per-aspect and overall relation of Image A relative to Image B.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Relation {
    /// A >> B
    MuchBetter,
    /// A > B
    Better,
    /// A ≈ B
    RoughlyEqual,
    /// A < B
    Worse,
    /// A << B
    MuchWorse,
}

impl Relation {
    pub fn symbol(self) -> &'static str {
        match self {
            Relation::MuchBetter => ">>",
            Relation::Better => ">",
            Relation::RoughlyEqual => "~",
            Relation::Worse => "<",
            Relation::MuchWorse => "<<",
        }
    }

    pub fn mirror(self) -> Self {
        match self {
            Relation::MuchBetter => Relation::MuchWorse,
            Relation::Better => Relation::Worse,
            Relation::RoughlyEqual => Relation::RoughlyEqual,
            Relation::Worse => Relation::Better,
            Relation::MuchWorse => Relation::MuchBetter,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Winner {
    A,
    B,
    Tie,
}

impl Winner {
    pub fn flip(self) -> Self {
        match self {
            Winner::A => Winner::B,
            Winner::B => Winner::A,
            Winner::Tie => Winner::Tie,
        }
    }
}

/// Relations of A versus B per aspect and overall, with the penalty winner.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRecord {
    pub brightness: Relation,
    pub color: Relation,
    pub noise: Relation,
    pub artifacts: Relation,
    pub blurriness: Relation,
    pub overall: Relation,
    pub winner: Winner,
    /// True when some aspect favors A while another favors B; the overall
    /// relation then follows total penalty rather than any per-aspect rule.
    pub conflicting_aspects: bool,
}

impl ComparisonRecord {
    pub fn relation(&self, aspect: Aspect) -> Relation {
        match aspect {
            Aspect::Brightness => self.brightness,
            Aspect::Color => self.color,
            Aspect::Noise => self.noise,
            Aspect::Artifacts => self.artifacts,
            Aspect::Blurriness => self.blurriness,
        }
    }
}
