//! Exact ground-truth derivation: questionnaire auto-fill, the penalty
//! oracle that stands in for human comparison judgments, simulated
//! annotator fractions and the preference override.

use rand::Rng;

use super::{
    Aspect, ComparisonRecord, DistortionSpec, ForgeError, OverallLevel, QuestionnaireRecord,
    Relation, Severity, TextureState, TextureSpec, Winner,
};

/// Steepness of the annotator-preference logistic; a one-point penalty gap
/// gives p ~ 0.77.
const LOGISTIC_K: f64 = 1.2;
const ANNOTATORS: u32 = 5;

/// Total penalty of a distortion set under the {0, 1, 3} severity scores.
pub fn penalty(specs: &[DistortionSpec]) -> u32 {
    specs.iter().map(|s| s.severity.score()).sum()
}

fn severity_of(specs: &[DistortionSpec], aspect: Aspect) -> Severity {
    specs
        .iter()
        .find(|s| s.aspect == aspect)
        .map_or(Severity::Undistorted, |s| s.severity)
}

fn check_no_duplicates(specs: &[DistortionSpec]) -> Result<(), ForgeError> {
    for (i, s) in specs.iter().enumerate() {
        if specs[i + 1..].iter().any(|t| t.aspect == s.aspect) {
            return Err(ForgeError::DuplicateAspect(s.aspect));
        }
    }
    Ok(())
}

/// Auto-fills the questionnaire from exact ground truth. Absent aspects are
/// undistorted; rejects duplicate aspects.
pub fn derive_questionnaire(
    specs: &[DistortionSpec],
    texture: &TextureSpec,
) -> Result<QuestionnaireRecord, ForgeError> {
    check_no_duplicates(specs)?;
    let sev = |a| severity_of(specs, a);
    let total: u32 = Aspect::ALL.iter().map(|a| sev(*a).score()).sum();
    let any_severe = Aspect::ALL.iter().any(|a| sev(*a) == Severity::Severe);
    let overall = if any_severe {
        OverallLevel::SevereDistortion
    } else if total == 0 {
        OverallLevel::NearlyUndistorted
    } else {
        OverallLevel::MildDistortion
    };
    let texture_state = match total {
        0 => TextureState::ClearlyIdentifiable,
        1..=2 => TextureState::BarelyIdentifiable,
        _ => TextureState::CompletelyDamaged,
    };
    Ok(QuestionnaireRecord {
        texture_kind: texture.kind,
        texture_state,
        brightness: sev(Aspect::Brightness),
        color: sev(Aspect::Color),
        noise: sev(Aspect::Noise),
        artifacts: sev(Aspect::Artifacts),
        blurriness: sev(Aspect::Blurriness),
        overall,
    })
}

fn relation_from_diff(diff: i64) -> Relation {
    match diff {
        0 => Relation::RoughlyEqual,
        1 => Relation::Better,
        -1 => Relation::Worse,
        d if d >= 2 => Relation::MuchBetter,
        _ => Relation::MuchWorse,
    }
}

/// Compares two distortion sets with the penalty oracle. Relations read as
/// "A relative to B": a positive score difference on an aspect means A
/// carries less of that distortion, so A is superior there.
pub fn distortion_ordering(
    a: &[DistortionSpec],
    b: &[DistortionSpec],
) -> Result<ComparisonRecord, ForgeError> {
    check_no_duplicates(a)?;
    check_no_duplicates(b)?;

    let rel = |aspect: Aspect| {
        let diff = i64::from(severity_of(b, aspect).score()) - i64::from(severity_of(a, aspect).score());
        relation_from_diff(diff)
    };
    let total_a = i64::from(penalty(a));
    let total_b = i64::from(penalty(b));
    let overall = relation_from_diff(total_b - total_a);
    let winner = match total_a.cmp(&total_b) {
        std::cmp::Ordering::Less => Winner::A,
        std::cmp::Ordering::Greater => Winner::B,
        std::cmp::Ordering::Equal => Winner::Tie,
    };
    let relations: Vec<Relation> = Aspect::ALL.iter().map(|a| rel(*a)).collect();
    let favors_a = relations
        .iter()
        .any(|r| matches!(r, Relation::Better | Relation::MuchBetter));
    let favors_b = relations
        .iter()
        .any(|r| matches!(r, Relation::Worse | Relation::MuchWorse));
    Ok(ComparisonRecord {
        brightness: relations[0],
        color: relations[1],
        noise: relations[2],
        artifacts: relations[3],
        blurriness: relations[4],
        overall,
        winner,
        conflicting_aspects: favors_a && favors_b,
    })
}

/// Simulates the 5-annotator vote. The returned value is the fraction
/// preferring Image B, quantized to fifths.
pub fn simulate_fraction(penalty_a: f64, penalty_b: f64, rng: &mut impl Rng) -> f64 {
    let p_b = 1.0 / (1.0 + (-LOGISTIC_K * (penalty_a - penalty_b)).exp());
    let votes = (0..ANNOTATORS).filter(|_| rng.gen_bool(p_b)).count();
    votes as f64 / f64::from(ANNOTATORS)
}

/// Majority label: B iff the fraction exceeds one half (0.5 itself cannot
/// occur with five annotators).
pub fn majority_prefers_b(fraction: f64) -> bool {
    fraction > 0.5
}

/// Optional user preference appended to comparison instructions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preference {
    None,
    NoiseIntolerant,
}

impl Preference {
    pub fn as_str(self) -> &'static str {
        match self {
            Preference::None => "none",
            Preference::NoiseIntolerant => "noise_intolerant",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "none" => Some(Preference::None),
            "noise_intolerant" => Some(Preference::NoiseIntolerant),
            _ => None,
        }
    }
}

/// Preference-aware verdict override: under `NoiseIntolerant`, if exactly
/// one side carries any noise, the other side wins regardless of penalty.
pub fn apply_preference(
    preference: Preference,
    a: &[DistortionSpec],
    b: &[DistortionSpec],
    default_winner: Winner,
) -> Winner {
    match preference {
        Preference::None => default_winner,
        Preference::NoiseIntolerant => {
            let noisy_a = severity_of(a, Aspect::Noise) != Severity::Undistorted;
            let noisy_b = severity_of(b, Aspect::Noise) != Severity::Undistorted;
            match (noisy_a, noisy_b) {
                (true, false) => Winner::B,
                (false, true) => Winner::A,
                _ => default_winner,
            }
        }
    }
}
