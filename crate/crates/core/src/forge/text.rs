//! Question pools and templated response rendering.
//!
//! Responses follow a rigid slot grammar so the evaluator's rule classifier
//! can parse every rendered sentence: per-aspect claims never use
//! comparative vocabulary, and exactly one conclusion sentence carries the
//! verdict.

use rand::Rng;

use super::{Aspect, Preference, QuestionnaireRecord, Severity, TextureKind, Winner};
use crate::model::PromptKind;

pub const QUESTIONS_DESCRIPTION: [&str; 10] = [
    "Describe the quality of the distorted image.",
    "What distortions affect the distorted image?",
    "Assess the visual quality of the distorted image.",
    "How is the image degraded relative to the reference?",
    "Summarize the distortions present in the image.",
    "Evaluate the texture and distortions of the image.",
    "What quality issues can you identify in the image?",
    "Comment on the overall quality of the distorted image.",
    "Analyze the degradation of the distorted image.",
    "Give a quality report for the distorted image.",
];

pub const QUESTIONS_COMPARISON: [&str; 10] = [
    "Which image has better quality, Image A or Image B?",
    "Compare the quality of Image A and Image B.",
    "Is Image A or Image B closer to the reference?",
    "Which of the two distorted images looks better?",
    "Pick the image with higher visual quality.",
    "Between Image A and Image B, which is superior?",
    "Which image preserves the reference better?",
    "Judge which distorted image has better quality.",
    "Which image suffers less degradation?",
    "Identify the better-looking image.",
];

pub const QUESTIONS_REASONING: [&str; 10] = [
    "Which image is better and why?",
    "Compare Image A and Image B and justify your judgment.",
    "Which image has better quality? Explain your reasoning.",
    "Analyze both images and conclude which is better.",
    "Weigh the distortions in Image A and Image B and decide.",
    "Which distorted image is superior? Give your reasons.",
    "Explain which image better preserves the reference.",
    "Reason about the quality difference between the images.",
    "Which image wins the comparison, and on what grounds?",
    "Assess both images and defend your conclusion.",
];

pub const QUESTIONS_CONTENT: [&str; 4] = [
    "Describe the content of the image.",
    "What does the image show?",
    "Give a short caption for the image.",
    "Summarize what is depicted in the image.",
];

/// Comparison response patterns; `{W}` is the winner letter, `{L}` the
/// loser. Instantiating each pattern for both winners yields the fixed
/// pool of 20 + 20 sentences.
pub const COMPARISON_PATTERNS: [&str; 20] = [
    "Image {W} maintains a distinct advantage in terms of image quality over Image {L}.",
    "Image {W} is better.",
    "Image {W} has better quality.",
    "Image {W} is superior to Image {L}.",
    "Image {W} looks better than Image {L}.",
    "Image {W} offers higher visual quality.",
    "Image {W} is clearly the better image.",
    "Image {W} preserves more detail than Image {L}.",
    "Image {L} is worse than Image {W}.",
    "Image {L} is inferior to Image {W}.",
    "The quality of Image {W} is higher.",
    "Image {W} outperforms Image {L} in quality.",
    "Image {W} is the preferable image.",
    "Overall, Image {W} wins the comparison.",
    "Image {W} retains better quality.",
    "Compared with Image {L}, Image {W} is better.",
    "Image {W} looks cleaner than Image {L}.",
    "Image {W} appears closer to the reference.",
    "Image {W} delivers superior image quality.",
    "Between the two, Image {W} stands out as better.",
];

const CONCLUSION_PATTERNS: [&str; 5] = [
    "Therefore, Image {W} has better overall quality.",
    "Consequently, Image {W} is the better image.",
    "Overall, Image {W} wins the comparison.",
    "Thus, Image {W} offers higher visual quality.",
    "In conclusion, Image {W} is superior.",
];

const PREFERENCE_CONCLUSION: &str = "Given the stated preference, Image {W} is preferable.";

const CLAIM_VERBS: [&str; 5] = ["exhibits", "shows", "suffers from", "displays", "contains"];

const MILD_ADJECTIVES: [&str; 3] = ["mild", "slight", "minor"];
const SEVERE_ADJECTIVES: [&str; 3] = ["severe", "heavy", "pronounced"];

const CONTENT_PATTERNS: [&str; 4] = [
    "An image showing {T}.",
    "A picture of {T}.",
    "The image depicts {T}.",
    "A rendered view of {T}.",
];

/// Canonical noun for an aspect claim; always contains the aspect keyword
/// the evaluator greps for.
pub fn aspect_noun(aspect: Aspect) -> &'static str {
    match aspect {
        Aspect::Brightness => "brightness distortion",
        Aspect::Color => "color distortion",
        Aspect::Noise => "noise",
        Aspect::Artifacts => "artifacts",
        Aspect::Blurriness => "blurriness",
    }
}

fn severity_adjective(severity: Severity, rng: &mut impl Rng) -> &'static str {
    match severity {
        Severity::Mild => MILD_ADJECTIVES[rng.gen_range(0..MILD_ADJECTIVES.len())],
        Severity::Severe => SEVERE_ADJECTIVES[rng.gen_range(0..SEVERE_ADJECTIVES.len())],
        Severity::Undistorted => "no",
    }
}

pub fn question_pool(kind: PromptKind) -> &'static [&'static str] {
    match kind {
        PromptKind::Description => &QUESTIONS_DESCRIPTION,
        PromptKind::Comparison => &QUESTIONS_COMPARISON,
        PromptKind::Reasoning => &QUESTIONS_REASONING,
        PromptKind::Content => &QUESTIONS_CONTENT,
    }
}

/// Uniform draw from the task's fixed question set.
pub fn question_for(kind: PromptKind, rng: &mut impl Rng) -> String {
    let pool = question_pool(kind);
    pool[rng.gen_range(0..pool.len())].to_string()
}

/// Appends the preference sentence to a comparison/reasoning instruction.
pub fn augment_question(question: &str, preference: Preference) -> String {
    match preference {
        Preference::None => question.to_string(),
        Preference::NoiseIntolerant => {
            format!("{question} Note that I cannot tolerate any noise.")
        }
    }
}

fn winner_letters(winner: Winner) -> (&'static str, &'static str) {
    match winner {
        Winner::A => ("A", "B"),
        Winner::B => ("B", "A"),
        Winner::Tie => panic!("comparison responses require a definite winner"),
    }
}

/// Uniform draw from the winner's 20-sentence pool.
pub fn render_comparison_response(winner: Winner, rng: &mut impl Rng) -> String {
    let (w, l) = winner_letters(winner);
    let pattern = COMPARISON_PATTERNS[rng.gen_range(0..COMPARISON_PATTERNS.len())];
    pattern.replace("{W}", w).replace("{L}", l)
}

fn texture_sentence(kind: TextureKind, plural_images: bool) -> String {
    if plural_images {
        format!("Both images depict {}.", kind.phrase())
    } else {
        format!("The image depicts {}.", kind.phrase())
    }
}

fn claims_clause(record: &QuestionnaireRecord, rng: &mut impl Rng) -> Option<String> {
    let active = record.active_aspects();
    if active.is_empty() {
        return None;
    }
    let parts: Vec<String> = active
        .iter()
        .map(|(aspect, severity)| {
            format!("{} {}", severity_adjective(*severity, rng), aspect_noun(*aspect))
        })
        .collect();
    Some(parts.join(" and "))
}

/// Deterministic slot grammar for the description task: texture clause,
/// one claim clause per non-undistorted aspect, overall clause containing
/// the level phrase verbatim.
pub fn render_description_response(record: &QuestionnaireRecord, rng: &mut impl Rng) -> String {
    let mut out = String::new();
    out.push_str(&texture_sentence(record.texture_kind, false));
    out.push_str(&format!(" The texture is {}.", record.texture_state.phrase()));
    match claims_clause(record, rng) {
        Some(clause) => {
            let verb = CLAIM_VERBS[rng.gen_range(0..CLAIM_VERBS.len())];
            out.push_str(&format!(" The image {verb} {clause}."));
        }
        None => out.push_str(" No distortion is apparent."),
    }
    let overall = match record.overall {
        super::OverallLevel::NearlyUndistorted => "Overall, the image is nearly undistorted.",
        super::OverallLevel::MildDistortion => "Overall, the image suffers mild distortion.",
        super::OverallLevel::SevereDistortion => "Overall, the image suffers severe distortion.",
    };
    out.push(' ');
    out.push_str(overall);
    out
}

/// The ground-truth aspect that weighs most: highest severity score, ties
/// broken by canonical aspect order with Image A first.
pub fn dominant_issue(
    qa: &QuestionnaireRecord,
    qb: &QuestionnaireRecord,
) -> Option<(Winner, Aspect, Severity)> {
    let mut best: Option<(Winner, Aspect, Severity)> = None;
    for (side, q) in [(Winner::A, qa), (Winner::B, qb)] {
        for aspect in Aspect::ALL {
            let sev = q.severity(aspect);
            if sev == Severity::Undistorted {
                continue;
            }
            let better = match &best {
                None => true,
                Some((_, _, cur)) => sev.score() > cur.score(),
            };
            if better {
                best = Some((side, aspect, sev));
            }
        }
    }
    best
}

/// Reasoning response: texture sentence, per-image claims, a weighing
/// sentence naming the dominant issue, and a classifiable conclusion for
/// `winner`. The conclusion must agree with the claims under the penalty
/// oracle whenever `winner` is the oracle winner.
pub fn render_reasoning_response(
    qa: &QuestionnaireRecord,
    qb: &QuestionnaireRecord,
    winner: Winner,
    preference: Preference,
    rng: &mut impl Rng,
) -> String {
    let mut out = String::new();
    out.push_str(&texture_sentence(qa.texture_kind, true));
    for (letter, q) in [("A", qa), ("B", qb)] {
        match claims_clause(q, rng) {
            Some(clause) => {
                let verb = CLAIM_VERBS[rng.gen_range(0..CLAIM_VERBS.len())];
                out.push_str(&format!(" Image {letter} {verb} {clause}."));
            }
            None => out.push_str(&format!(" Image {letter} is nearly free of distortion.")),
        }
    }
    if let Some((side, aspect, severity)) = dominant_issue(qa, qb) {
        let letter = if side == Winner::A { "A" } else { "B" };
        let adj = match severity {
            Severity::Severe => "severe",
            _ => "mild",
        };
        out.push_str(&format!(
            " The {adj} {} in Image {letter} weighs most on the result.",
            aspect_noun(aspect)
        ));
    }
    let (w, _) = winner_letters(winner);
    let conclusion = match preference {
        Preference::None => CONCLUSION_PATTERNS[rng.gen_range(0..CONCLUSION_PATTERNS.len())],
        Preference::NoiseIntolerant => PREFERENCE_CONCLUSION,
    };
    out.push(' ');
    out.push_str(&conclusion.replace("{W}", w));
    out
}

/// Caption for the content-description filler data.
pub fn render_content_caption(kind: TextureKind, rng: &mut impl Rng) -> String {
    let pattern = CONTENT_PATTERNS[rng.gen_range(0..CONTENT_PATTERNS.len())];
    pattern.replace("{T}", kind.phrase())
}
