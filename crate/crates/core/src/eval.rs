//! Evaluation harness: a deterministic rule grammar that turns free-form
//! comparison responses into verdicts, 2AFC accuracy with label-uncertainty
//! exclusion variants, the three-criterion reasonable-rate rubric, and an
//! optional external judge client.

use std::io::{Read, Write};
use std::net::TcpStream;
use std::time::Duration;

use serde::Serialize;
use thiserror::Error;

use crate::forge::{Aspect, QuestionnaireRecord, Severity, Winner};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("prediction and label lists differ in length: {preds} vs {labels}")]
    LengthMismatch { preds: usize, labels: usize },
    #[error("human fraction {0} is not a multiple of 1/5 in [0,1]")]
    BadFraction(f64),
    #[error("judge unavailable: {0}")]
    JudgeUnavailable(String),
}

/// Bi-classification outcome of one comparison response. Total over all
/// inputs: anything ambiguous or silent maps to `Unparseable`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    ABetter,
    BBetter,
    Unparseable,
}

impl Verdict {
    pub fn from_winner(w: Winner) -> Self {
        match w {
            Winner::A => Verdict::ABetter,
            Winner::B => Verdict::BBetter,
            Winner::Tie => Verdict::Unparseable,
        }
    }
}

/// Comparative phrases asserting the subject image is the better one.
const POSITIVE_KEYWORDS: [&str; 14] = [
    "better",
    "superior",
    "advantage",
    "higher",
    "outperforms",
    "preferable",
    "preferred",
    "wins",
    "cleaner",
    "closer to the reference",
    "preserves more detail",
    "excels",
    "surpasses",
    "sharper",
];

/// Comparative phrases asserting the subject image is the worse one.
const NEGATIVE_KEYWORDS: [&str; 6] = [
    "worse",
    "inferior",
    "falls short",
    "lower",
    "lags behind",
    "loses",
];

fn is_word_char(c: u8) -> bool {
    c.is_ascii_alphanumeric()
}

/// Finds word-bounded occurrences of `needle` in `hay` (both lowercase).
fn keyword_positions(hay: &str, needle: &str) -> Vec<usize> {
    let hb = hay.as_bytes();
    let nb = needle.as_bytes();
    let mut out = Vec::new();
    let mut from = 0;
    while from < hay.len() {
        let Some(rel) = hay[from..].find(needle) else {
            break;
        };
        let start = from + rel;
        let end = start + nb.len();
        let left_ok = start == 0 || !is_word_char(hb[start - 1]);
        let right_ok = end == hb.len() || !is_word_char(hb[end]);
        if left_ok && right_ok {
            out.push(start);
        }
        from = start + 1;
    }
    out
}

/// Nearest subject image mentioned before byte offset `pos`.
fn subject_before(sentence: &str, pos: usize) -> Option<Winner> {
    let head = &sentence[..pos];
    let a = head.rfind("image a");
    let b = head.rfind("image b");
    match (a, b) {
        (Some(x), Some(y)) => Some(if x > y { Winner::A } else { Winner::B }),
        (Some(_), None) => Some(Winner::A),
        (None, Some(_)) => Some(Winner::B),
        (None, None) => None,
    }
}

fn negated_before(sentence: &str, pos: usize) -> bool {
    let window_start = pos.saturating_sub(24);
    let window = &sentence[window_start..pos];
    !keyword_positions(window, "not").is_empty()
        || window.contains("n't")
        || !keyword_positions(window, "no").is_empty()
        || window.contains("fails to")
}

/// Keyword/pattern grammar over comparative phrases. Collects one vote per
/// comparative keyword (subject = nearest preceding image mention, polarity
/// from the keyword, flipped under negation); agreeing votes give the
/// verdict, anything else is unparseable.
pub fn classify_verdict(response: &str) -> Verdict {
    let lower = response.to_lowercase();
    let mut votes: Vec<Winner> = Vec::new();
    for sentence in lower.split(['.', '!', '?']) {
        if sentence.trim().is_empty() {
            continue;
        }
        for (keywords, positive) in
            [(&POSITIVE_KEYWORDS[..], true), (&NEGATIVE_KEYWORDS[..], false)]
        {
            for kw in keywords {
                for pos in keyword_positions(sentence, kw) {
                    let Some(subject) = subject_before(sentence, pos) else {
                        continue;
                    };
                    let mut wins = if positive { subject } else { subject.flip() };
                    if negated_before(sentence, pos) {
                        wins = wins.flip();
                    }
                    votes.push(wins);
                }
            }
        }
    }
    match votes.first() {
        None => Verdict::Unparseable,
        Some(first) if votes.iter().all(|v| v == first) => Verdict::from_winner(*first),
        Some(_) => Verdict::Unparseable,
    }
}

/// Accuracy report over one evaluation run. `accuracy` is computed over the
/// samples surviving the requested exclusion; the three standard exclusion
/// variants are always reported alongside.
#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    pub n_total: usize,
    pub n_excluded: usize,
    pub accuracy: f64,
    pub unparseable_rate: f64,
    /// (excluded-fractions label, accuracy) for the three standard sets.
    pub variants: Vec<(String, f64)>,
    /// LPIPS-style fractional credit over the included samples.
    pub fractional_credit: f64,
}

fn check_fraction(f: f64) -> Result<(), EvalError> {
    let scaled = f * 5.0;
    if !(0.0..=1.0).contains(&f) || (scaled - scaled.round()).abs() > 1e-9 {
        return Err(EvalError::BadFraction(f));
    }
    Ok(())
}

fn accuracy_over(preds: &[Verdict], fractions: &[f64], excluded: &[f64]) -> (usize, f64) {
    let mut kept = 0usize;
    let mut correct = 0usize;
    for (p, f) in preds.iter().zip(fractions) {
        if excluded.iter().any(|e| (e - f).abs() < 1e-9) {
            continue;
        }
        kept += 1;
        let majority_b = crate::forge::majority_prefers_b(*f);
        let hit = match p {
            Verdict::ABetter => !majority_b,
            Verdict::BBetter => majority_b,
            Verdict::Unparseable => false,
        };
        if hit {
            correct += 1;
        }
    }
    let acc = if kept == 0 {
        0.0
    } else {
        correct as f64 / kept as f64
    };
    (kept, acc)
}

/// 2AFC accuracy against majority labels. The majority label is Image B
/// iff the annotator fraction exceeds 0.5 (0.5 itself cannot occur with
/// five annotators); unparseable predictions count as incorrect; excluded
/// fractions are dropped from the denominator.
pub fn accuracy(
    preds: &[Verdict],
    fractions: &[f64],
    exclusion: &[f64],
) -> Result<EvalReport, EvalError> {
    if preds.len() != fractions.len() {
        return Err(EvalError::LengthMismatch {
            preds: preds.len(),
            labels: fractions.len(),
        });
    }
    for f in fractions {
        check_fraction(*f)?;
    }
    let (kept, acc) = accuracy_over(preds, fractions, exclusion);
    let variant_sets: [(&str, &[f64]); 3] = [
        ("none", &[]),
        ("0.4,0.6", &[0.4, 0.6]),
        ("0.2,0.4,0.6,0.8", &[0.2, 0.4, 0.6, 0.8]),
    ];
    let variants = variant_sets
        .iter()
        .map(|(label, set)| ((*label).to_string(), accuracy_over(preds, fractions, set).1))
        .collect();
    let mut unparseable = 0usize;
    let mut credit = 0.0;
    for (p, f) in preds.iter().zip(fractions) {
        if exclusion.iter().any(|e| (e - f).abs() < 1e-9) {
            continue;
        }
        match p {
            Verdict::ABetter => credit += 1.0 - f,
            Verdict::BBetter => credit += f,
            Verdict::Unparseable => unparseable += 1,
        }
    }
    Ok(EvalReport {
        n_total: preds.len(),
        n_excluded: preds.len() - kept,
        accuracy: acc,
        unparseable_rate: if kept == 0 {
            0.0
        } else {
            unparseable as f64 / kept as f64
        },
        variants,
        fractional_credit: if kept == 0 { 0.0 } else { credit / kept as f64 },
    })
}

/// Rubric outcome for one reasoning response.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct RubricResult {
    pub identifies_dominant_issue: bool,
    pub no_severe_false_positive: bool,
    pub internally_consistent: bool,
    pub reasonable: bool,
}

/// Severity adjectives the claim parser understands (a superset of what the
/// forge renders).
const MILD_WORDS: [&str; 4] = ["mild", "slight", "minor", "faint"];
const SEVERE_WORDS: [&str; 5] = ["severe", "heavy", "strong", "pronounced", "extreme"];

const ASPECT_WORDS: [(&str, Aspect); 5] = [
    ("brightness", Aspect::Brightness),
    ("color", Aspect::Color),
    ("noise", Aspect::Noise),
    ("artifact", Aspect::Artifacts),
    ("blur", Aspect::Blurriness),
];

/// (side, aspect) -> claimed severity parsed out of a response.
type Claims = Vec<((Winner, Aspect), Severity)>;

fn aspect_after(sentence: &str, from: usize) -> Option<(usize, Aspect)> {
    let mut best: Option<(usize, Aspect)> = None;
    for (word, aspect) in ASPECT_WORDS {
        if let Some(rel) = sentence[from..].find(word) {
            let pos = from + rel;
            if best.map_or(true, |(b, _)| pos < b) {
                best = Some((pos, aspect));
            }
        }
    }
    best
}

/// Extracts per-image severity claims: sentences naming an image plus
/// "<adjective> <aspect>" pairs. Returns None on a contradiction (the same
/// image/aspect claimed at two severities).
fn parse_claims(response: &str) -> Option<Claims> {
    let lower = response.to_lowercase();
    let mut claims: Claims = Vec::new();
    for sentence in lower.split(['.', '!', '?']) {
        let subject = match (sentence.find("image a"), sentence.find("image b")) {
            (Some(pa), Some(pb)) => Some(if pa < pb { Winner::A } else { Winner::B }),
            (Some(_), None) => Some(Winner::A),
            (None, Some(_)) => Some(Winner::B),
            (None, None) => None,
        };
        let Some(side) = subject else { continue };
        for (words, severity) in [
            (&MILD_WORDS[..], Severity::Mild),
            (&SEVERE_WORDS[..], Severity::Severe),
        ] {
            for adj in words {
                for pos in keyword_positions(sentence, adj) {
                    // the claimed aspect is the nearest aspect noun after
                    // the adjective, within a short window
                    if let Some((apos, aspect)) = aspect_after(sentence, pos) {
                        if apos - pos > 32 {
                            continue;
                        }
                        let key = (side, aspect);
                        if let Some((_, existing)) = claims.iter().find(|(k, _)| *k == key) {
                            if *existing != severity {
                                return None;
                            }
                        } else {
                            claims.push((key, severity));
                        }
                    }
                }
            }
        }
    }
    Some(claims)
}

fn implied_winner(claims: &Claims) -> Winner {
    let penalty_of = |side: Winner| -> u32 {
        claims
            .iter()
            .filter(|((s, _), _)| *s == side)
            .map(|(_, sev)| sev.score())
            .sum()
    };
    let pa = penalty_of(Winner::A);
    let pb = penalty_of(Winner::B);
    match pa.cmp(&pb) {
        std::cmp::Ordering::Less => Winner::A,
        std::cmp::Ordering::Greater => Winner::B,
        std::cmp::Ordering::Equal => Winner::Tie,
    }
}

/// Scores one reasoning response against its ground-truth questionnaires:
/// (1) the highest-penalty ground-truth aspect is claimed for the right
/// image, (2) nothing undistorted in the ground truth is claimed severe,
/// (3) the conclusion verdict matches the verdict implied by the response's
/// own claims under the penalty oracle.
pub fn rubric(
    response: &str,
    gold_a: &QuestionnaireRecord,
    gold_b: &QuestionnaireRecord,
) -> RubricResult {
    let Some(claims) = parse_claims(response) else {
        return RubricResult {
            identifies_dominant_issue: false,
            no_severe_false_positive: false,
            internally_consistent: false,
            reasonable: false,
        };
    };

    let identifies_dominant_issue = match crate::forge::dominant_issue(gold_a, gold_b) {
        None => true,
        Some((side, aspect, _)) => claims
            .iter()
            .any(|((s, a), sev)| *s == side && *a == aspect && *sev != Severity::Undistorted),
    };

    let no_severe_false_positive = claims.iter().all(|((side, aspect), sev)| {
        if *sev != Severity::Severe {
            return true;
        }
        let gold = match side {
            Winner::A => gold_a,
            Winner::B => gold_b,
            Winner::Tie => unreachable!("claims never carry a tie side"),
        };
        gold.severity(*aspect) != Severity::Undistorted
    });

    let conclusion = classify_verdict(response);
    let internally_consistent = !claims.is_empty()
        && match implied_winner(&claims) {
            Winner::Tie => false,
            w => Verdict::from_winner(w) == conclusion,
        };

    RubricResult {
        identifies_dominant_issue,
        no_severe_false_positive,
        internally_consistent,
        reasonable: identifies_dominant_issue && no_severe_false_positive && internally_consistent,
    }
}

/// Mean reasonable flag over a batch of reasoning responses.
pub fn reasonable_rate(
    responses: &[String],
    gold: &[(QuestionnaireRecord, QuestionnaireRecord)],
) -> Result<(f64, Vec<RubricResult>), EvalError> {
    if responses.len() != gold.len() {
        return Err(EvalError::LengthMismatch {
            preds: responses.len(),
            labels: gold.len(),
        });
    }
    let results: Vec<RubricResult> = responses
        .iter()
        .zip(gold)
        .map(|(r, (qa, qb))| rubric(r, qa, qb))
        .collect();
    let rate = if results.is_empty() {
        0.0
    } else {
        results.iter().filter(|r| r.reasonable).count() as f64 / results.len() as f64
    };
    Ok((rate, results))
}

/// Queries an external judge over plain HTTP: POSTs the context, question
/// and both answers, expects `{"score_1": s1, "score_2": s2}` back, and
/// returns `s2 / s1` (the model answer's score relative to the reference).
/// Failures surface as `JudgeUnavailable`; no score is ever fabricated.
pub fn judge_client(
    endpoint: &str,
    context: &str,
    question: &str,
    answer_reference: &str,
    answer_model: &str,
) -> Result<f64, EvalError> {
    let unavailable = EvalError::JudgeUnavailable;
    let rest = endpoint
        .strip_prefix("http://")
        .ok_or_else(|| unavailable(format!("endpoint {endpoint:?} must start with http://")))?;
    let (host_port, path) = match rest.find('/') {
        Some(i) => (&rest[..i], &rest[i..]),
        None => (rest, "/"),
    };
    let body = serde_json::json!({
        "context": context,
        "question": question,
        "answer_1": answer_reference,
        "answer_2": answer_model,
        "instruction": "Rate each answer to the question on a scale of 0 to 10 \
                        using the context; reply as JSON {\"score_1\": s1, \"score_2\": s2}.",
    })
    .to_string();
    let request = format!(
        "POST {path} HTTP/1.1\r\nHost: {host_port}\r\nContent-Type: application/json\r\n\
         Content-Length: {}\r\nConnection: close\r\n\r\n{body}",
        body.len()
    );
    let mut stream = TcpStream::connect(host_port).map_err(|e| unavailable(e.to_string()))?;
    stream
        .set_read_timeout(Some(Duration::from_secs(10)))
        .map_err(|e| unavailable(e.to_string()))?;
    stream
        .write_all(request.as_bytes())
        .map_err(|e| unavailable(e.to_string()))?;
    let mut raw = String::new();
    stream
        .read_to_string(&mut raw)
        .map_err(|e| unavailable(e.to_string()))?;
    let payload = raw
        .split("\r\n\r\n")
        .nth(1)
        .ok_or_else(|| unavailable("malformed HTTP response".into()))?;
    let parsed: serde_json::Value = serde_json::from_str(payload.trim())
        .map_err(|e| unavailable(format!("bad judge reply: {e}")))?;
    let score = |key: &str| {
        parsed
            .get(key)
            .and_then(serde_json::Value::as_f64)
            .ok_or_else(|| EvalError::JudgeUnavailable(format!("reply missing numeric {key:?}")))
    };
    let s1 = score("score_1")?;
    let s2 = score("score_2")?;
    if s1 <= 0.0 {
        return Err(unavailable(format!("reference score {s1} is not positive")));
    }
    Ok(s2 / s1)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn advantage_sentence_classifies_a() {
        let v = classify_verdict(
            "Image A maintains a distinct advantage in terms of image quality over Image B.",
        );
        assert_eq!(v, Verdict::ABetter);
    }

    #[test]
    fn empty_is_unparseable() {
        assert_eq!(classify_verdict(""), Verdict::Unparseable);
        assert_eq!(classify_verdict("The sky is blue."), Verdict::Unparseable);
    }

    #[test]
    fn inversion_and_negation() {
        assert_eq!(classify_verdict("Image A is inferior to Image B."), Verdict::BBetter);
        assert_eq!(classify_verdict("Image B is worse than Image A."), Verdict::ABetter);
        assert_eq!(
            classify_verdict("Image A is not better than Image B."),
            Verdict::BBetter
        );
    }

    #[test]
    fn contradiction_is_unparseable() {
        let v = classify_verdict("Image A is better. Image B is better.");
        assert_eq!(v, Verdict::Unparseable);
    }

    #[test]
    fn disadvantage_does_not_match_advantage() {
        // word-boundary guard: "disadvantage" must not vote positive
        let v = classify_verdict("Image A has a clear disadvantage against Image B.");
        assert_eq!(v, Verdict::Unparseable);
    }

    #[test]
    fn all_forty_templates_classify_to_their_winner() {
        for (winner, letters) in [(Verdict::ABetter, ("A", "B")), (Verdict::BBetter, ("B", "A"))] {
            for pattern in crate::forge::COMPARISON_PATTERNS {
                let s = pattern.replace("{W}", letters.0).replace("{L}", letters.1);
                assert_eq!(classify_verdict(&s), winner, "pattern {s:?}");
            }
        }
    }

    #[test]
    fn accuracy_counts_majorities() {
        // hand-built fixture with hand-computed accuracy
        let preds = [
            Verdict::ABetter,     // f 0.0 -> majority A, hit
            Verdict::BBetter,     // f 0.8 -> majority B, hit
            Verdict::ABetter,     // f 0.6 -> majority B, miss
            Verdict::Unparseable, // f 0.2 -> counted incorrect
            Verdict::BBetter,     // f 1.0 -> hit
        ];
        let fractions = [0.0, 0.8, 0.6, 0.2, 1.0];
        let report = accuracy(&preds, &fractions, &[]).unwrap();
        assert_eq!(report.n_total, 5);
        assert_eq!(report.n_excluded, 0);
        assert!((report.accuracy - 3.0 / 5.0).abs() < 1e-12);
        assert!((report.unparseable_rate - 0.2).abs() < 1e-12);
        // dropping 0.4/0.6 removes the miss
        let mid = accuracy(&preds, &fractions, &[0.4, 0.6]).unwrap();
        assert!((mid.accuracy - 3.0 / 4.0).abs() < 1e-12);
        assert_eq!(mid.n_excluded, 1);
    }

    #[test]
    fn perfect_predictions_are_exact() {
        let fractions = [0.0, 0.2, 0.8, 1.0];
        let preds: Vec<Verdict> = fractions
            .iter()
            .map(|f| {
                if crate::forge::majority_prefers_b(*f) {
                    Verdict::BBetter
                } else {
                    Verdict::ABetter
                }
            })
            .collect();
        let report = accuracy(&preds, &fractions, &[]).unwrap();
        assert_eq!(report.accuracy, 1.0);
        for (_, acc) in &report.variants {
            assert_eq!(*acc, 1.0);
        }
    }

    #[test]
    fn length_mismatch_rejected() {
        let err = accuracy(&[Verdict::ABetter], &[0.2, 0.4], &[]).unwrap_err();
        assert!(matches!(err, EvalError::LengthMismatch { .. }));
    }

    #[test]
    fn non_quantized_fraction_rejected() {
        let err = accuracy(&[Verdict::ABetter], &[0.3], &[]).unwrap_err();
        assert!(matches!(err, EvalError::BadFraction(_)));
    }

    #[test]
    fn rubric_flags_severe_false_positive() {
        use crate::forge::{derive_questionnaire, DistortionSpec, TextureKind, TextureSpec};
        let texture = TextureSpec {
            kind: TextureKind::Bricks,
            frequency: 5.0,
            orientation: 0.5,
            palette_seed: 1,
        };
        let mut r = crate::rng::stream(1, "rubric");
        let qa = derive_questionnaire(
            &[DistortionSpec::sample(Aspect::Blurriness, Severity::Severe, &mut r)],
            &texture,
        )
        .unwrap();
        let qb = derive_questionnaire(
            &[DistortionSpec::sample(Aspect::Color, Severity::Mild, &mut r)],
            &texture,
        )
        .unwrap();
        // asserts severe noise on a noise-free image
        let bad = "Image A exhibits severe noise. Image B shows mild color distortion. \
                   Therefore, Image B has better overall quality.";
        let res = rubric(bad, &qa, &qb);
        assert!(!res.no_severe_false_positive);
        assert!(!res.reasonable);
    }

    #[test]
    fn unparsed_responses_are_unreasonable() {
        use crate::forge::{derive_questionnaire, TextureKind, TextureSpec};
        let texture = TextureSpec {
            kind: TextureKind::Faces,
            frequency: 5.0,
            orientation: 0.5,
            palette_seed: 1,
        };
        let q = derive_questionnaire(&[], &texture).unwrap();
        let res = rubric("nothing useful here", &q, &q);
        assert!(!res.reasonable);
    }
}
