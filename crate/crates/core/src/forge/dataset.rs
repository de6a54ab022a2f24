//! Dataset assembly: per-record case generation, image materialization,
//! JSONL manifests and dataset statistics.
//!
//! Every case is a pure function of (run seed, split, task, index), so
//! re-running the forge reproduces byte-identical output trees.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::image::{write_ppm, ImagePlane};
use crate::model::PromptKind;
use crate::rng;

use super::{
    apply_distortion, derive_questionnaire, distortion_ordering, majority_prefers_b, penalty,
    question_for, render_comparison_response, render_content_caption,
    render_description_response, render_reasoning_response, synth_reference, Aspect,
    ComparisonRecord, DistortionSpec, ForgeError, Preference, QuestionnaireRecord, Severity,
    TextureKind, TextureSpec, Winner,
};

/// Record counts per split. Train counts for the three tasks default to the
/// source corpus sizes scaled by 1/100 (rounded), content filler likewise.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ForgeConfig {
    pub n_task1: usize,
    pub n_task2: usize,
    pub n_task3: usize,
    pub n_content: usize,
    pub n_val1: usize,
    pub n_val2: usize,
    pub n_val3: usize,
    /// How many times each Task-1/Task-3 record is materialized in the
    /// training manifest.
    pub duplication: usize,
}

impl Default for ForgeConfig {
    fn default() -> Self {
        Self {
            n_task1: 11,
            n_task2: 1156,
            n_task3: 37,
            n_content: 487,
            n_val1: 1,
            n_val2: 94,
            n_val3: 2,
            duplication: 10,
        }
    }
}

impl ForgeConfig {
    /// Training-manifest length under the mixing rule.
    pub fn expected_train_len(&self) -> usize {
        self.n_task2 + self.duplication * (self.n_task1 + self.n_task3) + self.n_content
    }
}

/// One task-1 (quality description) case.
#[derive(Debug, Clone, PartialEq)]
pub struct DescriptionCase {
    pub texture: TextureSpec,
    pub specs: Vec<DistortionSpec>,
    pub questionnaire: QuestionnaireRecord,
    pub question: String,
    pub response: String,
    pub image_seed: u64,
}

/// One task-2/3 (comparison / reasoning) case. For task 2 the response
/// follows the simulated annotator majority; for task 3 the fraction is
/// resampled until the majority agrees with the penalty oracle so the
/// reasoning text stays internally consistent.
#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonCase {
    pub texture: TextureSpec,
    pub specs_a: Vec<DistortionSpec>,
    pub specs_b: Vec<DistortionSpec>,
    pub questionnaire_a: QuestionnaireRecord,
    pub questionnaire_b: QuestionnaireRecord,
    pub comparison: ComparisonRecord,
    /// The verdict the response text asserts.
    pub label_winner: Winner,
    pub human_fraction: f64,
    pub question: String,
    pub response: String,
    pub image_seed: u64,
}

/// One content-description filler case (single image plus caption).
#[derive(Debug, Clone, PartialEq)]
pub struct ContentCase {
    pub texture: TextureSpec,
    pub question: String,
    pub caption: String,
    pub image_seed: u64,
}

fn draw_distortions(count: usize, rng: &mut ChaCha8Rng) -> Vec<DistortionSpec> {
    let mut aspects = Aspect::ALL.to_vec();
    for i in (1..aspects.len()).rev() {
        let j = rng.gen_range(0..=i);
        aspects.swap(i, j);
    }
    aspects[..count]
        .iter()
        .map(|a| {
            let severity = if rng.gen_bool(0.5) {
                Severity::Mild
            } else {
                Severity::Severe
            };
            DistortionSpec::sample(*a, severity, rng)
        })
        .collect()
}

pub fn gen_description_case(seed: u64, split: &str, index: u64) -> DescriptionCase {
    let mut rng = rng::indexed_stream(seed, &format!("{split}-description"), index);
    let texture = TextureSpec::sample(&mut rng);
    let count = match rng.gen_range(0..8) {
        0 => 0,
        1..=4 => 1,
        _ => 2,
    };
    let specs = draw_distortions(count, &mut rng);
    let questionnaire = derive_questionnaire(&specs, &texture).expect("aspects drawn uniquely");
    let question = question_for(PromptKind::Description, &mut rng);
    let response = render_description_response(&questionnaire, &mut rng);
    let image_seed = rng.gen();
    DescriptionCase {
        texture,
        specs,
        questionnaire,
        question,
        response,
        image_seed,
    }
}

pub fn gen_comparison_case(seed: u64, split: &str, index: u64, reasoning: bool) -> ComparisonCase {
    let label = if reasoning { "reasoning" } else { "comparison" };
    let mut rng = rng::indexed_stream(seed, &format!("{split}-{label}"), index);
    let texture = TextureSpec::sample(&mut rng);
    let specs_a = draw_distortions(rng.gen_range(1..=2), &mut rng);
    // comparisons need a strict quality gap so a definite verdict exists
    let mut specs_b = draw_distortions(rng.gen_range(1..=2), &mut rng);
    for _ in 0..64 {
        if penalty(&specs_a) != penalty(&specs_b) {
            break;
        }
        specs_b = draw_distortions(rng.gen_range(1..=2), &mut rng);
    }
    assert_ne!(penalty(&specs_a), penalty(&specs_b), "no quality gap found");
    let questionnaire_a = derive_questionnaire(&specs_a, &texture).expect("unique aspects");
    let questionnaire_b = derive_questionnaire(&specs_b, &texture).expect("unique aspects");
    let comparison = distortion_ordering(&specs_a, &specs_b).expect("unique aspects");
    let pa = f64::from(penalty(&specs_a));
    let pb = f64::from(penalty(&specs_b));

    let (human_fraction, label_winner, question, response) = if reasoning {
        let oracle = comparison.winner;
        let mut fraction = super::simulate_fraction(pa, pb, &mut rng);
        let mut agreed = false;
        for _ in 0..1000 {
            let majority = if majority_prefers_b(fraction) {
                Winner::B
            } else {
                Winner::A
            };
            if majority == oracle {
                agreed = true;
                break;
            }
            fraction = super::simulate_fraction(pa, pb, &mut rng);
        }
        if !agreed {
            fraction = if oracle == Winner::A { 0.0 } else { 1.0 };
        }
        let question = question_for(PromptKind::Reasoning, &mut rng);
        let response = render_reasoning_response(
            &questionnaire_a,
            &questionnaire_b,
            oracle,
            Preference::None,
            &mut rng,
        );
        (fraction, oracle, question, response)
    } else {
        let fraction = super::simulate_fraction(pa, pb, &mut rng);
        let label = if majority_prefers_b(fraction) {
            Winner::B
        } else {
            Winner::A
        };
        let question = question_for(PromptKind::Comparison, &mut rng);
        let response = render_comparison_response(label, &mut rng);
        (fraction, label, question, response)
    };
    let image_seed = rng.gen();
    ComparisonCase {
        texture,
        specs_a,
        specs_b,
        questionnaire_a,
        questionnaire_b,
        comparison,
        label_winner,
        human_fraction,
        question,
        response,
        image_seed,
    }
}

pub fn gen_content_case(seed: u64, split: &str, index: u64) -> ContentCase {
    let mut rng = rng::indexed_stream(seed, &format!("{split}-content"), index);
    let texture = TextureSpec::sample(&mut rng);
    let question = question_for(PromptKind::Content, &mut rng);
    let caption = render_content_caption(texture.kind, &mut rng);
    let image_seed = rng.gen();
    ContentCase {
        texture,
        question,
        caption,
        image_seed,
    }
}

/// Nested ground truth stored with each manifest record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GroundTruth {
    Description {
        questionnaire: QuestionnaireRecord,
        specs: Vec<DistortionSpec>,
    },
    Comparison {
        questionnaire_a: QuestionnaireRecord,
        questionnaire_b: QuestionnaireRecord,
        comparison: ComparisonRecord,
        specs_a: Vec<DistortionSpec>,
        specs_b: Vec<DistortionSpec>,
    },
    Content {
        texture: TextureKind,
    },
}

/// One manifest line. Tasks 2/3 carry three images and an annotator
/// fraction (share preferring Image B); task 1 carries two images; the
/// content filler (task 0) references its single image from both `ref`
/// and `img_a`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub id: String,
    pub task: u8,
    #[serde(rename = "ref")]
    pub ref_path: String,
    pub img_a: String,
    pub img_b: Option<String>,
    pub question: String,
    pub response: String,
    pub gt: GroundTruth,
    pub human_fraction: Option<f64>,
}

impl SampleRecord {
    pub fn prompt_kind(&self) -> PromptKind {
        match self.task {
            1 => PromptKind::Description,
            2 => PromptKind::Comparison,
            3 => PromptKind::Reasoning,
            _ => PromptKind::Content,
        }
    }

    /// Image paths in prompt-role order.
    pub fn image_paths(&self) -> Vec<&str> {
        match self.task {
            1 => vec![&self.ref_path, &self.img_a],
            2 | 3 => vec![
                self.ref_path.as_str(),
                self.img_a.as_str(),
                self.img_b.as_deref().expect("tasks 2/3 carry img_b"),
            ],
            _ => vec![&self.ref_path],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ForgeSummary {
    pub train_records: usize,
    pub val_records: usize,
    pub images_written: usize,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ForgeError + '_ {
    move |source| ForgeError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Applies a distortion chain with per-step derived noise seeds.
fn distort_chain(img: &ImagePlane, specs: &[DistortionSpec], image_seed: u64, side: &str) -> ImagePlane {
    let mut out = img.clone();
    for (j, spec) in specs.iter().enumerate() {
        let step_seed = rng::indexed_stream(image_seed, side, j as u64).gen();
        out = apply_distortion(&out, spec, step_seed);
    }
    out
}

struct ImageWriter<'a> {
    out_dir: &'a Path,
    written: usize,
}

impl ImageWriter<'_> {
    fn write(&mut self, rel: &str, img: &ImagePlane) -> Result<(), ForgeError> {
        let path = self.out_dir.join(rel);
        write_ppm(&path, img)?;
        self.written += 1;
        Ok(())
    }
}

/// Forges the dataset directory: PPM images plus `train.jsonl` and
/// `val.jsonl`. The training manifest lists every Task-2 record once, then
/// `duplication` copies of the Task-1 and Task-3 records, then the content
/// filler.
pub fn forge_dataset(
    out_dir: &Path,
    cfg: &ForgeConfig,
    seed: u64,
) -> Result<ForgeSummary, ForgeError> {
    let images_dir = out_dir.join("images");
    fs::create_dir_all(&images_dir).map_err(io_err(&images_dir))?;
    let mut writer = ImageWriter {
        out_dir,
        written: 0,
    };

    let mut descriptions = Vec::with_capacity(cfg.n_task1);
    for i in 0..cfg.n_task1 {
        let case = gen_description_case(seed, "train", i as u64);
        let rel_ref = format!("images/train_t1_{i:05}_ref.ppm");
        let rel_a = format!("images/train_t1_{i:05}_a.ppm");
        let reference = synth_reference(&case.texture, case.image_seed);
        writer.write(&rel_ref, &reference)?;
        writer.write(&rel_a, &distort_chain(&reference, &case.specs, case.image_seed, "a"))?;
        descriptions.push(description_record(&case, "train", i, None, rel_ref, rel_a));
    }

    let mut comparisons = Vec::with_capacity(cfg.n_task2);
    for i in 0..cfg.n_task2 {
        let case = gen_comparison_case(seed, "train", i as u64, false);
        comparisons.push(write_comparison(&mut writer, &case, "train", 2, i, None)?);
    }

    let mut reasonings = Vec::with_capacity(cfg.n_task3);
    for i in 0..cfg.n_task3 {
        let case = gen_comparison_case(seed, "train", i as u64, true);
        reasonings.push(write_comparison(&mut writer, &case, "train", 3, i, None)?);
    }

    let mut contents = Vec::with_capacity(cfg.n_content);
    for i in 0..cfg.n_content {
        let case = gen_content_case(seed, "train", i as u64);
        let rel = format!("images/train_t0_{i:05}.ppm");
        writer.write(&rel, &synth_reference(&case.texture, case.image_seed))?;
        contents.push(SampleRecord {
            id: format!("train-t0-{i:05}"),
            task: 0,
            ref_path: rel.clone(),
            img_a: rel,
            img_b: None,
            question: case.question.clone(),
            response: case.caption.clone(),
            gt: GroundTruth::Content {
                texture: case.texture.kind,
            },
            human_fraction: None,
        });
    }

    let mut train: Vec<SampleRecord> = Vec::with_capacity(cfg.expected_train_len());
    train.extend(comparisons);
    for d in 0..cfg.duplication {
        for r in &descriptions {
            let mut copy = r.clone();
            copy.id = format!("{}-d{d:02}", r.id);
            train.push(copy);
        }
        for r in &reasonings {
            let mut copy = r.clone();
            copy.id = format!("{}-d{d:02}", r.id);
            train.push(copy);
        }
    }
    train.extend(contents);
    debug_assert_eq!(train.len(), cfg.expected_train_len());

    let mut val: Vec<SampleRecord> = Vec::new();
    for i in 0..cfg.n_val1 {
        let case = gen_description_case(seed, "val", i as u64);
        let rel_ref = format!("images/val_t1_{i:05}_ref.ppm");
        let rel_a = format!("images/val_t1_{i:05}_a.ppm");
        let reference = synth_reference(&case.texture, case.image_seed);
        writer.write(&rel_ref, &reference)?;
        writer.write(&rel_a, &distort_chain(&reference, &case.specs, case.image_seed, "a"))?;
        val.push(description_record(&case, "val", i, None, rel_ref, rel_a));
    }
    for i in 0..cfg.n_val2 {
        let case = gen_comparison_case(seed, "val", i as u64, false);
        val.push(write_comparison(&mut writer, &case, "val", 2, i, None)?);
    }
    for i in 0..cfg.n_val3 {
        let case = gen_comparison_case(seed, "val", i as u64, true);
        val.push(write_comparison(&mut writer, &case, "val", 3, i, None)?);
    }

    write_manifest(&out_dir.join("train.jsonl"), &train)?;
    write_manifest(&out_dir.join("val.jsonl"), &val)?;
    Ok(ForgeSummary {
        train_records: train.len(),
        val_records: val.len(),
        images_written: writer.written,
    })
}

fn description_record(
    case: &DescriptionCase,
    split: &str,
    index: usize,
    dup: Option<usize>,
    rel_ref: String,
    rel_a: String,
) -> SampleRecord {
    let suffix = dup.map(|d| format!("-d{d:02}")).unwrap_or_default();
    SampleRecord {
        id: format!("{split}-t1-{index:05}{suffix}"),
        task: 1,
        ref_path: rel_ref,
        img_a: rel_a,
        img_b: None,
        question: case.question.clone(),
        response: case.response.clone(),
        gt: GroundTruth::Description {
            questionnaire: case.questionnaire,
            specs: case.specs.clone(),
        },
        human_fraction: None,
    }
}

fn write_comparison(
    writer: &mut ImageWriter<'_>,
    case: &ComparisonCase,
    split: &str,
    task: u8,
    index: usize,
    dup: Option<usize>,
) -> Result<SampleRecord, ForgeError> {
    let rel_ref = format!("images/{split}_t{task}_{index:05}_ref.ppm");
    let rel_a = format!("images/{split}_t{task}_{index:05}_a.ppm");
    let rel_b = format!("images/{split}_t{task}_{index:05}_b.ppm");
    let reference = synth_reference(&case.texture, case.image_seed);
    writer.write(&rel_ref, &reference)?;
    writer.write(&rel_a, &distort_chain(&reference, &case.specs_a, case.image_seed, "a"))?;
    writer.write(&rel_b, &distort_chain(&reference, &case.specs_b, case.image_seed, "b"))?;
    let suffix = dup.map(|d| format!("-d{d:02}")).unwrap_or_default();
    Ok(SampleRecord {
        id: format!("{split}-t{task}-{index:05}{suffix}"),
        task,
        ref_path: rel_ref,
        img_a: rel_a,
        img_b: Some(rel_b),
        question: case.question.clone(),
        response: case.response.clone(),
        gt: GroundTruth::Comparison {
            questionnaire_a: case.questionnaire_a,
            questionnaire_b: case.questionnaire_b,
            comparison: case.comparison,
            specs_a: case.specs_a.clone(),
            specs_b: case.specs_b.clone(),
        },
        human_fraction: Some(case.human_fraction),
    })
}

fn write_manifest(path: &Path, records: &[SampleRecord]) -> Result<(), ForgeError> {
    let mut file = fs::File::create(path).map_err(io_err(path))?;
    for record in records {
        let line = serde_json::to_string(record).expect("records serialize");
        file.write_all(line.as_bytes()).map_err(io_err(path))?;
        file.write_all(b"\n").map_err(io_err(path))?;
    }
    Ok(())
}

/// Parses a JSONL manifest, reporting the 1-based line number on failure.
pub fn read_manifest(path: &Path) -> Result<Vec<SampleRecord>, ForgeError> {
    let content = fs::read_to_string(path).map_err(io_err(path))?;
    let mut records = Vec::new();
    for (i, line) in content.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record: SampleRecord =
            serde_json::from_str(line).map_err(|e| ForgeError::BadRecord {
                line: i + 1,
                message: e.to_string(),
            })?;
        records.push(record);
    }
    Ok(records)
}

#[derive(Debug, Clone, PartialEq)]
pub struct StatsRow {
    pub section: String,
    pub task: String,
    pub key: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct StatsReport {
    pub rows: Vec<StatsRow>,
}

impl StatsReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("section,task,key,value\n");
        for r in &self.rows {
            out.push_str(&format!("{},{},{},{}\n", r.section, r.task, r.key, r.value));
        }
        out
    }
}

fn severity_key(s: Severity) -> &'static str {
    match s {
        Severity::Undistorted => "undistorted",
        Severity::Mild => "mild",
        Severity::Severe => "severe",
    }
}

fn aspect_key(a: Aspect) -> &'static str {
    match a {
        Aspect::Brightness => "brightness",
        Aspect::Color => "color",
        Aspect::Noise => "noise",
        Aspect::Artifacts => "artifacts",
        Aspect::Blurriness => "blurriness",
    }
}

/// Per-task response-length means, a word-count histogram, and option
/// counts for distortions and textures.
pub fn dataset_stats(records: &[SampleRecord]) -> StatsReport {
    let mut rows = Vec::new();
    let word_count = |s: &str| s.split_whitespace().count();

    for task in [0u8, 1, 2, 3] {
        let subset: Vec<&SampleRecord> = records.iter().filter(|r| r.task == task).collect();
        let n = subset.len();
        let (mean_words, mean_chars) = if n == 0 {
            (0.0, 0.0)
        } else {
            let words: usize = subset.iter().map(|r| word_count(&r.response)).sum();
            let chars: usize = subset.iter().map(|r| r.response.chars().count()).sum();
            (words as f64 / n as f64, chars as f64 / n as f64)
        };
        rows.push(StatsRow {
            section: "length".into(),
            task: task.to_string(),
            key: "count".into(),
            value: n as f64,
        });
        rows.push(StatsRow {
            section: "length".into(),
            task: task.to_string(),
            key: "mean_words".into(),
            value: mean_words,
        });
        rows.push(StatsRow {
            section: "length".into(),
            task: task.to_string(),
            key: "mean_chars".into(),
            value: mean_chars,
        });
    }

    const BIN: usize = 10;
    const BINS: usize = 15;
    let mut hist = [0usize; BINS + 1];
    for r in records {
        let w = word_count(&r.response);
        let idx = (w / BIN).min(BINS);
        hist[idx] += 1;
    }
    for (i, count) in hist.iter().enumerate() {
        let key = if i == BINS {
            format!("{}+", BINS * BIN)
        } else {
            format!("{}-{}", i * BIN, (i + 1) * BIN - 1)
        };
        rows.push(StatsRow {
            section: "hist_words".into(),
            task: "all".into(),
            key,
            value: *count as f64,
        });
    }

    let mut push_option_counts = |task: u8, questionnaires: &[&QuestionnaireRecord]| {
        for aspect in Aspect::ALL {
            for severity in [Severity::Undistorted, Severity::Mild, Severity::Severe] {
                let count = questionnaires
                    .iter()
                    .filter(|q| q.severity(aspect) == severity)
                    .count();
                rows.push(StatsRow {
                    section: "distortion".into(),
                    task: task.to_string(),
                    key: format!("{}_{}", aspect_key(aspect), severity_key(severity)),
                    value: count as f64,
                });
            }
        }
    };
    let task1_q: Vec<&QuestionnaireRecord> = records
        .iter()
        .filter_map(|r| match &r.gt {
            GroundTruth::Description { questionnaire, .. } if r.task == 1 => Some(questionnaire),
            _ => None,
        })
        .collect();
    push_option_counts(1, &task1_q);
    let task3_q: Vec<&QuestionnaireRecord> = records
        .iter()
        .filter(|r| r.task == 3)
        .filter_map(|r| match &r.gt {
            GroundTruth::Comparison {
                questionnaire_a,
                questionnaire_b,
                ..
            } => Some([questionnaire_a, questionnaire_b]),
            _ => None,
        })
        .flatten()
        .collect();
    push_option_counts(3, &task3_q);

    for kind in TextureKind::ALL {
        let count = records
            .iter()
            .filter(|r| {
                let k = match &r.gt {
                    GroundTruth::Description { questionnaire, .. } => questionnaire.texture_kind,
                    GroundTruth::Comparison {
                        questionnaire_a, ..
                    } => questionnaire_a.texture_kind,
                    GroundTruth::Content { texture } => *texture,
                };
                k == kind
            })
            .count();
        rows.push(StatsRow {
            section: "texture".into(),
            task: "all".into(),
            key: kind.phrase().replace(' ', "_"),
            value: count as f64,
        });
    }

    StatsReport { rows }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_cfg() -> ForgeConfig {
        ForgeConfig {
            n_task1: 2,
            n_task2: 5,
            n_task3: 2,
            n_content: 3,
            n_val1: 1,
            n_val2: 2,
            n_val3: 1,
            duplication: 10,
        }
    }

    #[test]
    fn default_counts_follow_source_scale() {
        // source corpus sizes 1,115 / 115,646 / 3,739 and 48,734 scaled 1/100
        let cfg = ForgeConfig::default();
        assert_eq!(cfg.n_task1, (1115.0_f64 / 100.0).round() as usize);
        assert_eq!(cfg.n_task2, (115_646.0_f64 / 100.0).round() as usize);
        assert_eq!(cfg.n_task3, (3739.0_f64 / 100.0).round() as usize);
        assert_eq!(cfg.n_content, (48_734.0_f64 / 100.0).round() as usize);
        assert_eq!(cfg.duplication, 10);
    }

    #[test]
    fn case_generation_is_deterministic() {
        let a = gen_comparison_case(9, "train", 4, false);
        let b = gen_comparison_case(9, "train", 4, false);
        assert_eq!(a, b);
        let c = gen_comparison_case(9, "train", 5, false);
        assert_ne!(a, c);
    }

    #[test]
    fn comparison_cases_have_strict_gap_and_majority_label() {
        for i in 0..50 {
            let case = gen_comparison_case(11, "train", i, false);
            assert_ne!(penalty(&case.specs_a), penalty(&case.specs_b));
            let majority = if majority_prefers_b(case.human_fraction) {
                Winner::B
            } else {
                Winner::A
            };
            assert_eq!(case.label_winner, majority);
        }
    }

    #[test]
    fn reasoning_cases_align_majority_with_oracle() {
        for i in 0..50 {
            let case = gen_comparison_case(12, "train", i, true);
            let majority = if majority_prefers_b(case.human_fraction) {
                Winner::B
            } else {
                Winner::A
            };
            assert_eq!(case.label_winner, case.comparison.winner);
            assert_eq!(majority, case.comparison.winner);
        }
    }

    #[test]
    fn forge_writes_expected_manifests() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny_cfg();
        let summary = forge_dataset(dir.path(), &cfg, 7).unwrap();
        assert_eq!(summary.train_records, cfg.expected_train_len());
        assert_eq!(summary.val_records, 4);
        let train = read_manifest(&dir.path().join("train.jsonl")).unwrap();
        assert_eq!(train.len(), 5 + 10 * (2 + 2) + 3);
        // every referenced image exists
        for r in &train {
            for p in r.image_paths() {
                assert!(dir.path().join(p).exists(), "missing {p}");
            }
        }
        // content records reference one image from both slots
        let content: Vec<_> = train.iter().filter(|r| r.task == 0).collect();
        assert_eq!(content.len(), 3);
        for r in content {
            assert_eq!(r.ref_path, r.img_a);
            assert!(r.img_b.is_none());
        }
    }

    #[test]
    fn forge_is_byte_deterministic() {
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        let cfg = ForgeConfig {
            n_task1: 1,
            n_task2: 2,
            n_task3: 1,
            n_content: 1,
            n_val1: 0,
            n_val2: 1,
            n_val3: 0,
            duplication: 2,
        };
        forge_dataset(d1.path(), &cfg, 21).unwrap();
        forge_dataset(d2.path(), &cfg, 21).unwrap();
        let m1 = fs::read(d1.path().join("train.jsonl")).unwrap();
        let m2 = fs::read(d2.path().join("train.jsonl")).unwrap();
        assert_eq!(m1, m2);
        // spot-check one image byte-for-byte
        let i1 = fs::read(d1.path().join("images/train_t2_00001_b.ppm")).unwrap();
        let i2 = fs::read(d2.path().join("images/train_t2_00001_b.ppm")).unwrap();
        assert_eq!(i1, i2);
    }

    #[test]
    fn manifest_errors_carry_line_numbers() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.jsonl");
        fs::write(&path, "{\"id\": \"x\"}\n").unwrap();
        let err = read_manifest(&path).unwrap_err();
        assert!(err.to_string().contains("line 1"), "{err}");
    }

    #[test]
    fn stats_word_counts_match_recount() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny_cfg();
        forge_dataset(dir.path(), &cfg, 5).unwrap();
        let records = read_manifest(&dir.path().join("train.jsonl")).unwrap();
        let report = dataset_stats(&records);
        // independent recount oracle
        let t2: Vec<&SampleRecord> = records.iter().filter(|r| r.task == 2).collect();
        let expect: f64 = t2
            .iter()
            .map(|r| r.response.split(' ').filter(|w| !w.is_empty()).count())
            .sum::<usize>() as f64
            / t2.len() as f64;
        let row = report
            .rows
            .iter()
            .find(|r| r.section == "length" && r.task == "2" && r.key == "mean_words")
            .unwrap();
        assert!((row.value - expect).abs() < 1e-12);
        // histogram totals equal record count
        let hist_total: f64 = report
            .rows
            .iter()
            .filter(|r| r.section == "hist_words")
            .map(|r| r.value)
            .sum();
        assert_eq!(hist_total as usize, records.len());
    }

    #[test]
    fn empty_manifest_yields_zero_stats() {
        let report = dataset_stats(&[]);
        for row in &report.rows {
            assert_eq!(row.value, 0.0);
        }
        assert!(!report.to_csv().is_empty());
    }
}
