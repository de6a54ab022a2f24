//! Supervised fine-tuning: response-masked next-token loss over the mixed
//! dataset, optimizing only the projector(s), LoRA adapters, image-tag
//! embedding rows and (under the image-embedding scheme) role embeddings.
//! Also hosts the shared generation-based evaluation loop and the ablation
//! runner.

use std::cell::RefCell;
use std::collections::HashMap;
use std::fs;
use std::path::Path;

use rand::Rng;
use thiserror::Error;

use crate::eval;
use crate::forge::{ForgeError, GroundTruth, QuestionnaireRecord, SampleRecord};
use crate::image::{read_ppm, ImageError};
use crate::model::{FusedSequence, Granularity, Model, ModelConfig, ModelError, TagScheme};
use crate::numerics::{AdamConfig, AdamState, Graph, NumericsError, Param};
use crate::rng;
use crate::vision::VisualTokens;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("non-finite loss at optimizer step {step}")]
    NonFiniteLoss { step: usize },
    #[error("record {id}: {message}")]
    BadRecord { id: String, message: String },
    #[error(transparent)]
    Forge(#[from] ForgeError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error(transparent)]
    Eval(#[from] crate::eval::EvalError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub grad_accum: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub weight_decay: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        // desk defaults: batch 8 with 8-step accumulation gives the
        // effective batch of 64
        Self {
            epochs: 3,
            batch_size: 8,
            grad_accum: 8,
            lr: 5e-4,
            beta1: 0.9,
            beta2: 0.95,
            weight_decay: 1e-3,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            weight_decay: self.weight_decay,
            eps: 1e-8,
        }
    }
}

/// One prepared training example: the fused sequence with its response and
/// the images it references (manifest-relative, prompt-role order).
pub struct TrainItem {
    pub id: String,
    pub seq: FusedSequence,
    pub images: Vec<String>,
    /// Number of loss-bearing positions after the next-token shift.
    pub masked_count: usize,
}

/// Builds training items from manifest records.
pub fn prepare_items(records: &[SampleRecord], model: &Model) -> Result<Vec<TrainItem>, TrainError> {
    records
        .iter()
        .map(|record| {
            let build = || -> Result<TrainItem, ModelError> {
                let prompt = model.prompt(record.prompt_kind(), &record.question)?;
                let seq = prompt.with_response(&record.response, model.cfg.lm.max_seq)?;
                let masked_count = seq.loss_mask.iter().filter(|m| **m).count();
                Ok(TrainItem {
                    id: record.id.clone(),
                    seq,
                    images: record.image_paths().iter().map(|s| s.to_string()).collect(),
                    masked_count,
                })
            };
            build().map_err(|e| TrainError::BadRecord {
                id: record.id.clone(),
                message: e.to_string(),
            })
        })
        .collect()
}

/// Caches frozen-encoder outputs per image path.
pub struct VisualCache<'a> {
    model: &'a Model,
    dataset_dir: &'a Path,
    map: RefCell<HashMap<String, VisualTokens>>,
}

impl<'a> VisualCache<'a> {
    pub fn new(model: &'a Model, dataset_dir: &'a Path) -> Self {
        Self {
            model,
            dataset_dir,
            map: RefCell::new(HashMap::new()),
        }
    }

    pub fn get(&self, rel: &str) -> Result<VisualTokens, TrainError> {
        if let Some(hit) = self.map.borrow().get(rel) {
            return Ok(hit.clone());
        }
        let img = read_ppm(&self.dataset_dir.join(rel))?;
        let tokens = self.model.encode_image(&img)?;
        self.map.borrow_mut().insert(rel.to_string(), tokens.clone());
        Ok(tokens)
    }

    pub fn visuals_for(&self, item_images: &[String]) -> Result<Vec<VisualTokens>, TrainError> {
        item_images.iter().map(|p| self.get(p)).collect()
    }
}

/// Per-epoch deterministic shuffle keyed by (seed, epoch), chunked into
/// microbatches.
pub fn epoch_batches(n: usize, batch_size: usize, seed: u64, epoch: usize) -> Vec<Vec<usize>> {
    let mut indices: Vec<usize> = (0..n).collect();
    let mut r = rng::indexed_stream(seed, "epoch-shuffle", epoch as u64);
    for i in (1..indices.len()).rev() {
        let j = r.gen_range(0..=i);
        indices.swap(i, j);
    }
    indices
        .chunks(batch_size.max(1))
        .map(<[usize]>::to_vec)
        .collect()
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub steps: usize,
    pub final_loss: f64,
    /// (optimizer step, mean masked loss) per step.
    pub metrics: Vec<(usize, f64)>,
    pub trainable_elems: usize,
    pub total_elems: usize,
}

impl TrainOutcome {
    pub fn trainable_fraction(&self) -> f64 {
        self.trainable_elems as f64 / self.total_elems as f64
    }

    /// `step,loss,lr` rows for the metrics log.
    pub fn metrics_csv(&self, lr: f64) -> String {
        let mut out = String::from("step,loss,lr\n");
        for (step, loss) in &self.metrics {
            out.push_str(&format!("{step},{loss},{lr}\n"));
        }
        out
    }
}

/// Runs the optimization loop. Per optimizer step the loss is the mean over
/// all masked positions of the effective batch (`batch_size * grad_accum`
/// samples); gradients accumulate across the microbatches through the
/// shared parameter tensors.
pub fn train(
    model: &Model,
    records: &[SampleRecord],
    dataset_dir: &Path,
    cfg: &TrainConfig,
) -> Result<TrainOutcome, TrainError> {
    let items = prepare_items(records, model)?;
    let cache = VisualCache::new(model, dataset_dir);
    let trainable: Vec<Param> = model.params.trainable();
    let mut adam = AdamState::new(cfg.adam(), &trainable);
    let mut metrics = Vec::new();
    let mut step = 0usize;
    model.params.zero_grads();

    for epoch in 0..cfg.epochs {
        let batches = epoch_batches(items.len(), cfg.batch_size, cfg.seed, epoch);
        for group in batches.chunks(cfg.grad_accum.max(1)) {
            let all: Vec<usize> = group.iter().flatten().copied().collect();
            let total_masked: usize = all.iter().map(|&i| items[i].masked_count).sum();
            if total_masked == 0 {
                continue;
            }
            let mut step_loss = 0.0;
            for &idx in &all {
                let item = &items[idx];
                let visuals = cache.visuals_for(&item.images)?;
                let mut g = Graph::new();
                let loss = model.loss(&mut g, &item.seq, &visuals)?;
                let weight = item.masked_count as f64 / total_masked as f64;
                let scaled = g.scale(loss, weight);
                g.backward(scaled)?;
                step_loss += g.data(loss)[0] * weight;
            }
            if !step_loss.is_finite() {
                return Err(TrainError::NonFiniteLoss { step });
            }
            adam.step(&trainable)?;
            model.params.zero_grads();
            metrics.push((step, step_loss));
            step += 1;
        }
    }

    let final_loss = metrics.last().map_or(f64::NAN, |(_, l)| *l);
    Ok(TrainOutcome {
        steps: step,
        final_loss,
        metrics,
        trainable_elems: model.params.trainable_elems(),
        total_elems: model.params.total_elems(),
    })
}

/// Mean masked loss over a record set without touching any parameter.
pub fn evaluate_loss(
    model: &Model,
    records: &[SampleRecord],
    dataset_dir: &Path,
) -> Result<f64, TrainError> {
    let items = prepare_items(records, model)?;
    let cache = VisualCache::new(model, dataset_dir);
    let total_masked: usize = items.iter().map(|i| i.masked_count).sum();
    let mut acc = 0.0;
    for item in &items {
        let visuals = cache.visuals_for(&item.images)?;
        let mut g = Graph::new();
        let loss = model.loss(&mut g, &item.seq, &visuals)?;
        acc += g.data(loss)[0] * item.masked_count as f64 / total_masked as f64;
    }
    Ok(acc)
}

/// Generation-based evaluation outcome.
#[derive(Debug, Clone)]
pub struct EvalOutcome {
    /// Accuracy over task-2/3 records (no exclusion on the headline number).
    pub report: Option<eval::EvalReport>,
    /// Reasonable-rate over task-3 records.
    pub reasonable_rate: Option<f64>,
    pub generated: Vec<(String, String)>,
}

fn reasoning_gold(record: &SampleRecord) -> Option<(QuestionnaireRecord, QuestionnaireRecord)> {
    match &record.gt {
        GroundTruth::Comparison {
            questionnaire_a,
            questionnaire_b,
            ..
        } => Some((*questionnaire_a, *questionnaire_b)),
        _ => None,
    }
}

/// Greedy-decodes the model on every comparison/reasoning record and scores
/// verdict accuracy plus the task-3 reasonable-rate.
pub fn evaluate_model(
    model: &Model,
    records: &[SampleRecord],
    dataset_dir: &Path,
    max_new: usize,
) -> Result<EvalOutcome, TrainError> {
    let cache = VisualCache::new(model, dataset_dir);
    let mut verdicts = Vec::new();
    let mut fractions = Vec::new();
    let mut generated = Vec::new();
    let mut reasoning_responses = Vec::new();
    let mut reasoning_gold_pairs = Vec::new();
    for record in records {
        if !(record.task == 2 || record.task == 3) {
            continue;
        }
        let prompt = model.prompt(record.prompt_kind(), &record.question)?;
        let visuals = cache.visuals_for(
            &record
                .image_paths()
                .iter()
                .map(|s| s.to_string())
                .collect::<Vec<_>>(),
        )?;
        let response = model.generate(&prompt, &visuals, max_new)?;
        verdicts.push(eval::classify_verdict(&response));
        fractions.push(record.human_fraction.unwrap_or(0.0));
        if record.task == 3 {
            if let Some(gold) = reasoning_gold(record) {
                reasoning_responses.push(response.clone());
                reasoning_gold_pairs.push(gold);
            }
        }
        generated.push((record.id.clone(), response));
    }
    let report = if verdicts.is_empty() {
        None
    } else {
        Some(eval::accuracy(&verdicts, &fractions, &[])?)
    };
    let reasonable_rate = if reasoning_responses.is_empty() {
        None
    } else {
        Some(eval::reasonable_rate(&reasoning_responses, &reasoning_gold_pairs)?.0)
    };
    Ok(EvalOutcome {
        report,
        reasonable_rate,
        generated,
    })
}

/// Scores the manifest's own responses (no model in the loop).
pub fn evaluate_gold(records: &[SampleRecord]) -> Result<EvalOutcome, TrainError> {
    let mut verdicts = Vec::new();
    let mut fractions = Vec::new();
    let mut reasoning_responses = Vec::new();
    let mut reasoning_gold_pairs = Vec::new();
    for record in records {
        if !(record.task == 2 || record.task == 3) {
            continue;
        }
        verdicts.push(eval::classify_verdict(&record.response));
        fractions.push(record.human_fraction.unwrap_or(0.0));
        if record.task == 3 {
            if let Some(gold) = reasoning_gold(record) {
                reasoning_responses.push(record.response.clone());
                reasoning_gold_pairs.push(gold);
            }
        }
    }
    let report = if verdicts.is_empty() {
        None
    } else {
        Some(eval::accuracy(&verdicts, &fractions, &[])?)
    };
    let reasonable_rate = if reasoning_responses.is_empty() {
        None
    } else {
        Some(eval::reasonable_rate(&reasoning_responses, &reasoning_gold_pairs)?.0)
    };
    Ok(EvalOutcome {
        report,
        reasonable_rate,
        generated: Vec::new(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AblationAxis {
    DataSources,
    TagScheme,
    LoraRank,
    DataSize,
    FeatureGranularity,
}

impl AblationAxis {
    pub const ALL: [AblationAxis; 5] = [
        AblationAxis::DataSources,
        AblationAxis::TagScheme,
        AblationAxis::LoraRank,
        AblationAxis::DataSize,
        AblationAxis::FeatureGranularity,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AblationAxis::DataSources => "data_sources",
            AblationAxis::TagScheme => "tag_scheme",
            AblationAxis::LoraRank => "lora_rank",
            AblationAxis::DataSize => "data_size",
            AblationAxis::FeatureGranularity => "feature_granularity",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.iter().copied().find(|a| a.as_str() == s)
    }
}

#[derive(Debug, Clone)]
pub struct AblationRow {
    pub axis: String,
    pub point: String,
    pub n_train: usize,
    pub accuracy: f64,
    pub reasonable_rate: Option<f64>,
}

pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut out = String::from("axis,point,n_train,accuracy,reasonable_rate\n");
    for r in rows {
        let rr = r
            .reasonable_rate
            .map(|v| v.to_string())
            .unwrap_or_default();
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.axis, r.point, r.n_train, r.accuracy, rr
        ));
    }
    out
}

/// Trains one model per grid point with a shared seed and evaluates each on
/// the validation records.
#[allow(clippy::too_many_arguments)]
pub fn ablation_runner(
    axis: AblationAxis,
    base_cfg: ModelConfig,
    train_records: &[SampleRecord],
    val_records: &[SampleRecord],
    dataset_dir: &Path,
    train_cfg: &TrainConfig,
    model_seed: u64,
    max_new: usize,
) -> Result<Vec<AblationRow>, TrainError> {
    struct Point {
        label: String,
        cfg: ModelConfig,
        records: Vec<SampleRecord>,
    }
    let mut points = Vec::new();
    match axis {
        AblationAxis::DataSources => {
            let sources: [(&str, &[u8]); 6] = [
                ("2", &[2]),
                ("3", &[3]),
                ("2+1", &[2, 1]),
                ("2+3", &[2, 3]),
                ("2+1+3", &[2, 1, 3]),
                ("2+1+3+content", &[2, 1, 3, 0]),
            ];
            for (label, tasks) in sources {
                points.push(Point {
                    label: label.to_string(),
                    cfg: base_cfg,
                    records: train_records
                        .iter()
                        .filter(|r| tasks.contains(&r.task))
                        .cloned()
                        .collect(),
                });
            }
        }
        AblationAxis::TagScheme => {
            for scheme in TagScheme::ALL {
                let mut cfg = base_cfg;
                cfg.scheme = scheme;
                points.push(Point {
                    label: scheme.as_str().to_string(),
                    cfg,
                    records: train_records.to_vec(),
                });
            }
        }
        AblationAxis::LoraRank => {
            for rank in [8usize, 12, 16, 24, 32] {
                let mut cfg = base_cfg;
                cfg.lm.lora_rank = rank;
                cfg.lm.lora_alpha = rank as f64;
                points.push(Point {
                    label: rank.to_string(),
                    cfg,
                    records: train_records.to_vec(),
                });
            }
        }
        AblationAxis::DataSize => {
            for fraction in [0.25, 0.5, 0.75, 1.0] {
                let n = ((train_records.len() as f64) * fraction).ceil() as usize;
                points.push(Point {
                    label: format!("{fraction}"),
                    cfg: base_cfg,
                    records: train_records[..n.min(train_records.len())].to_vec(),
                });
            }
        }
        AblationAxis::FeatureGranularity => {
            for granularity in [Granularity::Local, Granularity::Global] {
                let mut cfg = base_cfg;
                cfg.granularity = granularity;
                points.push(Point {
                    label: granularity.as_str().to_string(),
                    cfg,
                    records: train_records.to_vec(),
                });
            }
        }
    }

    let mut rows = Vec::with_capacity(points.len());
    for point in points {
        let model = Model::new(point.cfg, model_seed)?;
        train(&model, &point.records, dataset_dir, train_cfg)?;
        let outcome = evaluate_model(&model, val_records, dataset_dir, max_new)?;
        rows.push(AblationRow {
            axis: axis.as_str().to_string(),
            point: point.label,
            n_train: point.records.len(),
            accuracy: outcome.report.as_ref().map_or(0.0, |r| r.accuracy),
            reasonable_rate: outcome.reasonable_rate,
        });
    }
    Ok(rows)
}

/// Writes text to a path, mapping failures to a path-carrying error.
pub fn write_text(path: &Path, content: &str) -> Result<(), TrainError> {
    fs::write(path, content).map_err(|source| TrainError::Io {
        path: path.display().to_string(),
        source,
    })
}
