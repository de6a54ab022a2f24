//! Manual calibration probe for the memorization fixture (run with
//! --ignored --nocapture). Prints the loss trajectory and verdict accuracy
//! so training hyperparameters can be pinned with evidence.

use std::time::Instant;

use dqa_core::eval::{classify_verdict, Verdict};
use dqa_core::forge::{forge_dataset, read_manifest, ForgeConfig, Winner};
use dqa_core::model::{Model, ModelConfig};
use dqa_core::trainer::{evaluate_loss, prepare_items, train, TrainConfig, VisualCache};

#[test]
#[ignore]
fn overfit_trajectory() {
    let dir = tempfile::tempdir().unwrap();
    let forge_cfg = ForgeConfig {
        n_task1: 0,
        n_task2: 64,
        n_task3: 0,
        n_content: 0,
        n_val1: 0,
        n_val2: 0,
        n_val3: 0,
        duplication: 1,
    };
    forge_dataset(dir.path(), &forge_cfg, 1234).unwrap();
    let records = read_manifest(&dir.path().join("train.jsonl")).unwrap();
    assert_eq!(records.len(), 64);

    let model = Model::new(ModelConfig::default(), 99).unwrap();
    println!(
        "trainable: {} / {} ({:.3}%)",
        model.params.trainable_elems(),
        model.params.total_elems(),
        100.0 * model.params.trainable_elems() as f64 / model.params.total_elems() as f64
    );

    let lr = std::env::var("PROBE_LR").ok().and_then(|v| v.parse().ok()).unwrap_or(1e-3);
    let chunk_epochs: usize = std::env::var("PROBE_CHUNK").ok().and_then(|v| v.parse().ok()).unwrap_or(20);
    let chunks: usize = std::env::var("PROBE_CHUNKS").ok().and_then(|v| v.parse().ok()).unwrap_or(15);
    let t0 = Instant::now();
    for chunk in 0..chunks {
        let cfg = TrainConfig {
            epochs: chunk_epochs,
            batch_size: 8,
            grad_accum: 1,
            lr,
            seed: chunk as u64, // fresh shuffles per chunk
            ..Default::default()
        };
        train(&model, &records, dir.path(), &cfg).unwrap();
        let loss = evaluate_loss(&model, &records, dir.path()).unwrap();
        println!(
            "epoch {:4}  loss {:8.4}  elapsed {:6.1}s",
            (chunk + 1) * chunk_epochs,
            loss,
            t0.elapsed().as_secs_f64()
        );
        if loss < 0.02 {
            break;
        }
    }

    // verdict accuracy via greedy decoding
    let items = prepare_items(&records, &model).unwrap();
    let cache = VisualCache::new(&model, dir.path());
    let mut hits = 0;
    let t1 = Instant::now();
    for (item, record) in items.iter().zip(&records) {
        let prompt = model.prompt(record.prompt_kind(), &record.question).unwrap();
        let visuals = cache.visuals_for(&item.images).unwrap();
        let out = model.generate(&prompt, &visuals, 120).unwrap();
        let verdict = classify_verdict(&out);
        let expected = match record.human_fraction {
            Some(f) if f > 0.5 => Verdict::from_winner(Winner::B),
            _ => Verdict::from_winner(Winner::A),
        };
        if verdict == expected {
            hits += 1;
        }
    }
    println!(
        "verdict accuracy {}/{} ({:.1}%), generation took {:.1}s",
        hits,
        items.len(),
        100.0 * hits as f64 / items.len() as f64,
        t1.elapsed().as_secs_f64()
    );
}
