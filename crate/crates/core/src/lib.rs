//! Desk-scale multi-modal image-quality assessment pipeline.
//!
//! The crate is organized around a small f64 autodiff engine (`numerics`),
//! a byte-level tokenizer with image tags (`tokenizer`), a frozen patch
//! encoder (`vision`), a LoRA-adapted causal LM with multi-image token
//! fusion (`model`), a synthetic dataset forge (`forge`), a supervised
//! fine-tuning loop (`trainer`) and an evaluation harness (`eval`).

pub mod config;
pub mod eval;
pub mod forge;
pub mod image;
pub mod model;
pub mod nn;
pub mod numerics;
pub mod rng;
pub mod tokenizer;
pub mod trainer;
pub mod vision;
