//! Browser bindings for three small views of the method: the judgment
//! matrix for given scores, a live pre-training loss curve, and how view
//! similarity falls as more edges are dropped.
//!
//! Each export wraps a plain Rust function so the logic runs and is tested
//! natively; only error conversion touches JavaScript.

use c2f::encoder::EncoderConfig;
use c2f::eval::{linear_probe, make_split, similarity_diagnostics, ProbeConfig, Split};
use c2f::graph::{generate_sbm, SbmSpec};
use c2f::losses::judgment_matrices;
use c2f::trainer::{AblationMode, TrainConfig, Trainer};
use wasm_bindgen::prelude::*;

fn js(e: c2f::Error) -> JsError {
    JsError::new(&e.to_string())
}

/// Row-major `M × (K+1)` overall judgment matrix: `judgments` has one entry
/// per view, `fine_scores` the self score followed by the `K` negative scores.
pub fn judgment_matrix_values(
    judgments: &[f64],
    fine_scores: &[f64],
    alpha: f64,
) -> c2f::Result<Vec<f64>> {
    Ok(judgment_matrices(judgments, fine_scores, alpha)?
        .overall
        .into_data())
}

#[wasm_bindgen(js_name = judgmentMatrix)]
pub fn judgment_matrix(
    judgments: &[f64],
    fine_scores: &[f64],
    alpha: f64,
) -> Result<Vec<f64>, JsError> {
    judgment_matrix_values(judgments, fine_scores, alpha).map_err(js)
}

/// Graph and encoder sizes small enough to train interactively.
fn demo_graph(seed: u64) -> c2f::Result<c2f::Graph> {
    Ok(generate_sbm(&SbmSpec {
        block_sizes: vec![40, 40],
        p_in: 0.15,
        p_out: 0.02,
        feature_dim: 8,
        mean_separation: 1.0,
        seed,
    })?)
}

fn demo_config(mode: AblationMode, alpha: f64, seed: u64) -> TrainConfig {
    let base = TrainConfig {
        alpha,
        negatives: 32,
        learning_rate: 0.005,
        seed,
        encoder: EncoderConfig {
            heads: 4,
            units: 8,
            out_dim: 16,
            ..EncoderConfig::default()
        },
        ..TrainConfig::default()
    };
    base.for_mode(mode)
}

/// A pre-training run on an 80-node two-block graph, advanced step by step.
#[wasm_bindgen]
pub struct Session {
    trainer: Trainer,
    split: Split,
    losses: Vec<f64>,
}

impl Session {
    pub fn create(mode: &str, alpha: f64, seed: u64) -> c2f::Result<Session> {
        let mode: AblationMode = mode.parse()?;
        let g = demo_graph(seed)?;
        let split = make_split(
            g.labels().expect("generated graphs are labelled"),
            10,
            10,
            seed,
        )?;
        Ok(Session {
            trainer: Trainer::new(&g, demo_config(mode, alpha, seed))?,
            split,
            losses: Vec::new(),
        })
    }

    pub fn advance(&mut self, steps: usize) -> c2f::Result<Vec<f64>> {
        let start = self.losses.len();
        for _ in 0..steps {
            self.losses.push(self.trainer.step()?.loss);
        }
        Ok(self.losses[start..].to_vec())
    }

    pub fn accuracy(&self) -> c2f::Result<f64> {
        let g = self.trainer.graph();
        let z = self.trainer.encoder().embed(g)?;
        let labels = g.labels().expect("generated graphs are labelled");
        Ok(linear_probe(
            &z,
            labels,
            g.num_classes(),
            &self.split,
            &ProbeConfig::default(),
        )?
        .accuracy)
    }

    /// Inter-view similarities for every ratio, then intra-view ones.
    pub fn similarity_values(&self, ratios: &[f64], draws: usize) -> c2f::Result<Vec<f64>> {
        let rows = similarity_diagnostics(
            self.trainer.graph(),
            self.trainer.encoder(),
            ratios,
            draws,
            0,
        )?;
        Ok(rows
            .iter()
            .map(|r| r.inter_view)
            .chain(rows.iter().map(|r| r.intra_view))
            .collect())
    }
}

#[wasm_bindgen]
impl Session {
    /// `mode` is one of `vanilla`, `coarse`, `fine`, `c2f`.
    #[wasm_bindgen(constructor)]
    pub fn new(mode: &str, alpha: f64, seed: u64) -> Result<Session, JsError> {
        Session::create(mode, alpha, seed).map_err(js)
    }

    /// Runs `steps` iterations and returns their losses.
    pub fn step(&mut self, steps: usize) -> Result<Vec<f64>, JsError> {
        self.advance(steps).map_err(js)
    }

    /// Every loss so far.
    pub fn losses(&self) -> Vec<f64> {
        self.losses.clone()
    }

    pub fn iteration(&self) -> usize {
        self.trainer.iteration()
    }

    /// Linear-probe test accuracy of the current embeddings.
    #[wasm_bindgen(js_name = probeAccuracy)]
    pub fn probe_accuracy(&self) -> Result<f64, JsError> {
        self.accuracy().map_err(js)
    }

    pub fn similarity(&self, ratios: &[f64], draws: usize) -> Result<Vec<f64>, JsError> {
        self.similarity_values(ratios, draws).map_err(js)
    }
}
