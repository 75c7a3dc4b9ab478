//! Conversion of patch lifespans into per-layer retention weights.
//!
//! Two forms: a hard step (1 while the layer index is at most the life,
//! 0 after) used to reason about inference, and a smooth sigmoid used in
//! training, `1 / (1 + exp(U (t - tau)))`, which approaches the step as
//! the temperature U grows and keeps life order and weight order
//! agreeing at every layer.
//!
//! A second sigmoid variant with the argument negated
//! (`1 / (1 + exp(U (tau - t)))`) is kept behind [`BetaForm::PaperLiteral`]
//! for comparison; it inverts the ordering property and is never the
//! default.

use crate::life::LifeVector;
use serde::{Deserialize, Serialize};

/// Which sigmoid orientation to use for soft weights.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BetaForm {
    /// Decreasing in t, increasing in tau; matches the hard step's limits.
    #[default]
    Corrected,
    /// Sign-flipped variant; violates the ordering property.
    PaperLiteral,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightMode {
    Hard,
    Soft,
}

/// Hard retention weight: 1 iff layer `t` is within the patch's life.
pub fn step_weight(tau: f64, t: usize) -> f64 {
    if (t as f64) <= tau {
        1.0
    } else {
        0.0
    }
}

/// Smooth retention weight at (possibly fractional) layer position `t`.
pub fn sigmoid_weight(tau: f64, t: f64, temperature: f64) -> f64 {
    sigmoid_weight_form(tau, t, temperature, BetaForm::Corrected)
}

pub fn sigmoid_weight_form(tau: f64, t: f64, temperature: f64, form: BetaForm) -> f64 {
    let arg = match form {
        BetaForm::Corrected => temperature * (t - tau),
        BetaForm::PaperLiteral => temperature * (tau - t),
    };
    1.0 / (1.0 + arg.exp())
}

/// d(sigmoid_weight)/d(tau) for the corrected form.
pub fn sigmoid_weight_grad_tau(tau: f64, t: f64, temperature: f64) -> f64 {
    let b = sigmoid_weight(tau, t, temperature);
    temperature * b * (1.0 - b)
}

/// Retention weights for every token and layer. Row 0 is the class
/// token (all ones); row `i` (1-based) is patch `i-1`; column `t-1`
/// holds the weight for 1-based layer `t`.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightMatrix {
    beta: Vec<f64>,
    tokens: usize,
    layers: usize,
    pub mode: WeightMode,
    pub temperature: f64,
}

impl WeightMatrix {
    pub fn tokens(&self) -> usize {
        self.tokens
    }

    pub fn layers(&self) -> usize {
        self.layers
    }

    /// Weight of token `token` (0 = class) in 1-based layer `t`.
    pub fn at(&self, token: usize, t: usize) -> f64 {
        self.beta[token * self.layers + (t - 1)]
    }

    /// Per-token weights for 1-based layer `t`, class token first.
    pub fn layer_column(&self, t: usize) -> Vec<f64> {
        (0..self.tokens).map(|i| self.at(i, t)).collect()
    }

    /// Binary matrix from explicit per-layer keep decisions.
    /// `kept(i, t)` refers to patch `i` (0-based) at 1-based layer `t`.
    pub fn from_keep_fn(
        patches: usize,
        layers: usize,
        kept: impl Fn(usize, usize) -> bool,
    ) -> WeightMatrix {
        let tokens = patches + 1;
        let mut beta = vec![1.0; tokens * layers];
        for i in 0..patches {
            for t in 1..=layers {
                beta[(i + 1) * layers + (t - 1)] = if kept(i, t) { 1.0 } else { 0.0 };
            }
        }
        WeightMatrix {
            beta,
            tokens,
            layers,
            mode: WeightMode::Hard,
            temperature: f64::INFINITY,
        }
    }
}

/// Expand a life vector into the full weight matrix.
pub fn build_weight_matrix(
    lives: &LifeVector,
    layers: usize,
    temperature: f64,
    mode: WeightMode,
) -> WeightMatrix {
    build_weight_matrix_form(lives, layers, temperature, mode, BetaForm::Corrected)
}

pub fn build_weight_matrix_form(
    lives: &LifeVector,
    layers: usize,
    temperature: f64,
    mode: WeightMode,
    form: BetaForm,
) -> WeightMatrix {
    let tokens = lives.len() + 1;
    let mut beta = vec![1.0; tokens * layers];
    for (i, &tau) in lives.lives.iter().enumerate() {
        for t in 1..=layers {
            beta[(i + 1) * layers + (t - 1)] = match mode {
                WeightMode::Hard => step_weight(tau, t),
                WeightMode::Soft => sigmoid_weight_form(tau, t as f64, temperature, form),
            };
        }
    }
    WeightMatrix {
        beta,
        tokens,
        layers,
        mode,
        temperature,
    }
}
