//! Per-layer patch budgets and the target life moments they imply.
//!
//! A schedule fixes the number of retained patches `n_t` for every layer
//! `t` (1-based, class token excluded). The count shrinks by the keep
//! rate after each slimming layer: slimming at layer `t_i` takes effect
//! from layer `t_i + 1`. Treating the count drops as a histogram of
//! lives (`n_t - n_{t+1}` patches die at layer `t`, `n_T` survive to the
//! end) yields the mean and standard deviation the life predictor is
//! renormalized to.

use crate::config::ViTConfig;
use crate::error::{Error, Result};
use serde::Serialize;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SlimSchedule {
    /// `counts[t-1]` is the patch budget for layer `t`.
    pub counts: Vec<usize>,
    pub t_slim: Vec<usize>,
    pub rho: f64,
    pub target_mean: f64,
    pub target_std: f64,
}

impl SlimSchedule {
    pub fn from_config(cfg: &ViTConfig) -> Result<Self> {
        cfg.validate()?;
        Self::new(cfg.num_patches(), cfg.layers, cfg.rho, &cfg.t_slim)
    }

    pub fn new(patches: usize, layers: usize, rho: f64, t_slim: &[usize]) -> Result<Self> {
        let counts = build_counts(patches, layers, rho, t_slim)?;
        let (target_mean, target_std) = target_moments(&counts, patches, layers);
        Ok(SlimSchedule {
            counts,
            t_slim: t_slim.to_vec(),
            rho,
            target_mean,
            target_std,
        })
    }

    /// Patch budget for 1-based layer `t`.
    pub fn count_at(&self, t: usize) -> usize {
        self.counts[t - 1]
    }

    pub fn layers(&self) -> usize {
        self.counts.len()
    }

    pub fn initial_patches(&self) -> usize {
        self.counts[0]
    }

    /// True when some layer runs with fewer patches than the first.
    pub fn has_slimming(&self) -> bool {
        self.counts.iter().any(|&c| c < self.counts[0])
    }

    /// Number of slimming layers that actually shrink the count.
    pub fn shrink_stages(&self) -> usize {
        self.counts.windows(2).filter(|w| w[1] < w[0]).count()
    }
}

/// Round to nearest with halves going up.
fn round_half_up(x: f64) -> usize {
    (x + 0.5).floor() as usize
}

/// Per-layer patch counts for keep rate `rho` and slimming layers
/// `t_slim`. The count is held constant between slimming layers and
/// never drops below one patch.
pub fn build_counts(
    patches: usize,
    layers: usize,
    rho: f64,
    t_slim: &[usize],
) -> Result<Vec<usize>> {
    if patches == 0 || layers == 0 {
        return Err(Error::Config("patches and layers must be positive".into()));
    }
    if !(rho > 0.0 && rho <= 1.0) {
        return Err(Error::Config(format!("rho must lie in (0, 1], got {rho}")));
    }
    if t_slim.is_empty() && rho < 1.0 {
        return Err(Error::Config(
            "keep rate below 1.0 requires at least one slimming layer".into(),
        ));
    }
    if !t_slim.windows(2).all(|w| w[0] < w[1]) {
        return Err(Error::Config(format!("t_slim must be strictly ascending: {t_slim:?}")));
    }
    if t_slim.iter().any(|&t| t < 1 || t > layers) {
        return Err(Error::Config(format!(
            "slimming layers {t_slim:?} must lie in [1, {layers}]"
        )));
    }

    let mut counts = Vec::with_capacity(layers);
    let mut current = patches;
    for t in 1..=layers {
        // Slimming at layer t-1 takes effect here.
        if t > 1 && t_slim.contains(&(t - 1)) {
            current = round_half_up(rho * current as f64).max(1);
        }
        counts.push(current);
    }
    Ok(counts)
}

/// Mean and population standard deviation of the life histogram implied
/// by the counts: `n_t - n_{t+1}` patches with life `t`, `n_T` with
/// life `T`.
pub fn target_moments(counts: &[usize], patches: usize, layers: usize) -> (f64, f64) {
    assert_eq!(counts.len(), layers, "counts must cover every layer");
    let n = patches as f64;
    let mut mean = layers as f64 * counts[layers - 1] as f64;
    for t in 1..layers {
        let died = (counts[t - 1] - counts[t]) as f64;
        mean += t as f64 * died;
    }
    mean /= n;

    let mut var = (layers as f64 - mean).powi(2) * counts[layers - 1] as f64;
    for t in 1..layers {
        let died = (counts[t - 1] - counts[t]) as f64;
        var += (t as f64 - mean).powi(2) * died;
    }
    var /= n;
    (mean, var.sqrt())
}

/// Expand a count list into the explicit multiset of lives it implies.
/// Brute-force counterpart of [`target_moments`], used by tests.
pub fn life_histogram(counts: &[usize], layers: usize) -> Vec<usize> {
    let mut lives = Vec::new();
    for t in 1..layers {
        for _ in 0..counts[t - 1] - counts[t] {
            lives.push(t);
        }
    }
    for _ in 0..counts[layers - 1] {
        lives.push(layers);
    }
    lives
}
