//! One-shot patch lifespan prediction: normalize the chosen layer's
//! features, score every patch against the class token through a
//! bilinear form, and renormalize the scores to the schedule's target
//! moments. The class token's life is pinned to the model depth.

use crate::error::{Error, Result};
use crate::model::{ModelWeights, LAYER_NORM_EPS};
use crate::schedule::SlimSchedule;
use crate::tensor::{layer_norm, Scalar, Tensor};

/// Guard on the score standard deviation; below it all lives collapse
/// to the target mean.
pub const SCORE_STD_FLOOR: f64 = 1e-6;

/// Predicted lifespans for one image. `lives[i]` belongs to patch `i`
/// (0-based patch indexing, class token excluded); the class token's
/// life is `cls_life`, always the full depth.
#[derive(Clone, Debug, PartialEq)]
pub struct LifeVector {
    pub lives: Vec<f64>,
    pub cls_life: f64,
}

impl LifeVector {
    pub fn len(&self) -> usize {
        self.lives.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lives.is_empty()
    }

    /// Lives clamped to `[t_base, T]` for reporting; training and
    /// selection always use the unclamped values.
    pub fn clamped(&self, t_base: usize, layers: usize) -> Vec<f64> {
        let (lo, hi) = (t_base as f64, layers as f64);
        self.lives.iter().map(|&v| v.clamp(lo, hi)).collect()
    }
}

/// Raw global importance scores, one per patch.
pub type ScoreVector<S> = Vec<S>;

/// Bilinear importance score of each patch against the class token:
/// `s_i = xnorm[cls] . W . xnorm[i]`. Row 0 of `x_norm` is the class
/// token and receives no score.
pub fn bilinear_score<S: Scalar>(x_norm: &Tensor<S>, life_w: &Tensor<S>) -> Result<ScoreVector<S>> {
    let m = x_norm.rows();
    let d = x_norm.cols();
    if life_w.shape() != [d, d] {
        return Err(Error::Dimension(format!(
            "bilinear matrix shape {:?} does not match width {d}",
            life_w.shape()
        )));
    }
    if m < 2 {
        return Err(Error::Contract("need at least one patch beside the class token".into()));
    }
    // projected = cls^T W, then s_i = projected . x_i.
    let mut projected = vec![S::ZERO; d];
    S::gemm(
        false,
        false,
        1,
        d,
        d,
        S::ONE,
        x_norm.row(0),
        life_w.data(),
        S::ZERO,
        &mut projected,
    );
    let mut scores = vec![S::ZERO; m - 1];
    for (i, s) in scores.iter_mut().enumerate() {
        *s = x_norm
            .row(i + 1)
            .iter()
            .zip(projected.iter())
            .map(|(&a, &b)| a * b)
            .sum();
    }
    Ok(scores)
}

/// Affine-map raw scores onto the target life distribution: subtract the
/// score mean, divide by the population standard deviation (floored),
/// then scale to `sigma` and shift to `mu`.
pub fn renormalize_to_life(scores: &[f64], mu: f64, sigma: f64) -> Result<LifeVector> {
    let n = scores.len();
    if n < 2 {
        return Err(Error::Contract(format!(
            "life renormalization needs at least 2 patches, got {n}"
        )));
    }
    if sigma < 0.0 {
        return Err(Error::Contract(format!("target std must be non-negative, got {sigma}")));
    }
    let mean = scores.iter().sum::<f64>() / n as f64;
    let var = scores.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / n as f64;
    let std = var.sqrt().max(SCORE_STD_FLOOR);
    let lives = scores.iter().map(|s| (s - mean) / std * sigma + mu).collect();
    Ok(LifeVector { lives, cls_life: 0.0 })
}

/// Full one-shot prediction from the block output at the base layer:
/// layer norm, bilinear score, renormalization to the schedule moments.
pub fn predict_lives<S: Scalar>(
    x_tbase: &Tensor<S>,
    weights: &ModelWeights<S>,
    schedule: &SlimSchedule,
) -> Result<LifeVector> {
    let normed = layer_norm(
        x_tbase,
        &weights.life_ln_gamma,
        &weights.life_ln_beta,
        LAYER_NORM_EPS,
    );
    let scores = bilinear_score(&normed, &weights.life_w)?;
    let scores64: Vec<f64> = scores.iter().map(|s| s.to_f64()).collect();
    let mut lives = renormalize_to_life(&scores64, schedule.target_mean, schedule.target_std)?;
    lives.cls_life = schedule.layers() as f64;
    Ok(lives)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ViTConfig;
    use crate::rng::Rng;
    use crate::tensor::matmul;

    #[test]
    fn identity_bilinear_is_inner_product() {
        let x = Tensor::from_vec(&[3, 2], vec![1.0, 0.0, 1.0, 0.0, 0.0, 1.0]);
        let eye = Tensor::from_vec(&[2, 2], vec![1.0, 0.0, 0.0, 1.0]);
        let s = bilinear_score(&x, &eye).unwrap();
        assert_eq!(s, vec![1.0, 0.0]);
    }

    #[test]
    fn zero_bilinear_gives_zero_scores() {
        let mut rng = Rng::seeded(1);
        let x = Tensor::from_vec(&[4, 3], (0..12).map(|_| rng.uniform(-1.0, 1.0)).collect());
        let w = Tensor::zeros(&[3, 3]);
        let s = bilinear_score(&x, &w).unwrap();
        assert!(s.iter().all(|&v| v == 0.0));
    }

    /// W = P1^T P2 must reproduce the two-projection form
    /// (P1 cls) . (P2 x_i).
    #[test]
    fn factored_projection_oracle() {
        let (d, n) = (8usize, 5usize);
        let mut rng = Rng::seeded(2);
        let p1 = Tensor::from_vec(&[d, d], (0..d * d).map(|_| rng.uniform(-1.0, 1.0)).collect());
        let p2 = Tensor::from_vec(&[d, d], (0..d * d).map(|_| rng.uniform(-1.0, 1.0)).collect());
        let x = Tensor::from_vec(
            &[n + 1, d],
            (0..(n + 1) * d).map(|_| rng.uniform(-1.0, 1.0)).collect(),
        );
        let mut p1t = Tensor::zeros(&[d, d]);
        for i in 0..d {
            for j in 0..d {
                p1t.data_mut()[j * d + i] = p1.data()[i * d + j];
            }
        }
        let w = matmul(&p1t, &p2).unwrap();
        let got = bilinear_score(&x, &w).unwrap();
        let cls = Tensor::from_vec(&[1, d], x.row(0).to_vec());
        let proj_cls = matmul(&cls, &p1t).unwrap();
        // (P1 cls)_k = sum_j p1[k][j] cls[j]; proj_cls above is cls^T P1^T = (P1 cls)^T.
        for i in 0..n {
            let xi = Tensor::from_vec(&[d, 1], x.row(i + 1).to_vec());
            let proj_xi = matmul(&p2, &xi).unwrap();
            let want: f64 = proj_cls
                .data()
                .iter()
                .zip(proj_xi.data())
                .map(|(a, b)| a * b)
                .sum();
            assert!((got[i] - want).abs() <= 1e-12, "patch {i}: {} vs {want}", got[i]);
        }
    }

    #[test]
    fn renormalize_hand_oracle() {
        let lives = renormalize_to_life(&[1.0, 2.0, 3.0], 6.0, 1.0).unwrap();
        let want = [4.77526, 6.0, 7.22474];
        for (g, w) in lives.lives.iter().zip(want.iter()) {
            assert!((g - w).abs() < 1e-5, "{g} vs {w}");
        }
    }

    #[test]
    fn renormalize_constant_scores_collapse_to_mean() {
        let lives = renormalize_to_life(&[0.7, 0.7, 0.7, 0.7], 5.0, 2.0).unwrap();
        assert!(lives.lives.iter().all(|&v| (v - 5.0).abs() < 1e-6));
    }

    #[test]
    fn renormalize_zero_sigma_collapses_to_mean() {
        let lives = renormalize_to_life(&[1.0, 5.0, 9.0], 4.0, 0.0).unwrap();
        assert!(lives.lives.iter().all(|&v| (v - 4.0).abs() < 1e-12));
    }

    #[test]
    fn renormalize_needs_two_patches() {
        assert!(matches!(
            renormalize_to_life(&[1.0], 4.0, 1.0),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn renormalized_moments_match_targets() {
        let mut rng = Rng::seeded(3);
        for _ in 0..50 {
            let n = 2 + rng.below(40);
            let scores: Vec<f64> = (0..n).map(|_| rng.uniform(-3.0, 3.0)).collect();
            let std = {
                let m = scores.iter().sum::<f64>() / n as f64;
                (scores.iter().map(|s| (s - m).powi(2)).sum::<f64>() / n as f64).sqrt()
            };
            if std <= SCORE_STD_FLOOR {
                continue;
            }
            let (mu, sigma) = (rng.uniform(2.0, 10.0), rng.uniform(0.0, 4.0));
            let lives = renormalize_to_life(&scores, mu, sigma).unwrap();
            let mean = lives.lives.iter().sum::<f64>() / n as f64;
            let var = lives.lives.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
            assert!((mean - mu).abs() <= 1e-6, "mean {mean} vs {mu}");
            assert!((var.sqrt() - sigma).abs() <= 1e-6, "std {} vs {sigma}", var.sqrt());
        }
    }

    /// Renormalization is a positive affine map, so score order and life
    /// order agree.
    #[test]
    fn rank_preservation() {
        let mut rng = Rng::seeded(4);
        let scores: Vec<f64> = (0..12).map(|_| rng.uniform(-2.0, 2.0)).collect();
        let lives = renormalize_to_life(&scores, 8.0, 3.0).unwrap();
        let order = |v: &[f64]| {
            let mut idx: Vec<usize> = (0..v.len()).collect();
            idx.sort_by(|&a, &b| v[a].partial_cmp(&v[b]).unwrap());
            idx
        };
        assert_eq!(order(&scores), order(&lives.lives));
    }

    #[test]
    fn identical_features_give_uniform_lives_at_mean() {
        let cfg = ViTConfig::desk();
        let weights = ModelWeights::init(&cfg, 5);
        let schedule = SlimSchedule::from_config(&cfg).unwrap();
        let mut rng = Rng::seeded(6);
        let row: Vec<f64> = (0..cfg.embed_dim).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let mut x = Tensor::zeros(&[cfg.tokens(), cfg.embed_dim]);
        for i in 0..cfg.tokens() {
            x.row_mut(i).copy_from_slice(&row);
        }
        let lives = predict_lives(&x, &weights, &schedule).unwrap();
        // The std floor amplifies ulp-level noise in the score mean, so
        // the collapse to the target mean is only clean to ~1e-8.
        for &v in &lives.lives {
            assert!((v - schedule.target_mean).abs() < 1e-6);
        }
        assert_eq!(lives.cls_life, cfg.layers as f64);
    }

    /// Raising one patch's score never lowers its life rank.
    #[test]
    fn score_bump_never_lowers_rank() {
        let mut rng = Rng::seeded(7);
        let scores: Vec<f64> = (0..10).map(|_| rng.uniform(-2.0, 2.0)).collect();
        let base = renormalize_to_life(&scores, 8.0, 3.0).unwrap();
        for i in 0..scores.len() {
            let mut bumped = scores.clone();
            bumped[i] += rng.uniform(0.0, 1.5);
            let after = renormalize_to_life(&bumped, 8.0, 3.0).unwrap();
            let rank = |lives: &[f64], i: usize| lives.iter().filter(|&&v| v < lives[i]).count();
            assert!(
                rank(&after.lives, i) >= rank(&base.lives, i),
                "patch {i} lost rank after score increase"
            );
        }
    }
}
