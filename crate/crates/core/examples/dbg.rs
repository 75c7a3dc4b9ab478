use vitslim::config::ViTConfig;
use vitslim::life::{bilinear_score, predict_lives};
use vitslim::model::{ModelWeights, LAYER_NORM_EPS};
use vitslim::schedule::SlimSchedule;
use vitslim::tensor::{layer_norm, Tensor};
use vitslim::rng::Rng;

fn main() {
    let cfg = ViTConfig::desk();
    let weights = ModelWeights::init(&cfg, 5);
    let schedule = SlimSchedule::from_config(&cfg).unwrap();
    let mut rng = Rng::seeded(6);
    let row: Vec<f64> = (0..cfg.embed_dim).map(|_| rng.uniform(-1.0, 1.0)).collect();
    let mut x = Tensor::<f64>::zeros(&[cfg.tokens(), cfg.embed_dim]);
    for i in 0..cfg.tokens() {
        x.row_mut(i).copy_from_slice(&row);
    }
    let normed = layer_norm(&x, &weights.life_ln_gamma, &weights.life_ln_beta, LAYER_NORM_EPS);
    let scores = bilinear_score(&normed, &weights.life_w).unwrap();
    println!("scores[0..4] = {:?}", &scores[0..4]);
    let mean = scores.iter().sum::<f64>() / scores.len() as f64;
    let var = scores.iter().map(|s| (s-mean).powi(2)).sum::<f64>() / scores.len() as f64;
    println!("score mean {mean} std {}", var.sqrt());
    let lives = predict_lives(&x, &weights, &schedule).unwrap();
    println!("target mean {} std {}", schedule.target_mean, schedule.target_std);
    println!("lives = {:?}", lives.lives);
}
