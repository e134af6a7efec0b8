use drivestack::nn::gradcheck::{numeric_grad, rel_error};
use drivestack::nn::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(shape: &[usize], lo: f64, hi: f64, rng: &mut impl Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(lo..hi)).collect())
}

/// Relative error of an analytic gradient against central differences over every entry.
pub fn check(f: &mut dyn FnMut(&Tensor<f64>) -> f64, x: &Tensor<f64>, analytic: &Tensor<f64>, step: f64) -> f64 {
    let idx: Vec<usize> = (0..x.len()).collect();
    let num = numeric_grad(f, x, &idx, step);
    rel_error(&analytic.data, &num)
}

use drivestack::microworld::dataset::Dataset;
use drivestack::toolkit::pipeline::{collect, open_dataset};
use drivestack::toolkit::RunConfig;

/// Expert frames from town traffic episodes collected into `dir`.
pub fn town_frames(dir: &std::path::Path, frames: usize, seed: u64) -> Dataset {
    let cfg = RunConfig::default()
        .apply([
            format!("seed={seed}").as_str(),
            format!("collect.frames={frames}").as_str(),
            r#"collect.maps=["town"]"#,
            r#"collect.scenarios=["traffic", "lead-brake", "crossing-pedestrian"]"#,
        ])
        .expect("valid overrides");
    collect(&cfg, dir).expect("collection succeeds");
    open_dataset(dir).expect("collected frames")
}
