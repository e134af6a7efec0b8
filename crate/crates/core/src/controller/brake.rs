//! Binary brake classifier on the privileged scene features.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bev::GridSpec;
use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::microworld::PRIV_FEATURES;
use crate::nn::{Adam, Graph, Linear, ParamStore, Real, Tensor, Var};

pub const CHECKPOINT_KIND: &str = "brake";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BrakeConfig {
    pub hidden: usize,
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for BrakeConfig {
    fn default() -> Self {
        Self { hidden: 32, steps: 2000, batch: 64, lr: 3e-3, seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Stored {
    hidden: usize,
    trained: bool,
}

/// Two-hidden-layer MLP producing a brake logit.
pub struct BrakeClassifier<T: Real> {
    pub store: ParamStore<T>,
    l1: Linear,
    l2: Linear,
    out: Linear,
    hidden: usize,
    trained: bool,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BrakeSample {
    pub features: [f32; PRIV_FEATURES],
    pub label: bool,
}

impl<T: Real> BrakeClassifier<T> {
    pub fn new(hidden: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let l1 = Linear::new(&mut store, "brake.l1", PRIV_FEATURES, hidden, &mut rng);
        let l2 = Linear::new(&mut store, "brake.l2", hidden, hidden, &mut rng);
        let out = Linear::new(&mut store, "brake.out", hidden, 1, &mut rng);
        Self { store, l1, l2, out, hidden, trained: false }
    }

    pub fn is_trained(&self) -> bool {
        self.trained
    }

    fn logits(&self, g: &Graph<T>, feats: &[[f32; PRIV_FEATURES]]) -> Var {
        let x = Tensor::new(&[feats.len(), PRIV_FEATURES], feats.iter().flatten().map(|&v| T::of(v as f64)).collect());
        let h = g.relu(self.l1.forward(g, &self.store, g.constant(x)));
        let h = g.relu(self.l2.forward(g, &self.store, h));
        self.out.forward(g, &self.store, h)
    }

    /// Brake probability in [0, 1].
    pub fn score(&self, features: &[f32; PRIV_FEATURES]) -> Result<f64> {
        if !self.trained {
            return Err(Error::Untrained("brake classifier".into()));
        }
        let g = Graph::new();
        let l = self.logits(&g, std::slice::from_ref(features));
        Ok(crate::nn::graph::sigmoid(g.item(l).as_f64()))
    }

    /// Mean binary cross-entropy over `samples`.
    pub fn bce(&self, samples: &[BrakeSample]) -> f64 {
        let g = Graph::new();
        let (l, n) = self.loss(&g, samples);
        g.item(l).as_f64() / n
    }

    fn loss(&self, g: &Graph<T>, samples: &[BrakeSample]) -> (Var, f64) {
        let feats: Vec<[f32; PRIV_FEATURES]> = samples.iter().map(|s| s.features).collect();
        let y = Tensor::new(&[samples.len(), 1], samples.iter().map(|s| if s.label { T::one() } else { T::zero() }).collect());
        (g.bce_with_logits_sum(self.logits(g, &feats), &y, &[]), samples.len() as f64)
    }

    /// Adam on mean BCE over shuffled minibatches; returns the final full-set BCE.
    pub fn train(&mut self, samples: &[BrakeSample], cfg: &BrakeConfig) -> Result<f64> {
        if samples.is_empty() {
            return Err(Error::InvalidArgument("no brake samples".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut opt = Adam::new(&self.store, cfg.lr);
        let mut order: Vec<usize> = (0..samples.len()).collect();
        let mut cursor = order.len();
        let batch = cfg.batch.clamp(1, samples.len());
        for _ in 0..cfg.steps {
            if cursor + batch > order.len() {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            let chunk: Vec<BrakeSample> = order[cursor..cursor + batch].iter().map(|&i| samples[i]).collect();
            cursor += batch;
            let g = Graph::new();
            let (l, n) = self.loss(&g, &chunk);
            let grads = g.backward(g.scale(l, 1.0 / n)).for_store(&self.store);
            opt.step(&mut self.store, &grads);
        }
        self.trained = true;
        Ok(self.bce(samples))
    }

    pub fn save(&self, path: &Path, grid: GridSpec) -> Result<()> {
        let cfg = Stored { hidden: self.hidden, trained: self.trained };
        Checkpoint::new(CHECKPOINT_KIND, grid, &cfg, vec![(CHECKPOINT_KIND.into(), self.store.to_named())])?.save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let ck = Checkpoint::load(path, CHECKPOINT_KIND, None)?;
        let cfg: Stored = ck.config()?;
        let mut m = Self::new(cfg.hidden, 0);
        m.store.load_named(ck.part(CHECKPOINT_KIND)?).map_err(Error::Encoding)?;
        m.trained = cfg.trained;
        Ok(m)
    }
}
