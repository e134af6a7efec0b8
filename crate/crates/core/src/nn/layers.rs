//! Parameterized building blocks on top of [`Graph`].

use rand::Rng;

use super::graph::{Graph, Var};
use super::params::{he_normal, uniform, ParamStore};
use super::tensor::{Real, Tensor};

#[derive(Clone, Debug)]
pub struct Linear {
    pub w: usize,
    pub b: usize,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Linear {
    pub fn new<T: Real>(store: &mut ParamStore<T>, name: &str, fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> Self {
        let w = store.add(format!("{name}.weight"), he_normal(&[fan_out, fan_in], fan_in, rng));
        let b = store.add(format!("{name}.bias"), Tensor::zeros(&[fan_out]));
        Self { w, b, fan_in, fan_out }
    }

    /// Same shape, all weights and biases zero.
    pub fn zeros<T: Real>(store: &mut ParamStore<T>, name: &str, fan_in: usize, fan_out: usize) -> Self {
        let w = store.add(format!("{name}.weight"), Tensor::zeros(&[fan_out, fan_in]));
        let b = store.add(format!("{name}.bias"), Tensor::zeros(&[fan_out]));
        Self { w, b, fan_in, fan_out }
    }

    pub fn forward<T: Real>(&self, g: &Graph<T>, ps: &ParamStore<T>, x: Var) -> Var {
        g.linear(x, g.param(ps, self.w), Some(g.param(ps, self.b)))
    }
}

#[derive(Clone, Debug)]
pub struct Conv2d {
    pub w: usize,
    pub b: usize,
    pub stride: usize,
    pub pad: usize,
}

impl Conv2d {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        stride: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let fan_in = c_in * kernel * kernel;
        let w = store.add(format!("{name}.weight"), he_normal(&[c_out, c_in, kernel, kernel], fan_in, rng));
        let b = store.add(format!("{name}.bias"), Tensor::zeros(&[c_out]));
        Self { w, b, stride, pad: kernel / 2 }
    }

    pub fn forward<T: Real>(&self, g: &Graph<T>, ps: &ParamStore<T>, x: Var) -> Var {
        g.conv2d(x, g.param(ps, self.w), Some(g.param(ps, self.b)), self.stride, self.pad)
    }
}

/// 3x3 stride-2 up-convolution that exactly doubles spatial size.
#[derive(Clone, Debug)]
pub struct UpConv2d {
    pub w: usize,
    pub b: usize,
}

impl UpConv2d {
    pub fn new<T: Real>(store: &mut ParamStore<T>, name: &str, c_in: usize, c_out: usize, rng: &mut impl Rng) -> Self {
        let w = store.add(format!("{name}.weight"), he_normal(&[c_in, c_out, 3, 3], c_in * 9 / 4, rng));
        let b = store.add(format!("{name}.bias"), Tensor::zeros(&[c_out]));
        Self { w, b }
    }

    pub fn forward<T: Real>(&self, g: &Graph<T>, ps: &ParamStore<T>, x: Var) -> Var {
        g.conv_transpose2d(x, g.param(ps, self.w), Some(g.param(ps, self.b)), 2, 1, 1)
    }
}

/// Gated recurrent unit (reset, update, candidate gates).
#[derive(Clone, Debug)]
pub struct GruCell {
    pub input: Linear,
    pub hidden: Linear,
    pub hidden_size: usize,
}

impl GruCell {
    pub fn new<T: Real, R: Rng>(store: &mut ParamStore<T>, name: &str, input_size: usize, hidden_size: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (hidden_size as f64).sqrt();
        let mk = |store: &mut ParamStore<T>, suffix: &str, fan_in: usize, rng: &mut R| {
            let w = store.add(format!("{name}.{suffix}.weight"), uniform(&[3 * hidden_size, fan_in], bound, rng));
            let b = store.add(format!("{name}.{suffix}.bias"), uniform(&[3 * hidden_size], bound, rng));
            Linear { w, b, fan_in, fan_out: 3 * hidden_size }
        };
        let input = mk(store, "ih", input_size, rng);
        let hidden = mk(store, "hh", hidden_size, rng);
        Self { input, hidden, hidden_size }
    }

    /// One step: `x [B, in]`, `h [B, H]` -> `[B, H]`.
    pub fn forward<T: Real>(&self, g: &Graph<T>, ps: &ParamStore<T>, x: Var, h: Var) -> Var {
        let hs = self.hidden_size;
        let gi = self.input.forward(g, ps, x);
        let gh = self.hidden.forward(g, ps, h);
        let r = g.sigmoid(g.add(g.narrow(gi, 1, 0, hs), g.narrow(gh, 1, 0, hs)));
        let z = g.sigmoid(g.add(g.narrow(gi, 1, hs, hs), g.narrow(gh, 1, hs, hs)));
        let n = g.tanh(g.add(g.narrow(gi, 1, 2 * hs, hs), g.mul(r, g.narrow(gh, 1, 2 * hs, hs))));
        // h' = (1 - z) * n + z * h = n + z * (h - n)
        g.add(n, g.mul(z, g.sub(h, n)))
    }
}
