//! The reference architecture and a seeded random-weight generator.
//!
//! ```text
//! stem   conv3x3 1->8, BN, ReLU, conv3x3 8->8, BN, ReLU          48x48
//! block  x4, widths 16, 32, 64, 128:
//!          main: [dw3x3, pw, BN, ReLU] x2, maxpool3x3/2 same
//!          skip: pw/2, BN
//!          add                                                  24,12,6,3
//! head   conv3x3 128->7 (+bias), global avg pool, softmax
//! ```

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::fer::model::{Layer, Model};
use crate::fer::ops::Padding;
use crate::fer::NUM_CLASSES;

pub const STEM_WIDTH: usize = 8;
pub const BLOCK_WIDTHS: [usize; 4] = [16, 32, 64, 128];
pub const BN_EPS: f32 = 1e-3;

/// Learnable scalars in the reference architecture.
pub const REFERENCE_PARAM_COUNT: usize = 56_951;

struct Init {
    rng: ChaCha8Rng,
}

impl Init {
    /// He-uniform: `U(-sqrt(6 / fan_in), sqrt(6 / fan_in))`.
    fn he(&mut self, n: usize, fan_in: usize) -> Vec<f32> {
        let limit = (6.0 / fan_in as f64).sqrt();
        (0..n).map(|_| self.rng.random_range(-limit..limit) as f32).collect()
    }

    fn uniform(&mut self, n: usize, lo: f32, hi: f32) -> Vec<f32> {
        (0..n).map(|_| self.rng.random_range(lo..hi)).collect()
    }

    fn bn(&mut self, c: usize) -> Layer {
        let gamma = self.uniform(c, 0.8, 1.2);
        let beta = self.uniform(c, -0.1, 0.1);
        let mean = self.uniform(c, -0.1, 0.1);
        let var = self.uniform(c, 0.8, 1.2);
        Layer::batch_norm(&gamma, &beta, &mean, &var, BN_EPS)
    }

    fn conv3(&mut self, m: usize, n: usize) -> Layer {
        Layer::conv(m, n, 3, 1, Padding::Same, self.he(n * m * 9, m * 9), None)
    }

    fn separable(&mut self, m: usize, n: usize, layers: &mut Vec<Layer>) {
        layers.push(Layer::depthwise(m, 3, 1, Padding::Same, self.he(m * 9, 9)));
        layers.push(Layer::pointwise(m, n, 1, self.he(n * m, m), None));
        layers.push(self.bn(n));
        layers.push(Layer::relu(n));
    }
}

/// Reference layer list with weights drawn from a ChaCha8 stream seeded by
/// `seed`. With `zero_head` the final conv weights and bias are zero, so
/// every input maps to the uniform distribution.
pub fn reference_layers(seed: u64, zero_head: bool) -> Vec<Layer> {
    let mut init = Init {
        rng: ChaCha8Rng::seed_from_u64(seed),
    };
    let mut layers = vec![
        init.conv3(1, STEM_WIDTH),
        init.bn(STEM_WIDTH),
        Layer::relu(STEM_WIDTH),
        init.conv3(STEM_WIDTH, STEM_WIDTH),
        init.bn(STEM_WIDTH),
        Layer::relu(STEM_WIDTH),
    ];

    let mut m = STEM_WIDTH;
    for &n in &BLOCK_WIDTHS {
        let start = layers.len();
        init.separable(m, n, &mut layers);
        layers[start] = layers[start].clone().save_input();
        init.separable(n, n, &mut layers);
        layers.push(Layer::max_pool(n, 3, 2, Padding::Same));
        layers.push(Layer::pointwise(m, n, 2, init.he(n * m, m), None).on_skip());
        layers.push(init.bn(n).on_skip());
        layers.push(Layer::residual_add(n));
        m = n;
    }

    let k = NUM_CLASSES;
    let (w, b) = if zero_head {
        (vec![0.0; k * m * 9], vec![0.0; k])
    } else {
        (init.he(k * m * 9, m * 9), init.uniform(k, -0.1, 0.1))
    };
    layers.push(Layer::conv(m, k, 3, 1, Padding::Same, w, Some(b)));
    layers.push(Layer::global_avg_pool(k));
    layers.push(Layer::softmax(k));
    layers
}

pub fn random_model(seed: u64) -> Model {
    Model::new(reference_layers(seed, false)).expect("reference architecture shape-checks")
}

pub fn zero_head_model(seed: u64) -> Model {
    Model::new(reference_layers(seed, true)).expect("reference architecture shape-checks")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fer::param_count;

    /// Hand count: conv `D*D*M*N (+N)`, depthwise `D*D*M`, pointwise `M*N`,
    /// batch norm `2C`.
    fn hand_count() -> usize {
        let stem = (9 * 8 + 16) + (9 * 8 * 8 + 16);
        let block = |m: usize, n: usize| (9 * m + m * n + 2 * n) + (9 * n + n * n + 2 * n) + (m * n + 2 * n);
        let blocks = block(8, 16) + block(16, 32) + block(32, 64) + block(64, 128);
        let head = 9 * 128 * 7 + 7;
        stem + blocks + head
    }

    #[test]
    fn param_count_matches_hand_count() {
        let layers = reference_layers(0, false);
        assert_eq!(hand_count(), REFERENCE_PARAM_COUNT);
        assert_eq!(param_count(&layers), REFERENCE_PARAM_COUNT);
        assert!((50_000..=70_000).contains(&REFERENCE_PARAM_COUNT));
    }

    #[test]
    fn seeded_generation_is_reproducible() {
        assert_eq!(reference_layers(7, false), reference_layers(7, false));
        assert_ne!(reference_layers(7, false), reference_layers(8, false));
    }

    #[test]
    fn shape_checks() {
        let m = random_model(1);
        assert_eq!(m.layers().len(), 6 + 4 * 12 + 3);
    }
}
