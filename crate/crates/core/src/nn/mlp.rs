use rand::Rng;

/// Fully connected network with ReLU hidden layers and a linear output.
///
/// Parameters live in one flat vector; layer `l` stores its row-major
/// `sizes[l+1] × sizes[l]` weight matrix followed by its bias vector.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpModel {
    sizes: Vec<usize>,
    params: Vec<f64>,
}

/// Per-sample activation buffers reused across forward/backward passes.
#[derive(Clone, Debug, Default)]
pub(crate) struct Scratch {
    acts: Vec<Vec<f64>>,
    delta: Vec<f64>,
    delta_prev: Vec<f64>,
}

fn param_count(sizes: &[usize]) -> usize {
    sizes.windows(2).map(|w| w[1] * w[0] + w[1]).sum()
}

impl MlpModel {
    /// Input 28 (14 planar points), two hidden layers of 32, planar output.
    pub const ARCHITECTURE: [usize; 4] = [28, 32, 32, 2];

    /// Fan-in scaled uniform initialization, `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`
    /// for weights and biases.
    pub fn random<R: Rng + ?Sized>(sizes: &[usize], rng: &mut R) -> MlpModel {
        assert!(sizes.len() >= 2 && sizes.iter().all(|&s| s > 0));
        let mut params = Vec::with_capacity(param_count(sizes));
        for w in sizes.windows(2) {
            let bound = 1.0 / (w[0] as f64).sqrt();
            for _ in 0..(w[1] * w[0] + w[1]) {
                params.push(rng.random_range(-bound..bound));
            }
        }
        MlpModel {
            sizes: sizes.to_vec(),
            params,
        }
    }

    /// Builds a model from per-layer `(weights row-major, biases)`.
    pub fn from_layers(sizes: &[usize], layers: &[(Vec<f64>, Vec<f64>)]) -> Option<MlpModel> {
        if sizes.len() != layers.len() + 1 {
            return None;
        }
        let mut params = Vec::with_capacity(param_count(sizes));
        for (w, (weights, biases)) in sizes.windows(2).zip(layers) {
            if weights.len() != w[0] * w[1] || biases.len() != w[1] {
                return None;
            }
            params.extend_from_slice(weights);
            params.extend_from_slice(biases);
        }
        Some(MlpModel {
            sizes: sizes.to_vec(),
            params,
        })
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// `(weights, biases)` of layer `l`.
    pub fn layer(&self, l: usize) -> (&[f64], &[f64]) {
        let off: usize = param_count(&self.sizes[..=l]);
        let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
        let w = &self.params[off..off + n_in * n_out];
        let b = &self.params[off + n_in * n_out..off + n_in * n_out + n_out];
        (w, b)
    }

    pub fn num_layers(&self) -> usize {
        self.sizes.len() - 1
    }

    pub fn forward(&self, input: &[f64]) -> Vec<f64> {
        let mut scratch = Scratch::default();
        self.forward_into(input, &mut scratch);
        scratch.acts.last().unwrap().clone()
    }

    fn forward_into(&self, input: &[f64], s: &mut Scratch) {
        debug_assert_eq!(input.len(), self.sizes[0]);
        let layers = self.num_layers();
        s.acts.resize(layers + 1, Vec::new());
        s.acts[0].clear();
        s.acts[0].extend_from_slice(input);
        let mut off = 0;
        for l in 0..layers {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let w = &self.params[off..off + n_in * n_out];
            let b = &self.params[off + n_in * n_out..off + n_in * n_out + n_out];
            off += n_in * n_out + n_out;
            let (prev, next) = s.acts.split_at_mut(l + 1);
            let a = &prev[l];
            let z = &mut next[0];
            z.clear();
            for (row, bias) in w.chunks_exact(n_in).zip(b) {
                let mut v = *bias;
                for (wi, ai) in row.iter().zip(a) {
                    v += wi * ai;
                }
                if l + 1 < layers {
                    v = v.max(0.0);
                }
                z.push(v);
            }
        }
    }

    /// Adds `scale * d/dparams ||f(input) - target||²` to `grad` and returns
    /// the squared error.
    pub(crate) fn accumulate_gradient(
        &self,
        input: &[f64],
        target: &[f64],
        scale: f64,
        grad: &mut [f64],
        s: &mut Scratch,
    ) -> f64 {
        self.forward_into(input, s);
        let layers = self.num_layers();
        let out = &s.acts[layers];
        s.delta.clear();
        let mut sq = 0.0;
        for (o, t) in out.iter().zip(target) {
            let e = o - t;
            sq += e * e;
            s.delta.push(2.0 * e * scale);
        }
        let mut offsets = Vec::with_capacity(layers);
        let mut off = 0;
        for w in self.sizes.windows(2) {
            offsets.push(off);
            off += w[0] * w[1] + w[1];
        }
        for l in (0..layers).rev() {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let off = offsets[l];
            let a = &s.acts[l];
            {
                let (gw, gb) = grad[off..off + n_in * n_out + n_out].split_at_mut(n_in * n_out);
                for (j, d) in s.delta.iter().enumerate() {
                    if *d == 0.0 {
                        continue;
                    }
                    gb[j] += d;
                    for (g, ai) in gw[j * n_in..(j + 1) * n_in].iter_mut().zip(a) {
                        *g += d * ai;
                    }
                }
            }
            if l > 0 {
                let w = &self.params[off..off + n_in * n_out];
                s.delta_prev.clear();
                s.delta_prev.resize(n_in, 0.0);
                for (j, d) in s.delta.iter().enumerate() {
                    if *d == 0.0 {
                        continue;
                    }
                    for (dp, wi) in s.delta_prev.iter_mut().zip(&w[j * n_in..(j + 1) * n_in]) {
                        *dp += d * wi;
                    }
                }
                // ReLU derivative: active where the stored activation is positive
                for (dp, ai) in s.delta_prev.iter_mut().zip(a) {
                    if *ai <= 0.0 {
                        *dp = 0.0;
                    }
                }
                std::mem::swap(&mut s.delta, &mut s.delta_prev);
            }
        }
        sq
    }

    /// Mean squared (Euclidean) error over a batch and its gradient.
    pub fn loss_and_gradient(&self, inputs: &[Vec<f64>], targets: &[Vec<f64>]) -> (f64, Vec<f64>) {
        let mut grad = vec![0.0; self.num_params()];
        let mut s = Scratch::default();
        let scale = 1.0 / inputs.len() as f64;
        let mut loss = 0.0;
        for (x, t) in inputs.iter().zip(targets) {
            loss += self.accumulate_gradient(x, t, scale, &mut grad, &mut s);
        }
        (loss * scale, grad)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn parameter_count_of_default_architecture() {
        let m = MlpModel::random(&MlpModel::ARCHITECTURE, &mut ChaCha8Rng::seed_from_u64(0));
        assert_eq!(m.num_params(), 28 * 32 + 32 + 32 * 32 + 32 + 32 * 2 + 2);
        assert_eq!(m.num_params(), 2050);
    }

    #[test]
    fn forward_matches_hand_computation() {
        let m = MlpModel::from_layers(
            &[2, 2, 1],
            &[
                (vec![1.0, -1.0, 2.0, 0.5], vec![0.0, -1.0]),
                (vec![3.0, -2.0], vec![0.25]),
            ],
        )
        .unwrap();
        // hidden = relu([1-2, 2+1-1]) = [0, 2]; out = 0*3 - 2*2 + 0.25
        assert_eq!(m.forward(&[1.0, 2.0]), vec![-3.75]);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = MlpModel::random(&[6, 5, 4, 2], &mut rng);
        let xs: Vec<Vec<f64>> = (0..4)
            .map(|_| (0..6).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let ts: Vec<Vec<f64>> = (0..4)
            .map(|_| (0..2).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let (_, g) = m.loss_and_gradient(&xs, &ts);
        let h = 1e-5;
        for i in 0..m.num_params() {
            let mut p = m.clone();
            p.params_mut()[i] += h;
            let (lp, _) = p.loss_and_gradient(&xs, &ts);
            p.params_mut()[i] -= 2.0 * h;
            let (lm, _) = p.loss_and_gradient(&xs, &ts);
            let fd = (lp - lm) / (2.0 * h);
            let denom = g[i].abs().max(fd.abs()).max(1e-8);
            assert!((g[i] - fd).abs() / denom <= 1e-4, "param {i}: {} vs {fd}", g[i]);
        }
    }
}
