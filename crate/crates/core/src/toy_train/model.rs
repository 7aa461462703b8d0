use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::seeding::keyed_rng;

/// Affine layer `x W + b` with `W` of shape inputs × outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

impl Dense {
    fn zeros_like(&self) -> Self {
        Self {
            w: Array2::zeros(self.w.raw_dim()),
            b: Array1::zeros(self.b.raw_dim()),
        }
    }
}

/// Feed-forward network with tanh hidden layers and a linear output.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Dense>,
}

/// Layer inputs kept for the backward pass; the last entry is the output.
pub struct MlpTrace {
    activations: Vec<Array2<f64>>,
}

impl Mlp {
    /// Gaussian weights with variance `1 / fan_in`, zero biases.
    pub fn new(widths: &[usize], rng: &mut impl Rng) -> Self {
        let layers = widths
            .windows(2)
            .map(|w| {
                let scale = 1.0 / (w[0] as f64).sqrt();
                Dense {
                    w: Array2::from_shape_simple_fn((w[0], w[1]), || scale * rng.sample::<f64, _>(StandardNormal)),
                    b: Array1::zeros(w[1]),
                }
            })
            .collect();
        Self { layers }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            layers: self.layers.iter().map(Dense::zeros_like).collect(),
        }
    }

    pub fn forward(&self, x: ArrayView2<'_, f64>) -> MlpTrace {
        let mut activations = vec![x.to_owned()];
        for (l, layer) in self.layers.iter().enumerate() {
            let mut z = activations[l].dot(&layer.w) + &layer.b;
            if l + 1 < self.layers.len() {
                z.mapv_inplace(f64::tanh);
            }
            activations.push(z);
        }
        MlpTrace { activations }
    }

    /// Parameter gradients for `grad_out = dL/d(output)`.
    pub fn backward(&self, trace: &MlpTrace, grad_out: Array2<f64>) -> Mlp {
        let mut grads = self.zeros_like();
        let mut delta = grad_out;
        for l in (0..self.layers.len()).rev() {
            let input = &trace.activations[l];
            grads.layers[l].w = input.t().dot(&delta);
            grads.layers[l].b = delta.sum_axis(Axis(0));
            if l > 0 {
                let mut back = delta.dot(&self.layers[l].w.t());
                // Input of layer l is tanh output a; tanh' = 1 - a².
                back.zip_mut_with(input, |g, &a| *g *= 1.0 - a * a);
                delta = back;
            }
        }
        grads
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    pub fn params(&self) -> impl Iterator<Item = &f64> {
        self.layers.iter().flat_map(|l| l.w.iter().chain(l.b.iter()))
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.w.iter_mut().chain(l.b.iter_mut()))
    }
}

impl MlpTrace {
    pub fn output(&self) -> &Array2<f64> {
        self.activations.last().expect("input is always recorded")
    }
}

/// Row-wise L2 normalization; returns the unit rows and the original norms.
pub fn normalize_rows(x: &Array2<f64>) -> (Array2<f64>, Array1<f64>) {
    let norms = x.map_axis(Axis(1), |r| r.dot(&r).sqrt());
    let mut unit = x.clone();
    for (mut row, &n) in unit.axis_iter_mut(Axis(0)).zip(&norms) {
        row.mapv_inplace(|v| v / n);
    }
    (unit, norms)
}

/// Chain rule through `u = x / |x|`: `dL/dx = (g - (g·u) u) / |x|`.
pub fn normalize_backward(unit: &Array2<f64>, norms: &Array1<f64>, grad_unit: &Array2<f64>) -> Array2<f64> {
    let mut out = grad_unit.clone();
    for ((mut g, u), &n) in out.axis_iter_mut(Axis(0)).zip(unit.outer_iter()).zip(norms) {
        let along = g.dot(&u);
        g.scaled_add(-along, &u);
        g.mapv_inplace(|v| v / n);
    }
    out
}

/// Molecule and image encoders with a shared output width.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoTower {
    pub mol: Mlp,
    pub img: Mlp,
}

impl TwoTower {
    pub fn new(mol_in: usize, img_in: usize, hidden: &[usize], embed_dim: usize, seed: u64) -> Self {
        let widths = |input| {
            let mut w = vec![input];
            w.extend_from_slice(hidden);
            w.push(embed_dim);
            w
        };
        Self {
            mol: Mlp::new(&widths(mol_in), &mut keyed_rng("toy/init/mol", &[seed])),
            img: Mlp::new(&widths(img_in), &mut keyed_rng("toy/init/img", &[seed])),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            mol: self.mol.zeros_like(),
            img: self.img.zeros_like(),
        }
    }

    pub fn params(&self) -> impl Iterator<Item = &f64> {
        self.mol.params().chain(self.img.params())
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.mol.params_mut().chain(self.img.params_mut())
    }

    /// Unit-norm embeddings of molecule rows.
    pub fn embed_mol(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        normalize_rows(self.mol.forward(x).output()).0
    }

    /// Unit-norm embeddings of image rows.
    pub fn embed_img(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        normalize_rows(self.img.forward(x).output()).0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mlp_gradient_matches_finite_differences() {
        let mut rng = keyed_rng("test/mlp", &[0]);
        let net = Mlp::new(&[3, 5, 4, 2], &mut rng);
        let x = Array2::from_shape_simple_fn((6, 3), || rng.sample::<f64, _>(StandardNormal));
        let target = Array2::from_shape_simple_fn((6, 2), || rng.sample::<f64, _>(StandardNormal));
        // L = Σ target ⊙ normalize(net(x))
        let loss = |m: &Mlp| (normalize_rows(m.forward(x.view()).output()).0 * &target).sum();
        let trace = net.forward(x.view());
        let (unit, norms) = normalize_rows(trace.output());
        let grads = net.backward(&trace, normalize_backward(&unit, &norms, &target));
        let h = 1e-6;
        let analytic: Vec<f64> = grads.params().copied().collect();
        for (idx, a) in analytic.iter().enumerate() {
            let mut plus = net.clone();
            *plus.params_mut().nth(idx).unwrap() += h;
            let mut minus = net.clone();
            *minus.params_mut().nth(idx).unwrap() -= h;
            let numeric = (loss(&plus) - loss(&minus)) / (2.0 * h);
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
            assert!(rel < 1e-6, "param {idx}: {a} vs {numeric}");
        }
    }

    #[test]
    fn embeddings_are_unit_norm() {
        let model = TwoTower::new(4, 5, &[8], 3, 1);
        let x = Array2::from_shape_fn((7, 5), |(i, j)| (i * 5 + j) as f64 * 0.1 - 1.0);
        for row in model.embed_img(x.view()).outer_iter() {
            assert!((row.dot(&row) - 1.0).abs() < 1e-12);
        }
    }
}
