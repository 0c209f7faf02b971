use ndarray::Array2;
use rand::Rng;

use super::kernels;
use super::params::{ParamId, ParamStore};
use super::tape::{NodeId, Tape};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Softplus,
    Identity,
}

/// A batch of values with their `u` and `v` tangents, all n×width.
#[derive(Debug, Clone, PartialEq)]
pub struct DualBatch {
    pub value: Array2<f64>,
    pub du: Array2<f64>,
    pub dv: Array2<f64>,
}

/// Tape nodes for a [`DualBatch`].
#[derive(Debug, Clone, Copy)]
pub struct DualNodes {
    pub value: NodeId,
    pub du: NodeId,
    pub dv: NodeId,
}

/// Fully connected network: hidden layers use `hidden`, the last layer is linear.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layers: Vec<(ParamId, ParamId)>,
    hidden: Activation,
    /// Apply the hidden activation after the last layer too.
    activate_output: bool,
}

impl Mlp {
    /// Registers weights `out×in` and biases `1×out` under `prefix.layer{i}.*`,
    /// initialised uniformly in `±1/√fan_in`.
    pub fn register<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        widths: &[usize],
        hidden: Activation,
        activate_output: bool,
        rng: &mut R,
    ) -> Self {
        assert!(widths.len() >= 2, "an MLP needs input and output widths");
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let bound = if fan_in == 0 { 0.0 } else { 1.0 / (fan_in as f64).sqrt() };
                let mut draw = || if bound == 0.0 { 0.0 } else { rng.gen_range(-bound..bound) };
                let weight = Array2::from_shape_fn((fan_out, fan_in), |_| draw());
                let bias = Array2::from_shape_fn((1, fan_out), |_| draw());
                (
                    store.add(format!("{prefix}.layer{i}.weight"), weight),
                    store.add(format!("{prefix}.layer{i}.bias"), bias),
                )
            })
            .collect();
        Self { layers, hidden, activate_output }
    }

    pub fn from_layers(layers: Vec<(ParamId, ParamId)>, hidden: Activation, activate_output: bool) -> Self {
        Self { layers, hidden, activate_output }
    }

    pub fn layers(&self) -> &[(ParamId, ParamId)] {
        &self.layers
    }

    fn activated(&self, layer: usize) -> bool {
        self.hidden == Activation::Softplus && (layer + 1 < self.layers.len() || self.activate_output)
    }

    pub fn forward(&self, params: &ParamStore, x: &Array2<f64>) -> Array2<f64> {
        let mut h = x.clone();
        for (i, &(w, b)) in self.layers.iter().enumerate() {
            h = kernels::affine(h.view(), params.get(w).view(), Some(params.get(b).view()));
            if self.activated(i) {
                h = kernels::map(h.view(), kernels::softplus);
            }
        }
        h
    }

    pub fn forward_dual(&self, params: &ParamStore, x: DualBatch) -> DualBatch {
        let DualBatch { mut value, mut du, mut dv } = x;
        for (i, &(w, b)) in self.layers.iter().enumerate() {
            let wv = params.get(w).view();
            value = kernels::affine(value.view(), wv, Some(params.get(b).view()));
            du = kernels::affine(du.view(), wv, None);
            dv = kernels::affine(dv.view(), wv, None);
            if self.activated(i) {
                let s = kernels::map(value.view(), kernels::sigmoid);
                value = kernels::map(value.view(), kernels::softplus);
                du = kernels::mul(s.view(), du.view());
                dv = kernels::mul(s.view(), dv.view());
            }
        }
        DualBatch { value, du, dv }
    }

    pub fn record(&self, tape: &mut Tape<'_>, x: NodeId) -> NodeId {
        let mut h = x;
        for (i, &(w, b)) in self.layers.iter().enumerate() {
            h = tape.affine(h, w, Some(b));
            if self.activated(i) {
                h = tape.softplus(h);
            }
        }
        h
    }

    pub fn record_dual(&self, tape: &mut Tape<'_>, x: DualNodes) -> DualNodes {
        let DualNodes { mut value, mut du, mut dv } = x;
        for (i, &(w, b)) in self.layers.iter().enumerate() {
            value = tape.affine(value, w, Some(b));
            du = tape.affine(du, w, None);
            dv = tape.affine(dv, w, None);
            if self.activated(i) {
                let s = tape.sigmoid(value);
                value = tape.softplus(value);
                du = tape.mul(s, du);
                dv = tape.mul(s, dv);
            }
        }
        DualNodes { value, du, dv }
    }
}
