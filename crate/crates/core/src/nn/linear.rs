use ndarray::{Array1, Array2, Ix1, Ix2};
use rand_chacha::ChaCha8Rng;

use super::{uniform_init, Param};

/// Fully connected layer: y = x Wᵀ + b.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: Param, // (Dout, Din)
    pub bias: Param,   // (Dout,)
    cached_input: Option<Array2<f32>>,
}

impl Linear {
    pub fn new(rng: &mut ChaCha8Rng, din: usize, dout: usize) -> Self {
        Self {
            weight: uniform_init(rng, &[dout, din], din),
            bias: uniform_init(rng, &[dout], din),
            cached_input: None,
        }
    }

    pub fn forward(&mut self, x: &Array2<f32>, train: bool) -> Array2<f32> {
        if train {
            self.cached_input = Some(x.clone());
        }
        self.forward_no_cache(x)
    }

    pub fn forward_no_cache(&self, x: &Array2<f32>) -> Array2<f32> {
        let w = self.weight.value.view().into_dimensionality::<Ix2>().unwrap();
        let b = self.bias.value.view().into_dimensionality::<Ix1>().unwrap();
        x.dot(&w.t()) + &b
    }

    pub fn backward(&mut self, dy: &Array2<f32>) -> Array2<f32> {
        let x = self.cached_input.take().expect("linear backward without forward");
        let w = self.weight.value.view().into_dimensionality::<Ix2>().unwrap();
        let dw = dy.t().dot(&x);
        let db: Array1<f32> = dy.sum_axis(ndarray::Axis(0));
        let dx = dy.dot(&w);
        self.weight.grad += &dw.into_dyn();
        self.bias.grad += &db.into_dyn();
        dx
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.weight, &mut self.bias]
    }

    pub fn params(&self) -> Vec<&Param> {
        vec![&self.weight, &self.bias]
    }
}
