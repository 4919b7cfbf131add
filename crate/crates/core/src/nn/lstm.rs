use ndarray::{Array2, Array3, Axis, Ix2};
use rand_chacha::ChaCha8Rng;

use super::{uniform_init, Param};

/// Multi-layer LSTM with gate order (input, forget, cell, output).
///
/// Sequence mode caches activations for truncated backprop within the
/// sequence; step mode keeps an external recurrent state and no caches.
#[derive(Debug, Clone)]
pub struct Lstm {
    pub layers: Vec<LstmLayer>,
    pub hidden: usize,
}

#[derive(Debug, Clone)]
pub struct LstmLayer {
    pub w_ih: Param, // (4H, Din)
    pub w_hh: Param, // (4H, H)
    pub bias: Param, // (4H,)
    cache: Vec<StepCache>,
}

#[derive(Debug, Clone)]
struct StepCache {
    x: Array2<f32>,      // (B, Din)
    h_prev: Array2<f32>, // (B, H)
    c_prev: Array2<f32>,
    i: Array2<f32>,
    f: Array2<f32>,
    g: Array2<f32>,
    o: Array2<f32>,
    tanh_c: Array2<f32>,
}

/// Recurrent state (h, c) per layer.
#[derive(Debug, Clone)]
pub struct LstmState {
    pub h: Vec<Array2<f32>>,
    pub c: Vec<Array2<f32>>,
}

impl LstmState {
    pub fn zeros(layers: usize, batch: usize, hidden: usize) -> Self {
        Self {
            h: (0..layers).map(|_| Array2::zeros((batch, hidden))).collect(),
            c: (0..layers).map(|_| Array2::zeros((batch, hidden))).collect(),
        }
    }

    /// Zeroes the state rows of the given batch entries (fresh episodes).
    pub fn reset_rows(&mut self, rows: &[usize]) {
        for s in self.h.iter_mut().chain(self.c.iter_mut()) {
            for &r in rows {
                s.row_mut(r).fill(0.0);
            }
        }
    }
}

fn sigmoid(v: f32) -> f32 {
    1.0 / (1.0 + (-v).exp())
}

impl Lstm {
    pub fn new(rng: &mut ChaCha8Rng, input: usize, hidden: usize, layers: usize) -> Self {
        let mut ls = Vec::new();
        for l in 0..layers {
            let din = if l == 0 { input } else { hidden };
            ls.push(LstmLayer {
                w_ih: uniform_init(rng, &[4 * hidden, din], hidden),
                w_hh: uniform_init(rng, &[4 * hidden, hidden], hidden),
                bias: uniform_init(rng, &[4 * hidden], hidden),
                cache: Vec::new(),
            });
        }
        Self { layers: ls, hidden }
    }

    /// Runs a full (T, B, D) sequence from zero state, caching for backward
    /// when `train` is set. Returns top-layer hidden states (T, B, H).
    pub fn forward_seq(&mut self, x: &Array3<f32>, train: bool) -> Array3<f32> {
        let (t_len, batch, _) = x.dim();
        let h = self.hidden;
        for l in self.layers.iter_mut() {
            l.cache.clear();
        }
        let mut state = LstmState::zeros(self.layers.len(), batch, h);
        let mut out = Array3::zeros((t_len, batch, h));
        for t in 0..t_len {
            let mut inp = x.index_axis(Axis(0), t).to_owned();
            for (li, layer) in self.layers.iter_mut().enumerate() {
                let (h_new, c_new) =
                    layer.step(&inp, &state.h[li], &state.c[li], train);
                state.h[li] = h_new.clone();
                state.c[li] = c_new;
                inp = h_new;
            }
            out.index_axis_mut(Axis(0), t).assign(&inp);
        }
        out
    }

    /// Backward through a cached sequence; accumulates gradients and returns
    /// d(input) of shape (T, B, Din).
    pub fn backward_seq(&mut self, dout: &Array3<f32>) -> Array3<f32> {
        let (t_len, batch, _) = dout.dim();
        let h = self.hidden;
        let nl = self.layers.len();
        // d of the per-step outputs of each layer, filled top-down.
        let mut dtop: Vec<Array2<f32>> =
            (0..t_len).map(|t| dout.index_axis(Axis(0), t).to_owned()).collect();
        let mut dx_out = None;
        for li in (0..nl).rev() {
            let layer = &mut self.layers[li];
            let din = layer.w_ih.value.shape()[1];
            let mut dh_next = Array2::zeros((batch, h));
            let mut dc_next = Array2::zeros((batch, h));
            let mut dx_seq: Vec<Array2<f32>> = vec![Array2::zeros((batch, din)); t_len];
            for t in (0..t_len).rev() {
                let dh_total = &dtop[t] + &dh_next;
                let (dx, dh_prev, dc_prev) = layer.step_backward(t, &dh_total, &dc_next);
                dx_seq[t] = dx;
                dh_next = dh_prev;
                dc_next = dc_prev;
            }
            layer.cache.clear();
            if li == 0 {
                let mut dx3 = Array3::zeros((t_len, batch, din));
                for t in 0..t_len {
                    dx3.index_axis_mut(Axis(0), t).assign(&dx_seq[t]);
                }
                dx_out = Some(dx3);
            } else {
                dtop = dx_seq;
            }
        }
        dx_out.unwrap()
    }

    /// Single step without caching, advancing `state` in place.
    pub fn forward_step(&self, x: &Array2<f32>, state: &mut LstmState) -> Array2<f32> {
        let mut inp = x.clone();
        for (li, layer) in self.layers.iter().enumerate() {
            let (h_new, c_new) = layer.step_no_cache(&inp, &state.h[li], &state.c[li]);
            state.h[li] = h_new.clone();
            state.c[li] = c_new;
            inp = h_new;
        }
        inp
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        self.layers
            .iter_mut()
            .flat_map(|l| vec![&mut l.w_ih, &mut l.w_hh, &mut l.bias])
            .collect()
    }

    pub fn params(&self) -> Vec<&Param> {
        self.layers
            .iter()
            .flat_map(|l| vec![&l.w_ih, &l.w_hh, &l.bias])
            .collect()
    }
}

impl LstmLayer {
    fn gates(&self, x: &Array2<f32>, h_prev: &Array2<f32>) -> Array2<f32> {
        let w_ih = self.w_ih.value.view().into_dimensionality::<Ix2>().unwrap();
        let w_hh = self.w_hh.value.view().into_dimensionality::<Ix2>().unwrap();
        let b = self.bias.value.view().into_dimensionality::<ndarray::Ix1>().unwrap();
        x.dot(&w_ih.t()) + h_prev.dot(&w_hh.t()) + &b
    }

    fn step(
        &mut self,
        x: &Array2<f32>,
        h_prev: &Array2<f32>,
        c_prev: &Array2<f32>,
        train: bool,
    ) -> (Array2<f32>, Array2<f32>) {
        let hsz = h_prev.shape()[1];
        let z = self.gates(x, h_prev);
        let i = z.slice(ndarray::s![.., 0..hsz]).mapv(sigmoid);
        let f = z.slice(ndarray::s![.., hsz..2 * hsz]).mapv(sigmoid);
        let g = z.slice(ndarray::s![.., 2 * hsz..3 * hsz]).mapv(f32::tanh);
        let o = z.slice(ndarray::s![.., 3 * hsz..4 * hsz]).mapv(sigmoid);
        let c = &f * c_prev + &i * &g;
        let tanh_c = c.mapv(f32::tanh);
        let h = &o * &tanh_c;
        if train {
            self.cache.push(StepCache {
                x: x.clone(),
                h_prev: h_prev.clone(),
                c_prev: c_prev.clone(),
                i,
                f,
                g,
                o,
                tanh_c,
            });
        }
        (h, c)
    }

    fn step_no_cache(
        &self,
        x: &Array2<f32>,
        h_prev: &Array2<f32>,
        c_prev: &Array2<f32>,
    ) -> (Array2<f32>, Array2<f32>) {
        let hsz = h_prev.shape()[1];
        let z = self.gates(x, h_prev);
        let i = z.slice(ndarray::s![.., 0..hsz]).mapv(sigmoid);
        let f = z.slice(ndarray::s![.., hsz..2 * hsz]).mapv(sigmoid);
        let g = z.slice(ndarray::s![.., 2 * hsz..3 * hsz]).mapv(f32::tanh);
        let o = z.slice(ndarray::s![.., 3 * hsz..4 * hsz]).mapv(sigmoid);
        let c = &f * c_prev + &i * &g;
        let h = &o * &c.mapv(f32::tanh);
        (h, c)
    }

    /// Backward for cached step `t`. Returns (dx, dh_prev, dc_prev).
    fn step_backward(
        &mut self,
        t: usize,
        dh: &Array2<f32>,
        dc_in: &Array2<f32>,
    ) -> (Array2<f32>, Array2<f32>, Array2<f32>) {
        let cache = &self.cache[t];
        let do_ = dh * &cache.tanh_c;
        let dc = dc_in + &(dh * &cache.o * &cache.tanh_c.mapv(|v| 1.0 - v * v));
        let di = &dc * &cache.g;
        let df = &dc * &cache.c_prev;
        let dg = &dc * &cache.i;
        let dc_prev = &dc * &cache.f;
        // pre-activation grads
        let dzi = di * &cache.i.mapv(|v| v * (1.0 - v));
        let dzf = df * &cache.f.mapv(|v| v * (1.0 - v));
        let dzg = dg * &cache.g.mapv(|v| 1.0 - v * v);
        let dzo = do_ * &cache.o.mapv(|v| v * (1.0 - v));
        let hsz = cache.h_prev.shape()[1];
        let batch = cache.h_prev.shape()[0];
        let mut dz = Array2::zeros((batch, 4 * hsz));
        dz.slice_mut(ndarray::s![.., 0..hsz]).assign(&dzi);
        dz.slice_mut(ndarray::s![.., hsz..2 * hsz]).assign(&dzf);
        dz.slice_mut(ndarray::s![.., 2 * hsz..3 * hsz]).assign(&dzg);
        dz.slice_mut(ndarray::s![.., 3 * hsz..4 * hsz]).assign(&dzo);
        let w_ih = self.w_ih.value.view().into_dimensionality::<Ix2>().unwrap();
        let w_hh = self.w_hh.value.view().into_dimensionality::<Ix2>().unwrap();
        let dx = dz.dot(&w_ih);
        let dh_prev = dz.dot(&w_hh);
        let dwih = dz.t().dot(&cache.x);
        let dwhh = dz.t().dot(&cache.h_prev);
        let db = dz.sum_axis(Axis(0));
        self.w_ih.grad += &dwih.into_dyn();
        self.w_hh.grad += &dwhh.into_dyn();
        self.bias.grad += &db.into_dyn();
        (dx, dh_prev, dc_prev)
    }
}
