use ndarray::{Array2, Array4, ArrayD};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// ReLU with cached mask (works on any dimensionality).
#[derive(Debug, Clone, Default)]
pub struct Relu {
    mask: Option<ArrayD<f32>>,
}

impl Relu {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn forward_dyn(&mut self, x: &ArrayD<f32>, train: bool) -> ArrayD<f32> {
        let y = x.mapv(|v| v.max(0.0));
        if train {
            self.mask = Some(x.mapv(|v| if v > 0.0 { 1.0 } else { 0.0 }));
        }
        y
    }

    pub fn backward_dyn(&mut self, dy: &ArrayD<f32>) -> ArrayD<f32> {
        let mask = self.mask.take().expect("relu backward without forward");
        dy * &mask
    }

    pub fn forward4(&mut self, x: &Array4<f32>, train: bool) -> Array4<f32> {
        self.forward_dyn(&x.clone().into_dyn(), train)
            .into_dimensionality()
            .unwrap()
    }

    pub fn backward4(&mut self, dy: &Array4<f32>) -> Array4<f32> {
        self.backward_dyn(&dy.clone().into_dyn()).into_dimensionality().unwrap()
    }

    pub fn forward2(&mut self, x: &Array2<f32>, train: bool) -> Array2<f32> {
        self.forward_dyn(&x.clone().into_dyn(), train)
            .into_dimensionality()
            .unwrap()
    }

    pub fn backward2(&mut self, dy: &Array2<f32>) -> Array2<f32> {
        self.backward_dyn(&dy.clone().into_dyn()).into_dimensionality().unwrap()
    }
}

/// ELU (alpha = 1) with cached input.
#[derive(Debug, Clone, Default)]
pub struct Elu {
    cached: Option<Array4<f32>>,
}

impl Elu {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn forward4(&mut self, x: &Array4<f32>, train: bool) -> Array4<f32> {
        if train {
            self.cached = Some(x.clone());
        }
        x.mapv(|v| if v > 0.0 { v } else { v.exp() - 1.0 })
    }

    pub fn backward4(&mut self, dy: &Array4<f32>) -> Array4<f32> {
        let x = self.cached.take().expect("elu backward without forward");
        let mut dx = dy.clone();
        ndarray::Zip::from(&mut dx).and(&x).for_each(|d, &v| {
            if v <= 0.0 {
                *d *= v.exp();
            }
        });
        dx
    }
}

/// 2×2 max pooling with stride 2 and argmax cache.
#[derive(Debug, Clone, Default)]
pub struct MaxPool2 {
    argmax: Option<Vec<usize>>, // flat input index per output element
    in_shape: (usize, usize, usize, usize),
}

impl MaxPool2 {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn out_spatial(h: usize, w: usize) -> (usize, usize) {
        (h / 2, w / 2)
    }

    pub fn forward4(&mut self, x: &Array4<f32>, train: bool) -> Array4<f32> {
        let (n, c, h, w) = x.dim();
        let (oh, ow) = Self::out_spatial(h, w);
        let xs = x.as_slice().unwrap();
        let mut y = Array4::zeros((n, c, oh, ow));
        let ys = y.as_slice_mut().unwrap();
        let mut arg = vec![0usize; n * c * oh * ow];
        for nc in 0..n * c {
            let base = nc * h * w;
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = f32::NEG_INFINITY;
                    let mut bi = 0;
                    for dy in 0..2 {
                        for dx in 0..2 {
                            let idx = base + (oy * 2 + dy) * w + ox * 2 + dx;
                            if xs[idx] > best {
                                best = xs[idx];
                                bi = idx;
                            }
                        }
                    }
                    let o = nc * oh * ow + oy * ow + ox;
                    ys[o] = best;
                    arg[o] = bi;
                }
            }
        }
        if train {
            self.argmax = Some(arg);
            self.in_shape = (n, c, h, w);
        }
        y
    }

    pub fn backward4(&mut self, dy: &Array4<f32>) -> Array4<f32> {
        let arg = self.argmax.take().expect("pool backward without forward");
        let mut dx = Array4::zeros(self.in_shape);
        let dxs = dx.as_slice_mut().unwrap();
        for (o, &src) in arg.iter().enumerate() {
            dxs[src] += dy.as_slice().unwrap()[o];
        }
        dx
    }
}

/// Inverted dropout.
#[derive(Debug, Clone)]
pub struct Dropout {
    pub rate: f32,
    mask: Option<Array4<f32>>,
}

impl Dropout {
    pub fn new(rate: f32) -> Self {
        Self { rate, mask: None }
    }

    pub fn forward4(&mut self, x: &Array4<f32>, train: bool, rng: &mut ChaCha8Rng) -> Array4<f32> {
        if !train || self.rate == 0.0 {
            return x.clone();
        }
        let keep = 1.0 - self.rate;
        let mask = Array4::from_shape_fn(x.dim(), |_| {
            if rng.gen::<f32>() < keep {
                1.0 / keep
            } else {
                0.0
            }
        });
        let y = x * &mask;
        self.mask = Some(mask);
        y
    }

    pub fn backward4(&mut self, dy: &Array4<f32>) -> Array4<f32> {
        match self.mask.take() {
            Some(mask) => dy * &mask,
            None => dy.clone(),
        }
    }
}

/// Spatially averages (N, C, H, W) into (N, C).
pub fn global_avg_pool(x: &Array4<f32>) -> Array2<f32> {
    let (n, c, h, w) = x.dim();
    let mut y = Array2::zeros((n, c));
    let xs = x.as_slice().unwrap();
    let area = (h * w) as f32;
    for ni in 0..n {
        for ch in 0..c {
            let base = (ni * c + ch) * h * w;
            let s: f32 = xs[base..base + h * w].iter().sum();
            y[[ni, ch]] = s / area;
        }
    }
    y
}

/// Spreads (N, C) gradients uniformly back over (N, C, H, W).
pub fn global_avg_pool_backward(dy: &Array2<f32>, h: usize, w: usize) -> Array4<f32> {
    let (n, c) = dy.dim();
    let area = (h * w) as f32;
    let mut dx = Array4::zeros((n, c, h, w));
    for ni in 0..n {
        for ch in 0..c {
            let v = dy[[ni, ch]] / area;
            dx.slice_mut(ndarray::s![ni, ch, .., ..]).fill(v);
        }
    }
    dx
}
