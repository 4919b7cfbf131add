use ndarray::{Array1, Array2, Array4, Axis};

use super::Param;

const EPS: f32 = 1e-5;
const MOMENTUM: f32 = 0.1;

/// Batch normalization over (N, C, H, W), statistics per channel.
#[derive(Debug, Clone)]
pub struct BatchNorm2d {
    pub gamma: Param, // (C,)
    pub beta: Param,  // (C,)
    pub running_mean: Array1<f32>,
    pub running_var: Array1<f32>,
    cache: Option<Bn2Cache>,
}

#[derive(Debug, Clone)]
struct Bn2Cache {
    x_hat: Array4<f32>,
    inv_std: Array1<f32>,
}

impl BatchNorm2d {
    pub fn new(channels: usize) -> Self {
        Self {
            gamma: Param::new(ndarray::ArrayD::ones(vec![channels])),
            beta: Param::zeros(&[channels]),
            running_mean: Array1::zeros(channels),
            running_var: Array1::ones(channels),
            cache: None,
        }
    }

    pub fn forward(&mut self, x: &Array4<f32>, train: bool) -> Array4<f32> {
        let (n, c, h, w) = x.dim();
        let count = (n * h * w) as f32;
        let mut y = Array4::zeros((n, c, h, w));
        if train {
            let mut mean = Array1::zeros(c);
            let mut var = Array1::zeros(c);
            for ch in 0..c {
                let xc = x.index_axis(Axis(1), ch);
                let m = xc.sum() / count;
                let v = xc.mapv(|v| (v - m) * (v - m)).sum() / count;
                mean[ch] = m;
                var[ch] = v;
            }
            self.running_mean = &self.running_mean * (1.0 - MOMENTUM) + &mean * MOMENTUM;
            self.running_var = &self.running_var * (1.0 - MOMENTUM) + &var * MOMENTUM;
            let inv_std = var.mapv(|v| 1.0 / (v + EPS).sqrt());
            let mut x_hat = Array4::zeros((n, c, h, w));
            for ch in 0..c {
                let g = self.gamma.value[[ch]];
                let b = self.beta.value[[ch]];
                let (m, is) = (mean[ch], inv_std[ch]);
                let xc = x.index_axis(Axis(1), ch);
                let mut hc = x_hat.index_axis_mut(Axis(1), ch);
                let mut yc = y.index_axis_mut(Axis(1), ch);
                ndarray::Zip::from(&mut hc).and(&mut yc).and(&xc).for_each(|hh, yy, &xx| {
                    let xh = (xx - m) * is;
                    *hh = xh;
                    *yy = g * xh + b;
                });
            }
            self.cache = Some(Bn2Cache { x_hat, inv_std });
        } else {
            for ch in 0..c {
                let g = self.gamma.value[[ch]];
                let b = self.beta.value[[ch]];
                let m = self.running_mean[ch];
                let is = 1.0 / (self.running_var[ch] + EPS).sqrt();
                let xc = x.index_axis(Axis(1), ch);
                let mut yc = y.index_axis_mut(Axis(1), ch);
                ndarray::Zip::from(&mut yc).and(&xc).for_each(|yy, &xx| {
                    *yy = g * (xx - m) * is + b;
                });
            }
        }
        y
    }

    /// Evaluation-mode forward using running statistics, without mutation.
    pub fn forward_eval(&self, x: &Array4<f32>) -> Array4<f32> {
        let (n, c, h, w) = x.dim();
        let mut y = Array4::zeros((n, c, h, w));
        for ch in 0..c {
            let g = self.gamma.value[[ch]];
            let b = self.beta.value[[ch]];
            let m = self.running_mean[ch];
            let is = 1.0 / (self.running_var[ch] + EPS).sqrt();
            let xc = x.index_axis(Axis(1), ch);
            let mut yc = y.index_axis_mut(Axis(1), ch);
            ndarray::Zip::from(&mut yc).and(&xc).for_each(|yy, &xx| {
                *yy = g * (xx - m) * is + b;
            });
        }
        y
    }

    pub fn backward(&mut self, dy: &Array4<f32>) -> Array4<f32> {
        let Bn2Cache { x_hat, inv_std } =
            self.cache.take().expect("bn2 backward without forward");
        let (n, c, h, w) = dy.dim();
        let count = (n * h * w) as f32;
        let mut dx = Array4::zeros((n, c, h, w));
        for ch in 0..c {
            let dyc = dy.index_axis(Axis(1), ch);
            let xhc = x_hat.index_axis(Axis(1), ch);
            let sum_dy = dyc.sum();
            let sum_dy_xh = ndarray::Zip::from(&dyc).and(&xhc).fold(0.0, |a, &d, &xh| a + d * xh);
            self.gamma.grad[[ch]] += sum_dy_xh;
            self.beta.grad[[ch]] += sum_dy;
            let g = self.gamma.value[[ch]];
            let is = inv_std[ch];
            let mean_dy = sum_dy / count;
            let mean_dy_xh = sum_dy_xh / count;
            let mut dxc = dx.index_axis_mut(Axis(1), ch);
            ndarray::Zip::from(&mut dxc).and(&dyc).and(&xhc).for_each(|dd, &d, &xh| {
                *dd = g * is * (d - mean_dy - xh * mean_dy_xh);
            });
        }
        dx
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.gamma, &mut self.beta]
    }

    pub fn params(&self) -> Vec<&Param> {
        vec![&self.gamma, &self.beta]
    }
}

/// Batch normalization over (N, D), statistics per feature.
#[derive(Debug, Clone)]
pub struct BatchNorm1d {
    pub gamma: Param,
    pub beta: Param,
    pub running_mean: Array1<f32>,
    pub running_var: Array1<f32>,
    cache: Option<(Array2<f32>, Array1<f32>)>, // (x_hat, inv_std)
}

impl BatchNorm1d {
    pub fn new(features: usize) -> Self {
        Self {
            gamma: Param::new(ndarray::ArrayD::ones(vec![features])),
            beta: Param::zeros(&[features]),
            running_mean: Array1::zeros(features),
            running_var: Array1::ones(features),
            cache: None,
        }
    }

    pub fn forward(&mut self, x: &Array2<f32>, train: bool) -> Array2<f32> {
        let (n, d) = x.dim();
        let count = n as f32;
        if train {
            let mean = x.mean_axis(Axis(0)).unwrap();
            let var = {
                let mut v = Array1::zeros(d);
                for j in 0..d {
                    let m = mean[j];
                    v[j] = x.column(j).mapv(|vv| (vv - m) * (vv - m)).sum() / count;
                }
                v
            };
            self.running_mean = &self.running_mean * (1.0 - MOMENTUM) + &mean * MOMENTUM;
            self.running_var = &self.running_var * (1.0 - MOMENTUM) + &var * MOMENTUM;
            let inv_std = var.mapv(|v| 1.0 / (v + EPS).sqrt());
            let x_hat = {
                let mut xh = x.clone();
                for j in 0..d {
                    let (m, is) = (mean[j], inv_std[j]);
                    xh.column_mut(j).mapv_inplace(|vv| (vv - m) * is);
                }
                xh
            };
            let mut y = x_hat.clone();
            for j in 0..d {
                let g = self.gamma.value[[j]];
                let b = self.beta.value[[j]];
                y.column_mut(j).mapv_inplace(|vv| g * vv + b);
            }
            self.cache = Some((x_hat, inv_std));
            y
        } else {
            let mut y = x.clone();
            for j in 0..d {
                let g = self.gamma.value[[j]];
                let b = self.beta.value[[j]];
                let m = self.running_mean[j];
                let is = 1.0 / (self.running_var[j] + EPS).sqrt();
                y.column_mut(j).mapv_inplace(|vv| g * (vv - m) * is + b);
            }
            y
        }
    }

    /// Evaluation-mode forward using running statistics, without mutation.
    pub fn forward_eval(&self, x: &Array2<f32>) -> Array2<f32> {
        let (_, d) = x.dim();
        let mut y = x.clone();
        for j in 0..d {
            let g = self.gamma.value[[j]];
            let b = self.beta.value[[j]];
            let m = self.running_mean[j];
            let is = 1.0 / (self.running_var[j] + EPS).sqrt();
            y.column_mut(j).mapv_inplace(|vv| g * (vv - m) * is + b);
        }
        y
    }

    pub fn backward(&mut self, dy: &Array2<f32>) -> Array2<f32> {
        let (x_hat, inv_std) = self.cache.take().expect("bn1 backward without forward");
        let (n, d) = dy.dim();
        let count = n as f32;
        let mut dx = Array2::zeros((n, d));
        for j in 0..d {
            let dyc = dy.column(j);
            let xhc = x_hat.column(j);
            let sum_dy = dyc.sum();
            let sum_dy_xh = dyc.iter().zip(xhc.iter()).map(|(&a, &b)| a * b).sum::<f32>();
            self.gamma.grad[[j]] += sum_dy_xh;
            self.beta.grad[[j]] += sum_dy;
            let g = self.gamma.value[[j]];
            let is = inv_std[j];
            let mean_dy = sum_dy / count;
            let mean_dy_xh = sum_dy_xh / count;
            let mut dxc = dx.column_mut(j);
            for (dd, (&dv, &xh)) in dxc.iter_mut().zip(dyc.iter().zip(xhc.iter())) {
                *dd = g * is * (dv - mean_dy - xh * mean_dy_xh);
            }
        }
        dx
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.gamma, &mut self.beta]
    }

    pub fn params(&self) -> Vec<&Param> {
        vec![&self.gamma, &self.beta]
    }
}
