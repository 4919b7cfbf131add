use ndarray::{Array2, Array4, ArrayView4};
use rand_chacha::ChaCha8Rng;

use super::{uniform_init, Param};

/// 2-D convolution with square kernels, implemented as im2col + matmul.
///
/// The input batch is processed in chunks so the unrolled column matrix stays
/// small. The forward input is cached for the backward pass; columns are
/// recomputed per chunk rather than cached.
#[derive(Debug, Clone)]
pub struct Conv2d {
    pub weight: Param, // (Cout, Cin, K, K)
    pub bias: Param,   // (Cout,)
    pub stride: usize,
    pub pad: usize,
    cached_input: Option<Array4<f32>>,
}

const CHUNK_ELEMS: usize = 4 << 20; // ~16 MB of f32 columns per chunk

impl Conv2d {
    pub fn new(
        rng: &mut ChaCha8Rng,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
    ) -> Self {
        let fan_in = in_ch * kernel * kernel;
        Self {
            weight: uniform_init(rng, &[out_ch, in_ch, kernel, kernel], fan_in),
            bias: uniform_init(rng, &[out_ch], fan_in),
            stride,
            pad,
            cached_input: None,
        }
    }

    pub fn kernel(&self) -> usize {
        self.weight.value.shape()[2]
    }

    pub fn out_spatial(&self, h: usize, w: usize) -> (usize, usize) {
        let k = self.kernel();
        (
            (h + 2 * self.pad - k) / self.stride + 1,
            (w + 2 * self.pad - k) / self.stride + 1,
        )
    }

    pub fn forward(&mut self, x: &Array4<f32>, train: bool) -> Array4<f32> {
        let y = self.forward_no_cache(x);
        if train {
            self.cached_input = Some(x.clone());
        }
        y
    }

    pub fn forward_no_cache(&self, x: &Array4<f32>) -> Array4<f32> {
        let (n, cin, h, w) = x.dim();
        let cout = self.weight.value.shape()[0];
        let k = self.kernel();
        assert_eq!(cin, self.weight.value.shape()[1], "channel mismatch");
        let (oh, ow) = self.out_spatial(h, w);
        let w2 = self
            .weight
            .value
            .view()
            .into_shape_with_order((cout, cin * k * k))
            .unwrap()
            .into_owned();
        let mut y = Array4::zeros((n, cout, oh, ow));
        let chunk = chunk_size(n, oh * ow * cin * k * k);
        let mut start = 0;
        while start < n {
            let end = (start + chunk).min(n);
            let xs = x.slice(ndarray::s![start..end, .., .., ..]);
            let cols = im2col(&xs, k, self.stride, self.pad, oh, ow);
            // (rows, Cout)
            let rows = cols.dot(&w2.t());
            scatter_rows(&rows, self.bias.value.as_slice().unwrap(), &mut y, start, oh, ow);
            start = end;
        }
        y
    }

    /// Backward pass. Accumulates weight/bias gradients and returns dX.
    pub fn backward(&mut self, dy: &Array4<f32>) -> Array4<f32> {
        let x = self.cached_input.take().expect("conv backward without forward");
        let (n, cin, h, w) = x.dim();
        let cout = self.weight.value.shape()[0];
        let k = self.kernel();
        let (oh, ow) = self.out_spatial(h, w);
        let w2 = self
            .weight
            .value
            .view()
            .into_shape_with_order((cout, cin * k * k))
            .unwrap()
            .into_owned();
        let mut dx = Array4::zeros((n, cin, h, w));
        let mut dw2: Array2<f32> = Array2::zeros((cout, cin * k * k));
        let mut db = vec![0.0f32; cout];
        let chunk = chunk_size(n, oh * ow * cin * k * k);
        let mut start = 0;
        while start < n {
            let end = (start + chunk).min(n);
            let xs = x.slice(ndarray::s![start..end, .., .., ..]);
            let cols = im2col(&xs, k, self.stride, self.pad, oh, ow);
            let dy_rows = gather_rows(dy, start, end, oh, ow); // (rows, Cout)
            dw2 = dw2 + dy_rows.t().dot(&cols);
            for r in dy_rows.rows() {
                for (c, &v) in r.iter().enumerate() {
                    db[c] += v;
                }
            }
            let dcols = dy_rows.dot(&w2); // (rows, Cin*K*K)
            col2im_add(
                &dcols,
                &mut dx.slice_mut(ndarray::s![start..end, .., .., ..]),
                k,
                self.stride,
                self.pad,
                oh,
                ow,
            );
            start = end;
        }
        let dwd = dw2.into_shape_with_order((cout, cin, k, k)).unwrap();
        self.weight.grad += &dwd.into_dyn();
        for (c, v) in db.into_iter().enumerate() {
            self.bias.grad[[c]] += v;
        }
        dx
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.weight, &mut self.bias]
    }

    pub fn params(&self) -> Vec<&Param> {
        vec![&self.weight, &self.bias]
    }
}

fn chunk_size(n: usize, elems_per_sample: usize) -> usize {
    (CHUNK_ELEMS / elems_per_sample.max(1)).clamp(1, n.max(1))
}

/// Unrolls (Nc, Cin, H, W) into (Nc*OH*OW, Cin*K*K) columns.
fn im2col(x: &ArrayView4<f32>, k: usize, stride: usize, pad: usize, oh: usize, ow: usize) -> Array2<f32> {
    let (n, cin, h, w) = x.dim();
    let mut cols = Array2::zeros((n * oh * ow, cin * k * k));
    let cs = cols.as_slice_mut().unwrap();
    let row_len = cin * k * k;
    for ni in 0..n {
        let xi = x.index_axis(ndarray::Axis(0), ni);
        let xs = xi.as_slice().unwrap(); // (Cin, H, W) standard layout
        for oy in 0..oh {
            let iy0 = (oy * stride) as isize - pad as isize;
            for ox in 0..ow {
                let ix0 = (ox * stride) as isize - pad as isize;
                let row = ((ni * oh + oy) * ow + ox) * row_len;
                for c in 0..cin {
                    let cbase = c * h * w;
                    for ky in 0..k {
                        let iy = iy0 + ky as isize;
                        let dst = row + (c * k + ky) * k;
                        if iy < 0 || iy >= h as isize {
                            continue; // zeros already
                        }
                        let ybase = cbase + iy as usize * w;
                        for kx in 0..k {
                            let ix = ix0 + kx as isize;
                            if ix >= 0 && ix < w as isize {
                                cs[dst + kx] = xs[ybase + ix as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Accumulates (Nc*OH*OW, Cin*K*K) columns back into the (Nc, Cin, H, W) view.
fn col2im_add(
    dcols: &Array2<f32>,
    dx: &mut ndarray::ArrayViewMut4<f32>,
    k: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
) {
    let (n, cin, h, w) = dx.dim();
    let ds = dcols.as_slice().unwrap();
    let row_len = cin * k * k;
    for ni in 0..n {
        let mut xi = dx.index_axis_mut(ndarray::Axis(0), ni);
        let xs = xi.as_slice_mut().unwrap();
        for oy in 0..oh {
            let iy0 = (oy * stride) as isize - pad as isize;
            for ox in 0..ow {
                let ix0 = (ox * stride) as isize - pad as isize;
                let row = ((ni * oh + oy) * ow + ox) * row_len;
                for c in 0..cin {
                    let cbase = c * h * w;
                    for ky in 0..k {
                        let iy = iy0 + ky as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let ybase = cbase + iy as usize * w;
                        let src = row + (c * k + ky) * k;
                        for kx in 0..k {
                            let ix = ix0 + kx as isize;
                            if ix >= 0 && ix < w as isize {
                                xs[ybase + ix as usize] += ds[src + kx];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Writes matmul rows (rows, Cout) plus bias into y[start.., :, :, :].
fn scatter_rows(
    rows: &Array2<f32>,
    bias: &[f32],
    y: &mut Array4<f32>,
    start: usize,
    oh: usize,
    ow: usize,
) {
    let cout = rows.shape()[1];
    let rs = rows.as_slice().unwrap();
    let n_rows = rows.shape()[0] / (oh * ow);
    for ni in 0..n_rows {
        let mut yi = y.index_axis_mut(ndarray::Axis(0), start + ni);
        let ys = yi.as_slice_mut().unwrap();
        for oy in 0..oh {
            for ox in 0..ow {
                let row = ((ni * oh + oy) * ow + ox) * cout;
                let pix = oy * ow + ox;
                for c in 0..cout {
                    ys[c * oh * ow + pix] = rs[row + c] + bias[c];
                }
            }
        }
    }
}

/// Gathers dy[start..end] into (rows, Cout) layout matching im2col rows.
fn gather_rows(dy: &Array4<f32>, start: usize, end: usize, oh: usize, ow: usize) -> Array2<f32> {
    let cout = dy.shape()[1];
    let n = end - start;
    let mut rows = Array2::zeros((n * oh * ow, cout));
    let rs = rows.as_slice_mut().unwrap();
    for ni in 0..n {
        let di = dy.index_axis(ndarray::Axis(0), start + ni);
        let dsl = di.as_slice().unwrap();
        for oy in 0..oh {
            for ox in 0..ow {
                let row = ((ni * oh + oy) * ow + ox) * cout;
                let pix = oy * ow + ox;
                for c in 0..cout {
                    rs[row + c] = dsl[c * oh * ow + pix];
                }
            }
        }
    }
    rows
}
