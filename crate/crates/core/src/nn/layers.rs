//! Pointwise, pooling, normalization and dense layers.

use ndarray::{Array2, Array4, ArrayView2};

use super::{kaiming_uniform, Layer, Param};

// ---------------------------------------------------------------------------
// Activation / reshape
// ---------------------------------------------------------------------------

#[derive(Default)]
pub struct ReLU {
    mask: Option<Array4<f32>>,
}

impl ReLU {
    pub fn new() -> Self {
        Self::default()
    }
}

impl Layer for ReLU {
    fn forward(&mut self, x: &Array4<f32>, _train: bool) -> Array4<f32> {
        let mask = x.mapv(|v| if v > 0.0 { 1.0 } else { 0.0 });
        let out = x * &mask;
        self.mask = Some(mask);
        out
    }

    fn backward(&mut self, grad: &Array4<f32>) -> Array4<f32> {
        grad * self.mask.as_ref().expect("backward before forward")
    }
}

/// `(n, c, h, w)` -> `(n, c*h*w, 1, 1)`.
#[derive(Default)]
pub struct Flatten {
    in_shape: Option<(usize, usize, usize, usize)>,
}

impl Flatten {
    pub fn new() -> Self {
        Self::default()
    }
}

impl Layer for Flatten {
    fn forward(&mut self, x: &Array4<f32>, _train: bool) -> Array4<f32> {
        let &[n, c, h, w] = x.shape() else { unreachable!() };
        self.in_shape = Some((n, c, h, w));
        x.clone()
            .into_shape((n, c * h * w, 1, 1))
            .expect("standard layout")
    }

    fn backward(&mut self, grad: &Array4<f32>) -> Array4<f32> {
        let (n, c, h, w) = self.in_shape.expect("backward before forward");
        grad.clone().into_shape((n, c, h, w)).expect("standard layout")
    }
}

// ---------------------------------------------------------------------------
// Pooling
// ---------------------------------------------------------------------------

pub struct AvgPool2d {
    pub kernel: usize,
    pub stride: usize,
    in_shape: Option<(usize, usize, usize, usize)>,
}

impl AvgPool2d {
    pub fn new(kernel: usize, stride: usize) -> Self {
        Self {
            kernel,
            stride,
            in_shape: None,
        }
    }

    fn out_size(&self, h: usize, w: usize) -> (usize, usize) {
        ((h - self.kernel) / self.stride + 1, (w - self.kernel) / self.stride + 1)
    }
}

impl Layer for AvgPool2d {
    fn forward(&mut self, x: &Array4<f32>, _train: bool) -> Array4<f32> {
        let &[n, c, h, w] = x.shape() else { unreachable!() };
        self.in_shape = Some((n, c, h, w));
        let (oh, ow) = self.out_size(h, w);
        let norm = 1.0 / (self.kernel * self.kernel) as f32;
        let mut out = Array4::<f32>::zeros((n, c, oh, ow));
        for i in 0..n {
            for ch in 0..c {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut acc = 0.0;
                        for ky in 0..self.kernel {
                            for kx in 0..self.kernel {
                                acc += x[[i, ch, oy * self.stride + ky, ox * self.stride + kx]];
                            }
                        }
                        out[[i, ch, oy, ox]] = acc * norm;
                    }
                }
            }
        }
        out
    }

    fn backward(&mut self, grad: &Array4<f32>) -> Array4<f32> {
        let (n, c, h, w) = self.in_shape.expect("backward before forward");
        let (oh, ow) = self.out_size(h, w);
        let norm = 1.0 / (self.kernel * self.kernel) as f32;
        let mut gx = Array4::<f32>::zeros((n, c, h, w));
        for i in 0..n {
            for ch in 0..c {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let g = grad[[i, ch, oy, ox]] * norm;
                        for ky in 0..self.kernel {
                            for kx in 0..self.kernel {
                                gx[[i, ch, oy * self.stride + ky, ox * self.stride + kx]] += g;
                            }
                        }
                    }
                }
            }
        }
        gx
    }
}

pub struct MaxPool2d {
    pub kernel: usize,
    pub stride: usize,
    in_shape: Option<(usize, usize, usize, usize)>,
    argmax: Option<Vec<(usize, usize)>>,
}

impl MaxPool2d {
    pub fn new(kernel: usize, stride: usize) -> Self {
        Self {
            kernel,
            stride,
            in_shape: None,
            argmax: None,
        }
    }

    fn out_size(&self, h: usize, w: usize) -> (usize, usize) {
        ((h - self.kernel) / self.stride + 1, (w - self.kernel) / self.stride + 1)
    }
}

impl Layer for MaxPool2d {
    fn forward(&mut self, x: &Array4<f32>, _train: bool) -> Array4<f32> {
        let &[n, c, h, w] = x.shape() else { unreachable!() };
        self.in_shape = Some((n, c, h, w));
        let (oh, ow) = self.out_size(h, w);
        let mut out = Array4::<f32>::zeros((n, c, oh, ow));
        let mut argmax = vec![(0usize, 0usize); n * c * oh * ow];
        for i in 0..n {
            for ch in 0..c {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut best = f32::NEG_INFINITY;
                        let mut at = (0, 0);
                        for ky in 0..self.kernel {
                            for kx in 0..self.kernel {
                                let (y, xx) = (oy * self.stride + ky, ox * self.stride + kx);
                                let v = x[[i, ch, y, xx]];
                                if v > best {
                                    best = v;
                                    at = (y, xx);
                                }
                            }
                        }
                        out[[i, ch, oy, ox]] = best;
                        argmax[((i * c + ch) * oh + oy) * ow + ox] = at;
                    }
                }
            }
        }
        self.argmax = Some(argmax);
        out
    }

    fn backward(&mut self, grad: &Array4<f32>) -> Array4<f32> {
        let (n, c, h, w) = self.in_shape.expect("backward before forward");
        let (oh, ow) = self.out_size(h, w);
        let argmax = self.argmax.take().expect("backward before forward");
        let mut gx = Array4::<f32>::zeros((n, c, h, w));
        for i in 0..n {
            for ch in 0..c {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let (y, xx) = argmax[((i * c + ch) * oh + oy) * ow + ox];
                        gx[[i, ch, y, xx]] += grad[[i, ch, oy, ox]];
                    }
                }
            }
        }
        gx
    }
}

/// Average pooling onto a fixed output grid (window bounds as in the usual
/// adaptive formulation).
pub struct AdaptiveAvgPool2d {
    pub out_h: usize,
    pub out_w: usize,
    in_shape: Option<(usize, usize, usize, usize)>,
}

impl AdaptiveAvgPool2d {
    pub fn new(out_h: usize, out_w: usize) -> Self {
        Self {
            out_h,
            out_w,
            in_shape: None,
        }
    }

    fn window(i: usize, out: usize, len: usize) -> (usize, usize) {
        (i * len / out, ((i + 1) * len + out - 1) / out)
    }
}

impl Layer for AdaptiveAvgPool2d {
    fn forward(&mut self, x: &Array4<f32>, _train: bool) -> Array4<f32> {
        let &[n, c, h, w] = x.shape() else { unreachable!() };
        self.in_shape = Some((n, c, h, w));
        let mut out = Array4::<f32>::zeros((n, c, self.out_h, self.out_w));
        for i in 0..n {
            for ch in 0..c {
                for oy in 0..self.out_h {
                    let (y0, y1) = Self::window(oy, self.out_h, h);
                    for ox in 0..self.out_w {
                        let (x0, x1) = Self::window(ox, self.out_w, w);
                        let mut acc = 0.0;
                        for y in y0..y1 {
                            for xx in x0..x1 {
                                acc += x[[i, ch, y, xx]];
                            }
                        }
                        out[[i, ch, oy, ox]] = acc / ((y1 - y0) * (x1 - x0)) as f32;
                    }
                }
            }
        }
        out
    }

    fn backward(&mut self, grad: &Array4<f32>) -> Array4<f32> {
        let (n, c, h, w) = self.in_shape.expect("backward before forward");
        let mut gx = Array4::<f32>::zeros((n, c, h, w));
        for i in 0..n {
            for ch in 0..c {
                for oy in 0..self.out_h {
                    let (y0, y1) = Self::window(oy, self.out_h, h);
                    for ox in 0..self.out_w {
                        let (x0, x1) = Self::window(ox, self.out_w, w);
                        let g = grad[[i, ch, oy, ox]] / ((y1 - y0) * (x1 - x0)) as f32;
                        for y in y0..y1 {
                            for xx in x0..x1 {
                                gx[[i, ch, y, xx]] += g;
                            }
                        }
                    }
                }
            }
        }
        gx
    }
}

/// Spatial mean per channel, `(n, c, h, w)` -> `(n, c, 1, 1)`.
pub struct GlobalAvgPool {
    inner: AdaptiveAvgPool2d,
}

impl GlobalAvgPool {
    pub fn new() -> Self {
        Self {
            inner: AdaptiveAvgPool2d::new(1, 1),
        }
    }
}

impl Default for GlobalAvgPool {
    fn default() -> Self {
        Self::new()
    }
}

impl Layer for GlobalAvgPool {
    fn forward(&mut self, x: &Array4<f32>, train: bool) -> Array4<f32> {
        self.inner.forward(x, train)
    }

    fn backward(&mut self, grad: &Array4<f32>) -> Array4<f32> {
        self.inner.backward(grad)
    }
}

// ---------------------------------------------------------------------------
// Batch normalization
// ---------------------------------------------------------------------------

pub struct BatchNorm2d {
    pub channels: usize,
    gamma: Param,
    beta: Param,
    running_mean: Vec<f32>,
    running_var: Vec<f32>,
    momentum: f32,
    eps: f32,
    // backward caches
    xhat: Option<Array4<f32>>,
    inv_std: Vec<f32>,
    train_mode: bool,
}

impl BatchNorm2d {
    pub fn new(channels: usize) -> Self {
        Self {
            channels,
            gamma: Param::new(vec![1.0; channels]),
            beta: Param::zeros(channels),
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
            momentum: 0.1,
            eps: 1e-5,
            xhat: None,
            inv_std: Vec::new(),
            train_mode: false,
        }
    }
}

impl Layer for BatchNorm2d {
    fn forward(&mut self, x: &Array4<f32>, train: bool) -> Array4<f32> {
        let &[n, c, h, w] = x.shape() else { unreachable!() };
        assert_eq!(c, self.channels);
        let count = (n * h * w) as f64;
        self.train_mode = train;
        let mut out = Array4::<f32>::zeros((n, c, h, w));
        let mut xhat = Array4::<f32>::zeros((n, c, h, w));
        self.inv_std = vec![0.0; c];
        for ch in 0..c {
            let (mean, var) = if train {
                let mut sum = 0.0f64;
                let mut sq = 0.0f64;
                for i in 0..n {
                    for y in 0..h {
                        for xx in 0..w {
                            let v = x[[i, ch, y, xx]] as f64;
                            sum += v;
                            sq += v * v;
                        }
                    }
                }
                let mean = sum / count;
                let var = (sq / count - mean * mean).max(0.0);
                self.running_mean[ch] =
                    (1.0 - self.momentum) * self.running_mean[ch] + self.momentum * mean as f32;
                // unbiased variance for the running estimate
                let unbiased = if count > 1.0 { var * count / (count - 1.0) } else { var };
                self.running_var[ch] =
                    (1.0 - self.momentum) * self.running_var[ch] + self.momentum * unbiased as f32;
                (mean as f32, var as f32)
            } else {
                (self.running_mean[ch], self.running_var[ch])
            };
            let inv = 1.0 / (var + self.eps).sqrt();
            self.inv_std[ch] = inv;
            let (g, b) = (self.gamma.value[ch], self.beta.value[ch]);
            for i in 0..n {
                for y in 0..h {
                    for xx in 0..w {
                        let xh = (x[[i, ch, y, xx]] - mean) * inv;
                        xhat[[i, ch, y, xx]] = xh;
                        out[[i, ch, y, xx]] = g * xh + b;
                    }
                }
            }
        }
        self.xhat = Some(xhat);
        out
    }

    fn backward(&mut self, grad: &Array4<f32>) -> Array4<f32> {
        let xhat = self.xhat.take().expect("backward before forward");
        let &[n, c, h, w] = grad.shape() else { unreachable!() };
        let count = (n * h * w) as f32;
        let mut gx = Array4::<f32>::zeros((n, c, h, w));
        for ch in 0..c {
            let mut gsum = 0.0f32;
            let mut gxhat_sum = 0.0f32;
            for i in 0..n {
                for y in 0..h {
                    for xx in 0..w {
                        let g = grad[[i, ch, y, xx]];
                        gsum += g;
                        gxhat_sum += g * xhat[[i, ch, y, xx]];
                    }
                }
            }
            self.gamma.grad[ch] += gxhat_sum;
            self.beta.grad[ch] += gsum;
            let (gamma, inv) = (self.gamma.value[ch], self.inv_std[ch]);
            if self.train_mode {
                for i in 0..n {
                    for y in 0..h {
                        for xx in 0..w {
                            let g = grad[[i, ch, y, xx]];
                            let xh = xhat[[i, ch, y, xx]];
                            gx[[i, ch, y, xx]] =
                                gamma * inv * (g - gsum / count - xh * gxhat_sum / count);
                        }
                    }
                }
            } else {
                // eval-mode normalization is an affine map
                for i in 0..n {
                    for y in 0..h {
                        for xx in 0..w {
                            gx[[i, ch, y, xx]] = grad[[i, ch, y, xx]] * gamma * inv;
                        }
                    }
                }
            }
        }
        gx
    }

    fn params_mut(&mut self) -> Vec<(&'static str, &mut Param)> {
        vec![("gamma", &mut self.gamma), ("beta", &mut self.beta)]
    }

    fn params_ref(&self) -> Vec<(&'static str, &Param)> {
        vec![("gamma", &self.gamma), ("beta", &self.beta)]
    }

    fn buffers_mut(&mut self) -> Vec<(&'static str, &mut Vec<f32>)> {
        vec![
            ("running_mean", &mut self.running_mean),
            ("running_var", &mut self.running_var),
        ]
    }

    fn buffers_ref(&self) -> Vec<(&'static str, &Vec<f32>)> {
        vec![
            ("running_mean", &self.running_mean),
            ("running_var", &self.running_var),
        ]
    }
}

// ---------------------------------------------------------------------------
// Dense
// ---------------------------------------------------------------------------

/// Fully connected layer on `(n, in, 1, 1)` feature vectors.
pub struct Linear {
    pub in_features: usize,
    pub out_features: usize,
    weight: Param,
    bias: Param,
    input: Option<Array2<f32>>,
}

impl Linear {
    pub fn new<R: rand::Rng>(rng: &mut R, in_features: usize, out_features: usize) -> Self {
        Self {
            in_features,
            out_features,
            weight: Param::new(kaiming_uniform(rng, out_features * in_features, in_features)),
            bias: Param::zeros(out_features),
            input: None,
        }
    }

    fn weight_view(&self) -> ArrayView2<'_, f32> {
        ArrayView2::from_shape((self.out_features, self.in_features), &self.weight.value).unwrap()
    }
}

impl Layer for Linear {
    fn forward(&mut self, x: &Array4<f32>, _train: bool) -> Array4<f32> {
        let n = x.shape()[0];
        let xm = x
            .clone()
            .into_shape((n, self.in_features))
            .expect("linear input shape");
        let mut out = xm.dot(&self.weight_view().t());
        for mut row in out.rows_mut() {
            for (v, b) in row.iter_mut().zip(&self.bias.value) {
                *v += b;
            }
        }
        self.input = Some(xm);
        out.into_shape((n, self.out_features, 1, 1)).unwrap()
    }

    fn backward(&mut self, grad: &Array4<f32>) -> Array4<f32> {
        let x = self.input.take().expect("backward before forward");
        let n = grad.shape()[0];
        let gm = grad
            .clone()
            .into_shape((n, self.out_features))
            .expect("linear grad shape");
        let gw = gm.t().dot(&x);
        for (acc, v) in self.weight.grad.iter_mut().zip(gw.iter()) {
            *acc += v;
        }
        for j in 0..self.out_features {
            self.bias.grad[j] += gm.column(j).sum();
        }
        let gx = gm.dot(&self.weight_view());
        gx.into_shape((n, self.in_features, 1, 1)).unwrap()
    }

    fn params_mut(&mut self) -> Vec<(&'static str, &mut Param)> {
        vec![("weight", &mut self.weight), ("bias", &mut self.bias)]
    }

    fn params_ref(&self) -> Vec<(&'static str, &Param)> {
        vec![("weight", &self.weight), ("bias", &self.bias)]
    }
}

// ---------------------------------------------------------------------------
// Residual block (ResNet basic block)
// ---------------------------------------------------------------------------

pub struct ResidualBlock {
    conv1: super::Conv2d,
    bn1: BatchNorm2d,
    conv2: super::Conv2d,
    bn2: BatchNorm2d,
    downsample: Option<(super::Conv2d, BatchNorm2d)>,
    relu1: ReLU,
    out_mask: Option<Array4<f32>>,
}

impl ResidualBlock {
    pub fn new<R: rand::Rng>(rng: &mut R, in_c: usize, out_c: usize, stride: usize) -> Self {
        let conv1 = super::Conv2d::new(rng, in_c, out_c, 3, stride, 1, 1, false);
        let conv2 = super::Conv2d::new(rng, out_c, out_c, 3, 1, 1, 1, false);
        let downsample = (stride != 1 || in_c != out_c).then(|| {
            (
                super::Conv2d::new(rng, in_c, out_c, 1, stride, 0, 1, false),
                BatchNorm2d::new(out_c),
            )
        });
        Self {
            conv1,
            bn1: BatchNorm2d::new(out_c),
            conv2,
            bn2: BatchNorm2d::new(out_c),
            downsample,
            relu1: ReLU::new(),
            out_mask: None,
        }
    }
}

impl Layer for ResidualBlock {
    fn forward(&mut self, x: &Array4<f32>, train: bool) -> Array4<f32> {
        let mut main = self.conv1.forward(x, train);
        main = self.bn1.forward(&main, train);
        main = self.relu1.forward(&main, train);
        main = self.conv2.forward(&main, train);
        main = self.bn2.forward(&main, train);
        let shortcut = match &mut self.downsample {
            Some((conv, bn)) => {
                let s = conv.forward(x, train);
                bn.forward(&s, train)
            }
            None => x.clone(),
        };
        let sum = &main + &shortcut;
        let mask = sum.mapv(|v| if v > 0.0 { 1.0 } else { 0.0 });
        let out = &sum * &mask;
        self.out_mask = Some(mask);
        out
    }

    fn backward(&mut self, grad: &Array4<f32>) -> Array4<f32> {
        let g = grad * self.out_mask.as_ref().expect("backward before forward");
        let mut gm = self.bn2.backward(&g);
        gm = self.conv2.backward(&gm);
        gm = self.relu1.backward(&gm);
        gm = self.bn1.backward(&gm);
        gm = self.conv1.backward(&gm);
        let gs = match &mut self.downsample {
            Some((conv, bn)) => {
                let t = bn.backward(&g);
                conv.backward(&t)
            }
            None => g,
        };
        gm + gs
    }

    fn params_mut(&mut self) -> Vec<(&'static str, &mut Param)> {
        let mut out = Vec::new();
        out.extend(self.conv1.params_mut().into_iter().map(|(_, p)| ("conv1.weight", p)));
        out.extend(self.bn1.params_mut().into_iter().map(|(n, p)| {
            (if n == "gamma" { "bn1.gamma" } else { "bn1.beta" }, p)
        }));
        out.extend(self.conv2.params_mut().into_iter().map(|(_, p)| ("conv2.weight", p)));
        out.extend(self.bn2.params_mut().into_iter().map(|(n, p)| {
            (if n == "gamma" { "bn2.gamma" } else { "bn2.beta" }, p)
        }));
        if let Some((conv, bn)) = &mut self.downsample {
            out.extend(conv.params_mut().into_iter().map(|(_, p)| ("down.weight", p)));
            out.extend(bn.params_mut().into_iter().map(|(n, p)| {
                (if n == "gamma" { "down.gamma" } else { "down.beta" }, p)
            }));
        }
        out
    }

    fn params_ref(&self) -> Vec<(&'static str, &Param)> {
        let mut out = Vec::new();
        out.extend(self.conv1.params_ref().into_iter().map(|(_, p)| ("conv1.weight", p)));
        out.extend(self.bn1.params_ref().into_iter().map(|(n, p)| {
            (if n == "gamma" { "bn1.gamma" } else { "bn1.beta" }, p)
        }));
        out.extend(self.conv2.params_ref().into_iter().map(|(_, p)| ("conv2.weight", p)));
        out.extend(self.bn2.params_ref().into_iter().map(|(n, p)| {
            (if n == "gamma" { "bn2.gamma" } else { "bn2.beta" }, p)
        }));
        if let Some((conv, bn)) = &self.downsample {
            out.extend(conv.params_ref().into_iter().map(|(_, p)| ("down.weight", p)));
            out.extend(bn.params_ref().into_iter().map(|(n, p)| {
                (if n == "gamma" { "down.gamma" } else { "down.beta" }, p)
            }));
        }
        out
    }

    fn buffers_mut(&mut self) -> Vec<(&'static str, &mut Vec<f32>)> {
        let mut out = Vec::new();
        out.extend(self.bn1.buffers_mut());
        out.extend(self.bn2.buffers_mut());
        if let Some((_, bn)) = &mut self.downsample {
            out.extend(bn.buffers_mut());
        }
        out
    }

    fn buffers_ref(&self) -> Vec<(&'static str, &Vec<f32>)> {
        let mut out = Vec::new();
        out.extend(self.bn1.buffers_ref());
        out.extend(self.bn2.buffers_ref());
        if let Some((_, bn)) = &self.downsample {
            out.extend(bn.buffers_ref());
        }
        out
    }
}
