//! Grouped 2-D convolution.
//!
//! Three code paths: a GEMM fast path for pointwise (1x1) convolutions, a
//! direct stencil for depthwise convolutions, and im2col + GEMM for the
//! general grouped case. Sample-level work is parallelized with rayon;
//! per-sample weight gradients are reduced in index order, so results are
//! deterministic.

use ndarray::{s, Array2, Array3, Array4, ArrayView2, ArrayView3, Axis};
use rayon::prelude::*;

use super::{kaiming_uniform, Layer, Param};

pub struct Conv2d {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub groups: usize,
    weight: Param,
    bias: Option<Param>,
    input: Option<Array4<f32>>,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: rand::Rng>(
        rng: &mut R,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        groups: usize,
        bias: bool,
    ) -> Self {
        assert!(in_channels % groups == 0 && out_channels % groups == 0);
        let icg = in_channels / groups;
        let fan_in = icg * kernel * kernel;
        let weight = Param::new(kaiming_uniform(
            rng,
            out_channels * icg * kernel * kernel,
            fan_in,
        ));
        let bias = bias.then(|| Param::zeros(out_channels));
        Self {
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
            groups,
            weight,
            bias,
            input: None,
        }
    }

    /// Depthwise spatial convolution: one k x k filter per input channel.
    pub fn depthwise<R: rand::Rng>(rng: &mut R, channels: usize, kernel: usize) -> Self {
        Self::new(rng, channels, channels, kernel, 1, kernel / 2, channels, false)
    }

    /// Pointwise 1x1 cross-channel convolution.
    pub fn pointwise<R: rand::Rng>(rng: &mut R, in_channels: usize, out_channels: usize) -> Self {
        Self::new(rng, in_channels, out_channels, 1, 1, 0, 1, true)
    }

    fn out_size(&self, h: usize, w: usize) -> (usize, usize) {
        (
            (h + 2 * self.padding - self.kernel) / self.stride + 1,
            (w + 2 * self.padding - self.kernel) / self.stride + 1,
        )
    }

    fn icg(&self) -> usize {
        self.in_channels / self.groups
    }

    fn ocg(&self) -> usize {
        self.out_channels / self.groups
    }

    fn is_pointwise(&self) -> bool {
        self.kernel == 1 && self.stride == 1 && self.padding == 0 && self.groups == 1
    }

    fn is_depthwise(&self) -> bool {
        self.groups == self.in_channels
            && self.out_channels == self.in_channels
            && self.stride == 1
            && self.padding == self.kernel / 2
    }

    fn im2col(&self, x: &ArrayView3<f32>, group: usize) -> Array2<f32> {
        let (h, w) = (x.shape()[1], x.shape()[2]);
        let (oh, ow) = self.out_size(h, w);
        let (k, s, p, icg) = (self.kernel, self.stride, self.padding, self.icg());
        let mut cols = Array2::<f32>::zeros((icg * k * k, oh * ow));
        for c in 0..icg {
            let ch = group * icg + c;
            for ky in 0..k {
                for kx in 0..k {
                    let row = (c * k + ky) * k + kx;
                    for oy in 0..oh {
                        let iy = (oy * s + ky) as isize - p as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for ox in 0..ow {
                            let ix = (ox * s + kx) as isize - p as isize;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            cols[[row, oy * ow + ox]] = x[[ch, iy as usize, ix as usize]];
                        }
                    }
                }
            }
        }
        cols
    }

    fn col2im(&self, cols: &Array2<f32>, group: usize, gx: &mut ndarray::ArrayViewMut3<f32>) {
        let (h, w) = (gx.shape()[1], gx.shape()[2]);
        let (oh, ow) = self.out_size(h, w);
        let (k, s, p, icg) = (self.kernel, self.stride, self.padding, self.icg());
        for c in 0..icg {
            let ch = group * icg + c;
            for ky in 0..k {
                for kx in 0..k {
                    let row = (c * k + ky) * k + kx;
                    for oy in 0..oh {
                        let iy = (oy * s + ky) as isize - p as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for ox in 0..ow {
                            let ix = (ox * s + kx) as isize - p as isize;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            gx[[ch, iy as usize, ix as usize]] += cols[[row, oy * ow + ox]];
                        }
                    }
                }
            }
        }
    }

    fn weight_group(&self, group: usize) -> ArrayView2<'_, f32> {
        let (ocg, cols) = (self.ocg(), self.icg() * self.kernel * self.kernel);
        let start = group * ocg * cols;
        ArrayView2::from_shape((ocg, cols), &self.weight.value[start..start + ocg * cols])
            .expect("weight group shape")
    }

    fn add_bias(&self, out: &mut Array3<f32>) {
        if let Some(b) = &self.bias {
            for oc in 0..self.out_channels {
                out.index_axis_mut(Axis(0), oc)
                    .mapv_inplace(|v| v + b.value[oc]);
            }
        }
    }

    fn forward_sample(&self, x: &ArrayView3<f32>) -> Array3<f32> {
        let (h, w) = (x.shape()[1], x.shape()[2]);
        let (oh, ow) = self.out_size(h, w);
        let mut out = Array3::<f32>::zeros((self.out_channels, oh, ow));

        if self.is_pointwise() {
            let xm = x.to_shape((self.in_channels, h * w)).expect("contiguous");
            let wm = ArrayView2::from_shape(
                (self.out_channels, self.in_channels),
                &self.weight.value,
            )
            .unwrap();
            let om = wm.dot(&xm);
            // dot() may hand back an f-order result for degenerate shapes
            let om = om.as_standard_layout();
            out.as_slice_mut()
                .unwrap()
                .copy_from_slice(om.as_slice().unwrap());
        } else if self.is_depthwise() {
            let xs = x.as_slice().expect("contiguous sample");
            let os = out.as_slice_mut().unwrap();
            let (k, p) = (self.kernel, self.padding);
            for ch in 0..self.in_channels {
                let wk = &self.weight.value[ch * k * k..(ch + 1) * k * k];
                let x_ch = &xs[ch * h * w..(ch + 1) * h * w];
                let o_ch = &mut os[ch * h * w..(ch + 1) * h * w];
                for ky in 0..k {
                    for kx in 0..k {
                        let wv = wk[ky * k + kx];
                        if wv == 0.0 {
                            continue;
                        }
                        let dy = ky as isize - p as isize;
                        let dx = kx as isize - p as isize;
                        let oy0 = (-dy).max(0) as usize;
                        let oy1 = ((h as isize - dy).min(h as isize)).max(0) as usize;
                        let ox0 = (-dx).max(0) as usize;
                        let ox1 = ((w as isize - dx).min(w as isize)).max(0) as usize;
                        for oy in oy0..oy1 {
                            let iy = (oy as isize + dy) as usize;
                            let orow = &mut o_ch[oy * w + ox0..oy * w + ox1];
                            let xi0 = (iy * w) as isize + ox0 as isize + dx;
                            let xrow = &x_ch[xi0 as usize..xi0 as usize + (ox1 - ox0)];
                            for (o, &xv) in orow.iter_mut().zip(xrow) {
                                *o += wv * xv;
                            }
                        }
                    }
                }
            }
        } else {
            let ocg = self.ocg();
            for g in 0..self.groups {
                let cols = self.im2col(x, g);
                let og = self.weight_group(g).dot(&cols);
                let og = og.as_standard_layout();
                out.slice_mut(s![g * ocg..(g + 1) * ocg, .., ..])
                    .as_slice_mut()
                    .unwrap()
                    .copy_from_slice(og.as_slice().unwrap());
            }
        }
        self.add_bias(&mut out);
        out
    }

    /// (grad_input, grad_weight, grad_bias) for one sample.
    fn backward_sample(
        &self,
        x: &ArrayView3<f32>,
        go: &ArrayView3<f32>,
    ) -> (Array3<f32>, Vec<f32>, Vec<f32>) {
        let (h, w) = (x.shape()[1], x.shape()[2]);
        let (oh, ow) = self.out_size(h, w);
        let ocg = self.ocg();
        let wcols = self.icg() * self.kernel * self.kernel;
        let mut gx = Array3::<f32>::zeros((self.in_channels, h, w));
        let mut gw = vec![0.0f32; self.weight.len()];
        let mut gb = vec![0.0f32; self.bias.as_ref().map_or(0, |b| b.len())];

        if self.is_pointwise() {
            let xm = x.to_shape((self.in_channels, h * w)).expect("contiguous");
            let gom = go.to_shape((self.out_channels, oh * ow)).expect("contiguous");
            let wm = ArrayView2::from_shape(
                (self.out_channels, self.in_channels),
                &self.weight.value,
            )
            .unwrap();
            let gwm = gom.dot(&xm.t());
            let gwm = gwm.as_standard_layout();
            gw.copy_from_slice(gwm.as_slice().unwrap());
            let gxm = wm.t().dot(&gom);
            let gxm = gxm.as_standard_layout();
            gx.as_slice_mut()
                .unwrap()
                .copy_from_slice(gxm.as_slice().unwrap());
            if !gb.is_empty() {
                for oc in 0..self.out_channels {
                    gb[oc] = gom.row(oc).sum();
                }
            }
        } else if self.is_depthwise() {
            let xs = x.as_slice().expect("contiguous sample");
            let gos = go.as_slice().expect("contiguous grad");
            let gxs = gx.as_slice_mut().unwrap();
            let (k, p) = (self.kernel, self.padding);
            for ch in 0..self.in_channels {
                let wk = &self.weight.value[ch * k * k..(ch + 1) * k * k];
                let gwk = &mut gw[ch * k * k..(ch + 1) * k * k];
                let x_ch = &xs[ch * h * w..(ch + 1) * h * w];
                let go_ch = &gos[ch * h * w..(ch + 1) * h * w];
                let gx_ch = &mut gxs[ch * h * w..(ch + 1) * h * w];
                for ky in 0..k {
                    for kx in 0..k {
                        let wv = wk[ky * k + kx];
                        let dy = ky as isize - p as isize;
                        let dx = kx as isize - p as isize;
                        let oy0 = (-dy).max(0) as usize;
                        let oy1 = ((h as isize - dy).min(h as isize)).max(0) as usize;
                        let ox0 = (-dx).max(0) as usize;
                        let ox1 = ((w as isize - dx).min(w as isize)).max(0) as usize;
                        let mut acc = 0.0f32;
                        for oy in oy0..oy1 {
                            let iy = (oy as isize + dy) as usize;
                            let gorow = &go_ch[oy * w + ox0..oy * w + ox1];
                            let xi0 = iy * w + (ox0 as isize + dx) as usize;
                            let xrow = &x_ch[xi0..xi0 + (ox1 - ox0)];
                            let gxrow = &mut gx_ch[xi0..xi0 + (ox1 - ox0)];
                            for ((gv, &xv), gxv) in gorow.iter().zip(xrow).zip(gxrow) {
                                acc += gv * xv;
                                *gxv += wv * gv;
                            }
                        }
                        gwk[ky * k + kx] = acc;
                    }
                }
            }
        } else {
            let gom_all = go.to_shape((self.out_channels, oh * ow)).expect("contiguous");
            for g in 0..self.groups {
                let gom = gom_all.slice(s![g * ocg..(g + 1) * ocg, ..]);
                let cols = self.im2col(x, g);
                let gwg = gom.dot(&cols.t());
                let gwg = gwg.as_standard_layout();
                let start = g * ocg * wcols;
                gw[start..start + ocg * wcols].copy_from_slice(gwg.as_slice().unwrap());

                let gcols = self.weight_group(g).t().dot(&gom);
                self.col2im(&gcols, g, &mut gx.view_mut());
                if !gb.is_empty() {
                    for oc in 0..ocg {
                        gb[g * ocg + oc] = gom.row(oc).sum();
                    }
                }
            }
        }
        (gx, gw, gb)
    }
}

impl Layer for Conv2d {
    fn forward(&mut self, x: &Array4<f32>, _train: bool) -> Array4<f32> {
        let n = x.shape()[0];
        let (oh, ow) = self.out_size(x.shape()[2], x.shape()[3]);
        let samples: Vec<Array3<f32>> = (0..n)
            .into_par_iter()
            .map(|i| self.forward_sample(&x.index_axis(Axis(0), i)))
            .collect();
        let mut out = Array4::<f32>::zeros((n, self.out_channels, oh, ow));
        for (i, s) in samples.into_iter().enumerate() {
            out.index_axis_mut(Axis(0), i).assign(&s);
        }
        self.input = Some(x.clone());
        out
    }

    fn backward(&mut self, grad: &Array4<f32>) -> Array4<f32> {
        let x = self.input.take().expect("backward before forward");
        let n = x.shape()[0];
        let per_sample: Vec<(Array3<f32>, Vec<f32>, Vec<f32>)> = (0..n)
            .into_par_iter()
            .map(|i| {
                self.backward_sample(&x.index_axis(Axis(0), i), &grad.index_axis(Axis(0), i))
            })
            .collect();

        let mut gx = Array4::<f32>::zeros(x.raw_dim());
        for (i, (gxi, gwi, gbi)) in per_sample.into_iter().enumerate() {
            gx.index_axis_mut(Axis(0), i).assign(&gxi);
            for (acc, v) in self.weight.grad.iter_mut().zip(&gwi) {
                *acc += v;
            }
            if let Some(b) = &mut self.bias {
                for (acc, v) in b.grad.iter_mut().zip(&gbi) {
                    *acc += v;
                }
            }
        }
        gx
    }

    fn params_mut(&mut self) -> Vec<(&'static str, &mut Param)> {
        let mut out = vec![("weight", &mut self.weight)];
        if let Some(b) = &mut self.bias {
            out.push(("bias", b));
        }
        out
    }

    fn params_ref(&self) -> Vec<(&'static str, &Param)> {
        let mut out = vec![("weight", &self.weight)];
        if let Some(b) = &self.bias {
            out.push(("bias", b));
        }
        out
    }
}
