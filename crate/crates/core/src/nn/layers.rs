// SPDX-License-Identifier: Apache-2.0

use rand::Rng;

use super::{join, Mode, Module, NnError, NnResult, Param, Real, Slot, SlotList, Tensor};

fn state_err(layer: &str) -> NnError {
    NnError::State(format!("{layer}: backward called before forward"))
}

fn check_grad_dims<T: Real>(layer: &str, grad: &Tensor<T>, expected: &[usize]) -> NnResult<()> {
    if grad.dims() != expected {
        return Err(NnError::Dim(format!("{layer}: upstream gradient {:?}, expected {expected:?}", grad.dims())));
    }
    Ok(())
}

/// 2-D convolution with square `k x k` kernels, zero padding `k / 2` and
/// output side `ceil(side / stride)`.
#[derive(Debug, Clone)]
pub struct Conv2d<T> {
    pub weight: Param<T>,
    pub bias: Param<T>,
    cin: usize,
    cout: usize,
    k: usize,
    stride: usize,
    input_grad: bool,
    cache: Option<Tensor<T>>,
}

struct Geometry {
    h: usize,
    w: usize,
    ho: usize,
    wo: usize,
}

impl<T: Real> Conv2d<T> {
    pub fn new(cin: usize, cout: usize, k: usize, stride: usize, rng: &mut impl Rng) -> Self {
        assert!(k % 2 == 1 && stride >= 1, "odd kernel and positive stride");
        let fan_in = (cin * k * k) as f64;
        let bound = (6.0 / fan_in).sqrt();
        Self {
            weight: Param::new(Tensor::uniform(&[cout, cin, k, k], bound, rng)),
            bias: Param::new(Tensor::zeros(&[cout])),
            cin,
            cout,
            k,
            stride,
            input_grad: true,
            cache: None,
        }
    }

    /// Disables the input gradient. All-zero input channels are then left
    /// out of the product, which speeds up sparse first layers.
    pub fn without_input_grad(mut self) -> Self {
        self.input_grad = false;
        self
    }

    pub fn out_side(&self, side: usize) -> usize {
        (side + 2 * (self.k / 2) - self.k) / self.stride + 1
    }

    fn geometry(&self, x: &Tensor<T>) -> NnResult<(usize, Geometry)> {
        let (n, c, h, w) = x.nchw()?;
        if c != self.cin {
            return Err(NnError::Dim(format!("conv expects {} input channels, got {c}", self.cin)));
        }
        Ok((n, Geometry { h, w, ho: self.out_side(h), wo: self.out_side(w) }))
    }

    fn used_channels(&self, xn: &[T], hw: usize) -> Vec<usize> {
        if self.input_grad {
            return (0..self.cin).collect();
        }
        (0..self.cin).filter(|&c| xn[c * hw..(c + 1) * hw].iter().any(|v| *v != T::zero())).collect()
    }

    fn im2col(&self, xn: &[T], used: &[usize], g: &Geometry, cols: &mut Vec<T>) {
        let (k, s, p) = (self.k, self.stride, self.k / 2);
        let howo = g.ho * g.wo;
        cols.clear();
        cols.resize(used.len() * k * k * howo, T::zero());
        for (ui, &ci) in used.iter().enumerate() {
            let plane = &xn[ci * g.h * g.w..(ci + 1) * g.h * g.w];
            for ky in 0..k {
                for kx in 0..k {
                    let row = &mut cols[((ui * k + ky) * k + kx) * howo..][..howo];
                    for oy in 0..g.ho {
                        let iy = (oy * s + ky) as isize - p as isize;
                        if iy < 0 || iy >= g.h as isize {
                            continue;
                        }
                        let src = &plane[iy as usize * g.w..][..g.w];
                        let dst = &mut row[oy * g.wo..][..g.wo];
                        for (ox, d) in dst.iter_mut().enumerate() {
                            let ix = (ox * s + kx) as isize - p as isize;
                            if ix >= 0 && (ix as usize) < g.w {
                                *d = src[ix as usize];
                            }
                        }
                    }
                }
            }
        }
    }

    fn col2im(&self, cols: &[T], g: &Geometry, dx: &mut [T]) {
        let (k, s, p) = (self.k, self.stride, self.k / 2);
        let howo = g.ho * g.wo;
        for ci in 0..self.cin {
            let plane = &mut dx[ci * g.h * g.w..(ci + 1) * g.h * g.w];
            for ky in 0..k {
                for kx in 0..k {
                    let row = &cols[((ci * k + ky) * k + kx) * howo..][..howo];
                    for oy in 0..g.ho {
                        let iy = (oy * s + ky) as isize - p as isize;
                        if iy < 0 || iy >= g.h as isize {
                            continue;
                        }
                        let dst = &mut plane[iy as usize * g.w..][..g.w];
                        for (ox, &v) in row[oy * g.wo..][..g.wo].iter().enumerate() {
                            let ix = (ox * s + kx) as isize - p as isize;
                            if ix >= 0 && (ix as usize) < g.w {
                                dst[ix as usize] += v;
                            }
                        }
                    }
                }
            }
        }
    }

    fn gathered_weight(&self, used: &[usize]) -> Vec<T> {
        let kk = self.k * self.k;
        let w = self.weight.value.data();
        let mut out = Vec::with_capacity(self.cout * used.len() * kk);
        for co in 0..self.cout {
            for &ci in used {
                out.extend_from_slice(&w[(co * self.cin + ci) * kk..][..kk]);
            }
        }
        out
    }
}

impl<T: Real> Module<T> for Conv2d<T> {
    fn forward(&mut self, x: &Tensor<T>, _mode: Mode) -> NnResult<Tensor<T>> {
        let (n, g) = self.geometry(x)?;
        let (hw, howo, kk) = (g.h * g.w, g.ho * g.wo, self.k * self.k);
        let mut out = Tensor::zeros(&[n, self.cout, g.ho, g.wo]);
        let mut cols = Vec::new();
        let per_in = self.cin * hw;
        let per_out = self.cout * howo;
        for i in 0..n {
            let xn = &x.data()[i * per_in..(i + 1) * per_in];
            let on = &mut out.data_mut()[i * per_out..(i + 1) * per_out];
            for (co, chunk) in on.chunks_mut(howo).enumerate() {
                chunk.fill(self.bias.value.data()[co]);
            }
            let used = self.used_channels(xn, hw);
            if used.is_empty() {
                continue;
            }
            self.im2col(xn, &used, &g, &mut cols);
            let ku = used.len() * kk;
            if used.len() == self.cin {
                T::gemm(self.cout, ku, howo, T::one(), self.weight.value.data(), false, &cols, false, T::one(), on);
            } else {
                let wsub = self.gathered_weight(&used);
                T::gemm(self.cout, ku, howo, T::one(), &wsub, false, &cols, false, T::one(), on);
            }
        }
        self.cache = Some(x.clone());
        Ok(out)
    }

    fn backward(&mut self, grad: &Tensor<T>) -> NnResult<Tensor<T>> {
        let x = self.cache.take().ok_or_else(|| state_err("conv"))?;
        let (n, g) = self.geometry(&x)?;
        check_grad_dims("conv", grad, &[n, self.cout, g.ho, g.wo])?;
        let (hw, howo, kk) = (g.h * g.w, g.ho * g.wo, self.k * self.k);
        let mut dx = if self.input_grad { Tensor::zeros(x.dims()) } else { Tensor::zeros(&[0]) };
        let mut cols = Vec::new();
        let mut dcols = vec![T::zero(); if self.input_grad { self.cin * kk * howo } else { 0 }];
        let per_in = self.cin * hw;
        let per_out = self.cout * howo;
        for i in 0..n {
            let xn = &x.data()[i * per_in..(i + 1) * per_in];
            let gn = &grad.data()[i * per_out..(i + 1) * per_out];
            for (co, chunk) in gn.chunks(howo).enumerate() {
                self.bias.grad[co] += chunk.iter().copied().sum::<T>();
            }
            let used = self.used_channels(xn, hw);
            if !used.is_empty() {
                self.im2col(xn, &used, &g, &mut cols);
                let ku = used.len() * kk;
                if used.len() == self.cin {
                    T::gemm(self.cout, howo, ku, T::one(), gn, false, &cols, true, T::one(), &mut self.weight.grad);
                } else {
                    let mut dw = vec![T::zero(); self.cout * ku];
                    T::gemm(self.cout, howo, ku, T::one(), gn, false, &cols, true, T::zero(), &mut dw);
                    for co in 0..self.cout {
                        for (ui, &ci) in used.iter().enumerate() {
                            let dst = &mut self.weight.grad[(co * self.cin + ci) * kk..][..kk];
                            for (d, &v) in dst.iter_mut().zip(&dw[(co * used.len() + ui) * kk..][..kk]) {
                                *d += v;
                            }
                        }
                    }
                }
            }
            if self.input_grad {
                let ck = self.cin * kk;
                T::gemm(ck, self.cout, howo, T::one(), self.weight.value.data(), true, gn, false, T::zero(), &mut dcols);
                let dxn = &mut dx.data_mut()[i * per_in..(i + 1) * per_in];
                self.col2im(&dcols, &g, dxn);
            }
        }
        Ok(dx)
    }

    fn slots<'a>(&'a mut self, prefix: &str, out: &mut SlotList<'a, T>) {
        out.push((join(prefix, "w"), Slot::Param(&mut self.weight)));
        out.push((join(prefix, "b"), Slot::Param(&mut self.bias)));
    }
}

/// Per-channel batch normalization over `N x H x W`.
#[derive(Debug, Clone)]
pub struct BatchNorm2d<T> {
    pub gamma: Param<T>,
    pub beta: Param<T>,
    pub running_mean: Tensor<T>,
    pub running_var: Tensor<T>,
    pub momentum: f64,
    pub eps: f64,
    cache: Option<BnCache<T>>,
}

#[derive(Debug, Clone)]
struct BnCache<T> {
    xhat: Tensor<T>,
    inv_std: Vec<T>,
    mode: Mode,
}

impl<T: Real> BatchNorm2d<T> {
    pub fn new(channels: usize) -> Self {
        Self {
            gamma: Param::new(Tensor::filled(&[channels], T::one())),
            beta: Param::new(Tensor::zeros(&[channels])),
            running_mean: Tensor::zeros(&[channels]),
            running_var: Tensor::filled(&[channels], T::one()),
            momentum: 0.1,
            eps: 1e-5,
            cache: None,
        }
    }

    fn channels(&self) -> usize {
        self.gamma.value.len()
    }
}

impl<T: Real> Module<T> for BatchNorm2d<T> {
    fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> NnResult<Tensor<T>> {
        let (n, c, h, w) = x.nchw()?;
        if c != self.channels() {
            return Err(NnError::Dim(format!("batch norm over {} channels, got {c}", self.channels())));
        }
        let hw = h * w;
        let m = n * hw;
        let eps = T::of(self.eps);
        let mut mean = vec![T::zero(); c];
        let mut var = vec![T::zero(); c];
        match mode {
            Mode::Train => {
                if n < 2 {
                    return Err(NnError::Batch(format!("training batch norm needs a batch of at least 2, got {n}")));
                }
                let mf = T::of(m as f64);
                for ch in 0..c {
                    let mut s = T::zero();
                    for i in 0..n {
                        s += x.data()[(i * c + ch) * hw..][..hw].iter().copied().sum::<T>();
                    }
                    let mu = s / mf;
                    let mut q = T::zero();
                    for i in 0..n {
                        for &v in &x.data()[(i * c + ch) * hw..][..hw] {
                            q += (v - mu) * (v - mu);
                        }
                    }
                    mean[ch] = mu;
                    var[ch] = q / mf;
                }
                let mom = T::of(self.momentum);
                let unbias = T::of(m as f64 / (m as f64 - 1.0).max(1.0));
                for ch in 0..c {
                    let rm = &mut self.running_mean.data_mut()[ch];
                    *rm = (T::one() - mom) * *rm + mom * mean[ch];
                    let rv = &mut self.running_var.data_mut()[ch];
                    *rv = (T::one() - mom) * *rv + mom * var[ch] * unbias;
                }
            }
            Mode::Eval => {
                mean.copy_from_slice(self.running_mean.data());
                var.copy_from_slice(self.running_var.data());
            }
        }
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let mut xhat = Tensor::zeros(x.dims());
        let mut y = Tensor::zeros(x.dims());
        for i in 0..n {
            for ch in 0..c {
                let off = (i * c + ch) * hw;
                let (g, b) = (self.gamma.value.data()[ch], self.beta.value.data()[ch]);
                for j in off..off + hw {
                    let xh = (x.data()[j] - mean[ch]) * inv_std[ch];
                    xhat.data_mut()[j] = xh;
                    y.data_mut()[j] = g * xh + b;
                }
            }
        }
        self.cache = Some(BnCache { xhat, inv_std, mode });
        Ok(y)
    }

    fn backward(&mut self, grad: &Tensor<T>) -> NnResult<Tensor<T>> {
        let BnCache { xhat, inv_std, mode } = self.cache.take().ok_or_else(|| state_err("batch norm"))?;
        check_grad_dims("batch norm", grad, xhat.dims())?;
        let (n, c, h, w) = xhat.nchw()?;
        let hw = h * w;
        let mf = T::of((n * hw) as f64);
        let mut dx = Tensor::zeros(xhat.dims());
        for ch in 0..c {
            let gamma = self.gamma.value.data()[ch];
            let (mut sum_dy, mut sum_dy_xhat) = (T::zero(), T::zero());
            for i in 0..n {
                let off = (i * c + ch) * hw;
                for j in off..off + hw {
                    sum_dy += grad.data()[j];
                    sum_dy_xhat += grad.data()[j] * xhat.data()[j];
                }
            }
            self.gamma.grad[ch] += sum_dy_xhat;
            self.beta.grad[ch] += sum_dy;
            for i in 0..n {
                let off = (i * c + ch) * hw;
                for j in off..off + hw {
                    dx.data_mut()[j] = match mode {
                        Mode::Eval => grad.data()[j] * gamma * inv_std[ch],
                        Mode::Train => {
                            gamma * inv_std[ch] / mf
                                * (mf * grad.data()[j] - sum_dy - xhat.data()[j] * sum_dy_xhat)
                        }
                    };
                }
            }
        }
        Ok(dx)
    }

    fn slots<'a>(&'a mut self, prefix: &str, out: &mut SlotList<'a, T>) {
        out.push((join(prefix, "gamma"), Slot::Param(&mut self.gamma)));
        out.push((join(prefix, "beta"), Slot::Param(&mut self.beta)));
        out.push((join(prefix, "running_mean"), Slot::Buffer(&mut self.running_mean)));
        out.push((join(prefix, "running_var"), Slot::Buffer(&mut self.running_var)));
    }
}

#[derive(Debug, Clone, Default)]
pub struct Relu {
    mask: Option<Vec<bool>>,
    dims: Vec<usize>,
}

impl Relu {
    pub fn new() -> Self {
        Self::default()
    }
}

impl<T: Real> Module<T> for Relu {
    fn forward(&mut self, x: &Tensor<T>, _mode: Mode) -> NnResult<Tensor<T>> {
        let mask: Vec<bool> = x.data().iter().map(|&v| v > T::zero()).collect();
        super::gradcheck::trace_mask(&mask);
        self.mask = Some(mask);
        self.dims = x.dims().to_vec();
        Ok(x.map(|v| if v > T::zero() { v } else { T::zero() }))
    }

    fn backward(&mut self, grad: &Tensor<T>) -> NnResult<Tensor<T>> {
        let mask = self.mask.take().ok_or_else(|| state_err("relu"))?;
        check_grad_dims("relu", grad, &self.dims)?;
        let data = grad.data().iter().zip(&mask).map(|(&g, &m)| if m { g } else { T::zero() }).collect();
        Tensor::from_vec(&self.dims, data)
    }

    fn slots<'a>(&'a mut self, _prefix: &str, _out: &mut SlotList<'a, T>) {}
}

/// Non-overlapping `k x k` average pooling; sides must divide by `k`.
#[derive(Debug, Clone)]
pub struct AvgPool2d {
    k: usize,
    input_dims: Option<Vec<usize>>,
}

impl AvgPool2d {
    pub fn new(k: usize) -> Self {
        assert!(k >= 1);
        Self { k, input_dims: None }
    }
}

impl<T: Real> Module<T> for AvgPool2d {
    fn forward(&mut self, x: &Tensor<T>, _mode: Mode) -> NnResult<Tensor<T>> {
        let (n, c, h, w) = x.nchw()?;
        let k = self.k;
        if h % k != 0 || w % k != 0 {
            return Err(NnError::Dim(format!("{h}x{w} does not divide into {k}x{k} windows")));
        }
        self.input_dims = Some(x.dims().to_vec());
        if k == 1 {
            return Ok(x.clone());
        }
        let (ho, wo) = (h / k, w / k);
        let mut out = Tensor::zeros(&[n, c, ho, wo]);
        let inv = T::one() / T::of((k * k) as f64);
        for p in 0..n * c {
            let src = &x.data()[p * h * w..][..h * w];
            let dst = &mut out.data_mut()[p * ho * wo..][..ho * wo];
            for y in 0..h {
                let drow = &mut dst[(y / k) * wo..][..wo];
                for (xx, &v) in src[y * w..][..w].iter().enumerate() {
                    drow[xx / k] += v;
                }
            }
            dst.iter_mut().for_each(|v| *v *= inv);
        }
        Ok(out)
    }

    fn backward(&mut self, grad: &Tensor<T>) -> NnResult<Tensor<T>> {
        let dims = self.input_dims.take().ok_or_else(|| state_err("avg pool"))?;
        let (k, h, w) = (self.k, dims[2], dims[3]);
        let (ho, wo) = (h / k, w / k);
        check_grad_dims("avg pool", grad, &[dims[0], dims[1], ho, wo])?;
        if k == 1 {
            return Ok(grad.clone());
        }
        let inv = T::one() / T::of((k * k) as f64);
        let mut dx = Tensor::zeros(&dims);
        for p in 0..dims[0] * dims[1] {
            let src = &grad.data()[p * ho * wo..][..ho * wo];
            let dst = &mut dx.data_mut()[p * h * w..][..h * w];
            for y in 0..h {
                for xx in 0..w {
                    dst[y * w + xx] = src[(y / k) * wo + xx / k] * inv;
                }
            }
        }
        Ok(dx)
    }

    fn slots<'a>(&'a mut self, _prefix: &str, _out: &mut SlotList<'a, T>) {}
}

/// `N x C x H x W -> N x C` spatial mean.
#[derive(Debug, Clone, Default)]
pub struct GlobalAvgPool {
    input_dims: Option<Vec<usize>>,
}

impl GlobalAvgPool {
    pub fn new() -> Self {
        Self::default()
    }
}

impl<T: Real> Module<T> for GlobalAvgPool {
    fn forward(&mut self, x: &Tensor<T>, _mode: Mode) -> NnResult<Tensor<T>> {
        let (n, c, h, w) = x.nchw()?;
        let inv = T::one() / T::of((h * w) as f64);
        let data = x.data().chunks(h * w).map(|p| p.iter().copied().sum::<T>() * inv).collect();
        self.input_dims = Some(x.dims().to_vec());
        Tensor::from_vec(&[n, c], data)
    }

    fn backward(&mut self, grad: &Tensor<T>) -> NnResult<Tensor<T>> {
        let dims = self.input_dims.take().ok_or_else(|| state_err("global pool"))?;
        check_grad_dims("global pool", grad, &dims[..2])?;
        let hw = dims[2] * dims[3];
        let inv = T::one() / T::of(hw as f64);
        let mut dx = Tensor::zeros(&dims);
        for (p, chunk) in dx.data_mut().chunks_mut(hw).enumerate() {
            chunk.fill(grad.data()[p] * inv);
        }
        Ok(dx)
    }

    fn slots<'a>(&'a mut self, _prefix: &str, _out: &mut SlotList<'a, T>) {}
}

/// Fully connected layer on `N x in` inputs.
#[derive(Debug, Clone)]
pub struct Linear<T> {
    pub weight: Param<T>,
    pub bias: Param<T>,
    cache: Option<Tensor<T>>,
}

impl<T: Real> Linear<T> {
    pub fn new(input: usize, output: usize, rng: &mut impl Rng) -> Self {
        let bound = (6.0 / input as f64).sqrt();
        Self {
            weight: Param::new(Tensor::uniform(&[output, input], bound, rng)),
            bias: Param::new(Tensor::zeros(&[output])),
            cache: None,
        }
    }

    fn io(&self) -> (usize, usize) {
        (self.weight.value.dims()[1], self.weight.value.dims()[0])
    }
}

impl<T: Real> Module<T> for Linear<T> {
    fn forward(&mut self, x: &Tensor<T>, _mode: Mode) -> NnResult<Tensor<T>> {
        let (input, output) = self.io();
        if x.dims().len() != 2 || x.dims()[1] != input {
            return Err(NnError::Dim(format!("linear expects N x {input}, got {:?}", x.dims())));
        }
        let n = x.dims()[0];
        let mut y = Tensor::zeros(&[n, output]);
        for row in y.data_mut().chunks_mut(output) {
            row.copy_from_slice(self.bias.value.data());
        }
        T::gemm(n, input, output, T::one(), x.data(), false, self.weight.value.data(), true, T::one(), y.data_mut());
        self.cache = Some(x.clone());
        Ok(y)
    }

    fn backward(&mut self, grad: &Tensor<T>) -> NnResult<Tensor<T>> {
        let x = self.cache.take().ok_or_else(|| state_err("linear"))?;
        let (input, output) = self.io();
        let n = x.dims()[0];
        check_grad_dims("linear", grad, &[n, output])?;
        T::gemm(output, n, input, T::one(), grad.data(), true, x.data(), false, T::one(), &mut self.weight.grad);
        for row in grad.data().chunks(output) {
            for (b, &g) in self.bias.grad.iter_mut().zip(row) {
                *b += g;
            }
        }
        let mut dx = Tensor::zeros(&[n, input]);
        T::gemm(n, output, input, T::one(), grad.data(), false, self.weight.value.data(), false, T::zero(), dx.data_mut());
        Ok(dx)
    }

    fn slots<'a>(&'a mut self, prefix: &str, out: &mut SlotList<'a, T>) {
        out.push((join(prefix, "w"), Slot::Param(&mut self.weight)));
        out.push((join(prefix, "b"), Slot::Param(&mut self.bias)));
    }
}

/// `y = relu(bn2(conv2(relu(bn1(conv1(x))))) + skip(x))`, where the skip
/// path is a strided 1x1 projection or the identity.
#[derive(Debug, Clone)]
pub struct ResidualBlock<T> {
    pub conv1: Conv2d<T>,
    pub bn1: BatchNorm2d<T>,
    relu1: Relu,
    pub conv2: Conv2d<T>,
    pub bn2: BatchNorm2d<T>,
    pub proj: Option<Conv2d<T>>,
    relu_out: Relu,
}

impl<T: Real> ResidualBlock<T> {
    /// A projection is used whenever the shape changes, or when `project`
    /// asks for one.
    pub fn new(cin: usize, cout: usize, stride: usize, project: bool, rng: &mut impl Rng) -> Self {
        let needs = project || stride != 1 || cin != cout;
        Self {
            conv1: Conv2d::new(cin, cout, 3, stride, rng),
            bn1: BatchNorm2d::new(cout),
            relu1: Relu::new(),
            conv2: Conv2d::new(cout, cout, 3, 1, rng),
            bn2: BatchNorm2d::new(cout),
            proj: needs.then(|| Conv2d::new(cin, cout, 1, stride, rng)),
            relu_out: Relu::new(),
        }
    }
}

impl<T: Real> Module<T> for ResidualBlock<T> {
    fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> NnResult<Tensor<T>> {
        let a = self.conv1.forward(x, mode)?;
        let a = self.bn1.forward(&a, mode)?;
        let a = self.relu1.forward(&a, mode)?;
        let b = self.conv2.forward(&a, mode)?;
        let mut b = self.bn2.forward(&b, mode)?;
        let skip = match &mut self.proj {
            Some(p) => p.forward(x, mode)?,
            None => x.clone(),
        };
        if skip.dims() != b.dims() {
            return Err(NnError::Dim(format!("residual sum of {:?} and {:?}", b.dims(), skip.dims())));
        }
        for (v, &s) in b.data_mut().iter_mut().zip(skip.data()) {
            *v += s;
        }
        self.relu_out.forward(&b, mode)
    }

    fn backward(&mut self, grad: &Tensor<T>) -> NnResult<Tensor<T>> {
        let g = self.relu_out.backward(grad)?;
        let gb = self.bn2.backward(&g)?;
        let gb = self.conv2.backward(&gb)?;
        let ga = self.relu1.backward(&gb)?;
        let ga = self.bn1.backward(&ga)?;
        let mut dx = self.conv1.backward(&ga)?;
        let ds = match &mut self.proj {
            Some(p) => p.backward(&g)?,
            None => g,
        };
        for (v, &s) in dx.data_mut().iter_mut().zip(ds.data()) {
            *v += s;
        }
        Ok(dx)
    }

    fn slots<'a>(&'a mut self, prefix: &str, out: &mut SlotList<'a, T>) {
        self.conv1.slots(&join(prefix, "conv1"), out);
        self.bn1.slots(&join(prefix, "bn1"), out);
        self.conv2.slots(&join(prefix, "conv2"), out);
        self.bn2.slots(&join(prefix, "bn2"), out);
        if let Some(p) = &mut self.proj {
            p.slots(&join(prefix, "proj"), out);
        }
    }
}
