//! Layers with explicit forward and backward passes.
//!
//! A layer's forward is a pure function of its parameters and input; anything
//! the backward pass needs beyond the input is returned as `aux` arrays and
//! handed back by [`Sequential`](super::Sequential).

use std::sync::Arc;

use ndarray::{Array2, ArrayD, Axis, Ix2, IxDyn};

use super::{Csr, Scalar};
use crate::rng::{Rng, RngExt};

#[derive(Debug, Clone)]
pub struct Param<F> {
    pub value: ArrayD<F>,
    pub grad: ArrayD<F>,
}

impl<F: Scalar> Param<F> {
    pub fn new(value: ArrayD<F>) -> Self {
        let grad = ArrayD::zeros(value.raw_dim());
        Self { value, grad }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::new(ArrayD::zeros(IxDyn(shape)))
    }

    /// Glorot-uniform initialisation.
    pub fn glorot(shape: &[usize], fan_in: usize, fan_out: usize, rng: &mut Rng) -> Self {
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let n: usize = shape.iter().product();
        let data: Vec<F> = (0..n)
            .map(|_| F::c(rng.random_range(-bound..bound)))
            .collect();
        Self::new(ArrayD::from_shape_vec(IxDyn(shape), data).expect("shape"))
    }
}

/// Visitor over the named parameters of a network.
pub trait Module<F: Scalar> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<F>));
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<F>));

    fn zero_grad(&mut self) {
        self.visit_mut("", &mut |_, p| p.grad.fill(F::zero()));
    }

    fn num_params(&self) -> usize {
        let mut n = 0;
        self.visit("", &mut |_, p| n += p.value.len());
        n
    }

    /// Set every weight to zero (used by fixtures that isolate biases).
    fn zero_weights(&mut self) {
        self.visit_mut("", &mut |_, p| p.value.fill(F::zero()));
    }
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

/// Forward-pass context: training flag plus the stream used by dropout.
pub struct Ctx<'a> {
    pub train: bool,
    pub rng: Option<&'a mut Rng>,
}

impl Ctx<'_> {
    pub fn eval() -> Ctx<'static> {
        Ctx {
            train: false,
            rng: None,
        }
    }
}

impl<'a> Ctx<'a> {
    pub fn train(rng: &'a mut Rng) -> Ctx<'a> {
        Ctx {
            train: true,
            rng: Some(rng),
        }
    }
}

/// (B, V, C) -> contiguous (V, B*C).
fn vertex_major<F: Scalar>(x: &ArrayD<F>) -> Array2<F> {
    let (bsz, v, c) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let mut out = Array2::<F>::zeros((v, bsz * c));
    for b in 0..bsz {
        out.slice_mut(ndarray::s![.., b * c..(b + 1) * c])
            .assign(&x.index_axis(Axis(0), b));
    }
    out
}

/// (V, B*C) or (V*B, C) -> (B, V, C).
fn batch_major<F: Scalar>(y: Array2<F>, v: usize, bsz: usize) -> ArrayD<F> {
    let c = y.len() / (v * bsz).max(1);
    let y = y.into_shape_with_order((v, bsz, c)).unwrap();
    y.permuted_axes([1, 0, 2]).as_standard_layout().into_owned().into_dyn()
}

fn as2<F: Scalar>(x: &ArrayD<F>) -> ndarray::ArrayView2<'_, F> {
    x.view().into_dimensionality::<Ix2>().expect("rank-2 tensor")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Elu,
    Tanh,
}

impl Activation {
    pub fn apply<F: Scalar>(self, x: &ArrayD<F>) -> ArrayD<F> {
        match self {
            Activation::Relu => x.mapv(|v| if v > F::zero() { v } else { F::zero() }),
            Activation::Elu => x.mapv(|v| if v > F::zero() { v } else { v.exp_m1() }),
            Activation::Tanh => x.mapv(F::act_tanh),
        }
    }

    /// Gradient given input `x`, output `y` and upstream gradient `gy`.
    pub fn backward<F: Scalar>(self, x: &ArrayD<F>, y: &ArrayD<F>, mut gy: ArrayD<F>) -> ArrayD<F> {
        match self {
            Activation::Relu => ndarray::Zip::from(&mut gy).and(x).for_each(|g, &v| {
                if v <= F::zero() {
                    *g = F::zero()
                }
            }),
            Activation::Elu => ndarray::Zip::from(&mut gy).and(x).and(y).for_each(|g, &v, &o| {
                if v <= F::zero() {
                    *g *= o + F::one()
                }
            }),
            Activation::Tanh => {
                ndarray::Zip::from(&mut gy).and(y).for_each(|g, &o| *g *= F::one() - o * o)
            }
        }
        gy
    }
}

/// Fully connected layer, `y = x W + b` with `W` stored in×out.
#[derive(Debug, Clone)]
pub struct Linear<F> {
    pub w: Param<F>,
    pub b: Param<F>,
}

impl<F: Scalar> Linear<F> {
    pub fn new(input: usize, output: usize, rng: &mut Rng) -> Self {
        Self {
            w: Param::glorot(&[input, output], input, output, rng),
            b: Param::zeros(&[output]),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.w.value.shape()[0]
    }

    pub fn out_dim(&self) -> usize {
        self.w.value.shape()[1]
    }

    pub fn forward(&self, x: &ArrayD<F>) -> ArrayD<F> {
        let w = as2(&self.w.value);
        let b = self.b.value.view().into_dimensionality::<ndarray::Ix1>().unwrap();
        let y = as2(x).dot(&w) + b;
        y.into_dyn()
    }

    pub fn backward(&mut self, x: &ArrayD<F>, gy: &ArrayD<F>) -> ArrayD<F> {
        let x2 = as2(x);
        let g2 = as2(gy);
        {
            let mut gw = self.w.grad.view_mut().into_dimensionality::<Ix2>().unwrap();
            ndarray::linalg::general_mat_mul(F::one(), &x2.t(), &g2, F::one(), &mut gw);
        }
        self.b.grad += &g2.sum_axis(Axis(0)).into_dyn();
        g2.dot(&as2(&self.w.value).t()).into_dyn()
    }

    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<F>)) {
        f(&join(prefix, "w"), &self.w);
        f(&join(prefix, "b"), &self.b);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<F>)) {
        f(&join(prefix, "w"), &mut self.w);
        f(&join(prefix, "b"), &mut self.b);
    }
}

/// Chebyshev spectral graph convolution over a fixed scaled Laplacian.
///
/// Input and output are laid out (batch, vertices, channels). Weights are
/// stored as (K * Cin, Cout), block `k` multiplying `T_k(L) X`.
#[derive(Debug, Clone)]
pub struct ChebConv<F> {
    pub order: usize,
    pub w: Param<F>,
    pub b: Param<F>,
    pub lap: Arc<Csr<F>>,
    pub lap_t: Arc<Csr<F>>,
}

impl<F: Scalar> ChebConv<F> {
    pub fn new(lap: Arc<Csr<F>>, order: usize, cin: usize, cout: usize, rng: &mut Rng) -> Self {
        assert!(order >= 1, "Chebyshev order must be at least 1");
        let lap_t = Arc::new(lap.transpose());
        Self {
            order,
            w: Param::glorot(&[order * cin, cout], order * cin, cout, rng),
            b: Param::zeros(&[cout]),
            lap,
            lap_t,
        }
    }

    pub fn cin(&self) -> usize {
        self.w.value.shape()[0] / self.order
    }

    pub fn cout(&self) -> usize {
        self.w.value.shape()[1]
    }

    /// Chebyshev terms `T_k(L̃) X`, each laid out vertex-major (V, B*Cin).
    pub fn terms(&self, x: &ArrayD<F>) -> Vec<Array2<F>> {
        let (v, cin) = (x.shape()[1], x.shape()[2]);
        assert_eq!(v, self.lap.rows, "vertex count does not match Laplacian");
        assert_eq!(cin, self.cin(), "input channels do not match weights");
        let k = self.order;
        let mut terms = Vec::with_capacity(k);
        terms.push(vertex_major(x));
        if k > 1 {
            terms.push(self.lap.matmul(terms[0].view()));
        }
        let two = F::c(2.0);
        for j in 2..k {
            let mut next = terms[j - 2].mapv(|e| -e);
            self.lap.matmul_acc(two, terms[j - 1].view(), next.view_mut());
            terms.push(next);
        }
        terms
    }

    fn weight_block(&self, j: usize) -> ndarray::ArrayView2<'_, F> {
        let cin = self.cin();
        as2(&self.w.value).slice_move(ndarray::s![j * cin..(j + 1) * cin, ..])
    }

    pub fn forward(&self, x: &ArrayD<F>) -> (ArrayD<F>, Vec<ArrayD<F>>) {
        let (bsz, v, cin) = (x.shape()[0], x.shape()[1], x.shape()[2]);
        let terms = self.terms(x);
        let b = self.b.value.view().into_dimensionality::<ndarray::Ix1>().unwrap();
        let mut y = Array2::<F>::zeros((v * bsz, self.cout()));
        y += &b;
        for (j, t) in terms.iter().enumerate() {
            let t2 = t.view().into_shape_with_order((v * bsz, cin)).unwrap();
            ndarray::linalg::general_mat_mul(F::one(), &t2, &self.weight_block(j), F::one(), &mut y);
        }
        let y = batch_major(y, v, bsz);
        (y, terms.into_iter().map(|t| t.into_dyn()).collect())
    }

    pub fn backward(&mut self, x: &ArrayD<F>, aux: &[ArrayD<F>], gy: &ArrayD<F>) -> ArrayD<F> {
        let (bsz, v, cin) = (x.shape()[0], x.shape()[1], x.shape()[2]);
        let k = self.order;
        let cout = self.cout();
        let g2 = vertex_major(gy).into_shape_with_order((v * bsz, cout)).unwrap();
        {
            let mut gw = self.w.grad.view_mut().into_dimensionality::<Ix2>().unwrap();
            for (j, t) in aux.iter().enumerate() {
                let t2 = t.view().into_shape_with_order((v * bsz, cin)).unwrap();
                let mut blk = gw.slice_mut(ndarray::s![j * cin..(j + 1) * cin, ..]);
                ndarray::linalg::general_mat_mul(F::one(), &t2.t(), &g2, F::one(), &mut blk);
            }
        }
        self.b.grad += &g2.sum_axis(Axis(0)).into_dyn();
        let mut gs: Vec<Array2<F>> = (0..k)
            .map(|j| {
                g2.dot(&self.weight_block(j).t())
                    .into_shape_with_order((v, bsz * cin))
                    .unwrap()
            })
            .collect();
        let two = F::c(2.0);
        for j in (2..k).rev() {
            let (lo, hi) = gs.split_at_mut(j);
            self.lap_t.matmul_acc(two, hi[0].view(), lo[j - 1].view_mut());
            lo[j - 2] -= &hi[0];
        }
        if k > 1 {
            let (lo, hi) = gs.split_at_mut(1);
            self.lap_t.matmul_acc(F::one(), hi[0].view(), lo[0].view_mut());
        }
        let g0 = gs.swap_remove(0);
        batch_major(g0, v, bsz)
    }

    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<F>)) {
        f(&join(prefix, "w"), &self.w);
        f(&join(prefix, "b"), &self.b);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<F>)) {
        f(&join(prefix, "w"), &mut self.w);
        f(&join(prefix, "b"), &mut self.b);
    }
}

/// Fixed linear vertex map (mesh down/upsampling), (B,V,C) -> (B,V',C).
#[derive(Debug, Clone)]
pub struct VertexMap<F> {
    pub m: Arc<Csr<F>>,
    pub mt: Arc<Csr<F>>,
}

impl<F: Scalar> VertexMap<F> {
    pub fn new(m: Arc<Csr<F>>) -> Self {
        let mt = Arc::new(m.transpose());
        Self { m, mt }
    }

    fn apply(m: &Csr<F>, x: &ArrayD<F>) -> ArrayD<F> {
        let (bsz, v) = (x.shape()[0], x.shape()[1]);
        assert_eq!(v, m.cols, "vertex count does not match sampling matrix");
        batch_major(m.matmul(vertex_major(x).view()), m.rows, bsz)
    }

    pub fn forward(&self, x: &ArrayD<F>) -> ArrayD<F> {
        Self::apply(&self.m, x)
    }

    pub fn backward(&self, gy: &ArrayD<F>) -> ArrayD<F> {
        Self::apply(&self.mt, gy)
    }
}

/// 2-D convolution over (B, C, H, W) tensors, lowered to a single GEMM.
#[derive(Debug, Clone)]
pub struct Conv2d<F> {
    pub w: Param<F>,
    pub b: Param<F>,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

struct ConvGeom {
    b: usize,
    c: usize,
    h: usize,
    w: usize,
    ho: usize,
    wo: usize,
    k: usize,
    stride: usize,
    pad: usize,
}

impl<F: Scalar> Conv2d<F> {
    pub fn new(cin: usize, cout: usize, kernel: usize, stride: usize, pad: usize, rng: &mut Rng) -> Self {
        let fan_in = cin * kernel * kernel;
        let fan_out = cout * kernel * kernel;
        Self {
            w: Param::glorot(&[cout, fan_in], fan_in, fan_out, rng),
            b: Param::zeros(&[cout]),
            kernel,
            stride,
            pad,
        }
    }

    pub fn cout(&self) -> usize {
        self.w.value.shape()[0]
    }

    pub fn cin(&self) -> usize {
        self.w.value.shape()[1] / (self.kernel * self.kernel)
    }

    fn geom(&self, x: &ArrayD<F>) -> ConvGeom {
        let s = x.shape();
        assert_eq!(s.len(), 4, "conv input must be (B,C,H,W)");
        assert_eq!(s[1], self.cin(), "conv input channels");
        let ho = (s[2] + 2 * self.pad - self.kernel) / self.stride + 1;
        let wo = (s[3] + 2 * self.pad - self.kernel) / self.stride + 1;
        ConvGeom {
            b: s[0],
            c: s[1],
            h: s[2],
            w: s[3],
            ho,
            wo,
            k: self.kernel,
            stride: self.stride,
            pad: self.pad,
        }
    }

    // Convolutions run one image at a time so the patch matrix stays in cache.
    pub fn forward(&self, x: &ArrayD<F>) -> ArrayD<F> {
        let g = self.geom(x);
        let x = x.as_standard_layout();
        let xs = x.as_slice().unwrap();
        let cout = self.cout();
        let hw = g.ho * g.wo;
        let w = as2(&self.w.value);
        let bias = self.b.value.as_slice().unwrap();
        let mut y = ArrayD::<F>::zeros(IxDyn(&[g.b, cout, g.ho, g.wo]));
        let mut cols = Array2::<F>::zeros((w.ncols(), hw));
        let plane = g.c * g.h * g.w;
        for (b, mut yb) in y.axis_iter_mut(Axis(0)).enumerate() {
            im2col(&xs[b * plane..(b + 1) * plane], &g, &mut cols);
            let mut y2 = yb.view_mut().into_shape_with_order((cout, hw)).unwrap();
            for (mut row, &bv) in y2.rows_mut().into_iter().zip(bias) {
                row.fill(bv);
            }
            ndarray::linalg::general_mat_mul(F::one(), &w, &cols, F::one(), &mut y2);
        }
        y
    }

    pub fn backward(&mut self, x: &ArrayD<F>, gy: &ArrayD<F>) -> ArrayD<F> {
        let g = self.geom(x);
        let x = x.as_standard_layout();
        let xs = x.as_slice().unwrap();
        let gy = gy.as_standard_layout();
        let cout = self.cout();
        let hw = g.ho * g.wo;
        let plane = g.c * g.h * g.w;
        let mut gx = ArrayD::<F>::zeros(IxDyn(&[g.b, g.c, g.h, g.w]));
        let mut cols = Array2::<F>::zeros((self.w.value.shape()[1], hw));
        let mut gcols = cols.clone();
        let w = self.w.value.clone();
        let w = as2(&w);
        let mut gw = self.w.grad.view_mut().into_dimensionality::<Ix2>().unwrap();
        let mut gb = self.b.grad.view_mut().into_dimensionality::<ndarray::Ix1>().unwrap();
        let gxs = gx.as_slice_mut().unwrap();
        for (b, gyb) in gy.axis_iter(Axis(0)).enumerate() {
            let g2 = gyb.into_shape_with_order((cout, hw)).unwrap();
            im2col(&xs[b * plane..(b + 1) * plane], &g, &mut cols);
            ndarray::linalg::general_mat_mul(F::one(), &g2, &cols.t(), F::one(), &mut gw);
            gb += &g2.sum_axis(Axis(1));
            ndarray::linalg::general_mat_mul(F::one(), &w.t(), &g2, F::zero(), &mut gcols);
            col2im(&gcols, &g, &mut gxs[b * plane..(b + 1) * plane]);
        }
        gx
    }

    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<F>)) {
        f(&join(prefix, "w"), &self.w);
        f(&join(prefix, "b"), &self.b);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<F>)) {
        f(&join(prefix, "w"), &mut self.w);
        f(&join(prefix, "b"), &mut self.b);
    }
}

/// Patch matrix (C·k·k, Ho·Wo) of one image, written into `cols`.
fn im2col<F: Scalar>(plane: &[F], g: &ConvGeom, cols: &mut Array2<F>) {
    let k = g.k;
    let hw = g.ho * g.wo;
    cols.fill(F::zero());
    let cs = cols.as_slice_mut().unwrap();
    for c in 0..g.c {
        let src_c = &plane[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let dst = &mut cs[row * hw..(row + 1) * hw];
                for oy in 0..g.ho {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let src = &src_c[iy as usize * g.w..(iy as usize + 1) * g.w];
                    let out = &mut dst[oy * g.wo..(oy + 1) * g.wo];
                    for (ox, o) in out.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.w as isize {
                            *o = src[ix as usize];
                        }
                    }
                }
            }
        }
    }
}

/// Scatter-add a patch-gradient matrix back onto one image plane.
fn col2im<F: Scalar>(cols: &Array2<F>, g: &ConvGeom, plane: &mut [F]) {
    let k = g.k;
    let hw = g.ho * g.wo;
    let cs = cols.as_slice().expect("contiguous cols");
    for c in 0..g.c {
        let dst_c = &mut plane[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let src = &cs[row * hw..(row + 1) * hw];
                for oy in 0..g.ho {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst = &mut dst_c[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (ox, v) in src[oy * g.wo..(oy + 1) * g.wo].iter().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.w as isize {
                            dst[ix as usize] += *v;
                        }
                    }
                }
            }
        }
    }
}

/// Nearest-neighbour upsampling of (B, C, H, W) by an integer factor.
pub fn upsample_nearest<F: Scalar>(x: &ArrayD<F>, factor: usize) -> ArrayD<F> {
    let s = x.shape();
    let (b, c, h, w) = (s[0], s[1], s[2], s[3]);
    let mut y = ArrayD::<F>::zeros(IxDyn(&[b, c, h * factor, w * factor]));
    let x = x.as_standard_layout();
    let xs = x.as_slice().unwrap();
    let ys = y.as_slice_mut().unwrap();
    let (ho, wo) = (h * factor, w * factor);
    for p in 0..b * c {
        for i in 0..ho {
            for j in 0..wo {
                ys[p * ho * wo + i * wo + j] = xs[p * h * w + (i / factor) * w + j / factor];
            }
        }
    }
    y
}

pub fn upsample_nearest_backward<F: Scalar>(gy: &ArrayD<F>, factor: usize) -> ArrayD<F> {
    let s = gy.shape();
    let (b, c, ho, wo) = (s[0], s[1], s[2], s[3]);
    let (h, w) = (ho / factor, wo / factor);
    let mut gx = ArrayD::<F>::zeros(IxDyn(&[b, c, h, w]));
    let gys = gy.as_standard_layout();
    let gs = gys.as_slice().unwrap();
    let xs = gx.as_slice_mut().unwrap();
    for p in 0..b * c {
        for i in 0..ho {
            for j in 0..wo {
                xs[p * h * w + (i / factor) * w + j / factor] += gs[p * ho * wo + i * wo + j];
            }
        }
    }
    gx
}

/// Pre-activation residual block: two 3x3 convolutions with tanh before
/// each, plus a 1x1 projection on the skip path when channel counts differ.
#[derive(Debug, Clone)]
pub struct ResBlock<F> {
    pub conv1: Conv2d<F>,
    pub conv2: Conv2d<F>,
    pub skip: Option<Conv2d<F>>,
}

impl<F: Scalar> ResBlock<F> {
    pub fn new(cin: usize, cout: usize, rng: &mut Rng) -> Self {
        Self {
            conv1: Conv2d::new(cin, cout, 3, 1, 1, rng),
            conv2: Conv2d::new(cout, cout, 3, 1, 1, rng),
            skip: (cin != cout).then(|| Conv2d::new(cin, cout, 1, 1, 0, rng)),
        }
    }

    pub fn forward(&self, x: &ArrayD<F>) -> (ArrayD<F>, Vec<ArrayD<F>>) {
        let a1 = x.mapv(F::act_tanh);
        let h1 = self.conv1.forward(&a1);
        let a2 = h1.mapv(F::act_tanh);
        let mut y = self.conv2.forward(&a2);
        match &self.skip {
            Some(s) => y += &s.forward(x),
            None => y += x,
        }
        (y, vec![a1, a2])
    }

    pub fn backward(&mut self, x: &ArrayD<F>, aux: &[ArrayD<F>], gy: &ArrayD<F>) -> ArrayD<F> {
        let (a1, a2) = (&aux[0], &aux[1]);
        let ga2 = self.conv2.backward(a2, gy);
        let gh1 = Activation::Tanh.backward(a2, a2, ga2);
        let ga1 = self.conv1.backward(a1, &gh1);
        let mut gx = Activation::Tanh.backward(a1, a1, ga1);
        match &mut self.skip {
            Some(s) => gx += &s.backward(x, gy),
            None => gx += gy,
        }
        gx
    }

    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<F>)) {
        self.conv1.visit(&join(prefix, "conv1"), f);
        self.conv2.visit(&join(prefix, "conv2"), f);
        if let Some(s) = &self.skip {
            s.visit(&join(prefix, "skip"), f);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<F>)) {
        self.conv1.visit_mut(&join(prefix, "conv1"), f);
        self.conv2.visit_mut(&join(prefix, "conv2"), f);
        if let Some(s) = &mut self.skip {
            s.visit_mut(&join(prefix, "skip"), f);
        }
    }
}

/// One step of a [`Sequential`](super::Sequential) network.
#[derive(Debug, Clone)]
pub enum Layer<F> {
    Linear(Linear<F>),
    Act(Activation),
    Dropout(f64),
    Cheb(ChebConv<F>),
    Map(VertexMap<F>),
    Conv(Conv2d<F>),
    Res(ResBlock<F>),
    Upsample(usize),
    /// Flatten everything but the batch axis.
    Flatten,
    /// Reshape the non-batch axes.
    Reshape(Vec<usize>),
}

impl<F: Scalar> Layer<F> {
    pub fn forward(&self, x: &ArrayD<F>, ctx: &mut Ctx<'_>) -> (ArrayD<F>, Vec<ArrayD<F>>) {
        match self {
            Layer::Linear(l) => (l.forward(x), vec![]),
            Layer::Act(a) => {
                let y = a.apply(x);
                (y.clone(), vec![y])
            }
            Layer::Dropout(p) => {
                if !ctx.train || *p <= 0.0 {
                    return (x.clone(), vec![]);
                }
                let rng = ctx.rng.as_deref_mut().expect("dropout in training needs a stream");
                let keep = F::c(1.0 / (1.0 - p));
                let mask = x.mapv(|_| if rng.random::<f64>() < *p { F::zero() } else { keep });
                (x * &mask, vec![mask])
            }
            Layer::Cheb(c) => c.forward(x),
            Layer::Map(m) => (m.forward(x), vec![]),
            Layer::Conv(c) => (c.forward(x), vec![]),
            Layer::Res(r) => r.forward(x),
            Layer::Upsample(f) => (upsample_nearest(x, *f), vec![]),
            Layer::Flatten => {
                let b = x.shape()[0];
                let n = x.len() / b.max(1);
                let y = x
                    .as_standard_layout()
                    .into_owned()
                    .into_shape_with_order(IxDyn(&[b, n]))
                    .unwrap();
                (y, vec![])
            }
            Layer::Reshape(shape) => {
                let mut full = vec![x.shape()[0]];
                full.extend_from_slice(shape);
                let y = x
                    .as_standard_layout()
                    .into_owned()
                    .into_shape_with_order(IxDyn(&full))
                    .unwrap();
                (y, vec![])
            }
        }
    }

    pub fn backward(&mut self, x: &ArrayD<F>, aux: &[ArrayD<F>], gy: ArrayD<F>) -> ArrayD<F> {
        match self {
            Layer::Linear(l) => l.backward(x, &gy),
            Layer::Act(a) => a.backward(x, &aux[0], gy),
            Layer::Dropout(_) => match aux.first() {
                Some(mask) => gy * mask,
                None => gy,
            },
            Layer::Cheb(c) => c.backward(x, aux, &gy),
            Layer::Map(m) => m.backward(&gy),
            Layer::Conv(c) => c.backward(x, &gy),
            Layer::Res(r) => r.backward(x, aux, &gy),
            Layer::Upsample(f) => upsample_nearest_backward(&gy, *f),
            Layer::Flatten | Layer::Reshape(_) => gy
                .as_standard_layout()
                .into_owned()
                .into_shape_with_order(x.raw_dim())
                .unwrap(),
        }
    }

    pub fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<F>)) {
        match self {
            Layer::Linear(l) => l.visit(prefix, f),
            Layer::Cheb(c) => c.visit(prefix, f),
            Layer::Conv(c) => c.visit(prefix, f),
            Layer::Res(r) => r.visit(prefix, f),
            _ => {}
        }
    }

    pub fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<F>)) {
        match self {
            Layer::Linear(l) => l.visit_mut(prefix, f),
            Layer::Cheb(c) => c.visit_mut(prefix, f),
            Layer::Conv(c) => c.visit_mut(prefix, f),
            Layer::Res(r) => r.visit_mut(prefix, f),
            _ => {}
        }
    }
}
