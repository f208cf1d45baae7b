//! Forward and backward kernels on raw tensors.
//!
//! Convolutions use `(kh, kw, in_per_group, out)` weights and cross-correlate.
//! Ungrouped convolutions run as strided gemm calls accumulated per kernel
//! tap, so no im2col buffer is ever materialized.

use serde::{Deserialize, Serialize};

use super::scalar::{gemm, MatRef};
use super::{Scalar, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Padding {
    /// Output size `ceil(in / stride)`; odd padding puts the extra cell on the
    /// bottom/right.
    Same,
    Valid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvSpec {
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub groups: usize,
    pub padding: Padding,
}

impl ConvSpec {
    pub fn new(kh: usize, kw: usize, stride: usize, groups: usize, padding: Padding) -> Self {
        Self {
            kh,
            kw,
            stride,
            groups,
            padding,
        }
    }

    pub fn pointwise() -> Self {
        Self::new(1, 1, 1, 1, Padding::Same)
    }

    pub fn check(&self, in_ch: usize, out_ch: usize) -> Result<()> {
        if self.kh == 0 || self.kw == 0 || self.stride == 0 || self.groups == 0 {
            return Err(Error::Config(format!("degenerate convolution {self:?}")));
        }
        if in_ch % self.groups != 0 || out_ch % self.groups != 0 {
            return Err(Error::Config(format!(
                "channels {in_ch}->{out_ch} are not divisible by {} groups",
                self.groups
            )));
        }
        Ok(())
    }

    pub fn weight_shape(&self, in_ch: usize, out_ch: usize) -> [usize; 4] {
        [self.kh, self.kw, in_ch / self.groups, out_ch]
    }

    /// Trainable element count including the bias.
    pub fn param_count(&self, in_ch: usize, out_ch: usize) -> usize {
        self.kh * self.kw * (in_ch / self.groups) * out_ch + out_ch
    }
}

/// Output extent and leading padding along one axis.
fn conv_axis(len: usize, k: usize, s: usize, padding: Padding) -> Result<(usize, usize)> {
    match padding {
        Padding::Same => {
            let out = len.div_ceil(s);
            let total = ((out - 1) * s + k).saturating_sub(len);
            Ok((out, total / 2))
        }
        Padding::Valid => {
            if len < k {
                return Err(Error::Shape(format!("input extent {len} < kernel {k}")));
            }
            Ok(((len - k) / s + 1, 0))
        }
    }
}

/// Range of output positions `o` for which `o * s + k - p` indexes into
/// `[0, len)`, clipped to `[0, out)`.
fn valid_range(k: usize, p: usize, s: usize, len: usize, out: usize) -> (usize, usize) {
    let (k, p, s) = (k as isize, p as isize, s as isize);
    let lo = if p > k { (p - k + s - 1) / s } else { 0 };
    let top = len as isize - 1 + p - k;
    if top < 0 {
        return (0, 0);
    }
    let hi = (top / s + 1).min(out as isize);
    (lo as usize, hi.max(lo) as usize)
}

fn bias_broadcast<T: Scalar>(shape: [usize; 4], bias: &Tensor<T>) -> Tensor<T> {
    let c = shape[3];
    let mut y = Tensor::zeros(shape);
    for chunk in y.data_mut().chunks_exact_mut(c) {
        chunk.copy_from_slice(bias.data());
    }
    y
}

fn channel_sums<T: Scalar>(t: &Tensor<T>) -> Tensor<T> {
    let c = t.c();
    let mut out = vec![T::zero(); c];
    for chunk in t.data().chunks_exact(c) {
        for (o, &v) in out.iter_mut().zip(chunk) {
            *o += v;
        }
    }
    Tensor::from_vec([1, 1, 1, c], out).expect("bias shape")
}

fn check_conv_args<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: &Tensor<T>,
    spec: &ConvSpec,
) -> Result<usize> {
    let cout = w.c();
    spec.check(x.c(), cout)?;
    if w.shape() != spec.weight_shape(x.c(), cout) {
        return Err(Error::Shape(format!(
            "kernel {:?} does not match {:?} on {} input channels",
            w.shape(),
            spec,
            x.c()
        )));
    }
    if b.len() != cout {
        return Err(Error::Shape(format!("bias has {} entries, need {cout}", b.len())));
    }
    Ok(cout)
}

pub struct ConvGeometry {
    pub ho: usize,
    pub wo: usize,
    pub pad_top: usize,
    pub pad_left: usize,
}

pub fn conv_geometry(h: usize, w: usize, spec: &ConvSpec) -> Result<ConvGeometry> {
    let (ho, pad_top) = conv_axis(h, spec.kh, spec.stride, spec.padding)?;
    let (wo, pad_left) = conv_axis(w, spec.kw, spec.stride, spec.padding)?;
    Ok(ConvGeometry {
        ho,
        wo,
        pad_top,
        pad_left,
    })
}

pub fn conv2d_forward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: &Tensor<T>,
    spec: &ConvSpec,
) -> Result<Tensor<T>> {
    let cout = check_conv_args(x, w, b, spec)?;
    let g = conv_geometry(x.h(), x.w(), spec)?;
    let [n, h, wi, cin] = x.shape();
    let mut y = bias_broadcast([n, g.ho, g.wo, cout], b);
    let s = spec.stride;

    if spec.groups > 1 {
        grouped_forward(x, w, &mut y, spec, &g);
        return Ok(y);
    }
    if spec.kh == 1 && spec.kw == 1 && s == 1 {
        let rows = n * h * wi;
        gemm(
            rows,
            cin,
            cout,
            T::one(),
            x.data(),
            MatRef::new(0, cin, 1),
            w.data(),
            MatRef::new(0, cout, 1),
            T::one(),
            y.data_mut(),
            MatRef::new(0, cout, 1),
        );
        return Ok(y);
    }
    for ki in 0..spec.kh {
        let (oi0, oi1) = valid_range(ki, g.pad_top, s, h, g.ho);
        for kj in 0..spec.kw {
            let (oj0, oj1) = valid_range(kj, g.pad_left, s, wi, g.wo);
            if oj1 == oj0 {
                continue;
            }
            let w_off = (ki * spec.kw + kj) * cin * cout;
            for bn in 0..n {
                for oi in oi0..oi1 {
                    let ii = oi * s + ki - g.pad_top;
                    let ij = oj0 * s + kj - g.pad_left;
                    let y_off = y.index(bn, oi, oj0, 0);
                    gemm(
                        oj1 - oj0,
                        cin,
                        cout,
                        T::one(),
                        x.data(),
                        MatRef::new(x.index(bn, ii, ij, 0), s * cin, 1),
                        w.data(),
                        MatRef::new(w_off, cout, 1),
                        T::one(),
                        y.data_mut(),
                        MatRef::new(y_off, cout, 1),
                    );
                }
            }
        }
    }
    Ok(y)
}

fn grouped_forward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    y: &mut Tensor<T>,
    spec: &ConvSpec,
    g: &ConvGeometry,
) {
    let [n, h, wi, cin] = x.shape();
    let cout = y.c();
    let (cin_g, cout_g) = (cin / spec.groups, cout / spec.groups);
    let s = spec.stride;
    let (xd, wd) = (x.data(), w.data());
    let ho_wo = (g.ho, g.wo);
    let yd = y.data_mut();
    for bn in 0..n {
        for ki in 0..spec.kh {
            let (oi0, oi1) = valid_range(ki, g.pad_top, s, h, ho_wo.0);
            for kj in 0..spec.kw {
                let (oj0, oj1) = valid_range(kj, g.pad_left, s, wi, ho_wo.1);
                let w_tap = &wd[(ki * spec.kw + kj) * cin_g * cout..][..cin_g * cout];
                for oi in oi0..oi1 {
                    let ii = oi * s + ki - g.pad_top;
                    for oj in oj0..oj1 {
                        let ij = oj * s + kj - g.pad_left;
                        let xp = &xd[((bn * h + ii) * wi + ij) * cin..][..cin];
                        let yp = &mut yd[((bn * ho_wo.0 + oi) * ho_wo.1 + oj) * cout..][..cout];
                        if cin_g == 1 && cout_g == 1 {
                            for ((yv, &xv), &wv) in yp.iter_mut().zip(xp).zip(w_tap) {
                                *yv += xv * wv;
                            }
                            continue;
                        }
                        for grp in 0..spec.groups {
                            for ci in 0..cin_g {
                                let xv = xp[grp * cin_g + ci];
                                let wrow = &w_tap[ci * cout + grp * cout_g..][..cout_g];
                                for (yv, &wv) in yp[grp * cout_g..][..cout_g].iter_mut().zip(wrow) {
                                    *yv += xv * wv;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Gradients of a convolution. `dx` is `None` when `need_dx` is false.
pub struct ConvGrads<T> {
    pub dx: Option<Tensor<T>>,
    pub dw: Tensor<T>,
    pub db: Tensor<T>,
}

pub fn conv2d_backward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    dy: &Tensor<T>,
    spec: &ConvSpec,
    need_dx: bool,
) -> Result<ConvGrads<T>> {
    let g = conv_geometry(x.h(), x.w(), spec)?;
    let [n, h, wi, cin] = x.shape();
    let cout = w.c();
    let s = spec.stride;
    let mut dw = Tensor::zeros(w.shape());
    let db = channel_sums(dy);
    let mut dx = need_dx.then(|| Tensor::zeros(x.shape()));

    if spec.groups > 1 {
        grouped_backward(x, w, dy, spec, &g, &mut dw, dx.as_mut());
        return Ok(ConvGrads { dx, dw, db });
    }
    if spec.kh == 1 && spec.kw == 1 && s == 1 {
        let rows = n * h * wi;
        // dW = X^T dY
        gemm(
            cin,
            rows,
            cout,
            T::one(),
            x.data(),
            MatRef::new(0, 1, cin),
            dy.data(),
            MatRef::new(0, cout, 1),
            T::zero(),
            dw.data_mut(),
            MatRef::new(0, cout, 1),
        );
        if let Some(dx) = dx.as_mut() {
            // dX = dY W^T
            gemm(
                rows,
                cout,
                cin,
                T::one(),
                dy.data(),
                MatRef::new(0, cout, 1),
                w.data(),
                MatRef::new(0, 1, cout),
                T::zero(),
                dx.data_mut(),
                MatRef::new(0, cin, 1),
            );
        }
        return Ok(ConvGrads { dx, dw, db });
    }
    for ki in 0..spec.kh {
        let (oi0, oi1) = valid_range(ki, g.pad_top, s, h, g.ho);
        for kj in 0..spec.kw {
            let (oj0, oj1) = valid_range(kj, g.pad_left, s, wi, g.wo);
            if oj1 == oj0 {
                continue;
            }
            let cnt = oj1 - oj0;
            let w_off = (ki * spec.kw + kj) * cin * cout;
            for bn in 0..n {
                for oi in oi0..oi1 {
                    let ii = oi * s + ki - g.pad_top;
                    let ij = oj0 * s + kj - g.pad_left;
                    let x_off = x.index(bn, ii, ij, 0);
                    let dy_off = dy.index(bn, oi, oj0, 0);
                    gemm(
                        cin,
                        cnt,
                        cout,
                        T::one(),
                        x.data(),
                        MatRef::new(x_off, 1, s * cin),
                        dy.data(),
                        MatRef::new(dy_off, cout, 1),
                        T::one(),
                        dw.data_mut(),
                        MatRef::new(w_off, cout, 1),
                    );
                    if let Some(dx) = dx.as_mut() {
                        gemm(
                            cnt,
                            cout,
                            cin,
                            T::one(),
                            dy.data(),
                            MatRef::new(dy_off, cout, 1),
                            w.data(),
                            MatRef::new(w_off, 1, cout),
                            T::one(),
                            dx.data_mut(),
                            MatRef::new(x_off, s * cin, 1),
                        );
                    }
                }
            }
        }
    }
    Ok(ConvGrads { dx, dw, db })
}

fn grouped_backward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    dy: &Tensor<T>,
    spec: &ConvSpec,
    g: &ConvGeometry,
    dw: &mut Tensor<T>,
    mut dx: Option<&mut Tensor<T>>,
) {
    let [n, h, wi, cin] = x.shape();
    let cout = w.c();
    let (cin_g, cout_g) = (cin / spec.groups, cout / spec.groups);
    let s = spec.stride;
    let (xd, wd, dyd) = (x.data(), w.data(), dy.data());
    for bn in 0..n {
        for ki in 0..spec.kh {
            let (oi0, oi1) = valid_range(ki, g.pad_top, s, h, g.ho);
            for kj in 0..spec.kw {
                let (oj0, oj1) = valid_range(kj, g.pad_left, s, wi, g.wo);
                let tap = (ki * spec.kw + kj) * cin_g * cout;
                for oi in oi0..oi1 {
                    let ii = oi * s + ki - g.pad_top;
                    for oj in oj0..oj1 {
                        let ij = oj * s + kj - g.pad_left;
                        let xo = ((bn * h + ii) * wi + ij) * cin;
                        let yo = ((bn * g.ho + oi) * g.wo + oj) * cout;
                        let dyp = &dyd[yo..yo + cout];
                        for grp in 0..spec.groups {
                            for ci in 0..cin_g {
                                let xv = xd[xo + grp * cin_g + ci];
                                let wrow = tap + ci * cout + grp * cout_g;
                                let dyg = &dyp[grp * cout_g..][..cout_g];
                                let dwr = &mut dw.data_mut()[wrow..wrow + cout_g];
                                let mut acc = T::zero();
                                for ((dwv, &d), &wv) in dwr.iter_mut().zip(dyg).zip(&wd[wrow..wrow + cout_g]) {
                                    *dwv += xv * d;
                                    acc += wv * d;
                                }
                                if let Some(dx) = dx.as_deref_mut() {
                                    dx.data_mut()[xo + grp * cin_g + ci] += acc;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Transposed-convolution geometry: output is `in * stride`, and a kernel
/// larger than the stride is cropped symmetrically (extra on the bottom/right).
fn deconv_crop(k: usize, s: usize) -> usize {
    k.saturating_sub(s) / 2
}

/// Upsampling by the adjoint of a strided convolution. Weights are
/// `(kh, kw, in, out)`; input pixel `(i, j)` contributes to output
/// `(i * stride + ki - crop, j * stride + kj - crop)`.
pub fn conv_transpose2d_forward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: &Tensor<T>,
    stride: usize,
) -> Result<Tensor<T>> {
    let [kh, kw, wcin, cout] = w.shape();
    let [n, h, wi, cin] = x.shape();
    if stride == 0 {
        return Err(Error::Config("transposed convolution stride must be >= 1".into()));
    }
    if wcin != cin || b.len() != cout {
        return Err(Error::Shape(format!(
            "transposed kernel {:?} / bias {} incompatible with {cin} input channels",
            w.shape(),
            b.len()
        )));
    }
    let (ho, wo) = (h * stride, wi * stride);
    let (ct, cl) = (deconv_crop(kh, stride), deconv_crop(kw, stride));
    let mut y = bias_broadcast([n, ho, wo, cout], b);
    for ki in 0..kh {
        let (i0, i1) = valid_range(ki, ct, stride, ho, h);
        for kj in 0..kw {
            let (j0, j1) = valid_range(kj, cl, stride, wo, wi);
            if j1 == j0 {
                continue;
            }
            let w_off = (ki * kw + kj) * cin * cout;
            for bn in 0..n {
                for i in i0..i1 {
                    let oi = i * stride + ki - ct;
                    let oj = j0 * stride + kj - cl;
                    let y_off = y.index(bn, oi, oj, 0);
                    gemm(
                        j1 - j0,
                        cin,
                        cout,
                        T::one(),
                        x.data(),
                        MatRef::new(x.index(bn, i, j0, 0), cin, 1),
                        w.data(),
                        MatRef::new(w_off, cout, 1),
                        T::one(),
                        y.data_mut(),
                        MatRef::new(y_off, stride * cout, 1),
                    );
                }
            }
        }
    }
    Ok(y)
}

pub fn conv_transpose2d_backward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    dy: &Tensor<T>,
    stride: usize,
    need_dx: bool,
) -> ConvGrads<T> {
    let [kh, kw, cin, cout] = w.shape();
    let [n, h, wi, _] = x.shape();
    let (ho, wo) = (h * stride, wi * stride);
    let (ct, cl) = (deconv_crop(kh, stride), deconv_crop(kw, stride));
    let mut dw = Tensor::zeros(w.shape());
    let mut dx = need_dx.then(|| Tensor::zeros(x.shape()));
    for ki in 0..kh {
        let (i0, i1) = valid_range(ki, ct, stride, ho, h);
        for kj in 0..kw {
            let (j0, j1) = valid_range(kj, cl, stride, wo, wi);
            if j1 == j0 {
                continue;
            }
            let cnt = j1 - j0;
            let w_off = (ki * kw + kj) * cin * cout;
            for bn in 0..n {
                for i in i0..i1 {
                    let oi = i * stride + ki - ct;
                    let oj = j0 * stride + kj - cl;
                    let x_off = x.index(bn, i, j0, 0);
                    let dy_off = dy.index(bn, oi, oj, 0);
                    gemm(
                        cin,
                        cnt,
                        cout,
                        T::one(),
                        x.data(),
                        MatRef::new(x_off, 1, cin),
                        dy.data(),
                        MatRef::new(dy_off, stride * cout, 1),
                        T::one(),
                        dw.data_mut(),
                        MatRef::new(w_off, cout, 1),
                    );
                    if let Some(dx) = dx.as_mut() {
                        gemm(
                            cnt,
                            cout,
                            cin,
                            T::one(),
                            dy.data(),
                            MatRef::new(dy_off, stride * cout, 1),
                            w.data(),
                            MatRef::new(w_off, 1, cout),
                            T::one(),
                            dx.data_mut(),
                            MatRef::new(x_off, cin, 1),
                        );
                    }
                }
            }
        }
    }
    ConvGrads {
        dx,
        dw,
        db: channel_sums(dy),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PoolMode {
    Max,
    Avg,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PoolSpec {
    pub window: usize,
    pub stride: usize,
    pub mode: PoolMode,
}

impl PoolSpec {
    pub fn new(window: usize, stride: usize, mode: PoolMode) -> Self {
        Self {
            window,
            stride,
            mode,
        }
    }

    /// The 2x2, stride-2 reduction used throughout the network.
    pub fn halve(mode: PoolMode) -> Self {
        Self::new(2, 2, mode)
    }
}

/// Per-output source cells for max pooling (flat input index).
pub type PoolCache = Vec<u32>;

/// 'Same'-style pooling: output `ceil(in / stride)`; edge windows reduce over
/// their in-bounds cells only.
pub fn pool2d_forward<T: Scalar>(x: &Tensor<T>, spec: &PoolSpec) -> Result<(Tensor<T>, PoolCache)> {
    if spec.window == 0 || spec.stride == 0 {
        return Err(Error::Config(format!("degenerate pooling {spec:?}")));
    }
    let [n, h, w, c] = x.shape();
    let (ho, pt) = conv_axis(h, spec.window, spec.stride, Padding::Same)?;
    let (wo, pl) = conv_axis(w, spec.window, spec.stride, Padding::Same)?;
    let mut y = Tensor::zeros([n, ho, wo, c]);
    let mut arg = Vec::new();
    if spec.mode == PoolMode::Max {
        arg = vec![0u32; n * ho * wo * c];
    }
    let xd = x.data();
    for bn in 0..n {
        for oi in 0..ho {
            let r0 = (oi * spec.stride).saturating_sub(pt);
            let r1 = (oi * spec.stride + spec.window - pt).min(h);
            for oj in 0..wo {
                let c0 = (oj * spec.stride).saturating_sub(pl);
                let c1 = (oj * spec.stride + spec.window - pl).min(w);
                let yo = y.index(bn, oi, oj, 0);
                match spec.mode {
                    PoolMode::Max => {
                        let yd = y.data_mut();
                        let first = ((bn * h + r0) * w + c0) * c;
                        yd[yo..yo + c].copy_from_slice(&xd[first..first + c]);
                        for ch in 0..c {
                            arg[yo + ch] = (first + ch) as u32;
                        }
                        for i in r0..r1 {
                            for j in c0..c1 {
                                let xo = ((bn * h + i) * w + j) * c;
                                for ch in 0..c {
                                    if xd[xo + ch] > yd[yo + ch] {
                                        yd[yo + ch] = xd[xo + ch];
                                        arg[yo + ch] = (xo + ch) as u32;
                                    }
                                }
                            }
                        }
                    }
                    PoolMode::Avg => {
                        let count = T::from_usize((r1 - r0) * (c1 - c0)).expect("count");
                        let yd = y.data_mut();
                        for i in r0..r1 {
                            for j in c0..c1 {
                                let xo = ((bn * h + i) * w + j) * c;
                                for ch in 0..c {
                                    yd[yo + ch] += xd[xo + ch];
                                }
                            }
                        }
                        for v in &mut yd[yo..yo + c] {
                            *v = *v / count;
                        }
                    }
                }
            }
        }
    }
    Ok((y, arg))
}

pub fn pool2d_backward<T: Scalar>(
    x_shape: [usize; 4],
    dy: &Tensor<T>,
    spec: &PoolSpec,
    cache: &PoolCache,
) -> Tensor<T> {
    let mut dx = Tensor::zeros(x_shape);
    match spec.mode {
        PoolMode::Max => {
            let dxd = dx.data_mut();
            for (&src, &g) in cache.iter().zip(dy.data()) {
                dxd[src as usize] += g;
            }
        }
        PoolMode::Avg => {
            let [n, h, w, c] = x_shape;
            let [_, ho, wo, _] = dy.shape();
            let pt = (((ho - 1) * spec.stride + spec.window).saturating_sub(h)) / 2;
            let pl = (((wo - 1) * spec.stride + spec.window).saturating_sub(w)) / 2;
            let dxd = dx.data_mut();
            for bn in 0..n {
                for oi in 0..ho {
                    let r0 = (oi * spec.stride).saturating_sub(pt);
                    let r1 = (oi * spec.stride + spec.window - pt).min(h);
                    for oj in 0..wo {
                        let c0 = (oj * spec.stride).saturating_sub(pl);
                        let c1 = (oj * spec.stride + spec.window - pl).min(w);
                        let count = T::from_usize((r1 - r0) * (c1 - c0)).expect("count");
                        let yo = dy.index(bn, oi, oj, 0);
                        for i in r0..r1 {
                            for j in c0..c1 {
                                let xo = ((bn * h + i) * w + j) * c;
                                for ch in 0..c {
                                    dxd[xo + ch] += dy.data()[yo + ch] / count;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    dx
}
