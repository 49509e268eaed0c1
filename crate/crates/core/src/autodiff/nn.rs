//! Neural-network ops: convolutions, pooling, resizing, normalization and
//! the two feature-wise affine modulations used by the networks.

use super::Var;
use crate::error::{Error, Result};
use crate::kernels::{col2im, gemm, im2col, ConvGeom, Mat};
use crate::tensor::{check_axis, split_at_axis, Real, Tensor};

fn expect_rank(op: &'static str, what: &str, shape: &[usize], rank: usize) -> Result<()> {
    if shape.len() != rank {
        return Err(Error::shape(op, format!("{what} must be rank {rank}, got {shape:?}")));
    }
    Ok(())
}

fn check_bias(op: &'static str, bias: Option<&Var<'_>>, channels: usize) -> Result<()> {
    if let Some(b) = bias {
        let s = b.shape();
        if s != [channels] {
            return Err(Error::shape(op, format!("bias shape {s:?}, expected [{channels}]")));
        }
    }
    Ok(())
}

/// Output extent of a convolution along one axis, if it is a whole number.
pub fn conv_out_len(input: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    if stride == 0 {
        return None;
    }
    let span = (input + 2 * padding).checked_sub(kernel)?;
    (span % stride == 0).then_some(span / stride + 1)
}

/// Output extent of a transposed convolution along one axis.
pub fn conv_transpose_out_len(input: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    ((input.checked_sub(1)?) * stride + kernel).checked_sub(2 * padding)
}

fn add_channel_bias(y: &mut [Real], bias: &[Real], plane: usize) {
    for (chunk, b) in y.chunks_mut(plane).zip(bias.iter().cycle()) {
        chunk.iter_mut().for_each(|v| *v += b);
    }
}

fn channel_bias_grad(g: &[Real], channels: usize, plane: usize) -> Vec<Real> {
    let mut gb = vec![0.0; channels];
    for (i, chunk) in g.chunks(plane).enumerate() {
        gb[i % channels] += chunk.iter().sum::<Real>();
    }
    gb
}

fn dims4(s: &[usize]) -> [usize; 4] {
    [s[0], s[1], s[2], s[3]]
}

impl<'t> Var<'t> {
    /// 2-D cross-correlation. `self` is `[N, C, H, W]`, `weight` is
    /// `[K, C, kh, kw]`, `bias` is `[K]`.
    pub fn conv2d(
        self,
        weight: Var<'t>,
        bias: Option<Var<'t>>,
        stride: usize,
        padding: usize,
    ) -> Result<Var<'t>> {
        const OP: &str = "conv2d";
        self.same_tape(&weight)?;
        let (x, w) = (self.value(), weight.value());
        expect_rank(OP, "input", x.shape(), 4)?;
        expect_rank(OP, "weight", w.shape(), 4)?;
        let [n, c, h, wd] = dims4(x.shape());
        let [k, wc, kh, kw] = dims4(w.shape());
        if wc != c {
            return Err(Error::shape(
                OP,
                format!("input channels (dim 1) {c} do not match weight channels (dim 1) {wc}"),
            ));
        }
        if kh == 0 || kw == 0 || stride == 0 {
            return Err(Error::InvalidArgument(format!(
                "{OP}: kernel {kh}x{kw} and stride {stride} must be positive"
            )));
        }
        check_bias(OP, bias.as_ref(), k)?;
        let out_h = conv_out_len(h, kh, stride, padding).ok_or_else(|| {
            Error::shape(
                OP,
                format!("height (dim 2) {h} with kernel {kh}, stride {stride}, padding {padding} gives no whole output"),
            )
        })?;
        let out_w = conv_out_len(wd, kw, stride, padding).ok_or_else(|| {
            Error::shape(
                OP,
                format!("width (dim 3) {wd} with kernel {kw}, stride {stride}, padding {padding} gives no whole output"),
            )
        })?;
        let g = ConvGeom {
            channels: c,
            height: h,
            width: wd,
            kh,
            kw,
            stride,
            padding,
            out_h,
            out_w,
        };
        let (rows, cols) = (g.col_rows(), g.col_cols());
        let in_plane = c * h * wd;
        let out_plane = k * cols;
        let mut y = vec![0.0; n * out_plane];
        let mut col = if g.is_pointwise() { Vec::new() } else { vec![0.0; rows * cols] };
        for i in 0..n {
            let xi = &x.data()[i * in_plane..(i + 1) * in_plane];
            let src: &[Real] = if g.is_pointwise() {
                xi
            } else {
                im2col(&g, xi, &mut col);
                &col
            };
            gemm(
                1.0,
                Mat::new(w.data(), k, rows),
                Mat::new(src, rows, cols),
                0.0,
                &mut y[i * out_plane..(i + 1) * out_plane],
            );
        }
        if let Some(b) = &bias {
            add_channel_bias(&mut y, b.value().data(), cols);
        }
        let (rx, rw) = (self.requires_grad(), weight.requires_grad());
        let rb = bias.as_ref().map(|b| b.requires_grad());
        let mut parents = vec![self, weight];
        parents.extend(bias);
        Ok(self.tape.record(
            Tensor::new([n, k, out_h, out_w], y)?,
            &parents,
            Box::new(move |gy| {
                let mut gx = rx.then(|| vec![0.0; n * in_plane]);
                let mut gw = rw.then(|| vec![0.0; k * rows]);
                let mut col = if g.is_pointwise() { Vec::new() } else { vec![0.0; rows * cols] };
                let mut dcol = vec![0.0; rows * cols];
                for i in 0..n {
                    let gyi = &gy[i * out_plane..(i + 1) * out_plane];
                    if let Some(gw) = gw.as_mut() {
                        let xi = &x.data()[i * in_plane..(i + 1) * in_plane];
                        let src: &[Real] = if g.is_pointwise() {
                            xi
                        } else {
                            im2col(&g, xi, &mut col);
                            &col
                        };
                        gemm(1.0, Mat::new(gyi, k, cols), Mat::new(src, rows, cols).t(), 1.0, gw);
                    }
                    if let Some(gx) = gx.as_mut() {
                        let gxi = &mut gx[i * in_plane..(i + 1) * in_plane];
                        let wt = Mat::new(w.data(), k, rows).t();
                        if g.is_pointwise() {
                            gemm(1.0, wt, Mat::new(gyi, k, cols), 0.0, gxi);
                        } else {
                            gemm(1.0, wt, Mat::new(gyi, k, cols), 0.0, &mut dcol);
                            col2im(&g, &dcol, gxi);
                        }
                    }
                }
                let mut out = vec![gx, gw];
                if let Some(rb) = rb {
                    out.push(rb.then(|| channel_bias_grad(gy, k, cols)));
                }
                out
            }),
        ))
    }

    /// Transposed 2-D convolution: the adjoint of [`Var::conv2d`] with the
    /// same kernel, stride and padding. `self` is `[N, Cin, H, W]`, `weight`
    /// is `[Cin, Cout, kh, kw]`, `bias` is `[Cout]`. Output extent is
    /// `(H - 1) * stride - 2 * padding + kh`.
    pub fn conv_transpose2d(
        self,
        weight: Var<'t>,
        bias: Option<Var<'t>>,
        stride: usize,
        padding: usize,
    ) -> Result<Var<'t>> {
        const OP: &str = "conv_transpose2d";
        self.same_tape(&weight)?;
        let (x, w) = (self.value(), weight.value());
        expect_rank(OP, "input", x.shape(), 4)?;
        expect_rank(OP, "weight", w.shape(), 4)?;
        let [n, cin, h, wd] = dims4(x.shape());
        let [wcin, cout, kh, kw] = dims4(w.shape());
        if wcin != cin {
            return Err(Error::shape(
                OP,
                format!("input channels (dim 1) {cin} do not match weight input channels (dim 0) {wcin}"),
            ));
        }
        if kh == 0 || kw == 0 || stride == 0 {
            return Err(Error::InvalidArgument(format!(
                "{OP}: kernel {kh}x{kw} and stride {stride} must be positive"
            )));
        }
        check_bias(OP, bias.as_ref(), cout)?;
        let out_h = conv_transpose_out_len(h, kh, stride, padding)
            .filter(|&v| v > 0)
            .ok_or_else(|| Error::shape(OP, format!("height (dim 2) {h} gives empty output")))?;
        let out_w = conv_transpose_out_len(wd, kw, stride, padding)
            .filter(|&v| v > 0)
            .ok_or_else(|| Error::shape(OP, format!("width (dim 3) {wd} gives empty output")))?;
        // Geometry of the conv2d this op is the adjoint of.
        let g = ConvGeom {
            channels: cout,
            height: out_h,
            width: out_w,
            kh,
            kw,
            stride,
            padding,
            out_h: h,
            out_w: wd,
        };
        let (rows, cols) = (g.col_rows(), g.col_cols());
        let in_plane = cin * cols;
        let out_plane = cout * out_h * out_w;
        let mut y = vec![0.0; n * out_plane];
        let mut col = vec![0.0; rows * cols];
        for i in 0..n {
            let xi = &x.data()[i * in_plane..(i + 1) * in_plane];
            let yi = &mut y[i * out_plane..(i + 1) * out_plane];
            if g.is_pointwise() {
                gemm(1.0, Mat::new(w.data(), cin, rows).t(), Mat::new(xi, cin, cols), 0.0, yi);
            } else {
                gemm(1.0, Mat::new(w.data(), cin, rows).t(), Mat::new(xi, cin, cols), 0.0, &mut col);
                col2im(&g, &col, yi);
            }
        }
        if let Some(b) = &bias {
            add_channel_bias(&mut y, b.value().data(), out_h * out_w);
        }
        let (rx, rw) = (self.requires_grad(), weight.requires_grad());
        let rb = bias.as_ref().map(|b| b.requires_grad());
        let mut parents = vec![self, weight];
        parents.extend(bias);
        Ok(self.tape.record(
            Tensor::new([n, cout, out_h, out_w], y)?,
            &parents,
            Box::new(move |gy| {
                let mut gx = rx.then(|| vec![0.0; n * in_plane]);
                let mut gw = rw.then(|| vec![0.0; cin * rows]);
                let mut gcol = vec![0.0; rows * cols];
                for i in 0..n {
                    let gyi = &gy[i * out_plane..(i + 1) * out_plane];
                    let src: &[Real] = if g.is_pointwise() {
                        gyi
                    } else {
                        im2col(&g, gyi, &mut gcol);
                        &gcol
                    };
                    if let Some(gx) = gx.as_mut() {
                        gemm(
                            1.0,
                            Mat::new(w.data(), cin, rows),
                            Mat::new(src, rows, cols),
                            0.0,
                            &mut gx[i * in_plane..(i + 1) * in_plane],
                        );
                    }
                    if let Some(gw) = gw.as_mut() {
                        let xi = &x.data()[i * in_plane..(i + 1) * in_plane];
                        gemm(1.0, Mat::new(xi, cin, cols), Mat::new(src, rows, cols).t(), 1.0, gw);
                    }
                }
                let mut out = vec![gx, gw];
                if let Some(rb) = rb {
                    out.push(rb.then(|| channel_bias_grad(gy, cout, out_h * out_w)));
                }
                out
            }),
        ))
    }

    /// Non-overlapping `k x k` average pooling of `[N, C, H, W]`.
    pub fn avg_pool2d(self, k: usize) -> Result<Var<'t>> {
        const OP: &str = "avg_pool2d";
        let x = self.value();
        expect_rank(OP, "input", x.shape(), 4)?;
        let [n, c, h, w] = dims4(x.shape());
        if k == 0 || h % k != 0 || w % k != 0 {
            return Err(Error::InvalidArgument(format!(
                "{OP}: window {k} does not divide spatial size {h}x{w}"
            )));
        }
        let (oh, ow) = (h / k, w / k);
        let inv = 1.0 / (k * k) as Real;
        let planes = n * c;
        let mut y = vec![0.0; planes * oh * ow];
        for p in 0..planes {
            let src = &x.data()[p * h * w..(p + 1) * h * w];
            let dst = &mut y[p * oh * ow..(p + 1) * oh * ow];
            for yy in 0..h {
                for xx in 0..w {
                    dst[(yy / k) * ow + xx / k] += src[yy * w + xx] * inv;
                }
            }
        }
        Ok(self.tape.record(
            Tensor::new([n, c, oh, ow], y)?,
            &[self],
            Box::new(move |g| {
                let mut gx = vec![0.0; planes * h * w];
                for p in 0..planes {
                    let src = &g[p * oh * ow..(p + 1) * oh * ow];
                    let dst = &mut gx[p * h * w..(p + 1) * h * w];
                    for yy in 0..h {
                        for xx in 0..w {
                            dst[yy * w + xx] = src[(yy / k) * ow + xx / k] * inv;
                        }
                    }
                }
                vec![Some(gx)]
            }),
        ))
    }

    /// Bilinear resize of `[N, C, H, W]` to `[N, C, out_h, out_w]` with
    /// corner-aligned sampling (corner pixels map onto corner pixels).
    pub fn bilinear_resize(self, out_h: usize, out_w: usize) -> Result<Var<'t>> {
        const OP: &str = "bilinear_resize";
        let x = self.value();
        expect_rank(OP, "input", x.shape(), 4)?;
        let [n, c, h, w] = dims4(x.shape());
        if out_h == 0 || out_w == 0 || h == 0 || w == 0 {
            return Err(Error::InvalidArgument(format!("{OP}: empty extent")));
        }
        let ys = resize_taps(h, out_h);
        let xs = resize_taps(w, out_w);
        let planes = n * c;
        let mut y = vec![0.0; planes * out_h * out_w];
        for p in 0..planes {
            let src = &x.data()[p * h * w..(p + 1) * h * w];
            let dst = &mut y[p * out_h * out_w..(p + 1) * out_h * out_w];
            for (oy, &(y0, y1, fy)) in ys.iter().enumerate() {
                for (ox, &(x0, x1, fx)) in xs.iter().enumerate() {
                    let top = src[y0 * w + x0] * (1.0 - fx) + src[y0 * w + x1] * fx;
                    let bot = src[y1 * w + x0] * (1.0 - fx) + src[y1 * w + x1] * fx;
                    dst[oy * out_w + ox] = top * (1.0 - fy) + bot * fy;
                }
            }
        }
        Ok(self.tape.record(
            Tensor::new([n, c, out_h, out_w], y)?,
            &[self],
            Box::new(move |g| {
                let mut gx = vec![0.0; planes * h * w];
                for p in 0..planes {
                    let src = &g[p * out_h * out_w..(p + 1) * out_h * out_w];
                    let dst = &mut gx[p * h * w..(p + 1) * h * w];
                    for (oy, &(y0, y1, fy)) in ys.iter().enumerate() {
                        for (ox, &(x0, x1, fx)) in xs.iter().enumerate() {
                            let v = src[oy * out_w + ox];
                            dst[y0 * w + x0] += v * (1.0 - fy) * (1.0 - fx);
                            dst[y0 * w + x1] += v * (1.0 - fy) * fx;
                            dst[y1 * w + x0] += v * fy * (1.0 - fx);
                            dst[y1 * w + x1] += v * fy * fx;
                        }
                    }
                }
                vec![Some(gx)]
            }),
        ))
    }

    /// Softmax along `axis`.
    pub fn softmax(self, axis: usize) -> Result<Var<'t>> {
        let x = self.value();
        check_axis("softmax", axis, x.ndim())?;
        let (outer, len, inner) = split_at_axis(x.shape(), axis);
        let mut y = vec![0.0; x.numel()];
        for o in 0..outer {
            for i in 0..inner {
                let idx = |l: usize| (o * len + l) * inner + i;
                let m = (0..len).map(|l| x.data()[idx(l)]).fold(Real::NEG_INFINITY, Real::max);
                let mut z = 0.0;
                for l in 0..len {
                    let e = (x.data()[idx(l)] - m).exp();
                    y[idx(l)] = e;
                    z += e;
                }
                for l in 0..len {
                    y[idx(l)] /= z;
                }
            }
        }
        let yt = std::rc::Rc::new(Tensor::new(x.shape().to_vec(), y)?);
        let yk = yt.clone();
        Ok(self.tape.record(
            yt,
            &[self],
            Box::new(move |g| {
                let y = yk.data();
                let mut gx = vec![0.0; y.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let idx = |l: usize| (o * len + l) * inner + i;
                        let dot: Real = (0..len).map(|l| g[idx(l)] * y[idx(l)]).sum();
                        for l in 0..len {
                            gx[idx(l)] = y[idx(l)] * (g[idx(l)] - dot);
                        }
                    }
                }
                vec![Some(gx)]
            }),
        ))
    }

    /// Layer normalization over the last axis with learned gain and shift.
    pub fn layer_norm(self, gamma: Var<'t>, beta: Var<'t>, eps: Real) -> Result<Var<'t>> {
        const OP: &str = "layer_norm";
        self.same_tape(&gamma)?;
        self.same_tape(&beta)?;
        let x = self.value();
        let d = *x
            .shape()
            .last()
            .ok_or_else(|| Error::InvalidArgument(format!("{OP}: scalar input")))?;
        let (gm, bt) = (gamma.value(), beta.value());
        if gm.shape() != [d] || bt.shape() != [d] {
            return Err(Error::shape(
                OP,
                format!("gain {:?} / shift {:?} must be [{d}]", gm.shape(), bt.shape()),
            ));
        }
        let rows = x.numel() / d;
        let mut xhat = vec![0.0; x.numel()];
        let mut inv_std = vec![0.0; rows];
        let mut y = vec![0.0; x.numel()];
        for r in 0..rows {
            let row = &x.data()[r * d..(r + 1) * d];
            let mean = row.iter().sum::<Real>() / d as Real;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<Real>() / d as Real;
            let is = 1.0 / (var + eps).sqrt();
            inv_std[r] = is;
            for j in 0..d {
                let xh = (row[j] - mean) * is;
                xhat[r * d + j] = xh;
                y[r * d + j] = xh * gm.data()[j] + bt.data()[j];
            }
        }
        let (rx, rg, rb) = (self.requires_grad(), gamma.requires_grad(), beta.requires_grad());
        Ok(self.tape.record(
            Tensor::new(x.shape().to_vec(), y)?,
            &[self, gamma, beta],
            Box::new(move |g| {
                let gx = rx.then(|| {
                    let mut gx = vec![0.0; rows * d];
                    for r in 0..rows {
                        let gr = &g[r * d..(r + 1) * d];
                        let xh = &xhat[r * d..(r + 1) * d];
                        let dxh: Vec<Real> = gr.iter().zip(gm.data()).map(|(a, b)| a * b).collect();
                        let m1 = dxh.iter().sum::<Real>() / d as Real;
                        let m2 = dxh.iter().zip(xh).map(|(a, b)| a * b).sum::<Real>() / d as Real;
                        for j in 0..d {
                            gx[r * d + j] = inv_std[r] * (dxh[j] - m1 - xh[j] * m2);
                        }
                    }
                    gx
                });
                let gg = rg.then(|| {
                    let mut gg = vec![0.0; d];
                    for (i, (gv, xh)) in g.iter().zip(&xhat).enumerate() {
                        gg[i % d] += gv * xh;
                    }
                    gg
                });
                let gb = rb.then(|| {
                    let mut gb = vec![0.0; d];
                    for (i, gv) in g.iter().enumerate() {
                        gb[i % d] += gv;
                    }
                    gb
                });
                vec![gx, gg, gb]
            }),
        ))
    }

    /// Per-channel affine modulation `alpha[n, c] * x[n, c, h, w] + beta[n, c]`.
    pub fn channel_affine(self, alpha: Var<'t>, beta: Var<'t>) -> Result<Var<'t>> {
        const OP: &str = "channel_affine";
        self.same_tape(&alpha)?;
        self.same_tape(&beta)?;
        let x = self.value();
        expect_rank(OP, "feature", x.shape(), 4)?;
        let [n, c, h, w] = dims4(x.shape());
        let (a, b) = (alpha.value(), beta.value());
        if a.shape() != [n, c] || b.shape() != [n, c] {
            return Err(Error::shape(
                OP,
                format!(
                    "scale {:?} / shift {:?} must be [{n}, {c}] for feature {:?}",
                    a.shape(),
                    b.shape(),
                    x.shape()
                ),
            ));
        }
        let plane = h * w;
        let mut y = x.data().to_vec();
        for (p, chunk) in y.chunks_mut(plane).enumerate() {
            let (s, t) = (a.data()[p], b.data()[p]);
            chunk.iter_mut().for_each(|v| *v = s * *v + t);
        }
        let (rx, ra, rb) = (self.requires_grad(), alpha.requires_grad(), beta.requires_grad());
        Ok(self.tape.record(
            Tensor::new(x.shape().to_vec(), y)?,
            &[self, alpha, beta],
            Box::new(move |g| {
                let gx = rx.then(|| {
                    let mut gx = g.to_vec();
                    for (p, chunk) in gx.chunks_mut(plane).enumerate() {
                        let s = a.data()[p];
                        chunk.iter_mut().for_each(|v| *v *= s);
                    }
                    gx
                });
                let ga = ra.then(|| {
                    g.chunks(plane)
                        .zip(x.data().chunks(plane))
                        .map(|(gc, xc)| gc.iter().zip(xc).map(|(a, b)| a * b).sum())
                        .collect()
                });
                let gb = rb.then(|| g.chunks(plane).map(|gc| gc.iter().sum()).collect());
                vec![gx, ga, gb]
            }),
        ))
    }

    /// Per-position affine modulation `s[n, 0, h, w] * x[n, c, h, w] + b[n, 0, h, w]`,
    /// with the single-channel maps broadcast across channels.
    pub fn spatial_affine(self, scale: Var<'t>, shift: Var<'t>) -> Result<Var<'t>> {
        const OP: &str = "spatial_affine";
        self.same_tape(&scale)?;
        self.same_tape(&shift)?;
        let x = self.value();
        expect_rank(OP, "feature", x.shape(), 4)?;
        let [n, c, h, w] = dims4(x.shape());
        let (s, b) = (scale.value(), shift.value());
        if s.shape() != [n, 1, h, w] || b.shape() != [n, 1, h, w] {
            return Err(Error::shape(
                OP,
                format!(
                    "scale {:?} / shift {:?} must be [{n}, 1, {h}, {w}]",
                    s.shape(),
                    b.shape()
                ),
            ));
        }
        let plane = h * w;
        let mut y = vec![0.0; x.numel()];
        for i in 0..n {
            let sm = &s.data()[i * plane..(i + 1) * plane];
            let bm = &b.data()[i * plane..(i + 1) * plane];
            for ch in 0..c {
                let at = (i * c + ch) * plane;
                for p in 0..plane {
                    y[at + p] = sm[p] * x.data()[at + p] + bm[p];
                }
            }
        }
        let (rx, rs, rb) = (self.requires_grad(), scale.requires_grad(), shift.requires_grad());
        Ok(self.tape.record(
            Tensor::new(x.shape().to_vec(), y)?,
            &[self, scale, shift],
            Box::new(move |g| {
                let mut gx = rx.then(|| vec![0.0; n * c * plane]);
                let mut gs = rs.then(|| vec![0.0; n * plane]);
                let mut gb = rb.then(|| vec![0.0; n * plane]);
                for i in 0..n {
                    for ch in 0..c {
                        let at = (i * c + ch) * plane;
                        for p in 0..plane {
                            let gv = g[at + p];
                            if let Some(gx) = gx.as_mut() {
                                gx[at + p] = gv * s.data()[i * plane + p];
                            }
                            if let Some(gs) = gs.as_mut() {
                                gs[i * plane + p] += gv * x.data()[at + p];
                            }
                            if let Some(gb) = gb.as_mut() {
                                gb[i * plane + p] += gv;
                            }
                        }
                    }
                }
                vec![gx, gs, gb]
            }),
        ))
    }
}

/// Source taps `(lo, hi, frac)` for corner-aligned linear resampling of
/// `src` samples onto `dst` samples.
pub(crate) fn resize_taps(src: usize, dst: usize) -> Vec<(usize, usize, Real)> {
    (0..dst)
        .map(|o| {
            if src == 1 || dst == 1 {
                return (0, 0, 0.0);
            }
            let pos = o as Real * (src - 1) as Real / (dst - 1) as Real;
            let lo = (pos.floor() as usize).min(src - 1);
            let hi = (lo + 1).min(src - 1);
            (lo, hi, pos - lo as Real)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use crate::autodiff::Tape;
    use crate::tensor::{Real, Tensor};

    #[test]
    fn conv_all_ones_two_by_two_sums_to_four() {
        let tape = Tape::new();
        let x = tape.constant(Tensor::ones([1, 1, 2, 2]));
        let w = tape.constant(Tensor::ones([1, 1, 2, 2]));
        let y = x.conv2d(w, None, 1, 0).unwrap();
        assert_eq!(y.shape(), vec![1, 1, 1, 1]);
        assert_eq!(y.value().item(), 4.0);
    }

    #[test]
    fn pointwise_identity_kernel_is_identity() {
        let tape = Tape::new();
        let x = tape.constant(Tensor::from_fn([2, 3, 4, 5], |i| (i as Real * 0.37).sin()));
        let eye = Tensor::from_fn([3, 3, 1, 1], |i| if i / 3 == i % 3 { 1.0 } else { 0.0 });
        let w = tape.constant(eye.clone());
        let b = tape.constant(Tensor::zeros([3]));
        let y = x.conv2d(w, Some(b), 1, 0).unwrap();
        assert_eq!(y.value().data(), x.value().data());
        let wt = tape.constant(eye);
        let yt = x.conv_transpose2d(wt, None, 1, 0).unwrap();
        assert_eq!(yt.value().data(), x.value().data());
    }

    #[test]
    fn conv_errors_name_the_dimension() {
        let tape = Tape::new();
        let x = tape.constant(Tensor::zeros([1, 3, 8, 8]));
        let w = tape.constant(Tensor::zeros([4, 2, 3, 3]));
        let e = x.conv2d(w, None, 1, 1).unwrap_err().to_string();
        assert!(e.contains("channels"), "{e}");
        let w = tape.constant(Tensor::zeros([4, 3, 3, 3]));
        let e = x.conv2d(w, None, 2, 1).unwrap_err().to_string();
        assert!(e.contains("height"), "{e}");
        let w = tape.constant(Tensor::zeros([4, 3, 3, 3]));
        let b = tape.constant(Tensor::zeros([5]));
        assert!(x.conv2d(w, Some(b), 1, 1).is_err());
    }

    #[test]
    fn transposed_output_inverts_conv_formula() {
        let tape = Tape::new();
        let x = tape.constant(Tensor::ones([1, 2, 4, 4]));
        let w = tape.constant(Tensor::ones([2, 3, 4, 4]));
        let y = x.conv_transpose2d(w, None, 2, 1).unwrap();
        assert_eq!(y.shape(), vec![1, 3, 8, 8]);
    }

    #[test]
    fn softmax_of_equal_logits_is_uniform() {
        let tape = Tape::new();
        let x = tape.constant(Tensor::zeros([3]));
        let y = x.softmax(0).unwrap();
        for &v in y.value().data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn avg_pool_of_constant_is_constant() {
        let tape = Tape::new();
        let x = tape.constant(Tensor::full([1, 2, 8, 8], 0.7));
        let y = x.avg_pool2d(4).unwrap();
        assert_eq!(y.shape(), vec![1, 2, 2, 2]);
        assert!(y.value().data().iter().all(|v| (v - 0.7).abs() < 1e-15));
        assert!(x.avg_pool2d(3).is_err());
    }

    #[test]
    fn resize_to_same_size_is_identity() {
        let tape = Tape::new();
        let x = tape.constant(Tensor::from_fn([1, 1, 5, 7], |i| (i as Real).cos()));
        let y = x.bilinear_resize(5, 7).unwrap();
        assert_eq!(y.value().data(), x.value().data());
    }

    #[test]
    fn layer_norm_rows_have_zero_mean_unit_variance() {
        let tape = Tape::new();
        let x = tape.constant(Tensor::from_fn([3, 8], |i| (i as Real * 1.3).sin() * 4.0));
        let g = tape.constant(Tensor::ones([8]));
        let b = tape.constant(Tensor::zeros([8]));
        let y = x.layer_norm(g, b, 0.0).unwrap().value();
        for row in y.data().chunks(8) {
            let m: Real = row.iter().sum::<Real>() / 8.0;
            let v: Real = row.iter().map(|v| (v - m) * (v - m)).sum::<Real>() / 8.0;
            assert!(m.abs() < 1e-12 && (v - 1.0).abs() < 1e-9);
        }
    }
}
