//! Elementwise, reduction, shape and matrix ops.

use std::rc::Rc;

use super::Var;
use crate::error::{Error, Result};
use crate::kernels::{gemm, Mat};
use crate::tensor::{check_axis, split_at_axis, Real, Tensor};

fn same_shape(op: &'static str, a: &Var<'_>, b: &Var<'_>) -> Result<()> {
    a.same_tape(b)?;
    let (sa, sb) = (a.shape(), b.shape());
    if sa != sb {
        return Err(Error::shape(op, format!("left {sa:?} vs right {sb:?}")));
    }
    Ok(())
}

impl<'t> Var<'t> {
    /// Elementwise map with derivative `df(x, y)`.
    fn unary(
        self,
        f: impl Fn(Real) -> Real,
        df: impl Fn(Real, Real) -> Real + 'static,
    ) -> Var<'t> {
        let x = self.value();
        let y: Vec<Real> = x.data().iter().map(|&v| f(v)).collect();
        let y = Rc::new(Tensor::new(x.shape().to_vec(), y).expect("same shape"));
        let y_keep = y.clone();
        self.tape.record(
            y,
            &[self],
            Box::new(move |g| {
                let gx = g
                    .iter()
                    .zip(x.data())
                    .zip(y_keep.data())
                    .map(|((g, &x), &y)| g * df(x, y))
                    .collect();
                vec![Some(gx)]
            }),
        )
    }

    pub fn relu(self) -> Var<'t> {
        self.unary(|x| x.max(0.0), |x, _| if x > 0.0 { 1.0 } else { 0.0 })
    }

    pub fn sigmoid(self) -> Var<'t> {
        self.unary(
            |x| {
                if x >= 0.0 {
                    1.0 / (1.0 + (-x).exp())
                } else {
                    let e = x.exp();
                    e / (1.0 + e)
                }
            },
            |_, y| y * (1.0 - y),
        )
    }

    pub fn tanh(self) -> Var<'t> {
        self.unary(|x| x.tanh(), |_, y| 1.0 - y * y)
    }

    pub fn abs(self) -> Var<'t> {
        self.unary(
            |x| x.abs(),
            |x, _| {
                if x > 0.0 {
                    1.0
                } else if x < 0.0 {
                    -1.0
                } else {
                    0.0
                }
            },
        )
    }

    pub fn square(self) -> Var<'t> {
        self.unary(|x| x * x, |x, _| 2.0 * x)
    }

    /// Square root; the caller guarantees strictly positive inputs.
    pub fn sqrt(self) -> Var<'t> {
        self.unary(|x| x.sqrt(), |_, y| 0.5 / y)
    }

    pub fn scale(self, k: Real) -> Var<'t> {
        self.unary(move |x| k * x, move |_, _| k)
    }

    pub fn add_scalar(self, k: Real) -> Var<'t> {
        self.unary(move |x| x + k, |_, _| 1.0)
    }

    pub fn add(self, other: Var<'t>) -> Result<Var<'t>> {
        same_shape("add", &self, &other)?;
        let (a, b) = (self.value(), other.value());
        let y: Vec<Real> = a.data().iter().zip(b.data()).map(|(x, y)| x + y).collect();
        let (ra, rb) = (self.requires_grad(), other.requires_grad());
        Ok(self.tape.record(
            Tensor::new(a.shape().to_vec(), y)?,
            &[self, other],
            Box::new(move |g| vec![ra.then(|| g.to_vec()), rb.then(|| g.to_vec())]),
        ))
    }

    pub fn sub(self, other: Var<'t>) -> Result<Var<'t>> {
        same_shape("sub", &self, &other)?;
        let (a, b) = (self.value(), other.value());
        let y: Vec<Real> = a.data().iter().zip(b.data()).map(|(x, y)| x - y).collect();
        let (ra, rb) = (self.requires_grad(), other.requires_grad());
        Ok(self.tape.record(
            Tensor::new(a.shape().to_vec(), y)?,
            &[self, other],
            Box::new(move |g| {
                vec![
                    ra.then(|| g.to_vec()),
                    rb.then(|| g.iter().map(|v| -v).collect()),
                ]
            }),
        ))
    }

    pub fn mul(self, other: Var<'t>) -> Result<Var<'t>> {
        same_shape("mul", &self, &other)?;
        let (a, b) = (self.value(), other.value());
        let y: Vec<Real> = a.data().iter().zip(b.data()).map(|(x, y)| x * y).collect();
        let (ra, rb) = (self.requires_grad(), other.requires_grad());
        Ok(self.tape.record(
            Tensor::new(a.shape().to_vec(), y)?,
            &[self, other],
            Box::new(move |g| {
                vec![
                    ra.then(|| g.iter().zip(b.data()).map(|(g, b)| g * b).collect()),
                    rb.then(|| g.iter().zip(a.data()).map(|(g, a)| g * a).collect()),
                ]
            }),
        ))
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(self) -> Var<'t> {
        let x = self.value();
        let n = x.numel();
        let s: Real = x.data().iter().sum();
        self.tape
            .record(Tensor::scalar(s), &[self], Box::new(move |g| vec![Some(vec![g[0]; n])]))
    }

    /// Mean of all elements, as a scalar.
    pub fn mean(self) -> Var<'t> {
        let n = self.value().numel();
        self.sum().scale(1.0 / n as Real)
    }

    /// Mean along `axis`, removing that axis.
    pub fn mean_axis(self, axis: usize) -> Result<Var<'t>> {
        let x = self.value();
        check_axis("mean_axis", axis, x.ndim())?;
        let (outer, len, inner) = split_at_axis(x.shape(), axis);
        let mut shape = x.shape().to_vec();
        shape.remove(axis);
        let inv = 1.0 / len as Real;
        let mut y = vec![0.0; outer * inner];
        for o in 0..outer {
            for l in 0..len {
                let src = &x.data()[(o * len + l) * inner..(o * len + l + 1) * inner];
                for (d, s) in y[o * inner..(o + 1) * inner].iter_mut().zip(src) {
                    *d += s * inv;
                }
            }
        }
        Ok(self.tape.record(
            Tensor::new(shape, y)?,
            &[self],
            Box::new(move |g| {
                let mut gx = vec![0.0; outer * len * inner];
                for o in 0..outer {
                    for l in 0..len {
                        let dst = &mut gx[(o * len + l) * inner..(o * len + l + 1) * inner];
                        for (d, s) in dst.iter_mut().zip(&g[o * inner..(o + 1) * inner]) {
                            *d = s * inv;
                        }
                    }
                }
                vec![Some(gx)]
            }),
        ))
    }

    pub fn reshape(self, shape: impl Into<Vec<usize>>) -> Result<Var<'t>> {
        let shape = shape.into();
        let x = (*self.value()).clone().reshape(shape)?;
        Ok(self
            .tape
            .record(x, &[self], Box::new(|g| vec![Some(g.to_vec())])))
    }

    /// Transpose of a rank-2 tensor.
    pub fn transpose(self) -> Result<Var<'t>> {
        let x = self.value();
        if x.ndim() != 2 {
            return Err(Error::shape("transpose", format!("expected rank 2, got {:?}", x.shape())));
        }
        let (r, c) = (x.shape()[0], x.shape()[1]);
        let y = transpose_raw(x.data(), r, c);
        Ok(self.tape.record(
            Tensor::new([c, r], y)?,
            &[self],
            Box::new(move |g| vec![Some(transpose_raw(g, c, r))]),
        ))
    }

    /// Concatenates along `axis`; all other extents must agree.
    pub fn concat(parts: &[Var<'t>], axis: usize) -> Result<Var<'t>> {
        let first = parts
            .first()
            .ok_or_else(|| Error::InvalidArgument("concat of zero tensors".into()))?;
        let base = first.shape();
        check_axis("concat", axis, base.len())?;
        let mut lens = Vec::with_capacity(parts.len());
        for p in parts {
            first.same_tape(p)?;
            let s = p.shape();
            let compatible = s.len() == base.len()
                && s.iter().zip(&base).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(Error::shape(
                    "concat",
                    format!("{s:?} incompatible with {base:?} along axis {axis}"),
                ));
            }
            lens.push(s[axis]);
        }
        let total: usize = lens.iter().sum();
        let (outer, _, inner) = split_at_axis(&base, axis);
        let mut shape = base.clone();
        shape[axis] = total;
        let mut y = vec![0.0; outer * total * inner];
        let mut start = 0;
        for (p, &len) in parts.iter().zip(&lens) {
            let v = p.value();
            for o in 0..outer {
                let src = &v.data()[o * len * inner..(o + 1) * len * inner];
                let at = (o * total + start) * inner;
                y[at..at + len * inner].copy_from_slice(src);
            }
            start += len;
        }
        let flags: Vec<bool> = parts.iter().map(|p| p.requires_grad()).collect();
        Ok(first.tape.record(
            Tensor::new(shape, y)?,
            parts,
            Box::new(move |g| {
                let mut out = Vec::with_capacity(lens.len());
                let mut start = 0;
                for (&len, &rg) in lens.iter().zip(&flags) {
                    if rg {
                        let mut gp = vec![0.0; outer * len * inner];
                        for o in 0..outer {
                            let at = (o * total + start) * inner;
                            gp[o * len * inner..(o + 1) * len * inner]
                                .copy_from_slice(&g[at..at + len * inner]);
                        }
                        out.push(Some(gp));
                    } else {
                        out.push(None);
                    }
                    start += len;
                }
                out
            }),
        ))
    }

    /// Slice `[start, start + len)` along `axis`.
    pub fn narrow(self, axis: usize, start: usize, len: usize) -> Result<Var<'t>> {
        let x = self.value();
        check_axis("narrow", axis, x.ndim())?;
        let (outer, full, inner) = split_at_axis(x.shape(), axis);
        if start + len > full {
            return Err(Error::InvalidArgument(format!(
                "narrow: range {start}..{} exceeds axis {axis} of extent {full}",
                start + len
            )));
        }
        let mut shape = x.shape().to_vec();
        shape[axis] = len;
        let mut y = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let at = (o * full + start) * inner;
            y.extend_from_slice(&x.data()[at..at + len * inner]);
        }
        Ok(self.tape.record(
            Tensor::new(shape, y)?,
            &[self],
            Box::new(move |g| {
                let mut gx = vec![0.0; outer * full * inner];
                for o in 0..outer {
                    let at = (o * full + start) * inner;
                    gx[at..at + len * inner].copy_from_slice(&g[o * len * inner..(o + 1) * len * inner]);
                }
                vec![Some(gx)]
            }),
        ))
    }

    /// Matrix product of rank-2 tensors.
    pub fn matmul(self, other: Var<'t>) -> Result<Var<'t>> {
        self.same_tape(&other)?;
        let (a, b) = (self.value(), other.value());
        if a.ndim() != 2 || b.ndim() != 2 {
            return Err(Error::shape(
                "matmul",
                format!("expected rank-2 operands, got {:?} and {:?}", a.shape(), b.shape()),
            ));
        }
        let (m, k) = (a.shape()[0], a.shape()[1]);
        let (k2, n) = (b.shape()[0], b.shape()[1]);
        if k != k2 {
            return Err(Error::shape(
                "matmul",
                format!("inner dimension {k} of left does not match {k2} of right"),
            ));
        }
        let mut y = vec![0.0; m * n];
        gemm(1.0, Mat::new(a.data(), m, k), Mat::new(b.data(), k, n), 0.0, &mut y);
        let (ra, rb) = (self.requires_grad(), other.requires_grad());
        Ok(self.tape.record(
            Tensor::new([m, n], y)?,
            &[self, other],
            Box::new(move |g| {
                let ga = ra.then(|| {
                    let mut ga = vec![0.0; m * k];
                    gemm(1.0, Mat::new(g, m, n), Mat::new(b.data(), k, n).t(), 0.0, &mut ga);
                    ga
                });
                let gb = rb.then(|| {
                    let mut gb = vec![0.0; k * n];
                    gemm(1.0, Mat::new(a.data(), m, k).t(), Mat::new(g, m, n), 0.0, &mut gb);
                    gb
                });
                vec![ga, gb]
            }),
        ))
    }

    /// `x[m, n] + bias[n]` for every row `m`.
    pub fn add_row(self, bias: Var<'t>) -> Result<Var<'t>> {
        self.same_tape(&bias)?;
        let (x, b) = (self.value(), bias.value());
        if x.ndim() != 2 || b.shape() != [x.shape()[1]] {
            return Err(Error::shape(
                "add_row",
                format!("bias {:?} does not match columns of {:?}", b.shape(), x.shape()),
            ));
        }
        let (m, n) = (x.shape()[0], x.shape()[1]);
        let mut y = x.data().to_vec();
        for row in y.chunks_mut(n) {
            row.iter_mut().zip(b.data()).for_each(|(v, b)| *v += b);
        }
        let (rx, rb) = (self.requires_grad(), bias.requires_grad());
        Ok(self.tape.record(
            Tensor::new([m, n], y)?,
            &[self, bias],
            Box::new(move |g| {
                let gb = rb.then(|| {
                    let mut gb = vec![0.0; n];
                    for row in g.chunks(n) {
                        gb.iter_mut().zip(row).for_each(|(a, b)| *a += b);
                    }
                    gb
                });
                vec![rx.then(|| g.to_vec()), gb]
            }),
        ))
    }
}

pub(crate) fn transpose_raw(x: &[Real], rows: usize, cols: usize) -> Vec<Real> {
    let mut y = vec![0.0; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            y[c * rows + r] = x[r * cols + c];
        }
    }
    y
}
