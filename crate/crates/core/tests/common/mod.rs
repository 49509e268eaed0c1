//! Direct-loop reference implementations used as test oracles.
#![allow(dead_code)]

use exreg::image::{ColorSpace, Image};
use exreg::{Real, Tensor};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn rand_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::from_fn(shape.to_vec(), |_| rng.gen_range(-1.0..1.0))
}

pub fn rand_image(h: usize, w: usize, rng: &mut ChaCha8Rng) -> Image {
    Image::from_fn(h, w, ColorSpace::Srgb, |_, _, _| rng.gen_range(0.0..1.0))
}

/// `b` plus small noise, so metrics stay finite.
pub fn perturb(b: &Image, sigma: Real, rng: &mut ChaCha8Rng) -> Image {
    Image::from_fn(b.height(), b.width(), ColorSpace::Srgb, |y, x, c| {
        b.get(y, x, c) + rng.gen_range(-sigma..sigma)
    })
}

pub fn conv2d(x: &Tensor, w: &Tensor, bias: &[Real], stride: usize, pad: usize) -> Tensor {
    let (n, c, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (k, kh, kw) = (w.shape()[0], w.shape()[2], w.shape()[3]);
    let oh = (h + 2 * pad - kh) / stride + 1;
    let ow = (wd + 2 * pad - kw) / stride + 1;
    let mut y = Tensor::zeros([n, k, oh, ow]);
    for b in 0..n {
        for o in 0..k {
            for i in 0..oh {
                for j in 0..ow {
                    let mut acc = bias[o];
                    for ci in 0..c {
                        for a in 0..kh {
                            for bb in 0..kw {
                                let yy = (i * stride + a) as isize - pad as isize;
                                let xx = (j * stride + bb) as isize - pad as isize;
                                if yy < 0 || xx < 0 || yy >= h as isize || xx >= wd as isize {
                                    continue;
                                }
                                acc += x.at(&[b, ci, yy as usize, xx as usize]) * w.at(&[o, ci, a, bb]);
                            }
                        }
                    }
                    let off = y.offset(&[b, o, i, j]);
                    y.data_mut()[off] = acc;
                }
            }
        }
    }
    y
}

/// Scatter form of the transposed convolution; weight is `[Cin, Cout, kh, kw]`.
pub fn conv_transpose2d(x: &Tensor, w: &Tensor, bias: &[Real], stride: usize, pad: usize) -> Tensor {
    let (n, cin, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (cout, kh, kw) = (w.shape()[1], w.shape()[2], w.shape()[3]);
    let oh = (h - 1) * stride + kh - 2 * pad;
    let ow = (wd - 1) * stride + kw - 2 * pad;
    let mut y = Tensor::zeros([n, cout, oh, ow]);
    for b in 0..n {
        for o in 0..cout {
            for i in 0..oh {
                for j in 0..ow {
                    let off = y.offset(&[b, o, i, j]);
                    y.data_mut()[off] = bias[o];
                }
            }
        }
        for ci in 0..cin {
            for i in 0..h {
                for j in 0..wd {
                    for o in 0..cout {
                        for a in 0..kh {
                            for bb in 0..kw {
                                let yy = (i * stride + a) as isize - pad as isize;
                                let xx = (j * stride + bb) as isize - pad as isize;
                                if yy < 0 || xx < 0 || yy >= oh as isize || xx >= ow as isize {
                                    continue;
                                }
                                let off = y.offset(&[b, o, yy as usize, xx as usize]);
                                y.data_mut()[off] += x.at(&[b, ci, i, j]) * w.at(&[ci, o, a, bb]);
                            }
                        }
                    }
                }
            }
        }
    }
    y
}

pub fn avg_pool2d(x: &Tensor, k: usize) -> Tensor {
    let (n, c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    Tensor::from_fn([n, c, h / k, w / k], |idx| {
        let j = idx % (w / k);
        let i = idx / (w / k) % (h / k);
        let ch = idx / (w / k) / (h / k) % c;
        let b = idx / (w / k) / (h / k) / c;
        let mut acc = 0.0;
        for a in 0..k {
            for bb in 0..k {
                acc += x.at(&[b, ch, i * k + a, j * k + bb]);
            }
        }
        acc / (k * k) as Real
    })
}

pub fn psnr(a: &Image, b: &Image) -> Real {
    let mut se = 0.0;
    let mut count = 0.0;
    for y in 0..a.height() {
        for x in 0..a.width() {
            for c in 0..3 {
                let d = a.get(y, x, c) - b.get(y, x, c);
                se += d * d;
                count += 1.0;
            }
        }
    }
    -10.0 * (se / count).log10()
}

/// SSIM with a full 2-D Gaussian window evaluated at every valid position.
pub fn ssim(a: &Image, b: &Image) -> Real {
    let k = 11usize;
    let sigma: Real = 1.5;
    let mut win = vec![0.0; k * k];
    for i in 0..k {
        for j in 0..k {
            let (di, dj) = (i as Real - 5.0, j as Real - 5.0);
            win[i * k + j] = (-(di * di + dj * dj) / (2.0 * sigma * sigma)).exp();
        }
    }
    let total: Real = win.iter().sum();
    win.iter_mut().for_each(|v| *v /= total);
    let (c1, c2) = (0.01f64.powi(2) as Real, 0.03f64.powi(2) as Real);
    let (oh, ow) = (a.height() - k + 1, a.width() - k + 1);
    let mut sum = 0.0;
    for c in 0..3 {
        let mut per = 0.0;
        for y in 0..oh {
            for x in 0..ow {
                let (mut mx, mut my) = (0.0, 0.0);
                for i in 0..k {
                    for j in 0..k {
                        mx += win[i * k + j] * a.get(y + i, x + j, c);
                        my += win[i * k + j] * b.get(y + i, x + j, c);
                    }
                }
                let (mut vx, mut vy, mut cov) = (0.0, 0.0, 0.0);
                for i in 0..k {
                    for j in 0..k {
                        let (p, q) = (a.get(y + i, x + j, c) - mx, b.get(y + i, x + j, c) - my);
                        vx += win[i * k + j] * p * p;
                        vy += win[i * k + j] * q * q;
                        cov += win[i * k + j] * p * q;
                    }
                }
                per += ((2.0 * mx * my + c1) * (2.0 * cov + c2))
                    / ((mx * mx + my * my + c1) * (vx + vy + c2));
            }
        }
        sum += per / (oh * ow) as Real;
    }
    sum / 3.0
}

pub fn l1(a: &[Real], b: &[Real]) -> Real {
    let mut acc = 0.0;
    for i in 0..a.len() {
        acc += (a[i] - b[i]).abs();
    }
    acc / a.len() as Real
}

pub fn charbonnier(a: &[Real], b: &[Real], eps: Real) -> Real {
    let mut acc = 0.0;
    for i in 0..a.len() {
        let r = a[i] - b[i];
        acc += (r * r + eps * eps).sqrt();
    }
    acc / a.len() as Real
}

/// Textbook Adam on a flat slice, one step.
pub struct ScalarAdam {
    pub lr: Real,
    pub b1: Real,
    pub b2: Real,
    pub eps: Real,
    pub m: Vec<Real>,
    pub v: Vec<Real>,
    pub t: i32,
}

impl ScalarAdam {
    pub fn new(n: usize, lr: Real) -> Self {
        ScalarAdam {
            lr,
            b1: 0.9,
            b2: 0.999,
            eps: 1e-8,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    pub fn step(&mut self, x: &mut [Real], g: &[Real]) {
        self.t += 1;
        for i in 0..x.len() {
            self.m[i] = self.b1 * self.m[i] + (1.0 - self.b1) * g[i];
            self.v[i] = self.b2 * self.v[i] + (1.0 - self.b2) * g[i] * g[i];
            let mh = self.m[i] / (1.0 - self.b1.powi(self.t));
            let vh = self.v[i] / (1.0 - self.b2.powi(self.t));
            x[i] -= self.lr * mh / (vh.sqrt() + self.eps);
        }
    }
}

pub fn max_abs_diff(a: &[Real], b: &[Real]) -> Real {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, Real::max)
}
