use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::image::Image;
use crate::tensor::Real;

/// Side length of the SSIM Gaussian window.
pub const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: Real = 1.5;
const SSIM_K1: Real = 0.01;
const SSIM_K2: Real = 0.03;

fn check_pair(op: &'static str, a: &Image, b: &Image) -> Result<()> {
    if !a.same_size(b) {
        return Err(Error::shape(
            op,
            format!("{}x{} vs {}x{}", a.height(), a.width(), b.height(), b.width()),
        ));
    }
    Ok(())
}

/// Peak signal-to-noise ratio in dB over all pixel-channels, peak 1.
/// Identical images give `+inf`.
pub fn psnr(a: &Image, b: &Image) -> Result<Real> {
    check_pair("psnr", a, b)?;
    let n = a.pixels().len() as Real;
    let mse = a
        .pixels()
        .iter()
        .zip(b.pixels())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<Real>()
        / n;
    Ok(if mse == 0.0 {
        Real::INFINITY
    } else {
        10.0 * (1.0 / mse).log10()
    })
}

fn gaussian_taps() -> [Real; SSIM_WINDOW] {
    let half = (SSIM_WINDOW / 2) as Real;
    let mut taps = [0.0; SSIM_WINDOW];
    for (i, t) in taps.iter_mut().enumerate() {
        let d = i as Real - half;
        *t = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let sum: Real = taps.iter().sum();
    taps.iter_mut().for_each(|t| *t /= sum);
    taps
}

/// Separable "valid" Gaussian filtering of an `h x w` plane.
fn filter_valid(plane: &[Real], h: usize, w: usize, taps: &[Real; SSIM_WINDOW]) -> Vec<Real> {
    let k = SSIM_WINDOW;
    let (oh, ow) = (h - k + 1, w - k + 1);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = (0..k).map(|i| taps[i] * plane[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..k).map(|i| taps[i] * rows[(y + i) * ow + x]).sum();
        }
    }
    out
}

/// Single-scale SSIM: 11x11 Gaussian window (sigma 1.5), K1 = 0.01,
/// K2 = 0.03, dynamic range 1, valid window positions only, computed per
/// channel and averaged.
pub fn ssim(a: &Image, b: &Image) -> Result<Real> {
    check_pair("ssim", a, b)?;
    let (h, w) = (a.height(), a.width());
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::InvalidArgument(format!(
            "ssim needs images of at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {h}x{w}"
        )));
    }
    let taps = gaussian_taps();
    let c1 = SSIM_K1 * SSIM_K1;
    let c2 = SSIM_K2 * SSIM_K2;
    let mut total = 0.0;
    for c in 0..3 {
        let x: Vec<Real> = a.pixels().iter().skip(c).step_by(3).copied().collect();
        let y: Vec<Real> = b.pixels().iter().skip(c).step_by(3).copied().collect();
        let xx: Vec<Real> = x.iter().map(|v| v * v).collect();
        let yy: Vec<Real> = y.iter().map(|v| v * v).collect();
        let xy: Vec<Real> = x.iter().zip(&y).map(|(p, q)| p * q).collect();
        let [mx, my, sxx, syy, sxy] =
            [&x, &y, &xx, &yy, &xy].map(|p| filter_valid(p, h, w, &taps));
        let n = mx.len();
        let mut acc = 0.0;
        for i in 0..n {
            let vx = sxx[i] - mx[i] * mx[i];
            let vy = syy[i] - my[i] * my[i];
            let cov = sxy[i] - mx[i] * my[i];
            acc += ((2.0 * mx[i] * my[i] + c1) * (2.0 * cov + c2))
                / ((mx[i] * mx[i] + my[i] * my[i] + c1) * (vx + vy + c2));
        }
        total += acc / n as Real;
    }
    Ok(total / 3.0)
}

/// Divisor used for the PSNR variance.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Variance {
    /// Divide by `n`.
    #[default]
    Population,
    /// Divide by `n - 1`.
    Sample,
}

/// Mean and variance of a list of PSNR values.
pub fn psnr_variance(psnrs: &[Real], kind: Variance) -> Result<(Real, Real)> {
    if psnrs.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "PSNR variance needs at least 2 values, got {}",
            psnrs.len()
        )));
    }
    if psnrs.iter().any(|p| !p.is_finite()) {
        return Err(Error::NonFinite(
            "PSNR variance is undefined when an output matches the reference exactly".into(),
        ));
    }
    let n = psnrs.len() as Real;
    let mean = psnrs.iter().sum::<Real>() / n;
    let ss = psnrs.iter().map(|p| (p - mean) * (p - mean)).sum::<Real>();
    let denom = match kind {
        Variance::Population => n,
        Variance::Sample => n - 1.0,
    };
    Ok((mean, ss / denom))
}

/// Mean and population variance of the PSNRs of `outputs` (one per EV of
/// the same scene) against `gt`.
pub fn psnr_var(outputs: &[Image], gt: &Image) -> Result<(Real, Real)> {
    let psnrs = outputs.iter().map(|o| psnr(o, gt)).collect::<Result<Vec<_>>>()?;
    psnr_variance(&psnrs, Variance::Population)
}

/// `0.5 * (10 - ma + niqe)`; lower is better.
pub fn perceptual_index(ma: Real, niqe: Real) -> Result<Real> {
    if !ma.is_finite() || !niqe.is_finite() {
        return Err(Error::NonFinite(format!("perceptual index inputs ma={ma}, niqe={niqe}")));
    }
    Ok(0.5 * (10.0 - ma + niqe))
}

/// Per-scene scores across its exposure renditions.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneScores {
    pub scene_id: String,
    /// Keyed by relative EV in hundredths of a stop.
    pub psnr: BTreeMap<i64, Real>,
    pub ssim: BTreeMap<i64, Real>,
    /// Variance of the listed PSNRs, if defined.
    pub psnr_var: Option<Real>,
}

impl SceneScores {
    pub fn ev_key(ev: Real) -> i64 {
        (ev * 100.0).round() as i64
    }

    pub fn key_ev(key: i64) -> Real {
        key as Real / 100.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::ColorSpace;

    fn noise(seed: u64) -> Image {
        let mut s = seed;
        Image::from_fn(16, 16, ColorSpace::Srgb, |_, _, _| {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (s >> 11) as Real / (1u64 << 53) as Real
        })
    }

    #[test]
    fn psnr_identical_is_infinite() {
        let a = noise(1);
        assert_eq!(psnr(&a, &a).unwrap(), Real::INFINITY);
    }

    #[test]
    fn psnr_uniform_offset_point_one_is_twenty_db() {
        let a = Image::filled(4, 4, 0.3, ColorSpace::Srgb);
        let b = Image::filled(4, 4, 0.4, ColorSpace::Srgb);
        assert!((psnr(&a, &b).unwrap() - 20.0).abs() < 1e-9);
    }

    #[test]
    fn ssim_identity_and_inversion() {
        let a = noise(2);
        assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        let inv = a.map(ColorSpace::Srgb, |v| 1.0 - v);
        assert!(ssim(&a, &inv).unwrap() < 1.0);
        let small = Image::filled(10, 20, 0.5, ColorSpace::Srgb);
        assert!(ssim(&small, &small).is_err());
    }

    #[test]
    fn metrics_are_symmetric() {
        let (a, b) = (noise(3), noise(4));
        assert_eq!(psnr(&a, &b).unwrap(), psnr(&b, &a).unwrap());
        assert!((ssim(&a, &b).unwrap() - ssim(&b, &a).unwrap()).abs() < 1e-15);
    }

    #[test]
    fn psnr_variance_closed_forms() {
        assert_eq!(psnr_variance(&[20.0, 22.0], Variance::Population).unwrap(), (21.0, 1.0));
        assert_eq!(psnr_variance(&[20.0, 22.0], Variance::Sample).unwrap(), (21.0, 2.0));
        assert!(psnr_variance(&[20.0], Variance::Population).is_err());
        assert!(psnr_variance(&[20.0, Real::INFINITY], Variance::Population).is_err());
        let gt = noise(5);
        let o = noise(6);
        let (_, v) = psnr_var(&[o.clone(), o.clone(), o.clone(), o.clone(), o], &gt).unwrap();
        assert_eq!(v, 0.0);
    }

    #[test]
    fn perceptual_index_values() {
        assert_eq!(perceptual_index(10.0, 10.0).unwrap(), 5.0);
        assert_eq!(perceptual_index(8.0, 4.0).unwrap(), 3.0);
        assert!(perceptual_index(Real::NAN, 1.0).is_err());
    }
}
