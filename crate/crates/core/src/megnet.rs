//! Conditional multi-exposure generator.
//!
//! A pointwise base path (1x1 convolutions) is modulated after each hidden
//! layer by per-channel `(alpha, beta)` pairs. The pairs come from a
//! condition code that concatenates a global image code with an encoding of
//! the requested exposure shift.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::image::{ColorSpace, Image};
use crate::params::{Bound, Params};
use crate::tensor::{Real, Tensor};

/// Exposure shifts are divided by this before entering the EV encoder.
pub const EV_SCALE: Real = 1.5;

#[derive(Clone, Debug, PartialEq)]
pub struct MegnetConfig {
    /// Channels of the three modulated base layers.
    pub width: usize,
    /// Channels of the global encoder and of the EV code.
    pub cond_width: usize,
    /// Hidden size of each modulation head.
    pub head_hidden: usize,
}

impl Default for MegnetConfig {
    fn default() -> Self {
        MegnetConfig {
            width: 64,
            cond_width: 32,
            head_hidden: 64,
        }
    }
}

impl MegnetConfig {
    /// Reduced widths for finite-difference checks.
    pub fn micro() -> Self {
        MegnetConfig {
            width: 4,
            cond_width: 3,
            head_hidden: 4,
        }
    }
}

const BASE_LAYERS: usize = 3;

#[derive(Clone, Debug)]
pub struct Megnet {
    pub config: MegnetConfig,
    pub params: Params,
}

/// Per-layer modulation parameters, each `[N, width]`.
pub struct Modulation<'t> {
    pub alpha: Vec<Var<'t>>,
    pub beta: Vec<Var<'t>>,
}

/// The input image plus generated renditions, ascending by relative EV.
#[derive(Clone, Debug)]
pub struct ExposureStack {
    pub entries: Vec<(Real, Image)>,
}

impl ExposureStack {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn evs(&self) -> Vec<Real> {
        self.entries.iter().map(|e| e.0).collect()
    }

    pub fn get(&self, ev: Real) -> Option<&Image> {
        self.entries.iter().find(|e| e.0 == ev).map(|e| &e.1)
    }
}

/// `alpha[n, c] * feature[n, c, h, w] + beta[n, c]`.
pub fn modulate<'t>(feature: Var<'t>, alpha: Var<'t>, beta: Var<'t>) -> Result<Var<'t>> {
    feature.channel_affine(alpha, beta)
}

/// Sorted copy of `ev_set` with the input's 0 inserted; rejects 0 and repeats.
pub fn stack_evs(ev_set: &[Real]) -> Result<Vec<Real>> {
    if let Some(bad) = ev_set.iter().find(|e| !e.is_finite()) {
        return Err(Error::InvalidArgument(format!("non-finite EV {bad} in ev_set")));
    }
    if ev_set.contains(&0.0) {
        return Err(Error::InvalidArgument(
            "ev_set must not contain 0; the input occupies it".into(),
        ));
    }
    let mut evs = ev_set.to_vec();
    evs.push(0.0);
    evs.sort_by(|a, b| a.total_cmp(b));
    if let Some(w) = evs.windows(2).find(|w| w[0] == w[1]) {
        return Err(Error::InvalidArgument(format!("duplicate EV {} in ev_set", w[0])));
    }
    Ok(evs)
}

impl Megnet {
    pub fn new(config: MegnetConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = Params::new();
        let (w, cw, hh) = (config.width, config.cond_width, config.head_hidden);
        p.add_conv("megnet.base0", w, 3, 1, &mut rng);
        p.add_conv("megnet.base1", w, w, 1, &mut rng);
        p.add_conv("megnet.base2", w, w, 1, &mut rng);
        p.add_conv("megnet.out", 3, w, 1, &mut rng);
        p.add_conv("megnet.global0", cw, 3, 4, &mut rng);
        p.add_conv("megnet.global1", cw, cw, 4, &mut rng);
        p.add_conv("megnet.global2", cw, cw, 4, &mut rng);
        p.add_linear("megnet.ev0", 1, cw, &mut rng);
        p.add_linear("megnet.ev1", cw, cw, &mut rng);
        p.add_linear("megnet.ev2", cw, cw, &mut rng);
        for n in 0..BASE_LAYERS {
            p.add_linear(&format!("megnet.head{n}.fc0"), 2 * cw, hh, &mut rng);
            p.insert(format!("megnet.head{n}.fc1.w"), Tensor::zeros([hh, 2 * w]));
            let bias = Tensor::from_fn([2 * w], |i| if i < w { 1.0 } else { 0.0 });
            p.insert(format!("megnet.head{n}.fc1.b"), bias);
        }
        Megnet { config, params: p }
    }

    /// Global image code `[N, cond_width]`.
    pub fn global_code<'t>(&self, b: &Bound<'_, 't>, x: Var<'t>) -> Result<Var<'t>> {
        let mut h = x;
        for i in 0..3 {
            h = b.conv(h, &format!("megnet.global{i}"), 2, 1)?.relu();
        }
        let s = h.shape();
        h.reshape([s[0], s[1], s[2] * s[3]])?.mean_axis(2)
    }

    /// Exposure-shift code `[N, cond_width]`.
    pub fn ev_code<'t>(&self, b: &Bound<'_, 't>, tape: &'t Tape, delta_ev: Real, n: usize) -> Result<Var<'t>> {
        let e = tape.constant(Tensor::full([n, 1], delta_ev / EV_SCALE));
        let h = b.linear(e, "megnet.ev0")?.relu();
        let h = b.linear(h, "megnet.ev1")?.relu();
        b.linear(h, "megnet.ev2")
    }

    /// Modulation parameters from a condition code `[N, 2 * cond_width]`.
    pub fn modulation<'t>(&self, b: &Bound<'_, 't>, cond: Var<'t>) -> Result<Modulation<'t>> {
        let w = self.config.width;
        let mut m = Modulation {
            alpha: Vec::new(),
            beta: Vec::new(),
        };
        for n in 0..BASE_LAYERS {
            let h = b.linear(cond, &format!("megnet.head{n}.fc0"))?.relu();
            let ab = b.linear(h, &format!("megnet.head{n}.fc1"))?;
            m.alpha.push(ab.narrow(1, 0, w)?);
            m.beta.push(ab.narrow(1, w, w)?);
        }
        Ok(m)
    }

    /// Condition code `[global_code | ev_code]`.
    pub fn condition<'t>(&self, b: &Bound<'_, 't>, x: Var<'t>, delta_ev: Real) -> Result<Var<'t>> {
        let n = x.shape()[0];
        let g = self.global_code(b, x)?;
        let e = self.ev_code(b, x.tape(), delta_ev, n)?;
        Var::concat(&[g, e], 1)
    }

    /// Modulated pointwise base path.
    pub fn base<'t>(&self, b: &Bound<'_, 't>, x: Var<'t>, m: &Modulation<'t>) -> Result<Var<'t>> {
        let mut h = x;
        for n in 0..BASE_LAYERS {
            h = b.conv(h, &format!("megnet.base{n}"), 1, 0)?;
            h = modulate(h, m.alpha[n], m.beta[n])?.relu();
        }
        Ok(b.conv(h, "megnet.out", 1, 0)?.sigmoid())
    }

    /// `x` is `[N, 3, H, W]` in `[0, 1]`; returns the re-exposed batch.
    pub fn forward<'t>(&self, b: &Bound<'_, 't>, x: Var<'t>, delta_ev: Real) -> Result<Var<'t>> {
        let cond = self.condition(b, x, delta_ev)?;
        let m = self.modulation(b, cond)?;
        self.base(b, x, &m)
    }

    /// Re-renders `input` at `delta_ev` stops.
    pub fn generate(&self, input: &Image, delta_ev: Real) -> Result<Image> {
        let tape = Tape::new();
        let b = self.params.bind(&tape, false);
        let y = self.forward(&b, tape.constant(input.to_tensor()), delta_ev)?;
        Image::from_tensor(&y.value(), ColorSpace::Srgb)
    }

    /// Tape-level stack: the input at 0 plus one generated entry per EV.
    pub fn forward_stack<'t>(
        &self,
        b: &Bound<'_, 't>,
        x: Var<'t>,
        ev_set: &[Real],
    ) -> Result<Vec<(Real, Var<'t>)>> {
        stack_evs(ev_set)?
            .into_iter()
            .map(|ev| {
                if ev == 0.0 {
                    Ok((ev, x))
                } else {
                    Ok((ev, self.forward(b, x, ev)?))
                }
            })
            .collect()
    }

    pub fn generate_stack(&self, input: &Image, ev_set: &[Real]) -> Result<ExposureStack> {
        let evs = stack_evs(ev_set)?;
        let entries = evs
            .into_iter()
            .map(|ev| {
                if ev == 0.0 {
                    Ok((ev, input.clone()))
                } else {
                    Ok((ev, self.generate(input, ev)?))
                }
            })
            .collect::<Result<_>>()?;
        Ok(ExposureStack { entries })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn img(seed: u64, h: usize, w: usize) -> Image {
        let mut s = seed;
        Image::from_fn(h, w, ColorSpace::Srgb, |_, _, _| {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (s >> 11) as Real / (1u64 << 53) as Real
        })
    }

    #[test]
    fn untrained_output_is_a_valid_image() {
        let m = Megnet::new(MegnetConfig::default(), 1);
        let x = img(2, 16, 24);
        let y = m.generate(&x, 1.0).unwrap();
        assert_eq!((y.height(), y.width()), (16, 24));
        assert!(y.pixels().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn heads_start_at_identity_modulation() {
        let m = Megnet::new(MegnetConfig::default(), 3);
        let tape = Tape::new();
        let b = m.params.bind(&tape, false);
        let x = tape.constant(img(4, 8, 8).to_tensor());
        let cond = m.condition(&b, x, -1.0).unwrap();
        let md = m.modulation(&b, cond).unwrap();
        for n in 0..3 {
            assert!(md.alpha[n].value().data().iter().all(|&a| a == 1.0));
            assert!(md.beta[n].value().data().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn stack_layouts() {
        let m = Megnet::new(MegnetConfig::micro(), 5);
        let x = img(6, 8, 8);
        let s = m.generate_stack(&x, &[1.5, -1.0, 1.0, -1.5]).unwrap();
        assert_eq!(s.evs(), vec![-1.5, -1.0, 0.0, 1.0, 1.5]);
        assert_eq!(s.get(0.0).unwrap(), &x);
        assert_eq!(m.generate_stack(&x, &[]).unwrap().len(), 1);
        assert_eq!(m.generate_stack(&x, &[-1.5, 1.5]).unwrap().len(), 3);
        assert!(m.generate_stack(&x, &[1.0, 1.0]).is_err());
        assert!(m.generate_stack(&x, &[0.0]).is_err());
    }
}
