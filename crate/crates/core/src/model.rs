//! The assembled corrector: generator stack followed by the regressor.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::gradcheck::{check, weighted_sum, GradcheckReport};
use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::megnet::{ExposureStack, Megnet};
use crate::params::Params;
use crate::regnet::{Regnet, ENCODER_STRIDE};
use crate::tensor::{Real, Tensor};
use crate::training::{Checkpoint, Profile, Stage};

#[derive(Clone, Debug)]
pub struct ExReg {
    pub profile: Profile,
    pub ev_set: Vec<Real>,
    pub megnet: Megnet,
    pub regnet: Regnet,
}

/// Generator with the weights of `ckpt`.
pub fn megnet_from_checkpoint(ckpt: &Checkpoint) -> Result<Megnet> {
    let mut m = Megnet::new(ckpt.config.profile.megnet(), 0);
    m.params.load_from(&ckpt.megnet)?;
    Ok(m)
}

impl ExReg {
    pub fn new(profile: Profile, ev_set: &[Real], seed: u64) -> Result<Self> {
        let n = crate::megnet::stack_evs(ev_set)?.len();
        Ok(ExReg {
            profile,
            ev_set: ev_set.to_vec(),
            megnet: Megnet::new(profile.megnet(), crate::rng::derive_seed(seed, "megnet.init")),
            regnet: Regnet::with_stack_len(profile.regnet(), n, crate::rng::derive_seed(seed, "regnet.init"))?,
        })
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let regnet_params = ckpt.regnet.as_ref().ok_or_else(|| {
            Error::Missing("checkpoint has no regnet parameters; train the regnet stage first".into())
        })?;
        let mut model = Self::new(ckpt.config.profile, &ckpt.config.ev_set, 0)?;
        model.megnet.params.load_from(&ckpt.megnet)?;
        model.regnet.params.load_from(regnet_params)?;
        Ok(model)
    }

    /// True when `ckpt` has completed the regressor stage.
    pub fn is_trained(ckpt: &Checkpoint) -> bool {
        ckpt.has_stage(Stage::Regnet) || ckpt.has_stage(Stage::Cotrain)
    }

    pub fn stack(&self, input: &Image) -> Result<ExposureStack> {
        self.megnet.generate_stack(input, &self.ev_set)
    }

    /// Corrected image and exposure map `[H, W]`. Inputs that are not
    /// square multiples of the encoder stride are resized to the profile's
    /// working size and the results resized back.
    pub fn correct(&self, input: &Image) -> Result<(Image, Tensor)> {
        let (h, w) = (input.height(), input.width());
        let native = h == w && h % ENCODER_STRIDE == 0 && h >= ENCODER_STRIDE;
        if native {
            return self.regnet.correct(&self.stack(input)?);
        }
        let n = self.profile.image_size();
        let (y, e) = self.regnet.correct(&self.stack(&input.resize(n, n)?)?)?;
        let tape = Tape::new();
        let e = tape.constant(e.reshape([1, 1, n, n])?).bilinear_resize(h, w)?;
        let e = (*e.value()).clone().reshape([h, w])?;
        Ok((y.resize(h, w)?, e))
    }
}

fn perturbed(params: &Params, rng: &mut ChaCha8Rng) -> Vec<Tensor> {
    params
        .tensors()
        .iter()
        .map(|t| {
            let mut t = t.clone();
            t.data_mut().iter_mut().for_each(|v| *v += rng.gen_range(-0.2..0.2));
            t
        })
        .collect()
}

/// Finite-difference checks through a whole micro generator (8x8 input)
/// and a whole micro regressor (16x16 stack). Parameters are jittered away
/// from their structured initial values first, and at most `max_entries`
/// entries per tensor are differenced.
pub fn network_gradchecks(seed: u64, max_entries: usize) -> Result<Vec<GradcheckReport>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let megnet = Megnet::new(crate::megnet::MegnetConfig::micro(), seed);
    let mut inputs = vec![Tensor::from_fn([1, 3, 8, 8], |_| rng.gen_range(0.05..0.95))];
    inputs.extend(perturbed(&megnet.params, &mut rng));
    let mg = check(
        "megnet_forward",
        &inputs,
        |_, vars| {
            let b = megnet.params.bind_vars(&vars[1..])?;
            weighted_sum(megnet.forward(&b, vars[0], 0.7)?, seed)
        },
        Some(max_entries),
        seed,
    )?;

    let regnet = Regnet::new(crate::regnet::RegnetConfig::micro(), seed)?;
    let evs = [-1.5, -1.0, 0.0, 1.0, 1.5];
    let mut inputs: Vec<Tensor> = evs
        .iter()
        .map(|_| Tensor::from_fn([1, 3, 16, 16], |_| rng.gen_range(0.05..0.95)))
        .collect();
    inputs.extend(perturbed(&regnet.params, &mut rng));
    let rg = check(
        "regnet_forward",
        &inputs,
        |_, vars| {
            let b = regnet.params.bind_vars(&vars[evs.len()..])?;
            let stack: Vec<(Real, Var<'_>)> = evs.iter().copied().zip(vars.iter().copied()).collect();
            let (y, e) = regnet.forward(&b, &stack)?;
            let le = weighted_sum(e, seed ^ 1)?;
            // Softmax shift invariance leaves some key entries with exactly
            // zero gradient; a small loss keeps their finite-difference
            // rounding noise under the relative-error guard.
            Ok(weighted_sum(y, seed)?.add(le)?.scale(1e-3))
        },
        Some(max_entries),
        seed,
    )?;
    Ok(vec![mg, rg])
}
