//! Exposure regression network.
//!
//! Every stack entry is encoded to a token grid at 1/16 resolution. A
//! full-resolution exposure map `E*` is predicted from the whole stack and
//! pooled to the grid. Two cross-attention blocks then regress a corrected
//! token at each `(i, j, e*_ij)` from the `(i, j, e)` context tokens. The
//! decoder upsamples the corrected grid, adding encoder features of the
//! 0-EV input adjusted by `E*`-conditioned scale and bias maps.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::image::{ColorSpace, Image};
use crate::megnet::{ExposureStack, EV_SCALE};
use crate::params::{Bound, Params};
use crate::tensor::{Real, Tensor};

/// Bound on predicted exposures, in stops.
pub const EXPOSURE_LIMIT: Real = 1.5;
/// Spatial reduction of the encoder.
pub const ENCODER_STRIDE: usize = 16;
const LN_EPS: Real = 1e-5;

#[derive(Clone, Debug, PartialEq)]
pub struct RegnetConfig {
    /// Output channels of the four stride-2 encoder layers; the last is the
    /// token width.
    pub enc_channels: [usize; 4],
    pub predictor_width: usize,
    pub predictor_layers: usize,
    pub attn_width: usize,
    pub heads: usize,
    pub fam_hidden: usize,
}

impl Default for RegnetConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl RegnetConfig {
    pub fn desk() -> Self {
        RegnetConfig {
            enc_channels: [16, 24, 32, 32],
            predictor_width: 16,
            predictor_layers: 7,
            attn_width: 128,
            heads: 8,
            fam_hidden: 8,
        }
    }

    /// Widths matching the 512 px / 192-channel token setting.
    pub fn full() -> Self {
        RegnetConfig {
            enc_channels: [48, 96, 144, 192],
            predictor_width: 32,
            predictor_layers: 7,
            attn_width: 192,
            heads: 8,
            fam_hidden: 16,
        }
    }

    /// Tiny widths for finite-difference checks.
    pub fn micro() -> Self {
        RegnetConfig {
            enc_channels: [3, 3, 4, 4],
            predictor_width: 3,
            predictor_layers: 7,
            attn_width: 8,
            heads: 2,
            fam_hidden: 2,
        }
    }

    pub fn token_channels(&self) -> usize {
        self.enc_channels[3]
    }

    pub fn validate(&self) -> Result<()> {
        if self.heads == 0 || self.attn_width % self.heads != 0 {
            return Err(Error::InvalidArgument(format!(
                "attention width {} is not divisible by {} heads",
                self.attn_width, self.heads
            )));
        }
        if self.predictor_layers < 2 {
            return Err(Error::InvalidArgument("exposure predictor needs at least 2 layers".into()));
        }
        if self.enc_channels.contains(&0) || self.predictor_width == 0 || self.fam_hidden == 0 {
            return Err(Error::InvalidArgument("zero channel width".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct Regnet {
    pub config: RegnetConfig,
    pub params: Params,
}

/// Encoder output for one stack entry.
pub struct TokenGrid<'t> {
    /// `[1, C_tok, G, G]`.
    pub tokens: Var<'t>,
    pub ev: Real,
}

impl TokenGrid<'_> {
    pub fn size(&self) -> usize {
        self.tokens.shape()[2]
    }
}

/// Token grids plus the 0-EV entry's per-layer features.
pub struct Encoded<'t> {
    pub grids: Vec<TokenGrid<'t>>,
    pub skips: [Var<'t>; 4],
}

/// Intermediate values of the two attention blocks.
#[derive(Default)]
pub struct AttentionTrace<'t> {
    /// Per block, per head: `[queries, context]` row-stochastic weights.
    pub weights: Vec<Vec<Var<'t>>>,
    /// Per block: concatenated head outputs before the output projection.
    pub heads: Vec<Var<'t>>,
    /// Per block: value embeddings `[context, attn_width]`.
    pub values: Vec<Var<'t>>,
}

/// Cell-centre coordinates of a `g x g` grid, row-major, as `[g*g, 2]`.
pub fn grid_coords(g: usize) -> Tensor {
    Tensor::from_fn([g * g, 2], |k| {
        let (cell, axis) = (k / 2, k % 2);
        let idx = if axis == 0 { cell / g } else { cell % g };
        (idx as Real + 0.5) / g as Real
    })
}

/// `[1, C, G, G]` to row-major tokens `[G*G, C]`.
fn grid_to_rows<'t>(x: Var<'t>) -> Result<Var<'t>> {
    let s = x.shape();
    x.reshape([s[1], s[2] * s[3]])?.transpose()
}

fn rows_to_grid<'t>(x: Var<'t>, g: usize) -> Result<Var<'t>> {
    let c = x.shape()[1];
    x.transpose()?.reshape([1, c, g, g])
}

/// Block-mean pooling of `[1, 1, H, W]` to `[1, 1, G, G]`.
pub fn pool_exposure<'t>(e_star: Var<'t>, g: usize) -> Result<Var<'t>> {
    let s = e_star.shape();
    if g == 0 || s[2] % g != 0 || s[3] % g != 0 || s[2] / g != s[3] / g {
        return Err(Error::InvalidArgument(format!(
            "exposure map {}x{} cannot be pooled to {g}x{g}",
            s[2], s[3]
        )));
    }
    e_star.avg_pool2d(s[2] / g)
}

impl Regnet {
    pub fn new(config: RegnetConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = Params::new();
        let ch = config.enc_channels;
        let c = config.token_channels();
        let a = config.attn_width;

        let mut cin = 3;
        for (i, &co) in ch.iter().enumerate() {
            p.add_conv(&format!("regnet.enc{i}"), co, cin, 4, &mut rng);
            cin = co;
        }

        let pw = config.predictor_width;
        let last = config.predictor_layers - 1;
        // Input channel count depends on the stack length, so the first
        // layer is sized for the default five-entry stack and re-created by
        // `with_stack_len` when needed.
        p.add_conv("regnet.pred0", pw, 4 * 5, 3, &mut rng);
        for l in 1..last {
            p.add_conv(&format!("regnet.pred{l}"), pw, pw, 3, &mut rng);
        }
        p.add_conv(&format!("regnet.pred{last}"), 1, pw, 3, &mut rng);

        p.add_linear("regnet.att1.coord0", 3, a, &mut rng);
        p.add_linear("regnet.att1.coord1", a, a, &mut rng);
        p.add_linear("regnet.att1.value0", c, a, &mut rng);
        p.add_linear("regnet.att1.value1", a, a, &mut rng);
        p.add_linear("regnet.att1.out", a, a, &mut rng);
        p.insert("regnet.att1.ln.g", Tensor::ones([a]));
        p.insert("regnet.att1.ln.b", Tensor::zeros([a]));

        p.add_linear("regnet.att2.key0", 3 + c, a, &mut rng);
        p.add_linear("regnet.att2.key1", a, a, &mut rng);
        p.add_linear("regnet.att2.query0", 3 + a, a, &mut rng);
        p.add_linear("regnet.att2.query1", a, a, &mut rng);
        p.add_linear("regnet.att2.value0", c, a, &mut rng);
        p.add_linear("regnet.att2.value1", a, a, &mut rng);
        p.add_linear("regnet.att2.out", a, a, &mut rng);
        p.insert("regnet.att2.ln.g", Tensor::ones([a]));
        p.insert("regnet.att2.ln.b", Tensor::zeros([a]));
        p.add_linear("regnet.att2.token", a, c, &mut rng);

        for n in 0..4 {
            for kind in ["scale", "bias"] {
                let name = format!("regnet.fam{n}.{kind}");
                p.add_conv(&format!("{name}0"), config.fam_hidden, 1, 1, &mut rng);
                p.insert(format!("{name}1.w"), Tensor::zeros([1, config.fam_hidden, 1, 1]));
                let init = if kind == "scale" { 1.0 } else { 0.0 };
                p.insert(format!("{name}1.b"), Tensor::full([1], init));
            }
        }

        // Decoder mirrors the encoder: dec0 maps H/16 -> H/8 and so on.
        let outs = [ch[2], ch[1], ch[0], 3];
        let mut cin = c;
        for (i, &co) in outs.iter().enumerate() {
            p.add_deconv(&format!("regnet.dec{i}"), cin, co, 4, &mut rng);
            cin = co;
        }
        Ok(Regnet { config, params: p })
    }

    /// Regnet sized for stacks of `n` entries.
    pub fn with_stack_len(config: RegnetConfig, n: usize, seed: u64) -> Result<Self> {
        let mut r = Self::new(config, seed)?;
        if n == 0 {
            return Err(Error::InvalidArgument("stack must be non-empty".into()));
        }
        if n != 5 {
            let mut rng = ChaCha8Rng::seed_from_u64(crate::rng::derive_seed(seed, "pred0"));
            r.params.add_conv("regnet.pred0", r.config.predictor_width, 4 * n, 3, &mut rng);
        }
        Ok(r)
    }

    /// Number of stack entries the predictor accepts.
    pub fn stack_len(&self) -> usize {
        self.params.get("regnet.pred0.w").map_or(0, |w| w.shape()[1] / 4)
    }

    fn check_stack(&self, stack: &[(Real, Var<'_>)]) -> Result<(usize, usize)> {
        let first = stack
            .first()
            .ok_or_else(|| Error::InvalidArgument("empty exposure stack".into()))?;
        let s = first.1.shape();
        let (h, w) = (s[2], s[3]);
        if h % ENCODER_STRIDE != 0 || w % ENCODER_STRIDE != 0 || h != w {
            return Err(Error::InvalidArgument(format!(
                "input {h}x{w} must be square with sides divisible by {ENCODER_STRIDE}"
            )));
        }
        if stack.iter().any(|(_, v)| v.shape() != s) {
            return Err(Error::shape("regnet", "stack entries differ in size"));
        }
        if stack.len() != self.stack_len() {
            return Err(Error::InvalidArgument(format!(
                "exposure predictor expects {} stack entries, got {}",
                self.stack_len(),
                stack.len()
            )));
        }
        Ok((h, w))
    }

    /// Encodes every entry; keeps per-layer features of the 0-EV entry.
    pub fn encode<'t>(&self, b: &Bound<'_, 't>, stack: &[(Real, Var<'t>)]) -> Result<Encoded<'t>> {
        let s = stack
            .first()
            .ok_or_else(|| Error::InvalidArgument("empty exposure stack".into()))?
            .1
            .shape();
        if s[2] % ENCODER_STRIDE != 0 || s[3] % ENCODER_STRIDE != 0 {
            return Err(Error::InvalidArgument(format!(
                "input {}x{} is not divisible by {ENCODER_STRIDE}",
                s[2], s[3]
            )));
        }
        let zero = stack
            .iter()
            .position(|e| e.0 == 0.0)
            .ok_or_else(|| Error::InvalidArgument("stack lacks the 0-EV input".into()))?;
        let images: Vec<Var<'t>> = stack.iter().map(|e| e.1).collect();
        let mut h = Var::concat(&images, 0)?;
        let mut skips = Vec::with_capacity(4);
        for i in 0..4 {
            h = b.conv(h, &format!("regnet.enc{i}"), 2, 1)?;
            if i < 3 {
                h = h.relu();
            }
            skips.push(h.narrow(0, zero, 1)?);
        }
        let grids = stack
            .iter()
            .enumerate()
            .map(|(k, e)| {
                Ok(TokenGrid {
                    tokens: h.narrow(0, k, 1)?,
                    ev: e.0,
                })
            })
            .collect::<Result<_>>()?;
        let skips: [Var<'t>; 4] = skips.try_into().map_err(|_| Error::shape("encode", "skip count"))?;
        Ok(Encoded { grids, skips })
    }

    /// Full-resolution exposure map `[1, 1, H, W]` in `[-1.5, 1.5]`.
    pub fn predict_exposure<'t>(&self, b: &Bound<'_, 't>, stack: &[(Real, Var<'t>)]) -> Result<Var<'t>> {
        let tape = stack
            .first()
            .ok_or_else(|| Error::InvalidArgument("empty exposure stack".into()))?
            .1
            .tape();
        let mut parts = Vec::with_capacity(2 * stack.len());
        for (ev, img) in stack {
            let s = img.shape();
            parts.push(*img);
            parts.push(tape.constant(Tensor::full([1, 1, s[2], s[3]], ev / EV_SCALE)));
        }
        let mut h = Var::concat(&parts, 1)?;
        let last = self.config.predictor_layers - 1;
        for l in 0..last {
            h = b.conv(h, &format!("regnet.pred{l}"), 1, 1)?.relu();
        }
        Ok(b.conv(h, &format!("regnet.pred{last}"), 1, 1)?.tanh().scale(EXPOSURE_LIMIT))
    }

    fn mlp<'t>(b: &Bound<'_, 't>, x: Var<'t>, name: &str) -> Result<Var<'t>> {
        let h = b.linear(x, &format!("{name}0"))?.relu();
        b.linear(h, &format!("{name}1"))
    }

    /// Multi-head scaled dot-product attention. Returns concatenated head
    /// outputs `[queries, attn_width]` and per-head weights.
    fn attend<'t>(&self, q: Var<'t>, k: Var<'t>, v: Var<'t>) -> Result<(Var<'t>, Vec<Var<'t>>)> {
        let heads = self.config.heads;
        let dh = self.config.attn_width / heads;
        let scale = 1.0 / (dh as Real).sqrt();
        let mut outs = Vec::with_capacity(heads);
        let mut weights = Vec::with_capacity(heads);
        for hd in 0..heads {
            let qh = q.narrow(1, hd * dh, dh)?;
            let kh = k.narrow(1, hd * dh, dh)?;
            let vh = v.narrow(1, hd * dh, dh)?;
            let wts = qh.matmul(kh.transpose()?)?.scale(scale).softmax(1)?;
            outs.push(wts.matmul(vh)?);
            weights.push(wts);
        }
        Ok((Var::concat(&outs, 1)?, weights))
    }

    /// Two cross-attention blocks from context grids to queries at
    /// `(i, j, e*_ij)`. `e_star` is `[1, 1, G, G]`. Returns `[1, C_tok, G, G]`.
    pub fn cross_attend<'t>(
        &self,
        b: &Bound<'_, 't>,
        grids: &[TokenGrid<'t>],
        e_star: Var<'t>,
        mut trace: Option<&mut AttentionTrace<'t>>,
    ) -> Result<Var<'t>> {
        let first = grids
            .first()
            .ok_or_else(|| Error::InvalidArgument("no context grids".into()))?;
        let g = first.size();
        let c = self.config.token_channels();
        let tape = first.tokens.tape();
        for grid in grids {
            let s = grid.tokens.shape();
            if s != [1, c, g, g] {
                return Err(Error::shape(
                    "cross_attend",
                    format!("grid shape {s:?}, expected [1, {c}, {g}, {g}]"),
                ));
            }
        }
        if e_star.shape() != [1, 1, g, g] {
            return Err(Error::shape(
                "cross_attend",
                format!("pooled exposure {:?}, expected [1, 1, {g}, {g}]", e_star.shape()),
            ));
        }
        let coords = grid_coords(g);
        let ctx_coords = Tensor::from_fn([grids.len() * g * g, 3], |k| {
            let (row, col) = (k / 3, k % 3);
            let (s, cell) = (row / (g * g), row % (g * g));
            if col < 2 {
                coords.data()[cell * 2 + col]
            } else {
                grids[s].ev / EV_SCALE
            }
        });
        let ctx_coords = tape.constant(ctx_coords);
        let feats = Var::concat(
            &grids.iter().map(|gr| grid_to_rows(gr.tokens)).collect::<Result<Vec<_>>>()?,
            0,
        )?;
        let e_rows = e_star.reshape([g * g, 1])?.scale(1.0 / EV_SCALE);
        let q_coords = Var::concat(&[tape.constant(coords), e_rows], 1)?;

        // Block 1: coordinates only in keys and queries.
        let k1 = Self::mlp(b, ctx_coords, "regnet.att1.coord")?;
        let q1 = Self::mlp(b, q_coords, "regnet.att1.coord")?;
        let v1 = Self::mlp(b, feats, "regnet.att1.value")?;
        let (h1, w1) = self.attend(q1, k1, v1)?;
        let f1 = q1
            .add(b.linear(h1, "regnet.att1.out")?)?
            .layer_norm(b.var("regnet.att1.ln.g")?, b.var("regnet.att1.ln.b")?, LN_EPS)?;

        // Block 2: coordinates concatenated with features.
        let k2 = Self::mlp(b, Var::concat(&[ctx_coords, feats], 1)?, "regnet.att2.key")?;
        let q2 = Self::mlp(b, Var::concat(&[q_coords, f1], 1)?, "regnet.att2.query")?;
        let v2 = Self::mlp(b, feats, "regnet.att2.value")?;
        let (h2, w2) = self.attend(q2, k2, v2)?;
        let f2 = q2
            .add(b.linear(h2, "regnet.att2.out")?)?
            .layer_norm(b.var("regnet.att2.ln.g")?, b.var("regnet.att2.ln.b")?, LN_EPS)?;
        let tokens = b.linear(f2, "regnet.att2.token")?;

        if let Some(t) = trace.as_deref_mut() {
            t.weights = vec![w1, w2];
            t.heads = vec![h1, h2];
            t.values = vec![v1, v2];
        }
        rows_to_grid(tokens, g)
    }

    /// `S_n * ENf_n + B_n` with `S_n`, `B_n` from the resized exposure map.
    pub fn fam_adjust<'t>(&self, b: &Bound<'_, 't>, n: usize, enf: Var<'t>, e_star: Var<'t>) -> Result<Var<'t>> {
        let s = enf.shape();
        let e = e_star.bilinear_resize(s[2], s[3])?;
        let map = |kind: &str| -> Result<Var<'t>> {
            let name = format!("regnet.fam{n}.{kind}");
            let h = b.conv(e, &format!("{name}0"), 1, 0)?.relu();
            b.conv(h, &format!("{name}1"), 1, 0)
        };
        enf.spatial_affine(map("scale")?, map("bias")?)
    }

    /// Corrected image `[1, 3, H, W]` and exposure map `[1, 1, H, W]`.
    pub fn forward<'t>(&self, b: &Bound<'_, 't>, stack: &[(Real, Var<'t>)]) -> Result<(Var<'t>, Var<'t>)> {
        self.forward_traced(b, stack, None)
    }

    pub fn forward_traced<'t>(
        &self,
        b: &Bound<'_, 't>,
        stack: &[(Real, Var<'t>)],
        trace: Option<&mut AttentionTrace<'t>>,
    ) -> Result<(Var<'t>, Var<'t>)> {
        let (h, _) = self.check_stack(stack)?;
        let g = h / ENCODER_STRIDE;
        let enc = self.encode(b, stack)?;
        let e_star = self.predict_exposure(b, stack)?;
        let pooled = pool_exposure(e_star, g)?;
        let tokens = self.cross_attend(b, &enc.grids, pooled, trace)?;
        let mut x = tokens.add(self.fam_adjust(b, 3, enc.skips[3], e_star)?)?;
        for i in 0..3 {
            x = b.deconv(x, &format!("regnet.dec{i}"), 2, 1)?.relu();
            x = x.add(self.fam_adjust(b, 2 - i, enc.skips[2 - i], e_star)?)?;
        }
        let y = b.deconv(x, "regnet.dec3", 2, 1)?.sigmoid();
        Ok((y, e_star))
    }

    /// Inference on an image-level stack.
    pub fn correct(&self, stack: &ExposureStack) -> Result<(Image, Tensor)> {
        let tape = Tape::new();
        let b = self.params.bind(&tape, false);
        let vars: Vec<(Real, Var<'_>)> = stack
            .entries
            .iter()
            .map(|(ev, img)| (*ev, tape.constant(img.to_tensor())))
            .collect();
        let (y, e) = self.forward(&b, &vars)?;
        let s = e.shape();
        let map = (*e.value()).clone().reshape([s[2], s[3]])?;
        Ok((Image::from_tensor(&y.value(), ColorSpace::Srgb)?, map))
    }
}
