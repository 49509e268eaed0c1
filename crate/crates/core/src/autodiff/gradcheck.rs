//! Central finite-difference gradient checking.
//!
//! The finite-difference side only ever evaluates forward values, so it is
//! independent of every backward rule it checks.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Tape, Var};
use crate::error::Result;
use crate::tensor::{Real, Tensor};

/// Step used for central differences.
pub const FD_STEP: Real = 1e-5;
/// Additive guard in the relative-error denominator.
pub const REL_GUARD: Real = 1e-8;
/// Acceptance threshold for the max relative error.
pub const MAX_REL_ERR: Real = 1e-4;

/// Outcome of one gradient check.
#[derive(Clone, Debug)]
pub struct GradcheckReport {
    pub name: String,
    /// Max over checked entries of `|tape - fd| / (|fd| + 1e-8)`.
    pub max_rel_err: Real,
    /// Number of scalar entries compared.
    pub checked: usize,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_err < MAX_REL_ERR
    }
}

/// Relative error used throughout the gradient checks.
pub fn rel_err(tape_grad: Real, fd_grad: Real) -> Real {
    (tape_grad - fd_grad).abs() / (fd_grad.abs() + REL_GUARD)
}

/// Compares tape gradients of the scalar function `f` against central finite
/// differences at `inputs`.
///
/// When `max_entries` is `Some(k)`, at most `k` entries per input (chosen by
/// `seed`) are differenced; otherwise every entry is.
pub fn check<F>(
    name: &str,
    inputs: &[Tensor],
    f: F,
    max_entries: Option<usize>,
    seed: u64,
) -> Result<GradcheckReport>
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>,
{
    let tape_grads: Vec<Tensor> = {
        let tape = Tape::new();
        let vars: Vec<Var<'_>> = inputs.iter().map(|t| tape.param(t.clone())).collect();
        let loss = f(&tape, &vars)?;
        tape.backward(loss)?;
        vars.iter()
            .zip(inputs)
            .map(|(v, t)| v.grad().unwrap_or_else(|| Tensor::zeros(t.shape().to_vec())))
            .collect()
    };

    let eval = |probe: &[Tensor]| -> Result<Real> {
        let tape = Tape::new();
        let vars: Vec<Var<'_>> = probe.iter().map(|t| tape.constant(t.clone())).collect();
        Ok(f(&tape, &vars)?.value().item())
    };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut probe = inputs.to_vec();
    let mut max_rel_err: Real = 0.0;
    let mut checked = 0;
    for (which, input) in inputs.iter().enumerate() {
        let n = input.numel();
        let entries: Vec<usize> = match max_entries {
            Some(k) if k < n => sample(&mut rng, n, k).into_vec(),
            _ => (0..n).collect(),
        };
        for idx in entries {
            let orig = input.data()[idx];
            probe[which].data_mut()[idx] = orig + FD_STEP;
            let up = eval(&probe)?;
            probe[which].data_mut()[idx] = orig - FD_STEP;
            let down = eval(&probe)?;
            probe[which].data_mut()[idx] = orig;
            let fd = (up - down) / (2.0 * FD_STEP);
            max_rel_err = max_rel_err.max(rel_err(tape_grads[which].data()[idx], fd));
            checked += 1;
        }
    }
    Ok(GradcheckReport {
        name: name.to_string(),
        max_rel_err,
        checked,
    })
}

/// Reduces `y` to a scalar with fixed pseudo-random weights so that every
/// output entry carries a distinct upstream gradient.
pub fn weighted_sum<'t>(y: Var<'t>, seed: u64) -> Result<Var<'t>> {
    let shape = y.shape();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let w = Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0));
    Ok(y.mul(y.tape().constant(w))?.sum())
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: Real, hi: Real) -> Tensor {
    Tensor::from_fn(shape.to_vec(), |_| rng.gen_range(lo..hi))
}

/// Values with magnitude in `[0.1, 1)` and random sign, away from the kinks
/// of `relu` and `abs`.
fn away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    Tensor::from_fn(shape.to_vec(), |_| {
        let m = rng.gen_range(0.1..1.0);
        if rng.gen_bool(0.5) {
            m
        } else {
            -m
        }
    })
}

type OpCase = (
    &'static str,
    Vec<Tensor>,
    Box<dyn for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>>,
);

/// Every differentiable op with small random inputs.
fn op_cases(seed: u64) -> Vec<OpCase> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = &mut rng;
    let s = seed;
    let mut cases: Vec<OpCase> = Vec::new();
    macro_rules! case {
        ($name:expr, [$($t:expr),*], $f:expr) => {
            cases.push(($name, vec![$($t),*], Box::new($f)))
        };
    }
    case!("relu", [away_from_zero(r, &[3, 4])], move |_, v| weighted_sum(v[0].relu(), s));
    case!("sigmoid", [uniform(r, &[3, 4], -3.0, 3.0)], move |_, v| weighted_sum(v[0].sigmoid(), s));
    case!("tanh", [uniform(r, &[3, 4], -2.0, 2.0)], move |_, v| weighted_sum(v[0].tanh(), s));
    case!("abs", [away_from_zero(r, &[3, 4])], move |_, v| weighted_sum(v[0].abs(), s));
    case!("square", [uniform(r, &[5], -2.0, 2.0)], move |_, v| weighted_sum(v[0].square(), s));
    case!("sqrt", [uniform(r, &[5], 0.2, 2.0)], move |_, v| weighted_sum(v[0].sqrt(), s));
    case!("scale", [uniform(r, &[4], -1.0, 1.0)], move |_, v| weighted_sum(v[0].scale(-2.5), s));
    case!("add_scalar", [uniform(r, &[4], -1.0, 1.0)], move |_, v| {
        weighted_sum(v[0].add_scalar(0.75), s)
    });
    case!("add", [uniform(r, &[2, 3], -1.0, 1.0), uniform(r, &[2, 3], -1.0, 1.0)], move |_, v| {
        weighted_sum(v[0].add(v[1])?, s)
    });
    case!("sub", [uniform(r, &[2, 3], -1.0, 1.0), uniform(r, &[2, 3], -1.0, 1.0)], move |_, v| {
        weighted_sum(v[0].sub(v[1])?, s)
    });
    case!("mul", [uniform(r, &[2, 3], -1.0, 1.0), uniform(r, &[2, 3], -1.0, 1.0)], move |_, v| {
        weighted_sum(v[0].mul(v[1])?, s)
    });
    case!("sum", [uniform(r, &[2, 3], -1.0, 1.0)], |_, v| Ok(v[0].square().sum()));
    case!("mean", [uniform(r, &[2, 3], -1.0, 1.0)], |_, v| Ok(v[0].square().mean()));
    case!("mean_axis", [uniform(r, &[2, 3, 4], -1.0, 1.0)], move |_, v| {
        weighted_sum(v[0].mean_axis(1)?, s)
    });
    case!("reshape", [uniform(r, &[2, 6], -1.0, 1.0)], move |_, v| {
        weighted_sum(v[0].reshape([3, 4])?, s)
    });
    case!("transpose", [uniform(r, &[2, 5], -1.0, 1.0)], move |_, v| {
        weighted_sum(v[0].transpose()?, s)
    });
    case!("concat", [uniform(r, &[2, 2, 3], -1.0, 1.0), uniform(r, &[2, 1, 3], -1.0, 1.0)], move |_, v| {
        weighted_sum(Var::concat(&[v[0], v[1]], 1)?, s)
    });
    case!("narrow", [uniform(r, &[3, 5], -1.0, 1.0)], move |_, v| {
        weighted_sum(v[0].narrow(1, 1, 3)?, s)
    });
    case!("matmul", [uniform(r, &[3, 4], -1.0, 1.0), uniform(r, &[4, 2], -1.0, 1.0)], move |_, v| {
        weighted_sum(v[0].matmul(v[1])?, s)
    });
    case!("add_row", [uniform(r, &[3, 4], -1.0, 1.0), uniform(r, &[4], -1.0, 1.0)], move |_, v| {
        weighted_sum(v[0].add_row(v[1])?, s)
    });
    case!(
        "conv2d",
        [
            uniform(r, &[2, 3, 6, 6], -1.0, 1.0),
            uniform(r, &[4, 3, 3, 3], -1.0, 1.0),
            uniform(r, &[4], -1.0, 1.0)
        ],
        move |_, v| weighted_sum(v[0].conv2d(v[1], Some(v[2]), 1, 1)?, s)
    );
    case!(
        "conv2d_strided",
        [
            uniform(r, &[1, 2, 8, 8], -1.0, 1.0),
            uniform(r, &[3, 2, 4, 4], -1.0, 1.0),
            uniform(r, &[3], -1.0, 1.0)
        ],
        move |_, v| weighted_sum(v[0].conv2d(v[1], Some(v[2]), 2, 1)?, s)
    );
    case!(
        "conv2d_pointwise",
        [
            uniform(r, &[1, 3, 4, 4], -1.0, 1.0),
            uniform(r, &[5, 3, 1, 1], -1.0, 1.0),
            uniform(r, &[5], -1.0, 1.0)
        ],
        move |_, v| weighted_sum(v[0].conv2d(v[1], Some(v[2]), 1, 0)?, s)
    );
    case!(
        "conv_transpose2d",
        [
            uniform(r, &[2, 3, 4, 4], -1.0, 1.0),
            uniform(r, &[3, 2, 4, 4], -1.0, 1.0),
            uniform(r, &[2], -1.0, 1.0)
        ],
        move |_, v| weighted_sum(v[0].conv_transpose2d(v[1], Some(v[2]), 2, 1)?, s)
    );
    case!(
        "conv_transpose2d_pointwise",
        [uniform(r, &[1, 3, 3, 3], -1.0, 1.0), uniform(r, &[3, 2, 1, 1], -1.0, 1.0)],
        move |_, v| weighted_sum(v[0].conv_transpose2d(v[1], None, 1, 0)?, s)
    );
    case!("avg_pool2d", [uniform(r, &[1, 2, 6, 6], -1.0, 1.0)], move |_, v| {
        weighted_sum(v[0].avg_pool2d(3)?, s)
    });
    case!("bilinear_resize_up", [uniform(r, &[1, 2, 3, 4], -1.0, 1.0)], move |_, v| {
        weighted_sum(v[0].bilinear_resize(7, 5)?, s)
    });
    case!("bilinear_resize_down", [uniform(r, &[1, 1, 8, 8], -1.0, 1.0)], move |_, v| {
        weighted_sum(v[0].bilinear_resize(3, 5)?, s)
    });
    case!("softmax", [uniform(r, &[3, 5], -2.0, 2.0)], move |_, v| {
        weighted_sum(v[0].softmax(1)?, s)
    });
    case!("softmax_axis0", [uniform(r, &[4, 3], -2.0, 2.0)], move |_, v| {
        weighted_sum(v[0].softmax(0)?, s)
    });
    case!(
        "layer_norm",
        [
            uniform(r, &[3, 6], -2.0, 2.0),
            uniform(r, &[6], 0.5, 1.5),
            uniform(r, &[6], -0.5, 0.5)
        ],
        move |_, v| weighted_sum(v[0].layer_norm(v[1], v[2], 1e-5)?, s)
    );
    case!(
        "channel_affine",
        [
            uniform(r, &[2, 3, 2, 2], -1.0, 1.0),
            uniform(r, &[2, 3], -1.0, 1.0),
            uniform(r, &[2, 3], -1.0, 1.0)
        ],
        move |_, v| weighted_sum(v[0].channel_affine(v[1], v[2])?, s)
    );
    case!(
        "spatial_affine",
        [
            uniform(r, &[2, 3, 2, 2], -1.0, 1.0),
            uniform(r, &[2, 1, 2, 2], -1.0, 1.0),
            uniform(r, &[2, 1, 2, 2], -1.0, 1.0)
        ],
        move |_, v| weighted_sum(v[0].spatial_affine(v[1], v[2])?, s)
    );
    cases
}

/// Names of every op covered by [`op_suite`].
pub fn registered_ops() -> Vec<&'static str> {
    op_cases(0).into_iter().map(|(n, _, _)| n).collect()
}

/// Finite-difference check of every registered op on small random inputs.
pub fn op_suite(seed: u64) -> Result<Vec<GradcheckReport>> {
    op_cases(seed)
        .into_iter()
        .map(|(name, inputs, f)| check(name, &inputs, f, None, seed))
        .collect()
}

#[cfg(all(test, not(feature = "f32")))]
mod tests {
    use super::*;

    #[test]
    fn every_op_passes_gradcheck() {
        for seed in [1, 2, 3] {
            for r in op_suite(seed).unwrap() {
                assert!(r.passed(), "{} failed: max rel err {:e}", r.name, r.max_rel_err);
                assert!(r.checked > 0);
            }
        }
    }

    #[test]
    fn detects_a_wrong_gradient() {
        // d/dx of x.abs() at a kink-free point compared against a function
        // whose value is not what the tape differentiates.
        let x = Tensor::new([1], vec![0.5]).unwrap();
        let r = check(
            "bogus",
            &[x],
            |tape, v| {
                // The forward value depends on a constant rebuilt from the
                // input value, which the tape treats as constant.
                let c = tape.constant((*v[0].value()).clone());
                Ok(v[0].mul(c)?.sum())
            },
            None,
            0,
        )
        .unwrap();
        assert!(!r.passed());
    }
}
