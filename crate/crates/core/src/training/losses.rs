use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::image::Image;
use crate::tensor::Real;

/// Default Charbonnier smoothing constant.
pub const CHARBONNIER_EPS: Real = 1e-3;

fn check(op: &'static str, out: &Var<'_>, target: &Var<'_>) -> Result<()> {
    if out.shape() != target.shape() {
        return Err(Error::shape(
            op,
            format!("output {:?} vs target {:?}", out.shape(), target.shape()),
        ));
    }
    Ok(())
}

/// Mean absolute error.
pub fn l1_loss<'t>(out: Var<'t>, target: Var<'t>) -> Result<Var<'t>> {
    check("l1_loss", &out, &target)?;
    Ok(out.sub(target)?.abs().mean())
}

/// Mean of `sqrt(r^2 + eps^2)`.
pub fn charbonnier_loss<'t>(out: Var<'t>, target: Var<'t>, eps: Real) -> Result<Var<'t>> {
    check("charbonnier_loss", &out, &target)?;
    if !(eps > 0.0) {
        return Err(Error::InvalidArgument(format!("charbonnier eps must be positive, got {eps}")));
    }
    Ok(out.sub(target)?.square().add_scalar(eps * eps).sqrt().mean())
}

fn residuals<'a>(op: &'static str, out: &'a Image, target: &'a Image) -> Result<impl Iterator<Item = Real> + 'a> {
    if !out.same_size(target) {
        return Err(Error::shape(op, "image sizes differ"));
    }
    Ok(out.pixels().iter().zip(target.pixels()).map(|(a, b)| a - b))
}

/// Image-level [`l1_loss`].
pub fn l1(out: &Image, target: &Image) -> Result<Real> {
    let n = out.pixels().len() as Real;
    Ok(residuals("l1", out, target)?.map(Real::abs).sum::<Real>() / n)
}

/// Image-level [`charbonnier_loss`].
pub fn charbonnier(out: &Image, target: &Image, eps: Real) -> Result<Real> {
    if !(eps > 0.0) {
        return Err(Error::InvalidArgument(format!("charbonnier eps must be positive, got {eps}")));
    }
    let n = out.pixels().len() as Real;
    Ok(residuals("charbonnier", out, target)?
        .map(|r| (r * r + eps * eps).sqrt())
        .sum::<Real>()
        / n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tape;
    use crate::image::ColorSpace;
    use crate::tensor::Tensor;

    #[test]
    fn closed_forms() {
        let a = Image::filled(3, 3, 0.2, ColorSpace::Srgb);
        let b = Image::filled(3, 3, 0.7, ColorSpace::Srgb);
        assert_eq!(l1(&a, &a).unwrap(), 0.0);
        assert!((l1(&a, &b).unwrap() - 0.5).abs() < 1e-15);
        assert!((charbonnier(&a, &a, CHARBONNIER_EPS).unwrap() - CHARBONNIER_EPS).abs() < 1e-15);
        assert!(charbonnier(&a, &a, 0.0).is_err());
    }

    #[test]
    fn tape_and_image_versions_agree() {
        let tape = Tape::new();
        let x = Tensor::from_fn([1, 3, 2, 2], |i| i as Real / 12.0);
        let y = Tensor::from_fn([1, 3, 2, 2], |i| ((i * 5) % 12) as Real / 12.0);
        let (xv, yv) = (tape.constant(x.clone()), tape.constant(y.clone()));
        let (xi, yi) = (
            Image::from_tensor(&x, ColorSpace::Srgb).unwrap(),
            Image::from_tensor(&y, ColorSpace::Srgb).unwrap(),
        );
        let l = l1_loss(xv, yv).unwrap().value().item();
        assert!((l - l1(&xi, &yi).unwrap()).abs() < 1e-15);
        let c = charbonnier_loss(xv, yv, 1e-3).unwrap().value().item();
        assert!((c - charbonnier(&xi, &yi, 1e-3).unwrap()).abs() < 1e-15);
    }

    #[test]
    fn charbonnier_gradient_vanishes_at_zero_residual() {
        let tape = Tape::new();
        let x = tape.param(Tensor::full([4], 0.3));
        let t = tape.constant(Tensor::full([4], 0.3));
        let l = charbonnier_loss(x, t, 1e-3).unwrap();
        tape.backward(l).unwrap();
        assert!(x.grad().unwrap().data().iter().all(|&g| g == 0.0));
    }
}
