use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// `−(1/m)·Σ[log d_real + log(1 − d_fake)]`, with log inputs clamped at 1e-7.
pub fn discriminator_loss<T: Scalar>(g: &mut Graph<T>, d_real: Var, d_fake: Var) -> Result<Var> {
    let (rs, fs) = (g.value(d_real).shape(), g.value(d_fake).shape());
    if rs != fs {
        return Err(Error::ShapeMismatch {
            op: "discriminator_loss",
            lhs: rs.to_vec(),
            rhs: fs.to_vec(),
        });
    }
    let log_real = g.log(d_real);
    let real_term = g.mean(log_real)?;
    let neg_fake = g.neg(d_fake);
    let one_minus = g.add_scalar(neg_fake, T::one());
    let log_fake = g.log(one_minus);
    let fake_term = g.mean(log_fake)?;
    let value = g.add(real_term, fake_term)?;
    Ok(g.neg(value))
}

/// Non-saturating generator objective `−(1/m)·Σ log d_fake`, clamped like the discriminator's.
pub fn generator_loss<T: Scalar>(g: &mut Graph<T>, d_fake: Var) -> Result<Var> {
    let log_fake = g.log(d_fake);
    let mean = g.mean(log_fake)?;
    Ok(g.neg(mean))
}
