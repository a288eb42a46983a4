use super::store::ParameterStore;
use super::tape::{backward, NodeId, Tape};
use crate::error::{Error, Result};

/// Gradient magnitude, relative to `max(|loss|, 1)`, below which differences
/// are compared absolutely. Central differences of a loss `L` carry rounding
/// noise of order `|L| * f64::EPSILON / eps`, so the floor scales with `L`.
pub const GRAD_CHECK_FLOOR: f64 = 1e-6;

fn loss_value<F>(store: &ParameterStore, loss_fn: &F) -> Result<f64>
where
    F: Fn(&mut Tape<'_>) -> Result<NodeId>,
{
    let mut tape = Tape::new(store);
    let id = loss_fn(&mut tape)?;
    let v = tape
        .value(id)
        .item()
        .ok_or_else(|| Error::Usage("loss function must return a scalar node".into()))?;
    if !v.is_finite() {
        return Err(Error::numeric(format!("loss evaluated to {v}")));
    }
    Ok(v)
}

/// Largest relative disagreement between reverse-mode gradients and central
/// finite differences over every trainable parameter.
///
/// Relative error is `|ad - fd| / max(|ad|, |fd|, GRAD_CHECK_FLOOR * max(|L|, 1))`.
pub fn grad_check<F>(store: &ParameterStore, loss_fn: F, eps: f64) -> Result<f64>
where
    F: Fn(&mut Tape<'_>) -> Result<NodeId>,
{
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::Domain(format!("finite-difference step must be positive, got {eps}")));
    }
    let (analytic, floor) = {
        let mut tape = Tape::new(store);
        let id = loss_fn(&mut tape)?;
        let v = match tape.value(id).item() {
            Some(v) if v.is_finite() => v,
            Some(v) => return Err(Error::numeric(format!("loss evaluated to {v}"))),
            None => return Err(Error::Usage("loss function must return a scalar node".into())),
        };
        (backward(&tape, id)?, GRAD_CHECK_FLOOR * v.abs().max(1.0))
    };

    let mut probe = store.clone();
    let mut worst = 0.0_f64;
    let ids: Vec<_> = store.ids().filter(|&id| store.is_trainable(id)).collect();
    for id in ids {
        for i in 0..store.values(id).len() {
            let orig = store.values(id)[i];
            probe.values_mut(id)[i] = orig + eps;
            let up = loss_value(&probe, &loss_fn)?;
            probe.values_mut(id)[i] = orig - eps;
            let down = loss_value(&probe, &loss_fn)?;
            probe.values_mut(id)[i] = orig;

            let fd = (up - down) / (2.0 * eps);
            let ad = analytic.group(id)[i];
            let denom = ad.abs().max(fd.abs()).max(floor);
            worst = worst.max((ad - fd).abs() / denom);
        }
    }
    Ok(worst)
}
