use super::optim::Adam;
use super::Trainable;
use crate::error::{Error, Result};
use crate::objectives::{total_loss_and_grad, LossBreakdown, TrainItem};
use crate::verbalizer::LabelWordSet;

/// One optimizer step on the combined relation + entity loss of `batch`.
///
/// The loss is measured before the update. A non-finite loss, gradient or
/// updated parameter aborts with [`Error::NonFiniteLoss`] and leaves the
/// backend untouched.
pub fn finetune_step<B: Trainable>(
    batch: &[TrainItem],
    classes: &[LabelWordSet],
    optimizer: &mut Adam,
    backend: &mut B,
    lambda_e: f64,
) -> Result<LossBreakdown> {
    let step = optimizer.steps_taken() as usize;
    let (loss, grads) = total_loss_and_grad(batch, classes, backend, lambda_e)?;
    let fail = |loss: &LossBreakdown| Error::NonFiniteLoss {
        step,
        l_r: loss.l_r,
        l_e: loss.l_e,
    };
    if !loss.is_finite() || !grads.is_finite() {
        log::error!("non-finite loss or gradient at step {step}: {loss:?}, grad norm {}", grads.norm());
        return Err(fail(&loss));
    }
    let mut updated = backend.param_store().clone();
    optimizer.step(&mut updated, &grads);
    if !updated.values().iter().all(|m| m.is_finite()) {
        log::error!("parameters became non-finite at step {step}");
        return Err(fail(&loss));
    }
    *backend.param_store_mut() = updated;
    Ok(loss)
}
