use crate::autodiff::{NamedTensors, Tensor};
use crate::net::ModelParams;

use super::TrainError;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPSILON: f64 = 1e-8;

/// First/second moment estimates plus the step counter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: NamedTensors,
    pub v: NamedTensors,
    pub step: u64,
}

impl AdamState {
    /// Zero moments for every trainable tensor of the model.
    pub fn new(params: &ModelParams) -> Self {
        let mut m = NamedTensors::new();
        let mut v = NamedTensors::new();
        for name in params.trainable_names() {
            let shape = params[&name].shape().to_vec();
            m.insert(name.clone(), Tensor::zeros(shape.clone()));
            v.insert(name, Tensor::zeros(shape));
        }
        AdamState {
            m,
            v,
            step: 0,
        }
    }

    /// One bias-corrected update applied elementwise to every trainable
    /// parameter. Gradients must be finite; missing gradients are treated
    /// as zero (the parameter keeps its momentum trajectory).
    pub fn apply(
        &mut self,
        params: &mut ModelParams,
        grads: &NamedTensors,
        learning_rate: f64,
    ) -> Result<(), TrainError> {
        self.step += 1;
        let t = self.step as i32;
        let m_corr = 1.0 - ADAM_BETA1.powi(t);
        let v_corr = 1.0 - ADAM_BETA2.powi(t);
        let names = params.trainable_names();
        for name in names {
            let zero;
            let grad = match grads.get(&name) {
                Some(g) => g,
                None => {
                    zero = Tensor::zeros(params[&name].shape().to_vec());
                    &zero
                }
            };
            if !grad.all_finite() {
                return Err(TrainError::NonFiniteGradient(name.clone()));
            }
            let m = self.m.get_mut(&name).expect("moment tensor");
            let v = self.v.get_mut(&name).expect("moment tensor");
            let p = params
                .tensors_mut()
                .get_mut(&name)
                .expect("trainable tensor");
            for ((pi, gi), (mi, vi)) in p
                .data_mut()
                .iter_mut()
                .zip(grad.data())
                .zip(m.data_mut().iter_mut().zip(v.data_mut().iter_mut()))
            {
                *mi = ADAM_BETA1 * *mi + (1.0 - ADAM_BETA1) * gi;
                *vi = ADAM_BETA2 * *vi + (1.0 - ADAM_BETA2) * gi * gi;
                let m_hat = *mi / m_corr;
                let v_hat = *vi / v_corr;
                *pi -= learning_rate * m_hat / (v_hat.sqrt() + ADAM_EPSILON);
            }
        }
        Ok(())
    }
}

/// L2 norm over all gradient entries, accumulated in sorted-name order.
pub fn global_norm(grads: &NamedTensors) -> f64 {
    grads
        .values()
        .flat_map(|t| t.data())
        .map(|g| g * g)
        .sum::<f64>()
        .sqrt()
}

/// Scale gradients in place so their global norm does not exceed
/// `max_norm`.
pub fn clip_global_norm(grads: &mut NamedTensors, max_norm: f64) {
    let norm = global_norm(grads);
    if norm > max_norm {
        let scale = max_norm / norm;
        for t in grads.values_mut() {
            for g in t.data_mut() {
                *g *= scale;
            }
        }
    }
}
