use std::collections::BTreeMap;

use super::{AutodiffError, NodeId, Tape, Tensor};

/// Named parameter collection. `BTreeMap` keeps iteration (and therefore
/// gradient traversal, serialization, and update order) deterministic.
pub type NamedTensors = BTreeMap<String, Tensor>;

/// Outcome of a finite-difference gradient check.
#[derive(Clone, Debug)]
pub struct GradCheckReport {
    /// max over parameters of |analytic - numeric| / max(|analytic|, |numeric|, 1e-8)
    pub max_relative_error: f64,
    pub worst_parameter: String,
    pub worst_index: usize,
}

impl GradCheckReport {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_relative_error < tolerance
    }
}

const REL_ERR_FLOOR: f64 = 1e-8;

fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERR_FLOOR)
}

/// Compare the tape's reverse-mode gradients against central finite
/// differences `(f(p+h) - f(p-h)) / 2h`, elementwise over every parameter.
///
/// `build` must construct the scalar objective from the supplied leaves and
/// be deterministic across calls: any stochastic input (epsilon draws,
/// dropout masks) has to be pinned by the caller, typically by cloning a
/// seeded RNG inside the closure.
pub fn grad_check<E, F>(
    params: &NamedTensors,
    step: f64,
    mut build: F,
) -> Result<GradCheckReport, E>
where
    E: From<AutodiffError>,
    F: FnMut(&mut Tape, &BTreeMap<String, NodeId>) -> Result<NodeId, E>,
{
    if !(step > 0.0) {
        return Err(E::from(AutodiffError::NonPositiveStep(step)));
    }

    let eval = |params: &NamedTensors,
                build: &mut F,
                want_grads: bool|
     -> Result<(f64, Option<NamedTensors>), E> {
        let mut tape = Tape::new();
        let mut nodes = BTreeMap::new();
        for (name, tensor) in params {
            nodes.insert(name.clone(), tape.leaf(tensor.clone()));
        }
        let root = build(&mut tape, &nodes)?;
        let value = tape.scalar_value(root).map_err(E::from)?;
        if !value.is_finite() {
            return Err(E::from(AutodiffError::NonFinite {
                context: "grad_check objective".to_string(),
            }));
        }
        if !want_grads {
            return Ok((value, None));
        }
        tape.backward(root).map_err(E::from)?;
        let grads = nodes
            .iter()
            .map(|(name, &id)| (name.clone(), tape.grad_tensor(id)))
            .collect();
        Ok((value, Some(grads)))
    };

    let (_, analytic) = eval(params, &mut build, true)?;
    let analytic = analytic.expect("gradients requested");

    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        worst_parameter: String::new(),
        worst_index: 0,
    };

    let mut probe = params.clone();
    for (name, tensor) in params {
        for i in 0..tensor.numel() {
            let original = tensor.data()[i];

            probe.get_mut(name).unwrap().data_mut()[i] = original + step;
            let (plus, _) = eval(&probe, &mut build, false)?;
            probe.get_mut(name).unwrap().data_mut()[i] = original - step;
            let (minus, _) = eval(&probe, &mut build, false)?;
            probe.get_mut(name).unwrap().data_mut()[i] = original;

            let numeric = (plus - minus) / (2.0 * step);
            let rel = relative_error(analytic[name].data()[i], numeric);
            if rel > report.max_relative_error {
                report.max_relative_error = rel;
                report.worst_parameter = name.clone();
                report.worst_index = i;
            }
        }
    }
    Ok(report)
}
