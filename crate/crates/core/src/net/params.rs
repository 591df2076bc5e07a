
use crate::autodiff::{NamedTensors, Tensor};

use super::{NetConfig, NetError};

/// What a named tensor is, for initialization and training purposes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TensorKind {
    /// Glorot-initialized weight matrix.
    Weight,
    /// Zero-initialized bias vector.
    Bias,
    /// Non-trainable normalization constant.
    Constant,
}

#[derive(Clone, Debug)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub kind: TensorKind,
}

const GATES: [&str; 3] = ["update", "reset", "cand"];

fn stack_specs(prefix: &str, cfg: &NetConfig, input_dim: usize, output_dim: usize) -> Vec<ParamSpec> {
    let h = cfg.hidden_units;
    let k = cfg.conv_kernel;
    let mut specs = Vec::new();
    let mut push = |name: String, shape: Vec<usize>, kind: TensorKind| {
        specs.push(ParamSpec { name, shape, kind })
    };

    let mut in_ch = input_dim;
    for (layer, _) in cfg.conv_dilations.iter().enumerate() {
        push(
            format!("{prefix}.conv{}.w", layer + 1),
            vec![h, k * in_ch],
            TensorKind::Weight,
        );
        push(format!("{prefix}.conv{}.b", layer + 1), vec![h], TensorKind::Bias);
        in_ch = h;
    }
    for gate in GATES {
        push(format!("{prefix}.gru.{gate}.w"), vec![h, h], TensorKind::Weight);
        push(format!("{prefix}.gru.{gate}.u"), vec![h, h], TensorKind::Weight);
        push(
            format!("{prefix}.gru.{gate}.v"),
            vec![h, output_dim],
            TensorKind::Weight,
        );
        push(format!("{prefix}.gru.{gate}.b"), vec![h], TensorKind::Bias);
    }
    push(format!("{prefix}.out.w"), vec![output_dim, h], TensorKind::Weight);
    push(format!("{prefix}.out.b"), vec![output_dim], TensorKind::Bias);
    specs
}

/// Encoder and decoder weights plus the fixed normalization constants,
/// stored as named tensors. Names double as the checkpoint schema.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    config: NetConfig,
    tensors: NamedTensors,
}

impl ModelParams {
    /// Layout of every tensor for a given config, in definition order.
    pub fn specs(cfg: &NetConfig) -> Vec<ParamSpec> {
        let mut specs = stack_specs("enc", cfg, cfg.encoder_input_dim(), cfg.encoder_output_dim());
        specs.extend(stack_specs(
            "dec",
            cfg,
            cfg.decoder_input_dim(),
            cfg.decoder_output_dim(),
        ));
        let feat = cfg.feature_dim();
        let spec_dim = cfg.spectra_dim;
        for (name, len) in [
            ("enc.norm.mean", feat),
            ("enc.norm.std", feat),
            ("dec.denorm.mean", spec_dim),
            ("dec.denorm.std", spec_dim),
        ] {
            specs.push(ParamSpec {
                name: name.to_string(),
                shape: vec![len],
                kind: TensorKind::Constant,
            });
        }
        specs
    }

    /// Assemble from an initializer callback (weights) plus normalization
    /// statistics over the full feature vector. The decoder denormalizes
    /// with the spectra block of the same statistics.
    pub fn build(
        config: NetConfig,
        feat_mean: &[f64],
        feat_std: &[f64],
        mut init_weight: impl FnMut(&[usize]) -> Tensor,
    ) -> Result<Self, NetError> {
        config.validate()?;
        if feat_mean.len() != config.feature_dim() || feat_std.len() != config.feature_dim() {
            return Err(NetError::Config(format!(
                "normalization stats have dim {}, config expects {}",
                feat_mean.len(),
                config.feature_dim()
            )));
        }
        for (dim, &s) in feat_std.iter().enumerate() {
            if !(s > 0.0) {
                return Err(NetError::NonPositiveStd { dim, value: s });
            }
        }
        let d_e = config.excitation_dim;
        let mut tensors = NamedTensors::new();
        for spec in Self::specs(&config) {
            let tensor = match spec.kind {
                TensorKind::Weight => {
                    let t = init_weight(&spec.shape);
                    assert_eq!(t.shape(), spec.shape.as_slice(), "initializer shape");
                    t
                }
                TensorKind::Bias => Tensor::zeros(spec.shape.clone()),
                TensorKind::Constant => {
                    let data = match spec.name.as_str() {
                        "enc.norm.mean" => feat_mean.to_vec(),
                        "enc.norm.std" => feat_std.to_vec(),
                        "dec.denorm.mean" => feat_mean[d_e..].to_vec(),
                        "dec.denorm.std" => feat_std[d_e..].to_vec(),
                        other => unreachable!("unknown constant {other}"),
                    };
                    Tensor::vector(data)
                }
            };
            tensors.insert(spec.name, tensor);
        }
        Ok(ModelParams { config, tensors })
    }

    /// Zero-weight model (biases and weights all zero); used by tests that
    /// exercise closed-form behaviors.
    pub fn zeros(config: NetConfig, feat_mean: &[f64], feat_std: &[f64]) -> Result<Self, NetError> {
        Self::build(config, feat_mean, feat_std, |shape| {
            Tensor::zeros(shape.to_vec())
        })
    }

    /// Reassemble from named tensors (checkpoint load). Every spec'd
    /// tensor must be present with the right shape.
    pub fn from_tensors(config: NetConfig, tensors: &NamedTensors) -> Result<Self, NetError> {
        config.validate()?;
        let mut own = NamedTensors::new();
        for spec in Self::specs(&config) {
            let tensor = tensors
                .get(&spec.name)
                .ok_or_else(|| NetError::MissingParam(spec.name.clone()))?;
            if tensor.shape() != spec.shape.as_slice() {
                return Err(NetError::ParamShape {
                    name: spec.name.clone(),
                    expected: spec.shape.clone(),
                    got: tensor.shape().to_vec(),
                });
            }
            own.insert(spec.name, tensor.clone());
        }
        for (dim, &s) in own["enc.norm.std"].data().iter().enumerate() {
            if !(s > 0.0) {
                return Err(NetError::NonPositiveStd { dim, value: s });
            }
        }
        Ok(ModelParams { config, tensors: own })
    }

    pub fn config(&self) -> &NetConfig {
        &self.config
    }

    pub fn tensors(&self) -> &NamedTensors {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut NamedTensors {
        &mut self.tensors
    }

    pub fn get(&self, name: &str) -> Result<&Tensor, NetError> {
        self.tensors
            .get(name)
            .ok_or_else(|| NetError::MissingParam(name.to_string()))
    }

    pub fn is_trainable(name: &str) -> bool {
        !name.contains(".norm.") && !name.contains(".denorm.")
    }

    /// Trainable tensor names in deterministic (sorted) order.
    pub fn trainable_names(&self) -> Vec<String> {
        self.tensors
            .keys()
            .filter(|n| Self::is_trainable(n))
            .cloned()
            .collect()
    }

    pub fn trainable_count(&self) -> usize {
        self.tensors
            .iter()
            .filter(|(n, _)| Self::is_trainable(n))
            .map(|(_, t)| t.numel())
            .sum()
    }
}

impl std::ops::Index<&str> for ModelParams {
    type Output = Tensor;

    fn index(&self, name: &str) -> &Tensor {
        &self.tensors[name]
    }
}
