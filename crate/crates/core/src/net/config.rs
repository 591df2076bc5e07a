use serde::{Deserialize, Serialize};

use super::NetError;

/// Architecture hyperparameters shared by the encoder and decoder stacks.
///
/// Feature dims follow the extractor (`d_e = 4`, `d_s = 35`). The encoder
/// maps `d_e + d_s` inputs to `2 * latent_dim` outputs (mean and
/// log-variance); the decoder maps `latent_dim + speaker_code_dim` to
/// `d_s`. The reference configuration uses 1024 hidden units; the default
/// here is desk-scale.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetConfig {
    pub excitation_dim: usize,
    pub spectra_dim: usize,
    pub latent_dim: usize,
    pub speaker_code_dim: usize,
    pub hidden_units: usize,
    pub conv_kernel: usize,
    pub conv_dilations: Vec<usize>,
    pub dropout_prob: f64,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig {
            excitation_dim: 4,
            spectra_dim: 35,
            latent_dim: 16,
            speaker_code_dim: 1,
            hidden_units: 32,
            conv_kernel: 3,
            conv_dilations: vec![1, 3],
            dropout_prob: 0.5,
        }
    }
}

impl NetConfig {
    pub fn feature_dim(&self) -> usize {
        self.excitation_dim + self.spectra_dim
    }

    pub fn encoder_input_dim(&self) -> usize {
        self.feature_dim()
    }

    pub fn encoder_output_dim(&self) -> usize {
        2 * self.latent_dim
    }

    pub fn decoder_input_dim(&self) -> usize {
        self.latent_dim + self.speaker_code_dim
    }

    pub fn decoder_output_dim(&self) -> usize {
        self.spectra_dim
    }

    /// Half-width of the convolutional receptive field:
    /// `sum(dilation * (kernel - 1) / 2)` — ±4 frames with the defaults.
    pub fn receptive_half_width(&self) -> usize {
        self.conv_dilations
            .iter()
            .map(|d| d * (self.conv_kernel - 1) / 2)
            .sum()
    }

    pub fn validate(&self) -> Result<(), NetError> {
        for (name, v) in [
            ("excitation_dim", self.excitation_dim),
            ("spectra_dim", self.spectra_dim),
            ("latent_dim", self.latent_dim),
            ("speaker_code_dim", self.speaker_code_dim),
            ("hidden_units", self.hidden_units),
            ("conv_kernel", self.conv_kernel),
        ] {
            if v == 0 {
                return Err(NetError::Config(format!("{name} must be positive")));
            }
        }
        if self.conv_kernel % 2 == 0 {
            return Err(NetError::Config(format!(
                "conv_kernel must be odd for a centered window, got {}",
                self.conv_kernel
            )));
        }
        if self.conv_dilations.is_empty() || self.conv_dilations.iter().any(|&d| d == 0) {
            return Err(NetError::Config(
                "conv_dilations must be nonempty positive integers".to_string(),
            ));
        }
        if !(0.0..1.0).contains(&self.dropout_prob) {
            return Err(NetError::Config(format!(
                "dropout_prob must be in [0, 1), got {}",
                self.dropout_prob
            )));
        }
        Ok(())
    }

    /// Trainable parameter count of one stack (conv layers, GRU gates,
    /// output linear) given its input/output dims.
    fn stack_param_count(&self, input_dim: usize, output_dim: usize) -> usize {
        let h = self.hidden_units;
        let k = self.conv_kernel;
        let mut count = 0;
        let mut in_ch = input_dim;
        for _ in &self.conv_dilations {
            count += h * (k * in_ch) + h;
            in_ch = h;
        }
        // three gates, each: input, recurrent, feedback weights plus bias
        count += 3 * (h * h + h * h + h * output_dim + h);
        count += output_dim * h + output_dim;
        count
    }

    /// Total trainable parameter count (encoder plus decoder); a pure
    /// function of the config.
    pub fn param_count(&self) -> usize {
        self.stack_param_count(self.encoder_input_dim(), self.encoder_output_dim())
            + self.stack_param_count(self.decoder_input_dim(), self.decoder_output_dim())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_receptive_field_is_four() {
        assert_eq!(NetConfig::default().receptive_half_width(), 4);
    }

    #[test]
    fn default_is_valid() {
        NetConfig::default().validate().unwrap();
    }

    #[test]
    fn rejects_zero_dims_and_even_kernels() {
        let mut cfg = NetConfig::default();
        cfg.latent_dim = 0;
        assert!(cfg.validate().is_err());
        let mut cfg = NetConfig::default();
        cfg.conv_kernel = 4;
        assert!(cfg.validate().is_err());
        let mut cfg = NetConfig::default();
        cfg.dropout_prob = 1.0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn param_count_closed_form_for_defaults() {
        // encoder: in 39, out 32, hidden 32, kernel 3
        // conv1 32*(3*39)+32 = 3776; conv2 32*(3*32)+32 = 3104
        // gates 3*(32*32 + 32*32 + 32*32 + 32) = 9312; out 32*32+32 = 1056
        // decoder: in 17, out 35
        // conv1 32*(3*17)+32 = 1664; conv2 3104
        // gates 3*(1024 + 1024 + 32*35 + 32) = 9600; out 35*32+35 = 1155
        let expected = (3776 + 3104 + 9312 + 1056) + (1664 + 3104 + 9600 + 1155);
        assert_eq!(NetConfig::default().param_count(), expected);
    }
}
