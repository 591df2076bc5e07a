use std::collections::BTreeMap;

use rand::Rng;

use crate::autodiff::{AutodiffError, NodeId, Tape, Tensor};
use crate::rng::ChaCha12Rng;

use super::{ModelParams, NetConfig, NetError};

/// Recurrent state carried across batch-frame segments within an
/// utterance. Values are detached: backpropagation truncates at segment
/// boundaries.
#[derive(Clone, Debug, PartialEq)]
pub struct GruState {
    pub hidden: Vec<f64>,
    /// Previous raw (pre-denormalization) output frame, fed back into the
    /// GRU gates at the next step.
    pub prev_output: Vec<f64>,
}

impl GruState {
    /// Zero state for a sequence start.
    pub fn zeros(hidden_units: usize, output_dim: usize) -> Self {
        GruState {
            hidden: vec![0.0; hidden_units],
            prev_output: vec![0.0; output_dim],
        }
    }
}

/// Node handles for one GRU gate.
#[derive(Clone, Copy, Debug)]
pub struct GateNodes {
    pub w: NodeId,
    pub u: NodeId,
    pub v: NodeId,
    pub b: NodeId,
}

/// Node handles for the three gates of a GRU cell.
#[derive(Clone, Copy, Debug)]
pub struct GruStepNodes {
    pub update: GateNodes,
    pub reset: GateNodes,
    pub cand: GateNodes,
}

#[derive(Clone, Debug)]
struct ConvLayerNodes {
    w: NodeId,
    b: NodeId,
    dilation: usize,
    input_dim: usize,
}

/// One resolved network stack (encoder or decoder) on a tape.
#[derive(Clone, Debug)]
pub struct NetStack {
    conv: Vec<ConvLayerNodes>,
    gru: GruStepNodes,
    out_w: NodeId,
    out_b: NodeId,
    hidden_units: usize,
}

/// Model parameters registered as leaves on a tape, ready for forward
/// passes. Binding order follows the sorted tensor names, so gradients
/// and updates stay deterministic.
pub struct BoundParams {
    config: NetConfig,
    nodes: BTreeMap<String, NodeId>,
    enc_norm_mean: NodeId,
    enc_norm_inv_std: NodeId,
    dec_denorm_mean: NodeId,
    dec_denorm_std: NodeId,
}

impl BoundParams {
    pub fn bind(tape: &mut Tape, params: &ModelParams) -> Self {
        Self::from_nodes(tape, params, &BTreeMap::new())
    }

    /// Bind parameters, reusing already-registered leaves where
    /// `existing` provides one (the gradient checker registers the
    /// trainable tensors itself so it can perturb and read them).
    pub fn from_nodes(
        tape: &mut Tape,
        params: &ModelParams,
        existing: &BTreeMap<String, NodeId>,
    ) -> Self {
        let mut nodes = BTreeMap::new();
        for (name, tensor) in params.tensors() {
            let id = existing
                .get(name)
                .copied()
                .unwrap_or_else(|| tape.leaf(tensor.clone()));
            nodes.insert(name.clone(), id);
        }
        let inv_std: Vec<f64> = tape
            .value(nodes["enc.norm.std"])
            .data()
            .iter()
            .map(|s| 1.0 / s)
            .collect();
        let enc_norm_inv_std = tape.leaf(Tensor::vector(inv_std));
        BoundParams {
            config: params.config().clone(),
            enc_norm_mean: nodes["enc.norm.mean"],
            dec_denorm_mean: nodes["dec.denorm.mean"],
            dec_denorm_std: nodes["dec.denorm.std"],
            enc_norm_inv_std,
            nodes,
        }
    }

    pub fn config(&self) -> &NetConfig {
        &self.config
    }

    pub fn node(&self, name: &str) -> Result<NodeId, NetError> {
        self.nodes
            .get(name)
            .copied()
            .ok_or_else(|| NetError::MissingParam(name.to_string()))
    }

    /// Trainable parameter nodes in sorted-name order.
    pub fn trainable(&self) -> impl Iterator<Item = (&String, NodeId)> {
        self.nodes
            .iter()
            .filter(|(name, _)| ModelParams::is_trainable(name))
            .map(|(name, &id)| (name, id))
    }

    fn stack(&self, prefix: &str) -> Result<NetStack, NetError> {
        let cfg = &self.config;
        let input_dim = match prefix {
            "enc" => cfg.encoder_input_dim(),
            _ => cfg.decoder_input_dim(),
        };
        let mut conv = Vec::new();
        let mut in_ch = input_dim;
        for (layer, &dilation) in cfg.conv_dilations.iter().enumerate() {
            conv.push(ConvLayerNodes {
                w: self.node(&format!("{prefix}.conv{}.w", layer + 1))?,
                b: self.node(&format!("{prefix}.conv{}.b", layer + 1))?,
                dilation,
                input_dim: in_ch,
            });
            in_ch = cfg.hidden_units;
        }
        let gate = |name: &str| -> Result<GateNodes, NetError> {
            Ok(GateNodes {
                w: self.node(&format!("{prefix}.gru.{name}.w"))?,
                u: self.node(&format!("{prefix}.gru.{name}.u"))?,
                v: self.node(&format!("{prefix}.gru.{name}.v"))?,
                b: self.node(&format!("{prefix}.gru.{name}.b"))?,
            })
        };
        Ok(NetStack {
            conv,
            gru: GruStepNodes {
                update: gate("update")?,
                reset: gate("reset")?,
                cand: gate("cand")?,
            },
            out_w: self.node(&format!("{prefix}.out.w"))?,
            out_b: self.node(&format!("{prefix}.out.b"))?,
            hidden_units: cfg.hidden_units,
        })
    }

    pub fn encoder_stack(&self) -> Result<NetStack, NetError> {
        self.stack("enc")
    }

    pub fn decoder_stack(&self) -> Result<NetStack, NetError> {
        self.stack("dec")
    }
}

/// Fixed normalization: `(frame - mean) / std`, elementwise.
pub fn normalize_frame(frame: &[f64], mean: &[f64], std: &[f64]) -> Result<Vec<f64>, NetError> {
    if frame.len() != mean.len() || frame.len() != std.len() {
        return Err(NetError::InputDim {
            expected: mean.len(),
            got: frame.len(),
        });
    }
    for (dim, &s) in std.iter().enumerate() {
        if !(s > 0.0) {
            return Err(NetError::NonPositiveStd { dim, value: s });
        }
    }
    Ok(frame
        .iter()
        .zip(mean)
        .zip(std)
        .map(|((x, m), s)| (x - m) / s)
        .collect())
}

/// Fixed denormalization: `frame * std + mean`, elementwise.
pub fn denormalize_frame(frame: &[f64], mean: &[f64], std: &[f64]) -> Result<Vec<f64>, NetError> {
    if frame.len() != mean.len() || frame.len() != std.len() {
        return Err(NetError::InputDim {
            expected: mean.len(),
            got: frame.len(),
        });
    }
    for (dim, &s) in std.iter().enumerate() {
        if !(s > 0.0) {
            return Err(NetError::NonPositiveStd { dim, value: s });
        }
    }
    Ok(frame
        .iter()
        .zip(mean)
        .zip(std)
        .map(|((x, m), s)| x * s + m)
        .collect())
}

/// Inverted-dropout mask: entries are `1/keep` with probability `keep`,
/// else `0`. With `dropout_prob = 0` this is exactly the identity mask.
fn draw_mask(rng: &mut ChaCha12Rng, len: usize, dropout_prob: f64) -> Vec<f64> {
    let keep = 1.0 - dropout_prob;
    (0..len)
        .map(|_| {
            if rng.random::<f64>() < keep {
                1.0 / keep
            } else {
                0.0
            }
        })
        .collect()
}

/// Dilated convolutional context expansion over a frame sequence.
///
/// Each layer applies a centered window of `kernel` taps spaced `dilation`
/// frames apart, with zero padding at the boundaries, so the composed
/// stack sees ±`receptive_half_width` frames. A tanh sits between the
/// layers; dropout is applied after the last layer in training mode.
pub fn dilated_context(
    tape: &mut Tape,
    stack: &NetStack,
    frames: &[NodeId],
    kernel: usize,
    mut dropout: Option<(&mut ChaCha12Rng, f64)>,
) -> Result<Vec<NodeId>, NetError> {
    let half = (kernel - 1) / 2;
    let mut current: Vec<NodeId> = frames.to_vec();
    let n_layers = stack.conv.len();
    for (li, layer) in stack.conv.iter().enumerate() {
        let zero = tape.leaf(Tensor::zeros(vec![layer.input_dim]));
        let mut next = Vec::with_capacity(current.len());
        for t in 0..current.len() {
            let mut window = Vec::with_capacity(kernel);
            for k in 0..kernel {
                let offset = (k as isize - half as isize) * layer.dilation as isize;
                let src = t as isize + offset;
                if src < 0 || src >= current.len() as isize {
                    window.push(zero);
                } else {
                    window.push(current[src as usize]);
                }
            }
            let stacked = tape.concat(&window)?;
            let lin = tape.matmul(layer.w, stacked)?;
            let mut y = tape.add_bias(lin, layer.b)?;
            if li + 1 < n_layers {
                y = tape.tanh(y)?;
            }
            next.push(y);
        }
        current = next;
    }
    if let Some((rng, prob)) = dropout.as_mut() {
        for y in current.iter_mut() {
            let mask = draw_mask(rng, stack.hidden_units, *prob);
            *y = tape.dropout(*y, mask)?;
        }
    }
    Ok(current)
}

/// One GRU step. Gates are computed from the current input, the previous
/// output frame (feedback), and the recurrent hidden state:
///
/// ```text
/// z = sigmoid(Wz x + Vz fb + Uz h + bz)
/// r = sigmoid(Wr x + Vr fb + Ur h + br)
/// c = tanh   (Wc x + Vc fb + Uc (r*h) + bc)
/// h' = (1 - z) * h + z * c
/// ```
pub fn gru_step(
    tape: &mut Tape,
    gates: &GruStepNodes,
    x: NodeId,
    feedback: NodeId,
    h_prev: NodeId,
) -> Result<NodeId, AutodiffError> {
    let pre = |tape: &mut Tape, g: &GateNodes, h_term: NodeId| -> Result<NodeId, AutodiffError> {
        let wx = tape.matmul(g.w, x)?;
        let vf = tape.matmul(g.v, feedback)?;
        let uh = tape.matmul(g.u, h_term)?;
        let s1 = tape.add(wx, vf)?;
        let s2 = tape.add(s1, uh)?;
        tape.add(s2, g.b)
    };
    let z_pre = pre(tape, &gates.update, h_prev)?;
    let z = tape.sigmoid(z_pre)?;
    let r_pre = pre(tape, &gates.reset, h_prev)?;
    let r = tape.sigmoid(r_pre)?;
    let gated = tape.mul(r, h_prev)?;
    let c_pre = pre(tape, &gates.cand, gated)?;
    let c = tape.tanh(c_pre)?;
    // h' = h - z*h + z*c
    let zh = tape.mul(z, h_prev)?;
    let keep = tape.sub(h_prev, zh)?;
    let zc = tape.mul(z, c)?;
    tape.add(keep, zc)
}

/// Shared recurrent trunk: dilated context, GRU with output feedback,
/// linear output. Returns the raw (pre-denormalization) output nodes and
/// the detached final state.
fn run_stack(
    tape: &mut Tape,
    stack: &NetStack,
    inputs: &[NodeId],
    state: &GruState,
    kernel: usize,
    mut dropout: Option<(&mut ChaCha12Rng, f64)>,
) -> Result<(Vec<NodeId>, GruState), NetError> {
    let context = dilated_context(
        tape,
        stack,
        inputs,
        kernel,
        dropout.as_mut().map(|(rng, p)| (&mut **rng, *p)),
    )?;

    let mut h = tape.leaf(Tensor::vector(state.hidden.clone()));
    let mut feedback = tape.leaf(Tensor::vector(state.prev_output.clone()));
    let mut outputs = Vec::with_capacity(context.len());
    for &x in &context {
        h = gru_step(tape, &stack.gru, x, feedback, h)?;
        let mut h_out = h;
        if let Some((rng, prob)) = dropout.as_mut() {
            let mask = draw_mask(rng, stack.hidden_units, *prob);
            h_out = tape.dropout(h_out, mask)?;
        }
        let lin = tape.matmul(stack.out_w, h_out)?;
        let y = tape.add_bias(lin, stack.out_b)?;
        outputs.push(y);
        feedback = y;
    }
    let final_state = GruState {
        hidden: tape.value(h).data().to_vec(),
        prev_output: tape.value(feedback).data().to_vec(),
    };
    Ok((outputs, final_state))
}

/// Per-frame latent Gaussian parameters produced by the encoder.
pub struct EncoderOut {
    pub mu: Vec<NodeId>,
    pub logvar: Vec<NodeId>,
    /// Raw `[mu ; logvar]` output nodes (the feedback path).
    pub raw: Vec<NodeId>,
    pub final_state: GruState,
}

/// Encode a sequence of data-space feature frames (`[excitation ;
/// spectra]`, unnormalized — normalization is part of the network).
/// The first `latent_dim` outputs per frame are the posterior mean, the
/// rest the log-variance, so `sigma = exp(logvar / 2)` is positive by
/// construction.
pub fn encoder_forward(
    tape: &mut Tape,
    bound: &BoundParams,
    frames: &[NodeId],
    state: &GruState,
    mut dropout: Option<(&mut ChaCha12Rng, f64)>,
) -> Result<EncoderOut, NetError> {
    let cfg = bound.config();
    let stack = bound.encoder_stack()?;
    let mut normed = Vec::with_capacity(frames.len());
    for (t, &f) in frames.iter().enumerate() {
        let got = tape.value(f).numel();
        if got != cfg.encoder_input_dim() {
            return Err(NetError::InputDim {
                expected: cfg.encoder_input_dim(),
                got,
            });
        }
        let centered = tape.sub(f, bound.enc_norm_mean)?;
        let n = tape.mul(centered, bound.enc_norm_inv_std)?;
        let _ = t;
        normed.push(n);
    }
    let (raw, final_state) = run_stack(
        tape,
        &stack,
        &normed,
        state,
        cfg.conv_kernel,
        dropout.as_mut().map(|(rng, p)| (&mut **rng, *p)),
    )?;
    let d_z = cfg.latent_dim;
    let mut mu = Vec::with_capacity(raw.len());
    let mut logvar = Vec::with_capacity(raw.len());
    for (t, &y) in raw.iter().enumerate() {
        if !tape.value(y).all_finite() {
            return Err(NetError::NonFinite { frame: t });
        }
        mu.push(tape.slice(y, 0, d_z)?);
        logvar.push(tape.slice(y, d_z, d_z)?);
    }
    Ok(EncoderOut {
        mu,
        logvar,
        raw,
        final_state,
    })
}

/// Decoded (denormalized) spectra sequence.
pub struct DecoderOut {
    pub spectra: Vec<NodeId>,
    /// Raw pre-denormalization outputs (the feedback path).
    pub raw: Vec<NodeId>,
    pub final_state: GruState,
}

/// Decode latent frames conditioned on a time-invariant speaker code. The
/// decoder input per frame is `[z_t ; code]`; the output is data-space
/// mel-cepstra after fixed denormalization.
pub fn decoder_forward(
    tape: &mut Tape,
    bound: &BoundParams,
    z_frames: &[NodeId],
    code: &Tensor,
    state: &GruState,
    mut dropout: Option<(&mut ChaCha12Rng, f64)>,
) -> Result<DecoderOut, NetError> {
    let cfg = bound.config();
    if code.numel() != cfg.speaker_code_dim {
        return Err(NetError::CodeDim {
            expected: cfg.speaker_code_dim,
            got: code.numel(),
        });
    }
    let stack = bound.decoder_stack()?;
    let code_node = tape.leaf(code.clone());
    let mut inputs = Vec::with_capacity(z_frames.len());
    for &z in z_frames {
        let got = tape.value(z).numel();
        if got != cfg.latent_dim {
            return Err(NetError::InputDim {
                expected: cfg.latent_dim,
                got,
            });
        }
        inputs.push(tape.concat(&[z, code_node])?);
    }
    let (raw, final_state) = run_stack(
        tape,
        &stack,
        &inputs,
        state,
        cfg.conv_kernel,
        dropout.as_mut().map(|(rng, p)| (&mut **rng, *p)),
    )?;
    let mut spectra = Vec::with_capacity(raw.len());
    for (t, &y) in raw.iter().enumerate() {
        if !tape.value(y).all_finite() {
            return Err(NetError::NonFinite { frame: t });
        }
        let scaled = tape.mul(y, bound.dec_denorm_std)?;
        spectra.push(tape.add(scaled, bound.dec_denorm_mean)?);
    }
    Ok(DecoderOut {
        spectra,
        raw,
        final_state,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::ModelParams;

    fn desk_config() -> NetConfig {
        NetConfig {
            excitation_dim: 2,
            spectra_dim: 3,
            latent_dim: 2,
            speaker_code_dim: 1,
            hidden_units: 4,
            conv_kernel: 3,
            conv_dilations: vec![1, 3],
            dropout_prob: 0.5,
        }
    }

    fn stats(cfg: &NetConfig) -> (Vec<f64>, Vec<f64>) {
        let d = cfg.feature_dim();
        ((0..d).map(|i| i as f64 * 0.1).collect(), vec![2.0; d])
    }

    #[test]
    fn normalize_denormalize_inverse_pair() {
        let frame = vec![3.0];
        let normed = normalize_frame(&frame, &[1.0], &[2.0]).unwrap();
        assert_eq!(normed, vec![1.0]);
        let back = denormalize_frame(&normed, &[1.0], &[2.0]).unwrap();
        assert!((back[0] - 3.0).abs() < 1e-12);
        // frame equal to the mean centers to zero
        assert_eq!(normalize_frame(&[1.0], &[1.0], &[2.0]).unwrap(), vec![0.0]);
        // nonpositive std is a configuration error
        assert!(normalize_frame(&[1.0], &[0.0], &[0.0]).is_err());
    }

    #[test]
    fn gru_step_zero_weights_hand_values() {
        // all weights and biases zero, h_prev = 1: z = 0.5, candidate = 0,
        // h' = 0.5
        let cfg = desk_config();
        let (mean, std) = stats(&cfg);
        let params = ModelParams::zeros(cfg, &mean, &std).unwrap();
        let mut tape = Tape::new();
        let bound = BoundParams::bind(&mut tape, &params);
        let stack = bound.encoder_stack().unwrap();
        let x = tape.leaf(Tensor::vector(vec![0.0; 4]));
        let fb = tape.leaf(Tensor::vector(vec![0.0; 4]));
        let h_prev = tape.leaf(Tensor::vector(vec![1.0; 4]));
        let h = gru_step(&mut tape, &stack.gru, x, fb, h_prev).unwrap();
        assert_eq!(tape.value(h).data(), &[0.5; 4]);

        // zero state is a fixed point of the zero-weight cell
        let h0 = tape.leaf(Tensor::vector(vec![0.0; 4]));
        let h = gru_step(&mut tape, &stack.gru, x, fb, h0).unwrap();
        assert_eq!(tape.value(h).data(), &[0.0; 4]);
    }

    #[test]
    fn decoder_zero_weights_outputs_training_mean() {
        let cfg = desk_config();
        let (mean, std) = stats(&cfg);
        let params = ModelParams::zeros(cfg.clone(), &mean, &std).unwrap();
        let mut tape = Tape::new();
        let bound = BoundParams::bind(&mut tape, &params);
        let z: Vec<NodeId> = (0..3)
            .map(|_| tape.leaf(Tensor::vector(vec![0.7, -0.3])))
            .collect();
        let state = GruState::zeros(cfg.hidden_units, cfg.decoder_output_dim());
        let out = decoder_forward(&mut tape, &bound, &z, &Tensor::vector(vec![1.0]), &state, None)
            .unwrap();
        let spectra_mean = &mean[cfg.excitation_dim..];
        for &s in &out.spectra {
            assert_eq!(tape.value(s).data(), spectra_mean);
        }
    }

    #[test]
    fn encoder_shapes_and_eval_determinism() {
        let cfg = desk_config();
        let (mean, std) = stats(&cfg);
        let params = ModelParams::build(cfg.clone(), &mean, &std, |shape| {
            let n: usize = shape.iter().product();
            Tensor::new(shape.to_vec(), (0..n).map(|i| ((i % 7) as f64 - 3.0) * 0.11).collect())
                .unwrap()
        })
        .unwrap();
        let run = || {
            let mut tape = Tape::new();
            let bound = BoundParams::bind(&mut tape, &params);
            let frames: Vec<NodeId> = (0..5)
                .map(|t| tape.leaf(Tensor::vector(vec![0.1 * t as f64; 5])))
                .collect();
            let state = GruState::zeros(cfg.hidden_units, cfg.encoder_output_dim());
            let out = encoder_forward(&mut tape, &bound, &frames, &state, None).unwrap();
            assert_eq!(out.mu.len(), 5);
            out.mu
                .iter()
                .chain(&out.logvar)
                .map(|&id| tape.value(id).data().to_vec())
                .collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn code_dim_mismatch_is_an_error() {
        let cfg = desk_config();
        let (mean, std) = stats(&cfg);
        let params = ModelParams::zeros(cfg.clone(), &mean, &std).unwrap();
        let mut tape = Tape::new();
        let bound = BoundParams::bind(&mut tape, &params);
        let z = vec![tape.leaf(Tensor::vector(vec![0.0, 0.0]))];
        let state = GruState::zeros(cfg.hidden_units, cfg.decoder_output_dim());
        let err = decoder_forward(
            &mut tape,
            &bound,
            &z,
            &Tensor::vector(vec![1.0, 0.0]),
            &state,
            None,
        );
        assert!(matches!(err, Err(NetError::CodeDim { .. })));
    }
}
