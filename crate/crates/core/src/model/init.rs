use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{ModelKind, ModelSpec};
use crate::error::Result;
use crate::tensor::{ParamSet, Tensor};

#[derive(Debug, Clone, Copy)]
pub(crate) enum Init {
    Glorot {
        fan_in: usize,
        fan_out: usize,
    },
    Zero,
    /// Zero except the forget-gate quarter, which starts at 1.
    LstmBias {
        hidden: usize,
    },
}

/// Name, shape and initializer of every parameter, in storage order.
pub(crate) fn layout(spec: &ModelSpec) -> Result<Vec<(String, Vec<usize>, Init)>> {
    spec.validate()?;
    let mut out = Vec::new();
    let dense = |out: &mut Vec<_>, name: &str, inputs: usize, outputs: usize| {
        out.push((
            format!("{name}.weight"),
            vec![outputs, inputs],
            Init::Glorot {
                fan_in: inputs,
                fan_out: outputs,
            },
        ));
        out.push((format!("{name}.bias"), vec![outputs], Init::Zero));
    };
    match spec.kind {
        ModelKind::Logistic => dense(&mut out, "linear", spec.input_len(), 1),
        ModelKind::Mlp => {
            let mut inputs = spec.input_len();
            for (i, &w) in spec.mlp_hidden.iter().enumerate() {
                dense(&mut out, &format!("hidden{i}"), inputs, w);
                inputs = w;
            }
            dense(&mut out, "output", inputs, 1);
        }
        ModelKind::CnnBilstm => {
            let mut in_ch = spec.channels;
            for (i, b) in spec.cnn.iter().enumerate() {
                out.push((
                    format!("conv{i}.weight"),
                    vec![b.filters, b.kernel_len, in_ch],
                    Init::Glorot {
                        fan_in: b.kernel_len * in_ch,
                        fan_out: b.kernel_len * b.filters,
                    },
                ));
                out.push((format!("conv{i}.bias"), vec![b.filters], Init::Zero));
                in_ch = b.filters;
            }
            let (steps, feats) = spec.feature_map_shape()?;
            let h = spec.lstm_hidden;
            if h == 0 {
                dense(&mut out, "output", steps * feats, 1);
            } else {
                for dir in ["lstm_fw", "lstm_bw"] {
                    out.push((
                        format!("{dir}.w_x"),
                        vec![4 * h, feats],
                        Init::Glorot {
                            fan_in: feats,
                            fan_out: 4 * h,
                        },
                    ));
                    out.push((
                        format!("{dir}.w_h"),
                        vec![4 * h, h],
                        Init::Glorot {
                            fan_in: h,
                            fan_out: 4 * h,
                        },
                    ));
                    out.push((
                        format!("{dir}.bias"),
                        vec![4 * h],
                        Init::LstmBias { hidden: h },
                    ));
                }
                dense(&mut out, "output", 2 * h, 1);
            }
        }
    }
    Ok(out)
}

/// Deterministic initialization from `spec.seed`: Glorot-uniform weights,
/// zero biases, LSTM forget-gate biases at 1.
pub fn init_params(spec: &ModelSpec) -> Result<ParamSet> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut params = ParamSet::new();
    for (name, shape, init) in layout(spec)? {
        let mut t = Tensor::zeros(&shape);
        match init {
            Init::Glorot { fan_in, fan_out } => {
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                t.data_mut()
                    .iter_mut()
                    .for_each(|v| *v = rng.gen_range(-limit..=limit));
            }
            Init::Zero => {}
            Init::LstmBias { hidden } => t.data_mut()[hidden..2 * hidden].fill(1.0),
        }
        params.push(name, t)?;
    }
    Ok(params)
}
