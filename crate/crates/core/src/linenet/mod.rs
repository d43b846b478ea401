//! The line recognizer: a bidirectional LSTM over image columns followed by a
//! linear output layer and a softmax over the codec.
//!
//! Each direction has `hidden_size / 2` units; their states are concatenated
//! into one vector `h` of length `hidden_size` per time step. The output matrix
//! has one row per codec symbol, so adding or removing characters is a matter
//! of adding or deleting rows (see [`Network::resize_output`]).

mod image;
mod lstm;

use ndarray::{s, Array1, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::codec::{Codec, CodecDelta, CodecError};

pub use image::{normalize_line, LineImage};
pub use lstm::LstmParams;

pub const DEFAULT_INPUT_HEIGHT: usize = 48;
pub const DEFAULT_HIDDEN_SIZE: usize = 100;
/// Half-width of the uniform initialization interval.
pub const INIT_RANGE: f64 = 0.08;

#[derive(Debug, Error)]
pub enum NetError {
    #[error("image has zero area")]
    EmptyImage,
    #[error("pixel intensity {0} outside [0, 1]")]
    IntensityOutOfRange(f64),
    #[error("image contains non-finite values")]
    NonFinite,
    #[error("line height {got} does not match the network input height {expected}")]
    HeightMismatch { expected: usize, got: usize },
    #[error("invalid dimensions: {0}")]
    InvalidDims(String),
    #[error(transparent)]
    Codec(#[from] CodecError),
}

/// All trainable parameters. Also used as the container for gradients and
/// optimizer state.
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    pub forward: LstmParams,
    pub backward: LstmParams,
    /// Output matrix, one row of length `hidden_size` per codec symbol.
    pub output: Array2<f64>,
    pub output_bias: Array1<f64>,
}

/// Names of the parameter blocks in serialization order.
pub const BLOCK_NAMES: [&str; 8] = [
    "forward.wx",
    "forward.wh",
    "forward.bias",
    "backward.wx",
    "backward.wh",
    "backward.bias",
    "output.weight",
    "output.bias",
];

impl Params {
    pub fn zeros(input_height: usize, hidden_size: usize, classes: usize) -> Self {
        let hd = hidden_size / 2;
        Params {
            forward: LstmParams::zeros(input_height, hd),
            backward: LstmParams::zeros(input_height, hd),
            output: Array2::zeros((classes, hidden_size)),
            output_bias: Array1::zeros(classes),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Params::zeros(
            self.forward.input(),
            self.output.ncols(),
            self.output.nrows(),
        )
    }

    /// Blocks as flat row-major slices with their shapes, in [`BLOCK_NAMES`]
    /// order.
    pub fn blocks(&self) -> Vec<(&'static str, Vec<usize>, &[f64])> {
        let f = &self.forward;
        let b = &self.backward;
        let arrays: [(&[usize], &[f64]); 8] = [
            (f.wx.shape(), f.wx.as_slice().expect("standard layout")),
            (f.wh.shape(), f.wh.as_slice().expect("standard layout")),
            (f.bias.shape(), f.bias.as_slice().expect("standard layout")),
            (b.wx.shape(), b.wx.as_slice().expect("standard layout")),
            (b.wh.shape(), b.wh.as_slice().expect("standard layout")),
            (b.bias.shape(), b.bias.as_slice().expect("standard layout")),
            (self.output.shape(), self.output.as_slice().expect("standard layout")),
            (self.output_bias.shape(), self.output_bias.as_slice().expect("standard layout")),
        ];
        BLOCK_NAMES
            .iter()
            .zip(arrays)
            .map(|(name, (shape, data))| (*name, shape.to_vec(), data))
            .collect()
    }

    pub fn blocks_mut(&mut self) -> [&mut [f64]; 8] {
        let Params {
            forward: f,
            backward: b,
            output,
            output_bias,
        } = self;
        [
            f.wx.as_slice_mut().expect("standard layout"),
            f.wh.as_slice_mut().expect("standard layout"),
            f.bias.as_slice_mut().expect("standard layout"),
            b.wx.as_slice_mut().expect("standard layout"),
            b.wh.as_slice_mut().expect("standard layout"),
            b.bias.as_slice_mut().expect("standard layout"),
            output.as_slice_mut().expect("standard layout"),
            output_bias.as_slice_mut().expect("standard layout"),
        ]
    }

    pub fn len(&self) -> usize {
        self.forward.param_count()
            + self.backward.param_count()
            + self.output.len()
            + self.output_bias.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn iter(&self) -> impl Iterator<Item = f64> + '_ {
        self.blocks()
            .into_iter()
            .flat_map(|(_, _, data)| data.iter().copied())
    }

    /// Apply `f(self_value, other_value)` elementwise.
    pub fn zip_apply(&mut self, other: &Params, mut f: impl FnMut(&mut f64, f64)) {
        let others: Vec<&[f64]> = other.blocks().into_iter().map(|(_, _, d)| d).collect();
        for (mine, theirs) in self.blocks_mut().into_iter().zip(others) {
            assert_eq!(mine.len(), theirs.len(), "parameter shapes differ");
            for (a, &b) in mine.iter_mut().zip(theirs) {
                f(a, b);
            }
        }
    }
}

/// Per-time-step activations of one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    /// `T x H` concatenated forward/backward states.
    pub hidden: Array2<f64>,
    /// `T x C` pre-softmax outputs.
    pub logits: Array2<f64>,
    /// `T x C` row-wise softmax of `logits`.
    pub posteriors: Array2<f64>,
}

impl ForwardTrace {
    pub fn steps(&self) -> usize {
        self.logits.nrows()
    }
}

/// What backprop needs from a forward pass.
#[derive(Debug, Clone)]
pub struct Tape {
    forward: lstm::LstmTape,
    backward: lstm::LstmTape,
    hidden: Array2<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    input_height: usize,
    hidden_size: usize,
    params: Params,
    codec: Codec,
    seed_lineage: Vec<u64>,
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&x| (x - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

fn softmax_rows(logits: &Array2<f64>) -> Array2<f64> {
    let mut out = logits.clone();
    for mut row in out.rows_mut() {
        let p = softmax(row.as_slice().expect("standard layout"));
        row.assign(&Array1::from(p));
    }
    out
}

fn std_dev(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt()
}

impl Network {
    /// Fresh network with every parameter uniform on `[-INIT_RANGE, INIT_RANGE]`.
    pub fn init(input_height: usize, hidden_size: usize, codec: Codec, seed: u64) -> Result<Self, NetError> {
        if hidden_size < 2 || !hidden_size.is_multiple_of(2) {
            return Err(NetError::InvalidDims(format!(
                "hidden size must be even and at least 2, got {hidden_size}"
            )));
        }
        if input_height == 0 {
            return Err(NetError::InvalidDims("input height must be positive".into()));
        }
        let mut params = Params::zeros(input_height, hidden_size, codec.len());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for block in params.blocks_mut() {
            for v in block.iter_mut() {
                *v = rng.gen_range(-INIT_RANGE..=INIT_RANGE);
            }
        }
        Ok(Network {
            input_height,
            hidden_size,
            params,
            codec,
            seed_lineage: vec![seed],
        })
    }

    /// Assemble a network from stored parts, checking every shape.
    pub fn from_parts(
        input_height: usize,
        hidden_size: usize,
        params: Params,
        codec: Codec,
        seed_lineage: Vec<u64>,
    ) -> Result<Self, NetError> {
        let expected = Params::zeros(input_height, hidden_size, codec.len());
        let shapes = |p: &Params| -> Vec<Vec<usize>> { p.blocks().into_iter().map(|(_, s, _)| s).collect() };
        if hidden_size < 2 || !hidden_size.is_multiple_of(2) || shapes(&params) != shapes(&expected) {
            return Err(NetError::InvalidDims(
                "parameter shapes do not match the declared architecture".into(),
            ));
        }
        if params.iter().any(|v| !v.is_finite()) {
            return Err(NetError::NonFinite);
        }
        Ok(Network {
            input_height,
            hidden_size,
            params,
            codec,
            seed_lineage,
        })
    }

    pub fn input_height(&self) -> usize {
        self.input_height
    }

    pub fn hidden_size(&self) -> usize {
        self.hidden_size
    }

    pub fn codec(&self) -> &Codec {
        &self.codec
    }

    pub fn params(&self) -> &Params {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut Params {
        &mut self.params
    }

    pub fn seed_lineage(&self) -> &[u64] {
        &self.seed_lineage
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    /// Round every parameter to the nearest `f32`, the precision of model
    /// files.
    pub fn quantize_f32(&mut self) {
        for block in self.params.blocks_mut() {
            for v in block.iter_mut() {
                *v = *v as f32 as f64;
            }
        }
    }

    pub fn forward(&self, line: &LineImage) -> Result<ForwardTrace, NetError> {
        self.forward_with_tape(line).map(|(trace, _)| trace)
    }

    pub fn forward_with_tape(&self, line: &LineImage) -> Result<(ForwardTrace, Tape), NetError> {
        if line.height() != self.input_height {
            return Err(NetError::HeightMismatch {
                expected: self.input_height,
                got: line.height(),
            });
        }
        let columns = lstm::standard(line.pixels().t().to_owned());
        let reversed = columns.slice(s![..;-1, ..]).to_owned();
        let fwd = self.params.forward.run(columns);
        let bwd = self.params.backward.run(reversed);
        let hd = self.hidden_size / 2;
        let steps = line.width();
        let mut hidden = Array2::zeros((steps, self.hidden_size));
        hidden.slice_mut(s![.., ..hd]).assign(&fwd.hidden);
        hidden
            .slice_mut(s![.., hd..])
            .assign(&bwd.hidden.slice(s![..;-1, ..]));
        let mut logits = hidden.dot(&self.params.output.t());
        logits += &self.params.output_bias;
        let posteriors = softmax_rows(&logits);
        let tape = Tape {
            forward: fwd,
            backward: bwd,
            hidden: hidden.clone(),
        };
        Ok((
            ForwardTrace {
                hidden,
                logits,
                posteriors,
            },
            tape,
        ))
    }

    /// Parameter gradients given the loss gradient with respect to the logits.
    pub fn backward(&self, tape: &Tape, logit_grad: &Array2<f64>) -> Params {
        let hd = self.hidden_size / 2;
        let output = lstm::standard(logit_grad.t().dot(&tape.hidden));
        let output_bias = logit_grad.sum_axis(Axis(0));
        let d_hidden = logit_grad.dot(&self.params.output);
        let forward = self
            .params
            .forward
            .backprop(&tape.forward, d_hidden.slice(s![.., ..hd]));
        let backward = self
            .params
            .backward
            .backprop(&tape.backward, d_hidden.slice(s![..;-1, hd..]));
        Params {
            forward,
            backward,
            output,
            output_bias,
        }
    }

    /// Apply a codec change to the output layer.
    ///
    /// Rows of retained symbols are moved unchanged, rows of removed symbols
    /// are deleted and each added symbol gets a new random row and bias
    /// drawn uniformly with the same standard deviation as the existing
    /// output weights. The LSTM layers are not touched.
    pub fn resize_output(&self, delta: &CodecDelta, seed: u64) -> Result<Network, NetError> {
        let codec = delta.apply(&self.codec)?;
        if delta.is_empty() {
            return Ok(self.clone());
        }
        let old = &self.params;
        let mut output = Array2::zeros((codec.len(), self.hidden_size));
        let mut output_bias = Array1::zeros(codec.len());
        for &(from, to) in &delta.retained {
            output.row_mut(to).assign(&old.output.row(from));
            output_bias[to] = old.output_bias[from];
        }
        let mut seed_lineage = self.seed_lineage.clone();
        if !delta.added.is_empty() {
            let sd = std_dev(old.output.as_slice().expect("standard layout"));
            let half_width = if sd.is_finite() && sd > 0.0 {
                3f64.sqrt() * sd
            } else {
                INIT_RANGE
            };
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for &(_, to) in &delta.added {
                for v in output.row_mut(to).iter_mut() {
                    *v = rng.gen_range(-half_width..=half_width);
                }
                output_bias[to] = rng.gen_range(-half_width..=half_width);
            }
            seed_lineage.push(seed);
        }
        Ok(Network {
            input_height: self.input_height,
            hidden_size: self.hidden_size,
            params: Params {
                forward: old.forward.clone(),
                backward: old.backward.clone(),
                output,
                output_bias,
            },
            codec,
            seed_lineage,
        })
    }
}
