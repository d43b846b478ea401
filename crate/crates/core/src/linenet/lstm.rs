//! A single-direction LSTM layer with explicit backpropagation through time.
//!
//! Gates are stacked in the order input, forget, output, cell candidate; each
//! block has `hidden` rows. No peepholes.

use ndarray::{s, Array1, Array2, ArrayView2, Axis};

#[derive(Debug, Clone, PartialEq)]
pub struct LstmParams {
    /// Input weights, `4*hidden x input`.
    pub wx: Array2<f64>,
    /// Recurrent weights, `4*hidden x hidden`.
    pub wh: Array2<f64>,
    /// Gate biases, `4*hidden`.
    pub bias: Array1<f64>,
}

/// Activations kept from the forward pass, in processing order.
#[derive(Debug, Clone)]
pub(crate) struct LstmTape {
    inputs: Array2<f64>,
    /// Post-nonlinearity gate values, `T x 4*hidden`.
    gates: Array2<f64>,
    cells: Array2<f64>,
    pub(crate) hidden: Array2<f64>,
}

/// Products of transposed views may come back column-major; parameter
/// blocks are always row-major.
pub(crate) fn standard(a: Array2<f64>) -> Array2<f64> {
    if a.is_standard_layout() {
        a
    } else {
        a.as_standard_layout().into_owned()
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl LstmParams {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        LstmParams {
            wx: Array2::zeros((4 * hidden, input)),
            wh: Array2::zeros((4 * hidden, hidden)),
            bias: Array1::zeros(4 * hidden),
        }
    }

    pub fn hidden(&self) -> usize {
        self.wh.ncols()
    }

    pub fn input(&self) -> usize {
        self.wx.ncols()
    }

    pub fn param_count(&self) -> usize {
        self.wx.len() + self.wh.len() + self.bias.len()
    }

    /// Run over `inputs` (`T x input`, row t is step t) and record the tape.
    pub(crate) fn run(&self, inputs: Array2<f64>) -> LstmTape {
        let steps = inputs.nrows();
        let hd = self.hidden();
        let mut gates = inputs.dot(&self.wx.t());
        gates += &self.bias;
        let mut cells = Array2::zeros((steps, hd));
        let mut hidden = Array2::<f64>::zeros((steps, hd));
        let mut h_prev = Array1::<f64>::zeros(hd);
        let mut c_prev = Array1::<f64>::zeros(hd);
        for t in 0..steps {
            let recurrent = self.wh.dot(&h_prev);
            let mut z = gates.row_mut(t);
            z += &recurrent;
            for k in 0..hd {
                let i = sigmoid(z[k]);
                let f = sigmoid(z[hd + k]);
                let o = sigmoid(z[2 * hd + k]);
                let g = z[3 * hd + k].tanh();
                z[k] = i;
                z[hd + k] = f;
                z[2 * hd + k] = o;
                z[3 * hd + k] = g;
                let c = f * c_prev[k] + i * g;
                c_prev[k] = c;
                h_prev[k] = o * c.tanh();
            }
            cells.row_mut(t).assign(&c_prev);
            hidden.row_mut(t).assign(&h_prev);
        }
        LstmTape {
            inputs,
            gates,
            cells,
            hidden,
        }
    }

    /// Gradients of the parameters given the loss gradient with respect to
    /// every hidden state (`T x hidden`, processing order).
    pub(crate) fn backprop(&self, tape: &LstmTape, d_hidden: ArrayView2<f64>) -> LstmParams {
        let steps = tape.hidden.nrows();
        let hd = self.hidden();
        let mut d_gates = Array2::<f64>::zeros((steps, 4 * hd));
        let mut dh_next = Array1::<f64>::zeros(hd);
        let mut dc_next = Array1::<f64>::zeros(hd);
        for t in (0..steps).rev() {
            let g = tape.gates.row(t);
            let c = tape.cells.row(t);
            let mut dz = d_gates.row_mut(t);
            for k in 0..hd {
                let (i, f, o, cand) = (g[k], g[hd + k], g[2 * hd + k], g[3 * hd + k]);
                let c_prev = if t > 0 { tape.cells[[t - 1, k]] } else { 0.0 };
                let tc = c[k].tanh();
                let dh = d_hidden[[t, k]] + dh_next[k];
                let dc = dc_next[k] + dh * o * (1.0 - tc * tc);
                dz[k] = dc * cand * i * (1.0 - i);
                dz[hd + k] = dc * c_prev * f * (1.0 - f);
                dz[2 * hd + k] = dh * tc * o * (1.0 - o);
                dz[3 * hd + k] = dc * i * (1.0 - cand * cand);
                dc_next[k] = dc * f;
            }
            dh_next = self.wh.t().dot(&dz);
        }
        let wx = d_gates.t().dot(&tape.inputs);
        let mut wh = Array2::zeros((4 * hd, hd));
        if steps > 1 {
            wh = d_gates
                .slice(s![1.., ..])
                .t()
                .dot(&tape.hidden.slice(s![..steps - 1, ..]));
        }
        let bias = d_gates.sum_axis(Axis(0));
        LstmParams {
            wx: standard(wx),
            wh: standard(wh),
            bias,
        }
    }
}
