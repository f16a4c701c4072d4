use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::Scaler;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CellKind {
    Gru,
    Lstm,
}

impl CellKind {
    /// Gate blocks per layer: GRU `[z, r, n]`, LSTM `[i, f, o, g]`.
    pub fn gates(self) -> usize {
        match self {
            CellKind::Gru => 3,
            CellKind::Lstm => 4,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RnnArch {
    pub cell: CellKind,
    /// Scaled state followed by scaled input.
    pub input_dim: usize,
    pub state_dim: usize,
    pub hidden_dim: usize,
    pub layers: usize,
    /// Dropout between stacked layers during training.
    #[serde(default)]
    pub dropout: f64,
    /// Head predicts `x̂_{k+1} - x_k` instead of `x̂_{k+1}`.
    #[serde(default)]
    pub residual: bool,
}

impl RnnArch {
    pub fn new(
        cell: CellKind,
        state_dim: usize,
        control_dim: usize,
        hidden_dim: usize,
        layers: usize,
    ) -> Self {
        Self {
            cell,
            input_dim: state_dim + control_dim,
            state_dim,
            hidden_dim,
            layers,
            dropout: 0.0,
            residual: false,
        }
    }

    pub fn with_dropout(mut self, dropout: f64) -> Self {
        self.dropout = dropout;
        self
    }

    pub fn control_dim(&self) -> usize {
        self.input_dim - self.state_dim
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden_dim == 0 || self.layers == 0 {
            return Err(Error::InvalidParams(
                "hidden_dim and layers must be at least 1".into(),
            ));
        }
        if self.state_dim == 0 || self.input_dim <= self.state_dim {
            return Err(Error::InvalidParams(
                "input_dim must exceed state_dim > 0".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::InvalidParams(format!(
                "dropout {} outside [0, 1)",
                self.dropout
            )));
        }
        Ok(())
    }

    /// Dropout probability that is actually applied (only between layers).
    pub fn effective_dropout(&self) -> f64 {
        if self.layers > 1 {
            self.dropout
        } else {
            0.0
        }
    }

    pub fn layer_input_dim(&self, layer: usize) -> usize {
        if layer == 0 {
            self.input_dim
        } else {
            self.hidden_dim
        }
    }

    /// `G · (H · (in + H) + 2H)` for layer `layer`.
    pub fn layer_param_count(&self, layer: usize) -> usize {
        let h = self.hidden_dim;
        self.cell.gates() * (h * (self.layer_input_dim(layer) + h) + 2 * h)
    }

    pub fn param_count(&self) -> usize {
        (0..self.layers)
            .map(|l| self.layer_param_count(l))
            .sum::<usize>()
            + self.state_dim * self.hidden_dim
            + self.state_dim
    }
}

/// Offsets of one layer's blocks inside the flat parameter vector.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerOffsets {
    pub start: usize,
    pub in_dim: usize,
    pub w_ih: usize,
    pub w_hh: usize,
    pub b_ih: usize,
    pub b_hh: usize,
    pub end: usize,
}

/// Flat layout: for each layer `W_ih (GH×in)`, `W_hh (GH×H)`, `b_ih (GH)`,
/// `b_hh (GH)`, all row-major with gate blocks stacked along rows; then the
/// head `W_out (S×H)` and `b_out (S)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Layout {
    pub layers: Vec<LayerOffsets>,
    pub w_out: usize,
    pub b_out: usize,
    pub total: usize,
}

impl Layout {
    pub fn new(arch: &RnnArch) -> Self {
        let gh = arch.cell.gates() * arch.hidden_dim;
        let h = arch.hidden_dim;
        let mut at = 0;
        let mut layers = Vec::with_capacity(arch.layers);
        for l in 0..arch.layers {
            let in_dim = arch.layer_input_dim(l);
            let w_ih = at;
            let w_hh = w_ih + gh * in_dim;
            let b_ih = w_hh + gh * h;
            let b_hh = b_ih + gh;
            let end = b_hh + gh;
            layers.push(LayerOffsets {
                start: at,
                in_dim,
                w_ih,
                w_hh,
                b_ih,
                b_hh,
                end,
            });
            at = end;
        }
        let w_out = at;
        let b_out = w_out + arch.state_dim * h;
        Self {
            layers,
            w_out,
            b_out,
            total: b_out + arch.state_dim,
        }
    }

    pub fn describe(&self, arch: &RnnArch) -> String {
        let gates = match arch.cell {
            CellKind::Gru => "z,r,n",
            CellKind::Lstm => "i,f,o,g",
        };
        format!(
            "per layer: W_ih[{gates}] W_hh[{gates}] b_ih b_hh (row-major); then W_out b_out; f64 little-endian; {} values",
            self.total
        )
    }
}

/// Hidden (and, for LSTM, cell) vectors of every layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HiddenState {
    pub h: Vec<Vec<f64>>,
    pub c: Vec<Vec<f64>>,
}

impl HiddenState {
    pub fn zeros(arch: &RnnArch) -> Self {
        let layer = vec![0.0; arch.hidden_dim];
        Self {
            h: vec![layer.clone(); arch.layers],
            c: match arch.cell {
                CellKind::Gru => Vec::new(),
                CellKind::Lstm => vec![layer; arch.layers],
            },
        }
    }

    pub fn check(&self, arch: &RnnArch) -> Result<()> {
        let want_c = if arch.cell == CellKind::Lstm {
            arch.layers
        } else {
            0
        };
        if self.h.len() != arch.layers {
            return Err(Error::dim("hidden layers", arch.layers, self.h.len()));
        }
        if self.c.len() != want_c {
            return Err(Error::dim("cell-state layers", want_c, self.c.len()));
        }
        for v in self.h.iter().chain(&self.c) {
            if v.len() != arch.hidden_dim {
                return Err(Error::dim("hidden width", arch.hidden_dim, v.len()));
            }
        }
        Ok(())
    }

    pub fn top(&self) -> &[f64] {
        self.h.last().map(Vec::as_slice).unwrap_or(&[])
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RnnModel {
    pub arch: RnnArch,
    pub layout: Layout,
    pub params: Vec<f64>,
    pub scaler: Option<Scaler>,
}

impl RnnModel {
    /// All parameters zero.
    pub fn zeros(arch: RnnArch) -> Result<Self> {
        arch.validate()?;
        let layout = Layout::new(&arch);
        Ok(Self {
            params: vec![0.0; layout.total],
            layout,
            arch,
            scaler: None,
        })
    }

    /// Orthogonal recurrent blocks, uniform `±1/√fan_in` input and head
    /// weights, zero biases except `+1` on the LSTM forget gate.
    pub fn init(arch: RnnArch, seed: u64) -> Result<Self> {
        let mut m = Self::zeros(arch)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h = m.arch.hidden_dim;
        let g = m.arch.cell.gates();
        for lo in m.layout.layers.clone() {
            let bound = 1.0 / (lo.in_dim as f64).sqrt();
            for w in &mut m.params[lo.w_ih..lo.w_hh] {
                *w = rng.random_range(-bound..bound);
            }
            for gate in 0..g {
                let q = random_orthogonal(h, &mut rng);
                let at = lo.w_hh + gate * h * h;
                m.params[at..at + h * h].copy_from_slice(&q);
            }
            if m.arch.cell == CellKind::Lstm {
                for b in &mut m.params[lo.b_ih + h..lo.b_ih + 2 * h] {
                    *b = 1.0;
                }
            }
        }
        let bound = 1.0 / (h as f64).sqrt();
        for w in &mut m.params[m.layout.w_out..m.layout.b_out] {
            *w = rng.random_range(-bound..bound);
        }
        Ok(m)
    }

    pub fn with_scaler(mut self, scaler: Scaler) -> Self {
        self.scaler = Some(scaler);
        self
    }

    pub fn set_params(&mut self, params: Vec<f64>) -> Result<()> {
        if params.len() != self.layout.total {
            return Err(Error::dim(
                "parameter vector",
                self.layout.total,
                params.len(),
            ));
        }
        self.params = params;
        Ok(())
    }

    pub fn layer(&self, l: usize) -> LayerParams<'_> {
        LayerParams::from_flat(&self.arch, &self.layout.layers[l], &self.params)
    }

    pub fn w_out(&self) -> &[f64] {
        &self.params[self.layout.w_out..self.layout.b_out]
    }

    pub fn b_out(&self) -> &[f64] {
        &self.params[self.layout.b_out..self.layout.total]
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|p| p.is_finite())
    }
}

/// Borrowed weights of one recurrent layer.
#[derive(Clone, Copy, Debug)]
pub struct LayerParams<'a> {
    pub kind: CellKind,
    pub in_dim: usize,
    pub hidden: usize,
    pub w_ih: &'a [f64],
    pub w_hh: &'a [f64],
    pub b_ih: &'a [f64],
    pub b_hh: &'a [f64],
}

impl<'a> LayerParams<'a> {
    pub fn from_flat(arch: &RnnArch, lo: &LayerOffsets, params: &'a [f64]) -> Self {
        Self {
            kind: arch.cell,
            in_dim: lo.in_dim,
            hidden: arch.hidden_dim,
            w_ih: &params[lo.w_ih..lo.w_hh],
            w_hh: &params[lo.w_hh..lo.b_ih],
            b_ih: &params[lo.b_ih..lo.b_hh],
            b_hh: &params[lo.b_hh..lo.end],
        }
    }
}

/// Gradient slots matching [`LayerParams`].
#[derive(Debug)]
pub struct LayerGrads<'a> {
    pub w_ih: &'a mut [f64],
    pub w_hh: &'a mut [f64],
    pub b_ih: &'a mut [f64],
    pub b_hh: &'a mut [f64],
}

impl<'a> LayerGrads<'a> {
    pub fn from_flat(lo: &LayerOffsets, grads: &'a mut [f64]) -> Self {
        let block = &mut grads[lo.start..lo.end];
        let (w_ih, rest) = block.split_at_mut(lo.w_hh - lo.w_ih);
        let (w_hh, rest) = rest.split_at_mut(lo.b_ih - lo.w_hh);
        let (b_ih, b_hh) = rest.split_at_mut(lo.b_hh - lo.b_ih);
        Self {
            w_ih,
            w_hh,
            b_ih,
            b_hh,
        }
    }
}

/// Row-major `n × n` orthogonal matrix from Gram–Schmidt on Gaussian rows.
fn random_orthogonal(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut q = vec![0.0; n * n];
    let mut i = 0;
    while i < n {
        let mut v: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        for _ in 0..2 {
            for j in 0..i {
                let row = &q[j * n..(j + 1) * n];
                let d: f64 = row.iter().zip(&v).map(|(a, b)| a * b).sum();
                for (x, r) in v.iter_mut().zip(row) {
                    *x -= d * r;
                }
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm < 1e-8 {
            continue;
        }
        for (dst, x) in q[i * n..(i + 1) * n].iter_mut().zip(&v) {
            *dst = x / norm;
        }
        i += 1;
    }
    q
}
