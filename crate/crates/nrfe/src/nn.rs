//! Small trainable layers shared by the teacher and student models.

use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, Var};

pub fn glorot(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    Array2::from_shape_fn((rows, cols), |_| rng.gen_range(-limit..limit))
}

/// y = x W + b with W: [in, out], b: [1, out].
#[derive(Debug, Clone)]
pub struct Linear {
    pub w: Array2<f64>,
    pub b: Array2<f64>,
}

#[derive(Debug, Clone, Copy)]
pub struct LinearVars {
    pub w: Var,
    pub b: Var,
}

impl Linear {
    pub fn new(input: usize, output: usize, rng: &mut ChaCha8Rng) -> Self {
        Linear {
            w: glorot(input, output, rng),
            b: Array2::zeros((1, output)),
        }
    }

    pub fn bind(&self, tape: &mut Tape) -> LinearVars {
        LinearVars {
            w: tape.leaf(self.w.clone()),
            b: tape.leaf(self.b.clone()),
        }
    }

    pub fn forward(tape: &mut Tape, vars: LinearVars, x: Var) -> Var {
        let xw = tape.matmul(x, vars.w);
        tape.add_row(xw, vars.b)
    }

    pub fn params(&self) -> Vec<&Array2<f64>> {
        vec![&self.w, &self.b]
    }

    pub fn params_mut(&mut self) -> Vec<&mut Array2<f64>> {
        vec![&mut self.w, &mut self.b]
    }
}

impl LinearVars {
    pub fn ids(&self) -> Vec<Var> {
        vec![self.w, self.b]
    }
}

/// Two-layer MLP with tanh and optional inverted dropout on the hidden
/// activation. Dropout masks are drawn by the caller so training stays
/// deterministic under a seed.
#[derive(Debug, Clone)]
pub struct Mlp {
    pub l1: Linear,
    pub l2: Linear,
}

#[derive(Debug, Clone, Copy)]
pub struct MlpVars {
    pub l1: LinearVars,
    pub l2: LinearVars,
}

impl Mlp {
    pub fn new(input: usize, hidden: usize, output: usize, rng: &mut ChaCha8Rng) -> Self {
        Mlp {
            l1: Linear::new(input, hidden, rng),
            l2: Linear::new(hidden, output, rng),
        }
    }

    pub fn bind(&self, tape: &mut Tape) -> MlpVars {
        MlpVars {
            l1: self.l1.bind(tape),
            l2: self.l2.bind(tape),
        }
    }

    pub fn forward(
        tape: &mut Tape,
        vars: MlpVars,
        x: Var,
        dropout: Option<&Array2<f64>>,
    ) -> Var {
        let h = Linear::forward(tape, vars.l1, x);
        let mut h = tape.tanh(h);
        if let Some(mask) = dropout {
            let m = tape.leaf(mask.clone());
            h = tape.mul(h, m);
        }
        Linear::forward(tape, vars.l2, h)
    }

    pub fn hidden_width(&self) -> usize {
        self.l1.w.ncols()
    }

    pub fn params(&self) -> Vec<&Array2<f64>> {
        let mut p = self.l1.params();
        p.extend(self.l2.params());
        p
    }

    pub fn params_mut(&mut self) -> Vec<&mut Array2<f64>> {
        let mut p = self.l1.params_mut();
        p.extend(self.l2.params_mut());
        p
    }
}

impl MlpVars {
    pub fn ids(&self) -> Vec<Var> {
        let mut ids = self.l1.ids();
        ids.extend(self.l2.ids());
        ids
    }
}

/// Inverted dropout mask: entries are 0 or 1/(1-rate).
pub fn dropout_mask(rows: usize, cols: usize, rate: f64, rng: &mut ChaCha8Rng) -> Array2<f64> {
    if rate <= 0.0 {
        return Array2::from_elem((rows, cols), 1.0);
    }
    let keep = 1.0 - rate;
    Array2::from_shape_fn((rows, cols), |_| {
        if rng.gen::<f64>() < keep {
            1.0 / keep
        } else {
            0.0
        }
    })
}
