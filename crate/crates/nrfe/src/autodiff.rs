//! Reverse-mode automatic differentiation over `f64` matrices.
//!
//! A small tape: every operation appends a node holding its forward value
//! and enough information to propagate gradients. All tensors are
//! `Array2<f64>`; vectors are 1×d rows and scalars are 1×1.

use ndarray::{s, Array2, Axis};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(pub usize);

enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    Scale(usize, f64),
    AddScalar(usize),
    /// [m,n] + broadcast [1,n]
    AddRow(usize, usize),
    MatMul(usize, usize),
    Transpose(usize),
    Tanh(usize),
    Relu(usize),
    Log(usize),
    Sqrt(usize),
    /// Row-wise softmax; columns where `mask` is false get weight exactly 0.
    MaskedSoftmaxRows(usize, Vec<bool>),
    LogSoftmaxRows(usize),
    SumAll(usize),
    ConcatCols(Vec<usize>),
    Select(usize, usize, usize),
    /// Row gather: output row i is input row `rows[i]`.
    Gather(usize, Vec<usize>),
}

struct Node {
    value: Array2<f64>,
    op: Op,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        debug_assert_eq!(self.nodes[v.0].value.dim(), (1, 1));
        self.nodes[v.0].value[(0, 0)]
    }

    fn push(&mut self, value: Array2<f64>, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn scalar_leaf(&mut self, x: f64) -> Var {
        self.leaf(Array2::from_elem((1, 1), x))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = &self.nodes[a.0].value + &self.nodes[b.0].value;
        self.push(v, Op::Add(a.0, b.0))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = &self.nodes[a.0].value - &self.nodes[b.0].value;
        self.push(v, Op::Sub(a.0, b.0))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = &self.nodes[a.0].value * &self.nodes[b.0].value;
        self.push(v, Op::Mul(a.0, b.0))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Var {
        let v = &self.nodes[a.0].value / &self.nodes[b.0].value;
        self.push(v, Op::Div(a.0, b.0))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let v = self.nodes[a.0].value.mapv(|x| x * c);
        self.push(v, Op::Scale(a.0, c))
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let v = self.nodes[a.0].value.mapv(|x| x + c);
        self.push(v, Op::AddScalar(a.0))
    }

    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let v = &self.nodes[a.0].value + &self.nodes[row.0].value;
        self.push(v, Op::AddRow(a.0, row.0))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.nodes[a.0].value.dot(&self.nodes[b.0].value);
        self.push(v, Op::MatMul(a.0, b.0))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let v = self.nodes[a.0].value.t().to_owned();
        self.push(v, Op::Transpose(a.0))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.nodes[a.0].value.mapv(f64::tanh);
        self.push(v, Op::Tanh(a.0))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.nodes[a.0].value.mapv(|x| x.max(0.0));
        self.push(v, Op::Relu(a.0))
    }

    pub fn log(&mut self, a: Var) -> Var {
        let v = self.nodes[a.0].value.mapv(f64::ln);
        self.push(v, Op::Log(a.0))
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        let v = self.nodes[a.0].value.mapv(f64::sqrt);
        self.push(v, Op::Sqrt(a.0))
    }

    /// Row-wise softmax restricted to unmasked columns. Panics if the mask
    /// has no true entry or its length differs from the column count.
    pub fn masked_softmax_rows(&mut self, a: Var, mask: &[bool]) -> Var {
        let x = &self.nodes[a.0].value;
        assert_eq!(mask.len(), x.ncols(), "mask length must match columns");
        assert!(mask.iter().any(|&m| m), "all positions masked");
        let mut y = Array2::zeros(x.dim());
        for (i, row) in x.outer_iter().enumerate() {
            let max = row
                .iter()
                .zip(mask)
                .filter(|(_, &m)| m)
                .map(|(v, _)| *v)
                .fold(f64::NEG_INFINITY, f64::max);
            let mut denom = 0.0;
            for (j, &m) in mask.iter().enumerate() {
                if m {
                    let e = (row[j] - max).exp();
                    y[(i, j)] = e;
                    denom += e;
                }
            }
            for (j, &m) in mask.iter().enumerate() {
                if m {
                    y[(i, j)] /= denom;
                }
            }
        }
        self.push(y, Op::MaskedSoftmaxRows(a.0, mask.to_vec()))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let mask = vec![true; self.nodes[a.0].value.ncols()];
        self.masked_softmax_rows(a, &mask)
    }

    pub fn log_softmax_rows(&mut self, a: Var) -> Var {
        let x = &self.nodes[a.0].value;
        let mut y = x.clone();
        for mut row in y.outer_iter_mut() {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            row.mapv_inplace(|v| v - lse);
        }
        self.push(y, Op::LogSoftmaxRows(a.0))
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let s = self.nodes[a.0].value.sum();
        self.push(Array2::from_elem((1, 1), s), Op::SumAll(a.0))
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let n = self.nodes[a.0].value.len() as f64;
        let s = self.sum_all(a);
        self.scale(s, 1.0 / n)
    }

    /// Concatenate along columns; all inputs must share the row count.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let rows = self.nodes[parts[0].0].value.nrows();
        let total: usize = parts.iter().map(|p| self.nodes[p.0].value.ncols()).sum();
        let mut v = Array2::zeros((rows, total));
        let mut off = 0;
        for p in parts {
            let part = &self.nodes[p.0].value;
            assert_eq!(part.nrows(), rows);
            v.slice_mut(s![.., off..off + part.ncols()]).assign(part);
            off += part.ncols();
        }
        self.push(v, Op::ConcatCols(parts.iter().map(|p| p.0).collect()))
    }

    pub fn select(&mut self, a: Var, r: usize, c: usize) -> Var {
        let v = self.nodes[a.0].value[(r, c)];
        self.push(Array2::from_elem((1, 1), v), Op::Select(a.0, r, c))
    }

    pub fn gather_rows(&mut self, a: Var, rows: &[usize]) -> Var {
        let x = &self.nodes[a.0].value;
        let mut v = Array2::zeros((rows.len(), x.ncols()));
        for (i, &r) in rows.iter().enumerate() {
            v.row_mut(i).assign(&x.row(r));
        }
        self.push(v, Op::Gather(a.0, rows.to_vec()))
    }

    /// Gradients of a scalar `loss` with respect to every node.
    pub fn backward(&self, loss: Var) -> Vec<Array2<f64>> {
        assert_eq!(
            self.nodes[loss.0].value.dim(),
            (1, 1),
            "backward needs a scalar loss"
        );
        let mut grads: Vec<Array2<f64>> = self
            .nodes
            .iter()
            .map(|n| Array2::zeros(n.value.dim()))
            .collect();
        grads[loss.0][(0, 0)] = 1.0;

        for idx in (0..=loss.0).rev() {
            if grads[idx].iter().all(|&g| g == 0.0) {
                continue;
            }
            let g = grads[idx].clone();
            match &self.nodes[idx].op {
                Op::Leaf => {}
                Op::Add(a, b) => {
                    grads[*a] += &g;
                    grads[*b] += &g;
                }
                Op::Sub(a, b) => {
                    grads[*a] += &g;
                    grads[*b] -= &g;
                }
                Op::Mul(a, b) => {
                    let ga = &g * &self.nodes[*b].value;
                    let gb = &g * &self.nodes[*a].value;
                    grads[*a] += &ga;
                    grads[*b] += &gb;
                }
                Op::Div(a, b) => {
                    let bv = &self.nodes[*b].value;
                    let ga = &g / bv;
                    let gb = -(&g) * &self.nodes[*a].value / (bv * bv);
                    grads[*a] += &ga;
                    grads[*b] += &gb;
                }
                Op::Scale(a, c) => {
                    let ga = g.mapv(|x| x * c);
                    grads[*a] += &ga;
                }
                Op::AddScalar(a) => {
                    grads[*a] += &g;
                }
                Op::AddRow(a, row) => {
                    grads[*a] += &g;
                    let gr = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                    grads[*row] += &gr;
                }
                Op::MatMul(a, b) => {
                    let ga = g.dot(&self.nodes[*b].value.t());
                    let gb = self.nodes[*a].value.t().dot(&g);
                    grads[*a] += &ga;
                    grads[*b] += &gb;
                }
                Op::Transpose(a) => {
                    let ga = g.t().to_owned();
                    grads[*a] += &ga;
                }
                Op::Tanh(a) => {
                    let y = &self.nodes[idx].value;
                    let ga = &g * &y.mapv(|t| 1.0 - t * t);
                    grads[*a] += &ga;
                }
                Op::Relu(a) => {
                    let x = &self.nodes[*a].value;
                    let ga = &g * &x.mapv(|t| if t > 0.0 { 1.0 } else { 0.0 });
                    grads[*a] += &ga;
                }
                Op::Log(a) => {
                    let ga = &g / &self.nodes[*a].value;
                    grads[*a] += &ga;
                }
                Op::Sqrt(a) => {
                    let y = &self.nodes[idx].value;
                    let ga = &g / &y.mapv(|t| 2.0 * t);
                    grads[*a] += &ga;
                }
                Op::MaskedSoftmaxRows(a, mask) => {
                    let y = &self.nodes[idx].value;
                    let mut ga = Array2::zeros(y.dim());
                    for i in 0..y.nrows() {
                        let dot: f64 = (0..y.ncols())
                            .filter(|&j| mask[j])
                            .map(|j| g[(i, j)] * y[(i, j)])
                            .sum();
                        for j in 0..y.ncols() {
                            if mask[j] {
                                ga[(i, j)] = y[(i, j)] * (g[(i, j)] - dot);
                            }
                        }
                    }
                    grads[*a] += &ga;
                }
                Op::LogSoftmaxRows(a) => {
                    let y = &self.nodes[idx].value;
                    let mut ga = g.clone();
                    for i in 0..y.nrows() {
                        let gsum: f64 = (0..y.ncols()).map(|j| g[(i, j)]).sum();
                        for j in 0..y.ncols() {
                            ga[(i, j)] -= y[(i, j)].exp() * gsum;
                        }
                    }
                    grads[*a] += &ga;
                }
                Op::SumAll(a) => {
                    let ga = Array2::from_elem(self.nodes[*a].value.dim(), g[(0, 0)]);
                    grads[*a] += &ga;
                }
                Op::ConcatCols(parts) => {
                    let mut off = 0;
                    for p in parts {
                        let w = self.nodes[*p].value.ncols();
                        let gp = g.slice(s![.., off..off + w]).to_owned();
                        grads[*p] += &gp;
                        off += w;
                    }
                }
                Op::Select(a, r, c) => {
                    grads[*a][(*r, *c)] += g[(0, 0)];
                }
                Op::Gather(a, rows) => {
                    let mut ga = Array2::zeros(self.nodes[*a].value.dim());
                    for (i, &r) in rows.iter().enumerate() {
                        let mut dst = ga.row_mut(r);
                        dst += &g.row(i);
                    }
                    grads[*a] += &ga;
                }
            }
        }
        grads
    }

    /// Cosine similarity of two 1×d rows; errors are the caller's problem,
    /// a zero-norm input produces NaN.
    pub fn cosine(&mut self, u: Var, v: Var) -> Var {
        let uv = self.mul(u, v);
        let dot = self.sum_all(uv);
        let uu = self.mul(u, u);
        let su = self.sum_all(uu);
        let nu = self.sqrt(su);
        let vv = self.mul(v, v);
        let sv = self.sum_all(vv);
        let nv = self.sqrt(sv);
        let nn = self.mul(nu, nv);
        self.div(dot, nn)
    }

    /// Cross-entropy of a 1×k logits row against class index `y`.
    pub fn cross_entropy_logits(&mut self, logits: Var, y: usize) -> Var {
        let ls = self.log_softmax_rows(logits);
        let picked = self.select(ls, 0, y);
        self.scale(picked, -1.0)
    }
}
