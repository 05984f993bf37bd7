//! Define-by-run computation graph with reverse-mode gradients.
//!
//! Every builder call evaluates its node immediately and records it, so the
//! same graph can later be replayed on new inputs with [`Graph::eval`].

use std::collections::{BTreeMap, HashMap};

use super::tensor::{gemm, Tensor};
use super::NdError;

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Input(String),
    Param(String),
    Const,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var, f64),
    MatMul(Var, Var),
    AddBias(Var, Var),
    Relu(Var),
    Tanh(Var),
    Sigmoid(Var),
    Exp(Var),
    Log(Var),
    Sum(Var),
    Mean(Var),
    RowSum(Var),
    SquaredError(Var, Var),
    Softmax(Var),
    LogSoftmax(Var),
    Concat(Vec<Var>),
    ConcatRows(Vec<Var>),
    L2Normalize(Var, f64),
    GatherRows(Var, Vec<usize>),
    Pick(Var, Vec<usize>),
    SliceCols(Var, usize, usize),
    SliceRows(Var, usize, usize),
    Reshape(Var, Vec<usize>),
    StopGradient(Var),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Input(_) => "input",
            Op::Param(_) => "param",
            Op::Const => "const",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::AddScalar(..) => "add_scalar",
            Op::MatMul(..) => "matmul",
            Op::AddBias(..) => "add_bias",
            Op::Relu(_) => "relu",
            Op::Tanh(_) => "tanh",
            Op::Sigmoid(_) => "sigmoid",
            Op::Exp(_) => "exp",
            Op::Log(_) => "log",
            Op::Sum(_) => "sum",
            Op::Mean(_) => "mean",
            Op::RowSum(_) => "row_sum",
            Op::SquaredError(..) => "squared_error",
            Op::Softmax(_) => "softmax",
            Op::LogSoftmax(_) => "log_softmax",
            Op::Concat(_) => "concat",
            Op::ConcatRows(_) => "concat_rows",
            Op::L2Normalize(..) => "l2_normalize",
            Op::GatherRows(..) => "gather_rows",
            Op::Pick(..) => "pick",
            Op::SliceCols(..) => "slice_cols",
            Op::SliceRows(..) => "slice_rows",
            Op::Reshape(..) => "reshape",
            Op::StopGradient(_) => "stop_gradient",
        }
    }

    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Input(_) | Op::Param(_) | Op::Const => vec![],
            Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::Mul(a, b)
            | Op::MatMul(a, b)
            | Op::AddBias(a, b)
            | Op::SquaredError(a, b) => vec![*a, *b],
            Op::Scale(a, _)
            | Op::AddScalar(a, _)
            | Op::Relu(a)
            | Op::Tanh(a)
            | Op::Sigmoid(a)
            | Op::Exp(a)
            | Op::Log(a)
            | Op::Sum(a)
            | Op::Mean(a)
            | Op::RowSum(a)
            | Op::Softmax(a)
            | Op::LogSoftmax(a)
            | Op::L2Normalize(a, _)
            | Op::GatherRows(a, _)
            | Op::Pick(a, _)
            | Op::SliceCols(a, _, _)
            | Op::SliceRows(a, _, _)
            | Op::Reshape(a, _)
            | Op::StopGradient(a) => vec![*a],
            Op::Concat(vs) | Op::ConcatRows(vs) => vs.clone(),
        }
    }
}

/// Shape of a row-wise reduction of `t` (last axis removed).
fn reduced_shape(t: &Tensor) -> Vec<usize> {
    match t.rank() {
        2 => vec![t.shape()[0]],
        _ => vec![],
    }
}

fn forward(op: &Op, vals: &[Tensor]) -> Result<Tensor, String> {
    let v = |x: &Var| &vals[x.0];
    let same = |a: &Tensor, b: &Tensor| -> Result<(), String> {
        if a.shape() == b.shape() {
            Ok(())
        } else {
            Err(format!("shapes {:?} and {:?} differ", a.shape(), b.shape()))
        }
    };
    Ok(match op {
        Op::Input(_) | Op::Param(_) | Op::Const => unreachable!("leaf nodes are not recomputed"),
        Op::Add(a, b) => {
            same(v(a), v(b))?;
            v(a).zip_map(v(b), |x, y| x + y)
        }
        Op::Sub(a, b) => {
            same(v(a), v(b))?;
            v(a).zip_map(v(b), |x, y| x - y)
        }
        Op::Mul(a, b) => {
            same(v(a), v(b))?;
            v(a).zip_map(v(b), |x, y| x * y)
        }
        Op::Scale(a, c) => v(a).map(|x| x * c),
        Op::AddScalar(a, c) => v(a).map(|x| x + c),
        Op::MatMul(a, b) => {
            let (ta, tb) = (v(a), v(b));
            if ta.rank() == 0 || tb.rank() == 0 {
                return Err("matmul needs rank >= 1 operands".into());
            }
            let (m, k) = ta.as_matrix();
            let (k2, n) = if tb.rank() == 1 { (tb.shape()[0], 1) } else { tb.as_matrix() };
            if k != k2 {
                return Err(format!(
                    "inner dimensions differ: {:?} x {:?}",
                    ta.shape(),
                    tb.shape()
                ));
            }
            let mut out = vec![0.0; m * n];
            gemm(m, k, n, ta.data(), false, tb.data(), false, &mut out, false);
            let shape = match (ta.rank(), tb.rank()) {
                (1, 1) => vec![],
                (1, _) => vec![n],
                (_, 1) => vec![m],
                _ => vec![m, n],
            };
            Tensor::new(shape, out).map_err(|e| e.to_string())?
        }
        Op::AddBias(a, b) => {
            let (ta, tb) = (v(a), v(b));
            let (_, c) = ta.as_matrix();
            if tb.rank() != 1 || tb.shape()[0] != c || ta.rank() == 0 {
                return Err(format!("bias {:?} does not fit {:?}", tb.shape(), ta.shape()));
            }
            let mut out = ta.clone();
            for row in out.data_mut().chunks_mut(c) {
                for (x, b) in row.iter_mut().zip(tb.data()) {
                    *x += b;
                }
            }
            out
        }
        Op::Relu(a) => v(a).map(|x| x.max(0.0)),
        Op::Tanh(a) => v(a).map(f64::tanh),
        Op::Sigmoid(a) => v(a).map(sigmoid),
        Op::Exp(a) => v(a).map(f64::exp),
        Op::Log(a) => {
            if v(a).data().iter().any(|&x| x <= 0.0) {
                return Err("log of a non-positive value".into());
            }
            v(a).map(f64::ln)
        }
        Op::Sum(a) => Tensor::scalar(v(a).sum()),
        Op::Mean(a) => Tensor::scalar(v(a).sum() / v(a).len() as f64),
        Op::RowSum(a) => {
            let t = v(a);
            let (r, c) = t.as_matrix();
            let data = (0..r).map(|i| t.data()[i * c..(i + 1) * c].iter().sum()).collect();
            Tensor::new(reduced_shape(t), data).map_err(|e| e.to_string())?
        }
        Op::SquaredError(a, b) => {
            let (ta, tb) = (v(a), v(b));
            same(ta, tb)?;
            let (r, c) = ta.as_matrix();
            let data = (0..r)
                .map(|i| {
                    ta.row(i).iter().zip(tb.row(i)).map(|(x, y)| (x - y) * (x - y)).sum()
                })
                .collect();
            let _ = c;
            Tensor::new(reduced_shape(ta), data).map_err(|e| e.to_string())?
        }
        Op::Softmax(a) => rowwise(v(a), |row, out| {
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for (o, x) in out.iter_mut().zip(row) {
                *o = (x - m).exp();
                z += *o;
            }
            for o in out.iter_mut() {
                *o /= z;
            }
        }),
        Op::LogSoftmax(a) => rowwise(v(a), |row, out| {
            let lse = log_sum_exp(row);
            for (o, x) in out.iter_mut().zip(row) {
                *o = x - lse;
            }
        }),
        Op::Concat(parts) => {
            if parts.is_empty() {
                return Err("concat of nothing".into());
            }
            let first = v(&parts[0]);
            let rank = first.rank();
            let (rows, _) = first.as_matrix();
            let mut total = 0;
            for p in parts {
                let t = v(p);
                if t.rank() != rank || t.rank() == 0 || t.as_matrix().0 != rows {
                    return Err(format!(
                        "cannot concatenate {:?} with {:?}",
                        first.shape(),
                        t.shape()
                    ));
                }
                total += t.as_matrix().1;
            }
            let mut data = Vec::with_capacity(rows * total);
            for i in 0..rows {
                for p in parts {
                    data.extend_from_slice(v(p).row(i));
                }
            }
            let shape = if rank == 1 { vec![total] } else { vec![rows, total] };
            Tensor::new(shape, data).map_err(|e| e.to_string())?
        }
        Op::ConcatRows(parts) => {
            let Some(first) = parts.first().map(v) else {
                return Err("concat_rows of nothing".into());
            };
            if first.rank() != 2 {
                return Err(format!("concat_rows needs matrices, got {:?}", first.shape()));
            }
            let cols = first.shape()[1];
            let mut data = Vec::new();
            for p in parts {
                let t = v(p);
                if t.rank() != 2 || t.shape()[1] != cols {
                    return Err(format!("cannot stack {:?} under {:?}", t.shape(), first.shape()));
                }
                data.extend_from_slice(t.data());
            }
            let rows = data.len() / cols;
            Tensor::new(vec![rows, cols], data).map_err(|e| e.to_string())?
        }
        Op::L2Normalize(a, eps) => {
            if v(a).rank() == 0 {
                return Err("l2_normalize needs a vector".into());
            }
            rowwise(v(a), |row, out| {
                let n = row.iter().map(|x| x * x).sum::<f64>().sqrt().max(*eps);
                for (o, x) in out.iter_mut().zip(row) {
                    *o = x / n;
                }
            })
        }
        Op::GatherRows(a, idx) => {
            let t = v(a);
            let (r, _) = t.as_matrix();
            if t.rank() != 2 {
                return Err("gather_rows needs a matrix".into());
            }
            if let Some(bad) = idx.iter().find(|&&i| i >= r) {
                return Err(format!("row index {bad} out of range {r}"));
            }
            if idx.is_empty() {
                return Err("gather_rows with no indices".into());
            }
            t.select_rows(idx)
        }
        Op::Pick(a, idx) => {
            let t = v(a);
            let (r, c) = t.as_matrix();
            if idx.len() != r {
                return Err(format!("{} indices for {} rows", idx.len(), r));
            }
            if let Some(bad) = idx.iter().find(|&&i| i >= c) {
                return Err(format!("column index {bad} out of range {c}"));
            }
            let data = idx.iter().enumerate().map(|(i, &j)| t.data()[i * c + j]).collect();
            Tensor::new(reduced_shape(t), data).map_err(|e| e.to_string())?
        }
        Op::SliceCols(a, s, e) => {
            let t = v(a);
            let (r, c) = t.as_matrix();
            if s >= e || *e > c || t.rank() == 0 {
                return Err(format!("column slice {s}..{e} of {:?}", t.shape()));
            }
            let mut data = Vec::with_capacity(r * (e - s));
            for i in 0..r {
                data.extend_from_slice(&t.row(i)[*s..*e]);
            }
            let shape = if t.rank() == 1 { vec![e - s] } else { vec![r, e - s] };
            Tensor::new(shape, data).map_err(|e| e.to_string())?
        }
        Op::SliceRows(a, s, e) => {
            let t = v(a);
            if t.rank() != 2 || s >= e || *e > t.shape()[0] {
                return Err(format!("row slice {s}..{e} of {:?}", t.shape()));
            }
            let c = t.shape()[1];
            Tensor::new(vec![e - s, c], t.data()[s * c..e * c].to_vec()).map_err(|e| e.to_string())?
        }
        Op::Reshape(a, shape) => v(a).reshaped(shape.clone()).map_err(|e| e.to_string())?,
        Op::StopGradient(a) => v(a).clone(),
    })
}

fn rowwise(t: &Tensor, f: impl Fn(&[f64], &mut [f64])) -> Tensor {
    let (_, c) = t.as_matrix();
    let mut out = t.clone();
    for (row, o) in t.data().chunks(c).zip(out.data_mut().chunks_mut(c)) {
        f(row, o);
    }
    out
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Numerically stable `ln Σ exp(x_i)`.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

#[derive(Clone, Debug)]
struct Node {
    op: Op,
    /// Whether any parameter is upstream of this node.
    depends_on_param: bool,
}

/// A recorded computation. See the module docs.
#[derive(Clone, Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    values: Vec<Tensor>,
    params: HashMap<String, Var>,
    inputs: HashMap<String, Var>,
    outputs: BTreeMap<String, Var>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.values[v.0]
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.values[v.0].shape()
    }

    fn leaf(&mut self, op: Op, value: Tensor) -> Var {
        let depends_on_param = matches!(op, Op::Param(_));
        self.nodes.push(Node { op, depends_on_param });
        self.values.push(value);
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, op: Op) -> Result<Var, NdError> {
        let id = self.nodes.len();
        let value = forward(&op, &self.values).map_err(|detail| NdError::Shape {
            node: id,
            op: op.name(),
            detail,
        })?;
        let depends_on_param = !matches!(op, Op::StopGradient(_))
            && op.inputs().iter().any(|i| self.nodes[i.0].depends_on_param);
        self.nodes.push(Node { op, depends_on_param });
        self.values.push(value);
        Ok(Var(id))
    }

    /// Named external input; its value may be replaced by [`Graph::eval`].
    pub fn input(&mut self, name: &str, value: Tensor) -> Var {
        let v = self.leaf(Op::Input(name.to_string()), value);
        self.inputs.insert(name.to_string(), v);
        v
    }

    /// Trainable parameter. Repeated requests for the same name share a node.
    pub fn param(&mut self, name: &str, value: &Tensor) -> Var {
        if let Some(&v) = self.params.get(name) {
            return v;
        }
        let v = self.leaf(Op::Param(name.to_string()), value.clone());
        self.params.insert(name.to_string(), v);
        v
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(Op::Const, value)
    }

    pub fn mark_output(&mut self, name: &str, v: Var) {
        self.outputs.insert(name.to_string(), v);
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NdError> {
        self.push(Op::Add(a, b))
    }
    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, NdError> {
        self.push(Op::Sub(a, b))
    }
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NdError> {
        self.push(Op::Mul(a, b))
    }
    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var, NdError> {
        self.push(Op::Scale(a, c))
    }
    pub fn add_scalar(&mut self, a: Var, c: f64) -> Result<Var, NdError> {
        self.push(Op::AddScalar(a, c))
    }
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NdError> {
        self.push(Op::MatMul(a, b))
    }
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Result<Var, NdError> {
        self.push(Op::AddBias(a, bias))
    }
    pub fn relu(&mut self, a: Var) -> Result<Var, NdError> {
        self.push(Op::Relu(a))
    }
    pub fn tanh(&mut self, a: Var) -> Result<Var, NdError> {
        self.push(Op::Tanh(a))
    }
    pub fn sigmoid(&mut self, a: Var) -> Result<Var, NdError> {
        self.push(Op::Sigmoid(a))
    }
    pub fn exp(&mut self, a: Var) -> Result<Var, NdError> {
        self.push(Op::Exp(a))
    }
    pub fn log(&mut self, a: Var) -> Result<Var, NdError> {
        self.push(Op::Log(a))
    }
    pub fn sum(&mut self, a: Var) -> Result<Var, NdError> {
        self.push(Op::Sum(a))
    }
    pub fn mean(&mut self, a: Var) -> Result<Var, NdError> {
        self.push(Op::Mean(a))
    }
    /// Sum along the last axis.
    pub fn row_sum(&mut self, a: Var) -> Result<Var, NdError> {
        self.push(Op::RowSum(a))
    }
    /// Row-wise `Σ (a - b)²`.
    pub fn squared_error(&mut self, a: Var, b: Var) -> Result<Var, NdError> {
        self.push(Op::SquaredError(a, b))
    }
    pub fn softmax(&mut self, a: Var) -> Result<Var, NdError> {
        self.push(Op::Softmax(a))
    }
    pub fn log_softmax(&mut self, a: Var) -> Result<Var, NdError> {
        self.push(Op::LogSoftmax(a))
    }
    /// Concatenate along the last axis.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var, NdError> {
        self.push(Op::Concat(parts.to_vec()))
    }
    /// Stack matrices with equal column counts on top of each other.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var, NdError> {
        self.push(Op::ConcatRows(parts.to_vec()))
    }
    /// Rows `start..end` of a matrix.
    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Result<Var, NdError> {
        self.push(Op::SliceRows(a, start, end))
    }
    /// Row-wise `v / max(‖v‖₂, eps)`.
    pub fn l2_normalize(&mut self, a: Var, eps: f64) -> Result<Var, NdError> {
        self.push(Op::L2Normalize(a, eps))
    }
    pub fn gather_rows(&mut self, a: Var, idx: &[usize]) -> Result<Var, NdError> {
        self.push(Op::GatherRows(a, idx.to_vec()))
    }
    /// Element `idx[i]` of each row `i`.
    pub fn pick(&mut self, a: Var, idx: &[usize]) -> Result<Var, NdError> {
        self.push(Op::Pick(a, idx.to_vec()))
    }
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var, NdError> {
        self.push(Op::SliceCols(a, start, end))
    }
    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var, NdError> {
        self.push(Op::Reshape(a, shape.to_vec()))
    }
    pub fn stop_gradient(&mut self, a: Var) -> Result<Var, NdError> {
        self.push(Op::StopGradient(a))
    }

    /// Replays every node with replaced inputs (and optionally parameters).
    ///
    /// Names in `inputs` may refer to inputs or parameters; unknown names are
    /// rejected. Returns the marked outputs.
    pub fn eval(
        &mut self,
        inputs: &HashMap<String, Tensor>,
    ) -> Result<BTreeMap<String, Tensor>, NdError> {
        for name in inputs.keys() {
            if !self.inputs.contains_key(name) && !self.params.contains_key(name) {
                return Err(NdError::UnknownName(name.clone()));
            }
        }
        for id in 0..self.nodes.len() {
            let op = &self.nodes[id].op;
            match op {
                Op::Input(name) | Op::Param(name) => {
                    if let Some(t) = inputs.get(name) {
                        if t.shape() != self.values[id].shape() {
                            return Err(NdError::Shape {
                                node: id,
                                op: op.name(),
                                detail: format!(
                                    "'{name}' expects shape {:?}, got {:?}",
                                    self.values[id].shape(),
                                    t.shape()
                                ),
                            });
                        }
                        self.values[id] = t.clone();
                    }
                }
                Op::Const => {}
                _ => {
                    let value = forward(op, &self.values).map_err(|detail| NdError::Shape {
                        node: id,
                        op: op.name(),
                        detail,
                    })?;
                    self.values[id] = value;
                }
            }
        }
        Ok(self.outputs.iter().map(|(k, v)| (k.clone(), self.values[v.0].clone())).collect())
    }

    /// Reverse-mode derivatives of the scalar `loss` w.r.t. the named
    /// parameters. Parameters absent from the graph, or not upstream of
    /// `loss`, get zero gradients only if they are present in the graph.
    pub fn gradients(&self, loss: Var, wrt: &[&str]) -> Result<BTreeMap<String, Tensor>, NdError> {
        let targets: Vec<(String, Var)> = wrt
            .iter()
            .map(|name| {
                self.params
                    .get(*name)
                    .map(|&v| (name.to_string(), v))
                    .ok_or_else(|| NdError::UnknownName(name.to_string()))
            })
            .collect::<Result<_, _>>()?;
        let grads = self.backward(loss, targets.iter().map(|(_, v)| *v))?;
        Ok(targets
            .into_iter()
            .map(|(name, v)| {
                let g = grads[v.0].clone().unwrap_or_else(|| Tensor::zeros(self.values[v.0].shape()));
                (name, g)
            })
            .collect())
    }

    /// Gradients for every parameter in the graph whose name satisfies `keep`.
    pub fn param_gradients(
        &self,
        loss: Var,
        keep: impl Fn(&str) -> bool,
    ) -> Result<BTreeMap<String, Tensor>, NdError> {
        let names: Vec<&str> =
            self.params.keys().map(|s| s.as_str()).filter(|n| keep(n)).collect();
        self.gradients(loss, &names)
    }

    /// Names of the parameters registered in this graph.
    pub fn param_names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(|s| s.as_str())
    }

    fn backward(
        &self,
        loss: Var,
        targets: impl Iterator<Item = Var>,
    ) -> Result<Vec<Option<Tensor>>, NdError> {
        if self.values[loss.0].len() != 1 {
            return Err(NdError::NonScalarLoss(self.values[loss.0].shape().to_vec()));
        }
        let n = self.nodes.len();
        // Only nodes that lie between a requested parameter and the loss.
        let mut needed = vec![false; n];
        for t in targets {
            needed[t.0] = true;
        }
        for id in 0..=loss.0 {
            if needed[id] || !self.nodes[id].depends_on_param {
                continue;
            }
            if matches!(self.nodes[id].op, Op::StopGradient(_)) {
                continue;
            }
            needed[id] = self.nodes[id].op.inputs().iter().any(|i| needed[i.0]);
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; n];
        grads[loss.0] = Some(Tensor::full(self.values[loss.0].shape(), 1.0));
        for id in (0..=loss.0).rev() {
            if !needed[id] {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            let op = &self.nodes[id].op;
            if matches!(op, Op::Param(_)) {
                grads[id] = Some(g);
                continue;
            }
            self.backprop_node(id, &g, &needed, &mut grads);
        }
        Ok(grads)
    }

    fn backprop_node(&self, id: usize, g: &Tensor, needed: &[bool], grads: &mut [Option<Tensor>]) {
        let out = &self.values[id];
        let val = |v: &Var| &self.values[v.0];
        let mut acc = |v: Var, t: Tensor| {
            if !needed[v.0] {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&t),
                slot => *slot = Some(t),
            }
        };
        match &self.nodes[id].op {
            Op::Input(_) | Op::Param(_) | Op::Const | Op::StopGradient(_) => {}
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::Sub(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.map(|x| -x));
            }
            Op::Mul(a, b) => {
                acc(*a, g.zip_map(val(b), |x, y| x * y));
                acc(*b, g.zip_map(val(a), |x, y| x * y));
            }
            Op::Scale(a, c) => acc(*a, g.map(|x| x * c)),
            Op::AddScalar(a, _) => acc(*a, g.clone()),
            Op::MatMul(a, b) => {
                let (ta, tb) = (val(a), val(b));
                let (m, k) = ta.as_matrix();
                let n = if tb.rank() == 1 { 1 } else { tb.as_matrix().1 };
                if needed[a.0] {
                    // dA = G Bᵀ, (m,n) x (n,k)
                    let mut da = vec![0.0; m * k];
                    gemm(m, n, k, g.data(), false, tb.data(), true, &mut da, false);
                    acc(*a, Tensor::new(ta.shape().to_vec(), da).expect("shape"));
                }
                if needed[b.0] {
                    // dB = Aᵀ G, (k,m) x (m,n)
                    let mut db = vec![0.0; k * n];
                    gemm(k, m, n, ta.data(), true, g.data(), false, &mut db, false);
                    acc(*b, Tensor::new(tb.shape().to_vec(), db).expect("shape"));
                }
            }
            Op::AddBias(a, b) => {
                acc(*a, g.clone());
                let c = val(b).len();
                let mut db = vec![0.0; c];
                for row in g.data().chunks(c) {
                    for (d, x) in db.iter_mut().zip(row) {
                        *d += x;
                    }
                }
                acc(*b, Tensor::vector(db));
            }
            Op::Relu(a) => acc(*a, g.zip_map(val(a), |x, y| if y > 0.0 { x } else { 0.0 })),
            Op::Tanh(a) => acc(*a, g.zip_map(out, |x, y| x * (1.0 - y * y))),
            Op::Sigmoid(a) => acc(*a, g.zip_map(out, |x, y| x * y * (1.0 - y))),
            Op::Exp(a) => acc(*a, g.zip_map(out, |x, y| x * y)),
            Op::Log(a) => acc(*a, g.zip_map(val(a), |x, y| x / y)),
            Op::Sum(a) => acc(*a, Tensor::full(val(a).shape(), g.item())),
            Op::Mean(a) => {
                let t = val(a);
                acc(*a, Tensor::full(t.shape(), g.item() / t.len() as f64))
            }
            Op::RowSum(a) => {
                let t = val(a);
                let (_, c) = t.as_matrix();
                let mut d = Tensor::zeros(t.shape());
                for (row, gi) in d.data_mut().chunks_mut(c).zip(g.data()) {
                    row.fill(*gi);
                }
                acc(*a, d)
            }
            Op::SquaredError(a, b) => {
                let (ta, tb) = (val(a), val(b));
                let (_, c) = ta.as_matrix();
                let mut da = ta.zip_map(tb, |x, y| 2.0 * (x - y));
                for (row, gi) in da.data_mut().chunks_mut(c).zip(g.data()) {
                    for x in row {
                        *x *= gi;
                    }
                }
                let db = da.map(|x| -x);
                acc(*a, da);
                acc(*b, db);
            }
            Op::Softmax(a) => {
                let (_, c) = out.as_matrix();
                let mut d = out.clone();
                for ((drow, yrow), grow) in
                    d.data_mut().chunks_mut(c).zip(out.data().chunks(c)).zip(g.data().chunks(c))
                {
                    let dot: f64 = yrow.iter().zip(grow).map(|(y, g)| y * g).sum();
                    for ((dx, y), gi) in drow.iter_mut().zip(yrow).zip(grow) {
                        *dx = y * (gi - dot);
                    }
                }
                acc(*a, d)
            }
            Op::LogSoftmax(a) => {
                let (_, c) = out.as_matrix();
                let mut d = g.clone();
                for (drow, yrow) in d.data_mut().chunks_mut(c).zip(out.data().chunks(c)) {
                    let gsum: f64 = drow.iter().sum();
                    for (dx, y) in drow.iter_mut().zip(yrow) {
                        *dx -= y.exp() * gsum;
                    }
                }
                acc(*a, d)
            }
            Op::Concat(parts) => {
                let (rows, total) = out.as_matrix();
                let mut offset = 0;
                for p in parts {
                    let t = val(p);
                    let w = t.as_matrix().1;
                    if needed[p.0] {
                        let mut data = Vec::with_capacity(rows * w);
                        for i in 0..rows {
                            data.extend_from_slice(&g.data()[i * total + offset..i * total + offset + w]);
                        }
                        acc(*p, Tensor::new(t.shape().to_vec(), data).expect("shape"));
                    }
                    offset += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for p in parts {
                    let n = val(p).len();
                    if needed[p.0] {
                        let d = Tensor::new(val(p).shape().to_vec(), g.data()[offset..offset + n].to_vec());
                        acc(*p, d.expect("shape"));
                    }
                    offset += n;
                }
            }
            Op::L2Normalize(a, eps) => {
                let t = val(a);
                let (_, c) = t.as_matrix();
                let mut d = Tensor::zeros(t.shape());
                for ((drow, xrow), (yrow, grow)) in d
                    .data_mut()
                    .chunks_mut(c)
                    .zip(t.data().chunks(c))
                    .zip(out.data().chunks(c).zip(g.data().chunks(c)))
                {
                    let norm = xrow.iter().map(|x| x * x).sum::<f64>().sqrt();
                    if norm >= *eps {
                        let dot: f64 = yrow.iter().zip(grow).map(|(y, g)| y * g).sum();
                        for ((dx, y), gi) in drow.iter_mut().zip(yrow).zip(grow) {
                            *dx = (gi - y * dot) / norm;
                        }
                    } else {
                        for (dx, gi) in drow.iter_mut().zip(grow) {
                            *dx = gi / eps;
                        }
                    }
                }
                acc(*a, d)
            }
            Op::GatherRows(a, idx) => {
                let t = val(a);
                let (_, c) = t.as_matrix();
                let mut d = Tensor::zeros(t.shape());
                for (k, &i) in idx.iter().enumerate() {
                    let src = &g.data()[k * c..(k + 1) * c];
                    for (dx, s) in d.data_mut()[i * c..(i + 1) * c].iter_mut().zip(src) {
                        *dx += s;
                    }
                }
                acc(*a, d)
            }
            Op::Pick(a, idx) => {
                let t = val(a);
                let (_, c) = t.as_matrix();
                let mut d = Tensor::zeros(t.shape());
                for (i, (&j, gi)) in idx.iter().zip(g.data()).enumerate() {
                    d.data_mut()[i * c + j] += gi;
                }
                acc(*a, d)
            }
            Op::SliceRows(a, s, e) => {
                let t = val(a);
                let c = t.shape()[1];
                let mut d = Tensor::zeros(t.shape());
                d.data_mut()[s * c..e * c].copy_from_slice(g.data());
                acc(*a, d)
            }
            Op::SliceCols(a, s, e) => {
                let t = val(a);
                let (r, c) = t.as_matrix();
                let w = e - s;
                let mut d = Tensor::zeros(t.shape());
                for i in 0..r {
                    d.data_mut()[i * c + s..i * c + e].copy_from_slice(&g.data()[i * w..(i + 1) * w]);
                }
                acc(*a, d)
            }
            Op::Reshape(a, _) => {
                let t = val(a);
                acc(*a, g.reshaped(t.shape().to_vec()).expect("shape"))
            }
        }
    }
}
