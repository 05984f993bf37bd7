//! Small network building blocks on top of [`Graph`].

use rand::Rng;

use super::{Graph, NdError, ParamStore, Tensor, Var};

/// Guard used by every normalization in the crate.
pub const NORM_EPS: f64 = 1e-8;

/// `v / max(‖v‖₂, eps_guard)`, row-wise for matrices.
pub fn l2_normalize(v: &Tensor, eps_guard: f64) -> Tensor {
    let (_, c) = v.as_matrix();
    let mut out = v.clone();
    for row in out.data_mut().chunks_mut(c) {
        let n = row.iter().map(|x| x * x).sum::<f64>().sqrt().max(eps_guard);
        for x in row {
            *x /= n;
        }
    }
    out
}

/// `x W + b` with parameters `{prefix}.w`, `{prefix}.b`.
pub fn linear(g: &mut Graph, params: &ParamStore, prefix: &str, x: Var) -> Result<Var, NdError> {
    let w = g.param(&format!("{prefix}.w"), params.tensor(&format!("{prefix}.w")));
    let b = g.param(&format!("{prefix}.b"), params.tensor(&format!("{prefix}.b")));
    let xw = g.matmul(x, w)?;
    g.add_bias(xw, b)
}

/// Layer widths `[in, hidden.., out]` of an MLP.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MlpShape(pub Vec<usize>);

impl MlpShape {
    pub fn new(input: usize, hidden: &[usize], output: usize) -> Self {
        let mut v = vec![input];
        v.extend_from_slice(hidden);
        v.push(output);
        Self(v)
    }

    pub fn layers(&self) -> usize {
        self.0.len() - 1
    }

    pub fn init(&self, params: &mut ParamStore, prefix: &str, rng: &mut impl Rng) {
        for (i, w) in self.0.windows(2).enumerate() {
            params.init_linear(&format!("{prefix}.l{i}"), w[0], w[1], rng);
        }
    }
}

/// ReLU MLP with a linear output layer.
pub fn mlp(
    g: &mut Graph,
    params: &ParamStore,
    prefix: &str,
    layers: usize,
    x: Var,
) -> Result<Var, NdError> {
    let mut h = x;
    for i in 0..layers {
        h = linear(g, params, &format!("{prefix}.l{i}"), h)?;
        if i + 1 < layers {
            h = g.relu(h)?;
        }
    }
    Ok(h)
}

/// Initializes a GRU cell with input size `input` and hidden size `hidden`.
pub fn init_gru(params: &mut ParamStore, prefix: &str, input: usize, hidden: usize, rng: &mut impl Rng) {
    let s = 1.0 / (hidden as f64).sqrt();
    let mut uniform = |n: usize| -> Vec<f64> { (0..n).map(|_| rng.random_range(-s..=s)).collect() };
    params.insert(format!("{prefix}.wx"), Tensor::matrix(input, 3 * hidden, uniform(input * 3 * hidden)).expect("shape"));
    params.insert(format!("{prefix}.wh"), Tensor::matrix(hidden, 3 * hidden, uniform(hidden * 3 * hidden)).expect("shape"));
    params.insert(format!("{prefix}.bx"), Tensor::zeros(&[3 * hidden]));
    params.insert(format!("{prefix}.bh"), Tensor::zeros(&[3 * hidden]));
}

/// Gated recurrent unit:
///
/// ```text
/// r  = σ(x Wr + h Ur + br)
/// u  = σ(x Wu + h Uu + bu)
/// n  = tanh(x Wn + bxn + r ⊙ (h Un + bhn))
/// h' = u ⊙ h + (1 - u) ⊙ n
/// ```
pub fn gru_cell(
    g: &mut Graph,
    params: &ParamStore,
    prefix: &str,
    x: Var,
    h: Var,
) -> Result<Var, NdError> {
    let wx = g.param(&format!("{prefix}.wx"), params.tensor(&format!("{prefix}.wx")));
    let wh = g.param(&format!("{prefix}.wh"), params.tensor(&format!("{prefix}.wh")));
    let bx = g.param(&format!("{prefix}.bx"), params.tensor(&format!("{prefix}.bx")));
    let bh = g.param(&format!("{prefix}.bh"), params.tensor(&format!("{prefix}.bh")));
    let hidden = g.value(wh).shape()[0];
    let hdim = *g.shape(h).last().unwrap_or(&0);
    if hdim != hidden {
        return Err(NdError::Shape {
            node: h.index(),
            op: "gru_cell",
            detail: format!("hidden state width {hdim}, cell expects {hidden}"),
        });
    }
    let xw = g.matmul(x, wx)?;
    let xw = g.add_bias(xw, bx)?;
    let hw = g.matmul(h, wh)?;
    let hw = g.add_bias(hw, bh)?;
    let x_ru = g.slice_cols(xw, 0, 2 * hidden)?;
    let h_ru = g.slice_cols(hw, 0, 2 * hidden)?;
    let ru = g.add(x_ru, h_ru)?;
    let ru = g.sigmoid(ru)?;
    let r = g.slice_cols(ru, 0, hidden)?;
    let u = g.slice_cols(ru, hidden, 2 * hidden)?;
    let x_n = g.slice_cols(xw, 2 * hidden, 3 * hidden)?;
    let h_n = g.slice_cols(hw, 2 * hidden, 3 * hidden)?;
    let rh = g.mul(r, h_n)?;
    let n = g.add(x_n, rh)?;
    let n = g.tanh(n)?;
    let diff = g.sub(h, n)?;
    let gated = g.mul(u, diff)?;
    g.add(n, gated)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn zero_gru_halves_hidden_state() {
        let mut p = ParamStore::new();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        init_gru(&mut p, "c", 3, 4, &mut rng);
        for name in ["c.wx", "c.wh", "c.bx", "c.bh"] {
            let t = p.get_mut(name).unwrap();
            t.data_mut().fill(0.0);
        }
        let mut g = Graph::new();
        let x = g.input("x", Tensor::vector(vec![0.3, -1.0, 2.0]));
        let h = g.input("h", Tensor::vector(vec![1.0, -2.0, 0.5, 4.0]));
        let out = gru_cell(&mut g, &p, "c", x, h).unwrap();
        assert_eq!(g.value(out).data(), &[0.5, -1.0, 0.25, 2.0]);
    }

    #[test]
    fn gru_output_matches_hidden_shape() {
        let mut p = ParamStore::new();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        init_gru(&mut p, "c", 5, 7, &mut rng);
        let mut g = Graph::new();
        let x = g.input("x", Tensor::zeros(&[3, 5]));
        let h = g.input("h", Tensor::full(&[3, 7], 0.1));
        let out = gru_cell(&mut g, &p, "c", x, h).unwrap();
        assert_eq!(g.shape(out), &[3, 7]);
        let bad = g.input("bad", Tensor::zeros(&[3, 6]));
        assert!(gru_cell(&mut g, &p, "c", x, bad).is_err());
    }

    #[test]
    fn normalize_examples() {
        let v = l2_normalize(&Tensor::vector(vec![3.0, 4.0]), NORM_EPS);
        assert!((v.data()[0] - 0.6).abs() < 1e-15 && (v.data()[1] - 0.8).abs() < 1e-15);
        let u = Tensor::vector(vec![0.0, 1.0, 0.0]);
        assert_eq!(l2_normalize(&u, NORM_EPS), u);
        let z = Tensor::zeros(&[4]);
        assert_eq!(l2_normalize(&z, NORM_EPS), z);
    }
}
