//! Trainable building blocks recorded onto a [`Tape`].
//!
//! Blocks only hold [`ParamId`]s; weights stay in the [`ParamStore`] and are
//! bound to the tape on first use.

use rand::Rng;

use super::{ParamId, ParamStore, Segments, Tape, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new(store: &mut ParamStore, name: &str, in_dim: usize, out_dim: usize, bias: bool, rng: &mut impl Rng) -> Result<Self> {
        let weight = store.add_glorot(format!("{name}.weight"), in_dim, out_dim, rng)?;
        let bias = if bias { Some(store.add_zeros(format!("{name}.bias"), 1, out_dim)?) } else { None };
        Ok(Self { weight, bias, in_dim, out_dim })
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let w = tape.param(store, self.weight);
        let y = tape.matmul(x, w)?;
        match self.bias {
            Some(b) => {
                let b = tape.param(store, b);
                tape.add_row(y, b)
            }
            None => Ok(y),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    fn apply(self, tape: &mut Tape, x: Var) -> Result<Var> {
        match self {
            Activation::Relu => tape.relu(x),
            Activation::Tanh => tape.tanh(x),
        }
    }
}

/// Stack of linear layers with an activation between consecutive layers
/// and none after the last.
#[derive(Clone, Debug)]
pub struct Mlp {
    pub layers: Vec<Linear>,
    pub activation: Activation,
}

impl Mlp {
    /// `dims = [in, hidden.., out]`.
    pub fn new(store: &mut ParamStore, name: &str, dims: &[usize], activation: Activation, rng: &mut impl Rng) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::InvalidArgument("an MLP needs at least input and output widths".into()));
        }
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::new(store, &format!("{name}.{i}"), w[0], w[1], true, rng))
            .collect::<Result<_>>()?;
        Ok(Self { layers, activation })
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        self.forward_with(tape, store, x, |_, v| Ok(v))
    }

    /// Like [`Mlp::forward`], with `hidden` applied after each activation
    /// (used for dropout).
    pub fn forward_with(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        mut x: Var,
        mut hidden: impl FnMut(&mut Tape, Var) -> Result<Var>,
    ) -> Result<Var> {
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            x = layer.forward(tape, store, x)?;
            if i < last {
                x = self.activation.apply(tape, x)?;
                x = hidden(tape, x)?;
            }
        }
        Ok(x)
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.out_dim)
    }
}

/// Gated recurrent unit with the update rule
/// `h' = (1 - z) * h + z * tanh(W x + U (r * h) + b)`.
#[derive(Clone, Debug)]
pub struct GruCell {
    pub update_x: Linear,
    pub update_h: Linear,
    pub reset_x: Linear,
    pub reset_h: Linear,
    pub cand_x: Linear,
    pub cand_h: Linear,
    pub in_dim: usize,
    pub hidden_dim: usize,
}

impl GruCell {
    pub fn new(store: &mut ParamStore, name: &str, in_dim: usize, hidden_dim: usize, rng: &mut impl Rng) -> Result<Self> {
        Ok(Self {
            update_x: Linear::new(store, &format!("{name}.z_x"), in_dim, hidden_dim, true, rng)?,
            update_h: Linear::new(store, &format!("{name}.z_h"), hidden_dim, hidden_dim, false, rng)?,
            reset_x: Linear::new(store, &format!("{name}.r_x"), in_dim, hidden_dim, true, rng)?,
            reset_h: Linear::new(store, &format!("{name}.r_h"), hidden_dim, hidden_dim, false, rng)?,
            cand_x: Linear::new(store, &format!("{name}.n_x"), in_dim, hidden_dim, true, rng)?,
            cand_h: Linear::new(store, &format!("{name}.n_h"), hidden_dim, hidden_dim, false, rng)?,
            in_dim,
            hidden_dim,
        })
    }

    /// One step over a batch: `x` is `B × in_dim`, `h` is `B × hidden_dim`.
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var, h: Var) -> Result<Var> {
        let [bx, dx] = tape.shape(x);
        let [bh, dh] = tape.shape(h);
        if dx != self.in_dim || dh != self.hidden_dim || bx != bh {
            return Err(Error::Shape(format!(
                "gru_cell expects {}/{} inputs, got x {bx}x{dx} and h {bh}x{dh}",
                self.in_dim, self.hidden_dim
            )));
        }
        let zx = self.update_x.forward(tape, store, x)?;
        let zh = self.update_h.forward(tape, store, h)?;
        let z = tape.add(zx, zh)?;
        let z = tape.sigmoid(z)?;
        let rx = self.reset_x.forward(tape, store, x)?;
        let rh = self.reset_h.forward(tape, store, h)?;
        let r = tape.add(rx, rh)?;
        let r = tape.sigmoid(r)?;
        let rh = tape.mul(r, h)?;
        let nx = self.cand_x.forward(tape, store, x)?;
        let nh = self.cand_h.forward(tape, store, rh)?;
        let n = tape.add(nx, nh)?;
        let n = tape.tanh(n)?;
        let ones = tape.constant(Tensor::filled(bh, dh, 1.0));
        let keep = tape.sub(ones, z)?;
        let kept = tape.mul(keep, h)?;
        let fresh = tape.mul(z, n)?;
        tape.add(kept, fresh)
    }
}

/// LSTM cell with fused gate projections (input, forget, cell, output).
#[derive(Clone, Debug)]
pub struct LstmCell {
    pub gates_x: Linear,
    pub gates_h: Linear,
    pub in_dim: usize,
    pub hidden_dim: usize,
}

impl LstmCell {
    pub fn new(store: &mut ParamStore, name: &str, in_dim: usize, hidden_dim: usize, rng: &mut impl Rng) -> Result<Self> {
        Ok(Self {
            gates_x: Linear::new(store, &format!("{name}.x"), in_dim, 4 * hidden_dim, true, rng)?,
            gates_h: Linear::new(store, &format!("{name}.h"), hidden_dim, 4 * hidden_dim, false, rng)?,
            in_dim,
            hidden_dim,
        })
    }

    /// One step; returns the new `(h, c)`.
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var, h: Var, c: Var) -> Result<(Var, Var)> {
        let d = self.hidden_dim;
        let gx = self.gates_x.forward(tape, store, x)?;
        let gh = self.gates_h.forward(tape, store, h)?;
        let gates = tape.add(gx, gh)?;
        let i = tape.slice_cols(gates, 0, d)?;
        let i = tape.sigmoid(i)?;
        let f = tape.slice_cols(gates, d, d)?;
        let f = tape.sigmoid(f)?;
        let g = tape.slice_cols(gates, 2 * d, d)?;
        let g = tape.tanh(g)?;
        let o = tape.slice_cols(gates, 3 * d, d)?;
        let o = tape.sigmoid(o)?;
        let fc = tape.mul(f, c)?;
        let ig = tape.mul(i, g)?;
        let c_new = tape.add(fc, ig)?;
        let tc = tape.tanh(c_new)?;
        let h_new = tape.mul(o, tc)?;
        Ok((h_new, c_new))
    }
}

/// Scaled dot-product attention of one `1 × d` query over `n × d` keys and
/// `n × v` values; returns the `1 × v` output and the `n × 1` weights.
pub fn attention(tape: &mut Tape, query: Var, keys: Var, values: Var) -> Result<(Var, Var)> {
    let [n, _] = tape.shape(keys);
    if n == 0 {
        return Err(Error::EmptyNeighborhood);
    }
    if tape.shape(query)[0] != 1 {
        return Err(Error::Shape("attention takes a single query row".into()));
    }
    segment_attention(tape, query, keys, values, &Segments::single(n))
}

/// Batched attention: key/value row `r` belongs to query `seg.ids()[r]`.
/// Queries without keys produce zero rows.
pub fn segment_attention(tape: &mut Tape, queries: Var, keys: Var, values: Var, seg: &Segments) -> Result<(Var, Var)> {
    let [nq, d] = tape.shape(queries);
    let [nk, dk] = tape.shape(keys);
    let [nv, _] = tape.shape(values);
    if d != dk || nk != nv || seg.count() != nq {
        return Err(Error::Shape(format!(
            "attention with {nq}x{d} queries, {nk}x{dk} keys, {nv} values, {} segments",
            seg.count()
        )));
    }
    let q = tape.gather_rows(queries, seg.ids().to_vec())?;
    let qk = tape.mul(q, keys)?;
    let scores = tape.row_sum(qk)?;
    let scores = tape.scale(scores, 1.0 / (d as f64).sqrt())?;
    let weights = tape.segment_softmax(scores, seg)?;
    let weighted = tape.mul_col(values, weights)?;
    let out = tape.segment_sum(weighted, seg)?;
    Ok((out, weights))
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn zero_all(store: &mut ParamStore) {
        for id in store.ids().collect::<Vec<_>>() {
            store.get_mut(id).value.data_mut().fill(0.0);
        }
    }

    #[test]
    fn gru_with_zero_weights_halves_state() {
        let mut store = ParamStore::new();
        let cell = GruCell::new(&mut store, "gru", 3, 2, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        zero_all(&mut store);
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::row(vec![0.3, -1.0, 2.0]));
        let h = tape.constant(Tensor::row(vec![0.8, -0.4]));
        let out = cell.forward(&mut tape, &store, x, h).unwrap();
        assert_eq!(tape.value(out).data(), &[0.4, -0.2]);
    }

    #[test]
    fn gru_zero_input_zero_state_stays_zero() {
        let mut store = ParamStore::new();
        let cell = GruCell::new(&mut store, "gru", 2, 3, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::zeros(1, 2));
        let h = tape.constant(Tensor::zeros(1, 3));
        let out = cell.forward(&mut tape, &store, x, h).unwrap();
        assert!(tape.value(out).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn gru_rejects_wrong_shapes() {
        let mut store = ParamStore::new();
        let cell = GruCell::new(&mut store, "gru", 2, 3, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::zeros(1, 3));
        let h = tape.constant(Tensor::zeros(1, 3));
        assert!(cell.forward(&mut tape, &store, x, h).is_err());
    }

    #[test]
    fn single_key_attention_returns_its_value() {
        let mut tape = Tape::new();
        let q = tape.constant(Tensor::row(vec![0.5, -0.2]));
        let k = tape.constant(Tensor::row(vec![3.0, 1.0]));
        let v = tape.constant(Tensor::row(vec![7.0, -1.5, 2.0]));
        let (out, w) = attention(&mut tape, q, k, v).unwrap();
        assert_eq!(tape.value(out).data(), &[7.0, -1.5, 2.0]);
        assert_eq!(tape.value(w).data(), &[1.0]);
    }

    #[test]
    fn identical_keys_average_values() {
        let mut tape = Tape::new();
        let q = tape.constant(Tensor::row(vec![1.0, 2.0]));
        let k = tape.constant(Tensor::from_rows(&[vec![0.3, 0.1], vec![0.3, 0.1], vec![0.3, 0.1]]).unwrap());
        let v = tape.constant(Tensor::from_rows(&[vec![1.0], vec![2.0], vec![6.0]]).unwrap());
        let (out, _) = attention(&mut tape, q, k, v).unwrap();
        assert!((tape.value(out).data()[0] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn two_key_attention_matches_hand_softmax() {
        let mut tape = Tape::new();
        let q = tape.constant(Tensor::row(vec![1.0, 0.0]));
        let k = tape.constant(Tensor::from_rows(&[vec![2.0, 5.0], vec![0.0, -1.0]]).unwrap());
        let v = tape.constant(Tensor::from_rows(&[vec![10.0], vec![-4.0]]).unwrap());
        let (out, w) = attention(&mut tape, q, k, v).unwrap();
        // scores 2/sqrt2 and 0/sqrt2
        let e0 = (2.0f64 / 2f64.sqrt()).exp();
        let w0 = e0 / (e0 + 1.0);
        let w1 = 1.0 / (e0 + 1.0);
        assert!((tape.value(w).data()[0] - w0).abs() < 1e-12);
        assert!((tape.value(out).data()[0] - (10.0 * w0 - 4.0 * w1)).abs() < 1e-12);
    }

    #[test]
    fn empty_neighborhood_is_an_error() {
        let mut tape = Tape::new();
        let q = tape.constant(Tensor::row(vec![1.0]));
        let k = tape.constant(Tensor::zeros(0, 1));
        let v = tape.constant(Tensor::zeros(0, 2));
        assert!(matches!(attention(&mut tape, q, k, v), Err(Error::EmptyNeighborhood)));
    }

    #[test]
    fn segment_attention_leaves_keyless_queries_zero() {
        let mut tape = Tape::new();
        let q = tape.constant(Tensor::from_rows(&[vec![1.0], vec![1.0]]).unwrap());
        let k = tape.constant(Tensor::column(vec![0.5]));
        let v = tape.constant(Tensor::column(vec![4.0]));
        let seg = Segments::new(vec![1], 2).unwrap();
        let (out, _) = segment_attention(&mut tape, q, k, v, &seg).unwrap();
        assert_eq!(tape.value(out).data(), &[0.0, 4.0]);
    }
}
