//! Task heads on top of node embeddings: a link-probability MLP over
//! concatenated endpoint embeddings and a node-class MLP with softmax.

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{Activation, Mlp, ParamStore, Tape, Tensor, Var};

/// Inverted dropout applied to hidden activations during training.
#[derive(Clone, Copy, Debug)]
pub struct Dropout {
    pub rate: f64,
}

impl Dropout {
    pub fn apply<R: Rng + ?Sized>(self, tape: &mut Tape, x: Var, rng: &mut R) -> Result<Var> {
        if self.rate <= 0.0 {
            return Ok(x);
        }
        let [r, c] = tape.shape(x);
        let keep = 1.0 - self.rate;
        let mask: Vec<f64> = (0..r * c).map(|_| if rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 }).collect();
        let mask = tape.constant(Tensor::new(r, c, mask)?);
        tape.mul(x, mask)
    }
}

fn three_layer(store: &mut ParamStore, name: &str, input: usize, width: usize, out: usize, rng: &mut impl Rng) -> Result<Mlp> {
    Mlp::new(store, name, &[input, width, (width / 2).max(1), out], Activation::Relu, rng)
}

/// `sigmoid(MLP([z_i, z_j]))` with hidden widths `[d, d/2]`.
#[derive(Clone, Debug)]
pub struct EdgeDecoder {
    pub mlp: Mlp,
    pub emb_dim: usize,
}

impl EdgeDecoder {
    pub fn new(store: &mut ParamStore, name: &str, emb_dim: usize, rng: &mut impl Rng) -> Result<Self> {
        Ok(Self { mlp: three_layer(store, name, 2 * emb_dim, emb_dim, 1, rng)?, emb_dim })
    }

    /// Logits (`rows × 1`) for row-aligned source and destination embeddings.
    /// `dropout` is only given during training.
    pub fn logits(&self, tape: &mut Tape, store: &ParamStore, z_src: Var, z_dst: Var, dropout: Option<(Dropout, &mut dyn rand::RngCore)>) -> Result<Var> {
        let [rs, cs] = tape.shape(z_src);
        let [rd, cd] = tape.shape(z_dst);
        if rs != rd || cs != self.emb_dim || cd != self.emb_dim {
            return Err(Error::Shape(format!("edge decoder expects two n×{} inputs, got {rs}×{cs} and {rd}×{cd}", self.emb_dim)));
        }
        let x = tape.concat_cols(&[z_src, z_dst])?;
        match dropout {
            Some((d, rng)) => self.mlp.forward_with(tape, store, x, |t, v| d.apply(t, v, rng)),
            None => self.mlp.forward(tape, store, x),
        }
    }

    /// Edge probabilities for row-aligned embedding matrices.
    pub fn probability(&self, store: &ParamStore, z_src: &Tensor, z_dst: &Tensor) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let a = tape.constant(z_src.clone());
        let b = tape.constant(z_dst.clone());
        let l = self.logits(&mut tape, store, a, b, None)?;
        Ok(tape.value(l).data().iter().map(|&v| sigmoid(v)).collect())
    }
}

/// `softmax(MLP(z_i))` over `classes` outputs.
#[derive(Clone, Debug)]
pub struct NodeDecoder {
    pub mlp: Mlp,
    pub emb_dim: usize,
    pub classes: usize,
}

impl NodeDecoder {
    pub fn new(store: &mut ParamStore, name: &str, emb_dim: usize, classes: usize, rng: &mut impl Rng) -> Result<Self> {
        if classes < 2 {
            return Err(Error::InvalidArgument("a node decoder needs at least two classes".into()));
        }
        Ok(Self { mlp: three_layer(store, name, emb_dim, emb_dim, classes, rng)?, emb_dim, classes })
    }

    pub fn logits(&self, tape: &mut Tape, store: &ParamStore, z: Var, dropout: Option<(Dropout, &mut dyn rand::RngCore)>) -> Result<Var> {
        let [_, c] = tape.shape(z);
        if c != self.emb_dim {
            return Err(Error::Shape(format!("node decoder expects width {}, got {c}", self.emb_dim)));
        }
        match dropout {
            Some((d, rng)) => self.mlp.forward_with(tape, store, z, |t, v| d.apply(t, v, rng)),
            None => self.mlp.forward(tape, store, z),
        }
    }

    /// Class probabilities, one row per embedding.
    pub fn class_probs(&self, store: &ParamStore, z: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let zv = tape.constant(z.clone());
        let l = self.logits(&mut tape, store, zv, None)?;
        let p = tape.softmax_rows(l)?;
        Ok(tape.value(p).clone())
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
