//! LSTM layer in row convention: states are `1×k` rows and a sequence of
//! states is a `len×k` matrix, one row per time step.

use quarts_tensor::{ParamId, ParamStore, Tape, Tensor, Var};
use rand::distributions::{Distribution, Uniform};
use rand::Rng;

use crate::error::Result;

pub const INIT_SCALE: f64 = 0.08;

pub fn uniform_init<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Tensor {
    let d = Uniform::new_inclusive(-INIT_SCALE, INIT_SCALE);
    Tensor::from_matrix(rows, cols, (0..rows * cols).map(|_| d.sample(rng)).collect())
}

/// Embedding table with the PAD row (row 0) zeroed.
pub fn embedding_init<R: Rng + ?Sized>(vocab: usize, dim: usize, rng: &mut R) -> Tensor {
    let mut t = uniform_init(vocab, dim, rng);
    t.data_mut()[..dim].iter_mut().for_each(|x| *x = 0.0);
    t
}

/// Gate blocks are laid out input, forget, cell, output along the `4k` axis.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Lstm {
    pub w_in: ParamId,
    pub w_rec: ParamId,
    pub bias: ParamId,
    pub hidden: usize,
}

#[derive(Clone, Copy, Debug)]
pub struct LstmState {
    pub h: Var,
    pub c: Var,
}

impl Lstm {
    /// Registers `{prefix}.w_in` (`d_in×4k`), `{prefix}.w_rec` (`k×4k`) and
    /// `{prefix}.bias` (`1×4k`, forget block at 1).
    pub fn register<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        input: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Self {
        let w_in = store.add(format!("{prefix}.w_in"), uniform_init(input, 4 * hidden, rng));
        let w_rec = store.add(format!("{prefix}.w_rec"), uniform_init(hidden, 4 * hidden, rng));
        let mut b = Tensor::zeros(1, 4 * hidden);
        b.data_mut()[hidden..2 * hidden].iter_mut().for_each(|x| *x = 1.0);
        let bias = store.add(format!("{prefix}.bias"), b);
        Self {
            w_in,
            w_rec,
            bias,
            hidden,
        }
    }

    pub fn bind(store: &ParamStore, prefix: &str) -> Result<Self> {
        let w_rec = store.require(&format!("{prefix}.w_rec"))?;
        Ok(Self {
            w_in: store.require(&format!("{prefix}.w_in"))?,
            w_rec,
            bias: store.require(&format!("{prefix}.bias"))?,
            hidden: store.get(w_rec).rows(),
        })
    }

    /// `X·W_in + b` for a whole `len×d_in` input at once.
    pub fn project_inputs(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let w = tape.param(store, self.w_in);
        let b = tape.param(store, self.bias);
        let xw = tape.matmul(x, w)?;
        Ok(tape.add(xw, b)?)
    }

    /// One step from pre-projected input gates `gx` (`1×4k`). A missing
    /// state is the zero state; its terms are skipped rather than computed.
    pub fn step(&self, tape: &mut Tape, store: &ParamStore, gx: Var, state: Option<LstmState>) -> Result<LstmState> {
        let k = self.hidden;
        let gates = match state {
            Some(s) => {
                let w = tape.param(store, self.w_rec);
                let hw = tape.matmul(s.h, w)?;
                tape.add(gx, hw)?
            }
            None => gx,
        };
        let i = tape.slice(gates, 1, 0..k)?;
        let f = tape.slice(gates, 1, k..2 * k)?;
        let g = tape.slice(gates, 1, 2 * k..3 * k)?;
        let o = tape.slice(gates, 1, 3 * k..4 * k)?;
        let i = tape.sigmoid(i);
        let g = tape.tanh(g);
        let o = tape.sigmoid(o);
        let ig = tape.mul(i, g)?;
        let c = match state {
            Some(s) => {
                let f = tape.sigmoid(f);
                let fc = tape.mul(f, s.c)?;
                tape.add(fc, ig)?
            }
            None => ig,
        };
        let tc = tape.tanh(c);
        let h = tape.mul(o, tc)?;
        Ok(LstmState { h, c })
    }

    /// Runs over all rows of `x` (`len×d_in`) and returns the `len×k` state
    /// matrix with the final state.
    pub fn run(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<(Var, LstmState)> {
        self.run_from(tape, store, x, None)
    }

    pub fn run_from(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        x: Var,
        init: Option<LstmState>,
    ) -> Result<(Var, LstmState)> {
        let len = tape.shape(x)[0];
        let gx = self.project_inputs(tape, store, x)?;
        let mut state = init;
        let mut hs = Vec::with_capacity(len);
        for t in 0..len {
            let g = if len == 1 { gx } else { tape.slice(gx, 0, t..t + 1)? };
            let s = self.step(tape, store, g, state)?;
            hs.push(s.h);
            state = Some(s);
        }
        let states = if hs.len() == 1 { hs[0] } else { tape.concat(&hs, 0)? };
        Ok((states, state.expect("nonempty input")))
    }
}
