//! Dense baseline: mean-pooled query and title embeddings, concatenated and
//! passed through two tanh layers to a logit. No recurrence, no attention.

use quarts_tensor::{ParamId, ParamStore, Tape, Tensor, Var};
use rand::Rng;

use crate::classifier::strip_padding;
use crate::error::{QuartsError, Result};
use crate::lstm::{embedding_init, uniform_init};
use crate::text::PAD;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Dssm {
    pub query_embed: ParamId,
    pub title_embed: ParamId,
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
    pub w3: ParamId,
    pub b3: ParamId,
}

impl Dssm {
    pub const PREFIX: &'static str = "dssm.";

    pub fn register<R: Rng + ?Sized>(
        store: &mut ParamStore,
        embed: usize,
        hidden: usize,
        query_vocab: usize,
        title_vocab: usize,
        rng: &mut R,
    ) -> Self {
        Self {
            query_embed: store.add("dssm.embed.query", embedding_init(query_vocab, embed, rng)),
            title_embed: store.add("dssm.embed.title", embedding_init(title_vocab, embed, rng)),
            w1: store.add("dssm.w1", uniform_init(2 * embed, hidden, rng)),
            b1: store.add("dssm.b1", Tensor::zeros(1, hidden)),
            w2: store.add("dssm.w2", uniform_init(hidden, hidden, rng)),
            b2: store.add("dssm.b2", Tensor::zeros(1, hidden)),
            w3: store.add("dssm.w3", uniform_init(hidden, 1, rng)),
            b3: store.add("dssm.b3", Tensor::zeros(1, 1)),
        }
    }

    pub fn bind(store: &ParamStore) -> Result<Self> {
        let r = |n: &str| store.require(&format!("dssm.{n}"));
        Ok(Self {
            query_embed: r("embed.query")?,
            title_embed: r("embed.title")?,
            w1: r("w1")?,
            b1: r("b1")?,
            w2: r("w2")?,
            b2: r("b2")?,
            w3: r("w3")?,
            b3: r("b3")?,
        })
    }

    fn pooled(&self, tape: &mut Tape, store: &ParamStore, table: ParamId, ids: &[usize]) -> Result<Var> {
        let ids = strip_padding(ids);
        if ids.is_empty() {
            return Err(QuartsError::Contract("cannot pool a zero-length sequence".into()));
        }
        let t = tape.param(store, table);
        let x = tape.lookup_padded(t, ids, PAD)?;
        let s = tape.sum(x, 0)?;
        Ok(tape.scale(s, 1.0 / ids.len() as f64))
    }

    pub fn logit(&self, tape: &mut Tape, store: &ParamStore, item: &[usize], query: &[usize]) -> Result<Var> {
        let q = self.pooled(tape, store, self.query_embed, query)?;
        let t = self.pooled(tape, store, self.title_embed, item)?;
        let mut x = tape.concat(&[q, t], 1)?;
        for (w, b) in [(self.w1, self.b1), (self.w2, self.b2)] {
            let w = tape.param(store, w);
            let b = tape.param(store, b);
            let z = tape.matmul(x, w)?;
            let z = tape.add(z, b)?;
            x = tape.tanh(z);
        }
        let w3 = tape.param(store, self.w3);
        let b3 = tape.param(store, self.b3);
        let z = tape.matmul(x, w3)?;
        Ok(tape.add(z, b3)?)
    }

    pub fn probability(&self, store: &ParamStore, item: &[usize], query: &[usize]) -> Result<f64> {
        let mut tape = Tape::new();
        let z = self.logit(&mut tape, store, item, query)?;
        Ok(quarts_tensor::sigmoid(tape.value(z).item()))
    }
}
