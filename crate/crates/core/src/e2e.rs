//! Bernoulli switch, merge layer and the switched per-example loss.
//!
//! For a real pair with label `y`, `z ~ Bernoulli(p)` and `s = (1−y)·z`.
//! With `s = 0` the classifier sees the real query and label `y`; with
//! `s = 1` it sees the generator's continuous query representation in place
//! of `H` and the proxy label `z = 1`.

use quarts_tensor::{ParamStore, Tape, Var};
use rand::Rng;

use crate::classifier::{weighted_ce, Classifier};
use crate::error::{QuartsError, Result};
use crate::ved::{encode_pair, Ved};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SwitchDraw {
    pub z: u8,
    pub s: u8,
}

/// Draws `z` (always consuming exactly one value from `rng`) and sets
/// `s = (1−y)·z`.
pub fn sample_switch<R: Rng + ?Sized>(y: u8, p: f64, rng: &mut R) -> SwitchDraw {
    debug_assert!(y <= 1);
    let z = u8::from(rng.gen::<f64>() < p);
    SwitchDraw { z, s: (1 - y) * z }
}

/// `s·H_gen + (1−s)·H` for binary `s`: a selection, so the two inputs need
/// not share a shape.
pub fn merge(h: Var, h_gen: Var, s: u8) -> Var {
    if s == 1 {
        h_gen
    } else {
        h
    }
}

/// Random sources for one example's forward pass.
pub struct ExampleRngs<'a, R: Rng + ?Sized> {
    pub dropout: Option<&'a mut R>,
    pub latent: Option<&'a mut R>,
}

/// Loss term of one example under switch value `s`.
#[allow(clippy::too_many_arguments)]
pub fn switched_loss<R: Rng + ?Sized>(
    clf: &Classifier,
    ved: Option<&Ved>,
    tape: &mut Tape,
    store: &ParamStore,
    item: &[usize],
    query: &[usize],
    label: u8,
    s: u8,
    beta: f64,
    rngs: ExampleRngs<'_, R>,
) -> Result<Var> {
    if s == 0 {
        let (logit, _) = clf.logit(tape, store, item, query, rngs.dropout)?;
        return Ok(weighted_ce(tape, logit, label, beta));
    }
    let ved = ved.ok_or_else(|| QuartsError::Contract("switch s=1 drawn without a generator".into()))?;
    let mem = encode_pair(clf, tape, store, item, query)?;
    let (h_gen, _) = ved.hgen_from(tape, store, &mem, query.len(), rngs.latent)?;
    let h = merge(mem.h_rows, h_gen, s);
    let n = tape.shape(h)[0];
    let q_last = tape.slice(h, 0, n - 1..n)?;
    let (logit, _) = clf.logit_from(tape, store, mem.k_rows, h, q_last, rngs.dropout)?;
    // the proxy label z = 1 is a positive and carries the β weight
    Ok(weighted_ce(tape, logit, 1, beta))
}
