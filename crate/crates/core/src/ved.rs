//! Variational encoder-decoder that turns a matched (item, query) pair into
//! a lexically close mismatched query.
//!
//! The encoder is the classifier's (shared `clf.*` parameters). The latent
//! is conditioned on both final encoder states; the decoder is an LSTM fed
//! `[embedding(prev) ⊕ z]` with multiplicative attention over the
//! concatenated encoder outputs. Generator parameters live under `ved.*`.

use quarts_tensor::{ParamId, ParamStore, Tape, Tensor, Var};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::classifier::Classifier;
use crate::error::{QuartsError, Result};
use crate::lstm::{uniform_init, Lstm, LstmState};
use crate::text::{BOS, EOS, PAD, UNK};

pub const LOGVAR_CLAMP: f64 = 8.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct VedDims {
    pub embed: usize,
    pub hidden: usize,
    pub latent: usize,
    pub vocab: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Ved {
    pub dims: VedDims,
    pub embed: ParamId,
    pub lstm: Lstm,
    pub w_mu: ParamId,
    pub b_mu: ParamId,
    pub w_logvar: ParamId,
    pub b_logvar: ParamId,
    pub w_init: ParamId,
    pub b_init: ParamId,
    pub w_a: ParamId,
    pub w_c: ParamId,
    pub w_v: ParamId,
    pub b_v: ParamId,
}

/// Encoder outputs the decoder conditions on.
#[derive(Clone, Copy, Debug)]
pub struct Memory {
    /// `m×k` title rows (`Kᵀ`).
    pub k_rows: Var,
    /// `n×k` query rows (`Hᵀ`).
    pub h_rows: Var,
    /// `(m+n)×k`: title rows then query rows (the columns of `U`).
    pub u_rows: Var,
    /// `k×(m+n)`, i.e. `U` itself.
    pub u: Var,
    /// `1×2k`: final title state then final query state.
    pub c: Var,
}

#[derive(Clone, Copy, Debug)]
pub struct Latent {
    pub z: Var,
    pub mu: Var,
    pub logvar: Var,
}

#[derive(Clone, Copy, Debug)]
pub struct StepOut {
    /// `1×V`
    pub logits: Var,
    /// `1×k` attentional state `d̃_t`.
    pub attentional: Var,
    /// `1×(m+n)` attention weights.
    pub weights: Var,
    pub state: LstmState,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Generation {
    pub tokens: Vec<usize>,
    /// Mean log-probability per emitted token, EOS included when emitted.
    pub score: f64,
}

/// Pair encoding: `U = [K, H]` and `c = [k_m ; h_n]`.
pub fn encode_pair(clf: &Classifier, tape: &mut Tape, store: &ParamStore, item: &[usize], query: &[usize]) -> Result<Memory> {
    let k = clf.encode_title(tape, store, item)?;
    let h = clf.encode_query(tape, store, query)?;
    let u_rows = tape.concat(&[k.states, h.states], 0)?;
    let u = tape.transpose(u_rows)?;
    let c = tape.concat(&[k.last, h.last], 1)?;
    Ok(Memory {
        k_rows: k.states,
        h_rows: h.states,
        u_rows,
        u,
        c,
    })
}

/// Standard-normal KL of a diagonal Gaussian, summed over dimensions, in
/// the form `½ Σ (mu² + (e^lv − 1 − lv))` whose terms are each ≥ 0 even
/// after rounding.
pub fn kl_divergence(tape: &mut Tape, mu: Var, logvar: Var) -> Result<Var> {
    let mu2 = tape.mul(mu, mu)?;
    let em1 = tape.exp_m1(logvar);
    let gap = tape.sub(em1, logvar)?;
    let a = tape.add(mu2, gap)?;
    let s = tape.sum_all(a);
    Ok(tape.scale(s, 0.5))
}

pub fn kl_value(mu: &[f64], logvar: &[f64]) -> f64 {
    0.5 * mu
        .iter()
        .zip(logvar)
        .map(|(m, lv)| m * m + (lv.exp_m1() - lv))
        .sum::<f64>()
}

fn is_generable(token: usize) -> bool {
    token != PAD && token != UNK && token != BOS
}

impl Ved {
    pub const PREFIX: &'static str = "ved.";

    /// Registers the generator. The decoder embedding starts as a copy of
    /// the classifier's query table.
    pub fn register<R: Rng + ?Sized>(store: &mut ParamStore, clf: &Classifier, latent: usize, rng: &mut R) -> Self {
        let k = clf.dims.hidden;
        let dims = VedDims {
            embed: clf.dims.embed,
            hidden: k,
            latent,
            vocab: clf.dims.query_vocab,
        };
        let table = store.get(clf.query_embed).clone();
        let embed = store.add("ved.embed", table);
        let lstm = Lstm::register(store, "ved.lstm", dims.embed + latent, k, rng);
        Self {
            dims,
            embed,
            lstm,
            w_mu: store.add("ved.w_mu", uniform_init(2 * k, latent, rng)),
            b_mu: store.add("ved.b_mu", Tensor::zeros(1, latent)),
            w_logvar: store.add("ved.w_logvar", uniform_init(2 * k, latent, rng)),
            b_logvar: store.add("ved.b_logvar", Tensor::zeros(1, latent)),
            w_init: store.add("ved.w_init", uniform_init(latent, k, rng)),
            b_init: store.add("ved.b_init", Tensor::zeros(1, k)),
            w_a: store.add("ved.w_a", uniform_init(k, k, rng)),
            w_c: store.add("ved.w_c", uniform_init(2 * k, k, rng)),
            w_v: store.add("ved.w_v", uniform_init(k, dims.vocab, rng)),
            b_v: store.add("ved.b_v", Tensor::zeros(1, dims.vocab)),
        }
    }

    pub fn bind(store: &ParamStore) -> Result<Self> {
        let r = |n: &str| store.require(&format!("ved.{n}"));
        let embed = r("embed")?;
        let lstm = Lstm::bind(store, "ved.lstm")?;
        let w_mu = r("w_mu")?;
        Ok(Self {
            dims: VedDims {
                embed: store.get(embed).cols(),
                hidden: lstm.hidden,
                latent: store.get(w_mu).cols(),
                vocab: store.get(embed).rows(),
            },
            embed,
            lstm,
            w_mu,
            b_mu: r("b_mu")?,
            w_logvar: r("w_logvar")?,
            b_logvar: r("b_logvar")?,
            w_init: r("w_init")?,
            b_init: r("b_init")?,
            w_a: r("w_a")?,
            w_c: r("w_c")?,
            w_v: r("w_v")?,
            b_v: r("b_v")?,
        })
    }

    /// `mu = cW_mu + b`, `logvar = clamp(cW_lv + b, ±8)`,
    /// `z = mu + exp(logvar/2)⊙ε`. With `rng = None`, `z = mu`.
    pub fn sample_latent<R: Rng + ?Sized>(&self, tape: &mut Tape, store: &ParamStore, c: Var, rng: Option<&mut R>) -> Result<Latent> {
        let affine = |tape: &mut Tape, w: ParamId, b: ParamId| -> Result<Var> {
            let w = tape.param(store, w);
            let b = tape.param(store, b);
            let z = tape.matmul(c, w)?;
            Ok(tape.add(z, b)?)
        };
        let mu = affine(tape, self.w_mu, self.b_mu)?;
        let lv = affine(tape, self.w_logvar, self.b_logvar)?;
        let logvar = tape.clamp(lv, -LOGVAR_CLAMP, LOGVAR_CLAMP);
        let z = match rng {
            Some(rng) => {
                let eps: Vec<f64> = (0..self.dims.latent).map(|_| rng.sample(StandardNormal)).collect();
                let eps = tape.constant(Tensor::row(&eps));
                let half = tape.scale(logvar, 0.5);
                let sd = tape.exp(half);
                let noise = tape.mul(sd, eps)?;
                tape.add(mu, noise)?
            }
            None => mu,
        };
        Ok(Latent { z, mu, logvar })
    }

    /// `h_0 = tanh(z W_init + b)`, `c_0 = 0`.
    pub fn initial_state(&self, tape: &mut Tape, store: &ParamStore, z: Var) -> Result<LstmState> {
        let w = tape.param(store, self.w_init);
        let b = tape.param(store, self.b_init);
        let h = tape.matmul(z, w)?;
        let h = tape.add(h, b)?;
        let h = tape.tanh(h);
        let c = tape.constant(Tensor::zeros(1, self.dims.hidden));
        Ok(LstmState { h, c })
    }

    /// Attention and output layers over decoder states `d` (`T×k`, one
    /// row per step): scores `d W_a U`, softmax weights, context
    /// `weights·Uᵀ`, `d̃ = tanh([d, ctx] W_c)`, logits `d̃ W_v + b`.
    fn readout(&self, tape: &mut Tape, store: &ParamStore, d: Var, mem: &Memory) -> Result<(Var, Var, Var)> {
        let w_a = tape.param(store, self.w_a);
        let da = tape.matmul(d, w_a)?;
        let e = tape.matmul(da, mem.u)?;
        let a = tape.softmax_rows(e)?;
        let ctx = tape.matmul(a, mem.u_rows)?;
        let dc = tape.concat(&[d, ctx], 1)?;
        let w_c = tape.param(store, self.w_c);
        let dt = tape.matmul(dc, w_c)?;
        let dt = tape.tanh(dt);
        let w_v = tape.param(store, self.w_v);
        let b_v = tape.param(store, self.b_v);
        let logits = tape.matmul(dt, w_v)?;
        let logits = tape.add(logits, b_v)?;
        Ok((logits, dt, a))
    }

    fn inputs(&self, tape: &mut Tape, store: &ParamStore, tokens: &[usize], z: Var) -> Result<Var> {
        let table = tape.param(store, self.embed);
        let x = tape.lookup_padded(table, tokens, PAD)?;
        let zs = if tokens.len() == 1 {
            z
        } else {
            let ones = tape.constant(Tensor::filled(tokens.len(), 1, 1.0));
            tape.matmul(ones, z)?
        };
        Ok(tape.concat(&[x, zs], 1)?)
    }

    pub fn decode_step(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        prev: usize,
        z: Var,
        state: LstmState,
        mem: &Memory,
    ) -> Result<StepOut> {
        let x = self.inputs(tape, store, &[prev], z)?;
        let gx = self.lstm.project_inputs(tape, store, x)?;
        let state = self.lstm.step(tape, store, gx, Some(state))?;
        let (logits, attentional, weights) = self.readout(tape, store, state.h, mem)?;
        Ok(StepOut {
            logits,
            attentional,
            weights,
            state,
        })
    }

    /// Teacher-forced reconstruction of `target` followed by EOS, given the
    /// latent. Returns the mean per-token negative log-likelihood.
    pub fn reconstruction_nll(&self, tape: &mut Tape, store: &ParamStore, mem: &Memory, z: Var, target: &[usize]) -> Result<Var> {
        if target.is_empty() {
            return Err(QuartsError::Contract("empty reconstruction target".into()));
        }
        let mut inputs = Vec::with_capacity(target.len() + 1);
        inputs.push(BOS);
        inputs.extend_from_slice(target);
        let x = self.inputs(tape, store, &inputs, z)?;
        let init = self.initial_state(tape, store, z)?;
        let (d, _) = self.lstm.run_from(tape, store, x, Some(init))?;
        let (logits, _, _) = self.readout(tape, store, d, mem)?;
        let logp = tape.log_softmax_rows(logits)?;
        let mut picks = Vec::with_capacity(inputs.len());
        for (t, &y) in target.iter().chain(std::iter::once(&EOS)).enumerate() {
            picks.push(tape.pick(logp, t, y)?);
        }
        let all = tape.concat(&picks, 1)?;
        let s = tape.sum_all(all);
        Ok(tape.scale(s, -1.0 / picks.len() as f64))
    }

    /// `NLL + λ·KL` for a triple's (item, matched query) → mismatched query.
    /// Returns the loss with its NLL and KL parts.
    #[allow(clippy::too_many_arguments)]
    pub fn loss<R: Rng + ?Sized>(
        &self,
        clf: &Classifier,
        tape: &mut Tape,
        store: &ParamStore,
        item: &[usize],
        query: &[usize],
        target: &[usize],
        kl_weight: f64,
        rng: Option<&mut R>,
    ) -> Result<(Var, Var, Var)> {
        let mem = encode_pair(clf, tape, store, item, query)?;
        let lat = self.sample_latent(tape, store, mem.c, rng)?;
        let nll = self.reconstruction_nll(tape, store, &mem, lat.z, target)?;
        let kl = kl_divergence(tape, lat.mu, lat.logvar)?;
        let loss = if kl_weight == 0.0 {
            nll
        } else {
            let w = tape.scale(kl, kl_weight);
            tape.add(nll, w)?
        };
        Ok((loss, nll, kl))
    }

    /// Continuous generated-query representation: `steps` decode steps fed
    /// with each step's argmax token (BOS first). Returns the `steps×k`
    /// rows `d̃_1..d̃_steps` and the argmax tokens. Gradients flow through
    /// the states, not through the token choices.
    #[allow(clippy::too_many_arguments)]
    pub fn hgen_forward<R: Rng + ?Sized>(
        &self,
        clf: &Classifier,
        tape: &mut Tape,
        store: &ParamStore,
        item: &[usize],
        query: &[usize],
        steps: usize,
        rng: Option<&mut R>,
    ) -> Result<(Var, Vec<usize>)> {
        let mem = encode_pair(clf, tape, store, item, query)?;
        self.hgen_from(tape, store, &mem, steps, rng)
    }

    /// [`hgen_forward`](Self::hgen_forward) over an existing pair encoding.
    pub fn hgen_from<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        mem: &Memory,
        steps: usize,
        rng: Option<&mut R>,
    ) -> Result<(Var, Vec<usize>)> {
        if steps == 0 {
            return Err(QuartsError::Contract("hgen_forward needs at least one step".into()));
        }
        let lat = self.sample_latent(tape, store, mem.c, rng)?;
        let mut state = self.initial_state(tape, store, lat.z)?;
        let mut prev = BOS;
        let mut rows = Vec::with_capacity(steps);
        let mut tokens = Vec::with_capacity(steps);
        for _ in 0..steps {
            let out = self.decode_step(tape, store, prev, lat.z, state, mem)?;
            prev = argmax(tape.value(out.logits).data());
            tokens.push(prev);
            rows.push(out.attentional);
            state = out.state;
        }
        let h = if rows.len() == 1 { rows[0] } else { tape.concat(&rows, 0)? };
        Ok((h, tokens))
    }

    /// Greedy decoding with the latent mean, stopping at EOS or `max_len`.
    pub fn greedy_generate(&self, clf: &Classifier, store: &ParamStore, item: &[usize], query: &[usize], max_len: usize) -> Result<Generation> {
        let mut tape = Tape::new();
        let mem = encode_pair(clf, &mut tape, store, item, query)?;
        let lat = self.sample_latent::<rand_chacha::ChaCha8Rng>(&mut tape, store, mem.c, None)?;
        let mut state = self.initial_state(&mut tape, store, lat.z)?;
        let mut prev = BOS;
        let mut tokens = Vec::new();
        let mut logp = 0.0;
        let mut emitted = 0;
        for _ in 0..max_len {
            let out = self.decode_step(&mut tape, store, prev, lat.z, state, &mem)?;
            let lp = log_softmax(tape.value(out.logits).data());
            prev = argmax(tape.value(out.logits).data());
            logp += lp[prev];
            emitted += 1;
            if prev == EOS {
                break;
            }
            tokens.push(prev);
            state = out.state;
        }
        Ok(Generation {
            tokens,
            score: logp / emitted.max(1) as f64,
        })
    }

    /// Length-normalized beam search with the latent mean. At most
    /// `max_len` decode steps, so every sequence has at most `max_len`
    /// tokens. Returns hypotheses sorted by score, best first.
    pub fn beam_generate(
        &self,
        clf: &Classifier,
        store: &ParamStore,
        item: &[usize],
        query: &[usize],
        beam: usize,
        max_len: usize,
    ) -> Result<Vec<Generation>> {
        if beam == 0 || max_len == 0 {
            return Err(QuartsError::Contract("beam width and max_len must be positive".into()));
        }
        struct Hyp {
            tokens: Vec<usize>,
            logp: f64,
            state: LstmState,
            prev: usize,
        }
        let mut tape = Tape::new();
        let mem = encode_pair(clf, &mut tape, store, item, query)?;
        let lat = self.sample_latent::<rand_chacha::ChaCha8Rng>(&mut tape, store, mem.c, None)?;
        let state = self.initial_state(&mut tape, store, lat.z)?;
        let mut alive = vec![Hyp {
            tokens: Vec::new(),
            logp: 0.0,
            state,
            prev: BOS,
        }];
        let mut finished: Vec<Generation> = Vec::new();
        for step in 0..max_len {
            // (hyp index, token, cumulative logp, new state)
            let mut cands: Vec<(usize, usize, f64, LstmState)> = Vec::new();
            for (hi, h) in alive.iter().enumerate() {
                let out = self.decode_step(&mut tape, store, h.prev, lat.z, h.state, &mem)?;
                let lp = log_softmax(tape.value(out.logits).data());
                for (tok, l) in top_k(&lp, beam) {
                    cands.push((hi, tok, h.logp + l, out.state));
                }
            }
            cands.sort_by(|a, b| b.2.total_cmp(&a.2).then(a.0.cmp(&b.0)).then(a.1.cmp(&b.1)));
            let mut next = Vec::new();
            for (hi, tok, logp, state) in cands.into_iter().take(beam) {
                let mut tokens = alive[hi].tokens.clone();
                if tok == EOS {
                    finished.push(Generation {
                        score: logp / (tokens.len() + 1) as f64,
                        tokens,
                    });
                } else {
                    tokens.push(tok);
                    if step + 1 == max_len {
                        finished.push(Generation {
                            score: logp / tokens.len() as f64,
                            tokens,
                        });
                    } else {
                        next.push(Hyp {
                            tokens,
                            logp,
                            state,
                            prev: tok,
                        });
                    }
                }
            }
            alive = next;
            if alive.is_empty() {
                break;
            }
        }
        finished.sort_by(|a, b| b.score.total_cmp(&a.score));
        Ok(finished)
    }
}

fn log_softmax(x: &[f64]) -> Vec<f64> {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + x.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    x.iter().map(|v| v - lse).collect()
}

/// Highest-scoring generable token; ties go to the lower id.
fn argmax(x: &[f64]) -> usize {
    let mut best = EOS;
    for (i, &v) in x.iter().enumerate() {
        if is_generable(i) && v > x[best] {
            best = i;
        }
    }
    best
}

fn top_k(lp: &[f64], k: usize) -> Vec<(usize, f64)> {
    let mut idx: Vec<usize> = (0..lp.len()).filter(|&i| is_generable(i)).collect();
    idx.sort_by(|&a, &b| lp[b].total_cmp(&lp[a]).then(a.cmp(&b)));
    idx.into_iter().take(k).map(|i| (i, lp[i])).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifier::ClassifierDims;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn toy(seed: u64) -> (ParamStore, Classifier, Ved) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let dims = ClassifierDims {
            embed: 3,
            hidden: 2,
            query_vocab: 10,
            title_vocab: 12,
        };
        let clf = Classifier::register(&mut store, dims, 0.1, &mut rng);
        let ved = Ved::register(&mut store, &clf, 3, &mut rng);
        for id in store.ids().collect::<Vec<_>>() {
            store.get_mut(id).data_mut().iter_mut().for_each(|x| *x *= 10.0);
        }
        (store, clf, ved)
    }

    fn zero(store: &mut ParamStore) {
        for id in store.ids().collect::<Vec<_>>() {
            store.get_mut(id).data_mut().iter_mut().for_each(|x| *x = 0.0);
        }
    }

    #[test]
    fn pair_encoding_shapes() {
        let (store, clf, _) = toy(0);
        let mut tape = Tape::new();
        let mem = encode_pair(&clf, &mut tape, &store, &[4, 5, 6, 7], &[4, 5, 6]).unwrap();
        assert_eq!(tape.shape(mem.u), &[2, 7]);
        assert_eq!(tape.shape(mem.c), &[1, 4]);
    }

    #[test]
    fn zero_parameters() {
        let (mut store, clf, ved) = toy(1);
        zero(&mut store);
        let mut tape = Tape::new();
        let mem = encode_pair(&clf, &mut tape, &store, &[4, 5], &[4]).unwrap();
        assert!(tape.value(mem.u).data().iter().all(|&v| v == 0.0));
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let lat = ved.sample_latent(&mut tape, &store, mem.c, Some(&mut rng)).unwrap();
        assert!(tape.value(lat.mu).data().iter().all(|&v| v == 0.0));
        assert!(tape.value(lat.logvar).data().iter().all(|&v| v == 0.0));
        let eps: Vec<f64> = {
            let mut rng = ChaCha8Rng::seed_from_u64(3);
            (0..3).map(|_| rng.sample(StandardNormal)).collect()
        };
        assert_eq!(tape.value(lat.z).data(), eps.as_slice());
        let st = ved.initial_state(&mut tape, &store, lat.z).unwrap();
        let out = ved.decode_step(&mut tape, &store, BOS, lat.z, st, &mem).unwrap();
        assert!(tape.value(out.logits).data().iter().all(|&v| v == 0.0));
        let w = tape.value(out.weights).data();
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        // uniform logits: ln V per token
        let nll = ved.reconstruction_nll(&mut tape, &store, &mem, lat.z, &[5, 6]).unwrap();
        assert!((tape.value(nll).item() - 10f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn mean_mode_is_deterministic() {
        let (store, clf, ved) = toy(2);
        let mut tape = Tape::new();
        let mem = encode_pair(&clf, &mut tape, &store, &[4, 5], &[4]).unwrap();
        let lat = ved.sample_latent::<ChaCha8Rng>(&mut tape, &store, mem.c, None).unwrap();
        assert_eq!(lat.z, lat.mu);
        let mut t1 = Tape::new();
        let mut t2 = Tape::new();
        let (a, ta) = ved.hgen_forward::<ChaCha8Rng>(&clf, &mut t1, &store, &[4, 5], &[4, 6, 7], 3, None).unwrap();
        let (b, tb) = ved.hgen_forward::<ChaCha8Rng>(&clf, &mut t2, &store, &[4, 5], &[4, 6, 7], 3, None).unwrap();
        assert_eq!(t1.shape(a), &[3, 2]);
        assert_eq!(t1.value(a), t2.value(b));
        assert_eq!(ta, tb);
    }

    #[test]
    fn kl_cases() {
        assert_eq!(kl_value(&[0.0], &[0.0]), 0.0);
        assert!((kl_value(&[1.0], &[0.0]) - 0.5).abs() < 1e-15);
        let mut tape = Tape::new();
        let mu = tape.constant(Tensor::row(&[1.0, -0.5]));
        let lv = tape.constant(Tensor::row(&[0.3, -1.2]));
        let kl = kl_divergence(&mut tape, mu, lv).unwrap();
        assert!((tape.value(kl).item() - kl_value(&[1.0, -0.5], &[0.3, -1.2])).abs() < 1e-12);
    }

    #[test]
    fn beam_one_is_greedy() {
        for seed in 0..5 {
            let (store, clf, ved) = toy(seed);
            let g = ved.greedy_generate(&clf, &store, &[4, 5, 6], &[4, 7], 12).unwrap();
            let b = ved.beam_generate(&clf, &store, &[4, 5, 6], &[4, 7], 1, 12).unwrap();
            assert_eq!(b[0].tokens, g.tokens);
            assert!((b[0].score - g.score).abs() < 1e-12);
            let wide = ved.beam_generate(&clf, &store, &[4, 5, 6], &[4, 7], 4, 5).unwrap();
            assert!(wide.iter().all(|h| h.tokens.len() <= 5));
            assert!(wide.windows(2).all(|w| w[0].score >= w[1].score));
            assert!(wide.iter().flat_map(|h| &h.tokens).all(|&t| is_generable(t) && t != EOS));
        }
    }
}
