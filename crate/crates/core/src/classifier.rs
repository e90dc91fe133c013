//! The mismatch classifier: separate query/title embeddings, one LSTM
//! encoder per side, word-by-word attention of the query over the title,
//! the combined representation `h*`, and a two-layer dense head.
//!
//! Internally sequences are kept as `len×k` row matrices, i.e. the transpose
//! of the `k×len` column form used in the model description; `K` rows are
//! exactly the `Kᵀ` block of the attention input.

use quarts_tensor::{ParamId, ParamStore, Tape, Tensor, Var};
use rand::Rng;

use crate::error::{QuartsError, Result};
use crate::lstm::{embedding_init, uniform_init, Lstm};
use crate::text::PAD;

/// Probabilities are clamped this far from 0 and 1 inside the loss.
pub const PROB_CLAMP: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ClassifierDims {
    pub embed: usize,
    pub hidden: usize,
    pub query_vocab: usize,
    pub title_vocab: usize,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Classifier {
    pub dims: ClassifierDims,
    pub query_embed: ParamId,
    pub title_embed: ParamId,
    pub query_lstm: Lstm,
    pub title_lstm: Lstm,
    /// `3k×k`
    pub w_h: ParamId,
    /// `k×1`
    pub w: ParamId,
    /// `k×k`
    pub w_r: ParamId,
    /// `k×3k`
    pub w_x: ParamId,
    /// `k×k`, `1×k`, `k×1`, `1×1`
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
    pub dropout: f64,
}

/// Encoder output for one sequence.
#[derive(Clone, Copy, Debug)]
pub struct Encoded {
    /// `len×k`, row `t` is `h_t`.
    pub states: Var,
    /// `1×k`, the state at the true last position.
    pub last: Var,
}

impl Encoded {
    /// The `k×len` column form.
    pub fn columns(&self, tape: &mut Tape) -> Result<Var> {
        Ok(tape.transpose(self.states)?)
    }
}

#[derive(Clone, Debug)]
pub struct AttentionOut {
    /// `r_1..r_n`, each `1×k`.
    pub r: Vec<Var>,
    /// `α_1..α_n`, each `1×m`.
    pub alpha: Vec<Var>,
}

impl AttentionOut {
    pub fn last(&self) -> Var {
        *self.r.last().expect("attention over a nonempty query")
    }

    /// Stacked `n×m` attention matrix.
    pub fn alpha_matrix(&self, tape: &Tape) -> Tensor {
        let rows: Vec<&[f64]> = self.alpha.iter().map(|a| tape.value(*a).data()).collect();
        Tensor::from_rows(&rows)
    }
}

impl Classifier {
    pub const PREFIX: &'static str = "clf.";

    pub fn register<R: Rng + ?Sized>(store: &mut ParamStore, dims: ClassifierDims, dropout: f64, rng: &mut R) -> Self {
        let (e, k) = (dims.embed, dims.hidden);
        let query_embed = store.add("clf.embed.query", embedding_init(dims.query_vocab, e, rng));
        let title_embed = store.add("clf.embed.title", embedding_init(dims.title_vocab, e, rng));
        let query_lstm = Lstm::register(store, "clf.lstm.query", e, k, rng);
        let title_lstm = Lstm::register(store, "clf.lstm.title", e, k, rng);
        let w_h = store.add("clf.attn.w_h", uniform_init(3 * k, k, rng));
        let w = store.add("clf.attn.w", uniform_init(k, 1, rng));
        let w_r = store.add("clf.attn.w_r", uniform_init(k, k, rng));
        let w_x = store.add("clf.attn.w_x", uniform_init(k, 3 * k, rng));
        let w1 = store.add("clf.head.w1", uniform_init(k, k, rng));
        let b1 = store.add("clf.head.b1", Tensor::zeros(1, k));
        let w2 = store.add("clf.head.w2", uniform_init(k, 1, rng));
        let b2 = store.add("clf.head.b2", Tensor::zeros(1, 1));
        Self {
            dims,
            query_embed,
            title_embed,
            query_lstm,
            title_lstm,
            w_h,
            w,
            w_r,
            w_x,
            w1,
            b1,
            w2,
            b2,
            dropout,
        }
    }

    /// Looks the parameters up by name, e.g. after loading a checkpoint.
    pub fn bind(store: &ParamStore, dropout: f64) -> Result<Self> {
        let query_embed = store.require("clf.embed.query")?;
        let title_embed = store.require("clf.embed.title")?;
        let query_lstm = Lstm::bind(store, "clf.lstm.query")?;
        let title_lstm = Lstm::bind(store, "clf.lstm.title")?;
        Ok(Self {
            dims: ClassifierDims {
                embed: store.get(query_embed).cols(),
                hidden: query_lstm.hidden,
                query_vocab: store.get(query_embed).rows(),
                title_vocab: store.get(title_embed).rows(),
            },
            query_embed,
            title_embed,
            query_lstm,
            title_lstm,
            w_h: store.require("clf.attn.w_h")?,
            w: store.require("clf.attn.w")?,
            w_r: store.require("clf.attn.w_r")?,
            w_x: store.require("clf.attn.w_x")?,
            w1: store.require("clf.head.w1")?,
            b1: store.require("clf.head.b1")?,
            w2: store.require("clf.head.w2")?,
            b2: store.require("clf.head.b2")?,
            dropout,
        })
    }

    fn encode_with(&self, tape: &mut Tape, store: &ParamStore, table: ParamId, lstm: &Lstm, ids: &[usize]) -> Result<Encoded> {
        let ids = strip_padding(ids);
        if ids.is_empty() {
            return Err(QuartsError::Contract("cannot encode a zero-length sequence".into()));
        }
        let t = tape.param(store, table);
        let x = tape.lookup_padded(t, ids, PAD)?;
        let (states, last) = lstm.run(tape, store, x)?;
        Ok(Encoded { states, last: last.h })
    }

    /// Encodes the title. Trailing PAD ids are batch padding and are
    /// dropped, so states and the last state cover the true length only.
    pub fn encode_title(&self, tape: &mut Tape, store: &ParamStore, ids: &[usize]) -> Result<Encoded> {
        self.encode_with(tape, store, self.title_embed, &self.title_lstm, ids)
    }

    pub fn encode_query(&self, tape: &mut Tape, store: &ParamStore, ids: &[usize]) -> Result<Encoded> {
        self.encode_with(tape, store, self.query_embed, &self.query_lstm, ids)
    }

    /// Word-by-word attention. With `Kᵀ` the `m×k` title rows,
    /// `M_t = tanh([Kᵀ, 1·h_tᵀ, 1·r_{t−1}ᵀ] W_h)`, `α_t = tanh(M_t w)` and
    /// `r_t = K α_t + tanh(W_r r_{t−1})`, starting from `r_0 = 0`.
    ///
    /// The block product is split as `Kᵀ W_h[0:k]` (computed once) plus the
    /// row-broadcast `h_tᵀ W_h[k:2k] + r_{t−1}ᵀ W_h[2k:3k]`.
    pub fn attend(&self, tape: &mut Tape, store: &ParamStore, k_rows: Var, h_rows: Var) -> Result<AttentionOut> {
        let k = self.dims.hidden;
        let n = tape.shape(h_rows)[0];
        let w_h = tape.param(store, self.w_h);
        let w_hk = tape.slice(w_h, 0, 0..k)?;
        let w_hh = tape.slice(w_h, 0, k..2 * k)?;
        let w_hr = tape.slice(w_h, 0, 2 * k..3 * k)?;
        let w = tape.param(store, self.w);
        let w_r = tape.param(store, self.w_r);
        let w_r_t = tape.transpose(w_r)?;
        let kw = tape.matmul(k_rows, w_hk)?;
        let mut out = AttentionOut {
            r: Vec::with_capacity(n),
            alpha: Vec::with_capacity(n),
        };
        for t in 0..n {
            let h_t = if n == 1 { h_rows } else { tape.slice(h_rows, 0, t..t + 1)? };
            let mut u = tape.matmul(h_t, w_hh)?;
            let prev = out.r.last().copied();
            if let Some(r) = prev {
                let ur = tape.matmul(r, w_hr)?;
                u = tape.add(u, ur)?;
            }
            let pre = tape.add(kw, u)?;
            let m_t = tape.tanh(pre);
            let s = tape.matmul(m_t, w)?;
            let a = tape.tanh(s);
            let a_row = tape.transpose(a)?;
            let mut r = tape.matmul(a_row, k_rows)?;
            if let Some(prev) = prev {
                let wr = tape.matmul(prev, w_r_t)?;
                let wr = tape.tanh(wr);
                r = tape.add(r, wr)?;
            }
            out.r.push(r);
            out.alpha.push(a_row);
        }
        Ok(out)
    }

    /// `h* = tanh(W_x [r; q; |r − q|])` on `1×k` rows.
    pub fn combine(&self, tape: &mut Tape, store: &ParamStore, r: Var, q: Var) -> Result<Var> {
        let diff = tape.sub(r, q)?;
        let diff = tape.abs(diff);
        let x = tape.concat(&[r, q, diff], 1)?;
        let w_x = tape.param(store, self.w_x);
        let w_x_t = tape.transpose(w_x)?;
        let z = tape.matmul(x, w_x_t)?;
        Ok(tape.tanh(z))
    }

    /// Dropout on `h*`, `tanh(W1 h + b1)`, then the scalar logit.
    pub fn head<R: Rng + ?Sized>(&self, tape: &mut Tape, store: &ParamStore, h_star: Var, rng: Option<&mut R>) -> Result<Var> {
        let h = tape.dropout(h_star, self.dropout, rng);
        let w1 = tape.param(store, self.w1);
        let w1_t = tape.transpose(w1)?;
        let b1 = tape.param(store, self.b1);
        let z = tape.matmul(h, w1_t)?;
        let z = tape.add(z, b1)?;
        let x = tape.tanh(z);
        let w2 = tape.param(store, self.w2);
        let b2 = tape.param(store, self.b2);
        let logit = tape.matmul(x, w2)?;
        Ok(tape.add(logit, b2)?)
    }

    /// Attention, combination and head over already-encoded sequences.
    /// `q_last` is the query representation entering `h*`.
    pub fn logit_from<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        k_rows: Var,
        h_rows: Var,
        q_last: Var,
        rng: Option<&mut R>,
    ) -> Result<(Var, AttentionOut)> {
        let att = self.attend(tape, store, k_rows, h_rows)?;
        let h_star = self.combine(tape, store, att.last(), q_last)?;
        let logit = self.head(tape, store, h_star, rng)?;
        Ok((logit, att))
    }

    /// Full forward pass to the logit; `rng = None` is eval mode.
    pub fn logit<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        item: &[usize],
        query: &[usize],
        rng: Option<&mut R>,
    ) -> Result<(Var, AttentionOut)> {
        let k = self.encode_title(tape, store, item)?;
        let h = self.encode_query(tape, store, query)?;
        self.logit_from(tape, store, k.states, h.states, h.last, rng)
    }

    /// Eval-mode mismatch probability.
    pub fn probability(&self, store: &ParamStore, item: &[usize], query: &[usize]) -> Result<f64> {
        let mut tape = Tape::new();
        let (logit, _) = self.logit::<rand_chacha::ChaCha8Rng>(&mut tape, store, item, query, None)?;
        Ok(quarts_tensor::sigmoid(tape.value(logit).item()))
    }

    /// Eval-mode `n×m` attention matrix.
    pub fn attention(&self, store: &ParamStore, item: &[usize], query: &[usize]) -> Result<Tensor> {
        let mut tape = Tape::new();
        let (_, att) = self.logit::<rand_chacha::ChaCha8Rng>(&mut tape, store, item, query, None)?;
        Ok(att.alpha_matrix(&tape))
    }
}

/// The true-length prefix: everything up to the last non-PAD id.
pub fn strip_padding(ids: &[usize]) -> &[usize] {
    &ids[..ids.iter().rposition(|&t| t != PAD).map_or(0, |p| p + 1)]
}

/// Reference form of the attention that materializes the `m×3k` block
/// `[Kᵀ, 1·h_tᵀ, 1·r_{t−1}ᵀ]` with explicit ones-column outer products.
pub fn attend_literal(clf: &Classifier, tape: &mut Tape, store: &ParamStore, k_rows: Var, h_rows: Var) -> Result<AttentionOut> {
    let k = clf.dims.hidden;
    let m = tape.shape(k_rows)[0];
    let n = tape.shape(h_rows)[0];
    let ones = tape.constant(Tensor::filled(m, 1, 1.0));
    let w_h = tape.param(store, clf.w_h);
    let w = tape.param(store, clf.w);
    let w_r = tape.param(store, clf.w_r);
    let k_cols = tape.transpose(k_rows)?;
    let mut r_prev = tape.constant(Tensor::zeros(k, 1));
    let mut out = AttentionOut {
        r: Vec::new(),
        alpha: Vec::new(),
    };
    for t in 0..n {
        let h_t = tape.slice(h_rows, 0, t..t + 1)?;
        let r_prev_row = tape.transpose(r_prev)?;
        let hb = tape.matmul(ones, h_t)?;
        let rb = tape.matmul(ones, r_prev_row)?;
        let block = tape.concat(&[k_rows, hb, rb], 1)?;
        let pre = tape.matmul(block, w_h)?;
        let m_t = tape.tanh(pre);
        let s = tape.matmul(m_t, w)?;
        let alpha = tape.tanh(s);
        let ka = tape.matmul(k_cols, alpha)?;
        let wr = tape.matmul(w_r, r_prev)?;
        let wr = tape.tanh(wr);
        let r = tape.add(ka, wr)?;
        out.alpha.push(tape.transpose(alpha)?);
        out.r.push(tape.transpose(r)?);
        r_prev = r;
    }
    Ok(out)
}

/// `−[β·y·ln f + (1−y)·ln(1−f)]` with `f = σ(logit)` clamped to
/// `[1e-12, 1 − 1e-12]`.
pub fn weighted_ce(tape: &mut Tape, logit: Var, label: u8, beta: f64) -> Var {
    let p = tape.sigmoid(logit);
    let p = tape.clamp(p, PROB_CLAMP, 1.0 - PROB_CLAMP);
    if label == 1 {
        let l = tape.ln(p);
        tape.scale(l, -beta)
    } else {
        let q = tape.affine(p, -1.0, 1.0);
        let l = tape.ln(q);
        tape.scale(l, -1.0)
    }
}

/// Scalar form of [`weighted_ce`] on a probability.
pub fn weighted_ce_value(prob: f64, label: u8, beta: f64) -> f64 {
    let f = prob.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
    if label == 1 {
        -beta * f.ln()
    } else {
        -(1.0 - f).ln()
    }
}

/// Batch mean of [`weighted_ce_value`].
pub fn weighted_ce_loss(probs: &[f64], labels: &[u8], beta: f64) -> f64 {
    assert_eq!(probs.len(), labels.len());
    probs
        .iter()
        .zip(labels)
        .map(|(&p, &y)| weighted_ce_value(p, y, beta))
        .sum::<f64>()
        / probs.len() as f64
}

/// Attention weights with each row min-max scaled to `[0, 1]`; constant
/// rows become all ones. For display only.
pub fn normalize_rows(alpha: &Tensor) -> Tensor {
    let (r, c) = (alpha.rows(), alpha.cols());
    let mut out = Vec::with_capacity(r * c);
    for i in 0..r {
        let row = alpha.row_slice(i);
        let lo = row.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if hi - lo > 0.0 {
            out.extend(row.iter().map(|v| (v - lo) / (hi - lo)));
        } else {
            out.extend(std::iter::repeat_n(1.0, c));
        }
    }
    Tensor::from_matrix(r, c, out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Heatmap {
    pub query_tokens: Vec<String>,
    pub title_tokens: Vec<String>,
    /// `n×m`, row-normalized.
    pub weights: Tensor,
}

impl Heatmap {
    /// Header lines with the tokens, then one row of weights per query token.
    pub fn to_text(&self) -> String {
        let mut s = format!("# title\t{}\n# query\t{}\n", self.title_tokens.join(" "), self.query_tokens.join(" "));
        for i in 0..self.weights.rows() {
            let row: Vec<String> = self.weights.row_slice(i).iter().map(|v| format!("{v:.4}")).collect();
            s.push_str(&row.join(" "));
            s.push('\n');
        }
        s
    }

    /// Padded plain-text grid for terminals.
    pub fn to_grid(&self) -> String {
        let w = self.query_tokens.iter().map(String::len).max().unwrap_or(0);
        let mut s = format!("{:w$} ", "");
        for t in &self.title_tokens {
            s.push_str(&format!(" {t:>8.8}"));
        }
        s.push('\n');
        for (i, q) in self.query_tokens.iter().enumerate() {
            s.push_str(&format!("{q:w$} "));
            for v in self.weights.row_slice(i) {
                s.push_str(&format!(" {v:>8.3}"));
            }
            s.push('\n');
        }
        s
    }

    pub fn to_json(&self) -> serde_json::Value {
        let rows: Vec<&[f64]> = (0..self.weights.rows()).map(|i| self.weights.row_slice(i)).collect();
        serde_json::json!({
            "query_tokens": self.query_tokens,
            "title_tokens": self.title_tokens,
            "weights": rows,
        })
    }
}
