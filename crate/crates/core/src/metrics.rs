//! Precision-recall metrics, BLEU, oracle-based generation accuracy and
//! pooled-embedding nearest neighbours.

use std::collections::HashMap;

use quarts_tensor::{ParamStore, Tape};
use serde::{Deserialize, Serialize};

use crate::classifier::Classifier;
use crate::error::{QuartsError, Result};
use crate::text::{Judgement, Oracle};

fn check(scores: &[f64], labels: &[u8]) -> Result<usize> {
    if scores.len() != labels.len() {
        return Err(QuartsError::Metric(format!(
            "{} scores but {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(QuartsError::Metric("NaN score".into()));
    }
    let positives = labels.iter().filter(|&&y| y == 1).count();
    if positives == 0 {
        return Err(QuartsError::Metric("no positive labels".into()));
    }
    Ok(positives)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    /// Examples scoring at or above this value are predicted positive.
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
}

/// One point per distinct score, in descending score order; tied scores
/// enter the positive set together.
pub fn pr_curve(scores: &[f64], labels: &[u8]) -> Result<Vec<PrPoint>> {
    let positives = check(scores, labels)? as f64;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut points = Vec::new();
    let (mut tp, mut seen) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            tp += labels[order[i]] as usize;
            seen += 1;
            i += 1;
        }
        points.push(PrPoint {
            threshold: s,
            precision: tp as f64 / seen as f64,
            recall: tp as f64 / positives,
        });
    }
    Ok(points)
}

/// Step-wise average precision `Σ (R_i − R_{i−1}) · P_i` over descending
/// score ranks.
pub fn average_precision(scores: &[f64], labels: &[u8]) -> Result<f64> {
    let mut prev = 0.0;
    let mut ap = 0.0;
    for p in pr_curve(scores, labels)? {
        ap += (p.recall - prev) * p.precision;
        prev = p.recall;
    }
    Ok(ap)
}

fn f1(tp: usize, fp: usize, fn_: usize) -> f64 {
    if tp == 0 {
        0.0
    } else {
        2.0 * tp as f64 / (2 * tp + fp + fn_) as f64
    }
}

/// Candidate operating points: midpoints between consecutive distinct
/// scores, plus one below the minimum (everything positive).
pub fn candidate_thresholds(scores: &[f64]) -> Vec<f64> {
    let mut u: Vec<f64> = scores.to_vec();
    u.sort_by(f64::total_cmp);
    u.dedup();
    let mut out = Vec::with_capacity(u.len());
    if let Some(&min) = u.first() {
        out.push(min - 1.0);
    }
    out.extend(u.windows(2).map(|w| 0.5 * (w[0] + w[1])));
    out
}

/// Best F1 over [`candidate_thresholds`] with predictions `score > t`.
/// Ties go to the higher threshold.
pub fn f1_best(scores: &[f64], labels: &[u8]) -> Result<(f64, f64)> {
    let positives = check(scores, labels)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let thresholds = candidate_thresholds(scores);
    // sweep upward: at threshold j everything in distinct-score groups ≥ j is positive
    let (mut tp, mut fp) = (positives, scores.len() - positives);
    let mut best = (f1(tp, fp, 0), thresholds[0]);
    let mut i = 0;
    for &t in &thresholds[1..] {
        while i < order.len() && scores[order[i]] < t {
            if labels[order[i]] == 1 {
                tp -= 1;
            } else {
                fp -= 1;
            }
            i += 1;
        }
        let f = f1(tp, fp, positives - tp);
        if f >= best.0 {
            best = (f, t);
        }
    }
    Ok(best)
}

/// Recall of the positives at `score > threshold`.
pub fn recall_at(scores: &[f64], labels: &[u8], threshold: f64) -> f64 {
    let pos = labels.iter().filter(|&&y| y == 1).count();
    if pos == 0 {
        return 0.0;
    }
    let hit = scores
        .iter()
        .zip(labels)
        .filter(|(&s, &y)| y == 1 && s > threshold)
        .count();
    hit as f64 / pos as f64
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BleuReport {
    /// Cumulative BLEU-1..4.
    pub bleu: [f64; 4],
    /// Clipped n-gram precisions `p_1..p_4`.
    pub precisions: [f64; 4],
    pub brevity_penalty: f64,
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut m = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *m.entry(w).or_insert(0) += 1;
        }
    }
    m
}

/// (clipped matches, candidate n-grams) for orders 1..=4.
fn matches(candidate: &[String], reference: &[String]) -> [(usize, usize); 4] {
    let mut out = [(0, 0); 4];
    for (n, slot) in (1..=4).zip(out.iter_mut()) {
        let c = ngram_counts(candidate, n);
        let r = ngram_counts(reference, n);
        let hit = c.iter().map(|(g, &k)| k.min(*r.get(g).unwrap_or(&0))).sum();
        *slot = (hit, candidate.len().saturating_sub(n - 1));
    }
    out
}

fn report(counts: [(usize, usize); 4], cand_len: usize, ref_len: usize) -> BleuReport {
    if cand_len == 0 {
        return BleuReport::default();
    }
    let mut precisions = [0.0; 4];
    for (p, (hit, total)) in precisions.iter_mut().zip(counts) {
        *p = if total == 0 { 0.0 } else { hit as f64 / total as f64 };
    }
    let bp = if cand_len < ref_len {
        (1.0 - ref_len as f64 / cand_len as f64).exp()
    } else {
        1.0
    };
    let mut bleu = [0.0; 4];
    let mut log_sum = 0.0;
    for n in 0..4 {
        if precisions[..=n].contains(&0.0) {
            break;
        }
        log_sum += precisions[n].ln();
        bleu[n] = bp * (log_sum / (n + 1) as f64).exp();
    }
    BleuReport {
        bleu,
        precisions,
        brevity_penalty: bp,
    }
}

/// Sentence BLEU with a single reference and no smoothing.
pub fn bleu(candidate: &[String], reference: &[String]) -> Result<BleuReport> {
    if reference.is_empty() {
        return Err(QuartsError::Metric("empty BLEU reference".into()));
    }
    Ok(report(matches(candidate, reference), candidate.len(), reference.len()))
}

/// Corpus BLEU: clipped counts and lengths are summed before combining.
pub fn corpus_bleu(pairs: &[(Vec<String>, Vec<String>)]) -> Result<BleuReport> {
    let mut total = [(0, 0); 4];
    let (mut c, mut r) = (0, 0);
    for (cand, reference) in pairs {
        if reference.is_empty() {
            return Err(QuartsError::Metric("empty BLEU reference".into()));
        }
        for (t, m) in total.iter_mut().zip(matches(cand, reference)) {
            t.0 += m.0;
            t.1 += m.1;
        }
        c += cand.len();
        r += reference.len();
    }
    Ok(report(total, c, r))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GenerationAccuracy {
    /// Mismatches over resolvable generations.
    pub accuracy: f64,
    pub mismatched: usize,
    pub matched: usize,
    pub unresolvable: usize,
    pub total: usize,
}

impl GenerationAccuracy {
    pub fn unresolvable_fraction(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.unresolvable as f64 / self.total as f64
        }
    }
}

/// Scores (title tokens, generated query tokens) pairs with the oracle.
/// Unresolvable generations are left out of the accuracy denominator.
pub fn generation_accuracy<S: AsRef<str>, T: AsRef<str>>(pairs: &[(Vec<S>, Vec<T>)], oracle: &Oracle) -> GenerationAccuracy {
    let mut g = GenerationAccuracy {
        total: pairs.len(),
        ..Default::default()
    };
    for (title, query) in pairs {
        match oracle.judge(title, query) {
            Judgement::Mismatched => g.mismatched += 1,
            Judgement::Matched => g.matched += 1,
            Judgement::Unresolvable => g.unresolvable += 1,
        }
    }
    let resolved = g.mismatched + g.matched;
    g.accuracy = if resolved == 0 { 0.0 } else { g.mismatched as f64 / resolved as f64 };
    g
}

/// Mean of the query encoder outputs over the sequence.
pub fn pooled_query_embedding(clf: &Classifier, store: &ParamStore, ids: &[usize]) -> Result<Vec<f64>> {
    let mut tape = Tape::new();
    let enc = clf.encode_query(&mut tape, store, ids)?;
    let h = tape.value(enc.states);
    let mut out = vec![0.0; h.cols()];
    for i in 0..h.rows() {
        for (o, v) in out.iter_mut().zip(h.row_slice(i)) {
            *o += v;
        }
    }
    let n = h.rows() as f64;
    out.iter_mut().for_each(|x| *x /= n);
    Ok(out)
}

/// Cosine similarity with norms floored at 1e-12; a zero vector has
/// similarity 0 with everything.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    dot / (na.max(1e-12) * nb.max(1e-12))
}

/// Top-`k` corpus entries by cosine similarity, skipping `exclude`.
/// Ties go to the lower index.
pub fn knn(query: &[f64], corpus: &[Vec<f64>], k: usize, exclude: Option<usize>) -> Vec<(usize, f64)> {
    let mut sims: Vec<(usize, f64)> = corpus
        .iter()
        .enumerate()
        .filter(|(i, _)| Some(*i) != exclude)
        .map(|(i, v)| (i, cosine(query, v)))
        .collect();
    sims.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    sims.truncate(k);
    sims
}
