//! Independent brute-force references shared by the integration tests.
#![allow(dead_code)]

use quarts_core::metrics::{average_precision, corpus_bleu, f1_best};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Mean over positives of the precision of the set `{score ≥ s_i}`.
pub fn brute_ap(scores: &[f64], labels: &[u8]) -> f64 {
    let positives: Vec<usize> = (0..scores.len()).filter(|&i| labels[i] == 1).collect();
    let mut sum = 0.0;
    for &i in &positives {
        let above: Vec<usize> = (0..scores.len()).filter(|&j| scores[j] >= scores[i]).collect();
        let tp = above.iter().filter(|&&j| labels[j] == 1).count();
        sum += tp as f64 / above.len() as f64;
    }
    sum / positives.len() as f64
}

fn f1_of(pred: &[bool], labels: &[u8]) -> f64 {
    let tp = pred.iter().zip(labels).filter(|(&p, &y)| p && y == 1).count();
    let fp = pred.iter().zip(labels).filter(|(&p, &y)| p && y == 0).count();
    let fn_ = pred.iter().zip(labels).filter(|(&p, &y)| !p && y == 1).count();
    if tp == 0 {
        0.0
    } else {
        2.0 * tp as f64 / (2 * tp + fp + fn_) as f64
    }
}

/// Best F1 over every prediction set a threshold can induce: the empty
/// set and `{score ≥ s}` for each observed score.
pub fn brute_f1(scores: &[f64], labels: &[u8]) -> f64 {
    let mut best = 0.0f64;
    for &s in scores {
        let pred: Vec<bool> = scores.iter().map(|&x| x >= s).collect();
        best = best.max(f1_of(&pred, labels));
    }
    best
}

/// F1 of the predictions `score > t`.
pub fn f1_at(scores: &[f64], labels: &[u8], t: f64) -> f64 {
    let pred: Vec<bool> = scores.iter().map(|&x| x > t).collect();
    f1_of(&pred, labels)
}

fn occurrences(hay: &[String], gram: &[String]) -> usize {
    if hay.len() < gram.len() {
        return 0;
    }
    (0..=hay.len() - gram.len()).filter(|&i| &hay[i..i + gram.len()] == gram).count()
}

/// Corpus BLEU-1..4 from first principles: per candidate position, each
/// n-gram's clipped share is `min(count_c, count_r) / count_c`.
pub fn brute_bleu(pairs: &[(Vec<String>, Vec<String>)]) -> [f64; 4] {
    let mut hits = [0.0f64; 4];
    let mut totals = [0usize; 4];
    let (mut c_len, mut r_len) = (0usize, 0usize);
    for (cand, reference) in pairs {
        c_len += cand.len();
        r_len += reference.len();
        for n in 1..=4 {
            if cand.len() < n {
                continue;
            }
            for i in 0..=cand.len() - n {
                let g = &cand[i..i + n];
                let cc = occurrences(cand, g);
                let cr = occurrences(reference, g);
                hits[n - 1] += cc.min(cr) as f64 / cc as f64;
                totals[n - 1] += 1;
            }
        }
    }
    let mut out = [0.0; 4];
    if c_len == 0 {
        return out;
    }
    let bp = if c_len < r_len { (1.0 - r_len as f64 / c_len as f64).exp() } else { 1.0 };
    for n in 1..=4 {
        let ps: Vec<f64> = (0..n)
            .map(|k| if totals[k] == 0 { 0.0 } else { hits[k] / totals[k] as f64 })
            .collect();
        if ps.contains(&0.0) {
            break;
        }
        let geo = ps.iter().product::<f64>().powf(1.0 / n as f64);
        out[n - 1] = bp * geo;
    }
    out
}

/// Scores drawn from a coarse grid so ties are common, at least one positive.
pub fn random_instance(rng: &mut ChaCha8Rng) -> (Vec<f64>, Vec<u8>) {
    let n = rng.gen_range(1..=50);
    let grid = rng.gen_range(2..=20) as f64;
    let scores: Vec<f64> = (0..n).map(|_| (rng.gen::<f64>() * grid).floor() / grid).collect();
    let mut labels: Vec<u8> = (0..n).map(|_| u8::from(rng.gen_bool(0.4))).collect();
    let k = rng.gen_range(0..n);
    labels[k] = 1;
    (scores, labels)
}

pub fn random_tokens(rng: &mut ChaCha8Rng, max_len: usize) -> Vec<String> {
    const WORDS: [&str; 6] = ["a", "b", "c", "d", "e", "f"];
    let n = rng.gen_range(0..=max_len);
    (0..n).map(|_| WORDS[rng.gen_range(0..WORDS.len())].to_string()).collect()
}

/// Largest absolute deviations (AP, F1, BLEU) between the library and the
/// brute-force references over `instances` random cases of each.
pub fn metric_oracle_sweep(seed: u64, instances: usize) -> [f64; 3] {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut ap_err, mut f1_err, mut bleu_err) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..instances {
        let (s, y) = random_instance(&mut rng);
        ap_err = ap_err.max((average_precision(&s, &y).unwrap() - brute_ap(&s, &y)).abs());
        let (f, t) = f1_best(&s, &y).unwrap();
        f1_err = f1_err.max((f - brute_f1(&s, &y)).abs()).max((f - f1_at(&s, &y, t)).abs());

        let pairs: Vec<(Vec<String>, Vec<String>)> = (0..rng.gen_range(1..=4))
            .map(|_| {
                let cand = random_tokens(&mut rng, 12);
                let mut reference = random_tokens(&mut rng, 12);
                if reference.is_empty() {
                    reference.push("a".into());
                }
                (cand, reference)
            })
            .collect();
        let got = corpus_bleu(&pairs).unwrap().bleu;
        let want = brute_bleu(&pairs);
        for (g, w) in got.iter().zip(want) {
            bleu_err = bleu_err.max((g - w).abs());
        }
    }
    [ap_err, f1_err, bleu_err]
}

pub fn toks(s: &str) -> Vec<String> {
    s.split_whitespace().map(str::to_string).collect()
}

/// A small encoded corpus: annotated pairs, logs pairs and triples.
pub struct ToyData {
    pub vocabs: quarts_core::text::Vocabs,
    pub annotated: Vec<quarts_core::text::Example>,
    pub logs: Vec<quarts_core::text::Example>,
    pub triples: Vec<quarts_core::text::TripleExample>,
}

pub fn toy_data(seed: u64, items: usize, labeled: usize, logs: usize) -> ToyData {
    use quarts_core::text::*;
    let spec = CatalogSpec {
        items,
        labeled_pairs: labeled,
        log_pairs: logs,
        ..CatalogSpec::desk_default(seed)
    };
    let corpus = generate_corpus(&spec).unwrap();
    let mut all = corpus.labeled.clone();
    all.extend(corpus.logs.iter().cloned());
    let vocabs = build_vocabs(&all, 1).unwrap();
    let annotated = encode_records(&vocabs, &corpus.labeled).unwrap();
    let logs = encode_records(&vocabs, &corpus.logs).unwrap();
    let triples = build_triples(&annotated, 10);
    ToyData {
        vocabs,
        annotated,
        logs,
        triples,
    }
}

/// Classifier and generator of width `k` over `data`'s vocabularies.
pub fn toy_models(
    data: &ToyData,
    k: usize,
    seed: u64,
) -> (quarts_tensor::ParamStore, quarts_core::classifier::Classifier, quarts_core::ved::Ved) {
    use quarts_core::classifier::{Classifier, ClassifierDims};
    let streams = quarts_tensor::RngStreams::new(seed);
    let mut store = quarts_tensor::ParamStore::new();
    let dims = ClassifierDims {
        embed: k,
        hidden: k,
        query_vocab: data.vocabs.query.len(),
        title_vocab: data.vocabs.title.len(),
    };
    let clf = Classifier::register(&mut store, dims, 0.1, &mut streams.named("init/classifier"));
    let ved = quarts_core::ved::Ved::register(&mut store, &clf, 4, &mut streams.named("init/ved"));
    (store, clf, ved)
}
