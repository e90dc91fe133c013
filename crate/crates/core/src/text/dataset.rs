//! Pair records, encoded examples, item-disjoint splits, batching and TSV io.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::tokenize;
use super::vocab::{Vocabs, PAD};
use crate::error::{QuartsError, Result};

pub const MAX_TITLE_LEN: usize = 16;
pub const MAX_QUERY_LEN: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Annotated,
    Logs,
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Source::Annotated => "annotated",
            Source::Logs => "logs",
        })
    }
}

impl FromStr for Source {
    type Err = QuartsError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "annotated" => Ok(Source::Annotated),
            "logs" => Ok(Source::Logs),
            other => Err(QuartsError::Data(format!("unknown source `{other}`"))),
        }
    }
}

/// A text-level (title, query, label, source) row.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct PairRecord {
    pub title: String,
    pub query: String,
    pub label: u8,
    pub source: Source,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Example {
    pub item_ids: Vec<usize>,
    pub query_ids: Vec<usize>,
    pub label: u8,
    pub source: Source,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TripleExample {
    pub item_ids: Vec<usize>,
    pub matched_query_ids: Vec<usize>,
    pub mismatched_query_ids: Vec<usize>,
}

/// Tokenizes, truncates from the right and maps through the vocabularies.
pub fn encode_pair(vocabs: &Vocabs, title: &str, query: &str) -> Result<(Vec<usize>, Vec<usize>)> {
    let mut t = tokenize(title);
    let mut q = tokenize(query);
    t.truncate(MAX_TITLE_LEN);
    q.truncate(MAX_QUERY_LEN);
    if t.is_empty() || q.is_empty() {
        return Err(QuartsError::Data(format!("empty title or query in pair ({title:?}, {query:?})")));
    }
    Ok((vocabs.title.encode(&t), vocabs.query.encode(&q)))
}

pub fn encode_records(vocabs: &Vocabs, records: &[PairRecord]) -> Result<Vec<Example>> {
    records
        .iter()
        .map(|r| {
            if r.source == Source::Logs && r.label != 0 {
                return Err(QuartsError::Data(format!("logs pair labeled {}: {r:?}", r.label)));
            }
            let (item_ids, query_ids) = encode_pair(vocabs, &r.title, &r.query)?;
            Ok(Example {
                item_ids,
                query_ids,
                label: r.label,
                source: r.source,
            })
        })
        .collect()
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Splits {
    pub train: Vec<PairRecord>,
    pub validation: Vec<PairRecord>,
    pub test: Vec<PairRecord>,
}

/// Item-disjoint split: whole titles are assigned to a split, so no title
/// appears in two splits. Titles are shuffled with `rng` and cut by `ratios`.
pub fn split<R: Rng + ?Sized>(records: &[PairRecord], ratios: [f64; 3], rng: &mut R) -> Result<Splits> {
    if ratios.iter().any(|r| !(0.0..=1.0).contains(r)) || (ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(QuartsError::Data(format!("split ratios {ratios:?} must be in [0,1] and sum to 1")));
    }
    // titles in first-appearance order, so the shuffle is reproducible
    let mut titles: Vec<&str> = Vec::new();
    let mut seen = HashMap::new();
    for r in records {
        seen.entry(r.title.as_str()).or_insert_with(|| {
            titles.push(&r.title);
        });
    }
    titles.shuffle(rng);
    let n = titles.len();
    let n_train = (ratios[0] * n as f64).round() as usize;
    let n_val = ((ratios[1] * n as f64).round() as usize).min(n - n_train.min(n));
    let n_train = n_train.min(n);
    for (i, (&r, count)) in ratios
        .iter()
        .zip([n_train, n_val, n - n_train - n_val])
        .enumerate()
    {
        if r > 0.0 && count == 0 {
            return Err(QuartsError::Data(format!(
                "split {i} has ratio {r} but {n} distinct items leave it empty"
            )));
        }
    }
    let mut which: HashMap<&str, usize> = HashMap::new();
    for (i, t) in titles.iter().enumerate() {
        let s = if i < n_train {
            0
        } else if i < n_train + n_val {
            1
        } else {
            2
        };
        which.insert(t, s);
    }
    let mut out = Splits::default();
    for r in records {
        match which[r.title.as_str()] {
            0 => out.train.push(r.clone()),
            1 => out.validation.push(r.clone()),
            _ => out.test.push(r.clone()),
        }
    }
    Ok(out)
}

/// Groups annotated pairs by item and emits (matched, mismatched) query
/// combinations, at most `cap` per item.
pub fn build_triples(examples: &[Example], cap: usize) -> Vec<TripleExample> {
    // item → (matched queries, mismatched queries)
    type Queries<'a> = (Vec<&'a [usize]>, Vec<&'a [usize]>);
    let mut by_item: BTreeMap<&[usize], Queries> = BTreeMap::new();
    let mut order: Vec<&[usize]> = Vec::new();
    for e in examples.iter().filter(|e| e.source == Source::Annotated) {
        let entry = by_item.entry(&e.item_ids).or_insert_with(|| {
            order.push(&e.item_ids);
            (Vec::new(), Vec::new())
        });
        let bucket = if e.label == 0 { &mut entry.0 } else { &mut entry.1 };
        if !bucket.contains(&e.query_ids.as_slice()) {
            bucket.push(&e.query_ids);
        }
    }
    let mut out = Vec::new();
    for item in order {
        let (matched, mismatched) = &by_item[item];
        let mut emitted = 0;
        'item: for q in matched {
            for q_mis in mismatched {
                if emitted == cap {
                    break 'item;
                }
                out.push(TripleExample {
                    item_ids: item.to_vec(),
                    matched_query_ids: q.to_vec(),
                    mismatched_query_ids: q_mis.to_vec(),
                });
                emitted += 1;
            }
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Batch {
    /// Positions of the batch members in the source slice.
    pub indices: Vec<usize>,
    /// `B × max_len` ids, padded with PAD.
    pub item_ids: Vec<Vec<usize>>,
    pub item_lens: Vec<usize>,
    pub query_ids: Vec<Vec<usize>>,
    pub query_lens: Vec<usize>,
    pub labels: Vec<u8>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn item(&self, i: usize) -> &[usize] {
        &self.item_ids[i][..self.item_lens[i]]
    }

    pub fn query(&self, i: usize) -> &[usize] {
        &self.query_ids[i][..self.query_lens[i]]
    }
}

fn pad(seqs: &[&[usize]]) -> (Vec<Vec<usize>>, Vec<usize>) {
    let max = seqs.iter().map(|s| s.len()).max().unwrap_or(0);
    let lens = seqs.iter().map(|s| s.len()).collect();
    let ids = seqs
        .iter()
        .map(|s| {
            let mut v = s.to_vec();
            v.resize(max, PAD);
            v
        })
        .collect();
    (ids, lens)
}

/// Splits `examples` into padded batches. With `rng` the order is shuffled
/// first; without it batches follow the input order.
pub fn batches<R: Rng + ?Sized>(examples: &[Example], batch_size: usize, rng: Option<&mut R>) -> Vec<Batch> {
    assert!(batch_size > 0, "batch size must be positive");
    let mut order: Vec<usize> = (0..examples.len()).collect();
    if let Some(rng) = rng {
        order.shuffle(rng);
    }
    order
        .chunks(batch_size)
        .map(|idx| {
            let items: Vec<&[usize]> = idx.iter().map(|&i| examples[i].item_ids.as_slice()).collect();
            let queries: Vec<&[usize]> = idx.iter().map(|&i| examples[i].query_ids.as_slice()).collect();
            let (item_ids, item_lens) = pad(&items);
            let (query_ids, query_lens) = pad(&queries);
            Batch {
                indices: idx.to_vec(),
                item_ids,
                item_lens,
                query_ids,
                query_lens,
                labels: idx.iter().map(|&i| examples[i].label).collect(),
            }
        })
        .collect()
}

pub fn write_tsv(path: impl AsRef<Path>, records: &[PairRecord]) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| QuartsError::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    for r in records {
        writeln!(w, "{}\t{}\t{}\t{}", r.title, r.query, r.label, r.source).map_err(|e| QuartsError::io(path, e))?;
    }
    w.flush().map_err(|e| QuartsError::io(path, e))
}

pub fn read_tsv(path: impl AsRef<Path>) -> Result<Vec<PairRecord>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| QuartsError::io(path, e))?;
    let mut out = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| QuartsError::io(path, e))?;
        if line.is_empty() {
            continue;
        }
        let bad = |what: &str| QuartsError::Data(format!("{}:{}: {what}", path.display(), lineno + 1));
        let fields: Vec<&str> = line.split('\t').collect();
        let [title, query, label, source] = fields.as_slice() else {
            return Err(bad("expected 4 tab-separated fields"));
        };
        let label = match *label {
            "0" => 0,
            "1" => 1,
            _ => return Err(bad("label must be 0 or 1")),
        };
        out.push(PairRecord {
            title: title.to_string(),
            query: query.to_string(),
            label,
            source: source.parse()?,
        });
    }
    Ok(out)
}
