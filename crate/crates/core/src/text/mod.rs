//! Tokenization, vocabularies, the synthetic catalog and dataset plumbing.

pub mod catalog;
pub mod corpus;
pub mod dataset;
mod tokenize;
pub mod vocab;

pub use catalog::{CatalogSpec, Judgement, Oracle};
pub use corpus::{generate_corpus, Corpus, Item};
pub use dataset::{
    batches, build_triples, encode_records, read_tsv, split, write_tsv, Batch, Example, PairRecord, Source, Splits,
    TripleExample,
};
pub use tokenize::tokenize;
pub use vocab::{Side, Vocabs, Vocabulary, BOS, EOS, PAD, UNK};

/// Builds both vocabularies from the tokenized titles and queries of `records`.
pub fn build_vocabs(records: &[PairRecord], min_count: usize) -> crate::Result<Vocabs> {
    let titles: Vec<Vec<String>> = records.iter().map(|r| tokenize(&r.title)).collect();
    let queries: Vec<Vec<String>> = records.iter().map(|r| tokenize(&r.query)).collect();
    Ok(Vocabs {
        query: Vocabulary::build(queries.iter().map(Vec::as_slice), Side::Query, min_count)?,
        title: Vocabulary::build(titles.iter().map(Vec::as_slice), Side::Title, min_count)?,
    })
}
