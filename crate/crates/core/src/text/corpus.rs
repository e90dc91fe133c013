//! Synthetic product-search corpus: item titles, annotated pairs at a fixed
//! mismatch rate, and behavioral (logs) matches.

use std::collections::HashSet;

use quarts_tensor::RngStreams;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::catalog::{CatalogSpec, Oracle, TypeId, AUDIENCES, CONNECTIVE};
use super::dataset::{PairRecord, Source};
use crate::error::{QuartsError, Result};

/// Queries never exceed this many tokens; optional parts are dropped to fit.
const QUERY_BUDGET: usize = 8;

#[derive(Clone, Debug, PartialEq)]
pub struct Item {
    pub title: String,
    pub product_type: TypeId,
    pub brand: String,
    pub color: String,
    pub material: String,
    pub size: String,
}

#[derive(Clone, Debug)]
pub struct Corpus {
    pub items: Vec<Item>,
    pub labeled: Vec<PairRecord>,
    pub logs: Vec<PairRecord>,
    pub oracle: Oracle,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Kind {
    Matched,
    Hard,
    Easy,
}

pub fn generate_corpus(spec: &CatalogSpec) -> Result<Corpus> {
    spec.validate()?;
    if spec.items > spec.title_capacity() {
        return Err(QuartsError::Data(format!(
            "{} items requested but the catalog can only produce {} distinct titles",
            spec.items,
            spec.title_capacity()
        )));
    }
    let streams = RngStreams::new(spec.seed);
    let oracle = Oracle::new(spec);
    let items = generate_items(spec, &mut streams.named("corpus/items"))?;
    if items.is_empty() && spec.labeled_pairs + spec.log_pairs > 0 {
        return Err(QuartsError::Data("pairs requested from an empty catalog".into()));
    }
    let gen = QueryGen { spec, oracle: &oracle };

    let mut seen: HashSet<(String, String)> = HashSet::new();
    let mut rng = streams.named("corpus/labeled");
    let mut labeled = Vec::with_capacity(spec.labeled_pairs);
    for _ in 0..spec.labeled_pairs {
        let item = &items[rng.gen_range(0..items.len())];
        let kind = if rng.gen_bool(spec.positive_rate) {
            if rng.gen_bool(spec.hard_fraction) {
                Kind::Hard
            } else {
                Kind::Easy
            }
        } else {
            Kind::Matched
        };
        let query = gen.query(item, kind, &mut rng);
        let label = oracle.label(&super::tokenize(&item.title), &super::tokenize(&query));
        debug_assert_eq!(label == 0, kind == Kind::Matched, "{} / {query}", item.title);
        seen.insert((item.title.clone(), query.clone()));
        labeled.push(PairRecord {
            title: item.title.clone(),
            query,
            label,
            source: Source::Annotated,
        });
    }

    // Logs hold only behavioral matches, deduplicated against the annotated
    // set and against each other on the exact (title, query) strings.
    let mut rng = streams.named("corpus/logs");
    let mut logs = Vec::with_capacity(spec.log_pairs);
    let mut attempts = 0usize;
    while logs.len() < spec.log_pairs {
        attempts += 1;
        if attempts > 50 * spec.log_pairs.max(1) {
            return Err(QuartsError::Data(format!(
                "could only draw {} distinct logs pairs of {} requested",
                logs.len(),
                spec.log_pairs
            )));
        }
        let item = &items[rng.gen_range(0..items.len())];
        let query = gen.query(item, Kind::Matched, &mut rng);
        if seen.insert((item.title.clone(), query.clone())) {
            logs.push(PairRecord {
                title: item.title.clone(),
                query,
                label: 0,
                source: Source::Logs,
            });
        }
    }
    Ok(Corpus {
        items,
        labeled,
        logs,
        oracle,
    })
}

fn generate_items(spec: &CatalogSpec, rng: &mut ChaCha8Rng) -> Result<Vec<Item>> {
    let a = &spec.attributes;
    let ntypes = spec.product_types.len();
    let mut titles = HashSet::new();
    let mut items = Vec::with_capacity(spec.items);
    let mut attempts = 0usize;
    while items.len() < spec.items {
        attempts += 1;
        if attempts > 100 * spec.items {
            return Err(QuartsError::Data("failed to draw enough distinct titles".into()));
        }
        // round-robin over types keeps every type represented
        let t = items.len() % ntypes;
        let pt = &spec.product_types[t];
        let brand = spec.brands[pt.family].choose(rng).unwrap().clone();
        let color = a.colors.choose(rng).unwrap().clone();
        let material = a.materials.choose(rng).unwrap().clone();
        let size = a.sizes.choose(rng).unwrap().clone();
        let extra = if !a.extras.is_empty() && rng.gen_bool(0.3) {
            Some(a.extras.choose(rng).unwrap().clone())
        } else {
            None
        };
        let mut title = format!("{brand} {} {color} {material} {size}", pt.name);
        if let Some(e) = extra {
            title.push(' ');
            title.push_str(&e);
        }
        if titles.insert(title.clone()) {
            items.push(Item {
                title,
                product_type: t,
                brand,
                color,
                material,
                size,
            });
        }
    }
    Ok(items)
}

struct QueryGen<'a> {
    spec: &'a CatalogSpec,
    oracle: &'a Oracle,
}

impl QueryGen<'_> {
    fn query(&self, item: &Item, kind: Kind, rng: &mut ChaCha8Rng) -> String {
        let t = item.product_type;
        let accessories = self.oracle.accessories(t);
        let head = match kind {
            Kind::Matched => t,
            Kind::Hard => *accessories.choose(rng).unwrap(),
            Kind::Easy => {
                let pool: Vec<TypeId> = (0..self.oracle.num_types())
                    .filter(|x| *x != t && !accessories.contains(x))
                    .collect();
                *pool.choose(rng).unwrap_or(&accessories[0])
            }
        };
        let head_name = self.oracle.type_name(head);

        // attribute units come from the item, except for easy mismatches
        // which draw unrelated ones
        let a = &self.spec.attributes;
        let (brand, color, material, size) = if kind == Kind::Easy {
            let fam = self.spec.product_types[head].family;
            (
                self.spec.brands[fam].choose(rng).unwrap().clone(),
                a.colors.choose(rng).unwrap().clone(),
                a.materials.choose(rng).unwrap().clone(),
                a.sizes.choose(rng).unwrap().clone(),
            )
        } else {
            (item.brand.clone(), item.color.clone(), item.material.clone(), item.size.clone())
        };
        // (is the product-type phrase, text)
        let mut units: Vec<(bool, String)> = vec![(true, head_name)];
        for (value, p) in [(brand, 0.3), (color, 0.4), (size, 0.25), (material, 0.25)] {
            if rng.gen_bool(p) {
                units.push((false, value));
            }
        }
        units.shuffle(rng);

        let suffix = match kind {
            Kind::Hard if rng.gen_bool(0.5) => Some(self.oracle.type_name(t)),
            _ if rng.gen_bool(0.25) => {
                if kind == Kind::Matched && rng.gen_bool(0.3) {
                    Some(self.oracle.type_name(*accessories.choose(rng).unwrap()))
                } else {
                    Some(AUDIENCES.choose(rng).unwrap().to_string())
                }
            }
            _ => None,
        };

        let count = |units: &[(bool, String)], suffix: &Option<String>| {
            units.iter().map(|(_, u)| u.split(' ').count()).sum::<usize>()
                + suffix.as_ref().map_or(0, |s| 1 + s.split(' ').count())
        };
        let mut suffix = suffix;
        while count(&units, &suffix) > QUERY_BUDGET {
            if units.len() > 1 {
                let pos = units.iter().rposition(|(is_head, _)| !is_head).unwrap();
                units.remove(pos);
            } else {
                suffix = None;
            }
        }
        let mut q = units.iter().map(|(_, u)| u.as_str()).collect::<Vec<_>>().join(" ");
        if let Some(s) = suffix {
            q.push(' ');
            q.push_str(CONNECTIVE);
            q.push(' ');
            q.push_str(&s);
        }
        q
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::text::tokenize;

    fn small_spec(seed: u64) -> CatalogSpec {
        let mut s = CatalogSpec::desk_default(seed);
        s.items = 300;
        s.labeled_pairs = 3000;
        s.log_pairs = 2000;
        s
    }

    #[test]
    fn labels_agree_with_the_oracle() {
        let c = generate_corpus(&small_spec(1)).unwrap();
        assert_eq!(c.items.len(), 300);
        assert_eq!(c.labeled.len(), 3000);
        assert_eq!(c.logs.len(), 2000);
        for r in c.labeled.iter().chain(&c.logs) {
            let q = tokenize(&r.query);
            assert!(!q.is_empty() && q.len() <= QUERY_BUDGET, "{}", r.query);
            assert_eq!(c.oracle.label(&tokenize(&r.title), &q), r.label, "{r:?}");
        }
        assert!(c.logs.iter().all(|r| r.label == 0 && r.source == Source::Logs));
        let pos = c.labeled.iter().filter(|r| r.label == 1).count() as f64 / 3000.0;
        assert!((pos - 0.15).abs() < 0.03, "positive rate {pos}");
        let hard = c
            .labeled
            .iter()
            .filter(|r| c.oracle.is_hard_mismatch(&tokenize(&r.title), &tokenize(&r.query)))
            .count();
        assert!(hard > 100, "{hard} hard positives");
    }

    #[test]
    fn logs_are_deduplicated() {
        let c = generate_corpus(&small_spec(2)).unwrap();
        let mut seen = HashSet::new();
        for r in c.labeled.iter().filter(|r| r.label == 0) {
            seen.insert((r.title.clone(), r.query.clone()));
        }
        for r in &c.logs {
            assert!(seen.insert((r.title.clone(), r.query.clone())), "duplicate {r:?}");
        }
    }

    #[test]
    fn reproducible() {
        let a = generate_corpus(&small_spec(3)).unwrap();
        let b = generate_corpus(&small_spec(3)).unwrap();
        assert_eq!(a.items, b.items);
        assert_eq!(a.labeled, b.labeled);
        assert_eq!(a.logs, b.logs);
        let c = generate_corpus(&small_spec(4)).unwrap();
        assert_ne!(a.labeled, c.labeled);
    }

    #[test]
    fn capacity_is_enforced() {
        let mut s = small_spec(0);
        s.items = s.title_capacity() + 1;
        assert!(matches!(generate_corpus(&s), Err(QuartsError::Data(_))));
    }
}
