//! Synthetic product catalog and its ground-truth match oracle.
//!
//! Product types come in families of lexically related types (a phone,
//! its case, its charger, ...). The accessory map links each type to
//! related-but-distinct types; substituting one of those into a query
//! produces a hard mismatch.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{QuartsError, Result};

pub type TypeId = usize;

const FAMILIES: [[&str; 6]; 10] = [
    ["smartphone", "phone case", "screen protector", "phone charger", "phone mount", "charging cable"],
    ["running shoe", "hiking shoe", "shoe insole", "shoelace", "athletic sock", "shoe rack"],
    ["flat screen tv", "tv mount", "tv stand", "hdmi cable", "soundbar", "remote control"],
    ["smart watch", "watch band", "watch charger", "fitness tracker", "wall clock", "watch box"],
    ["laptop", "laptop bag", "laptop stand", "laptop charger", "wireless mouse", "keyboard"],
    ["bed frame", "bed sheet", "mattress", "pillow", "duvet cover", "mattress topper"],
    ["chef knife", "knife block", "cutting board", "knife sharpener", "pizza cutter", "kitchen scale"],
    ["high chair", "booster seat", "baby stroller", "car seat", "baby bottle", "dining set"],
    ["digital camera", "camera bag", "camera lens", "tripod", "memory card", "camera strap"],
    ["yoga mat", "yoga block", "dumbbell", "resistance band", "exercise bike", "water bottle"],
];

const BRANDS: [[&str; 3]; 10] = [
    ["apex", "novatel", "lumina"],
    ["stride", "trekker", "puma"],
    ["vistaview", "sonex", "brightline"],
    ["chronos", "pulsewear", "tempo"],
    ["corebook", "zentek", "aerotech"],
    ["dreamwell", "comfy", "linenco"],
    ["mercer", "chefpro", "bladeworks"],
    ["chicco", "tinysteps", "cradlecare"],
    ["optix", "snaplens", "focalpoint"],
    ["flexfit", "zenmat", "ironcore"],
];

const COLORS: [&str; 8] = ["black", "white", "gray", "red", "blue", "green", "pink", "silver"];
const MATERIALS: [&str; 8] = ["leather", "cotton", "plastic", "steel", "wood", "silicone", "glass", "nylon"];
const SIZES: [&str; 6] = ["small", "medium", "large", "compact", "size 10", "size 11"];
const EXTRAS: [&str; 5] = ["pack of 2", "premium", "new edition", "value bundle", "2 pack"];
pub const AUDIENCES: [&str; 3] = ["men", "women", "kids"];

/// The connective that marks a product mention as a complement
/// ("case for smartphone") rather than the query intent.
pub const CONNECTIVE: &str = "for";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProductType {
    pub name: String,
    pub family: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttributePools {
    pub colors: Vec<String>,
    pub sizes: Vec<String>,
    pub materials: Vec<String>,
    pub extras: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CatalogSpec {
    pub product_types: Vec<ProductType>,
    /// Brands per family.
    pub brands: Vec<Vec<String>>,
    pub attributes: AttributePools,
    /// Product type → related-but-distinct product types.
    pub accessory_map: BTreeMap<TypeId, Vec<TypeId>>,
    pub items: usize,
    pub labeled_pairs: usize,
    pub log_pairs: usize,
    pub positive_rate: f64,
    /// Share of positives built by accessory substitution; the rest use an
    /// unrelated type.
    pub hard_fraction: f64,
    pub seed: u64,
}

impl CatalogSpec {
    /// 60 types in 10 families, 30 brands and 8 accessory neighbours per
    /// type: the five family mates plus three types of the next family.
    pub fn desk_default(seed: u64) -> Self {
        let product_types: Vec<ProductType> = FAMILIES
            .iter()
            .enumerate()
            .flat_map(|(f, names)| {
                names.iter().map(move |n| ProductType {
                    name: n.to_string(),
                    family: f,
                })
            })
            .collect();
        let per = FAMILIES[0].len();
        let nf = FAMILIES.len();
        let mut accessory_map = BTreeMap::new();
        for t in 0..product_types.len() {
            let (f, i) = (t / per, t % per);
            let mut ns: Vec<TypeId> = (0..per).filter(|&j| j != i).map(|j| f * per + j).collect();
            let next = (f + 1) % nf;
            ns.extend((0..3).map(|d| next * per + (i + d) % per));
            accessory_map.insert(t, ns);
        }
        let strs = |xs: &[&str]| xs.iter().map(|s| s.to_string()).collect::<Vec<_>>();
        Self {
            product_types,
            brands: BRANDS.iter().map(|b| strs(b)).collect(),
            attributes: AttributePools {
                colors: strs(&COLORS),
                sizes: strs(&SIZES),
                materials: strs(&MATERIALS),
                extras: strs(&EXTRAS),
            },
            accessory_map,
            items: 5_000,
            labeled_pairs: 50_000,
            log_pairs: 50_000,
            positive_rate: 0.15,
            hard_fraction: 0.5,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.product_types.len();
        if n < 2 {
            return Err(QuartsError::Data("catalog needs at least two product types".into()));
        }
        for t in 0..n {
            let ns = self
                .accessory_map
                .get(&t)
                .filter(|ns| !ns.is_empty())
                .ok_or_else(|| QuartsError::Data(format!("product type {t} has no accessory entry")))?;
            if ns.contains(&t) {
                return Err(QuartsError::Data(format!("accessory map is reflexive at type {t}")));
            }
            if ns.iter().any(|&x| x >= n) {
                return Err(QuartsError::Data(format!("accessory map of type {t} names an unknown type")));
            }
        }
        for pt in &self.product_types {
            if self.brands.get(pt.family).is_none_or(|b| b.is_empty()) {
                return Err(QuartsError::Data(format!("no brands for family {}", pt.family)));
            }
        }
        if !(0.0..=1.0).contains(&self.positive_rate) || !(0.0..=1.0).contains(&self.hard_fraction) {
            return Err(QuartsError::Data("rates must lie in [0, 1]".into()));
        }
        let a = &self.attributes;
        if a.colors.is_empty() || a.sizes.is_empty() || a.materials.is_empty() {
            return Err(QuartsError::Data("attribute pools must be nonempty".into()));
        }
        Ok(())
    }

    /// Number of distinct item titles the catalog can produce.
    pub fn title_capacity(&self) -> usize {
        let a = &self.attributes;
        let per_type = a.colors.len() * a.sizes.len() * a.materials.len() * (a.extras.len() + 1);
        self.product_types
            .iter()
            .map(|pt| self.brands[pt.family].len() * per_type)
            .sum()
    }
}

/// How a query relates to an item according to the catalog.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Judgement {
    Matched,
    Mismatched,
    Unresolvable,
}

/// Ground-truth labeler: the query intent is the first product-type mention
/// not introduced by the connective; the pair matches iff that intent equals
/// the item's product type.
#[derive(Clone, Debug)]
pub struct Oracle {
    names: Vec<Vec<String>>,
    accessory: BTreeMap<TypeId, Vec<TypeId>>,
    /// Tokens of accessory type names that are not part of the type's own name.
    accessory_terms: Vec<Vec<String>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Mention {
    pub type_id: TypeId,
    pub start: usize,
    pub len: usize,
    pub after_connective: bool,
}

impl Oracle {
    pub fn new(spec: &CatalogSpec) -> Self {
        let names: Vec<Vec<String>> = spec
            .product_types
            .iter()
            .map(|p| super::tokenize(&p.name))
            .collect();
        let accessory_terms = (0..names.len())
            .map(|t| {
                let mut terms: Vec<String> = spec.accessory_map[&t]
                    .iter()
                    .flat_map(|&a| names[a].iter().cloned())
                    .filter(|w| !names[t].contains(w))
                    .collect();
                terms.sort();
                terms.dedup();
                terms
            })
            .collect();
        Self {
            names,
            accessory: spec.accessory_map.clone(),
            accessory_terms,
        }
    }

    pub fn num_types(&self) -> usize {
        self.names.len()
    }

    pub fn type_name(&self, t: TypeId) -> String {
        self.names[t].join(" ")
    }

    pub fn accessories(&self, t: TypeId) -> &[TypeId] {
        &self.accessory[&t]
    }

    /// Longest-match scan for product-type phrases, left to right.
    pub fn mentions<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<Mention> {
        let mut out = Vec::new();
        let mut i = 0;
        while i < tokens.len() {
            let best = self
                .names
                .iter()
                .enumerate()
                .filter(|(_, name)| {
                    i + name.len() <= tokens.len()
                        && name.iter().zip(&tokens[i..]).all(|(a, b)| a == b.as_ref())
                })
                .max_by_key(|(t, name)| (name.len(), std::cmp::Reverse(*t)));
            match best {
                Some((t, name)) => {
                    out.push(Mention {
                        type_id: t,
                        start: i,
                        len: name.len(),
                        after_connective: i > 0 && tokens[i - 1].as_ref() == CONNECTIVE,
                    });
                    i += name.len();
                }
                None => i += 1,
            }
        }
        out
    }

    pub fn item_type<S: AsRef<str>>(&self, title: &[S]) -> Option<TypeId> {
        self.mentions(title).first().map(|m| m.type_id)
    }

    pub fn query_intent<S: AsRef<str>>(&self, query: &[S]) -> Option<TypeId> {
        let ms = self.mentions(query);
        ms.iter()
            .find(|m| !m.after_connective)
            .or_else(|| ms.first())
            .map(|m| m.type_id)
    }

    pub fn judge<S: AsRef<str>, T: AsRef<str>>(&self, title: &[S], query: &[T]) -> Judgement {
        let Some(item) = self.item_type(title) else {
            return Judgement::Unresolvable;
        };
        match self.query_intent(query) {
            Some(q) if q == item => Judgement::Matched,
            Some(_) => Judgement::Mismatched,
            None => {
                let terms = &self.accessory_terms[item];
                if query.iter().any(|w| terms.iter().any(|t| t == w.as_ref())) {
                    Judgement::Mismatched
                } else {
                    Judgement::Unresolvable
                }
            }
        }
    }

    /// Mismatch label `y`: 0 for a match, 1 otherwise.
    pub fn label<S: AsRef<str>, T: AsRef<str>>(&self, title: &[S], query: &[T]) -> u8 {
        match self.judge(title, query) {
            Judgement::Matched => 0,
            _ => 1,
        }
    }

    /// True for a mismatch whose query intent is an accessory neighbour of
    /// the item type.
    pub fn is_hard_mismatch<S: AsRef<str>, T: AsRef<str>>(&self, title: &[S], query: &[T]) -> bool {
        match (self.item_type(title), self.query_intent(query)) {
            (Some(i), Some(q)) => i != q && self.accessory[&i].contains(&q),
            _ => false,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::text::tokenize;

    fn oracle() -> Oracle {
        Oracle::new(&CatalogSpec::desk_default(0))
    }

    #[test]
    fn desk_catalog_shape() {
        let spec = CatalogSpec::desk_default(0);
        spec.validate().unwrap();
        assert_eq!(spec.product_types.len(), 60);
        assert_eq!(spec.brands.iter().map(Vec::len).sum::<usize>(), 30);
        assert!(spec.accessory_map.values().all(|ns| ns.len() == 8));
        assert!(spec.title_capacity() >= spec.items);
    }

    #[test]
    fn reflexive_accessory_map_is_rejected() {
        let mut spec = CatalogSpec::desk_default(0);
        spec.accessory_map.get_mut(&3).unwrap().push(3);
        assert!(spec.validate().is_err());
        let mut spec = CatalogSpec::desk_default(0);
        spec.accessory_map.insert(4, vec![]);
        assert!(spec.validate().is_err());
    }

    #[test]
    fn longest_match_and_connective() {
        let o = oracle();
        let q = tokenize("shoe insole for running shoe");
        let ms = o.mentions(&q);
        assert_eq!(ms.len(), 2);
        assert!(!ms[0].after_connective && ms[1].after_connective);
        assert_eq!(o.type_name(o.query_intent(&q).unwrap()), "shoe insole");
        let q = tokenize("laptop bag black");
        assert_eq!(o.type_name(o.query_intent(&q).unwrap()), "laptop bag");
        let q = tokenize("for running shoe");
        assert_eq!(o.type_name(o.query_intent(&q).unwrap()), "running shoe");
    }

    #[test]
    fn judgements() {
        let o = oracle();
        let title = tokenize("puma running shoe black leather size 11");
        assert_eq!(o.judge(&title, &tokenize("running shoe for men")), Judgement::Matched);
        assert_eq!(o.label(&title, &tokenize("running shoe for men")), 0);
        assert_eq!(o.label(&title, &tokenize("shoe insole for running shoe")), 1);
        assert!(o.is_hard_mismatch(&title, &tokenize("shoe insole for running shoe")));
        assert!(!o.is_hard_mismatch(&title, &tokenize("pizza cutter")));
        assert_eq!(o.label(&title, &tokenize("pizza cutter")), 1);
        // no product type, but an accessory term of the item type
        assert_eq!(o.judge(&title, &tokenize("black insole")), Judgement::Mismatched);
        assert_eq!(o.judge(&title, &tokenize("black puma")), Judgement::Unresolvable);
    }

    /// Exhaustive check over a three-type catalog: a pair is labeled 0 only
    /// when the query intent is the item's own type.
    #[test]
    fn never_matches_a_foreign_intent() {
        let mut spec = CatalogSpec::desk_default(0);
        spec.product_types.truncate(3);
        spec.accessory_map = BTreeMap::from([(0, vec![1, 2]), (1, vec![0]), (2, vec![0])]);
        spec.validate().unwrap();
        let o = Oracle::new(&spec);
        let words = ["smartphone", "phone", "case", "screen", "protector", "for", "red"];
        let mut queries: Vec<Vec<&str>> = vec![vec![]];
        for _ in 0..4 {
            let mut next = Vec::new();
            for q in &queries {
                for w in words {
                    let mut q2 = q.clone();
                    q2.push(w);
                    next.push(q2);
                }
            }
            queries.extend(next);
        }
        for item in 0..3 {
            let title = tokenize(&format!("apex {} black", spec.product_types[item].name));
            for q in &queries {
                let intent = o.query_intent(q);
                if o.label(&title, q) == 0 {
                    assert_eq!(intent, Some(item), "{q:?}");
                }
            }
        }
    }
}
