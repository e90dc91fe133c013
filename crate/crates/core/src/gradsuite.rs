//! Finite-difference verification of every tape op and of each full model
//! loss on toy shapes (k = 4, sequences of 2–3 tokens).

use quarts_tensor::{grad_check, ParamStore, Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::classifier::{weighted_ce, Classifier, ClassifierDims};
use crate::dssm::Dssm;
use crate::e2e::{switched_loss, ExampleRngs};
use crate::error::Result;
use crate::ved::Ved;

pub const TOLERANCE: f64 = 1e-4;
const EPS: f64 = 1e-3;
const K: usize = 4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CaseResult {
    pub name: String,
    pub max_rel_error: f64,
    pub coordinates: usize,
    pub worst: Option<(String, usize)>,
}

impl CaseResult {
    pub fn passes(&self) -> bool {
        self.max_rel_error < TOLERANCE
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub cases: Vec<CaseResult>,
}

impl SuiteReport {
    pub fn passes(&self) -> bool {
        self.cases.iter().all(CaseResult::passes)
    }

    pub fn max_rel_error(&self) -> f64 {
        self.cases.iter().map(|c| c.max_rel_error).fold(0.0, f64::max)
    }
}

type OpFn = fn(&mut Tape, &[Var]) -> quarts_tensor::Result<Var>;
/// Name, input shapes, input range, op.
type OpCase = (&'static str, Vec<(usize, usize)>, (f64, f64), OpFn);

fn random(rng: &mut ChaCha8Rng, r: usize, c: usize, lo: f64, hi: f64) -> Tensor {
    Tensor::from_matrix(r, c, (0..r * c).map(|_| rng.gen_range(lo..hi)).collect())
}

/// Contracts an op output with distinct weights so no coordinate's
/// gradient is hidden by symmetry.
fn weighted_sum(tape: &mut Tape, v: Var) -> quarts_tensor::Result<Var> {
    let (r, c) = tape.value(v).dims2()?;
    let w = tape.constant(Tensor::from_matrix(r, c, (0..r * c).map(|i| 0.3 + 0.17 * i as f64).collect()));
    let m = tape.mul(v, w)?;
    Ok(tape.sum_all(m))
}

fn op_case(name: &str, seed: u64, shapes: &[(usize, usize)], range: (f64, f64), f: OpFn) -> Result<CaseResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let ids: Vec<_> = shapes
        .iter()
        .enumerate()
        .map(|(i, &(r, c))| store.add(format!("x{i}"), random(&mut rng, r, c, range.0, range.1)))
        .collect();
    let report = grad_check(&store, EPS, |tape, s| {
        let vars: Vec<Var> = ids.iter().map(|&id| tape.param(s, id)).collect();
        let out = f(tape, &vars)?;
        weighted_sum(tape, out)
    })?;
    Ok(CaseResult {
        name: format!("op/{name}"),
        max_rel_error: report.max_rel_error,
        coordinates: report.coordinates,
        worst: report.worst,
    })
}

fn op_cases() -> Result<Vec<CaseResult>> {
    const SIGNED: (f64, f64) = (-1.0, 1.0);
    // abs is checked away from its kink
    const AWAY: (f64, f64) = (0.2, 0.8);
    let cases: Vec<OpCase> = vec![
        ("matmul", vec![(3, 4), (4, 2)], SIGNED, |t, v| t.matmul(v[0], v[1])),
        ("add", vec![(3, 4), (3, 4)], SIGNED, |t, v| t.add(v[0], v[1])),
        ("add_row", vec![(3, 4), (1, 4)], SIGNED, |t, v| t.add(v[0], v[1])),
        ("add_scalar", vec![(3, 4), (1, 1)], SIGNED, |t, v| t.add(v[0], v[1])),
        ("sub", vec![(3, 4), (3, 4)], SIGNED, |t, v| t.sub(v[0], v[1])),
        ("sub_row", vec![(3, 4), (1, 4)], SIGNED, |t, v| t.sub(v[0], v[1])),
        ("sub_scalar", vec![(3, 4), (1, 1)], SIGNED, |t, v| t.sub(v[0], v[1])),
        ("mul", vec![(3, 4), (3, 4)], SIGNED, |t, v| t.mul(v[0], v[1])),
        ("mul_row", vec![(3, 4), (1, 4)], SIGNED, |t, v| t.mul(v[0], v[1])),
        ("mul_scalar", vec![(3, 4), (1, 1)], SIGNED, |t, v| t.mul(v[0], v[1])),
        ("tanh", vec![(2, 5)], SIGNED, |t, v| Ok(t.tanh(v[0]))),
        ("sigmoid", vec![(2, 5)], SIGNED, |t, v| Ok(t.sigmoid(v[0]))),
        ("abs", vec![(2, 5)], AWAY, |t, v| {
            let n = t.affine(v[0], -1.0, 0.0);
            let both = t.concat(&[v[0], n], 0)?;
            Ok(t.abs(both))
        }),
        ("exp", vec![(2, 5)], SIGNED, |t, v| Ok(t.exp(v[0]))),
        ("exp_m1", vec![(2, 5)], SIGNED, |t, v| Ok(t.exp_m1(v[0]))),
        ("ln", vec![(2, 5)], (0.5, 2.0), |t, v| Ok(t.ln(v[0]))),
        ("affine", vec![(2, 5)], SIGNED, |t, v| Ok(t.affine(v[0], -2.5, 1.0))),
        ("scale", vec![(2, 5)], SIGNED, |t, v| Ok(t.scale(v[0], 0.7))),
        // one band inside the range and one beyond each bound, all at least
        // 0.2 from a kink
        ("clamp", vec![(2, 5)], SIGNED, |t, v| {
            let inside = t.affine(v[0], 0.4, 0.0);
            let above = t.affine(v[0], 0.4, 1.5);
            let below = t.affine(v[0], 0.4, -1.5);
            let bands = t.concat(&[inside, above, below], 0)?;
            Ok(t.clamp(bands, -0.9, 0.9))
        }),
        ("dropout", vec![(3, 4)], SIGNED, |t, v| {
            let mut rng = ChaCha8Rng::seed_from_u64(99);
            Ok(t.dropout(v[0], 0.3, Some(&mut rng)))
        }),
        ("softmax_rows", vec![(3, 5)], SIGNED, |t, v| t.softmax_rows(v[0])),
        ("log_softmax_rows", vec![(3, 5)], SIGNED, |t, v| t.log_softmax_rows(v[0])),
        ("concat_cols", vec![(2, 3), (2, 2)], SIGNED, |t, v| t.concat(&[v[0], v[1]], 1)),
        ("concat_rows", vec![(2, 3), (1, 3)], SIGNED, |t, v| t.concat(&[v[0], v[1]], 0)),
        ("slice_rows", vec![(4, 3)], SIGNED, |t, v| t.slice(v[0], 0, 1..3)),
        ("slice_cols", vec![(4, 3)], SIGNED, |t, v| t.slice(v[0], 1, 1..3)),
        ("transpose", vec![(4, 3)], SIGNED, |t, v| t.transpose(v[0])),
        ("sum_rows", vec![(4, 3)], SIGNED, |t, v| t.sum(v[0], 0)),
        ("sum_cols", vec![(4, 3)], SIGNED, |t, v| t.sum(v[0], 1)),
        ("sum_all", vec![(4, 3)], SIGNED, |t, v| Ok(t.sum_all(v[0]))),
        ("mean", vec![(4, 3)], SIGNED, |t, v| Ok(t.mean(v[0]))),
        ("pick", vec![(4, 3)], SIGNED, |t, v| t.pick(v[0], 2, 1)),
        ("lookup", vec![(5, 3)], SIGNED, |t, v| t.lookup(v[0], &[4, 0, 4, 2])),
        ("lookup_padded", vec![(5, 3)], SIGNED, |t, v| t.lookup_padded(v[0], &[4, 0, 4, 2], 0)),
    ];
    cases
        .into_iter()
        .enumerate()
        .map(|(i, (name, shapes, range, f))| op_case(name, 100 + i as u64, &shapes, range, f))
        .collect()
}

/// Re-draws every parameter uniformly in ±0.5 so the toy model sits away
/// from the near-linear regime of the default initialization.
fn spread_params(store: &mut ParamStore, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        for x in store.get_mut(id).data_mut() {
            *x = rng.gen_range(-0.5..0.5);
        }
    }
}

struct Toy {
    store: ParamStore,
    clf: Classifier,
    ved: Ved,
    item: Vec<usize>,
    query: Vec<usize>,
    target: Vec<usize>,
}

fn toy(seed: u64) -> Toy {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let dims = ClassifierDims {
        embed: K,
        hidden: K,
        query_vocab: 8,
        title_vocab: 9,
    };
    let clf = Classifier::register(&mut store, dims, 0.1, &mut rng);
    let ved = Ved::register(&mut store, &clf, 3, &mut rng);
    spread_params(&mut store, seed + 1);
    Toy {
        store,
        clf,
        ved,
        item: vec![4, 7, 5],
        query: vec![6, 4],
        target: vec![5, 7],
    }
}

fn model_case(name: &str, store: &ParamStore, f: impl Fn(&mut Tape, &ParamStore) -> Result<Var>) -> Result<CaseResult> {
    let report = grad_check(store, EPS, |tape, s| f(tape, s).map_err(to_tensor_err))?;
    Ok(CaseResult {
        name: format!("model/{name}"),
        max_rel_error: report.max_rel_error,
        coordinates: report.coordinates,
        worst: report.worst,
    })
}

fn to_tensor_err(e: crate::QuartsError) -> quarts_tensor::TensorError {
    match e {
        crate::QuartsError::Tensor(t) => t,
        other => quarts_tensor::TensorError::Contract(other.to_string()),
    }
}

fn model_cases(seed: u64) -> Result<Vec<CaseResult>> {
    let t = toy(seed);
    let mut out = Vec::new();

    // classifier only: generator parameters frozen so they are not probed
    let mut clf_store = t.store.clone();
    clf_store.set_frozen_prefix(Ved::PREFIX, true);
    out.push(model_case("classifier", &clf_store, |tape, s| {
        let mut drop = ChaCha8Rng::seed_from_u64(seed + 2);
        let (logit, _) = t.clf.logit(tape, s, &t.item, &t.query, Some(&mut drop))?;
        Ok(weighted_ce(tape, logit, 1, 5.0))
    })?);

    out.push(model_case("ved", &t.store, |tape, s| {
        let mut latent = ChaCha8Rng::seed_from_u64(seed + 3);
        let (loss, _, _) = t.ved.loss(&t.clf, tape, s, &t.item, &t.query, &t.target, 0.7, Some(&mut latent))?;
        Ok(loss)
    })?);

    out.push(model_case("e2e_s1", &t.store, |tape, s| {
        let mut drop = ChaCha8Rng::seed_from_u64(seed + 4);
        let mut latent = ChaCha8Rng::seed_from_u64(seed + 5);
        let rngs = ExampleRngs {
            dropout: Some(&mut drop),
            latent: Some(&mut latent),
        };
        switched_loss(&t.clf, Some(&t.ved), tape, s, &t.item, &t.query, 0, 1, 5.0, rngs)
    })?);

    let mut rng = ChaCha8Rng::seed_from_u64(seed + 6);
    let mut dssm_store = ParamStore::new();
    let dssm = Dssm::register(&mut dssm_store, K, K, 8, 9, &mut rng);
    spread_params(&mut dssm_store, seed + 7);
    out.push(model_case("dssm", &dssm_store, |tape, s| {
        let logit = dssm.logit(tape, s, &t.item, &t.query)?;
        Ok(weighted_ce(tape, logit, 0, 5.0))
    })?);
    Ok(out)
}

/// Every op, then the classifier, generator, switched end-to-end (s = 1)
/// and baseline losses.
pub fn run(seed: u64) -> Result<SuiteReport> {
    let mut cases = op_cases()?;
    cases.extend(model_cases(seed)?);
    Ok(SuiteReport { cases })
}
