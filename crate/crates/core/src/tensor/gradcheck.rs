//! Central finite-difference checking of tape gradients.
//!
//! The numeric side only ever evaluates the forward pass, so it shares no code
//! with the backward rules it checks.

use rand::seq::index::sample;

use super::{rng_from_seed, ParamStore, Tape, Var};
use crate::error::Result;

#[derive(Clone, Debug)]
pub struct GradCheckOptions {
    /// Perturbation for the central difference `(f(x+h) - f(x-h)) / 2h`.
    pub step: f64,
    /// Second perturbation tried for entries whose error at `step` exceeds
    /// 1e-7, as a central and as both one-sided differences; the smallest
    /// error is kept. Near a ReLU kink at least one side stays on a smooth
    /// piece, and on a smooth piece every difference estimates the same
    /// derivative, so a wrong analytic gradient still fails.
    pub fallback_step: Option<f64>,
    /// Relative errors are `|a - n| / max(|a|, |n|, floor)`; the floor keeps
    /// round-off on near-zero gradients from reading as a large relative error.
    pub floor: f64,
    /// Check at most this many randomly chosen entries of each parameter.
    pub max_entries_per_param: Option<usize>,
    pub sample_seed: u64,
    /// Seed handed to every tape, so stochastic ops repeat across evaluations.
    pub tape_seed: u64,
    pub train: bool,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            step: 1e-5,
            fallback_step: None,
            floor: 1e-6,
            max_entries_per_param: None,
            sample_seed: 0,
            tape_seed: 0,
            train: false,
        }
    }
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_param: String,
    pub worst_index: usize,
    pub analytic_at_worst: f64,
    pub numeric_at_worst: f64,
    pub params_checked: usize,
    pub entries_checked: usize,
}

/// Compares the analytic gradient of the scalar built by `build` against central
/// differences for every parameter in `store`. Parameter values are restored
/// before returning.
pub fn check_gradients<F>(
    store: &mut ParamStore,
    opts: &GradCheckOptions,
    build: F,
) -> Result<GradCheckReport>
where
    F: for<'a> Fn(&mut Tape<'a>) -> Result<Var>,
{
    let eval = |store: &ParamStore| -> Result<f64> {
        let mut tape = Tape::new(store, opts.tape_seed).train(opts.train);
        let loss = build(&mut tape)?;
        Ok(tape.value(loss).data()[0])
    };
    let (base, grads) = {
        let mut tape = Tape::new(store, opts.tape_seed).train(opts.train);
        let loss = build(&mut tape)?;
        (tape.value(loss).data()[0], tape.backward(loss)?)
    };

    let mut rng = rng_from_seed(opts.sample_seed);
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_param: String::new(),
        worst_index: 0,
        analytic_at_worst: 0.0,
        numeric_at_worst: 0.0,
        params_checked: 0,
        entries_checked: 0,
    };
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        let numel = store.value(id).numel();
        let indices: Vec<usize> = match opts.max_entries_per_param {
            Some(k) if k < numel => sample(&mut rng, numel, k).into_vec(),
            _ => (0..numel).collect(),
        };
        let analytic = grads.get(id).cloned();
        for i in indices {
            let a = analytic.as_ref().map_or(0.0, |g| g.data()[i]);
            let rel_err = |n: f64| (a - n).abs() / a.abs().max(n.abs()).max(opts.floor);
            let mut probe = |h: f64| -> Result<(f64, f64)> {
                let original = store.value(id).data()[i];
                store.get_mut(id).value.data_mut()[i] = original + h;
                let plus = eval(store);
                store.get_mut(id).value.data_mut()[i] = original - h;
                let minus = eval(store);
                store.get_mut(id).value.data_mut()[i] = original;
                Ok((plus?, minus?))
            };
            let (plus, minus) = probe(opts.step)?;
            let mut numeric = (plus - minus) / (2.0 * opts.step);
            let mut rel = rel_err(numeric);
            if let Some(h) = opts.fallback_step.filter(|_| rel > 1e-7) {
                let (plus, minus) = probe(h)?;
                for n in [(plus - minus) / (2.0 * h), (plus - base) / h, (base - minus) / h] {
                    if rel_err(n) < rel {
                        (numeric, rel) = (n, rel_err(n));
                    }
                }
            }
            if rel > report.max_rel_error || report.entries_checked == 0 {
                report.max_rel_error = rel;
                report.worst_param = store.get(id).name.clone();
                report.worst_index = i;
                report.analytic_at_worst = a;
                report.numeric_at_worst = numeric;
            }
            report.entries_checked += 1;
        }
        report.params_checked += 1;
    }
    Ok(report)
}

fn weighted_sum(tape: &mut Tape<'_>, out: Var, seed: u64) -> Result<Var> {
    let mut rng = rng_from_seed(seed);
    let w = tape.constant(super::Tensor::uniform(tape.shape(out), -1.0, 1.0, &mut rng));
    let prod = tape.mul(out, w)?;
    Ok(tape.sum(prod))
}

type OpCase = (&'static str, Vec<Vec<usize>>, Box<dyn Fn(&mut Tape<'_>, &[Var]) -> Result<Var>>);

fn op_cases() -> Vec<OpCase> {
    use std::rc::Rc;

    use super::KeyIndex;
    let index = Rc::new(KeyIndex::new(vec![vec![0, 1], vec![2, 3, 4], vec![4]]).expect("non-empty lists"));
    let keep: Vec<bool> = vec![true, false, true, true, true, false];
    let (i1, i2) = (index.clone(), index.clone());
    vec![
        ("matmul", vec![vec![3, 4], vec![4, 2]], Box::new(|t, v| t.matmul(v[0], v[1]))),
        ("matmul_nt", vec![vec![3, 4], vec![5, 4]], Box::new(|t, v| t.matmul_nt(v[0], v[1]))),
        ("linear", vec![vec![3, 4], vec![4, 2], vec![2]], Box::new(|t, v| t.linear(v[0], v[1], Some(v[2])))),
        ("add", vec![vec![2, 3], vec![2, 3]], Box::new(|t, v| t.add(v[0], v[1]))),
        ("sub", vec![vec![2, 3], vec![2, 3]], Box::new(|t, v| t.sub(v[0], v[1]))),
        ("mul", vec![vec![2, 3], vec![2, 3]], Box::new(|t, v| t.mul(v[0], v[1]))),
        ("add_row", vec![vec![3, 4], vec![4]], Box::new(|t, v| t.add_row(v[0], v[1]))),
        ("scale", vec![vec![2, 3]], Box::new(|t, v| Ok(t.scale(v[0], -1.7)))),
        ("add_scalar", vec![vec![2, 3]], Box::new(|t, v| Ok(t.add_scalar(v[0], 0.3)))),
        ("tanh", vec![vec![2, 3]], Box::new(|t, v| Ok(t.tanh(v[0])))),
        ("sigmoid", vec![vec![2, 3]], Box::new(|t, v| Ok(t.sigmoid(v[0])))),
        ("relu", vec![vec![2, 3]], Box::new(|t, v| {
            let shifted = t.add_scalar(v[0], 0.05);
            Ok(t.relu(shifted))
        })),
        ("softplus", vec![vec![2, 3]], Box::new(|t, v| Ok(t.softplus(v[0])))),
        ("exp", vec![vec![2, 3]], Box::new(|t, v| Ok(t.exp(v[0])))),
        ("log", vec![vec![2, 3]], Box::new(|t, v| {
            let pos = t.exp(v[0]);
            let pos = t.add_scalar(pos, 0.5);
            Ok(t.log(pos))
        })),
        ("softmax_rows", vec![vec![3, 4]], Box::new(|t, v| t.softmax(v[0], 1))),
        ("softmax_cols", vec![vec![3, 4]], Box::new(|t, v| t.softmax(v[0], 0))),
        ("masked_softmax", vec![vec![2, 3]], Box::new(move |t, v| t.masked_softmax(v[0], &keep))),
        ("layer_norm", vec![vec![3, 5], vec![5], vec![5]], Box::new(|t, v| t.layer_norm(v[0], v[1], v[2], 1e-5))),
        ("embedding", vec![vec![6, 3]], Box::new(|t, v| t.embedding(v[0], &[2, 0, 2, 5]))),
        ("dropout", vec![vec![3, 4]], Box::new(|t, v| t.dropout(v[0], 0.3))),
        ("concat_rows", vec![vec![2, 3], vec![1, 3]], Box::new(|t, v| t.concat(&[v[0], v[1]], 0))),
        ("concat_cols", vec![vec![2, 3], vec![2, 2]], Box::new(|t, v| t.concat(&[v[0], v[1]], 1))),
        ("slice_cols", vec![vec![3, 5]], Box::new(|t, v| t.slice_cols(v[0], 1, 3))),
        ("slice_rows", vec![vec![4, 3]], Box::new(|t, v| t.slice_rows(v[0], 1, 2))),
        ("transpose", vec![vec![2, 3]], Box::new(|t, v| t.transpose(v[0]))),
        ("gather_scores", vec![vec![3, 4], vec![5, 4]], Box::new(move |t, v| t.gather_scores(v[0], v[1], &i1))),
        ("gather_mix", vec![vec![3, 3], vec![5, 2]], Box::new(move |t, v| t.gather_mix(v[0], v[1], &i2))),
        ("mean", vec![vec![2, 3]], Box::new(|t, v| {
            let sq = t.mul(v[0], v[0])?;
            Ok(t.mean(sq))
        })),
        ("cross_entropy", vec![vec![3, 5]], Box::new(|t, v| t.cross_entropy(v[0], &[4, 0, 2]))),
        ("cross_entropy_sum", vec![vec![3, 5]], Box::new(|t, v| t.cross_entropy_sum(v[0], &[1, 1, 3]))),
    ]
}

/// Runs [`check_gradients`] on every differentiable tape op, each fed random
/// parameters and reduced to a scalar through a fixed random weighting.
/// Dropout is checked in training mode with a repeated mask.
pub fn check_all_ops(opts: &GradCheckOptions) -> Result<Vec<(&'static str, GradCheckReport)>> {
    let mut out = Vec::new();
    for (k, (name, shapes, build)) in op_cases().into_iter().enumerate() {
        let mut rng = rng_from_seed(opts.sample_seed ^ (k as u64 + 1));
        let mut store = ParamStore::new();
        let ids: Vec<_> = shapes
            .iter()
            .enumerate()
            .map(|(i, s)| store.add(format!("{name}.{i}"), super::Tensor::uniform(s, -1.0, 1.0, &mut rng)))
            .collect();
        let case = GradCheckOptions {
            train: opts.train || name == "dropout",
            ..opts.clone()
        };
        let report = check_gradients(&mut store, &case, |tape| {
            let vars: Vec<Var> = ids.iter().map(|&id| tape.param(id)).collect();
            let y = build(tape, &vars)?;
            if tape.shape(y).iter().product::<usize>() == 1 && tape.shape(y).len() <= 1 {
                Ok(y)
            } else {
                weighted_sum(tape, y, 77 + k as u64)
            }
        })?;
        out.push((name, report));
    }
    Ok(out)
}
