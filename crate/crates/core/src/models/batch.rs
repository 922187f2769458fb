//! Row layouts for several sentences stacked into one matrix, and the key
//! indexes that keep them from attending to each other.

use std::rc::Rc;

use crate::error::Result;
use crate::nn::{LstmCell, LstmState};
use crate::semantics::PAD;
use crate::tensor::{KeyIndex, Tape, Tensor, Var};

/// Sentence-major stacking: sentence `b` owns rows `offset(b)..offset(b) + len(b)`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Layout {
    lens: Vec<usize>,
    offsets: Vec<usize>,
    total: usize,
}

impl Layout {
    pub fn new(lens: Vec<usize>) -> Self {
        let mut offsets = Vec::with_capacity(lens.len());
        let mut total = 0;
        for &l in &lens {
            offsets.push(total);
            total += l;
        }
        Self {
            lens,
            offsets,
            total,
        }
    }

    pub fn batch(&self) -> usize {
        self.lens.len()
    }

    pub fn lens(&self) -> &[usize] {
        &self.lens
    }

    pub fn offset(&self, b: usize) -> usize {
        self.offsets[b]
    }

    pub fn total(&self) -> usize {
        self.total
    }

    pub fn max_len(&self) -> usize {
        self.lens.iter().copied().max().unwrap_or(0)
    }

    /// Owning sentence of every stacked row.
    pub fn owners(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.total);
        for (b, &l) in self.lens.iter().enumerate() {
            out.extend(std::iter::repeat_n(b, l));
        }
        out
    }

    /// Position inside its own sentence of every stacked row.
    pub fn positions(&self) -> Vec<usize> {
        self.lens.iter().flat_map(|&l| 0..l).collect()
    }

    /// For every row of `q`, the rows of `k` in the same sentence (and only
    /// earlier-or-equal positions when `causal`). `None` when nothing is hidden.
    pub fn key_index(q: &Layout, k: &Layout, causal: bool) -> Option<Rc<KeyIndex>> {
        if q.batch() == 1 && !causal {
            return None;
        }
        let lists = q.owners().into_iter().zip(q.positions()).map(|(b, i)| {
            let n = if causal { (i + 1).min(k.lens[b]) } else { k.lens[b] };
            k.offsets[b]..k.offsets[b] + n
        });
        Some(Rc::new(KeyIndex::new(lists).expect("sentences are non-empty")))
    }

    /// One row per sentence listing its stacked rows.
    pub fn sentence_index(&self) -> Rc<KeyIndex> {
        let lists = (0..self.batch()).map(|b| self.offsets[b]..self.offsets[b] + self.lens[b]);
        Rc::new(KeyIndex::new(lists).expect("sentences are non-empty"))
    }

    /// Time-major ids: step `t` holds `seqs[b][t]` for every `b`, or [`PAD`]
    /// past a sequence's end.
    pub fn time_major(seqs: &[&[usize]], steps: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(steps * seqs.len());
        for t in 0..steps {
            out.extend(seqs.iter().map(|s| s.get(t).copied().unwrap_or(PAD)));
        }
        out
    }
}

/// Keys of each sentence among step-major rows after `steps` steps; `None`
/// for a single sentence.
pub fn step_index(batch: usize, steps: usize) -> Option<Rc<KeyIndex>> {
    if batch == 1 {
        return None;
    }
    let lists = (0..batch).map(|b| (0..steps).map(move |t| t * batch + b));
    Some(Rc::new(KeyIndex::new(lists).expect("at least one step")))
}

/// Per time step, a `batch × dim` 0/1 constant marking rows still inside
/// their sequence, or `None` when every row is.
pub fn activity_masks(tape: &mut Tape<'_>, lens: &[usize], dim: usize) -> Vec<Option<Var>> {
    let steps = lens.iter().copied().max().unwrap_or(0);
    (0..steps)
        .map(|t| {
            if lens.iter().all(|&l| t < l) {
                return None;
            }
            let mut m = Tensor::zeros(&[lens.len(), dim]);
            for (b, &l) in lens.iter().enumerate() {
                if t < l {
                    m.data_mut()[b * dim..(b + 1) * dim].fill(1.0);
                }
            }
            Some(tape.constant(m))
        })
        .collect()
}

/// `old + mask ⊙ (new - old)`: rows outside their sequence keep the old value.
fn hold(tape: &mut Tape<'_>, new: Var, old: Var, mask: Option<Var>) -> Result<Var> {
    match mask {
        None => Ok(new),
        Some(m) => {
            let d = tape.sub(new, old)?;
            let d = tape.mul(d, m)?;
            tape.add(old, d)
        }
    }
}

/// Runs `cell` over time-major inputs `xs` (`steps·batch × input_dim`).
///
/// When `residual` is given (time-major, `steps·batch × hidden`), its step
/// rows are added to each new hidden state before it is emitted and fed back.
/// Rows past their sequence (per `active`) carry their state unchanged, so
/// the final state is each sentence's state at its own last step.
pub fn run_cell(
    tape: &mut Tape<'_>,
    cell: &LstmCell,
    xs: Var,
    batch: usize,
    active: &[Option<Var>],
    init: LstmState,
    residual: Option<Var>,
) -> Result<(Vec<Var>, LstmState)> {
    let steps = tape.shape(xs)[0] / batch;
    let projected = cell.project_inputs(tape, xs)?;
    let mut state = init;
    let mut outs = Vec::with_capacity(steps);
    for t in 0..steps {
        let xw = tape.slice_rows(projected, t * batch, batch)?;
        let next = cell.step_projected(tape, xw, state)?;
        let h = match residual {
            Some(r) => {
                let w = tape.slice_rows(r, t * batch, batch)?;
                tape.add(next.h, w)?
            }
            None => next.h,
        };
        let mask = active.get(t).copied().flatten();
        state = LstmState {
            h: hold(tape, h, state.h, mask)?,
            c: hold(tape, next.c, state.c, mask)?,
        };
        outs.push(h);
    }
    Ok((outs, state))
}

/// Argmax of each row, lowest index on ties.
pub fn argmax_rows(t: &Tensor) -> Vec<usize> {
    (0..t.rows())
        .map(|r| {
            let row = t.row(r);
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}
