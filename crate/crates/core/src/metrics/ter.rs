use crate::error::{Error, Result};

/// Longest block a single shift may move.
pub const MAX_SHIFT_LEN: usize = 10;

/// Edit count of one hypothesis against its best reference.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct TerStats {
    pub edits: f64,
    pub ref_len: f64,
}

impl TerStats {
    pub fn add(&mut self, o: &Self) {
        self.edits += o.edits;
        self.ref_len += o.ref_len;
    }

    pub fn score(&self) -> f64 {
        if self.ref_len == 0.0 {
            if self.edits == 0.0 { 0.0 } else { 100.0 }
        } else {
            100.0 * self.edits / self.ref_len
        }
    }
}

/// Levenshtein distance with unit insert/delete/substitute costs.
pub fn edit_distance<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, x) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(x != y);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Moves `hyp[start..start + len]` so that it begins at index `dest` of the
/// sequence with the block removed.
pub fn apply_shift<T: Clone>(hyp: &[T], start: usize, len: usize, dest: usize) -> Vec<T> {
    let block = &hyp[start..start + len];
    let mut rest: Vec<T> = hyp[..start].to_vec();
    rest.extend_from_slice(&hyp[start + len..]);
    let mut out = Vec::with_capacity(hyp.len());
    out.extend_from_slice(&rest[..dest]);
    out.extend_from_slice(block);
    out.extend_from_slice(&rest[dest..]);
    out
}

fn occurs_in<T: PartialEq>(block: &[T], reference: &[T]) -> bool {
    reference.windows(block.len()).any(|w| w == block)
}

/// Number of edits (shifts + Levenshtein edits) turning `hyp` into `reference`.
///
/// Shifts are chosen greedily: each round takes the block move that lowers the
/// total edit count the most (first found on ties), and stops when no move
/// helps. Only blocks of at most [`MAX_SHIFT_LEN`] tokens that also occur in
/// the reference are moved.
pub fn ter_edits<T: PartialEq + Clone>(hyp: &[T], reference: &[T], allow_shifts: bool) -> usize {
    let mut cur = hyp.to_vec();
    let mut shifts = 0;
    let mut dist = edit_distance(&cur, reference);
    while allow_shifts && dist > 1 {
        let mut best: Option<(usize, Vec<T>)> = None;
        for start in 0..cur.len() {
            for len in 1..=MAX_SHIFT_LEN.min(cur.len() - start) {
                if !occurs_in(&cur[start..start + len], reference) {
                    break;
                }
                for dest in 0..=cur.len() - len {
                    if dest == start {
                        continue;
                    }
                    let moved = apply_shift(&cur, start, len, dest);
                    let d = edit_distance(&moved, reference);
                    if d + 1 < dist && best.as_ref().is_none_or(|(bd, _)| d < *bd) {
                        best = Some((d, moved));
                    }
                }
            }
        }
        match best {
            Some((d, moved)) => {
                cur = moved;
                dist = d;
                shifts += 1;
            }
            None => break,
        }
    }
    shifts + dist
}

/// Sentence statistics against the closest of several references; the
/// reference length is the average over references.
pub fn ter_stats<S: AsRef<str>, R: AsRef<[S]>>(hyp: &[S], refs: &[R], allow_shifts: bool) -> Result<TerStats> {
    if refs.is_empty() || refs.iter().all(|r| r.as_ref().is_empty()) {
        return Err(Error::contract("TER needs a non-empty reference"));
    }
    let h: Vec<&str> = hyp.iter().map(AsRef::as_ref).collect();
    let edits = refs
        .iter()
        .map(|r| {
            let r: Vec<&str> = r.as_ref().iter().map(AsRef::as_ref).collect();
            ter_edits(&h, &r, allow_shifts)
        })
        .min()
        .unwrap_or(0);
    let ref_len = refs.iter().map(|r| r.as_ref().len()).sum::<usize>() as f64 / refs.len() as f64;
    Ok(TerStats {
        edits: edits as f64,
        ref_len,
    })
}

/// Sentence TER in percent.
pub fn ter<S: AsRef<str>>(hyp: &[S], reference: &[S], allow_shifts: bool) -> Result<f64> {
    Ok(ter_stats(hyp, &[reference], allow_shifts)?.score())
}

/// Corpus TER: total edits over total (average) reference length.
pub fn corpus_ter<S, R, RS>(hyps: &[R], refs: &[RS], allow_shifts: bool) -> Result<f64>
where
    S: AsRef<str>,
    R: AsRef<[S]>,
    RS: AsRef<[R]>,
{
    if hyps.len() != refs.len() {
        return Err(Error::Contract(format!(
            "{} hypotheses but {} reference sets",
            hyps.len(),
            refs.len()
        )));
    }
    let mut total = TerStats::default();
    for (h, r) in hyps.iter().zip(refs) {
        total.add(&ter_stats(h.as_ref(), r.as_ref(), allow_shifts)?);
    }
    Ok(total.score())
}
