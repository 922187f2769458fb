//! BLEU, METEOR and TER over whitespace-tokenized sentences.

mod bleu;
mod meteor;
mod ter;

use std::fmt::Write as _;

pub use bleu::{bleu, corpus_stats as bleu_corpus_stats, sentence_bleu, BleuOptions, BleuStats};
pub use meteor::{
    align as meteor_align, corpus_meteor, count_chunks, meteor, meteor_stats, suffix_stem,
    MeteorStats, SynonymTable,
};
pub use ter::{
    apply_shift, corpus_ter, edit_distance, ter, ter_edits, ter_stats, TerStats, MAX_SHIFT_LEN,
};

use crate::error::{Error, Result};

#[derive(Clone, Debug, Default)]
pub struct MetricOptions {
    pub bleu: BleuOptions,
    pub synonyms: SynonymTable,
    pub ter_shifts: bool,
}

impl MetricOptions {
    pub fn new() -> Self {
        Self {
            ter_shifts: true,
            ..Default::default()
        }
    }
}

/// Corpus-level scores, each on a 0–100 scale (TER may exceed 100).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricReport {
    pub bleu: f64,
    pub meteor: f64,
    pub ter: f64,
    pub sentence_count: usize,
}

impl MetricReport {
    /// `name<TAB>value` lines.
    pub fn to_tsv(&self) -> String {
        format!(
            "bleu\t{:.6}\nmeteor\t{:.6}\nter\t{:.6}\nsentences\t{}\n",
            self.bleu, self.meteor, self.ter, self.sentence_count
        )
    }

    pub fn parse_tsv(text: &str) -> Result<Self> {
        let mut r = MetricReport {
            bleu: f64::NAN,
            meteor: f64::NAN,
            ter: f64::NAN,
            sentence_count: 0,
        };
        let mut offset = 0;
        for line in text.split_inclusive('\n') {
            let body = line.trim_end();
            if let Some((name, value)) = body.split_once('\t') {
                let bad = |m: String| Error::Parse { offset, message: m };
                match name {
                    "bleu" | "meteor" | "ter" => {
                        let v: f64 = value.parse().map_err(|e| bad(format!("{name}: {e}")))?;
                        match name {
                            "bleu" => r.bleu = v,
                            "meteor" => r.meteor = v,
                            _ => r.ter = v,
                        }
                    }
                    "sentences" => {
                        r.sentence_count = value.parse().map_err(|e| bad(format!("{name}: {e}")))?
                    }
                    _ => {}
                }
            }
            offset += line.len();
        }
        Ok(r)
    }
}

/// Scores a corpus; `refs[i]` is the reference set of `hyps[i]`.
pub fn evaluate<S, R, RS>(hyps: &[R], refs: &[RS], opts: &MetricOptions) -> Result<MetricReport>
where
    S: AsRef<str>,
    R: AsRef<[S]>,
    RS: AsRef<[R]>,
{
    Ok(MetricReport {
        bleu: bleu(hyps, refs, opts.bleu)?,
        meteor: corpus_meteor(hyps, refs, &opts.synonyms)?,
        ter: corpus_ter(hyps, refs, opts.ter_shifts)?,
        sentence_count: hyps.len(),
    })
}

/// Per-sentence `index<TAB>bleu<TAB>meteor<TAB>ter` rows with a header;
/// sentence BLEU is smoothed.
pub fn per_sentence_tsv<S, R, RS>(hyps: &[R], refs: &[RS], opts: &MetricOptions) -> Result<String>
where
    S: AsRef<str>,
    R: AsRef<[S]>,
    RS: AsRef<[R]>,
{
    let mut out = String::from("index\tbleu\tmeteor\tter\n");
    let smooth = BleuOptions {
        smooth: true,
        ..opts.bleu
    };
    for (i, (h, r)) in hyps.iter().zip(refs).enumerate() {
        let (h, r) = (h.as_ref(), r.as_ref());
        let b = sentence_bleu(h, r, smooth)?;
        let m = meteor(h, r, &opts.synonyms);
        let t = ter_stats(h, r, opts.ter_shifts)?.score();
        writeln!(out, "{i}\t{b:.6}\t{m:.6}\t{t:.6}").expect("writing to a String");
    }
    Ok(out)
}
