//! Character error rates, error taxonomy, gains, model ranking and the
//! fold/budget experiment harness.

mod experiment;

use std::collections::BTreeMap;

use serde::Serialize;
use thiserror::Error;

use crate::codec::normalize_text;
use crate::dataset::Sample;
use crate::linenet::{LineImage, NetError, Network};

pub use experiment::{
    budget_split, AVG, EXPERIMENT_CSV, SUMMARY_CSV, run_experiment, CellRunner, CellSpec, CorpusData, ExperimentConfig, ExperimentError,
    ExperimentReport, FoldResult, InitKind, ModeSpec, StubRunner, SummaryRow, TrainingRunner,
};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("the default CER is zero, gain is undefined")]
    ZeroBaseline,
    #[error("evaluation set is empty")]
    EmptySet,
    #[error("line {id}: {source}")]
    Line { id: String, source: NetError },
}

/// One step of an alignment from reference to hypothesis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum EditOp {
    Match(char),
    Substitute(char, char),
    Delete(char),
    Insert(char),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct OpCounts {
    pub insertions: usize,
    pub deletions: usize,
    pub substitutions: usize,
}

impl OpCounts {
    pub fn total(&self) -> usize {
        self.insertions + self.deletions + self.substitutions
    }

    fn add(&mut self, other: &OpCounts) {
        self.insertions += other.insertions;
        self.deletions += other.deletions;
        self.substitutions += other.substitutions;
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct WordCounts {
    pub merged_words: usize,
    pub split_words: usize,
}

fn chars(text: &str) -> Vec<char> {
    normalize_text(text).chars().collect()
}

/// Unit-cost Levenshtein distance.
pub fn levenshtein(a: &[char], b: &[char]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, &ca) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, &cb) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(ca != cb);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Edit distance over the NFC forms of both strings.
pub fn distance(reference: &str, hypothesis: &str) -> usize {
    levenshtein(&chars(reference), &chars(hypothesis))
}

/// Distance divided by the reference length. An empty reference counts every
/// hypothesis character as an error against a denominator of one.
pub fn cer(reference: &str, hypothesis: &str) -> f64 {
    let r = chars(reference);
    let h = chars(hypothesis);
    levenshtein(&r, &h) as f64 / r.len().max(1) as f64
}

/// A minimal alignment. On ties the backtrace prefers substitution (or
/// match), then deletion, then insertion.
pub fn edit_ops(reference: &str, hypothesis: &str) -> (OpCounts, Vec<EditOp>) {
    let r = chars(reference);
    let h = chars(hypothesis);
    let (n, m) = (r.len(), h.len());
    let mut d = vec![vec![0usize; m + 1]; n + 1];
    for (i, row) in d.iter_mut().enumerate() {
        row[0] = i;
    }
    for j in 0..=m {
        d[0][j] = j;
    }
    for i in 1..=n {
        for j in 1..=m {
            let sub = d[i - 1][j - 1] + usize::from(r[i - 1] != h[j - 1]);
            d[i][j] = sub.min(d[i - 1][j] + 1).min(d[i][j - 1] + 1);
        }
    }
    let mut ops = Vec::with_capacity(n.max(m));
    let mut counts = OpCounts::default();
    let (mut i, mut j) = (n, m);
    while i > 0 || j > 0 {
        if i > 0 && j > 0 && d[i][j] == d[i - 1][j - 1] + usize::from(r[i - 1] != h[j - 1]) {
            if r[i - 1] == h[j - 1] {
                ops.push(EditOp::Match(r[i - 1]));
            } else {
                ops.push(EditOp::Substitute(r[i - 1], h[j - 1]));
                counts.substitutions += 1;
            }
            i -= 1;
            j -= 1;
        } else if i > 0 && d[i][j] == d[i - 1][j] + 1 {
            ops.push(EditOp::Delete(r[i - 1]));
            counts.deletions += 1;
            i -= 1;
        } else {
            ops.push(EditOp::Insert(h[j - 1]));
            counts.insertions += 1;
            j -= 1;
        }
    }
    ops.reverse();
    (counts, ops)
}

/// Apply an alignment to its reference, giving the hypothesis back.
pub fn replay(ops: &[EditOp]) -> String {
    ops.iter()
        .filter_map(|op| match *op {
            EditOp::Match(c) | EditOp::Substitute(_, c) | EditOp::Insert(c) => Some(c),
            EditOp::Delete(_) => None,
        })
        .collect()
}

fn merge_split(ops: &[EditOp]) -> WordCounts {
    let mut counts = WordCounts::default();
    for op in ops {
        match op {
            EditOp::Delete(' ') => counts.merged_words += 1,
            EditOp::Insert(' ') => counts.split_words += 1,
            _ => {}
        }
    }
    counts
}

/// Reference spaces aligned to deletions are merges, inserted spaces are
/// splits.
pub fn word_merge_split_counts(reference: &str, hypothesis: &str) -> WordCounts {
    merge_split(&edit_ops(reference, hypothesis).1)
}

/// Relative improvement of `cer_pretrained` over `cer_default`, in percent.
pub fn gain(cer_default: f64, cer_pretrained: f64) -> Result<f64, EvalError> {
    if cer_default == 0.0 {
        return Err(EvalError::ZeroBaseline);
    }
    Ok(100.0 * (cer_default - cer_pretrained) / cer_default)
}

/// Integer display form of a percentage, rounding halves up.
pub fn display_gain(gain: f64) -> i64 {
    (gain + 0.5).floor() as i64
}

/// A (reference, hypothesis) confusion; `None` is the empty side of an
/// insertion or deletion.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Confusion {
    pub reference: Option<char>,
    pub hypothesis: Option<char>,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub cer: f64,
    pub char_counts: OpCounts,
    pub top_confusions: Vec<Confusion>,
    pub word_counts: WordCounts,
    pub n_lines: usize,
    pub n_ref_chars: usize,
}

pub const TOP_CONFUSIONS: usize = 10;

impl EvalReport {
    /// Aggregate over (reference, hypothesis) pairs: total distance over
    /// total reference length.
    pub fn from_pairs<R: AsRef<str>, H: AsRef<str>>(pairs: &[(R, H)]) -> EvalReport {
        let mut counts = OpCounts::default();
        let mut words = WordCounts::default();
        let mut confusions: BTreeMap<(Option<char>, Option<char>), usize> = BTreeMap::new();
        let mut n_ref_chars = 0;
        for (r, h) in pairs {
            let (c, ops) = edit_ops(r.as_ref(), h.as_ref());
            counts.add(&c);
            let w = merge_split(&ops);
            words.merged_words += w.merged_words;
            words.split_words += w.split_words;
            n_ref_chars += chars(r.as_ref()).len();
            for op in ops {
                let key = match op {
                    EditOp::Match(_) => continue,
                    EditOp::Substitute(a, b) => (Some(a), Some(b)),
                    EditOp::Delete(a) => (Some(a), None),
                    EditOp::Insert(b) => (None, Some(b)),
                };
                *confusions.entry(key).or_default() += 1;
            }
        }
        let mut top: Vec<Confusion> = confusions
            .into_iter()
            .map(|((reference, hypothesis), count)| Confusion {
                reference,
                hypothesis,
                count,
            })
            .collect();
        // stable: equal counts keep key order
        top.sort_by(|a, b| b.count.cmp(&a.count));
        top.truncate(TOP_CONFUSIONS);
        EvalReport {
            cer: counts.total() as f64 / n_ref_chars.max(1) as f64,
            char_counts: counts,
            top_confusions: top,
            word_counts: words,
            n_lines: pairs.len(),
            n_ref_chars,
        }
    }

    /// Aligned plain-text rendering.
    pub fn to_text(&self) -> String {
        let show = |c: Option<char>| match c {
            None => "∅".to_string(),
            Some(' ') => "␣".to_string(),
            Some(c) => c.to_string(),
        };
        let mut out = String::new();
        let rows = [
            ("CER (%)", format!("{:.2}", self.cer * 100.0)),
            ("lines", self.n_lines.to_string()),
            ("reference chars", self.n_ref_chars.to_string()),
            ("substitutions", self.char_counts.substitutions.to_string()),
            ("deletions", self.char_counts.deletions.to_string()),
            ("insertions", self.char_counts.insertions.to_string()),
            ("merged words", self.word_counts.merged_words.to_string()),
            ("split words", self.word_counts.split_words.to_string()),
        ];
        for (k, v) in rows {
            out.push_str(&format!("{k:<16} {v:>10}\n"));
        }
        if !self.top_confusions.is_empty() {
            out.push_str("top confusions (reference -> hypothesis):\n");
            for c in &self.top_confusions {
                out.push_str(&format!(
                    "  {:>3} -> {:<3} {:>8}\n",
                    show(c.reference),
                    show(c.hypothesis),
                    c.count
                ));
            }
        }
        out
    }
}

/// Anything that turns a line image into text.
pub trait Recognizer {
    fn recognize(&self, line: &LineImage) -> Result<String, NetError>;
}

impl Recognizer for Network {
    fn recognize(&self, line: &LineImage) -> Result<String, NetError> {
        let trace = self.forward(line)?;
        Ok(crate::ctc::best_path_decode(trace.posteriors.view(), self.codec()))
    }
}

impl<R: Recognizer + ?Sized> Recognizer for &R {
    fn recognize(&self, line: &LineImage) -> Result<String, NetError> {
        (**self).recognize(line)
    }
}

/// Recognize every line and aggregate the metrics.
pub fn evaluate_model<R: Recognizer + ?Sized>(model: &R, eval_set: &[Sample]) -> Result<EvalReport, EvalError> {
    if eval_set.is_empty() {
        return Err(EvalError::EmptySet);
    }
    let pairs = eval_set
        .iter()
        .map(|s| {
            let hyp = model.recognize(&s.image).map_err(|source| EvalError::Line {
                id: s.id.clone(),
                source,
            })?;
            Ok((s.text.as_str(), hyp))
        })
        .collect::<Result<Vec<_>, EvalError>>()?;
    Ok(EvalReport::from_pairs(&pairs))
}

/// Micro-averaged CER only, without building the confusion table.
pub fn corpus_cer<R: Recognizer + ?Sized>(model: &R, samples: &[Sample]) -> Result<f64, EvalError> {
    if samples.is_empty() {
        return Err(EvalError::EmptySet);
    }
    let mut dist = 0;
    let mut len = 0;
    for s in samples {
        let hyp = model.recognize(&s.image).map_err(|source| EvalError::Line {
            id: s.id.clone(),
            source,
        })?;
        dist += distance(&s.text, &hyp);
        len += chars(&s.text).len();
    }
    Ok(dist as f64 / len.max(1) as f64)
}

/// Candidate indices ordered by raw CER on `sample`, ascending; ties keep
/// input order.
pub fn rank_models<R: Recognizer>(candidates: &[R], sample: &[Sample]) -> Result<Vec<(usize, f64)>, EvalError> {
    let mut ranked = candidates
        .iter()
        .enumerate()
        .map(|(i, m)| corpus_cer(m, sample).map(|c| (i, c)))
        .collect::<Result<Vec<_>, _>>()?;
    ranked.sort_by(|a, b| a.1.total_cmp(&b.1));
    Ok(ranked)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Full-matrix DP kept deliberately naive.
    fn dp_oracle(a: &[char], b: &[char]) -> usize {
        let mut d = vec![vec![0usize; b.len() + 1]; a.len() + 1];
        for i in 0..=a.len() {
            for j in 0..=b.len() {
                d[i][j] = if i == 0 {
                    j
                } else if j == 0 {
                    i
                } else {
                    let c = if a[i - 1] == b[j - 1] { 0 } else { 1 };
                    (d[i - 1][j - 1] + c).min(d[i - 1][j] + 1).min(d[i][j - 1] + 1)
                };
            }
        }
        d[a.len()][b.len()]
    }

    #[test]
    fn cer_examples() {
        assert_eq!(cer("abc", "abc"), 0.0);
        assert_eq!(cer("abc", ""), 1.0);
        let (k, s): (Vec<char>, Vec<char>) = ("kitten".chars().collect(), "sitting".chars().collect());
        assert_eq!(dp_oracle(&k, &s), 3);
        assert_eq!(cer("kitten", "sitting"), 0.5);
        assert_eq!(cer("", "ab"), 2.0);
    }

    #[test]
    fn edit_ops_examples() {
        let (c, ops) = edit_ops("ec", "cc");
        assert_eq!(c.substitutions, 1);
        assert_eq!(c.total(), 1);
        assert_eq!(ops[0], EditOp::Substitute('e', 'c'));
        assert_eq!(edit_ops("ab", "ab").0.total(), 0);
        // equal-cost alternatives resolve to substitution first
        let (_, ops) = edit_ops("ab", "ba");
        assert_eq!(ops, vec![EditOp::Substitute('a', 'b'), EditOp::Substitute('b', 'a')]);
    }

    #[test]
    fn merge_and_split() {
        assert_eq!(word_merge_split_counts("a b", "ab").merged_words, 1);
        assert_eq!(word_merge_split_counts("ab", "a b").split_words, 1);
        // ref "in the cat" read as "inthe ca t": the first space is dropped,
        // a space is inserted inside "cat"
        let w = word_merge_split_counts("in the cat", "inthe ca t");
        assert_eq!(
            w,
            WordCounts {
                merged_words: 1,
                split_words: 1
            }
        );
    }

    #[test]
    fn gain_examples() {
        assert_eq!(display_gain(gain(8.21, 5.35).unwrap()), 35);
        assert_eq!(display_gain(gain(6.19, 4.79).unwrap()), 23);
        assert_eq!(gain(3.0, 3.0).unwrap(), 0.0);
        assert!(matches!(gain(0.0, 1.0), Err(EvalError::ZeroBaseline)));
        assert_eq!(display_gain(2.5), 3);
        assert_eq!(display_gain(-2.5), -2);
    }

    #[test]
    fn cer_is_nfc_invariant() {
        assert_eq!(cer("caf\u{e9}", "cafe\u{301}"), 0.0);
        assert_eq!(cer("e\u{301}", "é"), 0.0);
    }

    #[test]
    fn report_aggregates_micro() {
        let r = EvalReport::from_pairs(&[("abcd", "abcd"), ("ab", "")]);
        assert_eq!(r.n_ref_chars, 6);
        assert!((r.cer - 2.0 / 6.0).abs() < 1e-15);
        assert_eq!(r.char_counts.deletions, 2);
        assert_eq!(r.top_confusions.len(), 2);
        assert!(r.to_text().contains("33.33"));
    }

    struct Fixed(&'static str);
    impl Recognizer for Fixed {
        fn recognize(&self, _: &LineImage) -> Result<String, NetError> {
            Ok(self.0.to_string())
        }
    }

    fn samples(texts: &[&str]) -> Vec<Sample> {
        texts
            .iter()
            .enumerate()
            .map(|(i, t)| Sample {
                id: i.to_string(),
                image: LineImage::new(ndarray::Array2::zeros((2, 2))).unwrap(),
                text: t.to_string(),
            })
            .collect()
    }

    #[test]
    fn stub_recognizers() {
        let set = samples(&["abc"]);
        assert_eq!(evaluate_model(&Fixed("abc"), &set).unwrap().cer, 0.0);
        assert_eq!(evaluate_model(&Fixed(""), &set).unwrap().cer, 1.0);
        assert!(matches!(evaluate_model(&Fixed(""), &[]), Err(EvalError::EmptySet)));
    }

    #[test]
    fn ranking_is_stable() {
        let set = samples(&["abc"]);
        let models = [Fixed(""), Fixed("abc"), Fixed("abd"), Fixed("abc")];
        let order: Vec<usize> = rank_models(&models, &set).unwrap().into_iter().map(|r| r.0).collect();
        assert_eq!(order, vec![1, 3, 2, 0]);
        assert_eq!(rank_models(&models[..1], &set).unwrap()[0].0, 0);
    }

    proptest! {
        #[test]
        fn ops_match_distance(a in "[abc ]{0,12}", b in "[abc ]{0,12}") {
            let (counts, ops) = edit_ops(&a, &b);
            let ra: Vec<char> = a.chars().collect();
            let rb: Vec<char> = b.chars().collect();
            prop_assert_eq!(counts.total(), dp_oracle(&ra, &rb));
            prop_assert_eq!(counts.total(), distance(&a, &b));
            prop_assert_eq!(replay(&ops), b);
        }
    }
}
