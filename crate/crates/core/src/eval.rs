//! Exact-span micro-averaged precision, recall and F1 (conlleval semantics).

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::corpus::{spans_from_bio, LabeledCorpus, Span};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SpanCounts {
    pub gold: usize,
    pub predicted: usize,
    pub correct: usize,
}

impl SpanCounts {
    pub fn precision(&self) -> f64 {
        ratio(self.correct, self.predicted)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.correct, self.gold)
    }

    pub fn f1(&self) -> f64 {
        let (p, r) = (self.precision(), self.recall());
        if p + r > 0.0 {
            2.0 * p * r / (p + r)
        } else {
            0.0
        }
    }
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub micro: SpanCounts,
    pub per_label: BTreeMap<String, SpanCounts>,
}

impl EvalReport {
    pub fn precision(&self) -> f64 {
        self.micro.precision()
    }

    pub fn recall(&self) -> f64 {
        self.micro.recall()
    }

    pub fn f1(&self) -> f64 {
        self.micro.f1()
    }

    fn add_sentence(&mut self, gold: &[Span], predicted: &[Span]) {
        let g: BTreeSet<&Span> = gold.iter().collect();
        let p: BTreeSet<&Span> = predicted.iter().collect();
        for s in &g {
            self.micro.gold += 1;
            self.per_label.entry(s.label.clone()).or_default().gold += 1;
        }
        for s in &p {
            self.micro.predicted += 1;
            let e = self.per_label.entry(s.label.clone()).or_default();
            e.predicted += 1;
            if g.contains(s) {
                e.correct += 1;
                self.micro.correct += 1;
            }
        }
    }
}

/// Key-value report lines.
impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let m = &self.micro;
        writeln!(f, "precision\t{:.4}", m.precision())?;
        writeln!(f, "recall\t{:.4}", m.recall())?;
        writeln!(f, "f1\t{:.4}", m.f1())?;
        writeln!(f, "gold\t{}\npredicted\t{}\ncorrect\t{}", m.gold, m.predicted, m.correct)?;
        for (label, c) in &self.per_label {
            writeln!(
                f,
                "{label}\tp={:.4}\tr={:.4}\tf1={:.4}\tgold={}\tpredicted={}\tcorrect={}",
                c.precision(),
                c.recall(),
                c.f1(),
                c.gold,
                c.predicted,
                c.correct
            )?;
        }
        Ok(())
    }
}

/// Score tag sequences against gold sequences.
pub fn span_f1_tags<G: AsRef<str>, P: AsRef<str>>(gold: &[Vec<G>], predicted: &[Vec<P>]) -> Result<EvalReport> {
    if gold.len() != predicted.len() {
        return Err(Error::input(format!(
            "{} predicted sentences for {} gold sentences",
            predicted.len(),
            gold.len()
        )));
    }
    let mut report = EvalReport::default();
    for (i, (g, p)) in gold.iter().zip(predicted).enumerate() {
        if g.len() != p.len() {
            return Err(Error::input(format!(
                "sentence {i}: {} predicted tags for {} tokens",
                p.len(),
                g.len()
            )));
        }
        report.add_sentence(&spans_from_bio(g), &spans_from_bio(p));
    }
    Ok(report)
}

pub fn span_f1<P: AsRef<str>>(gold: &LabeledCorpus, predicted: &[Vec<P>]) -> Result<EvalReport> {
    span_f1_tags(&gold.tags(), predicted)
}

/// Hand-computed fixtures: `(gold, predicted, precision, recall, f1)`.
pub fn fixtures() -> Vec<(Vec<Vec<&'static str>>, Vec<Vec<&'static str>>, f64, f64, f64)> {
    vec![
        // identical
        (
            vec![vec!["B-PER", "I-PER", "O", "B-LOC"]],
            vec![vec!["B-PER", "I-PER", "O", "B-LOC"]],
            1.0,
            1.0,
            1.0,
        ),
        // boundary too short
        (vec![vec!["B-PER", "I-PER"]], vec![vec!["B-PER", "O"]], 0.0, 0.0, 0.0),
        // 4 gold, 3 predicted, 2 correct
        (
            vec![
                vec!["B-PER", "O", "B-LOC", "O"],
                vec!["B-ORG", "I-ORG", "O", "B-PER"],
            ],
            vec![
                vec!["B-PER", "O", "B-ORG", "O"],
                vec!["B-ORG", "I-ORG", "O", "O"],
            ],
            2.0 / 3.0,
            0.5,
            4.0 / 7.0,
        ),
        // orphan I in prediction repaired to a span start
        (vec![vec!["O", "B-LOC", "I-LOC"]], vec![vec!["O", "I-LOC", "I-LOC"]], 1.0, 1.0, 1.0),
        // orphan I followed by B gives two spans
        (vec![vec!["B-LOC", "B-LOC"]], vec![vec!["I-LOC", "B-LOC"]], 1.0, 1.0, 1.0),
        // label mismatch
        (vec![vec!["B-PER"]], vec![vec!["B-LOC"]], 0.0, 0.0, 0.0),
        // no entities anywhere
        (vec![vec!["O", "O"]], vec![vec!["O", "O"]], 0.0, 0.0, 0.0),
        // nothing predicted
        (vec![vec!["B-PER", "O"]], vec![vec!["O", "O"]], 0.0, 0.0, 0.0),
        // one spurious prediction next to a correct one
        (vec![vec!["B-PER", "O", "O"]], vec![vec!["B-PER", "O", "B-LOC"]], 0.5, 1.0, 2.0 / 3.0),
        // I of a different type breaks the span
        (vec![vec!["B-PER", "I-PER"]], vec![vec!["B-PER", "I-LOC"]], 0.0, 0.0, 0.0),
        // span too long
        (vec![vec!["B-ORG", "O"]], vec![vec!["B-ORG", "I-ORG"]], 0.0, 0.0, 0.0),
        // micro averaging across sentences: 3 gold, 2 predicted, 2 correct
        (
            vec![vec!["B-PER"], vec!["B-LOC", "I-LOC"], vec!["O", "B-ORG"]],
            vec![vec!["B-PER"], vec!["B-LOC", "I-LOC"], vec!["O", "O"]],
            1.0,
            2.0 / 3.0,
            0.8,
        ),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixtures_match_hand_computation() {
        let cases = fixtures();
        assert_eq!(cases.len(), 12);
        for (i, (g, p, prec, rec, f1)) in cases.into_iter().enumerate() {
            let r = span_f1_tags(&g, &p).unwrap();
            assert!((r.precision() - prec).abs() < 1e-12, "case {i}");
            assert!((r.recall() - rec).abs() < 1e-12, "case {i}");
            assert!((r.f1() - f1).abs() < 1e-12, "case {i}: {}", r.f1());
        }
    }

    #[test]
    fn swapping_sides_swaps_precision_and_recall() {
        for (g, p, ..) in fixtures() {
            let a = span_f1_tags(&g, &p).unwrap();
            let b = span_f1_tags(&p, &g).unwrap();
            assert_eq!(a.precision(), b.recall());
            assert_eq!(a.recall(), b.precision());
            assert!((a.f1() - b.f1()).abs() < 1e-15);
        }
    }

    #[test]
    fn per_label_sums_to_micro() {
        let (g, p, ..) = fixtures().swap_remove(2);
        let r = span_f1_tags(&g, &p).unwrap();
        let correct: usize = r.per_label.values().map(|c| c.correct).sum();
        assert_eq!(correct, r.micro.correct);
        assert_eq!(r.per_label["ORG"].correct, 1);
        assert_eq!(r.per_label["LOC"].predicted, 0);
    }

    #[test]
    fn length_mismatch_is_input_error() {
        let err = span_f1_tags(&[vec!["O", "O"]], &[vec!["O"]]).unwrap_err();
        assert!(matches!(err, Error::Input(_)));
        assert!(span_f1_tags::<&str, &str>(&[vec!["O"]], &[]).is_err());
    }

    #[test]
    fn report_lines() {
        let r = span_f1_tags(&[vec!["B-PER"]], &[vec!["B-PER"]]).unwrap();
        let text = r.to_string();
        assert!(text.contains("f1\t1.0000"));
        assert!(text.contains("PER\tp=1.0000"));
    }
}
