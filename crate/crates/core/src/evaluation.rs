//! Span decoding, term-polarity pairs and the five scores: aspect F1,
//! opinion F1, sentiment accuracy and macro-F1 on correctly extracted
//! aspects, and the overall pair F1.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::corpus::{AeTag, Polarity, Sentence};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SpanKind {
    Aspect,
    Opinion,
}

/// Half-open token range `[start, end)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
    pub kind: SpanKind,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TermPolarityPair {
    pub span: Span,
    pub polarity: Polarity,
}

/// How an inside tag without an open span of its kind is read.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecodeMode {
    /// The orphan opens a new span.
    #[default]
    Lenient,
    /// The orphan is treated as `O`.
    Strict,
}

fn kind_of(tag: AeTag) -> Option<(SpanKind, bool)> {
    match tag {
        AeTag::BA => Some((SpanKind::Aspect, true)),
        AeTag::IA => Some((SpanKind::Aspect, false)),
        AeTag::BP => Some((SpanKind::Opinion, true)),
        AeTag::IP => Some((SpanKind::Opinion, false)),
        AeTag::O => None,
    }
}

/// Maximal BIO runs. A begin tag always opens a new span.
pub fn decode_spans(tags: &[AeTag], mode: DecodeMode) -> Vec<Span> {
    let mut spans = Vec::new();
    let mut open: Option<(usize, SpanKind)> = None;
    for (i, &tag) in tags.iter().enumerate() {
        match kind_of(tag) {
            None => {
                if let Some((s, k)) = open.take() {
                    spans.push(Span { start: s, end: i, kind: k });
                }
            }
            Some((kind, begin)) => {
                let continues = !begin && matches!(open, Some((_, k)) if k == kind);
                if continues {
                    continue;
                }
                if let Some((s, k)) = open.take() {
                    spans.push(Span { start: s, end: i, kind: k });
                }
                if begin || mode == DecodeMode::Lenient {
                    open = Some((i, kind));
                }
            }
        }
    }
    if let Some((s, k)) = open {
        spans.push(Span {
            start: s,
            end: tags.len(),
            kind: k,
        });
    }
    spans
}

/// Tags a sentence of length `n` with non-overlapping spans.
pub fn encode_spans(spans: &[Span], n: usize) -> Vec<AeTag> {
    let mut tags = vec![AeTag::O; n];
    for s in spans {
        let (b, i) = match s.kind {
            SpanKind::Aspect => (AeTag::BA, AeTag::IA),
            SpanKind::Opinion => (AeTag::BP, AeTag::IP),
        };
        tags[s.start] = b;
        for t in &mut tags[s.start + 1..s.end] {
            *t = i;
        }
    }
    tags
}

/// One pair per aspect span, carrying the polarity of the span's first
/// token. Spans whose first token has no polarity are skipped.
pub fn extract_pairs(ae_tags: &[AeTag], as_tags: &[Option<Polarity>], mode: DecodeMode) -> Vec<TermPolarityPair> {
    decode_spans(ae_tags, mode)
        .into_iter()
        .filter(|s| s.kind == SpanKind::Aspect)
        .filter_map(|span| {
            as_tags
                .get(span.start)
                .copied()
                .flatten()
                .map(|polarity| TermPolarityPair { span, polarity })
        })
        .collect()
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub tp: usize,
    pub predicted: usize,
    pub gold: usize,
}

impl Counts {
    pub fn precision(&self) -> f64 {
        match (self.predicted, self.gold) {
            (0, 0) => 1.0,
            (0, _) => 0.0,
            (p, _) => self.tp as f64 / p as f64,
        }
    }

    pub fn recall(&self) -> f64 {
        match (self.predicted, self.gold) {
            (0, 0) => 1.0,
            (_, 0) => 0.0,
            (_, g) => self.tp as f64 / g as f64,
        }
    }

    /// Harmonic mean of precision and recall, written as `2·tp / (pred + gold)`.
    /// Empty prediction against empty gold scores 1.
    pub fn f1(&self) -> f64 {
        let denom = self.predicted + self.gold;
        if denom == 0 {
            1.0
        } else {
            2.0 * self.tp as f64 / denom as f64
        }
    }

    fn add(&mut self, other: Counts) {
        self.tp += other.tp;
        self.predicted += other.predicted;
        self.gold += other.gold;
    }
}

fn count_matches<T: Ord + Copy>(pred: &[T], gold: &[T]) -> Counts {
    let p: BTreeSet<T> = pred.iter().copied().collect();
    let g: BTreeSet<T> = gold.iter().copied().collect();
    Counts {
        tp: p.intersection(&g).count(),
        predicted: p.len(),
        gold: g.len(),
    }
}

/// Exact-match precision, recall and F1 for one list of spans.
pub fn span_f1(pred: &[Span], gold: &[Span]) -> (f64, f64, f64) {
    let c = count_matches(pred, gold);
    (c.precision(), c.recall(), c.f1())
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SentimentCounts {
    /// Predicted pairs whose span exactly matches a gold aspect span.
    pub matched: usize,
    pub correct: usize,
    /// Per polarity, in `Polarity::ALL` order.
    pub per_class: [Counts; 3],
}

impl SentimentCounts {
    pub fn accuracy(&self) -> f64 {
        if self.matched == 0 {
            0.0
        } else {
            self.correct as f64 / self.matched as f64
        }
    }

    /// Unweighted mean of per-class F1 over all three polarities. A class
    /// absent from both sides contributes 0.
    pub fn macro_f1(&self) -> f64 {
        if self.matched == 0 {
            return 0.0;
        }
        let total: f64 = self
            .per_class
            .iter()
            .map(|c| if c.predicted + c.gold == 0 { 0.0 } else { c.f1() })
            .sum();
        total / 3.0
    }

    pub fn absent_classes(&self) -> Vec<Polarity> {
        Polarity::ALL
            .iter()
            .zip(&self.per_class)
            .filter(|(_, c)| c.predicted + c.gold == 0)
            .map(|(p, _)| *p)
            .collect()
    }

    fn add(&mut self, other: &SentimentCounts) {
        self.matched += other.matched;
        self.correct += other.correct;
        for (a, b) in self.per_class.iter_mut().zip(&other.per_class) {
            a.add(*b);
        }
    }
}

/// Sentiment counts over predicted pairs whose span matches a gold aspect.
pub fn sentiment_counts(pred: &[TermPolarityPair], gold: &[TermPolarityPair]) -> SentimentCounts {
    let pred: BTreeSet<&TermPolarityPair> = pred.iter().collect();
    let mut out = SentimentCounts::default();
    let mut used = BTreeSet::new();
    for p in pred {
        let Some(g) = gold.iter().find(|g| g.span == p.span) else {
            continue;
        };
        // one verdict per gold span
        if !used.insert(g.span) {
            continue;
        }
        out.matched += 1;
        out.per_class[p.polarity.index()].predicted += 1;
        out.per_class[g.polarity.index()].gold += 1;
        if p.polarity == g.polarity {
            out.correct += 1;
            out.per_class[p.polarity.index()].tp += 1;
        }
    }
    out
}

/// `(acc_s, f1_s)` for one sentence's pairs.
pub fn sentiment_metrics(pred: &[TermPolarityPair], gold: &[TermPolarityPair]) -> (f64, f64) {
    let c = sentiment_counts(pred, gold);
    (c.accuracy(), c.macro_f1())
}

/// Pair-level F1: a prediction counts only when span and polarity both match.
pub fn overall_f1(pred: &[TermPolarityPair], gold: &[TermPolarityPair]) -> f64 {
    count_matches(pred, gold).f1()
}

/// Predicted tags for one sentence.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub ae_tags: Vec<AeTag>,
    /// Arg-max polarity for every token.
    pub as_tags: Vec<Polarity>,
}

impl Prediction {
    pub fn pairs(&self, mode: DecodeMode) -> Vec<TermPolarityPair> {
        let as_tags: Vec<Option<Polarity>> = self.as_tags.iter().map(|&p| Some(p)).collect();
        extract_pairs(&self.ae_tags, &as_tags, mode)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub f1_a: f64,
    pub f1_o: f64,
    pub acc_s: f64,
    pub f1_s: f64,
    pub f1_i: f64,
    pub aspect: Counts,
    pub opinion: Counts,
    pub sentiment: SentimentCounts,
    pub pairs: Counts,
}

impl MetricReport {
    pub fn from_counts(aspect: Counts, opinion: Counts, sentiment: SentimentCounts, pairs: Counts) -> Self {
        MetricReport {
            f1_a: aspect.f1(),
            f1_o: opinion.f1(),
            acc_s: sentiment.accuracy(),
            f1_s: sentiment.macro_f1(),
            f1_i: pairs.f1(),
            aspect,
            opinion,
            sentiment,
            pairs,
        }
    }

    /// The five scores in reporting order.
    pub fn scores(&self) -> [(&'static str, f64); 5] {
        [
            ("f1_a", self.f1_a),
            ("f1_o", self.f1_o),
            ("acc_s", self.acc_s),
            ("f1_s", self.f1_s),
            ("f1_i", self.f1_i),
        ]
    }

    /// Flat `key = value` text: scores as percentages with two decimals,
    /// followed by raw counts.
    pub fn to_kv(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.scores() {
            let _ = writeln!(out, "{k} = {:.2}", 100.0 * v);
        }
        for (name, c) in [("aspect", self.aspect), ("opinion", self.opinion), ("pairs", self.pairs)] {
            let _ = writeln!(out, "{name}.tp = {}", c.tp);
            let _ = writeln!(out, "{name}.predicted = {}", c.predicted);
            let _ = writeln!(out, "{name}.gold = {}", c.gold);
        }
        let _ = writeln!(out, "sentiment.matched = {}", self.sentiment.matched);
        let _ = writeln!(out, "sentiment.correct = {}", self.sentiment.correct);
        for (p, c) in Polarity::ALL.iter().zip(&self.sentiment.per_class) {
            let _ = writeln!(out, "sentiment.{}.tp = {}", p.name(), c.tp);
            let _ = writeln!(out, "sentiment.{}.predicted = {}", p.name(), c.predicted);
            let _ = writeln!(out, "sentiment.{}.gold = {}", p.name(), c.gold);
        }
        let absent: Vec<&str> = self.sentiment.absent_classes().iter().map(|p| p.name()).collect();
        let _ = writeln!(out, "sentiment.absent_classes = {}", absent.join(","));
        out
    }

    /// Arithmetic mean of each score; counts are summed.
    pub fn average(reports: &[MetricReport]) -> MetricReport {
        let mut out = MetricReport::default();
        if reports.is_empty() {
            return out;
        }
        let n = reports.len() as f64;
        for r in reports {
            out.f1_a += r.f1_a;
            out.f1_o += r.f1_o;
            out.acc_s += r.acc_s;
            out.f1_s += r.f1_s;
            out.f1_i += r.f1_i;
            out.aspect.add(r.aspect);
            out.opinion.add(r.opinion);
            out.pairs.add(r.pairs);
            out.sentiment.add(&r.sentiment);
        }
        out.f1_a /= n;
        out.f1_o /= n;
        out.acc_s /= n;
        out.f1_s /= n;
        out.f1_i /= n;
        out
    }
}

/// Scores predictions against gold sentences, micro-averaging span counts
/// over the corpus.
pub fn evaluate(gold: &[Sentence], pred: &[Prediction], mode: DecodeMode) -> MetricReport {
    assert_eq!(gold.len(), pred.len(), "one prediction per sentence");
    let (mut aspect, mut opinion, mut pairs) = (Counts::default(), Counts::default(), Counts::default());
    let mut sentiment = SentimentCounts::default();
    for (g, p) in gold.iter().zip(pred) {
        let gold_spans = decode_spans(&g.ae_tags, mode);
        let pred_spans = decode_spans(&p.ae_tags, mode);
        let of = |spans: &[Span], k: SpanKind| -> Vec<Span> {
            spans.iter().copied().filter(|s| s.kind == k).collect()
        };
        aspect.add(count_matches(
            &of(&pred_spans, SpanKind::Aspect),
            &of(&gold_spans, SpanKind::Aspect),
        ));
        opinion.add(count_matches(
            &of(&pred_spans, SpanKind::Opinion),
            &of(&gold_spans, SpanKind::Opinion),
        ));
        let gold_pairs = extract_pairs(&g.ae_tags, &g.as_tags, mode);
        let pred_pairs = p.pairs(mode);
        sentiment.add(&sentiment_counts(&pred_pairs, &gold_pairs));
        pairs.add(count_matches(&pred_pairs, &gold_pairs));
    }
    MetricReport::from_counts(aspect, opinion, sentiment, pairs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use AeTag::*;

    fn asp(start: usize, end: usize) -> Span {
        Span {
            start,
            end,
            kind: SpanKind::Aspect,
        }
    }

    fn op(start: usize, end: usize) -> Span {
        Span {
            start,
            end,
            kind: SpanKind::Opinion,
        }
    }

    #[test]
    fn decode_examples() {
        assert_eq!(decode_spans(&[BA, IA, O, BP], DecodeMode::Lenient), vec![asp(0, 2), op(3, 4)]);
        assert_eq!(decode_spans(&[IA, O], DecodeMode::Lenient), vec![asp(0, 1)]);
        assert_eq!(decode_spans(&[IA, O], DecodeMode::Strict), vec![]);
        assert_eq!(decode_spans(&[BA, BA], DecodeMode::Lenient), vec![asp(0, 1), asp(1, 2)]);
        // an inside tag of the other kind closes the open span
        assert_eq!(decode_spans(&[BA, IP], DecodeMode::Lenient), vec![asp(0, 1), op(1, 2)]);
        assert_eq!(decode_spans(&[BA, IP, IA], DecodeMode::Strict), vec![asp(0, 1)]);
    }

    #[test]
    fn pairs_use_first_token() {
        let pairs = extract_pairs(&[BA, IA], &[Some(Polarity::Neg), Some(Polarity::Pos)], DecodeMode::Lenient);
        assert_eq!(
            pairs,
            vec![TermPolarityPair {
                span: asp(0, 2),
                polarity: Polarity::Neg
            }]
        );
        assert!(extract_pairs(&[O, BP], &[None, None], DecodeMode::Lenient).is_empty());
        let one = extract_pairs(&[BA], &[Some(Polarity::Neu)], DecodeMode::Lenient);
        assert_eq!(one[0].polarity, Polarity::Neu);
        assert_eq!(one[0].span, asp(0, 1));
    }

    #[test]
    fn span_f1_examples() {
        let (p, r, f) = span_f1(&[asp(0, 1), asp(3, 5)], &[asp(0, 1), asp(2, 4)]);
        assert_eq!((p, r, f), (0.5, 0.5, 0.5));
        assert_eq!(span_f1(&[asp(0, 1)], &[asp(0, 1)]).2, 1.0);
        assert_eq!(span_f1(&[], &[asp(0, 1)]).2, 0.0);
        assert_eq!(span_f1(&[], &[]).2, 1.0);
        // duplicates collapse
        assert_eq!(span_f1(&[asp(0, 1), asp(0, 1)], &[asp(0, 1)]), (1.0, 1.0, 1.0));
    }

    fn pair(start: usize, end: usize, polarity: Polarity) -> TermPolarityPair {
        TermPolarityPair {
            span: asp(start, end),
            polarity,
        }
    }

    #[test]
    fn sentiment_examples() {
        use Polarity::*;
        let gold = [pair(0, 1, Pos), pair(2, 3, Neg)];
        assert_eq!(sentiment_metrics(&gold, &gold).0, 1.0);
        let pred = [pair(0, 1, Pos), pair(2, 3, Pos)];
        assert_eq!(sentiment_metrics(&pred, &gold).0, 0.5);

        // hand macro-F1: one span per class, all correct → every class F1 = 1
        let three = [pair(0, 1, Pos), pair(1, 2, Neg), pair(2, 3, Neu)];
        assert_eq!(sentiment_metrics(&three, &three), (1.0, 1.0));

        // unmatched spans are ignored
        let c = sentiment_counts(&[pair(5, 6, Pos)], &gold);
        assert_eq!(c.matched, 0);
        assert_eq!((c.accuracy(), c.macro_f1()), (0.0, 0.0));

        // absent classes count as 0 in the macro average
        let c = sentiment_counts(&[pair(0, 1, Pos)], &[pair(0, 1, Pos)]);
        assert!((c.macro_f1() - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(c.absent_classes(), vec![Neg, Neu]);
    }

    #[test]
    fn overall_examples() {
        use Polarity::*;
        let gold = [pair(0, 2, Neg), pair(4, 5, Pos)];
        assert_eq!(overall_f1(&gold, &gold), 1.0);
        assert!((overall_f1(&[pair(0, 2, Neg)], &gold) - 2.0 / 3.0).abs() < 1e-15);
        let c = count_matches(&[pair(0, 2, Pos)], &[pair(0, 2, Neg)]);
        assert_eq!((c.tp, c.predicted, c.gold), (0, 1, 1));
    }

    #[test]
    fn kv_report_has_five_scores() {
        let r = MetricReport::from_counts(
            Counts { tp: 1, predicted: 2, gold: 2 },
            Counts::default(),
            SentimentCounts::default(),
            Counts::default(),
        );
        let text = r.to_kv();
        assert!(text.starts_with("f1_a = 50.00\nf1_o = 100.00\nacc_s = 0.00\nf1_s = 0.00\nf1_i = 100.00\n"));
    }

    #[test]
    fn average_of_one_is_identity_on_scores() {
        let r = MetricReport::from_counts(
            Counts { tp: 1, predicted: 3, gold: 2 },
            Counts { tp: 0, predicted: 1, gold: 1 },
            SentimentCounts::default(),
            Counts { tp: 1, predicted: 3, gold: 2 },
        );
        let avg = MetricReport::average(std::slice::from_ref(&r));
        assert_eq!(avg.scores(), r.scores());
    }
}
