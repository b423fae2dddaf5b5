//! Attachment scoring: UAS/LAS with selectable punctuation exclusion,
//! accuracy broken down by sentence-length and word-position bins, and
//! seeded sentence sampling for token-budgeted analyses.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::treebank::{Sentence, Token};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("treebanks are misaligned at sentence {id}: {detail}")]
    Misaligned { id: String, detail: String },
    #[error("unknown punctuation policy `{0}` (expected none, upos-punct or ptb-style)")]
    UnknownPolicy(String),
    #[error("token budget must be at least 1")]
    BadBudget,
    #[error("bin edges must be non-empty and strictly increasing")]
    BadBins,
}

impl EvalError {
    pub fn exit_code(&self) -> i32 {
        match self {
            EvalError::Misaligned { .. } => 2,
            _ => 1,
        }
    }
}

/// Which tokens are excluded from scoring. `None` scores everything (the
/// right choice for UD data); `UposPunct` drops tokens whose gold UPOS is
/// `PUNCT`; `PtbStyle` drops tokens whose form is made up entirely of
/// punctuation characters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PunctPolicy {
    None,
    UposPunct,
    PtbStyle,
}

impl PunctPolicy {
    pub const ALL: [PunctPolicy; 3] = [
        PunctPolicy::None,
        PunctPolicy::UposPunct,
        PunctPolicy::PtbStyle,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            PunctPolicy::None => "none",
            PunctPolicy::UposPunct => "upos-punct",
            PunctPolicy::PtbStyle => "ptb-style",
        }
    }

    /// Whether a gold token is counted under this policy.
    pub fn scores(&self, gold: &Token) -> bool {
        match self {
            PunctPolicy::None => true,
            PunctPolicy::UposPunct => gold.upos != "PUNCT",
            PunctPolicy::PtbStyle => {
                !(!gold.form.is_empty() && gold.form.chars().all(|c| c.is_ascii_punctuation()))
            }
        }
    }
}

impl std::str::FromStr for PunctPolicy {
    type Err = EvalError;

    fn from_str(s: &str) -> Result<Self, EvalError> {
        match s.to_ascii_lowercase().as_str() {
            "none" => Ok(PunctPolicy::None),
            "upos-punct" => Ok(PunctPolicy::UposPunct),
            "ptb-style" => Ok(PunctPolicy::PtbStyle),
            _ => Err(EvalError::UnknownPolicy(s.to_string())),
        }
    }
}

impl std::fmt::Display for PunctPolicy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Scored-token tallies for one bin. An empty bin has no accuracy, not a
/// zero one, so the accessors return `None` for it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinAccuracy {
    pub label: String,
    pub total: usize,
    pub correct_heads: usize,
    pub correct_labeled: usize,
}

impl BinAccuracy {
    pub fn uas(&self) -> Option<f64> {
        (self.total > 0).then(|| self.correct_heads as f64 / self.total as f64)
    }

    pub fn las(&self) -> Option<f64> {
        (self.total > 0).then(|| self.correct_labeled as f64 / self.total as f64)
    }
}

/// Attachment scores over a gold/predicted treebank pair, with the same
/// tallies split by sentence length and by word position.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub policy: PunctPolicy,
    pub sentence_count: usize,
    pub total: usize,
    pub correct_heads: usize,
    pub correct_labeled: usize,
    pub length_bins: Vec<BinAccuracy>,
    pub position_bins: Vec<BinAccuracy>,
}

impl EvalReport {
    /// Fraction of scored tokens with the correct head; 1.0 when nothing
    /// is scored (an empty treebank matches itself vacuously).
    pub fn uas(&self) -> f64 {
        if self.total == 0 {
            1.0
        } else {
            self.correct_heads as f64 / self.total as f64
        }
    }

    /// Fraction of scored tokens with the correct head and label.
    pub fn las(&self) -> f64 {
        if self.total == 0 {
            1.0
        } else {
            self.correct_labeled as f64 / self.total as f64
        }
    }
}

/// Decade bins matching the analysis plots: 1-10, 11-20, 21-30, 31-40,
/// 41-50 and above 50.
pub const DEFAULT_BIN_EDGES: [usize; 5] = [10, 20, 30, 40, 50];

fn sent_label(s: &Sentence, idx: usize) -> String {
    s.id.clone().unwrap_or_else(|| format!("#{}", idx + 1))
}

fn make_bins(edges: &[usize]) -> Vec<BinAccuracy> {
    let mut bins = Vec::with_capacity(edges.len() + 1);
    let mut lo = 1;
    for &e in edges {
        bins.push(BinAccuracy {
            label: format!("{lo}-{e}"),
            total: 0,
            correct_heads: 0,
            correct_labeled: 0,
        });
        lo = e + 1;
    }
    bins.push(BinAccuracy {
        label: format!(">{}", edges[edges.len() - 1]),
        total: 0,
        correct_heads: 0,
        correct_labeled: 0,
    });
    bins
}

fn bin_index(value: usize, edges: &[usize]) -> usize {
    edges
        .iter()
        .position(|&e| value <= e)
        .unwrap_or(edges.len())
}

fn check_aligned(gold: &[Sentence], pred: &[Sentence]) -> Result<(), EvalError> {
    if gold.len() != pred.len() {
        let idx = gold.len().min(pred.len());
        let longer = if gold.len() > pred.len() { gold } else { pred };
        return Err(EvalError::Misaligned {
            id: sent_label(&longer[idx], idx),
            detail: format!(
                "{} gold sentences but {} predicted",
                gold.len(),
                pred.len()
            ),
        });
    }
    for (i, (gs, ps)) in gold.iter().zip(pred).enumerate() {
        if gs.len() != ps.len() {
            return Err(EvalError::Misaligned {
                id: sent_label(gs, i),
                detail: format!("{} gold tokens but {} predicted", gs.len(), ps.len()),
            });
        }
    }
    Ok(())
}

/// Score `pred` against `gold` with custom bin edges. A token scores a
/// correct head when the predicted head position matches, and a correct
/// label when the label string matches on top of that. Each scored token
/// is also tallied into the bin of its sentence's length and the bin of
/// its own position.
pub fn evaluate(
    gold: &[Sentence],
    pred: &[Sentence],
    policy: PunctPolicy,
    edges: &[usize],
) -> Result<EvalReport, EvalError> {
    if edges.is_empty() || !edges.windows(2).all(|w| w[0] < w[1]) {
        return Err(EvalError::BadBins);
    }
    check_aligned(gold, pred)?;
    let mut report = EvalReport {
        policy,
        sentence_count: gold.len(),
        total: 0,
        correct_heads: 0,
        correct_labeled: 0,
        length_bins: make_bins(edges),
        position_bins: make_bins(edges),
    };
    for (gs, ps) in gold.iter().zip(pred) {
        let lb = bin_index(gs.len(), edges);
        for (gt, pt) in gs.tokens.iter().zip(&ps.tokens) {
            if !policy.scores(gt) {
                continue;
            }
            let head_ok = gt.head == pt.head;
            let label_ok = head_ok && gt.deprel == pt.deprel;
            let pb = bin_index(gt.index, edges);
            for bin in [&mut report.length_bins[lb], &mut report.position_bins[pb]] {
                bin.total += 1;
                bin.correct_heads += head_ok as usize;
                bin.correct_labeled += label_ok as usize;
            }
            report.total += 1;
            report.correct_heads += head_ok as usize;
            report.correct_labeled += label_ok as usize;
        }
    }
    Ok(report)
}

/// Score with the default decade bins.
pub fn uas_las(
    gold: &[Sentence],
    pred: &[Sentence],
    policy: PunctPolicy,
) -> Result<EvalReport, EvalError> {
    evaluate(gold, pred, policy, &DEFAULT_BIN_EDGES)
}

/// Per-bin tables only: accuracy by sentence length and by word position.
pub fn binned_accuracy(
    gold: &[Sentence],
    pred: &[Sentence],
    policy: PunctPolicy,
    edges: &[usize],
) -> Result<(Vec<BinAccuracy>, Vec<BinAccuracy>), EvalError> {
    let report = evaluate(gold, pred, policy, edges)?;
    Ok((report.length_bins, report.position_bins))
}

/// Seeded sample of whole sentences: shuffle, then take sentences until
/// their token count first reaches or exceeds `budget`. The sample keeps
/// the corpus order; a budget beyond the corpus returns all of it.
pub fn sample_tokens(
    tb: &[Sentence],
    budget: usize,
    seed: u64,
) -> Result<Vec<Sentence>, EvalError> {
    Ok(sample_indices(tb, budget, seed)?
        .into_iter()
        .map(|i| tb[i].clone())
        .collect())
}

/// Indices of the sentences [`sample_tokens`] keeps, so a parallel
/// prediction list can be subset the same way.
pub fn sample_indices(
    tb: &[Sentence],
    budget: usize,
    seed: u64,
) -> Result<Vec<usize>, EvalError> {
    if budget == 0 {
        return Err(EvalError::BadBudget);
    }
    let mut order: Vec<usize> = (0..tb.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut chosen = Vec::new();
    let mut tokens = 0;
    for i in order {
        if tokens >= budget {
            break;
        }
        chosen.push(i);
        tokens += tb[i].len();
    }
    chosen.sort_unstable();
    Ok(chosen)
}

/// Two-column summary table.
pub fn report_tsv(r: &EvalReport) -> String {
    let mut out = String::from("metric\tvalue\n");
    let _ = writeln!(out, "punctuation-policy\t{}", r.policy);
    let _ = writeln!(out, "sentences\t{}", r.sentence_count);
    let _ = writeln!(out, "scored-tokens\t{}", r.total);
    let _ = writeln!(out, "uas\t{:.6}", r.uas());
    let _ = writeln!(out, "las\t{:.6}", r.las());
    out
}

/// Per-bin table over both axes; empty bins keep their accuracy cells
/// blank. This is also the plot-data format: one series per axis with the
/// bin label as the x value.
pub fn bins_tsv(r: &EvalReport) -> String {
    let mut out = String::from("axis\tbin\ttokens\tuas\tlas\n");
    for (axis, bins) in [
        ("sentence-length", &r.length_bins),
        ("word-position", &r.position_bins),
    ] {
        for b in bins {
            match (b.uas(), b.las()) {
                (Some(u), Some(l)) => {
                    let _ = writeln!(out, "{axis}\t{}\t{}\t{u:.6}\t{l:.6}", b.label, b.total);
                }
                _ => {
                    let _ = writeln!(out, "{axis}\t{}\t0\t\t", b.label);
                }
            }
        }
    }
    out
}

/// The whole report as a JSON document; empty bins carry null accuracies.
pub fn report_json(r: &EvalReport) -> String {
    let bins = |v: &[BinAccuracy]| -> Vec<serde_json::Value> {
        v.iter()
            .map(|b| {
                serde_json::json!({
                    "bin": b.label,
                    "tokens": b.total,
                    "correct-heads": b.correct_heads,
                    "correct-labeled": b.correct_labeled,
                    "uas": b.uas(),
                    "las": b.las(),
                })
            })
            .collect()
    };
    let doc = serde_json::json!({
        "punctuation-policy": r.policy.name(),
        "sentences": r.sentence_count,
        "scored-tokens": r.total,
        "correct-heads": r.correct_heads,
        "correct-labeled": r.correct_labeled,
        "uas": r.uas(),
        "las": r.las(),
        "sentence-length-bins": bins(&r.length_bins),
        "word-position-bins": bins(&r.position_bins),
    });
    serde_json::to_string_pretty(&doc).expect("report serializes")
}
