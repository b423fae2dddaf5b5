//! The Shift-Attach-p transition system in its three focus orders.
//!
//! A parse of an n-word sentence is built in exactly n actions. Each action
//! attaches the current focus word to a parent position p (0 is the
//! artificial root) and advances the focus along a fixed order: left to
//! right, right to left, or outside-in (outermost remaining word,
//! alternating ends). Legality only forbids cycles; an optional flag also
//! forbids arcs that cross already-built arcs.
//!
//! Alongside the head array, the state tracks for every word its leftmost
//! (lm), rightmost (rm), last-attached left (la) and last-attached right
//! (ra) dependents together with the decoder step at which each attachment
//! happened. The structured decoder conditions on this record of the focus
//! word.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::treebank::{self, DepTree, Sentence, TreeError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TransitionKind {
    #[serde(rename = "l2r")]
    LeftToRight,
    #[serde(rename = "r2l")]
    RightToLeft,
    #[serde(rename = "oi")]
    OutsideIn,
}

impl TransitionKind {
    pub const ALL: [TransitionKind; 3] = [
        TransitionKind::LeftToRight,
        TransitionKind::RightToLeft,
        TransitionKind::OutsideIn,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            TransitionKind::LeftToRight => "l2r",
            TransitionKind::RightToLeft => "r2l",
            TransitionKind::OutsideIn => "oi",
        }
    }

    /// Which side(s) of a focus word can hold attached dependents: words
    /// processed earlier are to the left under l2r, to the right under r2l,
    /// on both sides under oi.
    pub fn exposes_left(&self) -> bool {
        !matches!(self, TransitionKind::RightToLeft)
    }

    pub fn exposes_right(&self) -> bool {
        !matches!(self, TransitionKind::LeftToRight)
    }
}

impl std::str::FromStr for TransitionKind {
    type Err = TransitionError;

    fn from_str(s: &str) -> Result<Self, TransitionError> {
        match s.to_ascii_lowercase().as_str() {
            "l2r" | "left-to-right" => Ok(TransitionKind::LeftToRight),
            "r2l" | "right-to-left" => Ok(TransitionKind::RightToLeft),
            "oi" | "outside-in" => Ok(TransitionKind::OutsideIn),
            _ => Err(TransitionError::UnknownKind(s.to_string())),
        }
    }
}

impl std::fmt::Display for TransitionKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// A dependent position plus the 1-based decoder step at which the arc was
/// made (the step whose decoder state represents that decision).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Attachment {
    pub position: usize,
    pub step: usize,
}

/// Tracked dependents of one word. Directions a transition system cannot
/// produce for its focus words simply stay `None`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct DependentRecord {
    pub lm: Option<Attachment>,
    pub rm: Option<Attachment>,
    pub la: Option<Attachment>,
    pub ra: Option<Attachment>,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TransitionError {
    #[error("unknown transition system `{0}` (expected l2r, r2l or oi)")]
    UnknownKind(String),
    #[error("sentence has no words")]
    EmptySentence,
    #[error("parse already finished ({n} attachments made)")]
    ParseFinished { n: usize },
    #[error("parent {p} out of range for sentence of length {n}")]
    ParentOutOfRange { p: usize, n: usize },
    #[error("word {focus} cannot attach to itself")]
    SelfAttach { focus: usize },
    #[error("attaching word {focus} to {p} would create a cycle")]
    CycleAttach { focus: usize, p: usize },
    #[error("arc {p}->{focus} would cross an already-built arc")]
    CrossingAttach { focus: usize, p: usize },
    #[error("invalid gold tree: {0}")]
    InvalidTree(#[from] TreeError),
    #[error("treebank is empty")]
    EmptyTreebank,
}

/// The order in which words become focus: 1..n, n..1, or outermost
/// remaining word alternating left end then right end.
pub fn focus_order(kind: TransitionKind, n: usize) -> Result<Vec<usize>, TransitionError> {
    if n == 0 {
        return Err(TransitionError::EmptySentence);
    }
    Ok(match kind {
        TransitionKind::LeftToRight => (1..=n).collect(),
        TransitionKind::RightToLeft => (1..=n).rev().collect(),
        TransitionKind::OutsideIn => {
            let mut order = Vec::with_capacity(n);
            let (mut lo, mut hi) = (1, n);
            while lo < hi {
                order.push(lo);
                order.push(hi);
                lo += 1;
                hi -= 1;
            }
            if lo == hi {
                order.push(lo);
            }
            order
        }
    })
}

/// Gold parent indices in focus order; this is the teacher-forced action
/// sequence for the sentence.
pub fn oracle_sequence(kind: TransitionKind, gold: &DepTree) -> Result<Vec<usize>, TransitionError> {
    treebank::validate_heads(&gold.heads)?;
    let order = focus_order(kind, gold.len())?;
    Ok(order.iter().map(|&w| gold.heads[w - 1]).collect())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParserState {
    kind: TransitionKind,
    n: usize,
    order: Vec<usize>,
    t: usize,
    heads: Vec<Option<usize>>,
    trackers: Vec<DependentRecord>,
}

impl ParserState {
    pub fn new(kind: TransitionKind, n: usize) -> Result<ParserState, TransitionError> {
        let order = focus_order(kind, n)?;
        Ok(ParserState {
            kind,
            n,
            order,
            t: 0,
            heads: vec![None; n],
            trackers: vec![DependentRecord::default(); n + 1],
        })
    }

    pub fn kind(&self) -> TransitionKind {
        self.kind
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// Number of attachments made so far.
    pub fn step(&self) -> usize {
        self.t
    }

    pub fn is_finished(&self) -> bool {
        self.t == self.n
    }

    pub fn focus_order(&self) -> &[usize] {
        &self.order
    }

    /// Current focus word, `None` once all words are attached.
    pub fn focus(&self) -> Option<usize> {
        self.order.get(self.t).copied()
    }

    pub fn head_of(&self, word: usize) -> Option<usize> {
        self.heads[word - 1]
    }

    /// Completed head array; call only when finished.
    pub fn into_heads(self) -> Vec<usize> {
        assert!(self.is_finished(), "parse not finished");
        self.heads.into_iter().map(|h| h.unwrap()).collect()
    }

    pub fn tracker(&self, word: usize) -> &DependentRecord {
        &self.trackers[word]
    }

    /// Dependent record of the current focus word.
    pub fn dependent_snapshot(&self) -> DependentRecord {
        let focus = self.focus().expect("parse finished");
        self.trackers[focus]
    }

    /// True if the head chain upward from `start` (over built arcs only)
    /// reaches `target`.
    fn chain_reaches(&self, start: usize, target: usize) -> bool {
        let mut cur = start;
        loop {
            if cur == target {
                return true;
            }
            match if cur == 0 { None } else { self.heads[cur - 1] } {
                Some(h) => cur = h,
                None => return false,
            }
        }
    }

    fn would_cross(&self, p: usize, focus: usize) -> bool {
        (1..=self.n).any(|d| match self.heads[d - 1] {
            Some(h) => treebank::arcs_cross((p, focus), (h, d)),
            None => false,
        })
    }

    /// Parent positions the focus word may legally attach to, ascending.
    ///
    /// A parent is illegal if the arc would close a cycle. With
    /// `projective_only`, arcs crossing an already-built arc are also
    /// dropped; should that leave nothing (possible under outside-in, where
    /// built arcs can fence the focus in), the unfiltered acyclic set is
    /// returned so that a legal action always exists.
    pub fn legal_parents(&self, projective_only: bool) -> Result<Vec<usize>, TransitionError> {
        let focus = self
            .focus()
            .ok_or(TransitionError::ParseFinished { n: self.n })?;
        let acyclic: Vec<usize> = (0..=self.n)
            .filter(|&p| p != focus && !self.chain_reaches(p, focus))
            .collect();
        if projective_only {
            let planar: Vec<usize> = acyclic
                .iter()
                .copied()
                .filter(|&p| !self.would_cross(p, focus))
                .collect();
            if !planar.is_empty() {
                return Ok(planar);
            }
        }
        Ok(acyclic)
    }

    /// Attach the focus word to `p` and advance the focus.
    pub fn apply_attach(&mut self, p: usize, projective_only: bool) -> Result<(), TransitionError> {
        let focus = self
            .focus()
            .ok_or(TransitionError::ParseFinished { n: self.n })?;
        if p > self.n {
            return Err(TransitionError::ParentOutOfRange { p, n: self.n });
        }
        if p == focus {
            return Err(TransitionError::SelfAttach { focus });
        }
        if self.chain_reaches(p, focus) {
            return Err(TransitionError::CycleAttach { focus, p });
        }
        if projective_only
            && self.would_cross(p, focus)
            && self.legal_parents(true)?.iter().all(|&q| q != p)
        {
            return Err(TransitionError::CrossingAttach { focus, p });
        }
        self.heads[focus - 1] = Some(p);
        let step = self.t + 1;
        let attachment = Attachment {
            position: focus,
            step,
        };
        // Recorded for every parent, even already-processed ones; consumers
        // only ever read the record of a current focus word.
        let rec = &mut self.trackers[p];
        if focus < p {
            rec.la = Some(attachment);
            if rec.lm.map_or(true, |a| focus < a.position) {
                rec.lm = Some(attachment);
            }
        } else {
            rec.ra = Some(attachment);
            if rec.rm.map_or(true, |a| focus > a.position) {
                rec.rm = Some(attachment);
            }
        }
        self.t += 1;
        Ok(())
    }
}

/// Mean per-sentence counts of gold dependents already attached when their
/// head becomes focus. A dependent is counted only if it sits on a side the
/// transition system exposes (left for l2r, right for r2l, both for oi)
/// unless `count_both_sides` is set. `long_per_sentence` restricts to arcs
/// of length > 4.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AvailabilityStats {
    pub all_per_sentence: f64,
    pub long_per_sentence: f64,
}

pub fn availability_stats(
    kind: TransitionKind,
    tb: &[Sentence],
    count_both_sides: bool,
) -> Result<AvailabilityStats, TransitionError> {
    if tb.is_empty() {
        return Err(TransitionError::EmptyTreebank);
    }
    let left_ok = count_both_sides || kind.exposes_left();
    let right_ok = count_both_sides || kind.exposes_right();
    let mut all_total = 0usize;
    let mut long_total = 0usize;
    for s in tb {
        let heads = s.heads();
        treebank::validate_heads(&heads)?;
        let order = focus_order(kind, s.len())?;
        let mut rank = vec![0usize; s.len() + 1];
        for (i, &w) in order.iter().enumerate() {
            rank[w] = i;
        }
        for d in 1..=s.len() {
            let h = heads[d - 1];
            if h == 0 {
                continue;
            }
            // Attached before its head becomes focus?
            if rank[d] < rank[h] {
                let left = d < h;
                if (left && left_ok) || (!left && right_ok) {
                    all_total += 1;
                    if h.abs_diff(d) > 4 {
                        long_total += 1;
                    }
                }
            }
        }
    }
    let n = tb.len() as f64;
    Ok(AvailabilityStats {
        all_per_sentence: all_total as f64 / n,
        long_per_sentence: long_total as f64 / n,
    })
}
