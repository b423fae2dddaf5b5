//! CoNLL-U treebank reading, writing, validation and corpus statistics.
//!
//! Token lines carry the ten standard tab-separated columns
//! `ID FORM LEMMA UPOS XPOS FEATS HEAD DEPREL DEPS MISC`, `_` marks an
//! absent value, comment lines start with `#` and sentences are separated
//! by blank lines. Multiword-token ranges (`1-2`) and empty nodes (`1.1`)
//! are not part of the parseable token sequence but are preserved verbatim
//! so that writing a parsed file reproduces it.

use std::collections::BTreeSet;
use std::fmt;

use thiserror::Error;

/// One syntactic word. `index` is 1-based; `head` 0 means the artificial
/// root at position 0.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    pub index: usize,
    pub form: String,
    pub lemma: Option<String>,
    pub upos: String,
    pub xpos: Option<String>,
    pub feats: Option<String>,
    pub head: usize,
    pub deprel: String,
    pub deps: Option<String>,
    pub misc: Option<String>,
}

impl Token {
    pub fn new(index: usize, form: &str, upos: &str, head: usize, deprel: &str) -> Self {
        Token {
            index,
            form: form.to_string(),
            lemma: None,
            upos: upos.to_string(),
            xpos: None,
            feats: None,
            head,
            deprel: deprel.to_string(),
            deps: None,
            misc: None,
        }
    }
}

/// A sentence: its tokens plus everything needed to reproduce the source
/// block (comments and skipped multiword/empty-node lines, anchored by the
/// number of regular tokens that precede them).
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Sentence {
    pub id: Option<String>,
    pub comments: Vec<String>,
    pub tokens: Vec<Token>,
    pub skipped_lines: Vec<(usize, String)>,
}

impl Sentence {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Head array indexed by word position minus one.
    pub fn heads(&self) -> Vec<usize> {
        self.tokens.iter().map(|t| t.head).collect()
    }

    pub fn labels(&self) -> Vec<String> {
        self.tokens.iter().map(|t| t.deprel.clone()).collect()
    }

    pub fn tree(&self) -> DepTree {
        DepTree {
            heads: self.heads(),
            labels: self.labels(),
        }
    }

    /// Copy of this sentence with heads and labels replaced by `tree`.
    pub fn with_tree(&self, tree: &DepTree) -> Sentence {
        assert_eq!(tree.heads.len(), self.len(), "tree/sentence length mismatch");
        let mut out = self.clone();
        for (tok, (h, l)) in out
            .tokens
            .iter_mut()
            .zip(tree.heads.iter().zip(tree.labels.iter()))
        {
            tok.head = *h;
            tok.deprel = l.clone();
        }
        out
    }

    /// Convenience constructor used throughout the tests: forms with gold
    /// heads and labels, UPOS filled with `X`.
    pub fn from_parts(forms: &[&str], heads: &[usize], deprels: &[&str]) -> Sentence {
        assert!(forms.len() == heads.len() && heads.len() == deprels.len());
        let tokens = forms
            .iter()
            .zip(heads.iter().zip(deprels.iter()))
            .enumerate()
            .map(|(i, (f, (h, d)))| Token::new(i + 1, f, "X", *h, d))
            .collect();
        Sentence {
            id: None,
            comments: Vec::new(),
            tokens,
            skipped_lines: Vec::new(),
        }
    }
}

/// Head/label view of a sentence; `heads[i]` is the head of word `i + 1`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DepTree {
    pub heads: Vec<usize>,
    pub labels: Vec<String>,
}

impl DepTree {
    pub fn from_heads(heads: Vec<usize>) -> DepTree {
        let labels = vec!["dep".to_string(); heads.len()];
        DepTree { heads, labels }
    }

    pub fn len(&self) -> usize {
        self.heads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heads.is_empty()
    }
}

/// Corpus-level arc statistics: fraction of long arcs (length > 4) and the
/// fraction of those that point leftward (head to the right of the
/// dependent).
#[derive(Debug, Clone, PartialEq)]
pub struct TreebankStats {
    pub sentence_count: usize,
    pub token_count: usize,
    pub pct_long_arcs: f64,
    pub pct_left_of_long: Option<f64>,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ConlluError {
    #[error("line {line}: expected 10 tab-separated columns, found {found}")]
    ColumnCount { line: usize, found: usize },
    #[error("line {line}: token id `{id}` is not a positive integer")]
    BadTokenId { line: usize, id: String },
    #[error("line {line}: token id {found} out of order (expected {expected})")]
    TokenIdOrder {
        line: usize,
        expected: usize,
        found: usize,
    },
    #[error("line {line}: head `{head}` is not a non-negative integer")]
    NonIntegerHead { line: usize, head: String },
    #[error("line {line}: head {head} out of range for sentence of length {len}")]
    HeadOutOfRange { line: usize, head: usize, len: usize },
    #[error("line {line}: token is its own head")]
    SelfHead { line: usize },
    #[error("line {line}: sentence block has comments but no token lines")]
    EmptySentence { line: usize },
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TreeError {
    #[error("cycle through nodes {nodes:?}")]
    Cycle { nodes: Vec<usize> },
    #[error("node {node} cannot reach the root")]
    Unreachable { node: usize },
    #[error("head {head} of node {node} out of range for length {len}")]
    HeadOutOfRange { node: usize, head: usize, len: usize },
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum StatsError {
    #[error("treebank is empty")]
    EmptyTreebank,
}

/// Parse a whole CoNLL-U document.
pub fn parse_conllu(text: &str) -> Result<Vec<Sentence>, ConlluError> {
    let mut sentences = Vec::new();
    let mut cur = Sentence::default();
    let mut cur_token_lines: Vec<usize> = Vec::new();
    let mut block_start_line = 0usize;

    fn flush(
        cur: &mut Sentence,
        lines: &mut Vec<usize>,
        start: usize,
        out: &mut Vec<Sentence>,
    ) -> Result<(), ConlluError> {
        if cur.tokens.is_empty() && cur.comments.is_empty() && cur.skipped_lines.is_empty() {
            return Ok(());
        }
        if cur.tokens.is_empty() {
            return Err(ConlluError::EmptySentence { line: start });
        }
        let n = cur.tokens.len();
        for (tok, line) in cur.tokens.iter().zip(lines.iter()) {
            if tok.head > n {
                return Err(ConlluError::HeadOutOfRange {
                    line: *line,
                    head: tok.head,
                    len: n,
                });
            }
            if tok.head == tok.index {
                return Err(ConlluError::SelfHead { line: *line });
            }
        }
        out.push(std::mem::take(cur));
        lines.clear();
        Ok(())
    }

    for (lineno0, raw) in text.lines().enumerate() {
        let lineno = lineno0 + 1;
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() {
            flush(&mut cur, &mut cur_token_lines, block_start_line, &mut sentences)?;
            continue;
        }
        if cur.tokens.is_empty() && cur.comments.is_empty() && cur.skipped_lines.is_empty() {
            block_start_line = lineno;
        }
        if let Some(rest) = line.strip_prefix('#') {
            if let Some(eq) = rest.split_once('=') {
                if eq.0.trim() == "sent_id" {
                    cur.id = Some(eq.1.trim().to_string());
                }
            }
            cur.comments.push(line.to_string());
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 10 {
            return Err(ConlluError::ColumnCount {
                line: lineno,
                found: cols.len(),
            });
        }
        // Multiword-token ranges and empty nodes are kept only for round-trip.
        if cols[0].contains('-') || cols[0].contains('.') {
            cur.skipped_lines.push((cur.tokens.len(), line.to_string()));
            continue;
        }
        let index: usize = cols[0].parse().map_err(|_| ConlluError::BadTokenId {
            line: lineno,
            id: cols[0].to_string(),
        })?;
        if index == 0 {
            return Err(ConlluError::BadTokenId {
                line: lineno,
                id: cols[0].to_string(),
            });
        }
        if index != cur.tokens.len() + 1 {
            return Err(ConlluError::TokenIdOrder {
                line: lineno,
                expected: cur.tokens.len() + 1,
                found: index,
            });
        }
        let head: usize = cols[6].parse().map_err(|_| ConlluError::NonIntegerHead {
            line: lineno,
            head: cols[6].to_string(),
        })?;
        let opt = |s: &str| {
            if s == "_" {
                None
            } else {
                Some(s.to_string())
            }
        };
        cur.tokens.push(Token {
            index,
            form: cols[1].to_string(),
            lemma: opt(cols[2]),
            upos: cols[3].to_string(),
            xpos: opt(cols[4]),
            feats: opt(cols[5]),
            head,
            deprel: cols[7].to_string(),
            deps: opt(cols[8]),
            misc: opt(cols[9]),
        });
        cur_token_lines.push(lineno);
    }
    flush(&mut cur, &mut cur_token_lines, block_start_line, &mut sentences)?;
    Ok(sentences)
}

/// Serialize sentences back to CoNLL-U; inverse of [`parse_conllu`] on every
/// field the parser reads.
pub fn write_conllu(sentences: &[Sentence]) -> String {
    let mut out = String::new();
    for s in sentences {
        write_sentence(s, &mut out);
    }
    out
}

fn write_sentence(s: &Sentence, out: &mut String) {
    use fmt::Write;
    let has_id_comment = s.comments.iter().any(|c| {
        c.strip_prefix('#')
            .and_then(|r| r.split_once('='))
            .map(|(k, _)| k.trim() == "sent_id")
            .unwrap_or(false)
    });
    if let (Some(id), false) = (&s.id, has_id_comment) {
        writeln!(out, "# sent_id = {id}").unwrap();
    }
    for c in &s.comments {
        writeln!(out, "{c}").unwrap();
    }
    let mut skipped = s.skipped_lines.iter().peekable();
    for (i, tok) in s.tokens.iter().enumerate() {
        while let Some((anchor, line)) = skipped.peek() {
            if *anchor <= i {
                writeln!(out, "{line}").unwrap();
                skipped.next();
            } else {
                break;
            }
        }
        let f = |v: &Option<String>| v.clone().unwrap_or_else(|| "_".to_string());
        writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            tok.index,
            tok.form,
            f(&tok.lemma),
            tok.upos,
            f(&tok.xpos),
            f(&tok.feats),
            tok.head,
            tok.deprel,
            f(&tok.deps),
            f(&tok.misc),
        )
        .unwrap();
    }
    for (_, line) in skipped {
        writeln!(out, "{line}").unwrap();
    }
    out.push('\n');
}

/// Check the single-head/acyclic/rooted invariants of a head array.
///
/// Multiple attachments to the root are accepted here; a single-root
/// restriction is a decoding option, not a tree-validity condition.
pub fn validate_heads(heads: &[usize]) -> Result<(), TreeError> {
    let n = heads.len();
    for (i, &h) in heads.iter().enumerate() {
        if h > n {
            return Err(TreeError::HeadOutOfRange {
                node: i + 1,
                head: h,
                len: n,
            });
        }
    }
    // Walk the head chain from each node; a chain that does not reach the
    // root within n hops has run into a cycle.
    for start in 1..=n {
        let mut cur = start;
        let mut hops = 0;
        while cur != 0 {
            cur = heads[cur - 1];
            hops += 1;
            if hops > n {
                // Identify the cycle on this chain to classify the failure.
                let cycle = cycle_on_chain(heads, start);
                if cycle.contains(&start) {
                    return Err(TreeError::Cycle {
                        nodes: cycle.into_iter().collect(),
                    });
                }
                return Err(TreeError::Unreachable { node: start });
            }
        }
    }
    Ok(())
}

fn cycle_on_chain(heads: &[usize], start: usize) -> BTreeSet<usize> {
    let mut seen = Vec::new();
    let mut cur = start;
    loop {
        if let Some(pos) = seen.iter().position(|&x| x == cur) {
            return seen[pos..].iter().copied().collect();
        }
        seen.push(cur);
        cur = heads[cur - 1];
        if cur == 0 {
            return BTreeSet::new();
        }
    }
}

pub fn validate_tree(s: &Sentence) -> Result<(), TreeError> {
    validate_heads(&s.heads())
}

/// Two arcs cross iff their spans strictly interleave. Root arcs span from
/// position 0 to the dependent.
pub(crate) fn arcs_cross(x: (usize, usize), y: (usize, usize)) -> bool {
    let (a, b) = (x.0.min(x.1), x.0.max(x.1));
    let (c, d) = (y.0.min(y.1), y.0.max(y.1));
    (a < c && c < b && b < d) || (c < a && a < d && d < b)
}

/// True iff no two arcs cross when drawn above the sentence.
pub fn is_projective(tree: &DepTree) -> bool {
    let n = tree.heads.len();
    let arcs: Vec<(usize, usize)> = (1..=n).map(|d| (tree.heads[d - 1], d)).collect();
    for i in 0..arcs.len() {
        for j in i + 1..arcs.len() {
            if arcs_cross(arcs[i], arcs[j]) {
                return false;
            }
        }
    }
    true
}

/// Arc length is `|head - dependent|`; the arc from the root to word `i`
/// counts with its literal length `i`. `include_root_arcs = false` drops
/// root arcs from both numerator and denominator.
pub fn arc_stats(tb: &[Sentence], include_root_arcs: bool) -> Result<TreebankStats, StatsError> {
    if tb.is_empty() {
        return Err(StatsError::EmptyTreebank);
    }
    let mut arcs = 0usize;
    let mut long = 0usize;
    let mut long_left = 0usize;
    let mut tokens = 0usize;
    for s in tb {
        tokens += s.len();
        for tok in &s.tokens {
            if tok.head == 0 && !include_root_arcs {
                continue;
            }
            arcs += 1;
            let len = tok.head.abs_diff(tok.index);
            if len > 4 {
                long += 1;
                if tok.head > tok.index {
                    long_left += 1;
                }
            }
        }
    }
    let pct_long_arcs = if arcs == 0 { 0.0 } else { long as f64 / arcs as f64 };
    let pct_left_of_long = if long == 0 {
        None
    } else {
        Some(long_left as f64 / long as f64)
    };
    Ok(TreebankStats {
        sentence_count: tb.len(),
        token_count: tokens,
        pct_long_arcs,
        pct_left_of_long,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// The six-word running example used throughout the test suite:
    /// "John and Mary play tennis together" with heads [4,3,1,0,4,4].
    pub fn sample_sentence() -> Sentence {
        Sentence::from_parts(
            &["John", "and", "Mary", "play", "tennis", "together"],
            &[4, 3, 1, 0, 4, 4],
            &["nsubj", "cc", "conj", "root", "obj", "advmod"],
        )
    }

    const FIGURE1_CONLLU: &str = "\
1\tJohn\t_\tPROPN\t_\t_\t4\tnsubj\t_\t_
2\tand\t_\tCCONJ\t_\t_\t3\tcc\t_\t_
3\tMary\t_\tPROPN\t_\t_\t1\tconj\t_\t_
4\tplay\t_\tVERB\t_\t_\t0\troot\t_\t_
5\ttennis\t_\tNOUN\t_\t_\t4\tobj\t_\t_
6\ttogether\t_\tADV\t_\t_\t4\tadvmod\t_\t_
";

    #[test]
    fn parse_sample_sentence_block() {
        let sents = parse_conllu(FIGURE1_CONLLU).unwrap();
        assert_eq!(sents.len(), 1);
        let s = &sents[0];
        assert_eq!(s.heads(), vec![4, 3, 1, 0, 4, 4]);
        assert_eq!(
            s.labels(),
            vec!["nsubj", "cc", "conj", "root", "obj", "advmod"]
        );
    }

    #[test]
    fn parse_empty_input() {
        assert_eq!(parse_conllu("").unwrap(), vec![]);
        assert_eq!(parse_conllu("\n\n").unwrap(), vec![]);
    }

    #[test]
    fn parse_rejects_nine_columns() {
        let bad = "1\tJohn\t_\tPROPN\t_\t_\t2\tnsubj\t_\n";
        match parse_conllu(bad) {
            Err(ConlluError::ColumnCount { line: 1, found: 9 }) => {}
            other => panic!("unexpected: {other:?}"),
        }
    }

    #[test]
    fn parse_rejects_bad_head() {
        let bad = "1\tJohn\t_\tPROPN\t_\t_\tx\tnsubj\t_\t_\n";
        assert!(matches!(
            parse_conllu(bad),
            Err(ConlluError::NonIntegerHead { line: 1, .. })
        ));
        let out_of_range = "1\tJohn\t_\tPROPN\t_\t_\t2\tnsubj\t_\t_\n";
        assert!(matches!(
            parse_conllu(out_of_range),
            Err(ConlluError::HeadOutOfRange { line: 1, head: 2, len: 1 })
        ));
    }

    #[test]
    fn parse_keeps_comments_and_ranges() {
        let text = "# sent_id = s1\n# text = vámonos al mar\n1-2\tvámonos\t_\t_\t_\t_\t_\t_\t_\t_\n1\tvamos\t_\t_\t_\t_\t0\troot\t_\t_\n2\tnos\t_\t_\t_\t_\t1\tobj\t_\t_\n3\tal\t_\t_\t_\t_\t1\tobl\t_\t_\n";
        let sents = parse_conllu(text).unwrap();
        assert_eq!(sents[0].id.as_deref(), Some("s1"));
        assert_eq!(sents[0].len(), 3);
        assert_eq!(sents[0].skipped_lines.len(), 1);
        assert_eq!(sents[0].skipped_lines[0].0, 0);
        // Round trip reproduces the document including the range line.
        let rendered = write_conllu(&sents);
        assert_eq!(parse_conllu(&rendered).unwrap(), sents);
        assert!(rendered.contains("1-2\tvámonos"));
    }

    #[test]
    fn write_round_trips_sample_sentence() {
        let sents = parse_conllu(FIGURE1_CONLLU).unwrap();
        let rendered = write_conllu(&sents);
        assert_eq!(parse_conllu(&rendered).unwrap(), sents);
    }

    #[test]
    fn write_empty_and_missing_lemma() {
        assert_eq!(write_conllu(&[]), "");
        let s = sample_sentence();
        let rendered = write_conllu(&[s]);
        let first = rendered.lines().next().unwrap();
        assert_eq!(first.split('\t').nth(2), Some("_"));
    }

    #[test]
    fn validate_accepts_sample_sentence() {
        assert_eq!(validate_tree(&sample_sentence()), Ok(()));
    }

    #[test]
    fn validate_reports_two_cycle() {
        match validate_heads(&[2, 1]) {
            Err(TreeError::Cycle { nodes }) => assert_eq!(nodes, vec![1, 2]),
            other => panic!("unexpected: {other:?}"),
        }
    }

    #[test]
    fn validate_allows_multiple_roots() {
        assert_eq!(validate_heads(&[0, 0]), Ok(()));
    }

    #[test]
    fn validate_reports_unreachable_tail() {
        // 1 hangs off the 2<->3 cycle: first reported violation is for node 1.
        match validate_heads(&[2, 3, 2]) {
            Err(TreeError::Unreachable { node: 1 }) => {}
            other => panic!("unexpected: {other:?}"),
        }
    }

    #[test]
    fn projectivity_fixtures() {
        assert!(is_projective(&sample_sentence().tree()));
        // Arcs (1,3) and (2,4) interleave.
        assert!(!is_projective(&DepTree::from_heads(vec![3, 1, 0, 2])));
        assert!(is_projective(&DepTree::from_heads(vec![0])));
    }

    /// Independent projectivity oracle: an arc from h to d is projective iff
    /// every word strictly between them descends from h. On valid trees this
    /// is equivalent to the pairwise non-crossing condition.
    fn projective_by_descendants(heads: &[usize]) -> bool {
        let descends = |mut node: usize, ancestor: usize| loop {
            if node == ancestor {
                return true;
            }
            if node == 0 {
                return false;
            }
            node = heads[node - 1];
        };
        for d in 1..=heads.len() {
            let h = heads[d - 1];
            for k in h.min(d) + 1..h.max(d) {
                if !descends(k, h) {
                    return false;
                }
            }
        }
        true
    }

    fn all_valid_trees(n: usize) -> Vec<Vec<usize>> {
        let mut out = Vec::new();
        let mut heads = vec![0usize; n];
        fn rec(i: usize, n: usize, heads: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
            if i == n {
                if validate_heads(heads).is_ok() {
                    out.push(heads.clone());
                }
                return;
            }
            for h in 0..=n {
                if h == i + 1 {
                    continue;
                }
                heads[i] = h;
                rec(i + 1, n, heads, out);
            }
        }
        rec(0, n, &mut heads, &mut out);
        out
    }

    #[test]
    fn validate_matches_bruteforce_enumeration() {
        // Brute force: from every node, follow head links; valid iff every
        // chain reaches 0 within n hops.
        fn brute(heads: &[usize]) -> bool {
            let n = heads.len();
            (1..=n).all(|start| {
                let mut cur = start;
                for _ in 0..=n {
                    if cur == 0 {
                        return true;
                    }
                    cur = heads[cur - 1];
                }
                false
            })
        }
        for n in 1..=5 {
            let mut heads = vec![0usize; n];
            loop {
                assert_eq!(validate_heads(&heads).is_ok(), brute(&heads), "{heads:?}");
                // Odometer over all head arrays in [0, n]^n.
                let mut i = 0;
                loop {
                    if i == n {
                        break;
                    }
                    heads[i] += 1;
                    if heads[i] <= n {
                        break;
                    }
                    heads[i] = 0;
                    i += 1;
                }
                if i == n {
                    break;
                }
            }
        }
    }

    #[test]
    fn projectivity_matches_stack_oracle_exhaustively() {
        for n in 1..=6 {
            for heads in all_valid_trees(n) {
                let tree = DepTree::from_heads(heads.clone());
                assert_eq!(
                    is_projective(&tree),
                    projective_by_descendants(&heads),
                    "{heads:?}"
                );
            }
        }
    }

    #[test]
    fn arc_stats_sample_sentence_has_no_long_arcs() {
        // Longest arc in the example is 4 -> 1 at length 3; root arc 0 -> 4
        // has length 4 which is not > 4.
        let stats = arc_stats(&[sample_sentence()], true).unwrap();
        assert_eq!(stats.sentence_count, 1);
        assert_eq!(stats.token_count, 6);
        assert_eq!(stats.pct_long_arcs, 0.0);
        assert_eq!(stats.pct_left_of_long, None);
    }

    #[test]
    fn arc_stats_counts_root_arcs_at_literal_length() {
        // heads [6,6,6,6,6,0]: arc 6->1 (length 5, leftward) and the root
        // arc 0->6 (length 6, rightward) are long.
        let s = Sentence::from_parts(
            &["a", "b", "c", "d", "e", "f"],
            &[6, 6, 6, 6, 6, 0],
            &["dep"; 6],
        );
        let stats = arc_stats(&[s.clone()], true).unwrap();
        assert!((stats.pct_long_arcs - 2.0 / 6.0).abs() < 1e-12);
        assert_eq!(stats.pct_left_of_long, Some(0.5));
        // Excluding root arcs leaves 5 arcs, one long, all-leftward.
        let stats = arc_stats(&[s], false).unwrap();
        assert!((stats.pct_long_arcs - 1.0 / 5.0).abs() < 1e-12);
        assert_eq!(stats.pct_left_of_long, Some(1.0));
    }

    #[test]
    fn arc_stats_invariant_under_duplication() {
        let one = arc_stats(&[sample_sentence()], true).unwrap();
        let two = arc_stats(&[sample_sentence(), sample_sentence()], true).unwrap();
        assert_eq!(one.pct_long_arcs, two.pct_long_arcs);
        assert_eq!(one.pct_left_of_long, two.pct_left_of_long);
        assert_eq!(two.sentence_count, 2);
    }

    #[test]
    fn arc_stats_rejects_empty() {
        assert_eq!(arc_stats(&[], true), Err(StatsError::EmptyTreebank));
    }
}
