//! Decoding: run the transition system with the trained scorer, choosing
//! each focus word's parent greedily or with beam search over parent
//! sequences. Labels are assigned per arc once the tree is complete.

use thiserror::Error;

use crate::autodiff::{AdError, Graph, Scalar};
use crate::model::{DecoderCursor, Encoding, Model, ModelError, TokenIds};
use crate::transition::{ParserState, TransitionError};

#[derive(Debug, Error)]
pub enum InferError {
    #[error("beam size must be at least 1")]
    BadBeam,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Transition(#[from] TransitionError),
    #[error(transparent)]
    Autodiff(#[from] AdError),
}

impl InferError {
    pub fn exit_code(&self) -> i32 {
        match self {
            InferError::BadBeam => 1,
            InferError::Model(e) => e.exit_code(),
            InferError::Transition(_) => 2,
            InferError::Autodiff(_) => 3,
        }
    }
}

/// Decoding controls. `beam` of 1 is greedy search; `projective`
/// restricts every attachment to non-crossing arcs, backtracking over
/// earlier choices when a prefix cannot be completed, so the output tree
/// is always projective; `single_root` stops offering the root as a
/// parent once one word is attached to it.
#[derive(Debug, Clone)]
pub struct DecodeOptions {
    pub beam: usize,
    pub projective: bool,
    pub single_root: bool,
}

impl Default for DecodeOptions {
    fn default() -> Self {
        DecodeOptions {
            beam: 1,
            projective: false,
            single_root: false,
        }
    }
}

/// One decoded sentence: the parent of each word, a label id per word and
/// the summed log-probability of the chosen parent sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct Parse {
    pub heads: Vec<usize>,
    pub label_ids: Vec<usize>,
    pub log_prob: f64,
}

/// Log-softmax restricted to legal positions: illegal entries get
/// negative infinity and no probability mass.
pub fn masked_log_probs(scores: &[f64], legal: &[bool]) -> Vec<f64> {
    debug_assert_eq!(scores.len(), legal.len());
    let m = scores
        .iter()
        .zip(legal)
        .filter(|(_, &l)| l)
        .map(|(&s, _)| s)
        .fold(f64::NEG_INFINITY, f64::max);
    let lse = m + scores
        .iter()
        .zip(legal)
        .filter(|(_, &l)| l)
        .map(|(&s, _)| (s - m).exp())
        .sum::<f64>()
        .ln();
    scores
        .iter()
        .zip(legal)
        .map(|(&s, &l)| if l { s - lse } else { f64::NEG_INFINITY })
        .collect()
}

fn scores_to_f64<F: Scalar>(g: &Graph<F>, var: crate::autodiff::Var) -> Result<Vec<f64>, AdError> {
    Ok(g.value(var)?.data().iter().map(|&x| x.to_f64()).collect())
}

fn would_cross(state: &ParserState, p: usize, focus: usize, n: usize) -> bool {
    (1..=n).any(|d| {
        state
            .head_of(d)
            .map_or(false, |h| crate::treebank::arcs_cross((p, focus), (h, d)))
    })
}

/// Candidate mask for the current focus. Without the projective flag this
/// is the acyclic set, minus the root under `single_root` once used
/// (never empty: the acyclic set is `{0}` only while the root is still
/// unused). With the projective flag, crossing arcs are also dropped with
/// no fallback, so the mask can be empty; callers backtrack.
fn candidate_mask(
    state: &ParserState,
    opts: &DecodeOptions,
    root_used: bool,
    n: usize,
) -> Result<Vec<bool>, TransitionError> {
    let legal = state.legal_parents(false)?;
    let mut mask = vec![false; n + 1];
    for p in &legal {
        mask[*p] = true;
    }
    if opts.projective {
        let focus = state.focus().expect("legal_parents checked focus");
        for p in 0..=n {
            if mask[p] && would_cross(state, p, focus, n) {
                mask[p] = false;
            }
        }
        if opts.single_root && root_used {
            mask[0] = false;
        }
    } else if opts.single_root && root_used && mask[0] && legal.len() > 1 {
        mask[0] = false;
    }
    Ok(mask)
}

/// Legal positions for one step, best first: ordered by step
/// log-probability, ties toward the smaller position.
fn ranked_candidates(lp: &[f64], mask: &[bool]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..mask.len()).filter(|&p| mask[p]).collect();
    order.sort_by(|&a, &b| lp[b].partial_cmp(&lp[a]).unwrap().then(a.cmp(&b)));
    order
}

/// Depth-first decode used under the projective flag: take the greedy
/// choice at every step and backtrack to the next-best candidate whenever
/// a prefix leaves a later focus word fenced in with no non-crossing
/// parent. From the initial state a completion always exists (arcs
/// between adjacent positions cross nothing), so the search returns a
/// full history.
fn dfs_decode<C, S>(
    kind: crate::transition::TransitionKind,
    n: usize,
    opts: &DecodeOptions,
    start: C,
    score_step: &mut S,
) -> Result<(Vec<usize>, f64), InferError>
where
    S: FnMut(&ParserState, &C) -> Result<(Vec<f64>, C), InferError>,
{
    let state = ParserState::new(kind, n)?;
    let mut history = Vec::with_capacity(n);
    let total = dfs_step(&state, &start, false, &mut history, opts, score_step)?
        .expect("a projective completion always exists from the initial state");
    Ok((history, total))
}

fn dfs_step<C, S>(
    state: &ParserState,
    cursor: &C,
    root_used: bool,
    history: &mut Vec<usize>,
    opts: &DecodeOptions,
    score_step: &mut S,
) -> Result<Option<f64>, InferError>
where
    S: FnMut(&ParserState, &C) -> Result<(Vec<f64>, C), InferError>,
{
    if state.is_finished() {
        return Ok(Some(0.0));
    }
    let n = state.len();
    let (scores, next) = score_step(state, cursor)?;
    let mask = candidate_mask(state, opts, root_used, n)?;
    let lp = masked_log_probs(&scores, &mask);
    for p in ranked_candidates(&lp, &mask) {
        let mut s2 = state.clone();
        s2.apply_attach(p, false)?;
        history.push(p);
        if let Some(rest) = dfs_step(&s2, &next, root_used || p == 0, history, opts, score_step)? {
            return Ok(Some(lp[p] + rest));
        }
        history.pop();
    }
    Ok(None)
}

fn history_to_heads(
    kind: crate::transition::TransitionKind,
    n: usize,
    history: &[usize],
) -> Result<Vec<usize>, InferError> {
    let mut state = ParserState::new(kind, n)?;
    for &p in history {
        state.apply_attach(p, false)?;
    }
    Ok(state.into_heads())
}

fn dfs_with_model<F: Scalar>(
    model: &Model<F>,
    g: &mut Graph<F>,
    enc: &Encoding,
    n: usize,
    opts: &DecodeOptions,
) -> Result<(Vec<usize>, f64), InferError> {
    let start = model.start_decoder(g, enc);
    let mut score_step = |state: &ParserState, cursor: &DecoderCursor| {
        let focus = state.focus().expect("scored state is unfinished");
        let snap = state.dependent_snapshot();
        let (scores, next) = model.decode_step(g, enc, cursor, focus, &snap);
        Ok((scores_to_f64(g, scores)?, next))
    };
    dfs_decode(model.config.transition, n, opts, start, &mut score_step)
}

struct BeamItem {
    state: ParserState,
    cursor: DecoderCursor,
    history: Vec<usize>,
    log_prob: f64,
    root_used: bool,
    /// True for the one item per step that took the greedy choice at
    /// every step so far; it is never pruned, so widening the beam can
    /// only improve the final score.
    greedy_chain: bool,
}

struct Candidate {
    from: usize,
    parent: usize,
    total: f64,
    greedy_chain: bool,
}

fn assign_labels<F: Scalar>(
    model: &Model<F>,
    g: &mut Graph<F>,
    enc: &Encoding,
    heads: &[usize],
) -> Result<Vec<usize>, InferError> {
    let mut labels = Vec::with_capacity(heads.len());
    for dep in 1..=heads.len() {
        let scores = model.label_scores(g, enc, heads[dep - 1], dep);
        let values = scores_to_f64(g, scores)?;
        let mut best = 0;
        for (i, &v) in values.iter().enumerate() {
            if v > values[best] {
                best = i;
            }
        }
        labels.push(best);
    }
    Ok(labels)
}

/// Beam search over parent sequences. Each step expands every live item
/// with its best `beam` legal parents by step log-probability, then keeps
/// the `beam` best extensions by cumulative log-probability, breaking
/// ties toward the lexicographically smallest parent history. The greedy
/// chain is additionally retained even when it falls out of the top
/// `beam`. With `beam` = 1 this is exactly greedy search. Under the
/// projective flag, items whose focus word has no non-crossing parent are
/// dropped; if that kills the whole beam, or the greedy chain, the
/// backtracking search supplies (or challenges) the answer, so the beam
/// never returns worse than greedy.
pub fn parse_sentence<F: Scalar>(
    model: &Model<F>,
    tokens: &[TokenIds],
    ext: Option<&[Vec<f64>]>,
    opts: &DecodeOptions,
) -> Result<Parse, InferError> {
    if opts.beam == 0 {
        return Err(InferError::BadBeam);
    }
    let n = tokens.len();
    if n == 0 {
        return Err(InferError::Model(ModelError::EmptySentence));
    }
    let mut g = Graph::new();
    let enc = model.encode(&mut g, tokens, ext, None)?;
    let start = model.start_decoder(&mut g, &enc);
    let mut items = vec![BeamItem {
        state: ParserState::new(model.config.transition, n)?,
        cursor: start,
        history: Vec::new(),
        log_prob: 0.0,
        root_used: false,
        greedy_chain: true,
    }];

    let mut greedy_died = false;
    for _ in 0..n {
        let mut candidates: Vec<Candidate> = Vec::new();
        let mut cursors: Vec<DecoderCursor> = Vec::with_capacity(items.len());
        for (idx, item) in items.iter().enumerate() {
            let focus = item.state.focus().expect("lockstep items unfinished");
            let snap = item.state.dependent_snapshot();
            let (scores, next) = model.decode_step(&mut g, &enc, &item.cursor, focus, &snap);
            let mask = candidate_mask(&item.state, opts, item.root_used, n)?;
            let lp = masked_log_probs(&scores_to_f64(&g, scores)?, &mask);
            cursors.push(next);

            let order = ranked_candidates(&lp, &mask);
            if order.is_empty() {
                continue; // projective dead end for this item
            }
            let greedy_parent = order[0];
            for &p in order.iter().take(opts.beam) {
                candidates.push(Candidate {
                    from: idx,
                    parent: p,
                    total: item.log_prob + lp[p],
                    greedy_chain: item.greedy_chain && p == greedy_parent,
                });
            }
        }

        if candidates.is_empty() {
            // Every beam item is fenced in; restart with backtracking.
            let (history, log_prob) = dfs_with_model(model, &mut g, &enc, n, opts)?;
            let heads = history_to_heads(model.config.transition, n, &history)?;
            let label_ids = assign_labels(model, &mut g, &enc, &heads)?;
            return Ok(Parse {
                heads,
                label_ids,
                log_prob,
            });
        }
        if !candidates.iter().any(|c| c.greedy_chain) {
            greedy_died = true;
        }

        candidates.sort_by(|a, b| {
            b.total.partial_cmp(&a.total).unwrap().then_with(|| {
                let ha = items[a.from].history.iter().chain(std::iter::once(&a.parent));
                let hb = items[b.from].history.iter().chain(std::iter::once(&b.parent));
                ha.cmp(hb)
            })
        });
        let keep = opts.beam.min(candidates.len());
        let mut chosen: Vec<usize> = (0..keep).collect();
        if let Some(gi) = candidates.iter().position(|c| c.greedy_chain) {
            if !chosen.contains(&gi) {
                chosen.push(gi);
            }
        }

        let mut next_items = Vec::with_capacity(chosen.len());
        for ci in chosen {
            let c = &candidates[ci];
            let src = &items[c.from];
            let mut state = src.state.clone();
            state.apply_attach(c.parent, false)?;
            let mut history = src.history.clone();
            history.push(c.parent);
            next_items.push(BeamItem {
                state,
                cursor: cursors[c.from].clone(),
                history,
                log_prob: c.total,
                root_used: src.root_used || c.parent == 0,
                greedy_chain: c.greedy_chain,
            });
        }
        items = next_items;
    }

    let best = items
        .iter()
        .enumerate()
        .min_by(|(_, a), (_, b)| {
            b.log_prob
                .partial_cmp(&a.log_prob)
                .unwrap()
                .then_with(|| a.history.cmp(&b.history))
        })
        .map(|(i, _)| i)
        .expect("beam never empties");
    let winner = items.swap_remove(best);
    let mut heads = winner.state.into_heads();
    let mut log_prob = winner.log_prob;
    if greedy_died {
        // The greedy chain hit a projective dead end, so a narrower beam
        // may have backtracked to a better-scoring sequence; compare and
        // keep the better of the two.
        let (history, dfs_lp) = dfs_with_model(model, &mut g, &enc, n, opts)?;
        if dfs_lp > log_prob || (dfs_lp == log_prob && history < winner.history) {
            heads = history_to_heads(model.config.transition, n, &history)?;
            log_prob = dfs_lp;
        }
    }
    let label_ids = assign_labels(model, &mut g, &enc, &heads)?;
    Ok(Parse {
        heads,
        label_ids,
        log_prob,
    })
}

/// Greedy decoding: the beam of width 1.
pub fn greedy_parse<F: Scalar>(
    model: &Model<F>,
    tokens: &[TokenIds],
    ext: Option<&[Vec<f64>]>,
    projective: bool,
    single_root: bool,
) -> Result<Parse, InferError> {
    parse_sentence(
        model,
        tokens,
        ext,
        &DecodeOptions {
            beam: 1,
            projective,
            single_root,
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{FusionKind, GateKind, ModelConfig, Vocab};
    use crate::synth::{corpus, SynthConfig};
    use crate::transition::TransitionKind;
    use crate::treebank::{is_projective, validate_heads, DepTree, Sentence};

    fn kinds() -> [(TransitionKind, FusionKind); 3] {
        [
            (TransitionKind::LeftToRight, FusionKind::LAdapted),
            (TransitionKind::RightToLeft, FusionKind::RAdapted),
            (TransitionKind::OutsideIn, FusionKind::Full),
        ]
    }

    fn build_model(kind: TransitionKind, fusion: FusionKind, seed: u64) -> (Model<f64>, Vec<Sentence>) {
        let sents = corpus(&SynthConfig::default(), 21);
        let vocab = Vocab::build(&sents);
        let config = ModelConfig::micro(kind, fusion, GateKind::Gate1);
        (Model::new(config, vocab, seed).unwrap(), sents)
    }

    /// Reference best-sequence search: expand every legal parent at every
    /// step, no pruning, same masking and tie rules as the beam.
    fn exhaustive_best(
        model: &Model<f64>,
        tokens: &[crate::model::TokenIds],
        opts: &DecodeOptions,
    ) -> (Vec<usize>, f64) {
        let n = tokens.len();
        let mut g = Graph::new();
        let enc = model.encode(&mut g, tokens, None, None).unwrap();
        let start = model.start_decoder(&mut g, &enc);
        let state = ParserState::new(model.config.transition, n).unwrap();
        let mut best: Option<(f64, Vec<usize>)> = None;
        let mut stack = vec![(state, start, Vec::<usize>::new(), 0.0, false)];
        while let Some((state, cursor, history, total, root_used)) = stack.pop() {
            if state.is_finished() {
                let better = match &best {
                    None => true,
                    Some((bt, bh)) => {
                        total > *bt || (total == *bt && history < *bh)
                    }
                };
                if better {
                    best = Some((total, history));
                }
                continue;
            }
            let focus = state.focus().unwrap();
            let snap = state.dependent_snapshot();
            let (scores, next) = model.decode_step(&mut g, &enc, &cursor, focus, &snap);
            let mask = candidate_mask(&state, opts, root_used, n).unwrap();
            let lp = masked_log_probs(&scores_to_f64(&g, scores).unwrap(), &mask);
            for p in 0..=n {
                if !mask[p] {
                    continue;
                }
                let mut s2 = state.clone();
                s2.apply_attach(p, false).unwrap();
                let mut h2 = history.clone();
                h2.push(p);
                stack.push((s2, next.clone(), h2, total + lp[p], root_used || p == 0));
            }
        }
        let (total, history) = best.unwrap();
        // Replay the history to recover heads in word order.
        let mut state = ParserState::new(model.config.transition, n).unwrap();
        for &p in &history {
            state.apply_attach(p, false).unwrap();
        }
        (state.into_heads(), total)
    }

    #[test]
    fn beam_width_one_is_greedy() {
        for (kind, fusion) in kinds() {
            let (model, sents) = build_model(kind, fusion, 5);
            for s in sents.iter().take(6) {
                let toks = model.vocab.encode_sentence(s);
                for single_root in [false, true] {
                    let g = greedy_parse(&model, &toks, None, false, single_root).unwrap();
                    let b = parse_sentence(
                        &model,
                        &toks,
                        None,
                        &DecodeOptions {
                            beam: 1,
                            projective: false,
                            single_root,
                        },
                    )
                    .unwrap();
                    assert_eq!(g, b);
                }
            }
        }
    }

    #[test]
    fn wide_beam_matches_exhaustive_search_on_short_sentences() {
        let short = corpus(
            &SynthConfig {
                sentences: 8,
                min_len: 2,
                max_len: 4,
                ..SynthConfig::default()
            },
            33,
        );
        for (kind, fusion) in kinds() {
            let vocab = Vocab::build(&short);
            let config = ModelConfig::micro(kind, fusion, GateKind::Gate2);
            let model: Model<f64> = Model::new(config, vocab, 17).unwrap();
            for s in &short {
                let toks = model.vocab.encode_sentence(s);
                let opts = DecodeOptions {
                    beam: 64,
                    projective: false,
                    single_root: false,
                };
                let got = parse_sentence(&model, &toks, None, &opts).unwrap();
                let (want_heads, want_total) = exhaustive_best(&model, &toks, &opts);
                assert_eq!(got.heads, want_heads);
                assert!((got.log_prob - want_total).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn wider_beams_never_score_worse() {
        for (kind, fusion) in kinds() {
            let (model, sents) = build_model(kind, fusion, 23);
            for s in &sents {
                let toks = model.vocab.encode_sentence(s);
                for projective in [false, true] {
                    let narrow = parse_sentence(
                        &model,
                        &toks,
                        None,
                        &DecodeOptions {
                            beam: 1,
                            projective,
                            single_root: false,
                        },
                    )
                    .unwrap();
                    let wide = parse_sentence(
                        &model,
                        &toks,
                        None,
                        &DecodeOptions {
                            beam: 4,
                            projective,
                            single_root: false,
                        },
                    )
                    .unwrap();
                    assert!(
                        wide.log_prob >= narrow.log_prob - 1e-12,
                        "beam 4 {} < beam 1 {} (projective {projective})",
                        wide.log_prob,
                        narrow.log_prob
                    );
                }
            }
        }
    }

    #[test]
    fn every_parse_is_a_valid_tree() {
        for (kind, fusion) in kinds() {
            let (model, sents) = build_model(kind, fusion, 77);
            for (i, s) in sents.iter().enumerate() {
                let toks = model.vocab.encode_sentence(s);
                let opts = DecodeOptions {
                    beam: 1 + (i % 3),
                    projective: i % 2 == 0,
                    single_root: i % 3 == 0,
                };
                let parse = parse_sentence(&model, &toks, None, &opts).unwrap();
                validate_heads(&parse.heads).unwrap();
                if opts.projective {
                    assert!(is_projective(&DepTree::from_heads(parse.heads.clone())));
                }
                assert_eq!(parse.label_ids.len(), s.len());
                assert!(parse
                    .label_ids
                    .iter()
                    .all(|&l| l < model.vocab.label_count()));
            }
        }
    }

    #[test]
    fn projective_flag_always_yields_projective_trees() {
        for (kind, fusion) in kinds() {
            let (model, sents) = build_model(kind, fusion, 3);
            for (i, s) in sents.iter().enumerate() {
                let toks = model.vocab.encode_sentence(s);
                let opts = DecodeOptions {
                    beam: 1 + (i % 3),
                    projective: true,
                    single_root: i % 2 == 0,
                };
                let parse = parse_sentence(&model, &toks, None, &opts).unwrap();
                validate_heads(&parse.heads).unwrap();
                assert!(
                    is_projective(&DepTree::from_heads(parse.heads.clone())),
                    "{kind:?} produced crossing arcs: {:?}",
                    parse.heads
                );
                // Stronger than the final tree being projective: each arc
                // already avoids crossings at its own step of the replay.
                let n = toks.len();
                let mut state = ParserState::new(kind, n).unwrap();
                while !state.is_finished() {
                    let focus = state.focus().unwrap();
                    let p = parse.heads[focus - 1];
                    assert!(!would_cross(&state, p, focus, n));
                    state.apply_attach(p, false).unwrap();
                }
                if opts.single_root {
                    assert_eq!(parse.heads.iter().filter(|&&h| h == 0).count(), 1);
                }
            }
        }
    }

    #[test]
    fn projective_search_backtracks_out_of_dead_ends() {
        // Score table that walks outside-in decoding into a fenced-in
        // state: after 1<-0, 5<-0, 2<-3, 4<-2, word 3 has no non-crossing
        // acyclic parent (0, 1 and 5 cross the arc 4<-2; 2 and 4 are its
        // own descendants), so the search must revise an earlier choice.
        let n = 5;
        let prefer = |focus: usize| match focus {
            2 => 3,
            4 => 2,
            _ => 0,
        };
        let mut calls = 0;
        let mut score_step = |state: &ParserState, _: &()| -> Result<(Vec<f64>, ()), InferError> {
            calls += 1;
            let mut scores = vec![0.0; n + 1];
            scores[prefer(state.focus().unwrap())] = 10.0;
            Ok((scores, ()))
        };
        let opts = DecodeOptions {
            beam: 1,
            projective: true,
            single_root: false,
        };
        let (history, log_prob) =
            dfs_decode(TransitionKind::OutsideIn, n, &opts, (), &mut score_step).unwrap();
        // Focus order is 1, 5, 2, 4, 3. The greedy prefix 0, 0, 3 stands,
        // the choice for word 4 backs off from the fenced-in parent 2 to
        // the runner-up 0, and word 3 then attaches to the root.
        assert_eq!(history, vec![0, 0, 3, 0, 0]);
        assert!(calls > n, "search finished without backtracking");
        let mut state = ParserState::new(TransitionKind::OutsideIn, n).unwrap();
        for &p in &history {
            state.apply_attach(p, false).unwrap();
        }
        let heads = state.into_heads();
        assert_eq!(heads, vec![0, 3, 0, 0, 0]);
        assert!(is_projective(&DepTree::from_heads(heads)));
        assert!(log_prob.is_finite() && log_prob < 0.0);
    }

    #[test]
    fn single_root_leaves_exactly_one_root_child() {
        for (kind, fusion) in kinds() {
            let (model, sents) = build_model(kind, fusion, 41);
            for s in &sents {
                let toks = model.vocab.encode_sentence(s);
                for beam in [1, 3] {
                    let parse = parse_sentence(
                        &model,
                        &toks,
                        None,
                        &DecodeOptions {
                            beam,
                            projective: false,
                            single_root: true,
                        },
                    )
                    .unwrap();
                    let roots = parse.heads.iter().filter(|&&h| h == 0).count();
                    assert_eq!(roots, 1, "{:?}", parse.heads);
                }
            }
        }
    }

    #[test]
    fn reported_score_matches_a_replay() {
        for (kind, fusion) in kinds() {
            let (model, sents) = build_model(kind, fusion, 59);
            for s in sents.iter().take(8) {
                let toks = model.vocab.encode_sentence(s);
                let opts = DecodeOptions {
                    beam: 3,
                    projective: false,
                    single_root: false,
                };
                let parse = parse_sentence(&model, &toks, None, &opts).unwrap();

                // Recompute the sequence score by forcing the returned heads.
                let n = toks.len();
                let mut g = Graph::new();
                let enc = model.encode(&mut g, &toks, None, None).unwrap();
                let mut cursor = model.start_decoder(&mut g, &enc);
                let mut state = ParserState::new(kind, n).unwrap();
                let mut total = 0.0;
                let mut root_used = false;
                while !state.is_finished() {
                    let focus = state.focus().unwrap();
                    let snap = state.dependent_snapshot();
                    let (scores, next) =
                        model.decode_step(&mut g, &enc, &cursor, focus, &snap);
                    let mask = candidate_mask(&state, &opts, root_used, n).unwrap();
                    let lp = masked_log_probs(&scores_to_f64(&g, scores).unwrap(), &mask);
                    let p = parse.heads[focus - 1];
                    total += lp[p];
                    root_used = root_used || p == 0;
                    state.apply_attach(p, false).unwrap();
                    cursor = next;
                }
                assert!((total - parse.log_prob).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn zero_model_exposes_tie_rules() {
        let sents = corpus(&SynthConfig::default(), 2);
        let vocab = Vocab::build(&sents);
        let config = ModelConfig::micro(
            TransitionKind::LeftToRight,
            FusionKind::Sequential,
            GateKind::Gate1,
        );
        let mut model: Model<f64> = Model::new(config, vocab, 1).unwrap();
        model.params.zero_all();
        let toks: Vec<_> = (0..4)
            .map(|_| model.vocab.encode_token("w01", "V"))
            .collect();
        // All scores tie, so greedy picks the smallest legal position:
        // everything attaches to the root.
        let flat = greedy_parse(&model, &toks, None, false, false).unwrap();
        assert_eq!(flat.heads, vec![0, 0, 0, 0]);
        assert!((flat.log_prob
            - (1.0f64 / 4.0).ln()
            - (1.0f64 / 4.0).ln()
            - (1.0f64 / 4.0).ln()
            - (1.0f64 / 4.0).ln())
        .abs()
            < 1e-12);
        // Under single-root the root is spent on word 1 and the rest
        // cascade onto the smallest legal non-root position.
        let single = greedy_parse(&model, &toks, None, false, true).unwrap();
        assert_eq!(single.heads, vec![0, 1, 1, 1]);
        // Ties in the labeler resolve to the smallest label id.
        assert!(flat.label_ids.iter().all(|&l| l == 0));
    }

    #[test]
    fn beam_zero_is_rejected_and_empty_input_fails() {
        let (model, sents) = build_model(TransitionKind::OutsideIn, FusionKind::Full, 2);
        let toks = model.vocab.encode_sentence(&sents[0]);
        let err = parse_sentence(
            &model,
            &toks,
            None,
            &DecodeOptions {
                beam: 0,
                ..DecodeOptions::default()
            },
        )
        .unwrap_err();
        assert!(matches!(err, InferError::BadBeam));
        assert_eq!(err.exit_code(), 1);
        let err = parse_sentence(&model, &[], None, &DecodeOptions::default()).unwrap_err();
        assert!(matches!(err, InferError::Model(ModelError::EmptySentence)));
        assert_eq!(err.exit_code(), 2);
    }
}
