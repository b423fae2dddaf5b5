//! Seeded synthetic treebanks for tests, smoke training runs and
//! examples. Trees are sampled uniformly-ish by attaching words in random
//! order to already-attached words or the root; labels are a function of
//! arc direction, so a model can learn them from structure alone.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::treebank::{is_projective, DepTree, Sentence, Token};

/// Fixed surface vocabulary: `w00`, `w01`, ... with POS tags cycling
/// through four classes by word index.
const POS_TAGS: [&str; 4] = ["N", "V", "A", "D"];

/// Random valid head array: words attach in shuffled order, each picking
/// its head among the root and the words attached before it, which can
/// produce any rooted tree and never a cycle.
pub fn random_tree<R: Rng>(rng: &mut R, n: usize) -> Vec<usize> {
    assert!(n > 0, "a tree needs at least one word");
    let mut order: Vec<usize> = (1..=n).collect();
    order.shuffle(rng);
    let mut heads = vec![0usize; n];
    let mut attached: Vec<usize> = vec![0];
    for &w in &order {
        heads[w - 1] = *attached.choose(rng).expect("root is always attached");
        attached.push(w);
    }
    heads
}

/// Random head array without crossing arcs, by rejection sampling.
pub fn random_projective_tree<R: Rng>(rng: &mut R, n: usize) -> Vec<usize> {
    loop {
        let heads = random_tree(rng, n);
        if is_projective(&DepTree::from_heads(heads.clone())) {
            return heads;
        }
    }
}

#[derive(Debug, Clone)]
pub struct SynthConfig {
    pub sentences: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub vocab_words: usize,
    pub projective: bool,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            sentences: 32,
            min_len: 3,
            max_len: 8,
            vocab_words: 20,
            projective: false,
        }
    }
}

/// Label of an arc, decidable from positions alone: dependents left of
/// their head are `lmod`, right of it `rmod`, and children of the root
/// `root`.
pub fn arc_label(head: usize, dep: usize) -> &'static str {
    if head == 0 {
        "root"
    } else if dep < head {
        "lmod"
    } else {
        "rmod"
    }
}

/// Deterministic corpus for a seed: same seed, same sentences, ids
/// `synth-1` onward.
pub fn corpus(config: &SynthConfig, seed: u64) -> Vec<Sentence> {
    assert!(config.sentences > 0);
    assert!(0 < config.min_len && config.min_len <= config.max_len);
    assert!(config.vocab_words > 0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(config.sentences);
    for s in 0..config.sentences {
        let n = rng.gen_range(config.min_len..=config.max_len);
        let heads = if config.projective {
            random_projective_tree(&mut rng, n)
        } else {
            random_tree(&mut rng, n)
        };
        let tokens = (1..=n)
            .map(|i| {
                let word = rng.gen_range(0..config.vocab_words);
                let form = format!("w{word:02}");
                let head = heads[i - 1];
                Token::new(i, &form, POS_TAGS[word % POS_TAGS.len()], head, arc_label(head, i))
            })
            .collect();
        out.push(Sentence {
            id: Some(format!("synth-{}", s + 1)),
            comments: Vec::new(),
            tokens,
            skipped_lines: Vec::new(),
        });
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::treebank::{validate_tree, write_conllu};
    use std::collections::HashSet;

    #[test]
    fn corpora_are_seed_deterministic() {
        let cfg = SynthConfig::default();
        let a = corpus(&cfg, 9);
        let b = corpus(&cfg, 9);
        let c = corpus(&cfg, 10);
        assert_eq!(write_conllu(&a), write_conllu(&b));
        assert_ne!(write_conllu(&a), write_conllu(&c));
    }

    #[test]
    fn every_sentence_is_a_valid_tree_in_range() {
        let cfg = SynthConfig {
            sentences: 50,
            min_len: 2,
            max_len: 9,
            ..SynthConfig::default()
        };
        for s in corpus(&cfg, 4) {
            validate_tree(&s).unwrap();
            assert!((2..=9).contains(&s.len()));
        }
    }

    #[test]
    fn vocabulary_and_pos_are_bounded_and_aligned() {
        let cfg = SynthConfig {
            sentences: 60,
            vocab_words: 5,
            ..SynthConfig::default()
        };
        let mut forms = HashSet::new();
        for s in corpus(&cfg, 7) {
            for t in &s.tokens {
                forms.insert(t.form.clone());
                let idx: usize = t.form[1..].parse().unwrap();
                assert!(idx < 5);
                assert_eq!(t.upos, POS_TAGS[idx % 4]);
            }
        }
        assert!(forms.len() <= 5);
        assert!(forms.len() >= 4, "tiny vocab should be nearly covered");
    }

    #[test]
    fn labels_encode_direction() {
        for s in corpus(&SynthConfig::default(), 12) {
            for t in &s.tokens {
                let want = if t.head == 0 {
                    "root"
                } else if t.index < t.head {
                    "lmod"
                } else {
                    "rmod"
                };
                assert_eq!(t.deprel, want);
            }
        }
    }

    #[test]
    fn projective_mode_yields_projective_trees() {
        let cfg = SynthConfig {
            sentences: 40,
            projective: true,
            ..SynthConfig::default()
        };
        for s in corpus(&cfg, 3) {
            assert!(is_projective(&DepTree::from_heads(s.heads())));
        }
    }

    #[test]
    fn random_trees_cover_nontrivial_shapes() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut shapes = HashSet::new();
        for _ in 0..200 {
            shapes.insert(random_tree(&mut rng, 4));
        }
        // 5^3 = 125 trees over 4 words plus root by the rooted-forest count.
        assert!(shapes.len() > 40, "only {} shapes", shapes.len());
        for heads in shapes {
            crate::treebank::validate_heads(&heads).unwrap();
        }
    }
}
