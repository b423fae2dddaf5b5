use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::treebank::Sentence;

/// Reserved id 0 in every map.
pub const PAD_ID: usize = 0;
/// Reserved id 1 in every map.
pub const UNK_ID: usize = 1;
/// Character CNN input cap: longer forms are truncated.
pub const MAX_WORD_CHARS: usize = 64;

/// String-to-id maps for words, characters, POS tags and dependency
/// labels, built from the training treebank. Ids are dense from 0 with
/// PAD and UNK reserved; entries are sorted so the same corpus always
/// yields the same ids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Vocab {
    words: Vec<String>,
    word_freq: Vec<u64>,
    chars: Vec<char>,
    pos: Vec<String>,
    labels: Vec<String>,
    #[serde(skip)]
    word_map: HashMap<String, usize>,
    #[serde(skip)]
    char_map: HashMap<char, usize>,
    #[serde(skip)]
    pos_map: HashMap<String, usize>,
    #[serde(skip)]
    label_map: HashMap<String, usize>,
}

/// One token mapped to ids; `chars` is already truncated.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenIds {
    pub word: usize,
    pub chars: Vec<usize>,
    pub pos: usize,
}

impl Vocab {
    pub fn build(sentences: &[Sentence]) -> Vocab {
        let mut word_counts: BTreeMap<&str, u64> = BTreeMap::new();
        let mut char_set: BTreeSet<char> = BTreeSet::new();
        let mut pos_set: BTreeSet<&str> = BTreeSet::new();
        let mut label_set: BTreeSet<&str> = BTreeSet::new();
        for s in sentences {
            for tok in &s.tokens {
                *word_counts.entry(tok.form.as_str()).or_insert(0) += 1;
                char_set.extend(tok.form.chars().take(MAX_WORD_CHARS));
                pos_set.insert(tok.upos.as_str());
                label_set.insert(tok.deprel.as_str());
            }
        }

        let mut words = vec!["<pad>".to_string(), "<unk>".to_string()];
        let mut word_freq = vec![0u64, 0u64];
        for (w, c) in &word_counts {
            words.push((*w).to_string());
            word_freq.push(*c);
        }
        // NUL stands in for the two reserved char slots; it cannot occur in
        // a CoNLL-U form column.
        let mut chars = vec!['\0', '\0'];
        chars.extend(char_set.iter().copied());
        let reserved = |set: &BTreeSet<&str>| {
            let mut v = vec!["<pad>".to_string(), "<unk>".to_string()];
            v.extend(set.iter().map(|s| s.to_string()));
            v
        };
        let mut vocab = Vocab {
            words,
            word_freq,
            chars,
            pos: reserved(&pos_set),
            labels: reserved(&label_set),
            word_map: HashMap::new(),
            char_map: HashMap::new(),
            pos_map: HashMap::new(),
            label_map: HashMap::new(),
        };
        vocab.rebuild_index();
        vocab
    }

    /// Recompute the lookup maps from the id lists; required after
    /// deserializing, which skips them.
    pub fn rebuild_index(&mut self) {
        self.word_map = index_of(&self.words);
        self.pos_map = index_of(&self.pos);
        self.label_map = index_of(&self.labels);
        self.char_map = self
            .chars
            .iter()
            .enumerate()
            .skip(2)
            .map(|(i, c)| (*c, i))
            .collect();
    }

    pub fn word_count(&self) -> usize {
        self.words.len()
    }

    pub fn char_count(&self) -> usize {
        self.chars.len()
    }

    pub fn pos_count(&self) -> usize {
        self.pos.len()
    }

    pub fn label_count(&self) -> usize {
        self.labels.len()
    }

    pub fn word_id(&self, form: &str) -> usize {
        *self.word_map.get(form).unwrap_or(&UNK_ID)
    }

    pub fn char_id(&self, c: char) -> usize {
        *self.char_map.get(&c).unwrap_or(&UNK_ID)
    }

    pub fn pos_id(&self, upos: &str) -> usize {
        *self.pos_map.get(upos).unwrap_or(&UNK_ID)
    }

    pub fn label_id(&self, deprel: &str) -> usize {
        *self.label_map.get(deprel).unwrap_or(&UNK_ID)
    }

    pub fn label_name(&self, id: usize) -> &str {
        &self.labels[id]
    }

    pub fn word_frequency(&self, word_id: usize) -> u64 {
        self.word_freq[word_id]
    }

    /// Probability of replacing a training token with UNK. The default
    /// discounts frequent words (`base / (base + freq)`); the flat variant
    /// uses `base` for every token.
    pub fn replacement_prob(&self, word_id: usize, base: f64, flat: bool) -> f64 {
        if flat {
            base
        } else {
            base / (base + self.word_freq[word_id] as f64)
        }
    }

    pub fn encode_token(&self, form: &str, upos: &str) -> TokenIds {
        TokenIds {
            word: self.word_id(form),
            chars: form
                .chars()
                .take(MAX_WORD_CHARS)
                .map(|c| self.char_id(c))
                .collect(),
            pos: self.pos_id(upos),
        }
    }

    pub fn encode_sentence(&self, sentence: &Sentence) -> Vec<TokenIds> {
        sentence
            .tokens
            .iter()
            .map(|t| self.encode_token(&t.form, &t.upos))
            .collect()
    }

    pub fn label_ids(&self, sentence: &Sentence) -> Vec<usize> {
        sentence
            .tokens
            .iter()
            .map(|t| self.label_id(&t.deprel))
            .collect()
    }
}

fn index_of(items: &[String]) -> HashMap<String, usize> {
    items
        .iter()
        .enumerate()
        .skip(2)
        .map(|(i, s)| (s.clone(), i))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::treebank::parse_conllu;

    fn sample() -> Vec<Sentence> {
        let text = "\
1\tthe\t_\tDET\t_\t_\t2\tdet\t_\t_
2\tcat\t_\tNOUN\t_\t_\t3\tnsubj\t_\t_
3\tsat\t_\tVERB\t_\t_\t0\troot\t_\t_

1\tthe\t_\tDET\t_\t_\t2\tdet\t_\t_
2\tdog\t_\tNOUN\t_\t_\t0\troot\t_\t_
";
        parse_conllu(text).unwrap()
    }

    #[test]
    fn ids_dense_and_reserved() {
        let v = Vocab::build(&sample());
        // pad, unk, cat, dog, sat, the
        assert_eq!(v.word_count(), 6);
        assert_eq!(v.word_id("cat"), 2);
        assert_eq!(v.word_id("dog"), 3);
        assert_eq!(v.word_id("sat"), 4);
        assert_eq!(v.word_id("the"), 5);
        assert_eq!(v.word_id("zebra"), UNK_ID);
        assert_eq!(v.pos_count(), 2 + 3);
        assert_eq!(v.label_count(), 2 + 3);
        assert_eq!(v.label_id("root"), v.label_id("root"));
        assert_eq!(v.label_name(v.label_id("det")), "det");
        // chars: a c d e g h o s t + 2 reserved
        assert_eq!(v.char_count(), 11);
        assert_eq!(v.char_id('z'), UNK_ID);
        assert_ne!(v.char_id('a'), UNK_ID);
    }

    #[test]
    fn frequency_discounted_replacement() {
        let v = Vocab::build(&sample());
        let the = v.word_id("the");
        let cat = v.word_id("cat");
        assert_eq!(v.word_frequency(the), 2);
        assert_eq!(v.word_frequency(cat), 1);
        assert!((v.replacement_prob(cat, 0.5, false) - 0.5 / 1.5).abs() < 1e-12);
        assert!((v.replacement_prob(the, 0.5, false) - 0.5 / 2.5).abs() < 1e-12);
        assert_eq!(v.replacement_prob(the, 0.5, true), 0.5);
    }

    #[test]
    fn token_encoding_truncates_long_forms() {
        let v = Vocab::build(&sample());
        let long: String = std::iter::repeat('a').take(100).collect();
        let ids = v.encode_token(&long, "DET");
        assert_eq!(ids.chars.len(), MAX_WORD_CHARS);
        assert_eq!(ids.word, UNK_ID);
    }

    #[test]
    fn serde_round_trip_restores_lookup() {
        let v = Vocab::build(&sample());
        let json = serde_json::to_string(&v).unwrap();
        let mut back: Vocab = serde_json::from_str(&json).unwrap();
        back.rebuild_index();
        assert_eq!(back, v);
        assert_eq!(back.word_id("dog"), v.word_id("dog"));
    }

    #[test]
    fn sentence_encoding_and_labels() {
        let sents = sample();
        let v = Vocab::build(&sents);
        let ids = v.encode_sentence(&sents[0]);
        assert_eq!(ids.len(), 3);
        assert_eq!(ids[0].word, v.word_id("the"));
        assert_eq!(ids[2].pos, v.pos_id("VERB"));
        assert_eq!(ids[1].chars.len(), 3);
        let labels = v.label_ids(&sents[0]);
        assert_eq!(labels, vec![v.label_id("det"), v.label_id("nsubj"), v.label_id("root")]);
    }
}
