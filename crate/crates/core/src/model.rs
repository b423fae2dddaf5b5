//! Neural scoring model: character-aware BiLSTM encoder, a decoder that
//! conditions each attachment decision on the focus word's already
//! collected dependents through a learned gate, and biaffine scorers for
//! parent positions and dependency labels.

use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::autodiff::{AdError, Graph, ParamStore, Scalar, Var};
use crate::transition::{ParserState, TransitionError, TransitionKind};
use crate::treebank::{self, TreeError};

mod checkpoint;
mod config;
mod extemb;
mod net;
mod params;
mod vocab;

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_VERSION};
pub use config::{DepSlot, FusionKind, GateKind, ModelConfig};
pub use extemb::ExternalEmbeddings;
pub use net::{DecoderCursor, Encoding};
pub use params::{ModelParams, ParamIds};
pub use vocab::{TokenIds, Vocab, MAX_WORD_CHARS, PAD_ID, UNK_ID};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("unknown {what} `{value}`")]
    UnknownName { what: &'static str, value: String },
    #[error("fusion `{fusion}` cannot run under transition `{transition}`")]
    IncompatibleFusion {
        fusion: FusionKind,
        transition: TransitionKind,
    },
    #[error("bad model configuration: {0}")]
    BadConfig(String),
    #[error("sentence has no tokens")]
    EmptySentence,
    #[error("inconsistent loss input: {0}")]
    BadLossInput(String),
    #[error("invalid gold tree: {0}")]
    InvalidTree(#[from] TreeError),
    #[error(transparent)]
    Transition(#[from] TransitionError),
    #[error("external embeddings line {line}: {msg}")]
    ExternalParse { line: usize, msg: String },
    #[error("external embeddings for `{id}`: expected {expected} vectors, found {found}")]
    ExternalCount {
        id: String,
        expected: usize,
        found: usize,
    },
    #[error("external embedding dimension {found} does not match configured {expected}")]
    ExternalDim { expected: usize, found: usize },
    #[error("no external embeddings for sentence `{id}`")]
    ExternalMissing { id: String },
    #[error("bad checkpoint: {0}")]
    BadCheckpoint(String),
    #[error("checkpoint io: {0}")]
    CheckpointIo(#[from] std::io::Error),
    #[error(transparent)]
    Autodiff(#[from] AdError),
}

impl ModelError {
    /// 1 = usage or configuration, 2 = data, 3 = numeric failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            ModelError::UnknownName { .. }
            | ModelError::IncompatibleFusion { .. }
            | ModelError::BadConfig(_) => 1,
            ModelError::Autodiff(_) => 3,
            _ => 2,
        }
    }
}

/// Everything needed to score one sentence: ids from [`Vocab`], gold
/// heads and label ids aligned with the tokens, and per-token external
/// vectors when the model was configured with them.
pub struct LossInput<'a> {
    pub ids: &'a [TokenIds],
    pub heads: &'a [usize],
    pub label_ids: &'a [usize],
    pub ext: Option<&'a [Vec<f64>]>,
}

/// Teacher-forced training loss: walk the transition system along the
/// gold tree, add the masked cross-entropy of each gold parent under the
/// legal-parent distribution, then add the label cross-entropy of every
/// gold arc. Illegal positions never receive probability mass; masking
/// happens inside the fused cross-entropy op.
pub fn build_sentence_loss<F: Scalar>(
    g: &mut Graph<F>,
    config: &ModelConfig,
    store: &ParamStore<F>,
    ids: &ParamIds,
    label_count: usize,
    input: &LossInput,
    dropout_rng: Option<&mut ChaCha8Rng>,
) -> Result<Var, ModelError> {
    let n = input.ids.len();
    if n == 0 {
        return Err(ModelError::EmptySentence);
    }
    if input.heads.len() != n || input.label_ids.len() != n {
        return Err(ModelError::BadLossInput(format!(
            "{n} tokens but {} heads and {} labels",
            input.heads.len(),
            input.label_ids.len()
        )));
    }
    treebank::validate_heads(input.heads)?;
    if let Some(&bad) = input.label_ids.iter().find(|&&l| l >= label_count) {
        return Err(ModelError::BadLossInput(format!(
            "label id {bad} out of range for {label_count} labels"
        )));
    }

    let enc = net::encode(g, config, store, ids, input.ids, input.ext, dropout_rng)?;
    let mut state = ParserState::new(config.transition, n)?;
    let mut cur = net::start_decoder(g, config, store, ids, &enc);
    let mut terms = Vec::with_capacity(2 * n);
    while !state.is_finished() {
        let focus = state.focus().expect("unfinished parse has a focus");
        let snap = state.dependent_snapshot();
        let (scores, next) = net::decode_step(g, config, store, ids, &enc, &cur, focus, &snap);
        let legal = state.legal_parents(false)?;
        let mut mask = vec![false; n + 1];
        for p in legal {
            mask[p] = true;
        }
        let gold = input.heads[focus - 1];
        if !mask[gold] {
            return Err(ModelError::BadLossInput(format!(
                "gold parent {gold} of word {focus} is not legal at this step"
            )));
        }
        terms.push(g.masked_cross_entropy(scores, &mask, gold));
        state.apply_attach(gold, false)?;
        cur = next;
    }
    let all_labels = vec![true; label_count];
    for dep in 1..=n {
        let scores = net::label_scores(g, config, store, ids, &enc, input.heads[dep - 1], dep);
        terms.push(g.masked_cross_entropy(scores, &all_labels, input.label_ids[dep - 1]));
    }
    let mut total = terms[0];
    for &t in &terms[1..] {
        total = g.add(total, t);
    }
    Ok(total)
}

/// A configured model instance: hyperparameters, vocabulary and weights.
#[derive(Debug)]
pub struct Model<F: Scalar> {
    pub config: ModelConfig,
    pub vocab: Vocab,
    pub params: ModelParams<F>,
}

impl<F: Scalar> Model<F> {
    pub fn new(config: ModelConfig, vocab: Vocab, seed: u64) -> Result<Model<F>, ModelError> {
        config.validate()?;
        let params = ModelParams::init(&config, &vocab, seed);
        Ok(Model {
            config,
            vocab,
            params,
        })
    }

    pub fn encode(
        &self,
        g: &mut Graph<F>,
        tokens: &[TokenIds],
        ext: Option<&[Vec<f64>]>,
        dropout_rng: Option<&mut ChaCha8Rng>,
    ) -> Result<Encoding, ModelError> {
        net::encode(
            g,
            &self.config,
            &self.params.store,
            &self.params.ids,
            tokens,
            ext,
            dropout_rng,
        )
    }

    pub fn start_decoder(&self, g: &mut Graph<F>, enc: &Encoding) -> DecoderCursor {
        net::start_decoder(g, &self.config, &self.params.store, &self.params.ids, enc)
    }

    /// Score candidate parents of `focus` given the dependents collected
    /// so far; returns raw scores over positions `0..=n` and the advanced
    /// cursor.
    pub fn decode_step(
        &self,
        g: &mut Graph<F>,
        enc: &Encoding,
        cur: &DecoderCursor,
        focus: usize,
        snap: &crate::transition::DependentRecord,
    ) -> (Var, DecoderCursor) {
        net::decode_step(
            g,
            &self.config,
            &self.params.store,
            &self.params.ids,
            enc,
            cur,
            focus,
            snap,
        )
    }

    /// Raw label scores for the arc `head -> dep`.
    pub fn label_scores(&self, g: &mut Graph<F>, enc: &Encoding, head: usize, dep: usize) -> Var {
        net::label_scores(
            g,
            &self.config,
            &self.params.store,
            &self.params.ids,
            enc,
            head,
            dep,
        )
    }

    pub fn sentence_loss(
        &self,
        g: &mut Graph<F>,
        input: &LossInput,
        dropout_rng: Option<&mut ChaCha8Rng>,
    ) -> Result<Var, ModelError> {
        build_sentence_loss(
            g,
            &self.config,
            &self.params.store,
            &self.params.ids,
            self.vocab.label_count(),
            input,
            dropout_rng,
        )
    }
}
