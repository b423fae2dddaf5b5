//! Batched training: teacher-forced sentence losses summed per batch,
//! Adam with global-norm clipping, greedy dev evaluation after every
//! epoch with plateau-driven learning-rate decay, best-model selection,
//! and mean/stddev aggregation across repeated runs.

use std::fmt::Write as _;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{AdError, GradAccum, Gradients, Graph, OptState, ParamStore, Scalar};
use crate::eval::{uas_las, EvalError, PunctPolicy};
use crate::infer::{parse_sentence, DecodeOptions, InferError};
use crate::model::{ExternalEmbeddings, LossInput, Model, ModelConfig, ModelError, TokenIds, Vocab, UNK_ID};
use crate::treebank::{DepTree, Sentence};

/// Training stops once the decayed learning rate drops below this.
pub const MIN_LEARNING_RATE: f64 = 1e-6;

const ADAM_EPSILON: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("training set is empty")]
    EmptyTrainSet,
    #[error("batch size must be at least 1")]
    BadBatch,
    #[error("patience must be at least 1")]
    BadPatience,
    #[error("max epochs must be at least 1")]
    BadEpochs,
    #[error("need at least 2 runs for a standard deviation, got {0}")]
    TooFewRuns(usize),
    #[error("unknown dev metric `{0}` (expected las or uas)")]
    UnknownMetric(String),
    #[error("non-finite loss at epoch {epoch}, batch {batch}: {detail}")]
    NonFinite {
        epoch: usize,
        batch: usize,
        detail: String,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Infer(#[from] InferError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Autodiff(#[from] AdError),
}

impl TrainError {
    pub fn exit_code(&self) -> i32 {
        match self {
            TrainError::BadBatch
            | TrainError::BadPatience
            | TrainError::BadEpochs
            | TrainError::TooFewRuns(_)
            | TrainError::UnknownMetric(_) => 1,
            TrainError::EmptyTrainSet => 2,
            TrainError::NonFinite { .. } => 3,
            TrainError::Model(e) => e.exit_code(),
            TrainError::Infer(e) => e.exit_code(),
            TrainError::Eval(e) => e.exit_code(),
            TrainError::Autodiff(_) => 3,
        }
    }
}

/// Which dev score drives model selection and the decay plateau.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DevMetric {
    #[serde(rename = "las")]
    Las,
    #[serde(rename = "uas")]
    Uas,
}

impl DevMetric {
    pub fn name(&self) -> &'static str {
        match self {
            DevMetric::Las => "las",
            DevMetric::Uas => "uas",
        }
    }
}

impl std::str::FromStr for DevMetric {
    type Err = TrainError;

    fn from_str(s: &str) -> Result<Self, TrainError> {
        match s.to_ascii_lowercase().as_str() {
            "las" => Ok(DevMetric::Las),
            "uas" => Ok(DevMetric::Uas),
            _ => Err(TrainError::UnknownMetric(s.to_string())),
        }
    }
}

impl std::fmt::Display for DevMetric {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Optimization settings. Defaults: Adam with beta1 = beta2 = 0.9,
/// initial learning rate 0.001, decay rate 0.75, gradient clipping 5.0,
/// batch size 32.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct TrainConfig {
    pub batch_size: usize,
    pub initial_learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub decay_rate: f64,
    pub gradient_clipping: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub dev_metric: DevMetric,
    pub seed: u64,
    /// Zeroes the wall-clock column of the epoch log so identical runs
    /// produce byte-identical outputs.
    pub deterministic: bool,
    pub threads: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 32,
            initial_learning_rate: 0.001,
            beta1: 0.9,
            beta2: 0.9,
            decay_rate: 0.75,
            gradient_clipping: 5.0,
            max_epochs: 400,
            patience: 5,
            dev_metric: DevMetric::Las,
            seed: 1,
            deterministic: true,
            threads: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.batch_size < 1 {
            return Err(TrainError::BadBatch);
        }
        if self.patience < 1 {
            return Err(TrainError::BadPatience);
        }
        if self.max_epochs < 1 {
            return Err(TrainError::BadEpochs);
        }
        Ok(())
    }

    /// Learning rate after `times` plateau decays.
    pub fn lr_after_decays(&self, times: u32) -> f64 {
        self.initial_learning_rate * self.decay_rate.powi(times as i32)
    }
}

/// One row of the training log. `train_loss` is the mean per-sentence
/// loss over the epoch; `seconds` is wall time unless deterministic mode
/// zeroes it.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub dev_uas: f64,
    pub dev_las: f64,
    pub lr: f64,
    pub seconds: f64,
}

/// Result of a training run: the weights from the best dev epoch, which
/// epoch that was, its dev-metric value, and the per-epoch log.
#[derive(Debug)]
pub struct TrainOutcome {
    pub model: Model<f32>,
    pub best_epoch: usize,
    pub best_dev: f64,
    pub log: Vec<EpochLog>,
}

/// Run `f` over `items` on up to `threads` workers and return results in
/// input order. Each item is handled independently, so the output does
/// not depend on the thread count or scheduling.
pub fn parallel_map<T, R, F>(items: &[T], threads: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(usize, &T) -> R + Sync,
{
    let workers = threads.clamp(1, items.len().max(1));
    if workers <= 1 {
        return items.iter().enumerate().map(|(i, t)| f(i, t)).collect();
    }
    let next = std::sync::atomic::AtomicUsize::new(0);
    let mut out: Vec<Option<R>> = (0..items.len()).map(|_| None).collect();
    std::thread::scope(|s| {
        let handles: Vec<_> = (0..workers)
            .map(|_| {
                s.spawn(|| {
                    let mut local = Vec::new();
                    loop {
                        let i = next.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
                        if i >= items.len() {
                            break;
                        }
                        local.push((i, f(i, &items[i])));
                    }
                    local
                })
            })
            .collect();
        for h in handles {
            for (i, r) in h.join().expect("worker panicked") {
                out[i] = Some(r);
            }
        }
    });
    out.into_iter().map(|o| o.expect("item processed")).collect()
}

/// Encoded sentence plus its gold targets and external vectors.
struct Prepared<'a> {
    ids: Vec<TokenIds>,
    heads: Vec<usize>,
    labels: Vec<usize>,
    ext: Option<&'a [Vec<f64>]>,
}

fn prepare<'a>(
    model: &Model<f32>,
    set: &[Sentence],
    ext: Option<&'a ExternalEmbeddings>,
) -> Result<Vec<Prepared<'a>>, TrainError> {
    set.iter()
        .enumerate()
        .map(|(i, s)| {
            if s.is_empty() {
                return Err(ModelError::EmptySentence.into());
            }
            let vectors = match ext {
                None => None,
                Some(e) => {
                    let id = s.id.clone().unwrap_or_else(|| format!("#{}", i + 1));
                    Some(e.lookup(&id, s.len())?)
                }
            };
            Ok(Prepared {
                ids: model.vocab.encode_sentence(s),
                heads: s.heads(),
                labels: model.vocab.label_ids(s),
                ext: vectors,
            })
        })
        .collect()
}

/// Word ids replaced by UNK with the per-word probability from the
/// vocabulary (frequency-scaled unless the flat option is set). Char and
/// POS ids keep their values so the character model still sees the form.
fn replaced_ids(
    ids: &[TokenIds],
    vocab: &Vocab,
    base: f64,
    flat: bool,
    rng: &mut ChaCha8Rng,
) -> Vec<TokenIds> {
    ids.iter()
        .map(|t| {
            let mut t = t.clone();
            if rng.gen::<f64>() < vocab.replacement_prob(t.word, base, flat) {
                t.word = UNK_ID;
            }
            t
        })
        .collect()
}

/// Forward/backward for one sentence. With a noise seed, word ids go
/// through UNK replacement and dropout is live; without one, the loss is
/// deterministic in the weights.
fn sentence_backward(
    model: &Model<f32>,
    prep: &Prepared,
    noise_seed: Option<u64>,
) -> Result<(f64, Gradients<f32>), TrainError> {
    let mut rng = noise_seed.map(ChaCha8Rng::seed_from_u64);
    let ids = match rng.as_mut() {
        Some(r) => replaced_ids(
            &prep.ids,
            &model.vocab,
            model.config.unk_replacement_probability,
            model.config.flat_unk_probability,
            r,
        ),
        None => prep.ids.to_vec(),
    };
    let mut g = Graph::new();
    let input = LossInput {
        ids: &ids,
        heads: &prep.heads,
        label_ids: &prep.labels,
        ext: prep.ext,
    };
    let loss = model.sentence_loss(&mut g, &input, rng.as_mut())?;
    let value = g.value(loss)?.data()[0].to_f64();
    let grads = g.backward(loss)?;
    Ok((value, grads))
}

fn greedy_dev_eval(
    model: &Model<f32>,
    dev: &[Sentence],
    prepared: &[Prepared],
    threads: usize,
) -> Result<(f64, f64), TrainError> {
    let parses = parallel_map(prepared, threads, |_, p| {
        parse_sentence(model, &p.ids, p.ext, &DecodeOptions::default())
    });
    let mut pred = Vec::with_capacity(dev.len());
    for (s, r) in dev.iter().zip(parses) {
        let parse = r?;
        let labels = parse
            .label_ids
            .iter()
            .map(|&l| model.vocab.label_name(l).to_string())
            .collect();
        pred.push(s.with_tree(&DepTree {
            heads: parse.heads,
            labels,
        }));
    }
    let report = uas_las(dev, &pred, PunctPolicy::None)?;
    Ok((report.uas(), report.las()))
}

/// Build the vocabulary from the training set, initialize a model from
/// the seed, and run [`train_model`].
pub fn train(
    train_set: &[Sentence],
    dev_set: &[Sentence],
    mc: &ModelConfig,
    tc: &TrainConfig,
    ext: Option<&ExternalEmbeddings>,
) -> Result<TrainOutcome, TrainError> {
    if train_set.is_empty() {
        return Err(TrainError::EmptyTrainSet);
    }
    tc.validate()?;
    let vocab = Vocab::build(train_set);
    let model = Model::new(mc.clone(), vocab, tc.seed)?;
    train_model(model, train_set, dev_set, tc, ext)
}

/// The training loop proper. Sentences are grouped into batches of
/// similar length; batch order is reshuffled every epoch from the seed.
/// Each batch sums per-sentence gradients in sentence order, clips the
/// global norm, and takes one Adam step. After every epoch the dev set
/// (the training set itself when no dev set is given) is decoded greedily
/// and scored; when the dev metric fails to improve for `patience`
/// epochs, the learning rate is multiplied by the decay rate. Training
/// stops at `max_epochs` or when the learning rate falls below
/// [`MIN_LEARNING_RATE`], and the weights of the best dev epoch win.
pub fn train_model(
    mut model: Model<f32>,
    train_set: &[Sentence],
    dev_set: &[Sentence],
    tc: &TrainConfig,
    ext: Option<&ExternalEmbeddings>,
) -> Result<TrainOutcome, TrainError> {
    if train_set.is_empty() {
        return Err(TrainError::EmptyTrainSet);
    }
    tc.validate()?;
    let dev = if dev_set.is_empty() { train_set } else { dev_set };
    let prepared = prepare(&model, train_set, ext)?;
    let dev_prepared = prepare(&model, dev, ext)?;

    let mut order: Vec<usize> = (0..prepared.len()).collect();
    order.sort_by_key(|&i| (prepared[i].ids.len(), i));
    let batches: Vec<Vec<usize>> = order
        .chunks(tc.batch_size)
        .map(|c| c.to_vec())
        .collect();

    let mut master = ChaCha8Rng::seed_from_u64(tc.seed);
    let mut lr = tc.initial_learning_rate;
    let mut opt = OptState::new(
        &model.params.store,
        lr as f32,
        tc.beta1 as f32,
        tc.beta2 as f32,
        ADAM_EPSILON as f32,
    );
    let mut log = Vec::new();
    let mut best: Option<(f64, usize, ParamStore<f32>)> = None;
    let mut stale = 0usize;

    for epoch in 1..=tc.max_epochs {
        let started = Instant::now();
        let mut batch_order: Vec<usize> = (0..batches.len()).collect();
        batch_order.shuffle(&mut master);
        let mut epoch_loss = 0.0;
        for (bi, &b) in batch_order.iter().enumerate() {
            let jobs: Vec<(usize, u64)> = batches[b]
                .iter()
                .map(|&si| (si, master.gen::<u64>()))
                .collect();
            let results = parallel_map(&jobs, tc.threads, |_, &(si, seed)| {
                sentence_backward(&model, &prepared[si], Some(seed))
            });
            let mut accum = GradAccum::zeros(&model.params.store);
            let mut batch_loss = 0.0;
            let context = |detail: String| TrainError::NonFinite {
                epoch,
                batch: bi + 1,
                detail,
            };
            for r in results {
                let (value, grads) = match r {
                    Ok(pair) => pair,
                    Err(TrainError::Autodiff(
                        e @ (AdError::NonFinite { .. } | AdError::NonFiniteGradient { .. }),
                    )) => return Err(context(e.to_string())),
                    Err(e) => return Err(e),
                };
                if !value.is_finite() {
                    return Err(context(format!("sentence loss is {value}")));
                }
                batch_loss += value;
                accum.add(&grads);
            }
            opt.adam_step(
                &mut model.params.store,
                &accum,
                Some(tc.gradient_clipping as f32),
            )
            .map_err(|e| match e {
                AdError::NonFinite { .. } | AdError::NonFiniteGradient { .. } => {
                    context(e.to_string())
                }
                other => TrainError::Autodiff(other),
            })?;
            epoch_loss += batch_loss;
        }

        let (dev_uas, dev_las) = greedy_dev_eval(&model, dev, &dev_prepared, tc.threads)?;
        let metric = match tc.dev_metric {
            DevMetric::Las => dev_las,
            DevMetric::Uas => dev_uas,
        };
        log.push(EpochLog {
            epoch,
            train_loss: epoch_loss / prepared.len() as f64,
            dev_uas,
            dev_las,
            lr,
            seconds: if tc.deterministic {
                0.0
            } else {
                started.elapsed().as_secs_f64()
            },
        });

        if best.as_ref().map_or(true, |(m, _, _)| metric > *m) {
            best = Some((metric, epoch, model.params.store.clone()));
            stale = 0;
        } else {
            stale += 1;
            if stale >= tc.patience {
                lr *= tc.decay_rate;
                opt.lr = lr as f32;
                stale = 0;
            }
        }
        if lr < MIN_LEARNING_RATE {
            break;
        }
    }

    let (best_dev, best_epoch, store) = best.expect("at least one epoch ran");
    model.params.store = store;
    Ok(TrainOutcome {
        model,
        best_epoch,
        best_dev,
        log,
    })
}

/// The epoch log as a TSV table.
pub fn epoch_log_tsv(log: &[EpochLog]) -> String {
    let mut out = String::from("epoch\ttrain-loss\tdev-uas\tdev-las\tlr\tseconds\n");
    for row in log {
        let _ = writeln!(
            out,
            "{}\t{:.6}\t{:.6}\t{:.6}\t{}\t{:.3}",
            row.epoch, row.train_loss, row.dev_uas, row.dev_las, row.lr, row.seconds
        );
    }
    out
}

/// Mean and standard deviation over repeated runs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunStats {
    pub mean: f64,
    pub stddev: f64,
    /// Bessel-corrected (n-1) instead of the population (n) denominator.
    pub sample: bool,
    pub runs: usize,
}

impl RunStats {
    /// "mean ±sd" with the given number of decimals, e.g. "94.10 ±0.03".
    pub fn format(&self, decimals: usize) -> String {
        format!(
            "{:.prec$} \u{b1}{:.prec$}",
            self.mean,
            self.stddev,
            prec = decimals
        )
    }
}

/// Aggregate per-run scores; population standard deviation by default.
pub fn aggregate_runs(scores: &[f64], sample: bool) -> Result<RunStats, TrainError> {
    if scores.len() < 2 {
        return Err(TrainError::TooFewRuns(scores.len()));
    }
    let n = scores.len() as f64;
    let mean = scores.iter().sum::<f64>() / n;
    let ss: f64 = scores.iter().map(|x| (x - mean) * (x - mean)).sum();
    let denom = if sample { n - 1.0 } else { n };
    Ok(RunStats {
        mean,
        stddev: (ss / denom).sqrt(),
        sample,
        runs: scores.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{save_checkpoint, load_checkpoint, FusionKind, GateKind};
    use crate::synth::{corpus, SynthConfig};
    use crate::transition::TransitionKind;

    fn small_corpus(seed: u64) -> Vec<Sentence> {
        corpus(
            &SynthConfig {
                sentences: 8,
                min_len: 2,
                max_len: 6,
                vocab_words: 10,
                ..SynthConfig::default()
            },
            seed,
        )
    }

    fn micro_model(seed: u64, sents: &[Sentence]) -> Model<f32> {
        let config = ModelConfig::micro(
            TransitionKind::LeftToRight,
            FusionKind::LAdapted,
            GateKind::Gate1,
        );
        Model::new(config, Vocab::build(sents), seed).unwrap()
    }

    #[test]
    fn defaults_match_the_reference_setup() {
        let tc = TrainConfig::default();
        assert_eq!(tc.batch_size, 32);
        assert_eq!(tc.initial_learning_rate, 0.001);
        assert_eq!((tc.beta1, tc.beta2), (0.9, 0.9));
        assert_eq!(tc.decay_rate, 0.75);
        assert_eq!(tc.gradient_clipping, 5.0);
        assert_eq!(tc.max_epochs, 400);
        assert_eq!(tc.patience, 5);
        assert_eq!(tc.dev_metric, DevMetric::Las);
        tc.validate().unwrap();
    }

    #[test]
    fn config_invariants_are_usage_errors() {
        let bad = TrainConfig {
            batch_size: 0,
            ..TrainConfig::default()
        };
        let err = bad.validate().unwrap_err();
        assert!(matches!(err, TrainError::BadBatch));
        assert_eq!(err.exit_code(), 1);
        let bad = TrainConfig {
            patience: 0,
            ..TrainConfig::default()
        };
        assert!(matches!(bad.validate().unwrap_err(), TrainError::BadPatience));
    }

    #[test]
    fn two_decays_give_the_expected_rate() {
        let tc = TrainConfig::default();
        assert!((tc.lr_after_decays(2) - 0.0005625).abs() < 1e-15);
    }

    #[test]
    fn run_aggregation_fixtures() {
        let s = aggregate_runs(&[94.0, 94.0, 94.0], false).unwrap();
        assert_eq!((s.mean, s.stddev), (94.0, 0.0));

        let s = aggregate_runs(&[94.0, 94.2], false).unwrap();
        assert!((s.mean - 94.1).abs() < 1e-12);
        assert!((s.stddev - 0.1).abs() < 1e-12);

        let sample = aggregate_runs(&[94.0, 94.2], true).unwrap();
        assert!((sample.stddev - 0.2 / 2f64.sqrt()).abs() < 1e-12);

        let s = aggregate_runs(&[93.97, 94.03], false).unwrap();
        assert_eq!(s.format(2), "94.00 \u{b1}0.03");

        let err = aggregate_runs(&[94.0], false).unwrap_err();
        assert!(matches!(err, TrainError::TooFewRuns(1)));
        assert_eq!(err.exit_code(), 1);
    }

    #[test]
    fn fixed_batch_loss_shrinks_over_first_steps() {
        let sents = small_corpus(3);
        let mut model = micro_model(11, &sents);
        let prepared = prepare(&model, &sents, None).unwrap();
        let mut opt = OptState::new(&model.params.store, 0.001, 0.9, 0.9, 1e-8);
        let mut losses = Vec::new();
        for _ in 0..6 {
            let mut accum = GradAccum::zeros(&model.params.store);
            let mut total = 0.0;
            for p in &prepared {
                let (v, grads) = sentence_backward(&model, p, None).unwrap();
                total += v;
                accum.add(&grads);
            }
            losses.push(total);
            opt.adam_step(&mut model.params.store, &accum, Some(5.0)).unwrap();
        }
        let drops = losses
            .windows(2)
            .filter(|w| w[1] <= w[0] + 1e-9)
            .count();
        assert!(drops >= 4, "losses {losses:?}");
    }

    #[test]
    fn unk_replacement_follows_word_frequency() {
        let sents = small_corpus(5);
        let model = micro_model(1, &sents);
        let vocab = &model.vocab;
        let word = (0..vocab.word_count())
            .max_by_key(|&w| vocab.word_frequency(w))
            .unwrap();
        let freq = vocab.word_frequency(word) as f64;
        assert!(freq > 0.0);
        let expect = 0.5 / (0.5 + freq);
        let tok = TokenIds {
            word,
            chars: vec![],
            pos: 0,
        };

        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let many = vec![tok.clone(); 20_000];
        let replaced = replaced_ids(&many, vocab, 0.5, false, &mut rng)
            .iter()
            .filter(|t| t.word == UNK_ID)
            .count() as f64
            / 20_000.0;
        let sigma = (expect * (1.0 - expect) / 20_000.0).sqrt();
        assert!(
            (replaced - expect).abs() < 4.0 * sigma,
            "saw {replaced}, expected {expect}"
        );

        let mut rng = ChaCha8Rng::seed_from_u64(43);
        let flat = replaced_ids(&many, vocab, 0.5, true, &mut rng)
            .iter()
            .filter(|t| t.word == UNK_ID)
            .count() as f64
            / 20_000.0;
        assert!((flat - 0.5).abs() < 0.02, "flat rate {flat}");
    }

    fn quick_config(seed: u64) -> TrainConfig {
        TrainConfig {
            batch_size: 4,
            max_epochs: 3,
            seed,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn identical_seeds_reproduce_the_run_bit_for_bit() {
        let sents = small_corpus(7);
        let config = ModelConfig::micro(
            TransitionKind::OutsideIn,
            FusionKind::Simple,
            GateKind::Gate2,
        );
        let run = |_: ()| {
            train(&sents, &[], &config, &quick_config(99), None).unwrap()
        };
        let a = run(());
        let b = run(());
        assert_eq!(a.log.len(), 3);
        assert_eq!(a.best_epoch, b.best_epoch);
        for (x, y) in a.log.iter().zip(&b.log) {
            assert_eq!(x.train_loss.to_bits(), y.train_loss.to_bits());
            assert_eq!(x.dev_uas.to_bits(), y.dev_uas.to_bits());
            assert_eq!(x.dev_las.to_bits(), y.dev_las.to_bits());
            assert_eq!(x.lr, 0.001);
            assert_eq!(x.seconds, 0.0);
        }
        let tsv = epoch_log_tsv(&a.log);
        assert!(tsv.starts_with("epoch\ttrain-loss\tdev-uas\tdev-las\tlr\tseconds\n"));
        assert_eq!(tsv, epoch_log_tsv(&b.log));
        assert_eq!(tsv.lines().count(), 4);
    }

    #[test]
    fn thread_count_does_not_change_results() {
        let sents = small_corpus(15);
        let config = ModelConfig::micro(
            TransitionKind::RightToLeft,
            FusionKind::RSimple,
            GateKind::Gate1,
        );
        let one = train(
            &sents,
            &[],
            &config,
            &TrainConfig {
                threads: 1,
                ..quick_config(5)
            },
            None,
        )
        .unwrap();
        let four = train(
            &sents,
            &[],
            &config,
            &TrainConfig {
                threads: 4,
                ..quick_config(5)
            },
            None,
        )
        .unwrap();
        for (x, y) in one.log.iter().zip(&four.log) {
            assert_eq!(x.train_loss.to_bits(), y.train_loss.to_bits());
            assert_eq!(x.dev_las.to_bits(), y.dev_las.to_bits());
        }
    }

    #[test]
    fn best_checkpoint_reproduces_dev_score_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let sents = small_corpus(21);
        let config = ModelConfig::micro(
            TransitionKind::LeftToRight,
            FusionKind::LSimple,
            GateKind::Gate1,
        );
        let out = train(&sents, &[], &config, &quick_config(31), None).unwrap();
        let best_row = out
            .log
            .iter()
            .find(|r| r.epoch == out.best_epoch)
            .unwrap()
            .clone();
        assert_eq!(best_row.dev_las.to_bits(), out.best_dev.to_bits());

        let path = dir.path().join("best.ckpt");
        save_checkpoint(&out.model, &path).unwrap();
        let reloaded = load_checkpoint(&path).unwrap();
        let prepared = prepare(&reloaded, &sents, None).unwrap();
        let (_, las) = greedy_dev_eval(&reloaded, &sents, &prepared, 1).unwrap();
        assert_eq!(las.to_bits(), out.best_dev.to_bits());
    }

    #[test]
    fn poisoned_weights_abort_with_context() {
        let sents = small_corpus(9);
        let mut model = micro_model(2, &sents);
        let id = model.params.store.find("arc.w").unwrap();
        model.params.store.value_mut(id).data_mut()[0] = f32::NAN;
        let err = train_model(model, &sents, &[], &quick_config(1), None).unwrap_err();
        match &err {
            TrainError::NonFinite { epoch, batch, .. } => {
                assert_eq!((*epoch, *batch), (1, 1));
            }
            other => panic!("expected NonFinite, got {other:?}"),
        }
        assert_eq!(err.exit_code(), 3);
    }

    #[test]
    fn empty_training_set_is_a_data_error() {
        let sents = small_corpus(2);
        let config = ModelConfig::micro(
            TransitionKind::LeftToRight,
            FusionKind::Sequential,
            GateKind::Gate1,
        );
        let err = train(&[], &sents, &config, &TrainConfig::default(), None).unwrap_err();
        assert!(matches!(err, TrainError::EmptyTrainSet));
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn parallel_map_preserves_order_under_contention() {
        let items: Vec<usize> = (0..103).collect();
        for threads in [1, 2, 5] {
            let out = parallel_map(&items, threads, |i, &x| {
                assert_eq!(i, x);
                x * 3
            });
            assert_eq!(out, items.iter().map(|x| x * 3).collect::<Vec<_>>());
        }
    }
}
