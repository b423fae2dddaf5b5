//! Command-line front end: treebank statistics, oracle inspection,
//! training, parsing, evaluation and gradient verification, wired for
//! reproducible batch runs (seeded, manifest beside every written file).

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use headpoint::autodiff::{grad_check, Graph};
use headpoint::eval::{
    bins_tsv, evaluate, report_json, report_tsv, sample_indices, uas_las, PunctPolicy,
    DEFAULT_BIN_EDGES,
};
use headpoint::infer::{parse_sentence, DecodeOptions};
use headpoint::model::{
    build_sentence_loss, load_checkpoint, save_checkpoint, ExternalEmbeddings, FusionKind,
    GateKind, LossInput, Model, ModelConfig, TokenIds, Vocab, CHECKPOINT_VERSION,
};
use headpoint::synth::{corpus, SynthConfig};
use headpoint::train::{epoch_log_tsv, parallel_map, train, TrainConfig};
use headpoint::transition::{availability_stats, oracle_sequence, TransitionKind};
use headpoint::treebank::{arc_stats, parse_conllu, write_conllu, DepTree, Sentence};
use headpoint::Error;

#[derive(Parser)]
#[command(
    name = "headpoint",
    version,
    about = "Pointer-network dependency parser over Shift-Attach transitions"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Arc statistics for a treebank
    Stats(StatsArgs),
    /// Dependents visible to the decoder, averaged per sentence
    Availability(AvailabilityArgs),
    /// Gold-tree action sequences for a transition system
    Oracle(OracleArgs),
    /// Train a parser and write the best checkpoint
    Train(TrainArgs),
    /// Parse a treebank with a trained checkpoint
    Parse(ParseArgs),
    /// Score predictions against gold annotations
    Eval(EvalArgs),
    /// Accuracy broken down by sentence length and word position
    Analyze(AnalyzeArgs),
    /// Compare analytic gradients with central finite differences
    Gradcheck(GradcheckArgs),
}

#[derive(Args)]
struct StatsArgs {
    /// CoNLL-U file to measure
    #[arg(long)]
    input: PathBuf,
    /// Ignore arcs from the artificial root when counting lengths
    #[arg(long)]
    exclude_root_arcs: bool,
}

#[derive(Args)]
struct AvailabilityArgs {
    /// CoNLL-U file to measure
    #[arg(long)]
    input: PathBuf,
    /// Transition system: l2r, r2l, oi, or all
    #[arg(long, default_value = "all")]
    system: String,
    /// Count dependents on both sides of the focus word, not only the
    /// side the system can attach before reaching it
    #[arg(long)]
    count_both_sides: bool,
}

#[derive(Args)]
struct OracleArgs {
    /// CoNLL-U file with gold trees
    #[arg(long)]
    input: PathBuf,
    /// Transition system: l2r, r2l, or oi
    #[arg(long)]
    system: String,
    /// Write one line per sentence here instead of stdout
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    /// Training treebank (CoNLL-U)
    #[arg(long)]
    train: PathBuf,
    /// Development treebank for model selection; defaults to the
    /// training set itself
    #[arg(long)]
    dev: Option<PathBuf>,
    /// Where to write the best checkpoint
    #[arg(long)]
    model_out: PathBuf,
    /// Flat `key = value` file; accepts every model and optimizer key
    #[arg(long)]
    config: Option<PathBuf>,
    /// Single `key=value` override, applied after the config file;
    /// repeatable
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Transition system: l2r, r2l, or oi
    #[arg(long)]
    system: Option<String>,
    /// Fusion variant: sequential, full, simple, l-adapted, l-simple,
    /// r-adapted, or r-simple
    #[arg(long)]
    fusion: Option<String>,
    /// Dependent gate: gate1 or gate2
    #[arg(long)]
    gate: Option<String>,
    /// Scale every learned dimension down to 64
    #[arg(long)]
    tiny: bool,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for batch gradients and dev decoding
    #[arg(long)]
    threads: Option<usize>,
    /// `true` zeroes the wall-clock column so identical runs produce
    /// byte-identical logs
    #[arg(long)]
    deterministic: Option<bool>,
    /// Per-sentence external embedding vectors
    #[arg(long)]
    external: Option<PathBuf>,
    /// Write the epoch log here instead of stdout
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(Args)]
struct ParseArgs {
    /// Trained checkpoint
    #[arg(long)]
    model: PathBuf,
    /// CoNLL-U file to parse (gold columns ignored)
    #[arg(long)]
    input: PathBuf,
    /// Where to write the parsed CoNLL-U
    #[arg(long)]
    output: PathBuf,
    /// Beam width; 1 is greedy
    #[arg(long, default_value_t = 1)]
    beam: usize,
    /// Keep every parse projective (backtracks out of dead ends)
    #[arg(long)]
    projective: bool,
    /// Attach exactly one word to the artificial root
    #[arg(long)]
    single_root: bool,
    /// Worker threads for per-sentence decoding
    #[arg(long, default_value_t = 1)]
    threads: usize,
    /// Per-sentence external embedding vectors
    #[arg(long)]
    external: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    /// Gold treebank
    #[arg(long)]
    gold: PathBuf,
    /// Predicted treebank, aligned sentence by sentence
    #[arg(long)]
    pred: PathBuf,
    /// Punctuation policy: none, upos-punct, or ptb-style
    #[arg(long, default_value = "none")]
    punct: String,
    /// Emit the report as JSON instead of TSV
    #[arg(long)]
    json: bool,
    /// Write the report here instead of stdout
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct AnalyzeArgs {
    /// Gold treebank
    #[arg(long)]
    gold: PathBuf,
    /// Predicted treebank, aligned sentence by sentence
    #[arg(long)]
    pred: PathBuf,
    /// Punctuation policy: none, upos-punct, or ptb-style
    #[arg(long, default_value = "none")]
    punct: String,
    /// Comma-separated upper bin edges, e.g. 10,20,30,40,50
    #[arg(long)]
    bin_edges: Option<String>,
    /// Subsample whole sentences until this many tokens are gathered
    #[arg(long)]
    budget: Option<usize>,
    /// Seed for the token-budget subsample
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Also write the per-bin series to this file for plotting
    #[arg(long)]
    emit_plot_data: Option<PathBuf>,
    /// Write the table here instead of stdout
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct GradcheckArgs {
    /// Transition system: l2r, r2l, oi, or all
    #[arg(long, default_value = "all")]
    system: String,
    /// Fusion variant or `all`
    #[arg(long, default_value = "all")]
    fusion: String,
    /// Gate: gate1, gate2, or all
    #[arg(long, default_value = "all")]
    gate: String,
    /// Sentence length to check on
    #[arg(long, default_value_t = 4)]
    len: usize,
    /// Randomly sampled coordinates per parameter (0 checks all)
    #[arg(long, default_value_t = 3)]
    coords: usize,
    /// Finite-difference step
    #[arg(long, default_value_t = 1e-5)]
    eps: f64,
    /// Maximum tolerated relative error
    #[arg(long, default_value_t = 1e-4)]
    tolerance: f64,
    #[arg(long, default_value_t = 7)]
    seed: u64,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.cmd {
        Cmd::Stats(a) => run_stats(a),
        Cmd::Availability(a) => run_availability(a),
        Cmd::Oracle(a) => run_oracle(a),
        Cmd::Train(a) => run_train(a),
        Cmd::Parse(a) => run_parse(a),
        Cmd::Eval(a) => run_eval(a),
        Cmd::Analyze(a) => run_analyze(a),
        Cmd::Gradcheck(a) => run_gradcheck(a),
    }
}

fn named_io(path: &Path, e: std::io::Error) -> Error {
    Error::Io(std::io::Error::new(
        e.kind(),
        format!("{}: {e}", path.display()),
    ))
}

fn read_text(path: &Path) -> Result<String, Error> {
    fs::read_to_string(path).map_err(|e| named_io(path, e))
}

fn write_text(path: &Path, body: &str) -> Result<(), Error> {
    fs::write(path, body).map_err(|e| named_io(path, e))
}

fn read_treebank(path: &Path) -> Result<Vec<Sentence>, Error> {
    Ok(parse_conllu(&read_text(path)?)?)
}

fn read_external(path: Option<&Path>) -> Result<Option<ExternalEmbeddings>, Error> {
    match path {
        None => Ok(None),
        Some(p) => Ok(Some(ExternalEmbeddings::parse(&read_text(p)?)?)),
    }
}

fn usage(msg: String) -> Error {
    Error::Usage(msg)
}

fn parse_system(s: &str) -> Result<TransitionKind, Error> {
    s.parse().map_err(|_| {
        usage(format!(
            "unknown transition system `{s}` (expected l2r, r2l, or oi)"
        ))
    })
}

fn parse_systems(s: &str) -> Result<Vec<TransitionKind>, Error> {
    if s.eq_ignore_ascii_case("all") {
        Ok(TransitionKind::ALL.to_vec())
    } else {
        Ok(vec![parse_system(s)?])
    }
}

fn parse_punct(s: &str) -> Result<PunctPolicy, Error> {
    Ok(s.parse::<PunctPolicy>()?)
}

/// Lookup key for a sentence's external embeddings: its declared id, or
/// its 1-based position when the file carries none.
fn sentence_key(s: &Sentence, idx: usize) -> String {
    s.id.clone().unwrap_or_else(|| format!("#{}", idx + 1))
}

fn manifest_path(output: &Path) -> PathBuf {
    let name = output
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    output.with_file_name(format!("{name}.manifest.json"))
}

/// Reproducibility record written beside every output file: the
/// effective options, the seed, and the program version, but no
/// timestamps so identical runs write identical manifests.
fn write_manifest(beside: &Path, mut body: serde_json::Value) -> Result<(), Error> {
    if let Some(obj) = body.as_object_mut() {
        obj.insert(
            "versions".into(),
            json!({
                "headpoint": env!("CARGO_PKG_VERSION"),
                "checkpoint-format": CHECKPOINT_VERSION,
            }),
        );
    }
    let path = manifest_path(beside);
    write_text(&path, &format!("{body:#}\n"))
}

fn path_json(p: &Path) -> serde_json::Value {
    json!(p.display().to_string())
}

fn opt_path_json(p: Option<&PathBuf>) -> serde_json::Value {
    p.map_or(serde_json::Value::Null, |p| path_json(p))
}

fn emit(body: &str, output: Option<&PathBuf>, manifest: serde_json::Value) -> Result<(), Error> {
    match output {
        Some(p) => {
            write_text(p, body)?;
            write_manifest(p, manifest)
        }
        None => {
            print!("{body}");
            Ok(())
        }
    }
}

fn run_stats(a: StatsArgs) -> Result<(), Error> {
    let tb = read_treebank(&a.input)?;
    let st = arc_stats(&tb, !a.exclude_root_arcs)?;
    let mut out = String::from("metric\tvalue\n");
    out.push_str(&format!("sentences\t{}\n", st.sentence_count));
    out.push_str(&format!("tokens\t{}\n", st.token_count));
    out.push_str(&format!("pct-long-arcs\t{:.6}\n", st.pct_long_arcs));
    match st.pct_left_of_long {
        Some(p) => out.push_str(&format!("pct-left-of-long\t{p:.6}\n")),
        None => out.push_str("pct-left-of-long\t\n"),
    }
    print!("{out}");
    Ok(())
}

fn run_availability(a: AvailabilityArgs) -> Result<(), Error> {
    let tb = read_treebank(&a.input)?;
    let mut out = String::from("system\tall-per-sentence\tlong-per-sentence\n");
    for kind in parse_systems(&a.system)? {
        let st = availability_stats(kind, &tb, a.count_both_sides)?;
        out.push_str(&format!(
            "{kind}\t{:.2}\t{:.2}\n",
            st.all_per_sentence, st.long_per_sentence
        ));
    }
    print!("{out}");
    Ok(())
}

fn run_oracle(a: OracleArgs) -> Result<(), Error> {
    let kind = parse_system(&a.system)?;
    let tb = read_treebank(&a.input)?;
    let mut out = String::new();
    for s in &tb {
        let actions = oracle_sequence(kind, &s.tree())?;
        let words: Vec<String> = actions.iter().map(|p| p.to_string()).collect();
        out.push_str(&words.join(" "));
        out.push('\n');
    }
    emit(
        &out,
        a.output.as_ref(),
        json!({
            "command": "oracle",
            "system": kind.name(),
            "inputs": { "treebank": path_json(&a.input) },
            "outputs": { "actions": opt_path_json(a.output.as_ref()) },
        }),
    )
}

fn config_pairs(path: Option<&Path>, sets: &[String]) -> Result<Vec<(String, String)>, Error> {
    let mut pairs = Vec::new();
    if let Some(p) = path {
        let text = read_text(p)?;
        for (ln, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                usage(format!(
                    "{}:{}: expected `key = value`",
                    p.display(),
                    ln + 1
                ))
            })?;
            pairs.push((k.trim().to_string(), v.trim().to_string()));
        }
    }
    for s in sets {
        let (k, v) = s
            .split_once('=')
            .ok_or_else(|| usage(format!("--set `{s}`: expected KEY=VALUE")))?;
        pairs.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(pairs)
}

fn parse_value<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, Error> {
    value
        .parse()
        .map_err(|_| usage(format!("configuration key `{key}`: bad value `{value}`")))
}

fn apply_setting(
    mc: &mut ModelConfig,
    tc: &mut TrainConfig,
    key: &str,
    value: &str,
) -> Result<(), Error> {
    match key {
        "cnn-window-size" => mc.cnn_window_size = parse_value(key, value)?,
        "cnn-number-of-filters" => mc.cnn_number_of_filters = parse_value(key, value)?,
        "bilstm-encoder-layers" => mc.bilstm_encoder_layers = parse_value(key, value)?,
        "bilstm-encoder-size" => mc.bilstm_encoder_size = parse_value(key, value)?,
        "lstm-decoder-layers" => mc.lstm_decoder_layers = parse_value(key, value)?,
        "lstm-decoder-size" => mc.lstm_decoder_size = parse_value(key, value)?,
        "lstm-layers-dropout" => mc.lstm_layers_dropout = parse_value(key, value)?,
        "embeddings-dropout" => mc.embeddings_dropout = parse_value(key, value)?,
        "word-pos-char-embedding-dimension" => {
            mc.word_pos_char_embedding_dimension = parse_value(key, value)?
        }
        "external-embedding-dimension" => {
            mc.external_embedding_dimension = parse_value(key, value)?
        }
        "mlp-layers" => mc.mlp_layers = parse_value(key, value)?,
        "mlp-activation-function" => mc.mlp_activation_function = value.to_string(),
        "arc-mlp-size" => mc.arc_mlp_size = parse_value(key, value)?,
        "label-mlp-size" => mc.label_mlp_size = parse_value(key, value)?,
        "unk-replacement-probability" => {
            mc.unk_replacement_probability = parse_value(key, value)?
        }
        "flat-unk-probability" => mc.flat_unk_probability = parse_value(key, value)?,
        "decoder-init-encoder-final" => {
            mc.decoder_init_encoder_final = parse_value(key, value)?
        }
        "transition" => mc.transition = parse_value(key, value)?,
        "fusion" => mc.fusion = parse_value(key, value)?,
        "gate" => mc.gate = parse_value(key, value)?,
        "batch-size" => tc.batch_size = parse_value(key, value)?,
        "initial-learning-rate" => tc.initial_learning_rate = parse_value(key, value)?,
        "beta1" => tc.beta1 = parse_value(key, value)?,
        "beta2" => tc.beta2 = parse_value(key, value)?,
        "decay-rate" => tc.decay_rate = parse_value(key, value)?,
        "gradient-clipping" => tc.gradient_clipping = parse_value(key, value)?,
        "max-epochs" => tc.max_epochs = parse_value(key, value)?,
        "patience" => tc.patience = parse_value(key, value)?,
        "dev-metric" => tc.dev_metric = parse_value(key, value)?,
        "seed" => tc.seed = parse_value(key, value)?,
        "deterministic" => tc.deterministic = parse_value(key, value)?,
        "threads" => tc.threads = parse_value(key, value)?,
        _ => return Err(usage(format!("unknown configuration key `{key}`"))),
    }
    Ok(())
}

/// Defaults, then the config file, then repeated `--set`, then the
/// dedicated flags; later sources win.
fn build_configs(a: &TrainArgs) -> Result<(ModelConfig, TrainConfig), Error> {
    let base = if a.tiny {
        ModelConfig::tiny
    } else {
        ModelConfig::defaults
    };
    let mut mc = base(
        TransitionKind::LeftToRight,
        FusionKind::Sequential,
        GateKind::Gate1,
    );
    let mut tc = TrainConfig::default();
    for (k, v) in config_pairs(a.config.as_deref(), &a.set)? {
        apply_setting(&mut mc, &mut tc, &k, &v)?;
    }
    if let Some(s) = &a.system {
        mc.transition = parse_system(s)?;
    }
    if let Some(s) = &a.fusion {
        mc.fusion = s
            .parse()
            .map_err(|_| usage(format!("unknown fusion `{s}`")))?;
    }
    if let Some(s) = &a.gate {
        mc.gate = s
            .parse()
            .map_err(|_| usage(format!("unknown gate `{s}` (expected gate1 or gate2)")))?;
    }
    if let Some(seed) = a.seed {
        tc.seed = seed;
    }
    if let Some(threads) = a.threads {
        tc.threads = threads;
    }
    if let Some(d) = a.deterministic {
        tc.deterministic = d;
    }
    mc.validate()?;
    tc.validate()?;
    Ok((mc, tc))
}

fn run_train(a: TrainArgs) -> Result<(), Error> {
    let (mc, tc) = build_configs(&a)?;
    let train_tb = read_treebank(&a.train)?;
    let dev_tb = match &a.dev {
        Some(p) => read_treebank(p)?,
        None => Vec::new(),
    };
    let ext = read_external(a.external.as_deref())?;
    let outcome = train(&train_tb, &dev_tb, &mc, &tc, ext.as_ref())?;
    save_checkpoint(&outcome.model, &a.model_out)?;
    let log = epoch_log_tsv(&outcome.log);
    match &a.log {
        Some(p) => write_text(p, &log)?,
        None => print!("{log}"),
    }
    eprintln!(
        "best epoch {} with dev {} {:.6}",
        outcome.best_epoch, tc.dev_metric, outcome.best_dev
    );
    write_manifest(
        &a.model_out,
        json!({
            "command": "train",
            "seed": tc.seed,
            "model-config": mc,
            "train-config": tc,
            "inputs": {
                "train": path_json(&a.train),
                "dev": opt_path_json(a.dev.as_ref()),
                "external": opt_path_json(a.external.as_ref()),
                "config-file": opt_path_json(a.config.as_ref()),
            },
            "outputs": {
                "model": path_json(&a.model_out),
                "log": opt_path_json(a.log.as_ref()),
            },
            "best-epoch": outcome.best_epoch,
            "best-dev": outcome.best_dev,
        }),
    )
}

fn run_parse(a: ParseArgs) -> Result<(), Error> {
    let model = load_checkpoint(&a.model)?;
    let tb = read_treebank(&a.input)?;
    let ext = read_external(a.external.as_deref())?;
    let opts = DecodeOptions {
        beam: a.beam,
        projective: a.projective,
        single_root: a.single_root,
    };
    let mut jobs: Vec<(Vec<TokenIds>, Option<&[Vec<f64>]>)> = Vec::with_capacity(tb.len());
    for (i, s) in tb.iter().enumerate() {
        let rows = match ext.as_ref() {
            None => None,
            Some(e) => Some(e.lookup(&sentence_key(s, i), s.len())?),
        };
        jobs.push((model.vocab.encode_sentence(s), rows));
    }
    let parses = parallel_map(&jobs, a.threads, |_, (ids, rows)| {
        parse_sentence(&model, ids, *rows, &opts)
    });
    let mut out = Vec::with_capacity(tb.len());
    for (s, r) in tb.iter().zip(parses) {
        let p = r?;
        let labels = p
            .label_ids
            .iter()
            .map(|&l| model.vocab.label_name(l).to_string())
            .collect();
        out.push(s.with_tree(&DepTree {
            heads: p.heads,
            labels,
        }));
    }
    write_text(&a.output, &write_conllu(&out))?;
    write_manifest(
        &a.output,
        json!({
            "command": "parse",
            "beam": a.beam,
            "projective": a.projective,
            "single-root": a.single_root,
            "model-config": model.config,
            "inputs": {
                "model": path_json(&a.model),
                "treebank": path_json(&a.input),
                "external": opt_path_json(a.external.as_ref()),
            },
            "outputs": { "parsed": path_json(&a.output) },
        }),
    )
}

fn run_eval(a: EvalArgs) -> Result<(), Error> {
    let gold = read_treebank(&a.gold)?;
    let pred = read_treebank(&a.pred)?;
    let policy = parse_punct(&a.punct)?;
    let report = uas_las(&gold, &pred, policy)?;
    let body = if a.json {
        report_json(&report)
    } else {
        report_tsv(&report)
    };
    emit(
        &body,
        a.output.as_ref(),
        json!({
            "command": "eval",
            "punctuation-policy": policy.name(),
            "inputs": { "gold": path_json(&a.gold), "pred": path_json(&a.pred) },
            "outputs": { "report": opt_path_json(a.output.as_ref()) },
        }),
    )
}

fn parse_bin_edges(s: &str) -> Result<Vec<usize>, Error> {
    s.split(',')
        .map(|p| parse_value("bin-edges", p.trim()))
        .collect()
}

fn run_analyze(a: AnalyzeArgs) -> Result<(), Error> {
    let mut gold = read_treebank(&a.gold)?;
    let mut pred = read_treebank(&a.pred)?;
    let policy = parse_punct(&a.punct)?;
    let edges = match &a.bin_edges {
        Some(s) => parse_bin_edges(s)?,
        None => DEFAULT_BIN_EDGES.to_vec(),
    };
    if let Some(budget) = a.budget {
        if gold.len() != pred.len() {
            // evaluate() reports the precise mismatch; sampling first
            // would index out of range.
            evaluate(&gold, &pred, policy, &edges)?;
        }
        let keep = sample_indices(&gold, budget, a.seed)?;
        gold = keep.iter().map(|&i| gold[i].clone()).collect();
        pred = keep.iter().map(|&i| pred[i].clone()).collect();
    }
    let report = evaluate(&gold, &pred, policy, &edges)?;
    let body = bins_tsv(&report);
    let manifest = json!({
        "command": "analyze",
        "punctuation-policy": policy.name(),
        "bin-edges": edges,
        "budget": a.budget,
        "seed": a.seed,
        "inputs": { "gold": path_json(&a.gold), "pred": path_json(&a.pred) },
        "outputs": {
            "table": opt_path_json(a.output.as_ref()),
            "plot-data": opt_path_json(a.emit_plot_data.as_ref()),
        },
    });
    if let Some(p) = &a.emit_plot_data {
        write_text(p, &body)?;
        write_manifest(p, manifest.clone())?;
    }
    emit(&body, a.output.as_ref(), manifest)
}

fn run_gradcheck(a: GradcheckArgs) -> Result<(), Error> {
    let systems = parse_systems(&a.system)?;
    let fusions = if a.fusion.eq_ignore_ascii_case("all") {
        FusionKind::ALL.to_vec()
    } else {
        vec![a
            .fusion
            .parse()
            .map_err(|_| usage(format!("unknown fusion `{}`", a.fusion)))?]
    };
    let gates = if a.gate.eq_ignore_ascii_case("all") {
        GateKind::ALL.to_vec()
    } else {
        vec![a
            .gate
            .parse()
            .map_err(|_| usage(format!("unknown gate `{}`", a.gate)))?]
    };
    if a.len == 0 {
        return Err(usage("sentence length must be at least 1".into()));
    }
    let explicit = systems.len() == 1 && fusions.len() == 1;
    if explicit && !fusions[0].compatible_with(systems[0]) {
        return Err(usage(format!(
            "fusion `{}` cannot run under transition `{}`",
            fusions[0], systems[0]
        )));
    }

    let sents = corpus(
        &SynthConfig {
            sentences: 1,
            min_len: a.len,
            max_len: a.len,
            vocab_words: 12,
            ..SynthConfig::default()
        },
        a.seed,
    );
    let vocab = Vocab::build(&sents);
    let ids = vocab.encode_sentence(&sents[0]);
    let heads = sents[0].heads();
    let labels = vocab.label_ids(&sents[0]);
    let input = LossInput {
        ids: &ids,
        heads: &heads,
        label_ids: &labels,
        ext: None,
    };

    println!("transition\tfusion\tgate\tmax-rel-err\tcoords\tstatus");
    let mut worst = 0.0f64;
    for &t in &systems {
        for &f in &fusions {
            if !f.compatible_with(t) {
                continue;
            }
            for &gate in &gates {
                let config = ModelConfig::micro(t, f, gate);
                let model: Model<f64> = Model::new(config.clone(), vocab.clone(), a.seed)?;
                let param_ids = model.params.ids.clone();
                let label_count = vocab.label_count();
                let mut store = model.params.store;
                // Surface model errors before grad_check's closure, which
                // cannot return them.
                let mut g = Graph::new();
                build_sentence_loss(&mut g, &config, &store, &param_ids, label_count, &input, None)?;
                drop(g);
                let report = grad_check(
                    &mut store,
                    |g, store| {
                        build_sentence_loss(
                            g,
                            &config,
                            store,
                            &param_ids,
                            label_count,
                            &input,
                            None,
                        )
                        .expect("loss built once already")
                    },
                    a.eps,
                    a.coords,
                    a.seed,
                )?;
                worst = worst.max(report.max_rel_err);
                let status = if report.max_rel_err < a.tolerance {
                    "ok"
                } else {
                    "fail"
                };
                println!(
                    "{t}\t{f}\t{gate}\t{:.3e}\t{}\t{status}",
                    report.max_rel_err, report.coords_checked
                );
            }
        }
    }
    if worst >= a.tolerance {
        eprintln!("error: max relative error {worst:.3e} exceeds tolerance {:.3e}", a.tolerance);
        std::process::exit(3);
    }
    Ok(())
}
