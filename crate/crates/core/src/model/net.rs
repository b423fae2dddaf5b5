use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Graph, ParamStore, Scalar, Tensor, Var};
use crate::transition::DependentRecord;

use super::config::{GateKind, ModelConfig};
use super::params::{LstmIds, ParamIds};
use super::vocab::{TokenIds, PAD_ID};
use super::ModelError;

/// Per-sentence encoder output: one state per position with the root
/// state first, plus pointer-scorer projections that only depend on the
/// encoder side and are shared by every decoder step.
#[derive(Debug)]
pub struct Encoding {
    pub h: Vec<Var>,
    pub(crate) w2: Var,
    pub(crate) cvec: Var,
}

impl Encoding {
    /// Number of words (positions excluding the root).
    pub fn words(&self) -> usize {
        self.h.len() - 1
    }
}

/// Decoder position: the cell state plus every hidden state produced so
/// far. `states[0]` is the pre-first-step state; `states[t]` is the state
/// that chose the parent at step `t`, which later steps look up when the
/// word attached at `t` serves as a tracked dependent. Cloning is cheap,
/// so beam search can fork cursors freely.
#[derive(Debug, Clone)]
pub struct DecoderCursor {
    pub states: Vec<Var>,
    cell: Var,
}

impl DecoderCursor {
    pub fn current_state(&self) -> Var {
        *self.states.last().expect("cursor always holds s_0")
    }
}

fn lstm_cell<F: Scalar>(
    g: &mut Graph<F>,
    store: &ParamStore<F>,
    ids: LstmIds,
    hidden: usize,
    x: Var,
    h: Var,
    c: Var,
) -> (Var, Var) {
    let w = g.param(store, ids.w);
    let b = g.param(store, ids.b);
    let cat = g.concat(&[x, h]);
    let mv = g.matvec(w, cat);
    let z = g.add(mv, b);
    let zi = g.slice(z, 0, hidden);
    let zf = g.slice(z, hidden, hidden);
    let zo = g.slice(z, 2 * hidden, hidden);
    let zg = g.slice(z, 3 * hidden, hidden);
    let i = g.sigmoid(zi);
    let f = g.sigmoid(zf);
    let o = g.sigmoid(zo);
    let cand = g.tanh(zg);
    let fc = g.mul(f, c);
    let ic = g.mul(i, cand);
    let c2 = g.add(fc, ic);
    let tc = g.tanh(c2);
    let h2 = g.mul(o, tc);
    (h2, c2)
}

/// Character CNN over one form: embed, slide an odd window with PAD
/// padding, convolve, max-pool over positions, add the filter bias.
fn char_cnn<F: Scalar>(
    g: &mut Graph<F>,
    store: &ParamStore<F>,
    ids: &ParamIds,
    config: &ModelConfig,
    chars: &[usize],
) -> Var {
    debug_assert!(!chars.is_empty(), "forms are never empty");
    let table = g.param(store, ids.char_emb);
    let pad = config.cnn_window_size / 2;
    let mut vecs = Vec::with_capacity(chars.len() + 2 * pad);
    let pad_vec = g.embedding_gather(table, PAD_ID);
    vecs.extend(std::iter::repeat(pad_vec).take(pad));
    for &c in chars {
        vecs.push(g.embedding_gather(table, c));
    }
    vecs.extend(std::iter::repeat(pad_vec).take(pad));
    let mut windows = Vec::with_capacity(chars.len());
    for start in 0..chars.len() {
        windows.push(g.concat(&vecs[start..start + config.cnn_window_size]));
    }
    let stacked = g.stack_rows(&windows);
    let w = g.param(store, ids.cnn_w);
    let wt = g.transpose(w);
    let conv = g.matmat(stacked, wt);
    let pooled = g.max_over_rows(conv);
    let b = g.param(store, ids.cnn_b);
    g.add(pooled, b)
}

/// Run the full encoder: token embedding stacks (word, char CNN, POS,
/// optional external vectors), the learned root vector at position 0, and
/// the stacked bidirectional LSTM. Dropout is applied to layer inputs
/// only when an RNG is supplied, i.e. during training.
pub fn encode<F: Scalar>(
    g: &mut Graph<F>,
    config: &ModelConfig,
    store: &ParamStore<F>,
    ids: &ParamIds,
    tokens: &[TokenIds],
    ext: Option<&[Vec<f64>]>,
    mut rng: Option<&mut ChaCha8Rng>,
) -> Result<Encoding, ModelError> {
    let n = tokens.len();
    if n == 0 {
        return Err(ModelError::EmptySentence);
    }
    let ext_dim = config.external_embedding_dimension;
    if let Some(vecs) = ext {
        if vecs.len() != n {
            return Err(ModelError::BadLossInput(format!(
                "{} external vectors for {n} tokens",
                vecs.len()
            )));
        }
        for v in vecs {
            if v.len() != ext_dim {
                return Err(ModelError::ExternalDim {
                    expected: ext_dim,
                    found: v.len(),
                });
            }
        }
    } else if ext_dim > 0 {
        return Err(ModelError::BadLossInput(format!(
            "model expects {ext_dim}-dim external vectors but none were given"
        )));
    }

    let word_table = g.param(store, ids.word_emb);
    let pos_table = g.param(store, ids.pos_emb);
    let mut seq = Vec::with_capacity(n + 1);
    seq.push(g.param(store, ids.root_input));
    for (i, tok) in tokens.iter().enumerate() {
        let word = g.embedding_gather(word_table, tok.word);
        let chars = char_cnn(g, store, ids, config, &tok.chars);
        let pos = g.embedding_gather(pos_table, tok.pos);
        let mut parts = vec![word, chars, pos];
        if let Some(vecs) = ext {
            let data: Vec<F> = vecs[i].iter().map(|&x| F::from_f64(x)).collect();
            parts.push(g.constant(Tensor::vector(data)));
        }
        seq.push(g.concat(&parts));
    }

    let h = config.bilstm_encoder_size;
    for layer in 0..config.bilstm_encoder_layers {
        let rate = if layer == 0 {
            config.embeddings_dropout
        } else {
            config.lstm_layers_dropout
        };
        if let Some(r) = rng.as_deref_mut() {
            for x in &mut seq {
                *x = g.dropout(*x, rate, r);
            }
        }
        let zero = g.constant(Tensor::zeros(&[h]));
        let mut fw = Vec::with_capacity(seq.len());
        let (mut hs, mut cs) = (zero, zero);
        for &x in &seq {
            let (h2, c2) = lstm_cell(g, store, ids.enc_fw[layer], h, x, hs, cs);
            fw.push(h2);
            hs = h2;
            cs = c2;
        }
        let mut bw = Vec::with_capacity(seq.len());
        let (mut hs, mut cs) = (zero, zero);
        for &x in seq.iter().rev() {
            let (h2, c2) = lstm_cell(g, store, ids.enc_bw[layer], h, x, hs, cs);
            bw.push(h2);
            hs = h2;
            cs = c2;
        }
        bw.reverse();
        seq = fw
            .iter()
            .zip(&bw)
            .map(|(&f, &b)| g.concat(&[f, b]))
            .collect();
    }

    // Pointer-score pieces that depend only on encoder states: the
    // dependent-side MLP, its bilinear image and its linear term.
    let f2w = g.param(store, ids.arc_f2_w);
    let f2b = g.param(store, ids.arc_f2_b);
    let f2: Vec<Var> = seq
        .iter()
        .map(|&hj| {
            let mv = g.matvec(f2w, hj);
            let pre = g.add(mv, f2b);
            g.elu(pre)
        })
        .collect();
    let f2_mat = g.stack_rows(&f2);
    let arc_w = g.param(store, ids.arc_w);
    let arc_wt = g.transpose(arc_w);
    let w2 = g.matmat(f2_mat, arc_wt);
    let arc_v = g.param(store, ids.arc_v);
    let cvec = g.matvec(f2_mat, arc_v);

    Ok(Encoding { h: seq, w2, cvec })
}

/// Fresh decoder cursor: zero state and cell, or a projection of the last
/// encoder state when the configuration asks for that.
pub fn start_decoder<F: Scalar>(
    g: &mut Graph<F>,
    config: &ModelConfig,
    store: &ParamStore<F>,
    ids: &ParamIds,
    enc: &Encoding,
) -> DecoderCursor {
    let zero = g.constant(Tensor::zeros(&[config.lstm_decoder_size]));
    let s0 = match ids.dec_init_w {
        Some(wid) => {
            let w = g.param(store, wid);
            let last = *enc.h.last().expect("encoder has at least the root state");
            let mv = g.matvec(w, last);
            g.tanh(mv)
        }
        None => zero,
    };
    DecoderCursor {
        states: vec![s0],
        cell: zero,
    }
}

/// Gate and fuse the previous decoder state with the tracked dependent
/// states. `deps` is indexed by `DepSlot::index`; entries for active
/// slots must be `Some`. Returns `(gate, fused)`.
pub(crate) fn fuse<F: Scalar>(
    g: &mut Graph<F>,
    config: &ModelConfig,
    store: &ParamStore<F>,
    ids: &ParamIds,
    s_prev: Var,
    deps: &[Option<Var>; 4],
) -> (Var, Var) {
    let slots = config.fusion.active_slots();
    let b_g = g.param(store, ids.gate_b);
    let gate_pre = match config.gate {
        GateKind::Gate1 => {
            let wp = g.param(store, ids.gate_wp.expect("gate1 allocates gate.wp"));
            let mut acc = g.matvec(wp, s_prev);
            for slot in slots {
                let w = g.param(store, ids.gate_dep[slot.index()].expect("active slot"));
                let sd = deps[slot.index()].expect("active slot state");
                let term = g.matvec(w, sd);
                acc = g.add(acc, term);
            }
            g.add(acc, b_g)
        }
        GateKind::Gate2 => {
            let mut acc = b_g;
            for slot in slots {
                let w = g.param(store, ids.gate_dep[slot.index()].expect("active slot"));
                let sd = deps[slot.index()].expect("active slot state");
                let prod = g.mul(s_prev, sd);
                let term = g.matvec(w, prod);
                acc = g.add(acc, term);
            }
            acc
        }
    };
    let gate = g.sigmoid(gate_pre);

    let wp = g.param(store, ids.fuse_wp);
    let mut pre = g.matvec(wp, s_prev);
    for slot in slots {
        let w = g.param(store, ids.fuse_dep[slot.index()].expect("active slot"));
        let sd = deps[slot.index()].expect("active slot state");
        let term = g.matvec(w, sd);
        pre = g.add(pre, term);
    }
    let hprime = g.tanh(pre);
    let fused = g.mul(gate, hprime);
    (gate, fused)
}

/// One decoder step at the given focus word: fuse dependent states, run
/// the decoder cell on the fused state plus the focus encoder state, and
/// score every position as the focus word's parent. Returns the raw score
/// vector over positions `0..=n` and the advanced cursor.
pub fn decode_step<F: Scalar>(
    g: &mut Graph<F>,
    config: &ModelConfig,
    store: &ParamStore<F>,
    ids: &ParamIds,
    enc: &Encoding,
    cur: &DecoderCursor,
    focus: usize,
    snap: &DependentRecord,
) -> (Var, DecoderCursor) {
    let kind = config.transition;
    assert!(
        kind.exposes_right() || (snap.rm.is_none() && snap.ra.is_none()),
        "{} never attaches right dependents before the focus",
        kind.name()
    );
    assert!(
        kind.exposes_left() || (snap.lm.is_none() && snap.la.is_none()),
        "{} never attaches left dependents before the focus",
        kind.name()
    );

    let s_prev = cur.current_state();
    let mut deps: [Option<Var>; 4] = [None; 4];
    for slot in config.fusion.active_slots() {
        let att = match slot.index() {
            0 => snap.lm,
            1 => snap.rm,
            2 => snap.la,
            _ => snap.ra,
        };
        deps[slot.index()] = Some(match att {
            Some(a) => cur.states[a.step],
            None => g.param(store, ids.null_dep.expect("active fusion allocates null.dep")),
        });
    }
    let (_, fused) = fuse(g, config, store, ids, s_prev, &deps);

    let input = g.concat(&[fused, enc.h[focus]]);
    let (h2, c2) = lstm_cell(
        g,
        store,
        ids.dec_cell,
        config.lstm_decoder_size,
        input,
        s_prev,
        cur.cell,
    );

    let f1w = g.param(store, ids.arc_f1_w);
    let f1b = g.param(store, ids.arc_f1_b);
    let mv = g.matvec(f1w, h2);
    let pre = g.add(mv, f1b);
    let q = g.elu(pre);
    let base = g.matvec(enc.w2, q);
    let with_v = g.add(base, enc.cvec);
    let arc_u = g.param(store, ids.arc_u);
    let u_term = g.dot(arc_u, q);
    let with_u = g.add_scalar(with_v, u_term);
    let arc_b = g.param(store, ids.arc_b);
    let scores = g.add_scalar(with_u, arc_b);

    let mut states = cur.states.clone();
    states.push(h2);
    (scores, DecoderCursor { states, cell: c2 })
}

/// Raw label scores for the arc `head -> dep`, one per label id.
pub fn label_scores<F: Scalar>(
    g: &mut Graph<F>,
    config: &ModelConfig,
    store: &ParamStore<F>,
    ids: &ParamIds,
    enc: &Encoding,
    head: usize,
    dep: usize,
) -> Var {
    let b = config.label_mlp_size;
    let labels = store.value(ids.lab_b).len();
    let hw = g.param(store, ids.lab_head_w);
    let hb = g.param(store, ids.lab_head_b);
    let mv = g.matvec(hw, enc.h[head]);
    let pre = g.add(mv, hb);
    let g1 = g.elu(pre);
    let dw = g.param(store, ids.lab_dep_w);
    let db = g.param(store, ids.lab_dep_b);
    let mv = g.matvec(dw, enc.h[dep]);
    let pre = g.add(mv, db);
    let g2 = g.elu(pre);

    let w = g.param(store, ids.lab_w);
    let img = g.matvec(w, g2);
    let mut bilinear = Vec::with_capacity(labels);
    for l in 0..labels {
        let piece = g.slice(img, l * b, b);
        bilinear.push(g.dot(g1, piece));
    }
    let bil = g.concat(&bilinear);
    let u = g.param(store, ids.lab_u);
    let u_term = g.matvec(u, g1);
    let v = g.param(store, ids.lab_v);
    let v_term = g.matvec(v, g2);
    let s1 = g.add(bil, u_term);
    let s2 = g.add(s1, v_term);
    let lb = g.param(store, ids.lab_b);
    g.add(s2, lb)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::config::FusionKind;
    use crate::model::params::ModelParams;
    use crate::model::vocab::Vocab;
    use crate::transition::TransitionKind;
    use crate::treebank::parse_conllu;

    fn vocab() -> Vocab {
        let text = "\
1\tthe\t_\tDET\t_\t_\t2\tdet\t_\t_
2\tcat\t_\tNOUN\t_\t_\t3\tnsubj\t_\t_
3\tsat\t_\tVERB\t_\t_\t0\troot\t_\t_
";
        Vocab::build(&parse_conllu(text).unwrap())
    }

    fn setup(
        fusion: FusionKind,
        gate: GateKind,
    ) -> (ModelConfig, Vocab, ModelParams<f64>) {
        let kind = match fusion {
            FusionKind::LAdapted | FusionKind::LSimple => TransitionKind::LeftToRight,
            FusionKind::RAdapted | FusionKind::RSimple => TransitionKind::RightToLeft,
            _ => TransitionKind::OutsideIn,
        };
        let config = ModelConfig::micro(kind, fusion, gate);
        let v = vocab();
        let params = ModelParams::init(&config, &v, 42);
        (config, v, params)
    }

    fn tokens(v: &Vocab) -> Vec<TokenIds> {
        vec![
            v.encode_token("the", "DET"),
            v.encode_token("cat", "NOUN"),
            v.encode_token("sat", "VERB"),
        ]
    }

    #[test]
    fn encoder_emits_one_state_per_position() {
        let (config, v, params) = setup(FusionKind::Full, GateKind::Gate1);
        let mut g = Graph::new();
        let enc = encode(
            &mut g,
            &config,
            &params.store,
            &params.ids,
            &tokens(&v),
            None,
            None,
        )
        .unwrap();
        assert_eq!(enc.h.len(), 4);
        assert_eq!(enc.words(), 3);
        for &h in &enc.h {
            assert_eq!(g.value(h).unwrap().shape(), &[14]);
        }
        assert_eq!(g.value(enc.w2).unwrap().shape(), &[4, 8]);
        assert_eq!(g.value(enc.cvec).unwrap().shape(), &[4]);
    }

    #[test]
    fn encoder_is_deterministic_without_dropout() {
        let (config, v, params) = setup(FusionKind::Simple, GateKind::Gate2);
        let run = || {
            let mut g = Graph::new();
            let enc = encode(
                &mut g,
                &config,
                &params.store,
                &params.ids,
                &tokens(&v),
                None,
                None,
            )
            .unwrap();
            enc.h
                .iter()
                .map(|&h| g.value(h).unwrap().data().to_vec())
                .collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn encoder_states_react_to_token_order() {
        let (config, v, params) = setup(FusionKind::Full, GateKind::Gate1);
        let toks = tokens(&v);
        let mut swapped = toks.clone();
        swapped.swap(0, 2);
        let states = |ts: &[TokenIds]| {
            let mut g = Graph::new();
            let enc =
                encode(&mut g, &config, &params.store, &params.ids, ts, None, None).unwrap();
            g.value(enc.h[1]).unwrap().data().to_vec()
        };
        assert_ne!(states(&toks), states(&swapped));
    }

    #[test]
    fn external_vectors_are_validated() {
        let (mut config, v, _) = setup(FusionKind::Full, GateKind::Gate1);
        config.external_embedding_dimension = 4;
        let params = ModelParams::<f64>::init(&config, &v, 1);
        let toks = tokens(&v);
        let mut g = Graph::new();
        let bad_dim = vec![vec![0.0; 3]; 3];
        let err = encode(
            &mut g,
            &config,
            &params.store,
            &params.ids,
            &toks,
            Some(&bad_dim),
            None,
        )
        .unwrap_err();
        assert!(matches!(err, ModelError::ExternalDim { expected: 4, found: 3 }));
        let mut g = Graph::new();
        let missing = encode(
            &mut g,
            &config,
            &params.store,
            &params.ids,
            &toks,
            None,
            None,
        )
        .unwrap_err();
        assert!(matches!(missing, ModelError::BadLossInput(_)));
        let mut g = Graph::new();
        let good = vec![vec![0.5; 4]; 3];
        let enc = encode(
            &mut g,
            &config,
            &params.store,
            &params.ids,
            &toks,
            Some(&good),
            None,
        )
        .unwrap();
        assert_eq!(g.value(enc.h[0]).unwrap().shape(), &[14]);
    }

    #[test]
    fn gate2_with_zero_previous_state_is_half() {
        let (config, _, params) = setup(FusionKind::Full, GateKind::Gate2);
        let mut g = Graph::new();
        let d = config.lstm_decoder_size;
        let zero = g.constant(Tensor::zeros(&[d]));
        let some = g.constant(Tensor::filled(&[d], 0.7));
        let deps = [Some(some), Some(some), Some(zero), Some(some)];
        let (gate, _) = fuse(&mut g, &config, &params.store, &params.ids, zero, &deps);
        for &x in g.value(gate).unwrap().data() {
            assert!((x - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn gate1_without_dependents_uses_previous_state_only() {
        let (config, _, params) = setup(FusionKind::Sequential, GateKind::Gate1);
        let mut g = Graph::new();
        let d = config.lstm_decoder_size;
        let s: Vec<f64> = (0..d).map(|i| 0.1 * i as f64 - 0.2).collect();
        let sv = g.constant(Tensor::vector(s));
        let deps = [None; 4];
        let (gate, fused) = fuse(&mut g, &config, &params.store, &params.ids, sv, &deps);
        // Expected: sigmoid(W_gp s + b_g) and sigmoid(..) * tanh(W_p s).
        let wp = g.param(&params.store, params.ids.gate_wp.unwrap());
        let mv = g.matvec(wp, sv);
        let bg = g.param(&params.store, params.ids.gate_b);
        let pre = g.add(mv, bg);
        let want_gate = g.sigmoid(pre);
        assert_eq!(
            g.value(gate).unwrap().data(),
            g.value(want_gate).unwrap().data()
        );
        let fp = g.param(&params.store, params.ids.fuse_wp);
        let fmv = g.matvec(fp, sv);
        let th = g.tanh(fmv);
        let want_fused = g.mul(want_gate, th);
        assert_eq!(
            g.value(fused).unwrap().data(),
            g.value(want_fused).unwrap().data()
        );
    }

    #[test]
    fn decode_step_scores_every_position() {
        let (config, v, params) = setup(FusionKind::Simple, GateKind::Gate1);
        let mut g = Graph::new();
        let enc = encode(
            &mut g,
            &config,
            &params.store,
            &params.ids,
            &tokens(&v),
            None,
            None,
        )
        .unwrap();
        let cur = start_decoder(&mut g, &config, &params.store, &params.ids, &enc);
        let snap = DependentRecord::default();
        let (scores, next) =
            decode_step(&mut g, &config, &params.store, &params.ids, &enc, &cur, 1, &snap);
        assert_eq!(g.value(scores).unwrap().shape(), &[4]);
        assert_eq!(next.states.len(), 2);
        assert_eq!(
            g.value(next.current_state()).unwrap().shape(),
            &[config.lstm_decoder_size]
        );
    }

    #[test]
    #[should_panic(expected = "never attaches right dependents")]
    fn l2r_rejects_right_dependent_snapshots() {
        let config = ModelConfig::micro(
            TransitionKind::LeftToRight,
            FusionKind::LSimple,
            GateKind::Gate1,
        );
        let v = vocab();
        let params = ModelParams::<f64>::init(&config, &v, 1);
        let mut g = Graph::new();
        let enc = encode(
            &mut g,
            &config,
            &params.store,
            &params.ids,
            &tokens(&v),
            None,
            None,
        )
        .unwrap();
        let cur = start_decoder(&mut g, &config, &params.store, &params.ids, &enc);
        let snap = DependentRecord {
            rm: Some(crate::transition::Attachment { position: 2, step: 1 }),
            ..DependentRecord::default()
        };
        decode_step(&mut g, &config, &params.store, &params.ids, &enc, &cur, 1, &snap);
    }

    #[test]
    fn label_scores_cover_label_vocabulary() {
        let (config, v, params) = setup(FusionKind::Full, GateKind::Gate1);
        let mut g = Graph::new();
        let enc = encode(
            &mut g,
            &config,
            &params.store,
            &params.ids,
            &tokens(&v),
            None,
            None,
        )
        .unwrap();
        let s = label_scores(&mut g, &config, &params.store, &params.ids, &enc, 0, 3);
        assert_eq!(g.value(s).unwrap().shape(), &[v.label_count()]);
        let probs = g.softmax(s);
        let total: f64 = g.value(probs).unwrap().data().iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
        // Direction matters: head and dependent projections differ.
        let flipped = label_scores(&mut g, &config, &params.store, &params.ids, &enc, 3, 0);
        assert_ne!(g.value(s).unwrap().data(), g.value(flipped).unwrap().data());
    }

    #[test]
    fn dropout_changes_training_encodings() {
        use rand_chacha::rand_core::SeedableRng;
        let (mut config, v, _) = setup(FusionKind::Full, GateKind::Gate1);
        config.embeddings_dropout = 0.5;
        config.lstm_layers_dropout = 0.5;
        let params = ModelParams::<f64>::init(&config, &v, 5);
        let toks = tokens(&v);
        let run = |seed: u64| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut g = Graph::new();
            let enc = encode(
                &mut g,
                &config,
                &params.store,
                &params.ids,
                &toks,
                None,
                Some(&mut rng),
            )
            .unwrap();
            g.value(enc.h[1]).unwrap().data().to_vec()
        };
        assert_eq!(run(3), run(3));
        assert_ne!(run(3), run(4));
    }
}
