use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{ParamId, ParamStore, Scalar, Tensor};

use super::config::{DepSlot, GateKind, ModelConfig};
use super::vocab::Vocab;

/// Per-layer, per-direction LSTM weights: one combined input/recurrent
/// matrix and a bias, both over the four gates.
#[derive(Debug, Clone, Copy)]
pub struct LstmIds {
    pub w: ParamId,
    pub b: ParamId,
}

/// Handles into the parameter store, resolved once at construction.
/// Optional entries exist only when the configuration calls for them, so
/// inactive fusion slots never allocate weights.
#[derive(Debug, Clone)]
pub struct ParamIds {
    pub word_emb: ParamId,
    pub char_emb: ParamId,
    pub pos_emb: ParamId,
    pub cnn_w: ParamId,
    pub cnn_b: ParamId,
    pub root_input: ParamId,
    pub enc_fw: Vec<LstmIds>,
    pub enc_bw: Vec<LstmIds>,
    pub dec_cell: LstmIds,
    pub dec_init_w: Option<ParamId>,
    pub gate_wp: Option<ParamId>,
    pub gate_dep: [Option<ParamId>; 4],
    pub gate_b: ParamId,
    pub fuse_wp: ParamId,
    pub fuse_dep: [Option<ParamId>; 4],
    pub null_dep: Option<ParamId>,
    pub arc_f1_w: ParamId,
    pub arc_f1_b: ParamId,
    pub arc_f2_w: ParamId,
    pub arc_f2_b: ParamId,
    pub arc_w: ParamId,
    pub arc_u: ParamId,
    pub arc_v: ParamId,
    pub arc_b: ParamId,
    pub lab_head_w: ParamId,
    pub lab_head_b: ParamId,
    pub lab_dep_w: ParamId,
    pub lab_dep_b: ParamId,
    pub lab_w: ParamId,
    pub lab_u: ParamId,
    pub lab_v: ParamId,
    pub lab_b: ParamId,
}

/// All learned tensors of one model instance.
#[derive(Debug, Clone)]
pub struct ModelParams<F: Scalar> {
    pub store: ParamStore<F>,
    pub ids: ParamIds,
}

struct Init<'a, F: Scalar> {
    store: &'a mut ParamStore<F>,
    rng: ChaCha8Rng,
}

impl<F: Scalar> Init<'_, F> {
    fn uniform(&mut self, name: &str, shape: &[usize], limit: f64) -> ParamId {
        let len: usize = shape.iter().product();
        let data: Vec<F> = (0..len)
            .map(|_| F::from_f64(self.rng.gen_range(-limit..limit)))
            .collect();
        self.store.register(name, Tensor::from_vec(shape, data))
    }

    /// Dense weight matrix, scaled by fan-in and fan-out.
    fn xavier(&mut self, name: &str, rows: usize, cols: usize) -> ParamId {
        let limit = (6.0 / (rows + cols) as f64).sqrt();
        self.uniform(name, &[rows, cols], limit)
    }

    /// Embedding-style table with a fixed small range.
    fn table(&mut self, name: &str, rows: usize, cols: usize) -> ParamId {
        self.uniform(name, &[rows, cols], 0.1)
    }

    fn zeros(&mut self, name: &str, shape: &[usize]) -> ParamId {
        self.store.register(name, Tensor::zeros(shape))
    }

    /// LSTM pair: xavier matrix, zero bias except the forget-gate block,
    /// which starts at one so memory is initially retained.
    fn lstm(&mut self, prefix: &str, hidden: usize, input: usize) -> LstmIds {
        let w = self.xavier(&format!("{prefix}.w"), 4 * hidden, input + hidden);
        let mut bias = Tensor::zeros(&[4 * hidden]);
        for x in &mut bias.data_mut()[hidden..2 * hidden] {
            *x = F::one();
        }
        let b = self.store.register(&format!("{prefix}.b"), bias);
        LstmIds { w, b }
    }
}

impl<F: Scalar> ModelParams<F> {
    /// Allocate and initialize every tensor the configuration needs.
    /// Registration order is fixed, so a given seed always produces the
    /// same values and checkpoints list tensors identically.
    pub fn init(config: &ModelConfig, vocab: &Vocab, seed: u64) -> ModelParams<F> {
        let mut store = ParamStore::new();
        let mut init = Init {
            store: &mut store,
            rng: ChaCha8Rng::seed_from_u64(seed),
        };
        let e = config.word_pos_char_embedding_dimension;
        let token_dim = config.token_input_dim();
        let h = config.bilstm_encoder_size;
        let enc_out = config.encoder_output_dim();
        let d = config.lstm_decoder_size;
        let a = config.arc_mlp_size;
        let b_dim = config.label_mlp_size;
        let labels = vocab.label_count();

        let word_emb = init.table("emb.word", vocab.word_count(), e);
        let char_emb = init.table("emb.char", vocab.char_count(), e);
        let pos_emb = init.table("emb.pos", vocab.pos_count(), e);
        let cnn_w = init.xavier(
            "cnn.w",
            config.cnn_number_of_filters,
            config.cnn_window_size * e,
        );
        let cnn_b = init.zeros("cnn.b", &[config.cnn_number_of_filters]);
        let root_input = init.uniform("root.input", &[token_dim], 0.1);

        let mut enc_fw = Vec::new();
        let mut enc_bw = Vec::new();
        for layer in 0..config.bilstm_encoder_layers {
            let input = if layer == 0 { token_dim } else { enc_out };
            enc_fw.push(init.lstm(&format!("enc.l{layer}.fw"), h, input));
            enc_bw.push(init.lstm(&format!("enc.l{layer}.bw"), h, input));
        }

        let dec_cell = init.lstm("dec.cell", d, d + enc_out);
        let dec_init_w = config
            .decoder_init_encoder_final
            .then(|| init.xavier("dec.init.w", d, enc_out));

        let slots = config.fusion.active_slots();
        let gate_wp = (config.gate == GateKind::Gate1).then(|| init.xavier("gate.wp", d, d));
        let mut gate_dep = [None; 4];
        for slot in slots {
            gate_dep[slot.index()] =
                Some(init.xavier(&format!("gate.w{}", slot.name()), d, d));
        }
        let gate_b = init.zeros("gate.b", &[d]);
        let fuse_wp = init.xavier("fuse.wp", d, d);
        let mut fuse_dep = [None; 4];
        for slot in slots {
            fuse_dep[slot.index()] =
                Some(init.xavier(&format!("fuse.w{}", slot.name()), d, d));
        }
        // Absent dependents fall back to this learned vector; zero start so
        // an untrained model treats them as "no contribution".
        let null_dep = (!slots.is_empty()).then(|| init.zeros("null.dep", &[d]));

        let arc_f1_w = init.xavier("arc.f1.w", a, d);
        let arc_f1_b = init.zeros("arc.f1.b", &[a]);
        let arc_f2_w = init.xavier("arc.f2.w", a, enc_out);
        let arc_f2_b = init.zeros("arc.f2.b", &[a]);
        let arc_w = init.xavier("arc.w", a, a);
        let arc_u = init.zeros("arc.u", &[a]);
        let arc_v = init.zeros("arc.v", &[a]);
        let arc_b = init.zeros("arc.b", &[]);

        let lab_head_w = init.xavier("lab.head.w", b_dim, enc_out);
        let lab_head_b = init.zeros("lab.head.b", &[b_dim]);
        let lab_dep_w = init.xavier("lab.dep.w", b_dim, enc_out);
        let lab_dep_b = init.zeros("lab.dep.b", &[b_dim]);
        let lab_w = init.xavier("lab.w", labels * b_dim, b_dim);
        let lab_u = init.zeros("lab.u", &[labels, b_dim]);
        let lab_v = init.zeros("lab.v", &[labels, b_dim]);
        let lab_b = init.zeros("lab.b", &[labels]);

        ModelParams {
            ids: ParamIds {
                word_emb,
                char_emb,
                pos_emb,
                cnn_w,
                cnn_b,
                root_input,
                enc_fw,
                enc_bw,
                dec_cell,
                dec_init_w,
                gate_wp,
                gate_dep,
                gate_b,
                fuse_wp,
                fuse_dep,
                null_dep,
                arc_f1_w,
                arc_f1_b,
                arc_f2_w,
                arc_f2_b,
                arc_w,
                arc_u,
                arc_v,
                arc_b,
                lab_head_w,
                lab_head_b,
                lab_dep_w,
                lab_dep_b,
                lab_w,
                lab_u,
                lab_v,
                lab_b,
            },
            store,
        }
    }

    pub fn gate_dep(&self, slot: DepSlot) -> Option<ParamId> {
        self.ids.gate_dep[slot.index()]
    }

    pub fn fuse_dep(&self, slot: DepSlot) -> Option<ParamId> {
        self.ids.fuse_dep[slot.index()]
    }

    /// Zero everything that feeds dependent structure into the decoder:
    /// gate and fusion weights of the active slots plus the null-dependent
    /// vector. What remains is exactly the sequential baseline.
    pub fn zero_structure_weights(&mut self) {
        let mut targets: Vec<ParamId> = Vec::new();
        targets.extend(self.ids.gate_dep.iter().flatten());
        targets.extend(self.ids.fuse_dep.iter().flatten());
        targets.extend(self.ids.null_dep);
        for id in targets {
            let shape = self.store.value(id).shape().to_vec();
            self.store.replace(id, Tensor::zeros(&shape));
        }
    }

    /// Copy every tensor whose name and shape also exist in `other`.
    /// Used to share non-structural weights across model variants.
    pub fn copy_matching(&mut self, other: &ModelParams<F>) {
        for idx in 0..self.store.len() {
            let id = ParamId(idx);
            let name = self.store.name(id).to_string();
            if let Some(src) = other.store.find(&name) {
                let src_val = other.store.value(src);
                if src_val.shape() == self.store.value(id).shape() {
                    self.store.replace(id, (**src_val).clone());
                }
            }
        }
    }

    /// Replace every tensor with zeros; handy for closed-form fixtures.
    pub fn zero_all(&mut self) {
        for idx in 0..self.store.len() {
            let id = ParamId(idx);
            let shape = self.store.value(id).shape().to_vec();
            self.store.replace(id, Tensor::zeros(&shape));
        }
    }
}
