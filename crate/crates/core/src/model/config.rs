use serde::{Deserialize, Serialize};

use crate::transition::TransitionKind;

use super::ModelError;

/// Which tracked dependents of the focus word the decoder conditions on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DepSlot {
    Lm,
    Rm,
    La,
    Ra,
}

impl DepSlot {
    pub const ALL: [DepSlot; 4] = [DepSlot::Lm, DepSlot::Rm, DepSlot::La, DepSlot::Ra];

    pub fn index(&self) -> usize {
        match self {
            DepSlot::Lm => 0,
            DepSlot::Rm => 1,
            DepSlot::La => 2,
            DepSlot::Ra => 3,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            DepSlot::Lm => "lm",
            DepSlot::Rm => "rm",
            DepSlot::La => "la",
            DepSlot::Ra => "ra",
        }
    }
}

/// Fusion variant: which dependent decoder states enter the gate and the
/// fused pre-state. `Sequential` conditions on the previous decoder state
/// only and is the plain pointer-network baseline; the others add
/// structure and are tied to the transition system that can produce the
/// dependents they read.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FusionKind {
    #[serde(rename = "sequential")]
    Sequential,
    #[serde(rename = "full")]
    Full,
    #[serde(rename = "simple")]
    Simple,
    #[serde(rename = "l-adapted")]
    LAdapted,
    #[serde(rename = "l-simple")]
    LSimple,
    #[serde(rename = "r-adapted")]
    RAdapted,
    #[serde(rename = "r-simple")]
    RSimple,
}

impl FusionKind {
    pub const ALL: [FusionKind; 7] = [
        FusionKind::Sequential,
        FusionKind::Full,
        FusionKind::Simple,
        FusionKind::LAdapted,
        FusionKind::LSimple,
        FusionKind::RAdapted,
        FusionKind::RSimple,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            FusionKind::Sequential => "sequential",
            FusionKind::Full => "full",
            FusionKind::Simple => "simple",
            FusionKind::LAdapted => "l-adapted",
            FusionKind::LSimple => "l-simple",
            FusionKind::RAdapted => "r-adapted",
            FusionKind::RSimple => "r-simple",
        }
    }

    pub fn active_slots(&self) -> &'static [DepSlot] {
        match self {
            FusionKind::Sequential => &[],
            FusionKind::Full => &[DepSlot::Lm, DepSlot::Rm, DepSlot::La, DepSlot::Ra],
            FusionKind::Simple => &[DepSlot::Lm, DepSlot::Rm],
            FusionKind::LAdapted => &[DepSlot::Lm, DepSlot::La],
            FusionKind::LSimple => &[DepSlot::Lm],
            FusionKind::RAdapted => &[DepSlot::Rm, DepSlot::Ra],
            FusionKind::RSimple => &[DepSlot::Rm],
        }
    }

    /// Left/right-specific variants only fit the system that attaches
    /// dependents on that side before the focus; full and simple need both
    /// sides. The sequential baseline fits any system.
    pub fn compatible_with(&self, kind: TransitionKind) -> bool {
        match self {
            FusionKind::Sequential => true,
            FusionKind::Full | FusionKind::Simple => kind == TransitionKind::OutsideIn,
            FusionKind::LAdapted | FusionKind::LSimple => kind == TransitionKind::LeftToRight,
            FusionKind::RAdapted | FusionKind::RSimple => kind == TransitionKind::RightToLeft,
        }
    }
}

impl std::str::FromStr for FusionKind {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, ModelError> {
        match s.to_ascii_lowercase().as_str() {
            "sequential" => Ok(FusionKind::Sequential),
            "full" => Ok(FusionKind::Full),
            "simple" => Ok(FusionKind::Simple),
            "l-adapted" => Ok(FusionKind::LAdapted),
            "l-simple" => Ok(FusionKind::LSimple),
            "r-adapted" => Ok(FusionKind::RAdapted),
            "r-simple" => Ok(FusionKind::RSimple),
            _ => Err(ModelError::UnknownName {
                what: "fusion",
                value: s.to_string(),
            }),
        }
    }
}

impl std::fmt::Display for FusionKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum GateKind {
    #[serde(rename = "gate1")]
    Gate1,
    #[serde(rename = "gate2")]
    Gate2,
}

impl GateKind {
    pub const ALL: [GateKind; 2] = [GateKind::Gate1, GateKind::Gate2];

    pub fn name(&self) -> &'static str {
        match self {
            GateKind::Gate1 => "gate1",
            GateKind::Gate2 => "gate2",
        }
    }
}

impl std::str::FromStr for GateKind {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, ModelError> {
        match s.to_ascii_lowercase().as_str() {
            "gate1" | "1" => Ok(GateKind::Gate1),
            "gate2" | "2" => Ok(GateKind::Gate2),
            _ => Err(ModelError::UnknownName {
                what: "gate",
                value: s.to_string(),
            }),
        }
    }
}

impl std::fmt::Display for GateKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Network hyperparameters. Field names mirror the configuration keys the
/// command line accepts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct ModelConfig {
    pub cnn_window_size: usize,
    pub cnn_number_of_filters: usize,
    pub bilstm_encoder_layers: usize,
    pub bilstm_encoder_size: usize,
    pub lstm_decoder_layers: usize,
    pub lstm_decoder_size: usize,
    pub lstm_layers_dropout: f64,
    pub embeddings_dropout: f64,
    pub word_pos_char_embedding_dimension: usize,
    pub external_embedding_dimension: usize,
    pub mlp_layers: usize,
    pub mlp_activation_function: String,
    pub arc_mlp_size: usize,
    pub label_mlp_size: usize,
    pub unk_replacement_probability: f64,
    pub flat_unk_probability: bool,
    /// Initialize the decoder from the last encoder state instead of zeros.
    pub decoder_init_encoder_final: bool,
    pub transition: TransitionKind,
    pub fusion: FusionKind,
    pub gate: GateKind,
}

impl ModelConfig {
    /// Full-scale hyperparameter set.
    pub fn defaults(transition: TransitionKind, fusion: FusionKind, gate: GateKind) -> ModelConfig {
        ModelConfig {
            cnn_window_size: 3,
            cnn_number_of_filters: 50,
            bilstm_encoder_layers: 3,
            bilstm_encoder_size: 512,
            lstm_decoder_layers: 1,
            lstm_decoder_size: 512,
            lstm_layers_dropout: 0.33,
            embeddings_dropout: 0.33,
            word_pos_char_embedding_dimension: 100,
            external_embedding_dimension: 0,
            mlp_layers: 1,
            mlp_activation_function: "elu".to_string(),
            arc_mlp_size: 512,
            label_mlp_size: 128,
            unk_replacement_probability: 0.5,
            flat_unk_probability: false,
            decoder_init_encoder_final: false,
            transition,
            fusion,
            gate,
        }
    }

    /// Every learned dimension scaled down to 64: big enough to overfit a
    /// toy corpus, small enough for CPU minutes.
    pub fn tiny(transition: TransitionKind, fusion: FusionKind, gate: GateKind) -> ModelConfig {
        ModelConfig {
            cnn_number_of_filters: 64,
            bilstm_encoder_size: 64,
            lstm_decoder_size: 64,
            word_pos_char_embedding_dimension: 64,
            arc_mlp_size: 64,
            label_mlp_size: 64,
            ..ModelConfig::defaults(transition, fusion, gate)
        }
    }

    /// Deliberately small and mutually prime dimensions for unit tests and
    /// 64-bit gradient checks.
    pub fn micro(transition: TransitionKind, fusion: FusionKind, gate: GateKind) -> ModelConfig {
        ModelConfig {
            cnn_number_of_filters: 6,
            bilstm_encoder_layers: 2,
            bilstm_encoder_size: 7,
            lstm_decoder_size: 6,
            lstm_layers_dropout: 0.0,
            embeddings_dropout: 0.0,
            word_pos_char_embedding_dimension: 5,
            arc_mlp_size: 8,
            label_mlp_size: 5,
            ..ModelConfig::defaults(transition, fusion, gate)
        }
    }

    /// Dimension of one token's embedding stack (word + char CNN + POS,
    /// plus external vectors when configured).
    pub fn token_input_dim(&self) -> usize {
        2 * self.word_pos_char_embedding_dimension
            + self.cnn_number_of_filters
            + self.external_embedding_dimension
    }

    /// Encoder state size (both directions).
    pub fn encoder_output_dim(&self) -> usize {
        2 * self.bilstm_encoder_size
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if !self.fusion.compatible_with(self.transition) {
            return Err(ModelError::IncompatibleFusion {
                fusion: self.fusion,
                transition: self.transition,
            });
        }
        let bad = |msg: &str| Err(ModelError::BadConfig(msg.to_string()));
        if self.cnn_window_size % 2 == 0 || self.cnn_window_size == 0 {
            return bad("cnn-window-size must be odd");
        }
        if self.lstm_decoder_layers != 1 {
            return bad("lstm-decoder-layers must be 1");
        }
        if self.mlp_layers != 1 {
            return bad("mlp-layers must be 1");
        }
        if !self.mlp_activation_function.eq_ignore_ascii_case("elu") {
            return bad("mlp-activation-function must be elu");
        }
        for (name, v) in [
            ("lstm-layers-dropout", self.lstm_layers_dropout),
            ("embeddings-dropout", self.embeddings_dropout),
        ] {
            if !(0.0..1.0).contains(&v) {
                return Err(ModelError::BadConfig(format!("{name} must be in [0, 1)")));
            }
        }
        if !(0.0..=1.0).contains(&self.unk_replacement_probability) {
            return bad("unk-replacement-probability must be in [0, 1]");
        }
        for (name, v) in [
            ("cnn-number-of-filters", self.cnn_number_of_filters),
            ("bilstm-encoder-layers", self.bilstm_encoder_layers),
            ("bilstm-encoder-size", self.bilstm_encoder_size),
            ("lstm-decoder-size", self.lstm_decoder_size),
            ("word-pos-char-embedding-dimension", self.word_pos_char_embedding_dimension),
            ("arc-mlp-size", self.arc_mlp_size),
            ("label-mlp-size", self.label_mlp_size),
        ] {
            if v == 0 {
                return Err(ModelError::BadConfig(format!("{name} must be positive")));
            }
        }
        Ok(())
    }
}
