//! Model serialization: a length-prefixed JSON header describing the
//! configuration, vocabulary and tensor layout, followed by each tensor's
//! raw little-endian f32 data in header order. Weights survive a
//! round-trip bit for bit.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;

use super::config::ModelConfig;
use super::params::ModelParams;
use super::vocab::Vocab;
use super::{Model, ModelError};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct TensorMeta {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    format_version: u32,
    config: ModelConfig,
    vocab: Vocab,
    tensors: Vec<TensorMeta>,
}

fn file_err(path: &Path, e: std::io::Error) -> ModelError {
    ModelError::CheckpointIo(std::io::Error::new(
        e.kind(),
        format!("{}: {e}", path.display()),
    ))
}

pub fn save_checkpoint(model: &Model<f32>, path: &Path) -> Result<(), ModelError> {
    let tensors: Vec<TensorMeta> = model
        .params
        .store
        .iter()
        .map(|(_, name, value)| TensorMeta {
            name: name.to_string(),
            shape: value.shape().to_vec(),
        })
        .collect();
    let header = Header {
        format_version: CHECKPOINT_VERSION,
        config: model.config.clone(),
        vocab: model.vocab.clone(),
        tensors,
    };
    let header_bytes = serde_json::to_vec(&header)
        .map_err(|e| ModelError::BadCheckpoint(format!("header encode: {e}")))?;

    let mut w = BufWriter::new(File::create(path).map_err(|e| file_err(path, e))?);
    w.write_all(&(header_bytes.len() as u64).to_le_bytes())?;
    w.write_all(&header_bytes)?;
    for (_, _, value) in model.params.store.iter() {
        for &x in value.data() {
            w.write_all(&x.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Model<f32>, ModelError> {
    let mut r = BufReader::new(File::open(path).map_err(|e| file_err(path, e))?);
    let mut len_bytes = [0u8; 8];
    r.read_exact(&mut len_bytes)
        .map_err(|_| ModelError::BadCheckpoint("file too short for header length".into()))?;
    let header_len = u64::from_le_bytes(len_bytes) as usize;
    let mut header_bytes = vec![0u8; header_len];
    r.read_exact(&mut header_bytes)
        .map_err(|_| ModelError::BadCheckpoint("file too short for header".into()))?;
    let header: Header = serde_json::from_slice(&header_bytes)
        .map_err(|e| ModelError::BadCheckpoint(format!("header decode: {e}")))?;
    if header.format_version != CHECKPOINT_VERSION {
        return Err(ModelError::BadCheckpoint(format!(
            "format version {} (this build reads {CHECKPOINT_VERSION})",
            header.format_version
        )));
    }
    header.config.validate()?;
    let mut vocab = header.vocab;
    vocab.rebuild_index();

    // Allocate tensors of the right shapes, then overwrite each with the
    // stored data; the listed names must cover the store exactly once.
    let mut params: ModelParams<f32> = ModelParams::init(&header.config, &vocab, 0);
    if header.tensors.len() != params.store.len() {
        return Err(ModelError::BadCheckpoint(format!(
            "{} tensors listed, model needs {}",
            header.tensors.len(),
            params.store.len()
        )));
    }
    let mut seen = vec![false; params.store.len()];
    for meta in &header.tensors {
        let id = params.store.find(&meta.name).ok_or_else(|| {
            ModelError::BadCheckpoint(format!("unknown tensor `{}`", meta.name))
        })?;
        if seen[id.0] {
            return Err(ModelError::BadCheckpoint(format!(
                "tensor `{}` listed twice",
                meta.name
            )));
        }
        seen[id.0] = true;
        if params.store.value(id).shape() != meta.shape.as_slice() {
            return Err(ModelError::BadCheckpoint(format!(
                "tensor `{}` has shape {:?}, expected {:?}",
                meta.name,
                meta.shape,
                params.store.value(id).shape()
            )));
        }
        let count: usize = meta.shape.iter().product::<usize>().max(1);
        let mut bytes = vec![0u8; count * 4];
        r.read_exact(&mut bytes).map_err(|_| {
            ModelError::BadCheckpoint(format!("file too short for tensor `{}`", meta.name))
        })?;
        let data: Vec<f32> = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        params.store.replace(id, Tensor::from_vec(&meta.shape, data));
    }
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing)? != 0 {
        return Err(ModelError::BadCheckpoint("trailing data after tensors".into()));
    }
    Ok(Model {
        config: header.config,
        vocab,
        params,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{Graph, ParamId};
    use crate::model::config::{FusionKind, GateKind};
    use crate::model::LossInput;
    use crate::transition::TransitionKind;
    use crate::treebank::parse_conllu;

    fn sample_model() -> Model<f32> {
        let text = "\
1\tRain\t_\tNOUN\t_\t_\t2\tnsubj\t_\t_
2\tfell\t_\tVERB\t_\t_\t0\troot\t_\t_
3\thard\t_\tADV\t_\t_\t2\tadvmod\t_\t_
";
        let sents = parse_conllu(text).unwrap();
        let vocab = Vocab::build(&sents);
        let config =
            ModelConfig::micro(TransitionKind::OutsideIn, FusionKind::Full, GateKind::Gate2);
        Model::new(config, vocab, 123).unwrap()
    }

    #[test]
    fn round_trip_preserves_every_bit() {
        let model = sample_model();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.bin");
        save_checkpoint(&model, &path).unwrap();
        let back = load_checkpoint(&path).unwrap();
        assert_eq!(back.config, model.config);
        assert_eq!(back.vocab, model.vocab);
        assert_eq!(back.params.store.len(), model.params.store.len());
        for idx in 0..model.params.store.len() {
            let id = ParamId(idx);
            let a = model.params.store.value(id);
            let b = back.params.store.value(id);
            assert_eq!(a.shape(), b.shape());
            let abits: Vec<u32> = a.data().iter().map(|x| x.to_bits()).collect();
            let bbits: Vec<u32> = b.data().iter().map(|x| x.to_bits()).collect();
            assert_eq!(abits, bbits, "{}", model.params.store.name(id));
        }
    }

    #[test]
    fn reloaded_model_scores_identically() {
        let model = sample_model();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.bin");
        save_checkpoint(&model, &path).unwrap();
        let back = load_checkpoint(&path).unwrap();
        let text = "\
1\tRain\t_\tNOUN\t_\t_\t2\tnsubj\t_\t_
2\tfell\t_\tVERB\t_\t_\t0\troot\t_\t_
3\thard\t_\tADV\t_\t_\t2\tadvmod\t_\t_
";
        let s = &parse_conllu(text).unwrap()[0];
        let eval = |m: &Model<f32>| {
            let ids = m.vocab.encode_sentence(s);
            let labels = m.vocab.label_ids(s);
            let mut g = Graph::new();
            let loss = m
                .sentence_loss(
                    &mut g,
                    &LossInput {
                        ids: &ids,
                        heads: &s.heads(),
                        label_ids: &labels,
                        ext: None,
                    },
                    None,
                )
                .unwrap();
            g.value(loss).unwrap().item().to_bits()
        };
        assert_eq!(eval(&model), eval(&back));
    }

    #[test]
    fn saves_are_byte_identical() {
        let model = sample_model();
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("a.bin");
        let p2 = dir.path().join("b.bin");
        save_checkpoint(&model, &p1).unwrap();
        let back = load_checkpoint(&p1).unwrap();
        save_checkpoint(&back, &p2).unwrap();
        let a = std::fs::read(&p1).unwrap();
        let b = std::fs::read(&p2).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn corrupted_files_are_rejected() {
        let model = sample_model();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.bin");
        save_checkpoint(&model, &path).unwrap();

        let full = std::fs::read(&path).unwrap();
        let truncated = dir.path().join("short.bin");
        std::fs::write(&truncated, &full[..full.len() - 3]).unwrap();
        let err = load_checkpoint(&truncated).unwrap_err();
        assert!(matches!(err, ModelError::BadCheckpoint(_)), "{err}");

        let extra = dir.path().join("long.bin");
        let mut grown = full.clone();
        grown.push(0);
        std::fs::write(&extra, &grown).unwrap();
        let err = load_checkpoint(&extra).unwrap_err();
        assert!(matches!(err, ModelError::BadCheckpoint(_)));

        let garbled = dir.path().join("bad.bin");
        let mut bytes = full.clone();
        // Flip a character inside the JSON header.
        bytes[12] = b'!';
        std::fs::write(&garbled, &bytes).unwrap();
        let err = load_checkpoint(&garbled).unwrap_err();
        assert!(matches!(err, ModelError::BadCheckpoint(_)));
    }

    #[test]
    fn version_mismatch_is_reported() {
        let model = sample_model();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.bin");
        save_checkpoint(&model, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        let len = u64::from_le_bytes(bytes[..8].try_into().unwrap()) as usize;
        let mut header: serde_json::Value = serde_json::from_slice(&bytes[8..8 + len]).unwrap();
        header["format_version"] = serde_json::json!(99);
        let new_header = serde_json::to_vec(&header).unwrap();
        let mut out = (new_header.len() as u64).to_le_bytes().to_vec();
        out.extend_from_slice(&new_header);
        out.extend_from_slice(&bytes[8 + len..]);
        let bumped = dir.path().join("v99.bin");
        std::fs::write(&bumped, &out).unwrap();
        let err = load_checkpoint(&bumped).unwrap_err();
        assert!(err.to_string().contains("format version 99"), "{err}");
    }
}
