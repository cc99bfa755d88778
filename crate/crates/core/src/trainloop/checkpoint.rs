use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::optimizer::{OptimizerConfig, OptimizerState};
use super::{RelationModel, TrainError};
use crate::corpus::RelationSchema;
use crate::neuralcore::{Model, ModelConfig, ModelParams, TensorSpec, Vocabulary};

const MAGIC: &[u8; 8] = b"TKRECKPT";
pub const CHECKPOINT_VERSION: u32 = 1;
const DIGEST_LEN: usize = 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    model: ModelConfig,
    tensors: Vec<TensorSpec>,
    vocab: Vec<String>,
    schema: RelationSchema,
    epoch: usize,
    optimizer: Option<OptimizerHeader>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct OptimizerHeader {
    config: OptimizerConfig,
    step_count: u64,
}

/// Everything needed to continue or evaluate a run.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: RelationModel,
    pub optimizer: Option<OptimizerState>,
    /// Number of completed epochs (fine-tuning) or steps (pre-training).
    pub epoch: usize,
}

fn put_f64s(out: &mut Vec<u8>, xs: &[f64]) {
    for x in xs {
        out.extend_from_slice(&x.to_le_bytes());
    }
}

pub fn encode_checkpoint(ck: &Checkpoint) -> Vec<u8> {
    let rm = &ck.model;
    let header = Header {
        model: rm.model.config.clone(),
        tensors: rm.model.params.specs.clone(),
        vocab: rm.vocab.tokens().to_vec(),
        schema: rm.schema.clone(),
        epoch: ck.epoch,
        optimizer: ck.optimizer.as_ref().map(|o| OptimizerHeader {
            config: o.config,
            step_count: o.step_count,
        }),
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    put_f64s(&mut out, &rm.model.params.data);
    if let Some(o) = &ck.optimizer {
        put_f64s(&mut out, &o.m);
        put_f64s(&mut out, &o.v);
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    out
}

fn corrupt(msg: impl Into<String>) -> TrainError {
    TrainError::Checkpoint(msg.into())
}

fn read_f64s(bytes: &[u8]) -> Vec<f64> {
    bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect()
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint, TrainError> {
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        return Err(corrupt("not a checkpoint file (bad magic)"));
    }
    if bytes.len() < MAGIC.len() + 12 + DIGEST_LEN {
        return Err(corrupt("checksum mismatch: file truncated"));
    }
    let (body, digest) = bytes.split_at(bytes.len() - DIGEST_LEN);
    if Sha256::digest(body).as_slice() != digest {
        return Err(corrupt("checksum mismatch: file truncated or modified"));
    }
    let version = u32::from_le_bytes(body[8..12].try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(corrupt(format!(
            "unsupported checkpoint version {version}, expected {CHECKPOINT_VERSION}"
        )));
    }
    let hlen = u64::from_le_bytes(body[12..20].try_into().unwrap()) as usize;
    let hend = 20usize
        .checked_add(hlen)
        .filter(|&e| e <= body.len())
        .ok_or_else(|| corrupt("header length exceeds file size"))?;
    let header: Header =
        serde_json::from_slice(&body[20..hend]).map_err(|e| corrupt(format!("bad header: {e}")))?;
    let n = header.tensors.last().map(|s| s.offset + s.len()).unwrap_or(0);
    let blocks = if header.optimizer.is_some() { 3 } else { 1 };
    let payload = &body[hend..];
    if payload.len() != n * 8 * blocks {
        return Err(corrupt(format!(
            "payload holds {} bytes, header describes {}",
            payload.len(),
            n * 8 * blocks
        )));
    }
    let data = read_f64s(&payload[..n * 8]);
    let model = Model::from_parts(
        header.model,
        ModelParams {
            specs: header.tensors,
            data,
        },
    )?;
    let vocab = Vocabulary::from_tokens(header.vocab).ok_or_else(|| corrupt("invalid vocabulary"))?;
    if vocab.len() != model.config.vocab_size {
        return Err(corrupt(format!(
            "vocabulary has {} entries, model expects {}",
            vocab.len(),
            model.config.vocab_size
        )));
    }
    let optimizer = header.optimizer.map(|o| OptimizerState {
        config: o.config,
        step_count: o.step_count,
        m: read_f64s(&payload[n * 8..2 * n * 8]),
        v: read_f64s(&payload[2 * n * 8..]),
    });
    Ok(Checkpoint {
        model: RelationModel {
            model,
            vocab,
            schema: header.schema,
        },
        optimizer,
        epoch: header.epoch,
    })
}

pub fn save_checkpoint(ck: &Checkpoint, path: &Path) -> Result<(), TrainError> {
    let bytes = encode_checkpoint(ck);
    let tmp = path.with_extension("partial");
    std::fs::write(&tmp, &bytes)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, TrainError> {
    decode_checkpoint(&std::fs::read(path)?)
}

/// Load and insist that the stored layout matches `expected`.
pub fn load_checkpoint_for(path: &Path, expected: &ModelConfig) -> Result<Checkpoint, TrainError> {
    let mut ck = load_checkpoint(path)?;
    ck.model.model = Model::from_parts(expected.clone(), ck.model.model.params)?;
    Ok(ck)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neuralcore::{build_vocab, EncoderConfig, Representation};
    use std::collections::{BTreeMap, BTreeSet};

    pub(crate) fn tiny() -> Checkpoint {
        let vocab = build_vocab(&[vec!["a", "b", "c"]], 1);
        let schema = RelationSchema::new(
            vec!["x".into(), "y".into()],
            None,
            ["T".to_string()].into_iter().collect::<BTreeSet<_>>(),
            BTreeMap::new(),
        )
        .unwrap();
        let cfg = ModelConfig {
            encoder: EncoderConfig {
                d_model: 8,
                n_layers: 1,
                n_heads: 2,
                max_len: 8,
                dropout: 0.0,
                d_ff: 0,
            },
            vocab_size: vocab.len(),
            n_relations: 2,
            representation: Representation::Pair,
            tie_mslm_head: true,
        };
        let model = Model::new(cfg, 7).unwrap();
        let n = model.param_count();
        let mut opt = OptimizerState::new(OptimizerConfig::default(), n);
        opt.step_count = 42;
        opt.m.iter_mut().enumerate().for_each(|(i, x)| *x = i as f64 * 1e-3);
        opt.v.iter_mut().enumerate().for_each(|(i, x)| *x = (i as f64).sqrt());
        Checkpoint {
            model: RelationModel { model, vocab, schema },
            optimizer: Some(opt),
            epoch: 3,
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let ck = tiny();
        let back = decode_checkpoint(&encode_checkpoint(&ck)).unwrap();
        let bits = |xs: &[f64]| xs.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&back.model.model.params.data), bits(&ck.model.model.params.data));
        let (a, b) = (back.optimizer.as_ref().unwrap(), ck.optimizer.as_ref().unwrap());
        assert_eq!(bits(&a.m), bits(&b.m));
        assert_eq!(bits(&a.v), bits(&b.v));
        assert_eq!(back, ck);
    }

    #[test]
    fn truncation_is_detected() {
        let bytes = encode_checkpoint(&tiny());
        for cut in [bytes.len() - 1, bytes.len() / 2, 10] {
            let err = decode_checkpoint(&bytes[..cut]).unwrap_err();
            assert!(err.to_string().contains("checksum"), "{err}");
        }
        let mut flipped = bytes.clone();
        flipped[100] ^= 1;
        assert!(decode_checkpoint(&flipped).is_err());
    }

    #[test]
    fn version_mismatch_is_reported() {
        let mut bytes = encode_checkpoint(&tiny());
        bytes[8] = 9;
        let body_len = bytes.len() - DIGEST_LEN;
        let digest = Sha256::digest(&bytes[..body_len]);
        bytes[body_len..].copy_from_slice(&digest);
        assert!(decode_checkpoint(&bytes).unwrap_err().to_string().contains("version"));
    }

    #[test]
    fn different_encoder_names_tensor() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let ck = tiny();
        save_checkpoint(&ck, &path).unwrap();
        let mut other = ck.model.model.config.clone();
        other.encoder.d_model = 16;
        let err = load_checkpoint_for(&path, &other).unwrap_err().to_string();
        assert!(err.contains("embed.tokens"), "{err}");
        assert!(load_checkpoint_for(&path, &ck.model.model.config).is_ok());
    }
}
