//! Checkpoint layout:
//!
//! ```text
//! {"format":"cqr-reward-model","version":1,"encoder":{..},"input_dim":D,
//!  "hidden":H,"param_count":P,"seed":S,"margin":λ,"epochs":E}\n
//! P little-endian f32 values in the flat parameter layout
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::encoder::EncoderConfig;
use super::model::{parameter_count, ModelMetadata, RewardModel};
use super::RewardError;

pub const CHECKPOINT_FORMAT: &str = "cqr-reward-model";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
    encoder: EncoderConfig,
    input_dim: usize,
    hidden: usize,
    param_count: usize,
    seed: u64,
    margin: f64,
    epochs: u32,
}

pub fn write_model(model: &RewardModel) -> Vec<u8> {
    let meta = model.metadata();
    let header = Header {
        format: CHECKPOINT_FORMAT.into(),
        version: CHECKPOINT_VERSION,
        encoder: model.encoder().clone(),
        input_dim: model.input_dim(),
        hidden: model.hidden(),
        param_count: model.params().len(),
        seed: meta.seed,
        margin: meta.margin,
        epochs: meta.epochs,
    };
    let mut out = serde_json::to_vec(&header).expect("header serializes");
    out.push(b'\n');
    out.reserve(model.params().len() * 4);
    for p in model.params() {
        out.extend_from_slice(&(*p as f32).to_le_bytes());
    }
    out
}

pub fn read_model(bytes: &[u8]) -> Result<RewardModel, RewardError> {
    let fmt = |offset: usize, reason: String| RewardError::CheckpointFormat { offset: offset as u64, reason };
    let nl = bytes.iter().position(|b| *b == b'\n').ok_or_else(|| fmt(bytes.len(), "missing header line".into()))?;
    let value: serde_json::Value =
        serde_json::from_slice(&bytes[..nl]).map_err(|e| fmt(e.column().saturating_sub(1), e.to_string()))?;
    if value.get("format").and_then(|v| v.as_str()) != Some(CHECKPOINT_FORMAT) {
        return Err(fmt(0, format!("not a {CHECKPOINT_FORMAT} file")));
    }
    match value.get("version").and_then(|v| v.as_u64()) {
        Some(v) if v == u64::from(CHECKPOINT_VERSION) => {}
        Some(v) => {
            return Err(RewardError::Incompatible(format!(
                "checkpoint version {v}, this build reads version {CHECKPOINT_VERSION}"
            )))
        }
        None => return Err(fmt(0, "missing version".into())),
    }
    let header: Header = serde_json::from_value(value).map_err(|e| fmt(0, e.to_string()))?;
    if header.encoder.dimension() != header.input_dim {
        return Err(fmt(0, "encoder dimension does not match input_dim".into()));
    }
    let expected = parameter_count(header.input_dim, header.hidden);
    if header.param_count != expected {
        return Err(fmt(0, format!("param_count {} but layout needs {expected}", header.param_count)));
    }
    let body = &bytes[nl + 1..];
    if body.len() != expected * 4 {
        return Err(fmt(
            nl + 1 + body.len(),
            format!("expected {} parameter bytes, found {}", expected * 4, body.len()),
        ));
    }
    let mut params = Vec::with_capacity(expected);
    for (i, chunk) in body.chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes(chunk.try_into().expect("4-byte chunk"));
        if !v.is_finite() {
            return Err(fmt(nl + 1 + 4 * i, "non-finite parameter".into()));
        }
        params.push(f64::from(v));
    }
    RewardModel::from_parameters(
        header.encoder,
        header.input_dim,
        header.hidden,
        params,
        ModelMetadata { seed: header.seed, margin: header.margin, epochs: header.epochs },
    )
}

pub fn save_model(model: &RewardModel, path: &Path) -> Result<(), RewardError> {
    fs::write(path, write_model(model)).map_err(|source| RewardError::Io { path: path.into(), source })
}

pub fn load_model(path: &Path) -> Result<RewardModel, RewardError> {
    let bytes = fs::read(path).map_err(|source| RewardError::Io { path: path.into(), source })?;
    read_model(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reward::{EncodedPair, ModelConfig};

    fn model() -> RewardModel {
        let cfg = ModelConfig { encoder: EncoderConfig { block_dim: 8, ..Default::default() }, hidden: 3 };
        let mut m = RewardModel::initialize(&cfg, 11).unwrap();
        let n = m.params().len();
        m.params_mut()[n - 1] = 0.25;
        m
    }

    #[test]
    fn round_trip_scores_identically() {
        let m = model();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.bin");
        save_model(&m, &path).unwrap();
        let back = load_model(&path).unwrap();
        assert_eq!(back, m);
        for k in 0..10 {
            let x: Vec<f64> = (0..m.input_dim()).map(|i| ((i * 31 + k * 7) % 13) as f64 / 13.0 - 0.5).collect();
            let p = EncodedPair::from_dense(&x);
            assert_eq!(m.score(&p).unwrap().to_bits(), back.score(&p).unwrap().to_bits());
        }
        assert_eq!(write_model(&back), write_model(&m));
    }

    #[test]
    fn truncated_file_reports_offset() {
        let bytes = write_model(&model());
        let cut = &bytes[..bytes.len() - 3];
        match read_model(cut) {
            Err(RewardError::CheckpointFormat { offset, .. }) => assert_eq!(offset, cut.len() as u64),
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(read_model(&bytes[..10]), Err(RewardError::CheckpointFormat { .. })));
    }

    #[test]
    fn version_mismatch_is_incompatible() {
        let bytes = write_model(&model());
        let nl = bytes.iter().position(|b| *b == b'\n').unwrap();
        let header = std::str::from_utf8(&bytes[..nl]).unwrap().replacen("\"version\":1", "\"version\":2", 1);
        let mut forged = header.into_bytes();
        forged.extend_from_slice(&bytes[nl..]);
        assert!(matches!(read_model(&forged), Err(RewardError::Incompatible(_))));
    }

    #[test]
    fn non_finite_parameter_is_rejected() {
        let mut bytes = write_model(&model());
        let n = bytes.len();
        bytes[n - 4..].copy_from_slice(&f32::NAN.to_le_bytes());
        assert!(matches!(
            read_model(&bytes),
            Err(RewardError::CheckpointFormat { offset, .. }) if offset == (n - 4) as u64
        ));
    }
}
