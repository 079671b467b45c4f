mod common;

use common::*;
use dpn::checkpoint::{ModelMeta, TrainedModel};
use dpn::env::EnvKind;
use dpn::io::{decode_weights, encode_weights, load_weights, save_weights, FormatError, ModelKind};

fn meta() -> ModelMeta {
    ModelMeta {
        env: EnvKind::PointMass,
        dims: micro_dims(),
        train: micro_config(),
        render: micro_render(),
    }
}

#[test]
fn weights_roundtrip_for_every_kind() {
    let dir = tempfile::tempdir().unwrap();
    for kind in [ModelKind::Dpn, ModelKind::Vae, ModelKind::Inverse, ModelKind::Upn] {
        let model = TrainedModel::build(kind, &meta()).unwrap();
        let file = model.to_weights(&meta()).unwrap();
        let bytes = encode_weights(&file).unwrap();
        let path = dir.path().join(format!("{}.dpnw", kind.name()));
        save_weights(&file, &path).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), bytes);
        let loaded = load_weights(&path).unwrap();
        assert_eq!(encode_weights(&loaded).unwrap(), bytes);
        let (rebuilt, m) = TrainedModel::from_weights(loaded).unwrap();
        assert_eq!(m, meta());
        assert_eq!(rebuilt.kind(), kind);
        // Stored as f32: a second save is byte-identical.
        assert_eq!(encode_weights(&rebuilt.to_weights(&m).unwrap()).unwrap(), bytes);
    }
}

#[test]
fn corrupted_weights_fail_the_checksum() {
    let model = TrainedModel::build(ModelKind::Dpn, &meta()).unwrap();
    let mut bytes = encode_weights(&model.to_weights(&meta()).unwrap()).unwrap();
    let mid = bytes.len() / 2;
    bytes[mid] ^= 0x40;
    assert!(matches!(decode_weights(&bytes), Err(FormatError::Checksum { .. })));
    assert!(matches!(decode_weights(&bytes[..10]), Err(FormatError::Truncated(_))));
}
