use super::*;
use crate::config::{EncoderKind, Preset};
use crate::decoder::{beam_decode, Constraints};
use crate::plan::Task;

fn tiny(encoder: EncoderKind, seed: u64) -> Model {
    let mut c = RunConfig::preset(Preset::Desk, Task::Cnndm, encoder);
    c.model.dim = 8;
    c.model.ffn_dim = 16;
    c.seed = seed;
    Model::new(c, Vocab::build(["a", "b", "c"], 1, None)).unwrap()
}

#[test]
fn save_load_save_is_byte_identical() {
    for encoder in [EncoderKind::Hibert, EncoderKind::Etc] {
        let bytes = Checkpoint::from_model(&tiny(encoder, 1), 7).to_bytes();
        let model = Checkpoint::from_bytes(&bytes).unwrap().into_model(None).unwrap();
        assert_eq!(Checkpoint::from_model(&model, 7).to_bytes(), bytes);
    }
}

#[test]
fn loaded_model_decodes_bitwise_equal() {
    let model = tiny(EncoderKind::Hibert, 5);
    let units = vec![vec!["a", "b"], vec!["c"], vec!["b", "c"]];
    let input = model.prepare(&units).unwrap();
    let before = beam_decode(&model.scorer(&input), 3, 4, &Constraints::no_repeat()).unwrap();
    let restored = Checkpoint::from_bytes(&Checkpoint::from_model(&model, 0).to_bytes()).unwrap().into_model(None).unwrap();
    let after = beam_decode(&restored.scorer(&input), 3, 4, &Constraints::no_repeat()).unwrap();
    assert_eq!(before.hypothesis.steps, after.hypothesis.steps);
    assert_eq!(before.hypothesis.log_prob.to_bits(), after.hypothesis.log_prob.to_bits());
}

#[test]
fn manifest_names_follow_the_store() {
    let model = tiny(EncoderKind::Etc, 1);
    let ckpt = Checkpoint::from_model(&model, 0);
    let names: Vec<&str> = model.store.iter().map(|p| p.name.as_str()).collect();
    let stored: Vec<&str> = ckpt.manifest.tensors.iter().map(|t| t.name.as_str()).collect();
    assert_eq!(names, stored);
    assert_eq!(ckpt.payload.len(), model.store.num_scalars());
}

#[test]
fn architecture_mismatch_is_an_error() {
    let ckpt = Checkpoint::from_model(&tiny(EncoderKind::Hibert, 1), 0);
    let mut other = ckpt.manifest.config.clone();
    other.model.dim = 16;
    let err = ckpt.clone().into_model(Some(&other)).unwrap_err();
    assert!(err.to_string().contains("hash"), "{err}");

    let mut decode_only = ckpt.manifest.config.clone();
    decode_only.decode.beam = 7;
    decode_only.seed = 99;
    let model = ckpt.into_model(Some(&decode_only)).unwrap();
    assert_eq!(model.config.decode.beam, 7);
}

#[test]
fn corrupt_bytes_are_rejected() {
    let bytes = Checkpoint::from_model(&tiny(EncoderKind::Hibert, 1), 0).to_bytes();
    assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 8]).is_err());
    assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 3]).is_err());
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(Checkpoint::from_bytes(&bad).is_err());
    assert!(Checkpoint::from_bytes(&bytes[..12]).is_err());
}

#[test]
fn tampered_manifest_config_is_detected() {
    let mut ckpt = Checkpoint::from_model(&tiny(EncoderKind::Hibert, 1), 0);
    ckpt.manifest.config.model.heads = 4;
    assert!(ckpt.into_model(None).is_err());
}

#[test]
fn files_round_trip() {
    let path = std::env::temp_dir().join(format!("stepwise-ckpt-{}.ckpt", std::process::id()));
    let ckpt = Checkpoint::from_model(&tiny(EncoderKind::Etc, 3), 11);
    ckpt.save(&path).unwrap();
    assert_eq!(Checkpoint::load(&path).unwrap(), ckpt);
    std::fs::remove_file(path).unwrap();
}
