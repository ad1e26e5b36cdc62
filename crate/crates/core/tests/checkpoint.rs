use gaitlab::checkpoint::*;
use gaitlab::data::*;
use gaitlab::model::*;
use gaitlab::pretrain::{PretrainConfig, PretrainModel, Variant};
use gaitlab_numerics::{Module, Tensor};

#[test]
fn roundtrip_is_bit_exact() {
    let cfg = TctstConfig::for_profile(Profile::Desk, 100);
    let model = AnyModel::<f32>::new(Arch::Tctst, cfg, 3).unwrap();
    let rec = synthesize_recording(&GeneratorConfig { strides_per_recording: 10, ..Default::default() }, 1, 1).unwrap();
    let mut ck = Checkpoint::from_model(&model);
    ck.norm_stats = Some(fit_norm_stats(&[rec]).unwrap());
    ck.seeds.insert("init".into(), 3);
    let dir = tempfile::tempdir().unwrap();
    ck.save(dir.path()).unwrap();
    let back = Checkpoint::load(dir.path()).unwrap();
    assert_eq!(back, ck);
    let bytes = std::fs::read(dir.path().join(WEIGHTS_FILE)).unwrap();
    assert_eq!(bytes.len(), 4 * model.num_params());
    back.save(dir.path()).unwrap();
    assert_eq!(std::fs::read(dir.path().join(WEIGHTS_FILE)).unwrap(), bytes);

    let rebuilt = back.to_model().unwrap();
    let x = Tensor::<f32>::full(&[1, 24, 100], 0.3);
    assert_eq!(rebuilt.predict(&x).unwrap(), model.predict(&x).unwrap());

    let manifest: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join(MANIFEST_FILE)).unwrap()).unwrap();
    for key in ["format_version", "config", "params", "norm_stats", "seeds"] {
        assert!(manifest.get(key).is_some(), "{key}");
    }
    assert_eq!(manifest["params"][1]["offset"], 4 * 32 * 3);
}

#[test]
fn patch_and_pretrain_roundtrip() {
    let cfg = TctstConfig::for_profile(Profile::Desk, 100);
    let p = AnyModel::<f32>::new(Arch::PatchTst, cfg.clone(), 1).unwrap();
    let dir = tempfile::tempdir().unwrap();
    Checkpoint::from_model(&p).save(dir.path()).unwrap();
    assert_eq!(Checkpoint::load(dir.path()).unwrap().to_model().unwrap().arch(), Arch::PatchTst);

    let pre = PretrainModel::<f32>::new(cfg, PretrainConfig::variant(Variant::Nclm), 2).unwrap();
    let ck = Checkpoint::from_pretrain(&pre);
    ck.save(dir.path()).unwrap();
    let back = Checkpoint::load(dir.path()).unwrap();
    assert!(back.to_model().is_err());
    let m = back.to_pretrain_model().unwrap();
    assert_eq!(m.pretrain, pre.pretrain);
    assert_eq!(Checkpoint::from_pretrain(&m), ck);
}

#[test]
fn mismatches_are_rejected() {
    let a = AnyModel::<f32>::new(Arch::Tctst, TctstConfig::for_profile(Profile::Desk, 100), 0).unwrap();
    let mut b = AnyModel::<f32>::new(Arch::Tctst, TctstConfig::for_profile(Profile::Desk, 200), 0).unwrap();
    assert!(Checkpoint::from_model(&a).load_into(&mut b).is_err());

    let dir = tempfile::tempdir().unwrap();
    Checkpoint::from_model(&a).save(dir.path()).unwrap();
    let w = dir.path().join(WEIGHTS_FILE);
    let mut bytes = std::fs::read(&w).unwrap();
    bytes.pop();
    std::fs::write(&w, bytes).unwrap();
    assert!(Checkpoint::load(dir.path()).is_err());
    assert!(Checkpoint::load(&dir.path().join("missing")).is_err());
}
