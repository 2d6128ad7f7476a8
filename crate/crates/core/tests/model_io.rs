use hppi_core::frontend::{pseudoimage_set, SampleWindow};
use hppi_core::labels::FineLabel;
use hppi_core::modelio::{load_model, load_model_with_base, save_model, save_model_file, to_bytes, ModelFile};
use hppi_core::quant::quantize_model;
use hppi_core::resources::rom_bytes;
use hppi_core::zoo::{build_first_layer, build_plmn, build_stationary, PlmnVariant};
use hppi_core::Error;

fn probe_images() -> hppi_core::frontend::PseudoImageSet {
    let samples = std::array::from_fn(|t| std::array::from_fn(|c| ((t * 7 + c * 3) % 11) as f64 * 0.3 - 1.5));
    pseudoimage_set(&SampleWindow { samples, label: FineLabel::A2 }).unwrap()
}

#[test]
fn every_variant_round_trips_through_a_file() {
    let dir = tempfile::tempdir().unwrap();
    let images = probe_images();
    for v in PlmnVariant::ALL {
        let g = build_plmn(v, 9).unwrap();
        let path = dir.path().join(format!("{v}.hppi"));
        save_model(&g, &path).unwrap();
        let back = load_model(&path).unwrap();
        assert!(!back.is_quantized());
        assert_eq!(g.predict_images(&images).unwrap(), back.graph.predict_images(&images).unwrap());
        assert_eq!(std::fs::read(&path).unwrap(), to_bytes(&back.graph, None).unwrap());
        assert_eq!(std::fs::metadata(&path).unwrap().len() as usize, rom_bytes(&g, false).unwrap());
    }
}

#[test]
fn quantized_file_reloads_with_same_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let g = build_plmn(PlmnVariant::Full, 2).unwrap();
    let q = quantize_model(&g).unwrap();
    let path = dir.path().join("q.hppi");
    save_model_file(&ModelFile { graph: q.graph.deep_copy(), quantized: q.tensors.clone() }, &path).unwrap();
    let back = load_model(&path).unwrap();
    assert!(back.is_quantized());
    let images = probe_images();
    assert_eq!(q.graph.predict_images(&images).unwrap(), back.graph.predict_images(&images).unwrap());
}

#[test]
fn stationary_file_resolves_against_first_layer() {
    let dir = tempfile::tempdir().unwrap();
    let first = build_first_layer(3, 4).unwrap();
    let st = build_stationary(&first, 5).unwrap();
    let path = dir.path().join("stationary.hppi");
    save_model(&st, &path).unwrap();
    assert!(matches!(load_model(&path), Err(Error::UnresolvedAlias(_))));
    let back = load_model_with_base(&path, &first).unwrap();
    let images = probe_images();
    assert_eq!(st.predict_images(&images).unwrap(), back.graph.predict_images(&images).unwrap());
}

#[test]
fn corrupt_files_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.hppi");
    std::fs::write(&path, b"NOPE\x01\x00").unwrap();
    assert!(matches!(load_model(&path), Err(Error::BadMagic)));
    let good = to_bytes(&build_first_layer(3, 1).unwrap(), None).unwrap();
    std::fs::write(&path, &good[..good.len() / 2]).unwrap();
    assert!(matches!(load_model(&path), Err(Error::Truncated(_))));
}
