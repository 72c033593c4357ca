mod common;

use common::*;
use proptest::prelude::*;
use stochmor::io::*;
use stochmor::irka::{reduce_bilinear_irka, IrkaOptions};
use stochmor::model::ViolationKind;
use stochmor::wave::{build_wave_model, Preset, WaveConfig};
use stochmor::{Error, Mat, WeightMatrix};

#[test]
fn model_round_trip_is_exact() {
    let dir = tempfile::tempdir().unwrap();
    for (i, m) in [random_multiplicative(&mut rng(60), 6, 2, 2, 1), random_additive(&mut rng(61), 5, 1, 2, 2)].iter().enumerate() {
        let mut meta = serde_json::Map::new();
        meta.insert("source".into(), serde_json::json!("random"));
        let path = save_model(m, &dir.path().join(i.to_string()), meta.clone()).unwrap();
        let (back, back_meta) = load_model_with_metadata(&path).unwrap();
        assert_eq!(&back, m);
        assert_eq!(back_meta, meta);
        assert_eq!(load_model(path.parent().unwrap()).unwrap(), *m);
    }
}

#[test]
fn asymmetric_covariance_fails_to_load() {
    let dir = tempfile::tempdir().unwrap();
    let m = build_wave_model(&WaveConfig::preset(Preset::Add, 6)).unwrap();
    save_model(&m, dir.path(), Default::default()).unwrap();
    write_matrix_market(&dir.path().join("K.mtx"), &Mat::from_row_slice(2, 2, &[1.0, 0.3, 0.2, 1.0])).unwrap();
    match load_model(dir.path()) {
        Err(Error::Validation(v)) => assert!(v.iter().any(|x| x.kind == ViolationKind::Symmetry)),
        other => panic!("{other:?}"),
    }
}

#[test]
fn malformed_inputs_are_parse_errors() {
    let dir = tempfile::tempdir().unwrap();
    let m = build_wave_model(&WaveConfig::preset(Preset::Add, 4)).unwrap();
    save_model(&m, dir.path(), Default::default()).unwrap();
    std::fs::write(dir.path().join("A.mtx"), "%%MatrixMarket matrix array real general\n4 4\n1\n").unwrap();
    assert!(matches!(load_model(dir.path()), Err(Error::Parse { .. })));
    std::fs::write(dir.path().join(MANIFEST_FILE), "{\"kind\": \"sideways\"}").unwrap();
    assert!(matches!(load_model(dir.path()), Err(Error::Parse { .. })));
    assert!(matches!(load_model(&dir.path().join("missing")), Err(Error::Io(_))));
}

#[test]
fn coordinate_files_load() {
    let m = parse_matrix_market("%%MatrixMarket matrix coordinate real skew-symmetric\n3 3 1\n3 1 2.5\n").unwrap();
    assert_eq!(m[(2, 0)], 2.5);
    assert_eq!(m[(0, 2)], -2.5);
}

#[test]
fn reduction_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let m = build_wave_model(&WaveConfig::preset(Preset::Mult, 20)).unwrap();
    let res = reduce_bilinear_irka(&m, 4, &WeightMatrix::identity(1), &IrkaOptions::default()).unwrap();
    save_reduction(&res, dir.path()).unwrap();
    let (model, v, wb, record) = load_reduction(dir.path()).unwrap();
    assert_eq!(model, res.reduced);
    assert_eq!((v, wb), (res.v.clone(), res.wb.clone()));
    assert_eq!(record.converged, res.converged);
    assert_eq!(record.iterations, res.iterations);
    assert_eq!(record.history.len(), res.history.len());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn matrix_market_round_trip(rows in 0usize..6, cols in 0usize..6, seed in any::<u64>(), exp in -300i32..300) {
        let m = gaussian(&mut rng(seed), rows, cols) * 10f64.powi(exp);
        prop_assert_eq!(parse_matrix_market(&format_matrix_market(&m)).unwrap(), m);
    }
}
