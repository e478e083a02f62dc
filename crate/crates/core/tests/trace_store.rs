mod common;

use std::fs;

use cot_dynamics::trace_store::{
    checksum, read_trace, validate_corpus, write_trace, StepRecord, Trace, ValidationStatus,
};
use cot_dynamics::Error;
use proptest::prelude::*;

fn trace_from(id: &str, dim: u32, steps: Vec<(u32, Vec<f32>)>) -> Trace {
    Trace {
        trace_id: id.into(),
        model_id: "m".into(),
        dataset_id: "d".into(),
        dim,
        steps: steps
            .into_iter()
            .enumerate()
            .map(|(i, (n, m))| StepRecord::new(i as u32 + 1, n, m).with_text(format!("Step {}: x", i + 1)))
            .collect(),
        prompt: None,
    }
}

#[test]
fn single_row_file_layout() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("a.cotr");
    let t = trace_from("a", 2, vec![(1, vec![3.0, 4.0])]);
    write_trace(&t, &path).unwrap();
    // 20-byte header, 4-byte token count, 8 bytes of payload
    assert_eq!(fs::metadata(&path).unwrap().len(), 32);
    assert_eq!(read_trace(&path).unwrap(), t);
}

#[test]
fn nan_is_rejected_with_step() {
    let dir = tempfile::tempdir().unwrap();
    let t = trace_from("a", 2, vec![(1, vec![1.0, 2.0]), (1, vec![f32::NAN, 0.0])]);
    match write_trace(&t, &dir.path().join("a.cotr")) {
        Err(Error::Validation(msg)) => assert!(msg.contains("step 2"), "{msg}"),
        other => panic!("expected validation error, got {other:?}"),
    }
}

#[test]
fn identical_content_identical_checksum() {
    let dir = tempfile::tempdir().unwrap();
    let t = trace_from("a", 3, vec![(2, vec![0.5; 6])]);
    let a = write_trace(&t, &dir.path().join("a.cotr")).unwrap();
    let b = write_trace(&t, &dir.path().join("b.cotr")).unwrap();
    assert_eq!(a, b);
    assert_eq!(a, checksum(&fs::read(dir.path().join("a.cotr")).unwrap()));
}

#[test]
fn read_errors_by_kind() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("a.cotr");
    let t = trace_from("a", 2, vec![(2, vec![1.0, 2.0, 3.0, 4.0])]);
    write_trace(&t, &path).unwrap();
    let good = fs::read(&path).unwrap();

    let mut bad = good.clone();
    bad[..8].copy_from_slice(b"XXXXXXXX");
    fs::write(&path, &bad).unwrap();
    assert!(matches!(read_trace(&path), Err(Error::Format { .. })));

    fs::write(&path, &good[..good.len() - 3]).unwrap();
    assert!(matches!(read_trace(&path), Err(Error::Corruption { .. })));

    let mut flipped = good.clone();
    *flipped.last_mut().unwrap() ^= 1;
    fs::write(&path, &flipped).unwrap();
    assert!(matches!(read_trace(&path), Err(Error::Consistency { .. })));
}

#[test]
fn corpus_validation_report() {
    let dir = tempfile::tempdir().unwrap();
    assert!(validate_corpus(dir.path()).unwrap().is_empty());

    let mut rng = common::rng(1);
    for i in 0..3 {
        let t = common::random_trace(&mut rng, &format!("t{i}"), 3, 4, 5);
        write_trace(&t, &dir.path().join(format!("t{i}.cotr"))).unwrap();
    }
    let report = validate_corpus(dir.path()).unwrap();
    assert_eq!(report.len(), 3);
    assert!(report.iter().all(|e| e.status == ValidationStatus::Ok));

    let victim = dir.path().join("t1.cotr");
    let bytes = fs::read(&victim).unwrap();
    fs::write(&victim, &bytes[..bytes.len() - 10]).unwrap();
    let report = validate_corpus(dir.path()).unwrap();
    let errors: Vec<_> = report.iter().filter(|e| e.status == ValidationStatus::Error).collect();
    assert_eq!(report.len(), 3);
    assert_eq!(errors.len(), 1);
    assert_eq!(errors[0].trace_id, "t1");
}

#[test]
fn missing_directory_is_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let err = validate_corpus(&dir.path().join("nope")).unwrap_err();
    assert_eq!(err.exit_code(), 4);
}

fn finite_f32() -> impl Strategy<Value = f32> {
    any::<u32>().prop_map(f32::from_bits).prop_filter("finite", |v| v.is_finite())
}

fn arb_trace() -> impl Strategy<Value = Trace> {
    (1u32..6, 1usize..5).prop_flat_map(|(dim, t)| {
        proptest::collection::vec(
            (1u32..5).prop_flat_map(move |n| {
                proptest::collection::vec(finite_f32(), (n * dim) as usize).prop_map(move |m| (n, m))
            }),
            t,
        )
        .prop_map(move |steps| trace_from("p", dim, steps))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn round_trip_is_bit_exact(t in arb_trace()) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.cotr");
        write_trace(&t, &path).unwrap();
        let back = read_trace(&path).unwrap();
        let bits = |t: &Trace| t.steps.iter().flat_map(|s| s.token_matrix.iter().map(|v| v.to_bits())).collect::<Vec<_>>();
        prop_assert_eq!(bits(&back), bits(&t));
        prop_assert_eq!(back, t);
    }
}
