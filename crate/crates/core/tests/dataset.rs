use std::fs;
use std::path::Path;

use fingerspell::dataset::{self, gen_synthetic, load_dataset, write_dataset, Labeled, LabelRow, SplitMode, SplitSpec};
use fingerspell::{Error, Letter};

fn write(path: &Path, text: &str) {
    fs::write(path, text).unwrap();
}

#[test]
fn empty_manifest_gives_empty_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let m = dir.path().join("manifest.csv");
    write(&m, "depth_path,intensity_path,user,letter\n");
    let ds = load_dataset(&m).unwrap();
    assert!(ds.samples.is_empty());
    assert_eq!(ds.counts.total(), 0);
}

#[test]
fn synthetic_manifest_round_trips_in_order() {
    let dir = tempfile::tempdir().unwrap();
    let samples = gen_synthetic(5, 2, 11);
    let manifest = write_dataset(&samples, dir.path()).unwrap();
    let ds = load_dataset(&manifest).unwrap();
    assert_eq!(ds.samples.len(), 240);
    assert_eq!(ds.samples, samples);
    for u in 1..=5 {
        for l in Letter::all() {
            assert_eq!(ds.counts.get(&format!("user{u}"), l), 2);
        }
    }
}

fn two_row_dataset(dir: &Path) -> String {
    let samples = gen_synthetic(1, 1, 5);
    write_dataset(&samples[..2], dir).unwrap();
    fs::read_to_string(dir.join("manifest.csv")).unwrap()
}

#[test]
fn dynamic_letter_is_rejected_with_row() {
    let dir = tempfile::tempdir().unwrap();
    let text = two_row_dataset(dir.path()).replace(",B\n", ",J\n");
    write(&dir.path().join("manifest.csv"), &text);
    match load_dataset(&dir.path().join("manifest.csv")) {
        Err(Error::UnknownLetter { letter, row }) => assert_eq!((letter.as_str(), row), ("J", Some(2))),
        other => panic!("{other:?}"),
    }
}

#[test]
fn missing_file_names_row() {
    let dir = tempfile::tempdir().unwrap();
    two_row_dataset(dir.path());
    fs::remove_file(dir.path().join("intensity/user1_B_0000.pgm")).unwrap();
    match load_dataset(&dir.path().join("manifest.csv")) {
        Err(Error::MissingFile { row, path }) => {
            assert_eq!(row, 2);
            assert!(path.ends_with("intensity/user1_B_0000.pgm"));
        }
        other => panic!("{other:?}"),
    }
}

#[test]
fn duplicate_paths_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let text = two_row_dataset(dir.path()).replace("user1_B_0000", "user1_A_0000");
    write(&dir.path().join("manifest.csv"), &text);
    let err = load_dataset(&dir.path().join("manifest.csv")).unwrap_err();
    assert!(matches!(err, Error::Format(ref m) if m.contains("row 2") && m.contains("duplicate")), "{err}");
}

#[test]
fn bad_pgm_names_row() {
    let dir = tempfile::tempdir().unwrap();
    two_row_dataset(dir.path());
    write(&dir.path().join("depth/user1_B_0000.pgm"), "P2\n1 1\n255\n0\n");
    let err = load_dataset(&dir.path().join("manifest.csv")).unwrap_err();
    assert!(err.to_string().contains("manifest row 2"), "{err}");
    assert!(matches!(err.root(), Error::Format(_)));

    // an 8-bit file where depth is expected
    let eight_bit = fs::read(dir.path().join("intensity/user1_A_0000.pgm")).unwrap();
    fs::write(dir.path().join("depth/user1_B_0000.pgm"), eight_bit).unwrap();
    let err = load_dataset(&dir.path().join("manifest.csv")).unwrap_err();
    assert!(err.to_string().contains("16-bit"), "{err}");
}

#[test]
fn wrong_manifest_header_is_a_format_error() {
    let dir = tempfile::tempdir().unwrap();
    let m = dir.path().join("manifest.csv");
    write(&m, "depth,intensity,user,letter\n");
    assert!(matches!(load_dataset(&m), Err(Error::Format(_))));
}

fn labels(users: usize, per: usize) -> Vec<LabelRow> {
    (0..users)
        .flat_map(|u| {
            Letter::all().flat_map(move |l| {
                (0..per).map(move |_| LabelRow {
                    user: format!("user{}", u + 1),
                    letter: l,
                })
            })
        })
        .collect()
}

#[test]
fn allseen_stratum_sizes() {
    for (per, expect) in [(4, (2, 1, 1)), (5, (3, 1, 1))] {
        let rows = labels(1, per);
        let s = dataset::split_allseen(&rows, 3);
        assert_eq!((s.train.len(), s.valid.len(), s.test.len()), (24 * expect.0, 24 * expect.1, 24 * expect.2));
    }
}

#[test]
fn unseen_validation_is_a_tenth() {
    let rows = labels(5, 10);
    let s = dataset::split_unseen(&rows, "user4", 0.1, 9).unwrap();
    let non_test = rows.len() - s.test.len();
    assert_eq!(s.test.len(), 240);
    assert_eq!(s.valid.len(), (0.1 * non_test as f64).round() as usize);
    assert!(s.test.iter().all(|&i| rows[i].user() == "user4"));
    assert!(s.train.iter().chain(&s.valid).all(|&i| rows[i].user() != "user4"));

    // uneven strata still land within rounding of a tenth
    let mut uneven = labels(4, 7);
    uneven.extend(labels(1, 3));
    let s = dataset::split_unseen(&uneven, "user1", 0.1, 9).unwrap();
    let non_test = (uneven.len() - s.test.len()) as f64;
    let strata = 3.0 * 24.0;
    assert!((s.valid.len() as f64 - 0.1 * non_test).abs() <= 0.5 * strata);
}

#[test]
fn split_dispatch_and_determinism() {
    let rows = labels(3, 4);
    let spec = SplitSpec {
        mode: SplitMode::Unseen,
        test_user: Some("user2".into()),
        rng_seed: 5,
        ..Default::default()
    };
    let a = dataset::split(&rows, &spec).unwrap();
    assert_eq!(a, dataset::split(&rows, &spec).unwrap());
    assert_ne!(a, dataset::split(&rows, &SplitSpec { rng_seed: 6, ..spec.clone() }).unwrap());
    let missing = SplitSpec {
        test_user: None,
        ..spec
    };
    assert!(dataset::split(&rows, &missing).is_err());
}
