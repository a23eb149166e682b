//! Files produced by the feature extraction tooling, read through the public
//! loaders.

use std::path::PathBuf;

use mmrec::features::{load_features, save_features, FeatureTable, Provenance};
use mmrec::keywords::{
    encode_answers, load_answers, load_synonyms, parse_structured_answer, PromptSchema,
};

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
}

#[test]
fn mmfe_fixture_loads_with_ids_and_values() {
    let t = load_features(fixture("features_small.mmfe")).unwrap();
    assert_eq!(t.n_items(), 3);
    assert_eq!(t.dim(), 4);
    assert_eq!(t.item_ids(), &["B000A", "B000B", "Bé-3"]);
    assert_eq!(t.row(0), &[0.5, -1.25, 3.0, 0.0]);
    assert_eq!(t.row(1), &[1e-3f32, 2.0, -0.75, 8.5]);
    assert_eq!(t.row(2), &[0.0, 0.0, 1.0, -1.0]);
}

#[test]
fn writer_reproduces_fixture_bytes() {
    let original = std::fs::read(fixture("features_small.mmfe")).unwrap();
    let t = load_features(fixture("features_small.mmfe")).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("copy.mmfe");
    save_features(&t, &out).unwrap();
    assert_eq!(std::fs::read(&out).unwrap(), original);

    let tsv = dir.path().join("copy.tsv");
    save_features(&t, &tsv).unwrap();
    let back = load_features(&tsv).unwrap();
    assert_eq!(back.data(), t.data());
    assert_eq!(back.item_ids(), t.item_ids());
}

#[test]
fn corrupted_headers_are_rejected() {
    let good = std::fs::read(fixture("features_small.mmfe")).unwrap();
    let p = Provenance::new("x", None);
    let mut bad_magic = good.clone();
    bad_magic[0] = b'X';
    assert!(FeatureTable::from_bytes(&bad_magic, p.clone()).is_err());
    let mut bad_version = good.clone();
    bad_version[4] = 9;
    assert!(FeatureTable::from_bytes(&bad_version, p.clone()).is_err());
    let mut bad_dtype = good.clone();
    bad_dtype[5] = 1;
    assert!(FeatureTable::from_bytes(&bad_dtype, p.clone()).is_err());
    assert!(FeatureTable::from_bytes(&good[..good.len() - 1], p.clone()).is_err());
    let mut trailing = good;
    trailing.push(0);
    assert!(FeatureTable::from_bytes(&trailing, p).is_err());
}

#[test]
fn answer_sample_parses_with_four_or_more_slots() {
    let answers = load_answers(fixture("answers_pets.tsv")).unwrap();
    assert_eq!(answers.len(), 100);
    let schema = PromptSchema::pets();
    let syn = load_synonyms(fixture("synonyms_pets.tsv")).unwrap();
    let good = answers
        .iter()
        .filter(|(id, text)| parse_structured_answer(id, text, &schema, Some(&syn)).filled() >= 4)
        .count();
    assert!(good >= 95, "{good}/100");

    let (m, vocab, report) = encode_answers(&answers, &schema, Some(&syn), 50).unwrap();
    assert_eq!(report.n_records, 100);
    assert_eq!(report.parse_failures, 2);
    assert_eq!(m.n_features(), vocab.n_features());
    // Synonyms and plural rules fold "Puppies", "Dogs" and "Dog" together.
    let pet_type: Vec<&String> = vocab.slots[1].retained.iter().collect();
    assert!(pet_type.iter().any(|k| k.as_str() == "dog"));
    assert!(!pet_type
        .iter()
        .any(|k| k.as_str() == "puppy" || k.as_str() == "dogs"));
    assert!(vocab.slots[3].retained.iter().any(|k| k == "metal"));
}

#[test]
fn synonym_map_round_trips_through_loader() {
    let syn = load_synonyms(fixture("synonyms_pets.tsv")).unwrap();
    assert_eq!(syn.len(), 4);
    assert_eq!(syn["puppy"], "dog");
    assert_eq!(syn["stainless steel"], "metal");

    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("syn.tsv");
    let mut rows: Vec<_> = syn.iter().collect();
    rows.sort();
    std::fs::write(
        &p,
        rows.iter()
            .map(|(a, b)| format!("{a}\t{b}\n"))
            .collect::<String>(),
    )
    .unwrap();
    assert_eq!(load_synonyms(&p).unwrap(), syn);
}

#[test]
fn malformed_answer_lines_report_their_position() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("bad.tsv");
    std::fs::write(&p, "item1\t[Category] {Toys}\nno tab here\n").unwrap();
    let err = load_answers(&p).unwrap_err().to_string();
    assert!(err.contains('2'), "{err}");
}
