mod common;

use submfq::learner::{learn, LearnConfig};
use submfq::{Layout, QTable};

#[test]
fn learned_tables_survive_save_and_load() {
    let spec = common::random(61, 4, 2, 2, 3, 2, 0.7);
    let dir = tempfile::tempdir().unwrap();
    for layout in [Layout::ExplicitSubset { k: 3 }, Layout::MeanField { k: 3 }] {
        let cfg = LearnConfig {
            layout: Some(layout),
            ..LearnConfig::sampled(3, 4, 30, 2)
        };
        let (q, _) = learn(&spec, &cfg).unwrap();
        let path = dir.path().join(format!("{}.bin", layout.name()));
        q.save(&path, Some(serde_json::json!({"seed": 2}))).unwrap();
        let (back, sidecar) = QTable::load(&path).unwrap();
        assert_eq!(back.values(), q.values());
        assert_eq!(back.layout(), layout);
        assert_eq!(sidecar.entries as usize, q.len());
        assert_eq!(sidecar.metadata.unwrap()["seed"], 2);
        assert_eq!(std::fs::metadata(&path).unwrap().len(), 8 * q.len() as u64);

        let mut csv = Vec::new();
        q.write_csv(&mut csv).unwrap();
        let text = String::from_utf8(csv).unwrap();
        let rows: Vec<&str> = text.lines().skip(1).collect();
        assert_eq!(rows.len(), q.len());
        for (row, v) in rows.iter().zip(q.values()) {
            assert_eq!(row.rsplit(',').next().unwrap().parse::<f64>().unwrap(), *v);
        }
    }
}

#[test]
fn truncated_files_are_rejected() {
    let spec = common::random(62, 2, 2, 2, 2, 2, 0.5);
    let (q, _) = learn(&spec, &LearnConfig::exact(2, 5)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("q.bin");
    q.save(&path, None).unwrap();
    let bytes = std::fs::read(&path).unwrap();
    std::fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
    assert!(QTable::load(&path).is_err());
}

#[test]
fn closed_form_sizes() {
    let d = submfq::Dims::new(2, 3, 2, 2);
    assert_eq!(Layout::Joint { n: 2 }.entries(d), Some(2 * 9 * 2 * 4));
    assert_eq!(Layout::ExplicitSubset { k: 3 }.entries(d), Some(2 * 27 * 2 * 8));
    // s_g · s_1 · C(2 + 6 − 1, 5) · a_1 · a_g
    assert_eq!(Layout::MeanField { k: 3 }.entries(d), Some(2 * 3 * 21 * 2 * 2));
}
