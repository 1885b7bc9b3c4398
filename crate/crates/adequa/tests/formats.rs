use std::collections::BTreeMap;
use std::path::Path;

use adequa::clh::{self, ClhError};
use adequa::config::FileConfig;
use adequa::labels::{read_labels, LabelEntry, Verdict};
use adequa::manifest::{load_dataset, save_dataset};
use adequa::{checkpoint, dump, Error};
use adequa_core::baseline::{Generation, GenerationDump};
use adequa_core::campaign::{init_campaign, CampaignConfig, Label};
use adequa_core::dataset::Aux;
use adequa_core::synth::{generate_world, BackgroundSpec, ClusterSpec, WorldSpec};
use adequa_core::{Dataset, InputRecord, RunOutcomes, Split, VectorSet};
use proptest::prelude::*;

fn header(version: u32, rows: u32, cols: u32) -> Vec<u8> {
    let mut b = b"CLH1".to_vec();
    for v in [version, rows, cols] {
        b.extend_from_slice(&v.to_le_bytes());
    }
    b
}

#[test]
fn single_zero_is_twenty_bytes() {
    let m = VectorSet::new(1, 1, vec![0.0]).unwrap();
    let bytes = clh::encode(&m).unwrap();
    let expected = [b'C', b'L', b'H', b'1', 1, 0, 0, 0, 1, 0, 0, 0, 1, 0, 0, 0, 0, 0, 0, 0];
    assert_eq!(bytes, expected);
    assert_eq!(clh::decode(&bytes).unwrap(), m);
}

#[test]
fn empty_matrix_is_header_only() {
    let m = VectorSet::empty(5).unwrap();
    let bytes = clh::encode(&m).unwrap();
    assert_eq!(bytes, header(1, 0, 5));
    assert_eq!(clh::decode(&bytes).unwrap(), m);
}

#[test]
fn random_matrix_round_trips_through_a_file() {
    let dir = tempfile::tempdir().unwrap();
    let data: Vec<f64> = (0..100 * 32).map(|i| f64::from(((i * 7919) % 1000) as f32 / 37.0 - 13.0)).collect();
    let m = VectorSet::new(100, 32, data).unwrap();
    let path = dir.path().join("x.clh1");
    clh::write_matrix(&m, &path).unwrap();
    assert_eq!(std::fs::metadata(&path).unwrap().len(), 16 + 4 * 3200);
    assert_eq!(clh::read_matrix(&path).unwrap(), m);
}

proptest! {
    #[test]
    fn any_finite_f32_matrix_round_trips(
        (rows, cols, data) in (0usize..12, 1usize..12).prop_flat_map(|(r, c)| {
            (Just(r), Just(c), prop::collection::vec(any::<f32>().prop_filter("finite", |v| v.is_finite()), r * c))
        })
    ) {
        let m = VectorSet::new(rows, cols, data.iter().map(|&v| f64::from(v)).collect()).unwrap();
        let bytes = clh::encode(&m).unwrap();
        let back = clh::decode(&bytes).unwrap();
        let bits = |x: &VectorSet| x.as_slice().iter().map(|v| (*v as f32).to_bits()).collect::<Vec<_>>();
        prop_assert_eq!(bits(&back), bits(&m));
        prop_assert_eq!(clh::encode(&back).unwrap(), bytes);
    }

    #[test]
    fn write_rounds_to_storage_precision(data in prop::collection::vec(-1e6f64..1e6, 1..40)) {
        let m = VectorSet::new(data.len(), 1, data).unwrap();
        prop_assert_eq!(clh::decode(&clh::encode(&m).unwrap()).unwrap(), clh::to_storage_precision(&m));
    }
}

#[test]
fn malformed_matrices_are_rejected() {
    let mut bad_magic = header(1, 1, 1);
    bad_magic[..4].copy_from_slice(b"XXXX");
    bad_magic.extend_from_slice(&0f32.to_le_bytes());
    assert_eq!(clh::decode(&bad_magic), Err(ClhError::BadMagic(*b"XXXX")));

    let mut short = header(1, 2, 2);
    for v in [1f32, 2.0, 3.0] {
        short.extend_from_slice(&v.to_le_bytes());
    }
    assert_eq!(clh::decode(&short), Err(ClhError::Truncated { expected: 16, found: 12 }));

    let mut long = header(1, 1, 1);
    long.extend_from_slice(&[0; 6]);
    assert_eq!(clh::decode(&long), Err(ClhError::Trailing(2)));

    assert_eq!(clh::decode(&header(2, 0, 1)), Err(ClhError::UnsupportedVersion(2)));
    assert_eq!(clh::decode(&header(1, 0, 0)), Err(ClhError::ZeroColumns));
    assert_eq!(clh::decode(&header(1, 0, 1)[..10]), Err(ClhError::ShortHeader(10)));
    assert_eq!(
        clh::decode(&header(1, u32::MAX, u32::MAX)),
        Err(ClhError::Overflow { rows: u32::MAX, cols: u32::MAX })
    );

    let mut nan = header(1, 3, 2);
    for v in [0f32, 1.0, 2.0, 3.0, f32::NAN, 5.0] {
        nan.extend_from_slice(&v.to_le_bytes());
    }
    assert_eq!(clh::decode(&nan), Err(ClhError::NonFinite { row: 2 }));
}

#[test]
fn values_beyond_f32_range_are_refused_on_write() {
    let m = VectorSet::new(2, 1, vec![1.0, 1e300]).unwrap();
    assert_eq!(clh::encode(&m), Err(ClhError::NonFinite { row: 1 }));
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("big.clh1");
    assert!(matches!(clh::write_matrix(&m, &path), Err(Error::Matrix { .. })));
    assert!(!path.exists());
}

#[test]
fn read_errors_name_the_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.clh1");
    std::fs::write(&path, b"XXXX").unwrap();
    let e = clh::read_matrix(&path).unwrap_err();
    assert!(e.to_string().contains("bad.clh1"), "{e}");
    assert_eq!(e.exit_code(), 2);
}

fn write_manifest(dir: &Path, lines: &[&str]) -> std::path::PathBuf {
    let path = dir.join("m.jsonl");
    std::fs::write(&path, lines.join("\n")).unwrap();
    path
}

fn matrix(dir: &Path, name: &str, rows: usize, cols: usize) {
    let data = (0..rows * cols).map(|i| i as f64).collect();
    clh::write_matrix(&VectorSet::new(rows, cols, data).unwrap(), &dir.join(name)).unwrap();
}

#[test]
fn manifest_over_three_rows() {
    let dir = tempfile::tempdir().unwrap();
    matrix(dir.path(), "x.clh1", 3, 8);
    let m = write_manifest(
        dir.path(),
        &[
            "# three inputs",
            r#"{"matrix": "x.clh1"}"#,
            r#"{"id": "a", "row": 0, "split": "initial_reference", "runs": 10, "passes": 10}"#,
            "",
            r#"{"id": "b", "row": 1, "text": "hello"}"#,
            r#"{"id": "c", "row": 2, "runs": 10, "passes": 5, "input_logprobs": [-0.5, -1.5]}"#,
        ],
    );
    let d = load_dataset(&m).unwrap();
    assert_eq!(d.records().len(), 3);
    assert_eq!(d.record("a").unwrap().split, Split::InitialReference);
    assert_eq!(d.record("b").unwrap().text.as_deref(), Some("hello"));
    assert_eq!(d.outcomes().len(), 2);
    assert!(!d.outcomes()["c"].label().unwrap().is_pass);
    assert_eq!(d.aux().input_logprobs["c"], vec![-0.5, -1.5]);
    assert_eq!(d.vector("c").unwrap(), &[16.0, 17.0, 18.0, 19.0, 20.0, 21.0, 22.0, 23.0]);
}

fn manifest_error(lines: &[&str]) -> String {
    let dir = tempfile::tempdir().unwrap();
    matrix(dir.path(), "x.clh1", 3, 8);
    matrix(dir.path(), "y.clh1", 2, 4);
    matrix(dir.path(), "z.clh1", 2, 8);
    let m = write_manifest(dir.path(), lines);
    load_dataset(&m).unwrap_err().to_string()
}

#[test]
fn malformed_manifests_are_rejected() {
    let h = r#"{"matrix": "x.clh1"}"#;
    let e = manifest_error(&[h, r#"{"id": "a", "row": 5}"#]);
    assert!(e.contains(":2:") && e.contains("row 5") && e.contains("3 rows"), "{e}");

    let e = manifest_error(&[h, r#"{"id": "a", "row": 0}"#, r#"{"id": "a", "row": 1}"#]);
    assert!(e.contains(":3:") && e.contains("duplicate id \"a\""), "{e}");

    let e = manifest_error(&[h, r#"{"id": "a", "row": 0}"#, r#"{"id": "b", "row": 0, "matrix": "y.clh1"}"#]);
    assert!(e.contains("y.clh1") && e.contains("4 columns"), "{e}");

    let e = manifest_error(&[h, r#"{"id": "a", "row": 0, "runs": 10}"#]);
    assert!(e.contains("together"), "{e}");

    let e = manifest_error(&[h, r#"{"id": "a", "row": 0, "runs": 3, "passes": 4}"#]);
    assert!(e.contains("4 passes out of 3"), "{e}");

    let e = manifest_error(&[h, r#"{"id": "a", "row": 0, "runs": 0, "passes": 0}"#]);
    assert!(e.contains("zero runs"), "{e}");

    let e = manifest_error(&[h, r#"{"id": "a", "row": 0, "split": "train"}"#]);
    assert!(e.contains("split") && e.contains("train"), "{e}");

    let e = manifest_error(&[h, r#"{"id": "a", "row": 0, "colour": 1}"#]);
    assert!(e.contains("colour"), "{e}");

    let e = manifest_error(&[r#"{"id": "a", "row": 0}"#]);
    assert!(e.contains("names no matrix"), "{e}");

    let e = manifest_error(&[r#"{"id": "a", "row": 0, "matrix": "x.clh1"}"#, h]);
    assert!(e.contains("header"), "{e}");

    let e = manifest_error(&[h, "{not json"]);
    assert!(e.contains(":2:"), "{e}");

    let e = manifest_error(&[r#"{"matrix": "missing.clh1"}"#, r#"{"id": "a", "row": 0}"#]);
    assert!(e.contains("missing.clh1"), "{e}");
}

#[test]
fn records_can_span_matrices() {
    let dir = tempfile::tempdir().unwrap();
    matrix(dir.path(), "x.clh1", 3, 8);
    matrix(dir.path(), "z.clh1", 2, 8);
    let m = write_manifest(
        dir.path(),
        &[
            r#"{"matrix": "x.clh1"}"#,
            r#"{"id": "a", "row": 2}"#,
            r#"{"id": "b", "row": 1, "matrix": "z.clh1"}"#,
        ],
    );
    let d = load_dataset(&m).unwrap();
    assert_eq!(d.vectors().rows(), 5);
    assert_eq!(d.vector("a").unwrap()[0], 16.0);
    assert_eq!(d.vector("b").unwrap()[0], 8.0);
}

fn rich_dataset() -> Dataset {
    let rows: Vec<Vec<f64>> = (0..6).map(|i| (0..4).map(|j| f64::from((i * 4 + j) as f32 * 0.37)).collect()).collect();
    let ids = ["a", "b", "c", "d", "e", "f"];
    let records = ids
        .iter()
        .enumerate()
        .map(|(i, id)| InputRecord {
            id: id.to_string(),
            row: 5 - i,
            text: (i % 2 == 0).then(|| format!("input {id} with \"quotes\"\nand a newline")),
            split: if i < 2 { Split::InitialReference } else { Split::Pool },
        })
        .collect();
    let outcomes = BTreeMap::from([
        ("a".to_string(), RunOutcomes { runs: 10, passes: 10 }),
        ("b".to_string(), RunOutcomes { runs: 10, passes: 9 }),
        ("e".to_string(), RunOutcomes { runs: 7, passes: 2 }),
    ]);
    let gen = |c: u32, lohs: Option<Vec<f64>>| Generation {
        logprobs: vec![-0.25, -1.5],
        entropies: vec![0.5, 0.125],
        lohs,
        cluster: Some(c),
        verdict: Some(c == 0),
    };
    let generations = GenerationDump {
        inputs: BTreeMap::from([
            ("a".to_string(), vec![gen(0, Some(vec![1.0, 2.0])), gen(1, Some(vec![0.5, -2.0]))]),
            ("c".to_string(), vec![gen(0, None)]),
        ]),
        temperature: Some(0.7),
    };
    let aux = Aux { input_logprobs: BTreeMap::from([("d".to_string(), vec![-0.1, -0.2, -0.3])]), generations: Some(generations) };
    Dataset::new(VectorSet::from_rows(&rows).unwrap(), records, outcomes).unwrap().with_aux(aux).unwrap()
}

#[test]
fn dataset_round_trips_through_manifest_and_dump() {
    let dir = tempfile::tempdir().unwrap();
    let d = rich_dataset();
    let m = save_dataset(&d, dir.path()).unwrap();
    assert_eq!(load_dataset(&m).unwrap(), d);
    let first = std::fs::read(&m).unwrap();
    save_dataset(&load_dataset(&m).unwrap(), dir.path()).unwrap();
    assert_eq!(std::fs::read(&m).unwrap(), first, "saving is deterministic");
}

#[test]
fn malformed_dumps_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    clh::write_matrix(&VectorSet::new(3, 2, vec![0.0; 6]).unwrap(), &dir.path().join("l.clh1")).unwrap();
    let g = r#"{"logprobs": [-1.0], "entropies": [0.5], "cluster": 0}"#;
    let cases = [
        (format!(r#"{{"id": "a", "lohs": "l.clh1", "generations": [{g}]}}"#), "3 rows for 1 generations"),
        (r#"{"id": "a", "generations": [{"logprobs": [-1.0], "entropies": []}]}"#.to_string(), "length mismatch"),
        (format!(r#"{{"id": "a", "generations": [{g}, {{"logprobs": [-1.0], "entropies": [0.1]}}]}}"#), "cluster ids"),
        (format!("{{\"id\": \"a\", \"generations\": [{g}]}}\n{{\"temperature\": 1.0}}"), "first"),
        (format!("{{\"id\": \"a\", \"generations\": [{g}]}}\n{{\"id\": \"a\", \"generations\": [{g}]}}"), "duplicate"),
    ];
    for (text, want) in cases {
        let path = dir.path().join("g.jsonl");
        std::fs::write(&path, text).unwrap();
        let e = dump::read_dump(&path).unwrap_err().to_string();
        assert!(e.contains(want), "{e} lacks {want}");
    }
}

#[test]
fn config_errors_name_the_field() {
    let p = Path::new("c.toml");
    let cfg = FileConfig::parse(p, "seed = 4\n[campaign]\ntarget_size = 60\nalpha = 0.25\n").unwrap();
    assert_eq!((cfg.seed, cfg.campaign.target_size, cfg.campaign.alpha), (Some(4), 60, 0.25));
    assert_eq!(cfg.campaign.batch_size, CampaignConfig::default().batch_size);

    let e = FileConfig::parse(p, "[campaign]\nalfa = 0.5\n").unwrap_err();
    assert!(matches!(&e, Error::Field { field, msg, .. } if field == "campaign.alfa" && msg.contains("unknown field")), "{e}");

    let e = FileConfig::parse(p, "[campaign]\nalpha = \"half\"\n").unwrap_err();
    assert!(matches!(&e, Error::Field { field, .. } if field == "campaign.alpha"), "{e}");

    let e = FileConfig::parse(p, "[campaign]\nalpha = 1.5\n").unwrap_err();
    assert!(matches!(&e, Error::Field { field, .. } if field == "campaign.alpha"), "{e}");

    let e = FileConfig::parse(p, "[campaign]\nd_min = 2\nd_init = 2\n").unwrap_err();
    assert!(matches!(&e, Error::Field { field, .. } if field == "campaign.d_min"), "{e}");

    let e = FileConfig::parse(p, "[campaign\n").unwrap_err();
    assert!(matches!(e, Error::Format { .. }));
}

#[test]
fn verdict_shorthand_maps_to_single_runs() {
    let v = |verdict| LabelEntry { id: "x".into(), runs: None, passes: None, verdict: Some(verdict) };
    assert_eq!(v(Verdict::Pass).to_label(), Ok(Label::Outcome(RunOutcomes { runs: 1, passes: 1 })));
    assert_eq!(v(Verdict::Fail).to_label(), Ok(Label::Outcome(RunOutcomes { runs: 1, passes: 0 })));
    assert_eq!(v(Verdict::Skip).to_label(), Ok(Label::Abstain));
    let both = LabelEntry { runs: Some(1), passes: Some(1), ..v(Verdict::Pass) };
    assert_eq!(both.to_label().unwrap_err().0, "verdict");
    let neither = LabelEntry { verdict: None, ..v(Verdict::Pass) };
    assert_eq!(neither.to_label().unwrap_err().0, "runs");

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("l.jsonl");
    std::fs::write(&path, "{\"id\": \"a\", \"verdict\": \"pass\"}\n{\"id\": \"b\", \"runs\": 10, \"passes\": 3}\n").unwrap();
    let labels = read_labels(&path).unwrap();
    assert_eq!(labels["b"], Label::Outcome(RunOutcomes { runs: 10, passes: 3 }));
    std::fs::write(&path, "{\"id\": \"a\", \"verdict\": \"maybe\"}\n").unwrap();
    assert!(read_labels(&path).unwrap_err().to_string().contains(":1:"));
}

#[test]
fn checkpoint_restores_an_identical_campaign() {
    let cluster = |x: f64, pass_prob| ClusterSpec { mean: vec![x, 0.0, 0.0], covariance: None, spread: 1.0, weight: 0.5, pass_prob };
    let spec = WorldSpec {
        latent_dim: 3,
        raw_dim: 10,
        n_points: 200,
        clusters: vec![cluster(0.0, 0.9), cluster(8.0, 0.3)],
        background: BackgroundSpec { fraction: 0.0, pass_prob: 0.0, spread: 1.0, min_distance: 0.0 },
        initial_references: 10,
        noise_scale: 0.01,
        runs_per_input: 10,
    };
    let w = generate_world(&spec, 5).unwrap();
    let mut st = init_campaign(CampaignConfig { target_size: 40, d_init: 5, ..Default::default() }, &w.dataset).unwrap();
    let mut oracle = adequa_core::synth::SimulatedOracle { truth: &w.truth, runs: 10 };
    st.step(&w.dataset, &mut oracle).unwrap();
    st.propose_batch(&w.dataset).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join(checkpoint::CHECKPOINT_FILE);
    checkpoint::save(&st, Some(Path::new("/data/m.jsonl")), &path).unwrap();
    let ck = checkpoint::load(dir.path()).unwrap();
    assert_eq!(ck.dataset.as_deref(), Some(Path::new("/data/m.jsonl")));
    let back = ck.into_state().unwrap();
    assert_eq!(back, st);
    assert!(back.open_proposal().is_some());

    let mut a = st.clone();
    let mut b = back;
    a.run_campaign(&w.dataset, &mut oracle).unwrap();
    b.run_campaign(&w.dataset, &mut oracle).unwrap();
    assert_eq!(a, b);

    std::fs::write(&path, "{\"format\": \"other\"}").unwrap();
    assert!(checkpoint::load(&path).is_err());
}
