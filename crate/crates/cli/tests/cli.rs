use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use mmrec::dataset::InteractionDataset;
use mmrec::features::{load_features, save_features, FeatureTable, Provenance};
use mmrec::keywords::AttributeMatrix;
use tempfile::TempDir;

const N_USERS: usize = 90;
const N_ITEMS: usize = 60;

fn mmrec(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mmrec"))
        .args(args)
        .env("RUST_LOG", "warn")
        .env("RUST_BACKTRACE", "0")
        .env("RUST_LIB_BACKTRACE", "0")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = mmrec(args);
    assert!(
        out.status.success(),
        "mmrec {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Three item clusters; users take most of their own cluster and one stray item.
fn write_raw_log(path: &Path) {
    let mut text = String::from("user_id\titem_id\trating\ttimestamp\n");
    for u in 0..N_USERS {
        let c = u % 3;
        for j in 0..20 {
            if (u + j) % 20 < 10 {
                writeln!(text, "u{u}\ti{}\t5\t{}", c + 3 * j, u * 100 + j).unwrap();
            }
        }
        writeln!(
            text,
            "u{u}\ti{}\t3\t{}",
            (c + 1 + 3 * (u % 20)) % N_ITEMS,
            u * 100 + 50
        )
        .unwrap();
    }
    text.push_str("u0\t\t5\t1\n");
    fs::write(path, text).unwrap();
}

fn write_features(path: &Path) {
    let ids: Vec<String> = (0..N_ITEMS).map(|i| format!("i{i}")).collect();
    let mut data = Vec::new();
    for i in 0..N_ITEMS {
        for d in 0..4 {
            let hot = if d == i % 3 { 1.0 } else { 0.0 };
            data.push(hot + 0.05 * ((i * 7 + d * 3) % 5) as f32);
        }
    }
    let t = FeatureTable::new(ids, 4, data, Provenance::new("toy", None)).unwrap();
    save_features(&t, path).unwrap();
}

fn write_answers(path: &Path) {
    let kinds = ["Bowls", "Leashes", "Beds"];
    let mut text = String::new();
    for i in 0..N_ITEMS {
        writeln!(
            text,
            "i{i}\t[Category] {{{}}}, [Pet Type] {{Dog}}, [Purpose] {{Play}}, [Material] {{M{}}}, [Usage Context] {{Home}}",
            kinds[i % 3],
            i % 4
        )
        .unwrap();
    }
    fs::write(path, text).unwrap();
}

struct Workspace {
    dir: TempDir,
}

impl Workspace {
    fn new() -> Self {
        let ws = Self {
            dir: tempfile::tempdir().unwrap(),
        };
        write_raw_log(&ws.path("raw.tsv"));
        write_features(&ws.path("feat.mmfe"));
        write_answers(&ws.path("answers.tsv"));
        ok(&[
            "prepare",
            "--input",
            s(&ws.path("raw.tsv")),
            "--kcore",
            "3",
            "--out",
            s(&ws.path("split.tsv")),
            "--stats",
            s(&ws.path("stats.json")),
        ]);
        ws
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }
}

fn read_json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn prepare_writes_split_and_stats() {
    let ws = Workspace::new();
    let ds = InteractionDataset::read_split_tsv(ws.path("split.tsv")).unwrap();
    assert_eq!(ds.n_users(), N_USERS);
    assert_eq!(ds.n_items(), N_ITEMS);
    let stats = read_json(&ws.path("stats.json"));
    assert_eq!(stats["malformed_rows"], 1);
    assert_eq!(stats["kcore"], 3);
    let total = stats["train"].as_u64().unwrap()
        + stats["valid"].as_u64().unwrap()
        + stats["test"].as_u64().unwrap();
    assert_eq!(total, (N_USERS * 11) as u64);
    assert!(stats["sparsity"].as_str().unwrap().ends_with('%'));
}

#[test]
fn prepare_rejects_a_filter_that_removes_everything() {
    let ws = Workspace::new();
    let out = mmrec(&[
        "prepare",
        "--input",
        s(&ws.path("raw.tsv")),
        "--kcore",
        "500",
        "--out",
        s(&ws.path("none.tsv")),
    ]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("removed every interaction"));
}

#[test]
fn feature_commands_write_aligned_tables() {
    let ws = Workspace::new();
    let feat = ws.path("feat.mmfe");
    ok(&[
        "features",
        "noise",
        "--kind",
        "gaussian",
        "--split",
        s(&ws.path("split.tsv")),
        "--dim",
        "6",
        "--out",
        s(&ws.path("g.mmfe")),
    ]);
    ok(&[
        "features",
        "noise",
        "--kind",
        "multivariate",
        "--reference",
        s(&feat),
        "--seed",
        "3",
        "--out",
        s(&ws.path("m.mmfe")),
    ]);
    ok(&[
        "features",
        "concat",
        "--input",
        s(&feat),
        s(&ws.path("m.mmfe")),
        "--l2-normalize",
        "true",
        "--out",
        s(&ws.path("c.mmfe")),
    ]);
    let g = load_features(ws.path("g.mmfe")).unwrap();
    let m = load_features(ws.path("m.mmfe")).unwrap();
    let c = load_features(ws.path("c.mmfe")).unwrap();
    assert_eq!((g.n_items(), g.dim()), (N_ITEMS, 6));
    assert_eq!((m.n_items(), m.dim()), (N_ITEMS, 4));
    assert_eq!(c.dim(), 8);
    assert_eq!(m.item_ids(), load_features(&feat).unwrap().item_ids());

    ok(&[
        "features",
        "encode-attributes",
        "--answers",
        s(&ws.path("answers.tsv")),
        "--schema",
        "pets",
        "--out",
        s(&ws.path("attrs.tsv")),
        "--report",
        s(&ws.path("attrs.json")),
    ]);
    let attrs = AttributeMatrix::read_tsv(ws.path("attrs.tsv")).unwrap();
    assert_eq!(attrs.n_items(), N_ITEMS);
    assert!((0..N_ITEMS).all(|r| attrs.row_sum(r) == 5));
    assert_eq!(read_json(&ws.path("attrs.json"))["parse_failures"], 0);

    let bad = mmrec(&[
        "features",
        "noise",
        "--kind",
        "uniform",
        "--reference",
        s(&feat),
        "--out",
        s(&ws.path("x.mmfe")),
    ]);
    assert!(!bad.status.success());
}

#[test]
fn train_then_evaluate_the_checkpoint() {
    let ws = Workspace::new();
    let run = ws.path("run");
    let stdout = ok(&[
        "train",
        "--split",
        s(&ws.path("split.tsv")),
        "--model",
        "vbpr",
        "--features",
        s(&ws.path("feat.mmfe")),
        "--lr",
        "0.05",
        "--dim",
        "8",
        "--epochs",
        "10",
        "--batch-size",
        "32",
        "--out-dir",
        s(&run),
    ]);
    assert!(stdout.contains("test Recall@20"));
    let report = read_json(&run.join("report.json"));
    let trained = report["result"]["test"]["mean"]["recall"].as_f64().unwrap();
    assert!(run.join("trace.json").exists());

    ok(&[
        "evaluate",
        "--split",
        s(&ws.path("split.tsv")),
        "--checkpoint",
        s(&run.join("model.mmck")),
        "--out",
        s(&ws.path("eval.json")),
        "--samples",
        s(&ws.path("eval_samples.tsv")),
    ]);
    let again = read_json(&ws.path("eval.json"))["mean"]["recall"]
        .as_f64()
        .unwrap();
    assert!((again - trained).abs() < 1e-12, "{again} vs {trained}");
    assert_eq!(
        fs::read_to_string(ws.path("eval_samples.tsv")).unwrap(),
        fs::read_to_string(run.join("test_samples.tsv")).unwrap()
    );
}

#[test]
fn config_file_supplies_unset_flags() {
    let ws = Workspace::new();
    let cfg = ws.path("cfg.json");
    let body = serde_json::json!({
        "split": ws.path("split.tsv"),
        "model": "bprmf",
        "lr": 0.05,
        "dim": 4,
        "epochs": 2,
        "out_dir": ws.path("from_cfg"),
    });
    fs::write(&cfg, body.to_string()).unwrap();
    ok(&["train", "--config", s(&cfg), "--epochs", "3"]);
    let report = read_json(&ws.path("from_cfg/report.json"));
    assert_eq!(
        report["result"]["best"]["label"]
            .as_str()
            .map(|l| l.contains("dim=4")),
        Some(true)
    );
    assert_eq!(report["result"]["family"], "bprmf");
}

#[test]
fn knn_grid_saves_neighbors_that_evaluate_alike() {
    let ws = Workspace::new();
    let run = ws.path("knn");
    ok(&[
        "grid",
        "--split",
        s(&ws.path("split.tsv")),
        "--model",
        "itemknn",
        "--similarity",
        "cosine",
        "--neighbors",
        "10",
        "--weighting",
        "none",
        "--out-dir",
        s(&run),
    ]);
    let grid_recall = read_json(&run.join("report.json"))["result"]["test"]["mean"]["recall"]
        .as_f64()
        .unwrap();
    ok(&[
        "evaluate",
        "--split",
        s(&ws.path("split.tsv")),
        "--neighbors",
        s(&run.join("neighbors.tsv")),
        "--out",
        s(&ws.path("knn_eval.json")),
    ]);
    let recall = read_json(&ws.path("knn_eval.json"))["mean"]["recall"]
        .as_f64()
        .unwrap();
    assert!(
        (recall - grid_recall).abs() < 1e-9,
        "{recall} vs {grid_recall}"
    );
    assert!(recall > 0.0);
}

#[test]
fn significance_between_two_sample_files() {
    let ws = Workspace::new();
    let split = ws.path("split.tsv");
    for model in ["mostpop", "random"] {
        ok(&[
            "evaluate",
            "--split",
            s(&split),
            "--model",
            model,
            "--samples",
            s(&ws.path(&format!("{model}.tsv"))),
            "--out",
            s(&ws.path(&format!("{model}.json"))),
        ]);
    }
    let out = ok(&[
        "significance",
        "--a",
        s(&ws.path("mostpop.tsv")),
        "--b",
        s(&ws.path("mostpop.tsv")),
    ]);
    let sig: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert_eq!(sig["p_value"], 1.0);
    let out = ok(&[
        "significance",
        "--a",
        s(&ws.path("mostpop.tsv")),
        "--b",
        s(&ws.path("random.tsv")),
        "--metric",
        "ndcg",
        "--test",
        "wilcoxon",
    ]);
    let sig: serde_json::Value = serde_json::from_str(&out).unwrap();
    let p = sig["p_value"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&p));
}

#[test]
fn borda_from_long_format_table() {
    let ws = Workspace::new();
    let table = "model\tdataset\textractor\trecall\n\
        vbpr\tbaby\ta\t7.5\nvbpr\tbaby\tb\t7.1\nvbpr\tbaby\tc\t7.1\n\
        lattice\tbaby\ta\t6.0\nlattice\tbaby\tb\t6.4\nlattice\tbaby\tc\t5.0\n";
    fs::write(ws.path("recall.tsv"), table).unwrap();
    ok(&[
        "borda",
        "--input",
        s(&ws.path("recall.tsv")),
        "--out",
        s(&ws.path("borda.tsv")),
        "--json",
        s(&ws.path("borda.json")),
    ]);
    let b = read_json(&ws.path("borda.json"));
    assert_eq!(b["overall"], serde_json::json!([3.0, 2.5, 0.5]));
    assert_eq!(b["overall_rank"], serde_json::json!([1, 2, 3]));
    let text = fs::read_to_string(ws.path("borda.tsv")).unwrap();
    assert_eq!(
        text.lines().next().unwrap(),
        "extractor\tbaby\toverall\trank"
    );
}

#[test]
fn noise_ablation_reports_every_condition() {
    let ws = Workspace::new();
    let run = ws.path("ablate");
    let stdout = ok(&[
        "ablate-noise",
        "--split",
        s(&ws.path("split.tsv")),
        "--model",
        "vbpr",
        "--features",
        s(&ws.path("feat.mmfe")),
        "--lr",
        "0.05",
        "--dim",
        "4",
        "--epochs",
        "3",
        "--seeds",
        "0",
        "1",
        "--out-dir",
        s(&run),
    ]);
    assert!(stdout.contains("semantic vs gaussian"));
    let report = read_json(&run.join("ablation.json"));
    assert_eq!(report["runs"].as_array().unwrap().len(), 6);
    assert_eq!(report["seeds"], serde_json::json!([0, 1]));
    assert!(run.join("plot.tsv").exists());
}

#[test]
fn benchmark_reads_datasets_from_config() {
    let ws = Workspace::new();
    ok(&[
        "features",
        "noise",
        "--kind",
        "gaussian",
        "--reference",
        s(&ws.path("feat.mmfe")),
        "--out",
        s(&ws.path("g.mmfe")),
    ]);
    let cfg = ws.path("bench.json");
    let body = serde_json::json!({
        "lr": 0.05,
        "dim": 4,
        "epochs": 2,
        "models": ["vbpr", "freedom"],
        "datasets": [{
            "name": "toy",
            "split": ws.path("split.tsv"),
            "extractors": {"real": [ws.path("feat.mmfe")], "noise": [ws.path("g.mmfe")]},
        }],
        "out_dir": ws.path("bench"),
    });
    fs::write(&cfg, body.to_string()).unwrap();
    ok(&["benchmark-extractors", "--config", s(&cfg)]);
    let report = read_json(&ws.path("bench/benchmark.json"));
    assert_eq!(report["cells"].as_array().unwrap().len(), 4);
    let borda = fs::read_to_string(ws.path("bench/borda.tsv")).unwrap();
    assert_eq!(borda.lines().count(), 3);

    let out = mmrec(&["benchmark-extractors", "--model", "vbpr"]);
    assert!(!out.status.success());
}

#[test]
fn attribute_study_compares_against_baselines() {
    let ws = Workspace::new();
    let run = ws.path("attr");
    let answers = format!("toy={}", s(&ws.path("answers.tsv")));
    let stdout = ok(&[
        "attribute-study",
        "--split",
        s(&ws.path("split.tsv")),
        "--answers",
        &answers,
        "--schema",
        "pets",
        "--lr",
        "0.05",
        "--dim",
        "4",
        "--epochs",
        "2",
        "--similarity",
        "cosine",
        "--neighbors",
        "10",
        "--weighting",
        "none",
        "--out-dir",
        s(&run),
    ]);
    assert!(stdout.contains("attributeknn[toy]"));
    assert!(run.join("attribute_study.json").exists());

    let bad = mmrec(&[
        "attribute-study",
        "--split",
        s(&ws.path("split.tsv")),
        "--answers",
        "no-equals-sign",
        "--schema",
        "pets",
    ]);
    assert!(!bad.status.success());
}
