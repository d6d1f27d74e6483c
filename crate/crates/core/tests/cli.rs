use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn obtree(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_obtree"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = obtree(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

struct Fixture {
    dir: TempDir,
}

impl Fixture {
    fn new() -> Self {
        Self {
            dir: tempfile::tempdir().unwrap(),
        }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn model(&self, name: &str, extra: &[&str]) -> PathBuf {
        let out = self.path(name);
        let mut args = vec!["gen-model", "--out", p(&out)];
        args.extend_from_slice(extra);
        ok(&args);
        out
    }

    fn data(&self, name: &str, extra: &[&str]) -> PathBuf {
        let out = self.path(name);
        let mut args = vec!["gen-data", "--out", p(&out)];
        args.extend_from_slice(extra);
        ok(&args);
        out
    }
}

const SMALL: &[&str] = &["--trees", "50", "--features", "12", "--depth", "5"];

#[test]
fn help_and_usage_exit_codes() {
    assert_eq!(obtree(&["--help"]).status.code(), Some(0));
    assert_eq!(obtree(&["--version"]).status.code(), Some(0));
    assert_eq!(obtree(&[]).status.code(), Some(1));
    assert_eq!(obtree(&["predict", "--model", "m", "--data", "d", "--backend", "vec:3"]).status.code(), Some(1));
    assert_eq!(obtree(&["gen-data", "--out", "x.csv", "--labels"]).status.code(), Some(1));
}

#[test]
fn gen_model_is_reproducible_and_loadable() {
    let f = Fixture::new();
    let a = f.model("a.json", &[]);
    let b = f.model("b.json", &[]);
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    let e = obtree::load_model(&a).unwrap();
    assert_eq!((e.n_features(), e.trees().len(), e.n_dims()), (90, 1000, 1));

    let c = f.model("c.json", &["--depth", "8", "--dims", "7", "--features", "54", "--trees", "20"]);
    let e = obtree::load_model(&c).unwrap();
    assert_eq!(e.trees()[0].leaf_count(), 256);
    assert_eq!(e.n_dims(), 7);

    let bad = obtree(&["gen-model", "--out", p(&f.path("d.json")), "--depth", "0"]);
    assert_eq!(bad.status.code(), Some(1), "{}", stderr(&bad));
}

#[test]
fn gen_data_round_trips_through_ingestion() {
    let f = Fixture::new();
    let a = f.data("a.csv", &["--samples", "1000", "--features", "90", "--seed", "4"]);
    let b = f.data("b.csv", &["--samples", "1000", "--features", "90", "--seed", "4"]);
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    let t = obtree::cli::ingest_csv(&a, Some(90)).unwrap();
    assert_eq!(t.n_rows, 1000);
    assert!(t.labels.is_none());
    let out = f.path("copy.csv");
    obtree::cli::save_table(&out, &t).unwrap();
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&out).unwrap());
}

#[test]
fn minimal_model_single_sample() {
    let f = Fixture::new();
    let model = f.path("m.json");
    std::fs::write(
        &model,
        r#"{"n_features":1,"n_dims":1,"borders":[{"feature":0,"values":[0.0]}],
            "trees":[{"depth":1,"splits":[{"feature":0,"border_bin":1}],"leaf_values":[-1.0,1.0]}]}"#,
    )
    .unwrap();
    let data = f.path("d.csv");
    std::fs::write(&data, "x\n0.5\n").unwrap();
    let out = ok(&["predict", "--model", p(&model), "--data", p(&data), "--repeat", "1"]);
    assert_eq!(String::from_utf8_lossy(&out.stdout), "raw_0\n1\n");
    assert!(stderr(&out).contains("read 1 rows x 1 feature columns"));
}

#[test]
fn backends_and_workers_write_identical_files() {
    let f = Fixture::new();
    let model = f.model("m.json", &["--dims", "3", "--trees", "80", "--features", "20"]);
    let data = f.data("d.csv", &["--model", p(&model), "--samples", "777"]);
    let run = |name: &str, extra: &[&str]| {
        let out = f.path(name);
        let mut args = vec!["predict", "--model", p(&model), "--data", p(&data), "--repeat", "1", "--out", p(&out)];
        args.extend_from_slice(extra);
        ok(&args);
        std::fs::read(out).unwrap()
    };
    let base = run("scalar.csv", &["--transform", "softmax-argmax"]);
    assert_eq!(base, run("vec8.csv", &["--transform", "softmax-argmax", "--backend", "vec:8"]));
    assert_eq!(
        base,
        run("w4.csv", &["--transform", "softmax-argmax", "--workers", "4", "--backend", "vec:32", "--block-size", "50"])
    );
    let text = String::from_utf8(base).unwrap();
    assert!(text.starts_with("raw_0,raw_1,raw_2,label\n"));
    assert_eq!(text.lines().count(), 778);
}

#[test]
fn data_errors_exit_2_with_details() {
    let f = Fixture::new();
    let model = f.model("m.json", SMALL);
    let wrong = f.data("wrong.csv", &["--features", "11", "--samples", "3"]);
    let out = obtree(&["predict", "--model", p(&model), "--data", p(&wrong)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("11 feature columns, the model expects 12"), "{}", stderr(&out));

    let ragged = f.path("ragged.csv");
    let header: Vec<String> = (0..12).map(|i| format!("f{i}")).collect();
    let row = ["0.5"; 12].join(",");
    std::fs::write(&ragged, format!("{}\n{row}\n3\n", header.join(","))).unwrap();
    let out = obtree(&["predict", "--model", p(&model), "--data", p(&ragged)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("line 3"), "{}", stderr(&out));

    let out = obtree(&["predict", "--model", p(&f.path("missing.json")), "--data", p(&ragged)]);
    assert_eq!(out.status.code(), Some(2));

    let data = f.data("ok.csv", &["--features", "12", "--samples", "3"]);
    let out = obtree(&["predict", "--model", p(&model), "--data", p(&data), "--workers", "0"]);
    assert_eq!(out.status.code(), Some(1));
    let out = obtree(&["predict", "--model", p(&model), "--data", p(&data), "--transform", "softmax-argmax"]);
    assert_eq!(out.status.code(), Some(1), "{}", stderr(&out));
}

#[test]
fn labelled_data_reports_metrics() {
    let f = Fixture::new();
    let model = f.model("m.json", SMALL);
    let data = f.data("reg.csv", &["--model", p(&model), "--labels", "--samples", "300"]);
    let out = ok(&["predict", "--model", p(&model), "--data", p(&data), "--repeat", "2"]);
    assert!(stderr(&out).contains("mae 0.000000"), "{}", stderr(&out));
    assert!(stderr(&out).contains("(mean of 2)"));

    let data = f.data("bin.csv", &["--model", p(&model), "--labels", "--transform", "sigmoid", "--samples", "300"]);
    let out = ok(&["predict", "--model", p(&model), "--data", p(&data), "--transform", "sigmoid", "--repeat", "1"]);
    assert!(stderr(&out).contains("accuracy 1.000000"), "{}", stderr(&out));
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("raw_0,probability\n"));
}

#[test]
fn predict_profile_prints_call_graph() {
    let f = Fixture::new();
    let model = f.model("m.json", SMALL);
    let data = f.data("d.csv", &["--model", p(&model), "--samples", "500"]);
    let out = ok(&[
        "predict", "--model", p(&model), "--data", p(&data), "--profile", "--workers", "2", "--repeat", "1",
        "--report", "tsv", "--out", p(&f.path("pred.csv")),
    ]);
    let err = stderr(&out);
    assert!(err.contains("function\tcall_count\ttime_s\tpct_total"), "{err}");
    assert!(err.contains("profile merged across 2 workers"));
    for name in ["ApplyModelMulti\t1\t", "BinarizeFeatures\t4\t", "CalcIndexesBasic\t200\t", "CalculateLeafValues\t200\t", "Other\t", "Total\t"] {
        assert!(err.contains(name), "missing {name} in {err}");
    }
}

#[test]
fn bench_tsv_total_speedup_is_ratio_of_totals() {
    let f = Fixture::new();
    let model = f.model("m.json", SMALL);
    let data = f.data("d.csv", &["--model", p(&model), "--samples", "2000"]);
    let report = f.path("bench.txt");
    let out = ok(&[
        "bench", "--model", p(&model), "--data", p(&data), "--backend", "vec:16", "--report", "tsv", "--repeat", "2",
        "--workers", "2", "--out", p(&report),
    ]);
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(std::fs::read_to_string(&report).unwrap(), text);
    assert!(text.starts_with("# obtree bench"));
    let total: Vec<&str> = text.lines().find(|l| l.starts_with("Total\t")).unwrap().split('\t').collect();
    let (b, o, s): (f64, f64, f64) = (total[2].parse().unwrap(), total[4].parse().unwrap(), total[6].parse().unwrap());
    assert!((b / o - s).abs() < 0.01 + 0.01 * s, "{b} / {o} vs {s}");
    assert!(text.contains("# end-to-end, workers=2, mean of 2 runs"));
}

#[test]
fn knn_features_and_embedding_bench() {
    let f = Fixture::new();
    let corpus = f.path("corpus.csv");
    let queries = f.path("queries.csv");
    ok(&[
        "gen-data", "--embeddings", "--samples", "300", "--dim", "64", "--classes", "5", "--queries", "40",
        "--queries-out", p(&queries), "--out", p(&corpus),
    ]);
    let feats = f.path("feats.csv");
    ok(&[
        "knn-features", "--corpus", p(&corpus), "--data", p(&queries), "--k", "7", "--backend", "vec:8",
        "--out", p(&feats),
    ]);
    let t = obtree::cli::ingest_csv(&feats, Some(6)).unwrap();
    assert_eq!(t.n_rows, 40);
    assert_eq!(t.feature_names, ["class_0", "class_1", "class_2", "class_3", "class_4", "mean_dist"]);
    for r in 0..t.n_rows {
        let row = t.row(r);
        let shares: f32 = row[..5].iter().sum();
        assert!((shares - 1.0).abs() < 1e-6);
        assert!(row[5] >= 0.0);
    }
    assert!(t.labels.is_some());

    let model = f.model("emb.json", &["--features", "6", "--trees", "30", "--depth", "4", "--dims", "5", "--borders", "8"]);
    let out = ok(&[
        "bench", "--model", p(&model), "--data", p(&queries), "--corpus", p(&corpus), "--k", "7", "--repeat", "1",
        "--transform", "softmax-argmax", "--report", "tsv",
    ]);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("embeddingProcessingCollection\t1\t"), "{text}");
    assert!(text.contains("L2SqrDistance\t12000\t"), "{text}");
    assert!(text.contains("CalculateLeafValuesMulti\t"), "{text}");

    let wrong = f.model("wrong.json", SMALL);
    let out = obtree(&["bench", "--model", p(&wrong), "--data", p(&queries), "--corpus", p(&corpus)]);
    assert_eq!(out.status.code(), Some(2));
}
