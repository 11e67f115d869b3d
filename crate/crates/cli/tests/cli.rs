use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn pensieve(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pensieve"))
        .args(args)
        .env("PENSIEVE_NO_COLOR", "1")
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn fixture() -> String {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../core/tests/fixtures/frog_trace.jsonl")
        .to_string_lossy()
        .into_owned()
}

struct Work(TempDir);

impl Work {
    fn new() -> Self {
        Work(tempfile::tempdir().unwrap())
    }

    fn path(&self, name: &str) -> PathBuf {
        self.0.path().join(name)
    }

    fn s(&self, name: &str) -> String {
        self.path(name).to_string_lossy().into_owned()
    }

    fn write(&self, name: &str, text: &str) -> String {
        fs::write(self.path(name), text).unwrap();
        self.s(name)
    }
}

fn records(n: usize) -> String {
    (0..n)
        .map(|i| {
            let x = i as f64 + 1.0;
            format!(
                r#"{{"id":"r{i}","semantic_embedding":[{x},1.0,{}],"appearance_embedding":[1.0,{x}],"captions":["a photo of a cat number {i}"],"split":"restval"}}"#,
                -x
            )
        })
        .collect::<Vec<_>>()
        .join("\n")
}

#[test]
fn index_build_then_search_round_trips() {
    let w = Work::new();
    let recs = w.write("recs.jsonl", &records(12));
    let out = pensieve(&[
        "index",
        "build",
        "--records",
        &recs,
        "--out",
        &w.s("i.pnsv"),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(stdout(&out).contains("indexed 12 records"));
    assert!(w.path("i.pnsv.manifest.json").exists());

    let q = w.write(
        "q.json",
        r#"{"semantic":[3.0,1.0,-3.0],"appearance":[1.0,3.0]}"#,
    );
    let out = pensieve(&[
        "index",
        "search",
        "--index",
        &w.s("i.pnsv"),
        "--query",
        &q,
        "--k",
        "20",
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let lines: Vec<serde_json::Value> = stdout(&out)
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines.len(), 12);
    assert_eq!(lines[0]["id"], "r2");

    let block = w.write("block.txt", "r2\nr3\n");
    let out = pensieve(&[
        "index",
        "search",
        "--index",
        &w.s("i.pnsv"),
        "--query",
        &q,
        "--k",
        "3",
        "--blocklist",
        &block,
        "--rerank-bleu1",
        "--query-text",
        "Is there a cat number 7?",
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let text = stdout(&out);
    assert!(!text.contains("\"r2\"") && !text.contains("\"r3\""));
    assert!(text.contains("rerank_score"));
}

#[test]
fn usage_errors_exit_2() {
    let w = Work::new();
    let q = w.write("q.json", "{}");
    let out = pensieve(&["index", "search", "--index", "i", "--query", &q, "--k", "0"]);
    assert_eq!(code(&out), 2);
    let out = pensieve(&[
        "index",
        "search",
        "--index",
        "i",
        "--query",
        &q,
        "--k",
        "1",
        "--rerank-bleu1",
    ]);
    assert_eq!(code(&out), 2);
    let t = w.write("t.json", r#"{"shape":[2],"values":[1,2]}"#);
    let out = pensieve(&[
        "diffuse",
        "--input",
        &t,
        "--t",
        "0",
        "--out",
        &w.s("o.json"),
    ]);
    assert_eq!(code(&out), 2);
    let out = pensieve(&[
        "diffuse",
        "--input",
        &t,
        "--t",
        "1001",
        "--out",
        &w.s("o.json"),
    ]);
    assert_eq!(code(&out), 2);
    let out = pensieve(&[
        "decode",
        "--scorer",
        "toy",
        "--prompt",
        "",
        "--out",
        &w.s("d"),
    ]);
    assert_eq!(code(&out), 2, "{}", stderr(&out));
    let out = pensieve(&[
        "decode",
        "--scorer",
        "trace",
        "--trace",
        &fixture(),
        "--strategy",
        "beam",
        "--prompt",
        "",
        "--out",
        &w.s("d"),
    ]);
    assert_eq!(code(&out), 2);
}

#[test]
fn io_errors_exit_3() {
    let w = Work::new();
    let out = pensieve(&["eval", "--metric", "pope", "--input", &w.s("missing.jsonl")]);
    assert_eq!(code(&out), 3);
    let out = pensieve(&[
        "index",
        "build",
        "--records",
        &w.s("nope.jsonl"),
        "--out",
        &w.s("i"),
    ]);
    assert_eq!(code(&out), 3);
}

#[test]
fn data_errors_exit_4() {
    let w = Work::new();
    let full = fs::read_to_string(fixture()).unwrap();
    let cut: String = full
        .lines()
        .filter(|l| !(l.contains("\"knn3\"") && l.contains("\"step\": 1")))
        .map(|l| format!("{l}\n"))
        .collect();
    let trace = w.write("cut.jsonl", &cut);
    let out = pensieve(&[
        "decode",
        "--scorer",
        "trace",
        "--trace",
        &trace,
        "--prompt",
        "",
        "--out",
        &w.s("d"),
    ]);
    assert_eq!(code(&out), 4);
    let err = stderr(&out);
    assert!(err.contains("step 1") && err.contains("knn3"), "{err}");

    let bad = w.write(
        "bad.jsonl",
        "{\"image_id\":\"a\",\"question\":\"q\",\"gold\":\"maybe\",\"prediction\":\"yes\"}\n",
    );
    assert_eq!(
        code(&pensieve(&["eval", "--metric", "pope", "--input", &bad])),
        4
    );

    let three = w.write(
        "three.jsonl",
        &(0..3)
            .map(|i| {
                format!(r#"{{"image_id":"a","question":"q{i}","gold":"yes","prediction":"yes"}}"#)
            })
            .collect::<Vec<_>>()
            .join("\n"),
    );
    assert_eq!(
        code(&pensieve(&["eval", "--metric", "mme", "--input", &three])),
        4
    );

    let cfg = w.write("cfg.toml", "beta_x = 1.0\n");
    let out = pensieve(&[
        "decode",
        "--scorer",
        "trace",
        "--trace",
        &fixture(),
        "--config",
        &cfg,
        "--prompt",
        "",
        "--out",
        &w.s("d"),
    ]);
    assert_eq!(code(&out), 4);

    let dup = w.write("dup.jsonl", &format!("{}\n{}", records(1), records(1)));
    assert_eq!(
        code(&pensieve(&[
            "index",
            "build",
            "--records",
            &dup,
            "--out",
            &w.s("i")
        ])),
        4
    );
}

#[test]
fn decode_writes_outputs_and_manifest() {
    let w = Work::new();
    let out = pensieve(&[
        "decode",
        "--scorer",
        "trace",
        "--trace",
        &fixture(),
        "--prompt",
        "",
        "--out",
        &w.s("d"),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert_eq!(stdout(&out).trim(), "gray frog");
    assert_eq!(
        fs::read_to_string(w.path("d/tokens.txt")).unwrap(),
        "_gray\n_frog\n</s>\n"
    );
    let csv = fs::read_to_string(w.path("d/breakdown.csv")).unwrap();
    assert!(csv.starts_with("step,candidate,base,txt,img,knn_1,knn_2,knn_3,knn_4,knn_mean,"));
    assert!(!csv.contains('\r'));

    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(w.path("d/manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "decode");
    assert_eq!(manifest["seed"], 0);
    assert_eq!(manifest["inputs"][0]["sha256"].as_str().unwrap().len(), 64);
    assert_eq!(manifest["outputs"].as_array().unwrap().len(), 2);
    assert!(manifest["config"].as_str().unwrap().contains("m = 50"));
}

#[test]
fn baseline_matches_contrast_when_visuals_agree() {
    let w = Work::new();
    let mut lines = vec![
        r#"{"vocabulary":["_a","_b","_c","</s>"],"fill":{"rule":"min_minus","offset":10.0}}"#
            .to_string(),
    ];
    let rows = [
        [1.0, 3.0, 2.0, 0.0],
        [2.5, 0.5, 1.0, 0.0],
        [0.0, 0.0, 0.5, 4.0],
    ];
    for (step, row) in rows.iter().enumerate() {
        for id in ["test", "diffused", "knn1", "knn2", "knn3", "knn4"] {
            lines.push(format!(
                r#"{{"visual_id":"{id}","step":{step},"scores":{{"_a":{},"_b":{},"_c":{},"</s>":{}}}}}"#,
                row[0], row[1], row[2], row[3]
            ));
        }
    }
    let trace = w.write("same.jsonl", &lines.join("\n"));
    let run = |extra: &[&str], dir: &str| {
        let mut args = vec![
            "decode", "--scorer", "trace", "--trace", &trace, "--prompt", "", "--out",
        ];
        let out_dir = w.s(dir);
        args.push(&out_dir);
        args.extend_from_slice(extra);
        let out = pensieve(&args);
        assert_eq!(code(&out), 0, "{}", stderr(&out));
        fs::read_to_string(w.path(dir).join("tokens.txt")).unwrap()
    };
    let plain = run(&[], "p");
    assert_eq!(plain, "_b\n_a\n</s>\n");
    assert_eq!(run(&["--baseline"], "b"), plain);
    assert_eq!(run(&["--jsd-threshold", "inf"], "g"), plain);
}

#[test]
fn analyze_keeps_top_rows_per_step() {
    let w = Work::new();
    pensieve(&[
        "decode",
        "--scorer",
        "trace",
        "--trace",
        &fixture(),
        "--prompt",
        "",
        "--out",
        &w.s("d"),
    ]);
    let out = pensieve(&[
        "analyze",
        "--breakdown",
        &w.s("d/breakdown.csv"),
        "--top",
        "8",
        "--out",
        &w.s("a"),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let md = fs::read_to_string(w.path("a/report.md")).unwrap();
    for step in 0..3 {
        let rows = md
            .lines()
            .filter(|l| l.starts_with(&format!("| {step} |")))
            .count();
        assert_eq!(rows, 8, "step {step}");
    }
    assert!(md.contains("| 0 | **_gray** | 13.297 | 8.289 | +5.008 |"));
    assert!(w.path("a/report.csv").exists() && w.path("a/manifest.json").exists());
    assert!(!stdout(&out).contains('\x1b'));
}

#[test]
fn diffuse_is_seeded() {
    let w = Work::new();
    let t = w.write("t.json", r#"{"shape":[2,3],"values":[1,2,3,4,5,6]}"#);
    for name in ["a.json", "b.json"] {
        let out = pensieve(&[
            "diffuse",
            "--input",
            &t,
            "--t",
            "250",
            "--seed",
            "9",
            "--out",
            &w.s(name),
        ]);
        assert_eq!(code(&out), 0, "{}", stderr(&out));
    }
    let a = fs::read_to_string(w.path("a.json")).unwrap();
    assert_eq!(a, fs::read_to_string(w.path("b.json")).unwrap());
    let v: serde_json::Value = serde_json::from_str(&a).unwrap();
    assert_eq!(v["shape"], serde_json::json!([2, 3]));
    assert!(w.path("a.json.manifest.json").exists());
}

#[test]
fn eval_reports() {
    let w = Work::new();
    let perfect: Vec<String> = (0..4)
        .flat_map(|i| {
            [
                format!(r#"{{"image_id":"i{i}","question":"Is there a cat?","gold":"yes","prediction":"Yes"}}"#),
                format!(r#"{{"image_id":"i{i}","question":"Is there a dog?","gold":"no","prediction":"No, there is not."}}"#),
            ]
        })
        .collect();
    let input = w.write("p.jsonl", &perfect.join("\n"));
    let out = pensieve(&[
        "eval",
        "--metric",
        "mme",
        "--input",
        &input,
        "--out",
        &w.s("e"),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(w.path("e/report.json")).unwrap()).unwrap();
    assert_eq!(report["combined"], 200.0);

    let out = pensieve(&["eval", "--metric", "pope", "--input", &input]);
    assert_eq!(code(&out), 0);
    assert!(stdout(&out).contains("| f1 | 1.0000 |"), "{}", stdout(&out));
}

#[test]
fn help_documents_config_schema() {
    let out = pensieve(&["decode", "--help"]);
    assert_eq!(code(&out), 0);
    let text = stdout(&out);
    for key in [
        "alpha_tau",
        "beta_d",
        "beta_nn",
        "jsd_threshold",
        "diffusion_step",
        "eos_token",
    ] {
        assert!(text.contains(key), "missing {key}");
    }
}
