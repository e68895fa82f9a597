use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use biasmeta::measures::read_scores;
use biasmeta::MeasureKind;

const BIN: &str = env!("CARGO_BIN_EXE_biasmeta");

const SMALL: &str = "\
n = 120
dev_fraction = 0.1
rates = 0,0.5,1
max_vocab = 400
d_model = 16
heads = 2
d_ff = 32
max_len = 48
pretrain_epochs = 1
finetune_epochs = 1
";

struct Fixture {
    _dir: tempfile::TempDir,
    root: PathBuf,
}

impl Fixture {
    fn new(extra: &str) -> Self {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_path_buf();
        let corpus = Path::new(env!("CARGO_MANIFEST_DIR")).join("data/demo_corpus.txt");
        fs::copy(corpus, root.join("corpus.txt")).unwrap();
        fs::write(root.join("small.conf"), format!("{SMALL}{extra}")).unwrap();
        Self { _dir: dir, root }
    }

    fn run(&self, out: &str, args: &[&str]) -> Output {
        Command::new(BIN)
            .current_dir(&self.root)
            .args(["--config", "small.conf", "--corpus", "corpus.txt", "--out", out])
            .args(args)
            .env_remove("BIASMETA_SEED")
            .output()
            .unwrap()
    }

    fn ok(&self, out: &str, args: &[&str]) -> String {
        let o = self.run(out, args);
        assert!(
            o.status.success(),
            "{args:?} failed: {}",
            String::from_utf8_lossy(&o.stderr)
        );
        String::from_utf8(o.stdout).unwrap()
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }
}

fn bare(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().unwrap()
}

#[test]
fn usage_errors_exit_with_two() {
    assert_eq!(bare(&["--help"]).status.code(), Some(0));
    assert_eq!(bare(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(bare(&["sample", "--r", "1.5", "--out", "x"]).status.code(), Some(2));
    assert_eq!(bare(&["mine", "--rates", "0,abc", "--out", "x"]).status.code(), Some(2));
    assert_eq!(bare(&["mine", "--backend", "gpu", "--out", "x"]).status.code(), Some(2));
    let no_out = Command::new(BIN).arg("mine").env_remove("BIASMETA_OUT").output().unwrap();
    assert_eq!(no_out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&no_out.stderr).contains("--out"));
}

#[test]
fn environment_variables_feed_the_configuration() {
    let o = Command::new(BIN)
        .arg("config")
        .env("BIASMETA_SEED", "99")
        .env("BIASMETA_RATES", "0:0.5:1")
        .output()
        .unwrap();
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.contains("seed = 99\n") && text.contains("rates = 0,0.5,1\n"), "{text}");
}

#[test]
fn runtime_failures_exit_with_one() {
    let fx = Fixture::new("");
    let o = fx.run("run", &["--n", "5000", "mine"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("side has 880 < 5500 sentences"));

    let o = fx.run("run2", &["pretrain"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("biasmeta mine"));
}

#[test]
fn config_is_fixed_per_run_directory() {
    let fx = Fixture::new("");
    fx.ok("run", &["mine"]);
    let o = fx.run("run", &["--seed", "5", "mine"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("configuration differs"));
}

#[test]
fn edited_artifact_is_reported_as_stale() {
    let fx = Fixture::new("");
    fx.ok("run", &["mine"]);
    fx.ok("run", &["sample"]);
    let train = fx.path("run/mine/train.jsonl");
    let mut text = fs::read_to_string(&train).unwrap();
    text = text.replacen("\"text\":\"", "\"text\":\"edited ", 1);
    fs::write(&train, text).unwrap();

    let o = fx.run("run", &["pretrain"]);
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("stale artifact mine/train.jsonl"), "{err}");
    assert!(err.contains("re-run `biasmeta mine`"), "{err}");

    fx.ok("run", &["mine"]);
    fx.ok("run", &["pretrain"]);
}

#[test]
fn single_rate_sample_is_printed() {
    let fx = Fixture::new("");
    fx.ok("run", &["mine"]);
    let out = fx.ok("run", &["sample", "--r", "0.25"]);
    let ds: serde_json::Value = serde_json::from_str(out.trim()).unwrap();
    assert_eq!(ds["male_ids"].as_array().unwrap().len(), 30);
    assert_eq!(ds["female_ids"].as_array().unwrap().len(), 90);
}

#[test]
fn pipeline_is_idempotent_and_dump_matches_direct_scoring() {
    let fx = Fixture::new("");
    let first = fx.ok("direct", &["run"]);
    assert!(first.contains("Correlation with the rate of bias r"));
    let report = fs::read(fx.path("direct/report/SHA256SUMS")).unwrap();
    let table = fs::read(fx.path("direct/metaeval/table.txt")).unwrap();
    let again = fx.run("direct", &["metaeval"]);
    assert!(again.status.success());
    assert!(String::from_utf8_lossy(&again.stderr).contains("metaeval: up to date"));
    assert_eq!(fs::read(fx.path("direct/metaeval/table.txt")).unwrap(), table);
    fx.ok("direct", &["report"]);
    assert_eq!(fs::read(fx.path("direct/report/SHA256SUMS")).unwrap(), report);

    // Same configuration but scored through request and response files.
    let dump = Fixture {
        _dir: tempfile::tempdir().unwrap(),
        root: fx.root.clone(),
    };
    fs::write(dump.path("dump.conf"), format!("{SMALL}backend = dump\n")).unwrap();
    let run = |args: &[&str]| {
        let o = Command::new(BIN)
            .current_dir(&dump.root)
            .args(["--config", "dump.conf", "--corpus", "corpus.txt", "--out", "dump"])
            .args(args)
            .output()
            .unwrap();
        assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    };
    for stage in ["mine", "sample", "pretrain", "finetune-sweep", "emit-requests"] {
        run(&[stage]);
    }
    for key in ["r0.000", "r0.500", "r1.000"] {
        let file = format!("{key}.responses.jsonl");
        run(&["answer", "--model", key, "--output", &file]);
        run(&["ingest-responses", "--model", key, "--responses", &file]);
    }
    run(&["measure"]);
    run(&["metaeval"]);
    run(&["probe"]);
    run(&["report"]);

    let load = |p: &str| read_scores(std::io::BufReader::new(fs::File::open(fx.path(p)).unwrap())).unwrap();
    let direct: Vec<_> = load("direct/measure/scores.jsonl").into_iter().filter(|s| s.r.is_some()).collect();
    let dumped = load("dump/measure/scores.jsonl");
    assert_eq!(direct.len(), dumped.len());
    for (a, b) in direct.iter().zip(&dumped) {
        assert_eq!((a.measure, a.r), (b.measure, b.r));
        if a.measure != MeasureKind::Tbs || a.n_items == b.n_items {
            assert_eq!(a.value, b.value, "{:?} at r={:?}", a.measure, a.r);
        }
    }
    let agg = |p: &str| fs::read_to_string(fx.path(p)).unwrap();
    let direct_means: Vec<String> = agg("direct/probe/aggregate.csv")
        .lines()
        .skip(2)
        .map(|l| l.split(',').skip(3).collect::<Vec<_>>().join(","))
        .collect();
    let dump_means: Vec<String> = agg("dump/probe/aggregate.csv")
        .lines()
        .skip(1)
        .map(|l| l.split(',').skip(3).collect::<Vec<_>>().join(","))
        .collect();
    assert_eq!(direct_means, dump_means);
}

#[test]
fn corrupt_responses_are_rejected() {
    let fx = Fixture::new("backend = dump\n");
    fx.ok("run", &["mine"]);
    fx.ok("run", &["emit-requests"]);
    let requests = fs::read_to_string(fx.path("run/requests/requests.jsonl")).unwrap();
    let first: serde_json::Value = serde_json::from_str(requests.lines().next().unwrap()).unwrap();
    let id = first["id"].as_u64().unwrap();
    fs::write(
        fx.path("partial.jsonl"),
        format!("{{\"id\":{id},\"logprobs\":{{}},\"attention\":[],\"backend\":\"x\"}}\n"),
    )
    .unwrap();
    let o = fx.run("run", &["ingest-responses", "--model", "r0.5", "--responses", "partial.jsonl"]);
    assert_eq!(o.status.code(), Some(1));
    let o = fx.run("run", &["measure"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("no responses ingested"));
}
