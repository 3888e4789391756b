use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use latemine::learn::{write_model, Model, TrainHyper};
use latemine::repr::ParamSet;
use latemine::store::{side_info_id, MemoryStore, Store, UtteranceRecord, REJECT_DESCRIPTION_ID};
use latemine::synth::{synth_separable, SynthSpec};
use latemine::{Corpus, EngineConfig, MentionStrategy, ModelFamily, Rejection, TokenSpan, Utterance};
use sha2::{Digest, Sha256};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_latemine"));
    c.env("LATEMINE_THREADS", "2");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap_or(-1)
}

fn hash(path: &Path) -> Vec<u8> {
    Sha256::digest(std::fs::read(path).unwrap()).to_vec()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Fixture {
    _dir: tempfile::TempDir,
    root: PathBuf,
}

impl Fixture {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_path_buf();
        Self { _dir: dir, root }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    fn write(&self, name: &str, content: &str) -> PathBuf {
        let p = self.path(name);
        std::fs::write(&p, content).unwrap();
        p
    }
}

const CATALOG: &str = r#"[
 {"id":"P306","name":"operating system","aliases":["OS","supported OS"],"description":"operating system (OS) on which a software works or the OS installed on hardware","head_type_name":"software","tail_type_name":"operating system"},
 {"id":"P36","name":"capital","description":"seat of government of a country"},
 {"id":"P19","name":"place of birth","description":"most specific known birth location of a person"}
]"#;

fn corpus_text() -> String {
    let lines = [
        r#"{"id":"u1","tokens":["Cliqz","supports","the","macOS","operating","system","."],"head":[0,0],"tail":[3,3],"type":"P306"}"#,
        r#"{"id":"u2","tokens":["Berlin","is","the","capital","of","Germany","."],"head":[5,5],"tail":[0,0],"type":"P36"}"#,
        r#"{"id":"u3","tokens":["Ada","was","born","in","London","."],"head":[0,0],"tail":[4,4],"type":"P19"}"#,
        r#"{"id":"u3","tokens":["Ada","was","born","in","London","."],"head":[4,4],"tail":[0,0]}"#,
    ];
    lines.join("\n") + "\n"
}

#[test]
fn encode_is_idempotent_and_validates() {
    let f = Fixture::new();
    let corpus = f.write("c.jsonl", &corpus_text());
    let catalog = f.write("cat.json", CATALOG);
    let (a, b) = (f.path("a.lmstore"), f.path("b.lmstore"));
    for out in [&a, &b] {
        let o = run(&["encode", "--corpus", s(&corpus), "--catalog", s(&catalog), "--out", s(out), "--dim", "16", "--seed", "7"]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    }
    assert_eq!(hash(&a), hash(&b));
    let store = Store::open(&a).unwrap();
    assert_eq!(store.utterance_count(), 3);
    assert_eq!(store.meta().collect::<Vec<_>>(), vec!["embedder=toy;seed=7"]);
    assert!(store.get(&side_info_id("P306", "alias1")).is_ok());
    assert!(store.get(&side_info_id("P36", "head_type")).is_err());

    let o = run(&["encode", "--corpus", s(&corpus), "--catalog", s(&catalog), "--out", s(&f.path("z")), "--dim", "0"]);
    assert_eq!(code(&o), 2);

    let bad = f.write("bad.jsonl", &corpus_text().replace("\"head\":[5,5]", "\"head\":[5,9]"));
    let o = run(&["encode", "--corpus", s(&bad), "--catalog", s(&catalog), "--out", s(&f.path("z")), "--dim", "8"]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 2"));
}

#[test]
fn import_reads_vectors_next_to_the_corpus() {
    let f = Fixture::new();
    let corpus = f.write("data.jsonl", &corpus_text());
    let catalog = f.write("cat.json", CATALOG);
    let exported = f.path("data.lmstore");
    let o = run(&["encode", "--corpus", s(&corpus), "--catalog", s(&catalog), "--out", s(&exported), "--dim", "8"]);
    assert_eq!(code(&o), 0);
    let out = f.path("imported.lmstore");
    let o = run(&["encode", "--corpus", s(&corpus), "--catalog", s(&catalog), "--out", s(&out), "--embedder", "import"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let (a, b) = (Store::open(&exported).unwrap(), Store::open(&out).unwrap());
    assert_eq!(a.get("u1").unwrap(), b.get("u1").unwrap());
    let o = run(&[
        "encode", "--corpus", s(&corpus), "--catalog", s(&catalog), "--out", s(&f.path("x")), "--embedder", "import",
        "--dim", "4",
    ]);
    assert_eq!(code(&o), 3);
}

fn synth_files(f: &Fixture, n_types: usize, n_per_type: usize, dim: usize) -> (PathBuf, PathBuf, PathBuf) {
    let data = synth_separable(SynthSpec::new(n_types, n_per_type, dim, 5)).unwrap();
    let (corpus, catalog, store) = (f.path("s.jsonl"), f.path("s.json"), f.path("s.lmstore"));
    let mut buf = Vec::new();
    data.corpus.write_jsonl(&mut buf).unwrap();
    std::fs::write(&corpus, buf).unwrap();
    std::fs::write(&catalog, data.catalog.to_json().unwrap()).unwrap();
    data.store.write(&store).unwrap();
    (corpus, catalog, store)
}

#[test]
fn train_writes_parameters_and_trace() {
    let f = Fixture::new();
    let (corpus, catalog, store) = synth_files(&f, 6, 10, 12);
    let model = f.path("m.bin");
    let base = ["train", "--store", s(&store), "--corpus", s(&corpus), "--catalog", s(&catalog), "--model", "emma"];
    let o = bin()
        .args(base)
        .args(["--strategy", "projection", "--rejection", "prototypes", "--reject-count", "4", "--epochs", "2"])
        .args(["--out", s(&model)])
        .output()
        .unwrap();
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let m = latemine::learn::read_model(&model).unwrap();
    assert_eq!(m.params.reject_protos.as_ref().unwrap().shape(), (4, 12));
    let trace: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(f.path("m.bin.trace.json")).unwrap()).unwrap();
    assert_eq!(trace["epoch_losses"].as_array().unwrap().len(), 2);

    let o = bin()
        .args(base)
        .args(["--strategy", "first", "--rejection", "threshold", "--reject-count", "5", "--out", s(&model)])
        .output()
        .unwrap();
    assert_eq!(code(&o), 2);
    let o = bin().args(base).args(["--strategy", "sideways", "--out", s(&model)]).output().unwrap();
    assert_eq!(code(&o), 2);

    let zero = f.path("zero.bin");
    let o = bin()
        .args(base)
        .args(["--strategy", "projection", "--rejection", "threshold", "--lr", "0", "--out", s(&zero)])
        .output()
        .unwrap();
    assert_eq!(code(&o), 0);
    let m = latemine::learn::read_model(&zero).unwrap();
    let mut init = ParamSet::init(&m.config);
    // weight decay is coupled to the learning rate, so nothing moves
    assert_eq!(m.params.w_fuse, init.w_fuse.take());
    assert_eq!(m.params.w_pair, init.w_pair.take());
    assert_eq!(m.params.u_thr, Some(0.5));
}

#[test]
fn eval_reports_and_checks_dimensions() {
    let f = Fixture::new();
    let (corpus, catalog, store) = synth_files(&f, 8, 6, 12);
    let model = f.path("m.bin");
    let o = run(&[
        "train", "--store", s(&store), "--corpus", s(&corpus), "--catalog", s(&catalog), "--model", "alignre",
        "--strategy", "mean", "--rejection", "none", "--epochs", "1", "--out", s(&model),
    ]);
    assert_eq!(code(&o), 0);
    let report = f.path("r.json");
    let o = run(&[
        "eval", "--model", s(&model), "--store", s(&store), "--corpus", s(&corpus), "--catalog", s(&catalog),
        "--unseen", "5", "--seeds", "1", "--passes", "retention", "--out", s(&report),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let table = String::from_utf8_lossy(&o.stdout);
    assert!(table.contains("macro F1 (retention)") && !table.contains("rejection accuracy"), "{table}");
    let r: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(r["cells"].as_array().unwrap().len(), 1);
    assert_eq!(r["cells"][0]["macro_f1_retention"]["std"], 0.0);

    let o = run(&[
        "eval", "--model", s(&model), "--store", s(&store), "--corpus", s(&corpus), "--catalog", s(&catalog),
        "--unseen", "5", "--seeds", "1", "--out", s(&report),
    ]);
    assert_eq!(code(&o), 2, "rejection pass without a mechanism");

    let other = f.path("other.bin");
    let cfg = EngineConfig::new(ModelFamily::AlignreMean, MentionStrategy::MeanPool, Rejection::None, 1, 7, 0).unwrap();
    write_model(&Model { params: ParamSet::init(&cfg), config: cfg, hyper: TrainHyper::default() }, &other).unwrap();
    let o = run(&[
        "eval", "--model", s(&other), "--store", s(&store), "--corpus", s(&corpus), "--catalog", s(&catalog),
        "--out", s(&report),
    ]);
    assert_eq!(code(&o), 3);
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains('7') && err.contains("12"), "{err}");
}

/// Hand-built store over the figure-one utterance: mentions point along
/// `e0`, the rejection sentence along `e0 + e1`.
fn figure_one(f: &Fixture) -> (PathBuf, PathBuf, PathBuf) {
    let dim = 4;
    let e = |k: usize| -> Vec<f32> { (0..dim).map(|i| (i == k) as u8 as f32).collect() };
    let tokens: Vec<String> =
        ["Cliqz", "supports", "the", "macOS", "operating", "system", "."].iter().map(|t| t.to_string()).collect();
    let utt = Utterance::new("u1", tokens);
    let inst = latemine::RelationInstance {
        utterance_id: "u1".into(),
        head: TokenSpan::single(0),
        tail: TokenSpan::single(3),
        gold_type: None,
    };
    let corpus = Corpus::new(vec![utt], vec![inst]).unwrap();
    let mut rows = Vec::new();
    for i in 0..7 {
        rows.extend(if i == 0 || i == 3 { e(0) } else { e(2) });
    }
    let mut store = MemoryStore::new(dim);
    store.insert(UtteranceRecord::new("u1", e(2), rows).unwrap()).unwrap();
    for field in ["name", "desc"] {
        store.insert(UtteranceRecord::vector(side_info_id("P306", field), e(0))).unwrap();
        store.insert(UtteranceRecord::vector(side_info_id("Q1", field), e(3))).unwrap();
    }
    store.insert(UtteranceRecord::vector(REJECT_DESCRIPTION_ID, vec![1.0, 1.0, 0.0, 0.0])).unwrap();
    let (cp, sp, mp) = (f.path("fig.jsonl"), f.path("fig.lmstore"), f.path("fig.bin"));
    let mut buf = Vec::new();
    corpus.write_jsonl(&mut buf).unwrap();
    std::fs::write(&cp, buf).unwrap();
    store.write(&sp).unwrap();
    let cfg =
        EngineConfig::new(ModelFamily::AlignreMean, MentionStrategy::MeanPool, Rejection::Description, 1, dim, 0).unwrap();
    write_model(&Model { params: ParamSet::init(&cfg), config: cfg, hyper: TrainHyper::default() }, &mp).unwrap();
    (cp, sp, mp)
}

fn mine_rows(path: &Path) -> Vec<serde_json::Value> {
    std::fs::read_to_string(path).unwrap().lines().map(|l| serde_json::from_str(l).unwrap()).collect()
}

#[test]
fn mining_finds_accepts_and_rejects() {
    let f = Fixture::new();
    let (corpus, store, model) = figure_one(&f);
    let before = hash(&store);
    let modified = std::fs::metadata(&store).unwrap().modified().unwrap();
    let os = f.write("os.json", r#"[{"id":"P306","name":"operating system","description":"operating system"}]"#);
    let out = f.path("os.jsonl");
    let o = run(&["mine", "--model", s(&model), "--store", s(&store), "--corpus", s(&corpus), "--types", s(&os), "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let rows = mine_rows(&out);
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0]["prediction"], "P306");
    assert_eq!(rows[0]["scores"].as_object().unwrap().len(), 2);

    let unrelated = f.write("q.json", r#"[{"id":"Q1","name":"unrelated","description":"unrelated"}]"#);
    let out2 = f.path("q.jsonl");
    let o = run(&["mine", "--model", s(&model), "--store", s(&store), "--corpus", s(&corpus), "--types", s(&unrelated), "--out", s(&out2)]);
    assert_eq!(code(&o), 0);
    let rows = mine_rows(&out2);
    assert!(rows.iter().all(|r| r["prediction"] == "REJECTED"));
    assert!((rows[0]["score"].as_f64().unwrap() - 0.5f64.sqrt()).abs() < 1e-6);

    let out3 = f.path("n.jsonl");
    let o = run(&[
        "mine", "--model", s(&model), "--store", s(&store), "--corpus", s(&corpus), "--types", s(&unrelated), "--out",
        s(&out3), "--no-reject",
    ]);
    assert_eq!(code(&o), 0);
    assert!(mine_rows(&out3).iter().all(|r| r["prediction"] == "Q1"));

    let empty = f.write("e.json", "[]");
    let o = run(&["mine", "--model", s(&model), "--store", s(&store), "--corpus", s(&corpus), "--types", s(&empty), "--out", s(&out3)]);
    assert_eq!(code(&o), 2);
    let unknown = f.write("u.json", r#"[{"id":"Z9","name":"new","description":"never exported"}]"#);
    let o = run(&["mine", "--model", s(&model), "--store", s(&store), "--corpus", s(&corpus), "--types", s(&unknown), "--out", s(&out3)]);
    assert_eq!(code(&o), 3);

    assert_eq!(hash(&store), before);
    assert_eq!(std::fs::metadata(&store).unwrap().modified().unwrap(), modified);
}

#[test]
fn mining_is_repeatable_and_ordered() {
    let f = Fixture::new();
    let corpus = f.write("c.jsonl", &corpus_text());
    let catalog = f.write("cat.json", CATALOG);
    let store = f.path("c.lmstore");
    assert_eq!(code(&run(&["encode", "--corpus", s(&corpus), "--catalog", s(&catalog), "--out", s(&store), "--dim", "8"])), 0);
    let model = f.path("m.bin");
    let o = run(&[
        "train", "--store", s(&store), "--corpus", s(&corpus), "--catalog", s(&catalog), "--model", "rematching",
        "--strategy", "max", "--rejection", "prototypes", "--epochs", "1", "--out", s(&model),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let query = f.write("q.json", r#"[{"id":"NEW1","name":"developer","description":"the organisation that develops a product"},{"id":"P36","name":"capital","description":"seat of government"}]"#);
    let (a, b) = (f.path("a.jsonl"), f.path("b.jsonl"));
    for (out, threads) in [(&a, "1"), (&b, "3")] {
        let o = bin()
            .env("LATEMINE_THREADS", threads)
            .args(["mine", "--model", s(&model), "--store", s(&store), "--corpus", s(&corpus), "--types", s(&query), "--out", s(out)])
            .output()
            .unwrap();
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    }
    assert_eq!(hash(&a), hash(&b));
    let rows = mine_rows(&a);
    assert_eq!(rows.iter().map(|r| r["instance"].as_u64().unwrap()).collect::<Vec<_>>(), vec![0, 1, 2, 3]);
    for r in &rows {
        assert_eq!(r["scores"].as_object().unwrap().len(), 2 + 5);
        assert_eq!(r["prediction"] == "REJECTED", r["prediction"].as_str().unwrap() != "NEW1" && r["prediction"] != "P36");
    }
}
