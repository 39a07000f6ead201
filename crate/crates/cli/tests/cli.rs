use std::path::Path;
use std::process::{Command, Output};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use sae_embed::formats::{read_activations, save_activations};
use sae_embed::{ActivationKind, DocActivations, SaeWeights};

fn sae(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sae-embed"))
        .current_dir(dir)
        .env_remove("SAE_EMBED_API_KEY")
        .args(args)
        .output()
        .unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = sae(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn report(path: impl AsRef<Path>) -> Value {
    serde_json::from_slice(&std::fs::read(path).unwrap()).unwrap()
}

fn synth(dir: &Path, plants: Value) {
    let spec = json!({"n_docs": 500, "d_sae": 300, "background_rate": 0.02, "seed": 11, "plants": plants});
    std::fs::write(dir.join("spec.json"), spec.to_string()).unwrap();
    ok(dir, &["synth", "--spec", "spec.json", "--out", "s"]);
}

#[test]
fn help_lists_flags() {
    let dir = tempfile::tempdir().unwrap();
    let top = ok(dir.path(), &["--help"]);
    for word in [
        "embed",
        "diff",
        "corr",
        "cluster",
        "retrieve",
        "synth",
        "eval",
        "bench-cooc",
        "--mock",
        "--seed",
    ] {
        assert!(top.contains(word), "top-level help lacks {word}");
    }
    let corr = ok(dir.path(), &["corr", "--help"]);
    for flag in [
        "--activations",
        "--catalog",
        "--preset",
        "--npmi-min",
        "--sim-max",
        "--min-freq",
    ] {
        assert!(corr.contains(flag), "corr help lacks {flag}");
    }
}

#[test]
fn synth_then_corr_surfaces_planted_pair() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    synth(
        d,
        json!([{"type": "pair", "i": 40, "j": 41, "joint_rate": 0.05, "label_sim": 0.0}]),
    );
    ok(
        d,
        &[
            "corr",
            "--activations",
            "s/main.saea",
            "--catalog",
            "s/catalog.jsonl",
            "--preset",
            "injection",
            "--out",
            "s",
        ],
    );
    let r = report(d.join("s/corr.json"));
    assert_eq!(r["command"], "corr");
    let pairs = r["result"]["pairs"].as_array().unwrap();
    assert!(pairs.iter().any(|p| p["i"] == 40 && p["j"] == 41), "{pairs:?}");
    assert!(d.join("s/corr.meta.json").exists());
}

#[test]
fn retrieve_planted_queries_perfect() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    synth(d, json!([{"type": "relevance", "latent": 100, "n_relevant": 30}]));
    ok(
        d,
        &[
            "retrieve",
            "--activations",
            "s/main.saea",
            "--catalog",
            "s/catalog.jsonl",
            "--queries",
            "s/queries.jsonl",
            "--qrels",
            "s/qrels.jsonl",
            "--temperature",
            "0.05",
            "--out",
            "s",
        ],
    );
    let r = report(d.join("s/retrieve.json"));
    assert_eq!(r["result"]["metrics"]["map"], 1.0);
    ok(
        d,
        &[
            "eval",
            "--rankings",
            "s/retrieve.json",
            "--qrels",
            "s/qrels.jsonl",
            "--truth",
            "s/truth.json",
            "--out",
            "s",
        ],
    );
    let e = report(d.join("s/eval.json"));
    assert_eq!(e["result"]["retrieval"]["per_file"][0][1]["map"], 1.0);
    assert_eq!(e["result"]["recovery"]["map"], 1.0);
}

#[test]
fn cluster_more_clusters_than_docs_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    synth(d, json!([]));
    let out = sae(
        d,
        &[
            "cluster",
            "--activations",
            "s/main.saea",
            "--k-clusters",
            "5000",
            "--out",
            "c",
        ],
    );
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    synth(d, json!([{"type": "diff", "latent": 3, "rate_a": 0.5, "rate_b": 0.1}]));
    let args = [
        "diff",
        "--activations",
        "s/A.saea",
        "s/B.saea",
        "--catalog",
        "s/catalog.jsonl",
        "--out",
        "s",
    ];
    ok(d, &args);
    let first = std::fs::read(d.join("s/diff.json")).unwrap();
    ok(d, &args);
    assert_eq!(first, std::fs::read(d.join("s/diff.json")).unwrap());
    assert_eq!(report(d.join("s/diff.json"))["result"]["entries"][0]["latent_id"], 3);
}

#[test]
fn config_file_values_apply_and_flags_win() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    synth(d, json!([]));
    std::fs::write(
        d.join("c.toml"),
        "out = \"from-file\"\n[corr]\nnpmi_min = 0.95\nmin_freq = 0.01\n",
    )
    .unwrap();
    let base = [
        "--config",
        "c.toml",
        "corr",
        "--activations",
        "s/main.saea",
        "--catalog",
        "s/catalog.jsonl",
    ];
    ok(d, &base);
    let r = report(d.join("from-file/corr.json"));
    assert_eq!(r["config"]["corr"]["npmi_min"], 0.95);
    let mut flagged = base.to_vec();
    flagged.extend(["--npmi-min", "0.7", "--out", "flags"]);
    ok(d, &flagged);
    let r = report(d.join("flags/corr.json"));
    assert_eq!(r["config"]["corr"]["npmi_min"], 0.7);
    assert_eq!(r["config"]["corr"]["min_freq"], 0.01);
}

#[test]
fn truncated_activations_exit_2_with_offset() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    synth(d, json!([]));
    let bytes = std::fs::read(d.join("s/main.saea")).unwrap();
    std::fs::write(d.join("cut.saea"), &bytes[..bytes.len() / 2]).unwrap();
    let out = sae(d, &["embed", "--activations", "cut.saea", "--out", "e"]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("byte"), "{err}");
}

#[test]
fn usage_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(sae(d, &["corr", "--no-such-flag"]).status.code(), Some(2));
    assert_eq!(
        sae(d, &["embed", "--activations", "missing.saea"]).status.code(),
        Some(2)
    );
    std::fs::write(d.join("bad.toml"), "sede = 1\n").unwrap();
    assert_eq!(
        sae(d, &["--config", "bad.toml", "bench-cooc", "--n-docs", "10"])
            .status
            .code(),
        Some(2)
    );
}

#[test]
fn gateway_needs_provider_or_mock() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    synth(d, json!([]));
    let args = [
        "cluster",
        "--activations",
        "s/main.saea",
        "--catalog",
        "s/catalog.jsonl",
        "--k-clusters",
        "2",
        "--keyphrase",
        "tone",
    ];
    let out = sae(d, &args);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--mock"));

    std::fs::write(
        d.join("gw.toml"),
        "[gateway.provider]\nendpoint = \"http://127.0.0.1:1\"\nmodel = \"m\"\nretries = 0\ntimeout_s = 2\n",
    )
    .unwrap();
    let mut with_config = vec!["--config", "gw.toml"];
    with_config.extend(args);
    let out = sae(d, &with_config);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));

    let mut mocked = args.to_vec();
    mocked.push("--mock");
    ok(d, &mocked);
}

#[test]
fn embed_routes_agree() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (d_model, d_sae) = (6, 40);
    let mut v = |n: usize, lo: f32, hi: f32| (0..n).map(|_| rng.random_range(lo..hi)).collect::<Vec<_>>();
    let w = SaeWeights::new(
        d_model,
        d_sae,
        v(d_model * d_sae, -1.0, 1.0),
        v(d_sae, -0.2, 0.2),
        v(d_model * d_sae, -1.0, 1.0),
        v(d_model, -1.0, 1.0),
        ActivationKind::Topk { k: 5 },
    )
    .unwrap();
    w.save(d.join("w.sae")).unwrap();

    let mut hidden = String::new();
    let mut docs = Vec::new();
    for doc in 0..20 {
        let tokens: Vec<Vec<f32>> = (0..1 + doc % 4).map(|_| v(d_model, -1.0, 1.0)).collect();
        hidden += &format!("{}\n", json!({"id": format!("doc{doc}"), "tokens": tokens}));
        docs.push(DocActivations {
            doc_id: format!("doc{doc}"),
            tokens: tokens
                .iter()
                .enumerate()
                .map(|(t, x)| w.encode_token(t as u32, x).unwrap())
                .collect(),
        });
    }
    std::fs::write(d.join("hidden.jsonl"), hidden).unwrap();
    save_activations(d.join("acts.saea"), d_sae as u32, &docs).unwrap();

    ok(d, &["embed", "--activations", "acts.saea", "--out", "a"]);
    ok(
        d,
        &["embed", "--hidden", "hidden.jsonl", "--weights", "w.sae", "--out", "h"],
    );
    assert_eq!(
        std::fs::read(d.join("a/embeddings.saea")).unwrap(),
        std::fs::read(d.join("h/embeddings.saea")).unwrap()
    );
    assert_eq!(read_activations(d.join("h/activations.saea")).unwrap(), docs);
    assert_eq!(report(d.join("h/embed.json"))["result"]["n_docs"], 20);
}
