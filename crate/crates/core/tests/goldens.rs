//! Golden-output pinning for the composite forward passes.
//!
//! The golden file was produced by `regenerate_goldens` (run with
//! `cargo test -p topicpath-core --test goldens -- --ignored`) after the
//! implementation had been verified against the independent oracles in
//! `op_gradients.rs`; these tests freeze that verified behavior.

use std::collections::BTreeMap;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use topicpath_core::corpus::{generate_corpus, tokenize, CorpusConfig, Vocabulary};
use topicpath_core::idgraph::{build_graph, collect_topic_stats, InterGraph};
use topicpath_core::model::{AttnDivisor, ModelConfig, ModelContext, Session};
use topicpath_core::taxonomy::{fixture_taxonomy, LevelSet, ROOT_ID};
use topicpath_core::tensor::{positional_encoding, Tensor};

#[derive(Serialize, Deserialize)]
struct Golden {
    shape: Vec<usize>,
    data: Vec<f64>,
}

type GoldenFile = BTreeMap<String, Golden>;

fn golden_path() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/goldens.json")
}

struct Setup {
    taxonomy: topicpath_core::taxonomy::DisciplineTaxonomy,
    graph: InterGraph,
    vocab: Vocabulary,
    tokens: topicpath_core::corpus::TokenizedProposal,
    cfg: ModelConfig,
}

/// Fixed-seed micro configuration: |T| = 4, |d| = 8, h = 16, two encoder
/// and two fusion layers.
fn setup() -> Setup {
    let taxonomy = fixture_taxonomy();
    let corpus_cfg = CorpusConfig {
        seed: 2024,
        size: 6,
        doc_len: 8,
        ..CorpusConfig::default()
    };
    let corpus = generate_corpus(&taxonomy, &corpus_cfg).unwrap();
    let vocab = Vocabulary::build(&corpus);
    let stats = collect_topic_stats(&corpus, &taxonomy).unwrap();
    let graph = build_graph(&stats, &taxonomy, 0.1, 0.1).unwrap();
    let cfg = ModelConfig {
        hidden: 16,
        sie_layers: 2,
        if_layers: 2,
        gcn_hops: 1,
        heads: 2,
        doc_len: 8,
        vocab_size: vocab.size(),
        dropout: 0.0,
        threshold: 0.5,
        attn_divisor: AttnDivisor::HeadCount,
    };
    let tokens = tokenize(&corpus[0], &vocab, cfg.doc_len);
    Setup {
        taxonomy,
        graph,
        vocab,
        tokens,
        cfg,
    }
}

fn compute_all() -> GoldenFile {
    let s = setup();
    let _ = &s.vocab;
    let ctx = ModelContext::new(s.cfg.clone(), &s.taxonomy, &s.graph).unwrap();
    let store = ctx.init_params(41);
    let session = Session::eval(&store);

    let mut out = GoldenFile::new();
    let put = |map: &mut GoldenFile, name: &str, t: &Tensor| {
        map.insert(
            name.to_string(),
            Golden {
                shape: t.shape().to_vec(),
                data: t.data().to_vec(),
            },
        );
    };

    let documents = ctx.sie_forward(&session, &s.tokens).unwrap();
    put(&mut out, "sie_documents", &documents);

    let level1: Vec<_> = s.taxonomy.level_nodes(1).to_vec();
    let history = vec![
        LevelSet::labels_only([ROOT_ID]),
        LevelSet::labels_only(level1),
    ];
    let knowledge = ctx.ike_forward(&session, &history).unwrap();
    put(&mut out, "ike_history", &knowledge);

    let (fusion, _) = ctx.if_forward(&session, &knowledge, &documents).unwrap();
    put(&mut out, "if_fusion", &fusion);

    let probs = ctx.lp_forward(&session, &fusion, 2).unwrap();
    put(&mut out, "lp_level2_probs", &probs);

    put(&mut out, "positional_8x16", &positional_encoding(8, 16).unwrap());
    out
}

#[test]
#[ignore = "writes tests/fixtures/goldens.json from the current build"]
fn regenerate_goldens() {
    let file = compute_all();
    let path = golden_path();
    std::fs::create_dir_all(path.parent().unwrap()).unwrap();
    std::fs::write(&path, serde_json::to_string_pretty(&file).unwrap()).unwrap();
    println!("wrote {}", path.display());
}

#[test]
fn forward_passes_match_goldens() {
    let path = golden_path();
    let text = std::fs::read_to_string(&path)
        .unwrap_or_else(|_| panic!("{} missing; run the regenerator", path.display()));
    let expected: GoldenFile = serde_json::from_str(&text).unwrap();
    let actual = compute_all();
    assert_eq!(
        expected.keys().collect::<Vec<_>>(),
        actual.keys().collect::<Vec<_>>()
    );
    for (name, exp) in &expected {
        let act = &actual[name];
        assert_eq!(exp.shape, act.shape, "{name} shape");
        assert_eq!(exp.data.len(), act.data.len(), "{name} length");
        for (i, (a, b)) in exp.data.iter().zip(&act.data).enumerate() {
            assert!(
                (a - b).abs() <= 1e-12,
                "{name}[{i}]: golden {a} vs current {b}"
            );
        }
    }
}
