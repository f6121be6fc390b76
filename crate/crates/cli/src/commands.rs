//! Subcommand implementations.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde_json::{json, Value};

use topicpath_core::corpus::{
    generate_corpus, interdisciplinary_count, read_corpus, write_corpus, CorpusConfig, Proposal,
    Vocabulary, MAX_LINE_BYTES,
};
use topicpath_core::idgraph::{build_graph as build_idgraph, collect_topic_stats, read_graph, write_graph};
use topicpath_core::metrics::{
    distance_report, f1_report, level_distance, wrong_case_report, wrong_cases,
};
use topicpath_core::model::{
    gradcheck, ModelConfig, ModelContext, PredictOptions, Prediction,
};
use topicpath_core::taxonomy::{
    encode_topic_path, prefix_from_codes, DisciplineTaxonomy, TopicPath,
};
use topicpath_core::tensor::ParamStore;
use topicpath_core::trainer::{train as run_training, TrainConfig};

use crate::errors::CliError;
use crate::manifest::RunManifest;

pub fn gen_corpus(taxonomy: &Path, out: &Path, cfg: CorpusConfig) -> Result<(), CliError> {
    let started = Instant::now();
    let t = DisciplineTaxonomy::load(taxonomy)?;
    let corpus = generate_corpus(&t, &cfg)?;
    write_corpus(out, &corpus)?;
    let inter = interdisciplinary_count(&corpus);
    println!(
        "wrote {} proposals ({} interdisciplinary) to {}",
        corpus.len(),
        inter,
        out.display()
    );
    RunManifest::new("gen-corpus")
        .seed(cfg.seed)
        .config(&cfg)
        .input("taxonomy", taxonomy)
        .output(out)
        .write_next_to(out, started)
}

pub fn build_graph(
    corpus: &Path,
    taxonomy: &Path,
    alpha: f64,
    beta: f64,
    out: &Path,
) -> Result<(), CliError> {
    let started = Instant::now();
    let t = DisciplineTaxonomy::load(taxonomy)?;
    let proposals = read_corpus(corpus)?;
    let stats = collect_topic_stats(&proposals, &t)?;
    let graph = build_idgraph(&stats, &t, alpha, beta)?;
    write_graph(out, &graph, &t)?;
    println!(
        "wrote graph with {} nodes and {} edges to {}",
        graph.node_count(),
        graph.edge_count(),
        out.display()
    );
    RunManifest::new("build-graph")
        .config(&json!({"alpha": alpha, "beta": beta}))
        .input("corpus", corpus)
        .input("taxonomy", taxonomy)
        .output(out)
        .write_next_to(out, started)
}

fn load_json_config<T: serde::de::DeserializeOwned>(path: Option<&Path>) -> Result<Option<T>, CliError> {
    match path {
        None => Ok(None),
        Some(p) => {
            let text = std::fs::read_to_string(p)?;
            Ok(Some(serde_json::from_str(&text).map_err(|e| {
                CliError::Usage(format!("{}: {e}", p.display()))
            })?))
        }
    }
}

pub fn train(
    corpus_path: &Path,
    taxonomy_path: &Path,
    graph_path: &Path,
    model_config: Option<&Path>,
    train_config: Option<&Path>,
    out_dir: &Path,
) -> Result<(), CliError> {
    let started = Instant::now();
    let taxonomy = DisciplineTaxonomy::load(taxonomy_path)?;
    let corpus = read_corpus(corpus_path)?;
    let graph = read_graph(graph_path, &taxonomy)?;
    let mcfg: ModelConfig = load_json_config(model_config)?.unwrap_or_default();
    let tcfg: TrainConfig = load_json_config(train_config)?.unwrap_or_default();

    std::fs::create_dir_all(out_dir)?;
    let vocab = Vocabulary::build(&corpus);
    let outcome = run_training(&corpus, &taxonomy, &graph, &vocab, &mcfg, &tcfg, Some(out_dir))?;

    for eval in &outcome.log.evals {
        println!(
            "eval epoch={} step={} micro_f1={:.4} macro_f1={:.4}{}",
            eval.epoch,
            eval.step,
            eval.micro_f1,
            eval.macro_f1,
            if eval.improved { " *" } else { "" }
        );
    }
    match outcome.best_micro_f1 {
        Some(best) => println!("best validation micro_f1 {best:.4}"),
        None => println!("no evaluation ran (epochs or eval cadence too small)"),
    }

    // echo everything needed to reproduce and to run predict from the dir
    let resolved = ModelConfig {
        vocab_size: vocab.size(),
        ..mcfg.clone()
    };
    std::fs::write(
        out_dir.join("model_config.json"),
        serde_json::to_string_pretty(&resolved).expect("config serializes"),
    )?;
    std::fs::write(
        out_dir.join("train_config.json"),
        serde_json::to_string_pretty(&tcfg).expect("config serializes"),
    )?;
    std::fs::write(out_dir.join("vocab.json"), vocab.to_json())?;
    std::fs::write(out_dir.join("taxonomy.json"), taxonomy.to_json())?;
    std::fs::copy(graph_path, out_dir.join("graph.json"))?;
    std::fs::write(out_dir.join("train_log.jsonl"), outcome.log.to_jsonl())?;

    RunManifest::new("train")
        .seed(tcfg.seed)
        .config(&json!({"model": resolved, "train": tcfg}))
        .input("corpus", corpus_path)
        .input("taxonomy", taxonomy_path)
        .input("graph", graph_path)
        .output(&out_dir.join("checkpoint.bin"))
        .output(&out_dir.join("train_log.jsonl"))
        .write_next_to(out_dir, started)
}

pub struct PredictArgs {
    pub ckpt: PathBuf,
    pub input: PathBuf,
    pub taxonomy: Option<PathBuf>,
    pub graph: Option<PathBuf>,
    pub given: Option<String>,
    pub threshold: Option<f64>,
    pub coherence_filter: bool,
    pub dump_attention: bool,
    pub out: PathBuf,
}

fn run_dir_of(ckpt: &Path) -> (PathBuf, PathBuf) {
    if ckpt.is_dir() {
        (ckpt.join("checkpoint.bin"), ckpt.to_path_buf())
    } else {
        let dir = ckpt.parent().unwrap_or(Path::new(".")).to_path_buf();
        (ckpt.to_path_buf(), dir)
    }
}

fn prediction_line(p: &Proposal, prediction: &Prediction, t: &DisciplineTaxonomy, dump_attention: bool) -> Value {
    let path = prediction.path.to_code_sets(t);
    let probs: Vec<&Vec<f64>> = prediction.steps.iter().map(|s| &s.probs).collect();
    let mut line = json!({
        "id": p.id,
        "path": path,
        "probs": probs,
    });
    if dump_attention {
        let per_kind = |pick: fn(&topicpath_core::model::IfLayerTrace) -> &topicpath_core::tensor::AttnTrace| -> Value {
            prediction
                .steps
                .iter()
                .map(|step| {
                    step.traces
                        .iter()
                        .map(|trace| {
                            let a = pick(trace);
                            (0..a.rows).map(|i| a.row(i).to_vec()).collect::<Vec<_>>()
                        })
                        .collect::<Vec<_>>()
                })
                .collect::<Vec<_>>()
                .into()
        };
        line["attention"] = json!({
            "doc_type": per_kind(|tr| &tr.doc_type),
            "history": per_kind(|tr| &tr.history),
        });
    }
    line
}

pub fn predict(args: PredictArgs) -> Result<(), CliError> {
    let started = Instant::now();
    let (ckpt_file, run_dir) = run_dir_of(&args.ckpt);
    let taxonomy_path = args.taxonomy.clone().unwrap_or_else(|| run_dir.join("taxonomy.json"));
    let graph_path = args.graph.clone().unwrap_or_else(|| run_dir.join("graph.json"));

    let taxonomy = DisciplineTaxonomy::load(&taxonomy_path)?;
    let graph = read_graph(&graph_path, &taxonomy)?;
    let store = ParamStore::load(&ckpt_file)?;
    let vocab = Vocabulary::from_json(&std::fs::read_to_string(run_dir.join("vocab.json"))?)?;
    let cfg: ModelConfig = serde_json::from_str(&std::fs::read_to_string(
        run_dir.join("model_config.json"),
    )?)
    .map_err(|e| CliError::Data(format!("model_config.json: {e}")))?;
    let ctx = ModelContext::new(cfg, &taxonomy, &graph)?;

    let given: Option<TopicPath> = match &args.given {
        None => None,
        Some(spec) => {
            let codes: BTreeSet<String> = spec
                .split(',')
                .map(|c| c.trim().to_string())
                .filter(|c| !c.is_empty())
                .collect();
            for code in &codes {
                if taxonomy.get(code).is_none() {
                    return Err(CliError::Data(format!(
                        "incoherent --given: unknown code {code}"
                    )));
                }
            }
            Some(prefix_from_codes(&codes, &taxonomy)?)
        }
    };
    let opts = PredictOptions {
        coherence_filter: args.coherence_filter,
        threshold: args.threshold,
    };

    let proposals = read_corpus(&args.input)?;
    let mut writer = BufWriter::new(std::fs::File::create(&args.out)?);
    for p in &proposals {
        let tokens = topicpath_core::corpus::tokenize(p, &vocab, ctx.cfg.doc_len);
        let prediction = ctx.predict(&store, &tokens, given.as_ref(), &opts)?;
        let line = prediction_line(p, &prediction, &taxonomy, args.dump_attention).to_string();
        if line.len() > MAX_LINE_BYTES {
            return Err(CliError::Data(format!(
                "prediction line for {} exceeds {} bytes",
                p.id, MAX_LINE_BYTES
            )));
        }
        writeln!(writer, "{line}")?;
    }
    writer.flush()?;
    println!("wrote {} predictions to {}", proposals.len(), args.out.display());

    RunManifest::new("predict")
        .config(&json!({
            "given": args.given,
            "threshold": args.threshold,
            "coherence_filter": args.coherence_filter,
            "dump_attention": args.dump_attention,
        }))
        .input("ckpt", &ckpt_file)
        .input("input", &args.input)
        .input("taxonomy", &taxonomy_path)
        .input("graph", &graph_path)
        .output(&args.out)
        .write_next_to(&args.out, started)
}

/// Read prediction lines back into `(id, path)` pairs.
pub fn read_predictions(
    path: &Path,
    t: &DisciplineTaxonomy,
) -> Result<Vec<(String, TopicPath)>, CliError> {
    let reader = BufReader::new(std::fs::File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        if line.len() > MAX_LINE_BYTES {
            return Err(CliError::Data(format!("line {} too long", i + 1)));
        }
        let value: Value = serde_json::from_str(&line)
            .map_err(|e| CliError::Data(format!("line {}: {e}", i + 1)))?;
        let id = value
            .get("id")
            .and_then(Value::as_str)
            .ok_or_else(|| CliError::Data(format!("line {}: missing id", i + 1)))?
            .to_string();
        let sets: Vec<Vec<String>> = value
            .get("path")
            .and_then(|p| serde_json::from_value(p.clone()).ok())
            .ok_or_else(|| CliError::Data(format!("line {}: missing path", i + 1)))?;
        out.push((id, TopicPath::from_code_sets(&sets, t)?));
    }
    Ok(out)
}

pub fn evaluate(
    preds_path: &Path,
    truth_path: &Path,
    taxonomy_path: &Path,
    out: &Path,
) -> Result<(), CliError> {
    let started = Instant::now();
    let taxonomy = DisciplineTaxonomy::load(taxonomy_path)?;
    let predictions = read_predictions(preds_path, &taxonomy)?;
    let truth_corpus = read_corpus(truth_path)?;

    let mut truth_by_id: BTreeMap<&str, &Proposal> =
        truth_corpus.iter().map(|p| (p.id.as_str(), p)).collect();
    let mut preds = Vec::with_capacity(predictions.len());
    let mut truths = Vec::with_capacity(predictions.len());
    let mut ids = Vec::with_capacity(predictions.len());
    for (id, path) in &predictions {
        let truth = truth_by_id.remove(id.as_str()).ok_or_else(|| {
            CliError::Data(format!("prediction {id} has no matching truth proposal"))
        })?;
        preds.push(path.clone());
        truths.push(encode_topic_path(&truth.labels, &taxonomy)?);
        ids.push(id.clone());
    }
    if !truth_by_id.is_empty() {
        let missing: Vec<&str> = truth_by_id.keys().copied().take(3).collect();
        return Err(CliError::Data(format!(
            "{} truth proposals have no prediction (e.g. {})",
            truth_by_id.len(),
            missing.join(", ")
        )));
    }

    let f1 = f1_report(&preds, &truths, &taxonomy)?;
    let distance = distance_report(&preds, &truths, &taxonomy)?;
    let wrong = wrong_case_report(&preds, &truths, &taxonomy)?;
    println!(
        "micro_f1={:.4} macro_f1={:.4} mismatches={}",
        f1.micro_f1, f1.macro_f1, wrong.mismatch_total
    );

    let report = json!({
        "f1": f1,
        "distance": distance,
        "wrong_cases": wrong,
    });
    std::fs::write(out, serde_json::to_string_pretty(&report).expect("report serializes"))?;

    // per-sample audit CSV: one row per (sample, level)
    let csv_path = out.with_extension("csv");
    let mut csv = BufWriter::new(std::fs::File::create(&csv_path)?);
    writeln!(csv, "id,level,truth,pred,distance,case")?;
    for ((id, pred), truth) in ids.iter().zip(&preds).zip(&truths) {
        let cases = wrong_cases(pred, truth, &taxonomy);
        for k in 1..=taxonomy.depth() as usize {
            let fmt = |labels: &BTreeSet<u32>| {
                labels
                    .iter()
                    .map(|l| taxonomy.by_id(*l).code.clone())
                    .collect::<Vec<_>>()
                    .join("|")
            };
            let truth_codes: BTreeSet<String> = truth
                .level_labels(k)
                .iter()
                .map(|l| taxonomy.by_id(*l).code.clone())
                .collect();
            let pred_codes: BTreeSet<String> = pred
                .level_labels(k)
                .iter()
                .map(|l| taxonomy.by_id(*l).code.clone())
                .collect();
            let d = level_distance(&truth_codes, &pred_codes, k, &taxonomy)?;
            let case = cases[k - 1].map_or("correct", |c| c.name());
            writeln!(
                csv,
                "{id},{k},{},{},{d},{case}",
                fmt(&truth.level_labels(k)),
                fmt(&pred.level_labels(k)),
            )?;
        }
    }
    csv.flush()?;

    RunManifest::new("evaluate")
        .input("preds", preds_path)
        .input("truth", truth_path)
        .input("taxonomy", taxonomy_path)
        .output(out)
        .output(&csv_path)
        .write_next_to(out, started)
}

pub fn grad_check(
    model_config: Option<&Path>,
    seed: u64,
    samples: usize,
    tolerance: f64,
) -> Result<(), CliError> {
    let cfg: ModelConfig = load_json_config(model_config)?.unwrap_or_default();
    let outcome = gradcheck::run(&cfg, seed, samples, tolerance)?;
    for (group, n) in &outcome.per_group {
        println!("group {group}: {n} coordinates");
    }
    println!(
        "checked {} coordinates; worst relative error {:.3e} at {} (tolerance {:.1e})",
        outcome.checked, outcome.worst_rel_error, outcome.worst_param, outcome.tolerance
    );
    if outcome.passed() {
        println!("PASS");
        Ok(())
    } else {
        Err(CliError::Numeric(format!(
            "gradient check failed: worst relative error {:.3e} at {}",
            outcome.worst_rel_error, outcome.worst_param
        )))
    }
}
