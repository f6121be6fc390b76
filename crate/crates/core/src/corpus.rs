//! Proposal data model, tokenization, JSONL I/O, and the synthetic corpus
//! generator.
//!
//! Each proposal carries four typed documents (title, keywords, abstract,
//! research field) and a set of discipline codes. The generator plants a
//! private vocabulary per leaf discipline so that the classification task
//! is separable and fully reproducible from a seed.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::seeding::sub_seed;
use crate::taxonomy::{DisciplineTaxonomy, TaxonomyError};

/// Reserved token ids.
pub const PAD_ID: u32 = 0;
pub const UNK_ID: u32 = 1;
/// Type-token ids, one per document type, in [`DOC_TYPES`] order.
pub const TYPE_TOKEN_IDS: [u32; 4] = [2, 3, 4, 5];
/// Number of reserved ids at the bottom of the vocabulary.
pub const RESERVED_TOKENS: u32 = 6;

/// Document types in their fixed order.
pub const DOC_TYPES: [&str; 4] = ["title", "keywords", "abstract", "research_field"];

/// Maximum accepted JSONL line length.
pub const MAX_LINE_BYTES: usize = 1 << 20;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("invalid corpus config: {0}")]
    ConfigInvalid(String),
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("schema error at line {line}: missing or invalid field {field}")]
    Schema { line: usize, field: &'static str },
    #[error("line {line} exceeds {MAX_LINE_BYTES} bytes")]
    LineTooLong { line: usize },
    #[error(transparent)]
    Taxonomy(#[from] TaxonomyError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// One research proposal: four typed documents plus its label codes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Proposal {
    pub id: String,
    pub title: String,
    pub keywords: Vec<String>,
    #[serde(rename = "abstract")]
    pub abstract_text: String,
    pub research_field: String,
    pub labels: BTreeSet<String>,
}

impl Proposal {
    /// Raw text of document `i` in [`DOC_TYPES`] order.
    pub fn document_text(&self, i: usize) -> String {
        match i {
            0 => self.title.clone(),
            1 => self.keywords.join(" "),
            2 => self.abstract_text.clone(),
            3 => self.research_field.clone(),
            _ => panic!("document index out of range"),
        }
    }

    /// Normalized topic set used for graph construction: the keywords.
    pub fn topics(&self) -> BTreeSet<String> {
        self.keywords.iter().filter_map(|k| normalize_word(k)).collect()
    }
}

/// Lowercase and strip non-alphanumeric characters; `None` if nothing
/// survives.
pub fn normalize_word(raw: &str) -> Option<String> {
    let w: String = raw
        .chars()
        .filter(|c| c.is_alphanumeric())
        .flat_map(char::to_lowercase)
        .collect();
    if w.is_empty() {
        None
    } else {
        Some(w)
    }
}

fn normalize_text(raw: &str) -> Vec<String> {
    raw.split_whitespace().filter_map(normalize_word).collect()
}

/// Token-to-id map with the reserved pad/unk/type ids at the bottom.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Vocabulary {
    words: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, u32>,
}

impl Vocabulary {
    /// Build from a corpus: all normalized words from all documents, sorted,
    /// assigned ids starting at [`RESERVED_TOKENS`]. Minimum frequency 1.
    pub fn build(corpus: &[Proposal]) -> Self {
        let mut set = BTreeSet::new();
        for p in corpus {
            for i in 0..DOC_TYPES.len() {
                set.extend(normalize_text(&p.document_text(i)));
            }
        }
        Self::from_words(set.into_iter().collect())
    }

    fn from_words(words: Vec<String>) -> Self {
        let index = words
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), i as u32 + RESERVED_TOKENS))
            .collect();
        Self { words, index }
    }

    /// Total id space including reserved ids.
    pub fn size(&self) -> usize {
        self.words.len() + RESERVED_TOKENS as usize
    }

    pub fn id_of(&self, word: &str) -> u32 {
        self.index.get(word).copied().unwrap_or(UNK_ID)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("vocabulary serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, CorpusError> {
        let v: Vocabulary = serde_json::from_str(text).map_err(|e| CorpusError::Parse {
            line: 0,
            msg: e.to_string(),
        })?;
        Ok(Self::from_words(v.words))
    }
}

/// Token-id sequences, one per document type, each of fixed length with the
/// type token in position 0.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenizedProposal {
    pub id: String,
    /// `docs[i]` has length `doc_len`; `docs[i][0] == TYPE_TOKEN_IDS[i]`.
    pub docs: Vec<Vec<u32>>,
}

/// Deterministic, total tokenization: type token first, then the first
/// `doc_len - 1` word ids, padded with [`PAD_ID`].
pub fn tokenize(p: &Proposal, vocab: &Vocabulary, doc_len: usize) -> TokenizedProposal {
    assert!(doc_len >= 1, "doc_len must be positive");
    let docs = (0..DOC_TYPES.len())
        .map(|i| {
            let mut seq = Vec::with_capacity(doc_len);
            seq.push(TYPE_TOKEN_IDS[i]);
            for w in normalize_text(&p.document_text(i)).iter().take(doc_len - 1) {
                seq.push(vocab.id_of(w));
            }
            seq.resize(doc_len, PAD_ID);
            seq
        })
        .collect();
    TokenizedProposal {
        id: p.id.clone(),
        docs,
    }
}

/// Generator configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorpusConfig {
    pub seed: u64,
    pub size: usize,
    /// Planted words per leaf discipline.
    pub vocab_per_discipline: usize,
    /// Probability that a planted word slot is drawn from the shared pool.
    pub shared_topic_rate: f64,
    /// Fraction of proposals labeled under two distinct level-1 letters.
    pub interdisciplinary_rate: f64,
    /// Padded document length used downstream.
    pub doc_len: usize,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            size: 500,
            vocab_per_discipline: 12,
            shared_topic_rate: 0.15,
            interdisciplinary_rate: 0.3,
            doc_len: 32,
        }
    }
}

impl CorpusConfig {
    pub fn validate(&self) -> Result<(), CorpusError> {
        for (name, rate) in [
            ("shared_topic_rate", self.shared_topic_rate),
            ("interdisciplinary_rate", self.interdisciplinary_rate),
        ] {
            if !(0.0..=1.0).contains(&rate) {
                return Err(CorpusError::ConfigInvalid(format!(
                    "{name} must lie in [0,1], got {rate}"
                )));
            }
        }
        if self.vocab_per_discipline == 0 {
            return Err(CorpusError::ConfigInvalid(
                "vocab_per_discipline must be positive".into(),
            ));
        }
        if self.doc_len < 2 {
            return Err(CorpusError::ConfigInvalid(
                "doc_len must be at least 2".into(),
            ));
        }
        Ok(())
    }
}

/// Planted vocabulary per leaf discipline code.
pub struct PlantedVocab {
    pub by_leaf: BTreeMap<String, Vec<String>>,
}

/// Filler words that carry no discipline signal.
const FILLER: [&str; 12] = [
    "study", "method", "analysis", "results", "novel", "propose", "based", "approach", "data",
    "model", "system", "evaluation",
];

/// Grow the per-leaf planted vocabularies. A slot is either a private word
/// derived from the leaf code or a word from a shared pool, giving
/// non-sibling leaves a small controlled topic overlap.
pub fn plant_vocabularies(t: &DisciplineTaxonomy, cfg: &CorpusConfig) -> PlantedVocab {
    let mut rng = ChaCha12Rng::seed_from_u64(sub_seed(cfg.seed, "planted-vocab"));
    let mut shared_pool: Vec<String> = Vec::new();
    let mut by_leaf = BTreeMap::new();
    for id in t.level_nodes(t.depth()) {
        let code = t.by_id(*id).code.to_lowercase();
        let mut words = Vec::with_capacity(cfg.vocab_per_discipline);
        for j in 0..cfg.vocab_per_discipline {
            let shared = rng.gen_bool(cfg.shared_topic_rate);
            if shared && (!shared_pool.is_empty() && rng.gen_bool(0.5)) {
                words.push(shared_pool.choose(&mut rng).unwrap().clone());
            } else if shared {
                let w = format!("xshared{:03}", shared_pool.len());
                shared_pool.push(w.clone());
                words.push(w);
            } else {
                words.push(format!("{code}w{j:02}"));
            }
        }
        words.dedup();
        by_leaf.insert(t.by_id(*id).code.clone(), words);
    }
    PlantedVocab { by_leaf }
}

/// Generate `cfg.size` proposals over the taxonomy's leaf disciplines.
///
/// Deterministic given the seed. Exactly `round(size * interdisciplinary_rate)`
/// proposals carry two leaf codes under distinct level-1 letters; every
/// document draws at least 80% of its words from the planted vocabularies
/// of the proposal's leaves.
pub fn generate_corpus(
    t: &DisciplineTaxonomy,
    cfg: &CorpusConfig,
) -> Result<Vec<Proposal>, CorpusError> {
    cfg.validate()?;
    if cfg.size == 0 {
        return Ok(Vec::new());
    }
    if t.depth() < 1 || t.level_nodes(1).len() < 2 && cfg.interdisciplinary_rate > 0.0 {
        return Err(CorpusError::ConfigInvalid(
            "interdisciplinary generation needs at least two level-1 disciplines".into(),
        ));
    }
    let planted = plant_vocabularies(t, cfg);
    let leaves: Vec<String> = planted.by_leaf.keys().cloned().collect();
    let mut by_letter: BTreeMap<char, Vec<&String>> = BTreeMap::new();
    for leaf in &leaves {
        by_letter.entry(leaf.chars().next().unwrap()).or_default().push(leaf);
    }
    let letters: Vec<char> = by_letter.keys().copied().collect();

    let n_inter = (cfg.size as f64 * cfg.interdisciplinary_rate).round() as usize;
    let mut inter_flags = vec![false; cfg.size];
    for flag in inter_flags.iter_mut().take(n_inter) {
        *flag = true;
    }
    let mut rng = ChaCha12Rng::seed_from_u64(sub_seed(cfg.seed, "corpus"));
    inter_flags.shuffle(&mut rng);

    let mut proposals = Vec::with_capacity(cfg.size);
    for (idx, inter) in inter_flags.iter().enumerate() {
        let labels: Vec<&String> = if *inter {
            let mut pair = letters.clone();
            pair.shuffle(&mut rng);
            pair.truncate(2);
            pair.sort_unstable();
            pair.iter()
                .map(|c| *by_letter[c].choose(&mut rng).unwrap())
                .collect()
        } else {
            vec![leaves.choose(&mut rng).unwrap()]
        };
        let vocab_refs: Vec<&Vec<String>> =
            labels.iter().map(|l| &planted.by_leaf[*l]).collect();

        let draw_planted = |rng: &mut ChaCha12Rng| -> String {
            let v = vocab_refs[rng.gen_range(0..vocab_refs.len())];
            v[rng.gen_range(0..v.len())].clone()
        };
        // At most one filler word for every six tokens keeps every document
        // above the 80% planted floor.
        let make_doc = |rng: &mut ChaCha12Rng, len: usize| -> Vec<String> {
            let n_filler = if len >= 6 { rng.gen_range(0..=len / 6) } else { 0 };
            let mut words: Vec<String> = (0..len - n_filler).map(|_| draw_planted(rng)).collect();
            for _ in 0..n_filler {
                words.push(FILLER.choose(rng).unwrap().to_string());
            }
            words.shuffle(rng);
            words
        };

        let title_len = rng.gen_range(4..=6);
        let title = make_doc(&mut rng, title_len).join(" ");
        let keyword_len = rng.gen_range(4..=6);
        let keywords = make_doc(&mut rng, keyword_len);
        let max_abstract = (cfg.doc_len - 1).min(30);
        let min_abstract = max_abstract.saturating_sub(6).max(1);
        let abstract_len = rng.gen_range(min_abstract..=max_abstract);
        let abstract_text = make_doc(&mut rng, abstract_len).join(" ");
        let field_len = rng.gen_range(2..=3);
        let research_field = make_doc(&mut rng, field_len).join(" ");

        proposals.push(Proposal {
            id: format!("p{idx:05}"),
            title,
            keywords,
            abstract_text,
            research_field,
            labels: labels.into_iter().cloned().collect(),
        });
    }
    Ok(proposals)
}

fn parse_proposal(line_no: usize, value: &Value) -> Result<Proposal, CorpusError> {
    let obj = value
        .as_object()
        .ok_or(CorpusError::Schema { line: line_no, field: "object" })?;
    let get_str = |field: &'static str| -> Result<String, CorpusError> {
        obj.get(field)
            .and_then(Value::as_str)
            .map(str::to_string)
            .ok_or(CorpusError::Schema { line: line_no, field })
    };
    let str_array = |field: &'static str| -> Result<Vec<String>, CorpusError> {
        obj.get(field)
            .and_then(Value::as_array)
            .map(|items| {
                items
                    .iter()
                    .map(|v| {
                        v.as_str()
                            .map(str::to_string)
                            .ok_or(CorpusError::Schema { line: line_no, field })
                    })
                    .collect::<Result<Vec<_>, _>>()
            })
            .ok_or(CorpusError::Schema { line: line_no, field })?
    };
    let labels: BTreeSet<String> = str_array("labels")?.into_iter().collect();
    if labels.is_empty() {
        return Err(CorpusError::Schema { line: line_no, field: "labels" });
    }
    Ok(Proposal {
        id: get_str("id")?,
        title: get_str("title")?,
        keywords: str_array("keywords")?,
        abstract_text: get_str("abstract")?,
        research_field: get_str("research_field")?,
        labels,
    })
}

/// Read proposals from JSONL.
pub fn read_corpus_from<R: BufRead>(reader: R) -> Result<Vec<Proposal>, CorpusError> {
    let mut proposals = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let line_no = i + 1;
        if line.len() > MAX_LINE_BYTES {
            return Err(CorpusError::LineTooLong { line: line_no });
        }
        if line.trim().is_empty() {
            continue;
        }
        let value: Value = serde_json::from_str(&line).map_err(|e| CorpusError::Parse {
            line: line_no,
            msg: e.to_string(),
        })?;
        proposals.push(parse_proposal(line_no, &value)?);
    }
    Ok(proposals)
}

pub fn read_corpus(path: &Path) -> Result<Vec<Proposal>, CorpusError> {
    read_corpus_from(BufReader::new(std::fs::File::open(path)?))
}

/// Write proposals as JSONL with stable field order.
pub fn write_corpus_to<W: Write>(mut writer: W, corpus: &[Proposal]) -> Result<(), CorpusError> {
    for p in corpus {
        let line = serde_json::to_string(p).expect("proposal serializes");
        if line.len() > MAX_LINE_BYTES {
            return Err(CorpusError::LineTooLong { line: 0 });
        }
        writeln!(writer, "{line}")?;
    }
    Ok(())
}

pub fn write_corpus(path: &Path, corpus: &[Proposal]) -> Result<(), CorpusError> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    write_corpus_to(&mut w, corpus)?;
    w.flush()?;
    Ok(())
}

/// Count proposals whose labels span two level-1 letters.
pub fn interdisciplinary_count(corpus: &[Proposal]) -> usize {
    corpus
        .iter()
        .filter(|p| {
            p.labels
                .iter()
                .filter_map(|c| c.chars().next())
                .collect::<BTreeSet<_>>()
                .len()
                > 1
        })
        .count()
}
