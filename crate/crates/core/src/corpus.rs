//! Labeled corpora, tokenization, vocabulary and frozen word embeddings.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Vocabulary index reserved for padding.
pub const PAD: u32 = 0;
/// Vocabulary index reserved for out-of-vocabulary words.
pub const UNK: u32 = 1;

pub const DEFAULT_MAX_LEN: usize = 150;

/// Lowercases `text` and splits it on whitespace; inside each chunk every
/// character that is neither alphanumeric nor whitespace becomes a token of
/// its own.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut word = String::new();
    for ch in text.chars() {
        if ch.is_alphanumeric() {
            word.extend(ch.to_lowercase());
            continue;
        }
        if !word.is_empty() {
            tokens.push(std::mem::take(&mut word));
        }
        if !ch.is_whitespace() {
            tokens.push(ch.to_lowercase().collect());
        }
    }
    if !word.is_empty() {
        tokens.push(word);
    }
    tokens
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub text: String,
    pub tokens: Vec<String>,
    pub label: usize,
}

impl Document {
    pub fn new(id: impl Into<String>, text: impl Into<String>, label: usize) -> Result<Self> {
        let id = id.into();
        let text = text.into();
        let tokens = tokenize(&text);
        if tokens.is_empty() {
            return Err(Error::Dataset(format!("document {id} has no tokens")));
        }
        Ok(Document {
            id,
            text,
            tokens,
            label,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl Split {
    pub fn parse(s: &str) -> Option<Split> {
        match s.trim().to_ascii_lowercase().as_str() {
            "train" => Some(Split::Train),
            "dev" | "valid" | "validation" => Some(Split::Dev),
            "test" => Some(Split::Test),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        }
    }
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub name: String,
    pub classes: Vec<String>,
    pub train: Vec<Document>,
    pub dev: Vec<Document>,
    pub test: Vec<Document>,
}

impl Dataset {
    pub fn new(name: impl Into<String>, classes: Vec<String>) -> Result<Self> {
        validate_classes(&classes)?;
        Ok(Dataset {
            name: name.into(),
            classes,
            train: Vec::new(),
            dev: Vec::new(),
            test: Vec::new(),
        })
    }

    pub fn split(&self, split: Split) -> &[Document] {
        match split {
            Split::Train => &self.train,
            Split::Dev => &self.dev,
            Split::Test => &self.test,
        }
    }

    pub fn push(&mut self, split: Split, doc: Document) -> Result<()> {
        if doc.label >= self.classes.len() {
            return Err(Error::Dataset(format!(
                "document {} has label {} but only {} classes are declared",
                doc.id,
                doc.label,
                self.classes.len()
            )));
        }
        match split {
            Split::Train => self.train.push(doc),
            Split::Dev => self.dev.push(doc),
            Split::Test => self.test.push(doc),
        }
        Ok(())
    }

    pub fn class_count(&self) -> usize {
        self.classes.len()
    }

    pub fn split_sizes(&self) -> (usize, usize, usize) {
        (self.train.len(), self.dev.len(), self.test.len())
    }

    pub fn documents(&self) -> impl Iterator<Item = &Document> {
        self.train.iter().chain(&self.dev).chain(&self.test)
    }

    /// Serializes to the JSON Lines format read by [`load_dataset`], with the
    /// class declaration first.
    pub fn to_jsonl(&self) -> String {
        let mut out = serde_json::json!({ "classes": self.classes }).to_string();
        out.push('\n');
        for split in [Split::Train, Split::Dev, Split::Test] {
            for doc in self.split(split) {
                let record = serde_json::json!({
                    "id": doc.id,
                    "text": doc.text,
                    "label": self.classes[doc.label],
                    "split": split.as_str(),
                });
                out.push_str(&record.to_string());
                out.push('\n');
            }
        }
        out
    }
}

fn validate_classes(classes: &[String]) -> Result<()> {
    if classes.is_empty() {
        return Err(Error::Dataset("class list is empty".into()));
    }
    let mut seen = std::collections::HashSet::new();
    for c in classes {
        if !seen.insert(c) {
            return Err(Error::Dataset(format!("duplicate class {c:?}")));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum DatasetFormat {
    #[default]
    Jsonl,
    Csv,
}

impl DatasetFormat {
    /// Guesses the format from the file extension, defaulting to JSON Lines.
    pub fn from_path(path: &Path) -> DatasetFormat {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("csv") => DatasetFormat::Csv,
            _ => DatasetFormat::Jsonl,
        }
    }
}

#[derive(Debug, Deserialize)]
struct RawRecord {
    #[serde(default)]
    id: Option<String>,
    text: Option<String>,
    label: Option<serde_json::Value>,
    #[serde(default)]
    split: Option<String>,
    #[serde(default)]
    classes: Option<Vec<String>>,
}

struct PendingRecord {
    line: usize,
    id: String,
    text: String,
    label: String,
    split: Split,
}

/// Loads a labeled corpus.
///
/// JSON Lines records look like `{"text": "...", "label": "pos", "split": "dev"}`;
/// `split` defaults to `train` and `id` defaults to the record's ordinal. A line
/// of the form `{"classes": [...]}` declares the class order; otherwise the
/// classes are the sorted set of label strings. CSV files need a header with at
/// least `text` and `label` columns.
pub fn load_dataset(path: &Path, format: DatasetFormat) -> Result<Dataset> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let (declared, records) = match format {
        DatasetFormat::Jsonl => read_jsonl(path, BufReader::new(file))?,
        DatasetFormat::Csv => read_csv(path, file)?,
    };

    let classes = match declared {
        Some(classes) => classes,
        None => {
            let mut labels: Vec<String> = records.iter().map(|r| r.label.clone()).collect();
            labels.sort();
            labels.dedup();
            labels
        }
    };
    let name = path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("dataset")
        .to_string();
    let mut dataset = Dataset::new(name, classes)?;
    let index: HashMap<&str, usize> = dataset
        .classes
        .iter()
        .enumerate()
        .map(|(i, c)| (c.as_str(), i))
        .collect();

    let mut resolved = Vec::with_capacity(records.len());
    for rec in records {
        let Some(&label) = index.get(rec.label.as_str()) else {
            return Err(Error::UnknownLabel {
                line: rec.line,
                label: rec.label,
                classes: dataset.classes.clone(),
            });
        };
        let doc = Document::new(rec.id, rec.text, label).map_err(|_| Error::Parse {
            path: path.to_path_buf(),
            line: rec.line,
            message: "document text has no tokens".into(),
        })?;
        resolved.push((rec.split, doc));
    }
    for (split, doc) in resolved {
        dataset.push(split, doc)?;
    }
    Ok(dataset)
}

fn label_string(value: &serde_json::Value) -> Option<String> {
    match value {
        serde_json::Value::String(s) => Some(s.clone()),
        serde_json::Value::Number(n) => Some(n.to_string()),
        serde_json::Value::Bool(b) => Some(b.to_string()),
        _ => None,
    }
}

fn read_jsonl(
    path: &Path,
    reader: impl BufRead,
) -> Result<(Option<Vec<String>>, Vec<PendingRecord>)> {
    let mut declared = None;
    let mut records = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: line_no,
            message,
        };
        let raw: RawRecord = serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?;
        if let Some(classes) = raw.classes {
            if raw.text.is_some() {
                return Err(parse_err("record mixes a class declaration and text".into()));
            }
            if declared.is_some() || !records.is_empty() {
                return Err(parse_err("class declaration must be the first record".into()));
            }
            validate_classes(&classes)?;
            declared = Some(classes);
            continue;
        }
        let text = raw
            .text
            .ok_or_else(|| parse_err("missing \"text\" field".into()))?;
        let label = raw
            .label
            .as_ref()
            .ok_or_else(|| parse_err("missing \"label\" field".into()))
            .and_then(|v| label_string(v).ok_or_else(|| parse_err("label must be a string or number".into())))?;
        let split = match raw.split {
            None => Split::Train,
            Some(s) => Split::parse(&s).ok_or_else(|| parse_err(format!("unknown split {s:?}")))?,
        };
        let id = raw.id.unwrap_or_else(|| format!("d{}", records.len()));
        records.push(PendingRecord {
            line: line_no,
            id,
            text,
            label,
            split,
        });
    }
    Ok((declared, records))
}

#[derive(Debug, Deserialize)]
struct CsvRecord {
    #[serde(default)]
    id: Option<String>,
    text: Option<String>,
    label: Option<String>,
    #[serde(default)]
    split: Option<String>,
}

fn read_csv(path: &Path, file: File) -> Result<(Option<Vec<String>>, Vec<PendingRecord>)> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
    let mut records = Vec::new();
    for (i, row) in reader.deserialize::<CsvRecord>().enumerate() {
        // header is line 1
        let line_no = i + 2;
        let parse_err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: line_no,
            message,
        };
        let row = row.map_err(|e| parse_err(e.to_string()))?;
        let text = row
            .text
            .ok_or_else(|| parse_err("missing \"text\" field".into()))?;
        let label = row
            .label
            .filter(|l| !l.is_empty())
            .ok_or_else(|| parse_err("missing \"label\" field".into()))?;
        let split = match row.split.filter(|s| !s.is_empty()) {
            None => Split::Train,
            Some(s) => Split::parse(&s).ok_or_else(|| parse_err(format!("unknown split {s:?}")))?,
        };
        let id = row
            .id
            .filter(|s| !s.is_empty())
            .unwrap_or_else(|| format!("d{}", records.len()));
        records.push(PendingRecord {
            line: line_no,
            id,
            text,
            label,
            split,
        });
    }
    Ok((None, records))
}

/// Word to index map. Indices 0 and 1 are reserved for padding and unknown
/// words; real words start at 2.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Vocabulary {
    words: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocabulary {
    /// Builds a vocabulary over every token of every split, ordered by
    /// descending frequency with ties broken lexicographically.
    pub fn build(dataset: &Dataset) -> Vocabulary {
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for doc in dataset.documents() {
            for tok in &doc.tokens {
                *counts.entry(tok.as_str()).or_default() += 1;
            }
        }
        let mut entries: Vec<(&str, usize)> = counts.into_iter().collect();
        entries.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        Vocabulary::from_words(entries.into_iter().map(|(w, _)| w.to_string()))
    }

    /// Builds a vocabulary that assigns indices 2, 3, ... in iteration order.
    /// Duplicate words keep their first index.
    pub fn from_words(words: impl IntoIterator<Item = String>) -> Vocabulary {
        let mut vocab = Vocabulary::default();
        for w in words {
            if vocab.index.contains_key(&w) {
                continue;
            }
            let idx = vocab.words.len() as u32 + 2;
            vocab.index.insert(w.clone(), idx);
            vocab.words.push(w);
        }
        vocab
    }

    pub fn get(&self, word: &str) -> Option<u32> {
        self.index.get(word).copied()
    }

    pub fn lookup(&self, word: &str) -> u32 {
        self.get(word).unwrap_or(UNK)
    }

    /// The word at `index`, or `None` for the reserved slots.
    pub fn word(&self, index: u32) -> Option<&str> {
        index
            .checked_sub(2)
            .and_then(|i| self.words.get(i as usize))
            .map(String::as_str)
    }

    /// Number of real words, excluding the two reserved slots.
    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    /// Word to index export, ordered by index.
    pub fn to_json(&self) -> serde_json::Value {
        let mut map = serde_json::Map::new();
        for (i, w) in self.words.iter().enumerate() {
            map.insert(w.clone(), serde_json::Value::from(i as u64 + 2));
        }
        serde_json::Value::Object(map)
    }

    pub fn fingerprint(&self) -> String {
        let mut hasher = Sha256::new();
        for w in &self.words {
            hasher.update(w.as_bytes());
            hasher.update([0u8]);
        }
        hex::encode(&hasher.finalize()[..8])
    }
}

/// Maps a token sequence to exactly `max_len` vocabulary indices: unknown
/// words become [`UNK`], short documents are right-padded with [`PAD`], long
/// ones keep their first `max_len` tokens.
pub fn encode_tokens(tokens: &[String], vocab: &Vocabulary, max_len: usize) -> Vec<u32> {
    let mut out: Vec<u32> = tokens
        .iter()
        .take(max_len)
        .map(|t| vocab.lookup(t))
        .collect();
    out.resize(max_len, PAD);
    out
}

pub fn encode(doc: &Document, vocab: &Vocabulary, max_len: usize) -> Vec<u32> {
    encode_tokens(&doc.tokens, vocab, max_len)
}

/// Frozen embedding matrix with `vocab.len() + 2` rows. Row 0 (padding), row 1
/// (unknown) and rows of words missing from the source file are zero.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    data: Vec<f64>,
    zero_rows: Vec<bool>,
    coverage: f64,
}

impl EmbeddingTable {
    pub fn from_rows(dim: usize, data: Vec<f64>, coverage: f64) -> Result<Self> {
        if dim == 0 || !data.len().is_multiple_of(dim) || data.len() < 2 * dim {
            return Err(Error::Dimension {
                expected: dim,
                found: data.len(),
                context: "embedding matrix length",
            });
        }
        if data[..dim].iter().any(|&v| v != 0.0) {
            return Err(Error::Invalid("padding row must be zero".into()));
        }
        let zero_rows = data.chunks(dim).map(|r| r.iter().all(|&v| v == 0.0)).collect();
        Ok(EmbeddingTable {
            dim,
            data,
            zero_rows,
            coverage,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn rows(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn row(&self, index: u32) -> &[f64] {
        let i = index as usize * self.dim;
        &self.data[i..i + self.dim]
    }

    pub fn is_zero_row(&self, index: u32) -> bool {
        self.zero_rows[index as usize]
    }

    /// Fraction of vocabulary words that were found in the source file.
    pub fn coverage(&self) -> f64 {
        self.coverage
    }

    /// Embeddings never receive gradient updates.
    pub fn trainable(&self) -> bool {
        false
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn fingerprint(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update((self.dim as u64).to_le_bytes());
        for v in &self.data {
            hasher.update(v.to_le_bytes());
        }
        hex::encode(&hasher.finalize()[..8])
    }
}

/// Reads `word f1 ... fD` lines and fills the rows of words present in
/// `vocab`. A leading `count dim` header line is tolerated. All lines must
/// have the same dimension. The first occurrence of a duplicated word wins.
pub fn load_embeddings(path: &Path, vocab: &Vocabulary) -> Result<EmbeddingTable> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);
    let mut dim: Option<usize> = None;
    let mut rows: BTreeMap<u32, Vec<f64>> = BTreeMap::new();

    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        let mut fields = line.split_whitespace();
        let Some(word) = fields.next() else {
            continue;
        };
        let values: Vec<&str> = fields.collect();
        if line_no == 1 && values.len() == 1 && word.parse::<usize>().is_ok() && values[0].parse::<usize>().is_ok() {
            continue;
        }
        let d = *dim.get_or_insert(values.len());
        if values.len() != d || d == 0 {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: line_no,
                message: format!("expected {d} values, found {}", values.len()),
            });
        }
        let Some(idx) = vocab.get(word) else {
            continue;
        };
        if rows.contains_key(&idx) {
            continue;
        }
        let parsed = values
            .iter()
            .map(|v| v.parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: line_no,
                message: e.to_string(),
            })?;
        rows.insert(idx, parsed);
    }

    let dim = dim.ok_or_else(|| Error::Parse {
        path: path.to_path_buf(),
        line: 0,
        message: "embedding file is empty".into(),
    })?;
    let total = vocab.len() + 2;
    let mut data = vec![0.0; total * dim];
    for (idx, row) in &rows {
        let start = *idx as usize * dim;
        data[start..start + dim].copy_from_slice(row);
    }
    let coverage = if vocab.is_empty() {
        0.0
    } else {
        rows.len() as f64 / vocab.len() as f64
    };
    EmbeddingTable::from_rows(dim, data, coverage)
}

/// Writes vectors in the `word f1 ... fD` text format using shortest
/// round-trip float formatting, so reloading is bit-exact.
pub fn write_embeddings<'a>(
    path: &Path,
    entries: impl IntoIterator<Item = (&'a str, &'a [f64])>,
) -> Result<()> {
    use std::io::Write;
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = std::io::BufWriter::new(file);
    for (word, vec) in entries {
        let mut line = String::from(word);
        for v in vec {
            line.push(' ');
            line.push_str(&v.to_string());
        }
        line.push('\n');
        out.write_all(line.as_bytes()).map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn toks(xs: &[&str]) -> Vec<String> {
        xs.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn tokenizer_splits_punctuation() {
        assert_eq!(tokenize("Love it!"), toks(&["love", "it", "!"]));
        assert!(tokenize("").is_empty());
        assert_eq!(
            tokenize("My 3-year-old"),
            toks(&["my", "3", "-", "year", "-", "old"])
        );
        assert_eq!(tokenize("  a \t\n b  "), toks(&["a", "b"]));
    }

    #[test]
    fn empty_document_rejected() {
        assert!(Document::new("x", "   ", 0).is_err());
    }

    #[test]
    fn encode_pads_truncates_and_maps_unknown() {
        let vocab = Vocabulary::from_words(toks(&["a", "b", "c"]));
        assert_eq!(encode_tokens(&toks(&["a", "b", "c"]), &vocab, 5), vec![2, 3, 4, 0, 0]);
        assert_eq!(encode_tokens(&toks(&["a", "zzz"]), &vocab, 3), vec![2, UNK, 0]);

        let long: Vec<String> = (0..200).map(|i| ["a", "b", "c"][i % 3].to_string()).collect();
        let enc = encode_tokens(&long, &vocab, 150);
        assert_eq!(enc.len(), 150);
        let expect: Vec<u32> = (0..150).map(|i| 2 + (i % 3) as u32).collect();
        assert_eq!(enc, expect);
    }

    #[test]
    fn vocabulary_orders_by_frequency_then_word() {
        let mut ds = Dataset::new("t", toks(&["neg", "pos"])).unwrap();
        ds.push(Split::Train, Document::new("0", "b a b c", 0).unwrap()).unwrap();
        ds.push(Split::Dev, Document::new("1", "c a", 1).unwrap()).unwrap();
        let vocab = Vocabulary::build(&ds);
        // a:2 b:2 c:2 -> lexicographic
        assert_eq!(vocab.words(), &toks(&["a", "b", "c"])[..]);
        assert_eq!(vocab.get("a"), Some(2));
        assert_eq!(vocab.word(0), None);
        assert_eq!(vocab.word(4), Some("c"));
        assert_eq!(vocab.to_json()["c"], 4);
        assert_eq!(Vocabulary::build(&ds), vocab);
    }

    fn write_tmp(content: &str, suffix: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::Builder::new().suffix(suffix).tempfile().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    #[test]
    fn jsonl_minimal_dataset() {
        let f = write_tmp(
            "{\"text\": \"great food\", \"label\": \"pos\"}\n{\"text\": \"awful\", \"label\": \"neg\"}\n",
            ".jsonl",
        );
        let ds = load_dataset(f.path(), DatasetFormat::Jsonl).unwrap();
        assert_eq!(ds.classes, toks(&["neg", "pos"]));
        assert_eq!(ds.train.len(), 2);
        assert_eq!(ds.train[0].label, 1);
        assert_eq!(ds.train[1].id, "d1");
    }

    #[test]
    fn jsonl_writer_round_trips() {
        let mut ds = Dataset::new("rt", toks(&["zeta", "alpha"])).unwrap();
        ds.push(Split::Train, Document::new("a", "x \"quoted\" y", 1).unwrap()).unwrap();
        ds.push(Split::Dev, Document::new("b", "z", 0).unwrap()).unwrap();
        ds.push(Split::Test, Document::new("c", "w", 0).unwrap()).unwrap();
        let f = write_tmp(&ds.to_jsonl(), ".jsonl");
        let mut back = load_dataset(f.path(), DatasetFormat::Jsonl).unwrap();
        back.name = ds.name.clone();
        assert_eq!(back, ds);
    }

    #[test]
    fn jsonl_missing_label_names_line() {
        let f = write_tmp(
            "{\"text\": \"ok\", \"label\": \"pos\"}\n{\"text\": \"no label\"}\n",
            ".jsonl",
        );
        match load_dataset(f.path(), DatasetFormat::Jsonl) {
            Err(Error::Parse { line, message, .. }) => {
                assert_eq!(line, 2);
                assert!(message.contains("label"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn jsonl_unknown_label_lists_classes() {
        let f = write_tmp(
            "{\"classes\": [\"neg\", \"pos\"]}\n{\"text\": \"ok\", \"label\": \"meh\"}\n",
            ".jsonl",
        );
        match load_dataset(f.path(), DatasetFormat::Jsonl) {
            Err(Error::UnknownLabel { line, classes, .. }) => {
                assert_eq!(line, 2);
                assert_eq!(classes, toks(&["neg", "pos"]));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn jsonl_empty_text_rejected() {
        let f = write_tmp("{\"text\": \" \", \"label\": \"pos\"}\n", ".jsonl");
        assert!(matches!(
            load_dataset(f.path(), DatasetFormat::Jsonl),
            Err(Error::Parse { line: 1, .. })
        ));
    }

    #[test]
    fn csv_with_splits() {
        let f = write_tmp(
            "text,label,split\n\"good, really\",pos,train\nbad,neg,dev\nfine,pos,test\n",
            ".csv",
        );
        let ds = load_dataset(f.path(), DatasetFormat::from_path(f.path())).unwrap();
        assert_eq!(ds.split_sizes(), (1, 1, 1));
        assert_eq!(ds.train[0].tokens, toks(&["good", ",", "really"]));
    }

    #[test]
    fn embeddings_coverage_and_rows() {
        let f = write_tmp(
            "the 0.1 0.2\nfood 0.5 -0.25\ncat 1 2\ndog 3 4\nbird 5 6\n",
            ".txt",
        );
        let vocab = Vocabulary::from_words(toks(&["food", "zebra", "cat"]));
        let table = load_embeddings(f.path(), &vocab).unwrap();
        assert_eq!(table.dim(), 2);
        assert_eq!(table.rows(), 5);
        assert!((table.coverage() - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(format!("{:.3}", table.coverage()), "0.667");
        assert_eq!(table.row(PAD), &[0.0, 0.0]);
        assert_eq!(table.row(vocab.lookup("food")), &[0.5, -0.25]);
        assert_eq!(table.row(vocab.lookup("zebra")), &[0.0, 0.0]);
        assert!(table.is_zero_row(vocab.lookup("zebra")));
        assert!(!table.trainable());
    }

    #[test]
    fn embeddings_dimension_mismatch() {
        let f = write_tmp("a 1 2 3\nb 1 2\n", ".txt");
        let vocab = Vocabulary::from_words(toks(&["a"]));
        assert!(matches!(
            load_embeddings(f.path(), &vocab),
            Err(Error::Parse { line: 2, .. })
        ));
    }

    #[test]
    fn embeddings_round_trip_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.txt");
        let v1 = [0.1f64, -1.0 / 3.0, 1e-300];
        let v2 = [std::f64::consts::PI, 2.5e10, -0.0];
        write_embeddings(&path, [("x", &v1[..]), ("y", &v2[..])]).unwrap();
        let vocab = Vocabulary::from_words(toks(&["y", "x"]));
        let table = load_embeddings(&path, &vocab).unwrap();
        for (a, b) in table.row(3).iter().zip(&v1) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        assert_eq!(table.row(2)[0].to_bits(), v2[0].to_bits());
    }
}
