//! File formats and loaders: embeddings, corpus counts, training tuples,
//! evaluation datasets, precomputed similarity scores, and bit-exact model
//! archives.
//!
//! Tabular files use a single TAB between fields; embedding and evaluation
//! files are whitespace-separated. All keys and word surfaces are
//! lowercased on the way in. Loaders are pure functions of file content —
//! no ordering or timing leaks into the loaded tables.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::glf::GlfTensor;
use crate::graph::{EmbeddingTable, Pos, PrecomputedPhi, WordId};
use crate::objective::{Params, ParamsStore};
use crate::tensor::{DenseMatrix, DenseTensor3, LowRankMatrix, LowRankTensor3, Vector};
use crate::train::{TrainingTuple, TupleArgs};

/// Most tuples kept per head word.
pub const TUPLE_CAP: usize = 500;
/// Minimum phrase occurrence count (`p`).
pub const P_MIN: u64 = 2;
/// Minimum argument-noun corpus count (`q`).
pub const Q_MIN: u64 = 100;

fn path_str(path: &Path) -> String {
    path.display().to_string()
}

/// Read a file, naming it in any I/O error so callers see which path failed.
fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| annotate_io(path, e))
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| annotate_io(path, e))
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| annotate_io(path, e))
}

fn annotate_io(path: &Path, e: std::io::Error) -> Error {
    Error::Io(std::io::Error::new(
        e.kind(),
        format!("{}: {e}", path.display()),
    ))
}

fn parse_err(path: &Path, line: usize, reason: impl Into<String>) -> Error {
    Error::Parse {
        path: path_str(path),
        line,
        reason: reason.into(),
    }
}

fn format_err(path: &Path, reason: impl Into<String>) -> Error {
    Error::Format {
        path: path_str(path),
        reason: reason.into(),
    }
}

/// Load `key v1 v2 ... vD` lines into an embedding table. The dimension is
/// fixed by the first data line; blank lines are skipped.
pub fn load_embeddings(path: &Path) -> Result<EmbeddingTable> {
    let text = read_text(path)?;
    let mut table: Option<EmbeddingTable> = None;
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split_whitespace();
        let key = parts
            .next()
            .ok_or_else(|| parse_err(path, line_no, "missing key"))?
            .to_lowercase();
        let mut values = Vec::new();
        for token in parts {
            let v: f64 = token.parse().map_err(|_| {
                parse_err(path, line_no, format!("'{token}' is not a number"))
            })?;
            if !v.is_finite() {
                return Err(parse_err(
                    path,
                    line_no,
                    format!("non-finite component '{token}'"),
                ));
            }
            values.push(v);
        }
        if values.is_empty() {
            return Err(parse_err(
                path,
                line_no,
                format!("key '{key}' has no vector components"),
            ));
        }
        let slot = match &mut table {
            Some(t) => t,
            None => table.insert(EmbeddingTable::new(values.len())?),
        };
        if values.len() != slot.dim() {
            return Err(format_err(
                path,
                format!(
                    "line {line_no}: expected {} components, got {}",
                    slot.dim(),
                    values.len()
                ),
            ));
        }
        if slot.contains(&key) {
            return Err(parse_err(path, line_no, format!("duplicate key '{key}'")));
        }
        slot.insert(&key, Vector::new(values)?)?;
    }
    table.ok_or_else(|| format_err(path, "empty embedding file: dimension undeterminable"))
}

/// Load `key <TAB> count` lines. Keys are lowercased; duplicates rejected.
pub fn load_counts(path: &Path) -> Result<BTreeMap<String, u64>> {
    let text = read_text(path)?;
    let mut counts = BTreeMap::new();
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 2 {
            return Err(parse_err(
                path,
                line_no,
                format!("expected 'key<TAB>count', got {} fields", fields.len()),
            ));
        }
        let key = fields[0].trim().to_lowercase();
        if key.is_empty() {
            return Err(parse_err(path, line_no, "empty key"));
        }
        let count: u64 = fields[1].trim().parse().map_err(|_| {
            parse_err(path, line_no, format!("'{}' is not a count", fields[1]))
        })?;
        if counts.insert(key.clone(), count).is_some() {
            return Err(parse_err(path, line_no, format!("duplicate key '{key}'")));
        }
    }
    Ok(counts)
}

/// Load and filter training tuples for one word category.
///
/// Adjective lines are `adjective TAB noun TAB holistic_key TAB count`;
/// verb lines are `subject TAB verb TAB object TAB holistic_key TAB count`.
/// A tuple survives when its phrase count is at least `p_min`, every
/// argument noun has a corpus count of at least `q_min`, and its holistic
/// key resolves in `holistic`. Tuples whose noun is missing from the
/// counts file, or whose holistic key is missing from the table, are
/// dropped with a logged warning. Each word keeps at most `cap` tuples,
/// preferring higher occurrence counts (ties broken lexicographically);
/// words whose tuples are all filtered away stay in the result with an
/// empty list — they are legitimate zero-data words.
pub fn load_tuples(
    path: &Path,
    counts_path: &Path,
    holistic: &EmbeddingTable,
    pos: Pos,
    p_min: u64,
    q_min: u64,
    cap: usize,
) -> Result<BTreeMap<WordId, Vec<TrainingTuple>>> {
    if pos == Pos::Noun {
        return Err(Error::RejectedInput(
            "tuples describe adjective or verb phrases, not nouns".into(),
        ));
    }
    if cap == 0 {
        return Err(Error::RejectedInput("tuple cap must be positive".into()));
    }
    let counts = load_counts(counts_path)?;
    let text = read_text(path)?;
    let want_fields = match pos {
        Pos::Adjective => 4,
        Pos::Verb => 5,
        Pos::Noun => unreachable!("rejected above"),
    };

    let mut by_word: BTreeMap<WordId, Vec<TrainingTuple>> = BTreeMap::new();
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != want_fields {
            return Err(parse_err(
                path,
                line_no,
                format!(
                    "expected {want_fields} tab-separated fields for {} tuples, got {}",
                    pos.as_str(),
                    fields.len()
                ),
            ));
        }
        if fields.iter().any(|f| f.trim().is_empty()) {
            return Err(parse_err(path, line_no, "empty field"));
        }
        let count: u64 = fields[want_fields - 1].trim().parse().map_err(|_| {
            parse_err(
                path,
                line_no,
                format!("'{}' is not a count", fields[want_fields - 1]),
            )
        })?;
        if count == 0 {
            return Err(parse_err(path, line_no, "occurrence count must be at least 1"));
        }
        let (head, args) = match pos {
            Pos::Adjective => (
                WordId::new(fields[0].trim(), Pos::Adjective)?,
                TupleArgs::Noun(fields[1].trim().to_lowercase()),
            ),
            Pos::Verb => (
                WordId::new(fields[1].trim(), Pos::Verb)?,
                TupleArgs::SubjectObject(
                    fields[0].trim().to_lowercase(),
                    fields[2].trim().to_lowercase(),
                ),
            ),
            Pos::Noun => unreachable!("rejected above"),
        };
        let holistic_key = fields[want_fields - 2].trim().to_lowercase();
        by_word.entry(head.clone()).or_default().push(TrainingTuple {
            head,
            args,
            holistic_key,
            occurrence_count: count,
        });
    }

    let mut out = BTreeMap::new();
    for (word, tuples) in by_word {
        let mut kept: Vec<TrainingTuple> = Vec::with_capacity(tuples.len());
        for tuple in tuples {
            if tuple.occurrence_count < p_min {
                continue;
            }
            let nouns: Vec<&str> = match &tuple.args {
                TupleArgs::Noun(n) => vec![n.as_str()],
                TupleArgs::SubjectObject(s, o) => vec![s.as_str(), o.as_str()],
            };
            let mut noun_ok = true;
            for noun in nouns {
                match counts.get(noun) {
                    None => {
                        log::warn!(
                            "dropping tuple '{}': noun '{noun}' missing from counts",
                            tuple.holistic_key
                        );
                        noun_ok = false;
                        break;
                    }
                    Some(&c) if c < q_min => {
                        noun_ok = false;
                        break;
                    }
                    Some(_) => {}
                }
            }
            if !noun_ok {
                continue;
            }
            if !holistic.contains(&tuple.holistic_key) {
                log::warn!(
                    "dropping tuple '{}': no holistic phrase vector",
                    tuple.holistic_key
                );
                continue;
            }
            kept.push(tuple);
        }
        kept.sort_by(|a, b| {
            b.occurrence_count
                .cmp(&a.occurrence_count)
                .then_with(|| a.holistic_key.cmp(&b.holistic_key))
                .then_with(|| a.args.cmp(&b.args))
        });
        kept.truncate(cap);
        out.insert(word, kept);
    }
    Ok(out)
}

/// Shapes of rated evaluation datasets.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetShape {
    /// `word1 word2 gold`
    WordPair,
    /// `adj1 noun1 adj2 noun2 gold`
    AnPair,
    /// `subj1 verb1 obj1 subj2 verb2 obj2 gold`
    SvoPair,
}

impl DatasetShape {
    pub fn parse(name: &str) -> Result<DatasetShape> {
        match name {
            "word-pair" => Ok(DatasetShape::WordPair),
            "an-pair" => Ok(DatasetShape::AnPair),
            "svo-pair" => Ok(DatasetShape::SvoPair),
            other => Err(Error::RejectedInput(format!(
                "unknown dataset shape '{other}' (expected word-pair, an-pair, or svo-pair)"
            ))),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            DatasetShape::WordPair => "word-pair",
            DatasetShape::AnPair => "an-pair",
            DatasetShape::SvoPair => "svo-pair",
        }
    }

    /// Whitespace-separated fields per line, gold score included.
    pub fn arity(&self) -> usize {
        match self {
            DatasetShape::WordPair => 3,
            DatasetShape::AnPair => 5,
            DatasetShape::SvoPair => 7,
        }
    }
}

/// One human-rated comparison.
#[derive(Debug, Clone, PartialEq)]
pub enum EvalItem {
    WordPair {
        left: String,
        right: String,
        gold: f64,
    },
    AnPair {
        left: (String, String),
        right: (String, String),
        gold: f64,
    },
    SvoPair {
        left: (String, String, String),
        right: (String, String, String),
        gold: f64,
    },
}

impl EvalItem {
    pub fn shape(&self) -> DatasetShape {
        match self {
            EvalItem::WordPair { .. } => DatasetShape::WordPair,
            EvalItem::AnPair { .. } => DatasetShape::AnPair,
            EvalItem::SvoPair { .. } => DatasetShape::SvoPair,
        }
    }

    pub fn gold(&self) -> f64 {
        match self {
            EvalItem::WordPair { gold, .. }
            | EvalItem::AnPair { gold, .. }
            | EvalItem::SvoPair { gold, .. } => *gold,
        }
    }

    /// Human-readable form for error messages, e.g. `old house / new home`.
    pub fn describe(&self) -> String {
        match self {
            EvalItem::WordPair { left, right, .. } => format!("{left} / {right}"),
            EvalItem::AnPair { left, right, .. } => {
                format!("{} {} / {} {}", left.0, left.1, right.0, right.1)
            }
            EvalItem::SvoPair { left, right, .. } => format!(
                "{} {} {} / {} {} {}",
                left.0, left.1, left.2, right.0, right.1, right.2
            ),
        }
    }
}

/// Load a rated dataset of the declared shape. Lines are whitespace-split;
/// the last field is the gold score.
pub fn load_eval_dataset(path: &Path, shape: DatasetShape) -> Result<Vec<EvalItem>> {
    let text = read_text(path)?;
    let mut items = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let tokens: Vec<String> = line
            .split_whitespace()
            .map(|t| t.to_lowercase())
            .collect();
        if tokens.len() != shape.arity() {
            return Err(parse_err(
                path,
                line_no,
                format!(
                    "expected {} fields for a {} dataset, got {}",
                    shape.arity(),
                    shape.as_str(),
                    tokens.len()
                ),
            ));
        }
        let gold: f64 = tokens[tokens.len() - 1].parse().map_err(|_| {
            parse_err(
                path,
                line_no,
                format!("gold score '{}' is not a number", tokens[tokens.len() - 1]),
            )
        })?;
        if !gold.is_finite() {
            return Err(parse_err(path, line_no, "gold score must be finite"));
        }
        let item = match shape {
            DatasetShape::WordPair => EvalItem::WordPair {
                left: tokens[0].clone(),
                right: tokens[1].clone(),
                gold,
            },
            DatasetShape::AnPair => EvalItem::AnPair {
                left: (tokens[0].clone(), tokens[1].clone()),
                right: (tokens[2].clone(), tokens[3].clone()),
                gold,
            },
            DatasetShape::SvoPair => EvalItem::SvoPair {
                left: (tokens[0].clone(), tokens[1].clone(), tokens[2].clone()),
                right: (tokens[3].clone(), tokens[4].clone(), tokens[5].clone()),
                gold,
            },
        };
        items.push(item);
    }
    Ok(items)
}

/// Load precomputed similarity scores: `word1 TAB word2 TAB score` lines.
/// Pairs are unordered; conflicting duplicate scores are rejected.
pub fn load_phi_matrix(path: &Path) -> Result<PrecomputedPhi> {
    let text = read_text(path)?;
    let mut rows: Vec<(String, String, f64)> = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(parse_err(
                path,
                line_no,
                format!("expected 'word1<TAB>word2<TAB>score', got {} fields", fields.len()),
            ));
        }
        let score: f64 = fields[2].trim().parse().map_err(|_| {
            parse_err(path, line_no, format!("'{}' is not a number", fields[2]))
        })?;
        rows.push((
            fields[0].trim().to_lowercase(),
            fields[1].trim().to_lowercase(),
            score,
        ));
    }
    PrecomputedPhi::from_pairs(&rows)
}

/// Hex SHA-256 of a configuration's canonical text form, stamped into
/// archives so a model can be traced back to the settings that made it.
pub fn config_digest(text: &str) -> String {
    hex_digest(text.as_bytes())
}

fn hex_digest(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    hasher
        .finalize()
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// First line of every model archive.
pub const ARCHIVE_HEADER: &str = "LEXFUN-ARCHIVE v1";

/// What an archive holds, with its dimensions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ArchiveKind {
    AdjectiveFull { n: usize },
    AdjectiveLowRank { n: usize, rank: usize },
    VerbFull { n: usize, s: usize },
    VerbLowRank { n: usize, s: usize, rank: usize },
    /// The adjective-matrix prediction tensor (N x N x D).
    Glf { n: usize, d: usize },
}

impl ArchiveKind {
    pub fn kind_str(&self) -> &'static str {
        match self {
            ArchiveKind::AdjectiveFull { .. } => "adjective-full",
            ArchiveKind::AdjectiveLowRank { .. } => "adjective-lowrank",
            ArchiveKind::VerbFull { .. } => "verb-full",
            ArchiveKind::VerbLowRank { .. } => "verb-lowrank",
            ArchiveKind::Glf { .. } => "glf",
        }
    }

    /// Manifest dimension fields `(n, s, rank, d)`, zero when unused.
    fn dims(&self) -> (usize, usize, usize, usize) {
        match *self {
            ArchiveKind::AdjectiveFull { n } => (n, 0, 0, 0),
            ArchiveKind::AdjectiveLowRank { n, rank } => (n, 0, rank, 0),
            ArchiveKind::VerbFull { n, s } => (n, s, 0, 0),
            ArchiveKind::VerbLowRank { n, s, rank } => (n, s, rank, 0),
            ArchiveKind::Glf { n, d } => (n, 0, 0, d),
        }
    }

    /// Stored floats per record.
    pub fn record_value_len(&self) -> usize {
        match *self {
            ArchiveKind::AdjectiveFull { n } => n * n,
            ArchiveKind::AdjectiveLowRank { n, rank } => 2 * rank * n,
            ArchiveKind::VerbFull { n, s } => s * n * n,
            ArchiveKind::VerbLowRank { n, s, rank } => rank * (s + 2 * n),
            ArchiveKind::Glf { n, d } => n * n * d,
        }
    }

    fn pos(&self) -> Option<Pos> {
        match self {
            ArchiveKind::AdjectiveFull { .. } | ArchiveKind::AdjectiveLowRank { .. } => {
                Some(Pos::Adjective)
            }
            ArchiveKind::VerbFull { .. } | ArchiveKind::VerbLowRank { .. } => Some(Pos::Verb),
            ArchiveKind::Glf { .. } => None,
        }
    }

    fn from_manifest(path: &Path, kind: &str, n: usize, s: usize, rank: usize, d: usize) -> Result<Self> {
        let out = match kind {
            "adjective-full" => ArchiveKind::AdjectiveFull { n },
            "adjective-lowrank" => ArchiveKind::AdjectiveLowRank { n, rank },
            "verb-full" => ArchiveKind::VerbFull { n, s },
            "verb-lowrank" => ArchiveKind::VerbLowRank { n, s, rank },
            "glf" => ArchiveKind::Glf { n, d },
            other => {
                return Err(format_err(path, format!("unknown archive kind '{other}'")))
            }
        };
        let ok = match out {
            ArchiveKind::AdjectiveFull { n } => n >= 1,
            ArchiveKind::AdjectiveLowRank { n, rank } => n >= 1 && rank >= 1,
            ArchiveKind::VerbFull { n, s } => n >= 1 && s >= 1,
            ArchiveKind::VerbLowRank { n, s, rank } => n >= 1 && s >= 1 && rank >= 1,
            ArchiveKind::Glf { n, d } => n >= 1 && d >= 1,
        };
        if !ok {
            return Err(Error::Integrity(format!(
                "archive '{}' declares non-positive dimensions for kind '{kind}'",
                path_str(path)
            )));
        }
        Ok(out)
    }
}

/// Provenance carried by an archive besides the parameters themselves.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelMeta {
    pub kind: ArchiveKind,
    /// Hex digest of the training configuration, empty when unknown.
    pub config_digest: String,
}

fn kind_of_store(store: &ParamsStore) -> Result<ArchiveKind> {
    let (first_word, first) = store
        .iter()
        .next()
        .ok_or_else(|| Error::RejectedInput("cannot archive an empty parameter store".into()))?;
    let kind = match first {
        Params::Matrix(m) => ArchiveKind::AdjectiveFull { n: m.rows() },
        Params::LowRankMatrix(m) => ArchiveKind::AdjectiveLowRank {
            n: m.n(),
            rank: m.rank(),
        },
        Params::Tensor3(t) => ArchiveKind::VerbFull { n: t.n(), s: t.s() },
        Params::LowRankTensor3(t) => ArchiveKind::VerbLowRank {
            n: t.n(),
            s: t.s(),
            rank: t.rank(),
        },
    };
    let pos = kind.pos().expect("store kinds always map to a category");
    for (word, params) in store {
        if word.pos() != pos {
            return Err(Error::RejectedInput(format!(
                "'{word}' does not match the archive category '{}'",
                pos.as_str()
            )));
        }
        if !params.same_shape(first) {
            return Err(Error::RejectedInput(format!(
                "parameters for '{word}' and '{first_word}' differ in kind or shape"
            )));
        }
    }
    Ok(kind)
}

fn check_record_name(name: &str) -> Result<()> {
    if name.is_empty() || name.contains('\t') || name.contains('\n') || name.contains('\r') {
        return Err(Error::RejectedInput(format!(
            "'{name}' cannot be stored in an archive record"
        )));
    }
    Ok(())
}

fn write_archive(
    path: &Path,
    kind: ArchiveKind,
    config_digest: &str,
    records: &[(String, usize, usize)],
    payload: &[u8],
) -> Result<()> {
    if config_digest.chars().any(char::is_whitespace) {
        return Err(Error::RejectedInput(
            "config digest must not contain whitespace".into(),
        ));
    }
    let (n, s, rank, d) = kind.dims();
    let mut text = String::new();
    text.push_str(ARCHIVE_HEADER);
    text.push('\n');
    text.push_str(&format!("kind\t{}\n", kind.kind_str()));
    text.push_str(&format!("n\t{n}\n"));
    text.push_str(&format!("s\t{s}\n"));
    text.push_str(&format!("rank\t{rank}\n"));
    text.push_str(&format!("d\t{d}\n"));
    let digest_field = if config_digest.is_empty() {
        "-"
    } else {
        config_digest
    };
    text.push_str(&format!("config\t{digest_field}\n"));
    text.push_str(&format!("words\t{}\n", records.len()));
    text.push_str(&format!("payload_digest\t{}\n", hex_digest(payload)));
    for (name, offset, len) in records {
        text.push_str(&format!("{name}\t{offset}\t{len}\n"));
    }
    text.push_str(&format!("payload\t{}\n", payload.len()));
    let mut bytes = text.into_bytes();
    bytes.extend_from_slice(payload);
    write_bytes(path, &bytes)?;
    Ok(())
}

/// Write the whole store to one archive file: a text manifest (kind,
/// dimensions, config digest, payload digest, per-word byte ranges)
/// followed by the raw little-endian float payload in sorted word order.
pub fn save_model(store: &ParamsStore, path: &Path, config_digest: &str) -> Result<()> {
    let kind = kind_of_store(store)?;
    let value_len = kind.record_value_len();
    let mut payload: Vec<u8> = Vec::with_capacity(store.len() * value_len * 8);
    let mut records: Vec<(String, usize, usize)> = Vec::with_capacity(store.len());
    for (word, params) in store {
        check_record_name(word.surface())?;
        let flat = params.to_flat();
        debug_assert_eq!(flat.len(), value_len);
        let offset = payload.len();
        for v in &flat {
            payload.extend_from_slice(&v.to_le_bytes());
        }
        records.push((word.surface().to_string(), offset, flat.len() * 8));
    }
    write_archive(path, kind, config_digest, &records, &payload)
}

struct ManifestReader<'a> {
    path: &'a Path,
    buf: &'a [u8],
    pos: usize,
}

impl<'a> ManifestReader<'a> {
    fn next_line(&mut self) -> Result<&'a str> {
        let rest = &self.buf[self.pos..];
        let end = rest
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| format_err(self.path, "manifest ends before its payload marker"))?;
        self.pos += end + 1;
        std::str::from_utf8(&rest[..end])
            .map_err(|_| format_err(self.path, "manifest is not valid UTF-8"))
    }

    fn kv(&mut self, key: &str) -> Result<&'a str> {
        let line = self.next_line()?;
        let (k, v) = line
            .split_once('\t')
            .ok_or_else(|| format_err(self.path, format!("malformed manifest line '{line}'")))?;
        if k != key {
            return Err(format_err(
                self.path,
                format!("expected manifest key '{key}', found '{k}'"),
            ));
        }
        Ok(v)
    }

    fn kv_usize(&mut self, key: &str) -> Result<usize> {
        let v = self.kv(key)?;
        v.parse()
            .map_err(|_| format_err(self.path, format!("manifest key '{key}' is not a count")))
    }
}

/// Archive kind, config digest, per-word `(surface, start, len)` ranges,
/// and the decoded float payload.
type ArchiveContents = (ArchiveKind, String, Vec<(String, usize, usize)>, Vec<f64>);

fn read_archive(path: &Path) -> Result<ArchiveContents> {
    let bytes = read_bytes(path)?;
    let mut reader = ManifestReader {
        path,
        buf: &bytes,
        pos: 0,
    };
    let header = reader.next_line()?;
    if header != ARCHIVE_HEADER {
        return Err(format_err(path, format!("unrecognized header '{header}'")));
    }
    let kind_name = reader.kv("kind")?.to_string();
    let n = reader.kv_usize("n")?;
    let s = reader.kv_usize("s")?;
    let rank = reader.kv_usize("rank")?;
    let d = reader.kv_usize("d")?;
    let kind = ArchiveKind::from_manifest(path, &kind_name, n, s, rank, d)?;
    let config = reader.kv("config")?;
    let config_digest = if config == "-" { String::new() } else { config.to_string() };
    let word_count = reader.kv_usize("words")?;
    let payload_digest = reader.kv("payload_digest")?.to_string();

    let value_len = kind.record_value_len();
    let record_bytes = value_len * 8;
    let mut records: Vec<(String, usize, usize)> = Vec::with_capacity(word_count);
    for i in 0..word_count {
        let line = reader.next_line()?;
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(format_err(
                path,
                format!("record {i} is not 'name<TAB>offset<TAB>length'"),
            ));
        }
        let name = fields[0].to_string();
        let offset: usize = fields[1].parse().map_err(|_| {
            format_err(path, format!("record '{name}' has a malformed offset"))
        })?;
        let len: usize = fields[2].parse().map_err(|_| {
            format_err(path, format!("record '{name}' has a malformed length"))
        })?;
        if len != record_bytes {
            return Err(Error::Integrity(format!(
                "record '{name}' declares {len} bytes; the archive kind requires {record_bytes}"
            )));
        }
        if offset != i * record_bytes {
            return Err(Error::Integrity(format!(
                "record '{name}' is not contiguous with its predecessors"
            )));
        }
        if let Some((prev, _, _)) = records.last() {
            if prev.as_str() >= name.as_str() {
                return Err(Error::Integrity(format!(
                    "records out of order: '{prev}' precedes '{name}'"
                )));
            }
        }
        records.push((name, offset, len));
    }
    let declared_total = reader.kv_usize("payload")?;
    if declared_total != word_count * record_bytes {
        return Err(Error::Integrity(format!(
            "payload declares {declared_total} bytes; {word_count} records of {record_bytes} bytes were announced"
        )));
    }
    let payload = &bytes[reader.pos..];
    if payload.len() != declared_total {
        return Err(Error::Integrity(format!(
            "payload holds {} bytes but the manifest declares {declared_total}",
            payload.len()
        )));
    }
    if hex_digest(payload) != payload_digest {
        return Err(Error::Integrity("payload digest mismatch".into()));
    }
    let mut values = Vec::with_capacity(payload.len() / 8);
    for chunk in payload.chunks_exact(8) {
        values.push(f64::from_le_bytes(chunk.try_into().expect("8-byte chunk")));
    }
    Ok((kind, config_digest, records, values))
}

/// Load a parameter-store archive written by [`save_model`]. Bit-exact:
/// every float comes back with the bits it was saved with.
pub fn load_model(path: &Path) -> Result<(ParamsStore, ModelMeta)> {
    let (kind, config_digest, records, values) = read_archive(path)?;
    let pos = kind.pos().ok_or_else(|| {
        Error::RejectedInput(format!(
            "archive '{}' holds a prediction tensor; load it with the prediction-tensor loader",
            path_str(path)
        ))
    })?;
    let value_len = kind.record_value_len();
    let mut store = ParamsStore::new();
    for (i, (name, _, _)) in records.iter().enumerate() {
        let slice = values[i * value_len..(i + 1) * value_len].to_vec();
        let params = params_from_values(kind, slice)
            .map_err(|e| Error::Integrity(format!("invalid stored values for '{name}': {e}")))?;
        let word = WordId::new(name, pos)?;
        store.insert(word, params);
    }
    Ok((
        store,
        ModelMeta {
            kind,
            config_digest,
        },
    ))
}

fn params_from_values(kind: ArchiveKind, mut values: Vec<f64>) -> Result<Params> {
    match kind {
        ArchiveKind::AdjectiveFull { n } => {
            Ok(Params::Matrix(DenseMatrix::new(n, n, values)?))
        }
        ArchiveKind::AdjectiveLowRank { n, rank } => {
            let v_vals = values.split_off(rank * n);
            let u = DenseMatrix::new(rank, n, values)?;
            let v = DenseMatrix::new(rank, n, v_vals)?;
            Ok(Params::LowRankMatrix(LowRankMatrix::new(u, v)?))
        }
        ArchiveKind::VerbFull { n, s } => {
            Ok(Params::Tensor3(DenseTensor3::new(s, n, values)?))
        }
        ArchiveKind::VerbLowRank { n, s, rank } => {
            let mut tail = values.split_off(rank * s);
            let r_vals = tail.split_off(rank * n);
            let p = DenseMatrix::new(rank, s, values)?;
            let q = DenseMatrix::new(rank, n, tail)?;
            let r = DenseMatrix::new(rank, n, r_vals)?;
            Ok(Params::LowRankTensor3(LowRankTensor3::new(p, q, r)?))
        }
        ArchiveKind::Glf { .. } => Err(Error::RejectedInput(
            "prediction tensors are not per-word parameters".into(),
        )),
    }
}

/// Persist a prediction tensor as a one-record archive of kind `glf`.
pub fn save_glf(g: &GlfTensor, path: &Path, config_digest: &str) -> Result<()> {
    let kind = ArchiveKind::Glf { n: g.n(), d: g.d() };
    let mut payload = Vec::with_capacity(g.values().len() * 8);
    for v in g.values() {
        payload.extend_from_slice(&v.to_le_bytes());
    }
    let records = vec![("glf".to_string(), 0, payload.len())];
    write_archive(path, kind, config_digest, &records, &payload)
}

/// Load a prediction tensor written by [`save_glf`].
pub fn load_glf(path: &Path) -> Result<(GlfTensor, ModelMeta)> {
    let (kind, config_digest, records, values) = read_archive(path)?;
    let (n, d) = match kind {
        ArchiveKind::Glf { n, d } => (n, d),
        other => {
            return Err(Error::RejectedInput(format!(
                "archive '{}' holds '{}' parameters, not a prediction tensor",
                path_str(path),
                other.kind_str()
            )))
        }
    };
    if records.len() != 1 || records[0].0 != "glf" {
        return Err(Error::Integrity(
            "a prediction-tensor archive must hold exactly one record named 'glf'".into(),
        ));
    }
    let tensor = GlfTensor::new(n, d, values)
        .map_err(|e| Error::Integrity(format!("invalid stored prediction tensor: {e}")))?;
    Ok((
        tensor,
        ModelMeta {
            kind,
            config_digest,
        },
    ))
}
