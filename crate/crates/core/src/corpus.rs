//! Embedding store, outcome table and the validated [`Corpus`].
//!
//! Embeddings file layout (little-endian):
//!
//! ```text
//! header   "ULE1" | u8 granularity (0=user, 1=message) | u8 includes_embedding_layer | u16 L | u32 H
//! user     u16 id_len | id | u64 total_token_count | L*H f32, layer-major
//! message  u16 id_len | id | u32 message_count | { u16 mid_len | mid | u64 token_count | L*H f32 }*
//! ```
//!
//! Layer sums are stored rather than means so the user average, any
//! message re-weighting and exactness checks can all be reconstructed.
//! A sidecar `<embeddings>.manifest` (key=value lines) carries the model
//! name and free-form notes.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"ULE1";
pub const FORMAT_VERSION: u32 = 1;
pub const DTYPE: &str = "f32le";
pub const DEFAULT_MIN_WORDS: u64 = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Granularity {
    User,
    Message,
}

impl Granularity {
    fn from_byte(b: u8) -> Option<Self> {
        match b {
            0 => Some(Granularity::User),
            1 => Some(Granularity::Message),
            _ => None,
        }
    }

    fn to_byte(self) -> u8 {
        match self {
            Granularity::User => 0,
            Granularity::Message => 1,
        }
    }
}

impl fmt::Display for Granularity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Granularity::User => "user",
            Granularity::Message => "message",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Split {
    #[default]
    Train,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

/// Fixed-size header of an embeddings file.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StoreHeader {
    pub granularity: Granularity,
    pub includes_embedding_layer: bool,
    pub num_layers: usize,
    pub hidden_dim: usize,
}

impl StoreHeader {
    fn record_floats(&self) -> usize {
        self.num_layers * self.hidden_dim
    }
}

/// Description of the model and store conventions.
///
/// `num_layers` counts transformer-block outputs. When
/// `includes_embedding_layer` is set, layer 1 is the embedding output and
/// `num_layers` counts it too.
#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub format_version: u32,
    pub model_name: String,
    pub num_layers: usize,
    pub hidden_dim: usize,
    pub granularity: Granularity,
    pub includes_embedding_layer: bool,
    pub dtype: String,
    pub notes: Vec<String>,
    /// Unrecognised keys, kept verbatim (e.g. extraction-side word counts).
    pub extra: BTreeMap<String, String>,
}

impl Manifest {
    pub fn new(model_name: impl Into<String>, num_layers: usize, hidden_dim: usize) -> Self {
        Manifest {
            format_version: FORMAT_VERSION,
            model_name: model_name.into(),
            num_layers,
            hidden_dim,
            granularity: Granularity::User,
            includes_embedding_layer: false,
            dtype: DTYPE.to_string(),
            notes: Vec::new(),
            extra: BTreeMap::new(),
        }
    }

    fn from_header(header: &StoreHeader) -> Self {
        let mut m = Manifest::new("unknown", header.num_layers, header.hidden_dim);
        m.granularity = header.granularity;
        m.includes_embedding_layer = header.includes_embedding_layer;
        m
    }

    pub fn header(&self) -> StoreHeader {
        StoreHeader {
            granularity: self.granularity,
            includes_embedding_layer: self.includes_embedding_layer,
            num_layers: self.num_layers,
            hidden_dim: self.hidden_dim,
        }
    }

    /// Problems with the manifest itself, as human-readable strings.
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.format_version != FORMAT_VERSION {
            out.push(format!(
                "format_version {} (expected {FORMAT_VERSION})",
                self.format_version
            ));
        }
        if self.num_layers == 0 {
            out.push("num_layers must be >= 1".into());
        }
        if self.hidden_dim == 0 {
            out.push("hidden_dim must be >= 1".into());
        }
        if self.dtype != DTYPE {
            out.push(format!("dtype {:?} (expected {DTYPE})", self.dtype));
        }
        out
    }

    /// Fields that differ between two manifests in ways that make their
    /// corpora incompatible (layer count, width, layer convention, model).
    pub fn incompatibilities(&self, other: &Manifest) -> Vec<String> {
        let mut out = Vec::new();
        if self.model_name != other.model_name {
            out.push(format!("model_name {} vs {}", self.model_name, other.model_name));
        }
        if self.num_layers != other.num_layers {
            out.push(format!("num_layers {} vs {}", self.num_layers, other.num_layers));
        }
        if self.hidden_dim != other.hidden_dim {
            out.push(format!("hidden_dim {} vs {}", self.hidden_dim, other.hidden_dim));
        }
        if self.includes_embedding_layer != other.includes_embedding_layer {
            out.push(format!(
                "includes_embedding_layer {} vs {}",
                self.includes_embedding_layer, other.includes_embedding_layer
            ));
        }
        out
    }

    pub fn to_sidecar(&self) -> String {
        let mut s = String::new();
        s.push_str(&format!("format_version={}\n", self.format_version));
        s.push_str(&format!("model_name={}\n", self.model_name));
        s.push_str(&format!("num_layers={}\n", self.num_layers));
        s.push_str(&format!("hidden_dim={}\n", self.hidden_dim));
        s.push_str(&format!("granularity={}\n", self.granularity));
        s.push_str(&format!("includes_embedding_layer={}\n", self.includes_embedding_layer));
        s.push_str(&format!("dtype={}\n", self.dtype));
        for note in &self.notes {
            s.push_str(&format!("notes={note}\n"));
        }
        for (k, v) in &self.extra {
            s.push_str(&format!("{k}={v}\n"));
        }
        s
    }

    /// Parse a sidecar and reconcile it with the binary header, which is
    /// authoritative for shape.
    pub fn parse_sidecar(text: &str, header: &StoreHeader) -> Result<Self> {
        let mut m = Manifest::from_header(header);
        let mut offset = 0u64;
        for line in text.split_inclusive('\n') {
            let line_offset = offset;
            offset += line.len() as u64;
            let line = line.trim_end_matches(['\n', '\r']);
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::format(line_offset, format!("manifest line without '=': {line:?}")))?;
            let key = key.trim();
            let bad = |what: &str| Error::format(line_offset, format!("manifest {key}: invalid {what} {value:?}"));
            match key {
                "format_version" => m.format_version = value.trim().parse().map_err(|_| bad("integer"))?,
                "model_name" => m.model_name = value.to_string(),
                "dtype" => m.dtype = value.trim().to_string(),
                "notes" => m.notes.push(value.to_string()),
                "num_layers" => {
                    let v: usize = value.trim().parse().map_err(|_| bad("integer"))?;
                    if v != header.num_layers {
                        return Err(Error::Data(format!(
                            "manifest num_layers={v} disagrees with file header L={}",
                            header.num_layers
                        )));
                    }
                }
                "hidden_dim" => {
                    let v: usize = value.trim().parse().map_err(|_| bad("integer"))?;
                    if v != header.hidden_dim {
                        return Err(Error::Data(format!(
                            "manifest hidden_dim={v} disagrees with file header H={}",
                            header.hidden_dim
                        )));
                    }
                }
                "granularity" => {
                    let v = match value.trim() {
                        "user" => Granularity::User,
                        "message" => Granularity::Message,
                        _ => return Err(bad("granularity")),
                    };
                    if v != header.granularity {
                        return Err(Error::Data(format!(
                            "manifest granularity={v} disagrees with file header ({})",
                            header.granularity
                        )));
                    }
                }
                "includes_embedding_layer" => {
                    let v = parse_bool(value.trim()).ok_or_else(|| bad("boolean"))?;
                    if v != header.includes_embedding_layer {
                        return Err(Error::Data(format!(
                            "manifest includes_embedding_layer={v} disagrees with file header"
                        )));
                    }
                }
                _ => {
                    m.extra.insert(key.to_string(), value.to_string());
                }
            }
        }
        Ok(m)
    }
}

fn parse_bool(s: &str) -> Option<bool> {
    match s {
        "true" | "1" => Some(true),
        "false" | "0" => Some(false),
        _ => None,
    }
}

/// Path of the manifest sidecar belonging to an embeddings file.
pub fn sidecar_path(embeddings: &Path) -> PathBuf {
    let mut s = embeddings.as_os_str().to_owned();
    s.push(".manifest");
    PathBuf::from(s)
}

/// Per-user layer sums over every retained token of every message.
#[derive(Debug, Clone, PartialEq)]
pub struct UserEmbeddings {
    pub user_id: String,
    pub total_token_count: u64,
    /// `L * H` values, layer-major.
    pub layer_sums: Vec<f32>,
}

impl UserEmbeddings {
    /// The sum vector of 1-based `layer`.
    pub fn layer(&self, layer: usize, hidden_dim: usize) -> &[f32] {
        let start = (layer - 1) * hidden_dim;
        &self.layer_sums[start..start + hidden_dim]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MessageEmbeddings {
    pub message_id: String,
    pub token_count: u64,
    pub layer_sums: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UserMessages {
    pub user_id: String,
    pub messages: Vec<MessageEmbeddings>,
}

impl UserMessages {
    /// Fold message sums into user sums, left to right in file order.
    pub fn fold(&self, record_floats: usize) -> UserEmbeddings {
        let mut sums = vec![0f32; record_floats];
        let mut count = 0u64;
        for m in &self.messages {
            count += m.token_count;
            for (acc, v) in sums.iter_mut().zip(&m.layer_sums) {
                *acc += *v;
            }
        }
        UserEmbeddings {
            user_id: self.user_id.clone(),
            total_token_count: count,
            layer_sums: sums,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Records {
    Users(Vec<UserEmbeddings>),
    Messages(Vec<UserMessages>),
}

/// An embeddings file as stored, at either granularity.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingStore {
    pub header: StoreHeader,
    pub records: Records,
}

impl EmbeddingStore {
    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(BufReader::new(file), path)
    }

    pub fn read_from<R: BufRead>(reader: R, path: &Path) -> Result<Self> {
        let mut r = OffsetReader {
            inner: reader,
            offset: 0,
            path,
        };
        let mut magic = [0u8; 4];
        r.read_bytes(&mut magic, "magic")?;
        if &magic != MAGIC {
            return Err(Error::format(0, format!("bad magic {magic:?}, expected \"ULE1\"")));
        }
        let granularity = Granularity::from_byte(r.u8("granularity")?)
            .ok_or_else(|| Error::format(4, "granularity byte must be 0 or 1"))?;
        let includes_embedding_layer = match r.u8("includes_embedding_layer")? {
            0 => false,
            1 => true,
            _ => return Err(Error::format(5, "includes_embedding_layer byte must be 0 or 1")),
        };
        let num_layers = r.u16("layer count")? as usize;
        if num_layers == 0 {
            return Err(Error::format(6, "layer count must be >= 1"));
        }
        let hidden_dim = r.u32("hidden dim")? as usize;
        if hidden_dim == 0 {
            return Err(Error::format(8, "hidden dim must be >= 1"));
        }
        let header = StoreHeader {
            granularity,
            includes_embedding_layer,
            num_layers,
            hidden_dim,
        };
        let floats = header.record_floats();
        let records = match granularity {
            Granularity::User => {
                let mut users = Vec::new();
                while !r.at_eof()? {
                    let user_id = r.string("user id")?;
                    let total_token_count = r.u64("token count")?;
                    let layer_sums = r.f32s(floats, "layer sums")?;
                    users.push(UserEmbeddings {
                        user_id,
                        total_token_count,
                        layer_sums,
                    });
                }
                Records::Users(users)
            }
            Granularity::Message => {
                let mut users = Vec::new();
                while !r.at_eof()? {
                    let user_id = r.string("user id")?;
                    let count = r.u32("message count")?;
                    let mut messages = Vec::with_capacity(count as usize);
                    for _ in 0..count {
                        let message_id = r.string("message id")?;
                        let token_count = r.u64("token count")?;
                        let layer_sums = r.f32s(floats, "layer sums")?;
                        messages.push(MessageEmbeddings {
                            message_id,
                            token_count,
                            layer_sums,
                        });
                    }
                    users.push(UserMessages { user_id, messages });
                }
                Records::Messages(users)
            }
        };
        Ok(EmbeddingStore { header, records })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        self.write_to(&mut w).map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> io::Result<()> {
        let h = &self.header;
        w.write_all(MAGIC)?;
        w.write_all(&[h.granularity.to_byte(), h.includes_embedding_layer as u8])?;
        w.write_all(&(h.num_layers as u16).to_le_bytes())?;
        w.write_all(&(h.hidden_dim as u32).to_le_bytes())?;
        match &self.records {
            Records::Users(users) => {
                for u in users {
                    write_str(w, &u.user_id)?;
                    w.write_all(&u.total_token_count.to_le_bytes())?;
                    write_f32s(w, &u.layer_sums)?;
                }
            }
            Records::Messages(users) => {
                for u in users {
                    write_str(w, &u.user_id)?;
                    w.write_all(&(u.messages.len() as u32).to_le_bytes())?;
                    for m in &u.messages {
                        write_str(w, &m.message_id)?;
                        w.write_all(&m.token_count.to_le_bytes())?;
                        write_f32s(w, &m.layer_sums)?;
                    }
                }
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("writing to a Vec cannot fail");
        buf
    }

    /// Per-user sums, folding message records if needed.
    pub fn user_embeddings(&self) -> Vec<UserEmbeddings> {
        match &self.records {
            Records::Users(users) => users.clone(),
            Records::Messages(users) => users.iter().map(|u| u.fold(self.header.record_floats())).collect(),
        }
    }

    pub fn num_users(&self) -> usize {
        match &self.records {
            Records::Users(u) => u.len(),
            Records::Messages(u) => u.len(),
        }
    }
}

fn write_str<W: Write>(w: &mut W, s: &str) -> io::Result<()> {
    let len = u16::try_from(s.len()).map_err(|_| {
        io::Error::new(
            io::ErrorKind::InvalidInput,
            format!("identifier longer than 65535 bytes: {s:.32}..."),
        )
    })?;
    w.write_all(&len.to_le_bytes())?;
    w.write_all(s.as_bytes())
}

fn write_f32s<W: Write>(w: &mut W, values: &[f32]) -> io::Result<()> {
    let mut buf = Vec::with_capacity(values.len() * 4);
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)
}

struct OffsetReader<'p, R> {
    inner: R,
    offset: u64,
    path: &'p Path,
}

impl<R: BufRead> OffsetReader<'_, R> {
    fn read_bytes(&mut self, buf: &mut [u8], what: &str) -> Result<()> {
        let start = self.offset;
        match self.inner.read_exact(buf) {
            Ok(()) => {
                self.offset += buf.len() as u64;
                Ok(())
            }
            Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => {
                Err(Error::format(start, format!("truncated {what}")))
            }
            Err(e) => Err(Error::io(self.path, e)),
        }
    }

    fn at_eof(&mut self) -> Result<bool> {
        self.inner
            .fill_buf()
            .map(|b| b.is_empty())
            .map_err(|e| Error::io(self.path, e))
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        let mut b = [0u8; 1];
        self.read_bytes(&mut b, what)?;
        Ok(b[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        let mut b = [0u8; 2];
        self.read_bytes(&mut b, what)?;
        Ok(u16::from_le_bytes(b))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let mut b = [0u8; 4];
        self.read_bytes(&mut b, what)?;
        Ok(u32::from_le_bytes(b))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        let mut b = [0u8; 8];
        self.read_bytes(&mut b, what)?;
        Ok(u64::from_le_bytes(b))
    }

    fn string(&mut self, what: &str) -> Result<String> {
        let len = self.u16(what)? as usize;
        let start = self.offset;
        let mut b = vec![0u8; len];
        self.read_bytes(&mut b, what)?;
        String::from_utf8(b).map_err(|_| Error::format(start, format!("{what} is not valid UTF-8")))
    }

    fn f32s(&mut self, n: usize, what: &str) -> Result<Vec<f32>> {
        let mut b = vec![0u8; n * 4];
        self.read_bytes(&mut b, what)?;
        Ok(b.chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect())
    }
}

/// user_id → outcome score.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct OutcomeTable {
    pub scores: BTreeMap<String, f64>,
}

impl OutcomeTable {
    pub fn get(&self, user_id: &str) -> Option<f64> {
        self.scores.get(user_id).copied()
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    /// Read a `user_id,score` CSV. With `strict_range`, scores outside
    /// [1, 5] are rejected.
    pub fn read(path: impl AsRef<Path>, strict_range: bool) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(file, strict_range)
    }

    pub fn read_from<R: Read>(reader: R, strict_range: bool) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        let headers = rdr.headers().map_err(csv_err)?.clone();
        if headers.len() != 2 || &headers[0] != "user_id" || &headers[1] != "score" {
            return Err(Error::format(0, "outcomes header must be `user_id,score`"));
        }
        let mut scores = BTreeMap::new();
        for rec in rdr.records() {
            let rec = rec.map_err(csv_err)?;
            let offset = rec.position().map_or(0, |p| p.byte());
            if rec.len() != 2 {
                return Err(Error::format(offset, "outcome row must have two fields"));
            }
            let id = rec[0].to_string();
            let score: f64 = rec[1]
                .trim()
                .parse()
                .map_err(|_| Error::format(offset, format!("score {:?} is not a number", &rec[1])))?;
            if !score.is_finite() {
                return Err(Error::Data(format!("user {id}: non-finite score")));
            }
            if strict_range && !(1.0..=5.0).contains(&score) {
                return Err(Error::Data(format!("user {id}: score {score} outside [1, 5]")));
            }
            if scores.insert(id.clone(), score).is_some() {
                return Err(Error::Data(format!("user {id}: duplicate outcome row")));
            }
        }
        Ok(OutcomeTable { scores })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("user_id,score\n");
        for (id, v) in &self.scores {
            s.push_str(&format!("{id},{v}\n"));
        }
        s
    }
}

fn csv_err(e: csv::Error) -> Error {
    let offset = e.position().map_or(0, |p| p.byte());
    Error::format(offset, e.to_string())
}

/// Users admitted for modelling plus their outcomes.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub manifest: Manifest,
    pub users: Vec<UserEmbeddings>,
    pub outcomes: OutcomeTable,
    pub split: Split,
    pub min_words: u64,
}

impl Corpus {
    /// Build a corpus, dropping users below `min_words` tokens. Nothing
    /// else is checked; see [`validate_corpus`].
    pub fn assemble(
        manifest: Manifest,
        users: Vec<UserEmbeddings>,
        outcomes: OutcomeTable,
        split: Split,
        min_words: u64,
    ) -> Self {
        let users = users.into_iter().filter(|u| u.total_token_count >= min_words).collect();
        Corpus {
            manifest,
            users,
            outcomes,
            split,
            min_words,
        }
    }

    pub fn len(&self) -> usize {
        self.users.len()
    }

    pub fn is_empty(&self) -> bool {
        self.users.is_empty()
    }

    pub fn num_layers(&self) -> usize {
        self.manifest.num_layers
    }

    pub fn hidden_dim(&self) -> usize {
        self.manifest.hidden_dim
    }

    pub fn user_ids(&self) -> Vec<String> {
        self.users.iter().map(|u| u.user_id.clone()).collect()
    }

    /// Outcomes aligned with `users`. Panics on a missing outcome, which
    /// a validated corpus never has.
    pub fn targets(&self) -> Vec<f64> {
        self.users
            .iter()
            .map(|u| {
                self.outcomes
                    .get(&u.user_id)
                    .unwrap_or_else(|| panic!("user {} has no outcome", u.user_id))
            })
            .collect()
    }

    pub fn store(&self) -> EmbeddingStore {
        let mut header = self.manifest.header();
        header.granularity = Granularity::User;
        EmbeddingStore {
            header,
            records: Records::Users(self.users.clone()),
        }
    }

    /// Write the embeddings (user granularity), the manifest sidecar and
    /// the outcomes of admitted users.
    pub fn write(&self, embeddings_path: impl AsRef<Path>, outcomes_path: impl AsRef<Path>) -> Result<()> {
        let embeddings_path = embeddings_path.as_ref();
        self.store().write(embeddings_path)?;
        let mut manifest = self.manifest.clone();
        manifest.granularity = Granularity::User;
        let sidecar = sidecar_path(embeddings_path);
        std::fs::write(&sidecar, manifest.to_sidecar()).map_err(|e| Error::io(&sidecar, e))?;
        let admitted: BTreeMap<String, f64> = self
            .users
            .iter()
            .filter_map(|u| self.outcomes.get(&u.user_id).map(|s| (u.user_id.clone(), s)))
            .collect();
        OutcomeTable { scores: admitted }.write(outcomes_path)
    }
}

#[derive(Debug, Clone)]
pub struct LoadOptions {
    pub min_words: u64,
    pub strict_range: bool,
    pub split: Split,
}

impl Default for LoadOptions {
    fn default() -> Self {
        LoadOptions {
            min_words: DEFAULT_MIN_WORDS,
            strict_range: false,
            split: Split::Train,
        }
    }
}

/// Load, fold, filter and validate a corpus.
pub fn load_corpus(
    embeddings_path: impl AsRef<Path>,
    outcomes_path: impl AsRef<Path>,
    min_words: u64,
) -> Result<Corpus> {
    load_corpus_with(
        embeddings_path,
        outcomes_path,
        &LoadOptions {
            min_words,
            ..LoadOptions::default()
        },
    )
}

pub fn load_corpus_with(
    embeddings_path: impl AsRef<Path>,
    outcomes_path: impl AsRef<Path>,
    opts: &LoadOptions,
) -> Result<Corpus> {
    let corpus = load_unvalidated(embeddings_path, outcomes_path, opts)?;
    let violations = validate_corpus(&corpus);
    if !violations.is_empty() {
        let shown: Vec<String> = violations.iter().take(5).map(|v| v.to_string()).collect();
        let more = violations.len().saturating_sub(5);
        let mut msg = shown.join("; ");
        if more > 0 {
            msg.push_str(&format!("; and {more} more"));
        }
        return Err(Error::Data(msg));
    }
    if corpus.is_empty() {
        return Err(Error::Data(format!(
            "no users with at least {} tokens remain",
            opts.min_words
        )));
    }
    Ok(corpus)
}

/// Load and filter without validating, so violations can be listed.
/// Format errors still fail.
pub fn load_unvalidated(
    embeddings_path: impl AsRef<Path>,
    outcomes_path: impl AsRef<Path>,
    opts: &LoadOptions,
) -> Result<Corpus> {
    let embeddings_path = embeddings_path.as_ref();
    let store = EmbeddingStore::read(embeddings_path)?;
    let sidecar = sidecar_path(embeddings_path);
    let manifest = match std::fs::read_to_string(&sidecar) {
        Ok(text) => Manifest::parse_sidecar(&text, &store.header)?,
        Err(e) if e.kind() == io::ErrorKind::NotFound => Manifest::from_header(&store.header),
        Err(e) => return Err(Error::io(&sidecar, e)),
    };
    let outcomes = OutcomeTable::read(outcomes_path, opts.strict_range)?;
    Ok(Corpus::assemble(
        manifest,
        store.user_embeddings(),
        outcomes,
        opts.split,
        opts.min_words,
    ))
}

/// Write `c` next to `path` (embeddings, sidecar, `<path>.outcomes.csv`)
/// and load it back.
pub fn roundtrip(c: &Corpus, path: impl AsRef<Path>) -> Result<Corpus> {
    let path = path.as_ref();
    let outcomes = outcomes_path_for(path);
    c.write(path, &outcomes)?;
    load_corpus_with(
        path,
        &outcomes,
        &LoadOptions {
            min_words: c.min_words,
            strict_range: false,
            split: c.split,
        },
    )
}

pub fn outcomes_path_for(embeddings: &Path) -> PathBuf {
    let mut s = embeddings.as_os_str().to_owned();
    s.push(".outcomes.csv");
    PathBuf::from(s)
}

#[derive(Debug, Clone, PartialEq)]
pub enum Rule {
    InvalidManifest(String),
    DuplicateUser,
    MissingOutcome,
    NonFiniteOutcome,
    LayerCount { found: usize, expected: usize },
    RaggedVector { len: usize, hidden_dim: usize },
    NonFinite,
    ZeroTokens,
    BelowMinWords { count: u64, min_words: u64 },
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Rule::InvalidManifest(m) => write!(f, "invalid manifest: {m}"),
            Rule::DuplicateUser => f.write_str("duplicate user_id"),
            Rule::MissingOutcome => f.write_str("no outcome row for user"),
            Rule::NonFiniteOutcome => f.write_str("non-finite outcome"),
            Rule::LayerCount { found, expected } => {
                write!(f, "{found} layer vectors, expected {expected}")
            }
            Rule::RaggedVector { len, hidden_dim } => {
                write!(f, "{len} values is not a multiple of hidden_dim {hidden_dim}")
            }
            Rule::NonFinite => f.write_str("non-finite entry"),
            Rule::ZeroTokens => f.write_str("zero token count"),
            Rule::BelowMinWords { count, min_words } => {
                write!(f, "{count} tokens below min_words {min_words}")
            }
        }
    }
}

/// One broken invariant. `layer` is 1-based.
#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub user_id: Option<String>,
    pub layer: Option<usize>,
    pub rule: Rule,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let Some(u) = &self.user_id {
            write!(f, "user {u}: ")?;
        }
        if let Some(l) = self.layer {
            write!(f, "layer {l}: ")?;
        }
        write!(f, "{}", self.rule)
    }
}

/// Every broken invariant of `c`. Empty iff the corpus is valid.
pub fn validate_corpus(c: &Corpus) -> Vec<Violation> {
    let mut out = Vec::new();
    for p in c.manifest.problems() {
        out.push(Violation {
            user_id: None,
            layer: None,
            rule: Rule::InvalidManifest(p),
        });
    }
    let (l, h) = (c.manifest.num_layers, c.manifest.hidden_dim);
    let mut seen = HashSet::new();
    for u in &c.users {
        let v = |layer, rule| Violation {
            user_id: Some(u.user_id.clone()),
            layer,
            rule,
        };
        if !seen.insert(u.user_id.as_str()) {
            out.push(v(None, Rule::DuplicateUser));
        }
        match c.outcomes.get(&u.user_id) {
            None => out.push(v(None, Rule::MissingOutcome)),
            Some(s) if !s.is_finite() => out.push(v(None, Rule::NonFiniteOutcome)),
            Some(_) => {}
        }
        if u.total_token_count == 0 {
            out.push(v(None, Rule::ZeroTokens));
        }
        if u.total_token_count < c.min_words {
            out.push(v(
                None,
                Rule::BelowMinWords {
                    count: u.total_token_count,
                    min_words: c.min_words,
                },
            ));
        }
        if h == 0 {
            continue;
        }
        if u.layer_sums.len() % h != 0 {
            out.push(v(
                None,
                Rule::RaggedVector {
                    len: u.layer_sums.len(),
                    hidden_dim: h,
                },
            ));
        } else if u.layer_sums.len() / h != l {
            out.push(v(
                None,
                Rule::LayerCount {
                    found: u.layer_sums.len() / h,
                    expected: l,
                },
            ));
        }
        for (i, chunk) in u.layer_sums.chunks(h).enumerate() {
            if chunk.iter().any(|x| !x.is_finite()) {
                out.push(v(Some(i + 1), Rule::NonFinite));
            }
        }
    }
    out
}
