use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::discretize::{discretize_numeric, LogBase};
use super::schema::{FieldKind, FieldSpec, RawRow, Schema};
use crate::error::{Error, Result};

/// Token every infrequent or unseen value folds into. Always local id 0.
pub const OOV_TOKEN: &str = "__OOV__";
/// Token for an empty cell; gets its own slot when seen during training.
pub const MISSING_TOKEN: &str = "__MISSING__";

const HEADER: &str = "#fisel-vocab\t1";

#[derive(Clone, Debug, PartialEq)]
struct VocabField {
    spec: FieldSpec,
    /// local id -> token; index 0 is the OOV slot.
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl VocabField {
    fn new(spec: FieldSpec, tokens: Vec<String>) -> Self {
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Self {
            spec,
            tokens,
            index,
        }
    }
}

/// Field/value index space. Field `i` owns the dense global id range
/// `offsets[i] .. offsets[i] + m_i`.
#[derive(Clone, Debug, PartialEq)]
pub struct Vocabulary {
    fields: Vec<VocabField>,
    offsets: Vec<usize>,
    min_count: usize,
    log_base: LogBase,
}

/// Per-field global value ids and a binary label.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct EncodedSample {
    pub value_ids: Vec<usize>,
    pub label: u8,
}

/// A mini-batch borrowed from a sample collection.
#[derive(Clone, Debug)]
pub struct EncodedBatch<'a> {
    pub samples: Vec<&'a EncodedSample>,
}

impl<'a> EncodedBatch<'a> {
    pub fn new(samples: Vec<&'a EncodedSample>) -> Self {
        Self { samples }
    }

    pub fn gather(all: &'a [EncodedSample], idx: &[usize]) -> Self {
        Self {
            samples: idx.iter().map(|&i| &all[i]).collect(),
        }
    }

    pub fn size(&self) -> usize {
        self.samples.len()
    }

    pub fn labels(&self) -> Vec<f64> {
        self.samples.iter().map(|s| f64::from(s.label)).collect()
    }
}

fn token_of(kind: FieldKind, raw: Option<&str>, base: LogBase) -> String {
    match (kind, raw) {
        (_, None) => MISSING_TOKEN.to_string(),
        (FieldKind::Categorical, Some(t)) => t.to_string(),
        (FieldKind::Numeric, Some(t)) => {
            // Parse errors were rejected while reading the row.
            let x = t.trim().parse::<f64>().ok();
            match discretize_numeric(x, base) {
                Some(b) => b.to_string(),
                None => MISSING_TOKEN.to_string(),
            }
        }
    }
}

/// Counts tokens over `rows` (the training split) and keeps those seen at
/// least `min_count` times. The missing token is kept whenever it occurs.
pub fn build_vocabulary(
    rows: &[RawRow],
    schema: &Schema,
    min_count: usize,
    log_base: LogBase,
) -> Result<Vocabulary> {
    if rows.is_empty() {
        return Err(Error::Dataset("cannot build a vocabulary from zero rows".into()));
    }
    let n = schema.len();
    let mut counts: Vec<HashMap<String, usize>> = vec![HashMap::new(); n];
    for row in rows {
        if row.values.len() != n {
            let name = schema
                .fields
                .get(row.values.len().min(n.saturating_sub(1)))
                .map_or("", |f| f.name.as_str());
            return Err(Error::data(
                row.line,
                format!("row has {} values, schema expects {n} (field '{name}')", row.values.len()),
            ));
        }
        for ((f, value), counts) in schema.fields.iter().zip(&row.values).zip(&mut counts) {
            *counts
                .entry(token_of(f.kind, value.as_deref(), log_base))
                .or_default() += 1;
        }
    }
    let fields = schema
        .fields
        .iter()
        .zip(counts)
        .map(|(spec, counts)| {
            let mut kept: Vec<String> = counts
                .into_iter()
                .filter(|(tok, c)| tok != OOV_TOKEN && (*c >= min_count || tok == MISSING_TOKEN))
                .map(|(tok, _)| tok)
                .collect();
            kept.sort();
            let mut tokens = Vec::with_capacity(kept.len() + 1);
            tokens.push(OOV_TOKEN.to_string());
            tokens.extend(kept);
            VocabField::new(spec.clone(), tokens)
        })
        .collect();
    Ok(Vocabulary::assemble(fields, min_count, log_base))
}

impl Vocabulary {
    fn assemble(fields: Vec<VocabField>, min_count: usize, log_base: LogBase) -> Self {
        let mut offsets = Vec::with_capacity(fields.len());
        let mut acc = 0;
        for f in &fields {
            offsets.push(acc);
            acc += f.tokens.len();
        }
        Self {
            fields,
            offsets,
            min_count,
            log_base,
        }
    }

    /// A vocabulary of anonymous categorical fields with the given sizes
    /// (OOV slot included). Used for synthetic index spaces.
    pub fn with_sizes(sizes: &[usize]) -> Self {
        let fields = sizes
            .iter()
            .enumerate()
            .map(|(i, &m)| {
                assert!(m >= 1, "every field needs at least the OOV slot");
                let mut tokens = vec![OOV_TOKEN.to_string()];
                tokens.extend((1..m).map(|k| format!("v{k}")));
                VocabField::new(
                    FieldSpec {
                        name: format!("f{i}"),
                        kind: FieldKind::Categorical,
                    },
                    tokens,
                )
            })
            .collect();
        Self::assemble(fields, 1, LogBase::NATURAL)
    }

    pub fn n_fields(&self) -> usize {
        self.fields.len()
    }

    /// Total number of values `m`.
    pub fn n_values(&self) -> usize {
        self.offsets.last().map_or(0, |o| o + self.fields.last().unwrap().tokens.len())
    }

    pub fn field_sizes(&self) -> Vec<usize> {
        self.fields.iter().map(|f| f.tokens.len()).collect()
    }

    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    pub fn min_count(&self) -> usize {
        self.min_count
    }

    pub fn log_base(&self) -> LogBase {
        self.log_base
    }

    pub fn field_names(&self) -> Vec<String> {
        self.fields.iter().map(|f| f.spec.name.clone()).collect()
    }

    pub fn schema(&self) -> Schema {
        Schema {
            fields: self.fields.iter().map(|f| f.spec.clone()).collect(),
        }
    }

    pub fn oov_id(&self, field: usize) -> usize {
        self.offsets[field]
    }

    /// Global id of `token` in `field`, OOV if unknown.
    pub fn lookup(&self, field: usize, token: &str) -> usize {
        let f = &self.fields[field];
        self.offsets[field] + f.index.get(token).copied().unwrap_or(0)
    }

    /// Inverse of the global id map: `(field, local id)`.
    pub fn locate(&self, global: usize) -> Option<(usize, usize)> {
        if global >= self.n_values() {
            return None;
        }
        let field = self.offsets.partition_point(|&o| o <= global) - 1;
        Some((field, global - self.offsets[field]))
    }

    pub fn encode_record(&self, row: &RawRow) -> Result<EncodedSample> {
        if row.values.len() != self.n_fields() {
            return Err(Error::data(
                row.line,
                format!(
                    "row has {} values, vocabulary expects {}",
                    row.values.len(),
                    self.n_fields()
                ),
            ));
        }
        if row.label > 1 {
            return Err(Error::data(row.line, format!("label {} is not 0/1", row.label)));
        }
        let value_ids = self
            .fields
            .iter()
            .enumerate()
            .zip(&row.values)
            .map(|((i, f), v)| self.lookup(i, &token_of(f.spec.kind, v.as_deref(), self.log_base)))
            .collect();
        Ok(EncodedSample {
            value_ids,
            label: row.label,
        })
    }

    pub fn encode_all(&self, rows: &[RawRow]) -> Result<Vec<EncodedSample>> {
        rows.iter().map(|r| self.encode_record(r)).collect()
    }

    /// Checks that every id of `sample` lies inside its field's range.
    pub fn validate(&self, sample: &EncodedSample) -> Result<()> {
        if sample.value_ids.len() != self.n_fields() {
            return Err(Error::Contract(format!(
                "sample has {} ids, vocabulary has {} fields",
                sample.value_ids.len(),
                self.n_fields()
            )));
        }
        for (i, &id) in sample.value_ids.iter().enumerate() {
            let lo = self.offsets[i];
            let hi = lo + self.fields[i].tokens.len();
            if id < lo || id >= hi {
                return Err(Error::Index {
                    what: "field value range",
                    index: id,
                    len: hi,
                });
            }
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{HEADER}");
        let _ = writeln!(out, "#n\t{}", self.n_fields());
        let _ = writeln!(out, "#min_count\t{}", self.min_count);
        let _ = writeln!(out, "#log_base\t{:?}", self.log_base.0);
        let join = |v: Vec<usize>| v.iter().map(usize::to_string).collect::<Vec<_>>().join("\t");
        let _ = writeln!(out, "#m_i\t{}", join(self.field_sizes()));
        let _ = writeln!(out, "#offsets\t{}", join(self.offsets.clone()));
        for f in &self.fields {
            let _ = writeln!(out, "#field\t{}\t{}", f.spec.name, f.spec.kind);
        }
        for f in &self.fields {
            for (local, tok) in f.tokens.iter().enumerate() {
                let _ = writeln!(out, "{}\t{}\t{}", f.spec.name, tok, local);
            }
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, l)) if l == HEADER => {}
            _ => return Err(Error::Integrity("not a vocabulary file".into())),
        }
        let bad = |line: usize, msg: &str| Error::data(line + 1, msg.to_string());
        let mut n = None;
        let mut min_count = None;
        let mut log_base = None;
        let mut sizes: Vec<usize> = Vec::new();
        let mut offsets: Vec<usize> = Vec::new();
        let mut specs: Vec<FieldSpec> = Vec::new();
        let mut tokens: Vec<Vec<Option<String>>> = Vec::new();
        for (i, line) in lines {
            let parts: Vec<&str> = line.split('\t').collect();
            match parts[0] {
                "#n" => n = parts.get(1).and_then(|v| v.parse::<usize>().ok()),
                "#min_count" => min_count = parts.get(1).and_then(|v| v.parse::<usize>().ok()),
                "#log_base" => log_base = parts.get(1).and_then(|v| v.parse::<f64>().ok()),
                "#m_i" | "#offsets" => {
                    let vals = parts[1..]
                        .iter()
                        .map(|v| v.parse::<usize>())
                        .collect::<std::result::Result<Vec<_>, _>>()
                        .map_err(|_| bad(i, "bad integer list"))?;
                    if parts[0] == "#m_i" {
                        tokens = sizes_to_slots(&vals);
                        sizes = vals;
                    } else {
                        offsets = vals;
                    }
                }
                "#field" => {
                    if parts.len() != 3 {
                        return Err(bad(i, "malformed #field line"));
                    }
                    specs.push(FieldSpec {
                        name: parts[1].to_string(),
                        kind: parts[2].parse().map_err(|_| bad(i, "bad field kind"))?,
                    });
                }
                _ => {
                    if parts.len() != 3 {
                        return Err(bad(i, "expected field<TAB>token<TAB>local_id"));
                    }
                    let f = specs
                        .iter()
                        .position(|s| s.name == parts[0])
                        .ok_or_else(|| bad(i, "token for undeclared field"))?;
                    let local: usize = parts[2].parse().map_err(|_| bad(i, "bad local id"))?;
                    let slot = tokens
                        .get_mut(f)
                        .and_then(|t| t.get_mut(local))
                        .ok_or_else(|| bad(i, "local id outside m_i"))?;
                    if slot.replace(parts[1].to_string()).is_some() {
                        return Err(bad(i, "duplicate local id"));
                    }
                }
            }
        }
        let n = n.ok_or_else(|| Error::Integrity("vocabulary header lacks #n".into()))?;
        if specs.len() != n || sizes.len() != n || offsets.len() != n {
            return Err(Error::Integrity("vocabulary header is inconsistent".into()));
        }
        let fields = specs
            .into_iter()
            .zip(tokens)
            .map(|(spec, toks)| {
                let toks = toks
                    .into_iter()
                    .collect::<Option<Vec<_>>>()
                    .ok_or_else(|| Error::Integrity(format!("field '{}' has gaps", spec.name)))?;
                Ok(VocabField::new(spec, toks))
            })
            .collect::<Result<Vec<_>>>()?;
        let vocab = Self::assemble(
            fields,
            min_count.ok_or_else(|| Error::Integrity("missing #min_count".into()))?,
            LogBase(log_base.ok_or_else(|| Error::Integrity("missing #log_base".into()))?),
        );
        if vocab.offsets != offsets {
            return Err(Error::Integrity("offsets disagree with m_i".into()));
        }
        Ok(vocab)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }
}

fn sizes_to_slots(sizes: &[usize]) -> Vec<Vec<Option<String>>> {
    sizes.iter().map(|&m| vec![None; m]).collect()
}

/// Encoded split file: `label<TAB>id_1<TAB>...<TAB>id_n` per line.
pub fn write_encoded(path: &Path, samples: &[EncodedSample]) -> Result<()> {
    let mut out = String::new();
    for s in samples {
        let _ = write!(out, "{}", s.label);
        for id in &s.value_ids {
            let _ = write!(out, "\t{id}");
        }
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn read_encoded(path: &Path) -> Result<Vec<EncodedSample>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.is_empty())
        .map(|(i, line)| {
            let mut cells = line.split('\t');
            let label = match cells.next() {
                Some("0") => 0,
                Some("1") => 1,
                _ => return Err(Error::data(i + 1, "label must be 0 or 1")),
            };
            let value_ids = cells
                .map(|c| c.parse::<usize>().map_err(|_| Error::data(i + 1, "bad value id")))
                .collect::<Result<Vec<_>>>()?;
            Ok(EncodedSample { value_ids, label })
        })
        .collect()
}
