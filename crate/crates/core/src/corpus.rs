//! On-disk data model: embedding matrices, label tables and partitions.
//!
//! Embedding file layout (all integers and floats little-endian):
//!
//! ```text
//! "EMB1" | n: u32 | d: u32 | n*d f32 values, row-major | n lines of ids, "\n"-terminated
//! ```
//!
//! Values are promoted to `f64` on load; saving narrows them back to `f32`,
//! so `load -> save` reproduces a file bit for bit.
//!
//! Label files are tab-separated with a header row. The `id` and `speaker`
//! columns are mandatory; multi-label cells use `|` between tokens.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

pub const EMBEDDING_MAGIC: &[u8; 4] = b"EMB1";
pub const MULTI_LABEL_SEPARATOR: char = '|';

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    n_rows: usize,
    dim: usize,
    values: Vec<f64>,
    row_ids: Vec<String>,
}

impl EmbeddingMatrix {
    pub fn new(n_rows: usize, dim: usize, values: Vec<f64>, row_ids: Vec<String>) -> Result<Self> {
        if n_rows == 0 || dim == 0 {
            return Err(Error::Empty(format!("embedding matrix is {n_rows}x{dim}")));
        }
        if values.len() != n_rows * dim {
            return Err(Error::Shape(format!(
                "{} values for a {n_rows}x{dim} matrix",
                values.len()
            )));
        }
        if row_ids.len() != n_rows {
            return Err(Error::Shape(format!("{} ids for {n_rows} rows", row_ids.len())));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Value(format!(
                "non-finite value at row {}, column {}",
                pos / dim,
                pos % dim
            )));
        }
        let mut seen = HashSet::with_capacity(n_rows);
        for id in &row_ids {
            if id.contains('\n') {
                return Err(Error::Value(format!("row id {id:?} contains a newline")));
            }
            if !seen.insert(id.as_str()) {
                return Err(Error::DuplicateId(id.clone()));
            }
        }
        Ok(Self {
            n_rows,
            dim,
            values,
            row_ids,
        })
    }

    /// Builds a matrix with ids `"0"`, `"1"`, ... from row vectors.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().find(|r| r.len() != dim) {
            return Err(Error::Shape(format!("ragged rows: {} vs {dim}", bad.len())));
        }
        let values = rows.iter().flatten().copied().collect();
        let ids = (0..rows.len()).map(|i| i.to_string()).collect();
        Self::new(rows.len(), dim, values, ids)
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row_ids(&self) -> &[String] {
        &self.row_ids
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> std::slice::ChunksExact<'_, f64> {
        self.values.chunks_exact(self.dim)
    }

    /// New matrix holding the given rows, in the given order.
    pub fn select_rows(&self, indices: &[usize]) -> Result<Self> {
        let mut values = Vec::with_capacity(indices.len() * self.dim);
        let mut ids = Vec::with_capacity(indices.len());
        for &i in indices {
            values.extend_from_slice(self.row(i));
            ids.push(self.row_ids[i].clone());
        }
        Self::new(indices.len(), self.dim, values, ids)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let id_bytes: usize = self.row_ids.iter().map(|s| s.len() + 1).sum();
        let mut out = Vec::with_capacity(12 + 4 * self.values.len() + id_bytes);
        out.extend_from_slice(EMBEDDING_MAGIC);
        out.extend_from_slice(&(self.n_rows as u32).to_le_bytes());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        for &v in &self.values {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
        for id in &self.row_ids {
            out.extend_from_slice(id.as_bytes());
            out.push(b'\n');
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 4 || &bytes[..4] != EMBEDDING_MAGIC {
            return Err(Error::Format("missing EMB1 magic".into()));
        }
        if bytes.len() < 12 {
            return Err(Error::Truncated(format!("header is {} bytes, need 12", bytes.len())));
        }
        let n = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        let d = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        if n == 0 || d == 0 {
            return Err(Error::Empty(format!("header declares {n}x{d}")));
        }
        let payload_len = n
            .checked_mul(d)
            .and_then(|c| c.checked_mul(4))
            .ok_or_else(|| Error::Format(format!("header size {n}x{d} overflows")))?;
        let payload_end = 12 + payload_len;
        if bytes.len() < payload_end {
            return Err(Error::Truncated(format!(
                "payload has {} bytes, header declares {payload_len}",
                bytes.len() - 12
            )));
        }
        let values: Vec<f64> = bytes[12..payload_end]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();

        let tail = &bytes[payload_end..];
        let mut ids = Vec::with_capacity(n);
        let mut rest = tail;
        while ids.len() < n {
            let Some(end) = rest.iter().position(|&b| b == b'\n') else {
                return Err(Error::Truncated(format!(
                    "found {} of {n} row ids",
                    ids.len()
                )));
            };
            let id = std::str::from_utf8(&rest[..end])
                .map_err(|e| Error::Format(format!("row id {} is not UTF-8: {e}", ids.len())))?;
            ids.push(id.to_owned());
            rest = &rest[end + 1..];
        }
        if !rest.is_empty() {
            return Err(Error::Format(format!("{} trailing bytes after ids", rest.len())));
        }
        Self::new(n, d, values, ids)
    }
}

pub fn load_embeddings(path: impl AsRef<Path>) -> Result<EmbeddingMatrix> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    EmbeddingMatrix::from_bytes(&bytes).map_err(|e| e.context(path.display().to_string()))
}

pub fn save_embeddings(emb: &EmbeddingMatrix, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, emb.to_bytes()).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Speaker {
    User,
    System,
}

impl Speaker {
    pub fn as_str(self) -> &'static str {
        match self {
            Speaker::User => "user",
            Speaker::System => "system",
        }
    }
}

impl fmt::Display for Speaker {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Speaker {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "user" | "usr" | "USER" => Ok(Speaker::User),
            "system" | "sys" | "SYSTEM" => Ok(Speaker::System),
            other => Err(Error::Value(format!("unknown speaker {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FieldKind {
    Single,
    Multi,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LabelValue {
    Single(String),
    Multi(BTreeSet<String>),
}

impl LabelValue {
    /// Class name: the token itself, or the sorted `|`-joined set.
    pub fn class_name(&self) -> String {
        match self {
            LabelValue::Single(s) => s.clone(),
            LabelValue::Multi(set) => {
                let parts: Vec<&str> = set.iter().map(String::as_str).collect();
                parts.join("|")
            }
        }
    }

    pub fn is_empty(&self) -> bool {
        match self {
            LabelValue::Single(s) => s.is_empty(),
            LabelValue::Multi(set) => set.is_empty(),
        }
    }

    /// Individual tokens; a single label yields itself.
    pub fn tokens(&self) -> Vec<&str> {
        match self {
            LabelValue::Single(s) => vec![s.as_str()],
            LabelValue::Multi(set) => set.iter().map(String::as_str).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct LabelColumn {
    name: String,
    kind: FieldKind,
    values: Vec<LabelValue>,
}

/// Per-utterance annotations, stored column-wise.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelTable {
    ids: Vec<String>,
    speakers: Vec<Speaker>,
    columns: Vec<LabelColumn>,
    index: HashMap<String, usize>,
}

impl LabelTable {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn speakers(&self) -> &[Speaker] {
        &self.speakers
    }

    pub fn row_of(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn field_names(&self) -> impl Iterator<Item = &str> {
        self.columns.iter().map(|c| c.name.as_str())
    }

    pub fn field_kind(&self, field: &str) -> Result<FieldKind> {
        Ok(self.column(field)?.kind)
    }

    pub fn values(&self, field: &str) -> Result<&[LabelValue]> {
        Ok(&self.column(field)?.values)
    }

    fn column(&self, field: &str) -> Result<&LabelColumn> {
        self.columns
            .iter()
            .find(|c| c.name == field)
            .ok_or_else(|| Error::Schema(format!("unknown field {field:?}")))
    }

    /// New table holding the given rows, in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> LabelTable {
        let ids: Vec<String> = rows.iter().map(|&r| self.ids[r].clone()).collect();
        let index = ids.iter().enumerate().map(|(i, id)| (id.clone(), i)).collect();
        LabelTable {
            speakers: rows.iter().map(|&r| self.speakers[r]).collect(),
            columns: self
                .columns
                .iter()
                .map(|c| LabelColumn {
                    name: c.name.clone(),
                    kind: c.kind,
                    values: rows.iter().map(|&r| c.values[r].clone()).collect(),
                })
                .collect(),
            ids,
            index,
        }
    }

    /// Parses TSV text. `schema` names the label columns to keep and their kind.
    pub fn parse(text: &str, schema: &[(&str, FieldKind)]) -> Result<Self> {
        let mut lines = text.split('\n');
        let header: Vec<&str> = lines
            .next()
            .filter(|h| !h.is_empty())
            .ok_or_else(|| Error::Schema("label file has no header".into()))?
            .trim_end_matches('\r')
            .split('\t')
            .collect();
        let col = |name: &str| {
            header
                .iter()
                .position(|h| *h == name)
                .ok_or_else(|| Error::Schema(format!("missing column {name:?}")))
        };
        let id_col = col("id")?;
        let speaker_col = col("speaker")?;
        let field_cols = schema
            .iter()
            .map(|(name, _)| col(name))
            .collect::<Result<Vec<_>>>()?;

        let mut ids = Vec::new();
        let mut speakers = Vec::new();
        let mut columns: Vec<LabelColumn> = schema
            .iter()
            .map(|(name, kind)| LabelColumn {
                name: (*name).to_owned(),
                kind: *kind,
                values: Vec::new(),
            })
            .collect();
        let mut index = HashMap::new();

        for (lineno, line) in lines.enumerate() {
            let line = line.trim_end_matches('\r');
            if line.is_empty() {
                continue;
            }
            let line_no = lineno + 2;
            let cells: Vec<&str> = line.split('\t').collect();
            if cells.len() != header.len() {
                return Err(Error::Format(format!(
                    "line {line_no}: {} cells, header has {}",
                    cells.len(),
                    header.len()
                )));
            }
            let id = cells[id_col];
            if id.is_empty() {
                return Err(Error::Missing(format!("line {line_no}: empty id")));
            }
            if index.insert(id.to_owned(), ids.len()).is_some() {
                return Err(Error::DuplicateId(id.to_owned()));
            }
            ids.push(id.to_owned());
            speakers.push(
                cells[speaker_col]
                    .parse()
                    .map_err(|e: Error| e.context(format!("line {line_no}")))?,
            );
            for (column, &c) in columns.iter_mut().zip(&field_cols) {
                let cell = cells[c];
                let value = match column.kind {
                    FieldKind::Single if cell.is_empty() => {
                        return Err(Error::Missing(format!(
                            "line {line_no}: empty {:?} for id {id:?}",
                            column.name
                        )))
                    }
                    FieldKind::Single => LabelValue::Single(cell.to_owned()),
                    FieldKind::Multi => LabelValue::Multi(
                        cell.split(MULTI_LABEL_SEPARATOR)
                            .filter(|t| !t.is_empty())
                            .map(str::to_owned)
                            .collect(),
                    ),
                };
                column.values.push(value);
            }
        }
        if ids.is_empty() {
            return Err(Error::Empty("label file has no rows".into()));
        }
        Ok(LabelTable {
            ids,
            speakers,
            columns,
            index,
        })
    }
}

pub fn load_labels(path: impl AsRef<Path>, schema: &[(&str, FieldKind)]) -> Result<LabelTable> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    LabelTable::parse(&text, schema).map_err(|e| e.context(path.display().to_string()))
}

/// Restricts both inputs to the rows passing `speaker`, in embedding order.
pub fn align(
    emb: &EmbeddingMatrix,
    labels: &LabelTable,
    speaker: Option<Speaker>,
) -> Result<(EmbeddingMatrix, LabelTable)> {
    let mut missing = Vec::new();
    let mut emb_rows = Vec::new();
    let mut label_rows = Vec::new();
    for (i, id) in emb.row_ids().iter().enumerate() {
        match labels.row_of(id) {
            None => missing.push(id.clone()),
            Some(r) if speaker.is_none_or(|s| labels.speakers[r] == s) => {
                emb_rows.push(i);
                label_rows.push(r);
            }
            Some(_) => {}
        }
    }
    if !missing.is_empty() {
        return Err(Error::Join(missing));
    }
    if emb_rows.is_empty() {
        let side = speaker.map_or("any", Speaker::as_str);
        return Err(Error::Empty(format!("no rows for speaker {side}")));
    }
    Ok((emb.select_rows(&emb_rows)?, labels.select_rows(&label_rows)))
}

/// Assignment of items to classes `0..C`, every class non-empty.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partition {
    assignments: Vec<usize>,
    class_names: Vec<String>,
}

impl Partition {
    /// Builds a partition from arbitrary keys; class ids follow first occurrence.
    pub fn from_keys<K, I>(keys: I) -> Self
    where
        I: IntoIterator<Item = K>,
        K: Eq + std::hash::Hash + ToString,
    {
        let mut ids: HashMap<K, usize> = HashMap::new();
        let mut class_names = Vec::new();
        let assignments = keys
            .into_iter()
            .map(|k| {
                let next = ids.len();
                *ids.entry(k).or_insert_with_key(|k| {
                    class_names.push(k.to_string());
                    next
                })
            })
            .collect();
        Partition {
            assignments,
            class_names,
        }
    }

    /// Compacts raw cluster indices (possibly with gaps) into a partition.
    pub fn from_assignments(raw: &[usize]) -> Self {
        Self::from_keys(raw.iter().copied())
    }

    pub fn assignments(&self) -> &[usize] {
        &self.assignments
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn n_items(&self) -> usize {
        self.assignments.len()
    }

    pub fn n_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn class_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.n_classes()];
        for &a in &self.assignments {
            sizes[a] += 1;
        }
        sizes
    }

    pub fn select(&self, rows: &[usize]) -> Partition {
        let mut remap = vec![usize::MAX; self.n_classes()];
        let mut class_names = Vec::new();
        let assignments = rows
            .iter()
            .map(|&r| {
                let old = self.assignments[r];
                if remap[old] == usize::MAX {
                    remap[old] = class_names.len();
                    class_names.push(self.class_names[old].clone());
                }
                remap[old]
            })
            .collect();
        Partition {
            assignments,
            class_names,
        }
    }
}

/// Partition of the table's rows by the value of `field`.
///
/// Multi-label fields map every distinct label set (including the empty set)
/// to its own class.
pub fn label_partition(labels: &LabelTable, field: &str) -> Result<Partition> {
    let values = labels.values(field)?;
    Ok(Partition::from_keys(values.iter().map(LabelValue::class_name)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn matrix_2x3() -> EmbeddingMatrix {
        EmbeddingMatrix::new(
            2,
            3,
            vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0],
            vec!["a".into(), "b".into()],
        )
        .unwrap()
    }

    #[test]
    fn embedding_round_trip() {
        let m = matrix_2x3();
        let bytes = m.to_bytes();
        assert_eq!(&bytes[..4], b"EMB1");
        assert_eq!(bytes.len(), 12 + 24 + 4);
        let back = EmbeddingMatrix::from_bytes(&bytes).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.row(1), &[4.0, 5.0, 6.0]);
    }

    #[test]
    fn truncated_payload() {
        let mut bytes = Vec::new();
        bytes.extend_from_slice(b"EMB1");
        bytes.extend_from_slice(&2u32.to_le_bytes());
        bytes.extend_from_slice(&3u32.to_le_bytes());
        for v in [1.0f32, 2.0, 3.0, 4.0, 5.0] {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        let err = EmbeddingMatrix::from_bytes(&bytes).unwrap_err();
        assert!(matches!(err, Error::Truncated(_)), "{err}");
    }

    #[test]
    fn missing_ids_are_truncation() {
        let mut bytes = matrix_2x3().to_bytes();
        bytes.truncate(bytes.len() - 2);
        assert!(matches!(
            EmbeddingMatrix::from_bytes(&bytes),
            Err(Error::Truncated(_))
        ));
    }

    #[test]
    fn trailing_bytes_rejected() {
        let mut bytes = matrix_2x3().to_bytes();
        bytes.push(b'x');
        assert!(matches!(
            EmbeddingMatrix::from_bytes(&bytes),
            Err(Error::Format(_))
        ));
    }

    #[test]
    fn empty_header() {
        let mut bytes = Vec::new();
        bytes.extend_from_slice(b"EMB1");
        bytes.extend_from_slice(&0u32.to_le_bytes());
        bytes.extend_from_slice(&3u32.to_le_bytes());
        assert!(matches!(
            EmbeddingMatrix::from_bytes(&bytes),
            Err(Error::Empty(_))
        ));
    }

    #[test]
    fn bad_magic() {
        let mut bytes = matrix_2x3().to_bytes();
        bytes[0] = b'X';
        assert!(matches!(
            EmbeddingMatrix::from_bytes(&bytes),
            Err(Error::Format(_))
        ));
    }

    #[test]
    fn non_finite_rejected() {
        let mut bytes = matrix_2x3().to_bytes();
        bytes[12..16].copy_from_slice(&f32::NAN.to_le_bytes());
        assert!(matches!(
            EmbeddingMatrix::from_bytes(&bytes),
            Err(Error::Value(_))
        ));
    }

    const TSV: &str = "id\tspeaker\tdomain\tslots\n\
                       u1\tuser\thotel\tfood|price\n\
                       s1\tsystem\thotel\tprice|food\n\
                       u2\tuser\ttaxi\t\n\
                       s2\tsystem\ttrain\tprice|location\n";

    fn schema() -> Vec<(&'static str, FieldKind)> {
        vec![("domain", FieldKind::Single), ("slots", FieldKind::Multi)]
    }

    #[test]
    fn multi_label_cells_are_sets() {
        let t = LabelTable::parse(TSV, &schema()).unwrap();
        let slots = t.values("slots").unwrap();
        assert_eq!(slots[0], slots[1]);
        assert_eq!(slots[0].class_name(), "food|price");
        assert!(slots[2].is_empty());
        assert_eq!(t.speakers()[1], Speaker::System);
    }

    #[test]
    fn empty_single_label_is_missing() {
        let text = "id\tspeaker\tdomain\nu1\tuser\t\n";
        let err = LabelTable::parse(text, &[("domain", FieldKind::Single)]).unwrap_err();
        assert!(matches!(err, Error::Missing(_)));
    }

    #[test]
    fn duplicate_ids_and_missing_columns() {
        let text = "id\tspeaker\tdomain\nu1\tuser\ta\nu1\tuser\tb\n";
        assert!(matches!(
            LabelTable::parse(text, &[("domain", FieldKind::Single)]),
            Err(Error::DuplicateId(_))
        ));
        assert!(matches!(
            LabelTable::parse(text, &[("intent", FieldKind::Single)]),
            Err(Error::Schema(_))
        ));
        assert!(matches!(
            LabelTable::parse("id\tdomain\nu1\ta\n", &[]),
            Err(Error::Schema(_))
        ));
    }

    fn emb_for(ids: &[&str]) -> EmbeddingMatrix {
        let values = (0..ids.len()).map(|i| i as f64).collect();
        EmbeddingMatrix::new(ids.len(), 1, values, ids.iter().map(|s| s.to_string()).collect())
            .unwrap()
    }

    #[test]
    fn align_filters_by_speaker_in_embedding_order() {
        let t = LabelTable::parse(TSV, &schema()).unwrap();
        let emb = emb_for(&["s2", "u2", "s1", "u1"]);
        let (e, l) = align(&emb, &t, Some(Speaker::User)).unwrap();
        assert_eq!(e.row_ids(), &["u2".to_string(), "u1".to_string()]);
        assert_eq!(e.values(), &[1.0, 3.0]);
        assert_eq!(l.ids(), e.row_ids());
        assert_eq!(l.values("domain").unwrap()[0], LabelValue::Single("taxi".into()));

        let (e, l) = align(&emb, &t, None).unwrap();
        assert_eq!(e, emb);
        assert_eq!(l.ids(), emb.row_ids());
    }

    #[test]
    fn align_reports_unmatched_ids() {
        let t = LabelTable::parse(TSV, &schema()).unwrap();
        let emb = emb_for(&["u1", "ghost"]);
        match align(&emb, &t, None) {
            Err(Error::Join(ids)) => assert_eq!(ids, vec!["ghost".to_string()]),
            other => panic!("expected JoinError, got {other:?}"),
        }
    }

    #[test]
    fn set_partition_matches_three_combinations() {
        let text = "id\tspeaker\tslots\n\
                    a\tuser\tfood\n\
                    b\tuser\tfood|price\n\
                    c\tuser\tprice|location\n\
                    d\tuser\tprice|food\n";
        let t = LabelTable::parse(text, &[("slots", FieldKind::Multi)]).unwrap();
        let p = label_partition(&t, "slots").unwrap();
        assert_eq!(p.n_classes(), 3);
        assert_eq!(p.assignments(), &[0, 1, 2, 1]);
        assert_eq!(p.class_names()[2], "location|price");
    }

    #[test]
    fn empty_set_is_its_own_class() {
        let text = "id\tspeaker\tslots\na\tuser\t\nb\tuser\tfood\nc\tuser\t\n";
        let t = LabelTable::parse(text, &[("slots", FieldKind::Multi)]).unwrap();
        let p = label_partition(&t, "slots").unwrap();
        assert_eq!(p.assignments(), &[0, 1, 0]);
        assert_eq!(p.class_names(), &["".to_string(), "food".to_string()]);
        assert!(matches!(label_partition(&t, "acts"), Err(Error::Schema(_))));
    }

    #[test]
    fn partition_select_compacts() {
        let p = Partition::from_keys(["x", "y", "z", "y"]);
        let s = p.select(&[1, 3, 2]);
        assert_eq!(s.assignments(), &[0, 0, 1]);
        assert_eq!(s.class_names(), &["y".to_string(), "z".to_string()]);
    }
}
