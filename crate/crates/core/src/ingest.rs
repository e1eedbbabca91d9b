//! Reading and writing embedding matrices and label files.
//!
//! `BinaryV1` layout (little-endian throughout):
//!
//! ```text
//! "EMBD"  u16 version=1  u64 n  u32 d  n*d f32 row-major
//! ```

use std::collections::HashSet;
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::{EmbeddingMatrix, LabelVocab, LabeledDataset, Split};
use crate::error::{Error, Result};

pub const BINARY_MAGIC: &[u8; 4] = b"EMBD";
pub const BINARY_VERSION: u16 = 1;
const HEADER_LEN: usize = 4 + 2 + 8 + 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EmbeddingFormat {
    BinaryV1,
    Csv,
}

impl EmbeddingFormat {
    /// `.csv` files are CSV; everything else is treated as `BinaryV1`.
    pub fn from_path(path: &Path) -> Self {
        if has_extension(path, "csv") {
            EmbeddingFormat::Csv
        } else {
            EmbeddingFormat::BinaryV1
        }
    }
}

fn has_extension(path: &Path, ext: &str) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case(ext))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ZeroRowPolicy {
    #[default]
    Reject,
    Drop,
}

#[derive(Debug, Clone)]
pub struct LoadedEmbeddings {
    pub matrix: EmbeddingMatrix,
    /// Original row indices excluded under [`ZeroRowPolicy::Drop`].
    pub dropped_rows: Vec<usize>,
}

pub fn load_embeddings(
    path: impl AsRef<Path>,
    format: EmbeddingFormat,
    policy: ZeroRowPolicy,
) -> Result<LoadedEmbeddings> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let matrix = match format {
        EmbeddingFormat::BinaryV1 => {
            let mut bytes = Vec::new();
            BufReader::new(file)
                .read_to_end(&mut bytes)
                .map_err(|e| Error::io(path, e))?;
            decode_binary(&bytes)?
        }
        EmbeddingFormat::Csv => read_csv_embeddings(BufReader::new(file))?,
    };
    finish_load(matrix, policy)
}

fn finish_load(matrix: EmbeddingMatrix, policy: ZeroRowPolicy) -> Result<LoadedEmbeddings> {
    let zero = matrix.zero_norm_rows();
    let (matrix, dropped_rows) = match (policy, zero.first()) {
        (_, None) => (matrix, Vec::new()),
        (ZeroRowPolicy::Reject, Some(&index)) => return Err(Error::ZeroNormRow { index }),
        (ZeroRowPolicy::Drop, Some(_)) => {
            let zero_set: HashSet<usize> = zero.iter().copied().collect();
            let keep: Vec<usize> = (0..matrix.n()).filter(|i| !zero_set.contains(i)).collect();
            (matrix.select_rows(&keep), zero)
        }
    };
    matrix.validate()?;
    Ok(LoadedEmbeddings {
        matrix,
        dropped_rows,
    })
}

pub fn decode_binary(bytes: &[u8]) -> Result<EmbeddingMatrix> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::Format(format!(
            "file too short for a BinaryV1 header ({} bytes)",
            bytes.len()
        )));
    }
    if &bytes[0..4] != BINARY_MAGIC {
        return Err(Error::Format("bad magic, expected \"EMBD\"".into()));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != BINARY_VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    let n = u64::from_le_bytes(bytes[6..14].try_into().unwrap());
    let d = u32::from_le_bytes(bytes[14..18].try_into().unwrap());
    if n < 2 {
        return Err(Error::Format(format!("header declares n={n}, need n >= 2")));
    }
    if d < 1 {
        return Err(Error::Format("header declares d=0".into()));
    }
    let payload = &bytes[HEADER_LEN..];
    let expected = (n as u128) * (d as u128) * 4;
    if payload.len() as u128 != expected {
        return Err(Error::Format(format!(
            "payload has {} bytes, header implies {expected}",
            payload.len()
        )));
    }
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    EmbeddingMatrix::new(n as usize, d as usize, data)
}

pub fn encode_binary(matrix: &EmbeddingMatrix) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + matrix.as_slice().len() * 4);
    out.extend_from_slice(BINARY_MAGIC);
    out.extend_from_slice(&BINARY_VERSION.to_le_bytes());
    out.extend_from_slice(&(matrix.n() as u64).to_le_bytes());
    out.extend_from_slice(&(matrix.d() as u32).to_le_bytes());
    for x in matrix.as_slice() {
        out.extend_from_slice(&x.to_le_bytes());
    }
    out
}

fn read_csv_embeddings<R: Read>(reader: R) -> Result<EmbeddingMatrix> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut data = Vec::new();
    let mut d = None;
    let mut n = 0;
    for (row, record) in rdr.records().enumerate() {
        let record = record?;
        if record.len() == 1 && record[0].is_empty() {
            continue;
        }
        let width = *d.get_or_insert(record.len());
        if record.len() != width {
            return Err(Error::Format(format!(
                "row {row} has {} values, expected {width}",
                record.len()
            )));
        }
        for field in &record {
            let x: f32 = field
                .parse()
                .map_err(|_| Error::Format(format!("row {row}: cannot parse {field:?}")))?;
            data.push(x);
        }
        n += 1;
    }
    EmbeddingMatrix::new(n, d.unwrap_or(0), data)
}

pub fn write_embeddings(
    path: impl AsRef<Path>,
    matrix: &EmbeddingMatrix,
    format: EmbeddingFormat,
) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let res = match format {
        EmbeddingFormat::BinaryV1 => w.write_all(&encode_binary(matrix)),
        EmbeddingFormat::Csv => write_csv_embeddings(&mut w, matrix),
    };
    res.and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
}

fn write_csv_embeddings<W: Write>(w: &mut W, matrix: &EmbeddingMatrix) -> io::Result<()> {
    for i in 0..matrix.n() {
        let row = matrix.row(i);
        for (j, x) in row.iter().enumerate() {
            if j > 0 {
                w.write_all(b",")?;
            }
            write!(w, "{x}")?;
        }
        w.write_all(b"\n")?;
    }
    Ok(())
}

/// Label-file contents aligned to file order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LabelRecords {
    pub ids: Vec<String>,
    pub labels: Vec<String>,
    pub texts: Vec<Option<String>>,
    pub splits: Vec<Option<Split>>,
}

impl LabelRecords {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    fn push(&mut self, id: String, label: String, text: Option<String>, split: Option<Split>) {
        self.ids.push(id);
        self.labels.push(label);
        self.texts.push(text);
        self.splits.push(split);
    }

    /// Removes the records at the given (sorted or unsorted) positions.
    pub fn drop_rows(&mut self, rows: &[usize]) {
        if rows.is_empty() {
            return;
        }
        let drop: HashSet<usize> = rows.iter().copied().collect();
        let idx: Vec<usize> = (0..self.len()).filter(|i| !drop.contains(i)).collect();
        self.ids = idx
            .iter()
            .map(|&i| std::mem::take(&mut self.ids[i]))
            .collect();
        self.labels = idx
            .iter()
            .map(|&i| std::mem::take(&mut self.labels[i]))
            .collect();
        self.texts = idx.iter().map(|&i| self.texts[i].take()).collect();
        self.splits = idx.iter().map(|&i| self.splits[i]).collect();
    }

    fn check_unique(&self) -> Result<()> {
        let mut seen = HashSet::with_capacity(self.len());
        for id in &self.ids {
            if !seen.insert(id.as_str()) {
                return Err(Error::DuplicateId(id.clone()));
            }
        }
        Ok(())
    }
}

#[derive(Deserialize)]
struct JsonRecord {
    id: Option<String>,
    label: Option<String>,
    text: Option<String>,
    split: Option<Split>,
}

/// Loads JSONL (default) or CSV (`.csv` extension) label records.
pub fn load_labels(path: impl AsRef<Path>) -> Result<LabelRecords> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);
    if has_extension(path, "csv") {
        read_labels_csv(reader)
    } else {
        read_labels_jsonl(reader).map_err(|e| match e {
            Error::Json(j) if j.is_io() => Error::io(path, io::Error::other(j)),
            other => other,
        })
    }
}

pub fn read_labels_jsonl<R: BufRead>(reader: R) -> Result<LabelRecords> {
    let mut out = LabelRecords::default();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(serde_json::Error::io)?;
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let rec: JsonRecord = serde_json::from_str(&line)
            .map_err(|e| Error::Format(format!("line {line_no}: {e}")))?;
        let id = rec.id.ok_or(Error::MissingField {
            line: line_no,
            field: "id",
        })?;
        let label = rec.label.ok_or(Error::MissingField {
            line: line_no,
            field: "label",
        })?;
        out.push(id, label, rec.text, rec.split);
    }
    out.check_unique()?;
    Ok(out)
}

pub fn read_labels_csv<R: Read>(reader: R) -> Result<LabelRecords> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h.trim() == name);
    let id_col = col("id").ok_or(Error::MissingField {
        line: 1,
        field: "id",
    })?;
    let label_col = col("label").ok_or(Error::MissingField {
        line: 1,
        field: "label",
    })?;
    let text_col = col("text");
    let split_col = col("split");
    let mut out = LabelRecords::default();
    for (i, record) in rdr.records().enumerate() {
        let record = record?;
        let line = i + 2;
        let get = |c: usize, field: &'static str| {
            record
                .get(c)
                .map(str::to_owned)
                .ok_or(Error::MissingField { line, field })
        };
        let id = get(id_col, "id")?;
        let label = get(label_col, "label")?;
        let text = text_col.and_then(|c| record.get(c)).map(str::to_owned);
        let split = match split_col.and_then(|c| record.get(c)).map(str::trim) {
            None | Some("") => None,
            Some(s) => Some(s.parse()?),
        };
        out.push(id, label, text, split);
    }
    out.check_unique()?;
    Ok(out)
}

#[derive(Serialize)]
struct JsonRecordOut<'a> {
    id: &'a str,
    label: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    text: Option<&'a str>,
    #[serde(skip_serializing_if = "Option::is_none")]
    split: Option<Split>,
}

/// Writes `ds` as labels JSONL, one record per sample in dataset order.
pub fn write_labels_jsonl<W: Write>(mut w: W, ds: &LabeledDataset) -> io::Result<()> {
    for i in 0..ds.n() {
        let rec = JsonRecordOut {
            id: &ds.ids()[i],
            label: ds.label_name(i),
            text: ds.texts()[i].as_deref(),
            split: ds.splits()[i],
        };
        serde_json::to_writer(&mut w, &rec)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn labels_to_jsonl(ds: &LabeledDataset) -> String {
    let mut buf = Vec::new();
    write_labels_jsonl(&mut buf, ds).expect("writing to a Vec cannot fail");
    String::from_utf8(buf).expect("serde_json emits UTF-8")
}

/// Joins embeddings with label records into a validated dataset.
pub fn join(embeddings: EmbeddingMatrix, records: LabelRecords) -> Result<LabeledDataset> {
    if embeddings.n() != records.len() {
        return Err(Error::CountMismatch {
            embeddings: embeddings.n(),
            labels: records.len(),
        });
    }
    embeddings.validate()?;
    let (vocab, labels) = LabelVocab::from_labels(&records.labels);
    if vocab.len() < 2 {
        return Err(Error::SingleClassDataset);
    }
    LabeledDataset::from_parts(
        records.ids,
        labels,
        vocab,
        records.texts,
        records.splits,
        embeddings,
    )
}

/// Loads and joins an embeddings file and a labels file. Rows dropped for
/// zero norm are removed from the labels too; their indices are returned.
pub fn load_dataset(
    embeddings: impl AsRef<Path>,
    labels: impl AsRef<Path>,
    policy: ZeroRowPolicy,
) -> Result<(LabeledDataset, Vec<usize>)> {
    let embeddings = embeddings.as_ref();
    let loaded = load_embeddings(embeddings, EmbeddingFormat::from_path(embeddings), policy)?;
    let mut records = load_labels(labels)?;
    if !loaded.dropped_rows.is_empty() {
        if records.len() != loaded.matrix.n() + loaded.dropped_rows.len() {
            return Err(Error::CountMismatch {
                embeddings: loaded.matrix.n() + loaded.dropped_rows.len(),
                labels: records.len(),
            });
        }
        records.drop_rows(&loaded.dropped_rows);
    }
    Ok((join(loaded.matrix, records)?, loaded.dropped_rows))
}
