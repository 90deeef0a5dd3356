//! On-disk formats: EMB1 embedding matrices and the plain-text label, class
//! name and labelled-set files.
//!
//! EMB1 is little-endian: the magic `EMB1`, a `u32` version (1), `u32` row
//! count, `u32` dimension, then `rows * dim` IEEE-754 `f32` values row-major.

use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use semitune_core::{ClassEmbeddings, EmbeddingSet};

pub const MAGIC: [u8; 4] = *b"EMB1";
pub const VERSION: u32 = 1;
const HEADER_LEN: usize = 16;

#[derive(Debug, thiserror::Error)]
pub enum FormatError {
    #[error("{path}: malformed header: {reason}")]
    MalformedHeader { path: PathBuf, reason: String },
    #[error("{path}: expected {expected} values, found {found}")]
    TruncatedPayload {
        path: PathBuf,
        expected: usize,
        found: usize,
    },
    #[error("{path}: non-finite value at row {row}, column {col}")]
    NonFiniteValue { path: PathBuf, row: usize, col: usize },
    #[error("{path}:{line}: {reason}")]
    Parse {
        path: PathBuf,
        line: usize,
        reason: String,
    },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error(transparent)]
    Core(#[from] semitune_core::Error),
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> FormatError + '_ {
    move |source| FormatError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// A raw `rows × dim` matrix as stored in an EMB1 file.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub dim: usize,
    pub data: Vec<f32>,
}

pub fn read_matrix(path: &Path) -> Result<Matrix, FormatError> {
    let mut bytes = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(io_err(path))?;
    decode_matrix(&bytes, path)
}

fn decode_matrix(bytes: &[u8], path: &Path) -> Result<Matrix, FormatError> {
    let malformed = |reason: &str| FormatError::MalformedHeader {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    };
    if bytes.len() < HEADER_LEN {
        return Err(malformed("file shorter than the 16-byte header"));
    }
    if bytes[..4] != MAGIC {
        return Err(malformed("missing EMB1 magic"));
    }
    let word = |k: usize| u32::from_le_bytes(bytes[4 * k..4 * k + 4].try_into().unwrap());
    if word(1) != VERSION {
        return Err(malformed(&format!("unsupported version {}", word(1))));
    }
    let (rows, dim) = (word(2) as usize, word(3) as usize);
    let expected = rows
        .checked_mul(dim)
        .ok_or_else(|| malformed("row count times dimension overflows"))?;
    let payload = &bytes[HEADER_LEN..];
    if payload.len() / 4 < expected {
        return Err(FormatError::TruncatedPayload {
            path: path.to_path_buf(),
            expected,
            found: payload.len() / 4,
        });
    }
    if payload.len() != expected * 4 {
        return Err(malformed("payload longer than the header declares"));
    }
    let mut data = Vec::with_capacity(expected);
    for (n, chunk) in payload.chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes(chunk.try_into().unwrap());
        if !v.is_finite() {
            return Err(FormatError::NonFiniteValue {
                path: path.to_path_buf(),
                row: n / dim,
                col: n % dim,
            });
        }
        data.push(v);
    }
    Ok(Matrix { rows, dim, data })
}

pub fn write_matrix(path: &Path, rows: usize, dim: usize, data: &[f32]) -> Result<(), FormatError> {
    let too_big = |what: &str| FormatError::MalformedHeader {
        path: path.to_path_buf(),
        reason: format!("{what} does not fit in u32"),
    };
    let rows32 = u32::try_from(rows).map_err(|_| too_big("row count"))?;
    let dim32 = u32::try_from(dim).map_err(|_| too_big("dimension"))?;
    let file = File::create(path).map_err(io_err(path))?;
    let mut out = BufWriter::new(file);
    let mut write = || -> io::Result<()> {
        out.write_all(&MAGIC)?;
        for w in [VERSION, rows32, dim32] {
            out.write_all(&w.to_le_bytes())?;
        }
        for v in data {
            out.write_all(&v.to_le_bytes())?;
        }
        out.flush()
    };
    write().map_err(io_err(path))
}

/// Loads an embedding matrix; labels are attached separately.
pub fn load_embeddings(path: &Path) -> Result<EmbeddingSet, FormatError> {
    let m = read_matrix(path)?;
    Ok(EmbeddingSet::new(m.rows, m.dim, m.data)?)
}

pub fn write_embeddings(set: &EmbeddingSet, path: &Path) -> Result<(), FormatError> {
    write_matrix(path, set.count(), set.dim(), set.data())
}

pub fn load_class_embeddings(path: &Path) -> Result<ClassEmbeddings, FormatError> {
    let m = read_matrix(path)?;
    Ok(ClassEmbeddings::new(m.rows, m.dim, m.data)?)
}

pub fn write_class_embeddings(classes: &ClassEmbeddings, path: &Path) -> Result<(), FormatError> {
    write_matrix(path, classes.class_count(), classes.dim(), classes.weights())
}

fn read_lines(path: &Path) -> Result<Vec<String>, FormatError> {
    let file = File::open(path).map_err(io_err(path))?;
    BufReader::new(file)
        .lines()
        .collect::<io::Result<Vec<_>>>()
        .map_err(io_err(path))
}

fn write_text(path: &Path, text: &str) -> Result<(), FormatError> {
    std::fs::write(path, text).map_err(io_err(path))
}

fn parse_index(path: &Path, line: usize, field: &str) -> Result<usize, FormatError> {
    field.trim().parse().map_err(|_| FormatError::Parse {
        path: path.to_path_buf(),
        line,
        reason: format!("expected a non-negative integer, found {field:?}"),
    })
}

/// One class index per line; a blank line marks an unlabelled row.
pub fn read_labels(path: &Path) -> Result<Vec<Option<usize>>, FormatError> {
    read_lines(path)?
        .iter()
        .enumerate()
        .map(|(n, line)| {
            if line.trim().is_empty() {
                Ok(None)
            } else {
                parse_index(path, n + 1, line).map(Some)
            }
        })
        .collect()
}

pub fn write_labels(path: &Path, labels: &[Option<usize>]) -> Result<(), FormatError> {
    let mut text = String::new();
    for label in labels {
        if let Some(c) = label {
            text.push_str(&c.to_string());
        }
        text.push('\n');
    }
    write_text(path, &text)
}

/// Attaches a label file to `set`, checking the line count matches.
pub fn attach_labels(set: EmbeddingSet, path: &Path) -> Result<EmbeddingSet, FormatError> {
    let labels = read_labels(path)?;
    if labels.len() != set.count() {
        return Err(FormatError::Parse {
            path: path.to_path_buf(),
            line: labels.len(),
            reason: format!("{} labels for {} embeddings", labels.len(), set.count()),
        });
    }
    Ok(set.with_labels(labels)?)
}

pub fn read_class_names(path: &Path) -> Result<Vec<String>, FormatError> {
    read_lines(path)
}

pub fn write_class_names(path: &Path, names: &[String]) -> Result<(), FormatError> {
    let mut text = String::new();
    for name in names {
        text.push_str(name);
        text.push('\n');
    }
    write_text(path, &text)
}

/// Whitespace-separated `sample class` pairs, one per line. Blank lines and
/// lines starting with `#` are skipped.
pub fn read_pairs(path: &Path) -> Result<Vec<(usize, usize)>, FormatError> {
    let mut pairs = Vec::new();
    for (n, line) in read_lines(path)?.iter().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 2 {
            return Err(FormatError::Parse {
                path: path.to_path_buf(),
                line: n + 1,
                reason: format!("expected two columns, found {}", fields.len()),
            });
        }
        pairs.push((
            parse_index(path, n + 1, fields[0])?,
            parse_index(path, n + 1, fields[1])?,
        ));
    }
    Ok(pairs)
}

pub fn write_pairs(path: &Path, pairs: &[(usize, usize)]) -> Result<(), FormatError> {
    let mut text = String::new();
    for (i, c) in pairs {
        text.push_str(&format!("{i} {c}\n"));
    }
    write_text(path, &text)
}
