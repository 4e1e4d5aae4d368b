//! Transcripts as bags of pretrained word vectors.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use crate::data::DescriptorBag;
use crate::{Error, Result};

/// Word vectors keyed by lowercase token, in file order.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    tokens: Vec<String>,
    vectors: Vec<f64>,
    index: HashMap<String, usize>,
}

impl EmbeddingTable {
    pub fn from_entries(dim: usize, entries: Vec<(String, Vec<f64>)>) -> Result<Self> {
        let mut table = EmbeddingTable {
            dim,
            tokens: Vec::new(),
            vectors: Vec::new(),
            index: HashMap::new(),
        };
        for (token, vector) in entries {
            if vector.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: vector.len(),
                });
            }
            table.insert(token, &vector)?;
        }
        if table.is_empty() {
            return Err(Error::Empty("embedding table".into()));
        }
        Ok(table)
    }

    fn insert(&mut self, token: String, vector: &[f64]) -> Result<()> {
        if vector.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("embedding for {token:?}")));
        }
        let token = token.to_lowercase();
        if self.index.contains_key(&token) {
            return Ok(());
        }
        self.index.insert(token.clone(), self.tokens.len());
        self.tokens.push(token);
        self.vectors.extend_from_slice(vector);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn get(&self, token: &str) -> Option<&[f64]> {
        self.index
            .get(token)
            .map(|&i| &self.vectors[i * self.dim..(i + 1) * self.dim])
    }
}

/// Loads the usual text format: a token followed by its floats, one entry
/// per line. The dimension is taken from the first line. Tokens are
/// lowercased; on collision the first entry wins.
pub fn load_embeddings(path: impl AsRef<Path>, limit: Option<usize>) -> Result<EmbeddingTable> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut table: Option<EmbeddingTable> = None;
    let mut lines_read = 0usize;
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        if limit.is_some_and(|l| lines_read >= l) {
            break;
        }
        let line_no = idx + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        let mut parts = line.split_whitespace();
        let Some(token) = parts.next() else {
            continue;
        };
        let vector = parts
            .enumerate()
            .map(|(col, tok)| {
                tok.parse::<f64>().map_err(|_| Error::Parse {
                    path: path.to_path_buf(),
                    line: line_no,
                    column: col + 1,
                    message: format!("not a number: {tok:?}"),
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        let t = table.get_or_insert_with(|| EmbeddingTable {
            dim: vector.len(),
            tokens: Vec::new(),
            vectors: Vec::new(),
            index: HashMap::new(),
        });
        if vector.len() != t.dim || vector.is_empty() {
            return Err(Error::Ragged {
                path: path.to_path_buf(),
                line: line_no,
                expected: t.dim + 1,
                found: vector.len() + 1,
            });
        }
        t.insert(token.to_string(), &vector)?;
        lines_read += 1;
    }
    table.ok_or_else(|| Error::Empty(format!("embedding file {}", path.display())))
}

/// Lowercases and splits on runs of non-alphanumeric characters.
pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddedTranscript {
    pub bag: DescriptorBag,
    pub oov_count: usize,
}

/// One row per in-vocabulary token, in order; out-of-vocabulary tokens are
/// skipped and counted.
pub fn embed_transcript(table: &EmbeddingTable, tokens: &[String]) -> Result<EmbeddedTranscript> {
    let mut data = Vec::new();
    let mut oov = 0;
    for token in tokens {
        match table.get(token) {
            Some(v) => data.extend_from_slice(v),
            None => oov += 1,
        }
    }
    if data.is_empty() {
        return Err(Error::NoVocabulary { oov });
    }
    Ok(EmbeddedTranscript {
        bag: DescriptorBag::new(table.dim(), data, None)?,
        oov_count: oov,
    })
}

pub fn load_transcript(path: impl AsRef<Path>) -> Result<String> {
    let path = path.as_ref();
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}
