use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::Deserialize;

use crate::corpus::ContextSchema;
use crate::error::{Error, Result};

/// One parsed input line.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RawRecord {
    /// 1-based line number in the source file.
    pub line: usize,
    pub text: String,
    pub rating: i64,
    pub product: String,
}

#[derive(Deserialize)]
struct Line {
    text: String,
    rating: i64,
    product: String,
}

#[derive(Clone, Debug, Default)]
pub struct RawCorpus {
    pub records: Vec<RawRecord>,
    /// Lines that were not a valid record.
    pub skipped: usize,
    /// Valid records dropped by the length filter.
    pub filtered: usize,
}

#[derive(Clone, Copy, Debug)]
pub struct LoadOptions {
    /// Records with more words than this are dropped at load time.
    pub max_words: Option<usize>,
}

impl Default for LoadOptions {
    fn default() -> Self {
        LoadOptions {
            max_words: Some(100),
        }
    }
}

/// Text plus one value index per schema context type.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Record {
    pub line: usize,
    pub text: String,
    pub contexts: Vec<usize>,
}

#[derive(Clone, Debug, Default)]
pub struct LoadedRecords {
    pub records: Vec<Record>,
    pub skipped: usize,
    pub filtered: usize,
}

/// Reads newline-delimited `{"text", "rating", "product"}` objects in file
/// order. Malformed lines are skipped and counted; blank lines are ignored.
pub fn load_raw(path: &Path, opts: LoadOptions) -> Result<RawCorpus> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = RawCorpus::default();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<Line>(&line) {
            Ok(l) => {
                if let Some(max) = opts.max_words {
                    if l.text.split_whitespace().count() > max {
                        out.filtered += 1;
                        continue;
                    }
                }
                out.records.push(RawRecord {
                    line: i + 1,
                    text: l.text,
                    rating: l.rating,
                    product: l.product,
                });
            }
            Err(_) => out.skipped += 1,
        }
    }
    if out.skipped > 0 {
        log::warn!("{}: skipped {} malformed line(s)", path.display(), out.skipped);
    }
    Ok(out)
}

impl RawCorpus {
    /// Resolves every record's context values against `schema`.
    pub fn resolve(&self, schema: &ContextSchema) -> Result<Vec<Record>> {
        self.records
            .iter()
            .map(|r| {
                let contexts = schema
                    .types()
                    .iter()
                    .map(|t| {
                        let value = match t.name.as_str() {
                            ContextSchema::RATING => r.rating.to_string(),
                            ContextSchema::PRODUCT => r.product.clone(),
                            other => {
                                return Err(Error::invalid(format!(
                                    "records have no context field {other}"
                                )))
                            }
                        };
                        t.index_of(&value).ok_or_else(|| Error::UnknownContext {
                            line: r.line,
                            field: t.name.clone(),
                            value,
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok(Record {
                    line: r.line,
                    text: r.text.clone(),
                    contexts,
                })
            })
            .collect()
    }
}

/// [`load_raw`] followed by context resolution against `schema`.
pub fn load_examples(path: &Path, schema: &ContextSchema, opts: LoadOptions) -> Result<LoadedRecords> {
    let raw = load_raw(path, opts)?;
    Ok(LoadedRecords {
        records: raw.resolve(schema)?,
        skipped: raw.skipped,
        filtered: raw.filtered,
    })
}
