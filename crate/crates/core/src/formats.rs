//! Corpus-level file formats.
//!
//! * Activation binary (`SAEA`): magic, `u32` version = 1, `u32` d_sae,
//!   `u64` n_docs; per doc a `u16` id length + UTF-8 id and `u32` n_tokens;
//!   per token `u32` n_entries then `(u32 latent, f32 value)` pairs. All
//!   little-endian.
//! * Activation JSONL: `{"id": str, "tokens": [[[latent, value], ...], ...]}`.
//! * Embedding store: the `SAEA` framing with exactly one token per document
//!   holding the pooled vector.
//! * Corpus JSONL: `{"id": str, "text": str, "tokens"?: [str]}`.
//! * Dense vectors JSONL: `{"id": str, "vec": [float, ...]}`.

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::binio::OffsetReader;
use crate::embedding::{pool_document, DocActivations, SaeEmbedding};
use crate::error::{Error, Result};
use crate::sae::TokenActivationRecord;

pub const ACTIVATIONS_MAGIC: &[u8; 4] = b"SAEA";
pub const ACTIVATIONS_VERSION: u32 = 1;

/// Streaming reader over either activation encoding.
pub struct ActivationReader {
    inner: ReaderKind,
    seen: HashSet<String>,
    ordinal: u64,
    done: bool,
}

enum ReaderKind {
    Binary {
        r: OffsetReader<Box<dyn Read>>,
        d_sae: u32,
        n_docs: u64,
    },
    Jsonl {
        lines: std::io::Lines<Box<dyn BufRead>>,
        line_no: usize,
    },
    Empty,
}

#[derive(Deserialize, Serialize)]
struct JsonlDoc {
    id: String,
    tokens: Vec<Vec<(u32, f32)>>,
}

impl ActivationReader {
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::new(BufReader::new(file))
    }

    /// Detects the encoding from the first bytes.
    pub fn new<R: BufRead + 'static>(mut reader: R) -> Result<Self> {
        let head = reader
            .fill_buf()
            .map_err(|e| Error::Format {
                offset: 0,
                doc: None,
                message: e.to_string(),
            })?
            .to_vec();
        let inner = if head.is_empty() {
            ReaderKind::Empty
        } else if head.len() >= 4 && &head[..4] == ACTIVATIONS_MAGIC {
            let mut r = OffsetReader::new(Box::new(reader) as Box<dyn Read>);
            let mut magic = [0u8; 4];
            r.read_exact(&mut magic, "magic")?;
            let version = r.u32("version")?;
            if version != ACTIVATIONS_VERSION {
                return Err(r.error(format!("unsupported version {version}")));
            }
            let d_sae = r.u32("d_sae")?;
            let n_docs = r.u64("n_docs")?;
            ReaderKind::Binary { r, d_sae, n_docs }
        } else if head.starts_with(b"SAE") {
            return Err(Error::Format {
                offset: 0,
                doc: None,
                message: "unrecognized magic".into(),
            });
        } else {
            ReaderKind::Jsonl {
                lines: (Box::new(reader) as Box<dyn BufRead>).lines(),
                line_no: 0,
            }
        };
        Ok(Self {
            inner,
            seen: HashSet::new(),
            ordinal: 0,
            done: false,
        })
    }

    /// Dictionary size declared by a binary header.
    pub fn d_sae(&self) -> Option<u32> {
        match &self.inner {
            ReaderKind::Binary { d_sae, .. } => Some(*d_sae),
            _ => None,
        }
    }

    fn next_binary(&mut self) -> Option<Result<DocActivations>> {
        let ReaderKind::Binary { r, d_sae, n_docs } = &mut self.inner else {
            unreachable!()
        };
        if self.ordinal >= *n_docs {
            let mut extra = [0u8; 1];
            return match r.try_fill(&mut extra) {
                Ok(0) => None,
                Ok(_) => Some(Err(r.error("trailing bytes after last document"))),
                Err(e) => Some(Err(e)),
            };
        }
        let d_sae = *d_sae;
        let ordinal = self.ordinal;
        r.set_doc(Some(ordinal));
        let doc = (|| -> Result<DocActivations> {
            let id_len = r.u16("doc id length")? as usize;
            let mut id = vec![0u8; id_len];
            r.read_exact(&mut id, "doc id")?;
            let doc_id = String::from_utf8(id).map_err(|_| r.error("doc id is not UTF-8"))?;
            let n_tokens = r.u32("token count")?;
            let mut tokens = Vec::with_capacity(n_tokens.min(1 << 16) as usize);
            for t in 0..n_tokens {
                let n_entries = r.u32("entry count")?;
                if n_entries > d_sae {
                    return Err(r.error(format!("token {t}: {n_entries} entries exceed d_sae {d_sae}")));
                }
                let mut entries = Vec::with_capacity(n_entries as usize);
                for _ in 0..n_entries {
                    let id = r.u32("latent id")?;
                    let v = r.f32("activation value")?;
                    entries.push((id, v));
                }
                let rec = TokenActivationRecord {
                    token_index: t,
                    entries,
                };
                rec.validate(Some(d_sae)).map_err(|e| r.error(e.to_string()))?;
                tokens.push(rec);
            }
            Ok(DocActivations { doc_id, tokens })
        })();
        r.set_doc(None);
        Some(doc)
    }

    fn next_jsonl(&mut self) -> Option<Result<DocActivations>> {
        let ReaderKind::Jsonl { lines, line_no } = &mut self.inner else {
            unreachable!()
        };
        loop {
            let line = lines.next()?;
            *line_no += 1;
            let line_no = *line_no;
            let line = match line {
                Ok(l) => l,
                Err(e) => {
                    return Some(Err(Error::Line {
                        line: line_no,
                        message: e.to_string(),
                    }))
                }
            };
            if line.trim().is_empty() {
                continue;
            }
            let to_err = |message: String| Error::Line { line: line_no, message };
            let parsed: JsonlDoc = match serde_json::from_str(&line) {
                Ok(p) => p,
                Err(e) => return Some(Err(to_err(e.to_string()))),
            };
            let doc = DocActivations {
                doc_id: parsed.id,
                tokens: parsed
                    .tokens
                    .into_iter()
                    .enumerate()
                    .map(|(i, entries)| TokenActivationRecord {
                        token_index: i as u32,
                        entries,
                    })
                    .collect(),
            };
            if let Err(e) = doc.validate(None) {
                return Some(Err(to_err(e.to_string())));
            }
            return Some(Ok(doc));
        }
    }
}

impl Iterator for ActivationReader {
    type Item = Result<DocActivations>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.done {
            return None;
        }
        let item = match self.inner {
            ReaderKind::Empty => None,
            ReaderKind::Binary { .. } => self.next_binary(),
            ReaderKind::Jsonl { .. } => self.next_jsonl(),
        };
        let item = item.map(|res| {
            res.and_then(|doc| {
                if !self.seen.insert(doc.doc_id.clone()) {
                    return Err(Error::DuplicateDoc(doc.doc_id));
                }
                Ok(doc)
            })
        });
        match &item {
            Some(Ok(_)) => self.ordinal += 1,
            _ => self.done = true,
        }
        item
    }
}

/// Reads every document of an activation file.
pub fn read_activations(path: impl AsRef<Path>) -> Result<Vec<DocActivations>> {
    ActivationReader::open(path)?.collect()
}

/// Reads an activation or store file and max-pools each document.
pub fn read_embeddings(path: impl AsRef<Path>) -> Result<Vec<SaeEmbedding>> {
    ActivationReader::open(path)?
        .map(|d| d.and_then(|d| pool_document(&d)))
        .collect()
}

fn check_docs(docs: &[DocActivations], d_sae: Option<u32>) -> Result<()> {
    let mut seen = HashSet::with_capacity(docs.len());
    for d in docs {
        if !seen.insert(d.doc_id.as_str()) {
            return Err(Error::DuplicateDoc(d.doc_id.clone()));
        }
        if d.doc_id.len() > u16::MAX as usize {
            return Err(Error::invalid(format!("doc id longer than {} bytes", u16::MAX)));
        }
        d.validate(d_sae)?;
    }
    Ok(())
}

/// Dense token positions `0..=last`, gaps written as empty tokens.
fn dense_tokens(doc: &DocActivations) -> Vec<&[(u32, f32)]> {
    let n = doc.tokens.last().map(|t| t.token_index as usize + 1).unwrap_or(0);
    let mut out: Vec<&[(u32, f32)]> = vec![&[]; n];
    for t in &doc.tokens {
        out[t.token_index as usize] = &t.entries;
    }
    out
}

pub fn write_activations_binary<W: Write>(w: &mut W, d_sae: u32, docs: &[DocActivations]) -> Result<()> {
    check_docs(docs, Some(d_sae))?;
    let io = |e| Error::io("<writer>", e);
    let mut buf = Vec::with_capacity(1 << 16);
    buf.extend_from_slice(ACTIVATIONS_MAGIC);
    buf.extend_from_slice(&ACTIVATIONS_VERSION.to_le_bytes());
    buf.extend_from_slice(&d_sae.to_le_bytes());
    buf.extend_from_slice(&(docs.len() as u64).to_le_bytes());
    for doc in docs {
        buf.extend_from_slice(&(doc.doc_id.len() as u16).to_le_bytes());
        buf.extend_from_slice(doc.doc_id.as_bytes());
        let tokens = dense_tokens(doc);
        buf.extend_from_slice(&(tokens.len() as u32).to_le_bytes());
        for entries in tokens {
            buf.extend_from_slice(&(entries.len() as u32).to_le_bytes());
            for &(id, v) in entries {
                buf.extend_from_slice(&id.to_le_bytes());
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        if buf.len() > 1 << 20 {
            w.write_all(&buf).map_err(io)?;
            buf.clear();
        }
    }
    w.write_all(&buf).map_err(io)
}

pub fn write_activations_jsonl<W: Write>(w: &mut W, docs: &[DocActivations]) -> Result<()> {
    check_docs(docs, None)?;
    for doc in docs {
        let line = JsonlDoc {
            id: doc.doc_id.clone(),
            tokens: dense_tokens(doc).into_iter().map(|e| e.to_vec()).collect(),
        };
        serde_json::to_writer(&mut *w, &line)?;
        w.write_all(b"\n").map_err(|e| Error::io("<writer>", e))?;
    }
    Ok(())
}

pub fn save_activations(path: impl AsRef<Path>, d_sae: u32, docs: &[DocActivations]) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_activations_binary(&mut w, d_sae, docs)?;
    w.flush().map_err(|e| Error::io(path, e))
}

/// Embedding store: one pooled token per document.
pub fn save_embeddings(path: impl AsRef<Path>, d_sae: u32, embs: &[SaeEmbedding]) -> Result<()> {
    let docs: Vec<DocActivations> = embs
        .iter()
        .map(|e| DocActivations {
            doc_id: e.doc_id.clone(),
            tokens: vec![TokenActivationRecord {
                token_index: 0,
                entries: e.entries.clone(),
            }],
        })
        .collect();
    save_activations(path, d_sae, &docs)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusDoc {
    pub id: String,
    pub text: String,
    /// Token strings aligned with activation token indices, when known.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tokens: Option<Vec<String>>,
}

fn read_jsonl<T, F>(path: &Path, mut f: F) -> Result<()>
where
    T: for<'de> Deserialize<'de>,
    F: FnMut(usize, T) -> Result<()>,
{
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: T = serde_json::from_str(&line).map_err(|e| Error::Line {
            line: i + 1,
            message: e.to_string(),
        })?;
        f(i + 1, rec)?;
    }
    Ok(())
}

pub(crate) fn jsonl_records<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<(usize, T)>> {
    let mut out = Vec::new();
    read_jsonl(path, |line, rec| {
        out.push((line, rec));
        Ok(())
    })?;
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(path: impl AsRef<Path>, records: &[T]) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Corpus texts keyed by doc id.
pub fn load_corpus(path: impl AsRef<Path>) -> Result<BTreeMap<String, CorpusDoc>> {
    let mut out = BTreeMap::new();
    read_jsonl(path.as_ref(), |line, doc: CorpusDoc| {
        if out.contains_key(&doc.id) {
            return Err(Error::Line {
                line,
                message: format!("duplicate doc id {:?}", doc.id),
            });
        }
        out.insert(doc.id.clone(), doc);
        Ok(())
    })?;
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseVector {
    pub id: String,
    pub vec: Vec<f32>,
}

pub fn load_dense_vectors(path: impl AsRef<Path>) -> Result<BTreeMap<String, Vec<f32>>> {
    let mut out = BTreeMap::new();
    let mut dim = None;
    read_jsonl(path.as_ref(), |line, v: DenseVector| {
        if *dim.get_or_insert(v.vec.len()) != v.vec.len() {
            return Err(Error::Line {
                line,
                message: "inconsistent vector dimension".into(),
            });
        }
        if out.insert(v.id.clone(), v.vec).is_some() {
            return Err(Error::Line {
                line,
                message: format!("duplicate id {:?}", v.id),
            });
        }
        Ok(())
    })?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Cursor;

    fn doc(id: &str, toks: &[&[(u32, f32)]]) -> DocActivations {
        DocActivations {
            doc_id: id.into(),
            tokens: toks
                .iter()
                .enumerate()
                .map(|(i, e)| TokenActivationRecord {
                    token_index: i as u32,
                    entries: e.to_vec(),
                })
                .collect(),
        }
    }

    fn read_all(bytes: Vec<u8>) -> Result<Vec<DocActivations>> {
        ActivationReader::new(Cursor::new(bytes))?.collect()
    }

    #[test]
    fn empty_file_is_empty_stream() {
        assert!(read_all(Vec::new()).unwrap().is_empty());
    }

    #[test]
    fn binary_round_trip() {
        let docs = vec![
            doc("a", &[&[(1, 0.5), (3, 2.0)], &[], &[(0, 1.0)]]),
            doc("b", &[&[]]),
            doc("ü", &[]),
        ];
        let mut buf = Vec::new();
        write_activations_binary(&mut buf, 8, &docs).unwrap();
        assert_eq!(read_all(buf).unwrap(), docs);
    }

    #[test]
    fn jsonl_round_trip() {
        let docs = vec![doc("a", &[&[(1, 0.5)], &[(2, 0.25), (7, 3.0)]])];
        let mut buf = Vec::new();
        write_activations_jsonl(&mut buf, &docs).unwrap();
        assert_eq!(read_all(buf).unwrap(), docs);
    }

    #[test]
    fn jsonl_negative_value_rejected() {
        let text = "{\"id\":\"a\",\"tokens\":[[[1,0.5]]]}\n{\"id\":\"b\",\"tokens\":[[[1,-0.5]]]}\n";
        let err = read_all(text.as_bytes().to_vec()).unwrap_err();
        assert!(matches!(err, Error::Line { line: 2, .. }), "{err}");
    }

    #[test]
    fn jsonl_duplicate_doc_rejected() {
        let text = "{\"id\":\"a\",\"tokens\":[]}\n{\"id\":\"a\",\"tokens\":[]}\n";
        assert!(matches!(
            read_all(text.as_bytes().to_vec()),
            Err(Error::DuplicateDoc(_))
        ));
    }

    #[test]
    fn truncated_binary_reports_offset_and_doc() {
        let docs = vec![doc("a", &[&[(1, 0.5)]]), doc("b", &[&[(2, 0.5), (3, 1.0)]])];
        let mut buf = Vec::new();
        write_activations_binary(&mut buf, 8, &docs).unwrap();
        buf.truncate(buf.len() - 3);
        let mut reader = ActivationReader::new(Cursor::new(buf)).unwrap();
        assert!(reader.next().unwrap().is_ok());
        let err = reader.next().unwrap().unwrap_err();
        match err {
            Error::Format { doc, offset, .. } => {
                assert_eq!(doc, Some(1));
                assert!(offset > 20);
            }
            other => panic!("unexpected {other}"),
        }
        assert!(reader.next().is_none());
    }

    #[test]
    fn binary_latent_out_of_range() {
        let docs = vec![doc("a", &[&[(9, 0.5)]])];
        let mut buf = Vec::new();
        assert!(write_activations_binary(&mut buf, 8, &docs).is_err());
    }

    #[test]
    fn token_gaps_written_as_empty() {
        let d = DocActivations {
            doc_id: "g".into(),
            tokens: vec![
                TokenActivationRecord {
                    token_index: 0,
                    entries: vec![(1, 1.0)],
                },
                TokenActivationRecord {
                    token_index: 2,
                    entries: vec![(2, 1.0)],
                },
            ],
        };
        let mut buf = Vec::new();
        write_activations_binary(&mut buf, 4, &[d]).unwrap();
        let back = read_all(buf).unwrap();
        assert_eq!(back[0].tokens.len(), 3);
        assert!(back[0].tokens[1].entries.is_empty());
    }
}
