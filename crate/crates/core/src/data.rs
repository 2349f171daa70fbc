//! On-disk dataset plumbing: a plain-text manifest (one utterance per line:
//! id, frame-file path, label sequence, true segmentation), per-utterance
//! binary frame matrices, word-pair lists for pre-training, and the
//! tab-separated training metric log.

use std::fs;
use std::io::{self, BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use ndarray::Array2;
use thiserror::Error;

use crate::lattice::{Segmentation, Vocabulary};
use crate::pretrain::WordPair;
use crate::scorer::FrameFeatures;
use crate::synth::{Dataset, Utterance};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("dataset io: {0}")]
    Io(#[from] io::Error),
    #[error("{path}:{line}: {reason}")]
    Malformed {
        path: PathBuf,
        line: usize,
        reason: String,
    },
    #[error("frame file {path}: {reason}")]
    BadFrames { path: PathBuf, reason: String },
    #[error("word pair references unknown utterance id {0:?}")]
    UnknownUtterance(String),
    #[error("word pair span {start}..{end} outside utterance {id:?} ({len} frames)")]
    SpanOutOfRange {
        id: String,
        start: usize,
        end: usize,
        len: usize,
    },
}

fn malformed(path: &Path, line: usize, reason: impl Into<String>) -> DataError {
    DataError::Malformed {
        path: path.to_path_buf(),
        line,
        reason: reason.into(),
    }
}

/// Binary frame matrix: `rows, cols, element width` as little-endian u32
/// header, then the row-major payload.
pub fn write_frames(path: &Path, frames: &Array2<f64>) -> Result<(), DataError> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    w.write_all(&(frames.nrows() as u32).to_le_bytes())?;
    w.write_all(&(frames.ncols() as u32).to_le_bytes())?;
    w.write_all(&8u32.to_le_bytes())?;
    for &x in frames.iter() {
        w.write_all(&x.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_frames(path: &Path) -> Result<Array2<f64>, DataError> {
    let mut buf = Vec::new();
    fs::File::open(path)?.read_to_end(&mut buf)?;
    let bad = |reason: &str| DataError::BadFrames {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    };
    if buf.len() < 12 {
        return Err(bad("header truncated"));
    }
    let rows = u32::from_le_bytes(buf[0..4].try_into().unwrap()) as usize;
    let cols = u32::from_le_bytes(buf[4..8].try_into().unwrap()) as usize;
    let width = u32::from_le_bytes(buf[8..12].try_into().unwrap()) as usize;
    if width != 4 && width != 8 {
        return Err(bad("element width must be 4 or 8"));
    }
    let payload = &buf[12..];
    if payload.len() != rows * cols * width {
        return Err(bad("payload length disagrees with the header"));
    }
    let data: Vec<f64> = match width {
        4 => payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect(),
        _ => payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect(),
    };
    Array2::from_shape_vec((rows, cols), data).map_err(|e| bad(&e.to_string()))
}

/// Write a dataset under `dir`: `manifest.tsv` plus a `frames/` directory.
pub fn save_dataset(dir: &Path, vocab: &Vocabulary, data: &Dataset) -> Result<(), DataError> {
    fs::create_dir_all(dir.join("frames"))?;
    let mut manifest = BufWriter::new(fs::File::create(dir.join("manifest.tsv"))?);
    for utt in &data.utterances {
        let rel = format!("frames/{}.bin", utt.id);
        write_frames(&dir.join(&rel), utt.frames.view())?;
        writeln!(
            manifest,
            "{}\t{}\t{}\t{}",
            utt.id,
            rel,
            vocab.render(utt.labels.as_slice()),
            utt.segmentation.to_text()
        )?;
    }
    manifest.flush()?;
    Ok(())
}

/// Load a dataset from its manifest; frame paths resolve relative to the
/// manifest's directory.
pub fn load_dataset(manifest: &Path, vocab: &Vocabulary) -> Result<Dataset, DataError> {
    let dir = manifest.parent().unwrap_or(Path::new("."));
    let reader = BufReader::new(fs::File::open(manifest)?);
    let mut utterances = Vec::new();
    for (no, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 4 {
            return Err(malformed(manifest, no + 1, "expected 4 tab-separated fields"));
        }
        let id = fields[0].to_string();
        let frames = read_frames(&dir.join(fields[1]))?;
        let labels = vocab
            .parse_labels(fields[2])
            .map_err(|e| malformed(manifest, no + 1, e.to_string()))?;
        let segmentation = Segmentation::parse_text(fields[3])
            .map_err(|e| malformed(manifest, no + 1, e.to_string()))?;
        segmentation
            .validate(frames.nrows(), vocab.size())
            .map_err(|e| malformed(manifest, no + 1, format!("segmentation: {e:?}")))?;
        if segmentation.labels_unchecked().as_slice() != labels.as_slice() {
            return Err(malformed(
                manifest,
                no + 1,
                "label sequence disagrees with the segmentation",
            ));
        }
        utterances.push(Utterance {
            id,
            frames: FrameFeatures::new(frames),
            labels,
            segmentation,
        });
    }
    Ok(Dataset { utterances })
}

/// A word occurrence addressed by utterance id and frame span (end exclusive).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairRef {
    pub utt: String,
    pub label: usize,
    pub start: usize,
    pub end: usize,
}

/// Every ground-truth word occurrence of a dataset as a pair reference.
pub fn derive_pairs(data: &Dataset) -> Vec<PairRef> {
    let mut out = Vec::new();
    for utt in &data.utterances {
        for seg in utt.segmentation.segments() {
            out.push(PairRef {
                utt: utt.id.clone(),
                label: seg.label,
                start: seg.start,
                end: seg.end(),
            });
        }
    }
    out
}

/// Plain-text pair list: `utt-id word-label start end`, space separated.
pub fn write_pair_list(path: &Path, vocab: &Vocabulary, pairs: &[PairRef]) -> Result<(), DataError> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    for p in pairs {
        writeln!(w, "{} {} {} {}", p.utt, vocab.word(p.label), p.start, p.end)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_pair_list(path: &Path, vocab: &Vocabulary) -> Result<Vec<PairRef>, DataError> {
    let reader = BufReader::new(fs::File::open(path)?);
    let mut out = Vec::new();
    for (no, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 4 {
            return Err(malformed(path, no + 1, "expected `utt-id word start end`"));
        }
        let label = vocab
            .index_of(fields[1])
            .ok_or_else(|| malformed(path, no + 1, format!("unknown word {:?}", fields[1])))?;
        let parse = |s: &str| {
            s.parse::<usize>()
                .map_err(|_| malformed(path, no + 1, format!("bad frame index {s:?}")))
        };
        let (start, end) = (parse(fields[2])?, parse(fields[3])?);
        if end <= start {
            return Err(malformed(path, no + 1, "empty span"));
        }
        out.push(PairRef { utt: fields[0].to_string(), label, start, end });
    }
    Ok(out)
}

/// Slice the referenced spans out of a dataset.
pub fn materialize_pairs(data: &Dataset, refs: &[PairRef]) -> Result<Vec<WordPair>, DataError> {
    let index: std::collections::HashMap<&str, &Utterance> = data
        .utterances
        .iter()
        .map(|u| (u.id.as_str(), u))
        .collect();
    refs.iter()
        .map(|r| {
            let utt = index
                .get(r.utt.as_str())
                .ok_or_else(|| DataError::UnknownUtterance(r.utt.clone()))?;
            let len = utt.frames.num_frames();
            if r.end > len {
                return Err(DataError::SpanOutOfRange {
                    id: r.utt.clone(),
                    start: r.start,
                    end: r.end,
                    len,
                });
            }
            let frames = utt
                .frames
                .view()
                .slice(ndarray::s![r.start..r.end, ..])
                .to_owned();
            Ok(WordPair { frames: FrameFeatures::new(frames), label: r.label })
        })
        .collect()
}

/// One vocabulary word per line.
pub fn write_vocab(path: &Path, vocab: &Vocabulary) -> Result<(), DataError> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    for word in vocab.words() {
        writeln!(w, "{word}")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_vocab(path: &Path) -> Result<Vocabulary, DataError> {
    let reader = BufReader::new(fs::File::open(path)?);
    let mut words = Vec::new();
    for line in reader.lines() {
        let line = line?;
        let word = line.trim();
        if !word.is_empty() {
            words.push(word.to_string());
        }
    }
    Vocabulary::new(words).map_err(|e| malformed(path, 0, e.to_string()))
}

/// `word<TAB>count` per line, used by the frequency-bucket evaluation.
pub fn write_counts(path: &Path, vocab: &Vocabulary, counts: &[usize]) -> Result<(), DataError> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    for (v, &c) in counts.iter().enumerate() {
        writeln!(w, "{}\t{}", vocab.word(v), c)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_counts(path: &Path, vocab: &Vocabulary) -> Result<Vec<usize>, DataError> {
    let reader = BufReader::new(fs::File::open(path)?);
    let mut counts = vec![0usize; vocab.size()];
    for (no, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let (word, count) = line
            .split_once('\t')
            .ok_or_else(|| malformed(path, no + 1, "expected `word<TAB>count`"))?;
        let v = vocab
            .index_of(word)
            .ok_or_else(|| malformed(path, no + 1, format!("unknown word {word:?}")))?;
        counts[v] = count
            .trim()
            .parse()
            .map_err(|_| malformed(path, no + 1, format!("bad count {count:?}")))?;
    }
    Ok(counts)
}

/// Transcript file: `id<TAB>space-separated words` per line.
pub fn write_transcripts(
    path: &Path,
    vocab: &Vocabulary,
    lines: &[(String, Vec<usize>)],
) -> Result<(), DataError> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    for (id, labels) in lines {
        writeln!(w, "{}\t{}", id, vocab.render(labels))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_transcripts(
    path: &Path,
    vocab: &Vocabulary,
) -> Result<Vec<(String, Vec<usize>)>, DataError> {
    let reader = BufReader::new(fs::File::open(path)?);
    let mut out = Vec::new();
    for (no, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let (id, text) = line
            .split_once('\t')
            .ok_or_else(|| malformed(path, no + 1, "expected `id<TAB>words`"))?;
        let labels = vocab
            .parse_labels(text)
            .map_err(|e| malformed(path, no + 1, e.to_string()))?;
        out.push((id.to_string(), labels.as_slice().to_vec()));
    }
    Ok(out)
}
