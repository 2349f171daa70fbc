//! Binary model container: a header with the dimension record, the
//! vocabulary, ordered metadata pairs, named parameter blocks, and a trailing
//! SHA-256 checksum. Parameters are stored 32-bit on disk (compute stays
//! 64-bit); loading then saving reproduces the file byte for byte.

use std::fs;
use std::io::{self, Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::lattice::Vocabulary;
use crate::pretrain::WrittenViewEmbedder;
use crate::scorer::{AcousticParams, Pooling, SegmentScorerParams};
use crate::train::ToyEncoder;

const MAGIC: &[u8; 4] = b"SGWC";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ContainerError {
    #[error("container io: {0}")]
    Io(#[from] io::Error),
    #[error("not a model container (bad magic)")]
    BadMagic,
    #[error("container format version {found} unsupported (expected {expected})")]
    UnsupportedVersion { found: u32, expected: u32 },
    #[error("container checksum mismatch; file is corrupt")]
    ChecksumMismatch,
    #[error("malformed container: {0}")]
    Malformed(String),
}

/// Dimension record; everything the payload shapes depend on, none of it
/// input-length dependent.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContainerHeader {
    pub kind: String,
    pub frame_dim: u32,
    pub embed_dim: u32,
    pub vocab_size: u32,
    pub max_segment: u32,
    pub pooling: String,
    pub alphabet: String,
}

/// One named tensor. Values live as f64 in memory; `elem_width` fixes the
/// on-disk encoding (4 → f32, 8 → f64).
#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub name: String,
    pub elem_width: u8,
    pub shape: Vec<u32>,
    pub data: Vec<f64>,
}

impl Block {
    pub fn from_f32_array2(name: &str, a: &Array2<f64>) -> Self {
        Block {
            name: name.to_string(),
            elem_width: 4,
            shape: vec![a.nrows() as u32, a.ncols() as u32],
            data: a.iter().map(|&x| x as f32 as f64).collect(),
        }
    }

    pub fn from_f32_array1(name: &str, a: &Array1<f64>) -> Self {
        Block {
            name: name.to_string(),
            elem_width: 4,
            shape: vec![a.len() as u32],
            data: a.iter().map(|&x| x as f32 as f64).collect(),
        }
    }

    pub fn to_array2(&self) -> Result<Array2<f64>, ContainerError> {
        if self.shape.len() != 2 {
            return Err(ContainerError::Malformed(format!(
                "block {} is rank {}, wanted 2",
                self.name,
                self.shape.len()
            )));
        }
        Array2::from_shape_vec(
            (self.shape[0] as usize, self.shape[1] as usize),
            self.data.clone(),
        )
        .map_err(|e| ContainerError::Malformed(format!("block {}: {e}", self.name)))
    }

    pub fn to_array1(&self) -> Result<Array1<f64>, ContainerError> {
        if self.shape.len() != 1 {
            return Err(ContainerError::Malformed(format!(
                "block {} is rank {}, wanted 1",
                self.name,
                self.shape.len()
            )));
        }
        Ok(Array1::from_vec(self.data.clone()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelContainer {
    pub header: ContainerHeader,
    pub vocab: Vec<String>,
    pub meta: Vec<(String, String)>,
    pub blocks: Vec<Block>,
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    buf: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ContainerError> {
        if self.at + n > self.buf.len() {
            return Err(ContainerError::Malformed("unexpected end of file".into()));
        }
        let s = &self.buf[self.at..self.at + n];
        self.at += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, ContainerError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u8(&mut self) -> Result<u8, ContainerError> {
        Ok(self.take(1)?[0])
    }

    fn string(&mut self) -> Result<String, ContainerError> {
        let n = self.u32()? as usize;
        let raw = self.take(n)?;
        String::from_utf8(raw.to_vec())
            .map_err(|_| ContainerError::Malformed("non-utf8 string".into()))
    }
}

impl ModelContainer {
    pub fn block(&self, name: &str) -> Result<&Block, ContainerError> {
        self.blocks
            .iter()
            .find(|b| b.name == name)
            .ok_or_else(|| ContainerError::Malformed(format!("missing block {name}")))
    }

    pub fn meta_value(&self, key: &str) -> Option<&str> {
        self.meta
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        put_str(&mut out, &self.header.kind);
        for d in [
            self.header.frame_dim,
            self.header.embed_dim,
            self.header.vocab_size,
            self.header.max_segment,
        ] {
            out.extend_from_slice(&d.to_le_bytes());
        }
        put_str(&mut out, &self.header.pooling);
        put_str(&mut out, &self.header.alphabet);
        out.extend_from_slice(&(self.vocab.len() as u32).to_le_bytes());
        for w in &self.vocab {
            put_str(&mut out, w);
        }
        out.extend_from_slice(&(self.meta.len() as u32).to_le_bytes());
        for (k, v) in &self.meta {
            put_str(&mut out, k);
            put_str(&mut out, v);
        }
        out.extend_from_slice(&(self.blocks.len() as u32).to_le_bytes());
        for b in &self.blocks {
            assert!(b.elem_width == 4 || b.elem_width == 8, "element width 4 or 8");
            let expect: usize = b.shape.iter().map(|&d| d as usize).product();
            assert_eq!(expect, b.data.len(), "block {} shape/payload", b.name);
            put_str(&mut out, &b.name);
            out.push(b.elem_width);
            out.push(b.shape.len() as u8);
            for &d in &b.shape {
                out.extend_from_slice(&d.to_le_bytes());
            }
            match b.elem_width {
                4 => {
                    for &x in &b.data {
                        out.extend_from_slice(&(x as f32).to_le_bytes());
                    }
                }
                _ => {
                    for &x in &b.data {
                        out.extend_from_slice(&x.to_le_bytes());
                    }
                }
            }
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        out
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self, ContainerError> {
        if buf.len() < MAGIC.len() + 4 + 32 {
            return Err(ContainerError::Malformed("file too short".into()));
        }
        if &buf[..4] != MAGIC {
            return Err(ContainerError::BadMagic);
        }
        let (body, checksum) = buf.split_at(buf.len() - 32);
        let digest = Sha256::digest(body);
        if digest.as_slice() != checksum {
            return Err(ContainerError::ChecksumMismatch);
        }
        let mut r = Reader { buf: body, at: 4 };
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(ContainerError::UnsupportedVersion {
                found: version,
                expected: FORMAT_VERSION,
            });
        }
        let kind = r.string()?;
        let frame_dim = r.u32()?;
        let embed_dim = r.u32()?;
        let vocab_size = r.u32()?;
        let max_segment = r.u32()?;
        let pooling = r.string()?;
        let alphabet = r.string()?;
        let n_vocab = r.u32()? as usize;
        let mut vocab = Vec::with_capacity(n_vocab);
        for _ in 0..n_vocab {
            vocab.push(r.string()?);
        }
        let n_meta = r.u32()? as usize;
        let mut meta = Vec::with_capacity(n_meta);
        for _ in 0..n_meta {
            let k = r.string()?;
            let v = r.string()?;
            meta.push((k, v));
        }
        let n_blocks = r.u32()? as usize;
        let mut blocks = Vec::with_capacity(n_blocks);
        for _ in 0..n_blocks {
            let name = r.string()?;
            let elem_width = r.u8()?;
            if elem_width != 4 && elem_width != 8 {
                return Err(ContainerError::Malformed(format!(
                    "block {name}: element width {elem_width}"
                )));
            }
            let ndim = r.u8()? as usize;
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                shape.push(r.u32()?);
            }
            let count: usize = shape.iter().map(|&d| d as usize).product();
            let mut data = Vec::with_capacity(count);
            match elem_width {
                4 => {
                    let raw = r.take(count * 4)?;
                    for c in raw.chunks_exact(4) {
                        data.push(f32::from_le_bytes(c.try_into().unwrap()) as f64);
                    }
                }
                _ => {
                    let raw = r.take(count * 8)?;
                    for c in raw.chunks_exact(8) {
                        data.push(f64::from_le_bytes(c.try_into().unwrap()));
                    }
                }
            }
            blocks.push(Block { name, elem_width, shape, data });
        }
        if r.at != body.len() {
            return Err(ContainerError::Malformed("trailing bytes after blocks".into()));
        }
        Ok(ModelContainer {
            header: ContainerHeader {
                kind,
                frame_dim,
                embed_dim,
                vocab_size,
                max_segment,
                pooling,
                alphabet,
            },
            vocab,
            meta,
            blocks,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), ContainerError> {
        let mut f = fs::File::create(path)?;
        f.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, ContainerError> {
        let mut buf = Vec::new();
        fs::File::open(path)?.read_to_end(&mut buf)?;
        Self::from_bytes(&buf)
    }
}

fn header_for(
    kind: &str,
    acoustic: &AcousticParams,
    vocab: &Vocabulary,
    max_segment: usize,
) -> ContainerHeader {
    ContainerHeader {
        kind: kind.to_string(),
        frame_dim: acoustic.frame_dim() as u32,
        embed_dim: acoustic.embed_dim() as u32,
        vocab_size: vocab.size() as u32,
        max_segment: max_segment as u32,
        pooling: acoustic.pooling.name().to_string(),
        alphabet: vocab.alphabet().chars().iter().collect(),
    }
}

fn acoustic_blocks(acoustic: &AcousticParams, prefix: &str) -> Vec<Block> {
    let mut blocks = vec![
        Block::from_f32_array2(&format!("{prefix}a1"), &acoustic.a1),
        Block::from_f32_array1(&format!("{prefix}b1"), &acoustic.b1),
    ];
    if let Some(att) = &acoustic.attention {
        blocks.push(Block::from_f32_array1(&format!("{prefix}attention"), att));
    }
    blocks
}

fn acoustic_from_blocks(
    c: &ModelContainer,
    prefix: &str,
) -> Result<AcousticParams, ContainerError> {
    let pooling: Pooling = c
        .header
        .pooling
        .parse()
        .map_err(|_| ContainerError::Malformed(format!("pooling {:?}", c.header.pooling)))?;
    let acoustic = AcousticParams {
        pooling,
        a1: c.block(&format!("{prefix}a1"))?.to_array2()?,
        b1: c.block(&format!("{prefix}b1"))?.to_array1()?,
        attention: match pooling {
            Pooling::Attention => Some(c.block(&format!("{prefix}attention"))?.to_array1()?),
        _ => None,
        },
    };
    let f = c.header.frame_dim as usize;
    let d = c.header.embed_dim as usize;
    if acoustic.a1.dim() != (d, pooling.pooled_dim(f)) || acoustic.b1.len() != d {
        return Err(ContainerError::Malformed(
            "acoustic block shapes disagree with the header dims".into(),
        ));
    }
    Ok(acoustic)
}

fn vocab_from_container(c: &ModelContainer) -> Result<Vocabulary, ContainerError> {
    let alphabet = crate::lattice::Alphabet::from_chars(c.header.alphabet.chars());
    let vocab = Vocabulary::with_alphabet(c.vocab.clone(), alphabet)
        .map_err(|e| ContainerError::Malformed(format!("vocabulary: {e}")))?;
    if vocab.size() != c.header.vocab_size as usize {
        return Err(ContainerError::Malformed(
            "vocab count disagrees with the header".into(),
        ));
    }
    Ok(vocab)
}

pub const KIND_SCORER: &str = "segment-scorer";
pub const KIND_EMBEDDER: &str = "multiview-embedder";

/// Pack a segment scorer (and the vocabulary it indexes) into a container.
pub fn scorer_to_container(
    params: &SegmentScorerParams,
    vocab: &Vocabulary,
    max_segment: usize,
    meta: Vec<(String, String)>,
) -> ModelContainer {
    params.check_shapes();
    let mut blocks = acoustic_blocks(&params.acoustic, "");
    blocks.push(Block::from_f32_array2("a2", &params.a2));
    blocks.push(Block::from_f32_array1("b2", &params.b2));
    ModelContainer {
        header: header_for(KIND_SCORER, &params.acoustic, vocab, max_segment),
        vocab: vocab.words().to_vec(),
        meta,
        blocks,
    }
}

pub fn container_to_scorer(
    c: &ModelContainer,
) -> Result<(SegmentScorerParams, Vocabulary, usize), ContainerError> {
    if c.header.kind != KIND_SCORER {
        return Err(ContainerError::Malformed(format!(
            "kind {:?}, wanted {KIND_SCORER:?}",
            c.header.kind
        )));
    }
    let vocab = vocab_from_container(c)?;
    let params = SegmentScorerParams {
        acoustic: acoustic_from_blocks(c, "")?,
        a2: c.block("a2")?.to_array2()?,
        b2: c.block("b2")?.to_array1()?,
    };
    if params.a2.dim() != (vocab.size(), c.header.embed_dim as usize)
        || params.b2.len() != vocab.size()
    {
        return Err(ContainerError::Malformed(
            "output block shapes disagree with the header dims".into(),
        ));
    }
    Ok((params, vocab, c.header.max_segment as usize))
}

/// Pack the two pre-trained views into an embedder checkpoint.
pub fn embedder_to_container(
    acoustic: &AcousticParams,
    written: &WrittenViewEmbedder,
    vocab: &Vocabulary,
    meta: Vec<(String, String)>,
) -> ModelContainer {
    acoustic.check_shapes();
    let mut blocks = acoustic_blocks(acoustic, "acoustic.");
    let named: [(&str, Block); 9] = [
        ("written.char_table", Block::from_f32_array2("written.char_table", &written.char_table)),
        ("written.w_fwd", Block::from_f32_array2("written.w_fwd", &written.w_fwd)),
        ("written.u_fwd", Block::from_f32_array2("written.u_fwd", &written.u_fwd)),
        ("written.b_fwd", Block::from_f32_array1("written.b_fwd", &written.b_fwd)),
        ("written.w_bwd", Block::from_f32_array2("written.w_bwd", &written.w_bwd)),
        ("written.u_bwd", Block::from_f32_array2("written.u_bwd", &written.u_bwd)),
        ("written.b_bwd", Block::from_f32_array1("written.b_bwd", &written.b_bwd)),
        ("written.w_out", Block::from_f32_array2("written.w_out", &written.w_out)),
        ("written.b_out", Block::from_f32_array1("written.b_out", &written.b_out)),
    ];
    blocks.extend(named.into_iter().map(|(_, b)| b));
    ModelContainer {
        header: header_for(KIND_EMBEDDER, acoustic, vocab, 0),
        vocab: vocab.words().to_vec(),
        meta,
        blocks,
    }
}

pub fn container_to_embedder(
    c: &ModelContainer,
) -> Result<(AcousticParams, WrittenViewEmbedder, Vocabulary), ContainerError> {
    if c.header.kind != KIND_EMBEDDER {
        return Err(ContainerError::Malformed(format!(
            "kind {:?}, wanted {KIND_EMBEDDER:?}",
            c.header.kind
        )));
    }
    let vocab = vocab_from_container(c)?;
    let acoustic = acoustic_from_blocks(c, "acoustic.")?;
    let written = WrittenViewEmbedder {
        char_table: c.block("written.char_table")?.to_array2()?,
        w_fwd: c.block("written.w_fwd")?.to_array2()?,
        u_fwd: c.block("written.u_fwd")?.to_array2()?,
        b_fwd: c.block("written.b_fwd")?.to_array1()?,
        w_bwd: c.block("written.w_bwd")?.to_array2()?,
        u_bwd: c.block("written.u_bwd")?.to_array2()?,
        b_bwd: c.block("written.b_bwd")?.to_array1()?,
        w_out: c.block("written.w_out")?.to_array2()?,
        b_out: c.block("written.b_out")?.to_array1()?,
    };
    if written.char_table.nrows() != vocab.alphabet().table_size()
        || written.out_dim() != c.header.embed_dim as usize
    {
        return Err(ContainerError::Malformed(
            "written block shapes disagree with the header dims".into(),
        ));
    }
    Ok((acoustic, written, vocab))
}

/// Pack the full decoding pipeline: frame encoder plus segment scorer.
///
/// The encoder rides in `encoder.*` blocks and an `encoder.stride` meta
/// entry, so a plain scorer container (no such blocks) still loads — it gets
/// an identity encoder. `meta` is the place for run provenance (init mode,
/// frame stacking, …).
pub fn pipeline_to_container(
    encoder: &ToyEncoder,
    params: &SegmentScorerParams,
    vocab: &Vocabulary,
    max_segment: usize,
    meta: Vec<(String, String)>,
) -> ModelContainer {
    assert_eq!(encoder.out_dim(), params.acoustic.frame_dim(), "encoder/scorer dims");
    let mut c = scorer_to_container(params, vocab, max_segment, meta);
    c.blocks.push(Block::from_f32_array2("encoder.w", &encoder.w));
    c.blocks.push(Block::from_f32_array1("encoder.b", &encoder.b));
    c.meta.push(("encoder.stride".into(), encoder.stride.to_string()));
    c
}

pub fn container_to_pipeline(
    c: &ModelContainer,
) -> Result<(ToyEncoder, SegmentScorerParams, Vocabulary, usize), ContainerError> {
    let (params, vocab, max_segment) = container_to_scorer(c)?;
    let encoder = if c.blocks.iter().any(|b| b.name == "encoder.w") {
        let stride = c
            .meta
            .iter()
            .find(|(k, _)| k == "encoder.stride")
            .map(|(_, v)| v.parse::<usize>())
            .transpose()
            .map_err(|_| ContainerError::Malformed("bad encoder.stride".into()))?
            .unwrap_or(1);
        if stride == 0 {
            return Err(ContainerError::Malformed("encoder.stride must be ≥ 1".into()));
        }
        ToyEncoder {
            w: c.block("encoder.w")?.to_array2()?,
            b: c.block("encoder.b")?.to_array1()?,
            stride,
            dropout: 0.0,
        }
    } else {
        ToyEncoder::identity(params.acoustic.frame_dim())
    };
    if encoder.out_dim() != params.acoustic.frame_dim()
        || encoder.b.len() != encoder.out_dim()
    {
        return Err(ContainerError::Malformed(
            "encoder block shapes disagree with the scorer dims".into(),
        ));
    }
    Ok((encoder, params, vocab, max_segment))
}
