//! Decoder-side training sequences.
//!
//! A sequence is laid out as `[BOS] instruction [SEP] target [EOS]`. The
//! instruction only conditions the decoder: its positions (and BOS/SEP) carry
//! loss mask 0, while target tokens and EOS carry 1. [`collate`] pads a batch
//! and applies the teacher-forcing shift, so `labels[j] = tokens[j + 1]` and the
//! mask is carried over to label positions.

use std::io::Write;
use std::ops::Range;

use serde::Serialize;
use thiserror::Error;

use crate::corpus::ManifestEntry;

#[derive(Debug, Error)]
pub enum ConditioningError {
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("cannot decode token {0}")]
    BadToken(u32),
    #[error("decoded bytes are not valid UTF-8")]
    Utf8,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = ConditioningError> = std::result::Result<T, E>;

/// Text to id mapping with four reserved ids that `encode` never emits.
pub trait Tokenizer {
    fn encode(&self, text: &str) -> Vec<u32>;
    /// Inverse of `encode`; special ids are skipped.
    fn decode(&self, ids: &[u32]) -> Result<String>;
    fn bos(&self) -> u32;
    fn sep(&self) -> u32;
    fn eos(&self) -> u32;
    fn pad(&self) -> u32;

    fn is_special(&self, id: u32) -> bool {
        id == self.bos() || id == self.sep() || id == self.eos() || id == self.pad()
    }
}

/// One token per UTF-8 byte, shifted past the special ids.
#[derive(Debug, Clone, Copy, Default)]
pub struct ByteTokenizer;

impl ByteTokenizer {
    pub const PAD: u32 = 0;
    pub const BOS: u32 = 1;
    pub const SEP: u32 = 2;
    pub const EOS: u32 = 3;
    const OFFSET: u32 = 4;
    pub const VOCAB_SIZE: u32 = 256 + Self::OFFSET;
}

impl Tokenizer for ByteTokenizer {
    fn encode(&self, text: &str) -> Vec<u32> {
        text.bytes().map(|b| b as u32 + Self::OFFSET).collect()
    }

    fn decode(&self, ids: &[u32]) -> Result<String> {
        let bytes = ids
            .iter()
            .filter(|&&id| !self.is_special(id))
            .map(|&id| {
                id.checked_sub(Self::OFFSET)
                    .and_then(|b| u8::try_from(b).ok())
                    .ok_or(ConditioningError::BadToken(id))
            })
            .collect::<Result<Vec<u8>>>()?;
        String::from_utf8(bytes).map_err(|_| ConditioningError::Utf8)
    }

    fn bos(&self) -> u32 {
        Self::BOS
    }
    fn sep(&self) -> u32 {
        Self::SEP
    }
    fn eos(&self) -> u32 {
        Self::EOS
    }
    fn pad(&self) -> u32 {
        Self::PAD
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DecoderSequence {
    pub tokens: Vec<u32>,
    pub loss_mask: Vec<u8>,
    pub instruction_span: Range<usize>,
    /// Target tokens, excluding EOS.
    pub target_span: Range<usize>,
}

impl DecoderSequence {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Tokens that contribute to the loss.
    pub fn supervised_tokens(&self) -> impl Iterator<Item = u32> + '_ {
        self.tokens
            .iter()
            .zip(&self.loss_mask)
            .filter(|(_, &m)| m == 1)
            .map(|(&t, _)| t)
    }
}

pub fn build_decoder_sequence<T: Tokenizer + ?Sized>(
    instruction: &str,
    target: &str,
    tok: &T,
) -> Result<DecoderSequence> {
    if instruction.is_empty() {
        return Err(ConditioningError::Argument("instruction is empty".into()));
    }
    if target.is_empty() {
        return Err(ConditioningError::Argument("target is empty".into()));
    }
    let instr = tok.encode(instruction);
    let tgt = tok.encode(target);

    let mut tokens = Vec::with_capacity(instr.len() + tgt.len() + 3);
    tokens.push(tok.bos());
    tokens.extend_from_slice(&instr);
    tokens.push(tok.sep());
    let target_start = tokens.len();
    tokens.extend_from_slice(&tgt);
    let target_end = tokens.len();
    tokens.push(tok.eos());

    let mut loss_mask = vec![0u8; tokens.len()];
    loss_mask[target_start..].fill(1);

    Ok(DecoderSequence {
        tokens,
        loss_mask,
        instruction_span: 1..1 + instr.len(),
        target_span: target_start..target_end,
    })
}

/// Padded, shifted batch. All matrices are `rows x width`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CollatedBatch {
    pub tokens: Vec<Vec<u32>>,
    pub labels: Vec<Vec<u32>>,
    /// Loss mask aligned with `labels`.
    pub loss_mask: Vec<Vec<u8>>,
    pub attention: Vec<Vec<u8>>,
    pub audio_paths: Vec<String>,
    #[serde(skip)]
    pub token_mask: Vec<Vec<u8>>,
    #[serde(skip)]
    pub lengths: Vec<usize>,
}

impl CollatedBatch {
    pub fn width(&self) -> usize {
        self.tokens.first().map_or(0, Vec::len)
    }

    pub fn supervised_labels(&self) -> usize {
        self.loss_mask
            .iter()
            .map(|row| row.iter().filter(|&&m| m == 1).count())
            .sum()
    }
}

pub fn collate<T: Tokenizer + ?Sized>(
    sequences: &[DecoderSequence],
    tok: &T,
) -> Result<CollatedBatch> {
    if sequences.is_empty() {
        return Err(ConditioningError::Argument(
            "cannot collate an empty batch".into(),
        ));
    }
    let width = sequences
        .iter()
        .map(DecoderSequence::len)
        .max()
        .unwrap_or(0);
    let pad = tok.pad();
    let rows = sequences.len();
    let mut batch = CollatedBatch {
        tokens: Vec::with_capacity(rows),
        labels: Vec::with_capacity(rows),
        loss_mask: Vec::with_capacity(rows),
        attention: Vec::with_capacity(rows),
        audio_paths: Vec::new(),
        token_mask: Vec::with_capacity(rows),
        lengths: Vec::with_capacity(rows),
    };
    for seq in sequences {
        let len = seq.len();
        let mut tokens = seq.tokens.clone();
        tokens.resize(width, pad);
        let mut token_mask = seq.loss_mask.clone();
        token_mask.resize(width, 0);

        let mut labels = vec![pad; width];
        let mut label_mask = vec![0u8; width];
        if len > 1 {
            labels[..len - 1].copy_from_slice(&seq.tokens[1..]);
            label_mask[..len - 1].copy_from_slice(&seq.loss_mask[1..]);
        }
        let mut attention = vec![0u8; width];
        attention[..len].fill(1);

        batch.tokens.push(tokens);
        batch.labels.push(labels);
        batch.loss_mask.push(label_mask);
        batch.attention.push(attention);
        batch.token_mask.push(token_mask);
        batch.lengths.push(len);
    }
    Ok(batch)
}

pub const DEFAULT_BATCH_SIZE: usize = 16;

/// Writes one JSON line per batch of `batch_size` consecutive manifest
/// entries. Returns the number of batches written.
pub fn export_batches<T: Tokenizer + ?Sized, W: Write>(
    entries: &[ManifestEntry],
    tok: &T,
    batch_size: usize,
    mut writer: W,
) -> Result<usize> {
    if batch_size == 0 {
        return Err(ConditioningError::Argument(
            "batch_size must be positive".into(),
        ));
    }
    let mut count = 0;
    for chunk in entries.chunks(batch_size) {
        let sequences = chunk
            .iter()
            .map(|e| build_decoder_sequence(&e.instruction, &e.target, tok))
            .collect::<Result<Vec<_>>>()?;
        let mut batch = collate(&sequences, tok)?;
        batch.audio_paths = chunk.iter().map(|e| e.audio_path.clone()).collect();
        serde_json::to_writer(&mut writer, &batch).map_err(std::io::Error::other)?;
        writer.write_all(b"\n")?;
        count += 1;
    }
    writer.flush()?;
    Ok(count)
}
