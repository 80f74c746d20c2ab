//! Beat sentences and masked-token batches.
//!
//! A sentence covers 1, 2, 6, or 8 consecutive heartbeats (drawn uniformly),
//! wrapped as `[CLS] tokens... [SEP]`, with every wave token carrying its
//! `[onset, offset)` span into the source window. Masking replaces exactly
//! `round(rate * n_wave_tokens)` wave tokens with `[MASK]`; specials are
//! never masked and never become labels.

use crate::delineation::Delineation;
use crate::vocabulary::Vocabulary;
use crate::{Error, Result};
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Token-id layout facts needed away from the full vocabulary.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TokenSpace {
    pub n_wave_tokens: u32,
}

impl TokenSpace {
    pub fn pad_id(&self) -> u32 {
        self.n_wave_tokens
    }
    pub fn sep_id(&self) -> u32 {
        self.n_wave_tokens + 1
    }
    pub fn mask_id(&self) -> u32 {
        self.n_wave_tokens + 2
    }
    pub fn cls_id(&self) -> u32 {
        self.n_wave_tokens + 3
    }
    pub fn vocab_size(&self) -> usize {
        self.n_wave_tokens as usize + 4
    }
    pub fn is_wave(&self, id: u32) -> bool {
        id < self.n_wave_tokens
    }
}

impl From<&Vocabulary> for TokenSpace {
    fn from(v: &Vocabulary) -> Self {
        TokenSpace {
            n_wave_tokens: v.n_wave_tokens() as u32,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SentenceConfig {
    pub max_seq_len: usize,
    pub mask_rate: f64,
    /// BERT-style 80/10/10 corruption instead of pure masking.
    pub bert_style_corruption: bool,
    /// Also zero the raw-signal span under masked tokens when embedding.
    pub mask_cnn_too: bool,
}

impl Default for SentenceConfig {
    fn default() -> Self {
        Self {
            max_seq_len: 128,
            mask_rate: 0.15,
            bert_style_corruption: false,
            mask_cnn_too: false,
        }
    }
}

/// One tokenized wave: global token id plus its sample span.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TokenizedWave {
    pub id: u32,
    pub onset: usize,
    pub offset: usize,
}

/// All tokens of one heartbeat, in temporal order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenizedBeat {
    pub tokens: Vec<TokenizedWave>,
}

/// Assign every segment of a delineated window to its vocabulary token,
/// grouped per beat.
pub fn tokenize_beats(
    samples: &[f64],
    delineation: &Delineation,
    vocab: &Vocabulary,
    band: Option<usize>,
) -> Result<Vec<TokenizedBeat>> {
    let mut beats = Vec::with_capacity(delineation.beats.len());
    for beat in &delineation.beats {
        let mut tokens = Vec::new();
        for seg in delineation.beat_segments(beat) {
            let id = vocab.assign(&samples[seg.onset..seg.offset], seg.wave_type, band)?;
            tokens.push(TokenizedWave {
                id,
                onset: seg.onset,
                offset: seg.offset,
            });
        }
        beats.push(TokenizedBeat { tokens });
    }
    Ok(beats)
}

/// Ordered token-id sequence for consecutive heartbeats, CLS-first and
/// SEP-terminated.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sentence {
    pub token_ids: Vec<u32>,
    /// Sample span per token; `None` on CLS/SEP/PAD.
    pub boundaries: Vec<Option<(usize, usize)>>,
    /// Index of the source window in the corpus.
    pub window_ref: usize,
    /// Drawn sentence size in beats (1, 2, 6, or 8); the tail of a window
    /// may hold fewer actual beats.
    pub n_beats: usize,
}

impl Sentence {
    pub fn len(&self) -> usize {
        self.token_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_ids.is_empty()
    }

    pub fn wave_positions(&self, space: TokenSpace) -> Vec<usize> {
        self.token_ids
            .iter()
            .enumerate()
            .filter(|(_, &id)| space.is_wave(id))
            .map(|(i, _)| i)
            .collect()
    }

    /// Corpus line: space-separated ids, a tab, then `onset:offset` per
    /// token (`-` for specials).
    pub fn to_corpus_line(&self) -> String {
        let ids: Vec<String> = self.token_ids.iter().map(|id| id.to_string()).collect();
        let spans: Vec<String> = self
            .boundaries
            .iter()
            .map(|b| match b {
                Some((on, off)) => format!("{on}:{off}"),
                None => "-".to_string(),
            })
            .collect();
        format!("{}\t{}", ids.join(" "), spans.join(" "))
    }

    pub fn from_corpus_line(line: &str, window_ref: usize) -> Result<Self> {
        let (ids_part, spans_part) = line
            .split_once('\t')
            .ok_or_else(|| Error::Parse("corpus line is missing the span column".into()))?;
        let token_ids: Vec<u32> = ids_part
            .split_whitespace()
            .map(|t| {
                t.parse()
                    .map_err(|_| Error::Parse(format!("bad token id '{t}'")))
            })
            .collect::<Result<_>>()?;
        let boundaries: Vec<Option<(usize, usize)>> = spans_part
            .split_whitespace()
            .map(|t| {
                if t == "-" {
                    Ok(None)
                } else {
                    let (a, b) = t
                        .split_once(':')
                        .ok_or_else(|| Error::Parse(format!("bad span '{t}'")))?;
                    let on = a
                        .parse()
                        .map_err(|_| Error::Parse(format!("bad span onset '{a}'")))?;
                    let off = b
                        .parse()
                        .map_err(|_| Error::Parse(format!("bad span offset '{b}'")))?;
                    Ok(Some((on, off)))
                }
            })
            .collect::<Result<_>>()?;
        if token_ids.len() != boundaries.len() {
            return Err(Error::Parse(format!(
                "{} ids but {} spans",
                token_ids.len(),
                boundaries.len()
            )));
        }
        let n_beats = 0; // not recorded in the line format
        Ok(Sentence {
            token_ids,
            boundaries,
            window_ref,
            n_beats,
        })
    }
}

/// Greedy left-to-right packing: draw n from {1, 2, 6, 8}, consume that many
/// consecutive beats (or all remaining), emit `[CLS] ... [SEP]`. Sentences
/// that would exceed `max_seq_len` are truncated at a beat boundary.
pub fn build_sentences(
    beats: &[TokenizedBeat],
    window_ref: usize,
    space: TokenSpace,
    max_seq_len: usize,
    rng: &mut impl Rng,
) -> Vec<Sentence> {
    const CHOICES: [usize; 4] = [1, 2, 6, 8];
    let mut out = Vec::new();
    let mut i = 0;
    while i < beats.len() {
        let n = CHOICES[rng.gen_range(0..CHOICES.len())];
        let take = n.min(beats.len() - i);
        let sentence = pack_sentence(&beats[i..i + take], window_ref, space, max_seq_len, n);
        // Truncation may have consumed fewer beats than drawn.
        let consumed = sentence.consumed.max(1);
        out.push(sentence.sentence);
        i += consumed;
    }
    out
}

/// Build one sentence from exactly the given beats (fewer if `max_seq_len`
/// forces truncation at a beat boundary).
pub fn pack_all_beats(
    beats: &[TokenizedBeat],
    window_ref: usize,
    space: TokenSpace,
    max_seq_len: usize,
) -> Sentence {
    pack_sentence(beats, window_ref, space, max_seq_len, beats.len().max(1)).sentence
}

struct Packed {
    sentence: Sentence,
    consumed: usize,
}

fn pack_sentence(
    beats: &[TokenizedBeat],
    window_ref: usize,
    space: TokenSpace,
    max_seq_len: usize,
    drawn: usize,
) -> Packed {
    let budget = max_seq_len.saturating_sub(2); // CLS + SEP
    let mut token_ids = vec![space.cls_id()];
    let mut boundaries: Vec<Option<(usize, usize)>> = vec![None];
    let mut used = 0;
    let mut consumed = 0;
    for beat in beats {
        if consumed > 0 && used + beat.tokens.len() > budget {
            break;
        }
        for w in beat.tokens.iter().take(budget - used.min(budget)) {
            token_ids.push(w.id);
            boundaries.push(Some((w.onset, w.offset)));
            used += 1;
        }
        consumed += 1;
    }
    token_ids.push(space.sep_id());
    boundaries.push(None);
    Packed {
        sentence: Sentence {
            token_ids,
            boundaries,
            window_ref,
            n_beats: drawn,
        },
        consumed,
    }
}

/// Mask exactly `round(rate * n_wave_tokens)` wave-token positions, sampled
/// without replacement. Labels carry the original id at masked positions and
/// -1 elsewhere.
pub fn mask_for_mlm(
    sentence: &Sentence,
    rate: f64,
    space: TokenSpace,
    cfg: &SentenceConfig,
    rng: &mut impl Rng,
) -> (Vec<u32>, Vec<i32>) {
    assert!((0.0..=1.0).contains(&rate), "mask rate must be in [0, 1]");
    let mut input_ids = sentence.token_ids.clone();
    let mut labels = vec![-1i32; input_ids.len()];
    let wave_positions = sentence.wave_positions(space);
    let n_mask = (rate * wave_positions.len() as f64).round() as usize;
    if n_mask == 0 {
        return (input_ids, labels);
    }
    // Partial Fisher-Yates: the first n_mask entries are a uniform sample
    // without replacement.
    let mut pool = wave_positions;
    for i in 0..n_mask {
        let j = rng.gen_range(i..pool.len());
        pool.swap(i, j);
    }
    for &pos in &pool[..n_mask] {
        labels[pos] = input_ids[pos] as i32;
        if cfg.bert_style_corruption {
            let roll: f64 = rng.gen();
            input_ids[pos] = if roll < 0.8 {
                space.mask_id()
            } else if roll < 0.9 {
                rng.gen_range(0..space.n_wave_tokens)
            } else {
                input_ids[pos]
            };
        } else {
            input_ids[pos] = space.mask_id();
        }
    }
    (input_ids, labels)
}

/// Padded model inputs for a batch of masked sentences.
#[derive(Debug, Clone)]
pub struct MaskedBatch {
    pub input_ids: Vec<Vec<u32>>,
    pub labels: Vec<Vec<i32>>,
    pub attention_mask: Vec<Vec<u8>>,
    pub boundaries: Vec<Vec<Option<(usize, usize)>>>,
    /// Window index per row, into the corpus windows the batch was built from.
    pub window_refs: Vec<usize>,
    pub seq_len: usize,
}

impl MaskedBatch {
    pub fn batch_size(&self) -> usize {
        self.input_ids.len()
    }
}

/// Right-pad masked sentences to the batch maximum.
pub fn collate(
    sentences: &[Sentence],
    masked: &[(Vec<u32>, Vec<i32>)],
    space: TokenSpace,
    max_seq_len: usize,
) -> Result<MaskedBatch> {
    assert_eq!(sentences.len(), masked.len());
    let seq_len = sentences.iter().map(Sentence::len).max().unwrap_or(0);
    if seq_len > max_seq_len {
        return Err(Error::Precondition(format!(
            "sentence of {seq_len} tokens exceeds max_seq_len {max_seq_len}"
        )));
    }
    let mut batch = MaskedBatch {
        input_ids: Vec::with_capacity(sentences.len()),
        labels: Vec::with_capacity(sentences.len()),
        attention_mask: Vec::with_capacity(sentences.len()),
        boundaries: Vec::with_capacity(sentences.len()),
        window_refs: Vec::with_capacity(sentences.len()),
        seq_len,
    };
    for (s, (ids, labels)) in sentences.iter().zip(masked) {
        let mut row_ids = ids.clone();
        let mut row_labels = labels.clone();
        let mut row_mask = vec![1u8; s.len()];
        let mut row_bounds = s.boundaries.clone();
        row_ids.resize(seq_len, space.pad_id());
        row_labels.resize(seq_len, -1);
        row_mask.resize(seq_len, 0);
        row_bounds.resize(seq_len, None);
        batch.input_ids.push(row_ids);
        batch.labels.push(row_labels);
        batch.attention_mask.push(row_mask);
        batch.boundaries.push(row_bounds);
        batch.window_refs.push(s.window_ref);
    }
    Ok(batch)
}

/// Map a wave-token sequence back to its wave-type string via the layout;
/// used by round-trip checks and attention inspection.
pub fn wave_type_string(ids: &[u32], vocab: &Vocabulary) -> String {
    ids.iter()
        .map(|&id| match vocab.wave_type_of(id) {
            Some(t) => t.label(),
            None if id == vocab.cls_id() => "[CLS]",
            None if id == vocab.sep_id() => "[SEP]",
            None if id == vocab.mask_id() => "[MASK]",
            None if id == vocab.pad_id() => "[PAD]",
            None => "?",
        })
        .collect::<Vec<_>>()
        .join(" ")
}
