//! On-disk formats passed between pipeline stages.
//!
//! * windows: `windows.json` (metadata) + `windows.bin` (little-endian f64,
//!   row-major, one row per window)
//! * segments: `segments.tsv` (`window_index<TAB>wave_type<TAB>onset<TAB>offset`)
//!   + `rpeaks.json` (per-window R indices, used to regroup segments into
//!   beats)
//! * sentences: `sentences.txt` (ids, a tab, `onset:offset` spans) +
//!   `sentences_meta.jsonl` (window reference and drawn beat count per line)

use ecglang::delineation::{Delineation, Heartbeat, WaveSegment, WaveType};
use ecglang::sentences::Sentence;
use ecglang::{Error, Result};
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WindowMeta {
    pub record_id: String,
    pub patient_id: String,
    pub start_sample: usize,
    /// Task label (rhythm class or beat class), when known.
    pub label: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WindowsMeta {
    pub fs: u32,
    pub window_samples: usize,
    pub windows: Vec<WindowMeta>,
}

pub fn write_windows(
    dir: &Path,
    fs: u32,
    window_samples: usize,
    windows: &[(Vec<f64>, WindowMeta)],
) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let meta = WindowsMeta {
        fs,
        window_samples,
        windows: windows.iter().map(|(_, m)| m.clone()).collect(),
    };
    let mut blob = Vec::with_capacity(windows.len() * window_samples * 8);
    for (samples, _) in windows {
        assert_eq!(samples.len(), window_samples);
        for v in samples {
            blob.extend_from_slice(&v.to_le_bytes());
        }
    }
    std::fs::write(dir.join("windows.json"), serde_json::to_string_pretty(&meta)?)?;
    std::fs::write(dir.join("windows.bin"), blob)?;
    Ok(())
}

pub fn read_windows(dir: &Path) -> Result<(WindowsMeta, Vec<Vec<f64>>)> {
    let meta: WindowsMeta =
        serde_json::from_str(&std::fs::read_to_string(dir.join("windows.json"))?)?;
    let blob = std::fs::read(dir.join("windows.bin"))?;
    let expected = meta.windows.len() * meta.window_samples * 8;
    if blob.len() != expected {
        return Err(Error::Truncated {
            expected,
            got: blob.len(),
        });
    }
    let mut windows = Vec::with_capacity(meta.windows.len());
    for w in 0..meta.windows.len() {
        let base = w * meta.window_samples * 8;
        let samples: Vec<f64> = (0..meta.window_samples)
            .map(|i| {
                let o = base + i * 8;
                f64::from_le_bytes(blob[o..o + 8].try_into().expect("8-byte chunk"))
            })
            .collect();
        windows.push(samples);
    }
    Ok((meta, windows))
}

pub fn write_segments(dir: &Path, delineations: &[Delineation]) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut tsv = String::new();
    for (wi, d) in delineations.iter().enumerate() {
        for seg in &d.segments {
            tsv.push_str(&format!(
                "{wi}\t{}\t{}\t{}\n",
                seg.wave_type.label(),
                seg.onset,
                seg.offset
            ));
        }
    }
    std::fs::write(dir.join("segments.tsv"), tsv)?;
    let rpeaks: Vec<Vec<usize>> = delineations
        .iter()
        .map(|d| d.beats.iter().map(|b| b.r_index).collect())
        .collect();
    std::fs::write(dir.join("rpeaks.json"), serde_json::to_string(&rpeaks)?)?;
    Ok(())
}

/// Rebuild per-window delineations. Beat membership is recovered from the R
/// list: each beat owns the segments between the midpoints to its neighbors,
/// which is exactly how the delineator clipped them.
pub fn read_segments(dir: &Path, n_windows: usize, window_len: usize) -> Result<Vec<Delineation>> {
    let text = std::fs::read_to_string(dir.join("segments.tsv"))?;
    let rpeaks: Vec<Vec<usize>> =
        serde_json::from_str(&std::fs::read_to_string(dir.join("rpeaks.json"))?)?;
    if rpeaks.len() != n_windows {
        return Err(Error::Parse(format!(
            "rpeaks.json covers {} windows, expected {n_windows}",
            rpeaks.len()
        )));
    }
    let mut per_window: Vec<Vec<(WaveType, usize, usize)>> = vec![Vec::new(); n_windows];
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 4 {
            return Err(Error::Parse(format!(
                "segments.tsv line {}: expected 4 columns",
                lineno + 1
            )));
        }
        let wi: usize = cols[0]
            .parse()
            .map_err(|_| Error::Parse(format!("bad window index '{}'", cols[0])))?;
        if wi >= n_windows {
            return Err(Error::Parse(format!("window index {wi} out of range")));
        }
        let wave_type: WaveType = cols[1].parse()?;
        let onset: usize = cols[2]
            .parse()
            .map_err(|_| Error::Parse(format!("bad onset '{}'", cols[2])))?;
        let offset: usize = cols[3]
            .parse()
            .map_err(|_| Error::Parse(format!("bad offset '{}'", cols[3])))?;
        per_window[wi].push((wave_type, onset, offset));
    }

    let mut out = Vec::with_capacity(n_windows);
    for (wi, mut segs) in per_window.into_iter().enumerate() {
        segs.sort_by_key(|(_, on, _)| *on);
        let rs = &rpeaks[wi];
        let mut segments = Vec::with_capacity(segs.len());
        let mut beats = Vec::with_capacity(rs.len());
        if rs.is_empty() {
            for (t, on, off) in segs {
                segments.push(WaveSegment {
                    wave_type: t,
                    onset: on,
                    offset: off,
                    r_index: None,
                });
            }
        } else {
            let mut cursor = 0usize;
            for (bi, &r) in rs.iter().enumerate() {
                let span_end = if bi + 1 < rs.len() {
                    (r + rs[bi + 1]) / 2
                } else {
                    window_len
                };
                let seg_start = segments.len();
                while cursor < segs.len() && segs[cursor].1 < span_end {
                    let (t, on, off) = segs[cursor];
                    segments.push(WaveSegment {
                        wave_type: t,
                        onset: on,
                        offset: off,
                        r_index: if t == WaveType::QRS { Some(r) } else { None },
                    });
                    cursor += 1;
                }
                beats.push(Heartbeat {
                    r_index: r,
                    segments: seg_start..segments.len(),
                });
            }
        }
        out.push(Delineation { beats, segments });
    }
    Ok(out)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SentenceMeta {
    pub line: usize,
    pub window: usize,
    pub n_beats: usize,
}

pub fn write_sentences(dir: &Path, sentences: &[Sentence]) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut text = String::new();
    let mut meta = String::new();
    for (i, s) in sentences.iter().enumerate() {
        text.push_str(&s.to_corpus_line());
        text.push('\n');
        meta.push_str(&serde_json::to_string(&SentenceMeta {
            line: i,
            window: s.window_ref,
            n_beats: s.n_beats,
        })?);
        meta.push('\n');
    }
    std::fs::write(dir.join("sentences.txt"), text)?;
    std::fs::write(dir.join("sentences_meta.jsonl"), meta)?;
    Ok(())
}

pub fn read_sentences(dir: &Path) -> Result<Vec<Sentence>> {
    let text = std::fs::read_to_string(dir.join("sentences.txt"))?;
    let meta_text = std::fs::read_to_string(dir.join("sentences_meta.jsonl"))?;
    let metas: Vec<SentenceMeta> = meta_text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Error::from))
        .collect::<Result<_>>()?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let meta = metas
            .get(i)
            .ok_or_else(|| Error::Parse(format!("sentence {i} has no metadata line")))?;
        let mut s = Sentence::from_corpus_line(line, meta.window)?;
        s.n_beats = meta.n_beats;
        out.push(s);
    }
    Ok(out)
}

/// Ground-truth manifest written by `synth` alongside the CSV/annotation
/// files.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TruthManifest {
    pub fs: u32,
    pub window_samples: usize,
    pub windows: Vec<TruthWindow>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TruthWindow {
    pub record_id: String,
    pub patient_id: String,
    pub csv: String,
    pub ann: String,
    pub rhythm: String,
    pub morphology_id: usize,
    pub r_peaks: Vec<usize>,
    /// `(wave_type, onset, offset)` tiling.
    pub segments: Vec<(String, usize, usize)>,
}
