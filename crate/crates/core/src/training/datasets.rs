//! Glue from segmented windows to training corpora and labeled datasets.

use super::{TaskDataset, TaskExample, TokenCorpus};
use crate::delineation::{self, Delineation, DelineationSpec};
use crate::sentences::{build_sentences, pack_all_beats, tokenize_beats, SentenceConfig, TokenSpace};
use crate::synthgen::{Corpus, Rhythm};
use crate::vocabulary::{fit_vocabulary, FitReport, VocabConfig, Vocabulary, WavesByType};
use crate::Result;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Where wave segments come from.
#[derive(Debug, Clone)]
pub enum SegmentSource {
    /// Generator ground truth (exact; isolates downstream stages from
    /// delineation error).
    Truth,
    /// Run the R detector and delineator on each window.
    Detect(Box<DelineationSpec>),
}

/// Segment every window of a synthetic corpus.
pub fn segment_corpus(corpus: &Corpus, source: &SegmentSource) -> Vec<Delineation> {
    corpus
        .windows
        .iter()
        .map(|w| match source {
            SegmentSource::Truth => {
                crate::synthgen::truth_delineation(&w.truth, w.samples.len())
            }
            SegmentSource::Detect(spec) => {
                let peaks = delineation::detect_r_peaks(&w.samples, corpus.fs, spec);
                delineation::delineate(&w.samples, corpus.fs, &peaks, spec)
            }
        })
        .collect()
}

/// Pool every segmented wave and fit the vocabulary.
pub fn fit_corpus_vocabulary(
    corpus: &Corpus,
    delineations: &[Delineation],
    cfg: &VocabConfig,
) -> Result<(Vocabulary, FitReport)> {
    let mut waves = WavesByType::default();
    for (w, d) in corpus.windows.iter().zip(delineations) {
        waves.extend_from_window(&w.samples, &d.segments);
    }
    fit_vocabulary(&waves, cfg)
}

/// Tokenize every window and pack randomly sized beat sentences.
pub fn token_corpus(
    corpus: &Corpus,
    delineations: &[Delineation],
    vocab: &Vocabulary,
    scfg: &SentenceConfig,
    dtw_band: Option<usize>,
    seed: u64,
) -> Result<TokenCorpus> {
    let space = TokenSpace::from(vocab);
    let mut sentences = Vec::new();
    for (wi, (w, d)) in corpus.windows.iter().zip(delineations).enumerate() {
        let beats = tokenize_beats(&w.samples, d, vocab, dtw_band)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (wi as u64).wrapping_mul(0x9E37_79B9));
        sentences.extend(build_sentences(&beats, wi, space, scfg.max_seq_len, &mut rng));
    }
    Ok(TokenCorpus {
        windows: corpus.windows.iter().map(|w| w.samples.clone()).collect(),
        sentences,
        vocab_fingerprint: vocab.fingerprint().to_string(),
        n_wave_tokens: vocab.n_wave_tokens() as u32,
    })
}

/// How task labels derive from the synthetic ground truth.
#[derive(Debug, Clone)]
pub enum TaskLabeling {
    /// Binary regular (0) vs irregular (1) rhythm.
    Rhythm,
    /// One class per patient.
    PatientIdentity,
    /// Binary: is this the target patient?
    PatientVerify { target: String },
}

/// One sentence per window (all beats that fit), labeled per the scheme.
pub fn task_dataset(
    corpus: &Corpus,
    delineations: &[Delineation],
    vocab: &Vocabulary,
    labeling: &TaskLabeling,
    scfg: &SentenceConfig,
    dtw_band: Option<usize>,
) -> Result<TaskDataset> {
    let space = TokenSpace::from(vocab);
    let mut patients: Vec<String> = corpus.windows.iter().map(|w| w.patient_id.clone()).collect();
    patients.sort();
    patients.dedup();

    let class_names: Vec<String> = match labeling {
        TaskLabeling::Rhythm => vec!["regular".into(), "irregular".into()],
        TaskLabeling::PatientIdentity => patients.clone(),
        TaskLabeling::PatientVerify { .. } => vec!["other".into(), "target".into()],
    };

    let mut examples = Vec::with_capacity(corpus.windows.len());
    for (wi, (w, d)) in corpus.windows.iter().zip(delineations).enumerate() {
        let beats = tokenize_beats(&w.samples, d, vocab, dtw_band)?;
        let sentence = pack_all_beats(&beats, wi, space, scfg.max_seq_len);
        let label = match labeling {
            TaskLabeling::Rhythm => match w.truth.rhythm {
                Rhythm::Regular => 0,
                Rhythm::Irregular => 1,
            },
            TaskLabeling::PatientIdentity => patients
                .iter()
                .position(|p| *p == w.patient_id)
                .expect("patient in inventory") as u32,
            TaskLabeling::PatientVerify { target } => u32::from(w.patient_id == *target),
        };
        examples.push(TaskExample {
            sentence,
            label,
            patient_id: w.patient_id.clone(),
        });
    }
    Ok(TaskDataset {
        windows: corpus.windows.iter().map(|w| w.samples.clone()).collect(),
        examples,
        class_names,
        vocab_fingerprint: vocab.fingerprint().to_string(),
        n_wave_tokens: vocab.n_wave_tokens() as u32,
    })
}

/// Inter-patient split of a dataset; window storage is rebuilt per side so
/// no window of a test patient is reachable from the train side.
pub fn split_task_dataset(
    dataset: &TaskDataset,
    test_fraction: f64,
    seed: u64,
) -> Result<(TaskDataset, TaskDataset)> {
    let pairs: Vec<(String, String)> = dataset
        .examples
        .iter()
        .enumerate()
        .map(|(i, e)| (e.patient_id.clone(), i.to_string()))
        .collect();
    let split = crate::evaluation::split_by_patient(&pairs, test_fraction, seed)?;
    let test_patients: std::collections::BTreeSet<&str> =
        split.test_patients.iter().map(|s| s.as_str()).collect();

    let mut sides = (empty_like(dataset), empty_like(dataset));
    for e in &dataset.examples {
        let side = if test_patients.contains(e.patient_id.as_str()) {
            &mut sides.1
        } else {
            &mut sides.0
        };
        let mut sentence = e.sentence.clone();
        side.windows.push(dataset.windows[sentence.window_ref].clone());
        sentence.window_ref = side.windows.len() - 1;
        side.examples.push(TaskExample {
            sentence,
            label: e.label,
            patient_id: e.patient_id.clone(),
        });
    }
    Ok(sides)
}

/// Hold out a fraction of every patient's windows (identification and
/// verification need each identity present on both sides; what is held out
/// is unseen windows, not unseen patients).
pub fn split_within_patients(
    dataset: &TaskDataset,
    test_fraction: f64,
    seed: u64,
) -> Result<(TaskDataset, TaskDataset)> {
    use rand::Rng as _;
    assert!((0.0..1.0).contains(&test_fraction) && test_fraction > 0.0);
    let mut by_patient: Vec<(String, Vec<usize>)> = Vec::new();
    for (i, e) in dataset.examples.iter().enumerate() {
        match by_patient.iter_mut().find(|(p, _)| *p == e.patient_id) {
            Some((_, v)) => v.push(i),
            None => by_patient.push((e.patient_id.clone(), vec![i])),
        }
    }
    by_patient.sort_by(|a, b| a.0.cmp(&b.0));
    let mut test_idx: std::collections::BTreeSet<usize> = Default::default();
    for (pi, (_, idxs)) in by_patient.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (pi as u64).wrapping_mul(0x9E37_79B9));
        let mut order = idxs.clone();
        for i in (1..order.len()).rev() {
            let j = rng.gen_range(0..=i);
            order.swap(i, j);
        }
        let n_test = ((order.len() as f64 * test_fraction).round() as usize)
            .clamp(1, order.len().saturating_sub(1).max(1));
        test_idx.extend(order.into_iter().take(n_test));
    }
    let mut sides = (empty_like(dataset), empty_like(dataset));
    for (i, e) in dataset.examples.iter().enumerate() {
        let side = if test_idx.contains(&i) {
            &mut sides.1
        } else {
            &mut sides.0
        };
        let mut sentence = e.sentence.clone();
        side.windows.push(dataset.windows[sentence.window_ref].clone());
        sentence.window_ref = side.windows.len() - 1;
        side.examples.push(TaskExample {
            sentence,
            label: e.label,
            patient_id: e.patient_id.clone(),
        });
    }
    Ok(sides)
}

fn empty_like(dataset: &TaskDataset) -> TaskDataset {
    TaskDataset {
        windows: Vec::new(),
        examples: Vec::new(),
        class_names: dataset.class_names.clone(),
        vocab_fingerprint: dataset.vocab_fingerprint.clone(),
        n_wave_tokens: dataset.n_wave_tokens,
    }
}
