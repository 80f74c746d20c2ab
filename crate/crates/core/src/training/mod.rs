//! Masked-wave pretraining and task fine-tuning.
//!
//! All randomness derives from one master seed: epoch shuffles, per-sentence
//! masking, and dropout streams are each seeded by mixing the master seed
//! with stable indices, so a run is bit-reproducible and an interrupted run
//! resumed from a checkpoint replays the identical schedule.

pub mod datasets;

use crate::autograd::{AdamState, ParamStore, Tape};
use crate::evaluation::ConfusionMatrix;
use crate::model::{
    self, add_head_params, flat_labels, forward_mlm, head_forward, update_running_stats,
    EmbedInputs, HeadKind, Mode, ModelConfig,
};
use crate::sentences::{collate, mask_for_mlm, Sentence, SentenceConfig, TokenSpace};
use crate::{Error, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Mlm,
    Afib,
    Heartbeat,
    Apnea,
    Verify,
    Identify,
}

impl Task {
    pub fn label(&self) -> &'static str {
        match self {
            Task::Mlm => "mlm",
            Task::Afib => "afib",
            Task::Heartbeat => "heartbeat",
            Task::Apnea => "apnea",
            Task::Verify => "verify",
            Task::Identify => "identify",
        }
    }
}

impl std::str::FromStr for Task {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mlm" => Ok(Task::Mlm),
            "afib" => Ok(Task::Afib),
            "heartbeat" => Ok(Task::Heartbeat),
            "apnea" => Ok(Task::Apnea),
            "verify" => Ok(Task::Verify),
            "identify" => Ok(Task::Identify),
            other => Err(Error::Parse(format!("unknown task '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub task: Task,
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: u64,
    pub seed: u64,
    pub head: Option<HeadKind>,
    /// Evaluate on the held-out set every this many epochs.
    pub eval_every: u64,
    pub freeze_encoder: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig::for_task(Task::Mlm)
    }
}

impl TrainConfig {
    /// Published per-task hyperparameters; batch size defaults to 64 where
    /// unstated.
    pub fn for_task(task: Task) -> Self {
        let (lr, batch_size, epochs, head) = match task {
            Task::Mlm => (1e-3, 32, 10, None),
            Task::Afib => (1e-3, 64, 13, Some(HeadKind::DenseBinary)),
            Task::Heartbeat => (1e-4, 64, 20, Some(HeadKind::ResidualMulticlass)),
            Task::Apnea => (5e-3, 64, 5, Some(HeadKind::DenseBinary)),
            Task::Verify => (1e-4, 128, 20, Some(HeadKind::DenseBinary)),
            Task::Identify => (1e-4, 128, 20, Some(HeadKind::DenseMulticlass)),
        };
        TrainConfig {
            task,
            lr,
            batch_size,
            epochs,
            seed: 0,
            head,
            eval_every: 1,
            freeze_encoder: false,
        }
    }
}

/// Pretraining corpus: sentences plus the raw windows they reference.
#[derive(Debug, Clone)]
pub struct TokenCorpus {
    pub windows: Vec<Vec<f64>>,
    pub sentences: Vec<Sentence>,
    pub vocab_fingerprint: String,
    pub n_wave_tokens: u32,
}

impl TokenCorpus {
    pub fn space(&self) -> TokenSpace {
        TokenSpace {
            n_wave_tokens: self.n_wave_tokens,
        }
    }
}

/// One training-log line (serialized as JSONL by the CLI).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MlmLogEntry {
    pub step: u64,
    pub epoch: u64,
    pub loss: f64,
    pub masked_acc: f64,
}

pub struct PretrainResult {
    pub store: ParamStore<f32>,
    pub optimizer: AdamState<f32>,
    pub history: Vec<MlmLogEntry>,
    pub epochs_done: u64,
    pub steps_done: u64,
}

/// Seed mixer for derived RNG streams.
fn mix(seed: u64, a: u64, b: u64) -> u64 {
    let mut h = seed ^ 0x9E37_79B9_7F4A_7C15;
    for v in [a.wrapping_add(1), b.wrapping_add(1)] {
        h ^= v.wrapping_mul(0xBF58_476D_1CE4_E5B9).rotate_left(31);
        h = h.wrapping_mul(0x94D0_49BB_1331_11EB);
    }
    h
}

/// Shuffle sentence indices grouped by source window, so each window's
/// U-Net forward is shared by its sentences within a batch.
fn shuffled_order(sentences: &[Sentence], rng: &mut ChaCha8Rng) -> Vec<usize> {
    use rand::Rng as _;
    let mut groups: Vec<(usize, Vec<usize>)> = Vec::new();
    for (i, s) in sentences.iter().enumerate() {
        match groups.iter_mut().find(|(w, _)| *w == s.window_ref) {
            Some((_, v)) => v.push(i),
            None => groups.push((s.window_ref, vec![i])),
        }
    }
    for i in (1..groups.len()).rev() {
        let j = rng.gen_range(0..=i);
        groups.swap(i, j);
    }
    groups.into_iter().flat_map(|(_, v)| v).collect()
}

/// Per-epoch checkpoint sink.
pub type EpochSink<'a> =
    &'a mut dyn FnMut(u64, &ParamStore<f32>, &AdamState<f32>, u64) -> Result<()>;

/// Masked-wave pretraining. `resume` continues an interrupted run: the same
/// seed schedule is replayed from the recorded epoch, so a resumed run is
/// bit-identical to an uninterrupted one.
pub fn pretrain(
    corpus: &TokenCorpus,
    cfg: &TrainConfig,
    mcfg: &ModelConfig,
    scfg: &SentenceConfig,
    resume: Option<(ParamStore<f32>, AdamState<f32>, u64, u64, String)>,
    mut per_epoch: Option<EpochSink>,
) -> Result<PretrainResult> {
    if corpus.sentences.is_empty() {
        return Err(Error::EmptyInput("pretraining corpus has no sentences".into()));
    }
    mcfg.validate()?;
    if mcfg.vocab_size != corpus.n_wave_tokens as usize + 4 {
        return Err(Error::Config(format!(
            "model vocab_size {} does not cover {} wave tokens + 4 specials",
            mcfg.vocab_size, corpus.n_wave_tokens
        )));
    }
    let space = corpus.space();

    let (mut store, mut adam, start_epoch, mut steps) = match resume {
        Some((store, adam, epochs_done, steps, fingerprint)) => {
            if fingerprint != corpus.vocab_fingerprint {
                return Err(Error::FingerprintMismatch {
                    expected: corpus.vocab_fingerprint.clone(),
                    got: fingerprint,
                });
            }
            (store, adam, epochs_done, steps)
        }
        None => {
            let store = model::init_params::<f32>(mcfg, cfg.seed);
            let adam = AdamState::new(&store, cfg.lr);
            (store, adam, 0, 0)
        }
    };

    let mut history = Vec::new();
    // A step-0 entry records the untrained loss (close to ln of the wave
    // inventory) before any update, including for --epochs 0 runs.
    if start_epoch == 0 && steps == 0 {
        let n = corpus.sentences.len().min(cfg.batch_size.max(1));
        let sentences: Vec<Sentence> = corpus.sentences[..n].to_vec();
        let masked: Vec<(Vec<u32>, Vec<i32>)> = sentences
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let mut rng = ChaCha8Rng::seed_from_u64(mix(cfg.seed, u64::MAX, i as u64));
                mask_for_mlm(s, scfg.mask_rate, space, scfg, &mut rng)
            })
            .collect();
        let batch = collate(&sentences, &masked, space, mcfg.max_seq_len)?;
        let mut tape: Tape<f32> = Tape::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let inputs = EmbedInputs {
            batch: &batch,
            windows: &|i| corpus.windows[i].as_slice(),
            mask_cnn_too: scfg.mask_cnn_too,
        };
        let out = forward_mlm(&mut tape, &store, &inputs, mcfg, Mode::Eval, &mut rng);
        let labels = flat_labels(&batch);
        let (loss, _) = tape.cross_entropy(out.logits, &labels);
        history.push(MlmLogEntry {
            step: 0,
            epoch: 0,
            loss: tape.value_scalar(loss),
            masked_acc: masked_accuracy(&tape, out.logits, &labels, mcfg.n_wave_tokens()),
        });
    }
    for epoch in start_epoch..cfg.epochs {
        let mut epoch_rng = ChaCha8Rng::seed_from_u64(mix(cfg.seed, epoch, 0));
        let order = shuffled_order(&corpus.sentences, &mut epoch_rng);
        for chunk in order.chunks(cfg.batch_size.max(1)) {
            let sentences: Vec<Sentence> =
                chunk.iter().map(|&i| corpus.sentences[i].clone()).collect();
            let masked: Vec<(Vec<u32>, Vec<i32>)> = chunk
                .iter()
                .map(|&i| {
                    let mut rng = ChaCha8Rng::seed_from_u64(mix(cfg.seed, epoch, i as u64 + 1));
                    mask_for_mlm(&corpus.sentences[i], scfg.mask_rate, space, scfg, &mut rng)
                })
                .collect();
            let batch = collate(&sentences, &masked, space, mcfg.max_seq_len)?;

            let mut tape: Tape<f32> = Tape::new();
            let mut model_rng =
                ChaCha8Rng::seed_from_u64(mix(cfg.seed, epoch, 0x0DD0 + steps));
            let inputs = EmbedInputs {
                batch: &batch,
                windows: &|i| corpus.windows[i].as_slice(),
                mask_cnn_too: scfg.mask_cnn_too,
            };
            let out = forward_mlm(&mut tape, &store, &inputs, mcfg, Mode::Train, &mut model_rng);
            let labels = flat_labels(&batch);
            let (loss, count) = tape.cross_entropy(out.logits, &labels);
            let loss_value = tape.value_scalar(loss);
            let masked_acc = masked_accuracy(&tape, out.logits, &labels, mcfg.n_wave_tokens());
            if count > 0 {
                tape.backward(loss, &mut store);
                update_running_stats(&tape, &mut store, &out.bn_nodes);
                adam.step(&mut store);
            }
            steps += 1;
            history.push(MlmLogEntry {
                step: steps,
                epoch,
                loss: loss_value,
                masked_acc,
            });
        }
        if let Some(sink) = per_epoch.as_deref_mut() {
            sink(epoch + 1, &store, &adam, steps)?;
        }
    }
    Ok(PretrainResult {
        store,
        optimizer: adam,
        history,
        epochs_done: cfg.epochs.max(start_epoch),
        steps_done: steps,
    })
}

fn masked_accuracy(tape: &Tape<f32>, logits: crate::autograd::Var, labels: &[i32], c: usize) -> f64 {
    let lv = tape.data(logits);
    let mut correct = 0usize;
    let mut total = 0usize;
    for (row, &label) in labels.iter().enumerate() {
        if label < 0 {
            continue;
        }
        let scores = &lv[row * c..(row + 1) * c];
        let pred = scores
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, _)| i)
            .unwrap_or(0);
        total += 1;
        if pred == label as usize {
            correct += 1;
        }
    }
    if total == 0 {
        0.0
    } else {
        correct as f64 / total as f64
    }
}

/// Labeled classification example: one sentence, one class.
#[derive(Debug, Clone)]
pub struct TaskExample {
    pub sentence: Sentence,
    pub label: u32,
    pub patient_id: String,
}

#[derive(Debug, Clone)]
pub struct TaskDataset {
    pub windows: Vec<Vec<f64>>,
    pub examples: Vec<TaskExample>,
    pub class_names: Vec<String>,
    pub vocab_fingerprint: String,
    pub n_wave_tokens: u32,
}

impl TaskDataset {
    pub fn n_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn space(&self) -> TokenSpace {
        TokenSpace {
            n_wave_tokens: self.n_wave_tokens,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TaskLogEntry {
    pub step: u64,
    pub epoch: u64,
    pub loss: f64,
    /// Present on epochs where the held-out set was scored.
    pub eval_accuracy: Option<f64>,
}

pub struct FinetuneResult {
    pub store: ParamStore<f32>,
    pub history: Vec<TaskLogEntry>,
    pub final_confusion: ConfusionMatrix,
    pub best_eval_accuracy: f64,
    /// First epoch (1-based) whose held-out accuracy reached the target.
    pub epochs_to_target: Option<u64>,
}

#[derive(Debug, Clone, Copy)]
pub struct FinetuneOptions {
    pub target_accuracy: Option<f64>,
    /// Stop as soon as the target is reached (the paper's epoch budget is
    /// still the hard cap).
    pub stop_at_target: bool,
    /// Disease-style tasks demand disjoint patient sets; identification and
    /// verification instead hold out windows of the same identities.
    pub expect_disjoint_patients: bool,
}

impl Default for FinetuneOptions {
    fn default() -> Self {
        Self {
            target_accuracy: None,
            stop_at_target: false,
            expect_disjoint_patients: true,
        }
    }
}

/// Fine-tune a pretrained backbone on a labeled task. The datasets must come
/// from an inter-patient split: train and eval patient sets are asserted
/// disjoint here.
pub fn finetune(
    backbone: ParamStore<f32>,
    backbone_fingerprint: &str,
    train: &TaskDataset,
    eval: &TaskDataset,
    cfg: &TrainConfig,
    mcfg: &ModelConfig,
    opts: FinetuneOptions,
) -> Result<FinetuneResult> {
    mcfg.validate()?;
    let head = cfg
        .head
        .ok_or_else(|| Error::LabelMismatch("fine-tuning needs a head kind".into()))?;
    let n_classes = train.n_classes();
    if eval.class_names != train.class_names {
        return Err(Error::LabelMismatch(
            "train and eval class inventories differ".into(),
        ));
    }
    if head == HeadKind::DenseBinary && n_classes != 2 {
        return Err(Error::LabelMismatch(format!(
            "dense_binary head requires 2 classes, dataset has {n_classes}"
        )));
    }
    if n_classes < 2 {
        return Err(Error::LabelMismatch("need at least 2 classes".into()));
    }
    for ds in [train, eval] {
        if ds.vocab_fingerprint != backbone_fingerprint {
            return Err(Error::FingerprintMismatch {
                expected: backbone_fingerprint.to_string(),
                got: ds.vocab_fingerprint.clone(),
            });
        }
        if let Some(e) = ds.examples.iter().find(|e| e.label as usize >= n_classes) {
            return Err(Error::LabelMismatch(format!(
                "label {} outside {n_classes} classes",
                e.label
            )));
        }
    }
    if opts.expect_disjoint_patients {
        let train_patients: std::collections::BTreeSet<&str> =
            train.examples.iter().map(|e| e.patient_id.as_str()).collect();
        let leaked = eval
            .examples
            .iter()
            .find(|e| train_patients.contains(e.patient_id.as_str()));
        if let Some(e) = leaked {
            return Err(Error::Precondition(format!(
                "patient {} appears in both train and eval sets",
                e.patient_id
            )));
        }
    }

    let mut store = backbone;
    if !store.contains("head.fc1.w") && !store.contains("head.block0.w") {
        add_head_params(&mut store, head, n_classes, mcfg, cfg.seed ^ 0x4EAD);
    }
    if cfg.freeze_encoder {
        for idx in 0..store.len() {
            let p = store.param_mut(idx);
            if !p.name.starts_with("head.") {
                p.trainable = false;
            }
        }
    }
    let mut adam = AdamState::new(&store, cfg.lr);

    let mut history = Vec::new();
    let mut steps = 0u64;
    let mut best = 0.0f64;
    let mut epochs_to_target = None;

    let evaluate_now = |store: &ParamStore<f32>| -> Result<(ConfusionMatrix, f64)> {
        let cm = evaluate_task(store, eval, head, cfg.batch_size, mcfg)?;
        let acc = crate::evaluation::compute_metrics(&cm)
            .overall_accuracy
            .unwrap_or(0.0);
        Ok((cm, acc))
    };

    let mut final_cm = None;
    'outer: for epoch in 0..cfg.epochs {
        let mut epoch_rng = ChaCha8Rng::seed_from_u64(mix(cfg.seed, epoch, 7));
        let sentences: Vec<Sentence> = train.examples.iter().map(|e| e.sentence.clone()).collect();
        let order = shuffled_order(&sentences, &mut epoch_rng);
        for chunk in order.chunks(cfg.batch_size.max(1)) {
            let batch_sentences: Vec<Sentence> =
                chunk.iter().map(|&i| sentences[i].clone()).collect();
            let no_mask: Vec<(Vec<u32>, Vec<i32>)> = batch_sentences
                .iter()
                .map(|s| (s.token_ids.clone(), vec![-1; s.len()]))
                .collect();
            let batch = collate(&batch_sentences, &no_mask, train.space(), mcfg.max_seq_len)?;
            let labels: Vec<i32> = chunk
                .iter()
                .map(|&i| train.examples[i].label as i32)
                .collect();

            let mut tape: Tape<f32> = Tape::new();
            let mut model_rng = ChaCha8Rng::seed_from_u64(mix(cfg.seed, epoch, 0xF1E7 + steps));
            let inputs = EmbedInputs {
                batch: &batch,
                windows: &|i| train.windows[i].as_slice(),
                mask_cnn_too: false,
            };
            let mut bn_nodes = Vec::new();
            let h = model::embed(&mut tape, &store, &inputs, mcfg, Mode::Train, &mut model_rng, &mut bn_nodes);
            let h = model::encoder_forward(
                &mut tape,
                &store,
                h,
                &batch.attention_mask,
                mcfg,
                Mode::Train,
                &mut model_rng,
            );
            let logits = head_forward(
                &mut tape,
                &store,
                h,
                head,
                &batch.attention_mask,
                mcfg,
                Mode::Train,
                &mut bn_nodes,
            );
            let (loss, _) = tape.cross_entropy(logits, &labels);
            let loss_value = tape.value_scalar(loss);
            tape.backward(loss, &mut store);
            update_running_stats(&tape, &mut store, &bn_nodes);
            adam.step(&mut store);
            steps += 1;
            history.push(TaskLogEntry {
                step: steps,
                epoch,
                loss: loss_value,
                eval_accuracy: None,
            });
        }
        if cfg.eval_every > 0 && (epoch + 1) % cfg.eval_every == 0 {
            let (cm, acc) = evaluate_now(&store)?;
            if let Some(last) = history.last_mut() {
                last.eval_accuracy = Some(acc);
            }
            if acc > best {
                best = acc;
            }
            if let Some(target) = opts.target_accuracy {
                if acc >= target && epochs_to_target.is_none() {
                    epochs_to_target = Some(epoch + 1);
                    if opts.stop_at_target {
                        final_cm = Some(cm);
                        break 'outer;
                    }
                }
            }
            final_cm = Some(cm);
        }
    }
    let final_confusion = match final_cm {
        Some(cm) => cm,
        None => {
            let (cm, acc) = evaluate_now(&store)?;
            if acc > best {
                best = acc;
            }
            cm
        }
    };
    Ok(FinetuneResult {
        store,
        history,
        final_confusion,
        best_eval_accuracy: best,
        epochs_to_target,
    })
}

/// Score a labeled dataset (eval mode): confusion matrix over argmax
/// predictions.
pub fn evaluate_task(
    store: &ParamStore<f32>,
    dataset: &TaskDataset,
    head: HeadKind,
    batch_size: usize,
    mcfg: &ModelConfig,
) -> Result<ConfusionMatrix> {
    let mut cm = ConfusionMatrix::new(dataset.class_names.clone());
    let n_classes = dataset.n_classes();
    let idxs: Vec<usize> = (0..dataset.examples.len()).collect();
    for chunk in idxs.chunks(batch_size.max(1)) {
        let sentences: Vec<Sentence> = chunk
            .iter()
            .map(|&i| dataset.examples[i].sentence.clone())
            .collect();
        let no_mask: Vec<(Vec<u32>, Vec<i32>)> = sentences
            .iter()
            .map(|s| (s.token_ids.clone(), vec![-1; s.len()]))
            .collect();
        let batch = collate(&sentences, &no_mask, dataset.space(), mcfg.max_seq_len)?;
        let mut tape: Tape<f32> = Tape::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let inputs = EmbedInputs {
            batch: &batch,
            windows: &|i| dataset.windows[i].as_slice(),
            mask_cnn_too: false,
        };
        let mut bn_nodes = Vec::new();
        let h = model::embed(&mut tape, store, &inputs, mcfg, Mode::Eval, &mut rng, &mut bn_nodes);
        let h = model::encoder_forward(
            &mut tape,
            store,
            h,
            &batch.attention_mask,
            mcfg,
            Mode::Eval,
            &mut rng,
        );
        let logits = head_forward(
            &mut tape,
            store,
            h,
            head,
            &batch.attention_mask,
            mcfg,
            Mode::Eval,
            &mut bn_nodes,
        );
        let lv = tape.data(logits);
        for (row, &i) in chunk.iter().enumerate() {
            let scores = &lv[row * n_classes..(row + 1) * n_classes];
            let pred = scores
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(b.1))
                .map(|(j, _)| j)
                .unwrap_or(0);
            cm.record(dataset.examples[i].label as usize, pred);
        }
    }
    Ok(cm)
}

#[cfg(test)]
mod tests;
