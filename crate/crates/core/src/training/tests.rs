use super::datasets::*;
use super::*;
use crate::model::ModelConfig;
use crate::synthgen::{BeatMorphology, CorpusSpec, SynthSpec};
use crate::vocabulary::{ClusterMap, VocabConfig};

/// 4-second windows at 125 Hz keep every tiny-scale test fast.
fn tiny_synth() -> CorpusSpec {
    CorpusSpec {
        n_patients: 4,
        windows_per_patient: 3,
        template: SynthSpec {
            fs: 125,
            duration_s: 4.0,
            mean_hr_bpm: 70.0,
            noise_sd: 0.01,
            morphology_bank: BeatMorphology::bank(),
            ..SynthSpec::default()
        },
        irregular_fraction: 0.0,
        per_patient_morphology: true,
        seed: 3,
    }
}

fn tiny_vocab_cfg() -> VocabConfig {
    VocabConfig {
        clusters_per_type: ClusterMap { p: 2, qrs: 3, t: 2, bg: 4 },
        max_iters: 15,
        ..VocabConfig::default()
    }
}

fn tiny_model_cfg() -> ModelConfig {
    ModelConfig {
        d_model: 16,
        n_layers: 1,
        n_heads: 2,
        d_ff: 32,
        max_seq_len: 64,
        vocab_size: 11 + 4,
        dropout: 0.1,
        unet_channels: (2, 4),
        window_samples: 500,
        ..ModelConfig::default()
    }
}

struct Fixture {
    corpus: TokenCorpus,
    mcfg: ModelConfig,
    scfg: SentenceConfig,
}

fn fixture() -> Fixture {
    let synth = crate::synthgen::generate_corpus(&tiny_synth());
    let delineations = segment_corpus(&synth, &SegmentSource::Truth);
    let (vocab, _) = fit_corpus_vocabulary(&synth, &delineations, &tiny_vocab_cfg()).unwrap();
    let scfg = SentenceConfig {
        max_seq_len: 64,
        ..SentenceConfig::default()
    };
    let corpus = token_corpus(&synth, &delineations, &vocab, &scfg, None, 5).unwrap();
    Fixture {
        corpus,
        mcfg: tiny_model_cfg(),
        scfg,
    }
}

fn param_bits(store: &crate::autograd::ParamStore<f32>) -> Vec<u32> {
    store
        .iter()
        .flat_map(|p| p.value.iter().map(|v| v.to_bits()))
        .collect()
}

#[test]
fn step_zero_loss_is_near_ln_vocab() {
    let f = fixture();
    let cfg = TrainConfig {
        epochs: 0,
        ..TrainConfig::for_task(Task::Mlm)
    };
    let out = pretrain(&f.corpus, &cfg, &f.mcfg, &f.scfg, None, None).unwrap();
    assert_eq!(out.history.len(), 1);
    assert_eq!(out.history[0].step, 0);
    let expect = (f.mcfg.n_wave_tokens() as f64).ln();
    assert!(
        (out.history[0].loss - expect).abs() < 0.3,
        "step-0 loss {} vs ln(wave tokens) {expect}",
        out.history[0].loss
    );
}

#[test]
fn pretraining_is_bit_reproducible() {
    let f = fixture();
    let cfg = TrainConfig {
        epochs: 2,
        batch_size: 8,
        ..TrainConfig::for_task(Task::Mlm)
    };
    let a = pretrain(&f.corpus, &cfg, &f.mcfg, &f.scfg, None, None).unwrap();
    let b = pretrain(&f.corpus, &cfg, &f.mcfg, &f.scfg, None, None).unwrap();
    assert_eq!(param_bits(&a.store), param_bits(&b.store));
    assert_eq!(a.history.len(), b.history.len());
    for (x, y) in a.history.iter().zip(&b.history) {
        assert_eq!(x.loss.to_bits(), y.loss.to_bits());
    }
}

#[test]
fn resumed_run_matches_uninterrupted_run() {
    let f = fixture();
    let full_cfg = TrainConfig {
        epochs: 4,
        batch_size: 8,
        ..TrainConfig::for_task(Task::Mlm)
    };
    let full = pretrain(&f.corpus, &full_cfg, &f.mcfg, &f.scfg, None, None).unwrap();

    let half_cfg = TrainConfig {
        epochs: 2,
        ..full_cfg.clone()
    };
    let half = pretrain(&f.corpus, &half_cfg, &f.mcfg, &f.scfg, None, None).unwrap();
    let resumed = pretrain(
        &f.corpus,
        &full_cfg,
        &f.mcfg,
        &f.scfg,
        Some((
            half.store,
            half.optimizer,
            half.epochs_done,
            half.steps_done,
            f.corpus.vocab_fingerprint.clone(),
        )),
        None,
    )
    .unwrap();
    assert_eq!(param_bits(&full.store), param_bits(&resumed.store));
    assert_eq!(full.steps_done, resumed.steps_done);
}

#[test]
fn resume_rejects_wrong_fingerprint() {
    let f = fixture();
    let cfg = TrainConfig {
        epochs: 1,
        ..TrainConfig::for_task(Task::Mlm)
    };
    let first = pretrain(&f.corpus, &cfg, &f.mcfg, &f.scfg, None, None).unwrap();
    let err = pretrain(
        &f.corpus,
        &cfg,
        &f.mcfg,
        &f.scfg,
        Some((
            first.store,
            first.optimizer,
            0,
            0,
            "not-the-fingerprint".into(),
        )),
        None,
    );
    assert!(matches!(err, Err(crate::Error::FingerprintMismatch { .. })));
}

#[test]
fn empty_corpus_is_rejected() {
    let f = fixture();
    let empty = TokenCorpus {
        windows: Vec::new(),
        sentences: Vec::new(),
        vocab_fingerprint: f.corpus.vocab_fingerprint.clone(),
        n_wave_tokens: f.corpus.n_wave_tokens,
    };
    let cfg = TrainConfig::for_task(Task::Mlm);
    assert!(matches!(
        pretrain(&empty, &cfg, &f.mcfg, &f.scfg, None, None),
        Err(crate::Error::EmptyInput(_))
    ));
}

fn task_fixture() -> (TaskDataset, TaskDataset, ModelConfig, String) {
    let synth = crate::synthgen::generate_corpus(&CorpusSpec {
        n_patients: 4,
        windows_per_patient: 4,
        irregular_fraction: 0.5,
        ..tiny_synth()
    });
    let delineations = segment_corpus(&synth, &SegmentSource::Truth);
    let (vocab, _) = fit_corpus_vocabulary(&synth, &delineations, &tiny_vocab_cfg()).unwrap();
    let scfg = SentenceConfig {
        max_seq_len: 64,
        ..SentenceConfig::default()
    };
    let ds = task_dataset(&synth, &delineations, &vocab, &TaskLabeling::Rhythm, &scfg, None).unwrap();
    let (train, eval) = split_task_dataset(&ds, 0.25, 9).unwrap();
    (train, eval, tiny_model_cfg(), vocab.fingerprint().to_string())
}

#[test]
fn zero_epoch_finetune_scores_the_untrained_head_deterministically() {
    let (train, eval, mcfg, fp) = task_fixture();
    let cfg = TrainConfig {
        epochs: 0,
        freeze_encoder: true,
        batch_size: 8,
        ..TrainConfig::for_task(Task::Afib)
    };
    let backbone = crate::model::init_params::<f32>(&mcfg, 1);
    let a = finetune(backbone.clone(), &fp, &train, &eval, &cfg, &mcfg, FinetuneOptions::default()).unwrap();
    let b = finetune(backbone, &fp, &train, &eval, &cfg, &mcfg, FinetuneOptions::default()).unwrap();
    assert_eq!(a.final_confusion, b.final_confusion);
    assert_eq!(a.final_confusion.total() as usize, eval.examples.len());
    assert!(a.history.is_empty());
}

#[test]
fn finetune_trains_and_logs() {
    let (train, eval, mcfg, fp) = task_fixture();
    let cfg = TrainConfig {
        epochs: 2,
        batch_size: 8,
        lr: 1e-3,
        ..TrainConfig::for_task(Task::Afib)
    };
    let backbone = crate::model::init_params::<f32>(&mcfg, 2);
    let out = finetune(backbone, &fp, &train, &eval, &cfg, &mcfg, FinetuneOptions::default()).unwrap();
    assert!(!out.history.is_empty());
    assert!(out.history.iter().all(|e| e.loss.is_finite()));
    assert_eq!(out.final_confusion.total() as usize, eval.examples.len());
    assert!(out.best_eval_accuracy >= 0.0 && out.best_eval_accuracy <= 1.0);
}

#[test]
fn finetune_rejects_label_and_fingerprint_mismatches() {
    let (train, eval, mcfg, fp) = task_fixture();
    let backbone = crate::model::init_params::<f32>(&mcfg, 3);
    let cfg = TrainConfig::for_task(Task::Afib);

    let err = finetune(
        backbone.clone(),
        "different",
        &train,
        &eval,
        &cfg,
        &mcfg,
        FinetuneOptions::default(),
    );
    assert!(matches!(err, Err(crate::Error::FingerprintMismatch { .. })));

    // A three-class inventory cannot feed a binary head.
    let mut train3 = train.clone();
    train3.class_names.push("third".into());
    let mut eval3 = eval.clone();
    eval3.class_names.push("third".into());
    let err = finetune(backbone.clone(), &fp, &train3, &eval3, &cfg, &mcfg, FinetuneOptions::default());
    assert!(matches!(err, Err(crate::Error::LabelMismatch(_))));

    // Same patient on both sides must be refused.
    let mut leaky = eval.clone();
    leaky.windows = train.windows.clone();
    leaky.examples = train.examples.clone();
    let err = finetune(backbone, &fp, &train, &leaky, &cfg, &mcfg, FinetuneOptions::default());
    assert!(matches!(err, Err(crate::Error::Precondition(_))));
}

#[test]
fn split_task_dataset_keeps_patients_disjoint() {
    let (train, eval, _, _) = task_fixture();
    let train_p: std::collections::BTreeSet<_> =
        train.examples.iter().map(|e| e.patient_id.clone()).collect();
    let eval_p: std::collections::BTreeSet<_> =
        eval.examples.iter().map(|e| e.patient_id.clone()).collect();
    assert!(train_p.is_disjoint(&eval_p));
    // Window refs are rebuilt per side.
    for e in train.examples.iter().chain(&eval.examples) {
        assert!(e.sentence.window_ref < train.windows.len().max(eval.windows.len()));
    }
}
