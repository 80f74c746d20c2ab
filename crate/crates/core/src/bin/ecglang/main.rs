//! Command-line surface wiring the pipeline stages into reproducible runs.
//!
//! Exit codes: 0 success, 1 usage error, 2 data/processing error.

mod artifacts;

use artifacts::*;
use clap::{Args, Parser, Subcommand};
use ecglang::config::{self, PipelineConfig, Stage};
use ecglang::delineation::{delineate, detect_r_peaks, Delineation};
use ecglang::evaluation::{majority_label, read_annotations, MetricsReport};
use ecglang::model::{
    encoder_with_attention, load_checkpoint, save_checkpoint, CheckpointMeta, EmbedInputs, Mode,
};
use ecglang::preprocess::preprocess_window;
use ecglang::sentences::{
    build_sentences, collate, pack_all_beats, tokenize_beats, Sentence, TokenSpace,
};
use ecglang::signal_io::{read_csv, read_wfdb, resample, window, ChannelSelect, EcgRecord};
use ecglang::synthgen::{self, Rhythm, SynthSpec};
use ecglang::training::{
    evaluate_task, finetune, pretrain, FinetuneOptions, Task, TaskDataset, TaskExample,
    TokenCorpus,
};
use ecglang::vocabulary::{fit_vocabulary, Vocabulary, WavesByType};
use ecglang::{Error, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::io::Write as _;
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(
    name = "ecglang",
    version,
    about = "Single-lead ECG as a wave language: delineate, tokenize, pretrain, fine-tune"
)]
struct Cli {
    /// Pipeline configuration file (JSON); defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed override (all stage randomness derives from it).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Dotted-path config overrides, e.g. --set signal.fs=500.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    sets: Vec<String>,
    /// Worker threads for per-window stages.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic labeled corpus (CSV + annotations + ground truth).
    Synth(SynthArgs),
    /// Read records, resample, window, and filter them.
    Preprocess(PreprocessArgs),
    /// Detect R peaks and segment every window into P/QRS/T/BG.
    Delineate(IoArgs),
    /// Fit the DTW k-means wave vocabulary.
    FitVocab(FitVocabArgs),
    /// Assign tokens and pack beat sentences.
    Tokenize(TokenizeArgs),
    /// Masked-wave pretraining.
    Pretrain(PretrainArgs),
    /// Fine-tune a task head on a labeled dataset (inter-patient split).
    Finetune(TaskArgs),
    /// Score a checkpoint on the held-out side of the split.
    Evaluate(EvaluateArgs),
    /// Dump attention matrices for one sentence.
    InspectAttn(InspectArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    /// Override synth.n_patients.
    #[arg(long)]
    patients: Option<usize>,
    /// Override synth.windows_per_patient.
    #[arg(long)]
    windows: Option<usize>,
}

#[derive(Args)]
struct PreprocessArgs {
    /// Directory written by `synth` (truth.json manifest).
    #[arg(long, conflicts_with_all = ["csv", "wfdb"])]
    input: Option<PathBuf>,
    /// Single-column CSV file (requires --fs).
    #[arg(long, requires = "fs")]
    csv: Option<PathBuf>,
    /// Source sampling rate for --csv.
    #[arg(long)]
    fs: Option<u32>,
    /// WFDB record base path (reads BASE.hea and BASE.dat).
    #[arg(long)]
    wfdb: Option<PathBuf>,
    /// Lead to select from multi-channel WFDB records.
    #[arg(long, default_value = "II")]
    lead: String,
    /// Patient id for --csv/--wfdb inputs (defaults to the record id).
    #[arg(long)]
    patient: Option<String>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct IoArgs {
    /// Directory holding windows.json/windows.bin.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct FitVocabArgs {
    #[arg(long)]
    input: PathBuf,
    /// Directory holding segments.tsv/rpeaks.json.
    #[arg(long)]
    segments: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TokenizeArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    segments: PathBuf,
    /// vocabulary.json path.
    #[arg(long)]
    vocab: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PretrainArgs {
    /// Directory written by `tokenize`.
    #[arg(long)]
    input: PathBuf,
    /// vocabulary.json (defaults to the copy referenced at tokenize time).
    #[arg(long)]
    vocab: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Override train.epochs.
    #[arg(long)]
    epochs: Option<u64>,
    /// Continue from a checkpoint directory.
    #[arg(long)]
    resume: Option<PathBuf>,
}

#[derive(Args)]
struct TaskArgs {
    /// Preprocessed windows with labels (windows.json).
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    segments: PathBuf,
    #[arg(long)]
    vocab: PathBuf,
    /// Pretrained checkpoint directory.
    #[arg(long)]
    ckpt: PathBuf,
    /// Task override (afib, heartbeat, apnea, verify, identify).
    #[arg(long)]
    task: Option<String>,
    /// Target patient id for the verify task.
    #[arg(long)]
    target: Option<String>,
    /// Override train.epochs.
    #[arg(long)]
    epochs: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    segments: PathBuf,
    #[arg(long)]
    vocab: PathBuf,
    /// Fine-tuned checkpoint directory (must contain the task head).
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    task: Option<String>,
    #[arg(long)]
    target: Option<String>,
    /// Score every window instead of the held-out split side.
    #[arg(long)]
    all: bool,
    /// Metrics report path (JSON).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct InspectArgs {
    #[arg(long)]
    ckpt: PathBuf,
    /// Directory written by `tokenize`.
    #[arg(long)]
    input: PathBuf,
    /// Sentence index within sentences.txt.
    #[arg(long, default_value_t = 0)]
    sentence: usize,
    #[arg(long)]
    out: PathBuf,
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // clap prints help/version through the error path too.
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    match run(cli) {
        Ok(()) => {}
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(2);
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = config::load_config(cli.config.as_deref(), &cli.sets)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(threads) = cli.threads {
        cfg.threads = threads;
    }
    cfg.validate()?;
    match cli.cmd {
        Cmd::Synth(a) => cmd_synth(&cfg, a),
        Cmd::Preprocess(a) => cmd_preprocess(&cfg, a),
        Cmd::Delineate(a) => cmd_delineate(&cfg, a),
        Cmd::FitVocab(a) => cmd_fit_vocab(&cfg, a),
        Cmd::Tokenize(a) => cmd_tokenize(&cfg, a),
        Cmd::Pretrain(a) => cmd_pretrain(&cfg, a),
        Cmd::Finetune(a) => cmd_finetune(&cfg, a),
        Cmd::Evaluate(a) => cmd_evaluate(&cfg, a),
        Cmd::InspectAttn(a) => cmd_inspect(&cfg, a),
    }
}

fn rhythm_label(r: Rhythm) -> &'static str {
    match r {
        Rhythm::Regular => "N",
        Rhythm::Irregular => "AFIB",
    }
}

fn cmd_synth(cfg: &PipelineConfig, args: SynthArgs) -> Result<()> {
    let mut spec = ecglang::synthgen::CorpusSpec {
        n_patients: args.patients.unwrap_or(cfg.synth.n_patients),
        windows_per_patient: args.windows.unwrap_or(cfg.synth.windows_per_patient),
        template: SynthSpec {
            fs: cfg.signal.fs,
            duration_s: cfg.signal.window_s as f64,
            mean_hr_bpm: cfg.synth.mean_hr_bpm,
            hr_jitter_fraction: cfg.synth.hr_jitter_fraction,
            noise_sd: cfg.synth.noise_sd,
            boundary_level: cfg.synth.boundary_level,
            ..SynthSpec::default()
        },
        irregular_fraction: cfg.synth.irregular_fraction,
        per_patient_morphology: cfg.synth.per_patient_morphology,
        seed: cfg.stage_seed(Stage::Synth),
    };
    spec.template.seed = spec.seed;
    let corpus = synthgen::generate_corpus(&spec);
    std::fs::create_dir_all(&args.out)?;
    let mut manifest = TruthManifest {
        fs: corpus.fs,
        window_samples: cfg.signal.window_samples(),
        windows: Vec::with_capacity(corpus.windows.len()),
    };
    for w in &corpus.windows {
        let csv_name = format!("{}.csv", w.record_id);
        let ann_name = format!("{}.ann", w.record_id);
        let mut csv = String::with_capacity(w.samples.len() * 10);
        for v in &w.samples {
            csv.push_str(&format!("{v}\n"));
        }
        std::fs::write(args.out.join(&csv_name), csv)?;
        std::fs::write(
            args.out.join(&ann_name),
            format!("0\t{}\n", rhythm_label(w.truth.rhythm)),
        )?;
        manifest.windows.push(TruthWindow {
            record_id: w.record_id.clone(),
            patient_id: w.patient_id.clone(),
            csv: csv_name,
            ann: ann_name,
            rhythm: rhythm_label(w.truth.rhythm).to_string(),
            morphology_id: w.morphology_id,
            r_peaks: w.truth.r_peaks.clone(),
            segments: w
                .truth
                .segments
                .iter()
                .map(|s| (s.wave_type.label().to_string(), s.onset, s.offset))
                .collect(),
        });
    }
    std::fs::write(
        args.out.join("truth.json"),
        serde_json::to_string_pretty(&manifest)?,
    )?;
    println!(
        "synth: wrote {} windows for {} patients to {}",
        corpus.windows.len(),
        spec.n_patients,
        args.out.display()
    );
    Ok(())
}

fn cmd_preprocess(cfg: &PipelineConfig, args: PreprocessArgs) -> Result<()> {
    let mut records: Vec<(EcgRecord, Option<Vec<ecglang::evaluation::Annotation>>)> = Vec::new();
    if let Some(dir) = &args.input {
        let manifest: TruthManifest =
            serde_json::from_str(&std::fs::read_to_string(dir.join("truth.json"))?)?;
        for w in &manifest.windows {
            let text = std::fs::read_to_string(dir.join(&w.csv))?;
            let rec = read_csv(&text, manifest.fs, w.record_id.clone())?
                .with_patient(w.patient_id.clone());
            let anns = read_annotations(&std::fs::read_to_string(dir.join(&w.ann))?)?;
            records.push((rec, Some(anns)));
        }
    } else if let Some(csv_path) = &args.csv {
        let fs = args.fs.expect("clap enforces --fs with --csv");
        let record_id = csv_path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "record".into());
        let text = std::fs::read_to_string(csv_path)?;
        let mut rec = read_csv(&text, fs, record_id)?;
        if let Some(p) = &args.patient {
            rec = rec.with_patient(p.clone());
        }
        let anns = read_sidecar_annotations(csv_path)?;
        records.push((rec, anns));
    } else if let Some(base) = &args.wfdb {
        let header = std::fs::read_to_string(base.with_extension("hea"))?;
        let dat = std::fs::read(base.with_extension("dat"))?;
        let mut rec = read_wfdb(&header, &dat, ChannelSelect::Lead(args.lead.clone()))?;
        if let Some(p) = &args.patient {
            rec = rec.with_patient(p.clone());
        }
        let anns = read_sidecar_annotations(base)?;
        records.push((rec, anns));
    } else {
        return Err(Error::Config(
            "preprocess needs one of --input, --csv, or --wfdb".into(),
        ));
    }

    let mut out_windows: Vec<(Vec<f64>, WindowMeta)> = Vec::new();
    for (rec, anns) in records {
        let source_fs = rec.fs;
        let rec = resample(&rec, cfg.signal.fs, cfg.signal.resample)?;
        // Annotation indices live at the source rate; rescale them.
        let scale = cfg.signal.fs as f64 / source_fs as f64;
        let anns = anns.map(|a| {
            a.into_iter()
                .map(|(i, l)| ((i as f64 * scale).round() as usize, l))
                .collect::<Vec<_>>()
        });
        for w in window(&rec, cfg.signal.window_s) {
            let clean = preprocess_window(&w, cfg.signal.fs, &cfg.filter)?;
            let label = match &anns {
                Some(a) if !a.is_empty() => Some(majority_label(
                    w.start_sample,
                    clean.samples.len(),
                    a,
                    &cfg.eval.positive_label,
                )?),
                _ => None,
            };
            out_windows.push((
                clean.samples,
                WindowMeta {
                    record_id: rec.record_id.clone(),
                    patient_id: rec.patient_id.clone(),
                    start_sample: w.start_sample,
                    label,
                },
            ));
        }
    }
    if out_windows.is_empty() {
        return Err(Error::EmptyInput(
            "no full windows after resampling (record shorter than one window?)".into(),
        ));
    }
    write_windows(
        &args.out,
        cfg.signal.fs,
        cfg.signal.window_samples(),
        &out_windows,
    )?;
    println!(
        "preprocess: wrote {} windows to {}",
        out_windows.len(),
        args.out.display()
    );
    Ok(())
}

fn read_sidecar_annotations(
    base: &Path,
) -> Result<Option<Vec<ecglang::evaluation::Annotation>>> {
    let ann_path = base.with_extension("ann");
    if ann_path.exists() {
        Ok(Some(read_annotations(&std::fs::read_to_string(ann_path)?)?))
    } else {
        Ok(None)
    }
}

/// Run `f` over every window index, on `threads` workers, preserving order.
fn par_windows<T: Send>(
    threads: usize,
    n: usize,
    f: impl Fn(usize) -> T + Sync,
) -> Vec<T> {
    if threads <= 1 || n <= 1 {
        return (0..n).map(f).collect();
    }
    let mut out: Vec<Option<T>> = (0..n).map(|_| None).collect();
    let chunk = n.div_ceil(threads);
    std::thread::scope(|scope| {
        for (t, slot) in out.chunks_mut(chunk).enumerate() {
            let f = &f;
            scope.spawn(move || {
                for (i, s) in slot.iter_mut().enumerate() {
                    *s = Some(f(t * chunk + i));
                }
            });
        }
    });
    out.into_iter().map(|v| v.expect("worker filled slot")).collect()
}

fn cmd_delineate(cfg: &PipelineConfig, args: IoArgs) -> Result<()> {
    let (meta, windows) = read_windows(&args.input)?;
    let delineations: Vec<Delineation> = par_windows(cfg.threads, windows.len(), |i| {
        let peaks = detect_r_peaks(&windows[i], meta.fs, &cfg.delineation);
        delineate(&windows[i], meta.fs, &peaks, &cfg.delineation)
    });
    let quality: f64 = delineations.iter().map(|d| d.quality()).sum::<f64>()
        / delineations.len().max(1) as f64;
    write_segments(&args.out, &delineations)?;
    println!(
        "delineate: {} windows, mean segmentation quality {quality:.3} (fraction of beats with P, QRS, and T)",
        windows.len()
    );
    Ok(())
}

fn cmd_fit_vocab(cfg: &PipelineConfig, args: FitVocabArgs) -> Result<()> {
    let (meta, windows) = read_windows(&args.input)?;
    let delineations = read_segments(&args.segments, windows.len(), meta.window_samples)?;
    let mut waves = WavesByType::default();
    for (w, d) in windows.iter().zip(&delineations) {
        waves.extend_from_window(w, &d.segments);
    }
    let mut vcfg = cfg.vocab.clone();
    vcfg.seed = cfg.stage_seed(Stage::Vocab);
    let (vocab, report) = fit_vocabulary(&waves, &vcfg)?;
    std::fs::create_dir_all(&args.out)?;
    std::fs::write(args.out.join("vocabulary.json"), vocab.to_json())?;
    let inertia: Vec<serde_json::Value> = report
        .per_type
        .iter()
        .map(|s| {
            serde_json::json!({
                "wave_type": s.wave_type.label(),
                "fitted_on": s.fitted_on,
                "iterations": s.iterations,
                "inertia": s.inertia,
            })
        })
        .collect();
    std::fs::write(
        args.out.join("fit_report.json"),
        serde_json::to_string_pretty(&inertia)?,
    )?;
    println!(
        "fit-vocab: {} centroids (fingerprint {})",
        vocab.n_wave_tokens(),
        &vocab.fingerprint()[..12]
    );
    Ok(())
}

fn load_vocab(path: &Path) -> Result<Vocabulary> {
    Vocabulary::from_json(&std::fs::read_to_string(path)?)
}

fn cmd_tokenize(cfg: &PipelineConfig, args: TokenizeArgs) -> Result<()> {
    let (meta, windows) = read_windows(&args.input)?;
    let delineations = read_segments(&args.segments, windows.len(), meta.window_samples)?;
    let vocab = load_vocab(&args.vocab)?;
    let space = TokenSpace::from(&vocab);
    let seed = cfg.stage_seed(Stage::Tokenize);
    let per_window: Vec<Result<Vec<Sentence>>> = par_windows(cfg.threads, windows.len(), |wi| {
        let beats = tokenize_beats(&windows[wi], &delineations[wi], &vocab, cfg.vocab.dtw_band)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (wi as u64).wrapping_mul(0x9E37_79B9));
        Ok(build_sentences(
            &beats,
            wi,
            space,
            cfg.sentence.max_seq_len,
            &mut rng,
        ))
    });
    let mut sentences = Vec::new();
    for r in per_window {
        sentences.extend(r?);
    }
    write_sentences(&args.out, &sentences)?;
    // Carry the windows and the vocabulary fingerprint forward so pretrain
    // can run from this directory alone.
    let pairs: Vec<(Vec<f64>, WindowMeta)> = windows
        .into_iter()
        .zip(meta.windows.iter().cloned())
        .collect();
    write_windows(&args.out, meta.fs, meta.window_samples, &pairs)?;
    std::fs::write(
        args.out.join("vocab_ref.json"),
        serde_json::json!({
            "fingerprint": vocab.fingerprint(),
            "n_wave_tokens": vocab.n_wave_tokens(),
            "path": args.vocab.display().to_string(),
        })
        .to_string(),
    )?;
    println!(
        "tokenize: {} sentences over {} windows",
        sentences.len(),
        meta.windows.len()
    );
    Ok(())
}

fn read_token_corpus(dir: &Path) -> Result<TokenCorpus> {
    let (_, windows) = read_windows(dir)?;
    let sentences = read_sentences(dir)?;
    let vocab_ref: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join("vocab_ref.json"))?)?;
    Ok(TokenCorpus {
        windows,
        sentences,
        vocab_fingerprint: vocab_ref["fingerprint"]
            .as_str()
            .ok_or_else(|| Error::Parse("vocab_ref.json missing fingerprint".into()))?
            .to_string(),
        n_wave_tokens: vocab_ref["n_wave_tokens"]
            .as_u64()
            .ok_or_else(|| Error::Parse("vocab_ref.json missing n_wave_tokens".into()))?
            as u32,
    })
}

fn cmd_pretrain(cfg: &PipelineConfig, args: PretrainArgs) -> Result<()> {
    let corpus = read_token_corpus(&args.input)?;
    let mut tcfg = cfg.train.clone();
    tcfg.task = Task::Mlm;
    tcfg.seed = cfg.stage_seed(Stage::Train);
    if let Some(e) = args.epochs {
        tcfg.epochs = e;
    }
    let mut mcfg = cfg.model.clone();
    mcfg.vocab_size = corpus.n_wave_tokens as usize + 4;

    let resume = match &args.resume {
        None => None,
        Some(dir) => {
            let loaded = load_checkpoint(dir)?;
            mcfg = loaded.config.clone();
            let adam = loaded.optimizer.ok_or_else(|| {
                Error::Checkpoint("resume needs optimizer state in the checkpoint".into())
            })?;
            Some((
                loaded.store,
                adam,
                loaded.meta.epoch,
                loaded.meta.step,
                loaded.meta.vocab_fingerprint,
            ))
        }
    };

    std::fs::create_dir_all(&args.out)?;
    let fingerprint = corpus.vocab_fingerprint.clone();
    let out_dir = args.out.clone();
    let mcfg_sink = mcfg.clone();
    let mut sink = move |epoch: u64,
                         store: &ecglang::autograd::ParamStore<f32>,
                         adam: &ecglang::autograd::AdamState<f32>,
                         steps: u64|
          -> Result<()> {
        let dir = out_dir.join(format!("epoch_{epoch:04}"));
        save_checkpoint(
            &dir,
            &mcfg_sink,
            store,
            Some(adam),
            &CheckpointMeta {
                epoch,
                step: steps,
                vocab_fingerprint: fingerprint.clone(),
            },
        )
    };
    let result = pretrain(&corpus, &tcfg, &mcfg, &cfg.sentence, resume, Some(&mut sink))?;

    save_checkpoint(
        &args.out.join("final"),
        &mcfg,
        &result.store,
        Some(&result.optimizer),
        &CheckpointMeta {
            epoch: result.epochs_done,
            step: result.steps_done,
            vocab_fingerprint: corpus.vocab_fingerprint.clone(),
        },
    )?;
    let mut log = std::fs::File::create(args.out.join("train_log.jsonl"))?;
    for entry in &result.history {
        writeln!(log, "{}", serde_json::to_string(entry)?)?;
    }
    if let Some(first) = result.history.first() {
        println!(
            "pretrain: step {} loss {:.4} (ln wave-vocab = {:.4})",
            first.step,
            first.loss,
            (mcfg.n_wave_tokens() as f64).ln()
        );
    }
    if let Some(last) = result.history.last() {
        println!(
            "pretrain: done at step {} loss {:.4} masked-acc {:.3}; checkpoints in {}",
            last.step,
            last.loss,
            last.masked_acc,
            args.out.display()
        );
    }
    Ok(())
}

fn parse_task(cfg: &PipelineConfig, flag: &Option<String>) -> Result<Task> {
    match flag {
        Some(t) => t.parse(),
        None => Ok(cfg.train.task),
    }
}

/// Assemble the labeled per-window dataset for a task.
fn build_task_dataset(
    cfg: &PipelineConfig,
    data: &Path,
    segments: &Path,
    vocab: &Vocabulary,
    task: Task,
    target: &Option<String>,
) -> Result<TaskDataset> {
    let (meta, windows) = read_windows(data)?;
    let delineations = read_segments(segments, windows.len(), meta.window_samples)?;
    let space = TokenSpace::from(vocab);

    let mut patients: Vec<String> = meta.windows.iter().map(|w| w.patient_id.clone()).collect();
    patients.sort();
    patients.dedup();

    let class_names: Vec<String> = match task {
        Task::Mlm => return Err(Error::Config("mlm is not a classification task".into())),
        Task::Afib | Task::Apnea => {
            vec!["N".to_string(), cfg.eval.positive_label.clone()]
        }
        Task::Heartbeat => ["N", "S", "V", "F", "Q"].map(String::from).to_vec(),
        Task::Identify => patients.clone(),
        Task::Verify => vec!["other".into(), "target".into()],
    };

    let mut examples = Vec::with_capacity(windows.len());
    for (wi, w) in windows.iter().enumerate() {
        let beats = tokenize_beats(w, &delineations[wi], vocab, cfg.vocab.dtw_band)?;
        let sentence = pack_all_beats(&beats, wi, space, cfg.sentence.max_seq_len);
        let wm = &meta.windows[wi];
        let label: u32 = match task {
            Task::Mlm => unreachable!(),
            Task::Afib | Task::Apnea | Task::Heartbeat => {
                let l = wm.label.as_ref().ok_or_else(|| {
                    Error::LabelMismatch(format!(
                        "window {wi} ({}) has no label; supply annotation sidecars",
                        wm.record_id
                    ))
                })?;
                class_names
                    .iter()
                    .position(|c| c == l)
                    .ok_or_else(|| {
                        Error::LabelMismatch(format!(
                            "window label '{l}' not in task classes {class_names:?}"
                        ))
                    })? as u32
            }
            Task::Identify => patients
                .iter()
                .position(|p| *p == wm.patient_id)
                .expect("patient inventory") as u32,
            Task::Verify => {
                let t = target.as_ref().ok_or_else(|| {
                    Error::Config("verify task needs --target <patient_id>".into())
                })?;
                u32::from(wm.patient_id == *t)
            }
        };
        examples.push(TaskExample {
            sentence,
            label,
            patient_id: wm.patient_id.clone(),
        });
    }
    Ok(TaskDataset {
        windows,
        examples,
        class_names,
        vocab_fingerprint: vocab.fingerprint().to_string(),
        n_wave_tokens: vocab.n_wave_tokens() as u32,
    })
}

/// Disease tasks split at patient granularity; identification and
/// verification hold out windows of each identity instead.
fn uses_inter_patient_split(task: Task) -> bool {
    !matches!(task, Task::Identify | Task::Verify)
}

fn split_for_task(
    cfg: &PipelineConfig,
    task: Task,
    dataset: &TaskDataset,
) -> Result<(TaskDataset, TaskDataset)> {
    let seed = cfg.stage_seed(Stage::Split);
    if uses_inter_patient_split(task) {
        ecglang::training::datasets::split_task_dataset(dataset, cfg.eval.test_fraction, seed)
    } else {
        ecglang::training::datasets::split_within_patients(dataset, cfg.eval.test_fraction, seed)
    }
}

fn cmd_finetune(cfg: &PipelineConfig, args: TaskArgs) -> Result<()> {
    let task = parse_task(cfg, &args.task)?;
    let vocab = load_vocab(&args.vocab)?;
    let dataset = build_task_dataset(cfg, &args.data, &args.segments, &vocab, task, &args.target)?;
    let (train_set, eval_set) = split_for_task(cfg, task, &dataset)?;

    let loaded = load_checkpoint(&args.ckpt)?;
    let mcfg = loaded.config.clone();
    let mut tcfg = ecglang::training::TrainConfig::for_task(task);
    tcfg.seed = cfg.stage_seed(Stage::Train);
    tcfg.freeze_encoder = cfg.train.freeze_encoder;
    tcfg.eval_every = cfg.train.eval_every.max(1);
    if let Some(e) = args.epochs {
        tcfg.epochs = e;
    }

    let result = finetune(
        loaded.store,
        &loaded.meta.vocab_fingerprint,
        &train_set,
        &eval_set,
        &tcfg,
        &mcfg,
        FinetuneOptions {
            expect_disjoint_patients: uses_inter_patient_split(task),
            ..FinetuneOptions::default()
        },
    )?;

    std::fs::create_dir_all(&args.out)?;
    save_checkpoint(
        &args.out.join("final"),
        &mcfg,
        &result.store,
        None,
        &CheckpointMeta {
            epoch: tcfg.epochs,
            step: result.history.len() as u64,
            vocab_fingerprint: loaded.meta.vocab_fingerprint.clone(),
        },
    )?;
    let mut log = std::fs::File::create(args.out.join("train_log.jsonl"))?;
    for entry in &result.history {
        writeln!(log, "{}", serde_json::to_string(entry)?)?;
    }
    let report = MetricsReport::new(
        task.label(),
        result.final_confusion,
        cfg.stage_seed(Stage::Split),
    );
    std::fs::write(
        args.out.join("metrics.json"),
        serde_json::to_string_pretty(&report)?,
    )?;
    println!(
        "finetune[{}]: held-out accuracy {:.4} over {} windows ({} train / {} eval patients)",
        task.label(),
        report.overall.unwrap_or(f64::NAN),
        report.confusion.total(),
        train_set
            .examples
            .iter()
            .map(|e| &e.patient_id)
            .collect::<std::collections::BTreeSet<_>>()
            .len(),
        eval_set
            .examples
            .iter()
            .map(|e| &e.patient_id)
            .collect::<std::collections::BTreeSet<_>>()
            .len(),
    );
    Ok(())
}

fn cmd_evaluate(cfg: &PipelineConfig, args: EvaluateArgs) -> Result<()> {
    let task = parse_task(cfg, &args.task)?;
    let vocab = load_vocab(&args.vocab)?;
    let dataset = build_task_dataset(cfg, &args.data, &args.segments, &vocab, task, &args.target)?;
    let loaded = load_checkpoint(&args.ckpt)?;
    if loaded.meta.vocab_fingerprint != dataset.vocab_fingerprint {
        return Err(Error::FingerprintMismatch {
            expected: loaded.meta.vocab_fingerprint,
            got: dataset.vocab_fingerprint,
        });
    }
    let head = ecglang::training::TrainConfig::for_task(task)
        .head
        .ok_or_else(|| Error::Config("task has no head".into()))?;
    let eval_set = if args.all {
        dataset
    } else {
        split_for_task(cfg, task, &dataset)?.1
    };
    let cm = evaluate_task(
        &loaded.store,
        &eval_set,
        head,
        cfg.train.batch_size,
        &loaded.config,
    )?;
    let report = MetricsReport::new(task.label(), cm, cfg.stage_seed(Stage::Split));
    std::fs::write(&args.out, serde_json::to_string_pretty(&report)?)?;
    println!(
        "evaluate[{}]: accuracy {:.4} over {} windows -> {}",
        task.label(),
        report.overall.unwrap_or(f64::NAN),
        report.confusion.total(),
        args.out.display()
    );
    Ok(())
}

fn cmd_inspect(cfg: &PipelineConfig, args: InspectArgs) -> Result<()> {
    let corpus = read_token_corpus(&args.input)?;
    let loaded = load_checkpoint(&args.ckpt)?;
    let sentence = corpus
        .sentences
        .get(args.sentence)
        .ok_or_else(|| {
            Error::Precondition(format!(
                "sentence {} out of range ({} available)",
                args.sentence,
                corpus.sentences.len()
            ))
        })?
        .clone();
    let space = corpus.space();
    let no_mask = vec![(sentence.token_ids.clone(), vec![-1; sentence.len()])];
    let batch = collate(
        std::slice::from_ref(&sentence),
        &no_mask,
        space,
        loaded.config.max_seq_len,
    )?;
    let mut tape: ecglang::autograd::Tape<f32> = ecglang::autograd::Tape::new();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let inputs = EmbedInputs {
        batch: &batch,
        windows: &|i| corpus.windows[i].as_slice(),
        mask_cnn_too: false,
    };
    let mut bn_nodes = Vec::new();
    let hidden = ecglang::model::embed(
        &mut tape,
        &loaded.store,
        &inputs,
        &loaded.config,
        Mode::Eval,
        &mut rng,
        &mut bn_nodes,
    );
    let mut attn = Vec::new();
    let _ = encoder_with_attention(
        &mut tape,
        &loaded.store,
        hidden,
        &batch.attention_mask,
        &loaded.config,
        Mode::Eval,
        &mut rng,
        Some(&mut attn),
    );
    std::fs::write(
        &args.out,
        serde_json::to_string_pretty(&serde_json::json!({
            "sentence": args.sentence,
            "token_ids": sentence.token_ids,
            "attention": attn,
        }))?,
    )?;
    println!(
        "inspect-attn: wrote {} matrices to {}",
        attn.len(),
        args.out.display()
    );
    let _ = cfg;
    Ok(())
}
