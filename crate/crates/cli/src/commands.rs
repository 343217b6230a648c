use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use ndarray::Array2;
use serde::Serialize;
use serde_json::json;
use tracing::{info, warn};

use etts_core::adaptation::{train_adaptation, AdaptationCheckpoint, ADAPTATION_SCHEMA};
use etts_core::audio::{read_wav, write_wav, SAMPLE_RATE};
use etts_core::corpus::{
    extract_features, load_manifest, split_corpus, CorpusSplit, FeatureCache, FeatureRecord, G2p, LexiconG2p,
    PhonemeVocab, Utterance,
};
use etts_core::emotion::{provider_from_key, prune_corpus, EmotionProvider, PruneReport, PruningConfig};
use etts_core::eval::{
    extract_pitch_contour, project_spaces, read_labels, read_transcripts, render_projection, score_transcripts,
    ser_confusion, Normalization, PitchConfig, SER_CLASSES,
};
use etts_core::pipeline::{
    build_stage2_dataset, read_pairs, train_stage1, write_pairs, GriffinLim, RunLayout, Stage1Checkpoint, Stage1Data,
    Synthesizer, Vocoder,
};
use etts_core::Error as CoreError;

use crate::config::{RunConfig, VocoderKind};
use crate::lock::RunLock;
use crate::{Cli, Command, EvalCommand};

/// A prerequisite artifact does not exist yet.
#[derive(Debug, thiserror::Error)]
#[error("missing artifact: {}", .0.display())]
pub struct MissingArtifact(pub PathBuf);

/// Invalid or incomplete invocation detected after argument parsing.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct Usage(pub String);

pub fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<Usage>().is_some() {
        2
    } else if err.downcast_ref::<MissingArtifact>().is_some()
        || matches!(err.downcast_ref::<CoreError>(), Some(CoreError::ProviderUnavailable(_)))
    {
        3
    } else {
        4
    }
}

fn require(path: &Path) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(MissingArtifact(path.to_path_buf()).into())
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    ensure_parent(path)?;
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    ensure_parent(path)?;
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn ensure_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => {
            fs::create_dir_all(p).with_context(|| format!("creating {}", p.display()))
        }
        _ => Ok(()),
    }
}

struct Session {
    layout: RunLayout,
    config: RunConfig,
    _lock: RunLock,
}

impl Session {
    /// Resolves the configuration (file, then snapshot, then defaults; flags
    /// win), takes the run lock and writes the snapshot.
    fn open(cli: &Cli) -> Result<Self> {
        let layout = RunLayout::new(&cli.global.run);
        let mut config = match &cli.global.config {
            Some(p) => {
                require(p)?;
                RunConfig::load(p)?
            }
            None if layout.config_snapshot().is_file() => RunConfig::load(&layout.config_snapshot())?,
            None => RunConfig::default(),
        };
        if let Some(s) = cli.global.seed {
            config.seed = s;
        }
        if let Some(p) = &cli.global.provider {
            config.provider = p.clone();
        }
        apply_overrides(&cli.command, &mut config);
        config.apply_seed();

        let lock = RunLock::acquire(&layout.lock())?;
        let snapshot = config.to_toml()?;
        let path = layout.config_snapshot();
        if let Ok(previous) = fs::read_to_string(&path) {
            if previous != snapshot {
                info!(path = %path.display(), "configuration changed; updating snapshot");
            }
        }
        write_text(&path, &snapshot)?;
        Ok(Self {
            layout,
            config,
            _lock: lock,
        })
    }

    fn cache(&self) -> FeatureCache {
        let root = std::env::var_os("ETTS_CACHE_DIR")
            .map(PathBuf::from)
            .unwrap_or_else(|| self.layout.features());
        FeatureCache::new(root, &self.config.features)
    }

    fn split(&self) -> Result<CorpusSplit> {
        let path = self.layout.split();
        require(&path)?;
        Ok(serde_json::from_str(&fs::read_to_string(&path)?)?)
    }

    fn records(&self, ids: &[String]) -> Result<Vec<FeatureRecord>> {
        let cache = self.cache();
        ids.iter()
            .map(|id| {
                require(&cache.path(id))?;
                Ok(cache.load(id)?)
            })
            .collect()
    }

    fn provider(&self) -> Result<Box<dyn EmotionProvider>> {
        Ok(provider_from_key(&self.config.provider)?)
    }

    fn g2p(&self) -> Result<LexiconG2p> {
        match &self.config.paths.lexicon {
            Some(p) => {
                require(p)?;
                Ok(LexiconG2p::from_file(p)?)
            }
            None => Ok(LexiconG2p::new()),
        }
    }
}

fn apply_overrides(command: &Command, config: &mut RunConfig) {
    match command {
        Command::Preprocess { manifest, alignments } => {
            if manifest.is_some() {
                config.paths.manifest = manifest.clone();
            }
            if alignments.is_some() {
                config.paths.alignments = alignments.clone();
            }
        }
        Command::TrainStage1 {
            steps,
            batch_size,
            lr,
            warmup,
            preset,
        } => {
            let s = &mut config.stage1;
            s.steps = steps.unwrap_or(s.steps);
            s.batch_size = batch_size.unwrap_or(s.batch_size);
            s.optimizer.base_lr = lr.unwrap_or(s.optimizer.base_lr);
            s.optimizer.warmup_steps = warmup.unwrap_or(s.optimizer.warmup_steps);
            config.model.preset = preset.unwrap_or(config.model.preset);
        }
        Command::Prune { pth } => {
            if let Some(t) = pth {
                config.pruning.threshold = *t;
            }
        }
        Command::TrainStage2 { epochs, lr } => {
            config.stage2.max_epochs = epochs.unwrap_or(config.stage2.max_epochs);
            config.stage2.optimizer.base_lr = lr.unwrap_or(config.stage2.optimizer.base_lr);
        }
        Command::Synth { vocoder, .. } => {
            config.synth.vocoder = vocoder.unwrap_or(config.synth.vocoder);
        }
        Command::BuildPairs | Command::Eval { .. } | Command::Viz { .. } => {}
    }
}

pub fn run(cli: Cli) -> Result<()> {
    let session = Session::open(&cli)?;
    match cli.command {
        Command::Preprocess { .. } => preprocess(&session),
        Command::TrainStage1 { .. } => stage1(&session),
        Command::Prune { .. } => prune(&session),
        Command::BuildPairs => build_pairs(&session),
        Command::TrainStage2 { .. } => stage2(&session),
        Command::Synth { text, out, .. } => synth(&session, &text, out),
        Command::Eval { metric } => eval(&session, metric),
        Command::Viz { out } => viz(&session, out),
    }
}

fn preprocess(s: &Session) -> Result<()> {
    let paths = &s.config.paths;
    let manifest = paths
        .manifest
        .as_ref()
        .ok_or_else(|| Usage("no manifest: pass --manifest or set paths.manifest".into()))?;
    let alignments = paths
        .alignments
        .as_ref()
        .ok_or_else(|| Usage("no alignment directory: pass --alignments or set paths.alignments".into()))?;
    require(manifest)?;
    require(alignments)?;

    let cache = s.cache();
    let load = load_manifest(manifest, false)?;
    let mut rejected: Vec<_> = load
        .rejected
        .iter()
        .map(|r| json!({ "id": r.id, "line": r.line, "reason": r.reason }))
        .collect();
    let (mut extracted, mut cached, mut ids) = (0usize, 0usize, Vec::new());
    for mut utt in load.utterances {
        if cache.contains(&utt.id) {
            cached += 1;
            ids.push(utt.id);
            continue;
        }
        let result = read_wav(&utt.audio_path, SAMPLE_RATE).and_then(|w| {
            utt.waveform = Some(w);
            extract_features(&utt, alignments, &s.config.features)
        });
        match result.and_then(|r| cache.store(&r)) {
            Ok(_) => {
                extracted += 1;
                ids.push(utt.id);
            }
            Err(e) => {
                warn!(id = %utt.id, error = %e, "skipping utterance");
                rejected.push(json!({ "id": utt.id, "reason": e.to_string() }));
            }
        }
    }
    if ids.is_empty() {
        bail!("no utterance could be preprocessed");
    }
    let split = split_corpus(&ids, s.config.split, s.config.seed)?;
    write_json(&s.layout.split(), &split)?;
    info!(extracted, cached, rejected = rejected.len(), "preprocessing done");
    write_json(
        &s.layout.root().join("preprocess_report.json"),
        &json!({
            "extracted": extracted,
            "cached": cached,
            "rejected": rejected,
            "train": split.train.len(),
            "val": split.val.len(),
            "test": split.test.len(),
        }),
    )
}

fn stage1(s: &Session) -> Result<()> {
    let split = s.split()?;
    let train = s.records(&split.train)?;
    let val = s.records(&split.val)?;
    let vocab = PhonemeVocab::default();
    let (acoustic, style) = s.config.model.resolve(vocab.len());
    let outcome = train_stage1(
        Stage1Data {
            train: &train,
            val: &val,
            vocab: &vocab,
            mel: &s.config.features.mel,
        },
        acoustic,
        style,
        &s.config.stage1,
    )?;
    let path = s.layout.stage1_checkpoint();
    ensure_parent(&path)?;
    let hash = outcome.checkpoint.save(&path)?;
    write_text(&s.layout.stage1_loss(), &outcome.loss_csv())?;
    let ck = &outcome.checkpoint;
    ck.model.style.export_tokens(&ck.params, &s.layout.tokens())?;
    write_json(
        &s.layout.root().join("stage1_metrics.json"),
        &json!({
            "checkpoint_sha256": hash,
            "initial_train": outcome.initial_train,
            "best_step": ck.step,
            "best": ck.val_metrics,
        }),
    )?;
    info!(path = %path.display(), "stage-I checkpoint written");
    Ok(())
}

fn prune(s: &Session) -> Result<()> {
    let threshold = PruningConfig::new(s.config.pruning.threshold).map_err(|e| Usage(e.to_string()))?;
    let split = s.split()?;
    let records = s.records(&split.train)?;
    let utterances: Vec<Utterance> = records
        .iter()
        .map(|r| Utterance::new(r.id.clone(), PathBuf::new(), r.text.clone()))
        .collect();
    let provider = s.provider()?;
    let (_, report) = prune_corpus(&utterances, provider.as_ref(), &threshold);
    info!(kept = report.kept, total = report.total, "pruning done");
    let path = s.layout.prune_report();
    ensure_parent(&path)?;
    report.write_json(&path)?;
    Ok(())
}

fn build_pairs(s: &Session) -> Result<()> {
    let ckpt_path = s.layout.stage1_checkpoint();
    let report_path = s.layout.prune_report();
    require(&ckpt_path)?;
    require(&report_path)?;
    let ckpt = Stage1Checkpoint::load(&ckpt_path)?;
    let report = PruneReport::read_json(&report_path)?;
    let records = s.records(&report.kept_ids)?;
    let provider = s.provider()?;
    let dataset = build_stage2_dataset(&ckpt, &records, provider.as_ref())?;
    write_pairs(&s.layout.pairs(), &dataset.pairs)?;
    if !dataset.failed.is_empty() {
        write_json(&s.layout.root().join("stage2_failures.json"), &dataset.failed)?;
    }
    info!(pairs = dataset.pairs.len(), failed = dataset.failed.len(), "stage-II pairs written");
    Ok(())
}

fn stage2(s: &Session) -> Result<()> {
    let ckpt_path = s.layout.stage1_checkpoint();
    let pairs_path = s.layout.pairs();
    require(&ckpt_path)?;
    require(&pairs_path)?;
    let pairs = read_pairs(&pairs_path)?;
    let provider = s.provider()?;
    let outcome = train_adaptation(&pairs, &s.config.adaptation, &s.config.stage2)?;
    if let Some(epoch) = outcome.diverged_at {
        warn!(epoch, "training diverged; keeping the best parameters seen");
    }
    write_text(&s.layout.stage2_loss(), &outcome.loss_csv())?;
    write_json(
        &s.layout.root().join("stage2_metrics.json"),
        &json!({
            "best_epoch": outcome.best_epoch,
            "diverged_at": outcome.diverged_at,
            "history": outcome.history.last(),
        }),
    )?;
    let ckpt = AdaptationCheckpoint {
        schema_version: ADAPTATION_SCHEMA,
        provider_fingerprint: provider.fingerprint(),
        stage1_hash: Stage1Checkpoint::file_hash(&ckpt_path)?,
        net: outcome.net,
    };
    let path = s.layout.adaptation_checkpoint();
    ensure_parent(&path)?;
    ckpt.save(&path)?;
    info!(path = %path.display(), "adaptation checkpoint written");
    Ok(())
}

fn mel_csv(mel: &Array2<f64>) -> String {
    let mut out = String::new();
    for row in mel.rows() {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:.6}")).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

fn synth(s: &Session, text: &str, out: Option<PathBuf>) -> Result<()> {
    let s1 = s.layout.stage1_checkpoint();
    let s2 = s.layout.adaptation_checkpoint();
    require(&s1)?;
    require(&s2)?;
    let stage1 = Stage1Checkpoint::load(&s1)?;
    let hash = Stage1Checkpoint::file_hash(&s1)?;
    let vocoder: Option<Box<dyn Vocoder>> = match s.config.synth.vocoder {
        VocoderKind::GriffinLim => Some(Box::new(GriffinLim::new(
            stage1.mel.clone(),
            s.config.synth.griffin_lim_iterations,
            s.config.seed,
        )?)),
        VocoderKind::None => None,
    };
    let g2p: Box<dyn G2p> = Box::new(s.g2p()?);
    let synth = Synthesizer::new(stage1, &hash, AdaptationCheckpoint::load(&s2)?, s.provider()?, g2p, vocoder)?;
    let result = synth.synthesize(text)?;

    let wav = out.unwrap_or_else(|| s.layout.synth().join("out.wav"));
    let stem = wav.with_extension("");
    let mel_path = PathBuf::from(format!("{}.mel.csv", stem.display()));
    write_text(&mel_path, &mel_csv(&result.mel.values))?;
    match &result.waveform {
        Some(w) => {
            ensure_parent(&wav)?;
            write_wav(&wav, w, synth.stage1().mel.sample_rate)?;
            info!(wav = %wav.display(), mel = %mel_path.display(), "synthesized");
        }
        None => warn!(mel = %mel_path.display(), "no vocoder configured; only the mel was written"),
    }
    write_json(
        &PathBuf::from(format!("{}.json", stem.display())),
        &json!({
            "text": text,
            "phonemes": result.phonemes,
            "gst_weights": result.weights.as_slice(),
            "durations": result.durations,
            "frames": result.mel.frame_count(),
            "n_mels": result.mel.n_mels,
            "waveform": result.waveform.as_ref().map(|_| wav.display().to_string()),
        }),
    )
}

fn eval(s: &Session, metric: EvalCommand) -> Result<()> {
    let dir = s.layout.eval();
    match metric {
        EvalCommand::Cerwer {
            pairs,
            out,
            keep_case,
            keep_punctuation,
        } => {
            require(&pairs)?;
            let norm = Normalization {
                lowercase: !keep_case,
                strip_punctuation: !keep_punctuation,
                ..Normalization::default()
            };
            let report = score_transcripts(&read_transcripts(&pairs)?, &norm)?;
            write_json(&out.unwrap_or_else(|| dir.join("cerwer.json")), &report)
        }
        EvalCommand::Ser { labels, out } => {
            require(&labels)?;
            let records = read_labels(&labels)?;
            let t: Vec<&str> = records.iter().map(|r| r.true_label.as_str()).collect();
            let p: Vec<&str> = records.iter().map(|r| r.predicted.as_str()).collect();
            let report = ser_confusion(&t, &p, &SER_CLASSES)?;
            write_json(&out.unwrap_or_else(|| dir.join("ser.json")), &report)
        }
        EvalCommand::Pitch { wav, out } => {
            require(&wav)?;
            let samples = read_wav(&wav, SAMPLE_RATE)?;
            let config = PitchConfig {
                hop: s.config.features.mel.hop_size,
                ..PitchConfig::default()
            };
            let contour = extract_pitch_contour(&samples, &config)?;
            let name = wav.file_stem().and_then(|n| n.to_str()).unwrap_or("audio");
            let out = out.unwrap_or_else(|| dir.join(format!("{name}_pitch.csv")));
            write_text(&out, &contour.to_csv())?;
            info!(median_f0 = contour.median_voiced(), path = %out.display(), "pitch contour written");
            Ok(())
        }
    }
}

fn viz(s: &Session, out: Option<PathBuf>) -> Result<()> {
    let pairs_path = s.layout.pairs();
    require(&pairs_path)?;
    let pairs = read_pairs(&pairs_path)?;
    let first = pairs.first().ok_or_else(|| anyhow!("no stage-II pairs to plot"))?;
    let (k, d) = (first.target.len(), first.embedding.dim());
    let ids: Vec<String> = pairs.iter().map(|p| p.id.clone()).collect();
    let records = s.records(&ids)?;
    let provider = s.provider()?;
    let labels = records
        .iter()
        .map(|r| Ok(provider.classify(&r.text)?.dominant_class))
        .collect::<Result<Vec<String>>>()?;
    let gst = Array2::from_shape_fn((pairs.len(), k), |(i, j)| pairs[i].target.as_slice()[j]);
    let text = Array2::from_shape_fn((pairs.len(), d), |(i, j)| pairs[i].embedding.0[j]);
    let proj = project_spaces(&gst, &text, &labels, s.config.seed)?;
    let png = out.unwrap_or_else(|| s.layout.eval().join("projection.png"));
    ensure_parent(&png)?;
    let classes = render_projection(&proj, &png)?;
    write_json(&png.with_extension("json"), &json!({ "ids": ids, "classes": classes, "projection": proj }))?;
    info!(path = %png.display(), "projection written");
    Ok(())
}
