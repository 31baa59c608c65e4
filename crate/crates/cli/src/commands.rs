use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use repkd::data::{
    generate_mock_reps, generate_synth_corpus, load_corpus, read_manifest, read_teacher_reps, write_corpus,
    MockTeacherSpec, SynthSpec, TeacherRepSet, TrepHeader, Utterance, Vocab,
};
use repkd::lattice::{PosteriorStore, ALNQ_MAGIC};
use repkd::nn::{Checkpoint, Model, ModelConfig, TKDM_MAGIC};
use repkd::strategies::StrategySpec;
use repkd::trainer::{
    continue_iteration1, continue_iteration2, evaluate, iteration2_start, train_iteration1, Dataset, EpochMetrics,
    EpochObserver, KdSetup, TeacherBinding, TrainState, METRICS_HEADER,
};
use repkd::Error;

use crate::config::RunConfig;

/// `println!` that stays quiet when stdout is closed early, as in `| head`.
macro_rules! out {
    ($($arg:tt)*) => {{
        use std::io::Write;
        let _ = writeln!(std::io::stdout(), $($arg)*);
    }};
}

/// A message and the process exit code it maps to.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl Failure {
    pub fn usage(message: impl Into<String>) -> Self {
        Self {
            code: 2,
            message: message.into(),
        }
    }

    pub fn artifact(message: impl Into<String>) -> Self {
        Self {
            code: 3,
            message: message.into(),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::InvalidInput(_) | Error::InvalidConfig(_) | Error::Contract(_) => 2,
            Error::Missing(_) | Error::Consistency(_) | Error::Format(_) => 3,
            Error::Io(io) if io.kind() == std::io::ErrorKind::NotFound => 3,
            _ => 1,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Error::from(e).into()
    }
}

pub type Outcome = Result<(), Failure>;

fn ensure_fresh(path: &Path, force: bool) -> Outcome {
    if path.exists() && !force {
        return Err(Failure::usage(format!(
            "{} already exists (use --force to overwrite)",
            path.display()
        )));
    }
    Ok(())
}

pub fn synth(out: &Path, spec: &SynthSpec, force: bool) -> Outcome {
    if out.exists() && fs::read_dir(out)?.next().is_some() {
        ensure_fresh(out, force)?;
        for name in ["train.manifest", "dev.manifest", "vocab.txt"] {
            let p = out.join(name);
            if p.exists() {
                fs::remove_file(p)?;
            }
        }
        if out.join("frames").is_dir() {
            fs::remove_dir_all(out.join("frames"))?;
        }
    }
    let corpus = generate_synth_corpus(spec)?;
    write_corpus(out, &corpus)?;
    for (name, set) in [("train.manifest", &corpus.train), ("dev.manifest", &corpus.dev)] {
        let tokens: usize = set.iter().map(|u| u.tokens.len()).sum();
        let frames: usize = set.iter().map(|u| u.frames.rows()).sum();
        out!(
            "{}: {} utterances, {tokens} tokens, {frames} frames",
            out.join(name).display(),
            set.len()
        );
    }
    out!("vocabulary: {} pieces, feature dim {}", corpus.vocab.len(), spec.feature_dim);
    Ok(())
}

fn vocab_size_near(manifest: &Path, entries: &[repkd::data::ManifestEntry]) -> usize {
    let beside = manifest.parent().unwrap_or(Path::new(".")).join("vocab.txt");
    match Vocab::load(&beside) {
        Ok(v) => v.len(),
        Err(_) => entries
            .iter()
            .flat_map(|e| e.tokens.iter())
            .max()
            .map_or(1, |&m| m as usize + 1),
    }
}

pub fn mockteacher(manifest: &Path, out: &Path, spec: &MockTeacherSpec, vocab: usize, force: bool) -> Outcome {
    let entries = read_manifest(manifest).map_err(|e| Failure::usage(e.to_string()))?;
    ensure_fresh(out, force)?;
    let vocab = if vocab == 0 { vocab_size_near(manifest, &entries) } else { vocab };
    let set = generate_mock_reps(&entries, vocab, spec)?;
    set.save(out)?;
    out!(
        "TREP v1 L={} D={} variants={} utts={}",
        set.layers,
        set.dim,
        set.variants,
        set.len()
    );
    out!("wrote {}", out.display());
    Ok(())
}

struct Corpus {
    train: Vec<Utterance>,
    dev: Vec<Utterance>,
    vocab: Vocab,
}

fn load_vocab(cfg: &RunConfig, data: &[&[Utterance]]) -> Result<Vocab, Failure> {
    let path = cfg.vocab_path()?;
    if path.exists() {
        return Ok(Vocab::load(&path)?);
    }
    if !cfg.raw("data.vocab").is_empty() {
        return Err(Failure::artifact(format!("vocabulary not found: {}", path.display())));
    }
    let max = data
        .iter()
        .flat_map(|s| s.iter())
        .flat_map(|u| u.tokens.iter())
        .max()
        .map_or(1, |&m| m as usize + 1);
    Ok(Vocab::numbered(max.max(2)))
}

fn load_data(cfg: &RunConfig) -> Result<Corpus, Failure> {
    let train = load_corpus(cfg.train_manifest()?)?;
    let dev_path = cfg.dev_manifest()?;
    let dev = if dev_path.exists() || !cfg.raw("data.dev").is_empty() {
        load_corpus(dev_path)?
    } else {
        Vec::new()
    };
    let vocab = load_vocab(cfg, &[&train, &dev])?;
    Ok(Corpus { train, dev, vocab })
}

fn model_config(cfg: &RunConfig, vocab: &Vocab, sample: &[Utterance]) -> Result<ModelConfig, Failure> {
    let d_in = sample.first().map_or(0, |u| u.frames.cols());
    Ok(cfg.model(vocab.len(), d_in)?)
}

/// Persists metrics and resumable state after every epoch.
struct RunLog {
    dir: PathBuf,
    lines: Vec<String>,
}

impl RunLog {
    fn open(dir: &Path, keep_epochs: usize) -> Result<Self, Failure> {
        fs::create_dir_all(dir)?;
        let mut lines = Vec::new();
        if keep_epochs > 0 {
            if let Ok(text) = fs::read_to_string(dir.join("metrics.tsv")) {
                lines = text.lines().skip(1).take(keep_epochs).map(str::to_string).collect();
            }
        }
        Ok(Self {
            dir: dir.to_path_buf(),
            lines,
        })
    }
}

impl EpochObserver for RunLog {
    fn on_epoch(&mut self, metrics: &EpochMetrics, state: &TrainState) -> repkd::Result<()> {
        self.lines.push(metrics.to_string());
        let mut text = format!("{METRICS_HEADER}\n");
        for l in &self.lines {
            text.push_str(l);
            text.push('\n');
        }
        fs::write(self.dir.join("metrics.tsv"), text)?;
        state.to_checkpoint().save(self.dir.join("state.tkdm"))
    }
}

fn resume_state(cfg: &RunConfig, dir: &Path, model: &ModelConfig) -> Result<Option<TrainState>, Failure> {
    let path = dir.join("state.tkdm");
    if !cfg.get::<bool>("train.resume")? || !path.exists() {
        return Ok(None);
    }
    let state = TrainState::from_checkpoint(&Checkpoint::load(&path)?, model)?;
    log::info!("resuming {} after epoch {}", path.display(), state.epoch);
    Ok(Some(state))
}

fn print_summary(iteration: u8, history: &[EpochMetrics]) {
    if let Some(m) = history.last() {
        let wer = m.dev_wer.map_or("n/a".to_string(), |w| format!("{w:.4}"));
        out!(
            "iteration {iteration}: epoch {} asr_loss {:.4} kd_loss {:.4} dev_wer {wer}",
            m.epoch, m.asr_loss, m.kd_loss
        );
    }
}

fn load_teachers(cfg: &RunConfig) -> Result<Vec<TeacherBinding>, Failure> {
    let ids = cfg.teachers();
    if ids.is_empty() {
        return Err(Failure::usage("iteration 2 needs at least one teacher in kd.models"));
    }
    let dir = cfg.teacher_dir();
    let seed: u64 = cfg.get("train.seed")?;
    let mut out = Vec::new();
    for (i, id) in ids.iter().enumerate() {
        let path = dir.join(format!("{id}.trep"));
        if !path.exists() {
            return Err(Failure::artifact(format!(
                "teacher representations for {id} not found; expected {}",
                path.display()
            )));
        }
        let reps: TeacherRepSet = read_teacher_reps(&path)?;
        let (kind, k) = cfg.strategy_for(i)?;
        let strategy = StrategySpec {
            kind,
            k,
            total_layers: reps.layers,
            seed,
        };
        strategy.validate()?;
        out.push(TeacherBinding { reps, strategy });
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phases {
    One,
    Two,
    Both,
}

pub fn train(cfg: &RunConfig, phases: Phases, force: bool) -> Outcome {
    let corpus = load_data(cfg)?;
    if corpus.train.is_empty() {
        return Err(Failure::usage("training manifest is empty"));
    }
    let model_cfg = model_config(cfg, &corpus.vocab, &corpus.train)?;
    let run = cfg.run_dir();
    fs::create_dir_all(&run)?;
    fs::write(run.join("config.resolved"), cfg.resolved())?;
    log::info!("resolved config:\n{}", cfg.resolved());
    let data = Dataset {
        train: &corpus.train,
        dev: &corpus.dev,
        vocab: &corpus.vocab,
    };
    let resume: bool = cfg.get("train.resume")?;
    let kd = if phases != Phases::One {
        let kd = KdSetup {
            objective: cfg.objective()?,
            teachers: load_teachers(cfg)?,
            context: cfg.context()?,
        };
        kd.validate(&corpus.train)?;
        Some(kd)
    } else {
        None
    };

    let dir1 = run.join("iter1");
    if phases != Phases::Two {
        let tc = cfg.train(1)?;
        if !resume {
            ensure_fresh(&dir1.join("model.tkdm"), force)?;
        }
        let state = resume_state(cfg, &dir1, &model_cfg)?;
        let mut log = RunLog::open(&dir1, state.as_ref().map_or(0, |s| s.epoch))?;
        let out = match state {
            Some(s) => continue_iteration1(s, data, &tc, &mut log)?,
            None => train_iteration1(&model_cfg, data, &tc, &mut log)?,
        };
        out.model.to_checkpoint().save(dir1.join("model.tkdm"))?;
        out.posteriors.save(dir1.join("posteriors.alnq"))?;
        print_summary(1, &out.history);
        out!("wrote {}", dir1.display());
    }

    if let Some(kd) = kd {
        let tc = cfg.train(2)?;
        let dir2 = run.join("iter2");
        if !resume {
            ensure_fresh(&dir2.join("model.tkdm"), force)?;
        }
        let need = |p: PathBuf| {
            if p.exists() {
                Ok(p)
            } else {
                Err(Failure::artifact(format!(
                    "iteration 1 output not found: {} (run `train --iter 1` first)",
                    p.display()
                )))
            }
        };
        let iter1 = Checkpoint::load(need(dir1.join("model.tkdm"))?)?.to_model(&model_cfg)?;
        let posteriors = PosteriorStore::load(need(dir1.join("posteriors.alnq"))?)?;
        let state = resume_state(cfg, &dir2, &model_cfg)?;
        let mut log = RunLog::open(&dir2, state.as_ref().map_or(0, |s| s.epoch))?;
        let state = match state {
            Some(s) => s,
            None => TrainState::new(2, iteration2_start(&iter1, &kd, &tc)?),
        };
        let out = continue_iteration2(state, data, &tc, &kd, &posteriors, &mut log)?;
        out.model.to_checkpoint().save(dir2.join("model.tkdm"))?;
        print_summary(2, &out.history);
        out!("wrote {}", dir2.display());
    }
    Ok(())
}

pub fn eval(cfg: &RunConfig, checkpoint: Option<&Path>, manifest: Option<&Path>, report: Option<&Path>) -> Outcome {
    let manifest = match manifest {
        Some(m) => m.to_path_buf(),
        None => cfg.dev_manifest()?,
    };
    let data = load_corpus(&manifest)?;
    if data.is_empty() {
        return Err(Failure::usage(format!("{} has no utterances", manifest.display())));
    }
    let vocab = load_vocab(cfg, &[&data])?;
    let model_cfg = model_config(cfg, &vocab, &data)?;
    let checkpoint = match checkpoint {
        Some(c) => c.to_path_buf(),
        None => {
            let run = cfg.run_dir();
            let two = run.join("iter2/model.tkdm");
            if two.exists() {
                two
            } else {
                run.join("iter1/model.tkdm")
            }
        }
    };
    if !checkpoint.exists() {
        return Err(Failure::artifact(format!("checkpoint not found: {}", checkpoint.display())));
    }
    let model: Model<f32> = Checkpoint::load(&checkpoint)?.to_model(&model_cfg)?;
    let result = evaluate(&model, &data, &vocab, cfg.max_symbols()?)?;
    if !result.skipped.is_empty() {
        out!("skipped {} utterances with empty references", result.skipped.len());
    }
    out!(
        "WER {:.6} ({} edits / {} words, {} utterances)",
        result.wer(),
        result.edits,
        result.ref_words,
        result.rows.len()
    );
    if let Some(path) = report {
        result.write_tsv(path)?;
        out!("wrote {}", path.display());
    }
    Ok(())
}

fn l2(v: &[f32]) -> f64 {
    v.iter().map(|&x| (x as f64).powi(2)).sum::<f64>().sqrt()
}

pub fn inspect(path: &Path, utt: Option<&str>, layer: Option<u32>) -> Outcome {
    let mut magic = [0u8; 4];
    let mut f = fs::File::open(path)
        .map_err(|e| Failure::artifact(format!("cannot open {}: {e}", path.display())))?;
    let got = f.read(&mut magic)?;
    let magic = &magic[..got];
    if magic == b"TREP" {
        let header = TrepHeader::read(&mut fs::File::open(path)?)?;
        let set = TeacherRepSet::load(path)?;
        out!(
            "TREP v{} L={} D={} variants={} utts={}",
            header.version, set.layers, set.dim, set.variants, set.len()
        );
        out!("teacher {}", set.teacher);
        match utt {
            Some(id) => {
                let layers: Vec<u32> = match layer {
                    Some(l) => vec![l],
                    None => (1..=set.layers).collect(),
                };
                for v in 0..set.variants {
                    for &l in &layers {
                        let m = set.matrix(id, v, l)?;
                        let norms: Vec<String> = (0..m.rows()).map(|i| format!("{:.6}", l2(m.row(i)))).collect();
                        out!("{id} variant {v} layer {l} norms {}", norms.join(" "));
                    }
                }
            }
            None => {
                for (id, r) in set.iter() {
                    out!("{id} N={} ({}x{} per layer)", r.tokens(), r.tokens(), set.dim);
                }
            }
        }
    } else if magic == ALNQ_MAGIC {
        let store = PosteriorStore::load(path)?;
        out!("ALNQ v1 utts={}", store.len());
        let mut worst: f64 = 0.0;
        for (id, q) in store.iter() {
            if utt.is_some_and(|u| u != id) {
                continue;
            }
            let err = q.max_row_sum_error();
            worst = worst.max(err);
            let sums: f64 = (0..q.tokens()).map(|i| q.row(i).iter().sum::<f64>()).sum::<f64>();
            let mean = if q.tokens() == 0 { 1.0 } else { sums / q.tokens() as f64 };
            out!("{id} N={} T={} rows sum to {mean:.3}", q.tokens(), q.frames());
        }
        out!("max row-sum error {worst:.2e}");
    } else if magic == TKDM_MAGIC {
        let ck = Checkpoint::load(path)?;
        let params: usize = ck.blobs.iter().filter(|b| !b.name.starts_with("optim.") && !b.name.starts_with("state.")).map(|b| b.data.len()).sum();
        let digest: String = ck.digest.iter().map(|b| format!("{b:02x}")).collect();
        out!("TKDM v1 blobs={} params={params}", ck.blobs.len());
        out!("config digest {digest}");
        for b in &ck.blobs {
            let dims: Vec<String> = b.dims.iter().map(|d| d.to_string()).collect();
            out!("{} [{}]", b.name, dims.join("x"));
        }
    } else if magic == repkd::data::FRMS_MAGIC {
        let m = repkd::data::load_frames(path)?;
        out!("FRMS T={} D={}", m.rows(), m.cols());
    } else {
        let hex: Vec<String> = magic.iter().map(|b| format!("{b:02x}")).collect();
        return Err(Failure::usage(format!(
            "unknown file format: first bytes [{}] ({:?})",
            hex.join(" "),
            String::from_utf8_lossy(magic)
        )));
    }
    Ok(())
}
