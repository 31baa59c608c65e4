//! Two-iteration recipe: ASR-only training and posterior export, then
//! ASR plus distillation against frozen posteriors.

mod decode;
mod eval;
mod kd;
mod optim;

use std::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

pub use decode::{greedy_decode, greedy_search, StepScorer, DEFAULT_MAX_SYMBOLS};
pub use eval::{evaluate, EvalReport, EvalRow, REPORT_HEADER};
pub use kd::{KdSetup, TeacherBinding};
pub use optim::{OptimizerConfig, OptimizerKind, OptimizerState};

use crate::data::{Utterance, Vocab};
use crate::distill::{utterance_objective, KdInputs, ObjectiveConfig};
use crate::error::{Error, Result};
use crate::lattice::{analyze, PosteriorStore};
use crate::nn::{Blob, Checkpoint, Model, ModelConfig};
use crate::seeding::derive_seed;

/// Environment variable capping worker threads.
pub const THREADS_ENV: &str = "REPKD_THREADS";

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerConfig,
    pub seed: u64,
    /// Worker threads; 0 defers to `REPKD_THREADS`, then to all cores.
    pub threads: usize,
    pub max_symbols: usize,
    /// Iteration 2 only: start from a fresh initialization instead of the
    /// iteration-1 weights.
    pub fresh_init: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch_size: 8,
            optimizer: OptimizerConfig::default(),
            seed: 1,
            threads: 0,
            max_symbols: DEFAULT_MAX_SYMBOLS,
            fresh_init: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::config("epochs must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be at least 1"));
        }
        if self.max_symbols == 0 {
            return Err(Error::config("max_symbols must be at least 1"));
        }
        self.optimizer.validate()
    }

    pub fn resolved_threads(&self) -> usize {
        if self.threads > 0 {
            return self.threads;
        }
        std::env::var(THREADS_ENV)
            .ok()
            .and_then(|v| v.trim().parse::<usize>().ok())
            .filter(|&n| n > 0)
            .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
    }
}

/// Train and dev utterances plus the vocabulary used for WER.
#[derive(Debug, Clone, Copy)]
pub struct Dataset<'a> {
    pub train: &'a [Utterance],
    pub dev: &'a [Utterance],
    pub vocab: &'a Vocab,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    /// Means per training utterance.
    pub asr_loss: f64,
    pub kd_loss: f64,
    pub combined: f64,
    /// `None` without a dev set.
    pub dev_wer: Option<f64>,
}

pub const METRICS_HEADER: &str = "epoch\tasr_loss\tkd_loss\tcombined\tdev_wer";

impl fmt::Display for EpochMetrics {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}\t{:.6}\t{:.6}\t{:.6}\t",
            self.epoch, self.asr_loss, self.kd_loss, self.combined
        )?;
        match self.dev_wer {
            Some(w) => write!(f, "{w:.6}"),
            None => f.write_str("nan"),
        }
    }
}

/// Everything needed to continue a run after `epoch` completed epochs.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub iteration: u8,
    pub epoch: usize,
    pub model: Model<f32>,
    pub optimizer: OptimizerState,
}

impl TrainState {
    pub fn new(iteration: u8, model: Model<f32>) -> Self {
        let optimizer = OptimizerState::new(model.num_params());
        Self {
            iteration,
            epoch: 0,
            model,
            optimizer,
        }
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = self.model.to_checkpoint();
        ck.blobs.extend(self.optimizer.blobs());
        ck.blobs.push(Blob::scalar("state.iteration", self.iteration as f32));
        ck.blobs.push(Blob::scalar("state.epoch", self.epoch as f32));
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint, config: &ModelConfig) -> Result<Self> {
        let model = ck.to_model(config)?;
        let scalar = |name: &str| {
            ck.blob(name)
                .and_then(|b| b.data.first().copied())
                .ok_or_else(|| Error::Consistency(format!("checkpoint lacks {name}; not a training state")))
        };
        let optimizer = OptimizerState::from_blobs(|n| ck.blob(n).cloned(), model.num_params())?;
        Ok(Self {
            iteration: scalar("state.iteration")? as u8,
            epoch: scalar("state.epoch")? as usize,
            model,
            optimizer,
        })
    }
}

/// Called after every epoch, e.g. to persist metrics and state.
pub trait EpochObserver {
    fn on_epoch(&mut self, metrics: &EpochMetrics, state: &TrainState) -> Result<()>;
}

impl<F: FnMut(&EpochMetrics, &TrainState) -> Result<()>> EpochObserver for F {
    fn on_epoch(&mut self, metrics: &EpochMetrics, state: &TrainState) -> Result<()> {
        self(metrics, state)
    }
}

/// Observer that ignores everything.
pub struct Silent;

impl EpochObserver for Silent {
    fn on_epoch(&mut self, _: &EpochMetrics, _: &TrainState) -> Result<()> {
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub model: Model<f32>,
    /// Epochs run by this call.
    pub history: Vec<EpochMetrics>,
}

#[derive(Debug, Clone)]
pub struct Iteration1Output {
    pub model: Model<f32>,
    pub posteriors: PosteriorStore,
    pub history: Vec<EpochMetrics>,
}

fn check_corpus(model: &ModelConfig, data: &[Utterance], what: &str) -> Result<()> {
    for u in data {
        if u.frames.cols() != model.d_in {
            return Err(Error::config(format!(
                "{what} utterance {} has {}-dim features, model expects {}",
                u.id,
                u.frames.cols(),
                model.d_in
            )));
        }
        if u.frames.rows() < model.subsample {
            return Err(Error::input(format!(
                "{what} utterance {} has {} frames, fewer than the subsample factor {}",
                u.id,
                u.frames.rows(),
                model.subsample
            )));
        }
        if let Some(&t) = u.tokens.iter().find(|&&t| t as usize >= model.vocab) {
            return Err(Error::input(format!(
                "{what} utterance {} has token {t} outside the {}-token vocabulary",
                u.id, model.vocab
            )));
        }
    }
    Ok(())
}

fn thread_pool(cfg: &TrainConfig) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.resolved_threads())
        .build()
        .map_err(|e| Error::config(format!("cannot start worker threads: {e}")))
}

/// Alignment posteriors of `model` for every utterance, with gold tokens.
pub fn compute_posteriors(model: &Model<f32>, data: &[Utterance]) -> Result<PosteriorStore> {
    let qs: Vec<_> = data
        .par_iter()
        .map(|u| {
            let fwd = model.forward(&u.frames, &u.tokens)?;
            let mut q = analyze(&fwd.grid, &u.tokens)?.posterior;
            q.frozen = true;
            Ok(q)
        })
        .collect::<Result<_>>()?;
    let mut store = PosteriorStore::new();
    for (u, q) in data.iter().zip(qs) {
        store.insert(u.id.clone(), q);
    }
    Ok(store)
}

struct KdRun<'a> {
    setup: &'a KdSetup,
    posteriors: &'a PosteriorStore,
    hash: [u8; 32],
}

fn run_epochs(
    mut state: TrainState,
    data: Dataset<'_>,
    cfg: &TrainConfig,
    objective: &ObjectiveConfig,
    kd: Option<&KdRun<'_>>,
    observer: &mut dyn EpochObserver,
) -> Result<TrainOutput> {
    cfg.validate()?;
    if data.train.is_empty() {
        return Err(Error::input("training set is empty"));
    }
    check_corpus(&state.model.config, data.train, "training")?;
    check_corpus(&state.model.config, data.dev, "dev")?;
    let pool = thread_pool(cfg)?;
    let mut history = Vec::new();
    let n = data.train.len();
    while state.epoch < cfg.epochs {
        let epoch = state.epoch + 1;
        let schedule = match kd {
            Some(run) => {
                if run.posteriors.content_hash() != run.hash {
                    return Err(Error::Consistency(format!(
                        "frozen posteriors changed before epoch {epoch}"
                    )));
                }
                Some(run.setup.schedule(epoch as u64)?)
            }
            None => None,
        };
        let mut order: Vec<usize> = (0..n).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(
            cfg.seed,
            "shuffle",
            &[state.iteration as u64, epoch as u64],
        ));
        order.shuffle(&mut rng);

        let (mut asr_sum, mut kd_sum, mut comb_sum) = (0.0, 0.0, 0.0);
        for batch in order.chunks(cfg.batch_size) {
            let model = &state.model;
            let outputs: Vec<Result<_>> = pool.install(|| {
                batch
                    .par_iter()
                    .map(|&i| {
                        let u = &data.train[i];
                        let target = match (kd, &schedule) {
                            (Some(run), Some(s)) if objective.lambda > 0.0 => {
                                Some(run.setup.target(&u.id, epoch as u64, s)?)
                            }
                            _ => None,
                        };
                        let inputs = match (kd, &target) {
                            (Some(run), Some(t)) => Some(KdInputs {
                                posterior: run.posteriors.get(&u.id).ok_or_else(|| {
                                    Error::Missing(format!("no frozen posterior for utterance {}", u.id))
                                })?,
                                target: t,
                            }),
                            _ => None,
                        };
                        utterance_objective(model, &u.frames, &u.tokens, inputs, objective)
                    })
                    .collect()
            });
            let mut total: Option<Model<f32>> = None;
            for (&i, out) in batch.iter().zip(outputs) {
                let out = out?;
                if !out.combined.is_finite() {
                    return Err(Error::Divergence(format!(
                        "iteration {} epoch {epoch}: non-finite loss on utterance {}",
                        state.iteration, data.train[i].id
                    )));
                }
                asr_sum += out.asr;
                kd_sum += out.kd;
                comb_sum += out.combined;
                match &mut total {
                    None => total = Some(out.grads),
                    Some(t) => t.add_scaled(&out.grads, 1.0),
                }
            }
            let mut grads = total.expect("batches are non-empty");
            let scale = 1.0 / batch.len() as f32;
            grads.visit_mut(&mut |_, d| d.iter_mut().for_each(|v| *v *= scale));
            state.optimizer.apply(&cfg.optimizer, &mut state.model, &grads);
            if !state.model.all_finite() {
                return Err(Error::Divergence(format!(
                    "iteration {} epoch {epoch}: parameters became non-finite",
                    state.iteration
                )));
            }
        }
        state.epoch = epoch;
        let dev_wer = if data.dev.is_empty() {
            None
        } else {
            Some(pool.install(|| evaluate(&state.model, data.dev, data.vocab, cfg.max_symbols))?.wer())
        };
        let metrics = EpochMetrics {
            epoch,
            asr_loss: asr_sum / n as f64,
            kd_loss: kd_sum / n as f64,
            combined: comb_sum / n as f64,
            dev_wer,
        };
        log::info!("iteration {} {metrics}", state.iteration);
        observer.on_epoch(&metrics, &state)?;
        history.push(metrics);
    }
    Ok(TrainOutput {
        model: state.model,
        history,
    })
}

pub fn train_iteration1(
    config: &ModelConfig,
    data: Dataset<'_>,
    cfg: &TrainConfig,
    observer: &mut dyn EpochObserver,
) -> Result<Iteration1Output> {
    let model = Model::init(config, derive_seed(cfg.seed, "init", &[1]))?;
    continue_iteration1(TrainState::new(1, model), data, cfg, observer)
}

/// Runs the remaining iteration-1 epochs of `state`, then exports the
/// posteriors of the final model.
pub fn continue_iteration1(
    state: TrainState,
    data: Dataset<'_>,
    cfg: &TrainConfig,
    observer: &mut dyn EpochObserver,
) -> Result<Iteration1Output> {
    let asr_only = ObjectiveConfig {
        lambda: 0.0,
        ..ObjectiveConfig::default()
    };
    let out = run_epochs(state, data, cfg, &asr_only, None, observer)?;
    let pool = thread_pool(cfg)?;
    let posteriors = pool.install(|| compute_posteriors(&out.model, data.train))?;
    Ok(Iteration1Output {
        model: out.model,
        posteriors,
        history: out.history,
    })
}

/// Starting point of iteration 2: the iteration-1 weights (or a fresh
/// initialization) plus a new regression head sized for `kd`.
pub fn iteration2_start(iter1: &Model<f32>, kd: &KdSetup, cfg: &TrainConfig) -> Result<Model<f32>> {
    let mut model = if cfg.fresh_init {
        Model::init(&iter1.config, derive_seed(cfg.seed, "init", &[2]))?
    } else {
        let mut m = iter1.clone();
        m.regression = None;
        m
    };
    model.attach_regression(kd.target_dim()?, derive_seed(cfg.seed, "regression", &[]));
    Ok(model)
}

pub fn train_iteration2(
    start: Model<f32>,
    data: Dataset<'_>,
    cfg: &TrainConfig,
    kd: &KdSetup,
    posteriors: &PosteriorStore,
    observer: &mut dyn EpochObserver,
) -> Result<TrainOutput> {
    continue_iteration2(TrainState::new(2, start), data, cfg, kd, posteriors, observer)
}

pub fn continue_iteration2(
    state: TrainState,
    data: Dataset<'_>,
    cfg: &TrainConfig,
    kd: &KdSetup,
    posteriors: &PosteriorStore,
    observer: &mut dyn EpochObserver,
) -> Result<TrainOutput> {
    kd.validate(data.train)?;
    let config = &state.model.config;
    for u in data.train {
        let q = posteriors
            .get(&u.id)
            .ok_or_else(|| Error::Missing(format!("no frozen posterior for utterance {}", u.id)))?;
        let frames = config.output_frames(u.frames.rows());
        if q.tokens() != u.tokens.len() || q.frames() != frames {
            return Err(Error::Consistency(format!(
                "utterance {}: frozen posterior is {}x{}, expected {}x{frames}",
                u.id,
                q.tokens(),
                q.frames(),
                u.tokens.len()
            )));
        }
    }
    let want = kd.target_dim()?;
    match &state.model.regression {
        Some(r) if r.out_dim() == want => {}
        _ => {
            return Err(Error::Consistency(format!(
                "model has no regression head producing {want} teacher features"
            )))
        }
    }
    let run = KdRun {
        setup: kd,
        posteriors,
        hash: posteriors.content_hash(),
    };
    run_epochs(state, data, cfg, &kd.objective, Some(&run), observer)
}
