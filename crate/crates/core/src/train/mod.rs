//! The training loop: Adam, step learning-rate decay, gradient clipping,
//! per-epoch validation and checkpoints.
//!
//! Randomness is split into independent ChaCha streams derived from the
//! seed: stream 0 initialises parameters and stream `e + 1` drives the
//! shuffle and dropout of zero-based epoch `e`. A run resumed from a
//! checkpoint therefore continues bit-for-bit like an uninterrupted one.

mod config;
mod optim;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use config::{lr_schedule, ClipMode, EmbeddingSettings, TrainConfig, CONFIG_KEYS};
pub use optim::{adam_step, clip_gradients, AdamState};

use crate::artifact::{Checkpoint, EmbeddingArtifact, TrainingState};
use crate::autodiff::Graph;
use crate::classifier::Mode;
use crate::data::{batch, DatasetSplit, Lexicon};
use crate::error::{Error, Result};
use crate::eval::score;
use crate::model::{loss, SelfNet};
use crate::subword::NgramVocabulary;

/// One row of the per-epoch log. `epoch` counts from 1.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub valid_loss: f64,
    pub valid_f1: f64,
}

impl EpochLog {
    pub const CSV_HEADER: &'static str = "epoch,lr,train_loss,valid_loss,valid_f1";

    /// Shortest round-trip float formatting, so logs compare bitwise.
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{}",
            self.epoch, self.lr, self.train_loss, self.valid_loss, self.valid_f1
        )
    }
}

/// How the model starts.
pub enum Init<'a> {
    /// New parameters, optionally with a pretrained subword table.
    Fresh(Option<&'a EmbeddingArtifact>),
    /// Continue from a saved checkpoint up to `config.epochs`.
    Resume(Checkpoint),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Status {
    Completed,
    /// A non-finite loss or gradient stopped training; the returned final
    /// checkpoint is the last good one.
    Diverged { epoch: usize, reason: String },
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub status: Status,
    /// State after the last completed epoch.
    pub last: Checkpoint,
    /// Best validation F1 seen by this call, if any epoch improved on it.
    pub best: Option<Checkpoint>,
}

impl TrainOutcome {
    pub fn log(&self) -> &[EpochLog] {
        &self.last.state.history
    }
}

fn stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Trains on `split.train`, validating on `split.valid` after every epoch.
///
/// `on_epoch` receives each log row, the checkpoint after that epoch and
/// whether it is the best so far. Returning an error stops training.
pub fn train<F>(
    split: &DatasetSplit,
    config: &TrainConfig,
    init: Init<'_>,
    mut on_epoch: F,
) -> Result<TrainOutcome>
where
    F: FnMut(&EpochLog, &Checkpoint, bool) -> Result<()>,
{
    config.validate()?;
    if split.train.is_empty() {
        return Err(Error::Empty("training split"));
    }
    if split.valid.is_empty() {
        return Err(Error::Empty("validation split"));
    }
    let mut ckpt = match init {
        Init::Fresh(embeddings) => fresh(split, config, embeddings)?,
        Init::Resume(ckpt) => {
            let mut expected = ckpt.config.clone();
            expected.epochs = config.epochs;
            if &expected != config {
                return Err(Error::Config(
                    "resume configuration differs from the checkpoint in more than `epochs`".into(),
                ));
            }
            Checkpoint {
                config: config.clone(),
                ..ckpt
            }
        }
    };

    let mut lexicon = Lexicon::new();
    let mut best = None;
    let mut status = Status::Completed;
    while ckpt.state.epoch < config.epochs {
        let epoch = ckpt.state.epoch;
        let snapshot = ckpt.clone();
        match run_epoch(&mut ckpt, split, &mut lexicon, epoch)? {
            EpochResult::Done(row) => {
                let is_best = ckpt.state.best_valid_f1.is_none_or(|b| row.valid_f1 > b);
                if is_best {
                    ckpt.state.best_valid_f1 = Some(row.valid_f1);
                    ckpt.state.best_epoch = Some(row.epoch);
                }
                ckpt.state.history.push(row.clone());
                on_epoch(&row, &ckpt, is_best)?;
                if is_best {
                    best = Some(ckpt.clone());
                }
            }
            EpochResult::Diverged(reason) => {
                ckpt = snapshot;
                status = Status::Diverged {
                    epoch: epoch + 1,
                    reason,
                };
                break;
            }
        }
    }
    Ok(TrainOutcome {
        status,
        last: ckpt,
        best,
    })
}

fn fresh(split: &DatasetSplit, config: &TrainConfig, embeddings: Option<&EmbeddingArtifact>) -> Result<Checkpoint> {
    let mut rng = stream(config.seed, 0);
    let model = match embeddings {
        Some(art) => {
            if art.vocab.config() != &config.vocab {
                return Err(Error::Config(
                    "embedding artifact was built with different n-gram settings".into(),
                ));
            }
            let mut net = SelfNet::new(config.model.clone(), art.vocab.clone(), &mut rng)?;
            net.load_embeddings(&art.table)?;
            net
        }
        None => {
            let corpus = split.train.iter().map(|e| &e.tokens);
            let vocab = NgramVocabulary::build(config.vocab.clone(), corpus)?;
            SelfNet::new(config.model.clone(), vocab, &mut rng)?
        }
    };
    let adam = AdamState::new(model.params.named());
    Ok(Checkpoint {
        config: config.clone(),
        model,
        adam,
        state: TrainingState {
            epoch: 0,
            seed: config.seed,
            best_valid_f1: None,
            best_epoch: None,
            history: Vec::new(),
        },
    })
}

enum EpochResult {
    Done(EpochLog),
    Diverged(String),
}

fn run_epoch(
    ckpt: &mut Checkpoint,
    split: &DatasetSplit,
    lexicon: &mut Lexicon,
    epoch: usize,
) -> Result<EpochResult> {
    let config = &ckpt.config;
    let lr = lr_schedule(epoch, config);
    let mut rng = stream(ckpt.state.seed, epoch as u64 + 1);
    let batches = batch(
        &split.train,
        config.batch_size,
        lexicon,
        &ckpt.model.vocab,
        Some(&mut rng),
    )?;
    let mut total = 0.0;
    for b in &batches {
        let (value, mut grads) = {
            let mut g = Graph::new();
            let vars = ckpt.model.params.register(&mut g);
            let (l, _) = loss(&mut g, &vars, b, lexicon, &ckpt.model.config, Mode::Train, &mut rng)?;
            (g.value(l).item(), g.backward(l)?)
        };
        if !value.is_finite() {
            return Ok(EpochResult::Diverged(format!("loss became {value}")));
        }
        total += value * b.rows() as f64;
        clip_gradients(&mut grads, config.clip_norm, config.clip_mode);
        match adam_step(ckpt.model.params.named_mut(), &grads, &mut ckpt.adam, lr) {
            Ok(()) => {}
            Err(Error::NonFinite(name)) => {
                return Ok(EpochResult::Diverged(format!("non-finite gradient for `{name}`")))
            }
            Err(e) => return Err(e),
        }
    }
    ckpt.state.epoch = epoch + 1;
    let valid = score(&ckpt.model, &split.valid, config.batch_size)?;
    if !valid.loss.is_finite() {
        return Ok(EpochResult::Diverged(format!("validation loss became {}", valid.loss)));
    }
    Ok(EpochResult::Done(EpochLog {
        epoch: epoch + 1,
        lr,
        train_loss: total / split.train.len() as f64,
        valid_loss: valid.loss,
        valid_f1: valid.metrics.f1,
    }))
}
