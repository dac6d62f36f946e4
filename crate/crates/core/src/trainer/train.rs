use std::path::PathBuf;
use std::thread;

use serde::{Deserialize, Serialize};

use crate::corpus::{CaptionRecord, FeatureStore, Vocabulary};
use crate::decoder::{CaptionModel, ModelDims, DEFAULT_EMBED_DIM, DEFAULT_HIDDEN_DIM};
use crate::error::{Error, Result};
use crate::nn::gru::check_dropout;
use crate::nn::linalg::Matrix;
use crate::nn::{RngStream, Vector};
use crate::trainer::adam::{adam_step, AdamConfig, AdamState};

const STREAM_INIT: u64 = 0x1417;
const STREAM_SHUFFLE: u64 = 0x54F1;
const STREAM_DROPOUT: u64 = 0xD40F;

pub const DEFAULT_CLIP_NORM: f64 = 5.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub d_t: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
    pub hidden_dim: usize,
    pub embed_dim: usize,
    pub freeze_embeddings: bool,
    pub checkpoint: Option<PathBuf>,
    /// Global gradient-norm clip; off when `None`.
    pub clip_norm: Option<f64>,
    /// Stop after this many optimizer steps even mid-epoch.
    pub max_steps: Option<usize>,
    /// Worker threads for minibatch gradients. With one thread results are
    /// bit-identical across runs; with more they are reproducible for the
    /// same thread count.
    pub threads: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            d_t: 0.0,
            batch_size: 32,
            epochs: 10,
            lr: AdamConfig::default().lr,
            seed: 0,
            hidden_dim: DEFAULT_HIDDEN_DIM,
            embed_dim: DEFAULT_EMBED_DIM,
            freeze_embeddings: true,
            checkpoint: None,
            clip_norm: None,
            max_steps: None,
            threads: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        check_dropout(self.d_t)?;
        let bad = |what: &str| Err(Error::Parameter(what.to_string()));
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1");
        }
        if self.epochs == 0 {
            return bad("epochs must be >= 1");
        }
        if self.hidden_dim == 0 || self.embed_dim == 0 {
            return bad("hidden_dim and embed_dim must be >= 1");
        }
        if self.threads == 0 {
            return bad("threads must be >= 1");
        }
        if let Some(c) = self.clip_norm {
            if !(c.is_finite() && c > 0.0) {
                return bad("clip_norm must be positive");
            }
        }
        AdamConfig {
            lr: self.lr,
            ..AdamConfig::default()
        }
        .validate()
    }
}

/// Encoded captions paired with the features of their images.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSet {
    features: Vec<Vector>,
    image_ids: Vec<String>,
    /// `(feature index, caption ids ending with the end marker)`
    examples: Vec<(usize, Vec<usize>)>,
    feature_dim: usize,
}

impl TrainingSet {
    /// Fails with a data error naming the first caption whose image has no
    /// feature vector.
    pub fn build(
        records: &[CaptionRecord],
        features: &FeatureStore,
        vocab: &Vocabulary,
    ) -> Result<Self> {
        let mut index = indexmap::IndexMap::new();
        let mut feats = Vec::new();
        let mut examples = Vec::with_capacity(records.len());
        for rec in records {
            let next = index.len();
            let slot = *index.entry(rec.image_id.clone()).or_insert(next);
            if slot == next {
                let f = features.get(&rec.image_id).ok_or_else(|| {
                    Error::Data(format!("no feature vector for image {:?}", rec.image_id))
                })?;
                feats.push(f);
            }
            examples.push((slot, vocab.encode_caption(&rec.tokens)));
        }
        if examples.is_empty() {
            return Err(Error::Input("training set is empty".into()));
        }
        Ok(TrainingSet {
            features: feats,
            image_ids: index.into_keys().collect(),
            examples,
            feature_dim: features.feature_dim(),
        })
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn image_count(&self) -> usize {
        self.features.len()
    }

    pub fn image_ids(&self) -> &[String] {
        &self.image_ids
    }

    pub fn example(&self, i: usize) -> (&[f64], &[usize]) {
        let (f, ids) = &self.examples[i];
        (&self.features[*f], ids)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&[f64], &[usize])> {
        (0..self.len()).map(|i| self.example(i))
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    /// Mean per-token training loss of each epoch, measured with dropout
    /// `d_t` active as the model was updated.
    pub epoch_losses: Vec<f64>,
    /// Mean per-token loss of every minibatch, before its update.
    pub step_losses: Vec<f64>,
    pub steps: usize,
}

/// A freshly initialized model for `config`, optionally with a pretrained
/// embedding table.
pub fn init_model(
    vocab_size: usize,
    feature_dim: usize,
    config: &TrainConfig,
    embeddings: Option<Matrix>,
) -> Result<CaptionModel> {
    let dims = ModelDims {
        vocab_size,
        embed_dim: config.embed_dim,
        feature_dim,
        hidden_dim: config.hidden_dim,
    };
    let mut model = CaptionModel::init(dims, &mut RngStream::derive(config.seed, &[STREAM_INIT]));
    if let Some(table) = embeddings {
        model.set_embeddings(table)?;
    }
    model.embeddings_frozen = config.freeze_embeddings;
    Ok(model)
}

/// Sums the gradients of `batch` into a fresh buffer. Example `k` of step
/// `step` always draws its dropout masks from the same derived stream, so
/// the per-example gradients do not depend on the thread count.
fn batch_gradients(
    model: &CaptionModel,
    data: &TrainingSet,
    batch: &[usize],
    config: &TrainConfig,
    step: usize,
) -> Result<(CaptionModel, f64, usize)> {
    let run = |range: std::ops::Range<usize>| -> Result<(CaptionModel, f64, usize)> {
        let mut grads = model.zeros_like();
        let mut loss = 0.0;
        let mut tokens = 0;
        for k in range {
            let (feature, ids) = data.example(batch[k]);
            let mut rng = RngStream::derive(config.seed, &[STREAM_DROPOUT, step as u64, k as u64]);
            let (l, n) =
                model.accumulate_gradients(feature, ids, config.d_t, &mut rng, &mut grads)?;
            loss += l;
            tokens += n;
        }
        Ok((grads, loss, tokens))
    };

    let workers = config.threads.min(batch.len()).max(1);
    if workers == 1 {
        return run(0..batch.len());
    }
    let chunk = batch.len().div_ceil(workers);
    let parts: Vec<Result<(CaptionModel, f64, usize)>> = thread::scope(|s| {
        let handles: Vec<_> = (0..batch.len())
            .step_by(chunk)
            .map(|start| {
                let end = (start + chunk).min(batch.len());
                s.spawn(move || run(start..end))
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("gradient worker panicked"))
            .collect()
    });
    let mut parts = parts.into_iter();
    let (mut grads, mut loss, mut tokens) = parts.next().expect("at least one chunk")?;
    for part in parts {
        let (g, l, n) = part?;
        for ((_, acc), (_, _, src)) in grads.tensors_mut().into_iter().zip(g.tensors()) {
            acc.iter_mut().zip(src).for_each(|(a, b)| *a += b);
        }
        loss += l;
        tokens += n;
    }
    Ok((grads, loss, tokens))
}

fn scale_and_clip(grads: &mut CaptionModel, scale: f64, clip: Option<f64>) {
    for (_, t) in grads.tensors_mut() {
        t.iter_mut().for_each(|g| *g *= scale);
    }
    if let Some(max) = clip {
        let norm = grads
            .tensors()
            .iter()
            .flat_map(|(_, _, t)| t.iter())
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt();
        if norm > max {
            let s = max / norm;
            for (_, t) in grads.tensors_mut() {
                t.iter_mut().for_each(|g| *g *= s);
            }
        }
    }
}

/// Minibatch Adam on the per-token mean cross entropy. The shuffle order,
/// dropout masks and (through [`init_model`]) the initial weights all
/// derive from `config.seed`.
pub fn train(
    model: &mut CaptionModel,
    data: &TrainingSet,
    config: &TrainConfig,
) -> Result<TrainLog> {
    config.validate()?;
    if data.feature_dim() != model.dims.feature_dim {
        return Err(Error::Incompatible(format!(
            "features have dim {} but the model expects {}",
            data.feature_dim(),
            model.dims.feature_dim
        )));
    }
    let adam = AdamConfig {
        lr: config.lr,
        ..AdamConfig::default()
    };
    let mut state = AdamState::new(model, adam)?;
    let mut log = TrainLog::default();
    let mut order: Vec<usize> = (0..data.len()).collect();

    'epochs: for epoch in 0..config.epochs {
        RngStream::derive(config.seed, &[STREAM_SHUFFLE, epoch as u64]).shuffle(&mut order);
        let mut epoch_loss = 0.0;
        let mut epoch_tokens = 0usize;
        for batch in order.chunks(config.batch_size) {
            if config.max_steps.is_some_and(|m| log.steps >= m) {
                if epoch_tokens > 0 {
                    log.epoch_losses.push(epoch_loss / epoch_tokens as f64);
                }
                break 'epochs;
            }
            let (mut grads, loss, tokens) = batch_gradients(model, data, batch, config, log.steps)?;
            if !loss.is_finite() {
                return Err(Error::Numerical(format!(
                    "non-finite training loss at step {}",
                    log.steps
                )));
            }
            scale_and_clip(&mut grads, 1.0 / tokens as f64, config.clip_norm);
            adam_step(model, &grads, &mut state)?;
            log.step_losses.push(loss / tokens as f64);
            log.steps += 1;
            epoch_loss += loss;
            epoch_tokens += tokens;
        }
        log.epoch_losses.push(epoch_loss / epoch_tokens as f64);
    }
    Ok(log)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{synth_corpus, SynthSpec};

    fn toy(n_images: usize) -> (Vocabulary, TrainingSet) {
        let (caps, feats) = synth_corpus(5, n_images, SynthSpec::default());
        let vocab = Vocabulary::build(caps.iter().map(|c| c.tokens.clone()), 10_000).unwrap();
        let data = TrainingSet::build(&caps, &feats, &vocab).unwrap();
        (vocab, data)
    }

    fn small_config() -> TrainConfig {
        TrainConfig {
            hidden_dim: 16,
            embed_dim: 8,
            batch_size: 4,
            epochs: 2,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn missing_feature_names_image() {
        let (caps, _) = synth_corpus(5, 2, SynthSpec::default());
        let vocab = Vocabulary::build(caps.iter().map(|c| c.tokens.clone()), 100).unwrap();
        let empty = FeatureStore::new(SynthSpec::default().feature_dim());
        let err = TrainingSet::build(&caps, &empty, &vocab).unwrap_err();
        assert!(
            matches!(err, Error::Data(ref m) if m.contains("synth_00000")),
            "{err}"
        );
    }

    #[test]
    fn overfits_single_pair() {
        let (caps, feats) = synth_corpus(5, 1, SynthSpec::default());
        let vocab = Vocabulary::build(caps.iter().map(|c| c.tokens.clone()), 100).unwrap();
        let data = TrainingSet::build(&caps[..1], &feats, &vocab).unwrap();
        let config = TrainConfig {
            epochs: 200,
            batch_size: 1,
            lr: 1e-2,
            freeze_embeddings: false,
            ..small_config()
        };
        let mut model = init_model(vocab.len(), data.feature_dim(), &config, None).unwrap();
        let log = train(&mut model, &data, &config).unwrap();
        assert_eq!(log.steps, 200);
        let (f, ids) = data.example(0);
        let final_loss = model.caption_loss(f, ids).unwrap() / ids.len() as f64;
        assert!(final_loss < 0.1, "{final_loss}");
    }

    #[test]
    fn deterministic_and_thread_reproducible() {
        let (vocab, data) = toy(6);
        let config = TrainConfig {
            d_t: 0.3,
            ..small_config()
        };
        let run = |c: &TrainConfig| {
            let mut m = init_model(vocab.len(), data.feature_dim(), c, None).unwrap();
            let log = train(&mut m, &data, c).unwrap();
            (m, log)
        };
        let (m1, l1) = run(&config);
        let (m2, l2) = run(&config);
        assert_eq!(l1, l2);
        let bits = |m: &CaptionModel| m.flatten().iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&m1), bits(&m2));

        let threaded = TrainConfig {
            threads: 3,
            ..config.clone()
        };
        let (m3, l3) = run(&threaded);
        let (m4, _) = run(&threaded);
        assert_eq!(bits(&m3), bits(&m4));
        for (a, b) in l1.step_losses.iter().zip(&l3.step_losses) {
            assert!((a - b).abs() < 1e-9 * a.abs().max(1.0));
        }
    }

    #[test]
    fn zero_learning_rate_changes_nothing() {
        let (vocab, data) = toy(4);
        let config = TrainConfig {
            lr: 0.0,
            freeze_embeddings: false,
            ..small_config()
        };
        let mut m = init_model(vocab.len(), data.feature_dim(), &config, None).unwrap();
        let before = m.clone();
        train(&mut m, &data, &config).unwrap();
        assert_eq!(m, before);
    }

    #[test]
    fn frozen_embeddings_stay_bit_identical() {
        let (vocab, data) = toy(4);
        let config = TrainConfig {
            lr: 1e-2,
            freeze_embeddings: true,
            ..small_config()
        };
        let mut m = init_model(vocab.len(), data.feature_dim(), &config, None).unwrap();
        let emb = m.embedding.clone();
        let w_out = m.w_out.clone();
        train(&mut m, &data, &config).unwrap();
        assert_eq!(m.embedding, emb);
        assert_ne!(m.w_out, w_out);
    }

    #[test]
    fn initial_loss_near_uniform() {
        let (vocab, data) = toy(20);
        let config = TrainConfig {
            hidden_dim: 64,
            embed_dim: 32,
            ..TrainConfig::default()
        };
        let m = init_model(vocab.len(), data.feature_dim(), &config, None).unwrap();
        let mut total = 0.0;
        let mut tokens = 0;
        for (f, ids) in data.iter() {
            total += m.caption_loss(f, ids).unwrap();
            tokens += ids.len();
        }
        let per_token = total / tokens as f64;
        let uniform = (vocab.len() as f64).ln();
        assert!(
            (per_token - uniform).abs() < 0.05 * uniform,
            "{per_token} vs {uniform}"
        );
    }

    #[test]
    fn full_batch_loss_decreases() {
        let (vocab, data) = toy(4);
        let config = TrainConfig {
            batch_size: data.len(),
            epochs: 50,
            lr: 1e-2,
            ..small_config()
        };
        let mut m = init_model(vocab.len(), data.feature_dim(), &config, None).unwrap();
        let log = train(&mut m, &data, &config).unwrap();
        assert_eq!(log.step_losses.len(), 50);
        for w in log.step_losses.windows(2) {
            assert!(w[1] < w[0], "{:?}", log.step_losses);
        }
    }

    #[test]
    fn max_steps_and_clip() {
        let (vocab, data) = toy(4);
        let config = TrainConfig {
            max_steps: Some(3),
            clip_norm: Some(DEFAULT_CLIP_NORM),
            epochs: 100,
            ..small_config()
        };
        let mut m = init_model(vocab.len(), data.feature_dim(), &config, None).unwrap();
        let log = train(&mut m, &data, &config).unwrap();
        assert_eq!(log.steps, 3);
        assert_eq!(log.epoch_losses.len(), 1);
    }

    #[test]
    fn clipping_bounds_norm() {
        let (vocab, data) = toy(2);
        let m = init_model(vocab.len(), data.feature_dim(), &small_config(), None).unwrap();
        let mut g = m.zeros_like();
        g.b_out.iter_mut().for_each(|v| *v = 10.0);
        scale_and_clip(&mut g, 1.0, Some(1.0));
        let norm: f64 = g.b_out.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-12);
    }

    #[test]
    fn invalid_config() {
        let (vocab, data) = toy(2);
        let mut m = init_model(vocab.len(), data.feature_dim(), &small_config(), None).unwrap();
        for bad in [
            TrainConfig {
                d_t: 0.96,
                ..small_config()
            },
            TrainConfig {
                batch_size: 0,
                ..small_config()
            },
            TrainConfig {
                epochs: 0,
                ..small_config()
            },
            TrainConfig {
                threads: 0,
                ..small_config()
            },
        ] {
            assert!(matches!(
                train(&mut m, &data, &bad),
                Err(Error::Parameter(_))
            ));
        }
    }
}
