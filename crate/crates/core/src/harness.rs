//! The dropout sweep: train once per training dropout rate, then generate
//! and score the validation images at every inference dropout rate.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::corpus::vocab::MAX_CONTENT_WORDS;
use crate::corpus::{
    group_references, load_captions, load_embeddings, split_by_image, synth_corpus, CaptionRecord,
    FeatureStore, SynthSpec, Vocabulary,
};
use crate::decoder::{CaptionModel, DEFAULT_MAX_LEN};
use crate::error::{Error, Result};
use crate::metrics::{score_captions, GeneratedCaption, MetricsReport, CSV_HEADER};
use crate::nn::gru::check_dropout;
use crate::nn::{RngStream, Vector};
use crate::trainer::{init_model, save_checkpoint, train, TrainConfig, TrainLog, TrainingSet};

pub const SAMPLE_COUNT: usize = 10;
pub const TRUNCATION_MARKER: &str = " ...";

/// Where the sweep's captions and features come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    /// The built-in toy corpus. Validation images are generated after the
    /// training images, so the two sets never share an id.
    Synthetic {
        seed: u64,
        train_images: usize,
        val_images: usize,
    },
    /// Caption JSON-lines and an IMFT feature file. The first
    /// `train_images` distinct images train the model, the rest validate.
    Files {
        captions: PathBuf,
        features: PathBuf,
        train_images: usize,
        vocab: Option<PathBuf>,
        embeddings: Option<PathBuf>,
    },
}

impl Default for DataSource {
    fn default() -> Self {
        DataSource::Synthetic {
            seed: 7,
            train_images: 400,
            val_images: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub d_t: Vec<f64>,
    pub d_e: Vec<f64>,
    pub seeds_per_cell: usize,
    pub generation_seed: u64,
    pub max_len: usize,
    /// Save one checkpoint per training dropout rate in the output directory.
    pub save_checkpoints: bool,
    pub data: DataSource,
    pub train: TrainConfig,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            d_t: vec![0.0, 0.2],
            d_e: vec![0.0, 0.2, 0.4, 0.6, 0.8],
            seeds_per_cell: 3,
            generation_seed: 2024,
            max_len: DEFAULT_MAX_LEN,
            save_checkpoints: false,
            data: DataSource::default(),
            train: TrainConfig {
                hidden_dim: 64,
                embed_dim: 32,
                batch_size: 32,
                epochs: 30,
                lr: 1e-2,
                freeze_embeddings: false,
                ..TrainConfig::default()
            },
        }
    }
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_t.is_empty() || self.d_e.is_empty() {
            return Err(Error::Parameter(
                "d_t and d_e grids must be non-empty".into(),
            ));
        }
        for &p in self.d_t.iter().chain(&self.d_e) {
            check_dropout(p)?;
        }
        if self.seeds_per_cell == 0 {
            return Err(Error::Parameter("seeds_per_cell must be >= 1".into()));
        }
        if self.max_len == 0 {
            return Err(Error::Parameter("max_len must be >= 1".into()));
        }
        self.train.validate()
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let config: SweepConfig =
            toml::from_str(text).map_err(|e| Error::Parameter(format!("sweep config: {e}")))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always representable")
    }
}

/// Validation images with their features and references.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalSet {
    pub image_ids: Vec<String>,
    pub features: Vec<Vector>,
    pub references: IndexMap<String, Vec<Vec<String>>>,
}

impl EvalSet {
    pub fn build(records: &[CaptionRecord], features: &FeatureStore) -> Result<Self> {
        let references = group_references(records);
        if references.is_empty() {
            return Err(Error::Input("validation set is empty".into()));
        }
        let mut feats = Vec::with_capacity(references.len());
        for id in references.keys() {
            feats.push(
                features
                    .get(id)
                    .ok_or_else(|| Error::Data(format!("no feature vector for image {id:?}")))?,
            );
        }
        Ok(EvalSet {
            image_ids: references.keys().cloned().collect(),
            features: feats,
            references,
        })
    }

    pub fn len(&self) -> usize {
        self.image_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.image_ids.is_empty()
    }
}

/// Everything a sweep needs: the vocabulary, the training pairs, the
/// validation set, and optional pretrained embeddings.
#[derive(Debug, Clone)]
pub struct SweepData {
    pub vocab: Vocabulary,
    pub train: TrainingSet,
    pub eval: EvalSet,
    pub embeddings: Option<crate::nn::Matrix>,
}

impl SweepData {
    /// Splits `records` by image, builds the vocabulary from the training
    /// side unless one is given, and checks the split is disjoint.
    pub fn from_records(
        records: &[CaptionRecord],
        features: &FeatureStore,
        train_images: usize,
        vocab: Option<Vocabulary>,
    ) -> Result<Self> {
        let (train_recs, val_recs) = split_by_image(records, train_images);
        if train_recs.is_empty() || val_recs.is_empty() {
            return Err(Error::Input(format!(
                "split at {train_images} images leaves an empty training or validation side"
            )));
        }
        let vocab = match vocab {
            Some(v) => v,
            None => Vocabulary::build(
                train_recs.iter().map(|r| r.tokens.clone()),
                MAX_CONTENT_WORDS,
            )?,
        };
        let train = TrainingSet::build(&train_recs, features, &vocab)?;
        let eval = EvalSet::build(&val_recs, features)?;
        if let Some(id) = eval
            .image_ids
            .iter()
            .find(|id| train.image_ids().contains(id))
        {
            return Err(Error::Data(format!("image {id:?} is in both splits")));
        }
        Ok(SweepData {
            vocab,
            train,
            eval,
            embeddings: None,
        })
    }

    pub fn load(source: &DataSource, embed_dim: usize, seed: u64) -> Result<Self> {
        match source {
            DataSource::Synthetic {
                seed: data_seed,
                train_images,
                val_images,
            } => {
                let (records, features) =
                    synth_corpus(*data_seed, train_images + val_images, SynthSpec::default());
                Self::from_records(&records, &features, *train_images, None)
            }
            DataSource::Files {
                captions,
                features,
                train_images,
                vocab,
                embeddings,
            } => {
                let records = load_captions(captions)?;
                let features = FeatureStore::load(features)?;
                let vocab = vocab.as_deref().map(Vocabulary::load).transpose()?;
                let mut data = Self::from_records(&records, &features, *train_images, vocab)?;
                if let Some(path) = embeddings {
                    data.embeddings =
                        Some(load_embeddings(path, &data.vocab, embed_dim, seed)?.matrix);
                }
                Ok(data)
            }
        }
    }
}

fn cell_stream(base: u64, d_t: f64, d_e: f64, repeat: usize) -> RngStream {
    RngStream::derive(base, &[d_t.to_bits(), d_e.to_bits(), repeat as u64])
}

/// Generates one caption per validation image per seed (pooled) at
/// inference dropout `d_e` and scores them. Captions come back in
/// (seed, image) order.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_cell(
    model: &CaptionModel,
    vocab: &Vocabulary,
    eval: &EvalSet,
    d_t: f64,
    d_e: f64,
    seeds: usize,
    base_seed: u64,
    max_len: usize,
) -> Result<(MetricsReport, Vec<GeneratedCaption>)> {
    if eval.is_empty() {
        return Err(Error::Input("validation set is empty".into()));
    }
    if model.dims.vocab_size != vocab.len() {
        return Err(Error::Incompatible(format!(
            "model has {} vocabulary entries, vocabulary has {}",
            model.dims.vocab_size,
            vocab.len()
        )));
    }
    let mut generated = Vec::with_capacity(seeds * eval.len());
    for repeat in 0..seeds {
        let mut rng = cell_stream(base_seed, d_t, d_e, repeat);
        for (id, feature) in eval.image_ids.iter().zip(&eval.features) {
            let result = model.greedy_generate(feature, d_e, &mut rng, max_len)?;
            generated.push(GeneratedCaption {
                image_id: id.clone(),
                tokens: vocab.decode(&result.token_ids)?,
                exceeded: result.exceeded_limit,
            });
        }
    }
    let report = score_captions(&generated, &eval.references, vocab, d_t, d_e)?;
    Ok((report, generated))
}

/// One line per caption: `image_id<TAB>caption`, with the truncation
/// marker appended when the length limit was hit.
pub fn format_samples(generated: &[GeneratedCaption], k: usize) -> String {
    let mut out = String::new();
    for g in generated.iter().take(k) {
        let marker = if g.exceeded { TRUNCATION_MARKER } else { "" };
        let _ = writeln!(out, "{}\t{}{}", g.image_id, g.tokens.join(" "), marker);
    }
    out
}

pub fn sample_file_name(d_t: f64, d_e: f64) -> String {
    format!("{d_t:.2}_{d_e:.2}.txt")
}

pub fn report_csv(rows: &[MetricsReport]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&r.csv_row());
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepOutcome {
    pub rows: Vec<MetricsReport>,
    /// Training log per training dropout rate, in grid order.
    pub train_logs: Vec<TrainLog>,
}

fn write(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

/// Runs the full grid and writes `report.csv`, `samples/<d_t>_<d_e>.txt`,
/// `train_log.csv` and the effective `config.toml` into `out_dir`.
pub fn run_sweep(config: &SweepConfig, data: &SweepData, out_dir: &Path) -> Result<SweepOutcome> {
    config.validate()?;
    let samples_dir = out_dir.join("samples");
    fs::create_dir_all(&samples_dir)
        .map_err(|e| Error::io(format!("creating {}", samples_dir.display()), e))?;
    write(&out_dir.join("config.toml"), &config.to_toml())?;

    let mut rows = Vec::with_capacity(config.d_t.len() * config.d_e.len());
    let mut logs = Vec::with_capacity(config.d_t.len());
    let mut log_csv = String::from("d_t,epoch,mean_token_loss\n");
    for &d_t in &config.d_t {
        let train_config = TrainConfig {
            d_t,
            ..config.train.clone()
        };
        let cell_err = |e: Error| match e {
            Error::Numerical(m) => Error::Numerical(format!("training at d_t={d_t}: {m}")),
            other => other,
        };
        let mut model = init_model(
            data.vocab.len(),
            data.train.feature_dim(),
            &train_config,
            data.embeddings.clone(),
        )?;
        let log = train(&mut model, &data.train, &train_config).map_err(cell_err)?;
        for (epoch, loss) in log.epoch_losses.iter().enumerate() {
            let _ = writeln!(log_csv, "{d_t:.2},{},{loss:.6}", epoch + 1);
        }
        if config.save_checkpoints {
            let path = out_dir.join(format!("model_{d_t:.2}.ndcp"));
            save_checkpoint(&path, &model, d_t, &data.vocab)?;
        }
        for &d_e in &config.d_e {
            let (row, generated) = evaluate_cell(
                &model,
                &data.vocab,
                &data.eval,
                d_t,
                d_e,
                config.seeds_per_cell,
                config.generation_seed,
                config.max_len,
            )?;
            write(
                &samples_dir.join(sample_file_name(d_t, d_e)),
                &format_samples(&generated, SAMPLE_COUNT),
            )?;
            rows.push(row);
        }
        logs.push(log);
    }
    write(&out_dir.join("train_log.csv"), &log_csv)?;
    write(&out_dir.join("report.csv"), &report_csv(&rows))?;
    Ok(SweepOutcome {
        rows,
        train_logs: logs,
    })
}
