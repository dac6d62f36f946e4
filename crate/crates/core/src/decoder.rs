//! Image-conditioned GRU caption decoder.
//!
//! The image feature sets the initial hidden state through a linear layer
//! followed by `tanh`. Each step feeds the embedding of the previous token
//! (a learned start token first), applies the GRU with hidden-state dropout,
//! and projects the emitted state onto the vocabulary.

use crate::corpus::embeddings::RANDOM_ROW_BOUND;
use crate::corpus::vocab::{END_ID, NUM_SPECIALS, START_ID};
use crate::error::{Error, Result};
use crate::nn::gru::{check_dropout, gru_backprop, gru_step, gru_step_clean, GruCache, GruParams};
use crate::nn::linalg::{add_assign, log_softmax, mat_vec_acc, outer_acc, vec_mat_acc};
use crate::nn::{grad_check, Matrix, RngStream, Vector};

pub const DEFAULT_MAX_LEN: usize = 20;
pub const DEFAULT_HIDDEN_DIM: usize = 256;
pub const DEFAULT_EMBED_DIM: usize = 300;

/// Finite-difference step for whole-model gradient checks. Smaller steps
/// let roundoff in the summed loss swamp coordinates whose gradient is
/// around 1e-7.
pub const MODEL_GRADCHECK_EPS: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelDims {
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub feature_dim: usize,
    pub hidden_dim: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CaptionModel {
    pub dims: ModelDims,
    /// `vocab_size × embed_dim`
    pub embedding: Matrix,
    /// `feature_dim × hidden_dim`
    pub w_img: Matrix,
    pub b_img: Vector,
    pub gru: GruParams,
    /// `hidden_dim × vocab_size`
    pub w_out: Matrix,
    pub b_out: Vector,
    pub embeddings_frozen: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenerationResult {
    /// Generated words, end marker excluded.
    pub token_ids: Vec<usize>,
    pub exceeded_limit: bool,
    /// Log-probability of the chosen token at every step, end marker
    /// included when emitted.
    pub per_step_log_probs: Vec<f64>,
}

impl CaptionModel {
    pub fn zeros(dims: ModelDims) -> Self {
        CaptionModel {
            dims,
            embedding: Matrix::zeros(dims.vocab_size, dims.embed_dim),
            w_img: Matrix::zeros(dims.feature_dim, dims.hidden_dim),
            b_img: Vector::zeros(dims.hidden_dim),
            gru: GruParams::zeros(dims.embed_dim, dims.hidden_dim),
            w_out: Matrix::zeros(dims.hidden_dim, dims.vocab_size),
            b_out: Vector::zeros(dims.vocab_size),
            embeddings_frozen: false,
        }
    }

    /// Fan-in uniform weights, zero biases, embeddings in `U[-0.1, 0.1]`.
    pub fn init(dims: ModelDims, rng: &mut RngStream) -> Self {
        let mut emb_rng = rng.split();
        let embedding = Matrix::from_vec(
            dims.vocab_size,
            dims.embed_dim,
            (0..dims.vocab_size * dims.embed_dim)
                .map(|_| emb_rng.uniform(-RANDOM_ROW_BOUND, RANDOM_ROW_BOUND))
                .collect(),
        )
        .expect("sized above");
        CaptionModel {
            dims,
            embedding,
            w_img: Matrix::fan_in_uniform(dims.feature_dim, dims.hidden_dim, rng),
            b_img: Vector::zeros(dims.hidden_dim),
            gru: GruParams::init(dims.embed_dim, dims.hidden_dim, rng),
            w_out: Matrix::fan_in_uniform(dims.hidden_dim, dims.vocab_size, rng),
            b_out: Vector::zeros(dims.vocab_size),
            embeddings_frozen: false,
        }
    }

    /// Zeroed copy used as a gradient buffer.
    pub fn zeros_like(&self) -> Self {
        let mut z = CaptionModel::zeros(self.dims);
        z.embeddings_frozen = self.embeddings_frozen;
        z
    }

    pub fn set_embeddings(&mut self, table: Matrix) -> Result<()> {
        if table.shape() != self.embedding.shape() {
            return Err(Error::shape(
                "set_embeddings",
                format!(
                    "table is {:?}, model expects {:?}",
                    table.shape(),
                    self.embedding.shape()
                ),
            ));
        }
        self.embedding = table;
        Ok(())
    }

    /// Every learnable tensor in a fixed order, with its shape.
    pub fn tensors(&self) -> Vec<(&'static str, Vec<usize>, &[f64])> {
        let d = self.dims;
        let (e, h) = (d.embed_dim, d.hidden_dim);
        let mut out: Vec<(&'static str, Vec<usize>, &[f64])> = vec![
            ("embedding", vec![d.vocab_size, e], self.embedding.data()),
            ("w_img", vec![d.feature_dim, h], self.w_img.data()),
            ("b_img", vec![h], &self.b_img),
        ];
        for (name, data) in self.gru.tensors() {
            let shape = if name.starts_with("gru.u_") {
                vec![e, h]
            } else if name.starts_with("gru.w_") {
                vec![h, h]
            } else {
                vec![h]
            };
            out.push((name, shape, data));
        }
        out.push(("w_out", vec![h, d.vocab_size], self.w_out.data()));
        out.push(("b_out", vec![d.vocab_size], &self.b_out));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<(&'static str, &mut [f64])> {
        let mut out: Vec<(&'static str, &mut [f64])> = vec![
            ("embedding", self.embedding.data_mut()),
            ("w_img", self.w_img.data_mut()),
            ("b_img", &mut self.b_img),
        ];
        out.extend(self.gru.tensors_mut());
        out.push(("w_out", self.w_out.data_mut()));
        out.push(("b_out", &mut self.b_out));
        out
    }

    pub fn param_count(&self) -> usize {
        self.tensors().iter().map(|(_, _, t)| t.len()).sum()
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.tensors()
            .iter()
            .flat_map(|(_, _, t)| t.iter().copied())
            .collect()
    }

    pub fn unflatten(&mut self, theta: &[f64]) -> Result<()> {
        if theta.len() != self.param_count() {
            return Err(Error::shape(
                "unflatten",
                format!(
                    "{} values for {} parameters",
                    theta.len(),
                    self.param_count()
                ),
            ));
        }
        let mut off = 0;
        for (_, t) in self.tensors_mut() {
            let n = t.len();
            t.copy_from_slice(&theta[off..off + n]);
            off += n;
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.tensors()
            .iter()
            .all(|(_, _, t)| t.iter().all(|v| v.is_finite()))
    }

    fn check_feature(&self, feature: &[f64]) -> Result<()> {
        if feature.len() != self.dims.feature_dim {
            return Err(Error::shape(
                "init_hidden",
                format!(
                    "feature has dim {} but model expects {}",
                    feature.len(),
                    self.dims.feature_dim
                ),
            ));
        }
        Ok(())
    }

    pub fn init_hidden(&self, feature: &[f64]) -> Result<Vector> {
        self.check_feature(feature)?;
        let mut pre = self.b_img.clone();
        vec_mat_acc(feature, &self.w_img, &mut pre);
        pre.iter_mut().for_each(|v| *v = v.tanh());
        Ok(pre)
    }

    fn logits(&self, h: &[f64]) -> Vector {
        let mut out = self.b_out.clone();
        vec_mat_acc(h, &self.w_out, &mut out);
        out
    }

    fn check_caption(&self, caption_ids: &[usize]) -> Result<()> {
        match caption_ids.last() {
            None => return Err(Error::Input("empty caption".into())),
            Some(&last) if last != END_ID => {
                return Err(Error::Input("caption must end with the end marker".into()))
            }
            _ => {}
        }
        if let Some(&bad) = caption_ids.iter().find(|&&id| id >= self.dims.vocab_size) {
            return Err(Error::Vocabulary(format!(
                "token id {bad} out of range for vocabulary of {}",
                self.dims.vocab_size
            )));
        }
        Ok(())
    }

    /// Summed cross entropy of `caption_ids` under teacher forcing, with
    /// gradients for all parameters added into `grads`. Returns
    /// `(loss, predicted token count)`. Embedding gradients are skipped
    /// when the embeddings are frozen.
    pub fn accumulate_gradients(
        &self,
        feature: &[f64],
        caption_ids: &[usize],
        d_t: f64,
        rng: &mut RngStream,
        grads: &mut CaptionModel,
    ) -> Result<(f64, usize)> {
        check_dropout(d_t)?;
        self.check_caption(caption_ids)?;
        if grads.dims != self.dims {
            return Err(Error::Contract(
                "gradient buffer dims differ from model".into(),
            ));
        }
        let h0 = self.init_hidden(feature)?;
        let n = caption_ids.len();
        let v = self.dims.vocab_size;

        let mut cache = GruCache::default();
        let mut upstream = Vec::with_capacity(n);
        let mut h = h0.clone();
        let mut loss = 0.0;
        let mut input = START_ID;
        for &target in caption_ids {
            let (next, step) = gru_step(self.embedding.row(input), &h, &self.gru, d_t, rng)?;
            let logp = log_softmax(&self.logits(&next));
            loss -= logp[target];

            let mut dlogits: Vec<f64> = logp.iter().map(|l| l.exp()).collect();
            dlogits[target] -= 1.0;
            debug_assert_eq!(dlogits.len(), v);
            outer_acc(&mut grads.w_out, &next, &dlogits);
            add_assign(&mut grads.b_out, &dlogits);
            let mut dh = Vector::zeros(self.dims.hidden_dim);
            mat_vec_acc(&self.w_out, &dlogits, &mut dh);
            upstream.push(dh);

            cache.steps.push(step);
            h = next;
            input = target;
        }

        let (dx, dh0) = gru_backprop(&cache, &upstream, &self.gru, &mut grads.gru)?;
        if !self.embeddings_frozen {
            let inputs = std::iter::once(START_ID).chain(caption_ids[..n - 1].iter().copied());
            for (tok, d) in inputs.zip(&dx) {
                add_assign(grads.embedding.row_mut(tok), d);
            }
        }
        let dpre: Vec<f64> = dh0
            .iter()
            .zip(h0.iter())
            .map(|(g, y)| g * (1.0 - y * y))
            .collect();
        outer_acc(&mut grads.w_img, feature, &dpre);
        add_assign(&mut grads.b_img, &dpre);
        Ok((loss, n))
    }

    /// Teacher-forced summed cross entropy and its gradients.
    pub fn teacher_forced_loss(
        &self,
        feature: &[f64],
        caption_ids: &[usize],
        d_t: f64,
        rng: &mut RngStream,
    ) -> Result<(f64, CaptionModel)> {
        let mut grads = self.zeros_like();
        let (loss, _) = self.accumulate_gradients(feature, caption_ids, d_t, rng, &mut grads)?;
        Ok((loss, grads))
    }

    /// Forward-only summed cross entropy with no dropout.
    pub fn caption_loss(&self, feature: &[f64], caption_ids: &[usize]) -> Result<f64> {
        self.check_caption(caption_ids)?;
        let mut h = self.init_hidden(feature)?;
        let mut input = START_ID;
        let mut loss = 0.0;
        for &target in caption_ids {
            h = gru_step_clean(self.embedding.row(input), &h, &self.gru)?;
            loss -= log_softmax(&self.logits(&h))[target];
            input = target;
        }
        Ok(loss)
    }

    /// `exp(total cross entropy / total predicted tokens)` without dropout.
    pub fn perplexity<'a, I>(&self, corpus: I) -> Result<f64>
    where
        I: IntoIterator<Item = (&'a [f64], &'a [usize])>,
    {
        let mut total = 0.0;
        let mut tokens = 0usize;
        for (feature, ids) in corpus {
            total += self.caption_loss(feature, ids)?;
            tokens += ids.len();
        }
        if tokens == 0 {
            return Err(Error::Input("perplexity of an empty corpus".into()));
        }
        Ok((total / tokens as f64).exp())
    }

    fn decode_with<F>(
        &self,
        feature: &[f64],
        max_len: usize,
        mut step: F,
    ) -> Result<GenerationResult>
    where
        F: FnMut(&[f64], &[f64]) -> Result<Vector>,
    {
        let mut h = self.init_hidden(feature)?;
        let mut input = START_ID;
        let mut token_ids = Vec::new();
        let mut log_probs = Vec::new();
        for _ in 0..max_len {
            h = step(self.embedding.row(input), &h)?;
            let mut logits = self.logits(&h);
            for (id, l) in logits.iter_mut().enumerate().take(NUM_SPECIALS) {
                if id != END_ID {
                    *l = f64::NEG_INFINITY;
                }
            }
            if !logits.iter().all(|l| !l.is_nan()) {
                return Err(Error::Numerical("NaN logits during generation".into()));
            }
            let best = argmax(&logits);
            log_probs.push(log_softmax(&logits)[best]);
            if best == END_ID {
                return Ok(GenerationResult {
                    token_ids,
                    exceeded_limit: false,
                    per_step_log_probs: log_probs,
                });
            }
            token_ids.push(best);
            input = best;
        }
        Ok(GenerationResult {
            token_ids,
            exceeded_limit: true,
            per_step_log_probs: log_probs,
        })
    }

    /// Greedy decoding with hidden-state dropout `d_e` active at every step.
    /// Special tokens other than the end marker can never be emitted.
    pub fn greedy_generate(
        &self,
        feature: &[f64],
        d_e: f64,
        rng: &mut RngStream,
        max_len: usize,
    ) -> Result<GenerationResult> {
        check_dropout(d_e)?;
        self.decode_with(feature, max_len, |x, h| {
            gru_step(x, h, &self.gru, d_e, rng).map(|(h, _)| h)
        })
    }

    /// Greedy decoding through a GRU path that has no dropout stage.
    pub fn greedy_generate_clean(
        &self,
        feature: &[f64],
        max_len: usize,
    ) -> Result<GenerationResult> {
        self.decode_with(feature, max_len, |x, h| gru_step_clean(x, h, &self.gru))
    }
}

/// Worst relative error between backpropagated and central-difference
/// gradients over every parameter of a small random model on one random
/// (feature, caption) pair. Dropout masks at `d_t` are replayed from a fixed
/// stream so the loss is a deterministic function of the parameters.
pub fn model_gradcheck(vocab_size: usize, hidden_dim: usize, d_t: f64, seed: u64) -> Result<f64> {
    check_dropout(d_t)?;
    if vocab_size <= NUM_SPECIALS || hidden_dim == 0 {
        return Err(Error::Parameter(format!(
            "gradcheck needs more than {NUM_SPECIALS} vocabulary entries and a hidden layer"
        )));
    }
    let dims = ModelDims {
        vocab_size,
        embed_dim: 6,
        feature_dim: 5,
        hidden_dim,
    };
    let mut rng = RngStream::derive(seed, &[0x6C4E]);
    let mut model = CaptionModel::init(dims, &mut rng);
    for b in [
        &mut model.b_img,
        &mut model.b_out,
        &mut model.gru.b_r,
        &mut model.gru.b_z,
        &mut model.gru.b_h,
    ] {
        b.iter_mut().for_each(|v| *v = rng.uniform(-0.3, 0.3));
    }
    let feature: Vec<f64> = (0..dims.feature_dim)
        .map(|_| rng.uniform(-1.0, 1.0))
        .collect();
    let mut caption: Vec<usize> = (0..6)
        .map(|_| NUM_SPECIALS + rng.below((vocab_size - NUM_SPECIALS) as u64) as usize)
        .collect();
    caption.push(END_ID);

    let mask_seed = rng.next_u64();
    let loss_at = |m: &CaptionModel| -> Result<f64> {
        let mut sink = m.zeros_like();
        let mut masks = RngStream::new(mask_seed);
        Ok(
            m.accumulate_gradients(&feature, &caption, d_t, &mut masks, &mut sink)?
                .0,
        )
    };
    let (_, grads) =
        model.teacher_forced_loss(&feature, &caption, d_t, &mut RngStream::new(mask_seed))?;
    let mut probe = model.clone();
    grad_check(
        |theta| {
            probe.unflatten(theta)?;
            loss_at(&probe)
        },
        &model.flatten(),
        &grads.flatten(),
        MODEL_GRADCHECK_EPS,
    )
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}
