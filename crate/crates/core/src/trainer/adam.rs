use serde::{Deserialize, Serialize};

use crate::decoder::CaptionModel;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lr.is_finite()
            && self.lr >= 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps.is_finite()
            && self.eps > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Parameter(format!("invalid Adam settings {self:?}")))
        }
    }
}

/// First and second moment buffers, one per model tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(model: &CaptionModel, config: AdamConfig) -> Result<Self> {
        config.validate()?;
        let zeros: Vec<Vec<f64>> = model
            .tensors()
            .iter()
            .map(|(_, _, t)| vec![0.0; t.len()])
            .collect();
        Ok(AdamState {
            config,
            t: 0,
            m: zeros.clone(),
            v: zeros,
        })
    }
}

/// One bias-corrected Adam update. Every gradient is checked before any
/// parameter changes; a non-finite entry aborts with the tensor's name.
/// Frozen embeddings are left untouched.
pub fn adam_step(
    model: &mut CaptionModel,
    grads: &CaptionModel,
    state: &mut AdamState,
) -> Result<()> {
    if grads.dims != model.dims {
        return Err(Error::Contract("gradient dims differ from model".into()));
    }
    let grad_tensors = grads.tensors();
    if grad_tensors.len() != state.m.len() {
        return Err(Error::Contract(
            "optimizer state does not match model".into(),
        ));
    }
    for (name, _, g) in &grad_tensors {
        if let Some(i) = g.iter().position(|x| !x.is_finite()) {
            return Err(Error::Numerical(format!(
                "non-finite gradient in {name} at index {i}"
            )));
        }
    }

    state.t += 1;
    let AdamConfig {
        lr,
        beta1,
        beta2,
        eps,
    } = state.config;
    let bc1 = 1.0 - beta1.powi(state.t.min(i32::MAX as u64) as i32);
    let bc2 = 1.0 - beta2.powi(state.t.min(i32::MAX as u64) as i32);
    let frozen = model.embeddings_frozen;

    for (k, (name, params)) in model.tensors_mut().into_iter().enumerate() {
        if frozen && name == "embedding" {
            continue;
        }
        let g = grad_tensors[k].2;
        let (m, v) = (&mut state.m[k], &mut state.v[k]);
        for i in 0..params.len() {
            m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
            v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            params[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decoder::ModelDims;
    use crate::nn::RngStream;

    fn model() -> CaptionModel {
        let dims = ModelDims {
            vocab_size: 6,
            embed_dim: 3,
            feature_dim: 2,
            hidden_dim: 4,
        };
        CaptionModel::init(dims, &mut RngStream::new(1))
    }

    fn filled(m: &CaptionModel, value: f64) -> CaptionModel {
        let mut g = m.zeros_like();
        for (_, t) in g.tensors_mut() {
            t.fill(value);
        }
        g
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut m = model();
        let before = m.clone();
        let mut s = AdamState::new(&m, AdamConfig::default()).unwrap();
        let g = m.zeros_like();
        adam_step(&mut m, &g, &mut s).unwrap();
        assert_eq!(s.t, 1);
        assert_eq!(m, before);
    }

    #[test]
    fn first_step_of_unit_gradient() {
        // m̂ = 1, v̂ = 1 → Δ = −lr / (1 + ε)
        let mut m = model();
        let before = m.flatten();
        let mut s = AdamState::new(&m, AdamConfig::default()).unwrap();
        let g = filled(&m, 1.0);
        adam_step(&mut m, &g, &mut s).unwrap();
        let expected = -1e-3 / (1.0 + 1e-8);
        for (a, b) in m.flatten().iter().zip(&before) {
            assert!(((a - b) - expected).abs() < 1e-15);
        }
        assert!((expected + 9.9999999e-4).abs() < 1e-12);
    }

    #[test]
    fn equal_histories_give_equal_updates() {
        let mut m = filled(&model(), 0.25);
        let mut s = AdamState::new(&m, AdamConfig::default()).unwrap();
        for step in 0..5 {
            let g = filled(&m, 0.3 * step as f64 - 0.5);
            adam_step(&mut m, &g, &mut s).unwrap();
        }
        let after = m.flatten();
        assert_ne!(after[0], 0.25);
        assert!(after.iter().all(|p| *p == after[0]));
    }

    #[test]
    fn non_finite_gradient_names_tensor() {
        let mut m = model();
        let before = m.clone();
        let mut s = AdamState::new(&m, AdamConfig::default()).unwrap();
        let mut g = m.zeros_like();
        g.gru.b_z[1] = f64::NAN;
        let err = adam_step(&mut m, &g, &mut s).unwrap_err();
        assert!(
            matches!(err, Error::Numerical(ref msg) if msg.contains("gru.b_z")),
            "{err}"
        );
        assert_eq!(m, before);
        assert_eq!(s.t, 0);
    }

    #[test]
    fn frozen_embedding_untouched() {
        let mut m = model();
        m.embeddings_frozen = true;
        let emb = m.embedding.clone();
        let mut s = AdamState::new(&m, AdamConfig::default()).unwrap();
        let g = filled(&m, 1.0);
        adam_step(&mut m, &g, &mut s).unwrap();
        assert_eq!(m.embedding, emb);
    }

    #[test]
    fn rejects_bad_settings() {
        let m = model();
        let bad = AdamConfig {
            lr: -1.0,
            ..AdamConfig::default()
        };
        assert!(AdamState::new(&m, bad).is_err());
        let bad = AdamConfig {
            beta2: 1.0,
            ..AdamConfig::default()
        };
        assert!(AdamState::new(&m, bad).is_err());
    }
}
