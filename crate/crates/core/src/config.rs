//! Model, inference and training hyperparameters.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cues::action::ActionProviderKind;
use crate::error::{Result, VipError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Fusion {
    #[default]
    Transformer,
    Mlp,
    Gated,
    None,
}

impl Fusion {
    pub fn parse(s: &str) -> Option<Fusion> {
        match s {
            "transformer" => Some(Fusion::Transformer),
            "mlp" => Some(Fusion::Mlp),
            "gated" => Some(Fusion::Gated),
            "none" => Some(Fusion::None),
            _ => None,
        }
    }
}

/// How the lip aperture sequence is formed from the anchors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LipMode {
    /// `|p_upper − p_lower|` within each frame.
    #[default]
    Aperture,
    /// Change of that aperture between consecutive frames.
    InterFrame,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub dim: usize,
    pub heads: usize,
    pub text_layers: usize,
    pub text_heads: usize,
    pub vocab_size: usize,
    pub max_tokens: usize,
    pub relate_layers: usize,
    pub lip_dim: usize,
    /// Longest clip (in frames) the learned lip decay covers.
    pub max_frames: usize,
    pub fusion: Fusion,
    pub lip_mode: LipMode,
    pub lip_scale: f64,
    pub lip_eps: f64,
    pub action_provider: ActionProviderKind,
    pub action_block: usize,
    pub action_crop: usize,
    pub face_fallback: f64,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            dim: 64,
            heads: 4,
            text_layers: 2,
            text_heads: 4,
            vocab_size: 4096,
            max_tokens: 64,
            relate_layers: 1,
            lip_dim: 16,
            max_frames: 300,
            fusion: Fusion::Transformer,
            lip_mode: LipMode::Aperture,
            lip_scale: 20.0,
            lip_eps: 1e-6,
            action_provider: ActionProviderKind::MotionEnergy,
            action_block: 8,
            action_crop: 16,
            face_fallback: 0.3,
            seed: 0,
        }
    }
}

impl ModelConfig {
    /// The small configuration used by gradient checks.
    pub fn toy(dim: usize) -> Self {
        Self { dim, heads: 2, text_heads: 2, text_layers: 1, vocab_size: 64, max_tokens: 16, lip_dim: 4, max_frames: 32, ..Self::default() }
    }

    pub fn check(&self) -> Result<()> {
        let bad = |m: String| Err(VipError::Config(m));
        if self.dim == 0 || self.heads == 0 || !self.dim.is_multiple_of(self.heads) {
            return bad(format!("dim {} must be a positive multiple of heads {}", self.dim, self.heads));
        }
        if self.text_heads == 0 || !self.dim.is_multiple_of(self.text_heads) {
            return bad(format!("dim {} must be a multiple of text_heads {}", self.dim, self.text_heads));
        }
        if self.vocab_size == 0 || self.max_tokens == 0 || self.lip_dim == 0 || self.max_frames == 0 {
            return bad("vocab_size, max_tokens, lip_dim and max_frames must be positive".into());
        }
        if self.action_block == 0 || self.action_crop < 3 {
            return bad("action_block must be positive and action_crop at least 3".into());
        }
        if !(0.0..=1.0).contains(&self.face_fallback) || self.face_fallback == 0.0 {
            return bad(format!("face_fallback {} outside (0, 1]", self.face_fallback));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InferenceConfig {
    /// Classification temperature τ_c.
    pub tau_c: f64,
    /// Rationale retention threshold τ_m.
    pub tau_m: f64,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        Self { tau_c: 0.07, tau_m: 0.7 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub base_lr: f64,
    pub weight_decay: f64,
    pub warmup_epochs: usize,
    pub seed: u64,
    pub lambda_text: f64,
    pub lambda_cont: f64,
    pub lambda_reg: f64,
    /// Contrastive temperature, distinct from τ_c.
    pub tau_cont: f64,
    pub tau_c: f64,
    pub tau_m: f64,
    /// Largest temporal shift of the second (augmented) view, in frames.
    pub jitter: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: 16,
            base_lr: 5e-5,
            weight_decay: 1e-4,
            warmup_epochs: 5,
            seed: 0,
            lambda_text: 0.5,
            lambda_cont: 0.3,
            lambda_reg: 0.0005,
            tau_cont: 0.1,
            tau_c: 0.07,
            tau_m: 0.7,
            jitter: 3,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
        }
    }
}

impl TrainConfig {
    pub fn check(&self) -> Result<()> {
        let bad = |m: String| Err(VipError::Config(m));
        if self.epochs == 0 || self.batch_size == 0 {
            return bad("epochs and batch_size must be positive".into());
        }
        if !(self.base_lr > 0.0 && self.base_lr.is_finite()) {
            return bad(format!("base_lr {} must be positive", self.base_lr));
        }
        for (n, v) in [
            ("weight_decay", self.weight_decay),
            ("lambda_text", self.lambda_text),
            ("lambda_cont", self.lambda_cont),
            ("lambda_reg", self.lambda_reg),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{n} {v} must be finite and >= 0"));
            }
        }
        if !(self.tau_cont > 0.0 && self.tau_c > 0.0) {
            return bad("temperatures must be positive".into());
        }
        Ok(())
    }
}

/// Hex SHA-256 of the canonical JSON of a serialisable config. Object keys
/// are sorted so the digest does not depend on field order.
pub fn fingerprint<T: Serialize>(value: &T) -> String {
    let v = serde_json::to_value(value).expect("config serialises");
    let canonical = serde_json::to_string(&sort_keys(v)).expect("json value serialises");
    hex::encode(Sha256::digest(canonical.as_bytes()))
}

fn sort_keys(v: serde_json::Value) -> serde_json::Value {
    use serde_json::Value;
    match v {
        Value::Object(m) => {
            let sorted: std::collections::BTreeMap<String, Value> = m.into_iter().map(|(k, v)| (k, sort_keys(v))).collect();
            Value::Object(sorted.into_iter().collect())
        }
        Value::Array(a) => Value::Array(a.into_iter().map(sort_keys).collect()),
        other => other,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_protocol() {
        let t = TrainConfig::default();
        assert_eq!((t.epochs, t.batch_size, t.warmup_epochs), (50, 16, 5));
        assert_eq!((t.base_lr, t.weight_decay), (5e-5, 1e-4));
        assert_eq!((t.lambda_text, t.lambda_cont, t.lambda_reg), (0.5, 0.3, 0.0005));
        let m = ModelConfig::default();
        assert_eq!((m.dim, m.heads, m.text_layers, m.vocab_size, m.action_block), (64, 4, 2, 4096, 8));
        m.check().unwrap();
        ModelConfig::toy(8).check().unwrap();
    }

    #[test]
    fn fingerprint_ignores_key_order_and_tracks_values() {
        let a = serde_json::json!({"b": 1, "a": {"y": 2, "x": 3}});
        let b = serde_json::json!({"a": {"x": 3, "y": 2}, "b": 1});
        assert_eq!(fingerprint(&a), fingerprint(&b));
        let mut c = TrainConfig::default();
        let f0 = fingerprint(&c);
        c.seed = 1;
        assert_ne!(f0, fingerprint(&c));
        assert_eq!(f0.len(), 64);
    }
}
