//! Contextual text: hashing tokenizer, a small self-attention encoder and a
//! deterministic sentence embedder used for text similarity.

use crate::autodiff::{Graph, Var};
use crate::config::ModelConfig;
use crate::nn::{self, Init};
use crate::tensor::Mat;

/// 64-bit FNV-1a.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= *b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

/// Lowercased whitespace tokens.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace().map(str::to_lowercase).collect()
}

/// Hashed vocabulary ids, truncated to `max_tokens`.
pub fn token_ids(text: &str, vocab_size: usize, max_tokens: usize) -> Vec<usize> {
    tokenize(text)
        .iter()
        .take(max_tokens)
        .map(|t| (fnv1a(t.as_bytes()) % vocab_size as u64) as usize)
        .collect()
}

/// Output of the contextual encoder.
#[derive(Debug, Clone, PartialEq)]
pub struct TextEmbedding {
    pub vector: Vec<f64>,
    pub present: bool,
}

pub(crate) fn register(init: &mut Init, cfg: &ModelConfig) {
    let d = cfg.dim;
    init.weight("text.tok_emb", cfg.vocab_size, d);
    init.weight("text.pos_emb", cfg.max_tokens, d);
    for l in 0..cfg.text_layers {
        init.encoder_layer(&format!("text.layer{l}"), d, 2 * d);
    }
    init.linear("text.mlp1", d, d, true);
    init.linear("text.mlp2", d, d, true);
}

/// `MLP(mean_l TRM(E_w + E_pos))` on the graph; `None` for empty text.
pub fn encode_text(g: &mut Graph, cfg: &ModelConfig, text: &str) -> Option<Var> {
    let ids = token_ids(text, cfg.vocab_size, cfg.max_tokens);
    if ids.is_empty() {
        return None;
    }
    let l = ids.len();
    let store = g.store();
    let tok = g.param_rows(store.id("text.tok_emb").expect("text params"), &ids);
    let positions: Vec<usize> = (0..l).collect();
    let pos = g.param_rows(store.id("text.pos_emb").expect("text params"), &positions);
    let mut x = g.add(tok, pos);
    let mask = vec![true; l];
    for layer in 0..cfg.text_layers {
        x = nn::encoder_layer(g, &format!("text.layer{layer}"), x, cfg.text_heads, &mask, false);
    }
    let pool = g.input(Mat::filled(1, l, 1.0 / l as f64));
    let pooled = g.matmul(pool, x);
    let h = nn::dense(g, "text.mlp1", pooled, true);
    let h = g.gelu(h);
    Some(nn::dense(g, "text.mlp2", h, true))
}

/// Maps text to a fixed vector for cosine similarity.
pub trait SentenceEmbedder: Send + Sync {
    fn embed(&self, text: &str) -> Vec<f64>;
}

/// Bag of hashed unigrams and bigrams, L2-normalised. Punctuation is
/// stripped so clause wording dominates.
#[derive(Debug, Clone)]
pub struct HashingSentenceEmbedder {
    pub dim: usize,
}

impl Default for HashingSentenceEmbedder {
    fn default() -> Self {
        Self { dim: 1024 }
    }
}

impl SentenceEmbedder for HashingSentenceEmbedder {
    fn embed(&self, text: &str) -> Vec<f64> {
        let words: Vec<String> = text
            .split(|c: char| !c.is_alphanumeric() && c != '\'')
            .filter(|w| !w.is_empty())
            .map(str::to_lowercase)
            .collect();
        let mut v = vec![0.0; self.dim];
        for w in &words {
            v[(fnv1a(w.as_bytes()) % self.dim as u64) as usize] += 1.0;
        }
        for pair in words.windows(2) {
            let bigram = format!("{} {}", pair[0], pair[1]);
            v[(fnv1a(bigram.as_bytes()) % self.dim as u64) as usize] += 1.0;
        }
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 0.0 {
            v.iter_mut().for_each(|x| *x /= n);
        }
        v
    }
}

/// Cosine similarity; zero when either vector is zero.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    (crate::tensor::dot(a, b) / (na * nb)).clamp(-1.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::ParamStore;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn store(cfg: &ModelConfig) -> ParamStore {
        let mut s = ParamStore::default();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        register(&mut Init { store: &mut s, rng: &mut rng }, cfg);
        s
    }

    fn embed(s: &ParamStore, cfg: &ModelConfig, text: &str) -> Option<Vec<f64>> {
        let mut g = Graph::new(s);
        encode_text(&mut g, cfg, text).map(|v| g.value(v).data.clone())
    }

    #[test]
    fn tokenizer_lowercases_and_hashes() {
        assert_eq!(tokenize("The  Speaker\tTalks"), vec!["the", "speaker", "talks"]);
        let a = token_ids("Hello hello", 4096, 64);
        assert_eq!(a[0], a[1]);
        assert!(a[0] < 4096);
        assert_eq!(token_ids(&"x ".repeat(100), 4096, 64).len(), 64);
        // FNV-1a reference value for "a"
        assert_eq!(fnv1a(b"a"), 0xaf63dc4c8601ec8c);
    }

    #[test]
    fn empty_text_is_absent_and_texts_are_deterministic() {
        let cfg = ModelConfig::toy(8);
        let s = store(&cfg);
        assert!(embed(&s, &cfg, "   ").is_none());
        let a = embed(&s, &cfg, "a teacher lectures the class").unwrap();
        assert_eq!(a, embed(&s, &cfg, "a teacher lectures the class").unwrap());
        assert_ne!(a, embed(&s, &cfg, "a teacher lectures the room").unwrap());
        assert!(a.iter().all(|v| v.is_finite()));
        assert_eq!(a.len(), 8);
    }

    #[test]
    fn hashing_embedder_similarity() {
        let e = HashingSentenceEmbedder::default();
        let a = e.embed("The person holds central prominence.");
        assert!((cosine(&a, &e.embed("the person holds central prominence")) - 1.0).abs() < 1e-12);
        assert!(cosine(&a, &e.embed("zebra quartz")) < 1e-12);
        assert_eq!(cosine(&a, &e.embed("")), 0.0);
    }
}
