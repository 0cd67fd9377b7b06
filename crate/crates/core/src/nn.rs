//! Attention and transformer building blocks on top of the autodiff graph.

use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Graph, Var};
use crate::params::{init_uniform, ParamStore};
use crate::tensor::Mat;

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Registers parameters with seeded scaled-uniform initialisation.
pub struct Init<'a> {
    pub store: &'a mut ParamStore,
    pub rng: &'a mut ChaCha8Rng,
}

impl Init<'_> {
    pub fn weight(&mut self, name: &str, rows: usize, cols: usize) {
        let m = init_uniform(self.rng, rows, cols, rows);
        self.store.insert(name, m);
    }

    pub fn zeros(&mut self, name: &str, rows: usize, cols: usize) {
        self.store.insert(name, Mat::zeros(rows, cols));
    }

    pub fn filled(&mut self, name: &str, rows: usize, cols: usize, v: f64) {
        self.store.insert(name, Mat::filled(rows, cols, v));
    }

    pub fn linear(&mut self, prefix: &str, d_in: usize, d_out: usize, bias: bool) {
        self.weight(&format!("{prefix}.w"), d_in, d_out);
        if bias {
            self.zeros(&format!("{prefix}.b"), 1, d_out);
        }
    }

    pub fn layer_norm(&mut self, prefix: &str, d: usize) {
        self.filled(&format!("{prefix}.g"), 1, d, 1.0);
        self.zeros(&format!("{prefix}.b"), 1, d);
    }

    pub fn attention(&mut self, prefix: &str, d: usize, bias: bool) {
        for p in ["q", "k", "v", "o"] {
            self.linear(&format!("{prefix}.{p}"), d, d, bias);
        }
    }

    pub fn encoder_layer(&mut self, prefix: &str, d: usize, ff: usize) {
        self.attention(&format!("{prefix}.attn"), d, true);
        self.layer_norm(&format!("{prefix}.ln1"), d);
        self.linear(&format!("{prefix}.ff1"), d, ff, true);
        self.linear(&format!("{prefix}.ff2"), ff, d, true);
        self.layer_norm(&format!("{prefix}.ln2"), d);
    }
}

/// `x·W (+ b)` using the `{prefix}.w` / `{prefix}.b` convention.
pub fn dense(g: &mut Graph, prefix: &str, x: Var, bias: bool) -> Var {
    let w = format!("{prefix}.w");
    if bias {
        let b = format!("{prefix}.b");
        g.linear(x, &w, Some(&b))
    } else {
        g.linear(x, &w, None)
    }
}

pub fn layer_norm_affine(g: &mut Graph, prefix: &str, x: Var) -> Var {
    let n = g.layer_norm(x, LAYER_NORM_EPS);
    let gain = g.param_named(&format!("{prefix}.g"));
    let bias = g.param_named(&format!("{prefix}.b"));
    let y = g.mul_row(n, gain);
    g.add_row(y, bias)
}

/// Scaled dot-product attention split over `heads` column blocks. Keys with
/// `key_mask = false` get exactly zero weight. Returns the concatenated head
/// outputs and the attention map of every head.
pub fn attend(
    g: &mut Graph,
    q: Var,
    k: Var,
    v: Var,
    heads: usize,
    key_mask: &[bool],
    order_free: bool,
) -> (Var, Vec<Var>) {
    let d = g.value(q).cols;
    assert!(heads >= 1 && d.is_multiple_of(heads), "model width {d} not divisible by {heads} heads");
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut outs = Vec::with_capacity(heads);
    let mut maps = Vec::with_capacity(heads);
    for h in 0..heads {
        let (qh, kh, vh) = if heads == 1 {
            (q, k, v)
        } else {
            (g.slice_cols(q, h * dh, dh), g.slice_cols(k, h * dh, dh), g.slice_cols(v, h * dh, dh))
        };
        let s = g.matmul_t(qh, kh);
        let s = g.scale(s, scale);
        let a = if order_free { g.masked_softmax_order_free(s, key_mask) } else { g.masked_softmax(s, key_mask) };
        let o = if order_free { g.matmul_order_free(a, vh) } else { g.matmul(a, vh) };
        outs.push(o);
        maps.push(a);
    }
    let out = if heads == 1 { outs[0] } else { g.concat_cols(&outs) };
    (out, maps)
}

/// Multi-head attention with projections `{prefix}.{q,k,v,o}`.
#[allow(clippy::too_many_arguments)]
pub fn multi_head(
    g: &mut Graph,
    prefix: &str,
    x_q: Var,
    x_kv: Var,
    heads: usize,
    key_mask: &[bool],
    bias: bool,
    order_free: bool,
) -> (Var, Vec<Var>) {
    let q = dense(g, &format!("{prefix}.q"), x_q, bias);
    let k = dense(g, &format!("{prefix}.k"), x_kv, bias);
    let v = dense(g, &format!("{prefix}.v"), x_kv, bias);
    let (o, maps) = attend(g, q, k, v, heads, key_mask, order_free);
    (dense(g, &format!("{prefix}.o"), o, bias), maps)
}

/// Post-norm transformer encoder layer: self-attention and a GELU
/// feed-forward block, each with a residual connection.
pub fn encoder_layer(g: &mut Graph, prefix: &str, x: Var, heads: usize, mask: &[bool], order_free: bool) -> Var {
    let (a, _) = multi_head(g, &format!("{prefix}.attn"), x, x, heads, mask, true, order_free);
    let r = g.add(x, a);
    let h = layer_norm_affine(g, &format!("{prefix}.ln1"), r);
    let f = dense(g, &format!("{prefix}.ff1"), h, true);
    let f = g.gelu(f);
    let f = dense(g, &format!("{prefix}.ff2"), f, true);
    let r = g.add(h, f);
    layer_norm_affine(g, &format!("{prefix}.ln2"), r)
}

/// Sinusoidal position table, `len × d`.
pub fn sinusoidal_positions(len: usize, d: usize) -> Mat {
    let mut m = Mat::zeros(len, d);
    for t in 0..len {
        for i in 0..d {
            let rate = 1.0 / 10000f64.powf((2 * (i / 2)) as f64 / d as f64);
            let a = t as f64 * rate;
            m.set(t, i, if i % 2 == 0 { a.sin() } else { a.cos() });
        }
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn masked_key_columns_are_exactly_zero() {
        let mut store = ParamStore::default();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        Init { store: &mut store, rng: &mut rng }.attention("a", 8, false);
        let mut g = Graph::new(&store);
        let x = g.input(init_uniform(&mut rng, 5, 8, 1));
        let mask = [true, false, true, true, false];
        let (_, maps) = multi_head(&mut g, "a", x, x, 2, &mask, false, false);
        for m in maps {
            let m = g.value(m);
            for r in 0..5 {
                assert_eq!(m.get(r, 1), 0.0);
                assert_eq!(m.get(r, 4), 0.0);
                let s: f64 = m.row(r).iter().sum();
                assert!((s - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn positions_start_at_sin_zero() {
        let p = sinusoidal_positions(3, 4);
        assert_eq!(p.row(0), &[0.0, 1.0, 0.0, 1.0]);
        assert!((p.get(1, 0) - 1f64.sin()).abs() < 1e-15);
    }
}
