//! Temporal importance rectifier: intra-personal gated fusion, text gating,
//! masked spatial–temporal cross-attention, energy-based temporal pooling
//! and relational encoding across persons.

use crate::autodiff::{Graph, Var};
use crate::config::{Fusion, ModelConfig};
use crate::cues::Modality;
use crate::nn::{self, Init};
use crate::tensor::Mat;

pub(crate) fn register(init: &mut Init, cfg: &ModelConfig) {
    let d = cfg.dim;
    init.linear("intra.v", d, d, true);
    init.weight("intra.q_spatial", 1, d);
    init.weight("intra.q_temporal", 1, d);
    init.linear("gate.mlp1", d, d, true);
    init.linear("gate.mlp2", d, d, true);
    match cfg.fusion {
        Fusion::Transformer => {
            init.attention("align.attn", d, false);
            init.layer_norm("align.ln", d);
        }
        Fusion::Mlp => {
            init.linear("fuse.mlp1", 2 * d, d, true);
            init.linear("fuse.mlp2", d, d, true);
            init.layer_norm("fuse.ln", d);
        }
        Fusion::Gated => init.linear("fuse.gate", 2 * d, d, true),
        Fusion::None => {}
    }
    init.linear("pool.p", d, d, true);
    init.weight("pool.q", 1, d);
    for l in 0..cfg.relate_layers {
        init.encoder_layer(&format!("relate.layer{l}"), d, 2 * d);
    }
}

fn query_name(m: Modality) -> &'static str {
    match m {
        Modality::Spatial => "intra.q_spatial",
        Modality::Temporal => "intra.q_temporal",
    }
}

/// `Σ_k σ(((X_k W_v + b_v) q_mᵀ)/√D) ⊙ X_k` for one person. Returns the
/// fused `T × D` features and the `T × 1` gate of every sub-cue.
pub fn intra_fuse(g: &mut Graph, modality: Modality, xs: &[Var]) -> (Var, Vec<Var>) {
    let q = g.param_named(query_name(modality));
    let d = g.value(q).cols;
    let scale = 1.0 / (d as f64).sqrt();
    let mut gates = Vec::with_capacity(xs.len());
    let mut acc: Option<Var> = None;
    for &x in xs {
        let v = nn::dense(g, "intra.v", x, true);
        let e = g.matmul_t(v, q);
        let e = g.scale(e, scale);
        let a = g.sigmoid(e);
        let y = g.mul_col(x, a);
        acc = Some(match acc {
            Some(s) => g.add(s, y),
            None => y,
        });
        gates.push(a);
    }
    (acc.expect("at least one sub-cue"), gates)
}

/// `Γ = σ(MLP(F_text))`, a `1 × D` gate shared by every person and frame.
pub fn text_gate(g: &mut Graph, f_text: Var) -> Var {
    let h = nn::dense(g, "gate.mlp1", f_text, true);
    let h = g.gelu(h);
    let h = nn::dense(g, "gate.mlp2", h, true);
    g.sigmoid(h)
}

/// `F ⊙ Γ` broadcast over frames; without text the input is returned as is.
pub fn semantic_gate(g: &mut Graph, f: Var, gamma: Option<Var>) -> Var {
    match gamma {
        Some(gm) => g.mul_row(f, gm),
        None => f,
    }
}

/// Spatial–temporal alignment of one person. The transformer variant uses
/// spatial queries against temporal keys and values with invalid frames
/// masked on the key side, a spatial residual and layer normalisation.
/// Returns the aligned features and, for the transformer variant, one
/// attention map per head.
pub fn align(g: &mut Graph, cfg: &ModelConfig, fs: Var, ft: Var, frame_valid: &[bool]) -> (Var, Vec<Var>) {
    match cfg.fusion {
        Fusion::Transformer => {
            let (o, maps) = nn::multi_head(g, "align.attn", fs, ft, cfg.heads, frame_valid, false, false);
            let r = g.add(fs, o);
            (nn::layer_norm_affine(g, "align.ln", r), maps)
        }
        Fusion::Mlp => {
            let cat = g.concat_cols(&[fs, ft]);
            let h = nn::dense(g, "fuse.mlp1", cat, true);
            let h = g.gelu(h);
            let h = nn::dense(g, "fuse.mlp2", h, true);
            let r = g.add(fs, h);
            (nn::layer_norm_affine(g, "fuse.ln", r), vec![])
        }
        Fusion::Gated => {
            let cat = g.concat_cols(&[fs, ft]);
            let z = nn::dense(g, "fuse.gate", cat, true);
            let z = g.sigmoid(z);
            let y = g.mul(z, ft);
            (g.add(fs, y), vec![])
        }
        Fusion::None => (g.add(fs, ft), vec![]),
    }
}

/// Softmax over valid frames of `e_t = (F_t W_p + b_p) q_pᵀ`, then the
/// weighted sum of frames. Returns `(F_person 1 × D, weights 1 × T)`.
pub fn temporal_pool(g: &mut Graph, f: Var, frame_valid: &[bool]) -> (Var, Var) {
    let p = nn::dense(g, "pool.p", f, true);
    let q = g.param_named("pool.q");
    let e = g.matmul_t(p, q);
    let e = g.transpose(e);
    let w = g.masked_softmax(e, frame_valid);
    (g.matmul(w, f), w)
}

/// Self-attention encoder over person tokens. Invalid persons are masked as
/// keys and their output rows are zeroed. Reductions over the person axis do
/// not depend on person order, so the map is exactly permutation-equivariant.
pub fn relate(g: &mut Graph, cfg: &ModelConfig, rows: &[Var], person_valid: &[bool]) -> Var {
    let mut x = g.concat_rows(rows);
    for l in 0..cfg.relate_layers {
        x = nn::encoder_layer(g, &format!("relate.layer{l}"), x, cfg.heads, person_valid, true);
    }
    let m = g.input(crate::cues::mask_col(person_valid));
    g.mul_col(x, m)
}

/// Per-person intermediate results of one rectifier pass.
#[derive(Debug, Clone)]
pub struct PersonTrace {
    pub fused_spatial: Var,
    pub fused_temporal: Var,
    pub gates_spatial: Vec<Var>,
    pub gates_temporal: Vec<Var>,
    pub aligned: Var,
    pub attention: Vec<Var>,
    pub pool_weights: Var,
}

#[derive(Debug, Clone)]
pub struct RectifierOutput {
    /// `N × D` relation-enhanced embeddings.
    pub h: Var,
    /// Pooled `1 × D` embedding per person (zeros for invalid persons).
    pub f_person: Vec<Var>,
    /// `None` for invalid persons.
    pub traces: Vec<Option<PersonTrace>>,
}

/// Full rectifier over lifted spatial (`K_s = 3`) and temporal (`K_t = 2`)
/// cue embeddings, indexed `[person][sub-cue]`.
pub fn rectify(
    g: &mut Graph,
    cfg: &ModelConfig,
    spatial: &[Vec<Var>],
    temporal: &[Vec<Var>],
    frame_valid: &[Vec<bool>],
    f_text: Option<Var>,
) -> RectifierOutput {
    let n = spatial.len();
    let gamma = f_text.map(|t| text_gate(g, t));
    let person_valid: Vec<bool> = frame_valid.iter().map(|f| f.iter().any(|v| *v)).collect();
    let mut f_person = Vec::with_capacity(n);
    let mut traces = Vec::with_capacity(n);
    for i in 0..n {
        if !person_valid[i] {
            f_person.push(g.input(Mat::zeros(1, cfg.dim)));
            traces.push(None);
            continue;
        }
        let (fs, gs) = intra_fuse(g, Modality::Spatial, &spatial[i]);
        let (ft, gt) = intra_fuse(g, Modality::Temporal, &temporal[i]);
        let fs = semantic_gate(g, fs, gamma);
        let ft = semantic_gate(g, ft, gamma);
        let (al, maps) = align(g, cfg, fs, ft, &frame_valid[i]);
        let (fp, w) = temporal_pool(g, al, &frame_valid[i]);
        f_person.push(fp);
        traces.push(Some(PersonTrace {
            fused_spatial: fs,
            fused_temporal: ft,
            gates_spatial: gs,
            gates_temporal: gt,
            aligned: al,
            attention: maps,
            pool_weights: w,
        }));
    }
    let h = relate(g, cfg, &f_person, &person_valid);
    RectifierOutput { h, f_person, traces }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::{init_uniform, ParamStore};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn setup(cfg: &ModelConfig, seed: u64) -> ParamStore {
        let mut s = ParamStore::default();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        register(&mut Init { store: &mut s, rng: &mut rng }, cfg);
        s
    }

    fn rand_mat(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Mat {
        init_uniform(rng, r, c, 1)
    }

    fn sigmoid(x: f64) -> f64 {
        1.0 / (1.0 + (-x).exp())
    }

    #[test]
    fn intra_fuse_matches_loop_oracle() {
        let cfg = ModelConfig::toy(4);
        let s = setup(&cfg, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let xs: Vec<Mat> = (0..3).map(|_| rand_mat(&mut rng, 5, 4)).collect();
        let mut g = Graph::new(&s);
        let vars: Vec<Var> = xs.iter().map(|m| g.input(m.clone())).collect();
        let (f, _) = intra_fuse(&mut g, Modality::Spatial, &vars);
        let (wv, bv, q) = (s.get("intra.v.w").unwrap(), s.get("intra.v.b").unwrap(), s.get("intra.q_spatial").unwrap());
        for t in 0..5 {
            for j in 0..4 {
                let mut expect = 0.0;
                for x in &xs {
                    let mut e = 0.0;
                    for c in 0..4 {
                        let mut v = bv.get(0, c);
                        for r in 0..4 {
                            v += x.get(t, r) * wv.get(r, c);
                        }
                        e += v * q.get(0, c);
                    }
                    expect += sigmoid(e / 2.0) * x.get(t, j);
                }
                assert!((g.value(f).get(t, j) - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn intra_fuse_zero_and_saturated_gate() {
        let cfg = ModelConfig::toy(4);
        let mut s = setup(&cfg, 1);
        let mut g = Graph::new(&s);
        let z = g.input(Mat::zeros(3, 4));
        let (f, _) = intra_fuse(&mut g, Modality::Temporal, &[z, z]);
        assert!(g.value(f).data.iter().all(|v| *v == 0.0));
        drop(g);
        // gate forced open: bias +20 along q
        *s.get_mut("intra.v.w").unwrap() = Mat::zeros(4, 4);
        *s.get_mut("intra.v.b").unwrap() = Mat::filled(1, 4, 20.0);
        *s.get_mut("intra.q_temporal").unwrap() = Mat::filled(1, 4, 1.0);
        let mut g = Graph::new(&s);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let xm = rand_mat(&mut rng, 3, 4);
        let x = g.input(xm.clone());
        let (f, _) = intra_fuse(&mut g, Modality::Temporal, &[x]);
        for (a, b) in g.value(f).data.iter().zip(&xm.data) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn semantic_gate_identity_and_saturation() {
        let cfg = ModelConfig::toy(4);
        let mut s = setup(&cfg, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let fm = rand_mat(&mut rng, 6, 4);
        let mut g = Graph::new(&s);
        let f = g.input(fm.clone());
        let out = semantic_gate(&mut g, f, None);
        assert_eq!(g.value(out), &fm);
        drop(g);
        *s.get_mut("gate.mlp2.b").unwrap() = Mat::filled(1, 4, -20.0);
        *s.get_mut("gate.mlp2.w").unwrap() = Mat::zeros(4, 4);
        let mut g = Graph::new(&s);
        let f = g.input(fm);
        let t = g.input(rand_mat(&mut rng, 1, 4));
        let gm = text_gate(&mut g, t);
        let out = semantic_gate(&mut g, f, Some(gm));
        assert!(g.value(out).max_abs() < 1e-6);
    }

    #[test]
    fn align_single_frame_and_masked_column() {
        let cfg = ModelConfig { heads: 2, ..ModelConfig::toy(4) };
        let s = setup(&cfg, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut g = Graph::new(&s);
        let a = g.input(rand_mat(&mut rng, 1, 4));
        let b = g.input(rand_mat(&mut rng, 1, 4));
        let (_, maps) = align(&mut g, &cfg, a, b, &[true]);
        for m in &maps {
            assert_eq!(g.value(*m).data, vec![1.0]);
        }
        let a = g.input(rand_mat(&mut rng, 4, 4));
        let b = g.input(rand_mat(&mut rng, 4, 4));
        let (out, maps) = align(&mut g, &cfg, a, b, &[true, true, false, true]);
        assert!(g.value(out).all_finite());
        for m in &maps {
            assert!((0..4).all(|r| g.value(*m).get(r, 2) == 0.0));
        }
    }

    #[test]
    fn align_matches_closed_form_two_frame_attention() {
        let cfg = ModelConfig { heads: 1, ..ModelConfig::toy(2) };
        let mut s = setup(&cfg, 4);
        for p in ["q", "k", "v", "o"] {
            *s.get_mut(&format!("align.attn.{p}.w")).unwrap() = Mat::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]);
        }
        let mut g = Graph::new(&s);
        let fs = g.input(Mat::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]));
        let ft = g.input(Mat::from_rows(&[vec![2.0, 0.0], vec![0.0, 1.0]]));
        let (out, maps) = align(&mut g, &cfg, fs, ft, &[true, true]);
        // row 0: scores (2, 0)/√2
        let s0 = 2.0 / 2f64.sqrt();
        let w = [s0.exp() / (s0.exp() + 1.0), 1.0 / (s0.exp() + 1.0)];
        let m = g.value(maps[0]);
        assert!((m.get(0, 0) - w[0]).abs() < 1e-12 && (m.get(0, 1) - w[1]).abs() < 1e-12);
        // residual + attention, then layer norm over two entries gives ±1 scaled
        let r = [1.0 + 2.0 * w[0], w[1]];
        let mean = (r[0] + r[1]) / 2.0;
        let var = ((r[0] - mean).powi(2) + (r[1] - mean).powi(2)) / 2.0;
        let expect0 = (r[0] - mean) / (var + 1e-5).sqrt();
        assert!((g.value(out).get(0, 0) - expect0).abs() < 1e-9);
    }

    #[test]
    fn pooling_hand_cases() {
        let cfg = ModelConfig::toy(2);
        let mut s = setup(&cfg, 4);
        *s.get_mut("pool.p.w").unwrap() = Mat::from_rows(&[vec![1.0, 0.0], vec![0.0, 0.0]]);
        *s.get_mut("pool.q").unwrap() = Mat::row_vec(&[1.0, 0.0]);
        let mut g = Graph::new(&s);
        // energies equal the first column
        let f = g.input(Mat::from_rows(&[vec![2f64.ln(), 3.0], vec![0.0, 6.0]]));
        let (fp, w) = temporal_pool(&mut g, f, &[true, true]);
        assert!((g.value(w).get(0, 0) - 2.0 / 3.0).abs() < 1e-12);
        assert!((g.value(fp).get(0, 1) - (2.0 / 3.0 * 3.0 + 1.0 / 3.0 * 6.0)).abs() < 1e-12);
        let f1 = g.input(Mat::row_vec(&[0.4, -0.2]));
        let (fp1, _) = temporal_pool(&mut g, f1, &[true]);
        assert_eq!(g.value(fp1).data, vec![0.4, -0.2]);
        let eq = g.input(Mat::from_rows(&[vec![0.5, 1.0], vec![0.5, 3.0], vec![0.5, 8.0]]));
        let (fpe, _) = temporal_pool(&mut g, eq, &[true; 3]);
        assert!((g.value(fpe).get(0, 1) - 4.0).abs() < 1e-12);
    }

    #[test]
    fn relate_single_head_matches_naive_oracle() {
        let cfg = ModelConfig { heads: 1, relate_layers: 1, ..ModelConfig::toy(2) };
        let s = setup(&cfg, 8);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let rows: Vec<Mat> = (0..2).map(|_| rand_mat(&mut rng, 1, 2)).collect();
        let mut g = Graph::new(&s);
        let vars: Vec<Var> = rows.iter().map(|r| g.input(r.clone())).collect();
        let h = relate(&mut g, &cfg, &vars, &[true, true]);
        let p = |n: &str| s.get(&format!("relate.layer0.{n}")).unwrap().clone();
        let affine = |x: &[f64], w: &Mat, b: &Mat| -> Vec<f64> {
            (0..w.cols).map(|c| b.get(0, c) + (0..x.len()).map(|r| x[r] * w.get(r, c)).sum::<f64>()).collect()
        };
        let ln = |x: &[f64], gname: &str, bname: &str| -> Vec<f64> {
            let n = x.len() as f64;
            let m = x.iter().sum::<f64>() / n;
            let v = x.iter().map(|a| (a - m) * (a - m)).sum::<f64>() / n;
            let (gg, bb) = (p(gname), p(bname));
            x.iter().enumerate().map(|(i, a)| (a - m) / (v + 1e-5).sqrt() * gg.get(0, i) + bb.get(0, i)).collect()
        };
        let xs: Vec<Vec<f64>> = rows.iter().map(|r| r.data.clone()).collect();
        let q: Vec<Vec<f64>> = xs.iter().map(|x| affine(x, &p("attn.q.w"), &p("attn.q.b"))).collect();
        let k: Vec<Vec<f64>> = xs.iter().map(|x| affine(x, &p("attn.k.w"), &p("attn.k.b"))).collect();
        let v: Vec<Vec<f64>> = xs.iter().map(|x| affine(x, &p("attn.v.w"), &p("attn.v.b"))).collect();
        for i in 0..2 {
            let sc: Vec<f64> = (0..2).map(|j| (q[i][0] * k[j][0] + q[i][1] * k[j][1]) / 2f64.sqrt()).collect();
            let z: f64 = sc.iter().map(|x| x.exp()).sum();
            let att: Vec<f64> = (0..2).map(|c| (0..2).map(|j| sc[j].exp() / z * v[j][c]).sum()).collect();
            let o = affine(&att, &p("attn.o.w"), &p("attn.o.b"));
            let r1: Vec<f64> = xs[i].iter().zip(&o).map(|(a, b)| a + b).collect();
            let h1 = ln(&r1, "ln1.g", "ln1.b");
            let f: Vec<f64> = affine(&h1, &p("ff1.w"), &p("ff1.b")).into_iter().map(crate::autodiff::gelu).collect();
            let f = affine(&f, &p("ff2.w"), &p("ff2.b"));
            let r2: Vec<f64> = h1.iter().zip(&f).map(|(a, b)| a + b).collect();
            let out = ln(&r2, "ln2.g", "ln2.b");
            for c in 0..2 {
                assert!((g.value(h).get(i, c) - out[c]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn relate_is_permutation_equivariant_and_zeroes_invalid_rows() {
        let cfg = ModelConfig::toy(8);
        let s = setup(&cfg, 9);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let rows: Vec<Mat> = (0..4).map(|_| rand_mat(&mut rng, 1, 8)).collect();
        let valid = [true, false, true, true];
        let run = |order: &[usize]| {
            let mut g = Graph::new(&s);
            let vars: Vec<Var> = order.iter().map(|&i| g.input(rows[i].clone())).collect();
            let v: Vec<bool> = order.iter().map(|&i| valid[i]).collect();
            let h = relate(&mut g, &cfg, &vars, &v);
            g.value(h).clone()
        };
        let base = run(&[0, 1, 2, 3]);
        assert!(base.row(1).iter().all(|x| *x == 0.0));
        let perm = [3, 1, 0, 2];
        let p = run(&perm);
        for (new, &old) in perm.iter().enumerate() {
            assert_eq!(p.row(new), base.row(old));
        }
    }
}
