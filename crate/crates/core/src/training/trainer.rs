//! The optimisation loop, per-epoch metrics and the λ_cont sweep.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{InferenceConfig, ModelConfig, TrainConfig};
use crate::cues::text::HashingSentenceEmbedder;
use crate::data::{Clip, Split};
use crate::error::{Result, VipError};
use crate::inference::predict_features;
use crate::model::VipNet;

use super::loss::LossBreakdown;
use super::objective::{objective, view_len, Sample};
use super::optim::{lr_at, Adam};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub steps: usize,
    pub lr: f64,
    /// Step-averaged loss terms.
    pub loss: LossBreakdown,
    pub train_rank1: f64,
    pub val_rank1: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub net: VipNet,
    pub log: Vec<EpochMetrics>,
}

pub fn samples(clips: &[Clip], cfg: &ModelConfig) -> Result<Vec<Sample>> {
    clips.par_iter().map(|c| Sample::from_clip(c, cfg)).collect()
}

/// Train and validation samples by the clips' split labels.
pub fn split_samples(clips: &[Clip], cfg: &ModelConfig) -> Result<(Vec<Sample>, Vec<Sample>)> {
    let pick = |s: Split| clips.iter().filter(|c| c.split == s).cloned().collect::<Vec<_>>();
    Ok((samples(&pick(Split::Train), cfg)?, samples(&pick(Split::Val), cfg)?))
}

/// Fraction of samples whose top-ranked person is the true VIP.
pub fn rank1(net: &VipNet, set: &[Sample], tau_c: f64) -> Result<f64> {
    if set.is_empty() {
        return Err(VipError::Argument("empty evaluation set".into()));
    }
    let icfg = InferenceConfig { tau_c, ..InferenceConfig::default() };
    let hits: Vec<bool> = set
        .par_iter()
        .map(|s| predict_features(net, &s.features, &icfg).map(|r| r.vip_id == s.features.person_ids[s.vip]))
        .collect::<Result<_>>()?;
    Ok(hits.iter().filter(|h| **h).count() as f64 / set.len() as f64)
}

pub fn train(model: ModelConfig, train: &[Sample], val: &[Sample], cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.check()?;
    if train.is_empty() {
        return Err(VipError::Argument("training corpus is empty".into()));
    }
    let mut net = VipNet::new(model)?;
    let embedder = HashingSentenceEmbedder::default();
    let mut opt = Adam::new(&net.params, cfg.beta1, cfg.beta2, cfg.adam_eps, cfg.weight_decay);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let per_epoch = train.len().div_ceil(cfg.batch_size);
    let total = per_epoch * cfg.epochs;
    let warmup = per_epoch * cfg.warmup_epochs;
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut log = Vec::with_capacity(cfg.epochs);
    let mut step = 0;
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut acc = [0.0; 5];
        let mut weights = (0.0, 0.0, 0.0);
        let mut lr = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<Sample> = chunk.iter().map(|&i| train[i].clone()).collect();
            let offsets: Vec<usize> = batch
                .iter()
                .map(|s| {
                    let t = s.features.num_frames;
                    rng.random_range(0..=t - view_len(t, cfg.jitter))
                })
                .collect();
            lr = lr_at(step, total, warmup, cfg.base_lr);
            let (b, grads) = {
                let mut g = net.graph();
                let o = objective(&mut g, &net, &batch, &offsets, cfg, &embedder)?;
                let b = o.breakdown;
                if let Some((term, value)) = b.non_finite() {
                    return Err(VipError::NonFinite { term: term.into(), epoch, step, value });
                }
                (b, g.backward(o.total).params)
            };
            if let Some((id, _)) = grads.iter().find(|(_, m)| !m.all_finite()) {
                let value = grads[id].data.iter().copied().find(|x| !x.is_finite()).unwrap_or(f64::NAN);
                return Err(VipError::NonFinite { term: format!("grad:{}", net.params.name(*id)), epoch, step, value });
            }
            opt.step(&mut net.params, &grads, lr);
            for (a, v) in acc.iter_mut().zip([b.total, b.cls, b.text, b.cont, b.reg]) {
                *a += v;
            }
            weights = (b.lambda_text, b.lambda_cont, b.lambda_reg);
            step += 1;
        }
        let k = per_epoch as f64;
        let loss = LossBreakdown {
            total: acc[0] / k,
            cls: acc[1] / k,
            text: acc[2] / k,
            cont: acc[3] / k,
            reg: acc[4] / k,
            lambda_text: weights.0,
            lambda_cont: weights.1,
            lambda_reg: weights.2,
        };
        let m = EpochMetrics {
            epoch: epoch + 1,
            steps: per_epoch,
            lr,
            loss,
            train_rank1: rank1(&net, train, cfg.tau_c)?,
            val_rank1: if val.is_empty() { None } else { Some(rank1(&net, val, cfg.tau_c)?) },
        };
        log::info!(
            "epoch {} loss {:.5} cls {:.5} cont {:.5} train@1 {:.3}",
            m.epoch,
            m.loss.total,
            m.loss.cls,
            m.loss.cont,
            m.train_rank1
        );
        log.push(m);
    }
    Ok(TrainOutcome { net, log })
}

/// Writes one JSON object per epoch.
pub fn write_log(path: &Path, log: &[EpochMetrics]) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| VipError::io(path, e))?;
    for m in log {
        let line = serde_json::to_string(m).map_err(|e| VipError::json("metrics", e))?;
        writeln!(f, "{line}").map_err(|e| VipError::io(path, e))?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub lambda_cont: f64,
    pub completed: bool,
    pub error: Option<String>,
    pub final_loss: Option<LossBreakdown>,
    pub train_rank1: Option<f64>,
    pub val_rank1: Option<f64>,
}

/// One training run per `λ_cont` value; failures become rows, not errors.
pub fn sweep_lambda_cont(model: &ModelConfig, train_set: &[Sample], val: &[Sample], cfg: &TrainConfig, values: &[f64]) -> Vec<SweepRow> {
    values
        .iter()
        .map(|&lc| {
            let run = TrainConfig { lambda_cont: lc, ..cfg.clone() };
            match train(model.clone(), train_set, val, &run) {
                Ok(out) => {
                    let last = out.log.last();
                    SweepRow {
                        lambda_cont: lc,
                        completed: true,
                        error: None,
                        final_loss: last.map(|m| m.loss),
                        train_rank1: last.map(|m| m.train_rank1),
                        val_rank1: last.and_then(|m| m.val_rank1),
                    }
                }
                Err(e) => SweepRow { lambda_cont: lc, completed: false, error: Some(e.to_string()), final_loss: None, train_rank1: None, val_rank1: None },
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{make_corpus, CorpusOptions};

    fn tiny() -> (ModelConfig, Vec<Sample>) {
        let cfg = ModelConfig::toy(8);
        let clips: Vec<Clip> = make_corpus(6, [1.0, 0.0, 0.0], 5, &CorpusOptions::default()).unwrap().into_iter().map(|c| c.0).collect();
        let s = samples(&clips, &cfg).unwrap();
        (cfg, s)
    }

    #[test]
    fn same_seed_same_first_epoch() {
        let (m, s) = tiny();
        let cfg = TrainConfig { epochs: 1, batch_size: 3, base_lr: 1e-3, warmup_epochs: 0, ..TrainConfig::default() };
        let a = train(m.clone(), &s, &[], &cfg).unwrap();
        let b = train(m, &s, &[], &cfg).unwrap();
        assert!((a.log[0].loss.total - b.log[0].loss.total).abs() < 1e-9);
        assert_eq!(a.net.params, b.net.params);
    }

    #[test]
    fn non_finite_loss_names_the_term() {
        let (m, mut s) = tiny();
        s[0].features.centrality[0][0] = f64::NAN;
        let cfg = TrainConfig { epochs: 1, batch_size: 6, ..TrainConfig::default() };
        match train(m, &s, &[], &cfg) {
            Err(VipError::NonFinite { term, epoch, .. }) => {
                assert_eq!(epoch, 0);
                assert!(!term.is_empty());
            }
            other => panic!("expected a non-finite error, got {other:?}"),
        }
    }

    #[test]
    fn metric_log_is_json_lines() {
        let (m, s) = tiny();
        let cfg = TrainConfig { epochs: 2, batch_size: 4, ..TrainConfig::default() };
        let out = train(m, &s, &s[..2], &cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("metrics.jsonl");
        write_log(&p, &out.log).unwrap();
        let text = fs::read_to_string(&p).unwrap();
        let rows: Vec<EpochMetrics> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
        assert_eq!(rows, out.log);
        assert!(rows[1].val_rank1.is_some());
    }
}
