//! Central finite-difference verification of the analytic gradients.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::config::{ModelConfig, TrainConfig};
use crate::cues::text::HashingSentenceEmbedder;
use crate::error::Result;
use crate::model::VipNet;
use crate::params::ParamStore;
use crate::synth::{synthesize, Channel, Interval, ScenarioSpec};

use super::objective::{objective, Sample};

pub const FD_STEP: f64 = 1e-4;
/// Magnitude below which errors are measured in absolute terms.
pub const REL_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupError {
    pub group: String,
    pub scalars: usize,
    pub max_rel_error: f64,
    pub max_abs_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub groups: Vec<GroupError>,
    pub max_rel_error: f64,
    pub loss: f64,
}

pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Compares every parameter scalar's gradient of `L_total` against central
/// differences with step `h`.
pub fn grad_check(net: &VipNet, batch: &[Sample], offsets: &[usize], cfg: &TrainConfig, h: f64) -> Result<GradCheckReport> {
    let embedder = HashingSentenceEmbedder::default();
    let (loss, analytic) = {
        let mut g = net.graph();
        let o = objective(&mut g, net, batch, offsets, cfg, &embedder)?;
        (g.value(o.total).item(), g.backward(o.total).params)
    };
    let mut work = net.clone();
    let eval = |w: &VipNet| -> Result<f64> {
        let mut g = w.graph();
        let o = objective(&mut g, w, batch, offsets, cfg, &embedder)?;
        Ok(g.value(o.total).item())
    };
    let mut groups: BTreeMap<String, GroupError> = BTreeMap::new();
    let ids: Vec<_> = net.params.ids().collect();
    for id in ids {
        let name = net.params.name(id).to_string();
        let group = ParamStore::group_of(&name).to_string();
        let n = net.params.value(id).len();
        let entry = groups.entry(group.clone()).or_insert(GroupError { group, scalars: 0, max_rel_error: 0.0, max_abs_error: 0.0 });
        for k in 0..n {
            let orig = net.params.value(id).data[k];
            work.params.value_mut(id).data[k] = orig + h;
            let plus = eval(&work)?;
            work.params.value_mut(id).data[k] = orig - h;
            let minus = eval(&work)?;
            work.params.value_mut(id).data[k] = orig;
            let numeric = (plus - minus) / (2.0 * h);
            let a = analytic.get(&id).map_or(0.0, |g| g.data[k]);
            entry.scalars += 1;
            entry.max_rel_error = entry.max_rel_error.max(rel_error(a, numeric));
            entry.max_abs_error = entry.max_abs_error.max((a - numeric).abs());
        }
    }
    let groups: Vec<GroupError> = groups.into_values().collect();
    let max_rel_error = groups.iter().map(|g| g.max_rel_error).fold(0.0, f64::max);
    Ok(GradCheckReport { groups, max_rel_error, loss })
}

/// A frozen random toy problem: `N = 3`, `T = 6`, `D = 8`, two clips.
pub fn toy_problem(seed: u64) -> Result<(VipNet, Vec<Sample>, Vec<usize>)> {
    let net = VipNet::new(ModelConfig { seed, ..ModelConfig::toy(8) })?;
    let schedules = [
        vec![Interval { start: 0, end: 3, person: 0, channel: Channel::Speech }, Interval { start: 3, end: 6, person: 1, channel: Channel::Gesture }],
        vec![Interval { start: 0, end: 6, person: 2, channel: Channel::Spatial }],
    ];
    let mut batch = Vec::new();
    for (k, s) in schedules.into_iter().enumerate() {
        let spec = ScenarioSpec::new(seed.wrapping_mul(31).wrapping_add(k as u64), 3, 6, s);
        batch.push(Sample::from_clip(&synthesize(&spec)?.0, &net.config)?);
    }
    Ok((net, batch, vec![1, 0]))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relative_error_formula() {
        assert_eq!(rel_error(1.0, 1.0), 0.0);
        assert!((rel_error(2.0, 1.0) - 0.5).abs() < 1e-15);
        assert!((rel_error(0.0, 1e-9) - 1e-3).abs() < 1e-15);
    }

    #[test]
    fn toy_model_gradients_match_finite_differences() {
        let (net, b, off) = toy_problem(3).unwrap();
        let r = grad_check(&net, &b, &off, &TrainConfig::default(), FD_STEP).unwrap();
        assert!(r.groups.len() > 20);
        for g in &r.groups {
            assert!(g.max_rel_error < 1e-4, "{g:?}");
        }
    }

    #[test]
    fn cls_and_reg_path_alone() {
        let (net, b, off) = toy_problem(1).unwrap();
        let cfg = TrainConfig { lambda_cont: 0.0, lambda_text: 0.0, ..TrainConfig::default() };
        let r = grad_check(&net, &b, &off, &cfg, FD_STEP).unwrap();
        assert!(r.max_rel_error < 1e-4, "{r:?}");
    }

    #[test]
    fn masked_person_inputs_get_zero_gradient() {
        let (net, mut b, off) = toy_problem(2).unwrap();
        let masked = (0..3).find(|i| *i != b[0].vip).unwrap();
        b[0].features.mask.frame_valid[masked] = vec![false; 6];
        b[0].features.mask = crate::data::ValidityMask::from_frames(b[0].features.mask.frame_valid.clone());
        let e = HashingSentenceEmbedder::default();
        let total = |b: &[Sample]| {
            let mut g = net.graph();
            let o = objective(&mut g, &net, b, &off, &TrainConfig::default(), &e).unwrap();
            g.value(o.total).item()
        };
        let base = total(&b);
        let vip = b[0].vip;
        for person in [masked, vip] {
            let mut p = b.clone();
            let f = &mut p[0].features;
            for series in [&mut f.centrality, &mut f.area, &mut f.clarity] {
                series[person].iter_mut().for_each(|x| *x += 0.1);
            }
            f.action[person].per_frame.iter_mut().for_each(|x| *x += 0.1);
            f.lip[person].features.data.iter_mut().for_each(|x| *x += 0.1);
            if person == masked {
                assert_eq!(total(&p).to_bits(), base.to_bits());
            } else {
                assert_ne!(total(&p), base);
            }
        }
    }
}
