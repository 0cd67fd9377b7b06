use vipnet::config::{InferenceConfig, ModelConfig, TrainConfig};
use vipnet::data::{load_clip, save_clip};
use vipnet::inference::predict;
use vipnet::synth::{make_corpus, CorpusOptions, Profile};
use vipnet::training::{checkpoint, samples, train};

fn small() -> ModelConfig {
    ModelConfig { dim: 16, heads: 2, text_heads: 2, text_layers: 1, ..ModelConfig::default() }
}

#[test]
fn synth_train_checkpoint_predict() {
    let items = make_corpus(8, [1.0, 0.0, 0.0], 3, &CorpusOptions::default()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let clips: Vec<_> = items
        .iter()
        .map(|(c, _)| {
            let p = dir.path().join("clips").join(&c.clip_id);
            save_clip(c, &p).unwrap();
            load_clip(&p).unwrap().clip
        })
        .collect();
    for ((orig, label), back) in items.iter().zip(&clips) {
        assert_eq!(orig, back);
        assert_eq!(orig.vip_person_id, label.vip_person_id);
    }

    let model = small();
    let set = samples(&clips, &model).unwrap();
    let cfg = TrainConfig { epochs: 3, batch_size: 4, base_lr: 1e-3, warmup_epochs: 1, ..TrainConfig::default() };
    let out = train(model, &set, &[], &cfg).unwrap();
    assert_eq!(out.log.len(), 3);
    assert!(out.log.iter().all(|m| m.loss.total.is_finite()));

    let ck = dir.path().join("ck");
    checkpoint::save(&out.net, Some(&cfg), &ck).unwrap();
    let (net, manifest) = checkpoint::load(&ck).unwrap();
    assert_eq!(manifest.seed, cfg.seed);
    let inf = InferenceConfig::default();
    for c in &clips {
        let a = predict(&out.net, c, &inf).unwrap();
        let b = predict(&net, c, &inf).unwrap();
        assert_eq!(a, b);
        assert!((a.probabilities.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert_eq!(a.ranked_ids[0], a.vip_id);
    }
}

#[test]
fn decoy_corpus_hides_the_vip_from_centrality() {
    let opts = CorpusOptions { profile: Profile::Decoy, ..CorpusOptions::default() };
    let items = make_corpus(12, [1.0, 0.0, 0.0], 9, &opts).unwrap();
    let cfg = ModelConfig::default();
    for (clip, _) in &items {
        let top = vipnet::eval::heuristic_baseline(clip, vipnet::cues::Cue::Centrality, &cfg).unwrap()[0];
        assert_ne!(top, clip.vip_person_id);
    }
}
