use std::fs;
use std::path::Path;
use std::time::Duration;

use serde::Serialize;
use vipnet::cues::text::HashingSentenceEmbedder;
use vipnet::cues::Cue;
use vipnet::data::{load_corpus, load_dataset_pair, save_clip, AdapterKeys, Clip, Split};
use vipnet::eval::{evaluate, report_json, EvalOptions, Predictor};
use vipnet::inference::{make_rationale, predict, GuidanceMode};
use vipnet::refine::{refine_rationale, HttpClient, MockClient, RefinementClient};
use vipnet::synth::{make_corpus, Profile};
use vipnet::training::{self, checkpoint, grad_check, toy_problem, FD_STEP};
use vipnet::VipError;

use crate::run::{write_json, CliError, CliResult, RunConfig, Versioned, OUTPUT_SCHEMA_VERSION};
use crate::{Cli, Command};

pub fn dispatch(cli: &Cli) -> CliResult<()> {
    let cfg = |name: &str| RunConfig::load(name, cli.config.as_deref(), cli.seed);
    match &cli.command {
        Command::Synth(a) => synth(cfg("synth")?, a),
        Command::Ingest(a) => ingest(cfg("ingest")?, a),
        Command::Baseline(a) => baseline(cfg("baseline")?, a),
        Command::Train(a) => train(cfg("train")?, a),
        Command::Eval(a) => eval(cfg("eval")?, a),
        Command::Predict(a) => predict_cmd(cfg("predict")?, a),
        Command::Explain(a) => explain(cfg("explain")?, a),
        Command::Gradcheck(a) => gradcheck(cfg("gradcheck")?, a),
    }
}

fn parse_split(s: Option<&str>) -> CliResult<Option<Split>> {
    s.map(|s| Split::parse(s).ok_or_else(|| CliError::Usage(format!("unknown split `{s}` (train, val, test)")))).transpose()
}

fn parse_list(s: &str) -> CliResult<Vec<f64>> {
    s.split(',')
        .map(|x| x.trim().parse::<f64>().map_err(|_| CliError::Usage(format!("`{x}` is not a number in list `{s}`"))))
        .collect()
}

fn existing(p: &Path, what: &str) -> CliResult<()> {
    if p.exists() {
        Ok(())
    } else {
        Err(CliError::Usage(format!("{what} {} does not exist", p.display())))
    }
}

fn corpus(p: &Path) -> CliResult<Vec<Clip>> {
    existing(p, "corpus")?;
    Ok(load_corpus(p)?)
}

fn select(clips: Vec<Clip>, split: Option<Split>) -> CliResult<Vec<Clip>> {
    let kept: Vec<Clip> = clips.into_iter().filter(|c| split.is_none_or(|s| c.split == s)).collect();
    if kept.is_empty() {
        return Err(CliError::Usage(format!("no clips in split {}", split.map_or("any", |s| s.as_str()))));
    }
    Ok(kept)
}

fn reset_dir(p: &Path) -> CliResult<()> {
    if p.exists() {
        fs::remove_dir_all(p).map_err(|e| VipError::io(p, e))?;
    }
    fs::create_dir_all(p).map_err(|e| VipError::io(p, e).into())
}

fn synth(mut rc: RunConfig, a: &crate::SynthArgs) -> CliResult<()> {
    if let Some(n) = a.count {
        rc.synth.count = n;
    }
    if let Some(p) = &a.profile {
        rc.corpus.profile = Profile::parse(p).ok_or_else(|| CliError::Usage(format!("unknown profile `{p}`")))?;
    }
    if let Some(t) = a.frames {
        rc.corpus.num_frames = t;
    }
    if a.pixels {
        rc.corpus.pixels = true;
    }
    if let Some(s) = &a.split {
        let v = parse_list(s)?;
        rc.synth.split = v.try_into().map_err(|_| CliError::Usage("--split needs three fractions".into()))?;
    }
    let fp = rc.announce(Some(&a.out))?;
    let items = make_corpus(rc.synth.count, rc.synth.split, rc.seed, &rc.corpus)?;
    let clips_dir = a.out.join("clips");
    reset_dir(&clips_dir)?;
    let mut labels = String::new();
    for (clip, label) in &items {
        save_clip(clip, &clips_dir.join(&clip.clip_id))?;
        let row = serde_json::json!({ "clip_id": clip.clip_id, "split": clip.split, "label": label });
        labels.push_str(&serde_json::to_string(&row).map_err(|e| VipError::json("labels", e))?);
        labels.push('\n');
    }
    let path = a.out.join("labels.jsonl");
    fs::write(&path, labels).map_err(|e| VipError::io(&path, e))?;
    println!("wrote {} clips to {} ({fp})", items.len(), clips_dir.display());
    Ok(())
}

fn ingest(mut rc: RunConfig, a: &crate::IngestArgs) -> CliResult<()> {
    existing(&a.npz, "array archive")?;
    existing(&a.json, "annotation")?;
    let keys: AdapterKeys = match &a.keys {
        Some(p) => {
            existing(p, "key map")?;
            let bytes = fs::read(p).map_err(|e| VipError::io(p, e))?;
            serde_json::from_slice(&bytes).map_err(|e| CliError::Usage(format!("invalid key map {}: {e}", p.display())))?
        }
        None => AdapterKeys::default(),
    };
    rc.option("npz", &a.npz);
    rc.option("json", &a.json);
    rc.option("keys", &keys);
    rc.announce(Some(&a.out))?;
    let clip = load_dataset_pair(&a.npz, &a.json, &keys)?;
    for w in vipnet::data::validate_clip(&clip) {
        eprintln!("warning: {w}");
    }
    let dir = a.out.join("clips").join(&clip.clip_id);
    save_clip(&clip, &dir)?;
    println!("wrote {}", dir.display());
    Ok(())
}

fn baseline(mut rc: RunConfig, a: &crate::BaselineArgs) -> CliResult<()> {
    let cue = Cue::parse(&a.cue)
        .filter(|c| vipnet::eval::BASELINE_CUES.contains(c))
        .ok_or_else(|| CliError::Usage(format!("unknown baseline cue `{}` (centrality, area, clarity)", a.cue)))?;
    rc.eval.split = parse_split(a.split.as_deref())?;
    rc.option("cue", cue);
    rc.option("corpus", &a.corpus);
    let clips = corpus(&a.corpus)?;
    let fp = rc.announce(Some(&a.out))?;
    let opts = EvalOptions { baselines: false, ..rc.eval.clone() };
    let report = evaluate(&Predictor::Baseline { cue, config: rc.model.clone() }, &clips, &opts, None, &HashingSentenceEmbedder::default())?;
    write_report(&a.out, &report)?;
    println!("max-{} rank1 {:.4} rank2 {:.4} rank3 {:.4} over {} clips ({fp})", cue.as_str(), report.rank1, report.rank2, report.rank3, report.count);
    Ok(())
}

fn write_report(out: &Path, report: &vipnet::eval::EvalReport) -> CliResult<()> {
    let path = out.join("report.json");
    fs::write(&path, report_json(report)?).map_err(|e| VipError::io(&path, e).into())
}

fn train(mut rc: RunConfig, a: &crate::TrainArgs) -> CliResult<()> {
    let t = &mut rc.train;
    if let Some(v) = a.epochs {
        t.epochs = v;
    }
    if let Some(v) = a.batch_size {
        t.batch_size = v;
    }
    if let Some(v) = a.lr {
        t.base_lr = v;
    }
    if let Some(v) = a.weight_decay {
        t.weight_decay = v;
    }
    if let Some(v) = a.warmup_epochs {
        t.warmup_epochs = v;
    }
    if let Some(v) = a.lambda_text {
        t.lambda_text = v;
    }
    if let Some(v) = a.lambda_cont {
        t.lambda_cont = v;
    }
    if let Some(v) = a.lambda_reg {
        t.lambda_reg = v;
    }
    if let Some(v) = a.tau_cont {
        t.tau_cont = v;
    }
    if let Some(v) = a.dim {
        rc.model.dim = v;
    }
    let sweep = a.sweep_lambda_cont.as_deref().map(parse_list).transpose()?;
    rc.option("corpus", &a.corpus);
    if let Some(s) = &sweep {
        rc.option("sweep_lambda_cont", s);
    }
    rc.model.check()?;
    rc.train.check()?;
    let clips = corpus(&a.corpus)?;
    let fp = rc.announce(Some(&a.out))?;
    let (mut train_set, val_set) = training::split_samples(&clips, &rc.model)?;
    if train_set.is_empty() {
        log::warn!("corpus has no train split; training on every clip");
        train_set = training::samples(&clips, &rc.model)?;
    }
    match sweep {
        Some(values) => {
            let rows = training::sweep_lambda_cont(&rc.model, &train_set, &val_set, &rc.train, &values);
            write_json(
                &a.out.join("sweep.json"),
                &Versioned { schema_version: OUTPUT_SCHEMA_VERSION, fingerprint: &fp, body: serde_json::json!({ "rows": rows }) },
            )?;
            println!("lambda_cont  completed  loss        train_rank1  val_rank1");
            for r in &rows {
                println!(
                    "{:<12} {:<10} {:<11} {:<12} {}",
                    r.lambda_cont,
                    r.completed,
                    r.final_loss.map_or("-".into(), |l| format!("{:.6}", l.total)),
                    r.train_rank1.map_or("-".into(), |v| format!("{v:.4}")),
                    r.val_rank1.map_or("-".into(), |v| format!("{v:.4}")),
                );
            }
            if let Some(bad) = rows.iter().find(|r| !r.completed) {
                return Err(CliError::Internal(format!(
                    "λ_cont = {} failed: {}",
                    bad.lambda_cont,
                    bad.error.as_deref().unwrap_or("unknown")
                )));
            }
        }
        None => {
            let out = training::train(rc.model.clone(), &train_set, &val_set, &rc.train)?;
            training::write_log(&a.out.join("metrics.jsonl"), &out.log)?;
            let ck = a.out.join("checkpoint");
            reset_dir(&ck)?;
            checkpoint::save(&out.net, Some(&rc.train), &ck)?;
            if let Some(last) = out.log.last() {
                println!("epoch {} loss {:.6} train rank1 {:.4}", last.epoch, last.loss.total, last.train_rank1);
            }
            println!("checkpoint written to {} ({fp})", ck.display());
        }
    }
    Ok(())
}

fn load_model(rc: &mut RunConfig, path: &Path) -> CliResult<vipnet::model::VipNet> {
    existing(path, "checkpoint")?;
    let (net, manifest) = checkpoint::load(path)?;
    rc.model = net.config.clone();
    rc.option("checkpoint", path);
    rc.option("checkpoint_fingerprint", manifest.fingerprint);
    Ok(net)
}

fn eval(mut rc: RunConfig, a: &crate::EvalArgs) -> CliResult<()> {
    let net = load_model(&mut rc, &a.checkpoint)?;
    rc.eval.split = parse_split(a.split.as_deref())?;
    if let Some(n) = a.overlays {
        rc.eval.overlay_frames = n;
    }
    rc.option("corpus", &a.corpus);
    let clips = corpus(&a.corpus)?;
    let fp = rc.announce(Some(&a.out))?;
    let mut opts = rc.eval.clone();
    if a.overlays.is_some() {
        let dir = a.out.join("overlays");
        reset_dir(&dir)?;
        opts.overlay_dir = Some(dir);
    }
    let client = MockClient::default();
    let report = evaluate(
        &Predictor::Model { net: &net, inference: rc.inference.clone() },
        &clips,
        &opts,
        Some(&client),
        &HashingSentenceEmbedder::default(),
    )?;
    write_report(&a.out, &report)?;
    println!("rank1 {:.4} rank2 {:.4} rank3 {:.4} over {} clips ({fp})", report.rank1, report.rank2, report.rank3, report.count);
    for (name, s) in &report.baselines {
        println!("  {name:<16} rank1 {:.4}", s.rank1);
    }
    Ok(())
}

fn predict_cmd(mut rc: RunConfig, a: &crate::PredictArgs) -> CliResult<()> {
    let net = load_model(&mut rc, &a.checkpoint)?;
    let split = parse_split(a.split.as_deref())?;
    rc.option("corpus", &a.corpus);
    rc.option("split", split);
    let clips = select(corpus(&a.corpus)?, split)?;
    let fp = rc.announce(Some(&a.out))?;
    let dir = a.out.join("predictions");
    reset_dir(&dir)?;
    for clip in &clips {
        let r = predict(&net, clip, &rc.inference)?;
        write_json(&dir.join(format!("{}.json", clip.clip_id)), &Versioned { schema_version: OUTPUT_SCHEMA_VERSION, fingerprint: &fp, body: &r })?;
        println!("{} vip {} p={:.4}", clip.clip_id, r.vip_id, r.probabilities[clip.person_index(r.vip_id).expect("vip index")]);
    }
    Ok(())
}

#[derive(Serialize)]
struct Explanation<'a> {
    clip_id: &'a str,
    vip_id: u32,
    #[serde(flatten)]
    rationale: vipnet::inference::Rationale,
}

fn explain(mut rc: RunConfig, a: &crate::ExplainArgs) -> CliResult<()> {
    let mode = GuidanceMode::parse(&a.mode).ok_or_else(|| CliError::Usage(format!("unknown mode `{}` (baseline, unguided, guided)", a.mode)))?;
    let client: Box<dyn RefinementClient> = match a.client.as_str() {
        "mock" => Box::new(MockClient::default()),
        "http" => {
            let endpoint = a.endpoint.clone().ok_or_else(|| CliError::Usage("--client http needs --endpoint".into()))?;
            Box::new(HttpClient { endpoint, timeout: Duration::from_millis(a.timeout_ms) })
        }
        other => return Err(CliError::Usage(format!("unknown client `{other}` (mock, http)"))),
    };
    let net = load_model(&mut rc, &a.checkpoint)?;
    let split = parse_split(a.split.as_deref())?;
    rc.option("corpus", &a.corpus);
    rc.option("split", split);
    rc.option("mode", mode);
    rc.option("client", &a.client);
    rc.option("endpoint", &a.endpoint);
    let clips = select(corpus(&a.corpus)?, split)?;
    let fp = rc.announce(Some(&a.out))?;
    let dir = a.out.join("rationales");
    reset_dir(&dir)?;
    for clip in &clips {
        let r = predict(&net, clip, &rc.inference)?;
        let rationale = make_rationale(&r.per_cue_rank, rc.inference.tau_m);
        let rationale = refine_rationale(client.as_ref(), &clip.clip_id, r.vip_id, rationale, mode);
        let text = rationale.refined_text.clone().unwrap_or_else(|| rationale.template_text.clone());
        if let Some(w) = &rationale.refinement_warning {
            eprintln!("warning: {}: refinement failed ({w}); using the template", clip.clip_id);
        }
        let body = Explanation { clip_id: &clip.clip_id, vip_id: r.vip_id, rationale };
        write_json(&dir.join(format!("{}.json", clip.clip_id)), &Versioned { schema_version: OUTPUT_SCHEMA_VERSION, fingerprint: &fp, body })?;
        println!("{} vip {}: {text}", clip.clip_id, r.vip_id);
    }
    Ok(())
}

fn gradcheck(mut rc: RunConfig, a: &crate::GradcheckArgs) -> CliResult<()> {
    rc.option("fd_step", FD_STEP);
    let fp = rc.announce(a.out.as_deref())?;
    let (net, batch, offsets) = toy_problem(rc.seed)?;
    let report = grad_check(&net, &batch, &offsets, &rc.train, FD_STEP)?;
    for g in &report.groups {
        println!("{:<28} {:>5} scalars  max rel error {:.3e}", g.group, g.scalars, g.max_rel_error);
    }
    println!("max relative error: {:.3e}", report.max_rel_error);
    if let Some(out) = &a.out {
        write_json(&out.join("gradcheck.json"), &Versioned { schema_version: OUTPUT_SCHEMA_VERSION, fingerprint: &fp, body: &report })?;
    }
    if report.max_rel_error < 1e-4 {
        Ok(())
    } else {
        Err(CliError::Internal(format!("gradient check failed: max relative error {:.3e} >= 1e-4", report.max_rel_error)))
    }
}
