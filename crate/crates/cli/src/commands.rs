use std::fs;
use std::path::Path;

use anyhow::Context;
use serde::Serialize;
use serde_json::{json, Value};
use tbscan_core::cascade::{stage1_training_set, train_cascade, CASCADE_MAGIC, CASCADE_VERSION};
use tbscan_core::corpus::{read_image, write_pack, ImageFormat};
use tbscan_core::detect_eval::{detect_viewfield, evaluate, records_from_traces, render_overlay};
use tbscan_core::micronet::{MODEL_MAGIC, MODEL_VERSION};
use tbscan_core::synthgen::{corpus_stats, generate_corpus};
use tbscan_core::{CascadeModel, Corpus, NetworkModel, SplitAssignment, Stage2, ViewField};

use crate::config::RunConfig;
use crate::{CliError, DetectArgs, EvalArgs, Format, InspectArgs, Switch, SynthArgs, TrainArgs};

type Result<T> = std::result::Result<T, CliError>;

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let text = serde_json::to_string_pretty(value).context("serializing JSON")?;
    fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn print_json(value: &impl Serialize) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value).context("serializing JSON")?);
    Ok(())
}

fn load_corpus(dir: &Path) -> Result<Corpus> {
    Ok(Corpus::load(dir).with_context(|| format!("loading corpus {}", dir.display()))?)
}

fn load_cascade(path: &Path, stage2: Option<Switch>) -> Result<CascadeModel> {
    let model = CascadeModel::load(path).with_context(|| format!("loading cascade {}", path.display()))?;
    Ok(match stage2 {
        Some(Switch::Off) => model.stage1_only(),
        _ => model,
    })
}

pub fn synth(mut cfg: RunConfig, a: SynthArgs) -> Result<()> {
    if a.seed.is_some() {
        cfg.seed = a.seed;
    }
    if let Some(f) = a.format {
        cfg.image_format = match f {
            Format::Ppm => ImageFormat::Ppm,
            Format::Png => ImageFormat::Png,
        };
    }
    if a.out.is_some() {
        cfg.corpus = a.out;
    }
    let cfg = cfg.finish()?;
    let out = cfg
        .corpus
        .clone()
        .ok_or_else(|| CliError::Usage("synth needs --out (or `corpus` in the config)".into()))?;
    let corpus = generate_corpus(&cfg.synth).context("synthgen")?;
    corpus
        .save(&out, cfg.image_format)
        .with_context(|| format!("writing corpus to {}", out.display()))?;
    // the directory itself is left out so the tree does not depend on where it lives
    let echo = toml::to_string(&RunConfig { corpus: None, ..cfg.clone() }).context("serializing config")?;
    fs::write(out.join("config.toml"), echo).context("writing config echo")?;
    let stats = corpus_stats(&corpus, &cfg.train.label_rule);
    log::info!(
        "{} slides, {} fields, {} boxes; tiling {} positive / {} negative",
        stats.slides,
        stats.fields,
        stats.bboxes,
        stats.positive_tiles,
        stats.negative_tiles
    );
    print_json(&stats)
}

pub fn train(mut cfg: RunConfig, a: TrainArgs) -> Result<()> {
    if a.seed.is_some() {
        cfg.seed = a.seed;
    }
    if a.corpus.is_some() {
        cfg.corpus = a.corpus;
    }
    let t = &mut cfg.train;
    if let Some(s) = a.stage2 {
        t.stage2_enabled = s == Switch::On;
    }
    for stage in [&mut t.stage1, &mut t.stage2] {
        if let Some(v) = a.epochs {
            stage.epochs = v;
        }
        if let Some(v) = a.lr {
            stage.learning_rate = v;
        }
        if let Some(v) = a.batch_size {
            stage.batch_size = v;
        }
    }
    if let Some(v) = a.threshold1 {
        t.threshold_1 = v;
    }
    if let Some(v) = a.threshold2 {
        t.threshold_2 = v;
    }
    if let Some(v) = a.min_overlap {
        t.label_rule.min_overlap = v;
    }
    let cfg = cfg.finish()?;
    let out = cfg.output_path(a.out.as_deref(), "cascade.bcsc")?;
    let log_path = a.log.unwrap_or_else(|| out.with_extension("log.json"));
    let corpus = load_corpus(cfg.corpus_dir()?)?;

    if let Some(pack) = &a.export_patches {
        let split = SplitAssignment::for_corpus(&corpus, &cfg.train.fractions).context("corpus")?;
        let samples = stage1_training_set(&corpus, &split, &cfg.train).context("cascade")?;
        let bytes = write_pack(&samples).context("corpus")?;
        fs::write(pack, bytes).with_context(|| format!("writing {}", pack.display()))?;
        log::info!("wrote {} training patches to {}", samples.len(), pack.display());
    }

    let trained = train_cascade(&corpus, &cfg.train).context("cascade")?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    trained
        .model
        .save(&out)
        .with_context(|| format!("writing {}", out.display()))?;
    write_json(
        &log_path,
        &json!({ "effective_config": cfg.echo("train"), "training": trained.log }),
    )?;
    log::info!("wrote {} and {}", out.display(), log_path.display());
    Ok(())
}

pub fn eval(mut cfg: RunConfig, a: EvalArgs) -> Result<()> {
    if a.corpus.is_some() {
        cfg.corpus = a.corpus;
    }
    if let Some(s) = a.stride {
        cfg.stride = s;
    }
    if let Some(v) = a.min_overlap {
        cfg.train.label_rule.min_overlap = v;
    }
    let cfg = cfg.finish()?;
    let out = cfg.output_path(a.out.as_deref(), "report.json")?;
    let model = load_cascade(&a.model, a.stage2)?;
    let corpus = load_corpus(cfg.corpus_dir()?)?;
    let split = SplitAssignment::for_corpus(&corpus, &cfg.train.fractions).context("corpus")?;
    let report = evaluate(&corpus, &split, &model, cfg.stride, &cfg.train.label_rule, cfg.threads).context("detect_eval")?;

    let mut value: Value = serde_json::from_str(&report.to_json(a.records)).context("report")?;
    value["effective_config"] = serde_json::to_value(cfg.echo("eval")).context("config echo")?;
    value["model"] = json!(a.model.display().to_string());
    write_json(&out, &value)?;

    if let Some(dir) = &a.overlays {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        for rec in &report.fields {
            let field = corpus
                .slides
                .iter()
                .find(|s| s.id == rec.slide_id)
                .and_then(|s| s.fields.iter().find(|f| f.field.index == rec.viewfield))
                .context("report names a field missing from the corpus")?;
            let path = dir.join(format!("{}_{}.png", rec.slide_id, rec.viewfield));
            render_overlay(&field.field, &rec.windows, &path).context("detect_eval")?;
        }
    }
    log::info!("wrote {}", out.display());
    print_json(&json!({ "confusion": report.confusion, "metrics": report.metrics }))
}

pub fn detect(mut cfg: RunConfig, a: DetectArgs) -> Result<()> {
    if let Some(s) = a.stride {
        cfg.stride = s;
    }
    let cfg = cfg.finish()?;
    let model = load_cascade(&a.model, a.stage2)?;
    let image = read_image(&a.image).with_context(|| format!("reading {}", a.image.display()))?;
    let vf = ViewField {
        slide_id: a
            .image
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default(),
        index: 0,
        image,
    };
    let traces = detect_viewfield(&vf, &model, cfg.stride).context("detect_eval")?;
    let windows = records_from_traces(traces);
    if let Some(path) = &a.overlay {
        render_overlay(&vf, &windows, path).context("detect_eval")?;
    }
    let accepted = windows.iter().filter(|w| w.positive).count();
    let value = json!({
        "image": a.image.display().to_string(),
        "stride": cfg.stride,
        "threshold_1": model.threshold_1,
        "threshold_2": model.threshold_2,
        "stage2_pass_through": model.stage2.is_pass_through(),
        "accepted": accepted,
        "windows": windows,
    });
    match &a.out {
        Some(path) => {
            write_json(path, &value)?;
            log::info!("{accepted} of {} windows accepted", windows.len());
            Ok(())
        }
        None => print_json(&value),
    }
}

fn describe_network(m: &NetworkModel) -> Value {
    json!({
        "format": String::from_utf8_lossy(MODEL_MAGIC),
        "version": MODEL_VERSION,
        "seed": m.seed(),
        "normalization": m.normalization(),
        "parameters": m.parameter_count(),
        "layers": m.layers(),
    })
}

pub fn inspect(a: InspectArgs) -> Result<()> {
    let bytes = fs::read(&a.path).with_context(|| format!("reading {}", a.path.display()))?;
    let value = match bytes.get(..4) {
        Some(m) if m == MODEL_MAGIC => {
            let model = NetworkModel::from_bytes(&bytes).context("micronet")?;
            json!({ "kind": "network", "network": describe_network(&model) })
        }
        Some(m) if m == CASCADE_MAGIC => {
            let model = CascadeModel::from_bytes(&bytes).context("cascade")?;
            json!({
                "kind": "cascade",
                "format": String::from_utf8_lossy(CASCADE_MAGIC),
                "version": CASCADE_VERSION,
                "threshold_1": model.threshold_1,
                "threshold_2": model.threshold_2,
                "stage1": describe_network(&model.stage1),
                "stage2": match &model.stage2 {
                    Stage2::Network(n) => describe_network(n),
                    Stage2::PassThrough => json!("pass-through"),
                },
            })
        }
        _ => {
            return Err(anyhow::anyhow!(
                "{}: not a model or cascade file (unknown magic at offset 0)",
                a.path.display()
            )
            .into())
        }
    };
    print_json(&value)
}
