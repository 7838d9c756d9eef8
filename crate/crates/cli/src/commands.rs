use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use flare_core::analysis::{
    evaluate_closed_world, evaluate_open_world, fisher_ranking, fisher_score, kl_report, window_sweep,
    write_fisher_csv, write_kl_csv, write_metrics_csv, write_sweep_csv, AnalysisError, MetricsReport,
};
use flare_core::features::flow_feature_names;
use flare_core::flsim::{emulate_throttle, federation, make_corpus, ModelProfile, ThrottleGate, ThrottleSpec};
use flare_core::fusion::{
    featurize_corpus, predict, train_on_features, ArchFamily, ArchLabel, FlarePipeline, FusionError, Prediction,
    TargetClass,
};
use flare_core::ingest::{extract_client_trace, parse_capture_csv, read_trace, trace_to_string, ClientTrace, StationId};
use flare_core::segmentation::segment;
use log::info;
use serde::Serialize;
use serde_json::json;

use crate::config::ExperimentConfig;
use crate::{Cli, CliError, Command, Common};

/// Resolves the config and runs the parsed command.
pub fn run(cli: &Cli) -> Result<(), CliError> {
    let cfg = resolve(&cli.common, &cli.command)?;
    match &cli.command {
        Command::Simulate { .. } => simulate(&cfg),
        Command::Ingest {
            capture,
            ap,
            client,
            family,
            model,
            dataset,
            name,
        } => ingest(&cfg, capture, ap, client, family.as_deref(), model.as_deref(), dataset.as_deref(), name.as_deref()),
        Command::Segment => segment_cmd(&cfg),
        Command::Featurize => featurize(&cfg),
        Command::Train => train(&cfg),
        Command::Predict { input } => predict_cmd(&cfg, input),
        Command::EvalClosed => eval_closed(&cfg),
        Command::EvalOpen { .. } => eval_open(&cfg),
        Command::Sweep { .. } => sweep(&cfg),
        Command::Analyze => analyze(&cfg),
        Command::AttackSim { .. } => attack_sim(&cfg),
    }
}

fn resolve(c: &Common, cmd: &Command) -> Result<ExperimentConfig, CliError> {
    let mut cfg = ExperimentConfig::load(c.config.as_deref())?;
    if let Some(p) = &c.corpus {
        cfg.paths.corpus_dir = Some(p.clone());
    }
    if let Some(p) = &c.out {
        cfg.paths.output_dir = Some(p.clone());
    }
    if let Some(p) = &c.pipeline {
        cfg.paths.pipeline = Some(p.clone());
    }
    if let Some(s) = c.seed {
        cfg.pipeline.seed = s;
        cfg.scenario.seed = s;
    }
    if let Some(s) = &c.seeds {
        cfg.eval.seeds = s.clone();
        cfg.attack.seeds = s.clone();
    }
    let w = &mut cfg.pipeline.window;
    if let Some(ws) = c.window_s {
        w.window_s = ws;
        w.stride_s = c.stride_s.unwrap_or(ws);
    } else if let Some(st) = c.stride_s {
        w.stride_s = st;
    }
    if let Some(t) = c.tau_bytes {
        w.tau_bytes = t;
    }
    if let Some(f) = c.fusion {
        cfg.pipeline.fusion_kind = f;
    }
    if let Some(n) = c.trees {
        cfg.pipeline.forest.n_trees = n;
    }
    if let Some(k) = c.folds {
        cfg.pipeline.folds = k;
    }
    if let Some(t) = c.threshold {
        cfg.pipeline.threshold = t;
    }
    if c.tune {
        cfg.pipeline.tune = true;
    }
    match cmd {
        Command::Simulate {
            traces_per_template,
            duration_s,
        } => {
            if let Some(n) = traces_per_template {
                cfg.scenario.traces_per_template = *n;
            }
            if let Some(d) = duration_s {
                cfg.scenario.duration_s = *d;
            }
        }
        Command::EvalOpen { holdout: Some(h) } => cfg.eval.holdout_models = h.clone(),
        Command::Sweep { lengths: Some(l) } => cfg.eval.sweep_lengths = l.clone(),
        Command::AttackSim {
            models,
            denial_frac,
            sync_modes,
        } => {
            if let Some(m) = models {
                cfg.attack.models = m.clone();
            }
            if let Some(d) = denial_frac {
                cfg.attack.denial_frac = *d;
            }
            if let Some(s) = sync_modes {
                cfg.attack.sync_modes = s.clone();
            }
        }
        _ => {}
    }
    cfg.validate()?;
    Ok(cfg)
}

fn out_dir(cfg: &ExperimentConfig) -> Result<PathBuf, CliError> {
    let dir = cfg
        .paths
        .output_dir
        .clone()
        .ok_or_else(|| CliError::Usage("an output directory is required (--out or paths.output_dir)".into()))?;
    fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
    Ok(dir)
}

fn corpus_dir(cfg: &ExperimentConfig) -> Result<PathBuf, CliError> {
    let dir = cfg
        .paths
        .corpus_dir
        .clone()
        .ok_or_else(|| CliError::Usage("a corpus directory is required (--corpus or paths.corpus_dir)".into()))?;
    if !dir.is_dir() {
        return Err(CliError::Config(format!("corpus directory {} does not exist", dir.display())));
    }
    Ok(dir)
}

fn read_trace_file(path: &Path) -> Result<ClientTrace, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let mut trace = read_trace(&text)?;
    if !trace.meta.contains_key("trace_id") {
        if let Some(stem) = path.file_stem() {
            trace.meta.insert("trace_id".into(), stem.to_string_lossy().into_owned());
        }
    }
    Ok(trace)
}

/// Trace files of a corpus: `dir/traces/*.csv` when present, else `dir/*.csv`,
/// in file-name order.
pub fn load_corpus(dir: &Path) -> Result<Vec<ClientTrace>, CliError> {
    let traces_dir = dir.join("traces");
    let root = if traces_dir.is_dir() { traces_dir } else { dir.to_path_buf() };
    let mut files: Vec<PathBuf> = fs::read_dir(&root)
        .map_err(|e| CliError::io(&root, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(CliError::Config(format!("no trace files in {}", root.display())));
    }
    info!("loading {} traces from {}", files.len(), root.display());
    files.iter().map(|p| read_trace_file(p)).collect()
}

/// Writes `# config: {json}` and then whatever `body` emits.
fn write_report<F>(path: &Path, cfg: &ExperimentConfig, body: F) -> Result<(), CliError>
where
    F: FnOnce(&mut Vec<u8>) -> Result<(), CliError>,
{
    let mut buf = Vec::new();
    writeln!(buf, "# config: {}", provenance(cfg)).expect("write to Vec");
    body(&mut buf)?;
    fs::write(path, buf).map_err(|e| CliError::io(path, e))?;
    info!("wrote {}", path.display());
    Ok(())
}

/// The resolved config without file-system paths, so reports written to
/// different directories stay comparable.
fn provenance(cfg: &ExperimentConfig) -> String {
    let mut c = cfg.clone();
    c.paths = Default::default();
    c.to_json()
}

fn config_hash(cfg: &ExperimentConfig) -> String {
    flare_core::flsim::sha256_hex(provenance(cfg).as_bytes())
}

fn csv_body<F>(buf: &mut Vec<u8>, header: &[String], rows: F) -> Result<(), CliError>
where
    F: FnOnce(&mut dyn FnMut(Vec<String>)),
{
    let mut text = String::new();
    text.push_str(&header.join(","));
    text.push('\n');
    rows(&mut |r: Vec<String>| {
        text.push_str(&r.join(","));
        text.push('\n');
    });
    buf.extend_from_slice(text.as_bytes());
    Ok(())
}

fn strings(items: &[&str]) -> Vec<String> {
    items.iter().map(|s| s.to_string()).collect()
}

fn simulate(cfg: &ExperimentConfig) -> Result<(), CliError> {
    let out = out_dir(cfg)?;
    let templates = cfg.scenario.templates()?;
    info!(
        "simulating {} templates x {} traces",
        templates.len(),
        cfg.scenario.traces_per_template
    );
    let corpus = make_corpus(&templates, cfg.scenario.traces_per_template, cfg.scenario.seed)?;
    let traces_dir = out.join("traces");
    fs::create_dir_all(&traces_dir).map_err(|e| CliError::io(&traces_dir, e))?;
    for t in &corpus.traces {
        let p = traces_dir.join(format!("{}.csv", t.trace_id()));
        fs::write(&p, trace_to_string(t)).map_err(|e| CliError::io(&p, e))?;
    }
    let manifest = json!({
        "config_hash": config_hash(cfg),
        "config": serde_json::from_str::<serde_json::Value>(&provenance(cfg)).expect("valid json"),
        "corpus": corpus.manifest,
    });
    let p = out.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serialises") + "\n";
    fs::write(&p, text).map_err(|e| CliError::io(&p, e))?;
    info!("wrote {} traces to {}", corpus.traces.len(), out.display());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn ingest(
    cfg: &ExperimentConfig,
    capture: &Path,
    ap: &str,
    client: &str,
    family: Option<&str>,
    model: Option<&str>,
    dataset: Option<&str>,
    name: Option<&str>,
) -> Result<(), CliError> {
    let out = out_dir(cfg)?;
    let station = |s: &str| {
        s.parse::<StationId>()
            .map_err(|_| CliError::Usage(format!("`{s}` is not a MAC address")))
    };
    let (ap, client) = (station(ap)?, station(client)?);
    let file = fs::File::open(capture).map_err(|e| CliError::io(capture, e))?;
    let raw = parse_capture_csv(std::io::BufReader::new(file))?;
    let mut trace = extract_client_trace(&raw, ap, client)?;
    if let Some(f) = family {
        let family: ArchFamily = f
            .parse()
            .map_err(|_| CliError::Usage(format!("unknown family `{f}`")))?;
        trace.label = Some(ArchLabel::new(family, model.unwrap_or_default(), dataset.unwrap_or_default())?);
    }
    let stem = name.map(str::to_string).unwrap_or_else(|| client.to_string().replace(':', ""));
    trace.meta.insert("trace_id".into(), stem.clone());
    let p = out.join(format!("{stem}.csv"));
    fs::write(&p, trace_to_string(&trace)).map_err(|e| CliError::io(&p, e))?;
    info!("{} packets ({} up, {} down) -> {}", trace.packets.len(), trace.uplink_count(), trace.downlink_count(), p.display());
    Ok(())
}

fn segment_cmd(cfg: &ExperimentConfig) -> Result<(), CliError> {
    let corpus = load_corpus(&corpus_dir(cfg)?)?;
    let out = out_dir(cfg)?;
    let wcfg = cfg.pipeline.window;
    let mut rows = Vec::new();
    for t in &corpus {
        if t.packets.is_empty() {
            continue;
        }
        for w in segment(t, &wcfg)? {
            let bytes: u64 = w.packets.iter().map(|p| p.size_bytes as u64).sum();
            let max = w.packets.iter().map(|p| p.size_bytes).max().unwrap_or(0);
            rows.push(vec![
                w.origin.trace_id.clone(),
                w.origin.index.to_string(),
                format!("{:.6}", w.start_s()),
                format!("{:.6}", w.duration_s()),
                w.packets.len().to_string(),
                bytes.to_string(),
                max.to_string(),
                w.is_active(wcfg.tau_bytes).to_string(),
            ]);
        }
    }
    let header = strings(&["trace_id", "window_index", "start_s", "duration_s", "packets", "bytes", "max_size", "active"]);
    write_report(&out.join("windows.csv"), cfg, |buf| {
        csv_body(buf, &header, |emit| rows.into_iter().for_each(emit))
    })
}

fn featurize(cfg: &ExperimentConfig) -> Result<(), CliError> {
    let corpus = load_corpus(&corpus_dir(cfg)?)?;
    let out = out_dir(cfg)?;
    let data = featurize_corpus(&corpus, &cfg.pipeline.window, &cfg.pipeline.features)?;
    let mut header = strings(&["window_id", "trace_id", "family", "model"]);
    header.extend(flow_feature_names().into_iter().map(|n| format!("flow_{n}")));
    header.extend(
        cfg.pipeline
            .features
            .packet_feature_names()
            .into_iter()
            .map(|n| format!("pkt_{n}")),
    );
    write_report(&out.join("features.csv"), cfg, |buf| {
        csv_body(buf, &header, |emit| {
            for i in 0..data.len() {
                let (family, model) = match &data.labels[i] {
                    Some(l) => (l.family.to_string(), l.model_name.clone()),
                    None => (String::new(), String::new()),
                };
                let mut row = vec![data.window_ids[i].clone(), data.trace_ids[i].clone(), family, model];
                row.extend(data.flow[i].iter().chain(&data.packet[i]).map(|v| v.to_string()));
                emit(row);
            }
        })
    })
}

fn pipeline_path(cfg: &ExperimentConfig) -> Result<PathBuf, CliError> {
    match &cfg.paths.pipeline {
        Some(p) => Ok(p.clone()),
        None => Ok(out_dir(cfg)?.join("pipeline.json")),
    }
}

fn train(cfg: &ExperimentConfig) -> Result<(), CliError> {
    let corpus = load_corpus(&corpus_dir(cfg)?)?;
    let out = out_dir(cfg)?;
    let data = featurize_corpus(&corpus, &cfg.pipeline.window, &cfg.pipeline.features)?;
    info!("training on {} windows", data.len());
    let (pipeline, report, _) = train_on_features(&data, &cfg.pipeline)?;
    let path = pipeline_path(cfg)?;
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
    }
    fs::write(&path, pipeline.to_json()).map_err(|e| CliError::io(&path, e))?;
    info!("wrote {}", path.display());
    let header = strings(&[
        "class",
        "positives",
        "negatives",
        "oof_flow_f1",
        "oof_packet_f1",
        "oof_fusion_f1",
        "oof_fusion_loss",
    ]);
    write_report(&out.join("train_report.csv"), cfg, |buf| {
        csv_body(buf, &header, |emit| {
            for c in &report.classes {
                emit(vec![
                    c.target.to_string(),
                    c.positives.to_string(),
                    c.negatives.to_string(),
                    format!("{:.6}", c.oof_flow_f1),
                    format!("{:.6}", c.oof_packet_f1),
                    format!("{:.6}", c.oof_fusion_f1),
                    format!("{:.6}", c.oof_fusion_loss),
                ]);
            }
        })
    })
}

#[derive(Serialize)]
struct PredictionRecord<'a> {
    window_id: String,
    trace_id: &'a str,
    start_s: f64,
    #[serde(flatten)]
    prediction: Prediction,
}

fn predict_cmd(cfg: &ExperimentConfig, input: &Path) -> Result<(), CliError> {
    let path = cfg
        .paths
        .pipeline
        .clone()
        .ok_or_else(|| CliError::Usage("--pipeline is required".into()))?;
    let text = fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
    let pipeline = FlarePipeline::from_json(&text)?;
    let traces = if input.is_dir() {
        load_corpus(input)?
    } else {
        vec![read_trace_file(input)?]
    };
    let out = out_dir(cfg)?;
    let wcfg = pipeline.config.window;
    let mut lines = String::new();
    for t in &traces {
        let windows = if t.packets.is_empty() { Vec::new() } else { segment(t, &wcfg)? };
        let active: Vec<_> = windows.into_iter().filter(|w| w.is_active(wcfg.tau_bytes)).collect();
        if active.is_empty() {
            return Err(FusionError::FilteredWindow(format!("{} (no active window)", t.trace_id())).into());
        }
        let id = t.trace_id();
        for w in &active {
            let rec = PredictionRecord {
                window_id: w.window_id(),
                trace_id: &id,
                start_s: w.start_s(),
                prediction: predict(&pipeline, w)?,
            };
            lines.push_str(&serde_json::to_string(&rec).expect("record serialises"));
            lines.push('\n');
        }
    }
    let p = out.join("predictions.jsonl");
    fs::write(&p, lines).map_err(|e| CliError::io(&p, e))?;
    info!("wrote {}", p.display());
    Ok(())
}

fn write_metrics(cfg: &ExperimentConfig, out: &Path, tag: &str, report: &MetricsReport) -> Result<(), CliError> {
    write_report(&out.join(format!("metrics_{tag}.csv")), cfg, |buf| {
        write_metrics_csv(report, &mut *buf)?;
        Ok(())
    })?;
    let header = strings(&["run", "seed", "class", "view", "precision", "recall", "f1", "n_test"]);
    write_report(&out.join(format!("runs_{tag}.csv")), cfg, |buf| {
        csv_body(buf, &header, |emit| {
            for r in &report.runs {
                emit(vec![
                    r.run.to_string(),
                    r.seed.to_string(),
                    r.target.to_string(),
                    r.view.name().to_string(),
                    format!("{:.6}", r.prf.precision),
                    format!("{:.6}", r.prf.recall),
                    format!("{:.6}", r.prf.f1),
                    r.n_test.to_string(),
                ]);
            }
        })
    })
}

fn eval_closed(cfg: &ExperimentConfig) -> Result<(), CliError> {
    let corpus = load_corpus(&corpus_dir(cfg)?)?;
    let out = out_dir(cfg)?;
    info!("closed-world evaluation over {} runs", cfg.eval.seeds.len());
    let report = evaluate_closed_world(&corpus, &cfg.eval_config())?;
    write_metrics(cfg, &out, "closed", &report)
}

fn eval_open(cfg: &ExperimentConfig) -> Result<(), CliError> {
    let corpus = load_corpus(&corpus_dir(cfg)?)?;
    let out = out_dir(cfg)?;
    info!("open-world evaluation holding out {:?}", cfg.eval.holdout_models);
    let report = evaluate_open_world(&corpus, &cfg.eval.holdout_models, &cfg.eval_config())?;
    write_metrics(cfg, &out, "open", &report)
}

fn sweep(cfg: &ExperimentConfig) -> Result<(), CliError> {
    let corpus = load_corpus(&corpus_dir(cfg)?)?;
    let out = out_dir(cfg)?;
    info!("window sweep over {:?} s", cfg.eval.sweep_lengths);
    let rows = window_sweep(&corpus, &cfg.eval.sweep_lengths, &cfg.eval_config())?;
    write_report(&out.join("sweep.csv"), cfg, |buf| {
        write_sweep_csv(&rows, &mut *buf)?;
        Ok(())
    })
}

fn analyze(cfg: &ExperimentConfig) -> Result<(), CliError> {
    let corpus = load_corpus(&corpus_dir(cfg)?)?;
    let out = out_dir(cfg)?;
    let kl = kl_report(&corpus, &cfg.kl)?;
    write_report(&out.join("kl.csv"), cfg, |buf| {
        write_kl_csv(&kl, &mut *buf)?;
        Ok(())
    })?;
    let data = featurize_corpus(&corpus, &cfg.pipeline.window, &cfg.pipeline.features)?;
    let mut names: Vec<String> = flow_feature_names().into_iter().map(|n| format!("flow_{n}")).collect();
    names.extend(
        cfg.pipeline
            .features
            .packet_feature_names()
            .into_iter()
            .map(|n| format!("pkt_{n}")),
    );
    let rows: Vec<Vec<f64>> = data
        .flow
        .iter()
        .zip(&data.packet)
        .map(|(f, p)| f.iter().chain(p).copied().collect())
        .collect();
    for target in TargetClass::ALL {
        let y = data.binary_labels(target)?;
        let scores = fisher_score(&rows, &y)?;
        let ranked = fisher_ranking(&names, &scores);
        write_report(&out.join(format!("fisher_{target}.csv")), cfg, |buf| {
            write_fisher_csv(&ranked, &mut *buf)?;
            Ok(())
        })?;
    }
    Ok(())
}

fn profile<'a>(cfg: &'a ExperimentConfig, name: &str) -> Result<&'a ModelProfile, CliError> {
    cfg.scenario
        .models
        .iter()
        .find(|m| m.name == name)
        .ok_or_else(|| CliError::from(AnalysisError::UnknownModelName(name.to_string())))
}

fn attack_sim(cfg: &ExperimentConfig) -> Result<(), CliError> {
    let out = out_dir(cfg)?;
    let a = &cfg.attack;
    let header = strings(&[
        "model",
        "family",
        "sync_mode",
        "schedule",
        "seed",
        "attacked",
        "denial_frac",
        "rounds",
        "baseline_time_s",
        "attacked_time_s",
        "relative_delay",
        "duty_cycle",
        "cost",
        "delay_per_cost",
    ]);
    let mut rows = Vec::new();
    for name in &a.models {
        let model = profile(cfg, name)?;
        for &mode in &a.sync_modes {
            let sessions = federation(model, &a.link, mode);
            for schedule in &a.schedules {
                let gate = match schedule.as_str() {
                    "always" => ThrottleGate::Always,
                    "matched" => ThrottleGate::tuned_for(model, &a.link, a.denial_frac),
                    other => ThrottleGate::tuned_for(profile(cfg, other)?, &a.link, a.denial_frac),
                };
                for &seed in &a.seeds {
                    let r = emulate_throttle(
                        &sessions,
                        &ThrottleSpec {
                            attacked: a.attacked.clone(),
                            denial_frac: a.denial_frac,
                            sync_mode: mode,
                            gate,
                            seed,
                        },
                    )?;
                    let attacked: Vec<String> = a.attacked.iter().map(|i| i.to_string()).collect();
                    rows.push(vec![
                        r.model,
                        model.family.to_string(),
                        mode.to_string(),
                        schedule.clone(),
                        seed.to_string(),
                        attacked.join(";"),
                        format!("{:.6}", a.denial_frac),
                        r.rounds_to_converge.to_string(),
                        format!("{:.6}", r.baseline_time_s),
                        format!("{:.6}", r.attacked_time_s),
                        format!("{:.6}", r.relative_delay),
                        format!("{:.6}", r.duty_cycle),
                        format!("{:.6}", r.cost),
                        format!("{:.6}", r.delay_per_cost),
                    ]);
                }
            }
        }
    }
    write_report(&out.join("attack.csv"), cfg, |buf| {
        csv_body(buf, &header, |emit| rows.into_iter().for_each(emit))
    })
}
