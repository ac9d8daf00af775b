use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context, Result};
use xdrec_core::corpus::{
    build_corpus, generate_synthetic, ingest_events, make_splits, read_prepared, write_events,
    write_prepared, DatasetStats, DomainLabels, Prepared,
};
use xdrec_core::evaluator::evaluate;
use xdrec_core::seqmodel::model_tables;
use xdrec_core::spectrum::{probe_spectrum, ProbeSpec};
use xdrec_core::trainer::{load_checkpoint, save_checkpoint, EpochRecord};
use xdrec_core::{
    fit, Ablation, Checkpoint, Domain, Graphs, HyperParams, MetricsReport, ModelView, Partition,
    RawGraphs,
};

use crate::args::{AblateArgs, EvalArgs, PrepareArgs, ProbeArgs, SynthArgs, TrainArgs};
use crate::config::{resolve_out, ExperimentConfig};
use crate::report::median_report;
use crate::UsageError;

pub const EVENTS_FILE: &str = "events.tsv";
pub const STATS_FILE: &str = "stats.json";
pub const CHECKPOINT_DIR: &str = "checkpoint";
pub const HISTORY_FILE: &str = "history.jsonl";
pub const SPECTRUM_FILE: &str = "spectrum.csv";

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn pick(flag: Option<&PathBuf>, config: Option<&PathBuf>, what: &str) -> Result<PathBuf> {
    flag.or(config)
        .cloned()
        .ok_or_else(|| usage(format!("no {what} given (flag or config)")))
}

fn out_dir(flag: Option<&PathBuf>, cfg: &ExperimentConfig) -> Result<PathBuf> {
    let dir = resolve_out(&pick(flag, cfg.out_dir.as_ref(), "output directory")?);
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir)
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn write_report(dir: &Path, stem: &str, report: &MetricsReport) -> Result<()> {
    write_file(
        &dir.join(format!("{stem}.json")),
        &(serde_json::to_string_pretty(report)? + "\n"),
    )?;
    write_file(&dir.join(format!("{stem}.csv")), &report.to_csv())
}

pub fn synth(cfg: &ExperimentConfig, args: &SynthArgs, out: &mut dyn Write) -> Result<()> {
    let mut spec = cfg.synth.clone();
    if let Some(v) = args.users {
        spec.n_users = v;
    }
    if let Some(v) = args.items_per_domain {
        spec.n_items_per_domain = v;
    }
    if let Some(v) = args.clusters {
        spec.n_clusters = v;
    }
    if let Some(v) = args.transfer_strength {
        spec.transfer_strength = v;
    }
    if let Some(v) = args.seed {
        spec.seed = v;
    }
    let events = generate_synthetic(&spec)?;
    let dir = out_dir(args.out.as_ref(), cfg)?;
    let path = dir.join(EVENTS_FILE);
    let file = fs::File::create(&path).with_context(|| format!("creating {}", path.display()))?;
    let mut sink = std::io::BufWriter::new(file);
    write_events(&mut sink, &events)?;
    sink.flush()?;
    writeln!(out, "events={}\npath={}", events.len(), path.display())?;
    Ok(())
}

fn parse_label(s: &str) -> Result<(String, Domain)> {
    let (name, domain) = s
        .split_once('=')
        .ok_or_else(|| usage(format!("label {s:?} is not NAME=X|Y")))?;
    let domain = domain.parse().map_err(|e: String| usage(e))?;
    Ok((name.to_string(), domain))
}

pub fn prepare(cfg: &ExperimentConfig, args: &PrepareArgs, out: &mut dyn Write) -> Result<()> {
    let events_path = pick(args.events.as_ref(), cfg.data.events.as_ref(), "event file")?;
    let dir = match (&args.out, &cfg.data.prepared) {
        (None, Some(p)) => out_dir(Some(p), cfg)?,
        (flag, _) => out_dir(flag.as_ref(), cfg)?,
    };
    let data = &cfg.data;
    let min_interactions = args.min_interactions.unwrap_or(data.min_interactions);
    let min_domain_len = args.min_domain_len.unwrap_or(data.min_domain_len);
    let split_seed = args.split_seed.unwrap_or(data.split_seed);
    let window = args.window.unwrap_or(cfg.graph.window);
    let mut labels: HashMap<String, Domain> = data.labels.clone().into_iter().collect();
    for l in &args.labels {
        let (name, d) = parse_label(l)?;
        labels.insert(name, d);
    }

    let file = fs::File::open(&events_path)
        .map_err(|e| usage(format!("{}: {e}", events_path.display())))?;
    let ingest = ingest_events(std::io::BufReader::new(file), &DomainLabels::new(labels))?;
    for r in ingest.rejected.iter().take(5) {
        eprintln!("rejected line {}: {}", r.line, r.reason);
    }
    let corpus = build_corpus(&ingest.events, min_interactions, min_domain_len)?;
    let split = make_splits(&corpus.sequences, split_seed);
    let (n_x, n_y) = (corpus.vocab.size(Domain::X), corpus.vocab.size(Domain::Y));
    let graphs = RawGraphs::build(&split.train, n_x, n_y, window)?;
    write_prepared(&dir, &corpus.vocab, &split)?;
    graphs.write(&dir)?;
    let stats = DatasetStats::compute(&corpus, &split);
    let summary = serde_json::json!({
        "stats": stats,
        "filter": corpus.stats,
        "rejected_lines": ingest.rejected.len(),
        "min_interactions": min_interactions,
        "min_domain_len": min_domain_len,
        "split_seed": split_seed,
        "window": window,
    });
    write_file(
        &dir.join(STATS_FILE),
        &(serde_json::to_string_pretty(&summary)? + "\n"),
    )?;
    write!(out, "{}", stats.to_block())?;
    writeln!(out, "rejected_lines={}", ingest.rejected.len())?;
    Ok(())
}

/// A prepared corpus with its normalized graphs.
pub struct Data {
    pub prepared: Prepared,
    pub graphs: Graphs,
    pub n_x: usize,
    pub n_y: usize,
}

pub fn load_data(dir: &Path) -> Result<Data> {
    if !dir.is_dir() {
        return Err(usage(format!(
            "prepared directory {} does not exist",
            dir.display()
        )));
    }
    let prepared = read_prepared(dir)?;
    let graphs = RawGraphs::read(dir)?.normalized();
    let n_x = prepared.vocab.size(Domain::X);
    let n_y = prepared.vocab.size(Domain::Y);
    if graphs.x.n() != n_x || graphs.y.n() != n_y || graphs.mixed.n() != n_x + n_y {
        return Err(usage("graphs do not match the vocabulary; rerun prepare"));
    }
    Ok(Data {
        prepared,
        graphs,
        n_x,
        n_y,
    })
}

fn data_dir(flag: Option<&PathBuf>, cfg: &ExperimentConfig) -> Result<PathBuf> {
    pick(flag, cfg.data.prepared.as_ref(), "prepared data directory").map(|p| resolve_out(&p))
}

fn progress_line(seed: u64, r: &EpochRecord) {
    let val = r
        .val_mrr
        .map_or_else(|| "-".to_string(), |v| format!("{v:.4}"));
    eprintln!(
        "seed {seed} epoch {} eta {:.3} loss {:.4} val_mrr {val} ({:.2}s)",
        r.epoch, r.eta, r.loss, r.seconds
    );
}

/// Trains one seed into `dir` and returns its test report.
pub fn train_one(hp: &HyperParams, data: &Data, dir: &Path, quiet: bool) -> Result<MetricsReport> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let split = &data.prepared.split;
    let val = split.instances(Partition::Val);
    let seed = hp.seed;
    let result = fit(
        hp,
        &data.graphs,
        data.n_x,
        data.n_y,
        &split.train,
        &val,
        |r| {
            if !quiet {
                progress_line(seed, r);
            }
        },
    )?;
    let mut history = String::new();
    for r in &result.history {
        history.push_str(&serde_json::to_string(r)?);
        history.push('\n');
    }
    write_file(&dir.join(HISTORY_FILE), &history)?;

    let view = ModelView {
        params: &result.best.params,
        hp,
        n_x: data.n_x,
        global_override: None,
    };
    let test = evaluate(&view, &data.graphs, &split.eval, Partition::Test)?;
    let mut best = result.best;
    if let Some(v) = best.manifest.metrics.take() {
        best.manifest.metrics = Some(serde_json::json!({ "val": v, "test": test }));
    }
    save_checkpoint(&dir.join(CHECKPOINT_DIR), &best)?;
    if let Some(val) = result
        .history
        .iter()
        .find(|r| Some(r.epoch) == best.manifest.best_epoch)
    {
        if let Some(report) = &val.val {
            write_report(dir, "metrics_val", report)?;
        }
    }
    write_report(dir, "metrics_test", &test)?;
    Ok(test)
}

fn run_training(
    cfg: &ExperimentConfig,
    args: &TrainArgs,
    extra: Ablation,
    out: &mut dyn Write,
) -> Result<()> {
    let mut hp = cfg.hyperparams()?;
    args.hyper.apply(&mut hp);
    hp.ablation = hp.ablation.merge(extra);
    if let Some(seed) = args.seed {
        hp.seed = seed;
    }
    hp.validate().map_err(|e| usage(e.to_string()))?;
    let data = load_data(&data_dir(args.data.as_ref(), cfg)?)?;
    let dir = out_dir(args.out.as_ref(), cfg)?;
    write_file(
        &dir.join("hyperparams.json"),
        &(serde_json::to_string_pretty(&hp)? + "\n"),
    )?;

    if args.seeds.is_empty() {
        let test = train_one(&hp, &data, &dir, args.quiet)?;
        writeln!(out, "{}", serde_json::to_string_pretty(&test)?)?;
        return Ok(());
    }
    let mut reports = Vec::new();
    for &seed in &args.seeds {
        let hp = HyperParams { seed, ..hp.clone() };
        let report = train_one(&hp, &data, &dir.join(format!("seed-{seed}")), args.quiet)?;
        writeln!(out, "seed {seed} test_mrr {:.6}", report.mean_mrr())?;
        reports.push(report);
    }
    let median = median_report(&reports).ok_or_else(|| anyhow!("no reports to summarize"))?;
    write_report(&dir, "median_test", &median)?;
    writeln!(out, "median test_mrr {:.6}", median.mean_mrr())?;
    Ok(())
}

pub fn train(cfg: &ExperimentConfig, args: &TrainArgs, out: &mut dyn Write) -> Result<()> {
    run_training(cfg, args, Ablation::default(), out)
}

pub fn ablate(cfg: &ExperimentConfig, args: &AblateArgs, out: &mut dyn Write) -> Result<()> {
    let letter = args.variant.to_ascii_uppercase();
    if !('B'..='G').contains(&letter) {
        return Err(usage(format!(
            "variant must be one of B-G, got {:?}",
            args.variant
        )));
    }
    run_training(cfg, &args.train, Ablation::variant(letter)?, out)
}

fn load_for_eval(path: &Path, data: &Data) -> Result<Checkpoint> {
    if !path.is_dir() {
        return Err(usage(format!(
            "checkpoint directory {} does not exist",
            path.display()
        )));
    }
    let ckpt = load_checkpoint(path)?;
    if ckpt.manifest.n_x != data.n_x || ckpt.manifest.n_y != data.n_y {
        return Err(usage(format!(
            "checkpoint vocabulary {}x{} does not match prepared data {}x{}",
            ckpt.manifest.n_x, ckpt.manifest.n_y, data.n_x, data.n_y
        )));
    }
    Ok(ckpt)
}

pub fn eval(cfg: &ExperimentConfig, args: &EvalArgs, out: &mut dyn Write) -> Result<()> {
    let data = load_data(&data_dir(args.data.as_ref(), cfg)?)?;
    let ckpt = load_for_eval(&args.checkpoint, &data)?;
    let view = ModelView {
        params: &ckpt.params,
        hp: &ckpt.manifest.hyperparams,
        n_x: data.n_x,
        global_override: ckpt.global_override.as_ref(),
    };
    let report = evaluate(
        &view,
        &data.graphs,
        &data.prepared.split.eval,
        args.partition,
    )?;
    if let Some(out) = &args.out {
        let dir = out_dir(Some(out), cfg)?;
        write_report(
            &dir,
            &format!("metrics_{}", args.partition.as_str()),
            &report,
        )?;
    }
    writeln!(out, "{}", serde_json::to_string_pretty(&report)?)?;
    Ok(())
}

fn parse_group(s: &str) -> Result<(usize, usize)> {
    let bad = || usage(format!("group {s:?} is not FIRST-LAST"));
    let (a, b) = s.split_once('-').ok_or_else(bad)?;
    Ok((
        a.trim().parse().map_err(|_| bad())?,
        b.trim().parse().map_err(|_| bad())?,
    ))
}

pub fn probe(cfg: &ExperimentConfig, args: &ProbeArgs, out: &mut dyn Write) -> Result<()> {
    let (first, last) = parse_group(&args.group)?;
    let spec = ProbeSpec {
        first,
        last,
        coefficient: args.coefficient,
    };
    spec.validate().map_err(|e| usage(e.to_string()))?;
    let data = load_data(&data_dir(args.data.as_ref(), cfg)?)?;
    let ckpt = load_for_eval(&args.checkpoint, &data)?;
    let hp = &ckpt.manifest.hyperparams;
    let global = match &ckpt.global_override {
        Some(g) => g.clone(),
        None => {
            model_tables(
                &ckpt.params,
                hp.encoder.kind,
                data.n_x,
                &data.graphs,
                hp.propagation(),
            )
            .global
        }
    };
    let probed = probe_spectrum(&global, &spec).map_err(|e| usage(e.to_string()))?;

    let dir = resolve_out(&args.out);
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut csv = String::from("pre,post\n");
    for (pre, post) in probed.before.iter().zip(&probed.after) {
        csv.push_str(&format!("{pre:e},{post:e}\n"));
    }
    write_file(&dir.join(SPECTRUM_FILE), &csv)?;
    let mut manifest = ckpt.manifest.clone();
    manifest.metrics = None;
    let derived = Checkpoint {
        manifest,
        params: ckpt.params.clone(),
        moments: None,
        global_override: Some(probed.matrix),
    };
    save_checkpoint(&dir.join(CHECKPOINT_DIR), &derived)?;
    writeln!(
        out,
        "probed singular values {first}-{last} by {}; wrote {}",
        args.coefficient,
        dir.display()
    )?;
    Ok(())
}
