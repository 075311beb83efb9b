mod labels;

use std::collections::BTreeSet;
use std::fs;
use std::io::{self, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use ccs_core::assemble::{assemble, AssembleConfig};
use ccs_core::detect::{sweep_confidence, DetectionSet, Detector, HeuristicTableDetector, SweepCase};
use ccs_core::ml::{self, RandomForestModel, TrainConfig};
use ccs_core::model::{self, LabelSet, ParsedDocument, ParsedPage};
use ccs_core::parser::{parse_document, FixtureBackend, NormalizationConfig, PdfBackend, RAW_SNIPPETS_FORMAT};
use ccs_core::synth::corpus::{generate_doc, oracle_label, Template};
use ccs_pipeline::bench::bench_scaling;
use ccs_pipeline::service::Service;
use ccs_pipeline::store::{hash_bytes, Kind, MetadataRecord};
use ccs_pipeline::{ChainTemplate, FileBroker, Operation, Orchestrator, QueueConfig, Store, TaskMessage};
use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;

use labels::LabelsFile;

#[derive(Parser)]
#[command(
    name = "ccs",
    version,
    about = "Convert programmatic PDFs into structured JSON documents"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse a PDF (or a raw-snippets.v1 fixture) into parsed-document.v1.
    Parse {
        input: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Train a template model from labeled parsed documents.
    Train {
        /// Directory of labeled parsed-document.v1 files.
        #[arg(long)]
        annotations: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Label set JSON; defaults to the labels found in the data.
        #[arg(long)]
        labels: Option<PathBuf>,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Predict cell labels with a trained model, writing labels.v1.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        doc: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Assemble a labeled document into structured-document.v1.
    Assemble {
        #[arg(long)]
        doc: PathBuf,
        /// labels.v1 to apply; without it the document's own labels are used.
        #[arg(long)]
        labels: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Run the built-in heuristic table detector, writing detections.v1.
    Detect {
        #[arg(long)]
        doc: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Sweep the detection confidence threshold against table ground truth.
    DetectEval {
        #[arg(long)]
        doc: PathBuf,
        #[arg(long)]
        detections: PathBuf,
        /// labels.v1 or a labeled parsed document; defaults to the labels in --doc.
        #[arg(long)]
        truth: Option<PathBuf>,
        #[arg(long, default_value_t = 0.5)]
        min_overlap: f64,
        #[arg(long, default_value = "table")]
        table_label: String,
    },
    /// Generate a synthetic corpus: PDFs plus oracle-labeled parsed documents.
    Synth {
        #[arg(long, value_enum, default_value_t = TemplateArg::Journal)]
        template: TemplateArg,
        #[arg(long, default_value_t = 10)]
        docs: usize,
        #[arg(long, default_value_t = 1)]
        pages: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Store PDFs and enqueue their conversion on the file-backed queue.
    Submit {
        pdfs: Vec<PathBuf>,
        #[arg(long, env = "CCS_DATA_DIR", default_value = "ccs-data")]
        data: PathBuf,
        /// Model file; adds predict and assemble to each parse task.
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Show the status of a task chain.
    Status {
        task_id: String,
        #[arg(long, env = "CCS_DATA_DIR", default_value = "ccs-data")]
        data: PathBuf,
    },
    /// Run workers against the file-backed queue.
    Work {
        #[arg(long, default_value = "parse=1,ml=1,assemble=1")]
        queues: String,
        #[arg(long, env = "CCS_DATA_DIR", default_value = "ccs-data")]
        data: PathBuf,
        /// Exit once every queue is empty.
        #[arg(long)]
        drain: bool,
        /// Claims older than this are returned to their queue on startup.
        #[arg(long, default_value_t = 600)]
        lease_secs: u64,
    },
    /// Measure stage speedups over worker counts.
    Bench {
        /// Directory of PDFs.
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, default_value = "1,2,4,8", value_delimiter = ',')]
        workers: Vec<usize>,
        /// Model for the ml stage; a small synthetic-journal model by default.
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Serve the REST API with in-process workers.
    Serve {
        #[arg(long, env = "CCS_PORT", default_value_t = 8080)]
        port: u16,
        #[arg(long, env = "CCS_DATA_DIR", default_value = "ccs-data")]
        data: PathBuf,
        #[arg(long, default_value = "parse=2,ml=1,assemble=1")]
        queues: String,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum TemplateArg {
    Journal,
    Conference,
}

impl From<TemplateArg> for Template {
    fn from(t: TemplateArg) -> Self {
        match t {
            TemplateArg::Journal => Template::Journal,
            TemplateArg::Conference => Template::Conference,
        }
    }
}

/// Writes a line to stdout, returning io errors instead of panicking.
macro_rules! out {
    ($($arg:tt)*) => {
        writeln!(io::stdout().lock(), $($arg)*)?
    };
}

fn main() -> Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()))
        .with_writer(std::io::stderr)
        .init();
    match run(Cli::parse().command) {
        Err(e)
            if e.downcast_ref::<io::Error>()
                .is_some_and(|e| e.kind() == io::ErrorKind::BrokenPipe) =>
        {
            Ok(())
        }
        r => r,
    }
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).with_context(|| format!("reading {}", path.display()))
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    model::from_json(&read(path)?).with_context(|| format!("decoding {}", path.display()))
}

fn read_parsed(path: &Path) -> Result<ParsedDocument> {
    model::deserialize_parsed(&read(path)?).with_context(|| format!("decoding {}", path.display()))
}

fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Parse { input, config, output } => {
            let config: NormalizationConfig = config.map(|c| read_json(&c)).transpose()?.unwrap_or_default();
            let bytes = read(&input)?;
            let name = input
                .file_name()
                .map_or_else(String::new, |n| n.to_string_lossy().into_owned());
            let fixture = bytes.starts_with(b"{") && String::from_utf8_lossy(&bytes).contains(RAW_SNIPPETS_FORMAT);
            let doc = if fixture {
                parse_document(&FixtureBackend, &bytes, &name, &config)
            } else {
                parse_document(&PdfBackend, &bytes, &name, &config)
            }
            .map_err(|e| anyhow::anyhow!("{}: {e}", e.code()))?;
            write(&output, &model::serialize_parsed(&doc)?)?;
            eprintln!("{}: {} pages, {} cells", doc.doc_id, doc.pages.len(), doc.cell_count());
        }
        Command::Train {
            annotations,
            config,
            labels,
            output,
        } => {
            let config: TrainConfig = config.map(|c| read_json(&c)).transpose()?.unwrap_or_default();
            let pages = labeled_pages(&annotations)?;
            let labels = match labels {
                Some(p) => read_json(&p)?,
                None => labels_in(&pages)?,
            };
            let m = ml::train(&pages, &labels, &config).map_err(|e| anyhow::anyhow!("{}: {e}", e.code()))?;
            write(&output, &m.to_json())?;
            eprintln!("trained on {} pages, {} labels", pages.len(), labels.len());
        }
        Command::Predict { model, doc, output } => {
            let bytes = read(&model)?;
            let m = RandomForestModel::from_json(&bytes).map_err(|e| anyhow::anyhow!("{}: {e}", e.code()))?;
            let doc = read_parsed(&doc)?;
            let file = LabelsFile::predict(&m, hash_bytes(&bytes), &doc)?;
            write(&output, &serde_json::to_vec_pretty(&file)?)?;
        }
        Command::Assemble {
            doc,
            labels,
            config,
            output,
        } => {
            let mut doc = read_parsed(&doc)?;
            if let Some(l) = labels {
                let file: LabelsFile = read_json(&l)?;
                file.apply(&mut doc)?;
            }
            let config: AssembleConfig = config.map(|c| read_json(&c)).transpose()?.unwrap_or_default();
            let out = assemble(&doc, &config).map_err(|e| anyhow::anyhow!("{}: {e}", e.code()))?;
            write(&output, &model::serialize_structured(&out)?)?;
        }
        Command::Detect { doc, output } => {
            let doc = read_parsed(&doc)?;
            let set = HeuristicTableDetector::default().detect_document(&doc);
            write(&output, &serde_json::to_vec_pretty(&set)?)?;
        }
        Command::DetectEval {
            doc,
            detections,
            truth,
            min_overlap,
            table_label,
        } => detect_eval(&doc, &detections, truth.as_deref(), min_overlap, &table_label)?,
        Command::Synth {
            template,
            docs,
            pages,
            seed,
            output,
        } => synth(template.into(), docs, pages, seed, &output)?,
        Command::Submit { pdfs, data, model } => submit(&pdfs, &data, model.as_deref())?,
        Command::Status { task_id, data } => {
            let orch = file_orchestrator(&data)?;
            let s = orch
                .chain_status(&task_id)
                .with_context(|| format!("no task '{task_id}'"))?;
            out!("{}", serde_json::to_string_pretty(&s)?);
        }
        Command::Work {
            queues,
            data,
            drain,
            lease_secs,
        } => work(&queues, &data, drain, Duration::from_secs(lease_secs))?,
        Command::Bench {
            corpus,
            workers,
            model,
            output,
        } => bench(&corpus, &workers, model.as_deref(), &output)?,
        Command::Serve { port, data, queues } => {
            let queues: QueueConfig = queues.parse()?;
            let svc = Service::open(&data, &queues)?;
            let addr = SocketAddr::from(([0, 0, 0, 0], port));
            tokio::runtime::Runtime::new()?.block_on(svc.serve(addr))?;
        }
    }
    Ok(())
}

fn json_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "json"))
        .collect();
    files.sort();
    Ok(files)
}

/// Pages whose cells are all labeled, from every parsed document in `dir`.
fn labeled_pages(dir: &Path) -> Result<Vec<ParsedPage>> {
    let mut pages = Vec::new();
    let mut skipped = 0;
    for f in json_files(dir)? {
        let Ok(doc) = model::deserialize_parsed(&read(&f)?) else {
            tracing::warn!(file = %f.display(), "not a parsed document, skipped");
            continue;
        };
        for p in doc.pages {
            if p.cells.iter().all(|c| c.label.is_some()) && !p.cells.is_empty() {
                pages.push(p);
            } else {
                skipped += 1;
            }
        }
    }
    if skipped > 0 {
        tracing::warn!(skipped, "pages with unlabeled cells skipped");
    }
    if pages.is_empty() {
        bail!("empty-dataset: no fully labeled pages under {}", dir.display());
    }
    Ok(pages)
}

/// Labels present in the data, in the default set's order where known.
fn labels_in(pages: &[ParsedPage]) -> Result<LabelSet> {
    let found: BTreeSet<&str> = pages
        .iter()
        .flat_map(|p| &p.cells)
        .filter_map(|c| c.label.as_deref())
        .collect();
    let default = LabelSet::default_set();
    let mut names: Vec<String> = (0..default.len())
        .map(|i| default.name(i))
        .filter(|n| found.contains(n))
        .map(String::from)
        .collect();
    names.extend(
        found
            .iter()
            .filter(|n| default.index_of(n).is_none())
            .map(|n| n.to_string()),
    );
    Ok(LabelSet::new(names)?)
}

fn detect_eval(doc: &Path, detections: &Path, truth: Option<&Path>, min_overlap: f64, table: &str) -> Result<()> {
    let mut doc = read_parsed(doc)?;
    if let Some(t) = truth {
        let bytes = read(t)?;
        match model::deserialize_parsed(&bytes) {
            Ok(labeled) => doc = labeled,
            Err(_) => model::from_json::<LabelsFile>(&bytes)?.apply(&mut doc)?,
        }
    }
    let dets = DetectionSet::from_json(&read(detections)?).map_err(|e| anyhow::anyhow!("{}: {e}", e.code()))?;
    let truth: Vec<Vec<bool>> = doc
        .pages
        .iter()
        .map(|p| p.cells.iter().map(|c| c.label.as_deref() == Some(table)).collect())
        .collect();
    let cases: Vec<SweepCase> = doc
        .pages
        .iter()
        .zip(&truth)
        .map(|(p, t)| SweepCase {
            cells: &p.cells,
            truth: t,
            detections: dets.page(p.page_number()),
        })
        .collect();
    let r = sweep_confidence(&cases, min_overlap).map_err(|e| anyhow::anyhow!("{}: {e}", e.code()))?;
    out!(
        "{:>9} {:>7} {:>7} {:>7} {:>9} {:>9} {:>9}",
        "threshold",
        "tp",
        "fp",
        "fn",
        "precision",
        "recall",
        "f1"
    );
    for p in &r.points {
        out!(
            "{:>9.4} {:>7} {:>7} {:>7} {:>9.4} {:>9.4} {:>9.4}",
            p.threshold,
            p.tp,
            p.fp,
            p.fn_,
            p.precision,
            p.recall,
            p.f1
        );
    }
    out!("best threshold {:.4} f1 {:.4}", r.best_threshold, r.best_f1);
    Ok(())
}

fn synth(template: Template, docs: usize, pages: usize, seed: u64, out: &Path) -> Result<()> {
    if pages == 0 {
        bail!("--pages must be positive");
    }
    fs::create_dir_all(out.join("truth"))?;
    for i in 0..docs {
        let d = generate_doc(
            template,
            pages,
            seed.wrapping_add(i as u64),
            format!("{}-{i:04}", template.name()),
        );
        let pdf = d.render_pdf();
        let mut parsed = ccs_core::parser::parse_pdf(&pdf, &format!("{}.pdf", d.name), &NormalizationConfig::default())
            .map_err(|e| anyhow::anyhow!("{}: {e}", e.code()))?;
        let missing = oracle_label(&mut parsed, &d);
        if missing > 0 {
            tracing::warn!(doc = %d.name, missing, "cells without ground truth");
        }
        write(&out.join(format!("{}.pdf", d.name)), &pdf)?;
        write(
            &out.join("truth").join(format!("{}.json", d.name)),
            &model::serialize_parsed(&parsed)?,
        )?;
    }
    eprintln!("wrote {docs} documents to {}", out.display());
    Ok(())
}

fn file_orchestrator(data: &Path) -> Result<Orchestrator> {
    let store = Arc::new(Store::open(data.join("store"))?);
    let broker = Arc::new(FileBroker::open(data.join("queue"))?);
    Ok(Orchestrator::new(broker, store))
}

fn submit(pdfs: &[PathBuf], data: &Path, model: Option<&Path>) -> Result<()> {
    let orch = file_orchestrator(data)?;
    let model_key = model
        .map(|m| -> Result<String> {
            let bytes = read(m)?;
            RandomForestModel::from_json(&bytes).map_err(|e| anyhow::anyhow!("{}: {e}", e.code()))?;
            Ok(orch
                .store()
                .put(&bytes, "application/json", Some(MetadataRecord::new("", Kind::Model)))?)
        })
        .transpose()?;
    for path in pdfs {
        let name = path
            .file_name()
            .map_or_else(String::new, |n| n.to_string_lossy().into_owned());
        let key = orch.store().put(
            &read(path)?,
            "application/pdf",
            Some(MetadataRecord::new("", Kind::Pdf).attr("name", name.clone())),
        )?;
        let task = TaskMessage::new(Operation::Parse, vec![key.clone()], json!({ "source_name": name }));
        let id = match &model_key {
            Some(m) => orch.chain(
                task,
                ChainTemplate::new(Operation::Predict)
                    .inputs([m.clone()])
                    .then(ChainTemplate::new(Operation::Assemble)),
            )?,
            None => orch.submit(task)?,
        };
        out!("{id}\t{}", path.display());
    }
    Ok(())
}

fn work(queues: &str, data: &Path, drain: bool, lease: Duration) -> Result<()> {
    let queues: QueueConfig = queues.parse()?;
    let store = Arc::new(Store::open(data.join("store"))?);
    let broker = Arc::new(FileBroker::open(data.join("queue"))?);
    let orch = Orchestrator::new(broker.clone(), store);
    loop {
        let recovered = broker.recover_stale(lease)?;
        if recovered > 0 {
            tracing::info!(recovered, "stale claims returned to their queues");
        }
        let report = orch.run_workers(&queues);
        if report.executed > 0 || drain {
            tracing::info!(?report, "queues drained");
        }
        if drain {
            return Ok(());
        }
        std::thread::sleep(Duration::from_millis(500));
    }
}

fn bench(corpus: &Path, workers: &[usize], model: Option<&Path>, output: &Path) -> Result<()> {
    let mut docs = Vec::new();
    let mut entries: Vec<PathBuf> = fs::read_dir(corpus)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("pdf")))
        .collect();
    entries.sort();
    for p in entries {
        docs.push((p.file_name().unwrap().to_string_lossy().into_owned(), read(&p)?));
    }
    if docs.is_empty() {
        bail!("no PDFs in {}", corpus.display());
    }
    let model = match model {
        Some(m) => read(m)?,
        None => default_bench_model()?,
    };
    let work = tempdir_in(output)?;
    let report = bench_scaling(&docs, &model, workers, &work)?;
    let _ = fs::remove_dir_all(&work);
    let mut buf = Vec::new();
    report.write_csv(&mut buf)?;
    write(output, &buf)?;
    print!("{}", String::from_utf8_lossy(&buf));
    if !report.equivalent || report.failures > 0 {
        bail!(
            "results differ between worker counts (equivalent={}, failures={})",
            report.equivalent,
            report.failures
        );
    }
    Ok(())
}

fn tempdir_in(output: &Path) -> Result<PathBuf> {
    let base = output
        .parent()
        .filter(|d| !d.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    let dir = base.join(format!(".ccs-bench-{}", std::process::id()));
    fs::create_dir_all(&dir)?;
    Ok(dir)
}

fn default_bench_model() -> Result<Vec<u8>> {
    let pages: Vec<ParsedPage> = (0..4)
        .flat_map(|i| {
            generate_doc(Template::Journal, 4, i, format!("bench-{i}"))
                .to_parsed()
                .pages
        })
        .collect();
    let config = TrainConfig {
        n_trees: 20,
        ..TrainConfig::default()
    };
    let m = ml::train(&pages, &LabelSet::template_six(), &config).map_err(|e| anyhow::anyhow!("{}: {e}", e.code()))?;
    Ok(m.to_json())
}
