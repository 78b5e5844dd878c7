//! `sfc`: batch front end for the service-function-chaining pipeline.
//!
//! Subcommands cover the whole experiment loop: `validate` a topology file,
//! `gen-data` a labeled dataset, `train` a model, `eval` it on the test
//! split, `infer` a single request, and `topo-experiment` to rerun
//! evaluation on a grown topology without retraining.
//!
//! Every artifact-writing run drops a manifest (seed, config digest,
//! version) next to its outputs, and artifacts are stamped with the digest
//! of the config that produced them; `eval` and `train` refuse inputs with
//! a different stamp unless `--force`. All writes are atomic. `SFC_LOG`
//! controls verbosity (logs go to stderr, results to stdout).

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use serde::Serialize;

use sfc_core::config::AppConfig;
use sfc_core::dataset::{build_dataset, DatasetFile, Split};
use sfc_core::eval::{
    changed_topology_experiment, evaluate, report_emit, ArmOutcome, ChangedTopologyOutcome,
    EvalReport, TopologyPatch,
};
use sfc_core::featurize::{build_adjacency, build_annotation};
use sfc_core::fsutil::atomic_write;
use sfc_core::ledger::ResourceLedger;
use sfc_core::model::{ModelVariant, SfcModel};
use sfc_core::oracle::solve_unconstrained;
use sfc_core::path::{path_cost, PathClass};
use sfc_core::topology::{Request, Topology};
use sfc_core::train::train;

/// Missing input file; distinct from exit 1 (invalid content or failed run).
const EXIT_NO_INPUT: u8 = 66;

#[derive(Parser)]
#[command(name = "sfc", version, about = "Service function chaining: datasets, models, evaluation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Load a topology file, check every invariant, and print a summary
    /// with featurization dimensions.
    Validate {
        #[arg(long)]
        topology: PathBuf,
        /// Dump the annotation and adjacency matrices as CSV (for a
        /// placeholder request source 0 -> last node).
        #[arg(long)]
        dump_features: bool,
    },
    /// Simulate a request stream, label it with the exact oracle, and write
    /// the chronological train/val/test dataset.
    GenData {
        #[arg(long)]
        topology: PathBuf,
        /// TOML config; defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Overrides the simulation seed from the config.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one model variant on a dataset and write the checkpoint plus
    /// the per-epoch log.
    Train {
        #[arg(long)]
        topology: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// dnn | gg-dnn | gg-rnn; overrides the config.
        #[arg(long)]
        variant: Option<String>,
        /// Overrides the training seed from the config.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
        /// Proceed despite a config-digest mismatch on the dataset.
        #[arg(long)]
        force: bool,
    },
    /// Replay the test split against a live ledger and write the metrics
    /// report (JSON + per-request CSV).
    Eval {
        #[arg(long)]
        topology: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Proceed despite config-digest mismatches on the inputs.
        #[arg(long)]
        force: bool,
    },
    /// Generate a path for one request against an empty ledger and print it.
    Infer {
        #[arg(long)]
        topology: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        source: usize,
        #[arg(long)]
        destination: usize,
        /// Comma-separated VNF type names, in order; empty for none.
        #[arg(long, default_value = "")]
        chain: String,
        #[arg(long, default_value_t = 1.0)]
        bandwidth: f64,
        /// Delay budget in ms; defaults to 1.5x the unconstrained optimum.
        #[arg(long)]
        max_delay: Option<f64>,
    },
    /// Apply a patch to the topology, simulate a fresh labeled test stream
    /// on it, and evaluate the given checkpoints without retraining.
    TopoExperiment {
        #[arg(long)]
        topology: PathBuf,
        /// JSON patch: added_nodes, added_edges, added_instances.
        #[arg(long)]
        patch: PathBuf,
        /// May be given several times; each model gets its own arm.
        #[arg(long = "checkpoint", required = true)]
        checkpoints: Vec<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Proceed despite config-digest mismatches on the checkpoints.
        #[arg(long)]
        force: bool,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("SFC_LOG", "info"))
        .format_timestamp(None)
        .init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", render_error(&e));
            ExitCode::from(exit_code_for(&e))
        }
    }
}

/// Joins the cause chain, skipping causes already spelled out by a parent
/// (thiserror wrappers repeat their source in their own message).
fn render_error(e: &anyhow::Error) -> String {
    let mut out = e.to_string();
    for cause in e.chain().skip(1) {
        let s = cause.to_string();
        if !out.contains(&s) {
            out.push_str(": ");
            out.push_str(&s);
        }
    }
    out
}

fn exit_code_for(e: &anyhow::Error) -> u8 {
    let missing = e.chain().any(|cause| {
        if let Some(io) = cause.downcast_ref::<std::io::Error>() {
            return io.kind() == std::io::ErrorKind::NotFound;
        }
        matches!(
            cause.downcast_ref::<sfc_core::Error>(),
            Some(sfc_core::Error::Io(io)) if io.kind() == std::io::ErrorKind::NotFound
        )
    });
    if missing {
        EXIT_NO_INPUT
    } else {
        1
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Validate {
            topology,
            dump_features,
        } => cmd_validate(&topology, dump_features),
        Command::GenData {
            topology,
            config,
            seed,
            out,
        } => cmd_gen_data(&topology, config.as_deref(), seed, &out),
        Command::Train {
            topology,
            dataset,
            config,
            variant,
            seed,
            out,
            force,
        } => cmd_train(
            &topology,
            &dataset,
            config.as_deref(),
            variant.as_deref(),
            seed,
            &out,
            force,
        ),
        Command::Eval {
            topology,
            dataset,
            checkpoint,
            config,
            out,
            force,
        } => cmd_eval(&topology, &dataset, &checkpoint, config.as_deref(), &out, force),
        Command::Infer {
            topology,
            checkpoint,
            source,
            destination,
            chain,
            bandwidth,
            max_delay,
        } => cmd_infer(
            &topology,
            &checkpoint,
            source,
            destination,
            &chain,
            bandwidth,
            max_delay,
        ),
        Command::TopoExperiment {
            topology,
            patch,
            checkpoints,
            config,
            out,
            force,
        } => cmd_topo_experiment(&topology, &patch, &checkpoints, config.as_deref(), &out, force),
    }
}

fn load_topology(path: &Path) -> Result<Topology> {
    Topology::load(path).with_context(|| format!("loading topology {}", path.display()))
}

fn load_config(path: Option<&Path>) -> Result<AppConfig> {
    match path {
        Some(p) => AppConfig::load(p).with_context(|| format!("loading config {}", p.display())),
        None => Ok(AppConfig::default()),
    }
}

fn check_digest(what: &str, stamped: &str, current: &str, force: bool) -> Result<()> {
    if stamped == current {
        return Ok(());
    }
    if force {
        log::warn!(
            "{what} config digest {} does not match current {}; --force given, proceeding",
            short(stamped),
            short(current)
        );
        return Ok(());
    }
    bail!(
        "{what} was produced by config {stamped}, current config digest is {current}; \
         rerun with the original config or pass --force"
    );
}

fn short(digest: &str) -> &str {
    if digest.is_empty() {
        "<unstamped>"
    } else {
        &digest[..digest.len().min(12)]
    }
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    version: &'a str,
    seed: u64,
    config_digest: &'a str,
    topology_hash: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    variant: Option<String>,
    artifacts: Vec<String>,
}

fn write_manifest(out: &Path, m: &Manifest) -> Result<PathBuf> {
    let path = out.join(format!("manifest-{}.json", m.command));
    let mut bytes = serde_json::to_vec_pretty(m)?;
    bytes.push(b'\n');
    atomic_write(&path, &bytes)?;
    Ok(path)
}

fn cmd_validate(path: &Path, dump_features: bool) -> Result<()> {
    let t = load_topology(path)?;
    println!("topology {} is valid", path.display());
    println!("  nodes:       {}", t.node_count());
    println!("  edges:       {}", t.edges().len());
    println!(
        "  instances:   {} across {} VNF types ({})",
        t.instances().len(),
        t.vnf_types().len(),
        t.vnf_types()
            .iter()
            .map(|v| v.name.as_str())
            .collect::<Vec<_>>()
            .join(", ")
    );
    println!(
        "  annotation:  {} x {} (l_N = {})",
        t.node_count(),
        t.annotation_width(),
        t.annotation_width()
    );
    println!("  adjacency:   {0} x {0}", t.node_count());
    println!("  hash:        {}", t.hash());
    if dump_features {
        let r = placeholder_request(&t);
        println!("annotation matrix (source 0 -> node {}):", r.destination);
        print!("{}", build_annotation(&t, &r).to_csv());
        println!("adjacency operator:");
        print!("{}", build_adjacency(&t)?.to_csv());
    }
    Ok(())
}

fn placeholder_request(t: &Topology) -> Request {
    Request {
        id: 0,
        source: 0,
        destination: t.node_count() - 1,
        chain: vec![],
        bandwidth_demand: 1.0,
        max_delay_ms: 1.0,
        arrival_time: 0,
        expiry_time: 1,
    }
}

fn cmd_gen_data(topology: &Path, config: Option<&Path>, seed: Option<u64>, out: &Path) -> Result<()> {
    let t = load_topology(topology)?;
    let mut cfg = load_config(config)?;
    // The digest identifies the config file; flag overrides are recorded in
    // the manifest, so artifacts from one file match across overrides.
    let digest = cfg.digest();
    if let Some(s) = seed {
        cfg.simulation.seed = s;
    }
    let mut data = build_dataset(&cfg.simulation, &t, cfg.dataset).context("generating dataset")?;
    data.header.config_digest = digest.clone();
    let dataset_path = out.join("dataset.json");
    data.save(&dataset_path)?;
    write_manifest(
        out,
        &Manifest {
            command: "gen-data",
            version: env!("CARGO_PKG_VERSION"),
            seed: cfg.simulation.seed,
            config_digest: &digest,
            topology_hash: t.hash(),
            variant: None,
            artifacts: vec!["dataset.json".into()],
        },
    )?;
    let h = &data.header;
    println!(
        "dataset {} written: {} train / {} val / {} test (stream {} requests, {} feasible)",
        dataset_path.display(),
        h.counts.train,
        h.counts.val,
        h.counts.test,
        h.total_requests,
        h.feasible_labels
    );
    Ok(())
}

#[derive(Serialize)]
struct TrainLogHeader<'a> {
    format: &'a str,
    variant: String,
    seed: u64,
    config_digest: &'a str,
    best_epoch: usize,
    best_val_loss: f64,
}

#[allow(clippy::too_many_arguments)]
fn cmd_train(
    topology: &Path,
    dataset: &Path,
    config: Option<&Path>,
    variant: Option<&str>,
    seed: Option<u64>,
    out: &Path,
    force: bool,
) -> Result<()> {
    let t = load_topology(topology)?;
    let mut cfg = load_config(config)?;
    let digest = cfg.digest();
    if let Some(v) = variant {
        cfg.train.variant = v.parse::<ModelVariant>()?;
    }
    if let Some(s) = seed {
        cfg.train.seed = s;
    }
    let data = DatasetFile::load(dataset, &t)
        .with_context(|| format!("loading dataset {}", dataset.display()))?;
    check_digest("dataset", &data.header.config_digest, &digest, force)?;

    let outcome = train(&cfg.train, cfg.model.clone(), &data, &t)?;
    let mut model = outcome.model;
    model.set_config_digest(&digest);

    let name = cfg.train.variant.to_string();
    let ckpt_name = format!("{name}.checkpoint.json");
    model.save(&out.join(&ckpt_name), t.hash())?;

    let log_name = format!("{name}.train-log.jsonl");
    let mut log_text = serde_json::to_string(&TrainLogHeader {
        format: "sfc-train-log-v1",
        variant: name.clone(),
        seed: cfg.train.seed,
        config_digest: &digest,
        best_epoch: outcome.best_epoch,
        best_val_loss: outcome.best_val_loss,
    })?;
    for entry in &outcome.log {
        write!(log_text, "\n{}", serde_json::to_string(entry)?)?;
    }
    log_text.push('\n');
    atomic_write(&out.join(&log_name), log_text.as_bytes())?;

    write_manifest(
        out,
        &Manifest {
            command: &format!("train-{name}"),
            version: env!("CARGO_PKG_VERSION"),
            seed: cfg.train.seed,
            config_digest: &digest,
            topology_hash: t.hash(),
            variant: Some(name.clone()),
            artifacts: vec![ckpt_name.clone(), log_name],
        },
    )?;
    println!(
        "trained {name}: best epoch {} (val loss {:.6}, {} epochs run); checkpoint {}",
        outcome.best_epoch,
        outcome.best_val_loss,
        outcome.log.len(),
        out.join(&ckpt_name).display()
    );
    Ok(())
}

fn load_checkpoint(path: &Path, t: &Topology) -> Result<SfcModel> {
    let (model, topo_hash) = SfcModel::load(path)
        .with_context(|| format!("loading checkpoint {}", path.display()))?;
    if topo_hash != t.hash() {
        bail!(
            "checkpoint {} was trained on topology {}, not {} ({})",
            path.display(),
            short(&topo_hash),
            short(t.hash()),
            "use topo-experiment to evaluate across topologies"
        );
    }
    Ok(model)
}

fn format_ratio(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.4}")).unwrap_or_else(|| "n/a".into())
}

fn print_report(label: &str, report: &EvalReport) {
    println!(
        "{label}: {} requests | valid {} fail {} overmax {} | avg cost ratio {} (var {}) | fail ratio {} | overmax ratio {}",
        report.counts.total,
        report.counts.valid,
        report.counts.failure,
        report.counts.overmax,
        format_ratio(report.avg_cost_ratio),
        format_ratio(report.cost_ratio_variance),
        format_ratio(report.fail_ratio),
        format_ratio(report.overmax_ratio),
    );
}

fn cmd_eval(
    topology: &Path,
    dataset: &Path,
    checkpoint: &Path,
    config: Option<&Path>,
    out: &Path,
    force: bool,
) -> Result<()> {
    let t = load_topology(topology)?;
    let cfg = load_config(config)?;
    let digest = cfg.digest();
    let data = DatasetFile::load(dataset, &t)
        .with_context(|| format!("loading dataset {}", dataset.display()))?;
    let model = load_checkpoint(checkpoint, &t)?;
    check_digest("dataset", &data.header.config_digest, &digest, force)?;
    check_digest("checkpoint", model.config_digest(), &digest, force)?;

    let samples = data.split(Split::Test);
    let report = evaluate(&model, &t, &samples)?;
    let name = format!("eval-{}", model.config.variant);
    let (json_path, csv_path) = report_emit(&report, out, &name, Some(&digest))?;
    write_manifest(
        out,
        &Manifest {
            command: &name,
            version: env!("CARGO_PKG_VERSION"),
            seed: cfg.train.seed,
            config_digest: &digest,
            topology_hash: t.hash(),
            variant: Some(model.config.variant.to_string()),
            artifacts: vec![
                json_path.file_name().unwrap().to_string_lossy().into_owned(),
                csv_path.file_name().unwrap().to_string_lossy().into_owned(),
            ],
        },
    )?;
    print_report(&model.config.variant.to_string(), &report);
    println!("report written to {}", json_path.display());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_infer(
    topology: &Path,
    checkpoint: &Path,
    source: usize,
    destination: usize,
    chain: &str,
    bandwidth: f64,
    max_delay: Option<f64>,
) -> Result<()> {
    let t = load_topology(topology)?;
    let model = load_checkpoint(checkpoint, &t)?;
    let chain_ids = chain
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|name| {
            t.vnf_type_id(name)
                .ok_or_else(|| anyhow::anyhow!("unknown VNF type `{name}`"))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut r = Request {
        id: 0,
        source,
        destination,
        chain: chain_ids,
        bandwidth_demand: bandwidth,
        // Placeholder so the witness solve can validate; replaced below.
        max_delay_ms: 1.0,
        arrival_time: 0,
        expiry_time: 1,
    };
    r.validate(&t).map_err(anyhow::Error::from)?;
    r.max_delay_ms = match max_delay {
        Some(d) => d,
        None => {
            let witness = solve_unconstrained(&t, &r);
            if !witness.feasible {
                bail!("request cannot be served on this topology even without resource limits");
            }
            (1.5 * witness.cost).max(1.0)
        }
    };

    let ledger = ResourceLedger::new(&t);
    let (path, class) = model.generate_path(&t, &r, &ledger)?;
    let mut stage = 0usize;
    let rendered: Vec<String> = path
        .steps
        .iter()
        .map(|s| {
            if s.process {
                let ty = &t.vnf_types()[r.chain[stage]].name;
                stage += 1;
                format!("{}[{ty}]", s.node)
            } else {
                s.node.to_string()
            }
        })
        .collect();
    println!("path:  {}", rendered.join(" -> "));
    println!("class: {class}");
    if class != PathClass::Failure {
        let cost = path_cost(&t, &path, &r.chain)?;
        println!("cost:  {cost} ms (budget {} ms)", r.max_delay_ms);
    }
    Ok(())
}

#[derive(Serialize)]
struct ExperimentDoc<'a> {
    config_digest: &'a str,
    #[serde(flatten)]
    outcome: &'a ChangedTopologyOutcome,
}

fn cmd_topo_experiment(
    topology: &Path,
    patch: &Path,
    checkpoints: &[PathBuf],
    config: Option<&Path>,
    out: &Path,
    force: bool,
) -> Result<()> {
    let t = load_topology(topology)?;
    let cfg = load_config(config)?;
    let digest = cfg.digest();
    let patch = TopologyPatch::load(patch)
        .with_context(|| format!("loading patch {}", patch.display()))?;
    let mut models = Vec::with_capacity(checkpoints.len());
    for p in checkpoints {
        let model = load_checkpoint(p, &t)?;
        check_digest("checkpoint", model.config_digest(), &digest, force)?;
        models.push(model);
    }
    let refs: Vec<&SfcModel> = models.iter().collect();
    let outcome =
        changed_topology_experiment(&refs, &t, &patch, &cfg.simulation, cfg.dataset.test)?;

    let mut bytes = serde_json::to_vec_pretty(&ExperimentDoc {
        config_digest: &digest,
        outcome: &outcome,
    })?;
    bytes.push(b'\n');
    atomic_write(&out.join("experiment.json"), &bytes)?;
    write_manifest(
        out,
        &Manifest {
            command: "topo-experiment",
            version: env!("CARGO_PKG_VERSION"),
            seed: cfg.simulation.seed,
            config_digest: &digest,
            topology_hash: t.hash(),
            variant: None,
            artifacts: vec!["experiment.json".into()],
        },
    )?;

    println!(
        "patched topology {} ({} test requests)",
        short(&outcome.patched_topology_hash),
        outcome.test_size
    );
    for arm in &outcome.arms {
        match &arm.outcome {
            ArmOutcome::Report { report } => print_report(&arm.variant.to_string(), report),
            ArmOutcome::NotApplicable { reason } => {
                println!("{}: not applicable ({reason})", arm.variant)
            }
        }
    }
    Ok(())
}
