//! Evaluation by live replay: each test request is generated against the
//! current ledger, feasible paths consume resources until their expiry, and
//! delays are compared with the stored optimal label costs. Also the
//! changed-topology experiment, where graph models run unmodified and the
//! fixed-width baseline records its incompatibility.

use std::cmp::Reverse;
use std::collections::BinaryHeap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataset::{build_dataset, DatasetSample, SimulationConfig, Split, SplitSizes};
use crate::error::{Error, Result};
use crate::fsutil::atomic_write;
use crate::ledger::ResourceLedger;
use crate::model::{ModelVariant, SfcModel};
use crate::path::{path_cost, PathClass, SfcPath};
use crate::topology::{EdgeDoc, InstanceDoc, Request, Topology};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalCounts {
    pub total: usize,
    pub valid: usize,
    pub failure: usize,
    pub overmax: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RequestRecord {
    pub id: u64,
    pub class: PathClass,
    /// Delay of the generated path; absent for failures.
    pub generated_cost: Option<f64>,
    /// Optimal delay stored with the sample, the ratio denominator.
    pub label_cost: f64,
    pub cost_ratio: Option<f64>,
}

/// Replay metrics. Cost ratios cover non-failure paths only; `None` means
/// no path qualified (or the split was empty), never NaN.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub counts: EvalCounts,
    pub avg_cost_ratio: Option<f64>,
    /// Population variance of the per-request cost ratios.
    pub cost_ratio_variance: Option<f64>,
    pub fail_ratio: Option<f64>,
    pub overmax_ratio: Option<f64>,
    pub records: Vec<RequestRecord>,
}

fn cost_ratio(generated: f64, label: f64) -> Option<f64> {
    if label > 0.0 {
        Some(generated / label)
    } else if generated == 0.0 {
        Some(1.0)
    } else {
        None
    }
}

fn summarize(records: Vec<RequestRecord>) -> EvalReport {
    let mut counts = EvalCounts {
        total: records.len(),
        ..EvalCounts::default()
    };
    for r in &records {
        match r.class {
            PathClass::Valid => counts.valid += 1,
            PathClass::Failure => counts.failure += 1,
            PathClass::Overmax => counts.overmax += 1,
        }
    }
    let ratios: Vec<f64> = records.iter().filter_map(|r| r.cost_ratio).collect();
    let avg = (!ratios.is_empty()).then(|| ratios.iter().sum::<f64>() / ratios.len() as f64);
    let variance = avg.map(|mean| {
        ratios.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / ratios.len() as f64
    });
    let frac = |n: usize| (counts.total > 0).then(|| n as f64 / counts.total as f64);
    EvalReport {
        avg_cost_ratio: avg,
        cost_ratio_variance: variance,
        fail_ratio: frac(counts.failure),
        overmax_ratio: frac(counts.overmax),
        counts,
        records,
    }
}

/// Core replay loop, abstracted over the path source so oracle replays and
/// models share the exact accounting: release expired holds, generate,
/// consume on Valid or Overmax.
fn replay<F>(t: &Topology, samples: &[&DatasetSample], mut generate: F) -> Result<EvalReport>
where
    F: FnMut(&Request, &ResourceLedger) -> Result<(SfcPath, PathClass)>,
{
    let mut ledger = ResourceLedger::new(t);
    let mut expiries: BinaryHeap<Reverse<(u64, u64)>> = BinaryHeap::new();
    let mut records = Vec::with_capacity(samples.len());
    for s in samples {
        let r = &s.request;
        while let Some(&Reverse((expiry, id))) = expiries.peek() {
            if expiry > r.arrival_time {
                break;
            }
            expiries.pop();
            ledger.release_id(id)?;
        }
        let (path, class) = generate(r, &ledger)?;
        let generated_cost = match class {
            PathClass::Failure => None,
            PathClass::Valid | PathClass::Overmax => Some(path_cost(t, &path, &r.chain)?),
        };
        if class != PathClass::Failure {
            ledger.apply_request(t, r, &path)?;
            expiries.push(Reverse((r.expiry_time, r.id)));
        }
        records.push(RequestRecord {
            id: r.id,
            class,
            generated_cost,
            label_cost: s.label_cost,
            cost_ratio: generated_cost.and_then(|g| cost_ratio(g, s.label_cost)),
        });
    }
    Ok(summarize(records))
}

/// Replays `samples` in order against a fresh ledger and scores the model's
/// generated paths against the stored label costs.
pub fn evaluate(model: &SfcModel, t: &Topology, samples: &[&DatasetSample]) -> Result<EvalReport> {
    model.ensure_compatible(t)?;
    replay(t, samples, |r, ledger| model.generate_path(t, r, ledger))
}

/// Replays the stored labels themselves; the self-comparison yields cost
/// ratio 1 and no failures, which pins the accounting.
pub fn evaluate_labels(t: &Topology, samples: &[&DatasetSample]) -> Result<EvalReport> {
    let by_id: std::collections::HashMap<u64, &SfcPath> =
        samples.iter().map(|s| (s.request.id, &s.label)).collect();
    replay(t, samples, |r, ledger| {
        let path = (*by_id.get(&r.id).expect("sample id")).clone();
        let class = crate::path::classify_path(t, r, &path, ledger);
        Ok((path, class))
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatchEdge {
    pub u: usize,
    pub v: usize,
    /// Defaults to the smallest delay in the base topology.
    #[serde(default)]
    pub delay_ms: Option<f64>,
    /// Defaults to the largest bandwidth in the base topology.
    #[serde(default)]
    pub bandwidth: Option<f64>,
}

/// Additive topology change: new nodes are numbered after the existing
/// ones, new edges may wire them in, instances may land anywhere.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TopologyPatch {
    pub added_nodes: usize,
    pub added_edges: Vec<PatchEdge>,
    pub added_instances: Vec<InstanceDoc>,
}

impl TopologyPatch {
    pub fn load(path: &Path) -> Result<TopologyPatch> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn is_identity(&self) -> bool {
        self.added_nodes == 0 && self.added_edges.is_empty() && self.added_instances.is_empty()
    }

    /// Applies the patch and revalidates; the result must satisfy every
    /// topology invariant or this errors.
    pub fn apply(&self, base: &Topology) -> Result<Topology> {
        let mut doc = base.to_doc();
        let first = doc.nodes.len();
        doc.nodes.extend(first..first + self.added_nodes);
        if !self.added_edges.is_empty() {
            let default_delay = doc
                .edges
                .iter()
                .map(|e| e.delay_ms)
                .fold(f64::INFINITY, f64::min);
            let default_bw = doc.edges.iter().map(|e| e.bandwidth).fold(0.0, f64::max);
            for e in &self.added_edges {
                doc.edges.push(EdgeDoc {
                    u: e.u,
                    v: e.v,
                    delay_ms: e.delay_ms.unwrap_or(default_delay),
                    bandwidth: e.bandwidth.unwrap_or(default_bw),
                });
            }
        }
        doc.instances.extend(self.added_instances.iter().cloned());
        Topology::from_doc(&doc)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum ArmOutcome {
    Report { report: EvalReport },
    NotApplicable { reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentArm {
    pub variant: ModelVariant,
    pub outcome: ArmOutcome,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChangedTopologyOutcome {
    pub patched_topology_hash: String,
    pub test_size: usize,
    pub arms: Vec<ExperimentArm>,
}

/// Applies the patch, simulates and labels a fresh test stream on the
/// patched topology, then evaluates every model on it without retraining.
/// Graph models run as-is; the fixed-width baseline's dimension error is
/// recorded as not applicable instead of failing the experiment.
pub fn changed_topology_experiment(
    models: &[&SfcModel],
    base: &Topology,
    patch: &TopologyPatch,
    sim: &SimulationConfig,
    test_size: usize,
) -> Result<ChangedTopologyOutcome> {
    let patched = patch.apply(base)?;
    let sizes = SplitSizes {
        train: 0,
        val: 0,
        test: test_size,
    };
    let dataset = build_dataset(sim, &patched, sizes)?;
    let samples = dataset.split(Split::Test);
    let mut arms = Vec::with_capacity(models.len());
    for m in models {
        let outcome = match evaluate(m, &patched, &samples) {
            Ok(report) => ArmOutcome::Report { report },
            Err(Error::TopologyIncompatible(reason)) => ArmOutcome::NotApplicable { reason },
            Err(e) => return Err(e),
        };
        arms.push(ExperimentArm {
            variant: m.config.variant,
            outcome,
        });
    }
    Ok(ChangedTopologyOutcome {
        patched_topology_hash: patched.hash().to_string(),
        test_size,
        arms,
    })
}

#[derive(Serialize)]
struct ReportDoc<'a> {
    #[serde(skip_serializing_if = "Option::is_none")]
    config_digest: Option<&'a str>,
    #[serde(flatten)]
    report: &'a EvalReport,
}

/// Writes `{name}.json` (the full report, stamped with the producing config
/// digest when given) and `{name}.csv` (per-request rows) under `dir`,
/// returning both paths.
pub fn report_emit(
    report: &EvalReport,
    dir: &Path,
    name: &str,
    config_digest: Option<&str>,
) -> Result<(PathBuf, PathBuf)> {
    let json_path = dir.join(format!("{name}.json"));
    let mut json = serde_json::to_vec_pretty(&ReportDoc {
        config_digest,
        report,
    })?;
    json.push(b'\n');
    atomic_write(&json_path, &json)?;

    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["id", "class", "generated_cost", "label_cost", "cost_ratio"])
        .map_err(csv_err)?;
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for r in &report.records {
        w.write_record([
            r.id.to_string(),
            r.class.to_string(),
            opt(r.generated_cost),
            r.label_cost.to_string(),
            opt(r.cost_ratio),
        ])
        .map_err(csv_err)?;
    }
    let csv_path = dir.join(format!("{name}.csv"));
    let bytes = w
        .into_inner()
        .map_err(|e| Error::InvalidArgument(format!("csv write failed: {e}")))?;
    atomic_write(&csv_path, &bytes)?;
    Ok((json_path, csv_path))
}

fn csv_err(e: csv::Error) -> Error {
    Error::InvalidArgument(format!("csv write failed: {e}"))
}
