//! Request stream simulation, oracle labeling, and dataset persistence.
//!
//! A seeded discrete-tick simulation produces arrivals (Poisson per tick)
//! with chains drawn from a catalog of request types; each request lives
//! for a uniform number of ticks and its delay budget is a multiple of the
//! unconstrained optimum for its endpoints and chain. The oracle labels the
//! stream under a live ledger; samples whose label is deployable within
//! budget become training data, split chronologically so no split sees the
//! future of an earlier one. Requests the oracle serves over budget still
//! consume resources in the replay but are not samples.

use std::path::Path;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::Poisson;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fsutil;
use crate::oracle::{self, LabeledRequest};
use crate::path::SfcPath;
use crate::topology::{Request, Topology, VnfTypeId};

/// Everything that determines a simulated stream. Same config + topology +
/// seed means the same stream, bit for bit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimulationConfig {
    pub seed: u64,
    pub ticks: u64,
    /// Mean arrivals per tick (Poisson).
    pub arrival_rate: f64,
    /// Uniform inclusive lifetime range, in ticks.
    pub lifetime_min: u64,
    pub lifetime_max: u64,
    /// Request types: ordered VNF chains, by type name.
    pub catalog: Vec<Vec<String>>,
    /// Bandwidth demand range, sampled on the 0.25 grid.
    pub demand_min: f64,
    pub demand_max: f64,
    /// Delay budget = multiplier x unconstrained optimal cost for the
    /// request's endpoints and chain.
    pub max_delay_multiplier: f64,
}

impl Default for SimulationConfig {
    /// Calibrated against the 12-node reference topology: 2 arrivals/tick
    /// times a mean lifetime of 13 ticks keeps about 26 requests active.
    fn default() -> SimulationConfig {
        SimulationConfig {
            seed: 1,
            ticks: 1500,
            arrival_rate: 2.0,
            lifetime_min: 6,
            lifetime_max: 20,
            catalog: default_catalog(),
            demand_min: 0.25,
            demand_max: 1.0,
            max_delay_multiplier: 1.5,
        }
    }
}

/// Five request types with chains of two or three VNFs.
pub fn default_catalog() -> Vec<Vec<String>> {
    [
        vec!["NAT", "Firewall"],
        vec!["NAT", "Firewall", "IDS"],
        vec!["Firewall", "IDS"],
        vec!["Proxy", "WANopt"],
        vec!["Proxy", "WANopt", "IDS"],
    ]
    .into_iter()
    .map(|chain| chain.into_iter().map(String::from).collect())
    .collect()
}

impl SimulationConfig {
    /// Validates ranges and resolves the catalog against the topology's
    /// VNF types. Every catalog type must be hosted somewhere, otherwise
    /// its requests could never be served.
    pub fn resolve_catalog(&self, t: &Topology) -> Result<Vec<Vec<VnfTypeId>>> {
        if !(self.arrival_rate >= 0.0 && self.arrival_rate.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "arrival_rate must be finite and non-negative, got {}",
                self.arrival_rate
            )));
        }
        if self.lifetime_min == 0 || self.lifetime_min > self.lifetime_max {
            return Err(Error::InvalidArgument(format!(
                "lifetime range [{}, {}] must satisfy 1 <= min <= max",
                self.lifetime_min, self.lifetime_max
            )));
        }
        if !(self.demand_min > 0.0 && self.demand_min <= self.demand_max) {
            return Err(Error::InvalidArgument(format!(
                "demand range [{}, {}] must satisfy 0 < min <= max",
                self.demand_min, self.demand_max
            )));
        }
        if !(self.max_delay_multiplier >= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "max_delay_multiplier must be at least 1, got {}",
                self.max_delay_multiplier
            )));
        }
        if self.catalog.is_empty() {
            return Err(Error::InvalidArgument("catalog is empty".into()));
        }
        let mut resolved = Vec::with_capacity(self.catalog.len());
        for chain in &self.catalog {
            if chain.is_empty() {
                return Err(Error::InvalidArgument("catalog chain is empty".into()));
            }
            let mut ids = Vec::with_capacity(chain.len());
            for name in chain {
                let id = t
                    .vnf_type_id(name)
                    .ok_or_else(|| Error::UnknownVnfType(name.clone()))?;
                if t.hosts_of(id).next().is_none() {
                    return Err(Error::InvalidArgument(format!(
                        "catalog names VNF type `{name}` which no node hosts"
                    )));
                }
                ids.push(id);
            }
            resolved.push(ids);
        }
        Ok(resolved)
    }
}

/// 0.25-grid uniform sample in [lo, hi]. Grid demands sum exactly in f64,
/// which keeps ledger arithmetic order-independent.
fn grid_demand(rng: &mut impl Rng, lo: f64, hi: f64) -> f64 {
    let steps = ((hi - lo) / 0.25).round() as u64;
    lo + 0.25 * rng.random_range(0..=steps) as f64
}

/// Generates the arrival-ordered request stream. Sources and destinations
/// are uniform over distinct nodes; each request's delay budget is the
/// configured multiple of its unconstrained optimal cost.
pub fn simulate_stream(cfg: &SimulationConfig, t: &Topology) -> Result<Vec<Request>> {
    let catalog = cfg.resolve_catalog(t)?;
    let n = t.node_count();
    if n < 2 {
        return Err(Error::InvalidArgument(
            "stream simulation needs at least two nodes".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let poisson = if cfg.arrival_rate > 0.0 {
        Some(Poisson::new(cfg.arrival_rate).map_err(|e| {
            Error::InvalidArgument(format!("arrival rate {}: {e}", cfg.arrival_rate))
        })?)
    } else {
        None
    };
    let mut out = Vec::new();
    let mut id = 0u64;
    for tick in 0..cfg.ticks {
        let arrivals = match &poisson {
            Some(p) => p.sample(&mut rng) as u64,
            None => 0,
        };
        for _ in 0..arrivals {
            let chain = catalog[rng.random_range(0..catalog.len())].clone();
            let source = rng.random_range(0..n);
            let destination = loop {
                let d = rng.random_range(0..n);
                if d != source {
                    break d;
                }
            };
            let lifetime = rng.random_range(cfg.lifetime_min..=cfg.lifetime_max);
            // Placeholder budget; the unconstrained solve ignores it and
            // the real one is derived from its cost below.
            let mut r = Request {
                id,
                source,
                destination,
                chain,
                bandwidth_demand: grid_demand(&mut rng, cfg.demand_min, cfg.demand_max),
                max_delay_ms: 1.0,
                arrival_time: tick,
                expiry_time: tick + lifetime,
            };
            let witness = oracle::solve_unconstrained(t, &r);
            debug_assert!(
                witness.feasible,
                "hosted catalog types on a connected graph always admit a path"
            );
            r.max_delay_ms = cfg.max_delay_multiplier * witness.cost;
            out.push(r);
            id += 1;
        }
    }
    Ok(out)
}

/// Mean number of resource-holding requests observed at arrival instants.
/// Poisson arrivals see time averages, so this estimates the steady-state
/// active-list length.
pub fn mean_active(labeled: &[LabeledRequest]) -> f64 {
    if labeled.is_empty() {
        return 0.0;
    }
    labeled.iter().map(|l| l.active_before as f64).sum::<f64>() / labeled.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Split {
    #[serde(rename = "train")]
    Train,
    #[serde(rename = "val")]
    Val,
    #[serde(rename = "test")]
    Test,
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitSizes {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl Default for SplitSizes {
    fn default() -> SplitSizes {
        SplitSizes {
            train: 2000,
            val: 100,
            test: 500,
        }
    }
}

impl SplitSizes {
    pub fn total(&self) -> usize {
        self.train + self.val + self.test
    }
}

/// One labeled request. The label is the oracle path at this request's
/// ledger snapshot, deployable and within budget there.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSample {
    pub request: Request,
    pub label: SfcPath,
    /// Exact optimal cost of `label`, the cost-ratio denominator.
    pub label_cost: f64,
    /// Ledger digest at solve time; replaying the stream reproduces it.
    pub snapshot_digest: String,
    /// Arrival sequence number within the simulated stream.
    pub event_index: u64,
    /// Requests holding resources when this one was solved.
    pub active_before: usize,
    pub split: Split,
}

const DATASET_FORMAT: &str = "sfc-dataset-v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub format: String,
    pub topology_hash: String,
    pub config: SimulationConfig,
    pub counts: SplitSizes,
    /// Stream audit: arrivals simulated and how many the oracle could serve.
    pub total_requests: usize,
    pub feasible_labels: usize,
    /// Digest of the app config that produced this file; empty for datasets
    /// built outside the run harness.
    #[serde(default)]
    pub config_digest: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetFile {
    pub header: DatasetHeader,
    pub samples: Vec<DatasetSample>,
}

impl DatasetFile {
    pub fn split(&self, split: Split) -> Vec<&DatasetSample> {
        self.samples.iter().filter(|s| s.split == split).collect()
    }

    /// JSON lines: header first, then one sample per line.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = serde_json::to_string(&self.header)?;
        buf.push('\n');
        for s in &self.samples {
            buf.push_str(&serde_json::to_string(s)?);
            buf.push('\n');
        }
        fsutil::atomic_write(path, buf.as_bytes())
    }

    /// Loads and validates a dataset against the topology it claims.
    pub fn load(path: &Path, t: &Topology) -> Result<DatasetFile> {
        let text = std::fs::read_to_string(path)?;
        let mut lines = text.lines();
        let header_line = lines
            .next()
            .ok_or_else(|| Error::DatasetFormat("empty dataset file".into()))?;
        let header: DatasetHeader = serde_json::from_str(header_line)
            .map_err(|e| Error::DatasetFormat(format!("header: {e}")))?;
        if header.format != DATASET_FORMAT {
            return Err(Error::DatasetFormat(format!(
                "unknown dataset format `{}` (expected {DATASET_FORMAT})",
                header.format
            )));
        }
        if header.topology_hash != t.hash() {
            return Err(Error::DigestMismatch {
                what: "dataset topology".into(),
                expected: header.topology_hash,
                got: t.hash().to_string(),
            });
        }
        let mut samples = Vec::new();
        for (i, line) in lines.enumerate() {
            let s: DatasetSample = serde_json::from_str(line)
                .map_err(|e| Error::DatasetFormat(format!("sample line {}: {e}", i + 2)))?;
            s.request.validate(t)?;
            samples.push(s);
        }
        let count_of = |split: Split| samples.iter().filter(|s| s.split == split).count();
        let counts = SplitSizes {
            train: count_of(Split::Train),
            val: count_of(Split::Val),
            test: count_of(Split::Test),
        };
        if counts != header.counts {
            return Err(Error::DatasetFormat(format!(
                "sample counts {counts:?} do not match header {:?} (truncated file?)",
                header.counts
            )));
        }
        Ok(DatasetFile { header, samples })
    }
}

/// Simulates, labels, and splits. Splits are chronological (train earliest)
/// and never share an arrival tick across a boundary, so no split trains on
/// its own future. Labels must be deployable within budget; over-budget and
/// infeasible arrivals still shaped the replay ledger but yield no sample.
pub fn build_dataset(
    cfg: &SimulationConfig,
    t: &Topology,
    sizes: SplitSizes,
) -> Result<DatasetFile> {
    let stream = simulate_stream(cfg, t)?;
    let labeled = oracle::label_request_sequence(t, &stream);
    let feasible_labels = labeled.iter().filter(|l| l.solution.feasible).count();

    let usable: Vec<&LabeledRequest> = labeled
        .iter()
        .filter(|l| l.solution.feasible && l.solution.cost <= l.request.max_delay_ms)
        .collect();

    let mut samples = Vec::with_capacity(sizes.total());
    let mut idx = 0usize;
    for (split, want) in [
        (Split::Train, sizes.train),
        (Split::Val, sizes.val),
        (Split::Test, sizes.test),
    ] {
        if let Some(last_tick) = samples.last().map(|s: &DatasetSample| s.request.arrival_time) {
            while idx < usable.len() && usable[idx].request.arrival_time == last_tick {
                idx += 1;
            }
        }
        for _ in 0..want {
            let l = usable.get(idx).ok_or_else(|| {
                Error::InvalidArgument(format!(
                    "stream yields only {} usable samples of {} requested; raise ticks or arrival_rate",
                    usable.len(),
                    sizes.total()
                ))
            })?;
            idx += 1;
            samples.push(DatasetSample {
                request: l.request.clone(),
                label: l.solution.path.clone(),
                label_cost: l.solution.cost,
                snapshot_digest: l.snapshot_digest.clone(),
                event_index: l.event_index,
                active_before: l.active_before,
                split,
            });
        }
    }

    Ok(DatasetFile {
        header: DatasetHeader {
            format: DATASET_FORMAT.to_string(),
            topology_hash: t.hash().to_string(),
            config: cfg.clone(),
            counts: sizes,
            total_requests: stream.len(),
            feasible_labels,
            config_digest: String::new(),
        },
        samples,
    })
}
