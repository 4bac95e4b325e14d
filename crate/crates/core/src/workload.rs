//! Request streams: CSV trace replay and synthetic arrival patterns.
//!
//! Trace files are header-less CSV, one request per line:
//!
//! ```text
//! arrival_ms,service_type,deadline_ms,cpu_demand,mem_demand,input_size_kb
//! ```
//!
//! `deadline_ms` is the budget relative to `arrival_ms`, `cpu_demand` is in
//! millicores and `mem_demand` in MB. An Alibaba batch trace maps onto this
//! as `start_time -> arrival_ms`, `end_time - start_time -> deadline_ms`,
//! `task_type -> service_type` (via [`classify_services`]),
//! `plan_cpu -> cpu_demand`, `plan_mem -> mem_demand`.

use std::collections::{BTreeMap, BTreeSet};
use std::f64::consts::PI;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use rand::distributions::{Distribution, Uniform};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{LogNormal, Pareto, Poisson};
use serde::{Deserialize, Serialize};

use crate::cluster::ServiceCatalog;
use crate::error::{Error, Result};
use crate::ServiceId;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TraceRecord {
    pub arrival_ms: u64,
    pub service_type: ServiceId,
    pub deadline_ms: u64,
    pub cpu_demand: u32,
    pub mem_demand: u32,
    pub input_size_kb: u32,
}

impl TraceRecord {
    pub fn validate(&self, service_count: usize) -> Result<()> {
        if self.service_type == 0 || self.service_type as usize > service_count {
            return Err(Error::Validation(format!(
                "service type {} outside [1, {service_count}]",
                self.service_type
            )));
        }
        if self.deadline_ms == 0 {
            return Err(Error::Validation("deadline must be positive".into()));
        }
        if self.cpu_demand == 0 || self.mem_demand == 0 {
            return Err(Error::Validation("cpu and memory demands must be positive".into()));
        }
        Ok(())
    }

    /// Absolute deadline in ms from experiment start.
    pub fn deadline_at(&self) -> f64 {
        (self.arrival_ms + self.deadline_ms) as f64
    }
}

/// Lifecycle of a request. Transitions only move forward in declaration
/// order; the last two are terminal.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum RequestStatus {
    QueuedAtEap,
    InTransit,
    QueuedAtExecutor,
    Processing,
    CompletedOnTime,
    Dropped,
}

impl RequestStatus {
    pub fn is_terminal(self) -> bool {
        matches!(self, RequestStatus::CompletedOnTime | RequestStatus::Dropped)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Request {
    pub id: u64,
    pub record: TraceRecord,
    pub eap_id: usize,
    pub status: RequestStatus,
    /// When the admitting eAP dispatched it.
    pub dequeue_time_ms: Option<f64>,
    /// When an executor started processing it.
    pub start_time_ms: Option<f64>,
    pub completion_time_ms: Option<f64>,
}

impl Request {
    pub fn new(id: u64, record: TraceRecord, eap_id: usize) -> Self {
        Self {
            id,
            record,
            eap_id,
            status: RequestStatus::QueuedAtEap,
            dequeue_time_ms: None,
            start_time_ms: None,
            completion_time_ms: None,
        }
    }

    pub fn service(&self) -> ServiceId {
        self.record.service_type
    }

    pub fn deadline_at(&self) -> f64 {
        self.record.deadline_at()
    }

    /// Moves to a later non-terminal status.
    pub fn advance(&mut self, next: RequestStatus) -> Result<()> {
        if next.is_terminal() || next <= self.status || self.status.is_terminal() {
            return Err(Error::contract(format!(
                "request {}: illegal transition {:?} -> {next:?}",
                self.id, self.status
            )));
        }
        self.status = next;
        Ok(())
    }

    pub fn finish(&mut self, on_time: bool, at_ms: f64) -> Result<()> {
        if self.status.is_terminal() {
            return Err(Error::contract(format!("request {} already terminal", self.id)));
        }
        self.status = if on_time {
            RequestStatus::CompletedOnTime
        } else {
            RequestStatus::Dropped
        };
        self.completion_time_ms = Some(at_ms);
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PatternKind {
    /// P1: sinusoidal CPU load envelope.
    PeriodicCpu,
    /// P2: sinusoidal memory load envelope, flat CPU load.
    PeriodicMem,
    /// P3: P1 at twice the frequency.
    PeriodicCpu2x,
    /// P4: heavy-tailed inter-arrivals and demands.
    Raw,
    /// Replay of a trace file.
    File,
}

impl FromStr for PatternKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "p1" | "periodic_cpu" => Ok(PatternKind::PeriodicCpu),
            "p2" | "periodic_mem" => Ok(PatternKind::PeriodicMem),
            "p3" | "periodic_cpu_2x" => Ok(PatternKind::PeriodicCpu2x),
            "p4" | "raw" => Ok(PatternKind::Raw),
            "file" => Ok(PatternKind::File),
            other => Err(Error::config("workload.pattern", format!("unknown pattern `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArrivalPattern {
    pub kind: PatternKind,
    pub period_frames: u32,
    pub amplitude: f64,
    pub seed: u64,
}

impl ArrivalPattern {
    pub fn validate(&self) -> Result<()> {
        let periodic = matches!(
            self.kind,
            PatternKind::PeriodicCpu | PatternKind::PeriodicMem | PatternKind::PeriodicCpu2x
        );
        if periodic && self.period_frames == 0 {
            return Err(Error::Validation("period_frames must be positive".into()));
        }
        if periodic && !(self.amplitude >= 0.0 && self.amplitude <= 1.0) {
            return Err(Error::Validation(format!("amplitude {} outside [0, 1]", self.amplitude)));
        }
        Ok(())
    }

    /// Envelope period actually used, in frames.
    pub fn effective_period(&self) -> f64 {
        match self.kind {
            PatternKind::PeriodicCpu2x => self.period_frames as f64 / 2.0,
            _ => self.period_frames as f64,
        }
    }

    /// `1 + a sin(2 pi f / period)`.
    pub fn envelope(&self, frame: u64) -> f64 {
        1.0 + self.amplitude * (2.0 * PI * frame as f64 / self.effective_period()).sin()
    }
}

/// Knobs of synthetic request generation that are not part of the pattern.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthesisParams {
    pub eap_count: usize,
    pub slot_ms: f64,
    pub slots_per_frame: u64,
    /// Request CPU/memory demand as a fraction of the replicate reservation,
    /// drawn uniformly from this range for periodic patterns.
    pub demand_fraction: (f64, f64),
    pub input_size_kb: (u32, u32),
    /// Zipf exponent of service popularity for the raw pattern.
    pub raw_popularity_skew: f64,
    /// Pareto shape of raw inter-arrival times (must exceed 1).
    pub raw_pareto_shape: f64,
    /// Log-normal sigma of raw demand fractions.
    pub raw_demand_sigma: f64,
}

impl Default for SynthesisParams {
    fn default() -> Self {
        Self {
            eap_count: 1,
            slot_ms: 250.0,
            slots_per_frame: 100,
            demand_fraction: (0.5, 1.0),
            input_size_kb: (50, 500),
            raw_popularity_skew: 1.0,
            raw_pareto_shape: 1.5,
            raw_demand_sigma: 0.5,
        }
    }
}

fn assign_ids_and_eaps(mut records: Vec<TraceRecord>, eap_count: usize, rng: &mut ChaCha8Rng) -> Vec<Request> {
    records.sort_by_key(|r| r.arrival_ms);
    records
        .into_iter()
        .enumerate()
        .map(|(i, record)| Request::new(i as u64, record, rng.gen_range(0..eap_count)))
        .collect()
}

fn parse_field<T: FromStr>(field: Option<&str>, name: &str) -> std::result::Result<T, String> {
    let raw = field.ok_or_else(|| format!("missing column `{name}`"))?;
    raw.parse()
        .map_err(|_| format!("column `{name}`: cannot parse `{raw}`"))
}

/// Reads a trace file. Requests come back sorted by arrival with ids in
/// that order and eAPs assigned uniformly at random from `seed`.
pub fn load_trace(path: &Path, eap_count: usize, service_count: usize, seed: u64) -> Result<Vec<Request>> {
    if eap_count == 0 {
        return Err(Error::contract("eap_count must be at least 1"));
    }
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)?;
    let mut records = Vec::new();
    for row in reader.records() {
        let row = row?;
        let line = row.position().map_or(0, |p| p.line());
        let parse_err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            message,
        };
        if row.len() != 6 {
            return Err(parse_err(format!("expected 6 columns, found {}", row.len())));
        }
        let record = TraceRecord {
            arrival_ms: parse_field(row.get(0), "arrival_ms").map_err(parse_err)?,
            service_type: parse_field(row.get(1), "service_type").map_err(parse_err)?,
            deadline_ms: parse_field(row.get(2), "deadline_ms").map_err(parse_err)?,
            cpu_demand: parse_field(row.get(3), "cpu_demand").map_err(parse_err)?,
            mem_demand: parse_field(row.get(4), "mem_demand").map_err(parse_err)?,
            input_size_kb: parse_field(row.get(5), "input_size_kb").map_err(parse_err)?,
        };
        record
            .validate(service_count)
            .map_err(|e| Error::Validation(format!("{}:{line}: {e}", path.display())))?;
        records.push(record);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(assign_ids_and_eaps(records, eap_count, &mut rng))
}

pub fn write_trace<W: Write>(out: W, records: impl IntoIterator<Item = TraceRecord>) -> Result<()> {
    let mut writer = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    for r in records {
        writer.write_record(&[
            r.arrival_ms.to_string(),
            r.service_type.to_string(),
            r.deadline_ms.to_string(),
            r.cpu_demand.to_string(),
            r.mem_demand.to_string(),
            r.input_size_kb.to_string(),
        ])?;
    }
    writer.flush()?;
    Ok(())
}

/// Generates a seeded synthetic request stream covering `duration_frames`.
pub fn synthesize(
    pattern: &ArrivalPattern,
    duration_frames: u64,
    base_rate: f64,
    catalog: &ServiceCatalog,
    params: &SynthesisParams,
) -> Result<Vec<Request>> {
    pattern.validate()?;
    if duration_frames == 0 {
        return Err(Error::contract("duration_frames must be positive"));
    }
    if !(base_rate > 0.0) {
        return Err(Error::contract("base_rate must be positive"));
    }
    if params.eap_count == 0 || params.slots_per_frame == 0 || !(params.slot_ms > 0.0) {
        return Err(Error::contract("synthesis needs eaps, slots and a positive slot length"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(pattern.seed);
    let records = match pattern.kind {
        PatternKind::PeriodicCpu | PatternKind::PeriodicCpu2x | PatternKind::PeriodicMem => {
            periodic(pattern, duration_frames, base_rate, catalog, params, &mut rng)?
        }
        PatternKind::Raw => raw(duration_frames, base_rate, catalog, params, &mut rng)?,
        PatternKind::File => {
            return Err(Error::contract("file patterns are loaded with load_trace"));
        }
    };
    Ok(assign_ids_and_eaps(records, params.eap_count, &mut rng))
}

fn draw_deadline(catalog: &ServiceCatalog, w: ServiceId, rng: &mut ChaCha8Rng) -> u64 {
    let spec = catalog.service(w);
    rng.gen_range(spec.deadline_min_ms..=spec.deadline_max_ms)
}

fn periodic(
    pattern: &ArrivalPattern,
    duration_frames: u64,
    base_rate: f64,
    catalog: &ServiceCatalog,
    params: &SynthesisParams,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<TraceRecord>> {
    let services = Uniform::new_inclusive(1, catalog.len() as ServiceId);
    let (lo, hi) = params.demand_fraction;
    let fraction = Uniform::new_inclusive(lo, hi);
    let size = Uniform::new_inclusive(params.input_size_kb.0, params.input_size_kb.1);
    let mem_modulated = pattern.kind == PatternKind::PeriodicMem;
    let mut out = Vec::new();
    for frame in 0..duration_frames {
        let envelope = pattern.envelope(frame);
        let rate = if mem_modulated { base_rate } else { base_rate * envelope };
        for s in 0..params.slots_per_frame {
            let count = if rate > 0.0 {
                Poisson::new(rate)
                    .map_err(|e| Error::contract(format!("poisson rate {rate}: {e}")))?
                    .sample(rng) as u64
            } else {
                0
            };
            let slot_start = (frame * params.slots_per_frame + s) as f64 * params.slot_ms;
            for _ in 0..count {
                let w = services.sample(rng);
                let spec = catalog.service(w);
                let offset = rng.gen_range(0.0..params.slot_ms);
                let cpu = (spec.replicate_cpu as f64 * fraction.sample(rng)).round().max(1.0);
                let mut mem = spec.replicate_mem as f64 * fraction.sample(rng);
                if mem_modulated {
                    mem *= envelope;
                }
                out.push(TraceRecord {
                    arrival_ms: (slot_start + offset) as u64,
                    service_type: w,
                    deadline_ms: draw_deadline(catalog, w, rng),
                    cpu_demand: cpu as u32,
                    mem_demand: mem.round().max(1.0) as u32,
                    input_size_kb: size.sample(rng),
                });
            }
        }
    }
    Ok(out)
}

fn raw(
    duration_frames: u64,
    base_rate: f64,
    catalog: &ServiceCatalog,
    params: &SynthesisParams,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<TraceRecord>> {
    let shape = params.raw_pareto_shape;
    if !(shape > 1.0) {
        return Err(Error::contract("raw_pareto_shape must exceed 1 for a finite mean"));
    }
    let mean_gap = params.slot_ms / base_rate;
    // Pareto mean is scale * shape / (shape - 1).
    let gaps = Pareto::new(mean_gap * (shape - 1.0) / shape, shape)
        .map_err(|e| Error::contract(format!("pareto: {e}")))?;
    let sigma = params.raw_demand_sigma;
    let demand = LogNormal::new(0.6f64.ln() - sigma * sigma / 2.0, sigma)
        .map_err(|e| Error::contract(format!("lognormal: {e}")))?;
    let size = Uniform::new_inclusive(params.input_size_kb.0, params.input_size_kb.1);

    // Zipf popularity over a seeded permutation of the service types.
    let mut order: Vec<ServiceId> = (1..=catalog.len() as ServiceId).collect();
    for i in (1..order.len()).rev() {
        order.swap(i, rng.gen_range(0..=i));
    }
    let weights: Vec<f64> = (1..=order.len())
        .map(|k| 1.0 / (k as f64).powf(params.raw_popularity_skew))
        .collect();
    let popularity = rand::distributions::WeightedIndex::new(&weights)
        .map_err(|e| Error::contract(format!("popularity weights: {e}")))?;

    let horizon = duration_frames as f64 * params.slots_per_frame as f64 * params.slot_ms;
    let mut t = gaps.sample(rng);
    let mut out = Vec::new();
    while t < horizon {
        let w = order[popularity.sample(rng)];
        let spec = catalog.service(w);
        let cpu_fraction: f64 = demand.sample(rng);
        let mem_fraction: f64 = demand.sample(rng);
        out.push(TraceRecord {
            arrival_ms: t as u64,
            service_type: w,
            deadline_ms: draw_deadline(catalog, w, rng),
            cpu_demand: (spec.replicate_cpu as f64 * cpu_fraction.clamp(0.05, 1.0)).round().max(1.0) as u32,
            mem_demand: (spec.replicate_mem as f64 * mem_fraction.clamp(0.05, 1.0)).round().max(1.0) as u32,
            input_size_kb: size.sample(rng),
        });
        t += gaps.sample(rng);
    }
    Ok(out)
}

/// Maps raw trace task types onto `[1, W]`: distinct raw ids are ranked in
/// ascending order and rank `k` maps to `k mod W + 1`. The mapping uses no
/// randomness, is a bijection when there are exactly `W` distinct ids and
/// covers every service whenever there are at least `W`.
pub fn classify_services(raw_types: &[u64], service_count: u32) -> Result<BTreeMap<u64, ServiceId>> {
    if service_count == 0 {
        return Err(Error::contract("service count must be at least 1"));
    }
    let distinct: BTreeSet<u64> = raw_types.iter().copied().collect();
    Ok(distinct
        .into_iter()
        .enumerate()
        .map(|(rank, raw)| (raw, (rank as u32 % service_count) + 1))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn catalog() -> ServiceCatalog {
        ServiceCatalog::generated(6)
    }

    fn write_file(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    #[test]
    fn row_maps_directly_onto_fields() {
        let f = write_file("0,3,5000,500,256,100\n");
        let reqs = load_trace(f.path(), 4, 6, 7).unwrap();
        assert_eq!(reqs.len(), 1);
        let r = &reqs[0];
        assert_eq!(
            r.record,
            TraceRecord { arrival_ms: 0, service_type: 3, deadline_ms: 5000, cpu_demand: 500, mem_demand: 256, input_size_kb: 100 }
        );
        assert_eq!(r.status, RequestStatus::QueuedAtEap);
        assert!(r.eap_id < 4);
    }

    #[test]
    fn empty_trace_is_empty_stream() {
        let f = write_file("");
        assert!(load_trace(f.path(), 2, 6, 1).unwrap().is_empty());
    }

    #[test]
    fn same_seed_same_eap_assignment() {
        let body: String = (0..200).map(|i| format!("{},{},900,100,100,10\n", i * 3, i % 6 + 1)).collect();
        let f = write_file(&body);
        let a = load_trace(f.path(), 5, 6, 99).unwrap();
        let b = load_trace(f.path(), 5, 6, 99).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().map(|r| r.eap_id).collect::<BTreeSet<_>>().len() > 1);
    }

    #[test]
    fn trace_is_sorted_by_arrival() {
        let f = write_file("50,1,10,1,1,0\n10,2,10,1,1,0\n30,1,10,1,1,0\n");
        let reqs = load_trace(f.path(), 1, 6, 0).unwrap();
        assert_eq!(reqs.iter().map(|r| r.record.arrival_ms).collect::<Vec<_>>(), vec![10, 30, 50]);
        assert_eq!(reqs.iter().map(|r| r.id).collect::<Vec<_>>(), vec![0, 1, 2]);
    }

    #[test]
    fn malformed_row_names_its_line() {
        let f = write_file("0,1,10,1,1,0\n5,x,10,1,1,0\n");
        match load_trace(f.path(), 1, 6, 0) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
        let f = write_file("0,1,10\n");
        assert!(matches!(load_trace(f.path(), 1, 6, 0), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn out_of_range_service_is_a_validation_error() {
        let f = write_file("0,7,10,1,1,0\n");
        assert!(matches!(load_trace(f.path(), 1, 6, 0), Err(Error::Validation(_))));
    }

    #[test]
    fn written_trace_reloads() {
        let records = vec![
            TraceRecord { arrival_ms: 3, service_type: 2, deadline_ms: 40, cpu_demand: 5, mem_demand: 6, input_size_kb: 0 },
            TraceRecord { arrival_ms: 9, service_type: 1, deadline_ms: 41, cpu_demand: 7, mem_demand: 8, input_size_kb: 12 },
        ];
        let f = tempfile::NamedTempFile::new().unwrap();
        write_trace(std::fs::File::create(f.path()).unwrap(), records.clone()).unwrap();
        let back: Vec<_> = load_trace(f.path(), 1, 6, 0).unwrap().into_iter().map(|r| r.record).collect();
        assert_eq!(back, records);
    }

    #[test]
    fn status_transitions_are_monotone() {
        let rec = TraceRecord { arrival_ms: 0, service_type: 1, deadline_ms: 10, cpu_demand: 1, mem_demand: 1, input_size_kb: 0 };
        let mut r = Request::new(0, rec, 0);
        r.advance(RequestStatus::InTransit).unwrap();
        assert!(r.advance(RequestStatus::QueuedAtEap).is_err());
        r.advance(RequestStatus::Processing).unwrap();
        r.finish(true, 5.0).unwrap();
        assert!(r.finish(false, 6.0).is_err());
        assert!(r.advance(RequestStatus::Processing).is_err());
        assert_eq!(r.completion_time_ms, Some(5.0));
    }

    #[test]
    fn classify_single_service() {
        let m = classify_services(&[5, 17, 5, 9000], 1).unwrap();
        assert!(m.values().all(|&w| w == 1));
    }

    #[test]
    fn classify_thirty_types_is_a_bijection() {
        let raw: Vec<u64> = (0..30).map(|k| k * 7919 + 13).collect();
        let m = classify_services(&raw, 30).unwrap();
        let image: BTreeSet<_> = m.values().copied().collect();
        assert_eq!(image, (1..=30).collect());
        assert_eq!(m, classify_services(&raw, 30).unwrap());
    }

    fn pattern(kind: PatternKind, period: u32, amplitude: f64, seed: u64) -> ArrivalPattern {
        ArrivalPattern { kind, period_frames: period, amplitude, seed }
    }

    fn params(slots: u64) -> SynthesisParams {
        SynthesisParams { eap_count: 2, slots_per_frame: slots, ..SynthesisParams::default() }
    }

    /// Direct summation of per-frame demand.
    fn frame_sums(reqs: &[Request], frames: u64, frame_ms: f64, mem: bool) -> Vec<f64> {
        let mut sums = vec![0.0; frames as usize];
        for r in reqs {
            let f = (r.record.arrival_ms as f64 / frame_ms) as usize;
            sums[f] += if mem { r.record.mem_demand } else { r.record.cpu_demand } as f64;
        }
        sums
    }

    fn autocorrelation_peak(series: &[f64], max_lag: usize) -> usize {
        let mean = series.iter().sum::<f64>() / series.len() as f64;
        let c: Vec<f64> = series.iter().map(|v| v - mean).collect();
        (2..=max_lag)
            .max_by(|&a, &b| {
                let ac = |lag: usize| (0..c.len() - lag).map(|i| c[i] * c[i + lag]).sum::<f64>() / (c.len() - lag) as f64;
                ac(a).total_cmp(&ac(b))
            })
            .unwrap()
    }

    #[test]
    fn zero_amplitude_is_stationary() {
        let p = pattern(PatternKind::PeriodicCpu, 10, 0.0, 3);
        assert!((0..50).all(|f| p.envelope(f) == 1.0));
        let reqs = synthesize(&p, 40, 2.0, &catalog(), &params(50)).unwrap();
        let per_frame = 2.0 * 50.0;
        let mean = reqs.len() as f64 / 40.0;
        assert!((mean - per_frame).abs() < 4.0 * (per_frame / 40.0).sqrt(), "mean {mean}");
    }

    #[test]
    fn doubled_frequency_matches_half_period() {
        let cat = catalog();
        let frames = 200;
        let fast = synthesize(&pattern(PatternKind::PeriodicCpu2x, 40, 0.8, 11), frames, 2.0, &cat, &params(20)).unwrap();
        let slow = synthesize(&pattern(PatternKind::PeriodicCpu, 20, 0.8, 12), frames, 2.0, &cat, &params(20)).unwrap();
        let frame_ms = 20.0 * 250.0;
        let lag_fast = autocorrelation_peak(&frame_sums(&fast, frames, frame_ms, false), 30);
        let lag_slow = autocorrelation_peak(&frame_sums(&slow, frames, frame_ms, false), 30);
        assert_eq!(lag_fast, 20);
        assert_eq!(lag_slow, 20);
        let p1 = synthesize(&pattern(PatternKind::PeriodicCpu, 40, 0.8, 12), frames, 2.0, &cat, &params(20)).unwrap();
        assert_eq!(autocorrelation_peak(&frame_sums(&p1, frames, frame_ms, false), 60), 40);
    }

    #[test]
    fn cpu_envelope_ratio_matches_amplitude() {
        let a = 0.5;
        let frames = 200;
        let reqs = synthesize(&pattern(PatternKind::PeriodicCpu, 20, a, 5), frames, 20.0, &catalog(), &params(100)).unwrap();
        let sums = frame_sums(&reqs, frames, 100.0 * 250.0, false);
        let max = sums.iter().copied().fold(f64::MIN, f64::max);
        let min = sums.iter().copied().fold(f64::MAX, f64::min);
        let target = (1.0 + a) / (1.0 - a);
        let ratio = max / min;
        assert!((ratio / target - 1.0).abs() <= 0.25, "ratio {ratio} vs {target}");
    }

    #[test]
    fn mem_pattern_keeps_cpu_flat() {
        let frames = 100;
        let reqs = synthesize(&pattern(PatternKind::PeriodicMem, 20, 0.6, 8), frames, 3.0, &catalog(), &params(100)).unwrap();
        let frame_ms = 100.0 * 250.0;
        let cpu = frame_sums(&reqs, frames, frame_ms, false);
        let mem = frame_sums(&reqs, frames, frame_ms, true);
        let spread = |v: &[f64]| {
            let max = v.iter().copied().fold(f64::MIN, f64::max);
            let min = v.iter().copied().fold(f64::MAX, f64::min);
            max / min
        };
        assert!(spread(&cpu) < 1.4, "cpu spread {}", spread(&cpu));
        assert!(spread(&mem) > 2.5, "mem spread {}", spread(&mem));
    }

    #[test]
    fn raw_pattern_is_deterministic_per_seed() {
        let cat = catalog();
        let p = pattern(PatternKind::Raw, 1, 0.0, 21);
        let a = synthesize(&p, 5, 1.0, &cat, &params(100)).unwrap();
        let b = synthesize(&p, 5, 1.0, &cat, &params(100)).unwrap();
        assert_eq!(a, b);
        assert!(!a.is_empty());
        let c = synthesize(&pattern(PatternKind::Raw, 1, 0.0, 22), 5, 1.0, &cat, &params(100)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn synthesized_records_are_valid() {
        let cat = catalog();
        for kind in [PatternKind::PeriodicCpu, PatternKind::PeriodicMem, PatternKind::PeriodicCpu2x, PatternKind::Raw] {
            let reqs = synthesize(&pattern(kind, 10, 0.9, 4), 10, 1.5, &cat, &params(50)).unwrap();
            for (i, r) in reqs.iter().enumerate() {
                r.record.validate(cat.len()).unwrap();
                assert_eq!(r.id, i as u64);
                assert!(r.eap_id < 2);
            }
            assert!(reqs.windows(2).all(|w| w[0].record.arrival_ms <= w[1].record.arrival_ms));
        }
    }

    #[test]
    fn synthesis_preconditions() {
        let cat = catalog();
        assert!(synthesize(&pattern(PatternKind::PeriodicCpu, 10, 0.5, 1), 0, 1.0, &cat, &params(10)).is_err());
        assert!(synthesize(&pattern(PatternKind::PeriodicCpu, 10, 0.5, 1), 3, 0.0, &cat, &params(10)).is_err());
        assert!(synthesize(&pattern(PatternKind::PeriodicCpu, 0, 0.5, 1), 3, 1.0, &cat, &params(10)).is_err());
    }
}
