//! Scenario generators and the benchmark driver behind the `bench` command.

use std::io::{Read, Write};
use std::time::Instant;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::baselines::no_sharing_with;
use crate::colgen::{self, PipelineOptions};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::homogeneous;
use crate::model::{Platform, Scenario, Service};
use crate::rare_event::{validate_plan_reliability, ReliabilityReport, ValidationMode, DEFAULT_SAMPLE_SIZE};
use crate::rng::substream;

pub const DEFAULT_FAILURE_PROB: f64 = 0.01;
pub const DEFAULT_SEEDS_PER_CELL: u64 = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    Uniform,
    Bivalued,
}

impl ScenarioKind {
    pub fn name(self) -> &'static str {
        match self {
            ScenarioKind::Uniform => "uniform",
            ScenarioKind::Bivalued => "bivalued",
        }
    }
}

impl std::str::FromStr for ScenarioKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(ScenarioKind::Uniform),
            "bivalued" => Ok(ScenarioKind::Bivalued),
            _ => Err(Error::Input(format!("unknown scenario kind {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub kind: ScenarioKind,
    /// Service count; fixed at 301 for bivalued scenarios.
    pub ns: usize,
    pub mem: usize,
    pub fail: f64,
    pub seed: u64,
    /// Draw the reliability exponent from the integers 2..=8 instead of the interval.
    pub integer_exponent: bool,
}

impl ScenarioSpec {
    pub fn uniform(ns: usize, mem: usize, seed: u64) -> Self {
        ScenarioSpec {
            kind: ScenarioKind::Uniform,
            ns,
            mem,
            fail: DEFAULT_FAILURE_PROB,
            seed,
            integer_exponent: false,
        }
    }

    pub fn bivalued(mem: usize, seed: u64) -> Self {
        ScenarioSpec {
            kind: ScenarioKind::Bivalued,
            ns: BIG_SERVICES + SMALL_SERVICES,
            ..Self::uniform(0, mem, seed)
        }
    }

    pub fn generate(&self) -> Result<Scenario> {
        let platform = Platform::new(1.0, self.mem, self.fail)?;
        let mut rng = substream(self.seed, &[self.kind as u64]);
        let reliability = |rng: &mut crate::rng::StreamRng| {
            let x = if self.integer_exponent {
                rng.random_range(2..=8) as f64
            } else {
                rng.random_range(2.0..=8.0)
            };
            10f64.powf(-x)
        };
        let services = match self.kind {
            ScenarioKind::Uniform => {
                if self.ns == 0 {
                    return Err(Error::Input("uniform scenario needs at least one service".into()));
                }
                (0..self.ns)
                    .map(|_| {
                        let demand = rng.random_range(5.0..=50.0);
                        Service {
                            demand,
                            reliability: reliability(&mut rng),
                        }
                    })
                    .collect()
            }
            ScenarioKind::Bivalued => (0..BIG_SERVICES + SMALL_SERVICES)
                .map(|i| {
                    let demand = if i < BIG_SERVICES {
                        rng.random_range(900.0..=1100.0)
                    } else {
                        rng.random_range(5.0..=15.0)
                    };
                    Service {
                        demand,
                        reliability: reliability(&mut rng),
                    }
                })
                .collect(),
        };
        let scenario = Scenario {
            platform,
            services,
            seed: self.seed,
        };
        scenario.validate()?;
        Ok(scenario)
    }
}

const BIG_SERVICES: usize = 3;
const SMALL_SERVICES: usize = 298;

/// `ns` services with demand uniform in [5, 50] machines and target `10^-X`, `X ~ U[2, 8]`.
pub fn gen_uniform(ns: usize, mem: usize, seed: u64) -> Result<Scenario> {
    ScenarioSpec::uniform(ns, mem, seed).generate()
}

/// Three services with demand in [900, 1100] and 298 with demand in [5, 15].
pub fn gen_bivalued(mem: usize, seed: u64) -> Result<Scenario> {
    ScenarioSpec::bivalued(mem, seed).generate()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Heuristic {
    NoSharing,
    ColgenPd,
    ColgenFloat,
}

impl Heuristic {
    pub const ALL: [Heuristic; 3] = [Heuristic::NoSharing, Heuristic::ColgenPd, Heuristic::ColgenFloat];

    pub fn name(self) -> &'static str {
        match self {
            Heuristic::NoSharing => "no_sharing",
            Heuristic::ColgenPd => "colgen_pd",
            Heuristic::ColgenFloat => "colgen_float",
        }
    }
}

impl std::str::FromStr for Heuristic {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Heuristic::ALL
            .into_iter()
            .find(|h| h.name() == s)
            .ok_or_else(|| Error::Input(format!("unknown heuristic {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BenchOptions {
    pub pipeline: PipelineOptions,
    pub validate: bool,
    pub sample_size: usize,
    pub mode: ValidationMode,
    pub execution: Execution,
}

impl Default for BenchOptions {
    fn default() -> Self {
        BenchOptions {
            pipeline: PipelineOptions::default(),
            validate: false,
            sample_size: DEFAULT_SAMPLE_SIZE,
            mode: ValidationMode::Full,
            execution: Execution::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeuristicRun {
    pub heuristic: Heuristic,
    pub machines: Option<f64>,
    pub time_ms: f64,
    pub cg_iterations: Option<usize>,
    pub refinement_iterations: Option<usize>,
    pub reliability: Option<ReliabilityReport>,
    pub error: Option<String>,
}

impl HeuristicRun {
    fn failed(heuristic: Heuristic, time_ms: f64, err: &Error) -> Self {
        HeuristicRun {
            heuristic,
            machines: None,
            time_ms,
            cg_iterations: None,
            refinement_iterations: None,
            reliability: None,
            error: Some(err.to_string()),
        }
    }

    pub fn max_rel_violation(&self) -> Option<f64> {
        self.reliability.as_ref().map(ReliabilityReport::max_relative_violation)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub spec: ScenarioSpec,
    pub runs: Vec<HeuristicRun>,
}

impl RunReport {
    pub fn get(&self, h: Heuristic) -> Option<&HeuristicRun> {
        self.runs.iter().find(|r| r.heuristic == h)
    }

    pub fn csv_rows(&self) -> Vec<CsvRow> {
        self.runs
            .iter()
            .map(|r| CsvRow {
                scenario_kind: self.spec.kind.name().to_string(),
                ns: self.spec.ns,
                mem: self.spec.mem,
                seed: self.spec.seed,
                heuristic: r.heuristic.name().to_string(),
                machines: r.machines,
                time_ms: r.time_ms,
                max_rel_violation: r.max_rel_violation(),
                cg_iterations: r.cg_iterations,
            })
            .collect()
    }
}

fn elapsed_ms(start: Instant) -> f64 {
    start.elapsed().as_secs_f64() * 1e3
}

/// Runs every requested heuristic on the scenario of `spec`, timing each one.
/// A failing heuristic is recorded in its run and does not stop the others.
/// Both column-generation variants share one pipeline run; the fractional
/// time stops before rounding.
pub fn run_benchmark(spec: &ScenarioSpec, heuristics: &[Heuristic], options: &BenchOptions) -> Result<RunReport> {
    let scenario = spec.generate()?;
    let mut runs = Vec::new();
    let validate = |plan: &crate::model::AllocationPlan| -> Result<Option<ReliabilityReport>> {
        if !options.validate {
            return Ok(None);
        }
        validate_plan_reliability(plan, &scenario, options.sample_size, options.mode, options.execution).map(Some)
    };

    let mut sorted: Vec<Heuristic> = heuristics.to_vec();
    sorted.sort();
    sorted.dedup();

    let wants_colgen = sorted.iter().any(|h| matches!(h, Heuristic::ColgenPd | Heuristic::ColgenFloat));
    let colgen = wants_colgen.then(|| {
        let start = Instant::now();
        let packed = homogeneous::refine_with(&scenario.services, &scenario.platform, &options.pipeline.refinement)
            .and_then(|refinement| {
            colgen::column_generation(&refinement.plan, &scenario.platform, options.pipeline.colgen)
                .map(|cg| (refinement, cg))
        });
        let float_ms = elapsed_ms(start);
        let rounded = packed.as_ref().ok().map(|(_, cg)| colgen::round_plan(&cg.plan));
        (packed, float_ms, rounded, elapsed_ms(start))
    });

    for h in sorted {
        let run = match h {
            Heuristic::NoSharing => {
                let start = Instant::now();
                match no_sharing_with(&scenario, options.execution) {
                    Ok(plan) => {
                        let time_ms = elapsed_ms(start);
                        HeuristicRun {
                            heuristic: h,
                            machines: Some(plan.machines_used()),
                            time_ms,
                            cg_iterations: None,
                            refinement_iterations: None,
                            reliability: validate(&plan)?,
                            error: None,
                        }
                    }
                    Err(e) => HeuristicRun::failed(h, elapsed_ms(start), &e),
                }
            }
            Heuristic::ColgenFloat | Heuristic::ColgenPd => {
                let (packed, float_ms, rounded, pd_ms) = colgen.as_ref().expect("pipeline ran");
                match (h, packed, rounded) {
                    (_, Err(e), _) => HeuristicRun::failed(h, *float_ms, e),
                    (Heuristic::ColgenFloat, Ok((refinement, cg)), _) => HeuristicRun {
                        heuristic: h,
                        machines: Some(cg.objective),
                        time_ms: *float_ms,
                        cg_iterations: Some(cg.iterations),
                        refinement_iterations: Some(refinement.state.iteration),
                        reliability: None,
                        error: None,
                    },
                    (_, Ok(_), Some(Err(e))) => HeuristicRun::failed(h, *pd_ms, e),
                    (_, Ok((refinement, cg)), Some(Ok(plan))) => HeuristicRun {
                        heuristic: h,
                        machines: Some(plan.machines_used()),
                        time_ms: *pd_ms,
                        cg_iterations: Some(cg.iterations),
                        refinement_iterations: Some(refinement.state.iteration),
                        reliability: validate(plan)?,
                        error: None,
                    },
                    (_, Ok(_), None) => unreachable!("rounding runs whenever packing succeeds"),
                }
            }
        };
        runs.push(run);
    }
    Ok(RunReport { spec: *spec, runs })
}

/// Runs independent `(spec, heuristics)` cells, possibly concurrently.
pub fn run_grid(specs: &[ScenarioSpec], heuristics: &[Heuristic], options: &BenchOptions) -> Result<Vec<RunReport>> {
    let inner = BenchOptions {
        execution: if options.execution.is_parallel() { Execution::Sequential } else { options.execution },
        ..*options
    };
    options
        .execution
        .map(specs, |_, spec| run_benchmark(spec, heuristics, &inner))
        .into_iter()
        .collect()
}

/// One line of the benchmark CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsvRow {
    pub scenario_kind: String,
    pub ns: usize,
    pub mem: usize,
    pub seed: u64,
    pub heuristic: String,
    pub machines: Option<f64>,
    pub time_ms: f64,
    pub max_rel_violation: Option<f64>,
    pub cg_iterations: Option<usize>,
}

pub const CSV_HEADER: [&str; 9] = [
    "scenario_kind",
    "ns",
    "mem",
    "seed",
    "heuristic",
    "machines",
    "time_ms",
    "max_rel_violation",
    "cg_iterations",
];

pub fn write_csv<W: Write>(rows: &[CsvRow], writer: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(writer);
    w.write_record(CSV_HEADER)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv<R: Read>(reader: R) -> Result<Vec<CsvRow>> {
    let mut r = csv::Reader::from_reader(reader);
    if r.headers()?.iter().ne(CSV_HEADER) {
        return Err(Error::Input("unexpected benchmark CSV header".into()));
    }
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generators_are_seeded() {
        let a = gen_uniform(20, 5, 3).unwrap();
        assert_eq!(a, gen_uniform(20, 5, 3).unwrap());
        assert_ne!(a, gen_uniform(20, 5, 4).unwrap());
        for s in &a.services {
            assert!((5.0..=50.0).contains(&s.demand));
            assert!((1e-8..=1e-2).contains(&s.reliability));
        }
        let b = gen_bivalued(5, 3).unwrap();
        assert_eq!(b.services.len(), 301);
        assert_eq!(b, gen_bivalued(5, 3).unwrap());
        assert!(b.services[..3].iter().all(|s| (900.0..=1100.0).contains(&s.demand)));
        assert!(b.services[3..].iter().all(|s| (5.0..=15.0).contains(&s.demand)));
    }

    #[test]
    fn integer_exponents() {
        let spec = ScenarioSpec {
            integer_exponent: true,
            ..ScenarioSpec::uniform(50, 4, 9)
        };
        for s in spec.generate().unwrap().services {
            let x = -s.reliability.log10();
            assert!((x - x.round()).abs() < 1e-9);
        }
    }

    #[test]
    fn csv_round_trip() {
        let rows = vec![
            CsvRow {
                scenario_kind: "uniform".into(),
                ns: 10,
                mem: 5,
                seed: 1,
                heuristic: "colgen_pd".into(),
                machines: Some(42.0),
                time_ms: 1.5,
                max_rel_violation: Some(-0.25),
                cg_iterations: Some(12),
            },
            CsvRow {
                scenario_kind: "uniform".into(),
                ns: 10,
                mem: 5,
                seed: 1,
                heuristic: "colgen_float".into(),
                machines: None,
                time_ms: 0.5,
                max_rel_violation: None,
                cg_iterations: None,
            },
        ];
        let mut buf = Vec::new();
        write_csv(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("scenario_kind,ns,mem,seed,heuristic,machines,time_ms,max_rel_violation,cg_iterations\n"));
        assert_eq!(read_csv(buf.as_slice()).unwrap(), rows);
    }
}
