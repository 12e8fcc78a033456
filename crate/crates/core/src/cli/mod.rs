//! Command-line front end: load a JSON config, run the chains, write the
//! samples, a report and a manifest.
//!
//! Exit codes:
//!
//! | code | meaning |
//! |------|---------|
//! | 0 | success |
//! | 1 | any other failure |
//! | 2 | invalid config or arguments |
//! | 3 | the potential failed the `K`-invariance gate |
//! | 4 | I/O failure |
//! | 5 | a chain exceeded `diagnostics.max_rejection_rate` |
//!
//! Chains run on separate threads. Each writes its own part file, and the
//! parts are concatenated in chain order, so the output does not depend on
//! scheduling.

pub mod config;
pub mod output;

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::Parser;
use nalgebra::DVector;
use serde::Serialize;

use crate::diagnostics::{
    energy_error_scan, mean, mean_estimate, variance_estimate, vmf_mean_resultant_sphere, Benchmark, EssEstimate,
    MomentEstimate, ScalingFit,
};
use crate::error::{Error, Result};
use crate::flows::LieSystem;
use crate::lie::GroupFamily;
use crate::sampler::{hmc_chain_streaming, ChainSummary, HmcConfig};
pub use config::{RunConfig, SampleFormat, SCHEMA_VERSION};
use config::{Manifest, PotentialConfig, SpaceConfig};
use output::{SampleLayout, SampleWriter};

pub const EXIT_OTHER: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_K_INVARIANCE: i32 = 3;
pub const EXIT_IO: i32 = 4;
pub const EXIT_REJECTION_CEILING: i32 = 5;

pub const SAMPLES_STEM: &str = "samples";
pub const REPORT_FILE: &str = "report.json";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Debug, Parser)]
#[command(name = "lie-hmc", version, about = "HMC on matrix Lie groups and homogeneous spaces")]
pub struct Cli {
    /// JSON run configuration (or a manifest from an earlier run).
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides `output.dir`.
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
    /// Overrides `seed`.
    #[arg(long)]
    pub seed_override: Option<u64>,
    /// Overrides `chains`.
    #[arg(long)]
    pub chains: Option<usize>,
    /// Suppress progress messages.
    #[arg(long)]
    pub quiet: bool,
}

pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_)
        | Error::InvalidPotential(_)
        | Error::UnsupportedGroup(_)
        | Error::GeodesicUnavailable(_)
        | Error::NotPositiveDefinite(_)
        | Error::InvalidSplit(_)
        | Error::Json(_) => EXIT_CONFIG,
        Error::NotKInvariant { .. } => EXIT_K_INVARIANCE,
        Error::Io(_) => EXIT_IO,
        _ => EXIT_OTHER,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DeltaHStats {
    pub count: usize,
    pub mean: f64,
    pub mean_abs: f64,
    pub max_abs: f64,
}

impl DeltaHStats {
    fn new(dh: &[f64]) -> Self {
        if dh.is_empty() {
            return Self {
                count: 0,
                mean: f64::NAN,
                mean_abs: f64::NAN,
                max_abs: f64::NAN,
            };
        }
        Self {
            count: dh.len(),
            mean: mean(dh),
            mean_abs: dh.iter().map(|x| x.abs()).sum::<f64>() / dh.len() as f64,
            max_abs: dh.iter().map(|x| x.abs()).fold(0.0, f64::max),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ChainReport {
    pub chain: u64,
    pub trajectories: usize,
    pub accepted: usize,
    pub acceptance_rate: f64,
    pub rejection_rate: f64,
    pub blowups: usize,
    pub delta_h: DeltaHStats,
    pub expected_acceptance: f64,
    pub max_vertical_leakage: f64,
    pub max_membership_defect: f64,
    pub ess: BTreeMap<String, EssEstimate>,
}

impl ChainReport {
    fn new(s: &ChainSummary) -> Self {
        Self {
            chain: s.chain,
            trajectories: s.trajectories,
            accepted: s.accepted,
            acceptance_rate: s.acceptance_rate,
            rejection_rate: 1.0 - s.acceptance_rate,
            blowups: s.blowups,
            delta_h: DeltaHStats::new(&s.delta_h),
            expected_acceptance: s.expected_acceptance,
            max_vertical_leakage: s.max_vertical_leakage,
            max_membership_defect: s.max_membership_defect,
            ess: s.ess.iter().cloned().collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Observable {
    pub name: String,
    pub estimate: MomentEstimate,
    /// Known exact value, when there is one.
    pub oracle: Option<f64>,
    pub z_score: Option<f64>,
}

impl Observable {
    fn new(name: &str, estimate: MomentEstimate, oracle: Option<f64>) -> Self {
        Self {
            name: name.into(),
            estimate,
            oracle,
            z_score: oracle.map(|o| estimate.z_score(o)),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Report {
    pub schema_version: u32,
    pub version: String,
    pub potential: String,
    pub scheme: String,
    pub step_size: f64,
    pub n_steps: usize,
    pub acceptance_rate: f64,
    pub delta_h: DeltaHStats,
    pub blowups: usize,
    pub max_vertical_leakage: f64,
    pub max_membership_defect: f64,
    pub rejection_ceiling_exceeded: bool,
    pub chains: Vec<ChainReport>,
    pub observables: Vec<Observable>,
    pub energy_scan: Option<ScalingFit>,
}

#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub output_dir: PathBuf,
    pub samples_path: PathBuf,
    pub report: Report,
}

impl RunOutcome {
    pub fn exit_code(&self) -> i32 {
        if self.report.rejection_ceiling_exceeded {
            EXIT_REJECTION_CEILING
        } else {
            0
        }
    }
}

/// Observable series retained per chain for the report.
#[derive(Default)]
struct ChainSeries {
    trace: Vec<f64>,
    direction: Vec<DVector<f64>>,
}

struct ChainOutput {
    summary: ChainSummary,
    series: ChainSeries,
}

/// Applies the command-line overrides to a loaded config.
pub fn resolve_config(cli: &Cli) -> Result<RunConfig> {
    let mut config = RunConfig::load(&cli.config).map_err(|e| match e {
        Error::Io(io) => Error::Config(format!("cannot read {}: {io}", cli.config.display())),
        other => other,
    })?;
    if let Some(seed) = cli.seed_override {
        config.seed = seed;
    }
    if let Some(chains) = cli.chains {
        config.chains = chains;
    }
    config.output.dir = Some(config.resolve_output_dir(cli.output_dir.as_deref()));
    config.validate()?;
    Ok(config)
}

fn build_system(config: &RunConfig) -> Result<LieSystem> {
    let system = match config.build_quotient()? {
        Some(q) => q.system().clone(),
        None => LieSystem::auto(config.build_algebra()?)?,
    };
    system.with_exp_method(config.exp_method)
}

fn samples_path(dir: &Path, format: SampleFormat) -> PathBuf {
    let ext = match format {
        SampleFormat::Jsonl => "jsonl",
        SampleFormat::Csv => "csv",
    };
    dir.join(format!("{SAMPLES_STEM}.{ext}"))
}

fn part_path(dir: &Path, chain: usize) -> PathBuf {
    dir.join(format!(".{SAMPLES_STEM}.chain{chain}.part"))
}

fn run_chain(config: &RunConfig, system: &LieSystem, chain: usize, part: &Path, layout: SampleLayout) -> Result<ChainOutput> {
    let potential = config.build_potential()?;
    let quotient = config.build_quotient()?;
    let mut hmc = HmcConfig::new(config.integrator.scheme()?, config.n_samples, config.seed);
    hmc.burn_in = config.burn_in;
    hmc.thinning = config.thinning;
    hmc.chain = chain as u64;
    hmc.retraction_cadence = config.retraction_cadence;
    hmc.horizontal = quotient.as_ref().map(|q| q.split().clone());

    let mut writer = SampleWriter::new(layout, BufWriter::new(File::create(part)?));
    let mut series = ChainSeries::default();
    let n = config.n();
    let start = nalgebra::DMatrix::identity(n, n);
    let summary = hmc_chain_streaming(system, &start, potential.as_ref(), &hmc, &mut |rec| {
        let rep = quotient.as_ref().map(|q| q.representative(&rec.q));
        series.trace.push(rec.q.trace());
        if let Some(r) = &rep {
            if r.ncols() == 1 {
                series.direction.push(r.column(0).into_owned());
            }
        }
        writer.write(rec, rep.as_ref())
    })?;
    writer.finish()?.flush()?;
    Ok(ChainOutput { summary, series })
}

fn observables(config: &RunConfig, outputs: &[ChainOutput]) -> Vec<Observable> {
    let mut out = Vec::new();
    let trace: Vec<f64> = outputs.iter().flat_map(|o| o.series.trace.iter().copied()).collect();
    let haar_so = matches!(config.potential, PotentialConfig::Haar)
        && matches!(
            config.space,
            SpaceConfig::Group {
                family: GroupFamily::SpecialOrthogonal,
                ..
            }
        );
    if let SpaceConfig::Group { n, .. } = config.space {
        if let Ok(m) = mean_estimate(&trace) {
            out.push(Observable::new("trace_mean", m, haar_so.then_some(0.0)));
        }
        if let Ok(v) = variance_estimate(&trace) {
            // The defining representation of SO(n) is irreducible for n ≥ 3.
            out.push(Observable::new("trace_variance", v, (haar_so && n >= 3).then_some(1.0)));
        }
    }
    if let SpaceConfig::Sphere { n } = config.space {
        let (mu, kappa) = match &config.potential {
            PotentialConfig::Vmf { mu, kappa } => (DVector::from_column_slice(mu), *kappa),
            _ => {
                let mut e = DVector::zeros(n);
                e[n - 1] = 1.0;
                (e, 0.0)
            }
        };
        let dirs: Vec<DVector<f64>> = outputs.iter().flat_map(|o| o.series.direction.iter().cloned()).collect();
        let proj: Vec<f64> = dirs.iter().map(|x| x.dot(&mu)).collect();
        let oracle = vmf_mean_resultant_sphere(n, kappa);
        if let Ok(m) = mean_estimate(&proj) {
            out.push(Observable::new("mean_direction_projection", m, Some(oracle)));
        }
        if let Ok(r) = crate::diagnostics::mean_resultant(&dirs) {
            // ‖x̄‖ is biased upward by O(1/√N) at κ = 0, so no oracle there.
            out.push(Observable::new("mean_resultant_length", r, (kappa > 0.0).then_some(oracle)));
        }
    }
    out
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn merge_parts(target: &Path, header: &str, parts: &[PathBuf]) -> Result<()> {
    let mut out = BufWriter::new(File::create(target)?);
    out.write_all(header.as_bytes())?;
    for p in parts {
        let mut f = File::open(p)?;
        std::io::copy(&mut f, &mut out)?;
    }
    out.flush()?;
    for p in parts {
        fs::remove_file(p)?;
    }
    Ok(())
}

/// Runs a resolved config and writes all artifacts into its output directory.
pub fn run_config(config: &RunConfig, quiet: bool) -> Result<RunOutcome> {
    config.validate()?;
    let dir = config.resolve_output_dir(None);
    fs::create_dir_all(&dir)?;
    let system = build_system(config)?;
    let layout = SampleLayout {
        format: config.output.format,
        n: config.n(),
        representative_columns: config.build_quotient()?.map(|q| q.columns()),
    };

    let parts: Vec<PathBuf> = (0..config.chains).map(|c| part_path(&dir, c)).collect();
    let results: Vec<Result<ChainOutput>> = std::thread::scope(|scope| {
        let handles: Vec<_> = parts
            .iter()
            .enumerate()
            .map(|(c, part)| {
                let system = &system;
                scope.spawn(move || run_chain(config, system, c, part, layout))
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().unwrap_or_else(|_| Err(Error::NonFinite("chain thread panicked".into()))))
            .collect()
    });
    let mut outputs = Vec::with_capacity(results.len());
    for r in results {
        match r {
            Ok(o) => outputs.push(o),
            Err(e) => {
                for p in &parts {
                    let _ = fs::remove_file(p);
                }
                return Err(e);
            }
        }
    }
    let samples = samples_path(&dir, config.output.format);
    merge_parts(&samples, &layout.header(), &parts)?;

    let energy_scan = match &config.diagnostics.energy_scan {
        Some(scan) => {
            let bench = Benchmark::new(
                "config",
                system.clone(),
                config.build_potential()?,
                scan.trajectory_time,
                scan.trajectories,
                config.seed,
            )?;
            Some(energy_error_scan(&bench, config.integrator.kind(), &scan.step_sizes)?)
        }
        None => None,
    };

    let chains: Vec<ChainReport> = outputs.iter().map(|o| ChainReport::new(&o.summary)).collect();
    let ceiling = config.diagnostics.max_rejection_rate;
    let all_dh: Vec<f64> = outputs.iter().flat_map(|o| o.summary.delta_h.iter().copied()).collect();
    let trajectories: usize = chains.iter().map(|c| c.trajectories).sum();
    let accepted: usize = chains.iter().map(|c| c.accepted).sum();
    let report = Report {
        schema_version: SCHEMA_VERSION,
        version: env!("CARGO_PKG_VERSION").into(),
        potential: config.build_potential()?.label().into(),
        scheme: config.integrator.kind().name().into(),
        step_size: config.integrator.step_size,
        n_steps: config.integrator.n_steps,
        acceptance_rate: accepted as f64 / trajectories as f64,
        delta_h: DeltaHStats::new(&all_dh),
        blowups: chains.iter().map(|c| c.blowups).sum(),
        max_vertical_leakage: chains.iter().map(|c| c.max_vertical_leakage).fold(0.0, f64::max),
        max_membership_defect: chains.iter().map(|c| c.max_membership_defect).fold(0.0, f64::max),
        rejection_ceiling_exceeded: chains.iter().any(|c| c.rejection_rate > ceiling),
        observables: observables(config, &outputs),
        chains,
        energy_scan,
    };
    write_json(&dir.join(REPORT_FILE), &report)?;
    write_json(
        &dir.join(MANIFEST_FILE),
        &Manifest {
            version: env!("CARGO_PKG_VERSION").into(),
            schema_version: SCHEMA_VERSION,
            config: config.clone(),
        },
    )?;
    if !quiet {
        for c in &report.chains {
            eprintln!(
                "chain {}: acceptance {:.3}, blow-ups {}, mean |dH| {:.3e}",
                c.chain, c.acceptance_rate, c.blowups, c.delta_h.mean_abs
            );
        }
        eprintln!("wrote {}", samples.display());
    }
    Ok(RunOutcome {
        output_dir: dir,
        samples_path: samples,
        report,
    })
}

pub fn run(cli: &Cli) -> Result<RunOutcome> {
    let config = resolve_config(cli)?;
    run_config(&config, cli.quiet)
}

/// Parses `args` (including the program name), runs, and returns the exit
/// code. Errors go to stderr.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { 0 };
        }
    };
    match run(&cli) {
        Ok(outcome) => {
            let code = outcome.exit_code();
            if code != 0 {
                eprintln!("error: a chain's rejection rate exceeded the configured ceiling");
            }
            code
        }
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_config(dir: &Path, body: serde_json::Value) -> PathBuf {
        let p = dir.join("config.json");
        fs::write(&p, body.to_string()).unwrap();
        p
    }

    fn so3_haar(samples: usize) -> serde_json::Value {
        serde_json::json!({
            "schema_version": 1,
            "space": {"group": {"family": "SO", "n": 3}},
            "potential": {"name": "haar"},
            "integrator": {"scheme": "leapfrog", "step_size": 0.5, "n_steps": 4},
            "n_samples": samples,
            "seed": 5
        })
    }

    fn args(config: &Path, out: &Path) -> Vec<String> {
        vec![
            "lie-hmc".into(),
            "--config".into(),
            config.display().to_string(),
            "--output-dir".into(),
            out.display().to_string(),
            "--quiet".into(),
        ]
    }

    #[test]
    fn minimal_run_writes_all_artifacts() {
        let tmp = tempfile::tempdir().unwrap();
        let cfg = write_config(tmp.path(), so3_haar(200));
        let out = tmp.path().join("out");
        assert_eq!(main_with_args(args(&cfg, &out)), 0);
        let text = fs::read_to_string(out.join("samples.jsonl")).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 201);
        let header: serde_json::Value = serde_json::from_str(lines[0]).unwrap();
        assert_eq!(header["schema_version"], 1);
        let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join(REPORT_FILE)).unwrap()).unwrap();
        assert_eq!(report["acceptance_rate"], 1.0);
        assert!(out.join(MANIFEST_FILE).exists());
        assert!(fs::read_dir(&out).unwrap().all(|e| !e.unwrap().file_name().to_string_lossy().ends_with(".part")));
    }

    #[test]
    fn exit_codes() {
        let tmp = tempfile::tempdir().unwrap();
        let out = tmp.path().join("out");

        let mut bad = so3_haar(10);
        bad["n_samples"] = 0.into();
        assert_eq!(main_with_args(args(&write_config(tmp.path(), bad), &out)), EXIT_CONFIG);
        assert_eq!(main_with_args(args(&tmp.path().join("missing.json"), &out)), EXIT_CONFIG);
        assert_eq!(main_with_args(["lie-hmc", "--bogus"]), EXIT_CONFIG);

        let mut gate = so3_haar(10);
        gate["space"] = serde_json::json!({"sphere": {"n": 3}});
        gate["potential"] = serde_json::json!({"name": "gauge", "u": [[1, 2, 3], [4, 5, 6], [7, 8, 9]], "beta": 1});
        assert_eq!(main_with_args(args(&write_config(tmp.path(), gate), &out)), EXIT_K_INVARIANCE);

        let blocker = tmp.path().join("file");
        fs::write(&blocker, "x").unwrap();
        let cfg = write_config(tmp.path(), so3_haar(10));
        assert_eq!(main_with_args(args(&cfg, &blocker.join("sub"))), EXIT_IO);

        let mut hot = so3_haar(50);
        hot["potential"] = serde_json::json!({"name": "gauge", "u": [[1, 2, 3], [4, 5, 6], [7, 8, 9]], "beta": 30});
        hot["integrator"] = serde_json::json!({"scheme": "leapfrog", "step_size": 0.5, "n_steps": 5});
        hot["diagnostics"] = serde_json::json!({"max_rejection_rate": 0.1});
        assert_eq!(main_with_args(args(&write_config(tmp.path(), hot), &out)), EXIT_REJECTION_CEILING);
        assert!(out.join(REPORT_FILE).exists());
    }

    #[test]
    fn overrides_and_manifest_rerun() {
        let tmp = tempfile::tempdir().unwrap();
        let mut c = so3_haar(120);
        c["output"] = serde_json::json!({"format": "csv"});
        let cfg = write_config(tmp.path(), c);
        let out1 = tmp.path().join("a");
        let mut a = args(&cfg, &out1);
        a.extend(["--chains".into(), "3".into(), "--seed-override".into(), "99".into()]);
        assert_eq!(main_with_args(a), 0);
        let first = fs::read(out1.join("samples.csv")).unwrap();
        let text = String::from_utf8(first.clone()).unwrap();
        assert_eq!(text.lines().count(), 2 + 3 * 120);
        let manifest: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(out1.join(MANIFEST_FILE)).unwrap()).unwrap();
        assert_eq!(manifest["config"]["seed"], 99);
        assert_eq!(manifest["config"]["chains"], 3);

        let out2 = tmp.path().join("b");
        assert_eq!(main_with_args(args(&out1.join(MANIFEST_FILE), &out2)), 0);
        assert_eq!(fs::read(out2.join("samples.csv")).unwrap(), first);
    }

    #[test]
    fn sphere_report_has_oracle_entry() {
        let tmp = tempfile::tempdir().unwrap();
        let cfg = write_config(
            tmp.path(),
            serde_json::json!({
                "schema_version": 1,
                "space": {"sphere": {"n": 3}},
                "potential": {"name": "vmf", "mu": [0, 0, 1], "kappa": 2},
                "integrator": {"scheme": "leapfrog", "step_size": 0.3, "n_steps": 6},
                "n_samples": 3000,
                "burn_in": 100,
                "seed": 11,
                "diagnostics": {"energy_scan": {"step_sizes": [0.2, 0.1, 0.05], "trajectories": 10}}
            }),
        );
        let out = tmp.path().join("out");
        assert_eq!(main_with_args(args(&cfg, &out)), 0);
        let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join(REPORT_FILE)).unwrap()).unwrap();
        let obs = report["observables"].as_array().unwrap();
        let r = obs.iter().find(|o| o["name"] == "mean_resultant_length").unwrap();
        assert!((r["oracle"].as_f64().unwrap() - 0.5373).abs() < 1e-4);
        assert!(r["z_score"].as_f64().unwrap() < 4.0, "{r}");
        assert!(report["max_vertical_leakage"].as_f64().unwrap() < 1e-9);
        let slope = report["energy_scan"]["slope"].as_f64().unwrap();
        assert!(slope > 1.5 && slope < 2.5, "{slope}");
        let first = fs::read_to_string(out.join("samples.jsonl")).unwrap();
        let rec: serde_json::Value = serde_json::from_str(first.lines().nth(1).unwrap()).unwrap();
        assert_eq!(rec["representative"].as_array().unwrap().len(), 3);
    }
}
