//! Config-driven experiments: each command reads an [`ExperimentConfig`],
//! writes CSV/JSON artifacts into an output directory and a manifest that
//! ties every artifact to the config hash.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use log::info;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::damping::{
    dsc_limit_scan, dsc_scan, tpc_scan, ugcc_lattice, ugcc_scan, ConditionReport, Damping, DampingSpec, Quadrature,
    ScanSettings,
};
use crate::dynamics::{flow_integrate, PhaseState};
use crate::evolution::{
    cfl_limit, damped_spectrum_1d, decay_fit, evolve, resolvent_grid, resolvent_scan_with, turning_probe, DecayFit,
    EnergyTrace, ProbeComparison, ResolventScan, ResolventSettings, WaveState,
};
use crate::fields::{Field, Grid};
use crate::potentials::{Potential, PotentialSpec};
use crate::quasimodes::{
    bump_grid, fourier_peak, kinetic_wavepacket, sequence_epsilon_profile, tpc_violation_sequence,
    turning_point_bump, BumpNorms, QuasimodeReport, ViolationSearch, WavePacketSpec,
};
use crate::{Error, Result};

pub const DEFAULT_SEED: u64 = 7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Command {
    Flow,
    Conditions,
    DscLimit,
    Quasimode,
    KineticSequence,
    TpcWitness,
    Evolve,
    Probe,
    Resolvent,
    Spectrum,
    Suite,
}

impl Command {
    pub const ALL: [Command; 11] = [
        Command::Flow,
        Command::Conditions,
        Command::DscLimit,
        Command::Quasimode,
        Command::KineticSequence,
        Command::TpcWitness,
        Command::Evolve,
        Command::Probe,
        Command::Resolvent,
        Command::Spectrum,
        Command::Suite,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Command::Flow => "flow",
            Command::Conditions => "conditions",
            Command::DscLimit => "dsc-limit",
            Command::Quasimode => "quasimode",
            Command::KineticSequence => "kinetic-sequence",
            Command::TpcWitness => "tpc-witness",
            Command::Evolve => "evolve",
            Command::Probe => "probe",
            Command::Resolvent => "resolvent",
            Command::Spectrum => "spectrum",
            Command::Suite => "suite",
        }
    }
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Command {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Command::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| Error::Unknown { kind: "command", name: s.to_string() })
    }
}

/// Top-level config document. Every section is optional; commands read
/// only their own section.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub potential: Option<PotentialSpec>,
    #[serde(default)]
    pub damping: Option<DampingSpec>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub flow: FlowParams,
    #[serde(default)]
    pub conditions: ConditionParams,
    #[serde(default)]
    pub dsc_limit: DscLimitParams,
    #[serde(default)]
    pub quasimode: QuasimodeParams,
    #[serde(default)]
    pub kinetic_sequence: KineticParams,
    #[serde(default)]
    pub tpc_witness: WitnessParams,
    #[serde(default)]
    pub evolve: EvolveParams,
    #[serde(default)]
    pub probe: ProbeParams,
    #[serde(default)]
    pub resolvent: ResolventParams,
    #[serde(default)]
    pub spectrum: SpectrumParams,
    #[serde(default)]
    pub suite: SuiteParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlowParams {
    /// Defaults to `(1, 0, ..)`.
    pub x0_space: Option<Vec<f64>>,
    /// Defaults to zero.
    pub xi0_momentum: Option<Vec<f64>>,
    #[serde(rename = "T_time")]
    pub t_time: f64,
    pub dt_time: f64,
}

impl Default for FlowParams {
    fn default() -> Self {
        FlowParams { x0_space: None, xi0_momentum: None, t_time: 10.0, dt_time: 1e-3 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConditionParams {
    /// Half-length of UGCC segments and DSC flow horizon.
    #[serde(rename = "T_time")]
    pub t_time: f64,
    /// TPC ball scale and DSC mollifier scale.
    #[serde(rename = "R_space")]
    pub big_r_space: f64,
    /// UGCC mollifier radius.
    pub r_space: f64,
    pub ugcc_half_width_space: f64,
    pub ugcc_per_axis: usize,
    pub ugcc_directions: usize,
    pub tpc_shells: Vec<f64>,
    pub tpc_directions: usize,
    pub dsc_lambdas: Vec<f64>,
    pub dsc_samples: usize,
    pub threshold: Option<f64>,
    pub conv_nodes: Option<usize>,
    pub ray_nodes: Option<usize>,
}

impl Default for ConditionParams {
    fn default() -> Self {
        ConditionParams {
            t_time: 2.0,
            big_r_space: 1.0,
            r_space: 0.1,
            ugcc_half_width_space: 5.0,
            ugcc_per_axis: 7,
            ugcc_directions: 16,
            tpc_shells: vec![10.0, 20.0, 40.0],
            tpc_directions: 4096,
            dsc_lambdas: vec![25.0, 100.0, 400.0],
            dsc_samples: 500,
            threshold: None,
            conv_nodes: None,
            ray_nodes: None,
        }
    }
}

impl ConditionParams {
    fn settings(&self, dim: usize) -> Result<ScanSettings> {
        let base = Quadrature::default_for(dim)?;
        Ok(ScanSettings {
            quadrature: Quadrature::new(
                dim,
                self.conv_nodes.unwrap_or(base.conv_nodes()),
                self.ray_nodes.unwrap_or(base.ray_nodes()),
            )?,
            threshold: self.threshold,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DscLimitParams {
    #[serde(rename = "T_times")]
    pub t_times: Vec<f64>,
    #[serde(rename = "R_spaces")]
    pub big_r_spaces: Vec<f64>,
    pub lambdas: Vec<f64>,
    pub samples: usize,
}

impl Default for DscLimitParams {
    fn default() -> Self {
        DscLimitParams {
            t_times: vec![1.0, 2.0, 4.0],
            big_r_spaces: vec![0.5, 1.0, 2.0],
            lambdas: vec![25.0, 100.0, 400.0],
            samples: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QuasimodeParams {
    /// Defaults to `(20, 0, ..)`.
    pub x0_space: Option<Vec<f64>>,
    #[serde(rename = "R_space")]
    pub big_r_space: f64,
    /// Nodes per axis; defaults to 4001 in 1D and 161 in 2D.
    pub grid_points: Option<usize>,
}

impl Default for QuasimodeParams {
    fn default() -> Self {
        QuasimodeParams { x0_space: None, big_r_space: 2.0, grid_points: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KineticParams {
    pub indices: Vec<usize>,
    pub base_space: Option<Vec<f64>>,
    /// Defaults to the first axis.
    pub direction: Option<Vec<f64>>,
    /// `t_n = length_per_index_space · n`.
    pub length_per_index_space: f64,
    /// `r_n = width_numerator_space / n`.
    pub width_numerator_space: f64,
    pub points_per_wavelength: f64,
}

impl Default for KineticParams {
    fn default() -> Self {
        KineticParams {
            indices: vec![4, 6, 8],
            base_space: None,
            direction: None,
            length_per_index_space: 0.5,
            width_numerator_space: 2.0,
            points_per_wavelength: 32.0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WitnessParams {
    pub n_max: Option<usize>,
    pub angles: Option<usize>,
    pub shells: Option<usize>,
    pub shell_step: Option<f64>,
    pub grid_points: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvolveParams {
    #[serde(rename = "T_time")]
    pub t_time: f64,
    /// Defaults to half the stability limit.
    pub dt_time: Option<f64>,
    pub half_width_space: f64,
    pub grid_points: usize,
    pub center_space: Option<Vec<f64>>,
    pub width_space: f64,
    /// Carrier wavenumber along the first axis.
    pub wavenumber: f64,
}

impl Default for EvolveParams {
    fn default() -> Self {
        EvolveParams {
            t_time: 10.0,
            dt_time: None,
            half_width_space: 10.0,
            grid_points: 401,
            center_space: None,
            width_space: 1.0,
            wavenumber: 3.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeParams {
    /// Defaults to `(20.75, 0, ..)`.
    pub x0_space: Option<Vec<f64>>,
    #[serde(rename = "R_space")]
    pub big_r_space: f64,
    pub grid_points: usize,
    /// Defaults to `2/λ`.
    #[serde(rename = "T_time")]
    pub t_time: Option<f64>,
    /// Constant reference damping; defaults to `b_max`.
    pub reference_amplitude: Option<f64>,
}

impl Default for ProbeParams {
    fn default() -> Self {
        ProbeParams { x0_space: None, big_r_space: 1.0, grid_points: 1201, t_time: None, reference_amplitude: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ResolventParams {
    /// Explicit `λ` list; otherwise `λ_n = √(n + ½)` for `n ≤ n_max`.
    pub lambdas: Option<Vec<f64>>,
    pub n_max: usize,
    pub points_per_wavelength: f64,
}

impl Default for ResolventParams {
    fn default() -> Self {
        ResolventParams { lambdas: None, n_max: 200, points_per_wavelength: 16.0 }
    }
}

impl ResolventParams {
    pub fn lambda_grid(&self) -> Vec<f64> {
        self.lambdas
            .clone()
            .unwrap_or_else(|| (0..=self.n_max).map(|n| (n as f64 + 0.5).sqrt()).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpectrumParams {
    pub grid_points: usize,
    pub half_width_space: f64,
    pub count: usize,
}

impl Default for SpectrumParams {
    fn default() -> Self {
        SpectrumParams { grid_points: 321, half_width_space: 8.0, count: 40 }
    }
}

/// The canonical matrix: harmonic confinement with `b ≡ 1`, exterior,
/// ball and fine checkerboard damping. Conditions are scanned in 2D; the
/// resolvent scan and the decay probe use the 1D analogues.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SuiteParams {
    pub conditions: ConditionParams,
    pub resolvent: ResolventParams,
    pub probe: ProbeParams,
}

impl Default for SuiteParams {
    fn default() -> Self {
        SuiteParams {
            conditions: ConditionParams::default(),
            resolvent: ResolventParams::default(),
            probe: ProbeParams::default(),
        }
    }
}

pub const CANONICAL_PAIRS: [&str; 4] = ["constant", "exterior", "ball", "checkerboard"];

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn potential(&self) -> Result<Potential> {
        self.potential
            .as_ref()
            .ok_or_else(|| Error::precondition("config is missing `potential`"))?
            .build()
    }

    pub fn damping(&self, dim: usize) -> Result<Damping> {
        self.damping
            .as_ref()
            .ok_or_else(|| Error::precondition("config is missing `damping`"))?
            .build(dim)
    }

    fn optional_damping(&self, dim: usize) -> Result<Option<Damping>> {
        self.damping.as_ref().map(|d| d.build(dim)).transpose()
    }
}

/// Thread and seed overrides from the command line.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RunOptions {
    pub threads: Option<usize>,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArtifactEntry {
    pub path: String,
    pub sha256: String,
    pub bytes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub config_hash: String,
    pub seed: u64,
    pub threads: Option<usize>,
    pub version: String,
    pub wall_time_seconds: f64,
    pub artifacts: Vec<ArtifactEntry>,
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Collects artifact files under an output directory.
struct Artifacts {
    root: PathBuf,
    entries: Vec<ArtifactEntry>,
}

impl Artifacts {
    fn new(root: &Path) -> Result<Self> {
        fs::create_dir_all(root)?;
        Ok(Artifacts { root: root.to_path_buf(), entries: Vec::new() })
    }

    fn put(&mut self, rel: &str, bytes: Vec<u8>) -> Result<()> {
        let path = self.root.join(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::write(&path, &bytes)?;
        self.entries.push(ArtifactEntry { path: rel.to_string(), sha256: sha256_hex(&bytes), bytes: bytes.len() });
        Ok(())
    }

    fn json<T: Serialize>(&mut self, rel: &str, value: &T) -> Result<()> {
        let mut bytes = serde_json::to_vec_pretty(value)?;
        bytes.push(b'\n');
        self.put(rel, bytes)
    }

    fn csv(&mut self, rel: &str, write: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<()> {
        let mut bytes = Vec::new();
        write(&mut bytes)?;
        self.put(rel, bytes)
    }

    fn report(&mut self, stem: &str, rep: &ConditionReport) -> Result<()> {
        self.json(&format!("{stem}.json"), rep)?;
        self.csv(&format!("{stem}.csv"), |w| rep.write_csv(w))
    }
}

/// Reads the config at `config_path` and runs `command` into `out`.
pub fn run(command: Command, config_path: &Path, out: &Path, opts: &RunOptions) -> Result<Manifest> {
    let raw = fs::read(config_path).map_err(|e| {
        Error::precondition(format!("cannot read config {}: {e}", config_path.display()))
    })?;
    let text = std::str::from_utf8(&raw).map_err(|_| Error::precondition("config is not valid UTF-8"))?;
    let config = ExperimentConfig::from_json(text)?;
    run_config(command, &config, &raw, out, opts)
}

/// Runs `command` on an already parsed config; `raw` is hashed into the
/// manifest.
pub fn run_config(
    command: Command,
    config: &ExperimentConfig,
    raw: &[u8],
    out: &Path,
    opts: &RunOptions,
) -> Result<Manifest> {
    let seed = opts.seed.or(config.seed).unwrap_or(DEFAULT_SEED);
    let start = Instant::now();
    let mut artifacts = Artifacts::new(out)?;
    let work = |a: &mut Artifacts| dispatch(command, config, seed, a);
    match opts.threads {
        Some(0) => return Err(Error::precondition("--threads must be at least 1")),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::numerical(format!("cannot build thread pool: {e}")))?;
            pool.install(|| work(&mut artifacts))?;
        }
        None => work(&mut artifacts)?,
    }
    let manifest = Manifest {
        command: command.to_string(),
        config_hash: sha256_hex(raw),
        seed,
        threads: opts.threads,
        version: env!("CARGO_PKG_VERSION").to_string(),
        wall_time_seconds: start.elapsed().as_secs_f64(),
        artifacts: artifacts.entries.clone(),
    };
    artifacts.json("manifest.json", &manifest)?;
    info!("{command}: {} artifacts in {:.2} s", manifest.artifacts.len(), manifest.wall_time_seconds);
    Ok(manifest)
}

fn dispatch(command: Command, config: &ExperimentConfig, seed: u64, a: &mut Artifacts) -> Result<()> {
    match command {
        Command::Flow => cmd_flow(config, a),
        Command::Conditions => {
            let pot = config.potential()?;
            let b = config.damping(pot.dim())?;
            let outcome = run_conditions(&pot, &b, &config.conditions, seed)?;
            write_conditions(a, "", &outcome)
        }
        Command::DscLimit => cmd_dsc_limit(config, seed, a),
        Command::Quasimode => cmd_quasimode(config, a),
        Command::KineticSequence => cmd_kinetic(config, a),
        Command::TpcWitness => cmd_witness(config, a),
        Command::Evolve => cmd_evolve(config, a),
        Command::Probe => cmd_probe(config, a),
        Command::Resolvent => cmd_resolvent(config, seed, a),
        Command::Spectrum => cmd_spectrum(config, a),
        Command::Suite => {
            let matrix = run_suite(&config.suite, seed, Some(a))?;
            a.json("consistency.json", &matrix)?;
            a.csv("consistency.csv", |w| matrix.write_csv(w))
        }
    }
}

fn axis_point(dim: usize, first: f64) -> Vec<f64> {
    let mut v = vec![0.0; dim];
    v[0] = first;
    v
}

fn check_len(name: &str, v: &[f64], dim: usize) -> Result<()> {
    if v.len() != dim {
        return Err(Error::precondition(format!("`{name}` must have {dim} entries, got {}", v.len())));
    }
    Ok(())
}

#[derive(Serialize)]
struct FlowSummary {
    p0: f64,
    drift: f64,
    dt: f64,
    steps: usize,
    final_state: PhaseState,
}

fn cmd_flow(config: &ExperimentConfig, a: &mut Artifacts) -> Result<()> {
    let pot = config.potential()?;
    let d = pot.dim();
    let p = &config.flow;
    let x0 = p.x0_space.clone().unwrap_or_else(|| axis_point(d, 1.0));
    let xi0 = p.xi0_momentum.clone().unwrap_or_else(|| vec![0.0; d]);
    check_len("x0_space", &x0, d)?;
    check_len("xi0_momentum", &xi0, d)?;
    let traj = flow_integrate(&pot, &PhaseState::new(x0, xi0)?, p.t_time, p.dt_time)?;
    a.csv("trajectory.csv", |w| traj.write_csv(&pot, w))?;
    a.json(
        "flow.json",
        &FlowSummary { p0: traj.p0, drift: traj.drift, dt: traj.dt, steps: traj.len() - 1, final_state: traj.last() },
    )
}

/// UGCC, TPC and DSC reports for one `(V, b)` pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionsOutcome {
    pub ugcc: ConditionReport,
    pub tpc: ConditionReport,
    pub dsc: ConditionReport,
}

impl ConditionsOutcome {
    pub fn ugcc_and_tpc(&self) -> bool {
        self.ugcc.pass && self.tpc.pass
    }
}

pub fn run_conditions(pot: &Potential, b: &Damping, p: &ConditionParams, seed: u64) -> Result<ConditionsOutcome> {
    let d = pot.dim();
    let settings = p.settings(d)?;
    let lattice = ugcc_lattice(d, p.ugcc_half_width_space, p.ugcc_per_axis, p.ugcc_directions);
    let ugcc = ugcc_scan(b, p.t_time, p.r_space, &lattice, &settings)?;
    let tpc = tpc_scan(b, pot, p.big_r_space, &p.tpc_shells, p.tpc_directions, &settings)?;
    let dsc = dsc_scan(b, pot, p.t_time, p.big_r_space, &p.dsc_lambdas, p.dsc_samples, seed, &settings)?;
    Ok(ConditionsOutcome { ugcc, tpc, dsc })
}

#[derive(Serialize)]
struct ConditionsSummary {
    ugcc: bool,
    tpc: bool,
    dsc: bool,
    ugcc_infimum: f64,
    tpc_liminf_proxy: f64,
    dsc_liminf_proxy: f64,
}

fn write_conditions(a: &mut Artifacts, prefix: &str, o: &ConditionsOutcome) -> Result<()> {
    a.report(&format!("{prefix}ugcc"), &o.ugcc)?;
    a.report(&format!("{prefix}tpc"), &o.tpc)?;
    a.report(&format!("{prefix}dsc"), &o.dsc)?;
    a.json(
        &format!("{prefix}conditions.json"),
        &ConditionsSummary {
            ugcc: o.ugcc.pass,
            tpc: o.tpc.pass,
            dsc: o.dsc.pass,
            ugcc_infimum: o.ugcc.infimum,
            tpc_liminf_proxy: o.tpc.liminf_proxy,
            dsc_liminf_proxy: o.dsc.liminf_proxy,
        },
    )
}

fn cmd_dsc_limit(config: &ExperimentConfig, seed: u64, a: &mut Artifacts) -> Result<()> {
    let pot = config.potential()?;
    let b = config.damping(pot.dim())?;
    let p = &config.dsc_limit;
    let settings = config.conditions.settings(pot.dim())?;
    let table = dsc_limit_scan(&b, &pot, &p.t_times, &p.big_r_spaces, &p.lambdas, p.samples, seed, &settings)?;
    a.json("dsc_limit.json", &table)?;
    a.csv("dsc_limit.csv", |w| table.write_csv(w))
}

fn cmd_quasimode(config: &ExperimentConfig, a: &mut Artifacts) -> Result<()> {
    let pot = config.potential()?;
    let d = pot.dim();
    let b = config.optional_damping(d)?;
    let p = &config.quasimode;
    let x0 = p.x0_space.clone().unwrap_or_else(|| axis_point(d, 20.0));
    check_len("x0_space", &x0, d)?;
    let n = p.grid_points.unwrap_or(if d == 1 { 4001 } else { 161 });
    let lambda = pot.value(&x0).sqrt();
    if !(lambda >= 1.0) {
        return Err(Error::precondition(format!("quasimode: need V(x0) >= 1, got λ = {lambda}")));
    }
    let grid = bump_grid(&x0, p.big_r_space / lambda.sqrt(), n)?;
    let eps = sequence_epsilon_profile(&pot)?;
    let norms = BumpNorms::compute(d)?;
    let (field, report) = turning_point_bump(&pot, &x0, p.big_r_space, &grid, b.as_ref(), &eps, &norms)?;
    a.json("quasimode.json", &report)?;
    a.csv("field.csv", |w| field.write_csv(w))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KineticEntry {
    pub report: QuasimodeReport,
    pub fourier_peak: Vec<f64>,
    pub expected_peak: Vec<f64>,
}

/// Kinetic packets `n ∈ indices` with `t_n = c₁ n` and `r_n = c₂ / n`.
pub fn kinetic_sequence(pot: &Potential, b: Option<&Damping>, p: &KineticParams) -> Result<Vec<KineticEntry>> {
    let d = pot.dim();
    let base = p.base_space.clone().unwrap_or_else(|| vec![0.0; d]);
    let dir = p.direction.clone().unwrap_or_else(|| axis_point(d, 1.0));
    check_len("base_space", &base, d)?;
    check_len("direction", &dir, d)?;
    if p.indices.is_empty() || p.indices.contains(&0) {
        return Err(Error::precondition("kinetic sequence indices must be positive"));
    }
    p.indices
        .iter()
        .map(|&n| {
            let nf = n as f64;
            let spec = WavePacketSpec::from_sequence(
                pot,
                n,
                base.clone(),
                dir.clone(),
                p.length_per_index_space * nf,
                p.width_numerator_space / nf,
            )?;
            let grid = spec.grid(p.points_per_wavelength)?;
            let (field, report) = kinetic_wavepacket(pot, &spec, &grid, b, p.points_per_wavelength)?;
            Ok(KineticEntry {
                fourier_peak: fourier_peak(&field),
                expected_peak: spec.direction.iter().map(|v| spec.lambda * v).collect(),
                report,
            })
        })
        .collect()
}

fn cmd_kinetic(config: &ExperimentConfig, a: &mut Artifacts) -> Result<()> {
    let pot = config.potential()?;
    let b = config.optional_damping(pot.dim())?;
    let entries = kinetic_sequence(&pot, b.as_ref(), &config.kinetic_sequence)?;
    a.json("kinetic_sequence.json", &entries)?;
    a.csv("kinetic_sequence.csv", |w| {
        use std::io::Write;
        writeln!(w, "n,lambda,residual_ratio,damping_pairing,peak_1,expected_peak_1")?;
        for e in &entries {
            writeln!(
                w,
                "{},{},{},{},{},{}",
                e.report.index.unwrap_or(0),
                fmt(e.report.lambda),
                fmt(e.report.residual_ratio),
                e.report.damping_pairing.map_or(String::new(), fmt),
                fmt(e.fourier_peak[0]),
                fmt(e.expected_peak[0])
            )?;
        }
        Ok(())
    })
}

fn fmt(v: f64) -> String {
    crate::dynamics::fmt_f64(v)
}

fn cmd_witness(config: &ExperimentConfig, a: &mut Artifacts) -> Result<()> {
    let pot = config.potential()?;
    let d = pot.dim();
    let b = config.damping(d)?;
    let p = &config.tpc_witness;
    let mut search = ViolationSearch::default_for(d)?;
    search.angles = p.angles.unwrap_or(search.angles);
    search.shells = p.shells.unwrap_or(search.shells);
    search.shell_step = p.shell_step.unwrap_or(search.shell_step);
    search.grid_points = p.grid_points.unwrap_or(search.grid_points);
    let eps = sequence_epsilon_profile(&pot)?;
    let reports = tpc_violation_sequence(&pot, &b, p.n_max.unwrap_or(6), &search, &eps)?;
    a.json("tpc_witness.json", &reports)?;
    a.csv("tpc_witness.csv", |w| {
        use std::io::Write;
        writeln!(w, "n,lambda,R,residual_ratio,damping_pairing,ball_average")?;
        for r in &reports {
            writeln!(
                w,
                "{},{},{},{},{},{}",
                r.index.unwrap_or(0),
                fmt(r.lambda),
                fmt(r.big_r.unwrap_or(f64::NAN)),
                fmt(r.residual_ratio),
                fmt(r.damping_pairing.unwrap_or(f64::NAN)),
                fmt(r.ball_average.unwrap_or(f64::NAN))
            )?;
        }
        Ok(())
    })
}

/// Scalar summary of an [`EnergyTrace`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceSummary {
    pub dt: f64,
    pub steps: usize,
    pub initial_energy: f64,
    pub final_energy: f64,
    pub balance_defect: f64,
    pub balance_constant: f64,
    pub step_balance: f64,
    pub max_increase: f64,
}

impl From<&EnergyTrace> for TraceSummary {
    fn from(t: &EnergyTrace) -> Self {
        TraceSummary {
            dt: t.dt,
            steps: t.steps,
            initial_energy: t.initial_energy(),
            final_energy: t.final_energy(),
            balance_defect: t.balance_defect,
            balance_constant: t.balance_constant,
            step_balance: t.step_balance,
            max_increase: t.max_increase,
        }
    }
}

#[derive(Serialize)]
struct EvolveSummary {
    trace: TraceSummary,
    fit: DecayFit,
}

/// Gaussian packet `exp(-|x - c|²/2w²) cos(k x₁)` at rest on a cube grid.
pub fn packet_state(dim: usize, p: &EvolveParams) -> Result<WaveState> {
    let grid = Grid::cube(dim, p.half_width_space, p.grid_points)?;
    let center = p.center_space.clone().unwrap_or_else(|| vec![0.0; dim]);
    check_len("center_space", &center, dim)?;
    if !(p.width_space > 0.0) {
        return Err(Error::precondition("packet width must be positive"));
    }
    let u = Field::from_fn(&grid, |x| {
        let r2: f64 = x.iter().zip(&center).map(|(a, c)| (a - c) * (a - c)).sum();
        num_complex::Complex64::new((-0.5 * r2 / (p.width_space * p.width_space)).exp() * (p.wavenumber * x[0]).cos(), 0.0)
    });
    WaveState::new(u, Field::zeros(&grid))
}

fn cmd_evolve(config: &ExperimentConfig, a: &mut Artifacts) -> Result<()> {
    let pot = config.potential()?;
    let b = config.damping(pot.dim())?;
    let p = &config.evolve;
    let state = packet_state(pot.dim(), p)?;
    let dt = match p.dt_time {
        Some(dt) => dt,
        None => 0.5 * cfl_limit(&pot, state.grid())?,
    };
    let trace = evolve(&pot, &b, &state, p.t_time, dt)?;
    let fit = decay_fit(&trace)?;
    a.csv("energy.csv", |w| trace.write_csv(w))?;
    a.json("evolve.json", &EvolveSummary { trace: (&trace).into(), fit })
}

fn probe_for(pot: &Potential, b: &Damping, p: &ProbeParams) -> Result<ProbeComparison> {
    let d = pot.dim();
    let x0 = p.x0_space.clone().unwrap_or_else(|| axis_point(d, 20.75));
    check_len("x0_space", &x0, d)?;
    let reference = p.reference_amplitude.unwrap_or(b.b_max());
    turning_probe(pot, b, &x0, p.big_r_space, p.grid_points, p.t_time, reference)
}

fn cmd_probe(config: &ExperimentConfig, a: &mut Artifacts) -> Result<()> {
    let pot = config.potential()?;
    let b = config.damping(pot.dim())?;
    let mut cmp = probe_for(&pot, &b, &config.probe)?;
    if let Some((probe, reference)) = cmp.traces.take() {
        a.csv("probe.csv", |w| probe.write_csv(w))?;
        a.csv("reference.csv", |w| reference.write_csv(w))?;
    }
    a.json("probe.json", &cmp)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResolventClass {
    Bounded,
    Growing,
    Inconclusive,
}

/// Growth statistics of a resolvent scan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolventSummary {
    pub max: f64,
    pub median: f64,
    pub max_over_median: f64,
    /// Largest value over the first power-of-ten `λ` decade of the scan.
    pub first_decade_max: f64,
    /// Largest value over the last power-of-ten `λ` decade of the scan.
    pub last_decade_max: f64,
    pub decade_ratio: f64,
    pub class: ResolventClass,
}

impl ResolventSummary {
    /// Growing when the last decade exceeds the first by 10×; otherwise
    /// bounded when max/median ≤ 10.
    pub fn from_scan(scan: &ResolventScan) -> Self {
        let mut sorted = scan.values.clone();
        sorted.sort_by(f64::total_cmp);
        let max = *sorted.last().unwrap_or(&f64::NAN);
        let median = sorted.get(sorted.len() / 2).copied().unwrap_or(f64::NAN);
        let decade = |l: f64| l.abs().log10().floor() as i32;
        let first = scan.lambdas.iter().map(|l| decade(*l)).min().unwrap_or(0);
        let last = scan.lambdas.iter().map(|l| decade(*l)).max().unwrap_or(0);
        let over = |k: i32| {
            scan.lambdas
                .iter()
                .zip(&scan.values)
                .filter(|(l, _)| decade(**l) == k)
                .map(|(_, v)| *v)
                .fold(0.0, f64::max)
        };
        let (fmax, lmax) = (over(first), over(last));
        let decade_ratio = lmax / fmax;
        let class = if first < last && decade_ratio >= 10.0 {
            ResolventClass::Growing
        } else if max / median <= 10.0 {
            ResolventClass::Bounded
        } else {
            ResolventClass::Inconclusive
        };
        ResolventSummary {
            max,
            median,
            max_over_median: max / median,
            first_decade_max: fmax,
            last_decade_max: lmax,
            decade_ratio,
            class,
        }
    }
}

pub fn run_resolvent(pot: &Potential, b: &Damping, p: &ResolventParams, seed: u64) -> Result<(ResolventScan, ResolventSummary)> {
    if pot.dim() != 1 || b.dim() != 1 {
        return Err(Error::precondition("resolvent scan requires d = 1"));
    }
    let lambdas = p.lambda_grid();
    let lmax = lambdas.iter().fold(0.0f64, |m, l| m.max(l.abs()));
    if !(lmax > 0.0) {
        return Err(Error::precondition("resolvent scan needs nonzero finite λ values"));
    }
    let grid = resolvent_grid(pot, lmax, p.points_per_wavelength)?;
    let settings = ResolventSettings { seed, ..Default::default() };
    let scan = resolvent_scan_with(pot, b, &lambdas, &grid, &settings)?;
    let summary = ResolventSummary::from_scan(&scan);
    Ok((scan, summary))
}

#[derive(Serialize)]
struct ResolventOutput<'a> {
    scan: &'a ResolventScan,
    summary: &'a ResolventSummary,
}

fn cmd_resolvent(config: &ExperimentConfig, seed: u64, a: &mut Artifacts) -> Result<()> {
    let pot = config.potential()?;
    if pot.dim() != 1 {
        return Err(Error::precondition("resolvent scan requires d = 1"));
    }
    let b = config.damping(1)?;
    let (scan, summary) = run_resolvent(&pot, &b, &config.resolvent, seed)?;
    a.csv("resolvent.csv", |w| scan.write_csv(w))?;
    a.json("resolvent.json", &ResolventOutput { scan: &scan, summary: &summary })
}

fn cmd_spectrum(config: &ExperimentConfig, a: &mut Artifacts) -> Result<()> {
    let pot = config.potential()?;
    if pot.dim() != 1 {
        return Err(Error::precondition("damped spectrum requires d = 1"));
    }
    let b = config.damping(1)?;
    let p = &config.spectrum;
    let grid = Grid::cube(1, p.half_width_space, p.grid_points)?;
    let spec = damped_spectrum_1d(&pot, &b, &grid, p.count)?;
    a.csv("spectrum.csv", |w| spec.write_csv(w))?;
    a.json("spectrum.json", &spec)
}

/// JSON has no infinity; serde_json writes it as `null`.
fn null_as_infinity<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
    Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
}

/// One row of the canonical consistency matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteRow {
    pub pair: String,
    pub ugcc: bool,
    pub tpc: bool,
    pub dsc: bool,
    pub ugcc_and_tpc: bool,
    /// DSC agrees with UGCC ∧ TPC.
    pub conditions_agree: bool,
    pub resolvent: ResolventClass,
    #[serde(deserialize_with = "null_as_infinity")]
    pub resolvent_max_over_median: f64,
    #[serde(deserialize_with = "null_as_infinity")]
    pub resolvent_decade_ratio: f64,
    #[serde(deserialize_with = "null_as_infinity")]
    pub probe_ratio: f64,
    /// Probe decays at least 5× slower than the constant reference.
    pub slow_decay: bool,
    /// Bounded resolvent without slow decay, or growth with slow decay.
    pub resolvent_agrees_with_decay: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteMatrix {
    pub rows: Vec<SuiteRow>,
}

impl SuiteMatrix {
    pub fn row(&self, pair: &str) -> Option<&SuiteRow> {
        self.rows.iter().find(|r| r.pair == pair)
    }

    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> Result<()> {
        writeln!(
            w,
            "pair,ugcc,tpc,dsc,ugcc_and_tpc,conditions_agree,resolvent,resolvent_max_over_median,resolvent_decade_ratio,probe_ratio,slow_decay,resolvent_agrees_with_decay"
        )?;
        for r in &self.rows {
            let class = match r.resolvent {
                ResolventClass::Bounded => "bounded",
                ResolventClass::Growing => "growing",
                ResolventClass::Inconclusive => "inconclusive",
            };
            writeln!(
                w,
                "{},{},{},{},{},{},{},{},{},{},{},{}",
                r.pair,
                r.ugcc,
                r.tpc,
                r.dsc,
                r.ugcc_and_tpc,
                r.conditions_agree,
                class,
                fmt(r.resolvent_max_over_median),
                fmt(r.resolvent_decade_ratio),
                fmt(r.probe_ratio),
                r.slow_decay,
                r.resolvent_agrees_with_decay
            )?;
        }
        Ok(())
    }
}

/// Runs the canonical matrix; per-pair reports go under `<pair>/` when an
/// artifact sink is given.
fn run_suite(p: &SuiteParams, seed: u64, mut sink: Option<&mut Artifacts>) -> Result<SuiteMatrix> {
    let plane = Potential::harmonic(2)?;
    let line = Potential::harmonic(1)?;
    let mut rows = Vec::new();
    for pair in CANONICAL_PAIRS {
        info!("suite: {pair}");
        let spec = DampingSpec::named(pair);
        let outcome = run_conditions(&plane, &spec.build(2)?, &p.conditions, seed)?;
        let b1 = spec.build(1)?;
        let (scan, summary) = run_resolvent(&line, &b1, &p.resolvent, seed)?;
        let mut probe = probe_for(&line, &b1, &p.probe)?;
        probe.traces = None;
        if let Some(a) = sink.as_deref_mut() {
            write_conditions(a, &format!("{pair}/"), &outcome)?;
            a.csv(&format!("{pair}/resolvent.csv"), |w| scan.write_csv(w))?;
            a.json(&format!("{pair}/probe.json"), &probe)?;
        }
        let slow = probe.ratio >= 5.0;
        let agrees = match summary.class {
            ResolventClass::Bounded => !slow,
            ResolventClass::Growing => slow,
            ResolventClass::Inconclusive => false,
        };
        rows.push(SuiteRow {
            pair: pair.to_string(),
            ugcc: outcome.ugcc.pass,
            tpc: outcome.tpc.pass,
            dsc: outcome.dsc.pass,
            ugcc_and_tpc: outcome.ugcc_and_tpc(),
            conditions_agree: outcome.dsc.pass == outcome.ugcc_and_tpc(),
            resolvent: summary.class,
            resolvent_max_over_median: summary.max_over_median,
            resolvent_decade_ratio: summary.decade_ratio,
            probe_ratio: probe.ratio,
            slow_decay: slow,
            resolvent_agrees_with_decay: agrees,
        });
    }
    Ok(SuiteMatrix { rows })
}

/// The canonical matrix without writing artifacts.
pub fn suite_matrix(p: &SuiteParams, seed: u64) -> Result<SuiteMatrix> {
    run_suite(p, seed, None)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn command_names_round_trip() {
        for c in Command::ALL {
            assert_eq!(c.as_str().parse::<Command>().unwrap(), c);
        }
        assert!("bogus".parse::<Command>().unwrap_err().is_validation());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = ExperimentConfig::from_json(r#"{"potential": {"name": "harmonic", "dim": 1}, "bogus": 1}"#)
            .unwrap_err();
        assert!(err.is_validation());
        let err = ExperimentConfig::from_json(r#"{"flow": {"T": 1}}"#).unwrap_err();
        assert!(err.to_string().contains("unknown field"));
    }

    #[test]
    fn unit_suffixed_keys_parse() {
        let c = ExperimentConfig::from_json(r#"{"flow": {"T_time": 3, "dt_time": 0.01}, "conditions": {"R_space": 2}}"#)
            .unwrap();
        assert_eq!(c.flow.t_time, 3.0);
        assert_eq!(c.conditions.big_r_space, 2.0);
        assert_eq!(c.conditions.t_time, 2.0);
    }

    #[test]
    fn infinite_ratios_round_trip() {
        let row = SuiteRow {
            pair: "ball".into(),
            ugcc: false,
            tpc: false,
            dsc: false,
            ugcc_and_tpc: false,
            conditions_agree: true,
            resolvent: ResolventClass::Growing,
            resolvent_max_over_median: 1.5,
            resolvent_decade_ratio: 30.0,
            probe_ratio: f64::INFINITY,
            slow_decay: true,
            resolvent_agrees_with_decay: true,
        };
        let back: SuiteRow = serde_json::from_str(&serde_json::to_string(&row).unwrap()).unwrap();
        assert_eq!(back, row);
    }

    #[test]
    fn hashes_are_hex_sha256() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }
}
