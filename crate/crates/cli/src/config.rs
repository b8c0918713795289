//! Per-kind TOML schemas. Every field has a default, so an empty file is a valid config.

use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Kind {
    Krylov,
    Sqrtlaw,
    Hitting,
    Flow,
    Solve,
    Fk,
    Shells,
}

impl Kind {
    pub fn name(self) -> &'static str {
        match self {
            Kind::Krylov => "krylov",
            Kind::Sqrtlaw => "sqrtlaw",
            Kind::Hitting => "hitting",
            Kind::Flow => "flow",
            Kind::Solve => "solve",
            Kind::Fk => "fk",
            Kind::Shells => "shells",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SolveProblem {
    /// `u_t = u_xx` on (0, 1), `ψ = sin πx`.
    Heat,
    /// Krylov coefficients on (0, 4) with the bump initial condition.
    Krylov,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolveConfig {
    pub problem: SolveProblem,
    pub lambda: f64,
    pub cells: usize,
    pub noise_level: i32,
    pub horizon: f64,
    pub record_stride: usize,
}

impl Default for SolveConfig {
    fn default() -> Self {
        SolveConfig { problem: SolveProblem::Heat, lambda: 0.1, cells: 256, noise_level: 14, horizon: 0.1, record_stride: 1024 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplingKind {
    RunningMax,
    Fixed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KrylovToml {
    pub lambdas: Vec<f64>,
    pub x_max: f64,
    pub cells: usize,
    pub noise_level: i32,
    pub horizon: f64,
    pub sampling: SamplingKind,
    /// Fixed sampling times.
    pub t_samples: Vec<f64>,
    /// Running-max sampling: start of the sampled range and number of windows.
    pub from: f64,
    pub windows: usize,
    pub n_paths: usize,
    pub window: Option<[f64; 2]>,
    pub resamples: usize,
}

impl Default for KrylovToml {
    fn default() -> Self {
        KrylovToml {
            lambdas: vec![0.1, 0.3],
            x_max: 4.0,
            cells: 2048,
            noise_level: 14,
            horizon: 0.5,
            sampling: SamplingKind::RunningMax,
            t_samples: vec![0.25, 0.375, 0.5],
            from: 0.25,
            windows: 4,
            n_paths: 50,
            window: None,
            resamples: 2000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SqrtLawToml {
    pub n_paths: usize,
    pub cs: Vec<f64>,
    pub n: u32,
    /// Paths of the `σ = sin x` inverse-flow ensemble; 0 skips it.
    pub flow_paths: usize,
    pub flow_cs: Vec<f64>,
}

impl Default for SqrtLawToml {
    fn default() -> Self {
        SqrtLawToml { n_paths: 200, cs: vec![1.0, 2.0, 4.0, 8.0], n: 16, flow_paths: 0, flow_cs: vec![2.0, 4.0, 8.0] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HittingToml {
    pub d: usize,
    pub p: u32,
    pub c: f64,
    pub r: f64,
    pub n_paths: usize,
    /// Finite-difference oracle resolution (d = 1 only).
    pub oracle_cells: usize,
    pub oracle_steps: usize,
}

impl Default for HittingToml {
    fn default() -> Self {
        HittingToml { d: 1, p: 0, c: 1.0, r: 7.0, n_paths: 100_000, oracle_cells: 1600, oracle_steps: 4000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlowToml {
    pub a: f64,
    pub sigma: f64,
    pub source: f64,
    pub horizon: f64,
    pub cells: usize,
    pub noise_level: i32,
    pub probes: Vec<f64>,
    pub n_paths: usize,
}

impl Default for FlowToml {
    fn default() -> Self {
        let c = spde_lab::flows::ConsistencyConfig::default();
        FlowToml { a: c.a, sigma: c.sigma, source: c.source, horizon: c.horizon, cells: c.cells, noise_level: c.noise_level, probes: c.probes, n_paths: 20 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FkCase {
    /// Heat equation with `ψ = sin πx`; oracle `e^{−π²t} sin πx`.
    Heat,
    /// Unit source, zero data, long horizon; oracle `x(1−x)/2`.
    Stationary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FkToml {
    pub case: FkCase,
    pub t: f64,
    pub probes: Vec<f64>,
    pub n_paths: usize,
    pub dt: f64,
    pub calibration_paths: usize,
}

impl Default for FkToml {
    fn default() -> Self {
        FkToml { case: FkCase::Heat, t: 0.1, probes: vec![0.25, 0.5, 0.75], n_paths: 100_000, dt: 1e-4, calibration_paths: 20_000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ShellToml {
    pub cells: usize,
    pub noise_level: i32,
    pub horizon: f64,
    pub record_stride: usize,
    pub t0: f64,
    pub r0: f64,
    pub j_min: u32,
    pub j_max: u32,
    pub n_paths: usize,
}

impl Default for ShellToml {
    fn default() -> Self {
        let c = spde_lab::boundary::ShellConfig::default();
        ShellToml {
            cells: c.cells,
            noise_level: c.noise_level,
            horizon: c.horizon,
            record_stride: c.record_stride,
            t0: c.t0,
            r0: c.r0,
            j_min: c.j_min,
            j_max: c.j_max,
            n_paths: c.n_paths,
        }
    }
}

/// A parsed config for one kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "params", rename_all = "lowercase")]
pub enum ExperimentConfig {
    Krylov(KrylovToml),
    Sqrtlaw(SqrtLawToml),
    Hitting(HittingToml),
    Flow(FlowToml),
    Solve(SolveConfig),
    Fk(FkToml),
    Shells(ShellToml),
}

fn parse<T: serde::de::DeserializeOwned>(text: &str) -> Result<T, CliError> {
    toml::from_str(text).map_err(|e| CliError::Config(e.to_string().trim_end().to_string()))
}

impl ExperimentConfig {
    pub fn parse(kind: Kind, text: &str) -> Result<Self, CliError> {
        Ok(match kind {
            Kind::Krylov => ExperimentConfig::Krylov(parse(text)?),
            Kind::Sqrtlaw => ExperimentConfig::Sqrtlaw(parse(text)?),
            Kind::Hitting => ExperimentConfig::Hitting(parse(text)?),
            Kind::Flow => ExperimentConfig::Flow(parse(text)?),
            Kind::Solve => ExperimentConfig::Solve(parse(text)?),
            Kind::Fk => ExperimentConfig::Fk(parse(text)?),
            Kind::Shells => ExperimentConfig::Shells(parse(text)?),
        })
    }

    pub fn kind(&self) -> Kind {
        match self {
            ExperimentConfig::Krylov(_) => Kind::Krylov,
            ExperimentConfig::Sqrtlaw(_) => Kind::Sqrtlaw,
            ExperimentConfig::Hitting(_) => Kind::Hitting,
            ExperimentConfig::Flow(_) => Kind::Flow,
            ExperimentConfig::Solve(_) => Kind::Solve,
            ExperimentConfig::Fk(_) => Kind::Fk,
            ExperimentConfig::Shells(_) => Kind::Shells,
        }
    }
}
