//! Run configuration: one JSON document per run.

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;
use pflab_core::coupling::{sample_coupling, CouplingForm, CouplingProfile, RadialGrid, SmallSystem, UvShape};
use pflab_core::fock::{count_states, ModeSet};
use pflab_core::hamiltonian::{ConjugateSpec, ConjugateVariant};
use serde::{Deserialize, Serialize};

/// Reasons a configuration is rejected before any numerics run.
#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read { path: String, source: std::io::Error },
    #[error("malformed configuration: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid configuration: {0}")]
    Invalid(String),
    #[error("estimated dimension {dim} exceeds the cap {cap}")]
    DimensionCap { dim: usize, cap: usize },
}

fn invalid(msg: impl Into<String>) -> ConfigError {
    ConfigError::Invalid(msg.into())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub small: SmallBlock,
    pub modes: ModesBlock,
    pub coupling: CouplingBlock,
    pub truncation: TruncationBlock,
    pub task: Task,
    #[serde(default)]
    pub output: OutputBlock,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SmallBlock {
    pub nu: usize,
    pub energies: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "grid", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModesBlock {
    /// Midpoint grid on `(0, omega_max]`.
    Uniform { count: usize, omega_max: f64 },
    /// Gauss-Legendre panels refined geometrically toward zero.
    Radial { omega_max: f64, order: usize, ir_levels: usize, ratio: f64 },
    /// Listed frequencies with unit weights.
    Explicit { omegas: Vec<f64> },
}

/// A complex entry as a bare real number or a `[re, im]` pair.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Entry {
    Real(f64),
    Pair([f64; 2]),
}

impl Entry {
    fn value(self) -> C64 {
        match self {
            Entry::Real(x) => C64::new(x, 0.0),
            Entry::Pair([re, im]) => C64::new(re, im),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "profile", rename_all = "snake_case", deny_unknown_fields)]
pub enum CouplingBlock {
    /// `λ·r^p·uv(r/Λ)·G0`, embedded per mode with `√(4π w)·ω`.
    Scalar {
        p: f64,
        uv_scale: f64,
        uv: UvShape,
        amplitude: f64,
        /// Rows of the `ν×ν` matrix `G0`.
        g0: Vec<Vec<Entry>>,
        #[serde(default = "default_mu")]
        mu: f64,
    },
    /// One `ν×ν` matrix per mode, scaled by `amplitude`.
    Explicit {
        per_mode: Vec<Vec<Vec<Entry>>>,
        #[serde(default = "one")]
        amplitude: f64,
        #[serde(default = "default_mu")]
        mu: f64,
    },
}

fn default_mu() -> f64 {
    0.5
}

fn matrix(rows: &[Vec<Entry>], nu: usize) -> Option<DMatrix<C64>> {
    (rows.len() == nu && rows.iter().all(|r| r.len() == nu)).then(|| DMatrix::from_fn(nu, nu, |r, c| rows[r][c].value()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TruncationBlock {
    pub n_total_max: usize,
    pub per_mode_cap: usize,
    #[serde(default = "default_dim_cap")]
    pub dim_cap: usize,
}

fn default_dim_cap() -> usize {
    5000
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConjugateBlock {
    #[serde(default)]
    pub variant: Option<String>,
    #[serde(default = "one")]
    pub delta0: f64,
    #[serde(default = "one")]
    pub delta_inf: f64,
    #[serde(default = "default_mu")]
    pub mu: f64,
}

fn one() -> f64 {
    1.0
}

impl Default for ConjugateBlock {
    fn default() -> Self {
        ConjugateBlock { variant: None, delta0: 1.0, delta_inf: 1.0, mu: 0.5 }
    }
}

impl ConjugateBlock {
    pub fn spec(&self) -> Result<ConjugateSpec, ConfigError> {
        match self.variant.as_deref().unwrap_or("translations") {
            "translations" => Ok(ConjugateSpec::translations()),
            "m_delta" => ConjugateSpec::new(self.delta0, self.delta_inf, self.mu, ConjugateVariant::MDelta).map_err(|e| invalid(e.to_string())),
            other => Err(invalid(format!("unknown conjugate variant {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Task {
    Spectrum {
        #[serde(default)]
        count: Option<usize>,
    },
    Mourre {
        energy: f64,
        kappa: f64,
        epsilon: f64,
        #[serde(default)]
        conjugate: ConjugateBlock,
    },
    Lap {
        energy: f64,
        kappa: f64,
        c_m: f64,
        /// Real parts of the probe points; default is five points across the plateau.
        #[serde(default)]
        re_grid: Vec<f64>,
        /// `η_min` as a multiple of the eigenvalue gap resolution on the plateau.
        #[serde(default = "ten")]
        eta_factor: f64,
        eps: Vec<f64>,
        #[serde(default = "yes")]
        weighted: bool,
    },
    Kms {
        beta: f64,
        caps: Vec<usize>,
    },
    Evolve {
        times: Vec<f64>,
    },
    Vanhove {
        beta: f64,
    },
    GlueCheck {
        betas: Vec<f64>,
        #[serde(default)]
        conjugate: ConjugateBlock,
    },
    CheckAll {
        #[serde(default = "default_beta")]
        beta: f64,
    },
}

fn ten() -> f64 {
    10.0
}

fn yes() -> bool {
    true
}

fn default_beta() -> f64 {
    2.0
}

impl Task {
    pub fn name(&self) -> &'static str {
        match self {
            Task::Spectrum { .. } => "spectrum",
            Task::Mourre { .. } => "mourre",
            Task::Lap { .. } => "lap",
            Task::Kms { .. } => "kms",
            Task::Evolve { .. } => "evolve",
            Task::Vanhove { .. } => "vanhove",
            Task::GlueCheck { .. } => "glue-check",
            Task::CheckAll { .. } => "check-all",
        }
    }

    fn doubled(&self) -> bool {
        matches!(self, Task::Kms { .. } | Task::Vanhove { .. } | Task::GlueCheck { .. } | Task::CheckAll { .. })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputBlock {
    #[serde(default = "default_dir")]
    pub directory: String,
    #[serde(default = "default_formats")]
    pub formats: Vec<Format>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Json,
    Csv,
}

fn default_dir() -> String {
    "pflab-out".into()
}

fn default_formats() -> Vec<Format> {
    vec![Format::Json, Format::Csv]
}

impl Default for OutputBlock {
    fn default() -> Self {
        OutputBlock { directory: default_dir(), formats: default_formats() }
    }
}

/// The validated model pieces a task runs on.
pub struct Instance {
    pub small: SmallSystem,
    pub modes: ModeSet,
    pub profile: CouplingProfile,
    pub g: Vec<DMatrix<C64>>,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<RunConfig, ConfigError> {
        let cfg: RunConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<RunConfig, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read { path: path.display().to_string(), source })?;
        Self::parse(&text)
    }

    pub fn mode_set(&self) -> Result<ModeSet, ConfigError> {
        let ms = match &self.modes {
            ModesBlock::Uniform { count, omega_max } => ModeSet::uniform(*count, *omega_max),
            ModesBlock::Radial { omega_max, order, ir_levels, ratio } => RadialGrid::new(*omega_max, *order, *ir_levels, *ratio).and_then(|g| g.build()),
            ModesBlock::Explicit { omegas } => ModeSet::from_omegas(omegas),
        };
        ms.map_err(|e| invalid(e.to_string()))
    }

    fn profile(&self, modes: &ModeSet) -> Result<CouplingProfile, ConfigError> {
        let nu = self.small.nu;
        let shape = || invalid(format!("coupling matrices must be {nu}x{nu}"));
        match &self.coupling {
            CouplingBlock::Scalar { p, uv_scale, uv, amplitude, g0, mu } => {
                let g0 = matrix(g0, nu).ok_or_else(shape)?;
                CouplingProfile::scalar(nu, *p, *uv_scale, *uv, g0, *mu, *amplitude).map_err(|e| invalid(e.to_string()))
            }
            CouplingBlock::Explicit { per_mode, amplitude, mu } => {
                if per_mode.len() != modes.len() {
                    return Err(invalid(format!("coupling.per_mode has {} entries for {} modes", per_mode.len(), modes.len())));
                }
                let per_mode = per_mode.iter().map(|m| matrix(m, nu).ok_or_else(shape)).collect::<Result<_, _>>()?;
                Ok(CouplingProfile { nu, form: CouplingForm::Explicit { per_mode }, mu: *mu, amplitude: *amplitude })
            }
        }
    }

    /// `ν·#states` for Hamiltonian tasks, `ν²·#states(2M)` for doubled ones.
    pub fn dimension_estimate(&self, mode_count: usize) -> usize {
        let t = &self.truncation;
        let (m, d) = if self.task.doubled() { (2 * mode_count, self.small.nu * self.small.nu) } else { (mode_count, self.small.nu) };
        count_states(m, t.n_total_max, t.per_mode_cap.min(t.n_total_max)).saturating_mul(d)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let nu = self.small.nu;
        if nu == 0 || self.small.energies.len() != nu {
            return Err(invalid(format!("small.nu = {nu} must equal the number of energies ({})", self.small.energies.len())));
        }
        if let ModesBlock::Uniform { count: 0, .. } = self.modes {
            return Err(invalid("modes.count must be positive"));
        }
        let ladder_ok = match &self.task {
            Task::Lap { eps, .. } => !eps.is_empty(),
            Task::Kms { caps, .. } => !caps.is_empty(),
            Task::Evolve { times } => !times.is_empty(),
            Task::GlueCheck { betas, .. } => !betas.is_empty(),
            _ => true,
        };
        if !ladder_ok {
            return Err(invalid(format!("task {} needs a nonempty ladder", self.task.name())));
        }
        if let Task::Mourre { conjugate, .. } | Task::GlueCheck { conjugate, .. } = &self.task {
            conjugate.spec()?;
        }
        if self.output.formats.is_empty() {
            return Err(invalid("output.formats must not be empty"));
        }
        let modes = self.mode_set()?;
        self.profile(&modes)?;
        Ok(())
    }

    /// Checks the dimension cap, then samples the coupling.
    pub fn instance(&self) -> Result<Instance, ConfigError> {
        let modes = self.mode_set()?;
        let dim = self.dimension_estimate(modes.len());
        let caps: Vec<usize> = match &self.task {
            Task::Kms { caps, .. } => caps.clone(),
            _ => vec![],
        };
        let worst = caps
            .iter()
            .map(|&c| {
                let mut t = self.clone();
                t.truncation.n_total_max = c;
                t.truncation.per_mode_cap = c;
                t.dimension_estimate(modes.len())
            })
            .fold(dim, usize::max);
        if worst > self.truncation.dim_cap {
            return Err(ConfigError::DimensionCap { dim: worst, cap: self.truncation.dim_cap });
        }
        let small = SmallSystem::new(self.small.energies.clone()).map_err(|e| invalid(e.to_string()))?;
        let profile = self.profile(&modes)?;
        let g = sample_coupling(&profile, &modes).map_err(|e| invalid(e.to_string()))?;
        Ok(Instance { small, modes, profile, g })
    }

    /// SHA-256 of the canonical serialization of the parsed configuration.
    pub fn hash(&self) -> String {
        use sha2::{Digest, Sha256};
        let bytes = serde_json::to_vec(self).expect("configuration serializes");
        hex::encode(Sha256::digest(&bytes))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "small": {"nu": 1, "energies": [0.0]},
        "modes": {"grid": "explicit", "omegas": [1.0]},
        "coupling": {"profile": "scalar", "p": 0.0, "uv_scale": 1.0, "uv": "none", "amplitude": 0.0, "g0": [[1.0]]},
        "truncation": {"n_total_max": 3, "per_mode_cap": 3},
        "task": {"kind": "spectrum"}
    }"#;

    #[test]
    fn minimal_config_parses_with_defaults() {
        let c = RunConfig::parse(MINIMAL).unwrap();
        assert_eq!(c.output, OutputBlock::default());
        assert_eq!(c.truncation.dim_cap, 5000);
        assert_eq!(c.dimension_estimate(1), 4);
        assert_eq!(c.hash(), RunConfig::parse(MINIMAL).unwrap().hash());
    }

    #[test]
    fn rejects_unknown_fields_and_bad_shapes() {
        assert!(matches!(RunConfig::parse(&MINIMAL.replace("\"task\"", "\"tsk\"")), Err(ConfigError::Parse(_))));
        assert!(matches!(RunConfig::parse(&MINIMAL.replace("\"nu\": 1", "\"nu\": 2")), Err(ConfigError::Invalid(_))));
        let complex = MINIMAL.replace("[[1.0]]", "[[[0.5, -0.25]]]");
        let c = RunConfig::parse(&complex).unwrap();
        let p = c.profile(&c.mode_set().unwrap()).unwrap();
        assert_eq!(p.g0().unwrap()[(0, 0)], C64::new(0.5, -0.25));
        let explicit = MINIMAL.replace(
            r#"{"profile": "scalar", "p": 0.0, "uv_scale": 1.0, "uv": "none", "amplitude": 0.0, "g0": [[1.0]]}"#,
            r#"{"profile": "explicit", "per_mode": [[[0.2]]]}"#,
        );
        let c = RunConfig::parse(&explicit).unwrap();
        assert_eq!(c.instance().unwrap().g[0][(0, 0)], C64::new(0.2, 0.0));
    }

    #[test]
    fn dimension_cap_is_enforced() {
        let c = RunConfig::parse(&MINIMAL.replace("\"per_mode_cap\": 3", "\"per_mode_cap\": 3, \"dim_cap\": 3")).unwrap();
        assert!(matches!(c.instance(), Err(ConfigError::DimensionCap { dim: 4, cap: 3 })));
    }
}
