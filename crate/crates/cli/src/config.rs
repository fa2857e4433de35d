//! JSON run configuration: parsing, flag overrides and resolution into core types.

use std::path::{Path, PathBuf};

use clap::ValueEnum;
use dupire_aad_core::{Backend, Payoff, PayoffKind, PrecisionMode, RngKey, Scheme, SimConfig, SmileParams, VolSurface};
use serde::{Deserialize, Serialize};

use crate::csvio;
use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum SchemeArg {
    Euler,
    Logeuler,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum PrecisionArg {
    Full,
    Bf16,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum BackendArg {
    Gather,
    Onehot,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KindArg {
    Call,
    Put,
}

impl From<SchemeArg> for Scheme {
    fn from(s: SchemeArg) -> Self {
        match s {
            SchemeArg::Euler => Scheme::Euler,
            SchemeArg::Logeuler => Scheme::LogEuler,
        }
    }
}

impl From<PrecisionArg> for PrecisionMode {
    fn from(p: PrecisionArg) -> Self {
        match p {
            PrecisionArg::Full => PrecisionMode::Full,
            PrecisionArg::Bf16 => PrecisionMode::Emulatedbf16,
        }
    }
}

impl From<BackendArg> for Backend {
    fn from(b: BackendArg) -> Self {
        match b {
            BackendArg::Gather => Backend::Gather,
            BackendArg::Onehot => Backend::OneHot,
        }
    }
}

impl PrecisionArg {
    pub fn name(self) -> &'static str {
        match self {
            PrecisionArg::Full => "full",
            PrecisionArg::Bf16 => "bf16",
        }
    }
}

impl BackendArg {
    pub fn name(self) -> &'static str {
        match self {
            BackendArg::Gather => "gather",
            BackendArg::Onehot => "onehot",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationSection {
    pub s0: f64,
    pub maturity: f64,
    pub n_steps: usize,
    pub n_paths: usize,
    pub batch_size: usize,
    pub scheme: SchemeArg,
    pub seed: u64,
    pub stream_salt: u64,
    pub precision: PrecisionArg,
    pub backend: BackendArg,
}

impl Default for SimulationSection {
    fn default() -> Self {
        let d = SimConfig::default();
        Self {
            s0: d.s0,
            maturity: d.maturity,
            n_steps: d.n_steps,
            n_paths: d.n_paths,
            batch_size: d.batch_size,
            scheme: SchemeArg::Euler,
            seed: d.key.seed,
            stream_salt: d.key.stream_salt,
            precision: PrecisionArg::Full,
            backend: BackendArg::Gather,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PayoffSection {
    pub kind: KindArg,
    pub strike: f64,
    pub quantity: f64,
}

impl Default for PayoffSection {
    fn default() -> Self {
        Self {
            kind: KindArg::Call,
            strike: 100.0,
            quantity: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InlineSurface {
    pub spots: Vec<f64>,
    pub times: Vec<f64>,
    /// One row per spot node.
    pub vols: Vec<Vec<f64>>,
}

/// Synthetic smile; `s0` and `maturity` default to the simulation's.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSurface {
    pub n_spots: usize,
    pub n_times: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub s0: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub maturity: Option<f64>,
    pub lo: f64,
    pub hi: f64,
    pub base: f64,
    pub skew: f64,
}

impl Default for SyntheticSurface {
    fn default() -> Self {
        let d = SmileParams::default();
        Self {
            n_spots: d.n_spots,
            n_times: d.n_times,
            s0: None,
            maturity: None,
            lo: d.lo,
            hi: d.hi,
            base: d.base,
            skew: d.skew,
        }
    }
}

impl SyntheticSurface {
    pub fn params(&self, sim: &SimulationSection) -> SmileParams {
        SmileParams {
            n_spots: self.n_spots,
            n_times: self.n_times,
            s0: self.s0.unwrap_or(sim.s0),
            maturity: self.maturity.unwrap_or(sim.maturity),
            lo: self.lo,
            hi: self.hi,
            base: self.base,
            skew: self.skew,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", deny_unknown_fields)]
pub enum SurfaceSection {
    /// Tab-separated surface file; relative paths resolve against the config's directory.
    File(PathBuf),
    Inline(InlineSurface),
    Synthetic(SyntheticSurface),
}

impl Default for SurfaceSection {
    fn default() -> Self {
        SurfaceSection::Synthetic(SyntheticSurface::default())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    /// Worker threads; 0 lets rayon decide. Never changes results.
    pub threads: usize,
    pub eps: f64,
    pub tol_rel: f64,
    pub tol_abs: f64,
    pub stride: usize,
    pub force: bool,
    pub repeats: usize,
    pub wide: bool,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            threads: 0,
            eps: dupire_aad_core::bump::DEFAULT_VOL_EPS,
            tol_rel: 0.01,
            tol_abs: 2e-3,
            stride: 1,
            force: false,
            repeats: 11,
            wide: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    #[serde(default)]
    pub simulation: SimulationSection,
    #[serde(default)]
    pub payoff: PayoffSection,
    #[serde(default)]
    pub surface: SurfaceSection,
    #[serde(default)]
    pub run: RunSection,
    /// Provenance block of a manifest; ignored on input so manifests re-ingest.
    #[serde(default, skip_serializing)]
    pub manifest: Option<serde_json::Value>,
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg: ConfigFile = serde_json::from_str(&text)
            .map_err(|e| CliError::Usage(format!("invalid config {}: {e}", path.display())))?;
        cfg.manifest = None;
        if let SurfaceSection::File(f) = &mut cfg.surface {
            let base = path.parent().unwrap_or(Path::new(""));
            let joined = if f.is_absolute() { f.clone() } else { base.join(&*f) };
            *f = std::path::absolute(&joined).unwrap_or(joined);
        }
        Ok(cfg)
    }

    /// Pins defaults that depend on other sections so the manifest is explicit.
    pub fn resolve_defaults(&mut self) {
        if let SurfaceSection::Synthetic(s) = &mut self.surface {
            s.s0.get_or_insert(self.simulation.s0);
            s.maturity.get_or_insert(self.simulation.maturity);
        }
    }

    pub fn sim_config(&self) -> Result<SimConfig, CliError> {
        let s = &self.simulation;
        let cfg = SimConfig {
            s0: s.s0,
            maturity: s.maturity,
            n_steps: s.n_steps,
            n_paths: s.n_paths,
            // one batch either way, so clamping leaves results unchanged
            batch_size: s.batch_size.min(s.n_paths.max(1)),
            scheme: s.scheme.into(),
            key: RngKey::new(s.seed, s.stream_salt),
            precision: s.precision.into(),
            interp_backend: s.backend.into(),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn payoff(&self) -> Result<Payoff, CliError> {
        let p = &self.payoff;
        let kind = match p.kind {
            KindArg::Call => PayoffKind::EuropeanCall,
            KindArg::Put => PayoffKind::EuropeanPut,
        };
        let payoff = Payoff {
            kind,
            strike: p.strike,
            quantity: p.quantity,
        };
        payoff.validate()?;
        Ok(payoff)
    }

    pub fn load_surface(&self) -> Result<VolSurface, CliError> {
        match &self.surface {
            SurfaceSection::File(path) => csvio::read_surface(path),
            SurfaceSection::Inline(s) => Ok(VolSurface::from_rows(s.spots.clone(), s.times.clone(), &s.vols)?),
            SurfaceSection::Synthetic(s) => Ok(VolSurface::synthetic(&s.params(&self.simulation))?),
        }
    }
}

/// Flags shared by the compute subcommands; each overrides the config value.
#[derive(Debug, Clone, Default, clap::Args)]
pub struct Overrides {
    /// Worker threads (0 = hardware default).
    #[arg(long)]
    pub threads: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum)]
    pub backend: Option<BackendArg>,
    #[arg(long, value_enum)]
    pub precision: Option<PrecisionArg>,
    #[arg(long, value_enum)]
    pub scheme: Option<SchemeArg>,
}

impl Overrides {
    pub fn apply(&self, cfg: &mut ConfigFile) {
        if let Some(t) = self.threads {
            cfg.run.threads = t;
        }
        if let Some(s) = self.seed {
            cfg.simulation.seed = s;
        }
        if let Some(b) = self.backend {
            cfg.simulation.backend = b;
        }
        if let Some(p) = self.precision {
            cfg.simulation.precision = p;
        }
        if let Some(s) = self.scheme {
            cfg.simulation.scheme = s;
        }
    }
}
