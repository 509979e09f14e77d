//! Session and batch configuration files.
//!
//! All configs are TOML. Relative paths inside a file resolve against the
//! directory containing it.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::agent::{
    AgentSettings, ChatBackend, HttpBackend, HttpConfig, PromptLibrary, Script, ScriptedBackend,
    TutorKind,
};
use crate::behavior::{default_spec, validate_spec, BehaviorSpec, ProfileLevel};
use crate::environment::{CachedRunner, ProblemConfig};
use crate::knowledge::BktParams;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    #[default]
    Mock,
    Http,
}

impl FromStr for BackendKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "mock" => Ok(BackendKind::Mock),
            "http" => Ok(BackendKind::Http),
            other => Err(format!("unknown backend `{other}` (expected mock or http)")),
        }
    }
}

impl fmt::Display for BackendKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BackendKind::Mock => "mock",
            BackendKind::Http => "http",
        })
    }
}

fn default_seed() -> u64 {
    7
}

/// On-disk session file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SessionFile {
    #[serde(default)]
    pub name: Option<String>,
    pub problem: PathBuf,
    pub behavior_profile: ProfileLevel,
    /// Prompt persona; defaults to the behavior profile.
    #[serde(default)]
    pub persona_profile: Option<ProfileLevel>,
    /// Behavior spec file; defaults to the built-in spec of the profile.
    #[serde(default)]
    pub behavior_spec: Option<PathBuf>,
    /// Overrides the spec's step cap.
    #[serde(default)]
    pub max_steps: Option<u32>,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default)]
    pub tutor: TutorKind,
    #[serde(default)]
    pub bkt: BktParams,
    #[serde(default)]
    pub kc_params: BTreeMap<String, BktParams>,
    /// KCs held at `Blocked` for the whole session.
    #[serde(default)]
    pub blocked_kcs: Vec<String>,
    #[serde(default)]
    pub backend: BackendKind,
    #[serde(default)]
    pub mock_script: Option<PathBuf>,
    #[serde(default)]
    pub http: Option<HttpConfig>,
    #[serde(default)]
    pub agent: AgentSettings,
    /// Directory of prompt blocks replacing the built-in set.
    #[serde(default)]
    pub prompts_dir: Option<PathBuf>,
}

/// Backend selection resolved to something that can build instances.
#[derive(Debug, Clone)]
pub enum BackendSpec {
    Mock(Arc<Script>),
    Http(HttpConfig),
}

impl BackendSpec {
    /// Fresh backend for one session.
    pub fn instantiate(&self) -> Box<dyn ChatBackend> {
        match self {
            BackendSpec::Mock(script) => Box::new(ScriptedBackend::new(script.clone())),
            BackendSpec::Http(cfg) => Box::new(HttpBackend::new(cfg.clone())),
        }
    }

    pub fn label(&self) -> String {
        match self {
            BackendSpec::Mock(_) => "mock".into(),
            BackendSpec::Http(cfg) => format!("http:{}", cfg.model),
        }
    }
}

/// Fully resolved session configuration.
#[derive(Debug, Clone)]
pub struct SessionConfig {
    pub name: String,
    pub problem: Arc<ProblemConfig>,
    pub runner: CachedRunner,
    pub behav_profile: ProfileLevel,
    pub persona_profile: ProfileLevel,
    pub behavior_spec: Arc<BehaviorSpec>,
    pub bkt: BktParams,
    pub kc_params: BTreeMap<String, BktParams>,
    pub blocked_kcs: BTreeSet<String>,
    pub tutor: TutorKind,
    pub backend: BackendSpec,
    pub agent: AgentSettings,
    pub prompts: Arc<PromptLibrary>,
    pub seed: u64,
    pub max_steps: u32,
}

/// Command-line overrides applied on top of a session file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub backend: Option<BackendKind>,
    pub tutor: Option<TutorKind>,
    pub max_steps: Option<u32>,
}

fn read(path: &Path) -> Result<String, ConfigError> {
    std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
        path: path.to_path_buf(),
        source,
    })
}

fn parse_toml<T: serde::de::DeserializeOwned>(path: &Path, text: &str) -> Result<T, ConfigError> {
    toml::from_str(text).map_err(|e| ConfigError::Parse {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn base_dir(path: &Path) -> PathBuf {
    path.parent().map(Path::to_path_buf).unwrap_or_default()
}

pub fn load_behavior_spec(path: &Path) -> Result<BehaviorSpec, ConfigError> {
    let text = read(path)?;
    let spec = BehaviorSpec::from_toml(&text).map_err(|e| ConfigError::Parse {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    check_spec(&spec, &path.display().to_string())?;
    Ok(spec)
}

fn check_spec(spec: &BehaviorSpec, origin: &str) -> Result<(), ConfigError> {
    let violations = validate_spec(spec);
    if violations.is_empty() {
        return Ok(());
    }
    let list: Vec<String> = violations
        .iter()
        .map(|v| format!("{}: {}", v.location, v.message))
        .collect();
    Err(ConfigError::Invalid(format!("behavior spec {origin}: {}", list.join("; "))))
}

impl SessionConfig {
    pub fn load(path: &Path, overrides: &Overrides) -> Result<Self, ConfigError> {
        let text = read(path)?;
        let file: SessionFile = parse_toml(path, &text)?;
        let default_name = path
            .file_stem()
            .map(|s| s.to_string_lossy().to_string())
            .unwrap_or_else(|| "session".into());
        Self::from_file(file, &base_dir(path), &default_name, overrides)
    }

    pub fn from_file(
        file: SessionFile,
        base: &Path,
        default_name: &str,
        overrides: &Overrides,
    ) -> Result<Self, ConfigError> {
        let problem_path = resolve(base, &file.problem);
        let problem = ProblemConfig::load(&problem_path)
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        let problem = Arc::new(problem);

        let spec = match &file.behavior_spec {
            Some(p) => load_behavior_spec(&resolve(base, p))?,
            None => default_spec(file.behavior_profile),
        };
        if spec.profile != file.behavior_profile {
            return Err(ConfigError::Invalid(format!(
                "behavior spec is for profile {} but the session asks for {}",
                spec.profile, file.behavior_profile
            )));
        }
        check_spec(&spec, "(built-in)")?;

        let max_steps = overrides.max_steps.or(file.max_steps).unwrap_or(spec.max_steps);
        if max_steps == 0 {
            return Err(ConfigError::Invalid("max_steps must be at least 1".into()));
        }
        let mut bkt_problems = file.bkt.violations();
        for (kc, p) in &file.kc_params {
            bkt_problems.extend(p.violations().into_iter().map(|v| format!("{kc}: {v}")));
        }
        if !bkt_problems.is_empty() {
            return Err(ConfigError::Invalid(format!("BKT parameters: {}", bkt_problems.join("; "))));
        }
        let known: BTreeSet<String> = problem.kc_ids().into_iter().collect();
        for kc in file.kc_params.keys().chain(&file.blocked_kcs) {
            if !known.contains(kc) {
                return Err(ConfigError::Invalid(format!(
                    "unknown KC `{kc}` for problem `{}`",
                    problem.id
                )));
            }
        }

        let backend_kind = overrides.backend.unwrap_or(file.backend);
        let backend = match backend_kind {
            BackendKind::Mock => {
                let p = file.mock_script.as_ref().ok_or_else(|| {
                    ConfigError::Invalid("mock backend selected but `mock_script` is not set".into())
                })?;
                let script = Script::load(&resolve(base, p)).map_err(|e| ConfigError::Invalid(e.to_string()))?;
                BackendSpec::Mock(Arc::new(script))
            }
            BackendKind::Http => {
                let cfg = file.http.clone().ok_or_else(|| {
                    ConfigError::Invalid("http backend selected but the [http] table is missing".into())
                })?;
                if cfg.base_url.trim().is_empty() {
                    return Err(ConfigError::Invalid("http.base_url is empty".into()));
                }
                BackendSpec::Http(cfg)
            }
        };

        let prompts = match &file.prompts_dir {
            Some(dir) => PromptLibrary::from_dir(&resolve(base, dir))
                .map_err(|e| ConfigError::Invalid(e.to_string()))?,
            None => PromptLibrary::embedded(),
        };
        prompts.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;

        Ok(Self {
            name: file.name.unwrap_or_else(|| default_name.to_string()),
            runner: CachedRunner::new(problem.clone()),
            problem,
            behav_profile: file.behavior_profile,
            persona_profile: file.persona_profile.unwrap_or(file.behavior_profile),
            behavior_spec: Arc::new(spec),
            bkt: file.bkt,
            kc_params: file.kc_params,
            blocked_kcs: file.blocked_kcs.into_iter().collect(),
            tutor: overrides.tutor.unwrap_or(file.tutor),
            backend,
            agent: file.agent,
            prompts: Arc::new(prompts),
            seed: overrides.seed.unwrap_or(file.seed),
            max_steps,
        })
    }
}

fn default_repetitions() -> u32 {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConditionEntry {
    pub name: String,
    pub session: PathBuf,
    /// Overrides the manifest-wide repetition count.
    #[serde(default)]
    pub repetitions: Option<u32>,
}

/// Batch manifest: conditions, repetitions and a root seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub root_seed: u64,
    #[serde(default = "default_repetitions")]
    pub repetitions: u32,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub backend: Option<BackendKind>,
    #[serde(default)]
    pub tutor: Option<TutorKind>,
    #[serde(default)]
    pub max_steps: Option<u32>,
    #[serde(rename = "condition")]
    pub conditions: Vec<ConditionEntry>,
}

/// One planned session of a batch.
#[derive(Debug, Clone)]
pub struct PlannedSession {
    pub index: usize,
    pub condition: String,
    pub repetition: u32,
    pub config: SessionConfig,
}

impl RunManifest {
    pub fn load(path: &Path) -> Result<(Self, PathBuf), ConfigError> {
        let text = read(path)?;
        let manifest: RunManifest = parse_toml(path, &text)?;
        manifest.check()?;
        Ok((manifest, base_dir(path)))
    }

    fn check(&self) -> Result<(), ConfigError> {
        if self.conditions.is_empty() {
            return Err(ConfigError::Invalid("manifest lists no [[condition]]".into()));
        }
        let mut names = BTreeSet::new();
        for c in &self.conditions {
            if c.repetitions.unwrap_or(self.repetitions) == 0 {
                return Err(ConfigError::Invalid(format!("condition `{}`: repetitions must be at least 1", c.name)));
            }
            if !names.insert(c.name.as_str()) {
                return Err(ConfigError::Invalid(format!("duplicate condition `{}`", c.name)));
            }
            if c.name.is_empty() || c.name.contains(['/', '\\']) {
                return Err(ConfigError::Invalid(format!("condition name `{}` is not a plain name", c.name)));
            }
        }
        Ok(())
    }

    /// Expand into per-session configs. Seeds are derived from the root seed
    /// and the global session index.
    pub fn plan(&self, base: &Path, overrides: &Overrides) -> Result<Vec<PlannedSession>, ConfigError> {
        let mut out = Vec::new();
        for cond in &self.conditions {
            let path = resolve(base, &cond.session);
            let text = read(&path)?;
            let file: SessionFile = parse_toml(&path, &text)?;
            let ov = Overrides {
                seed: None,
                backend: overrides.backend.or(self.backend),
                tutor: overrides.tutor.or(self.tutor),
                max_steps: overrides.max_steps.or(self.max_steps),
            };
            let template = SessionConfig::from_file(file, &base_dir(&path), &cond.name, &ov)?;
            let root = overrides.seed.unwrap_or(self.root_seed);
            for rep in 0..cond.repetitions.unwrap_or(self.repetitions) {
                let index = out.len();
                let mut config = template.clone();
                config.seed = crate::rng::derive_seed(root, index as u64);
                config.name = format!("{}-{:03}", cond.name, rep);
                out.push(PlannedSession {
                    index,
                    condition: cond.name.clone(),
                    repetition: rep,
                    config,
                });
            }
        }
        Ok(out)
    }
}
