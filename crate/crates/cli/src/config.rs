//! Run configuration: TOML file values overlaid by command-line flags.

use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use serde::Deserialize;

use dae_core::backend::remote::{RemoteConfig, DEFAULT_API_KEY_VAR};
use dae_core::interaction::{InteractionConfig, Mode, Perturbation};
use dae_core::policy::{AbstentionPolicy, PolicyVariant};

use crate::exit::{input, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Sim,
    Remote,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModeArg {
    OneOnOne,
    Group,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PerturbArg {
    None,
    Wrong,
    Idk,
}

/// Flags shared by every subcommand. Anything left unset falls back to the
/// config file, then to built-in defaults.
#[derive(Debug, Clone, Default, Args)]
pub struct CommonArgs {
    /// TOML file with the same keys as the long flags (snake_case).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub dataset: Option<PathBuf>,
    #[arg(long, value_enum, global = true)]
    pub backend: Option<BackendKind>,
    /// Simulator scenario file; repeat to merge several.
    #[arg(long = "scenario", global = true)]
    pub scenarios: Vec<PathBuf>,
    #[arg(long, global = true)]
    pub endpoint: Option<String>,
    #[arg(long, global = true)]
    pub model: Option<String>,
    /// Remote request timeout in seconds.
    #[arg(long, global = true)]
    pub timeout: Option<u64>,
    #[arg(long, global = true)]
    pub agents: Option<usize>,
    #[arg(long, global = true)]
    pub max_rounds: Option<u32>,
    #[arg(long, value_enum, global = true)]
    pub mode: Option<ModeArg>,
    #[arg(long, value_enum, global = true)]
    pub perturb: Option<PerturbArg>,
    /// loose, strict or custom.
    #[arg(long, global = true)]
    pub policy: Option<String>,
    #[arg(long, global = true)]
    pub threshold: Option<f64>,
    /// Comma-separated, e.g. DAE,SC_SE,GREEDY.
    #[arg(long, global = true)]
    pub methods: Option<String>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub parallel: Option<usize>,
    #[arg(long, global = true)]
    pub out_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    pub questions_in: Option<PathBuf>,
    #[arg(long, global = true)]
    pub questions_out: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub dataset: Option<PathBuf>,
    pub backend: Option<BackendKind>,
    #[serde(default)]
    pub scenarios: Vec<PathBuf>,
    pub endpoint: Option<String>,
    pub model: Option<String>,
    pub timeout: Option<u64>,
    pub api_key_var: Option<String>,
    pub agents: Option<usize>,
    pub max_rounds: Option<u32>,
    pub mode: Option<ModeArg>,
    pub perturb: Option<PerturbArg>,
    pub policy: Option<String>,
    pub threshold: Option<f64>,
    pub methods: Option<String>,
    pub seed: Option<u64>,
    pub parallel: Option<usize>,
    pub out_dir: Option<PathBuf>,
    pub questions_in: Option<PathBuf>,
    pub questions_out: Option<PathBuf>,
}

impl FileConfig {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text =
            std::fs::read_to_string(path).map_err(|e| input(format!("{}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| input(format!("{}: {e}", path.display())))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum BackendSpec {
    Sim { scenarios: Vec<PathBuf> },
    Remote(RemoteConfig),
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub backend: BackendSpec,
    pub interaction: InteractionConfig,
    pub policy: AbstentionPolicy,
    pub methods: String,
    pub parallel: usize,
    pub dataset: Option<PathBuf>,
    pub questions_in: Option<PathBuf>,
    pub questions_out: Option<PathBuf>,
    pub out_dir: PathBuf,
    /// Whether `--methods` was given explicitly (evaluate filters on it).
    pub methods_explicit: bool,
}

pub const DEFAULT_METHODS: &str = "DAE,DAE_NoInteraction,SC_SE";

impl RunConfig {
    pub fn resolve(args: &CommonArgs) -> CliResult<Self> {
        let file = match &args.config {
            Some(p) => FileConfig::load(p)?,
            None => FileConfig::default(),
        };
        Self::merge(args, file)
    }

    pub fn merge(args: &CommonArgs, file: FileConfig) -> CliResult<Self> {
        let kind = args.backend.or(file.backend).unwrap_or(BackendKind::Sim);
        let backend = match kind {
            BackendKind::Sim => {
                let scenarios = if args.scenarios.is_empty() {
                    file.scenarios
                } else {
                    args.scenarios.clone()
                };
                BackendSpec::Sim { scenarios }
            }
            BackendKind::Remote => {
                let endpoint = args
                    .endpoint
                    .clone()
                    .or(file.endpoint)
                    .ok_or_else(|| input("remote backend needs --endpoint"))?;
                let model = args
                    .model
                    .clone()
                    .or(file.model)
                    .ok_or_else(|| input("remote backend needs --model"))?;
                let mut rc = RemoteConfig::new(endpoint, model);
                if let Some(t) = args.timeout.or(file.timeout) {
                    rc.timeout_secs = t;
                }
                rc.api_key_var = file
                    .api_key_var
                    .unwrap_or_else(|| DEFAULT_API_KEY_VAR.to_string());
                BackendSpec::Remote(rc)
            }
        };

        let mode = match args.mode.or(file.mode).unwrap_or(ModeArg::OneOnOne) {
            ModeArg::OneOnOne => Mode::OneOnOne,
            ModeArg::Group => Mode::Group,
        };
        let perturbation = match args.perturb.or(file.perturb).unwrap_or(PerturbArg::None) {
            PerturbArg::None => Perturbation::None,
            PerturbArg::Wrong => Perturbation::PersistentWrong,
            PerturbArg::Idk => Perturbation::PersistentIdk,
        };
        let interaction = InteractionConfig {
            n_agents: args.agents.or(file.agents).unwrap_or(5),
            max_rounds: args.max_rounds.or(file.max_rounds).unwrap_or(4),
            mode,
            perturbation,
            seed: args.seed.or(file.seed).unwrap_or(0),
            wrong_answer: None,
        };
        interaction.validate().map_err(|e| input(e.to_string()))?;

        let threshold = args.threshold.or(file.threshold);
        let variant = match args.policy.clone().or(file.policy) {
            Some(p) => p
                .parse::<PolicyVariant>()
                .map_err(|e| input(e.to_string()))?,
            None if threshold.is_some() => PolicyVariant::Custom,
            None => PolicyVariant::Loose,
        };
        let policy =
            AbstentionPolicy::from_parts(variant, threshold).map_err(|e| input(e.to_string()))?;

        let parallel = args.parallel.or(file.parallel).unwrap_or(1);
        if parallel == 0 {
            return Err(input("--parallel must be at least 1"));
        }
        let methods_explicit = args.methods.is_some() || file.methods.is_some();
        let methods = args
            .methods
            .clone()
            .or(file.methods)
            .unwrap_or_else(|| DEFAULT_METHODS.to_string());
        dae_core::pipeline::parse_method_list(&methods).map_err(|e| input(e.to_string()))?;

        Ok(Self {
            backend,
            interaction,
            policy,
            methods,
            parallel,
            dataset: args.dataset.clone().or(file.dataset),
            questions_in: args.questions_in.clone().or(file.questions_in),
            questions_out: args.questions_out.clone().or(file.questions_out),
            out_dir: args
                .out_dir
                .clone()
                .or(file.out_dir)
                .unwrap_or_else(|| PathBuf::from("out")),
            methods_explicit,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn file(text: &str) -> FileConfig {
        toml::from_str(text).unwrap()
    }

    #[test]
    fn flags_override_file() {
        let args = CommonArgs {
            agents: Some(3),
            ..CommonArgs::default()
        };
        let cfg = RunConfig::merge(&args, file("agents = 7\nmax_rounds = 2\nseed = 9\n")).unwrap();
        assert_eq!(cfg.interaction.n_agents, 3);
        assert_eq!(cfg.interaction.max_rounds, 2);
        assert_eq!(cfg.interaction.seed, 9);
        assert_eq!(cfg.policy, AbstentionPolicy::loose());
    }

    #[test]
    fn threshold_alone_means_custom() {
        let args = CommonArgs {
            threshold: Some(0.5),
            ..CommonArgs::default()
        };
        let cfg = RunConfig::merge(&args, FileConfig::default()).unwrap();
        assert_eq!(cfg.policy.variant, PolicyVariant::Custom);
        assert_eq!(cfg.policy.threshold, 0.5);
    }

    #[test]
    fn rejects_bad_combinations() {
        let with = |f: fn(&mut CommonArgs)| {
            let mut a = CommonArgs::default();
            f(&mut a);
            RunConfig::merge(&a, FileConfig::default())
        };
        assert!(with(|a| a.agents = Some(1)).is_err());
        assert!(with(|a| a.max_rounds = Some(0)).is_err());
        assert!(with(|a| a.parallel = Some(0)).is_err());
        assert!(with(|a| {
            a.policy = Some("strict".into());
            a.threshold = Some(0.3);
        })
        .is_err());
        assert!(with(|a| a.policy = Some("custom".into())).is_err());
        assert!(with(|a| a.methods = Some("DAE,bogus".into())).is_err());
        assert!(with(|a| a.backend = Some(BackendKind::Remote)).is_err());
    }

    #[test]
    fn unknown_file_keys_rejected() {
        assert!(toml::from_str::<FileConfig>("agnets = 3").is_err());
        let f = file("backend = \"remote\"\nendpoint = \"http://x\"\nmodel = \"m\"\nmode = \"group\"\nperturb = \"wrong\"");
        let cfg = RunConfig::merge(&CommonArgs::default(), f).unwrap();
        assert!(matches!(cfg.backend, BackendSpec::Remote(_)));
        assert_eq!(cfg.interaction.mode, Mode::Group);
        assert_eq!(cfg.interaction.perturbation, Perturbation::PersistentWrong);
    }
}
