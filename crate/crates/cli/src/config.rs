//! Run configuration: defaults, then a JSON config file, then flags.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use clb_core::instance::{params_schedule, InstanceParams, ScheduleMode, ScheduleOverrides};
use clb_core::{ClbError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Command {
    Gen,
    Probe,
    Verify,
    Game,
    Bench,
    Report,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Json,
    Csv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Tower,
    Toy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ReportKind {
    Hiding,
    Wall,
    Parallel,
    Table,
    Toy,
}

/// Everything a command reads. Serializing and parsing back is the identity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub command: Command,
    pub n: u64,
    pub p: u32,
    pub mode: ScheduleMode,
    pub gamma: Option<f64>,
    pub seed: u64,
    pub mc_samples: usize,
    pub trials: u64,
    pub rounds: Option<usize>,
    pub parallel_k: usize,
    /// Per-round query cap is `max(floor, ceil(k^degree))`.
    pub parallel_cap_degree: f64,
    pub parallel_cap_floor: usize,
    pub algorithm: String,
    pub budget: Option<usize>,
    pub family: Family,
    pub toy_m: usize,
    pub toy_n: u32,
    pub level: Option<usize>,
    pub order: u32,
    /// JSON array holding the probe point; a seeded ball point when absent.
    pub point: Option<PathBuf>,
    pub suite: Option<String>,
    pub corrupt_frame: bool,
    pub report: ReportKind,
    pub instance: Option<PathBuf>,
    pub out: PathBuf,
    pub format: Format,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            command: Command::Gen,
            n: 4096,
            p: 1,
            mode: ScheduleMode::Scaled,
            gamma: Some(0.01),
            seed: 0,
            mc_samples: 4096,
            trials: 1,
            rounds: None,
            parallel_k: 1,
            parallel_cap_degree: 3.0,
            parallel_cap_floor: 64,
            algorithm: "subgradient".into(),
            budget: None,
            family: Family::Tower,
            toy_m: 4,
            toy_n: 8,
            level: None,
            order: 1,
            point: None,
            suite: None,
            corrupt_frame: false,
            report: ReportKind::Hiding,
            instance: None,
            out: PathBuf::from("out"),
            format: Format::Json,
        }
    }
}

impl RunConfig {
    pub fn params(&self) -> Result<InstanceParams> {
        let overrides = self.gamma.map(ScheduleOverrides::with_gamma).unwrap_or_default();
        params_schedule(self.n, self.p, self.mode, overrides)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| ClbError::Format(format!("{}: {e}", path.display())))
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("config serializes");
        s.push('\n');
        s
    }
}

#[derive(Debug, Parser)]
#[command(name = "clb", about = "Hard instances for highly smooth convex optimization and their query games")]
pub struct Cli {
    #[command(subcommand)]
    pub command: CliCommand,
}

#[derive(Debug, Subcommand)]
pub enum CliCommand {
    /// Generate an instance: descriptor JSON plus binary frame
    Gen(Flags),
    /// Answer one oracle query and print the response
    Probe(Flags),
    /// Run the property suites; exit 1 if any property fails
    Verify(Flags),
    /// Play the hybrid game and write transcripts
    Game(Flags),
    /// Run an optimizer and write its trace
    Bench(Flags),
    /// Run a measurement and write its report
    Report(Flags),
}

/// Flags shared by every subcommand; each overrides the config file.
#[derive(Debug, Clone, Default, Args)]
pub struct Flags {
    /// JSON config file (flags take precedence)
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub n: Option<u64>,
    #[arg(long)]
    pub p: Option<u32>,
    /// paper-exact or scaled
    #[arg(long)]
    pub mode: Option<ScheduleMode>,
    /// Fix gamma instead of using the schedule
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Use the scheduled gamma even if the config fixes one
    #[arg(long)]
    pub schedule_gamma: bool,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub mc_samples: Option<usize>,
    #[arg(long)]
    pub trials: Option<u64>,
    #[arg(long)]
    pub rounds: Option<usize>,
    /// Queries per round
    #[arg(long)]
    pub parallel_k: Option<usize>,
    #[arg(long)]
    pub parallel_cap_degree: Option<f64>,
    #[arg(long)]
    pub parallel_cap_floor: Option<usize>,
    /// subgradient, agd, random, zero, informed (toy family: random-guess)
    #[arg(long)]
    pub algorithm: Option<String>,
    #[arg(long)]
    pub budget: Option<usize>,
    #[arg(long, value_enum)]
    pub family: Option<Family>,
    #[arg(long)]
    pub toy_m: Option<usize>,
    #[arg(long)]
    pub toy_n: Option<u32>,
    /// Oracle level for probe (default k)
    #[arg(long)]
    pub level: Option<usize>,
    /// Oracle order for probe
    #[arg(long)]
    pub order: Option<u32>,
    /// JSON array with the probe point
    #[arg(long)]
    pub point: Option<PathBuf>,
    /// softmax, smoothing, concentration or instance
    #[arg(long)]
    pub suite: Option<String>,
    /// Perturb the frame before verifying (negative control)
    #[arg(long)]
    pub corrupt_frame: bool,
    #[arg(long, value_enum)]
    pub report: Option<ReportKind>,
    /// Instance descriptor written by gen
    #[arg(long)]
    pub instance: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub format: Option<Format>,
}

impl Flags {
    /// Defaults, overridden by the config file, overridden by flags.
    pub fn resolve(&self, command: Command) -> Result<RunConfig> {
        let mut c = match &self.config {
            Some(path) => RunConfig::from_file(path)?,
            None => RunConfig::default(),
        };
        c.command = command;
        macro_rules! take {
            ($($f:ident),*) => { $( if let Some(v) = self.$f.clone() { c.$f = v; } )* };
        }
        take!(n, p, mode, seed, mc_samples, trials, parallel_k, parallel_cap_degree, parallel_cap_floor);
        take!(algorithm, family, toy_m, toy_n, order, report, out, format);
        if self.gamma.is_some() {
            c.gamma = self.gamma;
        }
        if self.schedule_gamma {
            c.gamma = None;
        }
        macro_rules! take_opt {
            ($($f:ident),*) => { $( if self.$f.is_some() { c.$f = self.$f.clone(); } )* };
        }
        take_opt!(rounds, budget, level, point, suite, instance);
        c.corrupt_frame |= self.corrupt_frame;
        Ok(c)
    }
}

impl CliCommand {
    pub fn split(&self) -> (Command, &Flags) {
        match self {
            Self::Gen(f) => (Command::Gen, f),
            Self::Probe(f) => (Command::Probe, f),
            Self::Verify(f) => (Command::Verify, f),
            Self::Game(f) => (Command::Game, f),
            Self::Bench(f) => (Command::Bench, f),
            Self::Report(f) => (Command::Report, f),
        }
    }
}
