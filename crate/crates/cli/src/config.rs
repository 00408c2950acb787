use std::fs;
use std::path::{Path, PathBuf};

use gliderdec_core::inversion::InversionConfig;
use gliderdec_core::simulator::ScenarioSpec;
use gliderdec_core::statespace::StateSpaceConfig;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Invert,
    Joint,
    #[default]
    Both,
}

impl Method {
    pub fn runs_invert(self) -> bool {
        matches!(self, Method::Invert | Method::Both)
    }

    pub fn runs_joint(self) -> bool {
        matches!(self, Method::Joint | Method::Both)
    }
}

/// Contents of a `--config` file. Command-line flags take precedence.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConfigFile {
    pub method: Option<Method>,
    pub plots: Option<bool>,
    pub inversion: InversionConfig,
    pub statespace: StateSpaceConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub method: Method,
    pub inversion: InversionConfig,
    pub statespace: StateSpaceConfig,
    pub output_dir: PathBuf,
    pub emit_plots: bool,
}

impl RunConfig {
    pub fn new(file: ConfigFile, output_dir: PathBuf, method: Option<Method>, plots: bool) -> Self {
        Self {
            method: method.or(file.method).unwrap_or_default(),
            inversion: file.inversion,
            statespace: file.statespace,
            output_dir,
            emit_plots: plots || file.plots.unwrap_or(false),
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.method.runs_invert() {
            self.inversion.validate().map_err(|e| CliError::Config(format!("inversion: {e}")))?;
        }
        if self.method.runs_joint() {
            self.statespace.validate().map_err(|e| CliError::Config(format!("statespace: {e}")))?;
        }
        Ok(())
    }
}

/// 1-based line and column of a byte offset.
fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let col = before.rsplit('\n').next().map_or(0, |s| s.chars().count()) + 1;
    (line, col)
}

/// Dotted key assigned on the given line, qualified by the enclosing table.
fn key_on_line(text: &str, line: usize) -> Option<String> {
    let mut table = String::new();
    for (i, raw) in text.lines().enumerate() {
        let l = raw.trim();
        if l.starts_with('[') {
            table = l.trim_matches(|c| c == '[' || c == ']').trim().to_string();
        }
        if i + 1 == line {
            let key = l.split_once('=')?.0.trim().trim_matches('"');
            if key.is_empty() || l.starts_with('[') {
                return None;
            }
            return Some(if table.is_empty() { key.to_string() } else { format!("{table}.{key}") });
        }
    }
    None
}

pub fn parse_toml<T: DeserializeOwned>(text: &str, origin: &str) -> Result<T, CliError> {
    toml::from_str(text).map_err(|e| {
        let Some(span) = e.span() else {
            return CliError::Parse(format!("{origin}: {}", e.message()));
        };
        let (line, col) = line_col(text, span.start);
        let field = key_on_line(text, line).map(|k| format!(" (field `{k}`)")).unwrap_or_default();
        CliError::Parse(format!("{origin}: line {line}, column {col}{field}: {}", e.message().trim_end()))
    })
}

pub fn parse_json<T: DeserializeOwned>(text: &str, origin: &str) -> Result<T, CliError> {
    serde_json::from_str(text)
        .map_err(|e| CliError::Parse(format!("{origin}: line {}, column {}: {e}", e.line(), e.column())))
}

/// Parses TOML, or JSON when the file name ends in `.json`.
pub fn load_file<T: DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = fs::read_to_string(path).map_err(CliError::io(path))?;
    let origin = path.display().to_string();
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json")) {
        parse_json(&text, &origin)
    } else {
        parse_toml(&text, &origin)
    }
}

pub fn load_scenario(path: &Path) -> Result<ScenarioSpec, CliError> {
    load_file(path)
}

pub fn load_config(path: Option<&Path>) -> Result<ConfigFile, CliError> {
    path.map_or_else(|| Ok(ConfigFile::default()), load_file)
}
