//! Line-oriented run configuration.
//!
//! Grammar: `key = value` pairs, `#` starts a comment, blank lines are
//! skipped. A `[stage <kind>]` header opens a stage section; keys before the
//! first header configure the run (demo, out, n). Values are free-form
//! strings interpreted per key: numbers, booleans (`true`/`false`), or
//! whitespace-separated lists. Stage kinds: cont-steady, hoswibra, cont-po,
//! twswibra, poswibra, hpcont, bpcont, floquet, timeint.

use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("line {line}: expected key = value, got '{text}'")]
    BadLine { line: usize, text: String },
    #[error("line {line}: unknown stage kind '{kind}'")]
    BadStage { line: usize, kind: String },
    #[error("missing required top-level key '{0}'")]
    MissingKey(&'static str),
    #[error("stage {stage} ({kind}): missing key '{key}'")]
    MissingStageKey { stage: usize, kind: String, key: &'static str },
    #[error("stage {stage} ({kind}): bad value for '{key}': {value}")]
    BadValue { stage: usize, kind: String, key: &'static str, value: String },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Stage {
    pub kind: String,
    pub options: BTreeMap<String, String>,
}

impl Stage {
    pub fn get(&self, key: &str) -> Option<&str> {
        self.options.get(key).map(|s| s.as_str())
    }

    pub fn name(&self) -> Option<&str> {
        self.get("name")
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunConfig {
    pub demo: String,
    pub out_dir: String,
    pub mesh_n: Option<usize>,
    pub stages: Vec<Stage>,
}

pub const STAGE_KINDS: &[&str] = &[
    "cont-steady",
    "hoswibra",
    "cont-po",
    "twswibra",
    "poswibra",
    "hpcont",
    "bpcont",
    "floquet",
    "timeint",
];

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut demo = None;
        let mut out_dir = None;
        let mut mesh_n = None;
        let mut stages: Vec<Stage> = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('[') {
                let inner = rest
                    .strip_suffix(']')
                    .ok_or_else(|| ConfigError::BadLine { line: lineno + 1, text: raw.into() })?
                    .trim();
                let kind = inner
                    .strip_prefix("stage")
                    .ok_or_else(|| ConfigError::BadLine { line: lineno + 1, text: raw.into() })?
                    .trim()
                    .to_string();
                if !STAGE_KINDS.contains(&kind.as_str()) {
                    return Err(ConfigError::BadStage { line: lineno + 1, kind });
                }
                stages.push(Stage { kind, options: BTreeMap::new() });
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| ConfigError::BadLine { line: lineno + 1, text: raw.into() })?;
            let key = key.trim().to_string();
            let value = value.trim().to_string();
            match stages.last_mut() {
                Some(stage) => {
                    stage.options.insert(key, value);
                }
                None => match key.as_str() {
                    "demo" => demo = Some(value),
                    "out" => out_dir = Some(value),
                    "n" => {
                        mesh_n = Some(value.parse().map_err(|_| ConfigError::BadLine {
                            line: lineno + 1,
                            text: raw.into(),
                        })?)
                    }
                    _ => {
                        return Err(ConfigError::BadLine { line: lineno + 1, text: raw.into() });
                    }
                },
            }
        }
        Ok(RunConfig {
            demo: demo.ok_or(ConfigError::MissingKey("demo"))?,
            out_dir: out_dir.ok_or(ConfigError::MissingKey("out"))?,
            mesh_n,
            stages,
        })
    }
}

pub fn parse_f64(
    stage_idx: usize,
    stage: &Stage,
    key: &'static str,
) -> Result<Option<f64>, ConfigError> {
    match stage.get(key) {
        None => Ok(None),
        Some(v) => v.parse().map(Some).map_err(|_| ConfigError::BadValue {
            stage: stage_idx,
            kind: stage.kind.clone(),
            key,
            value: v.into(),
        }),
    }
}

pub fn parse_usize(
    stage_idx: usize,
    stage: &Stage,
    key: &'static str,
) -> Result<Option<usize>, ConfigError> {
    match stage.get(key) {
        None => Ok(None),
        Some(v) => v.parse().map(Some).map_err(|_| ConfigError::BadValue {
            stage: stage_idx,
            kind: stage.kind.clone(),
            key,
            value: v.into(),
        }),
    }
}

pub fn parse_f64_list(
    stage_idx: usize,
    stage: &Stage,
    key: &'static str,
) -> Result<Vec<f64>, ConfigError> {
    match stage.get(key) {
        None => Ok(Vec::new()),
        Some(v) => v
            .split_whitespace()
            .map(|tok| {
                tok.parse().map_err(|_| ConfigError::BadValue {
                    stage: stage_idx,
                    kind: stage.kind.clone(),
                    key,
                    value: v.into(),
                })
            })
            .collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_stages_and_comments() {
        let text = "\
# demo run
demo = cgl
out = runs/demo   # output dir
n = 30

[stage cont-steady]
name = tr
steps = 40
usrlam = 0.5 1.0

[stage hoswibra]
name = b1
from = tr/hp1
";
        let cfg = RunConfig::parse(text).unwrap();
        assert_eq!(cfg.demo, "cgl");
        assert_eq!(cfg.out_dir, "runs/demo");
        assert_eq!(cfg.mesh_n, Some(30));
        assert_eq!(cfg.stages.len(), 2);
        assert_eq!(cfg.stages[0].kind, "cont-steady");
        assert_eq!(cfg.stages[0].get("steps"), Some("40"));
        assert_eq!(parse_f64_list(0, &cfg.stages[0], "usrlam").unwrap(), vec![0.5, 1.0]);
        assert_eq!(cfg.stages[1].get("from"), Some("tr/hp1"));
    }

    #[test]
    fn rejects_unknown_stage() {
        let text = "demo = cgl\nout = o\n[stage warp]\n";
        assert!(matches!(RunConfig::parse(text), Err(ConfigError::BadStage { .. })));
    }

    #[test]
    fn rejects_bad_lines() {
        assert!(RunConfig::parse("demo cgl\n").is_err());
        assert!(RunConfig::parse("demo = cgl\n").is_err()); // missing out
    }
}
