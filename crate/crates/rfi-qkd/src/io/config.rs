//! Versioned JSON run configuration and the efficiency-map JSON file.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::detection::{EfficiencyMap, Side, ALICE_OUTCOMES, BOB_OUTCOMES};
use crate::io::ConfigError;
use crate::protocol::Correlation;
use crate::source::SourceModel;

pub const CONFIG_SCHEMA: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scenario {
    A,
    B,
    Custom,
}

/// Where the analysis gets its detector efficiencies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum EfficiencyConfig {
    /// Fit them from the data (step 1 of the detailed analysis).
    Fit,
    /// Load a fixed map from an efficiency JSON file (independent
    /// calibration).
    File { path: String },
    /// Fixed map given inline, keyed like the efficiency JSON.
    Inline { values: BTreeMap<String, f64> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineToggles {
    pub analytic: bool,
    pub mle: bool,
    pub numeric: bool,
}

impl Default for PipelineToggles {
    fn default() -> Self {
        Self { analytic: true, mle: true, numeric: true }
    }
}

fn default_duration() -> f64 {
    120.0
}
fn default_slot_ns() -> f64 {
    1.0
}
fn default_window() -> f64 {
    20.0
}
fn default_seed() -> u64 {
    1
}

/// The run-config file. `scenario` a/b fills in the source preset;
/// `custom` requires an explicit `source` block.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    pub schema: u32,
    pub scenario: Scenario,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_duration")]
    pub duration_s: f64,
    #[serde(default = "default_slot_ns")]
    pub slot_ns: f64,
    #[serde(default = "default_window")]
    pub window_s: f64,
    #[serde(default)]
    pub source: Option<SourceModel>,
    #[serde(default)]
    pub efficiencies: Option<EfficiencyConfig>,
    #[serde(default)]
    pub pipelines: PipelineToggles,
    #[serde(default)]
    pub convention: Option<String>,
    #[serde(default)]
    pub out_dir: Option<String>,
}

impl RunConfig {
    pub fn scenario_defaults(scenario: Scenario, seed: u64) -> Self {
        Self {
            schema: CONFIG_SCHEMA,
            scenario,
            seed,
            duration_s: default_duration(),
            slot_ns: default_slot_ns(),
            window_s: default_window(),
            source: None,
            efficiencies: None,
            pipelines: PipelineToggles::default(),
            convention: None,
            out_dir: None,
        }
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError(format!("cannot read {}: {e}", path.display())))?;
        let cfg: RunConfig = serde_json::from_str(&text)
            .map_err(|e| ConfigError(format!("{}: {e}", path.display())))?;
        cfg.validate(path.parent().unwrap_or(Path::new(".")))?;
        Ok(cfg)
    }

    /// Field-level validation, including existence of referenced files
    /// (relative paths resolve against the config's directory).
    pub fn validate(&self, base: &Path) -> Result<(), ConfigError> {
        if self.schema != CONFIG_SCHEMA {
            return Err(ConfigError(format!(
                "field `schema`: version {} unsupported (expected {CONFIG_SCHEMA})",
                self.schema
            )));
        }
        if !(self.duration_s > 0.0) {
            return Err(ConfigError(format!(
                "field `duration_s`: {} must be positive",
                self.duration_s
            )));
        }
        if !(self.slot_ns > 0.0) {
            return Err(ConfigError(format!(
                "field `slot_ns`: {} must be positive",
                self.slot_ns
            )));
        }
        if !(self.window_s > 0.0) {
            return Err(ConfigError(format!(
                "field `window_s`: {} must be positive",
                self.window_s
            )));
        }
        if self.scenario == Scenario::Custom && self.source.is_none() {
            return Err(ConfigError(
                "field `source`: required for scenario \"custom\"".into(),
            ));
        }
        if let Some(source) = &self.source {
            source
                .validate()
                .map_err(|e| ConfigError(format!("field `source`: {e}")))?;
        }
        if let Some(EfficiencyConfig::File { path }) = &self.efficiencies {
            let resolved = base.join(path);
            if !resolved.exists() {
                return Err(ConfigError(format!(
                    "field `efficiencies.path`: {} does not exist",
                    resolved.display()
                )));
            }
        }
        if let Some(EfficiencyConfig::Inline { values }) = &self.efficiencies {
            efficiency_map_from_values(values).map_err(|e| ConfigError(format!("{e}")))?;
        }
        if let Some(conv) = &self.convention {
            parse_convention(conv)?;
        }
        Ok(())
    }

    /// The source model this run simulates: explicit block if present,
    /// otherwise the scenario preset.
    pub fn source_model(&self) -> Result<SourceModel, ConfigError> {
        if let Some(source) = &self.source {
            return Ok(source.clone());
        }
        match self.scenario {
            Scenario::A => Ok(SourceModel::scenario_a(self.seed)),
            Scenario::B => Ok(SourceModel::scenario_b()),
            Scenario::Custom => Err(ConfigError(
                "field `source`: required for scenario \"custom\"".into(),
            )),
        }
    }

    pub fn correlation(&self) -> Result<Correlation, ConfigError> {
        match &self.convention {
            None => Ok(Correlation::Anticorrelated),
            Some(s) => parse_convention(s),
        }
    }

    pub fn slot_duration_s(&self) -> f64 {
        self.slot_ns * 1e-9
    }
}

fn parse_convention(s: &str) -> Result<Correlation, ConfigError> {
    match s {
        "anticorrelated" => Ok(Correlation::Anticorrelated),
        "correlated" => Ok(Correlation::Correlated),
        other => Err(ConfigError(format!(
            "field `convention`: \"{other}\" is neither \"correlated\" nor \"anticorrelated\""
        ))),
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct EfficiencyFile {
    schema: u32,
    efficiencies: BTreeMap<String, f64>,
}

pub(crate) fn efficiency_map_from_values(
    values: &BTreeMap<String, f64>,
) -> Result<EfficiencyMap, ConfigError> {
    let mut map = EfficiencyMap::uniform(0.0);
    let mut seen = 0;
    for (i, &(b, s)) in ALICE_OUTCOMES.iter().enumerate() {
        let label = crate::detection::detector_label(Side::Alice, b, s);
        let v = values
            .get(&label)
            .ok_or_else(|| ConfigError(format!("efficiencies: missing key {label}")))?;
        map.alice[i] = *v;
        seen += 1;
    }
    for (j, &(b, s)) in BOB_OUTCOMES.iter().enumerate() {
        let label = crate::detection::detector_label(Side::Bob, b, s);
        let v = values
            .get(&label)
            .ok_or_else(|| ConfigError(format!("efficiencies: missing key {label}")))?;
        map.bob[j] = *v;
        seen += 1;
    }
    if values.len() != seen {
        let known: Vec<String> = map.named_entries().into_iter().map(|(k, _)| k).collect();
        let unknown: Vec<&String> =
            values.keys().filter(|k| !known.contains(k)).collect();
        return Err(ConfigError(format!("efficiencies: unknown keys {unknown:?}")));
    }
    map.validate()
        .map_err(|e| ConfigError(format!("efficiencies: {e}")))?;
    Ok(map)
}

/// Load an efficiency-map JSON file (`{"schema": 1, "efficiencies":
/// {"A_Zp": …, …, "B_Xm": …}}`).
pub fn load_efficiency_json(path: &Path) -> Result<EfficiencyMap, ConfigError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| ConfigError(format!("cannot read {}: {e}", path.display())))?;
    let file: EfficiencyFile = serde_json::from_str(&text)
        .map_err(|e| ConfigError(format!("{}: {e}", path.display())))?;
    if file.schema != CONFIG_SCHEMA {
        return Err(ConfigError(format!(
            "{}: schema {} unsupported",
            path.display(),
            file.schema
        )));
    }
    efficiency_map_from_values(&file.efficiencies)
}

pub fn save_efficiency_json(path: &Path, map: &EfficiencyMap) -> Result<(), ConfigError> {
    let file = EfficiencyFile {
        schema: CONFIG_SCHEMA,
        efficiencies: map.named_entries().into_iter().collect(),
    };
    let text = serde_json::to_string_pretty(&file)
        .map_err(|e| ConfigError(format!("serialize efficiencies: {e}")))?;
    std::fs::write(path, text)
        .map_err(|e| ConfigError(format!("cannot write {}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scenario_config_round_trips() {
        let cfg = RunConfig::scenario_defaults(Scenario::A, 7);
        let json = serde_json::to_string_pretty(&cfg).unwrap();
        let back: RunConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(back.seed, 7);
        assert_eq!(back.scenario, Scenario::A);
        assert!(back.source_model().is_ok());
    }

    #[test]
    fn custom_scenario_requires_source() {
        let cfg = RunConfig::scenario_defaults(Scenario::Custom, 1);
        assert!(cfg.validate(Path::new(".")).is_err());
    }

    #[test]
    fn bad_schema_and_fields_are_diagnosed() {
        let mut cfg = RunConfig::scenario_defaults(Scenario::A, 1);
        cfg.schema = 99;
        let err = cfg.validate(Path::new(".")).unwrap_err().to_string();
        assert!(err.contains("schema"), "{err}");
        cfg.schema = CONFIG_SCHEMA;
        cfg.duration_s = -3.0;
        let err = cfg.validate(Path::new(".")).unwrap_err().to_string();
        assert!(err.contains("duration_s"), "{err}");
    }

    #[test]
    fn minimal_json_parses_with_defaults() {
        let cfg: RunConfig = serde_json::from_str(r#"{"schema":1,"scenario":"a"}"#).unwrap();
        assert_eq!(cfg.duration_s, 120.0);
        assert_eq!(cfg.window_s, 20.0);
        assert!(cfg.pipelines.analytic && cfg.pipelines.mle && cfg.pipelines.numeric);
    }

    #[test]
    fn efficiency_json_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("eff.json");
        let map = crate::detection::EfficiencyMap {
            alice: [0.063, 0.12, 0.08, 0.09, 0.1, 0.07],
            bob: [0.11, 0.066, 0.095, 0.082],
        };
        save_efficiency_json(&path, &map).unwrap();
        let back = load_efficiency_json(&path).unwrap();
        assert_eq!(back, map);
    }

    #[test]
    fn efficiency_json_rejects_missing_and_unknown_keys() {
        let mut values: BTreeMap<String, f64> = EfficiencyMap::uniform(0.1)
            .named_entries()
            .into_iter()
            .collect();
        values.remove("A_Zp");
        assert!(efficiency_map_from_values(&values).is_err());
        let mut values: BTreeMap<String, f64> = EfficiencyMap::uniform(0.1)
            .named_entries()
            .into_iter()
            .collect();
        values.insert("A_Qx".into(), 0.5);
        assert!(efficiency_map_from_values(&values).is_err());
    }
}
