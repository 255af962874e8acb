//! Declarative experiment configuration (TOML, or JSON by extension) with
//! dotted-path overrides.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::adversarial::AttackKind;
use crate::data::{CsvSchema, GappedRegression, TwoGaussians};
use crate::error::{Error, Result};
use crate::model::{ModelConfig, Task};
use crate::solver::SolverConfig;
use crate::training::TrainConfig;
use crate::uncertainty::{ScoreMode, DEFAULT_TEST_PATHS};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSpec {
    TwoGaussians {
        n_per_class: usize,
        test_per_class: usize,
        dim: usize,
        separation: f64,
        #[serde(default)]
        covariance: Option<Vec<Vec<f64>>>,
    },
    GappedRegression { curve: GappedRegression, test_size: usize },
    Csv {
        train: PathBuf,
        test: PathBuf,
        schema: CsvSchema,
    },
}

impl DatasetSpec {
    pub fn two_gaussians(&self) -> Option<TwoGaussians> {
        match self {
            DatasetSpec::TwoGaussians {
                n_per_class,
                dim,
                separation,
                covariance,
                ..
            } => {
                let mut spec = TwoGaussians::axis(*n_per_class, *dim, *separation);
                spec.covariance = covariance.clone();
                Some(spec)
            }
            _ => None,
        }
    }
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec::TwoGaussians {
            n_per_class: 500,
            test_per_class: 500,
            dim: 2,
            separation: 2.0,
            covariance: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSpec {
    pub state_dim: usize,
    pub head_hidden: Vec<usize>,
    pub drift_hidden: usize,
    pub diffusion_hidden: usize,
    /// `None` picks 6 steps for classification and 4 for regression.
    pub steps: Option<usize>,
    pub terminal_time: f64,
    pub sigma_max_train: f64,
    pub sigma_max_test: f64,
    /// Paths per input at evaluation time.
    pub test_paths: usize,
}

impl Default for ModelSpec {
    fn default() -> Self {
        ModelSpec {
            state_dim: 16,
            head_hidden: Vec::new(),
            drift_hidden: 50,
            diffusion_hidden: 50,
            steps: None,
            terminal_time: 1.0,
            sigma_max_train: 1.0,
            sigma_max_test: 10.0,
            test_paths: DEFAULT_TEST_PATHS,
        }
    }
}

impl ModelSpec {
    pub fn to_config(&self, input_dim: usize, task: Task) -> Result<ModelConfig> {
        let steps = self.steps.unwrap_or(if task.is_classification() { 6 } else { 4 });
        let config = ModelConfig {
            input_dim,
            state_dim: self.state_dim,
            head_hidden: self.head_hidden.clone(),
            drift_hidden: self.drift_hidden,
            diffusion_hidden: self.diffusion_hidden,
            task,
            solver: SolverConfig::new(self.terminal_time, steps)?,
            sigma_max_train: self.sigma_max_train,
            sigma_max_test: self.sigma_max_test,
        };
        config.validate()?;
        Ok(config)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum OodSpec {
    /// In-distribution test inputs plus `N(0, variance I)` in model input space.
    Perturbation { variance: f64 },
    /// Features of a CSV file, normalised with the training statistics.
    Csv { path: PathBuf, schema: CsvSchema },
}

impl Default for OodSpec {
    fn default() -> Self {
        OodSpec::Perturbation { variance: 4.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSpec {
    pub ood: OodSpec,
    pub score_modes: Vec<ScoreMode>,
    /// Zero-diffusion single-pass comparator.
    pub baseline: bool,
    /// Deep-ensemble comparator size; 0 disables it.
    pub ensemble_size: usize,
    pub val_fraction: f64,
    pub normalize: bool,
    /// Directory holding `seed-<s>/model.json` checkpoints to load instead of training.
    pub model_dir: Option<PathBuf>,
}

impl Default for EvalSpec {
    fn default() -> Self {
        EvalSpec {
            ood: OodSpec::default(),
            score_modes: vec![ScoreMode::MaxProb, ScoreMode::Epistemic],
            baseline: true,
            ensemble_size: 0,
            val_fraction: 0.1,
            normalize: true,
            model_dir: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttackSpec {
    pub kinds: Vec<AttackKind>,
    pub epsilons: Vec<f64>,
    /// PGD step as a fraction of epsilon.
    pub step_fraction: f64,
    pub iterations: usize,
    pub random_start: bool,
    pub gradient_paths: usize,
    /// Number of clean test inputs attacked.
    pub max_inputs: usize,
}

impl Default for AttackSpec {
    fn default() -> Self {
        AttackSpec {
            kinds: vec![AttackKind::Fgsm, AttackKind::Pgd],
            epsilons: vec![0.0, 0.25, 0.5, 1.0, 1.5, 2.0],
            step_fraction: 0.25,
            iterations: 10,
            random_start: false,
            gradient_paths: 1,
            max_inputs: 400,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ActiveSpec {
    pub initial_labels: usize,
    pub batch_size: usize,
    pub rounds: usize,
    pub epochs_per_round: usize,
    pub warm_start: bool,
    /// Also run the uniform-weight control.
    pub random_control: bool,
}

impl Default for ActiveSpec {
    fn default() -> Self {
        ActiveSpec {
            initial_labels: 50,
            batch_size: 50,
            rounds: 5,
            epochs_per_round: 100,
            warm_start: true,
            random_control: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VisualizeSpec {
    pub bounds: [(f64, f64); 2],
    pub resolution: usize,
    /// Grid points this close to a class mean count as in-data.
    pub near_radius: f64,
    /// Grid points farther than this from every class mean count as far.
    pub far_radius: f64,
}

impl Default for VisualizeSpec {
    fn default() -> Self {
        VisualizeSpec {
            bounds: [(-8.0, 8.0), (-8.0, 8.0)],
            resolution: 50,
            near_radius: 2.0,
            far_radius: 4.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
    /// Run seeds on a thread pool; results are identical either way.
    pub parallel: bool,
    pub dataset: DatasetSpec,
    pub model: ModelSpec,
    pub train: TrainConfig,
    pub eval: EvalSpec,
    pub attack: AttackSpec,
    pub active: ActiveSpec,
    pub visualize: VisualizeSpec,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            name: "experiment".into(),
            seeds: vec![0, 1, 2, 3, 4],
            output_dir: PathBuf::from("results"),
            parallel: true,
            dataset: DatasetSpec::default(),
            model: ModelSpec::default(),
            train: TrainConfig::default(),
            eval: EvalSpec::default(),
            attack: AttackSpec::default(),
            active: ActiveSpec::default(),
            visualize: VisualizeSpec::default(),
        }
    }
}

impl ExperimentConfig {
    /// Reads a TOML file, or JSON when the extension is `.json`, then applies
    /// `section.key=value` overrides in order.
    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut value = if path.extension().is_some_and(|e| e == "json") {
            let json: serde_json::Value =
                serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
            toml::Value::try_from(json).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        } else {
            toml::from_str::<toml::Value>(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        };
        for o in overrides {
            apply_override(&mut value, o)?;
        }
        let config: ExperimentConfig = value
            .try_into()
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Ok(config)
    }

    /// Default configuration with overrides applied.
    pub fn from_overrides(overrides: &[String]) -> Result<Self> {
        let mut value = toml::Value::try_from(ExperimentConfig::default())
            .map_err(|e| Error::Config(e.to_string()))?;
        for o in overrides {
            apply_override(&mut value, o)?;
        }
        value.try_into().map_err(|e| Error::Config(format!("{e}")))
    }

    pub fn with_overrides(&self, overrides: &[String]) -> Result<Self> {
        let mut value = toml::Value::try_from(self.clone()).map_err(|e| Error::Config(e.to_string()))?;
        for o in overrides {
            apply_override(&mut value, o)?;
        }
        value.try_into().map_err(|e| Error::Config(format!("{e}")))
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::Config("seeds must not be empty".into()));
        }
        if self.model.test_paths == 0 {
            return Err(Error::Config("model.test_paths must be at least 1".into()));
        }
        self.train.validate()?;
        let mut files: Vec<&Path> = Vec::new();
        if let DatasetSpec::Csv { train, test, .. } = &self.dataset {
            files.extend([train.as_path(), test.as_path()]);
        }
        if let OodSpec::Csv { path, .. } = &self.eval.ood {
            files.push(path);
        }
        if let OodSpec::Perturbation { variance } = self.eval.ood {
            if !(variance > 0.0 && variance.is_finite()) {
                return Err(Error::Config(format!("OOD perturbation variance must be positive, got {variance}")));
            }
        }
        if let Some(dir) = &self.eval.model_dir {
            files.push(dir);
        }
        if let Some(missing) = files.iter().find(|p| !p.exists()) {
            return Err(Error::Config(format!("referenced path {} does not exist", missing.display())));
        }
        if !(0.0..1.0).contains(&self.eval.val_fraction) {
            return Err(Error::Config("eval.val_fraction must lie in [0, 1)".into()));
        }
        let v = &self.visualize;
        if v.resolution < 2 || !(v.near_radius > 0.0 && v.far_radius >= v.near_radius) {
            return Err(Error::Config("visualize needs resolution >= 2 and 0 < near_radius <= far_radius".into()));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(format!("cannot serialise config: {e}")))
    }
}

/// Sets `a.b.c = value` in a TOML tree. The value is parsed as a TOML literal,
/// falling back to a bare string.
pub fn apply_override(root: &mut toml::Value, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override '{assignment}' is not key=value")))?;
    let key = key.trim();
    let raw = raw.trim();
    let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("override key '{key}' is malformed")));
    }
    let mut node = root;
    for part in &parts[..parts.len() - 1] {
        let table = node
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("override '{key}': '{part}' is not a table")))?;
        node = table
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
    }
    let table = node
        .as_table_mut()
        .ok_or_else(|| Error::Config(format!("override '{key}' does not address a table entry")))?;
    table.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_parse_literals_and_strings() {
        let c = ExperimentConfig::from_overrides(&[
            "train.epochs=3".into(),
            "seeds=[7]".into(),
            "name=quick".into(),
            "model.sigma_max_test=2.5".into(),
        ])
        .unwrap();
        assert_eq!(c.train.epochs, 3);
        assert_eq!(c.seeds, vec![7]);
        assert_eq!(c.name, "quick");
        assert_eq!(c.model.sigma_max_test, 2.5);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(ExperimentConfig::from_overrides(&["model.widht=3".into()]).is_err());
        assert!(ExperimentConfig::from_overrides(&["nonsense".into()]).is_err());
    }

    #[test]
    fn toml_round_trip() {
        let c = ExperimentConfig::default();
        let back: ExperimentConfig = toml::from_str(&c.to_toml().unwrap()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn json_and_toml_agree() {
        let dir = tempfile::tempdir().unwrap();
        let t = dir.path().join("c.toml");
        let j = dir.path().join("c.json");
        fs::write(&t, "seeds = [1, 2]\n[train]\nepochs = 4\n").unwrap();
        fs::write(&j, r#"{"seeds": [1, 2], "train": {"epochs": 4}}"#).unwrap();
        assert_eq!(ExperimentConfig::load(&t, &[]).unwrap(), ExperimentConfig::load(&j, &[]).unwrap());
    }

    #[test]
    fn empty_seed_list_is_invalid() {
        let c = ExperimentConfig::from_overrides(&["seeds=[]".into()]).unwrap();
        assert!(matches!(c.validate(), Err(Error::Config(_))));
    }
}
