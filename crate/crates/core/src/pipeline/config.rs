use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{read_text, LabelBook, PipelineError};
use crate::cohort::GroupId;
use crate::corpus::Corpus;
use crate::llmgate::{ExemplarSource, RunMatrix, Toggle};

/// Experiment grid plus file locations. Loaded from TOML; every key is
/// optional and flags may override any of them afterwards.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Bracketed corpus file; the bundled corpus when absent.
    pub corpus: Option<PathBuf>,
    /// Annotator JSON Lines consumed by `labels build`.
    pub annotations: Option<PathBuf>,
    /// Label sets; defaults to `<out>/labels.jsonl`.
    pub labels: Option<PathBuf>,
    pub endpoint: Option<String>,
    pub endpoint_supports_n: bool,
    pub models: Vec<String>,
    pub temperatures: Vec<f64>,
    pub role: Toggle,
    pub icl: Toggle,
    /// Groups used for personas and scoring, in report column order.
    pub groups: Vec<GroupId>,
    pub samples_zero_shot: u32,
    pub samples_icl: u32,
    pub exemplar_source: ExemplarSource,
    /// Response cache; defaults to `<out>/cache.jsonl`.
    pub cache: Option<PathBuf>,
    pub out: PathBuf,
    pub seed: u64,
    pub max_in_flight: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            corpus: None,
            annotations: None,
            labels: None,
            endpoint: None,
            endpoint_supports_n: true,
            models: vec!["gpt-3.5-turbo".into(), "gpt-4".into()],
            temperatures: vec![0.0, 0.2, 0.5, 0.7, 1.0],
            role: Toggle::Both,
            icl: Toggle::Off,
            groups: GroupId::ALL.to_vec(),
            samples_zero_shot: 20,
            samples_icl: 4,
            exemplar_source: ExemplarSource::Group,
            cache: None,
            out: PathBuf::from("out"),
            seed: 0,
            max_in_flight: 8,
        }
    }
}

#[derive(Serialize)]
struct HashedSettings<'a> {
    corpus_digest: &'a str,
    models: &'a [String],
    temperatures: Vec<String>,
    role: Toggle,
    icl: Toggle,
    groups: &'a [GroupId],
    samples_zero_shot: u32,
    samples_icl: u32,
    exemplar_source: ExemplarSource,
    seed: u64,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, PipelineError> {
        toml::from_str(text).map_err(|e| PipelineError::Invalid(format!("config: {e}")))
    }

    /// Reads a TOML file; relative paths inside it resolve against its directory.
    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let mut cfg = RunConfig::from_toml(&read_text(path)?)
            .map_err(|e| PipelineError::Invalid(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        let rebase = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        for p in [&mut cfg.corpus, &mut cfg.annotations, &mut cfg.labels, &mut cfg.cache]
            .into_iter()
            .flatten()
        {
            rebase(p);
        }
        rebase(&mut cfg.out);
        Ok(cfg)
    }

    pub fn labels_path(&self) -> PathBuf {
        self.labels.clone().unwrap_or_else(|| self.out.join("labels.jsonl"))
    }

    pub fn cache_path(&self) -> PathBuf {
        self.cache.clone().unwrap_or_else(|| self.out.join("cache.jsonl"))
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: String| Err(PipelineError::Invalid(m));
        if self.models.is_empty() || self.models.iter().any(|m| m.trim().is_empty()) {
            return bad("config: models must be a non-empty list of names".into());
        }
        if self.temperatures.is_empty() {
            return bad("config: temperatures must not be empty".into());
        }
        if let Some(t) = self.temperatures.iter().find(|t| !(0.0..=2.0).contains(*t)) {
            return bad(format!("config: temperature {t} outside [0, 2]"));
        }
        if self.groups.is_empty() {
            return bad("config: groups must not be empty".into());
        }
        let mut seen = std::collections::BTreeSet::new();
        if let Some(g) = self.groups.iter().find(|g| !seen.insert(**g)) {
            return bad(format!("config: group {g} listed twice"));
        }
        if self.samples_zero_shot == 0 || self.samples_icl == 0 {
            return bad("config: sample counts must be positive".into());
        }
        if let Some(p) = self.corpus.as_ref().filter(|p| !p.exists()) {
            return bad(format!("config: corpus {} does not exist", p.display()));
        }
        Ok(())
    }

    pub fn load_corpus(&self) -> Result<Corpus, PipelineError> {
        match &self.corpus {
            Some(p) => Ok(Corpus::parse(&read_text(p)?)?),
            None => Ok(Corpus::bundled()),
        }
    }

    pub fn load_labels(&self, corpus: &Corpus) -> Result<LabelBook, PipelineError> {
        let path = self.labels_path();
        if !path.exists() {
            return Err(PipelineError::Invalid(format!(
                "labels file {} does not exist; run `labels build` first",
                path.display()
            )));
        }
        LabelBook::load(&path, corpus)
    }

    pub fn run_matrix(&self) -> RunMatrix {
        RunMatrix {
            models: self.models.clone(),
            temperatures: self.temperatures.clone(),
            role: self.role,
            icl: self.icl,
            groups: self.groups.clone(),
            samples_zero_shot: self.samples_zero_shot,
            samples_icl: self.samples_icl,
        }
    }

    /// Hash over the experimental settings and the corpus; paths, endpoint
    /// and concurrency are excluded so relocating a run keeps its identity.
    pub fn config_hash(&self, corpus_digest: &str) -> String {
        let settings = HashedSettings {
            corpus_digest,
            models: &self.models,
            temperatures: self.temperatures.iter().map(|t| format!("{t:?}")).collect(),
            role: self.role,
            icl: self.icl,
            groups: &self.groups,
            samples_zero_shot: self.samples_zero_shot,
            samples_icl: self.samples_icl,
            exemplar_source: self.exemplar_source,
            seed: self.seed,
        };
        let json = serde_json::to_vec(&settings).expect("settings serialize");
        hex::encode(Sha256::digest(&json))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_keys_and_defaults() {
        let cfg = RunConfig::from_toml(
            r#"
            models = ["gpt-4"]
            temperatures = [0.0, 1.0]
            role = "both"
            icl = "on"
            groups = ["Education:<=HS", "Gender:F"]
            seed = 7
            "#,
        )
        .unwrap();
        assert_eq!(cfg.models, ["gpt-4"]);
        assert_eq!(cfg.groups, [GroupId::EduHsOrLess, GroupId::GenderF]);
        assert_eq!((cfg.icl, cfg.seed, cfg.samples_zero_shot), (Toggle::On, 7, 20));
        cfg.validate().unwrap();
        assert!(RunConfig::from_toml("bogus = 1").is_err());
    }

    #[test]
    fn validation_rejects_bad_grids() {
        let cfg = RunConfig {
            temperatures: vec![3.0],
            ..RunConfig::default()
        };
        assert!(cfg.validate().is_err());
        let cfg = RunConfig {
            groups: vec![GroupId::GenderF, GroupId::GenderF],
            ..RunConfig::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn hash_ignores_locations_but_not_settings() {
        let a = RunConfig::default();
        let mut b = a.clone();
        b.out = "elsewhere".into();
        b.max_in_flight = 1;
        b.endpoint = Some("http://x".into());
        assert_eq!(a.config_hash("d"), b.config_hash("d"));
        b.seed = 1;
        assert_ne!(a.config_hash("d"), b.config_hash("d"));
        assert_ne!(a.config_hash("d"), a.config_hash("e"));
    }

    #[test]
    fn relative_paths_follow_the_config_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, "out = \"o\"\ncache = \"c.jsonl\"\n").unwrap();
        let cfg = RunConfig::load(&path).unwrap();
        assert_eq!(cfg.out, dir.path().join("o"));
        assert_eq!(cfg.cache_path(), dir.path().join("c.jsonl"));
        assert_eq!(cfg.labels_path(), dir.path().join("o/labels.jsonl"));
    }
}
