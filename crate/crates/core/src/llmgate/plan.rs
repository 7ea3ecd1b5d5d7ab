use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{CompletionRequest, GateError, SamplingConfig};
use crate::cohort::{GroupId, GroupLabelSet};
use crate::corpus::Corpus;
use crate::extraction::ConfigDescriptor;
use crate::promptkit::{persona_for, render_prompt, FoldPlan, IclContext};

/// Which settings of a boolean experiment axis to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Toggle {
    Off,
    On,
    #[default]
    Both,
}

impl Toggle {
    pub fn values(self) -> &'static [bool] {
        match self {
            Toggle::Off => &[false],
            Toggle::On => &[true],
            Toggle::Both => &[false, true],
        }
    }
}

pub type RoleAxis = Toggle;

/// Where exemplar gold lists come from when role-play and ICL are combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ExemplarSource {
    /// The persona's own group labels.
    #[default]
    Group,
    /// Majority over the whole cohort.
    Pooled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMatrix {
    pub models: Vec<String>,
    pub temperatures: Vec<f64>,
    pub role: Toggle,
    pub icl: Toggle,
    pub groups: Vec<GroupId>,
    pub samples_zero_shot: u32,
    pub samples_icl: u32,
}

impl RunMatrix {
    /// Samples per request for a cell; temperature 0 always draws one.
    pub fn samples_for(&self, temperature: f64, icl: bool) -> u32 {
        if temperature == 0.0 {
            1
        } else if icl {
            self.samples_icl
        } else {
            self.samples_zero_shot
        }
    }

    /// Grid cells in plan order: model, temperature, ICL, then no-role before personas.
    pub fn cells(&self) -> Vec<ConfigDescriptor> {
        let mut out = Vec::new();
        for model in &self.models {
            for &t in &self.temperatures {
                for &icl in self.icl.values() {
                    for &role in self.role.values() {
                        if role {
                            for g in &self.groups {
                                out.push(ConfigDescriptor {
                                    model: model.clone(),
                                    temperature: Some(t),
                                    role: Some(*g),
                                    icl,
                                });
                            }
                        } else {
                            out.push(ConfigDescriptor {
                                model: model.clone(),
                                temperature: Some(t),
                                role: None,
                                icl,
                            });
                        }
                    }
                }
            }
        }
        out
    }
}

/// Exemplar inputs for ICL cells.
#[derive(Debug, Clone, Copy)]
pub struct IclLabels<'a> {
    pub fold_plan: &'a FoldPlan,
    pub pooled: &'a GroupLabelSet,
    pub groups: &'a BTreeMap<GroupId, GroupLabelSet>,
    pub source: ExemplarSource,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlannedRequest {
    pub cell: ConfigDescriptor,
    pub sentence_id: u32,
    pub request: CompletionRequest,
}

pub fn plan_requests(
    matrix: &RunMatrix,
    corpus: &Corpus,
    icl_labels: Option<IclLabels<'_>>,
) -> Result<Vec<PlannedRequest>, GateError> {
    let empty = |axis: &str| Err(GateError::Config(format!("run matrix axis '{axis}' is empty")));
    if matrix.models.is_empty() {
        return empty("models");
    }
    if matrix.temperatures.is_empty() {
        return empty("temperatures");
    }
    if matrix.role != Toggle::Off && matrix.groups.is_empty() {
        return empty("groups");
    }
    let mut out = Vec::new();
    for cell in matrix.cells() {
        let t = cell.temperature.expect("grid cells carry a temperature");
        let config = SamplingConfig::new(cell.model.clone(), t, matrix.samples_for(t, cell.icl))?;
        let persona = cell.role.map(persona_for);
        let icl_ctx = if cell.icl {
            let l = icl_labels.ok_or_else(|| {
                GateError::Config("ICL cells need a fold plan and gold labels".into())
            })?;
            let labels = match (cell.role, l.source) {
                (Some(g), ExemplarSource::Group) => l
                    .groups
                    .get(&g)
                    .ok_or_else(|| GateError::Config(format!("no labels for group {g}")))?,
                _ => l.pooled,
            };
            Some(IclContext {
                fold_plan: l.fold_plan,
                labels,
            })
        } else {
            None
        };
        for sentence in corpus.sentences() {
            let prompt = render_prompt(corpus, sentence.id, persona.as_ref(), icl_ctx)
                .map_err(|e| GateError::Config(e.to_string()))?;
            out.push(PlannedRequest {
                cell: cell.clone(),
                sentence_id: sentence.id,
                request: CompletionRequest::new(config.clone(), prompt.rendered_messages),
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cohort::LabelScope;
    use crate::promptkit::build_fold_plan;

    fn matrix(temps: &[f64], role: Toggle, icl: Toggle, groups: &[GroupId]) -> RunMatrix {
        RunMatrix {
            models: vec!["gpt-3.5-turbo".into()],
            temperatures: temps.to_vec(),
            role,
            icl,
            groups: groups.to_vec(),
            samples_zero_shot: 20,
            samples_icl: 4,
        }
    }

    #[test]
    fn smallest_grid() {
        let corpus = Corpus::bundled();
        let plan = plan_requests(&matrix(&[0.0], Toggle::Off, Toggle::Off, &[]), &corpus, None).unwrap();
        assert_eq!(plan.len(), 20);
        assert!(plan.iter().all(|p| p.request.config.n == 1));
    }

    #[test]
    fn role_grid_counts() {
        let corpus = Corpus::bundled();
        let plan = plan_requests(&matrix(&[1.0], Toggle::Both, Toggle::Off, &GroupId::ALL), &corpus, None).unwrap();
        // enumerate: one no-role cell plus 14 personas, each over 20 sentences
        let mut expected = 0;
        for _sentence in 1..=20 {
            for _setting in std::iter::once(None).chain(GroupId::ALL.iter().map(Some)) {
                expected += 1;
            }
        }
        assert_eq!(plan.len(), expected);
        assert_eq!(plan.len(), 300);
        assert!(plan.iter().all(|p| p.request.config.n == 20));
        let keys: std::collections::BTreeSet<_> = plan.iter().map(|p| &p.request.request_key).collect();
        assert_eq!(keys.len(), 300);
    }

    #[test]
    fn icl_cells_use_four_samples_and_exemplars() {
        let corpus = Corpus::bundled();
        let fold_plan = build_fold_plan(&corpus, 7).unwrap();
        let pooled = GroupLabelSet::from_votes(LabelScope::Pooled, 1, vec![0; corpus.unit_count()]);
        let groups = BTreeMap::new();
        let labels = IclLabels { fold_plan: &fold_plan, pooled: &pooled, groups: &groups, source: ExemplarSource::Pooled };
        let plan = plan_requests(&matrix(&[1.0], Toggle::Off, Toggle::On, &[]), &corpus, Some(labels)).unwrap();
        assert_eq!(plan.len(), 20);
        assert!(plan.iter().all(|p| p.request.config.n == 4 && p.cell.icl));
        assert!(plan[0].request.messages[0].content.matches("Input: ").count() == 5);
        assert!(plan_requests(&matrix(&[1.0], Toggle::Off, Toggle::On, &[]), &corpus, None).is_err());
    }

    #[test]
    fn empty_axes_rejected() {
        let corpus = Corpus::bundled();
        assert!(plan_requests(&matrix(&[], Toggle::Off, Toggle::Off, &[]), &corpus, None).is_err());
        assert!(plan_requests(&matrix(&[0.5], Toggle::On, Toggle::Off, &[]), &corpus, None).is_err());
        let mut m = matrix(&[0.5], Toggle::Off, Toggle::Off, &[]);
        m.models.clear();
        assert!(plan_requests(&m, &corpus, None).is_err());
    }

    #[test]
    fn full_zero_shot_grid_size() {
        let corpus = Corpus::bundled();
        let mut m = matrix(&[0.0, 0.2, 0.5, 0.7, 1.0], Toggle::Both, Toggle::Off, &GroupId::ALL);
        m.models.push("gpt-4".into());
        assert_eq!(plan_requests(&m, &corpus, None).unwrap().len(), 3000);
    }
}
