//! Persona system messages, extraction instructions and in-context exemplar prompts.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cohort::{GroupId, GroupLabelSet};
use crate::corpus::{Corpus, CorpusError};

/// Instruction prefix for plain prompts; the sentence follows the trailing space.
pub const INSTRUCTION: &str = "Given the following sentence, please identify and enumerate all the medical terms present in a Python list format without any other descriptions: ";

/// Instruction line heading an in-context prompt.
pub const ICL_INSTRUCTION: &str = "Given the following sentence, please identify and enumerate all the medical terms present in a Python list format without any other descriptions.";

pub const FOLD_COUNT: usize = 5;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PromptError {
    #[error("cannot build fold plan: {0} sentences give fewer than 2 folds")]
    TooFewFolds(usize),
    #[error("sentence {0} is not assigned to any fold")]
    Unassigned(u32),
    #[error("query sentence {0} appears in its own exemplar fold")]
    QueryInExemplars(u32),
    #[error("in-context prompt needs both a fold plan and a label set")]
    MissingIclInputs,
    #[error(transparent)]
    Corpus(#[from] CorpusError),
}

/// Role-play system message for a group, verbatim.
pub fn persona_text(group: GroupId) -> &'static str {
    use GroupId::*;
    match group {
        EduHsOrLess => "Your highest level of education is up to a high school diploma or equivalent. This encompasses scenarios from having no formal schooling or partial schooling, to completing the standard education required before college or university, without pursuing further formal education.",
        EduBachelor => "Your highest level of education is a Bachelor's degree from a college or university. You've undergone tertiary education and have specialized in a particular field or subject area.",
        EduMaster => "Your highest level of education is a Master's degree. You've not only completed your Bachelor's degree but have also undertaken advanced studies in a specific field, gaining deeper knowledge and perhaps conducting some level of research.",
        HlNever => "You less than rarely engaged with health literacy materials and are unfamiliar with basic health information and medical terms.",
        HlRarely => "You rarely come across health literacy materials and only occasionally glance at health-related information.",
        HlSometimesOrMore => "Your interaction with health literacy materials is frequent, indicating that you engage with them sometimes, often, or always in your everyday life.",
        GenderF => "You are a woman. You identify your gender as a female.",
        GenderM => "You are a man. You identify your gender as a male.",
        Age18to24 => "You are a person in the age range of 18-24.",
        Age25to34 => "You are a person in the age range of 25-34.",
        Age35to44 => "You are a person in the age range of 35-44.",
        Age45to54 => "You are a person in the age range of 45-54.",
        Age55to64 => "You are a person in the age range of 55-64.",
        Age65Plus => "You are a person above the age of 65.",
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PersonaMessage {
    pub group: GroupId,
    pub text: String,
}

pub fn persona_for(group: GroupId) -> PersonaMessage {
    PersonaMessage {
        group,
        text: persona_text(group).to_string(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub seed: u64,
    pub folds: Vec<Vec<u32>>,
    /// `exemplar_map[i]` is the fold supplying exemplars to queries in fold `i`.
    pub exemplar_map: Vec<usize>,
}

impl FoldPlan {
    pub fn fold_of(&self, sentence_id: u32) -> Option<usize> {
        self.folds.iter().position(|f| f.contains(&sentence_id))
    }

    pub fn exemplars_for(&self, sentence_id: u32) -> Result<&[u32], PromptError> {
        let fold = self
            .fold_of(sentence_id)
            .ok_or(PromptError::Unassigned(sentence_id))?;
        Ok(&self.folds[self.exemplar_map[fold]])
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("fold plan serializes")
    }
}

/// Seeded shuffle of sentence ids cut into five folds of `ceil(S/5)`;
/// each fold draws exemplars from the next one.
pub fn build_fold_plan(corpus: &Corpus, seed: u64) -> Result<FoldPlan, PromptError> {
    let mut ids: Vec<u32> = corpus.sentences().iter().map(|s| s.id).collect();
    let size = ids.len().div_ceil(FOLD_COUNT);
    let fold_count = ids.len().div_ceil(size.max(1));
    if fold_count < 2 {
        return Err(PromptError::TooFewFolds(ids.len()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ids.shuffle(&mut rng);
    let folds: Vec<Vec<u32>> = ids
        .chunks(size)
        .map(|c| {
            let mut f = c.to_vec();
            f.sort_unstable();
            f
        })
        .collect();
    let exemplar_map = (0..folds.len()).map(|i| (i + 1) % folds.len()).collect();
    Ok(FoldPlan {
        seed,
        folds,
        exemplar_map,
    })
}

/// Python `repr` of a string, as a model would see it in a printed list.
pub fn python_str_repr(s: &str) -> String {
    let quote = if s.contains('\'') && !s.contains('"') { '"' } else { '\'' };
    let mut out = String::with_capacity(s.len() + 2);
    out.push(quote);
    for c in s.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\t' => out.push_str("\\t"),
            c if c == quote => {
                out.push('\\');
                out.push(c);
            }
            c => out.push(c),
        }
    }
    out.push(quote);
    out
}

pub fn python_list_repr<S: AsRef<str>>(items: &[S]) -> String {
    let parts: Vec<String> = items.iter().map(|s| python_str_repr(s.as_ref())).collect();
    format!("[{}]", parts.join(", "))
}

/// Surfaces of units labeled jargon in one sentence, in order of occurrence.
pub fn gold_terms(
    corpus: &Corpus,
    labels: &GroupLabelSet,
    sentence_id: u32,
) -> Result<Vec<String>, PromptError> {
    Ok(corpus
        .sentence_units(sentence_id)?
        .iter()
        .filter(|u| labels.is_jargon(u.id))
        .map(|u| u.surface.clone())
        .collect())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Exemplar {
    pub sentence_id: u32,
    pub text: String,
    pub gold: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptSpec {
    pub persona: Option<PersonaMessage>,
    pub exemplars: Vec<Exemplar>,
    pub query_sentence_id: u32,
    pub rendered_messages: Vec<ChatMessage>,
}

/// Optional in-context inputs: where exemplars come from and who labeled them.
#[derive(Debug, Clone, Copy)]
pub struct IclContext<'a> {
    pub fold_plan: &'a FoldPlan,
    pub labels: &'a GroupLabelSet,
}

pub fn render_prompt(
    corpus: &Corpus,
    sentence_id: u32,
    persona: Option<&PersonaMessage>,
    icl: Option<IclContext<'_>>,
) -> Result<PromptSpec, PromptError> {
    let query = corpus.sentence(sentence_id)?.plain_text();
    let mut exemplars = Vec::new();
    let user = match icl {
        None => format!("{INSTRUCTION}{query}"),
        Some(ctx) => {
            let fold = ctx.fold_plan.exemplars_for(sentence_id)?;
            if fold.contains(&sentence_id) {
                return Err(PromptError::QueryInExemplars(sentence_id));
            }
            let mut body = format!("{ICL_INSTRUCTION}\n\n");
            for &ex in fold {
                let text = corpus.sentence(ex)?.plain_text();
                let gold = gold_terms(corpus, ctx.labels, ex)?;
                body.push_str(&format!("Input: {text}\nOutput: {}\n\n", python_list_repr(&gold)));
                exemplars.push(Exemplar {
                    sentence_id: ex,
                    text,
                    gold,
                });
            }
            body.push_str(&format!("Input: {query}\nOutput: "));
            body
        }
    };
    let mut rendered_messages = Vec::with_capacity(2);
    if let Some(p) = persona {
        rendered_messages.push(ChatMessage {
            role: Role::System,
            content: p.text.clone(),
        });
    }
    rendered_messages.push(ChatMessage {
        role: Role::User,
        content: user,
    });
    Ok(PromptSpec {
        persona: persona.cloned(),
        exemplars,
        query_sentence_id: sentence_id,
        rendered_messages,
    })
}

/// Distinct sentence ids referenced as exemplars anywhere in a plan.
pub fn exemplar_sentences(plan: &FoldPlan) -> BTreeSet<u32> {
    plan.exemplar_map
        .iter()
        .flat_map(|&f| plan.folds[f].iter().copied())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cohort::LabelScope;
    use crate::corpus::UnitId;

    #[test]
    fn persona_table_is_complete_and_distinct() {
        let texts: BTreeSet<&str> = GroupId::ALL.iter().map(|g| persona_text(*g)).collect();
        assert_eq!(texts.len(), 14);
        assert!(texts.iter().all(|t| !t.is_empty()));
        assert!(persona_text(GroupId::EduHsOrLess)
            .starts_with("Your highest level of education is up to a high school diploma or equivalent. "));
        assert_eq!(
            persona_text(GroupId::GenderM),
            "You are a man. You identify your gender as a male."
        );
        assert_eq!(persona_text(GroupId::Age65Plus), "You are a person above the age of 65.");
    }

    #[test]
    fn fold_plan_partitions_twenty_sentences() {
        let corpus = Corpus::bundled();
        let plan = build_fold_plan(&corpus, 0).unwrap();
        assert_eq!(plan.folds.len(), 5);
        assert!(plan.folds.iter().all(|f| f.len() == 4));
        assert_eq!(plan.exemplar_map, vec![1, 2, 3, 4, 0]);
        assert_eq!(plan, build_fold_plan(&corpus, 0).unwrap());
        for id in 1..=20u32 {
            let hits = plan.folds.iter().filter(|f| f.contains(&id)).count();
            assert_eq!(hits, 1, "sentence {id}");
        }
        assert_ne!(plan.folds, build_fold_plan(&corpus, 1).unwrap().folds);
    }

    #[test]
    fn fold_plan_small_corpora() {
        let one = Corpus::parse("a .").unwrap();
        assert_eq!(build_fold_plan(&one, 3), Err(PromptError::TooFewFolds(1)));
        let six = Corpus::parse("a\nb\nc\nd\ne\nf").unwrap();
        let plan = build_fold_plan(&six, 3).unwrap();
        assert_eq!(plan.folds.len(), 3);
        assert!(plan.folds.iter().all(|f| f.len() == 2));
    }

    #[test]
    fn plain_prompt_is_instruction_plus_sentence() {
        let corpus = Corpus::bundled();
        let p = render_prompt(&corpus, 17, None, None).unwrap();
        assert_eq!(p.rendered_messages.len(), 1);
        let content = &p.rendered_messages[0].content;
        assert!(content.starts_with(INSTRUCTION));
        assert!(content.ends_with("agrees with the IV steroids and nebulizers ."));
        assert!(content.contains("a pulmonary embolism ,"));
        assert!(!content.contains('[') && !content.contains(']'));
    }

    #[test]
    fn persona_prompt_has_system_then_user() {
        let corpus = Corpus::bundled();
        let persona = persona_for(GroupId::EduBachelor);
        let p = render_prompt(&corpus, 3, Some(&persona), None).unwrap();
        assert_eq!(p.rendered_messages[0].role, Role::System);
        assert_eq!(p.rendered_messages[0].content, persona_text(GroupId::EduBachelor));
        assert_eq!(p.rendered_messages[1].role, Role::User);
    }

    #[test]
    fn exemplar_output_line_matches_list_format() {
        let corpus = Corpus::bundled();
        let wanted = ["distal anastomosis", "anterior tibial artery", "posterior tibial artery"];
        let votes = (0..corpus.unit_count())
            .map(|i| u32::from(wanted.contains(&corpus.unit(UnitId(i)).surface.as_str()) && corpus.unit(UnitId(i)).sentence_id == 1))
            .collect();
        let labels = GroupLabelSet::from_votes(LabelScope::Pooled, 1, votes);
        let plan = FoldPlan {
            seed: 0,
            folds: vec![vec![1], (2..=20).collect()],
            exemplar_map: vec![1, 0],
        };
        let p = render_prompt(&corpus, 2, None, Some(IclContext { fold_plan: &plan, labels: &labels })).unwrap();
        let content = &p.rendered_messages[0].content;
        assert!(content.starts_with(&format!("{ICL_INSTRUCTION}\n\nInput: This showed good patency")));
        assert!(content.contains(
            "\nOutput: ['distal anastomosis', 'anterior tibial artery', 'posterior tibial artery']\n\n"
        ));
        assert!(content.ends_with("Input: FINDINGS : There are at least 3 distinct areas of restricted diffusion involving the left occipital pole , the left medial temporal lobe , and the left basal ganglia region possibly overlying the posterior limb of the left internal capsule .\nOutput: "));
        assert_eq!(p.exemplars.len(), 1);
    }

    #[test]
    fn query_in_own_fold_is_rejected() {
        let corpus = Corpus::bundled();
        let labels = GroupLabelSet::from_votes(LabelScope::Pooled, 1, vec![0; corpus.unit_count()]);
        let plan = FoldPlan {
            seed: 0,
            folds: vec![(1..=10).collect(), (11..=20).collect()],
            exemplar_map: vec![0, 0],
        };
        let ctx = IclContext { fold_plan: &plan, labels: &labels };
        assert_eq!(
            render_prompt(&corpus, 4, None, Some(ctx)),
            Err(PromptError::QueryInExemplars(4))
        );
    }

    #[test]
    fn python_repr_quoting() {
        assert_eq!(python_str_repr("a b"), "'a b'");
        assert_eq!(python_str_repr("AVM 's"), "\"AVM 's\"");
        assert_eq!(python_str_repr("a'b\"c"), "'a\\'b\"c'");
        assert_eq!(python_list_repr::<&str>(&[]), "[]");
    }
}
