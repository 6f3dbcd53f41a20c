//! Rule-based context prompt construction.
//!
//! A prompt has four sections, always in this order: task objective,
//! category definitions, analysis guidelines, and output format. Category
//! descriptions come from the shared registry in [`crate::labels`].

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labels;

/// The slot filled by the model in the person template.
pub const CATEGORY_SLOT: &str = "[Selected Category]";
/// Leading part of the conclusion sentence when a person is present.
pub const PERSON_PREFIX: &str = "The facial expression of the person in the image is '";
/// Conclusion sentence when nobody is in the image (without final period).
pub const NO_PERSON_SENTENCE: &str = "There is no one in the image";

const SECTION_HEADERS: [&str; 4] = [
    "Task Objective:",
    "Category Definitions:",
    "Analysis Guidelines:",
    "Output Format:",
];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoryDefinition {
    pub name: String,
    pub description: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutputTemplates {
    pub no_person: String,
    pub person: String,
}

impl Default for OutputTemplates {
    fn default() -> Self {
        Self {
            no_person: format!(
                "Analysis: [Provide a detailed analysis of the image, noting the absence of any person.] Conclusion: {NO_PERSON_SENTENCE}."
            ),
            person: format!(
                "Analysis: [Provide a detailed analysis of the facial expression, describing the features that led to your conclusion.] Conclusion: {PERSON_PREFIX}{CATEGORY_SLOT}'."
            ),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PromptSpec {
    pub task_objective: String,
    pub categories: Vec<CategoryDefinition>,
    pub guidelines: String,
    pub output_templates: OutputTemplates,
}

impl PromptSpec {
    /// Builds the standard spec for registered categories, in the order
    /// given.
    pub fn for_categories(names: &[String]) -> Result<Self> {
        let categories = names
            .iter()
            .map(|n| {
                labels::description(n)
                    .map(|description| CategoryDefinition {
                        name: n.clone(),
                        description,
                    })
                    .ok_or_else(|| Error::Contract(format!("no registered description for {n:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        let spec = Self {
            task_objective: task_objective(names.len()),
            categories,
            guidelines: "Carefully examine the image to identify visible facial features like the eyes, eyebrows, mouth, and overall facial tension. \
                         Relate each feature to the basic emotions it signals and determine how those signals combine before choosing a category."
                .into(),
            output_templates: OutputTemplates::default(),
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn category_names(&self) -> Vec<String> {
        self.categories.iter().map(|c| c.name.clone()).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.task_objective.trim().is_empty() || self.guidelines.trim().is_empty() {
            return Err(Error::Contract(
                "task objective and guidelines must be non-empty".into(),
            ));
        }
        if self.categories.len() < 2 {
            return Err(Error::Contract("a prompt needs at least two categories".into()));
        }
        let mut seen = HashSet::new();
        for c in &self.categories {
            if c.name.trim().is_empty() || c.description.trim().is_empty() {
                return Err(Error::Contract(format!(
                    "category {:?} needs a name and description",
                    c.name
                )));
            }
            if !seen.insert(crate::parser::normalize(&c.name)) {
                return Err(Error::Contract(format!("duplicate category {:?}", c.name)));
            }
        }
        let t = &self.output_templates;
        if !t.no_person.contains(NO_PERSON_SENTENCE) {
            return Err(Error::Contract(
                "no-person template lacks the no-person sentence".into(),
            ));
        }
        if !t.person.contains(&format!("{PERSON_PREFIX}{CATEGORY_SLOT}'")) {
            return Err(Error::Contract("person template lacks the conclusion frame".into()));
        }
        Ok(())
    }
}

/// "Your task is ... into one of the seven predefined categories."
pub fn task_objective(count: usize) -> String {
    format!(
        "Your task is to analyze the facial expression of the person(s) in the provided image and classify it into one of the {} predefined categories.",
        count_word(count)
    )
}

fn count_word(n: usize) -> String {
    const WORDS: [&str; 21] = [
        "zero",
        "one",
        "two",
        "three",
        "four",
        "five",
        "six",
        "seven",
        "eight",
        "nine",
        "ten",
        "eleven",
        "twelve",
        "thirteen",
        "fourteen",
        "fifteen",
        "sixteen",
        "seventeen",
        "eighteen",
        "nineteen",
        "twenty",
    ];
    WORDS.get(n).map_or_else(|| n.to_string(), |w| w.to_string())
}

/// Renders the prompt text.
pub fn build_prompt(spec: &PromptSpec) -> Result<String> {
    spec.validate()?;
    let mut out = String::new();
    out.push_str(SECTION_HEADERS[0]);
    out.push('\n');
    out.push_str(spec.task_objective.trim());
    out.push_str("\n\n");
    out.push_str(SECTION_HEADERS[1]);
    out.push('\n');
    for c in &spec.categories {
        out.push_str(&format!("- {}: {}\n", c.name, c.description.trim()));
    }
    out.push('\n');
    out.push_str(SECTION_HEADERS[2]);
    out.push('\n');
    out.push_str(spec.guidelines.trim());
    out.push_str("\n\n");
    out.push_str(SECTION_HEADERS[3]);
    out.push('\n');
    out.push_str(&format!(
        "- If no person is present: \"{}\"\n",
        spec.output_templates.no_person
    ));
    out.push_str(&format!(
        "- If a person is present: \"{}\"\n",
        spec.output_templates.person
    ));
    Ok(out)
}

/// Section headers in rendering order.
pub fn section_headers() -> &'static [&'static str; 4] {
    &SECTION_HEADERS
}

/// A prompt paired with the image it should accompany.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InferenceRequest {
    pub image_ref: String,
    pub prompt: String,
}

impl InferenceRequest {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("request serializes")
    }
}

pub fn attach(prompt: &str, image_ref: &str) -> Result<InferenceRequest> {
    if prompt.trim().is_empty() {
        return Err(Error::Contract("cannot attach an empty prompt".into()));
    }
    Ok(InferenceRequest {
        image_ref: image_ref.to_string(),
        prompt: prompt.to_string(),
    })
}

/// A response following the person template for `category`.
pub fn person_response(analysis: &str, category: &str) -> String {
    format!("Analysis: {analysis}\nConclusion: {PERSON_PREFIX}{category}'.")
}

/// A response following the no-person template.
pub fn no_person_response(analysis: &str) -> String {
    format!("Analysis: {analysis}\nConclusion: {NO_PERSON_SENTENCE}.")
}
