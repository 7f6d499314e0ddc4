//! Prompt templates and the parsers for the three response grammars.

mod format;
mod parse;

pub use format::{format_g17, format_repr};
pub use parse::{parse_code_block, parse_diff_and_apply, parse_diff_blocks, parse_prompt_tags, DiffBlock, ParseFailure};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateKind {
    DiverseSeed,
    MutationFull,
    MutationDiff,
    ParadigmShift,
    PeVariant,
    PromptoptMutation,
    PromptoptParadigm,
}

impl TemplateKind {
    pub const ALL: [TemplateKind; 7] = [
        TemplateKind::DiverseSeed,
        TemplateKind::MutationFull,
        TemplateKind::MutationDiff,
        TemplateKind::ParadigmShift,
        TemplateKind::PeVariant,
        TemplateKind::PromptoptMutation,
        TemplateKind::PromptoptParadigm,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TemplateKind::DiverseSeed => "diverse_seed",
            TemplateKind::MutationFull => "mutation_full",
            TemplateKind::MutationDiff => "mutation_diff",
            TemplateKind::ParadigmShift => "paradigm_shift",
            TemplateKind::PeVariant => "pe_variant",
            TemplateKind::PromptoptMutation => "promptopt_mutation",
            TemplateKind::PromptoptParadigm => "promptopt_paradigm",
        }
    }

    pub fn template(self) -> &'static str {
        match self {
            TemplateKind::DiverseSeed => include_str!("../../templates/diverse_seed.txt"),
            TemplateKind::MutationFull => include_str!("../../templates/mutation_full.txt"),
            TemplateKind::MutationDiff => include_str!("../../templates/mutation_diff.txt"),
            TemplateKind::ParadigmShift => include_str!("../../templates/paradigm_shift.txt"),
            TemplateKind::PeVariant => include_str!("../../templates/pe_variant.txt"),
            TemplateKind::PromptoptMutation => include_str!("../../templates/promptopt_mutation.txt"),
            TemplateKind::PromptoptParadigm => include_str!("../../templates/promptopt_paradigm.txt"),
        }
    }

    /// Templates whose artifacts are prompts rather than programs.
    pub fn is_prompt_mode(self) -> bool {
        matches!(self, TemplateKind::PromptoptMutation | TemplateKind::PromptoptParadigm)
    }
}

/// An artifact shown to the model together with its score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scored {
    pub artifact: String,
    pub score: f64,
}

impl Scored {
    pub fn new(artifact: impl Into<String>, score: f64) -> Self {
        Scored {
            artifact: artifact.into(),
            score,
        }
    }
}

/// Runtime values for template placeholders. For `diverse_seed`, `parents` holds the
/// seeds generated so far; for the variant and mutation templates, `parents[0]` is the
/// artifact being modified.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PromptContext {
    pub problem_title: String,
    pub problem_description: String,
    pub function_signature: String,
    pub parents: Vec<Scored>,
    pub inspirations: Vec<Scored>,
    pub feedback: Vec<String>,
    pub meta_advice: Option<String>,
    pub representatives: Vec<Scored>,
    pub n_evaluations: u64,
    pub n_regions: u64,
}

fn code_block(title: &str, item: &Scored) -> String {
    format!("### {title} (Score: {})\n```python\n{}\n```", format_repr(item.score), item.artifact)
}

fn prompt_block(title: &str, item: &Scored) -> String {
    format!(
        "### {title} (Score: {})\n--- PROMPT START ---\n{}\n--- PROMPT END ---",
        format_repr(item.score),
        item.artifact
    )
}

fn numbered<T>(items: &[T], f: impl Fn(usize, &T) -> String) -> Vec<String> {
    items.iter().enumerate().map(|(i, x)| f(i + 1, x)).collect()
}

fn section(heading: &str, blocks: Vec<String>) -> String {
    if blocks.is_empty() {
        return String::new();
    }
    format!("## {heading}\n\n{}\n\n", blocks.join("\n\n"))
}

fn failure_blocks(feedback: &[String], title: &str) -> Vec<String> {
    numbered(feedback, |i, t| format!("### {title} {i}\n```\n{t}\n```"))
}

fn required<'a>(name: &str, value: &'a str) -> Result<&'a str> {
    if value.is_empty() {
        return Err(Error::config(format!("missing placeholder {name}")));
    }
    Ok(value)
}

fn parent<'a>(name: &str, ctx: &'a PromptContext) -> Result<&'a Scored> {
    ctx.parents
        .first()
        .ok_or_else(|| Error::config(format!("missing placeholder {name}")))
}

fn placeholder(kind: TemplateKind, name: &str, ctx: &PromptContext) -> Result<String> {
    let prompt_mode = kind.is_prompt_mode();
    Ok(match name {
        "problem_title" => required(name, &ctx.problem_title)?.to_string(),
        "problem_description" => required(name, &ctx.problem_description)?.to_string(),
        "function_signature" => required(name, &ctx.function_signature)?.to_string(),
        "existing_seeds" => {
            let mut blocks = numbered(&ctx.parents, |i, s| code_block(&format!("Seed {i}"), s));
            blocks.extend(failure_blocks(&ctx.feedback, "Failed Attempt"));
            if blocks.is_empty() {
                "None yet.".to_string()
            } else {
                blocks.join("\n\n")
            }
        }
        "parent_code" | "parent_prompt" | "base_code" => parent(name, ctx)?.artifact.clone(),
        "parent_score" | "base_score" => format_repr(parent(name, ctx)?.score),
        "inspirations_section" if prompt_mode => section(
            "Other Strong Prompts",
            numbered(&ctx.inspirations, |i, s| prompt_block(&format!("Prompt {i}"), s)),
        ),
        "inspirations_section" => section(
            "Inspiration Programs",
            numbered(&ctx.inspirations, |i, s| code_block(&format!("Inspiration {i}"), s)),
        ),
        "feedback_section" => section("Feedback From Previous Attempts", failure_blocks(&ctx.feedback, "Failure")),
        "meta_advice_section" => match ctx.meta_advice.as_deref() {
            Some(a) if !a.trim().is_empty() => format!("## Meta-Advice\n{a}\n\n"),
            _ => String::new(),
        },
        "representative_solutions" | "representatives" => {
            if ctx.representatives.is_empty() {
                return Err(Error::config(format!("missing placeholder {name}")));
            }
            if prompt_mode {
                numbered(&ctx.representatives, |i, s| prompt_block(&format!("Representative {i}"), s)).join("\n\n")
            } else {
                numbered(&ctx.representatives, |i, s| code_block(&format!("Region {i}"), s)).join("\n\n")
            }
        }
        "n_evaluations" => ctx.n_evaluations.to_string(),
        "n_regions" => ctx.n_regions.to_string(),
        other => return Err(Error::config(format!("unknown placeholder {other}"))),
    })
}

/// Instantiate the template for `kind`. Placeholders are `{name}` or `{name:.17g}`.
pub fn render_template(kind: TemplateKind, ctx: &PromptContext) -> Result<String> {
    let template = kind.template();
    let mut out = String::with_capacity(template.len() * 2);
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        let close = after
            .find('}')
            .ok_or_else(|| Error::config(format!("unterminated placeholder in template {}", kind.name())))?;
        let (name, spec) = match after[..close].split_once(':') {
            Some((n, s)) => (n, Some(s)),
            None => (&after[..close], None),
        };
        match spec {
            None => out.push_str(&placeholder(kind, name, ctx)?),
            Some(".17g") => {
                let p = parent(name, ctx)?;
                out.push_str(&format_g17(p.score));
            }
            Some(other) => {
                return Err(Error::config(format!("unsupported format spec {other:?} for {name}")));
            }
        }
        rest = &after[close + 1..];
    }
    out.push_str(rest);
    Ok(out)
}

/// Names of the placeholders `kind` uses, in order of first appearance.
pub fn placeholders(kind: TemplateKind) -> Vec<&'static str> {
    let mut names = Vec::new();
    let mut rest = kind.template();
    while let Some(open) = rest.find('{') {
        let after = &rest[open + 1..];
        let Some(close) = after.find('}') else { break };
        let name = after[..close].split(':').next().unwrap_or_default();
        if !names.contains(&name) {
            names.push(name);
        }
        rest = &after[close + 1..];
    }
    names
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ctx() -> PromptContext {
        PromptContext {
            problem_title: "Toy".into(),
            problem_description: "Order the jobs.".into(),
            function_signature: "def solve(jobs):".into(),
            parents: vec![Scored::new("def solve(jobs):\n    return jobs", 0.5)],
            representatives: vec![Scored::new("A", 1.0), Scored::new("B", 2.0)],
            n_evaluations: 10,
            n_regions: 2,
            ..Default::default()
        }
    }

    #[test]
    fn every_template_renders_without_residual_placeholders() {
        for kind in TemplateKind::ALL {
            let text = render_template(kind, &ctx()).unwrap();
            assert!(!text.contains("{problem") && !text.contains("_section}"), "{}", kind.name());
        }
    }

    #[test]
    fn required_placeholders_are_named() {
        let mut c = ctx();
        c.parents.clear();
        let err = render_template(TemplateKind::PeVariant, &c).unwrap_err().to_string();
        assert!(err.contains("missing placeholder base_score"), "{err}");
        let mut c = ctx();
        c.function_signature.clear();
        let err = render_template(TemplateKind::DiverseSeed, &c).unwrap_err().to_string();
        assert!(err.contains("function_signature"), "{err}");
    }

    #[test]
    fn optional_sections_collapse() {
        let text = render_template(TemplateKind::MutationFull, &ctx()).unwrap();
        assert!(text.contains("```\n\nWrite an improved version of the function."));
        assert!(text.contains("DO NOT include any explanation"));
        let mut c = ctx();
        c.meta_advice = Some("Prefer heaps.".into());
        let text = render_template(TemplateKind::MutationFull, &c).unwrap();
        assert!(text.contains("## Meta-Advice\nPrefer heaps.\n\nWrite an improved"));
    }

    #[test]
    fn seed_prompt_lists_prior_seeds() {
        let text = render_template(TemplateKind::DiverseSeed, &ctx()).unwrap();
        let at = text.find("Existing Seeds").unwrap();
        assert!(text[at..].contains("### Seed 1 (Score: 0.5)"));
    }

    #[test]
    fn placeholder_listing() {
        assert_eq!(
            placeholders(TemplateKind::PromptoptParadigm),
            vec!["problem_description", "representatives"]
        );
    }
}
