//! Versioned prompt templates.
//!
//! Templates live as plain-text assets compiled into the binary; each has a
//! stable id that is recorded in episode logs so a log always names the
//! exact prompt text that produced it. Placeholders use `{{name}}` syntax
//! and every placeholder must be supplied at render time.

use thiserror::Error;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PromptTemplate {
    pub id: &'static str,
    pub text: &'static str,
}

pub const SYSTEM: PromptTemplate =
    PromptTemplate { id: "system.v1", text: include_str!("../assets/prompts/system.v1.txt") };
pub const INTENTIONS: PromptTemplate = PromptTemplate {
    id: "intentions.v1",
    text: include_str!("../assets/prompts/intentions.v1.txt"),
};
pub const PLAN: PromptTemplate =
    PromptTemplate { id: "plan.v1", text: include_str!("../assets/prompts/plan.v1.txt") };
pub const CHECK: PromptTemplate =
    PromptTemplate { id: "check.v1", text: include_str!("../assets/prompts/check.v1.txt") };
pub const ACTION: PromptTemplate =
    PromptTemplate { id: "action.v1", text: include_str!("../assets/prompts/action.v1.txt") };
pub const REFLECT: PromptTemplate =
    PromptTemplate { id: "reflect.v1", text: include_str!("../assets/prompts/reflect.v1.txt") };

pub const ALL: [PromptTemplate; 6] = [SYSTEM, INTENTIONS, PLAN, CHECK, ACTION, REFLECT];

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PromptError {
    #[error("template {template} has unresolved placeholder {{{{{name}}}}}")]
    Unresolved { template: String, name: String },
}

/// Substitute `{{key}}` placeholders. Every placeholder in the template
/// must have a value; extra values are ignored.
pub fn render(template: &PromptTemplate, vars: &[(&str, &str)]) -> Result<String, PromptError> {
    let mut out = template.text.to_string();
    for (key, value) in vars {
        out = out.replace(&format!("{{{{{key}}}}}"), value);
    }
    if let Some(start) = out.find("{{") {
        if let Some(rel_end) = out[start..].find("}}") {
            let name = out[start + 2..start + rel_end].to_string();
            return Err(PromptError::Unresolved { template: template.id.to_string(), name });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_template_has_id_and_text() {
        for t in ALL {
            assert!(t.id.ends_with(".v1"), "{} should carry a version suffix", t.id);
            assert!(!t.text.trim().is_empty(), "{} is empty", t.id);
        }
        let mut ids: Vec<&str> = ALL.iter().map(|t| t.id).collect();
        ids.sort_unstable();
        ids.dedup();
        assert_eq!(ids.len(), ALL.len(), "template ids must be unique");
    }

    #[test]
    fn render_substitutes_all_placeholders() {
        let out = render(
            &CHECK,
            &[("scene", "SCENE"), ("plan", "PLAN"), ("intentions", "INTENTIONS")],
        )
        .unwrap();
        assert!(out.contains("SCENE"));
        assert!(out.contains("Active plan: PLAN"));
        assert!(!out.contains("{{"));
    }

    #[test]
    fn render_rejects_missing_placeholder() {
        let err = render(&CHECK, &[("scene", "SCENE"), ("plan", "PLAN")]).unwrap_err();
        assert_eq!(
            err,
            PromptError::Unresolved { template: "check.v1".into(), name: "intentions".into() }
        );
    }

    #[test]
    fn system_prompt_names_all_five_actions() {
        for name in ["TurnLeft", "Idle", "TurnRight", "Accelerate", "Decelerate"] {
            assert!(SYSTEM.text.contains(name), "system prompt must mention {name}");
        }
    }
}
