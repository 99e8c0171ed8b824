//! Template texts shipped in `crates/core/templates/`. Bump
//! [`TEMPLATE_VERSION`] whenever any of them changes.

use crate::model::{Adherence, ManifestEntry};

pub const TEMPLATE_VERSION: u32 = 1;

pub(crate) struct Template {
    pub name: &'static str,
    pub text: &'static str,
}

macro_rules! template {
    ($ident:ident, $name:literal) => {
        pub(crate) const $ident: Template = Template {
            name: $name,
            text: include_str!(concat!("../../templates/", $name, ".txt")),
        };
    };
}

template!(SYSTEM_SIMULATE, "system_simulate");
template!(ADHERENCE_LOOSE, "adherence_loose");
template!(ADHERENCE_MODERATE, "adherence_moderate");
template!(ADHERENCE_STRICT, "adherence_strict");
template!(INSTRUCTION_SIMULATE, "instruction_simulate");
template!(INSTRUCTION_NUDGE, "instruction_nudge");
template!(SYSTEM_POLISH, "system_polish");
template!(INSTRUCTION_POLISH, "instruction_polish");
template!(SYSTEM_SITUATION, "system_situation");
template!(INSTRUCTION_SITUATION, "instruction_situation");
template!(SYSTEM_PROSE, "system_prose");
template!(INSTRUCTION_PROSE, "instruction_prose");
template!(SYSTEM_CONDENSE, "system_condense");
template!(INSTRUCTION_CONDENSE, "instruction_condense");

impl Template {
    pub fn source(&self) -> String {
        format!("template:{}@v{TEMPLATE_VERSION}", self.name)
    }

    pub fn manifest(&self, section: &str) -> ManifestEntry {
        ManifestEntry {
            section: section.to_string(),
            source: self.source(),
        }
    }

    /// Replaces `{key}` placeholders.
    pub fn fill(&self, vars: &[(&str, String)]) -> String {
        let mut out = self.text.to_string();
        for (key, value) in vars {
            out = out.replace(&format!("{{{key}}}"), value);
        }
        out
    }
}

pub(crate) fn adherence(level: Adherence) -> &'static Template {
    match level {
        Adherence::Loose => &ADHERENCE_LOOSE,
        Adherence::Moderate => &ADHERENCE_MODERATE,
        Adherence::Strict => &ADHERENCE_STRICT,
    }
}
