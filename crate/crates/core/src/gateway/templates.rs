//! Versioned prompt templates.
//!
//! A template file is a small header of `key: value` lines (`version`,
//! `system`), a `---` separator line, and the user-prompt body. The body may
//! use the placeholders `{{query}}`, `{{keywords}}` and `{{abstracts}}`.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const PLACEHOLDERS: [&str; 3] = ["query", "keywords", "abstracts"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateKind {
    QueryExpansion,
    Review,
    Synthesis,
    DirectionProposal,
}

impl TemplateKind {
    pub const ALL: [TemplateKind; 4] = [
        TemplateKind::QueryExpansion,
        TemplateKind::Review,
        TemplateKind::Synthesis,
        TemplateKind::DirectionProposal,
    ];

    pub fn file_name(self) -> &'static str {
        match self {
            TemplateKind::QueryExpansion => "query_expansion.txt",
            TemplateKind::Review => "review.txt",
            TemplateKind::Synthesis => "synthesis.txt",
            TemplateKind::DirectionProposal => "direction_proposal.txt",
        }
    }

    fn builtin_source(self) -> &'static str {
        match self {
            TemplateKind::QueryExpansion => include_str!("../../templates/query_expansion.txt"),
            TemplateKind::Review => include_str!("../../templates/review.txt"),
            TemplateKind::Synthesis => include_str!("../../templates/synthesis.txt"),
            TemplateKind::DirectionProposal => include_str!("../../templates/direction_proposal.txt"),
        }
    }
}

impl fmt::Display for TemplateKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.file_name().trim_end_matches(".txt"))
    }
}

#[derive(Debug, Error)]
pub enum TemplateError {
    #[error("{file}: {reason}")]
    Malformed { file: String, reason: String },
    #[error("{file}: {source}")]
    Io {
        file: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    pub version: u32,
    pub system: String,
    pub body: String,
}

impl PromptTemplate {
    pub fn parse(file: &str, source: &str) -> Result<Self, TemplateError> {
        let malformed = |reason: String| TemplateError::Malformed {
            file: file.to_owned(),
            reason,
        };
        let (header, body) = source
            .split_once("\n---\n")
            .ok_or_else(|| malformed("missing `---` separator line".into()))?;
        let mut version = None;
        let mut system = None;
        for line in header.lines().filter(|l| !l.trim().is_empty()) {
            let (key, value) = line
                .split_once(':')
                .ok_or_else(|| malformed(format!("header line without `:`: {line:?}")))?;
            match key.trim() {
                "version" => {
                    version = Some(
                        value
                            .trim()
                            .parse()
                            .map_err(|_| malformed(format!("bad version {value:?}")))?,
                    )
                }
                "system" => system = Some(value.trim().to_owned()),
                other => return Err(malformed(format!("unknown header key {other:?}"))),
            }
        }
        let body = body.trim_end().to_owned();
        let mut rest = body.as_str();
        while let Some(open) = rest.find("{{") {
            let after = &rest[open + 2..];
            let close = after
                .find("}}")
                .ok_or_else(|| malformed("unterminated placeholder".into()))?;
            let name = &after[..close];
            if !PLACEHOLDERS.contains(&name) {
                return Err(malformed(format!("unknown placeholder {{{{{name}}}}}")));
            }
            rest = &after[close + 2..];
        }
        if body.trim().is_empty() {
            return Err(malformed("empty body".into()));
        }
        Ok(Self {
            version: version.ok_or_else(|| malformed("missing version".into()))?,
            system: system.ok_or_else(|| malformed("missing system prompt".into()))?,
            body,
        })
    }

    /// Substitutes placeholders. Unlisted placeholders render empty.
    pub fn render(&self, vars: &[(&str, &str)]) -> String {
        let mut out = self.body.clone();
        for name in PLACEHOLDERS {
            let value = vars.iter().find(|(k, _)| *k == name).map_or("", |(_, v)| *v);
            out = out.replace(&format!("{{{{{name}}}}}"), value);
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Templates {
    query_expansion: PromptTemplate,
    review: PromptTemplate,
    synthesis: PromptTemplate,
    direction_proposal: PromptTemplate,
}

impl Templates {
    pub fn builtin() -> Self {
        let load = |k: TemplateKind| {
            PromptTemplate::parse(k.file_name(), k.builtin_source()).expect("builtin template parses")
        };
        Self {
            query_expansion: load(TemplateKind::QueryExpansion),
            review: load(TemplateKind::Review),
            synthesis: load(TemplateKind::Synthesis),
            direction_proposal: load(TemplateKind::DirectionProposal),
        }
    }

    /// Loads overrides from `dir`; files that do not exist fall back to the
    /// builtin defaults.
    pub fn from_dir(dir: &Path) -> Result<Self, TemplateError> {
        let mut t = Self::builtin();
        for kind in TemplateKind::ALL {
            let path = dir.join(kind.file_name());
            if !path.exists() {
                continue;
            }
            let file = path.display().to_string();
            let source = std::fs::read_to_string(&path).map_err(|source| TemplateError::Io {
                file: file.clone(),
                source,
            })?;
            *t.slot(kind) = PromptTemplate::parse(&file, &source)?;
        }
        Ok(t)
    }

    pub fn get(&self, kind: TemplateKind) -> &PromptTemplate {
        match kind {
            TemplateKind::QueryExpansion => &self.query_expansion,
            TemplateKind::Review => &self.review,
            TemplateKind::Synthesis => &self.synthesis,
            TemplateKind::DirectionProposal => &self.direction_proposal,
        }
    }

    fn slot(&mut self, kind: TemplateKind) -> &mut PromptTemplate {
        match kind {
            TemplateKind::QueryExpansion => &mut self.query_expansion,
            TemplateKind::Review => &mut self.review,
            TemplateKind::Synthesis => &mut self.synthesis,
            TemplateKind::DirectionProposal => &mut self.direction_proposal,
        }
    }
}

impl Default for Templates {
    fn default() -> Self {
        Self::builtin()
    }
}
