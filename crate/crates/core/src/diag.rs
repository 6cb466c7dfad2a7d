//! Diagnostics reported by the parser and the checker.

use std::fmt;

use serde::Serialize;

use crate::ast::{Effect, Loc};
use crate::capability::CapError;
use crate::parser::ParseError;

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Diagnostic {
    pub code: &'static str,
    pub message: String,
    pub loc: Loc,
    /// The effect in force where checking failed, if there was one.
    pub effect: Option<Effect>,
}

impl Diagnostic {
    pub fn new(code: &'static str, message: impl Into<String>, loc: Loc, effect: Option<Effect>) -> Self {
        Diagnostic { code, message: message.into(), loc, effect }
    }

    pub fn from_cap(err: CapError, loc: Loc, effect: &Effect) -> Self {
        Diagnostic::new(err.code(), err.to_string(), loc, Some(effect.clone()))
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "code": self.code,
            "message": self.message,
            "loc": { "line": self.loc.line, "col": self.loc.col },
            "effect": self.effect.as_ref().map(|e| e.to_string()),
        })
    }
}

impl From<ParseError> for Diagnostic {
    fn from(err: ParseError) -> Self {
        let message = match &err {
            ParseError::Syntax { msg, .. } => msg.clone(),
            ParseError::DuplicateDefinition { name, .. } => format!("duplicate definition of `{name}`"),
            ParseError::MissingMain => "no `main` definition".to_string(),
        };
        Diagnostic::new(err.code(), message, err.loc(), None)
    }
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}: {}", self.loc, self.code, self.message)?;
        if let Some(eff) = &self.effect {
            write!(f, " [effect {eff}]")?;
        }
        Ok(())
    }
}
