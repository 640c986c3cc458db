use thiserror::Error;

use crate::ast::NodeId;

/// Errors raised while parsing or addressing programs.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AstError {
    #[error("{line}:{col}: syntax error: {message}")]
    Syntax { line: usize, col: usize, message: String },
    #[error("{line}:{col}: unsupported construct: {construct}")]
    Unsupported { line: usize, col: usize, construct: String },
    #[error("unknown position {0}")]
    UnknownPosition(NodeId),
    #[error("cannot place a {found} at position {pos}, which holds a {expected}")]
    CategoryMismatch {
        pos: NodeId,
        expected: &'static str,
        found: &'static str,
    },
    #[error("{line}:{col}: metavariable `{name}` used as {found} but declared as {declared}")]
    KindConflict {
        line: usize,
        col: usize,
        name: String,
        declared: &'static str,
        found: &'static str,
    },
}

impl AstError {
    pub fn syntax(line: usize, col: usize, message: impl Into<String>) -> AstError {
        AstError::Syntax {
            line,
            col,
            message: message.into(),
        }
    }
}
