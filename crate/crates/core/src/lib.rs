//! Annotation-gated, rule-based source-to-source transformation of a small
//! C subset.

pub mod annotations;
pub mod ast;
pub mod driver;
pub mod error;
pub mod exec;
pub mod lexer;
pub mod metric;
pub mod nodes;
pub mod parser;
pub mod printer;
pub mod properties;
pub mod rewrite;
pub mod rules;
pub mod translate;

pub use ast::{NodeId, Program};
pub use error::AstError;
pub use parser::parse;
pub use printer::print;
