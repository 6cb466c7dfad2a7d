//! Type-and-effect checking and interleaving execution for a concurrent
//! language with hierarchical regions and reentrant locks.

pub mod ast;
pub mod capability;
pub mod parser;
pub mod pretty;
pub mod diag;
pub mod typeck;
pub mod store;
pub mod interp;
pub mod metatheory;
