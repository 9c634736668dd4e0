//! Test support shared by the workspace: random packages and a reference tree model.

pub mod checks;
pub mod messages;
pub mod tree_oracle;
