//! Prompt assembly, response parsing and mutant materialization.

mod materialize;
mod response;
mod template;

pub use materialize::{materialize, Mutant, Rejection};
pub use response::{parse_response, ParseFailure, ParsedResponse};
pub use template::{render_examples, render_prompt, PromptInstance, SkippedExample};

use serde::{Deserialize, Serialize};

/// A retrieved fix replayed in the mutation direction: `precode` is the
/// fixed line and `aftercode` the buggy one.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FewShotExample {
    pub precode: String,
    pub aftercode: String,
    pub source_pair_id: String,
}

/// One `{"precode", "aftercode"}` object from a model reply.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MutationPair {
    pub precode: String,
    pub aftercode: String,
}

impl From<&FewShotExample> for MutationPair {
    fn from(e: &FewShotExample) -> Self {
        Self {
            precode: e.precode.clone(),
            aftercode: e.aftercode.clone(),
        }
    }
}

/// Wraps pairs the way the model is asked to answer.
pub fn render_pairs(pairs: &[MutationPair]) -> String {
    format!(
        "<json>{}</json>",
        serde_json::to_string(pairs).expect("string pairs always serialize")
    )
}
