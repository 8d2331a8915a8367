use serde::Serialize;

use super::{FewShotExample, MutationPair};
use crate::chunker::{CodeChunk, FocalMethod};
use crate::corpus::BugFixPair;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SkippedExample {
    pub pair_id: String,
    pub reason: String,
}

/// Turns retrieved bug–fix pairs into few-shot examples, keeping retrieval
/// order. Only one-line-to-one-line fixes have a line mapping to show.
pub fn render_examples<'a, I>(pairs: I) -> (Vec<FewShotExample>, Vec<SkippedExample>)
where
    I: IntoIterator<Item = &'a BugFixPair>,
{
    let mut examples = Vec::new();
    let mut skipped = Vec::new();
    for pair in pairs {
        let skip = |reason: &str| SkippedExample {
            pair_id: pair.id.clone(),
            reason: reason.to_string(),
        };
        if !pair.hunk.is_one_line_replacement() {
            skipped.push(skip("not a one-line replacement"));
            continue;
        }
        let fixed = pair.hunk.added().next().unwrap_or_default().trim();
        let buggy = pair.hunk.removed().next().unwrap_or_default().trim();
        if fixed.is_empty() {
            skipped.push(skip("empty fixed line"));
        } else if fixed == buggy {
            skipped.push(skip("whitespace-only change"));
        } else {
            examples.push(FewShotExample {
                precode: fixed.to_string(),
                aftercode: buggy.to_string(),
                source_pair_id: pair.id.clone(),
            });
        }
    }
    (examples, skipped)
}

/// Everything a generation prompt is rendered from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptInstance {
    pub language: String,
    pub focal_method: String,
    pub chunk: String,
    pub examples: Vec<FewShotExample>,
    /// Number of mutants requested; one per line of the chunk.
    pub requested_n: usize,
}

impl PromptInstance {
    pub fn new(method: &FocalMethod, chunk: &CodeChunk, examples: Vec<FewShotExample>) -> Self {
        Self {
            language: method.grammar().display_name().to_string(),
            focal_method: method.source().trim_end().to_string(),
            chunk: chunk.text.clone(),
            examples,
            requested_n: chunk.line_count(),
        }
    }

    pub fn render(&self) -> String {
        let pairs: Vec<MutationPair> = self.examples.iter().map(MutationPair::from).collect();
        let examples = serde_json::to_string(&pairs).expect("string pairs always serialize");
        format!(
            "[Instruction]: Below is the original {lang} method, followed by a specific code chunk \
extracted from it. Your task is to generate {n} mutant versions by applying single-line \
mutations only within the code chunk.\n\
Note: In software engineering, a mutant refers to a variant of the original program created by \
introducing small syntactic changes, which are typically used for mutation testing.\n\
\n\
[Entire Focal Method]:\n{method}\n\
\n\
[The Current Chunk]: Only mutate these lines:\n{chunk}\n\
\n\
[Few-Shot Examples]: <json> {examples} </json>\n\
\n\
[Output Instructions]:\n\
1. A mutation can only occur on one line.\n\
2. Your output must be like: <json> [ {{ \"precode\": \"\", \"aftercode\": \"\" }} ] </json>. \
The \"precode\" represents the line of code before mutation, and it can't be empty, \
\"aftercode\" represents the line of code after mutation. Note that you may need to generate \
multiple pairs of \"precode\" and \"aftercode\".\n\
3. Prohibit generating mutants that are identical to the original code (precode) or duplicate \
any previously generated mutants.\n\
4. Output all mutations in JSON format, ensuring they are wrapped in <json></json> tags.\n",
            lang = self.language,
            n = self.requested_n,
            method = self.focal_method,
            chunk = self.chunk,
        )
    }
}

pub fn render_prompt(
    method: &FocalMethod,
    chunk: &CodeChunk,
    examples: &[FewShotExample],
    n: usize,
) -> String {
    let mut instance = PromptInstance::new(method, chunk, examples.to_vec());
    instance.requested_n = n.max(1);
    instance.render()
}
