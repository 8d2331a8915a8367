use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::thread;

use super::{ChatBackend, Completion, LlmError, TokenUsage};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptRequest {
    pub id: String,
    pub prompt: String,
}

#[derive(Debug)]
pub struct BatchItem {
    pub prompt_id: String,
    pub result: Result<Completion, LlmError>,
}

#[derive(Debug)]
pub struct BatchResult {
    /// One item per request, in request order.
    pub items: Vec<BatchItem>,
    /// Sum over successful completions.
    pub usage: TokenUsage,
}

/// Sends every prompt with at most `concurrency` requests in flight.
/// Failures stay attached to their prompt and never abort the batch.
pub fn complete_batch(
    backend: &dyn ChatBackend,
    prompts: &[PromptRequest],
    concurrency: usize,
) -> BatchResult {
    let workers = concurrency.max(1).min(prompts.len());
    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<Result<Completion, LlmError>>>> =
        prompts.iter().map(|_| Mutex::new(None)).collect();

    thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(req) = prompts.get(i) else { break };
                let result = backend.complete(&req.prompt);
                *slots[i].lock().expect("slot lock") = Some(result);
            });
        }
    });

    let mut usage = TokenUsage::default();
    let items = prompts
        .iter()
        .zip(slots)
        .map(|(req, slot)| {
            let result = slot
                .into_inner()
                .expect("slot lock")
                .expect("every slot is filled once workers finish");
            if let Ok(c) = &result {
                usage += c.usage;
            }
            BatchItem { prompt_id: req.id.clone(), result }
        })
        .collect();
    BatchResult { items, usage }
}
