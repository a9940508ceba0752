use super::task::EvalTask;

/// Default stop sequences. A leading newline anchors a stop to the start of
/// a line; that newline stays with the kept text.
pub const DEFAULT_STOPS: [&str; 4] = ["\ndef ", "\nclass ", "\nif __name__", "\nprint("];

pub fn default_stops() -> Vec<String> {
    DEFAULT_STOPS.iter().map(|s| s.to_string()).collect()
}

/// Cuts `completion` at the earliest occurrence of any stop sequence.
pub fn truncate_completion(completion: &str, stop_sequences: &[String]) -> String {
    let cut = stop_sequences
        .iter()
        .filter(|s| !s.is_empty())
        .filter_map(|stop| {
            completion
                .find(stop.as_str())
                .map(|at| if stop.starts_with('\n') { at + 1 } else { at })
        })
        .min();
    match cut {
        Some(at) => completion[..at].to_string(),
        None => completion.to_string(),
    }
}

/// `prompt ⊕ completion ⊕ "\n" ⊕ test ⊕ "\n" ⊕ check(entry_point)`.
pub fn assemble_program(task: &EvalTask, completion: &str) -> String {
    format!(
        "{}{}\n{}\ncheck({})\n",
        task.prompt, completion, task.test, task.entry_point
    )
}
