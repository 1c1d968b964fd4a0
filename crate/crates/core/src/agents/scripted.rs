use crate::dialogue::DialogueTranscript;
use crate::goal::UserGoal;

use super::{AgentError, UserAgent};

/// Returns `script[cursor]` and advances the cursor.
pub fn scripted_next(script: &[String], cursor: &mut usize) -> Result<String, AgentError> {
    let line = script.get(*cursor).ok_or(AgentError::ScriptExhausted(script.len()))?;
    *cursor += 1;
    Ok(line.clone())
}

/// Replays a fixed list of utterances regardless of what the system says.
#[derive(Debug, Clone, Default)]
pub struct ScriptedAgent {
    script: Vec<String>,
    cursor: usize,
}

impl ScriptedAgent {
    pub fn new<S: Into<String>>(script: impl IntoIterator<Item = S>) -> Self {
        ScriptedAgent {
            script: script.into_iter().map(Into::into).collect(),
            cursor: 0,
        }
    }

    /// Answers every valued slot of the goal in slot order, then confirms
    /// and asks for any requested information.
    pub fn perfect(goal: &UserGoal) -> Self {
        let mut script: Vec<String> = goal
            .valued_slots()
            .map(|s| format!("The {} is {}.", s.phrase(), s.value.as_deref().unwrap_or_default()))
            .collect();
        let mut closing = "Yes, that is correct.".to_string();
        for slot in goal.request_slots() {
            closing.push_str(&format!(" What is the {}?", slot.phrase()));
        }
        script.push(closing);
        ScriptedAgent::new(script)
    }

    pub fn script(&self) -> &[String] {
        &self.script
    }

    pub fn cursor(&self) -> usize {
        self.cursor
    }

    pub fn next_line(&mut self) -> Result<String, AgentError> {
        scripted_next(&self.script, &mut self.cursor)
    }
}

impl UserAgent for ScriptedAgent {
    fn respond(&mut self, _goal: &UserGoal, _history: &DialogueTranscript) -> Result<String, AgentError> {
        self.next_line()
    }
}
