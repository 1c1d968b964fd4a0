use std::collections::BTreeMap;
use std::sync::Arc;

use serde_json::Value;

use crate::dialogue::DialogueTranscript;
use crate::goal::UserGoal;
use crate::prompt::{build_prompt, postprocess_utterance, PromptTemplate, ShotSet};

use super::{AgentError, ChatClient, GenerationParams, UserAgent};

/// User simulator backed by a remote language model: prompt, generate,
/// clean.
pub struct LlmUserAgent {
    client: Arc<ChatClient>,
    template: PromptTemplate,
    shots: Arc<ShotSet>,
    params: GenerationParams,
    retries: u64,
    calls: u64,
}

impl LlmUserAgent {
    /// The template separator is added to the stop sequences if missing.
    pub fn new(
        client: Arc<ChatClient>,
        template: PromptTemplate,
        shots: Arc<ShotSet>,
        mut params: GenerationParams,
    ) -> Self {
        if !params.stop_sequences.contains(&template.separator) {
            params.stop_sequences.push(template.separator.clone());
        }
        LlmUserAgent {
            client,
            template,
            shots,
            params,
            retries: 0,
            calls: 0,
        }
    }

    pub fn params(&self) -> &GenerationParams {
        &self.params
    }
}

impl UserAgent for LlmUserAgent {
    fn respond(&mut self, goal: &UserGoal, history: &DialogueTranscript) -> Result<String, AgentError> {
        let prompt = build_prompt(&self.template, goal, history, &self.shots)?;
        let generation = self.client.generate(&prompt, &self.params)?;
        self.calls += 1;
        self.retries += u64::from(generation.retries);
        Ok(postprocess_utterance(&generation.text, &self.template)?)
    }

    fn metadata(&self) -> BTreeMap<String, Value> {
        BTreeMap::from([
            ("model_id".to_string(), Value::from(self.params.model_id.clone())),
            ("temperature".to_string(), Value::from(self.params.temperature)),
            ("generation_calls".to_string(), Value::from(self.calls)),
            ("retries".to_string(), Value::from(self.retries)),
        ])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::remote::stub::StubServer;
    use crate::agents::EndpointConfig;
    use crate::dialogue::Utterance;
    use crate::goal::SlotSpec;

    #[test]
    fn prompts_generates_and_cleans() {
        let server = StubServer::start(vec![StubServer::completion(
            "CUSTOMER: I need a taxi.<endturn>ASSISTANT: ok",
        )]);
        let client = Arc::new(ChatClient::new(EndpointConfig::new(&server.url)).unwrap());
        let goal = UserGoal::new("g", None, None, vec![SlotSpec::inform("taxi", "leave_at", "16:00")])
            .unwrap()
            .with_text("You need a taxi.");
        let mut agent = LlmUserAgent::new(
            client,
            PromptTemplate::default(),
            Arc::new(ShotSet::default()),
            GenerationParams::new("m"),
        );
        let mut history = DialogueTranscript::new("d", "g");
        history.append(Utterance::system("Hello, how can I help?")).unwrap();
        assert_eq!(agent.respond(&goal, &history).unwrap(), "I need a taxi.");
        let sent: Value = serde_json::from_str(&server.join()[0]).unwrap();
        let content = sent["messages"][0]["content"].as_str().unwrap();
        assert!(content.contains("ASSISTANT: Hello, how can I help?<endturn>\nCUSTOMER: "));
        assert_eq!(agent.metadata()["retries"], 0);
    }
}
