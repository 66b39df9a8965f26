//! Prompt templates. Placeholders are written `{{name}}`; single braces are
//! literal so JSON format examples need no escaping.

use thiserror::Error;

use crate::provider::{ChatRequest, EXTRACTION_TEMPERATURE, ROLEPLAY_TEMPERATURE};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PromptError {
    #[error("template {template} has no value for {{{{{var}}}}}")]
    MissingVariable { template: &'static str, var: String },
    #[error("template {template} has an unterminated placeholder")]
    Unterminated { template: &'static str },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PromptTemplate {
    pub label: &'static str,
    pub system: &'static str,
    pub user: &'static str,
    pub temperature: f32,
    pub max_tokens: u32,
}

/// Substitutes every `{{var}}` in `template`. Unknown names are an error.
pub fn fill(label: &'static str, template: &str, vars: &[(&str, &str)]) -> Result<String, PromptError> {
    let mut out = String::with_capacity(template.len() + 64);
    let mut rest = template;
    while let Some(start) = rest.find("{{") {
        out.push_str(&rest[..start]);
        let after = &rest[start + 2..];
        let end = after.find("}}").ok_or(PromptError::Unterminated { template: label })?;
        let name = after[..end].trim();
        let value = vars
            .iter()
            .find(|(k, _)| *k == name)
            .map(|(_, v)| *v)
            .ok_or_else(|| PromptError::MissingVariable {
                template: label,
                var: name.to_string(),
            })?;
        out.push_str(value);
        rest = &after[end + 2..];
    }
    out.push_str(rest);
    Ok(out)
}

/// Placeholder names used by a template, in order of first appearance.
pub fn variables(template: &str) -> Vec<String> {
    let mut names: Vec<String> = Vec::new();
    let mut rest = template;
    while let Some(start) = rest.find("{{") {
        let after = &rest[start + 2..];
        let Some(end) = after.find("}}") else { break };
        let name = after[..end].trim().to_string();
        if !names.contains(&name) {
            names.push(name);
        }
        rest = &after[end + 2..];
    }
    names
}

impl PromptTemplate {
    pub fn render(&self, vars: &[(&str, &str)]) -> Result<ChatRequest, PromptError> {
        let system = fill(self.label, self.system, vars)?;
        let user = fill(self.label, self.user, vars)?;
        Ok(ChatRequest::new(self.label, system, user)
            .with_temperature(self.temperature)
            .with_max_tokens(self.max_tokens))
    }
}

const fn extraction(label: &'static str, system: &'static str, user: &'static str) -> PromptTemplate {
    PromptTemplate {
        label,
        system,
        user,
        temperature: EXTRACTION_TEMPERATURE,
        max_tokens: 2048,
    }
}

pub const CHARACTERS: PromptTemplate = extraction(
    "extract_characters",
    "Find all characters in the given story, return in JSON format",
    "Extract characters in the story, here is the format example: [{\"name\": \"Charlie Bucket\"}, {\"name\": \"Grandpa Joe\"}]\nHere is the story: {{story}}",
);

pub const TRAITS: PromptTemplate = extraction(
    "extract_traits",
    "Derive details pertaining to the specified character from the provided text. In case the text does not contain sufficient information, make an educated inference. Present the output in JSON format",
    "Generate the character background summary, keywords, and the objective of {{character}}. The output format is {\"summary\": \"here is the background\", \"keywords\": \"personality keywords\", \"objective\": \"character's objective\"}.\nHere is the story: {{story}}",
);

pub const APPEARANCE: PromptTemplate = extraction(
    "extract_appearance",
    "Imagine the appearance of the specified character from the provided text. Present the output in JSON format.",
    "Generate the appearance, gender and age of {{character}}. {{character_description}} The output format is {\"appearance\": \"brown hair, blue eyes, poor\", \"gender\": \"male\", \"age\": \"middle age\"}.",
);

pub const VOICE: PromptTemplate = extraction(
    "extract_voice",
    "Identify the character's gender and age. Present the output in JSON format.",
    "Identify the gender and age of {{character}}. {{character_description}} For gender, choose from 'male' or 'female'. For age, choose from 'child', 'youth', 'middle age', 'old age'. The output format is {\"gender\": \"male\", \"age\": \"child\"}.",
);

pub const EVENTS: PromptTemplate = extraction(
    "extract_events",
    "Identify all events in the given story, return in JSON format.",
    "Extract a list of main events. Each event should include the event name, characters involved in the event, location, and a detailed description. Here is a format example: [{\"event\": \"Grandpa Joe telling story about Prince Pondicherry\", \"character\": \"Grandpa Joe, Charlie\", \"location\": \"Grandparents' room\", \" description\": \"Grandpa Joe recounts the story of Prince Pondicherry, an Indian prince who commissioned Mr Willy Wonka to build a colossal palace entirely out of chocolate. The palace had one hundred rooms, and everything, from the bricks to the furniture, was made of chocolate. Despite Mr Wonka's warning that the palace wouldn't last long, the prince refused to eat it and intended to live in it. However, on a hot day, the palace melted, leaving the prince swimming in a lake of chocolate. The family finds the story amusing, highlighting Mr Wonka's incredible creations.\"}]\nHere is the story: {{story}}",
);

pub const CONVERSATION: PromptTemplate = extraction(
    "extract_conversation",
    "Find all conversation, their speakers and content in the given story, return in JSON format.",
    "Extract the conversation link to the given event as a list: {{event_description}}\nHere is a format example: [{\"speaker\": \"Grandpa Joe\", \"content\": \"Not people, Charlie. Not ordinary people, anyway.\"}, {\"speaker\": \"Charlie Bucket\", \"content\": \"Then who?\"}, {\"speaker\": \"Grandpa Joe\", \"content\": \"Ah-ha . . . That's it, you see . . . That's another of Mr Willy Wonka's clevernesses.\"}]\nHere is the story: {{story}}",
);

pub const ENVIRONMENT: PromptTemplate = extraction(
    "extract_environment",
    "Generate keywords and descriptions for the given locations in the story. The description should only describe the environment and NOT include people. The output should be in JSON format.",
    "For the location: {{location}}\nExtract keywords and description of the location looking. For example, with location \"small wooden house\", output {\"keyword\": \"Cozy, cramped, inadequate space\", \"description\": \"The small wooden house with its wooden exterior has limited space, and there was only one bed.\"}. With location \"town\", output {\"keyword\": \"chocolate factory, small, impoverished, mysterious\", \"description\": \"Most residents live in humble, impoverished conditions, with dull and dreary surroundings. The town\\'s ordinary and monotonous appearance starkly contrasts the wonder and magic that unfolds within the walls of the famous chocolate factory.\"}\nHere is the story: {{story}}",
);

const DIALOGUE_SYSTEM: &str = "As {{character}}, engage in a dialogue with the objective of {{objective}}. Respond to the conversation using the given context or memories and limit your response to under 50 words. Please submit your response in JSON format.";

pub const INITIATE: PromptTemplate = PromptTemplate {
    label: "initiate",
    system: DIALOGUE_SYSTEM,
    user: "YOU are: {{character}}\n{{event_description}}\nInitiates a conversation with {{user_character}}.\nHere is your memory: {{memory}}\nGive your response in format {\"response\": \"here is the response\"}.",
    temperature: ROLEPLAY_TEMPERATURE,
    max_tokens: 256,
};

pub const RESPOND: PromptTemplate = PromptTemplate {
    label: "respond",
    system: DIALOGUE_SYSTEM,
    user: "YOU are: {{character}}\n{{event_description}}\nHere is your memory: {{memory}}\nResponse according to what SAYS to you: \n{{user_input}} Give your response in format {\"response\": \"here is the response\"}.",
    temperature: ROLEPLAY_TEMPERATURE,
    max_tokens: 256,
};

pub const IMPORTANCE: PromptTemplate = PromptTemplate {
    label: "importance",
    system: "Rate how important the given memory is to the character, on a scale from 1 (mundane) to 10 (life-changing). Present the output in JSON format.",
    user: "Memory: {{memory}}\nThe output format is {\"score\": 5}.",
    temperature: EXTRACTION_TEMPERATURE,
    max_tokens: 32,
};

pub const SENTIMENT: PromptTemplate = PromptTemplate {
    label: "sentiment",
    system: "Rate how the player's words in this exchange would make the character feel about the player, from -1 (hostile) to 1 (warm). Present the output in JSON format.",
    user: "Character: {{character}}\nExchange:\n{{exchange}}\nThe output format is {\"score\": 0.5}.",
    temperature: EXTRACTION_TEMPERATURE,
    max_tokens: 32,
};

pub const DEDUPE: PromptTemplate = PromptTemplate {
    label: "dedupe",
    system: "Decide whether two character names extracted from the same story refer to the same person. Present the output in JSON format.",
    user: "First: {{first}}. {{first_summary}}\nSecond: {{second}}. {{second_summary}}\nThe output format is {\"same\": \"yes\"} or {\"same\": \"no\"}.",
    temperature: EXTRACTION_TEMPERATURE,
    max_tokens: 16,
};

pub const RECTIFY: PromptTemplate = PromptTemplate {
    label: "rectify",
    system: "The following output should be valid JSON but could not be parsed. Return the corrected JSON only, without explanation.",
    user: "{{output}}",
    temperature: 0.0,
    max_tokens: 2048,
};

pub const CATALOG: &[PromptTemplate] = &[
    CHARACTERS,
    TRAITS,
    APPEARANCE,
    VOICE,
    EVENTS,
    CONVERSATION,
    ENVIRONMENT,
    INITIATE,
    RESPOND,
    IMPORTANCE,
    SENTIMENT,
    DEDUPE,
    RECTIFY,
];

pub fn by_label(label: &str) -> Option<&'static PromptTemplate> {
    CATALOG.iter().find(|t| t.label == label)
}
