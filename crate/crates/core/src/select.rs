//! Which prompt tokens receive the steering.
//!
//! Edits are local, global or stylization; prompts are explicit when they
//! already contain one of the concept's pole words and implicit otherwise.
//!
//! | edit        | explicit      | implicit           |
//! |-------------|---------------|--------------------|
//! | local       | pole words    | main subject noun  |
//! | stylization | pole words    | main subject noun  |
//! | global      | pole words    | all content words  |
//!
//! The LLM path asks a chat model; the rule path needs a [`ConceptLexicon`]
//! naming the poles of each concept.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{locate_style_span, DatasetError};
use crate::llm::{ChatMessage, LlmClient, LlmError};
use crate::prompts;
use crate::tensor::{PromptEmbedding, TokenSpan};
use crate::text;

#[derive(Debug, Error)]
pub enum SelectError {
    #[error("prompt is empty")]
    EmptyPrompt,
    #[error("no selectable token in `{0}`")]
    NoSelectableToken(String),
    #[error("word `{word}` cannot be resolved: {source}")]
    Unresolvable {
        word: String,
        #[source]
        source: DatasetError,
    },
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error("lexicon error: {0}")]
    Lexicon(String),
}

pub type Result<T> = std::result::Result<T, SelectError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EditType {
    Local,
    Global,
    Stylization,
}

impl EditType {
    pub const ALL: [EditType; 3] = [EditType::Local, EditType::Global, EditType::Stylization];

    pub fn as_str(self) -> &'static str {
        match self {
            EditType::Local => "local",
            EditType::Global => "global",
            EditType::Stylization => "stylization",
        }
    }

    /// Name used inside the token-selection prompt.
    pub fn label(self) -> &'static str {
        match self {
            EditType::Local => "Local Edit",
            EditType::Global => "Global Edit",
            EditType::Stylization => "Stylization Edit",
        }
    }
}

impl fmt::Display for EditType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EditType {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|e| e.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| format!("unknown edit type `{s}` (expected local, global or stylization)"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptClass {
    Implicit,
    Explicit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionSource {
    Llm,
    RuleFallback,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenSelection {
    pub words: Vec<String>,
    pub source: SelectionSource,
    /// Known only for rule-based selections.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub class: Option<PromptClass>,
}

impl TokenSelection {
    pub fn resolve(&self, emb: &PromptEmbedding) -> Result<TokenSpan> {
        resolve_selection(&self.words, emb)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConceptEntry {
    pub poles: Vec<String>,
    pub edit_type: EditType,
    /// Adjectives that never count as a subject noun.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub attributes: Vec<String>,
}

/// Articles, prepositions, conjunctions, pronouns, auxiliaries, quantity
/// words and framing nouns such as "portrait" or "photo".
pub const DEFAULT_STOPWORDS: &[&str] = &[
    "a", "an", "the", "this", "that", "these", "those", "some", "any", "each", "every",
    "of", "in", "on", "at", "by", "for", "with", "without", "from", "to", "into", "onto",
    "over", "under", "above", "below", "near", "beside", "behind", "between", "through",
    "across", "around", "against", "along", "among", "inside", "outside", "upon", "off",
    "and", "or", "but", "nor", "so", "yet", "as", "than", "while",
    "is", "are", "was", "were", "be", "been", "being", "has", "have", "had", "its", "it",
    "his", "her", "their", "my", "your", "our", "he", "she", "they", "we", "you", "i",
    "very", "one", "two", "three", "several", "many",
    "portrait", "photo", "photograph", "picture", "image", "shot", "close-up", "closeup",
    "depiction", "rendering", "render",
];

/// Concept poles for the rule-based selector, loaded from JSON of the form
/// `{"smile": {"poles": ["sad", "happy", "smiling"], "edit_type": "local"}}`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConceptLexicon {
    concepts: BTreeMap<String, ConceptEntry>,
    stopwords: BTreeSet<String>,
}

impl Default for ConceptLexicon {
    fn default() -> Self {
        Self::new(BTreeMap::new())
    }
}

impl ConceptLexicon {
    pub fn new(concepts: BTreeMap<String, ConceptEntry>) -> Self {
        Self {
            concepts: concepts
                .into_iter()
                .map(|(k, v)| (k.trim().to_lowercase(), v))
                .collect(),
            stopwords: DEFAULT_STOPWORDS.iter().map(|s| s.to_string()).collect(),
        }
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let concepts: BTreeMap<String, ConceptEntry> =
            serde_json::from_str(s).map_err(|e| SelectError::Lexicon(e.to_string()))?;
        Ok(Self::new(concepts))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path)
            .map_err(|e| SelectError::Lexicon(format!("{}: {e}", path.display())))?;
        Self::from_json(&s)
    }

    pub fn with_stopwords(mut self, words: impl IntoIterator<Item = impl Into<String>>) -> Self {
        self.stopwords = words.into_iter().map(|w| w.into().to_lowercase()).collect();
        self
    }

    pub fn insert(&mut self, concept: &str, entry: ConceptEntry) {
        self.concepts.insert(concept.trim().to_lowercase(), entry);
    }

    pub fn get(&self, concept: &str) -> Option<&ConceptEntry> {
        self.concepts.get(&concept.trim().to_lowercase())
    }

    pub fn is_stopword(&self, word: &str) -> bool {
        self.stopwords.contains(&word.to_lowercase())
    }

    /// Pole words for a concept. Unknown concepts fall back to their own
    /// content words, so "smiling vs neutral" has poles {smiling, neutral}.
    pub fn poles(&self, concept: &str) -> Vec<String> {
        if let Some(entry) = self.get(concept) {
            return entry.poles.clone();
        }
        concept
            .split(" vs ")
            .map(str::trim)
            .filter(|p| !p.is_empty() && !self.is_stopword(p))
            .map(str::to_string)
            .collect()
    }

    fn attributes(&self, concept: &str) -> BTreeSet<String> {
        self.get(concept)
            .map(|e| e.poles.iter().chain(&e.attributes).map(|w| w.to_lowercase()).collect())
            .unwrap_or_default()
    }
}

fn check_prompt(prompt: &str) -> Result<()> {
    if prompt.trim().is_empty() {
        Err(SelectError::EmptyPrompt)
    } else {
        Ok(())
    }
}

/// Pole occurrences on word boundaries, as surface text in prompt order.
fn matched_poles(prompt: &str, poles: &[String]) -> Vec<String> {
    let chars: Vec<char> = prompt.chars().collect();
    let mut hits: Vec<(usize, usize)> = poles
        .iter()
        .flat_map(|p| text::find_all_ci(prompt, p.trim()))
        .filter(|&r| text::on_word_boundary(prompt, r))
        .collect();
    hits.sort_unstable();
    hits.dedup();
    let mut out: Vec<String> = Vec::new();
    for (s, e) in hits {
        let w: String = chars[s..e].iter().collect();
        if !out.iter().any(|o| o.eq_ignore_ascii_case(&w)) {
            out.push(w);
        }
    }
    out
}

/// Deterministic rule-based selection.
pub fn select_tokens_rules(
    prompt: &str,
    concept: &str,
    edit_type: EditType,
    lexicon: &ConceptLexicon,
) -> Result<TokenSelection> {
    check_prompt(prompt)?;
    let content: Vec<String> = text::words(prompt)
        .into_iter()
        .map(|w| w.text)
        .filter(|w| !lexicon.is_stopword(w))
        .collect();
    if content.is_empty() {
        return Err(SelectError::NoSelectableToken(prompt.to_string()));
    }
    let poles = matched_poles(prompt, &lexicon.poles(concept));
    if !poles.is_empty() {
        return Ok(TokenSelection {
            words: poles,
            source: SelectionSource::RuleFallback,
            class: Some(PromptClass::Explicit),
        });
    }
    let words = match edit_type {
        EditType::Global => dedup_ci(content),
        EditType::Local | EditType::Stylization => {
            let attributes = lexicon.attributes(concept);
            let noun = content
                .into_iter()
                .find(|w| !attributes.contains(&w.to_lowercase()))
                .ok_or_else(|| SelectError::NoSelectableToken(prompt.to_string()))?;
            vec![noun]
        }
    };
    Ok(TokenSelection {
        words,
        source: SelectionSource::RuleFallback,
        class: Some(PromptClass::Implicit),
    })
}

fn dedup_ci(words: Vec<String>) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for w in words {
        if !out.iter().any(|o| o.to_lowercase() == w.to_lowercase()) {
            out.push(w);
        }
    }
    out
}

// Words of the reply, stripped of quotes and punctuation; only the first
// non-empty line counts.
fn parse_reply(reply: &str) -> Vec<String> {
    let line = reply
        .lines()
        .map(str::trim)
        .find(|l| !l.is_empty())
        .unwrap_or("");
    let line = line.strip_prefix("OUTPUT:").unwrap_or(line);
    dedup_ci(text::words(line).into_iter().map(|w| w.text).collect())
}

fn word_in_prompt(prompt: &str, word: &str) -> bool {
    text::find_all_ci(prompt, word)
        .into_iter()
        .any(|r| text::on_word_boundary(prompt, r))
}

/// Asks the LLM which tokens to steer. Replies naming words absent from the
/// prompt fall through to [`select_tokens_rules`] with `fallback`.
pub fn select_tokens_llm(
    prompt: &str,
    concept: &str,
    edit_type: EditType,
    llm: &dyn LlmClient,
    fallback: &ConceptLexicon,
) -> Result<TokenSelection> {
    check_prompt(prompt)?;
    let messages = [
        ChatMessage::system(prompts::TOKEN_SELECTION_SYSTEM),
        ChatMessage::user(prompts::token_selection_task(prompt, concept, edit_type)),
    ];
    let reply = llm.complete(&messages, 0.0)?;
    let words = parse_reply(&reply);
    let bad: Vec<&String> = words.iter().filter(|w| !word_in_prompt(prompt, w)).collect();
    if words.is_empty() || !bad.is_empty() {
        tracing::warn!(prompt, reply = reply.as_str(), ?bad, "LLM token selection rejected; using rules");
        return select_tokens_rules(prompt, concept, edit_type, fallback);
    }
    Ok(TokenSelection {
        words,
        source: SelectionSource::Llm,
        class: None,
    })
}

/// Union of the token spans of each word's first occurrence.
pub fn resolve_selection(words: &[String], emb: &PromptEmbedding) -> Result<TokenSpan> {
    let mut span: Option<TokenSpan> = None;
    for word in words {
        let s = locate_style_span(emb, word).map_err(|source| SelectError::Unresolvable {
            word: word.clone(),
            source,
        })?;
        span = Some(match span {
            Some(acc) => acc.union(&s),
            None => s,
        });
    }
    span.ok_or_else(|| SelectError::NoSelectableToken(emb.prompt_text().to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::ScriptedLlm;
    use crate::tensor::Token;

    fn lexicon() -> ConceptLexicon {
        ConceptLexicon::from_json(
            r#"{
                "smile": {"poles": ["sad", "happy", "smiling"], "edit_type": "local"},
                "cartoon": {"poles": ["photorealistic", "cartoon"], "edit_type": "stylization"},
                "age": {"poles": ["ripe", "unripe", "old", "young"], "edit_type": "local"},
                "winter": {"poles": ["winter", "summer"], "edit_type": "global"}
            }"#,
        )
        .unwrap()
    }

    fn rules(prompt: &str, concept: &str, edit: EditType) -> TokenSelection {
        select_tokens_rules(prompt, concept, edit, &lexicon()).unwrap()
    }

    #[test]
    fn explicit_and_implicit() {
        let s = rules("a sad man", "smile", EditType::Local);
        assert_eq!(s.words, ["sad"]);
        assert_eq!(s.class, Some(PromptClass::Explicit));
        let s = rules("a man", "smile", EditType::Local);
        assert_eq!(s.words, ["man"]);
        assert_eq!(s.class, Some(PromptClass::Implicit));
        assert_eq!(s.source, SelectionSource::RuleFallback);
    }

    #[test]
    fn all_stopwords() {
        assert!(matches!(
            select_tokens_rules("the of a", "smile", EditType::Local, &lexicon()),
            Err(SelectError::NoSelectableToken(_))
        ));
        assert!(matches!(
            select_tokens_rules("  ", "smile", EditType::Local, &lexicon()),
            Err(SelectError::EmptyPrompt)
        ));
    }

    #[test]
    fn unknown_concept_uses_its_own_words() {
        let lex = ConceptLexicon::default();
        assert_eq!(lex.poles("smiling vs neutral"), ["smiling", "neutral"]);
        let s = select_tokens_rules("a neutral face", "smiling vs neutral", EditType::Local, &lex).unwrap();
        assert_eq!(s.words, ["neutral"]);
    }

    #[test]
    fn pole_must_be_whole_word() {
        // "old" inside "golden" is not a pole occurrence
        let s = rules("a golden retriever", "age", EditType::Local);
        assert_eq!(s.words, ["golden"]);
        assert_eq!(s.class, Some(PromptClass::Implicit));
    }

    #[test]
    fn attribute_adjectives_skipped_for_subject() {
        let mut lex = lexicon();
        lex.insert(
            "age",
            ConceptEntry {
                poles: vec!["ripe".into()],
                edit_type: EditType::Local,
                attributes: vec!["golden".into()],
            },
        );
        let s = select_tokens_rules("a golden retriever", "age", EditType::Local, &lex).unwrap();
        assert_eq!(s.words, ["retriever"]);
    }

    #[test]
    fn llm_reply_parsed_and_validated() {
        let llm = ScriptedLlm::with_replies(["  \"woman\" park.\nextra"]);
        let s = select_tokens_llm("a woman in a park", "winter", EditType::Global, &llm, &lexicon()).unwrap();
        assert_eq!(s.words, ["woman", "park"]);
        assert_eq!(s.source, SelectionSource::Llm);
    }

    #[test]
    fn llm_hallucination_falls_back() {
        let llm = ScriptedLlm::with_replies(["snowman"]);
        let s = select_tokens_llm("a woman in a park", "winter", EditType::Global, &llm, &lexicon()).unwrap();
        assert_eq!(s.words, ["woman", "park"]);
        assert_eq!(s.source, SelectionSource::RuleFallback);
    }

    #[test]
    fn llm_transport_error_propagates() {
        let llm = ScriptedLlm::default();
        assert!(matches!(
            select_tokens_llm("a man", "smile", EditType::Local, &llm, &lexicon()),
            Err(SelectError::Llm(LlmError::Exhausted))
        ));
    }

    fn word_tokens(prompt: &str) -> PromptEmbedding {
        let tokens: Vec<Token> = text::words(prompt)
            .into_iter()
            .map(|w| Token::new(w.text, w.start, w.end))
            .collect();
        let rows = tokens.iter().map(|_| vec![1.0]).collect();
        PromptEmbedding::new(prompt, tokens, rows, "e").unwrap()
    }

    #[test]
    fn resolve_union() {
        let e = word_tokens("a woman in a park");
        let span = resolve_selection(&["woman".into(), "park".into()], &e).unwrap();
        assert_eq!(span, TokenSpan::new([1, 4]).unwrap());
        let e = word_tokens("lighthouse");
        assert_eq!(resolve_selection(&["lighthouse".into()], &e).unwrap(), TokenSpan::single(0));
        assert!(matches!(
            resolve_selection(&["cliff".into()], &e),
            Err(SelectError::Unresolvable { .. })
        ));
    }

    #[test]
    fn edit_type_parsing() {
        assert_eq!("Global".parse::<EditType>().unwrap(), EditType::Global);
        assert!("scene".parse::<EditType>().is_err());
        assert_eq!(serde_json::to_string(&EditType::Stylization).unwrap(), "\"stylization\"");
    }
}
