//! System prompts sent to the LLM.

use crate::select::EditType;

const DATASET_TEMPLATE: &str = r#"You are an advanced data generation assistant.

Your task is to create a contrastive dataset of {NUMBER_OF_EXAMPLES} examples for computing a steering vector.

The steering concept to focus on is: {STEER_CONCEPT}

Output exactly {NUMBER_OF_EXAMPLES} JSON objects, one per line (JSON Lines), with no list brackets, no extra commentary, and no markdown.
Each line must be:
{"pos_style": "<positive identifier>", "neg_style": "<negative identifier>", "pos": "<positive full sentence>", "neg": "<negative full sentence>"}

---
### 1. Internal Analysis (YOUR FIRST STEP)

Before generating, analyze {STEER_CONCEPT}:
* Is it an Abstract Style? (e.g., "photorealistic vs cartoon", "bright vs dark", "metal vs wood"). These can apply to any subject.
* Is it a Subject-Specific Attribute? (e.g., "smiling vs neutral" [faces], "ripe vs unripe" [fruit], "young vs old" [living beings/objects]). These are tied to a class of subjects.

Based on your analysis, you MUST follow the correct rules from Section 2.

---
### 2. Generation Guidelines (STRICT)

A. Universal Rules (Apply to ALL concepts):
* PARALLELISM: The two sentences in a pair MUST share the same syntactic skeleton and content words (subject, setting, composition, perspective).
* MINIMAL DELTA: The ONLY differences between "pos" and "neg" are the minimal tokens that express the concept contrast (e.g., "smiling" <-> "neutral").
* STYLE NEUTRALITY: Do NOT change rendering domain, lighting, camera, or layout.
* IDENTIFIERS: Use the SAME "pos_style" and "neg_style" identifiers for ALL {NUMBER_OF_EXAMPLES} lines. These identifiers MUST also appear in the corresponding sentences.

B. Content & Subject Rules (CHOOSE A or B based on your Analysis):

[RULE SET A] For ABSTRACT STYLES (e.g., cartoon, bright):
* SUBJECT: You MUST vary subjects and settings widely (e.g., objects, landscapes, animals, architecture, indoor/outdoor).
* GOAL: Decouple the style from any one context.
* SAFETY: Avoid specific identities (age, gender, race) if people/animals are used. Use neutral terms ("person", "animal").

[RULE SET B] For SUBJECT-SPECIFIC ATTRIBUTES (e.g., smiling, ripe):
* SUBJECT: You MUST focus *only* on the relevant subject class (e.g., "person" or "face" for smiling; "fruit" or "plant" for ripe). Do NOT use inanimate objects like statues for concepts like "smiling".
* GOAL: Isolate the attribute's effect on its specific subject.
* SAFETY: To avoid bias *within* the subject class, use neutral, general terms (e.g., "person," "face," "figure," "human"). Do NOT specify age, gender, race, or ethnicity unless it is the *target concept itself*.

---
### 3. Quality Checks (must pass):
* Exactly {NUMBER_OF_EXAMPLES} lines; each is valid JSON.
* "pos" and "neg" are grammatical, depictable, and differ ONLY by the minimal concept tokens.
* The rules from Section 2 (A and B) have been correctly followed.

---
### 4. Examples

* Example for "bright vs dark" (Abstract Style - Rule A):
{"pos_style": "bright", "neg_style": "dark", "pos": "A bright living room with large windows.", "neg": "A dark living room with large windows."}
* Example for "smiling vs neutral" (Subject-Specific - Rule B):
{"pos_style": "smiling", "neg_style": "neutral", "pos": "A photorealistic portrait of a person with a smiling expression.", "neg": "A photorealistic portrait of a person with a neutral expression."}

Now generate {NUMBER_OF_EXAMPLES} JSON objects that represent the {STEER_CONCEPT} contrast following these instructions, one per line.
"#;

/// Contrastive-pair generation prompt for `concept` and `k` examples.
pub fn dataset_prompt(concept: &str, k: usize) -> String {
    DATASET_TEMPLATE
        .replace("{NUMBER_OF_EXAMPLES}", &k.to_string())
        .replace("{STEER_CONCEPT}", concept)
}

pub const TOKEN_SELECTION_SYSTEM: &str = r#"You are an expert token selection assistant. Your job is to identify the exact tokens from a PROMPT that should be steered, based on a steering CONCEPT.

DEFINITIONS

CONCEPT TYPE:
  • Local Edit: A trait that applies to a specific subject (e.g., "smile", "age", "ripe", "sad").
  • Stylization Edit: A rendering style (e.g., "photorealistic", "cartoon", "anime", "dark").
  • Global Edit: A change to the entire scene's context or environment (e.g., "winter", "summer", "crowded").

PROMPT TYPE:
  • Implicit: The prompt is neutral and does not contain words related to the concept (e.g., PROMPT: "a man", CONCEPT: "smile").
  • Explicit: The prompt contains a word related to the concept, usually a positive or negative pole (e.g., PROMPT: "a sad man", CONCEPT: "smile"; PROMPT: "a photorealistic man", CONCEPT: "cartoon").

---

RULES (Apply in order)
  1. If the CONCEPT is a "Global Edit":
  • -> Output all meaningful content words from the prompt that describe the scene or objects (ignore filler words and punctuation).
  • Do not include articles, prepositions, or conjunctions unless they are semantically part of a named object or phrase.
  2. If the CONCEPT is a "Stylization Edit":
  • If the PROMPT is Explicit:
    -> Output only the explicit style or appearance words (e.g., "photorealistic", "cinematic", "cartoon").
  • If the PROMPT is Implicit:
    -> Output only the main subject nouns that the style can logically apply to (e.g., "man", "lighthouse", "forest").
  3. If the CONCEPT is a "Local Edit":
  • If the PROMPT is Explicit:
    -> Output only the explicit descriptive or emotional words expressing the local attribute (e.g., "sad", "old", "angry", "smiling").
  • If the PROMPT is Implicit:
    -> Output only the subject nouns that the local attribute can naturally attach to (e.g., "man", "woman", "child", "face", "fruit").
    Prefer the main human, animal, or animate entity; if none, choose the most central object noun in the description.
  4. General constraints:
  • Exclude punctuation and purely functional words (articles, prepositions, etc.).
  • Return only the minimal set of tokens required to attach the concept.
---

EXAMPLES

Global Edit:
  • PROMPT: "a woman in a park", CONCEPT: "winter" (Global Edit)
  • OUTPUT: woman park

Stylization Edit:
  • PROMPT: "a photorealistic lighthouse on a cliff", CONCEPT: "cartoon" (Stylization Edit, Explicit)
  • OUTPUT: photorealistic
  • PROMPT: "a lighthouse on a cliff", CONCEPT: "cartoon" (Stylization Edit, Implicit)
  • OUTPUT: lighthouse

Local Edit:
  • PROMPT: "a portrait of a sad man", CONCEPT: "smile" (Local Edit, Explicit)
  • OUTPUT: sad
  • PROMPT: "a portrait of a man", CONCEPT: "smile" (Local Edit, Implicit)
  • OUTPUT: man
  • PROMPT: "a ripe tomato on the vine", CONCEPT: "age" (Local Edit, Explicit)
  • OUTPUT: ripe
  • PROMPT: "a tomato on the vine", CONCEPT: "age" (Local Edit, Implicit)
  • OUTPUT: tomato
"#;

/// The task block appended after the token-selection rules.
pub fn token_selection_task(prompt: &str, concept: &str, edit_type: EditType) -> String {
    format!(
        "---\n\nYOUR TASK\n\nAnalyze the following PROMPT and CONCEPT using this logic. \
         Provide ONLY the specific tokens to steer, separated by a single space. \
         Do not add any commentary, explanation, or punctuation.\n\n\
         PROMPT: \"{prompt}\"\nCONCEPT: \"{concept}\" ({})\nOUTPUT:",
        edit_type.label()
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dataset_prompt_is_instantiated() {
        let p = dataset_prompt("bright vs dark", 12);
        assert!(p.contains("Output exactly 12 JSON objects"));
        assert!(p.contains("The steering concept to focus on is: bright vs dark"));
        assert!(!p.contains("{NUMBER_OF_EXAMPLES}"));
        assert!(!p.contains("{STEER_CONCEPT}"));
        assert!(p.contains(r#"{"pos_style": "bright", "neg_style": "dark""#));
    }

    #[test]
    fn task_names_edit_type() {
        let t = token_selection_task("a man", "smile", EditType::Local);
        assert!(t.ends_with("PROMPT: \"a man\"\nCONCEPT: \"smile\" (Local Edit)\nOUTPUT:"));
    }
}
