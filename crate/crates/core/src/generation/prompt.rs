use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::parse::format_output;
use super::GenerationError;
use crate::types::ConversationSession;

const DEFAULT_INSTRUCTION: &str = "For an information-seeking dialog, please help reformulate the question into a rewrite that fully expresses the user's information need without the context, and also generate an informative response to answer the question. Several example multi-turn dialogs follow, where each turn contains a question together with the rewrite and response you need to generate. The rewrite part begins with a sentence explaining the reason for the rewrite.";

const DEFAULT_OUTPUT_INSTRUCTION: &str = "Now give the rewrite and response of the Current Question under the Context. The output format should always be: \"Rewrite: $Reason. So the question should be rewritten as: $Rewrite\\nResponse: $Response.\" Always try to rewrite the question and generate an informative response. Never ask for clarification or say you do not understand it. Go ahead!";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DemoTurn {
    pub question: String,
    pub reason: String,
    pub rewrite: String,
    pub response: String,
}

/// A complete example conversation with reference rewrites.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Demonstration {
    pub turns: Vec<DemoTurn>,
}

/// Instruction, demonstrations and output-format instruction. The rendered
/// prompt lists them in that order around the session block.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub instruction: String,
    #[serde(default)]
    pub demonstrations: Vec<Demonstration>,
    pub output_instruction: String,
}

impl Default for PromptTemplate {
    fn default() -> Self {
        let turn = |q: &str, reason: &str, rw: &str, resp: &str| DemoTurn {
            question: q.into(),
            reason: reason.into(),
            rewrite: rw.into(),
            response: resp.into(),
        };
        Self {
            instruction: DEFAULT_INSTRUCTION.into(),
            demonstrations: vec![Demonstration {
                turns: vec![
                    turn(
                        "What should I consider when buying a phone?",
                        "This is the first turn.",
                        "What should I consider when buying a phone?",
                        "Design, build quality and how the phone feels in your hand matter most. Older or refurbished models can save money while still covering what you need.",
                    ),
                    turn(
                        "Cool. Which one would you recommend?",
                        "Based on Turn 1, you are asking what to consider when buying a phone.",
                        "Cool. Which smartphone would you recommend for me?",
                        "For a modest budget, a mid-range Android phone with a large battery is a good choice; cheaper models in the same line cover the basics.",
                    ),
                ],
            }],
            output_instruction: DEFAULT_OUTPUT_INSTRUCTION.into(),
        }
    }
}

impl PromptTemplate {
    pub fn load(path: &Path) -> Result<Self, GenerationError> {
        let text =
            fs::read_to_string(path).map_err(|e| GenerationError::Template(format!("{}: {e}", path.display())))?;
        let t: Self =
            serde_json::from_str(&text).map_err(|e| GenerationError::Template(format!("{}: {e}", path.display())))?;
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<(), GenerationError> {
        if self.instruction.trim().is_empty() {
            return Err(GenerationError::Template("instruction is empty".into()));
        }
        if self.output_instruction.trim().is_empty() {
            return Err(GenerationError::Template("output instruction is empty".into()));
        }
        if self.demonstrations.iter().any(|d| d.turns.is_empty()) {
            return Err(GenerationError::Template("demonstration without turns".into()));
        }
        Ok(())
    }

    /// Renders the prompt for `session`. The context block holds the history
    /// turns in order and is empty for a first turn.
    pub fn render(&self, session: &ConversationSession) -> Result<String, GenerationError> {
        self.validate()?;
        let mut out = String::new();
        out.push_str(self.instruction.trim());
        out.push_str("\n\n");
        for (k, demo) in self.demonstrations.iter().enumerate() {
            let _ = writeln!(out, "Example #{}:", k + 1);
            for t in &demo.turns {
                let _ = writeln!(out, "Question: {}", t.question);
                out.push_str(&format_output(&t.reason, &t.rewrite, &t.response));
                out.push_str("\n\n");
            }
        }
        out.push_str("Context:\n");
        for (i, turn) in session.history().iter().enumerate() {
            let _ = writeln!(out, "Turn {}:", i + 1);
            let _ = writeln!(out, "Question: {}", turn.query());
            let _ = writeln!(out, "Response: {}", turn.response());
        }
        let _ = write!(out, "\nCurrent Question: {}\n\n", session.current_query());
        out.push_str(self.output_instruction.trim());
        out.push('\n');
        Ok(out)
    }
}
