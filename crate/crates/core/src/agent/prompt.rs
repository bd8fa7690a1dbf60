use std::fmt::Write as _;

use super::{AgentConfig, AgentError, Message};
use crate::domain::DatasetKind;
use crate::raster::Raster;
use crate::tools::ToolRegistry;

pub const TEST_CAPTION: &str = "Test image";
pub const POSITIVE_CAPTION: &str = "Known positive example";
pub const NEGATIVE_CAPTION: &str = "Known negative example";

/// Sent once when the turn budget runs out without an answer.
pub const FORCING_MESSAGE: &str = "You must now answer.";

/// A retrieved example and its cosine similarity to the test image.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub image: Raster,
    pub similarity: f64,
}

pub fn default_domain_prompt(kind: DatasetKind) -> &'static str {
    match kind {
        DatasetKind::Aquaculture => {
            "You are an expert in remote sensing helping to map aquaculture. You will look at a satellite \
             image and decide whether it contains aquaculture ponds: man-made, often rectangular water bodies \
             arranged in grids and separated by earthen walls, usually near coasts or rivers."
        }
        DatasetKind::Eelgrass => {
            "You are an expert marine ecologist studying seagrass health. You will look at a scanned image of an \
             eelgrass blade and decide whether it shows wasting disease: dark brown or black lesions, often with \
             irregular edges, on an otherwise green blade."
        }
        DatasetKind::Solar => {
            "You are an expert in remote sensing helping to map renewable energy infrastructure. You will look at \
             an aerial image and decide whether it contains solar panels: dark, uniform, rectangular arrays with \
             regular spacing, on rooftops or on the ground."
        }
    }
}

/// Builds the single system message that opens every conversation.
///
/// `registry` is `None` for variants without tools; a present registry must
/// not be empty. `examples` is `(positive, negative)` for variants with
/// retrieval.
pub fn assemble_system_prompt(
    config: &AgentConfig,
    kind: DatasetKind,
    registry: Option<&ToolRegistry>,
    examples: Option<(&Example, &Example)>,
    test_image: &Raster,
) -> Result<Message, AgentError> {
    config.validate()?;
    if registry.is_some_and(|r| r.is_empty()) {
        return Err(AgentError::EmptyRegistry);
    }
    let target = kind.target_phrase();
    let mut text = String::new();
    text.push_str(&config.domain_text(kind));
    text.push_str("\n\n");
    let _ = writeln!(text, "The image to classify is attached as \"{TEST_CAPTION}\".");
    let mut msg = Message::system(String::new()).with_image(TEST_CAPTION, test_image.clone());

    if let Some((pos, neg)) = examples {
        let _ = write!(
            text,
            "\nFor reference, two labeled images retrieved from the training set are attached. \
             \"{POSITIVE_CAPTION}\" is the most similar image known to contain {target} (cosine similarity {:.4}). \
             \"{NEGATIVE_CAPTION}\" is the most similar image known not to contain {target} (cosine similarity {:.4}).\n",
            pos.similarity, neg.similarity
        );
        msg = msg
            .with_image(POSITIVE_CAPTION, pos.image.clone())
            .with_image(NEGATIVE_CAPTION, neg.image.clone());
    }

    if let Some(reg) = registry {
        text.push_str("\nYou can request the following tools:\n");
        for d in reg.descriptors() {
            let _ = writeln!(text, "- {}: {}", d.name, d.description);
        }
        text.push_str(
            "\nTo request a tool, reply with a line of the form:\nTOOL: <tool name>\n\
             Request one tool per reply. The tool's result will be sent back to you.\n",
        );
    }

    let _ = write!(
        text,
        "\nTo give your final answer, reply with a line of the form:\n\
         ANSWER: <positive|negative> CONFIDENCE: <number between 0.00 and 1.00>\n\
         Answer positive if the test image shows {target} and negative otherwise. \
         CONFIDENCE is the probability that your answer is correct.\n\n"
    );
    if registry.is_some() {
        let _ = write!(
            text,
            "Use at least {} tools before giving your final answer, and answer within {} turns.",
            config.min_tools_encouraged, config.max_turns
        );
    } else {
        let _ = write!(text, "Give your final answer within {} turns.", config.max_turns);
    }
    msg.text = text;
    Ok(msg)
}
