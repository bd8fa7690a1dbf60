use std::collections::HashMap;

use super::{
    assemble_system_prompt, parse_assistant_turn, AgentConfig, AgentError, AssistantTurn, ChatOptions, Example,
    LmmClient, Message, ToolCallRecord, Transcript, FORCING_MESSAGE,
};
use crate::domain::{DatasetKind, DatasetManifest, LabeledImage, Prediction};
use crate::embedding::{EmbeddingError, EmbeddingProvider, EmbeddingStore};
use crate::raster::Raster;
use crate::tools::{ToolPayload, ToolRegistry, ToolState, Viewport};

const FORMAT_REMINDER: &str = "Your reply did not follow the required format. Reply with a line \
    `TOOL: <tool name>` to use a tool, or `ANSWER: <positive|negative> CONFIDENCE: <0.00-1.00>` to answer.";

/// Pixels of labeled training images, looked up by id.
pub trait ExampleImages: Send + Sync {
    fn example_image(&self, id: &str) -> Result<Raster, String>;
}

impl ExampleImages for DatasetManifest {
    fn example_image(&self, id: &str) -> Result<Raster, String> {
        let (i, _) = self.find(id).ok_or_else(|| format!("no entry `{id}`"))?;
        self.load_image(i).map(|li| li.pixels).map_err(|e| e.to_string())
    }
}

impl ExampleImages for HashMap<String, Raster> {
    fn example_image(&self, id: &str) -> Result<Raster, String> {
        self.get(id).cloned().ok_or_else(|| format!("no image `{id}`"))
    }
}

/// What one conversation may use. `store: None` disables retrieval; an empty
/// registry disables tools.
pub struct InferenceContext<'a> {
    pub kind: DatasetKind,
    pub store: Option<&'a EmbeddingStore>,
    pub embedder: &'a dyn EmbeddingProvider,
    pub examples: &'a dyn ExampleImages,
    pub registry: &'a ToolRegistry,
    pub llm: &'a dyn LmmClient,
}

/// Identity and timestamp recorded in the transcript.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunMeta {
    pub conversation_id: String,
    pub created_at: String,
}

pub fn unknown_tool_message(name: &str, registry: &ToolRegistry) -> String {
    if registry.is_empty() {
        format!("Unknown tool `{name}`. No tools are available in this conversation; give your final answer.")
    } else {
        format!("Unknown tool `{name}`. Valid tools are: {}.", registry.names().join(", "))
    }
}

/// Runs one bounded classification conversation.
///
/// At most `max_turns` assistant turns are requested, plus one more after the
/// forcing message if none of them answered. Tool failures are reported to the
/// model inside the conversation; only model and retrieval failures abort.
pub fn run_inference(
    test: &LabeledImage,
    ctx: &InferenceContext<'_>,
    config: &AgentConfig,
    meta: RunMeta,
) -> Result<(Prediction, Transcript), AgentError> {
    config.validate()?;
    let tools = (!ctx.registry.is_empty()).then_some(ctx.registry);

    let mut transcript = Transcript {
        conversation_id: meta.conversation_id,
        dataset_kind: ctx.kind,
        test_image_id: test.id.clone(),
        messages: Vec::new(),
        tool_calls: Vec::new(),
        final_prediction: None,
        visrag_pos_id: None,
        visrag_neg_id: None,
        visrag_pos_similarity: None,
        visrag_neg_similarity: None,
        model_id: ctx.llm.model_id(),
        created_at: meta.created_at,
    };

    let examples = match ctx.store {
        Some(store) => {
            let q = ctx.embedder.embed_image(&test.pixels).map_err(EmbeddingError::from)?;
            let hit = store.retrieve_visrag(&q)?;
            let load = |id: &str, similarity: f64| {
                ctx.examples
                    .example_image(id)
                    .map(|image| Example { image, similarity })
                    .map_err(|message| AgentError::Example {
                        id: id.to_string(),
                        message,
                    })
            };
            let pos = load(&hit.pos_id, hit.pos_similarity)?;
            let neg = load(&hit.neg_id, hit.neg_similarity)?;
            transcript.visrag_pos_id = Some(hit.pos_id);
            transcript.visrag_neg_id = Some(hit.neg_id);
            transcript.visrag_pos_similarity = Some(hit.pos_similarity);
            transcript.visrag_neg_similarity = Some(hit.neg_similarity);
            Some((pos, neg))
        }
        None => None,
    };

    let system = assemble_system_prompt(
        config,
        ctx.kind,
        tools,
        examples.as_ref().map(|(p, n)| (p, n)),
        &test.pixels,
    )?;
    transcript.messages.push(system);

    let viewport = match (test.geo, ctx.registry.tile_provider()) {
        (Some(geo), Some(tiles)) => Viewport::new(
            geo,
            test.pixels.width() as u32,
            test.pixels.height() as u32,
            tiles.zoom_bounds(),
        )
        .ok(),
        _ => None,
    };
    let mut state = ToolState {
        image: test.pixels.clone(),
        viewport,
    };
    let opts = ChatOptions {
        temperature: config.temperature,
        seed: config.seed,
    };

    for turn in 1..=config.max_turns {
        let reply = ctx.llm.chat(&transcript.messages, &opts)?;
        transcript.messages.push(Message::assistant(reply.clone()));
        match parse_assistant_turn(&reply) {
            AssistantTurn::Final { label, confidence } => {
                let p = Prediction::new(label, confidence).expect("grammar bounds confidence");
                transcript.final_prediction = Some(p);
                return Ok((p, transcript));
            }
            AssistantTurn::Tool(request) => {
                if !ctx.registry.contains(&request.tool_name) {
                    transcript
                        .messages
                        .push(Message::user(unknown_tool_message(&request.tool_name, ctx.registry)));
                    continue;
                }
                let name = request.tool_name.clone();
                let (mut msg, summary, ok) = match ctx.registry.execute(&name, &mut state) {
                    Ok(result) => {
                        let summary = result.summary();
                        let msg = match result.payload {
                            ToolPayload::Image(img) => Message::user(result.message).with_image(format!("{name} output"), img),
                            ToolPayload::Scalar(_) => Message::user(result.message),
                        };
                        (msg, summary, true)
                    }
                    Err(e) => (
                        Message::user(format!(
                            "The tool {name} failed: {e}. Choose another tool or give your final answer."
                        )),
                        format!("error: {e}"),
                        false,
                    ),
                };
                msg.tool = Some(name);
                transcript.messages.push(msg);
                transcript.tool_calls.push(ToolCallRecord {
                    turn,
                    request,
                    result_summary: summary,
                    ok,
                });
            }
            AssistantTurn::Unparseable => transcript.messages.push(Message::user(FORMAT_REMINDER)),
        }
    }

    transcript.messages.push(Message::user(FORCING_MESSAGE));
    let reply = ctx.llm.chat(&transcript.messages, &opts)?;
    transcript.messages.push(Message::assistant(reply.clone()));
    let p = match parse_assistant_turn(&reply) {
        AssistantTurn::Final { label, confidence } => Prediction::new(label, confidence).expect("grammar bounds confidence"),
        _ => Prediction::inconclusive(),
    };
    transcript.final_prediction = Some(p);
    Ok((p, transcript))
}
