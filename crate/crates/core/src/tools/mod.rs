//! The per-dataset tool registry.
//!
//! A tool either transforms the conversation's current image (enhancement
//! filters, map navigation) or returns a scalar (the probe's prediction).
//! Every result carries a fixed-template sentence that is sent back to the model.

pub mod geo;
pub mod image_ops;

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::DatasetKind;
use crate::embedding::{EmbeddingProvider, ProviderError};
use crate::probe::{mlp_forward, MlpParams, ProbeError};
use crate::raster::{Raster, RasterError};

pub use geo::{
    fetch_view, FixtureTileProvider, NavMode, PanDirection, TileError, TileProvider, Viewport, ZoomBounds,
    ZoomDirection,
};
pub use image_ops::{adjust_brightness, adjust_contrast, edge_detect, histogram_equalize, sharpen, ContrastDirection};

#[derive(Debug, Error)]
pub enum ToolError {
    #[error("unknown tool `{0}`")]
    UnknownTool(String),
    #[error("image is {width}x{height}; this tool needs at least {min}x{min}")]
    ImageTooSmall { width: usize, height: usize, min: usize },
    #[error("missing dependency: {0}")]
    MissingDependency(&'static str),
    #[error("no geospatial position for this image")]
    NoViewport,
    #[error(transparent)]
    Tile(#[from] TileError),
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error(transparent)]
    Probe(#[from] ProbeError),
    #[error(transparent)]
    Raster(#[from] RasterError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ToolKind {
    ImageTransform,
    Scalar,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolDescriptor {
    pub name: String,
    pub description: String,
    pub kind: ToolKind,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ToolPayload {
    Image(Raster),
    Scalar(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToolResult {
    pub payload: ToolPayload,
    pub message: String,
    pub produced_by: String,
}

impl ToolResult {
    /// Short description for transcripts.
    pub fn summary(&self) -> String {
        match &self.payload {
            ToolPayload::Image(r) => format!("image {}x{}", r.width(), r.height()),
            ToolPayload::Scalar(v) => format!("{v:.4}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ToolOp {
    Predict,
    Brightness,
    Sharpen,
    EdgeDetect,
    Contrast(ContrastDirection),
    Equalize,
    Pan(PanDirection, NavMode),
    Zoom(ZoomDirection, NavMode),
}

/// Mutable per-conversation state the tools act on.
#[derive(Debug, Clone)]
pub struct ToolState {
    /// The most recent image shown to the model.
    pub image: Raster,
    pub viewport: Option<Viewport>,
}

impl ToolState {
    pub fn new(image: Raster) -> Self {
        Self { image, viewport: None }
    }

    pub fn with_viewport(image: Raster, viewport: Viewport) -> Self {
        Self {
            image,
            viewport: Some(viewport),
        }
    }
}

/// Dependencies a registry may need, by dataset kind.
#[derive(Clone, Default)]
pub struct ToolDeps {
    pub probe: Option<Arc<MlpParams>>,
    pub embedder: Option<Arc<dyn EmbeddingProvider>>,
    pub tiles: Option<Arc<dyn TileProvider>>,
}

#[derive(Clone)]
pub struct ToolRegistry {
    kind: DatasetKind,
    tools: Vec<(ToolDescriptor, ToolOp)>,
    deps: ToolDeps,
}

impl std::fmt::Debug for ToolRegistry {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ToolRegistry")
            .field("kind", &self.kind)
            .field("tools", &self.names())
            .finish()
    }
}

const PREDICT_AQUACULTURE: &str = "Predicts the probability of an aquaculture pond being present in the image using a machine learning model. This tool is particularly helpful when you need a quantitative assessment of the likelihood of aquaculture pond presence in the satellite image.";
const PREDICT_EELGRASS: &str = "Predicts the probability of eelgrass wasting disease in the image using a machine learning model. This tool is particularly helpful when you need a quantitative assessment of the likelihood of disease presence in the eelgrass sample.";
const PREDICT_SOLAR: &str = "Predicts the probability of a solar panel being in the image using a machine learning model. This tool is particularly helpful when you need a quantitative assessment of the likelihood of a solar panel being present in the image.";

fn aquaculture_tools() -> Vec<(&'static str, &'static str, ToolOp)> {
    use NavMode::*;
    use PanDirection::*;
    use ZoomDirection::*;
    vec![
        ("PredictAquaculturePondTool", PREDICT_AQUACULTURE, ToolOp::Predict),
        ("PanUpToolRelative", "Pans the view upwards relative to the last image seen.", ToolOp::Pan(Up, Relative)),
        ("PanUpToolAbsolute", "Pans the view upwards relative to the original starting image.", ToolOp::Pan(Up, Absolute)),
        ("PanDownToolRelative", "Pans the view downwards relative to the last image seen.", ToolOp::Pan(Down, Relative)),
        ("PanDownToolAbsolute", "Pans the view downwards relative to the original starting image.", ToolOp::Pan(Down, Absolute)),
        ("PanLeftToolRelative", "Pans the view to the left relative to the last image seen.", ToolOp::Pan(Left, Relative)),
        ("PanLeftToolAbsolute", "Pans the view to the left relative to the original starting image.", ToolOp::Pan(Left, Absolute)),
        ("PanRightToolRelative", "Pans the view to the right relative to the last image seen.", ToolOp::Pan(Right, Relative)),
        ("PanRightToolAbsolute", "Pans the view to the right relative to the original starting image.", ToolOp::Pan(Right, Absolute)),
        ("ZoomInToolRelative", "Zooms in on the center of the current view relative to the last image seen.", ToolOp::Zoom(In, Relative)),
        ("ZoomInToolAbsolute", "Zooms in on the center of the original view relative to the original starting image.", ToolOp::Zoom(In, Absolute)),
        ("ZoomOutToolRelative", "Zooms out from the current view relative to the last image seen.", ToolOp::Zoom(Out, Relative)),
        ("ZoomOutToolAbsolute", "Zooms out from the original view relative to the original starting image.", ToolOp::Zoom(Out, Absolute)),
    ]
}

fn eelgrass_tools() -> Vec<(&'static str, &'static str, ToolOp)> {
    use ContrastDirection::*;
    vec![
        ("AdjustBrightnessTool", "Adjusts the brightness of the image by 50%. This tool can help when the image is too dark or too bright, allowing for better visibility of disease symptoms on the eelgrass blade.", ToolOp::Brightness),
        ("SharpenTool", "Sharpens the image to enhance edges and details. This tool is useful for making subtle features more prominent, which can help in identifying signs of eelgrass wasting disease.", ToolOp::Sharpen),
        ("EdgeDetectionTool", "Applies edge detection to the image, highlighting boundaries and features. This can help in identifying lesions or patterns associated with eelgrass wasting disease.", ToolOp::EdgeDetect),
        ("IncreaseContrastTool", "Increases the contrast of the image by 50%. This tool can be helpful when the image appears too flat or when you need to enhance the visibility of subtle details, especially in cases where eelgrass wasting disease symptoms might be hard to distinguish.", ToolOp::Contrast(Increase)),
        ("DecreaseContrastTool", "Decreases the contrast of the image by 50%. This tool can be useful when the image appears too harsh or when you want to reduce the intensity of bright areas, which might help in identifying overall patterns or structures in the eelgrass.", ToolOp::Contrast(Decrease)),
        ("PredictEelgrassWastingDiseaseTool", PREDICT_EELGRASS, ToolOp::Predict),
        ("HistogramEqualizationTool", "Enhances the contrast of the image using histogram equalization. This can help in making features more distinguishable, which is beneficial for detecting eelgrass wasting disease symptoms.", ToolOp::Equalize),
    ]
}

fn solar_tools() -> Vec<(&'static str, &'static str, ToolOp)> {
    use ContrastDirection::*;
    vec![
        ("HistogramEqualizationTool", "Enhances the contrast of the image using histogram equalization. This can help in making features more distinguishable, which is beneficial for detecting solar panels and potential defects.", ToolOp::Equalize),
        ("AdjustBrightnessTool", "Adjusts the brightness of the image by 50%. This tool can help when the image is too dark or too bright, allowing for better visibility of solar panels and their features.", ToolOp::Brightness),
        ("SharpenTool", "Sharpens the image to enhance edges and details. This tool is useful for making subtle features more prominent, which can help in identifying solar panels and potential defects.", ToolOp::Sharpen),
        ("EdgeDetectionTool", "Applies edge detection to the image, highlighting boundaries and features. This can help in identifying the outlines of solar panels and potential defects or anomalies.", ToolOp::EdgeDetect),
        ("IncreaseContrastTool", "Increases the contrast of the image by 50%. This tool can be helpful when the image appears too flat or when you need to enhance the visibility of subtle details, especially in cases where solar panels might be hard to distinguish from their surroundings.", ToolOp::Contrast(Increase)),
        ("DecreaseContrastTool", "Decreases the contrast of the image by 50%. This tool can be useful when the image appears too harsh or when you want to reduce the intensity of bright areas, which might help in identifying overall patterns or structures in the solar panel array.", ToolOp::Contrast(Decrease)),
        ("PredictSolarPanelTool", PREDICT_SOLAR, ToolOp::Predict),
    ]
}

fn kind_of(op: ToolOp) -> ToolKind {
    match op {
        ToolOp::Predict => ToolKind::Scalar,
        _ => ToolKind::ImageTransform,
    }
}

fn pan_word(d: PanDirection) -> &'static str {
    match d {
        PanDirection::Up => "up",
        PanDirection::Down => "down",
        PanDirection::Left => "left",
        PanDirection::Right => "right",
    }
}

fn reference_phrase(mode: NavMode) -> &'static str {
    match mode {
        NavMode::Relative => "the last image seen",
        NavMode::Absolute => "the original starting image",
    }
}

/// Template sent back after the probe tool runs.
pub fn prediction_message(p: f64) -> String {
    format!("The machine learning model predicts a probability of {p:.2} that the target is present.")
}

fn view_message(action: String, view: &Viewport) -> String {
    format!(
        "{action} The new view is centered at latitude {:.6}, longitude {:.6}, zoom level {}. The new image is attached.",
        view.lat(),
        view.lon(),
        view.zoom()
    )
}

impl ToolRegistry {
    /// A registry with no tools (retrieval-only and zero-shot variants).
    pub fn empty(kind: DatasetKind) -> Self {
        Self {
            kind,
            tools: Vec::new(),
            deps: ToolDeps::default(),
        }
    }

    pub fn kind(&self) -> DatasetKind {
        self.kind
    }

    pub fn descriptors(&self) -> impl Iterator<Item = &ToolDescriptor> {
        self.tools.iter().map(|(d, _)| d)
    }

    pub fn names(&self) -> Vec<&str> {
        self.tools.iter().map(|(d, _)| d.name.as_str()).collect()
    }

    pub fn len(&self) -> usize {
        self.tools.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tools.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<&ToolDescriptor> {
        self.tools.iter().find(|(d, _)| d.name == name).map(|(d, _)| d)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.get(name).is_some()
    }

    pub fn tile_provider(&self) -> Option<&Arc<dyn TileProvider>> {
        self.deps.tiles.as_ref()
    }

    /// Runs tool `name` against `state`, updating the current image (and
    /// viewport) for image-producing tools.
    pub fn execute(&self, name: &str, state: &mut ToolState) -> Result<ToolResult, ToolError> {
        let (desc, op) = self
            .tools
            .iter()
            .find(|(d, _)| d.name == name)
            .ok_or_else(|| ToolError::UnknownTool(name.to_string()))?;
        let (payload, message) = match *op {
            ToolOp::Predict => {
                let probe = self.deps.probe.as_ref().ok_or(ToolError::MissingDependency("probe"))?;
                let embedder = self.deps.embedder.as_ref().ok_or(ToolError::MissingDependency("embedder"))?;
                let p = predict_tool(probe, embedder.as_ref(), &state.image)?;
                (ToolPayload::Scalar(p), prediction_message(p))
            }
            ToolOp::Brightness => (
                ToolPayload::Image(adjust_brightness(&state.image)),
                "The brightness of the image was increased by 50%. The adjusted image is attached.".to_string(),
            ),
            ToolOp::Sharpen => (
                ToolPayload::Image(sharpen(&state.image)?),
                "The image was sharpened to enhance edges and details. The sharpened image is attached.".to_string(),
            ),
            ToolOp::EdgeDetect => (
                ToolPayload::Image(edge_detect(&state.image)?),
                "Edge detection was applied to the image. The edge map is attached.".to_string(),
            ),
            ToolOp::Contrast(d) => {
                let word = match d {
                    ContrastDirection::Increase => "increased",
                    ContrastDirection::Decrease => "decreased",
                };
                (
                    ToolPayload::Image(adjust_contrast(&state.image, d)),
                    format!("The contrast of the image was {word} by 50%. The adjusted image is attached."),
                )
            }
            ToolOp::Equalize => (
                ToolPayload::Image(histogram_equalize(&state.image)),
                "Histogram equalization was applied to the image. The equalized image is attached.".to_string(),
            ),
            ToolOp::Pan(dir, mode) => {
                let tiles = self.deps.tiles.as_ref().ok_or(ToolError::MissingDependency("tile provider"))?;
                let view = state.viewport.ok_or(ToolError::NoViewport)?;
                let next = view.pan(dir, mode)?;
                let img = fetch_view(tiles.as_ref(), &next)?;
                state.viewport = Some(next);
                let action = format!(
                    "The view was panned {} relative to {}.",
                    pan_word(dir),
                    reference_phrase(mode)
                );
                (ToolPayload::Image(img), view_message(action, &next))
            }
            ToolOp::Zoom(dir, mode) => {
                let tiles = self.deps.tiles.as_ref().ok_or(ToolError::MissingDependency("tile provider"))?;
                let view = state.viewport.ok_or(ToolError::NoViewport)?;
                let next = view.zoom_step(dir, mode, tiles.zoom_bounds())?;
                let img = fetch_view(tiles.as_ref(), &next)?;
                state.viewport = Some(next);
                let word = match dir {
                    ZoomDirection::In => "in",
                    ZoomDirection::Out => "out",
                };
                let action = format!("The view was zoomed {word} relative to {}.", reference_phrase(mode));
                (ToolPayload::Image(img), view_message(action, &next))
            }
        };
        if let ToolPayload::Image(img) = &payload {
            state.image = img.clone();
        }
        Ok(ToolResult {
            payload,
            message,
            produced_by: desc.name.clone(),
        })
    }
}

/// Embeds `image` and returns the probe's probability of the positive class.
pub fn predict_tool(probe: &MlpParams, embedder: &dyn EmbeddingProvider, image: &Raster) -> Result<f64, ToolError> {
    let e = embedder.embed_image(image)?;
    Ok(mlp_forward(probe, &e)?)
}

/// Tool names offered for a dataset kind, in registry order.
pub fn tool_names(kind: DatasetKind) -> Vec<&'static str> {
    let list = match kind {
        DatasetKind::Aquaculture => aquaculture_tools(),
        DatasetKind::Eelgrass => eelgrass_tools(),
        DatasetKind::Solar => solar_tools(),
    };
    list.into_iter().map(|(n, _, _)| n).collect()
}

/// Builds the tool set for a dataset kind. Aquaculture needs a tile provider;
/// every kind needs a probe and an embedder for its prediction tool.
pub fn build_registry(kind: DatasetKind, deps: ToolDeps) -> Result<ToolRegistry, ToolError> {
    if deps.probe.is_none() {
        return Err(ToolError::MissingDependency("probe"));
    }
    if deps.embedder.is_none() {
        return Err(ToolError::MissingDependency("embedder"));
    }
    let list = match kind {
        DatasetKind::Aquaculture => {
            if deps.tiles.is_none() {
                return Err(ToolError::MissingDependency("tile provider"));
            }
            aquaculture_tools()
        }
        DatasetKind::Eelgrass => eelgrass_tools(),
        DatasetKind::Solar => solar_tools(),
    };
    let tools = list
        .into_iter()
        .map(|(name, description, op)| {
            (
                ToolDescriptor {
                    name: name.to_string(),
                    description: description.to_string(),
                    kind: kind_of(op),
                },
                op,
            )
        })
        .collect();
    Ok(ToolRegistry { kind, tools, deps })
}
