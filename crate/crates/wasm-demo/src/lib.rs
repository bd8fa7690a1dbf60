//! WebAssembly bindings for the static demo page in `www/`.
//!
//! Images cross the boundary as RGBA byte buffers, the layout of a canvas
//! `ImageData`.

use visagent_core::domain::{DatasetKind, GeoTag};
use visagent_core::embedding::{EmbeddingStore, EmbeddingVector};
use visagent_core::raster::Raster;
use visagent_core::synthetic::render_item;
use visagent_core::tools::{
    adjust_brightness, adjust_contrast, edge_detect, fetch_view, histogram_equalize, sharpen, ContrastDirection,
    FixtureTileProvider, NavMode, PanDirection, Viewport, ZoomBounds, ZoomDirection,
};
use wasm_bindgen::prelude::*;

fn kind(name: &str) -> Result<DatasetKind, String> {
    name.parse().map_err(|e: visagent_core::domain::DomainError| e.to_string())
}

/// Names accepted by [`apply_tool`].
#[wasm_bindgen]
pub fn tool_list() -> Vec<String> {
    ["brightness", "contrast_up", "contrast_down", "sharpen", "edges", "equalize"]
        .map(String::from)
        .to_vec()
}

/// Applies one enhancement tool to an RGBA image and returns RGBA.
#[wasm_bindgen]
pub fn apply_tool(rgba: &[u8], width: usize, height: usize, tool: &str) -> Result<Vec<u8>, String> {
    let img = Raster::from_rgba(width, height, rgba).map_err(|e| e.to_string())?;
    let out = match tool {
        "brightness" => adjust_brightness(&img),
        "contrast_up" => adjust_contrast(&img, ContrastDirection::Increase),
        "contrast_down" => adjust_contrast(&img, ContrastDirection::Decrease),
        "sharpen" => sharpen(&img).map_err(|e| e.to_string())?,
        "edges" => edge_detect(&img).map_err(|e| e.to_string())?,
        "equalize" => histogram_equalize(&img),
        other => return Err(format!("unknown tool `{other}`")),
    };
    Ok(out.to_rgba())
}

/// A procedural sample image (`eelgrass`, `solar` or `aquaculture`) as RGBA.
#[wasm_bindgen]
pub fn sample_image(dataset: &str, positive: bool, size: usize, seed: u64) -> Result<Vec<u8>, String> {
    if size < 8 {
        return Err("size must be at least 8".into());
    }
    Ok(render_item(kind(dataset)?, positive, size, seed, 0).0.to_rgba())
}

/// A pannable, zoomable view of the fixture landscape.
#[wasm_bindgen]
pub struct MapView {
    view: Viewport,
    tiles: FixtureTileProvider,
}

fn pan_direction(name: &str) -> Result<PanDirection, String> {
    match name {
        "up" => Ok(PanDirection::Up),
        "down" => Ok(PanDirection::Down),
        "left" => Ok(PanDirection::Left),
        "right" => Ok(PanDirection::Right),
        other => Err(format!("unknown direction `{other}`")),
    }
}

fn nav_mode(absolute: bool) -> NavMode {
    if absolute {
        NavMode::Absolute
    } else {
        NavMode::Relative
    }
}

#[wasm_bindgen]
impl MapView {
    #[wasm_bindgen(constructor)]
    pub fn new(lat: f64, lon: f64, zoom: u8, width: u32, height: u32, seed: u64) -> Result<MapView, String> {
        let geo = GeoTag { lat, lon, zoom };
        let view = Viewport::new(geo, width, height, ZoomBounds::default()).map_err(|e| e.to_string())?;
        Ok(MapView {
            view,
            tiles: FixtureTileProvider::new(seed),
        })
    }

    /// `direction` is `up`, `down`, `left` or `right`.
    pub fn pan(&mut self, direction: &str, absolute: bool) -> Result<(), String> {
        self.view = self
            .view
            .pan(pan_direction(direction)?, nav_mode(absolute))
            .map_err(|e| e.to_string())?;
        Ok(())
    }

    pub fn zoom_in(&mut self, absolute: bool) -> Result<(), String> {
        self.step(ZoomDirection::In, absolute)
    }

    pub fn zoom_out(&mut self, absolute: bool) -> Result<(), String> {
        self.step(ZoomDirection::Out, absolute)
    }

    pub fn lat(&self) -> f64 {
        self.view.lat()
    }

    pub fn lon(&self) -> f64 {
        self.view.lon()
    }

    pub fn zoom(&self) -> u8 {
        self.view.zoom()
    }

    pub fn render(&self) -> Result<Vec<u8>, String> {
        fetch_view(&self.tiles, &self.view)
            .map(|r| r.to_rgba())
            .map_err(|e| e.to_string())
    }
}

impl MapView {
    fn step(&mut self, direction: ZoomDirection, absolute: bool) -> Result<(), String> {
        self.view = self
            .view
            .zoom_step(direction, nav_mode(absolute), ZoomBounds::default())
            .map_err(|e| e.to_string())?;
        Ok(())
    }
}

/// Most cosine-similar positive and negative example for a query.
///
/// `points` holds `x, y` pairs and `labels` one entry per point (positive when
/// non-zero). Returns the indices of the two retrieved points.
#[wasm_bindgen]
pub fn retrieve_2d(points: &[f64], labels: &[u8], qx: f64, qy: f64) -> Result<Vec<u32>, String> {
    if points.len() != labels.len() * 2 {
        return Err("need one label per point".into());
    }
    let mut pos = Vec::new();
    let mut neg = Vec::new();
    for (i, (xy, &l)) in points.chunks_exact(2).zip(labels).enumerate() {
        let v = EmbeddingVector::new(xy.to_vec()).map_err(|e| format!("point {i}: {e}"))?;
        let item = (format!("{i:06}"), v);
        if l != 0 {
            pos.push(item)
        } else {
            neg.push(item)
        }
    }
    let store = EmbeddingStore::new(pos, neg).map_err(|e| e.to_string())?;
    let q = EmbeddingVector::new(vec![qx, qy]).map_err(|e| e.to_string())?;
    let hit = store.retrieve_visrag(&q).map_err(|e| e.to_string())?;
    let index = |id: &str| id.parse::<u32>().expect("ids are indices");
    Ok(vec![index(&hit.pos_id), index(&hit.neg_id)])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tools_round_trip_rgba() {
        let img = sample_image("eelgrass", true, 16, 1).unwrap();
        assert_eq!(img.len(), 16 * 16 * 4);
        for t in tool_list() {
            let out = apply_tool(&img, 16, 16, &t).unwrap();
            assert_eq!(out.len(), img.len());
            assert!(out.chunks_exact(4).all(|p| p[3] == 255));
        }
        let dark = vec![100, 100, 100, 255];
        assert_eq!(apply_tool(&dark, 1, 1, "brightness").unwrap(), vec![150, 150, 150, 255]);
        assert!(apply_tool(&img, 16, 16, "blur").is_err());
        assert!(apply_tool(&img, 15, 16, "sharpen").is_err());
    }

    #[test]
    fn map_view_navigates_and_returns() {
        let mut m = MapView::new(-10.9, -61.9, 16, 32, 24, 0).unwrap();
        let start = m.render().unwrap();
        assert_eq!(start.len(), 32 * 24 * 4);
        m.pan("left", false).unwrap();
        m.zoom_in(false).unwrap();
        assert_eq!(m.zoom(), 17);
        assert_ne!(m.render().unwrap(), start);
        m.zoom_out(false).unwrap();
        m.pan("right", false).unwrap();
        assert_eq!(m.render().unwrap(), start);
        assert!(m.pan("north", false).is_err());
    }

    #[test]
    fn retrieval_picks_best_aligned_points() {
        let points = [1.0, 0.0, 0.0, 1.0, -1.0, 0.2, 0.7, 0.7];
        let labels = [1, 1, 0, 0];
        assert_eq!(retrieve_2d(&points, &labels, 1.0, 0.1).unwrap(), vec![0, 3]);
        assert_eq!(retrieve_2d(&points, &labels, -1.0, 0.0).unwrap(), vec![1, 2]);
        assert!(retrieve_2d(&points, &[1, 0], 1.0, 0.0).is_err());
        assert!(retrieve_2d(&points, &[1, 1, 1, 1], 1.0, 0.0).is_err());
    }
}
