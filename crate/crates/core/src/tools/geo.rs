//! Map viewports and tile providers for the geospatial navigation tools.
//!
//! Positions are held as integer Web-Mercator world coordinates at a fixed
//! sub-pixel resolution (256 · 2^30 units around the globe), so pans and zooms
//! are exact integer moves and inverse pairs restore a viewport bit-for-bit.
//! Latitude and longitude are derived on demand.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::GeoTag;
use crate::raster::Raster;

/// log2 of world units per 256-px tile row at zoom 0, scaled to zoom 30.
const UNIT_ZOOM: u32 = 30;
/// World extent in units.
pub const WORLD: i64 = 256 << UNIT_ZOOM;
/// Largest latitude representable in Web Mercator.
pub const MAX_LAT: f64 = 85.051_128_779_806_59;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum TileError {
    #[error("tile provider unavailable: {0}")]
    Unavailable(String),
    #[error("provider bounds exceeded: {0}")]
    BoundsExceeded(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ZoomBounds {
    pub min: u8,
    pub max: u8,
}

impl Default for ZoomBounds {
    fn default() -> Self {
        Self { min: 0, max: 21 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PanDirection {
    Up,
    Down,
    Left,
    Right,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ZoomDirection {
    In,
    Out,
}

/// Whether a navigation step starts from the current view or from the origin.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NavMode {
    Relative,
    Absolute,
}

pub fn lon_to_world_x(lon: f64) -> i64 {
    let x = ((lon + 180.0) / 360.0 * WORLD as f64).round() as i64;
    x.rem_euclid(WORLD)
}

pub fn lat_to_world_y(lat: f64) -> i64 {
    let phi = lat.clamp(-MAX_LAT, MAX_LAT).to_radians();
    let merc = (phi.tan() + 1.0 / phi.cos()).ln();
    (((1.0 - merc / PI) / 2.0) * WORLD as f64).round() as i64
}

pub fn world_x_to_lon(x: i64) -> f64 {
    x.rem_euclid(WORLD) as f64 / WORLD as f64 * 360.0 - 180.0
}

pub fn world_y_to_lat(y: i64) -> f64 {
    let n = PI * (1.0 - 2.0 * y as f64 / WORLD as f64);
    n.sinh().atan().to_degrees()
}

/// World units covered by one screen pixel at `zoom`.
pub fn units_per_pixel(zoom: u8) -> i64 {
    1i64 << (UNIT_ZOOM - zoom as u32)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
struct WorldPoint {
    x: i64,
    y: i64,
    zoom: u8,
}

/// A map camera: center, zoom, pixel size, and the immutable starting view.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Viewport {
    center: WorldPoint,
    origin: WorldPoint,
    width: u32,
    height: u32,
}

impl Viewport {
    /// Starting view centred on `geo`, rendering `width`×`height` pixels.
    pub fn new(geo: GeoTag, width: u32, height: u32, bounds: ZoomBounds) -> Result<Self, TileError> {
        geo.validate().map_err(TileError::BoundsExceeded)?;
        if geo.zoom < bounds.min || geo.zoom > bounds.max || geo.zoom as u32 > UNIT_ZOOM - 1 {
            return Err(TileError::BoundsExceeded(format!(
                "zoom {} outside [{}, {}]",
                geo.zoom, bounds.min, bounds.max
            )));
        }
        if width == 0 || height == 0 {
            return Err(TileError::BoundsExceeded("viewport size must be positive".into()));
        }
        let p = WorldPoint {
            x: lon_to_world_x(geo.lon),
            y: lat_to_world_y(geo.lat),
            zoom: geo.zoom,
        };
        Ok(Self {
            center: p,
            origin: p,
            width,
            height,
        })
    }

    pub fn lat(&self) -> f64 {
        world_y_to_lat(self.center.y)
    }

    pub fn lon(&self) -> f64 {
        world_x_to_lon(self.center.x)
    }

    pub fn zoom(&self) -> u8 {
        self.center.zoom
    }

    pub fn size(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    pub fn world_center(&self) -> (i64, i64) {
        (self.center.x, self.center.y)
    }

    pub fn origin(&self) -> GeoTag {
        GeoTag {
            lat: world_y_to_lat(self.origin.y),
            lon: world_x_to_lon(self.origin.x),
            zoom: self.origin.zoom,
        }
    }

    pub fn geo(&self) -> GeoTag {
        GeoTag {
            lat: self.lat(),
            lon: self.lon(),
            zoom: self.zoom(),
        }
    }

    /// Longitude span of the view in degrees.
    pub fn lon_span(&self) -> f64 {
        (self.width as i64 * units_per_pixel(self.zoom())) as f64 / WORLD as f64 * 360.0
    }

    fn start(&self, mode: NavMode) -> WorldPoint {
        match mode {
            NavMode::Relative => self.center,
            NavMode::Absolute => self.origin,
        }
    }

    /// Moves half a view in `direction`. Longitude wraps; latitude clamps to the
    /// Mercator range and errors once already pinned at the limit.
    pub fn pan(&self, direction: PanDirection, mode: NavMode) -> Result<Self, TileError> {
        let mut p = self.start(mode);
        let upp = units_per_pixel(p.zoom);
        let step_x = self.width as i64 * upp / 2;
        let step_y = self.height as i64 * upp / 2;
        match direction {
            PanDirection::Left => p.x = (p.x - step_x).rem_euclid(WORLD),
            PanDirection::Right => p.x = (p.x + step_x).rem_euclid(WORLD),
            PanDirection::Up | PanDirection::Down => {
                let (limit, next) = if direction == PanDirection::Up {
                    (0, p.y - step_y)
                } else {
                    (WORLD, p.y + step_y)
                };
                if p.y == limit {
                    return Err(TileError::BoundsExceeded("latitude already at the Mercator limit".into()));
                }
                p.y = next.clamp(0, WORLD);
            }
        }
        Ok(Self { center: p, ..*self })
    }

    /// Changes zoom by one level, keeping the centre.
    pub fn zoom_step(&self, direction: ZoomDirection, mode: NavMode, bounds: ZoomBounds) -> Result<Self, TileError> {
        let mut p = self.start(mode);
        let next = match direction {
            ZoomDirection::In => p.zoom.checked_add(1),
            ZoomDirection::Out => p.zoom.checked_sub(1),
        };
        match next {
            Some(z) if z >= bounds.min && z <= bounds.max && (z as u32) < UNIT_ZOOM => p.zoom = z,
            _ => {
                return Err(TileError::BoundsExceeded(format!(
                    "zoom {} cannot step {:?} within [{}, {}]",
                    p.zoom, direction, bounds.min, bounds.max
                )))
            }
        }
        Ok(Self { center: p, ..*self })
    }

    /// World coordinates of the centre of pixel (`px`, `py`).
    pub fn pixel_to_world(&self, px: u32, py: u32) -> (i64, i64) {
        let upp = units_per_pixel(self.zoom());
        let x = self.center.x + (2 * px as i64 + 1 - self.width as i64) * upp / 2;
        let y = self.center.y + (2 * py as i64 + 1 - self.height as i64) * upp / 2;
        (x.rem_euclid(WORLD), y)
    }
}

/// Source of rendered map views.
pub trait TileProvider: Send + Sync {
    fn id(&self) -> String;

    fn zoom_bounds(&self) -> ZoomBounds {
        ZoomBounds::default()
    }

    /// Renders the view's pixel size centred on its position.
    fn fetch(&self, view: &Viewport) -> Result<Raster, TileError>;

    fn health(&self) -> Result<(), TileError> {
        Ok(())
    }
}

impl<T: TileProvider + ?Sized> TileProvider for std::sync::Arc<T> {
    fn id(&self) -> String {
        (**self).id()
    }
    fn zoom_bounds(&self) -> ZoomBounds {
        (**self).zoom_bounds()
    }
    fn fetch(&self, view: &Viewport) -> Result<Raster, TileError> {
        (**self).fetch(view)
    }
    fn health(&self) -> Result<(), TileError> {
        (**self).health()
    }
}

pub fn fetch_view(provider: &dyn TileProvider, view: &Viewport) -> Result<Raster, TileError> {
    let b = provider.zoom_bounds();
    if view.zoom() < b.min || view.zoom() > b.max {
        return Err(TileError::BoundsExceeded(format!(
            "zoom {} outside [{}, {}]",
            view.zoom(),
            b.min,
            b.max
        )));
    }
    provider.fetch(view)
}

/// Offline procedural satellite imagery.
///
/// Colour is a pure function of world position, so adjacent views line up and
/// the same view always renders identically. The landscape is a patchwork of
/// fields on a fixed ground grid; some fields hold rectangular ponds.
#[derive(Debug, Clone)]
pub struct FixtureTileProvider {
    seed: u64,
    bounds: ZoomBounds,
}

/// Ground cell edge in world units (128 px at zoom 16).
const FIELD_SHIFT: u32 = 21;
const TEXTURE_SHIFT: u32 = 16;

fn mix(mut h: u64) -> u64 {
    // splitmix64 finalizer
    h = (h ^ (h >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    h = (h ^ (h >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    h ^ (h >> 31)
}

fn hash3(seed: u64, a: i64, b: i64) -> u64 {
    mix(seed ^ mix(a as u64 ^ mix(b as u64).rotate_left(17)))
}

impl FixtureTileProvider {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            bounds: ZoomBounds::default(),
        }
    }

    pub fn with_bounds(mut self, bounds: ZoomBounds) -> Self {
        self.bounds = bounds;
        self
    }

    /// Whether the field containing world point (`x`, `y`) holds a pond.
    pub fn field_has_pond(&self, x: i64, y: i64) -> bool {
        let h = hash3(self.seed, x >> FIELD_SHIFT, y >> FIELD_SHIFT);
        h % 4 == 0
    }

    fn colour(&self, x: i64, y: i64) -> [u8; 3] {
        if !(0..WORLD).contains(&y) {
            return [0, 0, 0];
        }
        let (cx, cy) = (x >> FIELD_SHIFT, y >> FIELD_SHIFT);
        let h = hash3(self.seed, cx, cy);
        let grain = (hash3(self.seed ^ 0x5eed, x >> TEXTURE_SHIFT, y >> TEXTURE_SHIFT) % 25) as i32 - 12;
        let cell = 1i64 << FIELD_SHIFT;
        let (lx, ly) = (x & (cell - 1), y & (cell - 1));
        if h % 4 == 0 {
            let m = cell / 8;
            let x0 = m + ((h >> 8) % 3) as i64 * m / 2;
            let y0 = m + ((h >> 12) % 3) as i64 * m / 2;
            let x1 = cell - m - ((h >> 16) % 3) as i64 * m / 2;
            let y1 = cell - m - ((h >> 20) % 3) as i64 * m / 2;
            if lx >= x0 && lx < x1 && ly >= y0 && ly < y1 {
                let depth = ((h >> 24) % 40) as i32;
                return [
                    (30 + grain / 2) as u8,
                    (70 + depth / 2 + grain / 2) as u8,
                    (110 + depth + grain / 2) as u8,
                ];
            }
            // earthen bank
            if lx >= x0 - m / 4 && lx < x1 + m / 4 && ly >= y0 - m / 4 && ly < y1 + m / 4 {
                return [(150 + grain) as u8, (125 + grain) as u8, (95 + grain) as u8];
            }
        }
        let palette: [[i32; 3]; 4] = [[74, 110, 52], [96, 128, 60], [128, 116, 78], [58, 92, 48]];
        let base = palette[((h >> 4) % 4) as usize];
        let c = |v: i32| (v + grain).clamp(0, 255) as u8;
        [c(base[0]), c(base[1]), c(base[2])]
    }
}

impl Default for FixtureTileProvider {
    fn default() -> Self {
        Self::new(0)
    }
}

impl TileProvider for FixtureTileProvider {
    fn id(&self) -> String {
        format!("fixture-tiles-s{}", self.seed)
    }

    fn zoom_bounds(&self) -> ZoomBounds {
        self.bounds
    }

    fn fetch(&self, view: &Viewport) -> Result<Raster, TileError> {
        let (w, h) = view.size();
        let mut data = Vec::with_capacity(w as usize * h as usize * 3);
        for py in 0..h {
            for px in 0..w {
                let (x, y) = view.pixel_to_world(px, py);
                data.extend_from_slice(&self.colour(x, y));
            }
        }
        Raster::new(w as usize, h as usize, 3, data).map_err(|e| TileError::Unavailable(e.to_string()))
    }
}
