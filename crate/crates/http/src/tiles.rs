use std::io::Read;

use visagent_core::raster::Raster;
use visagent_core::tools::{TileError, TileProvider, Viewport, ZoomBounds};

use crate::transport::{probe, send_with_retry, Endpoint, RetryPolicy};

/// Static-maps endpoint: `GET <url>?lat=..&lon=..&zoom=..&size=WxH&maptype=satellite`
/// returning an image.
#[derive(Debug, Clone)]
pub struct HttpTileProvider {
    endpoint: Endpoint,
    retry: RetryPolicy,
    bounds: ZoomBounds,
}

impl HttpTileProvider {
    pub fn new(endpoint: Endpoint) -> Self {
        Self {
            endpoint,
            retry: RetryPolicy::default(),
            bounds: ZoomBounds::default(),
        }
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }
}

impl TileProvider for HttpTileProvider {
    fn id(&self) -> String {
        format!("http:{}", self.endpoint.url)
    }

    fn zoom_bounds(&self) -> ZoomBounds {
        self.bounds
    }

    fn fetch(&self, view: &Viewport) -> Result<Raster, TileError> {
        let (w, h) = view.size();
        let agent = self.endpoint.agent();
        let resp = send_with_retry(&self.retry, || {
            let mut req = agent
                .get(&self.endpoint.url)
                .query("lat", &format!("{:.7}", view.lat()))
                .query("lon", &format!("{:.7}", view.lon()))
                .query("zoom", &view.zoom().to_string())
                .query("size", &format!("{w}x{h}"))
                .query("maptype", "satellite");
            if let Some(k) = &self.endpoint.api_key {
                req = req.query("key", k);
            }
            req.call()
        })
        .map_err(|f| TileError::Unavailable(format!("{} after {} attempt(s)", f.message, f.attempts)))?;
        let mut bytes = Vec::new();
        resp.into_reader()
            .take(32 << 20)
            .read_to_end(&mut bytes)
            .map_err(|e| TileError::Unavailable(e.to_string()))?;
        let img = Raster::decode(&bytes).map_err(|e| TileError::Unavailable(format!("undecodable tile: {e}")))?;
        if (img.width(), img.height()) == (w as usize, h as usize) {
            Ok(img)
        } else {
            img.resize_nearest(w as usize, h as usize)
                .map_err(|e| TileError::Unavailable(e.to_string()))
        }
    }

    fn health(&self) -> Result<(), TileError> {
        probe(&self.endpoint).map_err(TileError::Unavailable)
    }
}
