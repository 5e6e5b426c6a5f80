//! Pluggable overhead-tile store: a local PNG cache in front of an optional
//! injected remote client. Nothing here performs network calls on its own.

use std::path::PathBuf;

use crate::dataset::{read_png_rgb, write_png_rgb};
use crate::error::{Error, Result};
use crate::geometry::GridSpec;
use crate::image::ImagePlane;
use crate::scalar::Real;

/// Identifies one overhead tile.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TileKey {
    pub lat: f64,
    pub lon: f64,
    pub zoom: u8,
    /// Square tile side, pixels.
    pub size: u32,
}

impl TileKey {
    pub fn new(lat: f64, lon: f64, zoom: u8, size: u32) -> Result<Self> {
        if !(-90.0..=90.0).contains(&lat) || !(-180.0..=180.0).contains(&lon) {
            return Err(Error::invalid(format!(
                "tile coordinates ({lat}, {lon}) out of range"
            )));
        }
        if size == 0 {
            return Err(Error::invalid("tile size must be positive"));
        }
        Ok(Self {
            lat,
            lon,
            zoom,
            size,
        })
    }

    /// Web-mercator ground resolution at this latitude and zoom.
    pub fn metres_per_pixel(&self) -> f64 {
        156_543.033_92 * self.lat.to_radians().cos() / 2f64.powi(self.zoom as i32)
    }

    fn cache_name(&self) -> String {
        format!(
            "z{}_s{}_lat{:+.6}_lon{:+.6}.png",
            self.zoom, self.size, self.lat, self.lon
        )
    }

    pub fn grid(&self) -> Result<GridSpec> {
        GridSpec::new(self.size as usize, self.size as usize, self.metres_per_pixel())
    }
}

/// Injected remote fetcher. Implementations own their transport; the store
/// only caches.
pub trait TileClient<T: Real>: Send + Sync {
    fn fetch(
        &self,
        key: &TileKey,
    ) -> std::result::Result<ImagePlane<T>, Box<dyn std::error::Error + Send + Sync>>;
}

/// Local tile cache with optional remote fill. Writes for one key must not
/// race; readers are reentrant.
pub struct TileStore<T: Real> {
    cache_dir: PathBuf,
    client: Option<Box<dyn TileClient<T>>>,
}

impl<T: Real> TileStore<T> {
    pub fn new(cache_dir: impl Into<PathBuf>) -> Result<Self> {
        let cache_dir = cache_dir.into();
        std::fs::create_dir_all(&cache_dir)
            .map_err(|e| Error::io(format!("creating {}", cache_dir.display()), e))?;
        Ok(Self {
            cache_dir,
            client: None,
        })
    }

    pub fn with_client(mut self, client: Box<dyn TileClient<T>>) -> Self {
        self.client = Some(client);
        self
    }

    /// Cache hit returns the cached raster; a miss consults the client and
    /// caches its answer; a miss with no client is `TileNotAvailable`.
    pub fn get(&self, key: &TileKey) -> Result<ImagePlane<T>> {
        let path = self.cache_dir.join(key.cache_name());
        let grid = key.grid()?;
        if path.exists() {
            return read_png_rgb(&path, &grid, 0);
        }
        match &self.client {
            None => Err(Error::TileNotAvailable),
            Some(client) => {
                let tile = client.fetch(key).map_err(Error::RemoteFailure)?;
                if tile.height() != grid.height || tile.width() != grid.width {
                    return Err(Error::shape(format!(
                        "client returned {}x{} for a {}px tile",
                        tile.height(),
                        tile.width(),
                        key.size
                    )));
                }
                write_png_rgb(&tile, &path)?;
                Ok(tile)
            }
        }
    }

    /// Store a raster for a key directly (pre-population).
    pub fn put(&self, key: &TileKey, tile: &ImagePlane<T>) -> Result<()> {
        write_png_rgb(tile, &self.cache_dir.join(key.cache_name()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::Arc;

    fn tile_of(value: f64, size: usize) -> ImagePlane<f64> {
        let grid = GridSpec::new(size, size, 1.0).unwrap();
        let q = (value * 255.0).round() / 255.0;
        ImagePlane::new(Array3::from_elem((3, size, size), q), grid).unwrap()
    }

    struct CountingClient {
        calls: Arc<AtomicUsize>,
    }

    impl TileClient<f64> for CountingClient {
        fn fetch(
            &self,
            key: &TileKey,
        ) -> std::result::Result<ImagePlane<f64>, Box<dyn std::error::Error + Send + Sync>>
        {
            self.calls.fetch_add(1, Ordering::SeqCst);
            Ok(tile_of(0.5, key.size as usize))
        }
    }

    #[test]
    fn prepopulated_key_returns_that_raster() {
        let dir = tempfile::tempdir().unwrap();
        let store = TileStore::<f64>::new(dir.path()).unwrap();
        let key = TileKey::new(51.75, -1.26, 18, 16).unwrap();
        let tile = tile_of(0.25, 16);
        store.put(&key, &tile).unwrap();
        let got = store.get(&key).unwrap();
        assert_eq!(got.data(), tile.data());
    }

    #[test]
    fn miss_without_client_is_not_available() {
        let dir = tempfile::tempdir().unwrap();
        let store = TileStore::<f64>::new(dir.path()).unwrap();
        let key = TileKey::new(0.0, 0.0, 10, 16).unwrap();
        assert!(matches!(store.get(&key), Err(Error::TileNotAvailable)));
    }

    #[test]
    fn client_is_called_exactly_once_per_key() {
        let dir = tempfile::tempdir().unwrap();
        let calls = Arc::new(AtomicUsize::new(0));
        let store = TileStore::<f64>::new(dir.path()).unwrap().with_client(Box::new(
            CountingClient {
                calls: calls.clone(),
            },
        ));
        let key = TileKey::new(51.75, -1.26, 17, 16).unwrap();
        let a = store.get(&key).unwrap();
        let b = store.get(&key).unwrap();
        assert_eq!(a.data(), b.data());
        assert_eq!(calls.load(Ordering::SeqCst), 1);
    }

    #[test]
    fn key_validation_and_resolution() {
        assert!(TileKey::new(99.0, 0.0, 10, 16).is_err());
        assert!(TileKey::new(0.0, 181.0, 10, 16).is_err());
        assert!(TileKey::new(0.0, 0.0, 10, 0).is_err());
        let key = TileKey::new(0.0, 0.0, 0, 256).unwrap();
        assert!((key.metres_per_pixel() - 156_543.033_92).abs() < 1e-6);
    }
}
