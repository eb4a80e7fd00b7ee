use std::io::Cursor;
use std::path::Path;

use image::{GrayImage, ImageFormat};

use crate::error::{Error, Result};

/// Pixel value marking pixels excluded from evaluation.
pub const IGNORE_INDEX: u32 = 255;

/// Per-pixel class indices, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    pub height: usize,
    pub width: usize,
    pub labels: Vec<u32>,
}

impl LabelMap {
    pub fn new(height: usize, width: usize, labels: Vec<u32>) -> Result<Self> {
        if labels.len() != height * width {
            return Err(Error::Dimension(format!(
                "{} labels for a {height}×{width} map",
                labels.len()
            )));
        }
        Ok(Self {
            height,
            width,
            labels,
        })
    }

    pub fn get(&self, y: usize, x: usize) -> u32 {
        self.labels[y * self.width + x]
    }

    /// Encodes as a single-channel 8-bit PNG.
    pub fn to_png_bytes(&self) -> Result<Vec<u8>> {
        let bytes = self
            .labels
            .iter()
            .map(|&l| {
                u8::try_from(l)
                    .map_err(|_| Error::Data(format!("label {l} does not fit in 8 bits")))
            })
            .collect::<Result<Vec<u8>>>()?;
        let img = GrayImage::from_raw(self.width as u32, self.height as u32, bytes)
            .ok_or_else(|| Error::Dimension("label buffer size".into()))?;
        let mut out = Vec::new();
        img.write_to(&mut Cursor::new(&mut out), ImageFormat::Png)
            .map_err(|source| Error::Image {
                path: "<memory>".into(),
                source,
            })?;
        Ok(out)
    }

    /// Reads a single-channel 8-bit PNG; other color types are rejected.
    pub fn read_png(path: &Path) -> Result<Self> {
        let img = image::open(path).map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })?;
        let gray = match img {
            image::DynamicImage::ImageLuma8(g) => g,
            other => {
                return Err(Error::Input(format!(
                    "{}: label maps must be 8-bit single-channel, got {:?}",
                    path.display(),
                    other.color()
                )))
            }
        };
        let (w, h) = gray.dimensions();
        Self::new(
            h as usize,
            w as usize,
            gray.into_raw().into_iter().map(u32::from).collect(),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn png_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.png");
        let map = LabelMap::new(2, 3, vec![0, 1, 2, 255, 7, 0]).unwrap();
        std::fs::write(&path, map.to_png_bytes().unwrap()).unwrap();
        assert_eq!(LabelMap::read_png(&path).unwrap(), map);
        assert!(LabelMap::new(1, 1, vec![300])
            .unwrap()
            .to_png_bytes()
            .is_err());
    }

    #[test]
    fn rgb_label_png_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rgb.png");
        image::RgbImage::new(2, 2).save(&path).unwrap();
        assert!(matches!(LabelMap::read_png(&path), Err(Error::Input(_))));
    }
}
