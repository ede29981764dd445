//! Colour rendering of label maps for visual inspection.

use std::path::Path;

use crate::corpus::{write_ppm, Image, LabelMap};
use crate::error::{Error, Result};

/// One RGB colour per category id.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Palette {
    colors: Vec<Option<[u8; 3]>>,
}

const DEFAULT: [[u8; 3]; 8] = [
    [0, 0, 0],
    [255, 200, 150],
    [200, 40, 40],
    [40, 160, 60],
    [150, 230, 80],
    [40, 70, 200],
    [90, 180, 250],
    [250, 210, 30],
];

impl Palette {
    /// Fixed colours for up to eight categories; id 0 is black.
    pub fn default_for(categories: usize) -> Result<Self> {
        if categories > DEFAULT.len() {
            return Err(Error::Config(format!(
                "no default palette for {categories} categories, supply one with at most {} entries or a palette file",
                DEFAULT.len()
            )));
        }
        Ok(Self { colors: DEFAULT[..categories].iter().copied().map(Some).collect() })
    }

    /// Lines of `id r g b`; blank lines and `#` comments are skipped.
    pub fn parse(text: &str) -> Result<Self> {
        let mut colors: Vec<Option<[u8; 3]>> = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = || Error::Config(format!("palette line {}: expected `id r g b`, got {line:?}", n + 1));
            let v: Vec<u8> = line.split_whitespace().map(|t| t.parse().map_err(|_| bad())).collect::<Result<_>>()?;
            let [id, r, g, b] = v[..] else {
                return Err(bad());
            };
            let id = id as usize;
            if colors.len() <= id {
                colors.resize(id + 1, None);
            }
            if colors[id].replace([r, g, b]).is_some() {
                return Err(Error::Config(format!("palette line {}: id {id} given twice", n + 1)));
            }
        }
        Ok(Self { colors })
    }

    pub fn color(&self, id: u8) -> Option<[u8; 3]> {
        self.colors.get(id as usize).copied().flatten()
    }

    pub fn colorize(&self, label: &LabelMap) -> Result<Image> {
        let mut data = Vec::with_capacity(label.data.len() * 3);
        for &id in &label.data {
            let rgb =
                self.color(id).ok_or_else(|| Error::Config(format!("palette has no colour for category {id}")))?;
            data.extend_from_slice(&rgb);
        }
        Image::new(label.width, label.height, data)
    }
}

/// Writes `label` as a binary PPM coloured by `palette`.
pub fn export_mask(path: &Path, label: &LabelMap, palette: &Palette) -> Result<()> {
    write_ppm(path, &palette.colorize(label)?)
}
