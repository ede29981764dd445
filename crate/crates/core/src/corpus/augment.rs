use rand::Rng;

use super::{Image, LabelMap};

/// Training-time augmentation switches.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Augment {
    /// Horizontal flip with probability one half, swapping left/right ids.
    pub flip: bool,
    /// Random rescale within `scale_range`, then crop or pad to size.
    pub scale_crop: bool,
    pub scale_range: (f64, f64),
}

impl Default for Augment {
    fn default() -> Self {
        Self { flip: true, scale_crop: true, scale_range: (0.5, 1.5) }
    }
}

impl Augment {
    pub const NONE: Augment = Augment { flip: false, scale_crop: false, scale_range: (1.0, 1.0) };

    pub fn is_off(&self) -> bool {
        !self.flip && !self.scale_crop
    }

    pub fn apply(&self, image: &Image, label: &LabelMap, swap: &[u8], rng: &mut impl Rng) -> (Image, LabelMap) {
        let (mut img, mut lab) = (image.clone(), label.clone());
        if self.flip && rng.gen_bool(0.5) {
            (img, lab) = flip_horizontal(&img, &lab, swap);
        }
        if self.scale_crop {
            let s = rng.gen_range(self.scale_range.0..=self.scale_range.1);
            let n = (image.width as f64 * s).round() as isize;
            let m = (image.height as f64 * s).round() as isize;
            let pick = |rng: &mut dyn rand::RngCore, extra: isize| {
                if extra >= 0 {
                    rng.gen_range(0..=extra)
                } else {
                    -rng.gen_range(0..=-extra)
                }
            };
            let ox = pick(rng, n - image.width as isize);
            let oy = pick(rng, m - image.height as isize);
            (img, lab) = scale_crop(&img, &lab, s, (ox, oy));
        }
        (img, lab)
    }
}

/// Mirrors both maps left to right and relabels through `swap`.
pub fn flip_horizontal(image: &Image, label: &LabelMap, swap: &[u8]) -> (Image, LabelMap) {
    let (w, h) = (image.width, image.height);
    let mut data = vec![0; image.data.len()];
    let mut lab = vec![0; label.data.len()];
    for y in 0..h {
        for x in 0..w {
            let (d, s) = (y * w + x, y * w + (w - 1 - x));
            data[d * 3..d * 3 + 3].copy_from_slice(&image.data[s * 3..s * 3 + 3]);
            let v = label.data[s];
            lab[d] = swap.get(v as usize).copied().unwrap_or(v);
        }
    }
    (Image { width: w, height: h, data }, LabelMap { width: w, height: h, data: lab })
}

/// Nearest-neighbour rescale by `scale`, then a window of the original size
/// starting at `offset` in scaled coordinates. Pixels falling outside the
/// scaled image become black background.
pub fn scale_crop(image: &Image, label: &LabelMap, scale: f64, offset: (isize, isize)) -> (Image, LabelMap) {
    let (w, h) = (image.width, image.height);
    let mut data = vec![0; image.data.len()];
    let mut lab = vec![0; label.data.len()];
    let src = |v: isize, n: usize| -> Option<usize> {
        let s = ((v as f64 + 0.5) / scale).floor();
        (s >= 0.0 && (s as usize) < n).then_some(s as usize)
    };
    for y in 0..h {
        let Some(sy) = src(y as isize + offset.1, h) else {
            continue;
        };
        for x in 0..w {
            let Some(sx) = src(x as isize + offset.0, w) else {
                continue;
            };
            let (d, s) = (y * w + x, sy * w + sx);
            data[d * 3..d * 3 + 3].copy_from_slice(&image.data[s * 3..s * 3 + 3]);
            lab[d] = label.data[s];
        }
    }
    (Image { width: w, height: h, data }, LabelMap { width: w, height: h, data: lab })
}
