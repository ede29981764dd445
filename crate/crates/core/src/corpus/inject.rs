use rand::Rng;

use super::LabelMap;
use crate::error::{Error, Result};

/// Exchanges the ids of each left/right pair with probability `p_swap`,
/// independently per pair.
pub fn inject_global_error(label: &LabelMap, pairs: &[(u8, u8)], p_swap: f64, rng: &mut impl Rng) -> Result<LabelMap> {
    if !(0.0..=1.0).contains(&p_swap) {
        return Err(Error::Config(format!("p_swap must be in [0, 1], got {p_swap}")));
    }
    let mut seen = Vec::new();
    for &(l, r) in pairs {
        if l == r || l == 0 || r == 0 || seen.contains(&l) || seen.contains(&r) {
            return Err(Error::Config(format!("({l}, {r}) is not a valid left/right pair")));
        }
        seen.extend([l, r]);
    }
    let mut map: Vec<u8> = (0..=255).collect();
    for &(l, r) in pairs {
        if rng.gen_bool(p_swap) {
            map[l as usize] = r;
            map[r as usize] = l;
        }
    }
    let data = label.data.iter().map(|&v| map[v as usize]).collect();
    Ok(LabelMap { width: label.width, height: label.height, data })
}

/// Relabels up to `k_spots` discs of `radius` that lie fully inside one
/// non-background part to that part's confusable category.
///
/// A spot is dropped when no fitting disc is found after a bounded number of
/// attempts, so small or thin parts may receive fewer spots.
pub fn inject_local_error(
    label: &LabelMap,
    k_spots: usize,
    radius: usize,
    confusion: &[u8],
    rng: &mut impl Rng,
) -> Result<LabelMap> {
    for &v in &label.data {
        if v != 0 && confusion.get(v as usize).is_none() {
            return Err(Error::Config(format!("confusion map has no entry for category {v}")));
        }
    }
    let mut out = label.clone();
    let foreground: Vec<usize> = (0..label.data.len()).filter(|&i| label.data[i] != 0).collect();
    if foreground.is_empty() || k_spots == 0 {
        return Ok(out);
    }
    let r = radius as isize;
    let offsets: Vec<(isize, isize)> = (-r..=r)
        .flat_map(|dy| (-r..=r).map(move |dx| (dx, dy)))
        .filter(|&(dx, dy)| dx * dx + dy * dy <= r * r)
        .collect();
    let (w, h) = (label.width as isize, label.height as isize);
    for _ in 0..k_spots {
        for _attempt in 0..200 {
            let centre = foreground[rng.gen_range(0..foreground.len())];
            let (cx, cy) = ((centre % label.width) as isize, (centre / label.width) as isize);
            let host = label.data[centre];
            let fits = offsets.iter().all(|&(dx, dy)| {
                let (x, y) = (cx + dx, cy + dy);
                x >= 0 && y >= 0 && x < w && y < h && label.data[(y * w + x) as usize] == host
            });
            if fits {
                let to = confusion[host as usize];
                for &(dx, dy) in &offsets {
                    out.data[((cy + dy) * w + cx + dx) as usize] = to;
                }
                break;
            }
        }
    }
    Ok(out)
}
