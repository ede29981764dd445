use rand::Rng;

use super::{CategoryTable, CorpusSpec, Image, LabelMap};

/// Body parts in drawing-independent order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Part {
    Head = 0,
    Torso = 1,
    LeftArm = 2,
    RightArm = 3,
    LeftLeg = 4,
    RightLeg = 5,
    Clothes = 6,
}

/// Points within `radius` of the segment `a`–`b`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Capsule {
    pub a: (f64, f64),
    pub b: (f64, f64),
    pub radius: f64,
}

impl Capsule {
    pub fn contains(&self, x: f64, y: f64) -> bool {
        let (dx, dy) = (self.b.0 - self.a.0, self.b.1 - self.a.1);
        let len2 = dx * dx + dy * dy;
        let t = if len2 == 0.0 { 0.0 } else { (((x - self.a.0) * dx + (y - self.a.1) * dy) / len2).clamp(0.0, 1.0) };
        let (px, py) = (self.a.0 + t * dx - x, self.a.1 + t * dy - y);
        px * px + py * py <= self.radius * self.radius
    }
}

/// Geometry and colours of one figure.
#[derive(Debug, Clone, PartialEq)]
pub struct Pose {
    /// Seen from behind: left limbs appear on the image left.
    pub back: bool,
    /// Visible parts in drawing order; later parts cover earlier ones.
    pub parts: Vec<(Part, Capsule)>,
    /// Eye dots on a front-facing head.
    pub eyes: Vec<Capsule>,
    pub colors: [[f64; 3]; 7],
    pub background: [f64; 3],
}

const TORSO: [f64; 3] = [0.78, 0.22, 0.20];
const CLOTHES: [f64; 3] = [0.74, 0.24, 0.27];
const ARMS: [f64; 3] = [0.22, 0.62, 0.26];
const LEGS: [f64; 3] = [0.20, 0.32, 0.76];
const SKIN: [f64; 3] = [0.92, 0.76, 0.62];
const HAIR: [f64; 3] = [0.25, 0.16, 0.08];

fn jitter(base: [f64; 3], amount: f64, rng: &mut impl Rng) -> [f64; 3] {
    base.map(|v| (v + rng.gen_range(-amount..=amount)).clamp(0.0, 1.0))
}

fn dist(a: [f64; 3], b: [f64; 3]) -> f64 {
    a.iter().zip(&b).map(|(x, y)| (x - y).abs()).sum()
}

pub fn sample_pose(spec: &CorpusSpec, rng: &mut impl Rng) -> Pose {
    let k = spec.size as f64 / 64.0;
    let u = k * rng.gen_range(0.85..1.05);
    let cx = spec.size as f64 / 2.0 + rng.gen_range(-4.0..4.0) * k;
    let cy = spec.size as f64 / 2.0 + rng.gen_range(-2.0..2.0) * k;
    let back = rng.gen_bool(spec.back_view);
    // image-space direction of the figure's left side
    let left = if back { -1.0 } else { 1.0 };

    let background = loop {
        let c = [rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0)];
        if [TORSO, CLOTHES, ARMS, LEGS, SKIN, HAIR].iter().all(|&p| dist(p, c) >= 0.5) {
            break c;
        }
    };
    let torso = jitter(TORSO, 0.06, rng);
    // clothes follow the torso shade so the two stay nearly indistinguishable
    let clothes = [0, 1, 2].map(|i| (torso[i] + CLOTHES[i] - TORSO[i]).clamp(0.0, 1.0));
    let arms = jitter(ARMS, 0.06, rng);
    let legs = jitter(LEGS, 0.06, rng);
    let head = jitter(if back { HAIR } else { SKIN }, 0.05, rng);
    let mut colors = [[0.0; 3]; 7];
    colors[Part::Head as usize] = head;
    colors[Part::Torso as usize] = torso;
    colors[Part::LeftArm as usize] = arms;
    colors[Part::RightArm as usize] = arms;
    colors[Part::LeftLeg as usize] = legs;
    colors[Part::RightLeg as usize] = legs;
    colors[Part::Clothes as usize] = clothes;

    let limb = |rng: &mut dyn rand::RngCore, start: (f64, f64), side: f64, angle: (f64, f64), len: (f64, f64)| {
        let t = rng.gen_range(angle.0..angle.1).to_radians();
        let l = rng.gen_range(len.0..len.1) * u;
        (start.0 + side * l * t.sin(), start.1 + l * t.cos())
    };

    let mut parts = Vec::new();
    for (part, side) in [(Part::LeftLeg, left), (Part::RightLeg, -left)] {
        if !rng.gen_bool(spec.missing_limb) {
            let hip = (cx + side * 3.5 * u, cy + 3.0 * u);
            let foot = limb(rng, hip, side, (0.0, 30.0), (18.0, 22.0));
            parts.push((part, Capsule { a: hip, b: foot, radius: 4.3 * u }));
        }
    }
    parts.push((Part::Torso, Capsule { a: (cx, cy - 14.0 * u), b: (cx, cy - u), radius: 6.5 * u }));
    parts.push((
        Part::Clothes,
        Capsule { a: (cx - 3.0 * u, cy + 2.0 * u), b: (cx + 3.0 * u, cy + 2.0 * u), radius: 6.0 * u },
    ));
    for (part, side) in [(Part::LeftArm, left), (Part::RightArm, -left)] {
        if !rng.gen_bool(spec.missing_limb) {
            let shoulder = (cx + side * 6.0 * u, cy - 12.0 * u);
            let hand = limb(rng, shoulder, side, (15.0, 150.0), (14.0, 18.0));
            parts.push((part, Capsule { a: shoulder, b: hand, radius: 3.8 * u }));
        }
    }
    let hc = (cx + rng.gen_range(-1.0..1.0) * u, cy - 25.0 * u);
    parts.push((Part::Head, Capsule { a: hc, b: hc, radius: 5.5 * u }));
    let eyes = if back {
        Vec::new()
    } else {
        [-2.0, 2.0]
            .iter()
            .map(|&dx| {
                let p = (hc.0 + dx * u, hc.1 - u);
                Capsule { a: p, b: p, radius: 1.2 * u }
            })
            .collect()
    };
    Pose { back, parts, eyes, colors, background }
}

/// Rasterizes a pose at pixel centres, adding per-pixel noise.
pub fn render(pose: &Pose, size: usize, table: &CategoryTable, rng: &mut impl Rng) -> (Image, LabelMap) {
    let mut data = Vec::with_capacity(size * size * 3);
    let mut labels = Vec::with_capacity(size * size);
    for y in 0..size {
        for x in 0..size {
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            let hit = pose.parts.iter().rev().find(|(_, c)| c.contains(px, py)).map(|&(p, _)| p);
            let (mut rgb, noise, class) = match hit {
                Some(p) => (pose.colors[p as usize], 0.03, table.class_of(p)),
                None => (pose.background, 0.12, 0),
            };
            if hit == Some(Part::Head) && pose.eyes.iter().any(|e| e.contains(px, py)) {
                rgb = [0.05, 0.05, 0.1];
            }
            for v in rgb {
                let n = v + rng.gen_range(-noise..=noise);
                data.push((n.clamp(0.0, 1.0) * 255.0).round() as u8);
            }
            labels.push(class);
        }
    }
    (Image { width: size, height: size, data }, LabelMap { width: size, height: size, data: labels })
}
