use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::PhantomParams;

/// Area vessels may occupy.
pub(super) enum Region {
    /// The whole image, minus a small margin.
    Frame { size: f64 },
    /// Ellipse centered at `(cy, cx)` with semi-axes `(ry, rx)`.
    Beam { cy: f64, cx: f64, ry: f64, rx: f64 },
}

/// Walks stop once the normalized beam radius exceeds this.
const BEAM_LIMIT: f64 = 0.92;

impl Region {
    /// Normalized elliptical radius; 1 on the beam edge.
    pub fn radius_at(&self, y: f64, x: f64) -> f64 {
        match *self {
            Region::Frame { .. } => 0.0,
            Region::Beam { cy, cx, ry, rx } => (((y - cy) / ry).powi(2) + ((x - cx) / rx).powi(2)).sqrt(),
        }
    }

    fn contains(&self, y: f64, x: f64) -> bool {
        match *self {
            Region::Frame { size } => y >= -2.0 && x >= -2.0 && y <= size + 2.0 && x <= size + 2.0,
            Region::Beam { .. } => self.radius_at(y, x) <= BEAM_LIMIT,
        }
    }

    fn random_start(&self, rng: &mut impl Rng) -> (f64, f64) {
        match *self {
            Region::Frame { size } => (rng.random_range(0.1..0.9) * size, rng.random_range(0.1..0.9) * size),
            Region::Beam { cy, cx, ry, rx } => {
                let r = 0.7 * rng.random::<f64>().sqrt();
                let a = rng.random_range(0.0..std::f64::consts::TAU);
                (cy + ry * r * a.sin(), cx + rx * r * a.cos())
            }
        }
    }
}

/// Per-pixel `max(radius − distance to centerline)`; pixels with a
/// non-negative value lie inside a vessel.
pub(super) struct DepthField {
    n: usize,
    depth: Vec<f64>,
}

impl DepthField {
    pub fn new(n: usize) -> Self {
        DepthField {
            n,
            depth: vec![f64::NEG_INFINITY; n * n],
        }
    }

    pub fn get(&self, y: usize, x: usize) -> f64 {
        self.depth[y * self.n + x]
    }

    /// Adds a tube segment from `a` to `b` whose radius varies linearly from
    /// `ra` to `rb`. Coordinates are continuous with pixel `(i, j)` centered at
    /// `(i + 0.5, j + 0.5)`.
    fn add_segment(&mut self, a: (f64, f64), b: (f64, f64), ra: f64, rb: f64) {
        let reach = ra.max(rb) + 1.0;
        let n = self.n as f64;
        let lo_y = (a.0.min(b.0) - reach).floor().max(0.0) as usize;
        let hi_y = (a.0.max(b.0) + reach).ceil().min(n) as usize;
        let lo_x = (a.1.min(b.1) - reach).floor().max(0.0) as usize;
        let hi_x = (a.1.max(b.1) + reach).ceil().min(n) as usize;
        let (dy, dx) = (b.0 - a.0, b.1 - a.1);
        let len2 = dy * dy + dx * dx;
        for y in lo_y..hi_y {
            for x in lo_x..hi_x {
                let (py, px) = (y as f64 + 0.5, x as f64 + 0.5);
                let t = if len2 > 0.0 {
                    (((py - a.0) * dy + (px - a.1) * dx) / len2).clamp(0.0, 1.0)
                } else {
                    0.0
                };
                let (qy, qx) = (a.0 + t * dy, a.1 + t * dx);
                let dist = ((py - qy).powi(2) + (px - qx).powi(2)).sqrt();
                let d = ra + t * (rb - ra) - dist;
                let slot = &mut self.depth[y * self.n + x];
                if d > *slot {
                    *slot = d;
                }
            }
        }
    }
}

struct Walker {
    pos: (f64, f64),
    heading: f64,
    radius: f64,
    depth: u32,
    /// Remaining centerline length in pixels.
    budget: f64,
}

const TAPER: f64 = 0.993;
const TURN_SMOOTHING: f64 = 0.85;
const TURN_NOISE: f64 = 0.025;
/// Share of the parent's remaining length a fork receives.
const FORK_BUDGET: f64 = 0.6;
const MAX_FORK_DEPTH: u32 = 4;

/// Grows one tree from a random start inside `region`, stamping it into `field`.
pub(super) fn grow_tree(params: &PhantomParams, region: &Region, field: &mut DepthField, rng: &mut impl Rng) {
    let (r_min, r_max) = params.radius_px;
    let turn = Normal::new(0.0, TURN_NOISE).expect("positive turn noise");
    let mut stack = vec![Walker {
        pos: region.random_start(rng),
        heading: rng.random_range(0.0..std::f64::consts::TAU),
        radius: r_min + (r_max - r_min) * rng.random_range(0.7..=1.0),
        depth: 0,
        budget: params.size as f64 * rng.random_range(0.6..1.0),
    }];
    while let Some(mut w) = stack.pop() {
        let mut omega = 0.0;
        while w.budget > 0.0 {
            omega = TURN_SMOOTHING * omega + turn.sample(rng);
            w.heading += omega;
            let step = (0.8 * w.radius).max(1.0);
            let next = (w.pos.0 + step * w.heading.sin(), w.pos.1 + step * w.heading.cos());
            let r_next = (w.radius * TAPER).max(r_min);
            if !region.contains(next.0, next.1) {
                break;
            }
            field.add_segment(w.pos, next, w.radius, r_next);
            if w.depth < MAX_FORK_DEPTH && rng.random_bool(params.branch_prob) {
                let side = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                stack.push(Walker {
                    pos: next,
                    heading: w.heading + side * rng.random_range(0.4..0.9),
                    radius: (r_next * 0.75).max(r_min),
                    depth: w.depth + 1,
                    budget: w.budget * FORK_BUDGET,
                });
            }
            w.budget -= step;
            w.pos = next;
            w.radius = r_next;
        }
    }
}
