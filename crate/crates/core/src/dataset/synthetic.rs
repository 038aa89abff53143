//! Procedural stand-in for a Kinect hand corpus.
//!
//! Each letter owns a fixed hand template: a palm plus five fingers, each
//! finger curled, raised, pointing at the camera or bent sideways, which
//! places finger tips at distinct depths in front of the palm. Users differ
//! in hand size, skin tone, finger angles and distance to the camera;
//! samples add pose jitter, sensor noise, missing readings and a textured
//! background well behind the hand.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::Sample;
use crate::imaging::{DepthImage, IntensityDomain, IntensityImage};
use crate::letter::{Letter, NUM_CLASSES};

pub const SYNTH_SIDE: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum FingerState {
    Curled,
    Raised,
    Forward,
    BentLeft,
    BentRight,
}

impl FingerState {
    const ALL: [FingerState; 5] = [
        FingerState::Curled,
        FingerState::Raised,
        FingerState::Forward,
        FingerState::BentLeft,
        FingerState::BentRight,
    ];

    /// (length in px, tip distance in front of the palm in mm, extra angle)
    fn shape(self) -> (f64, f64, f64) {
        match self {
            FingerState::Curled => (7.0, 12.0, 0.0),
            FingerState::Raised => (26.0, 6.0, 0.0),
            FingerState::Forward => (11.0, 72.0, 0.0),
            FingerState::BentLeft => (21.0, 38.0, -0.55),
            FingerState::BentRight => (21.0, 38.0, 0.55),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Template {
    fingers: [FingerState; 5],
    roll: f64,
}

const ROLLS: [f64; 5] = [-0.45, -0.22, 0.0, 0.22, 0.45];

/// Per-letter templates, chosen so that any two letters differ in at least
/// three of their six attributes (five finger states plus hand roll).
fn templates() -> Vec<Template> {
    let mut codes: Vec<[usize; 6]> = Vec::with_capacity(NUM_CLASSES);
    let mut rng = ChaCha8Rng::seed_from_u64(0x5157_11E5);
    while codes.len() < NUM_CLASSES {
        let mut code = [0usize; 6];
        for c in code.iter_mut().take(5) {
            *c = rng.random_range(0..FingerState::ALL.len());
        }
        code[5] = rng.random_range(0..ROLLS.len());
        let far_enough = codes
            .iter()
            .all(|other| other.iter().zip(&code).filter(|(a, b)| a != b).count() >= 3);
        if far_enough {
            codes.push(code);
        }
    }
    codes
        .iter()
        .map(|code| Template {
            fingers: std::array::from_fn(|i| FingerState::ALL[code[i]]),
            roll: ROLLS[code[5]],
        })
        .collect()
}

#[derive(Debug, Clone, Copy)]
struct UserTraits {
    scale: f64,
    albedo: f64,
    angle_bias: f64,
    palm_distance: f64,
    finger_angle: [f64; 5],
    finger_forward: [f64; 5],
}

fn mix(parts: &[u64]) -> u64 {
    // splitmix64 over the parts
    let mut h = 0x9E37_79B9_7F4A_7C15u64;
    for &p in parts {
        h ^= p.wrapping_add(0x9E37_79B9_7F4A_7C15).wrapping_add(h << 6).wrapping_add(h >> 2);
        h = (h ^ (h >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        h = (h ^ (h >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        h ^= h >> 31;
    }
    h
}

fn user_traits(seed: u64, user: usize) -> UserTraits {
    let mut rng = ChaCha8Rng::seed_from_u64(mix(&[seed, 0xA11CE, user as u64]));
    UserTraits {
        scale: rng.random_range(0.85..1.15),
        albedo: rng.random_range(140.0..210.0),
        angle_bias: rng.random_range(-0.15..0.15),
        palm_distance: 650.0 + 110.0 * (user % 5) as f64 + rng.random_range(-30.0..30.0),
        finger_angle: std::array::from_fn(|_| rng.random_range(-0.15..0.15)),
        finger_forward: std::array::from_fn(|_| rng.random_range(-12.0..12.0)),
    }
}

pub fn user_id(user: usize) -> String {
    format!("user{}", user + 1)
}

struct Capsule {
    a: (f64, f64),
    b: (f64, f64),
    radius: f64,
    z_a: f64,
    z_b: f64,
}

impl Capsule {
    /// Depth of the capsule surface at `(x, y)`, if covered.
    fn depth_at(&self, x: f64, y: f64) -> Option<f64> {
        let (dx, dy) = (self.b.0 - self.a.0, self.b.1 - self.a.1);
        let len2 = dx * dx + dy * dy;
        let t = if len2 > 0.0 {
            (((x - self.a.0) * dx + (y - self.a.1) * dy) / len2).clamp(0.0, 1.0)
        } else {
            0.0
        };
        let (px, py) = (self.a.0 + t * dx, self.a.1 + t * dy);
        let d2 = (x - px).powi(2) + (y - py).powi(2);
        let r2 = self.radius * self.radius;
        (d2 <= r2).then(|| self.z_a + t * (self.z_b - self.z_a) - 0.8 * self.radius * (1.0 - d2 / r2).sqrt())
    }
}

/// Renders one sample. Identical arguments always give identical output.
pub fn synth_sample(seed: u64, user: usize, letter: Letter, index: usize) -> Sample {
    let template = templates()[letter.index()];
    render(seed, user, letter, index, &template)
}

fn render(seed: u64, user: usize, letter: Letter, index: usize, template: &Template) -> Sample {
    let traits = user_traits(seed, user);
    let mut rng = ChaCha8Rng::seed_from_u64(mix(&[seed, user as u64, letter.index() as u64, index as u64]));
    let s = traits.scale * rng.random_range(0.97..1.03);
    let roll = template.roll + traits.angle_bias + rng.random_range(-0.07..0.07);
    let (sin_r, cos_r) = roll.sin_cos();
    let rot = |x: f64, y: f64| (x * cos_r - y * sin_r, x * sin_r + y * cos_r);
    let cx = 50.0 + rng.random_range(-6.0..6.0);
    let cy = 56.0 + rng.random_range(-6.0..6.0);
    let palm_z = traits.palm_distance + rng.random_range(-25.0..25.0);
    let (palm_a, palm_b) = (14.0 * s, 16.0 * s);

    let mut capsules = Vec::with_capacity(6);
    let bases = [(-13.0, 2.0), (-10.5, -15.0), (-3.5, -16.5), (3.5, -16.5), (10.5, -15.0)];
    let base_angles = [-1.15, -0.22, -0.07, 0.07, 0.22];
    for (i, state) in template.fingers.iter().enumerate() {
        let (length, forward, bend) = state.shape();
        let length = length * s * rng.random_range(0.94..1.06);
        let forward = forward + traits.finger_forward[i] + rng.random_range(-5.0..5.0);
        let angle = roll + base_angles[i] + bend + traits.finger_angle[i] + rng.random_range(-0.05..0.05);
        let (bx, by) = rot(bases[i].0 * s, bases[i].1 * s);
        let a = (cx + bx, cy + by);
        let b = (a.0 + angle.sin() * length, a.1 - angle.cos() * length);
        capsules.push(Capsule {
            a,
            b,
            radius: if i == 0 { 3.8 } else { 3.2 } * s,
            z_a: palm_z - 4.0,
            z_b: palm_z - 4.0 - forward,
        });
    }
    // forearm, receding from the camera towards the bottom edge
    let (wx, wy) = rot(0.0, 14.0 * s);
    capsules.push(Capsule {
        a: (cx + wx, cy + wy),
        b: (cx + wx - 60.0 * sin_r, cy + wy + 60.0 * cos_r),
        radius: 10.0 * s,
        z_a: palm_z + 8.0,
        z_b: palm_z + 150.0,
    });

    let bg_z = palm_z + rng.random_range(280.0..480.0);
    let bg_slope = (rng.random_range(-1.5..1.5), rng.random_range(-1.5..1.5));
    let bg_phase = rng.random_range(0.0..2.0 * PI);
    let bg_freq = rng.random_range(0.05..0.2);
    let bg_level = rng.random_range(40.0..120.0);
    let interlace = rng.random_range(-10.0..10.0);

    let n = SYNTH_SIDE * SYNTH_SIDE;
    let mut depth = vec![0u16; n];
    let mut hand_z = vec![f64::INFINITY; n];
    for y in 0..SYNTH_SIDE {
        for x in 0..SYNTH_SIDE {
            let (fx, fy) = (x as f64, y as f64);
            let (ux, uy) = (fx - cx, fy - cy);
            let px = ux * cos_r + uy * sin_r;
            let py = -ux * sin_r + uy * cos_r;
            let r2 = (px / palm_a).powi(2) + (py / palm_b).powi(2);
            let mut z = if r2 <= 1.0 { palm_z + 6.0 * r2 } else { f64::INFINITY };
            for c in &capsules {
                if let Some(cz) = c.depth_at(fx, fy) {
                    z = z.min(cz);
                }
            }
            hand_z[y * SYNTH_SIDE + x] = z;
        }
    }
    let hand_min = hand_z.iter().copied().fold(f64::INFINITY, f64::min);
    let mut intensity = vec![0.0; n];
    for y in 0..SYNTH_SIDE {
        for x in 0..SYNTH_SIDE {
            let i = y * SYNTH_SIDE + x;
            let line = if y % 2 == 1 { interlace } else { 0.0 };
            let z = hand_z[i];
            let (d, v) = if z.is_finite() {
                let shade = (1.0 - (z - hand_min) / 140.0).clamp(0.0, 1.0);
                let v = traits.albedo * (0.55 + 0.45 * shade) + rng.random_range(-6.0..6.0);
                let d = if rng.random::<f64>() < 0.003 { 0.0 } else { z + rng.random_range(-1.0..1.0) };
                (d, v)
            } else {
                let d = if rng.random::<f64>() < 0.03 {
                    0.0
                } else {
                    bg_z + bg_slope.0 * (x as f64 - 50.0) + bg_slope.1 * (y as f64 - 50.0)
                };
                let v = bg_level + 35.0 * (bg_freq * (x as f64 + 0.7 * y as f64) + bg_phase).sin() + rng.random_range(-12.0..12.0);
                (d, v)
            };
            depth[i] = d.round().clamp(0.0, u16::MAX as f64) as u16;
            intensity[i] = (v + line).round().clamp(0.0, 255.0);
        }
    }
    Sample {
        user_id: user_id(user),
        letter,
        depth: DepthImage::new(SYNTH_SIDE, SYNTH_SIDE, depth).expect("square grid"),
        intensity: IntensityImage::new(SYNTH_SIDE, SYNTH_SIDE, intensity, IntensityDomain::Integer).expect("clamped"),
    }
}

/// `n_users x 24 x per_class` samples ordered by user, letter, index.
pub fn gen_synthetic(n_users: usize, per_class: usize, seed: u64) -> Vec<Sample> {
    let templates = templates();
    let jobs: Vec<(usize, Letter, usize)> = (0..n_users)
        .flat_map(|u| Letter::all().flat_map(move |l| (0..per_class).map(move |i| (u, l, i))))
        .collect();
    jobs.par_iter()
        .map(|&(u, l, i)| render(seed, u, l, i, &templates[l.index()]))
        .collect()
}
