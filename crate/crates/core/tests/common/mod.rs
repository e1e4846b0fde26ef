#![allow(dead_code)]

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use smikm::image::ImageBuf;

pub const SYNTH_WIDTH: usize = 128;
pub const SYNTH_HEIGHT: usize = 96;

const BACKGROUNDS: [[f64; 3]; 10] = [
    [150.0, 110.0, 70.0],
    [90.0, 160.0, 210.0],
    [120.0, 120.0, 130.0],
    [60.0, 140.0, 60.0],
    [220.0, 210.0, 180.0],
    [110.0, 90.0, 60.0],
    [30.0, 80.0, 30.0],
    [170.0, 190.0, 100.0],
    [140.0, 160.0, 200.0],
    [240.0, 240.0, 240.0],
];

const OBJECTS: [[f64; 3]; 10] = [
    [40.0, 20.0, 10.0],
    [250.0, 230.0, 120.0],
    [200.0, 60.0, 40.0],
    [230.0, 200.0, 20.0],
    [140.0, 110.0, 80.0],
    [90.0, 90.0, 100.0],
    [230.0, 40.0, 140.0],
    [100.0, 50.0, 20.0],
    [250.0, 250.0, 255.0],
    [200.0, 120.0, 30.0],
];

/// Membership test for the class-specific object shape in coordinates
/// normalized by the object radius.
fn inside(class: usize, u: f64, v: f64) -> bool {
    match class % 5 {
        0 => u * u + v * v <= 1.0,
        1 => u.abs() <= 1.0 && v.abs() <= 0.6,
        2 => v >= -0.8 && v <= 0.9 && u.abs() <= (0.9 - v) * 0.55,
        3 => {
            let r2 = u * u + v * v;
            (0.35..=1.0).contains(&r2)
        }
        _ => (u.abs() <= 0.3 && v.abs() <= 1.0) || (v.abs() <= 0.3 && u.abs() <= 1.0),
    }
}

/// Class `class` (0..10): textured background plus one textured object with
/// jittered color, size and position.
pub fn synthetic_image(class: usize, variant: u64) -> ImageBuf {
    let mut rng = ChaCha8Rng::seed_from_u64(class as u64 * 10_007 + variant);
    let jitter = |rng: &mut ChaCha8Rng, c: [f64; 3]| c.map(|v| v + rng.gen_range(-12.0..12.0));
    let bg = jitter(&mut rng, BACKGROUNDS[class]);
    let fg = jitter(&mut rng, OBJECTS[class]);
    let radius = rng.gen_range(18.0..30.0);
    let cx = rng.gen_range(40.0..88.0);
    let cy = rng.gen_range(34.0..62.0);
    let angle: f64 = rng.gen_range(-0.4..0.4);
    let period = 3.0 + class as f64;
    let stripes_vertical = class % 2 == 0;
    let noise: Vec<f64> = (0..SYNTH_WIDTH * SYNTH_HEIGHT).map(|_| rng.gen_range(-8.0..8.0)).collect();
    let (sin, cos) = angle.sin_cos();

    ImageBuf::from_rgb_fn(SYNTH_WIDTH, SYNTH_HEIGHT, |x, y| {
        let (dx, dy) = (x as f64 - cx, y as f64 - cy);
        let u = (cos * dx + sin * dy) / radius;
        let v = (-sin * dx + cos * dy) / radius;
        let n = noise[y * SYNTH_WIDTH + x];
        let px = if inside(class, u, v) {
            let t = if ((x / (2 + class % 3)) + (y / (2 + class % 3))) % 2 == 0 { 18.0 } else { -18.0 };
            fg.map(|c| c + t + n)
        } else {
            let coord = if stripes_vertical { x } else { y } as f64;
            let t = 20.0 * (coord * std::f64::consts::TAU / period).sin();
            bg.map(|c| c + t + n)
        };
        px.map(|c| c.round().clamp(0.0, 255.0) as u8)
    })
}

/// Writes `classes x per_class` PNGs named with Wang-style ids
/// (`class * 100 + i`).
pub fn write_dataset(dir: &Path, classes: usize, per_class: usize, seed: u64) {
    std::fs::create_dir_all(dir).unwrap();
    for class in 0..classes {
        for i in 0..per_class {
            let img = synthetic_image(class, seed * 1000 + i as u64);
            img.save_png(&dir.join(format!("{}.png", class * 100 + i))).unwrap();
        }
    }
}
