//! Seeded scene families used by the experiments and the test suites.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::sim::{LayerParams, SceneParams, TextureParams};

pub const SUITE_SIZE: usize = 64;

fn velocity(rng: &mut ChaCha8Rng, max_speed: f64) -> [f64; 2] {
    let speed = rng.gen_range(0.5 * max_speed..=max_speed);
    // mostly horizontal pans, as in handheld and vehicle footage
    let angle = rng.gen_range(-0.5f64..0.5) + if rng.gen::<bool>() { 0.0 } else { std::f64::consts::PI };
    [speed * angle.cos(), speed * angle.sin()]
}

/// Smooth single-surface scene: global translation with `|v| ≤ 3` px/interval
/// and a small rotation.
pub fn smooth_scene(seed: u64) -> SceneParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0001);
    SceneParams {
        seed,
        height: SUITE_SIZE,
        width: SUITE_SIZE,
        channels: 3,
        velocity: velocity(&mut rng, 3.0),
        rotation_rate: rng.gen_range(-0.01..0.01),
        layers: Vec::new(),
        time_span: [-1.5, 5.5],
        texture: TextureParams::default(),
    }
}

/// Background pan plus one foreground rectangle moving differently.
pub fn two_layer_scene(seed: u64) -> SceneParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0002);
    let bg = velocity(&mut rng, 3.0);
    let mut fg = velocity(&mut rng, 3.0);
    // keep the layer's motion clearly distinct from the background
    if (fg[0] - bg[0]).hypot(fg[1] - bg[1]) < 2.0 {
        fg = [-bg[0], fg[1]];
    }
    let side = rng.gen_range(20..=26);
    let x0 = rng.gen_range(16.0..(SUITE_SIZE - side - 16) as f64 + 1.0);
    let y0 = rng.gen_range(16.0..(SUITE_SIZE - side - 16) as f64 + 1.0);
    SceneParams {
        seed,
        height: SUITE_SIZE,
        width: SUITE_SIZE,
        channels: 3,
        velocity: bg,
        rotation_rate: 0.0,
        layers: vec![LayerParams {
            top_left: [x0 - fg[0], y0 - fg[1]],
            size: [side, side],
            velocity: fg,
        }],
        time_span: [-1.5, 5.5],
        texture: TextureParams::default(),
    }
}

/// A scene with no motion at all.
pub fn static_scene(seed: u64) -> SceneParams {
    SceneParams::static_scene(seed, SUITE_SIZE, SUITE_SIZE)
}
