use alloc::format;
use alloc::string::ToString;
use alloc::vec;
use alloc::vec::Vec;

use super::{SceneSpec, Surface, Texture, DEFAULT_FOCAL, DEFAULT_HEIGHT, DEFAULT_WIDTH};
use crate::error::{Error, Result};
use crate::geometry::PoseSE3;
use crate::photometry::BrightnessParams;

pub const PRESET_NAMES: [&str; 8] = [
    "static",
    "illumination-drift",
    "same-velocity-object",
    "fast-lateral-object",
    "occluder",
    "textureless-patch",
    "distant-scene",
    "near-object",
];

fn camera_motion() -> PoseSE3 {
    PoseSE3::new([0.0, 0.004, 0.0], [-0.5, 0.02, -0.1])
}

fn static_layout() -> Vec<Surface> {
    vec![
        Surface::plane(16.0),
        Surface::cuboid([-6.0, -1.5, 8.0], [-3.0, 2.5, 10.0]),
        Surface::cuboid([1.0, -2.0, 6.0], [3.5, 1.5, 7.5]),
        Surface::patch(11.0, [5.0, 10.0, -3.0, 3.0]),
    ]
}

fn base(name: &str, seed: u64, surfaces: Vec<Surface>, pose: PoseSE3) -> SceneSpec {
    SceneSpec {
        name: name.to_string(),
        width: DEFAULT_WIDTH,
        height: DEFAULT_HEIGHT,
        focal: DEFAULT_FOCAL,
        surfaces,
        pose,
        brightness: BrightnessParams::default(),
        texture_seed: seed,
    }
}

/// One of the named scene presets at the default size, textured from `seed`.
pub fn preset(name: &str, seed: u64) -> Result<SceneSpec> {
    let spec = match name {
        "static" => base(name, seed, static_layout(), camera_motion()),
        "illumination-drift" => {
            let mut s = base(name, seed, static_layout(), camera_motion());
            s.brightness = BrightnessParams { a: 1.2, b: 0.05 };
            s
        }
        "same-velocity-object" => {
            // Translation only, so an object carried along with the camera is pixel-static.
            let pose = PoseSE3::new([0.0; 3], [-0.5, 0.02, -0.1]);
            let mut layout = static_layout();
            layout.push(Surface::cuboid([-1.5, -1.0, 5.0], [0.5, 1.5, 6.0]).moving([0.5, -0.02, 0.1]));
            base(name, seed, layout, pose)
        }
        "fast-lateral-object" => {
            let mut layout = static_layout();
            layout.push(Surface::cuboid([-1.5, -1.0, 5.0], [0.5, 1.5, 6.0]).moving([-0.4, 0.0, 0.0]));
            base(name, seed, layout, camera_motion())
        }
        "occluder" => {
            let layout = vec![
                Surface::plane(14.0),
                Surface::cuboid([-1.0, -1.5, 3.0], [1.0, 1.5, 3.6]),
                Surface::cuboid([4.0, -1.0, 7.0], [6.0, 2.0, 8.0]),
            ];
            base(name, seed, layout, PoseSE3::new([0.0; 3], [-0.4, 0.0, 0.0]))
        }
        "textureless-patch" => {
            let mut layout = static_layout();
            layout.push(Surface::patch(9.0, [-2.0, 0.0, -1.0, 1.0]).textured(Texture::Constant(0.5)));
            base(name, seed, layout, camera_motion())
        }
        "distant-scene" => {
            let layout = vec![
                Surface::plane(60.0),
                Surface::cuboid([-12.0, -4.0, 40.0], [-4.0, 3.0, 45.0]),
                Surface::patch(50.0, [8.0, 20.0, -6.0, 4.0]),
            ];
            base(name, seed, layout, camera_motion())
        }
        "near-object" => {
            let mut layout = static_layout();
            layout.push(Surface::cuboid([-0.3, -0.3, 1.2], [0.3, 0.3, 1.6]));
            base(name, seed, layout, camera_motion())
        }
        other => {
            return Err(Error::InvalidScene(format!(
                "unknown preset '{other}'; valid presets: {}",
                PRESET_NAMES.join(", ")
            )))
        }
    };
    Ok(spec)
}
