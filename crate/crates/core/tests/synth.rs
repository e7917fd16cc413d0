use photocon_core::geometry::PoseSE3;
use photocon_core::synth::{preset, render, verify, SceneSpec, Surface, PRESET_NAMES};
use photocon_core::photometry::BrightnessParams;

fn single_plane(depth: f64, pose: PoseSE3) -> SceneSpec {
    SceneSpec {
        name: "plane".into(),
        width: 64,
        height: 24,
        focal: 100.0,
        surfaces: vec![Surface::plane(depth)],
        pose,
        brightness: BrightnessParams::default(),
        texture_seed: 3,
    }
}

#[test]
fn identity_pose_gives_identical_frames() {
    let (pair, gt) = render(&single_plane(7.0, PoseSE3::IDENTITY)).unwrap();
    for (a, b) in pair.frames[0].data().iter().zip(pair.frames[1].data()) {
        assert!((a - b).abs() < 1e-12);
    }
    assert!(gt.depth[0].data().iter().all(|d| (d - 7.0).abs() < 1e-12));
}

#[test]
fn lateral_translation_shifts_plane_one_pixel() {
    let (pair, gt) = render(&single_plane(10.0, PoseSE3::new([0.0; 3], [0.1, 0.0, 0.0]))).unwrap();
    let (h, w) = (pair.height(), pair.width());
    for i in 0..h {
        for j in 0..w - 1 {
            assert!((pair.frames[0].at(i, j) - pair.frames[1].at(i, j + 1)).abs() < 1e-12);
        }
    }
    assert!((0..h).all(|i| gt.out_of_view[0].at(i, w - 1)));
    assert_eq!(gt.occluded[0].count(), 0);
}

#[test]
fn box_occludes_background_beside_its_edge() {
    let mut spec = single_plane(12.0, PoseSE3::new([0.0; 3], [-0.3, 0.0, 0.0]));
    spec.surfaces.push(Surface::cuboid([-0.5, -0.5, 4.0], [0.5, 0.5, 5.0]));
    let (pair, gt) = render(&spec).unwrap();
    let occ = &gt.occluded[0];
    assert!(occ.count() > 0);
    // The second camera sits to the right; the box slides left over the background.
    let (h, w) = (pair.height(), pair.width());
    for i in 0..h {
        for j in 0..w {
            if !occ.at(i, j) {
                continue;
            }
            assert_eq!(gt.surface_id[0].at(i, j), 0, "only background can be hidden");
            let box_right = (1..=8).any(|dj| j + dj < w && gt.surface_id[0].at(i, j + dj) != 0);
            assert!(box_right, "occluded pixel ({i}, {j}) is not beside the box edge");
        }
    }
}

#[test]
fn every_preset_renders_and_verifies() {
    for name in PRESET_NAMES {
        let spec = preset(name, 11).unwrap();
        let (pair, gt) = render(&spec).unwrap();
        assert!(gt.depth.iter().all(|d| d.data().iter().all(|v| *v > 0.0)));
        let with_motion = verify(&pair, &gt, true).unwrap();
        assert!(with_motion.checked_pixels > pair.height() * pair.width() / 2, "{name}");
        assert!(with_motion.max_residual < 1e-6, "{name}: {}", with_motion.max_residual);
        for f in &pair.frames {
            assert!(f.data().iter().all(|v| *v >= 0.0 && *v <= 1.2 * 0.9 + 0.05 + 1e-12));
        }
    }
}

#[test]
fn withheld_motion_concentrates_residual_on_dynamic_pixels() {
    let (pair, gt) = render(&preset("fast-lateral-object", 2).unwrap()).unwrap();
    let r = verify(&pair, &gt, false).unwrap();
    assert!(r.dynamic_share > 0.9, "{}", r.dynamic_share);
}

#[test]
fn same_velocity_object_is_pixel_static() {
    let (pair, gt) = render(&preset("same-velocity-object", 4).unwrap()).unwrap();
    let (h, w) = (pair.height(), pair.width());
    let mut interior = 0;
    for i in 1..h - 1 {
        for j in 1..w - 1 {
            let all_dyn = (0..3).all(|a| (0..3).all(|b| gt.dynamic[0].at(i + a - 1, j + b - 1)));
            if all_dyn {
                interior += 1;
                assert!((pair.frames[0].at(i, j) - pair.frames[1].at(i, j)).abs() < 1e-9);
            }
        }
    }
    assert!(interior > 100);
}

#[test]
fn rendering_is_deterministic_and_seed_dependent() {
    let a = render(&preset("static", 5).unwrap()).unwrap();
    let b = render(&preset("static", 5).unwrap()).unwrap();
    let c = render(&preset("static", 6).unwrap()).unwrap();
    assert_eq!(a.0.frames, b.0.frames);
    assert_ne!(a.0.frames, c.0.frames);
}

#[test]
fn empty_scene_is_rejected() {
    let mut spec = single_plane(5.0, PoseSE3::IDENTITY);
    spec.surfaces.clear();
    assert!(matches!(render(&spec), Err(photocon_core::Error::InvalidScene(_))));
    assert!(preset("nope", 0).is_err());
}

#[test]
fn scaled_scene_keeps_geometry() {
    let spec = preset("static", 1).unwrap().scaled(0.25).unwrap();
    assert_eq!((spec.height, spec.width), (24, 80));
    let (pair, gt) = render(&spec).unwrap();
    assert!(verify(&pair, &gt, true).unwrap().max_residual < 1e-6);
}
