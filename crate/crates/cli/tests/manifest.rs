use std::path::Path;

use photocon::manifest::{ManifestFile, Overrides, SceneSource};
use photocon::scene::SceneFile;
use photocon_core::losses::Occlusion;

#[test]
fn grid_runs_expand_seeds() {
    let m = ManifestFile::parse(
        r#"
        [schedule]
        max_steps = 500
        [[run]]
        grid = "M3"
        scene = "static"
        seeds = [7, 8]
        [[run]]
        grid = "S2"
        scene = "occluder"
        seed = 1
        [run.schedule]
        max_steps = 50
        "#,
    )
    .unwrap();
    let r = m.resolve(Path::new("."), &Overrides::default()).unwrap();
    assert_eq!(r.runs.len(), 3);
    assert_eq!(r.runs[0].label, "M3");
    assert_eq!(r.runs[1].seed, 8);
    assert_eq!(r.runs[0].schedule.max_steps, 500);
    assert_eq!(r.runs[2].schedule.max_steps, 50);
    assert_eq!(r.runs[2].scene, SceneSource::Preset("occluder".into()));
    assert_eq!(r.runs[2].rel_dir(), Path::new("S2/occluder/1"));
}

#[test]
fn empty_manifest_is_an_error() {
    let m = ManifestFile::parse("out = \"x\"").unwrap();
    let err = m.resolve(Path::new("."), &Overrides::default()).unwrap_err();
    assert!(err.to_string().contains("no runs"), "{err}");
}

#[test]
fn duplicate_triples_are_rejected() {
    let m = ManifestFile::parse(
        r#"
        [[run]]
        grid = "S2"
        scene = "static"
        seeds = [1, 2]
        [[run]]
        grid = "S2"
        scene = "static"
        seed = 2
        "#,
    )
    .unwrap();
    let err = m.resolve(Path::new("."), &Overrides::default()).unwrap_err();
    assert!(err.to_string().contains("duplicate"), "{err}");
}

#[test]
fn unknown_grid_id_lists_valid_ids() {
    let m = ManifestFile::parse("[[run]]\ngrid = \"Q9\"\nscene = \"static\"\n").unwrap();
    let err = format!("{:#}", m.resolve(Path::new("."), &Overrides::default()).unwrap_err());
    assert!(err.contains("Q9") && err.contains("M3") && err.contains("C4"), "{err}");
}

#[test]
fn explicit_config_is_validated() {
    let ok = ManifestFile::parse(
        r#"
        [[run]]
        scene = "static"
        [run.config]
        label = "sp-dc"
        repr = "softplus"
        occlusion = "dc"
        auto_mask = true
        [run.weights]
        smooth_depth = 0.05
        "#,
    )
    .unwrap()
    .resolve(Path::new("."), &Overrides::default())
    .unwrap();
    let cfg = &ok.runs[0].config;
    assert_eq!(cfg.occlusion, Occlusion::DepthConsistency);
    assert!(cfg.dynamic.auto_mask);
    assert_eq!(cfg.weights.smooth_depth, 0.05);

    let bad = ManifestFile::parse(
        r#"
        [[run]]
        scene = "static"
        [run.config]
        label = "bad"
        repr = "softplus"
        brightness = true
        auto_mask = true
        "#,
    )
    .unwrap();
    let err = format!("{:#}", bad.resolve(Path::new("."), &Overrides::default()).unwrap_err());
    assert!(err.contains("auto_mask"), "{err}");
}

#[test]
fn overrides_filter_and_replace() {
    let m = ManifestFile::parse(
        r#"
        [[run]]
        grid = "S2"
        scene = "static"
        seeds = [1, 2, 3]
        [[run]]
        grid = "M3"
        scene = "static"
        "#,
    )
    .unwrap();
    let ov = Overrides { seeds: Some(vec![9]), grid: Some(vec!["M3".into()]), scene: None, max_steps: Some(300) };
    let r = m.resolve(Path::new("."), &ov).unwrap();
    assert_eq!(r.runs.len(), 1);
    assert_eq!((r.runs[0].label.as_str(), r.runs[0].seed, r.runs[0].schedule.max_steps), ("M3", 9, 300));
}

#[test]
fn unknown_keys_are_rejected() {
    assert!(ManifestFile::parse("[[run]]\ngrid = \"S2\"\nscene = \"static\"\nsede = 3\n").is_err());
}

#[test]
fn scene_file_builds_surfaces() {
    let f = SceneFile::parse(
        r#"
        name = "wall"
        width = 40
        height = 20
        focal = 25.0
        [pose]
        t = [-0.2, 0.0, 0.0]
        [brightness]
        a = 1.1
        b = 0.0
        [[surface]]
        plane = 8.0
        [[surface]]
        cuboid = { min = [-1.0, -1.0, 4.0], max = [1.0, 1.0, 5.0] }
        motion = [0.1, 0.0, 0.0]
        texture = { constant = 0.5 }
        "#,
    )
    .unwrap();
    let spec = f.to_spec(3).unwrap();
    assert_eq!((spec.name.as_str(), spec.width, spec.height, spec.texture_seed), ("wall", 40, 20, 3));
    assert_eq!(spec.surfaces.len(), 2);
    assert!(spec.surfaces[1].is_dynamic());
    assert_eq!(spec.brightness.a, 1.1);
}

#[test]
fn scene_file_over_preset() {
    let spec = SceneFile::parse("preset = \"occluder\"\nscale = 0.5\ntexture_seed = 11\n").unwrap().to_spec(0).unwrap();
    assert_eq!((spec.width, spec.height, spec.texture_seed), (160, 48, 11));
    assert!(SceneFile::parse("[[surface]]\n").unwrap().to_spec(0).is_err());
    assert!(SceneFile::parse("").unwrap().to_spec(0).is_err());
}
