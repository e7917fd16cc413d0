use photocon_core::losses::resolve_grid_id;
use photocon_core::optim::{active_groups, grad_check, probe_params, ProbeStatus};
use photocon_core::params::Group;
use photocon_core::synth::{preset, render};

fn check(preset_name: &str, ids: &[&str], probes: usize) {
    let spec = preset(preset_name, 3).unwrap().scaled(0.25).unwrap();
    let (pair, gt) = render(&spec).unwrap();
    for id in ids {
        let cfg = resolve_grid_id(id).unwrap();
        let params = probe_params(&cfg, &gt, 17).unwrap();
        let step = cfg.warm_up_steps;
        for group in active_groups(&cfg, step) {
            let tol = if group.warp_free() { 1e-5 } else { 1e-3 };
            let r = grad_check(&cfg, &pair, &params, group, 1e-6, probes, 5, step, tol).unwrap();
            assert!(r.checked() >= probes.min(r.probes.len()) * 4 / 5, "{id} {group}: {} excluded", r.excluded);
            assert!(r.max_rel_err < tol, "{id} {preset_name} {group}: {:?}", r.probes.iter().filter(|p| p.status == ProbeStatus::Checked && p.rel_err >= tol).collect::<Vec<_>>());
        }
    }
}

#[test]
fn composed_gradients_static() {
    check("static", &["R0", "S2", "L3", "L5"], 12);
}

#[test]
fn composed_gradients_dynamic() {
    check("fast-lateral-object", &["M3", "M4", "D2", "C4"], 12);
}

#[test]
fn uncertainty_group_is_warp_free() {
    assert!(Group::LogSigma.warp_free() && !Group::Depth.warp_free());
}
