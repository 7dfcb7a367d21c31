//! Text forms of a [`RegistrationReport`]. Both renderings are pure
//! functions of the report, so equal reports give equal bytes; wall-clock
//! runtimes are written separately by [`render_timings`].

use std::fmt::Write as _;

use dispreg_core::RegistrationReport;

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string())
        .unwrap_or_else(|| "undefined".into())
}

/// `key = value` lines. Displacements are in normalized units; multiply by
/// `voxels_per_unit` for voxels.
pub fn render_key_value(r: &RegistrationReport) -> String {
    let mut s = String::new();
    writeln!(s, "mean_dice = {}", opt(r.mean_dice)).unwrap();
    writeln!(s, "initial_mean_dice = {}", opt(r.initial_mean_dice)).unwrap();
    for (label, d) in &r.dice {
        writeln!(s, "dice.{label} = {}", opt(*d)).unwrap();
    }
    if let Some(j) = &r.jacobian {
        writeln!(s, "std_jac = {}", j.std_det).unwrap();
        writeln!(s, "mean_jac = {}", j.mean_det).unwrap();
        writeln!(s, "folding = {}", j.folding_fraction).unwrap();
        writeln!(s, "jacobian_voxels = {}", j.voxels).unwrap();
    }
    writeln!(s, "label_loss = {}", opt(r.label_loss)).unwrap();
    writeln!(s, "mean_displacement = {}", r.mean_displacement).unwrap();
    let [a, b, c] = r.voxels_per_unit;
    writeln!(s, "displacement_units = normalized").unwrap();
    writeln!(s, "voxels_per_unit = {a} {b} {c}").unwrap();
    s
}

/// `label,dice` rows followed by summary rows; undefined values are empty.
pub fn render_csv(r: &RegistrationReport) -> String {
    let cell = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    let mut s = String::from("label,dice\n");
    for (label, d) in &r.dice {
        writeln!(s, "{label},{}", cell(*d)).unwrap();
    }
    writeln!(s, "mean,{}", cell(r.mean_dice)).unwrap();
    writeln!(s, "initial_mean,{}", cell(r.initial_mean_dice)).unwrap();
    writeln!(s, "std_jac,{}", cell(r.jacobian.map(|j| j.std_det))).unwrap();
    writeln!(
        s,
        "folding,{}",
        cell(r.jacobian.map(|j| j.folding_fraction))
    )
    .unwrap();
    writeln!(s, "label_loss,{}", cell(r.label_loss)).unwrap();
    writeln!(s, "mean_displacement,{}", r.mean_displacement).unwrap();
    s
}

/// `stage,seconds` rows in execution order.
pub fn render_timings(r: &RegistrationReport) -> String {
    let mut s = String::from("stage,seconds\n");
    for (stage, secs) in &r.runtimes {
        writeln!(s, "{stage},{secs:.6}").unwrap();
    }
    s
}
