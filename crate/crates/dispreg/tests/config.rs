use dispreg::config::{parse_grid, FeatureChoice, Settings};
use dispreg_core::FeatureKind;

#[test]
fn flags_override_file_values() {
    let file = Settings::parse(
        "# sample\nq = 0.3\nsteps = 7\ngrid = 6x7x8\nlambda = 2\nrefine = true\nalpha6 = 50, 0\nfeatures = gradient\n",
    )
    .unwrap();
    let mut flags = Settings::default();
    flags.set("steps", "9").unwrap();
    flags.set("no-refine", "true").unwrap();
    let merged = file.overlay(flags);
    assert_eq!(merged.q, Some(0.3));
    assert_eq!(merged.steps, Some(9));
    assert_eq!(merged.refine, Some(false));
    assert_eq!(merged.features, Some(FeatureChoice::Gradient));
    let cfg = merged.registration_config().unwrap();
    assert_eq!(cfg.grid, [6, 7, 8]);
    assert_eq!(cfg.steps, 9);
    assert!(!cfg.refine);
    assert_eq!(cfg.lambda, 2.0);
    assert_eq!(cfg.regularizer.temperature(), 50.0);
    assert_eq!(cfg.features, FeatureKind::IntensityGradient);
}

#[test]
fn explicit_temperature_and_mean_field_switch() {
    let s = Settings::parse("alpha6 = 50\ntemperature = 7\nno_mean_field = true\n").unwrap();
    let cfg = s.registration_config().unwrap();
    assert_eq!(cfg.regularizer.temperature(), 7.0);
    assert_eq!(cfg.regularizer.iterations, 0);
    let defaults = Settings::default().registration_config().unwrap();
    assert_eq!(defaults, dispreg_core::RegistrationConfig::default());
}

#[test]
fn invalid_settings_are_config_errors() {
    for text in [
        "q 0.3",
        "unknown = 1",
        "steps = seven",
        "grid = 4x4",
        "features = sift",
        "alpha9 = 1",
    ] {
        assert!(
            matches!(Settings::parse(text), Err(dispreg::Error::Config(_))),
            "{text}"
        );
    }
    let s = Settings::parse("steps = 8").unwrap();
    let err = s.registration_config().unwrap_err();
    assert_eq!(err.exit_code(), 1);
}

#[test]
fn grid_syntax() {
    assert_eq!(parse_grid("12").unwrap(), [12; 3]);
    assert_eq!(parse_grid("4x5x6").unwrap(), [4, 5, 6]);
    assert_eq!(parse_grid("4, 5, 6").unwrap(), [4, 5, 6]);
    assert!(parse_grid("0").is_err());
}
