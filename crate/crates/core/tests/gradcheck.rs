use minet_core::gradcheck::suite::{run_one, run_selection, MODULE_NAMES, OP_NAMES};
use minet_core::gradcheck::GradCheckOptions;

#[test]
fn every_op_passes() {
    let entries = run_selection("ops", &GradCheckOptions::default()).unwrap();
    assert_eq!(entries.len(), OP_NAMES.len());
    for e in &entries {
        assert!(e.passes(), "{}: max rel {:.3e}", e.report.name, e.report.max_rel_error());
    }
}

#[test]
fn every_module_passes_with_enough_coordinates() {
    let opts = GradCheckOptions::default();
    for name in MODULE_NAMES {
        let e = run_one(name, &opts).unwrap();
        println!(
            "{name}: max rel {:.3e}, {} coords, {} skipped at kinks",
            e.report.max_rel_error(),
            e.report.checks.len(),
            e.report.total_skipped()
        );
        assert!(e.passes(), "{name}: max rel {:.3e} worst {:?}", e.report.max_rel_error(), e.report.worst());
        for (i, input) in e.report.input_names.iter().enumerate() {
            assert!(e.report.covered(i, 20), "{name}/{input}: only {} coords", e.report.coords_for(i));
        }
    }
}

#[test]
fn unknown_selection_is_rejected() {
    assert!(run_one("no_such_check", &GradCheckOptions::default()).is_err());
}
