use splatedit_service::testing::fuzz_phase_machine;
use splatedit_service::Phase;

#[test]
fn random_operation_sequences_respect_the_phase_machine() {
    let dir = tempfile::tempdir().unwrap();
    let report = fuzz_phase_machine(120, 25, 7, dir.path());
    assert_eq!(report.sequences, 120);
    assert!(report.frames > 0, "no frames observed");
    for p in Phase::ALL {
        assert!(report.phases_seen.contains(&p), "phase {p} never reached");
    }
    assert!(report.violations.is_empty(), "{:#?}", &report.violations[..report.violations.len().min(20)]);
}
