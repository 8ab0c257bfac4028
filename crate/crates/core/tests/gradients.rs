use dialopre_core::autodiff::Fault;
use dialopre_core::gradcheck::{fixture_check, GradCheckConfig};

#[test]
fn analytic_gradients_match_finite_differences() {
    for model_seed in [1, 7] {
        let cfg = GradCheckConfig { coordinates: 300, seed: 3, ..Default::default() };
        let report = fixture_check(&cfg, model_seed).unwrap();
        assert!(report.coordinates_checked >= 300);
        assert!(report.max_rel_error < 1e-4, "{report:?}");
    }
}

#[test]
fn harness_detects_dropped_attention_gradient() {
    let cfg = GradCheckConfig { coordinates: 300, seed: 3, fault: Some(Fault::DropAttentionScoreGrad), ..Default::default() };
    let report = fixture_check(&cfg, 1).unwrap();
    assert!(report.max_rel_error > 1e-2, "{report:?}");
}
