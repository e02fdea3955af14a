use serde::Serialize;

/// Outcome of one numerical check. `pass` holds exactly when the absolute
/// deviation is within tolerance.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerificationReport {
    pub claim: String,
    pub trials: u64,
    pub estimate: f64,
    pub reference: f64,
    pub abs_deviation: f64,
    pub rel_deviation: f64,
    pub tolerance: f64,
    pub pass: bool,
    pub note: String,
}

impl VerificationReport {
    pub fn new(claim: impl Into<String>, trials: u64, estimate: f64, reference: f64, tolerance: f64) -> Self {
        let abs_deviation = (estimate - reference).abs();
        VerificationReport {
            claim: claim.into(),
            trials,
            estimate,
            reference,
            abs_deviation,
            rel_deviation: if reference != 0.0 { abs_deviation / reference.abs() } else { abs_deviation },
            tolerance,
            pass: abs_deviation <= tolerance,
            note: String::new(),
        }
    }

    pub fn with_note(mut self, note: impl Into<String>) -> Self {
        self.note = note.into();
        self
    }

    pub fn summary(&self) -> String {
        format!(
            "[{}] {}: estimate {:.6} vs reference {:.6} (|dev| {:.3e}, tol {:.3e}, {} trials){}",
            if self.pass { "PASS" } else { "FAIL" },
            self.claim,
            self.estimate,
            self.reference,
            self.abs_deviation,
            self.tolerance,
            self.trials,
            if self.note.is_empty() { String::new() } else { format!("\n    {}", self.note) }
        )
    }
}
