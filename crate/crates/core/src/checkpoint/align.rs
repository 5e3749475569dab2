use serde::{Deserialize, Serialize};

use super::Checkpoint;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShapeMismatch {
    pub name: String,
    pub shape_a: Vec<usize>,
    pub shape_b: Vec<usize>,
}

/// Name/shape comparison of two checkpoints. The four lists partition the
/// union of both name sets.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlignmentReport {
    pub matched: Vec<String>,
    /// Present in `b` only.
    pub missing_in_a: Vec<String>,
    /// Present in `a` only.
    pub missing_in_b: Vec<String>,
    pub shape_mismatches: Vec<ShapeMismatch>,
}

impl AlignmentReport {
    pub fn is_diffable(&self) -> bool {
        self.missing_in_a.is_empty() && self.missing_in_b.is_empty() && self.shape_mismatches.is_empty()
    }

    pub fn summary(&self) -> String {
        let mut s = format!(
            "{} matched, {} only in instruct, {} only in base, {} shape mismatches",
            self.matched.len(),
            self.missing_in_a.len(),
            self.missing_in_b.len(),
            self.shape_mismatches.len()
        );
        for m in self.shape_mismatches.iter().take(5) {
            s.push_str(&format!("; `{}` {:?} vs {:?}", m.name, m.shape_a, m.shape_b));
        }
        for n in self.missing_in_a.iter().take(5) {
            s.push_str(&format!("; `{n}` missing in base"));
        }
        for n in self.missing_in_b.iter().take(5) {
            s.push_str(&format!("; `{n}` missing in instruct"));
        }
        s
    }
}

/// Compares `base` (a) against `instruct` (b). Never fails; problems are reported.
pub fn validate_pair(base: &Checkpoint, instruct: &Checkpoint) -> AlignmentReport {
    let mut report = AlignmentReport::default();
    for t in base.tensors() {
        match instruct.get(t.name()) {
            None => report.missing_in_b.push(t.name().to_string()),
            Some(other) if other.shape() != t.shape() => report.shape_mismatches.push(ShapeMismatch {
                name: t.name().to_string(),
                shape_a: t.shape().to_vec(),
                shape_b: other.shape().to_vec(),
            }),
            Some(_) => report.matched.push(t.name().to_string()),
        }
    }
    report.missing_in_a = instruct
        .names()
        .filter(|n| !base.contains(n))
        .map(str::to_string)
        .collect();
    report
}
