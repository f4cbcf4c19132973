use serde::Serialize;

use super::ArchSpec;

/// A trained (or scored) architecture placed in accuracy/cost space.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub spec: ArchSpec,
    /// Fraction in [0, 1].
    pub accuracy: f64,
    pub mflops: f64,
}

impl Candidate {
    pub fn new(spec: ArchSpec, accuracy: f64, mflops: f64) -> Self {
        Candidate {
            spec,
            accuracy,
            mflops,
        }
    }

    /// `self` is at least as good on both axes and strictly better on one.
    pub fn dominates(&self, other: &Candidate) -> bool {
        self.accuracy >= other.accuracy
            && self.mflops <= other.mflops
            && (self.accuracy > other.accuracy || self.mflops < other.mflops)
    }
}

#[derive(Serialize)]
struct CandidateRow<'a> {
    name: &'a str,
    accuracy: f64,
    mflops: f64,
}

impl Serialize for Candidate {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        CandidateRow {
            name: &self.spec.name,
            accuracy: self.accuracy,
            mflops: self.mflops,
        }
        .serialize(s)
    }
}

/// Non-dominated subset, sorted by cost ascending. Of several candidates with
/// identical accuracy and cost only the first is kept.
pub fn pareto_frontier(candidates: &[Candidate]) -> Vec<Candidate> {
    let mut keep: Vec<&Candidate> = Vec::new();
    for (i, c) in candidates.iter().enumerate() {
        let dominated = candidates.iter().any(|o| o.dominates(c));
        let repeated = candidates[..i]
            .iter()
            .any(|o| o.accuracy == c.accuracy && o.mflops == c.mflops);
        if !dominated && !repeated {
            keep.push(c);
        }
    }
    keep.sort_by(|a, b| a.mflops.total_cmp(&b.mflops));
    keep.into_iter().cloned().collect()
}
