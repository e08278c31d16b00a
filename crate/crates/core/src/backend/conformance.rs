//! Startup conformance suite for backends.
//!
//! A backend is accepted only if encoding is deterministic, an image is at
//! distance zero from itself, distances are symmetric and nonnegative, and a
//! batch render matches sequential renders id for id.

use super::{Backend, BackendError, GenerateRequest, Result};
use crate::tensor::PromptEmbedding;

pub const DEFAULT_PROBE_PROMPT: &str = "a photo of a cat on a wooden table";

#[derive(Debug, Clone, PartialEq)]
pub struct ConformanceReport {
    pub checks: Vec<(&'static str, bool)>,
}

impl ConformanceReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|(_, ok)| *ok)
    }
}

fn bit_identical(a: &PromptEmbedding, b: &PromptEmbedding) -> bool {
    a.encoder_id() == b.encoder_id()
        && a.tokens() == b.tokens()
        && a.rows().len() == b.rows().len()
        && a.rows().iter().zip(b.rows()).all(|(x, y)| {
            x.len() == y.len() && x.iter().zip(y).all(|(p, q)| p.to_bits() == q.to_bits())
        })
}

// Deterministic probe perturbations: shift the first row along its first
// coordinate by a few fixed amounts.
fn probe_requests(base: &PromptEmbedding) -> Result<Vec<GenerateRequest>> {
    [0.0, 0.5, 2.0]
        .iter()
        .map(|&shift| {
            let mut rows = base.rows().to_vec();
            rows[0][0] += shift;
            let emb = PromptEmbedding::new(
                base.prompt_text(),
                base.tokens().to_vec(),
                rows,
                base.encoder_id(),
            )?;
            Ok(GenerateRequest::new(emb, 0).with_alpha(shift))
        })
        .collect()
}

/// Runs every check; returns the report, or an error naming the first failure.
pub fn run(backend: &dyn Backend, probe_prompt: &str) -> Result<ConformanceReport> {
    let mut checks = Vec::new();
    let e1 = backend.encode(probe_prompt)?;
    let e2 = backend.encode(probe_prompt)?;
    checks.push(("encode determinism", bit_identical(&e1, &e2)));
    checks.push((
        "encoder id matches capabilities",
        e1.encoder_id() == backend.capabilities().encoder_id,
    ));

    let requests = probe_requests(&e1)?;
    let sequential: Vec<_> = requests
        .iter()
        .map(|r| backend.generate(r))
        .collect::<Result<_>>()?;
    let batched = backend.generate_batch(&requests)?;
    checks.push((
        "batch equals sequential",
        sequential.iter().map(|r| &r.id).eq(batched.iter().map(|r| &r.id)),
    ));

    let mut identity = true;
    let mut symmetric = true;
    let mut nonnegative = true;
    for a in &sequential {
        identity &= backend.distance(a, a)? == 0.0;
        for b in &sequential {
            let ab = backend.distance(a, b)?;
            let ba = backend.distance(b, a)?;
            symmetric &= ab == ba;
            nonnegative &= ab >= 0.0;
        }
    }
    checks.push(("distance identity", identity));
    checks.push(("distance symmetry", symmetric));
    checks.push(("distance nonnegative", nonnegative));
    Ok(ConformanceReport { checks })
}

/// Like [`run`] but turns a failed check into [`BackendError::Conformance`].
pub fn check(backend: &dyn Backend, probe_prompt: &str) -> Result<ConformanceReport> {
    let report = run(backend, probe_prompt)?;
    if let Some((name, _)) = report.checks.iter().find(|(_, ok)| !ok) {
        return Err(BackendError::Conformance(format!("check `{name}` failed")));
    }
    Ok(report)
}
