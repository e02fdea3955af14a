use ssrecon::objective::Subject;
use ssrecon::recon::coil_kspace;
use ssrecon::seed;
use ssrecon::tensor::{make_coils, make_phantom, ComplexGrid};

use crate::spec::ExperimentSpec;
use crate::Result;

/// A subject together with its ground-truth image.
#[derive(Debug, Clone)]
pub struct Case {
    pub image: ComplexGrid,
    pub subject: Subject,
}

fn cases(spec: &ExperimentSpec, n: usize, phantom_label: &str, coil_label: &str) -> Result<Vec<Case>> {
    let p = &spec.phantom;
    (0..n as u64)
        .map(|i| {
            let image = make_phantom(p.nx, p.ny, p.nt, seed::derive(spec.seed, phantom_label, i))?;
            let coils = make_coils(p.nx, p.ny, spec.coils.count, seed::derive(spec.seed, coil_label, i))?;
            let kspace = coil_kspace(&image, &coils)?;
            Ok(Case { image, subject: Subject { kspace, coils, acquired: None } })
        })
        .collect()
}

pub fn training_cases(spec: &ExperimentSpec) -> Result<Vec<Case>> {
    cases(spec, spec.phantom.subjects, "phantom", "coils")
}

pub fn eval_cases(spec: &ExperimentSpec) -> Result<Vec<Case>> {
    cases(spec, spec.phantom.eval_subjects, "eval-phantom", "eval-coils")
}

pub fn subjects(cases: &[Case]) -> Vec<Subject> {
    cases.iter().map(|c| c.subject.clone()).collect()
}
