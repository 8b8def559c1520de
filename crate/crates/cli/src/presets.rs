//! Named presets for fields, initial data and renormalizations.

use std::sync::Arc;

use anyhow::{bail, Result};
use heislab::contact::{contact_from_psi, perturbed_vertical, FrameField, GeneratingFunction, VectorField};
use heislab::{ClosedForm, Smooth1D};

/// "contact": b(ψ); "perturbed": vertical component scaled by λ; "control": X₁ + x₁T.
pub fn vector_field(psi: &str, kind: &str, lambda: f64, n: usize) -> Result<Arc<dyn VectorField<f64>>> {
    match kind {
        "contact" => Ok(Arc::new(contact_from_psi(GeneratingFunction::preset(psi, n)?))),
        "perturbed" => Ok(Arc::new(perturbed_vertical(GeneratingFunction::preset(psi, n)?, lambda))),
        "control" => {
            let mut comps = vec![ClosedForm::zero(n).into_arc(); 2 * n + 1];
            comps[0] = ClosedForm::constant(n, 1.0).into_arc();
            comps[2 * n] = ClosedForm::coordinate(n, 0).into_arc();
            Ok(Arc::new(FrameField::new(comps)?))
        }
        other => bail!("unknown field kind `{other}` (expected contact, perturbed or control)"),
    }
}

/// Scalar presets: "oscillating" = sin(2Σx + 3Σy + t), "y" = y₁, "t", "x2" = x₁², "bump", "zero".
pub fn scalar(name: &str, n: usize, radius: f64) -> Result<ClosedForm<f64>> {
    let dim = 2 * n + 1;
    let unit = |k: usize| {
        let mut e = vec![0u32; dim];
        e[k] = 1;
        e
    };
    Ok(match name {
        "oscillating" => {
            let terms = (0..dim).map(|k| (if k < n { 2.0 } else if k < 2 * n { 3.0 } else { 1.0 }, unit(k))).collect();
            ClosedForm::polynomial(n, terms).then(&Smooth1D::sin())
        }
        "y" => ClosedForm::coordinate(n, n),
        "t" => ClosedForm::coordinate(n, 2 * n),
        "x2" => {
            let mut e = vec![0u32; dim];
            e[0] = 2;
            ClosedForm::polynomial(n, vec![(1.0, e)])
        }
        "bump" => ClosedForm::bump(n, vec![0.0; dim], vec![radius; dim]),
        "zero" => ClosedForm::zero(n),
        other => bail!("unknown scalar preset `{other}`"),
    })
}

pub fn renormalization(name: &str) -> Result<Smooth1D<f64>> {
    Ok(match name {
        "square" => Smooth1D::square(),
        "identity" => Smooth1D::identity(),
        "sin" => Smooth1D::sin(),
        "arctan" => Smooth1D::arctan(),
        other => bail!("unknown renormalization `{other}`"),
    })
}
