use super::{Array, DiffError, Graph, NodeId};

/// Worst disagreement between analytic and central-difference gradients.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    /// `|analytic − numeric| / max(1, |analytic|, |numeric|)` at the worst entry.
    pub max_rel_error: f64,
    pub input: usize,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

fn evaluate<F>(f: &F, inputs: &[Array]) -> Result<f64, DiffError>
where
    F: Fn(&mut Graph, &[NodeId]) -> Result<NodeId, DiffError>,
{
    let mut g = Graph::new();
    let ids: Vec<NodeId> = inputs.iter().map(|a| g.constant(a.clone())).collect();
    let out = f(&mut g, &ids)?;
    let v = g.value(out);
    if !v.is_scalar() {
        return Err(DiffError::NonScalarOutput(v.shape().to_vec()));
    }
    Ok(v.item())
}

/// Compares reverse-mode gradients of the scalar built by `f` against central
/// differences with step `h`, over every entry of every input.
pub fn gradient_check<F>(f: F, inputs: &[Array], h: f64) -> Result<GradCheckReport, DiffError>
where
    F: Fn(&mut Graph, &[NodeId]) -> Result<NodeId, DiffError>,
{
    let first = evaluate(&f, inputs)?;
    let second = evaluate(&f, inputs)?;
    if first.to_bits() != second.to_bits() {
        return Err(DiffError::NonDeterministic { first, second });
    }

    let mut g = Graph::new();
    let ids: Vec<NodeId> = inputs.iter().map(|a| g.variable(a.clone())).collect();
    let out = f(&mut g, &ids)?;
    g.backward(out)?;
    let analytic: Vec<Array> =
        ids.iter().zip(inputs).map(|(id, a)| g.grad(*id).cloned().unwrap_or_else(|| Array::zeros(a.shape()))).collect();

    let mut report = GradCheckReport { max_rel_error: 0.0, input: 0, index: 0, analytic: 0.0, numeric: 0.0 };
    let mut probe = inputs.to_vec();
    for (i, input) in inputs.iter().enumerate() {
        for k in 0..input.len() {
            let orig = input.data()[k];
            probe[i].data_mut()[k] = orig + h;
            let plus = evaluate(&f, &probe)?;
            probe[i].data_mut()[k] = orig - h;
            let minus = evaluate(&f, &probe)?;
            probe[i].data_mut()[k] = orig;
            let numeric = (plus - minus) / (2.0 * h);
            let a = analytic[i].data()[k];
            let rel = (a - numeric).abs() / 1f64.max(a.abs()).max(numeric.abs());
            if rel > report.max_rel_error || (i == 0 && k == 0) {
                report = GradCheckReport { max_rel_error: rel, input: i, index: k, analytic: a, numeric };
            }
        }
    }
    Ok(report)
}
