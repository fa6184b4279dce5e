//! Central-difference gradient verification. The checker treats the graph
//! builder as a pure function of its leaf values: it runs one backward pass
//! for the analytic gradients, then re-evaluates the loss at `x ± eps` for
//! every input coordinate and compares.

use crate::{Graph, NodeId, TensorError};

/// Outcome of a finite-difference comparison over all input coordinates.
#[derive(Debug, Clone)]
pub struct GradCheck {
    /// max over coordinates of |analytic - numeric| / max(1e-8, |analytic| + |numeric|)
    pub max_rel_err: f64,
    /// (input index, flat coordinate) where the maximum occurred
    pub worst: (usize, usize),
    pub analytic_at_worst: f64,
    pub numeric_at_worst: f64,
}

/// One differentiable input to the checked function: shape plus values.
#[derive(Debug, Clone)]
pub struct CheckInput {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl CheckInput {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        CheckInput { rows, cols, data }
    }
}

fn eval_loss<F>(build: &F, inputs: &[CheckInput]) -> Result<f64, TensorError>
where
    F: Fn(&mut Graph<f64>, &[NodeId]) -> Result<NodeId, TensorError>,
{
    let mut g = Graph::new();
    let ids: Vec<NodeId> = inputs
        .iter()
        .map(|inp| g.leaf(inp.rows, inp.cols, inp.data.clone()))
        .collect::<Result<_, _>>()?;
    let loss = build(&mut g, &ids)?;
    if g.shape(loss) != (1, 1) {
        return Err(TensorError::Shape {
            op: "finite_difference_check",
            details: format!("loss must be 1x1, got {:?}", g.shape(loss)),
        });
    }
    let v = g.values(loss)[0];
    if !v.is_finite() {
        return Err(TensorError::NonFinite {
            context: "finite_difference_check",
            name: "loss".into(),
            index: 0,
        });
    }
    Ok(v)
}

/// Compares analytic gradients of `build` against central differences with
/// step `eps` for every coordinate of every input. `build` must construct the
/// same scalar function each time it is called (pure in the leaf values).
pub fn finite_difference_check<F>(
    build: F,
    inputs: &[CheckInput],
    eps: f64,
) -> Result<GradCheck, TensorError>
where
    F: Fn(&mut Graph<f64>, &[NodeId]) -> Result<NodeId, TensorError>,
{
    // Analytic pass.
    let mut g = Graph::new();
    let ids: Vec<NodeId> = inputs
        .iter()
        .map(|inp| g.leaf(inp.rows, inp.cols, inp.data.clone()))
        .collect::<Result<_, _>>()?;
    let loss = build(&mut g, &ids)?;
    if g.shape(loss) != (1, 1) {
        return Err(TensorError::Shape {
            op: "finite_difference_check",
            details: format!("loss must be 1x1, got {:?}", g.shape(loss)),
        });
    }
    if !g.values(loss)[0].is_finite() {
        return Err(TensorError::NonFinite {
            context: "finite_difference_check",
            name: "loss".into(),
            index: 0,
        });
    }
    g.backward(loss)?;
    let analytic: Vec<Vec<f64>> = ids
        .iter()
        .zip(inputs)
        .map(|(&id, inp)| {
            g.grad(id)
                .map(|s| s.to_vec())
                .unwrap_or_else(|| vec![0.0; inp.data.len()])
        })
        .collect();

    // Numeric passes, one coordinate at a time.
    let mut check = GradCheck {
        max_rel_err: 0.0,
        worst: (0, 0),
        analytic_at_worst: 0.0,
        numeric_at_worst: 0.0,
    };
    let mut work: Vec<CheckInput> = inputs.to_vec();
    for (p, input) in inputs.iter().enumerate() {
        for (c, &base) in input.data.iter().enumerate() {
            work[p].data[c] = base + eps;
            let plus = eval_loss(&build, &work)?;
            work[p].data[c] = base - eps;
            let minus = eval_loss(&build, &work)?;
            work[p].data[c] = base;

            let numeric = (plus - minus) / (2.0 * eps);
            let a = analytic[p][c];
            if !numeric.is_finite() || !a.is_finite() {
                return Err(TensorError::NonFinite {
                    context: "finite_difference_check",
                    name: format!("input {p}"),
                    index: c,
                });
            }
            let rel = (a - numeric).abs() / f64::max(1e-8, a.abs() + numeric.abs());
            if rel > check.max_rel_err {
                check.max_rel_err = rel;
                check.worst = (p, c);
                check.analytic_at_worst = a;
                check.numeric_at_worst = numeric;
            }
        }
    }
    Ok(check)
}
