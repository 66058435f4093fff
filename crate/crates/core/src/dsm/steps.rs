//! Step-at-a-time form of the model. The batched forward must agree with it.

use super::model::{Branch, DsmModel, WindowInput};
use crate::error::{Error, Result};
use crate::numkernel::{decayed_score, softmax_in_place, Bound, DecayForm, Tensor, Var};

/// Time differences `D = [t-2, …, 1, 0]` for predicting 1-based step `t ≥ 2`.
pub fn time_differences(t: usize) -> Result<Vec<usize>> {
    if t < 2 {
        return Err(Error::Contract(format!("step {t} has no history")));
    }
    Ok((0..t - 1).rev().collect())
}

/// Attention weights over `m` history slots when similarity is ignored.
pub fn decay_only_weights(m: usize, lambda: f64, form: DecayForm) -> Vec<f64> {
    let mut w: Vec<f64> = (0..m)
        .map(|j| decayed_score(1.0, (m - 1 - j) as f64, lambda, form))
        .collect();
    softmax_in_place(&mut w);
    w
}

/// `tanh(b + prev · Wᵀ + input · Uᵀ)` for one branch.
pub fn rnn_step<'t>(
    b: &Bound<'t>,
    branch: Branch,
    prev: Var<'t>,
    input: Var<'t>,
) -> Result<Var<'t>> {
    let s = branch.suffix();
    let xu = input
        .matmul_nt(b.get(&format!("u_{s}")))?
        .add_row(b.get(&format!("b_{s}")))?;
    Ok(xu.add(prev.matmul_nt(b.get(&format!("w_{s}")))?)?.tanh())
}

/// Projected query against each historical state: `1 × m`.
pub fn similarity<'t>(
    model: &DsmModel,
    b: &Bound<'t>,
    branch: Branch,
    query: Var<'t>,
    history: &[Var<'t>],
) -> Result<Var<'t>> {
    if history.is_empty() {
        return Err(Error::Contract(
            "similarity needs at least one historical state".into(),
        ));
    }
    model
        .query(b, branch, query)?
        .matmul_nt(Var::concat_rows(history)?)
}

/// Decayed softmax over a `1 × m` similarity row; the last slot is the most recent.
pub fn decay_attention<'t>(
    s: Var<'t>,
    lambda: f64,
    form: DecayForm,
    attention_enabled: bool,
) -> Result<Var<'t>> {
    let m = s.cols();
    let tape = s.tape();
    if s.rows() != 1 {
        return Err(Error::dim(format!(
            "decay_attention expects one row, got {}",
            s.rows()
        )));
    }
    if !attention_enabled {
        return Ok(tape.constant(Tensor::row(&decay_only_weights(m, lambda, form))));
    }
    let dist = |j: usize| (m - 1 - j) as f64;
    let scored = match form {
        DecayForm::Additive => {
            s.sub(tape.constant(Tensor::from_fn(1, m, |_, j| lambda * dist(j))))?
        }
        DecayForm::Multiplicative => {
            s.mul(tape.constant(Tensor::from_fn(1, m, |_, j| (-lambda * dist(j)).exp())))?
        }
    };
    scored.softmax_row()
}

/// `O = Σ_k A_k · state_k`.
pub fn aggregate<'t>(a: Var<'t>, history: &[Var<'t>]) -> Result<Var<'t>> {
    if history.is_empty() {
        return Err(Error::Contract(
            "aggregate needs at least one historical state".into(),
        ));
    }
    a.matmul(Var::concat_rows(history)?)
}

/// `σ(FC(FC(O_h ⊕ p_t) ⊕ FC(O_g ⊕ p_t)))`; a `None` branch is dropped.
pub fn predict<'t>(
    model: &DsmModel,
    b: &Bound<'t>,
    o_g: Option<Var<'t>>,
    o_h: Option<Var<'t>>,
    p_t: Var<'t>,
) -> Result<Var<'t>> {
    let f_g = o_g
        .map(|o| model.fuse(b, Branch::Problem, o, p_t))
        .transpose()?;
    let f_h = o_h
        .map(|o| model.fuse(b, Branch::Code, o, p_t))
        .transpose()?;
    model.head(b, f_g, f_h)
}

/// Predictions for steps `1..n`, one recurrence step and one attention row at a time.
pub fn forward_stepwise<'t>(
    model: &DsmModel,
    b: &Bound<'t>,
    input: &WindowInput<'t>,
) -> Result<Vec<Var<'t>>> {
    let cfg = &model.config;
    let p = input.problems;
    let n = p.rows();
    let tape = p.tape();
    let zero = tape.constant(Tensor::zeros(1, model.hidden_dim()));
    let xg = model.problem_inputs(p, &input.responses)?;

    let mut hs: Vec<Var<'t>> = Vec::new();
    if cfg.uses_code() {
        let d = input
            .codes
            .ok_or_else(|| Error::Contract("code embeddings required by the code branch".into()))?;
        for k in 0..n {
            let prev = hs.last().copied().unwrap_or(zero);
            hs.push(rnn_step(b, Branch::Code, prev, d.slice_rows(k, k + 1)?)?);
        }
    }
    let mut gs: Vec<Var<'t>> = Vec::new();
    if cfg.uses_problem_branch() {
        for k in 0..n {
            let prev = match (cfg.literal_recurrence, k) {
                (_, 0) => zero,
                (true, _) => hs[k - 1],
                (false, _) => gs[k - 1],
            };
            gs.push(rnn_step(
                b,
                Branch::Problem,
                prev,
                xg.slice_rows(k, k + 1)?,
            )?);
        }
    }

    let mut out = Vec::with_capacity(n.saturating_sub(1));
    for t in 1..n {
        let p_t = p.slice_rows(t, t + 1)?;
        let branch_output = |branch: Branch, states: &[Var<'t>]| -> Result<Option<Var<'t>>> {
            if states.is_empty() {
                return Ok(None);
            }
            let history = &states[..t];
            let a = if cfg.attention_enabled {
                decay_attention(
                    similarity(model, b, branch, p_t, history)?,
                    cfg.lambda,
                    cfg.decay_form,
                    true,
                )?
            } else {
                let s = tape.constant(Tensor::zeros(1, t));
                decay_attention(s, cfg.lambda, cfg.decay_form, false)?
            };
            aggregate(a, history).map(Some)
        };
        let o_g = branch_output(Branch::Problem, &gs)?;
        let o_h = branch_output(Branch::Code, &hs)?;
        out.push(predict(model, b, o_g, o_h, p_t)?);
    }
    Ok(out)
}
