use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkernel::{Bound, DecayForm, ParamStore, Tensor, Var};

pub const CHECKPOINT_KIND: &str = "dsm";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DsmConfig {
    pub hidden_dim: usize,
    /// Recency decay rate `λ ≥ 0`.
    pub lambda: f64,
    /// When false, attention weights depend on the time distance only.
    pub attention_enabled: bool,
    pub decay_form: DecayForm,
    /// Problem-branch recurrence reads the code-branch state `h_{k-1}`.
    pub literal_recurrence: bool,
    /// Hold the response column of the problem-branch input at zero.
    pub no_past_response: bool,
    /// Drop the code branch; the head sees the problem branch only.
    pub no_code: bool,
    /// Drop the problem branch; `p_t` still serves as query and head input.
    pub no_problem: bool,
}

impl Default for DsmConfig {
    fn default() -> Self {
        DsmConfig {
            hidden_dim: 128,
            lambda: 0.6,
            attention_enabled: true,
            decay_form: DecayForm::Additive,
            literal_recurrence: false,
            no_past_response: false,
            no_code: false,
            no_problem: false,
        }
    }
}

impl DsmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden_dim == 0 {
            return Err(Error::Config("hidden_dim must be positive".into()));
        }
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(Error::Config(format!(
                "lambda must be a finite non-negative number, got {}",
                self.lambda
            )));
        }
        if self.no_code && self.no_problem {
            return Err(Error::Config(
                "no_code and no_problem together leave no branch".into(),
            ));
        }
        if self.no_code && self.literal_recurrence {
            return Err(Error::Config(
                "literal_recurrence reads the code branch, which no_code removes".into(),
            ));
        }
        Ok(())
    }

    pub fn uses_code(&self) -> bool {
        !self.no_code
    }

    pub fn uses_problem_branch(&self) -> bool {
        !self.no_problem
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Branch {
    Problem,
    Code,
}

impl Branch {
    pub(crate) fn suffix(self) -> &'static str {
        match self {
            Branch::Problem => "g",
            Branch::Code => "h",
        }
    }
}

/// One window's inputs, trimmed to its valid length `n`.
pub struct WindowInput<'t> {
    /// Problem embeddings `n × d1`.
    pub problems: Var<'t>,
    /// Responses `r_k ∈ {0, 1}` as an `n × 1` column.
    pub responses: Tensor,
    /// Code embeddings `n × d0`; ignored when the code branch is off.
    pub codes: Option<Var<'t>>,
}

/// Forward products of one window. Row `i` of `pred` is `r̂` for step `i`
/// given steps `0..i`; row 0 has no history and is never a target.
pub struct Forward<'t> {
    pub pred: Var<'t>,
    pub attn_g: Option<Var<'t>>,
    pub attn_h: Option<Var<'t>>,
}

/// Double-sequence model parameters. Every tensor is allocated regardless of
/// the ablation flags so that variants share initial values per seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DsmModel {
    pub config: DsmConfig,
    pub problem_dim: usize,
    pub code_dim: usize,
    pub params: ParamStore,
}

impl DsmModel {
    pub fn init(
        config: &DsmConfig,
        problem_dim: usize,
        code_dim: usize,
        seed: u64,
    ) -> Result<Self> {
        config.validate()?;
        if problem_dim == 0 || code_dim == 0 {
            return Err(Error::Config("embedding widths must be positive".into()));
        }
        let h = config.hidden_dim;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ParamStore::new();
        p.insert_weight("w_g", h, h, &mut rng);
        p.insert_weight("u_g", h, problem_dim + 1, &mut rng);
        p.insert_bias("b_g", h);
        p.insert_weight("w_h", h, h, &mut rng);
        p.insert_weight("u_h", h, code_dim, &mut rng);
        p.insert_bias("b_h", h);
        for s in ["g", "h"] {
            p.insert_weight(&format!("q_{s}"), h, problem_dim, &mut rng);
            p.insert_bias(&format!("qb_{s}"), h);
        }
        for s in ["g", "h"] {
            p.insert_weight(&format!("f_{s}"), h, h + problem_dim, &mut rng);
            p.insert_bias(&format!("fb_{s}"), h);
        }
        p.insert_weight("out", 1, 2 * h, &mut rng);
        p.insert_bias("out_b", 1);
        Ok(DsmModel {
            config: config.clone(),
            problem_dim,
            code_dim,
            params: p,
        })
    }

    pub fn hidden_dim(&self) -> usize {
        self.config.hidden_dim
    }

    /// Problem-branch inputs `p_k ⊕ r_k` (`n × (d1+1)`).
    pub(crate) fn problem_inputs<'t>(&self, p: Var<'t>, responses: &Tensor) -> Result<Var<'t>> {
        if responses.cols() != 1 || responses.rows() != p.rows() {
            return Err(Error::dim(format!(
                "responses {}x{} for {} steps",
                responses.rows(),
                responses.cols(),
                p.rows()
            )));
        }
        let r = if self.config.no_past_response {
            Tensor::zeros(p.rows(), 1)
        } else {
            responses.clone()
        };
        Var::concat_cols(&[p, p.tape().constant(r)])
    }

    /// Query projection `tanh(p · Qᵀ + q_b)` for one branch.
    pub fn query<'t>(&self, b: &Bound<'t>, branch: Branch, p: Var<'t>) -> Result<Var<'t>> {
        let s = branch.suffix();
        Ok(p.matmul_nt(b.get(&format!("q_{s}")))?
            .add_row(b.get(&format!("qb_{s}")))?
            .tanh())
    }

    /// Fusion layer `tanh([O ⊕ p] · Fᵀ + f_b)`.
    pub(crate) fn fuse<'t>(
        &self,
        b: &Bound<'t>,
        branch: Branch,
        o: Var<'t>,
        p: Var<'t>,
    ) -> Result<Var<'t>> {
        let s = branch.suffix();
        Var::concat_cols(&[o, p])?
            .matmul_nt(b.get(&format!("f_{s}")))?
            .add_row(b.get(&format!("fb_{s}")))
            .map(Var::tanh)
    }

    /// `σ([F_h ⊕ F_g] · outᵀ + out_b)`; a missing branch contributes zeros.
    pub(crate) fn head<'t>(
        &self,
        b: &Bound<'t>,
        f_g: Option<Var<'t>>,
        f_h: Option<Var<'t>>,
    ) -> Result<Var<'t>> {
        let any = f_g
            .or(f_h)
            .ok_or_else(|| Error::Contract("prediction head needs at least one branch".into()))?;
        let zeros = || {
            any.tape()
                .constant(Tensor::zeros(any.rows(), self.hidden_dim()))
        };
        let both = Var::concat_cols(&[f_h.unwrap_or_else(zeros), f_g.unwrap_or_else(zeros)])?;
        Ok(both
            .matmul_nt(b.get("out"))?
            .add_row(b.get("out_b"))?
            .sigmoid())
    }

    /// Batched forward over a whole window.
    pub fn forward<'t>(&self, b: &Bound<'t>, input: &WindowInput<'t>) -> Result<Forward<'t>> {
        let cfg = &self.config;
        let p = input.problems;
        let n = p.rows();
        if p.cols() != self.problem_dim {
            return Err(Error::dim(format!(
                "problem embeddings have width {}, model expects {}",
                p.cols(),
                self.problem_dim
            )));
        }
        let tape = p.tape();

        let h_states = if cfg.uses_code() {
            let d = input.codes.ok_or_else(|| {
                Error::Contract("code embeddings required by the code branch".into())
            })?;
            if d.rows() != n || d.cols() != self.code_dim {
                return Err(Error::dim(format!(
                    "code embeddings {}x{} for {n} steps of width {}",
                    d.rows(),
                    d.cols(),
                    self.code_dim
                )));
            }
            Some(
                d.matmul_nt(b.get("u_h"))?
                    .add_row(b.get("b_h"))?
                    .tanh_rnn(b.get("w_h"))?,
            )
        } else {
            None
        };

        let g_states = if cfg.uses_problem_branch() {
            let xu = self
                .problem_inputs(p, &input.responses)?
                .matmul_nt(b.get("u_g"))?
                .add_row(b.get("b_g"))?;
            Some(if cfg.literal_recurrence {
                let h = h_states.expect("validated: literal recurrence keeps the code branch");
                let zero = tape.constant(Tensor::zeros(1, self.hidden_dim()));
                let shifted = if n > 1 {
                    Var::concat_rows(&[zero, h.slice_rows(0, n - 1)?])?
                } else {
                    zero
                };
                xu.add(shifted.matmul_nt(b.get("w_g"))?)?.tanh()
            } else {
                xu.tanh_rnn(b.get("w_g"))?
            })
        } else {
            None
        };

        let attend = |branch: Branch, states: Var<'t>| -> Result<(Var<'t>, Var<'t>)> {
            let a = if cfg.attention_enabled {
                self.query(b, branch, p)?
                    .matmul_nt(states)?
                    .decay_attention(cfg.lambda, cfg.decay_form)?
            } else {
                tape.decay_weights(n, cfg.lambda, cfg.decay_form)
            };
            let o = a.matmul(states)?;
            Ok((a, self.fuse(b, branch, o, p)?))
        };
        let g = g_states.map(|s| attend(Branch::Problem, s)).transpose()?;
        let h = h_states.map(|s| attend(Branch::Code, s)).transpose()?;
        let pred = self.head(b, g.map(|x| x.1), h.map(|x| x.1))?;
        Ok(Forward {
            pred,
            attn_g: g.map(|x| x.0),
            attn_h: h.map(|x| x.0),
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::artifact::save(path, CHECKPOINT_KIND, CHECKPOINT_VERSION, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let m: DsmModel = crate::artifact::load(path, CHECKPOINT_KIND, CHECKPOINT_VERSION)?;
        m.config.validate()?;
        Ok(m)
    }
}

/// Summed BCE over steps `1..n` of one window, with the number of targets.
pub fn window_loss<'t>(pred: Var<'t>, responses: &Tensor) -> Result<(Var<'t>, usize)> {
    let n = pred.rows();
    if n < 2 {
        return Err(Error::Data(
            "a window needs at least two valid steps to yield a target".into(),
        ));
    }
    let mask = Tensor::from_fn(n, 1, |r, _| if r == 0 { 0.0 } else { 1.0 });
    Ok((pred.bce_loss(responses, &mask)?, n - 1))
}
