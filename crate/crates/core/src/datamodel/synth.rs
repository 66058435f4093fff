//! Seeded online-judge simulator.
//!
//! Each student carries a latent mastery per concept: a fixed baseline plus a
//! learned component that grows with every attempt on the concept and decays
//! geometrically while the concept sits idle, shifted by an overall ability
//! that drifts as a random walk. The chance of solving a problem is
//! `σ(a · (mastery over its concepts − scaled difficulty + fix boost))`.
//! Failed attempts draw an error verdict whose distribution depends on how far
//! the student was from solving it and on the problem difficulty; the verdict
//! also sets how much easier the next attempt at that problem becomes. The
//! submitted code is rendered from a per-verdict template.

use std::collections::HashMap;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::io::{validate_knowledge_base, Corpus};
use super::types::*;
use crate::error::{Error, Result};
use crate::numkernel::sigmoid;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    /// Students that survive the length filter.
    pub students: usize,
    /// Students with fewer than 20 submissions.
    pub short_students: usize,
    pub staff: usize,
    pub problems: usize,
    pub concepts: usize,
    pub max_concepts_per_problem: usize,
    pub min_submissions: usize,
    pub max_submissions: usize,
    /// Logistic slope `a`.
    pub discrimination: f64,
    pub ability_spread: f64,
    /// Standard deviation of the per-step random walk on overall ability.
    pub ability_drift: f64,
    pub learning_gain: f64,
    /// Fraction of the learned mastery lost per idle step.
    pub forgetting: f64,
    pub retry_prob: f64,
    /// Chance that a fresh problem shares a concept with the previous one.
    pub locality: f64,
    pub min_noise_statements: usize,
    pub max_noise_statements: usize,
    pub identifier_pool: usize,
    /// Chance that a submission's marker is swapped for another verdict's.
    pub marker_noise: f64,
    /// Scale of the verdict-specific boost on the next attempt at a failed problem.
    pub fix_bonus: f64,
    /// Spread of each error verdict around its centre on the gap axis.
    pub error_width: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            students: 200,
            short_students: 20,
            staff: 5,
            problems: 60,
            concepts: 12,
            max_concepts_per_problem: 3,
            min_submissions: 20,
            max_submissions: 120,
            discrimination: 2.0,
            ability_spread: 0.6,
            ability_drift: 0.15,
            learning_gain: 0.1,
            forgetting: 0.05,
            retry_prob: 0.8,
            locality: 0.7,
            min_noise_statements: 8,
            max_noise_statements: 16,
            identifier_pool: 300,
            marker_noise: 0.0,
            error_width: 0.2,
            fix_bonus: 1.8,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.students == 0 {
            return bad("students must be positive");
        }
        if self.problems == 0 || self.concepts == 0 {
            return bad("problems and concepts must be positive");
        }
        if self.max_concepts_per_problem == 0 || self.max_concepts_per_problem > self.concepts {
            return bad("max_concepts_per_problem must lie in 1..=concepts");
        }
        if self.min_submissions < 20 || self.min_submissions > self.max_submissions {
            return bad("need 20 <= min_submissions <= max_submissions");
        }
        if self.min_noise_statements > self.max_noise_statements || self.identifier_pool < 2 {
            return bad("invalid code-noise settings");
        }
        for (name, p) in [
            ("forgetting", self.forgetting),
            ("retry_prob", self.retry_prob),
            ("locality", self.locality),
            ("marker_noise", self.marker_noise),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("{name} must lie in [0, 1], got {p}")));
            }
        }
        if !(self.fix_bonus >= 0.0 && self.fix_bonus.is_finite()) {
            return bad("fix_bonus must be non-negative");
        }
        if !(self.error_width > 0.0 && self.error_width.is_finite()) {
            return bad("error_width must be positive");
        }
        if !(self.discrimination > 0.0
            && self.ability_spread >= 0.0
            && self.ability_drift >= 0.0
            && self.learning_gain >= 0.0)
        {
            return bad("discrimination must be positive; spread, drift and gain non-negative");
        }
        Ok(())
    }
}

/// Difficulty level mapped onto the mastery scale, `1..=5 → [-1, 1]`.
pub fn scaled_difficulty(level: u8) -> f64 {
    (f64::from(level) - 3.0) / 2.0
}

pub fn success_probability(mastery: f64, difficulty: u8, discrimination: f64) -> f64 {
    sigmoid(discrimination * (mastery - scaled_difficulty(difficulty)))
}

/// Identifier that the code template plants for each verdict.
pub fn marker(verdict: Verdict) -> &'static str {
    match verdict {
        Verdict::Correct => "verified_result",
        Verdict::CompileError => "undeclared_value",
        Verdict::WrongAnswer => "off_by_one",
        Verdict::TimeLimitExceeded => "slow_loop",
        Verdict::MemoryLimitExceeded => "huge_buffer",
        Verdict::RuntimeError => "divide_by_zero",
        Verdict::PresentationError => "trailing_space",
        Verdict::OutputLimitExceeded => "flood_output",
        Verdict::SystemError => "judge_fault",
    }
}

fn marker_statement(verdict: Verdict) -> String {
    let m = marker(verdict);
    match verdict {
        Verdict::Correct => format!("ans = {m}(n);"),
        Verdict::CompileError => format!("ans = {m}"),
        Verdict::WrongAnswer => format!("ans = {m}(n) - 1;"),
        Verdict::TimeLimitExceeded => format!("while ({m}(n)) ans++;"),
        Verdict::MemoryLimitExceeded => format!("vector<long long> {m}(n * n * n);"),
        Verdict::RuntimeError => format!("ans = {m}(n, 0);"),
        Verdict::PresentationError => format!("cout << {m} << \" \";"),
        Verdict::OutputLimitExceeded => format!("while (true) cout << {m};"),
        Verdict::SystemError => format!("{m}();"),
    }
}

/// Where on the `mastery − difficulty` axis each error tends to occur.
fn error_center(v: Verdict) -> f64 {
    match v {
        Verdict::CompileError => -1.6,
        Verdict::RuntimeError => -1.15,
        Verdict::MemoryLimitExceeded => -0.95,
        Verdict::OutputLimitExceeded => -0.85,
        Verdict::TimeLimitExceeded => -0.65,
        Verdict::WrongAnswer => -0.35,
        Verdict::PresentationError => -0.05,
        Verdict::Correct | Verdict::SystemError => 0.0,
    }
}

/// How much easier the next attempt at a problem gets after each error: syntax
/// and formatting slips are quick to fix, resource limits need a new algorithm.
fn fix_ease(v: Verdict) -> f64 {
    match v {
        Verdict::CompileError => 1.2,
        Verdict::PresentationError => 1.5,
        Verdict::OutputLimitExceeded => 0.6,
        Verdict::RuntimeError => 0.4,
        Verdict::WrongAnswer | Verdict::MemoryLimitExceeded => 0.2,
        Verdict::Correct | Verdict::TimeLimitExceeded | Verdict::SystemError => 0.0,
    }
}

const SYSTEM_ERROR_RATE: f64 = 0.02;

/// Distribution over the 8 error verdicts given the mastery gap and difficulty.
pub fn error_distribution(gap: f64, difficulty: u8, width: f64) -> [(Verdict, f64); 8] {
    let mut out = Verdict::ERRORS.map(|v| (v, 0.0));
    let resource = 0.6 + 0.2 * (f64::from(difficulty) - 1.0);
    let mut total = 0.0;
    for (v, w) in out.iter_mut() {
        if *v == Verdict::SystemError {
            continue;
        }
        let z = (gap - error_center(*v)) / width;
        let mut weight = (-0.5 * z * z).exp() + 1e-3;
        if matches!(v, Verdict::TimeLimitExceeded | Verdict::MemoryLimitExceeded) {
            weight *= resource;
        }
        *w = weight;
        total += weight;
    }
    for (v, w) in out.iter_mut() {
        *w = if *v == Verdict::SystemError {
            SYSTEM_ERROR_RATE
        } else {
            (1.0 - SYSTEM_ERROR_RATE) * *w / total
        };
    }
    out
}

const CONCEPT_NAMES: [&str; 16] = [
    "input-output",
    "branching",
    "loops",
    "arrays",
    "strings",
    "functions",
    "recursion",
    "sorting",
    "searching",
    "pointers",
    "structs",
    "math",
    "greedy",
    "dynamic-programming",
    "graphs",
    "bit-manipulation",
];

fn concept_name(i: usize) -> String {
    let base = CONCEPT_NAMES[i % CONCEPT_NAMES.len()];
    match i / CONCEPT_NAMES.len() {
        0 => base.to_string(),
        k => format!("{base}-{}", k + 1),
    }
}

fn build_knowledge_base(cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> Result<KnowledgeBase> {
    let concepts: Vec<Concept> = (0..cfg.concepts)
        .map(|id| Concept {
            id,
            name: concept_name(id),
        })
        .collect();
    let mut problems = Vec::with_capacity(cfg.problems);
    for id in 0..cfg.problems {
        let k = rng.gen_range(1..=cfg.max_concepts_per_problem);
        let mut ids = vec![id % cfg.concepts];
        while ids.len() < k {
            let c = rng.gen_range(0..cfg.concepts);
            if !ids.contains(&c) {
                ids.push(c);
            }
        }
        ids.sort_unstable();
        let difficulty = rng.gen_range(1..=5u8);
        let names: Vec<&str> = ids.iter().map(|&c| concepts[c].name.as_str()).collect();
        problems.push(Problem {
            id,
            text: format!(
                "Problem {id}: a level-{difficulty} exercise practising {}.",
                names.join(", ")
            ),
            difficulty,
            concept_ids: ids,
        });
    }
    validate_knowledge_base(problems, concepts)
}

/// C++-like submission text carrying the verdict's marker among noise statements.
pub fn render_code(verdict: Verdict, cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> String {
    let shown = if cfg.marker_noise > 0.0 && rng.gen_bool(cfg.marker_noise) {
        *Verdict::ALL.choose(rng).expect("non-empty")
    } else {
        verdict
    };
    let var = |rng: &mut ChaCha8Rng| format!("v{}", rng.gen_range(0..cfg.identifier_pool));
    let mut body = Vec::new();
    let n = rng.gen_range(cfg.min_noise_statements..=cfg.max_noise_statements);
    for _ in 0..n {
        let (a, b) = (var(rng), var(rng));
        let stmt = match rng.gen_range(0..5) {
            0 => format!("int {a} = {b} + {};", rng.gen_range(0..100)),
            1 => format!("for (int i = 0; i < n; i++) {a} += {b};"),
            2 => format!("if ({a} > {b}) {a} = {b};"),
            3 => format!("{a} = max({a}, {b});"),
            _ => format!("// update {a} from {b}"),
        };
        body.push(stmt);
    }
    let at = rng.gen_range(0..=body.len());
    body.insert(at, marker_statement(shown));

    let mut code = String::from("#include <bits/stdc++.h>\nusing namespace std;\nint main() {\n    int n;\n    long long ans = 0;\n    cin >> n;\n");
    for stmt in body {
        let _ = writeln!(code, "    {stmt}");
    }
    code.push_str("    cout << ans << endl;\n    return 0;\n}\n");
    code
}

struct Student {
    baseline: Vec<f64>,
    learned: Vec<f64>,
    drift: f64,
}

impl Student {
    fn mastery(&self, concepts: &[usize]) -> f64 {
        let sum: f64 = concepts
            .iter()
            .map(|&c| self.baseline[c] + self.learned[c])
            .sum();
        sum / concepts.len() as f64 + self.drift
    }
}

fn next_problem(
    kb: &KnowledgeBase,
    by_concept: &[Vec<usize>],
    last: Option<(usize, bool)>,
    cfg: &SynthConfig,
    rng: &mut ChaCha8Rng,
) -> usize {
    match last {
        Some((p, false)) if rng.gen_bool(cfg.retry_prob) => p,
        Some((p, _)) if rng.gen_bool(cfg.locality) => {
            let c = *kb.problems[p]
                .concept_ids
                .choose(rng)
                .expect("problems have concepts");
            *by_concept[c].choose(rng).expect("concept has problems")
        }
        _ => rng.gen_range(0..kb.problems.len()),
    }
}

fn simulate_user(
    user_id: u64,
    submissions: usize,
    kb: &KnowledgeBase,
    by_concept: &[Vec<usize>],
    cfg: &SynthConfig,
    rng: &mut ChaCha8Rng,
) -> Vec<SubmissionEvent> {
    let ability = Normal::new(0.0, cfg.ability_spread.max(1e-12))
        .expect("finite spread")
        .sample(rng);
    let jitter = Normal::new(0.0, 0.3).expect("finite");
    let mut student = Student {
        baseline: (0..kb.concepts.len())
            .map(|_| ability + jitter.sample(rng))
            .collect(),
        learned: vec![0.0; kb.concepts.len()],
        drift: 0.0,
    };
    let drift = Normal::new(0.0, cfg.ability_drift.max(1e-12)).expect("finite drift");
    let mut t = 1_600_000_000 + rng.gen_range(0..86_400 * 30);
    let mut last = None;
    let mut pending: HashMap<usize, f64> = HashMap::new();
    let mut out = Vec::with_capacity(submissions);
    for _ in 0..submissions {
        if cfg.ability_drift > 0.0 {
            student.drift += drift.sample(rng);
        }
        let pid = next_problem(kb, by_concept, last, cfg, rng);
        let problem = &kb.problems[pid];
        let bonus = pending.remove(&pid).unwrap_or(0.0);
        let gap =
            student.mastery(&problem.concept_ids) - scaled_difficulty(problem.difficulty) + bonus;
        let solved = rng.gen_bool(sigmoid(cfg.discrimination * gap));
        let verdict = if solved {
            Verdict::Correct
        } else {
            let dist = error_distribution(gap, problem.difficulty, cfg.error_width);
            dist.choose_weighted(rng, |(_, w)| *w)
                .expect("positive weights")
                .0
        };
        if !solved {
            pending.insert(pid, cfg.fix_bonus * fix_ease(verdict));
        }
        let gain = if solved {
            cfg.learning_gain
        } else {
            0.5 * cfg.learning_gain
        };
        for (c, learned) in student.learned.iter_mut().enumerate() {
            if problem.concept_ids.contains(&c) {
                *learned += gain;
            } else {
                *learned *= 1.0 - cfg.forgetting;
            }
        }
        t += rng.gen_range(30..3_600);
        out.push(SubmissionEvent {
            id: 0,
            user_id,
            timestamp: t,
            problem_id: pid,
            verdict,
            r: verdict.response(),
            code: render_code(verdict, cfg, rng),
        });
        last = Some((pid, solved));
    }
    out
}

/// Generates a full corpus. A pure function of `(cfg, seed)`.
pub fn synth_generate(cfg: &SynthConfig, seed: u64) -> Result<Corpus> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let kb = build_knowledge_base(cfg, &mut rng)?;
    let mut by_concept = vec![Vec::new(); kb.concepts.len()];
    for p in &kb.problems {
        for &c in &p.concept_ids {
            by_concept[c].push(p.id);
        }
    }

    let mut roles = HashMap::new();
    let mut events = Vec::new();
    let mut user_id = 1000u64;
    let mut add_user =
        |role: Role, n: usize, rng: &mut ChaCha8Rng, events: &mut Vec<SubmissionEvent>| {
            roles.insert(user_id, role);
            events.extend(simulate_user(user_id, n, &kb, &by_concept, cfg, rng));
            user_id += 1;
        };
    for _ in 0..cfg.students {
        let n = rng.gen_range(cfg.min_submissions..=cfg.max_submissions);
        add_user(Role::Student, n, &mut rng, &mut events);
    }
    for _ in 0..cfg.short_students {
        let n = rng.gen_range(1..20);
        add_user(Role::Student, n, &mut rng, &mut events);
    }
    for _ in 0..cfg.staff {
        let n = rng.gen_range(cfg.min_submissions..=cfg.max_submissions);
        add_user(Role::Staff, n, &mut rng, &mut events);
    }
    events.sort_by_key(|e| (e.timestamp, e.user_id));
    for (i, e) in events.iter_mut().enumerate() {
        e.id = i as u64 + 1;
    }
    Ok(Corpus { kb, events, roles })
}
