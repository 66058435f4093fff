use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Concept {
    pub id: usize,
    pub name: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Problem {
    pub id: usize,
    pub text: String,
    pub difficulty: u8,
    pub concept_ids: Vec<usize>,
}

/// Judge outcome. The discriminant order is the class index used by the
/// code classifier.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Verdict {
    Correct,
    CompileError,
    WrongAnswer,
    TimeLimitExceeded,
    MemoryLimitExceeded,
    RuntimeError,
    PresentationError,
    OutputLimitExceeded,
    SystemError,
}

impl Verdict {
    pub const ALL: [Verdict; 9] = [
        Verdict::Correct,
        Verdict::CompileError,
        Verdict::WrongAnswer,
        Verdict::TimeLimitExceeded,
        Verdict::MemoryLimitExceeded,
        Verdict::RuntimeError,
        Verdict::PresentationError,
        Verdict::OutputLimitExceeded,
        Verdict::SystemError,
    ];

    pub const ERRORS: [Verdict; 8] = [
        Verdict::CompileError,
        Verdict::WrongAnswer,
        Verdict::TimeLimitExceeded,
        Verdict::MemoryLimitExceeded,
        Verdict::RuntimeError,
        Verdict::PresentationError,
        Verdict::OutputLimitExceeded,
        Verdict::SystemError,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Verdict> {
        Verdict::ALL.get(i).copied()
    }

    pub fn is_correct(self) -> bool {
        self == Verdict::Correct
    }

    /// The binary response signal `r`.
    pub fn response(self) -> u8 {
        u8::from(self.is_correct())
    }
}

/// One judged submission.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubmissionEvent {
    /// Submission id; breaks ties between equal timestamps.
    pub id: u64,
    pub user_id: u64,
    pub timestamp: i64,
    pub problem_id: usize,
    pub verdict: Verdict,
    pub r: u8,
    pub code: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BehaviorKind {
    ViewProblem,
    ViewConcept,
    ViewSubmission,
    ViewRanking,
    SubmitCode,
}

/// Click-stream record. Loaded and kept, not used by the model.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BehaviorEvent {
    pub user_id: u64,
    pub timestamp: i64,
    pub kind: BehaviorKind,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Student,
    Staff,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoleRecord {
    pub user_id: u64,
    pub role: Role,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SequenceStep {
    pub submission_id: u64,
    pub timestamp: i64,
    pub problem_id: usize,
    pub concept_ids: Vec<usize>,
    pub verdict: Verdict,
    pub r: u8,
}

/// One student's chronologically ordered submissions.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StudentSequence {
    pub user_id: u64,
    pub steps: Vec<SequenceStep>,
}

impl StudentSequence {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

/// Validated problems and concepts, indexed by id.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct KnowledgeBase {
    pub problems: Vec<Problem>,
    pub concepts: Vec<Concept>,
}

impl KnowledgeBase {
    pub fn num_pairs(&self) -> usize {
        self.problems.iter().map(|p| p.concept_ids.len()).sum()
    }
}
