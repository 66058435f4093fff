//! Line-delimited JSON records (one object per line).

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;

use super::types::*;
use crate::error::{Error, Result};

pub const PROBLEMS_FILE: &str = "problems.jsonl";
pub const CONCEPTS_FILE: &str = "concepts.jsonl";
pub const EVENTS_FILE: &str = "events.jsonl";
pub const ROLES_FILE: &str = "roles.jsonl";
pub const BEHAVIORS_FILE: &str = "behaviors.jsonl";

/// Highest accepted difficulty level.
pub const MAX_DIFFICULTY: u8 = 5;

/// The four data files of a corpus directory.
#[derive(Clone, Debug)]
pub struct DataPaths {
    pub problems: PathBuf,
    pub concepts: PathBuf,
    pub events: PathBuf,
    pub roles: PathBuf,
}

impl DataPaths {
    pub fn in_dir(dir: &Path) -> Self {
        DataPaths {
            problems: dir.join(PROBLEMS_FILE),
            concepts: dir.join(CONCEPTS_FILE),
            events: dir.join(EVENTS_FILE),
            roles: dir.join(ROLES_FILE),
        }
    }

    pub fn all(&self) -> [&Path; 4] {
        [&self.problems, &self.concepts, &self.events, &self.roles]
    }
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = File::open(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingArtifact(path.display().to_string()),
        _ => Error::Io(e),
    })?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(&line).map_err(|e| Error::Parse {
            file: path.display().to_string(),
            line: i + 1,
            msg: e.to_string(),
        })?;
        out.push(record);
    }
    Ok(out)
}

pub fn write_jsonl<'a, T: Serialize + 'a>(
    path: &Path,
    records: impl IntoIterator<Item = &'a T>,
) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let mut w = BufWriter::new(File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Checks ids, difficulty bounds and problem→concept references.
pub fn validate_knowledge_base(
    problems: Vec<Problem>,
    concepts: Vec<Concept>,
) -> Result<KnowledgeBase> {
    let mut concepts = concepts;
    concepts.sort_by_key(|c| c.id);
    for (i, c) in concepts.iter().enumerate() {
        if c.id != i {
            return Err(Error::Integrity(format!(
                "concept ids must be unique and contiguous from 0; expected {i}, found {}",
                c.id
            )));
        }
    }
    let mut problems = problems;
    problems.sort_by_key(|p| p.id);
    for (i, p) in problems.iter().enumerate() {
        if p.id != i {
            return Err(Error::Integrity(if i > 0 && problems[i - 1].id == p.id {
                format!("duplicate problem id {}", p.id)
            } else {
                format!(
                    "problem ids must be contiguous from 0; expected {i}, found {}",
                    p.id
                )
            }));
        }
        if p.concept_ids.is_empty() {
            return Err(Error::Integrity(format!(
                "problem {} has no concepts",
                p.id
            )));
        }
        if !(1..=MAX_DIFFICULTY).contains(&p.difficulty) {
            return Err(Error::Integrity(format!(
                "problem {} difficulty {} outside 1..={MAX_DIFFICULTY}",
                p.id, p.difficulty
            )));
        }
        let mut seen = HashSet::new();
        for &c in &p.concept_ids {
            if c >= concepts.len() {
                return Err(Error::Integrity(format!(
                    "problem {} references unknown concept {c}",
                    p.id
                )));
            }
            if !seen.insert(c) {
                return Err(Error::Integrity(format!(
                    "problem {} lists concept {c} twice",
                    p.id
                )));
            }
        }
    }
    Ok(KnowledgeBase { problems, concepts })
}

pub fn load_knowledge_base(problems: &Path, concepts: &Path) -> Result<KnowledgeBase> {
    validate_knowledge_base(read_jsonl(problems)?, read_jsonl(concepts)?)
}

/// Loads submissions and checks them against `kb`.
pub fn load_events(path: &Path, kb: &KnowledgeBase) -> Result<Vec<SubmissionEvent>> {
    let events: Vec<SubmissionEvent> = read_jsonl(path)?;
    validate_events(&events, kb)?;
    Ok(events)
}

pub fn validate_events(events: &[SubmissionEvent], kb: &KnowledgeBase) -> Result<()> {
    let mut ids = HashSet::with_capacity(events.len());
    for e in events {
        if e.r != e.verdict.response() {
            return Err(Error::Integrity(format!(
                "submission {}: r = {} contradicts verdict {:?}",
                e.id, e.r, e.verdict
            )));
        }
        if e.problem_id >= kb.problems.len() {
            return Err(Error::Integrity(format!(
                "submission {} references unknown problem {}",
                e.id, e.problem_id
            )));
        }
        if !ids.insert(e.id) {
            return Err(Error::Integrity(format!(
                "duplicate submission id {}",
                e.id
            )));
        }
    }
    Ok(())
}

pub fn load_roles(path: &Path) -> Result<HashMap<u64, Role>> {
    let records: Vec<RoleRecord> = read_jsonl(path)?;
    let mut roles = HashMap::with_capacity(records.len());
    for r in records {
        if roles.insert(r.user_id, r.role).is_some() {
            return Err(Error::Integrity(format!(
                "user {} has more than one role",
                r.user_id
            )));
        }
    }
    Ok(roles)
}

pub fn load_behaviors(path: &Path) -> Result<Vec<BehaviorEvent>> {
    read_jsonl(path)
}

/// A fully loaded corpus directory.
#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    pub kb: KnowledgeBase,
    pub events: Vec<SubmissionEvent>,
    pub roles: HashMap<u64, Role>,
}

impl Corpus {
    pub fn load(dir: &Path) -> Result<Self> {
        let paths = DataPaths::in_dir(dir);
        for p in paths.all() {
            if !p.exists() {
                return Err(Error::MissingArtifact(p.display().to_string()));
            }
        }
        let kb = load_knowledge_base(&paths.problems, &paths.concepts)?;
        let events = load_events(&paths.events, &kb)?;
        let roles = load_roles(&paths.roles)?;
        Ok(Corpus { kb, events, roles })
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let paths = DataPaths::in_dir(dir);
        write_jsonl(&paths.problems, &self.kb.problems)?;
        write_jsonl(&paths.concepts, &self.kb.concepts)?;
        write_jsonl(&paths.events, &self.events)?;
        let mut roles: Vec<RoleRecord> = self
            .roles
            .iter()
            .map(|(&user_id, &role)| RoleRecord { user_id, role })
            .collect();
        roles.sort_by_key(|r| r.user_id);
        write_jsonl(&paths.roles, &roles)
    }

    /// Code text by submission id.
    pub fn code_by_submission(&self) -> HashMap<u64, &str> {
        self.events
            .iter()
            .map(|e| (e.id, e.code.as_str()))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn problem(id: usize, concepts: &[usize]) -> Problem {
        Problem {
            id,
            text: format!("p{id}"),
            difficulty: 2,
            concept_ids: concepts.to_vec(),
        }
    }

    fn concepts(n: usize) -> Vec<Concept> {
        (0..n)
            .map(|id| Concept {
                id,
                name: format!("c{id}"),
            })
            .collect()
    }

    #[test]
    fn valid_base_counts_pairs() {
        let kb = validate_knowledge_base(vec![problem(0, &[0]), problem(1, &[0, 1])], concepts(2))
            .unwrap();
        assert_eq!(kb.problems.len() + kb.concepts.len(), 4);
        assert_eq!(kb.num_pairs(), 3);
    }

    #[test]
    fn empty_concept_set_rejected() {
        let err = validate_knowledge_base(vec![problem(0, &[])], concepts(1)).unwrap_err();
        assert!(matches!(err, Error::Integrity(_)));
    }

    #[test]
    fn duplicate_problem_rejected() {
        let err = validate_knowledge_base(vec![problem(0, &[0]), problem(0, &[0])], concepts(1))
            .unwrap_err();
        assert!(err.to_string().contains("duplicate problem id 0"), "{err}");
    }

    #[test]
    fn dangling_concept_rejected() {
        let err = validate_knowledge_base(vec![problem(0, &[3])], concepts(2)).unwrap_err();
        assert!(matches!(err, Error::Integrity(_)));
    }

    #[test]
    fn difficulty_out_of_range_rejected() {
        let mut p = problem(0, &[0]);
        p.difficulty = 6;
        assert!(validate_knowledge_base(vec![p], concepts(1)).is_err());
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("concepts.jsonl");
        std::fs::write(
            &path,
            "{\"id\":0,\"name\":\"loops\"}\n{\"id\":1,\"name\":\n",
        )
        .unwrap();
        match read_jsonl::<Concept>(&path).unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn inconsistent_response_rejected() {
        let kb = validate_knowledge_base(vec![problem(0, &[0])], concepts(1)).unwrap();
        let e = SubmissionEvent {
            id: 1,
            user_id: 1,
            timestamp: 0,
            problem_id: 0,
            verdict: Verdict::WrongAnswer,
            r: 1,
            code: String::new(),
        };
        assert!(matches!(
            validate_events(&[e], &kb),
            Err(Error::Integrity(_))
        ));
    }

    #[test]
    fn behaviors_load() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join(BEHAVIORS_FILE);
        std::fs::write(
            &path,
            "{\"user_id\":3,\"timestamp\":10,\"kind\":\"view_problem\"}\n{\"user_id\":3,\"timestamp\":12,\"kind\":\"submit_code\"}\n",
        )
        .unwrap();
        let b = load_behaviors(&path).unwrap();
        assert_eq!(b[1].kind, BehaviorKind::SubmitCode);
        std::fs::write(
            &path,
            "{\"user_id\":3,\"timestamp\":10,\"kind\":\"scroll\"}\n",
        )
        .unwrap();
        assert!(matches!(
            load_behaviors(&path),
            Err(Error::Parse { line: 1, .. })
        ));
    }

    #[test]
    fn code_newlines_round_trip_escaped() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join(EVENTS_FILE);
        let e = SubmissionEvent {
            id: 1,
            user_id: 2,
            timestamp: 3,
            problem_id: 0,
            verdict: Verdict::Correct,
            r: 1,
            code: "int main() {\n\treturn 0;\n}\n".into(),
        };
        write_jsonl(&path, [&e]).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 1);
        assert_eq!(read_jsonl::<SubmissionEvent>(&path).unwrap(), vec![e]);
    }
}
