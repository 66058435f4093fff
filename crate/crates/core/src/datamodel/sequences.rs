use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use super::types::*;
use crate::error::{Error, Result};

/// Students with fewer submissions than this are dropped.
pub const MIN_SUBMISSIONS: usize = 20;

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterStats {
    pub input_events: usize,
    pub non_student_users: usize,
    pub non_student_events: usize,
    pub short_users: usize,
    pub short_events: usize,
    pub kept_users: usize,
    pub kept_events: usize,
}

/// Groups submissions per student, drops staff (and users without a role
/// record) and students below `min_len`, and orders each sequence by
/// `(timestamp, submission id)`. Output is sorted by user id.
pub fn build_sequences(
    events: &[SubmissionEvent],
    roles: &HashMap<u64, Role>,
    kb: &KnowledgeBase,
    min_len: usize,
) -> (Vec<StudentSequence>, FilterStats) {
    let mut stats = FilterStats {
        input_events: events.len(),
        ..Default::default()
    };
    let mut by_user: BTreeMap<u64, Vec<&SubmissionEvent>> = BTreeMap::new();
    for e in events {
        by_user.entry(e.user_id).or_default().push(e);
    }
    let mut out = Vec::new();
    for (user_id, mut evs) in by_user {
        if roles.get(&user_id) != Some(&Role::Student) {
            stats.non_student_users += 1;
            stats.non_student_events += evs.len();
            continue;
        }
        if evs.len() < min_len {
            stats.short_users += 1;
            stats.short_events += evs.len();
            continue;
        }
        evs.sort_by_key(|e| (e.timestamp, e.id));
        let steps = evs
            .into_iter()
            .map(|e| SequenceStep {
                submission_id: e.id,
                timestamp: e.timestamp,
                problem_id: e.problem_id,
                concept_ids: kb.problems[e.problem_id].concept_ids.clone(),
                verdict: e.verdict,
                r: e.r,
            })
            .collect::<Vec<_>>();
        stats.kept_users += 1;
        stats.kept_events += steps.len();
        out.push(StudentSequence { user_id, steps });
    }
    (out, stats)
}

/// A fixed-length slice of one student's sequence, right-padded.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Window {
    pub user_id: u64,
    /// Offset of the first step within the student's sequence.
    pub start: usize,
    pub problem_ids: Vec<usize>,
    pub submission_ids: Vec<u64>,
    pub responses: Vec<u8>,
    pub verdicts: Vec<Verdict>,
    pub mask: Vec<bool>,
}

impl Window {
    /// Number of real (unpadded) steps; they always form a prefix.
    pub fn valid_len(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    /// Steps that receive a prediction: every valid step after the first.
    pub fn num_targets(&self) -> usize {
        self.valid_len().saturating_sub(1)
    }

    pub fn capacity(&self) -> usize {
        self.mask.len()
    }
}

/// Splits every sequence into consecutive non-overlapping windows of `max_len`.
pub fn window_sequences(seqs: &[StudentSequence], max_len: usize) -> Result<Vec<Window>> {
    if max_len < 2 {
        return Err(Error::Config(format!(
            "window length must be at least 2, got {max_len}"
        )));
    }
    let mut out = Vec::new();
    for s in seqs {
        for (chunk_idx, chunk) in s.steps.chunks(max_len).enumerate() {
            let pad = max_len - chunk.len();
            let mut w = Window {
                user_id: s.user_id,
                start: chunk_idx * max_len,
                problem_ids: chunk.iter().map(|st| st.problem_id).collect(),
                submission_ids: chunk.iter().map(|st| st.submission_id).collect(),
                responses: chunk.iter().map(|st| st.r).collect(),
                verdicts: chunk.iter().map(|st| st.verdict).collect(),
                mask: vec![true; chunk.len()],
            };
            w.problem_ids.extend(std::iter::repeat_n(0, pad));
            w.submission_ids.extend(std::iter::repeat_n(0, pad));
            w.responses.extend(std::iter::repeat_n(0, pad));
            w.verdicts
                .extend(std::iter::repeat_n(Verdict::Correct, pad));
            w.mask.extend(std::iter::repeat_n(false, pad));
            out.push(w);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn kb() -> KnowledgeBase {
        KnowledgeBase {
            problems: vec![Problem {
                id: 0,
                text: "p".into(),
                difficulty: 1,
                concept_ids: vec![0],
            }],
            concepts: vec![Concept {
                id: 0,
                name: "c".into(),
            }],
        }
    }

    fn events_for(user: u64, n: usize, first_id: u64) -> Vec<SubmissionEvent> {
        (0..n)
            .map(|i| SubmissionEvent {
                id: first_id + i as u64,
                user_id: user,
                timestamp: 1_000 + i as i64,
                problem_id: 0,
                verdict: if i % 2 == 0 {
                    Verdict::Correct
                } else {
                    Verdict::WrongAnswer
                },
                r: if i % 2 == 0 { 1 } else { 0 },
                code: String::new(),
            })
            .collect()
    }

    fn seq(n: usize) -> StudentSequence {
        let (mut s, _) = build_sequences(
            &events_for(1, n, 0),
            &HashMap::from([(1, Role::Student)]),
            &kb(),
            1,
        );
        s.pop().unwrap()
    }

    #[test]
    fn filtering_rules() {
        let mut events = events_for(1, 19, 0);
        events.extend(events_for(2, 20, 100));
        events.extend(events_for(3, 100, 200));
        let mut late = events_for(4, 25, 400);
        late.reverse();
        events.extend(late);
        let roles = HashMap::from([
            (1, Role::Student),
            (2, Role::Student),
            (3, Role::Staff),
            (4, Role::Student),
        ]);
        let (seqs, stats) = build_sequences(&events, &roles, &kb(), MIN_SUBMISSIONS);
        let users: Vec<u64> = seqs.iter().map(|s| s.user_id).collect();
        assert_eq!(users, vec![2, 4]);
        assert_eq!(stats.short_users, 1);
        assert_eq!(stats.non_student_users, 1);
        assert_eq!(stats.kept_events, 45);
        let ts: Vec<i64> = seqs[1].steps.iter().map(|s| s.timestamp).collect();
        assert!(ts.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn equal_timestamps_break_ties_by_submission_id() {
        let mut events = events_for(1, 20, 0);
        for e in &mut events {
            e.timestamp = 5;
        }
        events.reverse();
        let (seqs, _) = build_sequences(&events, &HashMap::from([(1, Role::Student)]), &kb(), 20);
        let ids: Vec<u64> = seqs[0].steps.iter().map(|s| s.submission_id).collect();
        assert_eq!(ids, (0..20).collect::<Vec<_>>());
    }

    #[test]
    fn long_sequences_split() {
        let w = window_sequences(&[seq(450)], 200).unwrap();
        let lens: Vec<usize> = w.iter().map(Window::valid_len).collect();
        assert_eq!(lens, vec![200, 200, 50]);
        assert!(w.iter().all(|w| w.capacity() == 200));
        assert_eq!(w[2].start, 400);
        assert_eq!(w[2].submission_ids[0], 400);
    }

    #[test]
    fn short_sequence_padded() {
        let w = window_sequences(&[seq(30)], 200).unwrap();
        assert_eq!(w.len(), 1);
        assert_eq!(w[0].valid_len(), 30);
        assert!(w[0].mask[..30].iter().all(|&m| m) && w[0].mask[30..].iter().all(|&m| !m));
    }

    #[test]
    fn single_step_window_has_no_targets() {
        let w = window_sequences(&[seq(201)], 200).unwrap();
        assert_eq!(w[1].valid_len(), 1);
        assert_eq!(w[1].num_targets(), 0);
    }

    #[test]
    fn window_length_bound() {
        assert!(matches!(
            window_sequences(&[seq(3)], 1),
            Err(Error::Config(_))
        ));
    }
}
