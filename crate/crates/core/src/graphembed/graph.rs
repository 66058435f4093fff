use std::collections::BTreeSet;
use std::rc::Rc;

use crate::datamodel::KnowledgeBase;
use crate::error::{Error, Result};

/// Problem–concept graph. Node ids: problems `0..P`, then concepts `P..P+C`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BipartiteGraph {
    num_problems: usize,
    num_concepts: usize,
    edges: Vec<(usize, usize)>,
    adjacency: Vec<Vec<usize>>,
}

impl BipartiteGraph {
    /// `edges` are `(problem, concept)` pairs in their own id spaces.
    pub fn new(num_problems: usize, num_concepts: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let unique: BTreeSet<(usize, usize)> = edges.iter().copied().collect();
        let n = num_problems + num_concepts;
        let mut adjacency = vec![Vec::new(); n];
        for &(p, c) in &unique {
            if p >= num_problems || c >= num_concepts {
                return Err(Error::Index(format!(
                    "edge ({p}, {c}) outside {num_problems}x{num_concepts}"
                )));
            }
            adjacency[p].push(num_problems + c);
            adjacency[num_problems + c].push(p);
        }
        if let Some(p) = (0..num_problems).find(|&p| adjacency[p].is_empty()) {
            return Err(Error::Integrity(format!("problem {p} has no concept")));
        }
        let g = BipartiteGraph {
            num_problems,
            num_concepts,
            edges: unique.into_iter().collect(),
            adjacency,
        };
        debug_assert!(g.is_bipartite());
        Ok(g)
    }

    pub fn from_knowledge_base(kb: &KnowledgeBase) -> Result<Self> {
        let edges: Vec<(usize, usize)> = kb
            .problems
            .iter()
            .flat_map(|p| p.concept_ids.iter().map(move |&c| (p.id, c)))
            .collect();
        BipartiteGraph::new(kb.problems.len(), kb.concepts.len(), &edges)
    }

    pub fn num_problems(&self) -> usize {
        self.num_problems
    }

    pub fn num_concepts(&self) -> usize {
        self.num_concepts
    }

    pub fn num_nodes(&self) -> usize {
        self.num_problems + self.num_concepts
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn concept_node(&self, concept: usize) -> usize {
        self.num_problems + concept
    }

    pub fn is_problem(&self, node: usize) -> bool {
        node < self.num_problems
    }

    pub fn neighbors(&self, node: usize) -> &[usize] {
        &self.adjacency[node]
    }

    pub fn has_edge(&self, a: usize, b: usize) -> bool {
        self.adjacency[a].contains(&b)
    }

    /// Every edge joins a problem to a concept.
    pub fn is_bipartite(&self) -> bool {
        self.adjacency.iter().enumerate().all(|(u, nbrs)| {
            nbrs.iter()
                .all(|&v| self.is_problem(u) != self.is_problem(v))
        })
    }

    /// Attention neighbourhoods: each node's neighbours plus itself (listed first).
    pub fn neighborhoods_with_self(&self) -> Rc<Vec<Vec<usize>>> {
        Rc::new(
            self.adjacency
                .iter()
                .enumerate()
                .map(|(i, nbrs)| std::iter::once(i).chain(nbrs.iter().copied()).collect())
                .collect(),
        )
    }

    /// Breadth-first hop distance, `None` when unreachable.
    pub fn distance(&self, from: usize, to: usize) -> Option<usize> {
        let mut dist = vec![usize::MAX; self.num_nodes()];
        let mut queue = std::collections::VecDeque::from([from]);
        dist[from] = 0;
        while let Some(u) = queue.pop_front() {
            if u == to {
                return Some(dist[u]);
            }
            for &v in &self.adjacency[u] {
                if dist[v] == usize::MAX {
                    dist[v] = dist[u] + 1;
                    queue.push_back(v);
                }
            }
        }
        None
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_pair() {
        let g = BipartiteGraph::new(1, 1, &[(0, 0)]).unwrap();
        assert_eq!(g.num_nodes(), 2);
        assert_eq!(g.edges().len(), 1);
        let hood = g.neighborhoods_with_self();
        let self_loops = hood
            .iter()
            .enumerate()
            .filter(|(i, n)| n.contains(i))
            .count();
        assert_eq!(self_loops, 2);
    }

    #[test]
    fn shared_concept_gives_distance_two() {
        let g = BipartiteGraph::new(3, 2, &[(0, 0), (1, 0), (2, 1)]).unwrap();
        assert_eq!(g.distance(0, 1), Some(2));
        assert_eq!(g.distance(0, 2), None);
        assert!(g.is_bipartite());
    }

    #[test]
    fn isolated_problem_rejected() {
        assert!(matches!(
            BipartiteGraph::new(2, 1, &[(0, 0)]),
            Err(Error::Integrity(_))
        ));
    }

    #[test]
    fn knowledge_base_scale() {
        use crate::datamodel::{Concept, Problem};
        // 1054 problems, 106 concepts, one annotation each.
        let kb = KnowledgeBase {
            problems: (0..1054)
                .map(|id| Problem {
                    id,
                    text: String::new(),
                    difficulty: 1,
                    concept_ids: vec![id % 106],
                })
                .collect(),
            concepts: (0..106)
                .map(|id| Concept {
                    id,
                    name: String::new(),
                })
                .collect(),
        };
        let g = BipartiteGraph::from_knowledge_base(&kb).unwrap();
        assert_eq!(
            (g.num_problems(), g.num_concepts(), g.edges().len()),
            (1054, 106, 1054)
        );
    }
}
