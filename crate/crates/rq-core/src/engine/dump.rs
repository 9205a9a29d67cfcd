//! Line-delimited trajectory dump for downstream analysis.

use crate::protocol::{Document, RefinementAction, Trajectory};
use crate::selection;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StepRecord {
    pub action: RefinementAction,
    pub query: String,
    pub documents: Vec<Document>,
}

/// One dumped trajectory. `ppl`/`confidence` are null when the trajectory
/// carries no scorable tokens (e.g. reconstructed from text alone).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub question: String,
    pub steps: Vec<StepRecord>,
    pub answer: String,
    pub ppl: Option<f64>,
    pub confidence: Option<f64>,
}

impl TrajectoryRecord {
    pub fn from_trajectory(trajectory: &Trajectory) -> Self {
        Self {
            question: trajectory.input.clone(),
            steps: trajectory
                .steps
                .iter()
                .map(|s| StepRecord {
                    action: s.action,
                    query: s.refined_query.clone(),
                    documents: s.documents.clone(),
                })
                .collect(),
            answer: trajectory.final_answer.clone(),
            ppl: selection::perplexity(trajectory).ok(),
            confidence: selection::confidence(trajectory).ok(),
        }
    }
}

/// One JSON record per line, in trajectory order. Deterministic given the
/// trajectory list.
pub fn dump_trajectories(trajectories: &[Trajectory]) -> String {
    let mut out = String::new();
    for t in trajectories {
        let record = TrajectoryRecord::from_trajectory(t);
        out.push_str(&serde_json::to_string(&record).expect("trajectory record serializes"));
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::SearchStep;

    #[test]
    fn dump_is_line_delimited_and_deterministic() {
        let t = Trajectory {
            input: "q".into(),
            steps: vec![SearchStep::new(
                1,
                RefinementAction::Rewrite,
                "better",
                vec![Document::new("t", "s", "d", 1, 0.5)],
            )],
            final_answer: "a".into(),
            generated_tokens: vec![("x".into(), -0.5), ("y".into(), -0.5)],
            answer_start: 1,
            ..Default::default()
        };
        let one = dump_trajectories(&[t.clone()]);
        let two = dump_trajectories(&[t.clone(), t]);
        assert_eq!(two.lines().count(), 2);
        assert_eq!(one.lines().next(), two.lines().next());

        let record: TrajectoryRecord = serde_json::from_str(one.lines().next().unwrap()).unwrap();
        assert_eq!(record.question, "q");
        assert_eq!(record.steps.len(), 1);
        assert!(record.ppl.is_some());
        assert!((record.confidence.unwrap() - (-0.5)).abs() < 1e-12);
    }

    #[test]
    fn unscorable_trajectory_dumps_nulls() {
        let t = Trajectory::bare("q", "a");
        let line = dump_trajectories(&[t]);
        assert!(line.contains("\"ppl\":null"));
    }
}
