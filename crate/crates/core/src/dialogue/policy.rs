//! Which of the ten prompt types the tutor uses next.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{Classification, SessionState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PromptType {
    InitialContextAndQuestioning,
    ResponseEvaluationAndFeedback,
    IterativePrompting,
    FeedbackAndExploration,
    MaintainingEngagement,
    FosteringCriticalThinking,
    EncouragingReflection,
    ProvidingIncrementalHints,
    AdaptiveFeedback,
    EncouragingSynthesis,
}

impl PromptType {
    pub const ALL: [PromptType; 10] = [
        PromptType::InitialContextAndQuestioning,
        PromptType::ResponseEvaluationAndFeedback,
        PromptType::IterativePrompting,
        PromptType::FeedbackAndExploration,
        PromptType::MaintainingEngagement,
        PromptType::FosteringCriticalThinking,
        PromptType::EncouragingReflection,
        PromptType::ProvidingIncrementalHints,
        PromptType::AdaptiveFeedback,
        PromptType::EncouragingSynthesis,
    ];

    pub fn label(self) -> &'static str {
        match self {
            PromptType::InitialContextAndQuestioning => "Initial Context and Questioning",
            PromptType::ResponseEvaluationAndFeedback => "Response Evaluation and Feedback",
            PromptType::IterativePrompting => "Iterative Prompting",
            PromptType::FeedbackAndExploration => "Feedback and Exploration",
            PromptType::MaintainingEngagement => "Maintaining Engagement",
            PromptType::FosteringCriticalThinking => "Fostering Critical Thinking",
            PromptType::EncouragingReflection => "Encouraging Reflection",
            PromptType::ProvidingIncrementalHints => "Providing Incremental Hints",
            PromptType::AdaptiveFeedback => "Adaptive Feedback",
            PromptType::EncouragingSynthesis => "Encouraging Synthesis",
        }
    }

    /// What the tutor is asked to do with this move.
    pub fn description(self) -> &'static str {
        match self {
            PromptType::InitialContextAndQuestioning => {
                "Present a scenario context and pose a wh-question that gets the learner thinking."
            }
            PromptType::ResponseEvaluationAndFeedback => {
                "Evaluate the response and give hints and feedback toward a correct understanding without giving the answer away."
            }
            PromptType::IterativePrompting => {
                "Deepen the learner's reasoning and ask for more detailed exploration and articulation."
            }
            PromptType::FeedbackAndExploration => {
                "Point out what is correct in the response and hint at what to explore further."
            }
            PromptType::MaintainingEngagement => {
                "Keep the learner engaged with a thought-provoking question linking the new concept to prior knowledge."
            }
            PromptType::FosteringCriticalThinking => {
                "Ask the learner to evaluate and critique their own response."
            }
            PromptType::EncouragingReflection => "Ask the learner to reflect on their learning process and outcomes.",
            PromptType::ProvidingIncrementalHints => {
                "Offer a hint that builds on earlier hints and moves the learner one step closer."
            }
            PromptType::AdaptiveFeedback => {
                "Adapt the feedback to the learner's progress, becoming more specific as understanding grows."
            }
            PromptType::EncouragingSynthesis => {
                "Ask the learner to combine information from different parts of the scenario into one picture."
            }
        }
    }

    /// Canonical wh-question for this move, also used when a composed turn
    /// has to be patched.
    pub fn example_question(self) -> &'static str {
        match self {
            PromptType::InitialContextAndQuestioning => {
                "What aspect of the context do you find most challenging to understand?"
            }
            PromptType::ResponseEvaluationAndFeedback => {
                "How does this part of the context relate to the overall scenario?"
            }
            PromptType::IterativePrompting => "Can you explain why this particular detail is significant in the scenario?",
            PromptType::FeedbackAndExploration => "What other factors might influence this outcome?",
            PromptType::MaintainingEngagement => {
                "How would you connect this concept to what you have learned previously?"
            }
            PromptType::FosteringCriticalThinking => "What could be a potential limitation of your current understanding?",
            PromptType::EncouragingReflection => "How has your understanding changed after considering this question?",
            PromptType::ProvidingIncrementalHints => {
                "What is a simpler way to think about this problem before tackling the more complex aspects?"
            }
            PromptType::AdaptiveFeedback => "Given your explanation, what would be the next logical step to explore?",
            PromptType::EncouragingSynthesis => {
                "How can you combine these different pieces of information to solve the problem?"
            }
        }
    }
}

impl fmt::Display for PromptType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// The slice of session state a policy decision depends on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PolicyInput {
    /// Consecutive Correct assessments before this one.
    pub correct_streak: u32,
    /// Consecutive Partial assessments before this one.
    pub partial_streak: u32,
    pub hint_depth: u32,
    /// Turn index the chosen prompt type will occupy.
    pub tutor_turn_index: usize,
}

impl PolicyInput {
    /// Input for the tutor turn that follows the next learner turn.
    pub fn from_state(state: &SessionState) -> Self {
        Self {
            correct_streak: state.correct_streak,
            partial_streak: state.partial_streak,
            hint_depth: state.hint_depth,
            tutor_turn_index: state.turn_count + 1,
        }
    }
}

/// A replaceable prompt-type sequencing strategy.
pub trait DialoguePolicy: Send + Sync {
    fn id(&self) -> PolicyId;
    fn select(&self, input: &PolicyInput, classification: Classification) -> PromptType;
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyId {
    #[default]
    StreakOverride,
}

impl PolicyId {
    pub fn policy(self) -> &'static dyn DialoguePolicy {
        match self {
            PolicyId::StreakOverride => &StreakOverridePolicy,
        }
    }
}

impl FromStr for PolicyId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "streak_override" | "default" => Ok(PolicyId::StreakOverride),
            other => Err(format!("unknown policy `{other}`")),
        }
    }
}

/// Default policy.
///
/// Assessment picks a base move: hints after Incorrect/OffTopic, iterative
/// prompting after Partial (every third Partial in a row explores instead),
/// and a Correct streak of 1, 2, 3+ maps to evaluation, engagement,
/// synthesis. A first Correct after hints gets adaptive feedback. Turn
/// position then overrides: every 4th tutor turn reflects and every 6th
/// critiques, with reflection winning when both apply.
#[derive(Debug, Clone, Copy, Default)]
pub struct StreakOverridePolicy;

impl DialoguePolicy for StreakOverridePolicy {
    fn id(&self) -> PolicyId {
        PolicyId::StreakOverride
    }

    fn select(&self, input: &PolicyInput, classification: Classification) -> PromptType {
        let ordinal = input.tutor_turn_index / 2;
        if ordinal % 4 == 3 {
            return PromptType::EncouragingReflection;
        }
        if ordinal % 6 == 5 {
            return PromptType::FosteringCriticalThinking;
        }
        match classification {
            Classification::Incorrect | Classification::OffTopic => PromptType::ProvidingIncrementalHints,
            Classification::Partial => {
                if (input.partial_streak + 1).is_multiple_of(3) {
                    PromptType::FeedbackAndExploration
                } else {
                    PromptType::IterativePrompting
                }
            }
            Classification::Correct => match input.correct_streak + 1 {
                1 if input.hint_depth > 0 => PromptType::AdaptiveFeedback,
                1 => PromptType::ResponseEvaluationAndFeedback,
                2 => PromptType::MaintainingEngagement,
                _ => PromptType::EncouragingSynthesis,
            },
        }
    }
}

/// Default policy applied to a session state.
pub fn select_prompt_type(state: &SessionState, classification: Classification) -> PromptType {
    StreakOverridePolicy.select(&PolicyInput::from_state(state), classification)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn input(correct: u32, partial: u32, hints: u32, index: usize) -> PolicyInput {
        PolicyInput { correct_streak: correct, partial_streak: partial, hint_depth: hints, tutor_turn_index: index }
    }

    #[test]
    fn incorrect_gives_hints() {
        let p = StreakOverridePolicy;
        assert_eq!(p.select(&input(0, 0, 0, 2), Classification::Incorrect), PromptType::ProvidingIncrementalHints);
        assert_eq!(p.select(&input(0, 0, 0, 2), Classification::OffTopic), PromptType::ProvidingIncrementalHints);
    }

    #[test]
    fn third_correct_synthesizes() {
        assert_eq!(StreakOverridePolicy.select(&input(2, 0, 0, 4), Classification::Correct), PromptType::EncouragingSynthesis);
    }

    #[test]
    fn reflection_wins_tie_with_critical_thinking() {
        // tutor ordinal 11 is both the 12th (mod 4 = 3) and mod 6 = 5
        assert_eq!(StreakOverridePolicy.select(&input(0, 0, 0, 22), Classification::Correct), PromptType::EncouragingReflection);
        assert_eq!(StreakOverridePolicy.select(&input(0, 0, 0, 10), Classification::Correct), PromptType::FosteringCriticalThinking);
    }

    #[test]
    fn every_prompt_type_has_a_wh_example() {
        for t in PromptType::ALL {
            assert!(crate::wh::ends_with_wh_question(t.example_question()), "{t}");
        }
    }
}
