//! Measurement tools: text metrics, pairwise preference, statistical tests and
//! the memory ablation harness.

pub mod ablation;
pub mod preference;
pub mod stats;
pub mod text_metrics;

pub use ablation::{
    builtin_scenarios, load_scenarios, parse_scenarios, run_memory_ablation, AblationArm, AblationError,
    AblationReport, ArmScore, ScenarioCase, ScenarioScore, ScenarioTurn,
};
pub use preference::{compare_with_reversal, Comparison, LengthHeuristicScorer, PairwiseScorer, RemoteScorer, ScorerError};
pub use stats::{levene, levene_with, mann_whitney_u, shapiro_wilk, welch_t, LeveneCenter, StatsError, TestResult};
pub use text_metrics::{
    count_syllables, flesch_reading_ease, metric_report, relevance, sentiment, Lexicon, MetricError, MetricReport,
    Readability, Sentiment,
};
