//! Pairwise difficulty annotation: pick level pairs that models and the
//! charts' own ratings disagree on, collect blind human judgments over
//! HTTP, and score every source by its concordance with them.

pub mod preview;
pub mod score;
pub mod select;
pub mod server;
pub mod store;

pub use score::{score_sources, ScoreReport, SourceScore};
pub use select::{pair_id, select_pairs, sources_from_predictions, CandidatePair, SelectError, Source, ORIGINAL};
pub use server::{router, serve, AppState, Catalog, ServiceError};
pub use store::{Aggregates, Choice, JudgmentEvent, JudgmentLog, PairJudgment, StoreError};
