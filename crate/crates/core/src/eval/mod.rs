//! Sampled top-N ranking metrics, leakage attackers and reports.

mod attacker;
mod auc;
mod ranking;
mod report;

pub use attacker::{attack_features, stratified_split, train_attacker, AttackerConfig, AttackerResult};
pub use auc::{auc_binary, auc_binary_raw, auc_macro, MacroAuc, PairAuc};
pub use ranking::{evaluate_ranking, hit_at, ndcg_at, rank_of_first, RankingMetrics};
pub use report::{
    assemble_report, merge_reports, read_jsonl, write_embeddings, write_jsonl, write_table, CellResult, FeatureAuc,
    MetricReport, RunInfo, ATTACKER_VIEW_NOTE,
};
