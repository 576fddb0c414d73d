use serde::{Deserialize, Serialize};

use crate::backend::TokenUsage;
use crate::pipeline::task::TaskSpec;

/// Token allowance per instance and per prompt block: 100 completion tokens
/// plus 30 for the instruction.
pub const TOKENS_PER_BLOCK: f64 = 130.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BudgetEstimate {
    pub target_count: usize,
    /// Classes represented by in-prompt examples.
    pub example_classes: usize,
    pub price_per_1k_tokens: f64,
    pub tokens: f64,
    /// Cost of one `(n+1)` unit.
    pub per_block_cost: f64,
    pub cost: f64,
}

/// Upper bound on spend: every instance carries one block per example class
/// plus its own, each worth [`TOKENS_PER_BLOCK`] tokens.
///
/// ```
/// use divgen::pipeline::{cents, estimate_budget_for};
///
/// let b = estimate_budget_for(5600, 2, 0.02);
/// assert_eq!(cents(b.per_block_cost), 1456);
/// assert_eq!(cents(b.cost), 4368);
/// ```
pub fn estimate_budget_for(target_count: usize, example_classes: usize, price_per_1k_tokens: f64) -> BudgetEstimate {
    let blocks = (example_classes + 1) as f64;
    let per_block_tokens = target_count as f64 * TOKENS_PER_BLOCK;
    let per_block_cost = per_block_tokens * price_per_1k_tokens / 1000.0;
    BudgetEstimate {
        target_count,
        example_classes,
        price_per_1k_tokens,
        tokens: per_block_tokens * blocks,
        per_block_cost,
        cost: per_block_cost * blocks,
    }
}

/// [`estimate_budget_for`] with one example class per task label.
pub fn estimate_budget(task: &TaskSpec, price_per_1k_tokens: f64) -> BudgetEstimate {
    estimate_budget_for(task.target_count, task.labels.len(), price_per_1k_tokens)
}

/// Dollar amount rounded to whole cents.
pub fn cents(dollars: f64) -> i64 {
    (dollars * 100.0).round() as i64
}

/// Cost of tokens actually billed.
pub fn actual_cost(usage: &TokenUsage, price_per_1k_tokens: f64) -> f64 {
    usage.total() as f64 * price_per_1k_tokens / 1000.0
}
