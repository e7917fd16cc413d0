//! Loss terms, their composition, and the named configuration grid.

mod compose;
mod config;
mod terms;

pub use compose::{compose, tie_break_offset, Diagnostics, EvalOptions, Evaluation, Frozen, LossBreakdown};
pub use config::{
    grid_entry, grid_ids, resolve_grid_id, Dynamic, GridEntry, Illumination, LossConfig, LossWeights, Occlusion,
    DEFAULT_WARM_UP_STEPS,
};
pub use terms::{
    auto_mask, auto_mask_from_errors, average_reprojection, depth_consistency_gate, depth_consistency_mask,
    min_reprojection, motion_smoothness, motion_sparsity, normalized_depth_smoothness, smoothness,
    uncertainty_weighted, MinReprojection, SmoothnessTerm, SparsityTerm, UncertaintyTerm, SPARSITY_MEAN_EPS,
};
