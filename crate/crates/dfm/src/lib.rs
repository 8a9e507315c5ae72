//! Cross-view patch fusion for stereo-consistent two-view generation.
//!
//! Left-view tokens are matched against right-view tokens by a mix of feature
//! cosine similarity and disparity agreement; the `n` strongest links are
//! fused into shared tokens before self-attention and broadcast back to both
//! views afterwards, so matched positions leave the attention step identical.

pub mod consistency;
pub mod error;
pub mod fusion;
pub mod hook;
pub mod matching;
pub mod patches;
pub mod similarity;

pub use consistency::{apply_consistency, attend_per_view, IdentityAttention, TokenAttention};
pub use error::{DfmError, Result};
pub use fusion::{merge, unmerge};
pub use hook::{AttentionInterceptor, DfmHook, DfmSettings, LayerSelector, NoHook, SiteInfo};
pub use matching::{match_top_n, MatchMap, MatchPair};
pub use patches::{partition, PatchSet, TokenSet};
pub use similarity::{patch_similarity, SimilarityConfig};
