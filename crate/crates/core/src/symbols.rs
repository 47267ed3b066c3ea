//! Reserved vocabulary symbols shared across the pipeline.
//!
//! The tokenizer drops punctuation, so none of these strings can collide
//! with a token produced from real text.

pub const PAD: &str = "<pad>";
pub const MASK: &str = "<mask>";
pub const SEP: &str = "<sep>";
pub const BOS: &str = "<bos>";
pub const EOS: &str = "<eos>";
pub const UNK: &str = "<unk>";

pub const PAD_ID: u32 = 0;
pub const MASK_ID: u32 = 1;
pub const SEP_ID: u32 = 2;
pub const BOS_ID: u32 = 3;
pub const EOS_ID: u32 = 4;
pub const UNK_ID: u32 = 5;

/// Reserved symbols in id order; real tokens start at `RESERVED.len()`.
pub const RESERVED: [&str; 6] = [PAD, MASK, SEP, BOS, EOS, UNK];
