use alloc::vec::Vec;

use crate::error::{CoreError, Result};

/// An annotated token sequence.
///
/// Positions are zero-based: the question occupies `0..answer_start`, the
/// answer `answer_start..len`. `knowledge_slots` are the question positions
/// carrying ground-truth knowledge (the positions replaced when building a
/// masked variant). Per-token losses are defined for target positions
/// `1..len`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSequence {
    pub ids: Vec<u32>,
    pub answer_start: usize,
    pub knowledge_slots: Vec<usize>,
}

impl TokenSequence {
    pub fn new(ids: Vec<u32>, answer_start: usize, mut knowledge_slots: Vec<usize>) -> Result<Self> {
        if ids.len() < 2 {
            return Err(CoreError::InvalidSequence("length must be at least 2"));
        }
        if answer_start == 0 || answer_start >= ids.len() {
            return Err(CoreError::InvalidSequence(
                "answer_start must lie strictly inside the sequence",
            ));
        }
        knowledge_slots.sort_unstable();
        knowledge_slots.dedup();
        if knowledge_slots.iter().any(|&p| p >= answer_start) {
            return Err(CoreError::InvalidSequence(
                "knowledge slots must lie in the question region",
            ));
        }
        Ok(Self {
            ids,
            answer_start,
            knowledge_slots,
        })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Positions whose prediction carries a loss term.
    pub fn target_positions(&self) -> core::ops::Range<usize> {
        1..self.ids.len()
    }

    pub fn answer_positions(&self) -> core::ops::Range<usize> {
        self.answer_start..self.ids.len()
    }

    pub fn question_ids(&self) -> &[u32] {
        &self.ids[..self.answer_start]
    }

    pub fn answer_ids(&self) -> &[u32] {
        &self.ids[self.answer_start..]
    }

    pub fn validate_ids(&self, vocab_size: usize) -> Result<()> {
        for &id in &self.ids {
            if id as usize >= vocab_size {
                return Err(CoreError::TokenOutOfVocab {
                    id,
                    size: vocab_size,
                });
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn rejects_degenerate_shapes() {
        assert!(TokenSequence::new(vec![1], 1, vec![]).is_err());
        assert!(TokenSequence::new(vec![1, 2], 0, vec![]).is_err());
        assert!(TokenSequence::new(vec![1, 2], 2, vec![]).is_err());
        // slot inside the answer region
        assert!(TokenSequence::new(vec![1, 2, 3], 1, vec![1]).is_err());
    }

    #[test]
    fn regions_partition_the_sequence() {
        let s = TokenSequence::new(vec![5, 9, 3, 7, 2], 3, vec![1]).unwrap();
        assert_eq!(s.question_ids(), &[5, 9, 3]);
        assert_eq!(s.answer_ids(), &[7, 2]);
        assert_eq!(s.target_positions(), 1..5);
    }

    #[test]
    fn slots_are_sorted_and_deduped() {
        let s = TokenSequence::new(vec![1, 2, 3, 4, 5], 4, vec![2, 0, 2]).unwrap();
        assert_eq!(s.knowledge_slots, vec![0, 2]);
    }
}
