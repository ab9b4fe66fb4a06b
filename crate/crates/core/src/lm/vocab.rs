use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{CoreError, Result};

/// An ordered list of distinct token strings plus a dedicated mask token.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: BTreeMap<String, u32>,
    mask_id: u32,
}

impl Vocabulary {
    pub fn new(tokens: Vec<String>, mask_id: u32) -> Result<Self> {
        if tokens.is_empty() {
            return Err(CoreError::InvalidVocabulary("token list is empty"));
        }
        if (mask_id as usize) >= tokens.len() {
            return Err(CoreError::InvalidVocabulary("mask_id out of range"));
        }
        let mut index = BTreeMap::new();
        for (i, tok) in tokens.iter().enumerate() {
            if index.insert(tok.clone(), i as u32).is_some() {
                return Err(CoreError::InvalidVocabulary("duplicate token string"));
            }
        }
        Ok(Self {
            tokens,
            index,
            mask_id,
        })
    }

    pub fn size(&self) -> usize {
        self.tokens.len()
    }

    pub fn mask_id(&self) -> u32 {
        self.mask_id
    }

    pub fn encode(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn decode(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }
}
