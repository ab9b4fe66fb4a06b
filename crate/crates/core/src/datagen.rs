//! Synthetic fictitious-facts QA dataset with exact knowledge annotations.
//!
//! Each entity is a made-up person with five attributes (birthplace, genre,
//! award, instrument, language). Every attribute has five fixed question
//! phrasings and one answer phrasing; template choice depends only on the
//! QA index, never on the entity, so a masked question cannot leak entity
//! identity through phrasing. Names and attribute values are generated
//! syllable words, globally unique, so value pools are disjoint and every
//! question has exactly one correct answer.
//!
//! Annotations:
//! - question `knowledge_slots`: positions of name tokens and attribute
//!   nouns (the tokens a masking pass replaces),
//! - `answer_knowledge_positions`: answer positions holding fact tokens
//!   (names and attribute values); the remaining answer tokens are
//!   structural template words.
//!
//! Splits are by entity: an entity's QA pairs are all forget or all retain.

use alloc::collections::BTreeSet;

use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{CoreError, Result};
use crate::lm::{TokenSequence, Vocabulary};
use crate::math;

pub const MASK_TOKEN: &str = "[MASK]";
pub const ATTRIBUTE_KINDS: [&str; 5] = ["birthplace", "genre", "award", "instrument", "language"];
const N_VARIANTS: usize = 5;

/// Question template token: a fixed word, a fixed noun (maskable), or a
/// name placeholder.
#[derive(Clone, Copy)]
enum QTok {
    W(&'static str),
    N(&'static str),
    First,
    Last,
}

/// Answer template token: a fixed word, a name placeholder, or the
/// attribute value.
#[derive(Clone, Copy)]
enum ATok {
    W(&'static str),
    First,
    Last,
    Value,
}

struct AttrTemplates {
    questions: [&'static [QTok]; N_VARIANTS],
    answer: &'static [ATok],
}

use ATok::{First as AF, Last as AL, Value as AV, W as AW};
use QTok::{First as QF, Last as QL, N as QN, W as QW};

static TEMPLATES: [AttrTemplates; 5] = [
    // birthplace
    AttrTemplates {
        questions: [
            &[QW("where"), QW("was"), QF, QL, QW("born"), QW("?")],
            &[QW("in"), QW("which"), QN("city"), QW("was"), QF, QL, QW("born"), QW("?")],
            &[QW("what"), QW("is"), QW("the"), QN("birthplace"), QW("of"), QF, QL, QW("?")],
            &[QW("which"), QN("city"), QW("does"), QF, QL, QW("come"), QW("from"), QW("?")],
            &[QW("name"), QW("the"), QN("city"), QW("where"), QF, QL, QW("was"), QW("born"), QW(".")],
        ],
        answer: &[AF, AL, AW("was"), AW("born"), AW("in"), AV, AW(".")],
    },
    // genre
    AttrTemplates {
        questions: [
            &[QW("what"), QN("genre"), QW("does"), QF, QL, QW("write"), QW("in"), QW("?")],
            &[QW("which"), QN("genre"), QW("is"), QF, QL, QW("known"), QW("for"), QW("?")],
            &[QW("what"), QW("is"), QW("the"), QN("genre"), QW("of"), QF, QL, QW("?")],
            &[QW("name"), QW("the"), QN("genre"), QF, QL, QW("writes"), QW("in"), QW(".")],
            &[QW("which"), QN("genre"), QW("does"), QF, QL, QW("prefer"), QW("?")],
        ],
        answer: &[AF, AL, AW("writes"), AW("in"), AW("the"), AV, AW("genre"), AW(".")],
    },
    // award
    AttrTemplates {
        questions: [
            &[QW("what"), QN("award"), QW("did"), QF, QL, QW("win"), QW("?")],
            &[QW("which"), QN("award"), QW("was"), QW("given"), QW("to"), QF, QL, QW("?")],
            &[QW("what"), QW("is"), QW("the"), QN("award"), QW("won"), QW("by"), QF, QL, QW("?")],
            &[QW("name"), QW("the"), QN("award"), QF, QL, QW("received"), QW(".")],
            &[QW("which"), QN("award"), QW("did"), QF, QL, QW("receive"), QW("?")],
        ],
        answer: &[AF, AL, AW("won"), AW("the"), AV, AW("award"), AW(".")],
    },
    // instrument
    AttrTemplates {
        questions: [
            &[QW("what"), QN("instrument"), QW("does"), QF, QL, QW("play"), QW("?")],
            &[QW("which"), QN("instrument"), QW("is"), QW("played"), QW("by"), QF, QL, QW("?")],
            &[QW("what"), QW("is"), QW("the"), QN("instrument"), QW("of"), QF, QL, QW("?")],
            &[QW("name"), QW("the"), QN("instrument"), QF, QL, QW("plays"), QW(".")],
            &[QW("which"), QN("instrument"), QW("does"), QF, QL, QW("practice"), QW("?")],
        ],
        answer: &[AF, AL, AW("plays"), AW("the"), AV, AW("instrument"), AW(".")],
    },
    // language
    AttrTemplates {
        questions: [
            &[QW("what"), QN("language"), QW("does"), QF, QL, QW("speak"), QW("?")],
            &[QW("which"), QN("language"), QW("is"), QW("spoken"), QW("by"), QF, QL, QW("?")],
            &[QW("what"), QW("is"), QW("the"), QN("language"), QW("of"), QF, QL, QW("?")],
            &[QW("name"), QW("the"), QN("language"), QF, QL, QW("speaks"), QW(".")],
            &[QW("which"), QN("language"), QW("does"), QF, QL, QW("use"), QW("?")],
        ],
        answer: &[AF, AL, AW("speaks"), AW("the"), AV, AW("language"), AW(".")],
    },
];

/// A fictitious entity with one value per attribute kind.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FactProfile {
    pub entity_id: u32,
    pub first: String,
    pub last: String,
    /// One value per entry of [`ATTRIBUTE_KINDS`].
    pub values: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Forget,
    Retain,
}

impl Split {
    pub fn as_str(&self) -> &'static str {
        match self {
            Split::Forget => "forget",
            Split::Retain => "retain",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "forget" => Some(Split::Forget),
            "retain" => Some(Split::Retain),
            _ => None,
        }
    }
}

/// One QA pair: the token sequence plus ground-truth annotations.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QASample {
    pub seq: TokenSequence,
    /// Answer positions whose tokens are fact values (names and attribute
    /// values). The remaining answer positions are structural.
    pub answer_knowledge_positions: Vec<usize>,
    pub split: Split,
    pub entity_id: u32,
}

impl QASample {
    /// Answer positions that are not knowledge-bearing.
    pub fn structural_answer_positions(&self) -> Vec<usize> {
        self.seq
            .answer_positions()
            .filter(|p| !self.answer_knowledge_positions.contains(p))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub samples: Vec<QASample>,
    pub profiles: Vec<FactProfile>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DataParams {
    pub num_entities: usize,
    pub qa_per_entity: usize,
    pub forget_fraction: f64,
    pub seed: u64,
}

impl Default for DataParams {
    fn default() -> Self {
        Self {
            num_entities: 40,
            qa_per_entity: 5,
            forget_fraction: 0.1,
            seed: 7,
        }
    }
}

impl Dataset {
    pub fn forget(&self) -> Vec<&TokenSequence> {
        self.split_seqs(Split::Forget)
    }

    pub fn retain(&self) -> Vec<&TokenSequence> {
        self.split_seqs(Split::Retain)
    }

    fn split_seqs(&self, split: Split) -> Vec<&TokenSequence> {
        self.samples
            .iter()
            .filter(|s| s.split == split)
            .map(|s| &s.seq)
            .collect()
    }

    pub fn split_samples(&self, split: Split) -> Vec<&QASample> {
        self.samples.iter().filter(|s| s.split == split).collect()
    }

    pub fn max_len(&self) -> usize {
        self.samples.iter().map(|s| s.seq.len()).max().unwrap_or(0)
    }

    /// Structural audits: entity-disjoint splits, vocabulary closure, and
    /// ambiguity-freedom (identical questions never have different answers).
    pub fn audit(&self, vocab: &Vocabulary) -> Result<()> {
        let forget_ids: BTreeSet<u32> = self
            .samples
            .iter()
            .filter(|s| s.split == Split::Forget)
            .map(|s| s.entity_id)
            .collect();
        let retain_ids: BTreeSet<u32> = self
            .samples
            .iter()
            .filter(|s| s.split == Split::Retain)
            .map(|s| s.entity_id)
            .collect();
        if forget_ids.intersection(&retain_ids).next().is_some() {
            return Err(CoreError::InvalidSequence(
                "forget and retain splits share an entity",
            ));
        }
        let mut seen: Vec<(&[u32], &[u32])> = Vec::new();
        for s in &self.samples {
            s.seq.validate_ids(vocab.size())?;
            let q = s.seq.question_ids();
            let a = s.seq.answer_ids();
            if let Some((_, prev)) = seen.iter().find(|(pq, _)| *pq == q) {
                if *prev != a {
                    return Err(CoreError::InvalidSequence(
                        "identical question with two distinct answers",
                    ));
                }
            }
            seen.push((q, a));
        }
        Ok(())
    }
}

const CONSONANTS: [&str; 14] = [
    "b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z",
];
const VOWELS: [&str; 5] = ["a", "e", "i", "o", "u"];

fn syllable_word(rng: &mut ChaCha8Rng) -> String {
    let syllables = 2 + (rng.random::<u32>() % 2) as usize;
    let mut w = String::new();
    for _ in 0..syllables {
        w.push_str(CONSONANTS[rng.random_range(0..CONSONANTS.len())]);
        w.push_str(VOWELS[rng.random_range(0..VOWELS.len())]);
    }
    if rng.random::<bool>() {
        w.push_str(CONSONANTS[rng.random_range(0..CONSONANTS.len())]);
    }
    w
}

fn fresh_word(rng: &mut ChaCha8Rng, used: &mut BTreeSet<String>) -> String {
    loop {
        let w = syllable_word(rng);
        if used.insert(w.clone()) {
            return w;
        }
    }
}

fn template_words() -> BTreeSet<String> {
    let mut words = BTreeSet::new();
    for t in &TEMPLATES {
        for q in &t.questions {
            for tok in *q {
                match tok {
                    QTok::W(w) | QTok::N(w) => {
                        words.insert(w.to_string());
                    }
                    _ => {}
                }
            }
        }
        for tok in t.answer {
            if let ATok::W(w) = tok {
                words.insert(w.to_string());
            }
        }
    }
    words
}

/// Generates the dataset and its vocabulary.
///
/// Deterministic in `params`: the same parameters always produce the same
/// samples, annotations, splits, and vocabulary. The forget split holds
/// `round(forget_fraction · num_entities)` entities (at least one).
pub fn generate(params: &DataParams) -> Result<(Dataset, Vocabulary)> {
    if params.num_entities < 10 {
        return Err(CoreError::InvalidParameter {
            name: "num_entities",
            reason: "must be at least 10",
        });
    }
    if params.qa_per_entity < 2 {
        return Err(CoreError::InvalidParameter {
            name: "qa_per_entity",
            reason: "must be at least 2 so every profile yields two QA pairs",
        });
    }
    if !(params.forget_fraction > 0.0 && params.forget_fraction < 1.0) {
        return Err(CoreError::InvalidParameter {
            name: "forget_fraction",
            reason: "must lie in (0, 1)",
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let n = params.num_entities;
    let n_attrs = ATTRIBUTE_KINDS.len();

    let mut used = template_words();
    used.insert(MASK_TOKEN.to_string());
    let firsts: Vec<String> = (0..n).map(|_| fresh_word(&mut rng, &mut used)).collect();
    let lasts: Vec<String> = (0..n).map(|_| fresh_word(&mut rng, &mut used)).collect();
    let value_pools: Vec<Vec<String>> = (0..n_attrs)
        .map(|_| (0..n).map(|_| fresh_word(&mut rng, &mut used)).collect())
        .collect();

    let profiles: Vec<FactProfile> = (0..n)
        .map(|i| FactProfile {
            entity_id: i as u32,
            first: firsts[i].clone(),
            last: lasts[i].clone(),
            values: value_pools.iter().map(|pool| pool[i].clone()).collect(),
        })
        .collect();

    // Vocabulary: sorted unique words, mask token last.
    let mut words: Vec<String> = used.iter().filter(|w| w.as_str() != MASK_TOKEN).cloned().collect();
    words.sort_unstable();
    words.push(MASK_TOKEN.to_string());
    let mask_id = (words.len() - 1) as u32;
    let vocab = Vocabulary::new(words, mask_id)?;

    // Entity split, by shuffled order.
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let n_forget = (math::round(params.forget_fraction * n as f64) as usize).max(1);
    let forget_set: BTreeSet<usize> = order[..n_forget].iter().copied().collect();

    let enc = |w: &str| vocab.encode(w).expect("vocabulary covers all words");
    let mut samples = Vec::with_capacity(n * params.qa_per_entity);
    for profile in &profiles {
        let split = if forget_set.contains(&(profile.entity_id as usize)) {
            Split::Forget
        } else {
            Split::Retain
        };
        for k in 0..params.qa_per_entity {
            let attr = k % n_attrs;
            // Variant choice depends only on the QA index: identical across
            // entities, so masked questions stay entity-anonymous.
            let variant = (k + k / n_attrs) % N_VARIANTS;
            let t = &TEMPLATES[attr];
            let mut ids = Vec::new();
            let mut slots = Vec::new();
            for tok in t.questions[variant] {
                match tok {
                    QTok::W(w) => ids.push(enc(w)),
                    QTok::N(w) => {
                        slots.push(ids.len());
                        ids.push(enc(w));
                    }
                    QTok::First => {
                        slots.push(ids.len());
                        ids.push(enc(&profile.first));
                    }
                    QTok::Last => {
                        slots.push(ids.len());
                        ids.push(enc(&profile.last));
                    }
                }
            }
            let answer_start = ids.len();
            let mut knowledge = Vec::new();
            for tok in t.answer {
                match tok {
                    ATok::W(w) => ids.push(enc(w)),
                    ATok::First => {
                        knowledge.push(ids.len());
                        ids.push(enc(&profile.first));
                    }
                    ATok::Last => {
                        knowledge.push(ids.len());
                        ids.push(enc(&profile.last));
                    }
                    ATok::Value => {
                        knowledge.push(ids.len());
                        ids.push(enc(&profile.values[attr]));
                    }
                }
            }
            let seq = TokenSequence::new(ids, answer_start, slots)?;
            samples.push(QASample {
                seq,
                answer_knowledge_positions: knowledge,
                split,
                entity_id: profile.entity_id,
            });
        }
    }

    let dataset = Dataset { samples, profiles };
    dataset.audit(&vocab)?;
    Ok((dataset, vocab))
}

/// A one-sample dataset around a single fact, for smoke tests.
pub fn single_fact_dataset() -> (Dataset, Vocabulary) {
    let words: Vec<String> = [
        "?", ".", "born", "in", "velor", "was", "where", "zamir", "tekka", MASK_TOKEN,
    ]
    .iter()
    .map(|w| w.to_string())
    .collect();
    let vocab = Vocabulary::new(words.clone(), (words.len() - 1) as u32).unwrap();
    let enc = |w: &str| vocab.encode(w).unwrap();
    let ids = vec![
        enc("where"),
        enc("was"),
        enc("zamir"),
        enc("born"),
        enc("?"),
        enc("zamir"),
        enc("was"),
        enc("born"),
        enc("in"),
        enc("velor"),
        enc("."),
    ];
    let seq = TokenSequence::new(ids, 5, vec![2]).unwrap();
    let sample = QASample {
        answer_knowledge_positions: vec![5, 9],
        seq,
        split: Split::Forget,
        entity_id: 0,
    };
    (
        Dataset {
            samples: vec![sample],
            profiles: vec![FactProfile {
                entity_id: 0,
                first: "zamir".to_string(),
                last: "tekka".to_string(),
                values: vec!["velor".to_string()],
            }],
        },
        vocab,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_split_counts() {
        let (ds, _) = generate(&DataParams::default()).unwrap();
        let forget_entities: BTreeSet<u32> = ds
            .split_samples(Split::Forget)
            .iter()
            .map(|s| s.entity_id)
            .collect();
        let retain_entities: BTreeSet<u32> = ds
            .split_samples(Split::Retain)
            .iter()
            .map(|s| s.entity_id)
            .collect();
        assert_eq!(forget_entities.len(), 4);
        assert_eq!(retain_entities.len(), 36);
        assert_eq!(ds.samples.len(), 200);
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate(&DataParams::default()).unwrap();
        let b = generate(&DataParams::default()).unwrap();
        assert_eq!(a.0, b.0);
        assert_eq!(a.1, b.1);
    }

    #[test]
    fn split_entities_are_disjoint() {
        let (ds, vocab) = generate(&DataParams::default()).unwrap();
        ds.audit(&vocab).unwrap();
    }

    #[test]
    fn params_are_validated() {
        let mut p = DataParams::default();
        p.num_entities = 5;
        assert!(generate(&p).is_err());
        let mut p = DataParams::default();
        p.forget_fraction = 0.0;
        assert!(generate(&p).is_err());
        let mut p = DataParams::default();
        p.qa_per_entity = 1;
        assert!(generate(&p).is_err());
    }

    #[test]
    fn annotations_point_at_fact_tokens() {
        let (ds, vocab) = generate(&DataParams::default()).unwrap();
        for s in &ds.samples {
            assert!(!s.answer_knowledge_positions.is_empty());
            let profile = &ds.profiles[s.entity_id as usize];
            for &pos in &s.answer_knowledge_positions {
                assert!(pos >= s.seq.answer_start);
                let word = vocab.decode(s.seq.ids[pos]).unwrap();
                let is_fact = word == profile.first
                    || word == profile.last
                    || profile.values.iter().any(|v| v == word);
                assert!(is_fact, "position {pos} is not a fact token: {word}");
            }
            // every sample keeps at least one structural answer token
            assert!(!s.structural_answer_positions().is_empty());
            // knowledge slots must be maskable question positions
            assert!(!s.seq.knowledge_slots.is_empty());
        }
    }

    #[test]
    fn masked_questions_are_entity_anonymous() {
        // After replacing knowledge slots with the mask token, the question
        // token stream must be identical across entities for a fixed QA
        // index.
        let (ds, vocab) = generate(&DataParams::default()).unwrap();
        let qa = DataParams::default().qa_per_entity;
        for k in 0..qa {
            let mut first_masked: Option<Vec<u32>> = None;
            for s in ds.samples.iter().skip(k).step_by(qa) {
                let mut q = s.seq.question_ids().to_vec();
                for &slot in &s.seq.knowledge_slots {
                    q[slot] = vocab.mask_id();
                }
                match &first_masked {
                    None => first_masked = Some(q),
                    Some(f) => assert_eq!(f, &q),
                }
            }
        }
    }

    #[test]
    fn vocabulary_is_near_the_target_size() {
        let (_, vocab) = generate(&DataParams::default()).unwrap();
        assert!(vocab.size() > 250 && vocab.size() < 400, "|V| = {}", vocab.size());
        assert_eq!(vocab.decode(vocab.mask_id()), Some(MASK_TOKEN));
    }
}
