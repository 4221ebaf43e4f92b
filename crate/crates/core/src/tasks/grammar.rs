//! A small probabilistic grammar with latent topics and agreement pairs.
//!
//! Vocabulary layout (after the four reserved ids):
//!
//! ```text
//! [topic 0 nouns][topic 1 nouns]...[determiners][fillers]
//! ```
//!
//! A sentence is two halves, each with a latent topic. A half is a run of
//! units: with probability `content_prob` a `determiner noun` pair where the
//! noun comes from the half's topic and the determiner agrees with the noun
//! (`determiner = noun_index mod num_determiners`), otherwise a single filler.
//! Determiners and fillers carry no topic information.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::NUM_SPECIAL;
use crate::rng::RngStream;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GrammarParams {
    pub num_topics: usize,
    pub nouns_per_topic: usize,
    pub num_determiners: usize,
    pub num_fillers: usize,
    /// Tokens per sentence, excluding `[CLS]`.
    pub sentence_len: usize,
    pub content_prob: f64,
    /// Probability that a corpus sentence changes topic at its midpoint.
    pub switch_prob: f64,
}

impl Default for GrammarParams {
    fn default() -> Self {
        Self {
            num_topics: 4,
            nouns_per_topic: 6,
            num_determiners: 3,
            num_fillers: 5,
            sentence_len: 15,
            content_prob: 0.6,
            switch_prob: 0.5,
        }
    }
}

/// What a token is, by vocabulary range.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TokenRole {
    Special,
    Noun { topic: usize, index: usize },
    Determiner(usize),
    Filler,
}

impl GrammarParams {
    pub fn validate(&self) -> Result<()> {
        if self.num_topics < 2 || self.nouns_per_topic == 0 || self.num_determiners == 0 {
            return Err(Error::Config(
                "grammar needs >= 2 topics, >= 1 noun per topic and >= 1 determiner".into(),
            ));
        }
        if self.num_fillers == 0 {
            return Err(Error::Config("grammar needs at least one filler".into()));
        }
        if self.sentence_len < 4 {
            return Err(Error::Config("grammar.sentence_len must be at least 4".into()));
        }
        for (name, p) in [("content_prob", self.content_prob), ("switch_prob", self.switch_prob)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("grammar.{name} must lie in [0, 1]")));
            }
        }
        if self.content_prob == 0.0 {
            return Err(Error::Config("grammar.content_prob must be positive".into()));
        }
        Ok(())
    }

    fn determiner_base(&self) -> usize {
        NUM_SPECIAL + self.num_topics * self.nouns_per_topic
    }

    fn filler_base(&self) -> usize {
        self.determiner_base() + self.num_determiners
    }

    pub fn vocab_size(&self) -> usize {
        self.filler_base() + self.num_fillers
    }

    pub fn noun(&self, topic: usize, index: usize) -> usize {
        NUM_SPECIAL + topic * self.nouns_per_topic + index
    }

    pub fn determiner_for(&self, noun_index: usize) -> usize {
        self.determiner_base() + noun_index % self.num_determiners
    }

    pub fn filler(&self, index: usize) -> usize {
        self.filler_base() + index
    }

    pub fn role(&self, token: usize) -> TokenRole {
        if token < NUM_SPECIAL {
            TokenRole::Special
        } else if token < self.determiner_base() {
            let off = token - NUM_SPECIAL;
            TokenRole::Noun {
                topic: off / self.nouns_per_topic,
                index: off % self.nouns_per_topic,
            }
        } else if token < self.filler_base() {
            TokenRole::Determiner(token - self.determiner_base())
        } else {
            TokenRole::Filler
        }
    }

    /// Length of the first half of a sentence of `len` tokens.
    pub fn split_point(len: usize) -> usize {
        len / 2
    }

    /// One half-sentence of exactly `len` tokens on `topic`, containing at
    /// least one noun.
    pub fn gen_half(&self, topic: usize, len: usize, rng: &mut RngStream) -> Vec<usize> {
        assert!(len >= 2, "a half needs room for one determiner-noun pair");
        loop {
            let mut out = Vec::with_capacity(len);
            let mut pairs = 0;
            while out.len() < len {
                let room = len - out.len();
                if room >= 2 && rng.bernoulli(self.content_prob) {
                    let idx = rng.below(self.nouns_per_topic);
                    out.push(self.determiner_for(idx));
                    out.push(self.noun(topic, idx));
                    pairs += 1;
                } else {
                    out.push(self.filler(rng.below(self.num_fillers)));
                }
            }
            if pairs > 0 {
                return out;
            }
        }
    }

    /// A sentence whose halves are on `first` and `second`.
    pub fn gen_sentence(
        &self,
        first: usize,
        second: usize,
        len: usize,
        rng: &mut RngStream,
    ) -> Vec<usize> {
        let cut = Self::split_point(len);
        let mut s = self.gen_half(first, cut, rng);
        s.extend(self.gen_half(second, len - cut, rng));
        s
    }

    /// A second topic different from `topic`, uniformly.
    pub fn other_topic(&self, topic: usize, rng: &mut RngStream) -> usize {
        let r = rng.below(self.num_topics - 1);
        if r >= topic {
            r + 1
        } else {
            r
        }
    }

    /// The topic shared by all nouns in `tokens`, or `None` if there are no
    /// nouns or they disagree.
    pub fn topic_of(&self, tokens: &[usize]) -> Option<usize> {
        let mut topics = tokens.iter().filter_map(|&t| match self.role(t) {
            TokenRole::Noun { topic, .. } => Some(topic),
            _ => None,
        });
        let first = topics.next()?;
        topics.all(|t| t == first).then_some(first)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn agreement_holds_in_generated_halves() {
        let g = GrammarParams::default();
        let mut rng = RngStream::new(1, "t");
        for _ in 0..200 {
            let half = g.gen_half(2, 7, &mut rng);
            assert_eq!(half.len(), 7);
            for w in half.windows(2) {
                if let TokenRole::Noun { index, topic } = g.role(w[1]) {
                    assert_eq!(topic, 2);
                    assert_eq!(w[0], g.determiner_for(index));
                }
            }
            assert_eq!(g.topic_of(&half), Some(2));
        }
    }

    #[test]
    fn topic_of_rejects_mixed_or_empty() {
        let g = GrammarParams::default();
        assert_eq!(g.topic_of(&[g.noun(1, 0), g.filler(0), g.noun(2, 3)]), None);
        assert_eq!(g.topic_of(&[g.filler(0), g.filler(1)]), None);
        assert_eq!(g.topic_of(&[g.determiner_for(4), g.noun(3, 4)]), Some(3));
    }

    #[test]
    fn reserved_ids_never_generated() {
        let g = GrammarParams::default();
        let mut rng = RngStream::new(2, "t");
        for _ in 0..100 {
            let s = g.gen_sentence(0, 3, g.sentence_len, &mut rng);
            assert!(s.iter().all(|&t| t >= NUM_SPECIAL && t < g.vocab_size()));
        }
    }

    #[test]
    fn other_topic_differs() {
        let g = GrammarParams::default();
        let mut rng = RngStream::new(3, "t");
        for t in 0..g.num_topics {
            for _ in 0..20 {
                assert_ne!(g.other_topic(t, &mut rng), t);
            }
        }
    }

    #[test]
    fn invalid_params_rejected() {
        let bad = [
            GrammarParams { num_topics: 1, ..Default::default() },
            GrammarParams { num_fillers: 0, ..Default::default() },
            GrammarParams { sentence_len: 3, ..Default::default() },
            GrammarParams { switch_prob: 1.5, ..Default::default() },
            GrammarParams { content_prob: 0.0, ..Default::default() },
        ];
        for g in bad {
            assert!(g.validate().is_err(), "{g:?}");
        }
    }
}
