#![allow(dead_code)]

use sema::models::{ChannelMask, Family, ModelConfig, Seq2Seq};
use sema::semantics::{build_vocabularies, AnnotatedSentence, ParaphrasePair};

fn words(s: &str) -> Vec<String> {
    s.split_whitespace().map(String::from).collect()
}

pub fn sentence(tokens: &str, frames: &str, roles: &str) -> AnnotatedSentence {
    AnnotatedSentence::new(words(tokens), words(frames), words(roles)).unwrap()
}

pub fn pairs() -> Vec<ParaphrasePair> {
    vec![
        ParaphrasePair {
            src: sentence(
                "a man rides a horse",
                "O person /pb/ride-01 O animal",
                "O arg0 O O arg1",
            ),
            tgt: AnnotatedSentence::from_text("a horse is ridden by a man"),
        },
        ParaphrasePair {
            src: sentence("the dog chased cats", "O animal /pb/chase-01 animal", "O arg0 O arg1"),
            tgt: AnnotatedSentence::from_text("cats were chased by the dog"),
        },
        ParaphrasePair {
            src: sentence("two birds", "O animal", "O O"),
            tgt: AnnotatedSentence::from_text("a pair of birds"),
        },
    ]
}

/// Desk-scale configuration used by the gradient suite.
pub fn desk_config(family: Family) -> ModelConfig {
    let mut c = ModelConfig::for_family(family);
    c.model_dim = 64;
    c.hidden_dim = 64;
    c.num_blocks = 2;
    c.num_heads = 2;
    c.latent_dim = 16;
    c.seed = 3;
    c
}

/// A smaller configuration for fast behavioural tests.
pub fn tiny_config(family: Family) -> ModelConfig {
    let mut c = ModelConfig::for_family(family);
    c.model_dim = 16;
    c.hidden_dim = 16;
    c.num_blocks = 2;
    c.num_heads = 2;
    c.latent_dim = 4;
    c.dropout = 0.1;
    c.seed = 11;
    c
}

pub fn model(config: ModelConfig) -> Seq2Seq {
    let vocabs = build_vocabularies(&pairs(), 1).unwrap();
    Seq2Seq::new(config, vocabs).unwrap()
}

pub fn masked(family: Family, mask: ChannelMask) -> ModelConfig {
    let mut c = tiny_config(family);
    c.channel_mask = mask;
    c
}
