//! Planted-topic corpus generator for end-to-end checks.
//!
//! Each topic has its own vocabulary and its own experts. Within a topic
//! a few experts are prolific and talk broadly about the topic, the rest
//! are niche experts with a handful of quotes and personal signature terms.
//! Categories encode topic and sub-group, so clustering sources by category
//! recovers the planted groups.

use std::collections::BTreeMap;

use chrono::{DateTime, Duration, TimeZone, Utc};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Map;

use crate::corpus::QuoteRecord;
use crate::evaluation::Qrels;

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticConfig {
    pub n_topics: usize,
    pub experts_per_topic: usize,
    pub prolific_per_topic: usize,
    pub groups_per_topic: usize,
    pub topic_vocab: usize,
    pub group_vocab: usize,
    /// Probability that a topical word comes from the expert's group vocabulary.
    pub group_share: f64,
    pub signature_terms: usize,
    pub common_vocab: usize,
    pub prolific_docs: usize,
    pub niche_docs: usize,
    pub queries_per_expert: usize,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            n_topics: 20,
            experts_per_topic: 10,
            prolific_per_topic: 2,
            groups_per_topic: 2,
            topic_vocab: 20,
            group_vocab: 20,
            group_share: 0.75,
            signature_terms: 2,
            common_vocab: 60,
            prolific_docs: 24,
            niche_docs: 3,
            queries_per_expert: 1,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticExpert {
    pub entity: String,
    pub surface: String,
    pub topic: usize,
    pub group: usize,
    pub prolific: bool,
    pub ontology_classes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCorpus {
    pub experts: Vec<SyntheticExpert>,
    /// Indexed quotes, all published before the held-out period.
    pub train: Vec<QuoteRecord>,
    /// Held-out quotes whose titles serve as queries.
    pub test: Vec<QuoteRecord>,
}

impl SyntheticCorpus {
    /// The planted source of every held-out record.
    pub fn qrels(&self) -> Qrels {
        Qrels {
            relevant: self
                .test
                .iter()
                .map(|r| (r.record_id.clone(), r.source_entity.clone()))
                .collect(),
        }
    }

    /// Ontology classes per source, as input to relaxed clustering.
    pub fn source_categories(&self) -> BTreeMap<String, Vec<String>> {
        self.experts
            .iter()
            .map(|e| (e.entity.clone(), e.ontology_classes.clone()))
            .collect()
    }
}

fn topic_term(topic: usize, j: usize) -> String {
    format!("topic{topic}term{j}")
}

fn group_term(topic: usize, group: usize, j: usize) -> String {
    format!("topic{topic}group{group}term{j}")
}

fn signature_term(topic: usize, expert: usize, j: usize) -> String {
    format!("t{topic}e{expert}sig{j}")
}

fn common_term(j: usize) -> String {
    format!("common{j}")
}

struct Generator<'a> {
    cfg: &'a SyntheticConfig,
    rng: ChaCha8Rng,
}

impl Generator<'_> {
    fn pick_topic(&mut self, expert: &SyntheticExpert, n: usize) -> Vec<String> {
        (0..n)
            .map(|_| {
                if self.rng.random_bool(self.cfg.group_share) {
                    group_term(expert.topic, expert.group, self.rng.random_range(0..self.cfg.group_vocab))
                } else {
                    topic_term(expert.topic, self.rng.random_range(0..self.cfg.topic_vocab))
                }
            })
            .collect()
    }

    fn pick_signature(&mut self, topic: usize, expert: usize, n: usize) -> Vec<String> {
        (0..n)
            .map(|_| signature_term(topic, expert, self.rng.random_range(0..self.cfg.signature_terms)))
            .collect()
    }

    fn pick_common(&mut self, n: usize) -> Vec<String> {
        (0..n)
            .map(|_| common_term(self.rng.random_range(0..self.cfg.common_vocab)))
            .collect()
    }

    fn shuffle_join(&mut self, mut words: Vec<String>) -> String {
        use rand::seq::SliceRandom;
        words.shuffle(&mut self.rng);
        words.join(" ")
    }

    /// Quote text: niche experts mix signature and topic terms, prolific
    /// experts mostly use topic terms.
    fn quote_words(&mut self, expert: &SyntheticExpert, index: usize) -> Vec<String> {
        let mut words = if expert.prolific {
            let mut w = self.pick_topic(expert, 6);
            w.extend(self.pick_signature(expert.topic, index, 1));
            w
        } else {
            let mut w = self.pick_signature(expert.topic, index, 2);
            w.extend(self.pick_topic(expert, 3));
            w
        };
        words.extend(self.pick_common(2));
        words
    }

    fn title(&mut self, expert: &SyntheticExpert, index: usize) -> String {
        let mut words = if expert.prolific {
            self.pick_topic(expert, 8)
        } else {
            let mut w = self.pick_signature(expert.topic, index, 2);
            w.extend(self.pick_topic(expert, 4));
            w
        };
        words.extend(self.pick_common(2));
        self.shuffle_join(words)
    }

    fn record(
        &mut self,
        id: String,
        expert: &SyntheticExpert,
        index: usize,
        published_at: DateTime<Utc>,
    ) -> QuoteRecord {
        let words = self.quote_words(expert, index);
        let quote = self.shuffle_join(words);
        let left = self.pick_topic(expert, 3).join(" ");
        let right = self.pick_common(3).join(" ");
        let keywords = self.pick_topic(expert, 6);
        let title = self.title(expert, index);
        let verb = ["said", "told", "explained", "added"].choose(&mut self.rng).copied().unwrap_or("said");
        QuoteRecord {
            record_id: id,
            left_sentence: format!("Reports covered {left}."),
            main_sentence: format!("{} {verb} \"{quote}\".", expert.surface),
            right_sentence: format!("Coverage continued with {right}."),
            quote,
            source_surface: expert.surface.clone(),
            source_entity: expert.entity.clone(),
            ontology_classes: expert.ontology_classes.clone(),
            keywords,
            summary_first_sentence: format!("{title}."),
            title,
            categories: vec![format!("Topic{}", expert.topic)],
            news_source: "Synthetic Wire".into(),
            published_at,
            quote_type: Some(crate::corpus::QuoteType::Direct),
            extra: Map::new(),
        }
    }
}

pub fn generate(cfg: &SyntheticConfig) -> SyntheticCorpus {
    let mut gen = Generator {
        cfg,
        rng: ChaCha8Rng::seed_from_u64(cfg.seed),
    };
    let mut experts = Vec::new();
    for topic in 0..cfg.n_topics {
        for e in 0..cfg.experts_per_topic {
            let group = e % cfg.groups_per_topic.max(1);
            experts.push(SyntheticExpert {
                entity: format!("http://dbpedia.org/resource/Expert_T{topic}_E{e}"),
                surface: format!("Analyst{topic}x{e}"),
                topic,
                group,
                prolific: e < cfg.prolific_per_topic,
                ontology_classes: vec![
                    "Person".into(),
                    format!("Topic{topic}Specialist"),
                    format!("Topic{topic}Group{group}"),
                ],
            });
        }
    }

    let train_start = Utc.with_ymd_and_hms(2020, 1, 1, 0, 0, 0).single().expect("valid date");
    let test_start = Utc.with_ymd_and_hms(2020, 7, 1, 0, 0, 0).single().expect("valid date");
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (x, expert) in experts.iter().enumerate() {
        let index = x % cfg.experts_per_topic;
        let n_docs = if expert.prolific { cfg.prolific_docs } else { cfg.niche_docs };
        for d in 0..n_docs {
            let at = train_start + Duration::hours(gen.rng.random_range(0..3000));
            train.push(gen.record(format!("train-{x:04}-{d:03}"), expert, index, at));
        }
        for q in 0..cfg.queries_per_expert {
            let at = test_start + Duration::hours(gen.rng.random_range(0..1000));
            test.push(gen.record(format!("test-{x:04}-{q:02}"), expert, index, at));
        }
    }
    SyntheticCorpus { experts, train, test }
}
