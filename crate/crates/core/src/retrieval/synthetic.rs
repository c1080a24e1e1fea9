//! Seeded synthetic benchmark: ambiguous topic queries whose facets are
//! identified only by facet-specific terms in the relevant documents.

use std::collections::BTreeSet;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::Qrels;
use crate::corpus::{InformationNeed, QAExample};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SyntheticConfig {
    pub seed: u64,
    pub topics: usize,
    pub facets_per_topic: usize,
    pub relevant_per_facet: usize,
    /// Documents sharing no facet or topic vocabulary.
    pub noise_docs: usize,
    pub questions_per_need: usize,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self { seed: 17, topics: 8, facets_per_topic: 3, relevant_per_facet: 4, noise_docs: 24, questions_per_need: 2 }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticBenchmark {
    pub documents: Vec<(String, String)>,
    pub examples: Vec<QAExample>,
    pub qrels: Qrels,
}

impl SyntheticBenchmark {
    pub fn needs(&self) -> BTreeSet<String> {
        self.examples.iter().map(|e| e.need.key().qid()).collect()
    }
}

const CONSONANTS: &[u8] = b"bdfgklmnprstvz";
const VOWELS: &[u8] = b"aeiou";

fn pseudo_word(rng: &mut ChaCha8Rng, used: &mut BTreeSet<String>) -> String {
    loop {
        let mut w = String::new();
        for _ in 0..3 {
            w.push(*CONSONANTS.choose(rng).expect("non-empty") as char);
            w.push(*VOWELS.choose(rng).expect("non-empty") as char);
        }
        if used.insert(w.clone()) {
            return w;
        }
    }
}

pub fn generate(cfg: &SyntheticConfig) -> SyntheticBenchmark {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut used = BTreeSet::new();
    let filler: Vec<String> = (0..60).map(|_| pseudo_word(&mut rng, &mut used)).collect();
    let mut texts: Vec<(String, Option<(usize, usize)>)> = Vec::new();
    let mut needs = Vec::new();
    for t in 0..cfg.topics {
        let topic: Vec<String> = (0..2).map(|_| pseudo_word(&mut rng, &mut used)).collect();
        let facets: Vec<Vec<String>> =
            (0..cfg.facets_per_topic).map(|_| (0..3).map(|_| pseudo_word(&mut rng, &mut used)).collect()).collect();
        for (f, words) in facets.iter().enumerate() {
            for _ in 0..cfg.relevant_per_facet {
                let mut doc: Vec<String> = topic.clone();
                if rng.random_bool(0.5) {
                    doc.push(topic[rng.random_range(0..2)].clone());
                }
                let k = rng.random_range(2..=3);
                doc.extend(words.choose_multiple(&mut rng, k).cloned());
                let n_fill = rng.random_range(6..=14);
                doc.extend((0..n_fill).map(|_| filler.choose(&mut rng).expect("non-empty").clone()));
                doc.shuffle(&mut rng);
                texts.push((doc.join(" "), Some((t, f))));
            }
        }
        needs.push((topic, facets));
    }
    for _ in 0..cfg.noise_docs {
        let n = rng.random_range(8..=16);
        let doc: Vec<String> = (0..n).map(|_| filler.choose(&mut rng).expect("non-empty").clone()).collect();
        texts.push((doc.join(" "), None));
    }

    let mut ids: Vec<usize> = (0..texts.len()).collect();
    ids.shuffle(&mut rng);
    let mut qrels = Qrels::new();
    let mut documents = Vec::with_capacity(texts.len());
    for (i, (text, owner)) in texts.into_iter().enumerate() {
        let id = format!("doc-{:04}", ids[i]);
        if let Some((t, f)) = owner {
            qrels.insert(format!("{}-F{}", t + 1, f + 1), id.clone(), 1);
        }
        documents.push((id, text));
    }
    let mut examples = Vec::new();
    for (t, f) in (0..cfg.topics).flat_map(|t| (0..cfg.facets_per_topic).map(move |f| (t, f))) {
        let (topic, facets) = &needs[t];
        let query = topic.join(" ");
        let own = &facets[f];
        let need = InformationNeed::new(
            &(t + 1).to_string(),
            &format!("F{}", f + 1),
            &query,
            &format!("find {query} about {}", own.join(" ")),
        )
        .expect("generated fields are non-empty");
        for _ in 0..cfg.questions_per_need {
            let asked = rng.random_range(0..cfg.facets_per_topic);
            let probe = &facets[asked];
            let question = format!("are you interested in {} {}?", probe[0], probe[1]);
            let answer = if asked == f {
                format!("yes, {}", own.join(" "))
            } else {
                format!("no, i want {} {}", own[0], own[1])
            };
            examples.push(QAExample::new(need.clone(), &question, &answer).expect("generated fields are non-empty"));
        }
    }
    SyntheticBenchmark { documents, examples, qrels }
}
