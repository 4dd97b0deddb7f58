//! Template-based synthetic persona corpus.
//!
//! Produces raw records in the same shape as the real corpus so the whole
//! pipeline can run end to end without it. Extraction-style records plant
//! the tail in the utterance; inference-style records paraphrase it away.
//! A fraction of fillers is held out of the training split so evaluation
//! sees unseen entities.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::dataset::RawRecord;
use crate::error::Result;
use crate::triple::Split;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    pub seed: u64,
    pub train: usize,
    pub dev: usize,
    pub test: usize,
    /// Share of records whose tail is paraphrased away.
    pub inference_share: f64,
    /// Probability of appending a distractor clause.
    pub distractor_rate: f64,
    /// Share of records with a placeholder or under-specified annotation.
    pub junk_rate: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self { seed: 7, train: 2000, dev: 300, test: 300, inference_share: 0.3, distractor_rate: 0.35, junk_rate: 0.02 }
    }
}

struct Frame {
    relation: &'static str,
    templates: &'static [&'static str],
    fillers: &'static [&'static str],
}

const FRAMES: &[Frame] = &[
    Frame {
        relation: "have_pet",
        templates: &[
            "i have a {} named max",
            "my {} sleeps on my bed every night",
            "we adopted a {} last spring",
            "i take my {} for a walk after work",
            "i got a {} for my birthday",
        ],
        fillers: &["dog", "cat", "parrot", "hamster", "golden retriever", "rabbit", "turtle", "goldfish", "bearded dragon", "pony"],
    },
    Frame {
        relation: "like_food",
        templates: &[
            "i love eating {}",
            "{} is my favorite thing to eat",
            "i could eat {} every single day",
            "nothing beats a plate of {}",
            "my favorite food is {}",
        ],
        fillers: &["pizza", "sushi", "pasta", "tacos", "ice cream", "fried chicken", "steak", "pancakes", "mac and cheese", "burritos"],
    },
    Frame {
        relation: "dislike",
        templates: &["i hate {}", "i can not stand {}", "i really do not like {}", "{} makes me sick"],
        fillers: &["pizza", "broccoli", "spiders", "rain", "country music", "mushrooms", "snow", "traffic", "clowns", "olives"],
    },
    Frame {
        relation: "has_profession",
        templates: &[
            "i work as a {}",
            "i am a {} at the local hospital",
            "being a {} keeps me busy",
            "i have been a {} for ten years",
        ],
        fillers: &["nurse", "teacher", "accountant", "truck driver", "chef", "lawyer", "firefighter", "software engineer", "cashier", "dentist"],
    },
    Frame {
        relation: "live_in_general",
        templates: &["i live in {}", "i moved to {} last year", "{} is where i call home", "i grew up and still live in {}"],
        fillers: &["texas", "chicago", "new york", "canada", "florida", "ohio", "london", "the city", "a small town", "california"],
    },
    Frame {
        relation: "like_music",
        templates: &["i listen to {} all day", "{} is the best music", "i love {} music", "i go to {} concerts"],
        fillers: &["rock", "jazz", "country", "hip hop", "classical", "pop", "metal", "blues", "reggae", "folk"],
    },
    Frame {
        relation: "like_sports",
        templates: &["i play {} on weekends", "i am on a {} team", "{} is my favorite sport", "i watch {} every sunday"],
        fillers: &["soccer", "basketball", "tennis", "football", "baseball", "golf", "hockey", "volleyball", "table tennis", "rugby"],
    },
    Frame {
        relation: "has_hobby",
        templates: &[
            "in my free time i enjoy {}",
            "{} is my favorite hobby",
            "i spend my weekends {}",
            "i picked up {} as a hobby",
        ],
        fillers: &["painting", "hiking", "knitting", "gardening", "fishing", "photography", "woodworking", "bird watching", "baking", "camping"],
    },
    Frame {
        relation: "marital_status",
        templates: &["i am {}", "i have been {} for years", "i am happily {}"],
        fillers: &["married", "single", "divorced", "engaged", "widowed"],
    },
    Frame {
        relation: "have_vehicle",
        templates: &["i drive a {}", "i just bought a new {}", "my {} broke down again"],
        fillers: &["truck", "minivan", "motorcycle", "sports car", "jeep", "bicycle", "convertible", "sedan"],
    },
];

/// Discourse openers; each multiplies the frame templates.
const OPENERS: &[&str] = &["", "well ", "honestly ", "you know , ", "oh ", "to be honest "];

/// Distinct sentence templates: frame templates times openers, plus the
/// fixed inference paraphrases.
pub fn template_count() -> usize {
    let frames: usize = FRAMES.iter().map(|f| f.templates.len()).sum();
    let paraphrases: usize = PARAPHRASES.iter().map(|p| p.sentences.len()).sum();
    frames * OPENERS.len() + paraphrases
}

/// Distractor clauses mention an entity of some other relation.
const DISTRACTORS: &[&str] = &[
    "but my brother has a {}",
    "and my sister likes {}",
    "while my neighbor lives in {}",
    "although my friend hates {}",
    "and my mom is a {}",
];
const DISTRACTOR_FILLERS: &[&str] = &["cat", "pasta", "ohio", "jazz", "nurse", "tennis", "snakes", "salad", "boston", "lizard"];

struct Paraphrase {
    relation: &'static str,
    tail: &'static str,
    sentences: &'static [&'static str],
}

const PARAPHRASES: &[Paraphrase] = &[
    Paraphrase {
        relation: "physical_attribute",
        tail: "short",
        sentences: &["i can never reach the top shelf", "i am barely five feet", "everyone in my class is taller than me", "i always stand in the front row for photos"],
    },
    Paraphrase {
        relation: "physical_attribute",
        tail: "tall",
        sentences: &["i am six foot five", "i always bump my head on door frames", "i can dunk a basketball easily", "people ask me how the weather is up there"],
    },
    Paraphrase {
        relation: "have_pet",
        tail: "dog",
        sentences: &["i walk my puppy every morning", "my pup barks at the mailman", "i buy chew toys every week", "my furry friend fetches the ball"],
    },
    Paraphrase {
        relation: "has_profession",
        tail: "teacher",
        sentences: &["i teach third grade", "i grade papers every night", "my students keep me young", "i spend my days in a classroom of kids"],
    },
    Paraphrase {
        relation: "has_profession",
        tail: "mechanic",
        sentences: &["i fix cars for a living", "i change oil and brakes all day", "my hands are always covered in grease at the garage"],
    },
    Paraphrase {
        relation: "has_profession",
        tail: "doctor",
        sentences: &["i treat patients at the clinic", "i went to medical school", "i see sick people all day"],
    },
    Paraphrase {
        relation: "like_read",
        tail: "books",
        sentences: &["i always have a novel in my bag", "i visit the library every week", "i finished three novels this month"],
    },
    Paraphrase {
        relation: "marital_status",
        tail: "married",
        sentences: &["my wife and i just celebrated ten years", "my husband cooks dinner every night", "i wear my wedding ring every day"],
    },
    Paraphrase {
        relation: "have_children",
        tail: "children",
        sentences: &["my kids keep me busy", "i drive my son to school", "my daughter just learned to walk", "my little ones are asleep"],
    },
    Paraphrase {
        relation: "like_activity",
        tail: "exercise",
        sentences: &["i go to the gym every day", "i run five miles each morning", "i lift weights after work"],
    },
    Paraphrase {
        relation: "job_status",
        tail: "unemployed",
        sentences: &["i lost my job last month", "i am looking for work", "i have been out of work for a while"],
    },
    Paraphrase {
        relation: "has_age",
        tail: "old",
        sentences: &["i just retired after forty years", "my grandkids visit on sundays", "i remember when tv was black and white"],
    },
    Paraphrase {
        relation: "live_in_general",
        tail: "farm",
        sentences: &["i milk the cows at dawn", "we grow corn and raise chickens", "i drive a tractor every morning"],
    },
    Paraphrase {
        relation: "school_status",
        tail: "college",
        sentences: &["i am studying for my finals", "my professor assigned a long paper", "i live in a dorm on campus"],
    },
];

/// Relation surface forms as annotators wrote them, mapped onto by the registry.
fn surface_relation(relation: &str, rng: &mut ChaCha8Rng) -> String {
    let alias = match relation {
        "like_food" => Some("favorite_food"),
        "like_music" => Some("favorite_music"),
        "like_sports" => Some("favorite_sport"),
        "live_in_general" => Some("live_in_citystatecountry"),
        _ => None,
    };
    match alias {
        Some(a) if rng.gen_bool(0.2) => a.to_string(),
        _ => relation.to_string(),
    }
}

/// Fillers with index divisible by 5 are reserved for dev and test.
fn filler_pool(fillers: &'static [&'static str], split: Split) -> Vec<&'static str> {
    fillers
        .iter()
        .enumerate()
        .filter(|(i, _)| split != Split::Train || i % 5 != 4)
        .map(|(_, f)| *f)
        .collect()
}

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(f) => f.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}

fn one(rng: &mut ChaCha8Rng, split: Split, cfg: &SyntheticConfig) -> (String, String, String, String) {
    if rng.gen_bool(cfg.inference_share) {
        let p = PARAPHRASES.choose(rng).unwrap();
        // the last paraphrase of each group only appears outside training
        let pool = if split == Split::Train && p.sentences.len() > 1 {
            &p.sentences[..p.sentences.len() - 1]
        } else {
            p.sentences
        };
        let sentence = pool.choose(rng).unwrap().to_string();
        return (sentence, "i".into(), surface_relation(p.relation, rng), p.tail.into());
    }
    let frame = FRAMES.choose(rng).unwrap();
    let filler = *filler_pool(frame.fillers, split).choose(rng).unwrap();
    let opener = OPENERS.choose(rng).unwrap();
    let mut sentence = format!("{opener}{}", frame.templates.choose(rng).unwrap().replace("{}", filler));
    if rng.gen_bool(cfg.distractor_rate) {
        let d = DISTRACTORS.choose(rng).unwrap();
        let f = DISTRACTOR_FILLERS.choose(rng).unwrap();
        sentence = format!("{sentence} {}", d.replace("{}", f));
    }
    if rng.gen_bool(0.3) {
        sentence = format!("{}.", capitalize(&sentence));
    }
    (sentence, "i".into(), surface_relation(frame.relation, rng), filler.into())
}

/// Generate raw records for all three splits.
pub fn generate(cfg: &SyntheticConfig) -> Vec<RawRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut out = Vec::new();
    for (split, n) in [(Split::Train, cfg.train), (Split::Dev, cfg.dev), (Split::Test, cfg.test)] {
        for i in 0..n {
            let (sentence, head, mut relation, mut tail) = one(&mut rng, split, cfg);
            if rng.gen_bool(cfg.junk_rate) {
                match rng.gen_range(0..3) {
                    0 => tail = "<blank>".into(),
                    1 => relation = "favorite".into(),
                    _ => relation = "others".into(),
                }
            }
            out.push(RawRecord {
                source_id: format!("{split}:{i}"),
                sentence: Some(sentence),
                head: Some(head),
                relation: Some(relation),
                tail: Some(tail),
                split,
            });
        }
    }
    out
}

/// Write one split as line-delimited `{id, sentence, triple}` objects.
pub fn write_split(path: &Path, records: &[RawRecord], split: Split) -> Result<()> {
    let rows = records.iter().filter(|r| r.split == split).enumerate().map(|(i, r)| {
        json!({
            "id": i,
            "sentence": r.sentence,
            "triple": [r.head, r.relation, r.tail],
        })
    });
    crate::io::write_jsonl(path, rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{build, read_raw_split};
    use crate::relation::RelationRegistry;

    #[test]
    fn at_least_two_hundred_templates() {
        assert!(template_count() >= 200, "{}", template_count());
    }

    #[test]
    fn deterministic_and_sized() {
        let cfg = SyntheticConfig { train: 50, dev: 10, test: 10, ..Default::default() };
        let a = generate(&cfg);
        assert_eq!(a, generate(&cfg));
        assert_eq!(a.len(), 70);
    }

    #[test]
    fn builds_both_tasks() {
        let reg = RelationRegistry::bundled();
        let records = generate(&SyntheticConfig::default());
        let built = build(&records, &reg, true).unwrap();
        assert!(built.extraction.len() > 500);
        assert!(built.inference.len() > 200);
        assert!(built.report.dropped.values().sum::<usize>() > 0);
    }

    #[test]
    fn every_relation_is_registered() {
        let reg = RelationRegistry::bundled();
        for f in FRAMES {
            assert!(reg.contains(&format!("[{}]", f.relation)), "{}", f.relation);
        }
        for p in PARAPHRASES {
            assert!(reg.contains(&format!("[{}]", p.relation)), "{}", p.relation);
        }
    }

    #[test]
    fn write_read_roundtrip() {
        let cfg = SyntheticConfig { train: 5, dev: 2, test: 2, ..Default::default() };
        let records = generate(&cfg);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("dev.jsonl");
        write_split(&path, &records, Split::Dev).unwrap();
        let back = read_raw_split(&path, Split::Dev).unwrap();
        let dev: Vec<_> = records.into_iter().filter(|r| r.split == Split::Dev).collect();
        assert_eq!(back, dev);
    }
}
