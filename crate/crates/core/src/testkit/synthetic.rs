//! Synthetic restaurant-reservation dialogues in the bAbI Task 6 layout.
//!
//! The generator follows the same conversational flow as the real corpus
//! (greeting, slot questions, `api_call`, KB result lines, suggestions,
//! phone/address/post-code requests, goodbye) so parser, delexicalizer and
//! model code can be exercised end to end without the official files. The
//! knowledge base depends only on [`SyntheticConfig::kb_seed`], so splits
//! generated with different seeds share restaurants.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{Dialogue, KbFact, Turn};

const GREETING: &str = "Hello, welcome to the Cambridge restaurant system. You can ask for restaurants by area, price range or food type. How may I help you?";
const ASK_FOOD: &str = "What kind of food would you like?";
const ASK_AREA: &str = "What part of town do you have in mind?";
const ASK_PRICE: &str = "Would you like something in the cheap, moderate, or expensive price range?";
const ANYTHING_ELSE: &str = "Can I help you with anything else?";

const CUISINES: [&str; 10] =
    ["italian", "chinese", "indian", "thai", "british", "french", "spanish", "korean", "turkish", "european"];
const AREAS: [&str; 5] = ["north", "south", "east", "west", "centre"];
const PRICES: [&str; 3] = ["cheap", "moderate", "expensive"];
const FIRST: [&str; 8] = ["golden", "royal", "little", "red", "lucky", "old", "green", "silver"];
const SECOND: [&str; 8] = ["wok", "curry", "spice", "garden", "kitchen", "bistro", "dragon", "grill"];
const SINGLE: [&str; 6] = ["prezzo", "nandos", "meghna", "hakka", "cote", "eraina"];

#[derive(Clone, Debug)]
pub struct SyntheticConfig {
    pub restaurants: usize,
    pub kb_seed: u64,
    /// Probability of inserting a filler word into a user utterance.
    pub filler_prob: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig { restaurants: 40, kb_seed: 7, filler_prob: 0.1 }
    }
}

#[derive(Clone, Debug)]
pub struct Restaurant {
    pub name: String,
    pub cuisine: &'static str,
    pub area: &'static str,
    pub price: &'static str,
    pub rating: u32,
}

pub fn knowledge_base(cfg: &SyntheticConfig) -> Vec<Restaurant> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.kb_seed);
    let mut names: Vec<String> = SINGLE.iter().map(|s| s.to_string()).collect();
    for a in FIRST {
        for b in SECOND {
            names.push(if rng.random_bool(0.5) { format!("the_{a}_{b}") } else { format!("{a}_{b}") });
        }
    }
    names.shuffle(&mut rng);
    names
        .into_iter()
        .take(cfg.restaurants)
        .map(|name| Restaurant {
            name,
            cuisine: CUISINES.choose(&mut rng).copied().unwrap(),
            area: AREAS.choose(&mut rng).copied().unwrap(),
            price: PRICES.choose(&mut rng).copied().unwrap(),
            rating: rng.random_range(1..=10),
        })
        .collect()
}

struct Builder<'a> {
    rng: &'a mut ChaCha8Rng,
    filler_prob: f64,
    dialogue: Dialogue,
}

impl Builder<'_> {
    fn say(&mut self, user: &str, system: &str) {
        let user = if user != "<SILENCE>" && self.rng.random_bool(self.filler_prob) {
            let filler = ["uh", "um", "noise", "sil"].choose(self.rng).copied().unwrap();
            format!("{filler} {user}")
        } else {
            user.to_string()
        };
        self.dialogue.turns.push(Turn::new(user, system));
    }

    fn facts(&mut self, r: &Restaurant) {
        let position = self.dialogue.turns.len();
        let n = &r.name;
        for (rel, value) in [
            ("R_post_code", format!("{n}_post_code")),
            ("R_cuisine", r.cuisine.to_string()),
            ("R_location", r.area.to_string()),
            ("R_phone", format!("{n}_phone")),
            ("R_address", format!("{n}_address")),
            ("R_price", r.price.to_string()),
            ("R_rating", r.rating.to_string()),
        ] {
            self.dialogue.kb_facts.push(KbFact { entity: n.clone(), relation: rel.into(), value, position });
        }
    }
}

fn suggestion(r: &Restaurant, cuisine_given: bool) -> String {
    if cuisine_given {
        format!("{} is a nice restaurant in the {} of town serving {} food", r.name, r.area, r.cuisine)
    } else {
        format!("{} is a nice restaurant in the {} of town in the {} price range", r.name, r.area, r.price)
    }
}

fn request_phrase(rng: &mut impl Rng, cuisine: Option<&str>, area: Option<&str>, price: Option<&str>) -> String {
    let mut parts = vec![["i want", "im looking for", "i need"].choose(rng).copied().unwrap().to_string()];
    parts.push(match price {
        Some(p) => format!("a {p} restaurant"),
        None => "a restaurant".into(),
    });
    if let Some(a) = area {
        parts.push(format!("in the {a} part of town"));
    }
    if let Some(c) = cuisine {
        parts.push(format!("serving {c} food"));
    }
    parts.join(" ")
}

fn one_dialogue(rng: &mut ChaCha8Rng, kb: &[Restaurant], filler_prob: f64) -> Dialogue {
    let mut b = Builder { rng, filler_prob, dialogue: Dialogue::default() };
    b.say("<SILENCE>", GREETING);

    let mut want_cuisine = Some(*CUISINES.choose(b.rng).unwrap());
    let mut want_area = Some(*AREAS.choose(b.rng).unwrap());
    let mut want_price = Some(*PRICES.choose(b.rng).unwrap());
    // anchor most requests on a real restaurant so results are common
    if b.rng.random_bool(0.7) {
        let r = kb.choose(b.rng).unwrap();
        (want_cuisine, want_area, want_price) = (Some(r.cuisine), Some(r.area), Some(r.price));
    }
    let mut given = [b.rng.random_bool(0.5), b.rng.random_bool(0.5), b.rng.random_bool(0.5)];
    let mut first_user = request_phrase(
        b.rng,
        want_cuisine.filter(|_| given[0]),
        want_area.filter(|_| given[1]),
        want_price.filter(|_| given[2]),
    );

    let questions = [ASK_FOOD, ASK_AREA, ASK_PRICE];
    let mut pending_user = std::mem::take(&mut first_user);
    for slot in 0..3 {
        if given[slot] {
            continue;
        }
        b.say(&pending_user, questions[slot]);
        let dont_care = b.rng.random_bool(0.25);
        pending_user = if dont_care {
            ["any", "i dont care", "it doesnt matter"].choose(b.rng).unwrap().to_string()
        } else {
            let v = [want_cuisine, want_area, want_price][slot].unwrap();
            match slot {
                0 => format!("{v} food"),
                1 => v.to_string(),
                _ => format!("{v} price range"),
            }
        };
        if dont_care {
            match slot {
                0 => want_cuisine = None,
                1 => want_area = None,
                _ => want_price = None,
            }
        }
        given[slot] = true;
    }
    let api = format!(
        "api_call {} {} {}",
        want_cuisine.unwrap_or("R_cuisine"),
        want_area.unwrap_or("R_location"),
        want_price.unwrap_or("R_price")
    );
    b.say(&pending_user, &api);

    let mut matches: Vec<&Restaurant> = kb
        .iter()
        .filter(|r| want_cuisine.is_none_or(|c| c == r.cuisine))
        .filter(|r| want_area.is_none_or(|a| a == r.area))
        .filter(|r| want_price.is_none_or(|p| p == r.price))
        .collect();
    matches.sort_by(|a, b| b.rating.cmp(&a.rating).then(a.name.cmp(&b.name)));
    matches.truncate(3);

    if matches.is_empty() {
        let msg = format!(
            "Sorry there is no {} restaurant in the {} of town",
            want_cuisine.unwrap_or("matching"),
            want_area.unwrap_or("any part")
        );
        b.say("<SILENCE>", &msg);
        if b.rng.random_bool(0.5) {
            b.say("ok", ANYTHING_ELSE);
        }
        b.say("thank you good bye", "you are welcome");
        return b.dialogue;
    }
    for r in &matches {
        b.facts(r);
    }
    let cuisine_given = want_cuisine.is_some();
    let mut offered = 0;
    b.say("<SILENCE>", &suggestion(matches[0], cuisine_given));
    for _ in 0..b.rng.random_range(0..4) {
        let r = matches[offered];
        match b.rng.random_range(0..4) {
            0 => b.say("what is the phone number", &format!("The phone number of {} is {}_phone", r.name, r.name)),
            1 => b.say("whats the address", &format!("Sure, {} is on {}_address", r.name, r.name)),
            2 => b.say("and the post code", &format!("The post code of {} is {}_post_code", r.name, r.name)),
            _ => {
                if offered + 1 < matches.len() {
                    offered += 1;
                    let s = suggestion(matches[offered], cuisine_given);
                    b.say("is there anything else", &s);
                } else {
                    b.say("is there anything else", "you are looking at a great restaurant");
                }
            }
        }
    }
    b.say("thank you good bye", "you are welcome");
    b.dialogue
}

pub fn generate_split(cfg: &SyntheticConfig, dialogues: usize, seed: u64) -> Vec<Dialogue> {
    let kb = knowledge_base(cfg);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..dialogues).map(|_| one_dialogue(&mut rng, &kb, cfg.filler_prob)).collect()
}

/// Writes `train.txt`, `dev.txt` and `test.txt` in the bAbI format.
pub fn write_raw_splits(dir: &std::path::Path, cfg: &SyntheticConfig, sizes: [usize; 3]) -> std::io::Result<()> {
    std::fs::create_dir_all(dir)?;
    for (i, (name, n)) in ["train", "dev", "test"].iter().zip(sizes).enumerate() {
        let text = crate::data::serialize(&generate_split(cfg, n, 100 + i as u64));
        std::fs::write(dir.join(format!("{name}.txt")), text)?;
    }
    Ok(())
}
