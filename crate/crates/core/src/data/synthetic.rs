//! Seeded generators for the toy downstream tasks and pre-training corpus.
//!
//! Text is pre-tokenized: punctuation is separated by spaces so whitespace
//! splitting yields BLEU tokens.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::examples::{linearize, DataRecord, SummaryPair};

const NAMES: &[&str] = &[
    "Blue Spice",
    "Aromi",
    "The Eagle",
    "Cotto",
    "Giraffe",
    "Zizzi",
    "The Mill",
    "Fitzbillies",
    "Loch Fyne",
    "The Punter",
    "Wildwood",
    "Strada",
    "Alimentum",
    "Bibimbap House",
    "The Phoenix",
    "Clowns",
    "Midsummer House",
    "The Vaults",
    "Browns Cambridge",
    "Green Man",
    "Taste of Cambridge",
    "The Olive Grove",
    "Travellers Rest",
    "The Golden Curry",
];
const FOODS: &[&str] = &[
    "French",
    "Italian",
    "Chinese",
    "Indian",
    "Japanese",
    "English",
    "Fast food",
];
const AREAS: &[&str] = &["city centre", "riverside"];
const PRICES: &[&str] = &[
    "cheap",
    "moderate",
    "high",
    "less than £20",
    "£20-25",
    "more than £30",
];
const RATINGS: &[&str] = &[
    "low",
    "average",
    "high",
    "1 out of 5",
    "3 out of 5",
    "5 out of 5",
];
const EAT_TYPES: &[&str] = &["restaurant", "coffee shop", "pub"];
const NEAR: &[&str] = &[
    "Café Sicilia",
    "Burger King",
    "The Bakers",
    "Raja Indian Cuisine",
    "All Bar One",
    "Café Rouge",
];

const FIRST: &[&str] = &[
    "Anna", "Ben", "Clara", "David", "Elena", "Frank", "Grace", "Henry", "Irene", "Jack", "Karen",
    "Liam", "Maria", "Noah", "Olivia", "Peter", "Rosa", "Sam", "Tara", "Victor",
];
const LAST: &[&str] = &[
    "Smith", "Jones", "Brown", "Taylor", "Wilson", "Evans", "Thomas", "Roberts", "Walker",
    "Wright", "Hughes", "Green", "Hall", "Wood", "Clarke",
];
const ROLES: &[&str] = &[
    "teacher", "farmer", "doctor", "baker", "painter", "nurse", "pilot", "lawyer", "chef",
    "engineer", "writer", "singer",
];
const TOWNS: &[&str] = &[
    "Leeds", "York", "Bath", "Derby", "Exeter", "Hull", "Oxford", "Durham", "Norwich", "Chester",
    "Bristol", "Lincoln",
];
const DAYS: &[&str] = &[
    "Monday",
    "Tuesday",
    "Wednesday",
    "Thursday",
    "Friday",
    "Saturday",
    "Sunday",
];
const EVENTS: &[&str] = &[
    "won a local award",
    "opened a new shop",
    "ran a marathon",
    "rescued a lost dog",
    "planted a community garden",
    "gave a public talk",
    "finished a long book",
    "raised money for charity",
    "painted the town hall",
    "met the mayor",
];
const FILLER: &[&str] = &[
    "the weather was mild and the streets were quiet .",
    "many people in the area enjoy walking by the river .",
    "the local council met to discuss new parking rules .",
    "a small market opens in the square every week .",
    "the library recently extended its opening hours .",
    "several new houses are being built near the station .",
    "the football club is looking for new volunteers .",
    "prices at the shops have risen slightly this year .",
    "the school held a music concert for the parents .",
    "a new bus route now links the town to the coast .",
];

fn pick<'a>(rng: &mut ChaCha8Rng, xs: &[&'a str]) -> &'a str {
    xs.choose(rng).expect("non-empty word list")
}

fn article(word: &str) -> &'static str {
    match word.chars().next().map(|c| c.to_ascii_lowercase()) {
        Some('a' | 'e' | 'i' | 'o' | 'u') => "an",
        _ => "a",
    }
}

fn record(rng: &mut ChaCha8Rng) -> DataRecord {
    let name = pick(rng, NAMES);
    let eat = pick(rng, EAT_TYPES);
    let mut fields = vec![
        ("name".to_string(), name.to_string()),
        ("eatType".to_string(), eat.to_string()),
    ];
    let optional: [(&str, &[&str]); 6] = [
        ("food", FOODS),
        ("priceRange", PRICES),
        ("customer rating", RATINGS),
        ("area", AREAS),
        ("familyFriendly", &["yes", "no"]),
        ("near", NEAR),
    ];
    for (key, values) in optional {
        if rng.random_bool(0.6) {
            fields.push((key.to_string(), pick(rng, values).to_string()));
        }
    }
    let get = |k: &str| fields.iter().find(|(f, _)| f == k).map(|(_, v)| v.as_str());
    let (food, price, rating, area, family, near) = (
        get("food"),
        get("priceRange"),
        get("customer rating"),
        get("area"),
        get("familyFriendly"),
        get("near"),
    );

    let mut a = format!("{name} is {} {eat}", article(eat));
    if let Some(f) = food {
        a += &format!(" serving {f} food");
    }
    if let Some(ar) = area {
        a += &format!(" in the {ar}");
    }
    if let Some(n) = near {
        a += &format!(" near {n}");
    }
    a += " .";
    if let Some(p) = price {
        a += &format!(" it has a {p} price range");
        if let Some(r) = rating {
            a += &format!(" and a {r} customer rating");
        }
        a += " .";
    } else if let Some(r) = rating {
        a += &format!(" it has a {r} customer rating .");
    }
    match family {
        Some("yes") => a += " it is family friendly .",
        Some(_) => a += " it is not family friendly .",
        None => {}
    }

    let mut b = String::new();
    if let Some(ar) = area {
        b += &format!("in the {ar}");
        if let Some(n) = near {
            b += &format!(" near {n}");
        }
        b += &format!(" there is {} {eat} called {name}", article(eat));
    } else {
        b += &format!("there is {} {eat} called {name}", article(eat));
        if let Some(n) = near {
            b += &format!(" near {n}");
        }
    }
    if let Some(f) = food {
        b += &format!(" that offers {f} food");
    }
    b += " .";
    if let Some(r) = rating {
        b += &format!(" customers rate it {r}");
        if let Some(p) = price {
            b += &format!(" and prices are {p}");
        }
        b += " .";
    } else if let Some(p) = price {
        b += &format!(" prices are {p} .");
    }
    match family {
        Some("yes") => b += " children are welcome .",
        Some(_) => b += " it is not suitable for children .",
        None => {}
    }

    let mut c = String::new();
    match family {
        Some("yes") => c += "the family friendly ",
        Some(_) => c += "the adult only ",
        None => c += "the ",
    }
    c += &format!("{eat} {name}");
    if let Some(f) = food {
        c += &format!(" provides {f} food");
    } else {
        c += " is open";
    }
    if let Some(p) = price {
        c += &format!(" at {p} prices");
    }
    if let Some(ar) = area {
        c += &format!(" in the {ar} area");
    }
    if let Some(n) = near {
        c += &format!(" close to {n}");
    }
    c += " .";
    if let Some(r) = rating {
        c += &format!(" its rating is {r} .");
    }

    DataRecord {
        fields,
        references: vec![a, b, c],
    }
}

/// `n` restaurant records, each with three reference descriptions.
pub fn restaurant_records(n: usize, seed: u64) -> Vec<DataRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| record(&mut rng)).collect()
}

fn summary_pair(rng: &mut ChaCha8Rng, n_filler: usize) -> SummaryPair {
    let first = pick(rng, FIRST);
    let last = pick(rng, LAST);
    let role = pick(rng, ROLES);
    let town = pick(rng, TOWNS);
    let day = pick(rng, DAYS);
    let event = pick(rng, EVENTS);
    let mut sentences: Vec<String> = (0..n_filler)
        .map(|_| pick(rng, FILLER).to_string())
        .collect();
    let intro = format!("{first} {last} is {} {role} from {town} .", article(role));
    let fact = format!("on {day} , {first} {event} .");
    let pos = rng.random_range(0..=sentences.len());
    sentences.insert(pos, fact);
    sentences.insert(0, intro);
    SummaryPair {
        document: sentences.join(" "),
        summary: format!(
            "{first} {last} , {} {role} from {town} , {event} on {day} .",
            article(role)
        ),
    }
}

/// `n` document/summary pairs. Each document has `n_filler` distractor sentences.
pub fn summarization_pairs(n: usize, n_filler: usize, seed: u64) -> Vec<SummaryPair> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| summary_pair(&mut rng, n_filler)).collect()
}

/// Unlabelled text mixing both task domains: descriptions, linearized records,
/// documents and summaries.
pub fn pretraining_corpus(n_docs: usize, n_filler: usize, seed: u64) -> Vec<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n_docs)
        .map(|i| match i % 4 {
            0 => {
                let r = record(&mut rng);
                let k = rng.random_range(0..r.references.len());
                r.references[k].clone()
            }
            1 => {
                let r = record(&mut rng);
                format!(
                    "{} {}",
                    linearize(&r.fields),
                    r.references.choose(&mut rng).expect("references")
                )
            }
            2 => summary_pair(&mut rng, n_filler).document,
            _ => {
                let p = summary_pair(&mut rng, n_filler);
                format!("{} {}", p.document, p.summary)
            }
        })
        .collect()
}

/// Train, validation and test splits of sizes ⌊0.8n⌋, ⌊0.1n⌋ and the rest.
pub fn split_80_10_10<T: Clone>(items: &[T]) -> (Vec<T>, Vec<T>, Vec<T>) {
    let n = items.len();
    let train = n * 8 / 10;
    let val = n / 10;
    (
        items[..train].to_vec(),
        items[train..train + val].to_vec(),
        items[train + val..].to_vec(),
    )
}
