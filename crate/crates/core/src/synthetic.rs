//! A small flight-domain grammar used for desk-scale experiments: three
//! intents, six slots, multi-word values and skewed value frequencies.

use indexmap::IndexSet;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::LabeledExample;

pub const INTENTS: [&str; 3] = ["find_flight", "airfare", "ground_service"];
pub const SLOTS: [&str; 6] = ["FromCity", "ToCity", "CityName", "DepartDay", "DepartPeriod", "Airline"];

const CITIES: &[&str] = &[
    "boston", "denver", "atlanta", "dallas", "pittsburgh", "baltimore", "philadelphia", "san francisco",
    "new york", "washington", "oakland", "seattle", "chicago", "miami", "houston", "detroit", "phoenix",
    "los angeles", "salt lake city", "kansas city", "las vegas", "st. louis", "new orleans", "cleveland",
    "memphis", "nashville", "orlando", "tampa", "san diego", "minneapolis", "fort worth", "charlotte",
    "indianapolis", "milwaukee", "columbus", "montreal", "toronto", "san jose", "long beach", "burbank",
    "st. petersburg", "new york city", "fort lauderdale", "palm springs", "santa barbara", "el paso",
    "grand rapids", "little rock", "oklahoma city", "san antonio", "colorado springs", "green bay",
    "west palm beach", "baton rouge", "jersey city", "sioux falls", "cedar rapids", "new haven",
    "santa fe", "st. paul",
];
const DAYS: &[&str] = &[
    "monday", "tuesday", "wednesday", "thursday", "friday", "saturday", "sunday", "tomorrow", "today",
    "next monday", "next friday", "this weekend", "the day after tomorrow",
];
const PERIODS: &[&str] = &[
    "morning", "afternoon", "evening", "night", "early morning", "late evening", "late night", "noon",
    "early afternoon", "late afternoon",
];
const AIRLINES: &[&str] = &[
    "united", "delta", "american airlines", "us air", "continental", "northwest", "twa", "alaska airlines",
    "southwest", "lufthansa", "air canada", "jetblue", "midwest express", "frontier",
];

const FILLERS: &[&str] = &["please", "uh", "i think", "um", "actually", "okay so", "hi"];

const FLIGHT: &[&str] = &[
    "flights arriving in {ToCity} from {FromCity} {DepartDay}",
    "i am leaving {FromCity} {DepartDay} and going to {ToCity}",
    "departing {FromCity} in the {DepartPeriod} going to {ToCity} on {Airline}",
    "show me flights from {FromCity} to {ToCity}",
    "i want to fly from {FromCity} to {ToCity} {DepartDay}",
    "list flights to {ToCity} from {FromCity} on {DepartDay}",
    "what flights go from {FromCity} to {ToCity} in the {DepartPeriod}",
    "i need a {Airline} flight from {FromCity} to {ToCity}",
    "find {Airline} flights leaving {FromCity} {DepartDay} {DepartPeriod} arriving in {ToCity}",
    "are there any flights to {ToCity} {DepartDay}",
    "show {Airline} flights out of {FromCity}",
    "please list the {DepartPeriod} flights from {FromCity} to {ToCity} on {DepartDay}",
    "flights from {FromCity} to {ToCity} on {Airline}",
    "i would like to go to {ToCity} from {FromCity} {DepartDay} in the {DepartPeriod}",
    "which flights leave {FromCity} for {ToCity}",
];
const FARE: &[&str] = &[
    "fares from {FromCity} to {ToCity} leaving {DepartDay} {DepartPeriod}",
    "what does a {Airline} ticket to {ToCity} cost",
    "how much is a flight from {FromCity} to {ToCity}",
    "what is the fare from {FromCity} to {ToCity} on {Airline}",
    "show me the cheapest fare to {ToCity} from {FromCity}",
    "what are the fares for flights to {ToCity} {DepartDay}",
    "how much does {Airline} charge to fly from {FromCity} to {ToCity}",
    "list round trip fares from {FromCity} to {ToCity} on {DepartDay} {DepartPeriod}",
    "what is the lowest fare from {FromCity}",
    "give me the price of a {DepartPeriod} ticket from {FromCity} to {ToCity}",
];
const GROUND: &[&str] = &[
    "when i arrive in {CityName} {DepartDay} how do i get to the city",
    "rental cars at the {CityName} airport in the {DepartPeriod}",
    "what ground transportation is available in {CityName}",
    "is there a limousine service in {CityName}",
    "show me car rentals in {CityName} {DepartDay}",
    "how do i get downtown from the airport in {CityName}",
    "what kind of ground transportation is there at {CityName} airport in the {DepartPeriod}",
    "i need a taxi in {CityName}",
    "list ground transportation in {CityName} on {DepartDay}",
    "can i take a bus from the {CityName} airport",
];

/// Index drawn with probability proportional to `(rank + 1)^-1.2`.
fn zipf<R: Rng>(n: usize, rng: &mut R) -> usize {
    let weight = |k: usize| ((k + 1) as f64).powf(-1.2);
    let total: f64 = (0..n).map(weight).sum();
    let mut u = rng.gen::<f64>() * total;
    for k in 0..n {
        u -= weight(k);
        if u <= 0.0 {
            return k;
        }
    }
    n - 1
}

fn fill<R: Rng>(template: &str, intent: &str, rng: &mut R) -> LabeledExample {
    let mut tokens = Vec::new();
    let mut tags = Vec::new();
    let mut from: Option<usize> = None;
    let mut words: Vec<&str> = template.split_whitespace().collect();
    if rng.gen_bool(0.3) {
        let f = FILLERS[rng.gen_range(0..FILLERS.len())];
        let at = if rng.gen_bool(0.5) { 0 } else { words.len() };
        words.splice(at..at, f.split(' '));
    }
    for word in words {
        let Some(slot) = word.strip_prefix('{').and_then(|w| w.strip_suffix('}')) else {
            tokens.push(word.to_string());
            tags.push("O".to_string());
            continue;
        };
        let value = match slot {
            "FromCity" | "ToCity" | "CityName" => {
                // Origin and destination differ.
                let mut i = zipf(CITIES.len(), rng);
                while Some(i) == from {
                    i = zipf(CITIES.len(), rng);
                }
                if slot == "FromCity" {
                    from = Some(i);
                }
                CITIES[i]
            }
            "DepartDay" => DAYS[zipf(DAYS.len(), rng)],
            "DepartPeriod" => PERIODS[zipf(PERIODS.len(), rng)],
            "Airline" => AIRLINES[zipf(AIRLINES.len(), rng)],
            other => unreachable!("unknown slot {other}"),
        };
        for (k, w) in value.split(' ').enumerate() {
            tokens.push(w.to_string());
            tags.push(format!("{}-{slot}", if k == 0 { "B" } else { "I" }));
        }
    }
    LabeledExample::new(tokens, tags, intent)
}

/// `n` distinct labeled sentences, generated deterministically from `seed`.
/// Intents are drawn 5 : 3 : 2.
pub fn generate(n: usize, seed: u64) -> Vec<LabeledExample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = IndexSet::with_capacity(n);
    let mut attempts = 0;
    while out.len() < n && attempts < 100 * n.max(1) {
        attempts += 1;
        let (intent, templates) = match rng.gen_range(0..10) {
            0..=4 => (INTENTS[0], FLIGHT),
            5..=7 => (INTENTS[1], FARE),
            _ => (INTENTS[2], GROUND),
        };
        let t = templates.choose(&mut rng).expect("templates");
        out.insert(fill(t, intent, &mut rng));
    }
    out.into_iter().collect()
}

/// Train, validation and test partitions of [`generate`] in proportion
/// 70 : 15 : 15.
pub fn splits(n: usize, seed: u64) -> (Vec<LabeledExample>, Vec<LabeledExample>, Vec<LabeledExample>) {
    let mut all = generate(n, seed);
    let test = all.split_off(all.len() * 85 / 100);
    let valid = all.split_off(all.len() * 70 / 85);
    (all, valid, test)
}
