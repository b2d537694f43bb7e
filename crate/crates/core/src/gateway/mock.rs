//! Scripted offline backend.
//!
//! Output is a pure function of the backend seed and the request (prompts,
//! request seed, step tag, sample index), so seeded pipeline runs are
//! reproducible. Background texts are lists of records such as
//! `Posting 1 - Position: Data Analyst; Salary: 58,000 USD.`, and table
//! generation reads those records back, so mock tables are faithful to mock
//! texts unless a defect is injected.
//!
//! Defects are drawn per completion at the configured rates and counted, so
//! tests can compare filter rejections against the number of injections.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{ChatBackend, ChatRequest, GatewayError, PromptStep};
use crate::table::Table;
use crate::util::StableHasher;

/// Per-completion probabilities of emitting a defective output.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MockDefects {
    /// Table output with no table at all.
    pub malformed_table: f64,
    /// Table with columns the instruction did not ask for.
    pub extra_headers: f64,
    /// Table with at least four cells replaced by `N/A`.
    pub missing_cells: f64,
    /// Paraphrase output with one line too many.
    pub paraphrase_miscount: f64,
    /// Empty background text.
    pub empty_text: f64,
}

#[derive(Debug, Default)]
struct Counters {
    malformed_table: AtomicUsize,
    extra_headers: AtomicUsize,
    missing_cells: AtomicUsize,
    paraphrase_miscount: AtomicUsize,
    empty_text: AtomicUsize,
}

/// How many defects of each kind have been emitted so far.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct InjectionCounts {
    pub malformed_table: usize,
    pub extra_headers: usize,
    pub missing_cells: usize,
    pub paraphrase_miscount: usize,
    pub empty_text: usize,
}

#[derive(Debug, Clone)]
pub struct MockBackend {
    seed: u64,
    defects: MockDefects,
    counters: Arc<Counters>,
}

impl MockBackend {
    pub fn new(seed: u64) -> Self {
        Self::with_defects(seed, MockDefects::default())
    }

    pub fn with_defects(seed: u64, defects: MockDefects) -> Self {
        Self { seed, defects, counters: Arc::default() }
    }

    pub fn injections(&self) -> InjectionCounts {
        let c = &self.counters;
        InjectionCounts {
            malformed_table: c.malformed_table.load(Ordering::SeqCst),
            extra_headers: c.extra_headers.load(Ordering::SeqCst),
            missing_cells: c.missing_cells.load(Ordering::SeqCst),
            paraphrase_miscount: c.paraphrase_miscount.load(Ordering::SeqCst),
            empty_text: c.empty_text.load(Ordering::SeqCst),
        }
    }

    fn rng_for(&self, req: &ChatRequest, step: PromptStep, sample: u32) -> ChaCha8Rng {
        let mut h = StableHasher::new();
        h.write_u64(self.seed);
        h.write_u64(req.seed.unwrap_or(0));
        h.write_str(step.as_str());
        h.write_str(&req.system_prompt);
        h.write_str(&req.user_prompt);
        h.write_u64(u64::from(sample));
        ChaCha8Rng::seed_from_u64(h.finish())
    }

    fn inject(&self, rng: &mut ChaCha8Rng, rate: f64, counter: &AtomicUsize) -> bool {
        // Always draw so the content stream does not depend on the rate.
        let hit = rng.random::<f64>() < rate;
        if hit {
            counter.fetch_add(1, Ordering::SeqCst);
        }
        hit
    }

    fn sample(&self, req: &ChatRequest, step: PromptStep, idx: u32) -> String {
        let mut rng = self.rng_for(req, step, idx);
        let prompt = req.user_prompt.as_str();
        match step {
            PromptStep::FixedInstructionGen => fixed_instructions(&mut rng),
            PromptStep::BackgroundTextGen => {
                let empty = self.inject(&mut rng, self.defects.empty_text, &self.counters.empty_text);
                if empty {
                    return String::new();
                }
                let instruction = query_fields(prompt, &["Instruction"]).map_or("", |f| f[0]);
                background_text(&mut rng, instruction)
            }
            PromptStep::OpenInstructionGen => OPEN_PHRASES.choose(&mut rng).unwrap().to_string(),
            PromptStep::Paraphrase => {
                let extra = self.inject(&mut rng, self.defects.paraphrase_miscount, &self.counters.paraphrase_miscount);
                paraphrase(&mut rng, prompt, extra)
            }
            PromptStep::TableGenDirect | PromptStep::TableGenCot => {
                let malformed = self.inject(&mut rng, self.defects.malformed_table, &self.counters.malformed_table);
                let extra = self.inject(&mut rng, self.defects.extra_headers, &self.counters.extra_headers);
                let missing = self.inject(&mut rng, self.defects.missing_cells, &self.counters.missing_cells);
                let (instruction, text) = match query_fields(prompt, &["Instruction", "Text"]) {
                    Some(f) => (f[0], f[1]),
                    None => ("", ""),
                };
                let cot = step == PromptStep::TableGenCot;
                if malformed {
                    return malformed_output(cot);
                }
                table_output(&mut rng, instruction, text, cot, extra, missing)
            }
        }
    }
}

impl ChatBackend for MockBackend {
    fn complete(&self, req: &ChatRequest) -> Result<Vec<String>, GatewayError> {
        let step = req
            .step
            .ok_or_else(|| GatewayError::InvalidRequest("mock backend needs the request's prompt step".into()))?;
        Ok((0..req.n_samples).map(|i| self.sample(req, step, i)).collect())
    }
}

struct Topic {
    domain: &'static str,
    /// Plural text types, e.g. "job postings".
    kinds: &'static [&'static str],
    record: &'static str,
    fields: &'static [(&'static str, &'static [&'static str])],
}

const TOPICS: &[Topic] = &[
    Topic {
        domain: "recruitment",
        kinds: &["job postings", "job advertisements"],
        record: "Posting",
        fields: &[
            (
                "Position",
                &[
                    "Data Analyst",
                    "Warehouse Supervisor",
                    "Backend Engineer",
                    "Nurse Practitioner",
                    "Sales Manager",
                    "Graphic Designer",
                ],
            ),
            ("Salary", &["58,000 USD", "34,000 GBP", "92,000 EUR", "71,500 USD", "46,000 CAD", "63,000 AUD"]),
            ("Location", &["Berlin", "Leeds", "Toronto", "Austin", "Melbourne", "Lyon"]),
            (
                "Company",
                &[
                    "Northwind Logistics",
                    "Bluefin Analytics",
                    "Harbor Health",
                    "Quartz Media",
                    "Summit Retail",
                    "Orion Labs",
                ],
            ),
            ("Experience", &["2 years", "5 years", "entry level", "3 years", "senior level", "7 years"]),
        ],
    },
    Topic {
        domain: "cooking",
        kinds: &["recipes", "recipe cards"],
        record: "Recipe",
        fields: &[
            ("Dish", &["Lentil Soup", "Mushroom Risotto", "Shakshuka", "Pumpkin Curry", "Lemon Tart", "Beef Stew"]),
            ("Cuisine", &["Turkish", "Italian", "Tunisian", "Thai", "French", "Irish"]),
            ("Cooking time", &["35 minutes", "50 minutes", "25 minutes", "1 hour", "45 minutes", "2 hours"]),
            ("Servings", &["4 people", "2 people", "6 people", "3 people", "8 people", "5 people"]),
            ("Main ingredient", &["red lentils", "arborio rice", "eggs", "pumpkin", "lemons", "beef chuck"]),
        ],
    },
    Topic {
        domain: "travel",
        kinds: &["flight itineraries", "booking confirmations"],
        record: "Flight",
        fields: &[
            ("Airline", &["SkyBridge Air", "Nordic Wings", "Pacific Crest", "Atlas Airways", "Sunline", "Cobalt Air"]),
            ("Flight number", &["SB 204", "NW 88", "PC 1150", "AA 731", "SL 19", "CA 602"]),
            ("Departure", &["Oslo", "Lisbon", "Seattle", "Nairobi", "Osaka", "Denver"]),
            ("Arrival", &["Madrid", "Reykjavik", "Honolulu", "Cairo", "Seoul", "Chicago"]),
            ("Fare", &["212 EUR", "480 USD", "95 GBP", "1,240 USD", "310 EUR", "640 CAD"]),
        ],
    },
    Topic {
        domain: "healthcare",
        kinds: &["patient discharge notes", "clinic summaries"],
        record: "Patient",
        fields: &[
            (
                "Diagnosis",
                &["type 2 diabetes", "seasonal asthma", "hypertension", "migraine", "sprained ankle", "bronchitis"],
            ),
            ("Medication", &["metformin", "salbutamol", "lisinopril", "sumatriptan", "ibuprofen", "amoxicillin"]),
            (
                "Dosage",
                &[
                    "500 mg twice daily",
                    "two puffs as needed",
                    "10 mg daily",
                    "50 mg at onset",
                    "400 mg every 8 hours",
                    "250 mg three times daily",
                ],
            ),
            ("Physician", &["Dr. Okafor", "Dr. Lindqvist", "Dr. Mehta", "Dr. Alvarez", "Dr. Chen", "Dr. Moreau"]),
            ("Follow-up", &["in 3 months", "in 2 weeks", "in 6 weeks", "in 1 month", "not required", "in 10 days"]),
        ],
    },
    Topic {
        domain: "retail",
        kinds: &["product reviews", "customer reviews"],
        record: "Review",
        fields: &[
            (
                "Product",
                &[
                    "noise cancelling headphones",
                    "espresso machine",
                    "trail running shoes",
                    "standing desk",
                    "robot vacuum",
                    "e-reader",
                ],
            ),
            ("Brand", &["Auralis", "Brewmaster", "Stridewell", "Elevate", "Dustless", "Pagewise"]),
            (
                "Rating",
                &["4 of 5 stars", "5 of 5 stars", "3 of 5 stars", "2 of 5 stars", "1 of 5 stars", "4 of 5 stars"],
            ),
            ("Price", &["199 USD", "349 EUR", "129 GBP", "420 USD", "275 CAD", "99 USD"]),
            (
                "Verdict",
                &[
                    "worth the money",
                    "too noisy",
                    "great battery life",
                    "flimsy build",
                    "easy to set up",
                    "excellent screen",
                ],
            ),
        ],
    },
    Topic {
        domain: "finance",
        kinds: &["earnings reports", "quarterly statements"],
        record: "Report",
        fields: &[
            (
                "Company",
                &[
                    "Helix Motors",
                    "Greenleaf Foods",
                    "Vantage Bank",
                    "Corvid Software",
                    "Ironclad Mining",
                    "Lumen Energy",
                ],
            ),
            ("Quarter", &["Q1 2023", "Q2 2023", "Q3 2022", "Q4 2022", "Q1 2024", "Q2 2024"]),
            (
                "Revenue",
                &[
                    "4,200 million USD",
                    "870 million USD",
                    "2,150 million EUR",
                    "310 million USD",
                    "1,640 million CAD",
                    "5,020 million USD",
                ],
            ),
            (
                "Net income",
                &[
                    "312 million USD",
                    "41 million USD",
                    "198 million EUR",
                    "loss of 12 million USD",
                    "220 million CAD",
                    "605 million USD",
                ],
            ),
            ("Growth", &["8 percent", "12 percent", "3 percent", "minus 4 percent", "15 percent", "6 percent"]),
        ],
    },
    Topic {
        domain: "education",
        kinds: &["course catalogs", "syllabus announcements"],
        record: "Course",
        fields: &[
            (
                "Course",
                &[
                    "Linear Algebra",
                    "Medieval History",
                    "Organic Chemistry",
                    "Intro to Sociology",
                    "Data Structures",
                    "Art Theory",
                ],
            ),
            (
                "Instructor",
                &["Prof. Nakamura", "Dr. Fischer", "Prof. Adeyemi", "Dr. Rossi", "Prof. Kowalski", "Dr. Haddad"],
            ),
            ("Credits", &["3 credits", "4 credits", "2 credits", "5 credits", "6 credits", "1 credit"]),
            (
                "Schedule",
                &[
                    "Mondays 10am",
                    "Tuesdays and Thursdays 2pm",
                    "Wednesdays 9am",
                    "Fridays 1pm",
                    "Mondays and Wednesdays 4pm",
                    "Saturdays 11am",
                ],
            ),
            ("Room", &["Hall B12", "Lab 3", "Room 204", "Auditorium A", "Room 117", "Studio 5"]),
        ],
    },
    Topic {
        domain: "housing",
        kinds: &["property listings", "rental listings"],
        record: "Listing",
        fields: &[
            (
                "Address",
                &[
                    "12 Elm Street",
                    "48 Harbour Road",
                    "7 Linden Avenue",
                    "301 Pine Court",
                    "22 Mill Lane",
                    "95 Cedar Way",
                ],
            ),
            ("Bedrooms", &["2 bedrooms", "3 bedrooms", "1 bedroom", "4 bedrooms", "studio", "5 bedrooms"]),
            (
                "Rent",
                &[
                    "1,450 USD monthly",
                    "980 EUR monthly",
                    "2,300 USD monthly",
                    "1,150 GBP monthly",
                    "760 EUR monthly",
                    "3,100 USD monthly",
                ],
            ),
            (
                "Floor area",
                &[
                    "75 square meters",
                    "110 square meters",
                    "48 square meters",
                    "160 square meters",
                    "32 square meters",
                    "210 square meters",
                ],
            ),
            (
                "Agent",
                &[
                    "Keystone Realty",
                    "Oakridge Homes",
                    "Bayview Lettings",
                    "Urban Nest",
                    "Hearth Partners",
                    "Compass Estates",
                ],
            ),
        ],
    },
    Topic {
        domain: "sports",
        kinds: &["match reports", "game recaps"],
        record: "Match",
        fields: &[
            (
                "Team",
                &[
                    "Riverside FC",
                    "Northgate United",
                    "Coastal Rovers",
                    "Highland City",
                    "Valley Athletic",
                    "Port Wanderers",
                ],
            ),
            (
                "Opponent",
                &["Eastfield Town", "Kingsbridge", "Marlow Albion", "Westbrook", "Ashford Rangers", "Castlegate"],
            ),
            ("Score", &["2 to 1", "0 to 0", "3 to 2", "1 to 4", "5 to 0", "2 to 2"]),
            (
                "Venue",
                &[
                    "Riverside Park",
                    "Northgate Arena",
                    "Harbour Stadium",
                    "Highland Ground",
                    "Valley Field",
                    "Portside Bowl",
                ],
            ),
            ("Top scorer", &["Diego Ramos", "Kofi Mensah", "Liam Byrne", "Yuki Tanaka", "Marco Silva", "Emil Berg"]),
        ],
    },
    Topic {
        domain: "music",
        kinds: &["album reviews", "record store newsletters"],
        record: "Album",
        fields: &[
            (
                "Album",
                &[
                    "Glass Harbour",
                    "Midnight Orchard",
                    "Static Bloom",
                    "Paper Satellites",
                    "Low Tide Hymns",
                    "Neon Prairie",
                ],
            ),
            (
                "Artist",
                &["The Velvet Arcs", "Mira Solano", "Copper Tigers", "June Halloway", "Blue Meridian", "Oskar Vail"],
            ),
            ("Genre", &["indie folk", "synth pop", "post rock", "jazz fusion", "alt country", "dream pop"]),
            ("Release year", &["2019", "2021", "2016", "2023", "2014", "2020"]),
            (
                "Record label",
                &["Lantern Records", "Hollow Oak", "Signal Tree", "Northern Press", "Cinder Music", "Tidewater"],
            ),
        ],
    },
    Topic {
        domain: "astronomy",
        kinds: &["observation logs", "stargazing journals"],
        record: "Observation",
        fields: &[
            ("Object", &["Andromeda Galaxy", "Orion Nebula", "Jupiter", "Pleiades cluster", "Ring Nebula", "Saturn"]),
            ("Constellation", &["Andromeda", "Orion", "Taurus", "Lyra", "Sagittarius", "Cygnus"]),
            (
                "Magnitude",
                &["magnitude 3", "magnitude 4", "magnitude minus 2", "magnitude 9", "magnitude 1", "magnitude 6"],
            ),
            (
                "Telescope",
                &[
                    "8 inch Dobsonian",
                    "refractor 102 mm",
                    "binoculars 10x50",
                    "4 inch Maksutov",
                    "12 inch reflector",
                    "naked eye",
                ],
            ),
            ("Seeing", &["excellent", "fair", "poor", "good", "variable", "very steady"]),
        ],
    },
    Topic {
        domain: "hospitality",
        kinds: &["hotel reviews", "guest feedback forms"],
        record: "Stay",
        fields: &[
            (
                "Hotel",
                &["Meridian Hotel", "Casa Lumen", "The Alder Inn", "Harbor View Lodge", "Hotel Sakura", "Grand Vesta"],
            ),
            ("City", &["Porto", "Kyoto", "Edinburgh", "Cape Town", "Vienna", "Montreal"]),
            ("Nightly rate", &["140 EUR", "18,000 JPY", "95 GBP", "1,900 ZAR", "160 EUR", "210 CAD"]),
            (
                "Amenities",
                &[
                    "rooftop pool",
                    "free breakfast",
                    "spa and sauna",
                    "airport shuttle",
                    "gym and bar",
                    "garden terrace",
                ],
            ),
            ("Guest score", &["8 of 10", "9 of 10", "7 of 10", "6 of 10", "10 of 10", "8 of 10"]),
        ],
    },
];

const FIXED_PHRASES: &[&str] = &[
    "Extract {h} from {k}.",
    "List the {h} mentioned in these {k}.",
    "Could you pull out {h} from the {k}?",
    "Identify {h} in the following {k}.",
    "Get the {h} from {k} and put them in a table.",
    "Please extract the {h} from the attached {k}.",
];

const OPEN_PHRASES: &[&str] = &[
    "Pull out the key information from this text.",
    "Organize the important details of the passage into a table.",
    "Summarize the main facts in the text as a table.",
    "Turn the essential information in this document into a structured table.",
    "Extract whatever details seem most relevant from the text.",
    "Put the useful points from this passage into a table for me.",
];

fn join_headers(headers: &[&str]) -> String {
    match headers {
        [] => String::new(),
        [one] => one.to_string(),
        [init @ .., last] => format!("{} and {last}", init.join(", ")),
    }
}

fn fixed_instructions(rng: &mut ChaCha8Rng) -> String {
    let mut topics: Vec<&Topic> = TOPICS.iter().collect();
    topics.shuffle(rng);
    let mut out = Vec::new();
    for (i, topic) in topics.iter().take(10).enumerate() {
        let n = rng.random_range(2..=4);
        let mut names: Vec<String> = topic.fields.iter().map(|(f, _)| f.to_lowercase()).collect();
        names.shuffle(rng);
        names.truncate(n);
        let names: Vec<&str> = names.iter().map(String::as_str).collect();
        let kind = topic.kinds.choose(rng).unwrap();
        let phrase = FIXED_PHRASES.choose(rng).unwrap();
        let instruction = phrase.replace("{h}", &join_headers(&names)).replace("{k}", kind);
        out.push(format!("Example {}:\n - Instruction: {instruction}\n - Domain: {}", i + 1, topic.domain));
    }
    out.join("\n")
}

/// Catalog fields named in `text`, as (topic index, field index), in order
/// of first appearance.
fn mentioned_fields(text: &str) -> Vec<(usize, usize)> {
    let lower = text.to_lowercase();
    let mut hits: Vec<(usize, usize, usize)> = Vec::new();
    for (ti, topic) in TOPICS.iter().enumerate() {
        for (fi, (name, _)) in topic.fields.iter().enumerate() {
            if let Some(pos) = find_word(&lower, &name.to_lowercase()) {
                hits.push((pos, ti, fi));
            }
        }
    }
    hits.sort();
    hits.into_iter().map(|(_, t, f)| (t, f)).collect()
}

fn find_word(haystack: &str, needle: &str) -> Option<usize> {
    let mut from = 0;
    while let Some(rel) = haystack[from..].find(needle) {
        let start = from + rel;
        let end = start + needle.len();
        let before = haystack[..start].chars().next_back();
        let after = haystack[end..].chars().next();
        let boundary = |c: Option<char>| c.is_none_or(|c| !c.is_alphanumeric());
        if boundary(before) && boundary(after) {
            return Some(start);
        }
        from = start + needle.len().max(1);
    }
    None
}

fn pick_topic(rng: &mut ChaCha8Rng, instruction: &str) -> usize {
    let mut votes = vec![0usize; TOPICS.len()];
    for (t, _) in mentioned_fields(instruction) {
        votes[t] += 2;
    }
    let lower = instruction.to_lowercase();
    for (t, topic) in TOPICS.iter().enumerate() {
        if topic.kinds.iter().any(|k| lower.contains(k)) {
            votes[t] += 1;
        }
    }
    let best = votes.iter().copied().max().unwrap_or(0);
    if best == 0 {
        return rng.random_range(0..TOPICS.len());
    }
    votes.iter().position(|v| *v == best).unwrap()
}

fn background_text(rng: &mut ChaCha8Rng, instruction: &str) -> String {
    let t = pick_topic(rng, instruction);
    let topic = &TOPICS[t];
    let kind = topic.kinds.iter().find(|k| instruction.to_lowercase().contains(*k)).unwrap_or(&topic.kinds[0]);
    let n_records = rng.random_range(2..=4);
    let mut lines = vec![format!(
        "The following {kind} were collected for the {} team and summarize recent activity.",
        topic.domain
    )];
    for r in 0..n_records {
        let fields: Vec<String> =
            topic.fields.iter().map(|(name, values)| format!("{name}: {}", values.choose(rng).unwrap())).collect();
        lines.push(format!("{} {} - {}.", topic.record, r + 1, fields.join("; ")));
    }
    lines.push("Details may change, so please confirm with the original source before acting on them.".into());
    lines.join("\n")
}

/// `Record k - Field: value; Field: value.` lines, as (field, value) lists.
fn parse_records(text: &str) -> Vec<Vec<(String, String)>> {
    text.lines()
        .filter_map(|line| {
            let (_, rest) = line.split_once(" - ")?;
            let rest = rest.trim().trim_end_matches('.');
            let fields: Vec<(String, String)> = rest
                .split("; ")
                .filter_map(|kv| {
                    let (k, v) = kv.split_once(": ")?;
                    Some((k.trim().to_string(), v.trim().to_string()))
                })
                .collect();
            (!fields.is_empty()).then_some(fields)
        })
        .collect()
}

fn malformed_output(cot: bool) -> String {
    let body = "The text lists several entries, but I will describe them in prose instead of a table: each entry has a name and a few attributes.";
    if cot {
        format!("Explanation: I read the instruction and the text carefully.\n\n{body}")
    } else {
        body.to_string()
    }
}

fn table_output(
    rng: &mut ChaCha8Rng,
    instruction: &str,
    text: &str,
    cot: bool,
    extra_headers: bool,
    missing_cells: bool,
) -> String {
    let records = parse_records(text);
    let (mut header, mut rows): (Vec<String>, Vec<Vec<String>>) = if records.is_empty() {
        let sentences: Vec<&str> = text.split(['.', '\n']).map(str::trim).filter(|s| !s.is_empty()).take(3).collect();
        let rows = if sentences.is_empty() {
            vec![vec!["1".to_string(), "N/A".to_string()]]
        } else {
            sentences.iter().enumerate().map(|(i, s)| vec![(i + 1).to_string(), s.to_string()]).collect()
        };
        (vec!["Item".into(), "Details".into()], rows)
    } else {
        let available: Vec<&str> = records[0].iter().map(|(k, _)| k.as_str()).collect();
        let lower = instruction.to_lowercase();
        let mut asked: Vec<(usize, &str)> =
            available.iter().filter_map(|k| find_word(&lower, &k.to_lowercase()).map(|p| (p, *k))).collect();
        asked.sort();
        let header: Vec<&str> =
            if asked.is_empty() { available.clone() } else { asked.into_iter().map(|(_, k)| k).collect() };
        let rows = records
            .iter()
            .map(|rec| {
                header
                    .iter()
                    .map(|h| rec.iter().find(|(k, _)| k == h).map_or_else(|| "N/A".to_string(), |(_, v)| v.clone()))
                    .collect()
            })
            .collect();
        (header.into_iter().map(String::from).collect(), rows)
    };

    if extra_headers {
        let other = TOPICS
            .iter()
            .flat_map(|t| t.fields.iter())
            .filter(|(name, _)| !header.iter().any(|h| h == name))
            .collect::<Vec<_>>();
        for (name, values) in other.choose_multiple(rng, 2) {
            header.push(name.to_string());
            for row in rows.iter_mut() {
                row.push(values.choose(rng).unwrap().to_string());
            }
        }
    }
    if missing_cells {
        let mut positions: Vec<(usize, usize)> =
            (0..rows.len()).flat_map(|r| (0..header.len()).map(move |c| (r, c))).collect();
        positions.shuffle(rng);
        for (r, c) in positions.into_iter().take(4) {
            rows[r][c] = "N/A".into();
        }
    }

    let table = Table::new(&header, &rows).expect("mock headers are non-empty").to_markdown();
    if cot {
        let asked = join_headers(&header.iter().map(String::as_str).collect::<Vec<_>>());
        format!(
            "Explanation: The instruction asks for {}. I went through the text entry by entry and found {} matching entries, so the table below has one row for each of them.\n\n{table}",
            asked.to_lowercase(),
            rows.len()
        )
    } else {
        table
    }
}

const STYLES: &[(&str, &str)] = &[
    ("comprehensive query", "I would like a thorough and complete answer to the following request: {s}"),
    ("casual interaction", "Hey, could you help me out? {s} Thanks a lot!"),
    ("direct command", "{s} Do this now."),
    ("professional request", "For our records, kindly complete the following task: {s}"),
];

fn paraphrase(rng: &mut ChaCha8Rng, prompt: &str, extra_line: bool) -> String {
    let global = prompt
        .split_once("make them like ")
        .and_then(|(_, rest)| rest.split_once(" but keep"))
        .map(|(style, _)| style.trim().to_string())
        .unwrap_or_default();
    let mut out = Vec::new();
    for line in prompt.lines() {
        let Some(rest) = line.trim().strip_prefix("Sentence ") else {
            continue;
        };
        let Some((tag, sentence)) = rest.split_once(": ") else {
            continue;
        };
        let style = tag
            .split_once('[')
            .and_then(|(_, s)| s.strip_suffix(']'))
            .map(str::to_string)
            .unwrap_or_else(|| global.clone());
        let template = STYLES.iter().find(|(name, _)| *name == style).map(|(_, t)| *t).unwrap_or("{s}");
        out.push(template.replace("{s}", sentence.trim()));
    }
    if extra_line {
        out.push("Here are the paraphrased instructions.".into());
    }
    let _ = rng;
    out.join("\n")
}

/// Values of the labelled fields of the final query in a rendered prompt,
/// e.g. `["Instruction", "Text"]` for ` - Instruction: X\n - Text: Y`.
fn query_fields<'a>(prompt: &'a str, labels: &[&str]) -> Option<Vec<&'a str>> {
    let first = format!("- {}: ", labels[0]);
    let mut rest = &prompt[prompt.rfind(&first)? + first.len()..];
    let mut out = Vec::with_capacity(labels.len());
    for label in &labels[1..] {
        let marker = format!("\n - {label}: ");
        let end = rest.find(&marker)?;
        out.push(rest[..end].trim());
        rest = &rest[end + marker.len()..];
    }
    out.push(rest.trim());
    Some(out)
}
