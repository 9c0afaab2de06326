//! Synthetic recommendation benchmark: genre-clustered movie KG, Zipf item
//! popularity, and users who mostly watch their favourite genre.

use std::collections::HashSet;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::kg::{Interaction, Item, ItemTable, KgBuilder, KgError, KnowledgeGraph};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid synthetic config: {0}")]
    Config(String),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Kg(#[from] KgError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub items: usize,
    /// Total entities: items, genres and people.
    pub entities: usize,
    pub triples: usize,
    pub users: usize,
    pub genres: usize,
    pub min_history: usize,
    pub max_history: usize,
    pub zipf_exponent: f64,
    /// Probability that a user interaction, or a film-person edge, stays in genre.
    pub genre_affinity: f64,
    /// Set from the run seed, never from a config file.
    #[serde(skip)]
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            items: 1000,
            entities: 5000,
            triples: 20000,
            users: 500,
            genres: 18,
            min_history: 11,
            max_history: 40,
            zipf_exponent: 1.0,
            genre_affinity: 0.5,
            seed: 0,
        }
    }
}

impl SynthConfig {
    fn people(&self) -> usize {
        self.entities.saturating_sub(self.items + self.genres)
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::Config(m));
        if self.items < 2 || self.genres == 0 || self.genres > GENRES.len() {
            return bad(format!("need at least 2 items and 1..={} genres", GENRES.len()));
        }
        if self.people() == 0 {
            return bad(format!("{} entities leave no room for people beside {} items and {} genres", self.entities, self.items, self.genres));
        }
        let floor = self.items + self.people();
        let ceiling = self.items * (1 + self.people() * PERSON_RELATIONS.len() + self.items);
        if self.triples < floor || self.triples > ceiling / 2 {
            return bad(format!("triple count {} must lie in [{floor}, {}]", self.triples, ceiling / 2));
        }
        if self.min_history == 0 || self.min_history > self.max_history || self.max_history > self.items {
            return bad("history bounds must satisfy 1 <= min <= max <= items".into());
        }
        if !(self.zipf_exponent >= 0.0 && self.zipf_exponent.is_finite()) {
            return bad("zipf exponent must be finite and >= 0".into());
        }
        if !(0.0..=1.0).contains(&self.genre_affinity) {
            return bad("genre affinity must lie in [0, 1]".into());
        }
        Ok(())
    }
}

const GENRES: &[&str] = &[
    "Action", "Adventure", "Animation", "Children's", "Comedy", "Crime", "Documentary", "Drama", "Fantasy", "Film-Noir",
    "Horror", "Musical", "Mystery", "Romance", "Sci-Fi", "Thriller", "War", "Western",
];

const ADJ: &[&str] = &[
    "Silent", "Crimson", "Broken", "Golden", "Last", "Hidden", "Wild", "Frozen", "Burning", "Lonely", "Midnight", "Secret",
    "Electric", "Hollow", "Iron", "Velvet", "Distant", "Restless", "Shattered", "Savage", "Quiet", "Endless", "Bitter",
    "Forgotten", "Scarlet", "Northern", "Paper", "Glass", "Stolen", "Sudden",
];

const NOUN: &[&str] = &[
    "Harbor", "Horizon", "Kingdom", "River", "Empire", "Garden", "Station", "Frontier", "Mirror", "Promise", "Summer",
    "Voyage", "Witness", "Circus", "Highway", "Letter", "Island", "Shadow", "Orchard", "Tide", "Machine", "Canyon",
    "Lantern", "Symphony", "Alibi", "Carnival", "Compass", "Monsoon", "Paradise", "Reckoning",
];

const FIRST: &[&str] = &[
    "Ada", "Bruno", "Clara", "Dmitri", "Elena", "Farid", "Greta", "Hugo", "Ines", "Jonas", "Kira", "Luca", "Mara", "Nils",
    "Olga", "Pavel", "Quinn", "Rosa", "Sven", "Tara", "Umar", "Vera", "Wim", "Xenia", "Yusuf", "Zora", "Anton", "Bea",
    "Cyril", "Dana",
];

const LAST: &[&str] = &[
    "Abbott", "Brandt", "Castillo", "Dorsey", "Ekberg", "Fontaine", "Garnier", "Holloway", "Ivanova", "Jansen", "Kowalski",
    "Lindqvist", "Moreau", "Novak", "Okafor", "Petrov", "Quintero", "Romano", "Sato", "Tanaka", "Ulrich", "Varga",
    "Whitfield", "Xu", "Yilmaz", "Zamora", "Achebe", "Bergman", "Carver", "Duval",
];

/// `(relation id, relation text)` for film → person edges.
const PERSON_RELATIONS: &[(&str, &str)] = &[
    ("film.film.directed_by", "film directed by"),
    ("film.film.starring", "film starring"),
    ("film.film.written_by", "film written by"),
    ("film.film.produced_by", "film produced by"),
];
const GENRE_RELATION: (&str, &str) = ("film.film.genre", "film genre");
const RELATED_RELATION: (&str, &str) = ("film.film.related_to", "related film");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthEntity {
    pub key: String,
    pub text: String,
    pub external_id: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthDataset {
    pub config: SynthConfig,
    pub entities: Vec<SynthEntity>,
    pub relations: Vec<(String, String)>,
    /// `(head key, relation id, tail key)`, sorted.
    pub triples: Vec<(String, String, String)>,
    pub items: Vec<Item>,
    /// Sorted by `(ts, user, item)`.
    pub interactions: Vec<Interaction>,
    /// Genre index of every item, aligned with `items`.
    pub item_genres: Vec<usize>,
}

fn unique_name(rng: &mut ChaCha8Rng, taken: &mut HashSet<String>, make: impl Fn(&mut ChaCha8Rng, usize) -> String) -> String {
    let mut attempt = 0;
    loop {
        let name = make(rng, attempt);
        if taken.insert(name.clone()) {
            return name;
        }
        attempt += 1;
    }
}

pub fn generate(config: &SynthConfig) -> Result<SynthDataset, SynthError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let genres = &GENRES[..config.genres];
    let n_people = config.people();

    let mut taken = HashSet::new();
    let item_genres: Vec<usize> = (0..config.items).map(|_| rng.gen_range(0..genres.len())).collect();
    let titles: Vec<String> = (0..config.items)
        .map(|_| {
            unique_name(&mut rng, &mut taken, |r, attempt| {
                let base = format!("{} {}", ADJ.choose(r).unwrap(), NOUN.choose(r).unwrap());
                let year = r.gen_range(1950..2011);
                if attempt < 8 {
                    format!("{base} ({year})")
                } else {
                    format!("{base} {} ({year})", attempt)
                }
            })
        })
        .collect();
    let people: Vec<String> = (0..n_people)
        .map(|_| {
            unique_name(&mut rng, &mut taken, |r, attempt| {
                let first = FIRST.choose(r).unwrap();
                let last = LAST.choose(r).unwrap();
                match attempt {
                    0 => format!("{first} {last}"),
                    a if a < 30 => format!("{first} {}. {last}", (b'A' + r.gen_range(0..26u8)) as char),
                    a => format!("{first} {last} {a}"),
                }
            })
        })
        .collect();
    let person_genre: Vec<usize> = (0..n_people).map(|_| rng.gen_range(0..genres.len())).collect();

    let item_key = |i: usize| format!("film:{}", i + 1);
    let person_key = |p: usize| format!("person:{}", p + 1);
    let genre_key = |g: usize| format!("genre:{}", genres[g].to_lowercase());

    let mut by_genre_people: Vec<Vec<usize>> = vec![Vec::new(); genres.len()];
    for (p, &g) in person_genre.iter().enumerate() {
        by_genre_people[g].push(p);
    }
    let mut by_genre_items: Vec<Vec<usize>> = vec![Vec::new(); genres.len()];
    for (i, &g) in item_genres.iter().enumerate() {
        by_genre_items[g].push(i);
    }

    let mut triples: HashSet<(String, String, String)> = HashSet::with_capacity(config.triples);
    let mut order: Vec<(String, String, String)> = Vec::with_capacity(config.triples);
    let mut push = |t: (String, String, String), set: &mut HashSet<_>| {
        if set.insert(t.clone()) {
            order.push(t);
            true
        } else {
            false
        }
    };
    for (i, &g) in item_genres.iter().enumerate() {
        push((item_key(i), GENRE_RELATION.0.into(), genre_key(g)), &mut triples);
    }
    // Every person gets one film so that it exists in the graph.
    for (p, &g) in person_genre.iter().enumerate() {
        let pool = &by_genre_items[g];
        let i = if pool.is_empty() { rng.gen_range(0..config.items) } else { *pool.choose(&mut rng).unwrap() };
        let rel = PERSON_RELATIONS.choose(&mut rng).unwrap().0;
        push((item_key(i), rel.into(), person_key(p)), &mut triples);
    }
    let mut attempts = 0usize;
    while triples.len() < config.triples {
        attempts += 1;
        if attempts > config.triples * 50 {
            return Err(SynthError::Config(format!("could not place {} distinct triples", config.triples)));
        }
        let i = rng.gen_range(0..config.items);
        let g = item_genres[i];
        let in_genre = rng.gen_bool(config.genre_affinity);
        if rng.gen_bool(0.1) {
            let pool = &by_genre_items[g];
            let j = if in_genre && pool.len() > 1 { *pool.choose(&mut rng).unwrap() } else { rng.gen_range(0..config.items) };
            if j != i {
                push((item_key(i), RELATED_RELATION.0.into(), item_key(j)), &mut triples);
            }
            continue;
        }
        let pool = &by_genre_people[g];
        let p = if in_genre && !pool.is_empty() { *pool.choose(&mut rng).unwrap() } else { rng.gen_range(0..n_people) };
        let rel = PERSON_RELATIONS.choose(&mut rng).unwrap().0;
        push((item_key(i), rel.into(), person_key(p)), &mut triples);
    }
    order.sort();

    let mut entities: Vec<SynthEntity> = Vec::with_capacity(config.entities);
    for (i, t) in titles.iter().enumerate() {
        entities.push(SynthEntity { key: item_key(i), text: t.clone(), external_id: Some(item_key(i)) });
    }
    for (g, name) in genres.iter().enumerate() {
        entities.push(SynthEntity { key: genre_key(g), text: format!("{name} film"), external_id: None });
    }
    for (p, name) in people.iter().enumerate() {
        entities.push(SynthEntity { key: person_key(p), text: name.clone(), external_id: None });
    }
    entities.sort_by(|a, b| a.key.cmp(&b.key));
    let mut relations: Vec<(String, String)> = PERSON_RELATIONS
        .iter()
        .chain([&GENRE_RELATION, &RELATED_RELATION])
        .map(|(a, b)| (a.to_string(), b.to_string()))
        .collect();
    relations.sort();

    let mut directors: std::collections::HashMap<&str, &str> = std::collections::HashMap::new();
    for (h, r, t) in &order {
        if r == PERSON_RELATIONS[0].0 {
            directors.entry(h.as_str()).or_insert(t.as_str());
        }
    }
    let director_of = |i: usize| {
        directors
            .get(item_key(i).as_str())
            .and_then(|t| t.strip_prefix("person:"))
            .and_then(|n| n.parse::<usize>().ok())
            .map(|n| people[n - 1].clone())
    };
    let items: Vec<Item> = (0..config.items)
        .map(|i| {
            let genre = genres[item_genres[i]];
            let description = match director_of(i) {
                Some(d) => format!("{genre} film directed by {d}"),
                None => format!("{genre} film"),
            };
            Item {
                description,
                external_id: Some(item_key(i)),
                ..Item::new((i + 1).to_string(), titles[i].clone())
            }
        })
        .collect();

    // Popularity: a random permutation of items gets Zipf weights by rank.
    let mut rank: Vec<usize> = (0..config.items).collect();
    rank.shuffle(&mut rng);
    let mut weight = vec![0.0f64; config.items];
    for (r, &i) in rank.iter().enumerate() {
        weight[i] = 1.0 / ((r + 1) as f64).powf(config.zipf_exponent);
    }
    let global = WeightedIndex::new(&weight).expect("positive weights");
    let genre_dists: Vec<Option<WeightedIndex<f64>>> = by_genre_items
        .iter()
        .map(|pool| (!pool.is_empty()).then(|| WeightedIndex::new(pool.iter().map(|&i| weight[i])).expect("positive weights")))
        .collect();

    let mut interactions = Vec::new();
    let width = config.users.to_string().len();
    for u in 0..config.users {
        let user = format!("u{:0width$}", u + 1);
        let favourite = rng.gen_range(0..genres.len());
        let len = rng.gen_range(config.min_history..=config.max_history);
        let mut seen = HashSet::new();
        let mut step = 0i64;
        let mut tries = 0;
        while seen.len() < len && tries < len * 100 {
            tries += 1;
            let i = match &genre_dists[favourite] {
                Some(d) if rng.gen_bool(config.genre_affinity) => by_genre_items[favourite][d.sample(&mut rng)],
                _ => global.sample(&mut rng),
            };
            if !seen.insert(i) {
                continue;
            }
            step += 1;
            interactions.push(Interaction { user: user.clone(), item: (i + 1).to_string(), ts: 1_000_000 + step * 60 });
        }
    }
    interactions.sort_by(|a, b| (a.ts, &a.user, &a.item).cmp(&(b.ts, &b.user, &b.item)));

    Ok(SynthDataset { config: config.clone(), entities, relations, triples: order, items, interactions, item_genres })
}

impl SynthDataset {
    pub fn knowledge_graph(&self) -> KnowledgeGraph {
        let mut b = KgBuilder::new();
        for e in &self.entities {
            match &e.external_id {
                Some(x) => b.entity_with_external(&e.key, x, &e.text),
                None => b.entity(&e.key, &e.text),
            };
        }
        for (id, text) in &self.relations {
            b.relation(id, text);
        }
        for (h, r, t) in &self.triples {
            b.triple(h, r, t);
        }
        b.build().0
    }

    pub fn item_table(&self) -> ItemTable {
        ItemTable::new(self.items.clone()).expect("generated ids are unique")
    }

    /// Writes `triples.tsv`, `entities.jsonl`, `relations.jsonl`,
    /// `items.jsonl`, `interactions.jsonl` and `synth.json` into `dir`.
    pub fn write_dir(&self, dir: &Path) -> Result<(), SynthError> {
        fs::create_dir_all(dir)?;
        let mut w = BufWriter::new(File::create(dir.join("triples.tsv"))?);
        for (h, r, t) in &self.triples {
            writeln!(w, "{h}\t{r}\t{t}")?;
        }
        w.flush()?;
        let mut w = BufWriter::new(File::create(dir.join("entities.jsonl"))?);
        for e in &self.entities {
            let row = match &e.external_id {
                Some(x) => json!({"id": e.key, "text": e.text, "external_id": x}),
                None => json!({"id": e.key, "text": e.text}),
            };
            writeln!(w, "{row}")?;
        }
        w.flush()?;
        let mut w = BufWriter::new(File::create(dir.join("relations.jsonl"))?);
        for (id, text) in &self.relations {
            writeln!(w, "{}", json!({"id": id, "text": text}))?;
        }
        w.flush()?;
        let mut w = BufWriter::new(File::create(dir.join("items.jsonl"))?);
        for it in &self.items {
            writeln!(w, "{}", json!({"id": it.item_id, "title": it.title, "description": it.description, "external_id": it.external_id}))?;
        }
        w.flush()?;
        let mut w = BufWriter::new(File::create(dir.join("interactions.jsonl"))?);
        for x in &self.interactions {
            writeln!(w, "{}", json!({"user": x.user, "item": x.item, "ts": x.ts}))?;
        }
        w.flush()?;
        let meta = json!({
            "generator": "kragrec-synth",
            "version": 1,
            "seed": self.config.seed,
            "config": self.config,
            "counts": {
                "entities": self.entities.len(),
                "triples": self.triples.len(),
                "items": self.items.len(),
                "interactions": self.interactions.len(),
            }
        });
        fs::write(dir.join("synth.json"), serde_json::to_string_pretty(&meta).expect("plain json") + "\n")?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SynthConfig {
        SynthConfig { items: 60, entities: 200, triples: 600, users: 30, genres: 5, max_history: 20, seed: 3, ..SynthConfig::default() }
    }

    #[test]
    fn sizes_are_exact() {
        let d = generate(&small()).unwrap();
        let kg = d.knowledge_graph();
        assert_eq!(kg.entity_count(), 200);
        assert_eq!(kg.triples().len(), 600);
        assert_eq!(d.items.len(), 60);
        let users: HashSet<_> = d.interactions.iter().map(|x| &x.user).collect();
        assert_eq!(users.len(), 30);
    }

    #[test]
    fn same_seed_same_data() {
        assert_eq!(generate(&small()).unwrap(), generate(&small()).unwrap());
        let other = SynthConfig { seed: 4, ..small() };
        assert_ne!(generate(&small()).unwrap().triples, generate(&other).unwrap().triples);
    }

    #[test]
    fn histories_have_no_repeats_and_respect_bounds() {
        let d = generate(&small()).unwrap();
        let mut per_user: std::collections::HashMap<&str, Vec<&str>> = Default::default();
        for x in &d.interactions {
            per_user.entry(&x.user).or_default().push(&x.item);
        }
        for items in per_user.values() {
            let set: HashSet<_> = items.iter().collect();
            assert_eq!(set.len(), items.len());
            assert!((11..=20).contains(&items.len()));
        }
    }

    #[test]
    fn impossible_sizes_rejected() {
        assert!(generate(&SynthConfig { entities: 10, ..small() }).is_err());
        assert!(generate(&SynthConfig { triples: 5, ..small() }).is_err());
    }
}
