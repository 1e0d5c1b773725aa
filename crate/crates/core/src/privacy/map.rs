use super::detector::parse_kind_table;
use super::{PiiKind, PrivacyError, MAX_SURROGATE_ATTEMPTS};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::path::Path;

const BUILTIN_SURROGATES: &str = include_str!("../../resources/surrogates.tsv");

/// Kind-specific pools of plausible replacement values.
#[derive(Debug, Clone, Default)]
pub struct SurrogatePools {
    pools: HashMap<PiiKind, Vec<String>>,
}

impl SurrogatePools {
    pub fn builtin() -> Self {
        Self::parse(BUILTIN_SURROGATES).expect("shipped surrogate pools parse")
    }

    pub fn parse(raw: &str) -> Result<Self, PrivacyError> {
        Ok(Self::from_entries(parse_kind_table(raw)?))
    }

    pub fn load(path: &Path) -> Result<Self, PrivacyError> {
        let raw = std::fs::read_to_string(path).map_err(|e| PrivacyError::Io(e.to_string()))?;
        Self::parse(&raw)
    }

    pub fn from_entries<I, S>(entries: I) -> Self
    where
        I: IntoIterator<Item = (PiiKind, S)>,
        S: Into<String>,
    {
        let mut pools: HashMap<PiiKind, Vec<String>> = HashMap::new();
        for (kind, value) in entries {
            let value = value.into();
            let pool = pools.entry(kind).or_default();
            if !pool.contains(&value) {
                pool.push(value);
            }
        }
        Self { pools }
    }

    fn draw(&self, kind: PiiKind, rng: &mut ChaCha8Rng) -> String {
        match self.pools.get(&kind).filter(|p| !p.is_empty()) {
            Some(pool) => pool[rng.random_range(0..pool.len())].clone(),
            // Kinds without a pool get an opaque reference code.
            None => {
                const ALPHABET: &[u8] = b"ABCDEFGHJKLMNPQRSTUVWXYZ23456789";
                let code: String = (0..6)
                    .map(|_| ALPHABET[rng.random_range(0..ALPHABET.len())] as char)
                    .collect();
                format!("REF-{code}")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MapEntry {
    pub kind: PiiKind,
    pub original: String,
    pub placeholder: String,
}

#[derive(Serialize, Deserialize)]
struct MapRepr {
    session_id: String,
    rng_seed: u64,
    draws: u64,
    entries: Vec<MapEntry>,
}

/// Session-scoped bijection between original PII surfaces and placeholders.
///
/// Entries keep insertion order so snapshots serialize deterministically. The
/// surrogate RNG is re-derived from `(rng_seed, draws)` on every draw, which
/// makes a reloaded map continue exactly where the persisted one stopped.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(from = "MapRepr", into = "MapRepr")]
pub struct AnonymizationMap {
    session_id: String,
    rng_seed: u64,
    draws: u64,
    entries: Vec<MapEntry>,
    forward: HashMap<(PiiKind, String), usize>,
    reverse: HashMap<String, usize>,
}

impl PartialEq for AnonymizationMap {
    fn eq(&self, other: &Self) -> bool {
        self.session_id == other.session_id
            && self.rng_seed == other.rng_seed
            && self.draws == other.draws
            && self.entries == other.entries
    }
}

impl From<MapRepr> for AnonymizationMap {
    fn from(repr: MapRepr) -> Self {
        let mut map = AnonymizationMap::new(repr.session_id, repr.rng_seed);
        map.draws = repr.draws;
        for e in repr.entries {
            map.push(e);
        }
        map
    }
}

impl From<AnonymizationMap> for MapRepr {
    fn from(map: AnonymizationMap) -> Self {
        MapRepr {
            session_id: map.session_id,
            rng_seed: map.rng_seed,
            draws: map.draws,
            entries: map.entries,
        }
    }
}

impl AnonymizationMap {
    pub fn new(session_id: impl Into<String>, rng_seed: u64) -> Self {
        Self {
            session_id: session_id.into(),
            rng_seed,
            draws: 0,
            entries: Vec::new(),
            forward: HashMap::new(),
            reverse: HashMap::new(),
        }
    }

    pub fn session_id(&self) -> &str {
        &self.session_id
    }

    pub fn rng_seed(&self) -> u64 {
        self.rng_seed
    }

    pub fn entries(&self) -> &[MapEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn forward_len(&self) -> usize {
        self.forward.len()
    }

    pub fn reverse_len(&self) -> usize {
        self.reverse.len()
    }

    pub fn placeholder_of(&self, original: &str, kind: PiiKind) -> Option<&str> {
        self.forward
            .get(&(kind, original.to_string()))
            .map(|&i| self.entries[i].placeholder.as_str())
    }

    pub fn original_of(&self, placeholder: &str) -> Option<&str> {
        self.reverse
            .get(placeholder)
            .map(|&i| self.entries[i].original.as_str())
    }

    /// Case-insensitive placeholder lookup, for case-folded entity keys.
    pub fn entry_for_key(&self, key: &str) -> Option<&MapEntry> {
        self.entries
            .iter()
            .find(|e| e.placeholder.to_lowercase() == key)
    }

    /// Inserts a fixed pairing. Fails if either side is already bound to
    /// something else; re-inserting an identical pair is a no-op.
    pub fn insert_entry(
        &mut self,
        kind: PiiKind,
        original: &str,
        placeholder: &str,
    ) -> Result<(), PrivacyError> {
        if let Some(existing) = self.placeholder_of(original, kind) {
            if existing == placeholder {
                return Ok(());
            }
        }
        if self.reverse.contains_key(placeholder)
            || self.forward.contains_key(&(kind, original.to_string()))
            || self.is_original(placeholder)
        {
            return Err(PrivacyError::PlaceholderCollision {
                surface: original.to_string(),
                attempts: 0,
            });
        }
        self.push(MapEntry {
            kind,
            original: original.to_string(),
            placeholder: placeholder.to_string(),
        });
        Ok(())
    }

    /// True when `original` is also the placeholder of another entry. The
    /// user typed a string we had already handed out as a surrogate, so a bare
    /// occurrence in anonymized text can't be attributed to either side.
    pub fn is_ambiguous(&self, original: &str) -> bool {
        self.reverse
            .get(original)
            .is_some_and(|&i| self.entries[i].original != original)
    }

    fn is_original(&self, s: &str) -> bool {
        self.entries.iter().any(|e| e.original == s)
    }

    fn push(&mut self, entry: MapEntry) {
        let idx = self.entries.len();
        self.forward
            .insert((entry.kind, entry.original.clone()), idx);
        self.reverse.insert(entry.placeholder.clone(), idx);
        self.entries.push(entry);
    }

    /// Existing placeholder for `(surface, kind)`, or a freshly drawn one that
    /// appears nowhere in `text`, is not already a placeholder and is not a
    /// known original.
    pub(super) fn placeholder_for(
        &mut self,
        surface: &str,
        kind: PiiKind,
        text: &str,
        pools: &SurrogatePools,
    ) -> Result<String, PrivacyError> {
        if let Some(p) = self.placeholder_of(surface, kind) {
            return Ok(p.to_string());
        }
        for _ in 0..MAX_SURROGATE_ATTEMPTS {
            let mut rng = ChaCha8Rng::seed_from_u64(
                self.rng_seed ^ self.draws.wrapping_mul(0x9E37_79B9_7F4A_7C15),
            );
            self.draws += 1;
            let candidate = pools.draw(kind, &mut rng);
            if candidate == surface
                || text.contains(&candidate)
                || self.reverse.contains_key(&candidate)
                || self.is_original(&candidate)
            {
                continue;
            }
            self.push(MapEntry {
                kind,
                original: surface.to_string(),
                placeholder: candidate.clone(),
            });
            return Ok(candidate);
        }
        Err(PrivacyError::PlaceholderCollision {
            surface: surface.to_string(),
            attempts: MAX_SURROGATE_ATTEMPTS,
        })
    }
}
