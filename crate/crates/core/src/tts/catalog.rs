use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Result, TtsError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Gender {
    Female,
    Male,
}

impl fmt::Display for Gender {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Gender::Female => "female",
            Gender::Male => "male",
        })
    }
}

/// BCP-47 language-region tag restricted to the `ll-CC` shape.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Locale(String);

impl Locale {
    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for Locale {
    type Error = String;

    fn try_from(tag: String) -> std::result::Result<Self, String> {
        let ok = match tag.split_once('-') {
            Some((lang, region)) => {
                (2..=3).contains(&lang.len())
                    && lang.chars().all(|c| c.is_ascii_lowercase())
                    && region.len() == 2
                    && region.chars().all(|c| c.is_ascii_uppercase())
            }
            None => false,
        };
        if ok {
            Ok(Locale(tag))
        } else {
            Err(format!("locale {tag:?} is not of the form ll-CC"))
        }
    }
}

impl TryFrom<&str> for Locale {
    type Error = String;

    fn try_from(tag: &str) -> std::result::Result<Self, String> {
        Locale::try_from(tag.to_owned())
    }
}

impl From<Locale> for String {
    fn from(l: Locale) -> String {
        l.0
    }
}

impl fmt::Display for Locale {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VoiceSpec {
    pub gender: Gender,
    pub locale: Locale,
    pub speaker_id: String,
}

impl VoiceSpec {
    pub fn new(gender: Gender, locale: &str, speaker_id: &str) -> Result<Self> {
        let locale = Locale::try_from(locale).map_err(TtsError::Config)?;
        if speaker_id.trim().is_empty() {
            return Err(TtsError::Config("speaker_id must be non-empty".into()));
        }
        Ok(Self {
            gender,
            locale,
            speaker_id: speaker_id.to_owned(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VoiceCatalog {
    pub voices: Vec<VoiceSpec>,
}

const DEFAULT_CATALOG: &str = include_str!("../../data/voices.json");

impl VoiceCatalog {
    pub fn new(voices: Vec<VoiceSpec>) -> Result<Self> {
        let mut ids = BTreeSet::new();
        for v in &voices {
            if v.speaker_id.trim().is_empty() {
                return Err(TtsError::Config("speaker_id must be non-empty".into()));
            }
            if !ids.insert(v.speaker_id.as_str()) {
                return Err(TtsError::Config(format!(
                    "duplicate speaker_id {:?} in catalog",
                    v.speaker_id
                )));
            }
        }
        Ok(Self { voices })
    }

    /// The shipped catalog: 79 speakers over 14 English locales.
    pub fn default_catalog() -> Self {
        Self::from_json(DEFAULT_CATALOG).expect("bundled voice catalog is valid")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let raw: VoiceCatalog = serde_json::from_str(text)
            .map_err(|e| TtsError::Config(format!("voice catalog: {e}")))?;
        Self::new(raw.voices)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| TtsError::Config(format!("voice catalog {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn len(&self) -> usize {
        self.voices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.voices.is_empty()
    }

    pub fn locales(&self) -> BTreeSet<&Locale> {
        self.voices.iter().map(|v| &v.locale).collect()
    }

    pub fn genders(&self) -> BTreeSet<Gender> {
        self.voices.iter().map(|v| v.gender).collect()
    }

    pub fn speakers(&self) -> BTreeSet<&str> {
        self.voices.iter().map(|v| v.speaker_id.as_str()).collect()
    }
}

/// Uniform draw over the catalog.
pub fn sample_voice<R: Rng + ?Sized>(catalog: &VoiceCatalog, rng: &mut R) -> Result<VoiceSpec> {
    if catalog.is_empty() {
        return Err(TtsError::Config("voice catalog is empty".into()));
    }
    Ok(catalog.voices[rng.gen_range(0..catalog.len())].clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::collections::HashMap;

    #[test]
    fn default_catalog_cardinalities() {
        let c = VoiceCatalog::default_catalog();
        assert_eq!(c.len(), 79);
        assert_eq!(c.speakers().len(), 79);
        assert_eq!(c.locales().len(), 14);
        assert_eq!(c.genders().len(), 2);
    }

    #[test]
    fn locale_shape() {
        assert!(Locale::try_from("en-US").is_ok());
        assert!(Locale::try_from("fil-PH").is_ok());
        for bad in ["en", "EN-us", "en-USA", "e-US", "en_US", ""] {
            assert!(Locale::try_from(bad).is_err(), "{bad}");
        }
        let json = r#"{"gender": "male", "locale": "english", "speaker_id": "x"}"#;
        assert!(serde_json::from_str::<VoiceSpec>(json).is_err());
    }

    #[test]
    fn catalog_rejects_duplicates_and_blank_ids() {
        let v = VoiceSpec::new(Gender::Male, "en-US", "A").unwrap();
        assert!(VoiceCatalog::new(vec![v.clone(), v]).is_err());
        assert!(VoiceSpec::new(Gender::Male, "en-US", " ").is_err());
    }

    #[test]
    fn sampling_is_seeded() {
        let c = VoiceCatalog::default_catalog();
        let draw = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..2)
                .map(|_| sample_voice(&c, &mut rng).unwrap())
                .collect::<Vec<_>>()
        };
        assert_eq!(draw(42), draw(42));
    }

    #[test]
    fn single_voice_and_empty_catalog() {
        let v = VoiceSpec::new(Gender::Female, "en-GB", "only").unwrap();
        let c = VoiceCatalog::new(vec![v.clone()]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            assert_eq!(sample_voice(&c, &mut rng).unwrap(), v);
        }
        let empty = VoiceCatalog::new(vec![]).unwrap();
        assert!(matches!(
            sample_voice(&empty, &mut rng),
            Err(TtsError::Config(_))
        ));
    }

    #[test]
    fn sampling_is_uniform() {
        let c = VoiceCatalog::default_catalog();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let mut counts: HashMap<String, usize> = HashMap::new();
        for _ in 0..79_000 {
            *counts
                .entry(sample_voice(&c, &mut rng).unwrap().speaker_id)
                .or_default() += 1;
        }
        assert_eq!(counts.len(), 79);
        assert!(
            counts.values().all(|&n| (850..=1150).contains(&n)),
            "{counts:?}"
        );
    }
}
