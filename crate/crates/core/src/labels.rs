//! Category registry shared by the data generator, prompt builder, and
//! response parser.

/// One of the seven single-emotion classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BasicEmotion {
    pub name: &'static str,
    /// Lower-case noun used in composed descriptions ("sadness").
    pub noun: &'static str,
    /// Canonical facial features, as a noun phrase.
    pub features: &'static str,
}

/// A two-parent blend such as "Happily Surprised".
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CompoundEmotion {
    pub name: &'static str,
    pub parents: (&'static str, &'static str),
}

pub const BASIC: [BasicEmotion; 7] = [
    BasicEmotion {
        name: "Sadness",
        noun: "sadness",
        features: "downturned lips and drooping upper eyelids",
    },
    BasicEmotion {
        name: "Surprise",
        noun: "surprise",
        features: "raised eyebrows and wide-open eyes",
    },
    BasicEmotion {
        name: "Happiness",
        noun: "happiness",
        features: "a bright smile and raised cheeks",
    },
    BasicEmotion {
        name: "Disgust",
        noun: "disgust",
        features: "a wrinkled nose and a raised upper lip",
    },
    BasicEmotion {
        name: "Anger",
        noun: "anger",
        features: "a furrowed brow and tightly pressed lips",
    },
    BasicEmotion {
        name: "Fear",
        noun: "fear",
        features: "widened eyes and tense, stretched lips",
    },
    BasicEmotion {
        name: "Neutral",
        noun: "neutrality",
        features: "relaxed facial muscles and a closed mouth",
    },
];

/// The eleven compound classes of the RAF-DB compound subset, in table order.
pub const RAFDB_COMPOUND: [CompoundEmotion; 11] = [
    CompoundEmotion {
        name: "Happily Surprised",
        parents: ("Happiness", "Surprise"),
    },
    CompoundEmotion {
        name: "Sadly Disgusted",
        parents: ("Sadness", "Disgust"),
    },
    CompoundEmotion {
        name: "Happily Disgusted",
        parents: ("Happiness", "Disgust"),
    },
    CompoundEmotion {
        name: "Fearfully Angry",
        parents: ("Fear", "Anger"),
    },
    CompoundEmotion {
        name: "Angrily Disgusted",
        parents: ("Anger", "Disgust"),
    },
    CompoundEmotion {
        name: "Angrily Surprised",
        parents: ("Anger", "Surprise"),
    },
    CompoundEmotion {
        name: "Sadly Surprised",
        parents: ("Sadness", "Surprise"),
    },
    CompoundEmotion {
        name: "Fearfully Surprised",
        parents: ("Fear", "Surprise"),
    },
    CompoundEmotion {
        name: "Disgustedly Surprised",
        parents: ("Disgust", "Surprise"),
    },
    CompoundEmotion {
        name: "Sadly Fearful",
        parents: ("Sadness", "Fear"),
    },
    CompoundEmotion {
        name: "Sadly Angry",
        parents: ("Sadness", "Anger"),
    },
];

/// The seven compound classes of the C-EXPR-DB challenge.
pub const CHALLENGE: [&str; 7] = [
    "Fearfully Surprised",
    "Happily Surprised",
    "Sadly Surprised",
    "Disgustedly Surprised",
    "Angrily Surprised",
    "Sadly Fearful",
    "Sadly Angry",
];

/// Hand-written definitions that take precedence over composed ones.
const WRITTEN_DEFINITIONS: [(&str, &str); 3] = [
    (
        "Fearfully Surprised",
        "A mix of fear and surprise, characterized by widened eyes, raised eyebrows, and a slightly open mouth.",
    ),
    (
        "Happily Surprised",
        "A blend of happiness and surprise, featuring a bright smile, raised eyebrows, and wide-open eyes.",
    ),
    (
        "Sadly Surprised",
        "A combination of sadness and surprise, with downturned lips, raised eyebrows, and a look of shock.",
    ),
];

pub fn basic_labels() -> Vec<String> {
    BASIC.iter().map(|b| b.name.to_string()).collect()
}

pub fn rafdb_compound_labels() -> Vec<String> {
    RAFDB_COMPOUND.iter().map(|c| c.name.to_string()).collect()
}

pub fn challenge_labels() -> Vec<String> {
    CHALLENGE.iter().map(|c| c.to_string()).collect()
}

/// Resolves a named category set: `basic`, `compound` (alias `rafdb`), or
/// `challenge`.
pub fn category_set(name: &str) -> Option<Vec<String>> {
    match name.trim().to_ascii_lowercase().as_str() {
        "basic" => Some(basic_labels()),
        "compound" | "rafdb" | "rafdb-compound" => Some(rafdb_compound_labels()),
        "challenge" => Some(challenge_labels()),
        _ => None,
    }
}

pub fn basic(name: &str) -> Option<&'static BasicEmotion> {
    BASIC.iter().find(|b| b.name == name)
}

pub fn compound(name: &str) -> Option<&'static CompoundEmotion> {
    RAFDB_COMPOUND.iter().find(|c| c.name == name)
}

/// Facial-feature description for any registered category. Compound
/// categories without a written definition are composed from their parents.
pub fn description(name: &str) -> Option<String> {
    if let Some((_, d)) = WRITTEN_DEFINITIONS.iter().find(|(n, _)| *n == name) {
        return Some(d.to_string());
    }
    if let Some(b) = basic(name) {
        return Some(format!("Characterized by {}.", b.features));
    }
    let c = compound(name)?;
    let (p, q) = (basic(c.parents.0)?, basic(c.parents.1)?);
    Some(format!(
        "A blend of {} and {}, combining {} with {}.",
        p.noun, q.noun, p.features, q.features
    ))
}
