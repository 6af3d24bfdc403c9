use std::collections::BTreeMap;

use crate::datagen::SyntheticWorld;

/// One sense of a category name.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sense {
    pub label: String,
    pub visual: bool,
    pub mode_tag: Option<String>,
}

impl Sense {
    pub fn visual(label: &str) -> Self {
        Sense {
            label: label.to_string(),
            visual: true,
            mode_tag: None,
        }
    }

    pub fn non_visual(label: &str) -> Self {
        Sense {
            label: label.to_string(),
            visual: false,
            mode_tag: None,
        }
    }
}

/// Category name → known senses. A name is polysemous when it has two or
/// more senses.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Lexicon {
    entries: BTreeMap<String, Vec<Sense>>,
}

impl Lexicon {
    pub fn empty() -> Self {
        Lexicon::default()
    }

    pub fn builtin() -> Self {
        use Sense as S;
        let mut lex = Lexicon::empty();
        lex.insert("crane", vec![S::visual("bird"), S::visual("construction equipment")]);
        lex.insert("apple", vec![S::visual("fruit"), S::visual("company logo")]);
        lex.insert("bat", vec![S::visual("animal"), S::visual("sports equipment")]);
        lex.insert("mouse", vec![S::visual("animal"), S::visual("computer device")]);
        lex.insert("seal", vec![S::visual("animal"), S::visual("wax emblem")]);
        lex.insert("bass", vec![S::visual("fish"), S::visual("guitar")]);
        lex.insert("palm", vec![S::visual("tree"), S::visual("hand")]);
        lex.insert(
            "trunk",
            vec![S::visual("tree"), S::visual("elephant"), S::visual("car storage")],
        );
        lex.insert("jaguar", vec![S::visual("animal"), S::visual("car")]);
        lex.insert(
            "mole",
            vec![
                S::visual("animal"),
                S::visual("skin blemish"),
                S::non_visual("unit of measurement"),
            ],
        );
        lex.insert("bow", vec![S::visual("weapon"), S::visual("ribbon"), S::visual("ship front")]);
        lex
    }

    /// One entry per multimodal class of `world`, each sense tagged with its mode.
    pub fn from_world(world: &SyntheticWorld) -> Self {
        let mut lex = Lexicon::empty();
        for c in 0..world.num_classes() {
            let senses: Vec<Sense> = world
                .senses(c)
                .into_iter()
                .map(|(label, tag)| Sense {
                    label,
                    visual: true,
                    mode_tag: Some(tag),
                })
                .collect();
            if !senses.is_empty() {
                lex.insert(&world.class_names[c], senses);
            }
        }
        lex
    }

    pub fn insert(&mut self, name: &str, senses: Vec<Sense>) {
        self.entries.insert(name.to_string(), senses);
    }

    /// Adds `other`'s entries, replacing existing names.
    pub fn extend(&mut self, other: Lexicon) {
        self.entries.extend(other.entries);
    }

    pub fn senses(&self, name: &str) -> &[Sense] {
        self.entries.get(name).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn is_polysemous(&self, name: &str) -> bool {
        self.senses(name).len() >= 2
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}
