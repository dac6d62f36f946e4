//! Toy captioning corpus with a learnable image→caption mapping.
//!
//! Each image is a (color, animal, action, place) tuple. Its feature vector
//! concatenates one one-hot block per slot, and it gets five reference
//! captions, one per phrasing template.

use std::collections::HashSet;

use crate::corpus::captions::CaptionRecord;
use crate::corpus::features::FeatureStore;
use crate::nn::RngStream;

pub const COLORS: &[&str] = &[
    "red", "blue", "green", "yellow", "black", "white", "brown", "gray", "orange", "purple",
    "pink", "golden",
];

pub const ANIMALS: &[&str] = &[
    "cat", "dog", "horse", "bear", "sheep", "cow", "zebra", "giraffe", "elephant", "bird", "duck",
    "goat", "rabbit", "fox", "deer", "pig", "mouse", "lion", "tiger", "monkey",
];

pub const ACTIONS: &[&str] = &[
    "sitting", "standing", "running", "sleeping", "eating", "walking", "jumping", "resting",
    "playing", "lying", "waiting", "looking",
];

pub const PLACES: &[&str] = &[
    "on the grass",
    "in the snow",
    "near a river",
    "by the road",
    "under a tree",
    "on a beach",
    "in a field",
    "next to a fence",
    "on a bed",
    "in the water",
    "near a house",
    "on a hill",
];

pub const REFERENCES_PER_IMAGE: usize = 5;

/// How many entries of each word list the generator draws from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SynthSpec {
    pub colors: usize,
    pub animals: usize,
    pub actions: usize,
    pub places: usize,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            colors: COLORS.len(),
            animals: ANIMALS.len(),
            actions: ACTIONS.len(),
            places: PLACES.len(),
        }
    }
}

impl SynthSpec {
    fn clamped(self) -> Self {
        SynthSpec {
            colors: self.colors.clamp(1, COLORS.len()),
            animals: self.animals.clamp(1, ANIMALS.len()),
            actions: self.actions.clamp(1, ACTIONS.len()),
            places: self.places.clamp(1, PLACES.len()),
        }
    }

    pub fn feature_dim(&self) -> usize {
        let s = self.clamped();
        s.colors + s.animals + s.actions + s.places
    }

    pub fn combinations(&self) -> usize {
        let s = self.clamped();
        s.colors * s.animals * s.actions * s.places
    }
}

fn references(color: &str, animal: &str, action: &str, place: &str) -> [String; 5] {
    [
        format!("a {color} {animal} {action} {place}"),
        format!("the {color} {animal} is {action} {place}"),
        format!("there is a {color} {animal} {action} {place}"),
        format!("a {animal} that is {color} {action} {place}"),
        format!("one {color} {animal} {action} {place}"),
    ]
}

pub fn synth_image_id(i: usize) -> String {
    format!("synth_{i:05}")
}

/// Generates `n_images` images with distinct content tuples (while the
/// `SynthSpec` combination space allows it) and their reference captions.
pub fn synth_corpus(
    seed: u64,
    n_images: usize,
    spec: SynthSpec,
) -> (Vec<CaptionRecord>, FeatureStore) {
    let spec = spec.clamped();
    let mut rng = RngStream::derive(seed, &[0x5157]);
    let mut store = FeatureStore::new(spec.feature_dim());
    let mut captions = Vec::with_capacity(n_images * REFERENCES_PER_IMAGE);
    let mut used = HashSet::new();
    let sizes = [spec.colors, spec.animals, spec.actions, spec.places];

    for i in 0..n_images {
        let tuple = loop {
            let t: [usize; 4] = sizes.map(|n| rng.below(n as u64) as usize);
            if used.len() >= spec.combinations() || used.insert(t) {
                break t;
            }
        };
        let mut feature = vec![0.0f32; spec.feature_dim()];
        let mut offset = 0;
        for (slot, &n) in tuple.iter().zip(&sizes) {
            feature[offset + slot] = 1.0;
            offset += n;
        }
        let id = synth_image_id(i);
        store
            .insert(id.clone(), feature)
            .expect("ids are unique and dims match");
        for caption in references(
            COLORS[tuple[0]],
            ANIMALS[tuple[1]],
            ACTIONS[tuple[2]],
            PLACES[tuple[3]],
        ) {
            captions.push(CaptionRecord::new(id.clone(), caption));
        }
    }
    (captions, store)
}
