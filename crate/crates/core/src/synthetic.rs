//! Seeded synthetic recipe corpus for offline runs, tests and benchmarks.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::task::{Domain, ManualTask, Step};
use crate::text;

const INGREDIENTS: &[&str] = &[
    "onion", "garlic", "tomato", "carrot", "potato", "chicken", "rice", "pasta", "spinach", "mushroom",
    "pepper", "zucchini", "salmon", "tofu", "lentils", "avocado", "cheese", "eggs", "butter", "flour",
];

const TEMPLATES: &[&str] = &[
    "Chop the {a} into small pieces.",
    "Peel and slice the {a}.",
    "Heat oil in a large pan.",
    "Add the {a} to the pan.",
    "Stir the {a} and the {b} together.",
    "Season the {a} with salt and pepper.",
    "Boil the {a} in salted water.",
    "Bake the {a} in the oven until golden.",
    "Mix the {a} with the {b} in a bowl.",
    "Simmer the {a} with the {b} over low heat.",
    "Drain the {a} and set aside.",
    "Spread the {b} over the {a}.",
    "Arrange the {a} on a serving plate.",
];

/// `n` recipe tasks of 4 to 6 steps. Roughly a third of the tasks repeat an
/// earlier step verbatim so that similarity-gated copying gets exercised.
pub fn corpus(n: usize, seed: u64) -> Vec<ManualTask> {
    (0..n).map(|k| task(&format!("synthetic-{k:04}"), text::derive_seed(seed, &["synthetic", &k.to_string()]))).collect()
}

pub fn task(id: &str, seed: u64) -> ManualTask {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let len = rng.random_range(4..=6);
    let picks: Vec<&str> = INGREDIENTS.choose_multiple(&mut rng, 3).copied().collect();
    let mut templates: Vec<&str> = TEMPLATES.to_vec();
    templates.shuffle(&mut rng);
    let mut steps: Vec<String> = templates
        .iter()
        .take(len)
        .map(|t| {
            let a = picks[rng.random_range(0..picks.len())];
            let b = picks.iter().copied().find(|p| *p != a).unwrap_or(a);
            t.replace("{a}", a).replace("{b}", b)
        })
        .collect();
    if rng.random_bool(1.0 / 3.0) {
        let src = rng.random_range(0..len - 2);
        let dst = rng.random_range(src + 2..len);
        steps[dst] = steps[src].clone();
    }
    ManualTask {
        id: id.to_string(),
        domain: Domain::Recipes,
        title: format!("{} with {}", picks[0], picks[1]),
        description: String::new(),
        resources: picks.iter().map(|p| p.to_string()).collect(),
        steps: steps
            .into_iter()
            .enumerate()
            .map(|(i, text)| Step { index: i + 1, text, ground_truth_image: None })
            .collect(),
    }
}
