//! Template captions with contact-region and action slots.

use rand::Rng;

use super::{ContactRegion, Direction};
use crate::articulated_object::Category;
use crate::rng::seeded;

const TEMPLATES: [&str; 10] = [
    "{Verb} the {object} by grasping its {region} side.",
    "Grasp the {object} at the {region} and {verb} it.",
    "Hold the {region} of the {object} and {verb} it.",
    "Place your hand on the {region} of the {object}, then {verb} it.",
    "Reach for the {region} part of the {object} to {verb} it.",
    "With the palm on the {region} side, {verb} the {object}.",
    "Take the {object} by its {region} edge and {verb} it slowly.",
    "Touch the {region} of the {object} and {verb} it fully.",
    "Use one hand on the {region} of the {object} to {verb} it.",
    "{Verb} the {object} while gripping the {region}.",
];

pub fn template_count() -> usize {
    TEMPLATES.len()
}

pub fn fill_template(index: usize, category: Category, direction: Direction, region: ContactRegion) -> String {
    let verb = direction.verb();
    let mut capital = verb.to_string();
    capital[..1].make_ascii_uppercase();
    TEMPLATES[index % TEMPLATES.len()]
        .replace("{Verb}", &capital)
        .replace("{verb}", verb)
        .replace("{object}", category.name())
        .replace("{region}", region.word())
}

/// Caption for one sequence, drawn uniformly from the template bank.
pub fn caption_for(category: Category, direction: Direction, region: ContactRegion, seed: u64) -> String {
    let index = seeded(seed).random_range(0..TEMPLATES.len());
    fill_template(index, category, direction, region)
}

/// Every caption the template bank can produce.
pub fn all_captions() -> Vec<String> {
    let mut out = Vec::new();
    for category in Category::ALL {
        for direction in [Direction::Open, Direction::Close] {
            for region in ContactRegion::ALL {
                for i in 0..TEMPLATES.len() {
                    out.push(fill_template(i, category, direction, region));
                }
            }
        }
    }
    out
}
