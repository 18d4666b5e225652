//! System prompts. The wording is editable; the reply schemas are what the
//! parsers enforce.

use regionpost_core::layout::LAYOUT_SCHEMA;

pub const THEME: &str = include_str!("../prompts/theme.txt");
pub const COGNITION_SCENES: &str = include_str!("../prompts/cognition_scenes.txt");
pub const COGNITION_ELEMENTS: &str = include_str!("../prompts/cognition_elements.txt");
pub const COGNITION_COLORS: &str = include_str!("../prompts/cognition_colors.txt");
pub const REFINER: &str = include_str!("../prompts/refiner.txt");
const ARRANGER: &str = include_str!("../prompts/arranger.txt");

pub fn arranger() -> String {
    ARRANGER.replace("{schema}", LAYOUT_SCHEMA.trim())
}
