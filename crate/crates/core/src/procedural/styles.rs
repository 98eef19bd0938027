use serde::{Deserialize, Serialize};

/// Number of rendering styles besides the base domain (style 0).
pub const N_STYLES: usize = 25;

/// Colors and stroke parameters of one rendering style.
///
/// Every style keeps skin, background and outline colors low in saturation
/// and the feature colors strongly channel-dominant (eyes blue, nose green,
/// mouth red), so features can be located by color in any style.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StyleSpec {
    pub style_id: usize,
    pub skin: [f32; 3],
    pub background: [f32; 3],
    pub outline: [f32; 3],
    pub eye: [f32; 3],
    pub nose: [f32; 3],
    pub mouth: [f32; 3],
    pub line_width_px: f64,
    /// Multiplier on the drawn feature size.
    pub exaggeration: f64,
}

const SKINS: [[f32; 3]; 8] = [
    [0.86, 0.76, 0.68],
    [0.74, 0.62, 0.54],
    [0.92, 0.88, 0.80],
    [0.60, 0.52, 0.46],
    [0.80, 0.80, 0.74],
    [0.70, 0.72, 0.78],
    [0.88, 0.82, 0.62],
    [0.52, 0.46, 0.44],
];

const BACKGROUNDS: [[f32; 3]; 7] = [
    [0.30, 0.30, 0.32],
    [0.96, 0.96, 0.94],
    [0.18, 0.22, 0.26],
    [0.62, 0.66, 0.58],
    [0.44, 0.38, 0.36],
    [0.78, 0.74, 0.82],
    [0.08, 0.08, 0.10],
];

const OUTLINES: [[f32; 3]; 3] = [[0.20, 0.15, 0.12], [0.05, 0.05, 0.08], [0.35, 0.30, 0.32]];

impl StyleSpec {
    /// The style for `style_id` in `0..=25`; 0 is the base domain.
    pub fn get(style_id: usize) -> Option<StyleSpec> {
        if style_id > N_STYLES {
            return None;
        }
        let i = style_id as f32;
        // small per-style shade shifts keep the dominant channel margin ≥ 0.45
        let shade = (style_id % 5) as f32 * 0.04;
        Some(StyleSpec {
            style_id,
            skin: SKINS[style_id % SKINS.len()],
            background: BACKGROUNDS[style_id % BACKGROUNDS.len()],
            outline: OUTLINES[style_id % OUTLINES.len()],
            eye: [0.10 + shade, 0.22 + 0.5 * shade, 0.92 - 0.5 * shade],
            nose: [0.12 + 0.5 * shade, 0.85 - 0.5 * shade, 0.20 + 0.5 * shade],
            mouth: [0.95 - 0.5 * shade, 0.12 + shade, 0.18 + 0.02 * (i % 3.0)],
            line_width_px: if style_id == 0 { 1.0 } else { 1.0 + (style_id % 2) as f64 },
            exaggeration: if style_id == 0 { 1.0 } else { [1.0, 1.15, 1.3][style_id % 3] },
        })
    }

    pub fn base() -> StyleSpec {
        Self::get(0).expect("style 0 exists")
    }

    pub fn all_styled() -> Vec<StyleSpec> {
        (1..=N_STYLES).filter_map(StyleSpec::get).collect()
    }
}
