use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::AnnotationError;

pub const HAZARD_COLOR: [u8; 3] = [230, 57, 70];
pub const USER_FLOW_COLOR: [u8; 3] = [69, 123, 157];

/// Slots handed to custom labels in first-use order.
pub const CUSTOM_PALETTE: [[u8; 3]; 12] = [
    [244, 162, 97],
    [42, 157, 143],
    [233, 196, 106],
    [131, 56, 236],
    [255, 0, 110],
    [58, 134, 255],
    [6, 214, 160],
    [255, 190, 11],
    [141, 153, 174],
    [188, 108, 37],
    [0, 180, 216],
    [106, 76, 147],
];

/// Label → color assignment. Predefined labels have fixed colors; custom
/// labels take palette slots in first-use order and, once the palette is
/// exhausted, a color derived from a hash of the label text.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelPalette {
    predefined: Vec<(String, [u8; 3])>,
    custom: Vec<(String, [u8; 3])>,
}

impl Default for LabelPalette {
    fn default() -> Self {
        Self::new()
    }
}

impl LabelPalette {
    pub fn new() -> Self {
        Self {
            predefined: vec![
                ("hazard".to_owned(), HAZARD_COLOR),
                ("user flow".to_owned(), USER_FLOW_COLOR),
            ],
            custom: Vec::new(),
        }
    }

    pub fn custom_labels(&self) -> impl Iterator<Item = &(String, [u8; 3])> {
        self.custom.iter()
    }

    pub fn lookup(&self, label: &str) -> Option<[u8; 3]> {
        self.predefined
            .iter()
            .chain(&self.custom)
            .find(|(l, _)| l == label)
            .map(|(_, c)| *c)
    }

    pub fn assign(&mut self, label: &str) -> Result<[u8; 3], AnnotationError> {
        if label.is_empty() {
            return Err(AnnotationError::EmptyLabel);
        }
        if let Some(c) = self.lookup(label) {
            return Ok(c);
        }
        let color = CUSTOM_PALETTE
            .get(self.custom.len())
            .copied()
            .unwrap_or_else(|| hashed_color(label));
        self.custom.push((label.to_owned(), color));
        Ok(color)
    }
}

fn hashed_color(label: &str) -> [u8; 3] {
    let h = Sha256::digest(label.as_bytes());
    [h[0], h[1], h[2]]
}

pub fn assign_label(mut palette: LabelPalette, label: &str) -> Result<(LabelPalette, [u8; 3]), AnnotationError> {
    let c = palette.assign(label)?;
    Ok((palette, c))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn predefined_labels_are_stable() {
        let mut p = LabelPalette::new();
        assert_eq!(p.assign("hazard").unwrap(), HAZARD_COLOR);
        assert_eq!(p.assign("hazard").unwrap(), HAZARD_COLOR);
        assert_eq!(p.assign("user flow").unwrap(), USER_FLOW_COLOR);
        assert_eq!(p.custom_labels().count(), 0);
    }

    #[test]
    fn twelve_custom_labels_are_distinct() {
        let mut p = LabelPalette::new();
        let colors: HashSet<[u8; 3]> = (0..12).map(|i| p.assign(&format!("label {i}")).unwrap()).collect();
        assert_eq!(colors.len(), 12);
        assert!(!colors.contains(&HAZARD_COLOR) && !colors.contains(&USER_FLOW_COLOR));
    }

    #[test]
    fn overflow_uses_label_hash() {
        let mut a = LabelPalette::new();
        for i in 0..12 {
            a.assign(&format!("x{i}")).unwrap();
        }
        let c = a.assign("thirteenth").unwrap();
        let mut b = LabelPalette::new();
        for i in 0..20 {
            b.assign(&format!("y{i}")).unwrap();
        }
        assert_eq!(b.assign("thirteenth").unwrap(), c);
    }

    #[test]
    fn empty_label_rejected() {
        assert_eq!(LabelPalette::new().assign(""), Err(AnnotationError::EmptyLabel));
        assert!(assign_label(LabelPalette::new(), "").is_err());
    }
}
