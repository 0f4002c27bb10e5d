use std::collections::HashMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

const DEFAULT_TAXONOMY: &str = include_str!("../../config/taxonomy.csv");

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SafetyClass {
    Modifiable,
    Borderline,
    NonModifiable,
}

impl SafetyClass {
    pub fn parse(s: &str) -> Option<Self> {
        match s
            .trim()
            .to_ascii_lowercase()
            .replace(['-', ' '], "_")
            .as_str()
        {
            "modifiable" => Some(SafetyClass::Modifiable),
            "borderline" => Some(SafetyClass::Borderline),
            "non_modifiable" | "not_modifiable" => Some(SafetyClass::NonModifiable),
            _ => None,
        }
    }
}

impl fmt::Display for SafetyClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SafetyClass::Modifiable => "modifiable",
            SafetyClass::Borderline => "borderline",
            SafetyClass::NonModifiable => "non_modifiable",
        })
    }
}

/// Lookup key for feature names: case-folded, `_`/`.` treated as spaces,
/// whitespace collapsed. `Engine_coolant_temperature` and
/// `Engine coolant temperature` are the same feature.
pub fn canonical_name(name: &str) -> String {
    name.replace(['_', '.'], " ")
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase()
}

/// Per-feature safety class, in file order.
#[derive(Clone, Debug, PartialEq)]
pub struct SafetyTaxonomy {
    entries: Vec<(String, SafetyClass)>,
    index: HashMap<String, usize>,
}

impl SafetyTaxonomy {
    fn from_entries(entries: Vec<(String, SafetyClass)>) -> Result<Self> {
        let mut index = HashMap::new();
        for (i, (name, _)) in entries.iter().enumerate() {
            if index.insert(canonical_name(name), i).is_some() {
                return Err(Error::TaxonomyDuplicate(name.clone()));
            }
        }
        Ok(SafetyTaxonomy { entries, index })
    }

    /// Parses `feature_name,class` lines. Blank lines and `#` comments are
    /// skipped. The class is whatever follows the last comma.
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (name, class) = line.rsplit_once(',').ok_or(Error::TaxonomyParse {
                line: i + 1,
                reason: "expected `feature_name,class`".into(),
            })?;
            let class = SafetyClass::parse(class).ok_or_else(|| Error::TaxonomyParse {
                line: i + 1,
                reason: format!("unknown class {:?}", class.trim()),
            })?;
            entries.push((name.trim().to_string(), class));
        }
        Self::from_entries(entries)
    }

    /// The shipped 46-feature assignment (22 modifiable, 15 borderline, 9
    /// non-modifiable).
    pub fn default_ocslab() -> Self {
        Self::parse(DEFAULT_TAXONOMY).expect("shipped taxonomy parses")
    }

    pub fn feature_names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(n, _)| n.as_str())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn class_of(&self, feature: &str) -> Option<SafetyClass> {
        self.index
            .get(&canonical_name(feature))
            .map(|&i| self.entries[i].1)
    }

    pub fn count(&self, class: SafetyClass) -> usize {
        self.entries.iter().filter(|(_, c)| *c == class).count()
    }

    /// Checks that the taxonomy covers exactly `features`.
    pub fn check_covers(&self, features: &[String]) -> Result<()> {
        for f in features {
            if self.class_of(f).is_none() {
                return Err(Error::TaxonomyMissing(f.clone()));
            }
        }
        if self.entries.len() != features.len() {
            let wanted: std::collections::HashSet<String> =
                features.iter().map(|f| canonical_name(f)).collect();
            if let Some((extra, _)) = self
                .entries
                .iter()
                .find(|(n, _)| !wanted.contains(&canonical_name(n)))
            {
                return Err(Error::TaxonomyUnknown(extra.clone()));
            }
        }
        Ok(())
    }

    /// Classes in the order of `features`.
    pub fn classes_for(&self, features: &[String]) -> Result<Vec<SafetyClass>> {
        features
            .iter()
            .map(|f| {
                self.class_of(f)
                    .ok_or_else(|| Error::TaxonomyMissing(f.clone()))
            })
            .collect()
    }

    /// Indices (into `features`) of the modifiable columns.
    pub fn modifiable_indices(&self, features: &[String]) -> Result<Vec<usize>> {
        Ok(self
            .classes_for(features)?
            .iter()
            .enumerate()
            .filter(|(_, c)| **c == SafetyClass::Modifiable)
            .map(|(i, _)| i)
            .collect())
    }
}

/// Loads a taxonomy file and checks it covers `features` exactly once each.
pub fn load_taxonomy(path: &Path, features: &[String]) -> Result<SafetyTaxonomy> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let tax = SafetyTaxonomy::parse(&text)?;
    tax.check_covers(features)?;
    Ok(tax)
}

/// The 46 feature names of the shipped taxonomy, in file order.
pub fn default_feature_names() -> Vec<String> {
    SafetyTaxonomy::default_ocslab()
        .feature_names()
        .map(str::to_string)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_counts_and_examples() {
        let t = SafetyTaxonomy::default_ocslab();
        assert_eq!(t.len(), 46);
        assert_eq!(t.count(SafetyClass::Modifiable), 22);
        assert_eq!(t.count(SafetyClass::Borderline), 15);
        assert_eq!(t.count(SafetyClass::NonModifiable), 9);
        let m = Some(SafetyClass::Modifiable);
        let b = Some(SafetyClass::Borderline);
        let n = Some(SafetyClass::NonModifiable);
        assert_eq!(t.class_of("Engine coolant temperature"), m);
        assert_eq!(t.class_of("Intake air pressure"), m);
        assert_eq!(t.class_of("Calculated road gradient"), m);
        assert_eq!(t.class_of("Engine speed"), b);
        assert_eq!(t.class_of("Acceleration speed - Lateral"), b);
        assert_eq!(t.class_of("Torque converter speed"), b);
        assert_eq!(t.class_of("Throttle position signal"), n);
        assert_eq!(t.class_of("Current gear"), n);
        assert_eq!(t.class_of("Master cylinder pressure"), n);
        assert_eq!(t.class_of("Engine_coolant_temperature"), m);
    }

    #[test]
    fn missing_feature_is_named() {
        let mut feats = default_feature_names();
        let text: String = DEFAULT_TAXONOMY
            .lines()
            .filter(|l| !l.starts_with("Current gear"))
            .map(|l| format!("{l}\n"))
            .collect();
        let t = SafetyTaxonomy::parse(&text).unwrap();
        match t.check_covers(&feats) {
            Err(Error::TaxonomyMissing(name)) => assert_eq!(name, "Current gear"),
            other => panic!("unexpected {other:?}"),
        }
        feats.retain(|f| f != "Current gear");
        t.check_covers(&feats).unwrap();
    }

    #[test]
    fn duplicate_feature_is_rejected() {
        let text = "a,modifiable\nb,borderline\nA,non_modifiable\n";
        assert!(matches!(
            SafetyTaxonomy::parse(text),
            Err(Error::TaxonomyDuplicate(_))
        ));
    }

    #[test]
    fn unknown_class_is_rejected() {
        assert!(matches!(
            SafetyTaxonomy::parse("a,dangerous\n"),
            Err(Error::TaxonomyParse { line: 1, .. })
        ));
    }
}
