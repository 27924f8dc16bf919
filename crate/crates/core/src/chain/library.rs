use std::collections::BTreeMap;
use std::path::Path;

use super::{parse_chain_file, ChainSet};
use crate::error::{Error, Result};

const BUILTIN: &[(&str, &str)] = &[
    ("robbery", include_str!("../../chains/robbery.json")),
    ("theft", include_str!("../../chains/theft.json")),
    ("fraud", include_str!("../../chains/fraud.json")),
    ("intentional_injury", include_str!("../../chains/intentional_injury.json")),
    ("misappropriation_of_funds", include_str!("../../chains/misappropriation_of_funds.json")),
    ("job_embezzlement", include_str!("../../chains/job_embezzlement.json")),
    ("dangerous_driving", include_str!("../../chains/dangerous_driving.json")),
    ("traffic_accident", include_str!("../../chains/traffic_accident.json")),
    ("drug_trafficking", include_str!("../../chains/drug_trafficking.json")),
    ("picking_quarrels", include_str!("../../chains/picking_quarrels.json")),
    ("illegal_detention", include_str!("../../chains/illegal_detention.json")),
    ("casino_operation", include_str!("../../chains/casino_operation.json")),
];

/// Charge identifiers of the bundled library, in library order.
pub fn builtin_charges() -> Vec<&'static str> {
    BUILTIN.iter().map(|(c, _)| *c).collect()
}

pub fn builtin_chain_set(charge: &str) -> Result<ChainSet> {
    let (_, text) = BUILTIN
        .iter()
        .find(|(c, _)| *c == charge)
        .ok_or_else(|| Error::Argument(format!("no built-in chain set for `{charge}`")))?;
    parse_chain_file(text)
}

pub fn builtin_chain_sets() -> Vec<ChainSet> {
    BUILTIN
        .iter()
        .map(|(_, text)| parse_chain_file(text).expect("bundled chain files are valid"))
        .collect()
}

/// Chain sets keyed by charge.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ChainLibrary {
    sets: BTreeMap<String, ChainSet>,
}

impl ChainLibrary {
    pub fn builtin() -> Self {
        Self::from_sets(builtin_chain_sets()).expect("bundled charges are distinct")
    }

    pub fn from_sets(sets: Vec<ChainSet>) -> Result<Self> {
        let mut lib = ChainLibrary::default();
        for cs in sets {
            lib.insert(cs)?;
        }
        Ok(lib)
    }

    pub fn insert(&mut self, cs: ChainSet) -> Result<()> {
        if self.sets.contains_key(&cs.charge) {
            return Err(Error::Validation(format!("two chain sets for charge `{}`", cs.charge)));
        }
        self.sets.insert(cs.charge.clone(), cs);
        Ok(())
    }

    /// Loads one chain file, or every `*.json` file of a directory in name
    /// order.
    pub fn load(path: &Path) -> Result<Self> {
        let files = if path.is_dir() {
            let mut v: Vec<_> = std::fs::read_dir(path)?
                .collect::<std::io::Result<Vec<_>>>()?
                .into_iter()
                .map(|e| e.path())
                .filter(|p| p.extension().is_some_and(|x| x == "json"))
                .collect();
            v.sort();
            v
        } else {
            vec![path.to_path_buf()]
        };
        let mut lib = ChainLibrary::default();
        for f in files {
            let text = std::fs::read_to_string(&f)?;
            let cs = parse_chain_file(&text).map_err(|e| match e {
                Error::Parse { location, message } => Error::Parse {
                    location: format!("{} {location}", f.display()),
                    message,
                },
                Error::Validation(m) => Error::Validation(format!("{}: {m}", f.display())),
                other => other,
            })?;
            lib.insert(cs)?;
        }
        if lib.is_empty() {
            return Err(Error::Validation(format!("no chain files under {}", path.display())));
        }
        Ok(lib)
    }

    pub fn get(&self, charge: &str) -> Option<&ChainSet> {
        self.sets.get(charge)
    }

    /// Like [`ChainLibrary::get`], but a missing charge is a configuration error.
    pub fn require(&self, charge: &str) -> Result<&ChainSet> {
        self.get(charge)
            .ok_or_else(|| Error::Config(format!("no chain set for charge `{charge}`")))
    }

    pub fn charges(&self) -> Vec<String> {
        self.sets.keys().cloned().collect()
    }

    pub fn sets(&self) -> impl Iterator<Item = &ChainSet> {
        self.sets.values()
    }

    pub fn len(&self) -> usize {
        self.sets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sets.is_empty()
    }

    /// Every display string and lexicon phrase in the library.
    pub fn texts(&self) -> Vec<String> {
        let mut out = Vec::new();
        for cs in self.sets.values() {
            out.extend(cs.texts());
            for c in &cs.chains {
                out.push(c.source_provision.clone());
                out.extend(c.lexicon.values().flatten().cloned());
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chain::validate_chain_set;

    #[test]
    fn every_bundled_set_parses_and_validates() {
        let sets = builtin_chain_sets();
        assert_eq!(sets.len(), 12);
        for (cs, id) in sets.iter().zip(builtin_charges()) {
            assert_eq!(cs.charge, id);
            let report = validate_chain_set(cs);
            assert!(report.all_checkable_pass(), "{report}");
        }
    }

    #[test]
    fn robbery_base_range() {
        let cs = builtin_chain_set("robbery").unwrap();
        assert_eq!(cs.chains[0].conclusion.min_months, 36);
        assert_eq!(cs.chains[0].conclusion.max_months, 120);
    }

    #[test]
    fn lexicon_covers_every_label() {
        for cs in builtin_chain_sets() {
            for c in &cs.chains {
                for l in c.premise.expr.labels().iter().chain(c.situation.expr.labels().iter()) {
                    assert!(c.lexicon.contains_key(l), "{}: no lexicon entry for `{l}`", cs.charge);
                }
            }
        }
    }
}
