use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use super::Sample;
use crate::error::{Error, Result};

/// Intent labels plus the slot-label hierarchy and BIO tag inventory.
///
/// Level 1 is the coarsest slot level; the last level holds the fine labels
/// seen in training data. All label lists are sorted lexicographically. Tags
/// are ordered `O`, then `B-l`, `I-l` for each fine label `l` in order, so tag
/// `1 + 2j` is `B-` and `2 + 2j` is `I-` of fine label `j`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelHierarchy {
    pub intent_labels: Vec<String>,
    pub slot_levels: Vec<Vec<String>>,
    /// `parents[k][j]` is the index at level `k` of the parent of label `j`
    /// at level `k + 1` (0-based levels). Empty for a single level.
    pub parents: Vec<Vec<usize>>,
    pub tags: Vec<String>,
}

/// Coarse type of a fine slot label: the text before the first `.`, or the
/// whole label.
pub fn coarse_label(fine: &str) -> &str {
    fine.split_once('.').map_or(fine, |(head, _)| head)
}

impl LabelHierarchy {
    /// Builds the hierarchy from training samples with `levels` slot levels
    /// (1 or 2).
    pub fn build(train: &[Sample], levels: usize) -> Result<Self> {
        let intents: BTreeSet<&str> = train
            .iter()
            .flat_map(|s| s.intents.iter().map(String::as_str))
            .collect();
        let fine: BTreeSet<&str> = train.iter().flat_map(|s| s.slot_labels()).collect();
        Self::from_labels(intents, fine, levels)
    }

    pub fn from_labels<'a>(
        intents: impl IntoIterator<Item = &'a str>,
        fine: impl IntoIterator<Item = &'a str>,
        levels: usize,
    ) -> Result<Self> {
        let intent_labels: Vec<String> = intents
            .into_iter()
            .collect::<BTreeSet<_>>()
            .into_iter()
            .map(str::to_string)
            .collect();
        let fine: Vec<String> = fine
            .into_iter()
            .collect::<BTreeSet<_>>()
            .into_iter()
            .map(str::to_string)
            .collect();
        if intent_labels.is_empty() {
            return Err(Error::Config("no intent labels in training data".into()));
        }
        let (slot_levels, parents) = match levels {
            1 => (vec![fine.clone()], Vec::new()),
            2 => {
                let coarse: Vec<String> = fine
                    .iter()
                    .map(|f| coarse_label(f))
                    .collect::<BTreeSet<_>>()
                    .into_iter()
                    .map(str::to_string)
                    .collect();
                if coarse.len() == fine.len() {
                    log::warn!("two slot levels requested but every fine label is its own parent");
                }
                let index: HashMap<&str, usize> =
                    coarse.iter().enumerate().map(|(i, c)| (c.as_str(), i)).collect();
                let parent = fine.iter().map(|f| index[coarse_label(f)]).collect();
                (vec![coarse, fine.clone()], vec![parent])
            }
            other => {
                return Err(Error::Config(format!(
                    "slot hierarchy depth must be 1 or 2, got {other}"
                )))
            }
        };
        let mut tags = vec!["O".to_string()];
        for f in &fine {
            tags.push(format!("B-{f}"));
            tags.push(format!("I-{f}"));
        }
        Ok(LabelHierarchy {
            intent_labels,
            slot_levels,
            parents,
            tags,
        })
    }

    pub fn levels(&self) -> usize {
        self.slot_levels.len()
    }

    pub fn fine_labels(&self) -> &[String] {
        self.slot_levels.last().expect("at least one level")
    }

    pub fn level_sizes(&self) -> Vec<usize> {
        self.slot_levels.iter().map(Vec::len).collect()
    }

    pub fn num_intents(&self) -> usize {
        self.intent_labels.len()
    }

    /// `2 |fine| + 1`.
    pub fn tag_count(&self) -> usize {
        self.tags.len()
    }

    pub fn intent_index(&self, label: &str) -> Option<usize> {
        self.intent_labels.binary_search_by(|l| l.as_str().cmp(label)).ok()
    }

    pub fn tag_index(&self, tag: &str) -> Option<usize> {
        if tag == "O" {
            return Some(0);
        }
        let (prefix, label) = tag.split_once('-')?;
        let j = self
            .fine_labels()
            .binary_search_by(|l| l.as_str().cmp(label))
            .ok()?;
        match prefix {
            "B" => Some(1 + 2 * j),
            "I" => Some(2 + 2 * j),
            _ => None,
        }
    }

    /// Fine-label index of a tag id, `None` for `O`.
    pub fn tag_label(&self, tag: usize) -> Option<usize> {
        (tag > 0).then(|| (tag - 1) / 2)
    }

    pub fn is_inside_tag(&self, tag: usize) -> bool {
        tag > 0 && tag.is_multiple_of(2)
    }

    /// Index at level `level` (0-based) of the ancestor of fine label `fine`.
    pub fn ancestor(&self, fine: usize, level: usize) -> usize {
        let mut idx = fine;
        let mut k = self.levels() - 1;
        while k > level {
            idx = self.parents[k - 1][idx];
            k -= 1;
        }
        idx
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_levels_group_by_prefix() {
        let h = LabelHierarchy::from_labels(
            ["atis_flight"],
            ["toloc.city_name", "fromloc.city_name", "city_name"],
            2,
        )
        .unwrap();
        assert_eq!(h.slot_levels[0], vec!["city_name", "fromloc", "toloc"]);
        assert_eq!(
            h.slot_levels[1],
            vec!["city_name", "fromloc.city_name", "toloc.city_name"]
        );
        assert_eq!(h.parents, vec![vec![0, 1, 2]]);
        assert_eq!(h.tag_count(), 7);
    }

    #[test]
    fn single_level_has_no_parents() {
        let h = LabelHierarchy::from_labels(["a"], ["x.y", "z"], 1).unwrap();
        assert_eq!(h.slot_levels, vec![vec!["x.y".to_string(), "z".to_string()]]);
        assert!(h.parents.is_empty());
    }

    #[test]
    fn tag_indexing_round_trips() {
        let h = LabelHierarchy::from_labels(["a"], ["b.x", "b.y", "c"], 2).unwrap();
        for (i, t) in h.tags.iter().enumerate() {
            assert_eq!(h.tag_index(t), Some(i));
        }
        assert_eq!(h.tag_index("B-missing"), None);
        assert_eq!(h.tag_label(3), Some(1));
        assert!(h.is_inside_tag(4));
        assert_eq!(h.ancestor(1, 0), 0);
        assert_eq!(h.ancestor(2, 0), 1);
    }

    #[test]
    fn bad_depth_is_config_error() {
        assert!(matches!(
            LabelHierarchy::from_labels(["a"], ["b"], 3),
            Err(Error::Config(_))
        ));
    }
}
