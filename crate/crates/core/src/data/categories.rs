use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Category {
    Statistical,
    Frequency,
    Covariance,
    Eigenvalue,
    Other,
}

impl Category {
    pub const ALL: [Category; 5] = [
        Category::Statistical,
        Category::Frequency,
        Category::Covariance,
        Category::Eigenvalue,
        Category::Other,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Category::Statistical => "statistical",
            Category::Frequency => "frequency",
            Category::Covariance => "covariance",
            Category::Eigenvalue => "eigenvalue",
            Category::Other => "other",
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Category {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Category::ALL
            .into_iter()
            .find(|c| c.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::invalid(format!("unknown feature category {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MatchKind {
    Prefix,
    Substring,
}

/// One ordered categorization rule. Matching is case-insensitive and ignores
/// leading `#` and whitespace in the column name.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CategoryRule {
    pub pattern: String,
    #[serde(rename = "match", default = "default_match")]
    pub kind: MatchKind,
    pub category: Category,
}

fn default_match() -> MatchKind {
    MatchKind::Prefix
}

impl CategoryRule {
    pub fn new(pattern: &str, kind: MatchKind, category: Category) -> Self {
        Self {
            pattern: pattern.to_string(),
            kind,
            category,
        }
    }

    fn matches(&self, name: &str) -> bool {
        let name = name.trim_start_matches(['#', ' ']).to_ascii_lowercase();
        let pat = self.pattern.to_ascii_lowercase();
        match self.kind {
            MatchKind::Prefix => name.starts_with(&pat),
            MatchKind::Substring => name.contains(&pat),
        }
    }

    /// Rules for the column prefixes of the public featurized EEG emotion table
    /// (`mean_`, `fft_`, `covmat_`, `eigen_`, ...). Treated as configuration.
    pub fn default_rules() -> Vec<CategoryRule> {
        use Category::*;
        use MatchKind::Prefix;
        [
            ("covmat", Covariance),
            ("logcov", Covariance),
            ("correlate", Covariance),
            ("eigen", Eigenvalue),
            ("fft", Frequency),
            ("freq", Frequency),
            ("mean", Statistical),
            ("stddev", Statistical),
            ("moments", Statistical),
            ("max", Statistical),
            ("min", Statistical),
            ("entropy", Statistical),
            ("logm", Statistical),
            ("stat", Statistical),
        ]
        .into_iter()
        .map(|(p, c)| CategoryRule::new(p, Prefix, c))
        .collect()
    }
}

/// Feature index to category assignment.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoryMap {
    pub assignment: Vec<Category>,
}

impl CategoryMap {
    pub fn len(&self) -> usize {
        self.assignment.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assignment.is_empty()
    }

    pub fn indices_of(&self, category: Category) -> Vec<usize> {
        self.assignment
            .iter()
            .enumerate()
            .filter(|&(_, &c)| c == category)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn indices_without(&self, category: Category) -> Vec<usize> {
        self.assignment
            .iter()
            .enumerate()
            .filter(|&(_, &c)| c != category)
            .map(|(i, _)| i)
            .collect()
    }

    /// Categories that have at least one feature, in canonical order.
    pub fn present(&self) -> Vec<Category> {
        Category::ALL
            .into_iter()
            .filter(|c| self.assignment.contains(c))
            .collect()
    }
}

/// First matching rule wins; unmatched names fall into [`Category::Other`].
pub fn categorize_features<S: AsRef<str>>(names: &[S], rules: &[CategoryRule]) -> CategoryMap {
    let assignment = names
        .iter()
        .map(|n| {
            rules
                .iter()
                .find(|r| r.matches(n.as_ref()))
                .map_or(Category::Other, |r| r.category)
        })
        .collect();
    CategoryMap { assignment }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rule_matches() {
        let rules = CategoryRule::default_rules();
        let map = categorize_features(&["covmat_12_5", "fft_750_b", "zzz", "# mean_0_a"], &rules);
        assert_eq!(
            map.assignment,
            vec![
                Category::Covariance,
                Category::Frequency,
                Category::Other,
                Category::Statistical
            ]
        );
    }

    #[test]
    fn first_matching_rule_wins() {
        let rules = vec![
            CategoryRule::new("cov", MatchKind::Substring, Category::Covariance),
            CategoryRule::new("eig", MatchKind::Prefix, Category::Eigenvalue),
        ];
        let map = categorize_features(&["eig_cov_1", "eig_1"], &rules);
        assert_eq!(
            map.assignment,
            vec![Category::Covariance, Category::Eigenvalue]
        );
        assert_eq!(map.indices_of(Category::Eigenvalue), vec![1]);
        assert_eq!(map.indices_without(Category::Eigenvalue), vec![0]);
        assert_eq!(
            map.present(),
            vec![Category::Covariance, Category::Eigenvalue]
        );
    }

    #[test]
    fn category_parsing() {
        assert_eq!(
            "Covariance".parse::<Category>().unwrap(),
            Category::Covariance
        );
        assert!("spectral".parse::<Category>().is_err());
    }
}
