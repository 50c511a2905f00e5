//! Overlapping grouping structures, selection rules and the grouping file format.

use std::collections::{BTreeSet, HashMap, HashSet};

use serde_json::Value;

use crate::error::{Error, Result};

pub const DEFAULT_WEIGHT: f64 = 1.0;
pub const DEFAULT_SUPPORT_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct Group {
    pub name: String,
    /// 0-based covariate indices, sorted ascending.
    pub members: Vec<usize>,
    pub weight: f64,
}

impl Group {
    pub fn new(name: impl Into<String>, members: impl IntoIterator<Item = usize>, weight: f64) -> Self {
        let mut members: Vec<usize> = members.into_iter().collect();
        members.sort_unstable();
        members.dedup();
        Self {
            name: name.into(),
            members,
            weight,
        }
    }
}

/// Ordered list of possibly overlapping groups over `p` covariates.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupingStructure {
    groups: Vec<Group>,
    p: usize,
    variable_names: Option<Vec<String>>,
    unpenalized: Vec<usize>,
}

impl GroupingStructure {
    /// Builds and validates.
    pub fn new(p: usize, groups: Vec<Group>) -> Result<Self> {
        let s = Self::new_unchecked(p, groups);
        s.validate().map_err(Error::Grouping)?;
        Ok(s)
    }

    pub fn new_unchecked(p: usize, groups: Vec<Group>) -> Self {
        Self {
            groups,
            p,
            variable_names: None,
            unpenalized: Vec::new(),
        }
    }

    pub fn with_variable_names(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() != self.p {
            return Err(Error::Dimension {
                expected: self.p,
                found: names.len(),
            });
        }
        self.variable_names = Some(names);
        Ok(self)
    }

    /// Marks covariates as unpenalized; they must not appear in any group.
    pub fn with_unpenalized(mut self, unpenalized: impl IntoIterator<Item = usize>) -> Result<Self> {
        let mut u: Vec<usize> = unpenalized.into_iter().collect();
        u.sort_unstable();
        u.dedup();
        self.unpenalized = u;
        self.validate().map_err(Error::Grouping)?;
        Ok(self)
    }

    pub fn groups(&self) -> &[Group] {
        &self.groups
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn variable_names(&self) -> Option<&[String]> {
        self.variable_names.as_deref()
    }

    pub fn unpenalized(&self) -> &[usize] {
        &self.unpenalized
    }

    pub fn weights(&self) -> Vec<f64> {
        self.groups.iter().map(|g| g.weight).collect()
    }

    /// Same groups with new weights.
    pub fn reweighted(&self, weights: &[f64]) -> Result<Self> {
        if weights.len() != self.groups.len() {
            return Err(Error::Dimension {
                expected: self.groups.len(),
                found: weights.len(),
            });
        }
        let mut out = self.clone();
        for (g, &w) in out.groups.iter_mut().zip(weights) {
            g.weight = w;
        }
        out.validate().map_err(Error::Grouping)?;
        Ok(out)
    }

    /// Checks every invariant and returns all violations.
    pub fn validate(&self) -> std::result::Result<(), Vec<String>> {
        let mut diags = Vec::new();
        if self.groups.is_empty() {
            diags.push("grouping structure has no groups".to_string());
        }
        let mut covered = vec![false; self.p];
        let mut names = HashSet::new();
        for (k, g) in self.groups.iter().enumerate() {
            let label = format!("group {} ('{}')", k + 1, g.name);
            if !names.insert(g.name.as_str()) {
                diags.push(format!("{label}: duplicate group name"));
            }
            if g.members.is_empty() {
                diags.push(format!("{label}: empty group"));
            }
            if !(g.weight > 0.0 && g.weight.is_finite()) {
                diags.push(format!("{label}: weight {} is not a positive finite number", g.weight));
            }
            for &j in &g.members {
                if j >= self.p {
                    diags.push(format!("{label}: covariate index {} out of range 1..={}", j + 1, self.p));
                } else {
                    covered[j] = true;
                }
            }
        }
        for &j in &self.unpenalized {
            if j >= self.p {
                diags.push(format!("unpenalized covariate index {} out of range", j + 1));
            } else if covered[j] {
                diags.push(format!("unpenalized covariate {} appears in a group", self.label(j)));
            } else {
                covered[j] = true;
            }
        }
        for (j, c) in covered.iter().enumerate() {
            if !c {
                diags.push(format!("covariate {} is not covered by any group", self.label(j)));
            }
        }
        if diags.is_empty() {
            Ok(())
        } else {
            Err(diags)
        }
    }

    fn label(&self, j: usize) -> String {
        match &self.variable_names {
            Some(n) => n[j].clone(),
            None => (j + 1).to_string(),
        }
    }
}

/// Strong heredity over `p_main` mains followed by all pairwise interactions
/// (in lexicographic pair order): one group per main with all its
/// interactions, plus a singleton per interaction.
pub fn build_strong_heredity(p_main: usize) -> Result<GroupingStructure> {
    if p_main < 2 {
        return Err(Error::InvalidArgument(format!("strong heredity needs at least 2 main terms, got {p_main}")));
    }
    let pairs = interaction_pairs(p_main);
    let p = p_main + pairs.len();
    let mut groups = Vec::with_capacity(p);
    for m in 0..p_main {
        let members = std::iter::once(m).chain(
            pairs
                .iter()
                .enumerate()
                .filter(|(_, &(a, b))| a == m || b == m)
                .map(|(k, _)| p_main + k),
        );
        groups.push(Group::new(format!("main{}", m + 1), members, DEFAULT_WEIGHT));
    }
    for (k, &(a, b)) in pairs.iter().enumerate() {
        groups.push(Group::new(format!("inter{}_{}", a + 1, b + 1), [p_main + k], DEFAULT_WEIGHT));
    }
    let mut names: Vec<String> = (1..=p_main).map(|j| format!("X{j}")).collect();
    names.extend(pairs.iter().map(|&(a, b)| format!("X{}:X{}", a + 1, b + 1)));
    GroupingStructure::new(p, groups)?.with_variable_names(names)
}

/// Pairs `(a, b)`, `a < b`, in the order `(0,1), (0,2), ..., (1,2), ...`.
pub fn interaction_pairs(p_main: usize) -> Vec<(usize, usize)> {
    (0..p_main)
        .flat_map(|a| (a + 1..p_main).map(move |b| (a, b)))
        .collect()
}

/// Sparse-group structure: a singleton per covariate plus one group per block
/// weighted `block_weight_scale * sqrt(|block|)`.
pub fn build_sparse_group(
    blocks: &[Vec<usize>],
    within_weight: f64,
    block_weight_scale: f64,
) -> Result<GroupingStructure> {
    let p: usize = blocks.iter().map(Vec::len).sum();
    let mut seen = vec![false; p];
    for b in blocks {
        if b.is_empty() {
            return Err(Error::InvalidArgument("blocks must be non-empty".into()));
        }
        for &j in b {
            if j >= p || seen[j] {
                return Err(Error::InvalidArgument("blocks do not partition 0..p".into()));
            }
            seen[j] = true;
        }
    }
    let mut groups: Vec<Group> = (0..p)
        .map(|j| Group::new(format!("single{}", j + 1), [j], within_weight))
        .collect();
    for (k, b) in blocks.iter().enumerate() {
        let w = block_weight_scale * (b.len() as f64).sqrt();
        groups.push(Group::new(format!("block{}", k + 1), b.iter().copied(), w));
    }
    GroupingStructure::new(p, groups)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SelectionRule {
    /// If any covariate of the first set is selected, all of the second must be.
    Implies(Vec<usize>, Vec<usize>),
    /// Members are selected together or not at all.
    Collective(Vec<usize>),
}

impl SelectionRule {
    pub fn holds(&self, selected: &BTreeSet<usize>) -> bool {
        match self {
            SelectionRule::Implies(a, b) => {
                !a.iter().any(|j| selected.contains(j)) || b.iter().all(|j| selected.contains(j))
            }
            SelectionRule::Collective(s) => {
                let n = s.iter().filter(|j| selected.contains(j)).count();
                n == 0 || n == s.len()
            }
        }
    }
}

pub fn check_rules(selected: &[usize], rules: &[SelectionRule]) -> Vec<bool> {
    let set: BTreeSet<usize> = selected.iter().copied().collect();
    rules.iter().map(|r| r.holds(&set)).collect()
}

/// Indices with `|beta_j| > tol`.
pub fn selection_support(beta: &[f64], tol: f64) -> Result<Vec<usize>> {
    if !(tol >= 0.0) {
        return Err(Error::InvalidArgument(format!("support tolerance must be non-negative, got {tol}")));
    }
    Ok(beta
        .iter()
        .enumerate()
        .filter(|(_, b)| b.abs() > tol)
        .map(|(j, _)| j)
        .collect())
}

pub fn parse_grouping_file(text: &str) -> Result<GroupingStructure> {
    parse_grouping_file_with_names(text, None)
}

/// Parses a grouping file. When the file has no `variables` list, names in
/// `members` are resolved against `names` (typically the dataset columns).
pub fn parse_grouping_file_with_names(text: &str, names: Option<&[String]>) -> Result<GroupingStructure> {
    let root: Value = serde_json::from_str(text).map_err(|e| Error::Parse {
        line: e.line(),
        message: e.to_string(),
    })?;
    let at = |needle: &str, message: String| Error::Parse {
        line: locate_line(text, needle),
        message,
    };
    let obj = root
        .as_object()
        .ok_or_else(|| at("", "top level must be an object".into()))?;
    for key in obj.keys() {
        if !matches!(key.as_str(), "p" | "variables" | "unpenalized" | "groups") {
            return Err(at(&format!("\"{key}\""), format!("unknown key '{key}'")));
        }
    }

    let file_names: Option<Vec<String>> = match obj.get("variables") {
        None => None,
        Some(v) => {
            let arr = v
                .as_array()
                .ok_or_else(|| at("\"variables\"", "'variables' must be a list of names".into()))?;
            let list = arr
                .iter()
                .map(|x| x.as_str().map(str::to_string))
                .collect::<Option<Vec<_>>>()
                .ok_or_else(|| at("\"variables\"", "'variables' must contain strings".into()))?;
            let mut seen = HashSet::new();
            if let Some(d) = list.iter().find(|n| !seen.insert(n.as_str())) {
                return Err(at(&format!("\"{d}\""), format!("duplicate variable name '{d}'")));
            }
            Some(list)
        }
    };
    let declared_p = match obj.get("p") {
        None => None,
        Some(v) => Some(
            v.as_u64()
                .ok_or_else(|| at("\"p\"", "'p' must be a non-negative integer".into()))? as usize,
        ),
    };
    let resolved_names: Option<Vec<String>> = file_names.or_else(|| names.map(<[String]>::to_vec));
    let p = match (declared_p, &resolved_names) {
        (Some(p), Some(n)) if p != n.len() => {
            return Err(at("\"p\"", format!("'p' is {p} but {} variable names are given", n.len())))
        }
        (Some(p), _) => p,
        (None, Some(n)) => n.len(),
        (None, None) => return Err(at("", "either 'p' or 'variables' is required".into())),
    };
    let lookup: HashMap<&str, usize> = resolved_names
        .iter()
        .flatten()
        .enumerate()
        .map(|(j, n)| (n.as_str(), j))
        .collect();
    let resolve = |v: &Value, ctx: &str| -> Result<usize> {
        if let Some(s) = v.as_str() {
            lookup
                .get(s)
                .copied()
                .ok_or_else(|| at(&format!("\"{s}\""), format!("{ctx}: unknown covariate '{s}'")))
        } else if let Some(k) = v.as_u64() {
            if k == 0 || k as usize > p {
                Err(at(ctx, format!("{ctx}: covariate index {k} out of range 1..={p}")))
            } else {
                Ok(k as usize - 1)
            }
        } else {
            Err(at(ctx, format!("{ctx}: members must be names or 1-based indices")))
        }
    };

    let unpenalized = match obj.get("unpenalized") {
        None => Vec::new(),
        Some(v) => v
            .as_array()
            .ok_or_else(|| at("\"unpenalized\"", "'unpenalized' must be a list".into()))?
            .iter()
            .map(|x| resolve(x, "unpenalized"))
            .collect::<Result<Vec<_>>>()?,
    };

    let raw_groups = obj
        .get("groups")
        .and_then(Value::as_array)
        .ok_or_else(|| at("\"groups\"", "'groups' must be a list".into()))?;
    let mut groups = Vec::with_capacity(raw_groups.len());
    let mut group_names = HashSet::new();
    for (k, g) in raw_groups.iter().enumerate() {
        let g = g
            .as_object()
            .ok_or_else(|| at("\"groups\"", format!("group {} must be an object", k + 1)))?;
        for key in g.keys() {
            if !matches!(key.as_str(), "name" | "weight" | "members") {
                return Err(at(&format!("\"{key}\""), format!("group {}: unknown key '{key}'", k + 1)));
            }
        }
        let name = match g.get("name") {
            None => format!("g{}", k + 1),
            Some(v) => v
                .as_str()
                .ok_or_else(|| at("\"name\"", format!("group {}: name must be a string", k + 1)))?
                .to_string(),
        };
        let ctx = format!("group '{name}'");
        let name_anchor = format!("\"{name}\"");
        if !group_names.insert(name.clone()) {
            return Err(at(&name_anchor, format!("duplicate group name '{name}'")));
        }
        let weight = match g.get("weight") {
            None => DEFAULT_WEIGHT,
            Some(v) => v
                .as_f64()
                .ok_or_else(|| at(&name_anchor, format!("{ctx}: weight must be a number")))?,
        };
        let members = g
            .get("members")
            .and_then(Value::as_array)
            .ok_or_else(|| at(&name_anchor, format!("{ctx}: 'members' must be a list")))?
            .iter()
            .map(|m| resolve(m, &ctx))
            .collect::<Result<Vec<_>>>()?;
        groups.push(Group::new(name, members, weight));
    }

    let mut s = GroupingStructure::new_unchecked(p, groups);
    s.variable_names = resolved_names;
    s.unpenalized = {
        let mut u = unpenalized;
        u.sort_unstable();
        u.dedup();
        u
    };
    s.validate().map_err(Error::Grouping)?;
    Ok(s)
}

fn locate_line(text: &str, needle: &str) -> usize {
    if needle.is_empty() {
        return 1;
    }
    text.lines().position(|l| l.contains(needle)).map_or(1, |i| i + 1)
}

/// Canonical text form: members sorted, group order kept, weights with 17
/// significant digits.
pub fn write_grouping_file(s: &GroupingStructure) -> String {
    let quote = |x: &str| serde_json::to_string(x).expect("string serialization");
    let member = |j: usize| match &s.variable_names {
        Some(n) => quote(&n[j]),
        None => (j + 1).to_string(),
    };
    let mut out = String::from("{\n");
    match &s.variable_names {
        Some(n) => {
            let list: Vec<String> = n.iter().map(|x| quote(x)).collect();
            out.push_str(&format!("  \"variables\": [{}],\n", list.join(", ")));
        }
        None => out.push_str(&format!("  \"p\": {},\n", s.p)),
    }
    if !s.unpenalized.is_empty() {
        let list: Vec<String> = s.unpenalized.iter().map(|&j| member(j)).collect();
        out.push_str(&format!("  \"unpenalized\": [{}],\n", list.join(", ")));
    }
    out.push_str("  \"groups\": [\n");
    for (k, g) in s.groups.iter().enumerate() {
        let mut members = g.members.clone();
        members.sort_unstable();
        let list: Vec<String> = members.into_iter().map(member).collect();
        out.push_str(&format!(
            "    {{\"name\": {}, \"weight\": {:.16e}, \"members\": [{}]}}{}\n",
            quote(&g.name),
            g.weight,
            list.join(", "),
            if k + 1 < s.groups.len() { "," } else { "" }
        ));
    }
    out.push_str("  ]\n}\n");
    out
}

/// Grouping structures from worked examples of selection rules.
pub mod fixtures {
    use super::*;

    fn named(names: &[&str], groups: &[(&str, &[&str])]) -> GroupingStructure {
        let lookup: HashMap<&str, usize> = names.iter().enumerate().map(|(j, n)| (*n, j)).collect();
        let groups = groups
            .iter()
            .map(|(g, members)| Group::new(*g, members.iter().map(|m| lookup[m]), DEFAULT_WEIGHT))
            .collect();
        GroupingStructure::new_unchecked(names.len(), groups)
            .with_variable_names(names.iter().map(|s| s.to_string()).collect())
            .expect("fixture names match p")
    }

    pub const CATEGORICAL_VARIABLES: [&str; 9] = ["A1", "A2", "B", "A1B", "A2B", "C1", "C2", "C1B", "C2B"];

    /// Strong heredity plus collective dummies for two 3-level factors
    /// interacting with a continuous covariate.
    pub fn categorical_interactions() -> GroupingStructure {
        named(
            &CATEGORICAL_VARIABLES,
            &[
                ("g1", &["A1", "A2", "A1B", "A2B"]),
                ("g2", &["B", "A1B", "A2B", "C1B", "C2B"]),
                ("g3", &["A1B", "A2B"]),
                ("g4", &["C1", "C2", "C1B", "C2B"]),
                ("g5", &["C1B", "C2B"]),
            ],
        )
    }

    /// Rules for [`categorical_interactions`]: strong heredity first, then
    /// collective selection of dummy sets.
    pub fn categorical_rules() -> (Vec<SelectionRule>, Vec<SelectionRule>) {
        let heredity = vec![
            SelectionRule::Implies(vec![3], vec![0, 2]),
            SelectionRule::Implies(vec![4], vec![1, 2]),
            SelectionRule::Implies(vec![7], vec![5, 2]),
            SelectionRule::Implies(vec![8], vec![6, 2]),
        ];
        let collective = vec![
            SelectionRule::Collective(vec![0, 1]),
            SelectionRule::Collective(vec![5, 6]),
            SelectionRule::Collective(vec![3, 4]),
            SelectionRule::Collective(vec![7, 8]),
        ];
        (heredity, collective)
    }

    /// Treatment indicator and high-dose indicator.
    pub fn dose_levels() -> GroupingStructure {
        named(&["X1", "X2"], &[("g1", &["X2"]), ("g2", &["X1", "X2"])])
    }

    /// Two mains and their interaction `X3 = X1 * X2`.
    pub fn two_way_heredity() -> GroupingStructure {
        named(
            &["X1", "X2", "X3"],
            &[("g1", &["X3"]), ("g2", &["X1", "X3"]), ("g3", &["X2", "X3"])],
        )
    }

    /// Phase-specific effects where an earlier phase implies all later ones.
    pub fn temporal_phases() -> GroupingStructure {
        named(
            &["Z1", "Z2", "Z3"],
            &[("g1", &["Z1"]), ("g2", &["Z1", "Z2"]), ("g3", &["Z1", "Z2", "Z3"])],
        )
    }

    /// Basis coefficients of each covariate selected collectively.
    pub fn collective_bases(p: usize, m: usize) -> GroupingStructure {
        let groups = (0..p)
            .map(|j| Group::new(format!("Z{}", j + 1), j * m..(j + 1) * m, DEFAULT_WEIGHT))
            .collect();
        let names = (0..p)
            .flat_map(|j| (0..m).map(move |k| format!("Z{}_{}", j + 1, k + 1)))
            .collect();
        GroupingStructure::new_unchecked(p * m, groups)
            .with_variable_names(names)
            .expect("p * m names")
    }

    /// Three voxels and two nested parcel averages.
    pub fn nested_parcels() -> GroupingStructure {
        named(
            &["X1", "X2", "X3", "X4", "X5"],
            &[
                ("g1", &["X1"]),
                ("g2", &["X2"]),
                ("g3", &["X3"]),
                ("g4", &["X1", "X2", "X4"]),
                ("g5", &["X1", "X2", "X3", "X4", "X5"]),
            ],
        )
    }

    /// A variable may enter only when all its ancestors in the tree
    /// `X1 -> {X2, X3}`, `X2 -> {X4, X5}` are selected.
    pub fn ancestor_tree() -> GroupingStructure {
        named(
            &["X1", "X2", "X3", "X4", "X5"],
            &[
                ("g1", &["X1", "X2", "X3", "X4", "X5"]),
                ("g2", &["X2", "X4", "X5"]),
                ("g3", &["X3"]),
                ("g4", &["X4"]),
                ("g5", &["X5"]),
            ],
        )
    }

    pub const CASE_STUDY_RULE_VARIABLES: [&str; 13] =
        ["A", "B", "C", "D", "E", "F", "G", "H", "I", "J", "K", "L", "M"];

    /// Thirteen rule-bearing groups over variables A..M plus a singleton for
    /// each of 11 further covariates (24 groups).
    pub fn case_study() -> GroupingStructure {
        let mut names: Vec<String> = CASE_STUDY_RULE_VARIABLES.iter().map(|s| s.to_string()).collect();
        names.extend((14..=24).map(|k| format!("V{k}")));
        let v = |s: &str| names.iter().position(|n| n == s).expect("known variable");
        let spec: [(&str, &[&str]); 13] = [
            ("g1", &["A"]),
            ("g2", &["B"]),
            ("g3", &["C"]),
            ("g4", &["D"]),
            ("g5", &["E"]),
            ("g6", &["F"]),
            ("g7", &["G"]),
            ("g8", &["D", "I"]),
            ("g9", &["E", "J"]),
            ("g10", &["F", "K"]),
            ("g11", &["G", "L"]),
            ("g12", &["A", "B", "C", "D", "E", "F", "G", "H"]),
            ("g13", &["A", "B", "C", "H", "M"]),
        ];
        let mut groups: Vec<Group> = spec
            .iter()
            .map(|(g, m)| Group::new(*g, m.iter().map(|x| v(x)), DEFAULT_WEIGHT))
            .collect();
        groups.extend((13..24).map(|j| Group::new(format!("g{}", j + 1), [j], DEFAULT_WEIGHT)));
        GroupingStructure::new_unchecked(24, groups)
            .with_variable_names(names)
            .expect("24 names")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn validate_reports_problems() {
        let ok = GroupingStructure::new_unchecked(3, vec![Group::new("a", [0, 1], 1.0), Group::new("b", [2], 1.0)]);
        assert!(ok.validate().is_ok());

        let uncovered = GroupingStructure::new_unchecked(3, vec![Group::new("a", [0, 1], 1.0)]);
        let d = uncovered.validate().unwrap_err();
        assert_eq!(d.len(), 1);
        assert!(d[0].contains("covariate 3"), "{d:?}");

        let bad = GroupingStructure::new_unchecked(
            2,
            vec![Group::new("a", [], 1.0), Group::new("a", [5], 0.0), Group::new("c", [0, 1], -1.0)],
        );
        let d = bad.validate().unwrap_err();
        assert!(d.iter().any(|m| m.contains("empty group")));
        assert!(d.iter().any(|m| m.contains("duplicate")));
        assert!(d.iter().any(|m| m.contains("out of range")));
        assert_eq!(d.iter().filter(|m| m.contains("weight")).count(), 2);

        assert!(GroupingStructure::new_unchecked(0, vec![]).validate().is_err());
    }

    #[test]
    fn unpenalized_covariates_count_as_covered() {
        let s = GroupingStructure::new_unchecked(3, vec![Group::new("a", [0, 1], 1.0)])
            .with_unpenalized([2])
            .unwrap();
        assert!(s.validate().is_ok());
        let clash = GroupingStructure::new_unchecked(2, vec![Group::new("a", [0, 1], 1.0)]).with_unpenalized([1]);
        assert!(clash.is_err());
    }

    #[test]
    fn strong_heredity_three_mains() {
        let s = build_strong_heredity(3).unwrap();
        let members: Vec<Vec<usize>> = s.groups().iter().map(|g| g.members.clone()).collect();
        // X1X2 = 3, X1X3 = 4, X2X3 = 5
        assert_eq!(
            members,
            vec![vec![0, 3, 4], vec![1, 3, 5], vec![2, 4, 5], vec![3], vec![4], vec![5]]
        );
        assert_eq!(s.variable_names().unwrap()[3], "X1:X2");
    }

    #[test]
    fn strong_heredity_two_mains_matches_worked_example() {
        let s = build_strong_heredity(2).unwrap();
        let members: BTreeSet<Vec<usize>> = s.groups().iter().map(|g| g.members.clone()).collect();
        let example: BTreeSet<Vec<usize>> = fixtures::two_way_heredity()
            .groups()
            .iter()
            .map(|g| g.members.clone())
            .collect();
        assert_eq!(members, example);
        assert!(build_strong_heredity(1).is_err());
    }

    #[test]
    fn strong_heredity_membership_counts() {
        let p_main = 6;
        let s = build_strong_heredity(p_main).unwrap();
        assert_eq!(s.groups().len(), p_main + p_main * (p_main - 1) / 2);
        let mut counts = vec![0; s.p()];
        for g in s.groups() {
            for &j in &g.members {
                counts[j] += 1;
            }
        }
        assert!(counts[..p_main].iter().all(|&c| c == 1));
        assert!(counts[p_main..].iter().all(|&c| c == 3));
    }

    #[test]
    fn sparse_group_weights() {
        let blocks: Vec<Vec<usize>> = (0..10).map(|b| (b * 20..(b + 1) * 20).collect()).collect();
        let s = build_sparse_group(&blocks, 0.5, 0.5).unwrap();
        assert_eq!(s.groups().len(), 210);
        assert_eq!(s.groups()[0].weight, 0.5);
        assert!((s.groups()[200].weight - 2.23607).abs() < 1e-5);
        assert_eq!(s.groups()[200].weight, 20f64.sqrt() * 0.5);

        let one = build_sparse_group(&[vec![0, 1, 2]], 1.0, 1.0).unwrap();
        assert_eq!(one.groups().len(), 4);
        let singles = build_sparse_group(&[vec![0], vec![1]], 1.0, 1.0).unwrap();
        assert!(singles.groups().iter().all(|g| g.members.len() == 1));

        assert!(build_sparse_group(&[vec![0, 1], vec![1]], 1.0, 1.0).is_err());
        assert!(build_sparse_group(&[vec![0, 2]], 1.0, 1.0).is_err());
    }

    #[test]
    fn rules_on_supports() {
        let rule = [SelectionRule::Implies(vec![2], vec![0, 1])];
        assert_eq!(check_rules(&[2], &rule), vec![false]);
        assert_eq!(check_rules(&[0, 1, 2], &rule), vec![true]);
        assert_eq!(check_rules(&[], &rule), vec![true]);
        let coll = [SelectionRule::Collective(vec![0, 1])];
        assert_eq!(check_rules(&[0], &coll), vec![false]);
        assert_eq!(check_rules(&[0, 1], &coll), vec![true]);
        assert_eq!(check_rules(&[3], &coll), vec![true]);
    }

    #[test]
    fn support_threshold() {
        assert_eq!(selection_support(&[0.0, 2e-10, 0.5], 1e-10).unwrap(), vec![1, 2]);
        assert!(selection_support(&[0.0; 4], DEFAULT_SUPPORT_TOL).unwrap().is_empty());
        assert!(selection_support(&[1.0], -1.0).is_err());
    }

    #[test]
    fn worked_examples_validate() {
        for s in [
            fixtures::categorical_interactions(),
            fixtures::dose_levels(),
            fixtures::two_way_heredity(),
            fixtures::temporal_phases(),
            fixtures::collective_bases(4, 3),
            fixtures::nested_parcels(),
            fixtures::ancestor_tree(),
            fixtures::case_study(),
        ] {
            assert!(s.validate().is_ok(), "{:?}", s.validate());
        }
        assert_eq!(fixtures::categorical_interactions().groups().len(), 5);
        assert_eq!(fixtures::case_study().groups().len(), 24);
    }

    #[test]
    fn parse_accepts_names_and_indices() {
        let text = r#"{
  "variables": ["a", "b", "c"],
  "groups": [
    {"name": "g1", "members": ["a", 2]},
    {"name": "g2", "weight": 2.5, "members": ["c"]}
  ]
}"#;
        let s = parse_grouping_file(text).unwrap();
        assert_eq!(s.groups()[0].members, vec![0, 1]);
        assert_eq!(s.groups()[0].weight, 1.0);
        assert_eq!(s.groups()[1].weight, 2.5);
    }

    #[test]
    fn parse_errors_carry_lines() {
        let syntax = "{\n  \"p\": 2,\n  \"groups\": [ {\"members\": [1,}\n]}";
        match parse_grouping_file(syntax) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        let unknown = "{\n  \"variables\": [\"a\"],\n  \"groups\": [\n    {\"name\": \"g\", \"members\": [\"zz\"]}\n  ]\n}";
        match parse_grouping_file(unknown) {
            Err(Error::Parse { line, message }) => {
                assert_eq!(line, 4);
                assert!(message.contains("zz"));
            }
            other => panic!("{other:?}"),
        }
        let dup = r#"{"p": 2, "groups": [{"name": "g", "members": [1]}, {"name": "g", "members": [2]}]}"#;
        assert!(matches!(parse_grouping_file(dup), Err(Error::Parse { .. })));
        let empty = r#"{"p": 2, "groups": []}"#;
        assert!(matches!(parse_grouping_file(empty), Err(Error::Grouping(_))));
        let no_p = r#"{"groups": [{"members": [1]}]}"#;
        assert!(parse_grouping_file(no_p).is_err());
    }

    #[test]
    fn parse_with_external_names() {
        let text = r#"{"groups": [{"name": "g", "members": ["y", "x"]}]}"#;
        let names = vec!["x".to_string(), "y".to_string()];
        let s = parse_grouping_file_with_names(text, Some(&names)).unwrap();
        assert_eq!(s.groups()[0].members, vec![0, 1]);
        let missing = r#"{"groups": [{"name": "g", "members": ["x", "w"]}]}"#;
        let err = parse_grouping_file_with_names(missing, Some(&names)).unwrap_err();
        assert!(err.to_string().contains("'w'"));
    }

    #[test]
    fn canonical_writer_is_stable() {
        let s = fixtures::categorical_interactions();
        let text = write_grouping_file(&s);
        let back = parse_grouping_file(&text).unwrap();
        assert_eq!(back, s);
        assert_eq!(write_grouping_file(&back), text);
        assert!(text.contains("\"weight\": 1.0000000000000000e0"));

        let idx = GroupingStructure::new(3, vec![Group::new("b", [2, 0], 0.1), Group::new("a", [1], 3.0)])
            .unwrap()
            .with_unpenalized([])
            .unwrap();
        let text = write_grouping_file(&idx);
        assert!(text.contains("\"p\": 3"));
        assert!(text.contains("[1, 3]"));
        assert_eq!(parse_grouping_file(&text).unwrap(), idx);
    }

    #[test]
    fn case_study_parses_to_24_groups() {
        let text = write_grouping_file(&fixtures::case_study());
        let s = parse_grouping_file(&text).unwrap();
        assert_eq!(s.groups().len(), 24);
        assert_eq!(s.groups()[11].members.len(), 8);
    }
}
