use std::collections::{BTreeMap, HashSet};

use crate::error::{Error, Result};

const SEED62: &str = include_str!("../../layouts/seed62_17x19.txt");

/// Placement of named electrodes on a `grid_h × grid_w` map.
#[derive(Clone, Debug, PartialEq)]
pub struct ElectrodeLayout {
    grid_h: usize,
    grid_w: usize,
    placements: BTreeMap<String, (usize, usize)>,
}

impl ElectrodeLayout {
    pub fn new(
        grid_h: usize,
        grid_w: usize,
        placements: impl IntoIterator<Item = (String, (usize, usize))>,
    ) -> Result<Self> {
        if grid_h == 0 || grid_w == 0 {
            return Err(Error::Layout(format!("grid must be non-empty, got {grid_h}x{grid_w}")));
        }
        let mut map = BTreeMap::new();
        let mut cells = HashSet::new();
        for (name, (r, c)) in placements {
            if r >= grid_h || c >= grid_w {
                return Err(Error::Layout(format!(
                    "electrode {name} at ({r},{c}) lies outside the {grid_h}x{grid_w} grid"
                )));
            }
            if !cells.insert((r, c)) {
                return Err(Error::Layout(format!("cell ({r},{c}) assigned twice (at {name})")));
            }
            if map.insert(name.clone(), (r, c)).is_some() {
                return Err(Error::Layout(format!("electrode {name} listed twice")));
            }
        }
        Ok(ElectrodeLayout { grid_h, grid_w, placements: map })
    }

    /// Parses the text form: a `grid H W` header and one `NAME row col`
    /// line per electrode. `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut grid = None;
        let mut placements = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let parts: Vec<&str> = line.split_whitespace().collect();
            let num = |s: &str| {
                s.parse::<usize>().map_err(|_| Error::Parse {
                    line: line_no,
                    message: format!("expected a non-negative integer, got `{s}`"),
                })
            };
            if parts.len() != 3 {
                return Err(Error::Parse { line: line_no, message: format!("expected 3 fields, got {}", parts.len()) });
            }
            if parts[0] == "grid" {
                if grid.is_some() {
                    return Err(Error::Parse { line: line_no, message: "duplicate grid line".into() });
                }
                grid = Some((num(parts[1])?, num(parts[2])?));
            } else {
                placements.push((parts[0].to_string(), (num(parts[1])?, num(parts[2])?)));
            }
        }
        let (h, w) = grid.ok_or_else(|| Error::Layout("missing `grid H W` header".into()))?;
        ElectrodeLayout::new(h, w, placements)
    }

    /// The bundled 62-electrode montage on a 17 × 19 grid.
    pub fn seed62() -> Self {
        Self::parse(SEED62).expect("bundled layout is valid")
    }

    /// Single-cell layout for one channel; handy for toy recordings.
    pub fn single(name: &str) -> Self {
        Self::new(1, 1, [(name.to_string(), (0, 0))]).expect("1x1 layout")
    }

    pub fn grid_h(&self) -> usize {
        self.grid_h
    }

    pub fn grid_w(&self) -> usize {
        self.grid_w
    }

    pub fn position(&self, name: &str) -> Option<(usize, usize)> {
        self.placements.get(name).copied()
    }

    pub fn len(&self) -> usize {
        self.placements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.placements.is_empty()
    }

    /// Electrode names in row-major grid order.
    pub fn channel_names(&self) -> Vec<String> {
        let mut named: Vec<(&(usize, usize), &String)> = self.placements.iter().map(|(n, p)| (p, n)).collect();
        named.sort();
        named.into_iter().map(|(_, n)| n.clone()).collect()
    }

    /// Electrode names in the order they appear in the bundled 62-channel file.
    pub fn seed62_channel_names() -> Vec<String> {
        SEED62
            .lines()
            .map(|l| l.split('#').next().unwrap_or("").trim())
            .filter(|l| !l.is_empty() && !l.starts_with("grid"))
            .map(|l| l.split_whitespace().next().unwrap().to_string())
            .collect()
    }
}
