//! The 47-key virtual keyboard and its placement rule.
//!
//! Keyboard-local frame: x to the right, y toward the far rows, +z is the key
//! face normal pointing back at the player. Layout asset format:
//!
//! ```text
//! # comment
//! rule <tx> <ty> <tz> <qw> <qx> <qy> <qz>
//! key <label> <row> <x0> <y0> <z0> ... <x3> <y3> <z3>
//! ```
//!
//! `space` labels the space bar; every other label is the typed character.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::VictimError;
use crate::geometry::{Quad, Transform, UnitQuat, Vec3};

pub const KEY_COUNT: usize = 47;
pub const KEY_SIDE: f64 = 0.03;
pub const KEY_PITCH: f64 = 0.032;

const ROWS: [(u8, &str, f64); 4] = [
    (4, "1234567890-@", 0.0),
    (3, "qwertyuiop#!", 0.008),
    (2, "asdfghjkl;'?", 0.016),
    (1, "zxcvbnm,./ ", 0.0),
];

/// Keyboard center 0.45 m ahead of and 0.25 m below the head, tilted back
/// 35 degrees so the far rows recede from the player.
pub fn default_pose_rule() -> Transform {
    Transform::new(
        Vec3::new(0.0, -0.25, -0.45),
        UnitQuat::from_axis_angle(Vec3::new(1.0, 0.0, 0.0), (-35f64).to_radians()),
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Key {
    pub label: String,
    pub ch: char,
    pub row: u8,
    pub quad: Quad,
    pub center: Vec3,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeyboardModel {
    keys: Vec<Key>,
    pose_rule: Transform,
}

fn label_for(ch: char) -> String {
    if ch == ' ' {
        "space".into()
    } else {
        ch.to_string()
    }
}

fn char_for(label: &str) -> Option<char> {
    if label == "space" {
        return Some(' ');
    }
    let mut it = label.chars();
    match (it.next(), it.next()) {
        (Some(c), None) => Some(c),
        _ => None,
    }
}

impl KeyboardModel {
    pub fn new(keys: Vec<Key>, pose_rule: Transform) -> Result<Self, VictimError> {
        let kb = KeyboardModel { keys, pose_rule };
        kb.validate()?;
        Ok(kb)
    }

    /// QWERTY-derived default: digits row farthest, `z x c` row nearest.
    pub fn default_layout() -> Self {
        let mut keys = Vec::with_capacity(KEY_COUNT);
        for (row, chars, stagger) in ROWS {
            let n = chars.chars().count() as f64;
            let y = (row as f64 - 2.5) * KEY_PITCH;
            for (i, ch) in chars.chars().enumerate() {
                let x = (i as f64 - (n - 1.0) / 2.0) * KEY_PITCH + stagger;
                let quad = Quad::square_xy(Vec3::new(x, y, 0.0), KEY_SIDE);
                keys.push(Key { label: label_for(ch), ch, row, center: quad.center(), quad });
            }
        }
        KeyboardModel::new(keys, default_pose_rule()).expect("built-in layout is valid")
    }

    fn validate(&self) -> Result<(), VictimError> {
        let bad = |m: String| Err(VictimError::Layout(m));
        if self.keys.len() != KEY_COUNT {
            return bad(format!("expected {KEY_COUNT} keys, found {}", self.keys.len()));
        }
        for (i, a) in self.keys.iter().enumerate() {
            if !(1..=4).contains(&a.row) {
                return bad(format!("key '{}' has row {}", a.label, a.row));
            }
            for b in &self.keys[i + 1..] {
                if a.label == b.label {
                    return bad(format!("duplicate key '{}'", a.label));
                }
                let d = a.center - b.center;
                if d.x.abs() < KEY_SIDE - 1e-9 && d.y.abs() < KEY_SIDE - 1e-9 {
                    return bad(format!("keys '{}' and '{}' overlap", a.label, b.label));
                }
            }
        }
        let dist: Vec<f64> = (1..=4)
            .map(|r| {
                let ks: Vec<&Key> = self.keys.iter().filter(|k| k.row == r).collect();
                let mean = ks.iter().fold(Vec3::ZERO, |a, k| a + k.center) / ks.len().max(1) as f64;
                self.pose_rule.apply_point(mean).norm()
            })
            .collect();
        if dist.windows(2).any(|w| w[1] <= w[0]) {
            return bad("rows must recede from the player in order 1..4".into());
        }
        Ok(())
    }

    pub fn keys(&self) -> &[Key] {
        &self.keys
    }

    pub fn pose_rule(&self) -> Transform {
        self.pose_rule
    }

    pub fn with_pose_rule(mut self, rule: Transform) -> Self {
        self.pose_rule = rule;
        self
    }

    pub fn key_for_char(&self, ch: char) -> Option<usize> {
        let ch = ch.to_ascii_lowercase();
        self.keys.iter().position(|k| k.ch == ch)
    }

    pub fn key_by_label(&self, label: &str) -> Option<usize> {
        self.keys.iter().position(|k| k.label == label)
    }

    /// World pose of the keyboard when opened with the head at `head`.
    pub fn placement(&self, head: &Transform) -> Transform {
        head.compose(&self.pose_rule)
    }

    pub fn parse(text: &str) -> Result<Self, VictimError> {
        let mut keys = Vec::new();
        let mut rule = None;
        for (ln, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |m: &str| VictimError::Layout(format!("line {}: {m}", ln + 1));
            let tok: Vec<&str> = line.split_whitespace().collect();
            let nums = |s: &[&str]| -> Result<Vec<f64>, VictimError> {
                s.iter().map(|t| t.parse::<f64>().map_err(|_| err(&format!("bad number '{t}'")))).collect()
            };
            match tok[0] {
                "rule" if tok.len() == 8 => {
                    let v = nums(&tok[1..])?;
                    rule = Some(Transform::new(Vec3::new(v[0], v[1], v[2]), UnitQuat::new(v[3], v[4], v[5], v[6])));
                }
                "key" if tok.len() == 15 => {
                    let ch = char_for(tok[1]).ok_or_else(|| err("key label must be one character or `space`"))?;
                    let row: u8 = tok[2].parse().map_err(|_| err("bad row"))?;
                    let v = nums(&tok[3..])?;
                    let corners = std::array::from_fn(|i| Vec3::new(v[3 * i], v[3 * i + 1], v[3 * i + 2]));
                    let quad = Quad::new(corners).map_err(|e| err(&e.to_string()))?;
                    keys.push(Key { label: tok[1].to_string(), ch, row, center: quad.center(), quad });
                }
                _ => return Err(err("expected `rule` (7 numbers) or `key` (label, row, 12 numbers)")),
            }
        }
        let rule = rule.ok_or_else(|| VictimError::Layout("missing `rule` line".into()))?;
        KeyboardModel::new(keys, rule)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::from("# keyboard layout: rule = keyboard pose relative to the head at open time\n");
        let r = &self.pose_rule;
        let _ = writeln!(
            s,
            "rule {:?} {:?} {:?} {:?} {:?} {:?} {:?}",
            r.position.x, r.position.y, r.position.z, r.rotation.w, r.rotation.x, r.rotation.y, r.rotation.z
        );
        for k in &self.keys {
            let _ = write!(s, "key {} {}", k.label, k.row);
            for c in k.quad.corners() {
                let _ = write!(s, " {:?} {:?} {:?}", c.x, c.y, c.z);
            }
            s.push('\n');
        }
        s
    }
}
